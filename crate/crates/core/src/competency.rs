//! Competency labels: rater agreement, majority vote, and the share of female
//! pronouns a model assigns within each competency class.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{Decision, GenderPrediction};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CompetencyClass {
    Incompetent,
    Neutral,
    Competent,
}

impl CompetencyClass {
    pub const ALL: [CompetencyClass; 3] = [
        CompetencyClass::Incompetent,
        CompetencyClass::Neutral,
        CompetencyClass::Competent,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for CompetencyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for CompetencyClass {
    type Err = CompetencyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "incompetent" | "i" => Ok(CompetencyClass::Incompetent),
            "neutral" | "n" => Ok(CompetencyClass::Neutral),
            "competent" | "c" => Ok(CompetencyClass::Competent),
            other => Err(CompetencyError::BadLabel(other.to_string())),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompetencyError {
    #[error("unknown competency label {0:?}")]
    BadLabel(String),
    #[error("label file line {line}: expected `sentence_id<TAB>rater_id<TAB>label`")]
    MalformedLine { line: usize },
    #[error("rater {rater:?} labelled sentence {sentence_id} twice")]
    DuplicateVote { sentence_id: u32, rater: String },
    #[error("sentence {sentence_id} has fewer than two votes")]
    TooFewVotes { sentence_id: u32 },
    #[error("ballots have different rater counts ({expected} vs {found})")]
    UnequalRaterCounts { expected: usize, found: usize },
    #[error("expected agreement is 1, kappa is undefined")]
    DegenerateAgreement,
    #[error("no ballots")]
    NoBallots,
    #[error("sentence {0} has a label but no prediction")]
    MissingPrediction(u32),
    #[error("table CSV: {0}")]
    TableFormat(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompetencyBallot {
    pub sentence_id: u32,
    pub votes: Vec<CompetencyClass>,
}

impl CompetencyBallot {
    pub fn new(sentence_id: u32, votes: Vec<CompetencyClass>) -> Result<Self, CompetencyError> {
        if votes.len() < 2 {
            return Err(CompetencyError::TooFewVotes { sentence_id });
        }
        Ok(CompetencyBallot { sentence_id, votes })
    }

    fn tally(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for v in &self.votes {
            counts[v.index()] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VoteOutcome {
    Label(CompetencyClass),
    Discarded,
}

/// Strict plurality winner; a tie for first place discards the sentence.
pub fn majority_vote(ballot: &CompetencyBallot) -> VoteOutcome {
    let counts = ballot.tally();
    let top = counts.iter().copied().max().unwrap_or(0);
    let mut winners = CompetencyClass::ALL.iter().filter(|c| counts[c.index()] == top);
    match (winners.next(), winners.next()) {
        (Some(&c), None) if top > 0 => VoteOutcome::Label(c),
        _ => VoteOutcome::Discarded,
    }
}

/// Fleiss' kappa over every ballot (ties included).
///
/// `P_i = (sum_j n_ij^2 - n) / (n (n - 1))`, `P_e = sum_j p_j^2`, and
/// `kappa = (mean P_i - P_e) / (1 - P_e)`.
pub fn fleiss_kappa<T: Real>(ballots: &[CompetencyBallot]) -> Result<T, CompetencyError> {
    let first = ballots.first().ok_or(CompetencyError::NoBallots)?;
    let n = first.votes.len();
    if n < 2 {
        return Err(CompetencyError::TooFewVotes {
            sentence_id: first.sentence_id,
        });
    }
    let mut category_totals = [0usize; 3];
    let mut agreement_sum = T::zero();
    let pairs = T::from_count(n * (n - 1));
    for ballot in ballots {
        if ballot.votes.len() != n {
            return Err(CompetencyError::UnequalRaterCounts {
                expected: n,
                found: ballot.votes.len(),
            });
        }
        let counts = ballot.tally();
        let squares: usize = counts.iter().map(|c| c * c).sum();
        agreement_sum += T::from_count(squares - n) / pairs;
        for (total, c) in category_totals.iter_mut().zip(counts) {
            *total += c;
        }
    }
    let items = T::from_count(ballots.len());
    let mean_agreement = agreement_sum / items;
    let all_votes = T::from_count(ballots.len() * n);
    let expected: T = category_totals
        .iter()
        .map(|&c| {
            let p = T::from_count(c) / all_votes;
            p * p
        })
        .sum();
    if expected >= T::one() {
        return Err(CompetencyError::DegenerateAgreement);
    }
    Ok((mean_agreement - expected) / (T::one() - expected))
}

/// Parses `sentence_id<TAB>rater_id<TAB>label` rows into ballots ordered by
/// sentence id; votes within a ballot follow rater id order. A header row
/// starting with `sentence_id` is skipped.
pub fn parse_label_file(contents: &str) -> Result<Vec<CompetencyBallot>, CompetencyError> {
    let mut by_sentence: BTreeMap<u32, BTreeMap<String, CompetencyClass>> = BTreeMap::new();
    for (offset, raw) in contents.lines().enumerate() {
        let line = offset + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with("sentence_id") {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        let [id, rater, label] = fields[..] else {
            return Err(CompetencyError::MalformedLine { line });
        };
        let sentence_id: u32 = id
            .trim()
            .parse()
            .map_err(|_| CompetencyError::MalformedLine { line })?;
        let label: CompetencyClass = label.parse()?;
        let rater = rater.trim().to_string();
        if by_sentence
            .entry(sentence_id)
            .or_default()
            .insert(rater.clone(), label)
            .is_some()
        {
            return Err(CompetencyError::DuplicateVote { sentence_id, rater });
        }
    }
    by_sentence
        .into_iter()
        .map(|(id, votes)| CompetencyBallot::new(id, votes.into_values().collect()))
        .collect()
}

/// Majority-vote class of every ballot that did not end in a tie.
pub fn voted_labels(ballots: &[CompetencyBallot]) -> BTreeMap<u32, CompetencyClass> {
    ballots
        .iter()
        .filter_map(|b| match majority_vote(b) {
            VoteOutcome::Label(c) => Some((b.sentence_id, c)),
            VoteOutcome::Discarded => None,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompetencyRow<T> {
    pub class: CompetencyClass,
    /// Sentences in the class, abstentions included.
    pub n_examples: usize,
    pub n_female: usize,
    pub n_male: usize,
    /// `n_female / (n_female + n_male)`; `None` when every prediction in the
    /// class abstained.
    pub proportion_female: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompetencyTable<T> {
    pub rows: Vec<CompetencyRow<T>>,
}

impl<T: Real> CompetencyTable<T> {
    pub fn row(&self, class: CompetencyClass) -> &CompetencyRow<T> {
        &self.rows[class.index()]
    }

    pub fn proportions(&self) -> [Option<T>; 3] {
        [0, 1, 2].map(|i| self.rows[i].proportion_female)
    }
}

/// Female-pronoun share per class over non-abstained predictions.
pub fn competency_table<T: Real>(
    labels: &BTreeMap<u32, CompetencyClass>,
    predictions: &BTreeMap<u32, GenderPrediction<T>>,
) -> Result<CompetencyTable<T>, CompetencyError> {
    let mut rows = CompetencyClass::ALL.map(|class| CompetencyRow {
        class,
        n_examples: 0,
        n_female: 0,
        n_male: 0,
        proportion_female: None,
    });
    for (&id, &class) in labels {
        let prediction = predictions
            .get(&id)
            .ok_or(CompetencyError::MissingPrediction(id))?;
        let row = &mut rows[class.index()];
        row.n_examples += 1;
        match prediction.value {
            Decision::Female => row.n_female += 1,
            Decision::Male => row.n_male += 1,
            Decision::Abstain => {}
        }
    }
    for row in &mut rows {
        let decided = row.n_female + row.n_male;
        if decided > 0 {
            row.proportion_female = Some(T::from_count(row.n_female) / T::from_count(decided));
        }
    }
    Ok(CompetencyTable {
        rows: rows.to_vec(),
    })
}

/// Writes the three-decimal class-by-model layout:
///
/// ```text
/// competency,BERT,BERT-U
/// Incompetent,0.156,0.062
/// ```
///
/// Undefined proportions are written as empty cells.
pub fn write_table_csv<T: Real>(columns: &[(String, CompetencyTable<T>)]) -> String {
    let mut out = String::from("competency");
    for (name, _) in columns {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for class in CompetencyClass::ALL {
        out.push_str(&class.to_string());
        for (_, table) in columns {
            out.push(',');
            if let Some(p) = table.row(class).proportion_female {
                out.push_str(&format!("{:.3}", p.as_f64()));
            }
        }
        out.push('\n');
    }
    out
}

/// Reads the layout written by [`write_table_csv`] back into per-model
/// proportions.
/// A model column of a competency table: name and per-class proportions.
pub type TableColumn = (String, [Option<f64>; 3]);

pub fn read_table_csv(contents: &str) -> Result<Vec<TableColumn>, CompetencyError> {
    let bad = |m: &str| CompetencyError::TableFormat(m.to_string());
    let mut lines = contents.lines();
    let header = lines.next().ok_or_else(|| bad("empty"))?;
    let mut columns: Vec<(String, [Option<f64>; 3])> = header
        .split(',')
        .skip(1)
        .map(|name| (name.to_string(), [None; 3]))
        .collect();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let mut cells = line.split(',');
        let class: CompetencyClass = cells.next().ok_or_else(|| bad("missing class"))?.parse()?;
        for (column, cell) in columns.iter_mut().zip(cells) {
            if !cell.is_empty() {
                column.1[class.index()] =
                    Some(cell.parse().map_err(|_| bad(&format!("bad number {cell:?}")))?);
            }
        }
    }
    Ok(columns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use CompetencyClass::{Competent as C, Incompetent as I, Neutral as N};

    fn ballot(id: u32, votes: &[CompetencyClass]) -> CompetencyBallot {
        CompetencyBallot::new(id, votes.to_vec()).unwrap()
    }

    #[test]
    fn votes() {
        assert_eq!(majority_vote(&ballot(1, &[C, C, N, I])), VoteOutcome::Label(C));
        assert_eq!(majority_vote(&ballot(1, &[C, C, N, N])), VoteOutcome::Discarded);
        assert_eq!(majority_vote(&ballot(1, &[I, I, I, I])), VoteOutcome::Label(I));
        assert_eq!(majority_vote(&ballot(1, &[I, N])), VoteOutcome::Discarded);
    }

    #[test]
    fn too_few_votes() {
        assert_eq!(
            CompetencyBallot::new(4, vec![C]).unwrap_err(),
            CompetencyError::TooFewVotes { sentence_id: 4 }
        );
    }

    #[test]
    fn perfect_agreement_is_one() {
        let ballots = [ballot(1, &[C, C, C]), ballot(2, &[I, I, I]), ballot(3, &[N, N, N])];
        assert_eq!(fleiss_kappa::<f64>(&ballots).unwrap(), 1.0);
    }

    #[test]
    fn kappa_errors() {
        assert_eq!(
            fleiss_kappa::<f64>(&[ballot(1, &[C, C]), ballot(2, &[C, C, C])]).unwrap_err(),
            CompetencyError::UnequalRaterCounts {
                expected: 2,
                found: 3
            }
        );
        assert_eq!(
            fleiss_kappa::<f64>(&[ballot(1, &[C, C]), ballot(2, &[C, C])]).unwrap_err(),
            CompetencyError::DegenerateAgreement
        );
        assert_eq!(
            fleiss_kappa::<f64>(&[]).unwrap_err(),
            CompetencyError::NoBallots
        );
    }

    #[test]
    fn label_file() {
        let text = "sentence_id\trater_id\tlabel\n1\ta\tCompetent\n1\tb\tC\n2\ta\tneutral\n2\tb\tIncompetent\n";
        let ballots = parse_label_file(text).unwrap();
        assert_eq!(ballots.len(), 2);
        assert_eq!(ballots[0].votes, vec![C, C]);
        assert_eq!(voted_labels(&ballots).len(), 1);
        assert!(matches!(
            parse_label_file("1\ta\tC\n1\ta\tN").unwrap_err(),
            CompetencyError::DuplicateVote { .. }
        ));
        assert_eq!(
            parse_label_file("1\ta\tbrilliant").unwrap_err(),
            CompetencyError::BadLabel("brilliant".into())
        );
        assert_eq!(
            parse_label_file("1\ta").unwrap_err(),
            CompetencyError::MalformedLine { line: 1 }
        );
    }

    fn p(value: Decision) -> GenderPrediction<f64> {
        GenderPrediction { value, margin: 0.3 }
    }

    #[test]
    fn table_proportions() {
        let labels: BTreeMap<u32, CompetencyClass> =
            [(1, C), (2, C), (3, N), (4, I), (5, I)].into_iter().collect();
        let predictions: BTreeMap<u32, GenderPrediction<f64>> = [
            (1, p(Decision::Male)),
            (2, p(Decision::Male)),
            (3, p(Decision::Abstain)),
            (4, p(Decision::Female)),
            (5, p(Decision::Male)),
        ]
        .into_iter()
        .collect();
        let table = competency_table(&labels, &predictions).unwrap();
        assert_eq!(table.row(C).proportion_female, Some(0.0));
        assert_eq!(table.row(N).proportion_female, None);
        assert_eq!(table.row(N).n_examples, 1);
        assert_eq!(table.row(I).proportion_female, Some(0.5));

        let mut missing = predictions.clone();
        missing.remove(&5);
        assert_eq!(
            competency_table(&labels, &missing).unwrap_err(),
            CompetencyError::MissingPrediction(5)
        );
    }

    #[test]
    fn published_column_round_trips() {
        let column = |values: [f64; 3]| CompetencyTable {
            rows: CompetencyClass::ALL
                .iter()
                .zip(values)
                .map(|(&class, v)| CompetencyRow {
                    class,
                    n_examples: 0,
                    n_female: 0,
                    n_male: 0,
                    proportion_female: Some(v),
                })
                .collect(),
        };
        let csv = write_table_csv(&[("BERT".to_string(), column([0.156, 0.117, 0.160]))]);
        assert_eq!(
            csv,
            "competency,BERT\nIncompetent,0.156\nNeutral,0.117\nCompetent,0.160\n"
        );
        let back = read_table_csv(&csv).unwrap();
        assert_eq!(back, vec![("BERT".to_string(), [Some(0.156), Some(0.117), Some(0.160)])]);
    }
}
