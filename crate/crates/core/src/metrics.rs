//! Thresholded pronoun resolution, per-gender F1, and the skew/stereotype
//! aggregates.
//!
//! Each prediction is resolved from the male and female candidate
//! probabilities. Items whose margin `|P(male) - P(female)|` is below the
//! confidence cutoff abstain and are dropped from every count. F1 is then
//! computed twice per dataset, once with each gender as the positive class.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::PronounDistribution;
use crate::corpus::{Gender, Polarity};
use crate::probe::CandidatePair;
use crate::scalar::round_half_up;
use crate::Real;

/// Cutoff used for all reported results.
pub const DEFAULT_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    Male,
    Female,
    Abstain,
}

impl Decision {
    pub fn gender(self) -> Option<Gender> {
        match self {
            Decision::Male => Some(Gender::Male),
            Decision::Female => Some(Gender::Female),
            Decision::Abstain => None,
        }
    }

    pub fn relabeled(self) -> Self {
        match self {
            Decision::Male => Decision::Female,
            Decision::Female => Decision::Male,
            Decision::Abstain => Decision::Abstain,
        }
    }
}

impl From<Gender> for Decision {
    fn from(g: Gender) -> Self {
        match g {
            Gender::Male => Decision::Male,
            Gender::Female => Decision::Female,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenderPrediction<T> {
    pub value: Decision,
    pub margin: T,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("distribution has no probability for candidate {0:?}")]
    MissingCandidate(String),
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
}

/// Resolves a male/female probability pair. The favoured gender is returned
/// when the margin reaches `threshold`; exact ties always abstain.
pub fn resolve_probs<T: Real>(p_male: T, p_female: T, threshold: T) -> GenderPrediction<T> {
    let margin = (p_male - p_female).abs();
    let value = if margin == T::zero() || margin < threshold {
        Decision::Abstain
    } else if p_male > p_female {
        Decision::Male
    } else {
        Decision::Female
    };
    GenderPrediction { value, margin }
}

pub fn resolve<T: Real>(
    dist: &PronounDistribution<T>,
    candidates: &CandidatePair,
    threshold: T,
) -> Result<GenderPrediction<T>, MetricsError> {
    if !(threshold >= T::zero() && threshold <= T::one()) {
        return Err(MetricsError::InvalidThreshold(threshold.as_f64()));
    }
    let get = |c: &str| {
        dist.get(c)
            .ok_or_else(|| MetricsError::MissingCandidate(c.to_string()))
    };
    Ok(resolve_probs(
        get(&candidates.male)?,
        get(&candidates.female)?,
        threshold,
    ))
}

/// Confusion counts for one positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    /// F1 as a percentage; 0 when there is nothing to score.
    pub fn f1<T: Real>(&self) -> T {
        let denominator = 2 * self.tp + self.fp + self.fn_;
        if denominator == 0 {
            T::zero()
        } else {
            T::lit(200.0) * T::from_count(self.tp) / T::from_count(denominator)
        }
    }

    pub fn is_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }
}

impl Add for Confusion {
    type Output = Confusion;

    fn add(self, rhs: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + rhs.tp,
            fp: self.fp + rhs.fp,
            fn_: self.fn_ + rhs.fn_,
        }
    }
}

/// Confusion counts for both positive classes over one dataset. Merging is
/// associative and commutative, so partial results may be combined in any
/// order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GenderConfusion {
    pub male: Confusion,
    pub female: Confusion,
    pub n_total: usize,
    pub n_abstained: usize,
}

impl GenderConfusion {
    pub fn record(&mut self, gold: Gender, predicted: Decision) {
        self.n_total += 1;
        let Some(predicted) = predicted.gender() else {
            self.n_abstained += 1;
            return;
        };
        for (positive, counts) in [
            (Gender::Male, &mut self.male),
            (Gender::Female, &mut self.female),
        ] {
            match (gold == positive, predicted == positive) {
                (true, true) => counts.tp += 1,
                (false, true) => counts.fp += 1,
                (true, false) => counts.fn_ += 1,
                (false, false) => {}
            }
        }
    }

    pub fn from_predictions<'a, T: Real>(
        predictions: impl IntoIterator<Item = &'a (Gender, GenderPrediction<T>)>,
    ) -> Self {
        let mut out = GenderConfusion::default();
        for (gold, prediction) in predictions {
            out.record(*gold, prediction.value);
        }
        out
    }

    pub fn counts(&self, positive: Gender) -> Confusion {
        match positive {
            Gender::Male => self.male,
            Gender::Female => self.female,
        }
    }

    /// Number of items that survived the confidence filter.
    pub fn n_effective(&self) -> usize {
        self.n_total - self.n_abstained
    }
}

impl Add for GenderConfusion {
    type Output = GenderConfusion;

    fn add(self, rhs: GenderConfusion) -> GenderConfusion {
        GenderConfusion {
            male: self.male + rhs.male,
            female: self.female + rhs.female,
            n_total: self.n_total + rhs.n_total,
            n_abstained: self.n_abstained + rhs.n_abstained,
        }
    }
}

impl AddAssign for GenderConfusion {
    fn add_assign(&mut self, rhs: GenderConfusion) {
        *self = *self + rhs;
    }
}

/// `(F1 with male positive, F1 with female positive)`, in percent.
pub fn f1_scores<T: Real>(predictions: &[(Gender, GenderPrediction<T>)]) -> (T, T) {
    let c = GenderConfusion::from_predictions(predictions);
    (c.male.f1(), c.female.f1())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Cell<T> {
    pub dataset: Polarity,
    pub positive_gender: Gender,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub f1: T,
}

impl<T: Real> F1Cell<T> {
    pub fn from_counts(dataset: Polarity, positive_gender: Gender, counts: Confusion) -> Self {
        F1Cell {
            dataset,
            positive_gender,
            tp: counts.tp,
            fp: counts.fp,
            fn_: counts.fn_,
            f1: counts.f1(),
        }
    }
}

/// The four F1 values of one evaluation, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Quad<T> {
    pub male_pro: T,
    pub male_anti: T,
    pub female_pro: T,
    pub female_anti: T,
}

impl<T: Real> F1Quad<T> {
    pub fn new(male_pro: T, male_anti: T, female_pro: T, female_anti: T) -> Self {
        F1Quad {
            male_pro,
            male_anti,
            female_pro,
            female_anti,
        }
    }
}

/// Mean absolute male/female F1 gap across the pro and anti sets.
pub fn mu_skew<T: Real>(f1: &F1Quad<T>) -> T {
    T::lit(0.5) * ((f1.male_pro - f1.female_pro).abs() + (f1.male_anti - f1.female_anti).abs())
}

/// Mean absolute pro/anti F1 gap across the two genders.
pub fn mu_stereo<T: Real>(f1: &F1Quad<T>) -> T {
    T::lit(0.5) * ((f1.male_pro - f1.male_anti).abs() + (f1.female_pro - f1.female_anti).abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport<T> {
    pub male_pro: F1Cell<T>,
    pub male_anti: F1Cell<T>,
    pub female_pro: F1Cell<T>,
    pub female_anti: F1Cell<T>,
    pub mu_skew: T,
    pub mu_stereo: T,
    pub n_total: usize,
    pub n_abstained: usize,
    /// Set when either dataset had no item left after the confidence filter.
    pub empty_effective_set: bool,
}

impl<T: Real> BiasReport<T> {
    pub fn from_confusions(pro: &GenderConfusion, anti: &GenderConfusion) -> Self {
        let male_pro = F1Cell::from_counts(Polarity::Pro, Gender::Male, pro.male);
        let male_anti = F1Cell::from_counts(Polarity::Anti, Gender::Male, anti.male);
        let female_pro = F1Cell::from_counts(Polarity::Pro, Gender::Female, pro.female);
        let female_anti = F1Cell::from_counts(Polarity::Anti, Gender::Female, anti.female);
        let quad = F1Quad::new(male_pro.f1, male_anti.f1, female_pro.f1, female_anti.f1);
        BiasReport {
            male_pro,
            male_anti,
            female_pro,
            female_anti,
            mu_skew: mu_skew(&quad),
            mu_stereo: mu_stereo(&quad),
            n_total: pro.n_total + anti.n_total,
            n_abstained: pro.n_abstained + anti.n_abstained,
            empty_effective_set: pro.n_effective() == 0 || anti.n_effective() == 0,
        }
    }

    pub fn from_predictions(
        pro: &[(Gender, GenderPrediction<T>)],
        anti: &[(Gender, GenderPrediction<T>)],
    ) -> Self {
        Self::from_confusions(
            &GenderConfusion::from_predictions(pro),
            &GenderConfusion::from_predictions(anti),
        )
    }

    pub fn quad(&self) -> F1Quad<T> {
        F1Quad::new(
            self.male_pro.f1,
            self.male_anti.f1,
            self.female_pro.f1,
            self.female_anti.f1,
        )
    }

    /// Display row in table order: F1 male pro, male anti, female pro,
    /// female anti, stereotype, skew; each rounded half-up to one decimal.
    pub fn display_row(&self) -> [f64; 6] {
        let q = self.quad();
        [
            q.male_pro,
            q.male_anti,
            q.female_pro,
            q.female_anti,
            self.mu_stereo,
            self.mu_skew,
        ]
        .map(|v| round_half_up(v.as_f64(), 1))
    }
}

/// Rounds a percentage for display.
pub fn display_value(x: f64) -> f64 {
    round_half_up(x, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pred(value: Decision) -> GenderPrediction<f64> {
        GenderPrediction { value, margin: 0.5 }
    }

    #[test]
    fn resolve_examples() {
        let p = resolve_probs(0.83, 0.11, 0.1);
        assert_eq!(p.value, Decision::Male);
        assert_abs_diff_eq!(p.margin, 0.72, epsilon = 1e-12);
        assert_eq!(resolve_probs(0.45, 0.40, 0.1).value, Decision::Abstain);
        assert_eq!(resolve_probs(0.3, 0.3, 0.0).value, Decision::Abstain);
        assert_eq!(resolve_probs(0.1, 0.4, 0.1).value, Decision::Female);
    }

    #[test]
    fn resolve_from_distribution() {
        let d = PronounDistribution::from_pairs([("he", 0.2), ("she", 0.7)]).unwrap();
        let pair = CandidatePair {
            male: "he".into(),
            female: "she".into(),
        };
        assert_eq!(resolve(&d, &pair, 0.1).unwrap().value, Decision::Female);
        let pair = CandidatePair {
            male: "his".into(),
            female: "her".into(),
        };
        assert_eq!(
            resolve(&d, &pair, 0.1).unwrap_err(),
            MetricsError::MissingCandidate("his".into())
        );
        let pair = CandidatePair {
            male: "he".into(),
            female: "she".into(),
        };
        assert!(resolve(&d, &pair, 1.5).is_err());
    }

    #[test]
    fn f1_examples() {
        let all_correct = [
            (Gender::Male, pred(Decision::Male)),
            (Gender::Female, pred(Decision::Female)),
        ];
        assert_eq!(f1_scores(&all_correct), (100.0, 100.0));

        let all_male = [
            (Gender::Male, pred(Decision::Male)),
            (Gender::Male, pred(Decision::Male)),
        ];
        assert_eq!(f1_scores(&all_male), (100.0, 0.0));

        // male: tp=1 fp=1 fn=0 -> 200/3; female: tp=0 fp=0 fn=1 -> 0.
        let mixed = [
            (Gender::Male, pred(Decision::Male)),
            (Gender::Female, pred(Decision::Male)),
            (Gender::Male, pred(Decision::Abstain)),
        ];
        let (m, f) = f1_scores(&mixed);
        assert_abs_diff_eq!(m, 200.0 / 3.0, epsilon = 1e-12);
        assert_eq!(display_value(m), 66.7);
        assert_eq!(f, 0.0);

        assert_eq!(f1_scores::<f64>(&[]), (0.0, 0.0));
    }

    #[test]
    fn table_rows() {
        let roberta = F1Quad::new(62.9, 27.0, 69.0, 39.3);
        assert_abs_diff_eq!(mu_skew(&roberta), 9.2, epsilon = 1e-9);
        assert_abs_diff_eq!(mu_stereo(&roberta), 32.8, epsilon = 1e-9);
        let distil = F1Quad::new(64.9, 67.2, 4.8, 5.0);
        assert_abs_diff_eq!(mu_skew(&distil), 61.15, epsilon = 1e-9);
        assert_eq!(display_value(mu_skew(&distil)), 61.2);
        let bert = F1Quad::new(69.3, 58.0, 31.4, 8.2);
        assert_abs_diff_eq!(mu_stereo(&bert), 17.25, epsilon = 1e-9);
        assert_eq!(display_value(mu_stereo(&bert)), 17.3);
        let flat = F1Quad::new(40.0, 40.0, 40.0, 40.0);
        assert_eq!(mu_skew(&flat), 0.0);
        assert_eq!(mu_stereo(&F1Quad::new(70.0, 70.0, 20.0, 20.0)), 0.0);
    }

    #[test]
    fn empty_effective_set_is_flagged() {
        let abstain = [(Gender::Male, pred(Decision::Abstain))];
        let r = BiasReport::from_predictions(&abstain, &abstain);
        assert!(r.empty_effective_set);
        assert_eq!(r.n_total, 2);
        assert_eq!(r.n_abstained, 2);
        assert_eq!(r.mu_skew, 0.0);
    }

    fn arb_gender() -> impl Strategy<Value = Gender> {
        prop_oneof![Just(Gender::Male), Just(Gender::Female)]
    }

    fn arb_decision() -> impl Strategy<Value = Decision> {
        prop_oneof![
            Just(Decision::Male),
            Just(Decision::Female),
            Just(Decision::Abstain)
        ]
    }

    proptest! {
        #[test]
        fn resolve_is_symmetric(a in 0.0f64..=1.0, b in 0.0f64..=1.0, t in 0.0f64..=1.0) {
            prop_assume!(a != b);
            let forward = resolve_probs(a, b, t).value;
            let backward = resolve_probs(b, a, t).value;
            prop_assert_eq!(forward == Decision::Male, backward == Decision::Female);
            prop_assert_eq!(forward.relabeled(), backward);
        }

        #[test]
        fn abstention_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0, t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            if resolve_probs(a, b, lo).value == Decision::Abstain {
                prop_assert_eq!(resolve_probs(a, b, hi).value, Decision::Abstain);
            }
        }

        #[test]
        fn relabel_invariance(
            pro in prop::collection::vec((arb_gender(), arb_decision()), 0..40),
            anti in prop::collection::vec((arb_gender(), arb_decision()), 0..40),
        ) {
            let lift = |v: &[(Gender, Decision)], flip: bool| -> Vec<(Gender, GenderPrediction<f64>)> {
                v.iter().map(|&(g, d)| {
                    if flip { (g.opposite(), pred(d.relabeled())) } else { (g, pred(d)) }
                }).collect()
            };
            let a = BiasReport::from_predictions(&lift(&pro, false), &lift(&anti, false));
            let b = BiasReport::from_predictions(&lift(&pro, true), &lift(&anti, true));
            prop_assert!((a.mu_skew - b.mu_skew).abs() < 1e-9);
            prop_assert!((a.mu_stereo - b.mu_stereo).abs() < 1e-9);
        }

        #[test]
        fn aggregates_are_lipschitz(
            cells in prop::array::uniform4(0.0f64..=100.0),
            which in 0usize..4,
            delta in -50.0f64..50.0,
        ) {
            let base = F1Quad::new(cells[0], cells[1], cells[2], cells[3]);
            let mut moved = cells;
            moved[which] += delta;
            let moved = F1Quad::new(moved[0], moved[1], moved[2], moved[3]);
            prop_assert!((mu_skew(&base) - mu_skew(&moved)).abs() <= delta.abs() + 1e-9);
            prop_assert!((mu_stereo(&base) - mu_stereo(&moved)).abs() <= delta.abs() + 1e-9);
        }

        #[test]
        fn confusion_merge_is_order_free(
            items in prop::collection::vec((arb_gender(), arb_decision()), 0..60),
            split in 0usize..60,
        ) {
            let split = split.min(items.len());
            let lifted: Vec<_> = items.iter().map(|&(g, d)| (g, pred(d))).collect();
            let whole = GenderConfusion::from_predictions(&lifted);
            let left = GenderConfusion::from_predictions(&lifted[..split]);
            let right = GenderConfusion::from_predictions(&lifted[split..]);
            prop_assert_eq!(whole, left + right);
            prop_assert_eq!(whole, right + left);
        }
    }
}
