//! WinoBias schema files and the lexicons that go with them.
//!
//! A WinoBias line looks like
//!
//! ```text
//! 1 The accountant met [the janitor] and wished [him] well.
//! ```
//!
//! The first bracketed span is the entity the pronoun refers to, the second
//! is the pronoun itself. The other occupational entity is not bracketed; it
//! is recovered by matching a [`ProfessionLexicon`] against the tokens.

mod lexicon;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lexicon::{match_case, GenderedWordMap, ProfessionLexicon, WordPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub fn opposite(self) -> Self {
        match self {
            Gender::Male => Gender::Female,
            Gender::Female => Gender::Male,
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Male => "male",
            Gender::Female => "female",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PronounCase {
    #[serde(alias = "Nom", alias = "nom")]
    Nominative,
    #[serde(alias = "Acc", alias = "acc")]
    Accusative,
    #[serde(alias = "Poss", alias = "poss")]
    Possessive,
}

impl PronounCase {
    pub const ALL: [PronounCase; 3] = [
        PronounCase::Nominative,
        PronounCase::Accusative,
        PronounCase::Possessive,
    ];

    /// Short tag used in word-map files.
    pub fn tag(self) -> &'static str {
        match self {
            PronounCase::Nominative => "nom",
            PronounCase::Accusative => "acc",
            PronounCase::Possessive => "poss",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag.to_ascii_lowercase().as_str() {
            "nom" | "nominative" => Some(PronounCase::Nominative),
            "acc" | "accusative" => Some(PronounCase::Accusative),
            "poss" | "possessive" => Some(PronounCase::Possessive),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Pro,
    Anti,
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarity::Pro => "pro",
            Polarity::Anti => "anti",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Task {
    T1,
    T2,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::T1 => "T1",
            Task::T2 => "T2",
        })
    }
}

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start < end);
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, index: usize) -> bool {
        (self.start..self.end).contains(&index)
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EntitySlot {
    Entity1,
    Entity2,
}

/// Gender and default case of a WinoBias pronoun. `her` is reported as
/// accusative; pairing corrects it to possessive where the male counterpart
/// is `his`.
pub fn pronoun_info(surface: &str) -> Option<(Gender, PronounCase)> {
    match surface.to_ascii_lowercase().as_str() {
        "he" => Some((Gender::Male, PronounCase::Nominative)),
        "him" => Some((Gender::Male, PronounCase::Accusative)),
        "his" => Some((Gender::Male, PronounCase::Possessive)),
        "she" => Some((Gender::Female, PronounCase::Nominative)),
        "her" => Some((Gender::Female, PronounCase::Accusative)),
        _ => None,
    }
}

pub fn pronoun_form(gender: Gender, case: PronounCase) -> &'static str {
    match (gender, case) {
        (Gender::Male, PronounCase::Nominative) => "he",
        (Gender::Male, PronounCase::Accusative) => "him",
        (Gender::Male, PronounCase::Possessive) => "his",
        (Gender::Female, PronounCase::Nominative) => "she",
        (Gender::Female, _) => "her",
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("line {line}: malformed schema line: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: bracketed pronoun {found:?} is not one of he/him/his/she/her")]
    UnknownPronoun { line: usize, found: String },
    #[error("line {line}: T2 sentence whose referent is not the second entity")]
    ReferentNotSecondEntity { line: usize },
    #[error("sentence id {id} appears more than once")]
    DuplicateId { id: u32 },
    #[error("sentence id {id} has no counterpart in the other polarity")]
    UnpairedSentence { id: u32 },
    #[error("sentence id {id}: pro and anti versions differ at token {index} ({pro:?} vs {anti:?})")]
    PairMismatch {
        id: u32,
        index: usize,
        pro: String,
        anti: String,
    },
    #[error("lexicon line {line}: expected `profession<TAB>m|f`")]
    MalformedLexiconLine { line: usize },
    #[error("lexicon line {line}: gender tag {tag:?} is not m or f")]
    BadGenderTag { line: usize, tag: String },
    #[error("profession {0:?} listed more than once")]
    DuplicateProfession(String),
    #[error("profession lexicon is empty")]
    EmptyLexicon,
    #[error("word map line {line}: expected `male<TAB>female<TAB>case`")]
    MalformedMapLine { line: usize },
    #[error("word map line {line}: unknown case tag {tag:?}")]
    BadCaseTag { line: usize, tag: String },
    #[error("word map: {form:?} is mapped inconsistently")]
    MapConflict { form: String },
}

/// One WinoBias sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaSentence {
    /// Leading line number of the source line.
    pub id: u32,
    pub tokens: Vec<String>,
    /// `glued[i]` is true when token `i` is written without a preceding space
    /// (split-off punctuation).
    pub glued: Vec<bool>,
    pub referent_span: Span,
    pub pronoun_index: usize,
    pub pronoun_surface: String,
    pub pronoun_gender: Gender,
    pub pronoun_case: PronounCase,
    pub polarity: Polarity,
    pub task: Task,
    pub entity1_span: Option<Span>,
    pub entity2_span: Option<Span>,
}

impl SchemaSentence {
    /// Which entity slot the bracketed referent occupies, when known.
    pub fn referent_slot(&self) -> Option<EntitySlot> {
        if self.entity1_span == Some(self.referent_span) {
            Some(EntitySlot::Entity1)
        } else if self.entity2_span == Some(self.referent_span) {
            Some(EntitySlot::Entity2)
        } else {
            None
        }
    }

    pub fn entity_span(&self, slot: EntitySlot) -> Option<Span> {
        match slot {
            EntitySlot::Entity1 => self.entity1_span,
            EntitySlot::Entity2 => self.entity2_span,
        }
    }

    /// Surface text of a span, words joined by single spaces.
    pub fn span_text(&self, span: Span) -> String {
        self.tokens[span.start..span.end].join(" ")
    }

    /// Writes the sentence back in the WinoBias line format.
    pub fn to_line(&self) -> String {
        let pronoun = Span::new(self.pronoun_index, self.pronoun_index + 1);
        let mut out = self.id.to_string();
        for (i, token) in self.tokens.iter().enumerate() {
            if !self.glued[i] {
                out.push(' ');
            }
            if i == self.referent_span.start || i == pronoun.start {
                out.push('[');
            }
            out.push_str(token);
            if i + 1 == self.referent_span.end || i + 1 == pronoun.end {
                out.push(']');
            }
        }
        out
    }
}

/// A pro-/anti-stereotypical pair sharing one sentence frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaPair {
    pub pro: SchemaSentence,
    pub anti: SchemaSentence,
    /// Token positions where the two versions differ, with the pronoun case
    /// at each. Always includes the bracketed pronoun.
    pub swaps: Vec<(usize, PronounCase)>,
}

impl SchemaPair {
    /// Swaps every differing pronoun of the pro version with `map`.
    pub fn swapped_pro_tokens(&self, map: &GenderedWordMap) -> Option<Vec<String>> {
        let mut tokens = self.pro.tokens.clone();
        for &(index, case) in &self.swaps {
            tokens[index] = map.swap_pronoun(&tokens[index], case)?;
        }
        Some(tokens)
    }
}

const TRAILING_PUNCT: &[char] = &['.', ',', '!', '?', ';', ':'];

struct Piece {
    text: String,
    glued: bool,
    open: bool,
    close: bool,
}

fn lex_word(word: &str) -> Result<Vec<Piece>, String> {
    let (open, rest) = match word.strip_prefix('[') {
        Some(rest) => (true, rest),
        None => (false, word),
    };
    let mut core = rest;
    while core.len() > 1 && core.ends_with(TRAILING_PUNCT) {
        core = &core[..core.len() - 1];
    }
    let punct = &rest[core.len()..];
    let (close, core) = match core.strip_suffix(']') {
        Some(core) => (true, core),
        None => (false, core),
    };
    if core.is_empty() {
        return Err(format!("empty token in {word:?}"));
    }
    if core.contains(['[', ']']) || punct.contains(['[', ']']) {
        return Err(format!("misplaced bracket in {word:?}"));
    }
    let mut pieces = vec![Piece {
        text: core.to_string(),
        glued: false,
        open,
        close,
    }];
    if !punct.is_empty() {
        pieces.push(Piece {
            text: punct.to_string(),
            glued: true,
            open: false,
            close: false,
        });
    }
    Ok(pieces)
}

const DETERMINERS: &[&str] = &["the", "a", "an"];

fn is_determiner(token: &str) -> bool {
    DETERMINERS.iter().any(|d| token.eq_ignore_ascii_case(d))
}

/// Locates the unbracketed occupational entity: the longest lexicon match
/// outside the referent and pronoun, widened by a directly preceding
/// determiner.
fn find_other_entity(
    tokens: &[String],
    referent: Span,
    pronoun_index: usize,
    lexicon: &ProfessionLexicon,
) -> Option<Span> {
    let pronoun = Span::new(pronoun_index, pronoun_index + 1);
    let mut best: Option<Span> = None;
    for start in 0..tokens.len() {
        if let Some((len, _)) = lexicon.longest_match(&tokens[start..]) {
            let span = Span::new(start, start + len);
            if span.overlaps(&referent) || span.overlaps(&pronoun) {
                continue;
            }
            if best.is_none_or(|b| span.len() > b.len()) {
                best = Some(span);
            }
        }
    }
    best.map(|span| {
        let widened = span.start.checked_sub(1).filter(|&prev| {
            is_determiner(&tokens[prev]) && !referent.contains(prev) && prev != pronoun_index
        });
        match widened {
            Some(start) => Span::new(start, span.end),
            None => span,
        }
    })
}

/// Parses one WinoBias file. Blank lines are skipped; line numbers in errors
/// are 1-based positions in `contents`.
pub fn parse_winobias(
    contents: &str,
    task: Task,
    polarity: Polarity,
    lexicon: &ProfessionLexicon,
) -> Result<Vec<SchemaSentence>, CorpusError> {
    let mut sentences = Vec::new();
    for (offset, raw) in contents.lines().enumerate() {
        let line = offset + 1;
        if raw.trim().is_empty() {
            continue;
        }
        sentences.push(parse_line(raw, line, task, polarity, lexicon)?);
    }
    Ok(sentences)
}

fn parse_line(
    raw: &str,
    line: usize,
    task: Task,
    polarity: Polarity,
    lexicon: &ProfessionLexicon,
) -> Result<SchemaSentence, CorpusError> {
    let malformed = |reason: String| CorpusError::MalformedLine { line, reason };
    let mut words = raw.split_whitespace();
    let id = words
        .next()
        .and_then(|w| w.parse::<u32>().ok())
        .filter(|&id| id > 0)
        .ok_or_else(|| malformed("missing leading sentence number".into()))?;

    let mut tokens = Vec::new();
    let mut glued = Vec::new();
    let mut spans = Vec::new();
    let mut open_at: Option<usize> = None;
    for word in words {
        for piece in lex_word(word).map_err(&malformed)? {
            let index = tokens.len();
            if piece.open {
                if open_at.is_some() {
                    return Err(malformed("nested bracket".into()));
                }
                open_at = Some(index);
            }
            if piece.close {
                let start = open_at
                    .take()
                    .ok_or_else(|| malformed("closing bracket without opening".into()))?;
                spans.push(Span::new(start, index + 1));
            }
            tokens.push(piece.text);
            glued.push(piece.glued);
        }
    }
    if open_at.is_some() {
        return Err(malformed("unclosed bracket".into()));
    }
    if spans.len() != 2 {
        return Err(malformed(format!(
            "expected 2 bracketed spans, found {}",
            spans.len()
        )));
    }
    let referent_span = spans[0];
    let pronoun_span = spans[1];
    if pronoun_span.len() != 1 {
        return Err(CorpusError::UnknownPronoun {
            line,
            found: tokens[pronoun_span.start..pronoun_span.end].join(" "),
        });
    }
    let pronoun_index = pronoun_span.start;
    let pronoun_surface = tokens[pronoun_index].clone();
    let (pronoun_gender, pronoun_case) =
        pronoun_info(&pronoun_surface).ok_or_else(|| CorpusError::UnknownPronoun {
            line,
            found: pronoun_surface.clone(),
        })?;

    let other = find_other_entity(&tokens, referent_span, pronoun_index, lexicon);
    let referent_is_second = match other {
        Some(other) => other.start < referent_span.start,
        None => referent_span.start > 0,
    };
    let (entity1_span, entity2_span) = if referent_is_second {
        (other, Some(referent_span))
    } else {
        (Some(referent_span), other)
    };
    if task == Task::T2 && !referent_is_second {
        return Err(CorpusError::ReferentNotSecondEntity { line });
    }

    Ok(SchemaSentence {
        id,
        tokens,
        glued,
        referent_span,
        pronoun_index,
        pronoun_surface,
        pronoun_gender,
        pronoun_case,
        polarity,
        task,
        entity1_span,
        entity2_span,
    })
}

/// Case shared by a male/female pronoun pair, if they form one.
fn pair_case(male: &str, female: &str) -> Option<PronounCase> {
    match (male.to_ascii_lowercase().as_str(), female.to_ascii_lowercase().as_str()) {
        ("he", "she") => Some(PronounCase::Nominative),
        ("him", "her") => Some(PronounCase::Accusative),
        ("his", "her") => Some(PronounCase::Possessive),
        _ => None,
    }
}

/// Matches pro and anti sentences by id and checks that they differ only at
/// gender-swapped pronouns. The case of `her` is settled here from its male
/// counterpart.
pub fn pair_sentences(
    pro: Vec<SchemaSentence>,
    anti: Vec<SchemaSentence>,
) -> Result<Vec<SchemaPair>, CorpusError> {
    let mut by_id: BTreeMap<u32, SchemaSentence> = BTreeMap::new();
    for sentence in anti {
        let id = sentence.id;
        if by_id.insert(id, sentence).is_some() {
            return Err(CorpusError::DuplicateId { id });
        }
    }

    let mut seen = std::collections::BTreeSet::new();
    let mut pairs = Vec::with_capacity(pro.len());
    for mut pro in pro {
        let id = pro.id;
        if !seen.insert(id) {
            return Err(CorpusError::DuplicateId { id });
        }
        let mut anti = by_id
            .remove(&id)
            .ok_or(CorpusError::UnpairedSentence { id })?;
        let mismatch = |index: usize, pro: &str, anti: &str| CorpusError::PairMismatch {
            id,
            index,
            pro: pro.to_string(),
            anti: anti.to_string(),
        };
        if pro.task != anti.task || pro.tokens.len() != anti.tokens.len() {
            return Err(mismatch(0, &pro.to_line(), &anti.to_line()));
        }
        if pro.pronoun_index != anti.pronoun_index {
            let i = pro.pronoun_index;
            return Err(mismatch(i, &pro.tokens[i], &anti.tokens[i]));
        }

        let mut swaps = Vec::new();
        for (i, (p, a)) in pro.tokens.iter().zip(&anti.tokens).enumerate() {
            if p == a {
                if i == pro.pronoun_index {
                    return Err(mismatch(i, p, a));
                }
                continue;
            }
            let (Some((pg, _)), Some((ag, _))) = (pronoun_info(p), pronoun_info(a)) else {
                return Err(mismatch(i, p, a));
            };
            let case = match (pg, ag) {
                (Gender::Male, Gender::Female) => pair_case(p, a),
                (Gender::Female, Gender::Male) => pair_case(a, p),
                _ => None,
            }
            .ok_or_else(|| mismatch(i, p, a))?;
            swaps.push((i, case));
        }
        let case = swaps
            .iter()
            .find(|(i, _)| *i == pro.pronoun_index)
            .map(|&(_, case)| case)
            .expect("pronoun position differs");
        pro.pronoun_case = case;
        anti.pronoun_case = case;
        pairs.push(SchemaPair { pro, anti, swaps });
    }
    if let Some(&id) = by_id.keys().next() {
        return Err(CorpusError::UnpairedSentence { id });
    }
    Ok(pairs)
}

/// Result of checking a pro/anti file pair against the corpus invariants.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusAudit {
    pub n_pairs: usize,
    /// Ids of lines that do not serialize back to their source text.
    pub round_trip_failures: Vec<u32>,
    /// Ids whose pronoun-swapped pro tokens differ from the anti tokens.
    pub swap_failures: Vec<u32>,
    /// Ids of T2 pairs whose referent is not the second entity.
    pub referent_failures: Vec<u32>,
}

impl CorpusAudit {
    pub fn is_clean(&self) -> bool {
        self.round_trip_failures.is_empty()
            && self.swap_failures.is_empty()
            && self.referent_failures.is_empty()
    }
}

/// Parses and pairs a pro/anti file pair, then checks line round-trips, the
/// pronoun swap relation, and (for T2) the referent slot. Parse and pairing
/// errors are returned as errors; invariant violations are collected.
pub fn audit_corpus(
    pro_contents: &str,
    anti_contents: &str,
    task: Task,
    lexicon: &ProfessionLexicon,
    map: &GenderedWordMap,
) -> Result<(Vec<SchemaPair>, CorpusAudit), CorpusError> {
    let pro = parse_winobias(pro_contents, task, Polarity::Pro, lexicon)?;
    let anti = parse_winobias(anti_contents, task, Polarity::Anti, lexicon)?;
    let mut audit = CorpusAudit::default();
    for (contents, sentences) in [(pro_contents, &pro), (anti_contents, &anti)] {
        let lines = contents.lines().filter(|l| !l.trim().is_empty());
        for (line, sentence) in lines.zip(sentences.iter()) {
            if sentence.to_line() != line.trim_end() {
                audit.round_trip_failures.push(sentence.id);
            }
        }
    }
    let pairs = pair_sentences(pro, anti)?;
    audit.n_pairs = pairs.len();
    for pair in &pairs {
        if pair.swapped_pro_tokens(map).as_ref() != Some(&pair.anti.tokens) {
            audit.swap_failures.push(pair.pro.id);
        }
        if task == Task::T2
            && (pair.pro.referent_slot() != Some(EntitySlot::Entity2)
                || pair.anti.referent_slot() != Some(EntitySlot::Entity2))
        {
            audit.referent_failures.push(pair.pro.id);
        }
    }
    Ok((pairs, audit))
}
