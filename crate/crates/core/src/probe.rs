//! Masked queries built from schema sentences.
//!
//! Four variants are produced: the plain pronoun mask, the prior query with
//! both professions masked, the gendered-name baseline, and the
//! gender-neutral "the person" probe used for competency analysis.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    match_case, pronoun_form, EntitySlot, Gender, Polarity, PronounCase, SchemaSentence, Span,
    Task,
};

/// Sentinel written in place of masked words. Backends translate it to their
/// own mask token.
pub const MASK: &str = "[MASK]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    Standard,
    Prior,
    NamedBaseline,
    PersonProbe,
}

/// Male and female candidate forms for the masked pronoun.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CandidatePair {
    pub male: String,
    pub female: String,
}

impl CandidatePair {
    pub fn for_case(case: PronounCase) -> Self {
        CandidatePair {
            male: pronoun_form(Gender::Male, case).to_string(),
            female: pronoun_form(Gender::Female, case).to_string(),
        }
    }

    /// Candidates re-cased to follow the original pronoun (`He` → `He`/`She`).
    fn cased_like(case: PronounCase, original: &str) -> Self {
        let plain = Self::for_case(case);
        CandidatePair {
            male: match_case(original, &plain.male),
            female: match_case(original, &plain.female),
        }
    }

    pub fn get(&self, gender: Gender) -> &str {
        match gender {
            Gender::Male => &self.male,
            Gender::Female => &self.female,
        }
    }

    pub fn to_vec(&self) -> Vec<String> {
        vec![self.male.clone(), self.female.clone()]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub id: u32,
    pub polarity: Polarity,
    pub task: Task,
    pub variant: Variant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedQuery {
    pub tokens: Vec<String>,
    pub target_index: usize,
    pub candidates: CandidatePair,
    pub provenance: Provenance,
    /// Correct gender where the query has one (name baseline); otherwise the
    /// gender of the original pronoun.
    pub gold: Gender,
}

impl MaskedQuery {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NameAssignment {
    male_name: String,
    female_name: String,
    male_slot: EntitySlot,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProbeError {
    #[error("sentence {id}: entity span {slot:?} was not recovered")]
    MissingEntitySpan { id: u32, slot: EntitySlot },
    #[error("names must be distinct single tokens, got {male:?} and {female:?}")]
    InvalidNames { male: String, female: String },
}

impl NameAssignment {
    pub fn new(
        male_name: impl Into<String>,
        female_name: impl Into<String>,
        male_slot: EntitySlot,
    ) -> Result<Self, ProbeError> {
        let male_name = male_name.into();
        let female_name = female_name.into();
        let single = |n: &str| !n.is_empty() && !n.contains(char::is_whitespace) && n != MASK;
        if !single(&male_name) || !single(&female_name) || male_name == female_name {
            return Err(ProbeError::InvalidNames {
                male: male_name,
                female: female_name,
            });
        }
        Ok(NameAssignment {
            male_name,
            female_name,
            male_slot,
        })
    }

    /// "Bob" and "Alice".
    pub fn default_names(male_slot: EntitySlot) -> Self {
        Self::new("Bob", "Alice", male_slot).expect("default names are valid")
    }

    pub fn male_slot(&self) -> EntitySlot {
        self.male_slot
    }

    fn name_for(&self, slot: EntitySlot) -> (&str, Gender) {
        if slot == self.male_slot {
            (&self.male_name, Gender::Male)
        } else {
            (&self.female_name, Gender::Female)
        }
    }
}

/// Replaces disjoint spans with new token runs, returning the new tokens and a
/// map from old to new indices for tokens outside the replaced spans.
fn replace_spans(
    tokens: &[String],
    replacements: &mut [(Span, Vec<String>)],
) -> (Vec<String>, Vec<Option<usize>>) {
    replacements.sort_by_key(|(span, _)| span.start);
    let mut out = Vec::with_capacity(tokens.len());
    let mut index_map = vec![None; tokens.len()];
    let mut next = replacements.iter().peekable();
    let mut i = 0;
    while i < tokens.len() {
        match next.peek() {
            Some((span, words)) if span.start == i => {
                out.extend(words.iter().cloned());
                i = span.end;
                next.next();
            }
            _ => {
                index_map[i] = Some(out.len());
                out.push(tokens[i].clone());
                i += 1;
            }
        }
    }
    (out, index_map)
}

fn entity_spans(s: &SchemaSentence) -> Result<(Span, Span), ProbeError> {
    let get = |slot| {
        s.entity_span(slot)
            .ok_or(ProbeError::MissingEntitySpan { id: s.id, slot })
    };
    Ok((get(EntitySlot::Entity1)?, get(EntitySlot::Entity2)?))
}

fn provenance(s: &SchemaSentence, variant: Variant) -> Provenance {
    Provenance {
        id: s.id,
        polarity: s.polarity,
        task: s.task,
        variant,
    }
}

fn masked_with_entities(
    s: &SchemaSentence,
    entity_words: impl Fn(EntitySlot, Span) -> Vec<String>,
) -> Result<(Vec<String>, usize), ProbeError> {
    let (e1, e2) = entity_spans(s)?;
    let mut replacements = vec![
        (e1, entity_words(EntitySlot::Entity1, e1)),
        (e2, entity_words(EntitySlot::Entity2, e2)),
    ];
    let (mut tokens, index_map) = replace_spans(&s.tokens, &mut replacements);
    let target = index_map[s.pronoun_index].expect("pronoun lies outside entity spans");
    tokens[target] = MASK.to_string();
    Ok((tokens, target))
}

/// Masks the bracketed pronoun.
pub fn mask_pronoun(s: &SchemaSentence) -> MaskedQuery {
    let mut tokens = s.tokens.clone();
    tokens[s.pronoun_index] = MASK.to_string();
    MaskedQuery {
        tokens,
        target_index: s.pronoun_index,
        candidates: CandidatePair::cased_like(s.pronoun_case, &s.pronoun_surface),
        provenance: provenance(s, Variant::Standard),
        gold: s.pronoun_gender,
    }
}

/// Collapses each entity span (determiner included) to one mask and masks the
/// pronoun as well; the pronoun mask is the scored position.
pub fn mask_professions(s: &SchemaSentence) -> Result<MaskedQuery, ProbeError> {
    let (tokens, target_index) = masked_with_entities(s, |_, _| vec![MASK.to_string()])?;
    Ok(MaskedQuery {
        tokens,
        target_index,
        candidates: CandidatePair::cased_like(s.pronoun_case, &s.pronoun_surface),
        provenance: provenance(s, Variant::Prior),
        gold: s.pronoun_gender,
    })
}

/// Replaces the two entities with gendered names. The gold label is the
/// gender of the name standing in the referent's slot.
pub fn substitute_names(
    s: &SchemaSentence,
    names: &NameAssignment,
) -> Result<MaskedQuery, ProbeError> {
    let referent = s.referent_slot().ok_or(ProbeError::MissingEntitySpan {
        id: s.id,
        slot: if s.entity1_span.is_none() {
            EntitySlot::Entity1
        } else {
            EntitySlot::Entity2
        },
    })?;
    let (tokens, target_index) =
        masked_with_entities(s, |slot, _| vec![names.name_for(slot).0.to_string()])?;
    Ok(MaskedQuery {
        tokens,
        target_index,
        candidates: CandidatePair::cased_like(s.pronoun_case, &s.pronoun_surface),
        provenance: provenance(s, Variant::NamedBaseline),
        gold: names.name_for(referent).1,
    })
}

/// Replaces both entities with "the person" (capitalized at sentence start).
pub fn substitute_person(s: &SchemaSentence) -> Result<MaskedQuery, ProbeError> {
    let (tokens, target_index) = masked_with_entities(s, |_, span| {
        let det = if span.start == 0 { "The" } else { "the" };
        vec![det.to_string(), "person".to_string()]
    })?;
    Ok(MaskedQuery {
        tokens,
        target_index,
        candidates: CandidatePair::cased_like(s.pronoun_case, &s.pronoun_surface),
        provenance: provenance(s, Variant::PersonProbe),
        gold: s.pronoun_gender,
    })
}
