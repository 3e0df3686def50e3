use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::MitigationError;
use crate::corpus::{Gender, GenderedWordMap, PronounCase, Span};
use crate::probe::MASK;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EntityKind {
    PersonName,
    Profession,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityAnnotation {
    pub span: Span,
    pub kind: EntityKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PronounAnnotation {
    pub index: usize,
    pub case: PronounCase,
    pub gender: Gender,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenderedWordAnnotation {
    pub index: usize,
}

/// A corpus sentence with the annotations the augmentation needs. Stored one
/// JSON object per line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedExample {
    pub tokens: Vec<String>,
    #[serde(default)]
    pub entities: Vec<EntityAnnotation>,
    #[serde(default)]
    pub pronouns: Vec<PronounAnnotation>,
    #[serde(default)]
    pub gendered_words: Vec<GenderedWordAnnotation>,
}

/// One masked-pronoun training instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedTrainingExample {
    pub tokens: Vec<String>,
    pub label: String,
}

fn is_identity_token(token: &str) -> bool {
    token
        .strip_prefix("[E")
        .and_then(|rest| rest.strip_suffix(']'))
        .is_some_and(|digits| !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()))
}

impl AnnotatedExample {
    /// Checks bounds, span disjointness, and that every annotated pronoun is
    /// the form the map gives for its case and gender.
    pub fn validate(&self, map: &GenderedWordMap) -> Result<(), String> {
        let n = self.tokens.len();
        let mut spans: Vec<Span> = Vec::new();
        for e in &self.entities {
            if e.span.start >= e.span.end || e.span.end > n {
                return Err(format!("entity span {:?} out of bounds", e.span));
            }
            if spans.iter().any(|s| s.overlaps(&e.span)) {
                return Err(format!("entity span {:?} overlaps another", e.span));
            }
            spans.push(e.span);
        }
        let mut used = BTreeSet::new();
        for p in &self.pronouns {
            if p.index >= n {
                return Err(format!("pronoun index {} out of bounds", p.index));
            }
            if !used.insert(p.index) {
                return Err(format!("index {} annotated twice", p.index));
            }
            let surface = &self.tokens[p.index];
            if map.gender_of(surface, Some(p.case)) != Some(p.gender) {
                return Err(format!(
                    "{surface:?} is not the {:?} {} pronoun",
                    p.case, p.gender
                ));
            }
        }
        for w in &self.gendered_words {
            if w.index >= n {
                return Err(format!("gendered word index {} out of bounds", w.index));
            }
            if !used.insert(w.index) {
                return Err(format!("index {} annotated twice", w.index));
            }
        }
        Ok(())
    }

    /// True when every person-name entity is a single `[E<k>]` token.
    pub fn is_anonymized(&self) -> bool {
        self.entities
            .iter()
            .filter(|e| e.kind == EntityKind::PersonName)
            .all(|e| e.span.len() == 1 && is_identity_token(&self.tokens[e.span.start]))
    }
}

/// Replaces each person name with an identity token `[E<k>]`, numbered by
/// first appearance; repeated mentions of the same name share a token.
/// Annotations inside replaced names are dropped and all other indices are
/// shifted to the new token positions.
pub fn anonymize(ex: &AnnotatedExample) -> AnnotatedExample {
    let mut names: Vec<&EntityAnnotation> = ex
        .entities
        .iter()
        .filter(|e| e.kind == EntityKind::PersonName)
        .collect();
    if names.is_empty() {
        return ex.clone();
    }
    names.sort_by_key(|e| e.span.start);

    let mut ids: BTreeMap<String, usize> = BTreeMap::new();
    let mut name_at: BTreeMap<usize, (Span, String)> = BTreeMap::new();
    for e in names {
        let surface = ex.tokens[e.span.start..e.span.end].join(" ");
        let next = ids.len() + 1;
        let k = *ids.entry(surface).or_insert(next);
        name_at.insert(e.span.start, (e.span, format!("[E{k}]")));
    }

    let mut tokens = Vec::with_capacity(ex.tokens.len());
    let mut index_map = vec![None; ex.tokens.len()];
    let mut name_position = BTreeMap::new();
    let mut i = 0;
    while i < ex.tokens.len() {
        if let Some((span, identity)) = name_at.get(&i) {
            name_position.insert(i, tokens.len());
            tokens.push(identity.clone());
            i = span.end;
        } else {
            index_map[i] = Some(tokens.len());
            tokens.push(ex.tokens[i].clone());
            i += 1;
        }
    }

    let entities = ex
        .entities
        .iter()
        .filter_map(|e| {
            if e.kind == EntityKind::PersonName {
                let position = name_position[&e.span.start];
                return Some(EntityAnnotation {
                    span: Span::new(position, position + 1),
                    kind: e.kind,
                });
            }
            let start = index_map[e.span.start]?;
            let end = index_map[e.span.end - 1]? + 1;
            Some(EntityAnnotation {
                span: Span::new(start, end),
                kind: e.kind,
            })
        })
        .collect();
    let pronouns = ex
        .pronouns
        .iter()
        .filter_map(|p| {
            Some(PronounAnnotation {
                index: index_map[p.index]?,
                ..p.clone()
            })
        })
        .collect();
    let gendered_words = ex
        .gendered_words
        .iter()
        .filter_map(|w| {
            Some(GenderedWordAnnotation {
                index: index_map[w.index]?,
            })
        })
        .collect();
    AnnotatedExample {
        tokens,
        entities,
        pronouns,
        gendered_words,
    }
}

fn swap_at(
    ex: &AnnotatedExample,
    map: &GenderedWordMap,
    example: usize,
) -> Result<AnnotatedExample, MitigationError> {
    let invalid = |reason: String| MitigationError::InvalidAnnotation { example, reason };
    ex.validate(map).map_err(invalid)?;
    let mut out = ex.clone();
    for p in &mut out.pronouns {
        let surface = &ex.tokens[p.index];
        out.tokens[p.index] = map
            .swap_pronoun(surface, p.case)
            .ok_or_else(|| invalid(format!("no opposite form for {surface:?}")))?;
        p.gender = p.gender.opposite();
    }
    for w in &out.gendered_words {
        let word = &ex.tokens[w.index];
        out.tokens[w.index] =
            map.swap_word(word)
                .ok_or_else(|| MitigationError::UnmappedGenderedWord {
                    example,
                    index: w.index,
                    word: word.clone(),
                })?;
    }
    Ok(out)
}

/// Replaces every annotated pronoun with its opposite-gender form for the
/// same case and every annotated gendered word with its counterpart.
pub fn gender_swap(
    ex: &AnnotatedExample,
    map: &GenderedWordMap,
) -> Result<AnnotatedExample, MitigationError> {
    swap_at(ex, map, 0)
}

fn masked_examples(ex: &AnnotatedExample) -> impl Iterator<Item = MaskedTrainingExample> + '_ {
    let mut pronouns: Vec<&PronounAnnotation> = ex.pronouns.iter().collect();
    pronouns.sort_by_key(|p| p.index);
    pronouns.into_iter().map(|p| {
        let mut tokens = ex.tokens.clone();
        let label = std::mem::replace(&mut tokens[p.index], MASK.to_string()).to_lowercase();
        MaskedTrainingExample { tokens, label }
    })
}

fn check_anonymized(corpus: &[AnnotatedExample]) -> Result<(), MitigationError> {
    match corpus.iter().position(|ex| !ex.is_anonymized()) {
        Some(example) => Err(MitigationError::NotAnonymized { example }),
        None => Ok(()),
    }
}

/// One masked example per annotated pronoun, in corpus order.
pub fn build_unaugmented_corpus(
    corpus: &[AnnotatedExample],
) -> Result<Vec<MaskedTrainingExample>, MitigationError> {
    check_anonymized(corpus)?;
    Ok(corpus.iter().flat_map(masked_examples).collect())
}

/// Masked examples for every pronoun of each example followed by those of its
/// gender-swapped duplicate.
pub fn build_augmented_corpus(
    corpus: &[AnnotatedExample],
    map: &GenderedWordMap,
) -> Result<Vec<MaskedTrainingExample>, MitigationError> {
    check_anonymized(corpus)?;
    let mut out = Vec::new();
    for (i, ex) in corpus.iter().enumerate() {
        let swapped = swap_at(ex, map, i)?;
        out.extend(masked_examples(ex));
        out.extend(masked_examples(&swapped));
    }
    Ok(out)
}

/// Reads one annotated example per nonblank line.
pub fn read_annotated(contents: &str) -> Result<Vec<AnnotatedExample>, MitigationError> {
    contents
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| MitigationError::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Writes one `{"tokens": [...], "label": "..."}` object per line.
pub fn write_training_examples<W: Write>(
    mut out: W,
    examples: &[MaskedTrainingExample],
) -> io::Result<()> {
    for ex in examples {
        serde_json::to_writer(&mut out, ex)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split(' ').map(String::from).collect()
    }

    fn person(start: usize, end: usize) -> EntityAnnotation {
        EntityAnnotation {
            span: Span::new(start, end),
            kind: EntityKind::PersonName,
        }
    }

    fn king() -> AnnotatedExample {
        AnnotatedExample {
            tokens: toks("The King was pleased that his Lords had vanquished their enemies"),
            entities: vec![],
            pronouns: vec![PronounAnnotation {
                index: 5,
                case: PronounCase::Possessive,
                gender: Gender::Male,
            }],
            gendered_words: vec![
                GenderedWordAnnotation { index: 1 },
                GenderedWordAnnotation { index: 6 },
            ],
        }
    }

    #[test]
    fn king_becomes_queen() {
        let map = GenderedWordMap::default_english();
        let swapped = gender_swap(&king(), &map).unwrap();
        assert_eq!(
            swapped.tokens.join(" "),
            "The Queen was pleased that her Ladies had vanquished their enemies"
        );
        assert_eq!(swapped.pronouns[0].gender, Gender::Female);
        assert_eq!(gender_swap(&swapped, &map).unwrap(), king());
    }

    #[test]
    fn her_swaps_by_case() {
        let map = GenderedWordMap::pronouns();
        let ex = AnnotatedExample {
            tokens: toks("She gave her book to her"),
            entities: vec![],
            pronouns: vec![
                PronounAnnotation {
                    index: 0,
                    case: PronounCase::Nominative,
                    gender: Gender::Female,
                },
                PronounAnnotation {
                    index: 2,
                    case: PronounCase::Possessive,
                    gender: Gender::Female,
                },
                PronounAnnotation {
                    index: 5,
                    case: PronounCase::Accusative,
                    gender: Gender::Female,
                },
            ],
            gendered_words: vec![],
        };
        let swapped = gender_swap(&ex, &map).unwrap();
        assert_eq!(swapped.tokens.join(" "), "He gave his book to him");
    }

    #[test]
    fn untouched_without_annotations() {
        let ex = AnnotatedExample {
            tokens: toks("The table is red"),
            entities: vec![],
            pronouns: vec![],
            gendered_words: vec![],
        };
        assert_eq!(gender_swap(&ex, &GenderedWordMap::pronouns()).unwrap(), ex);
    }

    #[test]
    fn unmapped_word_and_inconsistent_pronoun() {
        let mut ex = king();
        ex.gendered_words.push(GenderedWordAnnotation { index: 3 });
        assert_eq!(
            gender_swap(&ex, &GenderedWordMap::default_english()).unwrap_err(),
            MitigationError::UnmappedGenderedWord {
                example: 0,
                index: 3,
                word: "pleased".into()
            }
        );
        let mut ex = king();
        ex.pronouns[0].gender = Gender::Female;
        assert!(matches!(
            gender_swap(&ex, &GenderedWordMap::default_english()).unwrap_err(),
            MitigationError::InvalidAnnotation { .. }
        ));
    }

    #[test]
    fn anonymize_names_by_first_appearance() {
        // "Mary thanked John Smith because she liked him . Mary smiled"
        let ex = AnnotatedExample {
            tokens: toks("Mary thanked John Smith because she liked him . Mary smiled"),
            entities: vec![person(0, 1), person(2, 4), person(9, 10)],
            pronouns: vec![
                PronounAnnotation {
                    index: 5,
                    case: PronounCase::Nominative,
                    gender: Gender::Female,
                },
                PronounAnnotation {
                    index: 7,
                    case: PronounCase::Accusative,
                    gender: Gender::Male,
                },
            ],
            gendered_words: vec![],
        };
        let anon = anonymize(&ex);
        assert_eq!(
            anon.tokens.join(" "),
            "[E1] thanked [E2] because she liked him . [E1] smiled"
        );
        // Brute-force walk: each remapped pronoun still points at its word.
        for (before, after) in ex.pronouns.iter().zip(&anon.pronouns) {
            assert_eq!(ex.tokens[before.index], anon.tokens[after.index]);
        }
        let spans: Vec<Span> = anon.entities.iter().map(|e| e.span).collect();
        assert_eq!(spans, vec![Span::new(0, 1), Span::new(2, 3), Span::new(8, 9)]);
        assert!(anon.is_anonymized());
        assert_eq!(anonymize(&anon), anon);
    }

    #[test]
    fn anonymize_without_names_is_identity() {
        assert_eq!(anonymize(&king()), king());
    }

    #[test]
    fn corpus_sizes() {
        let map = GenderedWordMap::default_english();
        let one = vec![king()];
        let un = build_unaugmented_corpus(&one).unwrap();
        assert_eq!(un.len(), 1);
        assert_eq!(un[0].label, "his");
        let aug = build_augmented_corpus(&one, &map).unwrap();
        assert_eq!(aug.len(), 2);
        assert_eq!(aug[1].label, "her");
        assert_eq!(aug[1].tokens[1], "Queen");
        assert!(build_unaugmented_corpus(&[]).unwrap().is_empty());
    }

    #[test]
    fn corpus_requires_anonymization() {
        let ex = AnnotatedExample {
            tokens: toks("Mary said she left"),
            entities: vec![person(0, 1)],
            pronouns: vec![PronounAnnotation {
                index: 2,
                case: PronounCase::Nominative,
                gender: Gender::Female,
            }],
            gendered_words: vec![],
        };
        assert_eq!(
            build_unaugmented_corpus(std::slice::from_ref(&ex)).unwrap_err(),
            MitigationError::NotAnonymized { example: 0 }
        );
        assert_eq!(build_unaugmented_corpus(&[anonymize(&ex)]).unwrap().len(), 1);
    }

    #[test]
    fn jsonl_io() {
        let line = r#"{"tokens":["He","left"],"pronouns":[{"index":0,"case":"Nom","gender":"Male"}]}"#;
        let parsed = read_annotated(&format!("{line}\n\n")).unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].pronouns[0].case, PronounCase::Nominative);
        let err = read_annotated("{not json").unwrap_err();
        assert!(matches!(err, MitigationError::Parse { line: 1, .. }));

        let mut buf = Vec::new();
        let ex = build_unaugmented_corpus(&parsed).unwrap();
        write_training_examples(&mut buf, &ex).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "{\"tokens\":[\"[MASK]\",\"left\"],\"label\":\"he\"}\n"
        );
    }
}
