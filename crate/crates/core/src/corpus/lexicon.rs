use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{CorpusError, Gender, PronounCase};

/// Occupations and the gender they are stereotyped with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfessionLexicon {
    entries: BTreeMap<String, Gender>,
    max_words: usize,
}

fn normalize_phrase(phrase: &str) -> String {
    phrase
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

impl ProfessionLexicon {
    /// Parses `profession<TAB>m|f` lines. Blank lines and `#` comments are
    /// ignored.
    pub fn from_tsv(contents: &str) -> Result<Self, CorpusError> {
        let mut entries = BTreeMap::new();
        for (offset, raw) in contents.lines().enumerate() {
            let line = offset + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut fields = trimmed.split('\t');
            let (Some(name), Some(tag), None) = (fields.next(), fields.next(), fields.next())
            else {
                return Err(CorpusError::MalformedLexiconLine { line });
            };
            let name = normalize_phrase(name);
            if name.is_empty() {
                return Err(CorpusError::MalformedLexiconLine { line });
            }
            let gender = match tag.trim() {
                "m" | "M" => Gender::Male,
                "f" | "F" => Gender::Female,
                other => {
                    return Err(CorpusError::BadGenderTag {
                        line,
                        tag: other.to_string(),
                    })
                }
            };
            if entries.insert(name.clone(), gender).is_some() {
                return Err(CorpusError::DuplicateProfession(name));
            }
        }
        Self::from_entries(entries)
    }

    pub fn from_entries(entries: BTreeMap<String, Gender>) -> Result<Self, CorpusError> {
        if entries.is_empty() {
            return Err(CorpusError::EmptyLexicon);
        }
        let entries: BTreeMap<String, Gender> = entries
            .into_iter()
            .map(|(k, v)| (normalize_phrase(&k), v))
            .collect();
        let max_words = entries
            .keys()
            .map(|k| k.split(' ').count())
            .max()
            .unwrap_or(1);
        Ok(ProfessionLexicon { entries, max_words })
    }

    /// The 40 WinoBias occupations.
    pub fn winobias_default() -> Self {
        Self::from_tsv(include_str!("../../data/professions.tsv")).expect("bundled lexicon")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Gender)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Case-insensitive lookup of a noun phrase. A leading determiner is
    /// ignored; when the whole phrase is unknown the head noun (last word) is
    /// tried.
    pub fn get(&self, phrase: &str) -> Option<Gender> {
        let normalized = normalize_phrase(phrase);
        let words: Vec<&str> = normalized.split(' ').collect();
        let body = match words.first() {
            Some(&("the" | "a" | "an")) if words.len() > 1 => &words[1..],
            _ => &words[..],
        };
        self.entries
            .get(&body.join(" "))
            .or_else(|| body.last().and_then(|head| self.entries.get(*head)))
            .copied()
    }

    /// Longest entry matching a prefix of `tokens`, as `(word count, gender)`.
    pub fn longest_match(&self, tokens: &[String]) -> Option<(usize, Gender)> {
        let upper = self.max_words.min(tokens.len());
        (1..=upper).rev().find_map(|len| {
            let key = normalize_phrase(&tokens[..len].join(" "));
            self.entries.get(&key).map(|&g| (len, g))
        })
    }
}

/// One male/female correspondence. `case` is set for pronouns, where `her`
/// needs it to be unambiguous.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordPair {
    pub male: String,
    pub female: String,
    pub case: Option<PronounCase>,
}

/// Bidirectional map between male and female forms of gendered words.
#[derive(Debug, Clone, Default)]
pub struct GenderedWordMap {
    pairs: Vec<WordPair>,
    to_female: HashMap<(String, Option<PronounCase>), String>,
    to_male: HashMap<(String, Option<PronounCase>), String>,
}

const PRONOUN_PAIRS: [(&str, &str, PronounCase); 3] = [
    ("he", "she", PronounCase::Nominative),
    ("him", "her", PronounCase::Accusative),
    ("his", "her", PronounCase::Possessive),
];

/// Re-cases `replacement` to follow `template`: all caps, capitalized, or as
/// given.
pub fn match_case(template: &str, replacement: &str) -> String {
    let mut chars = template.chars();
    let Some(first) = chars.next() else {
        return replacement.to_string();
    };
    let has_more_letters = template.chars().filter(|c| c.is_alphabetic()).count() > 1;
    if has_more_letters && template.chars().all(|c| !c.is_lowercase()) {
        replacement.to_uppercase()
    } else if first.is_uppercase() {
        let mut out = String::with_capacity(replacement.len());
        let mut rc = replacement.chars();
        if let Some(f) = rc.next() {
            out.extend(f.to_uppercase());
        }
        out.extend(rc);
        out
    } else {
        replacement.to_string()
    }
}

impl GenderedWordMap {
    /// The three case-disambiguated pronoun pairs only.
    pub fn pronouns() -> Self {
        let mut map = GenderedWordMap::default();
        for (m, f, case) in PRONOUN_PAIRS {
            map.insert(m, f, Some(case)).expect("pronoun pairs are consistent");
        }
        map
    }

    /// Pronoun pairs plus a general list of gendered nouns.
    pub fn default_english() -> Self {
        Self::from_tsv(include_str!("../../data/gendered_words.tsv")).expect("bundled word map")
    }

    /// Parses `male<TAB>female<TAB>case` lines on top of the pronoun pairs.
    /// The case column is `nom`, `acc`, `poss`, or `-` for ordinary words.
    pub fn from_tsv(contents: &str) -> Result<Self, CorpusError> {
        let mut map = Self::pronouns();
        for (offset, raw) in contents.lines().enumerate() {
            let line = offset + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split('\t').map(str::trim).collect();
            let [male, female, tag] = fields[..] else {
                return Err(CorpusError::MalformedMapLine { line });
            };
            if male.is_empty() || female.is_empty() {
                return Err(CorpusError::MalformedMapLine { line });
            }
            let case = match tag {
                "-" => None,
                other => Some(PronounCase::from_tag(other).ok_or_else(|| {
                    CorpusError::BadCaseTag {
                        line,
                        tag: other.to_string(),
                    }
                })?),
            };
            map.insert(male, female, case)?;
        }
        Ok(map)
    }

    fn insert(
        &mut self,
        male: &str,
        female: &str,
        case: Option<PronounCase>,
    ) -> Result<(), CorpusError> {
        let male = male.to_lowercase();
        let female = female.to_lowercase();
        let conflict = |form: &str| CorpusError::MapConflict {
            form: form.to_string(),
        };
        match self.to_female.get(&(male.clone(), case)) {
            Some(existing) if *existing == female => return Ok(()),
            Some(_) => return Err(conflict(&male)),
            None => {}
        }
        if self.to_male.contains_key(&(female.clone(), case)) {
            return Err(conflict(&female));
        }
        // A word that is male in one pair and female in another cannot be
        // swapped without knowing which reading is meant.
        if self.to_male.contains_key(&(male.clone(), case))
            || self.to_female.contains_key(&(female.clone(), case))
        {
            return Err(conflict(if self.to_male.contains_key(&(male.clone(), case)) {
                &male
            } else {
                &female
            }));
        }
        self.to_female.insert((male.clone(), case), female.clone());
        self.to_male.insert((female.clone(), case), male.clone());
        self.pairs.push(WordPair { male, female, case });
        Ok(())
    }

    pub fn pairs(&self) -> &[WordPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn swap_keyed(&self, word: &str, case: Option<PronounCase>) -> Option<String> {
        let key = (word.to_lowercase(), case);
        self.to_female
            .get(&key)
            .or_else(|| self.to_male.get(&key))
            .map(|target| match_case(word, target))
    }

    /// Opposite-gender form of a pronoun in the given case.
    pub fn swap_pronoun(&self, word: &str, case: PronounCase) -> Option<String> {
        self.swap_keyed(word, Some(case))
    }

    /// Opposite-gender form of an ordinary gendered word.
    pub fn swap_word(&self, word: &str) -> Option<String> {
        self.swap_keyed(word, None)
    }

    /// Gender of `word` as a form in the given case, if mapped.
    pub fn gender_of(&self, word: &str, case: Option<PronounCase>) -> Option<Gender> {
        let key = (word.to_lowercase(), case);
        if self.to_female.contains_key(&key) {
            Some(Gender::Male)
        } else if self.to_male.contains_key(&key) {
            Some(Gender::Female)
        } else {
            None
        }
    }
}
