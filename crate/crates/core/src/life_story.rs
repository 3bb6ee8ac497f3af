//! The two-phase life-story questionnaire and profile validation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Ids of every question, which are also the base-prompt placeholders.
pub const PROFILE_FIELDS: [&str; 15] = [
    "name",
    "age",
    "pronoun_and_sexual_orientation",
    "place",
    "people_in_life",
    "low_point",
    "turning_point",
    "proud",
    "life_project",
    "career",
    "professional_accomplish",
    "financial_accomplish",
    "family_accomplish",
    "where_to_live",
    "daily_life",
];

pub const MIN_AGE: u32 = 18;
/// The persona is fixed at 60, so the participant must be younger.
pub const MAX_AGE: u32 = 59;

const DEFAULT_SCHEMA: &str = include_str!("../assets/life_story.toml");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LifeStoryError {
    #[error("missing answer for `{0}`")]
    MissingAnswer(String),
    #[error("answer for `{id}` must be at least {min_length} characters")]
    TooShort { id: String, min_length: usize },
    #[error("age `{0}` is not an integer between 18 and 59")]
    InvalidAge(String),
    #[error("invalid question schema: {0}")]
    Schema(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Present,
    Future,
}

fn default_true() -> bool {
    true
}

fn default_min_length() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSpec {
    pub id: String,
    pub phase: Phase,
    #[serde(rename = "prompt")]
    pub prompt_text: String,
    #[serde(rename = "example")]
    pub example_answer: String,
    #[serde(default = "default_true")]
    pub required: bool,
    #[serde(default = "default_min_length")]
    pub min_length: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSchema {
    pub version: u32,
    pub questions: Vec<QuestionSpec>,
}

impl Default for QuestionSchema {
    fn default() -> Self {
        Self::from_toml(DEFAULT_SCHEMA).expect("bundled life-story schema is valid")
    }
}

impl QuestionSchema {
    pub fn from_toml(text: &str) -> Result<Self, LifeStoryError> {
        let schema: Self =
            toml::from_str(text).map_err(|e| LifeStoryError::Schema(e.to_string()))?;
        schema.check()?;
        Ok(schema)
    }

    fn check(&self) -> Result<(), LifeStoryError> {
        if self.version != 1 {
            return Err(LifeStoryError::Schema(format!("unsupported version {}", self.version)));
        }
        let mut seen = BTreeSet::new();
        for q in &self.questions {
            if !seen.insert(q.id.as_str()) {
                return Err(LifeStoryError::Schema(format!("duplicate id `{}`", q.id)));
            }
            if !PROFILE_FIELDS.contains(&q.id.as_str()) {
                return Err(LifeStoryError::Schema(format!("unknown id `{}`", q.id)));
            }
            if !q.required {
                return Err(LifeStoryError::Schema(format!(
                    "`{}` feeds the persona prompt and must be required",
                    q.id
                )));
            }
        }
        if let Some(missing) = PROFILE_FIELDS.iter().find(|f| !seen.contains(*f)) {
            return Err(LifeStoryError::Schema(format!("no question for `{missing}`")));
        }
        Ok(())
    }

    /// Ordered questions for one phase.
    pub fn phase(&self, phase: Phase) -> Vec<QuestionSpec> {
        self.questions.iter().filter(|q| q.phase == phase).cloned().collect()
    }

    /// Validates raw answers keyed by question id into a profile.
    pub fn validate(&self, raw: &BTreeMap<String, String>) -> Result<LifeStoryProfile, LifeStoryError> {
        let mut clean = BTreeMap::new();
        for q in &self.questions {
            let answer = raw.get(&q.id).map(|s| s.trim()).unwrap_or_default();
            if answer.is_empty() {
                return Err(LifeStoryError::MissingAnswer(q.id.clone()));
            }
            if answer.chars().count() < q.min_length {
                return Err(LifeStoryError::TooShort {
                    id: q.id.clone(),
                    min_length: q.min_length,
                });
            }
            clean.insert(q.id.as_str(), answer.to_string());
        }
        let age_raw = &clean["age"];
        let age = age_raw
            .parse::<u32>()
            .ok()
            .filter(|a| (MIN_AGE..=MAX_AGE).contains(a))
            .ok_or_else(|| LifeStoryError::InvalidAge(age_raw.clone()))?;
        let take = |id: &str| clean[id].clone();
        Ok(LifeStoryProfile {
            name: take("name"),
            age,
            pronoun_and_sexual_orientation: take("pronoun_and_sexual_orientation"),
            place: take("place"),
            people_in_life: take("people_in_life"),
            low_point: take("low_point"),
            turning_point: take("turning_point"),
            proud: take("proud"),
            life_project: take("life_project"),
            career: take("career"),
            professional_accomplish: take("professional_accomplish"),
            financial_accomplish: take("financial_accomplish"),
            family_accomplish: take("family_accomplish"),
            where_to_live: take("where_to_live"),
            daily_life: take("daily_life"),
        })
    }
}

/// Ordered questions for `phase` from the bundled schema.
pub fn question_schema(phase: Phase) -> Vec<QuestionSpec> {
    QuestionSchema::default().phase(phase)
}

/// Validates raw answers against the bundled schema.
pub fn validate_profile(raw: &BTreeMap<String, String>) -> Result<LifeStoryProfile, LifeStoryError> {
    QuestionSchema::default().validate(raw)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LifeStoryProfile {
    pub name: String,
    pub age: u32,
    pub pronoun_and_sexual_orientation: String,
    pub place: String,
    pub people_in_life: String,
    pub low_point: String,
    pub turning_point: String,
    pub proud: String,
    pub life_project: String,
    pub career: String,
    pub professional_accomplish: String,
    pub financial_accomplish: String,
    pub family_accomplish: String,
    pub where_to_live: String,
    pub daily_life: String,
}

impl LifeStoryProfile {
    /// Placeholder name to value, covering exactly [`PROFILE_FIELDS`].
    pub fn bindings(&self) -> BTreeMap<String, String> {
        let values = [
            self.name.clone(),
            self.age.to_string(),
            self.pronoun_and_sexual_orientation.clone(),
            self.place.clone(),
            self.people_in_life.clone(),
            self.low_point.clone(),
            self.turning_point.clone(),
            self.proud.clone(),
            self.life_project.clone(),
            self.career.clone(),
            self.professional_accomplish.clone(),
            self.financial_accomplish.clone(),
            self.family_accomplish.clone(),
            self.where_to_live.clone(),
            self.daily_life.clone(),
        ];
        PROFILE_FIELDS
            .iter()
            .map(|k| k.to_string())
            .zip(values)
            .collect()
    }

    /// The raw answer map that validates back into this profile.
    pub fn to_answers(&self) -> BTreeMap<String, String> {
        self.bindings()
    }
}
