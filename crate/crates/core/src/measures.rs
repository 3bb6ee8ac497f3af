//! Likert scale definitions, composite scoring and pre/post deltas.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LIKERT_MIN: u8 = 1;
pub const LIKERT_MAX: u8 = 7;

const DEFAULT_SCALES: &str = include_str!("../assets/scales.toml");

pub const FSCQ_SUBSCALES: [&str; 3] = ["similarity", "vividness", "positivity"];
const EMOTION_TAGS: [&str; 2] = ["positive", "negative"];
const NAMED_EMOTIONS: [&str; 3] = ["eac_anxious", "eac_overwhelmed", "eac_unmotivated"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MeasuresError {
    #[error("battery is missing responses for {}", .0.join(", "))]
    IncompleteBattery(Vec<String>),
    #[error("response {value} to `{item}` is outside 1..7")]
    OutOfRange { item: String, value: i64 },
    #[error("unknown scale `{0}`")]
    UnknownScale(String),
    #[error("scale `{scale}` has no items tagged `{tag}`")]
    UnknownSubscale { scale: String, tag: String },
    #[error("invalid scale definitions: {0}")]
    Schema(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleItem {
    pub id: String,
    #[serde(rename = "prompt")]
    pub prompt_text: String,
    #[serde(default, rename = "reverse")]
    pub reverse_scored: bool,
    /// Subscale or emotion-valence tag.
    #[serde(default, rename = "tag")]
    pub subscale: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleDefinition {
    #[serde(rename = "id")]
    pub scale_id: String,
    pub label: String,
    pub items: Vec<ScaleItem>,
    /// Asked only after the intervention.
    #[serde(default)]
    pub post_only: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionCheck {
    pub id: String,
    pub prompt: String,
    pub expected: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleSet {
    pub version: u32,
    pub scales: Vec<ScaleDefinition>,
    #[serde(default)]
    pub attention_checks: Vec<AttentionCheck>,
}

impl Default for ScaleSet {
    fn default() -> Self {
        Self::from_toml(DEFAULT_SCALES).expect("bundled scale definitions are valid")
    }
}

impl ScaleSet {
    pub fn from_toml(text: &str) -> Result<Self, MeasuresError> {
        let set: Self = toml::from_str(text).map_err(|e| MeasuresError::Schema(e.to_string()))?;
        set.check()?;
        Ok(set)
    }

    fn check(&self) -> Result<(), MeasuresError> {
        let bad = |msg: String| Err(MeasuresError::Schema(msg));
        if self.version != 1 {
            return bad(format!("unsupported version {}", self.version));
        }
        let mut ids = BTreeSet::new();
        let all_items = self
            .scales
            .iter()
            .flat_map(|s| s.items.iter().map(|i| i.id.as_str()))
            .chain(self.attention_checks.iter().map(|a| a.id.as_str()));
        for id in all_items {
            if !ids.insert(id) {
                return bad(format!("duplicate item id `{id}`"));
            }
        }
        for a in &self.attention_checks {
            if !(LIKERT_MIN..=LIKERT_MAX).contains(&a.expected) {
                return bad(format!("attention check `{}` expects {}", a.id, a.expected));
            }
        }
        for s in &self.scales {
            if s.items.is_empty() {
                return bad(format!("scale `{}` has no items", s.scale_id));
            }
        }
        for m in Measure::ALL {
            let (scale, tags): (&str, &[&str]) = match m {
                Measure::PositiveEmotion | Measure::NegativeEmotion => ("eac_emotion", &EMOTION_TAGS),
                Measure::FscqSimilarity | Measure::FscqVividness | Measure::FscqPositivity => {
                    ("fscq", &FSCQ_SUBSCALES)
                }
                _ => (m.source().0, &[]),
            };
            let def = self.scale(scale)?;
            if !tags.is_empty() {
                for item in &def.items {
                    match item.subscale.as_deref() {
                        Some(t) if tags.contains(&t) => {}
                        other => return bad(format!("item `{}` has tag {other:?}", item.id)),
                    }
                }
            }
            if let (_, Source::Subscale(tag)) = m.source() {
                if !def.items.iter().any(|i| i.subscale.as_deref() == Some(tag)) {
                    return bad(format!("scale `{scale}` has no `{tag}` items"));
                }
            }
        }
        let emotion = self.scale("eac_emotion")?;
        for named in NAMED_EMOTIONS {
            match emotion.items.iter().find(|i| i.id == named) {
                Some(i) if i.subscale.as_deref() == Some("negative") && !i.reverse_scored => {}
                _ => return bad(format!("`{named}` must be a plain negative emotion item")),
            }
        }
        Ok(())
    }

    pub fn scale(&self, scale_id: &str) -> Result<&ScaleDefinition, MeasuresError> {
        self.scales
            .iter()
            .find(|s| s.scale_id == scale_id)
            .ok_or_else(|| MeasuresError::UnknownScale(scale_id.to_string()))
    }

    /// Item ids a complete battery answers, attention checks included.
    pub fn item_ids(&self, phase: BatteryPhase) -> Vec<&str> {
        self.scales
            .iter()
            .filter(|s| phase == BatteryPhase::Post || !s.post_only)
            .flat_map(|s| s.items.iter().map(|i| i.id.as_str()))
            .chain(self.attention_checks.iter().map(|a| a.id.as_str()))
            .collect()
    }

    /// Item ids of the scales measured both before and after.
    pub fn repeated_item_ids(&self) -> Vec<&str> {
        self.scales
            .iter()
            .filter(|s| !s.post_only)
            .flat_map(|s| s.items.iter().map(|i| i.id.as_str()))
            .collect()
    }

    /// True when every attention item was answered as instructed.
    pub fn attention_passed(&self, battery: &ScaleBattery) -> bool {
        self.attention_checks
            .iter()
            .all(|a| battery.responses.get(&a.id) == Some(&a.expected))
    }

    /// Checks that every item of `phase` is answered within range.
    pub fn validate(&self, battery: &ScaleBattery) -> Result<(), MeasuresError> {
        check_range(battery)?;
        let missing: Vec<String> = self
            .item_ids(battery.phase)
            .into_iter()
            .filter(|id| !battery.responses.contains_key(*id))
            .map(str::to_string)
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(MeasuresError::IncompleteBattery(missing))
        }
    }

    pub fn measure_score(&self, battery: &ScaleBattery, measure: Measure) -> Result<f64, MeasuresError> {
        match measure.source() {
            (scale, Source::Whole) => score_scale(battery, self.scale(scale)?, None),
            (scale, Source::Subscale(tag)) => score_scale(battery, self.scale(scale)?, Some(tag)),
            (_, Source::Item(item)) => item_value(battery, item, false),
            (scale, Source::SubscaleMean) => {
                let def = self.scale(scale)?;
                let mut total = 0.0;
                for tag in FSCQ_SUBSCALES {
                    total += score_scale(battery, def, Some(tag))?;
                }
                Ok(total / FSCQ_SUBSCALES.len() as f64)
            }
        }
    }

    /// Subscale tag to item prompts for the future self-continuity scale.
    pub fn fscq_item_texts(&self) -> BTreeMap<String, Vec<String>> {
        let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
        if let Ok(def) = self.scale("fscq") {
            for item in &def.items {
                if let Some(tag) = &item.subscale {
                    out.entry(tag.clone()).or_default().push(item.prompt_text.clone());
                }
            }
        }
        out
    }
}

/// [`ScaleSet::fscq_item_texts`] for the bundled scales.
pub fn fscq_item_texts() -> BTreeMap<String, Vec<String>> {
    ScaleSet::default().fscq_item_texts()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatteryPhase {
    Pre,
    Post,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleBattery {
    pub phase: BatteryPhase,
    pub responses: BTreeMap<String, u8>,
}

impl ScaleBattery {
    pub fn new(phase: BatteryPhase) -> Self {
        Self {
            phase,
            responses: BTreeMap::new(),
        }
    }

    pub fn with(mut self, item: &str, value: u8) -> Self {
        self.responses.insert(item.to_string(), value);
        self
    }
}

fn check_range(battery: &ScaleBattery) -> Result<(), MeasuresError> {
    match battery
        .responses
        .iter()
        .find(|(_, v)| !(LIKERT_MIN..=LIKERT_MAX).contains(*v))
    {
        Some((item, v)) => Err(MeasuresError::OutOfRange {
            item: item.clone(),
            value: i64::from(*v),
        }),
        None => Ok(()),
    }
}

fn item_value(battery: &ScaleBattery, item: &str, reverse: bool) -> Result<f64, MeasuresError> {
    let v = *battery
        .responses
        .get(item)
        .ok_or_else(|| MeasuresError::IncompleteBattery(vec![item.to_string()]))?;
    if !(LIKERT_MIN..=LIKERT_MAX).contains(&v) {
        return Err(MeasuresError::OutOfRange {
            item: item.to_string(),
            value: i64::from(v),
        });
    }
    let v = if reverse { LIKERT_MIN + LIKERT_MAX - v } else { v };
    Ok(f64::from(v))
}

/// Mean of the (reverse-corrected) item responses, optionally restricted to
/// one subscale tag.
pub fn score_scale(
    battery: &ScaleBattery,
    def: &ScaleDefinition,
    subscale: Option<&str>,
) -> Result<f64, MeasuresError> {
    let items: Vec<&ScaleItem> = def
        .items
        .iter()
        .filter(|i| subscale.is_none() || i.subscale.as_deref() == subscale)
        .collect();
    if items.is_empty() {
        return Err(MeasuresError::UnknownSubscale {
            scale: def.scale_id.clone(),
            tag: subscale.unwrap_or_default().to_string(),
        });
    }
    let missing: Vec<String> = items
        .iter()
        .filter(|i| !battery.responses.contains_key(&i.id))
        .map(|i| i.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(MeasuresError::IncompleteBattery(missing));
    }
    let mut total = 0.0;
    for item in &items {
        total += item_value(battery, &item.id, item.reverse_scored)?;
    }
    Ok(total / items.len() as f64)
}

enum Source {
    Whole,
    Subscale(&'static str),
    Item(&'static str),
    SubscaleMean,
}

/// The fifteen reported outcome measures, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    PositiveEmotion,
    NegativeEmotion,
    Anxious,
    Overwhelmed,
    Unmotivated,
    Agency,
    Optimism,
    FscqSimilarity,
    FscqVividness,
    FscqPositivity,
    FscOverall,
    FutureConsideration,
    SelfEsteem,
    SelfReflection,
    Insight,
}

impl Measure {
    pub const ALL: [Measure; 15] = [
        Measure::PositiveEmotion,
        Measure::NegativeEmotion,
        Measure::Anxious,
        Measure::Overwhelmed,
        Measure::Unmotivated,
        Measure::Agency,
        Measure::Optimism,
        Measure::FscqSimilarity,
        Measure::FscqVividness,
        Measure::FscqPositivity,
        Measure::FscOverall,
        Measure::FutureConsideration,
        Measure::SelfEsteem,
        Measure::SelfReflection,
        Measure::Insight,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Measure::PositiveEmotion => "positive_emotion",
            Measure::NegativeEmotion => "negative_emotion",
            Measure::Anxious => "anxious",
            Measure::Overwhelmed => "overwhelmed",
            Measure::Unmotivated => "unmotivated",
            Measure::Agency => "agency",
            Measure::Optimism => "optimism",
            Measure::FscqSimilarity => "fscq_similarity",
            Measure::FscqVividness => "fscq_vividness",
            Measure::FscqPositivity => "fscq_positivity",
            Measure::FscOverall => "fsc_overall",
            Measure::FutureConsideration => "future_consideration",
            Measure::SelfEsteem => "self_esteem",
            Measure::SelfReflection => "self_reflection",
            Measure::Insight => "insight",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.id() == id)
    }

    /// Row label of the report table.
    pub fn label(self) -> &'static str {
        match self {
            Measure::PositiveEmotion => "Δ Positive Emotion",
            Measure::NegativeEmotion => "Δ Negative Emotion",
            Measure::Anxious => "Δ Anxious",
            Measure::Overwhelmed => "Δ Overwhelmed",
            Measure::Unmotivated => "Δ Unmotivated",
            Measure::Agency => "Δ Agency",
            Measure::Optimism => "Δ Optimism",
            Measure::FscqSimilarity => "Δ FSCQ 1 (Similarity)",
            Measure::FscqVividness => "Δ FSCQ 2 (Vividness)",
            Measure::FscqPositivity => "Δ FSCQ 3 (Positivity)",
            Measure::FscOverall => "Δ Future Self-Continuity",
            Measure::FutureConsideration => "Δ Future Consideration",
            Measure::SelfEsteem => "Δ Self-Esteem",
            Measure::SelfReflection => "Δ Self-Reflection",
            Measure::Insight => "Δ Insight",
        }
    }

    fn source(self) -> (&'static str, Source) {
        match self {
            Measure::PositiveEmotion => ("eac_emotion", Source::Subscale("positive")),
            Measure::NegativeEmotion => ("eac_emotion", Source::Subscale("negative")),
            Measure::Anxious => ("eac_emotion", Source::Item("eac_anxious")),
            Measure::Overwhelmed => ("eac_emotion", Source::Item("eac_overwhelmed")),
            Measure::Unmotivated => ("eac_emotion", Source::Item("eac_unmotivated")),
            Measure::Agency => ("hope_agency", Source::Whole),
            Measure::Optimism => ("state_optimism", Source::Whole),
            Measure::FscqSimilarity => ("fscq", Source::Subscale("similarity")),
            Measure::FscqVividness => ("fscq", Source::Subscale("vividness")),
            Measure::FscqPositivity => ("fscq", Source::Subscale("positivity")),
            Measure::FscOverall => ("fscq", Source::SubscaleMean),
            Measure::FutureConsideration => ("cfc", Source::Whole),
            Measure::SelfEsteem => ("rosenberg_self_esteem", Source::Whole),
            Measure::SelfReflection => ("sris_reflection", Source::Whole),
            Measure::Insight => ("sris_insight", Source::Whole),
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Post minus pre for every measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaScores {
    pub per_measure: BTreeMap<Measure, f64>,
}

impl DeltaScores {
    pub fn get(&self, m: Measure) -> f64 {
        self.per_measure[&m]
    }

    /// Builds from a complete measure map.
    pub fn from_map(per_measure: BTreeMap<Measure, f64>) -> Result<Self, MeasuresError> {
        let missing: Vec<String> = Measure::ALL
            .iter()
            .filter(|m| !per_measure.contains_key(m))
            .map(|m| m.id().to_string())
            .collect();
        if missing.is_empty() {
            Ok(Self { per_measure })
        } else {
            Err(MeasuresError::IncompleteBattery(missing))
        }
    }
}

pub fn delta(pre: &ScaleBattery, post: &ScaleBattery, set: &ScaleSet) -> Result<DeltaScores, MeasuresError> {
    check_range(pre)?;
    check_range(post)?;
    let mut per_measure = BTreeMap::new();
    for m in Measure::ALL {
        per_measure.insert(m, set.measure_score(post, m)? - set.measure_score(pre, m)?);
    }
    Ok(DeltaScores { per_measure })
}
