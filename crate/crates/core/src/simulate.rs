//! Synthetic participants for end-to-end runs without real people.
//!
//! Each simulated participant goes through the same pipeline a real one
//! would: the life-story profile is validated, Future You participants get a
//! generated backstory and a chat with the persona, and Chat participants
//! talk to the generic assistant. Session timestamps come from a stepping
//! clock, so the time bounds are exercised too.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::chat::{ChatConfig, ChatError, ChatSession, Clock, PersonaContext, SteppingClock};
use crate::experiment::{assign_condition, equal_weights, Condition, ExperimentError, ParticipantRecord};
use crate::life_story::{validate_profile, LifeStoryError, LifeStoryProfile, PROFILE_FIELDS};
use crate::llm::ModelBackend;
use crate::measures::{BatteryPhase, ScaleBattery, ScaleSet, LIKERT_MAX, LIKERT_MIN};
use crate::memory::{build_future_memory, MemoryConfig, MemoryError, ProbingSet};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("{flagged} flagged records requested out of {n}")]
    TooManyFlagged { flagged: usize, n: usize },
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    LifeStory(#[from] LifeStoryError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Chat(#[from] ChatError),
}

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub n: usize,
    pub seed: u64,
    /// Records that fail an attention check or report a technical issue.
    pub flagged: usize,
    pub weights: BTreeMap<Condition, f64>,
    /// User messages per chat after the openers.
    pub chat_turns: usize,
    pub memory: MemoryConfig,
    pub chat: ChatConfig,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n: 400,
            seed: 1,
            flagged: 56,
            weights: equal_weights(),
            chat_turns: 6,
            memory: MemoryConfig::default(),
            chat: ChatConfig::default(),
        }
    }
}

const NAMES: [&str; 8] = ["Ada", "Sam", "Noor", "Leo", "Mia", "Kenji", "Rosa", "Tariq"];
const CAREERS: [&str; 6] = [
    "biology teacher",
    "nurse",
    "software engineer",
    "chef",
    "architect",
    "social worker",
];
const PLACES: [&str; 5] = ["Boston", "Lagos", "Osaka", "Lima", "a small town in Ohio"];
const USER_LINES: [&str; 8] = [
    "What do you regret?",
    "Was it hard to get where you are?",
    "What should I focus on this year?",
    "How is the family?",
    "Do you still live near the sea?",
    "What would you tell me about money?",
    "Are you happy?",
    "Thank you, this helped.",
];

fn pick<'a>(rng: &mut ChaCha8Rng, options: &[&'a str]) -> &'a str {
    options[rng.random_range(0..options.len())]
}

fn synthetic_profile(rng: &mut ChaCha8Rng) -> Result<LifeStoryProfile, LifeStoryError> {
    let name = pick(rng, &NAMES);
    let career = pick(rng, &CAREERS);
    let age = rng.random_range(18..=30u32);
    let mut answers: BTreeMap<String, String> = PROFILE_FIELDS
        .iter()
        .map(|f| (f.to_string(), format!("my {} as {name}", f.replace('_', " "))))
        .collect();
    answers.insert("name".into(), name.into());
    answers.insert("age".into(), age.to_string());
    answers.insert("career".into(), career.into());
    answers.insert("place".into(), pick(rng, &PLACES).into());
    answers.insert(
        "professional_accomplish".into(),
        format!("I would like to be a respected {career}"),
    );
    validate_profile(&answers)
}

/// Per-condition shift of the post responses, by item family.
fn effect(condition: Condition, item: &str) -> f64 {
    let negative = matches!(
        item,
        "eac_anxious" | "eac_overwhelmed" | "eac_unmotivated" | "eac_sad"
    );
    let fscq = item.starts_with("fsc_");
    match condition {
        Condition::FutureYou if negative => -0.7,
        Condition::FutureYou if fscq => 0.45,
        Condition::Chat if negative => -0.4,
        Condition::Questionnaire if fscq => 0.2,
        _ => 0.0,
    }
}

fn likert(x: f64) -> u8 {
    x.round().clamp(f64::from(LIKERT_MIN), f64::from(LIKERT_MAX)) as u8
}

fn batteries(
    rng: &mut ChaCha8Rng,
    set: &ScaleSet,
    condition: Condition,
) -> (ScaleBattery, ScaleBattery) {
    let noise = Normal::new(0.0, 0.9).expect("valid normal");
    let trait_level = 4.0 + Normal::new(0.0, 0.8).expect("valid normal").sample(rng);
    let mut pre = ScaleBattery::new(BatteryPhase::Pre);
    let mut post = ScaleBattery::new(BatteryPhase::Post);
    let repeated = set.repeated_item_ids();
    for item in &repeated {
        let latent = trait_level + noise.sample(rng);
        pre.responses.insert(item.to_string(), likert(latent));
        let shifted = latent + effect(condition, item) + 0.6 * noise.sample(rng);
        post.responses.insert(item.to_string(), likert(shifted));
    }
    for item in set.item_ids(BatteryPhase::Post) {
        if !repeated.contains(&item) && !post.responses.contains_key(item) {
            post.responses.insert(item.to_string(), likert(trait_level + noise.sample(rng)));
        }
    }
    for a in &set.attention_checks {
        pre.responses.insert(a.id.clone(), a.expected);
        post.responses.insert(a.id.clone(), a.expected);
    }
    (pre, post)
}

fn run_chat(
    persona: PersonaContext,
    id: &str,
    backend: &dyn ModelBackend,
    clock: &dyn Clock,
    config: &SimulationConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(), SimulationError> {
    let mut session = ChatSession::start(id, persona, backend, clock, &config.chat)?;
    for _ in 0..config.chat_turns {
        session.post_user_message(pick(rng, &USER_LINES), backend, clock, &config.chat)?;
    }
    session.finish(true, &config.chat)?;
    Ok(())
}

/// Generates `config.n` participant records, of which exactly
/// `config.flagged` fail exclusion checks.
pub fn simulate(
    config: &SimulationConfig,
    set: &ScaleSet,
    backend: &dyn ModelBackend,
) -> Result<Vec<ParticipantRecord>, SimulationError> {
    if config.flagged > config.n {
        return Err(SimulationError::TooManyFlagged {
            flagged: config.flagged,
            n: config.n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let flagged: Vec<usize> = {
        let mut v = sample(&mut rng, config.n, config.flagged).into_vec();
        v.sort_unstable();
        v
    };
    let probing = ProbingSet::default();
    let epoch: DateTime<Utc> = Utc.with_ymd_and_hms(2024, 3, 1, 9, 0, 0).unwrap();
    let width = config.n.max(1).to_string().len();
    let mut records = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let participant_id = format!("p{:0width$}", i + 1);
        let condition = assign_condition(&participant_id, &config.weights, config.seed)?;
        let start = epoch + Duration::minutes(45 * i as i64);
        let step_ms = rng.random_range(30_000..=120_000);
        let clock = SteppingClock::new(start, step_ms);
        let started_at = clock.now();
        match condition {
            Condition::FutureYou => {
                let profile = synthetic_profile(&mut rng)?;
                let memory = build_future_memory(&profile, backend, &probing, &config.memory)?;
                let persona = PersonaContext::future_self(memory, None);
                run_chat(persona, &participant_id, backend, &clock, config, &mut rng)?;
            }
            Condition::Chat => {
                run_chat(PersonaContext::assistant(), &participant_id, backend, &clock, config, &mut rng)?;
            }
            Condition::Questionnaire => {
                synthetic_profile(&mut rng)?;
            }
            Condition::Control => {}
        }
        let ended_at = clock.now();
        let (pre, mut post) = batteries(&mut rng, set, condition);
        let mut technical_issue = false;
        if let Ok(pos) = flagged.binary_search(&i) {
            if pos % 2 == 0 {
                if let Some(a) = set.attention_checks.first() {
                    let wrong = if a.expected == LIKERT_MAX { LIKERT_MIN } else { LIKERT_MAX };
                    post.responses.insert(a.id.clone(), wrong);
                } else {
                    technical_issue = true;
                }
            } else {
                technical_issue = true;
            }
        }
        let attention_passed = set.attention_passed(&pre) && set.attention_passed(&post);
        let demographics = BTreeMap::from([
            ("age".to_string(), rng.random_range(18..=30u32).to_string()),
            ("gender".to_string(), pick(&mut rng, &["female", "male", "nonbinary"]).to_string()),
        ]);
        records.push(ParticipantRecord {
            participant_id,
            condition,
            pre,
            post: Some(post),
            attention_passed,
            technical_issue,
            demographics,
            started_at,
            ended_at: Some(ended_at),
        });
    }
    Ok(records)
}
