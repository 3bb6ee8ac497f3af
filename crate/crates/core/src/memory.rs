//! Future-memory synthesis: the base interview prompt, per-topic probing
//! prompts, concurrent fragment generation and backstory assembly.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::life_story::LifeStoryProfile;
use crate::llm::{ChatTurn, CompletionRequest, GatewayError, ModelBackend};
use crate::template::Template;

/// The persona's interview template; placeholders are life-story ids.
pub const BASE_TEMPLATE: &str = "The following is the interview of {name}, who is a successful {career}. \
{name}'s pronoun and sexual orientation are {pronoun_and_sexual_orientation}. \
{name} is from {place}. \
The most important people in {name}'s life are: “{people_in_life}”. \
Right now, {name} is 60 years old and can share insightful stories and experiences, give definitive advice and life lessons as {name} reflects on life. \
In the past, the most important low point in {name}'s life was “{low_point}”. \
{name} also experienced a turning point in their life when “{turning_point}”. \
{name} has dedicated their life to a significant life project called “{life_project}”. \
{name} is also proud of great things that the young {name} has done: “{proud}”. \
In the past, when {name} was {age} years old, {name} had many dreams and hopes for the future. \
{age}-year-old {name} has said “{professional_accomplish}, {financial_accomplish}, and {family_accomplish}”. \
Right now, {name} is living in {where_to_live} and having the following daily life: {daily_life}.";

pub const BASE_PREFIX: &str = "The following is the interview of ";

const DEFAULT_PROBING: &str = include_str!("../assets/probing.toml");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MemoryError {
    #[error("unknown memory topic `{0}`")]
    UnknownTopic(String),
    #[error("backend failed for topic `{topic}`: {source}")]
    Backend {
        topic: String,
        #[source]
        source: GatewayError,
    },
    #[error("no memory fragments to assemble")]
    EmptyFragments,
    #[error("invalid fragments: {0}")]
    InvalidFragments(String),
    #[error("invalid probing config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasePrompt {
    pub text: String,
    pub placeholder_bindings: BTreeMap<String, String>,
}

/// Substitutes every profile answer into [`BASE_TEMPLATE`].
pub fn render_base_prompt(profile: &LifeStoryProfile) -> BasePrompt {
    let bindings = profile.bindings();
    let text = Template::parse(BASE_TEMPLATE)
        .and_then(|t| t.render(&bindings))
        .expect("profile binds every base-template placeholder");
    BasePrompt {
        text,
        placeholder_bindings: bindings,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct TopicSpec {
    id: String,
    prompts: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
struct ProbingFile {
    version: u32,
    topics: Vec<TopicSpec>,
}

/// Ordered topics with their probing prompt templates.
#[derive(Debug, Clone)]
pub struct ProbingSet {
    topics: Vec<(String, Vec<Template>)>,
}

impl Default for ProbingSet {
    fn default() -> Self {
        Self::from_toml(DEFAULT_PROBING).expect("bundled probing prompts are valid")
    }
}

impl ProbingSet {
    pub fn from_toml(text: &str) -> Result<Self, MemoryError> {
        let file: ProbingFile = toml::from_str(text).map_err(|e| MemoryError::Config(e.to_string()))?;
        if file.version != 1 {
            return Err(MemoryError::Config(format!("unsupported version {}", file.version)));
        }
        let known = crate::life_story::PROFILE_FIELDS;
        let mut topics: Vec<(String, Vec<Template>)> = Vec::new();
        for spec in file.topics {
            if topics.iter().any(|(id, _)| *id == spec.id) {
                return Err(MemoryError::Config(format!("duplicate topic `{}`", spec.id)));
            }
            if spec.prompts.is_empty() {
                return Err(MemoryError::Config(format!("topic `{}` has no prompts", spec.id)));
            }
            let mut templates = Vec::new();
            for p in &spec.prompts {
                let t = Template::parse(p).map_err(|e| MemoryError::Config(e.to_string()))?;
                if let Some(bad) = t.placeholders().into_iter().find(|p| !known.contains(p)) {
                    return Err(MemoryError::Config(format!("unknown placeholder `{bad}`")));
                }
                templates.push(t);
            }
            topics.push((spec.id, templates));
        }
        if topics.is_empty() {
            return Err(MemoryError::Config("no topics".into()));
        }
        Ok(Self { topics })
    }

    pub fn topic_ids(&self) -> impl Iterator<Item = &str> {
        self.topics.iter().map(|(id, _)| id.as_str())
    }

    /// Rendered probing prompts for one topic.
    pub fn probing_questions(
        &self,
        topic_id: &str,
        profile: &LifeStoryProfile,
    ) -> Result<Vec<String>, MemoryError> {
        let (_, templates) = self
            .topics
            .iter()
            .find(|(id, _)| id == topic_id)
            .ok_or_else(|| MemoryError::UnknownTopic(topic_id.to_string()))?;
        let bindings = profile.bindings();
        Ok(templates
            .iter()
            .map(|t| t.render(&bindings).expect("placeholders checked at load"))
            .collect())
    }
}

/// Probing prompts for `topic_id` from the bundled topic set.
pub fn probing_questions(topic_id: &str, profile: &LifeStoryProfile) -> Result<Vec<String>, MemoryError> {
    ProbingSet::default().probing_questions(topic_id, profile)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryFragment {
    pub topic_id: String,
    pub probing_prompt: String,
    pub generated_text: String,
    pub order_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryConfig {
    /// Requests in flight at once.
    pub fanout: usize,
    /// Extra attempts per fragment after the first failure.
    pub retries: u32,
    /// Maximum characters of the assembled backstory.
    pub context_budget_chars: usize,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            fanout: 4,
            retries: 2,
            context_budget_chars: 6000,
            temperature: 0.9,
            max_output_tokens: 400,
        }
    }
}

pub const FRAGMENT_DELIMITER: &str = "\n\n";

/// Generates one fragment per (topic, probing prompt).
///
/// Requests run concurrently up to `config.fanout`; `order_index` follows
/// the topic order regardless of completion order. Any fragment that still
/// fails after `config.retries` extra attempts fails the whole call.
pub fn generate_fragments(
    profile: &LifeStoryProfile,
    backend: &dyn ModelBackend,
    probing: &ProbingSet,
    config: &MemoryConfig,
) -> Result<Vec<MemoryFragment>, MemoryError> {
    let base = render_base_prompt(profile);
    let mut jobs = Vec::new();
    for topic in probing.topic_ids() {
        for prompt in probing.probing_questions(topic, profile)? {
            jobs.push((topic.to_string(), prompt));
        }
    }

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<String, GatewayError>>>> = Mutex::new(vec![None; jobs.len()]);
    let workers = config.fanout.clamp(1, jobs.len().max(1));
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((_, prompt)) = jobs.get(i) else { break };
                let outcome = generate_one(&base.text, prompt, backend, config);
                let failed = outcome.is_err();
                slots.lock().expect("fragment slots poisoned")[i] = Some(outcome);
                if failed {
                    // stop handing out work; the result is discarded anyway
                    next.store(jobs.len(), Ordering::SeqCst);
                }
            });
        }
    });

    let slots = slots.into_inner().expect("fragment slots poisoned");
    let mut fragments = Vec::with_capacity(jobs.len());
    for (i, ((topic, prompt), slot)) in jobs.into_iter().zip(slots).enumerate() {
        // work is handed out in index order, so a failure precedes any cancelled slot
        match slot {
            Some(Ok(text)) => fragments.push(MemoryFragment {
                topic_id: topic,
                probing_prompt: prompt,
                generated_text: text,
                order_index: i,
            }),
            Some(Err(source)) => return Err(MemoryError::Backend { topic, source }),
            None => {
                return Err(MemoryError::Backend {
                    topic,
                    source: GatewayError::InvalidRequest("cancelled after another topic failed".into()),
                })
            }
        }
    }
    Ok(fragments)
}

fn generate_one(
    context: &str,
    prompt: &str,
    backend: &dyn ModelBackend,
    config: &MemoryConfig,
) -> Result<String, GatewayError> {
    let request = CompletionRequest::new(
        context,
        vec![ChatTurn::user(prompt)],
        config.temperature,
        config.max_output_tokens,
    )?;
    let mut last = None;
    for attempt in 0..=config.retries {
        match backend.complete(&request) {
            Ok(r) if !r.text.trim().is_empty() => return Ok(r.text.trim().to_string()),
            Ok(_) => {
                last = Some(GatewayError::MalformedResponse {
                    attempts: attempt + 1,
                    detail: "empty memory text".into(),
                })
            }
            Err(e) => last = Some(e),
        }
        log::warn!("memory fragment attempt {} failed", attempt + 1);
    }
    Err(last.expect("at least one attempt"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FutureMemory {
    pub base: BasePrompt,
    /// Fragments included in `assembled_text`, in order.
    pub fragments: Vec<MemoryFragment>,
    /// Topic ids of fragments dropped to fit the context budget.
    #[serde(default)]
    pub truncated: Vec<String>,
    pub assembled_text: String,
}

/// Joins the base prompt and fragments (in `order_index` order) with a blank
/// line, dropping whole fragments from the tail beyond `budget_chars`.
pub fn assemble_backstory(
    base: BasePrompt,
    mut fragments: Vec<MemoryFragment>,
    budget_chars: usize,
) -> Result<FutureMemory, MemoryError> {
    if fragments.is_empty() {
        return Err(MemoryError::EmptyFragments);
    }
    fragments.sort_by_key(|f| f.order_index);
    for (i, f) in fragments.iter().enumerate() {
        if f.order_index != i {
            return Err(MemoryError::InvalidFragments(format!(
                "order_index {} where {i} was expected",
                f.order_index
            )));
        }
        if f.generated_text.trim().is_empty() {
            return Err(MemoryError::InvalidFragments(format!("fragment {i} is empty")));
        }
    }

    let delimiter_len = FRAGMENT_DELIMITER.chars().count();
    let mut used = base.text.chars().count();
    let mut kept = Vec::new();
    let mut truncated = Vec::new();
    for f in fragments {
        let cost = delimiter_len + f.generated_text.chars().count();
        if truncated.is_empty() && used + cost <= budget_chars {
            used += cost;
            kept.push(f);
        } else {
            truncated.push(f.topic_id);
        }
    }
    if !truncated.is_empty() {
        log::warn!(
            "backstory exceeds {budget_chars} characters; dropped fragments for {}",
            truncated.join(", ")
        );
    }
    let mut assembled_text = base.text.clone();
    for f in &kept {
        assembled_text.push_str(FRAGMENT_DELIMITER);
        assembled_text.push_str(&f.generated_text);
    }
    Ok(FutureMemory {
        base,
        fragments: kept,
        truncated,
        assembled_text,
    })
}

/// Profile to assembled backstory in one call.
pub fn build_future_memory(
    profile: &LifeStoryProfile,
    backend: &dyn ModelBackend,
    probing: &ProbingSet,
    config: &MemoryConfig,
) -> Result<FutureMemory, MemoryError> {
    let fragments = generate_fragments(profile, backend, probing, config)?;
    assemble_backstory(render_base_prompt(profile), fragments, config.context_budget_chars)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::llm::{stub_complete, CompletionResult, StubBackend};
    use crate::life_story::validate_profile;
    use std::sync::atomic::AtomicU32;

    pub(crate) fn ada() -> LifeStoryProfile {
        let answers: BTreeMap<String, String> = [
            ("name", "Ada"),
            ("age", "25"),
            ("pronoun_and_sexual_orientation", "she/her, straight"),
            ("place", "Boston"),
            ("people_in_life", "my mother and my brother"),
            ("low_point", "losing my first job"),
            ("turning_point", "I volunteered at a school"),
            ("proud", "finishing my degree"),
            ("life_project", "Science for Every Kid"),
            ("career", "biology teacher"),
            ("professional_accomplish", "I would like to be a full-time high school biology teacher in Boston"),
            ("financial_accomplish", "own a small house"),
            ("family_accomplish", "raise two kids"),
            ("where_to_live", "a house near the sea"),
            ("daily_life", "reading and gardening"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        validate_profile(&answers).unwrap()
    }

    fn fragment(i: usize, text: &str) -> MemoryFragment {
        MemoryFragment {
            topic_id: format!("t{i}"),
            probing_prompt: String::new(),
            generated_text: text.to_string(),
            order_index: i,
        }
    }

    #[test]
    fn base_prompt_opening() {
        let base = render_base_prompt(&ada());
        assert!(base
            .text
            .starts_with("The following is the interview of Ada, who is a successful biology teacher."));
        assert!(base.text.contains("when Ada was 25 years old"));
        assert!(base.text.contains("25-year-old Ada has said"));
        assert_eq!(base.placeholder_bindings.len(), 15);
    }

    #[test]
    fn base_template_covers_every_field() {
        let t = Template::parse(BASE_TEMPLATE).unwrap();
        let fields: std::collections::BTreeSet<&str> =
            crate::life_story::PROFILE_FIELDS.into_iter().collect();
        assert_eq!(t.placeholders(), fields);
    }

    #[test]
    fn probing_embeds_answer_verbatim() {
        let p = ada();
        let prompts = probing_questions("career", &p).unwrap();
        assert_eq!(prompts.len(), 1);
        assert!(prompts[0].contains(&p.professional_accomplish));
        assert!(prompts[0].contains("rewarding story"));
        assert_eq!(prompts, probing_questions("career", &p).unwrap());
        assert_eq!(
            probing_questions("hobbies2", &p),
            Err(MemoryError::UnknownTopic("hobbies2".into()))
        );
    }

    #[test]
    fn seven_topics_seven_fragments() {
        let p = ada();
        let probing = ProbingSet::default();
        let frags = generate_fragments(&p, &StubBackend, &probing, &MemoryConfig::default()).unwrap();
        assert_eq!(frags.len(), probing.topic_ids().count());
        assert_eq!(frags.len(), 7);
        let base = render_base_prompt(&p);
        for (i, f) in frags.iter().enumerate() {
            assert_eq!(f.order_index, i);
            let req = CompletionRequest::new(&base.text, vec![ChatTurn::user(&f.probing_prompt)], 0.9, 400)
                .unwrap();
            assert_eq!(f.generated_text, stub_complete(&req).text);
        }
    }

    struct FailOn(&'static str);

    impl ModelBackend for FailOn {
        fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
            if request.messages()[0].text.contains(self.0) {
                Err(GatewayError::Timeout { attempts: 1 })
            } else {
                Ok(stub_complete(request))
            }
        }
    }

    #[test]
    fn one_failing_topic_fails_everything() {
        let err = build_future_memory(
            &ada(),
            &FailOn("Science for Every Kid"),
            &ProbingSet::default(),
            &MemoryConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, MemoryError::Backend { ref topic, .. } if topic == "life_project"));
    }

    struct Flaky(AtomicU32);

    impl ModelBackend for Flaky {
        fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
            if self.0.fetch_add(1, Ordering::SeqCst).is_multiple_of(2) {
                Err(GatewayError::Timeout { attempts: 1 })
            } else {
                Ok(stub_complete(request))
            }
        }
    }

    #[test]
    fn retries_recover_transient_failures() {
        let config = MemoryConfig {
            fanout: 1,
            ..Default::default()
        };
        let frags = generate_fragments(&ada(), &Flaky(AtomicU32::new(0)), &ProbingSet::default(), &config)
            .unwrap();
        assert_eq!(frags.len(), 7);
    }

    #[test]
    fn concatenation_contract() {
        let base = render_base_prompt(&ada());
        let m = assemble_backstory(base.clone(), vec![fragment(0, "first"), fragment(1, "second")], 6000)
            .unwrap();
        assert_eq!(m.assembled_text, format!("{}\n\nfirst\n\nsecond", base.text));
    }

    #[test]
    fn out_of_order_fragments_are_sorted() {
        let base = render_base_prompt(&ada());
        let m = assemble_backstory(base.clone(), vec![fragment(1, "second"), fragment(0, "first")], 6000)
            .unwrap();
        assert_eq!(m.assembled_text, format!("{}\n\nfirst\n\nsecond", base.text));
    }

    #[test]
    fn empty_and_gapped_fragments() {
        let base = render_base_prompt(&ada());
        assert_eq!(assemble_backstory(base.clone(), vec![], 6000), Err(MemoryError::EmptyFragments));
        assert!(matches!(
            assemble_backstory(base, vec![fragment(0, "a"), fragment(2, "c")], 6000),
            Err(MemoryError::InvalidFragments(_))
        ));
    }

    #[test]
    fn budget_drops_whole_tail_fragments() {
        let base = render_base_prompt(&ada());
        let budget = base.text.chars().count() + 2 + 5 + 2 + 3;
        let m = assemble_backstory(
            base.clone(),
            vec![fragment(0, "aaaaa"), fragment(1, "bbbb"), fragment(2, "c")],
            budget,
        )
        .unwrap();
        assert_eq!(m.assembled_text, format!("{}\n\naaaaa", base.text));
        assert_eq!(m.truncated, vec!["t1".to_string(), "t2".to_string()]);
        assert!(m.assembled_text.chars().count() <= budget);
    }
}
