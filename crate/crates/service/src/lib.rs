//! Study service: session state machine, JSONL event log, and the HTTP
//! routes the web client talks to.
//!
//! A [`Service`] is synchronous; [`http::router`] runs its calls on the
//! blocking pool. Each session has its own lock, so requests for different
//! sessions proceed in parallel while writes within a session are ordered.

pub mod http;
pub mod session;
pub mod store;

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Duration, TimeZone, Utc};
use serde::Deserialize;
use thiserror::Error;
use yonder_core::aging::{silhouette_placeholder, AgingProviderKind};
use yonder_core::experiment::write_participants_csv;
use yonder_core::measures::BatteryPhase;
use yonder_core::memory::{build_future_memory, ProbingSet};
use yonder_core::{
    age_progress, apply_exclusions, assign_condition, build_report, validate_profile, AgingError,
    AppConfig, ChatError, ChatSession, Clock, Condition, ContentStore, ExperimentError,
    LifeStoryError, Message, MemoryError, MeasuresError, ModelBackend, Portrait, Report,
    ScaleBattery, ScaleSet, SteppingClock, SystemClock,
};

pub use session::{next_stage, stage_flow, SessionEnvelope, SessionState, SessionView, Stage};
pub use store::{EventKind, EventLogEntry, EventStore, IndexEntry};

use session::{BackstoryReady, EventBody, PortraitUploaded, StageChange, SurveySubmitted};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("session `{0}` not found")]
    NotFound(String),
    #[error("session is at stage `{actual}`, not `{expected}`")]
    WrongStage { expected: Stage, actual: Stage },
    #[error("session is finished")]
    Finished,
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
    #[error(transparent)]
    LifeStory(#[from] LifeStoryError),
    #[error(transparent)]
    Measures(#[from] MeasuresError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Chat(#[from] ChatError),
    #[error(transparent)]
    Aging(#[from] AgingError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("storage: {0}")]
    Storage(#[from] std::io::Error),
    #[error("corrupt event log: {0}")]
    Corrupt(String),
}

/// Which sessions `export_dataset` includes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(default)]
pub struct ExportFilter {
    pub condition: Option<Condition>,
    /// Also export sessions that have a pre survey but are not done.
    pub include_incomplete: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConsentPayload {
    consent: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResponsesPayload {
    responses: BTreeMap<String, u8>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnswersPayload {
    answers: BTreeMap<String, String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FinishPayload {
    #[serde(rename = "override")]
    override_limit: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PostPayload {
    responses: BTreeMap<String, u8>,
    #[serde(default)]
    technical_issue: bool,
    #[serde(default)]
    demographics: BTreeMap<String, String>,
}

fn parse<T: for<'de> Deserialize<'de>>(payload: &serde_json::Value) -> Result<T, ServiceError> {
    let payload = if payload.is_null() {
        serde_json::Value::Object(Default::default())
    } else {
        payload.clone()
    };
    serde_json::from_value(payload).map_err(|e| ServiceError::InvalidPayload(e.to_string()))
}

/// Outcome of a chat post: the reply, or the backend failure after the user
/// message and a failure notice were recorded.
pub type ChatOutcome = Result<Message, ServiceError>;

pub struct Service {
    config: AppConfig,
    store: EventStore,
    blobs: ContentStore,
    backend: Arc<dyn ModelBackend>,
    clock: Arc<dyn Clock>,
    scales: ScaleSet,
    probing: ProbingSet,
    sessions: RwLock<HashMap<String, Arc<Mutex<SessionState>>>>,
    ids: AtomicU64,
}

impl std::fmt::Debug for Service {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Service")
            .field("data_dir", &self.store.root())
            .field("sessions", &self.sessions.read().map(|s| s.len()).unwrap_or(0))
            .finish()
    }
}

impl Service {
    /// Opens the data directory and replays every indexed session.
    ///
    /// In deterministic mode ids are sequential and the clock steps one
    /// second per reading, starting after the latest logged event.
    pub fn open(config: AppConfig, backend: Arc<dyn ModelBackend>) -> Result<Self, ServiceError> {
        let root = config.server.data_dir.clone();
        let store = EventStore::open(&root)?;
        let blobs = ContentStore::open(root.join("blobs"))?;
        let mut sessions = HashMap::new();
        let mut latest: Option<DateTime<Utc>> = None;
        let index = store.index()?;
        for entry in &index {
            let events = store.events(&entry.session_id)?;
            let state = SessionState::replay(&events)
                .map_err(|e| ServiceError::Corrupt(format!("{}: {e}", entry.session_id)))?;
            latest = latest.max(events.last().map(|e| e.timestamp));
            sessions.insert(entry.session_id.clone(), Arc::new(Mutex::new(state)));
        }
        let clock: Arc<dyn Clock> = if config.server.deterministic {
            let start = latest
                .map(|t| t + Duration::seconds(1))
                .unwrap_or_else(|| Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap());
            Arc::new(SteppingClock::new(start, 1000))
        } else {
            Arc::new(SystemClock)
        };
        Ok(Self {
            config,
            store,
            blobs,
            backend,
            clock,
            scales: ScaleSet::default(),
            probing: ProbingSet::default(),
            sessions: RwLock::new(sessions),
            ids: AtomicU64::new(index.len() as u64),
        })
    }

    /// Replaces the clock used for new events.
    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn config(&self) -> &AppConfig {
        &self.config
    }

    pub fn scales(&self) -> &ScaleSet {
        &self.scales
    }

    pub fn store(&self) -> &EventStore {
        &self.store
    }

    pub fn blobs(&self) -> &ContentStore {
        &self.blobs
    }

    fn new_id(&self) -> String {
        let n = self.ids.fetch_add(1, Ordering::SeqCst) + 1;
        if self.config.server.deterministic {
            format!("s{n:06}")
        } else {
            uuid::Uuid::new_v4().simple().to_string()
        }
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<SessionState>>, ServiceError> {
        self.sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    /// Appends and applies `bodies` in order, stopping at the first storage
    /// failure so memory never runs ahead of the log.
    fn commit(
        &self,
        state: &mut SessionState,
        bodies: Vec<(EventBody, DateTime<Utc>)>,
    ) -> Result<(), ServiceError> {
        for (body, timestamp) in bodies {
            let entry = state.entry(0, &body, timestamp);
            self.store.append(&entry)?;
            state
                .apply(&entry)
                .map_err(|e| ServiceError::Corrupt(e.to_string()))?;
        }
        Ok(())
    }

    fn stage_change(&self, state: &SessionState, override_used: bool) -> (EventBody, DateTime<Utc>) {
        let to = next_stage(state.condition(), state.stage()).expect("stage has a successor");
        (
            EventBody::StageChange(StageChange {
                from: Some(state.stage()),
                to,
                condition: None,
                override_used,
            }),
            self.clock.now(),
        )
    }

    pub fn create_session(&self, condition_override: Option<Condition>) -> Result<SessionEnvelope, ServiceError> {
        let id = self.new_id();
        let condition = match condition_override {
            Some(c) => c,
            None => assign_condition(&id, &self.config.experiment.weights, self.config.experiment.seed)?,
        };
        let state = SessionState::new(id.clone(), condition, self.clock.now());
        let index = IndexEntry {
            session_id: id.clone(),
            condition,
            created_at: state.envelope.created_at,
        };
        self.store.create(&index, &state.creation_event())?;
        let envelope = state.envelope.clone();
        self.sessions
            .write()
            .expect("session map lock")
            .insert(id, Arc::new(Mutex::new(state)));
        Ok(envelope)
    }

    pub fn get_session(&self, id: &str) -> Result<SessionView, ServiceError> {
        let session = self.session(id)?;
        let state = session.lock().expect("session lock");
        Ok(state.summary(&self.config.chat, self.latest_time(&state)))
    }

    pub fn state(&self, id: &str) -> Result<SessionState, ServiceError> {
        Ok(self.session(id)?.lock().expect("session lock").clone())
    }

    /// Rebuilds a session from its log on disk, ignoring memory.
    pub fn replay_from_log(&self, id: &str) -> Result<SessionState, ServiceError> {
        let events = self.store.events(id)?;
        if events.is_empty() {
            return Err(ServiceError::NotFound(id.to_string()));
        }
        SessionState::replay(&events).map_err(|e| ServiceError::Corrupt(e.to_string()))
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().expect("session map lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    fn battery(&self, phase: BatteryPhase, responses: BTreeMap<String, u8>) -> Result<ScaleBattery, ServiceError> {
        let battery = ScaleBattery { phase, responses };
        self.scales.validate(&battery)?;
        Ok(battery)
    }

    /// Moves the session past `expected` with the stage's payload.
    ///
    /// Any failure before the log write leaves the session untouched.
    pub fn advance(
        &self,
        id: &str,
        expected: Stage,
        payload: &serde_json::Value,
    ) -> Result<SessionView, ServiceError> {
        let session = self.session(id)?;
        let mut state = session.lock().expect("session lock");
        if state.stage() == Stage::Done {
            return Err(ServiceError::Finished);
        }
        if state.stage() != expected {
            return Err(ServiceError::WrongStage {
                expected,
                actual: state.stage(),
            });
        }
        let mut events = Vec::new();
        match expected {
            Stage::Consent => {
                let p: ConsentPayload = parse(payload)?;
                if !p.consent {
                    return Err(ServiceError::InvalidPayload("consent is required to continue".into()));
                }
            }
            Stage::PreSurvey => {
                let p: ResponsesPayload = parse(payload)?;
                let battery = self.battery(BatteryPhase::Pre, p.responses)?;
                events.push((
                    EventBody::Survey(SurveySubmitted::Pre {
                        responses: battery.responses,
                    }),
                    self.clock.now(),
                ));
            }
            Stage::LifeStory => {
                let p: AnswersPayload = parse(payload)?;
                let profile = validate_profile(&p.answers)?;
                events.push((
                    EventBody::Survey(SurveySubmitted::LifeStory {
                        answers: profile.to_answers(),
                    }),
                    self.clock.now(),
                ));
                if state.condition() == Condition::FutureYou {
                    let memory = build_future_memory(&profile, &self.backend, &self.probing, &self.config.memory)?;
                    events.push((EventBody::Backstory(BackstoryReady { memory }), self.clock.now()));
                }
            }
            Stage::Portrait => {
                return Err(ServiceError::InvalidPayload(
                    "upload the portrait to leave this stage".into(),
                ))
            }
            Stage::Aging => {
                let _: FinishPayload = parse(payload)?;
            }
            Stage::Chat => {
                let p: FinishPayload = parse(payload)?;
                let allowed = p.override_limit && state.time_limit_reached(self.clock.now());
                if p.override_limit && !allowed {
                    return Err(ServiceError::InvalidPayload(
                        "override is only available once the time limit is reached".into(),
                    ));
                }
                let mut chat = state.chat()?.ok_or(ServiceError::Corrupt("chat stage without chat".into()))?;
                chat.finish(allowed, &self.config.chat)?;
                let change = self.stage_change(&state, allowed);
                return self.finish_advance(&mut state, vec![change]);
            }
            Stage::PostSurvey => {
                let p: PostPayload = parse(payload)?;
                let battery = self.battery(BatteryPhase::Post, p.responses)?;
                events.push((
                    EventBody::Survey(SurveySubmitted::Post {
                        responses: battery.responses,
                        technical_issue: p.technical_issue,
                        demographics: p.demographics,
                    }),
                    self.clock.now(),
                ));
            }
            Stage::Done => unreachable!("checked above"),
        }
        let change = self.stage_change(&state, false);
        let entering_chat = matches!(&change.0, EventBody::StageChange(c) if c.to == Stage::Chat);
        events.push(change);
        if entering_chat {
            let chat = ChatSession::start(
                id,
                self.persona_for(&state, &events),
                &self.backend,
                self.clock.as_ref(),
                &self.config.chat,
            )?;
            events.extend(
                chat.transcript()
                    .iter()
                    .map(|m| (EventBody::Message(m.clone()), m.timestamp)),
            );
        }
        self.finish_advance(&mut state, events)
    }

    fn persona_for(&self, state: &SessionState, pending: &[(EventBody, DateTime<Utc>)]) -> yonder_core::PersonaContext {
        let mut preview = state.clone();
        for (body, _) in pending {
            if let EventBody::Backstory(b) = body {
                preview.memory = Some(b.memory.clone());
            }
        }
        preview.persona()
    }

    fn finish_advance(
        &self,
        state: &mut SessionState,
        events: Vec<(EventBody, DateTime<Utc>)>,
    ) -> Result<SessionView, ServiceError> {
        self.commit(state, events)?;
        Ok(state.summary(&self.config.chat, self.latest_time(state)))
    }

    fn latest_time(&self, state: &SessionState) -> DateTime<Utc> {
        if self.config.server.deterministic {
            state.ended_at.or(state.chat_started_at).unwrap_or(state.envelope.created_at)
        } else {
            Utc::now()
        }
    }

    /// Stores the portrait, ages it, and moves the session to the aging
    /// reveal. A failing aging provider degrades to a silhouette.
    pub fn upload_portrait(&self, id: &str, bytes: Vec<u8>) -> Result<SessionView, ServiceError> {
        let session = self.session(id)?;
        let mut state = session.lock().expect("session lock");
        if state.stage() == Stage::Done {
            return Err(ServiceError::Finished);
        }
        if state.stage() != Stage::Portrait {
            return Err(ServiceError::WrongStage {
                expected: Stage::Portrait,
                actual: state.stage(),
            });
        }
        let portrait = Portrait::from_bytes(bytes)?;
        let (width, height) = portrait.dimensions();
        let (aged, placeholder) = match age_progress(&portrait, &self.config.aging) {
            Ok(aged) => (aged, false),
            Err(e) => {
                log::warn!("session {id}: aging failed, using placeholder: {e}");
                (silhouette_placeholder(width, height), true)
            }
        };
        let portrait_hash = self.blobs.put(portrait.bytes())?;
        let aged_hash = self.blobs.put(&aged.image_bytes)?;
        let provider = match (placeholder, aged.provider) {
            (true, _) => "placeholder",
            (false, AgingProviderKind::Stub) => "stub",
            (false, AgingProviderKind::External) => "external",
        };
        let uploaded = EventBody::Portrait(PortraitUploaded {
            portrait_hash,
            aged_hash,
            provider: provider.into(),
            placeholder,
            width,
            height,
        });
        let events = vec![(uploaded, self.clock.now()), self.stage_change(&state, false)];
        self.finish_advance(&mut state, events)
    }

    fn chat_in_progress(&self, state: &SessionState) -> Result<ChatSession, ServiceError> {
        if state.stage() == Stage::Done {
            return Err(ServiceError::Finished);
        }
        if state.stage() != Stage::Chat {
            return Err(ServiceError::WrongStage {
                expected: Stage::Chat,
                actual: state.stage(),
            });
        }
        state.chat()?.ok_or(ServiceError::Corrupt("chat stage without chat".into()))
    }

    fn chat_op(
        &self,
        id: &str,
        op: impl FnOnce(&mut ChatSession, &dyn ModelBackend, &dyn Clock) -> Result<Message, ChatError>,
    ) -> Result<ChatOutcome, ServiceError> {
        let session = self.session(id)?;
        let mut state = session.lock().expect("session lock");
        let mut chat = self.chat_in_progress(&state)?;
        let before = chat.transcript().len();
        let outcome = op(&mut chat, &self.backend, self.clock.as_ref());
        let events = chat
            .messages_since(before)
            .iter()
            .map(|m| (EventBody::Message(m.clone()), m.timestamp))
            .collect();
        self.commit(&mut state, events)?;
        Ok(outcome.map_err(ServiceError::from))
    }

    /// Posts a participant message and waits for the reply. The outer error
    /// means nothing was recorded; the inner one is a rejected or failed
    /// exchange.
    pub fn post_message(&self, id: &str, text: &str) -> Result<ChatOutcome, ServiceError> {
        let config = self.config.chat.clone();
        self.chat_op(id, |chat, backend, clock| chat.post_user_message(text, backend, clock, &config))
    }

    pub fn retry_reply(&self, id: &str) -> Result<ChatOutcome, ServiceError> {
        let config = self.config.chat.clone();
        self.chat_op(id, |chat, backend, clock| chat.retry_reply(backend, clock, &config))
    }

    pub fn messages_since(&self, id: &str, since: usize) -> Result<Vec<Message>, ServiceError> {
        let session = self.session(id)?;
        let state = session.lock().expect("session lock");
        Ok(state.transcript[since.min(state.transcript.len())..].to_vec())
    }

    fn records(&self, filter: &ExportFilter) -> Vec<yonder_core::ParticipantRecord> {
        let sessions: Vec<Arc<Mutex<SessionState>>> = {
            let map = self.sessions.read().expect("session map lock");
            let mut ids: Vec<&String> = map.keys().collect();
            ids.sort();
            ids.into_iter().map(|id| map[id].clone()).collect()
        };
        sessions
            .iter()
            .filter_map(|s| {
                let state = s.lock().expect("session lock");
                if filter.condition.is_some_and(|c| c != state.condition()) {
                    return None;
                }
                if state.stage() != Stage::Done && !filter.include_incomplete {
                    return None;
                }
                state.record(&self.scales)
            })
            .collect()
    }

    /// Participant CSV of the matching sessions, ordered by session id.
    pub fn export_dataset(&self, filter: &ExportFilter) -> Result<Vec<u8>, ServiceError> {
        let mut out = Vec::new();
        write_participants_csv(&self.records(filter), &self.scales, &mut out)?;
        Ok(out)
    }

    /// Table of completed sessions after exclusions.
    pub fn report(&self) -> Result<Report, ServiceError> {
        let kept = apply_exclusions(self.records(&ExportFilter::default())).kept;
        Ok(build_report(&kept, &self.scales, &self.config.experiment.analysis_options())?)
    }
}
