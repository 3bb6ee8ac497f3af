//! Per-session state, rebuilt by folding the event log.
//!
//! Live requests never mutate a [`SessionState`] directly: they produce
//! [`EventLogEntry`] values, append them to the log and then [`apply`] them,
//! the same function replay uses.
//!
//! [`apply`]: SessionState::apply

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use yonder_core::chat::ChatConfig;
use yonder_core::measures::BatteryPhase;
use yonder_core::{
    session_time_bounds, validate_profile, ChatError, ChatSession, Condition, FutureMemory,
    LifeStoryProfile, Message, ParticipantRecord, PersonaContext, ScaleBattery, ScaleSet,
};

use crate::store::{EventKind, EventLogEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Consent,
    PreSurvey,
    LifeStory,
    Portrait,
    Aging,
    Chat,
    PostSurvey,
    Done,
}

impl Stage {
    pub fn id(self) -> &'static str {
        match self {
            Stage::Consent => "consent",
            Stage::PreSurvey => "pre_survey",
            Stage::LifeStory => "life_story",
            Stage::Portrait => "portrait",
            Stage::Aging => "aging",
            Stage::Chat => "chat",
            Stage::PostSurvey => "post_survey",
            Stage::Done => "done",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

/// Stages a participant in `condition` passes through, in order.
pub fn stage_flow(condition: Condition) -> &'static [Stage] {
    use Stage::*;
    match condition {
        Condition::FutureYou => &[Consent, PreSurvey, LifeStory, Portrait, Aging, Chat, PostSurvey, Done],
        Condition::Questionnaire => &[Consent, PreSurvey, LifeStory, PostSurvey, Done],
        Condition::Chat => &[Consent, PreSurvey, Chat, PostSurvey, Done],
        Condition::Control => &[Consent, PreSurvey, PostSurvey, Done],
    }
}

pub fn next_stage(condition: Condition, stage: Stage) -> Option<Stage> {
    let flow = stage_flow(condition);
    flow.iter()
        .position(|s| *s == stage)
        .and_then(|i| flow.get(i + 1).copied())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionEnvelope {
    pub session_id: String,
    pub condition: Condition,
    pub stage: Stage,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageChange {
    pub from: Option<Stage>,
    pub to: Stage,
    /// Present on the first event of a session.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,
    /// The chat was closed through the time-limit override.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub override_used: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "survey", rename_all = "snake_case")]
pub enum SurveySubmitted {
    Pre {
        responses: BTreeMap<String, u8>,
    },
    LifeStory {
        answers: BTreeMap<String, String>,
    },
    Post {
        responses: BTreeMap<String, u8>,
        #[serde(default)]
        technical_issue: bool,
        #[serde(default)]
        demographics: BTreeMap<String, String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackstoryReady {
    pub memory: FutureMemory,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortraitUploaded {
    pub portrait_hash: String,
    pub aged_hash: String,
    /// `stub`, `external`, or `placeholder` when aging failed.
    pub provider: String,
    pub placeholder: bool,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EventBody {
    StageChange(StageChange),
    Survey(SurveySubmitted),
    Backstory(BackstoryReady),
    Portrait(PortraitUploaded),
    Message(Message),
}

impl EventBody {
    pub fn kind(&self) -> EventKind {
        match self {
            EventBody::StageChange(_) => EventKind::StageChange,
            EventBody::Survey(_) => EventKind::SurveySubmitted,
            EventBody::Backstory(_) => EventKind::BackstoryReady,
            EventBody::Portrait(_) => EventKind::PortraitUploaded,
            EventBody::Message(_) => EventKind::Message,
        }
    }

    pub fn payload(&self) -> serde_json::Value {
        let v = match self {
            EventBody::StageChange(p) => serde_json::to_value(p),
            EventBody::Survey(p) => serde_json::to_value(p),
            EventBody::Backstory(p) => serde_json::to_value(p),
            EventBody::Portrait(p) => serde_json::to_value(p),
            EventBody::Message(p) => serde_json::to_value(p),
        };
        v.expect("event payloads serialize")
    }

    pub fn decode(entry: &EventLogEntry) -> Result<Self, serde_json::Error> {
        let p = entry.payload.clone();
        Ok(match entry.kind {
            EventKind::StageChange => EventBody::StageChange(serde_json::from_value(p)?),
            EventKind::SurveySubmitted => EventBody::Survey(serde_json::from_value(p)?),
            EventKind::BackstoryReady => EventBody::Backstory(serde_json::from_value(p)?),
            EventKind::PortraitUploaded => EventBody::Portrait(serde_json::from_value(p)?),
            EventKind::Message => EventBody::Message(serde_json::from_value(p)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("event {sequence}: {reason}")]
pub struct ApplyError {
    pub sequence: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionState {
    pub envelope: SessionEnvelope,
    pub next_sequence: u64,
    pub pre: Option<ScaleBattery>,
    pub post: Option<ScaleBattery>,
    pub technical_issue: bool,
    pub demographics: BTreeMap<String, String>,
    pub profile: Option<LifeStoryProfile>,
    pub memory: Option<FutureMemory>,
    pub portrait: Option<PortraitUploaded>,
    pub transcript: Vec<Message>,
    pub chat_started_at: Option<DateTime<Utc>>,
    pub chat_finished: bool,
    pub ended_at: Option<DateTime<Utc>>,
}

impl SessionState {
    /// Builds the state from a complete log.
    pub fn replay(events: &[EventLogEntry]) -> Result<Self, ApplyError> {
        let first = events.first().ok_or(ApplyError {
            sequence: 0,
            reason: "empty log".into(),
        })?;
        let condition = match EventBody::decode(first) {
            Ok(EventBody::StageChange(StageChange {
                from: None,
                to: Stage::Consent,
                condition: Some(c),
                ..
            })) => c,
            _ => {
                return Err(ApplyError {
                    sequence: 0,
                    reason: "log does not start with session creation".into(),
                })
            }
        };
        let mut state = Self::new(first.session_id.clone(), condition, first.timestamp);
        for e in &events[1..] {
            state.apply(e)?;
        }
        Ok(state)
    }

    /// State right after the creation event.
    pub fn new(session_id: String, condition: Condition, created_at: DateTime<Utc>) -> Self {
        Self {
            envelope: SessionEnvelope {
                session_id,
                condition,
                stage: Stage::Consent,
                created_at,
            },
            next_sequence: 1,
            pre: None,
            post: None,
            technical_issue: false,
            demographics: BTreeMap::new(),
            profile: None,
            memory: None,
            portrait: None,
            transcript: Vec::new(),
            chat_started_at: None,
            chat_finished: false,
            ended_at: None,
        }
    }

    pub fn creation_event(&self) -> EventLogEntry {
        EventLogEntry {
            session_id: self.envelope.session_id.clone(),
            sequence: 0,
            kind: EventKind::StageChange,
            payload: EventBody::StageChange(StageChange {
                from: None,
                to: Stage::Consent,
                condition: Some(self.envelope.condition),
                override_used: false,
            })
            .payload(),
            timestamp: self.envelope.created_at,
        }
    }

    pub fn stage(&self) -> Stage {
        self.envelope.stage
    }

    pub fn condition(&self) -> Condition {
        self.envelope.condition
    }

    /// Wraps `body` as the next entry of this session's log.
    pub fn entry(&self, offset: u64, body: &EventBody, timestamp: DateTime<Utc>) -> EventLogEntry {
        EventLogEntry {
            session_id: self.envelope.session_id.clone(),
            sequence: self.next_sequence + offset,
            kind: body.kind(),
            payload: body.payload(),
            timestamp,
        }
    }

    pub fn apply(&mut self, entry: &EventLogEntry) -> Result<(), ApplyError> {
        let fail = |reason: String| ApplyError {
            sequence: entry.sequence,
            reason,
        };
        if entry.sequence != self.next_sequence {
            return Err(fail(format!("expected sequence {}", self.next_sequence)));
        }
        let body = EventBody::decode(entry).map_err(|e| fail(e.to_string()))?;
        match body {
            EventBody::StageChange(change) => {
                let expected = next_stage(self.condition(), self.stage());
                if change.from != Some(self.stage()) || expected != Some(change.to) {
                    return Err(fail(format!(
                        "stage change {:?} -> {} from {}",
                        change.from,
                        change.to,
                        self.stage()
                    )));
                }
                if change.from == Some(Stage::Chat) {
                    self.chat_finished = true;
                }
                match change.to {
                    Stage::Chat => self.chat_started_at = Some(entry.timestamp),
                    Stage::Done => self.ended_at = Some(entry.timestamp),
                    _ => {}
                }
                self.envelope.stage = change.to;
            }
            EventBody::Survey(SurveySubmitted::Pre { responses }) => {
                self.pre = Some(ScaleBattery {
                    phase: BatteryPhase::Pre,
                    responses,
                });
            }
            EventBody::Survey(SurveySubmitted::LifeStory { answers }) => {
                self.profile = Some(validate_profile(&answers).map_err(|e| fail(e.to_string()))?);
            }
            EventBody::Survey(SurveySubmitted::Post {
                responses,
                technical_issue,
                demographics,
            }) => {
                self.post = Some(ScaleBattery {
                    phase: BatteryPhase::Post,
                    responses,
                });
                self.technical_issue = technical_issue;
                self.demographics = demographics;
            }
            EventBody::Backstory(b) => self.memory = Some(b.memory),
            EventBody::Portrait(p) => self.portrait = Some(p),
            EventBody::Message(m) => {
                if m.index != self.transcript.len() {
                    return Err(fail(format!(
                        "message index {} after {} messages",
                        m.index,
                        self.transcript.len()
                    )));
                }
                self.transcript.push(m);
            }
        }
        self.next_sequence += 1;
        Ok(())
    }

    pub fn persona(&self) -> PersonaContext {
        match (self.condition(), &self.memory) {
            (Condition::FutureYou, Some(memory)) => PersonaContext::future_self(
                memory.clone(),
                self.portrait.as_ref().map(|p| p.aged_hash.clone()),
            ),
            _ => PersonaContext::assistant(),
        }
    }

    /// The chat as a core session, or `None` before the chat stage.
    pub fn chat(&self) -> Result<Option<ChatSession>, ChatError> {
        if self.chat_started_at.is_none() {
            return Ok(None);
        }
        ChatSession::replay(
            self.envelope.session_id.clone(),
            self.persona(),
            self.transcript.clone(),
            self.chat_finished,
        )
        .map(Some)
    }

    /// True once the chat has run for the condition's maximum duration.
    pub fn time_limit_reached(&self, now: DateTime<Utc>) -> bool {
        match (session_time_bounds(self.condition()), self.chat_started_at) {
            (Some((_, max)), Some(start)) => now - start >= chrono::Duration::minutes(i64::from(max)),
            _ => false,
        }
    }

    pub fn min_time_reached(&self, now: DateTime<Utc>) -> bool {
        match (session_time_bounds(self.condition()), self.chat_started_at) {
            (Some((min, _)), Some(start)) => now - start >= chrono::Duration::minutes(i64::from(min)),
            _ => true,
        }
    }

    pub fn summary(&self, chat_config: &ChatConfig, now: DateTime<Utc>) -> SessionView {
        let exchanged = self
            .transcript
            .iter()
            .filter(|m| m.sender != yonder_core::Sender::System)
            .count();
        let reply_pending = self
            .transcript
            .iter()
            .rev()
            .find(|m| m.sender != yonder_core::Sender::System)
            .is_some_and(|m| m.sender == yonder_core::Sender::User);
        SessionView {
            envelope: self.envelope.clone(),
            exchanged_count: exchanged,
            message_count: self.transcript.len(),
            finish_eligible: self.chat_started_at.is_some() && exchanged >= chat_config.finish_threshold,
            min_time_reached: self.min_time_reached(now),
            reply_pending,
            portrait_hash: self.portrait.as_ref().map(|p| p.portrait_hash.clone()),
            aged_hash: self.portrait.as_ref().map(|p| p.aged_hash.clone()),
            aging_placeholder: self.portrait.as_ref().is_some_and(|p| p.placeholder),
        }
    }

    /// The participant row for export, once the pre survey exists.
    pub fn record(&self, set: &ScaleSet) -> Option<ParticipantRecord> {
        let pre = self.pre.clone()?;
        let post = self.post.clone().filter(|_| self.stage() == Stage::Done);
        let attention_passed =
            set.attention_passed(&pre) && post.as_ref().is_some_and(|p| set.attention_passed(p));
        Some(ParticipantRecord {
            participant_id: self.envelope.session_id.clone(),
            condition: self.condition(),
            pre,
            post,
            attention_passed,
            technical_issue: self.technical_issue,
            demographics: self.demographics.clone(),
            started_at: self.envelope.created_at,
            ended_at: self.ended_at,
        })
    }
}

/// What `GET /sessions/{id}` returns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionView {
    #[serde(flatten)]
    pub envelope: SessionEnvelope,
    pub exchanged_count: usize,
    pub message_count: usize,
    /// Server-side finish rule: exchanged messages reached the threshold.
    pub finish_eligible: bool,
    pub min_time_reached: bool,
    pub reply_pending: bool,
    pub portrait_hash: Option<String>,
    pub aged_hash: Option<String>,
    pub aging_placeholder: bool,
}
