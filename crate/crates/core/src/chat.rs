//! The future-self conversation: scripted openers, a freeform exchange over a
//! bounded context window, and the finish rule.

use std::sync::atomic::{AtomicI64, Ordering};

use chrono::{DateTime, Duration, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{ChatTurn, CompletionRequest, GatewayError, ModelBackend, Role};
use crate::memory::FutureMemory;

/// The four scripted prompts that produce the persona's first messages.
pub const OPENING_SCRIPT: [&str; 4] = [
    "Can you casually introduce yourself, your name, and your age, which is 60 years old, and why you are here? Casually and briefly mention that the future might be different than you expect and mention that your future might be different.",
    "Please briefly tell me what your dream was with “when I was your age...” and how it turned out to be. What are the things that you expect and didn't expect?",
    "Please tell me the happiest stories about your family as you reflected in the last 30 years, starting with “You know, when I think of my life...”, and share insightful motivation for my future.",
    "Reflecting on past experiences, what and how has the life project you have been involved in deeply impacted you and others in a genuine and heartfelt way? How did you initially become involved in this project, and how has it developed over time? Furthermore, why do you believe this project holds such importance for both yourself and the individuals it has touched?",
];

pub fn opening_script() -> Vec<String> {
    OPENING_SCRIPT.iter().map(|s| s.to_string()).collect()
}

pub const FUTURE_SELF_INSTRUCTION: &str = "You are the person described below, now 60 years old, talking by text message with your younger self. \
Speak in the first person as that older self: warm, reflective and specific, drawing on the memories below. \
Keep each reply to a few short paragraphs.";

pub const ASSISTANT_INSTRUCTION: &str = "You are a helpful, friendly assistant. \
Answer the user's messages clearly and briefly.";

pub const REPLY_FAILED_TEXT: &str = "The reply could not be generated. Please try again.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChatError {
    #[error("the session is finished")]
    SessionFinished,
    #[error("message is empty")]
    EmptyMessage,
    #[error("finish is not available yet ({exchanged} of {required} messages exchanged)")]
    NotEligible { exchanged: usize, required: usize },
    #[error("no failed reply to retry")]
    NothingToRetry,
    #[error("a reply is still missing; retry it before sending another message")]
    ReplyPending,
    #[error("context of {needed} characters exceeds the budget of {budget}")]
    ContextBudget { needed: usize, budget: usize },
    #[error("model backend: {0}")]
    Backend(#[from] GatewayError),
    #[error("inconsistent transcript: {0}")]
    Replay(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PersonaKind {
    FutureSelf,
    /// Generic helper used by the chat-only control condition.
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaContext {
    pub kind: PersonaKind,
    pub memory: Option<FutureMemory>,
    pub persona_instruction: String,
    pub aged_portrait_ref: Option<String>,
}

impl PersonaContext {
    pub fn future_self(memory: FutureMemory, aged_portrait_ref: Option<String>) -> Self {
        Self {
            kind: PersonaKind::FutureSelf,
            memory: Some(memory),
            persona_instruction: FUTURE_SELF_INSTRUCTION.to_string(),
            aged_portrait_ref,
        }
    }

    pub fn assistant() -> Self {
        Self {
            kind: PersonaKind::Assistant,
            memory: None,
            persona_instruction: ASSISTANT_INSTRUCTION.to_string(),
            aged_portrait_ref: None,
        }
    }

    /// Instruction followed by the backstory.
    pub fn system_context(&self) -> String {
        match &self.memory {
            Some(m) => format!("{}\n\n{}", self.persona_instruction, m.assembled_text),
            None => self.persona_instruction.clone(),
        }
    }

    fn openers(&self) -> &'static [&'static str] {
        match self.kind {
            PersonaKind::FutureSelf => &OPENING_SCRIPT,
            PersonaKind::Assistant => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sender {
    User,
    FutureSelf,
    System,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub index: usize,
    pub sender: Sender,
    pub text: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatPhase {
    OpeningScript,
    Freeform,
    Finished,
}

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Starts at a fixed instant and advances a fixed step on every reading.
#[derive(Debug)]
pub struct SteppingClock {
    start: DateTime<Utc>,
    step_ms: i64,
    ticks: AtomicI64,
}

impl SteppingClock {
    pub fn new(start: DateTime<Utc>, step_ms: i64) -> Self {
        Self {
            start,
            step_ms,
            ticks: AtomicI64::new(0),
        }
    }
}

impl Default for SteppingClock {
    fn default() -> Self {
        Self::new(Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(), 1000)
    }
}

impl Clock for SteppingClock {
    fn now(&self) -> DateTime<Utc> {
        let t = self.ticks.fetch_add(1, Ordering::SeqCst);
        self.start + Duration::milliseconds(t * self.step_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatConfig {
    /// Exchanged messages (both parties) before finishing is offered.
    pub finish_threshold: usize,
    /// Freeform messages kept in the request window.
    pub window_messages: usize,
    /// Upper bound on characters sent per request.
    pub context_budget_chars: usize,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for ChatConfig {
    fn default() -> Self {
        Self {
            finish_threshold: 16,
            window_messages: 20,
            context_budget_chars: 24_000,
            temperature: 0.7,
            max_output_tokens: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatSession {
    pub session_id: String,
    pub persona: PersonaContext,
    transcript: Vec<Message>,
    phase: ChatPhase,
    exchanged_count: usize,
}

fn merge_turns(turns: Vec<ChatTurn>) -> Vec<ChatTurn> {
    let mut out: Vec<ChatTurn> = Vec::with_capacity(turns.len());
    for t in turns {
        match out.last_mut() {
            Some(last) if last.role == t.role => {
                last.text.push_str("\n\n");
                last.text.push_str(&t.text);
            }
            _ => out.push(t),
        }
    }
    out
}

impl ChatSession {
    /// Generates the opening messages; nothing is returned unless all succeed.
    pub fn start(
        session_id: impl Into<String>,
        persona: PersonaContext,
        backend: &dyn ModelBackend,
        clock: &dyn Clock,
        config: &ChatConfig,
    ) -> Result<Self, ChatError> {
        let mut session = Self {
            session_id: session_id.into(),
            persona,
            transcript: Vec::new(),
            phase: ChatPhase::OpeningScript,
            exchanged_count: 0,
        };
        let context = session.persona.system_context();
        let mut history = Vec::new();
        for prompt in session.persona.openers() {
            history.push(ChatTurn::user(*prompt));
            let request = CompletionRequest::new(
                context.clone(),
                history.clone(),
                config.temperature,
                config.max_output_tokens,
            )?;
            check_budget(&request, config)?;
            let reply = backend.complete(&request)?.text;
            history.push(ChatTurn::assistant(reply.clone()));
            session.push(Sender::FutureSelf, reply, clock);
        }
        session.phase = ChatPhase::Freeform;
        Ok(session)
    }

    /// Rebuilds a session from persisted messages.
    pub fn replay(
        session_id: impl Into<String>,
        persona: PersonaContext,
        transcript: Vec<Message>,
        finished: bool,
    ) -> Result<Self, ChatError> {
        let openers = persona.openers().len();
        for (i, m) in transcript.iter().enumerate() {
            if m.index != i {
                return Err(ChatError::Replay(format!("message {i} has index {}", m.index)));
            }
            if m.text.is_empty() {
                return Err(ChatError::Replay(format!("message {i} is empty")));
            }
            if i < openers && m.sender != Sender::FutureSelf {
                return Err(ChatError::Replay(format!("opener {i} is not from the persona")));
            }
        }
        if transcript.len() < openers {
            return Err(ChatError::Replay("opening script incomplete".into()));
        }
        let exchanged_count = transcript.iter().filter(|m| m.sender != Sender::System).count();
        Ok(Self {
            session_id: session_id.into(),
            persona,
            transcript,
            phase: if finished { ChatPhase::Finished } else { ChatPhase::Freeform },
            exchanged_count,
        })
    }

    pub fn transcript(&self) -> &[Message] {
        &self.transcript
    }

    pub fn phase(&self) -> ChatPhase {
        self.phase
    }

    /// User and future-self messages so far; system notices are not counted.
    pub fn exchanged_count(&self) -> usize {
        self.exchanged_count
    }

    /// Messages with `index >= since`.
    pub fn messages_since(&self, since: usize) -> &[Message] {
        &self.transcript[since.min(self.transcript.len())..]
    }

    pub fn finish_eligible(&self, config: &ChatConfig) -> bool {
        self.exchanged_count >= config.finish_threshold
    }

    /// True when the last user message still has no reply.
    pub fn reply_pending(&self) -> bool {
        self.transcript
            .iter()
            .rev()
            .find(|m| m.sender != Sender::System)
            .is_some_and(|m| m.sender == Sender::User)
    }

    fn push(&mut self, sender: Sender, text: String, clock: &dyn Clock) -> Message {
        let message = Message {
            index: self.transcript.len(),
            sender,
            text,
            timestamp: clock.now(),
        };
        if sender != Sender::System {
            self.exchanged_count += 1;
        }
        self.transcript.push(message.clone());
        message
    }

    /// Appends the user's message and the persona's reply.
    ///
    /// On a backend failure the user message stays in the transcript
    /// followed by a system notice, and [`ChatSession::retry_reply`]
    /// requests the reply again.
    pub fn post_user_message(
        &mut self,
        text: &str,
        backend: &dyn ModelBackend,
        clock: &dyn Clock,
        config: &ChatConfig,
    ) -> Result<Message, ChatError> {
        if self.phase == ChatPhase::Finished {
            return Err(ChatError::SessionFinished);
        }
        let text = text.trim();
        if text.is_empty() {
            return Err(ChatError::EmptyMessage);
        }
        if self.reply_pending() {
            return Err(ChatError::ReplyPending);
        }
        self.push(Sender::User, text.to_string(), clock);
        self.reply(backend, clock, config)
    }

    pub fn retry_reply(
        &mut self,
        backend: &dyn ModelBackend,
        clock: &dyn Clock,
        config: &ChatConfig,
    ) -> Result<Message, ChatError> {
        if self.phase == ChatPhase::Finished {
            return Err(ChatError::SessionFinished);
        }
        if !self.reply_pending() {
            return Err(ChatError::NothingToRetry);
        }
        self.reply(backend, clock, config)
    }

    fn reply(
        &mut self,
        backend: &dyn ModelBackend,
        clock: &dyn Clock,
        config: &ChatConfig,
    ) -> Result<Message, ChatError> {
        let outcome = self
            .build_request(config)
            .and_then(|r| backend.complete(&r).map_err(ChatError::from));
        match outcome {
            Ok(result) => Ok(self.push(Sender::FutureSelf, result.text, clock)),
            Err(e) => {
                log::warn!("session {}: reply failed: {e}", self.session_id);
                self.push(Sender::System, REPLY_FAILED_TEXT.to_string(), clock);
                Err(e)
            }
        }
    }

    /// Backstory, openers and the most recent freeform messages, dropping
    /// the oldest freeform messages until the request fits the budget.
    pub fn build_request(&self, config: &ChatConfig) -> Result<CompletionRequest, ChatError> {
        let openers = self.persona.openers();
        let mut fixed = Vec::new();
        for (prompt, reply) in openers.iter().zip(&self.transcript) {
            fixed.push(ChatTurn::user(*prompt));
            fixed.push(ChatTurn::assistant(reply.text.clone()));
        }
        let freeform: Vec<ChatTurn> = self.transcript[openers.len().min(self.transcript.len())..]
            .iter()
            .filter_map(|m| match m.sender {
                Sender::User => Some(ChatTurn::user(m.text.clone())),
                Sender::FutureSelf => Some(ChatTurn::assistant(m.text.clone())),
                Sender::System => None,
            })
            .collect();
        let context = self.persona.system_context();
        let mut start = freeform.len().saturating_sub(config.window_messages);
        loop {
            // a window never opens on a persona reply
            while freeform.get(start).is_some_and(|t| t.role == Role::Assistant) {
                start += 1;
            }
            let mut turns = fixed.clone();
            turns.extend_from_slice(&freeform[start..]);
            let request = CompletionRequest::new(
                context.clone(),
                merge_turns(turns),
                config.temperature,
                config.max_output_tokens,
            )?;
            let needed = request.char_len();
            if needed <= config.context_budget_chars {
                return Ok(request);
            }
            if start + 1 >= freeform.len() {
                return Err(ChatError::ContextBudget {
                    needed,
                    budget: config.context_budget_chars,
                });
            }
            start += 1;
        }
    }

    /// Closes the session; `override_limit` skips the message threshold,
    /// e.g. when the time limit is reached.
    pub fn finish(&mut self, override_limit: bool, config: &ChatConfig) -> Result<(), ChatError> {
        if self.phase == ChatPhase::Finished {
            return Err(ChatError::SessionFinished);
        }
        if !override_limit && !self.finish_eligible(config) {
            return Err(ChatError::NotEligible {
                exchanged: self.exchanged_count,
                required: config.finish_threshold,
            });
        }
        self.phase = ChatPhase::Finished;
        Ok(())
    }
}

fn check_budget(request: &CompletionRequest, config: &ChatConfig) -> Result<(), ChatError> {
    let needed = request.char_len();
    if needed > config.context_budget_chars {
        return Err(ChatError::ContextBudget {
            needed,
            budget: config.context_budget_chars,
        });
    }
    Ok(())
}

/// Whether the finish button is offered, at the default threshold of 16.
pub fn finish_eligibility(session: &ChatSession) -> bool {
    session.finish_eligible(&ChatConfig::default())
}
