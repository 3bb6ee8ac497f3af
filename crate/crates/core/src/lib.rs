//! Core of the yonder future-self study platform.
//!
//! The pipeline runs from a validated [`LifeStoryProfile`] through a
//! generated [`FutureMemory`] to a [`ChatSession`] with the persona, and from
//! pre/post [`ScaleBattery`] responses to the per-measure [`Report`].

pub mod aging;
pub mod chat;
pub mod config;
pub mod experiment;
pub mod life_story;
pub mod llm;
pub mod measures;
pub mod memory;
pub mod simulate;
pub mod stats;
pub mod template;

pub use aging::{age_progress, AgedPortrait, AgingConfig, AgingError, ContentStore, Portrait};
pub use chat::{
    finish_eligibility, opening_script, ChatConfig, ChatError, ChatPhase, ChatSession, Clock, Message,
    PersonaContext, Sender, SteppingClock, SystemClock,
};
pub use config::{AppConfig, ConfigError};
pub use experiment::{
    apply_exclusions, assign_condition, build_report, build_report_from_deltas, session_time_bounds,
    Condition, DeltaRecord, ExperimentError, ParticipantRecord, Report, ReportRow,
};
pub use life_story::{question_schema, validate_profile, LifeStoryError, LifeStoryProfile, Phase};
pub use llm::{
    stub_complete, BackendConfig, CompletionRequest, CompletionResult, GatewayError, ModelBackend,
    StubBackend,
};
pub use measures::{delta, score_scale, DeltaScores, Measure, MeasuresError, ScaleBattery, ScaleSet};
pub use memory::{
    assemble_backstory, generate_fragments, probing_questions, render_base_prompt, BasePrompt,
    FutureMemory, MemoryError, MemoryFragment,
};
pub use simulate::{simulate, SimulationConfig, SimulationError};
pub use stats::{analyze_measure, AnalysisOptions, AnalysisPath, AnalysisResult, SampleGroups};
