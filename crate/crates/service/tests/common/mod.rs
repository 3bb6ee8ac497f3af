#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde_json::{json, Value};
use yonder_core::aging::silhouette_placeholder;
use yonder_core::measures::BatteryPhase;
use yonder_core::{
    stub_complete, AppConfig, CompletionRequest, CompletionResult, GatewayError, ModelBackend, ScaleSet,
};
use yonder_service::Service;

/// Stub backend that can be switched into failing.
#[derive(Debug, Default)]
pub struct Switchable {
    pub failing: AtomicBool,
}

impl Switchable {
    pub fn set_failing(&self, v: bool) {
        self.failing.store(v, Ordering::SeqCst);
    }
}

impl ModelBackend for Switchable {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        if self.failing.load(Ordering::SeqCst) {
            Err(GatewayError::Timeout { attempts: 1 })
        } else {
            Ok(stub_complete(request))
        }
    }
}

pub fn config(dir: &Path) -> AppConfig {
    let mut config = AppConfig::default();
    config.server.data_dir = dir.to_path_buf();
    config.server.deterministic = true;
    config
}

pub fn service(dir: &Path) -> (Service, Arc<Switchable>) {
    let backend = Arc::new(Switchable::default());
    (Service::open(config(dir), backend.clone()).unwrap(), backend)
}

/// Every item answered with `value`, attention checks answered correctly.
pub fn responses(phase: BatteryPhase, value: u8) -> BTreeMap<String, u8> {
    let set = ScaleSet::default();
    let mut out: BTreeMap<String, u8> = set
        .item_ids(phase)
        .into_iter()
        .map(|id| (id.to_string(), value))
        .collect();
    for a in &set.attention_checks {
        out.insert(a.id.clone(), a.expected);
    }
    out
}

pub fn pre(value: u8) -> Value {
    json!({ "responses": responses(BatteryPhase::Pre, value) })
}

pub fn post(value: u8) -> Value {
    json!({ "responses": responses(BatteryPhase::Post, value), "demographics": { "age": "22" } })
}

pub fn answers() -> Value {
    json!({ "answers": {
        "name": "Ada",
        "age": "25",
        "pronoun_and_sexual_orientation": "she/her, straight",
        "place": "Boston",
        "people_in_life": "my mother and my brother",
        "low_point": "losing my first job",
        "turning_point": "I volunteered at a school",
        "proud": "finishing my degree",
        "life_project": "Science for Every Kid",
        "career": "biology teacher",
        "professional_accomplish": "I would like to be a full-time high school biology teacher in Boston",
        "financial_accomplish": "own a small house",
        "family_accomplish": "raise two kids",
        "where_to_live": "a house near the sea",
        "daily_life": "reading and gardening"
    }})
}

pub fn portrait_png() -> Vec<u8> {
    silhouette_placeholder(160, 200).image_bytes
}
