//! Deterministic inputs shared by the benchmarks.

use std::collections::BTreeMap;

use yonder_core::stats::SampleGroups;
use yonder_core::life_story::PROFILE_FIELDS;
use yonder_core::{validate_profile, LifeStoryProfile};

/// Four groups of `n` values on a fixed low-discrepancy grid, shifted per
/// group.
pub fn groups(n: usize) -> SampleGroups {
    let mut out = SampleGroups::new("bench");
    for g in 0..4 {
        let values = (0..n)
            .map(|i| {
                let u = ((i as f64 + 0.5) * 0.618_033_988_75 + g as f64 * 0.1).fract();
                (u - 0.5) * 3.0 + g as f64 * 0.2
            })
            .collect();
        out = out.with_group(format!("g{g}"), values);
    }
    out
}

pub fn profile() -> LifeStoryProfile {
    let mut answers: BTreeMap<String, String> = PROFILE_FIELDS
        .iter()
        .map(|f| (f.to_string(), format!("an answer about {}", f.replace('_', " "))))
        .collect();
    answers.insert("age".into(), "27".into());
    validate_profile(&answers).expect("bench profile is valid")
}
