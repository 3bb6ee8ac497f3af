use std::collections::BTreeMap;

use proptest::prelude::*;
use yonder_core::experiment::{equal_weights, read_participants_csv, write_participants_csv};
use yonder_core::life_story::PROFILE_FIELDS;
use yonder_core::llm::ChatTurn;
use yonder_core::measures::BatteryPhase;
use yonder_core::memory::{generate_fragments, MemoryConfig, ProbingSet};
use yonder_core::{
    apply_exclusions, assign_condition, delta, render_base_prompt, simulate, stub_complete, validate_profile,
    CompletionRequest, Measure, ScaleBattery, ScaleSet, SimulationConfig, StubBackend,
};

fn profile_strategy() -> impl Strategy<Value = BTreeMap<String, String>> {
    let text = "[a-zA-Z0-9 ,.'{}_\\-]{0,30}[a-z]";
    (prop::collection::vec(text, PROFILE_FIELDS.len()), 18u32..=59).prop_map(|(values, age)| {
        PROFILE_FIELDS
            .iter()
            .zip(values)
            .map(|(f, v)| (f.to_string(), if *f == "age" { age.to_string() } else { v }))
            .collect()
    })
}

fn battery_strategy(phase: BatteryPhase) -> impl Strategy<Value = ScaleBattery> {
    let set = ScaleSet::default();
    let ids: Vec<String> = set.item_ids(phase).into_iter().map(str::to_string).collect();
    prop::collection::vec(1u8..=7, ids.len()).prop_map(move |values| ScaleBattery {
        phase,
        responses: ids.iter().cloned().zip(values).collect(),
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn base_prompt_resolves_every_placeholder(answers in profile_strategy()) {
        let profile = validate_profile(&answers).unwrap();
        let prompt = render_base_prompt(&profile);
        prop_assert!(prompt.text.starts_with("The following is the interview of "));
        prop_assert_eq!(prompt.placeholder_bindings.len(), PROFILE_FIELDS.len());
        for field in PROFILE_FIELDS {
            let marker = format!("{{{field}}}");
            let injected = answers.values().any(|v| v.contains(&marker));
            prop_assert!(injected || !prompt.text.contains(&marker));
        }
        prop_assert!(prompt.text.contains(&answers["daily_life"]));
    }

    #[test]
    fn stub_backend_is_referentially_transparent(context in ".{0,60}", first in ".{1,40}", second in ".{1,40}") {
        let request = CompletionRequest::new(context.clone(), vec![ChatTurn::user(first.clone())], 0.7, 64).unwrap();
        let again = CompletionRequest::new(context.clone(), vec![ChatTurn::user(first.clone())], 0.7, 64).unwrap();
        prop_assert_eq!(stub_complete(&request), stub_complete(&again));
        let reply = stub_complete(&request).text;
        prop_assert!(reply.ends_with(&first));
        if first != second {
            let other = CompletionRequest::new(context, vec![ChatTurn::user(second)], 0.7, 64).unwrap();
            prop_assert_ne!(stub_complete(&other).text, reply);
        }
    }

    #[test]
    fn complete_batteries_validate_and_score_in_range(pre in battery_strategy(BatteryPhase::Pre), post in battery_strategy(BatteryPhase::Post)) {
        let set = ScaleSet::default();
        prop_assert!(set.validate(&pre).is_ok());
        prop_assert!(set.validate(&post).is_ok());
        for measure in Measure::ALL {
            let score = set.measure_score(&pre, measure).unwrap();
            prop_assert!((1.0..=7.0).contains(&score), "{measure:?} {score}");
        }
        let d = delta(&pre, &post, &set).unwrap();
        for measure in Measure::ALL {
            prop_assert!(d.get(measure).abs() <= 6.0);
        }
    }

    #[test]
    fn identical_batteries_have_zero_delta(pre in battery_strategy(BatteryPhase::Pre)) {
        let set = ScaleSet::default();
        let repeated: std::collections::BTreeSet<&str> = set.repeated_item_ids().into_iter().collect();
        let post = ScaleBattery {
            phase: BatteryPhase::Post,
            responses: set
                .item_ids(BatteryPhase::Post)
                .into_iter()
                .map(|id| (id.to_string(), if repeated.contains(id) { pre.responses[id] } else { 4 }))
                .collect(),
        };
        let d = delta(&pre, &post, &set).unwrap();
        for measure in Measure::ALL {
            prop_assert_eq!(d.get(measure), 0.0);
        }
    }

    #[test]
    fn assignment_is_a_pure_function(id in "[a-z0-9]{1,12}", seed in any::<u64>()) {
        let weights = equal_weights();
        prop_assert_eq!(assign_condition(&id, &weights, seed).unwrap(), assign_condition(&id, &weights, seed).unwrap());
    }
}

#[test]
fn fragments_do_not_depend_on_fanout() {
    let answers: BTreeMap<String, String> = PROFILE_FIELDS
        .iter()
        .map(|f| (f.to_string(), if *f == "age" { "24".into() } else { format!("about {f}") }))
        .collect();
    let profile = validate_profile(&answers).unwrap();
    let probing = ProbingSet::default();
    let run = |fanout| {
        let config = MemoryConfig {
            fanout,
            ..Default::default()
        };
        generate_fragments(&profile, &StubBackend, &probing, &config).unwrap()
    };
    let sequential = run(1);
    assert!(!sequential.is_empty());
    assert!(sequential.iter().enumerate().all(|(i, f)| f.order_index == i));
    for fanout in [2, 3, 16] {
        assert_eq!(run(fanout), sequential);
    }
}

#[test]
fn participant_csv_round_trips() {
    let config = SimulationConfig {
        n: 40,
        seed: 3,
        flagged: 5,
        ..Default::default()
    };
    let set = ScaleSet::default();
    let records = simulate(&config, &set, &StubBackend).unwrap();
    let mut first = Vec::new();
    write_participants_csv(&records, &set, &mut first).unwrap();
    let parsed = read_participants_csv(first.as_slice()).unwrap();
    assert_eq!(parsed.len(), 40);
    let mut second = Vec::new();
    write_participants_csv(&parsed, &set, &mut second).unwrap();
    assert_eq!(first, second);
    assert_eq!(apply_exclusions(parsed).kept.len(), 35);
}
