mod common;

use std::fs;
use std::sync::Arc;

use chrono::{TimeZone, Utc};
use common::{answers, portrait_png, post, pre, service};
use serde_json::json;
use yonder_core::aging::AgingProviderKind;
use yonder_core::{ChatError, Clock, Condition, Sender, SteppingClock};
use yonder_service::{ExportFilter, Service, ServiceError, Stage};

const USER_LINES: [&str; 6] = [
    "Hi, is it really you?",
    "What was the hardest year?",
    "Did the science program work out?",
    "Do you still live near the sea?",
    "What should I stop worrying about?",
    "Thank you.",
];

/// Runs the whole future_you flow and returns the session id.
fn future_you_run(s: &Service) -> String {
    let id = s.create_session(Some(Condition::FutureYou)).unwrap().session_id;
    s.advance(&id, Stage::Consent, &json!({ "consent": true })).unwrap();
    s.advance(&id, Stage::PreSurvey, &pre(3)).unwrap();
    let view = s.advance(&id, Stage::LifeStory, &answers()).unwrap();
    assert_eq!(view.envelope.stage, Stage::Portrait);
    let view = s.upload_portrait(&id, portrait_png()).unwrap();
    assert_eq!(view.envelope.stage, Stage::Aging);
    assert!(!view.aging_placeholder);
    let view = s.advance(&id, Stage::Aging, &json!({})).unwrap();
    assert_eq!(view.envelope.stage, Stage::Chat);
    assert_eq!(view.exchanged_count, 4);

    for (i, line) in USER_LINES.iter().enumerate() {
        let reply = s.post_message(&id, line).unwrap().unwrap();
        assert_eq!(reply.sender, Sender::FutureSelf);
        let view = s.get_session(&id).unwrap();
        assert_eq!(view.exchanged_count, 4 + 2 * (i + 1));
        assert_eq!(view.finish_eligible, view.exchanged_count >= 16);
        if view.exchanged_count == 14 {
            let err = s.advance(&id, Stage::Chat, &json!({})).unwrap_err();
            assert!(matches!(err, ServiceError::Chat(ChatError::NotEligible { exchanged: 14, required: 16 })));
        }
    }
    s.advance(&id, Stage::Chat, &json!({})).unwrap();
    let view = s.advance(&id, Stage::PostSurvey, &post(5)).unwrap();
    assert_eq!(view.envelope.stage, Stage::Done);
    id
}

#[test]
fn future_you_flow_is_reproducible_from_the_log() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (sa, _) = service(a.path());
    let (sb, _) = service(b.path());
    let id = future_you_run(&sa);
    assert_eq!(future_you_run(&sb), id);

    let log_a = fs::read(sa.store().log_path(&id)).unwrap();
    let log_b = fs::read(sb.store().log_path(&id)).unwrap();
    assert_eq!(log_a, log_b);
    assert_eq!(
        fs::read(a.path().join("index.jsonl")).unwrap(),
        fs::read(b.path().join("index.jsonl")).unwrap()
    );

    let live = sa.state(&id).unwrap();
    assert_eq!(sa.replay_from_log(&id).unwrap(), live);
    assert_eq!(live.transcript.len(), 16);
    let memory = live.memory.as_ref().unwrap();
    assert_eq!(memory.fragments.len(), 7);

    let reopened = Service::open(common::config(a.path()), Arc::new(yonder_core::StubBackend)).unwrap();
    assert_eq!(reopened.state(&id).unwrap(), live);
    let chat = live.chat().unwrap().unwrap();
    assert_eq!(chat.exchanged_count(), 16);
    assert_eq!(chat.phase(), yonder_core::ChatPhase::Finished);
    assert_eq!(chat.persona.aged_portrait_ref, live.portrait.as_ref().map(|p| p.aged_hash.clone()));

    for line in String::from_utf8(log_a).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["session_id"], id.as_str());
        assert!(v["timestamp"].as_str().unwrap().ends_with('Z'));
    }
}

#[test]
fn questionnaire_skips_the_chat() {
    let dir = tempfile::tempdir().unwrap();
    let (s, _) = service(dir.path());
    let id = s.create_session(Some(Condition::Questionnaire)).unwrap().session_id;
    s.advance(&id, Stage::Consent, &json!({ "consent": true })).unwrap();
    let view = s.advance(&id, Stage::PreSurvey, &pre(4)).unwrap();
    assert_eq!(view.envelope.stage, Stage::LifeStory);
    let view = s.advance(&id, Stage::LifeStory, &answers()).unwrap();
    assert_eq!(view.envelope.stage, Stage::PostSurvey);
    let state = s.state(&id).unwrap();
    assert!(state.profile.is_some());
    assert!(state.memory.is_none());
    assert!(state.transcript.is_empty());
    s.advance(&id, Stage::PostSurvey, &post(4)).unwrap();
    assert_eq!(s.get_session(&id).unwrap().envelope.stage, Stage::Done);
}

#[test]
fn chat_condition_talks_to_the_assistant() {
    let dir = tempfile::tempdir().unwrap();
    let (s, _) = service(dir.path());
    let id = s.create_session(Some(Condition::Chat)).unwrap().session_id;
    s.advance(&id, Stage::Consent, &json!({ "consent": true })).unwrap();
    let view = s.advance(&id, Stage::PreSurvey, &pre(4)).unwrap();
    assert_eq!(view.envelope.stage, Stage::Chat);
    assert_eq!(view.message_count, 0);
    let reply = s.post_message(&id, "hello").unwrap().unwrap();
    assert!(reply.text.contains("You are a helpful, friendly assistant"));
}

#[test]
fn control_goes_straight_to_the_post_survey() {
    let dir = tempfile::tempdir().unwrap();
    let (s, _) = service(dir.path());
    let id = s.create_session(Some(Condition::Control)).unwrap().session_id;
    s.advance(&id, Stage::Consent, &json!({ "consent": true })).unwrap();
    let view = s.advance(&id, Stage::PreSurvey, &pre(4)).unwrap();
    assert_eq!(view.envelope.stage, Stage::PostSurvey);
}

#[test]
fn double_submit_is_rejected_without_side_effects() {
    let dir = tempfile::tempdir().unwrap();
    let (s, _) = service(dir.path());
    let id = s.create_session(Some(Condition::Control)).unwrap().session_id;
    s.advance(&id, Stage::Consent, &json!({ "consent": true })).unwrap();
    let before = s.state(&id).unwrap();
    let log_before = fs::read(s.store().log_path(&id)).unwrap();
    let err = s.advance(&id, Stage::Consent, &json!({ "consent": true })).unwrap_err();
    assert!(matches!(
        err,
        ServiceError::WrongStage { expected: Stage::Consent, actual: Stage::PreSurvey }
    ));
    assert_eq!(s.state(&id).unwrap(), before);
    assert_eq!(fs::read(s.store().log_path(&id)).unwrap(), log_before);
}

#[test]
fn invalid_payloads_leave_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let (s, _) = service(dir.path());
    let id = s.create_session(Some(Condition::FutureYou)).unwrap().session_id;
    assert!(matches!(
        s.advance(&id, Stage::Consent, &json!({ "consent": false })),
        Err(ServiceError::InvalidPayload(_))
    ));
    s.advance(&id, Stage::Consent, &json!({ "consent": true })).unwrap();
    let mut partial = pre(4);
    partial["responses"].as_object_mut().unwrap().remove("eac_happy");
    assert!(matches!(s.advance(&id, Stage::PreSurvey, &partial), Err(ServiceError::Measures(_))));
    s.advance(&id, Stage::PreSurvey, &pre(4)).unwrap();
    let mut bad = answers();
    bad["answers"]["age"] = json!("12");
    assert!(matches!(s.advance(&id, Stage::LifeStory, &bad), Err(ServiceError::LifeStory(_))));
    assert_eq!(s.get_session(&id).unwrap().envelope.stage, Stage::LifeStory);
    assert!(matches!(
        s.upload_portrait(&id, portrait_png()),
        Err(ServiceError::WrongStage { .. })
    ));
    assert!(matches!(s.advance(&id, Stage::Portrait, &json!({})), Err(ServiceError::WrongStage { .. })));
}

#[test]
fn backstory_failure_keeps_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let (s, backend) = service(dir.path());
    let id = s.create_session(Some(Condition::FutureYou)).unwrap().session_id;
    s.advance(&id, Stage::Consent, &json!({ "consent": true })).unwrap();
    s.advance(&id, Stage::PreSurvey, &pre(4)).unwrap();
    backend.set_failing(true);
    assert!(matches!(s.advance(&id, Stage::LifeStory, &answers()), Err(ServiceError::Memory(_))));
    let state = s.state(&id).unwrap();
    assert_eq!(state.stage(), Stage::LifeStory);
    assert!(state.profile.is_none());
    backend.set_failing(false);
    s.advance(&id, Stage::LifeStory, &answers()).unwrap();
}

#[test]
fn failed_replies_are_kept_and_retryable() {
    let dir = tempfile::tempdir().unwrap();
    let (s, backend) = service(dir.path());
    let id = s.create_session(Some(Condition::Chat)).unwrap().session_id;
    s.advance(&id, Stage::Consent, &json!({ "consent": true })).unwrap();
    s.advance(&id, Stage::PreSurvey, &pre(4)).unwrap();
    backend.set_failing(true);
    let err = s.post_message(&id, "  are you there?  ").unwrap().unwrap_err();
    assert!(matches!(err, ServiceError::Chat(ChatError::Backend(_))));
    let msgs = s.messages_since(&id, 0).unwrap();
    assert_eq!(msgs.len(), 2);
    assert_eq!(msgs[0].text, "are you there?");
    assert_eq!(msgs[1].sender, Sender::System);
    assert!(s.get_session(&id).unwrap().reply_pending);
    assert!(matches!(
        s.post_message(&id, "hello?").unwrap(),
        Err(ServiceError::Chat(ChatError::ReplyPending))
    ));
    backend.set_failing(false);
    let reply = s.retry_reply(&id).unwrap().unwrap();
    assert_eq!(reply.index, 2);
    assert_eq!(s.messages_since(&id, 2).unwrap(), vec![reply]);
    assert_eq!(s.get_session(&id).unwrap().exchanged_count, 2);
    assert_eq!(s.replay_from_log(&id).unwrap(), s.state(&id).unwrap());
    assert!(matches!(
        s.post_message(&id, "   ").unwrap(),
        Err(ServiceError::Chat(ChatError::EmptyMessage))
    ));
}

#[test]
fn override_needs_the_time_limit() {
    let dir = tempfile::tempdir().unwrap();
    let (s, _) = service(dir.path());
    let clock = Arc::new(SteppingClock::new(Utc.with_ymd_and_hms(2024, 5, 1, 12, 0, 0).unwrap(), 60_000));
    let s = s.with_clock(clock.clone());
    let id = s.create_session(Some(Condition::FutureYou)).unwrap().session_id;
    s.advance(&id, Stage::Consent, &json!({ "consent": true })).unwrap();
    s.advance(&id, Stage::PreSurvey, &pre(4)).unwrap();
    s.advance(&id, Stage::LifeStory, &answers()).unwrap();
    s.upload_portrait(&id, portrait_png()).unwrap();
    s.advance(&id, Stage::Aging, &json!({})).unwrap();
    assert!(matches!(
        s.advance(&id, Stage::Chat, &json!({ "override": true })),
        Err(ServiceError::InvalidPayload(_))
    ));
    assert!(matches!(
        s.advance(&id, Stage::Chat, &json!({})),
        Err(ServiceError::Chat(ChatError::NotEligible { exchanged: 4, .. }))
    ));
    // One minute per reading.
    for _ in 0..30 {
        clock.now();
    }
    let view = s.advance(&id, Stage::Chat, &json!({ "override": true })).unwrap();
    assert_eq!(view.envelope.stage, Stage::PostSurvey);
    assert_eq!(view.exchanged_count, 4);
    let replayed = s.replay_from_log(&id).unwrap();
    assert!(replayed.chat_finished);
    assert_eq!(replayed, s.state(&id).unwrap());
}

#[test]
fn finished_sessions_are_frozen() {
    let dir = tempfile::tempdir().unwrap();
    let (s, _) = service(dir.path());
    let id = s.create_session(Some(Condition::Control)).unwrap().session_id;
    s.advance(&id, Stage::Consent, &json!({ "consent": true })).unwrap();
    s.advance(&id, Stage::PreSurvey, &pre(4)).unwrap();
    s.advance(&id, Stage::PostSurvey, &post(4)).unwrap();
    let log = fs::read(s.store().log_path(&id)).unwrap();
    for stage in [Stage::Consent, Stage::PostSurvey, Stage::Done] {
        assert!(matches!(s.advance(&id, stage, &json!({})), Err(ServiceError::Finished)));
    }
    assert!(matches!(s.post_message(&id, "hi"), Err(ServiceError::Finished)));
    assert!(matches!(s.retry_reply(&id), Err(ServiceError::Finished)));
    assert!(matches!(s.upload_portrait(&id, portrait_png()), Err(ServiceError::Finished)));
    assert_eq!(fs::read(s.store().log_path(&id)).unwrap(), log);
}

#[test]
fn failing_aging_falls_back_to_a_silhouette() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = common::config(dir.path());
    config.aging.provider = AgingProviderKind::External;
    config.aging.endpoint_url = "http://127.0.0.1:9/age".into();
    config.aging.timeout_ms = 500;
    let s = Service::open(config, Arc::new(yonder_core::StubBackend)).unwrap();
    let id = s.create_session(Some(Condition::FutureYou)).unwrap().session_id;
    s.advance(&id, Stage::Consent, &json!({ "consent": true })).unwrap();
    s.advance(&id, Stage::PreSurvey, &pre(4)).unwrap();
    s.advance(&id, Stage::LifeStory, &answers()).unwrap();
    let view = s.upload_portrait(&id, portrait_png()).unwrap();
    assert!(view.aging_placeholder);
    let state = s.state(&id).unwrap();
    let p = state.portrait.unwrap();
    assert_eq!(p.provider, "placeholder");
    assert_eq!((p.width, p.height), (160, 200));
    assert!(s.blobs().get(&p.aged_hash).is_ok());
    assert!(matches!(s.upload_portrait(&id, b"not an image".to_vec()), Err(ServiceError::WrongStage { .. })));
}

#[test]
fn bad_images_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (s, _) = service(dir.path());
    let id = s.create_session(Some(Condition::FutureYou)).unwrap().session_id;
    s.advance(&id, Stage::Consent, &json!({ "consent": true })).unwrap();
    s.advance(&id, Stage::PreSurvey, &pre(4)).unwrap();
    s.advance(&id, Stage::LifeStory, &answers()).unwrap();
    assert!(matches!(s.upload_portrait(&id, b"not an image".to_vec()), Err(ServiceError::Aging(_))));
    assert_eq!(s.get_session(&id).unwrap().envelope.stage, Stage::Portrait);
}

#[test]
fn export_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let (s, _) = service(dir.path());
    let empty = String::from_utf8(s.export_dataset(&ExportFilter::default()).unwrap()).unwrap();
    assert_eq!(empty.lines().count(), 1);
    assert!(empty.starts_with("participant_id,condition"));

    for c in [Condition::Control, Condition::Questionnaire, Condition::Control] {
        let id = s.create_session(Some(c)).unwrap().session_id;
        s.advance(&id, Stage::Consent, &json!({ "consent": true })).unwrap();
        s.advance(&id, Stage::PreSurvey, &pre(3)).unwrap();
        if c == Condition::Questionnaire {
            s.advance(&id, Stage::LifeStory, &answers()).unwrap();
        }
        s.advance(&id, Stage::PostSurvey, &post(5)).unwrap();
    }
    let unfinished = s.create_session(Some(Condition::Chat)).unwrap().session_id;
    s.advance(&unfinished, Stage::Consent, &json!({ "consent": true })).unwrap();
    s.advance(&unfinished, Stage::PreSurvey, &pre(3)).unwrap();

    let first = s.export_dataset(&ExportFilter::default()).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert_eq!(s.export_dataset(&ExportFilter::default()).unwrap(), first);
    let reopened = Service::open(common::config(dir.path()), Arc::new(yonder_core::StubBackend)).unwrap();
    assert_eq!(reopened.export_dataset(&ExportFilter::default()).unwrap(), first);

    let control = ExportFilter {
        condition: Some(Condition::Control),
        include_incomplete: false,
    };
    assert_eq!(String::from_utf8(s.export_dataset(&control).unwrap()).unwrap().lines().count(), 3);
    let all = ExportFilter {
        condition: None,
        include_incomplete: true,
    };
    assert_eq!(String::from_utf8(s.export_dataset(&all).unwrap()).unwrap().lines().count(), 5);

    let records = yonder_core::experiment::read_participants_csv(first.as_slice()).unwrap();
    assert_eq!(records.len(), 3);
    assert!(records.iter().all(|r| r.attention_passed && r.post.is_some()));
    assert!(matches!(s.report(), Err(ServiceError::Experiment(_))));
}

#[test]
fn creation_is_atomic() {
    let dir = tempfile::tempdir().unwrap();
    let (s, _) = service(dir.path());
    fs::create_dir(dir.path().join("index.jsonl")).unwrap();
    assert!(matches!(s.create_session(None), Err(ServiceError::Storage(_))));
    assert!(s.session_ids().is_empty());
    assert_eq!(fs::read_dir(dir.path().join("sessions")).unwrap().count(), 0);
}

#[test]
fn unknown_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let (s, _) = service(dir.path());
    assert!(matches!(s.get_session("nope"), Err(ServiceError::NotFound(_))));
    assert!(matches!(s.post_message("nope", "x"), Err(ServiceError::NotFound(_))));
}

#[test]
fn assignment_without_override_uses_the_assigner() {
    let dir = tempfile::tempdir().unwrap();
    let (s, _) = service(dir.path());
    let config = s.config().clone();
    for _ in 0..8 {
        let env = s.create_session(None).unwrap();
        let expected = yonder_core::assign_condition(
            &env.session_id,
            &config.experiment.weights,
            config.experiment.seed,
        )
        .unwrap();
        assert_eq!(env.condition, expected);
    }
}
