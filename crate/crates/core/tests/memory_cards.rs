use std::sync::Arc;

use drivelab_core::expert::{Author, ExpertFeedback};
use drivelab_core::fixtures::{self, ALLEY_QUERY, NARROW_LANE_ADVICE};
use drivelab_core::harness::{assess_card, load_cards, CardError};
use drivelab_core::llm::ScriptedBackend;
use drivelab_core::memory::{reflect, LocalEmbedder, MemoryBank, MemoryQuery};
use drivelab_core::perception::ToolCatalog;
use drivelab_core::react::{run_decision_cycle, CycleInputs, StepStatus};
use drivelab_core::sim::MetaAction;

fn narrow_feedback() -> ExpertFeedback {
    ExpertFeedback {
        episode_id: "narrow-lane".into(),
        step_index: 0,
        expert_action: Some(MetaAction::Idle),
        advice_text: NARROW_LANE_ADVICE.into(),
        author: Author::Human,
    }
}

/// Bank holding the reflected narrow-lane lesson plus two unrelated entries.
fn seeded_bank() -> MemoryBank {
    let bank = MemoryBank::local();
    bank.insert_manual(
        "a truck ahead carrying traffic cones in its cargo bed",
        "keep speed",
        "",
    )
    .unwrap();
    let report = reflect(
        &fixtures::narrow_lane_transcript(),
        &narrow_feedback(),
        &fixtures::narrow_lane_reflection_script(),
    )
    .unwrap();
    bank.insert(&report, Some(narrow_feedback().origin_key()))
        .unwrap();
    bank.insert_manual(
        "vehicle merging from an on-ramp into the rightmost lane",
        "make room",
        "",
    )
    .unwrap();
    bank
}

#[test]
fn reflection_summary_names_the_situation() {
    let bank = seeded_bank();
    let e = &bank.snapshot()[1];
    assert!(e.scenario_summary.contains("same lane"));
    assert!(e.scenario_summary.contains("towards each other"));
    assert!(e.proper_decision.contains("keep going"));
}

#[test]
fn paraphrased_alley_query_retrieves_the_lesson_first() {
    // Similarities from an independent FNV-1a feature-hashing script:
    // narrow 0.5143028508594515, cones 0.2204155075111935, merge 0.11020775375559674.
    let bank = seeded_bank();
    let hits = bank
        .retrieve(&MemoryQuery {
            query_text: ALLEY_QUERY.into(),
            k: 3,
            min_similarity: 0.0,
        })
        .unwrap();
    let ids: Vec<&str> = hits.iter().map(|(e, _)| e.id.as_str()).collect();
    assert_eq!(ids, ["mem-00002", "mem-00001", "mem-00003"]);
    assert_eq!(hits[0].0.id, "mem-00002");
    assert!((hits[0].1 - 0.5143028508594515).abs() < 1e-9);
    assert!((hits[1].1 - 0.2204155075111935).abs() < 1e-9);
    assert!((hits[2].1 - 0.11020775375559674).abs() < 1e-9);
}

#[test]
fn alley_card_prompt_carries_the_memory_line() {
    let bank = seeded_bank();
    let card = fixtures::card(fixtures::NARROW_ALLEY);
    let with = assess_card(&card, &fixtures::alley_script(), Some(&bank), 0.3).unwrap();
    assert!(with.prompt.contains(
        "Past experience: in scenario two vehicles in the same lane moving towards each other"
    ));
    assert_eq!(with.retrieved, vec!["mem-00002".to_string()]);
    assert_eq!(with.matched, Some(true));
    let without = assess_card(&card, &fixtures::alley_script(), None, 0.3).unwrap();
    assert!(!without.prompt.contains("Past experience"));
    assert_eq!(without.matched, Some(false));
}

#[test]
fn cones_cards_match_their_labels() {
    let backend = fixtures::card_script();
    let truck = assess_card(
        &fixtures::card(fixtures::CONES_ON_TRUCK),
        &backend,
        None,
        0.3,
    )
    .unwrap();
    assert!(!truck.assessment.hazardous);
    assert!(truck.assessment.advice.contains("no need to slow down"));
    assert_eq!(truck.matched, Some(true));
    let ground = assess_card(
        &fixtures::card(fixtures::CONES_ON_GROUND),
        &backend,
        None,
        0.3,
    )
    .unwrap();
    assert!(ground.assessment.hazardous);
    assert!(ground
        .assessment
        .advice
        .to_lowercase()
        .contains("decelerate"));
    assert_eq!(ground.matched, Some(true));
}

#[test]
fn shipped_card_directory_loads_sorted() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/cards");
    let ids: Vec<String> = load_cards(std::path::Path::new(dir))
        .unwrap()
        .into_iter()
        .map(|c| c.id)
        .collect();
    assert_eq!(ids, ["cones-on-ground", "cones-on-truck"]);
}

#[test]
fn unparseable_assessment_keeps_raw_output() {
    let backend = ScriptedBackend::constant("It looks fine to me.");
    match assess_card(
        &fixtures::card(fixtures::CONES_ON_TRUCK),
        &backend,
        None,
        0.3,
    ) {
        Err(CardError::Unparseable {
            label, raw_output, ..
        }) => {
            assert_eq!(label, "HAZARDOUS");
            assert_eq!(raw_output, "It looks fine to me.");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn bank_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bank.jsonl");
    let bank = MemoryBank::open(&path, Arc::new(LocalEmbedder)).unwrap();
    bank.insert_manual(
        "two vehicles in the same lane moving towards each other",
        "keep going",
        "",
    )
    .unwrap();
    let again = MemoryBank::open(&path, Arc::new(LocalEmbedder)).unwrap();
    assert_eq!(*again.snapshot(), *bank.snapshot());
}

#[test]
fn scripted_lane_change_cycle_checks_each_action() {
    let world = fixtures::lane_change_world();
    let (d, t) = run_decision_cycle(
        &world,
        &fixtures::lane_change_script(),
        &ToolCatalog::standard(),
        &CycleInputs::default(),
    )
    .unwrap();
    assert_eq!(d.action, MetaAction::LaneLeft);
    assert!(!d.fallback);
    assert_eq!(d.step_count, 6);
    let obs: Vec<&str> = t.steps.iter().map(|s| s.observation.as_str()).collect();
    assert_eq!(obs[0], "Available actions: LANE_LEFT, IDLE, FASTER, SLOWER");
    assert!(
        obs[1].starts_with("FASTER is unsafe: conflict with veh4"),
        "{}",
        obs[1]
    );
    assert!(obs[2].starts_with("IDLE is safe"), "{}", obs[2]);
    assert!(
        obs[3].starts_with("Changing to lane_2 affects"),
        "{}",
        obs[3]
    );
    assert!(
        obs[4].starts_with("LANE_LEFT is safe with veh1"),
        "{}",
        obs[4]
    );
    assert!(t.steps[..5].iter().all(|s| s.status == StepStatus::Tool));
    assert_eq!(t.steps[5].status, StepStatus::Final);
}
