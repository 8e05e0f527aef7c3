use drivelab_core::fixtures::{malformed_outputs, synthetic_transcript};
use drivelab_core::react::{parse_llm_output, render_outcome, MissingMarker, ParseOutcome};
use proptest::prelude::*;

proptest! {
    #[test]
    fn render_parse_render_is_a_fixed_point(seed in any::<u64>()) {
        for step in synthetic_transcript(seed) {
            let text = render_outcome(&step);
            let parsed = parse_llm_output(&text);
            prop_assert!(!parsed.discarded_observation);
            prop_assert_eq!(&parsed.outcome, &step);
            prop_assert_eq!(render_outcome(&parsed.outcome), text);
        }
    }

    #[test]
    fn appended_observation_is_discarded(seed in any::<u64>(), tail in "[ -~]{0,40}") {
        let step = synthetic_transcript(seed).remove(0);
        let text = format!("{}\nObservation: {tail}", render_outcome(&step));
        let parsed = parse_llm_output(&text);
        prop_assert!(parsed.discarded_observation);
        prop_assert_eq!(parsed.outcome, step);
    }

    #[test]
    fn arbitrary_text_never_panics(text in "\\PC{0,200}") {
        let _ = parse_llm_output(&text);
    }
}

#[test]
fn malformed_corpus_yields_first_missing_marker() {
    let corpus = malformed_outputs();
    assert_eq!(corpus.len(), 50);
    for kind in [
        MissingMarker::ActionOrFinalAnswer,
        MissingMarker::ActionInput,
        MissingMarker::DecisionLine,
        MissingMarker::ToolName,
    ] {
        assert!(
            corpus.iter().any(|(_, d)| *d == kind),
            "corpus lacks {kind:?}"
        );
    }
    for (text, expected) in corpus {
        match parse_llm_output(&text).outcome {
            ParseOutcome::Malformed {
                diagnostic,
                raw_text,
            } => {
                assert_eq!(diagnostic, expected, "{text:?}");
                assert_eq!(raw_text, text);
            }
            other => panic!("{text:?} parsed as {other:?}"),
        }
    }
}

#[test]
fn final_answer_wins_over_action() {
    let p = parse_llm_output(
        "Action: describe_scene\nAction Input: {}\nFinal Answer: stay\ndecision: IDLE",
    );
    assert!(
        matches!(p.outcome, ParseOutcome::FinalDecision { ref action_token, .. } if action_token == "IDLE")
    );
}
