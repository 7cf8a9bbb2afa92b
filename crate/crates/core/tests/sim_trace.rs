mod common;

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use streamchat::latency::{LatencyScenario, StageCost, StageCosts};
use streamchat::sim::{
    emit_trace, parse_trace, read_trace, run_scenario, write_trace, SimRun, SimScenario, Stage,
    TraceEvent, TraceFormat,
};
use streamchat::template::{validate, Modality, TaggedToken, TemplateConfig};

fn default_affine() -> SimScenario {
    LatencyScenario::new(4.0, StageCosts::uniform(StageCost::affine(0.0, 0.01))).into()
}

fn check_causality(run: &SimRun, template: &TemplateConfig) {
    let events = &run.events;
    assert!(events.windows(2).all(|w| w[0].t <= w[1].t), "time went backwards");
    assert_eq!(events[0].stage, Stage::Tokenize);

    let prefill = events
        .iter()
        .position(|e| e.stage == Stage::Prefill)
        .expect("prefill event");
    let mut speech_decoded = 0usize;
    let mut speech_decode_at = Vec::new();
    let mut chunk_ready_at = HashMap::new();
    let mut lm_stream = Vec::new();
    for (i, e) in events.iter().enumerate() {
        match e.stage {
            Stage::Tokenize => assert!(i < prefill),
            Stage::Prefill => {}
            Stage::Decode => {
                assert!(i > prefill, "decode before prefill completed");
                let kind: Modality = serde_json::from_value(e.payload["kind"].clone()).unwrap();
                let id = e.payload["id"].as_u64().unwrap() as u32;
                lm_stream.push(TaggedToken { kind, id });
                if kind == Modality::Speech {
                    speech_decoded += 1;
                    speech_decode_at.push(e.t);
                }
            }
            Stage::ChunkReady => {
                let end = e.payload["token_end"].as_u64().unwrap() as usize;
                assert!(end <= speech_decoded, "chunk ready before its last token");
                assert!(speech_decode_at[end - 1] <= e.t);
                chunk_ready_at.insert(e.payload["n"].as_u64().unwrap(), e.t);
            }
            Stage::AudioOut => {
                let n = e.payload["n"].as_u64().unwrap();
                let ready = chunk_ready_at.get(&n).expect("audio before chunk ready");
                assert!(*ready <= e.t);
            }
        }
    }
    validate(&lm_stream, template).expect("LM output follows the template");
}

#[test]
fn default_scenario_is_causal() {
    let scenario = default_affine();
    let run = run_scenario(&scenario, 3).unwrap();
    check_causality(&run, &scenario.latency.template);
    assert!((run.first_audio().unwrap() - 0.84).abs() < 1e-12);
}

#[test]
fn audio_duration_matches_speech_tokens() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..40 {
        let scenario = common::grid_scenario(&mut rng, i);
        let run = run_scenario(&scenario, i as u64).unwrap();
        let fr = scenario.latency.frame.frame_rate;
        assert_eq!(run.audio_seconds(), run.speech_tokens as f64 / fr, "scenario {i}");
        let outs = run.events.iter().filter(|e| e.stage == Stage::AudioOut).count();
        let chunks = run.events.iter().filter(|e| e.stage == Stage::ChunkReady).count();
        assert_eq!(outs, chunks);
        assert!(run.events.windows(2).all(|w| w[0].t <= w[1].t));
    }
}

#[test]
fn grid_runs_are_causal() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for i in 0..30 {
        let scenario = common::grid_scenario(&mut rng, i);
        let run = run_scenario(&scenario, 99).unwrap();
        check_causality(&run, &scenario.latency.template);
    }
}

fn bytes(events: &[TraceEvent], format: TraceFormat) -> Vec<u8> {
    let mut buf = Vec::new();
    write_trace(&mut buf, events, format).unwrap();
    buf
}

#[test]
fn same_seed_same_bytes() {
    let scenario = default_affine();
    for format in [TraceFormat::Json, TraceFormat::Csv] {
        let a = bytes(&run_scenario(&scenario, 5).unwrap().events, format);
        let b = bytes(&run_scenario(&scenario, 5).unwrap().events, format);
        assert_eq!(a, b);
    }
}

#[test]
fn seed_changes_content_not_timing() {
    let scenario = default_affine();
    let a = run_scenario(&scenario, 1).unwrap();
    let b = run_scenario(&scenario, 2).unwrap();
    assert_ne!(
        bytes(&a.events, TraceFormat::Json),
        bytes(&b.events, TraceFormat::Json)
    );
    assert_eq!(a.first_audio(), b.first_audio());
}

#[test]
fn files_round_trip_in_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let events = run_scenario(&default_affine(), 8).unwrap().events;
    let mut multisets = Vec::new();
    for (format, name) in [(TraceFormat::Json, "trace.jsonl"), (TraceFormat::Csv, "trace.csv")] {
        let path = dir.path().join(name);
        emit_trace(&events, format, &path).unwrap();
        let back = read_trace(&path, format).unwrap();
        assert_eq!(back, events);
        let mut keys: Vec<(u64, &'static str)> =
            back.iter().map(|e| (e.t.to_bits(), e.stage.as_str())).collect();
        keys.sort();
        multisets.push(keys);
    }
    assert_eq!(multisets[0], multisets[1]);
}

#[test]
fn three_event_csv() {
    let events = run_scenario(&default_affine(), 0).unwrap().events[..3].to_vec();
    let csv = bytes(&events, TraceFormat::Csv);
    let text = String::from_utf8(csv.clone()).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("t,stage,payload\n"));
    assert_eq!(parse_trace(&csv[..], TraceFormat::Csv).unwrap(), events);
}

#[test]
fn unwritable_path_reports_it() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("missing").join("trace.csv");
    let err = emit_trace(&[], TraceFormat::Csv, &path).unwrap_err();
    assert!(err.to_string().contains("missing"), "{err}");
}
