use proptest::prelude::*;

use streamchat::decoder::{plan_chunks, plan_from_json, plan_to_json, DecoderConfig};
use streamchat::framing::{causal_conv1d, frames_in, CausalConv1d};
use streamchat::latency::{total_latency, LatencyScenario, StageCost, StageCosts};
use streamchat::mixture::{parse_token_count, plan_mixture, CorpusSpec, Policy};
use streamchat::sft::{build_conversation, TurnSample};
use streamchat::template::{
    deinterleave, interleave, read_stream, validate, write_stream, Modality, TemplateConfig,
};
use streamchat::vq::{squared_distance, Codebook, CodebookConfig};

fn template() -> impl Strategy<Value = TemplateConfig> {
    (1usize..=20, 1usize..=40).prop_map(|(t, s)| TemplateConfig::new(t, s).unwrap())
}

fn points(n: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0f64..5.0, dim), 1..n)
}

proptest! {
    #[test]
    fn quantize_picks_a_nearest_code(
        (rows, inputs) in (1usize..6).prop_flat_map(|d| (points(12, d), points(40, d)))
    ) {
        let cb = Codebook::from_rows(&rows, CodebookConfig::new(0.0)).unwrap();
        let q = cb.quantize(&inputs).unwrap();
        for (x, (&k, &dist)) in inputs.iter().zip(q.indices.iter().zip(&q.distances)) {
            let best = rows.iter().map(|r| squared_distance(r, x)).fold(f64::INFINITY, f64::min);
            prop_assert_eq!(dist, best);
            prop_assert_eq!(squared_distance(&rows[k], x), best);
            prop_assert!(rows[..k].iter().all(|r| squared_distance(r, x) > best));
        }
    }

    #[test]
    fn usage_stays_in_unit_interval(
        (rows, batches) in (1usize..4).prop_flat_map(|d| (points(8, d), prop::collection::vec(points(30, d), 1..20)))
    ) {
        let mut cb = Codebook::from_rows(&rows, CodebookConfig::new(0.5)).unwrap();
        for batch in &batches {
            let q = cb.quantize(batch).unwrap();
            cb.ema_update(batch, &q.indices).unwrap();
            prop_assert!(cb.usage().iter().all(|&u| (0.0..=1.0).contains(&u)));
            prop_assert!(cb.ema_cluster_size().iter().all(|&c| c >= 0.0));
        }
        let back = Codebook::from_json(&cb.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, cb);
    }

    #[test]
    fn reset_only_touches_dead_codes(
        (rows, batch) in (1usize..4).prop_flat_map(|d| (points(8, d), points(30, d))),
        seed in any::<u64>(),
    ) {
        let mut cb = Codebook::from_rows(&rows, CodebookConfig::new(0.3)).unwrap();
        let q = cb.quantize(&batch).unwrap();
        cb.ema_update(&batch, &q.indices).unwrap();
        let dead = cb.dead_codes();
        let before = cb.clone();
        let reset = cb.reset_dead_codes(&batch, seed).unwrap();
        prop_assert_eq!(&reset, &dead);
        for k in 0..cb.size() {
            if dead.contains(&k) {
                prop_assert!(batch.iter().any(|x| x.as_slice() == cb.vector(k)));
            } else {
                prop_assert_eq!(cb.vector(k), before.vector(k));
            }
        }
    }

    #[test]
    fn streaming_conv_matches_batch(
        signal in prop::collection::vec(-1.0f64..1.0, 0..120),
        kernel in prop::collection::vec(-1.0f64..1.0, 1..9),
        cuts in prop::collection::vec(0usize..120, 0..6),
    ) {
        let whole = causal_conv1d(&signal, &kernel).unwrap();
        let mut cuts: Vec<usize> = cuts.into_iter().map(|c| c.min(signal.len())).collect();
        cuts.sort_unstable();
        let mut conv = CausalConv1d::new(kernel).unwrap();
        let mut pieces = Vec::new();
        let mut from = 0;
        for cut in cuts.into_iter().chain([signal.len()]) {
            pieces.extend(conv.process(&signal[from..cut]));
            from = cut;
        }
        prop_assert_eq!(pieces, whole);
    }

    #[test]
    fn frame_count_is_monotone(a in 0.0f64..600.0, b in 0.0f64..600.0, fr in prop::sample::select(vec![6.25, 12.5, 25.0, 50.0])) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(frames_in(lo, fr).unwrap() <= frames_in(hi, fr).unwrap());
    }

    #[test]
    fn interleave_is_valid_and_invertible(
        cfg in template(),
        text in prop::collection::vec(any::<u32>(), 0..80),
        speech in prop::collection::vec(any::<u32>(), 0..160),
    ) {
        let stream = interleave(&text, &speech, &cfg);
        prop_assert_eq!(stream.len(), text.len() + speech.len());
        validate(&stream, &cfg).unwrap();
        let mut buf = Vec::new();
        write_stream(&mut buf, &stream).unwrap();
        prop_assert_eq!(read_stream(&buf[..]).unwrap(), stream.clone());
        prop_assert_eq!(deinterleave(&stream, &cfg).unwrap(), (text, speech));
    }

    #[test]
    fn speech_token_positions_agree_with_kinds(cfg in template(), n in 1usize..500) {
        let p = cfg.position_of_speech_token(n) - 1;
        prop_assert_eq!(cfg.position_kind(p), Modality::Speech);
        let before = (0..p).filter(|&q| cfg.position_kind(q) == Modality::Speech).count();
        prop_assert_eq!(before, n - 1);
    }

    #[test]
    fn swapped_pair_is_rejected(cfg in template(), periods in 1usize..4) {
        let text: Vec<u32> = (0..(cfg.text_chunk * periods) as u32).collect();
        let speech: Vec<u32> = (0..(cfg.speech_chunk * periods) as u32).collect();
        let mut stream = interleave(&text, &speech, &cfg);
        let boundary = cfg.text_chunk;
        stream.swap(boundary - 1, boundary);
        prop_assert!(validate(&stream, &cfg).is_err());
    }

    #[test]
    fn chunk_plans_tile_and_round_trip(total in 0usize..400, tpb in 1usize..40) {
        let cfg = DecoderConfig::new(tpb as f64 / 12.5, 12.5).unwrap();
        let plan = plan_chunks(total, &cfg);
        prop_assert_eq!(plan.len(), total.div_ceil(tpb));
        prop_assert_eq!(plan.iter().map(|c| c.len()).sum::<usize>(), total);
        for w in plan.windows(2) {
            prop_assert_eq!(w[0].token_end, w[1].token_start);
            prop_assert_eq!(w[0].audio_end_s, w[1].audio_start_s);
        }
        if let Some(last) = plan.last() {
            prop_assert!((last.audio_end_s - total as f64 / 12.5).abs() < 1e-9);
        }
        prop_assert_eq!(plan_from_json(&plan_to_json(&plan).unwrap()).unwrap(), plan);
    }

    #[test]
    fn latency_grows_with_user_speech(a in 0.0f64..30.0, b in 0.0f64..30.0, base in 0.0f64..0.2, per in 0.0f64..0.05) {
        let costs = StageCosts::uniform(StageCost::affine(base, per));
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let short = total_latency(&LatencyScenario::new(lo, costs.clone())).unwrap();
        let long = total_latency(&LatencyScenario::new(hi, costs)).unwrap();
        prop_assert!(short.total <= long.total);
        prop_assert_eq!(short.t_decode, long.t_decode);
        prop_assert_eq!(
            short.total,
            short.t_tokenize + short.t_prefill + short.t_decode + short.t_speech_decode
        );
    }

    #[test]
    fn remainder_fills_the_budget(
        sizes in prop::collection::vec(1u64..1_000_000, 1..5),
        ratio in 0.0f64..0.4,
        epochs in 0.0f64..1.0,
    ) {
        let budget = 10_000_000u64;
        let mut corpora = vec![
            CorpusSpec::new("text", 0, sizes[0], Policy::FixedRatio(ratio)),
            CorpusSpec::new("rest", sizes[0], sizes[0], Policy::Remainder),
        ];
        for (i, &s) in sizes.iter().enumerate().skip(1) {
            corpora.push(CorpusSpec::new(format!("c{i}"), s, 0, Policy::FixedEpochs(epochs)));
        }
        let plan = plan_mixture(budget, &corpora).unwrap();
        prop_assert_eq!(plan.total_tokens, budget);
        prop_assert_eq!(plan.allocations.iter().map(|a| a.tokens).sum::<u64>(), budget);
        for a in &plan.allocations {
            prop_assert_eq!(a.speech_tokens + a.text_tokens, a.tokens);
            prop_assert!((a.epochs - a.tokens as f64 / a.corpus_tokens as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn plain_counts_parse_exactly(n in any::<u64>()) {
        prop_assert_eq!(parse_token_count(&n.to_string()).unwrap(), n);
    }

    #[test]
    fn conversations_supervise_only_the_last_answer(
        cfg in template(),
        turns in prop::collection::vec(
            (prop::collection::vec(any::<u32>(), 0..20), prop::collection::vec(any::<u32>(), 0..20), prop::collection::vec(any::<u32>(), 1..40)),
            1..5,
        ),
    ) {
        let turns: Vec<TurnSample> = turns
            .into_iter()
            .map(|(q, t, s)| TurnSample { q_speech: q, q_text: None, a_text: t, a_speech: s })
            .collect();
        let examples = build_conversation(&turns, &cfg).unwrap();
        for (ex, turn) in examples.iter().zip(&turns) {
            ex.validate().unwrap();
            prop_assert_eq!(ex.supervised(), turn.a_text.len() + turn.a_speech.len());
            let first = ex.loss_mask.iter().position(|&m| m).unwrap();
            prop_assert!(ex.loss_mask[first..].iter().all(|&m| m));
        }
    }
}
