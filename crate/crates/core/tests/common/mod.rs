#![allow(dead_code)]

use rand::Rng;
use streamchat::decoder::DecoderConfig;
use streamchat::latency::{LatencyScenario, StageCost, StageCosts};
use streamchat::sim::SimScenario;
use streamchat::template::TemplateConfig;
use streamchat::framing::FrameConfig;

pub const FRAME_RATES: [f64; 4] = [6.25, 12.5, 25.0, 50.0];

/// Table costs span this many units so every stage lookup stays in range.
pub const TABLE_SPAN: f64 = 10_000.0;

pub fn random_cost<R: Rng>(rng: &mut R, kind: usize) -> StageCost {
    match kind % 3 {
        0 => StageCost::constant(rng.random_range(0.0..0.5)),
        1 => StageCost::affine(rng.random_range(0.0..0.1), rng.random_range(0.0..0.02)),
        _ => {
            let mut units: Vec<f64> = (0..rng.random_range(0..6))
                .map(|_| rng.random_range(1.0..TABLE_SPAN))
                .collect();
            units.sort_by(f64::total_cmp);
            units.dedup();
            units.insert(0, 0.0);
            units.push(TABLE_SPAN);
            let mut seconds = rng.random_range(0.0..0.05);
            let points = units
                .into_iter()
                .map(|u| {
                    let p = (u, seconds);
                    seconds += rng.random_range(0.0..0.5);
                    p
                })
                .collect();
            StageCost::table(points).expect("generated table is valid")
        }
    }
}

/// Scenario `i` of a seeded grid; the cost kind of each stage rotates with
/// `i` so constant, affine and table costs all appear.
pub fn grid_scenario<R: Rng>(rng: &mut R, i: usize) -> SimScenario {
    let frame_rate = FRAME_RATES[rng.random_range(0..FRAME_RATES.len())];
    let tokens_per_block = rng.random_range(1..=30usize);
    let decoder = DecoderConfig::new(tokens_per_block as f64 / frame_rate, frame_rate).unwrap();
    let template =
        TemplateConfig::new(rng.random_range(1..=20), rng.random_range(1..=40)).unwrap();
    let vocoder_kind = i + rng.random_range(0..3);
    let costs = StageCosts {
        tokenize: random_cost(rng, i),
        prefill: random_cost(rng, i + 1),
        decode: random_cost(rng, i + 2),
        speech_decode: random_cost(rng, vocoder_kind),
    };
    let latency = LatencyScenario {
        user_speech_s: rng.random_range(0.0..20.0),
        frame: FrameConfig::new(frame_rate, rng.random_range(0.1..2.0)).unwrap(),
        template,
        decoder,
        costs,
    };
    latency.into()
}
