use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::bail;
use clap::{Parser, Subcommand};
use serde_json::json;

use streamchat::latency::{total_latency, LatencyScenario};
use streamchat::mixture::{
    load_corpora, parse_token_count, plan_mixture, validate_plan, DEFAULT_TOLERANCE,
};
use streamchat::sft::{build_streaming_turn, split_dual_objective, Segment, TurnSample};
use streamchat::sim::{emit_trace, run_scenario, SimScenario, TraceFormat};
use streamchat::template::{interleave, Modality, TemplateConfig};
use streamchat::vq::{fit_clusters, FitConfig};

#[derive(Parser)]
#[command(name = "streamchat", version, about = "Streaming speech chatbot mechanics simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario through the mock pipeline and write its event trace.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "json")]
        format: TraceFormat,
    },
    /// Print the analytic first-audio latency breakdown of a scenario.
    Latency {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Plan a pre-training mixture and check it against the budget.
    Mixture {
        #[arg(long)]
        corpora: PathBuf,
        /// Total tokens, e.g. `1T` or `1000000000000`.
        #[arg(long, value_parser = parse_budget)]
        budget: u64,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
    },
    /// Show the text/speech layout of the interleaved answer stream.
    Template {
        #[arg(long, default_value_t = 13)]
        text: usize,
        #[arg(long, default_value_t = 26)]
        speech: usize,
        /// Number of stream positions to print.
        #[arg(long, default_value_t = 78)]
        dump: usize,
    },
    /// Fit a codebook on synthetic Gaussian clusters.
    CodebookFit {
        #[arg(long, default_value_t = 3)]
        clusters: usize,
        #[arg(long, default_value_t = 3)]
        codes: usize,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.01)]
        reset_threshold: f64,
    },
    /// Print the text- and speech-focused loss masks of one turn.
    MaskDemo {
        #[arg(long)]
        turn: PathBuf,
        #[arg(long, default_value_t = 13)]
        text_chunk: usize,
        #[arg(long, default_value_t = 26)]
        speech_chunk: usize,
    },
}

fn parse_budget(s: &str) -> Result<u64, String> {
    parse_token_count(s).map_err(|e| e.to_string())
}

fn simulate(scenario: PathBuf, seed: u64, out: PathBuf, format: TraceFormat) -> anyhow::Result<()> {
    let sc = SimScenario::load(&scenario)?;
    let run = run_scenario(&sc, seed)?;
    emit_trace(&run.events, format, &out)?;
    let summary = json!({
        "out": out,
        "events": run.events.len(),
        "prompt_tokens": run.prompt_tokens,
        "speech_tokens": run.speech_tokens,
        "first_audio_s": run.first_audio(),
        "audio_s": run.audio_seconds(),
    });
    println!("{summary}");
    Ok(())
}

fn latency(scenario: PathBuf) -> anyhow::Result<()> {
    let sc = LatencyScenario::load(&scenario)?;
    println!("{}", total_latency(&sc)?);
    Ok(())
}

fn mixture(corpora: PathBuf, budget: u64, tolerance: f64) -> anyhow::Result<()> {
    if tolerance.is_nan() || tolerance < 0.0 {
        bail!(streamchat::Error::InvalidConfig(format!(
            "tolerance {tolerance} must be nonnegative"
        )));
    }
    let specs = load_corpora(&corpora)?;
    let plan = plan_mixture(budget, &specs)?;
    let report = validate_plan(&plan, budget, tolerance);
    println!("{report}");
    if !report.passed {
        bail!(ToleranceExceeded {
            deviation: report.deviation,
            tolerance,
        });
    }
    Ok(())
}

fn template(text: usize, speech: usize, dump: usize) -> anyhow::Result<()> {
    let cfg = TemplateConfig::new(text, speech)?;
    let period = cfg.period();
    println!("period {period}: {text} text then {speech} speech");
    let texts: Vec<u32> = (0..dump as u32).collect();
    let speeches: Vec<u32> = (0..dump as u32).collect();
    let stream = interleave(&texts, &speeches, &cfg);
    for (row, line) in stream[..dump].chunks(period).enumerate() {
        let kinds: String = line
            .iter()
            .map(|t| match t.kind {
                Modality::Text => 't',
                Modality::Speech => 's',
            })
            .collect();
        println!("{:>6} {kinds}", row * period);
    }
    Ok(())
}

fn codebook_fit(
    clusters: usize,
    codes: usize,
    steps: usize,
    seed: u64,
    reset_threshold: f64,
) -> anyhow::Result<()> {
    let mut cfg = FitConfig::new(clusters, codes, seed);
    cfg.steps = steps;
    cfg.codebook.reset_threshold = reset_threshold;
    cfg.codebook.validate()?;
    let report = fit_clusters(&cfg)?;
    println!("{:>4} {:>18} {:>10} {:>8} {:>6}", "code", "vector", "distance", "usage", "resets");
    for (k, code) in report.codes.iter().enumerate() {
        let coords: Vec<String> = code.iter().map(|c| format!("{c:.4}")).collect();
        println!(
            "{k:>4} {:>18} {:>10.6} {:>8.4} {:>6}",
            coords.join(","),
            report.code_distances[k],
            report.final_usage[k],
            report.reset_counts[k]
        );
    }
    println!(
        "max distance {:.6}, {} of {} codes reset, commitment loss {:.6}",
        report.max_code_distance(),
        report.codes_reset(),
        codes,
        report.final_commitment_loss
    );
    Ok(())
}

fn mask_demo(turn: PathBuf, text_chunk: usize, speech_chunk: usize) -> anyhow::Result<()> {
    let cfg = TemplateConfig::new(text_chunk, speech_chunk)?;
    let sample = TurnSample::load(&turn)?;
    let example = build_streaming_turn(&sample, &cfg)?;
    let split = split_dual_objective(&example)?;
    let row = |f: &dyn Fn(usize) -> char| (0..example.len()).map(f).collect::<String>();
    let flag = |m: bool| if m { '1' } else { '0' };
    println!(
        "kind    {}",
        row(&|i| match example.tokens[i].kind {
            Modality::Text => 't',
            Modality::Speech => 's',
        })
    );
    println!(
        "segment {}",
        row(&|i| match example.tokens[i].segment {
            Segment::Input => 'i',
            Segment::Output => 'o',
        })
    );
    println!("loss    {}", row(&|i| flag(example.loss_mask[i])));
    println!("text    {}", row(&|i| flag(split.text_focus.loss_mask[i])));
    println!("speech  {}", row(&|i| flag(split.speech_focus.loss_mask[i])));
    println!(
        "{} tokens, {} supervised: {} text, {} speech",
        example.len(),
        example.supervised(),
        split.text_focus.supervised(),
        split.speech_focus.supervised()
    );
    Ok(())
}

#[derive(Debug)]
struct ToleranceExceeded {
    deviation: f64,
    tolerance: f64,
}

impl std::fmt::Display for ToleranceExceeded {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "plan deviates {:.4} from the budget, tolerance {:.4}",
            self.deviation, self.tolerance
        )
    }
}

impl std::error::Error for ToleranceExceeded {}

fn error_kind(err: &anyhow::Error) -> &'static str {
    if let Some(e) = err.downcast_ref::<streamchat::Error>() {
        e.kind()
    } else if err.is::<ToleranceExceeded>() {
        "tolerance_exceeded"
    } else {
        "error"
    }
}

fn report(kind: &str, message: String) {
    eprintln!("{}", json!({ "error": kind, "message": message }));
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate {
            scenario,
            seed,
            out,
            format,
        } => simulate(scenario, seed, out, format),
        Command::Latency { scenario } => latency(scenario),
        Command::Mixture {
            corpora,
            budget,
            tolerance,
        } => mixture(corpora, budget, tolerance),
        Command::Template { text, speech, dump } => template(text, speech, dump),
        Command::CodebookFit {
            clusters,
            codes,
            steps,
            seed,
            reset_threshold,
        } => codebook_fit(clusters, codes, steps, seed, reset_threshold),
        Command::MaskDemo {
            turn,
            text_chunk,
            speech_chunk,
        } => mask_demo(turn, text_chunk, speech_chunk),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report("usage", e.to_string().trim_end().to_string());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            report(error_kind(&err), err.to_string());
            ExitCode::FAILURE
        }
    }
}
