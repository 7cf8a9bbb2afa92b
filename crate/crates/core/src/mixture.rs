//! Pre-training mixture planning.
//!
//! Each corpus is sampled under one policy: a fixed share of the total
//! budget, a fixed number of epochs over its own tokens, or whatever is left
//! over. Allocations are whole tokens; a corpus's speech and text tokens are
//! sampled together in their native proportion.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance against the stated budget used when none is given.
pub const DEFAULT_TOLERANCE: f64 = 0.06;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    FixedRatio(f64),
    FixedEpochs(f64),
    Remainder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub name: String,
    #[serde(deserialize_with = "token_count", default)]
    pub speech_tokens: u64,
    #[serde(deserialize_with = "token_count", default)]
    pub text_tokens: u64,
    pub policy: Policy,
}

impl CorpusSpec {
    pub fn new(name: impl Into<String>, speech_tokens: u64, text_tokens: u64, policy: Policy) -> Self {
        Self {
            name: name.into(),
            speech_tokens,
            text_tokens,
            policy,
        }
    }

    pub fn size(&self) -> u64 {
        self.speech_tokens + self.text_tokens
    }
}

/// Parses token counts such as `455B`, `3.5B`, `10T` or `1200000`.
pub fn parse_token_count(s: &str) -> Result<u64> {
    let s = s.trim().replace('_', "");
    let (number, scale) = match s.chars().last() {
        Some('K' | 'k') => (&s[..s.len() - 1], 1e3),
        Some('M' | 'm') => (&s[..s.len() - 1], 1e6),
        Some('B' | 'b' | 'G' | 'g') => (&s[..s.len() - 1], 1e9),
        Some('T' | 't') => (&s[..s.len() - 1], 1e12),
        _ => (&s[..], 1.0),
    };
    if scale == 1.0 {
        if let Ok(n) = number.parse::<u64>() {
            return Ok(n);
        }
    }
    let value: f64 = number
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad token count {s:?}")))?;
    let tokens = (value * scale).round();
    if !(tokens >= 0.0 && tokens < u64::MAX as f64) {
        return Err(Error::Parse(format!("token count out of range: {s:?}")));
    }
    Ok(tokens as u64)
}

fn token_count<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<u64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Count {
        Int(u64),
        Float(f64),
        Text(String),
    }
    match Count::deserialize(d)? {
        Count::Int(n) => Ok(n),
        Count::Float(f) if f >= 0.0 && f.fract() == 0.0 => Ok(f as u64),
        Count::Float(f) => Err(serde::de::Error::custom(format!("bad token count {f}"))),
        Count::Text(s) => parse_token_count(&s).map_err(serde::de::Error::custom),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Allocation {
    pub name: String,
    pub policy: Policy,
    pub corpus_tokens: u64,
    pub tokens: u64,
    pub speech_tokens: u64,
    pub text_tokens: u64,
    pub epochs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixturePlan {
    pub budget: u64,
    pub allocations: Vec<Allocation>,
    pub total_tokens: u64,
}

fn check_policy(c: &CorpusSpec) -> Result<()> {
    match c.policy {
        Policy::FixedRatio(r) if !(0.0..=1.0).contains(&r) => Err(Error::InvalidConfig(format!(
            "{}: ratio {r} outside [0, 1]",
            c.name
        ))),
        Policy::FixedEpochs(e) if !(e >= 0.0 && e.is_finite()) => Err(Error::InvalidConfig(
            format!("{}: epochs {e} must be finite and nonnegative", c.name),
        )),
        _ => Ok(()),
    }
}

/// Allocates `budget` tokens across `corpora`.
///
/// Without a remainder corpus the plan total is simply the sum of the fixed
/// allocations and may differ from `budget`; [`validate_plan`] reports by how
/// much.
pub fn plan_mixture(budget: u64, corpora: &[CorpusSpec]) -> Result<MixturePlan> {
    let remainders = corpora
        .iter()
        .filter(|c| c.policy == Policy::Remainder)
        .count();
    if remainders > 1 {
        return Err(Error::InvalidConfig(format!(
            "at most one remainder corpus allowed, found {remainders}"
        )));
    }
    for c in corpora {
        check_policy(c)?;
    }

    let fixed: Vec<Option<u64>> = corpora
        .iter()
        .map(|c| match c.policy {
            Policy::FixedRatio(r) => Some((r * budget as f64).round() as u64),
            Policy::FixedEpochs(e) => Some((e * c.size() as f64).round() as u64),
            Policy::Remainder => None,
        })
        .collect();
    let fixed_total: u64 = fixed.iter().flatten().sum();
    if remainders == 1 && fixed_total > budget {
        let details = corpora
            .iter()
            .zip(&fixed)
            .filter_map(|(c, a)| a.map(|a| format!("{}={a}", c.name)))
            .collect::<Vec<_>>()
            .join(", ");
        return Err(Error::OverSubscribed {
            budget,
            allocated: fixed_total,
            details,
        });
    }

    let allocations = corpora
        .iter()
        .zip(fixed)
        .map(|(c, a)| {
            let tokens = a.unwrap_or_else(|| budget - fixed_total);
            let size = c.size();
            if size == 0 && tokens > 0 {
                return Err(Error::InvalidConfig(format!(
                    "{}: empty corpus cannot supply {tokens} tokens",
                    c.name
                )));
            }
            let (epochs, speech_tokens) = if size == 0 {
                (0.0, 0)
            } else {
                let speech = (tokens as f64 * c.speech_tokens as f64 / size as f64).round() as u64;
                (tokens as f64 / size as f64, speech.min(tokens))
            };
            Ok(Allocation {
                name: c.name.clone(),
                policy: c.policy,
                corpus_tokens: size,
                tokens,
                speech_tokens,
                text_tokens: tokens - speech_tokens,
                epochs,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let total_tokens = allocations.iter().map(|a| a.tokens).sum();
    Ok(MixturePlan {
        budget,
        allocations,
        total_tokens,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusShare {
    pub name: String,
    pub tokens: u64,
    pub share: f64,
    pub epochs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub total_tokens: u64,
    pub stated_budget: u64,
    /// `|total - stated| / stated`.
    pub deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub corpora: Vec<CorpusShare>,
}

pub fn validate_plan(plan: &MixturePlan, stated_budget: u64, tolerance: f64) -> ValidationReport {
    let total = plan.total_tokens;
    let deviation = if stated_budget == 0 {
        if total == 0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        total.abs_diff(stated_budget) as f64 / stated_budget as f64
    };
    let corpora = plan
        .allocations
        .iter()
        .map(|a| CorpusShare {
            name: a.name.clone(),
            tokens: a.tokens,
            share: if total == 0 {
                0.0
            } else {
                a.tokens as f64 / total as f64
            },
            epochs: a.epochs,
        })
        .collect();
    ValidationReport {
        total_tokens: total,
        stated_budget,
        deviation,
        tolerance,
        passed: deviation <= tolerance,
        corpora,
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .corpora
            .iter()
            .map(|c| c.name.len())
            .max()
            .unwrap_or(0)
            .max("corpus".len());
        writeln!(
            f,
            "{:<width$} {:>18} {:>8} {:>8}",
            "corpus", "tokens", "share", "epochs"
        )?;
        for c in &self.corpora {
            writeln!(
                f,
                "{:<width$} {:>18} {:>7.2}% {:>8.3}",
                c.name,
                c.tokens,
                c.share * 100.0,
                c.epochs
            )?;
        }
        writeln!(f, "{:<width$} {:>18}", "total", self.total_tokens)?;
        write!(
            f,
            "deviation from {} is {:.2}% (tolerance {:.2}%): {}",
            self.stated_budget,
            self.deviation * 100.0,
            self.tolerance * 100.0,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

#[derive(Deserialize)]
struct CsvRow {
    name: String,
    speech_tokens: String,
    text_tokens: String,
    policy: String,
    #[serde(default)]
    value: Option<f64>,
}

/// Reads corpora from CSV with header `name,speech_tokens,text_tokens,policy,value`.
pub fn corpora_from_csv<R: std::io::Read>(r: R) -> Result<Vec<CorpusSpec>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    reader
        .deserialize::<CsvRow>()
        .map(|row| {
            let row = row?;
            let count = |s: &str| {
                if s.is_empty() || s == "-" {
                    Ok(0)
                } else {
                    parse_token_count(s)
                }
            };
            let value = || {
                row.value
                    .ok_or_else(|| Error::Parse(format!("{}: policy {} needs a value", row.name, row.policy)))
            };
            let policy = match row.policy.as_str() {
                "fixed_ratio" => Policy::FixedRatio(value()?),
                "fixed_epochs" => Policy::FixedEpochs(value()?),
                "remainder" => Policy::Remainder,
                other => return Err(Error::Parse(format!("unknown policy {other:?}"))),
            };
            Ok(CorpusSpec {
                speech_tokens: count(&row.speech_tokens)?,
                text_tokens: count(&row.text_tokens)?,
                name: row.name,
                policy,
            })
        })
        .collect()
}

pub fn corpora_from_json(text: &str) -> Result<Vec<CorpusSpec>> {
    Ok(serde_json::from_str(text)?)
}

/// Loads corpora from a `.csv` file, or JSON otherwise.
pub fn load_corpora(path: impl AsRef<Path>) -> Result<Vec<CorpusSpec>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        corpora_from_csv(text.as_bytes())
    } else {
        corpora_from_json(&text)
    }
}
