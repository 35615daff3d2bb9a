//! Arrival-rate accounting and the masking / LSTM ablation harness.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::replay::env_to_text;
use crate::trainer::{train, EpisodeStats, TrainerConfig};

/// Arrived agents over all agents across `episodes`; 0 for an empty slice.
pub fn arrival_rate(episodes: &[EpisodeStats]) -> f64 {
    let agents: usize = episodes.iter().map(|e| e.n_agents).sum();
    if agents == 0 {
        return 0.0;
    }
    episodes.iter().map(|e| e.arrived).sum::<usize>() as f64 / agents as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationAxis {
    Masking,
    Lstm,
}

impl AblationAxis {
    /// Labels for the (on, off) variants.
    pub fn labels(self) -> (&'static str, &'static str) {
        match self {
            AblationAxis::Masking => ("masked", "unmasked"),
            AblationAxis::Lstm => ("lstm", "no-lstm"),
        }
    }

    fn apply(self, cfg: &mut TrainerConfig, on: bool) {
        match self {
            AblationAxis::Masking => cfg.masking_enabled = on,
            AblationAxis::Lstm => cfg.lstm = on,
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationAxis::Masking => "masking",
            AblationAxis::Lstm => "lstm",
        })
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "masking" => Ok(AblationAxis::Masking),
            "lstm" => Ok(AblationAxis::Lstm),
            _ => Err(Error::Config(format!("unknown ablation axis '{s}' (masking|lstm)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub label: String,
    /// Held-out arrival rate after the full budget.
    pub arrival_rate: f64,
    /// Training episodes played.
    pub episodes: u64,
    pub decision_steps: u64,
    pub config_hash: u64,
    /// Digest of the held-out environments; equal within a pair.
    pub eval_hash: u64,
}

pub fn config_hash(cfg: &TrainerConfig) -> u64 {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    crate::digest64(&json)
}

pub fn eval_hash(cfg: &TrainerConfig) -> Result<u64> {
    let mut text = String::new();
    for env in cfg.eval_envs()? {
        text.push_str(&env_to_text(&env));
    }
    Ok(crate::digest64(text.as_bytes()))
}

/// Trains `cfg` for its full budget and summarizes the final evaluation row.
pub fn run_variant(label: &str, cfg: &TrainerConfig) -> Result<AblationReport> {
    let out = train(cfg)?;
    let last = out
        .metrics
        .last()
        .ok_or_else(|| Error::Aborted("training produced no evaluation".into()))?;
    Ok(AblationReport {
        label: label.to_string(),
        arrival_rate: last.arrival_rate,
        episodes: out.episodes,
        decision_steps: out.decision_steps,
        config_hash: config_hash(cfg),
        eval_hash: eval_hash(cfg)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPair {
    pub axis: AblationAxis,
    pub on: AblationReport,
    pub off: AblationReport,
}

impl AblationPair {
    /// Percentage points, on minus off.
    pub fn absolute_delta(&self) -> f64 {
        100.0 * (self.on.arrival_rate - self.off.arrival_rate)
    }

    /// Percent of the off variant; `None` when it is zero.
    pub fn relative_delta(&self) -> Option<f64> {
        (self.off.arrival_rate > 0.0).then(|| 100.0 * (self.on.arrival_rate / self.off.arrival_rate - 1.0))
    }
}

/// Trains both variants of `axis` with the seeds, budget and held-out
/// environments of `base`.
pub fn run_ablation(base: &TrainerConfig, axis: AblationAxis, budget: u64) -> Result<AblationPair> {
    let mut on = base.clone();
    on.total_decision_steps = budget;
    axis.apply(&mut on, true);
    let mut off = on.clone();
    axis.apply(&mut off, false);
    on.validate()?;
    off.validate()?;
    let (lon, loff) = axis.labels();
    let pair = AblationPair {
        axis,
        on: run_variant(lon, &on)?,
        off: run_variant(loff, &off)?,
    };
    if pair.on.eval_hash != pair.off.eval_hash {
        return Err(Error::Aborted("ablation variants were evaluated on different environments".into()));
    }
    Ok(pair)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    /// Standard error of the mean; 0 for a single sample.
    pub se: f64,
    pub n: usize,
}

impl MeanSe {
    pub fn of(xs: &[f64]) -> MeanSe {
        let n = xs.len();
        if n == 0 {
            return MeanSe { mean: 0.0, se: 0.0, n };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let se = if n < 2 {
            0.0
        } else {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        MeanSe { mean, se, n }
    }
}

impl fmt::Display for MeanSe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4} ± {:.4} (n={})", self.mean, self.se, self.n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub axis: AblationAxis,
    pub budget: u64,
    pub seeds: Vec<u64>,
    pub pairs: Vec<AblationPair>,
}

impl AblationSummary {
    pub fn on(&self) -> MeanSe {
        MeanSe::of(&self.pairs.iter().map(|p| p.on.arrival_rate).collect::<Vec<_>>())
    }

    pub fn off(&self) -> MeanSe {
        MeanSe::of(&self.pairs.iter().map(|p| p.off.arrival_rate).collect::<Vec<_>>())
    }

    /// Mean of the per-seed percentage-point deltas.
    pub fn absolute_delta(&self) -> MeanSe {
        MeanSe::of(&self.pairs.iter().map(|p| p.absolute_delta()).collect::<Vec<_>>())
    }

    /// Relative delta of the seed-averaged rates, in percent.
    pub fn relative_delta(&self) -> Option<f64> {
        let off = self.off().mean;
        (off > 0.0).then(|| 100.0 * (self.on().mean / off - 1.0))
    }

    pub const CSV_HEADER: &'static str =
        "axis,seed,label,arrival_rate,episodes,decision_steps,config_hash,eval_hash";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for (seed, p) in self.seeds.iter().zip(&self.pairs) {
            for r in [&p.on, &p.off] {
                s.push_str(&format!(
                    "{},{},{},{:.6},{},{},{:016x},{:016x}\n",
                    self.axis, seed, r.label, r.arrival_rate, r.episodes, r.decision_steps, r.config_hash, r.eval_hash
                ));
            }
        }
        s
    }

    pub fn summary_text(&self) -> String {
        let (lon, loff) = self.axis.labels();
        let rel = self
            .relative_delta()
            .map_or("n/a".to_string(), |r| format!("{r:+.1}%"));
        format!(
            "{} ablation, budget {} decisions, seeds {:?}\n{lon}: {}\n{loff}: {}\ndelta: {} pp, relative {rel}\n",
            self.axis,
            self.budget,
            self.seeds,
            self.on(),
            self.off(),
            self.absolute_delta()
        )
    }
}

/// [`run_ablation`] once per seed.
pub fn run_ablation_seeds(base: &TrainerConfig, axis: AblationAxis, budget: u64, seeds: &[u64]) -> Result<AblationSummary> {
    let pairs = seeds
        .iter()
        .map(|&seed| {
            let cfg = TrainerConfig { seed, ..base.clone() };
            run_ablation(&cfg, axis, budget)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationSummary {
        axis,
        budget,
        seeds: seeds.to_vec(),
        pairs,
    })
}
