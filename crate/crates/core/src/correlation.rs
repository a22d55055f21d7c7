//! Binned correlation between a caption metric and downstream accuracy.
//!
//! Samples are sorted by one metric (ties by id), cut into equal-size bins,
//! and each bin contributes one point: (mean metric, logit of the fraction of
//! correct samples). The Pearson coefficient over those points is reported.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CimError, Result};

pub const DEFAULT_BIN_SIZE: usize = 100;
pub const DEFAULT_LOGIT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Grc,
    Qir,
    Reward,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Grc, Metric::Qir, Metric::Reward];

    pub fn of(self, s: &ScoredSample) -> f64 {
        match self {
            Metric::Grc => s.grc,
            Metric::Qir => s.qir,
            Metric::Reward => s.reward,
        }
    }

    pub fn of_bin(self, b: &BinSummary) -> f64 {
        match self {
            Metric::Grc => b.mean_grc,
            Metric::Qir => b.mean_qir,
            Metric::Reward => b.mean_reward,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Grc => "grc",
            Metric::Qir => "qir",
            Metric::Reward => "reward",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = CimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grc" => Ok(Metric::Grc),
            "qir" => Ok(Metric::Qir),
            "reward" => Ok(Metric::Reward),
            other => Err(CimError::InvalidParams(format!(
                "unknown metric {other:?} (expected grc, qir, or reward)"
            ))),
        }
    }
}

/// One scored caption with its downstream correctness label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub id: String,
    pub grc: f64,
    pub qir: f64,
    pub reward: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    pub bin_index: usize,
    pub size: usize,
    #[serde(serialize_with = "crate::serde_sig::f64")]
    pub mean_grc: f64,
    #[serde(serialize_with = "crate::serde_sig::f64")]
    pub mean_qir: f64,
    #[serde(serialize_with = "crate::serde_sig::f64")]
    pub mean_reward: f64,
    #[serde(serialize_with = "crate::serde_sig::f64")]
    pub accuracy: f64,
    #[serde(serialize_with = "crate::serde_sig::f64")]
    pub logit_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub metric: Metric,
    pub bin_size: usize,
    pub bins: Vec<BinSummary>,
    #[serde(serialize_with = "crate::serde_sig::f64")]
    pub pearson_r: f64,
    pub dropped_samples: usize,
}

impl CorrelationReport {
    /// `bin_index,mean_metric,logit_accuracy` rows under a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_index,mean_metric,logit_accuracy\n");
        for b in &self.bins {
            out.push_str(&format!(
                "{},{},{}\n",
                b.bin_index,
                crate::serde_sig::round_sig9(self.metric.of_bin(b)),
                crate::serde_sig::round_sig9(b.logit_accuracy)
            ));
        }
        out
    }
}

/// Samples sorted by a metric and cut into bins of equal size.
#[derive(Debug, Clone)]
pub struct Binning<'a> {
    pub bins: Vec<Vec<&'a ScoredSample>>,
    /// Trailing samples that did not fill a bin.
    pub dropped_samples: usize,
}

/// `ln(p / (1 - p))` with `p` clamped to `[eps, 1 - eps]`.
///
/// Evaluated on the lower half only; above 0.5 the complement `1 - p` is
/// exact, so `logit(1 - p) == -logit(p)` holds to the bit.
pub fn logit(p: f64, eps: f64) -> f64 {
    if p.is_nan() {
        return p;
    }
    let lower = |x: f64| {
        let x = x.max(eps);
        x.ln() - (-x).ln_1p()
    };
    if p <= 0.5 {
        lower(p)
    } else {
        -lower(1.0 - p)
    }
}

pub fn bin_samples(
    samples: &[ScoredSample],
    metric: Metric,
    bin_size: usize,
) -> Result<Binning<'_>> {
    if bin_size < 2 {
        return Err(CimError::InvalidParams(format!(
            "bin size must be at least 2, got {bin_size}"
        )));
    }
    if samples.len() < bin_size {
        return Err(CimError::NotEnoughSamples {
            needed: bin_size,
            got: samples.len(),
        });
    }
    if let Some(bad) = samples
        .iter()
        .find(|s| !(s.grc.is_finite() && s.qir.is_finite() && s.reward.is_finite()))
    {
        return Err(CimError::Format(format!(
            "sample {:?} has a non-finite metric",
            bad.id
        )));
    }
    let mut sorted: Vec<&ScoredSample> = samples.iter().collect();
    sorted.sort_by(|a, b| {
        metric
            .of(a)
            .total_cmp(&metric.of(b))
            .then_with(|| a.id.cmp(&b.id))
    });
    let kept = sorted.len() / bin_size * bin_size;
    let dropped_samples = sorted.len() - kept;
    let bins = sorted[..kept]
        .chunks_exact(bin_size)
        .map(<[_]>::to_vec)
        .collect();
    Ok(Binning {
        bins,
        dropped_samples,
    })
}

/// Pearson product-moment correlation, accumulated in `f64`.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(CimError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(CimError::NotEnoughSamples {
            needed: 2,
            got: xs.len(),
        });
    }
    // A constant input need not give an exactly zero sum of squares once the
    // mean is rounded, so test for it directly.
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if constant(xs) {
        return Err(CimError::ZeroVariance("xs"));
    }
    if constant(ys) {
        return Err(CimError::ZeroVariance("ys"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(CimError::ZeroVariance("xs"));
    }
    if syy == 0.0 {
        return Err(CimError::ZeroVariance("ys"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn summarize(bin_index: usize, bin: &[&ScoredSample]) -> BinSummary {
    let n = bin.len() as f64;
    let mean = |f: fn(&ScoredSample) -> f64| bin.iter().map(|s| f(s)).sum::<f64>() / n;
    let correct = bin.iter().filter(|s| s.correct).count();
    let accuracy = correct as f64 / n;
    BinSummary {
        bin_index,
        size: bin.len(),
        mean_grc: mean(|s| s.grc),
        mean_qir: mean(|s| s.qir),
        mean_reward: mean(|s| s.reward),
        accuracy,
        logit_accuracy: logit(accuracy, DEFAULT_LOGIT_EPS),
    }
}

/// Bins by `metric` and correlates per-bin mean metric with logit accuracy.
/// Needs at least two full bins.
pub fn run_correlation(
    samples: &[ScoredSample],
    metric: Metric,
    bin_size: usize,
) -> Result<CorrelationReport> {
    let binning = bin_samples(samples, metric, bin_size)?;
    if binning.bins.len() < 2 {
        return Err(CimError::NotEnoughSamples {
            needed: 2 * bin_size,
            got: samples.len(),
        });
    }
    let bins: Vec<BinSummary> = binning
        .bins
        .iter()
        .enumerate()
        .map(|(i, b)| summarize(i, b))
        .collect();
    let xs: Vec<f64> = bins.iter().map(|b| metric.of_bin(b)).collect();
    let ys: Vec<f64> = bins.iter().map(|b| b.logit_accuracy).collect();
    let pearson_r = pearson(&xs, &ys)?;
    Ok(CorrelationReport {
        metric,
        bin_size,
        bins,
        pearson_r,
        dropped_samples: binning.dropped_samples,
    })
}

/// Reads one [`ScoredSample`] per non-blank line.
pub fn read_samples_jsonl<R: BufRead>(reader: R) -> Result<Vec<ScoredSample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CimError::Format(format!("line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: ScoredSample = serde_json::from_str(&line)
            .map_err(|e| CimError::Format(format!("line {}: {e}", i + 1)))?;
        out.push(s);
    }
    Ok(out)
}

pub fn write_samples_jsonl<W: Write>(mut w: W, samples: &[ScoredSample]) -> Result<()> {
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")
            .map_err(|e| CimError::Format(format!("write failed: {e}")))?;
    }
    Ok(())
}
