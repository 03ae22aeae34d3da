//! Synthetic snapshot panels drawn from the hierarchical random-frequency
//! model.
//!
//! Each snapshot `k` draws its own frequencies `ω_{k,ℓ} ~ U[θ_ℓ−W, θ_ℓ+W]` and
//! amplitudes `(a_{k,ℓ}, b_{k,ℓ})`, then
//! `y_k(t) = Σ_ℓ a cos(ω t) + b sin(ω t) + w_k(t)` for `t = 1..N`.
//!
//! Randomness comes from ChaCha8 streams: snapshot `k` of a panel seeded with
//! `s` always reads stream `k` of the generator keyed by `s`, so panels are
//! bit-identical regardless of how snapshots are scheduled across threads.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::PriorHyperParams;

/// Independent generator for `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Zero-mean amplitude distribution; the variance always comes from the prior.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AmplitudeLaw {
    #[default]
    Gaussian,
    /// `U[−b, b]` with `b = √(3σ²)`.
    Uniform,
}

impl AmplitudeLaw {
    pub fn sample<R: Rng + ?Sized>(self, variance: f64, rng: &mut R) -> f64 {
        match self {
            AmplitudeLaw::Gaussian => {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                z * variance.sqrt()
            }
            AmplitudeLaw::Uniform => {
                let bound = (3.0 * variance).sqrt();
                bound * (2.0 * rng.random::<f64>() - 1.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelConfig {
    pub prior: PriorHyperParams,
    /// Samples per path.
    pub n: usize,
    /// Number of snapshots.
    pub l: usize,
    #[serde(default)]
    pub amp_law: AmplitudeLaw,
    pub seed: u64,
}

impl PanelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidDimension(format!("N = {}, need N >= 2", self.n)));
        }
        if self.l < 1 {
            return Err(Error::InvalidDimension("L = 0, need L >= 1".into()));
        }
        self.prior.validate()
    }
}

/// Ground truth retained alongside a synthetic panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelTruth {
    /// `frequencies[k][ℓ] = ω_{k,ℓ}`.
    pub frequencies: Vec<Vec<f64>>,
    pub cos_amps: Vec<Vec<f64>>,
    pub sin_amps: Vec<Vec<f64>>,
}

/// `L × N` observations, one snapshot per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotPanel {
    pub data: DMatrix<f64>,
    pub truth: Option<PanelTruth>,
}

impl SnapshotPanel {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let l = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if l == 0 || n == 0 {
            return Err(Error::InvalidDimension("empty panel".into()));
        }
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidDimension("ragged panel rows".into()));
        }
        let data = DMatrix::from_fn(l, n, |k, t| rows[k][t]);
        Ok(Self { data, truth: None })
    }

    pub fn snapshots(&self) -> usize {
        self.data.nrows()
    }

    pub fn samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, k: usize) -> Vec<f64> {
        self.data.row(k).iter().copied().collect()
    }

    /// Panel CSV: a header `t1,...,tN`, then one row per snapshot.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.samples();
        let header: Vec<String> = (1..=n).map(|t| format!("t{t}")).collect();
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.snapshots() {
            let row: Vec<String> = self.data.row(k).iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("missing header row".into()))??;
        let n = header.split(',').count();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("row {}: {e}", i + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != n {
                return Err(Error::Parse(format!(
                    "row {} has {} fields, header has {n}",
                    i + 1,
                    row.len()
                )));
            }
            rows.push(row);
        }
        Self::from_rows(rows)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

/// One draw `ω_ℓ ~ U[θ_ℓ−W, θ_ℓ+W]` per center.
pub fn draw_frequencies<R: Rng + ?Sized>(prior: &PriorHyperParams, rng: &mut R) -> Vec<f64> {
    let w = prior.half_bandwidth;
    prior
        .centers
        .iter()
        .map(|&theta| theta + w * (2.0 * rng.random::<f64>() - 1.0))
        .collect()
}

struct Snapshot {
    samples: Vec<f64>,
    frequencies: Vec<f64>,
    cos_amps: Vec<f64>,
    sin_amps: Vec<f64>,
}

fn draw_snapshot(cfg: &PanelConfig, noise: Option<Normal<f64>>, k: usize) -> Snapshot {
    let mut rng = stream_rng(cfg.seed, k as u64);
    let prior = &cfg.prior;
    let frequencies = draw_frequencies(prior, &mut rng);
    let mut cos_amps = Vec::with_capacity(prior.nu());
    let mut sin_amps = Vec::with_capacity(prior.nu());
    for _ in 0..prior.nu() {
        cos_amps.push(cfg.amp_law.sample(prior.amp_variance, &mut rng));
        sin_amps.push(cfg.amp_law.sample(prior.amp_variance, &mut rng));
    }
    let samples = (1..=cfg.n)
        .map(|t| {
            let t = t as f64;
            let clean: f64 = frequencies
                .iter()
                .zip(cos_amps.iter().zip(&sin_amps))
                .map(|(&w, (&a, &b))| a * (w * t).cos() + b * (w * t).sin())
                .sum();
            clean + noise.map_or(0.0, |d| d.sample(&mut rng))
        })
        .collect();
    Snapshot {
        samples,
        frequencies,
        cos_amps,
        sin_amps,
    }
}

/// Draws an `L × N` panel with truth retained.
pub fn generate_panel(cfg: &PanelConfig) -> Result<SnapshotPanel> {
    cfg.validate()?;
    let noise = if cfg.prior.noise_variance > 0.0 {
        Some(
            Normal::new(0.0, cfg.prior.noise_variance.sqrt())
                .map_err(|e| Error::InvalidHyperParams(e.to_string()))?,
        )
    } else {
        None
    };
    let snaps: Vec<Snapshot> = (0..cfg.l)
        .into_par_iter()
        .map(|k| draw_snapshot(cfg, noise, k))
        .collect();
    let data = DMatrix::from_fn(cfg.l, cfg.n, |k, t| snaps[k].samples[t]);
    let mut truth = PanelTruth {
        frequencies: Vec::with_capacity(cfg.l),
        cos_amps: Vec::with_capacity(cfg.l),
        sin_amps: Vec::with_capacity(cfg.l),
    };
    for s in snaps {
        truth.frequencies.push(s.frequencies);
        truth.cos_amps.push(s.cos_amps);
        truth.sin_amps.push(s.sin_amps);
    }
    Ok(SnapshotPanel {
        data,
        truth: Some(truth),
    })
}

/// `σ_w² = σ² · 10^(−SNR/10)` with SNR `= 20 log₁₀(σ/σ_w)`.
pub fn snr_to_noise_variance(snr_db: f64, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidArgument(format!("σ² = {sigma2} must be > 0")));
    }
    Ok(sigma2 * 10f64.powf(-snr_db / 10.0))
}
