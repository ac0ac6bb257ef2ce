//! Training-point generation and the fixed validation set.
//!
//! Batches always live in `[0, T] × domain`; the residual-adaptive design
//! scores a candidate pool with the current surrogates and keeps the
//! highest-residual fifth of it, topped up with a uniform subsample of the
//! rest, while the stratified design oversamples early times where the
//! terminal injection gives the surrogate the least help.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One space-time training point (state dimension ≤ 2).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub t: f64,
    pub x: [f64; 2],
    pub dim: usize,
}

impl Point {
    pub fn state(&self) -> &[f64] {
        &self.x[..self.dim]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DesignKind {
    Uniform,
    /// Residual-based adaptive sampling.
    Rad,
    TStratified,
}

impl DesignKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(DesignKind::Uniform),
            "rad" => Ok(DesignKind::Rad),
            "t_stratified" => Ok(DesignKind::TStratified),
            other => Err(Error::Config {
                key: "sampling".into(),
                msg: format!("unknown design '{other}' (uniform|rad|t_stratified)"),
            }),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DesignKind::Uniform => "uniform",
            DesignKind::Rad => "rad",
            DesignKind::TStratified => "t_stratified",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SampleDesign {
    pub kind: DesignKind,
    /// Candidate pool size as a multiple of the batch size.
    pub pool_mult: usize,
    /// Fraction of the pool kept by residual rank (0.2 of 4M = 0.8M).
    pub keep_frac: f64,
    /// Early-time stratum boundary and its share of the batch.
    pub split_time: f64,
    pub early_mass: f64,
}

impl SampleDesign {
    pub fn new(kind: DesignKind) -> Self {
        SampleDesign { kind, pool_mult: 4, keep_frac: 0.2, split_time: 0.3, early_mass: 0.5 }
    }

    /// Points kept by residual rank for batch size `m`: ⌈0.8·m⌉.
    pub fn rad_keep(&self, m: usize) -> usize {
        ((self.pool_mult * m) as f64 * self.keep_frac).ceil() as usize
    }
}

fn uniform_point(rng: &mut ChaCha8Rng, horizon: f64, domain: &[(f64, f64)]) -> Point {
    let t = rng.gen_range(0.0..horizon);
    let mut x = [0.0; 2];
    for (i, &(lo, hi)) in domain.iter().enumerate() {
        x[i] = rng.gen_range(lo..hi);
    }
    Point { t, x, dim: domain.len() }
}

/// Draw a batch of exactly `m` points. The adaptive design needs the
/// pointwise interior-residual magnitude of the current surrogates.
pub fn draw_batch(
    design: &SampleDesign,
    m: usize,
    horizon: f64,
    domain: &[(f64, f64)],
    rng: &mut ChaCha8Rng,
    residual_mag: Option<&mut dyn FnMut(&Point) -> f64>,
) -> Result<Vec<Point>> {
    match design.kind {
        DesignKind::Uniform => {
            Ok((0..m).map(|_| uniform_point(rng, horizon, domain)).collect())
        }
        DesignKind::TStratified => {
            let early = (m as f64 * design.early_mass).floor() as usize;
            let split = design.split_time * horizon;
            let mut out = Vec::with_capacity(m);
            for i in 0..m {
                let mut p = uniform_point(rng, horizon, domain);
                p.t = if i < early {
                    rng.gen_range(0.0..split)
                } else {
                    rng.gen_range(split..horizon)
                };
                out.push(p);
            }
            Ok(out)
        }
        DesignKind::Rad => {
            let score = residual_mag.ok_or_else(|| Error::Config {
                key: "sampling".into(),
                msg: "residual-based adaptive sampling needs a residual function".into(),
            })?;
            let pool_n = design.pool_mult * m;
            let pool: Vec<Point> =
                (0..pool_n).map(|_| uniform_point(rng, horizon, domain)).collect();
            let mut scored: Vec<(usize, f64)> =
                pool.iter().enumerate().map(|(i, p)| (i, score(p))).collect();
            // descending by residual, ties broken by candidate index
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let keep = design.rad_keep(m).min(m);
            let mut out: Vec<Point> =
                scored[..keep].iter().map(|&(i, _)| pool[i]).collect();
            // uniform top-up without replacement from the remaining candidates
            let mut rest: Vec<usize> = scored[keep..].iter().map(|&(i, _)| i).collect();
            let need = m - keep;
            for k in 0..need {
                let j = rng.gen_range(k..rest.len());
                rest.swap(k, j);
                out.push(pool[rest[k]]);
            }
            Ok(out)
        }
    }
}

/// Fixed validation set: drawn once, never regenerated during training.
#[derive(Clone, Debug)]
pub struct ValidationSet {
    pub points: Vec<Point>,
    pub seed: u64,
}

pub fn make_validation(
    horizon: f64,
    domain: &[(f64, f64)],
    m_v: usize,
    mut rng: ChaCha8Rng,
    seed: u64,
) -> ValidationSet {
    let points = (0..m_v).map(|_| uniform_point(&mut rng, horizon, domain)).collect();
    ValidationSet { points, seed }
}
