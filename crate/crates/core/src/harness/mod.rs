//! Geometric machinery of the affine-dimension argument: cones, slabs, the target
//! cylinder, Monte Carlo volumes, scaling ratios and the final volume comparison.
//!
//! Coordinates split as p = (p', p'') with p' the first k entries; pⁿ is the last entry.

mod chart;

pub use chart::*;

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::domain::unit_ball_volume;
use crate::cost::Vector;
use crate::error::{Error, Result};
use crate::mtw::split_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Euclidean,
    General,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConstructionConfig {
    pub n: usize,
    pub k: usize,
    pub d: f64,
    pub r0: f64,
    #[serde(rename = "R0")]
    pub big_r0: f64,
    #[serde(default = "default_constant")]
    pub beta: f64,
    #[serde(default = "default_constant")]
    pub c0: f64,
    #[serde(default = "default_constant")]
    pub c1: f64,
    #[serde(default)]
    pub seed: u64,
    pub mode: Mode,
}

fn default_constant() -> f64 {
    0.05
}

impl ConstructionConfig {
    pub fn new(n: usize, k: usize, d: f64, r0: f64, big_r0: f64, mode: Mode) -> Self {
        ConstructionConfig { n, k, d, r0, big_r0, beta: 0.05, c0: 0.05, c1: 0.05, seed: 0, mode }
    }

    pub fn with_d(&self, d: f64) -> Self {
        ConstructionConfig { d, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::BadConfig(m.into()));
        if self.k < 1 || self.k + 1 > self.n {
            return bad("need 1 ≤ k ≤ n - 1");
        }
        if !(self.d > 0.0) || !(self.big_r0 > 0.0) || !(self.r0 > 0.0) {
            return bad("d, r0 and R0 must be positive");
        }
        if rho(self.d, self.big_r0) >= PI {
            return bad("d too large: ρ_d ≥ π");
        }
        if self.mode == Mode::Euclidean && self.r0 > 1.0 {
            return bad("Euclidean mode needs r0 ≤ 1");
        }
        for (name, v) in [("beta", self.beta), ("c0", self.c0), ("c1", self.c1)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::BadConfig(format!("{name} must lie in (0, 1)")));
            }
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.n - self.k
    }
}

/// ρ_d = π/2 + d/(4R₀).
pub fn rho(d: f64, big_r0: f64) -> f64 {
    PI / 2.0 + d / (4.0 * big_r0)
}

pub fn split(p: &Vector, k: usize) -> (Vector, Vector) {
    (p.rows(0, k).into_owned(), p.rows(k, p.len() - k).into_owned())
}

pub fn join(a: &Vector, b: &Vector) -> Vector {
    Vector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

/// Box [lo, hi] containing a set.
#[derive(Clone, Debug, Serialize)]
pub struct BoundingBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoundingBox {
    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }
}

/// The sets of one construction step at a fixed d.
#[derive(Clone, Serialize)]
pub struct ConstructionSets {
    pub cfg: ConstructionConfig,
    pub rho: f64,
    pub f: f64,
    /// Radius of W̄_d in the p̄'' variables.
    pub lambda_max: f64,
    /// Half-angle of the cone around eₙ that W̄_d lives in.
    pub alpha: f64,
    #[serde(skip)]
    pub valley: Option<Arc<ValleyChart>>,
}

pub fn build_sets(cfg: &ConstructionConfig, f_value: f64) -> Result<ConstructionSets> {
    cfg.validate()?;
    if !(f_value > 0.0) {
        return Err(Error::NonpositiveF(f_value));
    }
    let (lambda_max, alpha) = match cfg.mode {
        Mode::Euclidean => (cfg.r0 * f_value / (2.0 * cfg.d), cfg.d / (4.0 * cfg.big_r0)),
        Mode::General => (cfg.c1 * f_value / cfg.d, cfg.beta * cfg.d / (4.0 * cfg.big_r0)),
    };
    Ok(ConstructionSets { cfg: cfg.clone(), rho: rho(cfg.d, cfg.big_r0), f: f_value, lambda_max, alpha, valley: None })
}

impl ConstructionSets {
    pub fn with_valley(mut self, v: Arc<ValleyChart>) -> Self {
        self.valley = Some(v);
        self
    }

    fn k(&self) -> usize {
        self.cfg.k
    }

    /// F(p); p' when no valley chart is attached.
    pub fn big_f(&self, p: &Vector) -> Result<Vector> {
        match &self.valley {
            Some(v) => v.f(p),
            None => Ok(p.rows(0, self.k()).into_owned()),
        }
    }

    /// ψ⁻¹(y), the identity without a valley chart.
    pub fn psi_inv(&self, y: &Vector) -> Result<Vector> {
        match &self.valley {
            Some(v) => v.psi_inv(y),
            None => Ok(y.clone()),
        }
    }

    pub fn in_k(&self, p: &Vector) -> bool {
        p.norm() * self.rho.cos() <= p[p.len() - 1]
    }

    /// Membership in W_{d,ρ_d}, the slice |p''| = d, up to `tol` in the slice equation.
    pub fn in_w(&self, p: &Vector, tol: f64) -> bool {
        let pp = p.rows(self.k(), p.len() - self.k()).norm();
        let ball = self.cfg.mode == Mode::General || p.norm() <= 1.0;
        (pp - self.cfg.d).abs() <= tol && self.in_k(p) && ball
    }

    pub fn in_q(&self, p: &Vector) -> Result<bool> {
        let pp = p.rows(self.k(), p.len() - self.k()).norm();
        if pp > self.cfg.d || !self.in_k(p) {
            return Ok(false);
        }
        Ok(self.big_f(p)?.norm() <= self.f)
    }

    /// Base of W̄_d in the p̄' variables: a ball of radius r0/2 or the simplex conv{0, C₀d ē_i}.
    pub fn in_base(&self, y: &Vector) -> bool {
        match self.cfg.mode {
            Mode::Euclidean => y.norm() <= 0.5 * self.cfg.r0,
            Mode::General => y.iter().all(|&v| v >= 0.0) && y.sum() <= self.cfg.c0 * self.cfg.d,
        }
    }

    pub fn base_volume(&self) -> f64 {
        let k = self.k();
        match self.cfg.mode {
            Mode::Euclidean => unit_ball_volume(k) * (0.5 * self.cfg.r0).powi(k as i32),
            Mode::General => (self.cfg.c0 * self.cfg.d).powi(k as i32) / (1..=k).product::<usize>() as f64,
        }
    }

    fn in_cylinder_cone(&self, ypp: &Vector) -> bool {
        ypp.norm() * self.alpha.cos() <= ypp[ypp.len() - 1]
    }

    pub fn in_wbar(&self, y: &Vector, tol: f64) -> bool {
        let (a, b) = split(y, self.k());
        (b.norm() - self.lambda_max).abs() <= tol && self.in_cylinder_cone(&b) && self.in_base(&a)
    }

    /// The cone over W̄_d with vertex 0.
    pub fn in_qbar(&self, y: &Vector) -> bool {
        let (a, b) = split(y, self.k());
        let lam = b.norm();
        if lam == 0.0 {
            return a.norm() == 0.0;
        }
        lam <= self.lambda_max && self.in_cylinder_cone(&b) && self.in_base(&(a * (self.lambda_max / lam)))
    }

    pub fn qbar_box(&self) -> BoundingBox {
        let (k, m) = (self.k(), self.cfg.m());
        let mut lo = Vec::with_capacity(k + m);
        let mut hi = Vec::with_capacity(k + m);
        for _ in 0..k {
            match self.cfg.mode {
                Mode::Euclidean => {
                    lo.push(-0.5 * self.cfg.r0);
                    hi.push(0.5 * self.cfg.r0);
                }
                Mode::General => {
                    lo.push(0.0);
                    hi.push(self.cfg.c0 * self.cfg.d);
                }
            }
        }
        let side = self.lambda_max * self.alpha.sin();
        for _ in 0..m - 1 {
            lo.push(-side);
            hi.push(side);
        }
        lo.push(0.0);
        hi.push(self.lambda_max);
        BoundingBox { lo, hi }
    }

    /// Flat box for Q_d; with a valley chart, the hull of ψ⁻¹ applied to sampled points of the
    /// flat box, widened by a quarter of each side.
    pub fn q_box(&self) -> Result<BoundingBox> {
        let (k, m, d, f) = (self.k(), self.cfg.m(), self.cfg.d, self.f);
        let flat = BoundingBox {
            lo: (0..k).map(|_| -f).chain((0..m).map(|_| -d)).collect(),
            hi: (0..k).map(|_| f).chain((0..m).map(|_| d)).collect(),
        };
        if self.valley.is_none() {
            return Ok(flat);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed(self.cfg.seed, 91));
        let n = k + m;
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for s in 0..2000 {
            let y = Vector::from_fn(n, |i, _| {
                let (a, b) = (flat.lo[i], flat.hi[i]);
                // corners first, then interior samples
                if s < 1 << n.min(10) { if (s >> i) & 1 == 1 { b } else { a } } else { rng.gen_range(a..b) }
            });
            let p = self.psi_inv(&y)?;
            for i in 0..n {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        for i in 0..n {
            let w = 0.25 * (hi[i] - lo[i]);
            lo[i] -= w;
            hi[i] += w;
        }
        Ok(BoundingBox { lo, hi })
    }
}

/// Surface measure of {ω ∈ S^{m-1} : cos α ≤ ω_m}; the point mass at +1 when m = 1.
pub fn cap_measure(m: usize, alpha: f64) -> f64 {
    if m == 1 {
        return 1.0;
    }
    let sphere = (m - 1) as f64 * unit_ball_volume(m - 1);
    sphere * simpson(|t| t.sin().powi(m as i32 - 2), 0.0, alpha, 2000)
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + h * i as f64) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// vol Q̄_d from the coarea formula: ∫₀^λmax H^{n-1}(Q̄ ∩ {|p̄''| = λ}) dλ by quadrature.
pub fn coarea_qbar_volume(sets: &ConstructionSets) -> f64 {
    let (k, m) = (sets.cfg.k, sets.cfg.m());
    let base = sets.base_volume();
    let cap = cap_measure(m, sets.alpha);
    let lm = sets.lambda_max;
    let slice = |lam: f64| base * (lam / lm).powi(k as i32) * cap * lam.powi(m as i32 - 1);
    simpson(slice, 0.0, lm, 4000)
}

/// The same integral in closed form: base · cap · λmax^{n-k} / n.
pub fn closed_form_qbar_volume(sets: &ConstructionSets) -> f64 {
    let n = sets.cfg.n;
    sets.base_volume() * cap_measure(sets.cfg.m(), sets.alpha) * sets.lambda_max.powi(sets.cfg.m() as i32) / n as f64
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct VolumeEstimate {
    pub estimate: f64,
    /// Half-width of the 95% binomial interval.
    pub ci95: f64,
    pub hits: usize,
    pub samples: usize,
}

impl VolumeEstimate {
    pub fn sigma(&self) -> f64 {
        self.ci95 / 1.96
    }
}

const CHUNK: usize = 1 << 14;

/// Hit ratio × box volume; chunks get their own seeds so the result does not depend on the thread count.
pub fn monte_carlo_volume<P>(pred: P, bbox: &BoundingBox, samples: usize, seed: u64) -> Result<VolumeEstimate>
where
    P: Fn(&Vector) -> Result<bool> + Sync,
{
    let n = bbox.lo.len();
    let chunks = samples.div_ceil(CHUNK);
    let hits: Vec<usize> = (0..chunks)
        .into_par_iter()
        .map(|ci| {
            let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, ci as u64));
            let count = CHUNK.min(samples - ci * CHUNK);
            let mut h = 0;
            for _ in 0..count {
                let x = Vector::from_fn(n, |i, _| bbox.lo[i] + (bbox.hi[i] - bbox.lo[i]) * rng.gen::<f64>());
                if pred(&x)? {
                    h += 1;
                }
            }
            Ok(h)
        })
        .collect::<Result<_>>()?;
    let hits: usize = hits.iter().sum();
    if hits == 0 {
        return Err(Error::ZeroHits(samples));
    }
    let q = hits as f64 / samples as f64;
    let vol = bbox.volume();
    Ok(VolumeEstimate {
        estimate: q * vol,
        ci95: 1.96 * (q * (1.0 - q) / samples as f64).sqrt() * vol,
        hits,
        samples,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingRow {
    pub d: f64,
    pub f: f64,
    pub vol_q: VolumeEstimate,
    pub vol_qbar: VolumeEstimate,
    pub coarea_qbar: f64,
    /// (MC - coarea) / σ_MC.
    pub oracle_z: f64,
    pub ratio_q: f64,
    pub ratio_cyl: f64,
    /// Ratios divided by their value at the largest d.
    pub ratio_q_normalized: f64,
    pub ratio_cyl_normalized: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    pub window: f64,
    pub bounded: bool,
}

pub const DEFAULT_WINDOW: f64 = 4.0;

/// (f/d)^{n-k} d^{n-k-1}, times d^k in general mode.
pub fn cylinder_scale(cfg: &ConstructionConfig, f: f64) -> f64 {
    let m = cfg.m() as i32;
    let s = (f / cfg.d).powi(m) * cfg.d.powi(m - 1);
    match cfg.mode {
        Mode::Euclidean => s,
        Mode::General => s * cfg.d.powi(cfg.k as i32),
    }
}

pub fn q_scale(cfg: &ConstructionConfig, f: f64) -> f64 {
    f.powi(cfg.k as i32) * cfg.d.powi(cfg.m() as i32)
}

/// Volumes of Q_d and Q̄_d across a d sweep, with `sets_at` supplying the sets for each d.
pub fn scaling_check(
    ds: &[f64],
    sets_at: &dyn Fn(f64) -> Result<ConstructionSets>,
    samples: usize,
    window: f64,
) -> Result<ScalingReport> {
    let mut rows: Vec<ScalingRow> = Vec::new();
    for (i, &d) in ds.iter().enumerate() {
        let sets = sets_at(d)?;
        let seed = split_seed(sets.cfg.seed, 1000 + i as u64);
        let vol_q = monte_carlo_volume(|p| sets.in_q(p), &sets.q_box()?, samples, seed)?;
        let vol_qbar = monte_carlo_volume(|y| Ok(sets.in_qbar(y)), &sets.qbar_box(), samples, seed ^ 1)?;
        for v in [&vol_q, &vol_qbar] {
            if v.estimate - v.ci95 <= 0.0 {
                return Err(Error::UnstableEstimate);
            }
        }
        let coarea_qbar = coarea_qbar_volume(&sets);
        rows.push(ScalingRow {
            d,
            f: sets.f,
            oracle_z: (vol_qbar.estimate - coarea_qbar) / vol_qbar.sigma().max(1e-300),
            ratio_q: vol_q.estimate / q_scale(&sets.cfg, sets.f),
            ratio_cyl: vol_qbar.estimate / cylinder_scale(&sets.cfg, sets.f),
            vol_q,
            vol_qbar,
            coarea_qbar,
            ratio_q_normalized: 1.0,
            ratio_cyl_normalized: 1.0,
        });
    }
    if let Some(first) = rows.first().cloned() {
        for r in &mut rows {
            r.ratio_q_normalized = r.ratio_q / first.ratio_q;
            r.ratio_cyl_normalized = r.ratio_cyl / first.ratio_cyl;
        }
    }
    let inside = |v: f64| v >= 1.0 / window && v <= window;
    let bounded = rows.iter().all(|r| inside(r.ratio_q_normalized) && inside(r.ratio_cyl_normalized));
    Ok(ScalingReport { rows, window, bounded })
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeRow {
    pub d: f64,
    pub f: f64,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeReport {
    pub n: usize,
    pub k: usize,
    pub mode: Mode,
    pub rows: Vec<ProbeRow>,
    /// lhs never drops below its value at the largest d divided by the window.
    pub lhs_bounded_below: bool,
    /// lhs/rhs grows by more than the window across the sweep.
    pub rhs_vanishes: bool,
    pub flag: bool,
}

/// Both sides of (f/d)^{n-2k} ≲ d^{k+1} (Euclidean) or ≲ d (general) along the sweep.
pub fn contradiction_probe(n: usize, k: usize, mode: Mode, ds: &[f64], f: &dyn Fn(f64) -> f64, window: f64) -> ProbeReport {
    let mut ds = ds.to_vec();
    ds.sort_by(|a, b| b.total_cmp(a));
    let e = n as i32 - 2 * k as i32;
    let rows: Vec<ProbeRow> = ds
        .iter()
        .map(|&d| {
            let fd = f(d);
            let rhs = match mode {
                Mode::Euclidean => d.powi(k as i32 + 1),
                Mode::General => d,
            };
            ProbeRow { d, f: fd, lhs: (fd / d).powi(e), rhs }
        })
        .collect();
    let (lhs_bounded_below, rhs_vanishes) = match (rows.first(), rows.last()) {
        (Some(a), Some(b)) if rows.len() >= 2 => (
            rows.iter().all(|r| r.lhs >= a.lhs / window),
            (b.lhs / b.rhs) > window * (a.lhs / a.rhs),
        ),
        _ => (false, false),
    };
    ProbeReport { n, k, mode, rows, lhs_bounded_below, rhs_vanishes, flag: lhs_bounded_below && rhs_vanishes }
}

/// 2^{-lo}, …, 2^{-hi}.
pub fn dyadic(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|e| 2f64.powi(-e)).collect()
}
