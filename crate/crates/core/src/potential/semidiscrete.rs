//! Semi-discrete transport from a gridded source to finitely many sites.
//!
//! Offsets minimize the convex function
//! Φ(λ) = Σ_i μ_i max_j(λ_j - C_ij) - Σ_j ν_j λ_j, whose gradient is (cell masses - ν);
//! the Kantorovich dual objective reported below is D = -Φ.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::measure::{SourceMeasure, TargetMeasure};
use super::DiscretePotential;
use crate::cost::{CostHandle, Point};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SemidiscreteOptions {
    /// Target bound on max_j |mass_j - ν_j|.
    pub tol: f64,
    pub max_sweeps: usize,
    pub omega: f64,
    /// Sweeps without dual progress above `stall_floor` before giving up on coordinate ascent.
    pub patience: usize,
    pub stall_floor: f64,
    /// Newton on the smoothed dual is tried when m is at most this.
    pub newton_max_sites: usize,
}

impl Default for SemidiscreteOptions {
    fn default() -> Self {
        SemidiscreteOptions {
            tol: 1e-3,
            max_sweeps: 500,
            omega: 1.5,
            patience: 25,
            stall_floor: 1e-14,
            newton_max_sites: 64,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SemidiscreteSolution {
    #[serde(skip)]
    pub potential: DiscretePotential,
    pub lambdas: Vec<f64>,
    pub masses: Vec<f64>,
    pub residual: f64,
    pub sweeps: usize,
    /// D after every accepted coordinate phase iteration.
    pub dual_history: Vec<f64>,
    /// Largest |Σ_j mass_j - 1| seen at any iteration.
    pub mass_error: f64,
    pub used_newton: bool,
    /// Cell index per source point.
    pub assignment: Vec<usize>,
}

pub(crate) struct DualProblem<'a> {
    pub cmat: Vec<f64>,
    pub mu: &'a [f64],
    pub nu: &'a [f64],
    pub m: usize,
}

impl<'a> DualProblem<'a> {
    pub fn new(c: &CostHandle, points: &[Point], sites: &[Point], mu: &'a [f64], nu: &'a [f64]) -> Result<Self> {
        let m = sites.len();
        let rows: Vec<Vec<f64>> = points
            .par_iter()
            .map(|x| sites.iter().map(|s| c.value(x, s)).collect::<Result<Vec<f64>>>())
            .collect::<Result<_>>()?;
        Ok(DualProblem { cmat: rows.concat(), mu, nu, m })
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.cmat[i * self.m..(i + 1) * self.m]
    }

    fn best(&self, i: usize, lam: &[f64]) -> (usize, f64) {
        let r = self.row(i);
        let mut b = (0, lam[0] - r[0]);
        for j in 1..self.m {
            let v = lam[j] - r[j];
            if v > b.1 {
                b = (j, v);
            }
        }
        b
    }

    pub fn phi(&self, lam: &[f64]) -> f64 {
        let s: f64 = (0..self.mu.len()).map(|i| self.mu[i] * self.best(i, lam).1).sum();
        s - self.nu.iter().zip(lam).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn assignment(&self, lam: &[f64]) -> Vec<usize> {
        (0..self.mu.len()).map(|i| self.best(i, lam).0).collect()
    }

    pub fn masses(&self, lam: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for i in 0..self.mu.len() {
            out[self.best(i, lam).0] += self.mu[i];
        }
        out
    }

    /// Exact minimizer of Φ along coordinate j (a kink) and the midpoint of the
    /// adjacent constant-mass gap whose mass is closest to ν_j.
    fn coordinate(&self, lam: &[f64], j: usize) -> (f64, f64) {
        let mut t: Vec<(f64, f64)> = (0..self.mu.len())
            .map(|i| {
                let r = self.row(i);
                let other = (0..self.m).filter(|&k| k != j).map(|k| lam[k] - r[k]).fold(f64::NEG_INFINITY, f64::max);
                (r[j] + other, self.mu[i])
            })
            .collect();
        t.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut groups: Vec<(f64, f64)> = Vec::new();
        for (v, w) in t {
            match groups.last_mut() {
                Some(g) if g.0 == v => g.1 += w,
                _ => groups.push((v, w)),
            }
        }
        let width = if groups.len() > 1 {
            (groups[groups.len() - 1].0 - groups[0].0) / groups.len() as f64
        } else {
            1.0
        };
        let target = self.nu[j];
        let mut before = 0.0;
        let mut g = groups.len() - 1;
        for (idx, gr) in groups.iter().enumerate() {
            if before + gr.1 >= target {
                g = idx;
                break;
            }
            before += gr.1;
        }
        let after = before + groups[g].1;
        let kink = groups[g].0;
        let lower = if g > 0 { 0.5 * (groups[g - 1].0 + kink) } else { kink - 0.5 * width };
        let upper = if g + 1 < groups.len() { 0.5 * (groups[g + 1].0 + kink) } else { kink + 0.5 * width };
        let mid = if target - before <= after - target { lower } else { upper };
        (kink, mid)
    }

    /// Damped Newton on the log-sum-exp smoothing of Φ at temperature eps.
    fn smoothed_newton(&self, lam: &mut [f64], eps: f64, iters: usize) {
        let m = self.m;
        let phi_eps = |l: &[f64]| -> f64 {
            let s: f64 = (0..self.mu.len())
                .map(|i| {
                    let r = self.row(i);
                    let top = (0..m).map(|j| l[j] - r[j]).fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = (0..m).map(|j| ((l[j] - r[j] - top) / eps).exp()).sum();
                    self.mu[i] * (top + eps * z.ln())
                })
                .sum();
            s - self.nu.iter().zip(l).map(|(a, b)| a * b).sum::<f64>()
        };
        for _ in 0..iters {
            let mut grad = nalgebra::DVector::<f64>::zeros(m);
            let mut hess = nalgebra::DMatrix::<f64>::zeros(m, m);
            for i in 0..self.mu.len() {
                let r = self.row(i);
                let top = (0..m).map(|j| lam[j] - r[j]).fold(f64::NEG_INFINITY, f64::max);
                let mut p: Vec<f64> = (0..m).map(|j| ((lam[j] - r[j] - top) / eps).exp()).collect();
                let z: f64 = p.iter().sum();
                p.iter_mut().for_each(|v| *v /= z);
                for a in 0..m {
                    grad[a] += self.mu[i] * p[a];
                    hess[(a, a)] += self.mu[i] * p[a] / eps;
                    for b in 0..m {
                        hess[(a, b)] -= self.mu[i] * p[a] * p[b] / eps;
                    }
                }
            }
            for j in 0..m {
                grad[j] -= self.nu[j];
            }
            if grad.amax() < 1e-13 {
                break;
            }
            // Φ is invariant along the all-ones direction
            let ridge = hess.diagonal().max().max(1e-300);
            hess.add_scalar_mut(ridge / m as f64);
            let Some(step) = hess.lu().solve(&(-&grad)) else { break };
            let f0 = phi_eps(lam);
            let slope = grad.dot(&step);
            let mut a = 1.0;
            let mut moved = false;
            while a > 1e-8 {
                let trial: Vec<f64> = (0..m).map(|j| lam[j] + a * step[j]).collect();
                if phi_eps(&trial) <= f0 + 1e-4 * a * slope {
                    lam.copy_from_slice(&trial);
                    moved = true;
                    break;
                }
                a *= 0.5;
            }
            if !moved {
                break;
            }
        }
    }
}

fn residual(masses: &[f64], nu: &[f64]) -> f64 {
    masses.iter().zip(nu).fold(0.0f64, |a, (m, v)| a.max((m - v).abs()))
}

fn normalize_gauge(lam: &mut [f64]) {
    let mean = lam.iter().sum::<f64>() / lam.len() as f64;
    lam.iter_mut().for_each(|v| *v -= mean);
}

struct Ascent {
    sweeps: usize,
    history: Vec<f64>,
    mass_error: f64,
}

/// Cyclic coordinate ascent; returns once the residual meets tol, progress stalls, or sweeps run out.
fn coordinate_ascent(p: &DualProblem, lam: &mut [f64], opts: &SemidiscreteOptions, budget: usize) -> Ascent {
    let mut d = -p.phi(lam);
    let mut out = Ascent { sweeps: 0, history: vec![d], mass_error: 0.0 };
    let mut quiet = 0;
    for _ in 0..budget {
        let start = d;
        for j in 0..p.m {
            let (kink, mid) = p.coordinate(lam, j);
            let old = lam[j];
            let slack = 1e-14 * (1.0 + d.abs());
            lam[j] = mid;
            let mut dn = -p.phi(lam);
            if dn < d - slack {
                lam[j] = kink;
                dn = -p.phi(lam);
            }
            let settled = lam[j];
            lam[j] = old + opts.omega * (settled - old);
            let over = -p.phi(lam);
            if over >= dn && over >= d - slack {
                dn = over;
            } else {
                lam[j] = settled;
            }
            d = d.max(dn);
            out.history.push(dn);
            let masses = p.masses(lam);
            out.mass_error = out.mass_error.max((masses.iter().sum::<f64>() - 1.0).abs());
        }
        normalize_gauge(lam);
        out.sweeps += 1;
        let masses = p.masses(lam);
        if residual(&masses, p.nu) <= opts.tol {
            break;
        }
        if d - start < opts.stall_floor * (1.0 + d.abs()) {
            quiet += 1;
            if quiet >= opts.patience {
                break;
            }
        } else {
            quiet = 0;
        }
    }
    out
}

pub fn solve_semidiscrete(
    c: &CostHandle,
    mu: &SourceMeasure,
    nu: &TargetMeasure,
    opts: &SemidiscreteOptions,
) -> Result<SemidiscreteSolution> {
    if mu.dim() != nu.support.dim() {
        return Err(Error::BadConfig("source and target dimensions differ".into()));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::BadConfig("tol must be positive".into()));
    }
    let p = DualProblem::new(c, mu.points(), &nu.sites, mu.masses(), &nu.weights)?;
    let mut lam = vec![0.0; nu.m()];
    let mut run = coordinate_ascent(&p, &mut lam, opts, opts.max_sweeps);
    let mut used_newton = false;
    if residual(&p.masses(&lam), p.nu) > opts.tol && nu.m() <= opts.newton_max_sites {
        used_newton = true;
        let spread = p.cmat.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
        let mut trial = lam.clone();
        let mut eps = 1e-2 * spread;
        while eps > 1e-7 * spread {
            p.smoothed_newton(&mut trial, eps, 30);
            eps *= 0.25;
        }
        let more = coordinate_ascent(&p, &mut trial, opts, opts.max_sweeps);
        if residual(&p.masses(&trial), p.nu) < residual(&p.masses(&lam), p.nu) {
            lam = trial;
            run.sweeps += more.sweeps;
            run.mass_error = run.mass_error.max(more.mass_error);
            run.history = more.history;
        }
    }
    let masses = p.masses(&lam);
    let res = residual(&masses, p.nu);
    if res > opts.tol {
        return Err(Error::SolverStall { iterations: run.sweeps, residual: res });
    }
    let potential = DiscretePotential::new(c.clone(), nu.sites.clone(), lam.clone())?;
    Ok(SemidiscreteSolution {
        potential,
        lambdas: lam.clone(),
        residual: res,
        sweeps: run.sweeps,
        dual_history: run.history,
        mass_error: run.mass_error,
        used_newton,
        assignment: p.assignment(&lam),
        masses,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct LambdaOptions {
    pub boxes: usize,
    /// Box sides as fractions of the source bounding box extent.
    pub min_side: f64,
    pub max_side: f64,
    pub seed: u64,
}

impl Default for LambdaOptions {
    fn default() -> Self {
        LambdaOptions { boxes: 200, min_side: 0.25, max_side: 1.0, seed: 0 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LambdaEstimate {
    pub ratio: f64,
    pub worst_lo: Vec<f64>,
    pub worst_hi: Vec<f64>,
    /// Ratios for boxes halved repeatedly around the worst box's center.
    pub shrink_ratios: Vec<f64>,
    /// The ratio kept growing like 1/Leb(E) under shrinking.
    pub violation: bool,
}

/// Active sites at every source point, computed once for many box queries.
pub struct SiteImage<'a> {
    mu: &'a SourceMeasure,
    nu: &'a TargetMeasure,
    active: Vec<Vec<usize>>,
}

impl<'a> SiteImage<'a> {
    pub fn new(u: &DiscretePotential, mu: &'a SourceMeasure, nu: &'a TargetMeasure) -> Result<Self> {
        let active = mu.points().par_iter().map(|x| u.evaluate(x).map(|e| e.argmax)).collect::<Result<_>>()?;
        Ok(SiteImage { mu, nu, active })
    }

    /// Leb(∂_c u(E) ∩ spt ν) / Leb(E) for the box E = [lo, hi], with each active site
    /// smeared to a patch of spt ν of area proportional to its weight. None when E holds no grid point.
    pub fn ratio(&self, lo: &[f64], hi: &[f64]) -> Option<f64> {
        let mut hit = vec![false; self.nu.m()];
        let mut count = 0usize;
        for (x, act) in self.mu.points().iter().zip(&self.active) {
            if (0..lo.len()).all(|k| x[k] >= lo[k] && x[k] <= hi[k]) {
                count += 1;
                act.iter().for_each(|&j| hit[j] = true);
            }
        }
        if count == 0 {
            return None;
        }
        let area = self.nu.support.volume();
        let image: f64 = (0..hit.len()).filter(|&j| hit[j]).map(|j| self.nu.weights[j] * area).sum();
        Some(image / (count as f64 * self.mu.grid.cell_volume()))
    }
}

pub fn estimate_lambda(
    u: &DiscretePotential,
    mu: &SourceMeasure,
    nu: &TargetMeasure,
    opts: &LambdaOptions,
) -> Result<LambdaEstimate> {
    let image = SiteImage::new(u, mu, nu)?;
    let (blo, bhi) = mu.domain.bounding_box();
    let n = blo.len();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    for _ in 0..opts.boxes {
        let mut lo = vec![0.0; n];
        let mut hi = vec![0.0; n];
        for k in 0..n {
            let ext = bhi[k] - blo[k];
            let side = ext * rng.gen_range(opts.min_side..=opts.max_side);
            let start = blo[k] + rng.gen::<f64>() * (ext - side);
            lo[k] = start;
            hi[k] = start + side;
        }
        if let Some(r) = image.ratio(&lo, &hi) {
            if best.as_ref().map_or(true, |b| r > b.0) {
                best = Some((r, lo, hi));
            }
        }
    }
    let (ratio, lo, hi) = best.ok_or(Error::ZeroHits(opts.boxes))?;
    let h = mu.grid.spacing();
    let mut shrink_ratios = vec![ratio];
    let center: Vec<f64> = (0..n).map(|k| 0.5 * (lo[k] + hi[k])).collect();
    let mut half: Vec<f64> = (0..n).map(|k| 0.5 * (hi[k] - lo[k])).collect();
    loop {
        half.iter_mut().for_each(|v| *v *= 0.5);
        if (0..n).any(|k| half[k] < h[k]) {
            break;
        }
        let l: Vec<f64> = (0..n).map(|k| center[k] - half[k]).collect();
        let r: Vec<f64> = (0..n).map(|k| center[k] + half[k]).collect();
        match image.ratio(&l, &r) {
            Some(v) => shrink_ratios.push(v),
            None => break,
        }
    }
    // growth close to 2^n per halving is the signature of a point mass
    let growth: Vec<f64> = shrink_ratios.windows(2).map(|w| w[1] / w[0]).collect();
    let fast = 0.75 * 2f64.powi(n as i32);
    let violation = growth.len() >= 2 && growth.iter().rev().take(2).all(|g| *g >= fast);
    Ok(LambdaEstimate { ratio, worst_lo: lo, worst_hi: hi, shrink_ratios, violation })
}
