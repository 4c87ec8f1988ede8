use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{build_sets, join, split, ConstructionConfig, ConstructionSets, Mode};
use crate::cexp::{build_dual_frames, CExpOptions, ModifiedFrame, NormalizedFrame};
use crate::cost::domain::random_unit;
use crate::cost::{CostHandle, Point, Vector};
use crate::error::{Error, Result};
use crate::mtw::split_seed;
use crate::potential::DiscretePotential;

/// F(p) = (m̃_{r₀ē₁}(p), …, m̃_{r₀ē_k}(p)) and ψ(p) = (F(p), p'') on the normalized frame.
pub struct ValleyChart {
    pub frame: NormalizedFrame,
    pub r0: f64,
    pub k: usize,
    sites: Vec<Point>,
    pub jacobian0: DMatrix<f64>,
    pub validity_radius: f64,
    pub m_fit: f64,
    /// Largest |ψ(ψ⁻¹(y)) - y| seen while fixing the radius.
    pub roundtrip_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValleySummary {
    pub k: usize,
    pub r0: f64,
    pub jacobian_singular_values: Vec<f64>,
    pub validity_radius: f64,
    pub m_fit: f64,
    pub roundtrip_error: f64,
}

const NEWTON_TOL: f64 = 1e-13;

impl ValleyChart {
    pub fn summary(&self) -> ValleySummary {
        ValleySummary {
            k: self.k,
            r0: self.r0,
            jacobian_singular_values: self.jacobian0.singular_values().as_slice().to_vec(),
            validity_radius: self.validity_radius,
            m_fit: self.m_fit,
            roundtrip_error: self.roundtrip_error,
        }
    }

    pub fn f(&self, p: &Vector) -> Result<Vector> {
        let x = self.frame.point(p)?;
        self.f_at(&x)
    }

    fn f_at(&self, x: &Point) -> Result<Vector> {
        let vals = self.sites.iter().map(|s| self.frame.m_tilde_at(s, x)).collect::<Result<Vec<_>>>()?;
        Ok(Vector::from_vec(vals))
    }

    pub fn psi(&self, p: &Vector) -> Result<Vector> {
        let (_, b) = split(p, self.k);
        Ok(join(&self.f(p)?, &b))
    }

    /// ∂F/∂p' by central differences.
    fn jacobian(&self, p: &Vector) -> Result<DMatrix<f64>> {
        let k = self.k;
        let mut j = DMatrix::zeros(k, k);
        for c in 0..k {
            let h = 1e-6 * (1.0 + p[c].abs());
            let mut a = p.clone();
            let mut b = p.clone();
            a[c] += h;
            b[c] -= h;
            let col = (self.f(&a)? - self.f(&b)?) / (2.0 * h);
            j.set_column(c, &col);
        }
        Ok(j)
    }

    /// ψ⁻¹(y) = (G(y), y''): Newton on p' with p'' frozen.
    pub fn psi_inv(&self, y: &Vector) -> Result<Vector> {
        let (target, ypp) = split(y, self.k);
        let j0 = self.jacobian0.clone().lu();
        let mut a = j0.solve(&target).ok_or(Error::ChartDegenerate(0.0))?;
        let scale = 1.0 + target.norm();
        for _ in 0..60 {
            let p = join(&a, &ypp);
            let r = self.f(&p)? - &target;
            if r.norm() <= NEWTON_TOL * scale {
                return Ok(p);
            }
            let jac = self.jacobian(&p)?;
            let step = jac.lu().solve(&r).ok_or(Error::ChartDegenerate(0.0))?;
            let mut t = 1.0;
            loop {
                let trial = &a - &step * t;
                let rt = self.f(&join(&trial, &ypp))? - &target;
                if rt.norm() < r.norm() || t < 1e-6 {
                    a = trial;
                    break;
                }
                t *= 0.5;
            }
        }
        let p = join(&a, &ypp);
        let r = (self.f(&p)? - &target).norm();
        if r <= 1e-10 * scale {
            return Ok(p);
        }
        Err(Error::NumericalInstability(format!("valley chart inverse stalled at residual {r:.3e}")))
    }
}

/// Builds the valley chart for the frame, fixing a validity radius by halving and fitting M
/// in M⁻¹|F(p)| ≤ |p - ψ⁻¹(p'')| ≤ M|F(p)|.
pub fn valley_chart(frame: &NormalizedFrame, r0: f64, seed: u64) -> Result<ValleyChart> {
    let k = frame.k();
    let n = frame.n();
    let sites = (0..k)
        .map(|i| frame.target_of(&Vector::from_fn(n, |r, _| if r == i { r0 } else { 0.0 })))
        .collect::<Result<Vec<_>>>()?;
    let mut chart = ValleyChart {
        frame: frame.clone(),
        r0,
        k,
        sites,
        jacobian0: DMatrix::identity(k, k),
        validity_radius: 0.0,
        m_fit: f64::NAN,
        roundtrip_error: 0.0,
    };
    let f0 = chart.f(&Vector::zeros(n))?;
    if f0.norm() > 1e-10 {
        return Err(Error::BadConfig(format!("F(0) = {:.3e}, frame is not normalized", f0.norm())));
    }
    chart.jacobian0 = chart.jacobian(&Vector::zeros(n))?;
    let sv = chart.jacobian0.singular_values();
    let smin = sv.min();
    if !(smin > 1e-8 * sv.max().max(1e-300)) || smin < 1e-12 {
        return Err(Error::ChartDegenerate(smin));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut radius = 0.25;
    'halve: for _ in 0..12 {
        let mut worst = 0.0f64;
        for _ in 0..24 {
            let y = random_unit(n, &mut rng) * (radius * rng.gen::<f64>());
            let ok = chart.psi_inv(&y).and_then(|p| {
                let back = chart.psi(&p)?;
                let js = chart.jacobian(&p)?.singular_values().min();
                Ok(((back - &y).norm(), js))
            });
            match ok {
                Ok((e, js)) if e <= 1e-9 && js >= 0.25 * smin => worst = worst.max(e),
                _ => {
                    radius *= 0.5;
                    continue 'halve;
                }
            }
        }
        chart.validity_radius = radius;
        chart.roundtrip_error = worst;
        break;
    }
    if chart.validity_radius == 0.0 {
        return Err(Error::ChartDegenerate(smin));
    }
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for _ in 0..64 {
        let p = random_unit(n, &mut rng) * (0.5 * chart.validity_radius * rng.gen::<f64>());
        let fp = chart.f(&p)?.norm();
        if fp < 1e-10 {
            continue;
        }
        let (_, b) = split(&p, k);
        let base = chart.psi_inv(&join(&Vector::zeros(k), &b))?;
        let ratio = (&p - base).norm() / fp;
        lo = lo.min(ratio);
        hi = hi.max(ratio);
    }
    chart.m_fit = hi.max(1.0 / lo);
    Ok(chart)
}

/// u(x) = max(r₀|x'|, xⁿ, -xⁿ - 2R₀, |x_j| for k < j < n): convex, zero exactly on the
/// segment {x' = 0, x_j = 0, -2R₀ ≤ xⁿ ≤ 0}, with the r₀-ball of the first k directions in ∂u(0).
#[derive(Clone, Debug, Serialize)]
pub struct EuclideanInstance {
    pub n: usize,
    pub k: usize,
    pub r0: f64,
    pub big_r0: f64,
}

impl EuclideanInstance {
    pub fn u(&self, x: &Vector) -> f64 {
        let (a, b) = split(x, self.k);
        let last = b[b.len() - 1];
        let mut v = (self.r0 * a.norm()).max(last).max(-last - 2.0 * self.big_r0);
        for j in 0..b.len() - 1 {
            v = v.max(b[j].abs());
        }
        v
    }
}

/// Dual-coordinate model the barrier inequality is checked in.
#[derive(Clone)]
pub enum Chart {
    /// ũ = u and m̃_p̄(p) = ⟨p, p̄⟩.
    Euclidean(EuclideanInstance),
    General(NormalizedFrame),
}

struct Lifted {
    p: Vector,
    x: Option<Point>,
    u: f64,
}

impl Chart {
    pub fn n(&self) -> usize {
        match self {
            Chart::Euclidean(e) => e.n,
            Chart::General(f) => f.n(),
        }
    }

    pub fn u_tilde(&self, p: &Vector) -> Result<f64> {
        match self {
            Chart::Euclidean(e) => Ok(e.u(p)),
            Chart::General(f) => f.u_tilde(p),
        }
    }

    pub fn m_tilde(&self, pbar: &Vector, p: &Vector) -> Result<f64> {
        match self {
            Chart::Euclidean(_) => Ok(p.dot(pbar)),
            Chart::General(f) => f.m_tilde(pbar, p),
        }
    }

    fn lift(&self, p: &Vector) -> Result<Lifted> {
        match self {
            Chart::Euclidean(e) => Ok(Lifted { p: p.clone(), x: None, u: e.u(p) }),
            Chart::General(f) => {
                let x = f.point(p)?;
                let u = f.u_tilde_at(&x)?;
                Ok(Lifted { p: p.clone(), x: Some(x), u })
            }
        }
    }

    fn target(&self, pbar: &Vector) -> Result<Option<Point>> {
        match self {
            Chart::Euclidean(_) => Ok(None),
            Chart::General(f) => f.target_of(pbar).map(Some),
        }
    }

    fn m_lifted(&self, pbar: &Vector, xbar: &Option<Point>, at: &Lifted) -> Result<f64> {
        match (self, xbar, &at.x) {
            (Chart::General(f), Some(xb), Some(x)) => f.m_tilde_at(xb, x),
            _ => Ok(at.p.dot(pbar)),
        }
    }
}

/// Sampling of W_{d,ρ_d}: p' on a grid of [-a, a]^k, p''/d on the normalized surface grid of [-1, 1]^{n-k}.
#[derive(Clone, Debug, Serialize)]
pub struct WGrid {
    pub half_width: f64,
    pub res: usize,
    pub dir_res: usize,
}

impl Default for WGrid {
    fn default() -> Self {
        WGrid { half_width: 1.0, res: 41, dir_res: 9 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FOfD {
    pub d: f64,
    pub f: f64,
    /// min ũ over the sampled W_{d,ρ_d} before the d² cap.
    pub raw_min: f64,
    pub argmin: Vec<f64>,
    pub evaluated: usize,
}

fn lattice(res: usize, dim: usize, lo: f64, hi: f64) -> Vec<Vector> {
    let step = if res > 1 { (hi - lo) / (res - 1) as f64 } else { 0.0 };
    let total = res.pow(dim as u32);
    (0..total)
        .map(|mut idx| {
            Vector::from_fn(dim, |_, _| {
                let i = idx % res;
                idx /= res;
                if res > 1 { lo + step * i as f64 } else { 0.5 * (lo + hi) }
            })
        })
        .collect()
}

fn sphere_directions(m: usize, res: usize) -> Vec<Vector> {
    if m == 1 {
        return vec![Vector::from_element(1, -1.0), Vector::from_element(1, 1.0)];
    }
    lattice(res.max(2), m, -1.0, 1.0)
        .into_iter()
        .filter(|v| v.amax() >= 1.0 - 1e-12)
        .map(|v| v.normalize())
        .collect()
}

/// f(d) = min over W_{d,ρ_d} of ũ (capped by d² in general mode); grid search then a pattern search.
pub fn f_of_d(u: &(dyn Fn(&Vector) -> Result<f64> + Sync), cfg: &ConstructionConfig, grid: &WGrid) -> Result<FOfD> {
    let sets = build_sets(cfg, 1.0)?;
    let (k, m, d) = (cfg.k, cfg.m(), cfg.d);
    let a = match cfg.mode {
        Mode::Euclidean => grid.half_width.min(1.0),
        Mode::General => grid.half_width,
    };
    let dirs = sphere_directions(m, grid.dir_res);
    let candidates: Vec<Vector> = lattice(grid.res, k, -a, a)
        .into_iter()
        .flat_map(|pp| dirs.iter().map(move |w| join(&pp, &(w * d))).collect::<Vec<_>>())
        .filter(|p| sets.in_w(p, 1e-12))
        .collect();
    if candidates.is_empty() {
        return Err(Error::BadConfig("no grid point lies in W_{d,ρ_d}".into()));
    }
    let vals = candidates.par_iter().map(|p| u(p)).collect::<Result<Vec<_>>>()?;
    let (mut best, mut best_v) = (0usize, f64::INFINITY);
    for (i, &v) in vals.iter().enumerate() {
        if v < best_v {
            best = i;
            best_v = v;
        }
    }
    let evaluated = candidates.len();
    let mut p = candidates[best].clone();
    let mut step = 2.0 * a / (grid.res.max(2) - 1) as f64;
    while step > 1e-12 * (1.0 + a) {
        let mut improved = false;
        for c in 0..cfg.n {
            for s in [-1.0, 1.0] {
                let mut q = p.clone();
                q[c] += s * step;
                // back onto |q''| = d
                let (qa, qb) = split(&q, k);
                let q = join(&qa, &(qb.normalize() * d));
                if qa.amax() > a || !sets.in_w(&q, 1e-12) {
                    continue;
                }
                let v = u(&q)?;
                if v < best_v {
                    best_v = v;
                    p = q;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    if !(best_v > 0.0) {
        return Err(Error::NonpositiveF(best_v));
    }
    let f = match cfg.mode {
        Mode::Euclidean => best_v,
        Mode::General => best_v.min(d * d),
    };
    Ok(FOfD { d, f, raw_min: best_v, argmin: p.as_slice().to_vec(), evaluated })
}

#[derive(Clone, Debug, Serialize)]
pub struct CaseWorst {
    pub case: u8,
    pub checked: usize,
    pub violations: usize,
    /// max of m̃_p̄(p) - ũ(p) over the stratum.
    pub margin: f64,
    pub p: Vec<f64>,
    pub pbar: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BarrierReport {
    pub d: f64,
    pub ok: bool,
    pub cases: Vec<CaseWorst>,
}

impl BarrierReport {
    pub fn worst(&self) -> &CaseWorst {
        self.cases.iter().max_by(|a, b| a.margin.total_cmp(&b.margin)).expect("three strata")
    }

    pub fn require(&self) -> Result<&Self> {
        if self.ok {
            return Ok(self);
        }
        let w = self.worst();
        Err(Error::BarrierViolation { case: w.case, margin: w.margin })
    }
}

fn uniform_ball<R: Rng>(dim: usize, radius: f64, rng: &mut R) -> Vector {
    if dim == 0 {
        return Vector::zeros(0);
    }
    random_unit(dim, rng) * (radius * rng.gen::<f64>().powf(1.0 / dim as f64))
}

/// Points of W̄_d: the base vertices at the axis of the cone first, then random points.
pub fn sample_wbar(sets: &ConstructionSets, count: usize, seed: u64) -> Vec<Vector> {
    let (k, m) = (sets.cfg.k, sets.cfg.m());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axis = Vector::from_fn(m, |i, _| if i + 1 == m { sets.lambda_max } else { 0.0 });
    let mut bases: Vec<Vector> = vec![Vector::zeros(k)];
    for i in 0..k {
        match sets.cfg.mode {
            Mode::Euclidean => {
                for s in [-1.0, 1.0] {
                    bases.push(Vector::from_fn(k, |r, _| if r == i { s * 0.5 * sets.cfg.r0 } else { 0.0 }));
                }
            }
            Mode::General => bases.push(Vector::from_fn(k, |r, _| if r == i { sets.cfg.c0 * sets.cfg.d } else { 0.0 })),
        }
    }
    let mut out: Vec<Vector> = bases.iter().map(|b| join(b, &axis)).collect();
    while out.len() < count.max(out.len()) {
        let base = match sets.cfg.mode {
            Mode::Euclidean => uniform_ball(k, 0.5 * sets.cfg.r0, &mut rng),
            Mode::General => {
                // uniform on the simplex via normalized exponentials with a slack coordinate
                let e: Vec<f64> = (0..=k).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
                let s: f64 = e.iter().sum();
                Vector::from_fn(k, |i, _| sets.cfg.c0 * sets.cfg.d * e[i] / s)
            }
        };
        let dir = if m == 1 {
            Vector::from_element(1, 1.0)
        } else {
            let theta = sets.alpha * rng.gen::<f64>();
            let side = random_unit(m - 1, &mut rng) * theta.sin();
            join(&side, &Vector::from_element(1, theta.cos()))
        };
        out.push(join(&base, &(dir * sets.lambda_max)));
    }
    out
}

/// Points of ∂Q_d in the three strata: 1 = W_{d,ρ_d} ∩ ∂Q_d, 2 = {|F| = f}, 3 = ∂K_{ρ_d}.
pub fn sample_boundary(sets: &ConstructionSets, per_stratum: usize, seed: u64) -> Result<Vec<(u8, Vector)>> {
    let (k, m, d, f) = (sets.cfg.k, sets.cfg.m(), sets.cfg.d, sets.f);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut tries = 0;
    let mut counts = [0usize; 3];
    while counts.iter().any(|&c| c < per_stratum) && tries < 50 * per_stratum {
        tries += 1;
        for case in 1u8..=3 {
            if counts[case as usize - 1] >= per_stratum {
                continue;
            }
            let p = match case {
                1 => {
                    let y = join(&uniform_ball(k, f, &mut rng), &(random_unit(m, &mut rng) * d));
                    sets.psi_inv(&y)?
                }
                2 => {
                    let y = join(&(random_unit(k, &mut rng) * f), &uniform_ball(m, d, &mut rng));
                    sets.psi_inv(&y)?
                }
                _ => {
                    let front = join(&uniform_ball(k, f, &mut rng), &uniform_ball(m - 1, d, &mut rng));
                    match cone_boundary_point(sets, &front)? {
                        Some(p) => p,
                        None => continue,
                    }
                }
            };
            let keep = match case {
                1 => sets.in_w(&p, 1e-9 * d) && sets.big_f(&p)?.norm() <= f * (1.0 + 1e-9),
                2 => sets.in_k(&p),
                _ => split(&p, k).1.norm() <= d,
            };
            if keep {
                counts[case as usize - 1] += 1;
                out.push((case, p));
            }
        }
    }
    Ok(out)
}

/// Solves |p| cos ρ_d = pⁿ for pⁿ ∈ [-d, 0] along ψ⁻¹(y', y''_⊥, t) by bisection.
fn cone_boundary_point(sets: &ConstructionSets, front: &Vector) -> Result<Option<Vector>> {
    let d = sets.cfg.d;
    let cr = sets.rho.cos();
    let at = |t: f64| -> Result<(Vector, f64)> {
        let y = join(front, &Vector::from_element(1, t));
        let p = sets.psi_inv(&y)?;
        let g = p.norm() * cr - p[p.len() - 1];
        Ok((p, g))
    };
    let (mut lo, mut hi) = (-d, 0.0);
    let (_, glo) = at(lo)?;
    let (_, ghi) = at(hi)?;
    if glo < 0.0 || ghi > 0.0 {
        return Ok(None);
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if at(mid)?.1 >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(at(lo)?.0))
}

/// Checks m̃_p̄(p) ≤ ũ(p) on sampled ∂Q_d × W̄_d.
pub fn barrier_check(chart: &Chart, sets: &ConstructionSets, pbar_samples: usize, per_stratum: usize, seed: u64) -> Result<BarrierReport> {
    let boundary = sample_boundary(sets, per_stratum, split_seed(seed, 1))?;
    let lifted = boundary.par_iter().map(|(c, p)| Ok((*c, chart.lift(p)?))).collect::<Result<Vec<_>>>()?;
    let pbars = sample_wbar(sets, pbar_samples, split_seed(seed, 2));
    let per_pbar: Vec<Vec<(u8, f64, usize)>> = pbars
        .par_iter()
        .map(|pbar| {
            let xbar = chart.target(pbar)?;
            lifted
                .iter()
                .enumerate()
                .map(|(i, (c, l))| Ok((*c, chart.m_lifted(pbar, &xbar, l)? - l.u, i)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut cases: Vec<CaseWorst> = (1u8..=3)
        .map(|case| CaseWorst { case, checked: 0, violations: 0, margin: f64::NEG_INFINITY, p: vec![], pbar: vec![] })
        .collect();
    for (j, rows) in per_pbar.iter().enumerate() {
        for &(case, margin, i) in rows {
            let w = &mut cases[case as usize - 1];
            let tol = 1e-14 + 1e-9 * lifted[i].1.u.abs();
            w.checked += 1;
            if margin > tol {
                w.violations += 1;
            }
            if margin > w.margin {
                w.margin = margin;
                w.p = lifted[i].1.p.as_slice().to_vec();
                w.pbar = pbars[j].as_slice().to_vec();
            }
        }
    }
    let ok = cases.iter().all(|c| c.violations == 0);
    Ok(BarrierReport { d: sets.cfg.d, ok, cases })
}

#[derive(Clone, Debug, Serialize)]
pub struct BarrierSchedule {
    pub ok: bool,
    pub halvings: usize,
    pub beta: f64,
    pub c0: f64,
    pub c1: f64,
    pub reports: Vec<BarrierReport>,
}

pub const MAX_HALVINGS: usize = 6;

/// barrier_check over the d sweep, halving β, C₀, C₁ together after a failed sweep.
pub fn barrier_schedule(
    chart: &Chart,
    cfg: &ConstructionConfig,
    ds: &[f64],
    sets_at: &dyn Fn(&ConstructionConfig) -> Result<ConstructionSets>,
    pbar_samples: usize,
    per_stratum: usize,
) -> Result<BarrierSchedule> {
    let mut c = cfg.clone();
    let mut last = None;
    for h in 0..=MAX_HALVINGS {
        let reports = ds
            .iter()
            .map(|&d| barrier_check(chart, &sets_at(&c.with_d(d))?, pbar_samples, per_stratum, split_seed(c.seed, h as u64)))
            .collect::<Result<Vec<_>>>()?;
        let ok = reports.iter().all(|r| r.ok);
        let s = BarrierSchedule { ok, halvings: h, beta: c.beta, c0: c.c0, c1: c.c1, reports };
        if ok {
            return Ok(s);
        }
        last = Some(s);
        c.beta *= 0.5;
        c.c0 *= 0.5;
        c.c1 *= 0.5;
    }
    Ok(last.expect("at least one sweep"))
}

/// A normalized inverse-square frame with a discrete potential whose contact set is the
/// valley segment from 0 towards -2R₀eₙ and whose ∂ũ(0) holds 0 and ±r₀ē_i.
pub struct GeneralInstance {
    pub frame: NormalizedFrame,
    pub potential: DiscretePotential,
    pub valley: Arc<ValleyChart>,
    /// Sites in p̄ coordinates with their offsets λ̃.
    pub dual_sites: Vec<(Vector, f64)>,
}

pub fn inverse_square_instance(n: usize, k: usize, r0: f64, big_r0: f64, seed: u64) -> Result<GeneralInstance> {
    if k < 1 || k >= n {
        return Err(Error::BadConfig("need 1 ≤ k ≤ n - 1".into()));
    }
    let c = CostHandle::inverse_square();
    let x_e = Vector::zeros(n);
    let xbar0 = Vector::from_fn(n, |i, _| match i {
        0 => 1.5,
        1 => 0.3,
        _ => 0.0,
    });
    let unit = |i: usize| Vector::from_fn(n, |r, _| if r == i { 1.0 } else { 0.0 });
    let valley: Vec<Vector> = (k..n).map(unit).collect();
    let dual = build_dual_frames(&c, &x_e, &xbar0, &valley, Some(&unit(n - 1)))?;
    let mut frame = ModifiedFrame::new(c.clone(), xbar0);
    frame.opts = CExpOptions { tol: 1e-14, max_iter: 80, ..CExpOptions::internal() };
    let probe = NormalizedFrame::new(frame.clone(), dual.clone(), Arc::new(|_| Ok(0.0)))?;
    let s = r0;
    let mut dual_sites = vec![(Vector::zeros(n), 0.0)];
    for i in 0..k {
        dual_sites.push((unit(i) * r0, 0.0));
        dual_sites.push((unit(i) * -r0, 0.0));
    }
    for j in k..n - 1 {
        dual_sites.push((unit(j) * s, 0.0));
        dual_sites.push((unit(j) * -s, 0.0));
    }
    dual_sites.push((unit(n - 1) * s, 0.0));
    dual_sites.push((unit(n - 1) * -s, -2.0 * s * big_r0));
    let mut sites = Vec::new();
    let mut lambdas = Vec::new();
    for (a, lt) in &dual_sites {
        let xb = probe.target_of(a)?;
        lambdas.push(c.value(&x_e, &xb)? + lt);
        sites.push(xb);
    }
    let potential = DiscretePotential::new(c, sites, lambdas)?;
    let u = potential.clone();
    let nf = NormalizedFrame::new(frame, dual, Arc::new(move |x| u.value(x)))?;
    let valley = Arc::new(valley_chart(&nf, r0, seed)?);
    Ok(GeneralInstance { frame: nf, potential, valley, dual_sites })
}

impl GeneralInstance {
    pub fn chart(&self) -> Chart {
        Chart::General(self.frame.clone())
    }

    pub fn f_of_d(&self, cfg: &ConstructionConfig, grid: &WGrid) -> Result<FOfD> {
        let frame = &self.frame;
        f_of_d(&|p| frame.u_tilde(p), cfg, grid)
    }

    /// Sets at cfg.d with f measured on the instance and the valley chart attached.
    pub fn sets(&self, cfg: &ConstructionConfig, grid: &WGrid) -> Result<ConstructionSets> {
        let f = self.f_of_d(cfg, grid)?;
        Ok(build_sets(cfg, f.f)?.with_valley(self.valley.clone()))
    }
}
