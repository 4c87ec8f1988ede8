//! Checks of the structural consequences of A3w: Loeper's maximum principle,
//! sublevel-set convexity of modified potentials, and local-to-global.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cexp::{c_exp_source, c_exp_target, CExpOptions, ModifiedFrame};
use crate::cost::{CostHandle, DomainPair, Point, Vector};
use crate::error::{Error, Result};
use crate::mtw::{classify, min_orthogonal_for_eta, mtw_tensor_fd, Classification, ClassifyOptions, MtwReport,
    DEFAULT_P_STEP};
use crate::potential::DiscretePotential;

/// Which side the covector segment lives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Roles {
    /// Covectors at a source point x₀, images in the target.
    Source,
    /// Covectors at a target point x̄₀, images in the source.
    Target,
}

/// t ↦ cExp_{anchor}((1 - t) p̄(0) + t p̄(1)).
#[derive(Clone, Debug, Serialize)]
pub struct CSegment {
    #[serde(with = "crate::serde_vec::vector")]
    pub anchor: Point,
    #[serde(with = "crate::serde_vec::vector")]
    pub p0: Vector,
    #[serde(with = "crate::serde_vec::vector")]
    pub p1: Vector,
    pub roles: Roles,
}

impl CSegment {
    pub fn new(anchor: Point, p0: Vector, p1: Vector) -> Self {
        CSegment { anchor, p0, p1, roles: Roles::Source }
    }

    pub fn reversed(anchor: Point, p0: Vector, p1: Vector) -> Self {
        CSegment { anchor, p0, p1, roles: Roles::Target }
    }

    /// Segment between the chart images of two points on the far side.
    pub fn through(c: &CostHandle, anchor: &Point, a: &Point, b: &Point, roles: Roles) -> Result<Self> {
        let chart = |y: &Point| -> Result<Vector> {
            Ok(match roles {
                Roles::Source => -c.grad_x(anchor, y)?,
                Roles::Target => -c.grad_xbar(y, anchor)?,
            })
        };
        Ok(CSegment { anchor: anchor.clone(), p0: chart(a)?, p1: chart(b)?, roles })
    }

    pub fn covector(&self, t: f64) -> Vector {
        &self.p0 * (1.0 - t) + &self.p1 * t
    }

    pub fn point(&self, c: &CostHandle, t: f64) -> Result<Point> {
        let p = self.covector(t);
        let opts = CExpOptions::internal();
        match self.roles {
            Roles::Source => c_exp_source(c, &self.anchor, &p, &opts),
            Roles::Target => c_exp_target(c, &self.anchor, &p, &opts),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MaxPrincipleReport {
    pub ok: bool,
    pub worst_t: f64,
    /// max_t f(t) - max(f(0), f(1)); positive margins above tol are violations.
    pub margin: f64,
    pub tol: f64,
}

impl MaxPrincipleReport {
    pub fn require(&self) -> Result<&Self> {
        if self.ok {
            Ok(self)
        } else {
            Err(Error::MaxPrincipleViolation { t: self.worst_t, margin: self.margin })
        }
    }
}

/// Chebyshev-spaced interior nodes on (0, 1) plus both endpoints.
pub fn chebyshev_nodes(count: usize) -> Vec<f64> {
    let mut t = vec![0.0];
    t.extend((0..count).map(|k| 0.5 * (1.0 - (std::f64::consts::PI * (k as f64 + 0.5) / count as f64).cos())));
    t.push(1.0);
    t
}

/// f(t) = -c(x, x̄(t)) + c(x₀, x̄(t)) along the segment (roles swapped for `Roles::Target`).
pub fn max_principle_check(c: &CostHandle, x: &Point, seg: &CSegment, t_samples: usize) -> Result<MaxPrincipleReport> {
    let f = |t: f64| -> Result<f64> {
        let y = seg.point(c, t)?;
        Ok(match seg.roles {
            Roles::Source => -c.value(x, &y)? + c.value(&seg.anchor, &y)?,
            Roles::Target => -c.value(&y, x)? + c.value(&y, &seg.anchor)?,
        })
    };
    let nodes = chebyshev_nodes(t_samples);
    let vals = nodes.iter().map(|&t| f(t)).collect::<Result<Vec<_>>>()?;
    let ends = vals[0].max(vals[vals.len() - 1]);
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, v) in vals.iter().enumerate().skip(1).take(nodes.len() - 2) {
        if *v > best.1 {
            best = (i, *v);
        }
    }
    let (mut worst_t, mut top) = (nodes[best.0], best.1);
    // golden-section refinement between the neighbors of the best node
    let (mut a, mut b) = (nodes[best.0 - 1], nodes[best.0 + 1]);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c1, mut c2) = (b - g * (b - a), a + g * (b - a));
    let (mut f1, mut f2) = (f(c1)?, f(c2)?);
    for _ in 0..40 {
        if f1 > f2 {
            b = c2;
            c2 = c1;
            f2 = f1;
            c1 = b - g * (b - a);
            f1 = f(c1)?;
        } else {
            a = c1;
            c1 = c2;
            f1 = f2;
            c2 = a + g * (b - a);
            f2 = f(c2)?;
        }
    }
    for (t, v) in [(c1, f1), (c2, f2)] {
        if v > top {
            top = v;
            worst_t = t;
        }
    }
    let sup = vals.iter().fold(top.abs(), |m, v| m.max(v.abs()));
    let tol = 1e-9 * (1.0 + sup);
    let margin = top - ends;
    Ok(MaxPrincipleReport { ok: margin <= tol, worst_t, margin, tol })
}

#[derive(Clone, Debug, Serialize)]
pub struct LoeperWitness {
    pub x0: Vec<f64>,
    pub x: Vec<f64>,
    pub p0: Vec<f64>,
    pub p1: Vec<f64>,
    pub t: f64,
    pub margin: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LoeperSuite {
    pub cost: String,
    pub roles: Roles,
    pub trials: usize,
    pub violations: usize,
    pub worst_margin: f64,
    pub witnesses: Vec<LoeperWitness>,
    pub seed: u64,
}

/// Random (x₀, x, segment) instances drawn from the domain pair.
pub fn loeper_suite(
    c: &CostHandle,
    pair: &DomainPair,
    trials: usize,
    t_samples: usize,
    roles: Roles,
    seed: u64,
) -> Result<LoeperSuite> {
    let results: Vec<(LoeperWitness, bool)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(crate::mtw::split_seed(seed, i as u64));
            let (home, away) = match roles {
                Roles::Source => (&pair.source, &pair.target),
                Roles::Target => (&pair.target, &pair.source),
            };
            let x0 = home.sample(&mut rng);
            let x = home.sample(&mut rng);
            let (a, b) = (away.sample(&mut rng), away.sample(&mut rng));
            let seg = CSegment::through(c, &x0, &a, &b, roles)?;
            let r = max_principle_check(c, &x, &seg, t_samples)?;
            Ok((
                LoeperWitness {
                    x0: x0.as_slice().to_vec(),
                    x: x.as_slice().to_vec(),
                    p0: seg.p0.as_slice().to_vec(),
                    p1: seg.p1.as_slice().to_vec(),
                    t: r.worst_t,
                    margin: r.margin,
                },
                r.ok,
            ))
        })
        .collect::<Result<_>>()?;
    let worst_margin = results.iter().map(|r| r.0.margin).fold(f64::NEG_INFINITY, f64::max);
    let mut witnesses: Vec<LoeperWitness> = results.iter().filter(|r| !r.1).map(|r| r.0.clone()).collect();
    witnesses.sort_by(|a, b| b.margin.total_cmp(&a.margin));
    let violations = witnesses.len();
    witnesses.truncate(16);
    Ok(LoeperSuite { cost: c.name(), roles, trials, violations, worst_margin, witnesses, seed })
}

/// Smallest orthogonal MTW value found along a violating segment, with η the segment direction.
/// Negative values co-locate the violation with a failure of A3w.
pub fn witness_mtw(c: &CostHandle, w: &LoeperWitness) -> Result<(f64, f64)> {
    let x0 = Vector::from_column_slice(&w.x0);
    let seg = CSegment::new(x0.clone(), Vector::from_column_slice(&w.p0), Vector::from_column_slice(&w.p1));
    let eta = &seg.p1 - &seg.p0;
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..=16 {
        let t = k as f64 / 16.0;
        let xbar = seg.point(c, t)?;
        let tensor = mtw_tensor_fd(c, &x0, &xbar, DEFAULT_P_STEP)?;
        let (v, _) = min_orthogonal_for_eta(&tensor, &eta);
        if v < best.0 {
            best = (v, t);
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, Serialize)]
pub struct ControlCost {
    pub expression: String,
    pub report: MtwReport,
    pub tried: Vec<String>,
}

/// Random search over |x - x̄|^q and a few perturbations for a cost the classifier certifies as failing A3w.
pub fn find_control_cost(pair: &DomainPair, seed: u64, budget: usize) -> Result<ControlCost> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tried = Vec::new();
    let opts = ClassifyOptions { samples: 8, restarts: 16, seed, ..Default::default() };
    for _ in 0..budget {
        let q: f64 = (rng.gen_range(-30..=60) as f64) / 10.0;
        let expr = match rng.gen_range(0..3) {
            0 => format!("norm(x - xbar)^{q}"),
            1 => format!("norm(x - xbar)^{q} + {:.2} * dot(x, xbar)", rng.gen_range(-1.0..1.0)),
            _ => format!("exp({:.2} * norm(x - xbar)^2)", rng.gen_range(0.1..1.5)),
        };
        tried.push(expr.clone());
        let Ok(cost) = CostHandle::user_expression(&expr) else { continue };
        let cost = cost.with_domains(pair.clone());
        match classify(&cost, pair, &opts) {
            Ok(report) if report.classification == Classification::FailsA3w => {
                return Ok(ControlCost { expression: expr, report, tried });
            }
            _ => continue,
        }
    }
    Err(Error::HypothesisUnmet(format!("no A3w-failing cost among {} candidates", tried.len())))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SublevelChart {
    /// p = -D̄c(x, x̄₀), the coordinates in which the statement holds.
    Cotangent,
    /// Plain x-coordinates, as a negative control.
    Plain,
}

#[derive(Clone, Debug, Serialize)]
pub struct SublevelReport {
    pub ok: bool,
    pub checked: usize,
    pub violations: usize,
    pub worst_excess: f64,
    pub worst_pair: Option<(Vec<f64>, Vec<f64>)>,
}

impl SublevelReport {
    pub fn require(&self) -> Result<&Self> {
        if self.ok {
            Ok(self)
        } else {
            Err(Error::ConvexityViolation { excess: self.worst_excess })
        }
    }
}

/// Midpoint membership in {ũ ≤ -c̃(·, x̄₀) + λ₀} for pairs drawn from the source domain.
pub fn sublevel_convexity_check(
    frame: &ModifiedFrame,
    u: &DiscretePotential,
    lambda0: f64,
    pair_samples: usize,
    chart: SublevelChart,
    seed: u64,
) -> Result<SublevelReport> {
    let c = &frame.cost;
    let pair = c
        .domains
        .as_ref()
        .ok_or_else(|| Error::BadConfig("sublevel check samples from the cost's source domain".into()))?;
    let level = |x: &Point| -> Result<f64> { Ok(u.value(x)? + c.value(x, &frame.xbar0)? - lambda0) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut members = Vec::new();
    let mut draws = 0;
    while members.len() < 64 && draws < 200_000 {
        draws += 1;
        let x = pair.source.sample(&mut rng);
        if level(&x)? <= 0.0 {
            members.push(x);
        }
    }
    if members.len() < 2 {
        return Err(Error::BadConfig("sublevel set is (numerically) empty on the source domain".into()));
    }
    let tol = 1e-9 * (1.0 + lambda0.abs());
    let mut report = SublevelReport { ok: true, checked: 0, violations: 0, worst_excess: 0.0, worst_pair: None };
    for _ in 0..pair_samples {
        let a = &members[rng.gen_range(0..members.len())];
        let b = &members[rng.gen_range(0..members.len())];
        let mid = match chart {
            SublevelChart::Cotangent => {
                let p = (frame.chart(a)? + frame.chart(b)?) * 0.5;
                frame.point(&p)?
            }
            SublevelChart::Plain => (a + b) * 0.5,
        };
        let excess = level(&mid)?;
        report.checked += 1;
        if excess > tol {
            report.violations += 1;
            if excess > report.worst_excess {
                report.worst_excess = excess;
                report.worst_pair = Some((a.as_slice().to_vec(), b.as_slice().to_vec()));
            }
        }
    }
    report.ok = report.violations == 0;
    Ok(report)
}

/// Whether x̄₀ lies in ∂_c u at a local minimum of u + c(·, x̄₀) - λ₀.
/// The local minimum is tested on a (2·rings+1)^n stencil of spacing h.
pub fn local_to_global_check(
    c: &CostHandle,
    u: &DiscretePotential,
    xbar0: &Point,
    lambda0: f64,
    x_local_min: &Point,
    h: f64,
    rings: usize,
) -> Result<bool> {
    let g = |x: &Point| -> Result<f64> { Ok(u.value(x)? + c.value(x, xbar0)? - lambda0) };
    let g0 = g(x_local_min)?;
    let n = x_local_min.len();
    let side = 2 * rings + 1;
    let tol = 1e-9 * (1.0 + g0.abs());
    let mut drop = 0.0f64;
    for idx in 0..side.pow(n as u32) {
        let mut y = x_local_min.clone();
        let mut k = idx;
        for i in 0..n {
            y[i] += h * ((k % side) as f64 - rings as f64);
            k /= side;
        }
        drop = drop.max(g0 - g(&y)?);
    }
    if drop > tol {
        return Err(Error::NotALocalMin { drop });
    }
    let s = u.c_subdifferential(x_local_min, &Default::default())?;
    let target = -c.grad_x(x_local_min, xbar0)?;
    if s.active.iter().any(|&j| (&u.sites[j] - xbar0).norm() <= 1e-12 * (1.0 + xbar0.norm())) {
        return Ok(true);
    }
    // a non-site x̄₀ belongs to ∂_c u(x) when its covector lies in the hull of the active ones
    Ok(crate::potential::contact::interior_depth(&s.covectors, &target)? >= -1e-9)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::Domain;

    fn v(c: &[f64]) -> Vector {
        Vector::from_column_slice(c)
    }

    fn separated() -> DomainPair {
        DomainPair::new(Domain::ball(&[0.0, 0.0], 0.5), Domain::ball(&[2.5, 0.5], 0.7)).unwrap()
    }

    #[test]
    fn bilinear_segment_is_affine() {
        let c = CostHandle::neg_inner_product();
        let seg = CSegment::new(v(&[0.1, 0.2]), v(&[1.0, 0.0]), v(&[0.0, 1.0]));
        let r = max_principle_check(&c, &v(&[0.5, -0.3]), &seg, 16).unwrap();
        assert!(r.ok && r.margin <= 1e-12, "{r:?}");
    }

    #[test]
    fn nodes_are_sorted_and_bracketed() {
        let t = chebyshev_nodes(8);
        assert_eq!((t[0], t[9]), (0.0, 1.0));
        assert!(t.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn inverse_square_suite_small() {
        let c = CostHandle::inverse_square();
        for roles in [Roles::Source, Roles::Target] {
            let s = loeper_suite(&c, &separated(), 200, 16, roles, 4).unwrap();
            assert_eq!(s.violations, 0, "{:?}", s.witnesses.first());
        }
    }

    #[test]
    fn quartic_distance_violates() {
        let c = CostHandle::user_expression("norm(x - xbar)^4").unwrap().with_domains(separated());
        let s = loeper_suite(&c, &separated(), 300, 16, Roles::Source, 5).unwrap();
        assert!(s.violations > 0);
        let (val, _) = witness_mtw(&c, &s.witnesses[0]).unwrap();
        assert!(val < 0.0, "{val}");
    }

    fn five_sites() -> DiscretePotential {
        let sites = vec![v(&[2.3, 0.3]), v(&[2.8, 0.9]), v(&[2.2, 1.0]), v(&[3.0, 0.2]), v(&[2.6, 0.6])];
        DiscretePotential::new(CostHandle::inverse_square(), sites, vec![0.0, 0.02, -0.01, 0.03, 0.005]).unwrap()
    }

    #[test]
    fn sublevel_sets_convex_in_the_cotangent_chart() {
        let c = CostHandle::inverse_square().with_domains(separated());
        let frame = ModifiedFrame::new(c.clone(), v(&[2.5, 0.5]));
        let u = five_sites();
        let center = v(&[0.0, 0.0]);
        let lambda0 = u.value(&center).unwrap() + c.value(&center, &frame.xbar0).unwrap() + 0.02;
        let r = sublevel_convexity_check(&frame, &u, lambda0, 500, SublevelChart::Cotangent, 1).unwrap();
        assert!(r.ok, "{r:?}");
    }

    #[test]
    fn local_to_global_at_a_kink() {
        let c = CostHandle::inverse_square();
        let u = five_sites();
        // lift branches 0 and 1 to a tie above the rest at x_k
        let xk = v(&[0.1, -0.05]);
        let b = u.branches(&xk).unwrap();
        let top = b.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut lam = u.lambdas.clone();
        lam[0] += top - b[0] + 0.01;
        lam[1] += top - b[1] + 0.01;
        let u = DiscretePotential::new(c.clone(), u.sites.clone(), lam).unwrap();
        let s = u.c_subdifferential(&xk, &Default::default()).unwrap();
        assert_eq!(s.active.len(), 2, "{:?}", s.active);
        assert!(s.active.contains(&0) && s.active.contains(&1), "{:?}", s.active);
        let q = (&s.covectors[0] + &s.covectors[1]) * 0.5;
        let xbar0 = c_exp_source(&c, &xk, &q, &CExpOptions::internal()).unwrap();
        let lambda0 = u.value(&xk).unwrap() + c.value(&xk, &xbar0).unwrap();
        assert!(local_to_global_check(&c, &u, &xbar0, lambda0, &xk, 1e-3, 3).unwrap());
        assert!(local_to_global_check(&c, &u, &u.sites[0], lambda0, &xk, 1e-3, 1).is_ok());
        let off = v(&[0.3, 0.2]);
        let r = local_to_global_check(&c, &u, &xbar0, lambda0, &off, 1e-2, 1);
        assert!(matches!(r, Err(Error::NotALocalMin { .. })));
    }
}
