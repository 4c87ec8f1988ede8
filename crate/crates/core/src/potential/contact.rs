//! Contact sets S₀ = {u = -c(·, x̄₀) + c(x₀, x̄₀) + u(x₀)}, subdifferential containment,
//! and exterior-sphere point selection on their chart images.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{default_active_tol, DiscretePotential, Grid};
use crate::cexp::{c_exp_target, CExpOptions};
use crate::cost::{Point, Vector};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize)]
pub struct ContactSet {
    #[serde(with = "crate::serde_vec::vector")]
    pub x0: Point,
    #[serde(with = "crate::serde_vec::vector")]
    pub xbar0: Point,
    /// x₀ first, then grid points within tol of equality.
    #[serde(with = "crate::serde_vec::vectors")]
    pub points: Vec<Point>,
    /// -D̄c(x, x̄₀) for each point.
    #[serde(with = "crate::serde_vec::vectors")]
    pub chart: Vec<Vector>,
    pub tol: f64,
    /// c(x₀, x̄₀) + u(x₀).
    pub level: f64,
    #[serde(skip)]
    pub potential: DiscretePotential,
}

impl ContactSet {
    pub fn is_singleton(&self) -> bool {
        self.points.len() == 1
    }

    /// EmptyContact when only x₀ qualified.
    pub fn require_nontrivial(&self) -> Result<&Self> {
        if self.is_singleton() {
            Err(Error::EmptyContact)
        } else {
            Ok(self)
        }
    }

    /// u(x) - (-c(x, x̄₀) + level); nonnegative when x̄₀ ∈ ∂_c u(x₀).
    pub fn gap(&self, x: &Point) -> Result<f64> {
        Ok(self.potential.value(x)? + self.potential.cost.value(x, &self.xbar0)? - self.level)
    }

    /// Membership of a chart point, decided at the preimage cExp_{x̄₀}(p).
    pub fn contains_chart(&self, p: &Vector) -> Result<bool> {
        let x = c_exp_target(&self.potential.cost, &self.xbar0, p, &CExpOptions::internal())?;
        Ok(self.gap(&x)? <= self.tol)
    }

    /// Midpoints of random pairs of chart points; returns (checked, outside).
    pub fn midpoint_check(&self, pairs: usize, seed: u64) -> Result<(usize, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = self.chart.len();
        let mut outside = 0;
        for _ in 0..pairs {
            let (a, b) = (rng.gen_range(0..m), rng.gen_range(0..m));
            let mid = (&self.chart[a] + &self.chart[b]) * 0.5;
            if !self.contains_chart(&mid)? {
                outside += 1;
            }
        }
        Ok((pairs, outside))
    }
}

/// Grid points where u touches the c-function through (x₀, x̄₀) within tol.
pub fn contact_set(u: &DiscretePotential, x0: &Point, xbar0: &Point, grid: &Grid, tol: f64) -> Result<ContactSet> {
    let c = &u.cost;
    let level = c.value(x0, xbar0)? + u.value(x0)?;
    let mut set = ContactSet {
        x0: x0.clone(),
        xbar0: xbar0.clone(),
        points: vec![x0.clone()],
        chart: vec![-c.grad_xbar(x0, xbar0)?],
        tol,
        level,
        potential: u.clone(),
    };
    let mut worst = 0.0f64;
    for x in grid.points() {
        let g = set.gap(&x)?;
        worst = worst.min(g);
        if g <= tol && x != *x0 {
            set.chart.push(-c.grad_xbar(&x, xbar0)?);
            set.points.push(x);
        }
    }
    if worst < -tol.max(default_active_tol(level)) {
        return Err(Error::HypothesisUnmet(format!(
            "the c-function through x̄₀ rises above u by {:e}; x̄₀ is not in the c-subdifferential",
            -worst
        )));
    }
    Ok(set)
}

/// Largest s with p = Σ w_j q_j, Σ w_j = 1, w_j ≥ s: positive iff p is in the relative interior.
pub(crate) fn interior_depth(q: &[Vector], p: &Vector) -> Result<f64> {
    let m = q.len();
    let n = p.len();
    let mean = q.iter().fold(Vector::zeros(n), |a, v| a + v) / m as f64;
    let centered = DMatrix::from_fn(n, m, |r, c| q[c][r] - mean[r]);
    let svd = centered.clone().svd(true, false);
    let uu = svd.u.unwrap();
    let smax = svd.singular_values.max();
    let scale = q.iter().fold(p.amax(), |a, v| a.max(v.amax())).max(1e-300);
    let basis: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > 1e-9 * scale.max(smax))
        .collect();
    let d = p - &mean;
    let along = basis.iter().fold(Vector::zeros(n), |a, &i| a + uu.column(i) * uu.column(i).dot(&d));
    if (&d - along).norm() > 1e-8 * scale {
        return Ok(f64::NEG_INFINITY);
    }
    if basis.is_empty() {
        return Ok(1.0 / m as f64);
    }
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let w: Vec<_> = (0..m).map(|_| lp.add_var(0.0, (0.0, 1.0))).collect();
    let s = lp.add_var(1.0, (-1.0, 1.0));
    for &i in &basis {
        let col = uu.column(i);
        let coords: Vec<(minilp::Variable, f64)> = (0..m).map(|j| (w[j], col.dot(&(&q[j] - &mean)))).collect();
        lp.add_constraint(coords.as_slice(), ComparisonOp::Eq, col.dot(&d));
    }
    let ones: Vec<(minilp::Variable, f64)> = w.iter().map(|&v| (v, 1.0)).collect();
    lp.add_constraint(ones.as_slice(), ComparisonOp::Eq, 1.0);
    for &wj in &w {
        lp.add_constraint(&[(wj, 1.0), (s, -1.0)], ComparisonOp::Ge, 0.0);
    }
    match lp.solve() {
        Ok(sol) => Ok(*sol.var_value(s)),
        Err(_) => Ok(f64::NEG_INFINITY),
    }
}

/// Whether every site active at x₀ is still active at x_e.
pub fn containment_test(u: &DiscretePotential, x0: &Point, xbar0: &Point, x_e: &Point, tol: f64) -> Result<bool> {
    let c = &u.cost;
    let at0 = u.evaluate(x0)?;
    let q = at0.argmax.iter().map(|&j| c.grad_x(x0, &u.sites[j]).map(|g| -g)).collect::<Result<Vec<_>>>()?;
    let p = -c.grad_x(x0, xbar0)?;
    let depth = interior_depth(&q, &p)?;
    if !(depth > 1e-9) {
        return Err(Error::HypothesisUnmet(format!(
            "-Dc(x₀, x̄₀) is not in the relative interior of the active covector hull (depth {depth:e})"
        )));
    }
    let b = u.branches(x_e)?;
    let top = b.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(at0.argmax.iter().all(|&j| b[j] >= top - tol))
}

#[derive(Clone, Debug, Serialize)]
pub struct ExteriorSphere {
    #[serde(with = "crate::serde_vec::vector")]
    pub x_e: Point,
    #[serde(with = "crate::serde_vec::vector")]
    pub p_e: Vector,
    pub r0: f64,
    /// Center of the smallest enclosing ball of the chart image.
    #[serde(with = "crate::serde_vec::vector")]
    pub center: Vector,
    /// (p_e - center)/R₀; the chart image lies in the ball of radius R₀ about p_e - R₀·normal.
    #[serde(with = "crate::serde_vec::opt_vector")]
    pub normal: Option<Vector>,
    /// Principal directions of the chart image, a valley basis for the dual frames.
    #[serde(with = "crate::serde_vec::vectors")]
    pub valley: Vec<Vector>,
    pub degenerate: bool,
}

/// Floor used for R₀ when the chart image is a single point.
pub const DEGENERATE_R0: f64 = 1e-6;

pub fn exterior_sphere_point(s0: &ContactSet) -> Result<ExteriorSphere> {
    let scale = s0.chart.iter().fold(0.0f64, |a, v| a.max(v.amax())).max(1.0);
    let ball = smallest_enclosing_ball(&s0.chart);
    if ball.radius <= 1e-12 * scale {
        return Ok(ExteriorSphere {
            x_e: s0.x0.clone(),
            p_e: s0.chart[0].clone(),
            r0: DEGENERATE_R0,
            center: s0.chart[0].clone(),
            normal: None,
            valley: Vec::new(),
            degenerate: true,
        });
    }
    let far = (0..s0.chart.len())
        .max_by(|&a, &b| (&s0.chart[a] - &ball.center).norm().total_cmp(&(&s0.chart[b] - &ball.center).norm()))
        .unwrap();
    let p_e = s0.chart[far].clone();
    let normal = (&p_e - &ball.center) / ball.radius;
    let (_, rank) = super::affine_rank(&s0.chart, 1e-6, 0.0);
    let n = p_e.len();
    let mean = s0.chart.iter().fold(Vector::zeros(n), |a, v| a + v) / s0.chart.len() as f64;
    let centered = DMatrix::from_fn(n, s0.chart.len(), |r, c| s0.chart[c][r] - mean[r]);
    let svd = centered.svd(true, false);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let uu = svd.u.unwrap();
    let valley = order.iter().take(rank).map(|&i| uu.column(i).into_owned()).collect();
    Ok(ExteriorSphere {
        x_e: s0.points[far].clone(),
        p_e,
        r0: ball.radius,
        center: ball.center,
        normal: Some(normal),
        valley,
        degenerate: false,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ball {
    pub center: Vector,
    pub radius: f64,
}

impl Ball {
    fn contains(&self, p: &Vector, slack: f64) -> bool {
        self.radius >= 0.0 && (p - &self.center).norm() <= self.radius + slack
    }
}

/// Smallest ball with every support point on its boundary (circumsphere in their affine hull).
fn circumball(support: &[Vector], dim: usize) -> Ball {
    match support.len() {
        0 => Ball { center: Vector::zeros(dim), radius: -1.0 },
        1 => Ball { center: support[0].clone(), radius: 0.0 },
        k => {
            let p0 = &support[0];
            let a = DMatrix::from_fn(dim, k - 1, |r, c| support[c + 1][r] - p0[r]);
            let g = a.transpose() * &a;
            let rhs = g.diagonal() * 0.5;
            let lam = g.clone().svd(true, true).solve(&rhs, 1e-14 * g.amax().max(1e-300)).unwrap_or_else(|_| rhs.clone());
            let center = p0 + &a * lam;
            let radius = support.iter().map(|s| (s - &center).norm()).fold(0.0, f64::max);
            Ball { center, radius }
        }
    }
}

/// Welzl's algorithm in move-to-front form; recursion depth is bounded by the support size.
pub fn smallest_enclosing_ball(points: &[Vector]) -> Ball {
    assert!(!points.is_empty());
    let dim = points[0].len();
    let scale = points.iter().fold(0.0f64, |a, v| a.max(v.amax())).max(1.0);
    let slack = 1e-12 * scale;
    let mut pts = points.to_vec();
    let mut support = Vec::new();
    fn mtf(pts: &mut Vec<Vector>, end: usize, support: &mut Vec<Vector>, dim: usize, slack: f64) -> Ball {
        let mut ball = circumball(support, dim);
        if support.len() == dim + 1 {
            return ball;
        }
        for i in 0..end {
            if !ball.contains(&pts[i], slack) {
                support.push(pts[i].clone());
                ball = mtf(pts, i, support, dim, slack);
                support.pop();
                pts[..=i].rotate_right(1);
            }
        }
        ball
    }
    let len = pts.len();
    mtf(&mut pts, len, &mut support, dim, slack)
}
