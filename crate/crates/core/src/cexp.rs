//! c-exponential maps, cotangent charts, modified costs and dual frames.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cost::{CostHandle, CostKind, Point, Vector};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct CExpOptions {
    /// Residual tolerance, multiplied by max(1, |p|).
    pub tol: f64,
    pub max_iter: usize,
    /// Reject solutions outside the declared domain.
    pub check_domain: bool,
    pub initial: Option<Point>,
}

impl Default for CExpOptions {
    fn default() -> Self {
        CExpOptions { tol: 1e-11, max_iter: 50, check_domain: true, initial: None }
    }
}

impl CExpOptions {
    /// Options for solves inside other computations: no domain check.
    pub fn internal() -> Self {
        CExpOptions { check_domain: false, ..Default::default() }
    }
}

/// Smallest relative residual accepted when D_x c comes from finite differences.
pub const FD_RESIDUAL_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Side {
    /// Solve -Dc(x0, xbar) = p for xbar.
    Source,
    /// Solve -D̄c(x, xbar0) = p for x.
    Target,
}

/// xbar with -Dc(x0, xbar) = p.
pub fn c_exp_source(c: &CostHandle, x0: &Point, p: &Vector, opts: &CExpOptions) -> Result<Point> {
    newton(c, x0, p, opts, Side::Source)
}

/// x with -D̄c(x, xbar0) = p.
pub fn c_exp_target(c: &CostHandle, xbar0: &Point, p: &Vector, opts: &CExpOptions) -> Result<Point> {
    newton(c, xbar0, p, opts, Side::Target)
}

fn analytic_guess(c: &CostHandle, base: &Point, p: &Vector) -> Option<Point> {
    match c.kind {
        CostKind::NegInnerProduct => Some(p.clone()),
        CostKind::HalfSquaredDistance => Some(base + p),
        CostKind::InverseSquare => {
            let np = p.norm();
            (np > 0.0).then(|| base - p * (2f64.powf(1.0 / 3.0) * np.powf(-4.0 / 3.0)))
        }
        CostKind::UserExpression { .. } => None,
    }
}

fn residual(c: &CostHandle, base: &Point, y: &Point, p: &Vector, side: Side) -> Result<Vector> {
    Ok(match side {
        Side::Source => -c.grad_x(base, y)? - p,
        Side::Target => -c.grad_xbar(y, base)? - p,
    })
}

fn newton(c: &CostHandle, base: &Point, p: &Vector, opts: &CExpOptions, side: Side) -> Result<Point> {
    let n = base.len();
    if p.len() != n {
        return Err(Error::DomainViolation("covector dimension mismatch".into()));
    }
    let far_domain = c.domains.as_ref().map(|d| match side {
        Side::Source => &d.target,
        Side::Target => &d.source,
    });
    let mut y = opts
        .initial
        .clone()
        .or_else(|| analytic_guess(c, base, p))
        .or_else(|| far_domain.map(|d| d.center()))
        .unwrap_or_else(|| base + p);
    // a finite-difference gradient cannot resolve residuals below its own noise
    let floor = if c.fd_gradient() { FD_RESIDUAL_FLOOR } else { 0.0 };
    let tol = opts.tol.max(floor) * p.norm().max(1.0);
    let mut f = residual(c, base, &y, p, side)?;
    let mut fnorm = f.norm();
    let mut iterations = 0;
    let mut converged_at = None;
    while iterations < opts.max_iter {
        if fnorm <= tol && converged_at.is_none() {
            converged_at = Some(iterations);
        }
        // two polishing steps past convergence, kept only when they help
        if converged_at.is_some_and(|k| iterations >= k + 2) {
            break;
        }
        iterations += 1;
        let jet = match side {
            Side::Source => c.jet(base, &y, 2)?,
            Side::Target => c.jet(&y, base, 2)?,
        };
        let j = match side {
            Side::Source => -jet.mixed().clone(),
            Side::Target => -jet.mixed().transpose(),
        };
        let Some(step) = j.lu().solve(&-&f) else {
            return Err(Error::CExpDivergence { residual: fnorm, iterations });
        };
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-10 {
            let trial = &y + &step * t;
            if let Ok(ft) = residual(c, base, &trial, p, side) {
                let nt = ft.norm();
                if nt.is_finite() && nt < (1.0 - 1e-4 * t) * fnorm {
                    y = trial;
                    f = ft;
                    fnorm = nt;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if fnorm > tol {
        return Err(Error::CExpDivergence { residual: fnorm, iterations });
    }
    if opts.check_domain {
        if let Some(d) = far_domain {
            // allow round-off on the boundary
            if d.signed_distance(&y) < -1e-9 * d.diameter() {
                return Err(Error::OutOfDomain(y.as_slice().to_vec()));
            }
        }
    }
    Ok(y)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartDirection {
    /// Points x of the source mapped to -D̄c(x, base) at a target base point.
    SourceToCotangent,
    /// Points xbar of the target mapped to -Dc(base, xbar) at a source base point.
    TargetToCotangent,
}

#[derive(Clone, Debug)]
pub struct CotangentChart {
    pub cost: CostHandle,
    pub base: Point,
    pub direction: ChartDirection,
}

impl CotangentChart {
    pub fn new(cost: CostHandle, base: Point, direction: ChartDirection) -> Self {
        CotangentChart { cost, base, direction }
    }

    pub fn to_cotangent(&self, point: &Point) -> Result<Vector> {
        Ok(match self.direction {
            ChartDirection::SourceToCotangent => -self.cost.grad_xbar(point, &self.base)?,
            ChartDirection::TargetToCotangent => -self.cost.grad_x(&self.base, point)?,
        })
    }

    pub fn from_cotangent(&self, p: &Vector) -> Result<Point> {
        let opts = CExpOptions::internal();
        match self.direction {
            ChartDirection::SourceToCotangent => c_exp_target(&self.cost, &self.base, p, &opts),
            ChartDirection::TargetToCotangent => c_exp_source(&self.cost, &self.base, p, &opts),
        }
    }
}

/// Modified cost c̃(p, xbar) = c(x(p), xbar) - c(x(p), xbar0) with x(p) = cExp_{xbar0}(p).
#[derive(Clone, Debug)]
pub struct ModifiedFrame {
    pub cost: CostHandle,
    pub xbar0: Point,
    pub opts: CExpOptions,
}

impl ModifiedFrame {
    pub fn new(cost: CostHandle, xbar0: Point) -> Self {
        ModifiedFrame { cost, xbar0, opts: CExpOptions::internal() }
    }

    pub fn point(&self, p: &Vector) -> Result<Point> {
        c_exp_target(&self.cost, &self.xbar0, p, &self.opts)
    }

    pub fn chart(&self, x: &Point) -> Result<Vector> {
        Ok(-self.cost.grad_xbar(x, &self.xbar0)?)
    }

    pub fn modified_cost(&self, p: &Vector, xbar: &Point) -> Result<f64> {
        let x = self.point(p)?;
        self.modified_cost_at(&x, xbar)
    }

    pub fn modified_cost_at(&self, x: &Point, xbar: &Point) -> Result<f64> {
        Ok(self.cost.value(x, xbar)? - self.cost.value(x, &self.xbar0)?)
    }

    /// -Dc̃(p, xbar) = [-DD̄c(x, xbar0)]^{-1} (-Dc(x, xbar) + Dc(x, xbar0)).
    pub fn modified_differential(&self, p: &Vector, xbar: &Point) -> Result<Vector> {
        let x = self.point(p)?;
        let j0 = self.cost.jet(&x, &self.xbar0, 2)?;
        let g = self.cost.grad_x(&x, xbar)?;
        let rhs = -g + &j0.grad_x;
        let b = -j0.mixed().clone();
        b.lu()
            .solve(&rhs)
            .ok_or_else(|| Error::NumericalInstability("singular mixed Hessian".into()))
    }

    /// ũ(p) = u(x(p)) + c(x(p), xbar0).
    pub fn modified_potential(&self, u: &dyn Fn(&Point) -> Result<f64>, p: &Vector) -> Result<f64> {
        let x = self.point(p)?;
        Ok(u(&x)? + self.cost.value(&x, &self.xbar0)?)
    }
}

/// Orthonormal basis {e_i} of the cotangent space at xbar0 and its dual {ē_i} at x_e,
/// paired through B = -DD̄c(x_e, xbar0): e_iᵀ B^{-1} ē_j = δ_ij.
#[derive(Clone, Debug, Serialize)]
pub struct DualFrames {
    #[serde(with = "crate::serde_vec::vector")]
    pub x_e: Point,
    #[serde(with = "crate::serde_vec::vector")]
    pub xbar0: Point,
    /// -D̄c(x_e, xbar0), the chart image of x_e.
    #[serde(with = "crate::serde_vec::vector")]
    pub p_e: Vector,
    /// -Dc(x_e, xbar0).
    #[serde(with = "crate::serde_vec::vector")]
    pub pbar0: Vector,
    /// Columns e_1..e_n.
    #[serde(with = "crate::serde_vec::matrix")]
    pub e: DMatrix<f64>,
    /// Columns ē_1..ē_n.
    #[serde(with = "crate::serde_vec::matrix")]
    pub ebar: DMatrix<f64>,
    #[serde(with = "crate::serde_vec::matrix")]
    pub b: DMatrix<f64>,
    pub k: usize,
    pub condition: f64,
    pub pairing_residual: f64,
}

pub const FRAME_CONDITION_LIMIT: f64 = 1e12;

pub fn build_dual_frames(
    c: &CostHandle,
    x_e: &Point,
    xbar0: &Point,
    valley_basis: &[Vector],
    normal: Option<&Vector>,
) -> Result<DualFrames> {
    let n = x_e.len();
    if valley_basis.len() >= n {
        return Err(Error::BadConfig("valley basis must have fewer than n vectors".into()));
    }
    let k = n - valley_basis.len();
    let jet = c.jet(x_e, xbar0, 2)?;
    let b = -jet.mixed().clone();
    let sv = b.singular_values();
    let condition = sv.max() / sv.min();
    if !condition.is_finite() || condition > FRAME_CONDITION_LIMIT {
        return Err(Error::SingularFrame(condition));
    }
    let mut valley = orthonormalize(valley_basis, n);
    if valley.len() < n - k {
        return Err(Error::BadConfig("valley basis is rank deficient".into()));
    }
    if let Some(nrm) = normal {
        // keep the normal's component inside the valley and make it e_n
        let inside = valley.iter().fold(DVector::zeros(n), |acc, q| acc + q * q.dot(nrm));
        if inside.norm() > 1e-12 * nrm.norm() {
            let mut seeds = vec![inside];
            seeds.extend(valley.iter().cloned());
            let mut q = orthonormalize(&seeds, n);
            q.rotate_left(1);
            valley = q;
        }
    }
    let mut all = valley.clone();
    for i in 0..n {
        all.push(DVector::from_fn(n, |r, _| if r == i { 1.0 } else { 0.0 }));
    }
    let full = orthonormalize(&all, n);
    let complement: Vec<Vector> = full[n - k..].to_vec();
    let mut cols = complement;
    cols.extend(valley);
    let e = DMatrix::from_columns(&cols);
    let ebar = &b * &e;
    let mut frames = DualFrames {
        x_e: x_e.clone(),
        xbar0: xbar0.clone(),
        p_e: -jet.grad_xbar.clone(),
        pbar0: -jet.grad_x.clone(),
        e,
        ebar,
        b,
        k,
        condition,
        pairing_residual: 0.0,
    };
    frames.pairing_residual = frames.pairing_check(100, 17);
    Ok(frames)
}

/// Gram-Schmidt with re-orthogonalization; vectors that fall into the span are dropped.
fn orthonormalize(vs: &[Vector], n: usize) -> Vec<Vector> {
    let mut out: Vec<Vector> = Vec::new();
    for v in vs {
        if out.len() == n {
            break;
        }
        let mut w = v.clone();
        for _ in 0..2 {
            for q in &out {
                w -= q * q.dot(&w);
            }
        }
        let nw = w.norm();
        if nw > 1e-10 * v.norm().max(1e-300) {
            out.push(w / nw);
        }
    }
    out
}

impl DualFrames {
    pub fn n(&self) -> usize {
        self.x_e.len()
    }

    /// max |e_iᵀ B^{-1} ē_j - δ_ij|.
    pub fn duality_residual(&self) -> f64 {
        let binv = self.b.clone().try_inverse().expect("frame matrix checked invertible");
        let m = self.e.transpose() * binv * &self.ebar;
        let n = self.n();
        (m - DMatrix::<f64>::identity(n, n)).abs().max()
    }

    /// Largest gap in ⟨p, p̄⟩_coords = ⟨p - p_e, B^{-1}(p̄ - p̄0)⟩ over random coordinate pairs.
    pub fn pairing_check(&self, samples: usize, seed: u64) -> f64 {
        let binv = self.b.clone().try_inverse().expect("frame matrix checked invertible");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.n();
        let mut worst = 0.0f64;
        for _ in 0..samples {
            let a = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let bb = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let p = self.p_point(&a);
            let pbar = self.pbar_point(&bb);
            let lhs = a.dot(&bb);
            let rhs = (p - &self.p_e).dot(&(&binv * (pbar - &self.pbar0)));
            worst = worst.max((lhs - rhs).abs() / (1.0 + lhs.abs()));
        }
        worst
    }

    /// p_e + Σ a^i e_i.
    pub fn p_point(&self, coords: &Vector) -> Vector {
        &self.p_e + &self.e * coords
    }

    /// p̄0 + Σ a^i ē_i.
    pub fn pbar_point(&self, coords: &Vector) -> Vector {
        &self.pbar0 + &self.ebar * coords
    }

    /// Inverse of `p_point`.
    pub fn p_coords(&self, p: &Vector) -> Vector {
        self.e.transpose() * (p - &self.p_e)
    }
}

pub type PotentialFn = Arc<dyn Fn(&Point) -> Result<f64> + Send + Sync>;

/// Modified frame in dual-frame coordinates with ũ(0) = 0: the chart used by the
/// construction, where m̃_p̄(p) = -c̃(p, x̄_p̄) + c̃(0, x̄_p̄) supports ũ.
#[derive(Clone)]
pub struct NormalizedFrame {
    pub frame: ModifiedFrame,
    pub dual: DualFrames,
    pub u: PotentialFn,
    pub u_offset: f64,
}

impl NormalizedFrame {
    pub fn new(frame: ModifiedFrame, dual: DualFrames, u: PotentialFn) -> Result<Self> {
        let u_offset = u(&dual.x_e)? + frame.cost.value(&dual.x_e, &frame.xbar0)?;
        Ok(NormalizedFrame { frame, dual, u, u_offset })
    }

    pub fn n(&self) -> usize {
        self.dual.n()
    }

    pub fn k(&self) -> usize {
        self.dual.k
    }

    pub fn cost(&self) -> &CostHandle {
        &self.frame.cost
    }

    pub fn point(&self, coords: &Vector) -> Result<Point> {
        self.frame.point(&self.dual.p_point(coords))
    }

    pub fn coords_of(&self, x: &Point) -> Result<Vector> {
        Ok(self.dual.p_coords(&self.frame.chart(x)?))
    }

    /// x̄ = cExp_{x_e}(p̄0 + Σ a^i ē_i).
    pub fn target_of(&self, pbar_coords: &Vector) -> Result<Point> {
        let pbar = self.dual.pbar_point(pbar_coords);
        let opts = CExpOptions { initial: None, ..self.frame.opts.clone() };
        c_exp_source(&self.frame.cost, &self.dual.x_e, &pbar, &opts)
    }

    pub fn u_tilde(&self, coords: &Vector) -> Result<f64> {
        let x = self.point(coords)?;
        self.u_tilde_at(&x)
    }

    pub fn u_tilde_at(&self, x: &Point) -> Result<f64> {
        Ok((self.u)(x)? + self.frame.cost.value(x, &self.frame.xbar0)? - self.u_offset)
    }

    /// m̃ for a target point already solved from its coordinates.
    pub fn m_tilde_at(&self, xbar: &Point, x: &Point) -> Result<f64> {
        let here = self.frame.modified_cost_at(x, xbar)?;
        let at_e = self.frame.modified_cost_at(&self.dual.x_e, xbar)?;
        Ok(-here + at_e)
    }

    pub fn m_tilde(&self, pbar_coords: &Vector, coords: &Vector) -> Result<f64> {
        let xbar = self.target_of(pbar_coords)?;
        let x = self.point(coords)?;
        self.m_tilde_at(&xbar, &x)
    }
}
