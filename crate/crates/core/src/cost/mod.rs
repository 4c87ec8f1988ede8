//! Cost functions c(x, xbar) and their mixed derivatives.

pub mod config;
pub mod domain;
pub mod dual;
pub mod expr;
pub mod jet;

use std::sync::Arc;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use domain::{Domain, DomainPair, Point, Vector};
pub use dual::{Scalar, Seeded};
pub use expr::Expr;
pub use jet::{DerivativeJet, Tensor3, Tensor4};

use crate::error::{Error, Result};
use dual::{D1, D2, D3, D4};

#[derive(Clone, Debug)]
pub enum CostKind {
    NegInnerProduct,
    HalfSquaredDistance,
    InverseSquare,
    UserExpression { expr: Arc<Expr>, source: String, singular_on_diagonal: bool },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Dual,
    FiniteDifference,
}

#[derive(Clone, Debug)]
pub struct CostHandle {
    pub kind: CostKind,
    pub domains: Option<DomainPair>,
    pub diagonal_margin: f64,
    pub engine: Engine,
    /// Length scale for finite-difference steps.
    pub fd_scale: f64,
    /// Compare analytic built-in jets against the engine on every call.
    pub cross_validate: bool,
    pub det_floor: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Nondegeneracy {
    pub det: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct TwistReport {
    pub ok: bool,
    pub worst_pair: (Vec<f64>, Vec<f64>),
    /// Smallest |Dc(x0, a) - Dc(x0, b)| / |a - b| seen.
    pub worst_ratio: f64,
    pub floor: f64,
}

impl CostHandle {
    pub fn new(kind: CostKind) -> CostHandle {
        CostHandle {
            kind,
            domains: None,
            diagonal_margin: 1e-6,
            engine: Engine::Dual,
            fd_scale: 1.0,
            cross_validate: false,
            det_floor: 1e-12,
        }
    }

    pub fn neg_inner_product() -> CostHandle {
        Self::new(CostKind::NegInnerProduct)
    }

    pub fn half_squared_distance() -> CostHandle {
        Self::new(CostKind::HalfSquaredDistance)
    }

    pub fn inverse_square() -> CostHandle {
        Self::new(CostKind::InverseSquare)
    }

    pub fn user_expression(src: &str) -> Result<CostHandle> {
        let expr = Expr::parse(src)?;
        Ok(Self::new(CostKind::UserExpression {
            expr: Arc::new(expr),
            source: src.to_string(),
            singular_on_diagonal: false,
        }))
    }

    /// Attaches a domain pair and resets the diagonal margin to 1e-3 of its diameter.
    pub fn with_domains(mut self, pair: DomainPair) -> CostHandle {
        self.diagonal_margin = 1e-3 * pair.diameter();
        self.domains = Some(pair);
        self
    }

    pub fn with_engine(mut self, engine: Engine) -> CostHandle {
        self.engine = engine;
        self
    }

    pub fn name(&self) -> String {
        match &self.kind {
            CostKind::NegInnerProduct => "neg_inner_product".into(),
            CostKind::HalfSquaredDistance => "half_squared_distance".into(),
            CostKind::InverseSquare => "inverse_square".into(),
            CostKind::UserExpression { source, .. } => format!("user_expression({source})"),
        }
    }

    pub fn is_builtin(&self) -> bool {
        !matches!(self.kind, CostKind::UserExpression { .. })
    }

    pub fn singular_on_diagonal(&self) -> bool {
        match &self.kind {
            CostKind::InverseSquare => true,
            CostKind::UserExpression { singular_on_diagonal, .. } => *singular_on_diagonal,
            _ => false,
        }
    }

    pub fn dim(&self) -> Option<usize> {
        self.domains.as_ref().map(|d| d.dim())
    }

    pub fn eval_generic<S: Scalar>(&self, x: &[S], xbar: &[S]) -> S {
        match &self.kind {
            CostKind::NegInnerProduct => {
                let mut acc = S::constant(0.0);
                for (a, b) in x.iter().zip(xbar) {
                    acc = acc - a.clone() * b.clone();
                }
                acc
            }
            CostKind::HalfSquaredDistance => half_norm_sq(x, xbar),
            CostKind::InverseSquare => S::constant(0.5) / half_norm_sq(x, xbar),
            CostKind::UserExpression { expr, .. } => expr.eval(x, xbar),
        }
    }

    fn check_pair(&self, x: &Point, xbar: &Point) -> Result<()> {
        if x.len() != xbar.len() || x.is_empty() {
            return Err(Error::DomainViolation("dimension mismatch".into()));
        }
        if x.iter().chain(xbar.iter()).any(|v| !v.is_finite()) {
            return Err(Error::DomainViolation("non-finite coordinate".into()));
        }
        if let CostKind::UserExpression { expr, .. } = &self.kind {
            if let Some(i) = expr.max_index() {
                if i >= x.len() {
                    return Err(Error::DomainViolation(format!(
                        "expression uses index {i} in dimension {}",
                        x.len()
                    )));
                }
            }
        }
        if self.singular_on_diagonal() {
            let distance = (x - xbar).norm();
            if distance < self.diagonal_margin {
                return Err(Error::DiagonalSingularity { distance, margin: self.diagonal_margin });
            }
        }
        Ok(())
    }

    /// c(x, xbar) with only the diagonal check.
    pub fn value(&self, x: &Point, xbar: &Point) -> Result<f64> {
        self.check_pair(x, xbar)?;
        let v = self.eval_generic(x.as_slice(), xbar.as_slice());
        if !v.is_finite() {
            return Err(Error::NumericalInstability(format!("cost is {v} at {x:?}, {xbar:?}")));
        }
        Ok(v)
    }

    /// c(x, xbar), also enforcing membership in the declared domain pair.
    pub fn eval_cost(&self, x: &Point, xbar: &Point) -> Result<f64> {
        if let Some(pair) = &self.domains {
            if !pair.source.contains(x) {
                return Err(Error::DomainViolation(format!("x = {:?} not in source domain", x.as_slice())));
            }
            if !pair.target.contains(xbar) {
                return Err(Error::DomainViolation(format!(
                    "xbar = {:?} not in target domain",
                    xbar.as_slice()
                )));
            }
        }
        self.value(x, xbar)
    }

    pub fn jet(&self, x: &Point, xbar: &Point, order: usize) -> Result<DerivativeJet> {
        if !(1..=4).contains(&order) {
            return Err(Error::BadConfig(format!("jet order {order} not in 1..=4")));
        }
        self.check_pair(x, xbar)?;
        let jet = match self.analytic_jet(x, xbar, order) {
            Some(a) => {
                if self.cross_validate {
                    let e = self.engine_jet(x, xbar, order, self.engine);
                    let gap = a.max_relative_gap(&e);
                    let tol = match self.engine {
                        Engine::Dual => 1e-7,
                        Engine::FiniteDifference => 1e-3,
                    };
                    if gap > tol {
                        return Err(Error::NumericalInstability(format!(
                            "analytic and engine jets differ by {gap:e}"
                        )));
                    }
                }
                a
            }
            None => self.engine_jet(x, xbar, order, self.engine),
        };
        if !jet.value.is_finite() || jet.grad_x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalInstability("non-finite jet".into()));
        }
        Ok(jet)
    }

    fn analytic_jet(&self, x: &Point, xbar: &Point, order: usize) -> Option<DerivativeJet> {
        let s = (x - xbar).norm_squared();
        match &self.kind {
            CostKind::NegInnerProduct => Some(jet::bilinear_jet(x, xbar, order)),
            CostKind::HalfSquaredDistance => Some(jet::radial_jet(x, xbar, order, [0.5 * s, 0.5, 0.0, 0.0, 0.0])),
            CostKind::InverseSquare => {
                let i = 1.0 / s;
                let g = [i, -i * i, 2.0 * i.powi(3), -6.0 * i.powi(4), 24.0 * i.powi(5)];
                Some(jet::radial_jet(x, xbar, order, g))
            }
            CostKind::UserExpression { .. } => None,
        }
    }

    /// Jet from the differentiation engine, bypassing closed forms.
    pub fn engine_jet(&self, x: &Point, xbar: &Point, order: usize, engine: Engine) -> DerivativeJet {
        let n = x.len();
        let z: Vec<f64> = x.iter().chain(xbar.iter()).copied().collect();
        let value = self.eval_generic(x.as_slice(), xbar.as_slice());
        match engine {
            Engine::Dual => jet::assemble(n, order, value, |dirs| match dirs.len() {
                1 => self.dual_partial::<D1>(&z, n, dirs),
                2 => self.dual_partial::<D2>(&z, n, dirs),
                3 => self.dual_partial::<D3>(&z, n, dirs),
                _ => self.dual_partial::<D4>(&z, n, dirs),
            }),
            Engine::FiniteDifference => {
                let f = |zz: &[f64]| self.eval_generic(&zz[..n], &zz[n..]);
                let len = self.fd_scale * (x - xbar).norm().clamp(1e-3, 1.0);
                jet::assemble(n, order, value, |dirs| {
                    let h = f64::EPSILON.powf(1.0 / (dirs.len() as f64 + 2.0)) * len;
                    jet::fd_partial(&f, &z, dirs, h)
                })
            }
        }
    }

    fn dual_partial<S: Seeded>(&self, z: &[f64], n: usize, dirs: &[usize]) -> f64 {
        debug_assert_eq!(dirs.len(), S::DEPTH);
        let vars: Vec<S> = (0..2 * n)
            .map(|i| {
                let seeds: Vec<bool> = dirs.iter().map(|&d| d == i).collect();
                S::variable(z[i], &seeds)
            })
            .collect();
        self.eval_generic(&vars[..n], &vars[n..]).top()
    }

    /// True when gradients come from finite differences rather than closed forms or duals.
    pub fn fd_gradient(&self) -> bool {
        self.engine == Engine::FiniteDifference && matches!(self.kind, CostKind::UserExpression { .. })
    }

    /// D_x c.
    pub fn grad_x(&self, x: &Point, xbar: &Point) -> Result<Vector> {
        Ok(self.jet(x, xbar, 1)?.grad_x)
    }

    /// D_xbar c.
    pub fn grad_xbar(&self, x: &Point, xbar: &Point) -> Result<Vector> {
        Ok(self.jet(x, xbar, 1)?.grad_xbar)
    }

    pub fn check_nondegeneracy(&self, x: &Point, xbar: &Point) -> Result<Nondegeneracy> {
        let det = self.jet(x, xbar, 2)?.mixed().determinant();
        Ok(Nondegeneracy { det, ok: det.abs() > self.det_floor })
    }

    /// Sampled injectivity check of xbar -> -Dc(x0, xbar) and, with roles reversed,
    /// of x -> -D̄c(x, xbar0) for a sampled xbar0.
    pub fn check_twist(&self, x0: &Point, sample_pairs: usize, seed: u64) -> Result<TwistReport> {
        let pair = self
            .domains
            .as_ref()
            .ok_or_else(|| Error::BadConfig("twist check needs a declared domain pair".into()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xbar0 = pair.target.sample(&mut rng);
        let mix = self.jet(x0, &pair.target.center(), 2)?.mixed().clone();
        let floor = 1e-6 * mix.norm() / (pair.dim() as f64).sqrt();
        let mut worst = (f64::INFINITY, DVector::zeros(0), DVector::zeros(0));
        let step = 1e-7 * pair.diameter();
        for t in 0..sample_pairs {
            let reverse = t % 2 == 1;
            // every other pair probes the weakest direction of the mixed Hessian locally
            let local = (t / 2) % 2 == 1;
            let dom = if reverse { &pair.source } else { &pair.target };
            let a = dom.sample(&mut rng);
            let b = if local {
                let m = if reverse { self.jet(&a, &xbar0, 2)? } else { self.jet(x0, &a, 2)? };
                let svd = m.mixed().clone().svd(true, true);
                let (imin, _) = svd.singular_values.argmin();
                let w = if reverse {
                    svd.u.as_ref().unwrap().column(imin).into_owned()
                } else {
                    svd.v_t.as_ref().unwrap().row(imin).transpose()
                };
                &a + w * step
            } else {
                dom.sample(&mut rng)
            };
            let sep = (&a - &b).norm();
            if sep == 0.0 {
                continue;
            }
            let gap = if reverse {
                (self.grad_xbar(&a, &xbar0)? - self.grad_xbar(&b, &xbar0)?).norm()
            } else {
                (self.grad_x(x0, &a)? - self.grad_x(x0, &b)?).norm()
            };
            let ratio = gap / sep;
            if ratio < worst.0 {
                worst = (ratio, a, b);
            }
        }
        let report = TwistReport {
            ok: worst.0 > floor,
            worst_pair: (worst.1.as_slice().to_vec(), worst.2.as_slice().to_vec()),
            worst_ratio: worst.0,
            floor,
        };
        if !report.ok {
            return Err(Error::TwistViolation {
                a: report.worst_pair.0.clone(),
                b: report.worst_pair.1.clone(),
                separation: worst.0,
            });
        }
        Ok(report)
    }
}

fn half_norm_sq<S: Scalar>(x: &[S], xbar: &[S]) -> S {
    let mut acc = S::constant(0.0);
    for (a, b) in x.iter().zip(xbar) {
        let d = a.clone() - b.clone();
        acc = acc + d.clone() * d;
    }
    acc.scale(0.5)
}
