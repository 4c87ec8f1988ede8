//! The MTW quadratic form and classification of costs.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cexp::{c_exp_source, CExpOptions};
use crate::cost::domain::random_unit;
use crate::cost::{CostHandle, DomainPair, Point, Tensor4, Vector};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize)]
pub struct AMatrix {
    #[serde(with = "crate::serde_vec::vector")]
    pub x: Point,
    #[serde(with = "crate::serde_vec::vector")]
    pub p: Vector,
    #[serde(with = "crate::serde_vec::matrix")]
    pub entries: DMatrix<f64>,
}

/// A(x, p) = -D²_xx c(x, cExp_x(p)).
pub fn a_matrix(c: &CostHandle, x: &Point, p: &Vector) -> Result<AMatrix> {
    let xbar = c_exp_source(c, x, p, &CExpOptions::internal())?;
    let jet = c.jet(x, &xbar, 2)?;
    Ok(AMatrix { x: x.clone(), p: p.clone(), entries: -jet.hess_x().clone() })
}

/// Relative finite-difference step for the p-Hessian of A: h = rel * max(|p|, 1).
pub const DEFAULT_P_STEP: f64 = 1e-4;

fn p_step(p: &Vector, rel: f64) -> f64 {
    rel * p.norm().max(1.0)
}

/// MTW form from central second differences of A along eta.
pub fn mtw_form(c: &CostHandle, x: &Point, xbar: &Point, v: &Vector, eta: &Vector) -> Result<f64> {
    mtw_form_with_step(c, x, xbar, v, eta, DEFAULT_P_STEP)
}

pub fn mtw_form_with_step(
    c: &CostHandle,
    x: &Point,
    xbar: &Point,
    v: &Vector,
    eta: &Vector,
    rel: f64,
) -> Result<f64> {
    let p = -c.grad_x(x, xbar)?;
    let h = p_step(&p, rel);
    let quad = |q: &Vector| -> Result<f64> {
        let a = a_matrix(c, x, q)?;
        Ok(v.dot(&(&a.entries * v)))
    };
    let plus = quad(&(&p + eta * h))?;
    let mid = {
        let jet = c.jet(x, xbar, 2)?;
        -v.dot(&(jet.hess_x() * v))
    };
    let minus = quad(&(&p - eta * h))?;
    Ok((plus - 2.0 * mid + minus) / (h * h))
}

/// Full tensor T_ijkl = ∂²A_ij/∂p_k∂p_l by central differences of A.
pub fn mtw_tensor_fd(c: &CostHandle, x: &Point, xbar: &Point, rel: f64) -> Result<Tensor4> {
    let n = x.len();
    let p = -c.grad_x(x, xbar)?;
    let h = p_step(&p, rel);
    let a_at = |shift: &[(usize, f64)]| -> Result<DMatrix<f64>> {
        let mut q = p.clone();
        for &(k, s) in shift {
            q[k] += s * h;
        }
        Ok(a_matrix(c, x, &q)?.entries)
    };
    let a0 = -c.jet(x, xbar, 2)?.hess_x().clone();
    let mut t = Tensor4::zeros(n);
    for k in 0..n {
        for l in k..n {
            let d2 = if k == l {
                (a_at(&[(k, 1.0)])? - &a0 * 2.0 + a_at(&[(k, -1.0)])?) / (h * h)
            } else {
                (a_at(&[(k, 1.0), (l, 1.0)])? - a_at(&[(k, 1.0), (l, -1.0)])? - a_at(&[(k, -1.0), (l, 1.0)])?
                    + a_at(&[(k, -1.0), (l, -1.0)])?)
                    / (4.0 * h * h)
            };
            for i in 0..n {
                for j in 0..n {
                    t.set(i, j, k, l, d2[(i, j)]);
                    t.set(i, j, l, k, d2[(i, j)]);
                }
            }
        }
    }
    Ok(t)
}

/// Same tensor from third and fourth derivatives of c:
/// T_ijkl = -c_{ij,bd} W_bk W_dl + c_{ij,b} W_bm c_{m,ed} W_ek W_dl, with W = (DD̄c)^{-1}.
pub fn mtw_tensor_jet(c: &CostHandle, x: &Point, xbar: &Point) -> Result<Tensor4> {
    let n = x.len();
    let jet = c.jet(x, xbar, 4)?;
    let w = jet
        .mixed()
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NumericalInstability("mixed Hessian not invertible".into()))?;
    let c22 = jet.d2d2.as_ref().unwrap();
    let c21 = jet.d2d1.as_ref().unwrap();
    let c12 = jet.d1d2.as_ref().unwrap();
    // H[m][k][l] = c_{m,ed} W_ek W_dl
    let mut hmat = vec![0.0; n * n * n];
    for m in 0..n {
        for k in 0..n {
            for l in 0..n {
                let mut s = 0.0;
                for e in 0..n {
                    for d in 0..n {
                        s += c12.get(m, e, d) * w[(e, k)] * w[(d, l)];
                    }
                }
                hmat[(m * n + k) * n + l] = s;
            }
        }
    }
    let mut t = Tensor4::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let g: Vec<f64> = (0..n).map(|m| (0..n).map(|b| c21.get(i, j, b) * w[(b, m)]).sum()).collect();
            for k in 0..n {
                for l in 0..n {
                    let mut first = 0.0;
                    for b in 0..n {
                        for d in 0..n {
                            first += c22.get(i, j, b, d) * w[(b, k)] * w[(d, l)];
                        }
                    }
                    let second: f64 = (0..n).map(|m| g[m] * hmat[(m * n + k) * n + l]).sum();
                    t.set(i, j, k, l, -first + second);
                }
            }
        }
    }
    Ok(t)
}

/// Q(V, η) = T_ijkl V^i V^j η_k η_l.
pub fn contract(t: &Tensor4, v: &Vector, eta: &Vector) -> f64 {
    let n = t.n;
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            let vv = v[i] * v[j];
            if vv == 0.0 {
                continue;
            }
            for k in 0..n {
                for l in 0..n {
                    s += t.get(i, j, k, l) * vv * eta[k] * eta[l];
                }
            }
        }
    }
    s
}

fn gradients(t: &Tensor4, v: &Vector, eta: &Vector) -> (Vector, Vector) {
    let n = t.n;
    let mut gv = DVector::zeros(n);
    let mut ge = DVector::zeros(n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let tv = t.get(i, j, k, l);
                    gv[i] += tv * v[j] * eta[k] * eta[l];
                    gv[j] += tv * v[i] * eta[k] * eta[l];
                    ge[k] += tv * v[i] * v[j] * eta[l];
                    ge[l] += tv * v[i] * v[j] * eta[k];
                }
            }
        }
    }
    (gv, ge)
}

/// Projects (V, η) back onto the constraint set.
fn retract(v: &Vector, eta: &Vector, orthogonal: bool) -> (Vector, Vector) {
    let v = v.normalize();
    let eta = if orthogonal { eta - &v * v.dot(eta) } else { eta.clone() };
    (v, eta.normalize())
}

fn riemannian_grad(gv: &Vector, ge: &Vector, v: &Vector, eta: &Vector, orthogonal: bool) -> (Vector, Vector) {
    if orthogonal {
        // Stiefel tangent projection G - X sym(XᵀG) with X = [V η]
        let a = v.dot(gv);
        let b = 0.5 * (v.dot(ge) + eta.dot(gv));
        let d = eta.dot(ge);
        (gv - v * a - eta * b, ge - v * b - eta * d)
    } else {
        (gv - v * v.dot(gv), ge - eta * eta.dot(ge))
    }
}

/// min over unit V ⊥ η of T(V, V, η, η), the smallest eigenvalue of the form on η^⊥.
pub fn min_orthogonal_for_eta(t: &Tensor4, eta: &Vector) -> (f64, Vector) {
    let n = t.n;
    let eta = eta.normalize();
    let m = DMatrix::from_fn(n, n, |i, j| {
        let mut s = 0.0;
        for k in 0..n {
            for l in 0..n {
                s += 0.5 * (t.get(i, j, k, l) + t.get(j, i, k, l)) * eta[k] * eta[l];
            }
        }
        s
    });
    // orthonormal basis of η^⊥ from the full QR of [η | I]
    let mut cols = vec![eta.clone()];
    cols.extend((0..n).map(|i| DVector::from_fn(n, |r, _| if r == i { 1.0 } else { 0.0 })));
    let mut basis: Vec<Vector> = Vec::new();
    for v in cols {
        let mut w = v.clone();
        for q in std::iter::once(&eta).chain(basis.iter()) {
            w -= q * q.dot(&w);
        }
        if w.norm() > 1e-8 && basis.len() < n - 1 {
            basis.push(w.normalize());
        }
    }
    let b = DMatrix::from_columns(&basis);
    let eig = (b.transpose() * &m * &b).symmetric_eigen();
    let (idx, val) = eig.eigenvalues.iter().enumerate().fold((0, f64::INFINITY), |a, (i, &v)| if v < a.1 { (i, v) } else { a });
    (val, &b * eig.eigenvectors.column(idx))
}

#[derive(Clone, Debug)]
struct Descent {
    v: Vector,
    eta: Vector,
    value: f64,
}

/// Projected gradient with Armijo backtracking on the unit (and optionally orthogonal) pairs.
fn descend(t: &Tensor4, v0: &Vector, eta0: &Vector, orthogonal: bool, iters: usize) -> Descent {
    let (mut v, mut eta) = retract(v0, eta0, orthogonal);
    let mut f = contract(t, &v, &eta);
    let scale = t.max_abs().max(1e-300);
    let mut alpha = 0.25 / (scale * (t.n * t.n) as f64);
    for _ in 0..iters {
        let (gv, ge) = gradients(t, &v, &eta);
        let (rv, re) = riemannian_grad(&gv, &ge, &v, &eta, orthogonal);
        let g2 = rv.norm_squared() + re.norm_squared();
        if g2.sqrt() <= 1e-14 * scale {
            break;
        }
        let mut step = alpha * 2.0;
        let mut moved = false;
        while step > 1e-18 / scale {
            let (nv, ne) = retract(&(&v - &rv * step), &(&eta - &re * step), orthogonal);
            let nf = contract(t, &nv, &ne);
            if nf <= f - 1e-4 * step * g2 {
                v = nv;
                eta = ne;
                f = nf;
                alpha = step;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Descent { v, eta, value: f }
}

#[derive(Clone, Debug, Serialize)]
pub struct MtwWitness {
    pub x: Vec<f64>,
    pub xbar: Vec<f64>,
    pub v: Vec<f64>,
    pub eta: Vec<f64>,
    pub value: f64,
    pub orthogonal: bool,
    /// ⟨p/|p|, V⟩.
    pub theta: Option<f64>,
    pub p_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Classification {
    A3s { delta0: f64 },
    A3wOnly,
    FailsA3w,
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Nncc {
    Holds,
    Fails { witness: MtwWitness },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorRoute {
    /// Central differences of A in p (the default).
    FiniteDifference,
    /// Closed expression in the third and fourth jet blocks.
    Jet,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifyOptions {
    pub samples: usize,
    pub refine_iters: usize,
    pub restarts: usize,
    /// Band at |p| = 1; scaled by |p|^{-2/3} per sample.
    pub tol: f64,
    pub seed: u64,
    pub route: TensorRoute,
    pub p_step: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions {
            samples: 32,
            refine_iters: 300,
            restarts: 64,
            tol: 1e-6,
            seed: 0,
            route: TensorRoute::FiniteDifference,
            p_step: DEFAULT_P_STEP,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MtwReport {
    pub cost: String,
    pub classification: Classification,
    pub nncc: Nncc,
    pub min_orthogonal_value: f64,
    pub min_unconstrained_value: f64,
    pub orthogonal_witness: MtwWitness,
    pub unconstrained_witness: MtwWitness,
    /// Restarts that landed within the band of the best value at the deciding sample.
    pub restart_agreement: usize,
    pub sample_count: usize,
    pub restarts: usize,
    pub tol: f64,
    pub seed: u64,
}

struct SampleResult {
    x: Point,
    xbar: Point,
    p_norm: f64,
    band: f64,
    orth: Descent,
    orth_agree: usize,
    unc: Descent,
    unc_agree: usize,
}

pub(crate) fn split_seed(seed: u64, i: u64) -> u64 {
    // splitmix64
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn analyse_sample(c: &CostHandle, x: Point, xbar: Point, opts: &ClassifyOptions, seed: u64) -> Result<SampleResult> {
    let nd = c.check_nondegeneracy(&x, &xbar)?;
    if !nd.ok {
        return Err(Error::HypothesisUnmet(format!("mixed Hessian degenerate (det {:e})", nd.det)));
    }
    let n = x.len();
    let p_norm = c.grad_x(&x, &xbar)?.norm();
    let band = opts.tol * p_norm.max(1e-300).powf(-2.0 / 3.0);
    let t = match opts.route {
        TensorRoute::FiniteDifference => mtw_tensor_fd(c, &x, &xbar, opts.p_step)?,
        TensorRoute::Jet => mtw_tensor_jet(c, &x, &xbar)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts: Vec<(Vector, Vector)> =
        (0..opts.restarts).map(|_| (random_unit(n, &mut rng), random_unit(n, &mut rng))).collect();
    let orth_runs: Vec<Descent> = starts.iter().map(|(v, e)| descend(&t, v, e, true, opts.refine_iters)).collect();
    let best_orth = orth_runs.iter().min_by(|a, b| a.value.total_cmp(&b.value)).unwrap().clone();
    let mut unc_runs: Vec<Descent> =
        starts.iter().map(|(v, e)| descend(&t, v, e, false, opts.refine_iters)).collect();
    // the orthogonal optimum is feasible for the unconstrained problem
    unc_runs.push(descend(&t, &best_orth.v, &best_orth.eta, false, opts.refine_iters));
    let best_unc = unc_runs.iter().min_by(|a, b| a.value.total_cmp(&b.value)).unwrap().clone();
    let agree = |runs: &[Descent], best: f64| runs.iter().filter(|r| r.value <= best + band).count();
    Ok(SampleResult {
        orth_agree: agree(&orth_runs, best_orth.value),
        unc_agree: agree(&unc_runs, best_unc.value),
        x,
        xbar,
        p_norm,
        band,
        orth: best_orth,
        unc: best_unc,
    })
}

fn witness(c: &CostHandle, s: &SampleResult, d: &Descent, orthogonal: bool) -> MtwWitness {
    let q = -c.grad_x(&s.x, &s.xbar).map(|g| g.normalize()).unwrap_or_else(|_| DVector::zeros(s.x.len()));
    MtwWitness {
        x: s.x.as_slice().to_vec(),
        xbar: s.xbar.as_slice().to_vec(),
        v: d.v.as_slice().to_vec(),
        eta: d.eta.as_slice().to_vec(),
        value: d.value,
        orthogonal,
        theta: Some(q.dot(&d.v)),
        p_norm: s.p_norm,
    }
}

/// Samples point pairs from the declared domains and minimizes the MTW form per sample.
pub fn classify(c: &CostHandle, pair: &DomainPair, opts: &ClassifyOptions) -> Result<MtwReport> {
    if pair.dim() != c.dim().unwrap_or(pair.dim()) {
        return Err(Error::BadConfig("domain pair dimension differs from the cost's".into()));
    }
    if opts.samples == 0 || opts.restarts == 0 {
        return Err(Error::BadConfig("samples and restarts must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let points: Vec<(Point, Point)> = (0..opts.samples)
        .map(|_| (pair.source.sample(&mut rng), pair.target.sample(&mut rng)))
        .collect();
    let results: Vec<SampleResult> = points
        .into_par_iter()
        .enumerate()
        .map(|(i, (x, xb))| analyse_sample(c, x, xb, opts, split_seed(opts.seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;

    // normalized values make samples with different |p| comparable
    let by = |f: &dyn Fn(&SampleResult) -> f64| {
        results.iter().min_by(|a, b| (f(a) / a.band).total_cmp(&(f(b) / b.band))).unwrap()
    };
    let worst_orth = by(&|s| s.orth.value);
    let worst_unc = by(&|s| s.unc.value);
    for s in [worst_orth, worst_unc] {
        let agree = if std::ptr::eq(s, worst_orth) { s.orth_agree } else { s.unc_agree };
        if agree < 2 {
            return Err(Error::InconclusiveClassification(format!(
                "only {agree} of {} restarts reached the best value at x = {:?}",
                opts.restarts,
                s.x.as_slice()
            )));
        }
    }
    let classification = if results.iter().any(|s| s.orth.value < -s.band) {
        Classification::FailsA3w
    } else if results.iter().all(|s| s.orth.value > s.band) {
        let delta0 = results.iter().map(|s| s.orth.value).fold(f64::INFINITY, f64::min);
        Classification::A3s { delta0 }
    } else {
        Classification::A3wOnly
    };
    let unc_witness = witness(c, worst_unc, &worst_unc.unc, false);
    let nncc = if results.iter().any(|s| s.unc.value < -s.band) {
        Nncc::Fails { witness: unc_witness.clone() }
    } else {
        Nncc::Holds
    };
    Ok(MtwReport {
        cost: c.name(),
        classification,
        nncc,
        min_orthogonal_value: results.iter().map(|s| s.orth.value).fold(f64::INFINITY, f64::min),
        min_unconstrained_value: results.iter().map(|s| s.unc.value).fold(f64::INFINITY, f64::min),
        orthogonal_witness: witness(c, worst_orth, &worst_orth.orth, true),
        unconstrained_witness: unc_witness,
        restart_agreement: worst_orth.orth_agree,
        sample_count: results.len(),
        restarts: opts.restarts,
        tol: opts.tol,
        seed: opts.seed,
    })
}

/// The contracted MTW form for c = |x - x̄|^{-2}, valid for any V, η.
pub fn inverse_square_form(p: &Vector, v: &Vector, eta: &Vector) -> f64 {
    let q = p.normalize();
    let (th, s, cc) = (q.dot(v), q.dot(eta), v.dot(eta));
    let (v2, e2) = (v.norm_squared(), eta.norm_squared());
    let k = 2f64.powf(5.0 / 3.0) / 3.0 * p.norm().powf(-2.0 / 3.0);
    k * (v2 * e2 + 2.0 * e2 * th * th - 2.0 / 3.0 * v2 * s * s - 16.0 / 3.0 * th * th * s * s - 6.0 * cc * cc
        + 8.0 * cc * th * s)
}
