//! Discrete c-convex potentials u(x) = max_j(-c(x, x̄_j) + λ_j) and what is computed from them.

pub mod contact;
pub mod measure;
pub mod scan;
pub mod semidiscrete;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cost::config::CostSpec;
use crate::cost::{CostHandle, Point, Vector};
use crate::error::{Error, Result};

pub use contact::{containment_test, contact_set, exterior_sphere_point, ContactSet, ExteriorSphere};
pub use measure::{SourceMeasure, TargetMeasure};
pub use scan::{degeneracy_scan, ScanRow};
pub use semidiscrete::{estimate_lambda, solve_semidiscrete, LambdaEstimate, LambdaOptions, SemidiscreteOptions,
    SemidiscreteSolution};

/// Regular grid of cell centers over a box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub res: Vec<usize>,
}

impl Grid {
    pub fn new(lo: &[f64], hi: &[f64], res: &[usize]) -> Result<Grid> {
        if lo.is_empty() || lo.len() != hi.len() || lo.len() != res.len() {
            return Err(Error::BadConfig("grid corners and resolution must share a dimension".into()));
        }
        if lo.iter().zip(hi).any(|(a, b)| !(a < b)) || res.iter().any(|&r| r == 0) {
            return Err(Error::BadConfig("grid needs lo < hi and positive resolution".into()));
        }
        Ok(Grid { lo: lo.to_vec(), hi: hi.to_vec(), res: res.to_vec() })
    }

    /// Same resolution along every axis.
    pub fn cube(lo: &[f64], hi: &[f64], res: usize) -> Result<Grid> {
        Grid::new(lo, hi, &vec![res; lo.len()])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.res.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| (self.hi[i] - self.lo[i]) / self.res[i] as f64).collect()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    pub fn cell_diameter(&self) -> f64 {
        self.spacing().iter().map(|h| h * h).sum::<f64>().sqrt()
    }

    /// Cell center by flat index; the last axis varies fastest.
    pub fn point(&self, mut idx: usize) -> Point {
        let n = self.dim();
        let h = self.spacing();
        let mut x = Vector::zeros(n);
        for i in (0..n).rev() {
            let k = idx % self.res[i];
            idx /= self.res[i];
            x[i] = self.lo[i] + (k as f64 + 0.5) * h[i];
        }
        x
    }

    pub fn points(&self) -> Vec<Point> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct DiscretePotential {
    pub cost: CostHandle,
    pub sites: Vec<Point>,
    pub lambdas: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub value: f64,
    pub argmax: Vec<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SubdiffEstimate {
    #[serde(with = "crate::serde_vec::vector")]
    pub x: Point,
    pub value: f64,
    pub active: Vec<usize>,
    #[serde(with = "crate::serde_vec::vectors")]
    pub covectors: Vec<Vector>,
    pub singular_values: Vec<f64>,
    pub affdim: usize,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SubdiffOptions {
    /// Absolute active-set band; default 1e-9 (1 + |u(x)|).
    pub active_tol: Option<f64>,
    pub rank_tol: f64,
    /// Singular values whose per-covector RMS falls below this are not counted;
    /// zero disables the floor.
    pub resolution: f64,
}

impl Default for SubdiffOptions {
    fn default() -> Self {
        SubdiffOptions { active_tol: None, rank_tol: 1e-6, resolution: 0.0 }
    }
}

pub fn default_active_tol(value: f64) -> f64 {
    1e-9 * (1.0 + value.abs())
}

/// Serialized form: {cost, sites, lambdas}.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PotentialFile {
    pub cost: CostSpec,
    pub sites: Vec<Vec<f64>>,
    pub lambdas: Vec<f64>,
}

impl DiscretePotential {
    pub fn new(cost: CostHandle, sites: Vec<Point>, lambdas: Vec<f64>) -> Result<Self> {
        if sites.is_empty() || sites.len() != lambdas.len() {
            return Err(Error::BadConfig("need one offset per site and at least one site".into()));
        }
        let n = sites[0].len();
        if sites.iter().any(|s| s.len() != n) {
            return Err(Error::BadConfig("sites of mixed dimension".into()));
        }
        Ok(DiscretePotential { cost, sites, lambdas })
    }

    pub fn m(&self) -> usize {
        self.sites.len()
    }

    pub fn dim(&self) -> usize {
        self.sites[0].len()
    }

    pub fn branch(&self, j: usize, x: &Point) -> Result<f64> {
        Ok(-self.cost.value(x, &self.sites[j])? + self.lambdas[j])
    }

    pub fn branches(&self, x: &Point) -> Result<Vec<f64>> {
        (0..self.m()).map(|j| self.branch(j, x)).collect()
    }

    pub fn evaluate(&self, x: &Point) -> Result<Evaluation> {
        let b = self.branches(x)?;
        let value = b.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let tol = default_active_tol(value);
        Ok(Evaluation { value, argmax: (0..b.len()).filter(|&j| b[j] >= value - tol).collect() })
    }

    pub fn value(&self, x: &Point) -> Result<f64> {
        Ok(self.evaluate(x)?.value)
    }

    pub fn c_subdifferential(&self, x: &Point, opts: &SubdiffOptions) -> Result<SubdiffEstimate> {
        let b = self.branches(x)?;
        let value = b.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let tol = opts.active_tol.unwrap_or_else(|| default_active_tol(value));
        let active: Vec<usize> = (0..b.len()).filter(|&j| b[j] >= value - tol).collect();
        let covectors = active
            .iter()
            .map(|&j| self.cost.grad_x(x, &self.sites[j]).map(|g| -g))
            .collect::<Result<Vec<_>>>()?;
        let (singular_values, affdim) = affine_rank(&covectors, opts.rank_tol, opts.resolution);
        Ok(SubdiffEstimate { x: x.clone(), value, active, covectors, singular_values, affdim })
    }

    /// The active site where u is differentiable.
    pub fn transport_map(&self, x: &Point) -> Result<Point> {
        let e = self.evaluate(x)?;
        if e.argmax.len() != 1 {
            return Err(Error::NotDifferentiable { x: x.as_slice().to_vec(), active: e.argmax.len() });
        }
        Ok(self.sites[e.argmax[0]].clone())
    }

    pub fn to_file(&self) -> PotentialFile {
        PotentialFile {
            cost: self.cost.to_spec(),
            sites: self.sites.iter().map(|s| s.as_slice().to_vec()).collect(),
            lambdas: self.lambdas.clone(),
        }
    }

    pub fn from_file(f: &PotentialFile) -> Result<Self> {
        let cost = CostHandle::from_config(&serde_json::json!({ "cost": f.cost }))?;
        DiscretePotential::new(cost, f.sites.iter().map(|s| Vector::from_column_slice(s)).collect(), f.lambdas.clone())
    }
}

/// Singular values of the centered point matrix and the numerical affine rank.
pub fn affine_rank(points: &[Vector], rank_tol: f64, resolution: f64) -> (Vec<f64>, usize) {
    if points.len() < 2 {
        return (Vec::new(), 0);
    }
    let n = points[0].len();
    let m = points.len();
    let mean = points.iter().fold(Vector::zeros(n), |a, p| a + p) / m as f64;
    let centered = DMatrix::from_fn(m, n, |r, c| points[r][c] - mean[c]);
    let mut sv: Vec<f64> = centered.singular_values().iter().cloned().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let scale = points.iter().fold(0.0f64, |a, p| a.max(p.amax()));
    let smax = sv.first().cloned().unwrap_or(0.0);
    if smax <= 1e-9 * (1.0 + scale) {
        return (sv, 0);
    }
    let rms = (m as f64).sqrt();
    let rank = sv.iter().filter(|&&s| s > rank_tol * smax && s / rms > resolution).count();
    (sv, rank)
}
