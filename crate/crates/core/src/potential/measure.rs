use serde::{Deserialize, Serialize};

use super::Grid;
use crate::cost::{Domain, Point};
use crate::error::{Error, Result};

/// Absolutely continuous source discretized by midpoint quadrature on a grid
/// over the domain's bounding box. Cells whose center lies outside the domain carry no mass.
#[derive(Clone, Debug, Serialize)]
pub struct SourceMeasure {
    pub domain: Domain,
    pub grid: Grid,
    /// Density at each cell center, unnormalized.
    pub density: Vec<f64>,
    points: Vec<Point>,
    masses: Vec<f64>,
}

/// Serialized form: {domain, resolution, density (optional, per cell)}.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SourceFile {
    pub domain: Domain,
    pub resolution: Vec<usize>,
    #[serde(default)]
    pub density: Option<Vec<f64>>,
}

impl SourceMeasure {
    pub fn uniform(domain: Domain, res: &[usize]) -> Result<Self> {
        SourceMeasure::with_density(domain, res, |_| 1.0)
    }

    pub fn with_density<F: Fn(&Point) -> f64>(domain: Domain, res: &[usize], f: F) -> Result<Self> {
        domain.validate()?;
        let (lo, hi) = domain.bounding_box();
        let grid = Grid::new(lo.as_slice(), hi.as_slice(), res)?;
        let density: Vec<f64> = grid.points().iter().map(&f).collect();
        SourceMeasure::from_parts(domain, grid, density)
    }

    pub fn from_parts(domain: Domain, grid: Grid, density: Vec<f64>) -> Result<Self> {
        if density.len() != grid.len() {
            return Err(Error::BadConfig(format!("density has {} values for {} cells", density.len(), grid.len())));
        }
        if density.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(Error::BadConfig("density must be finite and nonnegative".into()));
        }
        let mut points = Vec::new();
        let mut raw = Vec::new();
        for (i, d) in density.iter().enumerate() {
            let x = grid.point(i);
            if *d > 0.0 && domain.contains(&x) {
                points.push(x);
                raw.push(d * grid.cell_volume());
            }
        }
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) {
            return Err(Error::BadConfig("source measure has no mass on the grid".into()));
        }
        let masses = raw.iter().map(|m| m / total).collect();
        Ok(SourceMeasure { domain, grid, density, points, masses })
    }

    pub fn from_file(f: &SourceFile) -> Result<Self> {
        match &f.density {
            None => SourceMeasure::uniform(f.domain.clone(), &f.resolution),
            Some(d) => {
                let (lo, hi) = f.domain.bounding_box();
                let grid = Grid::new(lo.as_slice(), hi.as_slice(), &f.resolution)?;
                SourceMeasure::from_parts(f.domain.clone(), grid, d.clone())
            }
        }
    }

    /// Cell centers carrying positive mass.
    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TargetMeasure {
    #[serde(with = "crate::serde_vec::vectors")]
    pub sites: Vec<Point>,
    pub weights: Vec<f64>,
    /// Descriptor of spt ν.
    pub support: Domain,
}

impl TargetMeasure {
    pub fn new(sites: Vec<Point>, weights: Vec<f64>, support: Domain) -> Result<Self> {
        support.validate()?;
        if sites.is_empty() || sites.len() != weights.len() {
            return Err(Error::BadConfig("need one weight per site".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::BadConfig("weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::BadConfig(format!("weights sum to {total}, not 1")));
        }
        let slack = 1e-9 * support.diameter();
        if let Some(s) = sites.iter().find(|s| s.len() != support.dim() || support.signed_distance(s) < -slack) {
            return Err(Error::BadConfig(format!("site {:?} outside the support", s.as_slice())));
        }
        Ok(TargetMeasure { sites, weights, support })
    }

    /// Weights are normalized to sum one.
    pub fn normalized(sites: Vec<Point>, weights: Vec<f64>, support: Domain) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        TargetMeasure::new(sites, weights.iter().map(|w| w / total).collect(), support)
    }

    pub fn m(&self) -> usize {
        self.sites.len()
    }

    /// Whether site j is deeper inside spt ν than `margin`.
    pub fn is_interior(&self, j: usize, margin: f64) -> bool {
        self.support.signed_distance(&self.sites[j]) > margin
    }

    /// Typical distance between neighboring sites.
    pub fn spacing(&self) -> f64 {
        let m = self.m();
        if m < 2 {
            return 0.0;
        }
        let mut nn: Vec<f64> = (0..m)
            .map(|i| {
                (0..m)
                    .filter(|&j| j != i)
                    .map(|j| (&self.sites[i] - &self.sites[j]).norm())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        nn.sort_by(f64::total_cmp);
        nn[m / 2]
    }
}
