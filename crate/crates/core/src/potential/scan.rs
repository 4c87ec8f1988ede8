use rayon::prelude::*;
use serde::Serialize;

use super::{DiscretePotential, Grid, SubdiffOptions, TargetMeasure};
use crate::error::Result;

#[derive(Clone, Debug, Serialize)]
pub struct ScanRow {
    pub x: Vec<f64>,
    pub active: Vec<usize>,
    pub affdim: usize,
    pub singular_values: Vec<f64>,
    /// Some active site lies deeper than one grid cell inside spt ν.
    pub meets_interior: bool,
    /// ¬meets_interior ∨ affdim < n/2.
    pub bound_ok: bool,
}

/// Singular grid points (two or more active sites) with their affine dimension.
/// `resolution` is the per-covector RMS below which a singular direction is not counted.
pub fn degeneracy_scan(
    u: &DiscretePotential,
    grid: &Grid,
    nu: &TargetMeasure,
    tol: f64,
    resolution: f64,
) -> Result<Vec<ScanRow>> {
    let n = grid.dim();
    let margin = grid.cell_diameter();
    let opts = SubdiffOptions { active_tol: Some(tol), rank_tol: 1e-6, resolution };
    let rows: Vec<Option<ScanRow>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.point(i);
            let s = u.c_subdifferential(&x, &opts)?;
            if s.active.len() < 2 {
                return Ok(None);
            }
            let meets_interior = s.active.iter().any(|&j| nu.is_interior(j, margin));
            Ok(Some(ScanRow {
                x: x.as_slice().to_vec(),
                bound_ok: !meets_interior || 2 * s.affdim < n,
                affdim: s.affdim,
                singular_values: s.singular_values,
                active: s.active,
                meets_interior,
            }))
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{CostHandle, Domain, Point, Vector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Discrete version of u(x) = |x| + |x|²/2 transporting the unit disk onto the annulus 1 ≤ |x̄| ≤ 2.
    fn annulus_potential() -> (DiscretePotential, TargetMeasure) {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ann = Domain::Annulus { center: vec![0.0, 0.0], inner: 1.0, outer: 2.0 };
        let mut sites: Vec<Point> = (0..32)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / 32.0;
                Vector::from_vec(vec![a.cos(), a.sin()])
            })
            .collect();
        sites.extend((0..32).map(|_| ann.sample(&mut rng)));
        let lambdas = sites.iter().map(|s| -0.5 * (s.norm() - 1.0).powi(2)).collect();
        let nu = TargetMeasure::normalized(sites.clone(), vec![1.0; 64], ann).unwrap();
        (DiscretePotential::new(CostHandle::neg_inner_product(), sites, lambdas).unwrap(), nu)
    }

    #[test]
    fn annulus_origin() {
        let (u, nu) = annulus_potential();
        let grid = Grid::cube(&[-1.0, -1.0], &[1.0, 1.0], 21).unwrap();
        let rows = degeneracy_scan(&u, &grid, &nu, 1e-12, 0.0).unwrap();
        let origin = rows.iter().find(|r| r.x.iter().all(|v| v.abs() < 1e-12)).unwrap();
        assert_eq!(origin.affdim, 2);
        assert!(!origin.meets_interior && origin.bound_ok);
        assert_eq!(origin.active.len(), 32);
    }

    #[test]
    fn ridge_in_three_dimensions() {
        // u = |x₁| has a segment subdifferential along the plane x₁ = 0
        let sites = vec![Vector::from_vec(vec![0.5, 0.0, 0.0]), Vector::from_vec(vec![-0.5, 0.0, 0.0])];
        let u = DiscretePotential::new(CostHandle::neg_inner_product(), sites.clone(), vec![0.0, 0.0]).unwrap();
        let nu = TargetMeasure::new(sites, vec![0.5, 0.5], Domain::ball(&[0.0, 0.0, 0.0], 1.0)).unwrap();
        let grid = Grid::cube(&[-1.0; 3], &[1.0; 3], 9).unwrap();
        let rows = degeneracy_scan(&u, &grid, &nu, 1e-12, 0.0).unwrap();
        assert_eq!(rows.len(), 81);
        assert!(rows.iter().all(|r| r.affdim == 1 && r.meets_interior && r.bound_ok));
    }
}
