use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Point = Vector;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    Annulus { center: Vec<f64>, inner: f64, outer: f64 },
}

impl Domain {
    pub fn ball(center: &[f64], radius: f64) -> Domain {
        Domain::Ball { center: center.to_vec(), radius }
    }

    pub fn cube(lo: &[f64], hi: &[f64]) -> Domain {
        Domain::Box { lo: lo.to_vec(), hi: hi.to_vec() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::BadConfig(m.to_string()));
        match self {
            Domain::Box { lo, hi } => {
                if lo.is_empty() || lo.len() != hi.len() {
                    return bad("box corners must have equal, positive length");
                }
                if lo.iter().zip(hi).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
                    return bad("box must have lo < hi in every coordinate");
                }
            }
            Domain::Ball { center, radius } => {
                if center.is_empty() || !(*radius > 0.0) || !radius.is_finite() {
                    return bad("ball needs a center and a positive radius");
                }
            }
            Domain::Annulus { center, inner, outer } => {
                if center.is_empty() || !(*inner >= 0.0) || !(outer > inner) || !outer.is_finite() {
                    return bad("annulus needs 0 <= inner < outer");
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Box { lo, .. } => lo.len(),
            Domain::Ball { center, .. } | Domain::Annulus { center, .. } => center.len(),
        }
    }

    pub fn center(&self) -> Point {
        match self {
            Domain::Box { lo, hi } => {
                DVector::from_iterator(lo.len(), lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)))
            }
            Domain::Ball { center, .. } => DVector::from_column_slice(center),
            // the center of an annulus is not in it; use a point on the middle circle
            Domain::Annulus { center, inner, outer } => {
                let mut c = DVector::from_column_slice(center);
                c[0] += 0.5 * (inner + outer);
                c
            }
        }
    }

    pub fn bounding_box(&self) -> (Point, Point) {
        match self {
            Domain::Box { lo, hi } => (DVector::from_column_slice(lo), DVector::from_column_slice(hi)),
            Domain::Ball { center, radius: r } | Domain::Annulus { center, outer: r, .. } => {
                let c = DVector::from_column_slice(center);
                (c.add_scalar(-r), c.add_scalar(*r))
            }
        }
    }

    pub fn diameter(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        match self {
            Domain::Box { .. } => (hi - lo).norm(),
            Domain::Ball { radius, .. } => 2.0 * radius,
            Domain::Annulus { outer, .. } => 2.0 * outer,
        }
    }

    /// Positive inside, zero on the boundary, negative outside.
    pub fn signed_distance(&self, x: &Point) -> f64 {
        match self {
            Domain::Box { lo, hi } => {
                let mut inside = f64::INFINITY;
                let mut outside = 0.0f64;
                for i in 0..lo.len() {
                    let d = (x[i] - lo[i]).min(hi[i] - x[i]);
                    inside = inside.min(d);
                    if d < 0.0 {
                        outside += d * d;
                    }
                }
                if outside > 0.0 {
                    -outside.sqrt()
                } else {
                    inside
                }
            }
            Domain::Ball { center, radius } => radius - dist(x, center),
            Domain::Annulus { center, inner, outer } => {
                let r = dist(x, center);
                (r - inner).min(outer - r)
            }
        }
    }

    pub fn contains(&self, x: &Point) -> bool {
        x.len() == self.dim() && self.signed_distance(x) >= 0.0
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Point {
        let n = self.dim();
        match self {
            Domain::Box { lo, hi } => {
                DVector::from_iterator(n, lo.iter().zip(hi).map(|(a, b)| rng.gen_range(*a..*b)))
            }
            Domain::Ball { center, radius } => {
                let dir = random_unit(n, rng);
                let r = radius * rng.gen::<f64>().powf(1.0 / n as f64);
                DVector::from_column_slice(center) + dir * r
            }
            Domain::Annulus { center, inner, outer } => {
                let dir = random_unit(n, rng);
                let (a, b) = (inner.powi(n as i32), outer.powi(n as i32));
                let r = (a + (b - a) * rng.gen::<f64>()).powf(1.0 / n as f64);
                DVector::from_column_slice(center) + dir * r
            }
        }
    }

    pub fn volume(&self) -> f64 {
        let n = self.dim();
        match self {
            Domain::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| b - a).product(),
            Domain::Ball { radius, .. } => unit_ball_volume(n) * radius.powi(n as i32),
            Domain::Annulus { inner, outer, .. } => {
                unit_ball_volume(n) * (outer.powi(n as i32) - inner.powi(n as i32))
            }
        }
    }
}

fn dist(x: &Point, c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

pub fn random_unit<R: Rng>(n: usize, rng: &mut R) -> Vector {
    loop {
        let v = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)));
        let norm: f64 = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Lebesgue measure of the unit ball in R^n.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(n - 2) * 2.0 * std::f64::consts::PI / n as f64,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainPair {
    pub source: Domain,
    pub target: Domain,
}

impl DomainPair {
    pub fn new(source: Domain, target: Domain) -> Result<DomainPair> {
        source.validate()?;
        target.validate()?;
        if source.dim() != target.dim() {
            return Err(Error::BadConfig("source and target dimensions differ".into()));
        }
        Ok(DomainPair { source, target })
    }

    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    /// Diameter of the union's bounding box.
    pub fn diameter(&self) -> f64 {
        let (a, b) = self.source.bounding_box();
        let (c, d) = self.target.bounding_box();
        let lo = a.zip_map(&c, f64::min);
        let hi = b.zip_map(&d, f64::max);
        (hi - lo).norm()
    }

    /// Lower bound on |x - xbar| over the pair from the bounding geometry; zero when unknown.
    pub fn separation(&self) -> f64 {
        match (&self.source, &self.target) {
            (Domain::Ball { center: a, radius: r }, Domain::Ball { center: b, radius: s }) => {
                (dist(&DVector::from_column_slice(a), b) - r - s).max(0.0)
            }
            _ => 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn samples_stay_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let doms = [
            Domain::cube(&[-1.0, 0.0, 2.0], &[1.0, 0.5, 3.0]),
            Domain::ball(&[0.5, -0.5], 0.3),
            Domain::Annulus { center: vec![0.0, 0.0], inner: 1.0, outer: 2.0 },
        ];
        for d in &doms {
            d.validate().unwrap();
            for _ in 0..500 {
                assert!(d.contains(&d.sample(&mut rng)));
            }
        }
    }

    #[test]
    fn signed_distance_signs() {
        let b = Domain::cube(&[0.0, 0.0], &[1.0, 2.0]);
        assert!((b.signed_distance(&DVector::from_vec(vec![0.5, 0.5])) - 0.5).abs() < 1e-15);
        assert!((b.signed_distance(&DVector::from_vec(vec![2.0, 3.0])) + 2f64.sqrt()).abs() < 1e-15);
        let a = Domain::Annulus { center: vec![0.0, 0.0], inner: 1.0, outer: 2.0 };
        assert_eq!(a.signed_distance(&DVector::from_vec(vec![1.0, 0.0])), 0.0);
        assert!(a.signed_distance(&DVector::zeros(2)) < 0.0);
    }

    #[test]
    fn volumes() {
        assert!((unit_ball_volume(2) - std::f64::consts::PI).abs() < 1e-15);
        assert!((unit_ball_volume(3) - 4.0 / 3.0 * std::f64::consts::PI).abs() < 1e-14);
        let a = Domain::Annulus { center: vec![0.0, 0.0], inner: 1.0, outer: 2.0 };
        assert!((a.volume() - 3.0 * std::f64::consts::PI).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_domains() {
        assert!(Domain::cube(&[0.0], &[0.0]).validate().is_err());
        assert!(Domain::ball(&[0.0], -1.0).validate().is_err());
        assert!(DomainPair::new(Domain::ball(&[0.0], 1.0), Domain::ball(&[0.0, 1.0], 1.0)).is_err());
    }
}
