use nalgebra::DMatrix;
use serde::Serialize;

use super::domain::Vector;

/// Dense n*n*n tensor, row-major in (i, j, k).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Tensor3 {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(n: usize) -> Self {
        Tensor3 { n, data: vec![0.0; n * n * n] }
    }
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.n + j) * self.n + k]
    }
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let n = self.n;
        self.data[(i * n + j) * n + k] = v;
    }
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Dense n^4 tensor, row-major in (i, j, k, l).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Tensor4 {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(n: usize) -> Self {
        Tensor4 { n, data: vec![0.0; n * n * n * n] }
    }
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let n = self.n;
        self.data[((i * n + j) * n + k) * n + l]
    }
    pub fn set(&mut self, i: usize, j: usize, k: usize, l: usize, v: f64) {
        let n = self.n;
        self.data[((i * n + j) * n + k) * n + l] = v;
    }
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Derivatives of c at a point pair. Index conventions: `mixed[(i, b)] = D_{x_i} D_{xbar_b} c`,
/// `d2d1[i][j][b] = D_{x_i x_j} D_{xbar_b} c`, `d1d2[i][b][d] = D_{x_i} D_{xbar_b xbar_d} c`,
/// `d2d2[i][j][b][d] = D_{x_i x_j} D_{xbar_b xbar_d} c`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DerivativeJet {
    pub order: usize,
    pub value: f64,
    #[serde(with = "crate::serde_vec::vector")]
    pub grad_x: Vector,
    #[serde(with = "crate::serde_vec::vector")]
    pub grad_xbar: Vector,
    pub hess_x: Option<DMatrix<f64>>,
    pub hess_xbar: Option<DMatrix<f64>>,
    pub mixed: Option<DMatrix<f64>>,
    pub d2d1: Option<Tensor3>,
    pub d1d2: Option<Tensor3>,
    pub d2d2: Option<Tensor4>,
}

impl DerivativeJet {
    pub fn dim(&self) -> usize {
        self.grad_x.len()
    }

    pub fn mixed(&self) -> &DMatrix<f64> {
        self.mixed.as_ref().expect("jet of order >= 2")
    }

    pub fn hess_x(&self) -> &DMatrix<f64> {
        self.hess_x.as_ref().expect("jet of order >= 2")
    }

    /// Largest relative discrepancy between two jets over all blocks present in both.
    pub fn max_relative_gap(&self, other: &DerivativeJet) -> f64 {
        fn gap(a: &[f64], b: &[f64]) -> f64 {
            let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
            a.iter().zip(b).fold(0.0f64, |m, (p, q)| m.max((p - q).abs())) / scale
        }
        let mut g = gap(&[self.value], &[other.value]);
        g = g.max(gap(self.grad_x.as_slice(), other.grad_x.as_slice()));
        g = g.max(gap(self.grad_xbar.as_slice(), other.grad_xbar.as_slice()));
        let mats = [
            (&self.hess_x, &other.hess_x),
            (&self.hess_xbar, &other.hess_xbar),
            (&self.mixed, &other.mixed),
        ];
        for (a, b) in mats {
            if let (Some(a), Some(b)) = (a, b) {
                g = g.max(gap(a.as_slice(), b.as_slice()));
            }
        }
        for (a, b) in [(&self.d2d1, &other.d2d1), (&self.d1d2, &other.d1d2)] {
            if let (Some(a), Some(b)) = (a, b) {
                g = g.max(gap(&a.data, &b.data));
            }
        }
        if let (Some(a), Some(b)) = (&self.d2d2, &other.d2d2) {
            g = g.max(gap(&a.data, &b.data));
        }
        g
    }
}

/// Builds a jet from a partial-derivative oracle over z = (x, xbar); `dirs` index into z.
/// Every entry is computed on its own, so symmetry of the result is a real check.
pub(crate) fn assemble<F: Fn(&[usize]) -> f64>(n: usize, order: usize, value: f64, partial: F) -> DerivativeJet {
    let grad_x = Vector::from_iterator(n, (0..n).map(|i| partial(&[i])));
    let grad_xbar = Vector::from_iterator(n, (0..n).map(|b| partial(&[n + b])));
    let mut jet = DerivativeJet {
        order,
        value,
        grad_x,
        grad_xbar,
        hess_x: None,
        hess_xbar: None,
        mixed: None,
        d2d1: None,
        d1d2: None,
        d2d2: None,
    };
    if order >= 2 {
        jet.hess_x = Some(DMatrix::from_fn(n, n, |i, j| partial(&[i, j])));
        jet.hess_xbar = Some(DMatrix::from_fn(n, n, |a, b| partial(&[n + a, n + b])));
        jet.mixed = Some(DMatrix::from_fn(n, n, |i, b| partial(&[i, n + b])));
    }
    if order >= 3 {
        let mut t = Tensor3::zeros(n);
        let mut s = Tensor3::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    t.set(i, j, k, partial(&[i, j, n + k]));
                    s.set(i, j, k, partial(&[i, n + j, n + k]));
                }
            }
        }
        jet.d2d1 = Some(t);
        jet.d1d2 = Some(s);
    }
    if order >= 4 {
        let mut q = Tensor4::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        q.set(i, j, k, l, partial(&[i, j, n + k, n + l]));
                    }
                }
            }
        }
        jet.d2d2 = Some(q);
    }
    jet
}

pub(crate) fn bilinear_jet(x: &Vector, xbar: &Vector, order: usize) -> DerivativeJet {
    let n = x.len();
    let mut jet = DerivativeJet {
        order,
        value: -x.dot(xbar),
        grad_x: -xbar.clone(),
        grad_xbar: -x.clone(),
        hess_x: None,
        hess_xbar: None,
        mixed: None,
        d2d1: None,
        d1d2: None,
        d2d2: None,
    };
    if order >= 2 {
        jet.hess_x = Some(DMatrix::zeros(n, n));
        jet.hess_xbar = Some(DMatrix::zeros(n, n));
        jet.mixed = Some(-DMatrix::identity(n, n));
    }
    if order >= 3 {
        jet.d2d1 = Some(Tensor3::zeros(n));
        jet.d1d2 = Some(Tensor3::zeros(n));
    }
    if order >= 4 {
        jet.d2d2 = Some(Tensor4::zeros(n));
    }
    jet
}

/// Jet of c = g(|x - xbar|^2), with `g[m]` the m-th derivative of g at s.
pub(crate) fn radial_jet(x: &Vector, xbar: &Vector, order: usize, g: [f64; 5]) -> DerivativeJet {
    let n = x.len();
    let r = x - xbar;
    let d = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
    let f1 = &r * (2.0 * g[1]);
    let f2 = |i: usize, j: usize| 2.0 * g[1] * d(i, j) + 4.0 * g[2] * r[i] * r[j];
    let f3 = |i: usize, j: usize, k: usize| {
        4.0 * g[2] * (d(i, j) * r[k] + d(i, k) * r[j] + d(j, k) * r[i]) + 8.0 * g[3] * r[i] * r[j] * r[k]
    };
    let f4 = |i: usize, j: usize, k: usize, l: usize| {
        4.0 * g[2] * (d(i, j) * d(k, l) + d(i, k) * d(j, l) + d(i, l) * d(j, k))
            + 8.0
                * g[3]
                * (d(i, j) * r[k] * r[l]
                    + d(i, k) * r[j] * r[l]
                    + d(i, l) * r[j] * r[k]
                    + d(j, k) * r[i] * r[l]
                    + d(j, l) * r[i] * r[k]
                    + d(k, l) * r[i] * r[j])
            + 16.0 * g[4] * r[i] * r[j] * r[k] * r[l]
    };
    let mut jet = DerivativeJet {
        order,
        value: g[0],
        grad_x: f1.clone(),
        grad_xbar: -f1,
        hess_x: None,
        hess_xbar: None,
        mixed: None,
        d2d1: None,
        d1d2: None,
        d2d2: None,
    };
    if order >= 2 {
        let h = DMatrix::from_fn(n, n, f2);
        jet.hess_x = Some(h.clone());
        jet.hess_xbar = Some(h.clone());
        jet.mixed = Some(-h);
    }
    if order >= 3 {
        let mut t = Tensor3::zeros(n);
        let mut s = Tensor3::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let v = f3(i, j, k);
                    t.set(i, j, k, -v);
                    s.set(i, j, k, v);
                }
            }
        }
        jet.d2d1 = Some(t);
        jet.d1d2 = Some(s);
    }
    if order >= 4 {
        let mut q = Tensor4::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        q.set(i, j, k, l, f4(i, j, k, l));
                    }
                }
            }
        }
        jet.d2d2 = Some(q);
    }
    jet
}

/// Central-difference mixed partial along the listed coordinates of z, with
/// one Richardson step: (4 D(h/2) - D(h)) / 3.
pub(crate) fn fd_partial<F: Fn(&[f64]) -> f64>(f: &F, z: &[f64], dirs: &[usize], h: f64) -> f64 {
    let stencil = |h: f64| {
        let m = dirs.len();
        let mut acc = 0.0;
        let mut zz = z.to_vec();
        for mask in 0..(1usize << m) {
            zz.copy_from_slice(z);
            let mut sign = 1.0;
            for (l, &d) in dirs.iter().enumerate() {
                if mask & (1 << l) != 0 {
                    zz[d] -= h;
                    sign = -sign;
                } else {
                    zz[d] += h;
                }
            }
            acc += sign * f(&zz);
        }
        acc / (2.0 * h).powi(m as i32)
    };
    (4.0 * stencil(0.5 * h) - stencil(h)) / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radial_matches_bilinear_identity_for_half_square() {
        let x = Vector::from_vec(vec![0.3, -1.0]);
        let xb = Vector::from_vec(vec![1.0, 2.0]);
        let s = (&x - &xb).norm_squared();
        let jet = radial_jet(&x, &xb, 4, [0.5 * s, 0.5, 0.0, 0.0, 0.0]);
        assert_eq!(jet.mixed(), &-DMatrix::<f64>::identity(2, 2));
        assert_eq!(jet.grad_x, &x - &xb);
        assert_eq!(jet.d2d2.unwrap().max_abs(), 0.0);
    }

    #[test]
    fn fd_partial_polynomial() {
        // f = z0^2 z1^2 z2 ; d^4/dz0^2 dz1 dz2... use d/dz0 dz0 dz1 -> 4 z1 z2
        let f = |z: &[f64]| z[0] * z[0] * z[1] * z[1] * z[2];
        let z = [0.7, -1.3, 2.0];
        let v = fd_partial(&f, &z, &[0, 0, 1], 1e-2);
        assert!((v - 4.0 * -1.3 * 2.0).abs() < 1e-8);
    }
}
