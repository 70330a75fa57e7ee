//! Tensor-sine eigenbasis of the stiffness operator and coefficient vectors.
//!
//! On the unit interval or unit square with Dirichlet conditions the
//! Laplacian has eigenfunctions `e_k(x) = prod_i sqrt(2) sin(k_i pi x_i)`
//! with eigenvalues `lambda_k = pi^2 |k|^2`.  The stiffness operator is
//! `A = (-Laplacian)^p` with `p = 1` (wave) or `p = 2` (plate), so its
//! eigenvalues are `mu_k = lambda_k^p`.  Everything downstream works on
//! coefficient vectors in this basis; fractional powers `A^alpha` act
//! diagonally as `mu_k^alpha`.

use crate::{Error, Result};

/// Spatial domain of the eigenbasis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Geometry {
    /// Unit interval `(0, 1)`.
    Interval,
    /// Unit square `(0, 1)^2`.
    Square,
}

impl Geometry {
    /// Spatial dimension of the domain.
    pub fn dim(self) -> usize {
        match self {
            Geometry::Interval => 1,
            Geometry::Square => 2,
        }
    }
}

/// One retained eigenmode.
#[derive(Debug, Clone, Copy)]
pub struct Mode {
    /// Multi-index; `k2 == 0` marks a 1-D (or synthetic) mode.
    pub k1: usize,
    pub k2: usize,
    /// Laplacian eigenvalue `pi^2 (k1^2 + k2^2)`.
    pub lambda: f64,
    /// Stiffness eigenvalue `lambda^p`.
    pub mu: f64,
}

/// Truncated eigenbasis: the first `N` (or `N^2`) tensor-sine modes, sorted
/// by stiffness eigenvalue `mu` with lexicographic tie-breaking, so the
/// coefficient layout is reproducible across runs.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    geometry: Option<Geometry>,
    p: u32,
    n_per_axis: usize,
    modes: Vec<Mode>,
}

impl SpectralBasis {
    /// Build the basis with `n` modes per axis and operator power `p`.
    ///
    /// Total mode count is `n` on the interval and `n^2` on the square.
    pub fn build(geometry: Geometry, p: u32, n: usize) -> Result<Self> {
        if !(1..=2).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "operator power p must be 1 or 2, got {p}"
            )));
        }
        if n == 0 {
            return Err(Error::InvalidArgument(
                "modes per axis must be positive".into(),
            ));
        }
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        let mut modes = Vec::new();
        match geometry {
            Geometry::Interval => {
                for k in 1..=n {
                    let lambda = pi2 * (k * k) as f64;
                    modes.push(Mode {
                        k1: k,
                        k2: 0,
                        lambda,
                        mu: lambda.powi(p as i32),
                    });
                }
            }
            Geometry::Square => {
                for k1 in 1..=n {
                    for k2 in 1..=n {
                        let lambda = pi2 * (k1 * k1 + k2 * k2) as f64;
                        modes.push(Mode {
                            k1,
                            k2,
                            lambda,
                            mu: lambda.powi(p as i32),
                        });
                    }
                }
            }
        }
        modes.sort_by(|a, b| {
            a.mu.partial_cmp(&b.mu)
                .unwrap()
                .then(a.k1.cmp(&b.k1))
                .then(a.k2.cmp(&b.k2))
        });
        Ok(Self {
            geometry: Some(geometry),
            p,
            n_per_axis: n,
            modes,
        })
    }

    /// Build a basis from a bare list of stiffness eigenvalues, with no
    /// spatial geometry attached.  Used to embed scalar prototype equations
    /// (one mode, `mu = a`) in the same machinery; point evaluation and
    /// collocation are unavailable and return [`Error::NoGeometry`].
    pub fn custom(mus: &[f64]) -> Result<Self> {
        if mus.is_empty() {
            return Err(Error::InvalidArgument("empty eigenvalue list".into()));
        }
        for (i, &mu) in mus.iter().enumerate() {
            if !(mu > 0.0) || !mu.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "eigenvalue {i} must be finite and positive, got {mu}"
                )));
            }
        }
        let modes = mus
            .iter()
            .enumerate()
            .map(|(i, &mu)| Mode {
                k1: i + 1,
                k2: 0,
                lambda: mu,
                mu,
            })
            .collect();
        Ok(Self {
            geometry: None,
            p: 1,
            n_per_axis: mus.len(),
            modes,
        })
    }

    /// Domain, or `None` for a bare eigenvalue list.
    pub fn geometry(&self) -> Option<Geometry> {
        self.geometry
    }

    /// Operator power `p` with `A = (-Laplacian)^p`.
    pub fn power(&self) -> u32 {
        self.p
    }

    /// Modes per axis used at construction.
    pub fn n_per_axis(&self) -> usize {
        self.n_per_axis
    }

    /// Number of retained modes.
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Mode table sorted by `mu`, ties lexicographic in `(k1, k2)`.
    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    /// Smallest stiffness eigenvalue `mu_1`.
    pub fn mu_min(&self) -> f64 {
        self.modes[0].mu
    }

    /// `H`-inner product: plain Euclidean product of coefficient vectors.
    pub fn inner(&self, a: &ModeVector, b: &ModeVector) -> f64 {
        debug_assert_eq!(a.len(), self.len());
        debug_assert_eq!(b.len(), self.len());
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| x * y)
            .sum()
    }

    /// Graph norm `|A^alpha w| = sqrt(sum mu_k^(2 alpha) w_k^2)`.
    ///
    /// `alpha = 0` is the plain `H`-norm; `alpha = 1/2` the energy norm of
    /// the displacement.  Since `mu_1 >= 1` on the supported geometries the
    /// map `alpha -> |A^alpha w|` is nondecreasing.
    pub fn norm_alpha(&self, w: &ModeVector, alpha: f64) -> f64 {
        debug_assert_eq!(w.len(), self.len());
        self.modes
            .iter()
            .zip(w.as_slice())
            .map(|(m, &c)| m.mu.powf(2.0 * alpha) * c * c)
            .sum::<f64>()
            .sqrt()
    }

    /// Basis function `e_k` evaluated at a point of the domain.
    pub fn basis_fn(&self, mode: usize, x: &[f64]) -> Result<f64> {
        let geom = self
            .geometry
            .ok_or_else(|| Error::NoGeometry("basis_fn".into()))?;
        self.check_point(geom, x)?;
        let m = &self.modes[mode];
        let sqrt2 = std::f64::consts::SQRT_2;
        let pi = std::f64::consts::PI;
        Ok(match geom {
            Geometry::Interval => sqrt2 * (m.k1 as f64 * pi * x[0]).sin(),
            Geometry::Square => {
                2.0 * (m.k1 as f64 * pi * x[0]).sin() * (m.k2 as f64 * pi * x[1]).sin()
            }
        })
    }

    /// Evaluate the field `sum_k w_k e_k` at a point of the domain.
    pub fn eval_at_point(&self, w: &ModeVector, x: &[f64]) -> Result<f64> {
        let geom = self
            .geometry
            .ok_or_else(|| Error::NoGeometry("eval_at_point".into()))?;
        self.check_point(geom, x)?;
        let sqrt2 = std::f64::consts::SQRT_2;
        let pi = std::f64::consts::PI;
        let mut acc = 0.0;
        match geom {
            Geometry::Interval => {
                for (m, &c) in self.modes.iter().zip(w.as_slice()) {
                    acc += c * sqrt2 * (m.k1 as f64 * pi * x[0]).sin();
                }
            }
            Geometry::Square => {
                for (m, &c) in self.modes.iter().zip(w.as_slice()) {
                    acc += c
                        * 2.0
                        * (m.k1 as f64 * pi * x[0]).sin()
                        * (m.k2 as f64 * pi * x[1]).sin();
                }
            }
        }
        Ok(acc)
    }

    fn check_point(&self, geom: Geometry, x: &[f64]) -> Result<()> {
        if x.len() != geom.dim() {
            return Err(Error::InvalidArgument(format!(
                "point has {} coordinates, domain has {}",
                x.len(),
                geom.dim()
            )));
        }
        for &xi in x {
            if !(0.0..=1.0).contains(&xi) {
                return Err(Error::InvalidArgument(format!(
                    "point coordinate {xi} outside the unit domain"
                )));
            }
        }
        Ok(())
    }

    /// A zero coefficient vector of matching length.
    pub fn zeros(&self) -> ModeVector {
        ModeVector::zeros(self.len())
    }
}

/// Coefficient vector in the eigenbasis.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeVector(Vec<f64>);

impl ModeVector {
    pub fn zeros(n: usize) -> Self {
        ModeVector(vec![0.0; n])
    }

    pub fn from_vec(v: Vec<f64>) -> Self {
        ModeVector(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &ModeVector) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for a in &mut self.0 {
            *a *= c;
        }
    }

    pub fn scaled(&self, c: f64) -> ModeVector {
        ModeVector(self.0.iter().map(|a| a * c).collect())
    }

    pub fn sub(&self, other: &ModeVector) -> ModeVector {
        debug_assert_eq!(self.len(), other.len());
        ModeVector(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    pub fn add(&self, other: &ModeVector) -> ModeVector {
        debug_assert_eq!(self.len(), other.len());
        ModeVector(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn dot(&self, other: &ModeVector) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|a| a.is_finite())
    }
}

impl std::ops::Index<usize> for ModeVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for ModeVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// State of the first-order system: displacement and velocity coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub u: ModeVector,
    pub v: ModeVector,
}

impl PhasePoint {
    pub fn zeros(n: usize) -> Self {
        PhasePoint {
            u: ModeVector::zeros(n),
            v: ModeVector::zeros(n),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }

    /// Energy-norm distance `sqrt(|A^(1/2)(u1-u2)|^2 + |v1-v2|^2)`.
    pub fn energy_distance(&self, other: &PhasePoint, basis: &SpectralBasis) -> f64 {
        let du = self.u.sub(&other.u);
        let dv = self.v.sub(&other.v);
        let a = basis.norm_alpha(&du, 0.5);
        let b = dv.norm();
        (a * a + b * b).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn interval_wave_eigenvalues() {
        // 1-D, p = 1, N = 3: mu_k = pi^2 k^2.
        let b = SpectralBasis::build(Geometry::Interval, 1, 3).unwrap();
        let mus: Vec<f64> = b.modes().iter().map(|m| m.mu).collect();
        for (k, mu) in mus.iter().enumerate() {
            let expect = PI * PI * ((k + 1) * (k + 1)) as f64;
            assert!(close(*mu, expect, 1e-14), "mu_{k} = {mu}, want {expect}");
        }
    }

    #[test]
    fn square_plate_sorted_with_ties() {
        // 2-D, p = 1, N = 2: lambdas {2, 5, 5, 8} * pi^2, ties lexicographic.
        let b = SpectralBasis::build(Geometry::Square, 1, 2).unwrap();
        let idx: Vec<(usize, usize)> = b.modes().iter().map(|m| (m.k1, m.k2)).collect();
        assert_eq!(idx, vec![(1, 1), (1, 2), (2, 1), (2, 2)]);
        let pi2 = PI * PI;
        let mus: Vec<f64> = b.modes().iter().map(|m| m.mu).collect();
        for (got, want) in mus.iter().zip([2.0, 5.0, 5.0, 8.0]) {
            assert!(close(*got, want * pi2, 1e-14));
        }
    }

    #[test]
    fn plate_power_squares_lambda() {
        let b = SpectralBasis::build(Geometry::Interval, 2, 4).unwrap();
        for m in b.modes() {
            assert!(close(m.mu, m.lambda * m.lambda, 1e-14));
        }
    }

    #[test]
    fn norm_alpha_matches_closed_form() {
        // 1-D, p = 2, w = (1, 1): |A^(1/2) w| = sqrt(pi^4 + 16 pi^4).
        let b = SpectralBasis::build(Geometry::Interval, 2, 2).unwrap();
        let w = ModeVector::from_vec(vec![1.0, 1.0]);
        let want = (PI.powi(4) + 16.0 * PI.powi(4)).sqrt();
        assert!(close(b.norm_alpha(&w, 0.5), want, 1e-13));
        // alpha = 0 reduces to the Euclidean norm.
        assert!(close(b.norm_alpha(&w, 0.0), 2f64.sqrt(), 1e-14));
    }

    #[test]
    fn norm_alpha_monotone_in_alpha() {
        let b = SpectralBasis::build(Geometry::Square, 2, 3).unwrap();
        let w = ModeVector::from_vec((0..9).map(|i| ((i * 7 + 3) % 5) as f64 - 2.0).collect());
        let mut prev = 0.0;
        for i in 0..=8 {
            let alpha = i as f64 / 8.0;
            let n = b.norm_alpha(&w, alpha);
            assert!(n >= prev - 1e-12, "norm_alpha not monotone at alpha={alpha}");
            prev = n;
        }
    }

    #[test]
    fn interpolation_inequality() {
        // |A^(1/2 - delta) w| <= mu_1^(-delta) |A^(1/2) w|.
        let b = SpectralBasis::build(Geometry::Interval, 1, 6).unwrap();
        let w = ModeVector::from_vec(vec![0.3, -1.2, 0.05, 2.0, -0.7, 0.11]);
        for delta in [0.1, 0.25, 0.5] {
            let lhs = b.norm_alpha(&w, 0.5 - delta);
            let rhs = b.mu_min().powf(-delta) * b.norm_alpha(&w, 0.5);
            assert!(lhs <= rhs * (1.0 + 1e-12));
        }
    }

    #[test]
    fn eval_at_point_single_mode() {
        // w = e_2 at x = 1/4: sqrt(2) sin(pi/2) = sqrt(2).
        let b = SpectralBasis::build(Geometry::Interval, 1, 4).unwrap();
        let mut w = b.zeros();
        w[1] = 1.0;
        let got = b.eval_at_point(&w, &[0.25]).unwrap();
        assert!(close(got, 2f64.sqrt(), 1e-14));
    }

    #[test]
    fn eval_at_point_rejects_outside_domain() {
        let b = SpectralBasis::build(Geometry::Interval, 1, 2).unwrap();
        let w = b.zeros();
        assert!(b.eval_at_point(&w, &[1.5]).is_err());
        assert!(b.eval_at_point(&w, &[-0.1]).is_err());
        assert!(b.eval_at_point(&w, &[0.5, 0.5]).is_err());
    }

    #[test]
    fn basis_orthonormal_under_quadrature() {
        // Midpoint-rule check that int e_j e_k = delta_jk on the square.
        let b = SpectralBasis::build(Geometry::Square, 1, 2).unwrap();
        let n = 64;
        for j in 0..b.len() {
            for k in 0..b.len() {
                let mut acc = 0.0;
                for ix in 0..n {
                    for iy in 0..n {
                        let x = [(ix as f64 + 0.5) / n as f64, (iy as f64 + 0.5) / n as f64];
                        acc += b.basis_fn(j, &x).unwrap() * b.basis_fn(k, &x).unwrap();
                    }
                }
                acc /= (n * n) as f64;
                let want = if j == k { 1.0 } else { 0.0 };
                assert!(
                    (acc - want).abs() < 1e-10,
                    "gram[{j}][{k}] = {acc}, want {want}"
                );
            }
        }
    }

    #[test]
    fn custom_basis_has_no_geometry() {
        let b = SpectralBasis::custom(&[2.0]).unwrap();
        assert_eq!(b.len(), 1);
        assert!(b.geometry().is_none());
        let w = ModeVector::from_vec(vec![1.0]);
        assert!(matches!(
            b.eval_at_point(&w, &[0.5]),
            Err(Error::NoGeometry(_))
        ));
        assert!(close(b.norm_alpha(&w, 0.5), 2f64.sqrt(), 1e-15));
    }

    #[test]
    fn custom_basis_rejects_nonpositive() {
        assert!(SpectralBasis::custom(&[1.0, 0.0]).is_err());
        assert!(SpectralBasis::custom(&[-3.0]).is_err());
        assert!(SpectralBasis::custom(&[]).is_err());
    }
}
