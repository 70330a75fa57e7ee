//! Structural nonlinearities `F(u)`, their potentials, and the collocation
//! grid used to evaluate pointwise nonlinearities pseudospectrally.
//!
//! Three families are supported:
//!
//! * **Berger**: `F(u) = (kappa s - mu_b) (-Laplacian) u - h + F*(u)` with
//!   `s = |grad u|^2 = sum lambda_k u_k^2`; potential
//!   `Pi_0 = kappa/4 s^2`, `Pi_1 = -mu_b/2 s - (h, u)`.  Closed form in
//!   coefficients, no grid needed.
//! * **Kirchhoff**: `F(u) = f(u(x)) - h + F*(u)` with `f` an odd-degree
//!   polynomial with positive leading coefficient, applied pointwise on the
//!   collocation grid.
//! * **WavePoly**: same pointwise path with `deg f <= 3` (wave equations).
//!
//! All families share a nonconservative perturbation
//! `F*_k = c_nc mu_k^(1/2 - delta_hat) u_k`, globally Lipschitz with
//! constant `c_nc mu_1^(-delta_hat)` relative to the `A^(1/2)`-norm.
//!
//! The potential `Pi = Pi_0 + Pi_1` of the conservative part is evaluated
//! with the *same* grid quadrature that defines the pseudospectral
//! projection, so the coefficient gradient of the discrete potential is
//! exactly `F - F*`; energy budgets close to integrator order rather than
//! quadrature order.

use crate::spectral::{Geometry, ModeVector, SpectralBasis};
use crate::{Error, Result};

/// Dense polynomial with coefficients in ascending degree order.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    /// `coeffs[i]` multiplies `s^i`; trailing zeros are trimmed.
    pub fn new(coeffs: Vec<f64>) -> Self {
        let mut c = coeffs;
        while c.len() > 1 && c.last() == Some(&0.0) {
            c.pop();
        }
        if c.is_empty() {
            c.push(0.0);
        }
        Polynomial { coeffs: c }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn leading(&self) -> f64 {
        *self.coeffs.last().unwrap()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn eval(&self, s: f64) -> f64 {
        let mut acc = 0.0;
        for &c in self.coeffs.iter().rev() {
            acc = acc * s + c;
        }
        acc
    }

    /// Antiderivative with zero constant term.
    pub fn antiderivative(&self) -> Polynomial {
        let mut c = vec![0.0];
        c.extend(
            self.coeffs
                .iter()
                .enumerate()
                .map(|(i, &a)| a / (i + 1) as f64),
        );
        Polynomial::new(c)
    }

    /// Split off the leading monomial: `(leading part, remainder)`.
    fn split_leading(&self) -> (Polynomial, Polynomial) {
        let d = self.degree();
        let mut lead = vec![0.0; d + 1];
        lead[d] = self.coeffs[d];
        let mut rest = self.coeffs.clone();
        rest[d] = 0.0;
        (Polynomial::new(lead), Polynomial::new(rest))
    }
}

/// Family-specific parameters.
#[derive(Debug, Clone)]
pub enum NonlinearKind {
    /// `kappa >= 0` hardening strength, `mu_b` in-plane pre-stress.
    Berger { kappa: f64, mu_b: f64 },
    /// Odd-degree polynomial `f` with positive leading coefficient.
    Kirchhoff { f: Polynomial },
    /// Polynomial `f` of degree at most 3 with positive leading coefficient.
    WavePoly { f: Polynomial },
}

/// Full nonlinearity specification `F = grad Pi + F*`.
#[derive(Debug, Clone)]
pub struct NonlinearitySpec {
    kind: NonlinearKind,
    /// Static load `h` in coefficients (enters the potential as `-(h, u)`).
    load: ModeVector,
    /// Nonconservative strength `c_nc >= 0`.
    c_nc: f64,
    /// Exponent offset `delta_hat` in `(0, 1/2]`.
    delta_hat: f64,
}

impl NonlinearitySpec {
    pub fn new(
        kind: NonlinearKind,
        load: ModeVector,
        c_nc: f64,
        delta_hat: f64,
    ) -> Result<Self> {
        match &kind {
            NonlinearKind::Berger { kappa, .. } => {
                if !(*kappa >= 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "Berger kappa must be >= 0, got {kappa}"
                    )));
                }
            }
            NonlinearKind::Kirchhoff { f } => {
                if f.degree() % 2 == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "Kirchhoff polynomial must have odd degree, got degree {}",
                        f.degree()
                    )));
                }
                if !(f.leading() > 0.0) {
                    return Err(Error::InvalidArgument(
                        "Kirchhoff polynomial needs a positive leading coefficient".into(),
                    ));
                }
            }
            NonlinearKind::WavePoly { f } => {
                if f.degree() > 3 {
                    return Err(Error::InvalidArgument(format!(
                        "wave polynomial degree must be <= 3, got {}",
                        f.degree()
                    )));
                }
                if !(f.leading() > 0.0) {
                    return Err(Error::InvalidArgument(
                        "wave polynomial needs a positive leading coefficient".into(),
                    ));
                }
            }
        }
        if !(c_nc >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "c_nc must be >= 0, got {c_nc}"
            )));
        }
        if !(delta_hat > 0.0 && delta_hat <= 0.5) {
            return Err(Error::InvalidArgument(format!(
                "delta_hat must lie in (0, 1/2], got {delta_hat}"
            )));
        }
        Ok(NonlinearitySpec {
            kind,
            load,
            c_nc,
            delta_hat,
        })
    }

    /// The zero nonlinearity (linear dynamics): Berger with all couplings off.
    pub fn zero(basis: &SpectralBasis) -> Self {
        NonlinearitySpec {
            kind: NonlinearKind::Berger {
                kappa: 0.0,
                mu_b: 0.0,
            },
            load: basis.zeros(),
            c_nc: 0.0,
            delta_hat: 0.25,
        }
    }

    pub fn kind(&self) -> &NonlinearKind {
        &self.kind
    }

    pub fn load(&self) -> &ModeVector {
        &self.load
    }

    /// Whether evaluating `F` needs a collocation grid.
    pub fn needs_grid(&self) -> bool {
        matches!(
            self.kind,
            NonlinearKind::Kirchhoff { .. } | NonlinearKind::WavePoly { .. }
        )
    }

    /// Nonconservative part `F*_k = c_nc mu_k^(1/2 - delta_hat) u_k`.
    pub fn eval_fstar(&self, basis: &SpectralBasis, u: &ModeVector) -> ModeVector {
        let mut out = basis.zeros();
        if self.c_nc == 0.0 {
            return out;
        }
        let e = 0.5 - self.delta_hat;
        for (i, m) in basis.modes().iter().enumerate() {
            out[i] = self.c_nc * m.mu.powf(e) * u[i];
        }
        out
    }

    /// Full nonlinearity `F(u) = grad Pi(u) + F*(u)` in coefficients.
    ///
    /// `grid` may be `None` for Berger; pointwise families require it.
    pub fn eval_f(
        &self,
        basis: &SpectralBasis,
        grid: Option<&CollocationGrid>,
        u: &ModeVector,
    ) -> Result<ModeVector> {
        let mut out = match &self.kind {
            NonlinearKind::Berger { kappa, mu_b } => {
                let s = berger_s(basis, u);
                let factor = kappa * s - mu_b;
                let mut f = basis.zeros();
                for (i, m) in basis.modes().iter().enumerate() {
                    f[i] = factor * m.lambda * u[i];
                }
                f
            }
            NonlinearKind::Kirchhoff { f } | NonlinearKind::WavePoly { f } => {
                let grid = grid.ok_or_else(|| {
                    Error::NoGeometry("pointwise nonlinearity needs a collocation grid".into())
                })?;
                let mut vals = grid.to_physical(u);
                for v in &mut vals {
                    *v = f.eval(*v);
                }
                grid.to_spectral(&vals)
            }
        };
        out.axpy(-1.0, &self.load);
        let fstar = self.eval_fstar(basis, u);
        out.axpy(1.0, &fstar);
        if !out.is_finite() {
            return Err(Error::NonFinite("nonlinearity evaluation".into()));
        }
        Ok(out)
    }

    /// Potential split `(Pi_0, Pi_1)` with `Pi_0 >= 0` the leading part and
    /// `Pi_1` the lower-order remainder including the load term `-(h, u)`.
    pub fn potentials(
        &self,
        basis: &SpectralBasis,
        grid: Option<&CollocationGrid>,
        u: &ModeVector,
    ) -> Result<(f64, f64)> {
        let load_term = -self.load.dot(u);
        match &self.kind {
            NonlinearKind::Berger { kappa, mu_b } => {
                let s = berger_s(basis, u);
                Ok((kappa / 4.0 * s * s, -mu_b / 2.0 * s + load_term))
            }
            NonlinearKind::Kirchhoff { f } | NonlinearKind::WavePoly { f } => {
                let grid = grid.ok_or_else(|| {
                    Error::NoGeometry("pointwise potential needs a collocation grid".into())
                })?;
                let anti = f.antiderivative();
                let (lead, rest) = anti.split_leading();
                let vals = grid.to_physical(u);
                let pi0 = grid.integrate(vals.iter().map(|&v| lead.eval(v)));
                let pi1 = grid.integrate(vals.iter().map(|&v| rest.eval(v))) + load_term;
                Ok((pi0, pi1))
            }
        }
    }

    /// Total potential `Pi = Pi_0 + Pi_1`.
    pub fn potential(
        &self,
        basis: &SpectralBasis,
        grid: Option<&CollocationGrid>,
        u: &ModeVector,
    ) -> Result<f64> {
        let (p0, p1) = self.potentials(basis, grid, u)?;
        Ok(p0 + p1)
    }

    /// Gradient-consistency probe: relative discrepancy between the central
    /// difference `(Pi(u + eps w) - Pi(u - eps w)) / (2 eps)` and the inner
    /// product `(F(u) - F*(u), w)`.
    pub fn directional_derivative_check(
        &self,
        basis: &SpectralBasis,
        grid: Option<&CollocationGrid>,
        u: &ModeVector,
        w: &ModeVector,
        eps: f64,
    ) -> Result<f64> {
        let mut up = u.clone();
        up.axpy(eps, w);
        let mut um = u.clone();
        um.axpy(-eps, w);
        let diff = (self.potential(basis, grid, &up)? - self.potential(basis, grid, &um)?)
            / (2.0 * eps);
        let mut f = self.eval_f(basis, grid, u)?;
        let fstar = self.eval_fstar(basis, u);
        f.axpy(-1.0, &fstar);
        let inner = f.dot(w);
        Ok((diff - inner).abs() / (1.0 + inner.abs()))
    }
}

/// Berger coupling scalar `s = |grad u|^2 = sum lambda_k u_k^2`.
pub fn berger_s(basis: &SpectralBasis, u: &ModeVector) -> f64 {
    basis
        .modes()
        .iter()
        .zip(u.as_slice())
        .map(|(m, &c)| m.lambda * c * c)
        .sum()
}

/// Oversampled tensor collocation grid for pointwise nonlinearities.
///
/// Per axis the grid uses `M = 2N + 1` uniform subintervals of the unit
/// interval, i.e. `2N` interior points: cubic products of retained sine
/// modes (frequency at most `3N < M`) alias only onto discarded frequencies,
/// so degree-3 nonlinearities are evaluated without aliasing error, and the
/// trapezoid weights integrate products of up to four retained modes
/// exactly (all frequencies stay below `2M`).
#[derive(Debug, Clone)]
pub struct CollocationGrid {
    geometry: Geometry,
    n_per_axis: usize,
    /// Subintervals per axis, `M = 2N + 1`.
    m: usize,
    /// `sin_table[k - 1][j - 1] = sin(k pi j / M)`, `k <= N`, `j <= M - 1`.
    sin_table: Vec<Vec<f64>>,
    /// `mode_at[i] = (k1 - 1, k2 - 1)` into the frequency staging array.
    mode_at: Vec<(usize, usize)>,
}

impl CollocationGrid {
    pub fn new(basis: &SpectralBasis) -> Result<Self> {
        let geometry = basis
            .geometry()
            .ok_or_else(|| Error::NoGeometry("collocation grid".into()))?;
        let n = basis.n_per_axis();
        let m = 2 * n + 1;
        let pi = std::f64::consts::PI;
        let sin_table = (1..=n)
            .map(|k| {
                (1..m)
                    .map(|j| (k as f64 * pi * j as f64 / m as f64).sin())
                    .collect()
            })
            .collect();
        let mode_at = basis
            .modes()
            .iter()
            .map(|mode| (mode.k1 - 1, mode.k2.saturating_sub(1)))
            .collect();
        Ok(CollocationGrid {
            geometry,
            n_per_axis: n,
            m,
            sin_table,
            mode_at,
        })
    }

    /// Interior points per axis (`2N`).
    pub fn points_per_axis(&self) -> usize {
        self.m - 1
    }

    /// Total number of interior grid points.
    pub fn num_points(&self) -> usize {
        match self.geometry {
            Geometry::Interval => self.m - 1,
            Geometry::Square => (self.m - 1) * (self.m - 1),
        }
    }

    /// Physical values of the field at the interior grid points.
    ///
    /// 2-D layout is row-major: `vals[j1 * (M-1) + j2]` for the point
    /// `(x_{j1+1}, y_{j2+1})`.
    pub fn to_physical(&self, w: &ModeVector) -> Vec<f64> {
        let np = self.m - 1;
        let sqrt2 = std::f64::consts::SQRT_2;
        match self.geometry {
            Geometry::Interval => {
                let mut vals = vec![0.0; np];
                for (i, &(k1, _)) in self.mode_at.iter().enumerate() {
                    let c = sqrt2 * w[i];
                    if c == 0.0 {
                        continue;
                    }
                    let row = &self.sin_table[k1];
                    for (v, s) in vals.iter_mut().zip(row) {
                        *v += c * s;
                    }
                }
                vals
            }
            Geometry::Square => {
                let n = self.n_per_axis;
                // Stage coefficients on the (k1, k2) frequency lattice.
                let mut freq = vec![0.0; n * n];
                for (i, &(k1, k2)) in self.mode_at.iter().enumerate() {
                    freq[k1 * n + k2] = w[i];
                }
                // tmp[j1][k2] = sum_k1 freq[k1][k2] sin(k1 pi x_j1)
                let mut tmp = vec![0.0; np * n];
                for k1 in 0..n {
                    let row = &self.sin_table[k1];
                    for j1 in 0..np {
                        let s = row[j1];
                        if s == 0.0 {
                            continue;
                        }
                        let t = &mut tmp[j1 * n..(j1 + 1) * n];
                        let f = &freq[k1 * n..(k1 + 1) * n];
                        for (ti, fi) in t.iter_mut().zip(f) {
                            *ti += s * fi;
                        }
                    }
                }
                let mut vals = vec![0.0; np * np];
                for j1 in 0..np {
                    let t = &tmp[j1 * n..(j1 + 1) * n];
                    let out = &mut vals[j1 * np..(j1 + 1) * np];
                    for (k2, &tv) in t.iter().enumerate() {
                        if tv == 0.0 {
                            continue;
                        }
                        let row = &self.sin_table[k2];
                        for (o, s) in out.iter_mut().zip(row) {
                            *o += 2.0 * tv * s;
                        }
                    }
                }
                vals
            }
        }
    }

    /// Discrete sine projection of grid values back onto retained modes.
    ///
    /// Exact inverse of [`to_physical`](Self::to_physical) on the retained
    /// span; for pointwise images of degree <= 3 it coincides with the
    /// `L^2` projection (no aliasing onto retained modes).
    pub fn to_spectral(&self, vals: &[f64]) -> ModeVector {
        let np = self.m - 1;
        let sqrt2 = std::f64::consts::SQRT_2;
        let mf = self.m as f64;
        match self.geometry {
            Geometry::Interval => {
                let mut w = ModeVector::zeros(self.mode_at.len());
                for (i, &(k1, _)) in self.mode_at.iter().enumerate() {
                    let row = &self.sin_table[k1];
                    let mut acc = 0.0;
                    for (v, s) in vals.iter().zip(row) {
                        acc += v * s;
                    }
                    w[i] = sqrt2 / mf * acc;
                }
                w
            }
            Geometry::Square => {
                let n = self.n_per_axis;
                // tmp[j1][k2] = sum_j2 vals[j1][j2] sin(k2 pi x_j2)
                let mut tmp = vec![0.0; np * n];
                for j1 in 0..np {
                    let row_vals = &vals[j1 * np..(j1 + 1) * np];
                    let t = &mut tmp[j1 * n..(j1 + 1) * n];
                    for (k2, ti) in t.iter_mut().enumerate() {
                        let srow = &self.sin_table[k2];
                        let mut acc = 0.0;
                        for (v, s) in row_vals.iter().zip(srow) {
                            acc += v * s;
                        }
                        *ti = acc;
                    }
                }
                let mut w = ModeVector::zeros(self.mode_at.len());
                for (i, &(k1, k2)) in self.mode_at.iter().enumerate() {
                    let srow = &self.sin_table[k1];
                    let mut acc = 0.0;
                    for j1 in 0..np {
                        acc += srow[j1] * tmp[j1 * n + k2];
                    }
                    w[i] = 2.0 / (mf * mf) * acc;
                }
                w
            }
        }
    }

    /// Trapezoid quadrature of interior grid values over the unit domain
    /// (boundary values of pointwise images of Dirichlet data contribute the
    /// integrand's value at zero; callers pass integrands vanishing at 0).
    pub fn integrate(&self, interior: impl Iterator<Item = f64>) -> f64 {
        let cell = match self.geometry {
            Geometry::Interval => 1.0 / self.m as f64,
            Geometry::Square => 1.0 / (self.m * self.m) as f64,
        };
        interior.sum::<f64>() * cell
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Geometry;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    /// Independent quadrature oracle: composite Simpson on `n` panels.
    fn simpson(f: impl Fn(f64) -> f64, n: usize) -> f64 {
        let h = 1.0 / n as f64;
        let mut acc = f(0.0) + f(1.0);
        for j in 1..n {
            let w = if j % 2 == 0 { 2.0 } else { 4.0 };
            acc += w * f(j as f64 * h);
        }
        acc * h / 3.0
    }

    fn basis_1d(p: u32, n: usize) -> SpectralBasis {
        SpectralBasis::build(Geometry::Interval, p, n).unwrap()
    }

    fn cubic() -> NonlinearitySpec {
        let basis = basis_1d(2, 4);
        NonlinearitySpec::new(
            NonlinearKind::Kirchhoff {
                f: Polynomial::new(vec![0.0, 0.0, 0.0, 1.0]),
            },
            basis.zeros(),
            0.0,
            0.25,
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_is_identity_1d() {
        let basis = basis_1d(1, 6);
        let grid = CollocationGrid::new(&basis).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let w = ModeVector::from_vec((0..6).map(|_| rng.gen_range(-2.0..2.0)).collect());
            let back = grid.to_spectral(&grid.to_physical(&w));
            for i in 0..6 {
                assert!((back[i] - w[i]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn roundtrip_is_identity_2d() {
        let basis = SpectralBasis::build(Geometry::Square, 2, 5).unwrap();
        let grid = CollocationGrid::new(&basis).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let w = ModeVector::from_vec(
                (0..basis.len()).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            );
            let back = grid.to_spectral(&grid.to_physical(&w));
            for i in 0..basis.len() {
                assert!((back[i] - w[i]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn to_physical_matches_direct_summation() {
        // Oracle: evaluate the sine series directly at every node.
        let basis = SpectralBasis::build(Geometry::Square, 1, 3).unwrap();
        let grid = CollocationGrid::new(&basis).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let w =
            ModeVector::from_vec((0..basis.len()).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let vals = grid.to_physical(&w);
        let np = grid.points_per_axis();
        let m = np + 1;
        for j1 in 1..=np {
            for j2 in 1..=np {
                let x = [j1 as f64 / m as f64, j2 as f64 / m as f64];
                let direct = basis.eval_at_point(&w, &x).unwrap();
                let got = vals[(j1 - 1) * np + (j2 - 1)];
                assert!((got - direct).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn kirchhoff_cubic_potential_matches_quadrature_oracle() {
        // u = e_1, f = s^3: Pi_0 = 1/4 int (sqrt2 sin(pi x))^4 dx = 3/8.
        let basis = basis_1d(2, 4);
        let grid = CollocationGrid::new(&basis).unwrap();
        let spec = cubic();
        let mut u = basis.zeros();
        u[0] = 1.0;
        let (pi0, pi1) = spec.potentials(&basis, Some(&grid), &u).unwrap();
        let oracle = simpson(|x| 0.25 * (2f64.sqrt() * (PI * x).sin()).powi(4), 4000);
        assert!(close(pi0, oracle, 1e-10), "pi0 = {pi0}, oracle = {oracle}");
        assert!(close(pi0, 0.375, 1e-12));
        assert!(pi1.abs() <= 1e-14);
    }

    #[test]
    fn kirchhoff_cubic_projection_matches_quadrature_oracle() {
        // u = e_1, f = s^3: F_1 = 3/2, F_3 = -1/2, even modes vanish.
        let basis = basis_1d(2, 4);
        let grid = CollocationGrid::new(&basis).unwrap();
        let spec = cubic();
        let mut u = basis.zeros();
        u[0] = 1.0;
        let f = spec.eval_f(&basis, Some(&grid), &u).unwrap();
        for (k, want) in [(0usize, 1.5), (1, 0.0), (2, -0.5), (3, 0.0)] {
            let oracle = simpson(
                |x| {
                    let e1 = 2f64.sqrt() * (PI * x).sin();
                    let ek = 2f64.sqrt() * ((k + 1) as f64 * PI * x).sin();
                    e1.powi(3) * ek
                },
                4000,
            );
            assert!(close(oracle, want, 1e-10));
            assert!(close(f[k], want, 1e-12), "F_{} = {}, want {}", k + 1, f[k], want);
        }
    }

    #[test]
    fn berger_potential_and_gradient() {
        // 1-D, p = 2, kappa = 1, mu_b = 0, u = e_1: s = lambda_1 = pi^2,
        // Pi_0 = s^2 / 4 = pi^4 / 4 and F_1 = s lambda_1 u_1 = pi^4.
        let basis = basis_1d(2, 3);
        let spec = NonlinearitySpec::new(
            NonlinearKind::Berger {
                kappa: 1.0,
                mu_b: 0.0,
            },
            basis.zeros(),
            0.0,
            0.25,
        )
        .unwrap();
        let mut u = basis.zeros();
        u[0] = 1.0;
        let (pi0, pi1) = spec.potentials(&basis, None, &u).unwrap();
        assert!(close(pi0, PI.powi(4) / 4.0, 1e-13), "pi0 = {pi0}");
        assert_eq!(pi1, 0.0);
        let f = spec.eval_f(&basis, None, &u).unwrap();
        assert!(close(f[0], PI.powi(4), 1e-13), "F_1 = {}", f[0]);
        assert!(f[1].abs() <= 1e-14 && f[2].abs() <= 1e-14);
    }

    #[test]
    fn fstar_scaling() {
        // c_nc = 1, delta_hat = 1/4, 1-D p = 1, u = e_1: F*_1 = pi^(1/2).
        let basis = basis_1d(1, 2);
        let spec = NonlinearitySpec::new(
            NonlinearKind::Berger {
                kappa: 0.0,
                mu_b: 0.0,
            },
            basis.zeros(),
            1.0,
            0.25,
        )
        .unwrap();
        let mut u = basis.zeros();
        u[0] = 1.0;
        let fs = spec.eval_fstar(&basis, &u);
        assert!(close(fs[0], PI.sqrt(), 1e-14), "F*_1 = {}", fs[0]);
        assert_eq!(fs[1], 0.0);
    }

    #[test]
    fn fstar_global_lipschitz_constant() {
        // |F*(u1) - F*(u2)| <= c_nc mu_1^(-delta_hat) |A^(1/2)(u1 - u2)|.
        let basis = basis_1d(2, 5);
        let c_nc = 0.7;
        let dh = 0.25;
        let spec = NonlinearitySpec::new(
            NonlinearKind::Berger {
                kappa: 0.0,
                mu_b: 0.0,
            },
            basis.zeros(),
            c_nc,
            dh,
        )
        .unwrap();
        let bound = c_nc * basis.mu_min().powf(-dh);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let u1 =
                ModeVector::from_vec((0..5).map(|_| rng.gen_range(-3.0..3.0)).collect());
            let u2 =
                ModeVector::from_vec((0..5).map(|_| rng.gen_range(-3.0..3.0)).collect());
            let df = spec.eval_fstar(&basis, &u1).sub(&spec.eval_fstar(&basis, &u2));
            let denom = basis.norm_alpha(&u1.sub(&u2), 0.5);
            assert!(df.norm() <= bound * denom * (1.0 + 1e-12));
        }
    }

    #[test]
    fn gradient_consistency_all_kinds() {
        // Central difference of Pi along w matches (F - F*, w) for 20 random
        // pairs per family; relative error <= 1e-5 at eps = 1e-5.
        let basis = basis_1d(2, 5);
        let grid = CollocationGrid::new(&basis).unwrap();
        let mut load = basis.zeros();
        load[0] = 0.3;
        load[2] = -0.1;
        let specs = vec![
            NonlinearitySpec::new(
                NonlinearKind::Berger {
                    kappa: 2.0,
                    mu_b: 0.7,
                },
                load.clone(),
                0.5,
                0.25,
            )
            .unwrap(),
            NonlinearitySpec::new(
                NonlinearKind::Kirchhoff {
                    f: Polynomial::new(vec![0.0, 0.5, -0.2, 1.5]),
                },
                load.clone(),
                0.3,
                0.5,
            )
            .unwrap(),
            NonlinearitySpec::new(
                NonlinearKind::WavePoly {
                    f: Polynomial::new(vec![0.1, -1.0, 0.0, 2.0]),
                },
                load,
                0.0,
                0.25,
            )
            .unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for spec in &specs {
            for _ in 0..20 {
                let u = ModeVector::from_vec(
                    (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                );
                let w = ModeVector::from_vec(
                    (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                );
                let disc = spec
                    .directional_derivative_check(&basis, Some(&grid), &u, &w, 1e-5)
                    .unwrap();
                assert!(disc <= 1e-5, "gradient mismatch: {disc}");
            }
        }
    }

    #[test]
    fn berger_local_lipschitz_grows_with_radius() {
        // Measured local Lipschitz constant on balls of radius 1, 2, 4 is
        // finite and nondecreasing (cubic growth of the Berger term).
        let basis = basis_1d(2, 4);
        let spec = NonlinearitySpec::new(
            NonlinearKind::Berger {
                kappa: 1.0,
                mu_b: 0.0,
            },
            basis.zeros(),
            0.2,
            0.25,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let pairs: Vec<(ModeVector, ModeVector)> = (0..50)
            .map(|_| {
                let mut a =
                    ModeVector::from_vec((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());
                let mut b =
                    ModeVector::from_vec((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());
                // Normalise into the unit A^(1/2)-ball.
                let na = basis.norm_alpha(&a, 0.5);
                let nb = basis.norm_alpha(&b, 0.5);
                a.scale(rng.gen_range(0.1..1.0) / na);
                b.scale(rng.gen_range(0.1..1.0) / nb);
                (a, b)
            })
            .collect();
        let measured = |radius: f64| -> f64 {
            let mut worst: f64 = 0.0;
            for (a, b) in &pairs {
                let ar = a.scaled(radius);
                let br = b.scaled(radius);
                let df = spec
                    .eval_f(&basis, None, &ar)
                    .unwrap()
                    .sub(&spec.eval_f(&basis, None, &br).unwrap());
                let dn = basis.norm_alpha(&ar.sub(&br), 0.5);
                if dn > 1e-12 {
                    worst = worst.max(df.norm() / dn);
                }
            }
            worst
        };
        let l1 = measured(1.0);
        let l2 = measured(2.0);
        let l4 = measured(4.0);
        assert!(l1.is_finite() && l1 > 0.0);
        assert!(l2 >= l1 && l4 >= l2, "L(R) not monotone: {l1} {l2} {l4}");
    }

    #[test]
    fn berger_subcritical_ratio_bounded_on_balls() {
        // Measured ratio |F(u1)-F(u2)| / |A^(1/2-eta)(u1-u2)| with eta = 1/8
        // stays bounded over the radius-2 ball of the truncation.
        let basis = basis_1d(2, 4);
        let spec = NonlinearitySpec::new(
            NonlinearKind::Berger {
                kappa: 1.0,
                mu_b: 0.0,
            },
            basis.zeros(),
            0.0,
            0.25,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let mut a = ModeVector::from_vec((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let mut b = ModeVector::from_vec((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());
            a.scale(2.0 / basis.norm_alpha(&a, 0.5).max(1e-12));
            b.scale(2.0 / basis.norm_alpha(&b, 0.5).max(1e-12));
            let df = spec
                .eval_f(&basis, None, &a)
                .unwrap()
                .sub(&spec.eval_f(&basis, None, &b).unwrap());
            let dn = basis.norm_alpha(&a.sub(&b), 0.5 - 0.125);
            if dn > 1e-12 {
                worst = worst.max(df.norm() / dn);
            }
        }
        assert!(worst.is_finite() && worst > 0.0);
        // Crude a-priori bound for the truncated operator on the ball:
        // |F(u1)-F(u2)| <= kappa (s1 + sqrt(s1 s2) + lam_max R^2) lam_max^(1/2) |A^(1/2) du|
        // and |A^(1/2) du| <= mu_max^(1/8) |A^(3/8) du| (finitely many modes).
        let lam_max = basis.modes().last().unwrap().lambda;
        let mu_max = basis.modes().last().unwrap().mu;
        let r2 = 4.0;
        let apriori = 3.0 * lam_max * r2 * lam_max.sqrt() * mu_max.powf(0.125);
        assert!(worst <= apriori, "ratio {worst} exceeds a-priori bound {apriori}");
    }

    #[test]
    fn rejects_bad_parameters() {
        let basis = basis_1d(1, 2);
        // Even-degree Kirchhoff polynomial.
        assert!(NonlinearitySpec::new(
            NonlinearKind::Kirchhoff {
                f: Polynomial::new(vec![0.0, 0.0, 1.0])
            },
            basis.zeros(),
            0.0,
            0.25,
        )
        .is_err());
        // Negative leading coefficient.
        assert!(NonlinearitySpec::new(
            NonlinearKind::WavePoly {
                f: Polynomial::new(vec![0.0, 1.0, 0.0, -1.0])
            },
            basis.zeros(),
            0.0,
            0.25,
        )
        .is_err());
        // Degree 5 wave polynomial.
        assert!(NonlinearitySpec::new(
            NonlinearKind::WavePoly {
                f: Polynomial::new(vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0])
            },
            basis.zeros(),
            0.0,
            0.25,
        )
        .is_err());
        // delta_hat outside (0, 1/2].
        assert!(NonlinearitySpec::new(
            NonlinearKind::Berger {
                kappa: 1.0,
                mu_b: 0.0
            },
            basis.zeros(),
            0.0,
            0.6,
        )
        .is_err());
        // Negative kappa.
        assert!(NonlinearitySpec::new(
            NonlinearKind::Berger {
                kappa: -1.0,
                mu_b: 0.0
            },
            basis.zeros(),
            0.0,
            0.25,
        )
        .is_err());
    }

    #[test]
    fn quartic_quadrature_exact_on_square() {
        // Tensor trapezoid with M = 2N+1 integrates |e_(1,1)|^4 exactly:
        // int (2 sin sin)^4 = 16 (3/8)^2 = 9/4.
        let basis = SpectralBasis::build(Geometry::Square, 1, 3).unwrap();
        let grid = CollocationGrid::new(&basis).unwrap();
        let mut u = basis.zeros();
        u[0] = 1.0; // (1,1) is the lowest mode
        let vals = grid.to_physical(&u);
        let got = grid.integrate(vals.iter().map(|v| v.powi(4)));
        assert!(close(got, 2.25, 1e-12), "got {got}");
    }
}
