//! Rightmost characteristic roots of the scalar constant-delay test
//! equation `u'' + k u' + a u + u(t - tau) = 0`.
//!
//! The characteristic function is `Delta(lambda) = lambda^2 + k lambda + a +
//! exp(-lambda tau)`.  Roots are located by Chebyshev collocation of the
//! first-order form on `[-tau, 0]` (eigenvalues of the discretized
//! generator seed a Newton iteration on `Delta`), with the discretization
//! size doubled until the rightmost real part is reproducible.  On top of
//! that sit a stability scan over a lag grid, a bisection for the first
//! stability switch, and a time-domain cross-check that embeds the scalar
//! equation into the simulator through a one-mode diagonal basis.

use crate::delay::{AnalyticHistory, DelayLaw, DelaySpec, DelayTerm, ModeHistory, ResponseMap};
use crate::diagnostics::linear_fit;
use crate::integrator::{Model, StepperConfig};
use crate::nonlin::NonlinearitySpec;
use crate::spectral::SpectralBasis;
use crate::{Error, Result};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

/// Newton acceptance threshold on `|Delta(lambda)|`.
const ROOT_RESIDUAL_TOL: f64 = 1e-10;
/// Reproducibility threshold on `Re lambda` under doubling of the
/// collocation size.
const DOUBLING_TOL: f64 = 1e-8;
/// Largest collocation size tried before giving up.
const MAX_COLLOCATION: usize = 512;
/// Number of top eigenvalues used as Newton seeds.
const SEED_COUNT: usize = 8;

/// The scalar delay equation `u'' + k u' + a u + u(t - tau) = 0`.
#[derive(Debug, Clone, Copy)]
pub struct ScalarDde {
    pub k: f64,
    pub a: f64,
    pub tau: f64,
}

impl ScalarDde {
    pub fn new(k: f64, a: f64, tau: f64) -> Result<Self> {
        if !(k >= 0.0) || !k.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "damping k must be finite and >= 0, got {k}"
            )));
        }
        if !a.is_finite() {
            return Err(Error::InvalidArgument(format!("stiffness a must be finite, got {a}")));
        }
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lag tau must be finite and >= 0, got {tau}"
            )));
        }
        Ok(ScalarDde { k, a, tau })
    }
}

/// An accepted rightmost root.
#[derive(Debug, Clone, Copy)]
pub struct RootReport {
    /// Rightmost root, normalised to `Im >= 0`.
    pub lambda: Complex64,
    /// `|Delta(lambda)|` at the accepted root.
    pub residual: f64,
    /// Collocation size that confirmed the root (0 for the `tau = 0`
    /// quadratic).
    pub collocation_size: usize,
}

/// `Delta(lambda) = lambda^2 + k lambda + a + exp(-lambda tau)`.
pub fn char_residual(dde: &ScalarDde, lambda: Complex64) -> Complex64 {
    lambda * lambda + dde.k * lambda + dde.a + (-lambda * dde.tau).exp()
}

/// `Delta'(lambda) = 2 lambda + k - tau exp(-lambda tau)`.
fn char_derivative(dde: &ScalarDde, lambda: Complex64) -> Complex64 {
    2.0 * lambda + dde.k - dde.tau * (-lambda * dde.tau).exp()
}

/// Newton refinement of a seed; `None` when it fails to reach tolerance.
fn newton_refine(dde: &ScalarDde, seed: Complex64) -> Option<Complex64> {
    let mut lambda = seed;
    for _ in 0..50 {
        let f = char_residual(dde, lambda);
        if f.norm() <= ROOT_RESIDUAL_TOL {
            return Some(lambda);
        }
        let df = char_derivative(dde, lambda);
        if df.norm() < 1e-300 {
            return None;
        }
        let step = f / df;
        lambda -= step;
        if !lambda.re.is_finite() || !lambda.im.is_finite() {
            return None;
        }
    }
    if char_residual(dde, lambda).norm() <= ROOT_RESIDUAL_TOL {
        Some(lambda)
    } else {
        None
    }
}

/// Chebyshev differentiation matrix on the extreme points
/// `x_j = cos(j pi / m)`, `j = 0..=m` (descending from 1 to -1).
fn chebyshev_diff(m: usize) -> DMatrix<f64> {
    let n = m + 1;
    let x: Vec<f64> = (0..n)
        .map(|j| (std::f64::consts::PI * j as f64 / m as f64).cos())
        .collect();
    let c = |i: usize| -> f64 {
        let base = if i == 0 || i == m { 2.0 } else { 1.0 };
        base * if i % 2 == 0 { 1.0 } else { -1.0 }
    };
    let mut d = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let mut row_sum = 0.0;
        for j in 0..n {
            if i != j {
                let val = c(i) / c(j) / (x[i] - x[j]);
                d[(i, j)] = val;
                row_sum += val;
            }
        }
        d[(i, i)] = -row_sum;
    }
    d
}

/// Eigenvalues of the collocated generator, sorted by descending real part.
fn collocation_eigenvalues(dde: &ScalarDde, m: usize) -> Vec<Complex64> {
    // First-order form x' = A0 x(t) + A1 x(t - tau) with
    // A0 = [[0, 1], [-a, -k]], A1 = [[0, 0], [-1, 0]].
    // Nodes theta_j = tau (x_j - 1) / 2 run from theta_0 = 0 down to
    // theta_m = -tau; row block 0 imposes the differential equation at the
    // head, the rest collocate the transport d/d theta.
    let d = chebyshev_diff(m);
    let scale = 2.0 / dde.tau;
    let n = 2 * (m + 1);
    let mut g = DMatrix::<f64>::zeros(n, n);
    g[(0, 1)] = 1.0;
    g[(1, 0)] = -dde.a;
    g[(1, 1)] = -dde.k;
    g[(1, 2 * m)] = -1.0;
    for j in 1..=m {
        for l in 0..=m {
            let v = scale * d[(j, l)];
            g[(2 * j, 2 * l)] = v;
            g[(2 * j + 1, 2 * l + 1)] = v;
        }
    }
    let mut eigs: Vec<Complex64> = g.complex_eigenvalues().iter().cloned().collect();
    eigs.sort_by(|p, q| q.re.partial_cmp(&p.re).unwrap());
    eigs
}

/// Rightmost Newton-confirmed root at one collocation size.
fn rightmost_at(dde: &ScalarDde, m: usize) -> Option<Complex64> {
    let eigs = collocation_eigenvalues(dde, m);
    let mut best: Option<Complex64> = None;
    for seed in eigs.into_iter().take(SEED_COUNT) {
        if let Some(root) = newton_refine(dde, seed) {
            if best.map_or(true, |b| root.re > b.re + 1e-13) {
                best = Some(root);
            }
        }
    }
    best.map(|r| Complex64::new(r.re, r.im.abs()))
}

/// Rightmost characteristic root, confirmed by doubling the collocation
/// size until `Re lambda` is reproducible.
///
/// `m` is the starting collocation size (`>= 16`).  `tau = 0` reduces to
/// the quadratic `lambda^2 + k lambda + (a + 1)` and bypasses collocation.
pub fn rightmost_root(dde: &ScalarDde, m: usize) -> Result<RootReport> {
    if dde.tau == 0.0 {
        // lambda = (-k +/- sqrt(k^2 - 4 (a + 1))) / 2; rightmost branch.
        let disc = Complex64::new(dde.k * dde.k - 4.0 * (dde.a + 1.0), 0.0).sqrt();
        let r1 = (-dde.k + disc.re) / 2.0;
        let lambda = if disc.im == 0.0 {
            Complex64::new(r1, 0.0)
        } else {
            Complex64::new(-dde.k / 2.0, disc.im.abs() / 2.0)
        };
        return Ok(RootReport {
            lambda,
            residual: char_residual(dde, lambda).norm(),
            collocation_size: 0,
        });
    }
    if m < 16 {
        return Err(Error::InvalidArgument(format!(
            "collocation size must be >= 16, got {m}"
        )));
    }
    let mut size = m;
    let mut prev = rightmost_at(dde, size);
    while 2 * size <= MAX_COLLOCATION {
        let next_size = 2 * size;
        let next = rightmost_at(dde, next_size);
        if let (Some(p), Some(q)) = (prev, next) {
            if (p.re - q.re).abs() < DOUBLING_TOL {
                return Ok(RootReport {
                    lambda: q,
                    residual: char_residual(dde, q).norm(),
                    collocation_size: next_size,
                });
            }
        }
        prev = next;
        size = next_size;
    }
    Err(Error::NoConvergence(format!(
        "rightmost root not reproducible up to collocation size {MAX_COLLOCATION} \
         for k = {}, a = {}, tau = {} (last seed {:?})",
        dde.k, dde.a, dde.tau, prev
    )))
}

/// One row of a stability scan.
#[derive(Debug, Clone, Copy)]
pub struct ScanRow {
    pub tau: f64,
    pub re_lambda: f64,
    pub im_lambda: f64,
}

/// Rightmost real part along a sorted lag grid (parallel, deterministic
/// order).
pub fn stability_scan(k: f64, a: f64, tau_grid: &[f64]) -> Result<Vec<ScanRow>> {
    if tau_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("lag grid must be sorted ascending".into()));
    }
    tau_grid
        .par_iter()
        .map(|&tau| {
            let report = rightmost_root(&ScalarDde::new(k, a, tau)?, 32)?;
            Ok(ScanRow {
                tau,
                re_lambda: report.lambda.re,
                im_lambda: report.lambda.im,
            })
        })
        .collect()
}

/// Outcome of the first-switch search.
#[derive(Debug, Clone, Copy)]
pub enum TauStar {
    /// First loss of stability at `tau_star`, crossing frequency `omega`,
    /// with `|Delta(i omega)| = residual` at the switch.
    Switch {
        tau_star: f64,
        omega: f64,
        residual: f64,
    },
    /// No sign change on the scanned range; the largest rightmost real
    /// part seen is attached.
    NoSwitch { max_re_seen: f64 },
}

/// Locate the first stability switch on `[0, tau_max]`.
///
/// A coarse scan (single collocation size, Newton-confirmed roots)
/// brackets the first sign change of the rightmost real part; bisection
/// with fully doubling-confirmed roots narrows it to `1e-8`, and a final
/// two-dimensional Newton polish on `Delta(i omega) = 0` (unknowns
/// `omega`, `tau`) pins the crossing to roundoff.
pub fn find_tau_star(k: f64, a: f64, tau_max: f64) -> Result<TauStar> {
    if !(tau_max > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tau_max must be positive, got {tau_max}"
        )));
    }
    let panels = ((tau_max / 0.1).ceil() as usize).clamp(100, 1000);
    let grid: Vec<f64> = (0..=panels)
        .map(|j| tau_max * j as f64 / panels as f64)
        .collect();
    let rows: Vec<(f64, f64)> = grid
        .par_iter()
        .map(|&tau| {
            let dde = ScalarDde::new(k, a, tau)?;
            let re = if tau == 0.0 {
                rightmost_root(&dde, 32)?.lambda.re
            } else {
                rightmost_at(&dde, 48)
                    .ok_or_else(|| {
                        Error::NoConvergence(format!("screening failed at tau = {tau}"))
                    })?
                    .re
            };
            Ok((tau, re))
        })
        .collect::<Result<_>>()?;
    let mut bracket = None;
    let mut max_re = f64::NEG_INFINITY;
    for w in rows.windows(2) {
        max_re = max_re.max(w[0].1).max(w[1].1);
        if bracket.is_none() && w[0].1 < 0.0 && w[1].1 >= 0.0 {
            bracket = Some((w[0].0, w[1].0));
        }
    }
    let (mut lo, mut hi) = match bracket {
        Some(b) => b,
        None => return Ok(TauStar::NoSwitch { max_re_seen: max_re }),
    };
    let mut omega_guess = 0.0;
    while hi - lo > 1e-8 {
        let mid = 0.5 * (lo + hi);
        let report = rightmost_root(&ScalarDde::new(k, a, mid)?, 32)?;
        if report.lambda.re < 0.0 {
            lo = mid;
        } else {
            hi = mid;
            omega_guess = report.lambda.im;
        }
    }
    if omega_guess == 0.0 {
        omega_guess = rightmost_root(&ScalarDde::new(k, a, hi)?, 32)?.lambda.im;
    }
    // Polish (omega, tau) on the imaginary axis:
    // Re Delta = a - omega^2 + cos(omega tau) = 0,
    // Im Delta = k omega - sin(omega tau) = 0.
    let mut omega = omega_guess;
    let mut tau = 0.5 * (lo + hi);
    for _ in 0..50 {
        let (s, c) = (omega * tau).sin_cos();
        let f1 = a - omega * omega + c;
        let f2 = k * omega - s;
        if f1.hypot(f2) <= 1e-13 {
            break;
        }
        let j11 = -2.0 * omega - tau * s; // d f1 / d omega
        let j12 = -omega * s; // d f1 / d tau
        let j21 = k - tau * c; // d f2 / d omega
        let j22 = -omega * c; // d f2 / d tau
        let det = j11 * j22 - j12 * j21;
        if det.abs() < 1e-300 {
            break;
        }
        omega -= (f1 * j22 - f2 * j12) / det;
        tau -= (j11 * f2 - j21 * f1) / det;
    }
    let dde = ScalarDde::new(k, a, tau)?;
    let residual = char_residual(&dde, Complex64::new(0.0, omega)).norm();
    if residual > 1e-8 || !(tau >= lo - 1e-6 && tau <= hi + 1e-6) {
        return Err(Error::NoConvergence(format!(
            "imaginary-axis polish failed near tau in [{lo}, {hi}]: residual {residual}"
        )));
    }
    Ok(TauStar::Switch {
        tau_star: tau,
        omega,
        residual,
    })
}

/// Sign agreement between the rightmost root and a time-domain run.
#[derive(Debug, Clone, Copy)]
pub struct CrossValidation {
    pub dde: ScalarDde,
    pub re_lambda: f64,
    /// Growth rate fitted to `log E(t)` over the trailing window, halved
    /// (energy is quadratic in the state).
    pub measured_rate: f64,
    pub agrees: bool,
}

/// Simulate the scalar equation through the spectral machinery (one-mode
/// diagonal basis with eigenvalue `a`, unit linear delayed response,
/// constant lag) and compare the observed growth sign with the rightmost
/// root.
///
/// Requires `a > 0` (the basis eigenvalue) and is only meaningful away
/// from marginality; callers should keep `|Re lambda|` bounded away from
/// zero for a sign test.
pub fn cross_validate(dde: &ScalarDde, t_end: f64) -> Result<CrossValidation> {
    if !(dde.a > 0.0) {
        return Err(Error::InvalidArgument(
            "time-domain embedding needs a > 0 (basis eigenvalue)".into(),
        ));
    }
    let report = rightmost_root(dde, 32)?;
    let basis = SpectralBasis::custom(&[dde.a])?;
    let nonlin = NonlinearitySpec::zero(&basis);
    let horizon = dde.tau.max(0.01);
    let delay = DelaySpec::new(
        horizon,
        vec![DelayTerm {
            response: ResponseMap::Linear { a: 1.0 },
            law: DelayLaw::Constant { tau0: dde.tau },
            q: None,
        }],
    )?;
    let model = Model::new(basis, nonlin, delay, dde.k)?;
    let initial = AnalyticHistory {
        modes: vec![ModeHistory {
            a: 1.0,
            b: 0.0,
            sines: vec![(0.5, 2.0)],
        }],
    };
    let trace = model.simulate(&initial, &StepperConfig::new(2e-3, t_end))?;
    if !trace.status.is_completed() {
        return Err(Error::InsufficientData(
            "time-domain cross-check run did not complete".into(),
        ));
    }
    let start = trace.times.iter().position(|&t| t >= 0.2 * t_end).unwrap();
    let times = &trace.times[start..];
    let logs: Vec<f64> = trace.energy[start..]
        .iter()
        .map(|&e| e.max(1e-300).ln())
        .collect();
    let fit = linear_fit(times, &logs)?;
    let measured_rate = 0.5 * fit.slope;
    let agrees = (measured_rate > 0.0) == (report.lambda.re > 0.0);
    Ok(CrossValidation {
        dde: *dde,
        re_lambda: report.lambda.re,
        measured_rate,
        agrees,
    })
}
