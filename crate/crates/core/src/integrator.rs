//! Exponential time stepping (ETD2RK) for the first-order system
//!
//! ```text
//!   d/dt (u_k, v_k) = B_k (u_k, v_k) + (0, n_k(t)),
//!   B_k = [[0, 1], [-mu_k, -k_damp]],   n_k = -F_k(u(t)) - M_k(u_t),
//! ```
//!
//! where the stiff linear part is integrated *exactly* through the matrix
//! exponential `E = exp(B dt)` and the nonlinear/delay forcing enters via
//! the phi-matrices `Phi1 = B^-1 (E - I)` and `Phi2 = B^-2 (E - I - B dt)`:
//!
//! ```text
//!   predictor  Utilde = E U + Phi1 n(t)
//!   corrector  U+     = Utilde + Phi2/dt (n(t+dt) - n(t))
//! ```
//!
//! State-dependent lags falling inside the current step are resolved by
//! temporarily extending the history with the predictor node (one
//! functional iteration), so vanishing delays `tau < dt` are safe.
//!
//! Propagator entries are evaluated per damping regime — underdamped,
//! overdamped, and a critically damped window `|k^2 - 4 mu| <= 1e-8
//! max(k^2, 4 mu)` handled by the confluent limit formula — to avoid
//! cancellation near `k^2 = 4 mu`.

use crate::delay::{self, AnalyticHistory, DelaySpec, HistorySegment};
use crate::nonlin::{CollocationGrid, NonlinearitySpec};
use crate::spectral::{ModeVector, PhasePoint, SpectralBasis};
use crate::{Error, Result};
use num_complex::Complex64;

/// Relative width of the critically damped window around `k^2 = 4 mu`.
const CRITICAL_WINDOW: f64 = 1e-8;

/// Norm threshold beyond which a trajectory is declared blown up.
const BLOWUP_NORM: f64 = 1e120;

/// Exact one-step propagator of a single damped oscillator mode.
#[derive(Debug, Clone, Copy)]
pub struct ModePropagator {
    /// `exp(B dt)`.
    pub e: [[f64; 2]; 2],
    /// `B^-1 (exp(B dt) - I)`.
    pub phi1: [[f64; 2]; 2],
    /// `B^-2 (exp(B dt) - I - B dt)`.
    pub phi2: [[f64; 2]; 2],
}

/// Scalar phi functions, Taylor-expanded near zero to avoid cancellation.
fn cexp(z: Complex64) -> Complex64 {
    z.exp()
}

fn cphi1(z: Complex64) -> Complex64 {
    if z.norm() < 0.25 {
        // sum_{n>=0} z^n / (n+1)!
        let mut term = Complex64::new(1.0, 0.0);
        let mut acc = term;
        for n in 1..25 {
            term = term * z / (n as f64 + 1.0);
            acc += term;
        }
        acc
    } else {
        (z.exp() - 1.0) / z
    }
}

fn cphi2(z: Complex64) -> Complex64 {
    if z.norm() < 0.25 {
        // sum_{n>=0} z^n / (n+2)!
        let mut term = Complex64::new(0.5, 0.0);
        let mut acc = term;
        for n in 1..25 {
            term = term * z / (n as f64 + 2.0);
            acc += term;
        }
        acc
    } else {
        (z.exp() - 1.0 - z) / (z * z)
    }
}

/// Derivatives of the phi functions, needed by the confluent formula.
fn dexp(z: f64) -> f64 {
    z.exp()
}

fn dphi1(z: f64) -> f64 {
    if z.abs() < 0.25 {
        // sum_{m>=0} (m+1) z^m / (m+2)!
        let mut acc = 0.0;
        let mut pow = 1.0;
        let mut fact = 2.0; // (m+2)!, starting at 2! for m = 0
        for m in 0..25 {
            if m > 0 {
                pow *= z;
                fact *= (m + 2) as f64;
            }
            acc += (m as f64 + 1.0) * pow / fact;
        }
        acc
    } else {
        (z.exp() * (z - 1.0) + 1.0) / (z * z)
    }
}

fn dphi2(z: f64) -> f64 {
    if z.abs() < 0.25 {
        // sum_{m>=0} (m+1) z^m / (m+3)!
        let mut acc = 0.0;
        let mut pow = 1.0;
        let mut fact = 6.0; // (m+3)! starting at 3! for m = 0
        for m in 0..25 {
            if m > 0 {
                pow *= z;
                fact *= (m + 3) as f64;
            }
            acc += (m as f64 + 1.0) * pow / fact;
        }
        acc
    } else {
        (z.exp() * (z - 2.0) + z + 2.0) / (z * z * z)
    }
}

/// Evaluate an analytic function of the scaled mode matrix `Z = B dt`.
///
/// With distinct eigenvalues `z1, z2` (real or conjugate):
/// `f(Z) = [f(z1)(Z - z2 I) - f(z2)(Z - z1 I)] / (z1 - z2)`;
/// inside the critical window the confluent limit
/// `f(Z) = f(z) I + f'(z)(Z - z I)` with `z = -k dt / 2` is used.
fn mode_matrix_fn(
    mu: f64,
    k: f64,
    dt: f64,
    f: impl Fn(Complex64) -> Complex64,
    df: impl Fn(f64) -> f64,
) -> [[f64; 2]; 2] {
    let z_mat = [[0.0, dt], [-mu * dt, -k * dt]];
    let disc = k * k - 4.0 * mu;
    if disc.abs() <= CRITICAL_WINDOW * (k * k).max(4.0 * mu) {
        // Confluent (critically damped) branch.
        let z = -k * dt / 2.0;
        let fz = f(Complex64::new(z, 0.0)).re;
        let dfz = df(z);
        let mut out = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let zij = z_mat[i][j] - if i == j { z } else { 0.0 };
                out[i][j] = dfz * zij + if i == j { fz } else { 0.0 };
            }
        }
        out
    } else {
        let sq = Complex64::new(disc, 0.0).sqrt();
        let z1 = (Complex64::new(-k, 0.0) + sq) * 0.5 * dt;
        let z2 = (Complex64::new(-k, 0.0) - sq) * 0.5 * dt;
        let f1 = f(z1);
        let f2 = f(z2);
        let denom = z1 - z2;
        let mut out = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let zij = Complex64::new(z_mat[i][j], 0.0);
                let diag = if i == j { 1.0 } else { 0.0 };
                let val = (f1 * (zij - z2 * diag) - f2 * (zij - z1 * diag)) / denom;
                out[i][j] = val.re;
            }
        }
        out
    }
}

/// Build the exact propagator of one mode for a step of size `dt`.
///
/// Requires `mu > 0`, `k_damp >= 0`, `dt > 0`.
pub fn mode_propagator(mu: f64, k_damp: f64, dt: f64) -> ModePropagator {
    assert!(mu > 0.0, "mode stiffness must be positive");
    assert!(k_damp >= 0.0, "damping must be nonnegative");
    assert!(dt > 0.0, "step size must be positive");
    let e = mode_matrix_fn(mu, k_damp, dt, cexp, dexp);
    // Phi1 = dt phi1(Z), Phi2 = dt^2 phi2(Z).
    let p1 = mode_matrix_fn(mu, k_damp, dt, cphi1, dphi1);
    let p2 = mode_matrix_fn(mu, k_damp, dt, cphi2, dphi2);
    let scale = |m: [[f64; 2]; 2], s: f64| {
        [[m[0][0] * s, m[0][1] * s], [m[1][0] * s, m[1][1] * s]]
    };
    ModePropagator {
        e,
        phi1: scale(p1, dt),
        phi2: scale(p2, dt * dt),
    }
}

/// Time-stepping parameters.
#[derive(Debug, Clone)]
pub struct StepperConfig {
    /// Fixed step size.
    pub dt: f64,
    /// Final time; the number of steps is `round(t_end / dt)`.
    pub t_end: f64,
    /// Emission stride for file artifacts (the in-memory trace always holds
    /// every step so diagnostics can integrate at full resolution).
    pub stride: usize,
}

impl StepperConfig {
    pub fn new(dt: f64, t_end: f64) -> Self {
        StepperConfig {
            dt,
            t_end,
            stride: 1,
        }
    }
}

/// Why a run stopped.
#[derive(Debug, Clone, PartialEq)]
pub enum SimStatus {
    Completed,
    /// State norm exceeded `1e120` or became non-finite at time `t`.
    BlowUp { t: f64 },
    /// A delay law left `[0, h]` at time `t` (term index attached).
    ContractViolation { t: f64, term: usize },
}

impl SimStatus {
    pub fn is_completed(&self) -> bool {
        matches!(self, SimStatus::Completed)
    }
}

/// Complete record of one run: states, lags and energies at every step.
#[derive(Debug, Clone)]
pub struct Trace {
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<PhasePoint>,
    /// Per entry: the lag of each delay term.
    pub taus: Vec<Vec<f64>>,
    /// `E = (|v|^2 + |A^(1/2) u|^2) / 2 + Pi_0`.
    pub energy: Vec<f64>,
    /// `calE = E + Pi_1`.
    pub cal_energy: Vec<f64>,
    /// `|M(u_t)|`.
    pub norm_m: Vec<f64>,
    pub status: SimStatus,
    /// Initial data, kept so diagnostics can rebuild the history.
    pub initial: AnalyticHistory,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Untrimmed history over the whole run (analytic segment + every node),
    /// for diagnostics that re-evaluate delayed quantities.
    pub fn rebuild_history(&self, horizon: f64) -> HistorySegment {
        HistorySegment::from_nodes(
            self.initial.clone(),
            horizon,
            self.times.iter().cloned().zip(self.states.iter().cloned()),
        )
    }
}

/// The assembled model: spatial basis, nonlinearity, delay structure and
/// viscous damping `k_damp > 0` (`>= 0` accepted for conservative probes).
#[derive(Debug, Clone)]
pub struct Model {
    basis: SpectralBasis,
    grid: Option<CollocationGrid>,
    nonlin: NonlinearitySpec,
    delay: DelaySpec,
    k_damp: f64,
}

impl Model {
    pub fn new(
        basis: SpectralBasis,
        nonlin: NonlinearitySpec,
        delay: DelaySpec,
        k_damp: f64,
    ) -> Result<Self> {
        if !(k_damp >= 0.0) || !k_damp.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "damping k must be finite and >= 0, got {k_damp}"
            )));
        }
        let grid = if basis.geometry().is_some() {
            Some(CollocationGrid::new(&basis)?)
        } else {
            None
        };
        if grid.is_none() && nonlin.needs_grid() {
            return Err(Error::NoGeometry(
                "pointwise nonlinearity on a geometry-free basis".into(),
            ));
        }
        Ok(Model {
            basis,
            grid,
            nonlin,
            delay,
            k_damp,
        })
    }

    pub fn basis(&self) -> &SpectralBasis {
        &self.basis
    }

    pub fn grid(&self) -> Option<&CollocationGrid> {
        self.grid.as_ref()
    }

    pub fn nonlin(&self) -> &NonlinearitySpec {
        &self.nonlin
    }

    pub fn delay(&self) -> &DelaySpec {
        &self.delay
    }

    pub fn k_damp(&self) -> f64 {
        self.k_damp
    }

    /// Forcing of the first-order form at time `t`:
    /// `n = -F(u(t)) - M(u_t)` (the velocity-slot right-hand side), plus the
    /// per-term lags realised at `t`.
    pub fn nonlinear_rhs(
        &self,
        hist: &HistorySegment,
        t: f64,
    ) -> Result<(ModeVector, Vec<f64>)> {
        let u_now = hist.interpolate(t)?.u;
        let f = self.nonlin.eval_f(&self.basis, self.grid.as_ref(), &u_now)?;
        let (m, taus) = delay::eval_m(&self.delay, &self.basis, self.grid.as_ref(), hist, t)?;
        let mut n = f;
        n.axpy(1.0, &m);
        n.scale(-1.0);
        Ok((n, taus))
    }

    /// Energies `(E, calE)` of a state.
    pub fn energies(&self, p: &PhasePoint) -> Result<(f64, f64)> {
        let (pi0, pi1) = self
            .nonlin
            .potentials(&self.basis, self.grid.as_ref(), &p.u)?;
        let half = 0.5 * (p.v.norm().powi(2) + self.basis.norm_alpha(&p.u, 0.5).powi(2));
        Ok((half + pi0, half + pi0 + pi1))
    }

    /// Integrate from the analytic initial history up to `t_end`.
    ///
    /// Numerical failure (blow-up, delay-contract breach) is reported in
    /// the trace status; `Err` is reserved for structural misuse.
    pub fn simulate(&self, initial: &AnalyticHistory, cfg: &StepperConfig) -> Result<Trace> {
        if !(cfg.dt > 0.0) || !cfg.dt.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "step size must be positive, got {}",
                cfg.dt
            )));
        }
        if cfg.t_end < cfg.dt {
            return Err(Error::InvalidArgument(
                "final time must be at least one step".into(),
            ));
        }
        if initial.len() != self.basis.len() {
            return Err(Error::InvalidArgument(format!(
                "initial history has {} modes, basis has {}",
                initial.len(),
                self.basis.len()
            )));
        }
        let h = self.delay.horizon();
        if !self.delay.all_constant() && cfg.dt > h / 4.0 + 1e-15 {
            return Err(Error::InvalidArgument(format!(
                "state-dependent delay requires dt <= h/4 = {}, got dt = {}",
                h / 4.0,
                cfg.dt
            )));
        }

        let n_modes = self.basis.len();
        let dt = cfg.dt;
        let steps = (cfg.t_end / dt).round() as usize;
        let props: Vec<ModePropagator> = self
            .basis
            .modes()
            .iter()
            .map(|m| mode_propagator(m.mu, self.k_damp, dt))
            .collect();

        let mut hist = HistorySegment::new(initial.clone(), h, true);
        let mut trace = Trace {
            dt,
            times: Vec::with_capacity(steps + 1),
            states: Vec::with_capacity(steps + 1),
            taus: Vec::with_capacity(steps + 1),
            energy: Vec::with_capacity(steps + 1),
            cal_energy: Vec::with_capacity(steps + 1),
            norm_m: Vec::with_capacity(steps + 1),
            status: SimStatus::Completed,
            initial: initial.clone(),
        };

        // Forcing at the current node, reused as n(t) of the next step.
        let mut pending = match self.nonlinear_rhs(&hist, 0.0) {
            Ok(p) => p,
            Err(e) => {
                trace.status = classify_failure(e, 0.0)?;
                return Ok(trace);
            }
        };
        self.record(&mut trace, &hist, 0.0, &pending.1)?;

        for j in 0..steps {
            let t_next = (j + 1) as f64 * dt;
            let (n0, _) = &pending;
            let u_now = hist.latest_state().clone();

            // Predictor: exact linear flow plus Phi1-weighted forcing.
            let mut pred = PhasePoint::zeros(n_modes);
            for i in 0..n_modes {
                let p = &props[i];
                pred.u[i] = p.e[0][0] * u_now.u[i] + p.e[0][1] * u_now.v[i] + p.phi1[0][1] * n0[i];
                pred.v[i] = p.e[1][0] * u_now.u[i] + p.e[1][1] * u_now.v[i] + p.phi1[1][1] * n0[i];
            }
            hist.push(t_next, pred.clone());

            // Corrector: re-evaluate the forcing on the extended history.
            let n1 = match self.nonlinear_rhs(&hist, t_next) {
                Ok((n1, _)) => n1,
                Err(e) => {
                    trace.status = classify_failure(e, t_next)?;
                    return Ok(trace);
                }
            };
            let mut cur = pred;
            for i in 0..n_modes {
                let p = &props[i];
                let dn = n1[i] - n0[i];
                cur.u[i] += p.phi2[0][1] / dt * dn;
                cur.v[i] += p.phi2[1][1] / dt * dn;
            }
            if !cur.is_finite()
                || cur.u.norm() > BLOWUP_NORM
                || cur.v.norm() > BLOWUP_NORM
            {
                trace.status = SimStatus::BlowUp { t: t_next };
                return Ok(trace);
            }
            hist.replace_last(cur);

            // Forcing at the accepted node (next step's n(t)); its lags and
            // memory norm are what the trace records.
            pending = match self.nonlinear_rhs(&hist, t_next) {
                Ok(p) => p,
                Err(e) => {
                    trace.status = classify_failure(e, t_next)?;
                    return Ok(trace);
                }
            };
            self.record(&mut trace, &hist, t_next, &pending.1)?;
        }
        Ok(trace)
    }

    fn record(
        &self,
        trace: &mut Trace,
        hist: &HistorySegment,
        t: f64,
        taus: &[f64],
    ) -> Result<()> {
        let state = hist.latest_state().clone();
        let (e, cal) = self.energies(&state)?;
        let (m, _) = delay::eval_m(&self.delay, &self.basis, self.grid.as_ref(), hist, t)?;
        trace.times.push(t);
        trace.states.push(state);
        trace.taus.push(taus.to_vec());
        trace.energy.push(e);
        trace.cal_energy.push(cal);
        trace.norm_m.push(m.norm());
        Ok(())
    }
}

/// Map numerical failures to a trace status; structural errors stay errors.
fn classify_failure(e: Error, t: f64) -> Result<SimStatus> {
    match e {
        Error::NonFinite(_) => Ok(SimStatus::BlowUp { t }),
        Error::DelayContract { term, .. } => Ok(SimStatus::ContractViolation { t, term }),
        other => Err(other),
    }
}
