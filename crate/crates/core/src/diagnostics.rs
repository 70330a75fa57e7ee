//! Verification diagnostics recomputed from completed traces.
//!
//! Everything here *re-derives* delayed quantities from the recorded states
//! (through a rebuilt history segment) rather than trusting per-step
//! bookkeeping, so each check is an independent consistency probe of the
//! dynamics:
//!
//! * [`energy_residual`] — discrete defect of the energy balance
//!   `calE(t) + k int |v|^2 = calE(0) - int (F*(u), v) - int (M(u_s), v)`;
//! * [`lyapunov_series`] — the damped-delay Lyapunov functional
//!   `V = calE + gamma (u, v) + (mu/h) int_0^h int_{t-s}^t |v|^2`;
//! * [`dissipativity_sweep`] — tail radii of `sqrt(2 E)` across damping
//!   and horizon values;
//! * [`quasi_stability_fit`] — exponential contraction rate of trajectory
//!   differences plus the lower-order driver floor;
//! * [`lipschitz_ratio`] — continuity of the flow in the history norm;
//! * [`equation_residual`] — strong-form defect with a centered finite
//!   difference for the acceleration;
//! * [`self_convergence`] — observed order from step-halving runs.

use crate::delay::{self, AnalyticHistory};
use crate::integrator::{Model, StepperConfig, Trace};
use crate::spectral::ModeVector;
use crate::{Error, Result};
use rayon::prelude::*;

/// Ordinary least squares over `(x, y)` pairs.
#[derive(Debug, Clone, Copy)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Coefficient of determination of the fit.
    pub r2: f64,
}

/// Fit `y ~ intercept + slope x`; needs at least two points.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "linear fit needs >= 2 paired points, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::InsufficientData("degenerate abscissae".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LinearFit {
        slope,
        intercept: my - slope * mx,
        r2,
    })
}

/// Result of the energy-balance audit of a trace.
#[derive(Debug, Clone)]
pub struct EnergyLedger {
    pub times: Vec<f64>,
    /// Defect `r(t)`; `r(0) = 0` by construction.
    pub residual: Vec<f64>,
    pub max_abs_residual: f64,
    /// Largest `|calE|` along the trace, for tolerance scaling.
    pub max_cal_energy: f64,
}

/// Audit the energy balance of a completed trace.
///
/// The defect at a node `t_n` is
///
/// ```text
/// r = calE(t_n) - calE(0) + k T[|v|^2] + T[(F*(u), v)] + T[(M(u_s), v)]
/// ```
///
/// with `T` the cumulative trapezoid rule on the step grid; the memory term
/// is re-evaluated from a rebuilt history.  For a consistent run the defect
/// is `O(dt^2)`.
pub fn energy_residual(model: &Model, trace: &Trace) -> Result<EnergyLedger> {
    if trace.len() < 2 {
        return Err(Error::InsufficientData("trace shorter than two nodes".into()));
    }
    let basis = model.basis();
    let hist = trace.rebuild_history(model.delay().horizon());
    let k = model.k_damp();
    let n = trace.len();
    let mut integrand = Vec::with_capacity(n);
    let mut cal = Vec::with_capacity(n);
    for (j, t) in trace.times.iter().enumerate() {
        let state = &trace.states[j];
        let (_, cal_e) = model.energies(state)?;
        cal.push(cal_e);
        let fstar = model.nonlin().eval_fstar(basis, &state.u);
        let (m, _) = delay::eval_m(model.delay(), basis, model.grid(), &hist, *t)?;
        let v2 = state.v.norm().powi(2);
        integrand.push(k * v2 + fstar.dot(&state.v) + m.dot(&state.v));
    }
    let mut residual = Vec::with_capacity(n);
    let mut acc = 0.0;
    let mut max_abs: f64 = 0.0;
    for j in 0..n {
        if j > 0 {
            let dt = trace.times[j] - trace.times[j - 1];
            acc += 0.5 * dt * (integrand[j - 1] + integrand[j]);
        }
        let r = cal[j] - cal[0] + acc;
        max_abs = max_abs.max(r.abs());
        residual.push(r);
    }
    let max_cal = cal.iter().fold(0.0f64, |a, &c| a.max(c.abs()));
    Ok(EnergyLedger {
        times: trace.times.clone(),
        residual,
        max_abs_residual: max_abs,
        max_cal_energy: max_cal,
    })
}

/// Parameters of the Lyapunov functional
/// `V = calE + gamma (u, v) + (mu/h) int_0^h int_{t-s}^t |v(xi)|^2 dxi ds`.
#[derive(Debug, Clone, Copy)]
pub struct LyapunovParams {
    pub gamma: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl LyapunovParams {
    /// Standard choice `gamma = sigma k / (4 + 2 k^2)`, `mu = k / 4`;
    /// requires `sigma in (0, 1)` so that `gamma < 1/2` and `gamma k < 1/2`.
    pub fn new(k_damp: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma must lie in (0, 1), got {sigma}"
            )));
        }
        if !(k_damp > 0.0) {
            return Err(Error::InvalidArgument(
                "Lyapunov parameters need positive damping".into(),
            ));
        }
        let gamma = sigma * k_damp / (4.0 + 2.0 * k_damp * k_damp);
        let mu = k_damp / 4.0;
        debug_assert!(gamma < 0.5 && gamma * k_damp < 0.5);
        Ok(LyapunovParams {
            gamma,
            mu,
            sigma,
        })
    }
}

/// Evaluate the Lyapunov functional along a trace.
///
/// The double memory integral collapses to the weighted single integral
/// `int_{t-h}^t (h - t + xi) |v(xi)|^2 dxi`, accumulated with cumulative
/// trapezoids over the step grid extended into the analytic segment.
pub fn lyapunov_series(model: &Model, trace: &Trace, params: &LyapunovParams) -> Result<Vec<f64>> {
    let h = model.delay().horizon();
    let hist = trace.rebuild_history(h);
    let dt = trace.dt;
    // Uniform grid from -h to the trace end.
    let pre = (h / dt).ceil() as usize;
    let mut grid_t = Vec::with_capacity(pre + trace.len());
    for j in 0..pre {
        grid_t.push(-h + h * j as f64 / pre as f64);
    }
    grid_t.extend(trace.times.iter().cloned());
    let g: Vec<f64> = grid_t
        .iter()
        .map(|&t| Ok(hist.interpolate(t)?.v.norm().powi(2)))
        .collect::<Result<_>>()?;
    // Cumulative trapezoids of g and xi * g.
    let mut c1 = vec![0.0; grid_t.len()];
    let mut c2 = vec![0.0; grid_t.len()];
    for j in 1..grid_t.len() {
        let w = grid_t[j] - grid_t[j - 1];
        c1[j] = c1[j - 1] + 0.5 * w * (g[j - 1] + g[j]);
        c2[j] = c2[j - 1] + 0.5 * w * (grid_t[j - 1] * g[j - 1] + grid_t[j] * g[j]);
    }
    let eval_cum = |c: &[f64], x: f64| -> f64 {
        // Linear interpolation of a cumulative integral at time x.
        match grid_t.binary_search_by(|t| t.partial_cmp(&x).unwrap()) {
            Ok(i) => c[i],
            Err(i) => {
                if i == 0 {
                    c[0]
                } else if i >= grid_t.len() {
                    *c.last().unwrap()
                } else {
                    let th = (x - grid_t[i - 1]) / (grid_t[i] - grid_t[i - 1]);
                    c[i - 1] * (1.0 - th) + c[i] * th
                }
            }
        }
    };
    let mut out = Vec::with_capacity(trace.len());
    for (j, &t) in trace.times.iter().enumerate() {
        let state = &trace.states[j];
        let (_, cal_e) = model.energies(state)?;
        let cross = params.gamma * state.u.dot(&state.v);
        let i1 = eval_cum(&c1, t) - eval_cum(&c1, t - h);
        let i2 = eval_cum(&c2, t) - eval_cum(&c2, t - h);
        let memory = params.mu / h * ((h - t) * i1 + i2);
        out.push(cal_e + cross + memory);
    }
    Ok(out)
}

/// One row of a dissipativity sweep.
#[derive(Debug, Clone)]
pub struct DissipRow {
    pub k_damp: f64,
    pub horizon: f64,
    /// Tail radius `sup sqrt(2 E)` over the final window; infinite when the
    /// run blew up or broke the delay contract.
    pub radius: f64,
    pub completed: bool,
}

/// Tail radius `sup sqrt(2 E(t))` over the trailing `tail_frac` of a trace.
pub fn tail_radius(trace: &Trace, tail_frac: f64) -> f64 {
    if !trace.status.is_completed() {
        return f64::INFINITY;
    }
    let n = trace.len();
    let start = ((1.0 - tail_frac) * n as f64).floor() as usize;
    trace.energy[start.min(n - 1)..]
        .iter()
        .fold(0.0f64, |acc, &e| acc.max((2.0 * e.max(0.0)).sqrt()))
}

/// Sweep damping and horizon values, returning the tail radius of each run.
///
/// `build` assembles the model, initial data and stepper for a given
/// `(k, h)` pair — typically a config override that rescales sample offsets
/// proportionally with the horizon.  Runs execute in parallel; row order
/// follows the input lists, so output is deterministic.
pub fn dissipativity_sweep<F>(
    build: F,
    k_list: &[f64],
    h_list: &[f64],
    tail_frac: f64,
) -> Result<Vec<DissipRow>>
where
    F: Fn(f64, f64) -> Result<(Model, AnalyticHistory, StepperConfig)> + Sync,
{
    if !(tail_frac > 0.0 && tail_frac < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "tail fraction must lie in (0, 1), got {tail_frac}"
        )));
    }
    let pairs: Vec<(f64, f64)> = k_list
        .iter()
        .flat_map(|&k| h_list.iter().map(move |&h| (k, h)))
        .collect();
    pairs
        .par_iter()
        .map(|&(k, h)| {
            let (model, initial, stepper) = build(k, h)?;
            let trace = model.simulate(&initial, &stepper)?;
            Ok(DissipRow {
                k_damp: k,
                horizon: h,
                radius: tail_radius(&trace, tail_frac),
                completed: trace.status.is_completed(),
            })
        })
        .collect()
}

/// Report of a trajectory-pair contraction measurement.
#[derive(Debug, Clone)]
pub struct QuasiStabilityFit {
    /// Squared energy gap `d(t) = |v1-v2|^2 + |A^(1/2)(u1-u2)|^2`.
    pub times: Vec<f64>,
    pub d: Vec<f64>,
    /// Fitted decay rate of `log d` on the initial window (`> 0` means
    /// exponential contraction).
    pub lambda: f64,
    /// Smallest prefactor with `d(t) <= c1 d(0) exp(-lambda t)` on the
    /// fitted window.
    pub c1: f64,
    /// Median of `d` over the trailing quarter (the stall level).
    pub floor: f64,
    /// Largest lower-order driver `|A^(1/2-delta)(u1-u2)|` along the run.
    pub max_driver: f64,
    /// `floor / max_driver^2` (zero when the driver vanishes).
    pub c2: f64,
    /// Fit quality of the log-linear window.
    pub fit_r2: f64,
}

/// Measure the contraction of two trajectories started from `phi1`, `phi2`.
///
/// `delta` is the exponent gap of the driver norm (default 1/4).
pub fn quasi_stability_fit(
    model: &Model,
    stepper: &StepperConfig,
    phi1: &AnalyticHistory,
    phi2: &AnalyticHistory,
    delta: f64,
) -> Result<QuasiStabilityFit> {
    let basis = model.basis();
    let t1 = model.simulate(phi1, stepper)?;
    let t2 = model.simulate(phi2, stepper)?;
    if !t1.status.is_completed() || !t2.status.is_completed() {
        return Err(Error::InsufficientData(
            "pair run did not complete; cannot fit contraction".into(),
        ));
    }
    let n = t1.len().min(t2.len());
    let mut d = Vec::with_capacity(n);
    let mut max_driver: f64 = 0.0;
    for j in 0..n {
        let du = t1.states[j].u.sub(&t2.states[j].u);
        let dv = t1.states[j].v.sub(&t2.states[j].v);
        let e = dv.norm().powi(2) + basis.norm_alpha(&du, 0.5).powi(2);
        d.push(e);
        max_driver = max_driver.max(basis.norm_alpha(&du, 0.5 - delta));
    }
    if d[0] <= 1e-28 {
        return Err(Error::InsufficientData(
            "initial separation is numerically zero".into(),
        ));
    }
    // Stall level: median of the trailing quarter.
    let tail_start = (0.75 * n as f64) as usize;
    let mut tail: Vec<f64> = d[tail_start..].to_vec();
    tail.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let floor = tail[tail.len() / 2];
    // Fit window: from the start until d first dips near the stall level.
    let cut = (30.0 * floor).max(d[0] * 1e-10);
    let mut end = n;
    for (j, &val) in d.iter().enumerate() {
        if j > 0 && val <= cut {
            end = j;
            break;
        }
    }
    if end < 10 {
        end = (n / 2).max(2.min(n));
    }
    let times = &t1.times[..end];
    let logs: Vec<f64> = d[..end].iter().map(|&x| x.max(1e-300).ln()).collect();
    let fit = linear_fit(times, &logs)?;
    let lambda = -fit.slope;
    let mut c1: f64 = 0.0;
    for (j, &t) in times.iter().enumerate() {
        c1 = c1.max(d[j] * (lambda * t).exp() / d[0]);
    }
    let c2 = if max_driver > 0.0 {
        floor / (max_driver * max_driver)
    } else {
        0.0
    };
    Ok(QuasiStabilityFit {
        times: t1.times[..n].to_vec(),
        d,
        lambda,
        c1,
        floor,
        max_driver,
        c2,
        fit_r2: fit.r2,
    })
}

/// Flow-continuity ratios in the history norm.
///
/// For each `eps`, runs the model from `phi + eps psi` and returns
/// `sup_t (|A^(1/2) du(t)| + |dv(t)|) / (eps |psi|_W)`.
pub fn lipschitz_ratio(
    model: &Model,
    stepper: &StepperConfig,
    phi: &AnalyticHistory,
    psi: &AnalyticHistory,
    epsilons: &[f64],
) -> Result<Vec<f64>> {
    let basis = model.basis();
    let h = model.delay().horizon();
    let psi_norm = psi.w_norm(basis, h, 512);
    if psi_norm <= 0.0 {
        return Err(Error::InvalidArgument(
            "perturbation direction has zero history norm".into(),
        ));
    }
    let base = model.simulate(phi, stepper)?;
    if !base.status.is_completed() {
        return Err(Error::InsufficientData("baseline run did not complete".into()));
    }
    let mut out = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "perturbation size must be positive, got {eps}"
            )));
        }
        let pert = model.simulate(&phi.add_scaled(psi, eps), stepper)?;
        if !pert.status.is_completed() {
            return Err(Error::InsufficientData(
                "perturbed run did not complete".into(),
            ));
        }
        let n = base.len().min(pert.len());
        let mut sup: f64 = 0.0;
        for j in 0..n {
            let du = base.states[j].u.sub(&pert.states[j].u);
            let dv = base.states[j].v.sub(&pert.states[j].v);
            sup = sup.max(basis.norm_alpha(&du, 0.5) + dv.norm());
        }
        out.push(sup / (eps * psi_norm));
    }
    Ok(out)
}

/// Strong-form defect at a trace node:
/// `| u''_fd + k v + A u + F(u) + M(u_t) |` with the acceleration from a
/// centered difference of the recorded velocities.
///
/// Requires `t >= h + 2 dt` (past the initial regularisation layer) and an
/// interior node; the defect of a consistent run is `O(dt^2)`.
pub fn equation_residual(model: &Model, trace: &Trace, t: f64) -> Result<f64> {
    let dt = trace.dt;
    let h = model.delay().horizon();
    if t < h + 2.0 * dt - 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "residual time {t} is before the smoothing layer h + 2 dt = {}",
            h + 2.0 * dt
        )));
    }
    let j = (t / dt).round() as usize;
    if j == 0 || j + 1 >= trace.len() {
        return Err(Error::InsufficientData(format!(
            "residual time {t} has no interior centered stencil"
        )));
    }
    if (trace.times[j] - t).abs() > 1e-9 * (1.0 + t.abs()) {
        return Err(Error::InvalidArgument(format!(
            "residual time {t} does not lie on the trace grid"
        )));
    }
    let basis = model.basis();
    let hist = trace.rebuild_history(h);
    let state = &trace.states[j];
    let mut acc = ModeVector::zeros(basis.len());
    // u''_fd = (v(t+dt) - v(t-dt)) / (2 dt).
    for i in 0..basis.len() {
        acc[i] = (trace.states[j + 1].v[i] - trace.states[j - 1].v[i]) / (2.0 * dt);
    }
    acc.axpy(model.k_damp(), &state.v);
    for (i, m) in basis.modes().iter().enumerate() {
        acc[i] += m.mu * state.u[i];
    }
    let f = model.nonlin().eval_f(basis, model.grid(), &state.u)?;
    acc.axpy(1.0, &f);
    let (mem, _) = delay::eval_m(model.delay(), basis, model.grid(), &hist, trace.times[j])?;
    acc.axpy(1.0, &mem);
    Ok(acc.norm())
}

/// Observed convergence orders from successive step-halving runs.
///
/// `dts` must halve strictly (`dts[i+1] = dts[i] / 2`); runs are compared on
/// the coarser grid in the energy norm, and `orders[i] =
/// log2(err_i / err_(i+1))`.  Errors are measured against the next-finer
/// run, so `orders` has `len(dts) - 2` entries.
pub fn self_convergence(
    model: &Model,
    initial: &AnalyticHistory,
    t_end: f64,
    dts: &[f64],
) -> Result<Vec<f64>> {
    if dts.len() < 3 {
        return Err(Error::InsufficientData(
            "self-convergence needs at least three step sizes".into(),
        ));
    }
    for w in dts.windows(2) {
        if (w[0] / w[1] - 2.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(
                "step sizes must halve between runs".into(),
            ));
        }
    }
    let traces: Vec<Trace> = dts
        .iter()
        .map(|&dt| {
            let trace = model.simulate(initial, &StepperConfig::new(dt, t_end))?;
            if !trace.status.is_completed() {
                return Err(Error::InsufficientData(format!(
                    "run at dt = {dt} did not complete"
                )));
            }
            Ok(trace)
        })
        .collect::<Result<_>>()?;
    let basis = model.basis();
    let mut errs = Vec::with_capacity(dts.len() - 1);
    for w in traces.windows(2) {
        let coarse = &w[0];
        let fine = &w[1];
        let mut sup: f64 = 0.0;
        for (j, state) in coarse.states.iter().enumerate() {
            let fj = 2 * j;
            if fj >= fine.len() {
                break;
            }
            sup = sup.max(state.energy_distance(&fine.states[fj], basis));
        }
        errs.push(sup);
    }
    let mut orders = Vec::with_capacity(errs.len() - 1);
    for w in errs.windows(2) {
        if w[1] == 0.0 {
            return Err(Error::InsufficientData(
                "refinement error vanished; order undefined".into(),
            ));
        }
        orders.push((w[0] / w[1]).log2());
    }
    Ok(orders)
}
