//! Solution history segments and the state-dependent delay term
//! `M(u_t) = sum_i G_i(u(t - tau_i(u_t)))`.
//!
//! Each delay term composes three pieces:
//!
//! * a scalar functional `Q[u_t]` of the recent history (point samples
//!   `sum c_i u(t - sigma_i)(a_i)` or averages `sum c_i (u(t - sigma_i), xi_i)`),
//! * a delay law `tau = g(Q)` mapping into `[0, h]` (constant, sigmoid
//!   `h (1 + tanh q) / 2`, or rational `h q^2 / (1 + q^2)`),
//! * a response map `G` applied to the delayed displacement (`a u` in
//!   coefficients, or `a tanh(u(x))` pseudospectrally).
//!
//! Laws are *not* clamped: a lag outside `[0, h]` is a contract violation
//! and surfaces as a hard error.
//!
//! A [`HistorySegment`] joins an analytic initial segment on `[-h, 0]`
//! (per-mode `a + b theta + sum c sin(d theta)`, differentiated
//! symbolically) with discrete integrator nodes.  Displacements are
//! interpolated by cubic Hermite polynomials using the stored velocities as
//! slopes — so the reconstruction is C^1 in time — and velocities linearly.

use crate::nonlin::CollocationGrid;
use crate::spectral::{ModeVector, PhasePoint, SpectralBasis};
use crate::{Error, Result};
use std::collections::VecDeque;

/// Relative slack applied to history domain checks, to absorb roundoff in
/// time arithmetic.
const TIME_SLACK: f64 = 1e-9;

/// Response map `G` applied to the delayed displacement.
#[derive(Debug, Clone)]
pub enum ResponseMap {
    /// `G(u) = a u` (diagonal in coefficients).
    Linear { a: f64 },
    /// `G(u)(x) = a tanh(u(x))`, evaluated pseudospectrally.
    Tanh { a: f64 },
}

impl ResponseMap {
    /// Global Lipschitz constant `L_G = |a|` (|tanh'| <= 1).
    pub fn lipschitz(&self) -> f64 {
        match self {
            ResponseMap::Linear { a } | ResponseMap::Tanh { a } => a.abs(),
        }
    }

    /// `|G(0)|` — zero for both supported maps, kept explicit so the bound
    /// constants below follow the general formula.
    pub fn norm_at_zero(&self) -> f64 {
        0.0
    }
}

/// Delay law `tau = g(q)`, mapping the real line into `[0, h]`.
#[derive(Debug, Clone)]
pub enum DelayLaw {
    /// Fixed lag `tau0` (must satisfy `0 <= tau0 <= h`).
    Constant { tau0: f64 },
    /// `g(q) = h (1 + tanh q) / 2`.
    Sigmoid,
    /// `g(q) = h q^2 / (1 + q^2)`; vanishes as `q -> 0`.
    Rational,
}

impl DelayLaw {
    pub fn eval(&self, q: f64, horizon: f64) -> f64 {
        match self {
            DelayLaw::Constant { tau0 } => *tau0,
            DelayLaw::Sigmoid => horizon * (1.0 + q.tanh()) / 2.0,
            DelayLaw::Rational => horizon * q * q / (1.0 + q * q),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, DelayLaw::Constant { .. })
    }
}

/// One point sample `c * u(t - sigma)(x)` of the history.
#[derive(Debug, Clone)]
pub struct PointSample {
    pub c: f64,
    pub sigma: f64,
    pub x: Vec<f64>,
}

/// One averaged sample `c * (u(t - sigma), xi)`.
#[derive(Debug, Clone)]
pub struct AverageSample {
    pub c: f64,
    pub sigma: f64,
    pub xi: ModeVector,
}

/// Scalar functional `Q[u_t]` feeding the delay law.
#[derive(Debug, Clone)]
pub enum QFunctional {
    PointSamples(Vec<PointSample>),
    Averages(Vec<AverageSample>),
}

/// One delay term `G(u(t - g(Q[u_t])))`.
#[derive(Debug, Clone)]
pub struct DelayTerm {
    pub response: ResponseMap,
    pub law: DelayLaw,
    /// Required unless the law is constant.
    pub q: Option<QFunctional>,
}

/// Complete delay specification: horizon `h` and the term list.
#[derive(Debug, Clone)]
pub struct DelaySpec {
    horizon: f64,
    terms: Vec<DelayTerm>,
}

impl DelaySpec {
    pub fn new(horizon: f64, terms: Vec<DelayTerm>) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "delay horizon must be positive and finite, got {horizon}"
            )));
        }
        for (i, term) in terms.iter().enumerate() {
            match &term.law {
                DelayLaw::Constant { tau0 } => {
                    if !(*tau0 >= 0.0 && *tau0 <= horizon) {
                        return Err(Error::InvalidArgument(format!(
                            "term {i}: constant lag {tau0} outside [0, {horizon}]"
                        )));
                    }
                }
                _ => {
                    if term.q.is_none() {
                        return Err(Error::InvalidArgument(format!(
                            "term {i}: state-dependent law needs a Q functional"
                        )));
                    }
                }
            }
            if let Some(q) = &term.q {
                let sigmas: Vec<f64> = match q {
                    QFunctional::PointSamples(s) => s.iter().map(|p| p.sigma).collect(),
                    QFunctional::Averages(s) => s.iter().map(|p| p.sigma).collect(),
                };
                for s in sigmas {
                    if !(s >= 0.0 && s <= horizon) {
                        return Err(Error::InvalidArgument(format!(
                            "term {i}: sample offset {s} outside [0, {horizon}]"
                        )));
                    }
                }
            }
        }
        Ok(DelaySpec { horizon, terms })
    }

    /// A delay-free specification (M = 0) with the given horizon.
    pub fn none(horizon: f64) -> Self {
        DelaySpec {
            horizon,
            terms: Vec::new(),
        }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn terms(&self) -> &[DelayTerm] {
        &self.terms
    }

    /// Whether every term uses a constant lag (fixed-delay dynamics).
    pub fn all_constant(&self) -> bool {
        self.terms.iter().all(|t| t.law.is_constant())
    }
}

/// Constants of the a-priori memory bound
/// `|M(u_t)|^2 <= g0 + g1 |u(t)|^2 + g2 int_{t-h}^t |u'(s)|^2 ds`,
/// with `g0 = 4 |G(0)|^2`, `g1 = 4 L_G^2`, `g2 = 2 L_G^2 h`, summed over
/// terms.
#[derive(Debug, Clone, Copy)]
pub struct DelayBoundConstants {
    pub g0: f64,
    pub g1: f64,
    pub g2: f64,
}

impl DelayBoundConstants {
    pub fn from_spec(spec: &DelaySpec) -> Self {
        let mut g0 = 0.0;
        let mut g1 = 0.0;
        let mut g2 = 0.0;
        for term in &spec.terms {
            let l = term.response.lipschitz();
            let z = term.response.norm_at_zero();
            g0 += 4.0 * z * z;
            g1 += 4.0 * l * l;
            g2 += 2.0 * l * l * spec.horizon;
        }
        DelayBoundConstants { g0, g1, g2 }
    }
}

/// Analytic description of one mode over the initial interval:
/// `u(theta) = a + b theta + sum_j c_j sin(d_j theta)`.
#[derive(Debug, Clone, Default)]
pub struct ModeHistory {
    pub a: f64,
    pub b: f64,
    /// Pairs `(c_j, d_j)`.
    pub sines: Vec<(f64, f64)>,
}

impl ModeHistory {
    pub fn u(&self, theta: f64) -> f64 {
        let mut acc = self.a + self.b * theta;
        for &(c, d) in &self.sines {
            acc += c * (d * theta).sin();
        }
        acc
    }

    /// Symbolic derivative `u'(theta) = b + sum c_j d_j cos(d_j theta)`.
    pub fn v(&self, theta: f64) -> f64 {
        let mut acc = self.b;
        for &(c, d) in &self.sines {
            acc += c * d * (d * theta).cos();
        }
        acc
    }
}

/// Analytic initial history over `theta in [-h, 0]`, one entry per mode.
#[derive(Debug, Clone)]
pub struct AnalyticHistory {
    pub modes: Vec<ModeHistory>,
}

impl AnalyticHistory {
    pub fn zero(n_modes: usize) -> Self {
        AnalyticHistory {
            modes: vec![ModeHistory::default(); n_modes],
        }
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Displacement and (symbolic) velocity at offset `theta <= 0`.
    pub fn eval(&self, theta: f64) -> PhasePoint {
        let n = self.modes.len();
        let mut p = PhasePoint::zeros(n);
        for (i, m) in self.modes.iter().enumerate() {
            p.u[i] = m.u(theta);
            p.v[i] = m.v(theta);
        }
        p
    }

    /// `self + s * other`, concatenating sine families mode by mode.
    pub fn add_scaled(&self, other: &AnalyticHistory, s: f64) -> AnalyticHistory {
        assert_eq!(self.modes.len(), other.modes.len());
        let modes = self
            .modes
            .iter()
            .zip(&other.modes)
            .map(|(m, o)| {
                let mut sines = m.sines.clone();
                sines.extend(o.sines.iter().map(|&(c, d)| (s * c, d)));
                ModeHistory {
                    a: m.a + s * o.a,
                    b: m.b + s * o.b,
                    sines,
                }
            })
            .collect();
        AnalyticHistory { modes }
    }

    pub fn scaled(&self, s: f64) -> AnalyticHistory {
        let modes = self
            .modes
            .iter()
            .map(|m| ModeHistory {
                a: s * m.a,
                b: s * m.b,
                sines: m.sines.iter().map(|&(c, d)| (s * c, d)).collect(),
            })
            .collect();
        AnalyticHistory { modes }
    }

    /// Random smooth history: per mode `a + b theta + c sin(d theta)` with
    /// coefficients drawn uniformly from `[-amp, amp]` and frequencies from
    /// `[0.5, 6]`.  Deterministic given the generator state.
    pub fn random(n_modes: usize, amp: f64, rng: &mut impl rand::Rng) -> Self {
        let modes = (0..n_modes)
            .map(|_| ModeHistory {
                a: rng.gen_range(-amp..=amp),
                b: rng.gen_range(-amp..=amp),
                sines: vec![(rng.gen_range(-amp..=amp), rng.gen_range(0.5..=6.0))],
            })
            .collect();
        AnalyticHistory { modes }
    }

    /// Phase-space norm `max |A^(1/2) u(theta)| + max |u'(theta)|` over a
    /// dense grid of `samples >= 2` offsets in `[-h, 0]`.
    pub fn w_norm(&self, basis: &SpectralBasis, horizon: f64, samples: usize) -> f64 {
        let n = samples.max(2);
        let mut max_u: f64 = 0.0;
        let mut max_v: f64 = 0.0;
        for j in 0..n {
            let theta = -horizon + horizon * j as f64 / (n - 1) as f64;
            let p = self.eval(theta);
            max_u = max_u.max(basis.norm_alpha(&p.u, 0.5));
            max_v = max_v.max(p.v.norm());
        }
        max_u + max_v
    }
}

/// Solution history: the analytic initial segment plus integrator nodes at
/// `t >= 0`, strictly increasing in time.
///
/// With `trim` enabled (the integrator's mode) nodes older than
/// `newest - horizon` are dropped once a younger node still covers the
/// window, bounding memory; diagnostics rebuild untrimmed segments from
/// traces.
#[derive(Debug, Clone)]
pub struct HistorySegment {
    analytic: AnalyticHistory,
    horizon: f64,
    nodes: VecDeque<(f64, PhasePoint)>,
    trim: bool,
}

impl HistorySegment {
    /// Start a history at `t = 0` from its analytic initial segment.  The
    /// node at `t = 0` is seeded from the segment itself.
    pub fn new(analytic: AnalyticHistory, horizon: f64, trim: bool) -> Self {
        let first = analytic.eval(0.0);
        let mut nodes = VecDeque::new();
        nodes.push_back((0.0, first));
        HistorySegment {
            analytic,
            horizon,
            nodes,
            trim,
        }
    }

    /// Rebuild an untrimmed history from recorded `(t, state)` pairs
    /// (e.g. a completed trace) plus the analytic initial segment.
    pub fn from_nodes(
        analytic: AnalyticHistory,
        horizon: f64,
        nodes: impl IntoIterator<Item = (f64, PhasePoint)>,
    ) -> Self {
        HistorySegment {
            analytic,
            horizon,
            nodes: nodes.into_iter().collect(),
            trim: false,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Newest covered time.
    pub fn t_now(&self) -> f64 {
        self.nodes.back().map(|(t, _)| *t).unwrap_or(0.0)
    }

    /// Oldest time reachable through interpolation.
    pub fn earliest(&self) -> f64 {
        let node_floor = self.nodes.front().map(|(t, _)| *t).unwrap_or(0.0);
        if node_floor <= 0.0 {
            -self.horizon
        } else {
            node_floor
        }
    }

    /// State at the newest node.
    pub fn latest_state(&self) -> &PhasePoint {
        &self.nodes.back().expect("history has at least one node").1
    }

    /// Append a node; times must strictly increase.
    pub fn push(&mut self, t: f64, p: PhasePoint) {
        debug_assert!(
            t > self.t_now(),
            "history nodes must strictly increase in time"
        );
        self.nodes.push_back((t, p));
        if self.trim {
            let cutoff = t - self.horizon;
            while self.nodes.len() > 2 && self.nodes[1].0 <= cutoff {
                self.nodes.pop_front();
            }
        }
    }

    /// Replace the newest node (corrector overwriting the predictor).
    pub fn replace_last(&mut self, p: PhasePoint) {
        let back = self.nodes.back_mut().expect("history has at least one node");
        back.1 = p;
    }

    /// Interpolated state at `t`.
    ///
    /// `t <= 0` evaluates the analytic segment exactly; on `t >= 0`
    /// displacements use cubic Hermite with stored velocities as slopes and
    /// velocities interpolate linearly.
    pub fn interpolate(&self, t: f64) -> Result<PhasePoint> {
        let slack = TIME_SLACK * (1.0 + t.abs());
        let earliest = self.earliest();
        if t < earliest - slack {
            return Err(Error::HistoryUnderflow {
                requested: t,
                earliest,
            });
        }
        let newest = self.t_now();
        if t > newest + slack {
            return Err(Error::HistoryOverrun {
                requested: t,
                latest: newest,
            });
        }
        let first_node_t = self.nodes.front().map(|(s, _)| *s).unwrap_or(0.0);
        if first_node_t <= 0.0 && t <= first_node_t {
            // Analytic segment; only live while the node list still begins
            // at the seed node (trimmed histories never land here).
            let theta = t.clamp(-self.horizon, 0.0);
            return Ok(self.analytic.eval(theta));
        }
        // Clamp roundoff-level excursions onto the node range.
        let t = t.clamp(first_node_t, newest);
        // Locate the bracketing node pair by binary search on time.
        let idx = match self
            .nodes
            .binary_search_by(|(s, _)| s.partial_cmp(&t).unwrap())
        {
            Ok(i) => return Ok(self.nodes[i].1.clone()),
            Err(i) => i,
        };
        let (t0, p0) = &self.nodes[idx - 1];
        let (t1, p1) = &self.nodes[idx];
        let dt = t1 - t0;
        let th = (t - t0) / dt;
        let h00 = (1.0 + 2.0 * th) * (1.0 - th) * (1.0 - th);
        let h10 = th * (1.0 - th) * (1.0 - th);
        let h01 = th * th * (3.0 - 2.0 * th);
        let h11 = th * th * (th - 1.0);
        let n = p0.u.len();
        let mut out = PhasePoint::zeros(n);
        for i in 0..n {
            out.u[i] = h00 * p0.u[i] + h10 * dt * p0.v[i] + h01 * p1.u[i] + h11 * dt * p1.v[i];
            out.v[i] = (1.0 - th) * p0.v[i] + th * p1.v[i];
        }
        Ok(out)
    }

    /// Node count currently held (bounded when trimming).
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

/// Evaluate the scalar functional `Q[u_t]` of one term at time `t`.
pub fn eval_q(
    q: &QFunctional,
    basis: &SpectralBasis,
    hist: &HistorySegment,
    t: f64,
) -> Result<f64> {
    let mut acc = 0.0;
    match q {
        QFunctional::PointSamples(samples) => {
            for s in samples {
                let p = hist.interpolate(t - s.sigma)?;
                acc += s.c * basis.eval_at_point(&p.u, &s.x)?;
            }
        }
        QFunctional::Averages(samples) => {
            for s in samples {
                let p = hist.interpolate(t - s.sigma)?;
                acc += s.c * p.u.dot(&s.xi);
            }
        }
    }
    Ok(acc)
}

/// Evaluate the lag `tau = g(Q[u_t])` of term `term_idx`, enforcing the
/// `[0, h]` contract (no clamping).
pub fn eval_tau(
    spec: &DelaySpec,
    term_idx: usize,
    basis: &SpectralBasis,
    hist: &HistorySegment,
    t: f64,
) -> Result<f64> {
    let term = &spec.terms[term_idx];
    let q = match (&term.law, &term.q) {
        (DelayLaw::Constant { .. }, _) => 0.0,
        (_, Some(q)) => eval_q(q, basis, hist, t)?,
        (_, None) => {
            return Err(Error::InvalidArgument(format!(
                "term {term_idx}: missing Q functional"
            )))
        }
    };
    let tau = term.law.eval(q, spec.horizon);
    if !(tau >= 0.0 && tau <= spec.horizon) {
        return Err(Error::DelayContract {
            term: term_idx,
            tau,
            horizon: spec.horizon,
        });
    }
    Ok(tau)
}

/// Evaluate the memory term `M(u_t)` and the per-term lags at time `t`.
///
/// `grid` is required only when a term uses the `Tanh` response.
pub fn eval_m(
    spec: &DelaySpec,
    basis: &SpectralBasis,
    grid: Option<&CollocationGrid>,
    hist: &HistorySegment,
    t: f64,
) -> Result<(ModeVector, Vec<f64>)> {
    let mut out = ModeVector::zeros(basis.len());
    let mut taus = Vec::with_capacity(spec.terms.len());
    for (i, term) in spec.terms.iter().enumerate() {
        let tau = eval_tau(spec, i, basis, hist, t)?;
        taus.push(tau);
        let delayed = hist.interpolate(t - tau)?;
        match &term.response {
            ResponseMap::Linear { a } => out.axpy(*a, &delayed.u),
            ResponseMap::Tanh { a } => {
                let grid = grid.ok_or_else(|| {
                    Error::NoGeometry("Tanh response needs a collocation grid".into())
                })?;
                let mut vals = grid.to_physical(&delayed.u);
                for v in &mut vals {
                    *v = a * v.tanh();
                }
                out.axpy(1.0, &grid.to_spectral(&vals));
            }
        }
    }
    if !out.is_finite() {
        return Err(Error::NonFinite("memory term evaluation".into()));
    }
    Ok((out, taus))
}

/// Phase-space norm of the segment ending at `t`:
/// `max_theta |A^(1/2) u(t + theta)| + max_theta |v(t + theta)|`,
/// maxima over at least 200 offsets plus every stored node in the window.
pub fn w_norm(hist: &HistorySegment, basis: &SpectralBasis, t: f64) -> Result<f64> {
    let h = hist.horizon();
    let n = 200;
    let mut times: Vec<f64> = (0..=n).map(|j| t - h + h * j as f64 / n as f64).collect();
    for j in 0..hist.node_count() {
        // Include exact node times inside the window.
        let (tj, _) = hist.nodes[j];
        if tj > t - h && tj < t {
            times.push(tj);
        }
    }
    let mut max_u: f64 = 0.0;
    let mut max_v: f64 = 0.0;
    for s in times {
        let p = hist.interpolate(s)?;
        max_u = max_u.max(basis.norm_alpha(&p.u, 0.5));
        max_v = max_v.max(p.v.norm());
    }
    Ok(max_u + max_v)
}

/// Verify the a-priori bound `|M|^2 <= g0 + g1 |u(t)|^2 + g2 int |v|^2`
/// at time `t`; returns `(lhs, rhs)`.  The velocity integral over
/// `[t - h, t]` uses a 400-panel trapezoid rule on the interpolated history.
pub fn delay_bound_check(
    spec: &DelaySpec,
    basis: &SpectralBasis,
    grid: Option<&CollocationGrid>,
    hist: &HistorySegment,
    t: f64,
) -> Result<(f64, f64)> {
    let (m, _) = eval_m(spec, basis, grid, hist, t)?;
    let lhs = m.norm().powi(2);
    let consts = DelayBoundConstants::from_spec(spec);
    let u_now = hist.interpolate(t)?.u;
    let h = spec.horizon();
    let panels = 400;
    let mut integral = 0.0;
    let mut prev = hist.interpolate(t - h)?.v.norm().powi(2);
    for j in 1..=panels {
        let s = t - h + h * j as f64 / panels as f64;
        let cur = hist.interpolate(s)?.v.norm().powi(2);
        integral += 0.5 * (prev + cur) * h / panels as f64;
        prev = cur;
    }
    let rhs = consts.g0 + consts.g1 * u_now.norm().powi(2) + consts.g2 * integral;
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Geometry;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn basis_1d(p: u32, n: usize) -> SpectralBasis {
        SpectralBasis::build(Geometry::Interval, p, n).unwrap()
    }

    /// History whose single mode follows u(t) = t, v = 1 for t >= 0.
    fn ramp_history(t_end: f64, dt: f64) -> HistorySegment {
        let analytic = AnalyticHistory {
            modes: vec![ModeHistory {
                a: 0.0,
                b: 1.0,
                sines: vec![],
            }],
        };
        let mut hist = HistorySegment::new(analytic, 1.0, false);
        let steps = (t_end / dt).round() as usize;
        for j in 1..=steps {
            let t = j as f64 * dt;
            let mut p = PhasePoint::zeros(1);
            p.u[0] = t;
            p.v[0] = 1.0;
            hist.push(t, p);
        }
        hist
    }

    #[test]
    fn hermite_matches_analytic_sine() {
        // Nodes sampled from u = sin t, v = cos t at spacing 0.01; Hermite
        // error at midpoints is far below 1e-8 (O(dt^4)).
        let analytic = AnalyticHistory {
            modes: vec![ModeHistory {
                a: 0.0,
                b: 0.0,
                sines: vec![(1.0, 1.0)],
            }],
        };
        let mut hist = HistorySegment::new(analytic, 0.5, false);
        let dt = 0.01;
        for j in 1..=200 {
            let t = j as f64 * dt;
            let mut p = PhasePoint::zeros(1);
            p.u[0] = t.sin();
            p.v[0] = t.cos();
            hist.push(t, p);
        }
        for j in 0..200 {
            let t = (j as f64 + 0.5) * dt;
            let p = hist.interpolate(t).unwrap();
            assert!((p.u[0] - t.sin()).abs() <= 1e-8, "u error at t={t}");
            // Linear velocity interpolation is O(dt^2).
            assert!((p.v[0] - t.cos()).abs() <= 2e-5, "v error at t={t}");
        }
    }

    #[test]
    fn analytic_segment_is_exact() {
        let analytic = AnalyticHistory {
            modes: vec![ModeHistory {
                a: 0.3,
                b: -0.2,
                sines: vec![(0.5, 3.0)],
            }],
        };
        let hist = HistorySegment::new(analytic.clone(), 0.8, false);
        for theta in [-0.8, -0.5, -0.123456, 0.0] {
            let p = hist.interpolate(theta).unwrap();
            let want_u = 0.3 - 0.2 * theta + 0.5 * (3.0 * theta).sin();
            let want_v = -0.2 + 0.5 * 3.0 * (3.0 * theta).cos();
            assert!((p.u[0] - want_u).abs() <= 1e-15);
            assert!((p.v[0] - want_v).abs() <= 1e-15);
        }
    }

    #[test]
    fn underflow_and_overrun_are_errors() {
        let hist = ramp_history(1.0, 0.1);
        assert!(matches!(
            hist.interpolate(-1.01),
            Err(Error::HistoryUnderflow { .. })
        ));
        assert!(matches!(
            hist.interpolate(1.5),
            Err(Error::HistoryOverrun { .. })
        ));
    }

    #[test]
    fn trimming_bounds_node_count_and_keeps_window() {
        let analytic = AnalyticHistory::zero(1);
        let mut hist = HistorySegment::new(analytic, 0.2, true);
        let dt = 0.01;
        for j in 1..=5000 {
            let t = j as f64 * dt;
            let mut p = PhasePoint::zeros(1);
            p.u[0] = (2.0 * t).sin();
            p.v[0] = 2.0 * (2.0 * t).cos();
            hist.push(t, p);
        }
        assert!(hist.node_count() < 40, "nodes = {}", hist.node_count());
        let t = hist.t_now();
        // Whole delay window stays reachable.
        for j in 0..=20 {
            let s = t - 0.2 * j as f64 / 20.0;
            hist.interpolate(s).unwrap();
        }
    }

    #[test]
    fn q_average_example() {
        // u(t) = t e_1, averages {(1, 0.3, e_1)}: Q at t = 1 is 0.7.
        let basis = basis_1d(1, 1);
        let hist = ramp_history(2.0, 0.05);
        let mut xi = basis.zeros();
        xi[0] = 1.0;
        let q = QFunctional::Averages(vec![AverageSample {
            c: 1.0,
            sigma: 0.3,
            xi,
        }]);
        let got = eval_q(&q, &basis, &hist, 1.0).unwrap();
        assert!((got - 0.7).abs() <= 1e-12, "Q = {got}");
    }

    #[test]
    fn q_point_sample_example() {
        // u(t) = t e_1 sampled at x = 1/4: Q(t=1) = 0.7 sqrt2 sin(pi/4) = 0.7.
        let basis = basis_1d(1, 1);
        let hist = ramp_history(2.0, 0.05);
        let q = QFunctional::PointSamples(vec![PointSample {
            c: 1.0,
            sigma: 0.3,
            x: vec![0.25],
        }]);
        let got = eval_q(&q, &basis, &hist, 1.0).unwrap();
        let want = 0.7 * 2f64.sqrt() * (PI / 4.0).sin();
        assert!((got - want).abs() <= 1e-12);
    }

    #[test]
    fn delay_law_fixed_points() {
        assert_eq!(DelayLaw::Sigmoid.eval(0.0, 0.4), 0.2);
        assert_eq!(DelayLaw::Rational.eval(1.0, 0.4), 0.2);
        assert_eq!(DelayLaw::Constant { tau0: 0.15 }.eval(123.0, 0.4), 0.15);
        // Saturation limits.
        assert!((DelayLaw::Sigmoid.eval(40.0, 1.0) - 1.0).abs() < 1e-12);
        assert!(DelayLaw::Sigmoid.eval(-40.0, 1.0) < 1e-12);
        assert!(DelayLaw::Rational.eval(0.0, 1.0) == 0.0);
    }

    #[test]
    fn eval_m_linear_constant_example() {
        // u(t) = t e_1, Linear{1}, constant lag 0.5, t = 2: M = 1.5 e_1.
        let basis = basis_1d(1, 1);
        let spec = DelaySpec::new(
            1.0,
            vec![DelayTerm {
                response: ResponseMap::Linear { a: 1.0 },
                law: DelayLaw::Constant { tau0: 0.5 },
                q: None,
            }],
        )
        .unwrap();
        let hist = ramp_history(2.0, 0.05);
        let (m, taus) = eval_m(&spec, &basis, None, &hist, 2.0).unwrap();
        assert_eq!(taus, vec![0.5]);
        assert!((m[0] - 1.5).abs() <= 1e-12);
    }

    #[test]
    fn tanh_response_small_amplitude_expansion() {
        // For small fields tanh(u) = u - u^3/3 + O(u^5); compare against the
        // linear + cubic projection computed in coefficients.
        let basis = basis_1d(1, 4);
        let grid = CollocationGrid::new(&basis).unwrap();
        let amp = 0.01;
        let analytic = AnalyticHistory {
            modes: vec![
                ModeHistory {
                    a: amp,
                    b: 0.0,
                    sines: vec![],
                },
                ModeHistory {
                    a: -0.5 * amp,
                    b: 0.0,
                    sines: vec![],
                },
                ModeHistory::default(),
                ModeHistory::default(),
            ],
        };
        let hist = HistorySegment::new(analytic, 0.5, false);
        let spec = DelaySpec::new(
            0.5,
            vec![DelayTerm {
                response: ResponseMap::Tanh { a: 2.0 },
                law: DelayLaw::Constant { tau0: 0.0 },
                q: None,
            }],
        )
        .unwrap();
        let (m, _) = eval_m(&spec, &basis, Some(&grid), &hist, 0.0).unwrap();
        let u = hist.interpolate(0.0).unwrap().u;
        let vals = grid.to_physical(&u);
        let cubic: Vec<f64> = vals.iter().map(|v| 2.0 * (v - v * v * v / 3.0)).collect();
        let approx = grid.to_spectral(&cubic);
        for i in 0..basis.len() {
            assert!(
                (m[i] - approx[i]).abs() <= 1e-9,
                "mode {i}: {} vs {}",
                m[i],
                approx[i]
            );
        }
    }

    #[test]
    fn w_norm_constant_history() {
        // Constant e_1 history with zero velocity, p = 1: |.|_W = pi.
        let basis = basis_1d(1, 3);
        let analytic = AnalyticHistory {
            modes: vec![
                ModeHistory {
                    a: 1.0,
                    b: 0.0,
                    sines: vec![],
                },
                ModeHistory::default(),
                ModeHistory::default(),
            ],
        };
        let hist = HistorySegment::new(analytic, 0.3, false);
        let got = w_norm(&hist, &basis, 0.0).unwrap();
        assert!((got - PI).abs() <= 1e-12, "w_norm = {got}");
    }

    #[test]
    fn w_norm_homogeneous() {
        let basis = basis_1d(2, 3);
        let ah = AnalyticHistory {
            modes: vec![
                ModeHistory {
                    a: 0.2,
                    b: -0.1,
                    sines: vec![(0.3, 2.0)],
                },
                ModeHistory {
                    a: -0.05,
                    b: 0.0,
                    sines: vec![(0.1, 5.0)],
                },
                ModeHistory::default(),
            ],
        };
        let n1 = ah.w_norm(&basis, 0.4, 512);
        let n3 = ah.scaled(3.0).w_norm(&basis, 0.4, 512);
        assert!((n3 - 3.0 * n1).abs() <= 1e-12 * (1.0 + n3));
    }

    #[test]
    fn memory_bound_holds_on_random_histories() {
        // 100 random smooth histories, both response kinds: lhs <= rhs.
        let basis = basis_1d(1, 4);
        let grid = CollocationGrid::new(&basis).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..100 {
            let modes = (0..4)
                .map(|_| ModeHistory {
                    a: rng.gen_range(-1.0..1.0),
                    b: rng.gen_range(-1.0..1.0),
                    sines: vec![(rng.gen_range(-1.0..1.0), rng.gen_range(0.5..6.0))],
                })
                .collect();
            let hist = HistorySegment::new(AnalyticHistory { modes }, 0.5, false);
            let response = if trial % 2 == 0 {
                ResponseMap::Linear {
                    a: rng.gen_range(-2.0..2.0),
                }
            } else {
                ResponseMap::Tanh {
                    a: rng.gen_range(-2.0..2.0),
                }
            };
            let spec = DelaySpec::new(
                0.5,
                vec![DelayTerm {
                    response,
                    law: DelayLaw::Sigmoid,
                    q: Some(QFunctional::PointSamples(vec![PointSample {
                        c: 1.0,
                        sigma: rng.gen_range(0.0..0.5),
                        x: vec![rng.gen_range(0.1..0.9)],
                    }])),
                }],
            )
            .unwrap();
            let (lhs, rhs) = delay_bound_check(&spec, &basis, Some(&grid), &hist, 0.0).unwrap();
            assert!(
                lhs <= rhs * (1.0 + 1e-9),
                "trial {trial}: lhs = {lhs} > rhs = {rhs}"
            );
        }
    }

    #[test]
    fn constant_law_outside_horizon_rejected() {
        let term = DelayTerm {
            response: ResponseMap::Linear { a: 1.0 },
            law: DelayLaw::Constant { tau0: 0.6 },
            q: None,
        };
        assert!(DelaySpec::new(0.5, vec![term]).is_err());
    }

    proptest! {
        #[test]
        fn laws_stay_inside_horizon(q in -1e6f64..1e6f64, h in 1e-3f64..10.0) {
            for law in [DelayLaw::Sigmoid, DelayLaw::Rational] {
                let tau = law.eval(q, h);
                prop_assert!(tau >= 0.0 && tau <= h);
            }
        }
    }
}
