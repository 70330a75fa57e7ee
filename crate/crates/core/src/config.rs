//! Experiment configuration: a single TOML document describes the basis,
//! dynamics, initial history, stepper and per-diagnostic parameters.
//!
//! Parsing is strict — unknown keys are rejected, every numeric range is
//! checked, and validation errors name the offending field.  Documented
//! defaults: `p = 2`, `n = 16`, `h = 0.1`, `dt = 1e-3`, Lyapunov
//! `sigma = 1/4`, driver exponent gap `delta = 1/4`.  All random sampling
//! (initial histories, perturbation directions, pair sampling) is driven
//! by the ChaCha8 generator seeded from the config's 64-bit `seed`.

use crate::delay::{
    AnalyticHistory, AverageSample, DelayLaw, DelaySpec, DelayTerm, ModeHistory, PointSample,
    QFunctional, ResponseMap,
};
use crate::integrator::{Model, StepperConfig};
use crate::nonlin::{NonlinearKind, NonlinearitySpec, Polynomial};
use crate::spectral::{Geometry, ModeVector, SpectralBasis};
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

fn default_p() -> u32 {
    2
}
fn default_n() -> usize {
    16
}
fn default_h() -> f64 {
    0.1
}
fn default_dt() -> f64 {
    1e-3
}
fn default_t_end() -> f64 {
    5.0
}
fn default_stride() -> usize {
    1
}
fn default_delta_hat() -> f64 {
    0.25
}
fn default_sigma() -> f64 {
    0.25
}
fn default_amplitude() -> f64 {
    0.1
}

/// Top-level experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seed of the ChaCha8 generator behind all random sampling.
    #[serde(default)]
    pub seed: u64,
    pub basis: BasisConfig,
    pub dynamics: DynamicsConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub stepper: StepperBlock,
    #[serde(default)]
    pub experiment: ExperimentBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    pub geometry: GeometryKind,
    /// Operator power: `mu = lambda^p` (1 = wave scaling, 2 = plate).
    #[serde(default = "default_p")]
    pub p: u32,
    /// Modes per axis.
    #[serde(default = "default_n")]
    pub n: usize,
    /// Eigenvalue list for `geometry = "custom"` (diagonal basis without
    /// spatial structure).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigenvalues: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    Interval,
    Square,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    pub k_damp: f64,
    /// Delay horizon.
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default)]
    pub nonlinearity: NonlinConfig,
    /// Delay terms (summed).
    #[serde(default)]
    pub delay: Vec<DelayTermConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinConfig {
    #[serde(default)]
    pub kind: NonlinKindTag,
    /// Berger extensibility gain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    /// Berger in-plane pre-compression.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_b: Option<f64>,
    /// Ascending polynomial coefficients for the pointwise kinds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeffs: Option<Vec<f64>>,
    /// Amplitude of the noncompact smoothing term.
    #[serde(default)]
    pub c_nc: f64,
    /// Exponent gap of the noncompact term.
    #[serde(default = "default_delta_hat")]
    pub delta_hat: f64,
    /// Static load in mode coefficients (shorter lists are zero-padded).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub load: Option<Vec<f64>>,
}

impl Default for NonlinConfig {
    fn default() -> Self {
        NonlinConfig {
            kind: NonlinKindTag::None,
            kappa: None,
            mu_b: None,
            coeffs: None,
            c_nc: 0.0,
            delta_hat: default_delta_hat(),
            load: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NonlinKindTag {
    #[default]
    None,
    Berger,
    Kirchhoff,
    WavePoly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayTermConfig {
    pub response: ResponseKind,
    /// Gain of the response map.
    pub amplitude: f64,
    pub law: LawKind,
    /// Fixed lag, for `law = "constant"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau0: Option<f64>,
    /// Observation kind for state-dependent laws.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_kind: Option<QKind>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<SampleConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseKind {
    Linear,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawKind {
    Constant,
    Sigmoid,
    Rational,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QKind {
    Point,
    Average,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub c: f64,
    pub sigma: f64,
    /// Sample location (point observations).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    /// Weight coefficients (average observations).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    #[serde(default)]
    pub kind: InitialKind,
    /// Coefficient amplitude of random histories.
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    /// Optional rescale target for the history norm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_norm: Option<f64>,
    /// Explicit per-mode families `a + b theta + sum c sin(d theta)`
    /// (missing trailing modes are zero).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub modes: Vec<ModeInitConfig>,
}

impl Default for InitialConfig {
    fn default() -> Self {
        InitialConfig {
            kind: InitialKind::Random,
            amplitude: default_amplitude(),
            w_norm: None,
            modes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    #[default]
    Random,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeInitConfig {
    #[serde(default)]
    pub a: f64,
    #[serde(default)]
    pub b: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sines: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepperBlock {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    /// File-emission stride (every node is still recorded in memory).
    #[serde(default = "default_stride")]
    pub stride: usize,
    /// Leading mode pairs emitted in the trace CSV (default: all).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_modes: Option<usize>,
}

impl Default for StepperBlock {
    fn default() -> Self {
        StepperBlock {
            dt: default_dt(),
            t_end: default_t_end(),
            stride: default_stride(),
            trace_modes: None,
        }
    }
}

/// Per-diagnostic parameters; every block is optional with documented
/// defaults so a minimal config can run any subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentBlock {
    #[serde(default)]
    pub energy: EnergyParams,
    #[serde(default)]
    pub dissipativity: DissipativityParams,
    #[serde(default)]
    pub quasi_stability: QuasiStabilityParams,
    #[serde(default)]
    pub lipschitz: LipschitzParams,
    #[serde(default)]
    pub residual: ResidualParams,
    #[serde(default)]
    pub ode: OdeParams,
    #[serde(default)]
    pub attractor: AttractorParams,
    #[serde(default)]
    pub attraction: AttractionParams,
    #[serde(default)]
    pub convergence: ConvergenceParams,
    /// Lyapunov functional parameter.
    #[serde(default = "default_sigma")]
    pub lyapunov_sigma: f64,
}

impl Default for ExperimentBlock {
    fn default() -> Self {
        ExperimentBlock {
            energy: EnergyParams::default(),
            dissipativity: DissipativityParams::default(),
            quasi_stability: QuasiStabilityParams::default(),
            lipschitz: LipschitzParams::default(),
            residual: ResidualParams::default(),
            ode: OdeParams::default(),
            attractor: AttractorParams::default(),
            attraction: AttractionParams::default(),
            convergence: ConvergenceParams::default(),
            lyapunov_sigma: default_sigma(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyParams {
    /// Residual budget scale: pass when `max |r| <= scale (1 + max |calE|)`.
    pub tolerance_scale: f64,
    /// Accepted halving-ratio band for second-order behaviour.
    pub ratio_band: (f64, f64),
}

impl Default for EnergyParams {
    fn default() -> Self {
        EnergyParams {
            tolerance_scale: 1e-4,
            ratio_band: (3.0, 5.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DissipativityParams {
    pub k_list: Vec<f64>,
    /// Horizons to sweep; empty means "use the dynamics horizon".
    pub h_list: Vec<f64>,
    pub t_long: f64,
    pub tail_frac: f64,
    /// Pass when `max R / min R` stays below this.
    pub max_spread: f64,
}

impl Default for DissipativityParams {
    fn default() -> Self {
        DissipativityParams {
            k_list: vec![2.0, 4.0, 8.0],
            h_list: Vec::new(),
            t_long: 50.0,
            tail_frac: 0.25,
            max_spread: 1.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuasiStabilityParams {
    pub pairs: usize,
    /// History-norm separation of each pair.
    pub separation: f64,
    /// Exponent gap of the lower-order driver norm.
    pub delta: f64,
    /// Maximal relative spread of fitted rates around their mean.
    pub rate_spread: f64,
}

impl Default for QuasiStabilityParams {
    fn default() -> Self {
        QuasiStabilityParams {
            pairs: 5,
            separation: 1e-3,
            delta: 0.25,
            rate_spread: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LipschitzParams {
    pub epsilons: Vec<f64>,
    /// Pass when `max ratio / min ratio` stays below this.
    pub max_spread: f64,
}

impl Default for LipschitzParams {
    fn default() -> Self {
        LipschitzParams {
            epsilons: vec![1e-2, 1e-3, 1e-4],
            max_spread: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ResidualParams {
    /// Probe times; empty means `2 h`.
    pub times: Vec<f64>,
    /// Accepted halving-ratio band (`None` = use the energy band).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio_band: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OdeParams {
    pub k: f64,
    pub a: f64,
    pub tau_max: f64,
    pub grid_step: f64,
    /// Random (k, a, tau) samples for the time-domain cross-check.
    pub cross_samples: usize,
}

impl Default for OdeParams {
    fn default() -> Self {
        OdeParams {
            k: 0.5,
            a: 2.0,
            tau_max: 50.0,
            grid_step: 0.5,
            cross_samples: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttractorParams {
    pub burn_in: f64,
    pub stride: usize,
    pub radii_count: usize,
}

impl Default for AttractorParams {
    fn default() -> Self {
        AttractorParams {
            burn_in: 0.5 * default_t_end(),
            stride: 10,
            radii_count: 24,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttractionParams {
    pub bundle: usize,
    pub eps: f64,
}

impl Default for AttractionParams {
    fn default() -> Self {
        AttractionParams {
            bundle: 6,
            eps: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceParams {
    /// Number of step-halving levels (runs at `dt, dt/2, ..., dt/2^(l-1)`).
    pub levels: usize,
    pub min_order: f64,
}

impl Default for ConvergenceParams {
    fn default() -> Self {
        ConvergenceParams {
            levels: 3,
            min_order: 1.5,
        }
    }
}

/// The assembled, runnable experiment.
#[derive(Debug, Clone)]
pub struct Assembled {
    pub model: Model,
    pub initial: AnalyticHistory,
    pub stepper: StepperConfig,
}

fn cfg_err(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{field}: {msg}"))
}

impl ExperimentConfig {
    /// Parse and validate a TOML document.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)
            .map_err(|e| Error::Config(format!("parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Serialize back to TOML (round-trips through [`parse`]).
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("serialize error: {e}")))
    }

    /// Field-by-field range validation (beyond what parsing enforces).
    pub fn validate(&self) -> Result<()> {
        let b = &self.basis;
        match b.geometry {
            GeometryKind::Custom => {
                let eigs = b
                    .eigenvalues
                    .as_ref()
                    .ok_or_else(|| cfg_err("basis.eigenvalues", "required for custom geometry"))?;
                if eigs.is_empty() || eigs.iter().any(|&m| !(m > 0.0)) {
                    return Err(cfg_err(
                        "basis.eigenvalues",
                        "must be a nonempty list of positive values",
                    ));
                }
            }
            _ => {
                if b.eigenvalues.is_some() {
                    return Err(cfg_err(
                        "basis.eigenvalues",
                        "only allowed for custom geometry",
                    ));
                }
                if !(1..=2).contains(&b.p) {
                    return Err(cfg_err("basis.p", format!("must be 1 or 2, got {}", b.p)));
                }
                if b.n == 0 {
                    return Err(cfg_err("basis.n", "must be >= 1"));
                }
            }
        }
        let d = &self.dynamics;
        if !(d.k_damp >= 0.0) || !d.k_damp.is_finite() {
            return Err(cfg_err("dynamics.k_damp", "must be finite and >= 0"));
        }
        if !(d.h > 0.0) || !d.h.is_finite() {
            return Err(cfg_err("dynamics.h", "must be finite and > 0"));
        }
        let nl = &d.nonlinearity;
        match nl.kind {
            NonlinKindTag::None => {
                if nl.kappa.is_some() || nl.mu_b.is_some() || nl.coeffs.is_some() {
                    return Err(cfg_err(
                        "dynamics.nonlinearity",
                        "kappa/mu_b/coeffs set but kind is \"none\"",
                    ));
                }
            }
            NonlinKindTag::Berger => {
                if nl.kappa.is_none() {
                    return Err(cfg_err(
                        "dynamics.nonlinearity.kappa",
                        "required for kind \"berger\"",
                    ));
                }
                if nl.coeffs.is_some() {
                    return Err(cfg_err(
                        "dynamics.nonlinearity.coeffs",
                        "not allowed for kind \"berger\"",
                    ));
                }
            }
            NonlinKindTag::Kirchhoff | NonlinKindTag::WavePoly => {
                if nl.coeffs.is_none() {
                    return Err(cfg_err(
                        "dynamics.nonlinearity.coeffs",
                        "required for polynomial kinds",
                    ));
                }
                if nl.kappa.is_some() || nl.mu_b.is_some() {
                    return Err(cfg_err(
                        "dynamics.nonlinearity.kappa",
                        "only allowed for kind \"berger\"",
                    ));
                }
            }
        }
        if !(nl.c_nc >= 0.0) {
            return Err(cfg_err("dynamics.nonlinearity.c_nc", "must be >= 0"));
        }
        if !(nl.delta_hat > 0.0 && nl.delta_hat <= 0.5) {
            return Err(cfg_err(
                "dynamics.nonlinearity.delta_hat",
                "must lie in (0, 1/2]",
            ));
        }
        for (i, term) in d.delay.iter().enumerate() {
            let at = |f: &str| format!("dynamics.delay[{i}].{f}");
            match term.law {
                LawKind::Constant => {
                    let tau0 = term
                        .tau0
                        .ok_or_else(|| cfg_err(&at("tau0"), "required for constant law"))?;
                    if !(0.0..=d.h).contains(&tau0) {
                        return Err(cfg_err(
                            &at("tau0"),
                            format!("must lie in [0, h] = [0, {}], got {tau0}", d.h),
                        ));
                    }
                    if term.q_kind.is_some() || !term.samples.is_empty() {
                        return Err(cfg_err(
                            &at("q_kind"),
                            "observations are not allowed for constant law",
                        ));
                    }
                }
                LawKind::Sigmoid | LawKind::Rational => {
                    if term.tau0.is_some() {
                        return Err(cfg_err(&at("tau0"), "only allowed for constant law"));
                    }
                    let qk = term
                        .q_kind
                        .ok_or_else(|| cfg_err(&at("q_kind"), "required for state-dependent laws"))?;
                    if term.samples.is_empty() {
                        return Err(cfg_err(&at("samples"), "need at least one observation"));
                    }
                    for (j, s) in term.samples.iter().enumerate() {
                        let sat = |f: &str| format!("dynamics.delay[{i}].samples[{j}].{f}");
                        if !(0.0..=d.h).contains(&s.sigma) {
                            return Err(cfg_err(
                                &sat("sigma"),
                                format!("must lie in [0, h] = [0, {}], got {}", d.h, s.sigma),
                            ));
                        }
                        match qk {
                            QKind::Point => {
                                if s.xi.is_some() {
                                    return Err(cfg_err(
                                        &sat("xi"),
                                        "not allowed for point observations",
                                    ));
                                }
                                if s.x.is_none() {
                                    return Err(cfg_err(&sat("x"), "required for point observations"));
                                }
                                if self.basis.geometry == GeometryKind::Custom {
                                    return Err(cfg_err(
                                        &sat("x"),
                                        "point observations need a spatial geometry",
                                    ));
                                }
                            }
                            QKind::Average => {
                                if s.x.is_some() {
                                    return Err(cfg_err(
                                        &sat("x"),
                                        "not allowed for average observations",
                                    ));
                                }
                                if s.xi.is_none() {
                                    return Err(cfg_err(
                                        &sat("xi"),
                                        "required for average observations",
                                    ));
                                }
                            }
                        }
                    }
                }
            }
            if term.response == ResponseKind::Tanh && self.basis.geometry == GeometryKind::Custom {
                return Err(cfg_err(
                    &format!("dynamics.delay[{i}].response"),
                    "tanh responses need a spatial geometry",
                ));
            }
        }
        let st = &self.stepper;
        if !(st.dt > 0.0) || !st.dt.is_finite() {
            return Err(cfg_err("stepper.dt", "must be finite and > 0"));
        }
        if !(st.t_end > 0.0) || !st.t_end.is_finite() {
            return Err(cfg_err("stepper.t_end", "must be finite and > 0"));
        }
        if st.stride == 0 {
            return Err(cfg_err("stepper.stride", "must be >= 1"));
        }
        if st.trace_modes == Some(0) {
            return Err(cfg_err("stepper.trace_modes", "must be >= 1 when set"));
        }
        let e = &self.experiment;
        if !(e.lyapunov_sigma > 0.0 && e.lyapunov_sigma < 1.0) {
            return Err(cfg_err("experiment.lyapunov_sigma", "must lie in (0, 1)"));
        }
        if !(e.dissipativity.tail_frac > 0.0 && e.dissipativity.tail_frac < 1.0) {
            return Err(cfg_err(
                "experiment.dissipativity.tail_frac",
                "must lie in (0, 1)",
            ));
        }
        if !(e.quasi_stability.delta > 0.0 && e.quasi_stability.delta <= 0.5) {
            return Err(cfg_err(
                "experiment.quasi_stability.delta",
                "must lie in (0, 1/2]",
            ));
        }
        Ok(())
    }

    fn build_basis(&self) -> Result<SpectralBasis> {
        match self.basis.geometry {
            GeometryKind::Interval => SpectralBasis::build(Geometry::Interval, self.basis.p, self.basis.n),
            GeometryKind::Square => SpectralBasis::build(Geometry::Square, self.basis.p, self.basis.n),
            GeometryKind::Custom => {
                SpectralBasis::custom(self.basis.eigenvalues.as_ref().unwrap())
            }
        }
        .map_err(|e| cfg_err("basis", e))
    }

    fn build_nonlin(&self, basis: &SpectralBasis) -> Result<NonlinearitySpec> {
        let nl = &self.dynamics.nonlinearity;
        let mut load = basis.zeros();
        if let Some(values) = &nl.load {
            if values.len() > basis.len() {
                return Err(cfg_err(
                    "dynamics.nonlinearity.load",
                    format!("{} entries but only {} modes", values.len(), basis.len()),
                ));
            }
            for (i, &v) in values.iter().enumerate() {
                load[i] = v;
            }
        }
        let kind = match nl.kind {
            // A bare noncompact term rides on a zero-gain Berger branch.
            NonlinKindTag::None => NonlinearKind::Berger {
                kappa: 0.0,
                mu_b: 0.0,
            },
            NonlinKindTag::Berger => NonlinearKind::Berger {
                kappa: nl.kappa.unwrap(),
                mu_b: nl.mu_b.unwrap_or(0.0),
            },
            NonlinKindTag::Kirchhoff => NonlinearKind::Kirchhoff {
                f: Polynomial::new(nl.coeffs.clone().unwrap()),
            },
            NonlinKindTag::WavePoly => NonlinearKind::WavePoly {
                f: Polynomial::new(nl.coeffs.clone().unwrap()),
            },
        };
        NonlinearitySpec::new(kind, load, nl.c_nc, nl.delta_hat)
            .map_err(|e| cfg_err("dynamics.nonlinearity", e))
    }

    fn build_delay(&self, basis: &SpectralBasis) -> Result<DelaySpec> {
        let d = &self.dynamics;
        let mut terms = Vec::with_capacity(d.delay.len());
        for (i, t) in d.delay.iter().enumerate() {
            let response = match t.response {
                ResponseKind::Linear => ResponseMap::Linear { a: t.amplitude },
                ResponseKind::Tanh => ResponseMap::Tanh { a: t.amplitude },
            };
            let law = match t.law {
                LawKind::Constant => DelayLaw::Constant {
                    tau0: t.tau0.unwrap(),
                },
                LawKind::Sigmoid => DelayLaw::Sigmoid,
                LawKind::Rational => DelayLaw::Rational,
            };
            let q = match t.q_kind {
                None => None,
                Some(QKind::Point) => Some(QFunctional::PointSamples(
                    t.samples
                        .iter()
                        .map(|s| PointSample {
                            c: s.c,
                            sigma: s.sigma,
                            x: s.x.clone().unwrap(),
                        })
                        .collect(),
                )),
                Some(QKind::Average) => {
                    let mut samples = Vec::with_capacity(t.samples.len());
                    for (j, s) in t.samples.iter().enumerate() {
                        let xi_raw = s.xi.as_ref().unwrap();
                        if xi_raw.len() > basis.len() {
                            return Err(cfg_err(
                                &format!("dynamics.delay[{i}].samples[{j}].xi"),
                                format!("{} entries but only {} modes", xi_raw.len(), basis.len()),
                            ));
                        }
                        let mut xi = basis.zeros();
                        for (m, &v) in xi_raw.iter().enumerate() {
                            xi[m] = v;
                        }
                        samples.push(AverageSample {
                            c: s.c,
                            sigma: s.sigma,
                            xi,
                        });
                    }
                    Some(QFunctional::Averages(samples))
                }
            };
            terms.push(DelayTerm { response, law, q });
        }
        DelaySpec::new(d.h, terms).map_err(|e| cfg_err("dynamics.delay", e))
    }

    fn build_initial(&self, basis: &SpectralBasis) -> Result<AnalyticHistory> {
        let init = &self.initial;
        let hist = match init.kind {
            InitialKind::Random => {
                if !(init.amplitude > 0.0) {
                    return Err(cfg_err("initial.amplitude", "must be > 0 for random histories"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                AnalyticHistory::random(basis.len(), init.amplitude, &mut rng)
            }
            InitialKind::Explicit => {
                if init.modes.len() > basis.len() {
                    return Err(cfg_err(
                        "initial.modes",
                        format!("{} entries but only {} modes", init.modes.len(), basis.len()),
                    ));
                }
                let mut hist = AnalyticHistory::zero(basis.len());
                for (i, m) in init.modes.iter().enumerate() {
                    hist.modes[i] = ModeHistory {
                        a: m.a,
                        b: m.b,
                        sines: m.sines.clone(),
                    };
                }
                hist
            }
        };
        if let Some(target) = init.w_norm {
            if !(target > 0.0) {
                return Err(cfg_err("initial.w_norm", "must be > 0"));
            }
            let norm = hist.w_norm(basis, self.dynamics.h, 256);
            if norm <= 0.0 {
                return Err(cfg_err(
                    "initial.w_norm",
                    "cannot rescale an identically zero history",
                ));
            }
            return Ok(hist.scaled(target / norm));
        }
        Ok(hist)
    }

    /// Assemble the model, initial history and stepper.
    pub fn build(&self) -> Result<Assembled> {
        self.validate()?;
        let basis = self.build_basis()?;
        let nonlin = self.build_nonlin(&basis)?;
        let delay = self.build_delay(&basis)?;
        let initial = self.build_initial(&basis)?;
        let model = Model::new(basis, nonlin, delay, self.dynamics.k_damp)
            .map_err(|e| cfg_err("dynamics", e))?;
        let mut stepper = StepperConfig::new(self.stepper.dt, self.stepper.t_end);
        stepper.stride = self.stepper.stride;
        Ok(Assembled {
            model,
            initial,
            stepper,
        })
    }

    /// Clone with damping and horizon overridden; constant lags and sample
    /// offsets scale proportionally with the horizon so the delay
    /// structure stays geometrically similar across a sweep.
    pub fn override_k_h(&self, k_damp: f64, h: f64) -> ExperimentConfig {
        let mut cfg = self.clone();
        let scale = h / cfg.dynamics.h;
        cfg.dynamics.k_damp = k_damp;
        cfg.dynamics.h = h;
        for term in &mut cfg.dynamics.delay {
            if let Some(tau0) = &mut term.tau0 {
                *tau0 *= scale;
            }
            for s in &mut term.samples {
                s.sigma *= scale;
            }
        }
        cfg
    }

    /// The static-load vector in mode coefficients, for diagnostics that
    /// need it separately from the assembled model.
    pub fn load_vector(&self, basis: &SpectralBasis) -> ModeVector {
        let mut load = basis.zeros();
        if let Some(values) = &self.dynamics.nonlinearity.load {
            for (i, &v) in values.iter().enumerate().take(basis.len()) {
                load[i] = v;
            }
        }
        load
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[basis]
geometry = "interval"

[dynamics]
k_damp = 2.0
"#;

    const FULL: &str = r#"
seed = 7

[basis]
geometry = "square"
p = 2
n = 4

[dynamics]
k_damp = 2.0
h = 0.1

[dynamics.nonlinearity]
kind = "berger"
kappa = 1.0
mu_b = 0.5
c_nc = 0.1
delta_hat = 0.25

[[dynamics.delay]]
response = "linear"
amplitude = 0.5
law = "sigmoid"
q_kind = "point"

[[dynamics.delay.samples]]
c = 1.0
sigma = 0.05
x = [0.3, 0.4]

[initial]
kind = "explicit"
modes = [{ a = 0.2, b = 0.0, sines = [[0.1, 2.0]] }]

[stepper]
dt = 1e-3
t_end = 0.05
stride = 5
"#;

    #[test]
    fn minimal_config_fills_documented_defaults() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.basis.p, 2);
        assert_eq!(cfg.basis.n, 16);
        assert_eq!(cfg.dynamics.h, 0.1);
        assert_eq!(cfg.stepper.dt, 1e-3);
        assert_eq!(cfg.stepper.stride, 1);
        assert_eq!(cfg.experiment.lyapunov_sigma, 0.25);
        assert_eq!(cfg.experiment.quasi_stability.delta, 0.25);
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.dynamics.nonlinearity.kind, NonlinKindTag::None);
    }

    #[test]
    fn full_config_builds_and_simulates() {
        let cfg = ExperimentConfig::parse(FULL).unwrap();
        let assembled = cfg.build().unwrap();
        assert_eq!(assembled.model.basis().len(), 16);
        let trace = assembled
            .model
            .simulate(&assembled.initial, &assembled.stepper)
            .unwrap();
        assert!(trace.status.is_completed());
    }

    #[test]
    fn out_of_range_lag_names_the_field() {
        let text = MINIMAL.to_string()
            + r#"
[[dynamics.delay]]
response = "linear"
amplitude = 0.5
law = "constant"
tau0 = 0.2
"#;
        let err = ExperimentConfig::parse(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("tau0"), "message was: {msg}");
    }

    #[test]
    fn unknown_and_duplicate_keys_are_rejected() {
        let unknown = MINIMAL.to_string() + "\n[stepper]\nnot_a_field = 1\n";
        assert!(ExperimentConfig::parse(&unknown).is_err());
        let duplicate = r#"
[basis]
geometry = "interval"
geometry = "square"

[dynamics]
k_damp = 1.0
"#;
        assert!(ExperimentConfig::parse(duplicate).is_err());
    }

    #[test]
    fn round_trip_preserves_the_config() {
        let cfg = ExperimentConfig::parse(FULL).unwrap();
        let text = cfg.to_toml().unwrap();
        let reparsed = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(cfg, reparsed);
    }

    #[test]
    fn override_scales_delay_offsets_with_horizon() {
        let cfg = ExperimentConfig::parse(FULL).unwrap();
        let swept = cfg.override_k_h(8.0, 0.05);
        assert_eq!(swept.dynamics.k_damp, 8.0);
        assert_eq!(swept.dynamics.h, 0.05);
        assert!((swept.dynamics.delay[0].samples[0].sigma - 0.025).abs() < 1e-15);
        swept.validate().unwrap();
        swept.build().unwrap();
    }

    #[test]
    fn custom_basis_rejects_point_observations() {
        let text = r#"
[basis]
geometry = "custom"
eigenvalues = [2.0]

[dynamics]
k_damp = 1.0

[[dynamics.delay]]
response = "linear"
amplitude = 0.5
law = "sigmoid"
q_kind = "point"

[[dynamics.delay.samples]]
c = 1.0
sigma = 0.05
x = [0.3]
"#;
        let err = ExperimentConfig::parse(text).unwrap_err().to_string();
        assert!(err.contains("geometry"), "message was: {err}");
    }

    #[test]
    fn state_dependent_law_requires_observations() {
        let text = MINIMAL.to_string()
            + r#"
[[dynamics.delay]]
response = "linear"
amplitude = 0.5
law = "rational"
"#;
        let err = ExperimentConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("q_kind"), "message was: {err}");
    }

    #[test]
    fn random_initial_is_seed_deterministic() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        let a = cfg.build().unwrap().initial;
        let b = cfg.build().unwrap().initial;
        assert_eq!(a.modes.len(), b.modes.len());
        for (x, y) in a.modes.iter().zip(&b.modes) {
            assert_eq!(x.a, y.a);
            assert_eq!(x.b, y.b);
            assert_eq!(x.sines, y.sines);
        }
        let mut other = cfg.clone();
        other.seed = 1;
        let c = other.build().unwrap().initial;
        assert!(a.modes.iter().zip(&c.modes).any(|(x, y)| x.a != y.a));
    }

    #[test]
    fn load_longer_than_mode_count_is_rejected() {
        let text = r#"
[basis]
geometry = "custom"
eigenvalues = [2.0]

[dynamics]
k_damp = 1.0

[dynamics.nonlinearity]
kind = "berger"
kappa = 1.0
load = [0.1, 0.2]
"#;
        let err = ExperimentConfig::parse(text)
            .unwrap()
            .build()
            .unwrap_err()
            .to_string();
        assert!(err.contains("load"), "message was: {err}");
    }
}
