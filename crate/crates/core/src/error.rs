use thiserror::Error;

/// Unified error type for the toolkit.
///
/// Numerical blow-up during time stepping is *not* an `Error`: the stepper
/// records it in the trace status so that sweeps can tabulate divergent runs.
/// Errors here are contract violations (bad arguments, bad configs, requests
/// outside a history's support) that make the requested computation
/// meaningless.
#[derive(Debug, Error)]
pub enum Error {
    /// A constructor or operation received an argument outside its domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Configuration file rejected; the message names the offending field.
    #[error("config error: {0}")]
    Config(String),

    /// A state was requested at a time not covered by the history segment.
    #[error("history underflow: requested t = {requested}, earliest covered t = {earliest}")]
    HistoryUnderflow { requested: f64, earliest: f64 },

    /// A state was requested beyond the newest history node.
    #[error("history overrun: requested t = {requested}, latest covered t = {latest}")]
    HistoryOverrun { requested: f64, latest: f64 },

    /// A delay law produced a lag outside `[0, h]`; the model contract is
    /// broken and no clamping is applied.
    #[error("delay contract violation: term {term} produced tau = {tau} outside [0, {horizon}]")]
    DelayContract { term: usize, tau: f64, horizon: f64 },

    /// An operation required point evaluation or a collocation grid, but the
    /// basis was built from a bare eigenvalue list with no spatial geometry.
    #[error("operation requires a tensor-sine geometry: {0}")]
    NoGeometry(String),

    /// Non-finite values encountered where finite input is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// An iterative procedure failed to meet its acceptance tolerance.
    #[error("no convergence: {0}")]
    NoConvergence(String),

    /// Not enough data to run a diagnostic (short trace, tiny cloud, ...).
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Underlying I/O failure while reading configs or writing artifacts.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
