//! Sampling of long-time dynamics, correlation-dimension estimation and
//! exponential attraction rates.
//!
//! Phase points are embedded as `(mu_k^(1/2) u_k, v_k)` so Euclidean
//! distance in the cloud equals the energy-space distance.  Dimension is
//! estimated with Grassberger–Procaccia correlation sums; the reported
//! slope bounds the fractal dimension of the sampled set from below in the
//! usual estimator sense, so a finite plateau is finiteness *evidence*,
//! not a certified bound.  Pair counting above 2000 points switches to a
//! fixed-seed random sample of at most 2 * 10^6 pairs.

use crate::delay::AnalyticHistory;
use crate::integrator::{Model, StepperConfig, Trace};
use crate::spectral::SpectralBasis;
use crate::{diagnostics::linear_fit, Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Full pair enumeration is used up to this cloud size.
const FULL_PAIR_LIMIT: usize = 2000;
/// Number of sampled pairs for larger clouds.
const SAMPLED_PAIRS: usize = 2_000_000;
/// Seed of the pair-sampling generator (fixed: estimates are deterministic).
const PAIR_SEED: u64 = 0x5dde_c0de;
/// Maximal relative variation of local slopes inside a scaling window.
const PLATEAU_TOL: f64 = 0.15;
/// A scaling window must span at least this many radii.
const MIN_WINDOW_RADII: usize = 5;

/// Energy-embedded samples of a trajectory tail.
#[derive(Debug, Clone)]
pub struct PointCloud {
    /// Row-major points in `R^(2N)`: `(mu_k^(1/2) u_k, v_k)` interleaved.
    pub points: Vec<Vec<f64>>,
    pub burn_in: f64,
    pub stride: usize,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Largest pairwise distance (exact; intended for small clouds).
    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..self.points.len() {
            for j in (i + 1)..self.points.len() {
                d = d.max(dist(&self.points[i], &self.points[j]));
            }
        }
        d
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Embed the post-burn-in part of a trace as an energy-metric point cloud.
///
/// Fails unless the run completed, the burn-in leaves data, and at least
/// 100 samples survive the stride.
pub fn sample_cloud(
    trace: &Trace,
    basis: &SpectralBasis,
    burn_in: f64,
    stride: usize,
) -> Result<PointCloud> {
    if !trace.status.is_completed() {
        return Err(Error::InsufficientData(
            "cloud sampling requires a completed run".into(),
        ));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    let t_end = *trace.times.last().ok_or_else(|| {
        Error::InsufficientData("empty trace".into())
    })?;
    if !(burn_in < t_end) {
        return Err(Error::InvalidArgument(format!(
            "burn-in {burn_in} does not precede the trace end {t_end}"
        )));
    }
    let start = trace
        .times
        .iter()
        .position(|&t| t >= burn_in)
        .unwrap_or(trace.len());
    let mut points = Vec::new();
    let sqrt_mu: Vec<f64> = basis.modes().iter().map(|m| m.mu.sqrt()).collect();
    let mut j = start;
    while j < trace.len() {
        let state = &trace.states[j];
        let mut row = Vec::with_capacity(2 * basis.len());
        for i in 0..basis.len() {
            row.push(sqrt_mu[i] * state.u[i]);
            row.push(state.v[i]);
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("cloud sample".into()));
        }
        points.push(row);
        j += stride;
    }
    if points.len() < 100 {
        return Err(Error::InsufficientData(format!(
            "only {} cloud points after burn-in and stride; need >= 100",
            points.len()
        )));
    }
    Ok(PointCloud {
        points,
        burn_in,
        stride,
    })
}

/// Correlation sums, local slopes and the fitted scaling window.
#[derive(Debug, Clone)]
pub struct DimensionEstimate {
    pub radii: Vec<f64>,
    /// `C(r)`: fraction of (sampled) pairs closer than `r`; nondecreasing.
    pub correlation: Vec<f64>,
    /// Slope of `log C` vs `log r` between consecutive radii (NaN where
    /// undefined because `C = 0`).
    pub local_slopes: Vec<f64>,
    /// Fitted dimension over the scaling window; `None` when no plateau
    /// exists.
    pub slope: Option<f64>,
    /// Radii index range `[start, end]` (inclusive) of the window.
    pub window: Option<(usize, usize)>,
    /// Half-spread of local slopes inside the window.
    pub confidence: f64,
    /// Number of distance pairs behind the sums.
    pub pairs: usize,
}

/// Pairwise distances: exact enumeration for small clouds, fixed-seed
/// sampling (at most [`SAMPLED_PAIRS`]) above [`FULL_PAIR_LIMIT`] points.
fn pair_distances(cloud: &PointCloud) -> Vec<f64> {
    let m = cloud.points.len();
    if m <= FULL_PAIR_LIMIT {
        let mut d: Vec<f64> = (0..m)
            .into_par_iter()
            .flat_map_iter(|i| {
                let pi = &cloud.points[i];
                ((i + 1)..m).map(move |j| dist(pi, &cloud.points[j]))
            })
            .collect();
        d.par_sort_by(|a, b| a.partial_cmp(b).unwrap());
        return d;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(PAIR_SEED);
    let pairs: Vec<(usize, usize)> = (0..SAMPLED_PAIRS)
        .map(|_| {
            let i = rng.gen_range(0..m);
            let mut j = rng.gen_range(0..m - 1);
            if j >= i {
                j += 1;
            }
            (i.min(j), i.max(j))
        })
        .collect();
    let mut d: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| dist(&cloud.points[i], &cloud.points[j]))
        .collect();
    d.par_sort_by(|a, b| a.partial_cmp(b).unwrap());
    d
}

/// Geometric radii grid over the small-scale part of the distance
/// distribution (correlation levels ~0.2% to ~5%), where dimension scaling
/// lives; at larger radii boundary saturation flattens the sums.
pub fn default_radii(cloud: &PointCloud, count: usize) -> Result<Vec<f64>> {
    if count < MIN_WINDOW_RADII {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_WINDOW_RADII} radii, got {count}"
        )));
    }
    let d = pair_distances(cloud);
    if d.len() < 200 {
        return Err(Error::InsufficientData(format!(
            "only {} pairs in cloud; need >= 200 for a radii grid",
            d.len()
        )));
    }
    // Stay a few nearest-neighbour levels above the discreteness scale of
    // an M-point sample (which sits at correlation level ~ 2/M) and below
    // the large radii where boundary saturation flattens the sums.
    let m = cloud.points.len() as f64;
    let lo_q = (6.0 / m).max(0.002);
    let hi_q = (25.0 * lo_q).clamp(0.05, 0.25);
    let lo_idx = ((lo_q * d.len() as f64) as usize).max(50).min(d.len() - 2);
    let hi_idx = ((hi_q * d.len() as f64) as usize)
        .max(lo_idx + 1)
        .min(d.len() - 1);
    let lo = d[lo_idx].max(1e-300);
    let hi = d[hi_idx];
    if !(hi > lo) {
        return Err(Error::InsufficientData(
            "degenerate distance distribution; no radii range".into(),
        ));
    }
    let ratio = (hi / lo).powf(1.0 / (count as f64 - 1.0));
    Ok((0..count).map(|i| lo * ratio.powi(i as i32)).collect())
}

/// Grassberger–Procaccia correlation-dimension estimate on a radii grid
/// (sorted ascending).  The scaling window is the longest run of radii
/// whose local slopes vary by less than 15% relative to their mean, spanning
/// at least 5 radii; the dimension is the least-squares slope of
/// `log C` vs `log r` over that window.
pub fn correlation_dimension(cloud: &PointCloud, radii: &[f64]) -> Result<DimensionEstimate> {
    if radii.len() < MIN_WINDOW_RADII {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_WINDOW_RADII} radii"
        )));
    }
    if radii.windows(2).any(|w| w[0] >= w[1]) || radii[0] <= 0.0 {
        return Err(Error::InvalidArgument(
            "radii must be positive and strictly increasing".into(),
        ));
    }
    if cloud.points.len() < 2 {
        return Err(Error::InsufficientData("cloud has fewer than 2 points".into()));
    }
    let d = pair_distances(cloud);
    let total = d.len();
    let correlation: Vec<f64> = radii
        .iter()
        .map(|&r| {
            // Count of distances strictly below r.
            let idx = d.partition_point(|&x| x < r);
            idx as f64 / total as f64
        })
        .collect();
    let mut local_slopes = Vec::with_capacity(radii.len() - 1);
    for i in 0..radii.len() - 1 {
        let (c0, c1) = (correlation[i], correlation[i + 1]);
        if c0 > 0.0 && c1 > 0.0 {
            local_slopes.push((c1.ln() - c0.ln()) / (radii[i + 1].ln() - radii[i].ln()));
        } else {
            local_slopes.push(f64::NAN);
        }
    }
    // Longest window of consecutive finite slopes with small spread. A
    // window covering slopes [i, j) spans radii [i, j] inclusive.
    let mut best: Option<(usize, usize)> = None;
    let spread_ok = |s: &[f64]| -> bool {
        let lo = s.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        // Degenerate exact-zero slopes (e.g. a cloud of one repeated
        // point) count as a perfect plateau.
        if hi == 0.0 && lo == 0.0 {
            return true;
        }
        mean.abs() > 0.0 && (hi - lo) < PLATEAU_TOL * mean.abs()
    };
    for i in 0..local_slopes.len() {
        if !local_slopes[i].is_finite() {
            continue;
        }
        for j in (i + MIN_WINDOW_RADII - 1)..=local_slopes.len() {
            // slopes i..j, spanning radii i..=j (j - i + 1 >= 5 radii).
            if local_slopes[i..j].iter().any(|s| !s.is_finite()) {
                break;
            }
            if !spread_ok(&local_slopes[i..j]) {
                continue;
            }
            let len = j - i;
            if best.map_or(true, |(bi, bj)| len > bj - bi) {
                best = Some((i, j));
            }
        }
    }
    let (slope, window, confidence) = match best {
        Some((i, j)) => {
            let xs: Vec<f64> = radii[i..=j].iter().map(|r| r.ln()).collect();
            let ys: Vec<f64> = correlation[i..=j].iter().map(|c| c.ln()).collect();
            let all_equal = ys.iter().all(|&y| y == ys[0]);
            let slope = if all_equal {
                0.0
            } else {
                linear_fit(&xs, &ys)?.slope
            };
            let lo = local_slopes[i..j].iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = local_slopes[i..j]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            (Some(slope), Some((i, j)), (hi - lo) / 2.0)
        }
        None => (None, None, f64::NAN),
    };
    Ok(DimensionEstimate {
        radii: radii.to_vec(),
        correlation,
        local_slopes,
        slope,
        window,
        confidence,
        pairs: total,
    })
}

/// Uniform random circle (unit radius) in the first two coordinates of
/// `R^dim`; oracle cloud of dimension 1.
pub fn synthetic_circle(n_points: usize, dim: usize, seed: u64) -> PointCloud {
    assert!(dim >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n_points)
        .map(|_| {
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let mut row = vec![0.0; dim];
            row[0] = theta.cos();
            row[1] = theta.sin();
            row
        })
        .collect();
    PointCloud {
        points,
        burn_in: 0.0,
        stride: 1,
    }
}

/// Uniform random unit-square patch in the first two coordinates of
/// `R^dim`; oracle cloud of dimension 2.
pub fn synthetic_square(n_points: usize, dim: usize, seed: u64) -> PointCloud {
    assert!(dim >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n_points)
        .map(|_| {
            let mut row = vec![0.0; dim];
            row[0] = rng.gen_range(0.0..1.0);
            row[1] = rng.gen_range(0.0..1.0);
            row
        })
        .collect();
    PointCloud {
        points,
        burn_in: 0.0,
        stride: 1,
    }
}

/// Apply a random orthogonal transform (QR of a seeded Gaussian matrix) to
/// every point; distances are preserved exactly up to roundoff.
pub fn random_rotation(cloud: &PointCloud, seed: u64) -> PointCloud {
    let dim = cloud.points.first().map_or(0, |p| p.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Box-Muller Gaussian entries; QR orthonormalises the columns.
    let mut gauss = nalgebra::DMatrix::<f64>::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            gauss[(i, j)] = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
    let q = gauss.qr().q();
    let points = cloud
        .points
        .iter()
        .map(|p| {
            let x = nalgebra::DVector::from_column_slice(p);
            (&q * x).iter().cloned().collect()
        })
        .collect();
    PointCloud {
        points,
        ..cloud.clone()
    }
}

/// Fitted exponential attraction of a perturbation bundle.
#[derive(Debug, Clone)]
pub struct AttractionRate {
    /// Fitted decay rate of the bundle envelope (`> 0` when the bundle
    /// collapses onto the reference trajectory).
    pub gamma: f64,
    /// Onset time of the fitted exponential regime.
    pub onset: f64,
    /// Smallest prefactor bounding the envelope on the fitted window.
    pub prefactor: f64,
    /// Stall level (median envelope over the trailing quarter).
    pub floor: f64,
    /// Whether the bundle actually decayed (`gamma > 0` and the envelope
    /// fell below half its starting value).
    pub decaying: bool,
    /// Envelope `max_i |X_i(t) - X_ref(t)|_E` at each trace node.
    pub times: Vec<f64>,
    pub envelope: Vec<f64>,
}

/// Measure the attraction rate of a bundle of `m >= 4` perturbed
/// trajectories around the one started from `phi`.
///
/// Perturbation directions are random analytic histories of unit history
/// norm (seeded generator), scaled by `eps`.
pub fn attraction_rate(
    model: &Model,
    stepper: &StepperConfig,
    phi: &AnalyticHistory,
    m: usize,
    eps: f64,
    seed: u64,
) -> Result<AttractionRate> {
    if m < 4 {
        return Err(Error::InvalidArgument(format!(
            "bundle size must be >= 4, got {m}"
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "perturbation size must be positive, got {eps} (zero gives an \
             identically degenerate bundle)"
        )));
    }
    let basis = model.basis();
    let h = model.delay().horizon();
    let reference = model.simulate(phi, stepper)?;
    if !reference.status.is_completed() {
        return Err(Error::InsufficientData("reference run did not complete".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut initials = Vec::with_capacity(m);
    for _ in 0..m {
        let raw = AnalyticHistory::random(basis.len(), 1.0, &mut rng);
        let norm = raw.w_norm(basis, h, 256);
        if norm <= 0.0 {
            return Err(Error::NonFinite("degenerate random direction".into()));
        }
        initials.push(phi.add_scaled(&raw.scaled(1.0 / norm), eps));
    }
    let runs: Vec<Trace> = initials
        .par_iter()
        .map(|init| {
            let tr = model.simulate(init, stepper)?;
            if !tr.status.is_completed() {
                return Err(Error::InsufficientData(
                    "perturbed bundle run did not complete".into(),
                ));
            }
            Ok(tr)
        })
        .collect::<Result<_>>()?;
    let n = runs
        .iter()
        .map(|t| t.len())
        .min()
        .unwrap()
        .min(reference.len());
    let mut envelope = vec![0.0f64; n];
    for run in &runs {
        for j in 0..n {
            envelope[j] =
                envelope[j].max(run.states[j].energy_distance(&reference.states[j], basis));
        }
    }
    let times: Vec<f64> = reference.times[..n].to_vec();
    if envelope[0] <= 0.0 {
        return Err(Error::InsufficientData(
            "bundle starts at zero separation".into(),
        ));
    }
    // Fit the exponential regime between the envelope peak and the stall.
    let tail_start = (0.75 * n as f64) as usize;
    let mut tail: Vec<f64> = envelope[tail_start..].to_vec();
    tail.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let floor = tail[tail.len() / 2];
    let peak = envelope
        .iter()
        .enumerate()
        .take(n / 4)
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0);
    let cut = (30.0 * floor).max(envelope[peak] * 1e-10);
    let mut end = n;
    for (j, &val) in envelope.iter().enumerate().skip(peak + 1) {
        if val <= cut {
            end = j;
            break;
        }
    }
    if end - peak < 10 {
        end = ((peak + n) / 2).max(peak + 2).min(n);
    }
    let logs: Vec<f64> = envelope[peak..end]
        .iter()
        .map(|&x| x.max(1e-300).ln())
        .collect();
    let fit = linear_fit(&times[peak..end], &logs)?;
    let gamma = -fit.slope;
    let mut prefactor: f64 = 0.0;
    for j in peak..end {
        prefactor = prefactor.max(envelope[j] * (gamma * (times[j] - times[peak])).exp());
    }
    let decaying = gamma > 0.0 && *envelope.last().unwrap() < 0.5 * envelope[peak];
    Ok(AttractionRate {
        gamma,
        onset: times[peak],
        prefactor,
        floor,
        decaying,
        times,
        envelope,
    })
}

/// Largest `|A u(t)|` over the trailing fraction of a trace — a spot check
/// that strong-norm regularity stays bounded along long runs.
pub fn tail_strong_norm(trace: &Trace, basis: &SpectralBasis, tail_frac: f64) -> f64 {
    let n = trace.len();
    if n == 0 {
        return 0.0;
    }
    let start = ((1.0 - tail_frac) * n as f64).floor() as usize;
    trace.states[start.min(n - 1)..]
        .iter()
        .fold(0.0f64, |acc, s| acc.max(basis.norm_alpha(&s.u, 1.0)))
}
