//! Strong-rate measurement, coefficient-derivative validation, moment
//! tracking, and particle-count (chaos) studies.
//!
//! # Strong error against a coupled reference
//!
//! The exact interacting particle solution is unavailable, so the reference
//! is the same scheme at a much finer level `n_ref` on the *same* Brownian
//! lattice and initial draws. With both runs coupled pathwise,
//!
//! ```text
//! rmse(n) = sqrt( (1/(R N)) sum_{rep, i} |X_T^{i, ref} - X_T^{i, n}|^2 )
//! ```
//!
//! decays like `h^1` for the Milstein scheme and `h^(1/2)` for Euler under
//! multiplicative noise; [`fit_rate`] recovers the exponent by least squares
//! in log2-log2 coordinates. `n_ref` must sit at least 16x above the finest
//! study level so the reference's own bias is an order below the measured
//! errors.
//!
//! # Derivative validation
//!
//! For `g(x_1..x_N) := f(x, (1/N) sum_k delta_{x_k})` the gradient in atom
//! `x_j` equals `(1/N) * d_mu f(x, mu, x_j)` — the empirical projection of
//! the Lions derivative. [`validate_model`] checks every coefficient
//! derivative a model reports against central finite differences, rebuilding
//! the empirical measure for each perturbed atom.

use serde::Serialize;
use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::measure::{EmpiricalMeasure, MeasureError};
use crate::model::CoefficientModel;
use crate::noise::BrownianLattice;
use crate::rng::{stream, TAG_PROBE};
use crate::scheme::{
    run_on_lattice, InitialLaw, RunOptions, Scheme, SimError, StepOptions, Trajectory,
};

/// Below this floor an rmse is floating-point noise from re-associated sums,
/// not a discretization error; [`fit_rate`] then reports the scheme as exact
/// rather than fitting a slope to rounding jitter. Real strong errors in
/// double precision sit many orders above this.
pub const EXACT_RMSE_FLOOR: f64 = 1e-12;

/// Maximum tolerated fraction of diverged runs in a convergence study.
pub const DIVERGENCE_BUDGET: f64 = 0.01;

/// How the per-repetition pathwise error is reduced over time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ErrorMetric {
    /// Compare states at the terminal time only (the default proxy).
    Terminal,
    /// Take the supremum of squared distances over the coarse grid.
    SupOverGrid,
}

/// Configuration of a strong-convergence study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyConfig {
    pub particles: usize,
    pub horizon: f64,
    /// Coarse step counts, strictly increasing; each must divide `n_ref`.
    pub levels: Vec<usize>,
    /// Reference level; at least 16x the finest study level.
    pub n_ref: usize,
    /// Lattice resolution (defaults to `n_ref`; must be a multiple of it).
    pub n_fine: Option<usize>,
    pub repetitions: usize,
    pub seed: u64,
    pub initial: InitialLaw,
    pub scheme: Scheme,
    pub tamed: bool,
    pub lambda2: bool,
    pub metric: ErrorMetric,
}

/// One row of a convergence study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelError {
    pub level: usize,
    pub h: f64,
    pub rmse: f64,
    /// Repetitions excluded at this level because the coarse or reference
    /// run left the finite range.
    pub diverged: usize,
}

/// Fitted convergence rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum RateFit {
    /// Log-log least-squares slope.
    Slope(f64),
    /// Some level's rmse sat at the floating-point floor: the scheme
    /// reproduces the reference exactly and no rate is meaningful.
    Exact,
}

impl RateFit {
    /// The slope when one was fitted.
    pub fn slope(&self) -> Option<f64> {
        match self {
            RateFit::Slope(s) => Some(*s),
            RateFit::Exact => None,
        }
    }
}

/// Result of a strong-convergence study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub levels: Vec<LevelError>,
    pub rate: RateFit,
    pub repetitions: usize,
    pub particles: usize,
    pub n_ref: usize,
}

/// Errors from study configuration or execution.
#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("a convergence study needs at least two levels")]
    NotEnoughLevels,
    #[error("levels must be strictly increasing")]
    LevelsNotIncreasing,
    #[error("level {level} does not divide the reference level {n_ref}")]
    LevelDoesNotDivide { level: usize, n_ref: usize },
    #[error("reference level {n_ref} must be at least 16x the finest level {max_level}")]
    RefTooCoarse { n_ref: usize, max_level: usize },
    #[error("lattice resolution {n_fine} must be a multiple of the reference level {n_ref}")]
    LatticeTooCoarse { n_fine: usize, n_ref: usize },
    #[error("repetitions must be at least 1")]
    NoRepetitions,
    #[error("{diverged} of {total} runs diverged (budget is 1%)")]
    ExcessiveDivergence { diverged: usize, total: usize },
    #[error("finite-difference step {eps} outside [1e-8, 1e-3]")]
    BadProbeStep { eps: f64 },
    #[error("moment order {p} must be at least 2")]
    BadMomentOrder { p: f64 },
    #[error("chaos sizes must be increasing, with each dividing the next")]
    BadChaosSizes,
}

/// Outcome of one repetition: per-level sum over particles of the squared
/// pathwise error, or `None` where a run diverged.
struct RepOutcome {
    per_level: Vec<Option<f64>>,
}

/// Measures the strong error of the configured scheme at each level against
/// a coupled reference run (same lattice, same initial draws, level `n_ref`).
pub fn strong_error<M: CoefficientModel>(
    model: &M,
    cfg: &StudyConfig,
) -> Result<ConvergenceReport, AnalysisError> {
    if cfg.repetitions == 0 {
        return Err(AnalysisError::NoRepetitions);
    }
    if cfg.levels.len() < 2 {
        return Err(AnalysisError::NotEnoughLevels);
    }
    if cfg.levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(AnalysisError::LevelsNotIncreasing);
    }
    for &level in &cfg.levels {
        if level == 0 || cfg.n_ref % level != 0 {
            return Err(AnalysisError::LevelDoesNotDivide {
                level,
                n_ref: cfg.n_ref,
            });
        }
    }
    let max_level = *cfg.levels.last().expect("non-empty");
    if cfg.n_ref < 16 * max_level {
        return Err(AnalysisError::RefTooCoarse {
            n_ref: cfg.n_ref,
            max_level,
        });
    }
    let n_fine = cfg.n_fine.unwrap_or(cfg.n_ref);
    if n_fine == 0 || n_fine % cfg.n_ref != 0 {
        return Err(AnalysisError::LatticeTooCoarse {
            n_fine,
            n_ref: cfg.n_ref,
        });
    }
    let d = model.state_dim();
    cfg.initial.validate(d)?;

    // Snapshot cadence of the reference run: fine enough that every coarse
    // grid point of every level lands on a stored reference state.
    let ref_stride = match cfg.metric {
        ErrorMetric::Terminal => cfg.n_ref,
        ErrorMetric::SupOverGrid => cfg
            .levels
            .iter()
            .map(|&level| cfg.n_ref / level)
            .fold(0, gcd),
    };

    let run_rep = |rep: usize| -> Result<RepOutcome, AnalysisError> {
        let rep_seed = cfg.seed + rep as u64;
        let lattice = BrownianLattice::generate(
            rep_seed,
            cfg.particles,
            model.noise_dim(),
            n_fine,
            cfg.horizon,
        )
        .map_err(SimError::from)?;
        let mut x0 = Vec::with_capacity(cfg.particles * d);
        for i in 0..cfg.particles {
            x0.extend(cfg.initial.draw(rep_seed, i, d));
        }
        let step = StepOptions {
            tamed: cfg.tamed,
            lambda2: cfg.lambda2,
        };
        let reference = match run_on_lattice(
            model,
            &lattice,
            x0.clone(),
            &RunOptions {
                level: cfg.n_ref,
                scheme: cfg.scheme,
                step,
                stride: ref_stride,
            },
        ) {
            Ok(t) => Some(t),
            Err(SimError::Divergence(_)) => None,
            Err(e) => return Err(e.into()),
        };
        let per_level = cfg
            .levels
            .iter()
            .map(|&level| -> Result<Option<f64>, AnalysisError> {
                let Some(reference) = reference.as_ref() else {
                    return Ok(None);
                };
                let coarse_stride = match cfg.metric {
                    ErrorMetric::Terminal => level,
                    ErrorMetric::SupOverGrid => 1,
                };
                match run_on_lattice(
                    model,
                    &lattice,
                    x0.clone(),
                    &RunOptions {
                        level,
                        scheme: cfg.scheme,
                        step,
                        stride: coarse_stride,
                    },
                ) {
                    Ok(coarse) => Ok(Some(squared_gap(
                        reference,
                        &coarse,
                        cfg.n_ref / level,
                        ref_stride,
                        cfg.metric,
                    ))),
                    Err(SimError::Divergence(_)) => Ok(None),
                    Err(e) => Err(e.into()),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RepOutcome { per_level })
    };

    #[cfg(feature = "parallel")]
    let outcomes: Vec<RepOutcome> = (0..cfg.repetitions)
        .into_par_iter()
        .map(run_rep)
        .collect::<Result<_, _>>()?;
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<RepOutcome> = (0..cfg.repetitions)
        .map(run_rep)
        .collect::<Result<_, _>>()?;

    let mut levels = Vec::with_capacity(cfg.levels.len());
    let mut total_diverged = 0;
    for (idx, &level) in cfg.levels.iter().enumerate() {
        let mut sum = 0.0;
        let mut survivors = 0usize;
        for outcome in &outcomes {
            match outcome.per_level[idx] {
                Some(s) => {
                    sum += s;
                    survivors += 1;
                }
                None => total_diverged += 1,
            }
        }
        let rmse = if survivors == 0 {
            f64::NAN
        } else {
            (sum / (survivors * cfg.particles) as f64).sqrt()
        };
        levels.push(LevelError {
            level,
            h: cfg.horizon / level as f64,
            rmse,
            diverged: cfg.repetitions - survivors,
        });
    }
    let total = cfg.repetitions * cfg.levels.len();
    if total_diverged as f64 > DIVERGENCE_BUDGET * total as f64 {
        return Err(AnalysisError::ExcessiveDivergence {
            diverged: total_diverged,
            total,
        });
    }
    let rate = fit_rate(&levels);
    Ok(ConvergenceReport {
        levels,
        rate,
        repetitions: cfg.repetitions,
        particles: cfg.particles,
        n_ref: cfg.n_ref,
    })
}

/// Sum over particles of the squared pathwise gap between a coarse run and
/// the reference, under the chosen metric. `q_level` is the number of
/// reference steps per coarse step.
fn squared_gap(
    reference: &Trajectory,
    coarse: &Trajectory,
    q_level: usize,
    ref_stride: usize,
    metric: ErrorMetric,
) -> f64 {
    let d = coarse.dim();
    let n = coarse.particles();
    let ref_terminal = reference.terminal();
    let coarse_terminal = coarse.terminal();
    let mut total = 0.0;
    for i in 0..n {
        let gap = match metric {
            ErrorMetric::Terminal => {
                dist_sq(coarse_terminal.particle(i), ref_terminal.particle(i), d)
            }
            ErrorMetric::SupOverGrid => {
                let mut sup = 0.0f64;
                for snap in coarse.snapshots() {
                    let ref_snap = &reference.snapshots()[snap.step() * q_level / ref_stride];
                    sup = sup.max(dist_sq(snap.particle(i), ref_snap.particle(i), d));
                }
                sup
            }
        };
        total += gap;
    }
    total
}

#[inline]
fn dist_sq(a: &[f64], b: &[f64], d: usize) -> f64 {
    let mut acc = 0.0;
    for c in 0..d {
        let diff = a[c] - b[c];
        acc += diff * diff;
    }
    acc
}

fn gcd(a: usize, b: usize) -> usize {
    let (mut a, mut b) = (a, b);
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}

/// Ordinary least squares of `log2(rmse)` on `log2(h)`. Any level at the
/// floating-point floor means the scheme reproduces the reference exactly.
pub fn fit_rate(levels: &[LevelError]) -> RateFit {
    if levels.iter().any(|row| row.rmse <= EXACT_RMSE_FLOOR) {
        return RateFit::Exact;
    }
    let n = levels.len() as f64;
    let xs = levels.iter().map(|r| r.h.log2());
    let ys = levels.iter().map(|r| r.rmse.log2());
    let xbar = xs.clone().sum::<f64>() / n;
    let ybar = ys.clone().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, y) in xs.zip(ys) {
        sxy += (x - xbar) * (y - ybar);
        sxx += (x - xbar) * (x - xbar);
    }
    if sxx == 0.0 {
        return RateFit::Slope(0.0);
    }
    RateFit::Slope(sxy / sxx)
}

/// Which coefficient derivative a check probed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DerivativeTarget {
    /// `d/dx b^(k)`.
    DriftState { k: usize },
    /// `d/dmu b^(k)`.
    DriftMeasure { k: usize },
    /// `d/dx sigma^(k,l)`.
    DiffusionState { k: usize, l: usize },
    /// `d/dmu sigma^(k,l)`.
    DiffusionMeasure { k: usize, l: usize },
}

impl std::fmt::Display for DerivativeTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DerivativeTarget::DriftState { k } => write!(f, "d/dx b^({})", k + 1),
            DerivativeTarget::DriftMeasure { k } => write!(f, "d/dmu b^({})", k + 1),
            DerivativeTarget::DiffusionState { k, l } => {
                write!(f, "d/dx sigma^({},{})", k + 1, l + 1)
            }
            DerivativeTarget::DiffusionMeasure { k, l } => {
                write!(f, "d/dmu sigma^({},{})", k + 1, l + 1)
            }
        }
    }
}

/// One finite-difference comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivativeCheck {
    pub target: DerivativeTarget,
    /// Perturbed atom for measure derivatives; the probed particle index
    /// otherwise.
    pub atom: usize,
    /// Perturbed coordinate.
    pub coordinate: usize,
    /// Model-reported value (scaled by `1/N` for measure derivatives).
    pub claimed: f64,
    /// Central finite-difference estimate.
    pub estimated: f64,
    pub error: f64,
}

impl std::fmt::Display for DerivativeCheck {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} (atom {}, coordinate {}): claimed {:e}, finite difference {:e}, error {:e}",
            self.target, self.atom, self.coordinate, self.claimed, self.estimated, self.error
        )
    }
}

/// Outcome of a full derivative validation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: usize,
    pub worst_error: f64,
    pub tolerance: f64,
    pub failures: Vec<DerivativeCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Validates every derivative a model reports against central finite
/// differences at one probe point: state gradients directly, measure
/// derivatives through the empirical projection identity (perturb atom `j`,
/// rebuild the measure, compare against `(1/N) d_mu f(x, mu, x_j)`).
pub fn validate_derivatives<M: CoefficientModel>(
    model: &M,
    x: &[f64],
    mu: &EmpiricalMeasure,
    eps: f64,
    tol: f64,
) -> Result<ValidationReport, AnalysisError> {
    if !(1e-8..=1e-3).contains(&eps) {
        return Err(AnalysisError::BadProbeStep { eps });
    }
    let d = model.state_dim();
    let m = model.noise_dim();
    let n = mu.len();
    let mut checks = 0usize;
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    let mut grad = vec![0.0; d];
    let mut lo = vec![0.0; d * m];
    let mut hi = vec![0.0; d * m];

    // Relative error with an absolute fallback for small magnitudes.
    let mut record = |target: DerivativeTarget,
                      atom: usize,
                      coordinate: usize,
                      claimed: f64,
                      estimated: f64| {
        let error = (claimed - estimated).abs() / estimated.abs().max(1.0);
        checks += 1;
        worst = worst.max(error);
        if error > tol {
            failures.push(DerivativeCheck {
                target,
                atom,
                coordinate,
                claimed,
                estimated,
                error,
            });
        }
    };

    // State derivatives: bump each coordinate of x.
    for c in 0..d {
        let mut x_hi = x.to_vec();
        let mut x_lo = x.to_vec();
        x_hi[c] += eps;
        x_lo[c] -= eps;
        model.drift(&x_hi, mu, &mut hi[..d]);
        model.drift(&x_lo, mu, &mut lo[..d]);
        let fd_drift: Vec<f64> = (0..d).map(|k| (hi[k] - lo[k]) / (2.0 * eps)).collect();
        for k in 0..d {
            model.drift_dx(k, x, mu, &mut grad);
            record(DerivativeTarget::DriftState { k }, 0, c, grad[c], fd_drift[k]);
        }
        model.diffusion(&x_hi, mu, &mut hi);
        model.diffusion(&x_lo, mu, &mut lo);
        for k in 0..d {
            for l in 0..m {
                let fd = (hi[k * m + l] - lo[k * m + l]) / (2.0 * eps);
                model.diffusion_dx(k, l, x, mu, &mut grad);
                record(DerivativeTarget::DiffusionState { k, l }, 0, c, grad[c], fd);
            }
        }
    }

    // Measure derivatives: bump each coordinate of each atom and rebuild the
    // empirical measure; the claimed Lions derivative enters with weight 1/N.
    for j in 0..n {
        let y = mu.atom(j).to_vec();
        for c in 0..d {
            let mut atoms_hi = mu.atoms().to_vec();
            let mut atoms_lo = mu.atoms().to_vec();
            atoms_hi[j * d + c] += eps;
            atoms_lo[j * d + c] -= eps;
            let mu_hi = EmpiricalMeasure::from_flat(atoms_hi, d)?;
            let mu_lo = EmpiricalMeasure::from_flat(atoms_lo, d)?;
            model.drift(x, &mu_hi, &mut hi[..d]);
            model.drift(x, &mu_lo, &mut lo[..d]);
            let fd_drift: Vec<f64> = (0..d).map(|k| (hi[k] - lo[k]) / (2.0 * eps)).collect();
            for k in 0..d {
                model.drift_dmu(k, x, mu, &y, &mut grad);
                record(
                    DerivativeTarget::DriftMeasure { k },
                    j,
                    c,
                    grad[c] / n as f64,
                    fd_drift[k],
                );
            }
            model.diffusion(x, &mu_hi, &mut hi);
            model.diffusion(x, &mu_lo, &mut lo);
            for k in 0..d {
                for l in 0..m {
                    let fd = (hi[k * m + l] - lo[k * m + l]) / (2.0 * eps);
                    model.diffusion_dmu(k, l, x, mu, &y, &mut grad);
                    record(
                        DerivativeTarget::DiffusionMeasure { k, l },
                        j,
                        c,
                        grad[c] / n as f64,
                        fd,
                    );
                }
            }
        }
    }

    Ok(ValidationReport {
        checks,
        worst_error: worst,
        tolerance: tol,
        failures,
    })
}

/// Runs [`validate_derivatives`] at several seeded random probe points
/// (5-atom clouds, standard normal coordinates) and merges the reports.
pub fn validate_model<M: CoefficientModel>(
    model: &M,
    seed: u64,
    eps: f64,
    tol: f64,
) -> Result<ValidationReport, AnalysisError> {
    let d = model.state_dim();
    let probes = 3;
    let atoms_per_probe = 5;
    let mut merged = ValidationReport {
        checks: 0,
        worst_error: 0.0,
        tolerance: tol,
        failures: Vec::new(),
    };
    for probe in 0..probes {
        let mut rng = stream(seed, TAG_PROBE, probe, 0);
        let x: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let atoms: Vec<f64> = (0..atoms_per_probe * d)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mu = EmpiricalMeasure::from_flat(atoms, d)?;
        let report = validate_derivatives(model, &x, &mu, eps, tol)?;
        merged.checks += report.checks;
        merged.worst_error = merged.worst_error.max(report.worst_error);
        merged.failures.extend(report.failures);
    }
    Ok(merged)
}

/// One point of a moment time series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentRow {
    pub step: usize,
    pub time: f64,
    pub moment: f64,
}

/// The p-th empirical moment `(1/N) sum_i |X^i|^p` at every stored snapshot.
pub fn moment_track(trajectory: &Trajectory, p: f64) -> Result<Vec<MomentRow>, AnalysisError> {
    if p.is_nan() || p < 2.0 {
        return Err(AnalysisError::BadMomentOrder { p });
    }
    Ok(trajectory
        .snapshots()
        .iter()
        .map(|snap| MomentRow {
            step: snap.step(),
            time: snap.time(),
            moment: snap.measure().moment(p),
        })
        .collect())
}

/// Configuration of a particle-count study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChaosConfig {
    /// Particle counts, strictly increasing, each dividing the next (the
    /// divisibility makes the 1-D W2 comparison exact via atom duplication).
    pub sizes: Vec<usize>,
    pub level: usize,
    pub n_fine: usize,
    pub horizon: f64,
    pub scheme: Scheme,
    pub seed: u64,
    pub initial: InitialLaw,
}

/// Statistic gaps between terminal empirical laws at consecutive sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChaosRow {
    pub particles: usize,
    pub next: usize,
    /// Euclidean distance between the two terminal means.
    pub mean_gap: f64,
    /// Absolute difference of second moments.
    pub second_moment_gap: f64,
    /// 1-D Wasserstein-2 distance between terminal laws (NaN when d > 1).
    pub w2_gap: f64,
}

/// Report of a particle-count study: one row per consecutive size pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChaosReport {
    pub rows: Vec<ChaosRow>,
}

/// Runs the system at each size with the *same* seed — nested lattices and
/// initial draws, so particle `i` sees identical noise at every size — and
/// tabulates how terminal statistics drift as the population grows. A
/// qualitative counterpart of propagation of chaos: the gaps should shrink
/// with N (this is not a rate certification).
pub fn chaos_study<M: CoefficientModel>(
    model: &M,
    cfg: &ChaosConfig,
) -> Result<ChaosReport, AnalysisError> {
    if cfg.sizes.len() < 2
        || cfg
            .sizes
            .windows(2)
            .any(|w| w[0] == 0 || w[0] >= w[1] || w[1] % w[0] != 0)
    {
        return Err(AnalysisError::BadChaosSizes);
    }
    let d = model.state_dim();
    cfg.initial.validate(d)?;
    let run = |particles: usize| -> Result<EmpiricalMeasure, AnalysisError> {
        let lattice = BrownianLattice::generate(
            cfg.seed,
            particles,
            model.noise_dim(),
            cfg.n_fine,
            cfg.horizon,
        )
        .map_err(SimError::from)?;
        let mut x0 = Vec::with_capacity(particles * d);
        for i in 0..particles {
            x0.extend(cfg.initial.draw(cfg.seed, i, d));
        }
        let traj = run_on_lattice(
            model,
            &lattice,
            x0,
            &RunOptions {
                level: cfg.level,
                scheme: cfg.scheme,
                step: StepOptions::default(),
                stride: cfg.level,
            },
        )?;
        Ok(traj.terminal().measure())
    };
    let terminals = cfg
        .sizes
        .iter()
        .map(|&n| run(n))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::with_capacity(cfg.sizes.len() - 1);
    for w in terminals.windows(2) {
        let (small, large) = (&w[0], &w[1]);
        let mean_small = small.mean();
        let mean_large = large.mean();
        let mean_gap = dist_sq(&mean_small, &mean_large, d).sqrt();
        let second_moment_gap = (small.moment(2.0) - large.moment(2.0)).abs();
        let w2_gap = if d == 1 {
            // Duplicate each small-cloud atom so both clouds carry the same
            // number of equal-weight atoms; the distance is then exact.
            let factor = large.len() / small.len();
            let mut dup = Vec::with_capacity(large.len());
            for j in 0..small.len() {
                for _ in 0..factor {
                    dup.push(small.atom(j)[0]);
                }
            }
            let dup = EmpiricalMeasure::from_flat(dup, 1)?;
            dup.w2_distance_1d(large)?
        } else {
            f64::NAN
        };
        rows.push(ChaosRow {
            particles: small.len(),
            next: large.len(),
            mean_gap,
            second_moment_gap,
            w2_gap,
        });
    }
    Ok(ChaosReport { rows })
}
