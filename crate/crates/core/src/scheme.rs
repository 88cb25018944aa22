//! Tamed Euler and tamed Milstein steps for the interacting particle system.
//!
//! With `h = T/n`, empirical measure `mu_k` frozen at the step start, tamed
//! drift `b_n`, and coarse increments `dW` read from the shared lattice, the
//! Milstein update for particle `i` is
//!
//! ```text
//! X_{k+1}^i = X_k^i + b_n(X_k^i, mu_k) h
//!             + sigma(X_k^i, mu_k) dW^i
//!             + sum_l Lambda1^(.,l) + sum_l Lambda2^(.,l) ,
//! ```
//!
//! where the correction matrices contract coefficient derivatives against
//! iterated integrals (see [`crate::noise`]):
//!
//! ```text
//! Lambda1^(k,l) = sum_{l1} < d_x sigma^(k,l)(X^i, mu), sigma^(l1)(X^i, mu) > I[i,i; l1,l]
//! Lambda2^(k,l) = (1/N) sum_j sum_{l1}
//!                 < d_mu sigma^(k,l)(X^i, mu, X^j), sigma^(l1)(X^j, mu) > I[j,i; l1,l]
//! ```
//!
//! `Lambda1` is the classical Milstein term; `Lambda2` is the measure
//! derivative's contribution, coupling every particle pair. Both already
//! carry their stochastic weight inside `I`, so the update just sums their
//! columns. The Euler step drops both corrections.
//!
//! # Determinism
//!
//! Given a lattice and an initial condition the trajectory is a pure
//! function: particles update independently within a step (safe to
//! parallelise), and the `Lambda2` reduction runs in a fixed order
//! (ascending source particle `j`, then component `l1`), so results are
//! bitwise-identical for any worker count.

use serde::Serialize;
use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::measure::{EmpiricalMeasure, MeasureError};
use crate::model::{taming_divisor, CoefficientModel};
use crate::noise::{BrownianLattice, NoiseError};
use crate::rng::{stream, TAG_INITIAL};

/// Time-stepping scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Scheme {
    /// Tamed Euler-Maruyama (strong order 1/2).
    Euler,
    /// Tamed Milstein with measure-derivative correction (strong order 1).
    Milstein,
}

/// Initial law of the particles; draws are i.i.d. across particles and keyed
/// by `(seed, particle)` so nested particle sets share their prefix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum InitialLaw {
    /// Every particle starts at the same point.
    Constant(Vec<f64>),
    /// Independent Gaussian coordinates around `mean`.
    Gaussian { mean: Vec<f64>, std: f64 },
    /// Independent uniform coordinates on `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
}

impl InitialLaw {
    pub(crate) fn validate(&self, dim: usize) -> Result<(), SimError> {
        let ok = match self {
            InitialLaw::Constant(v) => v.len() == dim && v.iter().all(|x| x.is_finite()),
            InitialLaw::Gaussian { mean, std } => {
                mean.len() == dim && std.is_finite() && *std >= 0.0
            }
            InitialLaw::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
        };
        if ok {
            Ok(())
        } else {
            Err(SimError::BadInitialLaw { dim })
        }
    }

    pub(crate) fn draw(&self, seed: u64, particle: usize, dim: usize) -> Vec<f64> {
        let mut rng = stream(seed, TAG_INITIAL, particle as u64, 0);
        match self {
            InitialLaw::Constant(v) => v.clone(),
            InitialLaw::Gaussian { mean, std } => (0..dim)
                .map(|c| {
                    let z: f64 = rng.sample(StandardNormal);
                    mean[c] + std * z
                })
                .collect(),
            InitialLaw::Uniform { lo, hi } => (0..dim)
                .map(|_| {
                    let u: f64 = rng.random();
                    lo + (hi - lo) * u
                })
                .collect(),
        }
    }
}

/// State of all particles at one time point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimState {
    step: usize,
    time: f64,
    dim: usize,
    /// Row-major `[particle][coordinate]`.
    positions: Vec<f64>,
}

impl SimState {
    /// Builds a step-0 state from a flat row-major position buffer.
    pub fn new(positions: Vec<f64>, dim: usize) -> Result<Self, SimError> {
        if dim == 0 || positions.is_empty() || positions.len() % dim != 0 {
            return Err(SimError::BadStateShape {
                len: positions.len(),
                dim,
            });
        }
        if !positions.iter().all(|v| v.is_finite()) {
            return Err(SimError::NonFiniteState);
        }
        Ok(Self {
            step: 0,
            time: 0.0,
            dim,
            positions,
        })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn particles(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    /// The empirical measure of the current positions.
    pub fn measure(&self) -> EmpiricalMeasure {
        EmpiricalMeasure::from_flat(self.positions.clone(), self.dim)
            .expect("states hold finite positions")
    }
}

/// A simulated path of the whole particle system: snapshots at the configured
/// stride plus the initial and terminal states.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    level: usize,
    horizon: f64,
    dim: usize,
    snapshots: Vec<SimState>,
}

impl Trajectory {
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn particles(&self) -> usize {
        self.snapshots[0].particles()
    }

    pub fn snapshots(&self) -> &[SimState] {
        &self.snapshots
    }

    /// The state at time `T`.
    pub fn terminal(&self) -> &SimState {
        self.snapshots.last().expect("trajectories are non-empty")
    }
}

/// A particle position left the finite range: the hallmark of an untamed
/// explicit scheme under super-linear drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DivergenceEvent {
    pub step: usize,
    pub time: f64,
    pub particle: usize,
}

impl std::fmt::Display for DivergenceEvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "particle {} diverged at step {} (t = {})",
            self.particle, self.step, self.time
        )
    }
}

/// Errors from simulation runs and single steps.
#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("simulation diverged: {0}")]
    Divergence(DivergenceEvent),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("position buffer of length {len} does not match dimension {dim}")]
    BadStateShape { len: usize, dim: usize },
    #[error("state positions must be finite")]
    NonFiniteState,
    #[error("initial law is inconsistent with state dimension {dim}")]
    BadInitialLaw { dim: usize },
    #[error("lattice has {lattice} components but the model drives {model}")]
    ComponentMismatch { lattice: usize, model: usize },
    #[error("state has {state} particles but the lattice {lattice}")]
    ParticleMismatch { state: usize, lattice: usize },
    #[error("state dimension {state} does not match the model dimension {model}")]
    DimensionMismatch { state: usize, model: usize },
    #[error("particle index {index} out of range (have {count})")]
    ParticleOutOfRange { index: usize, count: usize },
    #[error("snapshot stride must be at least 1")]
    ZeroStride,
}

/// Per-step toggles. `tamed` switches the drift divisor; `lambda2` switches
/// the measure-derivative Milstein correction (a diagnostic: disabling it on
/// a measure-dependent diffusion drops the strong order to 1/2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepOptions {
    pub tamed: bool,
    pub lambda2: bool,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self {
            tamed: true,
            lambda2: true,
        }
    }
}

/// Full description of a self-contained simulation run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub particles: usize,
    /// Number of coarse steps `n` (also the taming level).
    pub level: usize,
    /// Fine steps of the noise lattice; must be a multiple of `level`.
    pub n_fine: usize,
    /// Time horizon `T`.
    pub horizon: f64,
    pub scheme: Scheme,
    pub tamed: bool,
    /// Keep the measure-derivative Milstein correction (default true).
    pub lambda2: bool,
    pub seed: u64,
    pub initial: InitialLaw,
    /// Snapshot every `stride` steps (initial and terminal states are always
    /// kept).
    pub stride: usize,
}

/// Options for driving a run on an externally constructed lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunOptions {
    pub level: usize,
    pub scheme: Scheme,
    pub step: StepOptions,
    pub stride: usize,
}

/// Simulates the interacting particle system from scratch: generates the
/// noise lattice from `config.seed`, draws the initial condition, runs
/// `config.level` steps.
pub fn simulate<M: CoefficientModel>(
    model: &M,
    config: &SimConfig,
) -> Result<Trajectory, SimError> {
    let d = model.state_dim();
    config.initial.validate(d)?;
    let lattice = BrownianLattice::generate(
        config.seed,
        config.particles,
        model.noise_dim(),
        config.n_fine,
        config.horizon,
    )?;
    let mut x0 = Vec::with_capacity(config.particles * d);
    for i in 0..config.particles {
        x0.extend(config.initial.draw(config.seed, i, d));
    }
    run_on_lattice(
        model,
        &lattice,
        x0,
        &RunOptions {
            level: config.level,
            scheme: config.scheme,
            step: StepOptions {
                tamed: config.tamed,
                lambda2: config.lambda2,
            },
            stride: config.stride,
        },
    )
}

/// Runs the scheme on a shared lattice from an explicit initial state. This
/// is the entry point used by convergence studies, which drive several
/// discretization levels with the same noise.
pub fn run_on_lattice<M: CoefficientModel>(
    model: &M,
    lattice: &BrownianLattice,
    x0: Vec<f64>,
    opts: &RunOptions,
) -> Result<Trajectory, SimError> {
    if opts.stride == 0 {
        return Err(SimError::ZeroStride);
    }
    lattice.stride_for(opts.level)?;
    let state = SimState::new(x0, model.state_dim())?;
    check_shapes(model, &state, lattice)?;
    let mut snapshots = vec![state.clone()];
    let mut current = state;
    for k in 0..opts.level {
        current = advance(model, &current, lattice, opts.level, k, opts.scheme, &opts.step)?;
        if (k + 1) % opts.stride == 0 || k + 1 == opts.level {
            snapshots.push(current.clone());
        }
    }
    Ok(Trajectory {
        level: opts.level,
        horizon: lattice.horizon(),
        dim: model.state_dim(),
        snapshots,
    })
}

/// One tamed Euler-Maruyama step for all particles.
pub fn euler_step<M: CoefficientModel>(
    model: &M,
    state: &SimState,
    lattice: &BrownianLattice,
    level: usize,
    step: usize,
    opts: &StepOptions,
) -> Result<SimState, SimError> {
    advance(model, state, lattice, level, step, Scheme::Euler, opts)
}

/// One tamed Milstein step for all particles.
pub fn milstein_step<M: CoefficientModel>(
    model: &M,
    state: &SimState,
    lattice: &BrownianLattice,
    level: usize,
    step: usize,
    opts: &StepOptions,
) -> Result<SimState, SimError> {
    advance(model, state, lattice, level, step, Scheme::Milstein, opts)
}

/// The classical Milstein correction matrix `Lambda1` (d x m, row-major) for
/// particle `i` at the given coarse step.
pub fn lambda1<M: CoefficientModel>(
    model: &M,
    state: &SimState,
    lattice: &BrownianLattice,
    i: usize,
    level: usize,
    step: usize,
) -> Result<Vec<f64>, SimError> {
    let ctx = StepCtx::prepare(model, state, lattice, level, step, true)?;
    ctx.check_particle(i)?;
    let mut grad = vec![0.0; ctx.d * ctx.m * ctx.d];
    let mut out = vec![0.0; ctx.d * ctx.m];
    ctx.lambda1_into(i, &mut out, &mut grad);
    Ok(out)
}

/// The measure-derivative Milstein correction matrix `Lambda2` (d x m,
/// row-major) for particle `i` at the given coarse step. Includes the `1/N`
/// weight of the empirical measure.
pub fn lambda2<M: CoefficientModel>(
    model: &M,
    state: &SimState,
    lattice: &BrownianLattice,
    i: usize,
    level: usize,
    step: usize,
) -> Result<Vec<f64>, SimError> {
    let ctx = StepCtx::prepare(model, state, lattice, level, step, true)?;
    ctx.check_particle(i)?;
    let mut grad = vec![0.0; ctx.d * ctx.m * ctx.d];
    let mut out = vec![0.0; ctx.d * ctx.m];
    ctx.lambda2_into(i, &mut out, &mut grad);
    Ok(out)
}

fn check_shapes<M: CoefficientModel>(
    model: &M,
    state: &SimState,
    lattice: &BrownianLattice,
) -> Result<(), SimError> {
    if state.dim != model.state_dim() {
        return Err(SimError::DimensionMismatch {
            state: state.dim,
            model: model.state_dim(),
        });
    }
    if lattice.components() != model.noise_dim() {
        return Err(SimError::ComponentMismatch {
            lattice: lattice.components(),
            model: model.noise_dim(),
        });
    }
    if state.particles() != lattice.particles() {
        return Err(SimError::ParticleMismatch {
            state: state.particles(),
            lattice: lattice.particles(),
        });
    }
    Ok(())
}

/// Everything a step needs, computed once from the frozen state snapshot.
struct StepCtx<'a, M: CoefficientModel> {
    model: &'a M,
    lattice: &'a BrownianLattice,
    mu: EmpiricalMeasure,
    /// `sigma(X^j, mu)` for all j, row-major `[j][k][l]`.
    sigma_all: Vec<f64>,
    /// Coarse increments `[i][l]`.
    dw: Vec<f64>,
    /// Partial sums of fine increments within this coarse step, `[j][l1][f]`
    /// with `prefix[f] = sum_{g<f} dW_g`. Empty for Euler steps.
    prefix: Vec<f64>,
    level: usize,
    step: usize,
    q: usize,
    h: f64,
    d: usize,
    m: usize,
}

/// Per-worker scratch buffers for the particle update.
struct Scratch {
    /// Drift value (d).
    b: Vec<f64>,
    /// Hoisted coefficient gradients (d*m gradients of length d).
    grad: Vec<f64>,
    /// Correction accumulator (d*m).
    lam: Vec<f64>,
}

impl Scratch {
    fn new(d: usize, m: usize) -> Self {
        Self {
            b: vec![0.0; d],
            grad: vec![0.0; d * m * d],
            lam: vec![0.0; d * m],
        }
    }
}

impl<'a, M: CoefficientModel> StepCtx<'a, M> {
    fn prepare(
        model: &'a M,
        state: &SimState,
        lattice: &'a BrownianLattice,
        level: usize,
        step: usize,
        milstein: bool,
    ) -> Result<Self, SimError> {
        check_shapes(model, state, lattice)?;
        let q = lattice.stride_for(level)?;
        if step >= level {
            return Err(SimError::Noise(NoiseError::StepOutOfRange { step, level }));
        }
        let d = model.state_dim();
        let m = model.noise_dim();
        let n = state.particles();
        let h = lattice.horizon() / level as f64;
        let mu = state.measure();

        // sigma(X^j, mu) once per particle: reused by the diffusion term of j
        // and by the Lambda coefficient contractions of every other particle.
        let mut sigma_all = vec![0.0; n * d * m];
        for (j, block) in sigma_all.chunks_exact_mut(d * m).enumerate() {
            model.diffusion(mu.atom(j), &mu, block);
        }

        // Coarse increments for this step, and (for Milstein) the running
        // partial sums that feed the sub-grid iterated-integral estimator.
        let mut dw = vec![0.0; n * m];
        let mut prefix = if milstein { vec![0.0; n * m * q] } else { Vec::new() };
        for i in 0..n {
            for l in 0..m {
                let fine = &lattice.fine_increments(i, l)[step * q..(step + 1) * q];
                let mut partial = 0.0;
                if milstein {
                    let row = &mut prefix[(i * m + l) * q..(i * m + l + 1) * q];
                    for (f, w) in fine.iter().enumerate() {
                        row[f] = partial;
                        partial += w;
                    }
                } else {
                    for w in fine {
                        partial += w;
                    }
                }
                dw[i * m + l] = partial;
            }
        }

        Ok(Self {
            model,
            lattice,
            mu,
            sigma_all,
            dw,
            prefix,
            level,
            step,
            q,
            h,
            d,
            m,
        })
    }

    fn check_particle(&self, i: usize) -> Result<(), SimError> {
        if i >= self.mu.len() {
            return Err(SimError::ParticleOutOfRange {
                index: i,
                count: self.mu.len(),
            });
        }
        Ok(())
    }

    /// Engine-path iterated integral `I[j,i; l1,l]`; bitwise-identical to
    /// [`BrownianLattice::iterated_integral`] (same accumulation order).
    #[inline]
    fn iterated(&self, j: usize, l1: usize, i: usize, l: usize) -> f64 {
        if i == j && l1 == l {
            let dw = self.dw[i * self.m + l];
            (dw * dw - self.h) / 2.0
        } else {
            let p = &self.prefix[(j * self.m + l1) * self.q..(j * self.m + l1 + 1) * self.q];
            let v = &self.lattice.fine_increments(i, l)
                [self.step * self.q..(self.step + 1) * self.q];
            let mut acc = 0.0;
            for (pf, vf) in p.iter().zip(v) {
                acc += pf * vf;
            }
            acc
        }
    }

    fn sigma(&self, j: usize) -> &[f64] {
        &self.sigma_all[j * self.d * self.m..(j + 1) * self.d * self.m]
    }

    /// `Lambda1` for particle `i`, accumulated into `out` (d*m). `grad` is a
    /// scratch buffer of length `d*m*d`.
    fn lambda1_into(&self, i: usize, out: &mut [f64], grad: &mut [f64]) {
        let (d, m) = (self.d, self.m);
        let x_i = self.mu.atom(i);
        let sig_i = self.sigma(i);
        // Hoist the state gradients of every diffusion entry.
        for k in 0..d {
            for l in 0..m {
                let g = &mut grad[(k * m + l) * d..(k * m + l + 1) * d];
                self.model.diffusion_dx(k, l, x_i, &self.mu, g);
            }
        }
        for l1 in 0..m {
            for l in 0..m {
                let mut ival = 0.0;
                let mut have_ival = false;
                for k in 0..d {
                    let g = &grad[(k * m + l) * d..(k * m + l + 1) * d];
                    let mut coef = 0.0;
                    for c in 0..d {
                        coef += g[c] * sig_i[c * m + l1];
                    }
                    if coef != 0.0 {
                        if !have_ival {
                            ival = self.iterated(i, l1, i, l);
                            have_ival = true;
                        }
                        out[k * m + l] += coef * ival;
                    }
                }
            }
        }
    }

    /// `Lambda2` for particle `i`, accumulated into `out` (d*m). `grad` is a
    /// scratch buffer of length `d*m*d`. Reduction order is fixed: ascending
    /// `j`, then `l1`.
    fn lambda2_into(&self, i: usize, out: &mut [f64], grad: &mut [f64]) {
        let (d, m) = (self.d, self.m);
        let n = self.mu.len();
        let x_i = self.mu.atom(i);
        for j in 0..n {
            let y = self.mu.atom(j);
            let sig_j = self.sigma(j);
            // Hoist the measure gradients at atom j.
            for k in 0..d {
                for l in 0..m {
                    let g = &mut grad[(k * m + l) * d..(k * m + l + 1) * d];
                    self.model.diffusion_dmu(k, l, x_i, &self.mu, y, g);
                }
            }
            for l1 in 0..m {
                for l in 0..m {
                    let mut ival = 0.0;
                    let mut have_ival = false;
                    for k in 0..d {
                        let g = &grad[(k * m + l) * d..(k * m + l + 1) * d];
                        let mut coef = 0.0;
                        for c in 0..d {
                            coef += g[c] * sig_j[c * m + l1];
                        }
                        // Skipping a zero coefficient never changes the
                        // accumulator; it just avoids the sub-grid pass for
                        // models without measure-dependent diffusion.
                        if coef != 0.0 {
                            if !have_ival {
                                ival = self.iterated(j, l1, i, l);
                                have_ival = true;
                            }
                            out[k * m + l] += coef * ival;
                        }
                    }
                }
            }
        }
        let n_f = n as f64;
        for v in out.iter_mut() {
            *v /= n_f;
        }
    }

    /// Advances particle `i` into `row`; returns false when the update left
    /// the finite range.
    fn particle(
        &self,
        i: usize,
        scheme: Scheme,
        opts: &StepOptions,
        row: &mut [f64],
        scratch: &mut Scratch,
    ) -> bool {
        let (d, m) = (self.d, self.m);
        let x_i = self.mu.atom(i);
        self.model.drift(x_i, &self.mu, &mut scratch.b);
        let divisor = if opts.tamed {
            taming_divisor(self.model.growth_exponent(), self.level, x_i)
        } else {
            1.0
        };
        let sig_i = self.sigma(i);
        for k in 0..d {
            let mut acc = x_i[k] + self.h * (scratch.b[k] / divisor);
            for l in 0..m {
                acc += sig_i[k * m + l] * self.dw[i * m + l];
            }
            row[k] = acc;
        }
        if scheme == Scheme::Milstein {
            scratch.lam.iter_mut().for_each(|v| *v = 0.0);
            self.lambda1_into(i, &mut scratch.lam, &mut scratch.grad);
            for k in 0..d {
                for l in 0..m {
                    row[k] += scratch.lam[k * m + l];
                }
            }
            if opts.lambda2 {
                scratch.lam.iter_mut().for_each(|v| *v = 0.0);
                self.lambda2_into(i, &mut scratch.lam, &mut scratch.grad);
                for k in 0..d {
                    for l in 0..m {
                        row[k] += scratch.lam[k * m + l];
                    }
                }
            }
        }
        row.iter().all(|v| v.is_finite())
    }
}

fn advance<M: CoefficientModel>(
    model: &M,
    state: &SimState,
    lattice: &BrownianLattice,
    level: usize,
    step: usize,
    scheme: Scheme,
    opts: &StepOptions,
) -> Result<SimState, SimError> {
    let ctx = StepCtx::prepare(
        model,
        state,
        lattice,
        level,
        step,
        scheme == Scheme::Milstein,
    )?;
    let d = ctx.d;
    let mut positions = vec![0.0; state.positions.len()];

    #[cfg(feature = "parallel")]
    let diverged: Option<usize> = positions
        .par_chunks_mut(d)
        .enumerate()
        .map_init(
            || Scratch::new(ctx.d, ctx.m),
            |scratch, (i, row)| {
                if ctx.particle(i, scheme, opts, row, scratch) {
                    None
                } else {
                    Some(i)
                }
            },
        )
        .filter_map(|x| x)
        .min();

    #[cfg(not(feature = "parallel"))]
    let diverged: Option<usize> = {
        let mut scratch = Scratch::new(ctx.d, ctx.m);
        positions
            .chunks_mut(d)
            .enumerate()
            .filter_map(|(i, row)| {
                if ctx.particle(i, scheme, opts, row, &mut scratch) {
                    None
                } else {
                    Some(i)
                }
            })
            .min()
    };

    let time = ctx.h * (step + 1) as f64;
    if let Some(particle) = diverged {
        return Err(SimError::Divergence(DivergenceEvent {
            step: step + 1,
            time,
            particle,
        }));
    }
    Ok(SimState {
        step: step + 1,
        time,
        dim: d,
        positions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{tame_drift, GinzburgLandau, LinearMeanField};
    use approx::assert_relative_eq;

    /// dX = -X dt + dW: constant diffusion, no measure coupling.
    #[derive(Debug)]
    struct AdditiveNoise;

    impl CoefficientModel for AdditiveNoise {
        fn state_dim(&self) -> usize {
            1
        }
        fn noise_dim(&self) -> usize {
            1
        }
        fn growth_exponent(&self) -> f64 {
            0.0
        }
        fn drift(&self, x: &[f64], _mu: &EmpiricalMeasure, out: &mut [f64]) {
            out[0] = -x[0];
        }
        fn diffusion(&self, _x: &[f64], _mu: &EmpiricalMeasure, out: &mut [f64]) {
            out[0] = 1.0;
        }
        fn drift_dx(&self, _k: usize, _x: &[f64], _mu: &EmpiricalMeasure, out: &mut [f64]) {
            out[0] = -1.0;
        }
        fn drift_dmu(
            &self,
            _k: usize,
            _x: &[f64],
            _mu: &EmpiricalMeasure,
            _y: &[f64],
            out: &mut [f64],
        ) {
            out[0] = 0.0;
        }
        fn diffusion_dx(
            &self,
            _k: usize,
            _l: usize,
            _x: &[f64],
            _mu: &EmpiricalMeasure,
            out: &mut [f64],
        ) {
            out[0] = 0.0;
        }
        fn diffusion_dmu(
            &self,
            _k: usize,
            _l: usize,
            _x: &[f64],
            _mu: &EmpiricalMeasure,
            _y: &[f64],
            out: &mut [f64],
        ) {
            out[0] = 0.0;
        }
    }

    /// d = 1, m = 2, sigma = (x, 2): exercises the cross-component Lambda1
    /// coupling without any measure dependence.
    #[derive(Debug)]
    struct TwoNoise;

    impl CoefficientModel for TwoNoise {
        fn state_dim(&self) -> usize {
            1
        }
        fn noise_dim(&self) -> usize {
            2
        }
        fn growth_exponent(&self) -> f64 {
            0.0
        }
        fn drift(&self, x: &[f64], _mu: &EmpiricalMeasure, out: &mut [f64]) {
            out[0] = -x[0];
        }
        fn diffusion(&self, x: &[f64], _mu: &EmpiricalMeasure, out: &mut [f64]) {
            out[0] = x[0];
            out[1] = 2.0;
        }
        fn drift_dx(&self, _k: usize, _x: &[f64], _mu: &EmpiricalMeasure, out: &mut [f64]) {
            out[0] = -1.0;
        }
        fn drift_dmu(
            &self,
            _k: usize,
            _x: &[f64],
            _mu: &EmpiricalMeasure,
            _y: &[f64],
            out: &mut [f64],
        ) {
            out[0] = 0.0;
        }
        fn diffusion_dx(
            &self,
            _k: usize,
            l: usize,
            _x: &[f64],
            _mu: &EmpiricalMeasure,
            out: &mut [f64],
        ) {
            out[0] = if l == 0 { 1.0 } else { 0.0 };
        }
        fn diffusion_dmu(
            &self,
            _k: usize,
            _l: usize,
            _x: &[f64],
            _mu: &EmpiricalMeasure,
            _y: &[f64],
            out: &mut [f64],
        ) {
            out[0] = 0.0;
        }
    }

    fn single_path_lattice(first_increment: f64, n_fine: usize) -> BrownianLattice {
        let mut inc = vec![0.0; n_fine];
        inc[0] = first_increment;
        BrownianLattice::from_increments(1, 1, n_fine, 1.0, inc).unwrap()
    }

    #[test]
    fn tamed_milstein_hand_example() {
        // One step of the tamed Milstein scheme for the scalar model
        // b = x/2 - x^3, sigma = x at x = 1, h = 0.01, dW = 0.3:
        //   drift:    0.01 * (-0.5 / 1.01)        = -0.004950495...
        //   noise:    1 * 0.3
        //   Lambda1:  1 * 1 * (0.3^2 - 0.01) / 2  =  0.04
        // giving X_1 = 1.3350495...
        let model = GinzburgLandau {
            alpha: 1.0,
            c: 0.0,
        };
        let lat = single_path_lattice(0.3, 100);
        let state = SimState::new(vec![1.0], 1).unwrap();
        let next =
            milstein_step(&model, &state, &lat, 100, 0, &StepOptions::default()).unwrap();
        assert!((next.particle(0)[0] - 1.3350495).abs() < 1e-7);
        assert_eq!(next.step(), 1);
        assert_relative_eq!(next.time(), 0.01);
    }

    #[test]
    fn tamed_euler_hand_example() {
        // Zero noise, b = -x^3 at x = 1, h = 0.1, level 10:
        // tamed x_1 = 1 - 0.1/(1 + 1/10) = 0.9090909...; untamed x_1 = 0.9.
        let model = GinzburgLandau {
            alpha: 0.0,
            c: 0.0,
        };
        let lat = single_path_lattice(0.0, 10);
        let state = SimState::new(vec![1.0], 1).unwrap();
        let tamed = euler_step(&model, &state, &lat, 10, 0, &StepOptions::default()).unwrap();
        assert_relative_eq!(tamed.particle(0)[0], 0.9090909090909091, epsilon = 1e-15);
        let untamed = euler_step(
            &model,
            &state,
            &lat,
            10,
            0,
            &StepOptions {
                tamed: false,
                lambda2: true,
            },
        )
        .unwrap();
        assert_eq!(untamed.particle(0)[0], 0.9);
    }

    #[test]
    fn milstein_reduces_to_euler_for_additive_noise() {
        let cfg = SimConfig {
            particles: 8,
            level: 16,
            n_fine: 32,
            horizon: 1.0,
            scheme: Scheme::Euler,
            tamed: true,
            lambda2: true,
            seed: 7,
            initial: InitialLaw::Gaussian {
                mean: vec![0.0],
                std: 1.0,
            },
            stride: 16,
        };
        let euler = simulate(&AdditiveNoise, &cfg).unwrap();
        let milstein = simulate(
            &AdditiveNoise,
            &SimConfig {
                scheme: Scheme::Milstein,
                ..cfg
            },
        )
        .unwrap();
        // All correction coefficients vanish, so the paths agree bitwise.
        assert_eq!(
            euler.terminal().positions(),
            milstein.terminal().positions()
        );
    }

    #[test]
    fn runs_are_bitwise_deterministic() {
        let model = GinzburgLandau {
            alpha: 1.0,
            c: 0.5,
        };
        let cfg = SimConfig {
            particles: 16,
            level: 8,
            n_fine: 32,
            horizon: 1.0,
            scheme: Scheme::Milstein,
            tamed: true,
            lambda2: true,
            seed: 42,
            initial: InitialLaw::Uniform { lo: -1.0, hi: 1.0 },
            stride: 8,
        };
        let a = simulate(&model, &cfg).unwrap();
        let b = simulate(&model, &cfg).unwrap();
        assert_eq!(a.terminal().positions(), b.terminal().positions());
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn worker_count_does_not_change_bits() {
        let model = LinearMeanField {
            a: -1.0,
            abar: 0.5,
            bcoef: 0.2,
            bbar: 0.1,
        };
        let cfg = SimConfig {
            particles: 12,
            level: 8,
            n_fine: 16,
            horizon: 1.0,
            scheme: Scheme::Milstein,
            tamed: true,
            lambda2: true,
            seed: 3,
            initial: InitialLaw::Gaussian {
                mean: vec![0.5],
                std: 0.2,
            },
            stride: 8,
        };
        let run_with = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate(&model, &cfg).unwrap())
        };
        let one = run_with(1);
        let three = run_with(3);
        assert_eq!(one.terminal().positions(), three.terminal().positions());
    }

    #[test]
    fn particle_relabeling_permutes_the_solution() {
        let model = GinzburgLandau {
            alpha: 1.0,
            c: 0.5,
        };
        let lat = BrownianLattice::generate(5, 4, 1, 16, 1.0).unwrap();
        let x0 = vec![0.2, -0.4, 1.0, 0.7];
        let perm = [2usize, 0, 3, 1];
        let mut permuted_inc = Vec::with_capacity(4 * 16);
        for i in 0..4 {
            permuted_inc.extend_from_slice(lat.fine_increments(perm[i], 0));
        }
        let lat_p = BrownianLattice::from_increments(4, 1, 16, 1.0, permuted_inc).unwrap();
        let x0_p: Vec<f64> = perm.iter().map(|&j| x0[j]).collect();
        let opts = RunOptions {
            level: 8,
            scheme: Scheme::Milstein,
            step: StepOptions::default(),
            stride: 8,
        };
        let base = run_on_lattice(&model, &lat, x0, &opts).unwrap();
        let relabeled = run_on_lattice(&model, &lat_p, x0_p, &opts).unwrap();
        // Exact up to floating-point reassociation in the measure reductions.
        for i in 0..4 {
            assert_relative_eq!(
                relabeled.terminal().particle(i)[0],
                base.terminal().particle(perm[i])[0],
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn untamed_euler_diverges_and_taming_prevents_it() {
        let model = GinzburgLandau {
            alpha: 1.0,
            c: 0.5,
        };
        let cfg = SimConfig {
            particles: 4,
            level: 16,
            n_fine: 16,
            horizon: 1.0,
            scheme: Scheme::Euler,
            tamed: false,
            lambda2: true,
            seed: 2,
            initial: InitialLaw::Constant(vec![10.0]),
            stride: 16,
        };
        match simulate(&model, &cfg) {
            Err(SimError::Divergence(ev)) => {
                assert!(ev.step >= 1 && ev.step <= 16);
                assert!(ev.particle < 4);
                assert!(format!("{ev}").contains("diverged"));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
        let tamed = simulate(
            &model,
            &SimConfig {
                tamed: true,
                ..cfg
            },
        )
        .unwrap();
        assert!(tamed
            .terminal()
            .positions()
            .iter()
            .all(|v| v.is_finite()));
    }

    #[test]
    fn lambda1_matches_manual_contraction() {
        // For sigma = (x, 2): Lambda1[0] = x I[(1,1)] + 2 I[(2,1)] and
        // Lambda1[1] = 0 because the second column has zero state gradient.
        let lat = BrownianLattice::generate(9, 1, 2, 8, 1.0).unwrap();
        let x = 0.7;
        let state = SimState::new(vec![x], 1).unwrap();
        let (level, step) = (4, 1);
        let lam = lambda1(&TwoNoise, &state, &lat, 0, level, step).unwrap();
        let i00 = lat.iterated_integral(level, 0, 0, 0, 0, step).unwrap();
        let i10 = lat.iterated_integral(level, 0, 0, 1, 0, step).unwrap();
        assert_eq!(lam[0], x * i00 + 2.0 * i10);
        assert_eq!(lam[1], 0.0);
    }

    #[test]
    fn lambda2_single_particle_example() {
        // N = 1: Lambda2 = bbar * sigma(x) * I[(1,1)] with sigma(x) = 0.15.
        let model = LinearMeanField {
            a: -1.0,
            abar: 0.5,
            bcoef: 0.2,
            bbar: 0.1,
        };
        let lat = BrownianLattice::generate(4, 1, 1, 8, 1.0).unwrap();
        let state = SimState::new(vec![0.5], 1).unwrap();
        let lam = lambda2(&model, &state, &lat, 0, 8, 3).unwrap();
        let ival = lat.iterated_integral(8, 0, 0, 0, 0, 3).unwrap();
        let sigma = 0.2 * 0.5 + 0.1 * 0.5;
        assert_relative_eq!(lam[0], 0.1 * sigma * ival, max_relative = 1e-14);
    }

    #[test]
    fn lambda2_couples_every_particle_pair() {
        let model = LinearMeanField {
            a: -1.0,
            abar: 0.5,
            bcoef: 0.2,
            bbar: 0.1,
        };
        let lat = BrownianLattice::generate(6, 2, 1, 16, 1.0).unwrap();
        let state = SimState::new(vec![0.5, -0.3], 1).unwrap();
        let (level, step) = (4, 2);
        let lam = lambda2(&model, &state, &lat, 0, level, step).unwrap();
        let mu = state.measure();
        let sig = |x: f64| 0.2 * x + 0.1 * mu.mean()[0];
        let i00 = lat.iterated_integral(level, 0, 0, 0, 0, step).unwrap();
        let i10 = lat.iterated_integral(level, 0, 1, 0, 0, step).unwrap();
        let expected = (0.1 * sig(0.5) * i00 + 0.1 * sig(-0.3) * i10) / 2.0;
        assert_relative_eq!(lam[0], expected, max_relative = 1e-14);
        // The cross term is genuinely non-trivial at q = 4.
        assert_ne!(i10, 0.0);
    }

    #[test]
    fn engine_step_decomposes_into_public_operations() {
        let model = LinearMeanField {
            a: -1.0,
            abar: 0.5,
            bcoef: 0.2,
            bbar: 0.1,
        };
        let lat = BrownianLattice::generate(11, 3, 1, 8, 1.0).unwrap();
        let state = SimState::new(vec![0.4, -0.2, 0.9], 1).unwrap();
        let (level, step) = (4, 0);
        let next =
            milstein_step(&model, &state, &lat, level, step, &StepOptions::default()).unwrap();
        let mu = state.measure();
        let h = 1.0 / level as f64;
        for i in 0..3 {
            let x = state.particle(i)[0];
            let b_tamed = tame_drift(&model, level, state.particle(i), &mu).unwrap();
            let mut sigma = [0.0];
            model.diffusion(state.particle(i), &mu, &mut sigma);
            let dw = lat.coarse_increment(level, i, 0, step).unwrap();
            let lam1 = lambda1(&model, &state, &lat, i, level, step).unwrap();
            let lam2 = lambda2(&model, &state, &lat, i, level, step).unwrap();
            let mut acc = x + h * b_tamed[0];
            acc += sigma[0] * dw;
            acc += lam1[0];
            acc += lam2[0];
            assert_eq!(next.particle(i)[0], acc);
        }
    }

    #[test]
    fn snapshots_keep_initial_and_terminal_states() {
        let model = AdditiveNoise;
        let cfg = SimConfig {
            particles: 2,
            level: 8,
            n_fine: 8,
            horizon: 2.0,
            scheme: Scheme::Euler,
            tamed: true,
            lambda2: true,
            seed: 1,
            initial: InitialLaw::Constant(vec![1.0]),
            stride: 3,
        };
        let traj = simulate(&model, &cfg).unwrap();
        let steps: Vec<usize> = traj.snapshots().iter().map(|s| s.step()).collect();
        assert_eq!(steps, vec![0, 3, 6, 8]);
        assert_eq!(traj.terminal().step(), 8);
        assert_relative_eq!(traj.terminal().time(), 2.0, epsilon = 1e-12);
        assert_eq!(traj.particles(), 2);
    }

    #[test]
    fn initial_draws_nest_across_population_sizes() {
        let model = AdditiveNoise;
        let mk = |particles: usize| SimConfig {
            particles,
            level: 2,
            n_fine: 2,
            horizon: 1.0,
            scheme: Scheme::Euler,
            tamed: true,
            lambda2: true,
            seed: 9,
            initial: InitialLaw::Gaussian {
                mean: vec![0.0],
                std: 1.0,
            },
            stride: 2,
        };
        let small = simulate(&model, &mk(4)).unwrap();
        let large = simulate(&model, &mk(8)).unwrap();
        assert_eq!(
            small.snapshots()[0].positions(),
            &large.snapshots()[0].positions()[..4]
        );
        let uniform = simulate(
            &model,
            &SimConfig {
                initial: InitialLaw::Uniform { lo: -2.0, hi: -1.0 },
                ..mk(16)
            },
        )
        .unwrap();
        assert!(uniform.snapshots()[0]
            .positions()
            .iter()
            .all(|&v| (-2.0..=-1.0).contains(&v)));
    }

    #[test]
    fn shape_errors_are_reported() {
        let model = GinzburgLandau {
            alpha: 1.0,
            c: 0.0,
        };
        let lat = BrownianLattice::generate(1, 2, 1, 8, 1.0).unwrap();
        let opts = RunOptions {
            level: 4,
            scheme: Scheme::Euler,
            step: StepOptions::default(),
            stride: 1,
        };
        assert!(matches!(
            run_on_lattice(&model, &lat, vec![1.0], &opts),
            Err(SimError::ParticleMismatch { .. })
        ));
        assert!(matches!(
            run_on_lattice(
                &model,
                &lat,
                vec![1.0, 2.0],
                &RunOptions { stride: 0, ..opts }
            ),
            Err(SimError::ZeroStride)
        ));
        let wide = BrownianLattice::generate(1, 2, 3, 8, 1.0).unwrap();
        assert!(matches!(
            run_on_lattice(&model, &wide, vec![1.0, 2.0], &opts),
            Err(SimError::ComponentMismatch { .. })
        ));
        let state = SimState::new(vec![1.0, 2.0], 1).unwrap();
        assert!(matches!(
            euler_step(&model, &state, &lat, 4, 4, &StepOptions::default()),
            Err(SimError::Noise(NoiseError::StepOutOfRange { .. }))
        ));
        assert!(matches!(
            lambda1(&model, &state, &lat, 2, 4, 0),
            Err(SimError::ParticleOutOfRange { .. })
        ));
        assert!(matches!(
            SimState::new(vec![1.0, f64::NAN], 1),
            Err(SimError::NonFiniteState)
        ));
        let bad_initial = SimConfig {
            particles: 2,
            level: 4,
            n_fine: 8,
            horizon: 1.0,
            scheme: Scheme::Euler,
            tamed: true,
            lambda2: true,
            seed: 0,
            initial: InitialLaw::Constant(vec![1.0, 2.0]),
            stride: 1,
        };
        assert!(matches!(
            simulate(&model, &bad_initial),
            Err(SimError::BadInitialLaw { .. })
        ));
    }
}
