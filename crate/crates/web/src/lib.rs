//! Browser bindings for the particle engine (compiled to WebAssembly).
//!
//! Three demo operations back the static page in `www/`:
//!
//! * [`simulate_paths`] — run a Ginzburg-Landau particle system and return
//!   the per-particle paths, for fan charts of the mean-field clustering.
//! * [`convergence_curve`] — a small coupled strong-error study, for the
//!   log2-log2 rate plot that separates Milstein from Euler.
//! * [`taming_comparison`] — tamed vs. untamed Euler on the *same* noise,
//!   for the blow-up demonstration; the untamed path is truncated at its
//!   divergence event.
//!
//! Every function returns a JSON string: either the payload or
//! `{"error": "..."}`. Keeping the boundary stringly-typed avoids marshaling
//! nested arrays through `JsValue` and makes the bindings trivially testable
//! on the native target (the wasm-bindgen glue is inert off-wasm).
//!
//! Inputs are clamped (particle counts, step counts) so a stray slider can't
//! freeze the tab: the engine is O(N^2) per step in the worst case.

use serde::Serialize;
use wasm_bindgen::prelude::wasm_bindgen;

use mvsde::analysis::{strong_error, ErrorMetric, StudyConfig};
use mvsde::scheme::{euler_step, SimState, StepOptions};
use mvsde::{simulate, BrownianLattice, GinzburgLandau, InitialLaw, Scheme, SimConfig};

const MAX_PARTICLES: usize = 256;
const MAX_STEPS: usize = 2048;

#[derive(Serialize)]
struct ErrorPayload<'a> {
    error: &'a str,
}

fn error_json(message: &str) -> String {
    serde_json::to_string(&ErrorPayload { error: message }).expect("error payload serializes")
}

fn to_json<T: Serialize>(payload: &T) -> String {
    serde_json::to_string(payload).unwrap_or_else(|err| error_json(&err.to_string()))
}

#[derive(Serialize)]
struct PathsPayload {
    times: Vec<f64>,
    /// One series per particle, aligned with `times`.
    paths: Vec<Vec<f64>>,
    /// The empirical mean at each stored time.
    mean: Vec<f64>,
}

/// Simulates the Ginzburg-Landau system `b = (alpha^2/2) x - x^3 + c mean`,
/// `sigma = alpha x` (tamed Milstein) from i.i.d. standard normal starts and
/// returns the stored paths. Snapshots are thinned to at most ~256 per path.
#[wasm_bindgen]
pub fn simulate_paths(alpha: f64, c: f64, particles: u32, n: u32, seed: u32) -> String {
    let particles = particles as usize;
    let n = n as usize;
    if particles == 0 || particles > MAX_PARTICLES {
        return error_json("particles must be in 1..=256");
    }
    if n == 0 || n > MAX_STEPS {
        return error_json("steps must be in 1..=2048");
    }
    let model = GinzburgLandau { alpha, c };
    let config = SimConfig {
        particles,
        level: n,
        n_fine: n,
        horizon: 1.0,
        scheme: Scheme::Milstein,
        tamed: true,
        lambda2: true,
        seed: seed as u64,
        initial: InitialLaw::Gaussian {
            mean: vec![0.0],
            std: 1.0,
        },
        stride: n.div_ceil(256),
    };
    let trajectory = match simulate(&model, &config) {
        Ok(trajectory) => trajectory,
        Err(err) => return error_json(&err.to_string()),
    };
    let snapshots = trajectory.snapshots();
    let times: Vec<f64> = snapshots.iter().map(|s| s.time()).collect();
    let paths: Vec<Vec<f64>> = (0..particles)
        .map(|i| snapshots.iter().map(|s| s.particle(i)[0]).collect())
        .collect();
    let mean = snapshots.iter().map(|s| s.measure().mean()[0]).collect();
    to_json(&PathsPayload { times, paths, mean })
}

#[derive(Serialize)]
struct CurvePayload {
    levels: Vec<usize>,
    h: Vec<f64>,
    rmse: Vec<f64>,
    /// Fitted log2-log2 slope; `null` when the scheme reproduced the
    /// reference exactly.
    slope: Option<f64>,
}

/// Runs a small coupled strong-error study (Ginzburg-Landau, alpha=1,
/// c=0.5, N=16, levels 8..64 against a 1024-step reference) and returns the
/// rate curve. `milstein = false` selects tamed Euler for the order-1/2
/// baseline.
#[wasm_bindgen]
pub fn convergence_curve(milstein: bool, seed: u32, repetitions: u32) -> String {
    let repetitions = repetitions as usize;
    if repetitions == 0 || repetitions > 64 {
        return error_json("repetitions must be in 1..=64");
    }
    let model = GinzburgLandau { alpha: 1.0, c: 0.5 };
    let config = StudyConfig {
        particles: 16,
        horizon: 1.0,
        levels: vec![8, 16, 32, 64],
        n_ref: 1024,
        n_fine: None,
        repetitions,
        seed: seed as u64,
        initial: InitialLaw::Constant(vec![1.0]),
        scheme: if milstein {
            Scheme::Milstein
        } else {
            Scheme::Euler
        },
        tamed: true,
        lambda2: true,
        metric: ErrorMetric::Terminal,
    };
    let report = match strong_error(&model, &config) {
        Ok(report) => report,
        Err(err) => return error_json(&err.to_string()),
    };
    to_json(&CurvePayload {
        levels: report.levels.iter().map(|row| row.level).collect(),
        h: report.levels.iter().map(|row| row.h).collect(),
        rmse: report.levels.iter().map(|row| row.rmse).collect(),
        slope: report.rate.slope(),
    })
}

#[derive(Serialize)]
struct TamingPayload {
    times: Vec<f64>,
    tamed: Vec<Vec<f64>>,
    /// Truncated at the divergence event when one occurs.
    untamed: Vec<Vec<f64>>,
    diverged_step: Option<usize>,
    diverged_time: Option<f64>,
}

/// Drives tamed and untamed Euler over the *same* Brownian lattice
/// (Ginzburg-Landau, alpha=1, c=0.5, 8 particles all starting at `x0`) and
/// returns both path bundles. Large `|x0|` with few steps makes the untamed
/// run leave the finite range; its bundle stops at the last finite state and
/// the divergence step is reported.
#[wasm_bindgen]
pub fn taming_comparison(x0: f64, n: u32, seed: u32) -> String {
    let n = n as usize;
    if n == 0 || n > MAX_STEPS {
        return error_json("steps must be in 1..=2048");
    }
    if !x0.is_finite() {
        return error_json("x0 must be finite");
    }
    let particles = 8;
    let model = GinzburgLandau { alpha: 1.0, c: 0.5 };
    let lattice = match BrownianLattice::generate(seed as u64, particles, 1, n, 1.0) {
        Ok(lattice) => lattice,
        Err(err) => return error_json(&err.to_string()),
    };

    // Step manually so the untamed run can keep its pre-divergence prefix
    // (the one-shot runner returns only the event).
    let run = |tamed: bool| -> (Vec<SimState>, Option<(usize, f64)>) {
        let opts = StepOptions {
            tamed,
            lambda2: true,
        };
        let mut states =
            vec![SimState::new(vec![x0; particles], 1).expect("finite initial state")];
        for step in 0..n {
            match euler_step(&model, states.last().expect("non-empty"), &lattice, n, step, &opts)
            {
                Ok(next) => states.push(next),
                Err(_) => {
                    let time = (step + 1) as f64 / n as f64;
                    return (states, Some((step, time)));
                }
            }
        }
        (states, None)
    };

    let (tamed_states, tamed_event) = run(true);
    debug_assert!(tamed_event.is_none() || x0.abs() > 1e3, "taming failed");
    let (untamed_states, untamed_event) = run(false);

    let bundle = |states: &[SimState]| -> Vec<Vec<f64>> {
        (0..particles)
            .map(|i| states.iter().map(|s| s.particle(i)[0]).collect())
            .collect()
    };
    to_json(&TamingPayload {
        times: (0..=n).map(|k| k as f64 / n as f64).collect(),
        tamed: bundle(&tamed_states),
        untamed: bundle(&untamed_states),
        diverged_step: untamed_event.map(|(step, _)| step),
        diverged_time: untamed_event.map(|(_, time)| time),
    })
}
