//! Coefficient models `b(x, mu)`, `sigma(x, mu)` and drift taming.
//!
//! A model supplies the drift `b : R^d x P(R^d) -> R^d`, the diffusion
//! `sigma : R^d x P(R^d) -> R^(d x m)`, and four first derivatives:
//!
//! * `d_x b^(k)` and `d_x sigma^(k,l)` — ordinary gradients in the state,
//! * `d_mu b^(k)(x, mu, y)` and `d_mu sigma^(k,l)(x, mu, y)` — Lions
//!   derivatives in the measure, evaluated at an atom position `y`.
//!
//! The Lions derivative is the gradient of the lifted coefficient on the
//! space of square-integrable random variables. For empirical measures it
//! obeys the projection identity that the validator exploits: perturbing atom
//! `y_j` of `mu = (1/N) sum delta_{y_j}` moves `f(x, mu)` with gradient
//! `(1/N) d_mu f(x, mu, y_j)`.
//!
//! # Taming
//!
//! Super-linear drifts (e.g. the cubic `-x^3`) make explicit schemes explode
//! with positive probability. The tamed drift
//!
//! ```text
//! b_n(x, mu) = b(x, mu) / (1 + n^-1 |x|^(rho+2))
//! ```
//!
//! is used instead, where `rho` bounds the drift's polynomial growth
//! (`|b(x, mu) - b(y, mu)| <= L (1 + |x| + |y|)^rho |x - y|`) and `n` is the
//! step level of the run. The divisor is >= 1, so taming only ever shrinks
//! the drift, it vanishes as `n -> infinity` at fixed `x`, and it caps the
//! per-step displacement so that `|b_n| <= K min{ sqrt(n) (1 + |x|),
//! (1 + |x|)^(rho/2 + 2) }`.

use serde::Serialize;
use thiserror::Error;

use crate::measure::EmpiricalMeasure;

/// Coefficients of a McKean-Vlasov equation together with their first
/// derivatives.
///
/// All evaluation methods write into caller-provided slices (the scheme's
/// inner loops are allocation-free). Layouts:
///
/// * `drift`: `out` has length `d`.
/// * `diffusion`: `out` has length `d * m`, row-major (`out[k*m + l]` is
///   `sigma^(k,l)`).
/// * `drift_dx(k)`, `drift_dmu(k)`: gradient of the k-th drift component,
///   length `d`.
/// * `diffusion_dx(k, l)`, `diffusion_dmu(k, l)`: gradient of the (k,l)
///   diffusion entry, length `d`.
///
/// Implementations must be pure functions of their arguments: the scheme
/// evaluates them against a frozen state snapshot and assumes repeated calls
/// agree.
pub trait CoefficientModel: Sync {
    /// State dimension `d`.
    fn state_dim(&self) -> usize;
    /// Driving-noise dimension `m`.
    fn noise_dim(&self) -> usize;
    /// Polynomial growth exponent `rho` of the drift (taming uses
    /// `|x|^(rho+2)`).
    fn growth_exponent(&self) -> f64;

    fn drift(&self, x: &[f64], mu: &EmpiricalMeasure, out: &mut [f64]);
    fn diffusion(&self, x: &[f64], mu: &EmpiricalMeasure, out: &mut [f64]);
    fn drift_dx(&self, k: usize, x: &[f64], mu: &EmpiricalMeasure, out: &mut [f64]);
    fn drift_dmu(
        &self,
        k: usize,
        x: &[f64],
        mu: &EmpiricalMeasure,
        y: &[f64],
        out: &mut [f64],
    );
    fn diffusion_dx(
        &self,
        k: usize,
        l: usize,
        x: &[f64],
        mu: &EmpiricalMeasure,
        out: &mut [f64],
    );
    fn diffusion_dmu(
        &self,
        k: usize,
        l: usize,
        x: &[f64],
        mu: &EmpiricalMeasure,
        y: &[f64],
        out: &mut [f64],
    );
}

/// Errors from model-level helpers.
#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("taming level must be at least 1")]
    ZeroLevel,
    #[error("growth check needs at least four sweep points with distinct magnitudes")]
    InsufficientSweep,
    #[error("sweep points must share the model dimension {dim}")]
    DimensionMismatch { dim: usize },
}

/// The taming divisor `1 + n^-1 |x|^(rho+2)`.
pub(crate) fn taming_divisor(rho: f64, level: usize, x: &[f64]) -> f64 {
    let norm_sq: f64 = x.iter().map(|v| v * v).sum();
    1.0 + norm_sq.powf((rho + 2.0) / 2.0) / level as f64
}

/// Evaluates the tamed drift `b_n(x, mu)` at taming level `n = level`.
pub fn tame_drift<M: CoefficientModel + ?Sized>(
    model: &M,
    level: usize,
    x: &[f64],
    mu: &EmpiricalMeasure,
) -> Result<Vec<f64>, ModelError> {
    if level == 0 {
        return Err(ModelError::ZeroLevel);
    }
    let mut out = vec![0.0; model.state_dim()];
    model.drift(x, mu, &mut out);
    let div = taming_divisor(model.growth_exponent(), level, x);
    for v in &mut out {
        *v /= div;
    }
    Ok(out)
}

/// One sweep point of a [`taming_growth_check`] report.
#[derive(Debug, Clone, Serialize)]
pub struct TamingSample {
    /// `|x|` at the sweep point.
    pub magnitude: f64,
    /// `|b_n(x)| / min{ sqrt(n)(1+|x|), (1+|x|)^(rho/2+2) }`.
    pub ratio: f64,
}

/// Result of sweeping the tamed drift against its theoretical envelope.
#[derive(Debug, Clone, Serialize)]
pub struct TamingReport {
    pub samples: Vec<TamingSample>,
    pub max_ratio: f64,
    /// True when the bound ratio keeps growing with `|x|` at the top of the
    /// sweep — the signature of an understated growth exponent.
    pub growth_detected: bool,
}

/// Sweeps `|b_n| / min{ sqrt(n)(1+|x|), (1+|x|)^(rho/2+2) }` over the given
/// points and flags unbounded growth.
///
/// The sweep points double as the atoms of the measure argument. A correctly
/// declared `rho` keeps the ratio bounded by a constant; if the model's
/// drift actually grows faster than `(1+|x|)^(rho+1)`, the ratio climbs with
/// `|x|` and the check flags it.
pub fn taming_growth_check<M: CoefficientModel + ?Sized>(
    model: &M,
    level: usize,
    points: &[Vec<f64>],
) -> Result<TamingReport, ModelError> {
    if level == 0 {
        return Err(ModelError::ZeroLevel);
    }
    if points.len() < 4 {
        return Err(ModelError::InsufficientSweep);
    }
    let d = model.state_dim();
    if points.iter().any(|p| p.len() != d) {
        return Err(ModelError::DimensionMismatch { dim: d });
    }
    let flat: Vec<f64> = points.iter().flatten().copied().collect();
    let mu = EmpiricalMeasure::from_flat(flat, d).expect("finite sweep points");

    let rho = model.growth_exponent();
    let n = level as f64;
    let mut samples: Vec<TamingSample> = Vec::with_capacity(points.len());
    for x in points {
        let tamed = tame_drift(model, level, x, &mu)?;
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let envelope = (n.sqrt() * (1.0 + norm)).min((1.0 + norm).powf(rho / 2.0 + 2.0));
        let mag = tamed.iter().map(|v| v * v).sum::<f64>().sqrt();
        samples.push(TamingSample {
            magnitude: norm,
            ratio: mag / envelope,
        });
    }
    samples.sort_by(|a, b| a.magnitude.total_cmp(&b.magnitude));
    let max_ratio = samples.iter().map(|s| s.ratio).fold(0.0, f64::max);

    // Log-log slope of the ratio over the upper half of the sweep: a bounded
    // ratio fits a non-positive slope, unbounded growth a clearly positive
    // one.
    let tail = &samples[samples.len() / 2..];
    let pts: Vec<(f64, f64)> = tail
        .iter()
        .filter(|s| s.ratio > 0.0)
        .map(|s| ((1.0 + s.magnitude).ln(), s.ratio.ln()))
        .collect();
    let growth_detected = if pts.len() >= 2 {
        slope(&pts) > 0.05
    } else {
        false
    };

    Ok(TamingReport {
        samples,
        max_ratio,
        growth_detected,
    })
}

fn slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Scalar Ginzburg-Landau (stochastic phase-field) model:
///
/// ```text
/// b(x, mu)     = (alpha^2 / 2) x - x^3 + c * mean(mu)
/// sigma(x, mu) = alpha x
/// ```
///
/// Cubic drift, so `rho = 2`; the diffusion ignores the measure, the drift
/// couples to it linearly through the mean (`d_mu b = c`).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GinzburgLandau {
    pub alpha: f64,
    pub c: f64,
}

impl CoefficientModel for GinzburgLandau {
    fn state_dim(&self) -> usize {
        1
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn growth_exponent(&self) -> f64 {
        2.0
    }

    #[inline]
    fn drift(&self, x: &[f64], mu: &EmpiricalMeasure, out: &mut [f64]) {
        let x0 = x[0];
        out[0] = 0.5 * self.alpha * self.alpha * x0 - x0 * x0 * x0 + self.c * mu.mean()[0];
    }

    #[inline]
    fn diffusion(&self, x: &[f64], _mu: &EmpiricalMeasure, out: &mut [f64]) {
        out[0] = self.alpha * x[0];
    }

    #[inline]
    fn drift_dx(&self, _k: usize, x: &[f64], _mu: &EmpiricalMeasure, out: &mut [f64]) {
        out[0] = 0.5 * self.alpha * self.alpha - 3.0 * x[0] * x[0];
    }

    #[inline]
    fn drift_dmu(
        &self,
        _k: usize,
        _x: &[f64],
        _mu: &EmpiricalMeasure,
        _y: &[f64],
        out: &mut [f64],
    ) {
        out[0] = self.c;
    }

    #[inline]
    fn diffusion_dx(
        &self,
        _k: usize,
        _l: usize,
        _x: &[f64],
        _mu: &EmpiricalMeasure,
        out: &mut [f64],
    ) {
        out[0] = self.alpha;
    }

    #[inline]
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

/// Scalar linear mean-field model:
///
/// ```text
/// b(x, mu)     = a x + abar * mean(mu)
/// sigma(x, mu) = bcoef x + bbar * mean(mu)
/// ```
///
/// Globally Lipschitz (`rho = 0`). Its diffusion depends on the measure
/// (`d_mu sigma = bbar`), which makes it the reference workload for the
/// measure-derivative Milstein correction. The particle mean satisfies the
/// closed ODE `M' = (a + abar) M` in expectation, giving an exact oracle.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LinearMeanField {
    pub a: f64,
    pub abar: f64,
    pub bcoef: f64,
    pub bbar: f64,
}

impl CoefficientModel for LinearMeanField {
    fn state_dim(&self) -> usize {
        1
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn growth_exponent(&self) -> f64 {
        0.0
    }

    #[inline]
    fn drift(&self, x: &[f64], mu: &EmpiricalMeasure, out: &mut [f64]) {
        out[0] = self.a * x[0] + self.abar * mu.mean()[0];
    }

    #[inline]
    fn diffusion(&self, x: &[f64], mu: &EmpiricalMeasure, out: &mut [f64]) {
        out[0] = self.bcoef * x[0] + self.bbar * mu.mean()[0];
    }

    #[inline]
    fn drift_dx(&self, _k: usize, _x: &[f64], _mu: &EmpiricalMeasure, out: &mut [f64]) {
        out[0] = self.a;
    }

    #[inline]
    fn drift_dmu(
        &self,
        _k: usize,
        _x: &[f64],
        _mu: &EmpiricalMeasure,
        _y: &[f64],
        out: &mut [f64],
    ) {
        out[0] = self.abar;
    }

    #[inline]
    fn diffusion_dx(
        &self,
        _k: usize,
        _l: usize,
        _x: &[f64],
        _mu: &EmpiricalMeasure,
        out: &mut [f64],
    ) {
        out[0] = self.bcoef;
    }

    #[inline]
    fn diffusion_dmu(
        &self,
        _k: usize,
        _l: usize,
        _x: &[f64],
        _mu: &EmpiricalMeasure,
        _y: &[f64],
        out: &mut [f64],
    ) {
        out[0] = self.bbar;
    }
}

/// A deliberately broken [`LinearMeanField`]: it reports `d_mu sigma` at
/// twice its true value. Exists so the derivative validator has a known
/// fault to catch; everything else delegates to the wrapped model.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MisreportedLinearMeanField(pub LinearMeanField);

impl CoefficientModel for MisreportedLinearMeanField {
    fn state_dim(&self) -> usize {
        self.0.state_dim()
    }

    fn noise_dim(&self) -> usize {
        self.0.noise_dim()
    }

    fn growth_exponent(&self) -> f64 {
        self.0.growth_exponent()
    }

    fn drift(&self, x: &[f64], mu: &EmpiricalMeasure, out: &mut [f64]) {
        self.0.drift(x, mu, out);
    }

    fn diffusion(&self, x: &[f64], mu: &EmpiricalMeasure, out: &mut [f64]) {
        self.0.diffusion(x, mu, out);
    }

    fn drift_dx(&self, k: usize, x: &[f64], mu: &EmpiricalMeasure, out: &mut [f64]) {
        self.0.drift_dx(k, x, mu, out);
    }

    fn drift_dmu(
        &self,
        k: usize,
        x: &[f64],
        mu: &EmpiricalMeasure,
        y: &[f64],
        out: &mut [f64],
    ) {
        self.0.drift_dmu(k, x, mu, y, out);
    }

    fn diffusion_dx(
        &self,
        k: usize,
        l: usize,
        x: &[f64],
        mu: &EmpiricalMeasure,
        out: &mut [f64],
    ) {
        self.0.diffusion_dx(k, l, x, mu, out);
    }

    fn diffusion_dmu(
        &self,
        k: usize,
        l: usize,
        x: &[f64],
        mu: &EmpiricalMeasure,
        y: &[f64],
        out: &mut [f64],
    ) {
        self.0.diffusion_dmu(k, l, x, mu, y, out);
        for v in out.iter_mut() {
            *v *= 2.0;
        }
    }
}

/// A built-in model selected by name (the CLI registry).
#[derive(Debug, Clone, Copy)]
pub enum BuiltinModel {
    GinzburgLandau(GinzburgLandau),
    LinearMeanField(LinearMeanField),
    /// Diagnostic model with a known derivative fault (validator demo).
    MisreportedLinearMeanField(MisreportedLinearMeanField),
}

macro_rules! delegate {
    ($self:ident, $m:ident, $call:expr) => {
        match $self {
            BuiltinModel::GinzburgLandau($m) => $call,
            BuiltinModel::LinearMeanField($m) => $call,
            BuiltinModel::MisreportedLinearMeanField($m) => $call,
        }
    };
}

impl CoefficientModel for BuiltinModel {
    fn state_dim(&self) -> usize {
        delegate!(self, m, m.state_dim())
    }

    fn noise_dim(&self) -> usize {
        delegate!(self, m, m.noise_dim())
    }

    fn growth_exponent(&self) -> f64 {
        delegate!(self, m, m.growth_exponent())
    }

    fn drift(&self, x: &[f64], mu: &EmpiricalMeasure, out: &mut [f64]) {
        delegate!(self, m, m.drift(x, mu, out))
    }

    fn diffusion(&self, x: &[f64], mu: &EmpiricalMeasure, out: &mut [f64]) {
        delegate!(self, m, m.diffusion(x, mu, out))
    }

    fn drift_dx(&self, k: usize, x: &[f64], mu: &EmpiricalMeasure, out: &mut [f64]) {
        delegate!(self, m, m.drift_dx(k, x, mu, out))
    }

    fn drift_dmu(
        &self,
        k: usize,
        x: &[f64],
        mu: &EmpiricalMeasure,
        y: &[f64],
        out: &mut [f64],
    ) {
        delegate!(self, m, m.drift_dmu(k, x, mu, y, out))
    }

    fn diffusion_dx(
        &self,
        k: usize,
        l: usize,
        x: &[f64],
        mu: &EmpiricalMeasure,
        out: &mut [f64],
    ) {
        delegate!(self, m, m.diffusion_dx(k, l, x, mu, out))
    }

    fn diffusion_dmu(
        &self,
        k: usize,
        l: usize,
        x: &[f64],
        mu: &EmpiricalMeasure,
        y: &[f64],
        out: &mut [f64],
    ) {
        delegate!(self, m, m.diffusion_dmu(k, l, x, mu, y, out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn point(x: f64) -> EmpiricalMeasure {
        EmpiricalMeasure::from_scalars(&[x]).unwrap()
    }

    #[test]
    fn tamed_cubic_drift_example() {
        // alpha = 0, c = 0: b = -x^3. At x = 2, n = 4 the divisor is
        // 1 + |2|^4 / 4 = 5, so b_n = -8 / 5 = -1.6.
        let model = GinzburgLandau { alpha: 0.0, c: 0.0 };
        let tamed = tame_drift(&model, 4, &[2.0], &point(2.0)).unwrap();
        assert_relative_eq!(tamed[0], -1.6, max_relative = 1e-14);

        assert_eq!(
            tame_drift(&model, 0, &[2.0], &point(2.0)),
            Err(ModelError::ZeroLevel)
        );
    }

    #[test]
    fn ginzburg_landau_coefficients() {
        let model = GinzburgLandau { alpha: 1.0, c: 0.5 };
        let mu = EmpiricalMeasure::from_scalars(&[1.0, 3.0]).unwrap(); // mean 2
        let mut out = [0.0];
        model.drift(&[2.0], &mu, &mut out);
        // 0.5*2 - 8 + 0.5*2 = -6
        assert_relative_eq!(out[0], -6.0, max_relative = 1e-14);
        model.drift_dx(0, &[2.0], &mu, &mut out);
        assert_relative_eq!(out[0], 0.5 - 12.0, max_relative = 1e-14);
        model.drift_dmu(0, &[2.0], &mu, &[3.0], &mut out);
        assert_relative_eq!(out[0], 0.5, max_relative = 1e-14);
        model.diffusion(&[2.0], &mu, &mut out);
        assert_relative_eq!(out[0], 2.0, max_relative = 1e-14);
        model.diffusion_dmu(0, 0, &[2.0], &mu, &[3.0], &mut out);
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn linear_mean_field_coefficients() {
        let model = LinearMeanField {
            a: -1.0,
            abar: 0.5,
            bcoef: 0.2,
            bbar: 0.1,
        };
        let mu = EmpiricalMeasure::from_scalars(&[2.0, 4.0]).unwrap(); // mean 3
        let mut out = [0.0];
        model.drift(&[1.0], &mu, &mut out);
        assert_relative_eq!(out[0], -1.0 + 1.5, max_relative = 1e-14);
        model.diffusion(&[1.0], &mu, &mut out);
        assert_relative_eq!(out[0], 0.2 + 0.3, max_relative = 1e-14);
        model.diffusion_dmu(0, 0, &[1.0], &mu, &[4.0], &mut out);
        assert_relative_eq!(out[0], 0.1, max_relative = 1e-14);
    }

    #[test]
    fn misreported_model_doubles_measure_derivative() {
        let base = LinearMeanField {
            a: -1.0,
            abar: 0.5,
            bcoef: 0.2,
            bbar: 0.1,
        };
        let faulty = MisreportedLinearMeanField(base);
        let mu = point(1.0);
        let mut claimed = [0.0];
        faulty.diffusion_dmu(0, 0, &[1.0], &mu, &[1.0], &mut claimed);
        assert_relative_eq!(claimed[0], 0.2, max_relative = 1e-14);
        // The value coefficients stay honest.
        let mut sig = [0.0];
        faulty.diffusion(&[1.0], &mu, &mut sig);
        assert_relative_eq!(sig[0], 0.3, max_relative = 1e-14);
    }

    #[test]
    fn growth_check_accepts_correct_exponent() {
        let model = GinzburgLandau { alpha: 1.0, c: 0.0 };
        let sweep: Vec<Vec<f64>> = [1.0, 10.0, 100.0, 1000.0].iter().map(|&x| vec![x]).collect();
        let report = taming_growth_check(&model, 16, &sweep).unwrap();
        assert!(!report.growth_detected, "ratios: {:?}", report.samples);
        assert!(report.max_ratio <= 2.0, "max ratio {}", report.max_ratio);
    }

    #[test]
    fn growth_check_flags_understated_exponent() {
        /// A quintic drift that (wrongly) claims rho = 0: the envelope is
        /// then min{sqrt(n)(1+|x|), (1+|x|)^2} while the tamed drift still
        /// grows like n|x|^3, so the ratio climbs with |x|.
        struct Lying;
        impl CoefficientModel for Lying {
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
                out[0] = -x[0].powi(5);
            }
            fn diffusion(&self, _x: &[f64], _mu: &EmpiricalMeasure, out: &mut [f64]) {
                out[0] = 0.0;
            }
            fn drift_dx(&self, _k: usize, x: &[f64], _mu: &EmpiricalMeasure, out: &mut [f64]) {
                out[0] = -5.0 * x[0].powi(4);
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
        let sweep: Vec<Vec<f64>> = [1.0, 10.0, 100.0, 1000.0, 10000.0]
            .iter()
            .map(|&x| vec![x])
            .collect();
        let report = taming_growth_check(&Lying, 16, &sweep).unwrap();
        assert!(report.growth_detected, "ratios: {:?}", report.samples);
    }

    proptest! {
        /// The divisor is >= 1, so taming can only shrink the drift.
        #[test]
        fn taming_never_amplifies(x in -30.0f64..30.0, level in 1usize..1000) {
            let model = GinzburgLandau { alpha: 1.0, c: 0.5 };
            let mu = point(0.3);
            let mut raw = [0.0];
            model.drift(&[x], &mu, &mut raw);
            let tamed = tame_drift(&model, level, &[x], &mu).unwrap();
            prop_assert!(tamed[0].abs() <= raw[0].abs() + 1e-15);
        }

        /// At fixed x the tamed drift converges to the raw drift as the
        /// level grows: |b - b_n| <= |b| |x|^(rho+2) / n.
        #[test]
        fn taming_vanishes_with_level(x in -5.0f64..5.0) {
            let model = GinzburgLandau { alpha: 1.0, c: 0.0 };
            let mu = point(0.0);
            let mut raw = [0.0];
            model.drift(&[x], &mu, &mut raw);
            let tamed = tame_drift(&model, 1_000_000, &[x], &mu).unwrap();
            let budget = raw[0].abs() * x.abs().powi(4) / 1_000_000.0 + 1e-12;
            prop_assert!((raw[0] - tamed[0]).abs() <= budget);
        }
    }
}
