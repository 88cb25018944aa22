//! Plain-text artifact renderers (CSV).
//!
//! Rendering is part of the determinism contract: floats are formatted with
//! Rust's shortest-roundtrip `Display`, row orders are fixed, and no
//! timestamps or environment data leak in, so the same data always produces
//! the same bytes — across reruns and across worker counts.

use std::fmt::Write;

use crate::analysis::{ChaosReport, ConvergenceReport, MomentRow, RateFit};
use crate::scheme::Trajectory;

/// Snapshot table: `step,t,particle,x_1..x_d`, one row per particle per
/// stored snapshot.
pub fn trajectory_csv(trajectory: &Trajectory) -> String {
    let d = trajectory.dim();
    let mut out = String::from("step,t,particle");
    for c in 1..=d {
        let _ = write!(out, ",x_{c}");
    }
    out.push('\n');
    for snap in trajectory.snapshots() {
        for i in 0..snap.particles() {
            let _ = write!(out, "{},{},{}", snap.step(), snap.time(), i);
            for v in snap.particle(i) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
    }
    out
}

/// Rate table: `n,h,rmse,diverged_count` rows and a trailing comment line
/// carrying the fitted slope (or the exact-scheme flag).
pub fn convergence_csv(report: &ConvergenceReport) -> String {
    let mut out = String::from("n,h,rmse,diverged_count\n");
    for row in &report.levels {
        let _ = writeln!(out, "{},{},{},{}", row.level, row.h, row.rmse, row.diverged);
    }
    let _ = writeln!(out, "# slope={}", slope_label(&report.rate));
    out
}

/// The slope as text: the fitted value, or `exact` when the scheme
/// reproduced the reference and no rate is meaningful.
pub fn slope_label(rate: &RateFit) -> String {
    match rate {
        RateFit::Slope(s) => format!("{s}"),
        RateFit::Exact => String::from("exact"),
    }
}

/// Moment series: `step,t,moment` rows and a trailing max comment (the
/// statistic the uniform-in-n bound concerns).
pub fn moment_csv(rows: &[MomentRow]) -> String {
    let mut out = String::from("step,t,moment\n");
    let mut max = f64::NEG_INFINITY;
    for row in rows {
        max = max.max(row.moment);
        let _ = writeln!(out, "{},{},{}", row.step, row.time, row.moment);
    }
    let _ = writeln!(out, "# max={max}");
    out
}

/// Particle-count study table: `n,n_next,mean_gap,moment2_gap,w2_gap`.
pub fn chaos_csv(report: &ChaosReport) -> String {
    let mut out = String::from("n,n_next,mean_gap,moment2_gap,w2_gap\n");
    for row in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.particles, row.next, row.mean_gap, row.second_moment_gap, row.w2_gap
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{strong_error, ChaosRow, ErrorMetric, LevelError, StudyConfig};
    use crate::model::LinearMeanField;
    use crate::scheme::{simulate, InitialLaw, Scheme, SimConfig};

    #[test]
    fn trajectory_csv_golden() {
        let still = LinearMeanField {
            a: 0.0,
            abar: 0.0,
            bcoef: 0.0,
            bbar: 0.0,
        };
        let traj = simulate(
            &still,
            &SimConfig {
                particles: 2,
                level: 2,
                n_fine: 2,
                horizon: 1.0,
                scheme: Scheme::Euler,
                tamed: true,
                lambda2: true,
                seed: 0,
                initial: InitialLaw::Constant(vec![1.5]),
                stride: 1,
            },
        )
        .unwrap();
        let expected = "\
step,t,particle,x_1
0,0,0,1.5
0,0,1,1.5
1,0.5,0,1.5
1,0.5,1,1.5
2,1,0,1.5
2,1,1,1.5
";
        assert_eq!(trajectory_csv(&traj), expected);
    }

    #[test]
    fn convergence_csv_golden() {
        let report = ConvergenceReport {
            levels: vec![
                LevelError {
                    level: 16,
                    h: 0.0625,
                    rmse: 0.5,
                    diverged: 0,
                },
                LevelError {
                    level: 32,
                    h: 0.03125,
                    rmse: 0.25,
                    diverged: 1,
                },
            ],
            rate: RateFit::Slope(1.0),
            repetitions: 4,
            particles: 8,
            n_ref: 512,
        };
        assert_eq!(
            convergence_csv(&report),
            "n,h,rmse,diverged_count\n16,0.0625,0.5,0\n32,0.03125,0.25,1\n# slope=1\n"
        );
        let exact = ConvergenceReport {
            rate: RateFit::Exact,
            ..report
        };
        assert!(convergence_csv(&exact).ends_with("# slope=exact\n"));
    }

    #[test]
    fn moment_csv_golden() {
        let rows = vec![
            MomentRow {
                step: 0,
                time: 0.0,
                moment: 4.0,
            },
            MomentRow {
                step: 2,
                time: 0.5,
                moment: 4.25,
            },
        ];
        assert_eq!(
            moment_csv(&rows),
            "step,t,moment\n0,0,4\n2,0.5,4.25\n# max=4.25\n"
        );
    }

    #[test]
    fn chaos_csv_golden() {
        let report = ChaosReport {
            rows: vec![ChaosRow {
                particles: 4,
                next: 8,
                mean_gap: 0.125,
                second_moment_gap: 0.0625,
                w2_gap: 0.25,
            }],
        };
        assert_eq!(
            chaos_csv(&report),
            "n,n_next,mean_gap,moment2_gap,w2_gap\n4,8,0.125,0.0625,0.25\n"
        );
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn rendered_study_is_byte_identical_across_worker_counts() {
        let model = LinearMeanField {
            a: -1.0,
            abar: 0.5,
            bcoef: 0.2,
            bbar: 0.1,
        };
        let cfg = StudyConfig {
            particles: 6,
            horizon: 1.0,
            levels: vec![4, 8, 16],
            n_ref: 256,
            n_fine: None,
            repetitions: 4,
            seed: 17,
            initial: InitialLaw::Gaussian {
                mean: vec![1.0],
                std: 0.25,
            },
            scheme: Scheme::Milstein,
            tamed: true,
            lambda2: true,
            metric: ErrorMetric::Terminal,
        };
        let render = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| convergence_csv(&strong_error(&model, &cfg).unwrap()))
        };
        assert_eq!(render(1), render(4));
    }
}
