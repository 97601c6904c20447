//! Hybrid reduced-order model: the prediction (Step 1) and update (Step 4)
//! solves reuse the intrusive reduced code paths verbatim, while the two
//! pressure-correction solves (Steps 2 and 3) are replaced by radial-basis
//! surrogates that return the correction coefficients directly.

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::rbf::{rbf_eval, RBFMode, RBFModel};
use crate::rom::{
    reduced_qoi_record, rom_step1, rom_step4, ROMConfig, ReducedOperators, ReducedState,
};
use crate::qoi::QoISeries;

/// Surrogate configuration: one model for the interior correction
/// coefficients, one for the outlet-trace coefficients.
#[derive(Debug, Clone)]
pub struct HybridModel {
    pub mode: RBFMode,
    /// Query parameter value (required in `ParamTime` mode).
    pub mu_star: Option<f64>,
    pub model_c: RBFModel,
    pub model_c_hat: RBFModel,
}

impl HybridModel {
    pub fn validate(&self, ops: &ReducedOperators) -> Result<()> {
        if self.model_c.mode != self.mode || self.model_c_hat.mode != self.mode {
            return Err(Error::IncompatibleArtifacts(
                "surrogate models were fit in a different input mode".into(),
            ));
        }
        if self.mode == RBFMode::ParamTime && self.mu_star.is_none() {
            return Err(Error::Config(
                "parameter-time surrogates need a query parameter value".into(),
            ));
        }
        if self.model_c.n_outputs() != ops.r_phi || self.model_c_hat.n_outputs() != ops.r_phi_hat {
            return Err(Error::IncompatibleArtifacts(format!(
                "surrogate outputs ({}, {}) do not match reduced dimensions ({}, {})",
                self.model_c.n_outputs(),
                self.model_c_hat.n_outputs(),
                ops.r_phi,
                ops.r_phi_hat
            )));
        }
        if self.mode == RBFMode::CoefExtrapolation
            && (self.model_c.input_dim() != ops.r_u_tilde
                || self.model_c_hat.input_dim() != ops.r_u_tilde)
        {
            return Err(Error::IncompatibleArtifacts(
                "coefficient-extrapolation surrogates expect predicted-velocity coordinates"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// True when any normalized query coordinate leaves [0,1], i.e. the
/// surrogate is extrapolating beyond its training range.
fn is_extrapolating(model: &RBFModel, query: &[f64]) -> bool {
    model
        .scaling
        .apply(query)
        .iter()
        .any(|&z| !(-1e-9..=1.0 + 1e-9).contains(&z))
}

/// One hybrid step. Steps 1 and 4 call the intrusive routines; the
/// correction coefficients come from the surrogates, queried at
/// (t^{n+1}, mu*) or at the fresh predicted-velocity coefficients.
/// Returns true when the surrogate query was outside the training range.
pub fn hybrid_step(
    ops: &ReducedOperators,
    cfg: &ROMConfig,
    model: &HybridModel,
    state: &mut ReducedState,
    rbf_time: &mut Duration,
) -> Result<bool> {
    let a_tilde = rom_step1(ops, cfg, state)?;

    let query: Vec<f64> = match model.mode {
        RBFMode::ParamTime => vec![
            state.t + cfg.dt,
            model.mu_star.ok_or_else(|| {
                Error::Config("parameter-time surrogates need a query parameter value".into())
            })?,
        ],
        RBFMode::CoefExtrapolation => a_tilde.iter().copied().collect(),
    };
    let rbf_start = Instant::now();
    let extrapolated =
        is_extrapolating(&model.model_c, &query) || is_extrapolating(&model.model_c_hat, &query);
    let c = nalgebra::DVector::from_vec(rbf_eval(&model.model_c, &query)?);
    let c_hat = nalgebra::DVector::from_vec(rbf_eval(&model.model_c_hat, &query)?);
    *rbf_time += rbf_start.elapsed();

    let (a, b) = rom_step4(ops, cfg, state, &a_tilde, &c, &c_hat)?;
    state.a = a;
    state.a_tilde = a_tilde;
    state.b = b;
    state.c = c;
    state.c_hat = c_hat;
    state.step += 1;
    state.t += cfg.dt;
    Ok(extrapolated)
}

/// Result of an online hybrid run, with solver and surrogate time split out.
pub struct HybridRun {
    pub trajectory: Vec<ReducedState>,
    pub qoi: QoISeries,
    pub online_time: Duration,
    pub rbf_time: Duration,
    /// Steps whose surrogate query left the training range.
    pub extrapolated_steps: usize,
}

/// Runs `n_steps` hybrid steps from the given state.
pub fn run_hybrid(
    initial: &ReducedState,
    ops: &ReducedOperators,
    cfg: &ROMConfig,
    model: &HybridModel,
    n_steps: usize,
) -> Result<HybridRun> {
    model.validate(ops)?;
    let start = Instant::now();
    let mut rbf_time = Duration::ZERO;
    let mut state = initial.clone();
    let mut trajectory = Vec::with_capacity(n_steps + 1);
    let mut qoi = QoISeries::new(ops.qoi.flux.len());
    let mut extrapolated_steps = 0;
    trajectory.push(state.clone());
    for _ in 0..n_steps {
        if hybrid_step(ops, cfg, model, &mut state, &mut rbf_time)? {
            extrapolated_steps += 1;
        }
        reduced_qoi_record(ops, &state, &mut qoi);
        trajectory.push(state.clone());
    }
    Ok(HybridRun {
        trajectory,
        qoi,
        online_time: start.elapsed(),
        rbf_time,
        extrapolated_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rbf::{rbf_fit, TrainingTable};
    use crate::rom::test_support::synthetic_reduced_ops;
    use crate::rom::{run_rom, ROMConfig, ReducedState};
    use nalgebra::{DMatrix, DVector};

    fn zero_model(mode: RBFMode, dim_centers: Vec<Vec<f64>>, n_out: usize) -> RBFModel {
        let n = dim_centers.len();
        rbf_fit(
            &TrainingTable {
                mode,
                centers: dim_centers,
                targets: DMatrix::zeros(n, n_out),
            },
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn zero_state_and_zero_surrogates_stay_zero() {
        let ops = synthetic_reduced_ops(2);
        let cfg = ROMConfig { nu: 0.1, dt: 0.1 };
        let model = HybridModel {
            mode: RBFMode::ParamTime,
            mu_star: Some(500.0),
            model_c: zero_model(
                RBFMode::ParamTime,
                vec![vec![0.0, 400.0], vec![1.0, 600.0]],
                2,
            ),
            model_c_hat: zero_model(
                RBFMode::ParamTime,
                vec![vec![0.0, 400.0], vec![1.0, 600.0]],
                2,
            ),
        };
        let init = ReducedState::zero(&ops);
        let run = run_hybrid(&init, &ops, &cfg, &model, 5).unwrap();
        let last = run.trajectory.last().unwrap();
        assert!(last.a.amax() == 0.0 && last.b.amax() == 0.0);
        assert!(run.qoi.kinetic_energy.iter().all(|&e| e == 0.0));
    }

    /// With surrogates trained on the intrusive model's own correction
    /// coefficients, interpolation at the training times reproduces the
    /// intrusive trajectory: Steps 1 and 4 are the same code.
    #[test]
    fn hybrid_matches_intrusive_when_surrogate_returns_intrusive_coefficients() {
        let ops = {
            let mut ops = synthetic_reduced_ops(2);
            // Make the dynamics nontrivial: forcing drives the state, and the
            // corrections feed back into velocity and pressure.
            ops.forcing = DVector::from_vec(vec![1.0, -0.5]);
            ops.trace_div = DMatrix::from_row_slice(2, 2, &[0.4, 0.1, -0.2, 0.3]);
            ops.corr_div = DMatrix::from_row_slice(2, 2, &[0.3, -0.1, 0.2, 0.5]);
            ops.corr_ext = DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, 0.1]);
            ops.grad_phi = DMatrix::from_row_slice(2, 2, &[0.2, 0.1, -0.1, 0.2]);
            ops.grad_ext = DMatrix::from_row_slice(2, 2, &[0.05, 0.0, 0.0, 0.05]);
            ops
        };
        let cfg = ROMConfig { nu: 0.05, dt: 0.1 };
        let n = 8;
        let init = ReducedState::zero(&ops);
        let reference = run_rom(&init, &ops, &cfg, n).unwrap();

        // Train on (t, mu) with the intrusive coefficients as targets.
        let mu = 500.0;
        let centers: Vec<Vec<f64>> = reference.trajectory[1..]
            .iter()
            .map(|s| vec![s.t, mu])
            .collect();
        let targets_c = DMatrix::from_fn(n, 2, |i, l| reference.trajectory[i + 1].c[l]);
        let targets_c_hat = DMatrix::from_fn(n, 2, |i, l| reference.trajectory[i + 1].c_hat[l]);
        let model = HybridModel {
            mode: RBFMode::ParamTime,
            mu_star: Some(mu),
            model_c: rbf_fit(
                &TrainingTable {
                    mode: RBFMode::ParamTime,
                    centers: centers.clone(),
                    targets: targets_c,
                },
                0.0,
            )
            .unwrap(),
            model_c_hat: rbf_fit(
                &TrainingTable {
                    mode: RBFMode::ParamTime,
                    centers,
                    targets: targets_c_hat,
                },
                0.0,
            )
            .unwrap(),
        };

        let run = run_hybrid(&init, &ops, &cfg, &model, n).unwrap();
        assert_eq!(run.extrapolated_steps, 0);
        for (h, r) in run.trajectory.iter().zip(&reference.trajectory) {
            for i in 0..2 {
                assert!(
                    (h.a[i] - r.a[i]).abs() < 1e-7,
                    "velocity coefficients diverged: {} vs {}",
                    h.a[i],
                    r.a[i]
                );
                assert!((h.b[i] - r.b[i]).abs() < 1e-7);
            }
        }
        assert!(run.rbf_time <= run.online_time);
    }

    #[test]
    fn extrapolation_outside_training_window_is_flagged() {
        let ops = synthetic_reduced_ops(2);
        let cfg = ROMConfig { nu: 0.1, dt: 1.0 };
        // Training times cover [0, 2]; the run leaves that window.
        let model = HybridModel {
            mode: RBFMode::ParamTime,
            mu_star: Some(500.0),
            model_c: zero_model(
                RBFMode::ParamTime,
                vec![vec![0.0, 400.0], vec![2.0, 600.0]],
                2,
            ),
            model_c_hat: zero_model(
                RBFMode::ParamTime,
                vec![vec![0.0, 400.0], vec![2.0, 600.0]],
                2,
            ),
        };
        let init = ReducedState::zero(&ops);
        let run = run_hybrid(&init, &ops, &cfg, &model, 4).unwrap();
        // Steps land at t = 1, 2, 3, 4; the last two leave the window.
        assert_eq!(run.extrapolated_steps, 2);
    }

    #[test]
    fn mismatched_surrogate_dimensions_are_rejected() {
        let ops = synthetic_reduced_ops(2);
        let cfg = ROMConfig { nu: 0.1, dt: 0.1 };
        let model = HybridModel {
            mode: RBFMode::ParamTime,
            mu_star: Some(500.0),
            model_c: zero_model(
                RBFMode::ParamTime,
                vec![vec![0.0, 400.0], vec![1.0, 600.0]],
                3,
            ),
            model_c_hat: zero_model(
                RBFMode::ParamTime,
                vec![vec![0.0, 400.0], vec![1.0, 600.0]],
                2,
            ),
        };
        let init = ReducedState::zero(&ops);
        assert!(matches!(
            run_hybrid(&init, &ops, &cfg, &model, 1),
            Err(Error::IncompatibleArtifacts(_))
        ));
    }
}
