//! Linear Kalman filter baseline. Anomaly score is the squared Mahalanobis
//! norm of the innovation, `νᵀ S⁻¹ ν`.

#![allow(non_snake_case)]

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KfModel {
    pub F: DMatrix<f64>,
    pub H: DMatrix<f64>,
    pub Q: DMatrix<f64>,
    pub R: DMatrix<f64>,
    pub x0: DVector<f64>,
    pub P0: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KfState {
    pub x: DVector<f64>,
    pub P: DMatrix<f64>,
    pub t: u64,
}

const SYM_TOL: f64 = 1e-9;

fn check_symmetric(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() || (m - m.transpose()).amax() > SYM_TOL * (1.0 + m.amax()) {
        return Err(Error::InvalidConfig(format!(
            "{name} must be square and symmetric"
        )));
    }
    Ok(())
}

fn check_psd(name: &str, m: &DMatrix<f64>) -> Result<()> {
    check_symmetric(name, m)?;
    let min = SymmetricEigen::new(m.clone()).eigenvalues.min();
    if min < -SYM_TOL * (1.0 + m.amax()) {
        return Err(Error::InvalidConfig(format!(
            "{name} is not positive semidefinite (min eigenvalue {min})"
        )));
    }
    Ok(())
}

impl KfModel {
    pub fn new(
        F: DMatrix<f64>,
        H: DMatrix<f64>,
        Q: DMatrix<f64>,
        R: DMatrix<f64>,
        x0: DVector<f64>,
        P0: DMatrix<f64>,
    ) -> Result<Self> {
        let k = F.nrows();
        check_dim("kf F columns", k, F.ncols())?;
        check_dim("kf H columns", k, H.ncols())?;
        let m = H.nrows();
        check_dim("kf Q", k, Q.nrows())?;
        check_dim("kf R", m, R.nrows())?;
        check_dim("kf x0", k, x0.len())?;
        check_dim("kf P0", k, P0.nrows())?;
        check_psd("Q", &Q)?;
        check_psd("P0", &P0)?;
        check_symmetric("R", &R)?;
        if Cholesky::new(R.clone()).is_none() {
            return Err(Error::InvalidConfig("R is not positive definite".into()));
        }
        Ok(KfModel { F, H, Q, R, x0, P0 })
    }

    /// Constant-velocity tracker per channel: state `(level, slope)`,
    /// `F = [[1, 1], [0, 1]]`, `H = [1, 0]`, `Q = q I`, `R = r I`, `P0 = I`.
    pub fn constant_velocity(channels: usize, process_var: f64, obs_var: f64) -> Result<Self> {
        let k = 2 * channels;
        let mut F = DMatrix::zeros(k, k);
        let mut H = DMatrix::zeros(channels, k);
        for c in 0..channels {
            F[(2 * c, 2 * c)] = 1.0;
            F[(2 * c, 2 * c + 1)] = 1.0;
            F[(2 * c + 1, 2 * c + 1)] = 1.0;
            H[(c, 2 * c)] = 1.0;
        }
        KfModel::new(
            F,
            H,
            DMatrix::identity(k, k) * process_var,
            DMatrix::identity(channels, channels) * obs_var,
            DVector::zeros(k),
            DMatrix::identity(k, k),
        )
    }

    pub fn state_dim(&self) -> usize {
        self.F.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.H.nrows()
    }

    pub fn initial_state(&self) -> KfState {
        KfState {
            x: self.x0.clone(),
            P: self.P0.clone(),
            t: 0,
        }
    }
}

/// Predict, score the innovation, then update (Joseph form, symmetrized).
pub fn kf_step(model: &KfModel, state: &KfState, obs: &[f64]) -> Result<(KfState, f64)> {
    check_dim("kf observation", model.obs_dim(), obs.len())?;
    check_dim("kf state", model.state_dim(), state.x.len())?;
    if !obs.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("kf observation"));
    }
    let x_pred = &model.F * &state.x;
    let P_pred = &model.F * &state.P * model.F.transpose() + &model.Q;
    let S = &model.H * &P_pred * model.H.transpose() + &model.R;
    let chol = Cholesky::new(S).ok_or(Error::SingularInnovation {
        step: state.t as usize,
    })?;
    let innovation = DVector::from_column_slice(obs) - &model.H * &x_pred;
    let s_inv_nu = chol.solve(&innovation);
    let score = innovation.dot(&s_inv_nu).max(0.0);

    // K = P⁻ Hᵀ S⁻¹, via Kᵀ = S⁻¹ H P⁻.
    let K = chol.solve(&(&model.H * &P_pred)).transpose();
    let x = &x_pred + &K * &innovation;
    let k = model.state_dim();
    let I_KH = DMatrix::identity(k, k) - &K * &model.H;
    let P = &I_KH * &P_pred * I_KH.transpose() + &K * &model.R * K.transpose();
    let P = (&P + P.transpose()) * 0.5;
    Ok((
        KfState {
            x,
            P,
            t: state.t + 1,
        },
        score,
    ))
}

pub fn kf_run<X: AsRef<[f64]>>(model: &KfModel, xs: &[X]) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut state = model.initial_state();
    xs.iter()
        .map(|x| {
            let (next, score) = kf_step(model, &state, x.as_ref())?;
            state = next;
            Ok(score)
        })
        .collect()
}
