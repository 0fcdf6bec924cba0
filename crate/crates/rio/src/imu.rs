//! IMU pre-integration between consecutive radar frames.
//!
//! Samples are accumulated by midpoint integration in the frame of the first
//! state, gravity excluded; gravity re-enters only in the residual. The
//! 15-dim error state is ordered `[δα, δβ, δθ, δb_a, δb_g]` and the residual
//! stacks position, velocity, attitude, and bias rows in that order.

use nalgebra::{Matrix3, SMatrix, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::estimator::NavState;
use crate::geom::{quat_left_matrix, quat_right_matrix, skew, small_quat, vec_part};

pub type Matrix15 = SMatrix<f64, 15, 15>;
pub type Vector15 = SMatrix<f64, 15, 1>;

/// One gyroscope + accelerometer reading. Accelerations are specific force
/// in the body frame (a stationary, level IMU reads +g up).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub timestamp: f64,
    /// rad/s, body frame
    pub angular_velocity: Vector3<f64>,
    /// m/s², body frame, specific force
    pub linear_acceleration: Vector3<f64>,
}

/// Accelerometer and gyroscope biases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuBias {
    pub accel: Vector3<f64>,
    pub gyro: Vector3<f64>,
}

impl ImuBias {
    pub fn zero() -> Self {
        Self {
            accel: Vector3::zeros(),
            gyro: Vector3::zeros(),
        }
    }
}

/// White-noise densities and bias random-walk densities, continuous-time.
///
/// These control the relative weighting of IMU against radar residuals;
/// defaults are in the range of an industrial-grade MEMS unit.
#[derive(Debug, Clone, Copy)]
pub struct ImuNoise {
    /// m/s² per √Hz
    pub accel_noise_density: f64,
    /// rad/s per √Hz
    pub gyro_noise_density: f64,
    /// m/s³ per √Hz
    pub accel_bias_walk: f64,
    /// rad/s² per √Hz
    pub gyro_bias_walk: f64,
}

impl Default for ImuNoise {
    fn default() -> Self {
        Self {
            accel_noise_density: 2e-2,
            gyro_noise_density: 2e-3,
            accel_bias_walk: 2e-4,
            gyro_bias_walk: 2e-5,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ImuError {
    #[error("pre-integration needs at least 2 samples, got {0}")]
    EmptyStream(usize),
    #[error("IMU timestamps not strictly increasing at sample {index}: {prev} -> {next}")]
    NonMonotonicTimestamps { index: usize, prev: f64, next: f64 },
}

/// Pre-integrated pseudo-measurements between two radar frames, with the
/// propagated covariance and the bias sensitivity of the means.
///
/// Immutable after construction; re-linearization at a new bias builds a new
/// value from the stored samples.
#[derive(Debug, Clone)]
pub struct PreintegratedImu {
    /// Position pseudo-measurement, frame of the first state (m).
    pub alpha: Vector3<f64>,
    /// Velocity pseudo-measurement (m/s).
    pub beta: Vector3<f64>,
    /// Attitude pseudo-measurement.
    pub gamma: UnitQuaternion<f64>,
    /// Interval length (s).
    pub dt: f64,
    /// Bias the means were integrated at.
    pub linearization_bias: ImuBias,
    /// d[δα δβ δθ δb_a δb_g] / d[b_a b_g], first order.
    pub bias_jacobian: SMatrix<f64, 15, 6>,
    /// Covariance of the 15-dim pre-integration error.
    pub covariance: Matrix15,
    samples: Vec<ImuSample>,
    noise: ImuNoise,
}

/// Midpoint pre-integration of `samples` at the given linearization bias.
///
/// Timestamps must be strictly increasing; at least two samples are needed.
pub fn preintegrate(
    samples: &[ImuSample],
    bias: ImuBias,
    noise: ImuNoise,
) -> Result<PreintegratedImu, ImuError> {
    if samples.len() < 2 {
        return Err(ImuError::EmptyStream(samples.len()));
    }
    for (i, pair) in samples.windows(2).enumerate() {
        if pair[1].timestamp <= pair[0].timestamp {
            return Err(ImuError::NonMonotonicTimestamps {
                index: i + 1,
                prev: pair[0].timestamp,
                next: pair[1].timestamp,
            });
        }
    }

    let mut alpha = Vector3::zeros();
    let mut beta = Vector3::zeros();
    let mut gamma = UnitQuaternion::identity();
    let mut jacobian = Matrix15::identity();
    let mut covariance = Matrix15::zeros();
    let mut total_dt = 0.0;

    for pair in samples.windows(2) {
        let (prev, next) = (&pair[0], &pair[1]);
        let dt = next.timestamp - prev.timestamp;

        let omega_mid = 0.5 * (prev.angular_velocity + next.angular_velocity) - bias.gyro;
        let gamma_next = gamma * UnitQuaternion::from_scaled_axis(omega_mid * dt);

        let rot_prev = gamma.to_rotation_matrix().into_inner();
        let rot_next = gamma_next.to_rotation_matrix().into_inner();
        let accel_prev_body = prev.linear_acceleration - bias.accel;
        let accel_next_body = next.linear_acceleration - bias.accel;
        let accel_mid = 0.5 * (rot_prev * accel_prev_body + rot_next * accel_next_body);

        propagate_error_state(
            &mut jacobian,
            &mut covariance,
            &noise,
            &rot_prev,
            &rot_next,
            &accel_prev_body,
            &accel_next_body,
            &omega_mid,
            dt,
        );

        alpha += beta * dt + 0.5 * accel_mid * dt * dt;
        beta += accel_mid * dt;
        gamma = gamma_next;
        total_dt += dt;
    }

    Ok(PreintegratedImu {
        alpha,
        beta,
        gamma,
        dt: total_dt,
        linearization_bias: bias,
        bias_jacobian: jacobian.fixed_view::<15, 6>(0, 9).into_owned(),
        covariance,
        samples: samples.to_vec(),
        noise,
    })
}

/// SO(3) right Jacobian: Exp(φ + δ) ≈ Exp(φ)·Exp(Jr(φ)·δ).
fn so3_right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let px = skew(phi);
    if theta < 1e-8 {
        Matrix3::identity() - 0.5 * px + px * px / 6.0
    } else {
        let t2 = theta * theta;
        Matrix3::identity() - (1.0 - theta.cos()) / t2 * px
            + (theta - theta.sin()) / (t2 * theta) * px * px
    }
}

/// One midpoint step of the error-state transition and noise injection.
///
/// Error order `[δα δβ δθ δb_a δb_g]`; noise order
/// `[n_a0 n_w0 n_a1 n_w1 n_ba n_bg]`. The attitude rows use the exact
/// per-step forms (step-rotation transpose and the SO(3) right Jacobian) so
/// that the accumulated bias sensitivity is first-order exact; the remaining
/// rows follow the usual midpoint linearization. White-noise densities are
/// discretized as σ²/dt, random walks as σ²·dt.
#[allow(clippy::too_many_arguments)]
fn propagate_error_state(
    jacobian: &mut Matrix15,
    covariance: &mut Matrix15,
    noise: &ImuNoise,
    rot_prev: &Matrix3<f64>,
    rot_next: &Matrix3<f64>,
    accel_prev_body: &Vector3<f64>,
    accel_next_body: &Vector3<f64>,
    omega_mid: &Vector3<f64>,
    dt: f64,
) {
    let identity = Matrix3::identity();
    let a0x = skew(accel_prev_body);
    let a1x = skew(accel_next_body);
    let dt2 = dt * dt;

    let step = omega_mid * dt;
    let step_rot_t = UnitQuaternion::from_scaled_axis(step)
        .to_rotation_matrix()
        .into_inner()
        .transpose();
    let jr_dt = so3_right_jacobian(&step) * dt;

    // δθ_{i+1} = R_stepᵀ δθ_i − Jr·dt·δb_g; the acceleration rows follow by
    // differentiating a_mid = (R_i·a_i + R_{i+1}·a_{i+1})/2 through both
    // rotation errors.
    let dbeta_dtheta = -0.5 * dt * (rot_prev * a0x + rot_next * a1x * step_rot_t);
    let dbeta_dbg = 0.5 * dt * rot_next * a1x * jr_dt;

    let mut f = Matrix15::identity();
    // δα rows
    f.fixed_view_mut::<3, 3>(0, 3).copy_from(&(identity * dt));
    f.fixed_view_mut::<3, 3>(0, 6)
        .copy_from(&(0.5 * dt * dbeta_dtheta));
    f.fixed_view_mut::<3, 3>(0, 9)
        .copy_from(&(-0.25 * (rot_prev + rot_next) * dt2));
    f.fixed_view_mut::<3, 3>(0, 12)
        .copy_from(&(0.5 * dt * dbeta_dbg));
    // δβ rows
    f.fixed_view_mut::<3, 3>(3, 6).copy_from(&dbeta_dtheta);
    f.fixed_view_mut::<3, 3>(3, 9)
        .copy_from(&(-0.5 * (rot_prev + rot_next) * dt));
    f.fixed_view_mut::<3, 3>(3, 12).copy_from(&dbeta_dbg);
    // δθ rows
    f.fixed_view_mut::<3, 3>(6, 6).copy_from(&step_rot_t);
    f.fixed_view_mut::<3, 3>(6, 12).copy_from(&(-jr_dt));

    let mut v = SMatrix::<f64, 15, 18>::zeros();
    v.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(0.25 * rot_prev * dt2));
    v.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(-0.125 * rot_next * a1x * dt2 * dt));
    v.fixed_view_mut::<3, 3>(0, 6)
        .copy_from(&(0.25 * rot_next * dt2));
    v.fixed_view_mut::<3, 3>(0, 9)
        .copy_from(&(-0.125 * rot_next * a1x * dt2 * dt));
    v.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(0.5 * rot_prev * dt));
    v.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(-0.25 * rot_next * a1x * dt2));
    v.fixed_view_mut::<3, 3>(3, 6)
        .copy_from(&(0.5 * rot_next * dt));
    v.fixed_view_mut::<3, 3>(3, 9)
        .copy_from(&(-0.25 * rot_next * a1x * dt2));
    v.fixed_view_mut::<3, 3>(6, 3)
        .copy_from(&(0.5 * identity * dt));
    v.fixed_view_mut::<3, 3>(6, 9)
        .copy_from(&(0.5 * identity * dt));
    v.fixed_view_mut::<3, 3>(9, 12).copy_from(&identity);
    v.fixed_view_mut::<3, 3>(12, 15).copy_from(&identity);

    let an2 = noise.accel_noise_density.powi(2) / dt;
    let gn2 = noise.gyro_noise_density.powi(2) / dt;
    let aw2 = noise.accel_bias_walk.powi(2) * dt;
    let gw2 = noise.gyro_bias_walk.powi(2) * dt;
    let mut q = SMatrix::<f64, 18, 18>::zeros();
    for i in 0..3 {
        q[(i, i)] = an2;
        q[(3 + i, 3 + i)] = gn2;
        q[(6 + i, 6 + i)] = an2;
        q[(9 + i, 9 + i)] = gn2;
        q[(12 + i, 12 + i)] = aw2;
        q[(15 + i, 15 + i)] = gw2;
    }

    *covariance = f * *covariance * f.transpose() + v * q * v.transpose();
    *jacobian = f * *jacobian;
}

impl PreintegratedImu {
    /// First-order corrected pseudo-measurements at a bias that may deviate
    /// from the linearization point.
    pub fn corrected(&self, bias: &ImuBias) -> (Vector3<f64>, Vector3<f64>, UnitQuaternion<f64>) {
        let dba = bias.accel - self.linearization_bias.accel;
        let dbg = bias.gyro - self.linearization_bias.gyro;
        let alpha = self.alpha + self.dp_dba() * dba + self.dp_dbg() * dbg;
        let beta = self.beta + self.dv_dba() * dba + self.dv_dbg() * dbg;
        let gamma = self.gamma * small_quat(&(self.dq_dbg() * dbg));
        (alpha, beta, gamma)
    }

    /// Re-integrates the stored samples at a new bias.
    pub fn relinearize(&self, bias: ImuBias) -> Result<PreintegratedImu, ImuError> {
        preintegrate(&self.samples, bias, self.noise)
    }

    /// How far a bias may drift from the linearization point before the
    /// first-order correction is considered stale.
    pub const RELINEARIZE_THRESHOLD: f64 = 1e-2;

    pub fn bias_deviation(&self, bias: &ImuBias) -> f64 {
        let dba = bias.accel - self.linearization_bias.accel;
        let dbg = bias.gyro - self.linearization_bias.gyro;
        dba.norm().max(dbg.norm())
    }

    fn dp_dba(&self) -> Matrix3<f64> {
        self.bias_jacobian.fixed_view::<3, 3>(0, 0).into_owned()
    }
    fn dp_dbg(&self) -> Matrix3<f64> {
        self.bias_jacobian.fixed_view::<3, 3>(0, 3).into_owned()
    }
    fn dv_dba(&self) -> Matrix3<f64> {
        self.bias_jacobian.fixed_view::<3, 3>(3, 0).into_owned()
    }
    fn dv_dbg(&self) -> Matrix3<f64> {
        self.bias_jacobian.fixed_view::<3, 3>(3, 3).into_owned()
    }
    fn dq_dbg(&self) -> Matrix3<f64> {
        self.bias_jacobian.fixed_view::<3, 3>(6, 3).into_owned()
    }

    /// Whitening matrix W with WᵀW = covariance⁻¹, applied as `W · r`.
    pub fn sqrt_information(&self) -> Matrix15 {
        let info = self
            .covariance
            .cholesky()
            .expect("pre-integration covariance must be SPD")
            .inverse();
        info.cholesky()
            .expect("information matrix must be SPD")
            .l()
            .transpose()
    }

    /// Propagates a state across this interval: the IMU-only prediction used
    /// as the initial guess for the next frame.
    pub fn predict(&self, state: &NavState, gravity: &Vector3<f64>) -> NavState {
        let (alpha, beta, gamma) = self.corrected(&state.bias);
        let rot = state.orientation.to_rotation_matrix().into_inner();
        NavState {
            position: state.position + state.velocity * self.dt
                - 0.5 * gravity * self.dt * self.dt
                + rot * alpha,
            velocity: state.velocity - gravity * self.dt + rot * beta,
            orientation: state.orientation * gamma,
            bias: state.bias,
            timestamp: state.timestamp + self.dt,
        }
    }
}

/// Pre-integration residual of the two states bracketing this interval,
/// stacked `[δα; δβ; δθ; δb_a; δb_g]`, unwhitened.
pub fn imu_residual(
    pre: &PreintegratedImu,
    state_k: &NavState,
    state_k1: &NavState,
    gravity: &Vector3<f64>,
) -> Vector15 {
    let (alpha, beta, gamma) = pre.corrected(&state_k.bias);
    let rot_wb = state_k
        .orientation
        .to_rotation_matrix()
        .into_inner()
        .transpose();
    let dt = pre.dt;

    let pos_term =
        state_k1.position - state_k.position + 0.5 * gravity * dt * dt - state_k.velocity * dt;
    let vel_term = state_k1.velocity + gravity * dt - state_k.velocity;

    let r_alpha = rot_wb * pos_term - alpha;
    let r_beta = rot_wb * vel_term - beta;
    let q_err = state_k.orientation.inverse() * state_k1.orientation * gamma.inverse();
    let r_theta = 2.0 * vec_part(q_err);
    let r_ba = state_k1.bias.accel - state_k.bias.accel;
    let r_bg = state_k1.bias.gyro - state_k.bias.gyro;

    let mut r = Vector15::zeros();
    r.fixed_view_mut::<3, 1>(0, 0).copy_from(&r_alpha);
    r.fixed_view_mut::<3, 1>(3, 0).copy_from(&r_beta);
    r.fixed_view_mut::<3, 1>(6, 0).copy_from(&r_theta);
    r.fixed_view_mut::<3, 1>(9, 0).copy_from(&r_ba);
    r.fixed_view_mut::<3, 1>(12, 0).copy_from(&r_bg);
    r
}

/// Analytic Jacobians of [`imu_residual`] w.r.t. the 15-dim error states
/// `[δp, δv, δθ, δb_a, δb_g]` of both bracketing states.
///
/// Rotation errors are right-multiplicative: q ← q ⊗ exp(δθ).
pub fn residual_jacobians(
    pre: &PreintegratedImu,
    state_k: &NavState,
    state_k1: &NavState,
    gravity: &Vector3<f64>,
) -> (Matrix15, Matrix15) {
    let dt = pre.dt;
    let rot_k_t = state_k
        .orientation
        .to_rotation_matrix()
        .into_inner()
        .transpose();
    let identity = Matrix3::identity();

    let dbg = state_k.bias.gyro - pre.linearization_bias.gyro;
    let gamma_corr = pre.gamma * small_quat(&(pre.dq_dbg() * dbg));

    let pos_term =
        state_k1.position - state_k.position + 0.5 * gravity * dt * dt - state_k.velocity * dt;
    let vel_term = state_k1.velocity + gravity * dt - state_k.velocity;

    let mut j_k = Matrix15::zeros();
    let mut j_k1 = Matrix15::zeros();

    // δα rows
    j_k.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-rot_k_t));
    j_k.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-rot_k_t * dt));
    j_k.fixed_view_mut::<3, 3>(0, 6)
        .copy_from(&skew(&(rot_k_t * pos_term)));
    j_k.fixed_view_mut::<3, 3>(0, 9).copy_from(&(-pre.dp_dba()));
    j_k.fixed_view_mut::<3, 3>(0, 12)
        .copy_from(&(-pre.dp_dbg()));
    j_k1.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot_k_t);

    // δβ rows
    j_k.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-rot_k_t));
    j_k.fixed_view_mut::<3, 3>(3, 6)
        .copy_from(&skew(&(rot_k_t * vel_term)));
    j_k.fixed_view_mut::<3, 3>(3, 9).copy_from(&(-pre.dv_dba()));
    j_k.fixed_view_mut::<3, 3>(3, 12)
        .copy_from(&(-pre.dv_dbg()));
    j_k1.fixed_view_mut::<3, 3>(3, 3).copy_from(&rot_k_t);

    // δθ rows. The residual extracts the canonicalized vector part, so every
    // block picks up the sign of the error quaternion's scalar part.
    let relative = state_k.orientation.inverse() * state_k1.orientation;
    let q_err = relative * gamma_corr.inverse();
    let err_sign = if q_err.w >= 0.0 { 1.0 } else { -1.0 };

    // Right-perturbing q_k prepends exp(-δ) to the error quaternion.
    let right_err = quat_right_matrix(&q_err);
    j_k.fixed_view_mut::<3, 3>(6, 6)
        .copy_from(&(-err_sign * right_err.fixed_view::<3, 3>(1, 1).into_owned()));

    let dtheta_k1 = quat_left_matrix(&relative) * quat_right_matrix(&gamma_corr.inverse());
    j_k1.fixed_view_mut::<3, 3>(6, 6)
        .copy_from(&(err_sign * dtheta_k1.fixed_view::<3, 3>(1, 1).into_owned()));

    // Gyro-bias column, through gamma_corr = gamma ⊗ normalize([1, v/2])
    // with v = dq_dbg · δb_g; includes the normalization derivative.
    let v = pre.dq_dbg() * dbg;
    let e = nalgebra::Vector4::new(1.0, 0.5 * v.x, 0.5 * v.y, 0.5 * v.z);
    let norm = e.norm();
    let unit = e / norm;
    let dn = (nalgebra::Matrix4::identity() - unit * unit.transpose()) / norm;
    let conj = nalgebra::Matrix4::from_diagonal(&nalgebra::Vector4::new(1.0, -1.0, -1.0, -1.0));
    let mut de_dv = nalgebra::SMatrix::<f64, 4, 3>::zeros();
    de_dv
        .fixed_view_mut::<3, 3>(1, 0)
        .copy_from(&(0.5 * identity));
    let chain = quat_left_matrix(&relative) * conj * quat_left_matrix(&pre.gamma) * dn * de_dv;
    let dtheta_dbg = 2.0 * chain.fixed_view::<3, 3>(1, 0).into_owned() * pre.dq_dbg();
    j_k.fixed_view_mut::<3, 3>(6, 12)
        .copy_from(&(err_sign * dtheta_dbg));

    // bias rows
    j_k.fixed_view_mut::<3, 3>(9, 9).copy_from(&(-identity));
    j_k1.fixed_view_mut::<3, 3>(9, 9).copy_from(&identity);
    j_k.fixed_view_mut::<3, 3>(12, 12).copy_from(&(-identity));
    j_k1.fixed_view_mut::<3, 3>(12, 12).copy_from(&identity);

    (j_k, j_k1)
}
