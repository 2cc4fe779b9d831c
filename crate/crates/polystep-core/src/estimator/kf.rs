//! Linear Kalman predict/update over the 30-dim base+contacts state.

use nalgebra::SMatrix;

use crate::geometry::Rotation;

use super::{
    check_symmetric_psd, EstimatorError, EstimatorParams, MeasurementCovariance,
    ObservationVector, StateCovariance, StateVector, NUM_CONTACTS, OBS_DIM, STATE_DIM,
};

type HMatrix = SMatrix<f64, OBS_DIM, STATE_DIM>;

/// Result of one measurement update.
#[derive(Debug, Clone)]
pub struct KfUpdate {
    pub x: StateVector,
    pub p: StateCovariance,
    /// True when the innovation covariance was singular and the update was
    /// skipped (state and covariance pass through unchanged).
    pub skipped: bool,
    /// Euclidean norm of the innovation actually applied.
    pub innovation_norm: f64,
}

/// Time update: constant-velocity base driven by world-frame acceleration
/// `u`; contact sub-states are static.
///
/// `x' = A x + B u`, `P' = A P A' + Q` with
/// `A = [[I, dt I, 0], [0, I, 0], [0, 0, I24]]`,
/// `B = [0.5 dt^2 I; dt I; 0]`.
pub fn kf_predict(
    x: &StateVector,
    p: &StateCovariance,
    u: &nalgebra::Vector3<f64>,
    params: &EstimatorParams,
) -> Result<(StateVector, StateCovariance), EstimatorError> {
    params.validate()?;
    check_symmetric_psd(p, "P")?;
    let dt = params.dt;

    let mut x_next = x.0;
    let v = x.v_base();
    let dp = v * dt + u * (0.5 * dt * dt);
    let dv = u * dt;
    for a in 0..3 {
        x_next[a] += dp[a];
        x_next[3 + a] += dv[a];
    }

    // A P A' done block-wise: only the (p, v) coupling is non-identity.
    let mut ap = *p;
    // Rows of the p block pick up dt * v-rows.
    let v_rows = p.fixed_rows::<3>(3).into_owned();
    let mut p_rows = ap.fixed_rows_mut::<3>(0);
    p_rows += v_rows * dt;
    // Columns of the p block pick up dt * v-columns.
    let v_cols = ap.fixed_columns::<3>(3).into_owned();
    let mut p_cols = ap.fixed_columns_mut::<3>(0);
    p_cols += v_cols * dt;

    let mut p_next = ap + params.q;
    symmetrize(&mut p_next);
    Ok((StateVector(x_next), p_next))
}

/// Measurement update with Joseph-form covariance.
///
/// The observation is measured in the body frame; `base_orientation` maps
/// the relative-position and relative-velocity blocks into the world so the
/// measurement model stays linear:
/// - relative contact position observes `p_c_i - p_base`,
/// - relative contact velocity observes `-v_base` (stance feet are treated
///   as world-static; swing feet keep the same row with inflated noise),
/// - contact height observes the z component of `p_c_i`.
pub fn kf_update(
    x: &StateVector,
    p: &StateCovariance,
    y: &ObservationVector,
    contact_flags: &[bool; NUM_CONTACTS],
    base_orientation: &Rotation,
    params: &EstimatorParams,
) -> Result<KfUpdate, EstimatorError> {
    params.validate()?;
    check_symmetric_psd(p, "P")?;

    let h = build_h();

    // Rotate body-frame measurement blocks into the world.
    let mut z = y.0;
    for i in 0..NUM_CONTACTS {
        let zp = base_orientation * &y.p_rel(i);
        let zv = base_orientation * &y.v_rel(i);
        z.fixed_rows_mut::<3>(3 * i).copy_from(&zp);
        z.fixed_rows_mut::<3>(24 + 3 * i).copy_from(&zv);
    }

    // Effective measurement covariance with swing rows inflated.
    let mut r_eff: MeasurementCovariance = params.r;
    for i in 0..NUM_CONTACTS {
        if !contact_flags[i] {
            let f = params.swing_inflation;
            let rows: [usize; 7] = [
                3 * i,
                3 * i + 1,
                3 * i + 2,
                24 + 3 * i,
                24 + 3 * i + 1,
                24 + 3 * i + 2,
                48 + i,
            ];
            let s = f.sqrt();
            for &ri in &rows {
                for c in 0..OBS_DIM {
                    r_eff[(ri, c)] *= s;
                    r_eff[(c, ri)] *= s;
                }
            }
        }
    }

    let ph_t = p * h.transpose();
    let s = h * ph_t + r_eff;
    let Some(chol) = s.cholesky() else {
        return Ok(KfUpdate {
            x: *x,
            p: *p,
            skipped: true,
            innovation_norm: 0.0,
        });
    };

    let innovation = z - h * x.0;
    // K = P H' S^-1  <=>  K' = S^-1 (P H')'.
    let k = chol.solve(&ph_t.transpose()).transpose();

    let x_next = StateVector(x.0 + k * innovation);
    let ikh = SMatrix::<f64, STATE_DIM, STATE_DIM>::identity() - k * h;
    let mut p_next = ikh * p * ikh.transpose() + k * r_eff * k.transpose();
    symmetrize(&mut p_next);

    Ok(KfUpdate {
        x: x_next,
        p: p_next,
        skipped: false,
        innovation_norm: innovation.norm(),
    })
}

fn build_h() -> HMatrix {
    let mut h = HMatrix::zeros();
    for i in 0..NUM_CONTACTS {
        for a in 0..3 {
            // Relative contact position: p_c_i - p_base.
            h[(3 * i + a, a)] = -1.0;
            h[(3 * i + a, 6 + 3 * i + a)] = 1.0;
            // Relative contact velocity with static stance feet: -v_base.
            h[(24 + 3 * i + a, 3 + a)] = -1.0;
        }
        // Contact height: z of p_c_i.
        h[(48 + i, 6 + 3 * i + 2)] = 1.0;
    }
    h
}

fn symmetrize(p: &mut StateCovariance) {
    *p = (*p + p.transpose()) * 0.5;
}

/// Re-anchor one contact sub-state after a touchdown: overwrite its position,
/// drop its cross-covariances and give it a fresh diagonal variance.
pub fn reset_contact(
    x: &mut StateVector,
    p: &mut StateCovariance,
    contact: usize,
    pos: &nalgebra::Vector3<f64>,
    variance: f64,
) {
    assert!(contact < NUM_CONTACTS);
    let base = 6 + 3 * contact;
    for a in 0..3 {
        x.0[base + a] = pos[a];
        for j in 0..STATE_DIM {
            p[(base + a, j)] = 0.0;
            p[(j, base + a)] = 0.0;
        }
        p[(base + a, base + a)] = variance;
    }
}
