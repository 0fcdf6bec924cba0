//! Spatially weighted Doppler velocity residuals.
//!
//! Each azimuth/elevation interval gets raw weight 1/√n so that the summed
//! squared constraint per interval is the same regardless of how many points
//! fell into it; the raw weights are then min-max normalized to [1, 10] per
//! axis. The weighted residual pairs the azimuth-interval weight with sin of
//! the point elevation and the elevation-interval weight with cos, following
//! the published formula; a configuration flag swaps the pairing for
//! experimentation since the geometric reading is ambiguous.

use nalgebra::{Matrix3, RowVector3, UnitQuaternion, Vector2, Vector3};

use crate::geom::skew;
use crate::preprocess::{IntervalGrid, PreprocessError, RadarPoint};

/// Per-interval Doppler weights for one scan, raw and normalized.
///
/// Empty intervals carry `None`: no point references them.
#[derive(Debug, Clone)]
pub struct IntervalWeights {
    pub azimuth_raw: Vec<Option<f64>>,
    pub azimuth_normalized: Vec<Option<f64>>,
    pub elevation_raw: Vec<Option<f64>>,
    pub elevation_normalized: Vec<Option<f64>>,
}

impl IntervalWeights {
    /// Normalized (azimuth, elevation) weights of the point's cell.
    pub fn of_cell(&self, cell: (usize, usize)) -> (f64, f64) {
        (
            self.azimuth_normalized[cell.0].expect("point assigned to empty azimuth interval"),
            self.elevation_normalized[cell.1].expect("point assigned to empty elevation interval"),
        )
    }
}

fn axis_weights(counts: &[usize]) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
    let raw: Vec<Option<f64>> = counts
        .iter()
        .map(|&n| (n > 0).then(|| 1.0 / (n as f64).sqrt()))
        .collect();
    let nonempty: Vec<f64> = raw.iter().filter_map(|w| *w).collect();
    let min = nonempty.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = nonempty.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let normalized = raw
        .iter()
        .map(|w| {
            w.map(|w| {
                if max > min {
                    (w - min) / (max - min) * 9.0 + 1.0
                } else {
                    1.0
                }
            })
        })
        .collect();
    (raw, normalized)
}

/// Raw 1/√n weights per nonempty interval, min-max normalized onto [1, 10]
/// per axis. All-equal raw weights normalize to 1.
pub fn compute_interval_weights(grid: &IntervalGrid) -> Result<IntervalWeights, PreprocessError> {
    if grid.azimuth_counts.iter().all(|&n| n == 0)
        || grid.elevation_counts.iter().all(|&n| n == 0)
    {
        return Err(PreprocessError::EmptyGrid);
    }
    let (azimuth_raw, azimuth_normalized) = axis_weights(&grid.azimuth_counts);
    let (elevation_raw, elevation_normalized) = axis_weights(&grid.elevation_counts);
    Ok(IntervalWeights {
        azimuth_raw,
        azimuth_normalized,
        elevation_raw,
        elevation_normalized,
    })
}

/// Unweighted Doppler residual of one static point, evaluated at the
/// optimization variables: `(p/|p|)ᵀ R_b^r R̂_w^b v̂_b^w + v_doppler`.
pub fn doppler_residual(
    point: &RadarPoint,
    body_to_radar: &Matrix3<f64>,
    orientation: &UnitQuaternion<f64>,
    velocity_world: &Vector3<f64>,
) -> Result<f64, PreprocessError> {
    let dir = point.direction()?;
    let world_to_body = orientation.to_rotation_matrix().into_inner().transpose();
    Ok(dir.dot(&(body_to_radar * world_to_body * velocity_world)) + point.doppler)
}

/// Weighted 2-vector Doppler residual: `[w_az·sinθ; w_el·cosθ]·r_D` with θ
/// the point elevation.
///
/// `swap_pairing` exchanges which axis weight multiplies sin and cos.
#[allow(clippy::too_many_arguments)]
pub fn weighted_doppler_residual(
    point: &RadarPoint,
    weights: &IntervalWeights,
    grid: &IntervalGrid,
    point_index: usize,
    body_to_radar: &Matrix3<f64>,
    orientation: &UnitQuaternion<f64>,
    velocity_world: &Vector3<f64>,
    swap_pairing: bool,
) -> Result<Vector2<f64>, PreprocessError> {
    let r = doppler_residual(point, body_to_radar, orientation, velocity_world)?;
    Ok(weight_vector(point, weights, grid, point_index, swap_pairing) * r)
}

/// The `[w·sinθ; w·cosθ]` scale factors applied to one point's residual.
pub fn weight_vector(
    point: &RadarPoint,
    weights: &IntervalWeights,
    grid: &IntervalGrid,
    point_index: usize,
    swap_pairing: bool,
) -> Vector2<f64> {
    let (w_az, w_el) = weights.of_cell(grid.cell_of(point_index));
    let (sin_t, cos_t) = (point.elevation.sin(), point.elevation.cos());
    if swap_pairing {
        Vector2::new(w_el * sin_t, w_az * cos_t)
    } else {
        Vector2::new(w_az * sin_t, w_el * cos_t)
    }
}

/// Analytic Jacobians of the unweighted residual w.r.t. the world-frame
/// velocity and the right-multiplicative rotation error state.
pub struct DopplerJacobians {
    pub d_velocity: RowVector3<f64>,
    pub d_theta: RowVector3<f64>,
}

pub fn doppler_jacobians(
    point: &RadarPoint,
    body_to_radar: &Matrix3<f64>,
    orientation: &UnitQuaternion<f64>,
    velocity_world: &Vector3<f64>,
) -> Result<DopplerJacobians, PreprocessError> {
    let dir = point.direction()?;
    let world_to_body = orientation.to_rotation_matrix().into_inner().transpose();
    let row = (dir.transpose() * body_to_radar).into_owned();
    // r = dirᵀ R_b^r (R(q)exp(δθ))ᵀ v: the perturbation enters as
    // exp(-δθ) Rᵀ v ≈ (I - [δθ]ₓ) Rᵀ v.
    let d_velocity = row * world_to_body;
    let d_theta = row * skew(&(world_to_body * velocity_world));
    Ok(DopplerJacobians {
        d_velocity,
        d_theta,
    })
}
