//! Radar scan preprocessing: outlier removal against the previous frame,
//! IMU-assisted dynamic-point removal, and division of the cloud into
//! azimuth/elevation intervals.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::geom::Pose;
use crate::spatial::KdTree;

/// A single radar detection in the radar frame.
///
/// Azimuth and elevation are derived from the position at construction and
/// cached. Doppler is the radial velocity, negative for targets moving
/// toward the radar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadarPoint {
    /// m, radar frame
    pub position: Vector3<f64>,
    /// m/s, radial
    pub doppler: f64,
    /// dBsm
    pub rcs: f64,
    /// rad, atan2(y, x)
    pub azimuth: f64,
    /// rad, atan2(z, √(x²+y²))
    pub elevation: f64,
}

impl RadarPoint {
    pub fn new(position: Vector3<f64>, doppler: f64, rcs: f64) -> Self {
        let azimuth = position.y.atan2(position.x);
        let elevation = position.z.atan2(position.fixed_rows::<2>(0).norm());
        Self {
            position,
            doppler,
            rcs,
            azimuth,
            elevation,
        }
    }

    pub fn range(&self) -> f64 {
        self.position.norm()
    }

    /// Unit line-of-sight direction, or an error for a degenerate detection
    /// at the sensor origin.
    pub fn direction(&self) -> Result<Vector3<f64>, PreprocessError> {
        let r = self.range();
        if r <= f64::EPSILON {
            return Err(PreprocessError::ZeroRangePoint);
        }
        Ok(self.position / r)
    }
}

/// One radar frame. Immutable after load.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarScan {
    pub timestamp: f64,
    pub points: Vec<RadarPoint>,
}

impl RadarScan {
    pub fn new(timestamp: f64, points: Vec<RadarPoint>) -> Self {
        Self { timestamp, points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("radar point has zero range")]
    ZeroRangePoint,
    #[error("interval grid is empty")]
    EmptyGrid,
}

/// Azimuth/elevation interval layout. Angles in radians; intervals are
/// half-open: interval k covers [start + k·res, start + (k+1)·res).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub theta_start: f64,
    pub theta_res: f64,
    /// azimuth interval count s
    pub azimuth_intervals: usize,
    pub phi_start: f64,
    pub phi_res: f64,
    /// elevation interval count t
    pub elevation_intervals: usize,
}

impl Default for GridConfig {
    /// Azimuth [-60°, +60°] at 4°, elevation [-15°, +15°] at 3°.
    fn default() -> Self {
        Self {
            theta_start: -60f64.to_radians(),
            theta_res: 4f64.to_radians(),
            azimuth_intervals: 30,
            phi_start: -15f64.to_radians(),
            phi_res: 3f64.to_radians(),
            elevation_intervals: 10,
        }
    }
}

impl GridConfig {
    pub fn azimuth_end(&self) -> f64 {
        self.theta_start + self.azimuth_intervals as f64 * self.theta_res
    }

    pub fn elevation_end(&self) -> f64 {
        self.phi_start + self.elevation_intervals as f64 * self.phi_res
    }
}

/// Assignment of every scan point to one azimuth and one elevation interval.
#[derive(Debug, Clone)]
pub struct IntervalGrid {
    pub config: GridConfig,
    /// (azimuth index, elevation index) per scan point.
    pub assignment: Vec<(usize, usize)>,
    /// Points per azimuth interval.
    pub azimuth_counts: Vec<usize>,
    /// Points per elevation interval.
    pub elevation_counts: Vec<usize>,
    /// Points outside the field of view, clamped to an edge interval.
    pub clamped: usize,
}

impl IntervalGrid {
    pub fn cell_of(&self, point_index: usize) -> (usize, usize) {
        self.assignment[point_index]
    }
}

/// Half-open interval index with clamping to the grid edges.
fn bin_index(value: f64, start: f64, res: f64, count: usize) -> (usize, bool) {
    let raw = ((value - start) / res).floor();
    if raw < 0.0 {
        (0, true)
    } else if raw as usize >= count {
        (count - 1, true)
    } else {
        (raw as usize, false)
    }
}

/// Assigns each point to an azimuth and an elevation interval.
///
/// Out-of-FOV points clamp to the nearest edge interval and are counted in
/// `clamped` rather than dropped, so the partition property holds for every
/// input.
pub fn divide_cloud(scan: &RadarScan, config: &GridConfig) -> IntervalGrid {
    let mut assignment = Vec::with_capacity(scan.points.len());
    let mut azimuth_counts = vec![0usize; config.azimuth_intervals];
    let mut elevation_counts = vec![0usize; config.elevation_intervals];
    let mut clamped = 0;

    for point in &scan.points {
        let (ai, a_clamped) = bin_index(
            point.azimuth,
            config.theta_start,
            config.theta_res,
            config.azimuth_intervals,
        );
        let (ei, e_clamped) = bin_index(
            point.elevation,
            config.phi_start,
            config.phi_res,
            config.elevation_intervals,
        );
        if a_clamped || e_clamped {
            clamped += 1;
        }
        azimuth_counts[ai] += 1;
        elevation_counts[ei] += 1;
        assignment.push((ai, ei));
    }

    IntervalGrid {
        config: *config,
        assignment,
        azimuth_counts,
        elevation_counts,
        clamped,
    }
}

/// Outcome of [`remove_outliers`]; `passed_through` is set when either scan
/// was empty and no filtering could be applied.
#[derive(Debug, Clone)]
pub struct OutlierReport {
    pub scan: RadarScan,
    pub removed: usize,
    pub passed_through: bool,
}

/// Keeps the current-frame points that have at least one neighbor from the
/// transformed previous scan within `radius`.
///
/// `predicted_transform` maps previous-frame radar coordinates into the
/// current radar frame.
pub fn remove_outliers(
    current: &RadarScan,
    previous: &RadarScan,
    predicted_transform: &Pose,
    radius: f64,
) -> OutlierReport {
    if current.is_empty() || previous.is_empty() {
        return OutlierReport {
            scan: current.clone(),
            removed: 0,
            passed_through: true,
        };
    }

    let transformed: Vec<Vector3<f64>> = previous
        .points
        .iter()
        .map(|p| predicted_transform.transform_point(&p.position))
        .collect();
    let tree = KdTree::build(&transformed);

    let points: Vec<RadarPoint> = current
        .points
        .iter()
        .filter(|p| tree.any_within_radius(&p.position, radius))
        .copied()
        .collect();
    let removed = current.len() - points.len();
    OutlierReport {
        scan: RadarScan::new(current.timestamp, points),
        removed,
        passed_through: false,
    }
}

/// Doppler consistency error of a single point against the predicted
/// body velocity: `(p/|p|)ᵀ R_b^r R̂_w^b v̂_b^w + v_doppler`.
///
/// Zero for a static point under a correct velocity estimate. Depends only
/// on the direction of `position`, not its magnitude.
pub fn doppler_error(
    point: &RadarPoint,
    body_to_radar: &Matrix3<f64>,
    world_to_body: &Matrix3<f64>,
    body_velocity_world: &Vector3<f64>,
) -> Result<f64, PreprocessError> {
    let dir = point.direction()?;
    Ok(dir.dot(&(body_to_radar * world_to_body * body_velocity_world)) + point.doppler)
}

/// Split of a scan into static and dynamic points by Doppler consistency.
#[derive(Debug, Clone)]
pub struct DynamicSplit {
    pub static_scan: RadarScan,
    pub dynamic_scan: RadarScan,
}

/// Separates static from dynamic points.
///
/// A point is static when `|v_error| < v_thr` and `|v_error / v_doppler| <
/// p_thr`. Points with zero Doppler pass the ratio test by convention when
/// the absolute test passes; degenerate zero-range points are classified
/// dynamic.
pub fn filter_dynamic(
    scan: &RadarScan,
    body_to_radar: &Matrix3<f64>,
    world_to_body: &Matrix3<f64>,
    body_velocity_world: &Vector3<f64>,
    v_thr: f64,
    p_thr: f64,
) -> DynamicSplit {
    let mut static_points = Vec::with_capacity(scan.points.len());
    let mut dynamic_points = Vec::new();

    for point in &scan.points {
        let is_static = match doppler_error(point, body_to_radar, world_to_body, body_velocity_world)
        {
            Ok(v_error) => {
                let abs_ok = v_error.abs() < v_thr;
                let ratio_ok = if point.doppler == 0.0 {
                    true
                } else {
                    (v_error / point.doppler).abs() < p_thr
                };
                abs_ok && ratio_ok
            }
            Err(_) => false,
        };
        if is_static {
            static_points.push(*point);
        } else {
            dynamic_points.push(*point);
        }
    }

    DynamicSplit {
        static_scan: RadarScan::new(scan.timestamp, static_points),
        dynamic_scan: RadarScan::new(scan.timestamp, dynamic_points),
    }
}

/// Predicted transform mapping previous-frame radar coordinates into the
/// current radar frame: constant-velocity extrapolation of translation
/// composed with the gyro-integrated rotation.
///
/// `rotation_delta` is the body rotation over the interval (from gyro
/// integration), `velocity_world` the previous body velocity estimate,
/// `radar_to_body` the fixed extrinsic pose.
pub fn predict_transform(
    previous_orientation: &UnitQuaternion<f64>,
    rotation_delta: &UnitQuaternion<f64>,
    velocity_world: &Vector3<f64>,
    dt: f64,
    radar_to_body: &Pose,
) -> Pose {
    // Current body pose expressed in the previous body frame.
    let translation_body = previous_orientation.inverse() * (velocity_world * dt);
    let body_motion = Pose::new(*rotation_delta, translation_body);
    radar_to_body
        .inverse()
        .compose(&body_motion.inverse())
        .compose(radar_to_body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn identity3() -> Matrix3<f64> {
        Matrix3::identity()
    }

    #[test]
    fn radar_point_angles_consistent_with_position() {
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..100 {
            let p = Vector3::new(
                rng.gen::<f64>() * 20.0 + 1.0,
                rng.gen::<f64>() * 10.0 - 5.0,
                rng.gen::<f64>() * 4.0 - 2.0,
            );
            let point = RadarPoint::new(p, 0.0, 0.0);
            let r = p.norm();
            let reconstructed = Vector3::new(
                r * point.elevation.cos() * point.azimuth.cos(),
                r * point.elevation.cos() * point.azimuth.sin(),
                r * point.elevation.sin(),
            );
            assert_relative_eq!(reconstructed, p, epsilon = 1e-9);
        }
    }

    #[test]
    fn doppler_error_examples() {
        // Stationary platform, zero doppler.
        let p = RadarPoint::new(Vector3::new(5.0, 2.0, 1.0), 0.0, 0.0);
        let e = doppler_error(&p, &identity3(), &identity3(), &Vector3::zeros()).unwrap();
        assert_relative_eq!(e, 0.0, epsilon = 1e-12);

        // Exact cancellation: moving +x at 1 m/s, point ahead, doppler -1.
        let p = RadarPoint::new(Vector3::new(10.0, 0.0, 0.0), -1.0, 0.0);
        let e = doppler_error(&p, &identity3(), &identity3(), &Vector3::new(1.0, 0.0, 0.0)).unwrap();
        assert_relative_eq!(e, 0.0, epsilon = 1e-12);

        // Oncoming mover at +1 doppler doubles the error.
        let p = RadarPoint::new(Vector3::new(10.0, 0.0, 0.0), 1.0, 0.0);
        let e = doppler_error(&p, &identity3(), &identity3(), &Vector3::new(1.0, 0.0, 0.0)).unwrap();
        assert_relative_eq!(e, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn doppler_error_scale_invariant() {
        let v = Vector3::new(1.2, -0.4, 0.1);
        let base = RadarPoint::new(Vector3::new(3.0, 4.0, 1.0), -0.7, 0.0);
        let scaled = RadarPoint::new(base.position * 17.0, -0.7, 0.0);
        let e1 = doppler_error(&base, &identity3(), &identity3(), &v).unwrap();
        let e2 = doppler_error(&scaled, &identity3(), &identity3(), &v).unwrap();
        assert_relative_eq!(e1, e2, epsilon = 1e-12);
    }

    #[test]
    fn doppler_error_zero_range_rejected() {
        let p = RadarPoint::new(Vector3::zeros(), 0.0, 0.0);
        assert_eq!(
            doppler_error(&p, &identity3(), &identity3(), &Vector3::zeros()),
            Err(PreprocessError::ZeroRangePoint)
        );
    }

    #[test]
    fn filter_dynamic_basic() {
        let v = Vector3::new(1.0, 0.0, 0.0);
        // Static point: doppler cancels the projected velocity.
        let static_pt = RadarPoint::new(Vector3::new(10.0, 0.0, 0.0), -1.0, 0.0);
        // Mover adds 2 m/s radial on top.
        let mover = RadarPoint::new(Vector3::new(10.0, 1.0, 0.0), 1.0, 0.0);
        let scan = RadarScan::new(0.0, vec![static_pt, mover]);
        let split = filter_dynamic(&scan, &identity3(), &identity3(), &v, 0.4, 0.25);
        assert_eq!(split.static_scan.len(), 1);
        assert_eq!(split.dynamic_scan.len(), 1);
        assert_relative_eq!(split.static_scan.points[0].position.x, 10.0);
    }

    #[test]
    fn filter_dynamic_boundary_inside_case() {
        // |v_error| = 0.39 < 0.4 and ratio 0.1 < 0.25 -> retained.
        let p = RadarPoint::new(Vector3::new(10.0, 0.0, 0.0), -3.9, 0.0);
        let v = Vector3::new(4.29, 0.0, 0.0); // v_error = 4.29 - 3.9 = 0.39, ratio = 0.1
        let scan = RadarScan::new(0.0, vec![p]);
        let split = filter_dynamic(&scan, &identity3(), &identity3(), &v, 0.4, 0.25);
        assert_eq!(split.static_scan.len(), 1);
    }

    #[test]
    fn filter_dynamic_zero_doppler_convention() {
        // doppler = 0: ratio test passes by convention if |v_error| < v_thr.
        let p = RadarPoint::new(Vector3::new(0.0, 10.0, 0.0), 0.0, 0.0);
        let v = Vector3::new(1.0, 0.0, 0.0); // orthogonal: v_error = 0
        let scan = RadarScan::new(0.0, vec![p]);
        let split = filter_dynamic(&scan, &identity3(), &identity3(), &v, 0.4, 0.25);
        assert_eq!(split.static_scan.len(), 1);
    }

    #[test]
    fn filter_dynamic_idempotent() {
        let mut rng = StdRng::seed_from_u64(2);
        let v = Vector3::new(2.0, -1.0, 0.3);
        let points: Vec<RadarPoint> = (0..200)
            .map(|_| {
                let pos = Vector3::new(
                    rng.gen::<f64>() * 30.0 + 1.0,
                    rng.gen::<f64>() * 20.0 - 10.0,
                    rng.gen::<f64>() * 4.0 - 2.0,
                );
                let dir = pos / pos.norm();
                // Half static, half with an extra radial offset.
                let extra = if rng.gen::<bool>() { 0.0 } else { 2.0 };
                RadarPoint::new(pos, -dir.dot(&v) + extra, 0.0)
            })
            .collect();
        let scan = RadarScan::new(0.0, points);
        let first = filter_dynamic(&scan, &identity3(), &identity3(), &v, 0.4, 0.25);
        let second = filter_dynamic(
            &first.static_scan,
            &identity3(),
            &identity3(),
            &v,
            0.4,
            0.25,
        );
        assert_eq!(second.static_scan.len(), first.static_scan.len());
        assert!(second.dynamic_scan.is_empty());
    }

    #[test]
    fn divide_cloud_examples() {
        let config = GridConfig {
            theta_start: -60f64.to_radians(),
            theta_res: 1f64.to_radians(),
            azimuth_intervals: 120,
            ..GridConfig::default()
        };
        // azimuth -59.5° lands in interval 0
        let az = -59.5f64.to_radians();
        let p = RadarPoint::new(Vector3::new(az.cos() * 10.0, az.sin() * 10.0, 0.0), 0.0, 0.0);
        let scan = RadarScan::new(0.0, vec![p]);
        let grid = divide_cloud(&scan, &config);
        assert_eq!(grid.assignment[0].0, 0);
        assert_eq!(grid.clamped, 0);

        // Exactly on the lower edge of interval k -> index k (half-open).
        // Exactly-representable grid parameters keep the edge case an edge
        // case; a cos/atan2 round trip would perturb it by one ulp.
        let exact = GridConfig {
            theta_start: -1.0,
            theta_res: 0.25,
            azimuth_intervals: 8,
            ..GridConfig::default()
        };
        let k = 7;
        let az = exact.theta_start + k as f64 * exact.theta_res;
        let mut p = RadarPoint::new(Vector3::new(az.cos() * 10.0, az.sin() * 10.0, 0.0), 0.0, 0.0);
        p.azimuth = az;
        let scan = RadarScan::new(0.0, vec![p]);
        let grid = divide_cloud(&scan, &exact);
        assert_eq!(grid.assignment[0].0, k);
    }

    #[test]
    fn divide_cloud_partitions_random_points() {
        let config = GridConfig::default();
        let mut rng = StdRng::seed_from_u64(3);
        let points: Vec<RadarPoint> = (0..1000)
            .map(|_| {
                let az = rng.gen::<f64>() * 118f64.to_radians() - 59f64.to_radians();
                let el = rng.gen::<f64>() * 28f64.to_radians() - 14f64.to_radians();
                let r = rng.gen::<f64>() * 30.0 + 1.0;
                RadarPoint::new(
                    Vector3::new(
                        r * el.cos() * az.cos(),
                        r * el.cos() * az.sin(),
                        r * el.sin(),
                    ),
                    0.0,
                    0.0,
                )
            })
            .collect();
        let scan = RadarScan::new(0.0, points);
        let grid = divide_cloud(&scan, &config);
        assert_eq!(grid.assignment.len(), 1000);
        assert_eq!(grid.azimuth_counts.iter().sum::<usize>(), 1000);
        assert_eq!(grid.elevation_counts.iter().sum::<usize>(), 1000);
        assert_eq!(grid.clamped, 0);
    }

    #[test]
    fn divide_cloud_clamps_out_of_fov() {
        let config = GridConfig::default();
        // Point behind the sensor: azimuth ~180°.
        let p = RadarPoint::new(Vector3::new(-10.0, 0.1, 0.0), 0.0, 0.0);
        let scan = RadarScan::new(0.0, vec![p]);
        let grid = divide_cloud(&scan, &config);
        assert_eq!(grid.clamped, 1);
        assert_eq!(grid.assignment[0].0, config.azimuth_intervals - 1);
    }

    #[test]
    fn remove_outliers_identity_keeps_everything() {
        let mut rng = StdRng::seed_from_u64(4);
        let points: Vec<RadarPoint> = (0..100)
            .map(|_| {
                RadarPoint::new(
                    Vector3::new(
                        rng.gen::<f64>() * 20.0 + 1.0,
                        rng.gen::<f64>() * 10.0 - 5.0,
                        rng.gen::<f64>() * 2.0 - 1.0,
                    ),
                    0.0,
                    0.0,
                )
            })
            .collect();
        let scan = RadarScan::new(0.0, points);
        let report = remove_outliers(&scan, &scan, &Pose::identity(), 0.5);
        assert_eq!(report.scan.len(), scan.len());
        assert_eq!(report.removed, 0);
        assert!(!report.passed_through);
    }

    #[test]
    fn remove_outliers_drops_isolated_point() {
        let previous = RadarScan::new(
            0.0,
            vec![
                RadarPoint::new(Vector3::new(5.0, 0.0, 0.0), 0.0, 0.0),
                RadarPoint::new(Vector3::new(6.0, 1.0, 0.0), 0.0, 0.0),
            ],
        );
        let current = RadarScan::new(
            0.1,
            vec![
                RadarPoint::new(Vector3::new(5.1, 0.0, 0.0), 0.0, 0.0),
                RadarPoint::new(Vector3::new(16.0, 1.0, 0.0), 0.0, 0.0), // 10 m from anything
            ],
        );
        let report = remove_outliers(&current, &previous, &Pose::identity(), 0.5);
        assert_eq!(report.scan.len(), 1);
        assert_eq!(report.removed, 1);
    }

    #[test]
    fn predict_transform_maps_static_points() {
        let radar_to_body = Pose::new(
            UnitQuaternion::from_euler_angles(0.0, 0.0, 0.3),
            Vector3::new(0.5, 0.1, 0.0),
        );
        let q_prev = UnitQuaternion::from_euler_angles(0.0, 0.0, 0.7);
        let dq = UnitQuaternion::from_euler_angles(0.0, 0.0, 0.1);
        let q_curr = q_prev * dq;
        let p_prev = Vector3::new(3.0, -2.0, 0.0);
        let v = q_prev * Vector3::new(2.0, 0.0, 0.0);
        let dt = 0.1;
        let p_curr = p_prev + v * dt;

        let world_point = Vector3::new(10.0, 5.0, 1.0);
        let radar_pose_prev = Pose::new(q_prev, p_prev).compose(&radar_to_body);
        let radar_pose_curr = Pose::new(q_curr, p_curr).compose(&radar_to_body);
        let in_prev = radar_pose_prev.inverse().transform_point(&world_point);
        let in_curr = radar_pose_curr.inverse().transform_point(&world_point);

        let t = predict_transform(&q_prev, &dq, &v, dt, &radar_to_body);
        assert_relative_eq!(t.transform_point(&in_prev), in_curr, epsilon = 1e-9);
    }

    #[test]
    fn remove_outliers_empty_passes_through() {
        let empty = RadarScan::new(0.0, vec![]);
        let scan = RadarScan::new(
            0.1,
            vec![RadarPoint::new(Vector3::new(1.0, 0.0, 0.0), 0.0, 0.0)],
        );
        let report = remove_outliers(&scan, &empty, &Pose::identity(), 0.5);
        assert!(report.passed_through);
        assert_eq!(report.scan.len(), 1);
    }
}
