//! Four-bar finger kinematics and gripper configuration.
//!
//! The finger is driven by a linear actuator whose endpoint displacement `y`
//! rotates the crank of a planar four-bar linkage through the pivot radius
//! `R1`. The follower carries the finger, so the finger bend angle `theta`
//! is the follower rotation relative to the home pose. The position solve is
//! the classic loop-closure (two-circle intersection) with a fixed assembly
//! branch, which over the default actuator travel is close to linear in `y`.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KinematicsError {
    #[error("OutOfTravel: y = {y} mm outside actuator travel [{min}, {max}] mm")]
    OutOfTravel { y: f64, min: f64, max: f64 },
    #[error("SingularLinkage: loop closure has no real solution at crank angle {phi} rad")]
    SingularLinkage { phi: f64 },
    #[error("InsufficientSamples: need at least {min}, got {got}")]
    InsufficientSamples { got: usize, min: usize },
    #[error("InvalidGeometry: {0}")]
    InvalidGeometry(String),
    #[error("ServoOutOfLimits: angle {angle} rad outside [{min}, {max}] rad")]
    ServoOutOfLimits { angle: f64, min: f64, max: f64 },
    #[error("BadFingerIndex: {0} (expected 0..=2)")]
    BadFingerIndex(usize),
}

/// Four-bar linkage dimensions plus the finger they carry. Lengths in mm,
/// angles in radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkageGeometry {
    pub ground_link: f64,
    pub crank_link: f64,
    pub coupler_link: f64,
    pub follower_link: f64,
    /// Pivot radius converting actuator displacement to crank rotation.
    pub pivot_radius_1: f64,
    /// Offset of the finger base above the follower pivot.
    pub pivot_radius_2: f64,
    /// `[y_min, y_max]` actuator endpoint displacement, mm.
    pub actuator_travel: [f64; 2],
    pub finger_length: f64,
    /// Home-position calibration: `theta(y_min) = raw follower angle - theta_offset`.
    /// Omit from config (or set to NaN) to auto-calibrate so `theta(y_min) = 0`.
    #[serde(default = "nan")]
    pub theta_offset: f64,
}

fn nan() -> f64 {
    f64::NAN
}

impl Default for LinkageGeometry {
    fn default() -> Self {
        let mut geo = LinkageGeometry {
            ground_link: 40.0,
            crank_link: 15.0,
            coupler_link: 42.0,
            follower_link: 16.0,
            pivot_radius_1: 15.0,
            pivot_radius_2: 8.0,
            actuator_travel: [12.0, 36.0],
            finger_length: 96.0,
            theta_offset: f64::NAN,
        };
        geo.calibrate_home().expect("default geometry is feasible");
        geo
    }
}

impl LinkageGeometry {
    pub fn y_min(&self) -> f64 {
        self.actuator_travel[0]
    }

    pub fn y_max(&self) -> f64 {
        self.actuator_travel[1]
    }

    /// Checks the type invariants: positive lengths, ordered travel, and a
    /// real loop-closure solution over the whole travel. Calibrates the home
    /// offset when it is unset (NaN).
    pub fn validate(&mut self) -> Result<(), KinematicsError> {
        let lengths = [
            ("ground_link", self.ground_link),
            ("crank_link", self.crank_link),
            ("coupler_link", self.coupler_link),
            ("follower_link", self.follower_link),
            ("pivot_radius_1", self.pivot_radius_1),
            ("pivot_radius_2", self.pivot_radius_2),
            ("finger_length", self.finger_length),
        ];
        for (name, v) in lengths {
            if !(v > 0.0) {
                return Err(KinematicsError::InvalidGeometry(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        if !(self.y_min() < self.y_max()) {
            return Err(KinematicsError::InvalidGeometry(format!(
                "actuator travel must satisfy y_min < y_max, got [{}, {}]",
                self.y_min(),
                self.y_max()
            )));
        }
        // Feasibility sweep: the solve must have a real solution everywhere
        // in the travel. 257 points plus continuity of the mechanism cover
        // the interval at desk scale.
        for k in 0..=256 {
            let y = self.y_min() + (self.y_max() - self.y_min()) * k as f64 / 256.0;
            self.raw_follower_angle(y)?;
        }
        if self.theta_offset.is_nan() {
            self.calibrate_home()?;
        }
        Ok(())
    }

    /// Sets `theta_offset` so that `solve_theta(y_min) = 0`.
    pub fn calibrate_home(&mut self) -> Result<(), KinematicsError> {
        self.theta_offset = 0.0;
        self.theta_offset = self.raw_follower_angle(self.y_min())?;
        Ok(())
    }

    /// Follower angle at ground pivot before home-offset subtraction.
    fn raw_follower_angle(&self, y: f64) -> Result<f64, KinematicsError> {
        let phi = y / self.pivot_radius_1;
        let (g, a, b, c) = (
            self.ground_link,
            self.crank_link,
            self.coupler_link,
            self.follower_link,
        );
        // Crank end and ground pivot of the follower.
        let crank_end = Vector2::new(a * phi.cos(), a * phi.sin());
        let ground = Vector2::new(g, 0.0);
        let sep = ground - crank_end;
        let d2 = sep.norm_squared();
        let d = d2.sqrt();
        if d > b + c || d < (b - c).abs() || d < f64::EPSILON {
            return Err(KinematicsError::SingularLinkage { phi });
        }
        // Intersection of the coupler circle (around the crank end) and the
        // follower circle (around the ground pivot). The branch with the
        // coupler on the positive side of the crank-end->ground line is the
        // assembled (elbow-up) mode; a physical finger never flips branch.
        let h = (b * b - c * c + d2) / (2.0 * d);
        let k2 = b * b - h * h;
        if k2 < 0.0 {
            return Err(KinematicsError::SingularLinkage { phi });
        }
        let k = k2.sqrt();
        let u = sep / d;
        let perp = Vector2::new(-u.y, u.x);
        let joint = crank_end + u * h + perp * k;
        let follower = joint - ground;
        Ok(follower.y.atan2(follower.x))
    }
}

/// One finger's actuator displacement and the bend angle it produces.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FingerState {
    /// Actuator endpoint displacement, mm.
    pub y: f64,
    /// Finger bend angle, rad.
    pub theta: f64,
}

impl FingerState {
    pub fn from_actuator(geometry: &LinkageGeometry, y: f64) -> Result<Self, KinematicsError> {
        Ok(FingerState {
            y,
            theta: solve_theta(geometry, y)?,
        })
    }
}

/// Finger bend angle for actuator displacement `y`.
///
/// Continuous and monotone non-decreasing over the travel for feasible
/// geometries; `theta(y_min) = 0` when the home offset is calibrated.
pub fn solve_theta(geometry: &LinkageGeometry, y: f64) -> Result<f64, KinematicsError> {
    let (min, max) = (geometry.y_min(), geometry.y_max());
    if !(min - 1e-9..=max + 1e-9).contains(&y) {
        return Err(KinematicsError::OutOfTravel { y, min, max });
    }
    Ok(geometry.raw_follower_angle(y)? - geometry.theta_offset)
}

/// Ordinary-least-squares fit of `theta` against `y` over a uniform sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinearFit {
    /// rad per mm.
    pub slope: f64,
    /// rad.
    pub intercept: f64,
    pub r_squared: f64,
}

/// Fits `theta = slope * y + intercept` over `n_samples` uniformly spaced
/// actuator positions and reports the coefficient of determination.
pub fn fit_linear_map(
    geometry: &LinkageGeometry,
    n_samples: usize,
) -> Result<LinearFit, KinematicsError> {
    if n_samples < 3 {
        return Err(KinematicsError::InsufficientSamples {
            got: n_samples,
            min: 3,
        });
    }
    let sweep = sweep_theta(geometry, n_samples)?;
    let n = n_samples as f64;
    let (mut sy, mut st) = (0.0, 0.0);
    for &(y, t) in &sweep {
        sy += y;
        st += t;
    }
    let (my, mt) = (sy / n, st / n);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(y, t) in &sweep {
        sxx += (y - my) * (y - my);
        sxy += (y - my) * (t - mt);
    }
    let slope = sxy / sxx;
    let intercept = mt - slope * my;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for &(y, t) in &sweep {
        let e = t - (slope * y + intercept);
        ss_res += e * e;
        ss_tot += (t - mt) * (t - mt);
    }
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Uniform sweep of `(y, theta)` pairs over the actuator travel.
pub fn sweep_theta(
    geometry: &LinkageGeometry,
    n_samples: usize,
) -> Result<Vec<(f64, f64)>, KinematicsError> {
    (0..n_samples)
        .map(|k| {
            let y = geometry.y_min()
                + (geometry.y_max() - geometry.y_min()) * k as f64 / (n_samples - 1).max(1) as f64;
            Ok((y, solve_theta(geometry, y)?))
        })
        .collect()
}

/// Reconfiguration modes of the gripper.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConfigurationMode {
    /// Side fingers face each other for pinch grasps (configuration 1).
    Parallel,
    /// All three fingers at 120 degree spacing (configuration 2).
    Trigonal,
    /// Side fingers parallel, opposing the fixed finger (configuration 3).
    TShaped,
}

impl ConfigurationMode {
    pub const ALL: [ConfigurationMode; 3] = [
        ConfigurationMode::Parallel,
        ConfigurationMode::Trigonal,
        ConfigurationMode::TShaped,
    ];

    /// 1-based index used by the command line and output files.
    pub fn index(self) -> u8 {
        match self {
            ConfigurationMode::Parallel => 1,
            ConfigurationMode::Trigonal => 2,
            ConfigurationMode::TShaped => 3,
        }
    }

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(i.checked_sub(1)? as usize).copied()
    }
}

/// Palm layout and per-mode servo presets. The fixed finger is mounted at
/// `fixed_azimuth`; the two side fingers sit at `side_azimuths` and rotate
/// about their own mount axes by the servo angles (0 = facing the palm
/// centre).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PalmGeometry {
    /// Mount circle radius, mm.
    pub palm_radius: f64,
    /// Mount azimuth of the fixed finger, rad.
    pub fixed_azimuth: f64,
    /// Mount azimuths of side fingers 1 and 2, rad.
    pub side_azimuths: [f64; 2],
    /// Hard servo limits `[min, max]`, rad.
    pub servo_limits: [f64; 2],
    /// Canonical servo angles per mode: `[parallel, trigonal, t_shaped]`,
    /// each `[servo_1, servo_2]`.
    pub mode_presets: [[f64; 2]; 3],
    /// Half-width of the uniform servo sampling window around the preset,
    /// per mode, rad. Used by workspace sampling.
    pub mode_jitter: [f64; 3],
}

impl Default for PalmGeometry {
    fn default() -> Self {
        use std::f64::consts::{FRAC_PI_3, FRAC_PI_6, PI};
        PalmGeometry {
            palm_radius: 85.0,
            fixed_azimuth: PI,
            side_azimuths: [FRAC_PI_3, -FRAC_PI_3],
            servo_limits: [-1.45, 1.45],
            mode_presets: [
                [FRAC_PI_6, -FRAC_PI_6],
                [0.0, 0.0],
                [-FRAC_PI_3, FRAC_PI_3],
            ],
            mode_jitter: [0.40, 0.50, 0.25],
        }
    }
}

impl PalmGeometry {
    pub fn validate(&self) -> Result<(), KinematicsError> {
        if !(self.palm_radius > 0.0) {
            return Err(KinematicsError::InvalidGeometry(format!(
                "palm_radius must be strictly positive, got {}",
                self.palm_radius
            )));
        }
        if !(self.servo_limits[0] < self.servo_limits[1]) {
            return Err(KinematicsError::InvalidGeometry(
                "servo_limits must be ordered".into(),
            ));
        }
        for (mode, preset) in ConfigurationMode::ALL.iter().zip(self.mode_presets) {
            for angle in preset {
                self.check_servo(angle).map_err(|_| {
                    KinematicsError::InvalidGeometry(format!(
                        "{mode:?} preset servo angle {angle} outside limits"
                    ))
                })?;
            }
        }
        Ok(())
    }

    pub fn preset(&self, mode: ConfigurationMode) -> [f64; 2] {
        self.mode_presets[mode.index() as usize - 1]
    }

    pub fn jitter(&self, mode: ConfigurationMode) -> f64 {
        self.mode_jitter[mode.index() as usize - 1]
    }

    fn check_servo(&self, angle: f64) -> Result<(), KinematicsError> {
        if angle < self.servo_limits[0] - 1e-12 || angle > self.servo_limits[1] + 1e-12 {
            return Err(KinematicsError::ServoOutOfLimits {
                angle,
                min: self.servo_limits[0],
                max: self.servo_limits[1],
            });
        }
        Ok(())
    }

    /// Mount azimuth of a finger: 0 is the fixed finger, 1 and 2 the sides.
    fn mount_azimuth(&self, finger: usize) -> f64 {
        match finger {
            0 => self.fixed_azimuth,
            i => self.side_azimuths[i - 1],
        }
    }
}

/// A complete gripper pose: mode, side-finger servo angles and the three
/// finger states (index 0 is the fixed finger).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GripperConfiguration {
    pub mode: ConfigurationMode,
    pub servo_angle_1: f64,
    pub servo_angle_2: f64,
    pub fingers: [FingerState; 3],
}

impl GripperConfiguration {
    /// Canonical configuration for `mode` with all fingers at actuator
    /// position `y`.
    pub fn preset(
        palm: &PalmGeometry,
        geometry: &LinkageGeometry,
        mode: ConfigurationMode,
        y: f64,
    ) -> Result<Self, KinematicsError> {
        let [s1, s2] = palm.preset(mode);
        Self::new(palm, geometry, mode, [s1, s2], [y, y, y])
    }

    pub fn new(
        palm: &PalmGeometry,
        geometry: &LinkageGeometry,
        mode: ConfigurationMode,
        servos: [f64; 2],
        ys: [f64; 3],
    ) -> Result<Self, KinematicsError> {
        palm.check_servo(servos[0])?;
        palm.check_servo(servos[1])?;
        let mk = |y| FingerState::from_actuator(geometry, y);
        Ok(GripperConfiguration {
            mode,
            servo_angle_1: servos[0],
            servo_angle_2: servos[1],
            fingers: [mk(ys[0])?, mk(ys[1])?, mk(ys[2])?],
        })
    }

    fn servo(&self, finger: usize) -> f64 {
        match finger {
            0 => 0.0,
            1 => self.servo_angle_1,
            _ => self.servo_angle_2,
        }
    }
}

/// Fingertip position and contact normal in the gripper palm frame, mm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FingertipPose {
    pub position: Vector3<f64>,
    /// Unit vector pointing from the fingertip towards the object it would
    /// press against.
    pub normal: Vector3<f64>,
}

/// Forward kinematics of one fingertip.
///
/// The finger rests along the palm axis (+z) on its mount; the bend angle
/// rotates the tip towards the facing direction set by the mount azimuth
/// plus servo rotation.
pub fn fingertip_position(
    palm: &PalmGeometry,
    geometry: &LinkageGeometry,
    config: &GripperConfiguration,
    finger_index: usize,
) -> Result<FingertipPose, KinematicsError> {
    if finger_index > 2 {
        return Err(KinematicsError::BadFingerIndex(finger_index));
    }
    let azimuth = palm.mount_azimuth(finger_index);
    let mount = Vector3::new(
        palm.palm_radius * azimuth.cos(),
        palm.palm_radius * azimuth.sin(),
        0.0,
    );
    let facing_az = azimuth + config.servo(finger_index);
    let facing = Vector3::new(-facing_az.cos(), -facing_az.sin(), 0.0);
    let z = Vector3::z();
    let theta = config.fingers[finger_index].theta;
    let direction = facing * theta.sin() + z * theta.cos();
    let position = mount + z * geometry.pivot_radius_2 + direction * geometry.finger_length;
    let normal = facing * theta.cos() - z * theta.sin();
    Ok(FingertipPose { position, normal })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::Rng;

    fn default_geometry() -> LinkageGeometry {
        LinkageGeometry::default()
    }

    #[test]
    fn theta_is_zero_at_home() {
        let geo = default_geometry();
        let theta = solve_theta(&geo, geo.y_min()).unwrap();
        assert_abs_diff_eq!(theta, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn parallelogram_follower_tracks_crank() {
        // crank == follower and ground == coupler: follower rotation equals
        // crank rotation exactly.
        let mut geo = LinkageGeometry {
            ground_link: 40.0,
            crank_link: 15.0,
            coupler_link: 40.0,
            follower_link: 15.0,
            pivot_radius_1: 15.0,
            pivot_radius_2: 8.0,
            actuator_travel: [12.0, 34.0],
            finger_length: 96.0,
            theta_offset: f64::NAN,
        };
        geo.validate().unwrap();
        for k in 0..=50 {
            let y = geo.y_min() + (geo.y_max() - geo.y_min()) * k as f64 / 50.0;
            let theta = solve_theta(&geo, y).unwrap();
            let crank_rotation = (y - geo.y_min()) / geo.pivot_radius_1;
            assert_abs_diff_eq!(theta, crank_rotation, epsilon = 1e-9);
        }
    }

    #[test]
    fn default_sweep_is_nearly_linear() {
        let fit = fit_linear_map(&default_geometry(), 200).unwrap();
        assert!(
            fit.r_squared >= 0.98,
            "R^2 = {} below 0.98",
            fit.r_squared
        );
        assert!(fit.slope > 0.0);
        // Default travel spans roughly 0..1.5 rad.
        let theta_max = solve_theta(&default_geometry(), 36.0).unwrap();
        assert!((1.2..1.6).contains(&theta_max), "theta_max = {theta_max}");
    }

    #[test]
    fn exactly_linear_map_fits_perfectly() {
        // A parallelogram linkage has theta = (y - y_min) / R1 exactly.
        let mut geo = default_geometry();
        geo.coupler_link = geo.ground_link;
        geo.follower_link = geo.crank_link;
        geo.calibrate_home().unwrap();
        let fit = fit_linear_map(&geo, 64).unwrap();
        assert_abs_diff_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
        assert_relative_eq!(fit.slope, 1.0 / geo.pivot_radius_1, epsilon = 1e-9);
    }

    #[test]
    fn degenerate_fit_is_guarded() {
        let err = fit_linear_map(&default_geometry(), 2).unwrap_err();
        assert_eq!(err, KinematicsError::InsufficientSamples { got: 2, min: 3 });
    }

    #[test]
    fn out_of_travel_is_rejected() {
        let geo = default_geometry();
        assert!(matches!(
            solve_theta(&geo, geo.y_max() + 1.0),
            Err(KinematicsError::OutOfTravel { .. })
        ));
    }

    #[test]
    fn singular_linkage_is_reported() {
        // A coupler far too short to close the loop anywhere.
        let mut geo = default_geometry();
        geo.coupler_link = 5.0;
        assert!(matches!(
            geo.validate(),
            Err(KinematicsError::SingularLinkage { .. })
        ));
    }

    #[test]
    fn monotone_over_random_pairs() {
        let geo = default_geometry();
        let mut rng = crate::rng::stream(11, crate::rng::Domain::Workspace, 0);
        for _ in 0..1000 {
            let a = rng.gen_range(geo.y_min()..geo.y_max());
            let b = rng.gen_range(geo.y_min()..geo.y_max());
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let t_lo = solve_theta(&geo, lo).unwrap();
            let t_hi = solve_theta(&geo, hi).unwrap();
            assert!(t_lo <= t_hi + 1e-12, "theta({lo}) > theta({hi})");
        }
    }

    #[test]
    fn continuity_bound_from_fitted_slope() {
        let geo = default_geometry();
        let lipschitz = fit_linear_map(&geo, 200).unwrap().slope * 10.0;
        let eps = 1e-6;
        for k in 0..200 {
            let y = geo.y_min() + (geo.y_max() - geo.y_min() - eps) * k as f64 / 199.0;
            let d = (solve_theta(&geo, y + eps).unwrap() - solve_theta(&geo, y).unwrap()).abs();
            assert!(d <= lipschitz * eps, "jump {d} at y = {y}");
        }
    }

    #[test]
    fn branch_is_stable_across_sweep() {
        let sweep = sweep_theta(&default_geometry(), 400).unwrap();
        for pair in sweep.windows(2) {
            let jump = (pair[1].1 - pair[0].1).abs();
            assert!(jump < 0.1, "branch flip: jump {jump}");
        }
    }

    /// Horizontal facing direction of a fingertip (bend-plane azimuth).
    fn facing(pose: &FingertipPose) -> Vector2<f64> {
        Vector2::new(pose.normal.x, pose.normal.y).normalize()
    }

    #[test]
    fn preset_parallel_side_fingers_oppose() {
        let palm = PalmGeometry::default();
        let geo = default_geometry();
        let cfg =
            GripperConfiguration::preset(&palm, &geo, ConfigurationMode::Parallel, 20.0).unwrap();
        let t1 = fingertip_position(&palm, &geo, &cfg, 1).unwrap();
        let t2 = fingertip_position(&palm, &geo, &cfg, 2).unwrap();
        assert_abs_diff_eq!(facing(&t1).dot(&facing(&t2)), -1.0, epsilon = 1e-9);
    }

    #[test]
    fn preset_trigonal_has_120_degree_spacing() {
        let palm = PalmGeometry::default();
        let geo = default_geometry();
        let cfg =
            GripperConfiguration::preset(&palm, &geo, ConfigurationMode::Trigonal, 20.0).unwrap();
        let mut tips = Vec::new();
        for i in 0..3 {
            tips.push(fingertip_position(&palm, &geo, &cfg, i).unwrap());
        }
        for i in 0..3 {
            let a = facing(&tips[i]);
            let b = facing(&tips[(i + 1) % 3]);
            assert_abs_diff_eq!(a.dot(&b), -0.5, epsilon = 1e-9);
        }
    }

    #[test]
    fn preset_tshaped_sides_parallel_opposing_fixed() {
        let palm = PalmGeometry::default();
        let geo = default_geometry();
        let cfg =
            GripperConfiguration::preset(&palm, &geo, ConfigurationMode::TShaped, 20.0).unwrap();
        let t0 = fingertip_position(&palm, &geo, &cfg, 0).unwrap();
        let t1 = fingertip_position(&palm, &geo, &cfg, 1).unwrap();
        let t2 = fingertip_position(&palm, &geo, &cfg, 2).unwrap();
        assert_abs_diff_eq!(facing(&t1).dot(&facing(&t2)), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(facing(&t0).dot(&facing(&t1)), -1.0, epsilon = 1e-9);
    }

    #[test]
    fn parallel_tips_mirror_about_mid_plane() {
        let palm = PalmGeometry::default();
        let geo = default_geometry();
        let cfg =
            GripperConfiguration::preset(&palm, &geo, ConfigurationMode::Parallel, 24.0).unwrap();
        let t1 = fingertip_position(&palm, &geo, &cfg, 1).unwrap().position;
        let t2 = fingertip_position(&palm, &geo, &cfg, 2).unwrap().position;
        assert_abs_diff_eq!(t1.x, t2.x, epsilon = 1e-9);
        assert_abs_diff_eq!(t1.y, -t2.y, epsilon = 1e-9);
        assert_abs_diff_eq!(t1.z, t2.z, epsilon = 1e-9);
    }

    #[test]
    fn rest_tip_points_along_rest_axis() {
        let palm = PalmGeometry::default();
        let geo = default_geometry();
        let cfg =
            GripperConfiguration::preset(&palm, &geo, ConfigurationMode::Trigonal, geo.y_min())
                .unwrap();
        let tip = fingertip_position(&palm, &geo, &cfg, 0).unwrap();
        let mount = Vector3::new(-palm.palm_radius, 0.0, 0.0);
        let expected = mount + Vector3::z() * (geo.pivot_radius_2 + geo.finger_length);
        assert_abs_diff_eq!((tip.position - expected).norm(), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(tip.normal.norm(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn trigonal_equal_bend_gives_equilateral_tips() {
        // Hand computation: with 120 degree mount spacing and identical bend,
        // the three tips lie on a circle about the palm axis at equal
        // azimuthal spacing, so all pairwise distances are sqrt(3) * radius.
        let palm = PalmGeometry::default();
        let geo = default_geometry();
        let cfg =
            GripperConfiguration::preset(&palm, &geo, ConfigurationMode::Trigonal, 25.0).unwrap();
        let theta = cfg.fingers[0].theta;
        let radius = palm.palm_radius - geo.finger_length * theta.sin();
        let expected_side = 3.0f64.sqrt() * radius.abs();
        let mut tips = Vec::new();
        for i in 0..3 {
            tips.push(fingertip_position(&palm, &geo, &cfg, i).unwrap().position);
        }
        for i in 0..3 {
            let d = (tips[i] - tips[(i + 1) % 3]).norm();
            assert_abs_diff_eq!(d, expected_side, epsilon = 1e-6);
        }
    }

    #[test]
    fn normals_are_unit_length() {
        let palm = PalmGeometry::default();
        let geo = default_geometry();
        let mut rng = crate::rng::stream(3, crate::rng::Domain::Workspace, 1);
        for _ in 0..100 {
            let mode = ConfigurationMode::ALL[rng.gen_range(0..3)];
            let [p1, p2] = palm.preset(mode);
            let cfg = GripperConfiguration::new(
                &palm,
                &geo,
                mode,
                [p1 + rng.gen_range(-0.2..0.2), p2 + rng.gen_range(-0.2..0.2)],
                [
                    rng.gen_range(geo.y_min()..geo.y_max()),
                    rng.gen_range(geo.y_min()..geo.y_max()),
                    rng.gen_range(geo.y_min()..geo.y_max()),
                ],
            )
            .unwrap();
            for i in 0..3 {
                let tip = fingertip_position(&palm, &geo, &cfg, i).unwrap();
                assert_abs_diff_eq!(tip.normal.norm(), 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn servo_limits_are_enforced() {
        let palm = PalmGeometry::default();
        let geo = default_geometry();
        let err = GripperConfiguration::new(
            &palm,
            &geo,
            ConfigurationMode::Parallel,
            [2.0, 0.0],
            [20.0, 20.0, 20.0],
        )
        .unwrap_err();
        assert!(matches!(err, KinematicsError::ServoOutOfLimits { .. }));
    }
}
