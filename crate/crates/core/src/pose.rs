//! Camera poses, the search step schedule, and pose-error metrics.
//!
//! A [`Pose`] is a world-to-camera rigid transform: `x_cam = R(q) * x_world + t`,
//! the same convention COLMAP uses for `images.txt`. Quaternions are kept unit
//! length and canonicalized so that `q` and `-q` map to one value.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{Quaternion, Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of poses returned by [`neighbors`].
pub const NEIGHBOR_COUNT: usize = 12;

/// Camera extrinsics: unit quaternion `(w, x, y, z)` plus translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: UnitQuaternion::identity(), translation: Vector3::zeros() }
    }

    /// Builds a pose from an already-unit rotation; the quaternion is canonicalized.
    pub fn from_parts(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation: canonicalize(rotation), translation }
    }

    /// Builds a pose from raw `(w, x, y, z)` quaternion components, normalizing them.
    pub fn from_raw(q: [f64; 4], t: [f64; 3]) -> Result<Self> {
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = quat.norm();
        if !norm.is_finite() || norm < 1e-12 || t.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract(format!(
                "pose components must be finite with a nonzero quaternion, got q={q:?} t={t:?}"
            )));
        }
        Ok(Self::from_parts(Unit::new_unchecked(quat / norm), Vector3::from(t)))
    }

    /// Camera looking from `eye` towards `target`, with image +y pointing along
    /// `-up` (OpenCV camera axes: x right, y down, z forward).
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(Error::Contract("look_at eye and target coincide".into()));
        }
        let z = forward.normalize();
        let x = z.cross(&up);
        if x.norm() < 1e-12 {
            return Err(Error::Contract("look_at up vector is parallel to view direction".into()));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        // Rows of the world-to-camera rotation are the camera axes in world coordinates.
        let rot = nalgebra::Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let rotation = UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(rot));
        let translation = -(rotation * eye);
        Ok(Self::from_parts(rotation, translation))
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Quaternion components in `(w, x, y, z)` order.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn translation_xyz(&self) -> [f64; 3] {
        [self.translation.x, self.translation.y, self.translation.z]
    }

    /// Camera center in world coordinates, `-R^T t`.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose::from_parts(inv, -(inv * self.translation))
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [qw, qx, qy, qz] = self.quaternion_wxyz();
        let [tx, ty, tz] = self.translation_xyz();
        write!(f, "{qw} {qx} {qy} {qz} {tx} {ty} {tz}")
    }
}

/// Picks the sign of `q` with `w > 0`; for `w == 0` the first nonzero
/// imaginary component is made positive.
fn canonicalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let c = q.quaternion().coords; // (i, j, k, w)
    let lead = [c[3], c[0], c[1], c[2]].into_iter().find(|v| *v != 0.0).unwrap_or(1.0);
    if lead < 0.0 {
        Unit::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

/// Transform composition: applying the result equals applying `b`, then `a`.
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    let rotation = a.rotation * b.rotation;
    let translation = a.rotation * b.translation + a.translation;
    Pose::from_parts(renormalized(rotation), translation)
}

fn renormalized(mut q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    q.renormalize();
    q
}

/// The 12 single-axis moves around `pose`.
///
/// Order: translations `+x, -x, +y, -y, +z, -z` (camera frame, step `trans_step`),
/// then rotations with the same axis order. A rotation move right-multiplies the
/// quaternion by an axis-angle rotation of `2 * rot_step` radians (so quaternion
/// components move by about `rot_step`) and leaves `t` unchanged, which swings
/// the camera about the world origin.
pub fn neighbors(pose: &Pose, rot_step: f64, trans_step: f64) -> Vec<Pose> {
    let axes = [Vector3::x_axis(), Vector3::y_axis(), Vector3::z_axis()];
    let mut out = Vec::with_capacity(NEIGHBOR_COUNT);
    for axis in &axes {
        for sign in [1.0, -1.0] {
            let t = pose.translation + axis.into_inner() * (sign * trans_step);
            out.push(Pose::from_parts(pose.rotation, t));
        }
    }
    for axis in axes {
        for sign in [1.0, -1.0] {
            let delta = UnitQuaternion::from_axis_angle(&axis, sign * 2.0 * rot_step);
            let rotation = renormalized(pose.rotation * delta);
            out.push(Pose::from_parts(rotation, pose.translation));
        }
    }
    out
}

/// Perturbs every quaternion and translation component with independent
/// uniform noise in `[-scale, scale]`, then renormalizes.
///
/// Deterministic for a given seed. If the perturbed quaternion degenerates,
/// the draw is repeated with `seed + 1`.
pub fn inject_noise(pose: &Pose, q_scale: f64, t_scale: f64, seed: u64) -> Result<Pose> {
    if !(q_scale >= 0.0 && t_scale >= 0.0) {
        return Err(Error::Contract(format!("noise scales must be nonnegative, got q={q_scale} t={t_scale}")));
    }
    let mut seed = seed;
    loop {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |scale: f64| scale * (2.0 * rng.gen::<f64>() - 1.0);
        let [qw, qx, qy, qz] = pose.quaternion_wxyz();
        let q = [qw + draw(q_scale), qx + draw(q_scale), qy + draw(q_scale), qz + draw(q_scale)];
        let [tx, ty, tz] = pose.translation_xyz();
        let t = [tx + draw(t_scale), ty + draw(t_scale), tz + draw(t_scale)];
        if q_scale == 0.0 {
            return Ok(Pose::from_parts(pose.rotation, Vector3::from(t)));
        }
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            seed = seed.wrapping_add(1);
            continue;
        }
        return Pose::from_raw(q, t);
    }
}

/// Translation error (camera centers, scene units) and rotation error (degrees).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    pub translation_error: f64,
    pub rotation_error: f64,
}

impl PoseError {
    pub fn within(&self, t_limit: f64, r_limit_deg: f64) -> bool {
        self.translation_error <= t_limit && self.rotation_error <= r_limit_deg
    }
}

/// Rotation angle between two unit quaternions, in radians, in `[0, pi]`.
pub fn rotation_angle(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    // 2*acos(|<a,b>|) in chord form: exact zero for equal inputs and accurate near zero.
    let (qa, mut qb) = (a.quaternion().coords, b.quaternion().coords);
    if qa.dot(&qb) < 0.0 {
        qb = -qb;
    }
    4.0 * (qa - qb).norm().atan2((qa + qb).norm())
}

pub fn pose_error(estimate: &Pose, gt: &Pose) -> PoseError {
    PoseError {
        translation_error: (estimate.camera_center() - gt.camera_center()).norm(),
        rotation_error: rotation_angle(&estimate.rotation, &gt.rotation).to_degrees(),
    }
}

/// Lower median (element `(n - 1) / 2` of the sorted values). `None` when empty.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

/// Per-component lower median of the errors of `(estimate, gt)` pairs.
pub fn median_errors(pairs: &[(Pose, Pose)]) -> Option<PoseError> {
    let errors: Vec<PoseError> = pairs.iter().map(|(e, g)| pose_error(e, g)).collect();
    median_of(&errors)
}

pub fn median_of(errors: &[PoseError]) -> Option<PoseError> {
    let t: Vec<f64> = errors.iter().map(|e| e.translation_error).collect();
    let r: Vec<f64> = errors.iter().map(|e| e.rotation_error).collect();
    Some(PoseError { translation_error: lower_median(&t)?, rotation_error: lower_median(&r)? })
}

/// One level of the coarse-to-fine search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLevel {
    /// Quaternion-component step; rotation moves turn by twice this many radians.
    pub rot_step: f64,
    /// Translation step in scene units.
    pub trans_step: f64,
    /// Maximum node expansions at this level.
    pub budget: usize,
}

/// Ordered coarse-to-fine step levels, strictly decreasing in both steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<StepLevel>", into = "Vec<StepLevel>")]
pub struct StepSchedule {
    levels: Vec<StepLevel>,
}

impl StepSchedule {
    pub fn new(levels: Vec<StepLevel>) -> Result<Self> {
        for (i, level) in levels.iter().enumerate() {
            if !(level.rot_step > 0.0 && level.trans_step > 0.0) {
                return Err(Error::Config(format!("schedule level {i}: steps must be positive")));
            }
            if !level.rot_step.is_finite() || !level.trans_step.is_finite() {
                return Err(Error::Config(format!("schedule level {i}: steps must be finite")));
            }
            if level.budget == 0 {
                return Err(Error::Config(format!("schedule level {i}: budget must be at least 1")));
            }
        }
        for (i, pair) in levels.windows(2).enumerate() {
            if !(pair[1].rot_step < pair[0].rot_step && pair[1].trans_step < pair[0].trans_step) {
                return Err(Error::Config(format!("schedule levels {i} and {}: steps must strictly decrease", i + 1)));
            }
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[StepLevel] {
        &self.levels
    }

    pub fn total_budget(&self) -> usize {
        self.levels.iter().map(|l| l.budget).sum()
    }
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self {
            levels: vec![
                StepLevel { rot_step: 8e-3, trans_step: 8e-2, budget: 200 },
                StepLevel { rot_step: 2e-3, trans_step: 2e-2, budget: 100 },
                StepLevel { rot_step: 5e-4, trans_step: 5e-3, budget: 100 },
            ],
        }
    }
}

impl TryFrom<Vec<StepLevel>> for StepSchedule {
    type Error = Error;

    fn try_from(levels: Vec<StepLevel>) -> Result<Self> {
        Self::new(levels)
    }
}

impl From<StepSchedule> for Vec<StepLevel> {
    fn from(s: StepSchedule) -> Self {
        s.levels
    }
}

/// A pose tagged with the image it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedPose {
    pub name: String,
    pub pose: Pose,
}

/// Parses `image_name qw qx qy qz tx ty tz` lines; blank and `#` lines are skipped.
pub fn parse_poses(reader: impl BufRead) -> Result<Vec<NamedPose>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(Error::Format(format!(
                "line {}: expected 8 fields (name qw qx qy qz tx ty tz), found {}",
                lineno + 1,
                fields.len()
            )));
        }
        let mut nums = [0.0f64; 7];
        for (slot, tok) in nums.iter_mut().zip(&fields[1..]) {
            *slot =
                tok.parse().map_err(|_| Error::Format(format!("line {}: cannot parse number {tok:?}", lineno + 1)))?;
        }
        let pose = Pose::from_raw([nums[0], nums[1], nums[2], nums[3]], [nums[4], nums[5], nums[6]])
            .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        out.push(NamedPose { name: fields[0].to_string(), pose });
    }
    Ok(out)
}

pub fn read_pose_file(path: impl AsRef<Path>) -> Result<Vec<NamedPose>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_poses(std::io::BufReader::new(file))
}

pub fn write_poses(mut writer: impl Write, poses: &[NamedPose]) -> std::io::Result<()> {
    writeln!(writer, "# image_name qw qx qy qz tx ty tz")?;
    for p in poses {
        writeln!(writer, "{} {}", p.name, p.pose)?;
    }
    Ok(())
}

pub fn write_pose_file(path: impl AsRef<Path>, poses: &[NamedPose]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_poses(std::io::BufWriter::new(file), poses).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Matrix3;
    use std::f64::consts::PI;

    fn rot_z_matrix(angle: f64) -> Matrix3<f64> {
        let (s, c) = angle.sin_cos();
        Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }

    fn sample_pose() -> Pose {
        Pose::from_raw([0.9, 0.1, -0.3, 0.2], [0.4, -1.2, 2.5]).unwrap()
    }

    fn assert_pose_eq(a: &Pose, b: &Pose, tol: f64) {
        for (x, y) in a.quaternion_wxyz().iter().zip(b.quaternion_wxyz()) {
            assert_abs_diff_eq!(*x, y, epsilon = tol);
        }
        for (x, y) in a.translation_xyz().iter().zip(b.translation_xyz()) {
            assert_abs_diff_eq!(*x, y, epsilon = tol);
        }
    }

    #[test]
    fn compose_identity_is_noop() {
        let p = sample_pose();
        assert_pose_eq(&compose(&Pose::identity(), &p), &p, 1e-15);
        assert_pose_eq(&compose(&p, &Pose::identity()), &p, 1e-15);
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let p = sample_pose();
        assert_pose_eq(&compose(&p, &p.inverse()), &Pose::identity(), 1e-9);
        assert_pose_eq(&compose(&p.inverse(), &p), &Pose::identity(), 1e-9);
    }

    #[test]
    fn compose_two_quarter_turns_matches_matrix_product() {
        let quarter = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), PI / 2.0);
        let a = Pose::from_parts(quarter, Vector3::new(1.0, 0.0, 0.0));
        let b = Pose::from_parts(quarter, Vector3::new(0.0, 2.0, 0.0));
        let c = compose(&a, &b);

        let ra = rot_z_matrix(PI / 2.0);
        let expected_r = ra * rot_z_matrix(PI / 2.0);
        let expected_t = ra * Vector3::new(0.0, 2.0, 0.0) + Vector3::new(1.0, 0.0, 0.0);
        let got_r = c.rotation().to_rotation_matrix().into_inner();
        assert!((got_r - expected_r).abs().max() < 1e-12);
        assert!((got_r - rot_z_matrix(PI)).abs().max() < 1e-12);
        assert!((c.translation() - expected_t).norm() < 1e-12);
        // 180 degrees about z: w = 0, canonical sign makes z positive.
        let [w, x, y, z] = c.quaternion_wxyz();
        assert_abs_diff_eq!(w, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn canonical_sign() {
        let p = Pose::from_raw([-0.5, 0.5, 0.5, 0.5], [0.0; 3]).unwrap();
        assert_eq!(p.quaternion_wxyz(), [0.5, -0.5, -0.5, -0.5]);
        let p = Pose::from_raw([0.0, 0.0, -1.0, 0.0], [0.0; 3]).unwrap();
        assert_eq!(p.quaternion_wxyz(), [0.0, 0.0, 1.0, 0.0]);
        let p = Pose::from_raw([0.0, 0.0, 0.0, -2.0], [0.0; 3]).unwrap();
        assert_eq!(p.quaternion_wxyz(), [0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn rejects_zero_quaternion() {
        assert!(Pose::from_raw([0.0; 4], [0.0; 3]).is_err());
        assert!(Pose::from_raw([1.0, 0.0, 0.0, 0.0], [f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn neighbors_of_identity() {
        let n = neighbors(&Pose::identity(), 0.01, 0.1);
        assert_eq!(n.len(), NEIGHBOR_COUNT);
        assert_eq!(n[0].translation_xyz(), [0.1, 0.0, 0.0]);
        assert_eq!(n[1].translation_xyz(), [-0.1, 0.0, 0.0]);
        assert_eq!(n[5].translation_xyz(), [0.0, 0.0, -0.1]);
        for (i, p) in n[..6].iter().enumerate() {
            assert_eq!(p.quaternion_wxyz(), [1.0, 0.0, 0.0, 0.0], "neighbor {i}");
        }
        // +x rotation by 0.02 rad: imaginary x component sin(0.01).
        let [w, x, y, z] = n[6].quaternion_wxyz();
        assert_abs_diff_eq!(w, 0.01f64.cos(), epsilon = 1e-15);
        assert_abs_diff_eq!(x, 0.01f64.sin(), epsilon = 1e-15);
        assert_eq!((y, z), (0.0, 0.0));
        assert_abs_diff_eq!(n[7].quaternion_wxyz()[1], -(0.01f64.sin()), epsilon = 1e-15);
    }

    #[test]
    fn neighbors_respect_step_bounds() {
        let p = sample_pose();
        let (dq, dt) = (0.004f64, 0.05);
        // Rotation moves keep t, so the camera center swings by at most 2 sin(dq) |t|.
        let swing = 2.0 * dq.sin() * p.translation().norm();
        for (i, n) in neighbors(&p, dq, dt).iter().enumerate() {
            let e = pose_error(&p, n);
            let t_bound = if i < 6 { dt } else { swing };
            assert!(e.translation_error <= t_bound + 1e-12, "{i}: {e:?}");
            if i >= 6 {
                assert_eq!(n.translation_xyz(), p.translation_xyz());
            }
            assert!(e.rotation_error <= 2.0 * dq * 180.0 / PI + 1e-6, "{e:?}");
            let q = n.quaternion_wxyz();
            let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn neighbors_are_deterministic() {
        let p = sample_pose();
        assert_eq!(neighbors(&p, 0.01, 0.1), neighbors(&p, 0.01, 0.1));
    }

    #[test]
    fn zero_noise_is_identity_map() {
        let p = sample_pose();
        let n = inject_noise(&p, 0.0, 0.0, 17).unwrap();
        assert_eq!(n, p);
    }

    #[test]
    fn noise_is_deterministic_per_seed() {
        let p = sample_pose();
        assert_eq!(inject_noise(&p, 1e-2, 1e-1, 5).unwrap(), inject_noise(&p, 1e-2, 1e-1, 5).unwrap());
        assert_ne!(inject_noise(&p, 1e-2, 1e-1, 5).unwrap(), inject_noise(&p, 1e-2, 1e-1, 6).unwrap());
    }

    #[test]
    fn negative_noise_scale_rejected() {
        assert!(inject_noise(&Pose::identity(), -1.0, 0.0, 0).is_err());
    }

    #[test]
    fn noise_median_translation_error() {
        // Monte-Carlo over 1000 seeds at the (q 1e-2, t 1e-1) level. For an
        // identity rotation the center offset is just the translation draw, whose
        // norm for U[-0.1, 0.1]^3 has a median near 0.096 (measured: 0.0962).
        let p = Pose::identity();
        let errs: Vec<f64> =
            (0..1000).map(|s| pose_error(&inject_noise(&p, 1e-2, 1e-1, s).unwrap(), &p).translation_error).collect();
        let m = lower_median(&errs).unwrap();
        assert!(m > 0.05 && m < 0.18, "median {m}");
        assert!((m - 0.0962).abs() < 0.01, "median {m}");
    }

    #[test]
    fn noise_rotation_error_obeys_component_bound() {
        // |noise|_2 <= 2s for four components, so the quaternion turns by at most
        // asin(2s) and the rotation by at most 2*asin(2s).
        let p = sample_pose();
        for &s in &[1e-3, 1e-2, 5e-2] {
            let bound = (2.0 * (2.0 * s as f64).asin()).to_degrees();
            for seed in 0..300 {
                let e = pose_error(&inject_noise(&p, s, 0.0, seed).unwrap(), &p);
                assert!(e.rotation_error <= bound + 1e-9, "s={s} seed={seed} {e:?}");
            }
        }
    }

    #[test]
    fn pose_error_examples() {
        let p = sample_pose();
        let e = pose_error(&p, &p);
        assert_abs_diff_eq!(e.translation_error, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.rotation_error, 0.0, epsilon = 1e-12);

        let ten = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), 10f64.to_radians());
        let e = pose_error(&Pose::from_parts(ten, Vector3::zeros()), &Pose::identity());
        assert_abs_diff_eq!(e.translation_error, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.rotation_error, 10.0, epsilon = 1e-9);

        let shifted = Pose::from_raw([1.0, 0.0, 0.0, 0.0], [0.03, 0.04, 0.0]).unwrap();
        let e = pose_error(&shifted, &Pose::identity());
        assert_abs_diff_eq!(e.translation_error, 0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(e.rotation_error, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn pose_error_is_symmetric_and_bounded() {
        let a = sample_pose();
        let b = Pose::from_raw([0.1, 0.9, 0.3, -0.2], [1.0, 0.0, -0.5]).unwrap();
        let (ab, ba) = (pose_error(&a, &b), pose_error(&b, &a));
        assert_abs_diff_eq!(ab.translation_error, ba.translation_error, epsilon = 1e-12);
        assert_abs_diff_eq!(ab.rotation_error, ba.rotation_error, epsilon = 1e-9);
        assert!(ab.rotation_error <= 180.0);
        let flip = Pose::from_parts(UnitQuaternion::from_axis_angle(&Vector3::y_axis(), PI), Vector3::zeros());
        assert_abs_diff_eq!(pose_error(&flip, &Pose::identity()).rotation_error, 180.0, epsilon = 1e-9);
    }

    #[test]
    fn medians() {
        let gt = Pose::identity();
        let at = |d: f64| Pose::from_raw([1.0, 0.0, 0.0, 0.0], [d, 0.0, 0.0]).unwrap();
        let single = vec![(at(0.3), gt)];
        assert_abs_diff_eq!(median_errors(&single).unwrap().translation_error, 0.3, epsilon = 1e-12);
        let dup = vec![(at(0.3), gt), (at(0.3), gt)];
        assert_abs_diff_eq!(median_errors(&dup).unwrap().translation_error, 0.3, epsilon = 1e-12);
        let three = vec![(at(9.0), gt), (at(1.0), gt), (at(2.0), gt)];
        assert_abs_diff_eq!(median_errors(&three).unwrap().translation_error, 2.0, epsilon = 1e-12);
        assert_eq!(lower_median(&[4.0, 1.0, 3.0, 2.0]), Some(2.0));
        assert!(median_errors(&[]).is_none());
    }

    #[test]
    fn schedule_validation() {
        assert!(StepSchedule::new(vec![]).is_ok());
        let l = |q, t, b| StepLevel { rot_step: q, trans_step: t, budget: b };
        assert!(StepSchedule::new(vec![l(0.1, 0.1, 1), l(0.05, 0.05, 1)]).is_ok());
        assert!(StepSchedule::new(vec![l(0.1, 0.1, 1), l(0.1, 0.05, 1)]).is_err());
        assert!(StepSchedule::new(vec![l(0.1, 0.1, 0)]).is_err());
        assert!(StepSchedule::new(vec![l(-0.1, 0.1, 3)]).is_err());
        assert_eq!(StepSchedule::default().total_budget(), 400);
        let json = serde_json::to_string(&StepSchedule::default()).unwrap();
        let back: StepSchedule = serde_json::from_str(&json).unwrap();
        assert_eq!(back, StepSchedule::default());
        assert!(serde_json::from_str::<StepSchedule>(r#"[{"rot_step":0.1,"trans_step":0.1,"budget":0}]"#).is_err());
    }

    #[test]
    fn pose_text_format() {
        let text = "# header\n\nimg_a 1 0 0 0 0.5 0 2\n  img_b -1 0 0 0 0 0 0  \n";
        let poses = parse_poses(text.as_bytes()).unwrap();
        assert_eq!(poses.len(), 2);
        assert_eq!(poses[0].name, "img_a");
        assert_eq!(poses[0].pose.translation_xyz(), [0.5, 0.0, 2.0]);
        assert_eq!(poses[1].pose.quaternion_wxyz(), [1.0, 0.0, 0.0, 0.0]);

        let mut buf = Vec::new();
        write_poses(&mut buf, &poses).unwrap();
        assert_eq!(parse_poses(buf.as_slice()).unwrap(), poses);

        assert!(parse_poses("a 1 0 0\n".as_bytes()).is_err());
        assert!(parse_poses("a 1 0 0 x 0 0 0\n".as_bytes()).is_err());
    }

    #[test]
    fn look_at_points_optical_axis_at_target() {
        let eye = Vector3::new(2.0, 0.5, -1.0);
        let p = Pose::look_at(eye, Vector3::zeros(), Vector3::new(0.0, -1.0, 0.0)).unwrap();
        assert!((p.camera_center() - eye).norm() < 1e-12);
        let target_cam = p.transform_point(&Vector3::zeros());
        assert_abs_diff_eq!(target_cam.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(target_cam.y, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(target_cam.z, eye.norm(), epsilon = 1e-12);
    }

    #[test]
    fn look_at_handles_half_turn() {
        // Looking down world -z is a 180 degree turn about y.
        let eye = Vector3::new(0.0, -0.5, 2.0);
        let p = Pose::look_at(eye, Vector3::zeros(), Vector3::new(0.0, -1.0, 0.0)).unwrap();
        assert!((p.camera_center() - eye).norm() < 1e-12);
        let target_cam = p.transform_point(&Vector3::zeros());
        assert_abs_diff_eq!(target_cam.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(target_cam.y, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(target_cam.z, eye.norm(), epsilon = 1e-12);
    }
}
