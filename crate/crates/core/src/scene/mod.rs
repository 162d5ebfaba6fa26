//! Explicit Gaussian scene: primitive storage, covariance construction,
//! JSON and PLY ingestion, and a seeded synthetic scene generator.

mod ply;

use std::path::Path;

use nalgebra::{Matrix3, Quaternion, Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ply::{load_ply, read_ply, write_ply, write_ply_to, SH_C0};

/// One anisotropic 3D Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrimitive {
    pub mean: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    /// Per-axis standard deviations (already exponentiated), all positive.
    pub scale: Vector3<f64>,
    /// Activated opacity in `[0, 1]`.
    pub opacity: f64,
    /// Linear RGB in `[0, 1]`.
    pub color: [f64; 3],
}

impl GaussianPrimitive {
    pub fn validate(&self, index: usize) -> Result<()> {
        let data = |message: String| Error::Data { index, message };
        if self.mean.iter().any(|v| !v.is_finite()) {
            return Err(data(format!("non-finite mean {:?}", self.mean.as_slice())));
        }
        if self.scale.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(data(format!("scale must be positive, got {:?}", self.scale.as_slice())));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(data(format!("opacity {} outside [0, 1]", self.opacity)));
        }
        if self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(data(format!("color {:?} outside [0, 1]", self.color)));
        }
        if (self.rotation.norm() - 1.0).abs() > 1e-9 {
            return Err(data("rotation is not unit length".into()));
        }
        Ok(())
    }
}

/// `R S S^T R^T` for the primitive's rotation `R` and `S = diag(scale)`.
pub fn covariance3d(g: &GaussianPrimitive) -> Matrix3<f64> {
    let r = g.rotation.to_rotation_matrix().into_inner();
    let m = r * Matrix3::from_diagonal(&g.scale);
    let cov = m * m.transpose();
    // Symmetrize away rounding asymmetry.
    (cov + cov.transpose()) * 0.5
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub primitives: Vec<GaussianPrimitive>,
    pub background: [f64; 3],
}

impl Scene {
    pub fn new(primitives: Vec<GaussianPrimitive>, background: [f64; 3]) -> Result<Self> {
        let scene = Self { primitives, background };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Config(format!("background {:?} outside [0, 1]", self.background)));
        }
        for (i, g) in self.primitives.iter().enumerate() {
            g.validate(i)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    /// The same scene with every mean shifted by `offset`.
    pub fn translated(&self, offset: &Vector3<f64>) -> Scene {
        let mut out = self.clone();
        for g in &mut out.primitives {
            g.mean += offset;
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct JsonPrimitive {
    mean: [f64; 3],
    /// `(w, x, y, z)`
    rot: [f64; 4],
    scale: [f64; 3],
    opacity: f64,
    color: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct JsonScene {
    background: [f64; 3],
    primitives: Vec<JsonPrimitive>,
}

impl Scene {
    pub fn from_json_str(text: &str) -> Result<Scene> {
        let raw: JsonScene = serde_json::from_str(text)?;
        let primitives = raw
            .primitives
            .into_iter()
            .enumerate()
            .map(|(index, p)| {
                let q = Quaternion::new(p.rot[0], p.rot[1], p.rot[2], p.rot[3]);
                let norm = q.norm();
                if !(norm.is_finite() && norm > 1e-12) {
                    return Err(Error::Data { index, message: format!("degenerate rotation {:?}", p.rot) });
                }
                Ok(GaussianPrimitive {
                    mean: Vector3::from(p.mean),
                    rotation: Unit::new_unchecked(q / norm),
                    scale: Vector3::from(p.scale),
                    opacity: p.opacity,
                    color: p.color,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Scene::new(primitives, raw.background)
    }

    pub fn to_json_string(&self) -> Result<String> {
        let raw = JsonScene {
            background: self.background,
            primitives: self
                .primitives
                .iter()
                .map(|g| {
                    let q = g.rotation.quaternion();
                    JsonPrimitive {
                        mean: [g.mean.x, g.mean.y, g.mean.z],
                        rot: [q.w, q.i, q.j, q.k],
                        scale: [g.scale.x, g.scale.y, g.scale.z],
                        opacity: g.opacity,
                        color: g.color,
                    }
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&raw)?)
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Scene> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()?).map_err(|e| Error::io(path, e))
    }
}

/// Parameters for [`generate_synthetic`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub count: usize,
    /// Side length of the origin-centered cube holding the means.
    pub extent: f64,
    /// Per-axis scale bounds; scales are drawn log-uniformly.
    pub scale_range: (f64, f64),
    pub opacity_range: (f64, f64),
    pub seed: u64,
    #[serde(default)]
    pub background: [f64; 3],
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            count: 500,
            extent: 1.0,
            scale_range: (0.01, 0.03),
            opacity_range: (0.6, 1.0),
            seed: 0,
            background: [0.0; 3],
        }
    }
}

/// Uniformly random rotation (Shoemake's subgroup algorithm).
fn random_rotation(rng: &mut impl Rng) -> UnitQuaternion<f64> {
    use std::f64::consts::TAU;
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let q = Quaternion::new(b * (TAU * u3).cos(), a * (TAU * u2).sin(), a * (TAU * u2).cos(), b * (TAU * u3).sin());
    UnitQuaternion::from_quaternion(q)
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Scene> {
    let (smin, smax) = spec.scale_range;
    let (omin, omax) = spec.opacity_range;
    if spec.count == 0 {
        return Err(Error::Config("synthetic scene needs count >= 1".into()));
    }
    if !(spec.extent > 0.0 && spec.extent.is_finite()) {
        return Err(Error::Config(format!("extent must be positive, got {}", spec.extent)));
    }
    if !(smin > 0.0 && smax >= smin && smax.is_finite()) {
        return Err(Error::Config(format!("invalid scale_range {:?}", spec.scale_range)));
    }
    if !(omin > 0.0 && omax >= omin && omax <= 1.0) {
        return Err(Error::Config(format!("invalid opacity_range {:?}", spec.opacity_range)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let half = spec.extent / 2.0;
    let (log_min, log_max) = (smin.ln(), smax.ln());
    let primitives = (0..spec.count)
        .map(|_| {
            let mean = Vector3::from_fn(|_, _| rng.gen_range(-half..=half));
            let rotation = random_rotation(&mut rng);
            let scale = Vector3::from_fn(|_, _| rng.gen_range(log_min..=log_max).exp().clamp(smin, smax));
            let opacity = rng.gen_range(omin..=omax);
            let color = [rng.gen(), rng.gen(), rng.gen()];
            GaussianPrimitive { mean, rotation, scale, opacity, color }
        })
        .collect();
    Scene::new(primitives, spec.background)
}
