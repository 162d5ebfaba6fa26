//! Software Gaussian splatting.
//!
//! Each primitive is projected to a 2D Gaussian with the affine (EWA) camera
//! Jacobian, primitives are sorted globally by camera depth (ties broken by
//! scene index) and composited front to back per pixel.
//!
//! Pixel `(x, y)` is sampled at its center, `(x + 0.5, y + 0.5)`, so a principal
//! point of `(width / 2, height / 2)` sits on the image center.
//!
//! The rasterizer walks primitives in depth order and updates only the pixels
//! inside each primitive's cutoff ellipse bounds. Every pixel still sees its
//! contributions in global depth order with the same arithmetic as a
//! pixel-by-pixel loop, so the output is independent of banding and thread count.

mod image;

use nalgebra::{Matrix2, Matrix2x3, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::Pose;
use crate::scene::{covariance3d, GaussianPrimitive, Scene};

pub use self::image::ImageBuffer;

/// Isotropic screen-space variance added to every projected covariance (pixels^2).
pub const LOW_PASS_VARIANCE: f64 = 0.3;
/// Contributions with `p * alpha` below this are skipped.
pub const MIN_CONTRIBUTION: f64 = 1.0 / 255.0;
/// Compositing for a pixel stops once its transmittance drops below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;

/// Rows per parallel work unit.
const BAND_ROWS: usize = 16;

/// Pinhole intrinsics plus image size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_near")]
    pub near: f64,
}

fn default_near() -> f64 {
    0.01
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize, near: f64) -> Result<Self> {
        let cam = Self { fx, fy, cx, cy, width, height, near };
        cam.validate()?;
        Ok(cam)
    }

    /// Square pixels, centered principal point, horizontal field of view in degrees.
    pub fn from_fov(width: usize, height: usize, hfov_deg: f64) -> Result<Self> {
        let f = width as f64 / (2.0 * (hfov_deg.to_radians() / 2.0).tan());
        Self::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height, default_near())
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy, self.near].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 || self.near <= 0.0 {
            return Err(Error::Config(format!("camera needs positive finite fx, fy, near: {self:?}")));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("camera width and height must be at least 1".into()));
        }
        Ok(())
    }

    /// Intrinsics for an image `factor` times smaller in each dimension.
    pub fn downscaled(&self, factor: usize) -> Camera {
        let k = factor as f64;
        Camera {
            fx: self.fx / k,
            fy: self.fy / k,
            cx: self.cx / k,
            cy: self.cy / k,
            width: self.width / factor,
            height: self.height / factor,
            near: self.near,
        }
    }
}

/// How stored primitive opacity becomes the compositing alpha.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpacityMode {
    /// Use the stored activated opacity directly.
    #[default]
    Direct,
    /// `1 - exp(-opacity / sqrt(det(Sigma_3d)))`: opacity read as a density
    /// normalized by the primitive's covariance volume.
    Density,
}

/// Opacity-to-alpha mapping for one primitive.
pub fn opacity_alpha(g: &GaussianPrimitive, mode: OpacityMode) -> f64 {
    match mode {
        OpacityMode::Direct => g.opacity,
        OpacityMode::Density => {
            let det = covariance3d(g).determinant();
            1.0 - (-g.opacity / det.sqrt()).exp()
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    #[serde(default)]
    pub opacity_mode: OpacityMode,
}

/// A primitive after projection to the image plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedGaussian {
    /// Pixel coordinates of the projected mean.
    pub mean: Vector2<f64>,
    /// Screen covariance including the low-pass floor (pixels^2).
    pub cov: Matrix2<f64>,
    /// Camera-space z.
    pub depth: f64,
    pub alpha: f64,
    pub color: [f64; 3],
    conic: Matrix2<f64>,
}

impl ProjectedGaussian {
    /// Returns `None` unless `cov` is symmetric positive definite.
    pub fn new(mean: Vector2<f64>, cov: Matrix2<f64>, depth: f64, alpha: f64, color: [f64; 3]) -> Option<Self> {
        let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
        if !(cov[(0, 0)] > 0.0 && det > 0.0) {
            return None;
        }
        let conic = Matrix2::new(cov[(1, 1)], -cov[(0, 1)], -cov[(1, 0)], cov[(0, 0)]) / det;
        Some(Self { mean, cov, depth, alpha, color, conic })
    }

    /// Exponent `-0.5 d^T Sigma'^-1 d` of the screen Gaussian at offset `d` from the mean.
    #[inline]
    fn power(&self, dx: f64, dy: f64) -> f64 {
        let c = &self.conic;
        -0.5 * (c[(0, 0)] * dx * dx + 2.0 * c[(0, 1)] * dx * dy + c[(1, 1)] * dy * dy)
    }
}

/// Screen-space Gaussian falloff at pixel position `x`; 1 at the mean.
pub fn gaussian_weight(pg: &ProjectedGaussian, x: &Vector2<f64>) -> f64 {
    pg.power(x.x - pg.mean.x, x.y - pg.mean.y).exp()
}

/// Projects one primitive; `None` when it is behind the near plane or its
/// mean lies more than 3 sigma outside the image.
pub fn project(g: &GaussianPrimitive, cam: &Camera, pose: &Pose, mode: OpacityMode) -> Option<ProjectedGaussian> {
    let p = pose.transform_point(&g.mean);
    if p.z <= cam.near {
        return None;
    }
    let inv_z = 1.0 / p.z;
    let mean = Vector2::new(cam.fx * p.x * inv_z + cam.cx, cam.fy * p.y * inv_z + cam.cy);
    let jac = Matrix2x3::new(
        cam.fx * inv_z,
        0.0,
        -cam.fx * p.x * inv_z * inv_z,
        0.0,
        cam.fy * inv_z,
        -cam.fy * p.y * inv_z * inv_z,
    );
    let w = pose.rotation().to_rotation_matrix().into_inner();
    let m = jac * w;
    let mut cov = m * covariance3d(g) * m.transpose();
    cov[(0, 1)] = 0.5 * (cov[(0, 1)] + cov[(1, 0)]);
    cov[(1, 0)] = cov[(0, 1)];
    cov[(0, 0)] += LOW_PASS_VARIANCE;
    cov[(1, 1)] += LOW_PASS_VARIANCE;

    let half_trace = 0.5 * (cov[(0, 0)] + cov[(1, 1)]);
    let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(0, 1)];
    let lambda_max = half_trace + (half_trace * half_trace - det).max(0.0).sqrt();
    let reach = 3.0 * lambda_max.sqrt();
    if mean.x < -reach || mean.x > cam.width as f64 + reach || mean.y < -reach || mean.y > cam.height as f64 + reach {
        return None;
    }
    ProjectedGaussian::new(mean, cov, p.z, opacity_alpha(g, mode), g.color)
}

/// A projected primitive ready for rasterization.
struct Splat {
    pg: ProjectedGaussian,
    /// Exponents below this cannot reach [`MIN_CONTRIBUTION`].
    power_floor: f64,
    x_range: (usize, usize),
    y_range: (usize, usize),
}

/// Projects, culls, and depth-sorts (ties by scene index) the scene's primitives.
fn prepare(scene: &Scene, cam: &Camera, pose: &Pose, opts: &RenderOptions) -> Vec<Splat> {
    let mut projected: Vec<(usize, ProjectedGaussian)> = scene
        .primitives
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project(g, cam, pose, opts.opacity_mode).map(|pg| (i, pg)))
        .filter(|(_, pg)| pg.alpha >= MIN_CONTRIBUTION)
        .collect();
    projected.sort_by(|a, b| a.1.depth.total_cmp(&b.1.depth).then(a.0.cmp(&b.0)));

    projected
        .into_iter()
        .filter_map(|(_, pg)| {
            // p * alpha >= 1/255 needs mahalanobis^2 <= 2 ln(255 alpha).
            let k = 2.0 * (pg.alpha / MIN_CONTRIBUTION).ln();
            let hx = (k * pg.cov[(0, 0)]).sqrt() + 1.0;
            let hy = (k * pg.cov[(1, 1)]).sqrt() + 1.0;
            let x_range = pixel_span(pg.mean.x, hx, cam.width)?;
            let y_range = pixel_span(pg.mean.y, hy, cam.height)?;
            Some(Splat { pg, power_floor: -0.5 * k - 1e-9, x_range, y_range })
        })
        .collect()
}

/// Half-open range of pixel indices whose centers fall in `[center - half, center + half]`.
fn pixel_span(center: f64, half: f64, len: usize) -> Option<(usize, usize)> {
    let lo = (center - half - 0.5).ceil().max(0.0);
    let hi = (center + half - 0.5).floor() + 1.0;
    let hi = hi.min(len as f64);
    if hi <= lo {
        return None;
    }
    Some((lo as usize, hi as usize))
}

/// Blends one primitive into a pixel's running state and returns its blend
/// weight, or `None` when the contribution falls below the cutoff.
#[inline]
fn composite(pg: &ProjectedGaussian, power: f64, color: &mut [f64; 3], transmittance: &mut f64) -> Option<f64> {
    let weight = power.exp() * pg.alpha;
    if weight < MIN_CONTRIBUTION {
        return None;
    }
    let w = weight * *transmittance;
    for c in 0..3 {
        color[c] += pg.color[c] * w;
    }
    *transmittance *= 1.0 - weight;
    Some(w)
}

pub fn render(scene: &Scene, cam: &Camera, pose: &Pose) -> ImageBuffer {
    render_with(scene, cam, pose, &RenderOptions::default())
}

pub fn render_with(scene: &Scene, cam: &Camera, pose: &Pose, opts: &RenderOptions) -> ImageBuffer {
    let splats = prepare(scene, cam, pose, opts);
    let mut out = ImageBuffer::filled(cam.width, cam.height, [0.0; 3]);
    let width = cam.width;
    let bg = scene.background;

    out.as_mut_slice().par_chunks_mut(width * 3 * BAND_ROWS).enumerate().for_each(|(band, rows)| {
        let y0 = band * BAND_ROWS;
        let y1 = y0 + rows.len() / (width * 3);
        let n = (y1 - y0) * width;
        let mut color = vec![[0.0f64; 3]; n];
        let mut trans = vec![1.0f64; n];
        let mut done = vec![false; n];

        for s in &splats {
            let ys = s.y_range.0.max(y0);
            let ye = s.y_range.1.min(y1);
            if ys >= ye {
                continue;
            }
            for y in ys..ye {
                let dy = y as f64 + 0.5 - s.pg.mean.y;
                let row = (y - y0) * width;
                for x in s.x_range.0..s.x_range.1 {
                    let i = row + x;
                    if done[i] {
                        continue;
                    }
                    let power = s.pg.power(x as f64 + 0.5 - s.pg.mean.x, dy);
                    if power < s.power_floor {
                        continue;
                    }
                    if composite(&s.pg, power, &mut color[i], &mut trans[i]).is_some() && trans[i] < MIN_TRANSMITTANCE {
                        done[i] = true;
                    }
                }
            }
        }

        for (i, px) in rows.chunks_exact_mut(3).enumerate() {
            for c in 0..3 {
                px[c] = (color[i][c] + bg[c] * trans[i]).clamp(0.0, 1.0);
            }
        }
    });
    out
}

/// Per-pixel compositing record, for inspection and tests.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelTrace {
    /// `(depth, p * alpha * T)` for each blended primitive, front to back.
    pub contributions: Vec<(f64, f64)>,
    /// Sum of the blend weights.
    pub accumulated_alpha: f64,
    /// Transmittance left for the background.
    pub transmittance: f64,
    pub color: [f64; 3],
}

/// Composites a single pixel by walking every projected primitive in depth order.
pub fn trace_pixel(scene: &Scene, cam: &Camera, pose: &Pose, opts: &RenderOptions, x: usize, y: usize) -> PixelTrace {
    let splats = prepare(scene, cam, pose, opts);
    let mut color = [0.0; 3];
    let mut trans = 1.0;
    let mut contributions = Vec::new();
    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
    for s in &splats {
        let power = s.pg.power(px - s.pg.mean.x, py - s.pg.mean.y);
        if power < s.power_floor {
            continue;
        }
        if let Some(w) = composite(&s.pg, power, &mut color, &mut trans) {
            contributions.push((s.pg.depth, w));
            if trans < MIN_TRANSMITTANCE {
                break;
            }
        }
    }
    let accumulated_alpha = contributions.iter().map(|c| c.1).sum();
    for c in 0..3 {
        color[c] = (color[c] + scene.background[c] * trans).clamp(0.0, 1.0);
    }
    PixelTrace { contributions, accumulated_alpha, transmittance: trans, color }
}
