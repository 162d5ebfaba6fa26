//! Independent oracles shared by the integration test targets.
#![allow(dead_code)]

use nalgebra::Matrix3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use splat_refine::pose::Pose;
use splat_refine::{Camera, ImageBuffer, Scene};

/// Straightforward per-pixel renderer: project every primitive with explicit
/// matrices, sort, and blend in depth order over all primitives.
pub fn naive_render(scene: &Scene, cam: &Camera, pose: &Pose) -> Vec<f64> {
    struct P {
        depth: f64,
        index: usize,
        mu: [f64; 2],
        inv: [[f64; 2]; 2],
        alpha: f64,
        color: [f64; 3],
    }
    let w: Matrix3<f64> = *pose.rotation().to_rotation_matrix().matrix();
    let mut ps = Vec::new();
    for (index, g) in scene.primitives.iter().enumerate() {
        let pc = w * g.mean + pose.translation();
        if pc.z <= cam.near {
            continue;
        }
        let (x, y, z) = (pc.x, pc.y, pc.z);
        let j = [[cam.fx / z, 0.0, -cam.fx * x / (z * z)], [0.0, cam.fy / z, -cam.fy * y / (z * z)]];
        let r = g.rotation.to_rotation_matrix();
        let s = Matrix3::from_diagonal(&g.scale);
        let sigma = r.matrix() * s * s * r.matrix().transpose();
        let ws = w * sigma * w.transpose();
        let mut c = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                let mut acc = 0.0;
                for k in 0..3 {
                    for l in 0..3 {
                        acc += j[a][k] * ws[(k, l)] * j[b][l];
                    }
                }
                c[a][b] = acc;
            }
        }
        let off = 0.5 * (c[0][1] + c[1][0]);
        let (a, b, d) = (c[0][0] + 0.3, off, c[1][1] + 0.3);
        let det = a * d - b * b;
        let mu = [cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy];
        let tr = 0.5 * (a + d);
        let lmax = tr + (tr * tr - det).max(0.0).sqrt();
        let reach = 3.0 * lmax.sqrt();
        if mu[0] < -reach || mu[0] > cam.width as f64 + reach || mu[1] < -reach || mu[1] > cam.height as f64 + reach {
            continue;
        }
        ps.push(P {
            depth: z,
            index,
            mu,
            inv: [[d / det, -b / det], [-b / det, a / det]],
            alpha: g.opacity,
            color: g.color,
        });
    }
    ps.sort_by(|p, q| p.depth.total_cmp(&q.depth).then(p.index.cmp(&q.index)));

    let mut out = Vec::with_capacity(cam.width * cam.height * 3);
    for py in 0..cam.height {
        for px in 0..cam.width {
            let (u, v) = (px as f64 + 0.5, py as f64 + 0.5);
            let mut col = [0.0; 3];
            let mut t = 1.0;
            for p in &ps {
                let (dx, dy) = (u - p.mu[0], v - p.mu[1]);
                let m = p.inv[0][0] * dx * dx + 2.0 * p.inv[0][1] * dx * dy + p.inv[1][1] * dy * dy;
                let a = (-0.5 * m).exp() * p.alpha;
                if a < 1.0 / 255.0 {
                    continue;
                }
                for k in 0..3 {
                    col[k] += p.color[k] * a * t;
                }
                t *= 1.0 - a;
                if t < 1e-4 {
                    break;
                }
            }
            for k in 0..3 {
                out.push((col[k] + scene.background[k] * t).clamp(0.0, 1.0));
            }
        }
    }
    out
}

pub fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ImageBuffer {
    ImageBuffer::from_raw(w, h, (0..w * h * 3).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

/// Second image correlated with the first so SSIM lands away from zero.
pub fn perturbed(rng: &mut ChaCha8Rng, a: &ImageBuffer, amount: f64) -> ImageBuffer {
    let data = a.as_slice().iter().map(|v| v + amount * (rng.gen::<f64>() - 0.5)).collect();
    ImageBuffer::from_raw(a.width(), a.height(), data).unwrap()
}

pub fn brute_sad(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    let mut s = 0.0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            let (p, q) = (a.pixel(x, y), b.pixel(x, y));
            for c in 0..3 {
                s += (p[c] - q[c]).abs();
            }
        }
    }
    s
}

pub fn brute_psnr(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    let n = (a.width() * a.height() * 3) as f64;
    let mse: f64 = a.as_slice().iter().zip(b.as_slice()).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / n;
    if mse < 1e-10 {
        100.0
    } else {
        -10.0 * mse.log10()
    }
}

/// Direct 2D-window SSIM: full 11x11 Gaussian weights at every valid position.
pub fn brute_ssim(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    let (w, h) = a.dims();
    let mut win = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut acc = 0.0;
    let mut count = 0usize;
    for c in 0..3 {
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let k = win[i][j] / total;
                        let (p, q) = (a.pixel(x0 + j, y0 + i)[c], b.pixel(x0 + j, y0 + i)[c]);
                        mx += k * p;
                        my += k * q;
                        sxx += k * p * p;
                        syy += k * q * q;
                        sxy += k * p * q;
                    }
                }
                let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    acc / count as f64
}
