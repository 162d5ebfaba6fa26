//! Image-difference scores used as search heuristics and for evaluation.
//!
//! All metrics work on linear RGB in `[0, 1]` and sum or average over the
//! three channels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::ImageBuffer;

/// PSNR reported for (near-)identical images.
pub const PSNR_CAP: f64 = 100.0;
/// Below this MSE the images count as identical for PSNR.
pub const PSNR_MIN_MSE: f64 = 1e-10;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn check_same_dims(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Contract(format!("image dimensions differ: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Sum over pixels and channels of `|a - b|`.
pub fn sum_abs_diff(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_same_dims(a, b)?;
    Ok(a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).sum())
}

pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_same_dims(a, b)?;
    let n = a.as_slice().len();
    if n == 0 {
        return Ok(0.0);
    }
    let sq: f64 = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sq / n as f64)
}

/// Peak signal-to-noise ratio in dB for unit peak, capped at [`PSNR_CAP`].
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    let m = mse(a, b)?;
    if m < PSNR_MIN_MSE {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

/// Normalized 1D Gaussian taps.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Mean SSIM over channels, using an 11x11 Gaussian window (sigma 1.5) and
/// averaging only over window positions fully inside the image.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_same_dims(a, b)?;
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Contract(format!("SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}")));
    }
    let kernel = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let total: f64 = (0..3).map(|c| ssim_channel(a.as_slice(), b.as_slice(), c, w, h, &kernel)).sum();
    Ok(total / 3.0)
}

/// Separable valid-mode filtering of the five SSIM moments for one channel.
fn ssim_channel(a: &[f64], b: &[f64], channel: usize, w: usize, h: usize, k: &[f64]) -> f64 {
    let n = k.len();
    let ow = w - n + 1;
    let oh = h - n + 1;

    // Horizontal pass: moments [x, y, xx, yy, xy] for every row, valid columns.
    let mut horiz = vec![[0.0f64; 5]; ow * h];
    for y in 0..h {
        let row = y * w;
        for x0 in 0..ow {
            let mut m = [0.0f64; 5];
            for (i, &kw) in k.iter().enumerate() {
                let idx = (row + x0 + i) * 3 + channel;
                let (va, vb) = (a[idx], b[idx]);
                m[0] += kw * va;
                m[1] += kw * vb;
                m[2] += kw * va * va;
                m[3] += kw * vb * vb;
                m[4] += kw * va * vb;
            }
            horiz[y * ow + x0] = m;
        }
    }

    let mut acc = 0.0;
    for y0 in 0..oh {
        for x0 in 0..ow {
            let mut m = [0.0f64; 5];
            for (i, &kw) in k.iter().enumerate() {
                let hm = &horiz[(y0 + i) * ow + x0];
                for j in 0..5 {
                    m[j] += kw * hm[j];
                }
            }
            acc += ssim_from_moments(&m);
        }
    }
    acc / (ow * oh) as f64
}

/// SSIM index from windowed moments `[mu_x, mu_y, E[x^2], E[y^2], E[xy]]`.
#[inline]
pub fn ssim_from_moments(m: &[f64; 5]) -> f64 {
    let (mx, my) = (m[0], m[1]);
    let vx = m[2] - mx * mx;
    let vy = m[3] - my * my;
    let cov = m[4] - mx * my;
    ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
}

/// Image-difference heuristic used to score a rendered candidate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeuristicKind {
    /// Sum of absolute differences.
    #[default]
    Sad,
    /// `100 - PSNR`.
    Psnr,
    /// `1 - SSIM`.
    Ssim,
}

impl HeuristicKind {
    pub const ALL: [HeuristicKind; 3] = [HeuristicKind::Sad, HeuristicKind::Psnr, HeuristicKind::Ssim];

    pub fn name(self) -> &'static str {
        match self {
            HeuristicKind::Sad => "sad",
            HeuristicKind::Psnr => "psnr",
            HeuristicKind::Ssim => "ssim",
        }
    }
}

impl fmt::Display for HeuristicKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeuristicKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HeuristicKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown heuristic {s:?} (expected sad, psnr or ssim)")))
    }
}

/// Nonnegative cost, zero for identical images.
pub fn heuristic(kind: HeuristicKind, query: &ImageBuffer, render: &ImageBuffer) -> Result<f64> {
    match kind {
        HeuristicKind::Sad => sum_abs_diff(query, render),
        HeuristicKind::Psnr => Ok(PSNR_CAP - psnr(query, render)?),
        // SSIM can exceed 1 by rounding for identical inputs.
        HeuristicKind::Ssim => Ok((1.0 - ssim(query, render)?).max(0.0)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sad_examples() {
        let black = ImageBuffer::filled(2, 2, [0.0; 3]);
        let white = ImageBuffer::filled(2, 2, [1.0; 3]);
        assert_eq!(sum_abs_diff(&black, &black).unwrap(), 0.0);
        assert_eq!(sum_abs_diff(&black, &white).unwrap(), 12.0);
        assert_eq!(heuristic(HeuristicKind::Sad, &black, &white).unwrap(), 12.0);
        let other = ImageBuffer::filled(3, 2, [0.0; 3]);
        assert!(matches!(sum_abs_diff(&black, &other), Err(Error::Contract(_))));
    }

    #[test]
    fn psnr_examples() {
        let a = ImageBuffer::filled(4, 4, [0.5; 3]);
        let b = ImageBuffer::filled(4, 4, [0.6; 3]);
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
        assert_abs_diff_eq!(psnr(&a, &b).unwrap(), 20.0, epsilon = 1e-9);
        assert_abs_diff_eq!(heuristic(HeuristicKind::Psnr, &a, &b).unwrap(), 80.0, epsilon = 1e-9);
        assert_eq!(heuristic(HeuristicKind::Psnr, &a, &a).unwrap(), 0.0);
    }

    #[test]
    fn ssim_examples() {
        let a = ImageBuffer::filled(16, 12, [0.5; 3]);
        let inv = ImageBuffer::from_raw(16, 12, a.as_slice().iter().map(|v| 1.0 - v).collect()).unwrap();
        assert_abs_diff_eq!(ssim(&a, &a).unwrap(), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(ssim(&a, &inv).unwrap(), 1.0, epsilon = 1e-9);
        let small = ImageBuffer::filled(10, 20, [0.5; 3]);
        assert!(matches!(ssim(&small, &small), Err(Error::Contract(_))));
        let dark = ImageBuffer::filled(16, 12, [0.1; 3]);
        assert!(ssim(&a, &dark).unwrap() < 1.0);
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel(11, 1.5);
        assert_abs_diff_eq!(k.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        for i in 0..11 {
            assert_eq!(k[i], k[10 - i]);
        }
        assert!(k[5] > k[4]);
    }

    #[test]
    fn heuristic_names_parse() {
        for k in HeuristicKind::ALL {
            assert_eq!(k.name().parse::<HeuristicKind>().unwrap(), k);
        }
        assert!("l2".parse::<HeuristicKind>().is_err());
        assert_eq!(serde_json::to_string(&HeuristicKind::Ssim).unwrap(), "\"ssim\"");
    }
}
