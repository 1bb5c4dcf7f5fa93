//! Structural similarity with an 11x11 Gaussian window (sigma 1.5).
//!
//! Window weights are renormalized over the in-bounds support, so every pixel
//! is a valid window center and a constant image is an exact fixed point of
//! the local averaging. Two implementations are kept deliberately separate: a
//! straight-line evaluator used as the measurement (and as the oracle in
//! tests), and a tape version used inside training losses.

use crate::tape::{Tape, Var};
use crate::{Error, Result};
use ndarray::Array2;

pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;
pub const SSIM_RADIUS: usize = 5;
pub const SSIM_SIGMA: f64 = 1.5;

/// Normalized symmetric Gaussian taps of length `2*radius + 1`.
pub fn gaussian_kernel(radius: usize, sigma: f64) -> Vec<f64> {
    let mut k: Vec<f64> = (-(radius as i64)..=radius as i64)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Mean SSIM between two equal-shape grayscale images.
pub fn ssim(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::contract(format!(
            "ssim needs equal shapes, got {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let k = gaussian_kernel(SSIM_RADIUS, SSIM_SIGMA);
    let (h, w) = a.dim();
    let mut total = 0.0;
    for cy in 0..h {
        for cx in 0..w {
            // One explicit renormalized window around (cy, cx).
            let (mut wsum, mut ma, mut mb) = (0.0, 0.0, 0.0);
            let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
            for (dy, ky) in k.iter().enumerate() {
                let y = cy as i64 + dy as i64 - SSIM_RADIUS as i64;
                if y < 0 || y >= h as i64 {
                    continue;
                }
                for (dx, kx) in k.iter().enumerate() {
                    let x = cx as i64 + dx as i64 - SSIM_RADIUS as i64;
                    if x < 0 || x >= w as i64 {
                        continue;
                    }
                    let wt = ky * kx;
                    let (va, vb) = (a[(y as usize, x as usize)], b[(y as usize, x as usize)]);
                    wsum += wt;
                    ma += wt * va;
                    mb += wt * vb;
                    saa += wt * va * va;
                    sbb += wt * vb * vb;
                    sab += wt * va * vb;
                }
            }
            let (ma, mb) = (ma / wsum, mb / wsum);
            let va = saa / wsum - ma * ma;
            let vb = sbb / wsum - mb * mb;
            let cov = sab / wsum - ma * mb;
            let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2);
            total += num / den;
        }
    }
    Ok(total / (h * w) as f64)
}

/// Differentiable mean SSIM over `[H,W]` tape tensors.
pub fn ssim_on(tape: &mut Tape, a: Var, b: Var) -> Var {
    assert_eq!(tape.value(a).shape(), tape.value(b).shape(), "ssim_on: shape mismatch");
    let k = gaussian_kernel(SSIM_RADIUS, SSIM_SIGMA);
    let mu_a = tape.gauss_filter(a, &k);
    let mu_b = tape.gauss_filter(b, &k);
    let aa = tape.mul(a, a);
    let bb = tape.mul(b, b);
    let ab = tape.mul(a, b);
    let saa = tape.gauss_filter(aa, &k);
    let sbb = tape.gauss_filter(bb, &k);
    let sab = tape.gauss_filter(ab, &k);
    let mua2 = tape.mul(mu_a, mu_a);
    let mub2 = tape.mul(mu_b, mu_b);
    let muab = tape.mul(mu_a, mu_b);
    let va = tape.sub(saa, mua2);
    let vb = tape.sub(sbb, mub2);
    let cov = tape.sub(sab, muab);

    let n1 = tape.scale(muab, 2.0);
    let n1 = tape.add_scalar(n1, SSIM_C1);
    let n2 = tape.scale(cov, 2.0);
    let n2 = tape.add_scalar(n2, SSIM_C2);
    let num = tape.mul(n1, n2);
    let d1 = tape.add(mua2, mub2);
    let d1 = tape.add_scalar(d1, SSIM_C1);
    let d2 = tape.add(va, vb);
    let d2 = tape.add_scalar(d2, SSIM_C2);
    let den = tape.mul(d1, d2);
    let map = tape.div(num, den);
    tape.mean_all(map)
}
