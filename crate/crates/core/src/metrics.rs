//! Image quality measures.

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

/// Side of the non-overlapping SSIM windows. Edge windows are truncated.
pub const SSIM_WINDOW: usize = 8;

fn check(u: &ImageGrid, reference: &ImageGrid, peak: f64) -> Result<()> {
    if !u.same_shape(reference) {
        return Err(Error::Shape(format!("{:?} vs {:?}", u.shape(), reference.shape())));
    }
    if !(peak > 0.0) {
        return Err(Error::InvalidParam(format!("peak must be positive, got {peak}")));
    }
    Ok(())
}

pub fn mse(u: &ImageGrid, reference: &ImageGrid) -> f64 {
    let n = u.len() as f64;
    u.data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n
}

/// `10 log10(peak^2 / MSE)` in dB. Identical images give `+inf`.
pub fn psnr(u: &ImageGrid, reference: &ImageGrid, peak: f64) -> Result<f64> {
    check(u, reference, peak)?;
    let e = mse(u, reference);
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / e).log10())
}

/// Stabilizing constants `C1 = (k1 L)^2`, `C2 = (k2 L)^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimConstants {
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimConstants {
    fn default() -> Self {
        Self { k1: 0.01, k2: 0.03 }
    }
}

/// Mean SSIM over non-overlapping `window x window` blocks, with population
/// (biased) moments inside each block.
pub fn ssim_with(u: &ImageGrid, reference: &ImageGrid, peak: f64, window: usize, k: SsimConstants) -> Result<f64> {
    check(u, reference, peak)?;
    if window == 0 {
        return Err(Error::InvalidParam("SSIM window must be positive".into()));
    }
    let c1 = (k.k1 * peak).powi(2);
    let c2 = (k.k2 * peak).powi(2);
    let (m1, m2) = u.shape();
    let (a, b) = (u.data(), reference.data());
    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in (0..m1).step_by(window) {
        for c0 in (0..m2).step_by(window) {
            let (r1, c1e) = ((r0 + window).min(m1), (c0 + window).min(m2));
            let npx = ((r1 - r0) * (c1e - c0)) as f64;
            let (mut sa, mut sb) = (0.0, 0.0);
            for r in r0..r1 {
                for c in c0..c1e {
                    sa += a[r * m2 + c];
                    sb += b[r * m2 + c];
                }
            }
            let (ma, mb) = (sa / npx, sb / npx);
            let (mut vaa, mut vbb, mut vab) = (0.0, 0.0, 0.0);
            for r in r0..r1 {
                for c in c0..c1e {
                    let (da, db) = (a[r * m2 + c] - ma, b[r * m2 + c] - mb);
                    vaa += da * da;
                    vbb += db * db;
                    vab += da * db;
                }
            }
            let (vaa, vbb, vab) = (vaa / npx, vbb / npx, vab / npx);
            total += ((2.0 * ma * mb + c1) * (2.0 * vab + c2)) / ((ma * ma + mb * mb + c1) * (vaa + vbb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

pub fn ssim(u: &ImageGrid, reference: &ImageGrid, peak: f64) -> Result<f64> {
    ssim_with(u, reference, peak, SSIM_WINDOW, SsimConstants::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{RngExt, SeedableRng};
    use proptest::prelude::*;

    fn img(m1: usize, m2: usize, seed: u64) -> ImageGrid {
        let mut rng = StdRng::seed_from_u64(seed);
        ImageGrid::from_fn(m1, m2, |_, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn identical_images() {
        let u = img(16, 16, 3);
        assert_eq!(psnr(&u, &u, 1.0).unwrap(), f64::INFINITY);
        assert!((ssim(&u, &u, 1.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mse_equal_to_peak_squared_is_zero_db() {
        let a = ImageGrid::filled(4, 4, 0.0);
        let b = ImageGrid::filled(4, 4, 2.0);
        assert!(psnr(&a, &b, 2.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn constant_images_reduce_to_luminance() {
        let (x, y) = (0.3, 0.7);
        let a = ImageGrid::filled(16, 16, x);
        let b = ImageGrid::filled(16, 16, y);
        let c1 = 0.01f64.powi(2);
        let want = (2.0 * x * y + c1) / (x * x + y * y + c1);
        assert!((ssim(&a, &b, 1.0).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn shape_mismatch() {
        assert!(psnr(&img(2, 2, 1), &img(2, 3, 1), 1.0).is_err());
        assert!(ssim(&img(2, 2, 1), &img(2, 2, 1), 0.0).is_err());
    }

    proptest! {
        #[test]
        fn ssim_is_symmetric_and_bounded(s1 in 0u64..1000, s2 in 0u64..1000, m1 in 1usize..20, m2 in 1usize..20) {
            let a = img(m1, m2, s1);
            let b = img(m1, m2, s2 + 7919);
            let ab = ssim(&a, &b, 1.0).unwrap();
            let ba = ssim(&b, &a, 1.0).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }

        #[test]
        fn psnr_decreases_with_error(d1 in 1e-3f64..0.5, d2 in 1e-3f64..0.5) {
            prop_assume!((d1 - d2).abs() > 1e-9);
            let r = ImageGrid::filled(3, 3, 0.5);
            let a = ImageGrid::filled(3, 3, 0.5 + d1);
            let b = ImageGrid::filled(3, 3, 0.5 + d2);
            let (pa, pb) = (psnr(&a, &r, 1.0).unwrap(), psnr(&b, &r, 1.0).unwrap());
            prop_assert_eq!(d1 < d2, pa > pb);
        }
    }
}
