//! Reconstruction quality: PSNR, band-averaged SSIM and the spectral angle.

use crate::error::{Error, Result};
use crate::spectral::HsImage;

/// Reported PSNR when the two cubes are identical.
pub const PSNR_CAP_DB: f64 = 100.0;

fn check_shapes(a: &HsImage, b: &HsImage) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            op: "metric",
            left: vec![a.bands(), a.height(), a.width()],
            right: vec![b.bands(), b.height(), b.width()],
        })
    }
}

/// `10·log10(peak²/MSE)` over every entry of the cube, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &HsImage, b: &HsImage, peak: f64) -> Result<f64> {
    check_shapes(a, b)?;
    if !(peak > 0.0) {
        return Err(Error::invalid(format!("PSNR peak must be positive, got {peak}")));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

/// SSIM window and stabilising constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    /// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - r;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }
}

/// Gaussian filtering restricted to positions where the whole window fits.
fn filter_valid(img: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            rows[y * wo + x] = taps.iter().enumerate().map(|(i, t)| t * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * wo + x]).sum();
        }
    }
    out
}

/// Mean SSIM between two single-band images.
pub fn ssim_band(a: &[f64], b: &[f64], h: usize, w: usize, params: &SsimParams) -> Result<f64> {
    if h < params.window || w < params.window {
        return Err(Error::invalid(format!(
            "image {h}×{w} smaller than the {0}×{0} SSIM window",
            params.window
        )));
    }
    let taps = params.taps();
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect() };
    let mu_a = filter_valid(a, h, w, &taps);
    let mu_b = filter_valid(b, h, w, &taps);
    let e_aa = filter_valid(&prod(|x, _| x * x), h, w, &taps);
    let e_bb = filter_valid(&prod(|_, y| y * y), h, w, &taps);
    let e_ab = filter_valid(&prod(|x, y| x * y), h, w, &taps);
    let (c1, c2) = (params.c1(), params.c2());
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// SSIM averaged over spectral bands.
pub fn assim_with(a: &HsImage, b: &HsImage, params: &SsimParams) -> Result<f64> {
    check_shapes(a, b)?;
    let (h, w) = (a.height(), a.width());
    let mut total = 0.0;
    for band in 0..a.bands() {
        total += ssim_band(a.band(band), b.band(band), h, w, params)?;
    }
    Ok(total / a.bands() as f64)
}

pub fn assim(a: &HsImage, b: &HsImage) -> Result<f64> {
    assim_with(a, b, &SsimParams::default())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamReport {
    /// Mean spectral angle in degrees over the scored pixels.
    pub degrees: f64,
    /// Pixels skipped because either spectrum was all zeros.
    pub skipped: usize,
}

/// Spectral angle mapper with the count of skipped zero-spectrum pixels.
pub fn sam_report(a: &HsImage, b: &HsImage) -> Result<SamReport> {
    check_shapes(a, b)?;
    let n = a.pixels();
    let mut total = 0.0;
    let mut scored = 0usize;
    for p in 0..n {
        let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
        for band in 0..a.bands() {
            let (x, y) = (a.data()[band * n + p], b.data()[band * n + p]);
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
        if na == 0.0 || nb == 0.0 {
            continue;
        }
        let cos = (dot / (na * nb).sqrt()).clamp(-1.0, 1.0);
        total += cos.acos().to_degrees();
        scored += 1;
    }
    if scored == 0 {
        return Err(Error::invalid("SAM undefined: every pixel has a zero spectrum"));
    }
    Ok(SamReport {
        degrees: total / scored as f64,
        skipped: n - scored,
    })
}

pub fn sam(a: &HsImage, b: &HsImage) -> Result<f64> {
    sam_report(a, b).map(|r| r.degrees)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::testing::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_cube(seed: u64, s: usize, h: usize, w: usize) -> HsImage {
        let mut r = rng(seed);
        HsImage::from_data(s, h, w, (0..s * h * w).map(|_| r.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn psnr_cases() {
        let a = random_cube(1, 3, 4, 4);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), 100.0);
        let b = HsImage::from_data(3, 4, 4, a.data().iter().map(|v| v + 0.1).collect()).unwrap();
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_matches_scalar_loop() {
        let a = random_cube(2, 5, 6, 7);
        let b = random_cube(3, 5, 6, 7);
        let mut sq = 0.0;
        let mut count = 0.0;
        for i in 0..a.data().len() {
            let d = a.data()[i] - b.data()[i];
            sq += d * d;
            count += 1.0;
        }
        let want = 10.0 * (1.0 / (sq / count)).log10();
        assert!((psnr(&a, &b, 1.0).unwrap() - want).abs() < 1e-9);
        assert!(psnr(&a, &random_cube(4, 5, 6, 6), 1.0).is_err());
    }

    #[test]
    fn assim_identity_and_inversion() {
        let a = random_cube(5, 2, 16, 16);
        assert!((assim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let inv = HsImage::from_data(2, 16, 16, a.data().iter().map(|v| 1.0 - v).collect()).unwrap();
        assert!(assim(&a, &inv).unwrap() < 1.0);
        assert!(assim(&random_cube(6, 1, 10, 16), &random_cube(7, 1, 10, 16)).is_err());
    }

    /// Direct sliding-window statistics with the explicit 2-D window.
    fn ssim_oracle(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
        let p = SsimParams::default();
        let t = p.taps();
        let k = p.window;
        let (c1, c2) = (p.c1(), p.c2());
        let mut total = 0.0;
        let mut count = 0.0;
        for y in 0..=h - k {
            for x in 0..=w - k {
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let wt = t[i] * t[j];
                        ma += wt * a[(y + i) * w + x + j];
                        mb += wt * b[(y + i) * w + x + j];
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let wt = t[i] * t[j];
                        let da = a[(y + i) * w + x + j] - ma;
                        let db = b[(y + i) * w + x + j] - mb;
                        va += wt * da * da;
                        vb += wt * db * db;
                        cov += wt * da * db;
                    }
                }
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1.0;
            }
        }
        total / count
    }

    #[test]
    fn ssim_matches_direct_window_oracle() {
        let a = random_cube(8, 1, 16, 16);
        let b = random_cube(9, 1, 16, 16);
        let got = assim(&a, &b).unwrap();
        let want = ssim_oracle(a.data(), b.data(), 16, 16);
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn sam_cases() {
        let a = random_cube(10, 4, 3, 3);
        assert_eq!(sam(&a, &a).unwrap(), 0.0);
        assert!(sam(&a, &a.scaled(2.0)).unwrap().abs() < 1e-6);
        // orthogonal: band 0 only vs band 1 only
        let mut x = vec![0.0; 2 * 4];
        let mut y = vec![0.0; 2 * 4];
        x[..4].fill(1.0);
        y[4..].fill(0.5);
        let (x, y) = (HsImage::from_data(2, 2, 2, x).unwrap(), HsImage::from_data(2, 2, 2, y).unwrap());
        assert!((sam(&x, &y).unwrap() - 90.0).abs() < 1e-12);

        let z = HsImage::zeros(2, 2, 2).unwrap();
        assert!(sam(&z, &z).is_err());
        let mut partial = x.clone();
        partial.data_mut()[0] = 0.0;
        let rep = sam_report(&partial, &x).unwrap();
        assert_eq!(rep.skipped, 1);
        assert!(rep.degrees.abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn metric_symmetry_and_range(seed in 0u64..1000, lambda in 0.01f64..100.0) {
            let a = random_cube(seed, 5, 3, 4);
            let b = random_cube(seed + 7919, 5, 3, 4);
            prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
            let s = sam(&a, &b).unwrap();
            prop_assert!((s - sam(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((0.0..=180.0).contains(&s));
            prop_assert!(sam(&a, &a.scaled(lambda)).unwrap() < 1e-5);
        }
    }
}
