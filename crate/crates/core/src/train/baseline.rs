//! Spectral bicubic interpolation: the RGB values are read as samples of the
//! spectrum at three band positions and a cubic convolution kernel fills in
//! the rest.

use crate::error::{Error, Result};
use crate::spectral::{HsImage, RgbImage};

/// Keys cubic convolution kernel with `a = −0.5`.
fn keys(t: f64) -> f64 {
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Band positions of the B, G and R samples for a cube with `bands` bands:
/// 470, 540 and 610 nm on the 400–700 nm grid.
pub fn sample_positions(bands: usize) -> [f64; 3] {
    let step = (bands - 1) as f64 / 30.0;
    [7.0 * step, 14.0 * step, 21.0 * step]
}

/// Interpolates one spectrum from its B, G, R samples. Knots beyond the
/// outer samples repeat the edge value and bands outside the sampled span
/// hold the nearest edge sample.
pub fn interpolate_spectrum(bgr: [f64; 3], bands: usize) -> Vec<f64> {
    let pos = sample_positions(bands);
    let spacing = pos[1] - pos[0];
    let knot = |k: isize| bgr[k.clamp(0, 2) as usize];
    (0..bands)
        .map(|b| {
            let x = b as f64;
            if x <= pos[0] {
                return bgr[0];
            }
            if x >= pos[2] {
                return bgr[2];
            }
            let u = (x - pos[0]) / spacing;
            let i = u.floor() as isize;
            let f = u - i as f64;
            (-1..=2).map(|k| knot(i + k) * keys(f - k as f64)).sum()
        })
        .collect()
}

/// Bicubic spectral upsampling of every pixel of `x` to `bands` bands.
pub fn spectral_bicubic(x: &RgbImage, bands: usize) -> Result<HsImage> {
    if bands < 3 {
        return Err(Error::invalid(format!("cannot interpolate to {bands} bands")));
    }
    let n = x.pixels();
    let mut data = vec![0.0; bands * n];
    for p in 0..n {
        // RGB channel order is R, G, B; samples run from short to long wavelengths
        let bgr = [x.channel(2)[p], x.channel(1)[p], x.channel(0)[p]];
        for (b, v) in interpolate_spectrum(bgr, bands).into_iter().enumerate() {
            data[b * n + p] = v;
        }
    }
    HsImage::from_data(bands, x.height(), x.width(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passes_through_samples() {
        let s = interpolate_spectrum([0.2, 0.5, 0.3], 31);
        assert_eq!(s[7], 0.2);
        assert!((s[14] - 0.5).abs() < 1e-15);
        assert!((s[21] - 0.3).abs() < 1e-15);
        assert!(s[..7].iter().all(|&v| v == 0.2));
        assert!(s[21..].iter().all(|&v| v == 0.3));
    }

    #[test]
    fn reproduces_constants() {
        let c = interpolate_spectrum([0.4; 3], 31);
        assert!(c.iter().all(|v| (v - 0.4).abs() < 1e-15));
    }

    #[test]
    fn kernel_partition_of_unity() {
        for i in 0..=10 {
            let f = i as f64 / 10.0;
            let total: f64 = (-1..=2).map(|k| keys(f - k as f64)).sum();
            assert!((total - 1.0).abs() < 1e-14, "{total}");
        }
    }

    #[test]
    fn image_layout() {
        let x = RgbImage::new(1, 2, vec![0.3, 0.6, 0.5, 0.5, 0.2, 0.4]).unwrap();
        let y = spectral_bicubic(&x, 31).unwrap();
        assert_eq!(y.spectrum(0)[7], 0.2);
        assert_eq!(y.spectrum(0)[21], 0.3);
        assert_eq!(y.spectrum(1)[7], 0.4);
        assert_eq!(y.spectrum(1)[21], 0.6);
    }
}
