//! Spectral image types and the RGB formation model `X = C·Y + N`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_BANDS: usize = 31;

/// 400, 410, …, 700 nm.
pub fn default_wavelengths() -> Vec<f64> {
    (0..DEFAULT_BANDS).map(|i| 400.0 + 10.0 * i as f64).collect()
}

/// Band-major `bands×height×width` spectral cube.
#[derive(Debug, Clone, PartialEq)]
pub struct HsImage {
    bands: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
    wavelengths: Vec<f64>,
}

impl HsImage {
    pub fn new(bands: usize, height: usize, width: usize, data: Vec<f64>, wavelengths: Vec<f64>) -> Result<Self> {
        if bands == 0 || height == 0 || width == 0 {
            return Err(Error::invalid(format!("empty cube {bands}×{height}×{width}")));
        }
        if data.len() != bands * height * width {
            return Err(Error::invalid(format!(
                "cube {bands}×{height}×{width} needs {} values, got {}",
                bands * height * width,
                data.len()
            )));
        }
        if wavelengths.len() != bands {
            return Err(Error::invalid(format!("{} wavelengths for {bands} bands", wavelengths.len())));
        }
        if wavelengths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("wavelengths must be strictly increasing"));
        }
        Ok(HsImage {
            bands,
            height,
            width,
            data,
            wavelengths,
        })
    }

    /// Cube on evenly spaced wavelengths: the 400–700 nm grid for 31 bands,
    /// otherwise band indices.
    pub fn from_data(bands: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        let wl = if bands == DEFAULT_BANDS {
            default_wavelengths()
        } else {
            (0..bands).map(|i| i as f64).collect()
        };
        Self::new(bands, height, width, data, wl)
    }

    pub fn zeros(bands: usize, height: usize, width: usize) -> Result<Self> {
        Self::from_data(bands, height, width, vec![0.0; bands * height * width])
    }

    /// Reinterprets a `s×h×w` tensor as a cube; wavelengths follow [`Self::from_data`].
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let &[s, h, w] = t.shape() else {
            return Err(Error::invalid(format!("expected s×h×w tensor, got {:?}", t.shape())));
        };
        Self::from_data(s, h, w, t.to_vec())
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn band(&self, b: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[b * n..(b + 1) * n]
    }

    /// Spectrum of the pixel at flat index `p`.
    pub fn spectrum(&self, p: usize) -> Vec<f64> {
        let n = self.pixels();
        (0..self.bands).map(|b| self.data[b * n + p]).collect()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.data.clone(), &[self.bands, self.height, self.width]).expect("valid cube")
    }

    pub fn same_shape(&self, other: &HsImage) -> bool {
        (self.bands, self.height, self.width) == (other.bands, other.height, other.width)
    }

    pub fn scaled(&self, factor: f64) -> HsImage {
        HsImage {
            data: self.data.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }
}

/// `3×height×width` RGB image.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!("empty image {height}×{width}")));
        }
        if data.len() != 3 * height * width {
            return Err(Error::invalid(format!(
                "RGB {height}×{width} needs {} values, got {}",
                3 * height * width,
                data.len()
            )));
        }
        Ok(RgbImage { height, width, data })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let &[3, h, w] = t.shape() else {
            return Err(Error::invalid(format!("expected 3×h×w tensor, got {:?}", t.shape())));
        };
        Self::new(h, w, t.to_vec())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_means(&self) -> [f64; 3] {
        let n = self.pixels() as f64;
        [0, 1, 2].map(|c| self.channel(c).iter().sum::<f64>() / n)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.data.clone(), &[3, self.height, self.width]).expect("valid image")
    }

    /// Copy with every value clamped into `[0, 1]`.
    pub fn clamped(&self) -> RgbImage {
        RgbImage {
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            ..self.clone()
        }
    }
}

/// Camera spectral response: a non-negative `3×bands` matrix, rows R, G, B.
#[derive(Debug, Clone, PartialEq)]
pub struct Srf {
    name: String,
    bands: usize,
    matrix: Vec<f64>,
}

impl Srf {
    pub fn new(name: impl Into<String>, bands: usize, matrix: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if bands == 0 || matrix.len() != 3 * bands {
            return Err(Error::invalid(format!(
                "SRF {name}: {} values for 3×{bands}",
                matrix.len()
            )));
        }
        if let Some(v) = matrix.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid(format!("SRF {name}: entry {v} is not a finite non-negative value")));
        }
        Ok(Srf { name, bands, matrix })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn row(&self, channel: usize) -> &[f64] {
        &self.matrix[channel * self.bands..(channel + 1) * self.bands]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.matrix.clone(), &[3, self.bands]).expect("valid SRF")
    }

    /// Builds an SRF from a `3×s` tensor, clamping round-off negatives to zero.
    pub fn from_tensor(name: impl Into<String>, t: &Tensor) -> Result<Self> {
        let &[3, s] = t.shape() else {
            return Err(Error::invalid(format!("expected 3×s SRF tensor, got {:?}", t.shape())));
        };
        Self::new(name, s, t.data().iter().map(|v| v.max(0.0)).collect())
    }
}

/// Additive sensor noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    None,
    /// Zero-mean i.i.d. Gaussian with standard deviation `sigma` on every channel.
    Gaussian { sigma: f64, seed: u64 },
}

impl NoiseModel {
    pub fn gaussian(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!("noise sigma {sigma} must be finite and non-negative")));
        }
        Ok(if sigma == 0.0 {
            NoiseModel::None
        } else {
            NoiseModel::Gaussian { sigma, seed }
        })
    }

    pub fn sigma(&self) -> f64 {
        match self {
            NoiseModel::None => 0.0,
            NoiseModel::Gaussian { sigma, .. } => *sigma,
        }
    }
}

/// `C·Y` for a `3×s` response and an `s×hw` cube, as a row-major `3×hw` matrix.
pub(crate) fn project(srf: &[f64], bands: usize, cube: &[f64], pixels: usize) -> Vec<f64> {
    let mut out = vec![0.0; 3 * pixels];
    crate::tensor::gemm(3, bands, pixels, srf, false, cube, false, 0.0, &mut out);
    out
}

/// Synthesizes the RGB image a camera with response `srf` records of `y`.
/// Values are not clamped; writers clamp on export.
pub fn apply_degradation(y: &HsImage, srf: &Srf, noise: NoiseModel) -> Result<RgbImage> {
    if srf.bands() != y.bands() {
        return Err(Error::BandMismatch {
            expected: y.bands(),
            actual: srf.bands(),
        });
    }
    let mut x = project(srf.matrix(), y.bands(), y.data(), y.pixels());
    if let NoiseModel::Gaussian { sigma, seed } = noise {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
        x.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
    RgbImage::new(y.height(), y.width(), x)
}

/// Gray World white balance: rescales each channel so all three channel
/// means equal the mean over the whole image.
pub fn gray_world_balance(x: &RgbImage) -> Result<RgbImage> {
    let means = x.channel_means();
    if let Some(c) = means.iter().position(|&m| !(m > 0.0)) {
        return Err(Error::invalid(format!("channel {c} has non-positive mean {}", means[c])));
    }
    let target = means.iter().sum::<f64>() / 3.0;
    let n = x.pixels();
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| v * target / means[i / n])
        .collect();
    RgbImage::new(x.height(), x.width(), data)
}
