//! Synthetic cameras and piecewise-constant spectral scenes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::semantic::LabelMap;
use crate::spectral::{apply_degradation, default_wavelengths, HsImage, NoiseModel, RgbImage, Srf};
use crate::srf::SrfDictionary;

/// One step of the SplitMix64 sequence; used to derive independent seeds.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for item `index` of stream `stream` under a base seed.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ stream) ^ index)
}

fn gaussian(x: f64, center: f64, width: f64) -> f64 {
    let d = (x - center) / width;
    (-0.5 * d * d).exp()
}

/// Nominal channel peaks in nm, ordered R, G, B.
pub const CHANNEL_CENTERS_NM: [f64; 3] = [610.0, 540.0, 470.0];

/// `n` camera responses built from jittered Gaussian bumps. Each channel has
/// a main lobe near its nominal centre and two weaker side lobes; every
/// camera is scaled so its largest channel sums to 1 over the band grid,
/// keeping RGB values of reflectance cubes inside `[0, 1]`.
pub fn synthetic_dictionary(n: usize, wavelengths: &[f64], seed: u64) -> Result<SrfDictionary> {
    let s = wavelengths.len();
    let atoms = (0..n)
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xD1C7, j as u64));
            let mut m = vec![0.0; 3 * s];
            for (i, &nominal) in CHANNEL_CENTERS_NM.iter().enumerate() {
                let mut lobes = vec![Bump {
                    center_nm: nominal + rng.random_range(-30.0..30.0),
                    width_nm: rng.random_range(8.0..20.0),
                    amplitude: rng.random_range(0.6..1.0),
                }];
                for _ in 0..2 {
                    lobes.push(Bump {
                        center_nm: rng.random_range(400.0..700.0),
                        width_nm: rng.random_range(6.0..15.0),
                        amplitude: rng.random_range(0.0..0.4),
                    });
                }
                for (b, &wl) in wavelengths.iter().enumerate() {
                    m[i * s + b] = lobes.iter().map(|l| l.amplitude * gaussian(wl, l.center_nm, l.width_nm)).sum();
                }
            }
            let peak = m.iter().cloned().fold(0.0, f64::max);
            m.iter_mut().for_each(|v| *v /= peak);
            let max_row = (0..3).map(|i| m[i * s..(i + 1) * s].iter().sum::<f64>()).fold(0.0, f64::max);
            m.iter_mut().for_each(|v| *v /= max_row);
            Srf::new(format!("cam{j:02}"), s, m)
        })
        .collect::<Result<_>>()?;
    SrfDictionary::new(atoms)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    pub center_nm: f64,
    pub width_nm: f64,
    pub amplitude: f64,
}

/// Non-negative base reflectance: an offset plus a Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSpectrum {
    pub offset: f64,
    pub bumps: Vec<Bump>,
}

impl ClassSpectrum {
    pub fn eval(&self, wl: f64) -> f64 {
        self.offset
            + self
                .bumps
                .iter()
                .map(|b| b.amplitude * gaussian(wl, b.center_nm, b.width_nm))
                .sum::<f64>()
    }
}

/// Random class spectra peaking between 0.5 and 0.95.
pub fn random_palette(classes: usize, seed: u64) -> Vec<ClassSpectrum> {
    let wl = default_wavelengths();
    (0..classes)
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xC1A5, c as u64));
            let k = rng.random_range(1..=3);
            let mut spec = ClassSpectrum {
                offset: rng.random_range(0.02..0.2),
                bumps: (0..k)
                    .map(|_| Bump {
                        center_nm: rng.random_range(380.0..720.0),
                        width_nm: rng.random_range(25.0..90.0),
                        amplitude: rng.random_range(0.1..0.7),
                    })
                    .collect(),
            };
            let peak = wl.iter().map(|&l| spec.eval(l)).fold(0.0, f64::max);
            let target = rng.random_range(0.5..0.95);
            let k = target / peak;
            spec.offset *= k;
            spec.bumps.iter_mut().for_each(|b| b.amplitude *= k);
            spec
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    /// Class spectra; the class count `M` is its length.
    pub palette: Vec<ClassSpectrum>,
    pub regions: usize,
    /// Relative amplitude of the smooth per-region spectral and spatial variation.
    pub jitter: f64,
    pub wavelengths: Vec<f64>,
}

impl SceneSpec {
    pub fn new(seed: u64, height: usize, width: usize, palette: Vec<ClassSpectrum>, regions: usize, jitter: f64) -> Self {
        SceneSpec {
            seed,
            height,
            width,
            palette,
            regions,
            jitter,
            wavelengths: default_wavelengths(),
        }
    }

    pub fn classes(&self) -> usize {
        self.palette.len()
    }
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    y: usize,
    x: usize,
    h: usize,
    w: usize,
}

/// Splits the image into `n` rectangles by repeatedly halving a random
/// splittable rectangle at a random position along its longer side.
fn partition(h: usize, w: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<Rect> {
    let mut rects = vec![Rect { y: 0, x: 0, h, w }];
    while rects.len() < n {
        let splittable: Vec<usize> = (0..rects.len()).filter(|&i| rects[i].h * rects[i].w > 1).collect();
        let r = rects.swap_remove(splittable[rng.random_range(0..splittable.len())]);
        let vertical = r.w > r.h || (r.w == r.h && rng.random_bool(0.5));
        if vertical {
            let cut = rng.random_range(1..r.w);
            rects.push(Rect { w: cut, ..r });
            rects.push(Rect {
                x: r.x + cut,
                w: r.w - cut,
                ..r
            });
        } else {
            let cut = rng.random_range(1..r.h);
            rects.push(Rect { h: cut, ..r });
            rects.push(Rect {
                y: r.y + cut,
                h: r.h - cut,
                ..r
            });
        }
    }
    rects
}

/// Renders a labelled scene. Every region gets a class, a brightness, a
/// smooth multiplicative spectral perturbation and a linear spatial shading;
/// the last two scale with `jitter` and vanish at zero.
pub fn synth_scene(spec: &SceneSpec) -> Result<(HsImage, LabelMap)> {
    let (h, w) = (spec.height, spec.width);
    let m = spec.classes();
    if h == 0 || w == 0 || m == 0 || spec.regions == 0 {
        return Err(Error::invalid("scene needs positive size, classes and regions"));
    }
    if spec.regions > h * w {
        return Err(Error::invalid(format!(
            "{} regions cannot fit in {h}×{w} pixels",
            spec.regions
        )));
    }
    if !(spec.jitter >= 0.0 && spec.jitter < 1.0) {
        return Err(Error::invalid(format!("jitter must lie in [0, 1), got {}", spec.jitter)));
    }
    let s = spec.wavelengths.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rects = partition(h, w, spec.regions, &mut rng);
    let mut data = vec![0.0; s * h * w];
    let mut labels = vec![0u8; h * w];
    let (lo, hi) = (spec.wavelengths[0], spec.wavelengths[s - 1]);
    for r in rects {
        let class = rng.random_range(0..m);
        let brightness = rng.random_range(0.6..1.0);
        let wobble = Bump {
            center_nm: rng.random_range(lo..=hi),
            width_nm: rng.random_range(30.0..100.0),
            amplitude: rng.random_range(-1.0..1.0),
        };
        let (gy, gx) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let spectrum: Vec<f64> = spec
            .wavelengths
            .iter()
            .map(|&l| {
                let base = spec.palette[class].eval(l);
                brightness * base * (1.0 + spec.jitter * wobble.amplitude * gaussian(l, wobble.center_nm, wobble.width_nm))
            })
            .collect();
        for yy in r.y..r.y + r.h {
            for xx in r.x..r.x + r.w {
                // position in [-1, 1] within the region
                let v = if r.h > 1 { 2.0 * (yy - r.y) as f64 / (r.h - 1) as f64 - 1.0 } else { 0.0 };
                let u = if r.w > 1 { 2.0 * (xx - r.x) as f64 / (r.w - 1) as f64 - 1.0 } else { 0.0 };
                let shade = 1.0 + 0.5 * spec.jitter * (gy * v + gx * u);
                let p = yy * w + xx;
                labels[p] = class as u8;
                for (b, sv) in spectrum.iter().enumerate() {
                    data[b * h * w + p] = (sv * shade).clamp(0.0, 1.0);
                }
            }
        }
    }
    Ok((
        HsImage::new(s, h, w, data, spec.wavelengths.clone())?,
        LabelMap::new(h, w, m, labels)?,
    ))
}

/// Everything needed to generate the training and evaluation pools.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolSpec {
    pub seed: u64,
    pub size: usize,
    pub classes: usize,
    pub regions: usize,
    pub jitter: f64,
    pub atoms: usize,
    pub train_rgb: usize,
    pub real_hs: usize,
    pub test: usize,
    /// Dictionary index of the camera that renders the test pool.
    pub test_camera: usize,
    pub noise_sigma: f64,
}

impl Default for PoolSpec {
    fn default() -> Self {
        PoolSpec {
            seed: 0,
            size: 32,
            classes: 6,
            regions: 8,
            jitter: 0.1,
            atoms: 28,
            train_rgb: 64,
            real_hs: 64,
            test: 8,
            test_camera: 0,
            noise_sigma: 0.0,
        }
    }
}

/// A labelled RGB image from the unpaired training pool.
#[derive(Debug, Clone)]
pub struct RgbSample {
    pub rgb: RgbImage,
    pub labels: LabelMap,
    pub camera: usize,
}

/// A test image with its ground-truth cube.
#[derive(Debug, Clone)]
pub struct TestSample {
    pub rgb: RgbImage,
    pub hs: HsImage,
    pub labels: LabelMap,
}

#[derive(Debug, Clone)]
pub struct Pools {
    pub dictionary: SrfDictionary,
    pub palette: Vec<ClassSpectrum>,
    pub train: Vec<RgbSample>,
    pub real: Vec<HsImage>,
    pub test: Vec<TestSample>,
}

const STREAM_TRAIN: u64 = 1;
const STREAM_REAL: u64 = 2;
const STREAM_TEST: u64 = 3;
const STREAM_CAMERA: u64 = 4;
const STREAM_NOISE: u64 = 5;

impl PoolSpec {
    pub fn scene(&self, palette: &[ClassSpectrum], stream: u64, index: usize) -> Result<(HsImage, LabelMap)> {
        let spec = SceneSpec::new(
            derive_seed(self.seed, stream, index as u64),
            self.size,
            self.size,
            palette.to_vec(),
            self.regions,
            self.jitter,
        );
        synth_scene(&spec)
    }

    fn noise(&self, stream: u64, index: usize) -> Result<NoiseModel> {
        NoiseModel::gaussian(self.noise_sigma, derive_seed(self.seed, STREAM_NOISE, stream << 32 | index as u64))
    }

    /// Builds all pools. Training RGB images and real cubes come from
    /// disjoint scene streams, so no RGB image has a matching cube.
    pub fn build(&self) -> Result<Pools> {
        let dictionary = synthetic_dictionary(self.atoms, &default_wavelengths(), self.seed)?;
        if self.test_camera >= dictionary.len() {
            return Err(Error::invalid(format!(
                "test camera {} outside a {}-atom dictionary",
                self.test_camera,
                dictionary.len()
            )));
        }
        let palette = random_palette(self.classes, self.seed);
        let train = (0..self.train_rgb)
            .map(|i| {
                let (hs, labels) = self.scene(&palette, STREAM_TRAIN, i)?;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, STREAM_CAMERA, i as u64));
                let camera = rng.random_range(0..dictionary.len());
                let rgb = apply_degradation(&hs, dictionary.atom(camera), self.noise(STREAM_TRAIN, i)?)?;
                Ok(RgbSample { rgb, labels, camera })
            })
            .collect::<Result<_>>()?;
        let real = (0..self.real_hs)
            .map(|i| self.scene(&palette, STREAM_REAL, i).map(|(hs, _)| hs))
            .collect::<Result<_>>()?;
        let test = (0..self.test)
            .map(|i| {
                let (hs, labels) = self.scene(&palette, STREAM_TEST, i)?;
                let rgb = apply_degradation(&hs, dictionary.atom(self.test_camera), self.noise(STREAM_TEST, i)?)?;
                Ok(TestSample { rgb, hs, labels })
            })
            .collect::<Result<_>>()?;
        Ok(Pools {
            dictionary,
            palette,
            train,
            real,
            test,
        })
    }
}
