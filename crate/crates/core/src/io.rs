//! On-disk formats: HSC1 cubes, SRF CSV files with a manifest, model
//! checkpoints, PPM previews and PGM label maps.
//!
//! Binary payloads are 32-bit little-endian floats, so values written from
//! `f64` are rounded once; anything already representable in `f32` comes back
//! bit-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::nn::Param;
use crate::semantic::LabelMap;
use crate::spectral::{HsImage, RgbImage, Srf};
use crate::srf::SrfDictionary;

pub const HSC_MAGIC: &[u8; 4] = b"HSC1";
pub const HSC_HEADER_LEN: usize = 24;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HSCK";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const SRF_CSV_HEADER: &str = "wavelength_nm,R,G,B";

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Little-endian cursor that reports failures by byte offset.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Cursor { bytes, pos: 0, path }
    }

    fn fail(&self, offset: usize, msg: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(
                self.bytes.len(),
                format!("truncated: {what} needs {n} bytes at offset {}, file has {}", self.pos, self.bytes.len()),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| self.fail(self.pos, "size overflow"))?, what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.fail(self.pos, format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

fn push_f32s(out: &mut Vec<u8>, data: &[f64]) {
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// A decoded HSC1 container. RGB images use the same layout with 3 bands.
#[derive(Debug, Clone, PartialEq)]
pub struct HscCube {
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl HscCube {
    pub fn to_hs(&self) -> Result<HsImage> {
        HsImage::from_data(self.bands, self.height, self.width, self.data.clone())
    }

    pub fn to_rgb(&self) -> Result<RgbImage> {
        if self.bands != 3 {
            return Err(Error::BandMismatch {
                expected: 3,
                actual: self.bands,
            });
        }
        RgbImage::new(self.height, self.width, self.data.clone())
    }
}

impl From<&HsImage> for HscCube {
    fn from(y: &HsImage) -> Self {
        HscCube {
            bands: y.bands(),
            height: y.height(),
            width: y.width(),
            data: y.data().to_vec(),
        }
    }
}

impl From<&RgbImage> for HscCube {
    fn from(x: &RgbImage) -> Self {
        HscCube {
            bands: 3,
            height: x.height(),
            width: x.width(),
            data: x.data().to_vec(),
        }
    }
}

pub fn encode_hsc(cube: &HscCube) -> Vec<u8> {
    let mut out = Vec::with_capacity(HSC_HEADER_LEN + 4 * cube.data.len());
    out.extend_from_slice(HSC_MAGIC);
    for d in [cube.height, cube.width, cube.bands] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&[0; 8]);
    push_f32s(&mut out, &cube.data);
    out
}

/// `path` only labels errors.
pub fn decode_hsc(bytes: &[u8], path: &Path) -> Result<HscCube> {
    let mut c = Cursor::new(bytes, path);
    let magic = c.take(4, "magic")?;
    if magic != HSC_MAGIC {
        return Err(c.fail(0, format!("bad magic {:?}, expected \"HSC1\"", String::from_utf8_lossy(magic))));
    }
    let height = c.u32("height")? as usize;
    let width = c.u32("width")? as usize;
    let bands = c.u32("bands")? as usize;
    if height == 0 || width == 0 || bands == 0 {
        return Err(c.fail(4, format!("empty shape {bands}×{height}×{width}")));
    }
    if c.take(8, "reserved")?.iter().any(|&b| b != 0) {
        return Err(c.fail(16, "reserved bytes must be zero"));
    }
    let expected = HSC_HEADER_LEN as u64 + 4 * (bands * height * width) as u64;
    if bytes.len() as u64 != expected {
        return Err(c.fail(
            bytes.len().min(expected as usize),
            format!("file is {} bytes, shape {bands}×{height}×{width} needs {expected}", bytes.len()),
        ));
    }
    let data = c.f32s(bands * height * width, "cube data")?;
    c.finish()?;
    Ok(HscCube {
        bands,
        height,
        width,
        data,
    })
}

pub fn write_hsc(path: impl AsRef<Path>, cube: &HscCube) -> Result<()> {
    write_file(path.as_ref(), &encode_hsc(cube))
}

pub fn read_hsc(path: impl AsRef<Path>) -> Result<HscCube> {
    let path = path.as_ref();
    decode_hsc(&read_file(path)?, path)
}

pub fn write_hs(path: impl AsRef<Path>, y: &HsImage) -> Result<()> {
    write_hsc(path, &y.into())
}

pub fn read_hs(path: impl AsRef<Path>) -> Result<HsImage> {
    read_hsc(path)?.to_hs()
}

pub fn write_rgb(path: impl AsRef<Path>, x: &RgbImage) -> Result<()> {
    write_hsc(path, &x.into())
}

pub fn read_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    read_hsc(path)?.to_rgb()
}

/// SRF CSV: header, then one `wavelength,R,G,B` row per band. Numbers are
/// printed in shortest round-trip form, so reading back is exact.
pub fn format_srf_csv(srf: &Srf, wavelengths: &[f64]) -> Result<String> {
    if wavelengths.len() != srf.bands() {
        return Err(Error::BandMismatch {
            expected: srf.bands(),
            actual: wavelengths.len(),
        });
    }
    let mut s = format!("{SRF_CSV_HEADER}\n");
    for (i, wl) in wavelengths.iter().enumerate() {
        writeln!(s, "{wl},{},{},{}", srf.row(0)[i], srf.row(1)[i], srf.row(2)[i]).unwrap();
    }
    Ok(s)
}

/// Parses an SRF CSV into the 3×s matrix (columns R,G,B become rows) and
/// its wavelength grid.
pub fn parse_srf_csv(text: &str, name: &str, path: &Path) -> Result<(Srf, Vec<f64>)> {
    let fail = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == SRF_CSV_HEADER => {}
        Some((i, h)) => return Err(fail(i + 1, format!("expected header {SRF_CSV_HEADER:?}, got {h:?}"))),
        None => return Err(fail(1, "empty file".into())),
    }
    let mut wl = Vec::new();
    let mut rows = [Vec::new(), Vec::new(), Vec::new()];
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(fail(i + 1, format!("expected 4 fields, got {}", fields.len())));
        }
        let nums = fields
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| fail(i + 1, format!("{f:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if nums.iter().any(|v| !v.is_finite()) {
            return Err(fail(i + 1, "non-finite value".into()));
        }
        if let Some(&prev) = wl.last() {
            if nums[0] <= prev {
                return Err(fail(i + 1, format!("wavelength {} does not increase past {prev}", nums[0])));
            }
        }
        if nums[1..].iter().any(|&v| v < 0.0) {
            return Err(fail(i + 1, "negative response".into()));
        }
        wl.push(nums[0]);
        for c in 0..3 {
            rows[c].push(nums[c + 1]);
        }
    }
    if wl.is_empty() {
        return Err(fail(2, "no data rows".into()));
    }
    let bands = wl.len();
    let srf = Srf::new(name, bands, rows.concat())?;
    Ok((srf, wl))
}

pub fn write_srf_csv(path: impl AsRef<Path>, srf: &Srf, wavelengths: &[f64]) -> Result<()> {
    write_file(path.as_ref(), format_srf_csv(srf, wavelengths)?.as_bytes())
}

/// Reads one SRF file; the camera is named after the file stem.
pub fn read_srf_csv(path: impl AsRef<Path>) -> Result<(Srf, Vec<f64>)> {
    let path = path.as_ref();
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_srf_csv(&read_text(path)?, &name, path)
}

/// Writes one CSV per atom next to a `camera,csv_path` manifest and returns
/// the manifest path. Paths in the manifest are relative to its directory.
pub fn write_dictionary(dir: impl AsRef<Path>, dict: &SrfDictionary, wavelengths: &[f64]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::from("camera,csv_path\n");
    for atom in dict.atoms() {
        let file = format!("{}.csv", atom.name());
        write_srf_csv(dir.join(&file), atom, wavelengths)?;
        writeln!(manifest, "{},{file}", atom.name()).unwrap();
    }
    let path = dir.join("manifest.csv");
    write_file(&path, manifest.as_bytes())?;
    Ok(path)
}

/// Loads every camera listed in a manifest. All files must share one
/// wavelength grid.
pub fn read_dictionary(manifest: impl AsRef<Path>) -> Result<(SrfDictionary, Vec<f64>)> {
    let manifest = manifest.as_ref();
    let base = manifest.parent().unwrap_or(Path::new("."));
    let text = read_text(manifest)?;
    let fail = |line: usize, msg: String| Error::Parse {
        path: manifest.to_path_buf(),
        line,
        msg,
    };
    let mut atoms = Vec::new();
    let mut grid: Option<Vec<f64>> = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line == "camera,csv_path") {
            continue;
        }
        let (name, file) = line.split_once(',').ok_or_else(|| fail(i + 1, "expected camera,csv_path".into()))?;
        let path = base.join(file.trim());
        let (srf, wl) = parse_srf_csv(&read_text(&path)?, name.trim(), &path)?;
        match &grid {
            Some(g) if *g != wl => return Err(fail(i + 1, format!("{} uses a different wavelength grid", path.display()))),
            Some(_) => {}
            None => grid = Some(wl),
        }
        atoms.push(srf);
    }
    let grid = grid.ok_or_else(|| fail(1, "manifest lists no cameras".into()))?;
    Ok((SrfDictionary::new(atoms)?, grid))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Named parameter tensors plus free-form `key=value` metadata.
///
/// Layout: `"HSCK"`, u32 version, u32 metadata length, metadata bytes,
/// u32 tensor count, then per tensor: u32 name length, name, u32 rank,
/// u32 dims, f32 values. All integers little-endian.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub metadata: String,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_params<'a>(metadata: impl Into<String>, params: impl IntoIterator<Item = &'a Param>) -> Self {
        Checkpoint {
            metadata: metadata.into(),
            tensors: params
                .into_iter()
                .map(|p| NamedTensor {
                    name: p.name().to_string(),
                    shape: p.shape().to_vec(),
                    data: p.data().to_vec(),
                })
                .collect(),
        }
    }

    /// Copies stored values into matching parameters. Every parameter must
    /// be present with the same shape.
    pub fn load_into<'a>(&self, params: impl IntoIterator<Item = &'a mut Param>) -> Result<()> {
        for p in params {
            let t = self
                .tensors
                .iter()
                .find(|t| t.name == p.name())
                .ok_or_else(|| Error::invalid(format!("checkpoint has no tensor {:?}", p.name())))?;
            if t.shape != p.shape() {
                return Err(Error::ShapeMismatch {
                    op: "load checkpoint",
                    left: t.shape.clone(),
                    right: p.shape().to_vec(),
                });
            }
            p.set_data(t.data.clone())?;
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        out.extend_from_slice(self.metadata.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            push_f32s(&mut out, &t.data);
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut c = Cursor::new(bytes, path);
        let magic = c.take(4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(c.fail(0, format!("bad magic {:?}, expected \"HSCK\"", String::from_utf8_lossy(magic))));
        }
        let version = c.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(c.fail(4, format!("unsupported version {version}")));
        }
        let text = |c: &mut Cursor, what: &str| -> Result<String> {
            let n = c.u32(what)? as usize;
            let at = c.pos;
            let raw = c.take(n, what)?;
            String::from_utf8(raw.to_vec()).map_err(|_| c.fail(at, format!("{what} is not UTF-8")))
        };
        let metadata = text(&mut c, "metadata")?;
        let count = c.u32("tensor count")?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name = text(&mut c, "tensor name")?;
            let rank = c.u32("rank")? as usize;
            let shape = (0..rank).map(|_| c.u32("dimension").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let data = c.f32s(shape.iter().product(), "tensor data")?;
            tensors.push(NamedTensor { name, shape, data });
        }
        c.finish()?;
        Ok(Checkpoint { metadata, tensors })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.encode())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&read_file(path)?, path)
    }
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit binary PPM for eyeballing; values are clamped to [0,1].
pub fn encode_ppm(x: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", x.width(), x.height()).into_bytes();
    for p in 0..x.pixels() {
        for c in 0..3 {
            out.push(to_byte(x.channel(c)[p]));
        }
    }
    out
}

pub fn write_ppm(path: impl AsRef<Path>, x: &RgbImage) -> Result<()> {
    write_file(path.as_ref(), &encode_ppm(x))
}

/// Binary PGM holding one class index (or 255 for ignore) per pixel.
pub fn encode_pgm(labels: &LabelMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", labels.width(), labels.height()).into_bytes();
    out.extend_from_slice(labels.labels());
    out
}

pub fn decode_pgm(bytes: &[u8], classes: usize, path: &Path) -> Result<LabelMap> {
    let c = Cursor::new(bytes, path);
    // header: magic, width, height, maxval separated by single whitespace runs
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(c.fail(pos, "truncated PGM header"));
        }
        fields.push((start, String::from_utf8_lossy(&bytes[start..pos]).into_owned()));
    }
    if fields[0].1 != "P5" {
        return Err(c.fail(0, format!("bad magic {:?}, expected \"P5\"", fields[0].1)));
    }
    let num = |i: usize| {
        fields[i]
            .1
            .parse::<usize>()
            .map_err(|_| c.fail(fields[i].0, format!("bad header field {:?}", fields[i].1)))
    };
    let (width, height, maxval) = (num(1)?, num(2)?, num(3)?);
    if maxval != 255 {
        return Err(c.fail(fields[3].0, format!("maxval {maxval}, expected 255")));
    }
    let data = &bytes[(pos + 1).min(bytes.len())..];
    if data.len() != width * height {
        return Err(c.fail(pos + 1, format!("{} label bytes for {width}×{height}", data.len())));
    }
    LabelMap::new(height, width, classes, data.to_vec())
}

pub fn write_pgm(path: impl AsRef<Path>, labels: &LabelMap) -> Result<()> {
    write_file(path.as_ref(), &encode_pgm(labels))
}

pub fn read_pgm(path: impl AsRef<Path>, classes: usize) -> Result<LabelMap> {
    let path = path.as_ref();
    decode_pgm(&read_file(path)?, classes, path)
}
