//! Directory layout written by `synth` and read by `train` and `ablate`.
//!
//! ```text
//! pool.cfg                     generation parameters, key=value
//! dictionary/manifest.csv      camera,csv_path
//! dictionary/camNN.csv         wavelength_nm,R,G,B
//! train/NNNN.rgb.hsc           training RGB images
//! train/NNNN.labels.pgm        their label maps
//! train/cameras.csv            index,camera
//! real/NNNN.hs.hsc             unpaired spectral cubes
//! test/NNNN.{rgb,hs}.hsc       held-out pairs
//! test/NNNN.labels.pgm
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use hsrecon::io;
use hsrecon::synth::{Pools, PoolSpec, RgbSample, TestSample};

pub fn pool_spec_kv(p: &PoolSpec) -> String {
    let mut s = String::new();
    for (k, v) in [
        ("seed", p.seed.to_string()),
        ("size", p.size.to_string()),
        ("classes", p.classes.to_string()),
        ("regions", p.regions.to_string()),
        ("jitter", format!("{:?}", p.jitter)),
        ("atoms", p.atoms.to_string()),
        ("train_rgb", p.train_rgb.to_string()),
        ("real_hs", p.real_hs.to_string()),
        ("test", p.test.to_string()),
        ("test_camera", p.test_camera.to_string()),
        ("noise_sigma", format!("{:?}", p.noise_sigma)),
    ] {
        writeln!(s, "{k}={v}").unwrap();
    }
    s
}

fn classes_from_kv(text: &str) -> Result<usize> {
    for line in text.lines() {
        if let Some(v) = line.trim().strip_prefix("classes=") {
            return v.trim().parse().with_context(|| format!("bad class count {v:?}"));
        }
    }
    bail!("pool.cfg has no classes= line")
}

fn create(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn write_pools(dir: &Path, spec: &PoolSpec, pools: &Pools, ppm: bool) -> Result<()> {
    for sub in ["train", "real", "test"] {
        create(&dir.join(sub))?;
    }
    fs::write(dir.join("pool.cfg"), pool_spec_kv(spec))?;
    io::write_dictionary(dir.join("dictionary"), &pools.dictionary, &hsrecon::spectral::default_wavelengths())?;

    let mut cameras = String::from("index,camera\n");
    for (i, s) in pools.train.iter().enumerate() {
        let stem = dir.join("train").join(format!("{i:04}"));
        io::write_rgb(stem.with_extension("rgb.hsc"), &s.rgb)?;
        io::write_pgm(stem.with_extension("labels.pgm"), &s.labels)?;
        if ppm {
            io::write_ppm(stem.with_extension("ppm"), &s.rgb)?;
        }
        writeln!(cameras, "{i},{}", pools.dictionary.atom(s.camera).name()).unwrap();
    }
    fs::write(dir.join("train").join("cameras.csv"), cameras)?;
    for (i, y) in pools.real.iter().enumerate() {
        io::write_hs(dir.join("real").join(format!("{i:04}.hs.hsc")), y)?;
    }
    for (i, t) in pools.test.iter().enumerate() {
        let stem = dir.join("test").join(format!("{i:04}"));
        io::write_rgb(stem.with_extension("rgb.hsc"), &t.rgb)?;
        io::write_hs(stem.with_extension("hs.hsc"), &t.hs)?;
        io::write_pgm(stem.with_extension("labels.pgm"), &t.labels)?;
        if ppm {
            io::write_ppm(stem.with_extension("ppm"), &t.rgb)?;
        }
    }
    Ok(())
}

/// Sorted files in `dir` whose names end with `suffix`.
fn listing(dir: &Path, suffix: &str) -> Result<Vec<std::path::PathBuf>> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().ends_with(suffix)))
        .collect();
    out.sort();
    Ok(out)
}

fn sibling(path: &Path, from: &str, to: &str) -> std::path::PathBuf {
    let name = path.file_name().unwrap().to_string_lossy().replace(from, to);
    path.with_file_name(name)
}

pub fn read_pools(dir: &Path) -> Result<Pools> {
    let classes = classes_from_kv(&fs::read_to_string(dir.join("pool.cfg")).with_context(|| format!("{} is not a synth directory", dir.display()))?)?;
    let (dictionary, _) = io::read_dictionary(dir.join("dictionary").join("manifest.csv"))?;
    let cameras: Vec<String> = fs::read_to_string(dir.join("train").join("cameras.csv"))?
        .lines()
        .skip(1)
        .filter_map(|l| l.split_once(',').map(|(_, c)| c.trim().to_string()))
        .collect();
    let names = dictionary.names().into_iter().map(str::to_string).collect::<Vec<_>>();

    let mut train = Vec::new();
    for (i, path) in listing(&dir.join("train"), ".rgb.hsc")?.into_iter().enumerate() {
        let camera = cameras.get(i).and_then(|c| names.iter().position(|n| n == c)).unwrap_or(0);
        train.push(RgbSample {
            rgb: io::read_rgb(&path)?,
            labels: io::read_pgm(sibling(&path, ".rgb.hsc", ".labels.pgm"), classes)?,
            camera,
        });
    }
    let real = listing(&dir.join("real"), ".hs.hsc")?
        .iter()
        .map(io::read_hs)
        .collect::<hsrecon::Result<Vec<_>>>()?;
    let mut test = Vec::new();
    for path in listing(&dir.join("test"), ".rgb.hsc")? {
        test.push(TestSample {
            rgb: io::read_rgb(&path)?,
            hs: io::read_hs(sibling(&path, ".rgb.hsc", ".hs.hsc"))?,
            labels: io::read_pgm(sibling(&path, ".rgb.hsc", ".labels.pgm"), classes)?,
        });
    }
    if train.is_empty() || real.is_empty() {
        bail!("{} holds no training images or no real cubes", dir.display());
    }
    Ok(Pools {
        dictionary,
        palette: Vec::new(),
        train,
        real,
        test,
    })
}
