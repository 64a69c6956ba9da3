mod dataset;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hsrecon::io::{self, Checkpoint};
use hsrecon::metrics::{assim, psnr, sam};
use hsrecon::spectral::default_wavelengths;
use hsrecon::srf::{estimate_srf_for_image, fit_srf_oracle, OracleOptions, SrfDictionary};
use hsrecon::synth::PoolSpec;
use hsrecon::train::{evaluate_bicubic, LossToggles, QualitySummary, StepReport, TrainConfig, Trainer};

#[derive(Parser)]
#[command(name = "hsrecon", version, about = "Unsupervised hyperspectral reconstruction from RGB")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate unpaired RGB, spectral and test pools from synthetic scenes.
    Synth(SynthArgs),
    /// Estimate a camera response for one RGB image.
    EstimateSrf(EstimateArgs),
    /// Train every network from a config file.
    Train(TrainArgs),
    /// Reconstruct a spectral cube from an RGB image and a checkpoint.
    Reconstruct(ReconstructArgs),
    /// Score predicted cubes against ground truth.
    Evaluate(EvaluateArgs),
    /// Train each row of the loss-toggle grid and compare held-out scores.
    Ablate(AblateArgs),
    /// Print the default training config.
    DefaultConfig,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 6)]
    classes: usize,
    #[arg(long, default_value_t = 8)]
    regions: usize,
    #[arg(long, default_value_t = 0.1)]
    jitter: f64,
    #[arg(long, default_value_t = 28)]
    atoms: usize,
    #[arg(long = "train", default_value_t = 64)]
    train_rgb: usize,
    #[arg(long = "real", default_value_t = 64)]
    real_hs: usize,
    #[arg(long, default_value_t = 8)]
    test: usize,
    #[arg(long, default_value_t = 0)]
    test_camera: usize,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Also write 8-bit PPM previews of the RGB images.
    #[arg(long)]
    ppm: bool,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    rgb: PathBuf,
    /// SRF CSV to write; the weight report goes next to it as `<stem>.weights.csv`.
    #[arg(long)]
    out: PathBuf,
    /// Learned head to run.
    #[arg(long, conflicts_with = "oracle", required_unless_present = "oracle")]
    checkpoint: Option<PathBuf>,
    /// Fit simplex weights against a known cube instead.
    #[arg(long, requires_all = ["hs", "dictionary"])]
    oracle: bool,
    #[arg(long)]
    hs: Option<PathBuf>,
    /// Dictionary manifest for the oracle.
    #[arg(long)]
    dictionary: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// key=value config; missing keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory written by `synth`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Extra key=value overrides applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    rgb: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predicted cube; repeat once per pair.
    #[arg(long, required = true)]
    pred: Vec<PathBuf>,
    /// Ground-truth cube; one per --pred, in the same order.
    #[arg(long, required = true)]
    truth: Vec<PathBuf>,
    /// Also write the table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated rows of the cumulative toggle grid (0 = adversarial only, 5 = everything).
    #[arg(long, default_value = "0,1,2,3,4,5", value_delimiter = ',')]
    rows: Vec<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::EstimateSrf(a) => estimate(a),
        Command::Train(a) => train(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Ablate(a) => ablate(a),
        Command::DefaultConfig => {
            print!("{}", TrainConfig::default().to_kv_string());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = PoolSpec {
        seed: a.seed,
        size: a.size,
        classes: a.classes,
        regions: a.regions,
        jitter: a.jitter,
        atoms: a.atoms,
        train_rgb: a.train_rgb,
        real_hs: a.real_hs,
        test: a.test,
        test_camera: a.test_camera,
        noise_sigma: a.noise,
    };
    let pools = spec.build()?;
    dataset::write_pools(&a.out, &spec, &pools, a.ppm)?;
    println!(
        "wrote {} training images, {} real cubes, {} test pairs and {} cameras to {}",
        pools.train.len(),
        pools.real.len(),
        pools.test.len(),
        pools.dictionary.len(),
        a.out.display()
    );
    Ok(())
}

fn weight_report(dict: &SrfDictionary, weights: &[Vec<f64>; 3]) -> String {
    let mut s = String::from("camera,w_R,w_G,w_B\n");
    for (j, name) in dict.names().iter().enumerate() {
        writeln!(s, "{name},{},{},{}", weights[0][j], weights[1][j], weights[2][j]).unwrap();
    }
    s
}

fn top_atoms(dict: &SrfDictionary, weights: &[Vec<f64>; 3]) -> String {
    ["R", "G", "B"]
        .iter()
        .zip(weights)
        .map(|(c, w)| {
            let j = (0..w.len()).fold(0, |b, i| if w[i] > w[b] { i } else { b });
            format!("{c}: {} ({:.3})", dict.atom(j).name(), w[j])
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let x = io::read_rgb(&a.rgb)?;
    let (srf, dict, weights) = if a.oracle {
        let (dict, _) = io::read_dictionary(a.dictionary.as_ref().unwrap())?;
        let y = io::read_hs(a.hs.as_ref().unwrap())?;
        let fit = fit_srf_oracle(&x, &y, &dict, &OracleOptions::default())?;
        (fit.srf, dict, fit.weights)
    } else {
        let trainer = Trainer::from_checkpoint(&Checkpoint::read(a.checkpoint.as_ref().unwrap())?)?;
        let (srf, flat) = estimate_srf_for_image(&x, &trainer.models.head, &trainer.dictionary)?;
        let n = trainer.dictionary.len();
        let weights = [0, 1, 2].map(|c| flat[c * n..(c + 1) * n].to_vec());
        (srf, trainer.dictionary, weights)
    };
    let wl = if srf.bands() == default_wavelengths().len() {
        default_wavelengths()
    } else {
        (0..srf.bands()).map(|i| i as f64).collect()
    };
    io::write_srf_csv(&a.out, &srf, &wl)?;
    let report = a.out.with_file_name(format!(
        "{}.weights.csv",
        a.out.file_stem().unwrap_or_default().to_string_lossy()
    ));
    fs::write(&report, weight_report(&dict, &weights)).with_context(|| format!("writing {}", report.display()))?;
    println!("dominant atoms: {}", top_atoms(&dict, &weights));
    Ok(())
}

fn load_config(run: &RunArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &run.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.apply_kv(&text, path)?;
    }
    cfg.apply_kv(&run.overrides.join("\n"), Path::new("--set"))?;
    Ok(cfg)
}

fn summary_line(label: &str, q: &QualitySummary) -> String {
    format!("{label:<28} {:>9.4} {:>8.4} {:>8.4}", q.psnr, q.assim, q.sam)
}

const SUMMARY_HEADER: &str = "                               PSNR(dB)    ASSIM  SAM(deg)";

/// Trains one configuration, writing its log and checkpoints under `out`.
fn run_training(cfg: TrainConfig, pools: &hsrecon::synth::Pools, out: &Path, log_name: &str) -> Result<Trainer> {
    fs::create_dir_all(out)?;
    fs::write(out.join(format!("{log_name}.cfg")), cfg.to_kv_string())?;
    let mut log = format!("{}\n", StepReport::CSV_HEADER);
    let mut trainer = Trainer::new(cfg, pools.dictionary.clone())?;
    let per_epoch = trainer.config.iters_per_epoch;
    for epoch in 1..=trainer.config.epochs {
        trainer.fit_until(pools, epoch * per_epoch, |r| {
            log.push_str(&r.csv_line());
            log.push('\n');
        })?;
        trainer.checkpoint().write(out.join(format!("{log_name}_epoch{epoch:03}.hsck")))?;
        eprintln!("{log_name}: epoch {epoch}/{} done (step {})", trainer.config.epochs, trainer.steps());
    }
    fs::write(out.join(format!("{log_name}_log.csv")), log)?;
    trainer.checkpoint().write(out.join(format!("{log_name}.hsck")))?;
    Ok(trainer)
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = load_config(&a.run)?;
    let pools = dataset::read_pools(&a.run.data)?;
    let trainer = run_training(cfg, &pools, &a.run.out, "train")?;
    if !pools.test.is_empty() {
        let q = trainer.evaluate(&pools.test)?;
        let b = evaluate_bicubic(&pools.test)?;
        println!("{SUMMARY_HEADER}");
        println!("{}", summary_line("trained", &q));
        println!("{}", summary_line("spectral bicubic", &b));
    }
    Ok(())
}

fn reconstruct(a: ReconstructArgs) -> Result<()> {
    let trainer = Trainer::from_checkpoint(&Checkpoint::read(&a.checkpoint)?)?;
    let y = trainer.reconstruct(&io::read_rgb(&a.rgb)?)?;
    io::write_hs(&a.out, &y)?;
    println!("wrote {}×{}×{} cube to {}", y.bands(), y.height(), y.width(), a.out.display());
    Ok(())
}

struct Scores {
    psnr: f64,
    assim: f64,
    sam: f64,
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    if a.pred.len() != a.truth.len() {
        bail!("{} --pred paths but {} --truth paths", a.pred.len(), a.truth.len());
    }
    let mut rows = Vec::new();
    for (p, t) in a.pred.iter().zip(&a.truth) {
        let (yp, yt) = (io::read_hs(p)?, io::read_hs(t)?);
        rows.push(Scores {
            psnr: psnr(&yp, &yt, 1.0).with_context(|| format!("{} vs {}", p.display(), t.display()))?,
            assim: assim(&yp, &yt)?,
            sam: sam(&yp, &yt)?,
        });
    }
    let n = rows.len() as f64;
    let mean = Scores {
        psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        assim: rows.iter().map(|r| r.assim).sum::<f64>() / n,
        sam: rows.iter().map(|r| r.sam).sum::<f64>() / n,
    };
    println!("{:<40} {:>9} {:>8} {:>8}", "pair", "PSNR(dB)", "ASSIM", "SAM(deg)");
    for (r, p) in rows.iter().zip(&a.pred) {
        println!("{:<40} {:>9.4} {:>8.4} {:>8.4}", p.display().to_string(), r.psnr, r.assim, r.sam);
    }
    println!("{:<40} {:>9.4} {:>8.4} {:>8.4}", "mean", mean.psnr, mean.assim, mean.sam);
    if let Some(path) = a.csv {
        let mut s = String::from("pred,truth,psnr_db,assim,sam_deg\n");
        for ((r, p), t) in rows.iter().zip(&a.pred).zip(&a.truth) {
            writeln!(s, "{},{},{},{},{}", p.display(), t.display(), r.psnr, r.assim, r.sam).unwrap();
        }
        writeln!(s, "mean,,{},{},{}", mean.psnr, mean.assim, mean.sam).unwrap();
        fs::write(&path, s).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let base = load_config(&a.run)?;
    let pools = dataset::read_pools(&a.run.data)?;
    if pools.test.is_empty() {
        bail!("{} has no test pairs to score", a.run.data.display());
    }
    let grid = LossToggles::ablation_rows();
    let mut table = vec![("spectral bicubic".to_string(), evaluate_bicubic(&pools.test)?)];
    for &row in &a.rows {
        let Some(toggles) = grid.get(row) else {
            bail!("row {row} is outside the {}-row grid", grid.len());
        };
        let cfg = TrainConfig {
            toggles: *toggles,
            ..base.clone()
        };
        let trainer = run_training(cfg, &pools, &a.run.out, &format!("row{row}"))?;
        table.push((toggles.label(), trainer.evaluate(&pools.test)?));
    }
    let mut csv = String::from("config,psnr_db,assim,sam_deg\n");
    println!("{SUMMARY_HEADER}");
    for (label, q) in &table {
        println!("{}", summary_line(label, q));
        writeln!(csv, "{label},{},{},{}", q.psnr, q.assim, q.sam).unwrap();
    }
    fs::write(a.run.out.join("ablation.csv"), csv)?;
    Ok(())
}
