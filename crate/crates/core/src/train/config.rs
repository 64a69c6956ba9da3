//! Training hyperparameters and their flat `key=value` text form.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub bp: f64,
    pub smooth: f64,
    pub pos: f64,
    pub sem: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            bp: 1e2,
            smooth: 1e1,
            pos: 1e-2,
            sem: 1e0,
        }
    }
}

/// Which parts of the generator objective are active, plus gradient clipping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossToggles {
    pub adversarial: bool,
    pub bp: bool,
    pub pos: bool,
    pub smooth: bool,
    pub clip: bool,
    pub sem: bool,
}

impl LossToggles {
    pub fn all() -> Self {
        LossToggles {
            adversarial: true,
            bp: true,
            pos: true,
            smooth: true,
            clip: true,
            sem: true,
        }
    }

    /// The six cumulative rows of the ablation study, from adversarial-only
    /// to the complete model.
    pub fn ablation_rows() -> [LossToggles; 6] {
        let mut rows = [LossToggles {
            adversarial: true,
            bp: false,
            pos: false,
            smooth: false,
            clip: false,
            sem: false,
        }; 6];
        for (i, row) in rows.iter_mut().enumerate() {
            row.bp = i >= 1;
            row.pos = i >= 2;
            row.smooth = i >= 3;
            row.clip = i >= 4;
            row.sem = i >= 5;
        }
        rows
    }

    /// Compact label such as `adv+bp+pos+s1+clip+sem`.
    pub fn label(&self) -> String {
        let names = [
            (self.adversarial, "adv"),
            (self.bp, "bp"),
            (self.pos, "pos"),
            (self.smooth, "s1"),
            (self.clip, "clip"),
            (self.sem, "sem"),
        ];
        let on: Vec<&str> = names.iter().filter(|(b, _)| *b).map(|(_, n)| *n).collect();
        if on.is_empty() {
            "none".into()
        } else {
            on.join("+")
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub iters_per_epoch: usize,
    pub batch: usize,

    pub bands: usize,
    pub atoms: usize,
    pub stages: usize,
    pub gen_width: usize,
    pub final_slope: f64,
    pub gen_init_gain: f64,
    pub gen_init_level: f64,
    pub head_width: usize,
    pub disc_widths: [usize; 3],
    pub classes: usize,
    pub sem_rgb_width: usize,
    pub sem_hs_width: usize,
    pub sem_fuse_width: usize,

    pub weights: LossWeights,
    pub toggles: LossToggles,

    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub lr_srf: f64,
    pub lr_gen: f64,
    pub lr_disc: f64,
    pub sem_lr: f64,
    pub sem_momentum: f64,
    pub sem_weight_decay: f64,
    pub sem_poly_power: f64,

    /// Steps of supervised pretraining for the RGB encoder before it is frozen.
    pub e1_pretrain_steps: usize,
    pub e1_pretrain_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            epochs: 10,
            iters_per_epoch: 200,
            batch: 8,
            bands: 31,
            atoms: 28,
            stages: 4,
            gen_width: 32,
            final_slope: 0.01,
            gen_init_gain: 0.1,
            gen_init_level: 0.3,
            head_width: 16,
            disc_widths: [32, 64, 64],
            classes: 6,
            sem_rgb_width: 16,
            sem_hs_width: 32,
            sem_fuse_width: 32,
            weights: LossWeights::default(),
            toggles: LossToggles::all(),
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            lr_srf: 1e-4,
            lr_gen: 1e-4,
            lr_disc: 5e-4,
            sem_lr: 1e-3,
            sem_momentum: 0.9,
            sem_weight_decay: 1e-4,
            sem_poly_power: 0.9,
            e1_pretrain_steps: 300,
            e1_pretrain_lr: 1e-3,
        }
    }
}

fn parse_num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?}"))
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        _ => Err(format!("expected a boolean, got {v:?}")),
    }
}

impl TrainConfig {
    pub fn iterations(&self) -> usize {
        self.epochs * self.iters_per_epoch
    }

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse_num(v)?,
            "epochs" => self.epochs = parse_num(v)?,
            "iters_per_epoch" => self.iters_per_epoch = parse_num(v)?,
            "batch" => self.batch = parse_num(v)?,
            "bands" => self.bands = parse_num(v)?,
            "atoms" => self.atoms = parse_num(v)?,
            "stages" => self.stages = parse_num(v)?,
            "gen_width" => self.gen_width = parse_num(v)?,
            "final_slope" => self.final_slope = parse_num(v)?,
            "gen_init_gain" => self.gen_init_gain = parse_num(v)?,
            "gen_init_level" => self.gen_init_level = parse_num(v)?,
            "head_width" => self.head_width = parse_num(v)?,
            "disc_widths" => {
                let parts: Vec<usize> = v.split(',').map(|p| parse_num(p.trim())).collect::<std::result::Result<_, _>>()?;
                self.disc_widths = parts
                    .try_into()
                    .map_err(|_| "disc_widths needs exactly three values".to_string())?;
            }
            "classes" => self.classes = parse_num(v)?,
            "sem_rgb_width" => self.sem_rgb_width = parse_num(v)?,
            "sem_hs_width" => self.sem_hs_width = parse_num(v)?,
            "sem_fuse_width" => self.sem_fuse_width = parse_num(v)?,
            "lambda_bp" => self.weights.bp = parse_num(v)?,
            "lambda_smooth" => self.weights.smooth = parse_num(v)?,
            "lambda_pos" => self.weights.pos = parse_num(v)?,
            "lambda_sem" => self.weights.sem = parse_num(v)?,
            "use_adversarial" => self.toggles.adversarial = parse_bool(v)?,
            "use_bp" => self.toggles.bp = parse_bool(v)?,
            "use_pos" => self.toggles.pos = parse_bool(v)?,
            "use_smooth" => self.toggles.smooth = parse_bool(v)?,
            "use_clip" => self.toggles.clip = parse_bool(v)?,
            "use_sem" => self.toggles.sem = parse_bool(v)?,
            "adam_beta1" => self.adam_beta1 = parse_num(v)?,
            "adam_beta2" => self.adam_beta2 = parse_num(v)?,
            "adam_eps" => self.adam_eps = parse_num(v)?,
            "lr_srf" => self.lr_srf = parse_num(v)?,
            "lr_gen" => self.lr_gen = parse_num(v)?,
            "lr_disc" => self.lr_disc = parse_num(v)?,
            "sem_lr" => self.sem_lr = parse_num(v)?,
            "sem_momentum" => self.sem_momentum = parse_num(v)?,
            "sem_weight_decay" => self.sem_weight_decay = parse_num(v)?,
            "sem_poly_power" => self.sem_poly_power = parse_num(v)?,
            "e1_pretrain_steps" => self.e1_pretrain_steps = parse_num(v)?,
            "e1_pretrain_lr" => self.e1_pretrain_lr = parse_num(v)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    /// Every field as `key=value`, one per line, in a fixed order.
    pub fn to_kv_string(&self) -> String {
        let t = &self.toggles;
        let w = &self.weights;
        let d = self.disc_widths;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        put("seed", self.seed.to_string());
        put("epochs", self.epochs.to_string());
        put("iters_per_epoch", self.iters_per_epoch.to_string());
        put("batch", self.batch.to_string());
        put("bands", self.bands.to_string());
        put("atoms", self.atoms.to_string());
        put("stages", self.stages.to_string());
        put("gen_width", self.gen_width.to_string());
        put("final_slope", format!("{:?}", self.final_slope));
        put("gen_init_gain", format!("{:?}", self.gen_init_gain));
        put("gen_init_level", format!("{:?}", self.gen_init_level));
        put("head_width", self.head_width.to_string());
        put("disc_widths", format!("{},{},{}", d[0], d[1], d[2]));
        put("classes", self.classes.to_string());
        put("sem_rgb_width", self.sem_rgb_width.to_string());
        put("sem_hs_width", self.sem_hs_width.to_string());
        put("sem_fuse_width", self.sem_fuse_width.to_string());
        put("lambda_bp", format!("{:?}", w.bp));
        put("lambda_smooth", format!("{:?}", w.smooth));
        put("lambda_pos", format!("{:?}", w.pos));
        put("lambda_sem", format!("{:?}", w.sem));
        put("use_adversarial", t.adversarial.to_string());
        put("use_bp", t.bp.to_string());
        put("use_pos", t.pos.to_string());
        put("use_smooth", t.smooth.to_string());
        put("use_clip", t.clip.to_string());
        put("use_sem", t.sem.to_string());
        put("adam_beta1", format!("{:?}", self.adam_beta1));
        put("adam_beta2", format!("{:?}", self.adam_beta2));
        put("adam_eps", format!("{:?}", self.adam_eps));
        put("lr_srf", format!("{:?}", self.lr_srf));
        put("lr_gen", format!("{:?}", self.lr_gen));
        put("lr_disc", format!("{:?}", self.lr_disc));
        put("sem_lr", format!("{:?}", self.sem_lr));
        put("sem_momentum", format!("{:?}", self.sem_momentum));
        put("sem_weight_decay", format!("{:?}", self.sem_weight_decay));
        put("sem_poly_power", format!("{:?}", self.sem_poly_power));
        put("e1_pretrain_steps", self.e1_pretrain_steps.to_string());
        put("e1_pretrain_lr", format!("{:?}", self.e1_pretrain_lr));
        s
    }

    /// Applies `key=value` lines on top of `self`. Blank lines and `#` comments are skipped.
    pub fn apply_kv(&mut self, text: &str, path: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected key=value, got {line:?}")))?;
            self.set(k, v).map_err(parse_err)?;
        }
        self.validate()
    }

    /// Defaults overridden by `text`.
    pub fn from_kv(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_kv(text, path)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        if [w.bp, w.smooth, w.pos, w.sem].iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::invalid("loss weights must be finite and non-negative"));
        }
        let lrs = [self.lr_srf, self.lr_gen, self.lr_disc, self.sem_lr, self.e1_pretrain_lr];
        if lrs.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::invalid("Adam decay rates must lie in [0, 1)"));
        }
        let sizes = [
            self.batch,
            self.bands,
            self.stages,
            self.gen_width,
            self.head_width,
            self.classes,
            self.sem_rgb_width,
            self.sem_hs_width,
            self.sem_fuse_width,
        ];
        if sizes.contains(&0) || self.disc_widths.contains(&0) {
            return Err(Error::invalid("sizes and widths must be positive"));
        }
        if self.atoms < 2 {
            return Err(Error::invalid("the dictionary needs at least two atoms"));
        }
        if self.bands < 2 {
            return Err(Error::invalid("at least two bands are needed"));
        }
        Ok(())
    }
}
