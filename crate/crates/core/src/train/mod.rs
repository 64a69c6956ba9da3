//! Alternating training of the response head, generator, discriminator and
//! semantic head on unpaired RGB and spectral pools.

pub mod baseline;
pub mod config;
pub mod losses;
pub mod optim;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adversarial::{
    adversarial_term, clip_threshold, discriminator_loss, install_clip_hook, Discriminator, DiscriminatorConfig,
};
use crate::error::{Error, Result};
use crate::generator::{GeneratorConfig, GeneratorNet};
use crate::io::{Checkpoint, NamedTensor};
use crate::metrics::{assim, psnr, sam};
use crate::nn::{Conv2d, Init, Module, Param};
use crate::semantic::{class_softmax, predict_semantics, semantic_loss, LabelMap, SemanticConfig, SemanticNet};
use crate::spectral::{HsImage, RgbImage, Srf};
use crate::srf::{estimate_srf, SrfDictionary, WeightHead};
use crate::synth::{derive_seed, Pools, RgbSample, TestSample};
use crate::tensor::Tensor;

pub use config::{LossToggles, LossWeights, TrainConfig};
use losses::{generator_loss, s_bp, s_pos, s_smooth, LossParts};
use optim::{Adam, AdamConfig, SgdConfig, SgdPoly};

const STREAM_INIT: u64 = 0x1A17;
const STREAM_SAMPLER: u64 = 0x5A3B;
const STREAM_PRETRAIN: u64 = 0x9E71;
/// Checkpoints carry the dictionary so inference needs no other file.
const DICT_PREFIX: &str = "dictionary.";

/// Every network in the pipeline. Parameter names are unique across models.
#[derive(Debug, Clone)]
pub struct Models {
    pub head: WeightHead,
    pub generator: GeneratorNet,
    pub disc: Discriminator,
    pub semantic: SemanticNet,
}

impl Models {
    /// Builds all networks from one seeded stream in a fixed order, so
    /// configurations differing only in loss toggles share initial weights.
    /// The RGB encoder starts frozen.
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_INIT, 0));
        let head = WeightHead::new(cfg.atoms, cfg.head_width, true, &mut rng)?;
        let generator = GeneratorNet::new(
            GeneratorConfig {
                bands: cfg.bands,
                width: cfg.gen_width,
                stages: cfg.stages,
                final_slope: cfg.final_slope,
                init_gain: cfg.gen_init_gain,
                init_level: cfg.gen_init_level,
            },
            &mut rng,
        )?;
        let disc = Discriminator::new(
            DiscriminatorConfig {
                bands: cfg.bands,
                widths: cfg.disc_widths,
            },
            &mut rng,
        )?;
        let mut semantic = SemanticNet::new(
            SemanticConfig {
                bands: cfg.bands,
                classes: cfg.classes,
                rgb_width: cfg.sem_rgb_width,
                hs_width: cfg.sem_hs_width,
                fuse_width: cfg.sem_fuse_width,
            },
            &mut rng,
        )?;
        semantic.set_rgb_encoder_trainable(false);
        Ok(Models {
            head,
            generator,
            disc,
            semantic,
        })
    }
}

impl Module for Models {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.head.params();
        p.extend(self.generator.params());
        p.extend(self.disc.params());
        p.extend(self.semantic.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.head.params_mut();
        p.extend(self.generator.params_mut());
        p.extend(self.disc.params_mut());
        p.extend(self.semantic.params_mut());
        p
    }
}

/// Scalars logged after every step. Terms that were not computed are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub loss_d: Option<f64>,
    pub loss_g: f64,
    pub s_bp: f64,
    pub s_smooth: f64,
    pub s_pos: f64,
    pub s_sem: Option<f64>,
    pub adversarial: Option<f64>,
    /// Mean per-image Frobenius norm of the adversarial gradient at `Ỹ`
    /// before the batch weight, after clipping when clipping is on.
    pub adv_grad_norm: Option<f64>,
    pub adv_grad_norm_raw: Option<f64>,
    pub lr_srf: f64,
    pub lr_gen: f64,
    pub lr_disc: f64,
    pub lr_sem: f64,
}

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl StepReport {
    pub const CSV_HEADER: &'static str =
        "step,loss_d,loss_g,s_bp,s_1,s_pos,s_sem,adversarial,clipped_grad_norm,lr_srf,lr_gen,lr_disc,lr_sem";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:e},{:e},{:e},{:e},{},{},{},{:e},{:e},{:e},{:e}",
            self.step,
            opt_field(self.loss_d),
            self.loss_g,
            self.s_bp,
            self.s_smooth,
            self.s_pos,
            opt_field(self.s_sem),
            opt_field(self.adversarial),
            opt_field(self.adv_grad_norm),
            self.lr_srf,
            self.lr_gen,
            self.lr_disc,
            self.lr_sem
        )
    }
}

/// Mean quality of reconstructions over a test pool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualitySummary {
    pub psnr: f64,
    pub assim: f64,
    pub sam: f64,
}

impl QualitySummary {
    /// Scores predictions against ground truth pairwise and averages.
    pub fn score(pairs: &[(HsImage, &HsImage)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::invalid("nothing to evaluate"));
        }
        let n = pairs.len() as f64;
        let mut out = QualitySummary {
            psnr: 0.0,
            assim: 0.0,
            sam: 0.0,
        };
        for (pred, truth) in pairs {
            out.psnr += psnr(pred, truth, 1.0)? / n;
            out.assim += assim(pred, truth)? / n;
            out.sam += sam(pred, truth)? / n;
        }
        Ok(out)
    }
}

fn check_finite(step: usize, what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteLoss {
            step,
            what: what.to_string(),
        })
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub struct Trainer {
    pub config: TrainConfig,
    pub dictionary: SrfDictionary,
    pub models: Models,
    opt_head: Adam,
    opt_gen: Adam,
    opt_disc: Adam,
    opt_sem: SgdPoly,
    step: usize,
    sampler: ChaCha8Rng,
}

impl Trainer {
    pub fn new(config: TrainConfig, dictionary: SrfDictionary) -> Result<Self> {
        let models = Models::new(&config)?;
        Self::with_models(config, dictionary, models)
    }

    pub fn with_models(config: TrainConfig, dictionary: SrfDictionary, models: Models) -> Result<Self> {
        if dictionary.len() != config.atoms || dictionary.bands() != config.bands {
            return Err(Error::invalid(format!(
                "config expects {} atoms over {} bands, dictionary has {} over {}",
                config.atoms,
                config.bands,
                dictionary.len(),
                dictionary.bands()
            )));
        }
        let adam = |lr| {
            Adam::new(AdamConfig {
                lr,
                beta1: config.adam_beta1,
                beta2: config.adam_beta2,
                eps: config.adam_eps,
            })
        };
        let opt_sem = SgdPoly::new(SgdConfig {
            base_lr: config.sem_lr,
            momentum: config.sem_momentum,
            weight_decay: config.sem_weight_decay,
            power: config.sem_poly_power,
            max_steps: config.iterations(),
        });
        Ok(Trainer {
            opt_head: adam(config.lr_srf),
            opt_gen: adam(config.lr_gen),
            opt_disc: adam(config.lr_disc),
            opt_sem,
            step: 0,
            sampler: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_SAMPLER, 0)),
            config,
            dictionary,
            models,
        })
    }

    /// Config as metadata, every network parameter, and the dictionary atoms.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_params(self.config.to_kv_string(), self.models.params());
        ck.tensors.extend(self.dictionary.atoms().iter().map(|a| NamedTensor {
            name: format!("{DICT_PREFIX}{}", a.name()),
            shape: vec![3, a.bands()],
            data: a.matrix().to_vec(),
        }));
        ck
    }

    /// Rebuilds a trainer from [`Self::checkpoint`]; optimiser state starts fresh.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = TrainConfig::from_kv(&ck.metadata, std::path::Path::new("<checkpoint metadata>"))?;
        let atoms = ck
            .tensors
            .iter()
            .filter_map(|t| t.name.strip_prefix(DICT_PREFIX).map(|n| Srf::new(n, t.data.len() / 3, t.data.clone())))
            .collect::<Result<Vec<_>>>()?;
        let mut models = Models::new(&config)?;
        ck.load_into(models.params_mut())?;
        Self::with_models(config, SrfDictionary::new(atoms)?, models)
    }

    /// Steps taken so far.
    pub fn steps(&self) -> usize {
        self.step
    }

    /// Supervised pretraining of the RGB encoder on labelled RGB images
    /// through a temporary pointwise classifier; the encoder is frozen
    /// afterwards. Returns the loss of every step.
    pub fn pretrain_rgb_encoder(&mut self, samples: &[RgbSample]) -> Result<Vec<f64>> {
        if samples.is_empty() {
            return Err(Error::invalid("no labelled RGB images to pretrain on"));
        }
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_PRETRAIN, 0));
        let mut classifier = Conv2d::new("pretrain.classify", cfg.sem_rgb_width, cfg.classes, 1, 1, Init::HeUniform { slope: 1.0 }, &mut rng)?;
        let encoder = &mut self.models.semantic.rgb_encoder;
        encoder.set_trainable(true);
        let mut opt_enc = Adam::new(AdamConfig::with_lr(cfg.e1_pretrain_lr));
        let mut opt_cls = Adam::new(AdamConfig::with_lr(cfg.e1_pretrain_lr));
        let mut losses = Vec::with_capacity(cfg.e1_pretrain_steps);
        let w = 1.0 / cfg.batch as f64;
        for step in 0..cfg.e1_pretrain_steps {
            encoder.zero_grad();
            classifier.zero_grad();
            let mut total: Option<Tensor> = None;
            for _ in 0..cfg.batch {
                let s = &samples[rng.random_range(0..samples.len())];
                let logits = classifier.forward(&encoder.forward(&s.rgb.to_tensor())?)?;
                let term = semantic_loss(&class_softmax(&logits)?, &s.labels)?.scale(w);
                total = Some(match total {
                    Some(t) => t.add(&term)?,
                    None => term,
                });
            }
            let total = total.expect("batch is positive");
            losses.push(check_finite(step, "pretraining loss", total.item())?);
            total.backward()?;
            opt_enc.step(encoder.params_mut())?;
            opt_cls.step(classifier.params_mut())?;
        }
        encoder.set_trainable(false);
        Ok(losses)
    }

    /// One discriminator update followed by one generator-side update.
    ///
    /// The adversarial and semantic terms are differentiated in their own
    /// passes down to a detached copy of each generated cube, where a hook
    /// clips the incoming gradient per image; the clipped gradients are then
    /// pushed through the generator together with the unclipped
    /// reconstruction terms in a single pass.
    pub fn train_step(&mut self, rgb: &[(&RgbImage, &LabelMap)], real: &[&HsImage]) -> Result<StepReport> {
        if rgb.is_empty() || real.is_empty() {
            return Err(Error::invalid("training batch needs RGB images and real cubes"));
        }
        let step = self.step + 1;
        let cfg = self.config.clone();
        let t = cfg.toggles;
        let w = 1.0 / rgb.len() as f64;
        let m = &mut self.models;

        let mut xs = Vec::with_capacity(rgb.len());
        let mut srfs = Vec::with_capacity(rgb.len());
        let mut fakes = Vec::with_capacity(rgb.len());
        for (x, _) in rgb {
            let xt = x.to_tensor();
            let est = estimate_srf(&xt, &m.head, &self.dictionary)?;
            let trace = m.generator.forward(&xt, &est.srf)?;
            xs.push(xt);
            srfs.push(est.srf);
            fakes.push(trace.output);
        }

        let lr_sem = self.opt_sem.current_lr();

        // discriminator
        let mut loss_d = None;
        if t.adversarial {
            m.disc.zero_grad();
            let mut total: Option<Tensor> = None;
            for (i, fake) in fakes.iter().enumerate() {
                let term = discriminator_loss(fake, &real[i % real.len()].to_tensor(), &m.disc)?.scale(w);
                total = Some(match total {
                    Some(acc) => acc.add(&term)?,
                    None => term,
                });
            }
            let total = total.expect("batch is non-empty");
            loss_d = Some(check_finite(step, "discriminator loss", total.item())?);
            total.backward()?;
            self.opt_disc.step(m.disc.params_mut())?;
        }

        // generator side
        m.head.zero_grad();
        m.generator.zero_grad();
        m.semantic.zero_grad();
        let (mut bp, mut smooth, mut pos) = (Vec::new(), Vec::new(), Vec::new());
        let (mut adv, mut sem) = (Vec::new(), Vec::new());
        let (mut adv_norm, mut adv_norm_raw) = (Vec::new(), Vec::new());
        let recon_toggles = LossToggles {
            adversarial: false,
            sem: false,
            ..t
        };
        let mut objective: Option<Tensor> = None;
        for (i, y) in fakes.iter().enumerate() {
            let parts = LossParts {
                bp: Some(s_bp(&srfs[i], y, &xs[i])?),
                smooth: Some(s_smooth(y)?),
                pos: Some(s_pos(y)?),
                ..Default::default()
            };
            bp.push(parts.bp.as_ref().unwrap().item());
            smooth.push(parts.smooth.as_ref().unwrap().item());
            pos.push(parts.pos.as_ref().unwrap().item());
            let mut term = generator_loss(&parts, &cfg.weights, &recon_toggles)?.scale(w);

            let branch = y.detach().with_requires_grad(true);
            let tau = clip_threshold(y.shape());
            if t.adversarial {
                let a = adversarial_term(&branch, &m.disc)?;
                adv.push(a.item());
                let record = t.clip.then(|| install_clip_hook(&branch, tau * w));
                a.scale(w).backward()?;
                branch.clear_gradient_hook();
                let g = branch.grad().expect("adversarial pass reaches the cube");
                let after = g.iter().map(|v| v * v).sum::<f64>().sqrt() / w;
                adv_norm.push(after);
                adv_norm_raw.push(record.map_or(after, |r| r.before.get() / w));
            }
            if t.sem {
                let labels = rgb[i].1;
                let p = predict_semantics(&xs[i], &branch, &m.semantic)?;
                let s = semantic_loss(&p, labels)?;
                sem.push(s.item());
                if t.clip {
                    install_clip_hook(&branch, tau * w * cfg.weights.sem);
                }
                s.scale(w * cfg.weights.sem).backward()?;
                branch.clear_gradient_hook();
            }
            if let Some(g) = branch.grad() {
                term = term.add(&y.mul(&Tensor::new(g, y.shape())?)?.sum())?;
            }
            objective = Some(match objective {
                Some(acc) => acc.add(&term)?,
                None => term,
            });
        }

        let loss_g = w
            * (bp.iter().map(|v| if t.bp { cfg.weights.bp * v } else { 0.0 }).sum::<f64>()
                + smooth.iter().map(|v| if t.smooth { cfg.weights.smooth * v } else { 0.0 }).sum::<f64>()
                + pos.iter().map(|v| if t.pos { cfg.weights.pos * v } else { 0.0 }).sum::<f64>()
                + adv.iter().sum::<f64>()
                + cfg.weights.sem * sem.iter().sum::<f64>());
        check_finite(step, "generator loss", loss_g)?;
        for (name, v) in [("S_bp", &bp), ("S_1", &smooth), ("S_pos", &pos), ("adversarial term", &adv), ("S_sem", &sem)] {
            for &x in v.iter() {
                check_finite(step, name, x)?;
            }
        }

        objective.expect("batch is non-empty").backward()?;
        self.opt_head.step(m.head.params_mut())?;
        self.opt_gen.step(m.generator.params_mut())?;
        if t.sem {
            self.opt_sem.step(m.semantic.params_mut())?;
        }
        // the generator pass leaves gradients on D; they are never applied
        m.disc.zero_grad();

        self.step = step;
        let opt_mean = |v: &[f64]| (!v.is_empty()).then(|| mean(v));
        Ok(StepReport {
            step,
            loss_d,
            loss_g,
            s_bp: mean(&bp),
            s_smooth: mean(&smooth),
            s_pos: mean(&pos),
            s_sem: opt_mean(&sem),
            adversarial: opt_mean(&adv),
            adv_grad_norm: opt_mean(&adv_norm),
            adv_grad_norm_raw: opt_mean(&adv_norm_raw),
            lr_srf: self.opt_head.config.lr,
            lr_gen: self.opt_gen.config.lr,
            lr_disc: self.opt_disc.config.lr,
            lr_sem,
        })
    }

    /// Draws a batch from both pools, independently and with replacement.
    pub fn sample_batch(&mut self, train: usize, real: usize) -> (Vec<usize>, Vec<usize>) {
        let b = self.config.batch;
        let a: Vec<usize> = (0..b).map(|_| self.sampler.random_range(0..train)).collect();
        let r: Vec<usize> = (0..b).map(|_| self.sampler.random_range(0..real)).collect();
        (a, r)
    }

    /// Pretrains the RGB encoder when the semantic term is on, then runs
    /// the configured number of steps, handing each report to `on_step`.
    pub fn fit(&mut self, pools: &Pools, on_step: impl FnMut(&StepReport)) -> Result<Vec<StepReport>> {
        self.fit_until(pools, self.config.iterations(), on_step)
    }

    /// Like [`Self::fit`] but stops once `until` steps have been taken, so a
    /// run can be split at epoch boundaries without changing its result.
    pub fn fit_until(&mut self, pools: &Pools, until: usize, mut on_step: impl FnMut(&StepReport)) -> Result<Vec<StepReport>> {
        if pools.train.is_empty() || pools.real.is_empty() {
            return Err(Error::invalid("training pools are empty"));
        }
        if self.config.toggles.sem && self.config.e1_pretrain_steps > 0 && self.step == 0 {
            self.pretrain_rgb_encoder(&pools.train)?;
        }
        let until = until.min(self.config.iterations());
        let mut reports = Vec::with_capacity(until.saturating_sub(self.step));
        while self.step < until {
            let (ai, ri) = self.sample_batch(pools.train.len(), pools.real.len());
            let rgb: Vec<(&RgbImage, &LabelMap)> = ai.iter().map(|&i| (&pools.train[i].rgb, &pools.train[i].labels)).collect();
            let real: Vec<&HsImage> = ri.iter().map(|&i| &pools.real[i]).collect();
            let report = self.train_step(&rgb, &real)?;
            on_step(&report);
            reports.push(report);
        }
        Ok(reports)
    }

    /// The response the head currently assigns to `x`.
    pub fn estimate_srf(&self, x: &RgbImage) -> Result<Srf> {
        let est = estimate_srf(&x.to_tensor(), &self.models.head, &self.dictionary)?;
        Srf::from_tensor("estimated", &est.srf)
    }

    /// Full reconstruction using the estimated response.
    pub fn reconstruct(&self, x: &RgbImage) -> Result<HsImage> {
        let xt = x.to_tensor();
        let est = estimate_srf(&xt, &self.models.head, &self.dictionary)?;
        HsImage::from_tensor(&self.models.generator.forward(&xt, &est.srf)?.output)
    }

    pub fn evaluate(&self, test: &[TestSample]) -> Result<QualitySummary> {
        let pairs = test
            .iter()
            .map(|t| Ok((self.reconstruct(&t.rgb)?, &t.hs)))
            .collect::<Result<Vec<_>>>()?;
        QualitySummary::score(&pairs)
    }
}

/// Scores of the spectral bicubic baseline on a test pool.
pub fn evaluate_bicubic(test: &[TestSample]) -> Result<QualitySummary> {
    let pairs = test
        .iter()
        .map(|t| Ok((baseline::spectral_bicubic(&t.rgb, t.hs.bands())?, &t.hs)))
        .collect::<Result<Vec<_>>>()?;
    QualitySummary::score(&pairs)
}
