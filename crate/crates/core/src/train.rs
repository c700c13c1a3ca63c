//! Adam, plateau learning-rate schedule and the epoch loop.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rtsdoa_autograd::{Binder, Graph, ParamStore, Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::data::{Example, ExampleSource};
use crate::error::{Error, Result};
use crate::loss::{joint_loss, LossReport};
use crate::metrics::{aggregate, decode, Scored};
use crate::model::{init_params, rtsdoa_forward, ModelConfig, ModelInput};

#[derive(Debug, Clone)]
pub struct Adam<S: Real> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: ParamStore<S>,
    v: ParamStore<S>,
}

impl<S: Real> Adam<S> {
    pub fn new(params: &ParamStore<S>, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// One bias-corrected update. Nothing is modified if any gradient is
    /// non-finite; the error names the offending parameter.
    pub fn update(&mut self, params: &mut ParamStore<S>, grads: &ParamStore<S>) -> Result<()> {
        for (name, g) in grads.iter() {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (S::c(self.beta1), S::c(self.beta2));
        let (lr, eps) = (self.lr, self.eps);
        for (name, p) in params.iter_mut() {
            let g = grads.get(name)?;
            let m = self.m.get_mut(name)?;
            let v = self.v.get_mut(name)?;
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + (S::one() - b1) * g;
                *v = b2 * *v + (S::one() - b2) * g * g;
                let mhat = m.as_f64() / c1;
                let vhat = v.as_f64() / c2;
                *p -= S::c(lr * mhat / (vhat.sqrt() + eps));
            }
        }
        Ok(())
    }
}

/// Halve (by `factor`) the learning rate after `patience` epochs without a
/// new best validation loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub lr: f64,
    pub patience: usize,
    pub factor: f64,
    pub best: f64,
    pub bad_epochs: usize,
}

impl Plateau {
    pub fn new(lr: f64, patience: usize, factor: f64) -> Self {
        Plateau {
            lr,
            patience,
            factor,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Record a validation loss; returns whether it is a new best.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.bad_epochs = 0;
            return true;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            self.lr *= self.factor;
            self.bad_epochs = 0;
        }
        false
    }
}

/// Group scene indices of similar length into batches, in a random order.
pub fn make_batches(frames: &[usize], batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..frames.len()).collect();
    idx.shuffle(rng);
    idx.sort_by_key(|&i| frames[i]);
    let mut batches: Vec<Vec<usize>> = idx.chunks(batch.max(1)).map(<[usize]>::to_vec).collect();
    batches.shuffle(rng);
    batches
}

fn to_tensor<S: Real>(shape: Vec<usize>, data: &[f64]) -> Result<Tensor<S>> {
    Ok(Tensor::new(shape, data.iter().map(|&x| S::c(x)).collect())?)
}

/// Model input for a single scene, plus the enhancement target if present.
pub fn example_tensors<S: Real>(ex: &Example) -> Result<(ModelInput<S>, Option<Tensor<S>>)> {
    let m = &ex.mixture;
    let shape = vec![1, m.channels, m.frames, m.bins];
    let stack = to_tensor(shape.clone(), &m.data)?;
    let a = &ex.anchor;
    let anchor = to_tensor(vec![1, 1, a.frames, a.bins], &a.data)?;
    let target = ex.target.as_ref().map(|t| to_tensor(shape.clone(), &t.data)).transpose()?;
    Ok((ModelInput { stack, anchor }, target))
}

/// Losses and (optionally) parameter gradients for one scene.
pub fn scene_step<S: Real>(
    cfg: &ModelConfig,
    params: &ParamStore<S>,
    ex: &Example,
    trainable: bool,
) -> Result<(LossReport, Vec<f64>, Option<ParamStore<S>>)> {
    let (input, target) = example_tensors::<S>(ex)?;
    let mut g = Graph::new();
    let mut b = Binder::new(params, trainable);
    let out = rtsdoa_forward(&mut g, &mut b, cfg, &input)?;
    let target = target.map(|t| g.input(t));
    let labels: Vec<usize> = ex.labels.0.iter().map(|&c| c as usize).collect();
    let loss = joint_loss(&mut g, out.enhanced, target, out.logits, &labels)?;
    let report = loss.report(&g);
    let logits: Vec<f64> = g.value(out.logits).data().iter().map(|x| x.as_f64()).collect();
    let grads = if trainable {
        let mut gr = g.backward(loss.total)?;
        Some(b.gradients(&mut gr))
    } else {
        None
    };
    Ok((report, logits, grads))
}

/// Mean loss and gradient over a batch, truncated to its shortest member.
/// Scenes run in parallel; gradients are summed in batch order.
pub fn batch_gradients<S: Real>(
    cfg: &ModelConfig,
    params: &ParamStore<S>,
    batch: &[Example],
) -> Result<(LossReport, ParamStore<S>)> {
    let frames = batch.iter().map(Example::frames).min().unwrap_or(0);
    let results: Vec<(LossReport, ParamStore<S>)> = batch
        .par_iter()
        .map(|ex| {
            let ex = ex.truncate(frames);
            let (r, _, g) = scene_step(cfg, params, &ex, true)?;
            Ok((r, g.expect("trainable step yields gradients")))
        })
        .collect::<Result<_>>()?;
    let mut total = params.zeros_like();
    let n = results.len().max(1);
    let inv = S::c(1.0 / n as f64);
    let mut reports = Vec::with_capacity(n);
    for (r, g) in results {
        reports.push(r);
        for (name, t) in total.iter_mut() {
            t.add_assign(g.get(name)?);
        }
    }
    for (_, t) in total.iter_mut() {
        t.data_mut().iter_mut().for_each(|x| *x *= inv);
    }
    Ok((LossReport::mean(&reports), total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub train: LossReport,
    pub dev: LossReport,
    pub dev_ar: f64,
    pub dev_vde: f64,
    pub improved: bool,
    pub seconds: f64,
}

/// Path of the JSON config stored next to a checkpoint.
pub fn sidecar_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".config.json");
    PathBuf::from(s)
}

pub fn save_checkpoint<S: Real>(path: &Path, cfg: &Config, params: &ParamStore<S>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    params.save(path)?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(cfg)?)?;
    Ok(())
}

/// Load a checkpoint and its config, verifying they describe the same network.
pub fn load_checkpoint<S: Real>(path: &Path) -> Result<(Config, ParamStore<S>)> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side)
        .map_err(|e| Error::CheckpointMismatch(format!("{}: {e}", side.display())))?;
    let cfg: Config = serde_json::from_str(&text)?;
    let params = ParamStore::load(path)?;
    crate::model::check_compatible(&cfg.model, &params)?;
    Ok((cfg, params))
}

/// Dev-set losses and metrics without gradient tracking.
pub fn validate<S: Real>(
    cfg: &ModelConfig,
    params: &ParamStore<S>,
    source: &ExampleSource,
    pooled: bool,
) -> Result<(LossReport, f64, f64)> {
    let out: Vec<(LossReport, Scored)> = (0..source.len())
        .into_par_iter()
        .map(|i| {
            let ex = source.get(i, cfg.use_enhancement)?;
            let (r, logits, _) = scene_step(cfg, params, &ex, false)?;
            let pred = decode(&logits, cfg.classes);
            Ok((
                r,
                Scored {
                    sir_db: ex.sir_db,
                    pred,
                    truth: ex.labels,
                },
            ))
        })
        .collect::<Result<_>>()?;
    let (reports, scored): (Vec<_>, Vec<_>) = out.into_iter().unzip();
    let metrics = aggregate(&scored, pooled)?;
    Ok((LossReport::mean(&reports), metrics.ar, metrics.vde))
}

pub struct Trainer<S: Real> {
    pub cfg: Config,
    pub params: ParamStore<S>,
    pub best: Option<ParamStore<S>>,
    pub adam: Adam<S>,
    pub schedule: Plateau,
    pub train: ExampleSource,
    pub dev: ExampleSource,
    pub epoch: usize,
    pub history: Vec<EpochLog>,
    pub checkpoint: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
}

impl<S: Real> Trainer<S> {
    pub fn new(cfg: Config, train: ExampleSource, dev: ExampleSource) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::Data("empty training set".into()));
        }
        let params = init_params::<S>(&cfg.model, cfg.train.seed)?;
        let adam = Adam::new(&params, cfg.train.lr);
        let schedule = Plateau::new(cfg.train.lr, cfg.train.plateau_patience, cfg.train.lr_factor);
        Ok(Trainer {
            cfg,
            params,
            best: None,
            adam,
            schedule,
            train,
            dev,
            epoch: 0,
            history: Vec::new(),
            checkpoint: None,
            log_path: None,
        })
    }

    /// Save the best parameters to `ckpt` and append epoch logs to `ckpt.log.jsonl`.
    pub fn with_checkpoint(mut self, ckpt: &Path) -> Self {
        let mut log = ckpt.as_os_str().to_owned();
        log.push(".log.jsonl");
        self.log_path = Some(PathBuf::from(log));
        self.checkpoint = Some(ckpt.to_path_buf());
        self
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.cfg.train.epochs || self.schedule.lr < self.cfg.train.min_lr
    }

    /// One pass over the training set followed by validation.
    pub fn epoch(&mut self) -> Result<EpochLog> {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.train.seed.wrapping_add(self.epoch as u64 + 1));
        let frames: Vec<usize> = (0..self.train.len()).map(|i| self.train.frames(i)).collect();
        let batches = make_batches(&frames, self.cfg.train.batch, &mut rng);
        let m = &self.cfg.model;
        let mut reports = Vec::with_capacity(batches.len());
        for idx in &batches {
            let exs: Vec<Example> = idx
                .par_iter()
                .map(|&i| self.train.get(i, m.use_enhancement))
                .collect::<Result<_>>()?;
            let (r, grads) = batch_gradients(m, &self.params, &exs)?;
            self.adam.lr = self.schedule.lr;
            self.adam.update(&mut self.params, &grads)?;
            reports.push(r);
        }
        let train = LossReport::mean(&reports);
        let dev_source = if self.dev.is_empty() { &self.train } else { &self.dev };
        let (dev, dev_ar, dev_vde) = validate(m, &self.params, dev_source, self.cfg.eval.pooled)?;
        let lr = self.schedule.lr;
        let improved = self.schedule.observe(dev.total);
        if improved {
            self.best = Some(self.params.clone());
            if let Some(p) = &self.checkpoint {
                save_checkpoint(p, &self.cfg, &self.params)?;
            }
        }
        self.epoch += 1;
        let log = EpochLog {
            epoch: self.epoch,
            lr,
            steps: batches.len(),
            train,
            dev,
            dev_ar,
            dev_vde,
            improved,
            seconds: start.elapsed().as_secs_f64(),
        };
        if let Some(p) = &self.log_path {
            let mut f = OpenOptions::new().create(true).append(true).open(p)?;
            writeln!(f, "{}", serde_json::to_string(&log)?)?;
        }
        self.history.push(log.clone());
        Ok(log)
    }

    /// Train until the epoch budget is spent or the learning rate decays below
    /// the minimum.
    pub fn run(&mut self) -> Result<&[EpochLog]> {
        while !self.finished() {
            self.epoch()?;
        }
        Ok(&self.history)
    }
}
