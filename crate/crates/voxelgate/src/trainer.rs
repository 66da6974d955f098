//! Adam training loop with per-epoch validation and resumable checkpoints.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use voxelgate_core::adam::{self, AdamState};
use voxelgate_core::metrics::{ClassReduction, TverskyWeights, DEFAULT_SMOOTH, NUM_CLASSES};
use voxelgate_core::preprocess::{self, StackedCase};
use voxelgate_core::unet::{self, Activation, Mode, ModelParams, UNetConfig, BN_MOMENTUM};
use voxelgate_core::{rng, Tensor};

use crate::error::{Error, Result};
use crate::evaluate::{self, Model};
use crate::fsutil;
use crate::params_io;
use crate::vseg::{self, Sidecar};

pub const LOG_HEADER: &str = "epoch,train_loss,val_dice,val_tversky_loss";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub activation: Activation,
    pub depth: usize,
    pub base_filters: usize,
    pub tversky: TverskyWeights,
    /// Start the head bias at the log class frequencies of the training labels.
    pub prior_init: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 2,
            epochs: 127,
            seed: 0,
            activation: Activation::LeakyRelu,
            depth: 2,
            base_filters: 8,
            tversky: TverskyWeights::default(),
            prior_init: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        self.model_config().validate()?;
        Ok(())
    }

    pub fn model_config(&self) -> UNetConfig {
        UNetConfig::new(self.depth, self.base_filters, self.activation)
    }

    pub fn to_sidecar(&self) -> Sidecar {
        let mut m = Sidecar::new();
        m.insert("learning_rate".into(), self.learning_rate.to_string());
        m.insert("batch_size".into(), self.batch_size.to_string());
        m.insert("epochs".into(), self.epochs.to_string());
        m.insert("seed".into(), self.seed.to_string());
        m.insert("activation".into(), self.activation.name().into());
        m.insert("depth".into(), self.depth.to_string());
        m.insert("base_filters".into(), self.base_filters.to_string());
        m.insert("tversky_alpha".into(), self.tversky.alpha.to_string());
        m.insert("tversky_beta".into(), self.tversky.beta.to_string());
        m.insert("prior_init".into(), self.prior_init.to_string());
        m
    }

    pub fn from_sidecar(m: &Sidecar) -> Result<Self> {
        fn get<T: std::str::FromStr>(m: &Sidecar, k: &str) -> Result<T> {
            let v = m.get(k).ok_or_else(|| Error::Config(format!("checkpoint config lacks {k}")))?;
            v.parse().map_err(|_| Error::Config(format!("bad value for {k}: {v:?}")))
        }
        let act: String = get(m, "activation")?;
        Ok(Self {
            learning_rate: get(m, "learning_rate")?,
            batch_size: get(m, "batch_size")?,
            epochs: get(m, "epochs")?,
            seed: get(m, "seed")?,
            activation: Activation::parse(&act).ok_or_else(|| Error::Config(format!("unknown activation {act:?}")))?,
            depth: get(m, "depth")?,
            base_filters: get(m, "base_filters")?,
            tversky: TverskyWeights::new(get(m, "tversky_alpha")?, get(m, "tversky_beta")?)?,
            prior_init: get(m, "prior_init")?,
        })
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_dice: f64,
    pub val_tversky_loss: f64,
}

impl LogRow {
    pub fn to_csv(&self) -> String {
        format!("{},{},{},{}", self.epoch, self.train_loss, self.val_dice, self.val_tversky_loss)
    }

    pub fn parse(line: &str) -> Result<Self> {
        let bad = || Error::Data(format!("malformed log row {line:?}"));
        let f: Vec<&str> = line.split(',').collect();
        let [e, l, d, t] = f[..] else { return Err(bad()) };
        Ok(Self {
            epoch: e.parse().map_err(|_| bad())?,
            train_loss: l.parse().map_err(|_| bad())?,
            val_dice: d.parse().map_err(|_| bad())?,
            val_tversky_loss: t.parse().map_err(|_| bad())?,
        })
    }
}

pub fn format_log(rows: &[LogRow]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

pub fn parse_log(text: &str) -> Result<Vec<LogRow>> {
    text.lines().skip(1).filter(|l| !l.trim().is_empty()).map(LogRow::parse).collect()
}

/// Whether the loop should keep going after an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    pub adam: AdamState<f32>,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps; keys the dropout masks.
    pub step: u64,
    pub best: Option<(usize, f64)>,
    pub log: Vec<LogRow>,
}

/// Fraction of voxels per class across `cases`, each count floored at one.
pub fn class_frequencies(cases: &[StackedCase]) -> [f64; NUM_CLASSES] {
    let mut counts = [1.0f64; NUM_CLASSES];
    for l in cases.iter().filter_map(|c| c.labels.as_ref()) {
        for &v in l.values() {
            counts[v as usize] += 1.0;
        }
    }
    let total: f64 = counts.iter().sum();
    counts.map(|c| c / total)
}

/// Pads every case to the smallest common extent divisible by `divisor`.
pub fn pad_to_common(cases: &[StackedCase], divisor: usize) -> Result<Vec<StackedCase>> {
    let mut e = [0usize; 3];
    for c in cases {
        let s = c.spatial()?;
        for a in 0..3 {
            e[a] = e[a].max(s[a]);
        }
    }
    let e = evaluate::padded_extents(e, divisor);
    cases.iter().map(|c| Ok(preprocess::pad_case(c, e)?)).collect()
}

fn assemble(cases: &[&StackedCase]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let [l, w, s] = cases[0].spatial()?;
    let sp = l * w * s;
    let n = cases.len();
    let mut x = Vec::with_capacity(n * 3 * sp);
    let mut y = vec![0.0f32; n * NUM_CLASSES * sp];
    for (b, c) in cases.iter().enumerate() {
        x.extend_from_slice(c.image.values());
        let labels = c.labels.as_ref().ok_or_else(|| Error::Data(format!("{}: training case without labels", c.case_id)))?;
        for (v, &k) in labels.values().iter().enumerate() {
            y[(b * NUM_CLASSES + k as usize) * sp + v] = 1.0;
        }
    }
    Ok((Tensor::new(&[n, 3, l, w, s], x)?, Tensor::new(&[n, NUM_CLASSES, l, w, s], y)?))
}

impl Trainer {
    /// Fresh model seeded by `config.seed`.
    pub fn new(config: TrainConfig, train: &[StackedCase]) -> Result<Self> {
        config.validate()?;
        let mc = config.model_config();
        let mut params: ModelParams<f32> = unet::build_model(&mc, config.seed)?;
        if config.prior_init {
            let freq = class_frequencies(&pad_to_common(train, 1 << mc.depth)?);
            for (b, f) in params.get_mut("head.bias")?.values_mut().iter_mut().zip(freq) {
                *b = f.ln() as f32;
            }
        }
        let adam = AdamState::new(&params);
        Ok(Self { config, model: Model { config: mc, params }, adam, epoch: 0, step: 0, best: None, log: Vec::new() })
    }

    /// One pass over `train` followed by validation on `val`.
    pub fn train_epoch(&mut self, train: &[StackedCase], val: &[StackedCase]) -> Result<LogRow> {
        if train.is_empty() || val.is_empty() {
            return Err(voxelgate_core::Error::EmptyDataset.into());
        }
        let epoch = self.epoch + 1;
        let padded = pad_to_common(train, self.model.divisor())?;
        let mut order: Vec<usize> = (0..padded.len()).collect();
        order.shuffle(&mut rng::stream(self.config.seed, "trainer.shuffle", epoch as u64));
        let mut total = 0.0;
        let batches: Vec<&[usize]> = order.chunks(self.config.batch_size).collect();
        for (bi, idx) in batches.iter().enumerate() {
            let cases: Vec<&StackedCase> = idx.iter().map(|&i| &padded[i]).collect();
            let (x, y) = assemble(&cases)?;
            let mode = Mode::Train { seed: self.config.seed, step: self.step };
            let mut fp = unet::forward(&self.model.config, &self.model.params, &x, mode)?;
            let loss = fp.graph.soft_tversky_loss(fp.probs, &y, self.config.tversky, DEFAULT_SMOOTH, ClassReduction::Mean)?;
            let lv = fp.graph.value(loss).values()[0] as f64;
            if !lv.is_finite() {
                let ids: Vec<&str> = cases.iter().map(|c| c.case_id.as_str()).collect();
                return Err(Error::NonFiniteLoss { epoch, batch: bi, cases: ids.join(",") });
            }
            total += lv;
            fp.graph.backward(loss)?;
            let grads = fp.grads();
            adam::adam_step(&mut self.model.params, &grads, &mut self.adam, self.config.learning_rate)?;
            unet::update_running_stats(&mut self.model.params, &fp.batch_stats, BN_MOMENTUM)?;
            self.step += 1;
        }
        let (_, report) = evaluate::evaluate_cases(&self.model, val, self.config.tversky)?;
        let row = LogRow {
            epoch,
            train_loss: total / batches.len() as f64,
            val_dice: report.mean_dice,
            val_tversky_loss: report.mean_tversky_loss,
        };
        self.epoch = epoch;
        self.log.push(row);
        if self.best.is_none_or(|(_, d)| row.val_dice > d) {
            self.best = Some((epoch, row.val_dice));
        }
        Ok(row)
    }

    /// Trains until `config.epochs` or until `on_epoch` returns
    /// [`Control::Stop`]. With `out`, writes `log.csv`, `last/` after every
    /// epoch and `best/` whenever validation Dice improves.
    pub fn fit(
        &mut self,
        train: &[StackedCase],
        val: &[StackedCase],
        out: Option<&Path>,
        mut on_epoch: impl FnMut(&LogRow) -> Control,
    ) -> Result<()> {
        while self.epoch < self.config.epochs {
            let row = self.train_epoch(train, val)?;
            if let Some(dir) = out {
                fsutil::write_atomic(&dir.join("log.csv"), format_log(&self.log).as_bytes())?;
                if self.best.map(|(e, _)| e) == Some(row.epoch) {
                    self.save_checkpoint(&dir.join("best"))?;
                }
                self.save_checkpoint(&dir.join("last"))?;
            }
            if on_epoch(&row) == Control::Stop {
                break;
            }
        }
        Ok(())
    }

    /// Parameters, Adam moments, loop counters, log and config snapshot.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        params_io::save_params(&dir.join("params"), &self.model.params)?;
        for (sub, moments) in [("adam_m", &self.adam.m), ("adam_v", &self.adam.v)] {
            params_io::save_params(&dir.join(sub), &self.moments_as_params(moments)?)?;
        }
        fsutil::write_atomic(&dir.join("config.txt"), vseg::format_sidecar(&self.config.to_sidecar()).as_bytes())?;
        let mut state = Sidecar::new();
        state.insert("epoch".into(), self.epoch.to_string());
        state.insert("step".into(), self.step.to_string());
        state.insert("adam_t".into(), self.adam.t.to_string());
        if let Some((e, d)) = self.best {
            state.insert("best_epoch".into(), e.to_string());
            state.insert("best_val_dice".into(), d.to_string());
        }
        fsutil::write_atomic(&dir.join("state.txt"), vseg::format_sidecar(&state).as_bytes())?;
        fsutil::write_atomic(&dir.join("log.csv"), format_log(&self.log).as_bytes())
    }

    fn moments_as_params(&self, moments: &BTreeMap<String, Vec<f32>>) -> Result<ModelParams<f32>> {
        let mut p = ModelParams::new();
        for (name, v) in moments {
            let ext = self.model.params.get(name)?.extents().to_vec();
            p.insert(name.clone(), Tensor::new(&ext, v.clone())?);
        }
        Ok(p)
    }

    /// Restores a checkpoint written by [`Trainer::save_checkpoint`].
    pub fn resume(dir: &Path) -> Result<Self> {
        let config = load_config(dir)?;
        let mc = config.model_config();
        let params = params_io::load_params(&dir.join("params"), Some(&mc))?;
        let mut adam = AdamState::new(&params);
        for (sub, moments) in [("adam_m", &mut adam.m), ("adam_v", &mut adam.v)] {
            let loaded = params_io::load_params(&dir.join(sub), None)?;
            for (name, slot) in moments.iter_mut() {
                let t = loaded
                    .get(name)
                    .map_err(|_| Error::ManifestMismatch(format!("{sub}: missing moment for {name}")))?;
                if t.len() != slot.len() {
                    return Err(Error::ManifestMismatch(format!("{sub}: {name} has {} values, expected {}", t.len(), slot.len())));
                }
                slot.copy_from_slice(t.values());
            }
            if loaded.len() != moments.len() {
                return Err(Error::ManifestMismatch(format!("{sub}: {} tensors, expected {}", loaded.len(), moments.len())));
            }
        }
        let state = vseg::parse_sidecar(&fsutil::read_to_string(&dir.join("state.txt"))?)?;
        let num = |k: &str| -> Result<u64> {
            state
                .get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Data(format!("{}: state.txt lacks {k}", dir.display())))
        };
        adam.t = num("adam_t")?;
        let best = match (state.get("best_epoch"), state.get("best_val_dice")) {
            (Some(e), Some(d)) => Some((
                e.parse().map_err(|_| Error::Data(format!("bad best_epoch {e:?}")))?,
                d.parse().map_err(|_| Error::Data(format!("bad best_val_dice {d:?}")))?,
            )),
            _ => None,
        };
        let log = parse_log(&fsutil::read_to_string(&dir.join("log.csv"))?)?;
        Ok(Self {
            config,
            model: Model { config: mc, params },
            adam,
            epoch: num("epoch")? as usize,
            step: num("step")?,
            best,
            log,
        })
    }
}

pub fn load_config(checkpoint: &Path) -> Result<TrainConfig> {
    TrainConfig::from_sidecar(&vseg::parse_sidecar(&fsutil::read_to_string(&checkpoint.join("config.txt"))?)?)
}

/// Loads the model stored in a checkpoint directory.
pub fn load_model(checkpoint: &Path) -> Result<Model> {
    let config = load_config(checkpoint)?.model_config();
    let params = params_io::load_params(&checkpoint.join("params"), Some(&config))?;
    Ok(Model { config, params })
}
