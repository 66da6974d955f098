//! Command-line surface of the `voxelgate` binary.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use voxelgate_core::gradcheck;
use voxelgate_core::preprocess::{self, LabelMap, StackedCase};
use voxelgate_core::unet::{self, Activation, Mode, UNetConfig};
use voxelgate_core::{LabelVolume, Tensor};

use crate::config::CliConfig;
use crate::error::{Error, Result};
use crate::evaluate;
use crate::fsutil;
use crate::nifti::{self, Datatype};
use crate::phantom_io;
use crate::pipeline::{self, MultiModalCase};
use crate::render;
use crate::trainer::{self, Control, Trainer};
use crate::vseg::{self, Sidecar};

pub const OP_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Parser)]
#[command(name = "voxelgate", version, about = "3D attention U-Net brain tumor segmentation toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, `key=value`; repeatable.
    #[arg(long = "set", global = true)]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic phantom cases as NIfTI files.
    Phantom {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        extent: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Largest tumor radius in voxels.
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Scale, stack, remap, crop and filter NIfTI cases into VSEG1 arrays.
    Preprocess {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Seeded 6:2:2 split of the retained cases.
    Split {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train on the split's training cases, validating every epoch.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        activation: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from `<out>/last`.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint on one split.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint directory, e.g. `<train out>/best`.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Row label in the report table.
        #[arg(long, default_value = "model")]
        name: String,
        /// Also write per-case metrics as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Segment one case and write the labels as uint8 NIfTI.
    Predict {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        case: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write class probabilities as VSEG1.
        #[arg(long)]
        probs: bool,
    },
    /// Render axial slices of a case with its predicted labels as PPM.
    Render {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        case: String,
        /// Label volume written by `predict`.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, conflicts_with = "all")]
        slice: Option<usize>,
        #[arg(long)]
        all: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every operator and a depth-2 model.
    Gradcheck {
        #[arg(long, default_value_t = 17)]
        seed: u64,
    },
}

fn put<T: ToString>(cfg: &mut CliConfig, key: &str, v: &Option<T>) -> Result<()> {
    if let Some(v) = v {
        cfg.set(key, &v.to_string())?;
    }
    Ok(())
}

fn resolve(common: &Common, flags: impl FnOnce(&mut CliConfig) -> Result<()>) -> Result<CliConfig> {
    let mut cfg = match &common.config {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    cfg.apply_overrides(common.overrides.iter().map(String::as_str))?;
    flags(&mut cfg)?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    match &cli.command {
        Command::Phantom { out, n, extent, seed, radius, noise } => {
            let cfg = resolve(common, |c| {
                put(c, "out_dir", &out.as_ref().map(|p| p.display()))?;
                put(c, "phantom_n", n)?;
                put(c, "phantom_extent", extent)?;
                put(c, "phantom_seed", seed)?;
                put(c, "phantom_radius", radius)?;
                put(c, "phantom_noise", noise)
            })?;
            cmd_phantom(&cfg)
        }
        Command::Preprocess { input, output } => {
            let cfg = resolve(common, |c| {
                put(c, "raw_dir", &input.as_ref().map(|p| p.display()))?;
                put(c, "data_dir", &output.as_ref().map(|p| p.display()))
            })?;
            cmd_preprocess(&cfg.path("raw_dir")?, &cfg.path("data_dir")?)
        }
        Command::Split { data, seed } => {
            let cfg = resolve(common, |c| {
                put(c, "data_dir", &data.as_ref().map(|p| p.display()))?;
                put(c, "split_seed", seed)
            })?;
            cmd_split(&cfg.path("data_dir")?, cfg.split_seed()?)
        }
        Command::Train { data, out, epochs, lr, activation, seed, resume } => {
            let cfg = resolve(common, |c| {
                put(c, "data_dir", &data.as_ref().map(|p| p.display()))?;
                put(c, "out_dir", &out.as_ref().map(|p| p.display()))?;
                put(c, "epochs", epochs)?;
                put(c, "learning_rate", lr)?;
                put(c, "activation", activation)?;
                put(c, "seed", seed)
            })?;
            cmd_train(&cfg, *resume)
        }
        Command::Eval { data, model, split, name, csv } => {
            let cfg = resolve(common, |c| {
                put(c, "data_dir", &data.as_ref().map(|p| p.display()))?;
                put(c, "model_dir", &model.as_ref().map(|p| p.display()))
            })?;
            cmd_eval(&cfg.path("data_dir")?, &cfg.path("model_dir")?, split, name, csv.as_deref())
        }
        Command::Predict { data, model, case, out, probs } => {
            let cfg = resolve(common, |c| {
                put(c, "data_dir", &data.as_ref().map(|p| p.display()))?;
                put(c, "model_dir", &model.as_ref().map(|p| p.display()))?;
                put(c, "out_dir", &out.as_ref().map(|p| p.display()))
            })?;
            cmd_predict(&cfg.path("data_dir")?, &cfg.path("model_dir")?, case, &cfg.path("out_dir")?, *probs)
        }
        Command::Render { data, case, pred, slice, all, out } => {
            let cfg = resolve(common, |c| {
                put(c, "data_dir", &data.as_ref().map(|p| p.display()))?;
                put(c, "out_dir", &out.as_ref().map(|p| p.display()))
            })?;
            if slice.is_none() && !*all {
                return Err(Error::Config("render needs --slice N or --all".into()));
            }
            cmd_render(&cfg.path("data_dir")?, case, pred, *slice, &cfg.path("out_dir")?)
        }
        Command::Gradcheck { seed } => cmd_gradcheck(*seed),
    }
}

fn cmd_phantom(cfg: &CliConfig) -> Result<()> {
    let out = cfg.path("out_dir")?;
    let spec = cfg.phantom_spec()?;
    let manifest = phantom_io::generate_to_dir(&out, &spec, cfg.phantom_count()?)?;
    for (path, sum) in &manifest {
        let rel = path.strip_prefix(&out).unwrap_or(path);
        println!("{sum}  {}", rel.display());
    }
    Ok(())
}

fn cmd_preprocess(input: &Path, output: &Path) -> Result<()> {
    fsutil::create_dir_all(output)?;
    let map = LabelMap::default();
    let (mut retained, mut filtered, mut cached, mut failed) = (Vec::new(), Vec::new(), 0usize, Vec::new());
    for dir in pipeline::case_dirs(input)? {
        let outcome = MultiModalCase::from_dir(&dir).and_then(|case| {
            if pipeline::is_cached(output, &case)? {
                cached += 1;
                let meta = pipeline::read_meta(output, &case.case_id)?;
                let fraction = meta.get("mask_fraction").cloned().unwrap_or_else(|| "-".into());
                return Ok((case.case_id, meta.get("status").map(String::as_str) == Some("retained"), fraction));
            }
            let o = pipeline::preprocess_case(&case, &map)?;
            pipeline::persist(output, &o)?;
            let fraction = match &o.result {
                preprocess::Preprocessed::Retained { mask_fraction, .. } => {
                    mask_fraction.map(|f| f.to_string()).unwrap_or_else(|| "-".into())
                }
                preprocess::Preprocessed::Filtered { mask_fraction, .. } => mask_fraction.to_string(),
            };
            Ok((o.case_id.clone(), o.retained().is_some(), fraction))
        });
        match outcome {
            Ok((id, true, f)) => retained.push((id, f)),
            Ok((id, false, f)) => filtered.push((id, f)),
            Err(e) => failed.push((dir.display().to_string(), e)),
        }
    }
    for (id, f) in &retained {
        println!("retained  {id}  mask_fraction={f}");
    }
    for (id, f) in &filtered {
        println!("filtered  {id}  mask_fraction={f}");
    }
    for (dir, e) in &failed {
        println!("failed    {dir}  {e}");
    }
    println!(
        "summary: {} retained, {} filtered, {} failed, {} cache hits",
        retained.len(),
        filtered.len(),
        failed.len(),
        cached
    );
    match failed.into_iter().next() {
        Some((_, e)) => Err(Error::Data(format!("preprocessing failed: {e}"))),
        None => Ok(()),
    }
}

pub const SPLIT_FILE: &str = "split.txt";

fn cmd_split(data: &Path, seed: u64) -> Result<()> {
    let ids = pipeline::retained_ids(data)?;
    let s = preprocess::split_dataset(&ids, seed)?;
    let mut m = Sidecar::new();
    m.insert("seed".into(), seed.to_string());
    m.insert("train".into(), s.train.join(","));
    m.insert("validation".into(), s.validation.join(","));
    m.insert("test".into(), s.test.join(","));
    fsutil::write_atomic(&data.join(SPLIT_FILE), vseg::format_sidecar(&m).as_bytes())?;
    println!("train {} / validation {} / test {}", s.train.len(), s.validation.len(), s.test.len());
    Ok(())
}

/// Case ids of one split (`train`, `validation`, `test`, or `all`).
pub fn split_ids(data: &Path, which: &str) -> Result<Vec<String>> {
    if which == "all" {
        return pipeline::retained_ids(data);
    }
    let path = data.join(SPLIT_FILE);
    if !path.is_file() {
        return Err(Error::Data(format!("{} not found; run `voxelgate split` first", path.display())));
    }
    let m = vseg::parse_sidecar(&fsutil::read_to_string(&path)?)?;
    let ids = m.get(which).ok_or_else(|| Error::Config(format!("unknown split {which:?}")))?;
    Ok(ids.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect())
}

fn load_cases(data: &Path, ids: &[String]) -> Result<Vec<StackedCase>> {
    ids.iter().map(|id| pipeline::load_stacked(data, id)).collect()
}

fn cmd_train(cfg: &CliConfig, resume: bool) -> Result<()> {
    let (data, out) = (cfg.path("data_dir")?, cfg.path("out_dir")?);
    let tc = cfg.train_config()?;
    let train = load_cases(&data, &split_ids(&data, "train")?)?;
    let val = load_cases(&data, &split_ids(&data, "validation")?)?;
    let mut t = if resume {
        let mut t = Trainer::resume(&out.join("last"))?;
        t.config.epochs = tc.epochs;
        t
    } else {
        Trainer::new(tc, &train)?
    };
    fsutil::write_atomic(&out.join("run_config.txt"), cfg.render().as_bytes())?;
    eprint!("{}", cfg.render());
    println!("{}", trainer::LOG_HEADER);
    t.fit(&train, &val, Some(&out), |row| {
        println!("{}", row.to_csv());
        Control::Continue
    })?;
    if let Some((e, d)) = t.best {
        println!("best validation dice {d:.4} at epoch {e}");
    }
    Ok(())
}

fn cmd_eval(data: &Path, model_dir: &Path, split: &str, name: &str, csv: Option<&Path>) -> Result<()> {
    let model = trainer::load_model(model_dir)?;
    let w = trainer::load_config(model_dir)?.tversky;
    let cases = load_cases(data, &split_ids(data, split)?)?;
    let (per_case, report) = evaluate::evaluate_cases(&model, &cases, w)?;
    print!("{}", evaluate::format_table(&[(name.to_string(), report.clone())]));
    if let Some(p) = csv {
        fsutil::write_atomic(p, evaluate::format_csv(&per_case, &report).as_bytes())?;
    }
    Ok(())
}

pub fn prediction_path(out: &Path, id: &str) -> PathBuf {
    out.join(format!("{id}_pred.nii.gz"))
}

fn labels_to_f64(l: &LabelVolume) -> Result<Tensor<f64>> {
    Ok(Tensor::new(&l.extents(), l.values().iter().map(|&v| v as f64).collect())?)
}

fn cmd_predict(data: &Path, model_dir: &Path, id: &str, out: &Path, probs: bool) -> Result<()> {
    let model = trainer::load_model(model_dir)?;
    let case = pipeline::load_stacked(data, id)?;
    let p = model.predict_padded(&case)?;
    let path = prediction_path(out, id);
    nifti::write_volume(&path, &labels_to_f64(&p.labels)?, Datatype::U8, phantom_io::SPACING)?;
    println!("{}", path.display());
    if probs {
        let pp = out.join(format!("{id}_probs.vseg"));
        vseg::write(&pp, &vseg::Array::F32(p.probs))?;
        println!("{}", pp.display());
    }
    Ok(())
}

fn cmd_render(data: &Path, id: &str, pred: &Path, slice: Option<usize>, out: &Path) -> Result<()> {
    let case = pipeline::load_stacked(data, id)?;
    let vol = nifti::read_volume(pred)?;
    let values: Vec<u8> = vol.data.values().iter().map(|&v| v as u8).collect();
    let pred = LabelVolume::new(vol.extents(), values).map_err(|e| Error::from(e).in_file(pred))?;
    let s = case.spatial()?[2];
    let slices: Vec<usize> = match slice {
        Some(k) => vec![k],
        None => (0..s).collect(),
    };
    for k in slices {
        let img = render::render_slice(&case.image, case.labels.as_ref(), &pred, k)?;
        let path = out.join(format!("{id}_slice{k:03}.ppm"));
        fsutil::write_atomic(&path, &img.to_ppm())?;
        println!("{}", path.display());
    }
    Ok(())
}

fn cmd_gradcheck(seed: u64) -> Result<()> {
    let mut worst = 0.0f64;
    for (name, err) in gradcheck::run_operator_suite(seed, gradcheck::DEFAULT_EPS)? {
        println!("{name:<40} {err:.3e}");
        worst = worst.max(err);
    }
    println!("operators: max relative error {worst:.3e} (tolerance {OP_TOLERANCE:e})");
    let mut model_worst = 0.0f64;
    for act in [Activation::LeakyRelu, Activation::Relu] {
        let cfg = UNetConfig::new(2, 4, act);
        let params = unet::build_model::<f64>(&cfg, seed)?;
        let x = gradcheck::random_tensor(&[2, 3, 8, 8, 8], 0.5, seed, "x").map(|v| 0.5 + v);
        let target = gradcheck::random_onehot(2, 4, [8, 8, 8], seed);
        let mode = Mode::Train { seed, step: 0 };
        let (r, tensor) = gradcheck::model_grad_check(&cfg, &params, &x, &target, mode, 1e-5, 6, seed)?;
        println!(
            "model {:<10} max relative error {:.3e} over {} elements (worst in {tensor})",
            act.name(),
            r.max_rel_error,
            r.checked
        );
        model_worst = model_worst.max(r.max_rel_error);
    }
    if worst < OP_TOLERANCE && model_worst < MODEL_TOLERANCE {
        Ok(())
    } else {
        Err(Error::Data(format!(
            "gradient check failed: operators {worst:.3e}, model {model_worst:.3e}"
        )))
    }
}
