use voxelgate::evaluate::{self, Model, Segmenter};
use voxelgate::trainer::{self, Control, LogRow, TrainConfig, Trainer};
use voxelgate::{Error, ExitKind};
use voxelgate_core::metrics::TverskyWeights;
use voxelgate_core::phantom::{generate_phantoms, PhantomSpec};
use voxelgate_core::preprocess::{preprocess_arrays, LabelMap, Preprocessed, StackedCase};
use voxelgate_core::unet::{build_model, Activation, UNetConfig};
use voxelgate_core::{LabelVolume, Tensor};

fn cases(n: usize, extent: usize, seed: u64) -> Vec<StackedCase> {
    generate_phantoms(&PhantomSpec::for_extent(extent, seed), n)
        .unwrap()
        .into_iter()
        .map(|c| {
            let raw: Vec<i64> = c.seg.iter().map(|&v| v as i64).collect();
            match preprocess_arrays(&c.case_id, &c.flair, &c.t1ce, &c.t2, Some(&raw), &LabelMap::default()).unwrap() {
                Preprocessed::Retained { case, .. } => case,
                Preprocessed::Filtered { .. } => panic!("phantom filtered"),
            }
        })
        .collect()
}

fn tiny_config(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, seed: 9, base_filters: 2, learning_rate: 1e-3, ..TrainConfig::default() }
}

fn train(cfg: TrainConfig, data: &[StackedCase], out: Option<&std::path::Path>) -> Trainer {
    let mut t = Trainer::new(cfg, data).unwrap();
    t.fit(data, data, out, |_| Control::Continue).unwrap();
    t
}

#[test]
fn two_epochs_write_log_and_checkpoints() {
    let data = cases(4, 16, 1);
    let dir = tempfile::tempdir().unwrap();
    let t = train(tiny_config(2), &data, Some(dir.path()));
    assert_eq!(t.log.len(), 2);
    assert_eq!(t.step, 4);
    assert!(t.log.iter().all(|r| r.train_loss.is_finite() && (0.0..=1.0).contains(&r.val_dice)));
    let log = std::fs::read_to_string(dir.path().join("log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some(trainer::LOG_HEADER));
    assert_eq!(trainer::parse_log(&log).unwrap(), t.log);
    for sub in ["best", "last"] {
        for f in ["params/manifest.txt", "adam_m/manifest.txt", "adam_v/manifest.txt", "config.txt", "state.txt"] {
            assert!(dir.path().join(sub).join(f).is_file(), "{sub}/{f}");
        }
    }
    let model = trainer::load_model(&dir.path().join("last")).unwrap();
    assert_eq!(model.params, t.model.params);
}

#[test]
fn training_is_bitwise_deterministic() {
    let data = cases(3, 16, 2);
    let a = train(tiny_config(2), &data, None);
    let b = train(tiny_config(2), &data, None);
    let bits = |log: &[LogRow]| -> Vec<[u64; 3]> {
        log.iter().map(|r| [r.train_loss.to_bits(), r.val_dice.to_bits(), r.val_tversky_loss.to_bits()]).collect()
    };
    assert_eq!(bits(&a.log), bits(&b.log));
    assert_eq!(a.model.params, b.model.params);
    let c = train(TrainConfig { seed: 10, ..tiny_config(2) }, &data, None);
    assert_ne!(bits(&a.log), bits(&c.log));
}

#[test]
fn resume_reproduces_the_next_epoch() {
    let data = cases(3, 16, 3);
    let full = train(tiny_config(3), &data, None);
    let dir = tempfile::tempdir().unwrap();
    train(tiny_config(2), &data, Some(dir.path()));
    let mut resumed = Trainer::resume(&dir.path().join("last")).unwrap();
    assert_eq!(resumed.epoch, 2);
    resumed.config.epochs = 3;
    resumed.fit(&data, &data, None, |_| Control::Continue).unwrap();
    assert_eq!(resumed.log, full.log);
    assert_eq!(resumed.log[2].to_csv(), full.log[2].to_csv());
    assert_eq!(resumed.model.params, full.model.params);
    assert_eq!(resumed.adam, full.adam);
}

#[test]
fn hook_can_stop_early() {
    let data = cases(2, 16, 4);
    let mut t = Trainer::new(tiny_config(10), &data).unwrap();
    t.fit(&data, &data, None, |r| if r.epoch == 1 { Control::Stop } else { Control::Continue }).unwrap();
    assert_eq!(t.log.len(), 1);
}

#[test]
fn non_finite_loss_names_the_batch() {
    let data = cases(2, 16, 5);
    let mut t = Trainer::new(tiny_config(1), &data).unwrap();
    t.model.params.get_mut("head.weight").unwrap().values_mut()[0] = f32::NAN;
    let err = t.train_epoch(&data, &data).unwrap_err();
    match &err {
        Error::NonFiniteLoss { epoch: 1, batch: 0, cases } => assert!(cases.contains("phantom_")),
        e => panic!("unexpected {e:?}"),
    }
    assert_eq!(err.exit_kind(), ExitKind::Numerical);
}

#[test]
fn invalid_configs_are_usage_errors() {
    let data = cases(1, 16, 6);
    for cfg in [
        TrainConfig { learning_rate: 0.0, ..tiny_config(1) },
        TrainConfig { batch_size: 0, ..tiny_config(1) },
        TrainConfig { epochs: 0, ..tiny_config(1) },
        TrainConfig { depth: 1, ..tiny_config(1) },
    ] {
        let err = Trainer::new(cfg, &data).unwrap_err();
        assert_eq!(err.exit_kind(), ExitKind::Usage, "{err}");
    }
}

#[test]
fn prior_init_sets_log_class_frequencies() {
    let data = cases(2, 16, 7);
    let t = Trainer::new(tiny_config(1), &data).unwrap();
    let freq = trainer::class_frequencies(&trainer::pad_to_common(&data, 4).unwrap());
    assert!((freq.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let bias = t.model.params.get("head.bias").unwrap().values();
    for k in 0..4 {
        assert_eq!(bias[k], freq[k].ln() as f32);
    }
    let off = Trainer::new(TrainConfig { prior_init: false, ..tiny_config(1) }, &data).unwrap();
    assert!(off.model.params.get("head.bias").unwrap().values().iter().all(|&b| b == 0.0));
}

#[test]
fn predict_case_is_strict_about_extents() {
    let cfg = UNetConfig::new(2, 2, Activation::Relu);
    let model = Model { params: build_model(&cfg, 1).unwrap(), config: cfg };
    let odd = StackedCase::new("odd", Tensor::zeros(&[3, 33, 33, 33]), None).unwrap();
    assert!(matches!(
        model.predict_case(&odd),
        Err(Error::Core(voxelgate_core::Error::IndivisibleExtent { extent: 33, divisor: 4 }))
    ));
    let p = model.predict_padded(&StackedCase::new("odd", Tensor::zeros(&[3, 13, 14, 15]), None).unwrap()).unwrap();
    assert_eq!(p.labels.extents(), [13, 14, 15]);
    assert_eq!(p.probs.extents(), &[4, 13, 14, 15]);
    for v in 0..p.labels.len() {
        let s: f32 = (0..4).map(|c| p.probs.values()[c * p.labels.len() + v]).sum();
        assert!((s - 1.0).abs() < 1e-5);
    }
}

#[test]
fn zero_input_prediction_is_deterministic() {
    let cfg = UNetConfig::new(2, 4, Activation::LeakyRelu);
    let zero = StackedCase::new("z", Tensor::zeros(&[3, 16, 16, 16]), None).unwrap();
    let run = || Model { params: build_model(&cfg, 21).unwrap(), config: cfg.clone() }.predict_case(&zero).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.labels, b.labels);
    assert_eq!(
        a.probs.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.probs.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

struct Echo;

impl Segmenter for Echo {
    fn segment(&self, case: &StackedCase) -> voxelgate::Result<LabelVolume> {
        Ok(case.labels.clone().unwrap())
    }
}

#[test]
fn echo_segmenter_scores_perfectly() {
    let data = cases(3, 16, 8);
    let (per_case, report) = evaluate::evaluate_cases(&Echo, &data, TverskyWeights::default()).unwrap();
    assert_eq!(per_case.len(), 3);
    assert!((report.mean_dice - 1.0).abs() < 1e-9);
    assert!(report.mean_tversky_loss.abs() < 1e-9);
    let table = evaluate::format_table(&[("echo".into(), report.clone())]);
    assert!(table.starts_with("Trial"));
    assert!(table.contains("echo   1.0000         0.0000"));
    let csv = evaluate::format_csv(&per_case, &report);
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().last().unwrap().starts_with("mean,1,0"));
}
