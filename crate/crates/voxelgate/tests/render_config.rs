use voxelgate::config::CliConfig;
use voxelgate::render::{self, COLORS};
use voxelgate::{Error, ExitKind};
use voxelgate_core::phantom::{self, PhantomSpec};
use voxelgate_core::unet::Activation;
use voxelgate_core::{LabelVolume, Tensor};

fn flat_image(e: [usize; 3], v: f32) -> Tensor<f32> {
    Tensor::full(&[3, e[0], e[1], e[2]], v)
}

#[test]
fn background_slice_is_pure_grayscale() {
    let e = [5, 7, 3];
    let img = Tensor::new(&[3, 5, 7, 3], (0..315).map(|i| (i % 11) as f32 / 10.0).collect()).unwrap();
    let labels = LabelVolume::new(e, vec![0; 105]).unwrap();
    let p = render::render_slice(&img, None, &labels, 1).unwrap();
    assert_eq!((p.width, p.height), (7, 5));
    for y in 0..5 {
        for x in 0..7 {
            let [r, g, b] = p.pixel(x, y);
            assert!(r == g && g == b);
            let want = (img.values()[(y * 7 + x) * 3 + 1] * 255.0).round() as u8;
            assert_eq!(r, want);
        }
    }
}

#[test]
fn one_voxel_per_class_gives_three_colored_pixels() {
    let e = [4, 4, 2];
    let mut labels = LabelVolume::new(e, vec![0; 32]).unwrap();
    for (c, (i, j)) in [(1u8, (0usize, 0usize)), (2, (1, 2)), (3, (3, 3))] {
        labels.values_mut()[(i * 4 + j) * 2] = c;
    }
    let p = render::render_slice(&flat_image(e, 0.5), None, &labels, 0).unwrap();
    let colored: Vec<[u8; 3]> =
        (0..16).map(|i| p.pixel(i % 4, i / 4)).filter(|px| !(px[0] == px[1] && px[1] == px[2])).collect();
    assert_eq!(colored, vec![[0, 0, 255], [218, 165, 32], [0, 128, 0]]);
    assert_eq!(COLORS, [[0, 0, 255], [218, 165, 32], [0, 128, 0]]);
    let other = render::render_slice(&flat_image(e, 0.5), None, &labels, 1).unwrap();
    assert!(other.rgb.iter().all(|&b| b == 128));
}

#[test]
fn ppm_encoding_and_side_by_side_layout() {
    let e = [2, 3, 1];
    let truth = LabelVolume::new(e, vec![1, 0, 0, 0, 0, 0]).unwrap();
    let pred = LabelVolume::new(e, vec![0, 0, 0, 0, 0, 3]).unwrap();
    let p = render::render_slice(&flat_image(e, 0.0), Some(&truth), &pred, 0).unwrap();
    assert_eq!((p.width, p.height), (6, 2));
    assert_eq!(p.pixel(0, 0), [0, 0, 255]);
    assert_eq!(p.pixel(3, 0), [0, 0, 0]);
    assert_eq!(p.pixel(5, 1), [0, 128, 0]);
    let ppm = p.to_ppm();
    assert!(ppm.starts_with(b"P6\n6 2\n255\n"));
    assert_eq!(ppm.len(), b"P6\n6 2\n255\n".len() + 36);
}

#[test]
fn render_errors() {
    let e = [2, 2, 2];
    let labels = LabelVolume::new(e, vec![0; 8]).unwrap();
    let err = render::render_slice(&flat_image(e, 0.0), None, &labels, 2).unwrap_err();
    assert!(matches!(err, Error::SliceOutOfRange { index: 2, extent: 2 }));
    let wrong = LabelVolume::new([2, 2, 3], vec![0; 12]).unwrap();
    assert!(render::render_slice(&flat_image(e, 0.0), None, &wrong, 0).is_err());
}

#[test]
fn phantom_mid_slice_overlay_matches_geometry() {
    let mut spec = PhantomSpec::for_extent(24, 3);
    spec.noise = 0.0;
    let case = phantom::generate_phantoms(&spec, 1).unwrap().remove(0);
    let g = case.geometry;
    let img = Tensor::new(
        &[3, 24, 24, 24],
        [&case.flair, &case.t1ce, &case.t2].iter().flat_map(|t| t.values().iter().copied()).collect(),
    )
    .unwrap();
    let labels =
        LabelVolume::new([24; 3], case.seg.iter().map(|&r| if r == 4 { 3 } else { r }).collect()).unwrap();
    let k = g.center[2].round() as usize;
    let p = render::render_slice(&img, None, &labels, k).unwrap();
    let c = spec.center();
    for i in 0..24 {
        for j in 0..24 {
            let pt = [i as f64, j as f64, k as f64];
            let in_brain = pt.iter().map(|x| (x - c).powi(2)).sum::<f64>() <= spec.brain_radius.powi(2);
            let rho = (0..3).map(|a| ((pt[a] - g.center[a]) / g.radii[a]).powi(2)).sum::<f64>().sqrt();
            let want = match (in_brain, rho) {
                (false, _) => None,
                (true, r) if r <= spec.necrosis_frac => Some(COLORS[0]),
                (true, r) if r <= spec.enhancing_frac => Some(COLORS[2]),
                (true, r) if r <= 1.0 => Some(COLORS[1]),
                _ => None,
            };
            let px = p.pixel(j, i);
            match want {
                Some(col) => assert_eq!(px, col, "({i}, {j})"),
                None => assert!(px[0] == px[1] && px[1] == px[2], "({i}, {j}) should be gray"),
            }
        }
    }
}

#[test]
fn config_file_flags_and_rejections() {
    let text = "# run\nepochs = 5\nactivation = relu   # trial 1\n\nlearning_rate=0.001\n";
    let mut c = CliConfig::parse(text).unwrap();
    assert_eq!(c.get("epochs"), Some("5"));
    c.apply_overrides(["epochs=7", "seed = 3"]).unwrap();
    let t = c.train_config().unwrap();
    assert_eq!((t.epochs, t.seed, t.activation, t.learning_rate, t.batch_size), (7, 3, Activation::Relu, 1e-3, 2));
    assert_eq!(CliConfig::parse(&c.render()).unwrap(), c);
    assert!(c.render().contains("# raw_dir unset"));

    let err = CliConfig::parse("epochz = 3").unwrap_err();
    assert!(matches!(err, Error::Config(ref m) if m.contains("epochz")));
    assert_eq!(err.exit_kind(), ExitKind::Usage);
    assert!(CliConfig::parse("just words").is_err());
    assert!(c.apply_overrides(["nope=1"]).is_err());

    let mut bad = CliConfig::default();
    bad.set("learning_rate", "-1").unwrap();
    assert_eq!(bad.train_config().unwrap_err().exit_kind(), ExitKind::Usage);
    bad.set("learning_rate", "abc").unwrap();
    assert_eq!(bad.train_config().unwrap_err().exit_kind(), ExitKind::Usage);
    assert!(matches!(CliConfig::default().path("data_dir"), Err(Error::Config(_))));
}

#[test]
fn default_config_matches_reference_training_settings() {
    let t = CliConfig::default().train_config().unwrap();
    assert_eq!((t.learning_rate, t.batch_size, t.activation), (1e-4, 2, Activation::LeakyRelu));
    let s = CliConfig::default().phantom_spec().unwrap();
    assert_eq!(s.extent, 32);
}
