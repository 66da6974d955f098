use std::path::Path;

use voxelgate::nifti;
use voxelgate::phantom_io;
use voxelgate::pipeline::{self, MultiModalCase};
use voxelgate::Error;
use voxelgate_core::phantom::{self, PhantomSpec, TumorGeometry};
use voxelgate_core::preprocess::{self, LabelMap};

fn sums(m: &phantom_io::Manifest, root: &Path) -> Vec<(String, String)> {
    m.iter().map(|(p, s)| (p.strip_prefix(root).unwrap().display().to_string(), s.clone())).collect()
}

#[test]
fn phantom_files_are_named_and_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let spec = PhantomSpec::for_extent(16, 7);
    let ma = phantom_io::generate_to_dir(a.path(), &spec, 2).unwrap();
    let mb = phantom_io::generate_to_dir(b.path(), &spec, 2).unwrap();
    assert_eq!(ma.len(), 8);
    assert_eq!(sums(&ma, a.path()), sums(&mb, b.path()));
    let id = phantom::case_id(1);
    for m in ["flair", "t1ce", "t2", "seg"] {
        assert!(a.path().join(&id).join(format!("{id}_{m}.nii.gz")).is_file());
    }
    let other = tempfile::tempdir().unwrap();
    let mc = phantom_io::generate_to_dir(other.path(), &PhantomSpec::for_extent(16, 8), 2).unwrap();
    assert_ne!(sums(&ma, a.path()), sums(&mc, other.path()));
}

#[test]
fn rasterized_labels_match_analytic_ellipsoids() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = PhantomSpec::for_extent(32, 4);
    spec.noise = 0.0;
    phantom_io::generate_to_dir(dir.path(), &spec, 1).unwrap();
    let id = phantom::case_id(0);
    let seg = nifti::read_volume(&dir.path().join(&id).join(format!("{id}_seg.nii.gz"))).unwrap();
    let flair = nifti::read_volume(&dir.path().join(&id).join(format!("{id}_flair.nii.gz"))).unwrap();
    let g = phantom::draw_geometry(&spec, 0);
    let c = (spec.extent as f64 - 1.0) / 2.0;
    let mut counts = [0usize; 5];
    for i in 0..32 {
        for j in 0..32 {
            for k in 0..32 {
                let p = [i as f64, j as f64, k as f64];
                let in_brain = p.iter().map(|x| (x - c) * (x - c)).sum::<f64>() <= spec.brain_radius * spec.brain_radius;
                let rho = (0..3).map(|a| ((p[a] - g.center[a]) / g.radii[a]).powi(2)).sum::<f64>().sqrt();
                let (raw, mean) = if !in_brain {
                    (0.0, 0.0)
                } else if rho <= spec.necrosis_frac {
                    (1.0, spec.intensities.necrosis[0])
                } else if rho <= spec.enhancing_frac {
                    (4.0, spec.intensities.enhancing[0])
                } else if rho <= 1.0 {
                    (2.0, spec.intensities.edema[0])
                } else {
                    (0.0, spec.intensities.brain[0])
                };
                let v = (i * 32 + j) * 32 + k;
                assert_eq!(seg.data.values()[v], raw, "label at {p:?}");
                assert_eq!(flair.data.values()[v], mean as f32 as f64, "flair at {p:?}");
                counts[raw as usize] += 1;
            }
        }
    }
    assert!(counts[1] > 0 && counts[2] > 0 && counts[4] > 0);
    assert!((counts[1] + counts[2] + counts[4]) as f64 / 32768.0 >= 0.01);
}

#[test]
fn generated_phantoms_cover_at_least_one_percent() {
    let spec = PhantomSpec::for_extent(32, 99);
    for case in phantom::generate_phantoms(&spec, 12).unwrap() {
        assert!(case.tumor_fraction() >= 0.01, "{} {}", case.case_id, case.tumor_fraction());
    }
    let bad = PhantomSpec::for_extent(10, 0).with_radius(20.0);
    assert!(matches!(phantom::generate_phantoms(&bad, 1), Err(voxelgate_core::Error::SpecInfeasible(_))));
}

#[test]
fn preprocessing_phantoms_scales_remaps_and_crops() {
    let raw = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let spec = PhantomSpec::for_extent(32, 5);
    phantom_io::generate_to_dir(raw.path(), &spec, 3).unwrap();
    for dir in pipeline::case_dirs(raw.path()).unwrap() {
        let case = MultiModalCase::from_dir(&dir).unwrap();
        assert!(!pipeline::is_cached(out.path(), &case).unwrap());
        let o = pipeline::preprocess_case(&case, &LabelMap::default()).unwrap();
        let s = o.retained().expect("phantoms pass the mask filter");
        let [l, w, d] = s.spatial().unwrap();
        assert!(l < 32 && w < 32 && d < 32, "cropped to the brain");
        let v = s.image.values();
        assert!(v.iter().all(|&x| (0.0..=1.0).contains(&x)));
        for ch in v.chunks(l * w * d) {
            assert_eq!(ch.iter().cloned().fold(f32::MIN, f32::max), 1.0);
        }
        let labels = s.labels.as_ref().unwrap();
        assert!(labels.values().iter().all(|&c| c <= 3));
        assert!(labels.values().contains(&3), "raw 4 remapped to 3");
        pipeline::persist(out.path(), &o).unwrap();
        assert!(pipeline::is_cached(out.path(), &case).unwrap());
        let back = pipeline::load_stacked(out.path(), &case.case_id).unwrap();
        assert_eq!(&back, s);
        let meta = pipeline::read_meta(out.path(), &case.case_id).unwrap();
        assert_eq!(meta["channel_order"], "FLAIR,T1CE,T2");
        assert_eq!(meta["status"], "retained");
        let crop = pipeline::crop_of(&meta).unwrap();
        assert_eq!(crop.extents(), [l, w, d]);
    }
    assert_eq!(pipeline::retained_ids(out.path()).unwrap().len(), 3);
}

/// Writes phantom `index` with a tumor of the given radius.
pub fn write_with_radius(root: &Path, spec: &PhantomSpec, index: usize, r: f64) {
    let c = spec.center();
    let g = TumorGeometry { center: [c; 3], radii: [r; 3] };
    let case = phantom::rasterize(spec, phantom::case_id(index), index, g);
    phantom_io::write_case(root, &case).unwrap();
}

#[test]
fn tiny_tumor_is_filtered() {
    let raw = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let spec = PhantomSpec::for_extent(32, 1);
    write_with_radius(raw.path(), &spec, 0, 2.6);
    let case = MultiModalCase::from_dir(&raw.path().join(phantom::case_id(0))).unwrap();
    let o = pipeline::preprocess_case(&case, &LabelMap::default()).unwrap();
    match &o.result {
        preprocess::Preprocessed::Filtered { mask_fraction, .. } => assert!(*mask_fraction < 0.01 && *mask_fraction > 0.0),
        r => panic!("expected filtered, got {r:?}"),
    }
    pipeline::persist(out.path(), &o).unwrap();
    assert!(pipeline::retained_ids(out.path()).unwrap().is_empty());
    assert!(!pipeline::image_path(out.path(), &case.case_id).exists());
}

#[test]
fn cache_notices_changed_sources() {
    let raw = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    phantom_io::generate_to_dir(raw.path(), &PhantomSpec::for_extent(16, 2), 1).unwrap();
    let dir = &pipeline::case_dirs(raw.path()).unwrap()[0];
    let case = MultiModalCase::from_dir(dir).unwrap();
    pipeline::persist(out.path(), &pipeline::preprocess_case(&case, &LabelMap::default()).unwrap()).unwrap();
    assert!(pipeline::is_cached(out.path(), &case).unwrap());
    phantom_io::generate_to_dir(raw.path(), &PhantomSpec::for_extent(16, 3), 1).unwrap();
    assert!(!pipeline::is_cached(out.path(), &case).unwrap());
}

#[test]
fn missing_modality_is_a_data_error() {
    let raw = tempfile::tempdir().unwrap();
    phantom_io::generate_to_dir(raw.path(), &PhantomSpec::for_extent(16, 2), 1).unwrap();
    let id = phantom::case_id(0);
    std::fs::remove_file(raw.path().join(&id).join(format!("{id}_t2.nii.gz"))).unwrap();
    let err = MultiModalCase::from_dir(&raw.path().join(&id)).unwrap_err();
    assert!(matches!(err, Error::Data(ref m) if m.contains("t2")));
    assert_eq!(err.exit_kind(), voxelgate::ExitKind::Data);
}

#[test]
fn unexpected_raw_label_is_reported() {
    let raw = tempfile::tempdir().unwrap();
    let spec = PhantomSpec::for_extent(16, 2);
    let mut case = phantom::generate_phantoms(&spec, 1).unwrap().remove(0);
    case.seg[0] = 3;
    phantom_io::write_case(raw.path(), &case).unwrap();
    let mc = MultiModalCase::from_dir(&raw.path().join(&case.case_id)).unwrap();
    let err = pipeline::preprocess_case(&mc, &LabelMap::default()).unwrap_err();
    assert!(matches!(err, Error::Core(voxelgate_core::Error::UnexpectedLabel(3))));
}

#[test]
fn split_sizes_are_exact() {
    for (n, want) in [(10usize, (6, 2, 2)), (1200, (720, 240, 240)), (7, (4, 1, 2))] {
        let ids: Vec<String> = (0..n).map(|i| format!("case{i:05}")).collect();
        let s = preprocess::split_dataset(&ids, 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), want);
        let mut all: Vec<String> = s.train.iter().chain(&s.validation).chain(&s.test).cloned().collect();
        all.sort();
        assert_eq!(all, ids);
        assert_eq!(preprocess::split_dataset(&ids, 1).unwrap(), s);
        assert_ne!(preprocess::split_dataset(&ids, 2).unwrap().train, s.train);
    }
}
