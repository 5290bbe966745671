use ndarray::Array2;
use rawlens_core::clip::{ClipKind, VideoClip};
use rawlens_core::dataset::{scan_dataset, split_dataset, Layout, SplitConfig, SyntheticGestures};
use rawlens_core::imageio::ColorPolicy;
use rawlens_core::models::{read_checkpoint, write_checkpoint, ModelKind, ModelSpec};
use rawlens_core::optics::{simulate_video, ForwardModel, NoiseSpec, PointSpreadFunction, SensorGeometry};
use rawlens_core::recon::{psnr, reconstruct_clip, AdmmParams};
use rawlens_core::sampling::{downsample_clip, make_mask, SampleMethod, SampleSpec};
use rawlens_core::training::{
    clip_from_frames, predict, run_experiment_grid, train_model, DataVariant, GridCell, GridConfig, GridData,
    LabeledClip, TrainConfig,
};

fn small_fixture() -> SyntheticGestures {
    SyntheticGestures {
        classes: vec![0, 4, 8],
        sequences_per_class: 5,
        height: 32,
        width: 48,
        min_frames: 16,
        max_frames: 20,
        seed: 3,
    }
}

fn clips(fx: &SyntheticGestures) -> Vec<LabeledClip> {
    let mut out = Vec::new();
    for &c in &fx.classes {
        for k in 0..fx.sequences_per_class {
            let frames = fx.render(c, k);
            let picked: Vec<Array2<f64>> = (0..8).map(|m| frames[m * 2].clone()).collect();
            out.push(clip_from_frames(&format!("{c}/{k}"), &picked, c, (k % 5) as u8));
        }
    }
    out
}

#[test]
fn lensless_grid_cell_runs_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let fx = small_fixture();
    fx.write(dir.path()).unwrap();
    let manifest = split_dataset(
        &scan_dataset(dir.path(), Layout::Cambridge, 8).unwrap(),
        &SplitConfig { seed: 1, ..Default::default() },
    )
    .unwrap();
    assert_eq!(manifest.sequences.len(), 15);
    let data = GridData::Dataset {
        manifest: &manifest,
        height: 32,
        width: 48,
        policy: ColorPolicy::Luma,
        clip_len: 8,
        max_per_sequence: 2,
        seed: 1,
    };
    let optics = ForwardModel::matched(PointSpreadFunction::caustic(7, 7, 1).unwrap(), (32, 48)).unwrap();
    let mut cfg = GridConfig::new(vec![GridCell {
        name: "raw".into(),
        variant: DataVariant::Lensless,
        model: ModelKind::Raw3dnet,
        sampling: Some(SampleSpec::new(SampleMethod::Resize, 24, 16)),
    }]);
    cfg.reduced = true;
    cfg.train = TrainConfig { epochs: 1, batch_size: 4, ..Default::default() };
    let report = run_experiment_grid(&cfg, &data, Some(&optics), 1).unwrap();
    let row = report.row("raw").unwrap();
    assert_eq!((row.input_h, row.input_w), (16, 24));
    assert_eq!(row.pixel_budget, 16 * 24);
    assert!(row.test_clips > 0);
    assert_eq!(row.evaluation.confusion.total() as usize, row.test_clips);
    assert!((0.0..=1.0).contains(&row.evaluation.accuracy));
}

#[test]
fn checkpoint_round_trip_keeps_predictions() {
    let all = clips(&small_fixture());
    let spec = ModelSpec::reduced(ModelKind::Resnet3d, 32, 48);
    let cfg = TrainConfig { epochs: 1, batch_size: 5, seed: 2, ..Default::default() };
    let mut t = train_model(&spec, &all, &all, &cfg).unwrap();
    let range = t.input_range();
    let before = predict(&mut t.model, &all, &range, 4).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    write_checkpoint(&path, &t.model, &t.meta).unwrap();
    let (mut back, meta) = read_checkpoint(&path).unwrap();
    assert_eq!(meta, t.meta);
    assert_eq!(back.spec(), &spec);
    assert_eq!(predict(&mut back, &all, &range, 4).unwrap(), before);
}

#[test]
fn simulate_sample_and_reconstruct_a_clip() {
    let fx = small_fixture();
    let frames: Vec<Array2<f64>> = fx.render(4, 0).into_iter().take(8).collect();
    let scene = VideoClip::from_frames(&frames, ClipKind::Scene, None).unwrap();
    let psf = PointSpreadFunction::gaussian(5, 5, 1.0).unwrap();
    let geometry = SensorGeometry::matched((32, 48), (5, 5));
    let raw = simulate_video(&scene, &psf, &geometry, &NoiseSpec::none()).unwrap();
    assert_eq!(raw.len(), 8);
    assert_eq!(raw.kind(), ClipKind::Raw);

    let mask = make_mask(&SampleSpec::new(SampleMethod::Uniform, 24, 16), (48, 32)).unwrap();
    let small = downsample_clip(&raw, &mask).unwrap();
    assert_eq!(small.frame(0).dim(), (16, 24));

    let model = ForwardModel::new(psf, geometry).unwrap();
    let params = AdmmParams { max_iters: 100, ..Default::default() };
    let (rec, histories) = reconstruct_clip(&raw, &model, &params).unwrap();
    assert_eq!(rec.kind(), ClipKind::Reconstructed);
    assert_eq!(histories.len(), 8);
    for i in 0..8 {
        assert!(psnr(rec.frame(i), scene.frame(i)) > 20.0, "frame {i}");
    }
}
