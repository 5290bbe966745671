use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ndarray::{s, Array2};
use rawlens_core::analysis::{
    class_similarity, error_attribution, pertinence_counts, CheckpointEmbedder, EmbeddingBackend, EmbeddingFile,
    PertinenceTable,
};
use rawlens_core::dataset::{scan_dataset, split_dataset, DatasetManifest, Split, SyntheticGestures};
use rawlens_core::imageio::{is_frame_file, read_gray, read_single_channel, write_png16, write_png8, write_tiff_f32};
use rawlens_core::models::{describe, read_checkpoint, write_checkpoint, ModelSpec};
use rawlens_core::optics::{ForwardModel, NoiseSpec, PointSpreadFunction, SceneFrame, SensorMeasurement};
use rawlens_core::recon::{admm_reconstruct, write_residual_csv};
use rawlens_core::resample::resize_bilinear;
use rawlens_core::sampling::{downsample_frame, make_mask};
use rawlens_core::seed::derive_seed;
use rawlens_core::training::{
    evaluate_model, prepare_variant, run_experiment_grid, train_model, ConfusionMatrix, GridData, InputRange,
    LabeledClip,
};
use serde::Serialize;

use crate::config::{AnalysisSlice, EmbeddingSource, ExperimentConfig, PsfKind};
use crate::provenance::RunDir;
use crate::{Cli, Command, CACHE_ENV};

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    if let Command::ExampleConfig = cli.command {
        print!("{}", crate::config::EXAMPLE_CONFIG);
        return Ok(());
    }
    let mut overrides = g.overrides.clone();
    if let Command::Reconstruct(a) = &cli.command {
        overrides.extend(a.overrides()?);
    }
    let mut cfg = ExperimentConfig::load(g.config.as_deref(), &overrides)?;
    if let Some(out) = &g.out {
        cfg.output.dir = out.clone();
    }
    if let Command::Describe(a) = &cli.command {
        let spec = if a.reduced {
            ModelSpec::reduced(a.kind, a.height, a.width)
        } else {
            ModelSpec::standard(a.kind, a.height, a.width)
        };
        let table = describe(&spec)?;
        print!("{table}");
        if g.out.is_some() {
            let mut run = RunDir::create(&cfg.output.dir, g.force)?;
            std::fs::write(run.output("describe.tsv")?, &table)?;
            run.finish("describe", &overrides, cfg.seed, cfg.to_toml()?)?;
        }
        return Ok(());
    }

    let mut run = RunDir::create(&cfg.output.dir, g.force)?;
    let name = match &cli.command {
        Command::Synth(a) => {
            let fx = SyntheticGestures {
                classes: if a.classes.is_empty() { (0..9).collect() } else { a.classes.clone() },
                sequences_per_class: a.sequences_per_class,
                min_frames: a.min_frames,
                max_frames: a.max_frames,
                height: a.height,
                width: a.width,
                seed: cfg.seed,
            };
            let n = fx.write(run.dir())?;
            let desc = serde_json::to_string_pretty(&fx)?;
            std::fs::write(run.output("synthetic.json")?, &desc)?;
            log::info!("wrote {n} sequences to {}", run.dir().display());
            "synth"
        }
        Command::Simulate(a) => {
            simulate(&cfg, &a.input, &mut run)?;
            "simulate"
        }
        Command::Downsample(a) => {
            downsample(&cfg, &a.input, &mut run)?;
            "downsample"
        }
        Command::Reconstruct(a) => {
            reconstruct(&cfg, &a.frames.input, &mut run)?;
            "reconstruct"
        }
        Command::Train => {
            train(&cfg, &mut run)?;
            "train"
        }
        Command::Eval(a) => {
            if let Some(c) = &a.checkpoint {
                cfg.model.checkpoint = Some(c.clone());
            }
            eval(&cfg, a.emit_panels, &mut run)?;
            "eval"
        }
        Command::Grid(a) => {
            grid(&cfg, a.parallel, &mut run)?;
            "grid"
        }
        Command::Analyze => {
            analyze(&cfg, &mut run)?;
            "analyze"
        }
        Command::Describe(_) | Command::ExampleConfig => unreachable!("handled above"),
    };
    run.finish(name, &overrides, cfg.seed, cfg.to_toml()?)?;
    Ok(())
}

/// Frame files of `dir` in name order.
pub fn frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_frame_file(p))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no frame images in {}", dir.display());
    }
    Ok(files)
}

fn read_frames(cfg: &ExperimentConfig, dir: &Path, run: &mut RunDir) -> Result<Vec<(PathBuf, Array2<f64>)>> {
    let mut out: Vec<(PathBuf, Array2<f64>)> = Vec::new();
    for p in frame_files(dir)? {
        run.input_file(&p)?;
        let f = read_gray(&p, cfg.dataset.color)?;
        if let Some((first, f0)) = out.first() {
            if f0.dim() != f.dim() {
                bail!("{} is {:?} but {} is {:?}", p.display(), f.dim(), first.display(), f0.dim());
            }
        }
        out.push((p, f));
    }
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "frame".into())
}

pub fn build_psf(cfg: &ExperimentConfig) -> Result<PointSpreadFunction> {
    let o = &cfg.optics;
    Ok(match o.psf {
        PsfKind::Delta => PointSpreadFunction::delta(o.psf_height, o.psf_width),
        PsfKind::Gaussian => PointSpreadFunction::gaussian(o.psf_height, o.psf_width, o.psf_sigma)?,
        PsfKind::Caustic => PointSpreadFunction::caustic(o.psf_height, o.psf_width, derive_seed(cfg.seed, "psf"))?,
        PsfKind::File => {
            let path = o.psf_path.as_ref().context("optics.psf_path is required")?;
            let name = stem(path);
            PointSpreadFunction::new(read_single_channel(path)?, name)?
        }
    })
}

pub fn build_optics(cfg: &ExperimentConfig, scene: (usize, usize), run: &mut RunDir) -> Result<ForwardModel> {
    if let Some(p) = cfg.optics.psf_path.as_ref().filter(|_| cfg.optics.psf == PsfKind::File) {
        run.input_file(p)?;
    }
    let psf = build_psf(cfg)?;
    let geometry = cfg.optics.geometry(scene, psf.dim());
    Ok(ForwardModel::new(psf, geometry)?)
}

fn simulate(cfg: &ExperimentConfig, input: &Path, run: &mut RunDir) -> Result<()> {
    let frames = read_frames(cfg, input, run)?;
    let optics = build_optics(cfg, frames[0].1.dim(), run)?;
    write_tiff_f32(&run.output("psf.tiff")?, optics.psf().grid())?;
    let noise = NoiseSpec::gaussian(cfg.optics.noise_sigma, derive_seed(cfg.seed, "noise"));
    for (i, (p, f)) in frames.into_iter().enumerate() {
        let m = optics.measure(&SceneFrame::new(f)?, &noise.for_frame(i))?;
        write_tiff_f32(&run.output(format!("raw/{}.tiff", stem(&p)))?, &m.pixels)?;
    }
    Ok(())
}

fn downsample(cfg: &ExperimentConfig, input: &Path, run: &mut RunDir) -> Result<()> {
    let spec = cfg.sampling.spec(derive_seed(cfg.seed, "sampling")).context("sampling.method is \"none\"")?;
    let frames = read_frames(cfg, input, run)?;
    let (h, w) = frames[0].1.dim();
    let mask = make_mask(&spec, (w, h))?;
    std::fs::write(run.output("mask.json")?, serde_json::to_string(&mask)?)?;
    for (p, f) in &frames {
        let out = downsample_frame(f.view(), &mask)?;
        write_tiff_f32(&run.output(format!("sampled/{}.tiff", stem(p)))?, &out)?;
    }
    log::info!("{} frames, {} valid pixels each", frames.len(), mask.valid_pixels());
    Ok(())
}

#[derive(Serialize)]
struct ReconSummary {
    frame: String,
    iterations: usize,
    converged: bool,
    final_primal: f64,
    final_dual: f64,
}

fn reconstruct(cfg: &ExperimentConfig, input: &Path, run: &mut RunDir) -> Result<()> {
    let frames = read_frames(cfg, input, run)?;
    let optics = build_optics(cfg, frames[0].1.dim(), run)?;
    let mut summary = Vec::new();
    for (p, f) in frames {
        let name = stem(&p);
        let m = SensorMeasurement { pixels: f, noise_applied: false };
        let r = admm_reconstruct(&m, &optics, &cfg.recon.admm)?;
        write_png16(&run.output(format!("recon/{name}.png"))?, r.frame.pixels())?;
        write_tiff_f32(&run.output(format!("recon/{name}.tiff"))?, &r.unclamped)?;
        write_residual_csv(&run.output(format!("residuals/{name}.csv"))?, &r.history)?;
        let last = r.history.last();
        summary.push(ReconSummary {
            frame: name,
            iterations: r.history.len(),
            converged: r.converged,
            final_primal: last.map_or(f64::NAN, |h| h.primal),
            final_dual: last.map_or(f64::NAN, |h| h.dual),
        });
    }
    std::fs::write(run.output("summary.json")?, serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

/// Scan and split the configured dataset, reusing a cached manifest when
/// the cache directory is set.
pub fn load_manifest(cfg: &ExperimentConfig, run: &mut RunDir) -> Result<DatasetManifest> {
    let d = &cfg.dataset;
    let manifest = if let Some(p) = &d.manifest {
        run.input_file(p)?;
        DatasetManifest::from_json(&std::fs::read_to_string(p)?)?
    } else {
        let root = d.root.as_ref().context("dataset.root or dataset.manifest is required")?;
        let split = cfg.split_config();
        let key = rawlens_core::seed::digest_hex(
            serde_json::to_string(&(root.canonicalize()?, d.layout, d.min_frames, split))?.as_bytes(),
        );
        let cached = std::env::var_os(CACHE_ENV).map(|c| PathBuf::from(c).join("manifests").join(format!("{key}.json")));
        match cached.as_ref().filter(|p| p.is_file()) {
            Some(p) => {
                log::info!("using cached manifest {}", p.display());
                DatasetManifest::from_json(&std::fs::read_to_string(p)?)?
            }
            None => {
                let m = split_dataset(&scan_dataset(root, d.layout, d.min_frames)?, &split)?;
                if let Some(p) = &cached {
                    std::fs::create_dir_all(p.parent().expect("joined path"))?;
                    std::fs::write(p, m.to_json()?)?;
                }
                m
            }
        }
    };
    let json = manifest.to_json()?;
    run.input_digest("dataset manifest", json.as_bytes());
    std::fs::write(run.output("dataset_manifest.json")?, json)?;
    log::info!(
        "{} sequences, {} classes, {} illuminations",
        manifest.sequences.len(),
        manifest.class_count(),
        manifest.illumination_count()
    );
    Ok(manifest)
}

fn grid_data<'a>(cfg: &ExperimentConfig, manifest: &'a DatasetManifest) -> GridData<'a> {
    GridData::Dataset {
        manifest,
        height: cfg.dataset.height,
        width: cfg.dataset.width,
        policy: cfg.dataset.color,
        clip_len: cfg.dataset.clip_len,
        max_per_sequence: cfg.dataset.max_per_sequence,
        seed: derive_seed(cfg.seed, "subvideos"),
    }
}

fn needs_optics(cells: &[rawlens_core::training::GridCell]) -> bool {
    cells.iter().any(|c| c.variant != rawlens_core::training::DataVariant::Original)
}

fn train(cfg: &ExperimentConfig, run: &mut RunDir) -> Result<()> {
    let manifest = load_manifest(cfg, run)?;
    let data = grid_data(cfg, &manifest);
    let cell = cfg.model_cell();
    let gc = cfg.grid_config(vec![cell.clone()]);
    let optics = if needs_optics(std::slice::from_ref(&cell)) {
        Some(build_optics(cfg, (cfg.dataset.height, cfg.dataset.width), run)?)
    } else {
        None
    };
    let prepared = prepare_variant(&gc, &data, optics.as_ref(), &cell, &[Split::Train, Split::Val])?;
    let (_, h, w) = prepared.train.first().context("train split is empty")?.frames.dim();
    let spec = gc.spec(cell.model, h, w);
    let trained = train_model(&spec, &prepared.train, &prepared.val, &gc.train)?;
    write_checkpoint(&run.output("model.ckpt")?, &trained.model, &trained.meta)?;
    trained.history.write_csv(&run.output("history.csv")?)?;
    std::fs::write(run.output("history.json")?, serde_json::to_string_pretty(&trained.history)?)?;
    log::info!(
        "best validation accuracy {:.4} at epoch {}",
        trained.history.best_val_accuracy,
        trained.history.best_epoch
    );
    Ok(())
}

fn eval(cfg: &ExperimentConfig, panels: Option<usize>, run: &mut RunDir) -> Result<()> {
    let ckpt = cfg.model.checkpoint.as_ref().context("model.checkpoint or --checkpoint is required")?;
    run.input_file(ckpt)?;
    let (mut model, meta) = read_checkpoint(ckpt)?;
    let manifest = load_manifest(cfg, run)?;
    let data = grid_data(cfg, &manifest);
    let mut cell = cfg.model_cell();
    cell.model = model.spec().kind;
    let gc = cfg.grid_config(vec![cell.clone()]);
    let optics = if needs_optics(std::slice::from_ref(&cell)) {
        Some(build_optics(cfg, (cfg.dataset.height, cfg.dataset.width), run)?)
    } else {
        None
    };
    // The restorer variant refits on the train split, so it is materialized too.
    let splits: &[Split] = if cell.variant == rawlens_core::training::DataVariant::Unet {
        &[Split::Train, Split::Test]
    } else {
        &[Split::Test]
    };
    let prepared = prepare_variant(&gc, &data, optics.as_ref(), &cell, splits)?;
    let range = meta.input_range.map_or(InputRange::identity(), InputRange::from_array);
    let e = evaluate_model(&mut model, &prepared.test, &range, gc.train.batch_size)?;
    std::fs::write(run.output("evaluation.json")?, serde_json::to_string_pretty(&e)?)?;
    e.confusion.write_csv(&run.output("confusion.csv")?)?;
    let mut w = csv::Writer::from_path(run.output("predictions.csv")?)?;
    w.write_record(["id", "illumination", "true", "predicted"])?;
    for (c, p) in prepared.test.iter().zip(&e.predictions) {
        w.write_record([c.id.clone(), c.illumination.to_string(), c.label.to_string(), p.to_string()])?;
    }
    w.flush()?;
    log::info!("test accuracy {:.4} ({}/{})", e.accuracy, e.correct, e.total);
    if let Some(n) = panels {
        let take = n.min(prepared.test.len());
        write_png8(&run.output("panels.png")?, &panel_grid(&prepared.test[..take]))?;
        let mut w = csv::Writer::from_path(run.output("panels.csv")?)?;
        w.write_record(["row", "id", "true", "predicted"])?;
        for (i, c) in prepared.test[..take].iter().enumerate() {
            w.write_record([i.to_string(), c.id.clone(), c.label.to_string(), e.predictions[i].to_string()])?;
        }
        w.flush()?;
    }
    Ok(())
}

/// One row per clip, one column per frame, each clip scaled to its own range.
pub fn panel_grid(clips: &[LabeledClip]) -> Array2<f64> {
    const GAP: usize = 2;
    let Some(first) = clips.first() else {
        return Array2::zeros((1, 1));
    };
    let (t, h, w) = first.frames.dim();
    let mut out = Array2::from_elem((clips.len() * (h + GAP) - GAP, t * (w + GAP) - GAP), 1.0);
    for (r, c) in clips.iter().enumerate() {
        let lo = c.frames.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = c.frames.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        for (k, f) in c.frames.outer_iter().enumerate().take(t) {
            let (y, x) = (r * (h + GAP), k * (w + GAP));
            out.slice_mut(s![y..y + h, x..x + w]).assign(&f.mapv(|v| (v - lo) / span));
        }
    }
    out
}

fn grid(cfg: &ExperimentConfig, parallel: usize, run: &mut RunDir) -> Result<()> {
    let cells = cfg.grid_cells();
    if cells.is_empty() {
        bail!("no grid cells configured; add [[grid.cells]] or grid.sampling_cells");
    }
    let manifest = load_manifest(cfg, run)?;
    let data = grid_data(cfg, &manifest);
    let gc = cfg.grid_config(cells);
    let optics = if needs_optics(&gc.cells) {
        Some(build_optics(cfg, (cfg.dataset.height, cfg.dataset.width), run)?)
    } else {
        None
    };
    let report = run_experiment_grid(&gc, &data, optics.as_ref(), parallel)?;
    report.write_json(&run.output("report.json")?)?;
    report.write_csv(&run.output("report.csv")?)?;
    for r in &report.rows {
        r.evaluation.confusion.write_csv(&run.output(format!("confusion/{}.csv", r.name))?)?;
        log::info!("{}: {:.4}", r.name, r.evaluation.accuracy);
    }
    Ok(())
}

fn read_confusion(path: &Path) -> Result<ConfusionMatrix> {
    let mut r = csv::Reader::from_path(path)?;
    let mut counts = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row: std::result::Result<Vec<u64>, _> = rec.iter().skip(1).map(|v| v.trim().parse::<u64>()).collect();
        counts.push(row.with_context(|| format!("{}: non-integer count", path.display()))?);
    }
    Ok(ConfusionMatrix::from_counts(counts)?)
}

fn analyze(cfg: &ExperimentConfig, run: &mut RunDir) -> Result<()> {
    let a = &cfg.analysis;
    let mut did = false;
    if let Some(p) = &a.confusion {
        run.input_file(p)?;
        let attr = error_attribution(&read_confusion(p)?)?;
        std::fs::write(run.output("error_attribution.json")?, serde_json::to_string_pretty(&attr)?)?;
        log::info!("errors: shape {}, motion {}, both {}", attr.shape, attr.motion, attr.both);
        did = true;
    }
    let wants_embeddings = a.embeddings.is_some() || a.checkpoint.is_some();
    if wants_embeddings {
        let manifest = load_manifest(cfg, run)?;
        let mut backend: Box<dyn EmbeddingBackend> = match a.backend {
            EmbeddingSource::File => {
                let p = a.embeddings.as_ref().context("analysis.embeddings is required for the file backend")?;
                run.input_file(p)?;
                Box::new(EmbeddingFile::load(p)?)
            }
            EmbeddingSource::Checkpoint => {
                let p = a.checkpoint.as_ref().context("analysis.checkpoint is required for the checkpoint backend")?;
                run.input_file(p)?;
                Box::new(CheckpointEmbedder::new(stem(p), read_checkpoint(p)?.0)?)
            }
        };
        let optics = match cfg.model.variant {
            rawlens_core::training::DataVariant::Lensless if a.backend == EmbeddingSource::Checkpoint => {
                Some(build_optics(cfg, (cfg.dataset.height, cfg.dataset.width), run)?)
            }
            _ => None,
        };
        let wanted: Vec<u8> = a.evaluated_classes.iter().chain(&a.candidate_classes).copied().collect();
        let mut by_class: BTreeMap<u8, Vec<Vec<f64>>> = BTreeMap::new();
        for seq in &manifest.sequences {
            let in_slice = match a.slice {
                AnalysisSlice::All => true,
                AnalysisSlice::Train => manifest.split_of(&seq.id) == Some(Split::Train),
                AnalysisSlice::Val => manifest.split_of(&seq.id) == Some(Split::Val),
                AnalysisSlice::Test => manifest.split_of(&seq.id) == Some(Split::Test),
            };
            if !in_slice || !wanted.contains(&seq.class_id) {
                continue;
            }
            let v = if a.backend == EmbeddingSource::File {
                backend.embed(&seq.id, None)?
            } else {
                let path = seq
                    .frame_paths
                    .get(a.frame_index)
                    .with_context(|| format!("{} has no frame {}", seq.id, a.frame_index))?;
                let img = read_gray(path, cfg.dataset.color)?;
                let mut img = resize_bilinear(img.view(), (cfg.dataset.height, cfg.dataset.width));
                img.mapv_inplace(|v| v.clamp(0.0, 1.0));
                if let Some(o) = &optics {
                    img = o.apply(img.view())?;
                }
                backend.embed(&seq.id, Some(&img))?
            };
            by_class.entry(seq.class_id).or_default().push(v);
        }
        let rows = a
            .evaluated_classes
            .iter()
            .map(|&c| pertinence_counts(&by_class, c, &a.candidate_classes))
            .collect::<rawlens_core::Result<Vec<_>>>()?;
        let table = PertinenceTable { backend: backend.name().to_string(), rows };
        std::fs::write(run.output("pertinence.csv")?, table.to_csv())?;
        std::fs::write(run.output("pertinence.json")?, serde_json::to_string_pretty(&table)?)?;
        let sim = class_similarity(&by_class)?;
        let mut w = csv::Writer::from_path(run.output("class_similarity.csv")?)?;
        w.write_record(["class_a", "class_b", "mean_cosine"])?;
        for ((x, y), v) in sim {
            w.write_record([x.to_string(), y.to_string(), v.to_string()])?;
        }
        w.flush()?;
        did = true;
    }
    if !did {
        bail!("nothing to analyze: set analysis.confusion, analysis.embeddings, or analysis.checkpoint");
    }
    Ok(())
}
