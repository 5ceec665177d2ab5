use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde_json::json;
use surfreg::eval::{registration_error, run_benchmark, write_records_csv, Method};
use surfreg::net::{match_pair as run_matcher, NetworkParams};
use surfreg::ply::{read_ply_file, write_ply_file, PlyFormat};
use surfreg::registration::{predicted_displacements, register as run_registration};
use surfreg::synth::dataset::{load_mesh_ply, read_sample};
use surfreg::synth::{generate_dataset, load_split, Manifest, SamplePair, Split};
use surfreg::train::{train_dataset, write_loss_csv};
use surfreg::{CorrespondenceSet, PointCloud};

use crate::config::{require_dir, require_file, Context};
use crate::error::CliError;
use crate::output::{read_json, write_json, MatchFile, RegistrationFile, ReportFile, RunFile, TrainFile, TransformFile};
use crate::{vis, EvalArgs, ExportVisArgs, GenDataArgs, MatchArgs, PairArgs, RegisterArgs, TrainArgs};

type Outcome = Result<serde_json::Value, CliError>;

fn written(paths: &[PathBuf]) -> serde_json::Value {
    json!({ "written": paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>() })
}

/// The clouds of a pair, plus the full sample when it came from a dataset directory.
struct LoadedPair {
    source: PointCloud,
    target: PointCloud,
    sample: Option<SamplePair>,
}

fn load_pair(args: &PairArgs) -> Result<LoadedPair, CliError> {
    match (&args.sample, &args.source, &args.target) {
        (Some(dir), _, _) => {
            require_dir(dir)?;
            let (_, pair) = read_sample(dir)?;
            Ok(LoadedPair { source: pair.source.clone(), target: pair.target.clone(), sample: Some(pair) })
        }
        (None, Some(s), Some(t)) => {
            require_file(s)?;
            require_file(t)?;
            let cloud = |p: &Path| -> Result<PointCloud, CliError> { Ok(PointCloud::new(read_ply_file(p)?.points)?) };
            Ok(LoadedPair { source: cloud(s)?, target: cloud(t)?, sample: None })
        }
        _ => Err(CliError::Usage("give --sample DIR or both --source and --target".into())),
    }
}

pub fn gen_data(mut ctx: Context, a: GenDataArgs) -> Outcome {
    let cfg = &mut ctx.config.dataset;
    if let Some(v) = a.meshes {
        cfg.n_meshes = v;
    }
    if let Some(v) = a.samples {
        cfg.samples_per_mesh = v;
    }
    if let Some(v) = a.vertices {
        cfg.n_vertices = v;
    }
    if a.test_meshes.is_some() {
        cfg.test_meshes = a.test_meshes;
    }
    cfg.validate()?;
    for p in &a.import_mesh {
        require_file(p)?;
    }
    let imported = a.import_mesh.iter().map(|p| load_mesh_ply(p)).collect::<Result<Vec<_>, _>>()?;
    let root = ctx.out_dir()?.to_path_buf();
    let manifest = generate_dataset(&root, &ctx.config.dataset, ctx.seed, &imported, ctx.force)?;
    let run = RunFile {
        meta: ctx.meta("gen-data"),
        n_samples: manifest.samples.len(),
        n_train: manifest.entries(Split::Train).count(),
        n_test: manifest.entries(Split::Test).count(),
    };
    let run_path = root.join("run.json");
    write_json(&run_path, &run)?;
    Ok(json!({ "written": [root.join("manifest.json").display().to_string(), run_path.display().to_string()],
               "samples": run.n_samples, "train": run.n_train, "test": run.n_test }))
}

pub fn train(mut ctx: Context, a: TrainArgs) -> Outcome {
    let t = &mut ctx.config.train;
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.learning_rate {
        t.learning_rate = v;
    }
    if let Some(v) = a.lr_decay {
        t.lr_decay = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    t.validate()?;
    ctx.config.net.validate()?;
    require_file(&a.data.join("manifest.json"))?;
    let manifest = Manifest::load(&a.data)?;
    manifest.check_split()?;
    let paths = ctx.prepare_outputs(&["checkpoint.bin", "loss.csv", "train.json"])?;
    let (params, log) = train_dataset(&a.data, ctx.config.net.clone(), &ctx.config.train, |e, _| {
        eprintln!("epoch {:>3}  focal {:.5}  visibility {:.5}  total {:.5}", e.epoch, e.focal, e.visibility, e.total);
    })?;
    params.save(&paths[0])?;
    write_loss_csv(BufWriter::new(File::create(&paths[1]).map_err(|e| CliError::path(&paths[1], e))?), &log)?;
    let doc = TrainFile {
        meta: ctx.meta("train"),
        n_train_samples: manifest.entries(Split::Train).count(),
        n_parameters: params.n_scalars(),
        epochs: log,
    };
    write_json(&paths[2], &doc)?;
    Ok(written(&paths))
}

pub fn match_pair(ctx: Context, a: MatchArgs) -> Outcome {
    require_file(&a.checkpoint)?;
    let pair = load_pair(&a.pair)?;
    let params = NetworkParams::load(&a.checkpoint)?;
    let paths = ctx.prepare_outputs(&["matches.json"])?;
    let out = run_matcher(&params, &pair.source, &pair.target)?;
    let doc = MatchFile {
        meta: ctx.meta("match"),
        n_source: pair.source.len(),
        n_target: pair.target.len(),
        matches: out.matches,
        confidence: out.match_confidence,
        visibility: out.visibility.scores,
    };
    write_json(&paths[0], &doc)?;
    Ok(json!({ "written": [paths[0].display().to_string()], "matches": doc.matches.len() }))
}

fn matches_for(path: Option<&Path>, pair: &LoadedPair) -> Result<CorrespondenceSet, CliError> {
    match path {
        Some(p) => {
            require_file(p)?;
            let m: MatchFile = read_json(p)?;
            if (m.n_source, m.n_target) != (pair.source.len(), pair.target.len()) {
                return Err(CliError::path(
                    p,
                    format!(
                        "matches were computed on clouds of {}x{} points, got {}x{}",
                        m.n_source,
                        m.n_target,
                        pair.source.len(),
                        pair.target.len()
                    ),
                ));
            }
            m.matches.check_bounds(pair.source.len(), pair.target.len())?;
            Ok(m.matches)
        }
        None => Ok(pair.sample.as_ref().expect("clap requires --sample with --ground-truth").gt_matches.clone()),
    }
}

pub fn register(mut ctx: Context, a: RegisterArgs) -> Outcome {
    if let Some(n) = a.ransac_iterations {
        ctx.config.benchmark.ransac.n_iterations = n;
    }
    ctx.config.benchmark.ransac.validate()?;
    ctx.config.benchmark.icp.validate()?;
    let pair = load_pair(&a.pair)?;
    let matches = matches_for(if a.ground_truth { None } else { a.matches.as_deref() }, &pair)?;
    let paths = ctx.prepare_outputs(&["transform.json", "registration.json"])?;
    let b = &ctx.config.benchmark;
    let report = run_registration(&matches, &pair.source, &pair.target, &b.ransac, &b.icp)?;
    let re = match (&pair.sample, &report.ransac_failure) {
        (Some(s), None) => {
            Some(registration_error(&s.gt_displacement, &predicted_displacements(&s.source, &report.transform))?)
        }
        _ => None,
    };
    let t = TransformFile {
        meta: ctx.meta("register"),
        transform: report.transform,
        determinant: report.transform.rotation.determinant(),
    };
    write_json(&paths[0], &t)?;
    write_json(&paths[1], &RegistrationFile { meta: ctx.meta("register"), report, registration_error_mm: re })?;
    let mut summary = written(&paths);
    summary["registration_error_mm"] = json!(re);
    Ok(summary)
}

pub fn eval(mut ctx: Context, a: EvalArgs) -> Outcome {
    let split = match a.split.as_str() {
        "train" => Split::Train,
        "test" => Split::Test,
        s => return Err(CliError::Usage(format!("unknown split {s:?} (train or test)"))),
    };
    let b = &mut ctx.config.benchmark;
    if let Some(n) = a.ransac_iterations {
        b.ransac.n_iterations = n;
    }
    b.skip_registration |= a.skip_registration;
    require_file(&a.data.join("manifest.json"))?;
    if let Some(c) = &a.checkpoint {
        require_file(c)?;
    }
    let mut methods = Vec::new();
    for name in &a.methods {
        methods.push(match name.trim() {
            "learned" => {
                let c = a.checkpoint.as_ref().ok_or_else(|| CliError::Usage("method learned needs --checkpoint".into()))?;
                Method::Learned(Box::new(NetworkParams::load(c)?))
            }
            "fpfh" => Method::Fpfh(ctx.config.fpfh.clone()),
            "ground_truth" => Method::GroundTruth,
            other => return Err(CliError::Usage(format!("unknown method {other:?}"))),
        });
    }
    let manifest = Manifest::load(&a.data)?;
    manifest.check_split()?;
    let mut samples: Vec<(String, SamplePair)> =
        load_split(&a.data, &manifest, split)?.into_iter().map(|(e, p)| (e.id, p)).collect();
    if let Some(n) = a.limit {
        samples.truncate(n);
    }
    if samples.is_empty() {
        return Err(CliError::path(&a.data, format!("{} split has no samples", a.split)));
    }
    let paths = ctx.prepare_outputs(&["report.json", "report.txt", "records.csv"])?;
    let (report, records) = run_benchmark(&samples, &methods, &ctx.config.benchmark)?;
    std::fs::write(&paths[1], report.to_text()).map_err(|e| CliError::path(&paths[1], e))?;
    let csv = BufWriter::new(File::create(&paths[2]).map_err(|e| CliError::path(&paths[2], e))?);
    write_records_csv(csv, &report.sigma_mm, &records)?;
    let doc = ReportFile {
        meta: ctx.meta("eval"),
        split: a.split.clone(),
        samples: samples.iter().map(|(id, _)| id.clone()).collect(),
        report,
    };
    write_json(&paths[0], &doc)?;
    Ok(written(&paths))
}

pub fn export_vis(ctx: Context, a: ExportVisArgs) -> Outcome {
    let pair = load_pair(&a.pair)?;
    let matches = matches_for(Some(&a.matches), &pair)?;
    let paths = ctx.prepare_outputs(&["source_vis.ply", "target_vis.ply", "match_segments.ply"])?;
    let (s, t, seg) = vis::colored_pair(&pair.source, &pair.target, &matches);
    for (path, data) in paths.iter().zip([&s, &t, &seg]) {
        write_ply_file(path, data, PlyFormat::Ascii)?;
    }
    let mut summary = written(&paths);
    summary["segments"] = json!(matches.len());
    Ok(summary)
}
