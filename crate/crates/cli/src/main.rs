//! `anchorloc` command-line front end.
//!
//! Every command exits with 0 on success, 2 when its input or configuration
//! is invalid and 3 when a pipeline stage fails. `ANCHORLOC_THREADS` caps
//! the worker threads.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use anchorloc::geom::{read_poses, write_poses, FrameId, Pose};
use anchorloc::harness::{
    evaluate, load_intrinsics, load_map_frames, load_query_frames, localize_stage, read_provenance, refine_stage,
    restore_frames, run_pipeline, write_provenance, PipelineConfig, PipelineError, ProvenanceRow, Threshold,
};
use anchorloc::mapdb::{build_map, load_database, save_database, SceneDatabase};
use anchorloc::synth::{write_dataset, DatasetSpec, SynthError};
use anchorloc::temporal::{read_log, write_log, LogRecord};

const THREADS_VAR: &str = "ANCHORLOC_THREADS";

#[derive(Parser)]
#[command(name = "anchorloc", version, about = "Sequential 6-DoF relocalization against a prebuilt scene map")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a JSON specification.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a scene database from posed map frames.
    Map(MapArgs),
    /// Anchor query frames by global matching and temporal propagation.
    Localize(LocalizeArgs),
    /// Register the frames a localization log left unanchored.
    Refine(RefineArgs),
    /// Score a trajectory against ground truth.
    Eval(EvalArgs),
    /// Run map, localize, refine and evaluate on a dataset directory.
    Run(RunArgs),
}

#[derive(Args)]
struct MapArgs {
    /// Directory of map frames (`.afeat` or `.png`).
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    poses: PathBuf,
    #[arg(long)]
    intrinsics: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    adjacency: Option<usize>,
    #[arg(long = "max-kp")]
    max_kp: Option<usize>,
}

#[derive(Args)]
struct RansacArgs {
    #[arg(long = "ransac-thresh")]
    ransac_thresh: Option<f64>,
    #[arg(long = "ransac-iters")]
    ransac_iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct LocalizeArgs {
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    /// Must agree with the intrinsics stored in the database.
    #[arg(long)]
    intrinsics: Option<PathBuf>,
    /// Anchor poses; the log is written next to it as `localize_log.jsonl`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    nr: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long = "min-inliers")]
    min_inliers: Option<usize>,
    #[arg(long = "global-only")]
    global_only: bool,
    #[command(flatten)]
    ransac: RansacArgs,
}

#[derive(Args)]
struct RefineArgs {
    #[arg(long)]
    db: PathBuf,
    /// Localization log; its header names the query directory and the
    /// localization parameters.
    #[arg(long)]
    state: PathBuf,
    /// Refined poses; `provenance.tsv` is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the query directory named in the log.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    est: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Frames listed here without a pose count as unlocalized.
    #[arg(long)]
    provenance: Option<PathBuf>,
    /// `translation,rotation_deg`; repeatable. Defaults to the standard set.
    #[arg(long = "threshold", value_parser = parse_threshold)]
    thresholds: Vec<Threshold>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory of enhanced query images replacing `dataset/queries`.
    #[arg(long)]
    enhanced: Option<PathBuf>,
    #[arg(long = "global-only")]
    global_only: bool,
    #[arg(long = "no-refine")]
    no_refine: bool,
}

fn parse_threshold(s: &str) -> Result<Threshold, String> {
    let (t, r) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `translation,rotation_deg`, got `{s}`"))?;
    let t: f64 = t.trim().parse().map_err(|e| format!("translation: {e}"))?;
    let r: f64 = r.trim().parse().map_err(|e| format!("rotation: {e}"))?;
    let th = Threshold::new(t, r);
    th.validate().map_err(|e| e.to_string())?;
    Ok(th)
}

fn invalid(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Validation(e.to_string())
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, PipelineError> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn create_parent(path: &Path, stage: &'static str) -> Result<(), PipelineError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => {
            fs::create_dir_all(p).map_err(|e| PipelineError::stage(stage, format!("{}: {e}", p.display())))
        }
        _ => Ok(()),
    }
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.with_file_name(name)
}

fn read_pose_file(path: &Path) -> Result<Vec<(FrameId, Pose)>, PipelineError> {
    let f = fs::File::open(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    read_poses(BufReader::new(f)).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn write_pose_file(path: &Path, poses: &[(FrameId, Pose)], stage: &'static str) -> Result<(), PipelineError> {
    create_parent(path, stage)?;
    let f = fs::File::create(path).map_err(|e| PipelineError::stage(stage, format!("{}: {e}", path.display())))?;
    write_poses(BufWriter::new(f), poses).map_err(|e| PipelineError::stage(stage, e))
}

fn open_database(dir: &Path) -> Result<SceneDatabase, PipelineError> {
    if !dir.is_dir() {
        return Err(invalid(format!("database directory {} does not exist", dir.display())));
    }
    load_database(dir).map_err(|e| PipelineError::stage("load", e))
}

fn synth(spec: &Path, out: &Path) -> Result<(), PipelineError> {
    let text = fs::read_to_string(spec).map_err(|e| invalid(format!("{}: {e}", spec.display())))?;
    let spec: DatasetSpec = serde_json::from_str(&text).map_err(invalid)?;
    let scenario = spec.build().map_err(|e| match e {
        SynthError::InvalidSpec(_) => invalid(e),
        e => PipelineError::stage("synth", e),
    })?;
    write_dataset(out, &scenario, spec.mode).map_err(|e| PipelineError::stage("synth", e))?;
    println!(
        "wrote {} map frames and {} query frames to {}",
        scenario.map.frames.len(),
        scenario.queries.frames.len(),
        out.display()
    );
    Ok(())
}

fn map(a: &MapArgs) -> Result<(), PipelineError> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(v) = a.adjacency {
        cfg.map.adjacency = v;
    }
    if let Some(v) = a.max_kp {
        cfg.map.max_keypoints = v;
    }
    cfg.map.validate().map_err(invalid)?;
    if !a.images.is_dir() {
        return Err(invalid(format!("image directory {} does not exist", a.images.display())));
    }
    let k = load_intrinsics(&a.intrinsics)?;
    let frames = load_map_frames(&a.images, &a.poses, cfg.map.max_keypoints)?;
    let db = build_map(frames, &k, &cfg.map).map_err(|e| PipelineError::stage("map", e))?;
    save_database(&db, &a.out).map_err(|e| PipelineError::stage("map", e))?;
    println!("{} frames, {} landmarks -> {}", db.frames().len(), db.landmarks().len(), a.out.display());
    Ok(())
}

fn apply_ransac(cfg: &mut PipelineConfig, r: &RansacArgs) {
    if let Some(v) = r.ransac_thresh {
        cfg.ransac.inlier_threshold = v;
    }
    if let Some(v) = r.ransac_iters {
        cfg.ransac.max_iterations = v;
    }
    if let Some(v) = r.seed {
        cfg.seed = v;
    }
}

fn localize(a: &LocalizeArgs) -> Result<(), PipelineError> {
    let mut cfg = load_config(a.config.as_deref())?;
    for (slot, v) in [
        (&mut cfg.localize.n_r, a.nr),
        (&mut cfg.localize.window, a.window),
        (&mut cfg.localize.iterations, a.iters),
        (&mut cfg.localize.min_inliers, a.min_inliers),
    ] {
        if let Some(v) = v {
            *slot = v;
        }
    }
    apply_ransac(&mut cfg, &a.ransac);
    cfg.global_only |= a.global_only;
    cfg.validate()?;
    if !a.queries.is_dir() {
        return Err(invalid(format!("query directory {} does not exist", a.queries.display())));
    }
    let db = open_database(&a.db)?;
    if let Some(path) = &a.intrinsics {
        if load_intrinsics(path)? != db.intrinsics {
            return Err(invalid(format!("{} disagrees with the database intrinsics", path.display())));
        }
    }
    let queries = load_query_frames(&a.queries, db.params.max_keypoints)?;
    let queries_dir = fs::canonicalize(&a.queries).unwrap_or_else(|_| a.queries.clone());
    let loc = localize_stage(queries, &queries_dir, &db, &cfg)?;

    let log_path = a.log.clone().unwrap_or_else(|| sibling(&a.out, "localize_log.jsonl"));
    create_parent(&log_path, "localize")?;
    let f = fs::File::create(&log_path).map_err(|e| PipelineError::stage("localize", format!("{}: {e}", log_path.display())))?;
    write_log(BufWriter::new(f), &loc.log).map_err(|e| PipelineError::stage("localize", e))?;
    let anchors: Vec<(FrameId, Pose)> = loc.frames.iter().filter_map(|f| f.pose().map(|p| (f.frame_id, p))).collect();
    write_pose_file(&a.out, &anchors, "localize")?;
    println!("anchored {}/{} frames in {} rounds", anchors.len(), loc.frames.len(), loc.rounds);
    Ok(())
}

fn refine(a: &RefineArgs) -> Result<(), PipelineError> {
    let mut cfg = load_config(a.config.as_deref())?;
    let db = open_database(&a.db)?;
    let f = fs::File::open(&a.state).map_err(|e| invalid(format!("{}: {e}", a.state.display())))?;
    let records = read_log(BufReader::new(f)).map_err(invalid)?;
    let Some(LogRecord::Header(header)) = records.first() else {
        return Err(invalid(format!("{} does not start with a header record", a.state.display())));
    };
    cfg.localize = header.params;
    cfg.ransac.inlier_threshold = header.ransac.inlier_threshold;
    cfg.ransac.max_iterations = header.ransac.max_iterations;
    cfg.ransac.confidence = header.ransac.confidence;
    cfg.seed = header.ransac.seed;
    cfg.validate()?;
    let queries_dir = a.queries.clone().unwrap_or_else(|| PathBuf::from(&header.queries));
    if !queries_dir.is_dir() {
        return Err(invalid(format!("query directory {} does not exist", queries_dir.display())));
    }
    let queries = load_query_frames(&queries_dir, db.params.max_keypoints)?;
    let frames = restore_frames(&records, queries, &db, &cfg.localize, &db.intrinsics, &cfg.ransac_params())
        .map_err(invalid)?;
    let (refined, _) = refine_stage(&frames, &db, &cfg)?;
    let poses: Vec<(FrameId, Pose)> = refined.iter().filter_map(|r| r.pose.map(|p| (r.frame_id, p))).collect();
    write_pose_file(&a.out, &poses, "refine")?;
    let rows: Vec<ProvenanceRow> = refined
        .iter()
        .map(|r| ProvenanceRow {
            frame_id: r.frame_id,
            provenance: r.provenance,
            inliers: r.num_inliers,
        })
        .collect();
    let prov = sibling(&a.out, "provenance.tsv");
    let f = fs::File::create(&prov).map_err(|e| PipelineError::stage("refine", format!("{}: {e}", prov.display())))?;
    write_provenance(BufWriter::new(f), &rows).map_err(|e| PipelineError::stage("refine", e))?;
    println!("{}/{} frames localized", poses.len(), refined.len());
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<(), PipelineError> {
    let est = read_pose_file(&a.est)?;
    let gt = read_pose_file(&a.gt)?;
    let est: Vec<(FrameId, Option<Pose>)> = match &a.provenance {
        Some(path) => {
            let f = fs::File::open(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
            let rows = read_provenance(BufReader::new(f)).map_err(invalid)?;
            let by_id: std::collections::HashMap<FrameId, Pose> = est.into_iter().collect();
            rows.iter().map(|r| (r.frame_id, by_id.get(&r.frame_id).copied())).collect()
        }
        None => est.into_iter().map(|(id, p)| (id, Some(p))).collect(),
    };
    let thresholds = if a.thresholds.is_empty() {
        PipelineConfig::default().thresholds
    } else {
        a.thresholds.clone()
    };
    let report = evaluate(&est, &gt, &thresholds).map_err(invalid)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| PipelineError::stage("evaluate", e))? + "\n";
    if let Some(out) = &a.out {
        create_parent(out, "evaluate")?;
        fs::write(out, &json).map_err(|e| PipelineError::stage("evaluate", format!("{}: {e}", out.display())))?;
    }
    print!("{json}");
    Ok(())
}

fn run(a: &RunArgs) -> Result<(), PipelineError> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(v) = &a.dataset {
        cfg.dataset = Some(v.clone());
    }
    if let Some(v) = &a.out {
        cfg.out = Some(v.clone());
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = &a.enhanced {
        cfg.enhanced_queries = Some(v.clone());
    }
    cfg.global_only |= a.global_only;
    cfg.no_refine |= a.no_refine;
    let outcome = run_pipeline(&cfg)?;
    let localized = outcome.frames.iter().filter(|f| f.pose.is_some()).count();
    println!("{localized}/{} frames localized", outcome.frames.len());
    if let Some(r) = &outcome.report {
        for t in &r.accuracy {
            println!(
                "({}, {} deg): {:.2}% of all frames, {:.2}% of localized frames",
                t.translation, t.rotation_deg, t.percent, t.percent_of_localized
            );
        }
        if let (Some(mt), Some(mr)) = (r.median_translation, r.median_rotation_deg) {
            println!("median error: {mt:.6} translation, {mr:.6} deg");
        }
    }
    Ok(())
}

fn init_threads() -> Result<(), PipelineError> {
    let Ok(v) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| invalid(format!("{THREADS_VAR} must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| PipelineError::stage("setup", e))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match &cli.command {
        Command::Synth { spec, out } => synth(spec, out),
        Command::Map(a) => map(a),
        Command::Localize(a) => localize(a),
        Command::Refine(a) => refine(a),
        Command::Eval(a) => eval(a),
        Command::Run(a) => run(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
