use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use super::{
    evaluate, frame_errors, load_dataset, trajectory_svg, write_provenance, write_trajectory_csv, MetricsReport,
    PipelineConfig, PipelineError, ProvenanceRow,
};
use crate::geom::{write_poses, CameraIntrinsics, FrameId, Pose};
use crate::mapdb::{build_map, save_database, SceneDatabase};
use crate::pnp::{PoseEstimate, RansacParams};
use crate::refine::{refine_all, Provenance, RefineOutput, RefinedFrame};
use crate::temporal::{
    attempt_seed, global_match, localize_global, localize_sequence, write_log, AnchorSource, Attempt, FrameStatus,
    LogHeader, LogRecord, Localization, QueryFrame, TemporalParams,
};

/// Result of [`run_pipeline`]. `report` is `None` when the dataset has no
/// ground truth.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub report: Option<MetricsReport>,
    pub frames: Vec<RefinedFrame>,
    pub timings_s: BTreeMap<String, f64>,
}

/// Localization as configured: global anchors only, or global anchors plus
/// temporal propagation. The log starts with a header naming `queries`.
pub fn localize_stage(
    queries: Vec<QueryFrame>,
    queries_dir: &Path,
    db: &SceneDatabase,
    cfg: &PipelineConfig,
) -> Result<Localization, PipelineError> {
    let ransac = cfg.ransac_params();
    let k = db.intrinsics;
    let mut loc = if cfg.global_only {
        let mut l = localize_global(queries, db, &cfg.localize, &k, &ransac).map_err(|e| PipelineError::stage("localize", e))?;
        l.append_states();
        l
    } else {
        localize_sequence(queries, db, &cfg.localize, &k, &ransac).map_err(|e| PipelineError::stage("localize", e))?
    };
    loc.log.insert(
        0,
        LogRecord::Header(LogHeader {
            queries: queries_dir.to_string_lossy().into_owned(),
            params: cfg.localize,
            ransac,
        }),
    );
    Ok(loc)
}

fn anchors_only(frames: &[QueryFrame]) -> Vec<RefinedFrame> {
    frames
        .iter()
        .map(|f| match &f.status {
            FrameStatus::Anchored { estimate, source, .. } => RefinedFrame {
                frame_id: f.frame_id,
                pose: Some(estimate.pose),
                provenance: match source {
                    AnchorSource::Global => Provenance::AnchorGlobal,
                    AnchorSource::Temporal => Provenance::AnchorTemporal,
                },
                num_inliers: estimate.num_inliers,
            },
            FrameStatus::Unlocalized => RefinedFrame {
                frame_id: f.frame_id,
                pose: None,
                provenance: Provenance::Unlocalized,
                num_inliers: 0,
            },
        })
        .collect()
}

/// Refinement as configured; with `no_refine` or `global_only` the anchors
/// are reported as they are.
pub fn refine_stage(
    frames: &[QueryFrame],
    db: &SceneDatabase,
    cfg: &PipelineConfig,
) -> Result<(Vec<RefinedFrame>, Option<RefineOutput>), PipelineError> {
    if cfg.no_refine || cfg.global_only {
        return Ok((anchors_only(frames), None));
    }
    let out = refine_all(frames, db, &cfg.refine, &db.intrinsics, &cfg.ransac_params())
        .map_err(|e| PipelineError::stage("refine", e))?;
    Ok((out.frames.clone(), Some(out)))
}

/// Rebuilds the post-localization query state from the state records of a
/// log. Map candidates of unanchored frames are recomputed by global
/// matching, which is deterministic.
pub fn restore_frames(
    records: &[LogRecord],
    queries: Vec<QueryFrame>,
    db: &SceneDatabase,
    params: &TemporalParams,
    k: &CameraIntrinsics,
    ransac: &RansacParams,
) -> Result<Vec<QueryFrame>, String> {
    let mut states = HashMap::new();
    for r in records {
        if let LogRecord::State { frame_id, .. } = r {
            states.insert(*frame_id, r);
        }
    }
    let mut out = Vec::with_capacity(queries.len());
    for mut qf in queries {
        let Some(LogRecord::State {
            source,
            round,
            pose,
            inliers,
            mean_reprojection_error,
            kp_landmark,
            best_attempt,
            ..
        }) = states.get(&qf.frame_id)
        else {
            return Err(format!("log has no state for query frame {}", qf.frame_id));
        };
        qf.best_attempt = best_attempt.map(|(pose, num_inliers)| Attempt {
            pose,
            num_inliers,
            round: 0,
        });
        match (source, pose) {
            (Some(source), Some(pose)) => {
                for &(kp, id) in kp_landmark {
                    let slot = qf
                        .kp_landmark
                        .get_mut(kp as usize)
                        .ok_or_else(|| format!("frame {} keypoint {kp} out of range", qf.frame_id))?;
                    if db.landmark(id).is_none() {
                        return Err(format!("frame {} references unknown landmark {id}", qf.frame_id));
                    }
                    *slot = Some(id);
                }
                qf.status = FrameStatus::Anchored {
                    estimate: PoseEstimate {
                        pose: *pose,
                        inlier_mask: Vec::new(),
                        num_inliers: *inliers,
                        mean_reprojection_error: *mean_reprojection_error,
                    },
                    source: *source,
                    round: *round,
                };
            }
            _ => {
                let rp = RansacParams {
                    seed: attempt_seed(ransac.seed, qf.frame_id, 0),
                    ..*ransac
                };
                qf.candidates = global_match(&qf, db, params, k, &rp).candidates;
            }
        }
        out.push(qf);
    }
    Ok(out)
}

fn io_stage(stage: &'static str) -> impl Fn(std::io::Error) -> PipelineError {
    move |e| PipelineError::stage(stage, e)
}

fn write_file(path: &Path, text: &str, stage: &'static str) -> Result<(), PipelineError> {
    fs::write(path, text).map_err(|e| PipelineError::stage(stage, format!("{}: {e}", path.display())))
}

/// Writes `poses.txt` (localized frames) and `provenance.tsv` (all frames).
pub fn write_trajectory(dir: &Path, frames: &[RefinedFrame]) -> Result<(), PipelineError> {
    let poses: Vec<(FrameId, Pose)> = frames.iter().filter_map(|f| f.pose.map(|p| (f.frame_id, p))).collect();
    let f = fs::File::create(dir.join("poses.txt")).map_err(io_stage("export"))?;
    write_poses(BufWriter::new(f), &poses).map_err(io_stage("export"))?;
    let rows: Vec<ProvenanceRow> = frames
        .iter()
        .map(|f| ProvenanceRow {
            frame_id: f.frame_id,
            provenance: f.provenance,
            inliers: f.num_inliers,
        })
        .collect();
    let f = fs::File::create(dir.join("provenance.tsv")).map_err(io_stage("export"))?;
    write_provenance(BufWriter::new(f), &rows).map_err(io_stage("export"))
}

/// map, localize, refine and evaluate, writing every artifact to
/// `cfg.out` as soon as it exists:
///
/// ```text
/// db/                  scene database
/// localize_log.jsonl   attempts and final per-frame state
/// poses.txt            localized frames
/// provenance.tsv       frame_id, provenance, inliers
/// metrics.json         when ground truth is available
/// trajectory.csv       centres and errors per frame
/// trajectory.svg       top-down drawing
/// timings.json         wall-clock seconds per stage
/// ```
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome, PipelineError> {
    cfg.validate()?;
    let dataset_dir = cfg
        .dataset
        .as_deref()
        .ok_or_else(|| PipelineError::Validation("`dataset` is required".into()))?;
    let out = cfg
        .out
        .as_deref()
        .ok_or_else(|| PipelineError::Validation("`out` is required".into()))?;
    fs::create_dir_all(out).map_err(|e| PipelineError::stage("export", format!("{}: {e}", out.display())))?;
    let mut timings = BTreeMap::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut BTreeMap<String, f64>| {
        timings.insert(name.to_string(), clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };

    let ds = load_dataset(dataset_dir, cfg.enhanced_queries.as_deref(), cfg.map.max_keypoints)?;
    lap("load", &mut timings);

    let db = build_map(ds.map, &ds.intrinsics, &cfg.map).map_err(|e| PipelineError::stage("map", e))?;
    save_database(&db, &out.join("db")).map_err(|e| PipelineError::stage("map", e))?;
    lap("map", &mut timings);

    let queries_dir = cfg
        .enhanced_queries
        .clone()
        .unwrap_or_else(|| dataset_dir.join("queries"));
    let loc = localize_stage(ds.queries, &queries_dir, &db, cfg)?;
    let f = fs::File::create(out.join("localize_log.jsonl")).map_err(io_stage("localize"))?;
    write_log(BufWriter::new(f), &loc.log).map_err(io_stage("localize"))?;
    lap("localize", &mut timings);

    let (frames, _) = refine_stage(&loc.frames, &db, cfg)?;
    write_trajectory(out, &frames)?;
    lap("refine", &mut timings);

    let mut report = None;
    if let Some(gt) = &ds.gt {
        let est: Vec<(FrameId, Option<Pose>)> = frames.iter().map(|f| (f.frame_id, f.pose)).collect();
        let r = evaluate(&est, gt, &cfg.thresholds).map_err(|e| PipelineError::stage("evaluate", e))?;
        let json = serde_json::to_string_pretty(&r).map_err(|e| PipelineError::stage("evaluate", e))?;
        write_file(&out.join("metrics.json"), &(json + "\n"), "evaluate")?;

        let errors: HashMap<FrameId, _> = frame_errors(&est, gt)
            .map_err(|e| PipelineError::stage("evaluate", e))?
            .into_iter()
            .map(|e| (e.frame_id, e))
            .collect();
        let est_map: HashMap<FrameId, Pose> = est.iter().filter_map(|(id, p)| p.map(|p| (*id, p))).collect();
        let gt_map: HashMap<FrameId, Pose> = gt.iter().copied().collect();
        let rows: Vec<ProvenanceRow> = frames
            .iter()
            .map(|f| ProvenanceRow {
                frame_id: f.frame_id,
                provenance: f.provenance,
                inliers: f.num_inliers,
            })
            .collect();
        let f = fs::File::create(out.join("trajectory.csv")).map_err(io_stage("export"))?;
        write_trajectory_csv(BufWriter::new(f), &rows, &est_map, &gt_map, &errors).map_err(io_stage("export"))?;
        write_file(&out.join("trajectory.svg"), &trajectory_svg(&rows, &est_map, &gt_map), "export")?;
        report = Some(r);
    }
    lap("evaluate", &mut timings);

    let json = serde_json::to_string_pretty(&timings).map_err(|e| PipelineError::stage("export", e))?;
    write_file(&out.join("timings.json"), &(json + "\n"), "export")?;
    if let Some(r) = &mut report {
        r.timings_s = timings.clone();
    }
    Ok(PipelineOutcome {
        report,
        frames,
        timings_s: timings,
    })
}
