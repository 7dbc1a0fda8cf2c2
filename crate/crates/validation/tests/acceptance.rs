//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::HashMap;
use std::time::Instant;

use nalgebra::{DVector, UnitQuaternion, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use anchorloc::geom::{
    project, reprojection_jacobians, rotation_error_deg, translation_error, CameraIntrinsics, FrameId, Pixel, Point3,
    Pose,
};
use anchorloc::harness::{run_pipeline, PipelineConfig, Threshold};
use anchorloc::mapdb::MapParams;
use anchorloc::pnp::{p3p, pnp_ransac, Correspondence2D3D, RansacParams};
use anchorloc::refine::{refine_all, BaObservation, BaProblem, RefineParams};
use anchorloc::synth::{
    ambiguity_scenario, chain_scenario, exact_scenario, refinement_scenario, write_dataset, RenderMode, CHAIN_MAP_ADJACENCY,
};
use anchorloc::temporal::{localize_global, localize_sequence, AnchorSource, FrameStatus, TemporalParams};
use anchorloc_validation::{database, median, queries};

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(name: &'static str, pass: bool, detail: String) -> Outcome {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    Outcome { name, pass, detail }
}

fn single_thread<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

fn exactness() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let sc = exact_scenario(0).unwrap();
    write_dataset(&data, &sc, RenderMode::Features).unwrap();
    let cfg = PipelineConfig {
        dataset: Some(data),
        out: Some(dir.path().join("run")),
        thresholds: vec![Threshold::new(1e-5, 1e-4)],
        ..PipelineConfig::default()
    };
    let t0 = Instant::now();
    let out = single_thread(|| run_pipeline(&cfg)).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let gt: HashMap<FrameId, Pose> = sc.queries.frames.iter().map(|f| (f.frame_id, f.pose)).collect();
    let (mut max_t, mut max_r, mut localized) = (0.0f64, 0.0f64, 0);
    for f in &out.frames {
        if let Some(p) = f.pose {
            localized += 1;
            max_t = max_t.max(translation_error(&p, &gt[&f.frame_id]));
            max_r = max_r.max(rotation_error_deg(&p, &gt[&f.frame_id]));
        }
    }
    let n = out.frames.len();
    let pass = n == 150 && localized == n && max_t < 1e-5 && max_r < 1e-4 && secs < 120.0;
    report(
        "exactness end-to-end",
        pass,
        format!("{localized}/{n} localized, max error {max_t:.2e} units / {max_r:.2e} deg, {secs:.1} s on 1 thread (need 100%, <1e-5, <1e-4 deg, <120 s)"),
    )
}

fn ambiguity() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in 0..5u64 {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        write_dataset(&data, &ambiguity_scenario(seed).unwrap(), RenderMode::Features).unwrap();
        let base = PipelineConfig {
            dataset: Some(data),
            seed,
            thresholds: vec![Threshold::new(0.1, 5.0)],
            ..PipelineConfig::default()
        };
        let percent = |global_only: bool, name: &str| {
            let cfg = PipelineConfig {
                out: Some(dir.path().join(name)),
                global_only,
                ..base.clone()
            };
            let r = run_pipeline(&cfg).unwrap().report.unwrap();
            assert_eq!(r.frames, 200);
            r.accuracy[0].percent
        };
        let g = percent(true, "global_only");
        let f = percent(false, "full");
        pass &= g < 60.0 && f >= 95.0 && f > g;
        parts.push(format!("seed {seed}: global-only {g:.1}% full {f:.1}%"));
    }
    report(
        "ambiguity trend",
        pass,
        format!("{} (need global-only <60%, full >=95%, full > global-only at 0.1 u / 5 deg)", parts.join("; ")),
    )
}

fn chain() -> Vec<Outcome> {
    let sc = chain_scenario(0).unwrap();
    let db = database(
        &sc,
        &MapParams {
            adjacency: CHAIN_MAP_ADJACENCY,
            ..MapParams::default()
        },
    );
    let ransac = RansacParams::default();
    let params = TemporalParams::default();
    let global = localize_global(queries(&sc.queries), &db, &params, &sc.k, &ransac).unwrap();
    let global_ids = global.anchor_ids();

    let full = localize_sequence(queries(&sc.queries), &db, &params, &sc.k, &ransac).unwrap();
    let anchored = full.anchor_ids().len();
    let premise = global_ids == vec![0];
    let a = report(
        "anchor-propagation chain, 10 iterations",
        premise && anchored == sc.queries.frames.len(),
        format!(
            "global anchors {global_ids:?}; {anchored}/{} anchored after {} rounds (need only frame 0 global and 100% anchored)",
            sc.queries.frames.len(),
            full.rounds
        ),
    );

    let one = TemporalParams {
        iterations: 1,
        ..params
    };
    let loc = localize_sequence(queries(&sc.queries), &db, &one, &sc.k, &ransac).unwrap();
    let ids = loc.anchor_ids();
    let bound = (one.window / 2) as FrameId;
    let frontier = ids.iter().copied().max().unwrap_or(0);
    let b = report(
        "anchor-propagation chain, 1 iteration frontier",
        premise && ids.contains(&0) && ids.iter().all(|&id| id <= bound),
        format!("anchored {ids:?}, frontier {frontier} (need every anchor within L/2 = {bound} of frame 0)"),
    );
    vec![a, b]
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    Pose::new(
        UnitQuaternion::from_scaled_axis(axis.normalize() * rng.random_range(0.0..3.0)),
        Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
    )
}

fn camera_point(rng: &mut ChaCha8Rng, gt: &Pose) -> Point3 {
    let pc = Point3::new(rng.random_range(-2.0..2.0), rng.random_range(-1.5..1.5), rng.random_range(2.0..8.0));
    gt.inverse().transform(&pc)
}

fn pnp_oracle() -> Vec<Outcome> {
    let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut found = 0;
    for _ in 0..1000 {
        let gt = random_pose(&mut rng);
        let c: Vec<_> = (0..3)
            .map(|_| {
                let x = camera_point(&mut rng, &gt);
                Correspondence2D3D::new(project(&gt, &k, &x).unwrap(), x)
            })
            .collect();
        if let Ok(sols) = p3p(&c, &k) {
            if sols.iter().any(|s| rotation_error_deg(s, &gt) < 1e-6 && translation_error(s, &gt) < 1e-6) {
                found += 1;
            }
        }
    }
    let a = report(
        "P3P oracle",
        found == 1000,
        format!("ground truth among the solutions within 1e-6 in {found}/1000 instances"),
    );

    let mut ok = 0;
    for trial in 0..500u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + trial);
        let gt = random_pose(&mut rng);
        let c: Vec<_> = (0..100)
            .map(|i| {
                let x = camera_point(&mut rng, &gt);
                let px = if i < 70 {
                    project(&gt, &k, &x).unwrap()
                } else {
                    Pixel::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0))
                };
                Correspondence2D3D::new(px, x)
            })
            .collect();
        let params = RansacParams {
            seed: trial,
            ..RansacParams::default()
        };
        if let Ok(e) = pnp_ransac(&c, &k, &params) {
            if translation_error(&e.pose, &gt) < 1e-4 && rotation_error_deg(&e.pose, &gt) < 1e-4 {
                ok += 1;
            }
        }
    }
    let b = report(
        "PnP RANSAC with 30% outliers",
        ok * 100 >= 99 * 500,
        format!("pose within 1e-4 in {ok}/500 seeded trials (need >= 99%)"),
    );
    vec![a, b]
}

fn refinement() -> Vec<Outcome> {
    let sc = refinement_scenario(0).unwrap();
    let db = database(&sc, &MapParams::default());
    let ransac = RansacParams::default();
    let loc = localize_sequence(queries(&sc.queries), &db, &TemporalParams::default(), &sc.k, &ransac).unwrap();
    let out = refine_all(&loc.frames, &db, &RefineParams::default(), &sc.k, &ransac).unwrap();
    let gt: HashMap<FrameId, Pose> = sc.queries.frames.iter().map(|f| (f.frame_id, f.pose)).collect();
    let err = |p: Option<Pose>, id: FrameId| p.map_or(f64::INFINITY, |p| translation_error(&p, &gt[&id]));

    let (mut pre, mut post, mut pre_all, mut post_all) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (f, r) in loc.frames.iter().zip(&out.frames) {
        let before = match &f.status {
            FrameStatus::Anchored { estimate, .. } => err(Some(estimate.pose), f.frame_id),
            FrameStatus::Unlocalized => err(f.best_attempt.map(|a| a.pose), f.frame_id),
        };
        let after = err(r.pose, r.frame_id);
        pre_all.push(before);
        post_all.push(after);
        if !f.is_anchored() {
            pre.push(before);
            post.push(after);
        }
    }
    let n = loc.frames.len();
    let unanchored = pre.len();
    let (m_pre, m_post) = (median(pre), median(post));
    let ratio = m_post / m_pre;
    let a = report(
        "refinement value",
        unanchored > 0 && ratio <= 0.7,
        format!(
            "{unanchored}/{n} frames unanchored; their median translation error {m_pre:.4} before, {m_post:.4} after refinement, ratio {ratio:.3} (need <= 0.7); over all frames {:.4} -> {:.4}",
            median(pre_all),
            median(post_all)
        ),
    );

    let h = &out.report.rmse_history;
    let monotone = h.windows(2).all(|w| w[1] <= w[0]);
    let b = report(
        "bundle adjustment RMSE non-increasing",
        monotone && !h.is_empty(),
        format!("RMSE {:.4} -> {:.4} px over {} accepted steps", out.report.initial_rmse, out.report.final_rmse, h.len().saturating_sub(1)),
    );
    vec![a, b]
}

fn ba_problem(rng: &mut ChaCha8Rng) -> BaProblem {
    let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
    let points: Vec<Point3> = (0..15)
        .map(|_| Point3::new(rng.random_range(-2.0..2.0), rng.random_range(-1.5..1.5), rng.random_range(4.0..8.0)))
        .collect();
    let poses: Vec<Pose> = (0..4)
        .map(|i| {
            let c = Point3::new(0.3 * i as f64, rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
            Pose::from_center(UnitQuaternion::from_euler_angles(0.02 * i as f64, -0.03, 0.01), &c)
        })
        .collect();
    let mut observations = Vec::new();
    for (pi, p) in poses.iter().enumerate() {
        for (xi, x) in points.iter().enumerate() {
            let px = project(p, &k, x).unwrap();
            let noise = Pixel::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            observations.push(BaObservation {
                pose: pi,
                point: xi,
                pixel: px + noise,
            });
        }
    }
    BaProblem {
        k,
        pose_fixed: vec![true, false, false, false],
        point_fixed: vec![false; points.len()],
        poses,
        points,
        observations,
        huber_delta: 2.0,
    }
}

fn jacobians() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let p = ba_problem(&mut rng);
    let (_, j) = p.dense_jacobian().unwrap();
    let h = 1e-6;
    let mut ba_worst = 0.0f64;
    for c in 0..j.ncols() {
        let mut d = DVector::zeros(j.ncols());
        d[c] = h;
        let (pp, xp) = p.apply_update(&d);
        d[c] = -h;
        let (pm, xm) = p.apply_update(&d);
        let fd = (p.residuals_at(&pp, &xp).unwrap() - p.residuals_at(&pm, &xm).unwrap()) / (2.0 * h);
        let col = j.column(c);
        ba_worst = ba_worst.max((fd - col).norm() / col.norm().max(1e-12));
    }

    let mut polish_worst = 0.0f64;
    for _ in 0..50 {
        let pose = random_pose(&mut rng);
        let x = camera_point(&mut rng, &pose);
        let obs = Pixel::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
        let (_, jp, _) = reprojection_jacobians(&pose, &p.k, &x, &obs).unwrap();
        let residual = |q: &Pose| project(q, &p.k, &x).unwrap() - obs;
        for c in 0..6 {
            let mut d = Vector6::zeros();
            d[c] = h;
            let rp = residual(&pose.retract(&d));
            d[c] = -h;
            let rm = residual(&pose.retract(&d));
            let fd = (rp - rm) / (2.0 * h);
            let col = jp.column(c);
            polish_worst = polish_worst.max((fd - col).norm() / col.norm().max(1e-12));
        }
    }
    report(
        "Jacobians vs central differences",
        ba_worst < 1e-5 && polish_worst < 1e-5,
        format!("worst relative column error: bundle adjustment {ba_worst:.2e}, pose polish {polish_worst:.2e} (need < 1e-5)"),
    )
}

fn determinism() -> Outcome {
    let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let gt = random_pose(&mut rng);
    let c: Vec<_> = (0..80)
        .map(|i| {
            let x = camera_point(&mut rng, &gt);
            let px = if i < 40 {
                project(&gt, &k, &x).unwrap() + Pixel::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5))
            } else {
                Pixel::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0))
            };
            Correspondence2D3D::new(px, x)
        })
        .collect();
    let params = RansacParams {
        seed: 31,
        ..RansacParams::default()
    };
    let ransac_runs: Vec<_> = [1, 1, 4].iter().map(|&t| pool(t).install(|| pnp_ransac(&c, &k, &params))).collect();
    let ransac_same = ransac_runs.windows(2).all(|w| w[0] == w[1]);

    let sc = ambiguity_scenario(7).unwrap();
    let db = database(&sc, &MapParams::default());
    let ransac = RansacParams {
        seed: 7,
        ..RansacParams::default()
    };
    let run = |threads: usize| {
        pool(threads).install(|| {
            let loc = localize_sequence(queries(&sc.queries), &db, &TemporalParams::default(), &sc.k, &ransac).unwrap();
            let out = refine_all(&loc.frames, &db, &RefineParams::default(), &sc.k, &ransac).unwrap();
            (loc, out.frames, out.report)
        })
    };
    let runs = [run(1), run(1), run(4)];
    let loc_same = runs.windows(2).all(|w| w[0].0 == w[1].0);
    let refine_same = runs.windows(2).all(|w| w[0].1 == w[1].1 && w[0].2 == w[1].2);
    let temporal = runs[0]
        .0
        .frames
        .iter()
        .filter(|f| matches!(f.status, FrameStatus::Anchored { source: AnchorSource::Temporal, .. }))
        .count();
    report(
        "bit-determinism across runs and thread counts",
        ransac_same && loc_same && refine_same,
        format!("RANSAC identical: {ransac_same}; localization identical: {loc_same} ({temporal} temporal anchors); refinement identical: {refine_same} (1, 1 and 4 threads)"),
    )
}

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

fn main() {
    let t0 = Instant::now();
    let mut outcomes = vec![exactness()];
    outcomes.push(ambiguity());
    outcomes.extend(chain());
    outcomes.extend(pnp_oracle());
    outcomes.extend(refinement());
    outcomes.push(jacobians());
    outcomes.push(determinism());
    let failed: Vec<&Outcome> = outcomes.iter().filter(|o| !o.pass).collect();
    println!(
        "acceptance: {}/{} criteria passed in {:.0} s",
        outcomes.len() - failed.len(),
        outcomes.len(),
        t0.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        for o in &failed {
            eprintln!("failed: {}: {}", o.name, o.detail);
        }
        std::process::exit(1);
    }
}
