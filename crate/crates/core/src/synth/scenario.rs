//! Ready-made worlds and sequences used by the acceptance suite and the
//! `synth` command.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    catmull_rom, generate_world, look_at_trajectory, render_sequence, SequenceSpec, SynthError, SyntheticSequence,
    World, WorldSpec,
};
use crate::geom::{CameraIntrinsics, Point3};
use crate::seed::derive;

/// 640x480 pinhole camera with a 500 px focal length.
pub const SCENARIO_INTRINSICS: CameraIntrinsics = CameraIntrinsics {
    fx: 500.0,
    fy: 500.0,
    cx: 320.0,
    cy: 240.0,
    width: 640,
    height: 480,
};

/// A world with a posed mapping sequence and a query sequence.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub world: World,
    pub k: CameraIntrinsics,
    pub map: SyntheticSequence,
    pub queries: SyntheticSequence,
    pub map_spec: SequenceSpec,
    pub query_spec: SequenceSpec,
}

fn up() -> Vector3<f64> {
    Vector3::new(0.0, -1.0, 0.0)
}

/// Camera path through `control` eyes, looking straight down +z at the
/// `z = 0` plane.
pub(crate) fn forward_path(control: &[Point3], frames: usize) -> Vec<crate::geom::Pose> {
    let eyes = catmull_rom(control, frames);
    let targets: Vec<Point3> = eyes.iter().map(|e| Point3::new(e.x, e.y, 0.0)).collect();
    look_at_trajectory(&eyes, &targets, &up())
}

pub(crate) fn build(
    world: World,
    k: CameraIntrinsics,
    map_spec: SequenceSpec,
    query_spec: SequenceSpec,
) -> Result<Scenario, SynthError> {
    let map = render_sequence(&world, &map_spec, &k)?;
    let queries = render_sequence(&world, &query_spec, &k)?;
    Ok(Scenario {
        world,
        k,
        map,
        queries,
        map_spec,
        query_spec,
    })
}

/// One 500-point cluster, noise-free, 40 map frames on an arc and 150 query
/// frames on a different arc. Every view sees the whole cluster.
pub fn exact_scenario(seed: u64) -> Result<Scenario, SynthError> {
    let world = generate_world(&WorldSpec {
        base_points: 500,
        extent: 4.0,
        num_copies: 1,
        spacing: 0.0,
        unique_points: 0,
        texture_seed: seed,
    })?;
    let arc = |radius: f64, height: f64, from: f64, to: f64, frames: usize, look_shift: f64| {
        let control: Vec<Point3> = (0..5)
            .map(|i| {
                let a = (from + (to - from) * i as f64 / 4.0).to_radians();
                Point3::new(radius * a.sin(), height + 0.2 * (i % 2) as f64, -radius * a.cos())
            })
            .collect();
        let eyes = catmull_rom(&control, frames);
        let targets: Vec<Point3> = eyes
            .iter()
            .enumerate()
            .map(|(i, _)| Point3::new(look_shift * (i as f64 * 0.1).sin(), 0.0, 0.0))
            .collect();
        look_at_trajectory(&eyes, &targets, &up())
    };
    let map = SequenceSpec::new(arc(6.0, -0.8, -35.0, 35.0, 40, 0.0), derive(&[seed, 100]));
    let mut queries = SequenceSpec::new(arc(5.0, 0.5, -30.0, 30.0, 150, 0.3), derive(&[seed, 101]));
    queries.first_frame_id = 0;
    build(world, SCENARIO_INTRINSICS, map, queries)
}

/// Survey path over `copies` clusters spaced `spacing` apart: a low pass
/// over each cluster at `near` depth, climbing to `far` across the gaps.
fn survey_control(copies: usize, spacing: f64, half_pass: f64, y: f64, near: f64, far: f64) -> Vec<Point3> {
    let mut c = vec![Point3::new(-half_pass - 2.5, y, far)];
    for i in 0..copies {
        let x0 = i as f64 * spacing;
        for s in [-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0] {
            c.push(Point3::new(x0 + s * half_pass, y, near));
        }
        if i + 1 < copies {
            c.push(Point3::new(x0 + spacing / 2.0, y, far));
        }
    }
    c
}

/// Four copies of a 220-point cluster with colliding textures. Each copy
/// also has 80 distinctive points at its left end, so only views that
/// include that end can tell the copies apart by appearance. The map
/// covers all copies; 200 query frames survey them in order.
pub fn ambiguity_scenario(seed: u64) -> Result<Scenario, SynthError> {
    let (extent, spacing, copies) = (8.0, 17.0, 4);
    let world = generate_world(&WorldSpec {
        base_points: 220,
        extent,
        num_copies: copies,
        spacing,
        unique_points: 80,
        texture_seed: seed,
    })?;
    let map_path = forward_path(&survey_control(copies, spacing, 3.0, 0.4, -4.0, -8.5), 160);
    let query_path = forward_path(&survey_control(copies, spacing, 3.0, -0.2, -3.5, -8.0), 200);
    let mut map = SequenceSpec::new(map_path, derive(&[seed, 200]));
    map.keypoint_noise = 0.5;
    let mut queries = SequenceSpec::new(query_path, derive(&[seed, 201]));
    queries.keypoint_noise = 0.5;
    build(world, SCENARIO_INTRINSICS, map, queries)
}

/// Frame spacing along the chain wall.
const CHAIN_STEP: f64 = 0.47;
const CHAIN_DEPTH: f64 = 2.0;
/// Identical copies of the chain wall, stacked along y.
pub const CHAIN_COPIES: usize = 10;
const CHAIN_COPY_SPACING: f64 = 4.0;
/// Map frames per wall copy.
pub const CHAIN_MAP_FRAMES: usize = 60;
/// Map adjacency that links each chain map frame only to frames of its own
/// wall copy.
pub const CHAIN_MAP_ADJACENCY: usize = 6;

/// A long textured wall, duplicated with identical appearance
/// [`CHAIN_COPIES`] times along y. The map covers every copy, so each query
/// keypoint finds equally good matches in all of them and no copy collects
/// enough votes; only the first query frame also sees a narrow band of
/// distinctive points that exists in copy 0 alone. Consecutive queries step
/// by a fixed amount such that frames more than 5 apart share no points.
///
/// The map frames are ordered copy by copy; build the map with an
/// adjacency of at most [`CHAIN_MAP_ADJACENCY`] so that no track spans two
/// copies.
pub fn chain_scenario(seed: u64) -> Result<Scenario, SynthError> {
    let frames = 100;
    let half_w = CHAIN_DEPTH * SCENARIO_INTRINSICS.cx / SCENARIO_INTRINSICS.fx;
    let half_h = CHAIN_DEPTH * SCENARIO_INTRINSICS.cy / SCENARIO_INTRINSICS.fy;
    let x_lo = -half_w - 0.05;
    let x_hi = (frames - 1) as f64 * CHAIN_STEP + half_w + 0.05;
    let band_hi = CHAIN_STEP - half_w - 0.06;
    let wall_points = ((x_hi - band_hi) * 80.0) as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(derive(&[seed, 300]));
    let mut sample = |x0: f64, x1: f64| {
        Point3::new(
            rng.random_range(x0..x1),
            rng.random_range(-half_h..half_h),
            rng.random_range(-0.05..0.05),
        )
    };
    let wall: Vec<Point3> = (0..wall_points).map(|_| sample(band_hi, x_hi)).collect();
    let band: Vec<Point3> = (0..100).map(|_| sample(x_lo, band_hi)).collect();
    let mut points = Vec::new();
    let mut texture = Vec::new();
    for c in 0..CHAIN_COPIES {
        let offset = Point3::new(0.0, c as f64 * CHAIN_COPY_SPACING, 0.0);
        for (j, p) in wall.iter().enumerate() {
            points.push(p + offset);
            texture.push(j as u64);
        }
    }
    for (u, p) in band.iter().enumerate() {
        points.push(*p);
        texture.push((wall_points + u) as u64);
    }
    let world = World::from_parts(points, texture, seed)?;

    let line = |y: f64, z: f64, x0: f64, x1: f64| vec![Point3::new(x0, y, z), Point3::new(x1, y, z)];
    let map_path: Vec<_> = (0..CHAIN_COPIES)
        .flat_map(|c| {
            let y = c as f64 * CHAIN_COPY_SPACING;
            forward_path(&line(y, -2.6, x_lo + 0.8, x_hi - 0.8), CHAIN_MAP_FRAMES)
        })
        .collect();
    let query_path = forward_path(&line(0.0, -CHAIN_DEPTH, 0.0, (frames - 1) as f64 * CHAIN_STEP), frames);
    let map = SequenceSpec::new(map_path, derive(&[seed, 301]));
    let queries = SequenceSpec::new(query_path, derive(&[seed, 302]));
    build(world, SCENARIO_INTRINSICS, map, queries)
}

/// Extent of the sparsely mapped stretch of the refinement wall.
const SPARSE_HALF_WIDTH: f64 = 3.3;

/// A long wall observed with 1 px keypoint noise. The map sees only 5% of
/// the points in the middle stretch, so the queries looking at that stretch
/// (roughly a fifth of the 150) cannot collect enough map correspondences
/// to become anchors and must be recovered by refinement.
pub fn refinement_scenario(seed: u64) -> Result<Scenario, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(&[seed, 400]));
    let n = 2250;
    let points: Vec<Point3> = (0..n)
        .map(|_| {
            Point3::new(
                rng.random_range(-12.0..12.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-0.3..0.3),
            )
        })
        .collect();
    let texture: Vec<u64> = (0..n as u64).collect();
    let filter: Vec<bool> = points
        .iter()
        .map(|p| p.x.abs() > SPARSE_HALF_WIDTH || rng.random::<f64>() < 0.05)
        .collect();
    let world = World::from_parts(points, texture, seed)?;

    let map_control = vec![
        Point3::new(-11.0, 0.3, -3.0),
        Point3::new(-4.0, 0.1, -3.2),
        Point3::new(4.0, 0.3, -3.0),
        Point3::new(11.0, 0.1, -3.2),
    ];
    let query_control = vec![
        Point3::new(-10.0, -0.1, -2.5),
        Point3::new(-3.3, 0.05, -2.6),
        Point3::new(3.3, -0.05, -2.4),
        Point3::new(10.0, 0.1, -2.5),
    ];
    let mut map = SequenceSpec::new(forward_path(&map_control, 80), derive(&[seed, 401]));
    map.keypoint_noise = 1.0;
    map.point_filter = Some(filter);
    let mut queries = SequenceSpec::new(forward_path(&query_control, 150), derive(&[seed, 402]));
    queries.keypoint_noise = 1.0;
    build(world, SCENARIO_INTRINSICS, map, queries)
}
