//! Scenario generators: the bundled cuboid-to-disk and letter formations and
//! randomized certified instances.
//!
//! Final formations are relabelled so that agents keep their rank along
//! `c1`, which is what the ordering requires at both ends of the window.

use std::f64::consts::PI;

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::planner::{local_coordinates, optimize_orientation, Certificate, PlanError};
use crate::quadrotor::QuadParams;
use crate::scenario::{
    ControllerConfig, Formation, PlannerConfig, SafetyLimits, Scenario, SimSettings, SCHEMA_VERSION,
};
use crate::trajectory::{RigidTranslation, TimeWindow};

/// Separation bound `d_min * beta*` of the bundled cuboid-to-disk scenario, m.
pub const CUBOID_DISK_BOUND: f64 = 1.1889;

/// Orientation grid used for randomized scenarios.
pub const RANDOM_GRID: usize = 121;

/// Letter-A ordering `b_1 .. b_20` (1-based agent ids).
pub const LETTER_ORDER: [usize; 20] = [18, 17, 16, 15, 14, 13, 12, 20, 11, 10, 19, 9, 8, 7, 6, 5, 4, 3, 2, 1];

pub const LETTER_MU_START_DEG: f64 = 172.8;
pub const LETTER_MU_FINAL_DEG: f64 = 28.8;

fn to_arrays(points: &[Vector3<f64>]) -> Vec<[f64; 3]> {
    points.iter().map(|p| [p.x, p.y, p.z]).collect()
}

/// Indices of `points` sorted by their coordinate along the optimal `c1`.
fn rank_along_c1(points: &[Vector3<f64>], grid: usize) -> Result<Vec<usize>, PlanError> {
    let o = optimize_orientation(points, grid)?;
    let local = local_coordinates(points, o.angles);
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| local[a][0].total_cmp(&local[b][0]));
    Ok(idx)
}

/// Places the rank-`k` start and final points at agent `ids[k]`.
fn assign_by_rank(
    start: &[Vector3<f64>],
    finals: &[Vector3<f64>],
    ids: &[usize],
    grid: usize,
) -> Result<(Vec<Vector3<f64>>, Vec<Vector3<f64>>), PlanError> {
    let rs = rank_along_c1(start, grid)?;
    let rf = rank_along_c1(finals, grid)?;
    let mut s = vec![Vector3::zeros(); start.len()];
    let mut f = vec![Vector3::zeros(); start.len()];
    for (k, &id) in ids.iter().enumerate() {
        s[id] = start[rs[k]];
        f[id] = finals[rf[k]];
    }
    Ok((s, f))
}

fn scenario(
    name: &str,
    start: &[Vector3<f64>],
    finals: &[Vector3<f64>],
    translation: RigidTranslation,
    window: TimeWindow,
    safety: SafetyLimits,
    grid: usize,
) -> Scenario {
    Scenario {
        schema_version: SCHEMA_VERSION,
        name: name.to_string(),
        quad: QuadParams::default(),
        initial_formation: Formation::relative(to_arrays(start)),
        final_formation: Formation::relative(to_arrays(finals)),
        translation,
        window,
        safety,
        controller: ControllerConfig::default(),
        sim: SimSettings::default(),
        planner: PlannerConfig {
            grid,
            allow_uncertified: false,
        },
    }
}

/// Certificate of `s` regardless of feasibility.
pub fn certificate_of(s: &Scenario) -> Result<Certificate, PlanError> {
    let mut probe = s.clone();
    probe.planner.allow_uncertified = true;
    Ok(crate::planner::build_plan(&probe)?.certificate)
}

/// Scales both formations about the origin until the separation bound
/// equals `target`.
fn scale_to_bound(s: &mut Scenario, target: f64) -> Result<(), PlanError> {
    for _ in 0..4 {
        let bound = certificate_of(s)?.separation_bound();
        let factor = target / bound;
        if (factor - 1.0).abs() < 1e-15 {
            break;
        }
        for f in [&mut s.initial_formation, &mut s.final_formation] {
            for p in f.positions.iter_mut() {
                for c in p.iter_mut() {
                    *c *= factor;
                }
            }
        }
    }
    Ok(())
}

/// Same scenario with the window stretched or shrunk to `duration` seconds
/// and the simulation span following the window.
pub fn with_window(s: &Scenario, duration: f64) -> Scenario {
    let mut out = s.clone();
    out.window = TimeWindow::new(s.window.t_s, s.window.t_s + duration);
    out.sim.t_start = None;
    out.sim.t_end = None;
    out
}

fn cuboid_points(spacing: f64) -> Vec<Vector3<f64>> {
    let mut pts = Vec::with_capacity(60);
    for k in 0..3 {
        for j in 0..4 {
            for i in 0..5 {
                pts.push(Vector3::new(
                    (i as f64 - 2.0) * spacing,
                    (j as f64 - 1.5) * spacing,
                    (k as f64 - 1.0) * spacing,
                ));
            }
        }
    }
    pts
}

/// Sixty points inside a disk of radius `radius` at height `z`, on
/// equally spaced stripes `x = const` so every agent has its own abscissa.
fn striped_disk(radius: f64, z: f64) -> Vec<Vector3<f64>> {
    let n = 60;
    let offsets = [-0.75, 0.25, -0.25, 0.75, 0.0];
    (0..n)
        .map(|k| {
            let x = -radius + (k as f64 + 0.5) * 2.0 * radius / n as f64;
            let half = (radius * radius - x * x).sqrt();
            Vector3::new(x, offsets[k % offsets.len()] * half, z)
        })
        .collect()
}

/// Sixty agents moving from a 5x4x3 cuboid to a horizontal disk above it
/// while the formation translates at 10 m/s along x.
pub fn cuboid_disk() -> Result<Scenario, PlanError> {
    let start = cuboid_points(1.5);
    let finals = striped_disk(6.0, 12.0);
    let ids: Vec<usize> = (0..start.len()).collect();
    let (s, f) = assign_by_rank(&start, &finals, &ids, crate::planner::DEFAULT_GRID)?;
    let mut sc = scenario(
        "cuboid-disk",
        &s,
        &f,
        RigidTranslation::constant(Vector3::new(0.0, 0.0, 30.0), Vector3::new(10.0, 0.0, 0.0)),
        TimeWindow::new(0.0, 50.0),
        SafetyLimits {
            delta: 0.19,
            epsilon: 0.40,
        },
        crate::planner::DEFAULT_GRID,
    );
    scale_to_bound(&mut sc, CUBOID_DISK_BOUND)?;
    Ok(sc)
}

/// Twenty jittered points tracing a letter "A" in the x-y plane.
fn letter_a(rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    let mut pts = Vec::with_capacity(20);
    // legs from the feet to the apex
    for k in 0..8 {
        let s = k as f64 / 8.0;
        pts.push(Vector3::new(-4.0 + 4.0 * s, 10.0 * s, 0.0));
        pts.push(Vector3::new(4.0 - 4.0 * s, 10.0 * s, 0.0));
    }
    pts.push(Vector3::new(0.0, 10.0, 0.0));
    for x in [-1.0, 0.0, 1.0] {
        pts.push(Vector3::new(x, 4.0, 0.0));
    }
    for p in pts.iter_mut() {
        p.x += rng.gen_range(-0.15..0.15);
        p.y += rng.gen_range(-0.15..0.15);
    }
    pts
}

/// Twenty jittered points tracing a serifed letter "I".
fn letter_i(rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    let mut pts = Vec::with_capacity(20);
    for k in 0..12 {
        pts.push(Vector3::new(0.0, 10.0 * (k as f64 + 0.5) / 12.0, 0.0));
    }
    for x in [-3.0, -2.0, -1.0, 1.0] {
        pts.push(Vector3::new(x, 11.0, 0.0));
    }
    for x in [-1.0, 1.0, 2.0, 3.0] {
        pts.push(Vector3::new(x, -1.0, 0.0));
    }
    for p in pts.iter_mut() {
        p.x += rng.gen_range(-0.15..0.15);
        p.y += rng.gen_range(-0.15..0.15);
    }
    pts
}

/// Rotates planar points about z so the optimal `mu` lands on `mu_target`.
fn orient_planar(points: Vec<Vector3<f64>>, mu_target: f64, grid: usize) -> Result<Vec<Vector3<f64>>, PlanError> {
    let mut pts = points;
    for _ in 0..3 {
        let mu = optimize_orientation(&pts, grid)?.angles.mu;
        let mut turn = (mu_target - mu).rem_euclid(PI);
        if turn > 0.5 * PI {
            turn -= PI;
        }
        if turn.abs() < 1e-14 {
            break;
        }
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), turn);
        pts = pts.iter().map(|p| rot * p).collect();
    }
    Ok(pts)
}

/// Twenty agents in the x-y plane moving from a letter "A" to a letter "I".
pub fn letters() -> Result<Scenario, PlanError> {
    let grid = crate::planner::DEFAULT_GRID;
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let a = orient_planar(letter_a(&mut rng), LETTER_MU_START_DEG.to_radians(), grid)?;
    let i = orient_planar(letter_i(&mut rng), LETTER_MU_FINAL_DEG.to_radians(), grid)?;
    let lift = Vector3::new(0.0, 0.0, 10.0);
    let a: Vec<_> = a.iter().map(|p| p + lift).collect();
    let i: Vec<_> = i.iter().map(|p| p + lift).collect();
    let ids: Vec<usize> = LETTER_ORDER.iter().map(|b| b - 1).collect();
    let (s, f) = assign_by_rank(&a, &i, &ids, grid)?;
    let mut sc = scenario(
        "letters",
        &s,
        &f,
        RigidTranslation::default(),
        TimeWindow::new(0.0, 30.0),
        SafetyLimits {
            delta: 0.0,
            epsilon: 0.0,
        },
        grid,
    );
    sc.safety = fractional_limits(certificate_of(&sc)?.separation_bound());
    Ok(sc)
}

/// `epsilon = 0.25 B`, `delta = 0.2 B`: certified with margin `0.1 B`.
fn fractional_limits(bound: f64) -> SafetyLimits {
    SafetyLimits {
        delta: 0.2 * bound,
        epsilon: 0.25 * bound,
    }
}

/// A certified random instance with `agents` agents.
pub fn random_scenario(seed: u64, agents: usize) -> Result<Scenario, PlanError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = 3.0 * (agents as f64).cbrt();
    let mut cloud = |center: Vector3<f64>| -> Vec<Vector3<f64>> {
        (0..agents)
            .map(|_| center + Vector3::from_fn(|_, _| rng.gen_range(-0.5..0.5) * side))
            .collect()
    };
    let start = cloud(Vector3::new(0.0, 0.0, 10.0));
    let finals = cloud(Vector3::new(side, 0.5 * side, 12.0));
    let ids: Vec<usize> = (0..agents).collect();
    let (s, f) = assign_by_rank(&start, &finals, &ids, RANDOM_GRID)?;
    let t_s = rng.gen_range(0.0..5.0);
    let duration = rng.gen_range(10.0..40.0);
    let v0 = Vector3::from_fn(|_, _| rng.gen_range(-3.0..3.0));
    let mut sc = scenario(
        &format!("random-{seed}"),
        &s,
        &f,
        RigidTranslation::constant(Vector3::zeros(), v0),
        TimeWindow::new(t_s, t_s + duration),
        SafetyLimits {
            delta: 0.0,
            epsilon: 0.0,
        },
        RANDOM_GRID,
    );
    sc.safety = fractional_limits(certificate_of(&sc)?.separation_bound());
    Ok(sc)
}
