//! Performance and contact-fidelity benchmarking.
//!
//! Profiles episode execution per primitive (substep wall times, substeps per
//! control tick), measures the real-time rate while scaling the number of
//! concurrently simulated environments, and tracks triangle self-intersection
//! counts over time as a contact-fidelity proxy. The first `WARMUP_TICKS`
//! control ticks of each primitive are excluded from timing statistics so
//! allocator and cache warmup do not skew them.

use crate::config::RunConfig;
use crate::error::Result;
use crate::geom;
use crate::math::Real;
use crate::primitives::CONTROL_DT;
use crate::rollout::{self, ExecOptions, Stage};
use serde::{Deserialize, Serialize};
use std::io::Write as IoWrite;
use std::path::Path;
use std::time::Instant;

/// Control ticks excluded from the head of every timing series.
pub const WARMUP_TICKS: usize = 20;

/// Count distinct intersecting triangle pairs in a mesh state, excluding
/// pairs that share a vertex.
pub fn count_self_intersections(vertices: &[crate::math::Vec3], faces: &[[u32; 3]]) -> usize {
    geom::self_intersections(vertices, faces).pairs.len()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingStats {
    pub samples: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl TimingStats {
    pub fn from_samples(ms: &[f32]) -> TimingStats {
        if ms.is_empty() {
            return TimingStats {
                samples: 0,
                mean_ms: 0.0,
                p50_ms: 0.0,
                p95_ms: 0.0,
                max_ms: 0.0,
            };
        }
        let mut sorted: Vec<f32> = ms.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pct = |q: f64| {
            let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
            sorted[idx] as f64
        };
        TimingStats {
            samples: sorted.len(),
            mean_ms: sorted.iter().map(|&v| v as f64).sum::<f64>() / sorted.len() as f64,
            p50_ms: pct(0.50),
            p95_ms: pct(0.95),
            max_ms: *sorted.last().unwrap() as f64,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrimitiveProfile {
    pub stage: Stage,
    pub ticks: usize,
    pub substeps: usize,
    pub substeps_per_tick: f64,
    /// Substep wall-time statistics after warmup exclusion.
    pub substep: TimingStats,
    /// Simulated seconds per wall second over the timed region.
    pub real_time_rate: f64,
    /// Intersection counts sampled once per control tick (full series).
    pub intersections_per_tick: Vec<u32>,
    pub max_intersections: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub envs: usize,
    /// Wall seconds to simulate all environments.
    pub wall_s: f64,
    /// Simulated seconds summed over environments.
    pub sim_s: f64,
    /// sim_s / wall_s: aggregate real-time rate at this environment count.
    pub real_time_rate: f64,
    /// Rate relative to the single-environment baseline.
    pub speedup: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileReport {
    pub config_hash: String,
    pub seed: u64,
    pub warmup_ticks: usize,
    pub primitives: Vec<PrimitiveProfile>,
    pub scaling: Vec<ScalingPoint>,
    /// Peak intersection count seen in any Insert&Pull tick.
    pub max_insert_pull_intersections: usize,
}

/// Profile one episode's three primitives on a single environment.
///
/// Returns per-primitive profiles in execution order. Stages whose policy
/// found no valid keypoints are absent.
pub fn profile_primitives(config: &RunConfig, episode: u64) -> Result<Vec<PrimitiveProfile>> {
    let mut cfg = config.clone();
    // Candidate rollouts would multiply runtime without adding information.
    cfg.rollout.candidates = 1;
    let setup = rollout::episode_setup(&cfg, episode);
    profile_episode_stages(&setup)
}

fn profile_episode_stages(setup: &rollout::EpisodeSetup) -> Result<Vec<PrimitiveProfile>> {
    use crate::collider::{JawShape, Table};
    use crate::garment;
    use crate::solver::SimState;
    use rand::Rng;

    let cfg = &setup.config;
    let opts = ExecOptions {
        safety: cfg.solver.safety,
        max_substeps_per_tick: cfg.solver.max_substeps_per_tick,
        attach_margin: cfg.rollout.attach_margin,
        profile: true,
        sample_intersections: true,
    };

    let rest_mesh = garment::generate_shirt(&setup.spec)?;
    let placement_seed: u64 =
        crate::rng::stream(cfg.seed, crate::rng::streams::PLACEMENT, setup.index).gen();
    let placed = garment::place_inside_out(
        &rest_mesh,
        cfg.scene.table_height,
        cfg.scene.garment_center_x,
        placement_seed,
    )?;
    let h = cfg.solver.grid_spacing_factor * setup.spec.target_edge_length;
    let mut state = SimState::new(placed, setup.material, h)?;
    let table = Table {
        height: cfg.scene.table_height,
        mu: setup.mu_table,
    };
    rollout::settle_to_rest(
        &mut state,
        &table,
        cfg.rollout.settle_time,
        4.0 * cfg.rollout.settle_time.max(0.5),
        &opts,
    )?;

    let faces = state.mesh.faces.clone();
    let regions = state.mesh.regions.clone();
    let mut profiles = Vec::new();
    let mut obs = rollout::observe(&state, table.height, &setup.camera);

    for stage in rollout::STAGES {
        let Some(cmd) =
            rollout::heuristic_command(stage, &obs, &faces, &regions, setup.spec.body_length)?
        else {
            break;
        };
        let plan =
            rollout::compile_command(&cmd, &cfg.templates, table.height, setup.spec.body_length)?;
        let stats = rollout::execute_plan(&mut state, &plan, &table, JawShape::default(), &opts)?;

        // Drop substep samples from the first WARMUP_TICKS control ticks:
        // substeps per tick vary, so walk the per-tick boundaries by time.
        let warmup_substeps = estimate_warmup_substeps(&stats.substep_ms, stats.ticks, stats.substeps);
        let timed = &stats.substep_ms[warmup_substeps.min(stats.substep_ms.len())..];
        let timed_wall_s: f64 = timed.iter().map(|&v| v as f64 * 1e-3).sum();
        let timed_ticks = stats.ticks.saturating_sub(WARMUP_TICKS);
        let sim_s = timed_ticks as f64 * CONTROL_DT;
        profiles.push(PrimitiveProfile {
            stage,
            ticks: stats.ticks,
            substeps: stats.substeps,
            substeps_per_tick: stats.substeps as f64 / stats.ticks.max(1) as f64,
            substep: TimingStats::from_samples(timed),
            real_time_rate: if timed_wall_s > 0.0 { sim_s / timed_wall_s } else { 0.0 },
            intersections_per_tick: stats.intersections.clone(),
            max_intersections: stats.max_intersections,
        });

        rollout::settle(&mut state, &table, cfg.rollout.post_stage_settle, &opts)?;
        obs = rollout::observe(&state, table.height, &setup.camera);
        let ok = rollout::evaluate_stage(stage, &obs, &faces, &regions, cfg.rollout.tau_area);
        if ok == 0 || stats.grasp_failed {
            break;
        }
    }
    Ok(profiles)
}

/// Approximate the number of substeps contained in the warmup ticks assuming
/// a uniform substep rate (exact per-tick boundaries are not recorded).
fn estimate_warmup_substeps(substep_ms: &[f32], ticks: usize, substeps: usize) -> usize {
    if ticks == 0 || substep_ms.is_empty() {
        return 0;
    }
    let per_tick = substeps as f64 / ticks as f64;
    (per_tick * WARMUP_TICKS.min(ticks) as f64).round() as usize
}

/// Measure the aggregate real-time rate while the number of concurrently
/// simulated environments grows. Each environment runs the same-length
/// settle-plus-drag workload on its own thread.
pub fn scaling_run(config: &RunConfig, env_counts: &[usize], sim_seconds: Real) -> Result<Vec<ScalingPoint>> {
    let mut points = Vec::new();
    let mut baseline_rate = None;
    for &envs in env_counts {
        let wall = run_envs_concurrently(config, envs, sim_seconds)?;
        let sim_total = sim_seconds as f64 * envs as f64;
        let rate = sim_total / wall;
        let base = *baseline_rate.get_or_insert(rate);
        points.push(ScalingPoint {
            envs,
            wall_s: wall,
            sim_s: sim_total,
            real_time_rate: rate,
            speedup: rate / base,
        });
    }
    Ok(points)
}

/// Simulate `envs` copies of the settle workload concurrently; returns wall
/// seconds for all to finish.
fn run_envs_concurrently(config: &RunConfig, envs: usize, sim_seconds: Real) -> Result<f64> {
    use crate::collider::Table;
    use crate::garment;
    use crate::solver::SimState;
    use rand::Rng;

    // Prepare states up front so only simulation is timed.
    let mut prepared = Vec::new();
    for i in 0..envs {
        let setup = rollout::episode_setup(config, i as u64);
        let rest_mesh = garment::generate_shirt(&setup.spec)?;
        let placement_seed: u64 =
            crate::rng::stream(config.seed, crate::rng::streams::PLACEMENT, setup.index).gen();
        let placed = garment::place_inside_out(
            &rest_mesh,
            config.scene.table_height,
            config.scene.garment_center_x,
            placement_seed,
        )?;
        let h = config.solver.grid_spacing_factor * setup.spec.target_edge_length;
        let state = SimState::new(placed, setup.material, h)?;
        let table = Table {
            height: config.scene.table_height,
            mu: setup.mu_table,
        };
        prepared.push((state, table));
    }

    let opts = ExecOptions {
        safety: config.solver.safety,
        max_substeps_per_tick: config.solver.max_substeps_per_tick,
        attach_margin: config.rollout.attach_margin,
        profile: false,
        sample_intersections: false,
    };

    let start = Instant::now();
    let results: Vec<Result<()>> = std::thread::scope(|scope| {
        let handles: Vec<_> = prepared
            .into_iter()
            .map(|(mut state, table)| {
                scope.spawn(move || -> Result<()> {
                    rollout::settle(&mut state, &table, sim_seconds, &opts)?;
                    Ok(())
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|j| j.join().expect("scaling worker panicked"))
            .collect()
    });
    let wall = start.elapsed().as_secs_f64();
    for r in results {
        r?;
    }
    Ok(wall)
}

/// Full benchmark: primitive profiles plus environment scaling.
pub fn run(config: &RunConfig, episode: u64, env_counts: &[usize], sim_seconds: Real) -> Result<ProfileReport> {
    let primitives = profile_primitives(config, episode)?;
    let scaling = scaling_run(config, env_counts, sim_seconds)?;
    let max_ip = primitives
        .iter()
        .filter(|p| p.stage == Stage::InsertPull)
        .map(|p| p.max_intersections)
        .max()
        .unwrap_or(0);
    Ok(ProfileReport {
        config_hash: config.hash(),
        seed: config.seed,
        warmup_ticks: WARMUP_TICKS,
        primitives,
        scaling,
        max_insert_pull_intersections: max_ip,
    })
}

/// Write the report as JSON plus three CSV series next to it.
pub fn write_report(report: &ProfileReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let f = std::fs::File::create(dir.join("bench.json"))?;
    serde_json::to_writer_pretty(f, report)?;

    let mut f = std::fs::File::create(dir.join("step_hist.csv"))?;
    writeln!(f, "stage,samples,mean_ms,p50_ms,p95_ms,max_ms")?;
    for p in &report.primitives {
        writeln!(
            f,
            "{},{},{:.6},{:.6},{:.6},{:.6}",
            p.stage.name(),
            p.substep.samples,
            p.substep.mean_ms,
            p.substep.p50_ms,
            p.substep.p95_ms,
            p.substep.max_ms
        )?;
    }

    let mut f = std::fs::File::create(dir.join("rate_vs_envs.csv"))?;
    writeln!(f, "envs,wall_s,sim_s,real_time_rate,speedup")?;
    for s in &report.scaling {
        writeln!(
            f,
            "{},{:.4},{:.4},{:.4},{:.4}",
            s.envs, s.wall_s, s.sim_s, s.real_time_rate, s.speedup
        )?;
    }

    let mut f = std::fs::File::create(dir.join("intersections_vs_tick.csv"))?;
    writeln!(f, "stage,tick,intersections")?;
    for p in &report.primitives {
        for (k, n) in p.intersections_per_tick.iter().enumerate() {
            writeln!(f, "{},{},{}", p.stage.name(), k, n)?;
        }
    }
    Ok(())
}
