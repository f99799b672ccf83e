//! Tick-by-tick episode instrumentation: prints per-tick solver stats so
//! instabilities can be localized. Not part of the shipped pipeline.

use garmsim::collider::{ColliderSet, Gripper, JawShape, Table};
use garmsim::config::RunConfig;
use garmsim::garment;
use garmsim::math::Real;
use garmsim::primitives::{GraspAction, CONTROL_DT};
use garmsim::rollout::{self, ExecOptions};
use garmsim::solver::{self, SimState};
use rand::Rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let index: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let stop_stage: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3);

    let mut cfg = RunConfig::default();
    cfg.rollout.candidates = 1;
    cfg.solver.grid_spacing_factor = 0.75;
    let setup = rollout::episode_setup(&cfg, index);
    eprintln!(
        "episode {index}: E={:.3e} G={:.3e} kn={:.3e} damping={:.2} mu_cloth={:.2} mu_table={:.2} thickness={:.2e}",
        setup.material.youngs_modulus,
        setup.material.shear_stiffness,
        setup.material.normal_stiffness,
        setup.material.damping,
        setup.material.mu_cloth,
        setup.mu_table,
        setup.material.thickness,
    );
    eprintln!(
        "garment: body={:.3} hem={:.3} edge={:.3}",
        setup.spec.body_length, setup.spec.hem_width, setup.spec.target_edge_length
    );

    let rest = garment::generate_shirt(&setup.spec).unwrap();
    // Rest mesh edge statistics.
    let mut emin: Real = 1e9;
    let mut emax: Real = 0.0;
    for f in &rest.faces {
        for k in 0..3 {
            let a = rest.vertices[f[k] as usize];
            let b = rest.vertices[f[(k + 1) % 3] as usize];
            let e = (a - b).norm();
            emin = emin.min(e);
            emax = emax.max(e);
        }
    }
    eprintln!("rest edges: min={emin:.4} max={emax:.4}");

    let placement_seed: u64 =
        garmsim::rng::stream(cfg.seed, garmsim::rng::streams::PLACEMENT, index).gen();
    let placed = garment::place_inside_out(
        &rest,
        cfg.scene.table_height,
        cfg.scene.garment_center_x,
        placement_seed,
    )
    .unwrap();
    let h = cfg.solver.grid_spacing_factor * setup.spec.target_edge_length;
    let mut state = SimState::new(placed, setup.material, h).unwrap();
    eprintln!("h={h:.4} cfl_dt={:.3e}", state.cfl_max_dt());
    let table = Table {
        height: cfg.scene.table_height,
        mu: setup.mu_table,
    };
    let opts = ExecOptions {
        safety: cfg.solver.safety,
        max_substeps_per_tick: cfg.solver.max_substeps_per_tick,
        attach_margin: cfg.rollout.attach_margin,
        ..ExecOptions::default()
    };
    rollout::settle_to_rest(&mut state, &table, cfg.rollout.settle_time, 4.0, &opts).unwrap();
    eprintln!("settled at t={:.2}", state.time);

    let faces = state.mesh.faces.clone();
    let regions = state.mesh.regions.clone();

    for (si, stage) in rollout::STAGES.iter().enumerate() {
        if si >= stop_stage {
            break;
        }
        let obs = rollout::observe(&state, table.height, &setup.camera);
        let cmd = rollout::heuristic_command(*stage, &obs, &faces, &regions, setup.spec.body_length)
            .unwrap();
        let Some(cmd) = cmd else {
            eprintln!("stage {stage:?}: no command (required region empty)");
            break;
        };
        eprintln!("stage {stage:?}: {cmd:?}");
        let plan =
            rollout::compile_command(&cmd, &cfg.templates, table.height, setup.spec.body_length)
                .unwrap();
        eprintln!("plan duration {:.2}s events {:?}", plan.duration, plan.events);

        // Tick loop with per-tick stats.
        let mu_robot = state.material.mu_robot;
        let build = |plan: &garmsim::primitives::BimanualPlan| ColliderSet {
            table: table.clone(),
            grippers: [
                Gripper {
                    shape: JawShape::default(),
                    mu: mu_robot,
                    trajectory: plan.arms[0].clone(),
                },
                Gripper {
                    shape: JawShape::default(),
                    mu: mu_robot,
                    trajectory: plan.arms[1].clone(),
                },
            ],
        };
        let mut plan = plan.clone();
        let mut colliders = build(&plan);
        let t0 = state.time;
        let n_ticks = (plan.duration / CONTROL_DT).round() as usize;
        let mut done = vec![false; plan.events.len()];
        'ticks: for k in 0..n_ticks {
            let t_local = k as Real * CONTROL_DT;
            for (ei, e) in plan.events.iter().enumerate() {
                if done[ei] || e.t > t_local + 1e-9 {
                    continue;
                }
                done[ei] = true;
                match e.action {
                    GraspAction::Attach => {
                        let frame = colliders.at(t_local).grippers[e.arm].clone();
                        state.attach_grasp(e.arm, &frame, opts.attach_margin);
                        // Report which panel(s) the pinch caught: a grasp that
                        // holds only the advanced panel preserves the drag's
                        // inter-panel offset through the fling.
                        let t_gap = setup.spec.thickness;
                        let (mut nf, mut nb, mut nw) = (0, 0, 0);
                        if let Some(g) = state.grasps[e.arm].as_ref() {
                            for &pid in &g.particles {
                                let z = rest.vertices[pid as usize].z;
                                if (z - t_gap).abs() < 0.25 * t_gap {
                                    nf += 1;
                                } else if z.abs() < 0.25 * t_gap {
                                    nb += 1;
                                } else {
                                    nw += 1;
                                }
                            }
                        }
                        eprintln!(
                            "  t={t_local:.2} attach arm{} -> {} particles (front={nf} back={nb} weld={nw})",
                            e.arm,
                            nf + nb + nw
                        );
                    }
                    GraspAction::Release => {
                        state.release_grasp(e.arm);
                        eprintln!("  t={t_local:.2} release arm{}", e.arm);
                    }
                }
            }
            if let Some(stretch) = plan.stretch {
                if t_local >= stretch.t_start - 1e-9 && t_local < stretch.t_end - 1e-9 {
                    let frames = colliders.at(t_local);
                    let p0 = frames.grippers[0].pose.translation.vector;
                    let p1 = frames.grippers[1].pose.translation.vector;
                    let axis = p1 - p0;
                    let tension = if axis.norm() > 1e-9 {
                        let axis = axis / axis.norm();
                        state.grasp_tension(0, axis) + state.grasp_tension(1, -axis)
                    } else {
                        0.0
                    };
                    eprintln!("  t={t_local:.2} tension={tension:.3}");
                    if stretch.threshold <= 0.0 || tension >= stretch.threshold {
                        plan.truncate_stretch(t_local);
                        colliders = build(&plan);
                        eprintln!("  truncated stretch at {t_local:.2}");
                    }
                }
            }
            // Manual advance with stats.
            let t_end = state.time + CONTROL_DT;
            let mut max_speed: Real = 0.0;
            let mut max_force: Real = 0.0;
            let mut subs = 0;
            while state.time < t_end - 1e-12 {
                let dt = (opts.safety * state.cfl_max_dt()).min(t_end - state.time);
                let frames = colliders.at(state.time - t0);
                match solver::step(&mut state, &frames, dt) {
                    Ok(s) => {
                        max_speed = max_speed.max(s.max_speed);
                        max_force = max_force.max(s.max_grid_force);
                    }
                    Err(e) => {
                        eprintln!(
                            "  tick {k} t={t_local:.2}: DIVERGED {e} (speed {max_speed:.2} force {max_force:.2e} subs {subs})"
                        );
                        break 'ticks;
                    }
                }
                subs += 1;
            }
            let g0 = state.grasps[0].as_ref().map_or(0, |g| g.particles.len());
            let frames = colliders.at(t_local);
            let gap0 = frames.grippers[0].gap;
            let p0 = frames.grippers[0].pose.translation.vector;
            if k % 4 == 0 || max_speed > 3.0 {
                eprintln!(
                    "  tick {k:3} t={t_local:5.2} subs={subs:3} vmax={max_speed:7.3} fmax={max_force:9.3e} g0={g0} gap={gap0:.3} tcp=({:.2},{:.2},{:.2})",
                    p0.x, p0.y, p0.z
                );
            }
        }
        eprintln!("stage {stage:?} done at t={:.2}", state.time);
        // Mouth state: per-panel hem-edge centroids and their horizontal
        // separation (the gape vector). Panel identity comes from the rest
        // z offset (back panel 0, front panel +thickness, welds midway).
        let t_gap = setup.spec.thickness;
        let mut front_hem = Vec::new();
        let mut back_hem = Vec::new();
        for &id in &rest.loops.hem {
            let z = rest.vertices[id as usize].z;
            if (z - t_gap).abs() < 0.25 * t_gap {
                front_hem.push(id as usize);
            } else if z.abs() < 0.25 * t_gap {
                back_hem.push(id as usize);
            }
        }
        let mean = |ids: &[usize]| -> garmsim::math::Vec3 {
            let mut s = garmsim::math::Vec3::zeros();
            for &i in ids {
                s += state.x[i];
            }
            s / ids.len().max(1) as Real
        };
        let fm = mean(&front_hem);
        let bm = mean(&back_hem);
        let gape = fm - bm;
        eprintln!(
            "  hem edges: front=({:.3},{:.3},{:.3}) back=({:.3},{:.3},{:.3}) gape=({:.3},{:.3},{:.3}) |xy|={:.3}",
            fm.x, fm.y, fm.z, bm.x, bm.y, bm.z,
            gape.x, gape.y, gape.z,
            (gape.x * gape.x + gape.y * gape.y).sqrt()
        );
        // Post-stage diagnostics: what (if anything) is hanging high, and how
        // close it sits to each gripper's grasp region.
        let zmax = state.x.iter().map(|p| p.z).fold(0.0, Real::max);
        let high: Vec<usize> = (0..state.x.len()).filter(|&i| state.x[i].z > 0.15).collect();
        eprintln!("  zmax={zmax:.3} particles_above_0.15={}", high.len());
        let (mut xl, mut xh, mut yl, mut yh) = (1e9, -1e9, 1e9, -1e9);
        for p in &state.x {
            xl = p.x.min(xl);
            xh = p.x.max(xh);
            yl = p.y.min(yl);
            yh = p.y.max(yh);
        }
        eprintln!("  cloth bbox x=[{xl:.2},{xh:.2}] y=[{yl:.2},{yh:.2}]");
        let end_frames = colliders.at(plan.duration);
        for (gi, g) in end_frames.grippers.iter().enumerate() {
            let near = state
                .x
                .iter()
                .filter(|p| (*p - g.pose.translation.vector).norm() < 0.08)
                .count();
            let caught = state.x.iter().filter(|p| g.in_grasp_region(**p, 0.002)).count();
            eprintln!(
                "  gripper{gi} tcp=({:.2},{:.2},{:.2}) near8cm={near} in_box={caught}",
                g.pose.translation.vector.x,
                g.pose.translation.vector.y,
                g.pose.translation.vector.z
            );
        }
        if let Err(e) = rollout::settle(&mut state, &table, cfg.rollout.post_stage_settle, &opts) {
            eprintln!("  post-settle FAILED: {e}");
            break;
        }
        let obs = rollout::observe(&state, table.height, &setup.camera);
        let ok = rollout::evaluate_stage(*stage, &obs, &faces, &regions, cfg.rollout.tau_area);
        eprintln!(
            "stage {stage:?} success={ok} coverage={:.4} hem_frac={:.5}",
            obs.view.coverage(),
            rollout::hem_single_upper_frac(&obs, &faces, &regions)
        );
        if ok == 0 {
            break;
        }
    }
}
