//! Command-line front end: garment generation, settling, episode rollout,
//! dataset generation, benchmarking, and state inspection.
//!
//! Every subcommand is reproducible from (config, seed) alone. Exit codes:
//! 0 success, 2 config/schema violations, 1 runtime failures. The `RS_THREADS`
//! environment variable caps worker parallelism.

use clap::{Args, Parser, Subcommand};
use garmsim::collider::Table;
use garmsim::config::RunConfig;
use garmsim::error::{Error, Result};
use garmsim::garment;
use garmsim::math::Vec3;
use garmsim::perception::{self, Camera, Polarity};
use garmsim::rollout::{self, ExecOptions};
use garmsim::solver::{checkpoint, SimState};
use garmsim::{bench, rng};
use rand::Rng;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "garmsim",
    version,
    about = "Batched thin-shell cloth simulator for garment manipulation",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Garment mesh utilities.
    Garment {
        #[command(subcommand)]
        cmd: GarmentCmd,
    },
    /// Drop a garment onto the table and save the resting state.
    Settle(SettleArgs),
    /// Run one episode (Drag -> Fling -> Insert&Pull) and print its record.
    Episode(EpisodeArgs),
    /// Run a batch of episodes and write the labeled dataset.
    Datagen(DatagenArgs),
    /// Profile primitive execution and environment scaling.
    Bench(BenchArgs),
    /// Render a saved state and print coverage and stage metrics.
    Inspect(InspectArgs),
}

#[derive(Subcommand)]
enum GarmentCmd {
    /// Sample a garment spec from the config ranges and write its mesh.
    Gen(GarmentGenArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to a JSON run config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct GarmentGenArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Episode index whose garment draw to generate.
    #[arg(long, default_value_t = 0)]
    index: u64,
    /// Output OBJ path (a JSON sidecar is written next to it).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SettleArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Episode index whose garment and placement to settle.
    #[arg(long, default_value_t = 0)]
    index: u64,
    /// Output state file.
    #[arg(long)]
    out: PathBuf,
    /// Override the minimum settle time in seconds.
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Args)]
struct EpisodeArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Episode index (selects garment, material, camera, and policy draws).
    #[arg(long, default_value_t = 0)]
    index: u64,
    /// Override the number of candidate keypoint sets per bimanual stage.
    #[arg(long)]
    candidates: Option<usize>,
    /// Directory for depth/mask/label rasters (omitted: no rasters).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Also write the record JSON to this path.
    #[arg(long)]
    record: Option<PathBuf>,
}

#[derive(Args)]
struct DatagenArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Override the number of episodes from the config.
    #[arg(long)]
    episodes: Option<usize>,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (capped by RS_THREADS; default from config).
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Episode index to profile.
    #[arg(long, default_value_t = 0)]
    index: u64,
    /// Comma-separated environment counts for the scaling sweep.
    #[arg(long, default_value = "1,2,4,8", value_delimiter = ',')]
    envs: Vec<usize>,
    /// Simulated seconds per environment in the scaling sweep.
    #[arg(long, default_value_t = 1.0)]
    sim_seconds: f64,
    /// Output directory for bench.json and CSV series.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    /// Saved simulation state.
    #[arg(long)]
    state: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Directory for rendered depth/mask/polarity images (default: the
    /// state file's directory).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn thread_cap() -> Option<usize> {
    std::env::var("RS_THREADS").ok().and_then(|s| s.parse().ok())
}

fn capped(requested: usize) -> usize {
    let n = match thread_cap() {
        Some(cap) => requested.min(cap.max(1)),
        None => requested,
    };
    n.max(1)
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(if e.is_config() { 2 } else { 1 });
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Garment { cmd: GarmentCmd::Gen(a) } => garment_gen(a),
        Cmd::Settle(a) => settle(a),
        Cmd::Episode(a) => episode(a),
        Cmd::Datagen(a) => datagen(a),
        Cmd::Bench(a) => bench_cmd(a),
        Cmd::Inspect(a) => inspect(a),
    }
}

fn garment_gen(a: GarmentGenArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let spec = cfg.sample_garment(a.index);
    let mesh = garment::generate_shirt(&spec)?;
    garment::save_mesh(&mesh, &a.out)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "out": a.out,
            "vertices": mesh.vertices.len(),
            "faces": mesh.faces.len(),
            "body_length": spec.body_length,
            "hem_width": spec.hem_width,
            "target_edge_length": spec.target_edge_length,
        }))?
    );
    Ok(())
}

/// Build the settled pre-manipulation state for an episode index.
fn build_settled(
    cfg: &RunConfig,
    index: u64,
    min_time: f64,
) -> Result<(SimState, Table, rollout::EpisodeSetup)> {
    let setup = rollout::episode_setup(cfg, index);
    let rest = garment::generate_shirt(&setup.spec)?;
    let placement_seed: u64 = rng::stream(cfg.seed, rng::streams::PLACEMENT, index).gen();
    let placed = garment::place_inside_out(
        &rest,
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
    let opts = ExecOptions {
        safety: cfg.solver.safety,
        max_substeps_per_tick: cfg.solver.max_substeps_per_tick,
        attach_margin: cfg.rollout.attach_margin,
        ..ExecOptions::default()
    };
    rollout::settle_to_rest(&mut state, &table, min_time, 4.0 * min_time.max(0.5), &opts)?;
    Ok((state, table, setup))
}

fn settle(a: SettleArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let min_time = a.duration.unwrap_or(cfg.rollout.settle_time);
    let (state, _, _) = build_settled(&cfg, a.index, min_time)?;
    checkpoint::save(&state, &a.out)?;
    let vmax = state.v.iter().map(|v| v.norm()).fold(0.0, f64::max);
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "out": a.out,
            "sim_time": state.time,
            "max_speed": vmax,
            "particles": state.x.len(),
        }))?
    );
    Ok(())
}

fn episode(a: EpisodeArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(c) = a.candidates {
        cfg.rollout.candidates = c.max(1);
    }
    let setup = rollout::episode_setup(&cfg, a.index);
    let rec = rollout::run_episode(&setup, a.out_dir.as_deref());
    let json = serde_json::to_string_pretty(&rec)?;
    if let Some(p) = &a.record {
        std::fs::write(p, &json)?;
    }
    println!("{json}");
    if !rec.valid {
        return Err(Error::Solver(
            rec.error.unwrap_or_else(|| "episode invalid".into()),
        ));
    }
    Ok(())
}

fn datagen(a: DatagenArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let episodes = a.episodes.unwrap_or(cfg.rollout.episodes);
    let parallelism = capped(a.parallelism.unwrap_or(cfg.rollout.envs));
    let summary = rollout::run_batch(&cfg, episodes, parallelism, Some(&a.out))?;
    let t = &summary.totals;
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "out": a.out,
            "episodes": summary.episodes,
            "valid": summary.valid_episodes,
            "s1": format!("{}/{}", t.s1_successes, t.s1_attempts),
            "s2": format!("{}/{}", t.s2_successes, t.s2_attempts),
            "s3": format!("{}/{}", t.s3_successes, t.s3_attempts),
            "full_success": t.episode_successes,
            "config_hash": summary.config_hash,
        }))?
    );
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let envs: Vec<usize> = a.envs.iter().map(|&e| capped(e)).collect();
    let report = bench::run(&cfg, a.index, &envs, a.sim_seconds)?;
    bench::write_report(&report, &a.out)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn inspect(a: InspectArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let state = checkpoint::load(&a.state)?;
    let cam_pos = Vec3::new(
        cfg.scene.garment_center_x,
        0.0,
        cfg.scene.table_height + cfg.scene.camera_height,
    );
    let camera = Camera::top_down(cfg.camera.intrinsics, cam_pos, 0.0);
    let obs = rollout::observe(&state, cfg.scene.table_height, &camera);
    let view = &obs.view;

    let dir = a
        .out_dir
        .clone()
        .or_else(|| a.state.parent().map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    write_depth_png(&dir.join("inspect.depth.png"), view)?;
    write_bool_png(&dir.join("inspect.mask.png"), &view.mask, view.width, view.height)?;
    write_polarity_png(&dir.join("inspect.polarity.png"), view)?;

    let faces = &state.mesh.faces;
    let regions = &state.mesh.regions;
    let hem1 = perception::single_layer_region(view, faces, regions, garment::Region::HemPart, 1);
    let hem1_n = hem1.iter().filter(|&&b| b).count();
    let upper_frac = rollout::hem_single_upper_frac(&obs, faces, regions);
    let coverage = view.coverage();
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "coverage": coverage,
            "success": coverage >= 0.80,
            "hem_single_layer_px": hem1_n,
            "hem_single_layer_nonempty": hem1_n > 0,
            "upper_hem_single_layer_frac": upper_frac,
            "images": dir,
        }))?
    );
    Ok(())
}

fn write_depth_png(path: &Path, view: &perception::View) -> Result<()> {
    let mm: Vec<u16> = view
        .depth
        .iter()
        .map(|&d| (d as f64 * 1000.0).round().clamp(0.0, 65535.0) as u16)
        .collect();
    let img = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(view.width, view.height, mm)
        .ok_or_else(|| Error::Perception("depth buffer size mismatch".into()))?;
    img.save(path)?;
    Ok(())
}

fn write_bool_png(path: &Path, mask: &[bool], w: u32, h: u32) -> Result<()> {
    let bytes: Vec<u8> = mask.iter().map(|&b| if b { 255 } else { 0 }).collect();
    let img = image::ImageBuffer::<image::Luma<u8>, _>::from_raw(w, h, bytes)
        .ok_or_else(|| Error::Perception("mask buffer size mismatch".into()))?;
    img.save(path)?;
    Ok(())
}

fn write_polarity_png(path: &Path, view: &perception::View) -> Result<()> {
    let bytes: Vec<u8> = view
        .polarity
        .iter()
        .map(|p| match p {
            Polarity::Background => 0u8,
            Polarity::Inside => 128,
            Polarity::Outside => 255,
        })
        .collect();
    let img = image::ImageBuffer::<image::Luma<u8>, _>::from_raw(view.width, view.height, bytes)
        .ok_or_else(|| Error::Perception("polarity buffer size mismatch".into()))?;
    img.save(path)?;
    Ok(())
}
