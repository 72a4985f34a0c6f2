use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use contactsim::metrics::{bandwidth_model, human_bytes, SolverBudget};
use contactsim::mesh::thread::{iso_peg_clearance, Fit};
use contactsim::mesh::{generate_iso_thread, generate_peg_hole, ThreadKind, ThreadSpec};
use contactsim::scene::{builtin_scene_with, run, SceneConfig, BUILTIN_SCENES};

#[derive(Parser)]
#[command(name = "contactsim", version, about = "SDF contact simulation scenes and assets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scene from a JSON config or a builtin name.
    Run(RunArgs),
    /// Print or save the config of a builtin scene.
    Scene {
        name: String,
        /// Object count for the pile and stack scenes.
        #[arg(long)]
        count: Option<usize>,
        /// Write the config here instead of stdout.
        #[arg(long)]
        emit: Option<PathBuf>,
    },
    /// List the builtin scenes.
    Scenes,
    /// Solver memory traffic for a contact count.
    Bandwidth {
        #[arg(long)]
        contacts: u64,
        #[arg(long, default_value_t = 1)]
        substeps: u64,
        #[arg(long, default_value_t = 64)]
        iterations: u64,
        #[arg(long, default_value_t = 160.0)]
        bytes_per_contact: f64,
        #[arg(long, default_value_t = 60.0)]
        frame_rate: f64,
        /// Available bandwidth (bytes/s) when counting parallel environments.
        #[arg(long, default_value_t = 1536e9)]
        budget: f64,
    },
    /// Export a procedural mesh as OBJ.
    #[command(subcommand)]
    GenAsset(Asset),
}

#[derive(Args)]
struct RunArgs {
    /// Scene config (JSON).
    #[arg(required_unless_present = "scene", conflicts_with = "scene")]
    config: Option<PathBuf>,
    /// Builtin scene instead of a config file.
    #[arg(long)]
    scene: Option<String>,
    #[arg(long)]
    frames: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    instances: Option<usize>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Per-frame contact statistics CSV (timings go to a `.timing.csv` sidecar).
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Dump contact point clouds every K frames.
    #[arg(long, value_name = "K")]
    dump_contacts: Option<u64>,
    #[arg(long)]
    contacts_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitArg {
    Tight,
    Loose,
}

impl From<FitArg> for Fit {
    fn from(f: FitArg) -> Self {
        match f {
            FitArg::Tight => Fit::Tight,
            FitArg::Loose => Fit::Loose,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Nut,
    Bolt,
}

#[derive(Subcommand)]
enum Asset {
    /// ISO metric coarse nut or bolt.
    Thread {
        /// Nominal diameter in mm (4, 8, 12, 16 or 20).
        #[arg(long)]
        size: u32,
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long, value_enum, default_value = "tight")]
        fit: FitArg,
        #[arg(long)]
        turns: Option<u32>,
        #[arg(long, default_value_t = 64)]
        segments_per_turn: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Round peg and matching hole block.
    Peg {
        /// Peg diameter in mm (4, 8, 12 or 16).
        #[arg(long)]
        diameter: u32,
        #[arg(long, value_enum, default_value = "tight")]
        fit: FitArg,
        /// Peg length in mm; twice the diameter if absent.
        #[arg(long)]
        length: Option<f64>,
        #[arg(long, default_value_t = 64)]
        segments: usize,
        #[arg(long)]
        peg: PathBuf,
        #[arg(long)]
        hole: PathBuf,
    },
}

fn run_scene(a: RunArgs) -> Result<()> {
    let mut cfg = match (&a.config, &a.scene) {
        (Some(path), _) => SceneConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        (None, Some(name)) => builtin_scene_with(name, None)?,
        (None, None) => unreachable!("clap requires one of them"),
    };
    if let Some(f) = a.frames {
        cfg.frames = f;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(k) = a.instances {
        cfg.instances = k;
    }
    if a.stats.is_some() {
        cfg.outputs.stats = a.stats;
    }
    if a.trajectory.is_some() {
        cfg.outputs.trajectory = a.trajectory;
    }
    if let Some(k) = a.dump_contacts {
        cfg.outputs.dump_every = k;
    }
    if a.contacts_dir.is_some() {
        cfg.outputs.pointcloud_dir = a.contacts_dir;
    }
    let out = run(&cfg, a.threads)?;
    let stats = out.instances.iter().flat_map(|i| &i.stats);
    let max_pen = stats.clone().map(|s| s.max_penetration).fold(0.0, f64::max);
    let violations: usize = stats.clone().map(|s| s.penetration_violations).sum();
    let peak = stats.map(|s| s.contacts_before).max().unwrap_or(0);
    println!("scene            {}", cfg.name);
    println!("frames           {} x {} instances", cfg.frames, cfg.instances);
    println!("wall time        {:.3} s ({:.1} steps/s)", out.wall_time_s, out.steps_per_second);
    println!("contact handling {:.3} s", out.contact_handling_time_s());
    println!("solve            {:.3} s", out.solve_time_s());
    println!("peak candidates  {peak}");
    println!("max penetration  {:.3e} m ({violations} violations)", max_pen);
    Ok(())
}

fn write_text(path: &PathBuf, text: String) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn gen_asset(a: Asset) -> Result<()> {
    match a {
        Asset::Thread {
            size,
            kind,
            fit,
            turns,
            segments_per_turn,
            out,
        } => {
            let kind = match kind {
                KindArg::Nut => ThreadKind::Nut,
                KindArg::Bolt => ThreadKind::Bolt,
            };
            let Some(mut spec) = ThreadSpec::metric(size, kind, fit.into()) else {
                bail!("no tabulated M{size} thread");
            };
            spec.segments_per_turn = segments_per_turn;
            if let Some(t) = turns {
                spec.turns = t;
            }
            let mesh = generate_iso_thread(&spec)?;
            write_text(&out, mesh.to_obj())?;
            println!("{} triangles -> {}", mesh.triangle_count(), out.display());
        }
        Asset::Peg {
            diameter,
            fit,
            length,
            segments,
            peg,
            hole,
        } => {
            let Some(clearance) = iso_peg_clearance(diameter, fit.into()) else {
                bail!("no tabulated {diameter} mm peg");
            };
            let d = diameter as f64 * 1e-3;
            let len = length.map_or(2.0 * d, |l| l * 1e-3);
            let (p, h) = generate_peg_hole(d, clearance, len, segments)?;
            write_text(&peg, p.to_obj())?;
            write_text(&hole, h.to_obj())?;
            println!("clearance {:.3} mm, peg {} / hole {} triangles", clearance * 1e3, p.triangle_count(), h.triangle_count());
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run(a) => run_scene(a),
        Command::Scene { name, count, emit } => {
            let json = builtin_scene_with(&name, count)?.to_json();
            match emit {
                Some(path) => write_text(&path, json),
                None => {
                    println!("{json}");
                    Ok(())
                }
            }
        }
        Command::Scenes => {
            for s in BUILTIN_SCENES {
                println!("{s}");
            }
            Ok(())
        }
        Command::Bandwidth {
            contacts,
            substeps,
            iterations,
            bytes_per_contact,
            frame_rate,
            budget,
        } => {
            let b = SolverBudget {
                bytes_per_contact_constraint: bytes_per_contact,
                frame_rate,
                gpu_bandwidth_budget: budget,
                ..Default::default()
            };
            let e = bandwidth_model(contacts, substeps, iterations, &b)?;
            println!("contacts,substeps,iterations,bytes_per_timestep,bytes_per_frame,bytes_per_second,max_parallel_envs");
            println!(
                "{contacts},{substeps},{iterations},{},{},{},{}",
                e.bytes_per_timestep, e.bytes_per_frame, e.bytes_per_second, e.max_parallel_envs
            );
            eprintln!(
                "{} per timestep, {} per frame, {}/s",
                human_bytes(e.bytes_per_timestep),
                human_bytes(e.bytes_per_frame),
                human_bytes(e.bytes_per_second)
            );
            Ok(())
        }
        Command::GenAsset(a) => gen_asset(a),
    }
}
