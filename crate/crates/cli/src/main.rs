use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use dynslam::evaluation::{ablation_csv, entity_csv, metrics, AblationRow};
use dynslam::graph::text::write_graph;
use dynslam::pipeline::{run, AblationSetup, Preset, RunReport};
use dynslam::simulator::{library, FrameRecord, Scenario, ScenarioConfig};

#[derive(Parser)]
#[command(name = "dynslam", about = "Entity-aware pose-graph SLAM on simulated scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one setup on one scenario and write trajectory, metrics and logs.
    Run {
        /// Built-in scenario name or path to a scenario file.
        #[arg(long)]
        scenario: String,
        /// Preset name or flag list, e.g. `kfe,intra,epcr=conditional,dynamic`.
        #[arg(long, default_value = "full")]
        setup: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every preset over seeds `0..N` and print the comparison table.
    Ablate {
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the sensor frame stream as JSON lines.
    ExportFrames {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// List built-in scenarios and presets.
    List,
}

fn load_config(source: &str) -> Result<ScenarioConfig> {
    if let Some(c) = library::config(source) {
        return Ok(c);
    }
    let path = Path::new(source);
    if !path.exists() {
        bail!("'{source}' is neither a built-in scenario nor a file");
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ScenarioConfig::from_toml(&text)?)
}

fn load_scenario(source: &str, seed: Option<u64>) -> Result<Scenario> {
    let mut c = load_config(source)?;
    if let Some(s) = seed {
        c.seed = s;
    }
    Ok(Scenario::build(c)?)
}

fn json_lines<T: serde::Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it)?);
        out.push('\n');
    }
    Ok(out)
}

fn write_run(report: &RunReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let m = metrics(report)?;
    fs::write(dir.join("trajectory.txt"), report.trajectory_text())?;
    fs::write(dir.join("groundtruth.txt"), report.ground_truth_text())?;
    fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&m)?)?;
    let mut csv = String::from("scenario,seed,rmse_cm,std_cm,rot_rmse_deg,lc,keyframes,time_ms\n");
    writeln!(
        csv,
        "{},{},{:.3},{:.3},{:.3},{},{},{:.3}",
        m.scenario,
        m.seed,
        100.0 * m.ate_rmse,
        100.0 * m.ate_std,
        m.ate_rotation_rmse.to_degrees(),
        m.num_loop_closures,
        m.keyframes,
        m.mean_opt_time_ms
    )?;
    fs::write(dir.join("metrics.csv"), csv)?;
    fs::write(dir.join("entities.csv"), entity_csv(&m))?;
    fs::write(dir.join("decisions.jsonl"), json_lines(&report.decisions)?)?;
    fs::write(dir.join("loops.jsonl"), json_lines(&report.loops)?)?;
    let mut opt = String::from("time,nodes,factors,iterations,initial_cost,final_cost,wall_ms\n");
    for o in &report.optimizations {
        writeln!(
            opt,
            "{:.6},{},{},{},{:.9e},{:.9e},{:.3}",
            o.time, o.nodes, o.factors, o.report.iterations, o.report.initial_cost, o.report.final_cost, o.report.wall_time_ms
        )?;
    }
    fs::write(dir.join("optimizations.csv"), opt)?;
    fs::write(dir.join("graph.txt"), write_graph(&report.graph))?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { scenario, setup, seed, out } => {
            let s = load_scenario(&scenario, seed)?;
            let setup: AblationSetup = setup.parse()?;
            let report = run(&s, &setup)?;
            write_run(&report, &out)?;
            let m = metrics(&report)?;
            println!(
                "{} seed {}: ATE {:.2} cm over {} keyframes, {} loop closures",
                m.scenario,
                m.seed,
                100.0 * m.ate_rmse,
                m.keyframes,
                m.num_loop_closures
            );
        }
        Command::Ablate { scenario, seeds, out } => {
            let base = load_config(&scenario)?;
            let mut rows = Vec::new();
            for p in Preset::ALL {
                let mut runs = Vec::new();
                for seed in 0..seeds {
                    let mut c = base.clone();
                    c.seed = seed;
                    let report = run(&Scenario::build(c)?, &p.setup())?;
                    runs.push(metrics(&report)?);
                }
                rows.push(AblationRow::from_metrics(&base.name, p.name(), &runs));
            }
            let table = ablation_csv(&rows);
            print!("{table}");
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("ablation.csv"), &table)?;
            }
        }
        Command::ExportFrames { scenario, seed, out } => {
            let s = load_scenario(&scenario, seed)?;
            let mut f = std::io::BufWriter::new(fs::File::create(&out)?);
            for frame in s.scripted_run() {
                serde_json::to_writer(&mut f, &FrameRecord::from(&frame))?;
                f.write_all(b"\n")?;
            }
            f.flush()?;
        }
        Command::List => {
            println!("scenarios: {}", library::names().collect::<Vec<_>>().join(", "));
            println!("presets: {}", Preset::ALL.map(|p| p.name()).join(", "));
        }
    }
    Ok(())
}
