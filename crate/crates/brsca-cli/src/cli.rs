//! Command-line interface.
//!
//! Exit codes: 0 success, 1 infeasible result, 2 input error, 3 numerical
//! failure.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use brsca_core::{brsca_solve, check_trajectory_safe, BrscaConfig, WorkspaceBounds};

use crate::baseline::{baseline_tracked_path, BaselineConfig};
use crate::bench::{format_table, run_bench, BenchConfig};
use crate::error::{CliError, CliResult};
use crate::generate::{generate_with, GeneratorConfig};
use crate::report::{
    read_to_string, trajectory_from_csv, trajectory_to_csv, write_atomic, RunReport,
};
use crate::scenario::Scenario;

#[derive(Parser)]
#[command(
    name = "brsca",
    about = "Energy-optimal collision-free motion planning for linear systems"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random scenario JSON file.
    Gen {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        obstacles: usize,
        #[arg(long, default_value_t = 0.443)]
        coverage: f64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Workspace as lo_x,lo_y,hi_x,hi_y.
        #[arg(long, value_delimiter = ',', num_args = 4)]
        workspace: Option<Vec<f64>>,
    },
    /// Solve a scenario and write the trajectory and report.
    Solve {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value_t = 0.7)]
        eps: f64,
        #[arg(long)]
        alpha0: Option<f64>,
        #[arg(long)]
        max_outer: Option<usize>,
    },
    /// Sweep obstacle counts and tolerances; write a report table.
    Bench {
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long)]
        alpha0: Option<f64>,
        #[arg(long)]
        max_outer: Option<usize>,
    },
    /// Validate a scenario/trajectory pair.
    Check {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
    },
    /// Run the grid-path + tracking baseline on a scenario.
    Baseline {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        grid_cell: Option<f64>,
    },
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version through the error path with status 0
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_scenario(path: &Path) -> CliResult<Scenario> {
    let text = read_to_string(path)?;
    Scenario::from_json(&text)
}

fn scenario_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into())
}

fn ensure_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn dispatch(cli: Cli) -> CliResult<i32> {
    match cli.command {
        Command::Gen {
            seed,
            obstacles,
            coverage,
            out,
            workspace,
        } => {
            let mut config = GeneratorConfig {
                n_obstacles: obstacles,
                coverage,
                ..GeneratorConfig::default()
            };
            if let Some(w) = workspace {
                config.workspace = WorkspaceBounds::new(
                    nalgebra::DVector::from_vec(vec![w[0], w[1]]),
                    nalgebra::DVector::from_vec(vec![w[2], w[3]]),
                )?;
            }
            let scenario = generate_with(seed, &config)?;
            ensure_dir(&out)?;
            let path = out.join(format!("scenario_{seed}.json"));
            write_atomic(&path, &scenario.to_json())?;
            println!("wrote {}", path.display());
            Ok(0)
        }

        Command::Solve {
            scenario,
            out,
            eps,
            alpha0,
            max_outer,
        } => {
            let sc = load_scenario(&scenario)?;
            let problem = sc.build()?;
            let mut cfg = BrscaConfig {
                eps,
                ..BrscaConfig::default()
            };
            if let Some(a) = alpha0 {
                cfg.alpha0 = a;
            }
            if let Some(mo) = max_outer {
                cfg.max_outer = mo;
            }

            let clock = Instant::now();
            let result = brsca_solve(
                &problem.sys,
                &problem.cost,
                &problem.field,
                &problem.input,
                &problem.x0,
                &cfg,
            )?;
            let wall = clock.elapsed().as_secs_f64();

            let world_traj = problem.to_world(&result.trajectory);
            let collision_free =
                check_trajectory_safe(&problem.world_field, &world_traj)?.is_empty();
            let report = RunReport {
                scenario_id: scenario_stem(&scenario),
                solver: "brsca".into(),
                wall_time_s: wall,
                cost: result.cost,
                collision_free,
                outer_iterations: result.outer_iterations,
                inner_iterations: result.audit.iter().map(|r| r.inner_iterations).sum(),
                eps,
                status: if result.is_feasible() {
                    "feasible".into()
                } else {
                    "infeasible".into()
                },
            };

            ensure_dir(&out)?;
            let stem = scenario_stem(&scenario);
            let csv = trajectory_to_csv(&world_traj, &problem.world_field)?;
            write_atomic(&out.join(format!("{stem}_trajectory.csv")), &csv)?;
            let json = serde_json::to_string_pretty(&report).expect("report serialization");
            write_atomic(&out.join(format!("{stem}_report.json")), &json)?;

            println!(
                "status: {} cost: {:.4} wall: {:.3}s outer: {} collision_free: {}",
                report.status, report.cost, wall, report.outer_iterations, collision_free
            );
            Ok(if result.is_feasible() && collision_free { 0 } else { 1 })
        }

        Command::Bench {
            out,
            seeds,
            alpha0,
            max_outer,
        } => {
            let config = BenchConfig {
                seeds,
                alpha0,
                max_outer,
                ..BenchConfig::default()
            };
            let summary = run_bench(&config)?;
            ensure_dir(&out)?;
            let json = serde_json::to_string_pretty(&summary).expect("summary serialization");
            write_atomic(&out.join("bench_report.json"), &json)?;
            let table = format_table(&summary, &config.tolerances);
            write_atomic(&out.join("bench_table.txt"), &table)?;
            print!("{table}");
            Ok(0)
        }

        Command::Check {
            scenario,
            trajectory,
        } => {
            let sc = load_scenario(&scenario)?;
            let problem = sc.build()?;
            let text = read_to_string(&trajectory)?;
            let traj =
                trajectory_from_csv(&text, problem.sys.state_dim(), problem.sys.input_dim())?;
            // world-coordinate dynamics match the shifted ones because the
            // goal is an equilibrium
            traj.validate_dynamics(&problem.sys)
                .map_err(|e| CliError::input(format!("trajectory fails dynamics check: {e}")))?;
            let violations = check_trajectory_safe(&problem.world_field, &traj)?;
            if violations.is_empty() {
                println!("ok: trajectory is dynamically consistent and collision-free");
                Ok(0)
            } else {
                for v in &violations {
                    println!("violation: t={} obstacle={} h={:.6}", v.t, v.id, v.h);
                }
                Ok(1)
            }
        }

        Command::Baseline {
            scenario,
            out,
            grid_cell,
        } => {
            let sc = load_scenario(&scenario)?;
            let problem = sc.build()?;
            let config = BaselineConfig {
                grid_cell,
                ..BaselineConfig::default()
            };
            let clock = Instant::now();
            let (traj, cost) = baseline_tracked_path(&problem, &config)?;
            let wall = clock.elapsed().as_secs_f64();

            let world_traj = problem.to_world(&traj);
            let collision_free =
                check_trajectory_safe(&problem.world_field, &world_traj)?.is_empty();
            let report = RunReport {
                scenario_id: scenario_stem(&scenario),
                solver: "grid-tracked-baseline".into(),
                wall_time_s: wall,
                cost,
                collision_free,
                outer_iterations: 0,
                inner_iterations: 0,
                eps: f64::NAN,
                status: if collision_free {
                    "feasible".into()
                } else {
                    "infeasible".into()
                },
            };
            ensure_dir(&out)?;
            let stem = scenario_stem(&scenario);
            let csv = trajectory_to_csv(&world_traj, &problem.world_field)?;
            write_atomic(&out.join(format!("{stem}_baseline.csv")), &csv)?;
            let json = serde_json::to_string_pretty(&report).expect("report serialization");
            write_atomic(&out.join(format!("{stem}_baseline_report.json")), &json)?;
            println!(
                "baseline cost: {:.4} wall: {:.3}s collision_free: {}",
                cost, wall, collision_free
            );
            Ok(if collision_free { 0 } else { 1 })
        }
    }
}
