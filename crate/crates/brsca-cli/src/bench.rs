//! Benchmark harness: obstacle-count by tolerance sweep over generated
//! scenarios, with per-solve wall times and median aggregation.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use brsca_core::{brsca_solve, check_trajectory_safe, BrscaConfig};

use crate::error::CliResult;
use crate::generate::{generate_with, GeneratorConfig};
use crate::scenario::Scenario;

pub const DEFAULT_COUNTS: [usize; 5] = [5, 7, 9, 12, 15];
pub const DEFAULT_TOLERANCES: [f64; 3] = [0.7, 0.03, 0.0003];

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub counts: Vec<usize>,
    pub tolerances: Vec<f64>,
    pub seeds: u64,
    pub alpha0: Option<f64>,
    pub max_outer: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            counts: DEFAULT_COUNTS.to_vec(),
            tolerances: DEFAULT_TOLERANCES.to_vec(),
            seeds: 3,
            alpha0: None,
            max_outer: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRow {
    pub obstacles: usize,
    pub eps: f64,
    pub seed: u64,
    pub wall_time_s: f64,
    pub cost: f64,
    pub collision_free: bool,
    pub feasible: bool,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchCell {
    pub obstacles: usize,
    pub eps: f64,
    pub median_wall_time_s: f64,
    pub collision_free_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchSummary {
    pub rows: Vec<BenchRow>,
    pub cells: Vec<BenchCell>,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    if values.is_empty() {
        return f64::NAN;
    }
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

fn solve_config(eps: f64, config: &BenchConfig) -> BrscaConfig {
    let mut cfg = BrscaConfig {
        eps,
        ..BrscaConfig::default()
    };
    if let Some(a) = config.alpha0 {
        cfg.alpha0 = a;
    }
    if let Some(mo) = config.max_outer {
        cfg.max_outer = mo;
    }
    cfg
}

/// One timed solve; the clock covers only the solve call.
pub fn timed_solve(scenario: &Scenario, cfg: &BrscaConfig) -> CliResult<BenchRow> {
    let problem = scenario.build()?;
    let start = Instant::now();
    let result = brsca_solve(
        &problem.sys,
        &problem.cost,
        &problem.field,
        &problem.input,
        &problem.x0,
        cfg,
    )?;
    let wall = start.elapsed().as_secs_f64();
    let collision_free = result.is_feasible()
        && check_trajectory_safe(&problem.field, &result.trajectory)?.is_empty();
    Ok(BenchRow {
        obstacles: scenario.obstacles.len(),
        eps: cfg.eps,
        seed: scenario.seed,
        wall_time_s: wall,
        cost: result.cost,
        collision_free,
        feasible: result.is_feasible(),
        outer_iterations: result.outer_iterations,
        inner_iterations: result.audit.iter().map(|r| r.inner_iterations).sum(),
    })
}

/// Worker count from `BRSCA_THREADS` (default 1; timing is cleanest when the
/// sweep runs sequentially).
pub fn worker_count() -> usize {
    std::env::var("BRSCA_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

pub fn run_bench(config: &BenchConfig) -> CliResult<BenchSummary> {
    // generate scenarios up front (deterministic per seed and count)
    let mut scenarios: Vec<Scenario> = Vec::new();
    for &count in &config.counts {
        for seed in 0..config.seeds {
            let gen_cfg = GeneratorConfig {
                n_obstacles: count,
                ..GeneratorConfig::default()
            };
            scenarios.push(generate_with(seed, &gen_cfg)?);
        }
    }

    // jobs are (scenario index, tolerance) pairs
    let jobs: Vec<(usize, f64)> = (0..scenarios.len())
        .flat_map(|si| config.tolerances.iter().map(move |&eps| (si, eps)))
        .collect();

    let results: Mutex<Vec<Option<BenchRow>>> = Mutex::new(vec![None; jobs.len()]);
    let next: AtomicUsize = AtomicUsize::new(0);
    let workers = worker_count().min(jobs.len().max(1));
    let errors: Mutex<Vec<String>> = Mutex::new(Vec::new());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::SeqCst);
                if j >= jobs.len() {
                    break;
                }
                let (si, eps) = jobs[j];
                let cfg = solve_config(eps, config);
                match timed_solve(&scenarios[si], &cfg) {
                    Ok(row) => results.lock().unwrap()[j] = Some(row),
                    Err(e) => errors.lock().unwrap().push(format!("job {j}: {e}")),
                }
            });
        }
    });

    let errors = errors.into_inner().unwrap();
    if let Some(first) = errors.first() {
        return Err(crate::error::CliError::input(format!(
            "bench failed: {first}"
        )));
    }
    let rows: Vec<BenchRow> = results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("all jobs completed"))
        .collect();

    let mut cells = Vec::new();
    for &count in &config.counts {
        for &eps in &config.tolerances {
            let mut walls: Vec<f64> = rows
                .iter()
                .filter(|r| r.obstacles == count && r.eps == eps)
                .map(|r| r.wall_time_s)
                .collect();
            let total = walls.len().max(1);
            let free = rows
                .iter()
                .filter(|r| r.obstacles == count && r.eps == eps && r.collision_free)
                .count();
            cells.push(BenchCell {
                obstacles: count,
                eps,
                median_wall_time_s: median(&mut walls),
                collision_free_rate: free as f64 / total as f64,
            });
        }
    }
    Ok(BenchSummary { rows, cells })
}

/// Plain-text table: one row per obstacle count, one wall-time column per
/// tolerance.
pub fn format_table(summary: &BenchSummary, tolerances: &[f64]) -> String {
    let mut counts: Vec<usize> = summary.cells.iter().map(|c| c.obstacles).collect();
    counts.sort_unstable();
    counts.dedup();
    let mut out = String::from("obstacles");
    for eps in tolerances {
        out.push_str(&format!(" | median_s @ eps={eps}"));
    }
    out.push_str(" | collision-free\n");
    for count in counts {
        out.push_str(&format!("{count:9}"));
        for eps in tolerances {
            let cell = summary
                .cells
                .iter()
                .find(|c| c.obstacles == count && c.eps == *eps)
                .expect("cell");
            out.push_str(&format!(" | {:18.4}", cell.median_wall_time_s));
        }
        let free = summary
            .cells
            .iter()
            .filter(|c| c.obstacles == count)
            .map(|c| c.collision_free_rate)
            .fold(1.0f64, f64::min);
        out.push_str(&format!(" | {:.0}%\n", free * 100.0));
    }
    out
}
