//! The four subcommands. Each returns the process exit code.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use multiadmm::conv::conv2;
use multiadmm::diagnostics::{check_assumptions, run_counterexample_from};
use multiadmm::linalg::frob_norm;
use multiadmm::solver::{resolve_rho, solve as run_solver, IterTrace, RhoPolicy, SolveResult, Status};
use multiadmm::zoo::{self, ZooInstance};
use ndarray::Array2;
use serde::Serialize;

use crate::config::{ProblemSpec, RunConfig};
use crate::matio::{atomic_write, encode_bin};
use crate::problems::{build, sbd_data};

pub const TRACE_HEADER: &str = "k,L,primal_res,dual_step,stat_est,wall_ms";
pub const THREADS_ENV: &str = "MULTIADMM_THREADS";

pub fn exit_code(status: Status) -> i32 {
    match status {
        Status::Converged => 0,
        Status::MaxIter => 2,
        Status::Diverged => 3,
    }
}

pub fn trace_csv(traces: &[IterTrace], timing: bool) -> String {
    let mut s = String::from(TRACE_HEADER);
    s.push('\n');
    for t in traces {
        let ms = if timing { t.wall_ms } else { 0.0 };
        writeln!(s, "{},{},{},{},{},{}", t.k, t.lagrangian, t.primal_res, t.dual_step, t.stat_est, ms).unwrap();
    }
    s
}

#[derive(Serialize)]
struct ArchiveEntry {
    name: String,
    rows: usize,
    cols: usize,
    file: String,
}

#[derive(Serialize)]
struct Manifest {
    problem: String,
    status: Status,
    k: usize,
    rho: f64,
    blocks: Vec<ArchiveEntry>,
    multipliers: Vec<ArchiveEntry>,
}

/// Writes the final state as a directory of binary matrices plus
/// `manifest.json`. The directory is assembled under a temporary name and
/// renamed into place.
fn write_state_archive(dir: &Path, inst: &ZooInstance, res: &SolveResult) -> Result<()> {
    let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(parent)?;
    let tmp = tempfile::Builder::new().prefix(".state-").tempdir_in(parent)?;
    let entry = |name: String, file: String, m: &Array2<f64>| -> Result<ArchiveEntry> {
        std::fs::write(tmp.path().join(&file), encode_bin(m)?)?;
        Ok(ArchiveEntry { name, rows: m.nrows(), cols: m.ncols(), file })
    };
    let mut blocks = Vec::new();
    for (i, spec) in inst.problem.system.blocks().iter().enumerate() {
        blocks.push(entry(spec.name.clone(), format!("block{i}.bin"), &res.state.values[i])?);
    }
    let mut multipliers = Vec::new();
    for (i, w) in res.state.w.iter().enumerate() {
        multipliers.push(entry(format!("W{i}"), format!("w{i}.bin"), w)?);
    }
    let manifest = Manifest { problem: inst.problem.name.clone(), status: res.status, k: res.state.k, rho: res.state.rho, blocks, multipliers };
    std::fs::write(tmp.path().join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    if dir.exists() {
        std::fs::remove_dir_all(dir).with_context(|| format!("replacing {}", dir.display()))?;
    }
    std::fs::rename(tmp.keep(), dir).with_context(|| format!("writing {}", dir.display()))?;
    Ok(())
}

pub fn solve(cfg: &RunConfig) -> Result<i32> {
    cfg.zoo()?;
    let inst = build(&cfg.problem, cfg.seed)?;
    let res = run_solver(&inst.problem, &cfg.solve_options())?;
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    atomic_write(&cfg.out.join("trace.csv"), trace_csv(&res.traces, !cfg.no_timing).as_bytes())?;
    atomic_write(&cfg.out.join("config.json"), cfg.to_json().as_bytes())?;
    write_state_archive(&cfg.out.join("state"), &inst, &res)?;
    let last = res.traces.last();
    let summary = serde_json::json!({
        "problem": inst.problem.name,
        "status": res.status,
        "iterations": res.traces.len(),
        "rho": res.state.rho,
        "primal_res": last.map(|t| t.primal_res),
        "objective": inst.problem.reported_objective(&res.state.values),
    });
    println!("{summary}");
    Ok(exit_code(res.status))
}

pub fn check(cfg: &RunConfig) -> Result<i32> {
    cfg.zoo()?;
    let inst = build(&cfg.problem, cfg.seed)?;
    let report = check_assumptions(&inst.problem, 5, cfg.seed)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if report.overall { 0 } else { 4 })
}

/// The first `iters` iterates of the scalar counterexample, starting with
/// the initial point.
pub fn demo_counterexample(rho: f64, iters: usize, x0: f64, y0: f64, w0: f64) -> Result<String> {
    if !(rho > 0.0 && rho.is_finite()) {
        bail!("flag --rho: must be positive and finite, got {rho}");
    }
    let mut s = String::from("k,x,y,w\n");
    if iters > 0 {
        for r in run_counterexample_from(x0, y0, w0, rho, iters - 1) {
            writeln!(s, "{},{},{},{}", r.k, r.x, r.y, r.w).unwrap();
        }
    }
    Ok(s)
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchRun {
    pub case: String,
    pub method: String,
    pub rho: f64,
    pub status: Status,
    pub iterations: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub final_primal_res: f64,
    /// `‖A∗X + b1 − Y‖/‖Y‖` against the observed data.
    pub final_fit: f64,
    pub mult_norm_first: f64,
    pub mult_norm_last: f64,
    /// Least-squares slope of the multiplier norm per iteration after burn-in.
    pub mult_slope: f64,
    /// `mult_slope` divided by the mean multiplier norm over the same window.
    pub mult_rel_slope: f64,
}

fn slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn bench_one(case: &str, method: &str, inst: &ZooInstance, y: &Array2<f64>, cfg: &RunConfig, rho: f64, burn_in: usize) -> Result<(BenchRun, SolveResult)> {
    let mut opts = cfg.solve_options();
    opts.rho = RhoPolicy::Fixed(rho);
    // Full-length runs so trends are comparable across methods.
    opts.tol_primal = 0.0;
    opts.tol_step = 0.0;
    opts.track_stationarity = false;
    let initial = inst.problem.reported_objective(&inst.problem.initial_state(opts.seed, rho).values);
    let res = run_solver(&inst.problem, &opts)?;
    let a = inst.value(&res.state, "A");
    let x = inst.value(&res.state, "X");
    let b = inst.value(&res.state, "b")[[0, 0]];
    let fit = frob_norm((conv2(a.view(), x.view()) + b - y).view()) / frob_norm(y.view());
    let window: Vec<(f64, f64)> = res.traces.iter().filter(|t| t.k > burn_in).map(|t| (t.k as f64, t.mult_norm)).collect();
    let s = slope(&window);
    let mean = window.iter().map(|p| p.1).sum::<f64>() / window.len().max(1) as f64;
    let last = res.traces.last().context("bench needs at least one iteration")?;
    let run = BenchRun {
        case: case.into(),
        method: method.into(),
        rho,
        status: res.status,
        iterations: res.traces.len(),
        initial_objective: initial,
        final_objective: last.objective,
        final_primal_res: last.primal_res,
        final_fit: fit,
        mult_norm_first: res.traces[0].mult_norm,
        mult_norm_last: last.mult_norm,
        mult_slope: s,
        mult_rel_slope: if mean > 0.0 { s / mean } else { 0.0 },
    };
    Ok((run, res))
}

pub fn thread_count() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => bail!("{THREADS_ENV} must be a positive integer, got `{v}`"),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// sbd1 against sbd0 on shared noiseless and noisy data. Both methods use
/// the same penalty: `--rho` if given, otherwise the sbd1 bound.
pub fn bench(cfg: &RunConfig, burn_in: usize) -> Result<i32> {
    if cfg.max_iter == 0 {
        bail!("config field `max_iter`: bench needs at least one iteration");
    }
    let threads = thread_count()?;
    let noisy_level = cfg.problem.noise.filter(|v| *v > 0.0).unwrap_or(0.05);
    let mut jobs = Vec::new();
    let mut rho = cfg.rho;
    for (case, level) in [("noiseless", 0.0), ("noisy", noisy_level)] {
        let spec = ProblemSpec { noise: Some(level), ..cfg.problem.clone() };
        let y = sbd_data(&spec, cfg.seed)?.y;
        let k = spec.kernel.unwrap_or(zoo::defaults::SBD_KERNEL.0);
        let one = zoo::sbd1(&y, (k, k), spec.mu.unwrap_or(zoo::defaults::SBD_MU))?;
        if rho.is_none() {
            rho = Some(resolve_rho(&one.problem, &cfg.solve_options())?);
        }
        let zero = zoo::sbd0(&y, (k, k))?;
        jobs.push((case, "sbd1", one, y.clone()));
        jobs.push((case, "sbd0", zero, y));
    }
    let rho = rho.expect("set above");

    let mut results: Vec<Option<Result<(BenchRun, SolveResult)>>> = (0..jobs.len()).map(|_| None).collect();
    for (chunk_jobs, chunk_out) in jobs.chunks(threads).zip(results.chunks_mut(threads)) {
        std::thread::scope(|s| {
            for ((case, method, inst, y), slot) in chunk_jobs.iter().zip(chunk_out.iter_mut()) {
                s.spawn(move || *slot = Some(bench_one(case, method, inst, y, cfg, rho, burn_in)));
            }
        });
    }

    let dir = cfg.out.join("bench");
    let mut runs = Vec::new();
    let mut files: Vec<(std::path::PathBuf, String)> = Vec::new();
    for ((case, method, _, _), r) in jobs.iter().zip(results) {
        let (run, res) = r.expect("every job ran")?;
        files.push((dir.join(format!("{case}_{method}.csv")), trace_csv(&res.traces, !cfg.no_timing)));
        let mut m = String::from("k,objective,mult_norm\n");
        for t in &res.traces {
            writeln!(m, "{},{},{}", t.k, t.objective, t.mult_norm).unwrap();
        }
        files.push((dir.join(format!("{case}_{method}_metrics.csv")), m));
        runs.push(run);
    }
    // Nothing is written until every solve has succeeded.
    for (path, text) in &files {
        atomic_write(path, text.as_bytes())?;
    }
    let summary = serde_json::json!({ "rho": rho, "burn_in": burn_in, "seed": cfg.seed, "runs": runs });
    let text = serde_json::to_string_pretty(&summary)?;
    atomic_write(&dir.join("summary.json"), text.as_bytes())?;
    println!("{text}");
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_a_line() {
        let pts: Vec<(f64, f64)> = (0..10).map(|k| (k as f64, 3.0 - 0.5 * k as f64)).collect();
        assert!((slope(&pts) + 0.5).abs() < 1e-12);
        assert_eq!(slope(&pts[..1]), 0.0);
    }

    #[test]
    fn demo_rows_follow_the_collapse() {
        let out = demo_counterexample(1.0, 4, 1.0, 0.0, 0.0).unwrap();
        let w: Vec<f64> = out.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
        assert_eq!(w, vec![0.0, -1.0, -2.0, -3.0]);
        assert_eq!(demo_counterexample(1.0, 0, 1.0, 0.0, 0.0).unwrap(), "k,x,y,w\n");
        assert!(demo_counterexample(0.0, 3, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn status_codes() {
        assert_eq!(exit_code(Status::Converged), 0);
        assert_eq!(exit_code(Status::MaxIter), 2);
        assert_eq!(exit_code(Status::Diverged), 3);
    }
}
