//! Subcommand implementations. Data goes to `--out` (or standard output);
//! when an output file is given, a one-line JSON summary is printed.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use cspez_core::eval::{self, fraction_below, trace_binned_errors, ErrorReport};
use cspez_core::planner::{self, PlanResult, ValidationReport};
use cspez_core::surrogate::{generate_labels, latin_hypercube, train_with_progress, Configuration, MlpModel, TrainingSet};
use cspez_core::{Method, PursuerParams, RngStream};
use serde::Serialize;
use serde_json::json;

use crate::config::ScenarioConfig;
use crate::Failure;

/// Substream indices of the root seed.
mod stream {
    pub const TRAIN_CONFIGS: u64 = 1;
    pub const TRAIN_LABELS: u64 = 2;
    pub const TRAINING: u64 = 3;
    pub const TEST_CONFIGS: u64 = 4;
    pub const TEST_LABELS: u64 = 5;
    pub const GRID_MC: u64 = 6;
    pub const VALIDATION: u64 = 7;
}

fn rng(cfg: &ScenarioConfig, k: u64) -> RngStream {
    RngStream::new(cfg.seed).substream(k)
}

fn write_out(out: Option<&Path>, data: &[u8]) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, data)?,
        None => std::io::stdout().write_all(data)?,
    }
    Ok(())
}

fn summary(out: Option<&Path>, value: serde_json::Value) {
    if out.is_some() {
        println!("{value}");
    }
}

fn load_model(cfg: &ScenarioConfig, methods: &[Method]) -> Result<Option<MlpModel>, Failure> {
    if !methods.contains(&Method::Nn) {
        return Ok(None);
    }
    let path = cfg
        .surrogate
        .model
        .as_ref()
        .ok_or_else(|| Failure::config("the nn method needs a model (surrogate.model or --model)"))?;
    MlpModel::load(path)
        .map(Some)
        .map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn mean_pursuer(cfg: &ScenarioConfig) -> Result<PursuerParams, Failure> {
    Ok(PursuerParams::from_array(cfg.belief.mean)?)
}

pub fn csbez_grid(cfg: &ScenarioConfig, out: Option<&Path>) -> Result<(), Failure> {
    let rows = eval::csbez_grid(&mean_pursuer(cfg)?, cfg.evader.heading, cfg.evader.speed, &cfg.grid)?;
    let mut s = String::from("x,y,z\n");
    for [x, y, z] in &rows {
        let _ = writeln!(s, "{x},{y},{z}");
    }
    write_out(out, s.as_bytes())?;
    let inside = rows.iter().filter(|r| r[2] <= 0.0).count();
    summary(out, json!({ "cells": rows.len(), "inside": inside }));
    Ok(())
}

pub fn cspez_eval(cfg: &ScenarioConfig, out: Option<&Path>) -> Result<(), Failure> {
    let methods = cfg.eval.methods.clone();
    let model = load_model(cfg, &methods)?;
    let grid = eval::level_set_grid(
        &cfg.belief,
        cfg.evader.heading,
        cfg.evader.speed,
        &cfg.grid,
        &methods,
        cfg.eval.mc_n,
        model.as_ref(),
        &rng(cfg, stream::GRID_MC),
        &cfg.eval.thresholds,
        cfg.workers,
    )?;
    write_out(out, grid.to_csv().as_bytes())?;
    let radius = 2.0 * cfg.belief.mean[3];
    let near: serde_json::Map<_, _> = grid
        .methods
        .iter()
        .map(|&m| {
            let f = eval::top_decile_near_turn_centers(&grid, m, &cfg.belief, radius);
            (m.to_string(), json!(f))
        })
        .collect();
    summary(out, json!({ "cells": grid.mc.len(), "top_decile_near_turn_centers": near }));
    Ok(())
}

/// Random test configurations with Monte Carlo baselines, compared against
/// the configured methods.
fn test_report(cfg: &ScenarioConfig) -> Result<ErrorReport, Failure> {
    let methods: Vec<Method> = cfg.eval.methods.iter().copied().filter(|m| *m != Method::Mc).collect();
    if methods.is_empty() {
        return Err(Failure::config("eval.methods needs at least one non-Monte-Carlo method"));
    }
    let model = load_model(cfg, &methods)?;
    let configs = latin_hypercube(cfg.eval.n_test, &cfg.surrogate.ranges, &mut rng(cfg, stream::TEST_CONFIGS))?;
    Ok(eval::compare_methods(
        &configs,
        cfg.eval.mc_n,
        &methods,
        model.as_ref(),
        &rng(cfg, stream::TEST_LABELS),
        cfg.workers,
    )?)
}

pub fn compare(cfg: &ScenarioConfig, out: Option<&Path>) -> Result<(), Failure> {
    let report = test_report(cfg)?;
    write_out(out, report.to_csv().as_bytes())?;
    let truth = report.truth();
    let per_method: serde_json::Map<_, _> = report
        .methods
        .iter()
        .zip(&report.metrics)
        .map(|(m, e)| {
            let est = report.column(*m).unwrap();
            let v = json!({
                "mse": e.mse,
                "rmse": e.rmse,
                "aae": e.aae,
                "max_ae": e.max_ae,
                "frac_below_0.01": fraction_below(&est, &truth, 0.01),
                "frac_below_0.02": fraction_below(&est, &truth, 0.02),
            });
            (m.to_string(), v)
        })
        .collect();
    summary(out, json!({ "n": report.records.len(), "methods": per_method }));
    Ok(())
}

pub fn trace_bins(cfg: &ScenarioConfig, out: Option<&Path>) -> Result<(), Failure> {
    let report = test_report(cfg)?;
    let bins = trace_binned_errors(&report, cfg.eval.bins)?;
    write_out(out, bins.to_csv().as_bytes())?;
    let rho: serde_json::Map<_, _> = bins
        .methods
        .iter()
        .enumerate()
        .map(|(i, m)| (m.to_string(), json!({ "binned": bins.spearman_binned[i], "raw": bins.spearman_raw[i] })))
        .collect();
    summary(out, json!({ "spearman": rho, "empty_bins": bins.empty_bins }));
    Ok(())
}

fn labelled(cfg: &ScenarioConfig) -> Result<TrainingSet, Failure> {
    let s = &cfg.surrogate;
    let configs: Vec<Configuration> = latin_hypercube(s.n, &s.ranges, &mut rng(cfg, stream::TRAIN_CONFIGS))?;
    let mut ts = generate_labels(&configs, s.mc_n, &rng(cfg, stream::TRAIN_LABELS), cfg.workers)?;
    ts.meta.ranges = Some(s.ranges);
    ts.meta.seed = cfg.seed;
    Ok(ts)
}

pub fn label(cfg: &ScenarioConfig, out: Option<&Path>) -> Result<(), Failure> {
    let out = out.ok_or_else(|| Failure::config("label needs --out"))?;
    let ts = labelled(cfg)?;
    ts.save(out)?;
    let mean = ts.labels.iter().sum::<f64>() / ts.len().max(1) as f64;
    summary(Some(out), json!({ "n": ts.len(), "mc_n": ts.meta.mc_n, "mean_label": mean }));
    Ok(())
}

pub fn train(cfg: &ScenarioConfig, out: Option<&Path>) -> Result<(), Failure> {
    let out = out.ok_or_else(|| Failure::config("train needs --out"))?;
    let ts = match &cfg.surrogate.dataset {
        Some(p) => TrainingSet::load(p).map_err(|e| Failure::config(format!("{}: {e}", p.display())))?,
        None => labelled(cfg)?,
    };
    let mut hyper = cfg.surrogate.hyper;
    hyper.seed = rng(cfg, stream::TRAINING).next_u64();
    let ranges = ts.meta.ranges.unwrap_or(cfg.surrogate.ranges);
    let (model, report) = train_with_progress(&ts, &hyper, ranges, |epoch, tr, va| {
        if epoch % 10 == 0 {
            eprintln!("epoch {epoch}: train mse {tr:.3e}, val mse {va:.3e}");
        }
    })?;
    model.save(out)?;
    let mut report_path = out.as_os_str().to_owned();
    report_path.push(".report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report).map_err(cspez_core::Error::from)? + "\n")?;
    summary(
        Some(out),
        json!({
            "n_train": report.n_train,
            "n_val": report.n_val,
            "best_epoch": report.best_epoch,
            "best_val_mse": report.best_val_mse,
            "epochs": report.train_mse.len(),
        }),
    );
    Ok(())
}

#[derive(Serialize)]
struct PlanOutput<'a> {
    problem: &'a planner::PlanProblem,
    result: &'a PlanResult,
    validation: &'a ValidationReport,
}

fn plan_one(
    cfg: &ScenarioConfig,
    method: Method,
    epsilon: f64,
    model: Option<&MlpModel>,
) -> Result<(planner::PlanProblem, PlanResult, ValidationReport), Failure> {
    let problem = cfg.plan_problem(method, epsilon);
    problem.validate().map_err(|e| Failure::config(e.to_string()))?;
    let result = planner::plan(&problem, model)?;
    let seed = rng(cfg, stream::VALIDATION).next_u64();
    let report = planner::validate(&result, &problem, model, cfg.planner.validate_mc_n, seed, cfg.planner.validate_factor)?;
    Ok((problem, result, report))
}

pub fn plan(cfg: &ScenarioConfig, out: Option<&Path>) -> Result<(), Failure> {
    let method = cfg.planner.method;
    let model = load_model(cfg, &[method])?;
    let (problem, result, validation) = plan_one(cfg, method, cfg.planner.epsilon, model.as_ref())?;
    let doc = PlanOutput {
        problem: &problem,
        result: &result,
        validation: &validation,
    };
    let text = serde_json::to_string_pretty(&doc).map_err(cspez_core::Error::from)? + "\n";
    write_out(out, text.as_bytes())?;
    summary(
        out,
        json!({
            "method": method,
            "epsilon": problem.epsilon,
            "tf": result.tf,
            "status": result.status,
            "success": result.is_success(),
            "max_mccspez": validation.max_mc,
            "wall_time_s": result.wall_time_s,
        }),
    );
    if !result.is_success() {
        return Err(Failure::infeasible(format!(
            "plan did not converge to a feasible point (status {:?}, residuals {:?})",
            result.status, result.residuals
        )));
    }
    Ok(())
}

pub fn table2(cfg: &ScenarioConfig, out: Option<&Path>) -> Result<(), Failure> {
    let methods = cfg.planner.table_methods.clone();
    let model = load_model(cfg, &methods)?;
    let mut csv = String::from("method,epsilon,tf,max_mccspez,opt_time,status,success\n");
    let mut failed = Vec::new();
    for &m in &methods {
        for &eps in &cfg.eval.thresholds {
            let clock = Instant::now();
            let (_, r, v) = plan_one(cfg, m, eps, model.as_ref())?;
            eprintln!("{m} eps={eps}: tf {:.4} status {:?} ({:.1}s)", r.tf, r.status, clock.elapsed().as_secs_f64());
            let status = serde_json::to_value(r.status).map_err(cspez_core::Error::from)?;
            let _ = writeln!(
                csv,
                "{m},{eps},{},{},{},{},{}",
                r.tf,
                v.max_mc,
                r.wall_time_s,
                status.as_str().unwrap_or("unknown"),
                r.is_success()
            );
            if !r.is_success() {
                failed.push(format!("{m}@{eps}"));
            }
        }
    }
    write_out(out, csv.as_bytes())?;
    summary(out, json!({ "rows": methods.len() * cfg.eval.thresholds.len(), "failed": failed }));
    if !failed.is_empty() {
        return Err(Failure::infeasible(format!("unsuccessful plans: {}", failed.join(", "))));
    }
    Ok(())
}
