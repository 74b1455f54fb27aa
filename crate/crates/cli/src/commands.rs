//! Subcommand bodies. Data goes to `out`; diagnostics go to the log.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use baymoth::benchmark::experiment::{
    ablate_prepared, prepare_task, prepare_tasks, run_prepared, run_seed, AggregateCurve, ExperimentPlan,
    RunRecord,
};
use baymoth::benchmark::experiment::AblationAxis;
use baymoth::benchmark::tabular::read_table_file;
use baymoth::gp::Domain;
use baymoth::meta::{build_environments, EnvironmentSnapshot, VirtualEnvironment};
use baymoth::policy::{run_policy_profiled, PolicyConfig, PolicyKind};
use baymoth::profile::{stage_table, timed, Profiler, Stage, StageRow};
use baymoth::session::SessionState;

use crate::config::{load_plan, RunConfigFile};
use crate::report::{regret_svg, slug, write_aggregate, write_text, write_trajectories, write_usage, SettingColumn};
use crate::{SessionAction, UsageError};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn source_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(usage(format!("{}: no source CSV files", dir.display())));
    }
    Ok(files)
}

/// Fit one environment per CSV in `sources` and write a snapshot.
pub fn build_envs(
    sources: &Path,
    dest: &Path,
    config: Option<&Path>,
    out: &mut dyn Write,
) -> anyhow::Result<()> {
    let cfg = RunConfigFile::load_or_default(config)?;
    let files = source_files(sources)?;
    let mut tables = Vec::with_capacity(files.len());
    for f in &files {
        let table = read_table_file(f).map_err(|e| usage(e.to_string()))?;
        if let Some(first) = tables.first().map(|(_, t): &(PathBuf, baymoth::benchmark::tabular::Table)| t.dim()) {
            if table.dim() != first {
                return Err(usage(format!(
                    "{}: {} input columns, expected {first}",
                    f.display(),
                    table.dim()
                )));
            }
        }
        tables.push((f.clone(), table));
    }
    let dim = tables[0].1.dim();
    let domain = match cfg.domain()? {
        Some(d) if d.dim() != dim => {
            return Err(usage(format!("config domain has {} dimensions, sources have {dim}", d.dim())))
        }
        Some(d) => d,
        None => union_domain(tables.iter().map(|(_, t)| t), dim)?,
    };
    let datasets = tables
        .iter()
        .map(|(f, t)| t.to_dataset(&domain).map_err(|e| usage(format!("{}: {e}", f.display()))))
        .collect::<anyhow::Result<Vec<_>>>()?;

    let start = Instant::now();
    let envs = build_environments(&datasets, cfg.policy.kernels.source, cfg.policy.noise)?;
    let elapsed = start.elapsed();

    let names: Vec<String> = files
        .iter()
        .map(|f| f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    writeln!(out, "id\tname\tpoints\tjitter\tmean\tstd")?;
    for (env, name) in envs.iter().zip(&names) {
        let s = env.standardization();
        writeln!(
            out,
            "{}\t{name}\t{}\t{:e}\t{:.6}\t{:.6}",
            env.id(),
            env.dataset().len(),
            env.model().jitter(),
            s.mean,
            s.std
        )?;
    }
    writeln!(
        out,
        "source GP training: {} environments in {:.3} ms ({:.3} ms avg)",
        envs.len(),
        elapsed.as_secs_f64() * 1e3,
        elapsed.as_secs_f64() * 1e3 / envs.len() as f64
    )?;
    EnvironmentSnapshot::from_environments(&envs, &names, domain, cfg.policy.noise)
        .save(dest)
        .map_err(|e| usage(format!("{}: {e}", dest.display())))?;
    writeln!(out, "wrote {}", dest.display())?;
    Ok(())
}

fn union_domain<'a>(
    tables: impl Iterator<Item = &'a baymoth::benchmark::tabular::Table>,
    dim: usize,
) -> anyhow::Result<Domain> {
    let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); dim];
    for t in tables {
        for row in &t.rows {
            for (b, &v) in bounds.iter_mut().zip(row) {
                b.0 = b.0.min(v);
                b.1 = b.1.max(v);
            }
        }
    }
    for b in &mut bounds {
        if b.1 <= b.0 {
            *b = (b.0 - 0.5, b.1 + 0.5);
        }
    }
    Ok(Domain::new(bounds)?)
}

/// Summary of a finished benchmark.
#[derive(Debug, Clone)]
pub struct BenchSummary {
    pub curves: Vec<AggregateCurve>,
    pub runs: usize,
    pub failures: Vec<String>,
    pub files: Vec<PathBuf>,
}

fn base_config(plan: &ExperimentPlan) -> PolicyConfig {
    PolicyConfig {
        budget: plan.budget,
        ..plan.policy.clone()
    }
}

/// Run a plan and write trajectories, aggregates, usage, plots and a
/// manifest into `dir`.
pub fn bench(plan_path: &Path, dir: &Path, out: &mut dyn Write) -> anyhow::Result<BenchSummary> {
    let plan = load_plan(plan_path)?;
    std::fs::create_dir_all(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    let tasks = prepare_tasks(&plan)?;
    for t in &tasks {
        if let Some(ts) = &t.task_set {
            log::info!(
                "{}: planted source {}, realized NCC {:.3}",
                t.name,
                ts.planted,
                ts.max_ncc()
            );
        }
    }

    let base = base_config(&plan);
    let (runs, curves, failures, axis) = match &plan.ablation {
        Some(a) => {
            let groups = ablate_prepared(a.axis, &a.values, &plan, &tasks)?;
            let mut runs = Vec::new();
            let mut curves = Vec::new();
            let mut failures = Vec::new();
            for g in groups {
                runs.extend(g.result.runs);
                curves.extend(g.result.curves);
                failures.extend(g.result.failures);
            }
            (runs, curves, failures, Some(a.axis))
        }
        None => {
            let r = run_prepared(&plan, &tasks, &base, None);
            (r.runs, r.curves, r.failures, None)
        }
    };

    let axis_name = axis.map(|a| a.to_string());
    let setting = SettingColumn(axis_name.as_deref());
    let mut files = Vec::new();
    let p = dir.join("trajectories.csv");
    write_trajectories(&p, &runs, setting, plan.record_timing).with_context(|| p.display().to_string())?;
    files.push(p);
    let p = dir.join("aggregate.csv");
    write_aggregate(&p, &curves, setting).with_context(|| p.display().to_string())?;
    files.push(p);

    let gamma_of = |r: &RunRecord| match (axis, r.setting) {
        (Some(AblationAxis::Gamma), Some(v)) => v,
        _ => base.gamma,
    };
    let mut usage_groups: Vec<(f64, Vec<RunRecord>)> = Vec::new();
    for r in &runs {
        let g = gamma_of(r);
        match usage_groups.iter_mut().find(|(v, _)| v.to_bits() == g.to_bits()) {
            Some((_, list)) => list.push(r.clone()),
            None => usage_groups.push((g, vec![r.clone()])),
        }
    }
    let borrowed: Vec<(f64, &[RunRecord])> = usage_groups.iter().map(|(g, v)| (*g, v.as_slice())).collect();
    let p = dir.join("usage.csv");
    write_usage(&p, &borrowed).with_context(|| p.display().to_string())?;
    files.push(p);

    for t in &tasks {
        let set_curves: Vec<&AggregateCurve> = curves.iter().filter(|c| c.task_set == t.name).collect();
        let svg = regret_svg(&t.name, &set_curves, axis_name.as_deref());
        let p = dir.join(format!("regret_{}.svg", slug(&t.name)));
        write_text(&p, &svg).with_context(|| p.display().to_string())?;
        files.push(p);
    }

    let manifest = serde_json::json!({
        "runs": runs.len(),
        "failed": failures.len(),
        "failures": failures,
        "files": files.iter().filter_map(|f| f.file_name()).map(|f| f.to_string_lossy().into_owned()).collect::<Vec<_>>(),
    });
    let p = dir.join("manifest.json");
    write_text(&p, &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
    files.push(p);

    writeln!(out, "policy\tset\t{}final_mean\tfinal_std\tn\tfailed", axis_name.as_ref().map(|a| format!("{a}\t")).unwrap_or_default())?;
    for c in &curves {
        let setting = match (axis, c.setting) {
            (Some(_), Some(v)) => format!("{v}\t"),
            _ => String::new(),
        };
        writeln!(
            out,
            "{}\t{}\t{setting}{:.4}\t{:.4}\t{}\t{}",
            c.policy,
            c.task_set,
            c.mean.last().copied().unwrap_or(f64::NAN),
            c.std.last().copied().unwrap_or(f64::NAN),
            c.n_runs,
            c.n_failed
        )?;
    }
    if !failures.is_empty() {
        log::warn!("{} runs failed; see manifest.json", failures.len());
    }
    Ok(BenchSummary {
        curves,
        runs: runs.len(),
        failures,
        files,
    })
}

fn parse_number(s: &str, what: &str) -> anyhow::Result<f64> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| usage(format!("{what} '{s}' is not a finite number")))
}

fn load_envs(path: Option<&Path>) -> anyhow::Result<Option<(Domain, Vec<VirtualEnvironment>)>> {
    let Some(path) = path else { return Ok(None) };
    let snap = EnvironmentSnapshot::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let envs = snap.restore()?;
    Ok(Some((snap.domain, envs)))
}

/// Ask/tell/status against a persisted session file.
pub fn session(
    envs_path: Option<&Path>,
    config: Option<&Path>,
    state_path: &Path,
    action: &SessionAction,
    out: &mut dyn Write,
) -> anyhow::Result<()> {
    let cfg = RunConfigFile::load_or_default(config)?;
    let existing = if state_path.exists() {
        Some(SessionState::load(state_path).map_err(|e| usage(format!("{}: {e}", state_path.display())))?)
    } else {
        None
    };
    match action {
        SessionAction::Status => {
            let Some(state) = existing else {
                writeln!(out, "0 observations")?;
                return Ok(());
            };
            writeln!(out, "{} observations", state.steps())?;
            for (i, x) in state.history.points().enumerate() {
                let raw = state.domain.from_unit(x);
                writeln!(
                    out,
                    "{}\t{}\t{}{}",
                    i + 1,
                    join(&raw),
                    state.history.values()[i],
                    if state.off_policy[i] { "\toff-policy" } else { "" }
                )?;
            }
            if let Some(best) = state.incumbent() {
                writeln!(out, "incumbent: {best}")?;
                if let Some(f_star) = state.f_star.or(cfg.f_star) {
                    writeln!(out, "regret vs incumbent: {}", f_star - best)?;
                }
            }
            if let Some(p) = &state.pending {
                writeln!(out, "pending: {}", join(&state.domain.from_unit(&p.x)))?;
            }
            Ok(())
        }
        SessionAction::Ask => {
            let loaded = load_envs(envs_path)?;
            let mut state = match existing {
                Some(s) => s,
                None => {
                    let domain = match (&loaded, cfg.domain()?) {
                        (Some((d, _)), _) => d.clone(),
                        (None, Some(d)) => d,
                        (None, None) => {
                            return Err(usage("a new session needs --envs or a config with a domain"))
                        }
                    };
                    let mut s = SessionState::new(cfg.policy.clone(), domain)?;
                    s.f_star = cfg.f_star;
                    s
                }
            };
            let envs = match &loaded {
                Some((d, envs)) => {
                    if d.dim() != state.domain.dim() {
                        return Err(usage("environment snapshot and session differ in dimension"));
                    }
                    envs.as_slice()
                }
                None => &[],
            };
            let p = state.ask(envs)?;
            state.save(state_path).map_err(|e| usage(format!("{}: {e}", state_path.display())))?;
            writeln!(out, "x: {}", join(&state.domain.from_unit(&p.x)))?;
            let tag = match p.selected_env {
                Some(id) => format!("{} (environment {id})", p.branch.name()),
                None => p.branch.name().to_string(),
            };
            writeln!(out, "branch: {tag}")?;
            if !p.ncc_scores.is_empty() {
                let scores: Vec<String> = p.ncc_scores.iter().map(|s| format!("{s:.4}")).collect();
                writeln!(out, "ncc: {}", scores.join(" "))?;
            }
            Ok(())
        }
        SessionAction::Tell { values } => {
            let Some(mut state) = existing else {
                return Err(usage("tell without a pending ask"));
            };
            if state.pending.is_none() {
                return Err(usage("tell without a pending ask"));
            }
            let (y, xs) = values.split_last().ok_or_else(|| usage("tell needs coordinates and a value"))?;
            let y = parse_number(y, "value")?;
            let raw = xs
                .iter()
                .map(|s| parse_number(s, "coordinate"))
                .collect::<anyhow::Result<Vec<f64>>>()?;
            if raw.len() != state.domain.dim() {
                return Err(usage(format!(
                    "expected {} coordinates, got {}",
                    state.domain.dim(),
                    raw.len()
                )));
            }
            let x = state.domain.to_unit(&raw);
            let outcome = state.tell(&x, y).map_err(|e| usage(e.to_string()))?;
            state.save(state_path).map_err(|e| usage(format!("{}: {e}", state_path.display())))?;
            if outcome.off_policy {
                log::warn!("told point differs from the pending proposal; recorded as off-policy");
                writeln!(out, "warning: off-policy observation")?;
            }
            writeln!(out, "recorded step {}", outcome.step)?;
            Ok(())
        }
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// Stage timings of one BayMOTH run.
#[derive(Debug, Clone)]
pub struct ProfileReport {
    pub task: String,
    pub rows: Vec<StageRow>,
}

impl ProfileReport {
    pub fn share(&self, stage: Stage) -> Option<f64> {
        self.rows.iter().find(|r| r.stage == stage).and_then(|r| r.share)
    }
}

/// Profile the first (task set, seed) cell of a plan under BayMOTH.
pub fn profile(plan_path: &Path, out: &mut dyn Write) -> anyhow::Result<ProfileReport> {
    let plan = load_plan(plan_path)?;
    if plan.task_sets.len() > 1 || plan.seeds > 1 {
        log::warn!("profiling only the first task set and seed of the plan");
    }
    let cfg = PolicyConfig {
        seed: run_seed(plan.seed, 0, 0),
        ..base_config(&plan)
    };
    let task = prepare_task(&plan.task_sets[0], &cfg)?;
    let profiler = Profiler::new();
    let datasets: Vec<_> = task.envs.iter().map(|e| e.dataset().clone()).collect();
    let envs = timed(Some(&profiler), Stage::SourceGpTraining, || {
        build_environments(&datasets, cfg.kernels.source, cfg.noise)
    })?;
    let traj = run_policy_profiled(task.objective.as_ref(), &envs, &cfg, PolicyKind::Baymoth, Some(&profiler));
    if let Some(f) = &traj.failure {
        anyhow::bail!("profiled run failed: {f}");
    }
    let rows = stage_table(&profiler);
    writeln!(out, "task: {} (T = {}, seed {})", task.name, cfg.budget, cfg.seed)?;
    writeln!(out, "{:<44} {:>8} {:>12} {:>12} {:>9}", "stage", "calls", "total ms", "avg ms", "share %")?;
    for r in &rows {
        writeln!(
            out,
            "{:<44} {:>8} {:>12.3} {:>12.4} {:>9}",
            r.stage.label(),
            r.calls,
            r.total.as_secs_f64() * 1e3,
            r.avg().as_secs_f64() * 1e3,
            r.share.map(|s| format!("{s:.2}")).unwrap_or_else(|| "-".into())
        )?;
    }
    let report = ProfileReport {
        task: task.name,
        rows,
    };
    let top = report.share(Stage::AcquisitionEvaluation).unwrap_or(0.0) + report.share(Stage::Selection).unwrap_or(0.0);
    writeln!(out, "acquisition evaluation + selection/orchestration = {top:.2} % of proposal time")?;
    Ok(report)
}
