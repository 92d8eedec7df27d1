//! Command implementations. Every command except `bench` writes a manifest
//! recording its invocation, resolved config and output digests, from which
//! `replay` regenerates and byte-compares the outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use topoloc::eval::{
    label_ground_truth, pr_sweep, score_lcd, score_wakeup, summarize_lcd, summarize_wakeup, GroundTruth, PrCurve,
    Summary,
};
use topoloc::map::{build_map, TopometricMap};
use topoloc::simulator::{scenario_spec, scenario_spec_on, ScenarioSpec, WorldSpec, SCENARIO_NAMES};
use topoloc::tasks::{run_lcd, run_wakeup_batch, LcdRecord, WakeupResult};
use topoloc::traverse::Traverse;

use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::formats::{
    read_json, read_jsonl, read_map, read_traverse, sha256_file, write_json, write_jsonl, write_map, write_text,
    write_traverse,
};

pub const MANIFEST: &str = "manifest.json";

/// A results file for `eval`, labelled for the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedResults {
    pub name: String,
    pub path: PathBuf,
}

impl std::str::FromStr for NamedResults {
    type Err = String;

    /// `name=path`, or a bare path named after its parent directory.
    fn from_str(s: &str) -> Result<Self, String> {
        let (name, path) = match s.split_once('=') {
            Some((n, p)) if !n.is_empty() && !p.is_empty() => (n.to_string(), PathBuf::from(p)),
            Some(_) => return Err(format!("bad results argument {s:?}; expected name=path")),
            None => {
                let p = PathBuf::from(s);
                let name = p
                    .parent()
                    .and_then(|d| d.file_name())
                    .or_else(|| p.file_stem())
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| s.to_string());
                (name, p)
            }
        };
        Ok(NamedResults { name, path })
    }
}

/// Reproducible commands with their inputs (absolute paths).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Invocation {
    Simulate { scenario: String, seed: u64 },
    BuildMap { reference: PathBuf },
    Lcd { map: PathBuf, query: PathBuf },
    Wakeup { map: PathBuf, query: PathBuf },
    Eval { map: PathBuf, query: PathBuf, results: Vec<NamedResults> },
}

impl Invocation {
    pub fn name(&self) -> &'static str {
        match self {
            Invocation::Simulate { .. } => "simulate",
            Invocation::BuildMap { .. } => "build-map",
            Invocation::Lcd { .. } => "lcd",
            Invocation::Wakeup { .. } => "wakeup",
            Invocation::Eval { .. } => "eval",
        }
    }

    /// Same invocation with every input path made absolute.
    pub fn absolute(self) -> CliResult<Invocation> {
        let abs = |p: PathBuf| -> CliResult<PathBuf> { std::path::absolute(&p).map_err(|e| CliError::io(&p, e)) };
        Ok(match self {
            Invocation::Simulate { .. } => self,
            Invocation::BuildMap { reference } => Invocation::BuildMap { reference: abs(reference)? },
            Invocation::Lcd { map, query } => Invocation::Lcd { map: abs(map)?, query: abs(query)? },
            Invocation::Wakeup { map, query } => Invocation::Wakeup { map: abs(map)?, query: abs(query)? },
            Invocation::Eval { map, query, results } => Invocation::Eval {
                map: abs(map)?,
                query: abs(query)?,
                results: results
                    .into_iter()
                    .map(|r| Ok(NamedResults { name: r.name, path: abs(r.path)? }))
                    .collect::<CliResult<_>>()?,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub invocation: Invocation,
    pub config: Config,
    /// Output file name (relative to the output directory) → SHA-256.
    pub outputs: BTreeMap<String, String>,
    /// Full scenario definition for `simulate`, including detour intervals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioSpec>,
}

/// What a command run produced, for reporting.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub files: Vec<String>,
    pub message: String,
}

/// Runs `inv` into `out_dir` and writes its manifest.
pub fn execute(inv: Invocation, config: &Config, out_dir: &Path, force: bool) -> CliResult<Outcome> {
    config.validate()?;
    let inv = inv.absolute()?;
    let (files, message, scenario) = match &inv {
        Invocation::Simulate { scenario, seed } => {
            prepare_fresh_dir(out_dir, force)?;
            let (files, msg, spec) = simulate(scenario, *seed, config, out_dir)?;
            (files, msg, Some(spec))
        }
        other => {
            std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
            let (files, msg) = match other {
                Invocation::BuildMap { reference } => cmd_build_map(reference, config, out_dir)?,
                Invocation::Lcd { map, query } => cmd_lcd(map, query, config, out_dir)?,
                Invocation::Wakeup { map, query } => cmd_wakeup(map, query, config, out_dir)?,
                Invocation::Eval { map, query, results } => cmd_eval(map, query, results, config, out_dir)?,
                Invocation::Simulate { .. } => unreachable!(),
            };
            (files, msg, None)
        }
    };
    let mut outputs = BTreeMap::new();
    for f in &files {
        outputs.insert(f.clone(), sha256_file(&out_dir.join(f))?);
    }
    let manifest = Manifest {
        tool: "topoloc".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        invocation: inv,
        config: config.clone(),
        outputs,
        scenario,
    };
    write_json(&out_dir.join(MANIFEST), &manifest)?;
    Ok(Outcome {
        out_dir: out_dir.to_path_buf(),
        files,
        message,
    })
}

fn prepare_fresh_dir(dir: &Path, force: bool) -> CliResult<()> {
    if dir.exists() {
        let nonempty = std::fs::read_dir(dir)
            .map_err(|e| CliError::io(dir, e))?
            .next()
            .is_some();
        if nonempty && !force {
            return Err(CliError::Config(format!(
                "output directory {} is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Resolves the scenario name and seed from arguments, then config.
pub fn resolve_scenario(name: Option<String>, seed: Option<u64>, config: &Config) -> CliResult<(String, u64)> {
    let name = name
        .or_else(|| config.scenario.name.clone())
        .ok_or_else(|| CliError::Config(format!("no scenario given; valid names: {}", SCENARIO_NAMES.join(", "))))?;
    if !SCENARIO_NAMES.contains(&name.as_str()) {
        return Err(CliError::Config(format!(
            "unknown scenario {name:?}; valid names: {}",
            SCENARIO_NAMES.join(", ")
        )));
    }
    Ok((name, seed.or(config.scenario.seed).unwrap_or(0)))
}

/// Built-in scenario with the config's overrides applied.
pub fn scenario_from_config(name: &str, seed: u64, config: &Config) -> CliResult<ScenarioSpec> {
    let o = &config.scenario;
    let mut spec = if o.length_m.is_some() || o.dim.is_some() {
        let base = scenario_spec(name, seed)?.world;
        let world = WorldSpec {
            length_m: o.length_m.unwrap_or(base.length_m),
            dim: o.dim.unwrap_or(base.dim),
            ..base
        };
        scenario_spec_on(name, seed, world)?
    } else {
        scenario_spec(name, seed)?
    };
    if let Some(s) = o.sigma_app {
        spec.query.sigma_app = s;
    }
    if let Some(k) = o.odom_noise_scale {
        spec.query.odom_sigma_xy_per_m *= k;
        spec.query.odom_sigma_theta_per_m *= k;
    }
    Ok(spec)
}

fn simulate(name: &str, seed: u64, config: &Config, out: &Path) -> CliResult<(Vec<String>, String, ScenarioSpec)> {
    let spec = scenario_from_config(name, seed, config)?;
    let sc = spec.render()?;
    write_traverse(&out.join("reference.jsonl"), &sc.reference)?;
    write_traverse(&out.join("query.jsonl"), &sc.query)?;
    write_json(&out.join("scenario.json"), &spec)?;
    let files = ["reference.jsonl", "reference.tldm", "query.jsonl", "query.tldm", "scenario.json"];
    let msg = format!(
        "scenario {name} seed {seed}: {} reference frames, {} query frames, {} detours",
        sc.reference.len(),
        sc.query.len(),
        spec.query.detours.len()
    );
    Ok((files.map(String::from).to_vec(), msg, spec))
}

fn cmd_build_map(reference: &Path, config: &Config, out: &Path) -> CliResult<(Vec<String>, String)> {
    let tr = read_traverse(reference)?;
    let map = build_map(&tr, config.map.node_spacing, config.map.window)?;
    write_map(&out.join("map.json"), &map)?;
    let msg = format!("{} nodes from {} reference frames", map.len(), tr.len());
    Ok((vec!["map.json".into(), "map.tldm".into()], msg))
}

/// Ground truth when both the map and the query carry poses.
fn ground_truth(map: &TopometricMap, query: &Traverse, config: &Config) -> CliResult<Option<GroundTruth>> {
    if map.gt_poses().is_none() || query.gt_poses().is_none() {
        return Ok(None);
    }
    Ok(Some(label_ground_truth(query, map, config.eval.tolerance())?))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LcdSummary {
    pub frames: usize,
    pub forward_only: bool,
    pub lambda: f64,
    pub k: usize,
    pub log_evidence: f64,
    pub proposals: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<Summary>,
}

fn cmd_lcd(map_path: &Path, query_path: &Path, config: &Config, out: &Path) -> CliResult<(Vec<String>, String)> {
    let map = read_map(map_path)?;
    let query = read_traverse(query_path)?;
    let res = run_lcd(&map, &query, &config.localizer(), config.task.forward_only)?;
    write_jsonl(&out.join("results.jsonl"), &res.records)?;
    let mut files = vec!["results.jsonl".to_string()];
    let gt = ground_truth(&map, &query, config)?;
    let eval = match &gt {
        Some(gt) => {
            write_pr_csv(&out.join("pr.csv"), &score_lcd(&res.records, gt)?)?;
            files.push("pr.csv".into());
            Some(summarize_lcd(&res.records, gt, config.filter.tau_thres)?)
        }
        None => None,
    };
    let summary = LcdSummary {
        frames: res.records.len(),
        forward_only: config.task.forward_only,
        lambda: res.lambda,
        k: res.k,
        log_evidence: res.log_evidence,
        proposals: res.records.iter().filter(|r| matches!(r.proposal, topoloc::filter::Proposal::Localized(_))).count(),
        eval,
    };
    write_json(&out.join("summary.json"), &summary)?;
    files.push("summary.json".into());
    let mut msg = format!("{} frames, {} proposals", summary.frames, summary.proposals);
    if let Some(e) = &summary.eval {
        let _ = write!(msg, ", R@99%P {:.4}", e.r_at_99p);
    }
    Ok((files, msg))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WakeupSummary {
    pub trials: usize,
    pub converged: usize,
    pub mean_steps_converged: Option<f64>,
    pub mean_distance_converged: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<Summary>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn cmd_wakeup(map_path: &Path, query_path: &Path, config: &Config, out: &Path) -> CliResult<(Vec<String>, String)> {
    let map = read_map(map_path)?;
    let query = read_traverse(query_path)?;
    let results = run_wakeup_batch(&map, &query, config.task.seed, &config.wakeup(), &config.localizer())?;
    write_jsonl(&out.join("results.jsonl"), &results)?;
    let mut files = vec!["results.jsonl".to_string()];
    let gt = ground_truth(&map, &query, config)?;
    let eval = match &gt {
        Some(gt) => {
            write_pr_csv(&out.join("pr.csv"), &score_wakeup(&results, gt)?)?;
            files.push("pr.csv".into());
            Some(summarize_wakeup(&results, gt)?)
        }
        None => None,
    };
    let conv = || results.iter().filter(|r| r.converged);
    let summary = WakeupSummary {
        trials: results.len(),
        converged: conv().count(),
        mean_steps_converged: mean(conv().map(|r| r.steps_used as f64)),
        mean_distance_converged: mean(conv().map(|r| r.distance_traveled)),
        eval,
    };
    write_json(&out.join("summary.json"), &summary)?;
    files.push("summary.json".into());
    let mut msg = format!("{} trials, {} converged", summary.trials, summary.converged);
    if let Some(e) = &summary.eval {
        let _ = write!(msg, ", R@99%P {:.4}", e.r_at_99p);
    }
    Ok((files, msg))
}

enum Loaded {
    Lcd(Vec<LcdRecord>),
    Wakeup(Vec<WakeupResult>),
}

fn load_results(path: &Path) -> CliResult<Loaded> {
    let rows: Vec<serde_json::Value> = read_jsonl(path)?;
    let bad = |e: serde_json::Error| CliError::Data(format!("{}: {e}", path.display()));
    let is_wakeup = rows.first().is_some_and(|r| r.get("trial").is_some());
    if is_wakeup {
        let v = rows.into_iter().map(serde_json::from_value).collect::<Result<_, _>>().map_err(bad)?;
        Ok(Loaded::Wakeup(v))
    } else {
        let v = rows.into_iter().map(serde_json::from_value).collect::<Result<_, _>>().map_err(bad)?;
        Ok(Loaded::Lcd(v))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRow {
    pub name: String,
    pub task: String,
    pub summary: Summary,
}

fn cmd_eval(
    map_path: &Path,
    query_path: &Path,
    results: &[NamedResults],
    config: &Config,
    out: &Path,
) -> CliResult<(Vec<String>, String)> {
    if results.is_empty() {
        return Err(CliError::Config("eval needs at least one results file".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for r in results {
        if !seen.insert(&r.name) || r.name.contains(['/', '\\']) {
            return Err(CliError::Config(format!("results names must be unique file-safe labels, got {:?}", r.name)));
        }
    }
    let map = read_map(map_path)?;
    let query = read_traverse(query_path)?;
    let gt = ground_truth(&map, &query, config)?
        .ok_or_else(|| CliError::Data("eval needs ground-truth poses on both the map and the query".into()))?;
    write_jsonl(&out.join("labels.jsonl"), &gt.labels)?;
    let mut files = vec!["labels.jsonl".to_string()];
    let mut rows = Vec::new();
    for r in results {
        let (task, curve, summary) = match load_results(&r.path)? {
            Loaded::Lcd(recs) => {
                let items = topoloc::eval::lcd_items(&recs, &gt)?;
                ("lcd", pr_sweep(&items), summarize_lcd(&recs, &gt, config.filter.tau_thres)?)
            }
            Loaded::Wakeup(res) => ("wakeup", score_wakeup(&res, &gt)?, summarize_wakeup(&res, &gt)?),
        };
        let file = format!("pr_{}.csv", r.name);
        write_pr_csv(&out.join(&file), &curve)?;
        files.push(file);
        rows.push(EvalRow {
            name: r.name.clone(),
            task: task.into(),
            summary,
        });
    }
    write_json(&out.join("summary.json"), &rows)?;
    write_text(&out.join("table.csv"), &table_csv(&rows))?;
    let table = table_text(&rows);
    write_text(&out.join("table.txt"), &table)?;
    files.extend(["summary.json", "table.csv", "table.txt"].map(String::from));
    Ok((files, table.trim_end().to_string()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn pr_csv(curve: &PrCurve) -> String {
    let mut s = String::from("threshold,precision,recall,tp,fp,fn,tn,mean_distance\n");
    for p in &curve.points {
        let c = &p.counts;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            p.threshold,
            p.precision,
            p.recall,
            c.tp,
            c.fp,
            c.fn_,
            c.tn,
            opt(p.mean_distance)
        );
    }
    s
}

fn write_pr_csv(path: &Path, curve: &PrCurve) -> CliResult<()> {
    write_text(path, &pr_csv(curve))
}

fn table_csv(rows: &[EvalRow]) -> String {
    let mut s = String::from("name,task,items,within_map,r_at_99p,r_at_100p,mean_distance_at_99p\n");
    for r in rows {
        let m = &r.summary;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.name,
            r.task,
            m.items,
            m.within_map,
            m.r_at_99p,
            m.r_at_100p,
            opt(m.mean_distance_at_99p)
        );
    }
    s
}

/// Fixed-width table in the layout of a results table: one row per run.
fn table_text(rows: &[EvalRow]) -> String {
    let w = rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
    let mut s = format!("{:<w$}  {:<6}  {:>7}  {:>8}  {:>9}  {:>10}\n", "run", "task", "R@99%P", "R@100%P", "items", "dist@99%P");
    for r in rows {
        let m = &r.summary;
        let d = m.mean_distance_at_99p.map(|d| format!("{d:.1} m")).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            s,
            "{:<w$}  {:<6}  {:>7.4}  {:>8.4}  {:>9}  {:>10}",
            r.name, r.task, m.r_at_99p, m.r_at_100p, m.items, d
        );
    }
    s
}

/// Files listed in `manifest` whose digest differs in `dir`.
pub fn compare_outputs(manifest: &Manifest, dir: &Path) -> CliResult<Vec<String>> {
    let mut bad = Vec::new();
    for (name, digest) in &manifest.outputs {
        let path = dir.join(name);
        if !path.exists() || &sha256_file(&path)? != digest {
            bad.push(name.clone());
        }
    }
    Ok(bad)
}

/// Re-runs the command recorded in `manifest_path` into `out_dir` and checks
/// every output against the recorded digests.
pub fn replay(manifest_path: &Path, out_dir: &Path, force: bool) -> CliResult<Outcome> {
    let manifest: Manifest = read_json(manifest_path)?;
    let outcome = execute(manifest.invocation.clone(), &manifest.config, out_dir, force)?;
    let bad = compare_outputs(&manifest, out_dir)?;
    if !bad.is_empty() {
        return Err(CliError::Runtime(format!("replay differs from the recording in: {}", bad.join(", "))));
    }
    Ok(Outcome {
        message: format!("{} outputs identical to the recording", manifest.outputs.len()),
        ..outcome
    })
}
