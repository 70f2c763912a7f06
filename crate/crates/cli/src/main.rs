mod config;
mod experiments;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use config::ExperimentConfig;
use experiments::{planned_outputs, Outcome, Table};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::sync::{Arc, Mutex};
use std::time::Instant;

const EXIT_SOLVER: u8 = 2;
const EXIT_CONFIG: u8 = 3;

#[derive(Parser)]
#[command(name = "ddbar", version, about = "Numerical experiments on model complex surfaces")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Schema and range checks only.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run one experiment per value of a `[sweep]` parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Concurrent runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

/// Error with the exit code it maps to.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

fn config_err(err: anyhow::Error) -> Failure {
    Failure { code: EXIT_CONFIG, err }
}

fn solver_err(err: anyhow::Error) -> Failure {
    Failure { code: EXIT_SOLVER, err }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Cmd::Run { config, out, seed } => cmd_run(&config, out, seed),
        Cmd::Validate { config } => cmd_validate(&config),
        Cmd::Sweep {
            config,
            out,
            seed,
            jobs,
        } => cmd_sweep(&config, out, seed, jobs),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn read_config(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(config_err)
}

fn cmd_validate(path: &Path) -> Result<(), Failure> {
    let cfg = ExperimentConfig::parse(&read_config(path)?)
        .with_context(|| format!("invalid config {}", path.display()))
        .map_err(config_err)?;
    println!(
        "ok: {} on {} {:?}",
        cfg.experiment.name(),
        cfg.geometry.kind.name(),
        cfg.geometry.grid
    );
    Ok(())
}

fn resolve(path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::parse(&read_config(path)?)
        .with_context(|| format!("invalid config {}", path.display()))
        .map_err(config_err)?;
    if let Some(o) = out {
        cfg.output.dir = o.to_string_lossy().into_owned();
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("cannot write {}", path.display()))
}

fn write_table(dir: &Path, t: &Table) -> Result<()> {
    let path = dir.join(&t.name);
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(&t.header)?;
    for r in &t.rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Library errors caused by the inputs rather than the numerics.
fn is_input_error(e: &ddbar_lab::Error) -> bool {
    use ddbar_lab::Error::*;
    matches!(
        e,
        InvalidGeometry(_)
            | WrongArity { .. }
            | NonPositiveReference(_)
            | NonPositiveTheta(_)
            | NonPositiveDensity
            | UntrackedSubvariety(_)
            | UnsupportedGeometry { .. }
            | InvalidArgument(_)
            | NonMonotoneLadder
    )
}

fn cmd_run(path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<(), Failure> {
    let start = Instant::now();
    let cfg = resolve(path, out, seed)?;
    let dir = PathBuf::from(&cfg.output.dir);
    fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
        .map_err(config_err)?;
    let text = cfg.to_toml();
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "experiment": cfg.experiment.name(),
        "config_hash": sha256_hex(&text),
        "seed": cfg.seed,
        "config_source": path.to_string_lossy(),
        "outputs": planned_outputs(&cfg),
    });
    write_json(&dir.join("manifest.json"), &manifest).map_err(config_err)?;
    fs::write(dir.join("config.toml"), &text)
        .context("cannot write config.toml")
        .map_err(config_err)?;

    eprintln!("running {} on {}", cfg.experiment.name(), cfg.geometry.kind.name());
    let result = experiments::run(&cfg);
    let (status, failure) = match &result {
        Ok(Outcome {
            unconverged: Some(msg), ..
        }) => ("unconverged", Some(solver_err(anyhow!("{msg}")))),
        Ok(_) => ("ok", None),
        Err(e) if is_input_error(e) => ("config-error", Some(config_err(anyhow!("{e}")))),
        Err(e) => ("solver-failure", Some(solver_err(anyhow!("{e}")))),
    };
    let mut stages = Vec::new();
    if let Ok(o) = &result {
        write_json(&dir.join("report.json"), &o.report).map_err(solver_err)?;
        for t in &o.tables {
            write_table(&dir, t).map_err(solver_err)?;
        }
        stages = o
            .stages
            .iter()
            .map(|s| json!({"name": s.name, "seconds": s.seconds, "status": "ok"}))
            .collect();
    }
    let status_json = json!({
        "status": status,
        "error": failure.as_ref().map(|f| format!("{:#}", f.err)),
        "wall_time_seconds": start.elapsed().as_secs_f64(),
        "stages": stages,
    });
    write_json(&dir.join("status.json"), &status_json).map_err(solver_err)?;
    match failure {
        Some(f) => Err(f),
        None => {
            eprintln!("done in {:.2} s, results in {}", start.elapsed().as_secs_f64(), dir.display());
            Ok(())
        }
    }
}

/// Sets `value` at a dotted key path, creating tables as needed.
fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for p in &parts[..parts.len() - 1] {
        let t = cur.as_table_mut().ok_or_else(|| anyhow!("`{key}` crosses a non-table value"))?;
        cur = t
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let t = cur.as_table_mut().ok_or_else(|| anyhow!("`{key}` crosses a non-table value"))?;
    t.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn sweep_variants(text: &str) -> Result<(String, Vec<(toml::Value, ExperimentConfig)>)> {
    let mut root: toml::Value = toml::from_str(text).map_err(|e| anyhow!("{}", e.to_string().trim()))?;
    let sweep = root
        .as_table_mut()
        .and_then(|t| t.remove("sweep"))
        .ok_or_else(|| anyhow!("missing table `[sweep]`"))?;
    let parameter = sweep
        .get("parameter")
        .and_then(|v| v.as_str())
        .ok_or_else(|| anyhow!("missing key `sweep.parameter`"))?
        .to_string();
    let values = sweep
        .get("values")
        .and_then(|v| v.as_array())
        .ok_or_else(|| anyhow!("missing key `sweep.values`"))?
        .clone();
    if values.is_empty() {
        bail!("`sweep.values` is empty");
    }
    let mut out = Vec::new();
    for (i, v) in values.into_iter().enumerate() {
        let mut doc = root.clone();
        set_path(&mut doc, &parameter, v.clone())?;
        let cfg = ExperimentConfig::parse(&toml::to_string(&doc)?).with_context(|| format!("sweep value {i}"))?;
        out.push((v, cfg));
    }
    Ok((parameter, out))
}

fn cmd_sweep(path: &Path, out: Option<PathBuf>, seed: Option<u64>, jobs: usize) -> Result<(), Failure> {
    if jobs == 0 {
        return Err(config_err(anyhow!("--jobs must be positive")));
    }
    let text = read_config(path)?;
    let (parameter, variants) = sweep_variants(&text)
        .with_context(|| format!("invalid sweep config {}", path.display()))
        .map_err(config_err)?;
    let root = match out {
        Some(o) => o,
        None => PathBuf::from(&variants[0].1.output.dir),
    };
    let cfg_dir = root.join("configs");
    fs::create_dir_all(&cfg_dir)
        .with_context(|| format!("cannot create output directory {}", root.display()))
        .map_err(config_err)?;

    let mut runs = Vec::new();
    for (i, (v, mut cfg)) in variants.into_iter().enumerate() {
        let run_dir = root.join(format!("run-{i}"));
        cfg.output.dir = run_dir.to_string_lossy().into_owned();
        if let Some(s) = seed {
            cfg.seed = s;
        }
        let cfg_path = cfg_dir.join(format!("run-{i}.toml"));
        fs::write(&cfg_path, cfg.to_toml())
            .context("cannot write sweep config")
            .map_err(config_err)?;
        runs.push((i, v.to_string(), cfg_path, run_dir));
    }
    write_json(
        &root.join("manifest.json"),
        &json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "mode": "sweep",
            "config_hash": sha256_hex(&text),
            "parameter": parameter,
            "runs": runs.iter().map(|r| json!({"run": r.0, "value": r.1, "dir": r.3.to_string_lossy()})).collect::<Vec<_>>(),
            "outputs": ["configs", "sweep.csv"],
        }),
    )
    .map_err(config_err)?;

    let exe = std::env::current_exe()
        .context("cannot locate the executable")
        .map_err(solver_err)?;
    let queue = Arc::new(Mutex::new(runs.clone().into_iter()));
    let codes = Arc::new(Mutex::new(vec![None::<i32>; runs.len()]));
    let workers: Vec<_> = (0..jobs.min(runs.len()))
        .map(|_| {
            let queue = Arc::clone(&queue);
            let codes = Arc::clone(&codes);
            let exe = exe.clone();
            std::thread::spawn(move || loop {
                let next = queue.lock().unwrap().next();
                let Some((i, _, cfg_path, _)) = next else { break };
                let code = Command::new(&exe)
                    .arg("run")
                    .arg("--config")
                    .arg(&cfg_path)
                    .status()
                    .ok()
                    .and_then(|s| s.code())
                    .unwrap_or(-1);
                codes.lock().unwrap()[i] = Some(code);
            })
        })
        .collect();
    for w in workers {
        w.join().expect("sweep worker panicked");
    }
    let codes = codes.lock().unwrap().clone();
    let mut w = csv::Writer::from_path(root.join("sweep.csv"))
        .context("cannot write sweep.csv")
        .map_err(solver_err)?;
    let record = |w: &mut csv::Writer<fs::File>, r: [String; 4]| w.write_record(r).map_err(|e| solver_err(e.into()));
    record(&mut w, ["run".into(), parameter.clone(), "exit_code".into(), "dir".into()])?;
    for (i, v, _, dir) in &runs {
        let code = codes[*i].unwrap_or(-1);
        record(&mut w, [i.to_string(), v.clone(), code.to_string(), dir.to_string_lossy().into_owned()])?;
    }
    w.flush().map_err(|e| solver_err(e.into()))?;
    let failed = codes.iter().filter(|c| **c != Some(0)).count();
    if failed > 0 {
        return Err(solver_err(anyhow!("{failed} of {} sweep runs failed", runs.len())));
    }
    eprintln!("{} runs finished, summary in {}", runs.len(), root.join("sweep.csv").display());
    Ok(())
}
