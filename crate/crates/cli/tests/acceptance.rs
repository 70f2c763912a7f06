//! Acceptance runs of the `ddbar` binary on `configs/acceptance`.
//!
//! Prints one PASS/FAIL line per criterion and exits non-zero on any failure.

use serde_json::Value;
use std::collections::BTreeMap;
use std::f64::consts::{LN_2, PI};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

const CONFIGS: [&str; 8] = [
    "c1_solve_ma_torus1",
    "c2_flow_flat_torus2",
    "c3_flow_hopf",
    "c4_null_locus_blowup",
    "c5_envelope_torus1",
    "c7a_volume_torus2",
    "c7b_volume_hopf_gauduchon",
    "c7c_volume_hopf_conformal",
];

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs/acceptance")
        .join(format!("{name}.toml"))
}

fn run(name: &str, out: &Path) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_ddbar"))
        .args(["run", "--config"])
        .arg(config_path(name))
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("{name}: exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr).trim()))
    }
}

struct Csv {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Csv {
    fn read(path: &Path) -> Result<Csv, String> {
        let mut r = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let header = r.headers().map_err(|e| e.to_string())?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|x| x.map(|rec| rec.iter().map(String::from).collect()))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        Ok(Csv { header, rows })
    }

    fn col(&self, name: &str) -> Result<Vec<f64>, String> {
        let k = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| format!("no column `{name}`"))?;
        self.rows
            .iter()
            .map(|r| r[k].parse::<f64>().map_err(|e| format!("{name}: {e}")))
            .collect()
    }
}

fn report(dir: &Path) -> Result<Value, String> {
    let text = fs::read_to_string(dir.join("report.json")).map_err(|e| e.to_string())?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn f(v: &Value, path: &str) -> Result<f64, String> {
    path.split('.')
        .try_fold(v, |v, k| match k.parse::<usize>() {
            Ok(i) => v.get(i),
            Err(_) => v.get(k),
        })
        .and_then(Value::as_f64)
        .ok_or_else(|| format!("report has no number at `{path}`"))
}

fn sup(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Collects the failed checks of one criterion.
#[derive(Default)]
struct Check {
    notes: Vec<String>,
    failures: Vec<String>,
}

impl Check {
    fn that(&mut self, ok: bool, what: String) {
        if ok {
            self.notes.push(what);
        } else {
            self.failures.push(what);
        }
    }
}

/// Periodic Poisson solve u'' = r by a direct O(n^2) Fourier sum.
fn naive_poisson(r: &[f64]) -> Vec<f64> {
    let n = r.len();
    let mut u = vec![0.0; n];
    for k in 1..n / 2 {
        let (mut re, mut im) = (0.0, 0.0);
        for (j, &v) in r.iter().enumerate() {
            let a = 2.0 * PI * (k * j) as f64 / n as f64;
            re += v * a.cos();
            im -= v * a.sin();
        }
        let w = 2.0 * PI * k as f64;
        let (re, im) = (-re / (w * w), -im / (w * w));
        for (j, uj) in u.iter_mut().enumerate() {
            let a = 2.0 * PI * (k * j) as f64 / n as f64;
            *uj += 2.0 * (re * a.cos() - im * a.sin()) / n as f64;
        }
    }
    u
}

fn criterion1(out: &Path) -> Result<Check, String> {
    let dir = out.join("c1_solve_ma_torus1");
    let rep = report(&dir)?;
    let sol = Csv::read(&dir.join("solution.csv"))?;
    let (x, phi) = (sol.col("x")?, sol.col("phi")?);
    let dens: Vec<f64> = x
        .iter()
        .map(|&x| (0.3 * (2.0 * PI * x).cos() + 0.1 * (6.0 * PI * x).sin()).exp())
        .collect();
    let a = 1.3;
    let c_exact = a / (dens.iter().sum::<f64>() / dens.len() as f64);
    let c = f(&rep, "c")?;
    let rhs: Vec<f64> = dens.iter().map(|&v| 2.0 * (c_exact * v - a)).collect();
    let mut u = naive_poisson(&rhs);
    let top = u.iter().cloned().fold(f64::MIN, f64::max);
    u.iter_mut().for_each(|v| *v -= top);
    let err = sup(u.iter().zip(&phi).map(|(a, b)| a - b));
    let mut ch = Check::default();
    let rel = ((c - c_exact) / c_exact).abs();
    ch.that(rel <= 1e-10, format!("c rel err {rel:.1e}"));
    ch.that(err <= 1e-8, format!("phi sup err {err:.1e}"));
    Ok(ch)
}

fn criterion2(out: &Path) -> Result<Check, String> {
    let dir = out.join("c2_flow_flat_torus2");
    let rep = report(&dir)?;
    let tr = Csv::read(&dir.join("trajectory.csv"))?;
    let t = tr.col("t")?;
    let phi = sup(tr.col("sup_abs_phi")?);
    let mut ch = Check::default();
    let t_last = t.last().copied().unwrap_or(0.0);
    ch.that(t_last >= 1.0 - 1e-12, format!("reached t = {t_last}"));
    ch.that(phi <= 1e-10, format!("sup |phi| {phi:.1e}"));
    let sigma = f(&rep, "singularity.sigma_nodes")?;
    ch.that(sigma == 0.0, format!("sigma mask nodes {sigma}"));
    Ok(ch)
}

fn criterion3(out: &Path) -> Result<Check, String> {
    let dir = out.join("c3_flow_hopf");
    let rep = report(&dir)?;
    let tr = Csv::read(&dir.join("trajectory.csv"))?;
    let (t, vol, r) = (tr.col("t")?, tr.col("volume_X")?, tr.col("sup_abs_r")?);
    let v0 = 2.0 * 4.0 * PI * PI * 2.0 * LN_2;
    let vol_err = t
        .iter()
        .zip(&vol)
        .map(|(&t, &v)| ((v - (1.0 - 2.0 * t) * v0) / ((1.0 - 2.0 * t) * v0)).abs())
        .fold(0.0, f64::max);
    let (tp, te) = (f(&rep, "t_predicted")?, f(&rep, "t_estimate")?);
    let mut ch = Check::default();
    ch.that((tp - 0.5).abs() <= 1e-8, format!("T_pred {tp:.10}"));
    ch.that((0.48..=0.5).contains(&te), format!("T_est {te:.6}"));
    let r_max = r.iter().cloned().fold(0.0, f64::max);
    ch.that(r_max > 1e3, format!("sup R {r_max:.2e}"));
    ch.that(vol_err <= 1e-3, format!("volume rel err {vol_err:.1e}"));
    Ok(ch)
}

/// Least-squares slope of y against x.
fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn criterion4(out: &Path) -> Result<Check, String> {
    let dir = out.join("c4_null_locus_blowup");
    let rep = report(&dir)?;
    let tr = Csv::read(&dir.join("trajectory.csv"))?;
    let (t, ve, vx) = (tr.col("t")?, tr.col("volume_E")?, tr.col("volume_X")?);
    let tracked = rep["tracked"].as_array().ok_or("no tracked list")?;
    let e = tracked.iter().find(|v| v["name"] == "E").ok_or("E is not tracked")?;
    let pairing = f(e, "ricci_pairing")?;
    let s = slope(&t, &ve);
    let mut ch = Check::default();
    let dev = ((-s - pairing) / pairing).abs();
    ch.that(dev <= 0.05, format!("E slope {s:.4} vs pairing {pairing:.4} ({:.2}%)", 100.0 * dev));
    let decay = ve.last().unwrap() / ve[0];
    ch.that(decay <= 1e-3, format!("vol E ratio {decay:.1e}"));
    let keep = vx.iter().cloned().fold(f64::MAX, f64::min) / vx[0];
    ch.that(keep >= 0.5, format!("vol X ratio {keep:.3}"));

    let fin = Csv::read(&dir.join("final.csv"))?;
    let (rho, z) = (fin.col("rho")?, fin.col("z_mask")?);
    let h = rho[1] - rho[0];
    let near: Vec<bool> = rho.iter().map(|&r| r <= rho[0] + 2.0 * h + 1e-12).collect();
    let zm: Vec<bool> = z.iter().map(|&v| v == 1.0).collect();
    let inter = near.iter().zip(&zm).filter(|(a, b)| **a && **b).count();
    let union = near.iter().zip(&zm).filter(|(a, b)| **a || **b).count();
    let jac = inter as f64 / union.max(1) as f64;
    ch.that(jac >= 0.9, format!("Jaccard {jac:.3}"));
    let cauchy = f(&rep, "cauchy_variation")?;
    ch.that(cauchy <= 0.01, format!("Cauchy variation {:.2}%", 100.0 * cauchy));
    Ok(ch)
}

fn criterion5(out: &Path) -> Result<Check, String> {
    let dir = out.join("c5_envelope_torus1");
    let rep = report(&dir)?;
    let lad = Csv::read(&dir.join("ladder.csv"))?;
    let (beta, err) = (lad.col("beta")?, lad.col("error")?);
    let model: Vec<f64> = beta.iter().map(|b| b.ln() / b).collect();
    let log_c = err.iter().zip(&model).map(|(e, m)| (e / m).ln()).sum::<f64>() / err.len() as f64;
    let ratios: Vec<f64> = err.iter().zip(&model).map(|(e, m)| e / (log_c.exp() * m)).collect();
    let worst = ratios.iter().map(|r| r.max(1.0 / r)).fold(0.0, f64::max);
    let mut ch = Check::default();
    let last = *err.last().unwrap();
    ch.that(*beta.last().unwrap() == 1024.0 && last <= 5e-4, format!("error at 2^10 {last:.2e}"));
    ch.that(worst <= 3.0, format!("worst ratio to C log b / b {worst:.2}"));

    // Mass of theta + dd^c u on the oracle envelope, with the three-point Laplacian.
    let env = Csv::read(&dir.join("envelope.csv"))?;
    let (u, obst) = (env.col("oracle")?, env.col("obstacle")?);
    let n = u.len();
    let h = 1.0 / n as f64;
    let dens: Vec<f64> = (0..n)
        .map(|i| 1.0 + (u[(i + 1) % n] - 2.0 * u[i] + u[(i + n - 1) % n]) / (2.0 * h * h))
        .collect();
    let tol = f(&rep, "contact.tolerance")?;
    let total: f64 = dens.iter().sum();
    let off: f64 = (0..n).filter(|&i| u[i] < obst[i] - tol).map(|i| dens[i].abs()).sum();
    ch.that(off / total <= 1e-6, format!("off-contact mass {:.1e}", off / total));
    Ok(ch)
}

fn criterion6(out: &Path) -> Result<Check, String> {
    let ap = Csv::read(&out.join("c4_null_locus_blowup/apriori.csv"))?;
    let mut ch = Check::default();
    let runs: Vec<&str> = ap.rows.iter().map(|r| r[0].as_str()).collect();
    ch.that(
        runs.contains(&"halved_dt") && runs.contains(&"doubled_grid"),
        format!("runs {runs:?}"),
    );
    for name in ["c_phi", "c_phi_dot", "trace_c", "trace_a"] {
        let v = ap.col(name)?;
        let hi = v.iter().cloned().fold(f64::MIN, f64::max);
        let lo = v.iter().cloned().fold(f64::MAX, f64::min);
        ch.that(lo > 0.0 && hi / lo <= 2.0, format!("{name} spread {:.3}", hi / lo));
    }
    Ok(ch)
}

fn volume_spread(dir: &Path) -> Result<(f64, f64), String> {
    let v = Csv::read(&dir.join("samples.csv"))?.col("volume")?;
    let hi = v.iter().cloned().fold(f64::MIN, f64::max);
    let lo = v.iter().cloned().fold(f64::MAX, f64::min);
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    Ok(((hi - lo) / mean, mean))
}

fn criterion7(out: &Path) -> Result<Check, String> {
    let mut ch = Check::default();
    let torus = out.join("c7a_volume_torus2");
    let (spread, mean) = volume_spread(&torus)?;
    let det = 1.5 * 0.8 - (0.2f64.powi(2) + 0.1f64.powi(2));
    ch.that(spread <= 1e-8, format!("torus spread {spread:.1e}"));
    ch.that(((mean - det) / det).abs() <= 1e-8, format!("torus volume {mean:.10} vs det {det}"));

    let hopf = out.join("c7b_volume_hopf_gauduchon");
    let (spread, mean) = volume_spread(&hopf)?;
    let v0 = 2.0 * 4.0 * PI * PI * 2.0 * LN_2;
    ch.that(spread <= 1e-8, format!("hopf spread {spread:.1e}"));
    ch.that(((mean - v0) / v0).abs() <= 1e-8, format!("hopf volume {mean:.8} vs {v0:.8}"));

    let conf = report(&out.join("c7c_volume_hopf_conformal"))?;
    let (vp, vm) = (f(&conf, "v_plus_lower")?, f(&conf, "v_minus_upper")?);
    let gap = (vp - vm) / (0.5 * (vp + vm));
    ch.that(gap >= 0.05, format!("conformal gap {:.1}%", 100.0 * gap));

    let mut classes = Vec::new();
    for (dir, want) in [(torus, true), (hopf, true), (out.join("c7c_volume_hopf_conformal"), false)] {
        let r = report(&dir)?;
        classes.push(r["guan_li"]["theta"]["pass"].as_bool() == Some(want));
    }
    ch.that(classes.iter().all(|&b| b), format!("Guan-Li classes {classes:?}"));
    Ok(ch)
}

fn csv_bytes(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut m = BTreeMap::new();
    for e in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let p = e.map_err(|e| e.to_string())?.path();
        if p.extension().is_some_and(|x| x == "csv") {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            m.insert(name, fs::read(&p).map_err(|e| e.to_string())?);
        }
    }
    Ok(m)
}

fn criterion8(out: &Path) -> Result<Check, String> {
    let mut ch = Check::default();
    for name in CONFIGS {
        let again = out.join("repeat").join(name);
        run(name, &again)?;
        let (a, b) = (csv_bytes(&out.join(name))?, csv_bytes(&again)?);
        ch.that(!a.is_empty() && a == b, format!("{name}: {} csv files", a.len()));
    }
    Ok(ch)
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let out = tmp.path();
    let start = Instant::now();
    let mut run_errors = Vec::new();
    for name in CONFIGS {
        let t = Instant::now();
        match run(name, &out.join(name)) {
            Ok(()) => eprintln!("ran {name} in {:.1} s", t.elapsed().as_secs_f64()),
            Err(e) => run_errors.push(e),
        }
    }
    for e in &run_errors {
        eprintln!("{e}");
    }

    type Criterion = fn(&Path) -> Result<Check, String>;
    let criteria: [(&str, Criterion); 8] = [
        ("dimension-one Monge-Ampere exactness", criterion1),
        ("flat torus flow fixed point", criterion2),
        ("Hopf maximal time", criterion3),
        ("blow-up null locus", criterion4),
        ("envelope convergence", criterion5),
        ("a-priori bound stability", criterion6),
        ("volume invariance and its failure", criterion7),
        ("determinism", criterion8),
    ];
    let mut failed = 0;
    for (k, (title, check)) in criteria.iter().enumerate() {
        let (pass, detail) = match check(out) {
            Ok(ch) if ch.failures.is_empty() => (true, ch.notes.join("; ")),
            Ok(ch) => (false, ch.failures.join("; ")),
            Err(e) => (false, e),
        };
        failed += usize::from(!pass);
        println!("criterion {} {}: {title}: {detail}", k + 1, if pass { "PASS" } else { "FAIL" });
    }
    println!(
        "acceptance: {} of 8 criteria passed in {:.0} s",
        8 - failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
