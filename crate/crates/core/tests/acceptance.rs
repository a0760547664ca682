//! Acceptance suite: one line per criterion, driven through the `fracheat` binary.
//!
//! Run with `cargo test -p fracheat --test acceptance`. Lines go straight to
//! stdout so they show without `--nocapture`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_fracheat");

struct Run {
    code: i32,
    report: Option<Value>,
    wall: f64,
    dir: PathBuf,
}

impl Run {
    fn passed(&self) -> bool {
        self.code == 0 && self.report.as_ref().is_some_and(|r| r["passed"] == Value::Bool(true))
    }

    fn check(&self, name: &str) -> Option<f64> {
        let checks = self.report.as_ref()?["checks"].as_array()?;
        checks.iter().find(|c| c["name"] == name)?["value"].as_f64()
    }

    fn failures(&self) -> Vec<String> {
        match &self.report {
            Some(r) => r["checks"]
                .as_array()
                .map(|cs| cs.iter().filter(|c| c["passed"] == false).map(|c| c["name"].as_str().unwrap_or("?").to_string()).collect())
                .unwrap_or_default(),
            None => {
                let err = std::fs::read_to_string(self.dir.join("error.json")).unwrap_or_default();
                let v: Value = serde_json::from_str(&err).unwrap_or(Value::Null);
                vec![format!("error: {}", v["message"].as_str().unwrap_or("no report"))]
            }
        }
    }
}

fn run_in(dir: &Path, args: &[&str], threads: &str) -> Run {
    std::fs::create_dir_all(dir).unwrap();
    let out = Command::new(BIN)
        .args(args)
        .arg("--out")
        .arg(dir)
        .env("FRACHEAT_THREADS", threads)
        .output()
        .expect("spawn fracheat");
    let read = |name: &str| -> Option<Value> { serde_json::from_str(&std::fs::read_to_string(dir.join(name)).ok()?).ok() };
    let wall = read("manifest.json").and_then(|m| m["wall_time_seconds"].as_f64()).unwrap_or(f64::NAN);
    Run { code: out.status.code().unwrap_or(-1), report: read("report.json"), wall, dir: dir.to_path_buf() }
}

struct Suite {
    root: tempfile::TempDir,
    counter: usize,
    lines: Vec<(u8, bool, String)>,
}

impl Suite {
    fn run(&mut self, args: &[&str]) -> Run {
        self.counter += 1;
        let dir = self.root.path().join(format!("run{:03}", self.counter));
        run_in(&dir, args, "1")
    }

    fn record(&mut self, criterion: u8, ok: bool, detail: String) {
        let line = format!("criterion {criterion:>2}: {} | {detail}", if ok { "PASS" } else { "FAIL" });
        let mut out = std::io::stdout().lock();
        if self.lines.is_empty() {
            writeln!(out).unwrap();
        }
        writeln!(out, "{line}").unwrap();
        out.flush().unwrap();
        self.lines.push((criterion, ok, detail));
    }

    fn write_potential(&self, name: &str, f: impl Fn(f64) -> f64) -> PathBuf {
        let p = self.root.path().join(name);
        let mut s = String::from("x,q\n");
        for k in 0..=400 {
            let x = -1.0 + 2.0 * k as f64 / 400.0;
            s.push_str(&format!("{x:.17e},{:.17e}\n", f(x)));
        }
        std::fs::write(&p, s).unwrap();
        p
    }
}

fn fmt_fail(items: &[String]) -> String {
    if items.is_empty() {
        "all runs passed".into()
    } else {
        format!("failed: {}", items.join("; "))
    }
}

fn criterion_1(s: &mut Suite) {
    let r = s.run(&["traces", "--a", "0.75", "--refine", "256,512,1024"]);
    let errs = r.report.as_ref().map(|v| v["details"]["max_rel_errors"].clone()).unwrap_or(Value::Null);
    s.record(1, r.passed(), format!("max rel errors {errs} (bound 0.02 at n = 1024)"));
}

fn criterion_2(s: &mut Suite) {
    let r = s.run(&["operator", "--a", "0.75", "--refine", "63,127,255,511,1023"]);
    let order = r.check("empirical_order").unwrap_or(f64::NAN);
    s.record(2, r.passed(), format!("empirical order {order:.3}, errors decreasing: {}", r.check("errors_decreasing") == Some(1.0)));
}

fn criterion_3(s: &mut Suite) {
    let mut fails = Vec::new();
    let mut slopes = Vec::new();
    for a in ["0.6", "0.75", "0.9"] {
        let r = s.run(&["spectrum", "--a", a, "--n", "1024"]);
        let slope = r.report.as_ref().and_then(|v| v["details"]["weyl_slope"].as_f64()).unwrap_or(f64::NAN);
        slopes.push(format!("a={a}: slope {slope:.4}"));
        if !r.passed() {
            fails.push(format!("a={a} {:?}", r.failures()));
        }
    }
    let ok = fails.is_empty();
    s.record(3, ok, format!("{}; {}", slopes.join(", "), fmt_fail(&fails)));
}

fn criterion_4(s: &mut Suite) {
    let r = s.run(&["pohozaev", "--a", "0.75", "--refine", "512,1024,2048", "--alpha", "-0.5,0.5,2"]);
    let res = r.check("pohozaev_residual_finest").unwrap_or(f64::NAN);
    s.record(4, r.passed(), format!("residual at 2048 {res:.3e}; {}", fmt_fail(&r.failures())));
}

const TARGETS: [&str; 4] = ["phi1", "phi5", "bump", "step"];
const EPSILONS: [&str; 2] = ["0.1", "0.01"];

fn criterion_5(s: &mut Suite) {
    let mut fails = Vec::new();
    let mut slowest = 0.0f64;
    for t in TARGETS {
        for e in EPSILONS {
            let r = s.run(&["control-initial", "--a", "0.75", "--n", "512", "--T", "1", "--target", t, "--eps", e]);
            slowest = slowest.max(r.wall);
            if !r.passed() || !(r.wall < 10.0) {
                fails.push(format!("{t}/eps={e} {:?}", r.failures()));
            }
        }
    }
    let ok = fails.is_empty();
    s.record(5, ok, format!("slowest run {slowest:.2} s; {}", fmt_fail(&fails)));
}

fn criterion_6(s: &mut Suite) {
    let bump = s.write_potential("q_bump.csv", |x| 0.05 * (-20.0 * x * x).exp());
    let bump = bump.to_str().unwrap().to_string();
    let mut fails = Vec::new();
    for (label, pot) in [("q=0", None), ("q=bump", Some(bump.as_str()))] {
        for t in TARGETS {
            for e in EPSILONS {
                let mut args = vec!["control-boundary", "--a", "0.75", "--n", "512", "--T", "1", "--target", t, "--eps", e, "--theta-check"];
                if let Some(p) = pot {
                    args.extend(["--potential", p]);
                }
                let r = s.run(&args);
                if !r.passed() {
                    fails.push(format!("{label}/{t}/eps={e} {:?}", r.failures()));
                }
            }
        }
    }
    let ok = fails.is_empty();
    s.record(6, ok, fmt_fail(&fails));
}

fn criterion_7(s: &mut Suite) {
    let r = s.run(&["observability", "--a", "0.75", "--n", "512", "--T", "1", "--modes", "4,8,16,32,64", "--check-modes", "16", "--samples", "100"]);
    let curve = std::fs::read_to_string(r.dir.join("observability.csv")).map(|c| c.lines().count().saturating_sub(1)).unwrap_or(0);
    let ok = r.passed() && curve == 5;
    s.record(7, ok, format!("violations {}, curve rows {curve}", r.check("violations").unwrap_or(f64::NAN)));
}

fn criterion_8(s: &mut Suite) {
    let r = s.run(&["wave", "--a", "0.75", "--j", "4", "--refine", "256,512,1024"]);
    let fit = std::fs::read_to_string(r.dir.join("t0_fit.json")).ok().and_then(|t| serde_json::from_str::<Value>(&t).ok());
    let fit_ok = fit.as_ref().is_some_and(|f| f["exponent"].is_number() && f["stderr"].is_number());
    let residuals = r.report.as_ref().map(|v| v["details"]["multiplier"]["residuals"].clone()).unwrap_or(Value::Null);
    let ok = r.passed() && fit_ok;
    s.record(
        8,
        ok,
        format!(
            "energy drift {:.2e}, equipartition {:.2e}, multiplier residuals {residuals}, T0 fit reported: {fit_ok}",
            r.check("energy_drift").unwrap_or(f64::NAN),
            r.check("equipartition_residual").unwrap_or(f64::NAN)
        ),
    );
}

fn criterion_9(s: &mut Suite) {
    let mut fails = Vec::new();
    let mut mins = Vec::new();
    for a in ["0.3", "0.75"] {
        let r = s.run(&["hopf", "--a", a, "--n", "1024", "--n-max", "20", "--tol", "1e-3"]);
        mins.push(format!("a={a}: min |trace| {:.3e}", r.check("min_abs_trace").unwrap_or(f64::NAN)));
        if !r.passed() {
            fails.push(format!("a={a}"));
        }
    }
    let ok = fails.is_empty();
    s.record(9, ok, format!("{}; {}", mins.join(", "), fmt_fail(&fails)));
}

fn criterion_10(s: &mut Suite) {
    let mut fails = Vec::new();
    let mut errs = Vec::new();
    for noise in ["0", "0.01"] {
        let r = s.run(&["inverse", "--a", "0.75", "--n", "48", "--data-n", "96", "--kind", "trace", "--probes", "16", "--noise", noise]);
        errs.push(format!("noise {noise}: rel error {:.3e}", r.check("rel_error").unwrap_or(f64::NAN)));
        if !r.passed() || !(r.wall <= 120.0) {
            fails.push(format!("noise {noise} {:?}", r.failures()));
        }
    }
    let ok = fails.is_empty();
    s.record(10, ok, format!("{}; {}", errs.join(", "), fmt_fail(&fails)));
}

fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().is_some_and(|n| n != "manifest.json"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn criterion_11(s: &mut Suite) {
    let cases: [&[&str]; 10] = [
        &["operator", "--a", "0.75"],
        &["spectrum", "--a", "0.75", "--n", "256"],
        &["traces", "--a", "0.75", "--refine", "128,256"],
        &["pohozaev", "--a", "0.75", "--refine", "256,512"],
        &["control-initial", "--a", "0.75", "--n", "256", "--target", "bump"],
        &["control-boundary", "--a", "0.75", "--n", "256", "--target", "phi1"],
        &["observability", "--a", "0.75", "--n", "256"],
        &["wave", "--a", "0.75", "--n", "256", "--refine", "128,256"],
        &["inverse", "--a", "0.75", "--n", "24", "--max-iters", "5", "--noise", "0.01", "--seed", "7"],
        &["hopf", "--a", "0.75", "--n", "256", "--n-max", "8"],
    ];
    let mut fails = Vec::new();
    for args in cases {
        let base = s.root.path().join(format!("det-{}", args[0]));
        let r1 = run_in(&base.join("t1"), args, "1");
        let r4 = run_in(&base.join("t4"), args, "4");
        let (o1, o4) = (outputs(&r1.dir), outputs(&r4.dir));
        if r1.code != r4.code || o1 != o4 || o1.is_empty() {
            fails.push(args[0].to_string());
        }
    }
    let ok = fails.is_empty();
    s.record(11, ok, format!("10 subcommands at 1 vs 4 threads; {}", fmt_fail(&fails)));
}

#[test]
fn acceptance() {
    let mut s = Suite { root: tempfile::tempdir().unwrap(), counter: 0, lines: Vec::new() };
    criterion_1(&mut s);
    criterion_2(&mut s);
    criterion_3(&mut s);
    criterion_4(&mut s);
    criterion_5(&mut s);
    criterion_6(&mut s);
    criterion_7(&mut s);
    criterion_8(&mut s);
    criterion_9(&mut s);
    criterion_10(&mut s);
    criterion_11(&mut s);
    let failed: Vec<u8> = s.lines.iter().filter(|l| !l.1).map(|l| l.0).collect();
    assert!(failed.is_empty(), "criteria failing: {failed:?}");
}
