use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn egmu(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_egmu"));
    cmd.args(args).env_remove("EGMU_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

struct Case {
    dir: TempDir,
}

impl Case {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn file(&self, name: &str, body: &str) -> String {
        let p = self.path(name);
        fs::write(&p, body).unwrap();
        p.to_str().unwrap().to_string()
    }

    fn out(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_string()
    }

    /// `b = (0.5, 0.5)`, one factor with exposures `(0, 1)`.
    fn two_asset(&self, target: f64, extra: &str) -> String {
        self.file("b.csv", "asset_id,weight\nA,0.5\nB,0.5\n");
        self.file("x.csv", "asset_id,value\nA,0\nB,1\n");
        self.file(
            "two.toml",
            &format!("benchmark = \"b.csv\"\nexposures = \"x.csv\"\ntargets = {{ value = {target:e} }}\n{extra}"),
        )
    }

    /// A smooth deterministic instance with `n` assets and three factors whose
    /// targets are the exposures of an interior tilt of the benchmark.
    fn smooth(&self, n: usize, tilt: f64, extra: &str) -> String {
        let mut b = Vec::with_capacity(n);
        let mut x = Vec::with_capacity(n);
        for i in 0..n {
            let f = i as f64;
            b.push(1.0 + 0.5 * (0.37 * f).sin());
            x.push([(0.11 * f).sin(), (0.07 * f + 1.0).cos(), ((i % 7) as f64) / 7.0]);
        }
        let sb: f64 = b.iter().sum();
        let mut bench = String::from("asset_id,weight\n");
        let mut expo = String::from("asset_id,alpha,beta,gamma\n");
        for i in 0..n {
            bench += &format!("s{i},{:.16e}\n", b[i] / sb);
            expo += &format!("s{i},{:.16e},{:.16e},{:.16e}\n", x[i][0], x[i][1], x[i][2]);
        }
        // targets from w̃ ∝ b·exp(tilt·(x₀ − x₂))
        let wt: Vec<f64> = (0..n).map(|i| b[i] * (tilt * (x[i][0] - x[i][2])).exp()).collect();
        let sw: f64 = wt.iter().sum();
        let mut t = [0.0; 3];
        for i in 0..n {
            for k in 0..3 {
                t[k] += wt[i] / sw * x[i][k];
            }
        }
        self.file("sb.csv", &bench);
        self.file("sx.csv", &expo);
        self.file(
            "st.csv",
            &format!("factor,value\nalpha,{:.16e}\nbeta,{:.16e}\ngamma,{:.16e}\n", t[0], t[1], t[2]),
        );
        self.file(
            "smooth.toml",
            &format!("benchmark = \"sb.csv\"\nexposures = \"sx.csv\"\ntargets = \"st.csv\"\n{extra}"),
        )
    }
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn csv_column(path: &Path, name: &str) -> Vec<f64> {
    let (h, rows) = csv_rows(path);
    let c = h.iter().position(|x| x == name).unwrap();
    rows.iter().map(|r| r[c].parse().unwrap()).collect()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn nums(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

fn solve_theta(c: &Case, problem: &str, out: &str, extra: &[&str]) -> Vec<f64> {
    let dir = c.out(out);
    let mut args = vec!["solve", problem, "--out", &dir];
    args.extend_from_slice(extra);
    let o = egmu(&args, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    nums(&json(&c.path(out).join("report.json"))["theta"])
}

#[test]
fn two_asset_newton_end_to_end() {
    let c = Case::new();
    let p = c.two_asset(0.75, "");
    let o = egmu(&["solve", &p, "--solver", "newton", "--out", &c.out("o")], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let w = csv_column(&c.path("o/weights.csv"), "weight");
    assert!((w[0] - 0.25).abs() < 1e-8 && (w[1] - 0.75).abs() < 1e-8, "{w:?}");
    let r = json(&c.path("o/report.json"));
    assert_eq!(r["status"], "Converged");
    assert_eq!(r["solver"], "newton");
    assert!((r["theta"][0].as_f64().unwrap() - 3f64.ln()).abs() < 1e-8);
    assert!(!r["trace"].as_array().unwrap().is_empty());
    assert_eq!(r["tolerances"]["tol"].as_f64().unwrap(), 1e-8);
}

#[test]
fn ipf_agrees_with_newton() {
    let c = Case::new();
    let p = c.smooth(60, 0.8, "");
    for (solver, out) in [("newton", "n"), ("ipf", "i")] {
        let o = egmu(&["solve", &p, "--solver", solver, "--out", &c.out(out)], &[]);
        assert_eq!(code(&o), 0, "{solver}: {}", stderr(&o));
    }
    let wn = csv_column(&c.path("n/weights.csv"), "weight");
    let wi = csv_column(&c.path("i/weights.csv"), "weight");
    let d = wn.iter().zip(&wi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(d <= 1e-6, "{d}");
}

#[test]
fn malformed_factor_name_is_reported() {
    let c = Case::new();
    c.file("b.csv", "asset_id,weight\nA,0.5\nB,0.5\n");
    c.file("x.csv", "asset_id,value\nA,0\nB,1\n");
    let p = c.file("p.toml", "benchmark = \"b.csv\"\nexposures = \"x.csv\"\ntargets = { valeu = 0.75 }\n");
    let o = egmu(&["solve", &p, "--out", &c.out("o")], &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("valeu"), "{}", stderr(&o));
}

#[test]
fn missing_problem_is_io_error() {
    let c = Case::new();
    let o = egmu(&["solve", &c.out("nope.toml"), "--out", &c.out("o")], &[]);
    assert_eq!(code(&o), 3);
}

#[test]
fn usage_errors_are_validation_failures() {
    assert_eq!(code(&egmu(&["solve"], &[])), 1);
    assert_eq!(code(&egmu(&["frobnicate"], &[])), 1);
    assert_eq!(code(&egmu(&["--help"], &[])), 0);
}

#[test]
fn target_outside_range_names_factor() {
    let c = Case::new();
    let p = c.two_asset(1.5, "");
    let o = egmu(&["solve", &p, "--out", &c.out("o")], &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("'value'"), "{}", stderr(&o));
}

#[test]
fn non_convergence_still_writes_report() {
    let c = Case::new();
    let p = c.smooth(80, 2.0, "");
    let o = egmu(&["solve", &p, "--max-iter", "1", "--out", &c.out("o")], &[]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let r = json(&c.path("o/report.json"));
    assert_eq!(r["status"], "MaxIter");
    assert_eq!(r["converged"], false);
    assert!(c.path("o/weights.csv").exists());
}

#[test]
fn two_asset_sensitivity_matches_finite_differences() {
    let c = Case::new();
    let p = c.two_asset(0.75, "");
    let o = egmu(&["sensitivity", &p, "--out", &c.out("s")], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = csv_column(&c.path("s/dtheta_dt.csv"), "value")[0];
    let h = 1e-5;
    let up = solve_theta(&c, &c.two_asset(0.75 + h, ""), "up", &["--tol", "1e-13"])[0];
    let dn = solve_theta(&c, &c.two_asset(0.75 - h, ""), "dn", &["--tol", "1e-13"])[0];
    let fd = (up - dn) / (2.0 * h);
    assert!((table - fd).abs() <= 1e-6 * fd.abs(), "table {table} fd {fd}");
    assert!((table - 16.0 / 3.0).abs() < 1e-6, "{table}");
}

#[test]
fn elastic_sensitivity_matches_finite_differences() {
    let c = Case::new();
    let lambda = "5";
    let p = c.smooth(50, 0.6, "");
    let o = egmu(&["sensitivity", &p, "--soft", lambda, "--out", &c.out("s")], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (header, rows) = csv_rows(&c.path("s/dtheta_dt.csv"));
    assert_eq!(header, ["factor", "alpha", "beta", "gamma"]);
    let t = csv_column(&c.path("st.csv"), "value");
    let h = 1e-5;
    let names = ["alpha", "beta", "gamma"];
    for k in 0..names.len() {
        let bumped = |s: f64| {
            let mut tt = t.clone();
            tt[k] += s * h;
            let body: String = names.iter().zip(&tt).map(|(n, v)| format!("{n} = {v:.16e}\n")).collect();
            let problem = c.file(
                &format!("bump{k}{s}.toml"),
                &format!("benchmark = \"sb.csv\"\nexposures = \"sx.csv\"\n[targets]\n{body}"),
            );
            solve_theta(&c, &problem, &format!("b{k}{s}"), &["--soft", lambda, "--tol", "1e-13"])
        };
        let (up, dn) = (bumped(1.0), bumped(-1.0));
        for (i, row) in rows.iter().enumerate() {
            let table: f64 = row[k + 1].parse().unwrap();
            let fd = (up[i] - dn[i]) / (2.0 * h);
            assert!((table - fd).abs() <= 1e-5 * fd.abs().max(1e-3), "[{i},{k}] table {table} fd {fd}");
        }
    }
}

#[test]
fn weight_sensitivities_conserve_mass() {
    let c = Case::new();
    let p = c.smooth(120, 0.5, "");
    let o = egmu(&["sensitivity", &p, "--top", "3", "--out", &c.out("s")], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["alpha", "beta", "gamma"] {
        let col = csv_column(&c.path("s/dw_dt.csv"), f);
        let sum: f64 = col.iter().sum();
        assert!(sum.abs() <= 1e-10, "{f}: {sum}");
        let largest = col.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let (_, movers) = csv_rows(&c.path("s/top_movers.csv"));
        let first = movers.iter().find(|r| r[0] == f && r[1] == "1").unwrap();
        assert_eq!(first[3].parse::<f64>().unwrap().abs(), largest);
    }
    let (_, movers) = csv_rows(&c.path("s/top_movers.csv"));
    assert_eq!(movers.len(), 9);
}

#[test]
fn singular_covariance_writes_null_space() {
    let c = Case::new();
    c.file("b.csv", "asset_id,weight\nA,0.25\nB,0.25\nC,0.5\n");
    c.file("x.csv", "asset_id,u,v\nA,0,0\nB,1,2\nC,2,4\n");
    let p = c.file(
        "p.toml",
        "benchmark = \"b.csv\"\nexposures = \"x.csv\"\ntargets = { u = 1.0, v = 2.0 }\n",
    );
    let o = egmu(&["sensitivity", &p, "--out", &c.out("s")], &[]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let v1 = csv_column(&c.path("s/null_space.csv"), "v1");
    // the null direction of a covariance with v = 2u is ±(2, −1)/√5
    assert!((v1[0] / v1[1] + 2.0).abs() < 1e-8, "{v1:?}");
    assert_eq!(json(&c.path("s/report.json"))["status"], "SingularCovariance");
}

#[test]
fn zero_direction_gives_identical_rows() {
    let c = Case::new();
    let p = c.smooth(40, 0.5, "");
    let o = egmu(&["path", &p, "--delta", "alpha=0", "--h", "0.25", "--out", &c.out("p")], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (_, rows) = csv_rows(&c.path("p/path.csv"));
    assert_eq!(rows.len(), 5);
    for r in &rows[1..] {
        assert_eq!(r[1..], rows[0][1..]);
    }
}

#[test]
fn path_endpoint_matches_solve() {
    let c = Case::new();
    let start = c.two_asset(0.5, "");
    let o = egmu(&["path", &start, "--delta", "value=0.25", "--out", &c.out("p")], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let theta = csv_column(&c.path("p/path.csv"), "theta_value");
    let lambda = csv_column(&c.path("p/path.csv"), "lambda");
    assert_eq!(*lambda.last().unwrap(), 1.0);
    let direct = solve_theta(&c, &c.two_asset(0.75, ""), "s", &[])[0];
    assert!((theta.last().unwrap() - direct).abs() <= 1e-6);
}

#[test]
fn path_from_file_direction_uncorrected_euler() {
    let c = Case::new();
    let start = c.two_asset(0.5, "");
    let d = c.file("d.csv", "factor,value\nvalue,0.25\n");
    let o = egmu(
        &["path", &start, "--delta", &d, "--integrator", "euler", "--no-correct", "--h", "0.01", "--out", &c.out("p")],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let theta = csv_column(&c.path("p/path.csv"), "theta_value");
    let err = (theta.last().unwrap() - 3f64.ln()).abs();
    // first order: visible error at h = 0.01, but small
    assert!(err > 1e-6 && err < 1e-1, "{err}");
    let r = json(&c.path("p/report.json"));
    assert_eq!(r["integrator"], "euler");
    assert_eq!(r["corrected"], false);
}

#[test]
fn kl_grows_when_leaving_the_benchmark() {
    let c = Case::new();
    // targets equal the benchmark exposures
    c.file("b.csv", "asset_id,weight\nA,0.2\nB,0.3\nC,0.1\nD,0.4\n");
    c.file("x.csv", "asset_id,f,g\nA,0,1\nB,1,0\nC,2,2\nD,-1,0.5\n");
    let p = c.file(
        "p.toml",
        "benchmark = \"b.csv\"\nexposures = \"x.csv\"\ntargets = { f = 0.1, g = 0.6 }\n",
    );
    let o = egmu(&["path", &p, "--delta", "f=0.6,g=-0.2", "--out", &c.out("p")], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let kl = csv_column(&c.path("p/path.csv"), "kl");
    assert!(kl[0].abs() < 1e-14);
    for w in kl.windows(2) {
        assert!(w[1] >= w[0], "{w:?}");
    }
    assert!(*kl.last().unwrap() > 1e-3);
}

#[test]
fn path_rejects_unknown_direction_factor() {
    let c = Case::new();
    let p = c.two_asset(0.5, "");
    let o = egmu(&["path", &p, "--delta", "size=0.1", "--out", &c.out("p")], &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("'size'"));
}

#[test]
fn solver_output_passes_check() {
    let c = Case::new();
    let p = c.smooth(70, 0.7, "");
    assert_eq!(code(&egmu(&["solve", &p, "--out", &c.out("o")], &[])), 0);
    let o = egmu(&["check", &p, &c.out("o/weights.csv")], &[]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).starts_with("status: pass"));
}

#[test]
fn edited_weight_fails_check() {
    let c = Case::new();
    let p = c.smooth(70, 0.7, "");
    assert_eq!(code(&egmu(&["solve", &p, "--out", &c.out("o")], &[])), 0);
    let (header, mut rows) = csv_rows(&c.path("o/weights.csv"));
    let wc = header.iter().position(|h| h == "weight").unwrap();
    // move mass between two assets so the budget still holds
    let shift = 1e-4;
    for (i, s) in [(3, shift), (10, -shift)] {
        let v: f64 = rows[i][wc].parse().unwrap();
        rows[i][wc] = format!("{:.16e}", v + s);
    }
    let mut body = header.join(",") + "\n";
    for r in rows {
        body += &(r.join(",") + "\n");
    }
    let edited = c.file("edited.csv", &body);
    let o = egmu(&["check", &p, &edited], &[]);
    assert_eq!(code(&o), 2, "{}", stdout(&o));
    let out = stdout(&o);
    let spread: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("stationarity_spread: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(spread > 1e-6, "{out}");
}

#[test]
fn benchmark_fails_check_with_nonzero_targets() {
    let c = Case::new();
    let p = c.two_asset(0.75, "");
    let o = egmu(&["check", &p, &c.out("b.csv")], &[]);
    assert_eq!(code(&o), 2);
    let out = stdout(&o);
    let resid: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("max_exposure_residual: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((resid - 0.25).abs() < 1e-15, "{out}");
}

#[test]
fn check_rejects_mismatched_ids() {
    let c = Case::new();
    let p = c.two_asset(0.75, "");
    let w = c.file("w.csv", "asset_id,weight\nA,0.25\nZ,0.75\n");
    let o = egmu(&["check", &p, &w], &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("'Z'"));
}

#[test]
fn caps_select_dykstra_and_hold() {
    let c = Case::new();
    let p = c.smooth(100, 0.4, "[[inequality]]\nname = \"cap\"\ncap = 0.0125\n");
    let o = egmu(&["solve", &p, "--out", &c.out("o")], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&c.path("o/report.json"));
    assert_eq!(r["solver"], "dykstra");
    assert_eq!(r["requested_solver"], "auto");
    let w = csv_column(&c.path("o/weights.csv"), "weight");
    let excess = w.iter().map(|v| v - 0.0125).fold(f64::MIN, f64::max);
    // caps hold to the stopping tolerance of the projection cycles
    assert!(excess <= 1e-8, "{excess:e}");
    for g in nums(&r["exposure_residuals"]) {
        assert!(g.abs() <= 1e-8);
    }
    let (_, rows) = csv_rows(&c.path("o/weights.csv"));
    let capped = rows.iter().filter(|r| r[3] == "cap").count();
    assert!(capped > 0);
    assert_eq!(capped, r["constraints"].as_array().unwrap().iter().filter(|c| c["active"] == true).count());
    let o = egmu(&["check", &p, &c.out("o/weights.csv")], &[]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
}

#[test]
fn auto_never_picks_an_incompatible_solver() {
    let c = Case::new();
    let robust = c.two_asset(0.75, "[mode]\nkind = \"robust_l2\"\nrho = 0.1\n");
    let o = egmu(&["solve", &robust, "--out", &c.out("r")], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&c.path("r/report.json"));
    assert_eq!(r["solver"], "proxgrad");
    let gap = nums(&r["exposure_residuals"])[0];
    assert!((gap.abs() - 0.1).abs() < 1e-6, "{gap}");

    let both = c.two_asset(0.75, "[mode]\nkind = \"robust_l2\"\nrho = 0.1\n[[inequality]]\nname = \"cap\"\ncap = 0.9\n");
    assert_eq!(code(&egmu(&["solve", &both, "--out", &c.out("x")], &[])), 1);

    let soft = c.two_asset(0.75, "");
    let o = egmu(&["solve", &soft, "--soft", "10", "--out", &c.out("e")], &[]);
    assert_eq!(code(&o), 0);
    assert_eq!(json(&c.path("e/report.json"))["solver"], "elastic");

    let o = egmu(&["solve", &soft, "--solver", "ipf", "--soft", "10", "--out", &c.out("y")], &[]);
    assert_eq!(code(&o), 1);
}

#[test]
fn config_solver_section_and_flag_precedence() {
    let c = Case::new();
    let p = c.two_asset(0.75, "[solver]\nname = \"ipf\"\ntol = 1e-6\nmax_iter = 50\n");
    assert_eq!(code(&egmu(&["solve", &p, "--out", &c.out("a")], &[])), 0);
    let r = json(&c.path("a/report.json"));
    assert_eq!(r["solver"], "ipf");
    assert_eq!(r["tolerances"]["tol"].as_f64().unwrap(), 1e-6);
    assert_eq!(r["tolerances"]["max_iter"], 50);
    let args = ["solve", &p, "--solver", "newton", "--tol", "1e-10", "--out", &c.out("b")];
    assert_eq!(code(&egmu(&args, &[])), 0);
    let r = json(&c.path("b/report.json"));
    assert_eq!(r["solver"], "newton");
    assert_eq!(r["tolerances"]["tol"].as_f64().unwrap(), 1e-10);
    assert_eq!(r["tolerances"]["max_iter"], 50);
}

#[test]
fn multi_period_records_blended_prior() {
    let c = Case::new();
    c.file("prev.csv", "asset_id,weight\nA,0.1\nB,0.9\n");
    let zero = c.two_asset(0.75, "[multi_period]\nprev_weights = \"prev.csv\"\ngamma = 0.0\n");
    let single = c.file("single.toml", &fs::read_to_string(c.path("two.toml")).unwrap().replace("[multi_period]\nprev_weights = \"prev.csv\"\ngamma = 0.0\n", ""));
    assert_eq!(code(&egmu(&["solve", &zero, "--out", &c.out("z")], &[])), 0);
    assert_eq!(code(&egmu(&["solve", &single, "--out", &c.out("s")], &[])), 0);
    assert_eq!(
        fs::read(c.path("z/weights.csv")).unwrap(),
        fs::read(c.path("s/weights.csv")).unwrap()
    );

    let one = c.two_asset(0.6, "[multi_period]\nprev_weights = \"prev.csv\"\ngamma = 1.0\n");
    assert_eq!(code(&egmu(&["solve", &one, "--out", &c.out("o")], &[])), 0);
    let r = json(&c.path("o/report.json"));
    let prior = nums(&r["multi_period"]["blended_prior"]);
    // geometric blend of (0.5, 0.5) and (0.1, 0.9) with equal weight
    let (a, b) = ((0.5f64 * 0.1).sqrt(), (0.5f64 * 0.9).sqrt());
    assert!((prior[0] - a / (a + b)).abs() < 1e-15 && (prior[1] - b / (a + b)).abs() < 1e-15);
    // one factor pins the two-asset weights, so every prior gives w = (0.4, 0.6)
    let w = csv_column(&c.path("o/weights.csv"), "weight");
    assert!((w[1] - 0.6).abs() < 1e-8);
}

#[test]
fn outputs_are_deterministic_and_round_trip() {
    let c = Case::new();
    let p = c.smooth(20_000, 0.5, "");
    let run = |out: &str, threads: &str| {
        let o = egmu(&["solve", &p, "--out", &c.out(out)], &[("EGMU_THREADS", threads)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    };
    run("one", "1");
    run("four", "4");
    run("again", "4");
    for f in ["weights.csv", "report.json"] {
        let a = fs::read(c.path("one").join(f)).unwrap();
        assert_eq!(a, fs::read(c.path("four").join(f)).unwrap(), "{f}");
        assert_eq!(a, fs::read(c.path("again").join(f)).unwrap(), "{f}");
    }
    let (_, rows) = csv_rows(&c.path("one/weights.csv"));
    for r in rows.iter().take(500) {
        for s in &r[1..3] {
            let v: f64 = s.parse().unwrap();
            assert_eq!(&format!("{v:.16e}"), s);
        }
    }
    let text = fs::read_to_string(c.path("one/report.json")).unwrap();
    let theta = nums(&json(&c.path("one/report.json"))["theta"]);
    for v in theta {
        assert!(text.contains(&format!("{v:.16e}")), "{v}");
    }
}

#[test]
fn bad_thread_count_is_rejected() {
    let c = Case::new();
    let p = c.two_asset(0.75, "");
    let o = egmu(&["solve", &p, "--out", &c.out("o")], &[("EGMU_THREADS", "zero")]);
    assert_eq!(code(&o), 1);
}

#[test]
fn read_back_weights_reproduce_exactly() {
    let c = Case::new();
    let p = c.smooth(30, 0.9, "");
    assert_eq!(code(&egmu(&["solve", &p, "--out", &c.out("o")], &[])), 0);
    // feed the written weights in as the previous portfolio with a huge γ:
    // the blended prior then equals them, and the resolved weights must match
    let w = csv_column(&c.path("o/weights.csv"), "weight");
    let body = fs::read_to_string(c.path("smooth.toml")).unwrap();
    let mp = c.file(
        "mp.toml",
        &format!("{body}[multi_period]\nprev_weights = \"o/weights.csv\"\ngamma = 1e12\n"),
    );
    assert_eq!(code(&egmu(&["solve", &mp, "--out", &c.out("m")], &[])), 0);
    let w2 = csv_column(&c.path("m/weights.csv"), "weight");
    let d: HashMap<usize, f64> = w.iter().zip(&w2).map(|(a, b)| (a - b).abs()).enumerate().collect();
    let worst = d.values().copied().fold(0.0, f64::max);
    assert!(worst <= 1e-9, "{worst}");
}
