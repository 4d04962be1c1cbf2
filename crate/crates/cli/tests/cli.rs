use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mie_cli::{MachineReport, ResultTable};

const DGP: &str = r#"
seed = 11
[dgp]
n = 1200
[dgp.unconfounded]
covariates = [{ dist = "uniform", low = -1, high = 1 }, { dist = "bernoulli", p = 0.4 }]
propensity = { link = "logit", coefficients = [0.0, 0.7, -0.4] }
tau = { form = "linear", coefficients = [1.0, 0.5, 0.5] }
mu0 = [0.0, 1.0, 1.0]
[bootstrap]
replications = 20
"#;

fn mie(args: &[&str], config: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mie"));
    cmd.args(args);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).trim().to_string()
}

#[test]
fn simulate_then_estimate_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let sim_cfg = write(dir.path(), "sim.toml", DGP);
    let csv = dir.path().join("sim.csv");
    let o = mie(&["simulate", "--out", csv.to_str().unwrap()], Some(&sim_cfg));
    assert!(o.status.success(), "{}", stderr(&o));
    let header = std::fs::read_to_string(&csv).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "x1,x2,a,y");

    let est_cfg = write(
        dir.path(),
        "est.toml",
        r#"
seed = 3
[data]
path = "sim.csv"
treatment = "a"
outcome = "y"
covariates = ["x1", "x2"]
[estimate]
estimators = ["ipw", "ri", "aipw"]
[bootstrap]
replications = 20
"#,
    );
    let json = dir.path().join("report.json");
    let o = mie(&["estimate", "--out", json.to_str().unwrap()], Some(&est_cfg));
    assert!(o.status.success(), "{}", stderr(&o));
    let printed = String::from_utf8(o.stdout).unwrap();
    let report = MachineReport::from_json(&std::fs::read_to_string(&json).unwrap()).unwrap();
    let table = ResultTable::from_report(&report);
    assert_eq!(table.rows, ["additive", "multiplicative", "equalizing", "ipsi"]);
    assert_eq!(table.columns, ["IPW", "RI", "AIPW"]);
    // AIPW has no overlap-weighted version.
    assert!(table.cells[3][2].is_none());
    assert!(report.notes.iter().any(|n| n.contains("AIPW")), "{:?}", report.notes);
    for (i, row) in table.cells.iter().enumerate() {
        for cell in row.iter().take(2) {
            let c = cell.unwrap();
            assert!(c.point.is_finite() && c.se.unwrap() > 0.0, "row {i}");
        }
    }
    assert!(printed.starts_with(&table.render()), "{printed}");
    assert_eq!(report.data.as_ref().unwrap().n, 1200);
    assert!(report.data.unwrap().sha256.is_some());
}

#[test]
fn oracle_reports_monte_carlo_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{DGP}\n[oracle]\nmonte_carlo = true\ndraws = 20000\n");
    let cfg = write(dir.path(), "o.toml", &text);
    let json = dir.path().join("o.json");
    let o = mie(&["oracle", "--out", json.to_str().unwrap()], Some(&cfg));
    assert!(o.status.success(), "{}", stderr(&o));
    let report = MachineReport::from_json(&std::fs::read_to_string(&json).unwrap()).unwrap();
    let table = ResultTable::from_report(&report);
    assert_eq!(table.columns, ["MIE", "MIE mc_se"]);
    for row in &table.cells {
        let se = row[1].unwrap().point;
        assert!(se > 0.0 && se < 0.05, "{se}");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.toml", DGP);
    let run = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        let o = mie(&["simulate", "--seed", seed, "--out", out.to_str().unwrap()], Some(&cfg));
        assert!(o.status.success());
        std::fs::read(out).unwrap()
    };
    assert_eq!(run("1", "a.csv"), run("1", "b.csv"));
    assert_ne!(run("1", "a.csv"), run("2", "c.csv"));
}

fn expect_error(o: &Output, class: &str, code: i32) {
    assert_eq!(o.status.code(), Some(code), "{}", stderr(o));
    let err = stderr(o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with(&format!("error[{class}]: ")), "{err}");
}

#[test]
fn failures_exit_with_a_classified_line() {
    let dir = tempfile::tempdir().unwrap();
    expect_error(&mie(&["estimate"], None), "config", 2);
    expect_error(&mie(&["estimate", "--bogus"], None), "usage", 64);

    let bad = write(dir.path(), "bad.toml", "seed = 1\n[dgp]\nn = 10\nfoo = 1\n");
    expect_error(&mie(&["estimate"], Some(&bad)), "config", 2);

    let missing = write(
        dir.path(),
        "missing.toml",
        "[data]\npath = \"nope.csv\"\ntreatment = \"a\"\noutcome = \"y\"\ncovariates = [\"x\"]\n",
    );
    expect_error(&mie(&["estimate"], Some(&missing)), "io", 3);

    write(dir.path(), "na.csv", "x,a,y\n0.1,1,2.0\nNA,0,1.0\n");
    let na = write(
        dir.path(),
        "na.toml",
        "[data]\npath = \"na.csv\"\ntreatment = \"a\"\noutcome = \"y\"\ncovariates = [\"x\"]\n",
    );
    let o = mie(&["estimate"], Some(&na));
    expect_error(&o, "parse", 4);
    assert!(stderr(&o).contains("row 2"), "{}", stderr(&o));

    let roles = write(
        dir.path(),
        "roles.toml",
        "[data]\npath = \"na.csv\"\ntreatment = \"a\"\noutcome = \"y\"\ncovariates = [\"x\", \"a\"]\n",
    );
    expect_error(&mie(&["estimate"], Some(&roles)), "role", 5);

    let rhc = write(dir.path(), "rhc.toml", "[rhc]\noffline = true\ncache_dir = \"empty\"\n");
    let o = Command::new(env!("CARGO_BIN_EXE_mie"))
        .args(["replicate-rhc", "--config"])
        .arg(&rhc)
        .env_remove("MIE_RHC_CSV")
        .output()
        .unwrap();
    expect_error(&o, "fetch", 12);
}

#[test]
fn shipped_example_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for name in ["annotated.toml", "roy.toml"] {
        mie_cli::RunConfig::load(&dir.join(name)).unwrap_or_else(|e| panic!("{name}: {}", e.one_line()));
    }
}
