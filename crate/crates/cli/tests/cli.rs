use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use etas_cli::config::Config;
use etas_cli::result::FitRecord;
use etas_core::{EtasPriors, PriorSpec};
use tempfile::TempDir;

const CONFIG: &str = r#"
seed = 5

[window]
t_start = 0.0
t_end = 300.0
m_cutoff = 3.0

[params]
mu = 0.3
k = 1.0
alpha = 1.0
c = 0.05
p = 1.3
"#;

fn etas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_etas")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Self {
            dir: TempDir::new().unwrap(),
        };
        std::fs::write(ws.path("run.toml"), CONFIG).unwrap();
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    fn read(&self, name: &str) -> String {
        std::fs::read_to_string(self.path(name)).unwrap()
    }

    fn write(&self, name: &str, text: &str) {
        std::fs::write(self.path(name), text).unwrap();
    }

    fn simulate(&self, out: &str) -> Output {
        etas(&["simulate", "--config", &self.arg("run.toml"), "--out", &self.arg(out)])
    }

    fn fit(&self, out: &str, extra: &[&str]) -> Output {
        let mut args = vec![
            "fit".to_string(),
            "--catalog".into(),
            self.arg("cat.csv"),
            "--config".into(),
            self.arg("run.toml"),
            "--out".into(),
            self.arg(out),
        ];
        args.extend(extra.iter().map(|s| s.to_string()));
        etas(&args.iter().map(String::as_str).collect::<Vec<_>>())
    }

    fn with_catalog() -> Self {
        let ws = Self::new();
        assert_eq!(code(&ws.simulate("cat.csv")), 0);
        ws
    }
}

fn manifest_seed(path: &Path) -> u64 {
    let v: toml::Table = toml::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v["seed"].as_integer().unwrap() as u64
}

#[test]
fn simulate_writes_catalog_and_manifest() {
    let ws = Workspace::new();
    let out = ws.simulate("cat.csv");
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(ws.read("cat.csv").starts_with("time,magnitude\n"));
    assert_eq!(manifest_seed(&ws.path("cat.csv.manifest.toml")), 5);

    assert_eq!(code(&ws.simulate("again.csv")), 0);
    assert_eq!(ws.read("cat.csv"), ws.read("again.csv"));

    let out = etas(&[
        "simulate",
        "--config",
        &ws.arg("run.toml"),
        "--out",
        &ws.arg("other.csv"),
        "--seed",
        "6",
        "--manifest",
        &ws.arg("m.toml"),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(manifest_seed(&ws.path("m.toml")), 6);
    assert_ne!(ws.read("cat.csv"), ws.read("other.csv"));
}

#[test]
fn missing_field_is_a_usage_error() {
    let ws = Workspace::new();
    ws.write("run.toml", &CONFIG.replace("mu = 0.3\n", ""));
    let out = ws.simulate("cat.csv");
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("`mu`"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&etas(&["no-such-command"])), 1);
    assert_eq!(code(&etas(&["fit", "--catalog"])), 1);
    assert_eq!(code(&etas(&["--help"])), 0);

    let ws = Workspace::new();
    let out = ws.fit("res.toml", &[]);
    assert_eq!(code(&out), 1, "missing catalog: {}", stderr(&out));

    ws.write("cat.csv", "time,magnitude\n1.0,3.5\nabc,4.0\n");
    let out = ws.fit("res.toml", &[]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

#[test]
fn invalid_priors_rejected() {
    let ws = Workspace::with_catalog();
    let bad = format!("{CONFIG}\n[priors]\nc = {{ family = \"uniform\", lower = 2.0, upper = 1.0 }}\n");
    ws.write("run.toml", &bad);
    let out = ws.fit("res.toml", &[]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("priors"), "{}", stderr(&out));
}

#[test]
fn ties_need_the_jitter_flag() {
    let ws = Workspace::new();
    let mut text = String::from("time,magnitude\n");
    for i in 0..40 {
        text.push_str(&format!("{},{}\n", (i / 2) as f64 * 7.0 + 1.0, 3.2 + 0.05 * i as f64));
    }
    ws.write("cat.csv", &text);
    let out = ws.fit("res.toml", &[]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("tied"), "{}", stderr(&out));
    let out = ws.fit("res.toml", &["--jitter-ties"]);
    assert_ne!(code(&out), 1, "{}", stderr(&out));
    let record = FitRecord::load(&ws.path("res.toml")).unwrap();
    assert_eq!(record.jitter_ties, Some(1e-9));
}

#[test]
fn fit_presets() {
    let ws = Workspace::with_catalog();
    let cases: [(&[&str], EtasPriors); 3] = [
        (&["--preset", "replicate"], EtasPriors::replicate()),
        (&["--preset", "gamma"], EtasPriors::gamma()),
        (&["--gamma-scale", "3"], EtasPriors::gamma_scaled(3.0).unwrap()),
    ];
    for (flags, expected) in cases {
        ws.fit("res.toml", flags);
        let record = FitRecord::load(&ws.path("res.toml")).unwrap();
        assert_eq!(record.priors, expected, "{flags:?}");
    }
    let record = FitRecord::load(&ws.path("res.toml")).unwrap();
    assert_eq!(record.priors.p, PriorSpec::shifted_gamma(3.0, 15.0, 1.0).unwrap());
}

#[test]
fn fit_result_contents_and_determinism() {
    let ws = Workspace::with_catalog();
    let out = ws.fit("a.toml", &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(code(&ws.fit("b.toml", &[])), 0);
    assert_eq!(ws.read("a.toml"), ws.read("b.toml"));

    let record = FitRecord::load(&ws.path("a.toml")).unwrap();
    assert!(record.converged);
    assert_eq!(record.trace.len(), record.iterations + 1);
    assert_eq!(record.marginals.len(), 5);
    assert_eq!(record.n_events, ws.read("cat.csv").lines().count() - 1);
    let posterior = record.posterior().unwrap();
    assert_eq!(<[f64; 5]>::from(posterior.gaussian.mean), record.mean);
}

#[test]
fn flags_override_config() {
    let ws = Workspace::with_catalog();
    ws.fit("res.toml", &["--delta", "0.5", "--growth", "3", "--n-max", "4"]);
    let b = FitRecord::load(&ws.path("res.toml")).unwrap().binning;
    assert_eq!((b.delta, b.growth, b.n_max), (0.5, 3.0, 4));
}

#[test]
fn non_converged_fit_exits_two_and_diagnose_refuses() {
    let ws = Workspace::with_catalog();
    let out = ws.fit("res.toml", &["--max-outer", "1"]);
    assert_eq!(code(&out), 2);
    assert!(!FitRecord::load(&ws.path("res.toml")).unwrap().converged);

    let diagnose = |extra: &[&str]| {
        let mut args = vec![
            "diagnose".to_string(),
            "--catalog".into(),
            ws.arg("cat.csv"),
            "--result".into(),
            ws.arg("res.toml"),
            "--out".into(),
            ws.arg("env.csv"),
            "--report".into(),
            ws.arg("ks.toml"),
        ];
        args.extend(extra.iter().map(|s| s.to_string()));
        etas(&args.iter().map(String::as_str).collect::<Vec<_>>())
    };
    let out = diagnose(&[]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--force"));
    assert!(!ws.path("env.csv").exists());
    assert_eq!(code(&diagnose(&["--force"])), 0);
    assert!(ws.path("env.csv").exists());
}

#[test]
fn diagnose_emits_band_and_report() {
    let ws = Workspace::with_catalog();
    assert_eq!(code(&ws.fit("res.toml", &[])), 0);
    let run = |out: &str| {
        etas(&[
            "diagnose",
            "--catalog",
            &ws.arg("cat.csv"),
            "--result",
            &ws.arg("res.toml"),
            "--out",
            &ws.arg(out),
            "--samples",
            "200",
            "--seed",
            "3",
        ])
    };
    let out = run("env.csv");
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let band = ws.read("env.csv");
    let n = ws.read("cat.csv").lines().count() - 1;
    assert_eq!(band.lines().next().unwrap(), "t,N_obs,q2.5,q25,q50,q75,q97.5");
    assert_eq!(band.lines().count(), n + 1);

    let report: toml::Table = toml::from_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    let p = report["p_value"].as_float().unwrap();
    assert!((0.0..=1.0).contains(&p));
    assert_eq!(report["n"].as_integer().unwrap() as usize, n);

    run("env2.csv");
    assert_eq!(band, ws.read("env2.csv"));
}

#[test]
fn mcmc_chains() {
    let ws = Workspace::with_catalog();
    let run = |out: &str, seed: &str| {
        etas(&[
            "mcmc",
            "--catalog",
            &ws.arg("cat.csv"),
            "--config",
            &ws.arg("run.toml"),
            "--out",
            &ws.arg(out),
            "--seed",
            seed,
            "--n-iter",
            "600",
            "--burn-in",
            "200",
            "--report",
            &ws.arg("report.toml"),
        ])
    };
    let out = run("a.csv", "1");
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let chains = ws.read("a.csv");
    assert_eq!(chains.lines().count(), 401);
    assert!(chains.starts_with("iteration,theta_mu,theta_k,theta_alpha,theta_c,theta_p,mu,k,alpha,c,p\n"));
    assert!(ws.read("report.toml").contains("acceptance"));

    run("b.csv", "1");
    run("c.csv", "2");
    assert_eq!(chains, ws.read("b.csv"));
    assert_ne!(chains, ws.read("c.csv"));

    let out = etas(&[
        "mcmc",
        "--catalog",
        &ws.arg("missing.csv"),
        "--config",
        &ws.arg("run.toml"),
        "--out",
        &ws.arg("d.csv"),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn mcmc_defaults() {
    let c = Config::parse(CONFIG).unwrap();
    assert_eq!((c.mcmc.n_iter, c.mcmc.burn_in), (15_000, 5_000));
}

fn sweep(ws: &Workspace, out: &str, grid: &[&str]) -> Output {
    let mut args = vec![
        "sweep-bins".to_string(),
        "--catalog".into(),
        ws.arg("cat.csv"),
        "--config".into(),
        ws.arg("run.toml"),
        "--out".into(),
        ws.arg(out),
    ];
    args.extend(grid.iter().map(|s| s.to_string()));
    etas(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

#[test]
fn sweep_covers_the_grid_sorted_by_iterations() {
    let ws = Workspace::with_catalog();
    let out = sweep(&ws, "sweep.csv", &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = ws.read("sweep.csv");
    let rows: Vec<Vec<&str>> = table.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6 * 3 * 2);
    let iterations: Vec<usize> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(iterations.windows(2).all(|w| w[0] <= w[1]));
    let mut cells: Vec<(String, String, String)> =
        rows.iter().map(|r| (r[0].into(), r[1].into(), r[2].into())).collect();
    cells.sort();
    cells.dedup();
    assert_eq!(cells.len(), 36);
    assert!(rows.iter().all(|r| r[4] == "true" || r[4] == "false"));

    sweep(&ws, "again.csv", &[]);
    assert_eq!(table, ws.read("again.csv"));
}

#[test]
fn single_cell_sweep_matches_fit() {
    let ws = Workspace::with_catalog();
    let grid = ["--growth", "3", "--delta", "0.2", "--n-max", "5"];
    assert_eq!(code(&sweep(&ws, "sweep.csv", &grid)), 0);
    assert_eq!(code(&ws.fit("res.toml", &["--growth", "3", "--delta", "0.2", "--n-max", "5"])), 0);
    let record = FitRecord::load(&ws.path("res.toml")).unwrap();
    let table = ws.read("sweep.csv");
    let row: Vec<&str> = table.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[3], record.iterations.to_string());
    assert_eq!(row[4], record.converged.to_string());
    for j in 0..5 {
        assert_eq!(row[5 + j].parse::<f64>().unwrap(), record.mean[j]);
        assert_eq!(row[10 + j].parse::<f64>().unwrap(), record.marginals[j].theta_sd);
    }
}

#[test]
fn prior_table_rows() {
    let out = etas(&["prior-table", "--samples", "20000", "--seed", "1"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let names: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(
        names,
        ["kb_uniform_implied", "kb_lognormal", "gamma_mu", "gamma_k", "gamma_alpha", "gamma_c", "gamma_p"]
    );
    assert_eq!(text, String::from_utf8(etas(&["prior-table", "--samples", "20000", "--seed", "1"]).stdout).unwrap());
}
