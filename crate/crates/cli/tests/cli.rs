use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sortsel::datagen::{cps_like, simulate};
use sortsel_cli::config::ColumnMap;
use sortsel_cli::ingest::{ingest, write_households, PeriodBins};
use sortsel_cli::output::{read_csv, table_from_rows, TableRow};

fn sortsel(dir: &Path, args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sortsel"));
    cmd.current_dir(dir).args(args).env_remove("SORTSEL_SEED").env("RUST_LOG", "error");
    if let Some(s) = seed_env {
        cmd.env("SORTSEL_SEED", s);
    }
    cmd.output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = sortsel(dir, args, None);
    assert!(out.status.success(), "sortsel {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Every result file under `dir`, by relative path, except the run metadata.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "metadata.json" {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

const FIXTURE: &str = "\
d_w,d_h,y_w,y_h,weight,year,educ,kids
1,1,12.5,20.0,1.5,1977,1,0
1,0,,,1.0,1978,0,1
0,1,,,2.0,1983,1,2
1,1,8.25,31.0,1.0,1984,0,0
0,0,,,1.0,1979,1,1
";

fn fixture_map() -> ColumnMap {
    ColumnMap { period: "year".into(), x: vec!["educ".into()], z_only: vec!["kids".into()], ..ColumnMap::default() }
}

#[test]
fn ingest_groups_periods_into_bins() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hh.csv");
    fs::write(&path, FIXTURE).unwrap();
    let (data, report) = ingest(&path, &fixture_map(), &PeriodBins::parse(Some("1976-1980,1981-1985")).unwrap()).unwrap();
    assert_eq!(report.rows, 5);
    assert_eq!(report.violations, 0);
    let labels: Vec<&str> = data.periods.iter().map(|p| p.label.as_str()).collect();
    assert_eq!(labels, ["1976-1980", "1981-1985"]);
    let early = &data.period("1976-1980").unwrap().households;
    assert_eq!(early.len(), 3);
    assert_eq!(early[0].x_row, vec![1.0, 1.0]);
    assert_eq!(early[0].z_row, vec![1.0, 1.0, 0.0]);
    assert_eq!((early[0].y_w, early[0].weight), (Some(12.5), 1.5));
    assert_eq!(early[1].y_w, None);
    assert_eq!(data.x_names, ["educ"]);
    assert_eq!(data.z_only_names, ["kids"]);
}

#[test]
fn ingest_names_every_offending_row() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(
        &path,
        "d_w,d_h,y_w,y_h,weight,year,educ,kids\n\
         1,1,12.5,abc,1,1977,1,0\n\
         1,0,10.0,,1,1978,0,1\n\
         1,1,-3,20,1,1979,0,1\n\
         2,1,10,20,1,1979,0,1\n\
         1,1,10,20,1,1979,0,1\n",
    )
    .unwrap();
    let err = format!("{:#}", ingest(&path, &fixture_map(), &PeriodBins::Raw).unwrap_err());
    assert!(err.contains("line 2: column 'y_h'"), "{err}");
    assert!(err.contains("line 3"), "{err}");
    assert!(err.contains("line 4: column 'y_w'"), "{err}");
    assert!(err.contains("line 5: column 'd_w'"), "{err}");
    assert!(!err.contains("line 6"), "{err}");

    let map = ColumnMap { x: vec!["wealth".into()], ..fixture_map() };
    let err = format!("{:#}", ingest(&path, &map, &PeriodBins::Raw).unwrap_err());
    assert!(err.contains("wealth"), "{err}");
}

#[test]
fn simulated_households_round_trip_exactly() {
    let spec = cps_like(1, 3000, 8);
    let sim = simulate(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hh.csv");
    write_households(&path, std::iter::once(("late", sim.households.as_slice())), &sim.x_names, &sim.z_only_names).unwrap();
    let map = ColumnMap { x: sim.x_names.clone(), z_only: sim.z_only_names.clone(), ..ColumnMap::default() };
    let (data, _) = ingest(&path, &map, &PeriodBins::Raw).unwrap();
    assert_eq!(data.periods.len(), 1);
    assert_eq!(data.periods[0].households, sim.households);
}

#[test]
fn seed_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |out: &str, env: Option<&str>, flag: Option<&str>| {
        let mut args = vec!["simulate", "--preset", "cps-early", "--n", "500", "--out", out];
        if let Some(f) = flag {
            args.extend(["--seed", f]);
        }
        assert!(sortsel(d, &args, env).status.success());
        fs::read(d.join(out).join("households.csv")).unwrap()
    };
    let by_env = run("a", Some("5"), None);
    assert_eq!(by_env, run("b", None, Some("5")));
    assert_ne!(by_env, run("c", Some("6"), None));
    // the flag wins over the environment
    assert_eq!(by_env, run("d", Some("6"), Some("5")));
    let bad = sortsel(d, &["simulate", "--n", "10", "--out", "e"], Some("five"));
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("SORTSEL_SEED"));
}

/// simulate → estimate → counterfactual → decompose on a small two-period sample.
#[test]
fn pipeline_is_consistent_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let common = ["--seed", "4", "--grid", "3", "--ghk-draws", "128"];
    let step = |args: &[&str]| {
        let mut a: Vec<&str> = args.to_vec();
        a.extend(common);
        ok(d, &a)
    };
    let fits = ["--fits", "fit/fit_early.json", "fit/fit_late.json"];
    let run_all = || {
        step(&["simulate", "--preset", "cps", "--n", "20000", "--out", "sim"]);
        let est = step(&["estimate", "--config", "sim/sortsel.toml", "--out", "fit"]);
        assert!(String::from_utf8_lossy(&est.stderr).contains("9 cells"));
        let mut a = vec!["counterfactual", "--out", "cf", "--selection", "early", "--structure", "early", "--composition", "early"];
        a.extend(fits);
        step(&a);
        let mut a = vec!["decompose", "--out", "dec", "--statistic", "tau", "--statistic", "cell:10:10"];
        a.extend(fits);
        step(&a);
        snapshot(d)
    };
    let first = run_all();
    for f in ["sim/households.csv", "sim/latent.csv", "sim/dgp.json", "fit/fit_early.json", "fit/cells_late.csv", "fit/tables.csv", "fit/kde_rho_ywyh_early.csv", "fit/ingest_report.json", "cf/counterfactual.json", "dec/decomposition.csv"] {
        assert!(first.contains_key(Path::new(f)), "missing {f}");
    }
    assert!(d.join("fit/metadata.json").exists());

    // the own-period counterfactual is the fitted table
    let fitted: Vec<TableRow> = read_csv(&d.join("fit/tables.csv")).unwrap();
    let model = table_from_rows(&fitted, "early", "model").unwrap();
    let cf: Vec<TableRow> = read_csv(&d.join("cf/counterfactual_table.csv")).unwrap();
    assert_eq!(cf.len(), 100);
    for r in &cf {
        let m = model[r.row - 1][r.col - 1];
        assert!((r.value - m).abs() < 1e-9, "cell ({},{}): {} vs {m}", r.row, r.col, r.value);
    }
    let emp = table_from_rows(&fitted, "early", "empirical").unwrap();
    assert!((emp.iter().flatten().sum::<f64>() - 100.0).abs() < 1e-9);

    // path rows: components add up along each statistic's path
    #[derive(serde::Deserialize)]
    struct PathRow {
        statistic: String,
        step: usize,
        value: f64,
        component: f64,
    }
    let rows: Vec<PathRow> = read_csv(&d.join("dec/decomposition.csv")).unwrap();
    assert_eq!(rows.len(), 10);
    for stat in ["tau", "cell:10:10"] {
        let r: Vec<&PathRow> = rows.iter().filter(|r| r.statistic == stat).collect();
        let sum: f64 = r.iter().map(|r| r.component).sum();
        assert_eq!(r.iter().map(|r| r.step).collect::<Vec<_>>(), [0, 1, 2, 3, 4]);
        assert!((r[4].value - r[0].value - sum).abs() <= 1e-12 * r[4].value.abs().max(1.0));
    }

    // rerunning everything with the same configuration reproduces every byte
    let second = run_all();
    assert_eq!(first.len(), second.len());
    for (k, v) in &first {
        assert!(second[k] == *v, "{} differs between runs", k.display());
    }
}

#[test]
fn bootstrap_adds_replicates() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--preset", "cps-late", "--n", "8000", "--out", "sim"]);
    ok(d, &["estimate", "--config", "sim/sortsel.toml", "--grid", "2", "--ghk-draws", "64", "--out", "fit"]);
    ok(d, &["bootstrap", "--config", "sim/sortsel.toml", "--fits", "fit/fit_late.json", "--bootstrap", "3", "--out", "boot"]);
    let text = fs::read_to_string(d.join("boot/fit_late.json")).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(doc["fit"]["bootstrap"].as_array().unwrap().len() + doc["fit"]["bootstrap_failures"].as_u64().unwrap() as usize, 3);
    let csv = fs::read_to_string(d.join("boot/bootstrap_late.csv")).unwrap();
    assert!(csv.starts_with("period,i,j,parameter,sd,lower,upper,replicates"));
    assert_eq!(csv.lines().count(), 1 + 4 * (2 * 4 + 6));
}

#[test]
fn errors_are_reported_with_a_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = sortsel(d, &["counterfactual", "--fits", "nope.json"], None);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
    let out = sortsel(d, &["estimate"], None);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--input"));
    let out = sortsel(d, &["simulate", "--preset", "cps", "--decomp-order", "selection"], None);
    assert!(!out.status.success());
    let out = sortsel(d, &["simulate", "--preset", "nonsense"], None);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown preset"));
}
