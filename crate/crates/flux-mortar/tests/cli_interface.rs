//! External-interface tests: config parsing, CSV outputs, exit codes, and
//! deterministic reruns.

use std::path::{Path, PathBuf};

use flux_mortar::cli::{cmd_diagnose, cmd_plot_mortar, cmd_study, parse_table_csv, Overrides};
use flux_mortar::config::RunConfig;
use flux_mortar::dd_solver::Assembly;
use flux_mortar::geometry::{build_decomposition, benchmark_layout};
use flux_mortar::mortar::MortarOrder;
use flux_mortar::verification::ManufacturedCase;

fn tiny_config(dir: &Path, levels: usize, variant: &str) -> PathBuf {
    let cfg = format!(
        r#"{{
        "domain": {{"x0": 0.0, "y0": 0.0, "x1": 1.0, "y1": 2.0}},
        "split_x": [0.5],
        "split_y": [1.0],
        "base_resolutions": [[4, 8], [5, 10], [6, 12], [7, 14]],
        "mortar": {{"order": 1, "elements_per_interface": 2}},
        "variant": "{variant}",
        "levels": {levels},
        "cg": {{"tol": 1e-10, "maxit": 0}},
        "outputs": {{
            "table_csv": "{d}/table.csv",
            "plot_csv": "{d}/mortar.csv",
            "report_json": "{d}/report.json"
        }}
    }}"#,
        d = dir.display()
    );
    let path = dir.join("config.json");
    std::fs::write(&path, cfg).unwrap();
    path
}

fn temp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("flux-mortar-test-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn study_writes_table_and_round_trips() {
    let dir = temp_dir("study");
    let cfg_path = tiny_config(&dir, 2, "both");
    let code = cmd_study(&cfg_path, &Overrides::default());
    assert_eq!(code, 0);
    let table = std::fs::read_to_string(dir.join("table.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(
        lines.next().unwrap(),
        "level,e_u,r_u,e_p,r_p,e_lambda,r_lambda,e_Qlambda,r_Qlambda"
    );
    // both variants, two levels each
    assert_eq!(table.lines().count(), 1 + 4);
    let blocks = parse_table_csv(&table).unwrap();
    assert_eq!(blocks.len(), 2);
    assert_eq!(blocks[0].len(), 2);
    // report JSON parses and matches the CSV to six significant digits
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    let studies = json["studies"].as_array().unwrap();
    assert_eq!(studies.len(), 2);
    let e_u = studies[0]["records"][0]["e_u"].as_f64().unwrap();
    assert!((blocks[0][0][0] - e_u).abs() <= 1e-6 * e_u);
    // rates present on the refined rows only
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert!(rows[0].split(',').nth(2).unwrap().is_empty());
    assert!(!rows[1].split(',').nth(2).unwrap().is_empty());
}

#[test]
fn study_reruns_are_byte_identical() {
    let dir = temp_dir("determinism");
    let cfg_path = tiny_config(&dir, 2, "flat");
    assert_eq!(cmd_study(&cfg_path, &Overrides::default()), 0);
    let first = std::fs::read(dir.join("table.csv")).unwrap();
    let first_json = std::fs::read(dir.join("report.json")).unwrap();
    assert_eq!(cmd_study(&cfg_path, &Overrides::default()), 0);
    assert_eq!(first, std::fs::read(dir.join("table.csv")).unwrap());
    assert_eq!(first_json, std::fs::read(dir.join("report.json")).unwrap());
}

#[test]
fn single_level_has_no_rates() {
    let dir = temp_dir("single-level");
    let cfg_path = tiny_config(&dir, 1, "flat");
    assert_eq!(cmd_study(&cfg_path, &Overrides::default()), 0);
    let table = std::fs::read_to_string(dir.join("table.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
    let row = table.lines().nth(1).unwrap();
    let cols: Vec<&str> = row.split(',').collect();
    for k in [2, 4, 6, 8] {
        assert!(cols[k].is_empty(), "rate column {k} should be empty");
    }
}

#[test]
fn invalid_config_and_unwritable_output_exit_2() {
    let dir = temp_dir("badconfig");
    // malformed json
    let bad = dir.join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(cmd_study(&bad, &Overrides::default()), 2);
    // missing file
    assert_eq!(cmd_study(&dir.join("absent.json"), &Overrides::default()), 2);
    // tolerance out of range
    let cfg_path = tiny_config(&dir, 1, "flat");
    let text = std::fs::read_to_string(&cfg_path)
        .unwrap()
        .replace("1e-10", "2.0");
    std::fs::write(&cfg_path, text).unwrap();
    assert_eq!(cmd_study(&cfg_path, &Overrides::default()), 2);
    // unwritable output path
    let cfg_path = tiny_config(&dir, 1, "flat");
    let out = Overrides {
        out_dir: Some(PathBuf::from("/proc/definitely-not-writable")),
        ..Default::default()
    };
    assert_eq!(cmd_study(&cfg_path, &out), 2);
}

#[test]
fn solver_failure_exits_1() {
    // over-refined mortar with the sharp variant fails in the projection
    let dir = temp_dir("solverfail");
    let cfg = format!(
        r#"{{
        "domain": {{"x0": 0.0, "y0": 0.0, "x1": 1.0, "y1": 2.0}},
        "split_x": [0.5],
        "split_y": [1.0],
        "base_resolutions": [[2, 2], [2, 3], [3, 2], [3, 3]],
        "mortar": {{"order": 1, "elements_per_interface": 16}},
        "variant": "sharp",
        "levels": 1,
        "cg": {{"tol": 1e-10, "maxit": 0}},
        "outputs": {{
            "table_csv": "{d}/table.csv",
            "plot_csv": "{d}/mortar.csv",
            "report_json": "{d}/report.json"
        }}
    }}"#,
        d = dir.display()
    );
    let path = dir.join("config.json");
    std::fs::write(&path, cfg).unwrap();
    assert_eq!(cmd_study(&path, &Overrides::default()), 1);
}

#[test]
fn plot_mortar_samples_and_junctions() {
    let dir = temp_dir("plot");
    let cfg_path = tiny_config(&dir, 2, "flat");
    let code = cmd_plot_mortar(&cfg_path, "y=1", 1, &Overrides::default());
    assert_eq!(code, 0);
    let csv = std::fs::read_to_string(dir.join("mortar.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "s,lambda_exact,lambda_h");
    // two interfaces on y = 1, 200 samples each
    assert_eq!(csv.lines().count(), 1 + 400);
    // junction sample s = 0.5 appears from both interfaces
    let s_values: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    let mid = "5.00000e-1";
    assert_eq!(s_values.iter().filter(|s| **s == mid).count(), 2);

    // unknown selector
    assert_eq!(
        cmd_plot_mortar(&cfg_path, "y=0.77", 1, &Overrides::default()),
        2
    );
    assert_eq!(
        cmd_plot_mortar(&cfg_path, "q=1", 1, &Overrides::default()),
        2
    );
}

#[test]
fn zero_data_plot_is_identically_zero() {
    // a zero solution samples to a zero lambda_h column
    let dd = build_decomposition(&benchmark_layout(2)).unwrap();
    let asm = Assembly::new(dd, MortarOrder::P1, &|_, _| (1.0, 1.0)).unwrap();
    let lambda = vec![0.0; asm.lambda_dim()];
    let case = ManufacturedCase::benchmark();
    let on_line: Vec<usize> = asm
        .dd
        .interfaces
        .iter()
        .filter(|i| matches!(i.axis, flux_mortar::geometry::Axis::Y))
        .map(|i| i.id)
        .collect();
    let rows = flux_mortar::cli::sample_mortar_line(&asm, &lambda, &case, &on_line, 50);
    assert_eq!(rows.len(), 100);
    for (_, _, lh) in rows {
        assert_eq!(lh, 0.0);
    }
}

#[test]
fn diagnose_runs_clean() {
    let dir = temp_dir("diagnose");
    let cfg_path = tiny_config(&dir, 2, "flat");
    assert_eq!(cmd_diagnose(&cfg_path, &Overrides::default()), 0);
}

#[test]
fn config_overrides_apply() {
    let dir = temp_dir("overrides");
    let cfg_path = tiny_config(&dir, 1, "both");
    let cfg = RunConfig::load(&cfg_path).unwrap();
    assert_eq!(cfg.variants().unwrap().len(), 2);
    let study = cfg.study(Some("flat"), Some(0)).unwrap();
    assert_eq!(study.variants.len(), 1);
    assert_eq!(study.orders[0], MortarOrder::P0);
}
