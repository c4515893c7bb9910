//! Command-line front end: `study`, `plot-mortar`, and `diagnose`.
//!
//! Exit codes: 0 success, 1 solver failure, 2 invalid configuration,
//! arguments, or IO.

use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::dd_solver::{build_coarse, dense_interface_matrix, solve, Assembly, ProblemData};
use crate::error::{Error, Result};
use crate::extension::Variant;
use crate::geometry::{build_decomposition, Axis};
use crate::linalg;
use crate::mortar::MortarOrder;
use crate::verification::{run_study, ConvergenceReport, ManufacturedCase};

/// Scientific notation with six significant digits, the table format.
pub fn fmt_sci(x: f64) -> String {
    format!("{x:.5e}")
}

fn fmt_rate(r: Option<f64>) -> String {
    r.map(|v| format!("{v:.2}")).unwrap_or_default()
}

/// Renders study reports as the table CSV, one row per level per
/// (variant, order) combination.
pub fn table_csv(reports: &[ConvergenceReport]) -> String {
    let mut out =
        String::from("level,e_u,r_u,e_p,r_p,e_lambda,r_lambda,e_Qlambda,r_Qlambda\n");
    for report in reports {
        let [ru, rp, rl, rq] = report.rate_table();
        for (k, rec) in report.records.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                rec.level,
                fmt_sci(rec.e_u),
                fmt_rate(ru[k]),
                fmt_sci(rec.e_p),
                fmt_rate(rp[k]),
                fmt_sci(rec.e_lambda),
                fmt_rate(rl[k]),
                fmt_sci(rec.e_q_lambda),
                fmt_rate(rq[k]),
            ));
        }
    }
    out
}

/// Parses the table CSV back into per-combination error tables; blocks are
/// split where the level counter resets.
pub fn parse_table_csv(text: &str) -> Result<Vec<Vec<[f64; 4]>>> {
    let mut blocks: Vec<Vec<[f64; 4]>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if ln == 0 {
            if line != "level,e_u,r_u,e_p,r_p,e_lambda,r_lambda,e_Qlambda,r_Qlambda" {
                return Err(Error::Config("unexpected table header".into()));
            }
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 9 {
            return Err(Error::Config(format!("bad row at line {}", ln + 1)));
        }
        let level: usize = cols[0]
            .parse()
            .map_err(|_| Error::Config(format!("bad level at line {}", ln + 1)))?;
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Config(format!("bad number '{s}'")))
        };
        let row = [
            parse(cols[1])?,
            parse(cols[3])?,
            parse(cols[5])?,
            parse(cols[7])?,
        ];
        if level == 0 || blocks.is_empty() {
            blocks.push(Vec::new());
        }
        blocks.last_mut().unwrap().push(row);
    }
    Ok(blocks)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[derive(serde::Serialize)]
struct ReportJson<'a> {
    studies: &'a [ConvergenceReport],
}

/// Runs the convergence study and writes the table CSV and JSON report.
pub fn cmd_study(config_path: &Path, overrides: &Overrides) -> i32 {
    let mut cfg = match RunConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    if let Some(dir) = &overrides.out_dir {
        cfg.redirect_outputs(dir);
    }
    let study = match cfg.study(overrides.variant.as_deref(), overrides.mortar_order) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let case = ManufacturedCase::benchmark();
    if let Err(e) = case.validate(
        cfg.domain.x0,
        cfg.domain.y0,
        cfg.domain.x1,
        cfg.domain.y1,
        1e-8,
        1e-6,
    ) {
        eprintln!("error: manufactured case failed its consistency check: {e}");
        return 1;
    }
    let reports = match run_study(&study, &case) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let table = table_csv(&reports);
    if let Err(e) = write_file(&cfg.outputs.table_csv, &table) {
        eprintln!("error: {e}");
        return 2;
    }
    let json = serde_json::to_string_pretty(&ReportJson { studies: &reports })
        .expect("report serializes");
    if let Err(e) = write_file(&cfg.outputs.report_json, &json) {
        eprintln!("error: {e}");
        return 2;
    }
    println!(
        "study: {} combination(s), {} level(s) -> {}",
        reports.len(),
        study.levels,
        cfg.outputs.table_csv.display()
    );
    for report in &reports {
        let last = report.records.last().unwrap();
        let [ru, rp, rl, _] = report.rate_table();
        println!(
            "  variant {:>5}, P{}: e_u = {}, r_u = {}, r_p = {}, r_lambda = {}",
            report.variant,
            report.mortar_order,
            fmt_sci(last.e_u),
            fmt_rate(*ru.last().unwrap()),
            fmt_rate(*rp.last().unwrap()),
            fmt_rate(*rl.last().unwrap()),
        );
    }
    0
}

/// Samples exact and discrete mortar flux along every interface on a split
/// line; interfaces are sampled separately so junction discontinuities
/// survive in the output.
pub fn sample_mortar_line(
    assembly: &Assembly,
    lambda: &[f64],
    case: &ManufacturedCase,
    interface_ids: &[usize],
    points_per_interface: usize,
) -> Vec<(f64, f64, f64)> {
    let mut rows = Vec::new();
    for &cid in interface_ids {
        let coupling = &assembly.couplings[cid];
        let iface = &assembly.dd.interfaces[coupling.interface];
        let lam = assembly.interface_slice(lambda, cid);
        for k in 0..points_per_interface {
            let t = k as f64 / (points_per_interface - 1) as f64;
            let s = iface.s0 + t * (iface.s1 - iface.s0);
            let (x, y) = iface.point_at(s);
            let exact = case.normal_flux(iface.axis, x, y);
            let lh = coupling.space.evaluate(lam, s).expect("sample in range");
            rows.push((s, exact, lh));
        }
    }
    rows
}

fn parse_selector(sel: &str) -> Result<(Axis, f64)> {
    let (axis, value) = sel
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("selector '{sel}' is not of the form x=.. or y=..")))?;
    let pos: f64 = value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad selector value '{value}'")))?;
    match axis.trim() {
        "x" => Ok((Axis::X, pos)),
        "y" => Ok((Axis::Y, pos)),
        other => Err(Error::Config(format!("selector axis must be x or y, got '{other}'"))),
    }
}

/// Solves one level and writes the mortar trace CSV along a split line.
pub fn cmd_plot_mortar(
    config_path: &Path,
    selector: &str,
    level: usize,
    overrides: &Overrides,
) -> i32 {
    let mut cfg = match RunConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    if let Some(dir) = &overrides.out_dir {
        cfg.redirect_outputs(dir);
    }
    let (axis, pos) = match parse_selector(selector) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let variant = match overrides
        .variant
        .as_deref()
        .unwrap_or(cfg.variant.as_str())
    {
        "sharp" => Variant::Sharp,
        _ => Variant::Flat,
    };
    let order = match MortarOrder::from_int(overrides.mortar_order.unwrap_or(cfg.mortar.order)) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };

    let run = || -> Result<(Vec<(f64, f64, f64)>, usize)> {
        let dd = build_decomposition(&cfg.decomposition())?.refine(level as u32)?;
        let on_line: Vec<usize> = dd
            .interfaces
            .iter()
            .filter(|i| i.axis == axis && (i.pos - pos).abs() <= 1e-12 * (1.0 + pos.abs()))
            .map(|i| i.id)
            .collect();
        if on_line.is_empty() {
            return Err(Error::Config(format!(
                "no interface lies on the line {selector}"
            )));
        }
        let assembly = Assembly::new(dd, order, &|_, _| (1.0, 1.0))?;
        let case = ManufacturedCase::benchmark();
        let data = ProblemData::from_fns(&assembly, &case.source, &case.pressure);
        let maxit = if cfg.cg.maxit == 0 {
            None
        } else {
            Some(cfg.cg.maxit)
        };
        let sol = solve(&assembly, variant, &data, cfg.cg.tol, maxit)?;
        let rows = sample_mortar_line(&assembly, &sol.lambda.coeffs, &case, &on_line, 200);
        Ok((rows, on_line.len()))
    };
    match run() {
        Ok((rows, n_ifaces)) => {
            let mut out = String::from("s,lambda_exact,lambda_h\n");
            for (s, ex, lh) in &rows {
                out.push_str(&format!("{},{},{}\n", fmt_sci(*s), fmt_sci(*ex), fmt_sci(*lh)));
            }
            if let Err(e) = write_file(&cfg.outputs.plot_csv, &out) {
                eprintln!("error: {e}");
                return 2;
            }
            println!(
                "plot-mortar: {} interface(s) on {selector}, {} samples -> {}",
                n_ifaces,
                rows.len(),
                cfg.outputs.plot_csv.display()
            );
            0
        }
        Err(e @ Error::Config(_)) | Err(e @ Error::Geometry(_)) => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Prints mortar-condition constants per interface and level, and the
/// interface-operator spectrum at the coarsest level.
pub fn cmd_diagnose(config_path: &Path, overrides: &Overrides) -> i32 {
    let cfg = match RunConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let order = match MortarOrder::from_int(overrides.mortar_order.unwrap_or(cfg.mortar.order)) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let run = || -> Result<()> {
        let base = build_decomposition(&cfg.decomposition())?;
        println!("mortar-condition constants c (flat | sharp), P{}:", order.as_int());
        for level in 0..cfg.levels {
            let dd = base.refine(level as u32)?;
            println!("level {level}:");
            for iface in &dd.interfaces {
                let coupling = crate::mortar::InterfaceCoupling::build(&dd, iface.id, order)?;
                let cf = coupling.check_mortar_condition(Variant::Flat)?;
                let cs = coupling.check_mortar_condition(Variant::Sharp)?;
                let mut flags = String::new();
                if cf == 0.0 || cs == 0.0 {
                    flags = "   *** MORTAR CONDITION VIOLATED ***".into();
                }
                println!(
                    "  interface {} ({}, {}): c_flat = {:.4e}, c_sharp = {:.4e}{}",
                    iface.id, iface.left, iface.right, cf, cs, flags
                );
            }
        }
        // interface-operator spectrum at the coarsest level
        let assembly = Assembly::new(base, order, &|_, _| (1.0, 1.0))?;
        for variant in [Variant::Flat, Variant::Sharp] {
            let coarse = build_coarse(&assembly, variant)?;
            match dense_interface_matrix(&assembly, &coarse, variant) {
                Ok(a) => {
                    let (min, max) = linalg::symmetric_eig_range(&a)?;
                    println!(
                        "interface operator ({}), level 0: lambda_min = {:.4e}, lambda_max = {:.4e}",
                        variant.label(),
                        min,
                        max
                    );
                }
                Err(e) => println!(
                    "interface operator ({}), level 0: not assembled ({e})",
                    variant.label()
                ),
            }
        }
        Ok(())
    };
    match run() {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Parsed command-line flags shared by the subcommands.
#[derive(Debug, Default)]
pub struct Overrides {
    pub variant: Option<String>,
    pub mortar_order: Option<u8>,
    pub out_dir: Option<PathBuf>,
}

const USAGE: &str = "usage:
  flux-mortar study <config.json> [--variant flat|sharp|both] [--mortar-order 0|1] [--out DIR]
  flux-mortar plot-mortar <config.json> --interface x=..|y=.. --level K [--variant ..] [--out DIR]
  flux-mortar diagnose <config.json> [--mortar-order 0|1]";

/// Entry point used by the binary; returns the process exit code.
pub fn run(args: &[String]) -> i32 {
    if args.is_empty() {
        eprintln!("{USAGE}");
        return 2;
    }
    let cmd = args[0].as_str();
    let mut config: Option<PathBuf> = None;
    let mut overrides = Overrides::default();
    let mut selector: Option<String> = None;
    let mut level: Option<usize> = None;
    let mut it = args[1..].iter();
    while let Some(arg) = it.next() {
        match arg.as_str() {
            "--variant" => match it.next() {
                Some(v) if ["flat", "sharp", "both"].contains(&v.as_str()) => {
                    overrides.variant = Some(v.clone())
                }
                _ => {
                    eprintln!("error: --variant expects flat, sharp, or both");
                    return 2;
                }
            },
            "--mortar-order" => match it.next().and_then(|v| v.parse::<u8>().ok()) {
                Some(k @ (0 | 1)) => overrides.mortar_order = Some(k),
                _ => {
                    eprintln!("error: --mortar-order expects 0 or 1");
                    return 2;
                }
            },
            "--out" => match it.next() {
                Some(d) => overrides.out_dir = Some(PathBuf::from(d)),
                None => {
                    eprintln!("error: --out expects a directory");
                    return 2;
                }
            },
            "--interface" => match it.next() {
                Some(s) => selector = Some(s.clone()),
                None => {
                    eprintln!("error: --interface expects x=.. or y=..");
                    return 2;
                }
            },
            "--level" => match it.next().and_then(|v| v.parse::<usize>().ok()) {
                Some(k) => level = Some(k),
                None => {
                    eprintln!("error: --level expects a nonnegative integer");
                    return 2;
                }
            },
            other if config.is_none() && !other.starts_with('-') => {
                config = Some(PathBuf::from(other))
            }
            other => {
                eprintln!("error: unexpected argument '{other}'\n{USAGE}");
                return 2;
            }
        }
    }
    let Some(config) = config else {
        eprintln!("error: missing config path\n{USAGE}");
        return 2;
    };
    match cmd {
        "study" => cmd_study(&config, &overrides),
        "plot-mortar" => {
            let Some(selector) = selector else {
                eprintln!("error: plot-mortar requires --interface\n{USAGE}");
                return 2;
            };
            let Some(level) = level else {
                eprintln!("error: plot-mortar requires --level\n{USAGE}");
                return 2;
            };
            cmd_plot_mortar(&config, &selector, level, &overrides)
        }
        "diagnose" => cmd_diagnose(&config, &overrides),
        other => {
            eprintln!("error: unknown command '{other}'\n{USAGE}");
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sci_format_six_digits() {
        assert_eq!(fmt_sci(0.0704961), "7.04961e-2");
        assert_eq!(fmt_sci(1.0), "1.00000e0");
        assert_eq!(fmt_sci(-3.0e-12), "-3.00000e-12");
    }

    #[test]
    fn selector_parse() {
        assert!(matches!(parse_selector("x=0.5"), Ok((Axis::X, _))));
        assert!(matches!(parse_selector("y=1"), Ok((Axis::Y, _))));
        assert!(parse_selector("z=1").is_err());
        assert!(parse_selector("nonsense").is_err());
    }

    #[test]
    fn table_round_trip() {
        use crate::verification::{ConvergenceReport, LevelRecord};
        let mk = |level, base: f64| LevelRecord {
            level,
            e_u: base,
            e_p: base * 0.6,
            e_lambda: base * 0.5,
            e_q_lambda: base * 1.5,
            cg_iterations: 3,
            cg_residual: 1e-11,
            max_mass_defect: 1e-13,
            lambda_dim: 12,
        };
        let reports = vec![
            ConvergenceReport {
                variant: "flat".into(),
                mortar_order: 1,
                records: vec![mk(0, 7.05e-2), mk(1, 2.76e-2)],
            },
            ConvergenceReport {
                variant: "sharp".into(),
                mortar_order: 1,
                records: vec![mk(0, 7.05e-2), mk(1, 2.76e-2)],
            },
        ];
        let text = table_csv(&reports);
        let blocks = parse_table_csv(&text).unwrap();
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].len(), 2);
        for (bi, block) in blocks.iter().enumerate() {
            for (k, row) in block.iter().enumerate() {
                let rec = &reports[bi].records[k];
                // six significant digits survive the round trip
                assert!((row[0] - rec.e_u).abs() <= 1e-6 * rec.e_u);
                assert!((row[1] - rec.e_p).abs() <= 1e-6 * rec.e_p);
                assert!((row[2] - rec.e_lambda).abs() <= 1e-6 * rec.e_lambda);
                assert!((row[3] - rec.e_q_lambda).abs() <= 1e-6 * rec.e_q_lambda);
            }
        }
    }
}
