//! Manufactured solution, discrete error norms, convergence rates, and the
//! multi-level study driver.

use crate::dd_solver::{solve, Assembly, DDSolution, ProblemData};
use crate::error::Result;
use crate::extension::Variant;
use crate::geometry::{build_decomposition, Axis, DecompositionConfig};
use crate::mortar::{MortarOrder, GAUSS2, GAUSS3};
use crate::par;

/// Closed-form pressure/velocity/source triple driving a study.
#[derive(Clone, Copy)]
pub struct ManufacturedCase {
    pub pressure: fn(f64, f64) -> f64,
    pub velocity: fn(f64, f64) -> (f64, f64),
    pub source: fn(f64, f64) -> f64,
}

fn benchmark_pressure(x: f64, y: f64) -> f64 {
    y * y * (1.0 - y / 3.0) + x * (1.0 - x) * y * (2.0 * std::f64::consts::PI * x).sin()
}

fn benchmark_velocity(x: f64, y: f64) -> (f64, f64) {
    let two_pi = 2.0 * std::f64::consts::PI;
    let s = (two_pi * x).sin();
    let c = (two_pi * x).cos();
    let ux = -y * ((1.0 - 2.0 * x) * s + two_pi * x * (1.0 - x) * c);
    let uy = -((2.0 - y) * y + x * (1.0 - x) * s);
    (ux, uy)
}

fn benchmark_source(x: f64, y: f64) -> f64 {
    // divergence of the velocity above, differentiated by hand
    let two_pi = 2.0 * std::f64::consts::PI;
    let s = (two_pi * x).sin();
    let c = (two_pi * x).cos();
    let g = x * (1.0 - x);
    y * (2.0 * s - 2.0 * two_pi * (1.0 - 2.0 * x) * c + two_pi * two_pi * g * s) + 2.0 * y - 2.0
}

impl ManufacturedCase {
    /// The smooth benchmark case on [0,1] x [0,2] with unit conductivity.
    pub fn benchmark() -> Self {
        ManufacturedCase {
            pressure: benchmark_pressure,
            velocity: benchmark_velocity,
            source: benchmark_source,
        }
    }

    pub fn exact_eval(&self, x: f64, y: f64) -> (f64, (f64, f64)) {
        ((self.pressure)(x, y), (self.velocity)(x, y))
    }

    /// Normal flux along an interface direction at a point.
    pub fn normal_flux(&self, axis: Axis, x: f64, y: f64) -> f64 {
        let (ux, uy) = (self.velocity)(x, y);
        match axis {
            Axis::X => ux,
            Axis::Y => uy,
        }
    }

    /// Finite-difference consistency: u = -grad p pointwise to `tol_grad`
    /// and f = div u to `tol_div`, sampled on a fixed grid plus seeded
    /// random points of the rectangle.
    pub fn validate(
        &self,
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
        tol_grad: f64,
        tol_div: f64,
    ) -> Result<()> {
        let h = 1e-5;
        let mut points = Vec::new();
        for i in 1..8 {
            for j in 1..8 {
                points.push((
                    x0 + (x1 - x0) * i as f64 / 8.0,
                    y0 + (y1 - y0) * j as f64 / 8.0,
                ));
            }
        }
        let mut state = 0x2545f4914f6cdd1du64;
        let mut rnd = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..40 {
            let x = x0 + (x1 - x0) * (0.05 + 0.9 * rnd());
            let y = y0 + (y1 - y0) * (0.05 + 0.9 * rnd());
            points.push((x, y));
        }
        for (x, y) in points {
            let px = ((self.pressure)(x + h, y) - (self.pressure)(x - h, y)) / (2.0 * h);
            let py = ((self.pressure)(x, y + h) - (self.pressure)(x, y - h)) / (2.0 * h);
            let (ux, uy) = (self.velocity)(x, y);
            if (ux + px).abs() > tol_grad || (uy + py).abs() > tol_grad {
                return Err(crate::Error::Parameter(format!(
                    "velocity is not -grad p at ({x}, {y}): ({:e}, {:e})",
                    ux + px,
                    uy + py
                )));
            }
            let div = ((self.velocity)(x + h, y).0 - (self.velocity)(x - h, y).0) / (2.0 * h)
                + ((self.velocity)(x, y + h).1 - (self.velocity)(x, y - h).1) / (2.0 * h);
            let f = (self.source)(x, y);
            if (div - f).abs() > tol_div {
                return Err(crate::Error::Parameter(format!(
                    "source mismatch at ({x}, {y}): {:e}",
                    div - f
                )));
            }
        }
        Ok(())
    }
}

/// L2 errors of one solved level.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct ErrorSet {
    pub e_u: f64,
    pub e_p: f64,
    pub e_lambda: f64,
    pub e_q_lambda: f64,
}

/// Discrete error norms against the manufactured case.
///
/// The velocity error integrates the lowest-order Raviart-Thomas
/// reconstruction from face fluxes with 2x2 Gauss per cell; the pressure
/// error integrates (p - p_h)^2 with the same rule against the piecewise
/// constant p_h; mortar errors use 3-point Gauss per mortar element and
/// per trace face, summed over both sides of each interface.
pub fn compute_errors(
    assembly: &Assembly,
    solution: &DDSolution,
    case: &ManufacturedCase,
) -> ErrorSet {
    let cell_parts = par::map_indexed(assembly.locals.len(), |sd| {
        let local = &assembly.locals[sd];
        let grid = &local.grid;
        let st = &solution.states[sd];
        let (mut eu2, mut ep2) = (0.0, 0.0);
        for i in 0..grid.nx {
            for j in 0..grid.ny {
                let c = grid.cell_id(i, j);
                let fids = grid.cell_faces(i, j);
                let ul = st.face_fluxes[fids[0].0] / grid.dy;
                let ur = st.face_fluxes[fids[1].0] / grid.dy;
                let ub = st.face_fluxes[fids[2].0] / grid.dx;
                let ut = st.face_fluxes[fids[3].0] / grid.dx;
                let rect = grid.cell_rect(i, j);
                let ph = st.cell_pressures[c];
                let jac = grid.dx * grid.dy;
                for (gx, wx) in GAUSS2 {
                    for (gy, wy) in GAUSS2 {
                        let x = rect.x0 + gx * grid.dx;
                        let y = rect.y0 + gy * grid.dy;
                        let (pe, (uex, uey)) = case.exact_eval(x, y);
                        let uhx = ul + (ur - ul) * gx;
                        let uhy = ub + (ut - ub) * gy;
                        let w = wx * wy * jac;
                        eu2 += w * ((uex - uhx).powi(2) + (uey - uhy).powi(2));
                        ep2 += w * (pe - ph).powi(2);
                    }
                }
            }
        }
        (eu2, ep2)
    });
    let (mut eu2, mut ep2) = (0.0, 0.0);
    for (a, b) in cell_parts {
        eu2 += a;
        ep2 += b;
    }

    let mut el2 = 0.0;
    let mut eq2 = 0.0;
    for (cid, coupling) in assembly.couplings.iter().enumerate() {
        let iface = &assembly.dd.interfaces[coupling.interface];
        let lam = assembly.interface_slice(&solution.lambda.coeffs, cid);
        // mortar error on the mortar partition
        let h = coupling.space.h();
        for e in 0..coupling.space.elements {
            let a = coupling.space.s0 + e as f64 * h;
            for (g, w) in GAUSS3 {
                let s = a + g * h;
                let (x, y) = iface.point_at(s);
                let ex = case.normal_flux(iface.axis, x, y);
                let lh = coupling.space.evaluate(lam, s).expect("in range");
                el2 += w * h * (ex - lh).powi(2);
            }
        }
        // projected mortar error per side on the trace partitions
        for side in &coupling.sides {
            let local = &assembly.locals[side.subdomain];
            let set = local
                .grid
                .trace_partition(coupling.interface)
                .expect("incident");
            for (f, &fid) in set.faces.iter().enumerate() {
                let (a, b) = side.intervals[f];
                let q = solution.states[side.subdomain].face_fluxes[fid]
                    / local.grid.faces[fid].length;
                for (g, w) in GAUSS3 {
                    let s = a + g * (b - a);
                    let (x, y) = iface.point_at(s);
                    let ex = case.normal_flux(iface.axis, x, y);
                    eq2 += w * (b - a) * (ex - q).powi(2);
                }
            }
        }
    }

    ErrorSet {
        e_u: eu2.sqrt(),
        e_p: ep2.sqrt(),
        e_lambda: el2.sqrt(),
        e_q_lambda: eq2.sqrt(),
    }
}

/// Dyadic convergence rates r_k = log2(e_{k-1} / e_k); undefined entries
/// (first level, zero errors) are None.
pub fn rates(errors: &[f64]) -> Vec<Option<f64>> {
    let mut out = vec![None; errors.len()];
    for k in 1..errors.len() {
        if errors[k] > 0.0 && errors[k - 1] > 0.0 {
            out[k] = Some((errors[k - 1] / errors[k]).log2());
        }
    }
    out
}

/// One solved level of a study.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LevelRecord {
    pub level: usize,
    pub e_u: f64,
    pub e_p: f64,
    pub e_lambda: f64,
    pub e_q_lambda: f64,
    pub cg_iterations: usize,
    pub cg_residual: f64,
    pub max_mass_defect: f64,
    pub lambda_dim: usize,
}

/// Per-(variant, order) convergence table.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ConvergenceReport {
    pub variant: String,
    pub mortar_order: u8,
    pub records: Vec<LevelRecord>,
}

impl ConvergenceReport {
    pub fn errors(&self, pick: fn(&LevelRecord) -> f64) -> Vec<f64> {
        self.records.iter().map(pick).collect()
    }

    pub fn rate_table(&self) -> [Vec<Option<f64>>; 4] {
        [
            rates(&self.errors(|r| r.e_u)),
            rates(&self.errors(|r| r.e_p)),
            rates(&self.errors(|r| r.e_lambda)),
            rates(&self.errors(|r| r.e_q_lambda)),
        ]
    }
}

/// Study parameters: decomposition, spaces, level count, CG controls.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub decomposition: DecompositionConfig,
    pub orders: Vec<MortarOrder>,
    pub variants: Vec<Variant>,
    pub levels: usize,
    pub cg_tol: f64,
    pub cg_maxit: Option<usize>,
}

/// Runs the refinement study: one report per (variant, order) pair, each
/// with `levels` rows. Assemblies are shared between variants of a level.
pub fn run_study(config: &StudyConfig, case: &ManufacturedCase) -> Result<Vec<ConvergenceReport>> {
    let base = build_decomposition(&config.decomposition)?;
    let mut reports: Vec<ConvergenceReport> = Vec::new();
    for &variant in &config.variants {
        for &order in &config.orders {
            reports.push(ConvergenceReport {
                variant: variant.label().to_string(),
                mortar_order: order.as_int(),
                records: Vec::new(),
            });
        }
    }
    for level in 0..config.levels {
        let dd = base.refine(level as u32)?;
        for (oi, &order) in config.orders.iter().enumerate() {
            let assembly = Assembly::new(dd.clone(), order, &|_, _| (1.0, 1.0))?;
            let data = ProblemData::from_fns(&assembly, &case.source, &case.pressure);
            for (vi, &variant) in config.variants.iter().enumerate() {
                let sol = solve(&assembly, variant, &data, config.cg_tol, config.cg_maxit)?;
                let err = compute_errors(&assembly, &sol, case);
                let record = LevelRecord {
                    level,
                    e_u: err.e_u,
                    e_p: err.e_p,
                    e_lambda: err.e_lambda,
                    e_q_lambda: err.e_q_lambda,
                    cg_iterations: sol.report.iterations,
                    cg_residual: sol.report.final_residual,
                    max_mass_defect: sol
                        .report
                        .mass_defects
                        .iter()
                        .fold(0.0f64, |a, b| a.max(*b)),
                    lambda_dim: assembly.lambda_dim(),
                };
                reports[vi * config.orders.len() + oi].records.push(record);
            }
        }
    }
    Ok(reports)
}
