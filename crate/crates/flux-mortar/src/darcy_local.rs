//! Per-subdomain mixed method reduced to a two-point flux scheme: operator
//! assembly and the Neumann solver with the compatibility multiplier.
//!
//! Face degrees of freedom are total fluxes oriented along +x or +y. The
//! velocity mass form is diagonal in these dofs, a(u, v) = sum_F m_F u_F v_F
//! with m_F the inverse transmissibility, so eliminating fluxes leaves the
//! classical cell-centered pressure system. Subdomains whose whole boundary
//! lies on the interface skeleton get a scalar multiplier enforcing the
//! zero-mean pressure constraint of the singular Neumann problem.

use crate::error::{Error, Result};
use crate::geometry::{FaceKind, SubdomainGrid};
use crate::linalg::{BandCholesky, BandMatrix};

/// Assembled local operator for one subdomain.
pub struct LocalSystem {
    pub subdomain_id: usize,
    pub grid: SubdomainGrid,
    /// Inverse transmissibility per face (the diagonal velocity mass).
    pub face_weight: Vec<f64>,
    /// Transmissibility per face.
    pub transmissibility: Vec<f64>,
    /// Faces on the outer boundary, in face-id order.
    pub dirichlet_faces: Vec<usize>,
    /// Dimension of the compatibility multiplier space: 1 for interior
    /// (floating) subdomains, 0 otherwise.
    pub s_dim: usize,
    cell_volume: f64,
    volume: f64,
    chol: BandCholesky,
}

/// Result of one subdomain solve.
#[derive(Debug, Clone)]
pub struct SubdomainState {
    /// Total flux per face, oriented along +x or +y.
    pub face_fluxes: Vec<f64>,
    pub cell_pressures: Vec<f64>,
    /// Compatibility multiplier; present only on interior subdomains.
    pub r: Option<f64>,
}

impl SubdomainState {
    pub fn zeros(local: &LocalSystem) -> Self {
        SubdomainState {
            face_fluxes: vec![0.0; local.grid.faces.len()],
            cell_pressures: vec![0.0; local.grid.cell_count()],
            r: if local.s_dim == 1 { Some(0.0) } else { None },
        }
    }

    /// Net outflow of cell (i, j): signed sum of its face fluxes.
    pub fn net_outflow(&self, grid: &SubdomainGrid, i: usize, j: usize) -> f64 {
        grid.cell_faces(i, j)
            .iter()
            .map(|&(fid, sign)| sign * self.face_fluxes[fid])
            .sum()
    }

    pub fn axpy(&mut self, alpha: f64, other: &SubdomainState) {
        for (a, b) in self.face_fluxes.iter_mut().zip(&other.face_fluxes) {
            *a += alpha * b;
        }
        for (a, b) in self.cell_pressures.iter_mut().zip(&other.cell_pressures) {
            *a += alpha * b;
        }
        if let (Some(ra), Some(rb)) = (self.r.as_mut(), other.r) {
            *ra += alpha * rb;
        }
    }
}

/// Assembles transmissibilities and the factored pressure system.
///
/// `conductivity` is the diagonal tensor field (kx, ky) sampled at cell
/// centers; harmonic averaging of the directional half-cell resistances
/// gives the interior transmissibilities, boundary and trace faces use the
/// half-cell distance.
pub fn assemble_local(
    grid: &SubdomainGrid,
    conductivity: &dyn Fn(f64, f64) -> (f64, f64),
) -> Result<LocalSystem> {
    let n = grid.cell_count();
    let mut kx = vec![0.0; n];
    let mut ky = vec![0.0; n];
    for i in 0..grid.nx {
        for j in 0..grid.ny {
            let (x, y) = grid.cell_center(i, j);
            let (a, b) = conductivity(x, y);
            if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
                return Err(Error::Parameter(format!(
                    "conductivity must be positive, got ({a}, {b}) at ({x}, {y})"
                )));
            }
            let c = grid.cell_id(i, j);
            kx[c] = a;
            ky[c] = b;
        }
    }

    let mut trans = vec![0.0; grid.faces.len()];
    let mut dirichlet_faces = Vec::new();
    for (fid, face) in grid.faces.iter().enumerate() {
        let (half, k) = match face.axis {
            crate::geometry::Axis::X => (0.5 * grid.dx, &kx),
            crate::geometry::Axis::Y => (0.5 * grid.dy, &ky),
        };
        trans[fid] = match face.kind {
            FaceKind::Interior { neg, pos } => face.length / (half / k[neg] + half / k[pos]),
            FaceKind::Dirichlet { cell, .. } => {
                dirichlet_faces.push(fid);
                k[cell] * face.length / half
            }
            FaceKind::Trace { cell, .. } => k[cell] * face.length / half,
        };
    }
    let face_weight: Vec<f64> = trans.iter().map(|t| 1.0 / t).collect();

    let s_dim = if dirichlet_faces.is_empty() { 1 } else { 0 };
    let cell_volume = grid.cell_volume();
    let volume = cell_volume * n as f64;

    // eliminated pressure matrix; grounded (last cell removed) when the
    // subdomain is pure Neumann
    let dim = if s_dim == 1 { n - 1 } else { n };
    let mut band = BandMatrix::zeros(dim, grid.bandwidth().min(dim.saturating_sub(1)));
    for (fid, face) in grid.faces.iter().enumerate() {
        match face.kind {
            FaceKind::Interior { neg, pos } => {
                let t = trans[fid];
                if neg < dim {
                    band.add(neg, neg, t);
                }
                if pos < dim {
                    band.add(pos, pos, t);
                }
                if neg < dim && pos < dim {
                    band.add(neg.max(pos), neg.min(pos), -t);
                }
            }
            FaceKind::Dirichlet { cell, .. } => {
                band.add(cell, cell, trans[fid]);
            }
            FaceKind::Trace { .. } => {}
        }
    }
    let chol = band.factor().map_err(|e| Error::SingularLocal {
        subdomain: grid.subdomain_id,
        detail: e.to_string(),
    })?;

    Ok(LocalSystem {
        subdomain_id: grid.subdomain_id,
        grid: grid.clone(),
        face_weight,
        transmissibility: trans,
        dirichlet_faces,
        s_dim,
        cell_volume,
        volume,
        chol,
    })
}

impl LocalSystem {
    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    /// Number of trace faces, flattened over incident interfaces.
    pub fn trace_len(&self) -> usize {
        self.grid.traces.iter().map(|t| t.faces.len()).sum()
    }

    /// View of the eliminated SPD cell-pressure operator.
    pub fn eliminate_to_pressure_system(&self) -> PressureSystem<'_> {
        PressureSystem { local: self }
    }

    /// Solves the local Neumann problem.
    ///
    /// `trace_flux` holds outward normal densities on the trace faces,
    /// flattened in the order of `grid.traces`; `source` is the integrated
    /// source per cell; `dirichlet` gives boundary pressure values per
    /// entry of `dirichlet_faces`. Prescribed trace fluxes are reproduced
    /// exactly, each cell balances `source + r * volume`, and on interior
    /// subdomains the pressure has zero mean with the multiplier
    /// `r = (total trace outflow - total source) / |Omega_i|`.
    pub fn solve_neumann(
        &self,
        trace_flux: &[f64],
        source: &[f64],
        dirichlet: &[f64],
    ) -> Result<SubdomainState> {
        let n = self.grid.cell_count();
        assert_eq!(trace_flux.len(), self.trace_len(), "trace flux length");
        assert_eq!(source.len(), n, "source length");
        assert_eq!(dirichlet.len(), self.dirichlet_faces.len(), "dirichlet length");

        // stored (+axis oriented) total fluxes on trace faces
        let mut trace_stored = vec![0.0; self.grid.faces.len()];
        let mut off = 0;
        for set in &self.grid.traces {
            for (k, &fid) in set.faces.iter().enumerate() {
                let len = self.grid.faces[fid].length;
                trace_stored[fid] = trace_flux[off + k] * len * set.outward;
            }
            off += set.faces.len();
        }
        let mut dir_val = vec![0.0; self.grid.faces.len()];
        for (k, &fid) in self.dirichlet_faces.iter().enumerate() {
            dir_val[fid] = dirichlet[k];
        }

        // rhs: source - signed trace outflow + dirichlet transmission
        let mut b = source.to_vec();
        for i in 0..self.grid.nx {
            for j in 0..self.grid.ny {
                let c = self.grid.cell_id(i, j);
                for (fid, sign) in self.grid.cell_faces(i, j) {
                    match self.grid.faces[fid].kind {
                        FaceKind::Trace { .. } => b[c] -= sign * trace_stored[fid],
                        FaceKind::Dirichlet { .. } => {
                            b[c] += self.transmissibility[fid] * dir_val[fid]
                        }
                        FaceKind::Interior { .. } => {}
                    }
                }
            }
        }

        let r = if self.s_dim == 1 {
            // compatibility fixes the multiplier, then the constraint row
            // (zero mean) fixes the constant; this reproduces the exact
            // solution of the bordered saddle system
            let r = -b.iter().sum::<f64>() / self.volume;
            for bc in b.iter_mut() {
                *bc += r * self.cell_volume;
            }
            Some(r)
        } else {
            None
        };

        let mut p = b;
        if self.s_dim == 1 {
            let pinned = p.pop().unwrap();
            debug_assert!(p.len() == self.chol.n());
            self.chol.solve_in_place(&mut p);
            p.push(0.0);
            let _ = pinned;
            let mean = p.iter().sum::<f64>() * self.cell_volume / self.volume;
            for v in p.iter_mut() {
                *v -= mean;
            }
        } else {
            self.chol.solve_in_place(&mut p);
        }

        // reconstruct fluxes
        let mut flux = vec![0.0; self.grid.faces.len()];
        for (fid, face) in self.grid.faces.iter().enumerate() {
            flux[fid] = match face.kind {
                FaceKind::Interior { neg, pos } => self.transmissibility[fid] * (p[neg] - p[pos]),
                FaceKind::Dirichlet { cell, edge } => {
                    edge.outward_sign() * self.transmissibility[fid] * (p[cell] - dir_val[fid])
                }
                FaceKind::Trace { .. } => trace_stored[fid],
            };
        }

        Ok(SubdomainState {
            face_fluxes: flux,
            cell_pressures: p,
            r,
        })
    }
}

/// Eliminated SPD cell-pressure operator of a local system.
pub struct PressureSystem<'a> {
    local: &'a LocalSystem,
}

impl PressureSystem<'_> {
    pub fn dim(&self) -> usize {
        self.local.grid.cell_count()
    }

    /// Applies the operator to a cell vector.
    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        let grid = &self.local.grid;
        let mut out = vec![0.0; grid.cell_count()];
        for (fid, face) in grid.faces.iter().enumerate() {
            let t = self.local.transmissibility[fid];
            match face.kind {
                FaceKind::Interior { neg, pos } => {
                    let d = t * (p[neg] - p[pos]);
                    out[neg] += d;
                    out[pos] -= d;
                }
                FaceKind::Dirichlet { cell, .. } => out[cell] += t * p[cell],
                FaceKind::Trace { .. } => {}
            }
        }
        out
    }

    /// Dense copy for desk-scale diagnostics.
    pub fn to_dense(&self) -> faer::Mat<f64> {
        let n = self.dim();
        let mut m = faer::Mat::<f64>::zeros(n, n);
        for c in 0..n {
            let mut e = vec![0.0; n];
            e[c] = 1.0;
            let col = self.apply(&e);
            for (r, v) in col.iter().enumerate() {
                m[(r, c)] = *v;
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_decomposition, DecompositionConfig, MortarElements, Rect};
    use crate::linalg;

    fn single(nx: usize, ny: usize, rect: Rect) -> SubdomainGrid {
        build_decomposition(&DecompositionConfig {
            domain: rect,
            split_x: vec![],
            split_y: vec![],
            resolutions: vec![(nx, ny)],
            mortar_elements: MortarElements::Uniform(1),
        })
        .unwrap()
        .subdomains
        .remove(0)
    }

    /// 3x3 layout on [0,3]^2 whose center subdomain is interior.
    fn with_interior(res: (usize, usize)) -> crate::geometry::DomainDecomposition {
        build_decomposition(&DecompositionConfig {
            domain: Rect::new(0.0, 0.0, 3.0, 3.0),
            split_x: vec![1.0, 2.0],
            split_y: vec![1.0, 2.0],
            resolutions: vec![res; 9],
            mortar_elements: MortarElements::Uniform(1),
        })
        .unwrap()
    }

    const UNIT_K: fn(f64, f64) -> (f64, f64) = |_, _| (1.0, 1.0);

    #[test]
    fn transmissibility_hand_values() {
        // unit square, 2x1 cells, K = 1: interior face L = 1, d = 0.25 each
        // side -> T = 2; left Dirichlet face uses the half-cell distance
        // 0.25 -> T = 4
        let grid = single(2, 1, Rect::new(0.0, 0.0, 1.0, 1.0));
        let local = assemble_local(&grid, &UNIT_K).unwrap();
        let mut interior_t = None;
        let mut left_t = None;
        for (fid, face) in grid.faces.iter().enumerate() {
            match face.kind {
                FaceKind::Interior { .. } => interior_t = Some(local.transmissibility[fid]),
                FaceKind::Dirichlet { edge, .. } if edge == crate::geometry::Edge::Left => {
                    left_t = Some(local.transmissibility[fid])
                }
                _ => {}
            }
        }
        assert!((interior_t.unwrap() - 2.0).abs() < 1e-15);
        assert!((left_t.unwrap() - 4.0).abs() < 1e-15);
    }

    #[test]
    fn transmissibility_scales_linearly_in_k() {
        let grid = single(3, 4, Rect::new(0.0, 0.0, 1.0, 2.0));
        let base = assemble_local(&grid, &|x, y| (1.0 + x, 2.0 + y)).unwrap();
        let alpha = 3.7;
        let scaled = assemble_local(&grid, &move |x, y| (alpha * (1.0 + x), alpha * (2.0 + y)))
            .unwrap();
        for (a, b) in base
            .transmissibility
            .iter()
            .zip(&scaled.transmissibility)
        {
            assert!((b - alpha * a).abs() < 1e-12 * b.abs());
        }
    }

    #[test]
    fn nonpositive_k_rejected() {
        let grid = single(2, 2, Rect::new(0.0, 0.0, 1.0, 1.0));
        assert!(assemble_local(&grid, &|_, _| (0.0, 1.0)).is_err());
        assert!(assemble_local(&grid, &|x, _| (x - 0.4, 1.0)).is_err());
    }

    #[test]
    fn zero_data_gives_zero_state() {
        let grid = single(3, 5, Rect::new(0.0, 0.0, 1.0, 1.0));
        let local = assemble_local(&grid, &UNIT_K).unwrap();
        let st = local
            .solve_neumann(&[], &vec![0.0; 15], &vec![0.0; local.dirichlet_faces.len()])
            .unwrap();
        assert!(st.face_fluxes.iter().all(|f| f.abs() < 1e-14));
        assert!(st.cell_pressures.iter().all(|p| p.abs() < 1e-14));
        assert!(st.r.is_none());
    }

    #[test]
    fn interior_constant_outflow() {
        // interior unit-square subdomain with uniform outward density c:
        // r = 4c, every cell balances r * |cell|; on the symmetric 2x2
        // grid the discrete pressure is identically zero
        let dd = with_interior((2, 2));
        let grid = &dd.subdomains[4];
        let local = assemble_local(grid, &UNIT_K).unwrap();
        assert_eq!(local.s_dim, 1);
        let c = 0.8;
        let st = local
            .solve_neumann(&vec![c; local.trace_len()], &vec![0.0; 4], &[])
            .unwrap();
        let r = st.r.unwrap();
        assert!((r - 4.0 * c).abs() < 1e-12);
        for i in 0..2 {
            for j in 0..2 {
                let div = st.net_outflow(grid, i, j);
                assert!((div - 4.0 * c * local.cell_volume()).abs() < 1e-12);
            }
        }
        for p in &st.cell_pressures {
            assert!(p.abs() < 1e-12);
        }
    }

    #[test]
    fn interior_divergence_is_constant_on_any_grid() {
        let dd = with_interior((5, 4));
        let grid = &dd.subdomains[4];
        let local = assemble_local(grid, &UNIT_K).unwrap();
        // arbitrary trace data
        let tf: Vec<f64> = (0..local.trace_len())
            .map(|k| ((k * 7 + 1) as f64 * 0.41).sin())
            .collect();
        let st = local.solve_neumann(&tf, &vec![0.0; 20], &[]).unwrap();
        let lambda_bar = st.r.unwrap();
        for i in 0..5 {
            for j in 0..4 {
                let div = st.net_outflow(grid, i, j) / local.cell_volume();
                assert!((div - lambda_bar).abs() < 1e-11);
            }
        }
        // zero-mean pressure
        let mean: f64 = st.cell_pressures.iter().sum::<f64>() / 20.0;
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn pure_neumann_linear_profile() {
        // 2x1 cells, unit K: inflow 1 on the left, outflow 1 on the right
        // reproduces the linear pressure drop exactly: p = {0.25, -0.25},
        // interior face flux 1
        let dd = with_interior((2, 1));
        let grid = &dd.subdomains[4];
        let local = assemble_local(grid, &UNIT_K).unwrap();
        // trace order: interfaces sorted by id, i.e. left, bottom, right, top
        // for the center subdomain; left outward density -1, right +1
        let mut tf = vec![0.0; local.trace_len()];
        let mut off = 0;
        for set in &grid.traces {
            let iface = &dd.interfaces[set.interface];
            for k in 0..set.faces.len() {
                if iface.axis == crate::geometry::Axis::X {
                    // vertical interface: left edge has outward -1
                    tf[off + k] = if set.outward < 0.0 { -1.0 } else { 1.0 };
                }
            }
            off += set.faces.len();
        }
        let st = local.solve_neumann(&tf, &vec![0.0; 2], &[]).unwrap();
        assert!((st.r.unwrap()).abs() < 1e-13);
        let c0 = grid.cell_id(0, 0);
        let c1 = grid.cell_id(1, 0);
        assert!((st.cell_pressures[c0] - 0.25).abs() < 1e-12);
        assert!((st.cell_pressures[c1] + 0.25).abs() < 1e-12);
        let interior_flux: Vec<f64> = grid
            .faces
            .iter()
            .enumerate()
            .filter(|(_, f)| matches!(f.kind, FaceKind::Interior { .. }))
            .map(|(fid, _)| st.face_fluxes[fid])
            .collect();
        assert_eq!(interior_flux.len(), 1);
        assert!((interior_flux[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mass_balance_every_cell() {
        let grid = single(4, 3, Rect::new(0.0, 0.0, 2.0, 1.5));
        let local = assemble_local(&grid, &|x, y| (1.0 + 0.3 * x, 1.5 + 0.2 * y)).unwrap();
        let source: Vec<f64> = (0..12).map(|k| (k as f64 * 0.91).cos()).collect();
        let dir: Vec<f64> = (0..local.dirichlet_faces.len())
            .map(|k| (k as f64 * 0.37).sin())
            .collect();
        let st = local.solve_neumann(&[], &source, &dir).unwrap();
        let scale = source.iter().map(|s| s.abs()).fold(1.0, f64::max);
        for i in 0..4 {
            for j in 0..3 {
                let c = grid.cell_id(i, j);
                let defect = st.net_outflow(&grid, i, j) - source[c];
                assert!(defect.abs() < 1e-12 * scale, "cell ({i},{j}): {defect:e}");
            }
        }
    }

    #[test]
    fn linear_exactness_dirichlet() {
        // TPFA reproduces affine pressure exactly on uniform grids
        let grid = single(5, 7, Rect::new(0.0, 0.0, 1.0, 2.0));
        let local = assemble_local(&grid, &UNIT_K).unwrap();
        let p_exact = |x: f64, y: f64| 1.3 - 0.7 * x + 0.4 * y;
        let dir: Vec<f64> = local
            .dirichlet_faces
            .iter()
            .map(|&fid| {
                let (x, y) = grid.face_midpoint(fid);
                p_exact(x, y)
            })
            .collect();
        let st = local
            .solve_neumann(&[], &vec![0.0; grid.cell_count()], &dir)
            .unwrap();
        for i in 0..5 {
            for j in 0..7 {
                let (x, y) = grid.cell_center(i, j);
                let c = grid.cell_id(i, j);
                assert!((st.cell_pressures[c] - p_exact(x, y)).abs() < 1e-10);
            }
        }
        // fluxes match -grad p times face length
        for (fid, face) in grid.faces.iter().enumerate() {
            let expect = match face.axis {
                crate::geometry::Axis::X => 0.7 * face.length,
                crate::geometry::Axis::Y => -0.4 * face.length,
            };
            assert!((st.face_fluxes[fid] - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn pressure_operator_properties() {
        // Dirichlet case: SPD; pure Neumann: symmetric with constant kernel
        let grid = single(3, 3, Rect::new(0.0, 0.0, 1.0, 1.0));
        let local = assemble_local(&grid, &UNIT_K).unwrap();
        let sys = local.eliminate_to_pressure_system();
        let dense = sys.to_dense();
        let sym_err = linalg::fro_norm(&(&dense - &dense.transpose().to_owned()));
        assert!(sym_err < 1e-12 * linalg::fro_norm(&dense));
        let (min, _) = linalg::symmetric_eig_range(&dense).unwrap();
        assert!(min > 0.0);

        let dd = with_interior((3, 3));
        let local_n = assemble_local(&dd.subdomains[4], &UNIT_K).unwrap();
        let sys_n = local_n.eliminate_to_pressure_system();
        let ones = vec![1.0; 9];
        for v in sys_n.apply(&ones) {
            assert!(v.abs() < 1e-13);
        }
        let dense_n = sys_n.to_dense();
        let sym_err = linalg::fro_norm(&(&dense_n - &dense_n.transpose().to_owned()));
        assert!(sym_err < 1e-12 * linalg::fro_norm(&dense_n));
    }

}
