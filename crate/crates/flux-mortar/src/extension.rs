//! Discrete extension operators: projection of the mortar onto the trace
//! spaces followed by subdomain Neumann solves, plus the minimal-support
//! extension used by the interface reduction.

use crate::darcy_local::{LocalSystem, SubdomainState};
use crate::dd_solver::Assembly;
use crate::error::Result;
use crate::par;

/// Which interface projection feeds the extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Per-side L2 projection onto each trace space.
    Flat,
    /// Projection onto weakly continuous trace pairs.
    Sharp,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::Flat => "flat",
            Variant::Sharp => "sharp",
        }
    }
}

/// Mortar coefficients over all interfaces of an assembly.
#[derive(Debug, Clone)]
pub struct MortarFunction {
    pub coeffs: Vec<f64>,
}

impl MortarFunction {
    pub fn zeros(dim: usize) -> Self {
        MortarFunction {
            coeffs: vec![0.0; dim],
        }
    }
}

/// Extension output: one state per subdomain, in subdomain-id order.
#[derive(Debug, Clone)]
pub struct ExtensionResult {
    pub states: Vec<SubdomainState>,
    pub variant: Variant,
}

/// Projects mortar coefficients onto every subdomain's flattened trace
/// layout (outward normal densities, ordered like `grid.traces`).
pub fn project_traces(
    assembly: &Assembly,
    lambda: &[f64],
    variant: Variant,
) -> Result<Vec<Vec<f64>>> {
    let mut per_sd: Vec<Vec<f64>> = assembly
        .locals
        .iter()
        .map(|l| Vec::with_capacity(l.trace_len()))
        .collect();
    // trace sets are sorted by interface id within each subdomain, so
    // appending interface by interface in subdomain-trace order matches
    // the flattened layout only if we walk each subdomain's own order;
    // gather per (subdomain, interface) first
    let mut chunks: Vec<Vec<Option<Vec<f64>>>> = assembly
        .locals
        .iter()
        .map(|l| vec![None; l.grid.traces.len()])
        .collect();
    for (cid, coupling) in assembly.couplings.iter().enumerate() {
        let lam = assembly.interface_slice(lambda, cid);
        for side in 0..2 {
            let proj = coupling.projection(variant, side)?;
            let sd = coupling.sides[side].subdomain;
            let nf = coupling.sides[side].face_count();
            let mut psi = vec![0.0; nf];
            for f in 0..nf {
                let mut acc = 0.0;
                for k in 0..lam.len() {
                    acc += proj[(f, k)] * lam[k];
                }
                psi[f] = acc;
            }
            let pos = assembly.locals[sd]
                .grid
                .traces
                .iter()
                .position(|t| t.interface == coupling.interface)
                .expect("coupling side matches a trace set");
            chunks[sd][pos] = Some(psi);
        }
    }
    for (sd, sets) in chunks.into_iter().enumerate() {
        for set in sets {
            per_sd[sd].extend(set.expect("every trace set covered by a coupling"));
        }
    }
    Ok(per_sd)
}

/// Extension by subdomain Neumann solves: trace data is the projected
/// mortar, sources vanish, boundary pressure is zero.
pub fn extend(assembly: &Assembly, lambda: &[f64], variant: Variant) -> Result<ExtensionResult> {
    let traces = project_traces(assembly, lambda, variant)?;
    let states = par::try_map_indexed(assembly.locals.len(), |sd| {
        let local = &assembly.locals[sd];
        local.solve_neumann(
            &traces[sd],
            &vec![0.0; local.grid.cell_count()],
            &vec![0.0; local.dirichlet_faces.len()],
        )
    })?;
    Ok(ExtensionResult { states, variant })
}

/// Minimal-support extension: trace faces carry the projected mortar, all
/// other degrees of freedom stay zero.
pub fn extend_minimal(
    assembly: &Assembly,
    mu: &[f64],
    variant: Variant,
) -> Result<ExtensionResult> {
    let traces = project_traces(assembly, mu, variant)?;
    let states = assembly
        .locals
        .iter()
        .enumerate()
        .map(|(sd, local)| {
            let mut st = SubdomainState::zeros(local);
            st.r = None;
            apply_trace_fluxes(local, &traces[sd], &mut st);
            st
        })
        .collect();
    Ok(ExtensionResult { states, variant })
}

/// Writes outward trace densities into the stored flux layout of a state.
pub fn apply_trace_fluxes(local: &LocalSystem, trace: &[f64], state: &mut SubdomainState) {
    let mut off = 0;
    for set in &local.grid.traces {
        for (k, &fid) in set.faces.iter().enumerate() {
            let len = local.grid.faces[fid].length;
            state.face_fluxes[fid] = trace[off + k] * len * set.outward;
        }
        off += set.faces.len();
    }
}

/// Weak flux jump of a velocity field against every mortar basis function:
/// sum over sides of (nu_i . u, mu_k) on each interface. Entries are
/// normalized by the L2 norm of the basis function.
pub fn weak_flux_jump(assembly: &Assembly, states: &[SubdomainState]) -> Vec<f64> {
    let mut out = Vec::with_capacity(assembly.lambda_dim());
    for coupling in &assembly.couplings {
        let ndof = coupling.space.dof_count();
        let mut jump = vec![0.0; ndof];
        for side in &coupling.sides {
            let local = &assembly.locals[side.subdomain];
            let set = local
                .grid
                .traces
                .iter()
                .find(|t| t.interface == coupling.interface)
                .expect("incident trace set");
            for (f, &fid) in set.faces.iter().enumerate() {
                // outward normal density on this face
                let dens =
                    states[side.subdomain].face_fluxes[fid] / side.face_lengths[f] * side.outward;
                for k in 0..ndof {
                    jump[k] += side.g[(f, k)] * dens;
                }
            }
        }
        for k in 0..ndof {
            let norm2 = coupling.gram[(k, k)];
            out.push(jump[k] / norm2.sqrt());
        }
    }
    out
}

/// Discrete flux norm sqrt(a(u, u) + ||div u||^2); the stability monitor
/// for extensions.
pub fn flux_div_norm(assembly: &Assembly, states: &[SubdomainState]) -> f64 {
    let mut a = 0.0;
    let mut d = 0.0;
    for (local, st) in assembly.locals.iter().zip(states) {
        for (fid, w) in local.face_weight.iter().enumerate() {
            a += w * st.face_fluxes[fid] * st.face_fluxes[fid];
        }
        let vol = local.cell_volume();
        for i in 0..local.grid.nx {
            for j in 0..local.grid.ny {
                let div = st.net_outflow(&local.grid, i, j) / vol;
                d += div * div * vol;
            }
        }
    }
    (a + d).sqrt()
}

/// a-form of two flux fields: sum of m_F u_F v_F over all faces.
pub fn a_form(assembly: &Assembly, u: &[SubdomainState], v: &[SubdomainState]) -> f64 {
    let mut acc = 0.0;
    for (sd, local) in assembly.locals.iter().enumerate() {
        for (fid, w) in local.face_weight.iter().enumerate() {
            acc += w * u[sd].face_fluxes[fid] * v[sd].face_fluxes[fid];
        }
    }
    acc
}
