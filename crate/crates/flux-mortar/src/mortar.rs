//! Mortar spaces on interfaces, the two interface projections, and the
//! mortar-condition diagnostic.
//!
//! A mortar function lives on the interface grid and models the normal
//! flux in the direction of the interface normal; its side-signed views
//! are +lambda on the smaller-id subdomain and -lambda on the other one.
//! The flat projection is the per-side L2 projection onto the trace space
//! (face averages). The sharp projection targets the weakly continuous
//! trace pairs and is computed per interface from a saddle system whose
//! Schur complement also yields the mortar-condition constant.

use faer::prelude::*;
use faer::Side;

use crate::error::{Error, Result};
use crate::extension::Variant;
use crate::geometry::{DomainDecomposition, Interface};
use crate::linalg;

/// 3-point Gauss-Legendre rule on [0, 1]; exact through degree 5.
pub const GAUSS3: [(f64, f64); 3] = [
    (0.112701665379258311, 0.277777777777777778),
    (0.5, 0.444444444444444444),
    (0.887298334620741689, 0.277777777777777778),
];

/// 2-point Gauss-Legendre rule on [0, 1]; exact through degree 3.
pub const GAUSS2: [(f64, f64); 2] = [
    (0.211324865405187118, 0.5),
    (0.788675134594812882, 0.5),
];

/// Polynomial order of the mortar space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MortarOrder {
    /// Piecewise constants.
    P0,
    /// Continuous piecewise linears within each interface; no coupling
    /// across interface junctions.
    P1,
}

impl MortarOrder {
    pub fn from_int(k: u8) -> Result<Self> {
        match k {
            0 => Ok(MortarOrder::P0),
            1 => Ok(MortarOrder::P1),
            _ => Err(Error::Parameter(format!("unsupported mortar order {k}"))),
        }
    }

    pub fn as_int(self) -> u8 {
        match self {
            MortarOrder::P0 => 0,
            MortarOrder::P1 => 1,
        }
    }
}

/// Polynomial space on the mortar grid of one interface.
#[derive(Debug, Clone)]
pub struct MortarSpace {
    pub interface: usize,
    pub order: MortarOrder,
    pub elements: usize,
    pub s0: f64,
    pub s1: f64,
}

impl MortarSpace {
    pub fn new(iface: &Interface, order: MortarOrder) -> Self {
        MortarSpace {
            interface: iface.id,
            order,
            elements: iface.mortar_elements,
            s0: iface.s0,
            s1: iface.s1,
        }
    }

    pub fn h(&self) -> f64 {
        (self.s1 - self.s0) / self.elements as f64
    }

    pub fn dof_count(&self) -> usize {
        match self.order {
            MortarOrder::P0 => self.elements,
            MortarOrder::P1 => self.elements + 1,
        }
    }

    /// Breakpoints of the mortar partition.
    pub fn nodes(&self) -> Vec<f64> {
        let h = self.h();
        (0..=self.elements).map(|k| self.s0 + k as f64 * h).collect()
    }

    /// Value of basis function `k` at arclength `s` (zero outside support).
    pub fn basis(&self, k: usize, s: f64) -> f64 {
        let h = self.h();
        let t = (s - self.s0) / h;
        match self.order {
            MortarOrder::P0 => {
                let e = (t.floor() as isize).clamp(0, self.elements as isize - 1) as usize;
                if e == k {
                    1.0
                } else {
                    0.0
                }
            }
            MortarOrder::P1 => {
                let d = (t - k as f64).abs();
                if d >= 1.0 {
                    0.0
                } else {
                    1.0 - d
                }
            }
        }
    }

    /// Pointwise evaluation of a mortar function given its coefficients.
    pub fn evaluate(&self, coeffs: &[f64], s: f64) -> Result<f64> {
        debug_assert_eq!(coeffs.len(), self.dof_count());
        let len = self.s1 - self.s0;
        if s < self.s0 - 1e-12 * len || s > self.s1 + 1e-12 * len {
            return Err(Error::OutOfRange {
                s,
                s0: self.s0,
                s1: self.s1,
            });
        }
        let h = self.h();
        let t = ((s - self.s0) / h).clamp(0.0, self.elements as f64);
        let e = (t.floor() as usize).min(self.elements - 1);
        Ok(match self.order {
            MortarOrder::P0 => coeffs[e],
            MortarOrder::P1 => {
                let local = t - e as f64;
                coeffs[e] * (1.0 - local) + coeffs[e + 1] * local
            }
        })
    }

    /// Mass (Gram) matrix of the basis.
    pub fn gram(&self) -> Mat<f64> {
        let n = self.dof_count();
        let h = self.h();
        let mut g = Mat::<f64>::zeros(n, n);
        match self.order {
            MortarOrder::P0 => {
                for k in 0..n {
                    g[(k, k)] = h;
                }
            }
            MortarOrder::P1 => {
                for e in 0..self.elements {
                    g[(e, e)] += h / 3.0;
                    g[(e + 1, e + 1)] += h / 3.0;
                    g[(e, e + 1)] += h / 6.0;
                    g[(e + 1, e)] += h / 6.0;
                }
            }
        }
        g
    }
}

/// Pointwise mortar evaluation; thin wrapper kept for discoverability.
pub fn evaluate_mortar(space: &MortarSpace, coeffs: &[f64], points: &[f64]) -> Result<Vec<f64>> {
    points.iter().map(|&s| space.evaluate(coeffs, s)).collect()
}

/// Quadrature segment on the common refinement of the mortar partition
/// and one side's trace partition.
#[derive(Debug, Clone, Copy)]
pub struct Segment {
    pub a: f64,
    pub b: f64,
    pub face: usize,
    pub element: usize,
}

/// One subdomain side of an interface coupling.
#[derive(Debug, Clone)]
pub struct CouplingSide {
    pub subdomain: usize,
    /// +1 when the subdomain outward normal equals the interface normal.
    pub outward: f64,
    pub face_lengths: Vec<f64>,
    pub intervals: Vec<(f64, f64)>,
    /// Common-refinement segments for quadrature against the mortar basis.
    pub segments: Vec<Segment>,
    /// Face-by-dof moment matrix (mu_k, phi_face).
    pub g: Mat<f64>,
}

impl CouplingSide {
    pub fn face_count(&self) -> usize {
        self.face_lengths.len()
    }

    /// L2 moments (f, phi_face) of a scalar function on the interface.
    pub fn moments(&self, f: &dyn Fn(f64) -> f64) -> Vec<f64> {
        let mut m = vec![0.0; self.face_count()];
        for seg in &self.segments {
            let len = seg.b - seg.a;
            for (x, w) in GAUSS3 {
                m[seg.face] += w * len * f(seg.a + x * len);
            }
        }
        m
    }
}

/// Per-interface coupling data: mortar space, both sides, projection
/// operators, and the factored sharp Schur complement (when nonsingular).
pub struct InterfaceCoupling {
    pub interface: usize,
    pub space: MortarSpace,
    /// sides[0] is the smaller-id subdomain (lambda enters with +1 there),
    /// sides[1] the other one (lambda enters with -1).
    pub sides: [CouplingSide; 2],
    pub gram: Mat<f64>,
    /// Schur complement S = sum_s G_s^T M_s^{-1} G_s of the sharp saddle
    /// system; singular exactly when the mortar condition fails.
    pub schur: Mat<f64>,
    schur_llt: Option<faer::linalg::solvers::Llt<f64>>,
    /// Signed coefficient-to-trace maps (outward normal densities) for the
    /// flat variant, sides [0, 1].
    flat: [Mat<f64>; 2],
    /// Same for the sharp variant; absent when the Schur complement is
    /// singular.
    sharp: Option<[Mat<f64>; 2]>,
}

fn side_segments(intervals: &[(f64, f64)], mortar_nodes: &[f64]) -> Vec<Segment> {
    // merge face breakpoints and mortar nodes into overlap segments
    let mut segs = Vec::new();
    for (face, &(a, b)) in intervals.iter().enumerate() {
        let mut cuts = vec![a];
        for &x in mortar_nodes {
            if x > a + 1e-14 && x < b - 1e-14 {
                cuts.push(x);
            }
        }
        cuts.push(b);
        for w in cuts.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let h = mortar_nodes[1] - mortar_nodes[0];
            let e = (((mid - mortar_nodes[0]) / h).floor() as isize)
                .clamp(0, mortar_nodes.len() as isize - 2) as usize;
            segs.push(Segment {
                a: w[0],
                b: w[1],
                face,
                element: e,
            });
        }
    }
    segs
}

impl InterfaceCoupling {
    /// Assembles the coupling for one interface of the decomposition.
    pub fn build(dd: &DomainDecomposition, interface: usize, order: MortarOrder) -> Result<Self> {
        let iface = &dd.interfaces[interface];
        let space = MortarSpace::new(iface, order);
        let mortar_nodes = space.nodes();
        let mut sides = Vec::with_capacity(2);
        for sd in [iface.left, iface.right] {
            let set = dd.subdomains[sd].trace_partition(interface)?;
            let face_lengths: Vec<f64> = set.intervals.iter().map(|(a, b)| b - a).collect();
            let segments = side_segments(&set.intervals, &mortar_nodes);
            let ndof = space.dof_count();
            let mut g = Mat::<f64>::zeros(face_lengths.len(), ndof);
            for seg in &segments {
                let len = seg.b - seg.a;
                for (x, w) in GAUSS3 {
                    let s = seg.a + x * len;
                    match order {
                        MortarOrder::P0 => g[(seg.face, seg.element)] += w * len,
                        MortarOrder::P1 => {
                            let h = space.h();
                            let local = (s - mortar_nodes[seg.element]) / h;
                            g[(seg.face, seg.element)] += w * len * (1.0 - local);
                            g[(seg.face, seg.element + 1)] += w * len * local;
                        }
                    }
                }
            }
            sides.push(CouplingSide {
                subdomain: sd,
                outward: set.outward,
                face_lengths,
                intervals: set.intervals.clone(),
                segments,
                g,
            });
        }
        let sides: [CouplingSide; 2] = sides.try_into().unwrap();
        let gram = space.gram();
        let ndof = space.dof_count();

        // S = sum over sides of G^T M^{-1} G with diagonal face mass M
        let mut schur = Mat::<f64>::zeros(ndof, ndof);
        for side in &sides {
            for f in 0..side.face_count() {
                let inv_len = 1.0 / side.face_lengths[f];
                for k in 0..ndof {
                    let gfk = side.g[(f, k)];
                    if gfk == 0.0 {
                        continue;
                    }
                    for l in 0..ndof {
                        schur[(k, l)] += inv_len * gfk * side.g[(f, l)];
                    }
                }
            }
        }
        let schur_llt = schur.llt(Side::Lower).ok();

        // flat maps: psi_side = sign_side * M^{-1} G lambda
        let flat = [
            scaled_projection(&sides[0], 1.0),
            scaled_projection(&sides[1], -1.0),
        ];

        // sharp maps: chi = S^{-1} D lambda with
        // D = G_0^T M_0^{-1} G_0 - G_1^T M_1^{-1} G_1,
        // psi_0 = M_0^{-1} G_0 (lambda - chi), psi_1 = M_1^{-1} G_1 (-lambda - chi)
        let sharp = schur_llt.as_ref().map(|llt| {
            let mut d = Mat::<f64>::zeros(ndof, ndof);
            for (sgn, side) in [(1.0, &sides[0]), (-1.0, &sides[1])] {
                for f in 0..side.face_count() {
                    let inv_len = 1.0 / side.face_lengths[f];
                    for k in 0..ndof {
                        let gfk = side.g[(f, k)];
                        if gfk == 0.0 {
                            continue;
                        }
                        for l in 0..ndof {
                            d[(k, l)] += sgn * inv_len * gfk * side.g[(f, l)];
                        }
                    }
                }
            }
            let sinv_d = llt.solve(&d);
            let eye = Mat::<f64>::from_fn(ndof, ndof, |i, j| if i == j { 1.0 } else { 0.0 });
            let m0 = scaled_projection(&sides[0], 1.0);
            let m1 = scaled_projection(&sides[1], 1.0);
            [&m0 * (&eye - &sinv_d), &m1 * (-&eye - &sinv_d)]
        });

        Ok(InterfaceCoupling {
            interface,
            space,
            sides,
            gram,
            schur,
            schur_llt,
            flat,
            sharp,
        })
    }

    /// Side-signed coefficient-to-trace map of the given variant.
    ///
    /// Applied to mortar coefficients it yields the outward normal trace
    /// densities on the side's faces.
    pub fn projection(&self, variant: Variant, side: usize) -> Result<&Mat<f64>> {
        match variant {
            Variant::Flat => Ok(&self.flat[side]),
            Variant::Sharp => self
                .sharp
                .as_ref()
                .map(|m| &m[side])
                .ok_or(Error::MortarCondition {
                    interface: self.interface,
                }),
        }
    }

    /// Flat projection of an arbitrary integrable function: per-side face
    /// averages of the side-signed view of `f`.
    pub fn project_flat(&self, side: usize, f: &dyn Fn(f64) -> f64) -> TraceFunction {
        let sgn = if side == 0 { 1.0 } else { -1.0 };
        let s = &self.sides[side];
        let m = s.moments(f);
        let values = m
            .iter()
            .zip(&s.face_lengths)
            .map(|(v, l)| sgn * v / l)
            .collect();
        TraceFunction {
            interface: self.interface,
            subdomain: s.subdomain,
            values,
        }
    }

    /// Sharp projection of an arbitrary integrable function.
    ///
    /// Returns the two side traces (outward normal densities) and the
    /// auxiliary mortar multiplier of the underlying saddle system.
    pub fn project_sharp(
        &self,
        f: &dyn Fn(f64) -> f64,
    ) -> Result<(TraceFunction, TraceFunction, Vec<f64>)> {
        let llt = self.schur_llt.as_ref().ok_or(Error::MortarCondition {
            interface: self.interface,
        })?;
        let m0 = self.sides[0].moments(f);
        let m1 = self.sides[1].moments(f);
        let ndof = self.space.dof_count();
        // rhs = G_0^T M_0^{-1} f_0 - G_1^T M_1^{-1} f_1
        let mut rhs = vec![0.0; ndof];
        for (sgn, side, m) in [(1.0, &self.sides[0], &m0), (-1.0, &self.sides[1], &m1)] {
            for fidx in 0..side.face_count() {
                let v = sgn * m[fidx] / side.face_lengths[fidx];
                for k in 0..ndof {
                    rhs[k] += side.g[(fidx, k)] * v;
                }
            }
        }
        let chi = linalg::mat_col_to_vec(&llt.solve(&linalg::col_mat(&rhs)), 0);
        let mut out = Vec::with_capacity(2);
        for (sgn, side, m) in [(1.0, &self.sides[0], &m0), (-1.0, &self.sides[1], &m1)] {
            let values: Vec<f64> = (0..side.face_count())
                .map(|fidx| {
                    let mut gchi = 0.0;
                    for k in 0..ndof {
                        gchi += side.g[(fidx, k)] * chi[k];
                    }
                    (sgn * m[fidx] - gchi) / side.face_lengths[fidx]
                })
                .collect();
            out.push(TraceFunction {
                interface: self.interface,
                subdomain: side.subdomain,
                values,
            });
        }
        let psi1 = out.pop().unwrap();
        let psi0 = out.pop().unwrap();
        Ok((psi0, psi1, chi))
    }

    /// Largest constant c with ||mu||^2 <= c^{-2} (||Q_0 mu||^2 + ||Q_1 mu||^2)
    /// over the mortar space; zero signals a violated mortar condition.
    pub fn check_mortar_condition(&self, variant: Variant) -> Result<f64> {
        let ndof = self.space.dof_count();
        let s = match variant {
            Variant::Flat => self.schur.clone(),
            Variant::Sharp => {
                let maps = match &self.sharp {
                    Some(m) => m,
                    None => return Ok(0.0),
                };
                let mut s = Mat::<f64>::zeros(ndof, ndof);
                for (side, w) in self.sides.iter().zip(maps.iter()) {
                    // W^T M W with diagonal face mass
                    for f in 0..side.face_count() {
                        let len = side.face_lengths[f];
                        for k in 0..ndof {
                            let wfk = w[(f, k)];
                            if wfk == 0.0 {
                                continue;
                            }
                            for l in 0..ndof {
                                s[(k, l)] += len * wfk * w[(f, l)];
                            }
                        }
                    }
                }
                s
            }
        };
        let min = linalg::min_generalized_eigenvalue(&s, &self.gram)?;
        Ok(min.max(0.0).sqrt())
    }
}

fn scaled_projection(side: &CouplingSide, sign: f64) -> Mat<f64> {
    Mat::from_fn(side.face_count(), side.g.ncols(), |f, k| {
        sign * side.g[(f, k)] / side.face_lengths[f]
    })
}

/// Piecewise-constant normal trace (outward density) on the trace faces of
/// one subdomain side of one interface.
#[derive(Debug, Clone)]
pub struct TraceFunction {
    pub interface: usize,
    pub subdomain: usize,
    pub values: Vec<f64>,
}
