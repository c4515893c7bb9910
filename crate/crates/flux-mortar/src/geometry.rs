//! Decomposed computational domain: subdomain tensor grids, oriented
//! interfaces with mortar partitions, and trace-face bookkeeping.
//!
//! The domain is an axis-aligned rectangle cut by full split lines into a
//! grid of rectangular subdomains, numbered row-major from the bottom-left
//! box. Every interface stores the ordered pair (i, j) with i < j and the
//! unit normal pointing from subdomain i into subdomain j; for vertical
//! interfaces that is +x, for horizontal ones +y. Face fluxes throughout
//! the crate are oriented along +x or +y, which on an interface coincides
//! with the interface normal on both sides.

use crate::error::{Error, Result};

/// Relative tolerance for geometric coincidence checks.
const GEOM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Rect { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// Axis a face or interface normal is aligned with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// Edge of a subdomain rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    Left,
    Right,
    Bottom,
    Top,
}

impl Edge {
    /// Sign of the outward normal along the face orientation axis.
    pub fn outward_sign(self) -> f64 {
        match self {
            Edge::Left | Edge::Bottom => -1.0,
            Edge::Right | Edge::Top => 1.0,
        }
    }
}

/// Mortar element counts, one entry per interface or a uniform count.
#[derive(Debug, Clone)]
pub enum MortarElements {
    Uniform(usize),
    PerInterface(Vec<usize>),
}

/// Everything needed to build (and rebuild, when refining) a decomposition.
#[derive(Debug, Clone)]
pub struct DecompositionConfig {
    pub domain: Rect,
    pub split_x: Vec<f64>,
    pub split_y: Vec<f64>,
    /// Cells per axis for each subdomain, row-major from the bottom-left box.
    pub resolutions: Vec<(usize, usize)>,
    pub mortar_elements: MortarElements,
}

/// Oriented interface between two subdomains.
#[derive(Debug, Clone)]
pub struct Interface {
    pub id: usize,
    /// Subdomain the normal points away from (smaller id).
    pub left: usize,
    /// Subdomain the normal points into.
    pub right: usize,
    /// Normal axis: `X` for vertical segments, `Y` for horizontal ones.
    pub axis: Axis,
    /// Coordinate of the segment along the normal axis.
    pub pos: f64,
    /// Tangential extent; arclength runs from `s0` to `s1`.
    pub s0: f64,
    pub s1: f64,
    /// Mortar elements on this interface at the current refinement level.
    pub mortar_elements: usize,
}

impl Interface {
    pub fn pair(&self) -> (usize, usize) {
        (self.left, self.right)
    }

    pub fn length(&self) -> f64 {
        self.s1 - self.s0
    }

    pub fn normal(&self) -> (f64, f64) {
        match self.axis {
            Axis::X => (1.0, 0.0),
            Axis::Y => (0.0, 1.0),
        }
    }

    /// Physical point at arclength `s`.
    pub fn point_at(&self, s: f64) -> (f64, f64) {
        match self.axis {
            Axis::X => (self.pos, s),
            Axis::Y => (s, self.pos),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum FaceKind {
    /// Between two cells of the same subdomain (neg on the -axis side).
    Interior { neg: usize, pos: usize },
    /// On the outer boundary; pressure data enters naturally here.
    Dirichlet { cell: usize, edge: Edge },
    /// On an interface; the flux here is an essential unknown.
    Trace {
        cell: usize,
        edge: Edge,
        interface: usize,
        ordinal: usize,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct Face {
    pub axis: Axis,
    pub length: f64,
    pub kind: FaceKind,
}

/// Ordered trace faces of one subdomain on one interface.
#[derive(Debug, Clone)]
pub struct TraceSet {
    pub interface: usize,
    /// Face ids ordered by arclength.
    pub faces: Vec<usize>,
    /// Arclength interval covered by each face.
    pub intervals: Vec<(f64, f64)>,
    /// +1 when the subdomain outward normal equals the interface normal.
    pub outward: f64,
}

/// Uniform tensor grid over one subdomain rectangle.
///
/// Cells are numbered with the shorter axis fastest so the eliminated
/// pressure matrix has bandwidth min(nx, ny).
#[derive(Debug, Clone)]
pub struct SubdomainGrid {
    pub subdomain_id: usize,
    pub rect: Rect,
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    x_fastest: bool,
    pub faces: Vec<Face>,
    pub traces: Vec<TraceSet>,
}

impl SubdomainGrid {
    fn build(
        subdomain_id: usize,
        rect: Rect,
        nx: usize,
        ny: usize,
        edge_interfaces: [Option<usize>; 4], // left, right, bottom, top
    ) -> Self {
        let dx = rect.width() / nx as f64;
        let dy = rect.height() / ny as f64;
        let x_fastest = nx <= ny;
        let nxf = (nx + 1) * ny; // x-face count
        let mut faces = Vec::with_capacity(nxf + (ny + 1) * nx);
        let cell = |i: usize, j: usize| {
            if x_fastest {
                j * nx + i
            } else {
                i * ny + j
            }
        };
        let mut traces: Vec<TraceSet> = Vec::new();
        let mut push_trace = |iface: usize, face: usize, s_lo: f64, s_hi: f64, edge: Edge| {
            let set = match traces.iter_mut().find(|t| t.interface == iface) {
                Some(set) => set,
                None => {
                    traces.push(TraceSet {
                        interface: iface,
                        faces: Vec::new(),
                        intervals: Vec::new(),
                        outward: edge.outward_sign(),
                    });
                    traces.last_mut().unwrap()
                }
            };
            set.faces.push(face);
            set.intervals.push((s_lo, s_hi));
        };

        // x-faces: vertical line l in 0..=nx, row j in 0..ny
        for l in 0..=nx {
            for j in 0..ny {
                let fid = l * ny + j;
                let kind = if l == 0 {
                    let c = cell(0, j);
                    match edge_interfaces[0] {
                        Some(iface) => {
                            let s_lo = rect.y0 + j as f64 * dy;
                            push_trace(iface, fid, s_lo, s_lo + dy, Edge::Left);
                            FaceKind::Trace {
                                cell: c,
                                edge: Edge::Left,
                                interface: iface,
                                ordinal: j,
                            }
                        }
                        None => FaceKind::Dirichlet {
                            cell: c,
                            edge: Edge::Left,
                        },
                    }
                } else if l == nx {
                    let c = cell(nx - 1, j);
                    match edge_interfaces[1] {
                        Some(iface) => {
                            let s_lo = rect.y0 + j as f64 * dy;
                            push_trace(iface, fid, s_lo, s_lo + dy, Edge::Right);
                            FaceKind::Trace {
                                cell: c,
                                edge: Edge::Right,
                                interface: iface,
                                ordinal: j,
                            }
                        }
                        None => FaceKind::Dirichlet {
                            cell: c,
                            edge: Edge::Right,
                        },
                    }
                } else {
                    FaceKind::Interior {
                        neg: cell(l - 1, j),
                        pos: cell(l, j),
                    }
                };
                faces.push(Face {
                    axis: Axis::X,
                    length: dy,
                    kind,
                });
            }
        }
        // y-faces: horizontal line m in 0..=ny, column i in 0..nx
        for m in 0..=ny {
            for i in 0..nx {
                let fid = nxf + m * nx + i;
                let kind = if m == 0 {
                    let c = cell(i, 0);
                    match edge_interfaces[2] {
                        Some(iface) => {
                            let s_lo = rect.x0 + i as f64 * dx;
                            push_trace(iface, fid, s_lo, s_lo + dx, Edge::Bottom);
                            FaceKind::Trace {
                                cell: c,
                                edge: Edge::Bottom,
                                interface: iface,
                                ordinal: i,
                            }
                        }
                        None => FaceKind::Dirichlet {
                            cell: c,
                            edge: Edge::Bottom,
                        },
                    }
                } else if m == ny {
                    let c = cell(i, ny - 1);
                    match edge_interfaces[3] {
                        Some(iface) => {
                            let s_lo = rect.x0 + i as f64 * dx;
                            push_trace(iface, fid, s_lo, s_lo + dx, Edge::Top);
                            FaceKind::Trace {
                                cell: c,
                                edge: Edge::Top,
                                interface: iface,
                                ordinal: i,
                            }
                        }
                        None => FaceKind::Dirichlet {
                            cell: c,
                            edge: Edge::Top,
                        },
                    }
                } else {
                    FaceKind::Interior {
                        neg: cell(i, m - 1),
                        pos: cell(i, m),
                    }
                };
                faces.push(Face {
                    axis: Axis::Y,
                    length: dx,
                    kind,
                });
            }
        }
        // traces sorted by interface id for a stable flattened layout
        traces.sort_by_key(|t| t.interface);
        SubdomainGrid {
            subdomain_id,
            rect,
            nx,
            ny,
            dx,
            dy,
            x_fastest,
            faces,
            traces,
        }
    }

    pub fn cell_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx * self.dy
    }

    #[inline]
    pub fn cell_id(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        if self.x_fastest {
            j * self.nx + i
        } else {
            i * self.ny + j
        }
    }

    #[inline]
    pub fn cell_ij(&self, id: usize) -> (usize, usize) {
        if self.x_fastest {
            (id % self.nx, id / self.nx)
        } else {
            (id / self.ny, id % self.ny)
        }
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.rect.x0 + (i as f64 + 0.5) * self.dx,
            self.rect.y0 + (j as f64 + 0.5) * self.dy,
        )
    }

    pub fn cell_rect(&self, i: usize, j: usize) -> Rect {
        Rect::new(
            self.rect.x0 + i as f64 * self.dx,
            self.rect.y0 + j as f64 * self.dy,
            self.rect.x0 + (i + 1) as f64 * self.dx,
            self.rect.y0 + (j + 1) as f64 * self.dy,
        )
    }

    /// Face ids of cell (i, j) with their divergence signs:
    /// left, right, bottom, top.
    #[inline]
    pub fn cell_faces(&self, i: usize, j: usize) -> [(usize, f64); 4] {
        let nxf = (self.nx + 1) * self.ny;
        [
            (i * self.ny + j, -1.0),
            ((i + 1) * self.ny + j, 1.0),
            (nxf + j * self.nx + i, -1.0),
            (nxf + (j + 1) * self.nx + i, 1.0),
        ]
    }

    /// Bandwidth of the eliminated pressure matrix under this numbering.
    pub fn bandwidth(&self) -> usize {
        self.nx.min(self.ny)
    }

    /// Midpoint of a face in physical coordinates.
    pub fn face_midpoint(&self, fid: usize) -> (f64, f64) {
        let nxf = (self.nx + 1) * self.ny;
        if fid < nxf {
            let l = fid / self.ny;
            let j = fid % self.ny;
            (
                self.rect.x0 + l as f64 * self.dx,
                self.rect.y0 + (j as f64 + 0.5) * self.dy,
            )
        } else {
            let rest = fid - nxf;
            let m = rest / self.nx;
            let i = rest % self.nx;
            (
                self.rect.x0 + (i as f64 + 0.5) * self.dx,
                self.rect.y0 + m as f64 * self.dy,
            )
        }
    }

    /// Ordered trace faces with arclength intervals for one interface.
    pub fn trace_partition(&self, interface: usize) -> Result<&TraceSet> {
        self.traces
            .iter()
            .find(|t| t.interface == interface)
            .ok_or(Error::NotIncident {
                subdomain: self.subdomain_id,
                interface,
            })
    }
}

/// The decomposed domain: subdomain grids plus oriented interfaces.
#[derive(Debug, Clone)]
pub struct DomainDecomposition {
    pub domain: Rect,
    pub subdomains: Vec<SubdomainGrid>,
    pub interfaces: Vec<Interface>,
    /// Subdomains whose entire boundary lies on the interface skeleton.
    pub interior_subdomain_ids: Vec<usize>,
    config: DecompositionConfig,
}

impl DomainDecomposition {
    pub fn config(&self) -> &DecompositionConfig {
        &self.config
    }

    /// All counts (cells and mortar elements) multiplied by 2^level.
    pub fn refine(&self, level: u32) -> Result<DomainDecomposition> {
        let factor = 2usize
            .checked_pow(level)
            .ok_or_else(|| Error::Parameter(format!("refinement level {level} overflows")))?;
        let mut cfg = self.config.clone();
        for r in &mut cfg.resolutions {
            r.0 = r
                .0
                .checked_mul(factor)
                .ok_or_else(|| Error::Parameter("cell count overflow in refine".into()))?;
            r.1 = r
                .1
                .checked_mul(factor)
                .ok_or_else(|| Error::Parameter("cell count overflow in refine".into()))?;
        }
        cfg.mortar_elements = MortarElements::PerInterface(
            self.interfaces
                .iter()
                .map(|iface| {
                    iface
                        .mortar_elements
                        .checked_mul(factor)
                        .ok_or_else(|| Error::Parameter("mortar count overflow in refine".into()))
                })
                .collect::<Result<_>>()?,
        );
        build_decomposition(&cfg)
    }
}

fn validate_splits(splits: &[f64], lo: f64, hi: f64, axis: &str) -> Result<()> {
    let span = hi - lo;
    let mut prev = lo;
    for &s in splits {
        if s <= lo + GEOM_TOL * span || s >= hi - GEOM_TOL * span {
            return Err(Error::Geometry(format!(
                "split {axis} = {s} is not strictly interior to [{lo}, {hi}]"
            )));
        }
        if s <= prev + GEOM_TOL * span {
            return Err(Error::Geometry(format!(
                "splits along {axis} must be strictly increasing"
            )));
        }
        prev = s;
    }
    Ok(())
}

/// Builds the decomposition described by `config`.
pub fn build_decomposition(config: &DecompositionConfig) -> Result<DomainDecomposition> {
    let d = config.domain;
    if !(d.x1 > d.x0 && d.y1 > d.y0) {
        return Err(Error::Geometry(format!(
            "degenerate domain rectangle [{}, {}] x [{}, {}]",
            d.x0, d.x1, d.y0, d.y1
        )));
    }
    validate_splits(&config.split_x, d.x0, d.x1, "x")?;
    validate_splits(&config.split_y, d.y0, d.y1, "y")?;

    let mut xs = vec![d.x0];
    xs.extend_from_slice(&config.split_x);
    xs.push(d.x1);
    let mut ys = vec![d.y0];
    ys.extend_from_slice(&config.split_y);
    ys.push(d.y1);
    let ncols = xs.len() - 1;
    let nrows = ys.len() - 1;
    let nsub = ncols * nrows;
    if config.resolutions.len() != nsub {
        return Err(Error::Geometry(format!(
            "{} subdomains but {} resolutions given",
            nsub,
            config.resolutions.len()
        )));
    }
    for (k, &(nx, ny)) in config.resolutions.iter().enumerate() {
        if nx == 0 || ny == 0 {
            return Err(Error::Geometry(format!(
                "subdomain {k} has zero cells along one axis"
            )));
        }
    }

    let boxid = |col: usize, row: usize| row * ncols + col;

    // interfaces sorted by (left, right)
    let mut raw: Vec<(usize, usize, Axis, f64, f64, f64)> = Vec::new();
    for row in 0..nrows {
        for col in 0..ncols.saturating_sub(1) {
            raw.push((
                boxid(col, row),
                boxid(col + 1, row),
                Axis::X,
                xs[col + 1],
                ys[row],
                ys[row + 1],
            ));
        }
    }
    for row in 0..nrows.saturating_sub(1) {
        for col in 0..ncols {
            raw.push((
                boxid(col, row),
                boxid(col, row + 1),
                Axis::Y,
                ys[row + 1],
                xs[col],
                xs[col + 1],
            ));
        }
    }
    raw.sort_by_key(|r| (r.0, r.1));

    let mortar_counts: Vec<usize> = match &config.mortar_elements {
        MortarElements::Uniform(n) => vec![*n; raw.len()],
        MortarElements::PerInterface(v) => {
            if v.len() != raw.len() {
                return Err(Error::Geometry(format!(
                    "{} interfaces but {} mortar element counts given",
                    raw.len(),
                    v.len()
                )));
            }
            v.clone()
        }
    };
    for (k, &m) in mortar_counts.iter().enumerate() {
        if m == 0 {
            return Err(Error::Geometry(format!(
                "interface {k} has zero mortar elements"
            )));
        }
    }

    let interfaces: Vec<Interface> = raw
        .iter()
        .zip(mortar_counts)
        .enumerate()
        .map(|(id, (&(left, right, axis, pos, s0, s1), m))| Interface {
            id,
            left,
            right,
            axis,
            pos,
            s0,
            s1,
            mortar_elements: m,
        })
        .collect();

    // per-subdomain edge -> interface map: [left, right, bottom, top]
    let mut edge_ifaces = vec![[None; 4]; nsub];
    for iface in &interfaces {
        match iface.axis {
            Axis::X => {
                edge_ifaces[iface.left][1] = Some(iface.id);
                edge_ifaces[iface.right][0] = Some(iface.id);
            }
            Axis::Y => {
                edge_ifaces[iface.left][3] = Some(iface.id);
                edge_ifaces[iface.right][2] = Some(iface.id);
            }
        }
    }

    let mut subdomains = Vec::with_capacity(nsub);
    let mut interior = Vec::new();
    for row in 0..nrows {
        for col in 0..ncols {
            let id = boxid(col, row);
            let rect = Rect::new(xs[col], ys[row], xs[col + 1], ys[row + 1]);
            let (nx, ny) = config.resolutions[id];
            subdomains.push(SubdomainGrid::build(id, rect, nx, ny, edge_ifaces[id]));
            if edge_ifaces[id].iter().all(|e| e.is_some()) {
                interior.push(id);
            }
        }
    }

    Ok(DomainDecomposition {
        domain: d,
        subdomains,
        interfaces,
        interior_subdomain_ids: interior,
        config: config.clone(),
    })
}

/// Benchmark four-subdomain layout on [0,1] x [0,2] with splits at
/// x = 0.5 and y = 1, base resolutions (4,8), (5,10), (6,12), (7,14),
/// and the given number of mortar elements per interface.
pub fn benchmark_layout(mortar_elements: usize) -> DecompositionConfig {
    DecompositionConfig {
        domain: Rect::new(0.0, 0.0, 1.0, 2.0),
        split_x: vec![0.5],
        split_y: vec![1.0],
        resolutions: vec![(4, 8), (5, 10), (6, 12), (7, 14)],
        mortar_elements: MortarElements::Uniform(mortar_elements),
    }
}
