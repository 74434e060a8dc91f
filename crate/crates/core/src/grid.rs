//! Convex domains, uniform node lattices and finite-difference stencils.
//!
//! Nodes are stored in row-major order (last axis fastest). A node is
//! *interior* when it lies strictly inside the domain, *boundary* when it is
//! not interior but touches an interior node through its 3ⁿ neighbourhood, and
//! *exterior* otherwise. Fields are meaningful on interior and boundary nodes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::{Deref, DerefMut};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CompensatedSum, SymMat};

pub type Point = [f64; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainKind {
    Box,
    Ball,
    Superellipse,
}

impl DomainKind {
    pub fn name(&self) -> &'static str {
        match self {
            DomainKind::Box => "box",
            DomainKind::Ball => "ball",
            DomainKind::Superellipse => "superellipse",
        }
    }

    pub fn all() -> [DomainKind; 3] {
        [DomainKind::Ball, DomainKind::Box, DomainKind::Superellipse]
    }

    fn code(&self) -> u8 {
        match self {
            DomainKind::Box => 0,
            DomainKind::Ball => 1,
            DomainKind::Superellipse => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(DomainKind::Box),
            1 => Ok(DomainKind::Ball),
            2 => Ok(DomainKind::Superellipse),
            _ => Err(Error::invalid(format!("unknown domain code {c}"))),
        }
    }
}

fn default_exponent() -> f64 {
    4.0
}

/// Convex domain description.
///
/// `extents` holds side lengths for a box, a single radius for a ball and
/// semi-axes for a superellipse `Σ |xᵢ/aᵢ|^p < 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub dimension: usize,
    #[serde(default)]
    pub center: Vec<f64>,
    pub extents: Vec<f64>,
    #[serde(default = "default_exponent")]
    pub exponent: f64,
    #[serde(default)]
    pub uniform_convexity_radius: Option<f64>,
}

impl DomainSpec {
    pub fn ball(n: usize, radius: f64) -> Self {
        DomainSpec {
            kind: DomainKind::Ball,
            dimension: n,
            center: vec![0.0; n],
            extents: vec![radius],
            exponent: default_exponent(),
            uniform_convexity_radius: None,
        }
    }

    /// Box `[lo, hi]ⁿ`.
    pub fn cube(n: usize, lo: f64, hi: f64) -> Self {
        DomainSpec {
            kind: DomainKind::Box,
            dimension: n,
            center: vec![0.5 * (lo + hi); n],
            extents: vec![hi - lo; n],
            exponent: default_exponent(),
            uniform_convexity_radius: None,
        }
    }

    pub fn superellipse(n: usize, semi_axes: &[f64], exponent: f64) -> Self {
        DomainSpec {
            kind: DomainKind::Superellipse,
            dimension: n,
            center: vec![0.0; n],
            extents: semi_axes.to_vec(),
            exponent,
            uniform_convexity_radius: None,
        }
    }

    /// Half-widths of the bounding box along each axis.
    pub fn half_widths(&self) -> Point {
        let mut w = [0.0; 3];
        for (i, wi) in w.iter_mut().enumerate().take(self.dimension) {
            *wi = match self.kind {
                DomainKind::Box => 0.5 * self.extents[i],
                DomainKind::Ball => self.extents[0],
                DomainKind::Superellipse => self.extents[i],
            };
        }
        w
    }

    pub fn center_point(&self) -> Point {
        let mut c = [0.0; 3];
        for (i, ci) in self.center.iter().enumerate().take(3) {
            c[i] = *ci;
        }
        c
    }

    pub fn min_extent(&self) -> f64 {
        let w = self.half_widths();
        (0..self.dimension).map(|i| w[i]).fold(f64::INFINITY, f64::min)
    }

    /// Radius ρ of the interior-ball / uniform-convexity scale; defaults to the
    /// smallest half-width.
    pub fn rho(&self) -> f64 {
        self.uniform_convexity_radius.unwrap_or_else(|| self.min_extent())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dimension;
        if n != 2 && n != 3 {
            return Err(Error::invalid(format!("dimension must be 2 or 3, got {n}")));
        }
        if !self.center.is_empty() && self.center.len() != n {
            return Err(Error::invalid("center has the wrong number of coordinates"));
        }
        let need = match self.kind {
            DomainKind::Ball => 1,
            _ => n,
        };
        if self.extents.len() != need {
            return Err(Error::invalid(format!(
                "{} domain needs {need} extents, got {}",
                self.kind.name(),
                self.extents.len()
            )));
        }
        if self.extents.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
            return Err(Error::invalid("degenerate domain: extents must be positive"));
        }
        if self.kind == DomainKind::Superellipse && !(self.exponent >= 1.0) {
            return Err(Error::invalid("superellipse exponent must be at least 1 for convexity"));
        }
        if let Some(r) = self.uniform_convexity_radius {
            if !(r > 0.0) || r > self.min_extent() * (1.0 + 1e-12) {
                return Err(Error::invalid(
                    "uniform_convexity_radius must be positive and at most the smallest extent",
                ));
            }
        }
        Ok(())
    }

    /// Strict membership test.
    pub fn contains(&self, x: &Point) -> bool {
        let c = self.center_point();
        let n = self.dimension;
        match self.kind {
            DomainKind::Box => (0..n).all(|i| (x[i] - c[i]).abs() < 0.5 * self.extents[i] - 1e-12),
            DomainKind::Ball => {
                let r2: f64 = (0..n).map(|i| (x[i] - c[i]).powi(2)).sum();
                r2 < self.extents[0].powi(2) * (1.0 - 1e-12)
            }
            DomainKind::Superellipse => {
                let s: f64 = (0..n)
                    .map(|i| ((x[i] - c[i]) / self.extents[i]).abs().powf(self.exponent))
                    .sum();
                s < 1.0 - 1e-12
            }
        }
    }

    /// A point on the analytic boundary near `x`: the nearest point for boxes
    /// and balls, the radial projection from the center for superellipses.
    pub fn project(&self, x: &Point) -> Point {
        let c = self.center_point();
        let n = self.dimension;
        let mut p = *x;
        match self.kind {
            DomainKind::Box => {
                let inside = (0..n).all(|i| (x[i] - c[i]).abs() <= 0.5 * self.extents[i]);
                if inside {
                    // move along the axis of the closest face
                    let (ax, _) = (0..n)
                        .map(|i| (i, 0.5 * self.extents[i] - (x[i] - c[i]).abs()))
                        .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
                    let s = if x[ax] >= c[ax] { 1.0 } else { -1.0 };
                    p[ax] = c[ax] + s * 0.5 * self.extents[ax];
                } else {
                    for i in 0..n {
                        let h = 0.5 * self.extents[i];
                        p[i] = x[i].clamp(c[i] - h, c[i] + h);
                    }
                }
            }
            DomainKind::Ball | DomainKind::Superellipse => {
                let d: Vec<f64> = (0..n).map(|i| x[i] - c[i]).collect();
                let s = if self.kind == DomainKind::Ball {
                    d.iter().map(|v| v * v).sum::<f64>().sqrt() / self.extents[0]
                } else {
                    (0..n)
                        .map(|i| (d[i] / self.extents[i]).abs().powf(self.exponent))
                        .sum::<f64>()
                        .powf(1.0 / self.exponent)
                };
                if s > 0.0 {
                    for i in 0..n {
                        p[i] = c[i] + d[i] / s;
                    }
                }
            }
        }
        p
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum NodeKind {
    Interior,
    Boundary,
    Exterior,
}

/// Where boundary data is evaluated for a boundary node.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryMode {
    /// At the node itself (the analytic data extended past the boundary).
    #[default]
    Direct,
    /// At the projection of the node onto the analytic boundary.
    Projected,
}

/// Uniform lattice over the bounding box of a convex domain.
#[derive(Clone, Debug)]
pub struct Grid {
    pub n: usize,
    pub dims: [usize; 3],
    pub spacing: f64,
    pub origin: Point,
    pub domain: DomainSpec,
    pub kinds: Vec<NodeKind>,
    pub interior: Vec<usize>,
    pub boundary: Vec<usize>,
    /// Position of each node inside `interior`, or `usize::MAX`.
    pub interior_pos: Vec<usize>,
}

/// Builds the lattice with `resolution` nodes along the longest axis.
pub fn build_grid(domain: &DomainSpec, resolution: usize) -> Result<Grid> {
    domain.validate()?;
    if resolution < 5 {
        return Err(Error::invalid(format!("resolution must be at least 5, got {resolution}")));
    }
    let n = domain.dimension;
    let hw = domain.half_widths();
    let c = domain.center_point();
    let longest = (0..n).map(|i| hw[i]).fold(0.0, f64::max);
    let spacing = 2.0 * longest / (resolution - 1) as f64;
    let mut dims = [1usize; 3];
    let mut origin = [0.0; 3];
    for i in 0..n {
        let cells = (2.0 * hw[i] / spacing).round().max(2.0) as usize;
        dims[i] = cells + 1;
        origin[i] = c[i] - 0.5 * cells as f64 * spacing;
    }
    let total = dims[0] * dims[1] * dims[2];
    let mut grid = Grid {
        n,
        dims,
        spacing,
        origin,
        domain: domain.clone(),
        kinds: vec![NodeKind::Exterior; total],
        interior: Vec::new(),
        boundary: Vec::new(),
        interior_pos: vec![usize::MAX; total],
    };
    for idx in 0..total {
        if domain.contains(&grid.point(idx)) {
            grid.kinds[idx] = NodeKind::Interior;
        }
    }
    let offsets = grid.neighbourhood_offsets();
    let mut is_boundary = vec![false; total];
    for idx in 0..total {
        if grid.kinds[idx] != NodeKind::Interior {
            continue;
        }
        for off in &offsets {
            match grid.offset(idx, off) {
                Some(j) if grid.kinds[j] != NodeKind::Interior => is_boundary[j] = true,
                Some(_) => {}
                None => {
                    return Err(Error::invalid("interior node without a full stencil in the lattice"))
                }
            }
        }
    }
    for idx in 0..total {
        match grid.kinds[idx] {
            NodeKind::Interior => {
                grid.interior_pos[idx] = grid.interior.len();
                grid.interior.push(idx);
            }
            _ if is_boundary[idx] => {
                grid.kinds[idx] = NodeKind::Boundary;
                grid.boundary.push(idx);
            }
            _ => {}
        }
    }
    if grid.interior.is_empty() || grid.boundary.is_empty() {
        return Err(Error::invalid("grid has no interior nodes; raise the resolution"));
    }
    Ok(grid)
}

impl Grid {
    pub fn num_nodes(&self) -> usize {
        self.kinds.len()
    }

    pub fn cell_measure(&self) -> f64 {
        self.spacing.powi(self.n as i32)
    }

    /// Nodes along the longest axis.
    pub fn resolution(&self) -> usize {
        self.dims[..self.n].iter().copied().max().unwrap_or(0)
    }

    #[inline]
    pub fn index(&self, ijk: [usize; 3]) -> usize {
        (ijk[0] * self.dims[1] + ijk[1]) * self.dims[2] + ijk[2]
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.dims[2];
        let j = (idx / self.dims[2]) % self.dims[1];
        let i = idx / (self.dims[1] * self.dims[2]);
        [i, j, k]
    }

    #[inline]
    pub fn point(&self, idx: usize) -> Point {
        let c = self.coords(idx);
        let mut p = [0.0; 3];
        for a in 0..self.n {
            p[a] = self.origin[a] + c[a] as f64 * self.spacing;
        }
        p
    }

    #[inline]
    pub fn offset(&self, idx: usize, off: &[isize; 3]) -> Option<usize> {
        let c = self.coords(idx);
        let mut out = [0usize; 3];
        for a in 0..3 {
            let v = c[a] as isize + off[a];
            if v < 0 || v >= self.dims[a] as isize {
                return None;
            }
            out[a] = v as usize;
        }
        Some(self.index(out))
    }

    #[inline]
    pub fn neighbor(&self, idx: usize, axis: usize, step: isize) -> Option<usize> {
        let mut off = [0isize; 3];
        off[axis] = step;
        self.offset(idx, &off)
    }

    /// The 3ⁿ − 1 nonzero offsets of the full neighbourhood.
    pub fn neighbourhood_offsets(&self) -> Vec<[isize; 3]> {
        let r2 = if self.n == 3 { 1 } else { 0 };
        let mut out = Vec::new();
        for a in -1..=1 {
            for b in -1..=1 {
                for c in -r2..=r2 {
                    if (a, b, c) != (0, 0, 0) {
                        out.push([a, b, c]);
                    }
                }
            }
        }
        out
    }

    #[inline]
    pub fn is_interior(&self, idx: usize) -> bool {
        self.kinds[idx] == NodeKind::Interior
    }

    #[inline]
    pub fn is_defined(&self, idx: usize) -> bool {
        self.kinds[idx] != NodeKind::Exterior
    }

    /// Lattice node closest to `x` (may be exterior).
    pub fn nearest_node(&self, x: &Point) -> usize {
        let mut ijk = [0usize; 3];
        for a in 0..self.n {
            let t = ((x[a] - self.origin[a]) / self.spacing).round();
            ijk[a] = t.clamp(0.0, (self.dims[a] - 1) as f64) as usize;
        }
        self.index(ijk)
    }

    /// Interior node closest to `x`.
    pub fn nearest_interior(&self, x: &Point) -> usize {
        let j = self.nearest_node(x);
        if self.is_interior(j) {
            return j;
        }
        *self
            .interior
            .iter()
            .min_by(|a, b| dist2(&self.point(**a), x).total_cmp(&dist2(&self.point(**b), x)))
            .expect("grid has interior nodes")
    }

    /// Position at which boundary data is evaluated for node `idx`.
    pub fn data_point(&self, idx: usize, mode: BoundaryMode) -> Point {
        let x = self.point(idx);
        match (mode, self.kinds[idx]) {
            (BoundaryMode::Projected, NodeKind::Boundary) => self.domain.project(&x),
            _ => x,
        }
    }

    /// True if the node has an axis neighbour that is not interior.
    pub fn touches_boundary(&self, idx: usize) -> bool {
        (0..self.n).any(|a| {
            [-1, 1].iter().any(|s| match self.neighbor(idx, a, *s) {
                Some(j) => !self.is_interior(j),
                None => true,
            })
        })
    }
}

#[inline]
pub fn dist2(a: &Point, b: &Point) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

#[inline]
pub fn dot3(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

macro_rules! field_newtype {
    ($name:ident, $t:ty) => {
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name(pub Vec<$t>);

        impl Deref for $name {
            type Target = Vec<$t>;
            fn deref(&self) -> &Vec<$t> {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut Vec<$t> {
                &mut self.0
            }
        }

        impl From<Vec<$t>> for $name {
            fn from(v: Vec<$t>) -> Self {
                $name(v)
            }
        }
    };
}

field_newtype!(ScalarField, f64);
field_newtype!(VectorField, [f64; 3]);
field_newtype!(MatrixField, SymMat);

impl ScalarField {
    pub fn zeros(grid: &Grid) -> Self {
        ScalarField(vec![0.0; grid.num_nodes()])
    }

    /// Samples `f` at every interior and boundary node; exterior nodes get 0.
    pub fn from_fn(grid: &Grid, f: impl Fn(&Point) -> f64) -> Self {
        ScalarField(
            (0..grid.num_nodes())
                .map(|i| if grid.is_defined(i) { f(&grid.point(i)) } else { 0.0 })
                .collect(),
        )
    }
}

impl MatrixField {
    /// Largest asymmetry over all nodes.
    pub fn asymmetry(&self) -> f64 {
        self.iter().fold(0.0, |m, a| m.max(a.asymmetry()))
    }
}

fn second_diff(grid: &Grid, f: &[f64], idx: usize, a: usize, b: usize) -> f64 {
    let h = grid.spacing;
    if a == b {
        let p = grid.neighbor(idx, a, 1).unwrap();
        let m = grid.neighbor(idx, a, -1).unwrap();
        (f[p] - 2.0 * f[idx] + f[m]) / (h * h)
    } else {
        let mut o = [0isize; 3];
        let mut corner = |sa: isize, sb: isize| {
            o[a] = sa;
            o[b] = sb;
            f[grid.offset(idx, &o).unwrap()]
        };
        (corner(1, 1) - corner(1, -1) - corner(-1, 1) + corner(-1, -1)) / (4.0 * h * h)
    }
}

fn axis_derivative(grid: &Grid, f: &[f64], idx: usize, a: usize) -> f64 {
    let h = grid.spacing;
    let get = |s: isize| grid.neighbor(idx, a, s).filter(|j| grid.is_defined(*j));
    match (get(1), get(-1)) {
        (Some(p), Some(m)) => (f[p] - f[m]) / (2.0 * h),
        (Some(p), None) => match get(2) {
            Some(pp) => (-3.0 * f[idx] + 4.0 * f[p] - f[pp]) / (2.0 * h),
            None => (f[p] - f[idx]) / h,
        },
        (None, Some(m)) => match get(-2) {
            Some(mm) => (3.0 * f[idx] - 4.0 * f[m] + f[mm]) / (2.0 * h),
            None => (f[idx] - f[m]) / h,
        },
        (None, None) => 0.0,
    }
}

/// Gradient by central differences; one-sided second-order differences where a
/// neighbour is missing (boundary nodes). Exterior nodes get zero.
pub fn fd_gradient(grid: &Grid, f: &ScalarField) -> VectorField {
    let mut out = vec![[0.0; 3]; grid.num_nodes()];
    for (idx, g) in out.iter_mut().enumerate() {
        if !grid.is_defined(idx) {
            continue;
        }
        for a in 0..grid.n {
            g[a] = axis_derivative(grid, f, idx, a);
        }
    }
    VectorField(out)
}

/// Hessian at one interior node.
pub fn hessian_at(grid: &Grid, f: &[f64], idx: usize) -> SymMat {
    let mut m = SymMat::zeros(grid.n);
    for a in 0..grid.n {
        for b in a..grid.n {
            m.set_sym(a, b, second_diff(grid, f, idx, a, b));
        }
    }
    m
}

/// Hessian by the three-point and four-point cross stencils on interior
/// nodes. Boundary nodes copy the value of their nearest interior neighbour.
pub fn fd_hessian(grid: &Grid, f: &ScalarField) -> MatrixField {
    let mut out = vec![SymMat::zeros(grid.n); grid.num_nodes()];
    for &idx in &grid.interior {
        out[idx] = hessian_at(grid, f, idx);
    }
    fill_boundary_from_interior(grid, &mut out);
    MatrixField(out)
}

/// Copies to every boundary node the value of its nearest interior neighbour.
pub fn fill_boundary_from_interior<T: Copy>(grid: &Grid, values: &mut [T]) {
    let offs = grid.neighbourhood_offsets();
    for &b in &grid.boundary {
        let x = grid.point(b);
        let best = offs
            .iter()
            .filter_map(|o| grid.offset(b, o))
            .filter(|j| grid.is_interior(*j))
            .min_by(|p, q| dist2(&grid.point(*p), &x).total_cmp(&dist2(&grid.point(*q), &x)));
        if let Some(j) = best {
            values[b] = values[j];
        }
    }
}

/// Riemann sum `Σ f · cell measure` over `region`.
pub fn cell_integral(grid: &Grid, f: &[f64], region: &[usize]) -> f64 {
    let s: CompensatedSum = region.iter().map(|i| f[*i]).collect();
    s.value() * grid.cell_measure()
}

/// Header of a saved field.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldHeader {
    pub n: usize,
    pub dims: [usize; 3],
    pub kind: DomainKind,
    pub extents: Vec<f64>,
    pub components: usize,
}

impl FieldHeader {
    pub fn for_grid(grid: &Grid, components: usize) -> Self {
        FieldHeader {
            n: grid.n,
            dims: grid.dims,
            kind: grid.domain.kind,
            extents: grid.domain.extents.clone(),
            components,
        }
    }

    fn nodes(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Writes node values as CSV: a header row `n,d0,d1,d2,kind,components,extents...`,
/// then one row per node in row-major order.
pub fn save_field_csv(path: &Path, header: &FieldHeader, values: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .flexible(true)
        .from_writer(BufWriter::new(File::create(path)?));
    let mut head = vec![
        header.n.to_string(),
        header.dims[0].to_string(),
        header.dims[1].to_string(),
        header.dims[2].to_string(),
        header.kind.name().to_string(),
        header.components.to_string(),
    ];
    head.extend(header.extents.iter().map(|e| format!("{e:e}")));
    w.write_record(&head).map_err(csv_err)?;
    for row in values {
        w.write_record(row.iter().map(|v| format!("{v:e}"))).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Serde(e.to_string())
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Serde(format!("bad number `{s}`")))
}

pub fn load_field_csv(path: &Path) -> Result<(FieldHeader, Vec<Vec<f64>>)> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(BufReader::new(File::open(path)?));
    let mut records = r.records();
    let head = records
        .next()
        .ok_or_else(|| Error::Serde("empty field file".into()))?
        .map_err(csv_err)?;
    if head.len() < 7 {
        return Err(Error::Serde("short field header".into()));
    }
    let u = |i: usize| -> Result<usize> {
        head[i].trim().parse().map_err(|_| Error::Serde(format!("bad header entry `{}`", &head[i])))
    };
    let kind = match head[4].trim() {
        "box" => DomainKind::Box,
        "ball" => DomainKind::Ball,
        "superellipse" => DomainKind::Superellipse,
        k => return Err(Error::Serde(format!("unknown domain kind `{k}`"))),
    };
    let header = FieldHeader {
        n: u(0)?,
        dims: [u(1)?, u(2)?, u(3)?],
        kind,
        components: u(5)?,
        extents: (6..head.len()).map(|i| parse_f64(&head[i])).collect::<Result<_>>()?,
    };
    let mut values = Vec::with_capacity(header.nodes());
    for rec in records {
        let rec = rec.map_err(csv_err)?;
        values.push(rec.iter().map(parse_f64).collect::<Result<Vec<f64>>>()?);
    }
    if values.len() != header.nodes() {
        return Err(Error::Serde(format!(
            "expected {} node rows, found {}",
            header.nodes(),
            values.len()
        )));
    }
    Ok((header, values))
}

const MAGIC: &[u8; 4] = b"LMAF";

/// Little-endian binary variant of the CSV layout.
pub fn save_field_binary(path: &Path, header: &FieldHeader, values: &[Vec<f64>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(header.n as u32).to_le_bytes())?;
    for d in header.dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    w.write_all(&[header.kind.code()])?;
    w.write_all(&(header.components as u32).to_le_bytes())?;
    w.write_all(&(header.extents.len() as u32).to_le_bytes())?;
    for e in &header.extents {
        w.write_all(&e.to_le_bytes())?;
    }
    for row in values {
        for v in row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_field_binary(path: &Path) -> Result<(FieldHeader, Vec<Vec<f64>>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Serde("not a field file".into()));
    }
    fn u32_le(r: &mut impl Read) -> Result<usize> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b) as usize)
    }
    fn f64_le(r: &mut impl Read) -> Result<f64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
    let n = u32_le(&mut r)?;
    let dims = [u32_le(&mut r)?, u32_le(&mut r)?, u32_le(&mut r)?];
    let mut code = [0u8; 1];
    r.read_exact(&mut code)?;
    let kind = DomainKind::from_code(code[0])?;
    let components = u32_le(&mut r)?;
    let ne = u32_le(&mut r)?;
    let extents = (0..ne).map(|_| f64_le(&mut r)).collect::<Result<Vec<_>>>()?;
    let header = FieldHeader {
        n,
        dims,
        kind,
        extents,
        components,
    };
    let mut values = Vec::with_capacity(header.nodes());
    for _ in 0..header.nodes() {
        values.push((0..components).map(|_| f64_le(&mut r)).collect::<Result<Vec<_>>>()?);
    }
    Ok((header, values))
}

/// Saves a scalar field in CSV or binary form, chosen by the `.bin` extension.
pub fn save_scalar_field(path: &Path, grid: &Grid, f: &ScalarField) -> Result<()> {
    let header = FieldHeader::for_grid(grid, 1);
    let rows: Vec<Vec<f64>> = f.iter().map(|v| vec![*v]).collect();
    if path.extension().is_some_and(|e| e == "bin") {
        save_field_binary(path, &header, &rows)
    } else {
        save_field_csv(path, &header, &rows)
    }
}

/// Loads a scalar field, checking that it was saved on a lattice of the same shape.
pub fn load_scalar_field(path: &Path, grid: &Grid) -> Result<ScalarField> {
    let (header, rows) = if path.extension().is_some_and(|e| e == "bin") {
        load_field_binary(path)?
    } else {
        load_field_csv(path)?
    };
    if header.n != grid.n || header.dims != grid.dims || header.components != 1 {
        return Err(Error::invalid(format!(
            "field file {} does not match the grid",
            path.display()
        )));
    }
    Ok(ScalarField(rows.into_iter().map(|r| r[0]).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_lattice_counts() {
        let g = build_grid(&DomainSpec::cube(2, 0.0, 1.0), 5).unwrap();
        assert_eq!(g.num_nodes(), 25);
        assert_eq!(g.interior.len(), 9);
        assert_eq!(g.spacing, 0.25);
        let g3 = build_grid(&DomainSpec::cube(3, 0.0, 1.0), 5).unwrap();
        assert_eq!(g3.interior.len(), 27);
    }

    #[test]
    fn ball_interior_matches_brute_force() {
        let g = build_grid(&DomainSpec::ball(2, 1.0), 9).unwrap();
        let mut count = 0;
        for i in -4i32..=4 {
            for j in -4i32..=4 {
                let (x, y) = (i as f64 * 0.25, j as f64 * 0.25);
                if x * x + y * y < 1.0 {
                    count += 1;
                }
            }
        }
        assert_eq!(g.interior.len(), count);
    }

    #[test]
    fn degenerate_domain_rejected() {
        let mut d = DomainSpec::cube(2, 0.0, 1.0);
        d.extents[1] = 0.0;
        assert!(build_grid(&d, 9).is_err());
        assert!(build_grid(&DomainSpec::cube(2, 0.0, 1.0), 4).is_err());
    }

    #[test]
    fn stencils_exact_on_quadratics() {
        let g = build_grid(&DomainSpec::ball(3, 1.0), 11).unwrap();
        let a = SymMat::from_rows(3, &[&[2.0, 0.3, -0.1], &[0.3, 1.0, 0.2], &[-0.1, 0.2, 0.5]]);
        let f = ScalarField::from_fn(&g, |x| 0.5 * a.quad(x) + x[0] - 2.0 * x[2]);
        let grad = fd_gradient(&g, &f);
        let hess = fd_hessian(&g, &f);
        for &i in &g.interior {
            let x = g.point(i);
            let ax = a.mul_vec(&x);
            assert!((grad[i][0] - ax[0] - 1.0).abs() < 1e-12);
            assert!((grad[i][2] - ax[2] + 2.0).abs() < 1e-12);
            for p in 0..3 {
                for q in 0..3 {
                    assert!((hess[i].a[p][q] - a.a[p][q]).abs() < 1e-10);
                }
            }
        }
        assert_eq!(hess.asymmetry(), 0.0);
    }

    #[test]
    fn cross_term_of_product() {
        let g = build_grid(&DomainSpec::cube(2, 0.0, 1.0), 9).unwrap();
        let f = ScalarField::from_fn(&g, |x| x[0] * x[1]);
        let h = fd_hessian(&g, &f);
        let i = g.interior[5];
        assert!((h[i].a[0][1] - 1.0).abs() < 1e-12);
        assert!(h[i].a[0][0].abs() < 1e-12);
    }

    #[test]
    fn one_sided_gradient_on_boundary_is_exact_for_quadratics() {
        let g = build_grid(&DomainSpec::cube(2, 0.0, 1.0), 9).unwrap();
        let f = ScalarField::from_fn(&g, |x| x[0] * x[0]);
        let grad = fd_gradient(&g, &f);
        for &b in &g.boundary {
            let x = g.point(b);
            assert!((grad[b][0] - 2.0 * x[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn integral_of_linear_function() {
        let g = build_grid(&DomainSpec::cube(2, 0.0, 1.0), 129).unwrap();
        let one = ScalarField::from_fn(&g, |_| 1.0);
        let all: Vec<usize> = g.interior.clone();
        let area = cell_integral(&g, &one, &all);
        assert!((area - 1.0).abs() <= 2.0 * g.spacing * 4.0);
        let x = ScalarField::from_fn(&g, |p| p[0]);
        assert!((cell_integral(&g, &x, &all) - 0.5).abs() < 0.02);
        assert_eq!(cell_integral(&g, &ScalarField::zeros(&g), &all), 0.0);
    }

    #[test]
    fn field_round_trip() {
        let g = build_grid(&DomainSpec::ball(2, 1.0), 9).unwrap();
        let f = ScalarField::from_fn(&g, |x| x[0] - 0.3 * x[1]);
        let dir = tempfile::tempdir().unwrap();
        for name in ["f.csv", "f.bin"] {
            let p = dir.path().join(name);
            save_scalar_field(&p, &g, &f).unwrap();
            let back = load_scalar_field(&p, &g).unwrap();
            assert_eq!(back, f);
        }
    }
}
