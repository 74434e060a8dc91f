//! Sections `S_u(x0, h) = {u < u(x0) + Du(x0)·(x − x0) + h}` as node sets,
//! with traced boundaries, volume scans, inclusion probes and measure growth.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{dist2, Grid, Point, ScalarField};
use crate::linalg::SymMat;
use crate::potentials::{convex_hull_2d, inside_convex_polygon, Potential};

/// Traced boundary of a section.
#[derive(Clone, Debug)]
pub enum BoundaryTrace {
    /// Closed polygon, vertices in order (n = 2).
    Polyline(Vec<[f64; 2]>),
    /// Triangles of a closed surface (n = 3).
    Surface(Vec<[Point; 3]>),
}

#[derive(Clone, Debug)]
pub struct Section {
    pub center: usize,
    pub center_point: Point,
    pub height: f64,
    /// Sorted node indices.
    pub cells: Vec<usize>,
    pub volume: f64,
    pub compactly_contained: bool,
    /// `None` when the trace is open or has several components.
    pub boundary: Option<BoundaryTrace>,
    trace_defect: (usize, usize),
}

/// JSON record of a section.
#[derive(Clone, Debug, Serialize)]
pub struct SectionRecord {
    pub center: Vec<f64>,
    pub height: f64,
    pub cells: usize,
    pub volume: f64,
    pub boundary_measure: Option<f64>,
    pub compactly_contained: bool,
    pub eccentricity: f64,
}

impl Section {
    pub fn contains(&self, node: usize) -> bool {
        self.cells.binary_search(&node).is_ok()
    }

    /// Square root of the ratio of extreme eigenvalues of the second-moment
    /// matrix of the cell centers.
    pub fn eccentricity(&self, grid: &Grid) -> f64 {
        let n = grid.n;
        let k = self.cells.len() as f64;
        let mut mean = [0.0; 3];
        for &c in &self.cells {
            let x = grid.point(c);
            for a in 0..n {
                mean[a] += x[a] / k;
            }
        }
        let mut m = SymMat::zeros(n);
        for &c in &self.cells {
            let x = grid.point(c);
            for a in 0..n {
                for b in 0..n {
                    m.a[a][b] += (x[a] - mean[a]) * (x[b] - mean[b]) / k;
                }
            }
        }
        let ev = m.eigenvalues();
        if ev[0] <= 0.0 {
            return f64::INFINITY;
        }
        (ev[n - 1] / ev[0]).sqrt()
    }

    pub fn record(&self, grid: &Grid) -> SectionRecord {
        SectionRecord {
            center: self.center_point[..grid.n].to_vec(),
            height: self.height,
            cells: self.cells.len(),
            volume: self.volume,
            boundary_measure: boundary_measure(self, grid).ok().map(|b| b.measure),
            compactly_contained: self.compactly_contained,
            eccentricity: self.eccentricity(grid),
        }
    }
}

/// `u(x) − ℓ(x)` for the supporting affine function at `x0`, at every node.
pub fn excess(u: &Potential, x0: usize) -> Vec<f64> {
    let grid = &u.grid;
    let ell = u.support_at(x0);
    (0..grid.num_nodes())
        .map(|i| if grid.is_defined(i) { u.values[i] - ell(&grid.point(i)) } else { f64::INFINITY })
        .collect()
}

pub fn resolve_center(u: &Potential, x0: &Point) -> Result<usize> {
    let grid = &u.grid;
    let c = grid.nearest_node(x0);
    if grid.is_interior(c) {
        return Ok(c);
    }
    if grid.is_defined(c) && u.spec.is_some() {
        return Ok(c);
    }
    Err(Error::invalid(format!(
        "section center {:?} is not an interior node (boundary centers need an analytic potential)",
        &x0[..grid.n]
    )))
}

/// Extracts `S_u(x0, h)`: interior nodes passing the sublevel test, restricted
/// to the axis-connected component of the node nearest to `x0`.
pub fn extract_section(u: &Potential, x0: &Point, h: f64) -> Result<Section> {
    let center = resolve_center(u, x0)?;
    section_at_node(u, center, h)
}

pub fn section_at_node(u: &Potential, center: usize, h: f64) -> Result<Section> {
    let grid = &u.grid;
    let floor = grid.spacing * grid.spacing;
    if !(h >= floor) {
        return Err(Error::EmptySection {
            center,
            height: h,
            floor,
        });
    }
    let ex = excess(u, center);
    section_from_excess(grid, center, h, &ex)
}

fn section_from_excess(grid: &Grid, center: usize, h: f64, ex: &[f64]) -> Result<Section> {
    let mut seen = vec![false; grid.num_nodes()];
    let mut cells = vec![center];
    seen[center] = true;
    let mut queue = VecDeque::from([center]);
    while let Some(i) = queue.pop_front() {
        for a in 0..grid.n {
            for s in [-1, 1] {
                if let Some(j) = grid.neighbor(i, a, s) {
                    if !seen[j] && grid.is_interior(j) && ex[j] < h {
                        seen[j] = true;
                        cells.push(j);
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    cells.sort_unstable();
    let offs = grid.neighbourhood_offsets();
    let compactly_contained = cells.iter().all(|&c| {
        offs.iter()
            .all(|o| grid.offset(c, o).is_some_and(|j| grid.is_interior(j)))
    });
    let level: Vec<f64> = (0..grid.num_nodes())
        .map(|i| if seen[i] { ex[i] - h } else { (ex[i] - h).max(f64::MIN_POSITIVE) })
        .collect();
    let (boundary, trace_defect) = if compactly_contained {
        match grid.n {
            2 => trace_2d(grid, &cells, &level),
            _ => trace_3d(grid, &cells, &level),
        }
    } else {
        (None, (0, 1))
    };
    Ok(Section {
        center,
        center_point: grid.point(center),
        height: h,
        volume: cells.len() as f64 * grid.cell_measure(),
        cells,
        compactly_contained,
        boundary,
        trace_defect,
    })
}

/// Lattice bounding box of `cells` grown by one node.
fn bbox(grid: &Grid, cells: &[usize]) -> ([usize; 3], [usize; 3]) {
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for &c in cells {
        let ijk = grid.coords(c);
        for a in 0..3 {
            lo[a] = lo[a].min(ijk[a]);
            hi[a] = hi[a].max(ijk[a]);
        }
    }
    for a in 0..grid.n {
        lo[a] = lo[a].saturating_sub(1);
        hi[a] = (hi[a] + 1).min(grid.dims[a] - 1);
    }
    (lo, hi)
}

fn edge_point(grid: &Grid, level: &[f64], p: usize, q: usize) -> Point {
    let (a, b) = (level[p], level[q]);
    let t = a / (a - b);
    let (xp, xq) = (grid.point(p), grid.point(q));
    let mut x = [0.0; 3];
    for k in 0..3 {
        x[k] = xp[k] + t * (xq[k] - xp[k]);
    }
    x
}

fn key(p: usize, q: usize) -> (usize, usize) {
    (p.min(q), p.max(q))
}

/// Marching squares on the zero level of `level`, chained into loops.
fn trace_2d(grid: &Grid, cells: &[usize], level: &[f64]) -> (Option<BoundaryTrace>, (usize, usize)) {
    let (lo, hi) = bbox(grid, cells);
    let mut segs: Vec<((usize, usize), (usize, usize))> = Vec::new();
    let mut points: HashMap<(usize, usize), Point> = HashMap::new();
    for i in lo[0]..hi[0] {
        for j in lo[1]..hi[1] {
            let c = [
                grid.index([i, j, 0]),
                grid.index([i + 1, j, 0]),
                grid.index([i + 1, j + 1, 0]),
                grid.index([i, j + 1, 0]),
            ];
            let inside: Vec<bool> = c.iter().map(|k| level[*k] < 0.0).collect();
            let crossings: Vec<(usize, usize)> = (0..4)
                .filter(|e| inside[*e] != inside[(e + 1) % 4])
                .map(|e| key(c[e], c[(e + 1) % 4]))
                .collect();
            for k in &crossings {
                points.entry(*k).or_insert_with(|| edge_point(grid, level, k.0, k.1));
            }
            match crossings.len() {
                2 => segs.push((crossings[0], crossings[1])),
                4 => {
                    // saddle: decide by the square-center average
                    let mid: f64 = c.iter().map(|k| level[*k]).sum::<f64>() / 4.0;
                    let e: Vec<(usize, usize)> = (0..4).map(|e| key(c[e], c[(e + 1) % 4])).collect();
                    if (mid < 0.0) == inside[0] {
                        segs.push((e[0], e[1]));
                        segs.push((e[2], e[3]));
                    } else {
                        segs.push((e[3], e[0]));
                        segs.push((e[1], e[2]));
                    }
                }
                _ => {}
            }
        }
    }
    let mut adj: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (s, (a, b)) in segs.iter().enumerate() {
        adj.entry(*a).or_default().push(s);
        adj.entry(*b).or_default().push(s);
    }
    let open = adj.values().filter(|v| v.len() != 2).count();
    let mut used = vec![false; segs.len()];
    let mut loops = Vec::new();
    for s0 in 0..segs.len() {
        if used[s0] {
            continue;
        }
        used[s0] = true;
        let start = segs[s0].0;
        let mut cur = segs[s0].1;
        let mut poly = vec![points[&start]];
        while cur != start {
            poly.push(points[&cur]);
            let next = adj[&cur].iter().copied().find(|t| !used[*t]);
            match next {
                Some(t) => {
                    used[t] = true;
                    cur = if segs[t].0 == cur { segs[t].1 } else { segs[t].0 };
                }
                None => break,
            }
        }
        loops.push(poly);
    }
    if loops.len() == 1 && open == 0 {
        let poly = loops.pop().unwrap().into_iter().map(|p| [p[0], p[1]]).collect();
        (Some(BoundaryTrace::Polyline(poly)), (1, 0))
    } else {
        (None, (loops.len(), open))
    }
}

/// Marching tetrahedra (six tetrahedra per cube along the main diagonal).
fn trace_3d(grid: &Grid, cells: &[usize], level: &[f64]) -> (Option<BoundaryTrace>, (usize, usize)) {
    const TETS: [[usize; 4]; 6] = [
        [0, 1, 3, 7],
        [0, 1, 5, 7],
        [0, 2, 3, 7],
        [0, 2, 6, 7],
        [0, 4, 5, 7],
        [0, 4, 6, 7],
    ];
    let (lo, hi) = bbox(grid, cells);
    let mut tris: Vec<[Point; 3]> = Vec::new();
    let mut tri_keys: Vec<[(usize, usize); 3]> = Vec::new();
    for i in lo[0]..hi[0] {
        for j in lo[1]..hi[1] {
            for k in lo[2]..hi[2] {
                let corner = |c: usize| grid.index([i + (c >> 2 & 1), j + (c >> 1 & 1), k + (c & 1)]);
                for t in TETS {
                    let v: Vec<usize> = t.iter().map(|c| corner(*c)).collect();
                    let ins: Vec<usize> = (0..4).filter(|a| level[v[*a]] < 0.0).collect();
                    let out: Vec<usize> = (0..4).filter(|a| level[v[*a]] >= 0.0).collect();
                    let mut emit = |ks: [(usize, usize); 3]| {
                        tris.push(ks.map(|(p, q)| edge_point(grid, level, p, q)));
                        tri_keys.push(ks.map(|(p, q)| key(p, q)));
                    };
                    match ins.len() {
                        1 | 3 => {
                            let (lone, rest) = if ins.len() == 1 { (ins[0], &out) } else { (out[0], &ins) };
                            emit([
                                (v[lone], v[rest[0]]),
                                (v[lone], v[rest[1]]),
                                (v[lone], v[rest[2]]),
                            ]);
                        }
                        2 => {
                            let (a, b, c, d) = (v[ins[0]], v[ins[1]], v[out[0]], v[out[1]]);
                            emit([(a, c), (a, d), (b, d)]);
                            emit([(a, c), (b, d), (b, c)]);
                        }
                        _ => {}
                    }
                }
            }
        }
    }
    // closedness: every triangle edge shared by exactly two triangles
    let mut edge_count: HashMap<((usize, usize), (usize, usize)), Vec<usize>> = HashMap::new();
    for (t, ks) in tri_keys.iter().enumerate() {
        for e in 0..3 {
            let (p, q) = (ks[e], ks[(e + 1) % 3]);
            if p == q {
                continue;
            }
            let ek = if p < q { (p, q) } else { (q, p) };
            edge_count.entry(ek).or_default().push(t);
        }
    }
    let open = edge_count.values().filter(|v| v.len() != 2).count();
    // components by union-find over shared edges
    let mut parent: Vec<usize> = (0..tris.len()).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut y = x;
        while p[y] != r {
            let nx = p[y];
            p[y] = r;
            y = nx;
        }
        r
    }
    for ts in edge_count.values() {
        for w in ts.windows(2) {
            let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
            parent[a] = b;
        }
    }
    let comps = (0..tris.len()).filter(|t| find(&mut parent, *t) == *t).count();
    if comps == 1 && open == 0 {
        (Some(BoundaryTrace::Surface(tris)), (1, 0))
    } else {
        (None, (comps, open))
    }
}

/// Height scan of `|S_u(x0, h)| / h^{n/2}`.
#[derive(Clone, Debug, Serialize)]
pub struct VolumeScan {
    pub heights: Vec<f64>,
    pub volumes: Vec<f64>,
    pub ratios: Vec<f64>,
    pub contained: Vec<bool>,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// `max_ratio / min_ratio` over compactly contained sections.
    pub spread: f64,
}

pub fn volume_ratio_scan(u: &Potential, x0: &Point, heights: &[f64]) -> Result<VolumeScan> {
    let center = resolve_center(u, x0)?;
    let ex = excess(u, center);
    let grid = &u.grid;
    let half_n = grid.n as f64 / 2.0;
    let mut scan = VolumeScan {
        heights: heights.to_vec(),
        volumes: Vec::new(),
        ratios: Vec::new(),
        contained: Vec::new(),
        min_ratio: f64::INFINITY,
        max_ratio: f64::NEG_INFINITY,
        spread: f64::NAN,
    };
    for &h in heights {
        if !(h >= grid.spacing * grid.spacing) {
            return Err(Error::EmptySection {
                center,
                height: h,
                floor: grid.spacing * grid.spacing,
            });
        }
        let s = section_from_excess(grid, center, h, &ex)?;
        let ratio = s.volume / h.powf(half_n);
        scan.volumes.push(s.volume);
        scan.ratios.push(ratio);
        scan.contained.push(s.compactly_contained);
        if s.compactly_contained {
            scan.min_ratio = scan.min_ratio.min(ratio);
            scan.max_ratio = scan.max_ratio.max(ratio);
        }
    }
    scan.spread = scan.max_ratio / scan.min_ratio;
    Ok(scan)
}

/// Result of [`inclusion_probe`].
#[derive(Clone, Debug, Serialize)]
pub struct InclusionProbe {
    /// Largest admissible `c` per sample, `None` for skipped samples.
    pub margins: Vec<Option<f64>>,
    pub skipped: usize,
    /// Minimum over samples: the observed proxy for `c₀(s − r)^{p₁}`.
    pub min_margin: f64,
}

/// For each sample `x1 ∈ S_u(x0, r·t)`, the threshold `c` such that
/// `S_u(x1, c·t) ⊆ S_u(x0, s·t)` holds for all smaller heights. Computed
/// exactly over the lattice as the least excess (relative to `x1`) of any
/// interior node outside `S_u(x0, s·t)`.
pub fn inclusion_probe(
    u: &Potential,
    x0: &Point,
    t: f64,
    r: f64,
    s: f64,
    samples: &[Point],
) -> Result<InclusionProbe> {
    if !(0.0 < r && r < s && s <= 1.0) || !(t > 0.0) {
        return Err(Error::invalid("inclusion probe needs t > 0 and 0 < r < s <= 1"));
    }
    let grid = &u.grid;
    let center = resolve_center(u, x0)?;
    let ex0 = excess(u, center);
    let outer = section_from_excess(grid, center, 2.0 * t, &ex0)?;
    if !outer.compactly_contained {
        return Err(Error::invalid("S_u(x0, 2t) is not compactly contained"));
    }
    let outside: Vec<usize> = grid.interior.iter().copied().filter(|i| ex0[*i] >= s * t).collect();
    let mut margins = Vec::with_capacity(samples.len());
    let mut skipped = 0;
    for x1 in samples {
        let n1 = grid.nearest_node(x1);
        if !grid.is_interior(n1) || ex0[n1] >= r * t {
            skipped += 1;
            margins.push(None);
            continue;
        }
        let ex1 = excess(u, n1);
        let c = outside.iter().map(|i| ex1[*i]).fold(f64::INFINITY, f64::min) / t;
        margins.push(Some(c));
    }
    let min_margin = margins.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    Ok(InclusionProbe {
        margins,
        skipped,
        min_margin,
    })
}

/// Boundary size of a section and the convex-surface bound `n|S|/r`.
#[derive(Clone, Debug, Serialize)]
pub struct BoundaryMeasure {
    pub measure: f64,
    pub inscribed_radius: f64,
    pub bound: f64,
    pub holds: bool,
}

fn seg_dist2(p: &[f64; 2], a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let l2 = d[0] * d[0] + d[1] * d[1];
    let t = if l2 > 0.0 {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / l2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * d[0] - p[0], a[1] + t * d[1] - p[1]];
    q[0] * q[0] + q[1] * q[1]
}

fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: &Point, b: &Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Squared distance from `p` to triangle `abc` (closest-point by Voronoi regions).
fn tri_dist2(p: &Point, tri: &[Point; 3]) -> f64 {
    let [a, b, c] = tri;
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(&ab, &ap);
    let d2 = dot(&ac, &ap);
    let closest = |q: Point| dist2(&q, p);
    if d1 <= 0.0 && d2 <= 0.0 {
        return closest(*a);
    }
    let bp = sub(p, b);
    let d3 = dot(&ab, &bp);
    let d4 = dot(&ac, &bp);
    if d3 >= 0.0 && d4 <= d3 {
        return closest(*b);
    }
    let lerp = |u: &Point, v: &Point, t: f64| [u[0] + t * v[0], u[1] + t * v[1], u[2] + t * v[2]];
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return closest(lerp(a, &ab, d1 / (d1 - d3)));
    }
    let cp = sub(p, c);
    let d5 = dot(&ab, &cp);
    let d6 = dot(&ac, &cp);
    if d6 >= 0.0 && d5 <= d6 {
        return closest(*c);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return closest(lerp(a, &ac, d2 / (d2 - d6)));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let bc = sub(c, b);
        return closest(lerp(b, &bc, (d4 - d3) / ((d4 - d3) + (d5 - d6))));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    closest([
        a[0] + ab[0] * v + ac[0] * w,
        a[1] + ab[1] * v + ac[1] * w,
        a[2] + ab[2] * v + ac[2] * w,
    ])
}

/// Perimeter (n = 2) or surface area (n = 3) of the traced boundary, with the
/// largest inscribed radius found over cell centers and the bound `n|S|/r`.
pub fn boundary_measure(section: &Section, grid: &Grid) -> Result<BoundaryMeasure> {
    let trace = section.boundary.as_ref().ok_or(Error::DisconnectedBoundary {
        loops: section.trace_defect.0,
        open: section.trace_defect.1,
    })?;
    let (measure, radius) = match trace {
        BoundaryTrace::Polyline(poly) => {
            let m = poly.len();
            let len: f64 = (0..m)
                .map(|k| {
                    let (a, b) = (poly[k], poly[(k + 1) % m]);
                    (b[0] - a[0]).hypot(b[1] - a[1])
                })
                .sum();
            let mut best = 0.0_f64;
            for &c in &section.cells {
                let x = grid.point(c);
                let p = [x[0], x[1]];
                let mut d = f64::INFINITY;
                for k in 0..m {
                    d = d.min(seg_dist2(&p, &poly[k], &poly[(k + 1) % m]));
                    if d <= best {
                        break;
                    }
                }
                best = best.max(d);
            }
            (len, best.sqrt())
        }
        BoundaryTrace::Surface(tris) => {
            let area: f64 = tris
                .iter()
                .map(|t| {
                    let c = cross(&sub(&t[1], &t[0]), &sub(&t[2], &t[0]));
                    0.5 * dot(&c, &c).sqrt()
                })
                .sum();
            let mut best = 0.0_f64;
            for &c in &section.cells {
                let x = grid.point(c);
                let mut d = f64::INFINITY;
                for t in tris {
                    d = d.min(tri_dist2(&x, t));
                    if d <= best {
                        break;
                    }
                }
                best = best.max(d);
            }
            (area, best.sqrt())
        }
    };
    let bound = grid.n as f64 * section.volume / radius;
    Ok(BoundaryMeasure {
        measure,
        inscribed_radius: radius,
        bound,
        holds: measure <= bound,
    })
}

/// Growth condition `|μ|(S_u(z, s)) ≤ M0 s^{(n−2)/2 + ε}`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MeasureGrowthSpec {
    pub m0: f64,
    pub epsilon: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MeasureGrowthReport {
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    pub pass: bool,
}

/// `|μ|(S) = Σ_cells |μ| · cell measure`.
pub fn section_mass(grid: &Grid, mu: &[f64], section: &Section) -> f64 {
    section.cells.iter().map(|c| mu[*c].abs()).sum::<f64>() * grid.cell_measure()
}

pub fn measure_growth_check(
    mu: &ScalarField,
    u: &Potential,
    spec: MeasureGrowthSpec,
    sections: &[Section],
) -> Result<MeasureGrowthReport> {
    if !(spec.epsilon > 0.0) || spec.m0 < 0.0 {
        return Err(Error::invalid("measure growth needs epsilon > 0 and M0 >= 0"));
    }
    let n = u.grid.n as f64;
    let ratios: Vec<f64> = sections
        .iter()
        .map(|s| section_mass(&u.grid, mu, s) / s.height.powf((n - 2.0) / 2.0 + spec.epsilon))
        .collect();
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    Ok(MeasureGrowthReport {
        pass: max_ratio <= spec.m0,
        ratios,
        max_ratio,
    })
}

/// Number of interior nodes strictly inside the convex hull of the cells, not
/// in the section, and with every axis neighbour also inside the hull
/// (n = 2 only; `None` otherwise).
pub fn hull_defects(section: &Section, grid: &Grid) -> Option<usize> {
    if grid.n != 2 {
        return None;
    }
    let pts: Vec<[f64; 2]> = section.cells.iter().map(|c| {
        let x = grid.point(*c);
        [x[0], x[1]]
    }).collect();
    let hull = convex_hull_2d(&pts);
    if hull.len() < 3 {
        return Some(0);
    }
    let (lo, hi) = bbox(grid, &section.cells);
    let inside = |i: usize| {
        let x = grid.point(i);
        inside_convex_polygon(&hull, &[x[0], x[1]])
    };
    let mut count = 0;
    for i in lo[0]..=hi[0] {
        for j in lo[1]..=hi[1] {
            let idx = grid.index([i, j, 0]);
            if !grid.is_interior(idx) || section.contains(idx) || !inside(idx) {
                continue;
            }
            let deep = (0..2).all(|a| {
                [-1, 1].iter().all(|s| grid.neighbor(idx, a, *s).is_some_and(|q| inside(q)))
            });
            if deep {
                count += 1;
            }
        }
    }
    Some(count)
}

/// Largest height (to relative precision 1e-3) for which the section at `x0`
/// stays compactly contained.
pub fn max_interior_height(u: &Potential, x0: &Point) -> Result<f64> {
    let grid = &u.grid;
    let center = resolve_center(u, x0)?;
    let ex = excess(u, center);
    let floor = grid.spacing * grid.spacing;
    let contained = |h: f64| section_from_excess(grid, center, h, &ex).map(|s| s.compactly_contained);
    if !contained(floor)? {
        return Ok(0.0);
    }
    let mut lo = floor;
    let mut hi = floor * 2.0;
    while contained(hi)? {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Ok(f64::INFINITY);
        }
    }
    while hi - lo > 1e-3 * lo {
        let mid = 0.5 * (lo + hi);
        if contained(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, DomainSpec};
    use crate::potentials::{make_potential, PotentialSpec};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn pot(spec: PotentialSpec, dom: DomainSpec, res: usize) -> Potential {
        make_potential(&spec, Arc::new(build_grid(&dom, res).unwrap())).unwrap()
    }

    #[test]
    fn disc_section_volume_and_perimeter() {
        let u = pot(PotentialSpec::identity(), DomainSpec::ball(2, 1.0), 257);
        let s = extract_section(&u, &[0.0; 3], 0.08).unwrap();
        assert!(s.compactly_contained);
        assert!((s.volume / (PI * 0.16) - 1.0).abs() < 0.05);
        let b = boundary_measure(&s, &u.grid).unwrap();
        assert!((b.measure / (2.0 * PI * 0.4) - 1.0).abs() < 0.05);
        assert!(b.holds);
        assert_eq!(hull_defects(&s, &u.grid), Some(0));
    }

    #[test]
    fn anisotropic_section_is_ellipse() {
        let u = pot(
            PotentialSpec::Anisotropic { epsilon: 0.25 },
            DomainSpec::ball(2, 1.0),
            257,
        );
        let s = extract_section(&u, &[0.0; 3], 0.02).unwrap();
        assert!((s.volume / (PI * 0.1 * 0.4) - 1.0).abs() < 0.05);
        // Ramanujan's second approximation is accurate to ~1e-7 here
        let (a, b) = (0.4_f64, 0.1_f64);
        let hh = ((a - b) / (a + b)).powi(2);
        let exact = PI * (a + b) * (1.0 + 3.0 * hh / (10.0 + (4.0 - 3.0 * hh).sqrt()));
        let m = boundary_measure(&s, &u.grid).unwrap();
        assert!((m.measure / exact - 1.0).abs() < 0.05);
    }

    #[test]
    fn height_floor_rejected() {
        let u = pot(PotentialSpec::identity(), DomainSpec::ball(2, 1.0), 33);
        let h = u.grid.spacing.powi(2) * 0.5;
        assert!(matches!(extract_section(&u, &[0.0; 3], h), Err(Error::EmptySection { .. })));
    }

    #[test]
    fn sections_are_nested() {
        let u = pot(PotentialSpec::Perturbed { delta: 0.05 }, DomainSpec::cube(2, 0.0, 1.0), 65);
        let x0 = [0.4, 0.5, 0.0];
        let a = extract_section(&u, &x0, 0.01).unwrap();
        let b = extract_section(&u, &x0, 0.03).unwrap();
        assert!(a.cells.iter().all(|c| b.contains(*c)));
        assert_eq!(hull_defects(&b, &u.grid), Some(0));
    }

    #[test]
    fn volume_scan_constant_for_quadratic() {
        let u = pot(PotentialSpec::identity(), DomainSpec::ball(2, 1.0), 257);
        let hs = [0.01, 0.02, 0.04, 0.08];
        let scan = volume_ratio_scan(&u, &[0.0; 3], &hs).unwrap();
        for r in &scan.ratios {
            assert!((r / (2.0 * PI) - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn inclusion_threshold_on_disc() {
        let u = pot(PotentialSpec::identity(), DomainSpec::ball(2, 1.0), 257);
        let (t, r, s): (f64, f64, f64) = (0.1, 0.25, 0.5);
        let rad = (2.0 * r * t).sqrt() * 0.98;
        let samples: Vec<Point> = (0..8)
            .map(|k| {
                let a = k as f64 * PI / 4.0;
                [rad * a.cos(), rad * a.sin(), 0.0]
            })
            .collect();
        let p = inclusion_probe(&u, &[0.0; 3], t, r, s, &samples).unwrap();
        assert_eq!(p.skipped, 0);
        for (x1, c) in samples.iter().zip(&p.margins) {
            let y = u.grid.point(u.grid.nearest_node(x1));
            let exact = (s.sqrt() - (y[0].hypot(y[1])) / (2.0 * t).sqrt()).powi(2);
            assert!((c.unwrap() / exact - 1.0).abs() < 0.1, "{c:?} vs {exact}");
        }
        assert!(p.min_margin >= (s.sqrt() - r.sqrt()).powi(2));
        let far = inclusion_probe(&u, &[0.0; 3], t, r, s, &[[0.5, 0.0, 0.0]]).unwrap();
        assert_eq!(far.skipped, 1);
    }

    #[test]
    fn ball_section_surface_area() {
        let u = pot(PotentialSpec::identity(), DomainSpec::cube(3, -1.0, 1.0), 49);
        let s = extract_section(&u, &[0.0; 3], 0.18).unwrap();
        let m = boundary_measure(&s, &u.grid).unwrap();
        let r: f64 = 0.6;
        assert!((m.measure / (4.0 * PI * r * r) - 1.0).abs() < 0.05, "{}", m.measure);
        assert!(m.holds);
    }

    #[test]
    fn measure_growth_examples() {
        let u = pot(PotentialSpec::identity(), DomainSpec::ball(2, 1.0), 129);
        let secs: Vec<Section> = [0.02, 0.05]
            .iter()
            .map(|h| extract_section(&u, &[0.0; 3], *h).unwrap())
            .collect();
        let zero = ScalarField::zeros(&u.grid);
        let spec = MeasureGrowthSpec { m0: 0.0, epsilon: 1.0 };
        assert!(measure_growth_check(&zero, &u, spec, &secs).unwrap().pass);
        let one = ScalarField::from_fn(&u.grid, |_| 1.0);
        let r = measure_growth_check(&one, &u, MeasureGrowthSpec { m0: 2.0 * PI * 1.05, epsilon: 1.0 }, &secs).unwrap();
        assert!(r.pass);
        assert!((r.max_ratio / (2.0 * PI) - 1.0).abs() < 0.05);
    }

    #[test]
    fn boundary_section_flagged() {
        let u = pot(PotentialSpec::identity(), DomainSpec::ball(2, 1.0), 65);
        let s = extract_section(&u, &[0.7, 0.0, 0.0], 0.1).unwrap();
        assert!(!s.compactly_contained);
        assert!(boundary_measure(&s, &u.grid).is_err());
        let h = max_interior_height(&u, &[0.5, 0.0, 0.0]).unwrap();
        assert!((h - 0.125).abs() < 0.02, "{h}");
    }
}
