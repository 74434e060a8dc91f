//! Convex Monge–Ampère potentials: the analytic family, the numerical Newton
//! solver for `det D²u = f`, cofactor and determinant fields, and the discrete
//! Legendre transform.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    dist2, dot3, fd_gradient, fd_hessian, hessian_at, BoundaryMode, Grid, MatrixField, NodeKind,
    Point, ScalarField, VectorField,
};
use crate::linalg::{bicgstab, max_abs, pcg, Csr, SymMat};

use std::f64::consts::PI;

fn one() -> f64 {
    1.0
}

/// Registered analytic potentials, addressed by `name` in configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum PotentialSpec {
    /// `x·Ax/2`; identity when `matrix` is absent.
    Quadratic {
        #[serde(default)]
        matrix: Option<Vec<Vec<f64>>>,
    },
    /// `x₁²/(2ε) + ε x₂²/2` (n = 2, det ≡ 1).
    Anisotropic { epsilon: f64 },
    /// `c |x|^{1+α}`.
    RadialPower {
        alpha: f64,
        #[serde(default = "one")]
        c: f64,
    },
    /// `|x|²/2 + δ Πᵢ sin(π xᵢ)`.
    Perturbed { delta: f64 },
}

pub const REGISTRY: [&str; 4] = ["anisotropic", "perturbed", "quadratic", "radial-power"];

impl PotentialSpec {
    pub fn name(&self) -> &'static str {
        match self {
            PotentialSpec::Quadratic { .. } => "quadratic",
            PotentialSpec::Anisotropic { .. } => "anisotropic",
            PotentialSpec::RadialPower { .. } => "radial-power",
            PotentialSpec::Perturbed { .. } => "perturbed",
        }
    }

    pub fn identity() -> Self {
        PotentialSpec::Quadratic { matrix: None }
    }

    pub fn quadratic(a: &SymMat) -> Self {
        let m = (0..a.n).map(|i| (0..a.n).map(|j| a.a[i][j]).collect()).collect();
        PotentialSpec::Quadratic { matrix: Some(m) }
    }

    fn matrix(&self, n: usize) -> Result<SymMat> {
        match self {
            PotentialSpec::Quadratic { matrix: None } => Ok(SymMat::identity(n)),
            PotentialSpec::Quadratic { matrix: Some(m) } => {
                if m.len() != n || m.iter().any(|r| r.len() != n) {
                    return Err(Error::invalid(format!("quadratic matrix must be {n}x{n}")));
                }
                let mut a = SymMat::zeros(n);
                for i in 0..n {
                    for j in 0..n {
                        a.a[i][j] = m[i][j];
                    }
                }
                if a.asymmetry() > 1e-14 * a.max_abs().max(1.0) {
                    return Err(Error::invalid("quadratic matrix is not symmetric"));
                }
                Ok(a)
            }
            _ => unreachable!(),
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            PotentialSpec::Quadratic { .. } => {
                let a = self.matrix(n)?;
                if a.min_eigenvalue() <= 0.0 {
                    return Err(Error::invalid("quadratic matrix is not positive definite"));
                }
            }
            PotentialSpec::Anisotropic { epsilon } => {
                if n != 2 {
                    return Err(Error::invalid("anisotropic potential is two-dimensional"));
                }
                if !(*epsilon > 0.0) {
                    return Err(Error::invalid("anisotropy epsilon must be positive"));
                }
            }
            PotentialSpec::RadialPower { alpha, c } => {
                if !(*alpha > 0.0) || !(*c > 0.0) {
                    return Err(Error::invalid("radial power needs alpha > 0 and c > 0"));
                }
            }
            PotentialSpec::Perturbed { delta } => {
                if !delta.is_finite() {
                    return Err(Error::invalid("perturbation amplitude must be finite"));
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, x: &Point, n: usize) -> f64 {
        match self {
            PotentialSpec::Quadratic { .. } => 0.5 * self.matrix(n).unwrap().quad(x),
            PotentialSpec::Anisotropic { epsilon: e } => x[0] * x[0] / (2.0 * e) + e * x[1] * x[1] / 2.0,
            PotentialSpec::RadialPower { alpha, c } => {
                c * (0..n).map(|i| x[i] * x[i]).sum::<f64>().sqrt().powf(1.0 + alpha)
            }
            PotentialSpec::Perturbed { delta } => {
                0.5 * (0..n).map(|i| x[i] * x[i]).sum::<f64>()
                    + delta * (0..n).map(|i| (PI * x[i]).sin()).product::<f64>()
            }
        }
    }

    pub fn gradient(&self, x: &Point, n: usize) -> Point {
        let mut g = [0.0; 3];
        match self {
            PotentialSpec::Quadratic { .. } => g = self.matrix(n).unwrap().mul_vec(x),
            PotentialSpec::Anisotropic { epsilon: e } => {
                g[0] = x[0] / e;
                g[1] = e * x[1];
            }
            PotentialSpec::RadialPower { alpha, c } => {
                let r = (0..n).map(|i| x[i] * x[i]).sum::<f64>().sqrt();
                if r > 0.0 {
                    let s = c * (1.0 + alpha) * r.powf(alpha - 1.0);
                    for i in 0..n {
                        g[i] = s * x[i];
                    }
                }
            }
            PotentialSpec::Perturbed { delta } => {
                for i in 0..n {
                    let others: f64 = (0..n).filter(|j| *j != i).map(|j| (PI * x[j]).sin()).product();
                    g[i] = x[i] + delta * PI * (PI * x[i]).cos() * others;
                }
            }
        }
        g
    }

    /// Closed-form Hessian. For the radial power family at the origin the
    /// closed form is singular or degenerate, so it is evaluated at distance
    /// `r_min` along the first axis instead.
    pub fn hessian(&self, x: &Point, n: usize, r_min: f64) -> SymMat {
        match self {
            PotentialSpec::Quadratic { .. } => self.matrix(n).unwrap(),
            PotentialSpec::Anisotropic { epsilon: e } => SymMat::diag(2, &[1.0 / e, *e]),
            PotentialSpec::RadialPower { alpha, c } => {
                let mut y = *x;
                let mut r = (0..n).map(|i| y[i] * y[i]).sum::<f64>().sqrt();
                if r < r_min {
                    y = [r_min, 0.0, 0.0];
                    r = r_min;
                }
                let p = 1.0 + alpha;
                let s = c * p * r.powf(p - 2.0);
                let mut m = SymMat::zeros(n);
                for i in 0..n {
                    for j in 0..n {
                        let d = if i == j { 1.0 } else { 0.0 };
                        m.a[i][j] = s * (d + (p - 2.0) * y[i] * y[j] / (r * r));
                    }
                }
                m
            }
            PotentialSpec::Perturbed { delta } => {
                let sn: Vec<f64> = (0..n).map(|i| (PI * x[i]).sin()).collect();
                let cs: Vec<f64> = (0..n).map(|i| (PI * x[i]).cos()).collect();
                let mut m = SymMat::zeros(n);
                for i in 0..n {
                    for j in 0..n {
                        m.a[i][j] = if i == j {
                            1.0 - delta * PI * PI * sn.iter().product::<f64>()
                        } else {
                            let rest: f64 = (0..n).filter(|k| *k != i && *k != j).map(|k| sn[k]).product();
                            delta * PI * PI * cs[i] * cs[j] * rest
                        };
                    }
                }
                m
            }
        }
    }
}

/// Convex function sampled on a grid together with its derivative fields.
#[derive(Clone, Debug)]
pub struct Potential {
    pub grid: Arc<Grid>,
    pub values: ScalarField,
    pub gradient: VectorField,
    pub hessian: MatrixField,
    pub spec: Option<PotentialSpec>,
    /// Measured `(min, max)` of `det D²u` over interior nodes.
    pub pinching: (f64, f64),
}

impl Potential {
    /// Potential from sampled values; derivatives by finite differences.
    pub fn from_values(grid: Arc<Grid>, values: ScalarField) -> Self {
        let gradient = fd_gradient(&grid, &values);
        let hessian = fd_hessian(&grid, &values);
        let (_, lo, hi) = det_field(&grid, &hessian);
        Potential {
            grid,
            values,
            gradient,
            hessian,
            spec: None,
            pinching: (lo, hi),
        }
    }

    /// Potential with closed-form value, gradient and Hessian at every node.
    pub fn from_closed_form(
        grid: Arc<Grid>,
        value: impl Fn(&Point) -> f64,
        grad: impl Fn(&Point) -> Point,
        hess: impl Fn(&Point) -> SymMat,
    ) -> Self {
        let values = ScalarField::from_fn(&grid, &value);
        let mut gradient = vec![[0.0; 3]; grid.num_nodes()];
        let mut hessian = vec![SymMat::zeros(grid.n); grid.num_nodes()];
        for i in 0..grid.num_nodes() {
            if grid.is_defined(i) {
                let x = grid.point(i);
                gradient[i] = grad(&x);
                hessian[i] = hess(&x);
            }
        }
        let hessian = MatrixField(hessian);
        let (_, lo, hi) = det_field(&grid, &hessian);
        Potential {
            grid,
            values,
            gradient: VectorField(gradient),
            hessian,
            spec: None,
            pinching: (lo, hi),
        }
    }

    pub fn n(&self) -> usize {
        self.grid.n
    }

    pub fn name(&self) -> &'static str {
        self.spec.as_ref().map(|s| s.name()).unwrap_or("numeric")
    }

    pub fn cofactor(&self) -> Result<MatrixField> {
        cofactor(&self.grid, &self.hessian)
    }

    /// Supporting affine function at node `x0`: `ℓ(x) = u(x0) + Du(x0)·(x − x0)`.
    pub fn support_at(&self, x0: usize) -> impl Fn(&Point) -> f64 + '_ {
        let p0 = self.grid.point(x0);
        let u0 = self.values[x0];
        let g0 = self.gradient[x0];
        move |x: &Point| u0 + (0..3).map(|i| g0[i] * (x[i] - p0[i])).sum::<f64>()
    }
}

/// Samples a registered potential. Rejects descriptors whose Hessian is not
/// positive definite at some interior or boundary node.
pub fn make_potential(spec: &PotentialSpec, grid: Arc<Grid>) -> Result<Potential> {
    let n = grid.n;
    spec.validate(n)?;
    let r_min = 0.5 * grid.spacing;
    let mut p = Potential::from_closed_form(
        grid.clone(),
        |x| spec.value(x, n),
        |x| spec.gradient(x, n),
        |x| spec.hessian(x, n, r_min),
    );
    for i in 0..grid.num_nodes() {
        if !grid.is_defined(i) {
            continue;
        }
        let h = &p.hessian[i];
        let ev = h.min_eigenvalue();
        if !(ev > 1e-10 * h.max_abs().max(1.0)) {
            return Err(Error::NotPositiveDefinite { node: i, min_eig: ev });
        }
    }
    p.spec = Some(spec.clone());
    Ok(p)
}

/// Adjugate of every interior and boundary Hessian. Exterior nodes get zero.
pub fn cofactor(grid: &Grid, hess: &MatrixField) -> Result<MatrixField> {
    let mut out = vec![SymMat::zeros(grid.n); hess.len()];
    for i in 0..hess.len() {
        if !grid.is_defined(i) {
            continue;
        }
        let ev = hess[i].min_eigenvalue();
        if !(ev > 0.0) {
            return Err(Error::NotPositiveDefinite { node: i, min_eig: ev });
        }
        out[i] = hess[i].adjugate();
    }
    Ok(MatrixField(out))
}

/// Pointwise determinant with `(min, max)` over interior nodes.
pub fn det_field(grid: &Grid, hess: &MatrixField) -> (ScalarField, f64, f64) {
    let det: Vec<f64> = hess.iter().map(|m| m.det()).collect();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &i in &grid.interior {
        lo = lo.min(det[i]);
        hi = hi.max(det[i]);
    }
    (ScalarField(det), lo, hi)
}

/// Solves `Δv = s` in the interior with `v = b` on boundary nodes.
pub fn poisson_dirichlet(grid: &Grid, source: &[f64], boundary: &[f64]) -> Result<ScalarField> {
    let h2 = grid.spacing * grid.spacing;
    let m = grid.interior.len();
    let mut trip = Vec::with_capacity(m * (2 * grid.n + 1));
    let mut rhs = vec![0.0; m];
    for (row, &i) in grid.interior.iter().enumerate() {
        trip.push((row, row, 2.0 * grid.n as f64 / h2));
        rhs[row] = -source[i];
        for a in 0..grid.n {
            for s in [-1, 1] {
                let j = grid.neighbor(i, a, s).unwrap();
                if grid.is_interior(j) {
                    trip.push((row, grid.interior_pos[j], -1.0 / h2));
                } else {
                    rhs[row] += boundary[j] / h2;
                }
            }
        }
    }
    let a = Csr::from_triplets(m, m, trip);
    let mut x = vec![0.0; m];
    pcg(&a, &rhs, &mut x, 1e-12, 20000)?;
    let mut v = ScalarField(boundary.to_vec());
    for (row, &i) in grid.interior.iter().enumerate() {
        v[i] = x[row];
    }
    for (i, k) in grid.kinds.iter().enumerate() {
        if *k == NodeKind::Exterior {
            v[i] = 0.0;
        }
    }
    Ok(v)
}

/// Controls for [`solve_monge_ampere`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub eigenvalue_floor: f64,
    pub max_halvings: usize,
    pub linear_max_iterations: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tolerance: 1e-8,
            max_iterations: 60,
            eigenvalue_floor: 1e-8,
            max_halvings: 20,
            linear_max_iterations: 20000,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct NewtonReport {
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub linear_iterations: usize,
}

fn ma_residual(grid: &Grid, u: &[f64], f: &[f64]) -> Vec<f64> {
    grid.interior
        .iter()
        .map(|&i| hessian_at(grid, u, i).det() - f[i])
        .collect()
}

/// Jacobian of `u ↦ det D²_h u` on interior unknowns: `U^{ij} D_ij` with the
/// same stencils as the Hessian, `U` the cofactor of the floored Hessian.
fn ma_jacobian(grid: &Grid, u: &[f64], floor: f64) -> Csr {
    let h2 = grid.spacing * grid.spacing;
    let n = grid.n;
    let m = grid.interior.len();
    let mut trip = Vec::with_capacity(m * if n == 2 { 9 } else { 19 });
    for (row, &i) in grid.interior.iter().enumerate() {
        let cof = hessian_at(grid, u, i).with_eigenvalue_floor(floor).adjugate();
        let mut push = |j: usize, v: f64| {
            if grid.is_interior(j) {
                trip.push((row, grid.interior_pos[j], v));
            }
        };
        for a in 0..n {
            push(i, -2.0 * cof.a[a][a] / h2);
            push(grid.neighbor(i, a, 1).unwrap(), cof.a[a][a] / h2);
            push(grid.neighbor(i, a, -1).unwrap(), cof.a[a][a] / h2);
            for b in a + 1..n {
                for (sa, sb) in [(1, 1), (1, -1), (-1, 1), (-1, -1)] {
                    let mut o = [0isize; 3];
                    o[a] = sa;
                    o[b] = sb;
                    let c = (sa * sb) as f64 * cof.a[a][b] / (2.0 * h2);
                    push(grid.offset(i, &o).unwrap(), c);
                }
            }
        }
    }
    Csr::from_triplets(m, m, trip)
}

/// Damped Newton iteration for `det D²u = f` with `u = φ` on boundary nodes.
///
/// The start is the Poisson solution of `Δu = n f^{1/n}` unless `initial`
/// is given. Each step solves the linearization with the cofactor of the
/// current Hessian (eigenvalues floored) and backtracks by halving until the
/// max-norm residual decreases.
pub fn solve_monge_ampere(
    grid: &Arc<Grid>,
    f: &ScalarField,
    phi: &ScalarField,
    initial: Option<&ScalarField>,
    opts: &NewtonOptions,
) -> Result<(Potential, NewtonReport)> {
    let n = grid.n as f64;
    for &i in &grid.interior {
        if !(f[i] > 0.0) {
            return Err(Error::invalid(format!(
                "Monge-Ampere right-hand side must be positive, found {} at node {i}",
                f[i]
            )));
        }
    }
    let mut u = match initial {
        Some(u0) => {
            let mut u = u0.clone();
            for &b in &grid.boundary {
                u[b] = phi[b];
            }
            u
        }
        None => {
            let src: Vec<f64> = f.iter().map(|v| n * v.max(0.0).powf(1.0 / n)).collect();
            poisson_dirichlet(grid, &src, phi)?
        }
    };
    let mut res = ma_residual(grid, &u, f);
    let mut rnorm = max_abs(&res);
    let mut history = vec![rnorm];
    let mut linear_iterations = 0;
    let mut it = 0;
    while rnorm >= opts.tolerance {
        if it >= opts.max_iterations {
            return Err(Error::NoConvergence {
                solver: "monge-ampere newton",
                iterations: it,
                residual: rnorm,
            });
        }
        let jac = ma_jacobian(grid, &u, opts.eigenvalue_floor);
        let rhs: Vec<f64> = res.iter().map(|r| -r).collect();
        let mut delta = vec![0.0; rhs.len()];
        // inexact Newton: the inner tolerance tracks the outer residual
        let inner = (0.1 * rnorm).clamp(1e-11, 1e-3);
        let st = bicgstab(&jac, &rhs, &mut delta, inner, opts.linear_max_iterations)?;
        linear_iterations += st.iterations;
        let mut step = 1.0;
        let mut accepted = false;
        let mut trial = u.clone();
        for _ in 0..=opts.max_halvings {
            for (row, &i) in grid.interior.iter().enumerate() {
                trial[i] = u[i] + step * delta[row];
            }
            let r = ma_residual(grid, &trial, f);
            let rn = max_abs(&r);
            if rn < rnorm {
                u.0.copy_from_slice(&trial);
                res = r;
                rnorm = rn;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        history.push(rnorm);
        it += 1;
        if !accepted {
            return Err(Error::Stagnation { history });
        }
    }
    let pot = Potential::from_values(grid.clone(), u);
    for &i in &grid.interior {
        let ev = pot.hessian[i].min_eigenvalue();
        if !(ev > 0.0) {
            return Err(Error::NotPositiveDefinite { node: i, min_eig: ev });
        }
    }
    Ok((
        pot,
        NewtonReport {
            iterations: it,
            residual_history: history,
            linear_iterations,
        },
    ))
}

/// Discrete Legendre transform sampled on a dual grid.
#[derive(Clone, Debug)]
pub struct LegendreTransform {
    pub dual: Arc<Grid>,
    /// `u*(y)`; `NaN` at exterior samples.
    pub values: ScalarField,
    /// True where `y` was judged outside the gradient image `Du(Ω)`.
    pub exterior: Vec<bool>,
    /// Maximizing primal node per dual node.
    pub argmax: Vec<usize>,
    /// Refined maximizer `x(y)` (so that `Du(x(y)) ≈ y`).
    pub preimage: Vec<Point>,
}

fn support_value(grid: &Grid, u: &[f64], i: usize, y: &Point) -> f64 {
    dot3(&grid.point(i), y) - u[i]
}

/// Local ascent of `x ↦ x·y − u(x)` over the 3ⁿ neighbourhood, started at `start`.
fn climb(grid: &Grid, u: &[f64], y: &Point, start: usize, offs: &[[isize; 3]]) -> usize {
    let mut best = start;
    let mut val = support_value(grid, u, best, y);
    loop {
        let mut moved = false;
        for o in offs {
            if let Some(j) = grid.offset(best, o) {
                if grid.is_defined(j) {
                    let v = support_value(grid, u, j, y);
                    if v > val {
                        val = v;
                        best = j;
                        moved = true;
                    }
                }
            }
        }
        if !moved {
            return best;
        }
    }
}

/// Monotone-chain convex hull of planar points, counter-clockwise.
pub fn convex_hull_2d(pts: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut p = pts.to_vec();
    p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let cross = |o: &[f64; 2], a: &[f64; 2], b: &[f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * p.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(p.iter())
        } else {
            Box::new(p.iter().rev())
        };
        for q in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(*q);
        }
        hull.pop();
    }
    hull
}

/// True if `y` lies strictly inside the counter-clockwise polygon `hull`.
pub fn inside_convex_polygon(hull: &[[f64; 2]], y: &[f64; 2]) -> bool {
    if hull.len() < 3 {
        return false;
    }
    (0..hull.len()).all(|k| {
        let a = hull[k];
        let b = hull[(k + 1) % hull.len()];
        (b[0] - a[0]) * (y[1] - a[1]) - (b[1] - a[1]) * (y[0] - a[0]) > 0.0
    })
}

/// `u*(y) = max_x (x·y − u(x))` over interior and boundary nodes, refined by a
/// local quadratic model around the maximizing node.
///
/// A dual sample is exterior when its maximizer is a boundary node or touches
/// one (the gradient image there is not resolved), and in two dimensions also
/// when it falls outside the convex hull of the interior gradient samples.
pub fn legendre_transform(u: &Potential, dual: Arc<Grid>) -> Result<LegendreTransform> {
    let grid = &u.grid;
    if dual.n != grid.n {
        return Err(Error::invalid("dual grid dimension differs from the primal grid"));
    }
    let offs = grid.neighbourhood_offsets();
    let hull = if grid.n == 2 {
        let pts: Vec<[f64; 2]> = grid.interior.iter().map(|&i| [u.gradient[i][0], u.gradient[i][1]]).collect();
        Some(convex_hull_2d(&pts))
    } else {
        None
    };
    let nd = dual.num_nodes();
    let mut values = vec![f64::NAN; nd];
    let mut exterior = vec![true; nd];
    let mut argmax = vec![usize::MAX; nd];
    let mut preimage = vec![[0.0; 3]; nd];
    // seed each climb from the previous dual node's maximizer
    let mut seed = grid.interior[0];
    let mut seeded = false;
    for k in 0..nd {
        if !dual.is_defined(k) {
            continue;
        }
        let y = dual.point(k);
        if !seeded {
            seeded = true;
            seed = *grid
                .interior
                .iter()
                .min_by(|a, b| dist2(&u.gradient[**a], &y).total_cmp(&dist2(&u.gradient[**b], &y)))
                .unwrap();
        }
        let best = climb(grid, &u.values, &y, seed, &offs);
        seed = best;
        argmax[k] = best;
        let inside = grid.is_interior(best)
            && !grid.touches_boundary(best)
            && hull.as_ref().map_or(true, |h| inside_convex_polygon(h, &[y[0], y[1]]));
        if !inside {
            continue;
        }
        let x0 = grid.point(best);
        let hinv = u.hessian[best].inverse().ok_or(Error::NotPositiveDefinite {
            node: best,
            min_eig: u.hessian[best].min_eigenvalue(),
        })?;
        let mut d = [0.0; 3];
        for a in 0..grid.n {
            d[a] = y[a] - u.gradient[best][a];
        }
        let dx = hinv.mul_vec(&d);
        let mut x = x0;
        for a in 0..grid.n {
            x[a] += dx[a];
        }
        values[k] = dot3(&x0, &y) - u.values[best] + 0.5 * hinv.quad(&d);
        exterior[k] = false;
        preimage[k] = x;
    }
    Ok(LegendreTransform {
        dual,
        values: ScalarField(values),
        exterior,
        argmax,
        preimage,
    })
}

/// Boundary values of an analytic function on a grid's boundary nodes.
pub fn boundary_values(grid: &Grid, mode: BoundaryMode, f: impl Fn(&Point) -> f64) -> ScalarField {
    let mut v = ScalarField::zeros(grid);
    for &b in &grid.boundary {
        v[b] = f(&grid.data_point(b, mode));
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, DomainSpec};

    fn disc(res: usize) -> Arc<Grid> {
        Arc::new(build_grid(&DomainSpec::ball(2, 1.0), res).unwrap())
    }

    #[test]
    fn identity_quadratic_has_unit_cofactor() {
        let g = disc(17);
        let p = make_potential(&PotentialSpec::identity(), g.clone()).unwrap();
        let u = p.cofactor().unwrap();
        for &i in &g.interior {
            assert_eq!(u[i], SymMat::identity(2));
        }
        assert_eq!(p.pinching, (1.0, 1.0));
    }

    #[test]
    fn anisotropic_has_unit_determinant() {
        let g = disc(17);
        let p = make_potential(&PotentialSpec::Anisotropic { epsilon: 0.25 }, g.clone()).unwrap();
        let (d, lo, hi) = det_field(&g, &p.hessian);
        assert!((lo - 1.0).abs() < 1e-14 && (hi - 1.0).abs() < 1e-14);
        assert!(g.interior.iter().all(|&i| (d[i] - 1.0).abs() < 1e-14));
        let ev = p.hessian[g.interior[0]].eigenvalues();
        assert!((ev[0] - 0.25).abs() < 1e-14 && (ev[1] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn perturbed_determinant_range() {
        let g = Arc::new(build_grid(&DomainSpec::cube(2, 0.0, 1.0), 33).unwrap());
        let spec = PotentialSpec::Perturbed { delta: 0.05 };
        let p = make_potential(&spec, g.clone()).unwrap();
        // brute-force oracle on the same nodes
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &i in &g.interior {
            let x = g.point(i);
            let s = 0.05 * PI * PI;
            let (sx, sy) = ((PI * x[0]).sin(), (PI * x[1]).sin());
            let (cx, cy) = ((PI * x[0]).cos(), (PI * x[1]).cos());
            let d = (1.0 - s * sx * sy).powi(2) - (s * cx * cy).powi(2);
            lo = lo.min(d);
            hi = hi.max(d);
        }
        assert!((p.pinching.0 - lo).abs() < 1e-12 && (p.pinching.1 - hi).abs() < 1e-12);
        assert!(lo < hi && hi <= 1.0);
    }

    #[test]
    fn indefinite_descriptor_rejected() {
        let g = disc(9);
        let bad = PotentialSpec::Perturbed { delta: 1.0 };
        assert!(matches!(
            make_potential(&bad, Arc::new(build_grid(&DomainSpec::cube(2, 0.0, 1.0), 9).unwrap())),
            Err(Error::NotPositiveDefinite { .. })
        ));
        let q = PotentialSpec::Quadratic {
            matrix: Some(vec![vec![1.0, 2.0], vec![2.0, 1.0]]),
        };
        assert!(make_potential(&q, g).is_err());
    }

    #[test]
    fn cofactor_identity_for_every_family_member() {
        let g = disc(17);
        for spec in [
            PotentialSpec::identity(),
            PotentialSpec::Anisotropic { epsilon: 0.125 },
            PotentialSpec::RadialPower { alpha: 0.5, c: 1.0 },
            PotentialSpec::Perturbed { delta: 0.05 },
        ] {
            let p = make_potential(&spec, g.clone()).unwrap();
            let u = p.cofactor().unwrap();
            for &i in &g.interior {
                let prod = u[i].matmul(&p.hessian[i]);
                let d = p.hessian[i].det();
                for a in 0..2 {
                    for b in 0..2 {
                        let e = if a == b { d } else { 0.0 };
                        assert!((prod[a][b] - e).abs() <= 1e-10 * d.abs().max(1.0));
                    }
                }
            }
        }
    }

    #[test]
    fn cofactor_rejects_indefinite_node() {
        let g = disc(9);
        let mut h = MatrixField(vec![SymMat::identity(2); g.num_nodes()]);
        let bad = g.interior[3];
        h[bad] = SymMat::diag(2, &[1.0, -1.0]);
        match cofactor(&g, &h) {
            Err(Error::NotPositiveDefinite { node, .. }) => assert_eq!(node, bad),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn newton_recovers_quadratic() {
        let g = disc(33);
        let f = ScalarField::from_fn(&g, |_| 1.0);
        let phi = boundary_values(&g, BoundaryMode::Direct, |x| 0.5 * (x[0] * x[0] + x[1] * x[1]));
        let (p, rep) = solve_monge_ampere(&g, &f, &phi, None, &NewtonOptions::default()).unwrap();
        let err = g
            .interior
            .iter()
            .map(|&i| {
                let x = g.point(i);
                (p.values[i] - 0.5 * (x[0] * x[0] + x[1] * x[1])).abs()
            })
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "err {err}");
        assert!(*rep.residual_history.last().unwrap() < 1e-8);
    }

    #[test]
    fn newton_recovers_perturbed_potential() {
        let spec = PotentialSpec::Perturbed { delta: 0.05 };
        let mut errs = Vec::new();
        for res in [17, 33] {
            let g = Arc::new(build_grid(&DomainSpec::cube(2, 0.0, 1.0), res).unwrap());
            let exact = make_potential(&spec, g.clone()).unwrap();
            let (f, _, _) = det_field(&g, &exact.hessian);
            let phi = boundary_values(&g, BoundaryMode::Direct, |x| spec.value(x, 2));
            let (p, _) = solve_monge_ampere(&g, &f, &phi, None, &NewtonOptions::default()).unwrap();
            errs.push(
                g.interior
                    .iter()
                    .map(|&i| (p.values[i] - exact.values[i]).abs())
                    .fold(0.0, f64::max),
            );
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 1.5, "errors {errs:?}");
    }

    #[test]
    fn nonpositive_rhs_rejected() {
        let g = disc(9);
        let f = ScalarField::zeros(&g);
        let phi = ScalarField::zeros(&g);
        assert!(solve_monge_ampere(&g, &f, &phi, None, &NewtonOptions::default()).is_err());
    }

    #[test]
    fn conjugate_of_quadratic() {
        let g = disc(65);
        let a = SymMat::from_rows(2, &[&[2.0, 0.5], &[0.5, 1.0]]);
        let p = make_potential(&PotentialSpec::quadratic(&a), g.clone()).unwrap();
        let dual = Arc::new(build_grid(&DomainSpec::ball(2, 0.8), 33).unwrap());
        let lt = legendre_transform(&p, dual.clone()).unwrap();
        let ainv = a.inverse().unwrap();
        let mut checked = 0;
        for k in 0..dual.num_nodes() {
            if lt.exterior[k] {
                continue;
            }
            let y = dual.point(k);
            assert!((lt.values[k] - 0.5 * ainv.quad(&y)).abs() < 1e-12);
            checked += 1;
        }
        assert!(checked > 100);
    }

    #[test]
    fn fenchel_young_for_perturbed_potential() {
        let g = Arc::new(build_grid(&DomainSpec::cube(2, 0.0, 1.0), 65).unwrap());
        let p = make_potential(&PotentialSpec::Perturbed { delta: 0.05 }, g.clone()).unwrap();
        let dual = Arc::new(build_grid(&DomainSpec::cube(2, 0.2, 1.3), 33).unwrap());
        let lt = legendre_transform(&p, dual.clone()).unwrap();
        let mut worst = 0.0_f64;
        for k in 0..dual.num_nodes() {
            if lt.exterior[k] {
                continue;
            }
            let y = dual.point(k);
            let x = lt.preimage[k];
            let spec = p.spec.as_ref().unwrap();
            let gap = dot3(&x, &y) - spec.value(&x, 2) - lt.values[k];
            worst = worst.max(gap.abs());
        }
        assert!(worst < 1e-3, "worst {worst}");
    }

    #[test]
    fn hull_membership() {
        let h = convex_hull_2d(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]]);
        assert_eq!(h.len(), 4);
        assert!(inside_convex_polygon(&h, &[0.5, 0.2]));
        assert!(!inside_convex_polygon(&h, &[1.5, 0.2]));
    }
}
