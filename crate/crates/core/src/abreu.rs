//! Second boundary value problem for singular Abreu equations
//!
//! ```text
//! U^{ij} D_ij w = −Δu + f,   w = G'(det D²u)   in Ω,
//! u = φ,  w = ψ                                on ∂Ω,
//! ```
//!
//! solved by alternating a Monge–Ampère solve `det D²u = (G')⁻¹(w)` with a
//! linearized solve for `w`, damped and warm-started.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_grid, dot3, fd_gradient, fd_hessian, hessian_at, DomainKind, DomainSpec, Grid, Point, ScalarField};
use crate::linalg::max_abs;
use crate::linop::{assemble, solve_rhs, Load, Region};
use crate::potentials::{legendre_transform, poisson_dirichlet, solve_monge_ampere, NewtonOptions, Potential};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GKind {
    Log,
    LogOverLoglog,
}

/// `G(t) = log t` or `G(t) = log t / log log(t + E)` with `E = exp(exp(4n))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GFunction {
    pub kind: GKind,
    pub n: usize,
}

/// Working bracket for inverting `G'` of the second kind.
pub const G_BRACKET: (f64, f64) = (1e-6, 1e6);

impl GFunction {
    pub fn new(kind: GKind, n: usize) -> Self {
        GFunction { kind, n }
    }

    /// `log E = exp(4n)`.
    pub fn log_shift(&self) -> f64 {
        (4.0 * self.n as f64).exp()
    }

    /// `log(t + E)` without forming `E`.
    fn log_shifted(&self, t: f64) -> f64 {
        let l = self.log_shift();
        l + (t * (-l).exp()).ln_1p()
    }

    /// `(G(t), G'(t))`.
    pub fn eval(&self, t: f64) -> Result<(f64, f64)> {
        if !(t > 0.0) {
            return Err(Error::OutOfRange {
                value: t,
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        Ok(match self.kind {
            GKind::Log => (t.ln(), 1.0 / t),
            GKind::LogOverLoglog => {
                let ell = self.log_shifted(t);
                let d = ell.ln();
                // d/dt log log(t + E) = 1 / ((t + E) log(t + E))
                let dd = (-ell).exp() / ell;
                (t.ln() / d, 1.0 / (t * d) - t.ln() * dd / (d * d))
            }
        })
    }

    pub fn prime(&self, t: f64) -> Result<f64> {
        Ok(self.eval(t)?.1)
    }

    pub fn bracket(&self) -> (f64, f64) {
        match self.kind {
            GKind::Log => (0.0, f64::INFINITY),
            GKind::LogOverLoglog => G_BRACKET,
        }
    }

    /// `t` with `G'(t) = w`: exact for `log`, bisection in `log t` otherwise.
    pub fn prime_inverse(&self, w: f64) -> Result<f64> {
        match self.kind {
            GKind::Log => {
                if !(w > 0.0 && w.is_finite()) {
                    return Err(Error::OutOfRange {
                        value: w,
                        lo: 0.0,
                        hi: f64::INFINITY,
                    });
                }
                Ok(1.0 / w)
            }
            GKind::LogOverLoglog => {
                let (tl, th) = G_BRACKET;
                let (wl, wh) = (self.prime(th)?, self.prime(tl)?);
                if !(w >= wl && w <= wh) {
                    return Err(Error::OutOfRange { value: w, lo: wl, hi: wh });
                }
                let (mut lo, mut hi) = (tl.ln(), th.ln());
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.prime(mid.exp())? > w {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo < 1e-15 {
                        break;
                    }
                }
                Ok((0.5 * (lo + hi)).exp())
            }
        }
    }

    /// Asserts `G'` strictly decreasing at `samples` log-spaced points of the
    /// working bracket.
    pub fn check_monotone(&self, samples: usize) -> Result<()> {
        let (tl, th) = match self.kind {
            GKind::Log => (1e-6, 1e6),
            GKind::LogOverLoglog => G_BRACKET,
        };
        let mut prev = f64::INFINITY;
        for k in 0..samples {
            let t = (tl.ln() + (th / tl).ln() * k as f64 / (samples - 1) as f64).exp();
            let g = self.prime(t)?;
            if !(g < prev) {
                return Err(Error::invalid(format!("G' is not strictly decreasing near t = {t:e}")));
            }
            prev = g;
        }
        Ok(())
    }

    /// Largest relative gap between `G'` and a central difference of `G` at
    /// `samples` log-spaced points in `[1e-3, 1e3]`.
    pub fn derivative_gap(&self, samples: usize) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for k in 0..samples {
            let t = (1e-3f64.ln() + 1e6f64.ln() * (k as f64 + 0.5) / samples as f64).exp();
            let d = 1e-5 * t;
            let fd = (self.eval(t + d)?.0 - self.eval(t - d)?.0) / (2.0 * d);
            let g = self.prime(t)?;
            worst = worst.max((fd - g).abs() / g.abs());
        }
        Ok(worst)
    }
}

/// Iteration controls.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct AbreuControls {
    pub theta: f64,
    pub theta_floor: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub positivity_floor: f64,
    pub newton: NewtonOptions,
}

impl Default for AbreuControls {
    fn default() -> Self {
        AbreuControls {
            theta: 0.5,
            theta_floor: 0.05,
            tolerance: 1e-8,
            max_iterations: 200,
            positivity_floor: 1e-10,
            newton: NewtonOptions {
                tolerance: 1e-10,
                ..NewtonOptions::default()
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct AbreuProblem {
    pub grid: Arc<Grid>,
    /// `f ≤ 0` at every defined node.
    pub f: ScalarField,
    /// Boundary values of `u` (read on boundary nodes).
    pub phi: ScalarField,
    /// Boundary values of `w` (read on boundary nodes).
    pub psi: ScalarField,
    pub g: GFunction,
    pub controls: AbreuControls,
    /// Starting `w`; the harmonic extension of `ψ` when absent.
    pub initial_w: Option<ScalarField>,
}

impl AbreuProblem {
    pub fn min_boundary_psi(&self) -> f64 {
        self.grid.boundary.iter().map(|b| self.psi[*b]).fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> Result<()> {
        let grid = &self.grid;
        for i in 0..grid.num_nodes() {
            if grid.is_defined(i) && !(self.f[i] <= 0.0) {
                return Err(Error::invalid(format!("f must be nonpositive; f = {} at node {i}", self.f[i])));
            }
        }
        let m = self.min_boundary_psi();
        if !(m > 0.0) {
            return Err(Error::invalid(format!("boundary values of w must be positive, min = {m}")));
        }
        let c = &self.controls;
        if !(c.theta > 0.0 && c.theta <= 1.0 && c.theta_floor > 0.0 && c.theta_floor <= c.theta) {
            return Err(Error::invalid("damping must satisfy 0 < theta_floor <= theta <= 1"));
        }
        self.g.check_monotone(1000)
    }
}

/// One row of the per-iteration log.
#[derive(Clone, Debug, Serialize)]
pub struct IterationRecord {
    pub iterate: usize,
    pub residual: f64,
    pub theta: f64,
    pub det_min: f64,
    pub det_max: f64,
    pub min_w: f64,
    pub newton_iterations: usize,
}

#[derive(Clone, Debug)]
pub struct AbreuState {
    pub iterate: usize,
    pub u: Potential,
    pub w: ScalarField,
    /// `(min, max)` of `det D²u` over interior nodes.
    pub det_bounds: (f64, f64),
    pub min_w_interior: f64,
    /// `‖w̃ − w‖_∞` of the last undamped update.
    pub residual: f64,
    pub history: Vec<IterationRecord>,
    /// Cross-substitution residuals: `max |det D²u − (G')⁻¹(w)|` and the
    /// Jacobi-scaled max-norm residual of the linear equation for `w`.
    pub ma_residual: f64,
    pub linear_residual: f64,
}

impl AbreuState {
    pub fn write_log_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
        for r in &self.history {
            w.serialize(r).map_err(|e| Error::Io(e.into()))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug)]
pub enum AbreuStatus {
    Converged,
    MaxIterations,
    /// `w` dropped below the positivity floor (or left the range of `G'`).
    PositivityLost { node: usize, value: f64 },
    SubsolveFailed(Error),
}

#[derive(Debug)]
pub struct AbreuRun {
    pub status: AbreuStatus,
    /// Last complete iterate; `None` when the very first subsolve failed.
    pub state: Option<AbreuState>,
}

impl AbreuRun {
    pub fn converged(self) -> Result<AbreuState> {
        match self.status {
            AbreuStatus::Converged => Ok(self.state.expect("converged run carries a state")),
            AbreuStatus::MaxIterations => {
                let s = self.state.as_ref();
                Err(Error::NoConvergence {
                    solver: "abreu fixed point",
                    iterations: s.map_or(0, |s| s.iterate),
                    residual: s.map_or(f64::NAN, |s| s.residual),
                })
            }
            AbreuStatus::PositivityLost { node, value } => Err(Error::invalid(format!(
                "w lost positivity at node {node} (w = {value:e})"
            ))),
            AbreuStatus::SubsolveFailed(e) => Err(e),
        }
    }
}

fn laplacian_trace(u: &Potential, i: usize) -> f64 {
    u.hessian[i].trace()
}

/// Damped fixed-point iteration. Invalid input is an `Err`; solver trouble is
/// reported through [`AbreuStatus`] together with the last iterate.
pub fn abreu_solve(problem: &AbreuProblem) -> Result<AbreuRun> {
    problem.validate()?;
    let grid = &problem.grid;
    let c = &problem.controls;
    let g = problem.g;
    let region = Region::interior(grid);
    let mut w = match &problem.initial_w {
        Some(w0) => {
            let mut w = w0.clone();
            for &b in &grid.boundary {
                w[b] = problem.psi[b];
            }
            w
        }
        None => poisson_dirichlet(grid, &vec![0.0; grid.num_nodes()], &problem.psi)?,
    };
    let mut theta = c.theta;
    let mut prev_res = f64::INFINITY;
    let mut warm: Option<ScalarField> = None;
    let mut history = Vec::new();
    let mut state: Option<AbreuState> = None;
    for k in 0..c.max_iterations {
        let mut det_rhs = ScalarField::zeros(grid);
        for &i in &grid.interior {
            if !(w[i] > c.positivity_floor) {
                return Ok(AbreuRun {
                    status: AbreuStatus::PositivityLost { node: i, value: w[i] },
                    state,
                });
            }
            match g.prime_inverse(w[i]) {
                Ok(t) => det_rhs[i] = t,
                Err(_) => {
                    return Ok(AbreuRun {
                        status: AbreuStatus::PositivityLost { node: i, value: w[i] },
                        state,
                    })
                }
            }
        }
        let (u, rep) = match solve_monge_ampere(grid, &det_rhs, &problem.phi, warm.as_ref(), &c.newton) {
            Ok(r) => r,
            Err(e) => {
                return Ok(AbreuRun {
                    status: AbreuStatus::SubsolveFailed(e),
                    state,
                })
            }
        };
        let op = match assemble(&u, &region) {
            Ok(op) => op,
            Err(e) => {
                return Ok(AbreuRun {
                    status: AbreuStatus::SubsolveFailed(e),
                    state,
                })
            }
        };
        // U^{ij} D_ij w = −(Δu − f): a nonnegative load for −L
        let mut mu = ScalarField::zeros(grid);
        for &i in &grid.interior {
            mu[i] = laplacian_trace(&u, i) - problem.f[i];
        }
        let load = Load::density(mu);
        let wt = match solve_rhs(&op, &load, Some(&problem.psi)) {
            Ok(x) => x,
            Err(e) => {
                return Ok(AbreuRun {
                    status: AbreuStatus::SubsolveFailed(e),
                    state,
                })
            }
        };
        let res = grid.interior.iter().map(|&i| (wt[i] - w[i]).abs()).fold(0.0, f64::max);
        if res > prev_res {
            theta = (0.5 * theta).max(c.theta_floor);
        }
        prev_res = res;
        let converged = res < c.tolerance;
        let next: ScalarField = if converged {
            wt
        } else {
            let mut nw = w.clone();
            for &i in &grid.interior {
                nw[i] = (1.0 - theta) * w[i] + theta * wt[i];
            }
            nw
        };
        let min_w = grid.interior.iter().map(|&i| next[i]).fold(f64::INFINITY, f64::min);
        history.push(IterationRecord {
            iterate: k,
            residual: res,
            theta,
            det_min: u.pinching.0,
            det_max: u.pinching.1,
            min_w,
            newton_iterations: rep.iterations,
        });
        let (ma_res, lin_res) = cross_residuals(&u, &next, &op, &load, &problem.psi, &g);
        warm = Some(u.values.clone());
        state = Some(AbreuState {
            iterate: k,
            det_bounds: u.pinching,
            u,
            w: next.clone(),
            min_w_interior: min_w,
            residual: res,
            history: history.clone(),
            ma_residual: ma_res,
            linear_residual: lin_res,
        });
        w = next;
        if converged {
            return Ok(AbreuRun {
                status: AbreuStatus::Converged,
                state,
            });
        }
    }
    Ok(AbreuRun {
        status: AbreuStatus::MaxIterations,
        state,
    })
}

fn cross_residuals(
    u: &Potential,
    w: &ScalarField,
    op: &crate::linop::DivergenceFormOperator,
    load: &Load,
    psi: &ScalarField,
    g: &GFunction,
) -> (f64, f64) {
    let grid = &u.grid;
    let ma = grid
        .interior
        .iter()
        .map(|&i| {
            let t = g.prime_inverse(w[i]).unwrap_or(f64::NAN);
            (hessian_at(grid, &u.values, i).det() - t).abs()
        })
        .fold(0.0, f64::max);
    let x = op.region.gather(w);
    let mut r = op.matrix.apply(&x);
    let bvals: Vec<f64> = psi.to_vec();
    let bc = op.boundary_coupling.apply(&bvals);
    let rhs = load.assemble(grid, &op.region);
    let diag = op.matrix.diagonal();
    for k in 0..r.len() {
        r[k] = (r[k] + bc[k] - rhs[k]) / diag[k];
    }
    (ma, max_abs(&r))
}

/// `min_Ω w` against `min_∂Ω ψ`.
#[derive(Clone, Debug, Serialize)]
pub struct MinPrincipleReport {
    pub min_interior_w: f64,
    pub node: usize,
    pub min_boundary_psi: f64,
    pub tolerance: f64,
    pub holds: bool,
}

impl MinPrincipleReport {
    pub fn verdict(&self) -> Result<()> {
        if self.holds {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "minimum principle violated at node {}: w = {:e} < {:e}",
                self.node, self.min_interior_w, self.min_boundary_psi
            )))
        }
    }
}

pub fn min_principle_report(state: &AbreuState, psi: &ScalarField) -> Result<MinPrincipleReport> {
    let grid = &state.u.grid;
    require_convex(state)?;
    let (node, min_w) = grid
        .interior
        .iter()
        .map(|&i| (i, state.w[i]))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::invalid("grid has no interior nodes"))?;
    let m = grid.boundary.iter().map(|b| psi[*b]).fold(f64::INFINITY, f64::min);
    let tol = 1e-6 * m;
    Ok(MinPrincipleReport {
        min_interior_w: min_w,
        node,
        min_boundary_psi: m,
        tolerance: tol,
        holds: min_w >= m - tol,
    })
}

fn require_convex(state: &AbreuState) -> Result<()> {
    let grid = &state.u.grid;
    for &i in &grid.interior {
        let ev = state.u.hessian[i].min_eigenvalue();
        if !(ev > 0.0) {
            return Err(Error::NotPositiveDefinite { node: i, min_eig: ev });
        }
    }
    Ok(())
}

/// Determinant range against the a priori upper bound `(G')⁻¹(min ψ)`.
#[derive(Clone, Debug, Serialize)]
pub struct DetBoundsReport {
    pub min_det: f64,
    pub max_det: f64,
    pub upper_bound: f64,
    pub holds_upper: bool,
    pub positive: bool,
}

impl DetBoundsReport {
    pub fn holds(&self) -> bool {
        self.holds_upper && self.positive
    }
}

pub fn det_bounds_report(state: &AbreuState, psi: &ScalarField, g: &GFunction) -> Result<DetBoundsReport> {
    require_convex(state)?;
    let grid = &state.u.grid;
    let m = grid.boundary.iter().map(|b| psi[*b]).fold(f64::INFINITY, f64::min);
    let bound = g.prime_inverse(m)?;
    let (lo, hi) = state.det_bounds;
    Ok(DetBoundsReport {
        min_det: lo,
        max_det: hi,
        upper_bound: bound,
        holds_upper: hi <= bound * (1.0 + 1e-3),
        positive: lo > 0.0,
    })
}

/// Residual of the dual equation `u*^{ij} D_ij (w* − |y|²/2) + f(Du*(y))`.
#[derive(Clone, Debug, Serialize)]
pub struct DualConsistency {
    pub max_residual: f64,
    pub mean_residual: f64,
    pub samples: usize,
    pub skipped: usize,
}

/// Chebyshev distance, in cells, from each node to the nearest boundary node
/// (`usize::MAX` on exterior nodes).
pub fn boundary_depth(grid: &Grid) -> Vec<usize> {
    let mut depth = vec![usize::MAX; grid.num_nodes()];
    let mut queue = std::collections::VecDeque::new();
    for &b in &grid.boundary {
        depth[b] = 0;
        queue.push_back(b);
    }
    let offs = grid.neighbourhood_offsets();
    while let Some(i) = queue.pop_front() {
        for o in &offs {
            if let Some(j) = grid.offset(i, o) {
                if grid.is_interior(j) && depth[j] == usize::MAX {
                    depth[j] = depth[i] + 1;
                    queue.push_back(j);
                }
            }
        }
    }
    depth
}

/// Second-order Taylor model of a grid field around node `i`.
fn taylor2(grid: &Grid, f: &ScalarField, grad: &crate::grid::VectorField, hess: &crate::grid::MatrixField, i: usize, x: &Point) -> f64 {
    let p = grid.point(i);
    let mut d = [0.0; 3];
    for a in 0..grid.n {
        d[a] = x[a] - p[a];
    }
    f[i] + (0..grid.n).map(|a| grad[i][a] * d[a]).sum::<f64>() + 0.5 * hess[i].quad(&d)
}

/// Evaluates the dual equation on a box grid of `resolution` nodes per axis
/// covering the gradient image. Only dual samples whose maximizer lies at
/// least `margin` (and two cells) inside the primal domain are used; samples
/// whose stencil leaves that set, or whose dual Hessian is not positive
/// definite, are counted as skipped.
pub fn dual_consistency(
    u: &Potential,
    f: &ScalarField,
    g: &GFunction,
    resolution: usize,
    margin: f64,
) -> Result<DualConsistency> {
    let grid = &u.grid;
    let n = grid.n;
    let depth = boundary_depth(grid);
    let min_depth = (margin / grid.spacing).ceil() as usize;
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in &grid.interior {
        for a in 0..n {
            lo[a] = lo[a].min(u.gradient[i][a]);
            hi[a] = hi[a].max(u.gradient[i][a]);
        }
    }
    let half = (0..n).map(|a| 0.5 * (hi[a] - lo[a])).fold(0.0, f64::max);
    let dual_dom = DomainSpec {
        kind: DomainKind::Box,
        dimension: n,
        center: (0..n).map(|a| 0.5 * (lo[a] + hi[a])).collect(),
        extents: vec![2.0 * half; n],
        exponent: 4.0,
        uniform_convexity_radius: None,
    };
    let dual = Arc::new(build_grid(&dual_dom, resolution)?);
    let lt = legendre_transform(u, dual.clone())?;

    let mut wstar = ScalarField::zeros(grid);
    for i in 0..grid.num_nodes() {
        if grid.is_defined(i) {
            let d = u.hessian[i].det();
            let (gv, gp) = g.eval(d)?;
            wstar[i] = gv - d * gp;
        }
    }
    let (wg, wh) = (fd_gradient(grid, &wstar), fd_hessian(grid, &wstar));
    let (fg, fh) = (fd_gradient(grid, f), fd_hessian(grid, f));

    // Cubic model of u around the maximizing node: Taylor coefficients from
    // the Hessian field, whose central differences give the third derivatives.
    let h = grid.spacing;
    let cubic = |k: usize| -> Option<(usize, Point, f64)> {
        let i = lt.argmax[k];
        if i == usize::MAX || !grid.is_interior(i) || depth[i] < min_depth.max(2) {
            return None;
        }
        let y = dual.point(k);
        let h0 = u.hessian[i];
        let g0 = u.gradient[i];
        let t: Vec<crate::linalg::SymMat> = (0..n)
            .map(|a| {
                let p = grid.neighbor(i, a, 1).unwrap();
                let m = grid.neighbor(i, a, -1).unwrap();
                u.hessian[p].add(&u.hessian[m].scale(-1.0)).scale(0.5 / h)
            })
            .collect();
        let mut d = [0.0; 3];
        for a in 0..n {
            d[a] = y[a] - g0[a];
        }
        let mut dx = h0.inverse()?.mul_vec(&d);
        for _ in 0..4 {
            let mut jac = h0;
            for a in 0..n {
                jac = jac.add(&t[a].scale(dx[a]));
            }
            let hd = h0.mul_vec(&dx);
            let mut res = [0.0; 3];
            for a in 0..n {
                let td = jac.add(&h0.scale(-1.0)).mul_vec(&dx);
                res[a] = g0[a] + hd[a] + 0.5 * td[a] - y[a];
            }
            let step = jac.inverse()?.mul_vec(&res);
            for a in 0..n {
                dx[a] -= step[a];
            }
        }
        let mut x = grid.point(i);
        for a in 0..n {
            x[a] += dx[a];
        }
        let mut third = 0.0;
        for a in 0..n {
            third += dx[a] * t[a].quad(&dx);
        }
        let ux = u.values[i] + (0..n).map(|a| g0[a] * dx[a]).sum::<f64>() + 0.5 * h0.quad(&dx) + third / 6.0;
        Some((i, x, dot3(&x, &y) - ux))
    };

    let nd = dual.num_nodes();
    let mut ustar = vec![f64::NAN; nd];
    let mut wd = vec![f64::NAN; nd];
    let mut fd = vec![f64::NAN; nd];
    for k in 0..nd {
        if lt.exterior[k] {
            continue;
        }
        if let Some((i, x, us)) = cubic(k) {
            ustar[k] = us;
            wd[k] = taylor2(grid, &wstar, &wg, &wh, i, &x);
            fd[k] = taylor2(grid, f, &fg, &fh, i, &x);
        }
    }
    let offs = dual.neighbourhood_offsets();
    let mut worst: f64 = 0.0;
    let mut total = 0.0;
    let mut samples = 0;
    let mut skipped = 0;
    for &k in &dual.interior {
        if lt.exterior[k] {
            continue;
        }
        let full = ustar[k].is_finite() && offs.iter().all(|o| dual.offset(k, o).is_some_and(|j| ustar[j].is_finite()));
        if !full {
            skipped += 1;
            continue;
        }
        let hs = hessian_at(&dual, &ustar, k);
        let inv = match hs.inverse() {
            Some(m) if hs.min_eigenvalue() > 0.0 => m,
            _ => {
                skipped += 1;
                continue;
            }
        };
        let hw = hessian_at(&dual, &wd, k);
        let mut r = fd[k];
        for a in 0..n {
            for b in 0..n {
                let delta = if a == b { 1.0 } else { 0.0 };
                r += inv.get(a, b) * (hw.get(a, b) - delta);
            }
        }
        worst = worst.max(r.abs());
        total += r.abs();
        samples += 1;
    }
    if samples == 0 {
        return Err(Error::invalid("no dual sample has a complete stencil"));
    }
    Ok(DualConsistency {
        max_residual: worst,
        mean_residual: total / samples as f64,
        samples,
        skipped,
    })
}

/// Radial manufactured solution for `G = log` on a ball:
/// `w* = A − B|x|²`, `det D²u* = 1 / (A − B|x|²)`, `u*(r) = ∫₀ʳ ψ` with
/// `ψ(r)² = −log(1 − B r²/A) / B`. In two dimensions with `B = 1` the load is
/// `f = (1 − 2B) Δu* = −Δu*`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RadialManufactured {
    pub a: f64,
    pub b: f64,
}

impl Default for RadialManufactured {
    fn default() -> Self {
        RadialManufactured { a: 2.0, b: 1.0 }
    }
}

/// 24-point Gauss–Legendre nodes and weights on [−1, 1].
fn gauss_legendre() -> &'static [(f64, f64)] {
    use std::sync::OnceLock;
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        let m = 24;
        (0..m)
            .map(|i| {
                let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
                let mut dp = 0.0;
                for _ in 0..100 {
                    let (mut p0, mut p1) = (1.0, x);
                    for k in 2..=m {
                        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                        p0 = p1;
                        p1 = p2;
                    }
                    dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
                    let dx = p1 / dp;
                    x -= dx;
                    if dx.abs() < 1e-16 {
                        break;
                    }
                }
                (x, 2.0 / ((1.0 - x * x) * dp * dp))
            })
            .collect()
    })
}

impl RadialManufactured {
    /// `ψ(r)/r`, regular at the origin.
    fn psi_over_r(&self, r: f64) -> f64 {
        let s = self.b * r * r / self.a;
        if s < 1e-12 {
            return 1.0 / self.a.sqrt();
        }
        (-(-s).ln_1p() / (self.b * r * r)).sqrt()
    }

    pub fn slope(&self, r: f64) -> f64 {
        r * self.psi_over_r(r)
    }

    pub fn value(&self, x: &Point) -> f64 {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        gauss_legendre()
            .iter()
            .map(|(t, wt)| {
                let s = 0.5 * r * (t + 1.0);
                0.5 * r * wt * self.slope(s)
            })
            .sum()
    }

    pub fn w(&self, x: &Point) -> f64 {
        self.a - self.b * x.iter().map(|v| v * v).sum::<f64>()
    }

    /// `Δu* = ψ' + (n − 1) ψ/r`.
    pub fn laplacian(&self, x: &Point, n: usize) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let q = self.psi_over_r(r2.sqrt());
        let dpsi = 1.0 / ((self.a - self.b * r2) * q);
        dpsi + (n as f64 - 1.0) * q
    }

    /// `f = L_{u*} w* + Δu*` (two dimensions, where `tr U = Δu`).
    pub fn load(&self, x: &Point) -> f64 {
        (1.0 - 2.0 * self.b) * self.laplacian(x, 2)
    }

    /// Problem on `grid` (a two-dimensional ball of radius below `√(A/B)`)
    /// with data evaluated at node positions.
    pub fn problem(&self, grid: Arc<Grid>, controls: AbreuControls) -> Result<AbreuProblem> {
        if grid.n != 2 {
            return Err(Error::invalid("the radial manufactured solution is two-dimensional"));
        }
        let reach = grid
            .boundary
            .iter()
            .map(|b| grid.point(*b).iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max);
        if !(self.b * reach < self.a) {
            return Err(Error::invalid("grid reaches past the singular radius of the manufactured solution"));
        }
        let f = ScalarField::from_fn(&grid, |x| self.load(x));
        let phi = ScalarField::from_fn(&grid, |x| self.value(x));
        let psi = ScalarField::from_fn(&grid, |x| self.w(x));
        Ok(AbreuProblem {
            grid,
            f,
            phi,
            psi,
            g: GFunction::new(GKind::Log, 2),
            controls,
            initial_w: None,
        })
    }

    /// Max-norm errors `(‖u − u*‖, ‖w − w*‖)` over interior nodes.
    pub fn errors(&self, state: &AbreuState) -> (f64, f64) {
        let grid = &state.u.grid;
        grid.interior.iter().fold((0.0f64, 0.0f64), |(eu, ew), &i| {
            let x = grid.point(i);
            (
                eu.max((state.u.values[i] - self.value(&x)).abs()),
                ew.max((state.w[i] - self.w(&x)).abs()),
            )
        })
    }
}

/// The smooth baseline: `f = −1`, `φ = |x|²/2` and constant `ψ = G'(1)`
/// (so `ψ = 1` for `G = log`), which keeps the boundary determinant equal to
/// that of `φ`.
pub fn smooth_problem(grid: Arc<Grid>, g: GFunction, controls: AbreuControls) -> AbreuProblem {
    let f = ScalarField::from_fn(&grid, |_| -1.0);
    let phi = ScalarField::from_fn(&grid, |x| 0.5 * x.iter().map(|v| v * v).sum::<f64>());
    let psi1 = g.prime(1.0).expect("G' is defined at 1");
    let psi = ScalarField::from_fn(&grid, |_| psi1);
    AbreuProblem {
        grid,
        f,
        phi,
        psi,
        g,
        controls,
        initial_w: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{make_potential, PotentialSpec};

    #[test]
    fn log_kind_closed_forms() {
        let g = GFunction::new(GKind::Log, 2);
        assert_eq!(g.eval(1.0).unwrap(), (0.0, 1.0));
        assert_eq!(g.prime_inverse(4.0).unwrap(), 0.25);
        assert_eq!(g.prime_inverse(2.0).unwrap(), 0.5);
        assert!(g.eval(0.0).is_err());
    }

    #[test]
    fn second_kind_derivative_and_inverse() {
        for n in [2, 3] {
            let g = GFunction::new(GKind::LogOverLoglog, n);
            assert_eq!(g.eval(1.0).unwrap().0, 0.0);
            assert!(g.derivative_gap(100).unwrap() < 1e-6);
            g.check_monotone(1000).unwrap();
            let w = g.prime(2.0).unwrap();
            assert!((g.prime_inverse(w).unwrap() - 2.0).abs() < 1e-10);
            assert!(g.prime_inverse(1e9).is_err());
        }
    }

    #[test]
    fn manufactured_load_is_nonpositive() {
        let m = RadialManufactured::default();
        for r in [0.0, 0.3, 0.9, 1.05] {
            let x = [r, 0.0, 0.0];
            assert!(m.load(&x) < 0.0);
        }
        // u* has det D²u* = 1/w*: check ψψ'/r numerically
        let r = 0.6;
        let h = 1e-4;
        let d = (m.value(&[r + h, 0.0, 0.0]) - m.value(&[r - h, 0.0, 0.0])) / (2.0 * h);
        assert!((d - m.slope(r)).abs() < 1e-8);
    }

    #[test]
    fn dual_residual_vanishes_for_quadratic() {
        let grid = Arc::new(build_grid(&DomainSpec::ball(2, 1.0), 41).unwrap());
        let u = make_potential(&PotentialSpec::identity(), grid.clone()).unwrap();
        let f = ScalarField::from_fn(&grid, |_| 2.0);
        let g = GFunction::new(GKind::Log, 2);
        let r = dual_consistency(&u, &f, &g, 41, 0.0).unwrap();
        assert!(r.samples > 100);
        assert!(r.max_residual < 1e-8, "{}", r.max_residual);
    }

    #[test]
    fn smooth_baseline_converges_coarse() {
        let grid = Arc::new(build_grid(&DomainSpec::ball(2, 1.0), 33).unwrap());
        let g = GFunction::new(GKind::Log, 2);
        let p = smooth_problem(grid, g, AbreuControls::default());
        let st = abreu_solve(&p).unwrap().converged().unwrap();
        assert!(min_principle_report(&st, &p.psi).unwrap().holds);
        assert!(det_bounds_report(&st, &p.psi, &g).unwrap().holds());
        assert!(st.ma_residual < 1e-7 && st.linear_residual < 1e-7);
        // restarting from the fixed point stops at once
        let again = AbreuProblem {
            initial_w: Some(st.w.clone()),
            ..p
        };
        let st2 = abreu_solve(&again).unwrap().converged().unwrap();
        assert_eq!(st2.iterate, 0);
    }
}
