//! Measurement harnesses: Harnack quotients, maximum-principle ratios,
//! superlevel-set inclusions, oscillation decay, Hölder seminorms and the
//! truncated Riesz potential. Constants are measured, never assumed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Point, ScalarField, VectorField};
use crate::linalg::linear_fit;
use crate::linop::{assemble, solve_rhs, DivergenceFormOperator, GreensSolution, Load, Region};
use crate::lorentz::{lorentz_norm, lp_norm, DistributionProfile};
use crate::potentials::Potential;
use crate::sections::{excess, measure_growth_check, resolve_center, section_at_node, MeasureGrowthSpec, Section};

/// `|(D²u)^{1/2} F|` at `nodes`.
pub fn weighted_field_norm(u: &Potential, f: &VectorField, nodes: &[usize]) -> Vec<f64> {
    nodes.iter().map(|&i| u.hessian[i].quad(&f[i]).max(0.0).sqrt()).collect()
}

/// Largest `|μ|(S_u(z, s)) / s^{(n−2)/2 + ε}` over sections nested in `outer`,
/// centred at up to `centers` cells of `outer` with eight geometric heights.
pub fn measured_m0(u: &Potential, mu: &ScalarField, outer: &Section, epsilon: f64, centers: usize) -> Result<f64> {
    let grid = &u.grid;
    if mu.iter().all(|m| *m == 0.0) {
        return Ok(0.0);
    }
    let stride = (outer.cells.len() / centers.max(1)).max(1);
    let floor = 4.0 * grid.spacing * grid.spacing;
    let top = 0.5 * outer.height;
    if top <= floor {
        return Err(Error::invalid("outer section too shallow to measure the growth constant"));
    }
    let mut nested = Vec::new();
    for &z in outer.cells.iter().step_by(stride) {
        for k in 0..8 {
            let s = floor * (top / floor).powf(k as f64 / 7.0);
            let sec = section_at_node(u, z, s)?;
            if sec.cells.iter().all(|c| outer.contains(*c)) {
                nested.push(sec);
            }
        }
    }
    let spec = MeasureGrowthSpec {
        m0: f64::INFINITY,
        epsilon,
    };
    Ok(measure_growth_check(mu, u, spec, &nested)?.max_ratio)
}

/// Exponents for the data terms.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataExponents {
    /// Integrability of `(D²u)^{1/2}F`; must exceed `n`.
    pub q: f64,
    /// Growth exponent of `μ`.
    pub epsilon: f64,
    /// Growth constant; measured from `μ` when absent.
    pub m0: Option<f64>,
}

impl Default for DataExponents {
    fn default() -> Self {
        DataExponents {
            q: 6.0,
            epsilon: 1.0,
            m0: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct HarnackReport {
    pub potential: String,
    pub center: Vec<f64>,
    pub height: f64,
    pub sup: f64,
    pub inf: f64,
    /// Constant added so that `v ≥ 0` on the section.
    pub shift: f64,
    /// `‖(D²u)^{1/2}F‖_{L^{n,1}}` (n = 3, μ = 0) or the `Lq` term.
    pub field_term: f64,
    pub measure_term: f64,
    /// `sup / (inf + data terms)`; `None` when the denominator vanishes.
    pub implied_constant: Option<f64>,
    pub degenerate: bool,
}

/// Solves `L_u v = div F + μ` on `op.region` with `v = b` outside it. The
/// boundary part is written as the constant `min b` plus a correction, so
/// constant data with zero load return that constant exactly.
pub fn solve_equation(op: &DivergenceFormOperator, load: &Load, boundary: Option<&ScalarField>) -> Result<ScalarField> {
    let grid = &op.grid;
    // solve_rhs inverts −L, so the load enters negated
    let neg = Load {
        field: load.field.as_ref().map(|f| VectorField(f.iter().map(|x| [-x[0], -x[1], -x[2]]).collect())),
        density: load.density.as_ref().map(|m| ScalarField(m.iter().map(|x| -x).collect())),
    };
    let Some(b) = boundary else {
        return solve_rhs(op, &neg, None);
    };
    let base = (0..grid.num_nodes())
        .filter(|i| !op.region.contains(*i) && grid.is_defined(*i))
        .map(|i| b[i])
        .fold(f64::INFINITY, f64::min);
    let base = if base.is_finite() { base } else { 0.0 };
    let shifted = ScalarField(b.iter().map(|v| v - base).collect());
    let mut v = solve_rhs(op, &neg, Some(&shifted))?;
    for i in 0..grid.num_nodes() {
        if grid.is_defined(i) {
            v[i] += base;
        }
    }
    Ok(v)
}

/// Harnack quotient for `L_u v = div F + μ` in `S_u(x0, h)` with `v = b` on
/// the discrete boundary; sup and inf over `S_u(x0, h/2)`.
pub fn harnack_report(
    u: &Potential,
    x0: &Point,
    h: f64,
    load: &Load,
    boundary: &ScalarField,
    exps: &DataExponents,
) -> Result<HarnackReport> {
    let grid = &u.grid;
    let n = grid.n;
    let center = resolve_center(u, x0)?;
    let outer = section_at_node(u, center, 2.0 * h)?;
    if !outer.compactly_contained {
        return Err(Error::invalid(format!("S_u(x0, {}) is not compactly contained", 2.0 * h)));
    }
    let sec = section_at_node(u, center, h)?;
    let inner = section_at_node(u, center, 0.5 * h)?;
    let region = Region::from_nodes(grid, sec.cells.clone())?;
    let op = assemble(u, &region)?;
    let mut v = solve_equation(&op, load, Some(boundary))?;
    let vmin = sec.cells.iter().map(|i| v[*i]).fold(f64::INFINITY, f64::min);
    let shift = if vmin < 0.0 { -vmin } else { 0.0 };
    if shift > 0.0 {
        v.iter_mut().for_each(|x| *x += shift);
    }
    let sup = inner.cells.iter().map(|i| v[*i]).fold(f64::NEG_INFINITY, f64::max);
    let inf = inner.cells.iter().map(|i| v[*i]).fold(f64::INFINITY, f64::min);
    let (field_term, measure_term) = data_terms(u, load, &sec, &outer, h, n, exps)?;
    let denom = inf + field_term + measure_term;
    let degenerate = !(denom > 0.0);
    Ok(HarnackReport {
        potential: u.name().to_string(),
        center: grid.point(center)[..n].to_vec(),
        height: h,
        sup,
        inf,
        shift,
        field_term,
        measure_term,
        implied_constant: (!degenerate).then(|| sup / denom),
        degenerate,
    })
}

fn data_terms(
    u: &Potential,
    load: &Load,
    sec: &Section,
    outer: &Section,
    h: f64,
    n: usize,
    exps: &DataExponents,
) -> Result<(f64, f64)> {
    let grid = &u.grid;
    let cell = grid.cell_measure();
    let mu_zero = load.density.as_ref().map_or(true, |m| sec.cells.iter().all(|i| m[*i] == 0.0));
    let fvals = load
        .field
        .as_ref()
        .map(|f| weighted_field_norm(u, f, &sec.cells))
        .unwrap_or_else(|| vec![0.0; sec.cells.len()]);
    if n == 3 && mu_zero {
        let prof = DistributionProfile::from_values(&fvals, cell);
        return Ok((lorentz_norm(&prof, n as f64, 1.0)?, 0.0));
    }
    if !(exps.q > n as f64) {
        return Err(Error::invalid(format!("data exponent q = {} must exceed n = {n}", exps.q)));
    }
    let lq = lp_norm(&fvals, cell, exps.q) * h.powf((exps.q - n as f64) / (2.0 * exps.q));
    let m0 = match (exps.m0, &load.density) {
        (Some(m), _) => m,
        (None, Some(mu)) => measured_m0(u, mu, outer, exps.epsilon, 25)?,
        (None, None) => 0.0,
    };
    Ok((lq, m0 * h.powf(exps.epsilon)))
}

#[derive(Clone, Debug, Serialize)]
pub struct MaxPrincipleReport {
    pub sup_v: f64,
    pub sup_boundary: f64,
    /// `‖(D²u)^{1/2}F‖_{L^{n,1}}`, present when `n = 3` and `μ = 0`.
    pub lorentz_bound: Option<f64>,
    pub lorentz_ratio: Option<f64>,
    /// `‖(D²u)^{1/2}F‖_{Lq} h^{(q−n)/(2q)} + M0 h^ε`.
    pub lq_bound: f64,
    pub lq_ratio: f64,
    pub m0: f64,
}

fn ratio(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a / b
    }
}

/// `sup v` for `−L_u v = div F + μ` on `section` with zero boundary values,
/// against each applicable bound at height `section.height`.
pub fn maxprinciple_gap(u: &Potential, section: &Section, load: &Load, exps: &DataExponents) -> Result<MaxPrincipleReport> {
    let grid = &u.grid;
    let n = grid.n;
    let region = Region::from_nodes(grid, section.cells.clone())?;
    let op = assemble(u, &region)?;
    let v = solve_rhs(&op, load, None)?;
    let sup_v = section.cells.iter().map(|i| v[*i]).fold(0.0, f64::max);
    let cell = grid.cell_measure();
    let fvals = load
        .field
        .as_ref()
        .map(|f| weighted_field_norm(u, f, &section.cells))
        .unwrap_or_else(|| vec![0.0; section.cells.len()]);
    let mu_zero = load.density.as_ref().map_or(true, |m| section.cells.iter().all(|i| m[*i] == 0.0));
    let lorentz_bound = if n == 3 && mu_zero {
        Some(lorentz_norm(&DistributionProfile::from_values(&fvals, cell), 3.0, 1.0)?)
    } else {
        None
    };
    if !(exps.q > n as f64) {
        return Err(Error::invalid(format!("data exponent q = {} must exceed n = {n}", exps.q)));
    }
    let h = section.height;
    let m0 = match (exps.m0, &load.density) {
        (Some(m), _) => m,
        (None, Some(mu)) if !mu_zero => measured_m0(u, mu, section, exps.epsilon, 25)?,
        _ => 0.0,
    };
    let lq_bound = lp_norm(&fvals, cell, exps.q) * h.powf((exps.q - n as f64) / (2.0 * exps.q)) + m0 * h.powf(exps.epsilon);
    Ok(MaxPrincipleReport {
        sup_v,
        sup_boundary: 0.0,
        lorentz_ratio: lorentz_bound.map(|b| ratio(sup_v, b)),
        lorentz_bound,
        lq_ratio: ratio(sup_v, lq_bound),
        lq_bound,
        m0,
    })
}

/// Parameters of the predicted containing height.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct InclusionConstants {
    pub eta: f64,
    pub tau0: f64,
    /// Height of the section on which `g` lives.
    pub h: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuperlevelRecord {
    pub t: f64,
    pub cells: usize,
    /// Smallest height `r` with `{g > t} ⊆ S_u(y, r)`; zero for an empty set.
    pub containing_height: f64,
    /// Self-consistency: the extracted section at that height holds every cell.
    pub contained: bool,
    /// `2ηh 2^{−t/τ0}` (n = 2) or `(4τ0)^{2/(n−2)} t^{−2/(n−2)}`.
    pub predicted_height: Option<f64>,
    pub above_floor: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuperlevelReport {
    pub records: Vec<SuperlevelRecord>,
    /// n = 3: slope of `log r` against `log t`; n = 2: slope of `log₂ r` against `t`.
    pub fitted_slope: Option<f64>,
}

/// Containment of `{g > t}` in sections centred at the pole.
pub fn superlevel_inclusion(
    gs: &GreensSolution,
    u: &Potential,
    thresholds: &[f64],
    consts: Option<&InclusionConstants>,
) -> Result<SuperlevelReport> {
    let grid = &u.grid;
    let n = grid.n;
    let ex = excess(u, gs.pole);
    let mut records = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let cells: Vec<usize> = gs.region.nodes.iter().copied().filter(|i| gs.values[*i] > t).collect();
        let r = cells.iter().map(|i| ex[*i]).fold(0.0, f64::max);
        let contained = if cells.is_empty() {
            true
        } else {
            let height = (r * (1.0 + 1e-9)).max(grid.spacing * grid.spacing) + f64::MIN_POSITIVE;
            let sec = section_at_node(u, gs.pole, height)?;
            cells.iter().all(|c| sec.contains(*c))
        };
        let (predicted, above_floor) = match consts {
            Some(c) if n == 2 => (Some(2.0 * c.eta * c.h * 2f64.powf(-t / c.tau0)), t > c.tau0),
            Some(c) => {
                let e = 2.0 / (n as f64 - 2.0);
                (Some((4.0 * c.tau0).powf(e) * t.powf(-e)), t > c.tau0 * c.h.powf(-(n as f64 - 2.0) / 2.0))
            }
            None => (None, true),
        };
        records.push(SuperlevelRecord {
            t,
            cells: cells.len(),
            containing_height: r,
            contained,
            predicted_height: predicted,
            above_floor,
        });
    }
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.containing_height > 0.0)
        .map(|r| {
            if n == 2 {
                (r.t, r.containing_height.log2())
            } else {
                (r.t.ln(), r.containing_height.ln())
            }
        })
        .collect();
    let fitted_slope = (pts.len() >= 3).then(|| {
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        linear_fit(&x, &y).0
    });
    Ok(SuperlevelReport { records, fitted_slope })
}

#[derive(Clone, Debug, Serialize)]
pub struct OscillationReport {
    pub heights: Vec<f64>,
    pub oscillations: Vec<f64>,
    /// Slope of `log osc` against `log h`; `None` when fewer than two heights
    /// carry a positive oscillation.
    pub gamma: Option<f64>,
}

/// `osc_{S_u(x0, h)} v` for each height, with the fitted decay exponent.
pub fn oscillation_decay(u: &Potential, v: &[f64], x0: &Point, heights: &[f64]) -> Result<OscillationReport> {
    if heights.len() < 4 {
        return Err(Error::invalid("oscillation decay needs at least 4 heights"));
    }
    let center = resolve_center(u, x0)?;
    let mut osc = Vec::with_capacity(heights.len());
    for &h in heights {
        let sec = section_at_node(u, center, h)?;
        let (lo, hi) = sec
            .cells
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| (lo.min(v[*i]), hi.max(v[*i])));
        osc.push(hi - lo);
    }
    let (x, y): (Vec<f64>, Vec<f64>) = heights
        .iter()
        .zip(&osc)
        .filter(|(_, o)| **o > 0.0)
        .map(|(h, o)| (h.ln(), o.ln()))
        .unzip();
    let gamma = (x.len() >= 2).then(|| linear_fit(&x, &y).0);
    Ok(OscillationReport {
        heights: heights.to_vec(),
        oscillations: osc,
        gamma,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct HolderReport {
    pub beta: f64,
    pub seminorm: f64,
    pub pairs: usize,
    /// Pairs with one end on a node outside the region within three cells.
    pub boundary_seminorm: f64,
    pub boundary_pairs: usize,
    /// Node pair attaining the seminorm.
    pub argmax: (usize, usize),
}

fn quotient(grid: &Grid, v: &[f64], a: usize, b: usize, beta: f64) -> f64 {
    let d = crate::grid::dist2(&grid.point(a), &grid.point(b)).sqrt();
    (v[a] - v[b]).abs() / d.powf(beta)
}

/// `sup |v(x) − v(y)| / |x − y|^β` over `budget` random distinct pairs of
/// region nodes, every pair with one end in `anchors`, and every pair within
/// three cells of the region's edge (including the adjacent outside nodes).
pub fn holder_seminorm(
    grid: &Grid,
    v: &[f64],
    region: &[usize],
    beta: f64,
    budget: usize,
    anchors: &[usize],
    rng: &mut impl Rng,
) -> Result<HolderReport> {
    if budget < 1000 {
        return Err(Error::invalid("Hoelder scan needs a pair budget of at least 1000"));
    }
    if !(beta > 0.0 && beta <= 1.0) || region.len() < 2 {
        return Err(Error::invalid("Hoelder scan needs 0 < beta <= 1 and two region nodes"));
    }
    let mut inside = vec![false; grid.num_nodes()];
    region.iter().for_each(|i| inside[*i] = true);
    let mut best = (0.0, (region[0], region[1]));
    let mut pairs = 0;
    let consider = |a: usize, b: usize, best: &mut (f64, (usize, usize))| {
        let q = quotient(grid, v, a, b, beta);
        if q > best.0 {
            *best = (q, (a, b));
        }
    };
    while pairs < budget {
        let a = region[rng.random_range(0..region.len())];
        let b = region[rng.random_range(0..region.len())];
        if a != b {
            consider(a, b, &mut best);
            pairs += 1;
        }
    }
    for &a in anchors {
        for &b in region {
            if a != b {
                consider(a, b, &mut best);
                pairs += 1;
            }
        }
    }
    // band: region nodes within three cells of the region's edge
    let mut offs = Vec::new();
    let n = grid.n;
    let r = 3isize;
    let span: Vec<isize> = (-r..=r).collect();
    for &i in &span {
        for &j in &span {
            for &k in if n == 3 { &span[..] } else { &[0isize][..] } {
                if (i, j, k) != (0, 0, 0) {
                    offs.push([i, j, k]);
                }
            }
        }
    }
    let mut bbest = (0.0, (region[0], region[0]));
    let mut bpairs = 0;
    let near_edge = |a: usize| offs.iter().any(|o| grid.offset(a, o).is_none_or(|b| !inside[b]));
    for &a in region.iter().filter(|a| near_edge(**a)) {
        for o in &offs {
            let Some(b) = grid.offset(a, o) else { continue };
            if !grid.is_defined(b) {
                continue;
            }
            if inside[b] {
                if a < b {
                    consider(a, b, &mut best);
                    pairs += 1;
                }
            } else {
                let q = quotient(grid, v, a, b, beta);
                if q > bbest.0 {
                    bbest = (q, (a, b));
                }
                bpairs += 1;
            }
        }
    }
    if bbest.0 > best.0 {
        best = bbest;
    }
    Ok(HolderReport {
        beta,
        seminorm: best.0,
        pairs: pairs + bpairs,
        boundary_seminorm: bbest.0,
        boundary_pairs: bpairs,
        argmax: best.1,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RieszReport {
    pub value: f64,
    pub heights: Vec<f64>,
    pub masses: Vec<f64>,
    /// Fitted exponent `a` of `μ(S_u(y, s)) ~ s^a` over the lowest heights.
    pub growth_exponent: Option<f64>,
    /// Integrability requires `a > n/2 − 1`.
    pub divergent: bool,
}

/// `I(y, h) = ∫₀^h μ(S_u(y, s)) s^{−n/2} ds` by the trapezoid rule in `log s`
/// on 40 geometric heights from `spacing²` to `h`; below `spacing²` the
/// integrand is held at its value at the cutoff.
pub fn riesz_potential(u: &Potential, mu: &ScalarField, y: &Point, h: f64) -> Result<RieszReport> {
    if mu.iter().any(|m| *m < 0.0) {
        return Err(Error::invalid("Riesz potential needs a nonnegative density"));
    }
    let grid = &u.grid;
    let n = grid.n as f64;
    let s_min = grid.spacing * grid.spacing;
    if !(h > s_min) {
        return Err(Error::invalid(format!("height {h} is below the resolvable floor {s_min}")));
    }
    let center = resolve_center(u, y)?;
    let ex = excess(u, center);
    let cell = grid.cell_measure();
    let m = 40;
    let heights: Vec<f64> = (0..m).map(|k| s_min * (h / s_min).powf(k as f64 / (m - 1) as f64)).collect();
    let mut masses = Vec::with_capacity(m);
    for &s in &heights {
        let sec = section_at_node(u, center, s)?;
        debug_assert!(sec.cells.iter().all(|c| ex[*c] < s));
        masses.push(sec.cells.iter().map(|c| mu[*c]).sum::<f64>() * cell);
    }
    let integrand: Vec<f64> = heights.iter().zip(&masses).map(|(s, q)| q / s.powf(n / 2.0)).collect();
    let mut value = integrand[0] * s_min;
    for k in 1..m {
        let dl = (heights[k] / heights[k - 1]).ln();
        value += 0.5 * dl * (integrand[k] * heights[k] + integrand[k - 1] * heights[k - 1]);
    }
    let low: Vec<(f64, f64)> = heights
        .iter()
        .zip(&masses)
        .take(10)
        .filter(|(_, q)| **q > 0.0)
        .map(|(s, q)| (s.ln(), q.ln()))
        .collect();
    let growth_exponent = (low.len() >= 3).then(|| {
        let (x, yv): (Vec<f64>, Vec<f64>) = low.into_iter().unzip();
        linear_fit(&x, &yv).0
    });
    let divergent = growth_exponent.is_some_and(|a| a <= n / 2.0 - 1.0);
    Ok(RieszReport {
        value,
        heights,
        masses,
        growth_exponent,
        divergent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, DomainSpec};
    use crate::linop::greens;
    use crate::potentials::{make_potential, PotentialSpec};
    use rand::SeedableRng;
    use std::sync::Arc;

    fn disc(res: usize) -> Potential {
        let g = Arc::new(build_grid(&DomainSpec::ball(2, 1.0), res).unwrap());
        make_potential(&PotentialSpec::identity(), g).unwrap()
    }

    #[test]
    fn constant_data_gives_unit_quotient() {
        let u = disc(65);
        let r = harnack_report(&u, &[0.0; 3], 0.1, &Load::default(), &ScalarField::from_fn(&u.grid, |_| 2.5), &DataExponents::default()).unwrap();
        assert_eq!(r.sup, 2.5);
        assert_eq!(r.inf, 2.5);
        assert_eq!(r.implied_constant, Some(1.0));
    }

    #[test]
    fn harmonic_quotient_is_bounded() {
        let u = disc(65);
        let r = harnack_report(&u, &[0.0; 3], 0.15, &Load::default(), &ScalarField::from_fn(&u.grid, |x| 1.0 + x[0] / 2.0), &DataExponents::default()).unwrap();
        let c = r.implied_constant.unwrap();
        assert!(c > 1.0 && c < 3.0, "{c}");
    }

    #[test]
    fn poisson_maximum() {
        let u = disc(129);
        let grid = &u.grid;
        let sec = section_at_node(&u, grid.nearest_node(&[0.0; 3]), 0.5 * (1.0 - 1e-12)).unwrap();
        let mu = ScalarField::from_fn(grid, |_| 1.0);
        let rep = maxprinciple_gap(&u, &sec, &Load::density(mu), &DataExponents::default()).unwrap();
        assert!((rep.sup_v - 0.25).abs() < 0.01, "{}", rep.sup_v);
        assert!((rep.m0 - 2.0 * std::f64::consts::PI).abs() < 0.5, "{}", rep.m0);
        let zero = maxprinciple_gap(&u, &sec, &Load::default(), &DataExponents::default()).unwrap();
        assert_eq!(zero.sup_v, 0.0);
        assert_eq!(zero.lq_ratio, 0.0);
    }

    #[test]
    fn affine_oscillation_exponent() {
        let u = disc(129);
        let v: Vec<f64> = (0..u.grid.num_nodes()).map(|i| u.grid.point(i)[0]).collect();
        let hs = [0.01, 0.02, 0.04, 0.08, 0.16];
        let rep = oscillation_decay(&u, &v, &[0.0; 3], &hs).unwrap();
        assert!((rep.gamma.unwrap() - 0.5).abs() < 0.05);
        let c = vec![1.0; v.len()];
        let rep = oscillation_decay(&u, &c, &[0.0; 3], &hs).unwrap();
        assert!(rep.oscillations.iter().all(|o| *o == 0.0) && rep.gamma.is_none());
        assert!(oscillation_decay(&u, &c, &[0.0; 3], &hs[..3]).is_err());
    }

    #[test]
    fn radial_holder_function() {
        let u = disc(65);
        let grid = &u.grid;
        let beta = 0.5;
        let v: Vec<f64> = (0..grid.num_nodes()).map(|i| crate::grid::dot3(&grid.point(i), &grid.point(i)).sqrt().powf(beta)).collect();
        let origin = grid.nearest_node(&[0.0; 3]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let rep = holder_seminorm(grid, &v, &grid.interior, beta, 1000, &[origin], &mut rng).unwrap();
        assert!((rep.seminorm - 1.0).abs() < 1e-12, "{}", rep.seminorm);
        assert!(rep.boundary_pairs > 0);
        assert!(holder_seminorm(grid, &v, &grid.interior, beta, 10, &[], &mut rng).is_err());
    }

    #[test]
    fn riesz_constant_density() {
        let u = disc(129);
        let mu = ScalarField::from_fn(&u.grid, |_| 1.0);
        let h = 0.2;
        let r = riesz_potential(&u, &mu, &[0.0; 3], h).unwrap();
        let exact = 2.0 * std::f64::consts::PI * h;
        assert!((r.value - exact).abs() < 0.05 * exact, "{} vs {exact}", r.value);
        assert!(!r.divergent);
        let z = riesz_potential(&u, &ScalarField::zeros(&u.grid), &[0.0; 3], h).unwrap();
        assert_eq!(z.value, 0.0);
    }

    #[test]
    fn superlevel_sets_are_contained() {
        let u = disc(65);
        let region = Region::interior(&u.grid);
        let op = assemble(&u, &region).unwrap();
        let gs = greens(&op, &u, u.grid.nearest_node(&[0.0; 3])).unwrap();
        let ts: Vec<f64> = (1..8).map(|k| 0.1 * k as f64).collect();
        let mut ts2 = ts.clone();
        ts2.push(gs.max_value * 2.0);
        let rep = superlevel_inclusion(&gs, &u, &ts2, None).unwrap();
        assert!(rep.records.iter().all(|r| r.contained));
        assert_eq!(rep.records.last().unwrap().cells, 0);
        // n = 2: g ≈ −log|x|/(2π), so log₂ r is linear in t with slope −4π/ln 2
        let s = rep.fitted_slope.unwrap();
        let expect = -4.0 * std::f64::consts::PI / std::f64::consts::LN_2;
        assert!((s - expect).abs() < 0.15 * expect.abs(), "{s} vs {expect}");
    }
}
