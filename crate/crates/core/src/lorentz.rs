//! Exact distribution functions of cell-wise fields, Lorentz quasi-norms,
//! layer-cake integrals, decay-exponent fits and the O'Neil inequality.
//!
//! A field taking value `f_i` on a cell of measure `w_i` has the piecewise
//! constant distribution `m(t) = |{|f| > t}|`. With distinct absolute values
//! `0 < t_1 < … < t_K` and `m_k = |{|f| ≥ t_k}|`, `m(t) = m_k` on
//! `[t_{k−1}, t_k)` (with `t_0 = 0`) and `m(t) = 0` for `t ≥ t_K`. Every
//! integral below is evaluated in closed form over these intervals.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linalg::{linear_fit, CompensatedSum};

#[derive(Clone, Debug, Serialize)]
pub struct DistributionProfile {
    /// Sorted distinct nonzero values of `|f|`.
    pub breakpoints: Vec<f64>,
    /// `measures[k] = |{|f| ≥ breakpoints[k]}|`.
    pub measures: Vec<f64>,
    /// Measure of the whole region (`m(0⁻)`).
    pub total: f64,
}

impl DistributionProfile {
    /// Profile of `|values|` with per-cell weights.
    pub fn from_weighted(values: &[f64], weights: &[f64]) -> Self {
        let mut pairs: Vec<(f64, f64)> = values.iter().zip(weights).map(|(v, w)| (v.abs(), *w)).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: CompensatedSum = weights.iter().copied().collect();
        let mut breakpoints = Vec::new();
        let mut measures = Vec::new();
        let mut tail = CompensatedSum::default();
        // sweep from the top so each measure is a compensated suffix sum
        let mut k = pairs.len();
        while k > 0 {
            let t = pairs[k - 1].0;
            while k > 0 && pairs[k - 1].0 == t {
                tail.add(pairs[k - 1].1);
                k -= 1;
            }
            if t > 0.0 {
                breakpoints.push(t);
                measures.push(tail.value());
            }
        }
        breakpoints.reverse();
        measures.reverse();
        DistributionProfile {
            breakpoints,
            measures,
            total: total.value(),
        }
    }

    /// Profile of `f` over `region` with uniform cell measure.
    pub fn from_values(values: &[f64], cell: f64) -> Self {
        Self::from_weighted(values, &vec![cell; values.len()])
    }

    /// `|{|f| > t}|`.
    pub fn measure_above(&self, t: f64) -> f64 {
        if t < 0.0 {
            return self.total;
        }
        // first breakpoint strictly greater than t
        let k = self.breakpoints.partition_point(|b| *b <= t);
        self.measures.get(k).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.breakpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.breakpoints.is_empty()
    }

    /// Linear interpolation in the breakpoint list at fractional position `q`.
    pub fn quantile(&self, q: f64) -> f64 {
        let k = self.breakpoints.len();
        if k == 0 {
            return 0.0;
        }
        let x = q.clamp(0.0, 1.0) * (k - 1) as f64;
        let i = x.floor() as usize;
        if i + 1 >= k {
            return self.breakpoints[k - 1];
        }
        let f = x - i as f64;
        self.breakpoints[i] * (1.0 - f) + self.breakpoints[i + 1] * f
    }

    /// Writes `t,measure` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "t,measure")?;
        for (t, m) in self.breakpoints.iter().zip(&self.measures) {
            writeln!(w, "{t:e},{m:e}")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Distribution of `f` restricted to `region`.
pub fn distribution(grid: &Grid, f: &[f64], region: &[usize]) -> Result<DistributionProfile> {
    if region.is_empty() {
        return Err(Error::invalid("distribution over an empty region"));
    }
    let vals: Vec<f64> = region.iter().map(|i| f[*i]).collect();
    Ok(DistributionProfile::from_values(&vals, grid.cell_measure()))
}

/// `‖f‖_{p,q} = p^{1/q} (∫ t^q m(t)^{q/p} dt/t)^{1/q}`; `q = ∞` gives
/// `sup_t t m(t)^{1/p}`.
pub fn lorentz_norm(profile: &DistributionProfile, p: f64, q: f64) -> Result<f64> {
    if !(p >= 1.0 && p.is_finite()) || !(q > 0.0) {
        return Err(Error::invalid(format!("Lorentz exponents need 1 <= p < inf, q > 0 (p={p}, q={q})")));
    }
    if q.is_infinite() {
        return Ok(profile
            .breakpoints
            .iter()
            .zip(&profile.measures)
            .map(|(t, m)| t * m.powf(1.0 / p))
            .fold(0.0, f64::max));
    }
    let mut s = CompensatedSum::default();
    let mut prev = 0.0;
    for (t, m) in profile.breakpoints.iter().zip(&profile.measures) {
        let tq = t.powf(q);
        s.add(m.powf(q / p) * (tq - prev));
        prev = tq;
    }
    Ok(p.powf(1.0 / q) * (s.value() / q).powf(1.0 / q))
}

/// `‖f‖_{L^p}` by direct cell summation.
pub fn lp_norm(values: &[f64], cell: f64, p: f64) -> f64 {
    let s: CompensatedSum = values.iter().map(|v| v.abs().powf(p)).collect();
    (s.value() * cell).powf(1.0 / p)
}

/// Both sides of a layer-cake identity.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LayerCake {
    pub direct: f64,
    pub breakpoint: f64,
    pub relative_gap: f64,
}

impl LayerCake {
    fn new(direct: f64, breakpoint: f64) -> Self {
        let scale = direct.abs().max(breakpoint.abs());
        LayerCake {
            direct,
            breakpoint,
            relative_gap: if scale > 0.0 { (direct - breakpoint).abs() / scale } else { 0.0 },
        }
    }
}

/// `∫ |f| μ dx` computed directly and as `∫₀^∞ μ({|f| > t}) dt`.
pub fn layercake(grid: &Grid, f: &[f64], mu: &[f64], region: &[usize]) -> Result<LayerCake> {
    if region.iter().any(|i| mu[*i] < 0.0) {
        return Err(Error::invalid("layer-cake weight must be nonnegative"));
    }
    let cell = grid.cell_measure();
    let vals: Vec<f64> = region.iter().map(|i| f[*i]).collect();
    let weights: Vec<f64> = region.iter().map(|i| mu[*i] * cell).collect();
    let direct: CompensatedSum = vals.iter().zip(&weights).map(|(v, w)| v.abs() * w).collect();
    let prof = DistributionProfile::from_weighted(&vals, &weights);
    let mut s = CompensatedSum::default();
    let mut prev = 0.0;
    for (t, m) in prof.breakpoints.iter().zip(&prof.measures) {
        s.add((t - prev) * m);
        prev = *t;
    }
    Ok(LayerCake::new(direct.value(), s.value()))
}

/// `∫ |f|^p dx` directly and as `p ∫ t^{p−1} |{|f| > t}| dt`.
pub fn layercake_power(grid: &Grid, f: &[f64], region: &[usize], p: f64) -> Result<LayerCake> {
    if !(p > 0.0) {
        return Err(Error::invalid("layer-cake power must be positive"));
    }
    let cell = grid.cell_measure();
    let vals: Vec<f64> = region.iter().map(|i| f[*i]).collect();
    let direct: CompensatedSum = vals.iter().map(|v| v.abs().powf(p) * cell).collect();
    let prof = DistributionProfile::from_values(&vals, cell);
    let mut s = CompensatedSum::default();
    let mut prev = 0.0;
    for (t, m) in prof.breakpoints.iter().zip(&prof.measures) {
        let tp = t.powf(p);
        s.add((tp - prev) * m);
        prev = tp;
    }
    Ok(LayerCake::new(direct.value(), s.value()))
}

/// Range of `t` used by a decay fit.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FitWindow {
    /// Fractional positions in the sorted breakpoint list.
    Quantile { lo: f64, hi: f64 },
    /// Explicit `[t_lo, t_hi]`.
    Range { t_lo: f64, t_hi: f64 },
}

impl Default for FitWindow {
    fn default() -> Self {
        FitWindow::Quantile { lo: 0.70, hi: 0.995 }
    }
}

impl FitWindow {
    pub fn bounds(&self, profile: &DistributionProfile) -> (f64, f64) {
        match *self {
            FitWindow::Quantile { lo, hi } => (profile.quantile(lo), profile.quantile(hi)),
            FitWindow::Range { t_lo, t_hi } => (t_lo, t_hi),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    pub samples: usize,
    pub residual: f64,
}

impl DecayFit {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

fn window_samples(profile: &DistributionProfile, window: &FitWindow) -> Result<(f64, f64, Vec<(f64, f64)>)> {
    let (lo, hi) = window.bounds(profile);
    let pts: Vec<(f64, f64)> = profile
        .breakpoints
        .iter()
        .zip(&profile.measures)
        .filter(|(t, m)| **t >= lo && **t <= hi && **m > 0.0)
        .map(|(t, m)| (*t, *m))
        .collect();
    if pts.len() < 5 {
        return Err(Error::invalid(format!(
            "fit window [{lo:e}, {hi:e}] holds {} samples; at least 5 are needed",
            pts.len()
        )));
    }
    Ok((lo, hi, pts))
}

/// Least-squares slope of `log m` against `log t` inside the window.
pub fn fit_decay(profile: &DistributionProfile, window: &FitWindow) -> Result<DecayFit> {
    fit_decay_scaled(profile, window, |_| 1.0)
}

/// [`fit_decay`] after dividing each measure by `h + log max(t, 1)`.
pub fn fit_decay_log_corrected(profile: &DistributionProfile, window: &FitWindow, h: f64) -> Result<DecayFit> {
    fit_decay_scaled(profile, window, |t| h + t.max(1.0).ln())
}

fn fit_decay_scaled(profile: &DistributionProfile, window: &FitWindow, div: impl Fn(f64) -> f64) -> Result<DecayFit> {
    let (lo, hi, pts) = window_samples(profile, window)?;
    let x: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = pts.iter().map(|p| (p.1 / div(p.0)).ln()).collect();
    let (slope, intercept, residual) = linear_fit(&x, &y);
    Ok(DecayFit {
        slope,
        intercept,
        t_lo: lo,
        t_hi: hi,
        samples: pts.len(),
        residual,
    })
}

/// Least-squares slope of `log₂ m` against `t` (exponential decay rate).
pub fn fit_exponential(profile: &DistributionProfile, window: &FitWindow) -> Result<DecayFit> {
    let (lo, hi, pts) = window_samples(profile, window)?;
    let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1.log2()).collect();
    let (slope, intercept, residual) = linear_fit(&x, &y);
    Ok(DecayFit {
        slope,
        intercept,
        t_lo: lo,
        t_hi: hi,
        samples: pts.len(),
        residual,
    })
}

/// Exponents `(p1, q1, p2, q2, p, q)` of the O'Neil inequality.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct OneilExponents {
    pub p1: f64,
    pub q1: f64,
    pub p2: f64,
    pub q2: f64,
    pub p: f64,
    pub q: f64,
}

fn inv(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        1.0 / x
    }
}

impl OneilExponents {
    pub fn validate(&self) -> Result<()> {
        let ok_p = (inv(self.p) - inv(self.p1) - inv(self.p2)).abs() < 1e-12;
        let ok_q = (inv(self.q) - inv(self.q1) - inv(self.q2)).abs() < 1e-12;
        if !ok_p || !ok_q || self.p < 1.0 {
            return Err(Error::invalid(format!(
                "incompatible O'Neil exponents {self:?}: need 1/p = 1/p1 + 1/p2, 1/q = 1/q1 + 1/q2, p >= 1"
            )));
        }
        Ok(())
    }
}

/// `‖fg‖_{p,q} / (‖f‖_{p1,q1} ‖g‖_{p2,q2})` for weighted cell values.
pub fn oneil_ratio(f: &[f64], g: &[f64], weights: &[f64], e: &OneilExponents) -> Result<f64> {
    e.validate()?;
    let fg: Vec<f64> = f.iter().zip(g).map(|(a, b)| a * b).collect();
    let num = lorentz_norm(&DistributionProfile::from_weighted(&fg, weights), e.p, e.q)?;
    let nf = lorentz_norm(&DistributionProfile::from_weighted(f, weights), e.p1, e.q1)?;
    let ng = lorentz_norm(&DistributionProfile::from_weighted(g, weights), e.p2, e.q2)?;
    Ok(num / (nf * ng))
}

pub fn oneil_check(grid: &Grid, f: &[f64], g: &[f64], region: &[usize], e: &OneilExponents) -> Result<f64> {
    let fv: Vec<f64> = region.iter().map(|i| f[*i]).collect();
    let gv: Vec<f64> = region.iter().map(|i| g[*i]).collect();
    oneil_ratio(&fv, &gv, &vec![grid.cell_measure(); region.len()], e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, DomainSpec};

    #[test]
    fn constant_field_profile() {
        let p = DistributionProfile::from_weighted(&[2.0, 2.0, -2.0], &[1.0, 0.5, 0.5]);
        assert_eq!(p.breakpoints, vec![2.0]);
        assert_eq!(p.measures, vec![2.0]);
        assert_eq!(p.measure_above(1.9), 2.0);
        assert_eq!(p.measure_above(2.0), 0.0);
        assert!((lorentz_norm(&p, 3.0, f64::INFINITY).unwrap() - 2.0 * 2f64.powf(1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn counting_profile() {
        let p = DistributionProfile::from_values(&[1.0, 2.0, 3.0], 1.0);
        assert_eq!(p.measures, vec![3.0, 2.0, 1.0]);
        assert_eq!(p.measure_above(3.5), 0.0);
        assert_eq!(p.total, 3.0);
    }

    #[test]
    fn two_level_weak_norm() {
        let p = DistributionProfile::from_weighted(&[1.0, 2.0], &[1.0, 0.5]);
        assert!((lorentz_norm(&p, 1.0, f64::INFINITY).unwrap() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn lpp_is_lp() {
        let vals: Vec<f64> = (0..200).map(|i| ((i * 37 % 101) as f64 * 0.13).sin() * 3.0).collect();
        for p in [1.0, 1.5, 2.0, 3.7] {
            let prof = DistributionProfile::from_values(&vals, 0.01);
            let a = lorentz_norm(&prof, p, p).unwrap();
            let b = lp_norm(&vals, 0.01, p);
            assert!((a - b).abs() <= 1e-12 * b);
        }
    }

    #[test]
    fn layercake_examples() {
        let g = build_grid(&DomainSpec::cube(2, 0.0, 1.0), 5).unwrap();
        let region: Vec<usize> = g.interior.clone();
        let f = vec![2.0; g.num_nodes()];
        let mu = vec![1.0; g.num_nodes()];
        let lc = layercake(&g, &f, &mu, &region).unwrap();
        let m = region.len() as f64 * g.cell_measure();
        assert!((lc.direct - 2.0 * m).abs() < 1e-15 && lc.relative_gap < 1e-12);
        let neg = vec![-1.0; g.num_nodes()];
        assert!(layercake(&g, &f, &neg, &region).is_err());
        let pw = layercake_power(&g, &f, &region, 2.5).unwrap();
        assert!(pw.relative_gap < 1e-12);
    }

    #[test]
    fn exact_power_law_fit() {
        let t: Vec<f64> = (1..=10).map(|k| k as f64).collect();
        let prof = DistributionProfile {
            breakpoints: t.clone(),
            measures: t.iter().map(|x| x.powi(-3)).collect(),
            total: 1.0,
        };
        let fit = fit_decay(&prof, &FitWindow::Range { t_lo: 1.0, t_hi: 10.0 }).unwrap();
        assert!((fit.slope + 3.0).abs() < 1e-10);
        assert!(fit_decay(&prof, &FitWindow::Range { t_lo: 1.0, t_hi: 3.0 }).is_err());
    }

    #[test]
    fn oneil_scaling_with_indicators() {
        let e = OneilExponents { p1: 2.0, q1: 2.0, p2: 4.0, q2: f64::INFINITY, p: 4.0 / 3.0, q: 2.0 };
        let r1 = oneil_ratio(&[1.0], &[1.0], &[0.3], &e).unwrap();
        let r2 = oneil_ratio(&[1.0], &[1.0], &[7.0], &e).unwrap();
        assert!((r1 - r2).abs() < 1e-12 * r1);
        let bad = OneilExponents { p: 3.0, ..e };
        assert!(oneil_ratio(&[1.0], &[1.0], &[1.0], &bad).is_err());
    }

    #[test]
    fn quantile_interpolates() {
        let prof = DistributionProfile::from_values(&[1.0, 2.0, 3.0, 4.0, 5.0], 1.0);
        assert_eq!(prof.quantile(0.0), 1.0);
        assert_eq!(prof.quantile(1.0), 5.0);
        assert!((prof.quantile(0.7) - 3.8).abs() < 1e-12);
    }
}
