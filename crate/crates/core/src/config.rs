//! Experiment configuration files (TOML).

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::abreu::{AbreuControls, GKind};
use crate::error::{Error, Result};
use crate::estimates::DataExponents;
use crate::expr::{ScalarExpr, VectorExpr};
use crate::grid::DomainSpec;
use crate::lorentz::FitWindow;
use crate::potentials::{PotentialSpec, REGISTRY};

pub const MIN_RESOLUTION: usize = 33;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    GreensDecay,
    VolumeScan,
    Inclusion,
    Harnack,
    Maxprinciple,
    Oscillation,
    Holder,
    Abreu,
    IdentitySuite,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 9] = [
        ExperimentKind::Abreu,
        ExperimentKind::GreensDecay,
        ExperimentKind::Harnack,
        ExperimentKind::Holder,
        ExperimentKind::IdentitySuite,
        ExperimentKind::Inclusion,
        ExperimentKind::Maxprinciple,
        ExperimentKind::Oscillation,
        ExperimentKind::VolumeScan,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::GreensDecay => "greens-decay",
            ExperimentKind::VolumeScan => "volume-scan",
            ExperimentKind::Inclusion => "inclusion",
            ExperimentKind::Harnack => "harnack",
            ExperimentKind::Maxprinciple => "maxprinciple",
            ExperimentKind::Oscillation => "oscillation",
            ExperimentKind::Holder => "holder",
            ExperimentKind::Abreu => "abreu",
            ExperimentKind::IdentitySuite => "identity-suite",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.name() == s)
    }

    fn needs_potential(&self) -> bool {
        *self != ExperimentKind::Abreu
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn default_window() -> FitWindow {
    FitWindow::default()
}

fn default_tolerance() -> f64 {
    0.15
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GreensDecayParams {
    /// Pole; the domain center when empty.
    pub pole: Vec<f64>,
    #[serde(default = "default_window")]
    pub window: FitWindow,
    /// Relative tolerance on the fitted slopes.
    pub tolerance: f64,
}

impl Default for GreensDecayParams {
    fn default() -> Self {
        GreensDecayParams {
            pole: Vec::new(),
            window: default_window(),
            tolerance: default_tolerance(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VolumeScanParams {
    pub center: Vec<f64>,
    /// Explicit heights; otherwise five heights over a decade ending at half
    /// the maximal interior height.
    pub heights: Vec<f64>,
    pub max_spread: f64,
}

impl Default for VolumeScanParams {
    fn default() -> Self {
        VolumeScanParams {
            center: Vec::new(),
            heights: Vec::new(),
            max_spread: 1.35,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InclusionParams {
    pub center: Vec<f64>,
    /// Section scale `t`; a quarter of the maximal interior height when absent.
    pub t: Option<f64>,
    pub r: f64,
    pub s: f64,
    pub samples: usize,
    /// Green's-function thresholds; spread over the upper range of `g` when empty.
    pub thresholds: Vec<f64>,
    pub eta: Option<f64>,
    pub tau0: Option<f64>,
    /// Relative tolerance on the n = 3 height exponent.
    pub tolerance: f64,
}

impl Default for InclusionParams {
    fn default() -> Self {
        InclusionParams {
            center: Vec::new(),
            t: None,
            r: 0.25,
            s: 0.5,
            samples: 200,
            thresholds: Vec::new(),
            eta: None,
            tau0: None,
            tolerance: default_tolerance(),
        }
    }
}

fn default_boundary() -> ScalarExpr {
    ScalarExpr::Affine {
        constant: 1.0,
        gradient: vec![0.5, 0.0],
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnackParams {
    pub center: Vec<f64>,
    pub height: f64,
    /// Boundary data. With `normalize`, it is evaluated at
    /// `(D²u(x0))^{1/2}(x − x0)/√(2h)`, which maps the section onto the unit ball.
    pub boundary: ScalarExpr,
    pub normalize: bool,
    pub field: VectorExpr,
    pub density: ScalarExpr,
    pub exponents: DataExponents,
    /// Allowed `(max − min)/min` of the implied constants across cases.
    pub max_variation: f64,
}

impl Default for HarnackParams {
    fn default() -> Self {
        HarnackParams {
            center: Vec::new(),
            height: 0.1,
            boundary: default_boundary(),
            normalize: true,
            field: VectorExpr::Zero,
            density: ScalarExpr::Zero,
            exponents: DataExponents::default(),
            max_variation: 0.10,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadCase {
    pub name: String,
    #[serde(default = "zero_vector")]
    pub field: VectorExpr,
    #[serde(default = "zero_scalar")]
    pub density: ScalarExpr,
}

fn zero_vector() -> VectorExpr {
    VectorExpr::Zero
}

fn zero_scalar() -> ScalarExpr {
    ScalarExpr::Zero
}

/// Regression value of the corpus-wide maximum-principle constant.
pub const FROZEN_MAXPRINCIPLE_CONSTANT: f64 = 0.75;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaxPrincipleParams {
    pub center: Vec<f64>,
    /// Section height; the maximal interior height (less 0.1%) when absent.
    pub height: Option<f64>,
    pub loads: Vec<LoadCase>,
    pub exponents: DataExponents,
    pub frozen_constant: f64,
}

impl Default for MaxPrincipleParams {
    fn default() -> Self {
        MaxPrincipleParams {
            center: Vec::new(),
            height: None,
            loads: vec![
                LoadCase {
                    name: "zero".into(),
                    field: VectorExpr::Zero,
                    density: ScalarExpr::Zero,
                },
                LoadCase {
                    name: "unit-density".into(),
                    field: VectorExpr::Zero,
                    density: ScalarExpr::Constant { value: 1.0 },
                },
            ],
            exponents: DataExponents::default(),
            frozen_constant: FROZEN_MAXPRINCIPLE_CONSTANT,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OscillationParams {
    pub center: Vec<f64>,
    /// Height of the section carrying the solve.
    pub h0: f64,
    /// Oscillation heights; six halvings below `h0/2` when empty.
    pub heights: Vec<f64>,
    pub boundary: ScalarExpr,
    pub field: VectorExpr,
    pub density: ScalarExpr,
    /// The fitted exponent must exceed this.
    pub min_gamma: f64,
}

impl Default for OscillationParams {
    fn default() -> Self {
        OscillationParams {
            center: Vec::new(),
            h0: 0.2,
            heights: Vec::new(),
            boundary: default_boundary(),
            field: VectorExpr::Zero,
            density: ScalarExpr::Zero,
            min_gamma: 0.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HolderParams {
    pub beta: f64,
    /// Exponent of the boundary-data seminorm in the data bundle.
    pub alpha: f64,
    pub budget: usize,
    /// Boundary data on the whole domain.
    pub boundary: ScalarExpr,
    pub field: VectorExpr,
    pub density: ScalarExpr,
    pub exponents: DataExponents,
}

impl Default for HolderParams {
    fn default() -> Self {
        HolderParams {
            beta: 0.5,
            alpha: 1.0,
            budget: 2000,
            boundary: default_boundary(),
            field: VectorExpr::Zero,
            density: ScalarExpr::Zero,
            exponents: DataExponents::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AbreuCase {
    /// `f = −1`, `φ = |x|²/2`, `ψ = G'(1)`.
    Smooth,
    /// Radial manufactured solution on the unit disc (G = log, n = 2).
    Manufactured,
    /// `f`, `φ`, `ψ` from the `data` table.
    Custom,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbreuData {
    pub f: ScalarExpr,
    pub phi: ScalarExpr,
    pub psi: ScalarExpr,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualCheck {
    pub resolution: usize,
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_margin() -> f64 {
    0.25
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AbreuParams {
    pub g_kind: GKind,
    pub case: AbreuCase,
    pub data: Option<AbreuData>,
    pub controls: AbreuControls,
    /// Minimal observed order of the `u` error (manufactured case, ≥ 2 resolutions).
    pub min_order: f64,
    pub dual: Option<DualCheck>,
    /// Write converged `u` and `w` in the grid field format.
    pub save_fields: bool,
}

impl Default for AbreuParams {
    fn default() -> Self {
        AbreuParams {
            g_kind: GKind::Log,
            case: AbreuCase::Smooth,
            data: None,
            controls: AbreuControls::default(),
            min_order: 1.5,
            dual: None,
            save_fields: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentityParams {
    pub pole: Vec<f64>,
    /// Energy levels as fractions of `max g`.
    pub energy_levels: Vec<f64>,
    pub energy_tolerance: f64,
    /// Seeded random fields for the layer-cake identities.
    pub random_fields: usize,
    /// Side of the `(k, t)` grid for the key inequality.
    pub key_grid: usize,
    /// Relative tolerance of the exact identities.
    pub exact_tolerance: f64,
}

impl Default for IdentityParams {
    fn default() -> Self {
        IdentityParams {
            pole: Vec::new(),
            energy_levels: vec![0.1, 0.2, 0.4],
            energy_tolerance: 0.05,
            random_fields: 10,
            key_grid: 5,
            exact_tolerance: 1e-12,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
#[serde(untagged)]
pub enum Params {
    GreensDecay(GreensDecayParams),
    VolumeScan(VolumeScanParams),
    Inclusion(InclusionParams),
    Harnack(HarnackParams),
    Maxprinciple(MaxPrincipleParams),
    Oscillation(OscillationParams),
    Holder(HolderParams),
    Abreu(AbreuParams),
    IdentitySuite(IdentityParams),
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub potentials: Vec<PotentialSpec>,
    pub domain: DomainSpec,
    pub resolutions: Vec<usize>,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub params: Params,
}

fn take<T: DeserializeOwned>(v: toml::Value, field: &str) -> Result<T> {
    v.try_into().map_err(|e: toml::de::Error| Error::config(field, e.message().to_string()))
}

fn parse_potential(v: toml::Value, field: &str, n: usize) -> Result<PotentialSpec> {
    let name = v
        .get("name")
        .ok_or_else(|| Error::config(format!("{field}.name"), "missing potential name"))?
        .as_str()
        .ok_or_else(|| Error::config(format!("{field}.name"), "must be a string"))?
        .to_string();
    if !REGISTRY.contains(&name.as_str()) {
        return Err(Error::config(
            format!("{field}.name"),
            format!("unknown potential `{name}`; registered: {}", REGISTRY.join(", ")),
        ));
    }
    let spec: PotentialSpec = take(v, field)?;
    spec.validate(n).map_err(|e| Error::config(field, e.to_string()))?;
    Ok(spec)
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config("<syntax>", e.to_string()))?;
        const KNOWN: [&str; 8] = ["kind", "potential", "potentials", "domain", "resolution", "resolutions", "seed", "output_dir"];
        if let Some(k) = table.keys().find(|k| !KNOWN.contains(&k.as_str()) && k.as_str() != "params") {
            return Err(Error::config(k.clone(), "unknown field"));
        }
        let kind_name = table
            .remove("kind")
            .ok_or_else(|| Error::config("kind", "missing experiment kind"))?;
        let kind_name = kind_name.as_str().ok_or_else(|| Error::config("kind", "must be a string"))?.to_string();
        let kind = ExperimentKind::parse(&kind_name).ok_or_else(|| {
            let names: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
            Error::config("kind", format!("unknown experiment kind `{kind_name}`; expected one of {}", names.join(", ")))
        })?;

        let domain: DomainSpec = take(table.remove("domain").ok_or_else(|| Error::config("domain", "missing domain"))?, "domain")?;
        domain.validate().map_err(|e| Error::config("domain", e.to_string()))?;
        let n = domain.dimension;

        let mut potentials = Vec::new();
        match (table.remove("potential"), table.remove("potentials")) {
            (Some(_), Some(_)) => return Err(Error::config("potentials", "give either `potential` or `potentials`, not both")),
            (Some(p), None) => potentials.push(parse_potential(p, "potential", n)?),
            (None, Some(toml::Value::Array(ps))) => {
                for (i, p) in ps.into_iter().enumerate() {
                    potentials.push(parse_potential(p, &format!("potentials[{i}]"), n)?);
                }
            }
            (None, Some(_)) => return Err(Error::config("potentials", "must be an array of tables")),
            (None, None) => {}
        }
        if !potentials.is_empty() && !kind.needs_potential() {
            return Err(Error::config("potential", format!("`{kind}` solves for its own potential; remove this field")));
        }
        if potentials.is_empty() && kind.needs_potential() {
            return Err(Error::config("potential", format!("missing potential (required by `{kind}`)")));
        }

        let resolutions: Vec<usize> = match (table.remove("resolution"), table.remove("resolutions")) {
            (Some(_), Some(_)) => return Err(Error::config("resolutions", "give either `resolution` or `resolutions`")),
            (Some(r), None) => vec![take(r, "resolution")?],
            (None, Some(r)) => take(r, "resolutions")?,
            (None, None) => return Err(Error::config("resolutions", "missing resolution")),
        };
        if resolutions.is_empty() {
            return Err(Error::config("resolutions", "empty list"));
        }
        if let Some(r) = resolutions.iter().find(|r| **r < MIN_RESOLUTION) {
            return Err(Error::config("resolutions", format!("resolution {r} is below the minimum {MIN_RESOLUTION}")));
        }
        let seed: u64 = match table.remove("seed") {
            Some(s) => take(s, "seed")?,
            None => 0,
        };
        let output_dir: Option<PathBuf> = table.remove("output_dir").map(|v| take(v, "output_dir")).transpose()?;
        let raw = table.remove("params").unwrap_or_else(|| toml::Value::Table(toml::Table::new()));
        let params = match kind {
            ExperimentKind::GreensDecay => Params::GreensDecay(take(raw, "params")?),
            ExperimentKind::VolumeScan => Params::VolumeScan(take(raw, "params")?),
            ExperimentKind::Inclusion => Params::Inclusion(take(raw, "params")?),
            ExperimentKind::Harnack => Params::Harnack(take(raw, "params")?),
            ExperimentKind::Maxprinciple => Params::Maxprinciple(take(raw, "params")?),
            ExperimentKind::Oscillation => Params::Oscillation(take(raw, "params")?),
            ExperimentKind::Holder => Params::Holder(take(raw, "params")?),
            ExperimentKind::Abreu => Params::Abreu(take(raw, "params")?),
            ExperimentKind::IdentitySuite => Params::IdentitySuite(take(raw, "params")?),
        };
        let cfg = ExperimentConfig {
            kind,
            potentials,
            domain,
            resolutions,
            seed,
            output_dir,
            params,
        };
        cfg.validate_params()?;
        Ok(cfg)
    }

    fn validate_params(&self) -> Result<()> {
        let n = self.domain.dimension;
        let point = |v: &[f64], f: &str| {
            if v.is_empty() || v.len() == n {
                Ok(())
            } else {
                Err(Error::config(f, format!("needs {n} coordinates")))
            }
        };
        let positive = |v: f64, f: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(f, "must be positive"))
            }
        };
        match &self.params {
            Params::GreensDecay(p) => {
                point(&p.pole, "params.pole")?;
                positive(p.tolerance, "params.tolerance")?;
            }
            Params::VolumeScan(p) => {
                point(&p.center, "params.center")?;
                if p.heights.iter().any(|h| !(*h > 0.0)) {
                    return Err(Error::config("params.heights", "heights must be positive"));
                }
                positive(p.max_spread, "params.max_spread")?;
            }
            Params::Inclusion(p) => {
                point(&p.center, "params.center")?;
                if !(0.0 < p.r && p.r < p.s && p.s <= 1.0) {
                    return Err(Error::config("params.r", "need 0 < r < s <= 1"));
                }
                if p.eta.is_some() != p.tau0.is_some() {
                    return Err(Error::config("params.tau0", "eta and tau0 go together"));
                }
            }
            Params::Harnack(p) => {
                point(&p.center, "params.center")?;
                positive(p.height, "params.height")?;
                p.boundary.validate(n, "params.boundary")?;
                p.field.validate(n, "params.field")?;
                p.density.validate(n, "params.density")?;
            }
            Params::Maxprinciple(p) => {
                point(&p.center, "params.center")?;
                if p.loads.is_empty() {
                    return Err(Error::config("params.loads", "no load cases"));
                }
                for (i, l) in p.loads.iter().enumerate() {
                    l.field.validate(n, &format!("params.loads[{i}].field"))?;
                    l.density.validate(n, &format!("params.loads[{i}].density"))?;
                }
                positive(p.frozen_constant, "params.frozen_constant")?;
            }
            Params::Oscillation(p) => {
                point(&p.center, "params.center")?;
                positive(p.h0, "params.h0")?;
                if !p.heights.is_empty() && p.heights.len() < 4 {
                    return Err(Error::config("params.heights", "need at least 4 heights"));
                }
                p.boundary.validate(n, "params.boundary")?;
                p.field.validate(n, "params.field")?;
                p.density.validate(n, "params.density")?;
            }
            Params::Holder(p) => {
                if !(p.beta > 0.0 && p.beta <= 1.0) {
                    return Err(Error::config("params.beta", "need 0 < beta <= 1"));
                }
                if !(p.alpha > 0.0 && p.alpha <= 1.0) {
                    return Err(Error::config("params.alpha", "need 0 < alpha <= 1"));
                }
                if p.budget < 1000 {
                    return Err(Error::config("params.budget", "need at least 1000 pairs"));
                }
                p.boundary.validate(n, "params.boundary")?;
                p.field.validate(n, "params.field")?;
                p.density.validate(n, "params.density")?;
            }
            Params::Abreu(p) => {
                match (&p.case, &p.data) {
                    (AbreuCase::Custom, None) => return Err(Error::config("params.data", "custom case needs f, phi and psi")),
                    (AbreuCase::Custom, Some(d)) => {
                        d.f.validate(n, "params.data.f")?;
                        d.phi.validate(n, "params.data.phi")?;
                        d.psi.validate(n, "params.data.psi")?;
                    }
                    (_, Some(_)) => return Err(Error::config("params.data", "only the custom case takes data")),
                    _ => {}
                }
                if p.case == AbreuCase::Manufactured && (n != 2 || p.g_kind != GKind::Log) {
                    return Err(Error::config("params.case", "the manufactured case is two-dimensional with g_kind = \"log\""));
                }
                if let Some(d) = &p.dual {
                    if d.resolution < 5 {
                        return Err(Error::config("params.dual.resolution", "at least 5"));
                    }
                }
            }
            Params::IdentitySuite(p) => {
                point(&p.pole, "params.pole")?;
                if p.energy_levels.iter().any(|k| !(*k > 0.0 && *k < 0.8)) {
                    return Err(Error::config("params.energy_levels", "fractions of max g in (0, 0.8)"));
                }
                if p.key_grid == 0 {
                    return Err(Error::config("params.key_grid", "must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Config echo for reports.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }
}
