//! Named analytic expressions for loads, boundary data and Abreu data.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{dist2, load_scalar_field, Grid, Point, ScalarField, VectorField};
use crate::potentials::Potential;

fn pad(v: &[f64]) -> Point {
    let mut p = [0.0; 3];
    for (a, b) in p.iter_mut().zip(v) {
        *a = *b;
    }
    p
}

/// Scalar field addressed by `kind` in configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScalarExpr {
    Zero,
    Constant {
        value: f64,
    },
    /// `constant + gradient·x`; missing gradient entries are zero.
    Affine {
        constant: f64,
        gradient: Vec<f64>,
    },
    /// `scale |x − center|²/2`.
    Quadratic {
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        center: Vec<f64>,
    },
    /// `scale |x − center|^power`.
    RadialPower {
        power: f64,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        center: Vec<f64>,
    },
    /// `amplitude exp(−|x − center|²/(2 width²))`.
    Gaussian {
        amplitude: f64,
        width: f64,
        #[serde(default)]
        center: Vec<f64>,
    },
    /// `value` on the box `[lo, hi)`, zero elsewhere.
    Indicator {
        lo: Vec<f64>,
        hi: Vec<f64>,
        #[serde(default = "one")]
        value: f64,
    },
    /// `scale · Δu` of the experiment's potential.
    PotentialLaplacian {
        #[serde(default = "one")]
        scale: f64,
    },
    /// Values read from a saved field (grid field format).
    File {
        path: PathBuf,
    },
}

/// Vector field addressed by `kind` in configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum VectorExpr {
    Zero,
    Constant {
        value: Vec<f64>,
    },
    /// `scale (x − center)`.
    Radial {
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        center: Vec<f64>,
    },
    /// `scale (−x₂, x₁, 0)`.
    Rotation {
        #[serde(default = "one")]
        scale: f64,
    },
    /// `value` on the box `[lo, hi)`, zero elsewhere.
    Indicator {
        lo: Vec<f64>,
        hi: Vec<f64>,
        value: Vec<f64>,
    },
    /// `scale · Du` of the experiment's potential.
    PotentialGradient {
        #[serde(default = "one")]
        scale: f64,
    },
}

fn one() -> f64 {
    1.0
}

/// Half-open `[lo, hi)`, so grid-aligned boxes get their exact measure.
fn in_box(x: &Point, lo: &[f64], hi: &[f64]) -> bool {
    lo.iter().zip(hi).enumerate().all(|(i, (l, h))| x[i] >= *l && x[i] < *h)
}

impl ScalarExpr {
    pub fn is_zero(&self) -> bool {
        matches!(self, ScalarExpr::Zero)
    }

    /// Pointwise value; `None` for kinds that need a potential or a file.
    pub fn eval(&self, x: &Point) -> Option<f64> {
        Some(match self {
            ScalarExpr::Zero => 0.0,
            ScalarExpr::Constant { value } => *value,
            ScalarExpr::Affine { constant, gradient } => {
                constant + gradient.iter().enumerate().map(|(i, g)| g * x[i]).sum::<f64>()
            }
            ScalarExpr::Quadratic { scale, center } => 0.5 * scale * dist2(x, &pad(center)),
            ScalarExpr::RadialPower { power, scale, center } => scale * dist2(x, &pad(center)).sqrt().powf(*power),
            ScalarExpr::Gaussian {
                amplitude,
                width,
                center,
            } => amplitude * (-dist2(x, &pad(center)) / (2.0 * width * width)).exp(),
            ScalarExpr::Indicator { lo, hi, value } => {
                if in_box(x, lo, hi) {
                    *value
                } else {
                    0.0
                }
            }
            ScalarExpr::PotentialLaplacian { .. } | ScalarExpr::File { .. } => return None,
        })
    }

    /// Samples the expression at every node (zero at exterior nodes).
    pub fn field(&self, grid: &Grid, u: Option<&Potential>) -> Result<ScalarField> {
        match self {
            ScalarExpr::PotentialLaplacian { scale } => {
                let u = u.ok_or_else(|| Error::invalid("potential-laplacian needs a potential"))?;
                let mut f = ScalarField::zeros(grid);
                for i in 0..grid.num_nodes() {
                    if grid.is_defined(i) {
                        f[i] = scale * u.hessian[i].trace();
                    }
                }
                Ok(f)
            }
            ScalarExpr::File { path } => load_scalar_field(path, grid),
            _ => {
                let mut f = ScalarField::zeros(grid);
                for i in 0..grid.num_nodes() {
                    if grid.is_defined(i) {
                        f[i] = self.eval(&grid.point(i)).unwrap_or(0.0);
                    }
                }
                Ok(f)
            }
        }
    }

    pub fn validate(&self, n: usize, field: &str) -> Result<()> {
        let bad = |m: &str| Err(Error::config(field, m.to_string()));
        match self {
            ScalarExpr::Affine { gradient, .. } if gradient.len() > n => bad("gradient has more than n entries"),
            ScalarExpr::Gaussian { width, .. } if !(*width > 0.0) => bad("width must be positive"),
            ScalarExpr::Indicator { lo, hi, .. } if lo.len() != n || hi.len() != n => bad("lo and hi need n entries"),
            ScalarExpr::Quadratic { center, .. } | ScalarExpr::RadialPower { center, .. } | ScalarExpr::Gaussian { center, .. }
                if !center.is_empty() && center.len() != n =>
            {
                bad("center needs n entries")
            }
            _ => Ok(()),
        }
    }
}

impl VectorExpr {
    pub fn is_zero(&self) -> bool {
        matches!(self, VectorExpr::Zero)
    }

    pub fn field(&self, grid: &Grid, u: Option<&Potential>) -> Result<VectorField> {
        let mut out = vec![[0.0; 3]; grid.num_nodes()];
        for (i, o) in out.iter_mut().enumerate() {
            if !grid.is_defined(i) {
                continue;
            }
            let x = grid.point(i);
            *o = match self {
                VectorExpr::Zero => [0.0; 3],
                VectorExpr::Constant { value } => pad(value),
                VectorExpr::Radial { scale, center } => {
                    let c = pad(center);
                    [scale * (x[0] - c[0]), scale * (x[1] - c[1]), scale * (x[2] - c[2])]
                }
                VectorExpr::Rotation { scale } => [-scale * x[1], scale * x[0], 0.0],
                VectorExpr::Indicator { lo, hi, value } => {
                    if in_box(&x, lo, hi) {
                        pad(value)
                    } else {
                        [0.0; 3]
                    }
                }
                VectorExpr::PotentialGradient { scale } => {
                    let u = u.ok_or_else(|| Error::invalid("potential-gradient needs a potential"))?;
                    let g = u.gradient[i];
                    [scale * g[0], scale * g[1], scale * g[2]]
                }
            };
            for c in o.iter_mut().skip(grid.n) {
                *c = 0.0;
            }
        }
        Ok(VectorField(out))
    }

    pub fn validate(&self, n: usize, field: &str) -> Result<()> {
        let bad = |m: &str| Err(Error::config(field, m.to_string()));
        match self {
            VectorExpr::Constant { value } if value.len() != n => bad("value needs n entries"),
            VectorExpr::Indicator { lo, hi, value } if lo.len() != n || hi.len() != n || value.len() != n => {
                bad("lo, hi and value need n entries")
            }
            VectorExpr::Rotation { .. } if n != 2 => bad("rotation is two-dimensional"),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_evaluates() {
        let e: ScalarExpr = toml::from_str("kind = \"affine\"\nconstant = 1.0\ngradient = [0.5, 0.0]").unwrap();
        assert_eq!(e.eval(&[2.0, 7.0, 0.0]), Some(2.0));
        let g: ScalarExpr = toml::from_str("kind = \"gaussian\"\namplitude = 2.0\nwidth = 1.0").unwrap();
        assert_eq!(g.eval(&[0.0; 3]), Some(2.0));
        assert!(toml::from_str::<ScalarExpr>("kind = \"nope\"").is_err());
        let v: VectorExpr = toml::from_str("kind = \"rotation\"").unwrap();
        assert!(v.validate(3, "load.field").is_err());
    }
}
