//! Closed-form coefficient families for `V`, `K` and `Q`.
//!
//! Every family is a finite sum of smooth terms with exact first and second
//! derivatives, so the landscape and the tangent vectors of the ansatz never
//! rely on numerical differentiation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::region::BoxRegion;
use crate::{Error, Hypothesis, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Constant,
    GaussianBump,
    SumOfGaussians,
    PolynomialTaper,
}

/// One term of a family: for the Gaussian families `amplitude * exp(-|x - center|^2 / width^2)`,
/// for the taper `amplitude * (u - u^3/3)` with `u = (x_0 - center_0) / width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: Vec<f64>,
    pub amplitude: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub family: Family,
    #[serde(default)]
    pub parameters: Vec<Bump>,
    #[serde(default)]
    pub offset: f64,
}

/// Value, gradient and Hessian of a scalar function at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: DMatrix<f64>,
}

impl Jet {
    fn zero(dim: usize) -> Self {
        Self {
            value: 0.0,
            grad: vec![0.0; dim],
            hess: DMatrix::zeros(dim, dim),
        }
    }
}

impl PotentialSpec {
    pub fn constant(value: f64) -> Self {
        Self {
            family: Family::Constant,
            parameters: Vec::new(),
            offset: value,
        }
    }

    pub fn gaussian_bump(center: Vec<f64>, amplitude: f64, width: f64, offset: f64) -> Self {
        Self {
            family: Family::GaussianBump,
            parameters: vec![Bump {
                center,
                amplitude,
                width,
            }],
            offset,
        }
    }

    pub fn sum_of_gaussians(bumps: Vec<Bump>, offset: f64) -> Self {
        Self {
            family: Family::SumOfGaussians,
            parameters: bumps,
            offset,
        }
    }

    pub fn polynomial_taper(bumps: Vec<Bump>, offset: f64) -> Self {
        Self {
            family: Family::PolynomialTaper,
            parameters: bumps,
            offset,
        }
    }

    /// Same spec with the offset adjusted so the function vanishes at the origin.
    pub fn vanishing_at_origin(mut self, dim: usize) -> Self {
        let at_zero = self.value(&vec![0.0; dim]);
        self.offset -= at_zero;
        self
    }

    pub fn check(&self, dim: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        match self.family {
            Family::Constant if !self.parameters.is_empty() => {
                return bad("constant family takes no parameters".into())
            }
            Family::GaussianBump if self.parameters.len() != 1 => {
                return bad("gaussian-bump takes exactly one parameter set".into())
            }
            Family::SumOfGaussians | Family::PolynomialTaper if self.parameters.is_empty() => {
                return bad(format!("{:?} needs at least one parameter set", self.family))
            }
            _ => {}
        }
        if !self.offset.is_finite() {
            return bad("offset must be finite".into());
        }
        for b in &self.parameters {
            if b.center.len() != dim {
                return bad(format!(
                    "parameter center has dimension {}, expected {dim}",
                    b.center.len()
                ));
            }
            if !(b.width > 0.0 && b.width.is_finite()) || !b.amplitude.is_finite() {
                return bad(format!("invalid amplitude/width in {b:?}"));
            }
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let mut value = self.offset;
        match self.family {
            Family::Constant => {}
            Family::GaussianBump | Family::SumOfGaussians => {
                for b in &self.parameters {
                    let r2: f64 = x
                        .iter()
                        .zip(&b.center)
                        .map(|(xi, ci)| (xi - ci) * (xi - ci))
                        .sum();
                    value += b.amplitude * (-r2 / (b.width * b.width)).exp();
                }
            }
            Family::PolynomialTaper => {
                for b in &self.parameters {
                    let u = (x[0] - b.center[0]) / b.width;
                    value += b.amplitude * (u - u * u * u / 3.0);
                }
            }
        }
        value
    }

    pub fn jet(&self, x: &[f64]) -> Jet {
        let dim = x.len();
        let mut jet = Jet::zero(dim);
        jet.value = self.offset;
        match self.family {
            Family::Constant => {}
            Family::GaussianBump | Family::SumOfGaussians => {
                for b in &self.parameters {
                    let w2 = b.width * b.width;
                    let d: Vec<f64> = x.iter().zip(&b.center).map(|(xi, ci)| xi - ci).collect();
                    let r2: f64 = d.iter().map(|v| v * v).sum();
                    let g = b.amplitude * (-r2 / w2).exp();
                    jet.value += g;
                    for i in 0..dim {
                        jet.grad[i] += -2.0 * g * d[i] / w2;
                        for j in 0..dim {
                            let delta = if i == j { 1.0 } else { 0.0 };
                            jet.hess[(i, j)] += g * (4.0 * d[i] * d[j] / (w2 * w2) - 2.0 * delta / w2);
                        }
                    }
                }
            }
            Family::PolynomialTaper => {
                for b in &self.parameters {
                    let u = (x[0] - b.center[0]) / b.width;
                    jet.value += b.amplitude * (u - u * u * u / 3.0);
                    jet.grad[0] += b.amplitude * (1.0 - u * u) / b.width;
                    jet.hess[(0, 0)] += b.amplitude * (-2.0 * u) / (b.width * b.width);
                }
            }
        }
        jet
    }

    pub fn is_constant(&self) -> bool {
        self.family == Family::Constant
            || self.parameters.iter().all(|b| b.amplitude == 0.0)
    }
}

/// Point values of the three coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub v: f64,
    pub k: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialTriple {
    #[serde(rename = "V")]
    pub v: PotentialSpec,
    #[serde(rename = "K")]
    pub k: PotentialSpec,
    #[serde(rename = "Q")]
    pub q: PotentialSpec,
    #[serde(default = "default_lower_bound")]
    pub lower_bound_c: f64,
}

fn default_lower_bound() -> f64 {
    1e-3
}

impl PotentialTriple {
    pub fn new(v: PotentialSpec, k: PotentialSpec, q: PotentialSpec, lower_bound_c: f64) -> Self {
        Self {
            v,
            k,
            q,
            lower_bound_c,
        }
    }

    /// `V = K = 1` with the given `Q`.
    pub fn unit_vk(q: PotentialSpec) -> Self {
        Self::new(
            PotentialSpec::constant(1.0),
            PotentialSpec::constant(1.0),
            q,
            default_lower_bound(),
        )
    }

    pub fn check(&self, dim: usize) -> Result<()> {
        self.v.check(dim)?;
        self.k.check(dim)?;
        self.q.check(dim)?;
        if !(self.lower_bound_c > 0.0) {
            return Err(Error::InvalidArgument("lower_bound_c must be positive".into()));
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &[f64]) -> Coefficients {
        Coefficients {
            v: self.v.value(x),
            k: self.k.value(x),
            q: self.q.value(x),
        }
    }

    /// Exact jets of `V`, `K`, `Q` in that order.
    pub fn derivatives(&self, x: &[f64]) -> [Jet; 3] {
        [self.v.jet(x), self.k.jet(x), self.q.jet(x)]
    }

    /// Both `V` and `K` are constant, so the ansatz scaling does not depend on the peak.
    pub fn has_constant_vk(&self) -> bool {
        self.v.is_constant() && self.k.is_constant()
    }

    /// Samples the hypotheses on a `samples_per_axis^N` lattice of `region`.
    pub fn validate_hypotheses(
        &self,
        region: &BoxRegion,
        samples_per_axis: usize,
    ) -> Result<ValidationReport> {
        region.check()?;
        if samples_per_axis < 2 {
            return Err(Error::InvalidArgument("samples_per_axis must be at least 2".into()));
        }
        let dim = region.dim();
        self.check(dim)?;

        let mut report = ValidationReport {
            min_v: f64::INFINITY,
            min_k: f64::INFINITY,
            q_at_origin: self.q.value(&vec![0.0; dim]).abs(),
            sup_values: [0.0; 3],
            sup_second_derivatives: [0.0; 3],
            samples: 0,
        };
        let mut argmin_v = Vec::new();
        let mut argmin_k = Vec::new();
        for x in region.lattice(samples_per_axis) {
            let jets = self.derivatives(&x);
            for (slot, jet) in jets.iter().enumerate() {
                let hess_sup = jet.hess.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                if !jet.value.is_finite() || !hess_sup.is_finite() {
                    return Err(Error::HypothesisViolation {
                        hypothesis: Hypothesis::Boundedness,
                        witness: x,
                        value: jet.value,
                    });
                }
                report.sup_values[slot] = report.sup_values[slot].max(jet.value.abs());
                report.sup_second_derivatives[slot] =
                    report.sup_second_derivatives[slot].max(hess_sup);
            }
            if jets[0].value < report.min_v {
                report.min_v = jets[0].value;
                argmin_v = x.clone();
            }
            if jets[1].value < report.min_k {
                report.min_k = jets[1].value;
                argmin_k = x.clone();
            }
            report.samples += 1;
        }

        if report.min_v < self.lower_bound_c {
            return Err(Error::HypothesisViolation {
                hypothesis: Hypothesis::VPositivity,
                witness: argmin_v,
                value: report.min_v,
            });
        }
        if report.min_k < self.lower_bound_c {
            return Err(Error::HypothesisViolation {
                hypothesis: Hypothesis::KPositivity,
                witness: argmin_k,
                value: report.min_k,
            });
        }
        if report.q_at_origin > 1e-14 {
            return Err(Error::HypothesisViolation {
                hypothesis: Hypothesis::QAtOrigin,
                witness: vec![0.0; dim],
                value: report.q_at_origin,
            });
        }
        Ok(report)
    }
}

/// Sampled evidence that the coefficients satisfy positivity, boundedness and `Q(0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub min_v: f64,
    pub min_k: f64,
    pub q_at_origin: f64,
    /// Sup-norms of `|V|, |K|, |Q|` over the lattice.
    pub sup_values: [f64; 3],
    /// Sup-norms of the Hessian entries of `V, K, Q` over the lattice.
    pub sup_second_derivatives: [f64; 3],
    pub samples: usize,
}
