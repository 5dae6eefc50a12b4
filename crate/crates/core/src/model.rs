//! A problem instance: dimension, exponents, coefficients and the matching ground state.

use std::sync::Arc;

use crate::ground_state::{solve_ground_state, GroundStateConstants, GroundStateProfile, ShootingOptions};
use crate::landscape::Landscape;
use crate::potential::PotentialTriple;
use crate::{Error, Result};

/// `(N+2)/(N-2)`, defined for `N >= 3`.
pub fn critical_sigma(dim: usize) -> Result<f64> {
    if dim < 3 {
        return Err(Error::InvalidArgument(format!(
            "the critical exponent needs N >= 3, got N={dim}"
        )));
    }
    Ok((dim as f64 + 2.0) / (dim as f64 - 2.0))
}

#[derive(Debug, Clone)]
pub struct Model {
    pub dim: usize,
    pub p: f64,
    pub sigma: f64,
    pub triple: PotentialTriple,
    pub profile: Arc<GroundStateProfile>,
    pub constants: GroundStateConstants,
}

impl Model {
    pub fn new(p: f64, sigma: f64, triple: PotentialTriple, profile: Arc<GroundStateProfile>) -> Result<Self> {
        let dim = profile.dim;
        if profile.p != p {
            return Err(Error::InvalidArgument(format!(
                "profile was computed for p={}, model uses p={p}",
                profile.p
            )));
        }
        if !(sigma > p) {
            return Err(Error::InvalidArgument(format!("sigma={sigma} must exceed p={p}")));
        }
        triple.check(dim)?;
        let constants = profile.constants(sigma);
        Ok(Self {
            dim,
            p,
            sigma,
            triple,
            profile,
            constants,
        })
    }

    /// Shoots the ground state and assembles the model.
    pub fn solve(dim: usize, p: f64, sigma: f64, triple: PotentialTriple, options: &ShootingOptions) -> Result<Self> {
        let profile = solve_ground_state(dim, p, options)?;
        Self::new(p, sigma, triple, Arc::new(profile))
    }

    /// `Γ` with the continuum constants.
    pub fn landscape(&self) -> Landscape<'_> {
        Landscape::new(self, self.constants)
    }
}
