use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Axis-aligned box `[lower_0, upper_0] x ... x [lower_{N-1}, upper_{N-1}]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let region = Self { lower, upper };
        region.check()?;
        Ok(region)
    }

    /// The cube `[-half_width, half_width]^dim` shifted to `center`.
    pub fn cube(center: &[f64], half_width: f64) -> Self {
        Self {
            lower: center.iter().map(|c| c - half_width).collect(),
            upper: center.iter().map(|c| c + half_width).collect(),
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.lower.is_empty() || self.lower.len() != self.upper.len() {
            return Err(Error::InvalidArgument(
                "box bounds must be nonempty and of equal dimension".into(),
            ));
        }
        if self
            .lower
            .iter()
            .zip(&self.upper)
            .any(|(l, u)| !(l.is_finite() && u.is_finite() && l <= u))
        {
            return Err(Error::InvalidArgument(format!("empty or non-finite box {self:?}")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64], slack: f64) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *v >= l - slack && *v <= u + slack)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    /// Tensor lattice with `per_axis` equispaced samples along each axis (endpoints
    /// included), enumerated with the last axis fastest.
    pub fn lattice(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let dim = self.dim();
        let total = per_axis.pow(dim as u32);
        let coord = |axis: usize, i: usize| {
            if per_axis == 1 {
                0.5 * (self.lower[axis] + self.upper[axis])
            } else {
                self.lower[axis]
                    + (self.upper[axis] - self.lower[axis]) * i as f64 / (per_axis - 1) as f64
            }
        };
        (0..total)
            .map(|mut flat| {
                let mut point = vec![0.0; dim];
                for axis in (0..dim).rev() {
                    point[axis] = coord(axis, flat % per_axis);
                    flat /= per_axis;
                }
                point
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_covers_corners() {
        let b = BoxRegion::new(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap();
        let pts = b.lattice(3);
        assert_eq!(pts.len(), 9);
        assert_eq!(pts[0], vec![-1.0, 0.0]);
        assert_eq!(pts[1], vec![-1.0, 1.0]);
        assert_eq!(pts[8], vec![1.0, 2.0]);
    }

    #[test]
    fn rejects_inverted_bounds() {
        assert!(BoxRegion::new(vec![1.0], vec![0.0]).is_err());
        assert!(BoxRegion::new(vec![], vec![]).is_err());
    }
}
