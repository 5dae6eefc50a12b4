//! Least-squares power laws `value ≈ C eps^slope` in log-log coordinates.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderFit {
    pub pairs: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Fits `log value = intercept + slope log eps`. Needs at least three pairs with positive
/// values and positive, not all equal, `eps`.
pub fn fit_order(pairs: &[(f64, f64)]) -> Result<OrderFit> {
    if pairs.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "order fit needs at least 3 pairs, got {}",
            pairs.len()
        )));
    }
    for &(eps, value) in pairs {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::NonPositiveValue(value));
        }
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
        }
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("order fit needs distinct eps".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    Ok(OrderFit {
        pairs: pairs.to_vec(),
        slope,
        intercept,
        r_squared,
    })
}
