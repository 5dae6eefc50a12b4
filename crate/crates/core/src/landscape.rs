//! The landscape `Γ = C1 Γ1 - C2 Γ2` with
//! `Γ1 = V^{(p+1)/(p-1) - N/2} K^{-2/(p-1)}` and
//! `Γ2 = Q V^{(σ+1)/(p-1) - N/2} K^{-(σ+1)/(p-1)}`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ground_state::GroundStateConstants;
use crate::model::Model;
use crate::potential::{Jet, PotentialTriple};
use crate::region::BoxRegion;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GammaEval {
    pub xi: Vec<f64>,
    pub gamma: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub grad: Vec<f64>,
    pub hessian: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticalKind {
    NondegenerateMin,
    NondegenerateMax,
    NondegenerateSaddle,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub location: Vec<f64>,
    pub kind: CriticalKind,
    pub hessian_eigenvalues: Vec<f64>,
    pub newton_residual: f64,
    pub gamma: f64,
}

/// Critical points are accepted when `|∇Γ| <= NEWTON_TOL`.
pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITERS: usize = 100;
pub const DEDUP_RADIUS: f64 = 1e-6;
pub const DEGENERACY_RATIO: f64 = 1e-8;

/// `Γ` for a given triple and pair of constants.
#[derive(Debug, Clone, Copy)]
pub struct Landscape<'a> {
    pub triple: &'a PotentialTriple,
    pub constants: GroundStateConstants,
    pub p: f64,
    pub sigma: f64,
    pub dim: usize,
}

/// `V^a K^b` with gradient and Hessian.
fn power_product(v: &Jet, k: &Jet, a: f64, b: f64) -> Jet {
    let dim = v.grad.len();
    let value = v.value.powf(a) * k.value.powf(b);
    let gv = DVector::from_column_slice(&v.grad);
    let gk = DVector::from_column_slice(&k.grad);
    let grad_log = &gv * (a / v.value) + &gk * (b / k.value);
    let hess_log = (&v.hess / v.value - &gv * gv.transpose() / (v.value * v.value)) * a
        + (&k.hess / k.value - &gk * gk.transpose() / (k.value * k.value)) * b;
    let hess = (hess_log + &grad_log * grad_log.transpose()) * value;
    let grad = grad_log * value;
    debug_assert_eq!(grad.len(), dim);
    Jet {
        value,
        grad: grad.iter().copied().collect(),
        hess,
    }
}

impl<'a> Landscape<'a> {
    pub fn new(model: &'a Model, constants: GroundStateConstants) -> Self {
        Self {
            triple: &model.triple,
            constants,
            p: model.p,
            sigma: model.sigma,
            dim: model.dim,
        }
    }

    pub fn exponents(&self) -> [(f64, f64); 2] {
        let (p, s, n) = (self.p, self.sigma, self.dim as f64);
        [
            ((p + 1.0) / (p - 1.0) - n / 2.0, -2.0 / (p - 1.0)),
            ((s + 1.0) / (p - 1.0) - n / 2.0, -(s + 1.0) / (p - 1.0)),
        ]
    }

    pub fn at(&self, xi: &[f64]) -> Result<GammaEval> {
        if xi.len() != self.dim {
            return Err(Error::InvalidArgument("ξ has wrong dimension".into()));
        }
        let [v, k, q] = self.triple.derivatives(xi);
        if !(v.value > 0.0 && k.value > 0.0) {
            return Err(Error::Domain(format!(
                "V={} and K={} must be positive at {xi:?}",
                v.value, k.value
            )));
        }
        let [(a1, b1), (a2, b2)] = self.exponents();
        let g1 = power_product(&v, &k, a1, b1);
        let w = power_product(&v, &k, a2, b2);
        let gq = DVector::from_column_slice(&q.grad);
        let gw = DVector::from_column_slice(&w.grad);
        let g2_grad = &gq * w.value + &gw * q.value;
        let g2_hess = &q.hess * w.value + &gq * gw.transpose() + &gw * gq.transpose() + &w.hess * q.value;
        let gamma2 = q.value * w.value;

        let (c1, c2) = (self.constants.cbar1, self.constants.cbar2);
        let grad = DVector::from_column_slice(&g1.grad) * c1 - g2_grad * c2;
        let hessian = &g1.hess * c1 - g2_hess * c2;
        Ok(GammaEval {
            xi: xi.to_vec(),
            gamma: c1 * g1.value - c2 * gamma2,
            gamma1: g1.value,
            gamma2,
            grad: grad.iter().copied().collect(),
            hessian: (&hessian + hessian.transpose()) * 0.5,
        })
    }

    pub fn value(&self, xi: &[f64]) -> Result<f64> {
        Ok(self.at(xi)?.gamma)
    }

    /// Newton on `∇Γ = 0` with backtracking on `|∇Γ|^2`. Returns the point and the final
    /// gradient norm, or `None` if the iteration leaves `fence` or fails to converge.
    pub fn newton(&self, start: &[f64], fence: &BoxRegion) -> Option<(Vec<f64>, f64)> {
        let mut x = start.to_vec();
        let mut eval = self.at(&x).ok()?;
        let mut merit = norm2(&eval.grad);
        for _ in 0..=NEWTON_MAX_ITERS {
            if merit.sqrt() <= NEWTON_TOL {
                return Some((x, merit.sqrt()));
            }
            let g = DVector::from_column_slice(&eval.grad);
            let newton_dir = eval.hessian.clone().lu().solve(&(-&g));
            let steepest = -(&eval.hessian * &g);
            let mut accepted = false;
            for dir in newton_dir.into_iter().chain(std::iter::once(steepest)) {
                if !dir.iter().all(|d| d.is_finite()) {
                    continue;
                }
                let mut t = 1.0;
                while t > 1e-12 {
                    let trial: Vec<f64> = x.iter().zip(dir.iter()).map(|(xi, d)| xi + t * d).collect();
                    if let Ok(e) = self.at(&trial) {
                        let m = norm2(&e.grad);
                        if m <= (1.0 - 1e-4 * t) * merit {
                            x = trial;
                            eval = e;
                            merit = m;
                            accepted = true;
                            break;
                        }
                    }
                    t *= 0.5;
                }
                if accepted {
                    break;
                }
            }
            if !accepted || !fence.contains(&x, 0.0) {
                return None;
            }
        }
        (merit.sqrt() <= NEWTON_TOL).then(|| (x, merit.sqrt()))
    }

    pub fn classify(&self, location: Vec<f64>, newton_residual: f64) -> Result<CriticalPoint> {
        let eval = self.at(&location)?;
        let eig = SymmetricEigen::new(eval.hessian.clone());
        let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        values.sort_by(f64::total_cmp);
        let scale = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let smallest = values.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        let kind = if !(smallest > DEGENERACY_RATIO * scale) {
            CriticalKind::Degenerate
        } else if values.iter().all(|v| *v > 0.0) {
            CriticalKind::NondegenerateMin
        } else if values.iter().all(|v| *v < 0.0) {
            CriticalKind::NondegenerateMax
        } else {
            CriticalKind::NondegenerateSaddle
        };
        Ok(CriticalPoint {
            location,
            kind,
            hessian_eigenvalues: values,
            newton_residual,
            gamma: eval.gamma,
        })
    }

    /// Multistart Newton from a tensor lattice plus seeded random points in `search_box`.
    /// Converged points outside the box are dropped; the rest are deduplicated in seed order.
    pub fn find_critical_points(
        &self,
        search_box: &BoxRegion,
        multistart_count: usize,
        seed: u64,
    ) -> Result<Vec<CriticalPoint>> {
        search_box.check()?;
        let seeds = multistart_seeds(search_box, multistart_count, seed);
        let fence = enlarged(search_box, 0.5);
        let converged: Vec<Option<(Vec<f64>, f64)>> =
            seeds.par_iter().map(|s| self.newton(s, &fence)).collect();
        let mut unique: Vec<(Vec<f64>, f64)> = Vec::new();
        for (x, res) in converged.into_iter().flatten() {
            if !search_box.contains(&x, 1e-9) {
                continue;
            }
            if unique.iter().all(|(u, _)| dist(u, &x) > DEDUP_RADIUS) {
                unique.push((x, res));
            }
        }
        unique
            .into_iter()
            .map(|(x, res)| self.classify(x, res))
            .collect()
    }

    /// Largest relative deviation of the chain-rule gradient and Hessian from central
    /// differences with step `1e-5`. Deviations are measured against the larger of the
    /// exact derivative and `1e-3 max(1, |Γ|)`.
    pub fn grad_check(&self, points: &[Vec<f64>]) -> Result<f64> {
        let step = 1e-5;
        let mut worst = 0.0_f64;
        for x in points {
            let e = self.at(x)?;
            let floor = 1e-3 * e.gamma.abs().max(1.0);
            let grad_scale = e.grad.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(floor);
            let hess_scale = e.hessian.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(floor);
            for i in 0..self.dim {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += step;
                xm[i] -= step;
                let (ep, em) = (self.at(&xp)?, self.at(&xm)?);
                let fd = (ep.gamma - em.gamma) / (2.0 * step);
                worst = worst.max((fd - e.grad[i]).abs() / grad_scale);
                for j in 0..self.dim {
                    let fd = (ep.grad[j] - em.grad[j]) / (2.0 * step);
                    worst = worst.max((fd - e.hessian[(i, j)]).abs() / hess_scale);
                }
            }
        }
        Ok(worst)
    }
}

/// Tensor lattice with `floor(count^(1/N))` points per axis, topped up with random points.
pub fn multistart_seeds(region: &BoxRegion, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let dim = region.dim();
    let mut per_axis = (count as f64).powf(1.0 / dim as f64).floor() as usize;
    while per_axis.pow(dim as u32) > count {
        per_axis -= 1;
    }
    let mut seeds = if per_axis >= 1 { region.lattice(per_axis) } else { Vec::new() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while seeds.len() < count {
        seeds.push(
            region
                .lower
                .iter()
                .zip(&region.upper)
                .map(|(l, u)| if u > l { rng.gen_range(*l..*u) } else { *l })
                .collect(),
        );
    }
    seeds
}

fn enlarged(region: &BoxRegion, fraction: f64) -> BoxRegion {
    let pad: Vec<f64> = region
        .lower
        .iter()
        .zip(&region.upper)
        .map(|(l, u)| fraction * (u - l).max(1e-3))
        .collect();
    BoxRegion {
        lower: region.lower.iter().zip(&pad).map(|(l, d)| l - d).collect(),
        upper: region.upper.iter().zip(&pad).map(|(u, d)| u + d).collect(),
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Euclidean distance.
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ground_state::GroundStateConstants;
    use crate::potential::{Bump, PotentialSpec};
    use proptest::prelude::*;
    use rand::Rng;

    fn consts() -> GroundStateConstants {
        GroundStateConstants {
            moment_p1: 75.5890052102,
            moment_s1: 659.8683515446,
            cbar1: 18.8972513025,
            cbar2: 109.9780585908,
        }
    }

    fn landscape(triple: &PotentialTriple) -> Landscape<'_> {
        Landscape {
            triple,
            constants: consts(),
            p: 3.0,
            sigma: 5.0,
            dim: 3,
        }
    }

    fn bump_q() -> PotentialSpec {
        PotentialSpec::gaussian_bump(vec![0.5, 0.0, 0.0], 1.0, 1.0, 0.0).vanishing_at_origin(3)
    }

    #[test]
    fn unit_vk_reduces_to_q() {
        let triple = PotentialTriple::unit_vk(bump_q());
        let l = landscape(&triple);
        for x in [[0.1, -0.3, 0.7], [1.0, 2.0, -1.0], [0.0, 0.0, 0.0]] {
            let e = l.at(&x).unwrap();
            assert!((e.gamma1 - 1.0).abs() < 1e-15);
            let q = triple.q.value(&x);
            assert!((e.gamma - (consts().cbar1 - consts().cbar2 * q)).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_triple_is_flat() {
        let triple = PotentialTriple::unit_vk(PotentialSpec::constant(0.0));
        let e = landscape(&triple).at(&[0.3, 0.2, 0.1]).unwrap();
        assert_eq!(e.gamma, consts().cbar1);
        assert!(e.grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn exponent_arithmetic() {
        let triple = PotentialTriple::new(
            PotentialSpec::constant(4.0),
            PotentialSpec::constant(1.0),
            PotentialSpec::constant(0.0),
            1e-3,
        );
        let e = landscape(&triple).at(&[0.0; 3]).unwrap();
        assert!((e.gamma1 - 2.0).abs() < 1e-14);
        assert!((e.gamma - 2.0 * consts().cbar1).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_v_is_a_domain_error() {
        let triple = PotentialTriple::new(
            PotentialSpec::constant(-1.0),
            PotentialSpec::constant(1.0),
            PotentialSpec::constant(0.0),
            1e-3,
        );
        assert!(matches!(landscape(&triple).at(&[0.0; 3]), Err(Error::Domain(_))));
    }

    #[test]
    fn single_bump_has_one_minimum_at_its_center() {
        let triple = PotentialTriple::unit_vk(bump_q());
        let region = BoxRegion::cube(&[0.0; 3], 2.0);
        let points = landscape(&triple).find_critical_points(&region, 512, 7).unwrap();
        assert_eq!(points.len(), 1, "{points:?}");
        assert_eq!(points[0].kind, CriticalKind::NondegenerateMin);
        assert!(dist(&points[0].location, &[0.5, 0.0, 0.0]) <= 1e-8);
        assert!(points[0].newton_residual <= NEWTON_TOL);
    }

    /// Axis root of `dQ/dx1` for `Q = g(x - c e1) - g(x + c e1)`, `g = exp(-|x|^2 / w^2)`,
    /// by bisection on the closed-form derivative.
    fn dipole_root(c: f64, w: f64) -> f64 {
        let d = |x: f64| {
            let w2 = w * w;
            -2.0 * (x - c) / w2 * (-(x - c).powi(2) / w2).exp() + 2.0 * (x + c) / w2 * (-(x + c).powi(2) / w2).exp()
        };
        let (mut lo, mut hi) = (c * 0.5, c + 2.0 * w);
        assert!(d(lo) > 0.0 && d(hi) < 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if d(mid) > 0.0 { lo = mid } else { hi = mid }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn odd_q_has_critical_pair_on_axis() {
        let (c, w) = (0.6, 0.8);
        let q = PotentialSpec::sum_of_gaussians(
            vec![
                Bump { center: vec![c, 0.0, 0.0], amplitude: 1.0, width: w },
                Bump { center: vec![-c, 0.0, 0.0], amplitude: -1.0, width: w },
            ],
            0.0,
        );
        let triple = PotentialTriple::unit_vk(q);
        let region = BoxRegion::cube(&[0.0; 3], 2.0);
        let mut points = landscape(&triple).find_critical_points(&region, 512, 3).unwrap();
        assert_eq!(points.len(), 2, "{points:?}");
        points.sort_by(|a, b| a.location[0].total_cmp(&b.location[0]));
        let root = dipole_root(c, w);
        assert!(dist(&points[0].location, &[-root, 0.0, 0.0]) <= 1e-8);
        assert!(dist(&points[1].location, &[root, 0.0, 0.0]) <= 1e-8);
        assert_eq!(points[0].kind, CriticalKind::NondegenerateMax);
        assert_eq!(points[1].kind, CriticalKind::NondegenerateMin);
    }

    #[test]
    fn flat_landscape_is_reported_degenerate() {
        let triple = PotentialTriple::unit_vk(PotentialSpec::constant(0.0));
        let region = BoxRegion::cube(&[0.0; 3], 1.0);
        let points = landscape(&triple).find_critical_points(&region, 8, 1).unwrap();
        assert!(!points.is_empty());
        assert!(points.iter().all(|c| c.kind == CriticalKind::Degenerate));
    }

    #[test]
    fn taper_has_no_critical_points_in_region() {
        let q = PotentialSpec::polynomial_taper(
            vec![Bump { center: vec![0.0, 0.0, 0.0], amplitude: 0.2, width: 5.0 }],
            0.0,
        );
        let triple = PotentialTriple::unit_vk(q);
        let region = BoxRegion::cube(&[0.0; 3], 2.0);
        assert!(landscape(&triple).find_critical_points(&region, 64, 1).unwrap().is_empty());
    }

    #[test]
    fn chain_rule_matches_finite_differences_for_gaussian_triple() {
        let triple = PotentialTriple::new(
            PotentialSpec::gaussian_bump(vec![0.2, -0.1, 0.3], -0.4, 1.3, 1.5),
            PotentialSpec::gaussian_bump(vec![-0.3, 0.4, 0.0], 0.3, 0.9, 1.0),
            bump_q(),
            1e-3,
        );
        let l = landscape(&triple);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let points: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect())
            .collect();
        let err = l.grad_check(&points).unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    proptest! {
        #[test]
        fn unit_vk_gradient_is_scaled_q_gradient(x in -2.0f64..2.0, y in -2.0f64..2.0, z in -2.0f64..2.0) {
            let triple = PotentialTriple::unit_vk(bump_q());
            let xi = [x, y, z];
            let e = landscape(&triple).at(&xi).unwrap();
            let gq = triple.q.jet(&xi).grad;
            for i in 0..3 {
                let expect = -consts().cbar2 * gq[i];
                prop_assert!((e.grad[i] - expect).abs() <= 1e-12 * expect.abs().max(1e-300) + 1e-300);
            }
        }

        #[test]
        fn permutation_symmetric_triple_gives_symmetric_gamma(x in -2.0f64..2.0, y in -2.0f64..2.0, z in -2.0f64..2.0) {
            let q = PotentialSpec::gaussian_bump(vec![0.4, 0.4, 0.4], 1.0, 1.0, 0.0).vanishing_at_origin(3);
            let triple = PotentialTriple::new(
                PotentialSpec::gaussian_bump(vec![0.0; 3], 0.5, 1.0, 1.0),
                PotentialSpec::constant(1.0),
                q,
                1e-3,
            );
            let l = landscape(&triple);
            let a = l.value(&[x, y, z]).unwrap();
            let b = l.value(&[z, x, y]).unwrap();
            prop_assert!((a - b).abs() <= 1e-13 * a.abs().max(1.0));
        }
    }
}
