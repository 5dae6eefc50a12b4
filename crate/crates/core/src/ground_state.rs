//! Radial ground state of `-ΔU + U = U^p` in `R^N` by shooting on `U(0)`.
//!
//! The radial ODE `U'' + (N-1)/r U' - U + U^p = 0` is integrated with a fixed-step
//! RK4 scheme from a series start at the origin. `U(0)` is bisected on the
//! dichotomy "the trajectory crosses zero" (too high) versus "the trajectory turns
//! upward" (too low). Beyond the last radius where the two bracketing trajectories
//! still agree, the profile is continued by the fitted decay law
//! `A r^{-(N-1)/2} exp(-rate r)`.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Shooting parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShootingOptions {
    pub r_max: f64,
    pub grid_points: usize,
    /// Bisection stops when `hi - lo <= bisection_tol * hi`.
    pub bisection_tol: f64,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        Self {
            r_max: 30.0,
            grid_points: 30_001,
            bisection_tol: 1e-15,
        }
    }
}

// Decade of values used for the tail fit.
const TAIL_WINDOW_TOP: f64 = 1e-4;
const TAIL_WINDOW_BOTTOM: f64 = 1e-5;
// The bracketing trajectories are trusted while they agree to this relative level.
const RELIABLE_AGREEMENT: f64 = 1e-4;
const TAIL_FIT_MAX_RMS: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GroundStateProfile {
    pub dim: usize,
    pub p: f64,
    /// Uniform radii `0, dr, 2dr, ...` up to the splice radius.
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    pub shoot_height: f64,
    pub tail_rate: f64,
    pub tail_amplitude: f64,
    /// Width of the final bisection bracket on `U(0)`.
    pub bracket_width: f64,
    /// Sup-norm of the radial ODE residual on interior grid points.
    pub ode_residual: f64,
    pub r_max: f64,
    spline: Vec<f64>,
}

/// Moments `∫ U^{p+1}`, `∫ U^{sigma+1}` and the landscape constants built from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundStateConstants {
    pub moment_p1: f64,
    pub moment_s1: f64,
    pub cbar1: f64,
    pub cbar2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ShotOutcome {
    Crossed,
    Turned,
    Neither,
}

struct Trajectory {
    values: Vec<f64>,
    slopes: Vec<f64>,
    outcome: ShotOutcome,
}

/// Surface measure of the unit sphere in `R^N` (2 for `N = 1`).
pub fn unit_sphere_area(dim: usize) -> f64 {
    // Gamma(N/2) for integer and half-integer arguments.
    let half = dim as f64 / 2.0;
    let mut gamma = if dim.is_multiple_of(2) { 1.0 } else { PI.sqrt() };
    let mut a = if dim.is_multiple_of(2) { 1.0 } else { 0.5 };
    while a < half - 0.25 {
        gamma *= a;
        a += 1.0;
    }
    2.0 * PI.powf(half) / gamma
}

fn radial_rhs(dim: usize, p: f64, r: f64, u: f64, du: f64) -> (f64, f64) {
    let nonlinear = u.abs().powf(p - 1.0) * u;
    let damping = if r > 0.0 { (dim as f64 - 1.0) / r * du } else { 0.0 };
    (du, -damping + u - nonlinear)
}

const STARTUP_INTERVALS: usize = 64;
const STARTUP_SUBSTEPS: usize = 16;

fn rk4_step(dim: usize, p: f64, r: f64, u: f64, du: f64, h: f64) -> (f64, f64) {
    let (k1u, k1d) = radial_rhs(dim, p, r, u, du);
    let (k2u, k2d) = radial_rhs(dim, p, r + 0.5 * h, u + 0.5 * h * k1u, du + 0.5 * h * k1d);
    let (k3u, k3d) = radial_rhs(dim, p, r + 0.5 * h, u + 0.5 * h * k2u, du + 0.5 * h * k2d);
    let (k4u, k4d) = radial_rhs(dim, p, r + h, u + h * k3u, du + h * k3d);
    (
        u + h / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u),
        du + h / 6.0 * (k1d + 2.0 * k2d + 2.0 * k3d + k4d),
    )
}

fn shoot(dim: usize, p: f64, u0: f64, dr: f64, steps: usize, record: bool) -> Trajectory {
    let n = dim as f64;
    // Series start U = u0 + a r^2 + b r^4 avoids the 1/r term at the origin.
    let a = (u0 - u0.powf(p)) / (2.0 * n);
    let b = (1.0 - p * u0.powf(p - 1.0)) * a / (4.0 * (n + 2.0));
    let mut u = u0 + a * dr * dr + b * dr.powi(4);
    let mut du = 2.0 * a * dr + 4.0 * b * dr.powi(3);

    let mut traj = Trajectory {
        values: Vec::new(),
        slopes: Vec::new(),
        outcome: ShotOutcome::Neither,
    };
    if record {
        traj.values.reserve(steps + 1);
        traj.slopes.reserve(steps + 1);
        traj.values.extend([u0, u]);
        traj.slopes.extend([0.0, du]);
    }
    for i in 1..steps {
        let r = i as f64 * dr;
        // The (N-1)/r coefficient is stiff over the first intervals; substep there.
        let substeps = if i < STARTUP_INTERVALS { STARTUP_SUBSTEPS } else { 1 };
        let h = dr / substeps as f64;
        for s in 0..substeps {
            (u, du) = rk4_step(dim, p, r + s as f64 * h, u, du, h);
        }
        if u <= 0.0 {
            traj.outcome = ShotOutcome::Crossed;
            break;
        }
        if du > 0.0 {
            traj.outcome = ShotOutcome::Turned;
            break;
        }
        if record {
            traj.values.push(u);
            traj.slopes.push(du);
        }
    }
    traj
}

/// Shooting solve for the ground state. See the module docs for the method.
pub fn solve_ground_state(
    dim: usize,
    p: f64,
    options: &ShootingOptions,
) -> Result<GroundStateProfile> {
    if dim == 0 || !(p > 1.0) || !p.is_finite() {
        return Err(Error::InvalidArgument(format!("need N >= 1 and p > 1, got N={dim}, p={p}")));
    }
    if dim >= 3 && p >= (dim as f64 + 2.0) / (dim as f64 - 2.0) {
        return Err(Error::NoGroundState { dim, p });
    }
    if !(options.r_max >= 15.0) || options.grid_points < 1000 {
        return Err(Error::InvalidArgument(
            "shooting needs r_max >= 15 and grid_points >= 1000".into(),
        ));
    }
    let steps = options.grid_points - 1;
    let dr = options.r_max / steps as f64;

    // U(0) exceeds 1: at the maximum -ΔU = U^p - U >= 0.
    let mut lo = 1.0;
    let mut hi = 2.0;
    while shoot(dim, p, hi, dr, steps, false).outcome != ShotOutcome::Crossed {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::NoGroundState { dim, p });
        }
    }
    while hi - lo > options.bisection_tol * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match shoot(dim, p, mid, dr, steps, false).outcome {
            ShotOutcome::Crossed => hi = mid,
            _ => lo = mid,
        }
    }

    let low = shoot(dim, p, lo, dr, steps, true);
    let high = shoot(dim, p, hi, dr, steps, true);
    let common = low.values.len().min(high.values.len());
    let reliable = (0..common)
        .find(|&i| (low.values[i] - high.values[i]).abs() > RELIABLE_AGREEMENT * low.values[i])
        .unwrap_or(common);

    let window: Vec<usize> = (0..reliable)
        .filter(|&i| low.values[i] <= TAIL_WINDOW_TOP && low.values[i] >= TAIL_WINDOW_BOTTOM)
        .collect();
    if window.len() < 20 {
        return Err(Error::TailFitFailure(format!(
            "only {} reliable samples in the tail window (reliable up to r = {:.3})",
            window.len(),
            reliable as f64 * dr
        )));
    }
    let splice = *window.last().unwrap();
    let algebraic = (dim as f64 - 1.0) / 2.0;
    let xs: Vec<f64> = window.iter().map(|&i| i as f64 * dr).collect();
    let ys: Vec<f64> = window
        .iter()
        .map(|&i| low.values[i].ln() + algebraic * (i as f64 * dr).ln())
        .collect();
    let (slope, intercept) = least_squares_line(&xs, &ys);
    let rms = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / xs.len() as f64)
        .sqrt();
    if !(rms <= TAIL_FIT_MAX_RMS) || !(slope < 0.0) {
        return Err(Error::TailFitFailure(format!(
            "decay fit rms {rms:e}, slope {slope}"
        )));
    }
    let tail_rate = -slope;
    let r_splice = splice as f64 * dr;
    // Anchor the amplitude at the splice point so the profile is continuous.
    let tail_amplitude =
        low.values[splice] * r_splice.powf(algebraic) * (tail_rate * r_splice).exp();

    let ode_residual = radial_residual(dim, p, dr, &low.values[..=splice], &low.slopes[..=splice]);

    let radii: Vec<f64> = (0..=splice).map(|i| i as f64 * dr).collect();
    let values = low.values[..=splice].to_vec();
    let mut profile = GroundStateProfile {
        dim,
        p,
        radii,
        values,
        shoot_height: lo,
        tail_rate,
        tail_amplitude,
        bracket_width: hi - lo,
        ode_residual,
        r_max: options.r_max,
        spline: Vec::new(),
    };
    profile.build_spline();
    Ok(profile)
}

/// Sup-norm of `U'' + (N-1)/r U' - U + U^p`, with `U''` from a 5-point derivative of the
/// integrated slopes.
fn radial_residual(dim: usize, p: f64, dr: f64, values: &[f64], slopes: &[f64]) -> f64 {
    let n = values.len();
    let mut worst = 0.0_f64;
    for i in 2..n.saturating_sub(2) {
        let r = i as f64 * dr;
        let d2 = (-slopes[i + 2] + 8.0 * slopes[i + 1] - 8.0 * slopes[i - 1] + slopes[i - 2])
            / (12.0 * dr);
        let res = d2 + (dim as f64 - 1.0) / r * slopes[i] - values[i] + values[i].powf(p);
        worst = worst.max(res.abs());
    }
    worst
}

fn least_squares_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

impl GroundStateProfile {
    pub fn spacing(&self) -> f64 {
        self.radii[1] - self.radii[0]
    }

    pub fn splice_radius(&self) -> f64 {
        *self.radii.last().unwrap()
    }

    fn tail(&self, r: f64) -> (f64, f64) {
        let algebraic = (self.dim as f64 - 1.0) / 2.0;
        let u = self.tail_amplitude * r.powf(-algebraic) * (-self.tail_rate * r).exp();
        (u, -u * (self.tail_rate + algebraic / r))
    }

    /// Clamped cubic spline second derivatives: slope 0 at the origin and the tail slope
    /// at the splice radius.
    fn build_spline(&mut self) {
        let n = self.values.len();
        let h = self.spacing();
        let y = &self.values;
        let end_slope = self.tail(self.splice_radius()).1;
        let mut diag = vec![4.0; n];
        let mut rhs = vec![0.0; n];
        diag[0] = 2.0;
        diag[n - 1] = 2.0;
        rhs[0] = 6.0 * ((y[1] - y[0]) / h) / h;
        rhs[n - 1] = 6.0 * (end_slope - (y[n - 1] - y[n - 2]) / h) / h;
        for i in 1..n - 1 {
            rhs[i] = 6.0 * (y[i + 1] - 2.0 * y[i] + y[i - 1]) / (h * h);
        }
        // Thomas algorithm with unit off-diagonals.
        for i in 1..n {
            let m = 1.0 / diag[i - 1];
            diag[i] -= m;
            rhs[i] -= m * rhs[i - 1];
        }
        let mut second = vec![0.0; n];
        second[n - 1] = rhs[n - 1] / diag[n - 1];
        for i in (0..n - 1).rev() {
            second[i] = (rhs[i] - second[i + 1]) / diag[i];
        }
        self.spline = second;
    }

    /// `(U(r), U'(r))` from the spline inside the stored range, from the tail law beyond.
    pub fn eval(&self, r: f64) -> (f64, f64) {
        let r = r.abs();
        let last = self.splice_radius();
        if r >= last {
            return self.tail(r);
        }
        let h = self.spacing();
        let i = ((r / h) as usize).min(self.values.len() - 2);
        let a = (self.radii[i + 1] - r) / h;
        let b = 1.0 - a;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.spline[i], self.spline[i + 1]);
        let u = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let du = (y1 - y0) / h - (3.0 * a * a - 1.0) / 6.0 * h * m0 + (3.0 * b * b - 1.0) / 6.0 * h * m1;
        (u, du)
    }

    pub fn value(&self, r: f64) -> f64 {
        self.eval(r).0
    }

    /// `∫_{R^N} U^q` by Simpson quadrature on the stored grid plus the tail law.
    pub fn moment(&self, q: f64) -> f64 {
        let h = self.spacing();
        let m = (self.dim as f64) - 1.0;
        let f = |i: usize| self.values[i].powf(q) * self.radii[i].powf(m);
        let n = self.values.len();
        let intervals = n - 1;
        let simpson_end = if intervals.is_multiple_of(2) { n - 1 } else { n - 4 };
        let mut inner = f(0) + f(simpson_end);
        for i in 1..simpson_end {
            inner += if i % 2 == 1 { 4.0 * f(i) } else { 2.0 * f(i) };
        }
        inner *= h / 3.0;
        if simpson_end != n - 1 {
            // Simpson's 3/8 rule on the last three intervals.
            let j = simpson_end;
            inner += 3.0 * h / 8.0 * (f(j) + 3.0 * f(j + 1) + 3.0 * f(j + 2) + f(j + 3));
        }
        unit_sphere_area(self.dim) * (inner + self.tail_moment(q))
    }

    /// `∫_R^∞ (A r^{-(N-1)/2} e^{-λ r})^q r^{N-1} dr` by its asymptotic series in `1/(qλR)`;
    /// exact for `N = 1`.
    fn tail_moment(&self, q: f64) -> f64 {
        let r0 = self.splice_radius();
        let algebraic = (self.dim as f64 - 1.0) / 2.0;
        let e = (self.dim as f64 - 1.0) - q * algebraic;
        let c = q * self.tail_rate;
        let lead = self.tail_amplitude.powf(q) * r0.powf(e) * (-c * r0).exp() / c;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 0..6 {
            term *= (e - k as f64) / (c * r0);
            sum += term;
        }
        lead * sum
    }

    pub fn constants(&self, sigma: f64) -> GroundStateConstants {
        let p = self.p;
        let moment_p1 = self.moment(p + 1.0);
        let moment_s1 = self.moment(sigma + 1.0);
        GroundStateConstants {
            moment_p1,
            moment_s1,
            cbar1: (0.5 - 1.0 / (p + 1.0)) * moment_p1,
            cbar2: moment_s1 / (sigma + 1.0),
        }
    }

    /// Positivity, strict monotonicity and the maximum at the origin.
    pub fn is_monotone_positive(&self) -> bool {
        self.values.iter().all(|v| *v > 0.0)
            && self.values.windows(2).all(|w| w[1] < w[0])
            && self.values[0] == self.shoot_height
    }

    /// Writes `<stem>.csv` (radius, value) and `<stem>.json` (metadata).
    pub fn save(&self, stem: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(stem.with_extension("csv"))?;
        writer.write_record(["radius", "value"])?;
        for (r, u) in self.radii.iter().zip(&self.values) {
            writer.write_record([r.to_string(), u.to_string()])?;
        }
        writer.flush()?;
        let meta = ProfileSidecar {
            dimension: self.dim,
            p: self.p,
            shoot_height: self.shoot_height,
            tail_rate: self.tail_rate,
            tail_amplitude: self.tail_amplitude,
            bracket_width: self.bracket_width,
            ode_residual: self.ode_residual,
            r_max: self.r_max,
        };
        serde_json::to_writer_pretty(
            BufWriter::new(File::create(stem.with_extension("json"))?),
            &meta,
        )?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let meta: ProfileSidecar =
            serde_json::from_reader(BufReader::new(File::open(stem.with_extension("json"))?))?;
        let mut reader = csv::Reader::from_path(stem.with_extension("csv"))?;
        let mut radii = Vec::new();
        let mut values = Vec::new();
        for row in reader.deserialize::<(f64, f64)>() {
            let (r, u) = row?;
            radii.push(r);
            values.push(u);
        }
        if radii.len() < 4 {
            return Err(Error::InvalidArgument("profile csv has too few rows".into()));
        }
        let mut profile = GroundStateProfile {
            dim: meta.dimension,
            p: meta.p,
            radii,
            values,
            shoot_height: meta.shoot_height,
            tail_rate: meta.tail_rate,
            tail_amplitude: meta.tail_amplitude,
            bracket_width: meta.bracket_width,
            ode_residual: meta.ode_residual,
            r_max: meta.r_max,
            spline: Vec::new(),
        };
        profile.build_spline();
        Ok(profile)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ProfileSidecar {
    dimension: usize,
    p: f64,
    shoot_height: f64,
    tail_rate: f64,
    tail_amplitude: f64,
    bracket_width: f64,
    ode_residual: f64,
    r_max: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn soliton() -> GroundStateProfile {
        solve_ground_state(1, 3.0, &ShootingOptions::default()).unwrap()
    }

    #[test]
    fn sphere_areas() {
        assert!((unit_sphere_area(1) - 2.0).abs() < 1e-15);
        assert!((unit_sphere_area(2) - 2.0 * PI).abs() < 1e-14);
        assert!((unit_sphere_area(3) - 4.0 * PI).abs() < 1e-13);
        assert!((unit_sphere_area(4) - 2.0 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn one_dimensional_cubic_soliton_matches_sech() {
        let u = soliton();
        assert!((u.shoot_height - 2f64.sqrt()).abs() < 1e-9);
        let worst = (0..2000)
            .map(|i| {
                let r = i as f64 * 0.01;
                (u.value(r) - 2f64.sqrt() / r.cosh()).abs()
            })
            .fold(0.0, f64::max);
        assert!(worst <= 1e-6, "sup error {worst:e}");
        assert!((u.value(1.0) - 2f64.sqrt() / 1f64.cosh()).abs() <= 1e-6);
    }

    #[test]
    fn one_dimensional_family_height() {
        for p in [2.0, 2.5, 4.0] {
            let u = solve_ground_state(1, p, &ShootingOptions::default()).unwrap();
            let exact = ((p + 1.0) / 2.0).powf(1.0 / (p - 1.0));
            assert!((u.shoot_height - exact).abs() < 1e-8, "p={p}");
        }
    }

    #[test]
    fn soliton_moments_and_constants() {
        let u = soliton();
        assert!((u.moment(4.0) - 16.0 / 3.0).abs() <= 1e-5);
        assert!((u.moment(2.0) - 4.0).abs() <= 1e-5);
        let c = u.constants(5.0);
        assert!((c.cbar1 - 4.0 / 3.0).abs() <= 1e-5);
        assert!((c.cbar2 - c.moment_s1 / 6.0).abs() < 1e-15);
        assert!((c.moment_s1 - 128.0 / 15.0).abs() <= 1e-5);
        assert!(c.cbar1 > 0.0 && c.cbar2 > 0.0);
    }

    #[test]
    fn eval_at_origin_and_far_tail() {
        let u = soliton();
        let (v, dv) = u.eval(0.0);
        assert_eq!(v, u.shoot_height);
        assert!(dv.abs() < 1e-15);
        let r = 2.0 * u.r_max;
        let law = u.tail_amplitude * (-u.tail_rate * r).exp();
        assert!((u.value(r) - law).abs() <= 1e-10);
    }

    #[test]
    fn splice_is_continuous() {
        let u = solve_ground_state(3, 3.0, &ShootingOptions::default()).unwrap();
        let rs = u.splice_radius();
        let left = u.value(rs - 1e-12);
        let right = u.value(rs + 1e-12);
        assert!((left - right).abs() <= 1e-8);
    }

    #[test]
    fn three_dimensional_profile_invariants() {
        let u = solve_ground_state(3, 3.0, &ShootingOptions::default()).unwrap();
        assert!(u.is_monotone_positive());
        assert!(u.ode_residual <= 1e-8, "residual {:e}", u.ode_residual);
        assert!((u.tail_rate - 1.0).abs() <= 0.02);
        assert!(u.bracket_width <= 1e-13);
    }

    #[test]
    fn moment_is_converged_in_grid_points() {
        let coarse = solve_ground_state(3, 3.0, &ShootingOptions::default()).unwrap();
        let fine = solve_ground_state(
            3,
            3.0,
            &ShootingOptions {
                grid_points: 60_001,
                ..Default::default()
            },
        )
        .unwrap();
        let (a, b) = (coarse.moment(4.0), fine.moment(4.0));
        assert!(((a - b) / b).abs() <= 1e-7, "{a} vs {b}");
    }

    #[test]
    fn supercritical_exponent_has_no_ground_state() {
        let err = solve_ground_state(3, 5.5, &ShootingOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NoGroundState { .. }));
    }

    #[test]
    fn csv_round_trip_reproduces_eval() {
        let u = solve_ground_state(3, 3.0, &ShootingOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("profile");
        u.save(&stem).unwrap();
        let back = GroundStateProfile::load(&stem).unwrap();
        for i in 0..400 {
            let r = i as f64 * 0.05;
            let (a, da) = u.eval(r);
            let (b, db) = back.eval(r);
            assert!((a - b).abs() <= 1e-12 && (da - db).abs() <= 1e-12);
        }
    }
}
