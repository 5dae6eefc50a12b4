//! Uniform box grids, nodal fields and the quadratures built on them.
//!
//! Nodes are stored lexicographically with the last axis fastest (row-major). The
//! outermost layer of nodes carries homogeneous Dirichlet data: every operator reads
//! boundary values as zero and writes zero there.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::krylov::{self, LinearOperator};
use crate::{Error, Result};

/// Size parameters of a grid, independent of where it is centred.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub half_width: f64,
    /// Odd, so the centre is a node.
    pub points_per_axis: usize,
}

impl GridSpec {
    pub fn new(dim: usize, half_width: f64, points_per_axis: usize) -> Result<Self> {
        let spec = Self {
            dim,
            half_width,
            points_per_axis,
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<()> {
        if !(1..=3).contains(&self.dim) {
            return Err(Error::InvalidArgument(format!("grid dimension {} not in 1..=3", self.dim)));
        }
        if self.points_per_axis < 5 || self.points_per_axis.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "points_per_axis must be odd and >= 5, got {}",
                self.points_per_axis
            )));
        }
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(Error::InvalidArgument("half_width must be positive".into()));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.points_per_axis - 1) as f64
    }
}

/// The box `center + [-L, L]^N` sampled with spacing `h = 2L/(n-1)`; `center` is a node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub spec: GridSpec,
    pub center: Vec<f64>,
    pub h: f64,
}

impl Grid {
    /// Grid centred at the origin.
    pub fn new(spec: GridSpec) -> Result<Arc<Self>> {
        Self::centered(spec, &vec![0.0; spec.dim])
    }

    pub fn centered(spec: GridSpec, center: &[f64]) -> Result<Arc<Self>> {
        spec.check()?;
        if center.len() != spec.dim {
            return Err(Error::InvalidArgument("grid center has wrong dimension".into()));
        }
        Ok(Arc::new(Self {
            spec,
            center: center.to_vec(),
            h: spec.spacing(),
        }))
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn n(&self) -> usize {
        self.spec.points_per_axis
    }

    pub fn half_width(&self) -> f64 {
        self.spec.half_width
    }

    pub fn len(&self) -> usize {
        self.n().pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight `h^N`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim() as i32)
    }

    pub fn strides(&self) -> Vec<usize> {
        let n = self.n();
        (0..self.dim())
            .map(|axis| n.pow((self.dim() - 1 - axis) as u32))
            .collect()
    }

    pub fn axis_coord(&self, axis: usize, i: usize) -> f64 {
        let mid = (self.n() - 1) / 2;
        self.center[axis] + (i as f64 - mid as f64) * self.h
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let n = self.n();
        let mut idx = vec![0; self.dim()];
        for axis in (0..self.dim()).rev() {
            idx[axis] = flat % n;
            flat /= n;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, i| acc * self.n() + i)
    }

    pub fn coords(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .enumerate()
            .map(|(axis, &i)| self.axis_coord(axis, i))
            .collect()
    }

    pub fn is_boundary(&self, idx: &[usize]) -> bool {
        idx.iter().any(|&i| i == 0 || i == self.n() - 1)
    }

    /// Nodes at least `layers` away from the faces.
    pub fn is_inside_layer(&self, idx: &[usize], layers: usize) -> bool {
        idx.iter().all(|&i| i >= layers && i + layers < self.n())
    }

    /// Index of the node closest to `x` along each axis (clamped to the box).
    pub fn nearest_node(&self, x: &[f64]) -> Vec<usize> {
        let mid = ((self.n() - 1) / 2) as f64;
        x.iter()
            .enumerate()
            .map(|(axis, v)| {
                let i = ((v - self.center[axis]) / self.h + mid).round();
                i.clamp(0.0, (self.n() - 1) as f64) as usize
            })
            .collect()
    }

    /// Rows along the last axis: `(first flat index, row is in the boundary layer)`.
    fn rows(&self) -> impl IndexedParallelIterator<Item = (usize, bool)> + '_ {
        let n = self.n();
        let rows = self.len() / n;
        let lead = self.dim() - 1;
        (0..rows).into_par_iter().map(move |r| {
            let mut rem = r;
            let mut boundary = false;
            for _ in 0..lead {
                let i = rem % n;
                boundary |= i == 0 || i == n - 1;
                rem /= n;
            }
            (r * n, boundary)
        })
    }
}

/// Nodal values on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: Arc<Grid>,
    pub values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_values(grid: &Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    /// Samples `f` at interior nodes; boundary nodes are set to zero.
    pub fn from_fn<F>(grid: &Arc<Grid>, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let values = (0..grid.len())
            .into_par_iter()
            .map(|flat| {
                let idx = grid.multi_index(flat);
                if grid.is_boundary(&idx) {
                    0.0
                } else {
                    f(&grid.coords(flat))
                }
            })
            .collect();
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn same_grid(&self, other: &Field) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub fn zero_boundary(&mut self) {
        let grid = self.grid.clone();
        zero_boundary(&grid, &mut self.values);
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Writes `<stem>.bin` (little-endian f64, lexicographic with the last axis fastest)
    /// and `<stem>.json` (grid header).
    pub fn save(&self, stem: &Path) -> Result<()> {
        let header = FieldHeader {
            dimension: self.grid.dim(),
            half_width: self.grid.half_width(),
            points_per_axis: self.grid.n(),
            center: self.grid.center.clone(),
            order: "lexicographic, row-major: last axis varies fastest".into(),
            dtype: "f64 little-endian".into(),
        };
        serde_json::to_writer_pretty(
            BufWriter::new(File::create(stem.with_extension("json"))?),
            &header,
        )?;
        let mut out = BufWriter::new(File::create(stem.with_extension("bin"))?);
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let header: FieldHeader =
            serde_json::from_reader(BufReader::new(File::open(stem.with_extension("json"))?))?;
        let spec = GridSpec::new(header.dimension, header.half_width, header.points_per_axis)?;
        let grid = Grid::centered(spec, &header.center)?;
        let mut bytes = Vec::new();
        BufReader::new(File::open(stem.with_extension("bin"))?).read_to_end(&mut bytes)?;
        if bytes.len() != 8 * grid.len() {
            return Err(Error::InvalidArgument("field binary has wrong length".into()));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_values(&grid, values)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FieldHeader {
    dimension: usize,
    half_width: f64,
    points_per_axis: usize,
    center: Vec<f64>,
    order: String,
    dtype: String,
}

pub(crate) fn zero_boundary(grid: &Grid, values: &mut [f64]) {
    let n = grid.n();
    values
        .par_chunks_mut(n)
        .zip(grid.rows())
        .for_each(|(row, (_, boundary))| {
            if boundary {
                row.fill(0.0);
            } else {
                row[0] = 0.0;
                row[n - 1] = 0.0;
            }
        });
}

/// `out = -Δ_h u + coeff * u` at interior nodes, zero on the boundary. `coeff = None`
/// means zero.
pub(crate) fn apply_shifted_laplacian(grid: &Grid, u: &[f64], coeff: Option<&[f64]>, out: &mut [f64]) {
    let n = grid.n();
    let inv_h2 = 1.0 / (grid.h * grid.h);
    let strides = grid.strides();
    let lead = &strides[..grid.dim() - 1];
    let diag = 2.0 * grid.dim() as f64 * inv_h2;
    out.par_chunks_mut(n)
        .zip(grid.rows())
        .for_each(|(row, (start, boundary))| {
            if boundary {
                row.fill(0.0);
                return;
            }
            row[0] = 0.0;
            row[n - 1] = 0.0;
            for j in 1..n - 1 {
                let idx = start + j;
                let mut neighbours = u[idx - 1] + u[idx + 1];
                for &s in lead {
                    neighbours += u[idx - s] + u[idx + s];
                }
                let c = coeff.map_or(0.0, |c| c[idx]);
                row[j] = (diag + c) * u[idx] - inv_h2 * neighbours;
            }
        });
}

/// `Σ_edges (u_j - u_i)(v_j - v_i) / h^2` over all grid edges, times `h^N`.
fn edge_sum(grid: &Grid, u: &[f64], v: &[f64]) -> f64 {
    let n = grid.n();
    let strides = grid.strides();
    let inv_h2 = 1.0 / (grid.h * grid.h);
    let partials: Vec<f64> = (0..grid.len() / n)
        .into_par_iter()
        .map(|r| {
            let start = r * n;
            let idx0 = grid.multi_index(start);
            let mut acc = 0.0;
            for j in 0..n {
                let idx = start + j;
                for (axis, &s) in strides.iter().enumerate() {
                    let coord = if axis == grid.dim() - 1 { j } else { idx0[axis] };
                    if coord + 1 < n {
                        acc += (u[idx + s] - u[idx]) * (v[idx + s] - v[idx]);
                    }
                }
            }
            acc
        })
        .collect();
    partials.iter().sum::<f64>() * inv_h2 * grid.cell_volume()
}

/// `Σ u v h^N`, the pairing used for all strong-form residuals.
pub fn pairing(u: &Field, v: &Field) -> Result<f64> {
    u.same_grid(v)?;
    Ok(krylov::dot(&u.values, &v.values) * u.grid.cell_volume())
}

/// Discrete `H^1` inner product `Σ_edges Δu Δv / h^2 + Σ_nodes u v`, scaled by `h^N`.
/// The edge differences are centred at the edge midpoints.
pub fn h1_inner(u: &Field, v: &Field) -> Result<f64> {
    u.same_grid(v)?;
    Ok(h1_inner_raw(&u.grid, &u.values, &v.values))
}

pub(crate) fn h1_inner_raw(grid: &Grid, u: &[f64], v: &[f64]) -> f64 {
    edge_sum(grid, u, v) + krylov::dot(u, v) * grid.cell_volume()
}

pub fn h1_norm(u: &Field) -> f64 {
    h1_inner_raw(&u.grid, &u.values, &u.values).max(0.0).sqrt()
}

/// `½ Σ_edges (Δu)^2 / h^2 · h^N`, the discrete Dirichlet energy.
pub(crate) fn dirichlet_energy(grid: &Grid, u: &[f64]) -> f64 {
    0.5 * edge_sum(grid, u, u)
}

/// The Gram operator of the `H^1` inner product, `-Δ_h + 1` with Dirichlet data.
pub struct H1Operator<'g> {
    pub grid: &'g Grid,
}

impl LinearOperator for H1Operator<'_> {
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        apply_shifted_laplacian_const(self.grid, x, 1.0, y);
    }
}

pub(crate) fn apply_shifted_laplacian_const(grid: &Grid, u: &[f64], shift: f64, out: &mut [f64]) {
    let n = grid.n();
    let inv_h2 = 1.0 / (grid.h * grid.h);
    let strides = grid.strides();
    let lead = &strides[..grid.dim() - 1];
    let diag = 2.0 * grid.dim() as f64 * inv_h2 + shift;
    out.par_chunks_mut(n)
        .zip(grid.rows())
        .for_each(|(row, (start, boundary))| {
            if boundary {
                row.fill(0.0);
                return;
            }
            row[0] = 0.0;
            row[n - 1] = 0.0;
            for j in 1..n - 1 {
                let idx = start + j;
                let mut neighbours = u[idx - 1] + u[idx + 1];
                for &s in lead {
                    neighbours += u[idx - s] + u[idx + s];
                }
                row[j] = diag * u[idx] - inv_h2 * neighbours;
            }
        });
}

/// Tolerance of the Riesz solves `(-Δ_h + 1) r = g`.
pub const RIESZ_TOL: f64 = 1e-13;

/// Riesz representative in `H^1` of the functional `v ↦ Σ g v h^N`, i.e. the solution of
/// `(-Δ_h + 1) r = g` with Dirichlet data.
pub fn riesz(g: &Field) -> Result<Field> {
    let grid = g.grid.clone();
    let mut rhs = g.values.clone();
    zero_boundary(&grid, &mut rhs);
    let op = H1Operator { grid: &grid };
    let (x, _) = krylov::cg(&op, &rhs, RIESZ_TOL, 20_000)?;
    Field::from_values(&grid, x)
}

/// Dual (`H^{-1}`) norm of a strong-form residual `g`: `sup_v Σ g v h^N / ||v||_{H^1}`.
pub fn dual_norm(g: &Field) -> Result<f64> {
    let r = riesz(g)?;
    Ok(pairing(g, &r)?.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ground_state::{solve_ground_state, ShootingOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: &Arc<Grid>, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut f = Field::from_values(grid, values).unwrap();
        f.zero_boundary();
        f
    }

    #[test]
    fn origin_is_a_node_and_spacing_matches_width() {
        let grid = Grid::new(GridSpec::new(3, 12.0, 49).unwrap()).unwrap();
        let mid = vec![24; 3];
        assert_eq!(grid.coords(grid.flat_index(&mid)), vec![0.0; 3]);
        assert!((grid.h * 48.0 - 24.0).abs() < 1e-12);
        assert!(GridSpec::new(3, 12.0, 48).is_err());
    }

    #[test]
    fn h1_inner_is_symmetric_and_zero_on_zero() {
        let grid = Grid::new(GridSpec::new(2, 3.0, 21).unwrap()).unwrap();
        let (u, v) = (random_field(&grid, 1), random_field(&grid, 2));
        let z = Field::zeros(&grid);
        assert_eq!(h1_inner(&z, &z).unwrap(), 0.0);
        let (a, b) = (h1_inner(&u, &v).unwrap(), h1_inner(&v, &u).unwrap());
        assert!((a - b).abs() <= 1e-13 * a.abs().max(1.0));
    }

    #[test]
    fn h1_inner_equals_gram_operator_pairing_for_dirichlet_fields() {
        let grid = Grid::new(GridSpec::new(3, 2.0, 11).unwrap()).unwrap();
        let (u, v) = (random_field(&grid, 3), random_field(&grid, 4));
        let mut gu = vec![0.0; grid.len()];
        H1Operator { grid: &grid }.apply(&u.values, &mut gu);
        let via_op = krylov::dot(&gu, &v.values) * grid.cell_volume();
        let direct = h1_inner(&u, &v).unwrap();
        assert!((via_op - direct).abs() <= 1e-12 * direct.abs().max(1.0));
    }

    #[test]
    fn laplacian_of_constant_vanishes_away_from_boundary() {
        let grid = Grid::new(GridSpec::new(3, 2.0, 9).unwrap()).unwrap();
        let ones = vec![1.0; grid.len()];
        let mut out = vec![0.0; grid.len()];
        apply_shifted_laplacian(&grid, &ones, None, &mut out);
        for flat in 0..grid.len() {
            let idx = grid.multi_index(flat);
            if grid.is_inside_layer(&idx, 2) {
                assert_eq!(out[flat], 0.0);
            }
        }
    }

    #[test]
    fn soliton_h1_norm_matches_closed_form() {
        // ∫(U')^2 + ∫U^2 = 4/3 + 4 for U = √2 sech.
        let profile = solve_ground_state(1, 3.0, &ShootingOptions::default()).unwrap();
        let grid = Grid::new(GridSpec::new(1, 20.0, 4001).unwrap()).unwrap();
        let u = Field::from_fn(&grid, |x| profile.value(x[0].abs()));
        let value = h1_inner(&u, &u).unwrap();
        assert!((value - 16.0 / 3.0).abs() <= 1e-4, "{value}");
    }

    #[test]
    fn quadratures_are_linear() {
        let grid = Grid::new(GridSpec::new(2, 1.0, 15).unwrap()).unwrap();
        let (u, v, w) = (random_field(&grid, 5), random_field(&grid, 6), random_field(&grid, 7));
        let mut comb = u.clone();
        for (c, b) in comb.values.iter_mut().zip(&v.values) {
            *c = 2.0 * *c - 3.0 * b;
        }
        let lhs = pairing(&comb, &w).unwrap();
        let rhs = 2.0 * pairing(&u, &w).unwrap() - 3.0 * pairing(&v, &w).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
        let lhs = h1_inner(&comb, &w).unwrap();
        let rhs = 2.0 * h1_inner(&u, &w).unwrap() - 3.0 * h1_inner(&v, &w).unwrap();
        assert!((lhs - rhs).abs() < 1e-11);
    }

    #[test]
    fn riesz_map_reproduces_pairings() {
        let grid = Grid::new(GridSpec::new(2, 3.0, 25).unwrap()).unwrap();
        let (g, v) = (random_field(&grid, 8), random_field(&grid, 9));
        let r = riesz(&g).unwrap();
        let lhs = h1_inner(&r, &v).unwrap();
        let rhs = pairing(&g, &v).unwrap();
        assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1.0));
    }

    #[test]
    fn field_mismatch_is_reported() {
        let a = Grid::new(GridSpec::new(1, 1.0, 9).unwrap()).unwrap();
        let b = Grid::new(GridSpec::new(1, 1.0, 11).unwrap()).unwrap();
        let err = h1_inner(&Field::zeros(&a), &Field::zeros(&b)).unwrap_err();
        assert!(matches!(err, Error::GridMismatch));
    }

    #[test]
    fn binary_round_trip() {
        let spec = GridSpec::new(2, 1.5, 9).unwrap();
        let grid = Grid::centered(spec, &[0.25, -1.0]).unwrap();
        let f = random_field(&grid, 10);
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("field");
        f.save(&stem).unwrap();
        let back = Field::load(&stem).unwrap();
        assert_eq!(back, f);
    }
}
