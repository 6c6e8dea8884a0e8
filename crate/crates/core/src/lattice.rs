//! Bravais lattices, their dyadic scalings and the finite periodic window
//! on which every computation runs.
//!
//! A lattice is the integer span of `d` linearly independent vectors
//! `a_1..a_d`; its reciprocal basis `â_i` satisfies `â_i · a_j = δ_ij`. The
//! scaled lattice `ε𝒢` with `ε = 2^{-N}` is sampled on a torus of side `M`
//! with a centered index convention, so that index `M/2` (in every axis) is
//! the origin.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported dimension.
pub const MAX_DIM: usize = 3;

/// Basis of a Bravais lattice together with its reciprocal basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct BravaisBasis {
    dim: usize,
    /// Row `i` holds `a_i`, flattened row-major.
    direct: Vec<f64>,
    /// Row `i` holds `â_i`, flattened row-major.
    reciprocal: Vec<f64>,
    volume: f64,
}

impl BravaisBasis {
    pub fn new(vectors: &[Vec<f64>]) -> Result<Self> {
        let dim = vectors.len();
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::config(
                "lattice.basis",
                format!("dimension must be 1..={MAX_DIM}, got {dim}"),
            ));
        }
        let mut direct = Vec::with_capacity(dim * dim);
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::config(
                    format!("lattice.basis[{i}]"),
                    format!("expected {dim} components, got {}", v.len()),
                ));
            }
            if v.iter().any(|c| !c.is_finite()) {
                return Err(Error::config(
                    format!("lattice.basis[{i}]"),
                    "non-finite component",
                ));
            }
            direct.extend_from_slice(v);
        }
        let (inv, det) = invert(&direct, dim).ok_or_else(|| {
            Error::config("lattice.basis", "basis vectors are linearly dependent")
        })?;
        let volume = det.abs();
        let scale = direct.iter().fold(0.0f64, |m, v| m.max(v.abs())).powi(dim as i32);
        if volume <= 1e-12 * scale {
            return Err(Error::config(
                "lattice.basis",
                "basis vectors are linearly dependent",
            ));
        }
        // â_i is the i-th column of A^{-1}.
        let mut reciprocal = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                reciprocal[i * dim + j] = inv[j * dim + i];
            }
        }
        Ok(Self {
            dim,
            direct,
            reciprocal,
            volume,
        })
    }

    /// The integer lattice `ℤ^d`.
    pub fn cubic(dim: usize) -> Result<Self> {
        let vectors: Vec<Vec<f64>> = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::new(&vectors)
    }

    /// Triangular lattice with unit spacing, `a_1 = (1,0)`, `a_2 = (1/2, √3/2)`.
    pub fn hexagonal() -> Self {
        Self::new(&[vec![1.0, 0.0], vec![0.5, 3f64.sqrt() / 2.0]])
            .expect("hexagonal basis is regular")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.direct[i * self.dim..(i + 1) * self.dim]
    }

    pub fn reciprocal_vector(&self, i: usize) -> &[f64] {
        &self.reciprocal[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vectors(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| self.vector(i).to_vec()).collect()
    }

    /// `|𝒢| = |det(a_1..a_d)|`.
    pub fn cell_volume(&self) -> f64 {
        self.volume
    }

    /// Lebesgue volume of the Fourier cell, `|Ĝ| = 1/|𝒢|`.
    pub fn fourier_cell_volume(&self) -> f64 {
        1.0 / self.volume
    }

    /// Radius of the largest ball centered at 0 inside the unscaled Fourier
    /// cell `{Σ t_i â_i : |t_i| ≤ 1/2}`.
    pub fn fourier_inradius(&self) -> f64 {
        (0..self.dim)
            .map(|i| 0.5 / norm(self.vector(i)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Physical vector `Σ n_i a_i` for integer coordinates `n`.
    pub fn lattice_point(&self, coords: &[i64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, &n) in coords.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.vector(i)) {
                *o += n as f64 * a;
            }
        }
        out
    }
}

impl TryFrom<Vec<Vec<f64>>> for BravaisBasis {
    type Error = Error;
    fn try_from(v: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(&v)
    }
}

impl From<BravaisBasis> for Vec<Vec<f64>> {
    fn from(b: BravaisBasis) -> Self {
        b.vectors()
    }
}

/// Finite periodic window of the scaled lattice `ε𝒢`, `ε = 2^{-N}`, with side
/// `M` in every lattice direction, plus its dual frequency grid.
///
/// Sites are stored row-major over `{0..M-1}^d` (last axis fastest). The
/// dual grid uses FFT ordering: axis index `k` carries the signed frequency
/// index `m = k` for `k < M/2` and `m = k - M` otherwise.
#[derive(Debug)]
pub struct BravaisTorus {
    basis: BravaisBasis,
    scale_exp: u32,
    side: usize,
    eps: f64,
    len: usize,
    positions: OnceLock<Vec<f64>>,
    frequencies: OnceLock<Vec<f64>>,
}

impl PartialEq for BravaisTorus {
    fn eq(&self, other: &Self) -> bool {
        self.scale_exp == other.scale_exp && self.side == other.side && self.basis == other.basis
    }
}

/// Shared handle to a torus.
pub type Torus = Arc<BravaisTorus>;

impl BravaisTorus {
    /// Builds the torus for scale exponent `n` (`ε = 2^{-n}`) and side `m`.
    ///
    /// `m` must be a power of two no smaller than 4.
    pub fn new(basis: BravaisBasis, n: u32, m: usize) -> Result<Self> {
        if m < 4 || !m.is_multiple_of(2) {
            return Err(Error::config(
                "lattice.M",
                format!("torus side must be even and at least 4, got {m}"),
            ));
        }
        if !m.is_power_of_two() {
            return Err(Error::config(
                "lattice.M",
                format!("torus side must be a power of two, got {m}"),
            ));
        }
        if n > 40 {
            return Err(Error::config("lattice.N", format!("scale exponent {n} too large")));
        }
        let len = m
            .checked_pow(basis.dim() as u32)
            .ok_or_else(|| Error::config("lattice.M", "grid size overflows"))?;
        Ok(Self {
            eps: (-(n as f64)).exp2(),
            basis,
            scale_exp: n,
            side: m,
            len,
            positions: OnceLock::new(),
            frequencies: OnceLock::new(),
        })
    }

    /// Shorthand for `Arc::new(BravaisTorus::new(..)?)`.
    pub fn shared(basis: BravaisBasis, n: u32, m: usize) -> Result<Torus> {
        Self::new(basis, n, m).map(Arc::new)
    }

    pub fn basis(&self) -> &BravaisBasis {
        &self.basis
    }
    pub fn dim(&self) -> usize {
        self.basis.dim()
    }
    pub fn scale_exp(&self) -> u32 {
        self.scale_exp
    }
    pub fn side(&self) -> usize {
        self.side
    }
    pub fn eps(&self) -> f64 {
        self.eps
    }
    /// Number of sites, `M^d`.
    pub fn len(&self) -> usize {
        self.len
    }
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `|𝒢^ε| = ε^d |𝒢|`.
    pub fn cell_volume(&self) -> f64 {
        self.eps.powi(self.dim() as i32) * self.basis.cell_volume()
    }

    /// Physical volume of the periodic window, `M^d |𝒢^ε|`.
    pub fn window_volume(&self) -> f64 {
        self.len as f64 * self.cell_volume()
    }

    /// Lebesgue measure attached to one dual-grid point, `|ε^{-1}Ĝ| / M^d`.
    pub fn dual_cell_measure(&self) -> f64 {
        1.0 / self.window_volume()
    }

    /// Index of the site at the origin.
    pub fn origin_index(&self) -> usize {
        let half = self.side / 2;
        (0..self.dim()).fold(0, |acc, _| acc * self.side + half)
    }

    pub fn multi_index(&self, idx: usize, out: &mut [usize]) {
        let mut rest = idx;
        for o in out.iter_mut().take(self.dim()).rev() {
            *o = rest % self.side;
            rest /= self.side;
        }
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .take(self.dim())
            .fold(0, |acc, &k| acc * self.side + k)
    }

    /// Signed frequency index of an FFT-ordered axis index.
    pub fn signed_mode(&self, k: usize) -> i64 {
        if k < self.side / 2 {
            k as i64
        } else {
            k as i64 - self.side as i64
        }
    }

    /// Integer lattice coordinates `k - M/2` of a site.
    pub fn site_coords(&self, idx: usize) -> Vec<i64> {
        let mut multi = [0usize; MAX_DIM];
        self.multi_index(idx, &mut multi);
        multi[..self.dim()]
            .iter()
            .map(|&k| k as i64 - (self.side / 2) as i64)
            .collect()
    }

    /// Physical position `ε Σ (k_i - M/2) a_i` of a site.
    pub fn point(&self, idx: usize, out: &mut [f64]) {
        let d = self.dim();
        let mut multi = [0usize; MAX_DIM];
        self.multi_index(idx, &mut multi);
        out[..d].fill(0.0);
        for (i, &k) in multi[..d].iter().enumerate() {
            let c = self.eps * (k as f64 - (self.side / 2) as f64);
            for (o, a) in out[..d].iter_mut().zip(self.basis.vector(i)) {
                *o += c * a;
            }
        }
    }

    /// Physical frequency `Σ m_i/(Mε) â_i` of a dual-grid point.
    pub fn frequency(&self, idx: usize, out: &mut [f64]) {
        let d = self.dim();
        let mut multi = [0usize; MAX_DIM];
        self.multi_index(idx, &mut multi);
        out[..d].fill(0.0);
        let step = 1.0 / (self.side as f64 * self.eps);
        for (i, &k) in multi[..d].iter().enumerate() {
            let c = self.signed_mode(k) as f64 * step;
            for (o, a) in out[..d].iter_mut().zip(self.basis.reciprocal_vector(i)) {
                *o += c * a;
            }
        }
    }

    /// Cached site positions, `d` entries per site.
    pub fn positions(&self) -> &[f64] {
        self.positions.get_or_init(|| {
            let d = self.dim();
            let mut out = vec![0.0; self.len * d];
            for (idx, chunk) in out.chunks_mut(d).enumerate() {
                self.point(idx, chunk);
            }
            out
        })
    }

    /// Cached dual-grid frequencies, `d` entries per point.
    pub fn frequencies(&self) -> &[f64] {
        self.frequencies.get_or_init(|| {
            let d = self.dim();
            let mut out = vec![0.0; self.len * d];
            for (idx, chunk) in out.chunks_mut(d).enumerate() {
                self.frequency(idx, chunk);
            }
            out
        })
    }

    /// Nearest site to a physical point (periodically wrapped).
    pub fn nearest_index(&self, x: &[f64]) -> usize {
        let d = self.dim();
        let mut multi = [0usize; MAX_DIM];
        for (i, slot) in multi[..d].iter_mut().enumerate() {
            // coordinate along a_i is x · â_i / ε
            let c = dot(x, self.basis.reciprocal_vector(i)) / self.eps;
            let n = c.round() as i64 + (self.side / 2) as i64;
            *slot = n.rem_euclid(self.side as i64) as usize;
        }
        self.flat_index(&multi[..d])
    }

    /// Reduces a frequency into the scaled Fourier cell `ε^{-1}Ĝ`; the
    /// result differs from the input by an element of the scaled reciprocal
    /// lattice `ε^{-1}ℛ`.
    pub fn reduce_to_cell(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d];
        for i in 0..d {
            let t = self.eps * dot(x, self.basis.vector(i));
            // boundary points within rounding of -1/2 stay on the closed side
            let t = t - (t + 0.5 + 1e-12).floor();
            for (o, a) in out.iter_mut().zip(self.basis.reciprocal_vector(i)) {
                *o += t / self.eps * a;
            }
        }
        out
    }

    /// The torus with `ε → ε 2^{-r}` and `M → M 2^r`, covering the same window.
    pub fn refine(&self, r: u32) -> Result<Self> {
        Self::new(self.basis.clone(), self.scale_exp + r, self.side << r)
    }

    /// Same lattice geometry at scale `ε = 1` with the same side.
    pub fn unscaled(&self) -> Result<Self> {
        Self::new(self.basis.clone(), 0, self.side)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Inverse and determinant of a row-major `n×n` matrix by Gauss-Jordan
/// elimination with partial pivoting.
fn invert(a: &[f64], n: usize) -> Option<(Vec<f64>, f64)> {
    let mut m = a.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n).max_by(|&r, &s| {
            m[r * n + col]
                .abs()
                .partial_cmp(&m[s * n + col].abs())
                .unwrap()
        })?;
        let p = m[pivot * n + col];
        if p == 0.0 {
            return None;
        }
        if pivot != col {
            for j in 0..n {
                m.swap(pivot * n + j, col * n + j);
                inv.swap(pivot * n + j, col * n + j);
            }
            det = -det;
        }
        det *= p;
        for j in 0..n {
            m[col * n + j] /= p;
            inv[col * n + j] /= p;
        }
        for r in 0..n {
            if r != col {
                let f = m[r * n + col];
                if f != 0.0 {
                    for j in 0..n {
                        m[r * n + j] -= f * m[col * n + j];
                        inv[r * n + j] -= f * inv[col * n + j];
                    }
                }
            }
        }
    }
    Some((inv, det))
}
