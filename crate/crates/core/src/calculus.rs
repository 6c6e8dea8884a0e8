//! Dyadic partitions of unity on the dual grid, Littlewood-Paley blocks,
//! weighted Besov and parabolic norms, paraproducts, resonant products,
//! commutators and the time-smoothed paraproduct.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::lattice::{norm, BravaisTorus, Torus};
use crate::spectral::{check_same, forward, inverse, smooth_step, Field, SpectralField};

/// Radial profile generating the partition: `φ_0` is supported in the
/// annulus `[3r/8, r]` and `φ_{-1}` in the ball of radius `r/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionProfile {
    pub radius: f64,
}

impl PartitionProfile {
    /// `r` equal to half the inradius of the unscaled Fourier cell, so the
    /// blocks below the top one stay clear of the cell boundary.
    pub fn for_torus(torus: &BravaisTorus) -> Self {
        Self {
            radius: 0.5 * torus.basis().fourier_inradius(),
        }
    }

    /// Smooth ball profile: 1 on `|x| ≤ 3r/8`, 0 on `|x| ≥ r/2`.
    pub fn ball(&self, s: f64) -> f64 {
        let u = s / self.radius;
        smooth_step((0.5 - u) * 8.0)
    }
}

/// Sampled blocks `φ_{-1}, …, φ_{j_𝒢}` on the dual grid of a torus.
#[derive(Debug)]
pub struct PartitionOfUnity {
    torus: Torus,
    profile: PartitionProfile,
    top: i32,
    tables: Vec<Vec<f64>>,
}

impl PartitionOfUnity {
    pub fn new(torus: Torus, profile: PartitionProfile) -> Result<Self> {
        if !(profile.radius.is_finite() && profile.radius > 0.0) {
            return Err(Error::config("partition.radius", "radius must be positive"));
        }
        let inradius = torus.basis().fourier_inradius() / torus.eps();
        let outer = |j: i32| {
            if j < 0 {
                0.5 * profile.radius
            } else {
                profile.radius * 2f64.powi(j)
            }
        };
        let mut top = -1;
        while outer(top) < inradius {
            top += 1;
        }
        if top < 1 {
            return Err(Error::config(
                "partition.radius",
                format!("grid too coarse: top block index {top} < 1"),
            ));
        }
        let d = torus.dim();
        let nblocks = (top + 2) as usize;
        let mut tables = vec![vec![0.0; torus.len()]; nblocks];
        let mut chi = vec![0.0; nblocks];
        for (k, x) in torus.frequencies().chunks(d).enumerate() {
            let s = norm(x);
            // chi[j] = ball(x / 2^j) for j = 0..=top
            for (j, c) in chi.iter_mut().enumerate().take(nblocks - 1) {
                *c = profile.ball(s / 2f64.powi(j as i32));
            }
            tables[0][k] = chi[0];
            let mut sum = chi[0];
            for j in 1..nblocks - 1 {
                let v = chi[j] - chi[j - 1];
                tables[j][k] = v;
                sum += v;
            }
            tables[nblocks - 1][k] = 1.0 - sum;
        }
        Ok(Self {
            torus,
            profile,
            top,
            tables,
        })
    }

    /// Shared partition for `torus` with the default profile.
    pub fn for_torus(torus: &Torus) -> Result<Arc<Self>> {
        type Key = (Vec<u64>, u32, usize);
        static CACHE: OnceLock<Mutex<HashMap<Key, Arc<PartitionOfUnity>>>> = OnceLock::new();
        let key: Key = (
            torus
                .basis()
                .vectors()
                .iter()
                .flatten()
                .map(|v| v.to_bits())
                .collect(),
            torus.scale_exp(),
            torus.side(),
        );
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(p) = cache.lock().expect("partition cache poisoned").get(&key) {
            return Ok(p.clone());
        }
        let p = Arc::new(Self::new(torus.clone(), PartitionProfile::for_torus(torus))?);
        cache
            .lock()
            .expect("partition cache poisoned")
            .insert(key, p.clone());
        Ok(p)
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }
    pub fn profile(&self) -> PartitionProfile {
        self.profile
    }
    /// Index `j_𝒢` of the boundary block.
    pub fn top(&self) -> i32 {
        self.top
    }
    /// Block indices `-1..=j_𝒢`.
    pub fn indices(&self) -> std::ops::RangeInclusive<i32> {
        -1..=self.top
    }

    /// Sampled `φ_j` on the dual grid.
    pub fn table(&self, j: i32) -> Result<&[f64]> {
        self.check_index(j)?;
        Ok(&self.tables[(j + 1) as usize])
    }

    fn check_index(&self, j: i32) -> Result<()> {
        if j < -1 || j > self.top {
            Err(Error::Argument(format!(
                "block index {j} outside -1..={}",
                self.top
            )))
        } else {
            Ok(())
        }
    }

    fn check(&self, f: &Field) -> Result<()> {
        check_same(&self.torus, f.torus())
    }

    fn project(&self, spec: &SpectralField, table: &[f64]) -> Field {
        let values: Vec<Complex64> = spec
            .values()
            .iter()
            .zip(table)
            .map(|(v, m)| v * m)
            .collect();
        inverse(&SpectralField::new(self.torus.clone(), values).expect("same torus"))
    }

    /// `Δ_j f`.
    pub fn lp_block(&self, f: &Field, j: i32) -> Result<Field> {
        self.check(f)?;
        self.check_index(j)?;
        Ok(self.project(&forward(f), &self.tables[(j + 1) as usize]))
    }

    /// `S_j f = Σ_{i<j} Δ_i f`; `j` ranges over `-1..=j_𝒢 + 1`.
    pub fn partial_sum(&self, f: &Field, j: i32) -> Result<Field> {
        self.check(f)?;
        if j < -1 || j > self.top + 1 {
            return Err(Error::Argument(format!(
                "partial sum index {j} outside -1..={}",
                self.top + 1
            )));
        }
        let table = self.partial_table(j);
        Ok(self.project(&forward(f), &table))
    }

    fn partial_table(&self, j: i32) -> Vec<f64> {
        let mut table = vec![0.0; self.torus.len()];
        for t in &self.tables[..(j + 1) as usize] {
            for (a, b) in table.iter_mut().zip(t) {
                *a += b;
            }
        }
        table
    }

    /// All blocks `Δ_{-1} f, …, Δ_{j_𝒢} f`.
    pub fn blocks(&self, f: &Field) -> Result<Vec<Field>> {
        self.check(f)?;
        let spec = forward(f);
        Ok(self
            .tables
            .par_iter()
            .map(|t| self.project(&spec, t))
            .collect())
    }

    /// `f ≺ g = Σ_j S_{j-1} f · Δ_j g`.
    pub fn paraproduct(&self, f: &Field, g: &Field) -> Result<Field> {
        let fb = self.blocks(f)?;
        let gb = self.blocks(g)?;
        Ok(paraproduct_from_blocks(&fb, &gb))
    }

    /// `f ⊙ g = Σ_{|i-j|≤1} Δ_i f · Δ_j g`.
    pub fn resonant(&self, f: &Field, g: &Field) -> Result<Field> {
        let fb = self.blocks(f)?;
        let gb = self.blocks(g)?;
        Ok(resonant_from_blocks(&fb, &gb))
    }

    /// `C(f1, f2, f3) = (f1 ≺ f2) ⊙ f3 − f1 (f2 ⊙ f3)`.
    pub fn commutator(&self, f1: &Field, f2: &Field, f3: &Field) -> Result<Field> {
        let a = self.paraproduct(f1, f2)?;
        let left = self.resonant(&a, f3)?;
        let right = f1.mul(&self.resonant(f2, f3)?)?;
        left.sub(&right)
    }
}

fn paraproduct_from_blocks(fb: &[Field], gb: &[Field]) -> Field {
    let mut out = Field::zeros(fb[0].torus().clone());
    let mut low = Field::zeros(fb[0].torus().clone());
    // block position p holds index j = p - 1; S_{j-1} collects positions < p - 1
    for p in 2..gb.len() {
        low.add_assign(&fb[p - 2]);
        out.add_product(&low, &gb[p]);
    }
    out
}

fn resonant_from_blocks(fb: &[Field], gb: &[Field]) -> Field {
    let n = fb.len();
    let mut out = Field::zeros(fb[0].torus().clone());
    for i in 0..n {
        for j in i.saturating_sub(1)..(i + 2).min(n) {
            out.add_product(&fb[i], &gb[j]);
        }
    }
    out
}

/// Integrability or summability exponent in `[1, ∞]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exponent {
    Finite(f64),
    Infinity,
}

impl Exponent {
    pub fn validate(&self, path: &str) -> Result<()> {
        match *self {
            Exponent::Finite(p) if !(p.is_finite() && p >= 1.0) => {
                Err(Error::config(path, format!("exponent must lie in [1, inf], got {p}")))
            }
            _ => Ok(()),
        }
    }

    /// `(Σ |a|^p)^{1/p}` scaled by `measure^{1/p}`, or the maximum.
    fn aggregate(&self, values: impl Iterator<Item = f64>, measure: f64) -> f64 {
        match *self {
            Exponent::Infinity => values.fold(0.0, |m, v| m.max(v.abs())),
            Exponent::Finite(p) => {
                let s: f64 = values.map(|v| v.abs().powf(p)).sum();
                (measure * s).powf(1.0 / p)
            }
        }
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exponent::Finite(p) => write!(f, "{p}"),
            Exponent::Infinity => write!(f, "inf"),
        }
    }
}

impl Serialize for Exponent {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Exponent::Finite(p) => s.serialize_f64(*p),
            Exponent::Infinity => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Exponent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(p) if p.is_infinite() => Ok(Exponent::Infinity),
            Raw::Num(p) => Ok(Exponent::Finite(p)),
            Raw::Str(s) if matches!(s.as_str(), "inf" | "infinity" | "∞") => Ok(Exponent::Infinity),
            Raw::Str(s) => Err(serde::de::Error::custom(format!(
                "expected a number or \"inf\", got {s:?}"
            ))),
        }
    }
}

/// Spatial weight evaluated at physical positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Weight {
    /// `(1 + |x|)^{-κ}`.
    Polynomial { kappa: f64 },
    /// `exp(-(l + t)(1 + |x|)^σ)`.
    Subexponential { sigma: f64, l: f64, t: f64 },
}

impl Default for Weight {
    fn default() -> Self {
        Weight::Polynomial { kappa: 0.0 }
    }
}

impl Weight {
    pub fn unweighted() -> Self {
        Self::default()
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        match *self {
            Weight::Polynomial { kappa } if !(kappa.is_finite() && kappa >= 0.0) => {
                Err(Error::config(format!("{path}.kappa"), "kappa must be >= 0"))
            }
            Weight::Subexponential { sigma, .. } if !(sigma > 0.0 && sigma < 1.0) => {
                Err(Error::config(format!("{path}.sigma"), "sigma must lie in (0, 1)"))
            }
            Weight::Subexponential { l, .. } if !(l.is_finite() && l <= 0.0) => {
                Err(Error::config(format!("{path}.l"), "l must be <= 0"))
            }
            Weight::Subexponential { t, .. } if !(t.is_finite() && t >= 0.0) => {
                Err(Error::config(format!("{path}.t"), "t must be >= 0"))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let r = 1.0 + norm(x);
        match *self {
            Weight::Polynomial { kappa } => r.powf(-kappa),
            Weight::Subexponential { sigma, l, t } => (-(l + t) * r.powf(sigma)).exp(),
        }
    }

    /// Product of two weights of the same kind, e.g. `p^κ · p^κ = p^{2κ}`.
    pub fn powi(&self, n: i32) -> Self {
        match *self {
            Weight::Polynomial { kappa } => Weight::Polynomial {
                kappa: kappa * n as f64,
            },
            Weight::Subexponential { sigma, l, t } => Weight::Subexponential {
                sigma,
                l: l * n as f64,
                t: t * n as f64,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Weight::Polynomial { .. } => "polynomial",
            Weight::Subexponential { .. } => "subexponential",
        }
    }

    /// Headline parameter: `κ` or `l + t`.
    pub fn param(&self) -> f64 {
        match *self {
            Weight::Polynomial { kappa } => kappa,
            Weight::Subexponential { l, t, .. } => l + t,
        }
    }

    pub fn table(&self, torus: &BravaisTorus) -> Vec<f64> {
        if *self == Weight::unweighted() {
            return vec![1.0; torus.len()];
        }
        torus
            .positions()
            .chunks(torus.dim())
            .map(|x| self.eval(x))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BesovParams {
    pub alpha: f64,
    pub p: Exponent,
    pub q: Exponent,
    #[serde(default)]
    pub weight: Weight,
}

impl BesovParams {
    pub fn new(alpha: f64, p: Exponent, q: Exponent, weight: Weight) -> Self {
        Self { alpha, p, q, weight }
    }

    /// Hölder-Besov space `𝒞^α_p = B^α_{p,∞}`.
    pub fn holder(alpha: f64, p: Exponent, weight: Weight) -> Self {
        Self::new(alpha, p, Exponent::Infinity, weight)
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if !self.alpha.is_finite() {
            return Err(Error::config(format!("{path}.alpha"), "alpha must be finite"));
        }
        self.p.validate(&format!("{path}.p"))?;
        self.q.validate(&format!("{path}.q"))?;
        self.weight.validate(&format!("{path}.weight"))
    }
}

/// `‖ρ f‖_{L^p(𝒢^ε)}` with weight table `rho`.
pub fn weighted_lp(f: &Field, rho: &[f64], p: Exponent) -> f64 {
    let vol = f.torus().cell_volume();
    p.aggregate(f.values().iter().zip(rho).map(|(v, w)| v * w), vol)
}

/// Weighted `L^p` norms of all blocks, `j = -1..=j_𝒢`.
pub fn block_norms(pou: &PartitionOfUnity, f: &Field, p: Exponent, weight: &Weight) -> Result<Vec<f64>> {
    let rho = weight.table(f.torus());
    Ok(pou
        .blocks(f)?
        .iter()
        .map(|b| weighted_lp(b, &rho, p))
        .collect())
}

/// `‖(2^{jα} ‖ρ Δ_j f‖_{L^p})_j‖_{ℓ^q}` with the default partition.
pub fn besov_norm(f: &Field, params: &BesovParams) -> Result<f64> {
    let pou = PartitionOfUnity::for_torus(f.torus())?;
    besov_norm_with(&pou, f, params)
}

pub fn besov_norm_with(pou: &PartitionOfUnity, f: &Field, params: &BesovParams) -> Result<f64> {
    params.validate("besov")?;
    let norms = block_norms(pou, f, params.p, &params.weight)?;
    Ok(besov_from_block_norms(&norms, params.alpha, params.q))
}

/// Aggregates precomputed block norms (indexed from `j = -1`).
pub fn besov_from_block_norms(norms: &[f64], alpha: f64, q: Exponent) -> f64 {
    q.aggregate(
        norms
            .iter()
            .enumerate()
            .map(|(i, n)| 2f64.powf(alpha * (i as f64 - 1.0)) * n),
        1.0,
    )
}

/// `Δ_j f` with the default partition.
pub fn lp_block(f: &Field, j: i32) -> Result<Field> {
    PartitionOfUnity::for_torus(f.torus())?.lp_block(f, j)
}

/// `S_j f` with the default partition.
pub fn partial_sum(f: &Field, j: i32) -> Result<Field> {
    PartitionOfUnity::for_torus(f.torus())?.partial_sum(f, j)
}

pub fn paraproduct(f: &Field, g: &Field) -> Result<Field> {
    check_same(f.torus(), g.torus())?;
    PartitionOfUnity::for_torus(f.torus())?.paraproduct(f, g)
}

pub fn resonant(f: &Field, g: &Field) -> Result<Field> {
    check_same(f.torus(), g.torus())?;
    PartitionOfUnity::for_torus(f.torus())?.resonant(f, g)
}

pub fn commutator(f1: &Field, f2: &Field, f3: &Field) -> Result<Field> {
    check_same(f1.torus(), f2.torus())?;
    check_same(f1.torus(), f3.torus())?;
    PartitionOfUnity::for_torus(f1.torus())?.commutator(f1, f2, f3)
}

const GL_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Composite 8-point Gauss-Legendre rule on `[a, b]`.
fn integrate(a: f64, b: f64, panels: usize, g: impl Fn(f64) -> f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let mid = a + (k as f64 + 0.5) * h;
        let half = 0.5 * h;
        for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
            total += w * half * (g(mid - half * x) + g(mid + half * x));
        }
    }
    total
}

/// Unit-mass bump `φ` on `(center − half_width, center + half_width) ⊂ (0, ∞)`
/// used by the time-smoothing operators `Q_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeKernel {
    pub center: f64,
    pub half_width: f64,
}

impl Default for TimeKernel {
    fn default() -> Self {
        Self {
            center: 1.0,
            half_width: 0.5,
        }
    }
}

const KERNEL_PANELS: usize = 16;

impl TimeKernel {
    pub fn validate(&self) -> Result<()> {
        if !(self.half_width > 0.0 && self.center - self.half_width >= 0.0 && self.center.is_finite()) {
            return Err(Error::config(
                "kernel",
                "time kernel must be supported in (0, inf)",
            ));
        }
        Ok(())
    }

    fn raw(&self, tau: f64) -> f64 {
        let y = (tau - self.center) / self.half_width;
        if y.abs() >= 1.0 {
            0.0
        } else {
            (-1.0 / (1.0 - y * y)).exp()
        }
    }

    fn mass(&self) -> f64 {
        integrate(
            self.center - self.half_width,
            self.center + self.half_width,
            256,
            |t| self.raw(t),
        )
    }

    /// Normalized `φ(τ)`.
    pub fn eval(&self, tau: f64) -> f64 {
        self.raw(tau) / self.mass()
    }

    /// Weights `w_k` such that `Q_i f(t_n) = Σ_k w_k f(t_k)` for the
    /// piecewise-linear interpolant of `f` on the uniform grid `k·dt`, with
    /// `f(s) = f(0)` for `s < 0`. The weights sum to 1.
    pub fn weights(&self, i: i32, dt: f64, n: usize) -> Vec<f64> {
        let scale = 4f64.powi(i);
        let z = self.mass();
        let t = n as f64 * dt;
        let kernel = |tau: f64| scale * self.raw(scale * tau) / z;
        // lag window where the kernel is nonzero
        let lo = (self.center - self.half_width) / scale;
        let hi = (self.center + self.half_width) / scale;
        let mut w = vec![0.0; n + 1];
        let mut inside = 0.0;
        for k in 0..n {
            // interval [t_k, t_{k+1}] in s, i.e. lags [t - t_{k+1}, t - t_k]
            let s0 = k as f64 * dt;
            let s1 = s0 + dt;
            let a = (t - s1).max(lo);
            let b = (t - s0).min(hi);
            if a >= b {
                continue;
            }
            // hat of node k+1 is (s - s0)/dt = (t - lag - s0)/dt
            let right = integrate(a, b, KERNEL_PANELS, |lag| kernel(lag) * (t - lag - s0) / dt);
            let total = integrate(a, b, KERNEL_PANELS, kernel);
            w[k + 1] += right;
            w[k] += total - right;
            inside += total;
        }
        // mass from s < 0, clamped to f(0)
        w[0] += 1.0 - inside;
        w
    }
}

fn check_uniform(times: &[f64]) -> Result<f64> {
    if times.len() < 2 {
        return Err(Error::Argument("time grid needs at least two points".into()));
    }
    if times[0] != 0.0 {
        return Err(Error::Argument("time grid must start at 0".into()));
    }
    let dt = times[1] - times[0];
    if dt <= 0.0 {
        return Err(Error::Argument("time grid must be increasing".into()));
    }
    for (k, t) in times.iter().enumerate() {
        if (t - k as f64 * dt).abs() > 1e-9 * dt.max(t.abs()) {
            return Err(Error::Argument(format!(
                "time grid is not uniform at index {k}"
            )));
        }
    }
    Ok(dt)
}

/// `(F ≺≺ G)(t_n) = Σ_j Q_j(S_{j-1} F)(t_n) · Δ_j G(t_n)` over a uniform
/// time grid starting at 0.
pub fn modified_paraproduct(
    pou: &PartitionOfUnity,
    f: &[Field],
    g: &[Field],
    times: &[f64],
    n: usize,
    kernel: &TimeKernel,
) -> Result<Field> {
    kernel.validate()?;
    let dt = check_uniform(times)?;
    if f.len() != times.len() || g.len() != times.len() {
        return Err(Error::Shape(format!(
            "{} / {} snapshots for {} times",
            f.len(),
            g.len(),
            times.len()
        )));
    }
    if n >= times.len() {
        return Err(Error::Argument(format!("time index {n} out of range")));
    }
    for h in f.iter().chain(g) {
        check_same(pou.torus(), h.torus())?;
    }
    let specs: Vec<SpectralField> = f[..=n].par_iter().map(forward).collect();
    let gb = pou.blocks(&g[n])?;
    let torus = pou.torus().clone();
    let terms: Vec<Field> = (1..=pou.top())
        .into_par_iter()
        .map(|j| {
            let w = kernel.weights(j, dt, n);
            let mut acc = vec![Complex64::default(); torus.len()];
            for (spec, wk) in specs.iter().zip(&w) {
                if *wk != 0.0 {
                    for (a, v) in acc.iter_mut().zip(spec.values()) {
                        *a += v * wk;
                    }
                }
            }
            let low = pou.partial_table(j - 1);
            let smoothed = SpectralField::new(torus.clone(), acc).expect("same torus");
            let mut term = pou.project(&smoothed, &low);
            let gj = &gb[(j + 1) as usize];
            for (a, b) in term.values_mut().iter_mut().zip(gj.values()) {
                *a *= b;
            }
            term
        })
        .collect();
    let mut out = Field::zeros(torus);
    for t in &terms {
        out.add_assign(t);
    }
    Ok(out)
}

/// Parameters of the parabolic norm
/// `‖t ↦ t^γ f(t)‖_{C^{α/2}_T L^p} + sup_t t^γ ‖f(t)‖_{𝒞^α_p}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParabolicParams {
    pub gamma: f64,
    pub alpha: f64,
    pub p: Exponent,
}

/// Parabolic norm over a uniform time grid; `weight(t)` gives the spatial
/// weight at time `t`. Returns the three parts: sup part, Hölder-in-time
/// quotient and Besov sup, and their total.
pub fn parabolic_norm_parts(
    f: &[Field],
    times: &[f64],
    params: &ParabolicParams,
    weight: &(dyn Fn(f64) -> Weight + Sync),
) -> Result<[f64; 4]> {
    if !(0.0..1.0).contains(&params.gamma) {
        return Err(Error::Argument("gamma must lie in [0, 1)".into()));
    }
    params.p.validate("parabolic.p")?;
    check_uniform(times)?;
    if f.len() != times.len() {
        return Err(Error::Shape(format!(
            "{} snapshots for {} times",
            f.len(),
            times.len()
        )));
    }
    let pou = PartitionOfUnity::for_torus(f[0].torus())?;
    let scaled: Vec<Field> = f
        .iter()
        .zip(times)
        .map(|(u, &t)| u.scaled(t.powf(params.gamma)))
        .collect();
    let tables: Vec<Vec<f64>> = times.iter().map(|&t| weight(t).table(f[0].torus())).collect();
    let sup = scaled
        .iter()
        .zip(&tables)
        .map(|(u, rho)| weighted_lp(u, rho, params.p))
        .fold(0.0, f64::max);
    let holder = (1..times.len())
        .into_par_iter()
        .map(|b| {
            let mut m = 0.0f64;
            for a in 0..b {
                let diff = scaled[b].sub(&scaled[a]).expect("same torus");
                let q = weighted_lp(&diff, &tables[b], params.p)
                    / (times[b] - times[a]).powf(0.5 * params.alpha);
                m = m.max(q);
            }
            m
        })
        .reduce(|| 0.0, f64::max);
    let besov = f
        .par_iter()
        .zip(times.par_iter())
        .map(|(u, &t)| {
            let bp = BesovParams::holder(params.alpha, params.p, weight(t));
            besov_norm_with(&pou, u, &bp).map(|v| t.powf(params.gamma) * v)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok([sup, holder, besov, sup + holder + besov])
}

pub fn parabolic_norm(
    f: &[Field],
    times: &[f64],
    params: &ParabolicParams,
    weight: &(dyn Fn(f64) -> Weight + Sync),
) -> Result<f64> {
    Ok(parabolic_norm_parts(f, times, params, weight)?[3])
}
