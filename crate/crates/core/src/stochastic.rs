//! Lattice noise, Wick products, discrete multiple stochastic integrals,
//! the renormalization constant and the enhanced noise.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::calculus::{besov_norm_with, BesovParams, Exponent, PartitionOfUnity, Weight};
use crate::diffusion::JumpMeasure;
use crate::error::{Error, Result};
use crate::lattice::{dot, BravaisTorus, Torus};
use crate::spectral::{apply_table, check_same, smooth_step, Field};

/// Standardized single-site law (mean 0, variance 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Law {
    Gaussian,
    Rademacher,
    CenteredUniform,
}

impl Law {
    /// `E[Z^n]`.
    pub fn moment(&self, n: u32) -> f64 {
        if n % 2 == 1 {
            return 0.0;
        }
        match self {
            // (n-1)!!
            Law::Gaussian => (1..n).step_by(2).map(|k| k as f64).product(),
            Law::Rademacher => 1.0,
            // uniform on [-√3, √3]
            Law::CenteredUniform => 3f64.powf(n as f64 / 2.0) / (n as f64 + 1.0),
        }
    }

    /// Maps two uniform 64-bit words to one standardized sample.
    fn sample(&self, w0: u64, w1: u64) -> f64 {
        let unit = |w: u64| (w >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        match self {
            Law::Gaussian => {
                // Box-Muller with u1 in (0, 1]
                let u1 = 1.0 - unit(w0);
                let u2 = unit(w1);
                (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
            }
            Law::Rademacher => {
                if w0 >> 63 == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
            Law::CenteredUniform => (2.0 * unit(w0) - 1.0) * 3f64.sqrt(),
        }
    }
}

/// Variance normalization of a noise field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseScale {
    /// Variance `|𝒢^ε|^{-1}` per site.
    Macro,
    /// Variance `ε²/|𝒢|` per site on the unscaled lattice.
    Micro { eps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub law: Law,
    pub seed: u64,
    #[serde(default = "default_scale")]
    pub scale: NoiseScale,
    /// Mean added after scaling; nonzero only for the shifted micro noise.
    #[serde(default)]
    pub mean: f64,
    /// Moment order carried as metadata.
    #[serde(default = "default_p_xi")]
    pub p_xi: f64,
}

fn default_scale() -> NoiseScale {
    NoiseScale::Macro
}
fn default_p_xi() -> f64 {
    40.0
}

impl NoiseSpec {
    pub fn macro_noise(law: Law, seed: u64) -> Self {
        Self {
            law,
            seed,
            scale: NoiseScale::Macro,
            mean: 0.0,
            p_xi: default_p_xi(),
        }
    }

    pub fn micro_noise(law: Law, seed: u64, eps: f64, mean: f64) -> Self {
        Self {
            law,
            seed,
            scale: NoiseScale::Micro { eps },
            mean,
            p_xi: default_p_xi(),
        }
    }

    /// Per-site standard deviation on `torus`.
    pub fn std_dev(&self, torus: &BravaisTorus) -> Result<f64> {
        match self.scale {
            NoiseScale::Macro => Ok(torus.cell_volume().recip().sqrt()),
            NoiseScale::Micro { eps } => {
                if torus.scale_exp() != 0 {
                    return Err(Error::config(
                        "noise.scale",
                        "micro noise lives on the unscaled lattice",
                    ));
                }
                if !(eps > 0.0 && eps <= 1.0) {
                    return Err(Error::config("noise.scale.eps", "eps must lie in (0, 1]"));
                }
                Ok(eps / torus.basis().cell_volume().sqrt())
            }
        }
    }

    pub fn moments(&self, torus: &BravaisTorus) -> Result<IidMoments> {
        Ok(IidMoments {
            law: self.law,
            sigma: self.std_dev(torus)?,
            mean: self.mean,
        })
    }
}

/// Standardized sample at site `k`: words `[4k, 4k+4)` of the ChaCha8
/// stream keyed by `seed`.
pub fn standard_sample_at(law: Law, seed: u64, k: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_word_pos(4 * k as u128);
    let w0 = rng.next_u64();
    let w1 = rng.next_u64();
    law.sample(w0, w1)
}

/// Standardized samples for sites `0..n`; equal to [`standard_sample_at`]
/// site by site.
pub fn standard_samples(law: Law, seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let w0 = rng.next_u64();
            let w1 = rng.next_u64();
            law.sample(w0, w1)
        })
        .collect()
}

/// One realization of the i.i.d. noise described by `spec`.
pub fn sample_noise(spec: &NoiseSpec, torus: &Torus) -> Result<Field> {
    let s = spec.std_dev(torus)?;
    let values = standard_samples(spec.law, spec.seed, torus.len())
        .into_iter()
        .map(|z| s * z + spec.mean)
        .collect();
    Field::new(torus.clone(), values)
}

/// Joint moments `E[Y^E]` of a family indexed by labels.
pub trait MomentOracle {
    fn moment(&self, labels: &[usize]) -> Result<f64>;
}

/// Moments of i.i.d. sites `Y = σZ + m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IidMoments {
    pub law: Law,
    pub sigma: f64,
    pub mean: f64,
}

impl IidMoments {
    pub fn standard(law: Law) -> Self {
        Self {
            law,
            sigma: 1.0,
            mean: 0.0,
        }
    }

    /// `E[Y^n]` by binomial expansion.
    pub fn single(&self, n: u32) -> f64 {
        let mut binom = 1.0;
        let mut s = 0.0;
        for k in 0..=n {
            s += binom
                * self.sigma.powi(k as i32)
                * self.law.moment(k)
                * self.mean.powi((n - k) as i32);
            binom = binom * (n - k) as f64 / (k + 1) as f64;
        }
        s
    }
}

impl MomentOracle for IidMoments {
    fn moment(&self, labels: &[usize]) -> Result<f64> {
        let mut counts: HashMap<usize, u32> = HashMap::new();
        for &l in labels {
            *counts.entry(l).or_default() += 1;
        }
        Ok(counts.values().map(|&n| self.single(n)).product())
    }
}

/// Explicit moment table keyed by sorted label multisets.
#[derive(Debug, Clone, Default)]
pub struct MomentTable(pub HashMap<Vec<usize>, f64>);

impl MomentOracle for MomentTable {
    fn moment(&self, labels: &[usize]) -> Result<f64> {
        let mut key = labels.to_vec();
        key.sort_unstable();
        self.0.get(&key).copied().ok_or_else(|| {
            Error::config("moments", format!("missing moment for labels {key:?}"))
        })
    }
}

/// Values the Wick recursion can run on: reals, or polynomials in tests.
pub trait WickValue: Clone {
    fn one() -> Self;
    fn mul(&self, other: &Self) -> Self;
    /// `self − c·other`
    fn sub_scaled(&self, c: f64, other: &Self) -> Self;
}

impl WickValue for f64 {
    fn one() -> Self {
        1.0
    }
    fn mul(&self, other: &Self) -> Self {
        self * other
    }
    fn sub_scaled(&self, c: f64, other: &Self) -> Self {
        self - c * other
    }
}

pub const MAX_WICK_ORDER: usize = 6;

/// `Y^{⋄I} = Y^I − Σ_{∅≠E⊂I} E[Y^E] Y^{⋄I∖E}` for the family
/// `(values[i])` carrying labels `labels[i]`; entries with equal labels are
/// the same random variable.
pub fn wick_product<T: WickValue>(
    values: &[T],
    labels: &[usize],
    moments: &dyn MomentOracle,
) -> Result<T> {
    let n = values.len();
    if labels.len() != n {
        return Err(Error::Shape(format!("{n} values but {} labels", labels.len())));
    }
    if n > MAX_WICK_ORDER {
        return Err(Error::Argument(format!(
            "Wick order {n} exceeds {MAX_WICK_ORDER}"
        )));
    }
    let mut memo: HashMap<Vec<usize>, T> = HashMap::new();
    let mut moment_memo: HashMap<Vec<usize>, f64> = HashMap::new();
    wick_rec((1u32 << n) - 1, values, labels, moments, &mut memo, &mut moment_memo)
}

fn key_of(mask: u32, labels: &[usize]) -> Vec<usize> {
    let mut k: Vec<usize> = (0..labels.len())
        .filter(|i| mask >> i & 1 == 1)
        .map(|i| labels[i])
        .collect();
    k.sort_unstable();
    k
}

fn wick_rec<T: WickValue>(
    mask: u32,
    values: &[T],
    labels: &[usize],
    moments: &dyn MomentOracle,
    memo: &mut HashMap<Vec<usize>, T>,
    moment_memo: &mut HashMap<Vec<usize>, f64>,
) -> Result<T> {
    let key = key_of(mask, labels);
    if let Some(v) = memo.get(&key) {
        return Ok(v.clone());
    }
    let mut out = T::one();
    for i in 0..values.len() {
        if mask >> i & 1 == 1 {
            out = out.mul(&values[i]);
        }
    }
    // nonempty sub-masks E of mask
    let mut e = mask;
    while e != 0 {
        let ek = key_of(e, labels);
        let m = match moment_memo.get(&ek) {
            Some(m) => *m,
            None => {
                let m = moments.moment(&ek)?;
                moment_memo.insert(ek, m);
                m
            }
        };
        if m != 0.0 {
            let rest = wick_rec(mask & !e, values, labels, moments, memo, moment_memo)?;
            out = out.sub_scaled(m, &rest);
        }
        e = (e - 1) & mask;
    }
    memo.insert(key, out.clone());
    Ok(out)
}

/// Kernel `f` of a multiple stochastic integral over `(𝒢^ε)^n`.
#[derive(Debug, Clone, PartialEq)]
pub enum IntegralKernel {
    /// Row-major values over all `n`-tuples of sites.
    Dense { n: usize, values: Vec<f64> },
    /// Nonzero entries only.
    Sparse {
        n: usize,
        entries: Vec<(Vec<usize>, f64)>,
    },
}

impl IntegralKernel {
    pub fn order(&self) -> usize {
        match self {
            IntegralKernel::Dense { n, .. } | IntegralKernel::Sparse { n, .. } => *n,
        }
    }
}

/// `𝓘_n f = Σ |𝒢^ε|^n f(z_1..z_n) ξ(z_1)⋄…⋄ξ(z_n)`. Wick products of
/// independent sites factor into single-site Wick powers.
pub fn multiple_integral(f: &IntegralKernel, noise: &Field, moments: &IidMoments) -> Result<f64> {
    let n = f.order();
    let len = noise.len();
    let vals = noise.values();
    if n == 0 {
        return Err(Error::Argument("integral order must be at least 1".into()));
    }
    // single-site Wick powers, computed lazily per site
    let mut powers: HashMap<usize, Vec<f64>> = HashMap::new();
    let mut power = |z: usize, k: usize| -> Result<f64> {
        if let Some(p) = powers.get(&z) {
            return Ok(p[k]);
        }
        let mut p = vec![1.0; n + 1];
        for (j, slot) in p.iter_mut().enumerate().skip(1) {
            *slot = wick_product(&vec![vals[z]; j], &vec![z; j], moments)?;
        }
        let v = p[k];
        powers.insert(z, p);
        Ok(v)
    };
    let mut term = |tuple: &[usize]| -> Result<f64> {
        let mut counts: Vec<(usize, usize)> = Vec::with_capacity(n);
        for &z in tuple {
            if z >= len {
                return Err(Error::Shape(format!("site {z} outside torus of {len} sites")));
            }
            match counts.iter_mut().find(|(s, _)| *s == z) {
                Some(c) => c.1 += 1,
                None => counts.push((z, 1)),
            }
        }
        let mut prod = 1.0;
        for (z, k) in counts {
            prod *= power(z, k)?;
        }
        Ok(prod)
    };
    let vol_n = noise.torus().cell_volume().powi(n as i32);
    let mut total = 0.0;
    match f {
        IntegralKernel::Dense { values, .. } => {
            if n > 3 {
                return Err(Error::Argument(format!(
                    "dense kernels are limited to order 3, got {n}; use a sparse kernel"
                )));
            }
            if values.len() != len.pow(n as u32) {
                return Err(Error::Shape(format!(
                    "dense kernel has {} entries, expected {}",
                    values.len(),
                    len.pow(n as u32)
                )));
            }
            let mut tuple = vec![0usize; n];
            for (flat, &v) in values.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                let mut r = flat;
                for slot in tuple.iter_mut().rev() {
                    *slot = r % len;
                    r /= len;
                }
                total += v * term(&tuple)?;
            }
        }
        IntegralKernel::Sparse { entries, .. } => {
            if n > MAX_WICK_ORDER {
                return Err(Error::Argument(format!(
                    "integral order {n} exceeds {MAX_WICK_ORDER}"
                )));
            }
            for (tuple, v) in entries {
                if tuple.len() != n {
                    return Err(Error::Shape(format!(
                        "sparse entry has {} sites, expected {n}",
                        tuple.len()
                    )));
                }
                total += v * term(tuple)?;
            }
        }
    }
    Ok(vol_n * total)
}

/// Cutoff `χ = 1 − Π_i ψ(x·a_i)` on (unscaled) frequencies, with `ψ ≡ 1`
/// on `|t| ≤ inner` and `ψ ≡ 0` on `|t| ≥ outer`. The defaults make `χ`
/// vanish on `¼Ĝ` and equal 1 outside `½Ĝ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChiProfile {
    pub inner: f64,
    pub outer: f64,
}

impl Default for ChiProfile {
    fn default() -> Self {
        Self {
            inner: 0.125,
            outer: 0.25,
        }
    }
}

impl ChiProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.inner > 0.0 && self.inner < self.outer && self.outer <= 0.5) {
            return Err(Error::config(
                "chi",
                "need 0 < inner < outer <= 1/2 in Fourier-cell coordinates",
            ));
        }
        Ok(())
    }

    fn psi(&self, t: f64) -> f64 {
        smooth_step((self.outer - t.abs()) / (self.outer - self.inner))
    }

    pub fn eval(&self, torus: &BravaisTorus, x: &[f64]) -> f64 {
        let basis = torus.basis();
        let p: f64 = (0..basis.dim())
            .map(|i| self.psi(dot(x, basis.vector(i))))
            .product();
        1.0 - p
    }

    pub fn table(&self, torus: &BravaisTorus) -> Vec<f64> {
        torus
            .frequencies()
            .chunks(torus.dim())
            .map(|x| self.eval(torus, x))
            .collect()
    }
}

/// `χ/l^ε_μ` on the dual grid, zero where `χ = 0`.
fn resolvent_table(mu: &JumpMeasure, torus: &BravaisTorus, chi: &ChiProfile) -> Result<Vec<f64>> {
    chi.validate()?;
    let l = mu.multiplier(torus)?;
    let c = chi.table(torus);
    let d = torus.dim();
    let freqs = torus.frequencies();
    c.iter()
        .zip(&l)
        .enumerate()
        .map(|(k, (&c, &l))| {
            if c == 0.0 {
                Ok(0.0)
            } else if l <= 0.0 {
                Err(Error::Numeric(format!(
                    "cutoff is nonzero where the symbol vanishes, at frequency {:?}",
                    &freqs[k * d..(k + 1) * d]
                )))
            } else {
                Ok(c / l)
            }
        })
        .collect()
}

/// `c^ε_μ = ∫ χ/l^ε_μ` by the rectangle rule over the dual grid.
pub fn renorm_constant(mu: &JumpMeasure, torus: &BravaisTorus, chi: &ChiProfile) -> Result<f64> {
    let r = resolvent_table(mu, torus, chi)?;
    Ok(torus.dual_cell_measure() * r.iter().sum::<f64>())
}

/// A noise realization with `X = (χ/l)(D)ξ`, `c^ε_μ` and `X ⊙ ξ − c^ε_μ`.
#[derive(Debug, Clone)]
pub struct EnhancedNoise {
    pub xi: Field,
    pub x: Field,
    pub c_eps: f64,
    pub resonant_renormalized: Field,
    pub chi: ChiProfile,
}

pub fn build_enhanced(xi: &Field, mu: &JumpMeasure, chi: &ChiProfile) -> Result<EnhancedNoise> {
    let torus = xi.torus();
    let r = resolvent_table(mu, torus, chi)?;
    let c_eps = torus.dual_cell_measure() * r.iter().sum::<f64>();
    let x = apply_table(xi, &r)?;
    let pou = PartitionOfUnity::for_torus(torus)?;
    let res = pou.resonant(&x, xi)?;
    Ok(EnhancedNoise {
        xi: xi.clone(),
        x,
        c_eps,
        resonant_renormalized: res.map(|v| v - c_eps),
        chi: *chi,
    })
}

/// Parameters of the regularity statistic `M_ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularityParams {
    pub alpha: f64,
    pub kappa: f64,
    pub sigma: f64,
    #[serde(default = "default_p")]
    pub p: Exponent,
}

fn default_p() -> Exponent {
    Exponent::Infinity
}

impl Default for RegularityParams {
    fn default() -> Self {
        Self {
            alpha: 0.65,
            kappa: 0.06,
            sigma: 0.5,
            p: Exponent::Infinity,
        }
    }
}

impl RegularityParams {
    /// Admissible interval for `α` given the moment order `p_ξ`.
    pub fn alpha_interval(&self, p_xi: f64) -> (f64, f64) {
        let r = self.kappa / self.sigma;
        (2.0 / 3.0 - 2.0 / 3.0 * r, 1.0 - 2.0 / p_xi - 2.0 * r)
    }

    pub fn validate(&self, p_xi: f64) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::config("regularity.sigma", "sigma must lie in (0, 1)"));
        }
        let r = self.kappa / self.sigma;
        if !(r > 2.0 / p_xi && r < 1.0) {
            return Err(Error::config(
                "regularity.kappa",
                format!("kappa/sigma = {r} must lie in (2/p_xi, 1) = ({}, 1)", 2.0 / p_xi),
            ));
        }
        let (lo, hi) = self.alpha_interval(p_xi);
        if !(self.alpha > lo && self.alpha < hi) {
            return Err(Error::config(
                "regularity.alpha",
                format!("alpha = {} outside ({lo}, {hi})", self.alpha),
            ));
        }
        Ok(())
    }

    /// Regularity exponents of `ξ`, `X` and `X • ξ`.
    pub fn exponents(&self) -> [f64; 3] {
        let r = 2.0 * self.kappa / self.sigma;
        [self.alpha + r - 2.0, self.alpha + r, 2.0 * self.alpha + 2.0 * r - 2.0]
    }
}

/// The three norms entering `M_ε`; `M_ε` is their maximum.
pub fn regularity_terms(e: &EnhancedNoise, params: &RegularityParams) -> Result<[f64; 3]> {
    let [a0, a1, a2] = params.exponents();
    let w = Weight::Polynomial {
        kappa: params.kappa,
    };
    let pou = PartitionOfUnity::for_torus(e.xi.torus())?;
    Ok([
        besov_norm_with(&pou, &e.xi, &BesovParams::holder(a0, params.p, w))?,
        besov_norm_with(&pou, &e.x, &BesovParams::holder(a1, params.p, w))?,
        besov_norm_with(
            &pou,
            &e.resonant_renormalized,
            &BesovParams::holder(a2, params.p, w.powi(2)),
        )?,
    ])
}

pub fn regularity_statistic(e: &EnhancedNoise, params: &RegularityParams) -> Result<f64> {
    Ok(regularity_terms(e, params)?.into_iter().fold(0.0, f64::max))
}

/// Mean and standard error of a sample.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Checks that two fields share a torus; re-exported for drivers.
pub fn same_torus(a: &Field, b: &Field) -> Result<()> {
    check_same(a.torus(), b.torus())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::BravaisBasis;
    use std::ops::Range;

    fn torus(n: u32, m: usize) -> Torus {
        BravaisTorus::shared(BravaisBasis::cubic(2).unwrap(), n, m).unwrap()
    }

    /// Dense polynomial in one variable, lowest degree first.
    #[derive(Clone, Debug, PartialEq)]
    struct Poly(Vec<f64>);

    impl WickValue for Poly {
        fn one() -> Self {
            Poly(vec![1.0])
        }
        fn mul(&self, o: &Self) -> Self {
            let mut c = vec![0.0; self.0.len() + o.0.len() - 1];
            for (i, a) in self.0.iter().enumerate() {
                for (j, b) in o.0.iter().enumerate() {
                    c[i + j] += a * b;
                }
            }
            Poly(c)
        }
        fn sub_scaled(&self, k: f64, o: &Self) -> Self {
            let n = self.0.len().max(o.0.len());
            let mut c = vec![0.0; n];
            for (i, v) in c.iter_mut().enumerate() {
                *v = self.0.get(i).copied().unwrap_or(0.0) - k * o.0.get(i).copied().unwrap_or(0.0);
            }
            Poly(c)
        }
    }

    /// Probabilists' Hermite coefficients from `He_{n+1} = x He_n − n He_{n−1}`.
    fn hermite(n: usize) -> Vec<f64> {
        let mut prev = vec![1.0];
        let mut cur = vec![0.0, 1.0];
        if n == 0 {
            return prev;
        }
        for k in 1..n {
            let mut next = vec![0.0; k + 2];
            for (i, c) in cur.iter().enumerate() {
                next[i + 1] += c;
            }
            for (i, c) in prev.iter().enumerate() {
                next[i] -= k as f64 * c;
            }
            prev = cur;
            cur = next;
        }
        cur
    }

    #[test]
    fn wick_powers_of_a_gaussian_are_hermite() {
        let m = IidMoments::standard(Law::Gaussian);
        let x = Poly(vec![0.0, 1.0]);
        for n in 1..=6 {
            let w = wick_product(&vec![x.clone(); n], &vec![0; n], &m).unwrap();
            let h = hermite(n);
            for i in 0..w.0.len().max(h.len()) {
                let a = w.0.get(i).copied().unwrap_or(0.0);
                let b = h.get(i).copied().unwrap_or(0.0);
                assert!((a - b).abs() < 1e-12, "n={n}: {:?} vs {h:?}", w.0);
            }
        }
        let three = wick_product(&[2.0; 3], &[0; 3], &m).unwrap();
        assert!((three - (8.0 - 6.0)).abs() < 1e-12);
    }

    #[test]
    fn wick_basics() {
        let m = IidMoments {
            law: Law::Rademacher,
            sigma: 2.0,
            mean: 0.5,
        };
        let one = wick_product(&[1.7], &[3], &m).unwrap();
        assert!((one - (1.7 - 0.5)).abs() < 1e-15);
        let c = IidMoments::standard(Law::CenteredUniform);
        let two = wick_product(&[0.3, -1.1], &[0, 1], &c).unwrap();
        assert!((two - 0.3 * -1.1).abs() < 1e-15);
        let ab = wick_product(&[0.3, -1.1, 0.3], &[0, 1, 0], &c).unwrap();
        let ba = wick_product(&[-1.1, 0.3, 0.3], &[1, 0, 0], &c).unwrap();
        assert!((ab - ba).abs() < 1e-14);
        assert!(matches!(
            wick_product(&[1.0; 7], &[0; 7], &c),
            Err(Error::Argument(_))
        ));
        let table = MomentTable(HashMap::from([(vec![0], 0.0)]));
        assert!(matches!(
            wick_product(&[1.0, 1.0], &[0, 0], &table),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn law_moments() {
        assert_eq!(Law::Gaussian.moment(4), 3.0);
        assert_eq!(Law::Gaussian.moment(6), 15.0);
        assert_eq!(Law::Gaussian.moment(3), 0.0);
        assert!((Law::CenteredUniform.moment(2) - 1.0).abs() < 1e-15);
        assert!((Law::CenteredUniform.moment(4) - 9.0 / 5.0).abs() < 1e-15);
        let m = IidMoments {
            law: Law::Gaussian,
            sigma: 2.0,
            mean: 1.0,
        };
        // E[(2Z+1)^2] = 5, E[(2Z+1)^3] = 1 + 3*4 = 13
        assert!((m.single(2) - 5.0).abs() < 1e-12);
        assert!((m.single(3) - 13.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_reproducible_and_counter_based() {
        let t = torus(2, 16);
        for law in [Law::Gaussian, Law::Rademacher, Law::CenteredUniform] {
            let spec = NoiseSpec::macro_noise(law, 42);
            let a = sample_noise(&spec, &t).unwrap();
            let b = sample_noise(&spec, &t).unwrap();
            assert_eq!(a.values(), b.values());
            let s = spec.std_dev(&t).unwrap();
            for k in [0, 17, 255] {
                assert_eq!(a.values()[k], s * standard_sample_at(law, 42, k));
            }
        }
        let r = sample_noise(&NoiseSpec::macro_noise(Law::Rademacher, 1), &t).unwrap();
        let s = t.cell_volume().powf(-0.5);
        assert!(r.values().iter().all(|v| (v.abs() - s).abs() < 1e-15));
    }

    #[test]
    fn gaussian_variance_band() {
        let t = torus(3, 128);
        let xi = sample_noise(&NoiseSpec::macro_noise(Law::Gaussian, 7), &t).unwrap();
        let n = t.len() as f64;
        let target = 1.0 / t.cell_volume();
        let mean = xi.mean();
        let var = xi.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // sd of the sample variance is target * sqrt(2/(n-1))
        assert!((var - target).abs() < 4.0 * target * (2.0 / (n - 1.0)).sqrt());
        assert!(mean.abs() < 4.0 * (target / n).sqrt());
    }

    #[test]
    fn micro_macro_noise_transform() {
        let eps = 0.25;
        let macro_t = torus(2, 16);
        let micro_t = torus(0, 16);
        let shift = -0.3;
        let xi = sample_noise(&NoiseSpec::macro_noise(Law::Gaussian, 9), &macro_t).unwrap();
        let eta = sample_noise(&NoiseSpec::micro_noise(Law::Gaussian, 9, eps, shift), &micro_t).unwrap();
        for (x, e) in xi.values().iter().zip(eta.values()) {
            assert!((x - (e - shift) / (eps * eps)).abs() < 1e-12);
        }
        assert!(sample_noise(&NoiseSpec::micro_noise(Law::Gaussian, 9, eps, 0.0), &macro_t).is_err());
    }

    fn ranges(len: usize, n: usize) -> Vec<Vec<usize>> {
        let r: Range<usize> = 0..len.pow(n as u32);
        r.map(|mut f| {
            let mut t = vec![0; n];
            for s in t.iter_mut().rev() {
                *s = f % len;
                f /= len;
            }
            t
        })
        .collect()
    }

    #[test]
    fn multiple_integral_small_cases() {
        let t = BravaisTorus::shared(BravaisBasis::cubic(1).unwrap(), 1, 4).unwrap();
        let spec = NoiseSpec::macro_noise(Law::Gaussian, 3);
        let xi = sample_noise(&spec, &t).unwrap();
        let m = spec.moments(&t).unwrap();
        let vol = t.cell_volume();
        // n = 1 is a weighted sum
        let f1: Vec<f64> = (0..4).map(|k| k as f64 - 1.5).collect();
        let i1 = multiple_integral(&IntegralKernel::Dense { n: 1, values: f1.clone() }, &xi, &m).unwrap();
        let expect: f64 = f1.iter().zip(xi.values()).map(|(a, b)| vol * a * b).sum();
        assert!((i1 - expect).abs() < 1e-12);
        // off-diagonal pair
        let mut f2 = vec![0.0; 16];
        f2[1 * 4 + 3] = 2.0;
        let i2 = multiple_integral(&IntegralKernel::Dense { n: 2, values: f2 }, &xi, &m).unwrap();
        assert!((i2 - vol * vol * 2.0 * xi.values()[1] * xi.values()[3]).abs() < 1e-12);
        let sparse = IntegralKernel::Sparse { n: 2, entries: vec![(vec![1, 3], 2.0)] };
        assert!((multiple_integral(&sparse, &xi, &m).unwrap() - i2).abs() < 1e-15);
        let zero = IntegralKernel::Dense { n: 3, values: vec![0.0; 64] };
        assert_eq!(multiple_integral(&zero, &xi, &m).unwrap(), 0.0);
        let big = IntegralKernel::Dense { n: 4, values: vec![0.0; 256] };
        assert!(matches!(multiple_integral(&big, &xi, &m), Err(Error::Argument(_))));
    }

    #[test]
    fn second_chaos_variance_by_enumeration() {
        // all 2^4 Rademacher patterns on a 4-site torus
        let t = BravaisTorus::shared(BravaisBasis::cubic(1).unwrap(), 1, 4).unwrap();
        let vol = t.cell_volume();
        let s = vol.powf(-0.5);
        let m = IidMoments { law: Law::Rademacher, sigma: s, mean: 0.0 };
        let f: Vec<f64> = (0..16).map(|k| ((k * 7 % 5) as f64 - 2.0) * 0.3).collect();
        let kernel = IntegralKernel::Dense { n: 2, values: f.clone() };
        let mut mean = 0.0;
        let mut second = 0.0;
        for pattern in 0..16u32 {
            let vals: Vec<f64> = (0..4).map(|k| if pattern >> k & 1 == 1 { s } else { -s }).collect();
            let xi = Field::new(t.clone(), vals).unwrap();
            let v = multiple_integral(&kernel, &xi, &m).unwrap();
            mean += v / 16.0;
            second += v * v / 16.0;
        }
        // Rademacher: ξ(z)^{⋄2} = ξ² − 1/vol = 0, so only off-diagonal terms survive
        let mut sym = 0.0;
        for tuple in ranges(4, 2) {
            let (a, b) = (tuple[0], tuple[1]);
            if a != b {
                let fs = 0.5 * (f[a * 4 + b] + f[b * 4 + a]);
                sym += vol * vol * fs * fs;
            }
        }
        assert!(mean.abs() < 1e-12);
        assert!((second - 2.0 * sym).abs() < 1e-12, "{second} vs {}", 2.0 * sym);
    }

    #[test]
    fn chi_profile_and_renorm_constant() {
        let t = torus(3, 64);
        let chi = ChiProfile::default();
        let mu = JumpMeasure::simple_random_walk(BravaisBasis::cubic(2).unwrap());
        assert_eq!(chi.eval(&t, &[0.1, -0.12]), 0.0);
        assert_eq!(chi.eval(&t, &[0.26, 0.0]), 1.0);
        let c = renorm_constant(&mu, &t, &chi).unwrap();
        assert!(c > 0.0);
        let c2 = renorm_constant(&mu.scaled(2.0).unwrap(), &t, &chi).unwrap();
        assert!((c2 - c / 2.0).abs() < 1e-12 * c);
        let bad = ChiProfile { inner: 0.0, outer: 0.25 };
        assert!(renorm_constant(&mu, &t, &bad).is_err());
    }

    #[test]
    fn enhanced_noise_identities() {
        let t = torus(3, 32);
        let mu = JumpMeasure::simple_random_walk(BravaisBasis::cubic(2).unwrap());
        let chi = ChiProfile::default();
        let xi = sample_noise(&NoiseSpec::macro_noise(Law::Gaussian, 5), &t).unwrap();
        let e = build_enhanced(&xi, &mu, &chi).unwrap();
        // -L X = χ(D) ξ
        let lx = crate::diffusion::generator_apply(&e.x, &mu).unwrap().scaled(-1.0);
        let chi_xi = apply_table(&xi, &chi.table(&t)).unwrap();
        assert!(lx.sub(&chi_xi).unwrap().sup_norm() < 1e-9 * chi_xi.sup_norm());
        let z = build_enhanced(&Field::zeros(t.clone()), &mu, &chi).unwrap();
        assert_eq!(z.x.sup_norm(), 0.0);
        assert!(z.resonant_renormalized.values().iter().all(|v| (v + z.c_eps).abs() < 1e-15));
        // single mode outside the dead zone
        let k = t.flat_index(&[10, 3]);
        let mut x = [0.0; 2];
        t.frequency(k, &mut x);
        let wave = Field::from_fn(t.clone(), |p| (2.0 * PI * dot(p, &x)).cos());
        let ew = build_enhanced(&wave, &mu, &chi).unwrap();
        let factor = chi.eval(&t, &x) / mu.symbol(t.eps(), &x);
        assert!(factor > 0.0);
        for (a, b) in ew.x.values().iter().zip(wave.values()) {
            assert!((a - factor * b).abs() < 1e-12);
        }
    }

    #[test]
    fn regularity_params() {
        let p = RegularityParams::default();
        assert!(p.validate(40.0).is_ok());
        let [a, b, c] = p.exponents();
        assert!((a + 1.11).abs() < 1e-12 && (b - 0.89).abs() < 1e-12 && (c + 0.22).abs() < 1e-12);
        assert!(RegularityParams { alpha: 0.9, ..p }.validate(40.0).is_err());
        let t = torus(2, 16);
        let mu = JumpMeasure::simple_random_walk(BravaisBasis::cubic(2).unwrap());
        let z = build_enhanced(&Field::zeros(t.clone()), &mu, &ChiProfile::default()).unwrap();
        let terms = regularity_terms(&z, &p).unwrap();
        assert_eq!(terms[0], 0.0);
        assert_eq!(terms[1], 0.0);
        assert!(terms[2] > 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn wick_is_symmetric(vals in proptest::collection::vec(-2.0f64..2.0, 1..5), seed in 0usize..100) {
                let n = vals.len();
                let labels: Vec<usize> = (0..n).map(|i| (i * 7 + seed) % 3).collect();
                // equal labels must carry equal values
                let v: Vec<f64> = labels.iter().map(|&l| vals[l % n]).collect();
                let m = IidMoments::standard(Law::CenteredUniform);
                let a = wick_product(&v, &labels, &m).unwrap();
                let mut perm: Vec<usize> = (0..n).collect();
                perm.rotate_left(seed % n);
                let pv: Vec<f64> = perm.iter().map(|&i| v[i]).collect();
                let pl: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
                let b = wick_product(&pv, &pl, &m).unwrap();
                prop_assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
            }

            #[test]
            fn wick_power_has_zero_mean(n in 1usize..6, law_id in 0usize..3) {
                let law = [Law::Gaussian, Law::Rademacher, Law::CenteredUniform][law_id];
                let m = IidMoments::standard(law);
                // E[Y^{⋄n}] = 0 via the polynomial representation
                let p = wick_product(&vec![Poly(vec![0.0, 1.0]); n], &vec![0; n], &m).unwrap();
                let e: f64 = p.0.iter().enumerate().map(|(k, c)| c * law.moment(k as u32)).sum();
                prop_assert!(e.abs() < 1e-10);
            }
        }
    }
}
