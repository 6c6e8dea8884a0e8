//! Symmetric jump measures, the generator `L^ε_μ`, its symbol `l^ε_μ`,
//! the semigroup `e^{tL^ε_μ}` and exponential-integrator tables.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{dot, BravaisBasis, BravaisTorus, MAX_DIM};
use crate::spectral::{apply_table, Field};

/// One atom `κ(g)(½δ_g + ½δ_{-g})` of a jump measure; `g` is given in
/// lattice coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom {
    pub g: Vec<i64>,
    pub kappa: f64,
}

/// `μ = Σ κ(g)(½δ_g + ½δ_{-g}) − (Σ κ(g)) δ_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpMeasure {
    basis: BravaisBasis,
    atoms: Vec<Atom>,
    /// physical jump vectors
    jumps: Vec<Vec<f64>>,
}

fn det(m: &[Vec<i64>]) -> i128 {
    match m.len() {
        1 => m[0][0] as i128,
        2 => m[0][0] as i128 * m[1][1] as i128 - m[0][1] as i128 * m[1][0] as i128,
        3 => {
            let a = |i: usize, j: usize| m[i][j] as i128;
            a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1))
                - a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0))
                + a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0))
        }
        _ => unreachable!("dimension is at most 3"),
    }
}

fn gcd(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// The integer span of `vectors` is all of `ℤ^d` iff the gcd of the
/// maximal minors is 1.
fn generates_lattice(vectors: &[Vec<i64>], d: usize) -> bool {
    fn walk(vectors: &[Vec<i64>], d: usize, start: usize, pick: &mut Vec<usize>, g: &mut i128) {
        if pick.len() == d {
            let m: Vec<Vec<i64>> = pick.iter().map(|&i| vectors[i].clone()).collect();
            *g = gcd(*g, det(&m));
            return;
        }
        for i in start..vectors.len() {
            pick.push(i);
            walk(vectors, d, i + 1, pick, g);
            pick.pop();
            if *g == 1 {
                return;
            }
        }
    }
    let mut g = 0;
    walk(vectors, d, 0, &mut Vec::new(), &mut g);
    g == 1
}

impl JumpMeasure {
    pub fn new(basis: BravaisBasis, atoms: Vec<Atom>) -> Result<Self> {
        let d = basis.dim();
        if atoms.is_empty() {
            return Err(Error::config("measure.atoms", "at least one atom is required"));
        }
        for (i, a) in atoms.iter().enumerate() {
            if a.g.len() != d {
                return Err(Error::config(
                    format!("measure.atoms[{i}].g"),
                    format!("expected {d} integer coordinates, got {}", a.g.len()),
                ));
            }
            if a.g.iter().all(|&c| c == 0) {
                return Err(Error::config(
                    format!("measure.atoms[{i}].g"),
                    "jump vector must be nonzero",
                ));
            }
            if !(a.kappa.is_finite() && a.kappa > 0.0) {
                return Err(Error::config(
                    format!("measure.atoms[{i}].kappa"),
                    "rate must be positive and finite",
                ));
            }
        }
        let coords: Vec<Vec<i64>> = atoms.iter().map(|a| a.g.clone()).collect();
        if !generates_lattice(&coords, d) {
            return Err(Error::config(
                "measure.atoms",
                "jump vectors do not generate the lattice",
            ));
        }
        let jumps = coords.iter().map(|g| basis.lattice_point(g)).collect();
        Ok(Self {
            basis,
            atoms,
            jumps,
        })
    }

    /// Drops atoms whose tail-weighted rate `κ(g) e^{λ|g|^σ}` falls below
    /// `1e-14` of the total rate, then validates the remainder.
    pub fn truncated(basis: BravaisBasis, atoms: Vec<Atom>, lambda: f64, sigma: f64) -> Result<Self> {
        let total: f64 = atoms.iter().map(|a| a.kappa).sum();
        let kept = atoms
            .into_iter()
            .filter(|a| {
                let len = crate::lattice::norm(&basis.lattice_point(&a.g));
                a.kappa * (lambda * len.powf(sigma)).exp() >= 1e-14 * total
            })
            .collect();
        Self::new(basis, kept)
    }

    /// Nearest-neighbour walk on the basis directions with `κ(a_i) = 1/d`.
    pub fn simple_random_walk(basis: BravaisBasis) -> Self {
        let d = basis.dim();
        let atoms = (0..d)
            .map(|i| {
                let mut g = vec![0; d];
                g[i] = 1;
                Atom {
                    g,
                    kappa: 1.0 / d as f64,
                }
            })
            .collect();
        Self::new(basis, atoms).expect("basis directions generate the lattice")
    }

    pub fn basis(&self) -> &BravaisBasis {
        &self.basis
    }
    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }
    pub fn total_rate(&self) -> f64 {
        self.atoms.iter().map(|a| a.kappa).sum()
    }

    /// Multiplies every rate by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom {
                g: a.g.clone(),
                kappa: a.kappa * c,
            })
            .collect();
        Self::new(self.basis.clone(), atoms)
    }

    fn check_torus(&self, torus: &BravaisTorus) -> Result<()> {
        if *torus.basis() != self.basis {
            return Err(Error::Shape("measure and torus use different lattices".into()));
        }
        Ok(())
    }

    /// `l^ε_μ(x) = (2/ε²) Σ κ(g) sin²(επ x·g)`.
    pub fn symbol(&self, eps: f64, x: &[f64]) -> f64 {
        let s: f64 = self
            .atoms
            .iter()
            .zip(&self.jumps)
            .map(|(a, g)| a.kappa * (eps * PI * dot(x, g)).sin().powi(2))
            .sum();
        2.0 * s / (eps * eps)
    }

    /// `l^ε_μ` sampled on the dual grid (FFT order).
    pub fn multiplier(&self, torus: &BravaisTorus) -> Result<Vec<f64>> {
        self.check_torus(torus)?;
        let eps = torus.eps();
        Ok(torus
            .frequencies()
            .chunks(torus.dim())
            .map(|x| self.symbol(eps, x))
            .collect())
    }

    pub fn mu_norm(&self) -> MuNorm {
        let d = self.basis.dim();
        let mut a = [[0.0; MAX_DIM]; MAX_DIM];
        for (atom, g) in self.atoms.iter().zip(&self.jumps) {
            for i in 0..d {
                for j in 0..d {
                    a[i][j] += atom.kappa * g[i] * g[j];
                }
            }
        }
        MuNorm { d, a }
    }
}

/// `‖x‖²_μ = ½ x·a^μ x` with `a^μ = Σ κ(g) g gᵀ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuNorm {
    d: usize,
    a: [[f64; MAX_DIM]; MAX_DIM],
}

impl MuNorm {
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        (0..self.d).map(|i| self.a[i][..self.d].to_vec()).collect()
    }

    pub fn norm_sq(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.d {
            for j in 0..self.d {
                s += x[i] * self.a[i][j] * x[j];
            }
        }
        0.5 * s
    }

    /// Continuum symbol `(2π)² ‖x‖²_μ`.
    pub fn continuum_symbol(&self, x: &[f64]) -> f64 {
        4.0 * PI * PI * self.norm_sq(x)
    }
}

/// `e^{t L^ε_μ} f`.
pub fn semigroup_apply(f: &Field, t: f64, mu: &JumpMeasure) -> Result<Field> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::Argument(format!("semigroup time must be >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(f.clone());
    }
    let table: Vec<f64> = mu
        .multiplier(f.torus())?
        .into_iter()
        .map(|l| (-t * l).exp())
        .collect();
    apply_table(f, &table)
}

/// `L^ε_μ f(x) = ε^{-2} Σ κ(g) (½ f(x+εg) + ½ f(x−εg) − f(x))` in real space.
pub fn generator_apply(f: &Field, mu: &JumpMeasure) -> Result<Field> {
    let torus = f.torus();
    mu.check_torus(torus)?;
    let d = torus.dim();
    let m = torus.side() as i64;
    let inv = 1.0 / (torus.eps() * torus.eps());
    let vals = f.values();
    let mut out = vec![0.0; vals.len()];
    let mut multi = [0usize; MAX_DIM];
    let mut plus = [0usize; MAX_DIM];
    let mut minus = [0usize; MAX_DIM];
    for (idx, o) in out.iter_mut().enumerate() {
        torus.multi_index(idx, &mut multi);
        let mut s = 0.0;
        for atom in mu.atoms() {
            for i in 0..d {
                let k = multi[i] as i64;
                plus[i] = (k + atom.g[i]).rem_euclid(m) as usize;
                minus[i] = (k - atom.g[i]).rem_euclid(m) as usize;
            }
            let fp = vals[torus.flat_index(&plus[..d])];
            let fm = vals[torus.flat_index(&minus[..d])];
            s += atom.kappa * (0.5 * (fp + fm) - vals[idx]);
        }
        *o = inv * s;
    }
    Ok(Field::from_raw(torus.clone(), out))
}

/// `L^ε_μ f` applied spectrally as the multiplier `−l^ε_μ`.
pub fn generator_apply_spectral(f: &Field, mu: &JumpMeasure) -> Result<Field> {
    let table: Vec<f64> = mu.multiplier(f.torus())?.into_iter().map(|l| -l).collect();
    apply_table(f, &table)
}

/// Continuum generator with symbol `−(2π)²‖x‖²_μ`.
pub fn continuum_generator_apply(f: &Field, mu: &JumpMeasure) -> Result<Field> {
    mu.check_torus(f.torus())?;
    let norm = mu.mu_norm();
    let d = f.torus().dim();
    let table: Vec<f64> = f
        .torus()
        .frequencies()
        .chunks(d)
        .map(|x| -norm.continuum_symbol(x))
        .collect();
    apply_table(f, &table)
}

/// `φ₁(z) = (e^z − 1)/z`, with a four-term series for `|z| < 1e-4`.
pub fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        1.0 + z / 2.0 + z * z / 6.0 + z * z * z / 24.0
    } else {
        z.exp_m1() / z
    }
}

/// Exponential-Euler tables for a symbol `a` (the propagator is `e^{−dt·a}`).
#[derive(Debug, Clone, PartialEq)]
pub struct EtdTables {
    pub dt: f64,
    /// `e^{−dt·a}`
    pub decay: Vec<f64>,
    /// `dt · φ₁(−dt·a)`
    pub source: Vec<f64>,
}

impl EtdTables {
    pub fn from_symbol(symbol: &[f64], dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Argument(format!("time step must be > 0, got {dt}")));
        }
        let decay = symbol.iter().map(|a| (-dt * a).exp()).collect();
        let source = symbol.iter().map(|a| dt * phi1(-dt * a)).collect();
        Ok(Self { dt, decay, source })
    }
}

/// Tables for `e^{dt L^ε_μ}` and `dt·φ₁(dt L^ε_μ)`.
pub fn etd_propagators(mu: &JumpMeasure, torus: &BravaisTorus, dt: f64) -> Result<EtdTables> {
    EtdTables::from_symbol(&mu.multiplier(torus)?, dt)
}
