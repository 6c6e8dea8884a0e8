//! Lattice Fourier transform on the torus, Fourier multipliers, lattice
//! convolution and the band-limited extension operator.
//!
//! Normalization follows the lattice transform
//! `𝓕f(x) = |𝒢^ε| Σ_k f(k) e^{-2πi k·x}` with the inverse realized as the
//! rectangle rule over the dual grid. With this choice Parseval's identity
//! `|𝒢^ε| Σ|f|² = Σ|𝓕f|² · (dual cell measure)` holds exactly.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{BravaisBasis, BravaisTorus, Torus, MAX_DIM};

/// Real samples on the torus, row-major over the index grid.
#[derive(Debug, Clone)]
pub struct Field {
    torus: Torus,
    values: Vec<f64>,
}

/// Complex samples on the dual grid in FFT order.
#[derive(Debug, Clone)]
pub struct SpectralField {
    torus: Torus,
    values: Vec<Complex64>,
}

pub(crate) fn same_torus(a: &Torus, b: &Torus) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

pub(crate) fn check_same(a: &Torus, b: &Torus) -> Result<()> {
    if same_torus(a, b) {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "torus mismatch: (d={}, N={}, M={}) vs (d={}, N={}, M={})",
            a.dim(),
            a.scale_exp(),
            a.side(),
            b.dim(),
            b.scale_exp(),
            b.side()
        )))
    }
}

impl Field {
    pub fn new(torus: Torus, values: Vec<f64>) -> Result<Self> {
        if values.len() != torus.len() {
            return Err(Error::Shape(format!(
                "field has {} values, torus has {} sites",
                values.len(),
                torus.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value at site {i}")));
        }
        Ok(Self { torus, values })
    }

    /// Builds a field without the finiteness scan; used on solver hot paths
    /// where the caller checks finiteness itself.
    pub(crate) fn from_raw(torus: Torus, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), torus.len());
        Self { torus, values }
    }

    pub fn zeros(torus: Torus) -> Self {
        let n = torus.len();
        Self::from_raw(torus, vec![0.0; n])
    }

    pub fn constant(torus: Torus, c: f64) -> Self {
        let n = torus.len();
        Self::from_raw(torus, vec![c; n])
    }

    /// The discrete Dirac mass `|𝒢^ε|^{-1} 1_{k=0}`.
    pub fn delta(torus: Torus) -> Self {
        let mut f = Self::zeros(torus);
        let o = f.torus.origin_index();
        f.values[o] = 1.0 / f.torus.cell_volume();
        f
    }

    /// Samples `g` at the physical position of every site.
    pub fn from_fn(torus: Torus, g: impl Fn(&[f64]) -> f64) -> Self {
        let d = torus.dim();
        let values = torus.positions().chunks(d).map(g).collect();
        Self::from_raw(torus, values)
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, g: impl Fn(f64) -> f64) -> Field {
        Field::from_raw(self.torus.clone(), self.values.iter().map(|&v| g(v)).collect())
    }

    pub fn scaled(&self, c: f64) -> Field {
        self.map(|v| c * v)
    }

    pub fn zip_with(&self, other: &Field, g: impl Fn(f64, f64) -> f64) -> Result<Field> {
        check_same(&self.torus, &other.torus)?;
        Ok(Field::from_raw(
            self.torus.clone(),
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| g(a, b))
                .collect(),
        ))
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.zip_with(other, |a, b| a + b)
    }
    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.zip_with(other, |a, b| a - b)
    }
    /// Pointwise product.
    pub fn mul(&self, other: &Field) -> Result<Field> {
        self.zip_with(other, |a, b| a * b)
    }

    pub(crate) fn add_assign(&mut self, other: &Field) {
        debug_assert!(same_torus(&self.torus, &other.torus));
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    /// Accumulates `a * b` pointwise.
    pub(crate) fn add_product(&mut self, a: &Field, b: &Field) {
        for ((o, x), y) in self.values.iter_mut().zip(&a.values).zip(&b.values) {
            *o += x * y;
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `(|𝒢^ε| Σ |f|^p)^{1/p}`.
    pub fn lp_norm(&self, p: f64) -> f64 {
        if p.is_infinite() {
            return self.sup_norm();
        }
        let s: f64 = self.values.iter().map(|v| v.abs().powf(p)).sum();
        (self.torus.cell_volume() * s).powf(1.0 / p)
    }

    /// `|𝒢^ε| Σ f`.
    pub fn integral(&self) -> f64 {
        self.torus.cell_volume() * self.values.iter().sum::<f64>()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

impl SpectralField {
    pub fn new(torus: Torus, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != torus.len() {
            return Err(Error::Shape(format!(
                "spectral field has {} values, torus has {} points",
                values.len(),
                torus.len()
            )));
        }
        Ok(Self { torus, values })
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    /// Multiplies by a real table over the dual grid.
    pub fn scale_by(&mut self, table: &[f64]) {
        for (v, m) in self.values.iter_mut().zip(table) {
            *v *= m;
        }
    }
}

type Plan = Arc<dyn Fft<f64>>;

fn plan(len: usize, inverse: bool) -> Plan {
    static PLANS: OnceLock<Mutex<HashMap<(usize, bool), Plan>>> = OnceLock::new();
    let mut cache = PLANS
        .get_or_init(|| Mutex::new(HashMap::new()))
        .lock()
        .expect("fft plan cache poisoned");
    cache
        .entry((len, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(len)
            } else {
                planner.plan_fft_forward(len)
            }
        })
        .clone()
}

/// Unnormalized d-dimensional FFT over a row-major cube of side `m`.
fn fft_nd(buf: &mut [Complex64], dim: usize, m: usize, inverse: bool) {
    let fft = plan(m, inverse);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    // last axis is contiguous
    fft.process_with_scratch(buf, &mut scratch);
    let mut line = vec![Complex64::default(); m];
    for axis in 0..dim.saturating_sub(1) {
        let stride = m.pow((dim - 1 - axis) as u32);
        let block = stride * m;
        for base in (0..buf.len()).step_by(block) {
            for off in 0..stride {
                let start = base + off;
                for (i, l) in line.iter_mut().enumerate() {
                    *l = buf[start + i * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (i, l) in line.iter().enumerate() {
                    buf[start + i * stride] = *l;
                }
            }
        }
    }
}

/// `(-1)^{Σ k_i}` per dual-grid index; accounts for the centered site offset.
fn parity(torus: &BravaisTorus, idx: usize) -> f64 {
    let mut multi = [0usize; MAX_DIM];
    torus.multi_index(idx, &mut multi);
    if multi[..torus.dim()].iter().sum::<usize>() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Lattice Fourier transform onto the dual grid.
pub fn forward(f: &Field) -> SpectralField {
    let t = &f.torus;
    let mut buf: Vec<Complex64> = f.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_nd(&mut buf, t.dim(), t.side(), false);
    let vol = t.cell_volume();
    for (i, v) in buf.iter_mut().enumerate() {
        *v *= vol * parity(t, i);
    }
    SpectralField {
        torus: t.clone(),
        values: buf,
    }
}

/// Inverse lattice transform returning complex site values.
pub fn inverse_complex(g: &SpectralField) -> Vec<Complex64> {
    let t = &g.torus;
    let w = t.dual_cell_measure();
    let mut buf: Vec<Complex64> = g
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| v * (w * parity(t, i)))
        .collect();
    fft_nd(&mut buf, t.dim(), t.side(), true);
    buf
}

/// Inverse lattice transform; the imaginary part is dropped.
pub fn inverse(g: &SpectralField) -> Field {
    let values = inverse_complex(g).into_iter().map(|c| c.re).collect();
    Field::from_raw(g.torus.clone(), values)
}

/// Samples a real multiplier on the dual grid in its Hermitian-symmetric
/// form: `(m(x_k) + m(x_{-k}))/2`. For even `m` this only changes the
/// Nyquist planes, where `x_{-k}` is an `ℛ^ε`-translate of `-x_k`.
pub fn multiplier_table(torus: &BravaisTorus, m: impl Fn(&[f64]) -> f64) -> Result<Vec<f64>> {
    let d = torus.dim();
    let freqs = torus.frequencies();
    let raw: Vec<f64> = freqs.chunks(d).map(&m).collect();
    if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "multiplier is {} at frequency {:?}",
            raw[i],
            &freqs[i * d..(i + 1) * d]
        )));
    }
    Ok(symmetrize(torus, &raw))
}

fn mirror_index(torus: &BravaisTorus, idx: usize) -> usize {
    let mut multi = [0usize; MAX_DIM];
    torus.multi_index(idx, &mut multi);
    let m = torus.side();
    for k in multi[..torus.dim()].iter_mut() {
        *k = (m - *k) % m;
    }
    torus.flat_index(&multi[..torus.dim()])
}

fn symmetrize(torus: &BravaisTorus, raw: &[f64]) -> Vec<f64> {
    (0..raw.len())
        .map(|i| {
            let j = mirror_index(torus, i);
            if i == j {
                raw[i]
            } else {
                0.5 * (raw[i] + raw[j])
            }
        })
        .collect()
}

/// Applies a precomputed real multiplier table (FFT order).
pub fn apply_table(f: &Field, table: &[f64]) -> Result<Field> {
    if table.len() != f.len() {
        return Err(Error::Shape(format!(
            "multiplier table has {} entries, field has {}",
            table.len(),
            f.len()
        )));
    }
    let mut g = forward(f);
    g.scale_by(table);
    let out = inverse_complex(&g);
    let scale = out.iter().fold(0.0f64, |m, c| m.max(c.re.abs()));
    let residue = out.iter().fold(0.0f64, |m, c| m.max(c.im.abs()));
    if residue > 1e-10 * scale.max(f64::MIN_POSITIVE) && residue > 1e-300 {
        return Err(Error::Numeric(format!(
            "imaginary residue {residue:e} after multiplier (scale {scale:e}); multiplier is not even"
        )));
    }
    Ok(Field::from_raw(
        f.torus.clone(),
        out.into_iter().map(|c| c.re).collect(),
    ))
}

/// `𝓕^{-1}(m · 𝓕 f)` for a real, even multiplier `m` of the frequency.
pub fn apply_multiplier(f: &Field, m: impl Fn(&[f64]) -> f64) -> Result<Field> {
    let table = multiplier_table(&f.torus, m)?;
    apply_table(f, &table)
}

/// Lattice convolution `(f ∗ g)(x) = Σ_k |𝒢^ε| f(k) g(x - k)` on the torus.
pub fn convolve(f: &Field, g: &Field) -> Result<Field> {
    check_same(&f.torus, &g.torus)?;
    let mut a = forward(f);
    let b = forward(g);
    for (x, y) in a.values.iter_mut().zip(&b.values) {
        *x *= y;
    }
    Ok(inverse(&a))
}

/// Smooth cutoff `ψ` used by [`extend`]: a product over lattice directions
/// of one-dimensional profiles in the Fourier-cell coordinates
/// `t_i = x · a_i`, each equal to 1 on `|t| ≤ 1/2 - width`, 0 on
/// `|t| ≥ 1/2 + width`, and summing to 1 over integer translates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmearProfile {
    pub width: f64,
}

impl Default for SmearProfile {
    fn default() -> Self {
        Self { width: 0.125 }
    }
}

/// `C^∞` step from 0 (at `u ≤ 0`) to 1 (at `u ≥ 1`) built from `exp(-1/u)`,
/// with `step(u) + step(1-u) = 1`.
pub fn smooth_step(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / u).exp();
        let b = (-1.0 / (1.0 - u)).exp();
        a / (a + b)
    }
}

impl SmearProfile {
    fn profile_1d(&self, t: f64) -> f64 {
        let w = self.width;
        if w <= 0.0 {
            return if t.abs() < 0.5 { 1.0 } else { 0.0 };
        }
        smooth_step((0.5 + w - t.abs()) / (2.0 * w))
    }

    /// `ψ(x)` on unscaled frequencies.
    pub fn eval(&self, basis: &BravaisBasis, x: &[f64]) -> f64 {
        (0..basis.dim())
            .map(|i| self.profile_1d(crate::lattice::dot(x, basis.vector(i))))
            .product()
    }

    /// Checks the three defining properties on the dual grid of `fine`,
    /// with `ψ^ε(x) = ψ(εx)` for the coarse scale `eps`.
    fn validate(&self, fine: &BravaisTorus, eps: f64) -> Result<()> {
        const TOL: f64 = 1e-8;
        let basis = fine.basis();
        let d = fine.dim();
        let inner = 0.5 * basis.fourier_inradius();
        let mut t = [0.0f64; MAX_DIM];
        let mut y = [0.0f64; MAX_DIM];
        for x in fine.frequencies().chunks(d) {
            let xs: Vec<f64> = x.iter().map(|v| v * eps).collect();
            for i in 0..d {
                t[i] = crate::lattice::dot(&xs, basis.vector(i));
            }
            let psi = self.eval(basis, &xs);
            // support inside one period around the cell
            if t[..d].iter().any(|v| v.abs() >= 1.0) && psi.abs() > TOL {
                return Err(Error::config(
                    "smear.width",
                    "smear support extends beyond one period",
                ));
            }
            // identically one on the inner blocks
            if crate::lattice::norm(&xs) <= inner && (psi - 1.0).abs() > TOL {
                return Err(Error::config(
                    "smear.width",
                    "smear is not identically 1 on the inner Littlewood-Paley blocks",
                ));
            }
            // partition of unity under reciprocal translates
            let mut total = 0.0;
            let shifts = 5i64.pow(d as u32);
            for s in 0..shifts {
                let mut rest = s;
                y[..d].copy_from_slice(&xs);
                for i in 0..d {
                    let n = (rest % 5) as f64 - 2.0;
                    rest /= 5;
                    for (yy, a) in y[..d].iter_mut().zip(basis.reciprocal_vector(i)) {
                        *yy += n * a;
                    }
                }
                total += self.eval(basis, &y[..d]);
            }
            if (total - 1.0).abs() > TOL {
                return Err(Error::config(
                    "smear.width",
                    format!("reciprocal translates of the smear sum to {total}, not 1"),
                ));
            }
        }
        Ok(())
    }
}

/// Band-limited extension of `f` onto the `r`-fold dyadically refined torus
/// covering the same window: the spectrum is periodically continued onto the
/// finer dual grid, multiplied by `ψ(ε ·)` and transformed back. The result
/// agrees with `f` at the coarse sites.
pub fn extend(f: &Field, smear: &SmearProfile, r: u32) -> Result<Field> {
    if r == 0 {
        return Err(Error::Argument("refinement must be at least 1".into()));
    }
    let coarse = &f.torus;
    let fine: Torus = Arc::new(coarse.refine(r)?);
    smear.validate(&fine, coarse.eps())?;
    let spec = forward(f);
    let d = fine.dim();
    let m = coarse.side() as i64;
    let eps = coarse.eps();
    let mut multi = [0usize; MAX_DIM];
    let mut cm = [0usize; MAX_DIM];
    let mut values = vec![Complex64::default(); fine.len()];
    for (idx, (v, x)) in values
        .iter_mut()
        .zip(fine.frequencies().chunks(d))
        .enumerate()
    {
        fine.multi_index(idx, &mut multi);
        for i in 0..d {
            cm[i] = fine.signed_mode(multi[i]).rem_euclid(m) as usize;
        }
        let xs: Vec<f64> = x.iter().map(|c| c * eps).collect();
        let psi = smear.eval(coarse.basis(), &xs);
        if psi != 0.0 {
            *v = spec.values[coarse.flat_index(&cm[..d])] * psi;
        }
    }
    let ext = SpectralField {
        torus: fine,
        values,
    };
    Ok(inverse(&ext))
}

/// Header line of the binary field format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub d: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: u32,
    pub basis: Vec<Vec<f64>>,
    pub kind: String,
    pub dtype: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub role: Option<String>,
}

impl FieldHeader {
    pub fn for_torus(torus: &BravaisTorus) -> Self {
        Self {
            d: torus.dim(),
            m: torus.side(),
            n: torus.scale_exp(),
            basis: torus.basis().vectors(),
            kind: "field".into(),
            dtype: "f64le".into(),
            t: None,
            eps: None,
            role: None,
        }
    }
}

/// Serializes a field: one JSON header line, then `M^d` little-endian f64.
pub fn encode_field(f: &Field, header: &FieldHeader) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec(header)?;
    out.push(b'\n');
    out.reserve(f.len() * 8);
    for v in &f.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn write_field(path: &Path, f: &Field, header: &FieldHeader) -> Result<()> {
    let bytes = encode_field(f, header)?;
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

pub fn decode_field(reader: impl Read) -> Result<(Field, FieldHeader)> {
    let mut reader = BufReader::new(reader);
    let mut line = Vec::new();
    reader.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::Argument("field header is not newline-terminated".into()));
    }
    line.pop();
    let header: FieldHeader = serde_json::from_slice(&line)?;
    if header.kind != "field" || header.dtype != "f64le" {
        return Err(Error::Argument(format!(
            "unsupported field kind/dtype {}/{}",
            header.kind, header.dtype
        )));
    }
    let basis = BravaisBasis::new(&header.basis)?;
    if basis.dim() != header.d {
        return Err(Error::Argument("header dimension disagrees with basis".into()));
    }
    let torus = BravaisTorus::shared(basis, header.n, header.m)?;
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() != torus.len() * 8 {
        return Err(Error::Shape(format!(
            "payload has {} bytes, expected {}",
            bytes.len(),
            torus.len() * 8
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((Field::new(torus, values)?, header))
}

pub fn read_field(path: &Path) -> Result<(Field, FieldHeader)> {
    decode_field(fs::File::open(path)?)
}
