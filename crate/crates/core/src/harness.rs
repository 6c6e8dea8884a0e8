//! Experiment configuration, drivers and result emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calculus::{
    besov_from_block_norms, block_norms, BesovParams, Exponent, PartitionOfUnity, Weight,
};
use crate::diffusion::{semigroup_apply, Atom, JumpMeasure};
use crate::error::{Error, Result};
use crate::lattice::{BravaisBasis, BravaisTorus, Torus};
use crate::pam::{universality_gap, Nonlinearity, PamRun, RunOutcome};
use crate::spectral::{encode_field, forward, inverse, Field, FieldHeader};
use crate::stochastic::{
    build_enhanced, mean_stderr, regularity_terms, renorm_constant, sample_noise, ChiProfile, Law,
    NoiseSpec, RegularityParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    FourierSelftest,
    BesovReport,
    HeatSmoothing,
    RenormScaling,
    NoiseEnhancement,
    PamMacro,
    PamUniversality,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::FourierSelftest => "fourier-selftest",
            ExperimentKind::BesovReport => "besov-report",
            ExperimentKind::HeatSmoothing => "heat-smoothing",
            ExperimentKind::RenormScaling => "renorm-scaling",
            ExperimentKind::NoiseEnhancement => "noise-enhancement",
            ExperimentKind::PamMacro => "pam-macro",
            ExperimentKind::PamUniversality => "pam-universality",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    #[serde(default = "default_basis")]
    pub basis: Vec<Vec<f64>>,
    /// Scale exponents, `ε = 2^{-N}`.
    #[serde(rename = "N", default = "default_ns")]
    pub n: Vec<u32>,
    /// Fixed torus side; exclusive with `window`.
    #[serde(rename = "M", default)]
    pub m: Option<usize>,
    /// Fixed physical window in lattice units; `M = window / ε`.
    #[serde(default)]
    pub window: Option<f64>,
}

fn default_basis() -> Vec<Vec<f64>> {
    vec![vec![1.0, 0.0], vec![0.0, 1.0]]
}
fn default_ns() -> Vec<u32> {
    vec![2, 3, 4]
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self {
            basis: default_basis(),
            n: default_ns(),
            m: None,
            window: None,
        }
    }
}

impl LatticeConfig {
    pub fn basis(&self) -> Result<BravaisBasis> {
        BravaisBasis::new(&self.basis).map_err(|e| match e {
            Error::Config { msg, .. } => Error::config("lattice.basis", msg),
            other => other,
        })
    }

    pub fn side_for(&self, n: u32) -> Result<usize> {
        match (self.m, self.window) {
            (Some(_), Some(_)) => Err(Error::config(
                "lattice.window",
                "give either M or window, not both",
            )),
            (Some(m), None) => Ok(m),
            (None, None) => Ok(64),
            (None, Some(w)) => {
                let m = w * 2f64.powi(n as i32);
                if !(m.is_finite() && m >= 4.0 && m.fract() == 0.0) {
                    return Err(Error::config(
                        "lattice.window",
                        format!("window {w} at N = {n} gives non-integer side {m}"),
                    ));
                }
                Ok(m as usize)
            }
        }
    }

    pub fn torus(&self, n: u32) -> Result<Torus> {
        let m = self.side_for(n)?;
        BravaisTorus::shared(self.basis()?, n, m).map_err(|e| match e {
            Error::Config { msg, .. } => Error::config("lattice.M", msg),
            other => other,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MeasureConfig {
    /// Jump atoms; defaults to the simple random walk on the basis.
    #[serde(default)]
    pub atoms: Option<Vec<Atom>>,
}

impl MeasureConfig {
    pub fn build(&self, basis: &BravaisBasis) -> Result<JumpMeasure> {
        match &self.atoms {
            None => Ok(JumpMeasure::simple_random_walk(basis.clone())),
            Some(atoms) => JumpMeasure::new(basis.clone(), atoms.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default = "default_law")]
    pub law: Law,
    #[serde(default = "default_p_xi")]
    pub p_xi: f64,
}

fn default_law() -> Law {
    Law::Gaussian
}
fn default_p_xi() -> f64 {
    40.0
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            law: default_law(),
            p_xi: default_p_xi(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PamConfig {
    #[serde(rename = "T", default = "default_t")]
    pub t_end: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// When set, the step at scale `ε` is `dt_scaled · ε²` and `dt` is ignored.
    #[serde(default)]
    pub dt_scaled: Option<f64>,
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
    /// Exponent of the polynomial weight in the universality gap.
    #[serde(default = "default_gap_kappa")]
    pub gap_kappa: f64,
    #[serde(default = "default_true")]
    pub renormalized: bool,
}

fn default_t() -> f64 {
    0.25
}
fn default_dt() -> f64 {
    1.0 / 512.0
}
fn default_snapshots() -> usize {
    4
}
fn default_gap_kappa() -> f64 {
    0.5
}
fn default_true() -> bool {
    true
}

impl PamConfig {
    pub fn dt_for(&self, eps: f64) -> f64 {
        self.dt_scaled.map_or(self.dt, |s| s * eps * eps)
    }

    fn validate(&self, eps: f64) -> Result<()> {
        let path = if self.dt_scaled.is_some() { "pam.dt_scaled" } else { "pam.dt" };
        let dt = self.dt_for(eps);
        if !(dt > 0.0 && dt.is_finite() && self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::config(path, "T and dt must be positive"));
        }
        let steps = (self.t_end / dt).round();
        if (steps * dt - self.t_end).abs() > 1e-9 * self.t_end {
            return Err(Error::config(path, format!("T is not an integer multiple of dt = {dt}")));
        }
        if self.snapshots == 0 || !(steps as usize).is_multiple_of(self.snapshots) {
            return Err(Error::config("pam.snapshots", "snapshot count must divide the step count"));
        }
        if !(self.gap_kappa >= 0.0) {
            return Err(Error::config("pam.gap_kappa", "must be >= 0"));
        }
        Ok(())
    }
}

impl Default for PamConfig {
    fn default() -> Self {
        Self {
            t_end: default_t(),
            dt: default_dt(),
            dt_scaled: None,
            snapshots: default_snapshots(),
            gap_kappa: default_gap_kappa(),
            renormalized: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingConfig {
    #[serde(default = "default_betas")]
    pub betas: Vec<f64>,
    #[serde(default = "default_times")]
    pub times: Vec<f64>,
    #[serde(default = "default_smoothing_p")]
    pub p: Exponent,
}

fn default_betas() -> Vec<f64> {
    vec![0.5, 1.0]
}
/// Thirteen log-spaced times from `10^{-3}` to 1.
pub fn default_times() -> Vec<f64> {
    (0..13).map(|k| 10f64.powf(-3.0 + 0.25 * k as f64)).collect()
}
fn default_smoothing_p() -> Exponent {
    Exponent::Finite(2.0)
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            betas: default_betas(),
            times: default_times(),
            p: default_smoothing_p(),
        }
    }
}

fn default_seeds() -> Vec<u64> {
    (1..=4).collect()
}
fn default_besov() -> BesovParams {
    BesovParams::holder(-1.1, Exponent::Infinity, Weight::Polynomial { kappa: 0.06 })
}
fn default_nonlinearity() -> Nonlinearity {
    Nonlinearity::Logistic { c: 3.0 }
}
fn default_samples() -> usize {
    200
}

/// Complete experiment description; every field has a documented default
/// and the resolved configuration is written next to the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub lattice: LatticeConfig,
    #[serde(default)]
    pub measure: MeasureConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default = "default_nonlinearity")]
    pub nonlinearity: Nonlinearity,
    #[serde(default = "default_besov")]
    pub besov: BesovParams,
    #[serde(default)]
    pub pam: PamConfig,
    #[serde(default)]
    pub regularity: RegularityParams,
    #[serde(default)]
    pub smoothing: SmoothingConfig,
    #[serde(default)]
    pub chi: ChiProfile,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Monte Carlo sample count for expectation estimates.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Output directory; not part of the recorded configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn defaults(kind: ExperimentKind) -> Self {
        Self {
            experiment: kind,
            lattice: LatticeConfig::default(),
            measure: MeasureConfig::default(),
            noise: NoiseConfig::default(),
            nonlinearity: default_nonlinearity(),
            besov: default_besov(),
            pam: PamConfig::default(),
            regularity: RegularityParams::default(),
            smoothing: SmoothingConfig::default(),
            chi: ChiProfile::default(),
            seeds: default_seeds(),
            samples: default_samples(),
            out: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "<root>".into() } else { path }, e.into_inner().message().trim().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    /// Checks every block before any computation starts.
    pub fn validate(&self) -> Result<()> {
        let basis = self.lattice.basis()?;
        if self.lattice.n.is_empty() {
            return Err(Error::config("lattice.N", "at least one scale is required"));
        }
        for &n in &self.lattice.n {
            let t = self.lattice.torus(n)?;
            PartitionOfUnity::for_torus(&t)?;
        }
        self.measure.build(&basis)?;
        if !(self.noise.p_xi.is_finite() && self.noise.p_xi > 0.0) {
            return Err(Error::config("noise.p_xi", "moment order must be positive"));
        }
        self.nonlinearity.validate()?;
        self.besov.validate("besov")?;
        self.chi.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if self.samples == 0 {
            return Err(Error::config("samples", "must be positive"));
        }
        for &n in &self.lattice.n {
            self.pam.validate(2f64.powi(-(n as i32)))?;
        }
        if matches!(self.experiment, ExperimentKind::NoiseEnhancement) {
            self.regularity.validate(self.noise.p_xi).map_err(|e| match e {
                Error::Config { path, msg } => Error::config(path, msg),
                other => other,
            })?;
        }
        if matches!(
            self.experiment,
            ExperimentKind::PamMacro | ExperimentKind::PamUniversality
        ) && basis.dim() != 2
        {
            return Err(Error::config("lattice.basis", "the PAM experiments run in d = 2"));
        }
        for (i, t) in self.smoothing.times.iter().enumerate() {
            if !(*t > 0.0 && t.is_finite()) {
                return Err(Error::config(format!("smoothing.times[{i}]"), "times must be positive"));
            }
        }
        self.smoothing.p.validate("smoothing.p")?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the resolved configuration.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// One tidy metric row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub eps: Option<f64>,
    pub seed: Option<u64>,
    pub t: Option<f64>,
    pub metric: String,
    pub value: f64,
}

impl MetricRow {
    fn new(eps: Option<f64>, seed: Option<u64>, t: Option<f64>, metric: impl Into<String>, value: f64) -> Self {
        Self {
            eps,
            seed,
            t,
            metric: metric.into(),
            value,
        }
    }
}

/// Everything an experiment produces before it is written to disk.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub rows: Vec<MetricRow>,
    pub records: Vec<serde_json::Value>,
    pub files: Vec<(String, Vec<u8>)>,
    pub failures: Vec<String>,
    pub summary: Vec<String>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `(slope, intercept, R²)` of a least-squares line.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Linear-interpolated sample quantile.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// `sup_β`-ready smoothing ratios `‖e^{tL}ξ‖_{𝒞^β_p} t^{β/2} / ‖ξ‖_{L^p}`,
/// indexed `[time][beta]`.
pub fn smoothing_ratios(
    xi: &Field,
    mu: &JumpMeasure,
    times: &[f64],
    betas: &[f64],
    p: Exponent,
) -> Result<Vec<Vec<f64>>> {
    let pou = PartitionOfUnity::for_torus(xi.torus())?;
    let base = match p {
        Exponent::Infinity => xi.sup_norm(),
        Exponent::Finite(p) => xi.lp_norm(p),
    };
    times
        .iter()
        .map(|&t| {
            let h = semigroup_apply(xi, t, mu)?;
            let norms = block_norms(&pou, &h, p, &Weight::default())?;
            Ok(betas
                .iter()
                .map(|&b| besov_from_block_norms(&norms, b, Exponent::Infinity) * t.powf(b / 2.0) / base)
                .collect())
        })
        .collect()
}

/// Result of the coupled universality runs for one `(ε, seed)` cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniversalityCell {
    pub eps: f64,
    pub seed: u64,
    pub c_eps: f64,
    /// `None` when either coupled run blew up.
    pub gap: Option<f64>,
    pub mass_renormalized: Option<f64>,
    pub mass_unrenormalized: Option<f64>,
}

fn terminal_mass(out: &RunOutcome) -> Option<f64> {
    out.terminal().ok().map(|u| u.integral())
}

/// Runs the nonlinear, linear and unrenormalized linear macro models on
/// one shared noise realization.
pub fn universality_cell(
    torus: &Torus,
    mu: &JumpMeasure,
    law: Law,
    seed: u64,
    f: &Nonlinearity,
    pam: &PamConfig,
    chi: &ChiProfile,
) -> Result<UniversalityCell> {
    let xi = sample_noise(&NoiseSpec::macro_noise(law, seed), torus)?;
    let e = build_enhanced(&xi, mu, chi)?;
    let run = |f: Nonlinearity, renorm: bool| -> Result<RunOutcome> {
        PamRun::macro_run(&e, mu, f, pam.t_end, pam.dt_for(torus.eps()), pam.snapshots, renorm)?.run()
    };
    let nl = run(f.clone(), true)?;
    let lin = run(f.linearized(), true)?;
    let raw = run(f.linearized(), false)?;
    let gap = match universality_gap(&nl, &lin, pam.gap_kappa) {
        Ok(g) => Some(g),
        Err(Error::BlowUp { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(UniversalityCell {
        eps: torus.eps(),
        seed,
        c_eps: e.c_eps,
        gap,
        mass_renormalized: terminal_mass(&lin),
        mass_unrenormalized: terminal_mass(&raw),
    })
}

fn cells(cfg: &ExperimentConfig) -> Vec<(u32, u64)> {
    cfg.lattice
        .n
        .iter()
        .flat_map(|&n| cfg.seeds.iter().map(move |&s| (n, s)))
        .collect()
}

fn noise_for(cfg: &ExperimentConfig, torus: &Torus, seed: u64) -> Result<Field> {
    let mut spec = NoiseSpec::macro_noise(cfg.noise.law, seed);
    spec.p_xi = cfg.noise.p_xi;
    sample_noise(&spec, torus)
}

fn fourier_selftest(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<()> {
    type Checks = Vec<(&'static str, f64, f64)>;
    let results: Vec<(u32, u64, Checks)> = cells(cfg)
        .into_par_iter()
        .map(|(n, seed)| {
            let t = cfg.lattice.torus(n)?;
            let f = noise_for(cfg, &t, seed)?;
            let g = noise_for(cfg, &t, seed.wrapping_add(1 << 32))?;
            let spec = forward(&f);
            let lhs = f.lp_norm(2.0).powi(2);
            let rhs: f64 = spec.values().iter().map(|c| c.norm_sqr()).sum::<f64>() * t.dual_cell_measure();
            let back = inverse(&spec);
            let round = back.sub(&f)?.sup_norm() / f.sup_norm();
            let pou = PartitionOfUnity::for_torus(&t)?;
            let mut psum: f64 = 0.0;
            for k in 0..t.len() {
                let s: f64 = pou.indices().map(|j| pou.table(j).expect("in range")[k]).sum();
                psum = psum.max((s - 1.0).abs());
            }
            let mut rec = Field::zeros(t.clone());
            for b in pou.blocks(&f)? {
                rec = rec.add(&b)?;
            }
            let recon = rec.sub(&f)?.sup_norm() / f.sup_norm();
            let bony = f
                .mul(&g)?
                .sub(
                    &pou.paraproduct(&f, &g)?
                        .add(&pou.paraproduct(&g, &f)?)?
                        .add(&pou.resonant(&f, &g)?)?,
                )?
                .sup_norm()
                / (f.sup_norm() * g.sup_norm());
            Ok((
                n,
                seed,
                vec![
                    ("parseval_rel", ((lhs - rhs) / lhs).abs(), 1e-10),
                    ("roundtrip_rel", round, 1e-10),
                    ("partition_sum", psum, 1e-12),
                    ("reconstruction_rel", recon, 1e-10),
                    ("bony_rel", bony, 1e-10),
                ],
            ))
        })
        .collect::<Result<_>>()?;
    for (n, seed, checks) in results {
        let eps = 2f64.powi(-(n as i32));
        for (name, v, tol) in checks {
            if !(v < tol) {
                art.failures.push(format!("{name} = {v:e} at N = {n}, seed {seed} (tolerance {tol:e})"));
            }
            art.rows.push(MetricRow::new(Some(eps), Some(seed), None, name, v));
        }
    }
    art.summary.push(format!(
        "fourier-selftest: {} checks, {} failures",
        art.rows.len(),
        art.failures.len()
    ));
    Ok(())
}

fn besov_report(cfg: &ExperimentConfig, art: &mut Artifacts, hash: &str) -> Result<()> {
    let values: Vec<(u32, u64, f64)> = cells(cfg)
        .into_par_iter()
        .map(|(n, seed)| {
            let t = cfg.lattice.torus(n)?;
            let xi = noise_for(cfg, &t, seed)?;
            Ok((n, seed, crate::calculus::besov_norm(&xi, &cfg.besov)?))
        })
        .collect::<Result<_>>()?;
    let b = &cfg.besov;
    let mut csv = String::from("config_hash,epsilon,seed,alpha,p,q,weight_kind,weight_param,value\n");
    for (n, seed, v) in values {
        let eps = 2f64.powi(-(n as i32));
        writeln!(
            csv,
            "{hash},{eps},{seed},{},{},{},{},{},{v}",
            b.alpha,
            b.p,
            b.q,
            b.weight.kind(),
            b.weight.param()
        )
        .expect("write to string");
        art.rows.push(MetricRow::new(Some(eps), Some(seed), None, "besov_norm", v));
    }
    art.files.push(("besov.csv".into(), csv.into_bytes()));
    Ok(())
}

fn heat_smoothing(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<()> {
    let basis = cfg.lattice.basis()?;
    let mu = cfg.measure.build(&basis)?;
    let sm = &cfg.smoothing;
    let results: Vec<(u32, u64, Vec<Vec<f64>>)> = cells(cfg)
        .into_par_iter()
        .map(|(n, seed)| {
            let t = cfg.lattice.torus(n)?;
            let xi = noise_for(cfg, &t, seed)?;
            Ok((n, seed, smoothing_ratios(&xi, &mu, &sm.times, &sm.betas, sm.p)?))
        })
        .collect::<Result<_>>()?;
    let mut sup: BTreeMap<(u32, usize), f64> = BTreeMap::new();
    for (n, seed, r) in results {
        let eps = 2f64.powi(-(n as i32));
        for (ti, row) in r.iter().enumerate() {
            for (bi, v) in row.iter().enumerate() {
                let name = format!("smoothing_ratio[beta={}]", sm.betas[bi]);
                art.rows.push(MetricRow::new(Some(eps), Some(seed), Some(sm.times[ti]), name, *v));
                let e = sup.entry((n, bi)).or_insert(0.0);
                *e = e.max(*v);
            }
        }
    }
    for ((n, bi), v) in sup {
        let eps = 2f64.powi(-(n as i32));
        art.rows.push(MetricRow::new(
            Some(eps),
            None,
            None,
            format!("smoothing_sup[beta={}]", sm.betas[bi]),
            v,
        ));
    }
    Ok(())
}

fn renorm_scaling(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<()> {
    let basis = cfg.lattice.basis()?;
    let mu = cfg.measure.build(&basis)?;
    let vals: Vec<(u32, f64, f64)> = cfg
        .lattice
        .n
        .par_iter()
        .map(|&n| {
            let t = cfg.lattice.torus(n)?;
            let c = renorm_constant(&mu, &t, &cfg.chi)?;
            let fine = BravaisTorus::new(basis.clone(), n, 2 * t.side())?;
            let c2 = renorm_constant(&mu, &fine, &cfg.chi)?;
            Ok((n, c, (c2 - c).abs() / c))
        })
        .collect::<Result<_>>()?;
    let xs: Vec<f64> = vals.iter().map(|v| v.0 as f64).collect();
    let ys: Vec<f64> = vals.iter().map(|v| v.1).collect();
    for (n, c, change) in &vals {
        let eps = 2f64.powi(-(*n as i32));
        art.rows.push(MetricRow::new(Some(eps), None, None, "c_eps", *c));
        art.rows.push(MetricRow::new(Some(eps), None, None, "c_eps_refinement_change", *change));
    }
    if vals.len() >= 2 {
        let (slope, intercept, r2) = linear_fit(&xs, &ys);
        art.rows.push(MetricRow::new(None, None, None, "fit_slope", slope));
        art.rows.push(MetricRow::new(None, None, None, "fit_intercept", intercept));
        art.rows.push(MetricRow::new(None, None, None, "fit_r2", r2));
        art.summary.push(format!(
            "renorm-scaling: c_eps ~ {slope:.5} log2(1/eps) + {intercept:.5}, R^2 = {r2:.6}"
        ));
    }
    Ok(())
}

fn noise_enhancement(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<()> {
    let basis = cfg.lattice.basis()?;
    let mu = cfg.measure.build(&basis)?;
    for &n in &cfg.lattice.n {
        let t = cfg.lattice.torus(n)?;
        let eps = t.eps();
        let origin = t.origin_index();
        let per_seed: Vec<(u64, [f64; 3], f64, f64)> = cfg
            .seeds
            .par_iter()
            .map(|&seed| {
                let xi = noise_for(cfg, &t, seed)?;
                let e = build_enhanced(&xi, &mu, &cfg.chi)?;
                let terms = regularity_terms(&e, &cfg.regularity)?;
                let res0 = e.resonant_renormalized.values()[origin] + e.c_eps;
                Ok((seed, terms, res0, e.c_eps))
            })
            .collect::<Result<_>>()?;
        let mut ms = Vec::new();
        let mut res = Vec::new();
        let mut c_eps = 0.0;
        for (seed, terms, r0, c) in per_seed {
            let m = terms.iter().copied().fold(0.0, f64::max);
            ms.push(m);
            res.push(r0);
            c_eps = c;
            for (name, v) in ["norm_xi", "norm_x", "norm_resonant"].iter().zip(terms) {
                art.rows.push(MetricRow::new(Some(eps), Some(seed), None, *name, v));
            }
            art.rows.push(MetricRow::new(Some(eps), Some(seed), None, "m_eps", m));
        }
        art.rows.push(MetricRow::new(Some(eps), None, None, "m_eps_median", median(&ms)));
        art.rows.push(MetricRow::new(Some(eps), None, None, "c_eps", c_eps));
        let (est, se) = mean_stderr(&res);
        art.records.push(serde_json::json!({
            "op": "resonant_mean_at_origin",
            "eps": eps,
            "M": t.side(),
            "seed": cfg.seeds[0],
            "n_samples": res.len(),
            "estimate": est,
            "stderr": se,
            "target": c_eps,
        }));
    }
    Ok(())
}

fn pam_macro(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<()> {
    let basis = cfg.lattice.basis()?;
    let mu = cfg.measure.build(&basis)?;
    let runs: Vec<(u32, u64, RunOutcome, f64)> = cells(cfg)
        .into_par_iter()
        .map(|(n, seed)| {
            let t = cfg.lattice.torus(n)?;
            let xi = noise_for(cfg, &t, seed)?;
            let e = build_enhanced(&xi, &mu, &cfg.chi)?;
            let p = &cfg.pam;
            let run = PamRun::macro_run(
                &e,
                &mu,
                cfg.nonlinearity.clone(),
                p.t_end,
                p.dt_for(t.eps()),
                p.snapshots,
                p.renormalized,
            )?;
            Ok((n, seed, run.run()?, e.c_eps))
        })
        .collect::<Result<_>>()?;
    for (n, seed, out, c_eps) in runs {
        let eps = 2f64.powi(-(n as i32));
        for (k, (t, u)) in out.times.iter().zip(&out.snapshots).enumerate() {
            art.rows.push(MetricRow::new(Some(eps), Some(seed), Some(*t), "mass", u.integral()));
            art.rows.push(MetricRow::new(Some(eps), Some(seed), Some(*t), "sup", u.sup_norm()));
            let mut h = FieldHeader::for_torus(u.torus());
            h.t = Some(*t);
            h.eps = Some(eps);
            h.role = Some("macro".into());
            art.files.push((format!("fields/pam_N{n}_seed{seed}_k{k}.bin"), encode_field(u, &h)?));
        }
        art.rows.push(MetricRow::new(
            Some(eps),
            Some(seed),
            None,
            "survived",
            if out.survived() { 1.0 } else { 0.0 },
        ));
        let meta = serde_json::json!({
            "N": n,
            "eps": eps,
            "seed": seed,
            "c_eps": c_eps,
            "T": cfg.pam.t_end,
            "dt": cfg.pam.dt_for(eps),
            "steps_taken": out.steps_taken,
            "blowup": out.blowup,
            "nonlinearity": cfg.nonlinearity,
            "renormalized": cfg.pam.renormalized,
        });
        art.files.push((
            format!("fields/pam_N{n}_seed{seed}.json"),
            serde_json::to_vec_pretty(&meta)?,
        ));
    }
    Ok(())
}

fn pam_universality(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<()> {
    let basis = cfg.lattice.basis()?;
    let mu = cfg.measure.build(&basis)?;
    let results: Vec<(u32, UniversalityCell)> = cells(cfg)
        .into_par_iter()
        .map(|(n, seed)| {
            let t = cfg.lattice.torus(n)?;
            let c = universality_cell(&t, &mu, cfg.noise.law, seed, &cfg.nonlinearity, &cfg.pam, &cfg.chi)?;
            Ok((n, c))
        })
        .collect::<Result<_>>()?;
    let mut by_n: BTreeMap<u32, Vec<UniversalityCell>> = BTreeMap::new();
    for (n, c) in results {
        let eps = c.eps;
        let row = |m: &str, v: Option<f64>| v.map(|v| MetricRow::new(Some(eps), Some(c.seed), None, m, v));
        art.rows.extend(row("gap", c.gap));
        art.rows.extend(row("mass_renormalized", c.mass_renormalized));
        art.rows.extend(row("mass_unrenormalized", c.mass_unrenormalized));
        art.rows.push(MetricRow::new(
            Some(eps),
            Some(c.seed),
            None,
            "survived",
            if c.gap.is_some() { 1.0 } else { 0.0 },
        ));
        art.records.push(serde_json::to_value(c)?);
        by_n.entry(n).or_default().push(c);
    }
    for (n, cs) in by_n {
        let eps = 2f64.powi(-(n as i32));
        let collect = |f: fn(&UniversalityCell) -> Option<f64>| cs.iter().filter_map(f).collect::<Vec<_>>();
        let gaps = collect(|c| c.gap);
        let mr = collect(|c| c.mass_renormalized);
        let mu_ = collect(|c| c.mass_unrenormalized);
        art.rows.push(MetricRow::new(Some(eps), None, None, "gap_median", median(&gaps)));
        art.rows.push(MetricRow::new(Some(eps), None, None, "mass_renormalized_median", median(&mr)));
        art.rows.push(MetricRow::new(Some(eps), None, None, "mass_unrenormalized_median", median(&mu_)));
        art.rows.push(MetricRow::new(
            Some(eps),
            None,
            None,
            "survival_fraction",
            gaps.len() as f64 / cs.len() as f64,
        ));
        art.summary.push(format!(
            "eps = 2^-{n}: median gap {:.4e}, median mass renormalized {:.4e}, unrenormalized {:.4e}",
            median(&gaps),
            median(&mr),
            median(&mu_)
        ));
    }
    Ok(())
}

/// Runs the configured experiment and returns its artifacts.
pub fn execute(cfg: &ExperimentConfig) -> Result<Artifacts> {
    cfg.validate()?;
    let mut art = Artifacts::default();
    let hash = cfg.hash();
    match cfg.experiment {
        ExperimentKind::FourierSelftest => fourier_selftest(cfg, &mut art)?,
        ExperimentKind::BesovReport => besov_report(cfg, &mut art, &hash)?,
        ExperimentKind::HeatSmoothing => heat_smoothing(cfg, &mut art)?,
        ExperimentKind::RenormScaling => renorm_scaling(cfg, &mut art)?,
        ExperimentKind::NoiseEnhancement => noise_enhancement(cfg, &mut art)?,
        ExperimentKind::PamMacro => pam_macro(cfg, &mut art)?,
        ExperimentKind::PamUniversality => pam_universality(cfg, &mut art)?,
    }
    Ok(art)
}

fn metrics_csv(cfg: &ExperimentConfig, hash: &str, rows: &[MetricRow]) -> String {
    let mut s = String::from("config_hash,experiment,eps,seed,t,metric,value\n");
    for r in rows {
        writeln!(
            s,
            "{hash},{},{},{},{},{},{}",
            cfg.experiment.name(),
            opt(r.eps),
            opt(r.seed),
            opt(r.t),
            r.metric,
            r.value
        )
        .expect("write to string");
    }
    s
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub config_hash: String,
    pub files: Vec<ManifestEntry>,
}

/// Writes all artifacts under `dir` and a `MANIFEST.json` listing them.
pub fn write_artifacts(cfg: &ExperimentConfig, art: &Artifacts, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let hash = cfg.hash();
    let mut recorded = cfg.clone();
    recorded.out = None;
    let mut files: Vec<(String, Vec<u8>)> = vec![
        ("config.json".into(), serde_json::to_vec_pretty(&recorded)?),
        ("metrics.csv".into(), metrics_csv(cfg, &hash, &art.rows).into_bytes()),
    ];
    if !art.records.is_empty() {
        let mut nd = Vec::new();
        for r in &art.records {
            serde_json::to_writer(&mut nd, r)?;
            nd.push(b'\n');
        }
        files.push(("records.ndjson".into(), nd));
    }
    files.extend(art.files.iter().cloned());
    let mut entries = Vec::new();
    for (name, bytes) in &files {
        let path = dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        entries.push(ManifestEntry {
            path: name.clone(),
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(bytes)),
        });
    }
    let manifest = Manifest {
        experiment: cfg.experiment.name().into(),
        config_hash: hash,
        files: entries,
    };
    fs::write(dir.join("MANIFEST.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Reshapes `metrics.csv` of a result directory into tidy rows
/// `experiment,eps,seed,t,metric,value` for one metric. With `quantiles`
/// the per-seed values are summarized per `ε` as 10/50/90% quantiles.
pub fn plotdata(dir: &Path, metric: &str, quantiles: bool) -> Result<String> {
    if !dir.join("MANIFEST.json").exists() {
        return Err(Error::Argument(format!("{} has no MANIFEST.json", dir.display())));
    }
    let text = fs::read_to_string(dir.join("metrics.csv"))?;
    let mut rows = Vec::new();
    let mut names = std::collections::BTreeSet::new();
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(Error::Argument(format!("malformed metrics row: {line}")));
        }
        names.insert(cols[5].to_string());
        if cols[5] == metric {
            rows.push(cols);
        }
    }
    if rows.is_empty() {
        let list: Vec<String> = names.into_iter().collect();
        return Err(Error::Argument(format!(
            "unknown metric {metric:?}; available: {}",
            list.join(", ")
        )));
    }
    let mut out = String::from("experiment,eps,seed,t,metric,value\n");
    if quantiles {
        let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for c in &rows {
            let v: f64 = c[6].parse().map_err(|_| Error::Argument(format!("bad value {}", c[6])))?;
            groups.entry(c[2].to_string()).or_default().push(v);
        }
        for (eps, vs) in groups {
            for q in [0.1, 0.5, 0.9] {
                writeln!(out, "{},{eps},q{},,{metric},{}", rows[0][1], q * 100.0, quantile(&vs, q))
                    .expect("write to string");
            }
        }
    } else {
        for c in rows {
            writeln!(out, "{},{},{},{},{},{}", c[1], c[2], c[3], c[4], c[5], c[6]).expect("write to string");
        }
    }
    Ok(out)
}

/// Process exit code for an error: 2 for configuration problems, 1 otherwise.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        _ => 1,
    }
}
