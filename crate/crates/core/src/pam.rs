//! Exponential-Euler solvers for the microscopic population model and the
//! macroscopic renormalized parabolic Anderson model, the scaling map
//! between them and the pathwise comparison with the linear model.

use serde::{Deserialize, Serialize};

use crate::calculus::{
    besov_norm_with, modified_paraproduct, weighted_lp, BesovParams, Exponent, PartitionOfUnity,
    TimeKernel, Weight,
};
use crate::diffusion::{EtdTables, JumpMeasure};
use crate::error::{Error, Result};
use crate::lattice::Torus;
use crate::spectral::{check_same, forward, inverse, Field, SpectralField};
use crate::stochastic::EnhancedNoise;

/// Reaction term `F` with `F(0) = 0` and bounded `F''`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Nonlinearity {
    /// `F(u) = c u`
    Linear { c: f64 },
    /// `F(u) = u (C − u)`
    Logistic { c: f64 },
    /// `F(u) = Σ_k coeffs[k] u^k`, degree at most 2.
    Polynomial { coeffs: Vec<f64> },
}

impl Nonlinearity {
    /// `(F(0), F'(0), F''/2)`.
    fn quadratic(&self) -> (f64, f64, f64) {
        match self {
            Nonlinearity::Linear { c } => (0.0, *c, 0.0),
            Nonlinearity::Logistic { c } => (0.0, *c, -1.0),
            Nonlinearity::Polynomial { coeffs } => (
                coeffs.first().copied().unwrap_or(0.0),
                coeffs.get(1).copied().unwrap_or(0.0),
                coeffs.get(2).copied().unwrap_or(0.0),
            ),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Nonlinearity::Polynomial { coeffs } = self {
            if coeffs.len() > 3 && coeffs[3..].iter().any(|&c| c != 0.0) {
                return Err(Error::config(
                    "nonlinearity.coeffs",
                    "degree above 2 has an unbounded second derivative",
                ));
            }
        }
        let (a0, a1, a2) = self.quadratic();
        if ![a0, a1, a2].iter().all(|v| v.is_finite()) {
            return Err(Error::config("nonlinearity", "coefficients must be finite"));
        }
        if a0 != 0.0 {
            return Err(Error::config("nonlinearity.coeffs", "F(0) must be 0"));
        }
        let h = 2f64.powi(-10);
        let fd = (self.eval(h) - self.eval(-h)) / (2.0 * h);
        if (fd - self.deriv0()).abs() > 1e-12 * self.deriv0().abs().max(1.0) {
            return Err(Error::config(
                "nonlinearity",
                format!("stored F'(0) = {} disagrees with finite difference {fd}", self.deriv0()),
            ));
        }
        Ok(())
    }

    pub fn eval(&self, u: f64) -> f64 {
        let (a0, a1, a2) = self.quadratic();
        a0 + u * (a1 + a2 * u)
    }

    pub fn deriv(&self, u: f64) -> f64 {
        let (_, a1, a2) = self.quadratic();
        a1 + 2.0 * a2 * u
    }

    pub fn deriv0(&self) -> f64 {
        self.quadratic().1
    }

    /// `‖F''‖_∞`.
    pub fn second_derivative_bound(&self) -> f64 {
        2.0 * self.quadratic().2.abs()
    }

    /// `F_lin(u) = F'(0) u`.
    pub fn linearized(&self) -> Self {
        Nonlinearity::Linear { c: self.deriv0() }
    }

    /// `(a1, a2)` of `s^{-1} F(s u)`, the macroscopic rescaling with `s = ε²`.
    fn rescaled(&self, s: f64) -> (f64, f64) {
        let (_, a1, a2) = self.quadratic();
        (a1, a2 * s)
    }
}

/// Whether a run lives on the macroscopic lattice `𝒢^ε` or on the
/// unscaled lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Scale {
    Macro,
    Micro { eps: f64 },
}

/// A fully specified run of `∂_t u = L u + F_s(u) V` where `V` is the
/// potential and `F_s` the scale-appropriate reaction. The mean-field part
/// `λ u` with `λ = F'(0)·shift` is integrated exactly with the diffusion.
#[derive(Debug, Clone)]
pub struct PamRun {
    pub torus: Torus,
    pub mu: JumpMeasure,
    pub f: Nonlinearity,
    /// `ξ − F'(0)c` (macro) or `η` (micro).
    pub potential: Field,
    /// Constant part of the potential folded into the propagator.
    pub shift: f64,
    pub u0: Field,
    pub t_end: f64,
    pub dt: f64,
    /// Number of snapshot intervals.
    pub snapshots: usize,
    pub scale: Scale,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlowUpInfo {
    pub step: usize,
    pub time: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub times: Vec<f64>,
    pub snapshots: Vec<Field>,
    pub blowup: Option<BlowUpInfo>,
    /// Total number of steps taken, including adaptive sub-steps.
    pub steps_taken: usize,
}

impl RunOutcome {
    pub fn terminal(&self) -> Result<&Field> {
        match self.blowup {
            Some(b) => Err(Error::BlowUp {
                step: b.step,
                time: b.time,
            }),
            None => Ok(self.snapshots.last().expect("at least the initial snapshot")),
        }
    }

    pub fn survived(&self) -> bool {
        self.blowup.is_none()
    }
}

const BLOWUP_LEVEL: f64 = 1e200;
const MAX_HALVINGS: u32 = 16;

impl PamRun {
    /// Macroscopic run driven by an enhanced noise; the initial condition
    /// is the lattice Dirac mass. With `renormalized = false` the
    /// `−F'(0)c^ε_μ` counterterm is dropped.
    pub fn macro_run(
        noise: &EnhancedNoise,
        mu: &JumpMeasure,
        f: Nonlinearity,
        t_end: f64,
        dt: f64,
        snapshots: usize,
        renormalized: bool,
    ) -> Result<Self> {
        let torus = noise.xi.torus().clone();
        let d0 = f.deriv0();
        let shift = if renormalized { -d0 * noise.c_eps } else { 0.0 };
        let potential = noise.xi.map(|v| v + shift);
        let run = Self {
            u0: Field::delta(torus.clone()),
            torus,
            mu: mu.clone(),
            f,
            potential,
            shift,
            t_end,
            dt,
            snapshots,
            scale: Scale::Macro,
        };
        run.validate()?;
        Ok(run)
    }

    /// Microscopic run on the unscaled lattice with potential `η` whose
    /// mean is `eta_mean`; times are microscopic.
    #[allow(clippy::too_many_arguments)]
    pub fn micro_run(
        eta: &Field,
        eta_mean: f64,
        mu: &JumpMeasure,
        f: Nonlinearity,
        eps: f64,
        t_end: f64,
        dt: f64,
        snapshots: usize,
    ) -> Result<Self> {
        let torus = eta.torus().clone();
        let run = Self {
            u0: Field::delta(torus.clone()),
            torus,
            mu: mu.clone(),
            f,
            potential: eta.clone(),
            shift: eta_mean,
            t_end,
            dt,
            snapshots,
            scale: Scale::Micro { eps },
        };
        run.validate()?;
        Ok(run)
    }

    pub fn with_initial(mut self, u0: Field) -> Result<Self> {
        check_same(&self.torus, u0.torus())?;
        self.u0 = u0;
        Ok(self)
    }

    pub fn with_nonlinearity(&self, f: Nonlinearity) -> Self {
        Self { f, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        self.f.validate()?;
        check_same(&self.torus, self.potential.torus())?;
        check_same(&self.torus, self.u0.torus())?;
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::config("dt", "time step must be positive"));
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(Error::config("T", "horizon must be positive"));
        }
        if self.snapshots == 0 {
            return Err(Error::config("snapshots", "need at least one snapshot interval"));
        }
        let steps = self.steps();
        if ((steps as f64) * self.dt - self.t_end).abs() > 1e-9 * self.t_end {
            return Err(Error::config("dt", "T must be an integer multiple of dt"));
        }
        if !steps.is_multiple_of(self.snapshots) {
            return Err(Error::config(
                "snapshots",
                format!("{steps} steps are not divisible into {} intervals", self.snapshots),
            ));
        }
        match self.scale {
            Scale::Micro { eps } => {
                if self.torus.scale_exp() != 0 {
                    return Err(Error::config("scale", "micro runs use the unscaled lattice"));
                }
                if !(eps > 0.0 && eps <= 1.0) {
                    return Err(Error::config("scale.eps", "eps must lie in (0, 1]"));
                }
            }
            Scale::Macro => {}
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    /// `λ = F'(0)·shift`.
    pub fn lambda(&self) -> f64 {
        self.f.deriv0() * self.shift
    }

    /// Coefficients `(a1, a2)` of the reaction `F_s(u) = a1 u + a2 u²`.
    fn reaction(&self) -> (f64, f64) {
        match self.scale {
            Scale::Macro => {
                let e = self.torus.eps();
                self.f.rescaled(e * e)
            }
            Scale::Micro { .. } => self.f.rescaled(1.0),
        }
    }

    /// ETD tables for step `dt`, symbol `l − λ`.
    pub fn tables(&self, dt: f64) -> Result<EtdTables> {
        let lambda = self.lambda();
        let symbol: Vec<f64> = self
            .mu
            .multiplier(&self.torus)?
            .into_iter()
            .map(|l| l - lambda)
            .collect();
        EtdTables::from_symbol(&symbol, dt)
    }

    /// Largest reaction Jacobian entry `|F_s'(u) V − λ|` over sites.
    fn jacobian_bound(&self, u: &Field) -> f64 {
        let (a1, a2) = self.reaction();
        let lambda = self.lambda();
        u.values()
            .iter()
            .zip(self.potential.values())
            .map(|(&u, &v)| ((a1 + 2.0 * a2 * u) * v - lambda).abs())
            .fold(0.0, f64::max)
    }

    /// One exponential-Euler step with precomputed tables.
    pub fn step(&self, u: &Field, tables: &EtdTables) -> Field {
        let (a1, a2) = self.reaction();
        let lambda = self.lambda();
        let n: Vec<f64> = u
            .values()
            .iter()
            .zip(self.potential.values())
            .map(|(&u, &v)| u * (a1 + a2 * u) * v - lambda * u)
            .collect();
        let uh = forward(u);
        let nh = forward(&Field::from_raw(self.torus.clone(), n));
        let values = uh
            .values()
            .iter()
            .zip(nh.values())
            .zip(tables.decay.iter().zip(&tables.source))
            .map(|((a, b), (e, w))| a * e + b * w)
            .collect();
        inverse(&SpectralField::new(self.torus.clone(), values).expect("same torus"))
    }

    /// Integrates to `T`, halving the step where the reaction is stiff.
    pub fn run(&self) -> Result<RunOutcome> {
        self.validate()?;
        let steps = self.steps();
        let per_snap = steps / self.snapshots;
        let mut tables: Vec<EtdTables> = vec![self.tables(self.dt)?];
        let mut u = self.u0.clone();
        let mut times = vec![0.0];
        let mut snaps = vec![u.clone()];
        let mut taken = 0;
        for n in 0..steps {
            let j = self.jacobian_bound(&u);
            let mut level = 0u32;
            while self.dt / 2f64.powi(level as i32) * j > 0.5 && level < MAX_HALVINGS {
                level += 1;
            }
            while tables.len() <= level as usize {
                let h = self.dt / 2f64.powi(tables.len() as i32);
                tables.push(self.tables(h)?);
            }
            for _ in 0..1usize << level {
                u = self.step(&u, &tables[level as usize]);
                taken += 1;
            }
            if u.values().iter().any(|v| !v.is_finite() || v.abs() > BLOWUP_LEVEL) || !j.is_finite() {
                return Ok(RunOutcome {
                    times,
                    snapshots: snaps,
                    blowup: Some(BlowUpInfo {
                        step: n + 1,
                        time: (n + 1) as f64 * self.dt,
                    }),
                    steps_taken: taken,
                });
            }
            if (n + 1) % per_snap == 0 {
                times.push((n + 1) as f64 * self.dt);
                snaps.push(u.clone());
            }
        }
        Ok(RunOutcome {
            times,
            snapshots: snaps,
            blowup: None,
            steps_taken: taken,
        })
    }
}

fn checked_step(run: &PamRun, u: &Field) -> Result<Field> {
    let out = run.step(u, &run.tables(run.dt)?);
    if out.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::BlowUp {
            step: 1,
            time: run.dt,
        });
    }
    Ok(out)
}

/// One macroscopic step of size `run.dt`.
pub fn step_macro(u: &Field, run: &PamRun) -> Result<Field> {
    if run.scale != Scale::Macro {
        return Err(Error::Argument("run is not macroscopic".into()));
    }
    checked_step(run, u)
}

/// One microscopic step of size `run.dt`.
pub fn step_micro(v: &Field, run: &PamRun) -> Result<Field> {
    if !matches!(run.scale, Scale::Micro { .. }) {
        return Err(Error::Argument("run is not microscopic".into()));
    }
    checked_step(run, v)
}

/// `u(t, x) = ε^{-2} v(ε^{-2} t, ε^{-1} x)`: relabels micro snapshots onto
/// the macro torus with the same side.
pub fn rescale_micro_to_macro(
    snapshots: &[Field],
    times: &[f64],
    macro_torus: &Torus,
) -> Result<(Vec<Field>, Vec<f64>)> {
    let eps = macro_torus.eps();
    if snapshots.len() != times.len() {
        return Err(Error::Shape("snapshot and time counts differ".into()));
    }
    let mut out = Vec::with_capacity(snapshots.len());
    for s in snapshots {
        let t = s.torus();
        if t.scale_exp() != 0 || t.side() != macro_torus.side() || t.basis() != macro_torus.basis() {
            return Err(Error::Argument(
                "micro grid does not nest onto the macro grid".into(),
            ));
        }
        out.push(Field::from_raw(
            macro_torus.clone(),
            s.values().iter().map(|v| v / (eps * eps)).collect(),
        ));
    }
    Ok((out, times.iter().map(|t| t * eps * eps).collect()))
}

/// `‖u_nl(T) − u_lin(T)‖ / ‖u_lin(T)‖` in `L²(𝒢^ε, p^κ)`.
pub fn universality_gap(nonlinear: &RunOutcome, linear: &RunOutcome, kappa: f64) -> Result<f64> {
    let a = nonlinear.terminal()?;
    let b = linear.terminal()?;
    check_same(a.torus(), b.torus())?;
    let rho = Weight::Polynomial { kappa }.table(a.torus());
    let p = Exponent::Finite(2.0);
    Ok(weighted_lp(&a.sub(b)?, &rho, p) / weighted_lp(b, &rho, p))
}

/// Per-time diagnostics of the paracontrolled decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecompositionPoint {
    pub t: f64,
    pub norm_u: f64,
    pub norm_sharp: f64,
    pub ratio: f64,
}

/// `u♯ = u − (F'(0) u) ≺≺ X` at every snapshot, with the Besov norms of
/// `u` at regularity `α` and of `u♯` at `2α`.
pub fn paracontrolled_decompose(
    snapshots: &[Field],
    times: &[f64],
    x: &Field,
    fprime0: f64,
    alpha: f64,
    weight: Weight,
) -> Result<(Vec<Field>, Vec<DecompositionPoint>)> {
    let pou = PartitionOfUnity::for_torus(x.torus())?;
    let scaled: Vec<Field> = snapshots.iter().map(|u| u.scaled(fprime0)).collect();
    let xs = vec![x.clone(); times.len()];
    let kernel = TimeKernel::default();
    let mut sharp = Vec::with_capacity(times.len());
    let mut diag = Vec::with_capacity(times.len());
    let p = Exponent::Finite(2.0);
    for (n, u) in snapshots.iter().enumerate() {
        let mp = modified_paraproduct(&pou, &scaled, &xs, times, n, &kernel)?;
        let s = u.sub(&mp)?;
        let norm_u = besov_norm_with(&pou, u, &BesovParams::holder(alpha, p, weight))?;
        let norm_sharp = besov_norm_with(&pou, &s, &BesovParams::holder(2.0 * alpha, p, weight))?;
        diag.push(DecompositionPoint {
            t: times[n],
            norm_u,
            norm_sharp,
            ratio: if norm_u > 0.0 { norm_sharp / norm_u } else { 0.0 },
        });
        sharp.push(s);
    }
    Ok((sharp, diag))
}
