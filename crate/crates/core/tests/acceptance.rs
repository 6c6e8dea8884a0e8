//! Acceptance checks; prints one PASS/FAIL line per criterion.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use paralat::calculus::{Exponent, PartitionOfUnity};
use paralat::diffusion::{generator_apply, generator_apply_spectral, semigroup_apply, Atom, JumpMeasure};
use paralat::harness::{linear_fit, median, smoothing_ratios, universality_cell, PamConfig, UniversalityCell};
use paralat::lattice::{BravaisBasis, BravaisTorus, Torus};
use paralat::pam::{Nonlinearity, PamRun};
use paralat::spectral::{forward, inverse, Field};
use paralat::stochastic::{
    build_enhanced, mean_stderr, multiple_integral, regularity_terms, renorm_constant, sample_noise,
    standard_samples, wick_product, ChiProfile, IidMoments, IntegralKernel, Law, NoiseSpec,
    RegularityParams, WickValue,
};

type Check = Result<String, String>;

fn cubic(d: usize) -> BravaisBasis {
    BravaisBasis::cubic(d).unwrap()
}

fn torus(basis: BravaisBasis, n: u32, m: usize) -> Torus {
    BravaisTorus::shared(basis, n, m).unwrap()
}

fn random_field(t: &Torus, seed: u64) -> Field {
    Field::new(t.clone(), standard_samples(Law::Gaussian, seed, t.len())).unwrap()
}

fn ensure(ok: bool, msg: String) -> Check {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn fourier_identities() -> Check {
    let mut worst_parseval = 0.0f64;
    let mut worst_round = 0.0f64;
    let mut seed = 0;
    for d in [1, 2] {
        for m in [8, 64, 256] {
            for n in 0..=4 {
                seed += 1;
                let t = torus(cubic(d), n, m);
                let f = random_field(&t, seed);
                let g = forward(&f);
                let lhs = f.lp_norm(2.0).powi(2);
                let rhs = t.dual_cell_measure() * g.values().iter().map(|c| c.norm_sqr()).sum::<f64>();
                worst_parseval = worst_parseval.max(((lhs - rhs) / lhs).abs());
                let back = inverse(&g);
                worst_round = worst_round.max(back.sub(&f).unwrap().sup_norm() / f.sup_norm());
            }
        }
    }
    ensure(
        worst_parseval < 1e-10 && worst_round < 1e-10,
        format!("max Parseval error {worst_parseval:.2e}, max round-trip error {worst_round:.2e}"),
    )
}

fn partition_of_unity() -> Check {
    let cases = [
        (cubic(1), 0, 64),
        (cubic(1), 3, 256),
        (cubic(2), 0, 16),
        (cubic(2), 2, 64),
        (cubic(2), 4, 128),
        (BravaisBasis::hexagonal(), 2, 64),
        (cubic(3), 1, 16),
    ];
    let mut sum_err = 0.0f64;
    let mut overlap = 0.0f64;
    let mut recon = 0.0f64;
    for (k, (b, n, m)) in cases.into_iter().enumerate() {
        let t = torus(b, n, m);
        let pou = PartitionOfUnity::for_torus(&t).unwrap();
        let tables: Vec<&[f64]> = pou.indices().map(|j| pou.table(j).unwrap()).collect();
        for x in 0..t.len() {
            let s: f64 = tables.iter().map(|tab| tab[x]).sum();
            sum_err = sum_err.max((s - 1.0).abs());
            for a in 0..tables.len() {
                for b in a + 2..tables.len() {
                    overlap = overlap.max((tables[a][x] * tables[b][x]).abs());
                }
            }
        }
        let f = random_field(&t, 100 + k as u64);
        let mut r = Field::zeros(t.clone());
        for block in pou.blocks(&f).unwrap() {
            r = r.add(&block).unwrap();
        }
        recon = recon.max(r.sub(&f).unwrap().sup_norm() / f.sup_norm());
    }
    ensure(
        sum_err < 1e-12 && overlap == 0.0 && recon < 1e-10,
        format!("sum error {sum_err:.2e}, non-adjacent overlap {overlap:.1e}, reconstruction {recon:.2e}"),
    )
}

fn bony_exactness() -> Check {
    let t = torus(cubic(2), 3, 128);
    let pou = PartitionOfUnity::for_torus(&t).unwrap();
    let worst = (0..100u64)
        .into_par_iter()
        .map(|k| {
            let f = random_field(&t, 1000 + 2 * k);
            let g = random_field(&t, 1001 + 2 * k).map(|v| v * v - 0.5);
            let split = pou
                .paraproduct(&f, &g)
                .unwrap()
                .add(&pou.paraproduct(&g, &f).unwrap())
                .unwrap()
                .add(&pou.resonant(&f, &g).unwrap())
                .unwrap();
            f.mul(&g).unwrap().sub(&split).unwrap().sup_norm() / (f.sup_norm() * g.sup_norm())
        })
        .reduce(|| 0.0, f64::max);
    ensure(worst < 1e-10, format!("max relative defect {worst:.2e} over 100 pairs"))
}

fn multiplier_and_generator() -> Check {
    let mut notes = Vec::new();
    let srw = JumpMeasure::simple_random_walk(cubic(2));
    let t = torus(cubic(2), 3, 64);
    let l = srw.multiplier(&t).unwrap();
    let zero = srw.symbol(t.eps(), &[0.0, 0.0]);
    if zero != 0.0 || l[0] != 0.0 {
        return Err(format!("l(0) = {zero}"));
    }
    // sin(πs) ≥ 2√2 s on [0, 1/4] gives 8|x|² ≤ l ≤ π²|x|² on the quarter cell
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for (k, x) in t.frequencies().chunks(2).enumerate() {
        let inner = (0..2).all(|i| (x[i] * t.eps()).abs() <= 0.25);
        let r2 = x[0] * x[0] + x[1] * x[1];
        if inner && r2 > 0.0 {
            lo = lo.min(l[k] / r2);
            hi = hi.max(l[k] / r2);
        }
    }
    notes.push(format!("l/|x|² in [{lo:.3}, {hi:.3}]"));
    if !(lo >= 8.0 * (1.0 - 1e-12) && hi <= std::f64::consts::PI.powi(2) * (1.0 + 1e-12)) {
        return Err(notes.join("; "));
    }
    let hex = BravaisBasis::hexagonal();
    let mu_hex = JumpMeasure::new(
        hex.clone(),
        vec![
            Atom { g: vec![1, 0], kappa: 0.4 },
            Atom { g: vec![0, 1], kappa: 0.3 },
            Atom { g: vec![1, -1], kappa: 0.2 },
            Atom { g: vec![2, 1], kappa: 0.1 },
        ],
    )
    .unwrap();
    let th = torus(hex, 2, 32);
    let lh = mu_hex.multiplier(&th).unwrap();
    let mut lo_h = f64::INFINITY;
    for (k, x) in th.frequencies().chunks(2).enumerate() {
        let r2 = x[0] * x[0] + x[1] * x[1];
        let inner = (0..2).all(|i| (x[0] * th.basis().vector(i)[0] + x[1] * th.basis().vector(i)[1]).abs() * th.eps() <= 0.25);
        if inner && r2 > 0.0 {
            lo_h = lo_h.min(lh[k] / r2);
        }
    }
    notes.push(format!("hexagonal lower ratio {lo_h:.3}"));
    if !(lo_h > 0.0) {
        return Err(notes.join("; "));
    }
    let mut agree = 0.0f64;
    for (mu, tt, seed) in [(&srw, &t, 5u64), (&mu_hex, &th, 6)] {
        let f = random_field(tt, seed);
        let a = generator_apply(&f, mu).unwrap();
        let b = generator_apply_spectral(&f, mu).unwrap();
        agree = agree.max(a.sub(&b).unwrap().sup_norm() / a.sup_norm());
    }
    notes.push(format!("stencil vs spectral {agree:.2e}"));
    let half = srw.symbol(1.0, &[0.5, 0.0]);
    notes.push(format!("l¹((½,0)) = {half}"));
    ensure(agree < 1e-10 && (half - 1.0).abs() < 1e-14, notes.join("; "))
}

fn semigroup_smoothing() -> Check {
    let mu = JumpMeasure::simple_random_walk(cubic(2));
    let times: Vec<f64> = (0..13).map(|k| 10f64.powf(-3.0 + 0.25 * k as f64)).collect();
    let betas = [0.5, 1.0];
    let mut notes = Vec::new();
    let mut ok = true;
    let per_eps: Vec<Vec<f64>> = (2..=5u32)
        .map(|n| {
            let t = torus(cubic(2), n, 8 << n);
            let sups: Vec<Vec<f64>> = (1..=20u64)
                .into_par_iter()
                .map(|seed| {
                    let xi = sample_noise(&NoiseSpec::macro_noise(Law::Gaussian, seed), &t).unwrap();
                    let r = smoothing_ratios(&xi, &mu, &times, &betas, Exponent::Finite(2.0)).unwrap();
                    (0..betas.len())
                        .map(|b| r.iter().map(|row| row[b]).fold(0.0, f64::max))
                        .collect()
                })
                .collect();
            (0..betas.len())
                .map(|b| sups.iter().map(|s| s[b]).fold(0.0, f64::max))
                .collect()
        })
        .collect();
    for (b, beta) in betas.iter().enumerate() {
        let s: Vec<f64> = per_eps.iter().map(|v| v[b]).collect();
        let max = s.iter().copied().fold(0.0, f64::max);
        let min = s.iter().copied().fold(f64::INFINITY, f64::min);
        ok &= max / min <= 5.0 && min > 0.0;
        notes.push(format!(
            "beta {beta}: sup ratio over eps 2^-2..2^-5 = [{}], spread {:.2}",
            s.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(", "),
            max / min
        ));
    }
    ensure(ok, notes.join("; "))
}

/// Polynomial in one variable, lowest degree first.
#[derive(Clone, Debug)]
struct Poly(Vec<f64>);

impl WickValue for Poly {
    fn one() -> Self {
        Poly(vec![1.0])
    }
    fn mul(&self, other: &Self) -> Self {
        let mut out = vec![0.0; self.0.len() + other.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly(out)
    }
    fn sub_scaled(&self, c: f64, other: &Self) -> Self {
        let n = self.0.len().max(other.0.len());
        Poly((0..n)
            .map(|i| self.0.get(i).unwrap_or(&0.0) - c * other.0.get(i).unwrap_or(&0.0))
            .collect())
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

fn wick_hermite() -> Check {
    let oracle = IidMoments::standard(Law::Gaussian);
    let y = Poly(vec![0.0, 1.0]);
    let mut coeff_err = 0.0f64;
    for n in 1..=5 {
        let w = wick_product(&vec![y.clone(); n], &vec![0; n], &oracle).unwrap();
        let he = hermite(n);
        for i in 0..w.0.len().max(he.len()) {
            let a = w.0.get(i).copied().unwrap_or(0.0);
            let b = he.get(i).copied().unwrap_or(0.0);
            coeff_err = coeff_err.max((a - b).abs());
        }
    }
    let t = torus(cubic(2), 1, 8);
    let f: Vec<f64> = (0..t.len()).map(|k| ((k as f64) * 0.7).sin() + 0.3).collect();
    let spec = NoiseSpec::macro_noise(Law::Gaussian, 0);
    let m = spec.moments(&t).unwrap();
    let vol = t.cell_volume();
    let norm_sq = vol * f.iter().map(|v| v * v).sum::<f64>();
    // E[I₁(f)²] = |𝒢^ε|² Σ f(z)² E[ξ(z)²] from the moment oracle
    let exact = vol * vol * f.iter().map(|v| v * v).sum::<f64>() * m.single(2);
    let analytic_err = ((exact - norm_sq) / norm_sq).abs();
    let kernel = IntegralKernel::Dense { n: 1, values: f.clone() };
    let samples: Vec<f64> = (0..10_000u64)
        .into_par_iter()
        .map(|seed| {
            let xi = sample_noise(&NoiseSpec::macro_noise(Law::Gaussian, seed), &t).unwrap();
            multiple_integral(&kernel, &xi, &m).unwrap().powi(2)
        })
        .collect();
    let (mean, se) = mean_stderr(&samples);
    let z = (mean - norm_sq) / se;
    ensure(
        coeff_err < 1e-12 && analytic_err < 1e-12 && z.abs() < 3.0,
        format!(
            "Hermite coefficient error {coeff_err:.1e}; isometry exact error {analytic_err:.1e}; MC {mean:.5} vs {norm_sq:.5} ({z:+.2} sigma)"
        ),
    )
}

fn renormalization_constant() -> Check {
    let mu = JumpMeasure::simple_random_walk(cubic(2));
    let chi = ChiProfile::default();
    let ns: Vec<u32> = (3..=8).collect();
    let cs: Vec<f64> = ns
        .iter()
        .map(|&n| renorm_constant(&mu, &torus(cubic(2), n, 4 << n), &chi).unwrap())
        .collect();
    let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let (slope, _, r2) = linear_fit(&xs, &cs);
    let t = torus(cubic(2), 4, 128);
    let origin = t.origin_index();
    let vals: Vec<(f64, f64)> = (0..2000u64)
        .into_par_iter()
        .map(|seed| {
            let xi = sample_noise(&NoiseSpec::macro_noise(Law::Gaussian, seed), &t).unwrap();
            let e = build_enhanced(&xi, &mu, &chi).unwrap();
            (e.resonant_renormalized.values()[origin] + e.c_eps, e.c_eps)
        })
        .collect();
    let c = vals[0].1;
    let xs: Vec<f64> = vals.iter().map(|v| v.0).collect();
    let (mean, se) = mean_stderr(&xs);
    let z = (mean - c) / se;
    ensure(
        r2 > 0.99 && z.abs() < 4.0,
        format!(
            "fit over N = 3..8: slope {slope:.4} per log2(1/eps), R² = {r2:.6}; E[X⊙ξ](0) = {mean:.4} ± {se:.4} vs c = {c:.4} ({z:+.2} sigma)"
        ),
    )
}

fn solver_closed_forms() -> Check {
    let b = cubic(2);
    let mu = JumpMeasure::simple_random_walk(b.clone());
    let chi = ChiProfile::default();
    let t = torus(b.clone(), 3, 32);
    let xi = sample_noise(&NoiseSpec::macro_noise(Law::Gaussian, 11), &t).unwrap();
    let e = build_enhanced(&xi, &mu, &chi).unwrap();
    let heat = PamRun::macro_run(&e, &mu, Nonlinearity::Linear { c: 0.0 }, 0.125, 1.0 / 256.0, 8, true)
        .unwrap()
        .run()
        .unwrap();
    let mut heat_err = 0.0f64;
    for (time, s) in heat.times.iter().zip(&heat.snapshots) {
        let h = semigroup_apply(&Field::delta(t.clone()), *time, &mu).unwrap();
        heat_err = heat_err.max(s.sub(&h).unwrap().sup_norm() / h.sup_norm());
    }
    let e0 = build_enhanced(&Field::zeros(t.clone()), &mu, &chi).unwrap();
    let lin = PamRun::macro_run(&e0, &mu, Nonlinearity::Linear { c: 1.0 }, 0.25, 1.0 / 128.0, 4, true)
        .unwrap()
        .run()
        .unwrap();
    let mut lin_err = 0.0f64;
    for (time, s) in lin.times.iter().zip(&lin.snapshots) {
        let h = semigroup_apply(&Field::delta(t.clone()), *time, &mu)
            .unwrap()
            .scaled((-e0.c_eps * time).exp());
        lin_err = lin_err.max(s.sub(&h).unwrap().sup_norm() / h.sup_norm());
    }
    let f = Nonlinearity::Logistic { c: 3.0 };
    let terminal = |dt: f64| {
        PamRun::macro_run(&e, &mu, f.clone(), 1.0 / 16.0, dt, 1, true)
            .unwrap()
            .run()
            .unwrap()
            .terminal()
            .unwrap()
            .clone()
    };
    let (a, bb, c) = (terminal(1.0 / 512.0), terminal(1.0 / 1024.0), terminal(1.0 / 2048.0));
    let order = (a.sub(&bb).unwrap().lp_norm(2.0) / bb.sub(&c).unwrap().lp_norm(2.0)).log2();
    ensure(
        heat_err < 1e-10 && lin_err < 1e-6 && order >= 0.9,
        format!("F = 0 vs semigroup {heat_err:.1e}; linear closed form {lin_err:.1e}; dt order {order:.3}"),
    )
}

fn noise_regularity() -> Check {
    let mu = JumpMeasure::simple_random_walk(cubic(2));
    let chi = ChiProfile::default();
    let params = RegularityParams::default();
    let p_xi = 40.0;
    if let Err(e) = params.validate(p_xi) {
        return Err(format!("parameter set rejected: {e}"));
    }
    let medians: Vec<f64> = (3..=5u32)
        .map(|n| {
            let t = torus(cubic(2), n, 8 << n);
            let ms: Vec<f64> = (1..=100u64)
                .into_par_iter()
                .map(|seed| {
                    let xi = sample_noise(&NoiseSpec::macro_noise(Law::Gaussian, seed), &t).unwrap();
                    let e = build_enhanced(&xi, &mu, &chi).unwrap();
                    regularity_terms(&e, &params).unwrap().into_iter().fold(0.0, f64::max)
                })
                .collect();
            median(&ms)
        })
        .collect();
    let max = medians.iter().copied().fold(0.0, f64::max);
    let min = medians.iter().copied().fold(f64::INFINITY, f64::min);
    ensure(
        max / min - 1.0 < 0.5,
        format!(
            "alpha {}, kappa {}, sigma {}: median M_eps at eps 2^-3..2^-5 = [{}], variation {:.1}%",
            params.alpha,
            params.kappa,
            params.sigma,
            medians.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(", "),
            100.0 * (max / min - 1.0)
        ),
    )
}

fn universality_trend() -> Check {
    let b = cubic(2);
    let mu = JumpMeasure::simple_random_walk(b.clone());
    let chi = ChiProfile::default();
    let f = Nonlinearity::Logistic { c: 3.0 };
    let pam = PamConfig {
        t_end: 0.25,
        dt_scaled: Some(1.0 / 16.0),
        snapshots: 1,
        ..PamConfig::default()
    };
    let seeds: Vec<u64> = (1..=64).collect();
    let mut gaps = Vec::new();
    let mut renorm = Vec::new();
    let mut raw = Vec::new();
    let mut notes = Vec::new();
    for n in 2..=4u32 {
        let t = torus(b.clone(), n, 128);
        let cells: Vec<UniversalityCell> = seeds
            .par_iter()
            .map(|&s| universality_cell(&t, &mu, Law::Gaussian, s, &f, &pam, &chi).unwrap())
            .collect();
        let g: Vec<f64> = cells.iter().filter_map(|c| c.gap).collect();
        let r: Vec<f64> = cells.iter().filter_map(|c| c.mass_renormalized).collect();
        let u: Vec<f64> = cells.iter().filter_map(|c| c.mass_unrenormalized).collect();
        if g.len() < 20 || r.len() < 20 || u.len() < 20 {
            return Err(format!("fewer than 20 surviving seeds at eps = 2^-{n}"));
        }
        gaps.push(median(&g));
        renorm.push(median(&r));
        raw.push(median(&u));
        notes.push(format!(
            "eps 2^-{n}: gap {:.4}, mass renormalized {:.4}, unrenormalized {:.3}",
            gaps[gaps.len() - 1],
            renorm[renorm.len() - 1],
            raw[raw.len() - 1]
        ));
    }
    let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
    let growth: Vec<f64> = raw.windows(2).map(|w| w[1] / w[0]).collect();
    let rmax = renorm.iter().copied().fold(0.0, f64::max);
    let rmin = renorm.iter().copied().fold(f64::INFINITY, f64::min);
    notes.push(format!(
        "unrenormalized growth per halving [{}], renormalized spread {:.2}",
        growth.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(", "),
        rmax / rmin
    ));
    ensure(
        decreasing && growth.iter().all(|&g| g >= 2.0) && rmax / rmin <= 3.0,
        notes.join("; "),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check, Duration); 10] = [
        ("fourier identities", fourier_identities, Duration::from_secs(10)),
        ("partition of unity", partition_of_unity, Duration::from_secs(5)),
        ("Bony exactness", bony_exactness, Duration::from_secs(30)),
        ("multiplier and generator", multiplier_and_generator, Duration::from_secs(5)),
        ("semigroup smoothing", semigroup_smoothing, Duration::from_secs(120)),
        ("Wick and Hermite", wick_hermite, Duration::from_secs(30)),
        ("renormalization constant", renormalization_constant, Duration::from_secs(300)),
        ("solver closed forms", solver_closed_forms, Duration::from_secs(120)),
        ("noise regularity", noise_regularity, Duration::from_secs(600)),
        ("universality trend", universality_trend, Duration::from_secs(1800)),
    ];
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let over = elapsed > *budget;
        let (status, msg) = match (&result, over) {
            (Ok(m), false) => ("PASS", m.clone()),
            (Ok(m), true) => ("FAIL", format!("{m}; exceeded {}s budget", budget.as_secs())),
            (Err(m), _) => ("FAIL", m.clone()),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("{status} [{:>2}] {name} ({:.1}s): {msg}", i + 1, elapsed.as_secs_f64());
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
