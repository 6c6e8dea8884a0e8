use rayon::prelude::*;

use paralat::calculus::Weight;
use paralat::diffusion::JumpMeasure;
use paralat::lattice::{BravaisBasis, BravaisTorus, Torus};
use paralat::pam::{paracontrolled_decompose, rescale_micro_to_macro, Nonlinearity, PamRun};
use paralat::stochastic::{
    build_enhanced, mean_stderr, multiple_integral, sample_noise, ChiProfile, IntegralKernel, Law, NoiseSpec,
};

fn square() -> BravaisBasis {
    BravaisBasis::cubic(2).unwrap()
}

/// Off-diagonal second-chaos kernel `g(z)g(w)1_{z≠w}` of a fixed smooth `g`.
fn kernel(t: &Torus) -> (IntegralKernel, f64) {
    let len = t.len();
    let g: Vec<f64> = t
        .positions()
        .chunks(2)
        .map(|x| (-(x[0] * x[0] + x[1] * x[1])).exp())
        .collect();
    let mut values = vec![0.0; len * len];
    for z in 0..len {
        for w in 0..len {
            if z != w {
                values[z * len + w] = g[z] * g[w];
            }
        }
    }
    let vol = t.cell_volume();
    let norm = (vol * vol * values.iter().map(|v| v * v).sum::<f64>()).sqrt();
    (IntegralKernel::Dense { n: 2, values }, norm)
}

#[test]
fn second_chaos_moments_are_scale_uniform() {
    for law in [Law::Gaussian, Law::Rademacher] {
        let mut l2 = Vec::new();
        let mut l4 = Vec::new();
        for n in 1..=3u32 {
            let t = BravaisTorus::shared(square(), n, 2 << n).unwrap();
            let (k, norm) = kernel(&t);
            let moments = NoiseSpec::macro_noise(law, 0).moments(&t).unwrap();
            let samples: Vec<f64> = (0..4000u64)
                .into_par_iter()
                .map(|s| {
                    let xi = sample_noise(&NoiseSpec::macro_noise(law, s), &t).unwrap();
                    multiple_integral(&k, &xi, &moments).unwrap() / norm
                })
                .collect();
            let sq: Vec<f64> = samples.iter().map(|v| v * v).collect();
            let (m2, se2) = mean_stderr(&sq);
            // symmetric off-diagonal kernel: E[𝓘₂f²] = 2‖f‖²
            assert!((m2 - 2.0).abs() < 4.0 * se2, "{law:?} N = {n}: {m2} ± {se2}");
            l2.push(m2.sqrt());
            l4.push((samples.iter().map(|v| v.powi(4)).sum::<f64>() / samples.len() as f64).powf(0.25));
        }
        let max = l4.iter().copied().fold(0.0, f64::max);
        let min = l4.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(max / min < 1.3, "{law:?}: {l4:?}");
        // hypercontractivity: ‖𝓘₂f‖_4 ≤ 3‖𝓘₂f‖_2
        assert!(l4.iter().zip(&l2).all(|(a, b)| a <= &(3.0 * b)), "{law:?}: {l4:?} {l2:?}");
    }
}

#[test]
fn shared_noise_micro_run_matches_macro_run_across_scales() {
    let mu = JumpMeasure::simple_random_walk(square());
    let chi = ChiProfile::default();
    let f = Nonlinearity::Logistic { c: 3.0 };
    for n in 1..=3u32 {
        let m = 8 << n;
        let eps = 2f64.powi(-(n as i32));
        let macro_t = BravaisTorus::shared(square(), n, m).unwrap();
        let micro_t = BravaisTorus::shared(square(), 0, m).unwrap();
        let xi = sample_noise(&NoiseSpec::macro_noise(Law::Rademacher, 77), &macro_t).unwrap();
        let e = build_enhanced(&xi, &mu, &chi).unwrap();
        let mean = -f.deriv0() * e.c_eps * eps * eps;
        let eta = sample_noise(&NoiseSpec::micro_noise(Law::Rademacher, 77, eps, mean), &micro_t).unwrap();
        let dt = eps * eps / 16.0;
        let a = PamRun::macro_run(&e, &mu, f.clone(), 0.125, dt, 4, true).unwrap().run().unwrap();
        let b = PamRun::micro_run(&eta, mean, &mu, f.clone(), eps, 0.125 / (eps * eps), 1.0 / 16.0, 4)
            .unwrap()
            .run()
            .unwrap();
        let (u, times) = rescale_micro_to_macro(&b.snapshots, &b.times, &macro_t).unwrap();
        for ((x, y), (s, r)) in a.snapshots.iter().zip(&u).zip(a.times.iter().zip(&times)) {
            assert!((s - r).abs() < 1e-12);
            assert!(x.sub(y).unwrap().sup_norm() <= 1e-9 * x.sup_norm(), "N = {n}");
        }
    }
}

#[test]
fn paracontrolled_remainder_stays_bounded_along_the_run() {
    let mu = JumpMeasure::simple_random_walk(square());
    let t = BravaisTorus::shared(square(), 4, 64).unwrap();
    let xi = sample_noise(&NoiseSpec::macro_noise(Law::Gaussian, 5), &t).unwrap();
    let e = build_enhanced(&xi, &mu, &ChiProfile::default()).unwrap();
    let out = PamRun::macro_run(&e, &mu, Nonlinearity::Logistic { c: 3.0 }, 0.25, 1.0 / 1024.0, 16, true)
        .unwrap()
        .run()
        .unwrap();
    let (_, diag) =
        paracontrolled_decompose(&out.snapshots, &out.times, &e.x, 3.0, 0.4, Weight::Polynomial { kappa: 0.06 })
            .unwrap();
    let ratios: Vec<f64> = diag[1..].iter().map(|d| d.ratio).collect();
    assert!(ratios.iter().all(|r| r.is_finite() && *r > 0.0), "{ratios:?}");
    let first_half = ratios[..8].iter().copied().fold(0.0, f64::max);
    let second_half = ratios[8..].iter().copied().fold(0.0, f64::max);
    assert!(second_half <= 2.0 * first_half, "{ratios:?}");
}
