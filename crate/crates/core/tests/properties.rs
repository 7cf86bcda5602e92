use cvtag::keyrate::{bob_entropy, holevo_bound, mutual_information, perfect_rate};
use cvtag::pipeline::{
    detection_stage, effective_params, lossy_channel_stage, modulation_stage, output_moments, phase_rotation_stage,
    simulate_moments, ElectronicNoise, Fluctuation, PresetShape,
};
use cvtag::tagging::{mapped_effective_channel, rate_with_tagging, untagged_probability};
use cvtag::{CutoffPlan, EffectiveChannel, Pipeline, SystemParams, TaggedRateInput};
use proptest::prelude::*;
use proptest::test_runner::RngSeed;

fn params() -> impl Strategy<Value = SystemParams<f64>> {
    (0.3..0.99f64, 0.0..0.2f64, 1.0..40.0f64, 0.85..1.0f64)
        .prop_map(|(eta, v_el, va, beta)| SystemParams::new(eta, 0.0, v_el, va, beta).unwrap())
}

fn step_up(x: f64, frac: f64) -> f64 {
    x + frac * (1.0 - x)
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 200,
        rng_seed: RngSeed::Fixed(0x7a6),
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn rate_falls_with_excess_noise(p in params(), t in 0.01..1.0f64, eps in 0.0..0.1f64, d in 1e-4..0.05f64) {
        let lo = perfect_rate(&p, &EffectiveChannel::new(t, eps).unwrap()).unwrap();
        let hi = perfect_rate(&p, &EffectiveChannel::new(t, eps + d).unwrap()).unwrap();
        prop_assert!(hi <= lo + 1e-12);
    }

    // The rate itself may rise: trusted detector noise can hurt Eve more
    // than Bob at high channel noise.
    #[test]
    fn electronic_noise_lowers_information_and_raises_entropy(
        p in params(), t in 0.01..1.0f64, eps in 0.0..0.1f64, d in 1e-4..0.1f64,
    ) {
        let ch = EffectiveChannel::new(t, eps).unwrap();
        let noisier = SystemParams { v_el: p.v_el + d, ..p };
        prop_assert!(mutual_information(&noisier, &ch).unwrap() < mutual_information(&p, &ch).unwrap());
        prop_assert!(bob_entropy(&noisier, &ch).unwrap() > bob_entropy(&p, &ch).unwrap());
    }

    #[test]
    fn positive_rate_grows_with_transmittance(p in params(), t in 0.01..0.99f64, eps in 0.0..0.05f64, f in 0.01..1.0f64) {
        let lo = perfect_rate(&p, &EffectiveChannel::new(t, eps).unwrap()).unwrap();
        let hi = perfect_rate(&p, &EffectiveChannel::new(step_up(t, f), eps).unwrap()).unwrap();
        prop_assume!(lo > 0.0);
        prop_assert!(hi >= lo - 1e-12);
    }

    #[test]
    fn rate_grows_with_beta(p in params(), t in 0.01..1.0f64, eps in 0.0..0.1f64, f in 0.01..1.0f64) {
        let ch = EffectiveChannel::new(t, eps).unwrap();
        let better = SystemParams { beta: step_up(p.beta, f), ..p };
        prop_assert!(perfect_rate(&better, &ch).unwrap() >= perfect_rate(&p, &ch).unwrap() - 1e-12);
    }

    #[test]
    fn mapping_never_lowers_eves_information(
        eta in 0.3..0.99f64, t in 0.01..0.9f64, v1 in 0.0..0.004f64, k in 1.0..1.3f64,
    ) {
        let p = SystemParams::new(eta, 0.02, 0.02, 18.0, 0.956).unwrap();
        let pipeline = Pipeline::preset(&p, t, &PresetShape::new(v1, 0.0)).unwrap();
        let eff = effective_params(&pipeline).unwrap();
        let sys = eff.system(p.beta).unwrap();
        let plain = holevo_bound(&sys, &eff.channel().unwrap()).unwrap();
        let m = mapped_effective_channel(&eff, k).unwrap();
        let mapped = holevo_bound(&SystemParams { modulation_variance: m.modulation_variance, ..sys }, &m.channel).unwrap();
        prop_assert!(mapped >= plain - 1e-12);
    }

    #[test]
    fn p0_rises_with_each_cutoff(v1 in 1e-4..0.004f64, v2 in 1e-4..0.002f64, k in 1.0..1.3f64, dk in 0.0..0.1f64) {
        let p = SystemParams::new(0.6, 0.02, 0.02, 18.0, 0.956).unwrap();
        let pipeline = Pipeline::preset(&p, 0.3, &PresetShape::new(v1, v2)).unwrap();
        let base = untagged_probability(&pipeline, &CutoffPlan::new(k, 1.0, k).unwrap());
        prop_assert!(untagged_probability(&pipeline, &CutoffPlan::new(k + dk, 1.0, k).unwrap()) >= base);
        prop_assert!(untagged_probability(&pipeline, &CutoffPlan::new(k, 1.0, k + dk).unwrap()) >= base);
    }

    #[test]
    fn fixed_plan_rate_falls_with_fluctuations(
        t in 0.01..0.9f64, v1 in 0.0..0.004f64, v2 in 0.0..0.0015f64, f in 1.0..2.0f64, k in 1.0..1.3f64,
    ) {
        let p = SystemParams::new(0.6, 0.02, 0.02, 18.0, 0.956).unwrap();
        let plan = CutoffPlan::new(k, 1.0, k).unwrap();
        let at = |v1: f64, v2: f64| {
            rate_with_tagging(&TaggedRateInput {
                params: p,
                pipeline: Pipeline::preset(&p, t, &PresetShape::new(v1, v2)).unwrap(),
                plan,
            })
            .unwrap()
            .rate
        };
        let base = at(v1, v2);
        prop_assert!(at(v1 * f, v2) <= base + 1e-12);
        prop_assert!(at(v1, (v2 * f).min(0.002)) <= base + 1e-12);
    }
}

/// A random pipeline drawn from every stage constructor, including the
/// uniform family, the literal noise convention and phase rotation.
fn random_pipeline(i: u64) -> Pipeline<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1000 + i);
    let family = if rng.random_bool(0.5) {
        Fluctuation::Gaussian
    } else {
        Fluctuation::Uniform
    };
    let eta: f64 = rng.random_range(0.4..0.9);
    let v2_cap = ((1.0 - eta.sqrt()) / 6.0).powi(2);
    let channel = if rng.random_bool(0.2) {
        phase_rotation_stage(rng.random_range(-0.5..0.5), rng.random_range(1.0..3.0)).unwrap()
    } else {
        lossy_channel_stage(rng.random_range(0.01..0.95), rng.random_range(0.0..0.1)).unwrap()
    };
    let noise = if rng.random_bool(0.5) {
        ElectronicNoise::Calibrated
    } else {
        ElectronicNoise::Literal
    };
    Pipeline::new(
        modulation_stage(rng.random_range(0.0..0.01), family).unwrap(),
        channel,
        detection_stage(
            eta,
            rng.random_range(0.0..0.3),
            rng.random_range(0.0..v2_cap),
            family,
            noise,
        )
        .unwrap(),
        rng.random_range(1.0..30.0),
    )
    .unwrap()
}

#[test]
fn simulation_matches_moment_recursion_on_random_pipelines() {
    let n = 200_000;
    let mut fails = 0;
    for i in 0..50 {
        let p = random_pipeline(i);
        let exact = output_moments(&p);
        let emp = simulate_moments(&p, n, i);
        let zg = (emp.gain() - exact.gain).abs() / emp.gain_stderr();
        let zv = (emp.var_out() - exact.variance).abs() / emp.var_out_stderr();
        // 100 two-sided tests at 4 sigma: a single miss is already unlikely
        if zg > 4.0 || zv > 4.0 {
            fails += 1;
            eprintln!("pipeline {i}: gain {zg:.2} sigma, variance {zv:.2} sigma");
        }
    }
    assert_eq!(fails, 0);
}

#[test]
fn effective_channel_rejects_phase_rotation() {
    let p = Pipeline::new(
        modulation_stage(0.001, Fluctuation::Gaussian).unwrap(),
        phase_rotation_stage(0.2, 1.5).unwrap(),
        detection_stage(0.6, 0.02, 0.001, Fluctuation::Gaussian, ElectronicNoise::Calibrated).unwrap(),
        18.0,
    )
    .unwrap();
    assert!(matches!(effective_params(&p), Err(cvtag::Error::UnsupportedShape(_))));
}
