//! Property and oracle tests for the spin dynamics, the field model and readout.

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rapid_core::measurement::{basis_rotation, outcome_probs, photon_means, povm_build, sample_readout, shot_log_ratio, BRIGHTNESS};
use rapid_core::quantum::{
    apply_pi_pulse, build_hamiltonian, cptp_step, lindblad_propagate, ControlSegment, DecoherenceRates, DensityMatrix, IDX_MINUS, IDX_PLUS,
    IDX_ZERO,
};
use rapid_core::signal::{
    baseband_signal, ou_step, sample_field_trajectory, steering_vector, ArrayGeometry, Envelope, FieldModel, NoiseConfig, NoiseState, OUState,
    SignalParams,
};

fn ket(c: [(f64, f64); 3]) -> DensityMatrix {
    let v = Vector3::from_fn(|i, _| C64::new(c[i].0, c[i].1));
    DensityMatrix::pure(&v.normalize())
}

fn ket_strategy() -> impl Strategy<Value = DensityMatrix> {
    prop::array::uniform3((-1.0..1.0f64, -1.0..1.0f64)).prop_filter("non-zero", |c| c.iter().any(|(a, b)| a.abs() + b.abs() > 1e-3)).prop_map(ket)
}

fn assert_physical(rho: &DensityMatrix) -> Result<(), TestCaseError> {
    prop_assert!((rho.trace() - C64::new(1.0, 0.0)).norm() < 1e-10);
    prop_assert!(rho.hermiticity_error() < 1e-12);
    prop_assert!(rho.min_eigenvalue() > -1e-9);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn hamiltonian_is_hermitian(bz in -5.0..5.0f64, ux in -130.0..130.0f64, uy in -130.0..130.0f64, det in -1.0..1.0f64) {
        let h = build_hamiltonian(bz, [ux, uy], det);
        prop_assert!((h - h.adjoint()).norm() < 1e-14);
    }

    #[test]
    fn propagation_keeps_states_physical(
        rho in ket_strategy(),
        t2 in 1.0..1000.0f64,
        t1_over_t2 in 0.5..100.0f64,
        bz in -1.0..1.0f64,
        u in prop::array::uniform2(-2.0..2.0f64),
        t in 0.0..400.0f64,
    ) {
        let rates = DecoherenceRates::from_times(t1_over_t2 * t2, t2);
        let out = lindblad_propagate(&rho, &build_hamiltonian(bz, u, 0.0), &rates, t).unwrap();
        assert_physical(&out)?;
    }

    #[test]
    fn sensing_step_keeps_states_physical(
        rho in ket_strategy(),
        n_pulses in 0usize..9,
        duration in 1.0..200.0f64,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dt = duration / 16.0;
        let field: Vec<f64> = (0..16).map(|_| rng.random_range(-0.05..0.05)).collect();
        let seg = ControlSegment::cpmg(duration, n_pulses, [rng.random_range(-0.5..0.5), 0.0]);
        let out = cptp_step(&rho, &seg, &field, &DecoherenceRates::from_times(5000.0, 200.0), dt, 0.0).unwrap();
        assert_physical(&out)?;
    }

    #[test]
    fn two_halves_compose(rho in ket_strategy(), duration in 2.0..200.0f64, u in prop::array::uniform2(-0.5..0.5f64), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 20;
        let dt = duration / n as f64;
        let field: Vec<f64> = (0..n).map(|_| rng.random_range(-0.05..0.05)).collect();
        let rates = DecoherenceRates::from_times(5000.0, 200.0);
        let whole = cptp_step(&rho, &ControlSegment::cpmg(duration, 0, u), &field, &rates, dt, 0.0).unwrap();
        let half = ControlSegment::cpmg(duration / 2.0, 0, u);
        let first = cptp_step(&rho, &half, &field[..n / 2], &rates, dt, 0.0).unwrap();
        let second = cptp_step(&first, &half, &field[n / 2..], &rates, dt, 0.0).unwrap();
        prop_assert!((whole.mat - second.mat).norm() < 1e-8);
    }

    #[test]
    fn centred_echo_cancels_static_field(bz in -0.1..0.1f64, duration in 1.0..300.0f64) {
        let rho = DensityMatrix::sensing_superposition(0.0);
        let seg = ControlSegment::cpmg(duration, 1, [0.0, 0.0]);
        let out = cptp_step(&rho, &seg, &[bz; 8], &DecoherenceRates::none(), duration / 8.0, 0.0).unwrap();
        prop_assert!(out.mat[(IDX_ZERO, IDX_MINUS)].arg().abs() < 1e-8);
    }

    #[test]
    fn povm_is_complete_and_positive(eta in 0.0..=1.0f64, beta in -3.2..3.2f64) {
        let p = povm_build(eta, basis_rotation(beta));
        prop_assert!(p.completeness_error() < 1e-12);
        prop_assert!(p.min_eigenvalue() >= -1e-12);
    }

    #[test]
    fn outcome_probabilities_form_a_simplex(rho in ket_strategy(), eta in 0.0..=1.0f64, beta in -3.2..3.2f64) {
        let p = outcome_probs(&rho, &povm_build(eta, basis_rotation(beta)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn steering_vectors_are_unit_and_conjugate_symmetric(theta in -1.5..1.5f64, n in 1usize..33, d in 0.05..2.0f64) {
        let g = ArrayGeometry::ula(n, d);
        let a = steering_vector(theta, &g);
        let b = steering_vector(-theta, &g);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x.norm() - 1.0).abs() < 1e-12);
            prop_assert!((x.conj() - y).norm() < 1e-12);
        }
    }

    #[test]
    fn phasor_modulus_is_the_amplitude(a in 0.0..100.0f64, fc in -1.0..1.0f64, phi in -3.1..3.1f64, t in 0.0..1000.0f64) {
        let s = baseband_signal(&SignalParams::new(a, fc, phi, 0.0), t, &Envelope::Constant, 0.0);
        prop_assert!((s.norm() - a).abs() < 1e-9 * a.max(1.0));
    }
}

#[test]
fn single_quantum_coherence_decays_at_one_over_t2() {
    let mut m = Matrix3::<C64>::zeros();
    m[(IDX_PLUS, IDX_PLUS)] = C64::new(0.5, 0.0);
    m[(IDX_ZERO, IDX_ZERO)] = C64::new(0.5, 0.0);
    m[(IDX_ZERO, IDX_PLUS)] = C64::new(0.5, 0.0);
    m[(IDX_PLUS, IDX_ZERO)] = C64::new(0.5, 0.0);
    let rho = DensityMatrix::from_matrix(m);
    let out = lindblad_propagate(&rho, &Matrix3::zeros(), &DecoherenceRates::from_times(f64::INFINITY, 200.0), 200.0).unwrap();
    assert!((out.mat[(IDX_ZERO, IDX_PLUS)].norm() - 0.5 * (-1.0f64).exp()).abs() < 1e-6);
}

#[test]
fn pi_pulse_conjugates_the_sensing_coherence() {
    let rho = DensityMatrix::sensing_superposition(0.7);
    let flipped = apply_pi_pulse(&rho);
    let before = rho.mat[(IDX_ZERO, IDX_MINUS)];
    let after = flipped.mat[(IDX_ZERO, IDX_MINUS)];
    assert!((after.norm() - before.norm()).abs() < 1e-12);
    assert!((after - before.conj()).norm() < 1e-12);
}

#[test]
fn ou_large_step_draws_from_the_stationary_law() {
    let noise = NoiseConfig { sigma_w2: 0.0, sigma_n2: 4.0, tau_c: 1.0 };
    let var = noise.stationary_var();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 1_000_000;
    let mut s = OUState::at_rest(&noise);
    let mut sq = Vec::with_capacity(n);
    for _ in 0..n {
        s = ou_step(s, 1e6, &mut rng);
        sq.push(s.value * s.value);
    }
    let m = sq.iter().sum::<f64>() / n as f64;
    let sd = (sq.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    assert!((m - var).abs() <= 3.0 * sd / (n as f64).sqrt(), "variance {m} vs {var}");
}

#[test]
fn ou_without_drive_relaxes_deterministically() {
    let mut s = OUState { value: 3.0, tau_c: 2.0, stationary_var: 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    s = ou_step(s, 2.0, &mut rng);
    assert!((s.value - 3.0 * (-1.0f64).exp()).abs() < 1e-12);
}

#[test]
fn trajectory_variance_adds_white_and_coloured_parts() {
    let noise = NoiseConfig { sigma_w2: 3.0, sigma_n2: 4.0, tau_c: 1.0 };
    let model = FieldModel::single(SignalParams::new(0.0, 0.0, 0.0, 0.0), noise);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    // one sample per trajectory, so the draws are independent
    let samples: Vec<f64> = (0..200_000)
        .map(|_| {
            let mut state = NoiseState::new(&noise, &mut rng);
            sample_field_trajectory(&model, 0, 0.0, 0.1, 0.1, &mut state, &mut rng)[0]
        })
        .collect();
    let n = samples.len() as f64;
    let sq: Vec<f64> = samples.iter().map(|x| x * x).collect();
    let m = sq.iter().sum::<f64>() / n;
    let sd = (sq.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((m - noise.total_var()).abs() <= 3.0 * sd / n.sqrt(), "variance {m} vs {}", noise.total_var());
}

#[test]
fn null_trajectories_do_not_depend_on_the_signal() {
    let noise = NoiseConfig { sigma_w2: 1.0, sigma_n2: 1.0, tau_c: 1.0 };
    let run = |xi: SignalParams| {
        let mut model = FieldModel::single(xi, noise);
        model.signal_present = false;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut state = NoiseState::new(&noise, &mut rng);
        sample_field_trajectory(&model, 0, 0.0, 10.0, 0.1, &mut state, &mut rng)
    };
    assert_eq!(run(SignalParams::new(10.0, 0.1, 0.3, 0.0)), run(SignalParams::new(50.0, -0.2, 2.0, 0.4)));
}

#[test]
fn quiet_null_trajectory_is_zero() {
    let model = FieldModel::single(SignalParams::new(0.0, 0.0, 0.0, 0.0), NoiseConfig { sigma_w2: 0.0, sigma_n2: 0.0, tau_c: 1.0 });
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut state = NoiseState::new(&model.noise, &mut rng);
    assert!(sample_field_trajectory(&model, 0, 0.0, 5.0, 0.5, &mut state, &mut rng).iter().all(|&b| b == 0.0));
}

#[test]
fn photon_count_mean_matches_brightness() {
    let probs = [0.2, 0.5, 0.3];
    let s = 4.0;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let n = 100_000;
    let y: Vec<f64> = (0..n).map(|_| sample_readout(&probs, s, &mut rng).photons_y as f64).collect();
    let m = y.iter().sum::<f64>() / n as f64;
    let sd = (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let expect: f64 = probs.iter().zip(BRIGHTNESS).map(|(p, c)| p * s * c).sum();
    assert!((m - expect).abs() <= 3.0 * sd / (n as f64).sqrt(), "mean photons {m} vs {expect}");
    assert_eq!(photon_means(0.0), [0.0; 3]);
}

#[test]
fn log_likelihood_ratio_has_the_kl_sign() {
    let p1 = [0.25, 0.45, 0.30];
    let p0 = [0.30, 0.40, 0.30];
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mean = |p: &[f64; 3], rng: &mut ChaCha8Rng| (0..10_000).map(|_| shot_log_ratio(&sample_readout(p, 3.0, rng), &p1, &p0).unwrap()).sum::<f64>() / 10_000.0;
    assert!(mean(&p1, &mut rng) >= 0.0);
    assert!(mean(&p0, &mut rng) <= 0.0);
}
