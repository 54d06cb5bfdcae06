use num_complex::Complex64;
use oam_memory::eit::*;
use oam_memory::mode::{bloch_state, Cardinal};
use proptest::prelude::*;
use rustfft::FftPlanner;

fn calibrated(p: LambdaParams) -> LambdaParams {
    p.with_control(calibrate_control(200e-9, &p).unwrap())
}

/// Applies the linear-response transfer function to the sampled input in the
/// frequency domain (fields carry `e^{-i δ t}`).
fn frequency_domain_output(times: &[f64], input: &[Complex64], p: &LambdaParams) -> Vec<Complex64> {
    let dt = times[1] - times[0];
    let n = (4 * input.len()).next_power_of_two();
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    buf[..input.len()].copy_from_slice(input);
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let signed = if k < n / 2 { k as f64 } else { k as f64 - n as f64 };
        let omega = 2.0 * std::f64::consts::PI * signed / (n as f64 * dt);
        *v *= transfer_function(-omega, p) / n as f64;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.truncate(input.len());
    buf
}

#[test]
fn slow_light_matches_linear_response() {
    let p = calibrated(LambdaParams::default());
    let run = simulate_storage(&PulseShape::gaussian(300e-9), &ControlTimeline::slow_light(), &p).unwrap();
    let oracle = frequency_domain_output(&run.times, &run.input, &p);
    let peak = oracle.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let worst = run
        .output
        .iter()
        .zip(&oracle)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    assert!(worst < 2e-3 * peak, "max deviation {:.2e} of peak", worst / peak);
    assert!((run.channel.delay / 200e-9 - 1.0).abs() < 0.1, "delay {}", run.channel.delay);
    assert_eq!(run.retrieved, 0.0);
    assert!(run.leaked < 1.0 && run.leaked > 0.7);
}

#[test]
fn energy_is_accounted_for() {
    let p = calibrated(LambdaParams::default());
    for tl in [
        ControlTimeline::default(),
        ControlTimeline::slow_light(),
        ControlTimeline {
            shape: RampShape::Linear,
            ramp_down_start: Some(-80e-9),
            ..Default::default()
        },
    ] {
        let run = simulate_storage(&PulseShape::default(), &tl, &p).unwrap();
        assert!(run.balance_error().abs() < 1e-3, "{tl:?}: {}", run.balance_error());
        assert!((run.input_energy - 1.0).abs() < 1e-6);
    }
}

#[test]
fn output_is_linear_in_input_amplitude() {
    let p = calibrated(LambdaParams::default());
    let tl = ControlTimeline::default();
    let one = simulate_storage(&PulseShape::default(), &tl, &p).unwrap();
    let four = simulate_storage(&PulseShape::default().with_mean_photon_number(4.0), &tl, &p).unwrap();
    assert_eq!(one.output.len(), four.output.len());
    let peak = one.output.iter().map(|v| v.norm()).fold(0.0, f64::max);
    for (a, b) in one.output.iter().zip(&four.output) {
        assert!((2.0 * a - b).norm() <= 1e-9 * peak);
    }
    assert!((four.retrieved / one.retrieved - 4.0).abs() < 1e-9);
}

#[test]
fn efficiency_grows_with_optical_depth_at_fixed_delay() {
    let mut last = 0.0;
    for d in [5.0, 10.0, 20.0, 40.0] {
        let p = calibrated(LambdaParams {
            optical_depth: d,
            ..Default::default()
        });
        let eff = simulate_storage(&PulseShape::default(), &ControlTimeline::default(), &p)
            .unwrap()
            .channel
            .efficiency;
        assert!(eff > last, "OD {d}: {eff} after {last}");
        last = eff;
    }
}

#[test]
fn long_pulse_mostly_leaks() {
    let p = calibrated(LambdaParams::default());
    let run = simulate_storage(&PulseShape::half_gaussian(5e-6), &ControlTimeline::default(), &p).unwrap();
    assert!(run.channel.leak_fraction > 0.8, "leak {}", run.channel.leak_fraction);
    assert!(run.channel.efficiency < 0.1, "eff {}", run.channel.efficiency);
}

#[test]
fn default_grid_is_converged() {
    let p = calibrated(LambdaParams::default());
    let tl = ControlTimeline::default();
    let pulse = PulseShape::default();
    let coarse = simulate_storage(&pulse, &tl, &p).unwrap();
    let fine = simulate_storage_with(
        &pulse,
        &tl,
        &p,
        &SolverGrid {
            nz: 400,
            dt: Some(coarse.dt / 2.0),
        },
    )
    .unwrap();
    let rel = (coarse.channel.efficiency / fine.channel.efficiency - 1.0).abs();
    assert!(rel < 0.01, "refinement changed efficiency by {rel}");
}

#[test]
fn delay_scales_with_optical_depth_and_window_with_control_power() {
    let p = calibrated(LambdaParams::default());
    let double = LambdaParams {
        optical_depth: 30.0,
        ..p
    };
    let ratio = group_delay(&double) / group_delay(&p);
    assert!((ratio - 2.0).abs() < 0.02, "{ratio}");

    let weak = LambdaParams::default().with_control(0.01 * p.gamma());
    let stronger = weak.with_control(0.02 * p.gamma());
    let w = transparency_half_width(&stronger).unwrap() / transparency_half_width(&weak).unwrap();
    assert!((w - 4.0).abs() < 0.04, "width ratio {w}");
}

#[test]
fn operating_point_calibrates_to_fifteen_percent() {
    let (cal, run) = calibrate_memory(
        200e-9,
        0.15,
        15e-6,
        DecayLaw::Gaussian,
        &PulseShape::default(),
        &ControlTimeline::default(),
        &LambdaParams::default(),
    )
    .unwrap();
    assert!((cal.channel.efficiency - 0.15).abs() < 1e-12);
    assert!(cal.technical_loss > 0.0 && cal.technical_loss < 1.0);
    assert!(cal.bare_efficiency > 0.15);
    assert!((cal.group_index / 3e4 - 1.0).abs() < 0.1);
    assert!(cal.channel.efficiency + cal.channel.leak_fraction <= 1.0);
    assert!(run.balance_error().abs() < 1e-3);

    let too_much = calibrate_memory(
        200e-9,
        0.9,
        15e-6,
        DecayLaw::Gaussian,
        &PulseShape::default(),
        &ControlTimeline::default(),
        &LambdaParams::default(),
    );
    assert!(matches!(too_much, Err(EitError::AnchorInfeasible { .. })));
}

#[test]
fn h_through_lossy_memory_stays_h() {
    let out = store_qubit(&Cardinal::H.qubit(), &StorageChannel::with_efficiency(0.15));
    assert!((out.success_probability - 0.15).abs() < 1e-12);
    let q = out.normalized().unwrap();
    assert!((q.inner(&Cardinal::H.qubit()).norm_sqr() - 1.0).abs() < 1e-12);
}

#[test]
fn differential_phase_rotates_about_the_poles() {
    let q = Cardinal::H.qubit();
    let eps = 0.3;
    let asym = ChannelAsymmetry {
        differential_phase: eps,
        differential_efficiency: 0.0,
    };
    let out = store_qubit_with(&q, &StorageChannel::identity(), &asym).normalized().unwrap();
    let [a1, a2, a3] = q.bloch_vector();
    let [b1, b2, b3] = out.bloch_vector();
    assert!((a3 - b3).abs() < 1e-12);
    let turn = b2.atan2(b1) - a2.atan2(a1);
    assert!((turn.abs() - eps).abs() < 1e-12, "{turn}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn storage_is_passive_and_balanced(
        od in 3.0..40.0f64,
        delay in 80e-9..400e-9f64,
        width in 100e-9..800e-9f64,
        start in -200e-9..200e-9f64,
        gamma_0 in 0.0..2e5f64,
        linear in any::<bool>(),
    ) {
        let base = LambdaParams { optical_depth: od, gamma_0, ..Default::default() };
        let p = base.with_control(calibrate_control(delay, &base).unwrap());
        let tl = ControlTimeline {
            ramp_down_start: Some(start),
            shape: if linear { RampShape::Linear } else { RampShape::Smoothstep },
            ..Default::default()
        };
        let run = simulate_storage(&PulseShape::half_gaussian(width), &tl, &p).unwrap();
        prop_assert!(run.channel.efficiency <= 1.0);
        prop_assert!(run.channel.efficiency + run.channel.leak_fraction <= 1.0 + 1e-9);
        prop_assert!(run.absorbed >= 0.0);
        prop_assert!(run.balance_error().abs() < 1e-3, "balance {}", run.balance_error());
    }
}

proptest! {
    #[test]
    fn symmetric_channel_preserves_every_qubit(
        theta in 0.0..std::f64::consts::PI,
        phi in 0.0..6.283f64,
        eta in 0.01..1.0f64,
        arg in -3.0..3.0f64,
    ) {
        let q = bloch_state(theta, phi);
        let ch = StorageChannel {
            amplitude_transmission: Complex64::from_polar(eta.sqrt(), arg),
            efficiency: eta,
            leak_fraction: 0.0,
            delay: 0.0,
        };
        let out = store_qubit(&q, &ch);
        prop_assert!((out.success_probability - eta).abs() < 1e-12);
        let fid = out.normalized().unwrap().inner(&q).norm_sqr();
        prop_assert!((fid - 1.0).abs() < 1e-12);
    }
}
