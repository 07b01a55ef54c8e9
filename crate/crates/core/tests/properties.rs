use memristor_ann::circuit::{is_weight_realizable, split_weight, CircuitState, Discard, Mode};
use memristor_ann::protocols::{infer, read_one, write_one, WriteOptions};
use memristor_ann::signals::SegmentSignal;
use memristor_ann::{Activation, AnnSpec, DeviceModel};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn dims() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..4, 2..4)
}

fn spec_for(widths: Vec<usize>, limit: f64) -> impl Strategy<Value = AnnSpec> {
    let sizes: Vec<usize> = widths.windows(2).map(|w| w[0] * w[1]).collect();
    sizes
        .iter()
        .map(|&n| prop::collection::vec(-limit..limit, n))
        .collect::<Vec<_>>()
        .prop_map(move |layers| {
            let weights = layers
                .into_iter()
                .zip(widths.windows(2))
                .map(|(v, w)| DMatrix::from_row_slice(w[1], w[0], &v))
                .collect();
            AnnSpec::new(weights, Activation::tanh()).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn memductance_inverse_round_trips(phi in -50.0f64..50.0) {
        let d = DeviceModel::arctan();
        let w = d.memductance(phi);
        prop_assert!(w > d.w_min && w < d.w_max);
        let back = d.flux_for(w).unwrap();
        prop_assert!((d.memductance(back) - w).abs() < 1e-10);
    }

    #[test]
    fn split_pairs_reproduce_targets(t in -3.5f64..3.5) {
        let d = DeviceModel::arctan();
        let s = split_weight(t, &d).unwrap();
        prop_assert!((s.value() - t).abs() < 1e-9);
        prop_assert!(is_weight_realizable(t, &d));
        prop_assert_eq!(s.s_plus && s.s_minus, t.abs() < d.w_max - d.w_min);
    }

    #[test]
    fn differential_circuit_is_the_signed_network(
        spec in dims().prop_flat_map(|w| spec_for(w, 3.5)),
        seed in 0u64..1000,
    ) {
        let c = CircuitState::from_weights(&spec, DeviceModel::arctan(), Mode::Differential).unwrap();
        let n0 = spec.widths()[0];
        let u = DVector::from_fn(n0, |i, _| ((seed as f64 + 1.0) * (i as f64 + 0.7)).sin());
        let p = c.forward_potentials(&u).unwrap();
        let y = spec.forward(&u).unwrap();
        prop_assert!((p.output() - &y).amax() < 1e-9);
    }

    #[test]
    fn inference_matches_software_and_restores_flux(
        spec in dims().prop_flat_map(|w| spec_for(w, 3.5)).prop_filter("single-mode range", |s| {
            s.weights.iter().all(|m| m.iter().all(|v| v.abs() > 0.45))
        }),
        scale in -1.0f64..1.0,
    ) {
        let abs_spec = AnnSpec::new(spec.weights.iter().map(|m| m.abs()).collect(), Activation::tanh()).unwrap();
        let mut c = CircuitState::from_weights(&abs_spec, DeviceModel::arctan(), Mode::Single).unwrap();
        let u = DVector::from_element(abs_spec.widths()[0], scale);
        let r = infer(&mut c, &u, 1.0, None).unwrap();
        let y = abs_spec.forward(&u).unwrap();
        prop_assert!((&r.y_hat - &y).amax() < 1e-8);
        prop_assert!(r.max_flux_deviation < 1e-9);
    }

    #[test]
    fn reading_does_not_disturb(phi in prop::collection::vec(-3.0f64..3.0, 6), row in 0usize..3, col in 0usize..2) {
        let mut c = CircuitState::new(&[2, 3], DeviceModel::arctan(), Activation::tanh(), Mode::Single).unwrap();
        c.set_flux(1, DMatrix::from_row_slice(3, 2, &phi)).unwrap();
        let before = c.fluxes();
        let w = read_one(&mut c, 1, row, col, 2.0, None).unwrap();
        prop_assert!((w - c.device().memductance(phi[row * 2 + col])).abs() < 1e-9);
        prop_assert!(c.max_flux_deviation(&before) < 1e-9);
    }

    #[test]
    fn writing_reaches_target(phi0 in -3.0f64..3.0, target in 0.8f64..3.2, eps in 1e-3f64..0.05) {
        let mut c = CircuitState::new(&[1, 1], DeviceModel::arctan(), Activation::tanh(), Mode::Single).unwrap();
        c.set_flux(1, DMatrix::from_element(1, 1, phi0)).unwrap();
        let opts = WriteOptions { eps, ..Default::default() };
        let e = write_one(&mut c, 1, 0, 0, target, 0.5, &opts, 0.0, &mut Discard).unwrap();
        prop_assert!((c.device().memductance(c.layer(1).phi[(0, 0)]) - target).abs() <= eps + 1e-12);
        prop_assert!(e.lyapunov_nonincreasing);
    }

    #[test]
    fn constant_input_moves_flux_linearly_in_layer_one(v in -2.0f64..2.0, d in 0.1f64..3.0) {
        let mut c = CircuitState::new(&[1, 2], DeviceModel::arctan(), Activation::tanh(), Mode::Single).unwrap();
        let sig = SegmentSignal::constant(0.0, d, DVector::from_element(1, v)).unwrap();
        c.integrate(&sig, None, &mut Discard).unwrap();
        for k in 0..2 {
            prop_assert!((c.layer(1).phi[(k, 0)] - v * d).abs() < 1e-12);
        }
    }
}
