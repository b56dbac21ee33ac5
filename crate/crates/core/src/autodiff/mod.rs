//! Reverse-mode autodiff tape, Adam optimizer, and finite-difference checks.

mod check;
mod store;
mod tape;

pub use check::{grad_check, GradCheckReport};
pub use store::{OptimError, ParamGroup, ParameterStore};
pub use tape::{NodeId, Tape, TapeError};

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn product_forward_and_backward() {
        let mut tape = Tape::<f64>::new();
        let a = tape.input(&[2.0]);
        let b = tape.input(&[3.0]);
        let c = tape.mul(a, b);
        assert_eq!(tape.value(c), &[6.0]);

        let mut grads = vec![];
        tape.backward(c, &[1.0], &[], &mut grads).unwrap();
        assert_eq!(tape.adjoint(a), &[3.0]);
        assert_eq!(tape.adjoint(b), &[2.0]);
    }

    #[test]
    fn exp_identity() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(&[0.0]);
        let y = tape.exp(x);
        assert_eq!(tape.value(y), &[1.0]);
    }

    #[test]
    fn stop_gradient_blocks_exactly() {
        // y = sg(x) * x at x=2: only the non-wrapped factor contributes.
        let mut tape = Tape::<f64>::new();
        let x = tape.input(&[2.0]);
        let sgx = tape.stop_grad(x);
        let y = tape.mul(sgx, x);
        assert_eq!(tape.value(y), &[4.0]);
        let mut grads = vec![];
        tape.backward(y, &[1.0], &[], &mut grads).unwrap();
        assert_eq!(tape.adjoint(x), &[2.0]);
    }

    #[test]
    fn stop_gradient_zero_adjoint_for_any_seed() {
        for seed in [1.0, -2.5, 100.0] {
            let mut tape = Tape::<f64>::new();
            let x = tape.input(&[1.7]);
            let sg = tape.stop_grad(x);
            let y = tape.mul(sg, sg);
            let mut grads = vec![];
            tape.backward(y, &[seed], &[], &mut grads).unwrap();
            assert_eq!(tape.adjoint(x), &[0.0]);
        }
    }

    #[test]
    fn backward_before_forward_is_state_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.record_input(1);
        let y = tape.scale(x, 2.0);
        let mut grads = vec![];
        let err = tape.backward(y, &[1.0], &[], &mut grads).unwrap_err();
        assert_eq!(err, TapeError::BackwardBeforeForward);

        tape.forward_eval(&[], &[&[3.0]]).unwrap();
        assert_eq!(tape.value(y), &[6.0]);
        tape.backward(y, &[1.0], &[], &mut grads).unwrap();
        assert_eq!(tape.adjoint(x), &[2.0]);
    }

    #[test]
    fn unbound_input_is_config_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(&[1.0]);
        let _ = tape.scale(x, 2.0);
        let err = tape.forward_eval(&[], &[]).unwrap_err();
        assert_eq!(err, TapeError::UnboundInput(0));
    }

    #[test]
    fn non_finite_intermediate_carries_node_id() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(&[1.0]);
        let neg = tape.neg(x); // node 1
        let y = tape.log(neg); // node 2: ln(-1) = NaN
        assert!(tape.value(y)[0].is_nan());
        let err = tape.forward_eval(&[], &[&[1.0]]).unwrap_err();
        assert_eq!(err, TapeError::NonFinite(y.index()));
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xv: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let run = |tape: &mut Tape<f64>| -> (Vec<f64>, Vec<f64>) {
            tape.reset();
            let x = tape.input(&xv);
            let h = tape.matvec(&params, 0, 4, 4, x);
            let h = tape.sigmoid(h);
            let b = tape.param(&params, 16, 4);
            let s = tape.add(h, b);
            let y = tape.sum_reduce(s);
            let mut grads = vec![0.0; params.len()];
            tape.backward(y, &[1.0], &params, &mut grads).unwrap();
            (tape.value(y).to_vec(), grads)
        };
        let mut tape = Tape::new();
        let (y1, g1) = run(&mut tape);
        let (y2, g2) = run(&mut tape);
        assert_eq!(y1, y2);
        assert_eq!(g1, g2);
    }

    /// Every differentiable primitive against central differences at 64-bit.
    #[test]
    fn primitive_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        // Each case: params of length 6 feed a scalar function built from one
        // primitive; check d(out)/d(params) over 100 random points.
        type Build = fn(&mut Tape<f64>, &[f64]) -> NodeId;
        let cases: Vec<(&str, Build)> = vec![
            ("add", |t, p| {
                let a = t.param(p, 0, 3);
                let b = t.param(p, 3, 3);
                let y = t.add(a, b);
                t.sum_reduce(y)
            }),
            ("sub", |t, p| {
                let a = t.param(p, 0, 3);
                let b = t.param(p, 3, 3);
                let y = t.sub(a, b);
                t.sum_reduce(y)
            }),
            ("mul", |t, p| {
                let a = t.param(p, 0, 3);
                let b = t.param(p, 3, 3);
                let y = t.mul(a, b);
                t.sum_reduce(y)
            }),
            ("div", |t, p| {
                let a = t.param(p, 0, 3);
                let b = t.param(p, 3, 3);
                let shifted = t.add_const(b, 4.0); // keep denominator away from 0
                let y = t.div(a, shifted);
                t.sum_reduce(y)
            }),
            ("exp", |t, p| {
                let a = t.param(p, 0, 6);
                let y = t.exp(a);
                t.sum_reduce(y)
            }),
            ("log", |t, p| {
                let a = t.param(p, 0, 6);
                let shifted = t.add_const(a, 4.0);
                let y = t.log(shifted);
                t.sum_reduce(y)
            }),
            ("pow", |t, p| {
                let a = t.param(p, 0, 6);
                let shifted = t.add_const(a, 4.0);
                let y = t.powf(shifted, 2.5);
                t.sum_reduce(y)
            }),
            ("sigmoid", |t, p| {
                let a = t.param(p, 0, 6);
                let y = t.sigmoid(a);
                t.sum_reduce(y)
            }),
            ("softplus", |t, p| {
                let a = t.param(p, 0, 6);
                let y = t.softplus(a);
                t.sum_reduce(y)
            }),
            ("scale", |t, p| {
                let a = t.param(p, 0, 6);
                let y = t.scale(a, -1.75);
                t.sum_reduce(y)
            }),
            ("excl_cumsum", |t, p| {
                let a = t.param(p, 0, 6);
                let c = t.excl_cumsum(a);
                let w = t.constant(&[0.3, -0.4, 1.0, 0.2, -0.7, 0.5]);
                let y = t.mul(c, w);
                t.sum_reduce(y)
            }),
            ("matvec", |t, p| {
                let x = t.constant(&[0.5, -1.0]);
                let y = t.matvec(p, 0, 3, 2, x);
                t.sum_reduce(y)
            }),
            ("weight_rows", |t, p| {
                let w = t.param(p, 0, 2);
                let rows = t.param(p, 2, 4);
                let y = t.weight_rows(w, rows, 2);
                t.sum_reduce(y)
            }),
            ("concat_slice", |t, p| {
                let a = t.param(p, 0, 3);
                let b = t.param(p, 3, 3);
                let c = t.concat(&[a, b]);
                let s = t.slice(c, 1, 4);
                let y = t.mul(s, s);
                t.sum_reduce(y)
            }),
        ];
        for (name, build) in &cases {
            for _ in 0..100 {
                let params: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let mut grads = vec![0.0; 6];
                let mut tape = Tape::new();
                let out = build(&mut tape, &params);
                tape.backward(out, &[1.0], &params, &mut grads).unwrap();
                let report = grad_check(
                    |p| {
                        let mut t = Tape::new();
                        let o = build(&mut t, p);
                        t.value(o)[0]
                    },
                    &grads,
                    &params,
                    1e-5,
                );
                assert!(
                    report.passes(1e-6),
                    "{name}: rel err {} at coord {}",
                    report.max_rel_err,
                    report.worst_coord
                );
            }
        }
    }

    /// Kinked primitives, checked away from their breakpoints.
    #[test]
    fn kinked_primitive_gradients_off_breakpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        type Build = fn(&mut Tape<f64>, &[f64]) -> NodeId;
        let cases: Vec<(&str, Build)> = vec![
            ("relu", |t, p| {
                let a = t.param(p, 0, 6);
                let y = t.relu(a);
                t.sum_reduce(y)
            }),
            ("clamp", |t, p| {
                let a = t.param(p, 0, 6);
                let y = t.clamp(a, -1.0, 1.0);
                t.sum_reduce(y)
            }),
            ("min", |t, p| {
                let a = t.param(p, 0, 3);
                let b = t.param(p, 3, 3);
                let y = t.min(a, b);
                t.sum_reduce(y)
            }),
            ("max", |t, p| {
                let a = t.param(p, 0, 3);
                let b = t.param(p, 3, 3);
                let y = t.max(a, b);
                t.sum_reduce(y)
            }),
        ];
        for (name, build) in &cases {
            for _ in 0..100 {
                // Margin 0.05 keeps central differences from straddling kinks
                // at -1, 0, 1 or at a == b crossings.
                let params: Vec<f64> = (0..6)
                    .map(|_| {
                        let mut v: f64 = rng.gen_range(-2.0..2.0);
                        for kink in [-1.0, 0.0, 1.0] {
                            if (v - kink).abs() < 0.05 {
                                v = kink + 0.05 * (v - kink).signum().max(0.5);
                            }
                        }
                        v
                    })
                    .collect();
                let mut grads = vec![0.0; 6];
                let mut tape = Tape::new();
                let out = build(&mut tape, &params);
                tape.backward(out, &[1.0], &params, &mut grads).unwrap();
                let report = grad_check(
                    |p| {
                        let mut t = Tape::new();
                        let o = build(&mut t, p);
                        t.value(o)[0]
                    },
                    &grads,
                    &params,
                    1e-6,
                );
                assert!(
                    report.passes(1e-6),
                    "{name}: rel err {} at coord {}",
                    report.max_rel_err,
                    report.worst_coord
                );
            }
        }
    }

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        let mut store = ParameterStore::<f64>::new();
        store.push_group(&[1.0, -2.0], 1.0);
        store.grads[0] = 0.5;
        store.grads[1] = -3.0;
        store.adam_step(1e-2, 0.9, 0.999, 1e-8).unwrap();
        // First step: delta = -lr * g / (|g| + eps) = -lr * sign(g).
        assert!((store.values[0] - (1.0 - 1e-2)).abs() < 1e-6);
        assert!((store.values[1] - (-2.0 + 1e-2)).abs() < 1e-6);
        assert_eq!(store.step_count(), 1);
        assert!(store.grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn adam_zero_gradient_leaves_parameters() {
        let mut store = ParameterStore::<f64>::new();
        store.push_group(&[0.25, 7.5], 1.0);
        store.adam_step(1e-2, 0.9, 0.999, 1e-8).unwrap();
        assert_eq!(store.values, vec![0.25, 7.5]);
        assert_eq!(store.step_count(), 1);
    }

    #[test]
    fn adam_refuses_non_finite_gradient() {
        let mut store = ParameterStore::<f64>::new();
        store.push_group(&[1.0], 1.0);
        store.grads[0] = f64::NAN;
        let err = store.adam_step(1e-2, 0.9, 0.999, 1e-8).unwrap_err();
        assert_eq!(err, OptimError::NonFiniteGradient(0));
        assert_eq!(store.values, vec![1.0]);
        assert_eq!(store.step_count(), 0);
    }

    #[test]
    fn adam_converges_on_scalar_quadratic() {
        // f(theta) = (theta - 3)^2 from theta = 0, lr = 0.1, 200 steps.
        let mut store = ParameterStore::<f64>::new();
        store.push_group(&[0.0], 1.0);
        for _ in 0..200 {
            store.grads[0] = 2.0 * (store.values[0] - 3.0);
            store.adam_step(0.1, 0.9, 0.999, 1e-8).unwrap();
        }
        assert!((store.values[0] - 3.0).abs() < 0.1, "theta = {}", store.values[0]);
    }

    #[test]
    fn grad_check_quadratic_is_tight() {
        let point: Vec<f64> = vec![0.3, -1.2, 2.5, 0.0];
        let analytic: Vec<f64> = point.iter().map(|x| 2.0 * x).collect();
        let report = grad_check(
            |x| x.iter().map(|v| v * v).sum::<f64>(),
            &analytic,
            &point,
            1e-5,
        );
        assert!(report.passes(1e-9), "rel err {}", report.max_rel_err);
    }

    #[test]
    fn grad_check_reports_kink_failure() {
        // |x| at 0: tape-style subgradient (via max) says 1, FD says 0.
        let point = vec![0.0f64];
        let analytic = vec![1.0];
        let report = grad_check(|x: &[f64]| x[0].abs(), &analytic, &point, 1e-5);
        assert!(!report.passes(1e-6));
        assert_eq!(report.worst_coord, 0);
    }
}
