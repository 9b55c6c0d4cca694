//! Property tests of the model and curvature invariants.

mod common;

use common::*;
use hfseq::models::{softmax, CurvatureContext, EvalOptions, Model};
use hfseq::{Architecture, OutputMode};
use ndarray::Array2;
use proptest::prelude::*;

fn arch() -> impl Strategy<Value = Architecture> {
    (0..Architecture::ALL.len()).prop_map(|i| Architecture::ALL[i])
}

fn mode() -> impl Strategy<Value = OutputMode> {
    any::<bool>().prop_map(|b| {
        if b {
            OutputMode::SoftmaxXent
        } else {
            OutputMode::LinearMse
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn softmax_columns_sum_to_one(z in proptest::collection::vec(-700.0f64..700.0, 12)) {
        let p = softmax(&Array2::from_shape_vec((4, 3), z).unwrap());
        for col in p.columns() {
            prop_assert!((col.sum() - 1.0).abs() < 1e-14);
            prop_assert!(col.iter().all(|x| x.is_finite() && *x >= 0.0));
        }
    }

    #[test]
    fn zero_parameters_cost_log2_v(a in arch(), v in 2usize..9, t in 1usize..6, n in 1usize..4) {
        let model = Model::new(&small_config(a, v, 3, OutputMode::SoftmaxXent)).unwrap();
        let theta = vec![0.0; model.parameter_count()];
        let f = model.forward(&theta, &random_batch(v, t, n, 1), EvalOptions::default()).unwrap();
        prop_assert!((f.bits_per_char - (v as f64).log2()).abs() < 1e-12);
    }

    #[test]
    fn gauss_newton_is_symmetric_linear_and_psd(
        a in arch(),
        m in mode(),
        mu in 0.0f64..2.0,
        lambda in 0.0f64..1.0,
        seed in 0u64..1000,
        (x, y) in (-2.0f64..2.0, -2.0f64..2.0),
    ) {
        let config = small_config(a, 4, 3, m);
        let model = Model::new(&config).unwrap();
        let theta = random_theta(&config, 0.5, seed);
        let batch = random_batch(4, 5, 3, seed + 1);
        let ctx = CurvatureContext::new(&model, &theta, &batch, mu, lambda, 2).unwrap();
        let u = random_vector(theta.len(), seed + 2);
        let v = random_vector(theta.len(), seed + 3);
        let (gu, gv) = (ctx.gv_product(&u).unwrap(), ctx.gv_product(&v).unwrap());
        let scale = dot(&u, &gu).abs().max(dot(&v, &gv).abs()).max(1e-12);
        prop_assert!((dot(&u, &gv) - dot(&v, &gu)).abs() <= 1e-10 * scale);
        prop_assert!(dot(&v, &gv) >= lambda * dot(&v, &v) - 1e-10 * scale);

        let mix: Vec<f64> = u.iter().zip(&v).map(|(p, q)| x * p + y * q).collect();
        let gmix = ctx.gv_product(&mix).unwrap();
        let want: Vec<f64> = gu.iter().zip(&gv).map(|(p, q)| x * p + y * q).collect();
        let norm = want.iter().map(|w| w * w).sum::<f64>().sqrt().max(1e-12);
        prop_assert!(max_abs_diff(&gmix, &want) <= 1e-10 * norm);
    }

    #[test]
    fn structural_part_is_psd_and_adds_linearly(a in arch(), mu in 0.1f64..3.0, seed in 0u64..1000) {
        let config = small_config(a, 3, 3, OutputMode::SoftmaxXent);
        let model = Model::new(&config).unwrap();
        let theta = random_theta(&config, 0.5, seed);
        let batch = random_batch(3, 4, 2, seed + 1);
        let v = random_vector(theta.len(), seed + 2);
        let plain = CurvatureContext::new(&model, &theta, &batch, 0.0, 0.0, 1).unwrap();
        let damped = CurvatureContext::new(&model, &theta, &batch, mu, 0.0, 1).unwrap();
        let gs = damped.structural_gsv(&v).unwrap();
        prop_assert!(dot(&v, &gs) >= -1e-12);
        let want: Vec<f64> = plain.gv_product(&v).unwrap().iter().zip(&gs).map(|(g, s)| g + mu * s).collect();
        let got = damped.gv_product(&v).unwrap();
        let norm = want.iter().map(|w| w * w).sum::<f64>().sqrt().max(1e-12);
        prop_assert!(max_abs_diff(&got, &want) <= 1e-10 * norm);
    }

    #[test]
    fn any_checkpoint_interval_matches_full_storage(a in arch(), t in 1usize..10, pick in 0usize..100, seed in 0u64..1000) {
        let k = 1 + pick % t;
        let config = small_config(a, 3, 3, OutputMode::SoftmaxXent);
        let model = Model::new(&config).unwrap();
        let theta = random_theta(&config, 0.5, seed);
        let batch = random_batch(3, t, 2, seed + 1);
        let (full, loss) = model.gradient(&theta, &batch, EvalOptions::default()).unwrap();
        let (g, l, stats) = model.checkpointed_gradient(&theta, &batch, k, 2).unwrap();
        prop_assert_eq!(stats.stored_states, t.div_ceil(k));
        prop_assert!((l - loss).abs() < 1e-13);
        prop_assert!(max_abs_diff(&g, &full) < 1e-12);
    }

    #[test]
    fn worker_count_does_not_change_the_loss(a in arch(), n in 1usize..9, workers in 1usize..12, seed in 0u64..1000) {
        let config = small_config(a, 4, 3, OutputMode::SoftmaxXent);
        let model = Model::new(&config).unwrap();
        let theta = random_theta(&config, 0.5, seed);
        let batch = random_batch(4, 4, n, seed + 1);
        let one = model.loss(&theta, &batch, EvalOptions::default()).unwrap();
        let many = model.loss(&theta, &batch, EvalOptions::default().with_workers(workers)).unwrap();
        prop_assert!((one - many).abs() <= 1e-13 * one.abs().max(1.0));
    }
}
