mod common;

use common::*;
use hfseq::models::{CurvatureContext, EvalOptions, Model, StructuralTarget};
use hfseq::verify::{self, OracleReport};
use hfseq::{Architecture, OutputMode};

const MODES: [OutputMode; 2] = [OutputMode::SoftmaxXent, OutputMode::LinearMse];

#[test]
fn gradients_match_finite_differences() {
    for arch in Architecture::ALL {
        for mode in MODES {
            for extra in [false, true] {
                let mut config = small_config(arch, 5, 4, mode);
                config.extra_biases = extra;
                let model = Model::new(&config).unwrap();
                let theta = random_theta(&config, 0.5, 3);
                let batch = random_batch(5, 6, 2, 4);
                let (g, _) = model.gradient(&theta, &batch, EvalOptions::default()).unwrap();
                let fd = verify::fd_gradient(&model, &theta, &batch, 1e-5).unwrap();
                let r = OracleReport::compare(format!("{arch}/{mode:?}/{extra}"), &g, &fd, 1e-4);
                assert!(r.passed, "{r}");
            }
        }
    }
}

#[test]
fn dense_inputs_and_masked_targets() {
    for arch in Architecture::ALL {
        let mut config = small_config(arch, 3, 4, OutputMode::LinearMse);
        config.output_size = Some(2);
        config.extra_biases = true;
        let model = Model::new(&config).unwrap();
        let theta = random_theta(&config, 0.5, 5);
        let batch = dense_batch(3, 2, 5, 2, 6);
        let (g, _) = model.gradient(&theta, &batch, EvalOptions::default()).unwrap();
        let fd = verify::fd_gradient(&model, &theta, &batch, 1e-5).unwrap();
        let r = OracleReport::compare(format!("{arch} dense"), &g, &fd, 1e-4);
        assert!(r.passed, "{r}");
    }
}

#[test]
fn gauss_newton_matches_dense_oracle() {
    for arch in Architecture::ALL {
        for mode in MODES {
            let config = small_config(arch, 3, 3, mode);
            let model = Model::new(&config).unwrap();
            assert!(model.parameter_count() <= 300, "{arch}: {}", model.parameter_count());
            let theta = random_theta(&config, 0.5, 8);
            let batch = random_batch(3, 4, 2, 9);
            for mu in [0.0, 0.7] {
                let ctx = CurvatureContext::new(&model, &theta, &batch, mu, 0.0, 1).unwrap();
                let dense =
                    verify::dense_gauss_newton(&model, &theta, &batch, mu, 0.0, StructuralTarget::HiddenOutput, 1e-5)
                        .unwrap();
                for probe in 0..3 {
                    let v = random_vector(theta.len(), probe);
                    let gv = ctx.gv_product(&v).unwrap();
                    let want = verify::dense_apply(&dense, &v);
                    let err = verify::relative_norm_error(&gv, &want);
                    assert!(err < 1e-4, "{arch} {mode:?} mu={mu}: {err:e}");
                }
            }
        }
    }
}
