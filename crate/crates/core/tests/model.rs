mod common;

use common::{random_tensor, rng};
use haspn::model::{
    adcca_forward, esa_forward, harb_forward, haspn_forward, init_model, interpolation_params,
    sarb_forward, ModelConfig, ParameterSet,
};
use haspn::tensor::kernels::resize_bilinear;
use haspn::tensor::{Eager, Graph, Tensor};

fn zeros(cfg: &ModelConfig) -> ParameterSet<f64> {
    ParameterSet::zeros(cfg).unwrap()
}

fn max_abs(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.max_abs_diff(b)
}

#[test]
fn zero_parameter_blocks_have_closed_forms() {
    let cfg = ModelConfig::tiny(4);
    let p = zeros(&cfg);
    let mut g = Eager::new(p.as_map());
    let x0: Tensor<f64> = random_tensor([2, cfg.c, 12, 10], &mut rng(1));
    let x = g.constant(x0.clone());
    let half = x0.map(|v| 0.5 * v);

    let s = sarb_forward(&mut g, "branch0.harb0.sarb0", &x).unwrap();
    assert!(max_abs(g.value(&s), &x0) < 1e-6);
    let e = esa_forward(&mut g, "branch0.harb0.sarb0.esa", &x).unwrap();
    assert!(max_abs(g.value(&e), &half) < 1e-6);
    let a = adcca_forward(&mut g, &cfg, "branch0.harb0.adcca", &x).unwrap();
    assert!(max_abs(g.value(&a), &half) < 1e-6);
    let shallow = g.constant(Tensor::zeros(x0.shape()));
    let h = harb_forward(&mut g, &cfg, "branch0.harb0", &x, &shallow).unwrap();
    assert!(max_abs(g.value(&h), &x0.map(|v| 1.5 * v)) < 1e-6);
}

#[test]
fn zero_parameter_traces_hold_in_single_precision() {
    let cfg = ModelConfig::tiny(2);
    let p = ParameterSet::<f32>::zeros(&cfg).unwrap();
    let mut g = Eager::new(p.as_map());
    let x0: Tensor<f32> = random_tensor([1, cfg.c, 9, 9], &mut rng(2));
    let x = g.constant(x0.clone());
    let shallow = g.constant(Tensor::zeros(x0.shape()));
    let h = harb_forward(&mut g, &cfg, "branch1.harb0", &x, &shallow).unwrap();
    assert!(g.value(&h).max_abs_diff(&x0.map(|v| 1.5 * v)) < 1e-6);
}

#[test]
fn output_shapes_follow_the_scale() {
    for scale in [2, 4, 8] {
        for gg in [1, 2] {
            for m in [1, 2] {
                for c in [8, 16] {
                    let cfg = ModelConfig {
                        g: gg,
                        m,
                        c,
                        scale,
                        ..ModelConfig::default()
                    };
                    let p: ParameterSet<f32> = init_model(&cfg, 0).unwrap();
                    let mut g = Eager::new(p.as_map());
                    let x = g.constant(random_tensor([2, 1, 9, 8], &mut rng(3)));
                    let out = haspn_forward(&mut g, &cfg, &x, &x).unwrap();
                    for t in [&out.coarse, &out.hf, &out.fused] {
                        assert_eq!(g.value(t).shape(), [2, 1, 9, 8 * scale], "{cfg:?}");
                        assert!(g.value(t).all_finite());
                    }
                }
            }
        }
    }
}

#[test]
fn samples_in_a_batch_are_independent() {
    let cfg = ModelConfig::tiny(4);
    let p: ParameterSet<f64> = init_model(&cfg, 4).unwrap();
    let mut r = rng(4);
    let a: Tensor<f64> = random_tensor([1, 1, 10, 8], &mut r);
    let b: Tensor<f64> = random_tensor([1, 1, 10, 8], &mut r);
    let run = |x: Tensor<f64>| {
        let mut g = Eager::new(p.as_map());
        let v = g.constant(x);
        let out = haspn_forward(&mut g, &cfg, &v, &v).unwrap();
        (*out.fused).clone()
    };
    let both = run(Tensor::stack(&[a.clone(), b.clone()]).unwrap());
    assert!(max_abs(&both.sample_tensor(0), &run(a)) < 1e-12);
    assert!(max_abs(&both.sample_tensor(1), &run(b)) < 1e-12);
}

#[test]
fn interpolation_parameters_give_bilinear_columns() {
    for scale in [2, 4, 8] {
        let cfg = ModelConfig {
            g: 2,
            m: 1,
            c: 8,
            scale,
            ..ModelConfig::default()
        };
        let p: ParameterSet<f64> = interpolation_params(&cfg).unwrap();
        let mut g = Eager::new(p.as_map());
        let x0: Tensor<f64> = random_tensor([1, 1, 9, 8], &mut rng(5)).map(|v| 0.5 + 0.5 * v);
        let x = g.constant(x0.clone());
        let out = haspn_forward(&mut g, &cfg, &x, &x).unwrap();
        let want = resize_bilinear(&x0, 9, 8 * scale).unwrap();
        assert!(max_abs(g.value(&out.fused), &want) < 1e-12, "scale {scale}");
    }
}

#[test]
fn initialisation_is_seeded() {
    let cfg = ModelConfig::tiny(2);
    let a: ParameterSet<f32> = init_model(&cfg, 9).unwrap();
    assert_eq!(a, init_model(&cfg, 9).unwrap());
    assert_ne!(a, init_model(&cfg, 10).unwrap());
}
