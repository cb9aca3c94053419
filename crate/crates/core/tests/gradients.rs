mod common;

use patr_core::diffcore::{
    affine, affine_backward, finite_diff_check, lstm_cell, lstm_cell_backward, sq_dist, squared_distance_backward,
    LstmLayer, ParamSlot, Parameters, Tensor,
};
use patr_core::loss::{batch_loss, LossConfig, LossVariant};
use patr_core::textenc::{encode_backward, encode_forward, EncoderParams};
use proptest::prelude::*;
use rand::rngs::mock::StepRng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn affine_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let c = random(&mut rng, &[3, 4]);
    let mut model = vec![
        ParamSlot::new("x", random(&mut rng, &[3, 5])),
        ParamSlot::new("w", random(&mut rng, &[5, 4])),
        ParamSlot::new("b", random(&mut rng, &[1, 4])),
    ];
    let report = finite_diff_check(
        &mut model,
        |m: &mut Vec<ParamSlot<f64>>| {
            let out = affine(&m[0].value, &m[1].value, &m[2].value)?;
            let loss: f64 = out.data().iter().zip(c.data()).map(|(o, c)| o * c).sum();
            let (x, rest) = m.split_at_mut(1);
            let (w, b) = rest.split_at_mut(1);
            let dx = affine_backward(&x[0].value, &w[0].value, &c, &mut w[0].grad, &mut b[0].grad)?;
            x[0].grad.add_scaled(&dx, 1.0);
            Ok(loss)
        },
        H,
    )
    .unwrap();
    assert_eq!(report.checked, 15 + 20 + 4);
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn checker_agrees_with_exact_quadratic() {
    // L = Σ x², gradient 2x exactly.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut model = vec![ParamSlot::new("x", random(&mut rng, &[10]))];
    let report = finite_diff_check(
        &mut model,
        |m: &mut Vec<ParamSlot<f64>>| {
            let x = m[0].value.clone();
            for (g, v) in m[0].grad.data_mut().iter_mut().zip(x.data()) {
                *g += 2.0 * v;
            }
            Ok(x.data().iter().map(|v| v * v).sum())
        },
        H,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-7, "{report:?}");
}

struct Cell {
    layer: LstmLayer<f64>,
    state: Vec<ParamSlot<f64>>,
}

impl Parameters<f64> for Cell {
    fn slots(&self) -> Vec<&ParamSlot<f64>> {
        self.layer.slots().chain(&self.state).collect()
    }

    fn slots_mut(&mut self) -> Vec<&mut ParamSlot<f64>> {
        self.layer.slots_mut().chain(&mut self.state).collect()
    }
}

#[test]
fn lstm_cell_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut layer = LstmLayer::zeros("l0", 5, 4);
    for s in layer.slots_mut() {
        let shape = s.value.shape().to_vec();
        s.value = random(&mut rng, &shape);
    }
    let mut model = Cell {
        layer,
        state: vec![
            ParamSlot::new("x", random(&mut rng, &[2, 5])),
            ParamSlot::new("h", random(&mut rng, &[2, 4])),
            ParamSlot::new("c", random(&mut rng, &[2, 4])),
        ],
    };
    let (a, b) = (random(&mut rng, &[2, 4]), random(&mut rng, &[2, 4]));
    let report = finite_diff_check(
        &mut model,
        |m: &mut Cell| {
            let (h, c, cache) = lstm_cell(&m.state[0].value, &m.state[1].value, &m.state[2].value, &m.layer)?;
            let loss: f64 = h
                .data()
                .iter()
                .zip(a.data())
                .chain(c.data().iter().zip(b.data()))
                .map(|(x, y)| x * y)
                .sum();
            let (dx, dh, dc) = lstm_cell_backward(&cache, &a, &b, &mut m.layer)?;
            m.state[0].grad.add_scaled(&dx, 1.0);
            m.state[1].grad.add_scaled(&dh, 1.0);
            m.state[2].grad.add_scaled(&dc, 1.0);
            Ok(loss)
        },
        H,
    )
    .unwrap();
    assert_eq!(report.checked, 4 * (20 + 16 + 4) + 10 + 8 + 8);
    assert!(report.max_rel_error < 1e-5, "{report:?}");
}

#[test]
fn squared_distance_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut model = vec![
        ParamSlot::new("a", random(&mut rng, &[7])),
        ParamSlot::new("b", random(&mut rng, &[7])),
    ];
    let report = finite_diff_check(
        &mut model,
        |m: &mut Vec<ParamSlot<f64>>| {
            let (a, b) = (m[0].value.clone(), m[1].value.clone());
            squared_distance_backward(a.data(), b.data(), 1.0, m[0].grad.data_mut());
            squared_distance_backward(b.data(), a.data(), 1.0, m[1].grad.data_mut());
            Ok(sq_dist(a.data(), b.data()))
        },
        H,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn encoder_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = common::tiny_encoder();
    let mut params = EncoderParams::<f64>::init(&cfg, &mut rng).unwrap();
    let inputs = random(&mut rng, &[4, cfg.word_dim]);
    let c = random(&mut rng, &[cfg.output_dim]);
    let report = finite_diff_check(
        &mut params,
        |p: &mut EncoderParams<f64>| {
            let (out, trace) = encode_forward(&inputs, p, &cfg, false, &mut StepRng::new(0, 0))?;
            encode_backward(&trace, c.data(), p)?;
            Ok(out.iter().zip(c.data()).map(|(o, c)| o * c).sum())
        },
        H,
    )
    .unwrap();
    assert_eq!(report.checked, cfg.param_count());
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn batch_loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let positives = random(&mut rng, &[4, 3]);
    let negatives = vec![vec![1, 2], vec![0, 3], vec![3, 1], vec![0, 2]];
    for (variant, negs) in [
        (LossVariant::Patr, negatives.clone()),
        (LossVariant::L2, negatives.clone()),
        (
            LossVariant::Triplet,
            negatives.iter().map(|n| vec![n[0]]).collect::<Vec<_>>(),
        ),
    ] {
        let cfg = LossConfig {
            variant,
            eta: 3.0,
            n_negatives: negs[0].len(),
            ..LossConfig::default()
        };
        let mut model = vec![ParamSlot::new("q", random(&mut rng, &[4, 3]))];
        let report = finite_diff_check(
            &mut model,
            |m: &mut Vec<ParamSlot<f64>>| {
                let (l, dq) = batch_loss(&m[0].value, &positives, &negs, &cfg)?;
                m[0].grad.add_scaled(&dq, 1.0);
                Ok(l)
            },
            H,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{variant}: {report:?}");
    }
}

#[test]
fn full_step_gradients() {
    let step = common::tiny_step(42);
    let mut params = step.params.clone();
    let report = finite_diff_check(&mut params, |p| step.eval(p), H).unwrap();
    assert_eq!(report.checked, step.enc.param_count());
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

fn grads(p: &EncoderParams<f64>) -> Vec<f64> {
    p.slots().iter().flat_map(|s| s.grad.data().to_vec()).collect()
}

#[test]
fn multitask_gradient_is_mean_of_sources() {
    let step = common::tiny_step(7);
    let run = |caption, click| {
        let mut p = step.params.clone();
        p.zero_grad();
        let l = step.eval_sources(&mut p, caption, click).unwrap();
        (l, grads(&p))
    };
    let (l_both, g_both) = run(true, true);
    let (l_cap, g_cap) = run(true, false);
    let (l_click, g_click) = run(false, true);
    assert!((l_both - (l_cap + l_click) / 2.0).abs() < 1e-12);
    for ((b, c), k) in g_both.iter().zip(&g_cap).zip(&g_click) {
        assert!((b - (c + k) / 2.0).abs() < 1e-12);
    }
}

#[test]
fn injected_fault_is_detected() {
    let step = common::tiny_step(42);
    let mut params = step.params.clone();
    let report = finite_diff_check(
        &mut params,
        |p: &mut EncoderParams<f64>| {
            let l = step.eval(p)?;
            for g in p.proj_w.grad.data_mut() {
                *g *= 1.1;
            }
            Ok(l)
        },
        H,
    )
    .unwrap();
    assert!(report.max_rel_error > 0.05, "{report:?}");
    assert_eq!(report.slot, "proj.w");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn full_step_gradients_any_seed(seed in any::<u64>()) {
        let step = common::tiny_step(seed);
        let mut params = step.params.clone();
        let report = finite_diff_check(&mut params, |p| step.eval(p), H).unwrap();
        prop_assert!(report.max_rel_error < 1e-4, "{:?}", report);
    }
}
