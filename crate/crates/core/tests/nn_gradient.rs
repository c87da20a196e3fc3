mod support;

use neurdb_core::nn::{Loss, Matrix, Network};
use proptest::prelude::*;
use support::gradcheck::{gradcheck_cases, input_rel_error, max_param_rel_error};

#[test]
fn analytic_gradients_match_finite_differences() {
    for seed in 0..10 {
        for (i, (net, x, y)) in gradcheck_cases(seed).into_iter().enumerate() {
            let err = max_param_rel_error(&net, &x, &y);
            assert!(err < 1e-4, "seed {seed} case {i}: rel err {err}");
            if net.loss() == Loss::Mse {
                let err = input_rel_error(&net, &x, &y);
                assert!(err < 1e-4, "seed {seed} case {i}: input rel err {err}");
            }
        }
    }
}

proptest! {
    #[test]
    fn frozen_layers_are_bit_identical(seed in 0u64..1000, steps in 1usize..20, k in 0usize..2) {
        let mut net = Network::mlp(3, &[5, 4], 1, Loss::Mse, seed).unwrap();
        net.freeze_prefix(k).unwrap();
        let frozen: Vec<_> = net.layers().iter().filter(|l| l.is_frozen()).cloned().collect();
        let x = Matrix::from_rows(&[vec![0.3, -1.0, 2.0], vec![1.0, 0.1, -0.4]]).unwrap();
        for _ in 0..steps {
            net.train_step(&x, &[1.0, -1.0], 0.05).unwrap();
        }
        let after: Vec<_> = net.layers().iter().filter(|l| l.is_frozen()).cloned().collect();
        prop_assert_eq!(frozen.len(), k);
        for (a, b) in frozen.iter().zip(&after) {
            let wa: Vec<u32> = a.weights().iter().map(|v| v.to_bits()).collect();
            let wb: Vec<u32> = b.weights().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(wa, wb);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(vals in proptest::collection::vec(-20.0f32..20.0, 3..30)) {
        let cols = 3;
        let rows = vals.len() / cols;
        let m = Matrix::from_vec(rows, cols, vals[..rows * cols].to_vec()).unwrap();
        let net = Network::new(
            vec![neurdb_core::nn::Layer::linear_with(3, 3, vec![1.,0.,0.,0.,1.,0.,0.,0.,1.], vec![0.;3]).unwrap(),
                 neurdb_core::nn::Layer::softmax()],
            Loss::CrossEntropy,
        ).unwrap();
        let y = net.forward(&m).unwrap();
        for r in 0..rows {
            let s: f32 = y.row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-5);
        }
    }
}
