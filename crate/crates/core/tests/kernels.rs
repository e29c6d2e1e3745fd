//! Finite-difference and property checks of the tensor kernels.

use notecnn::seed;
use notecnn::tensor::gradcheck::{check_layer, EPSILON};
use notecnn::tensor::layer::{Conv1d, Dense, Dropout, Layer, L2Penalty, MaxPool, SoftmaxCrossEntropy};
use notecnn::tensor::{conv1d_forward, cross_entropy, max_pool_over_time, softmax, Tensor};
use proptest::prelude::*;
use rand::Rng;

const TOLERANCE: f64 = 1e-4;
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn uniform(shape: &[usize], seed: u64, tag: u64) -> Tensor {
    Tensor::uniform(shape, 1.0, &mut seed::rng(seed, &[tag]))
}

fn assert_passes(name: &str, layer: &mut dyn Layer, input: &Tensor, seed: u64) {
    let r = check_layer(layer, input, seed, EPSILON).unwrap();
    assert!(r.checked > 0, "{name}: nothing checked");
    assert!(r.max_rel_error < TOLERANCE, "{name} seed {seed}: {r:?}");
}

#[test]
fn conv1d_gradients() {
    for s in SEEDS {
        let mut rng = seed::rng(s, &[0]);
        let (len, width, in_dim, nf) = (rng.gen_range(5..9), rng.gen_range(1..4), rng.gen_range(2..5), rng.gen_range(1..4));
        let mut layer = Conv1d::new(uniform(&[nf, width, in_dim], s, 1), uniform(&[nf], s, 2));
        assert_passes("conv1d", &mut layer, &uniform(&[len, in_dim], s, 3), s);
    }
}

#[test]
fn max_pool_gradients() {
    for s in SEEDS {
        assert_passes("max pool", &mut MaxPool::default(), &uniform(&[6, 4], s, 3), s);
    }
}

#[test]
fn dense_gradients() {
    for s in SEEDS {
        let mut layer = Dense::new(uniform(&[3, 7], s, 1), uniform(&[3], s, 2));
        assert_passes("dense", &mut layer, &uniform(&[7], s, 3), s);
    }
}

#[test]
fn dropout_gradients() {
    for s in SEEDS {
        let mut layer = Dropout::new(0.8, s, true);
        assert_passes("dropout", &mut layer, &uniform(&[20], s, 3), s);
    }
}

#[test]
fn softmax_cross_entropy_gradients() {
    for s in SEEDS {
        for target in [0, 1] {
            let mut layer = SoftmaxCrossEntropy::new(target);
            assert_passes("softmax-ce", &mut layer, &uniform(&[2], s, 3 + target as u64), s);
        }
    }
}

#[test]
fn l2_penalty_gradients() {
    for s in SEEDS {
        let mut layer = L2Penalty::new(uniform(&[2, 5], s, 1), 0.3);
        assert_passes("l2", &mut layer, &uniform(&[1], s, 3), s);
    }
}

/// conv -> max pool -> dense -> softmax cross entropy, chained by hand.
#[test]
fn composed_chain_matches_finite_differences() {
    for s in SEEDS {
        let seq = uniform(&[6, 3], s, 1);
        let filter = uniform(&[4, 2, 3], s, 2);
        let bias = uniform(&[4], s, 3);
        let w = uniform(&[2, 4], s, 4);
        let b = uniform(&[2], s, 5);
        let loss = |x: &[f64]| -> f64 {
            let seq = Tensor::from_vec(&[6, 3], x.to_vec()).unwrap();
            let mut conv = Conv1d::new(filter.clone(), bias.clone());
            let mut dense = Dense::new(w.clone(), b.clone());
            let h = MaxPool::default().forward(&conv.forward(&seq).unwrap()).unwrap();
            let z = dense.forward(&h).unwrap();
            SoftmaxCrossEntropy::new(1).forward(&z).unwrap().data()[0]
        };
        let mut conv = Conv1d::new(filter.clone(), bias.clone());
        let mut pool = MaxPool::default();
        let mut dense = Dense::new(w.clone(), b.clone());
        let mut ce = SoftmaxCrossEntropy::new(1);
        let z = dense.forward(&pool.forward(&conv.forward(&seq).unwrap()).unwrap()).unwrap();
        ce.forward(&z).unwrap();
        let g = ce.backward(&Tensor::from_vec(&[1], vec![1.0]).unwrap()).unwrap();
        let g = conv.backward(&pool.backward(&dense.backward(&g).unwrap()).unwrap()).unwrap();
        let numeric = notecnn::tensor::gradcheck::numeric_gradient(loss, seq.data(), EPSILON);
        let err = notecnn::tensor::gradcheck::max_relative_error(g.data(), &numeric);
        assert!(err < TOLERANCE, "seed {s}: {err}");
    }
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(a in -50.0f64..50.0, b in -50.0f64..50.0) {
        let p = softmax(&[a, b]);
        prop_assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!(cross_entropy(&p, 0).unwrap() >= 0.0);
    }

    #[test]
    fn conv_output_shape_and_nonnegativity(len in 1usize..10, width in 1usize..5, in_dim in 1usize..4, nf in 1usize..4, s in 0u64..1000) {
        prop_assume!(len >= width);
        let out = conv1d_forward(
            &uniform(&[len, in_dim], s, 1),
            &uniform(&[nf, width, in_dim], s, 2),
            &uniform(&[nf], s, 3),
        ).unwrap();
        prop_assert_eq!(out.shape(), &[len - width + 1, nf][..]);
        prop_assert!(out.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn max_pool_returns_column_maxima(rows in 1usize..8, cols in 1usize..5, s in 0u64..1000) {
        let map = uniform(&[rows, cols], s, 0);
        let (out, arg) = max_pool_over_time(&map).unwrap();
        for c in 0..cols {
            let column: Vec<f64> = (0..rows).map(|r| map.row(r)[c]).collect();
            let best = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(out[c], best);
            prop_assert_eq!(column.iter().position(|&v| v == best).unwrap(), arg[c]);
        }
    }
}
