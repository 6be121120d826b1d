mod common;

use common::*;
use methylgraph::nn::{Matrix, Mlp, Parameters};
use proptest::prelude::*;
use rand::Rng;

fn random_matrix(r: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn weighted_output(mlp: &Mlp, x: &Matrix, up: &Matrix) -> f64 {
    let y = mlp.forward(x).unwrap();
    y.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
}

#[test]
fn backprop_matches_finite_differences() {
    let mut r = rng(100);
    for trial in 0..30 {
        let depth = 1 + trial % 3;
        let mut dims = vec![r.random_range(1..=32)];
        for _ in 0..depth {
            dims.push(r.random_range(1..=32));
        }
        let mut mlp = Mlp::glorot(&dims, &mut r).unwrap();
        for t in mlp.param_tensors_mut() {
            for v in t.iter_mut() {
                *v += r.random_range(-0.1..0.1);
            }
        }
        let n = r.random_range(1..6);
        let x = random_matrix(&mut r, n, dims[0]);
        let up = random_matrix(&mut r, n, *dims.last().unwrap());

        let (grads, dx) = mlp.backprop(&x, &up).unwrap();
        let numeric = finite_difference(&mlp, 1e-5, |m| weighted_output(m, &x, &up));
        let err = max_rel_err(&grads.flat(), &numeric, 1e-6);
        assert!(err <= 1e-6, "trial {trial} dims {dims:?}: {err}");

        // input gradient
        let h = 1e-5;
        for k in 0..x.data().len() {
            let mut xp = x.clone();
            xp.data_mut()[k] += h;
            let mut xm = x.clone();
            xm.data_mut()[k] -= h;
            let fd = (weighted_output(&mlp, &xp, &up) - weighted_output(&mlp, &xm, &up)) / (2.0 * h);
            let a = dx.data()[k];
            assert!((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6) <= 1e-6);
        }
    }
}

proptest! {
    #[test]
    fn forward_is_row_wise(seed in any::<u64>(), n in 1usize..8) {
        let mut r = rng(seed);
        let mlp = Mlp::glorot(&[3, 7, 2], &mut r).unwrap();
        let x = random_matrix(&mut r, n, 3);
        let y = mlp.forward(&x).unwrap();
        let perm: Vec<usize> = (0..n).rev().collect();
        let py = mlp.forward(&x.select_rows(&perm)).unwrap();
        prop_assert_eq!(py, y.select_rows(&perm));
    }

    #[test]
    fn forward_is_deterministic(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mlp = Mlp::glorot(&[4, 4, 1], &mut r).unwrap();
        let x = random_matrix(&mut r, 3, 4);
        prop_assert_eq!(mlp.forward(&x).unwrap(), mlp.forward(&x).unwrap());
    }
}
