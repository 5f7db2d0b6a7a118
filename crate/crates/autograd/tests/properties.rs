use c2f_autograd::Tensor;
use proptest::prelude::*;

fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
        }
    }
    out
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

fn matrices() -> impl Strategy<Value = (usize, usize, usize, Vec<f64>, Vec<f64>)> {
    (1usize..7, 1usize..7, 1usize..7).prop_flat_map(|(m, k, n)| {
        (
            Just(m),
            Just(k),
            Just(n),
            prop::collection::vec(-3.0f64..3.0, m * k),
            prop::collection::vec(-3.0f64..3.0, k * n),
        )
    })
}

proptest! {
    #[test]
    fn matmul_matches_triple_loop((m, k, n, a, b) in matrices(), ta: bool, tb: bool) {
        let want = naive_matmul(&a, &b, m, k, n);
        // feed the transposed storage when the flag asks for it
        let (sa, shape_a) = if ta { (transpose(&a, m, k), [k, m]) } else { (a.clone(), [m, k]) };
        let (sb, shape_b) = if tb { (transpose(&b, k, n), [n, k]) } else { (b.clone(), [k, n]) };
        let got = Tensor::from_vec(sa, &shape_a).matmul_t(&Tensor::from_vec(sb, &shape_b), ta, tb);
        prop_assert_eq!(got.shape(), &[m, n]);
        for (g, w) in got.to_vec().iter().zip(&want) {
            prop_assert!((g - w).abs() <= 1e-12 * (1.0 + w.abs()));
        }
    }

    #[test]
    fn unshuffle_then_shuffle_is_identity(
        b in 1usize..3, c in 1usize..4, h in 1usize..5, w in 1usize..5, seed in 0u64..1000,
    ) {
        let n = b * c * 4 * h * w;
        let data: Vec<f64> = (0..n).map(|i| ((i as u64 * 2654435761 + seed) % 997) as f64).collect();
        let x = Tensor::from_vec(data.clone(), &[b, c, 2 * h, 2 * w]);
        let down = x.pixel_unshuffle();
        prop_assert_eq!(down.shape(), &[b, 4 * c, h, w]);
        prop_assert_eq!(down.pixel_shuffle().to_vec(), data);
    }

    #[test]
    fn softmax_rows_are_distributions(
        rows in 1usize..5,
        row in prop::collection::vec(-50.0f64..50.0, 1..9),
    ) {
        let l = row.len();
        let data: Vec<f64> = (0..rows).flat_map(|r| row.iter().map(move |v| v + r as f64 * 7.0)).collect();
        let y = Tensor::from_vec(data, &[rows, l]).softmax_last().to_vec();
        for chunk in y.chunks(l) {
            prop_assert!(chunk.iter().all(|p| (0.0..=1.0).contains(p)));
            prop_assert!((chunk.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
