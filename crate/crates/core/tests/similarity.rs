use approx::assert_relative_eq;
use elision::cka::{linear_cka, Matrix};
use elision::Error;
use proptest::prelude::*;
use rand::{Rng as _, SeedableRng as _};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

/// tr(K H L H) with K = XXᵀ, L = YYᵀ and H the centering matrix, by loops.
fn hsic(x: &Matrix, y: &Matrix) -> f64 {
    let n = x.rows;
    let kernel = |a: &Matrix| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..n).map(|j| a.row(i).iter().zip(a.row(j)).map(|(p, q)| p * q).sum()).collect())
            .collect()
    };
    let h = |i: usize, j: usize| if i == j { 1.0 - 1.0 / n as f64 } else { -1.0 / n as f64 };
    let center = |k: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        let hk: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (0..n).map(|t| h(i, t) * k[t][j]).sum()).collect()).collect();
        (0..n).map(|i| (0..n).map(|j| (0..n).map(|t| hk[i][t] * h(t, j)).sum()).collect()).collect()
    };
    let (kc, lc) = (center(kernel(x)), center(kernel(y)));
    (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| kc[i][j] * lc[j][i]).sum()
}

fn oracle(x: &Matrix, y: &Matrix) -> f64 {
    hsic(x, y) / (hsic(x, x) * hsic(y, y)).sqrt()
}

/// Random orthogonal `d × d` matrix by Gram-Schmidt.
fn orthogonal(d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        for u in &q {
            let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            q.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    q
}

fn transform(x: &Matrix, q: &[Vec<f64>], scale: f64, shift: &[f64]) -> Matrix {
    let mut data = Vec::with_capacity(x.data.len());
    for r in 0..x.rows {
        for (c, s) in shift.iter().enumerate() {
            let v: f64 = x.row(r).iter().zip(q).map(|(a, qrow)| a * qrow[c]).sum();
            data.push(scale * v + s);
        }
    }
    Matrix::new(x.rows, x.cols, data).unwrap()
}

fn case() -> impl Strategy<Value = (usize, usize, usize, u64)> {
    (3usize..14, 1usize..10, 1usize..10, 0u64..10_000)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn agrees_with_hsic_oracle((rows, dx, dy, seed) in case()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y) = (random(rows, dx, &mut rng), random(rows, dy, &mut rng));
        let got = linear_cka(&x, &y).unwrap();
        assert_relative_eq!(got, oracle(&x, &y), max_relative = 1e-9, epsilon = 1e-12);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&got));
        assert_relative_eq!(got, linear_cka(&y, &x).unwrap(), max_relative = 1e-12);
        assert_relative_eq!(linear_cka(&x, &x).unwrap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn invariant_to_rotation_scale_and_shift((rows, dx, dy, seed) in case(), scale in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y) = (random(rows, dx, &mut rng), random(rows, dy, &mut rng));
        let q = orthogonal(dx, &mut rng);
        let shift: Vec<f64> = (0..dx).map(|_| rng.random_range(-50.0..50.0)).collect();
        let moved = transform(&x, &q, scale, &shift);
        assert_relative_eq!(linear_cka(&moved, &y).unwrap(), linear_cka(&x, &y).unwrap(), max_relative = 1e-8, epsilon = 1e-10);
    }
}

#[test]
fn degenerate_and_mismatched_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(5, 3, &mut rng);
    let constant = Matrix::new(5, 2, vec![4.0; 10]).unwrap();
    assert!(matches!(linear_cka(&x, &constant), Err(Error::Degenerate(_))));
    assert!(matches!(linear_cka(&x, &random(4, 3, &mut rng)), Err(Error::Input(_))));
    let mut bad = x.clone();
    bad.data[0] = f64::NAN;
    assert!(matches!(linear_cka(&bad, &x), Err(Error::NonFinite(_))));
}
