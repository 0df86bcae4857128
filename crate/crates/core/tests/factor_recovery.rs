use fsvar::factor::{estimate_pca, select_num_factors};
use fsvar::Dataset;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `y = f Q' + e` with orthonormal `Q` (N x r), unit noise, and factor
/// variance chosen so the per-channel common variance is `snr`.
fn factor_data(n: usize, t: usize, r: usize, snr: f64, seed: u64) -> (Dataset, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = gaussian(&mut rng, n, r).qr().q().columns(0, r).into_owned();
    let scale = (snr * n as f64 / r as f64).sqrt();
    let f = gaussian(&mut rng, t, r) * scale;
    let y = &f * q.transpose() + gaussian(&mut rng, t, n);
    (Dataset::from_values(y).unwrap(), q)
}

#[test]
fn loadings_span_the_true_subspace() {
    for seed in 0..10 {
        let (d, q) = factor_data(50, 2000, 3, 10.0, seed);
        let fit = estimate_pca(&d, 3).unwrap();
        let gram = fit.loadings.transpose() * &fit.loadings;
        assert!((gram - DMatrix::<f64>::identity(3, 3)).amax() < 1e-10);
        let dist = (&fit.loadings * fit.loadings.transpose() - &q * q.transpose()).norm();
        assert!(dist < 0.1, "seed {seed}: subspace distance {dist}");
    }
}

#[test]
fn bic_finds_three_factors() {
    let hits = (0..50)
        .filter(|&seed| {
            let (d, _) = factor_data(100, 200, 3, 10.0, 100 + seed);
            select_num_factors(&d, 10).unwrap().r == 3
        })
        .count();
    assert!(hits >= 45, "r=3 chosen in {hits}/50");
}

#[test]
fn bic_increases_on_white_noise() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let d = Dataset::from_values(gaussian(&mut rng, 200, 30)).unwrap();
        let sel = select_num_factors(&d, 5).unwrap();
        assert_eq!(sel.r, 1);
        assert!(
            sel.bic_values.windows(2).all(|w| w[1] > w[0]),
            "{:?}",
            sel.bic_values
        );
    }
}
