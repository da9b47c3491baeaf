use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Largest sample size for which every sign pattern is enumerated.
pub const EXACT_MAX_PAIRS: usize = 20;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn differences(xs: &[f64], ys: &[f64]) -> Result<Vec<f64>> {
    if xs.len() != ys.len() {
        return Err(Error::Input(format!("paired samples differ in length: {} vs {}", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::Input("at least two pairs are required".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Input("samples must be finite".into()));
    }
    Ok(xs.iter().zip(ys).map(|(x, y)| x - y).collect())
}

/// Two-sided paired permutation test on the difference of means.
///
/// Signs of the paired differences are flipped at random; the p-value is
/// the share of sign patterns whose mean difference is at least as extreme
/// as the observed one. All `2^n` patterns are enumerated when
/// `n <= EXACT_MAX_PAIRS`; otherwise `n_perms` random patterns are drawn and
/// `(hits + 1) / (n_perms + 1)` is returned.
pub fn permutation_test(xs: &[f64], ys: &[f64], n_perms: usize, seed: u64) -> Result<f64> {
    let d = differences(xs, ys)?;
    if d.len() > EXACT_MAX_PAIRS {
        return sampled(&d, n_perms, seed);
    }
    let n = d.len();
    let observed = mean(&d).abs();
    let tol = 1e-12 * (1.0 + observed);
    let mut hits: u64 = 0;
    for mask in 0u64..(1 << n) {
        let s: f64 = d.iter().enumerate().map(|(i, v)| if mask >> i & 1 == 1 { -v } else { *v }).sum();
        hits += u64::from((s / n as f64).abs() >= observed - tol);
    }
    Ok(hits as f64 / (1u64 << n) as f64)
}

/// Monte-Carlo variant regardless of sample size.
pub fn permutation_test_sampled(xs: &[f64], ys: &[f64], n_perms: usize, seed: u64) -> Result<f64> {
    sampled(&differences(xs, ys)?, n_perms, seed)
}

fn sampled(d: &[f64], n_perms: usize, seed: u64) -> Result<f64> {
    if n_perms == 0 {
        return Err(Error::Config("n_perms must be positive".into()));
    }
    let n = d.len() as f64;
    let observed = mean(d).abs();
    let tol = 1e-12 * (1.0 + observed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..n_perms {
        let s: f64 = d.iter().map(|v| if rng.gen::<bool>() { -v } else { *v }).sum();
        hits += usize::from((s / n).abs() >= observed - tol);
    }
    Ok((hits + 1) as f64 / (n_perms + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};

    #[test]
    fn identical_samples_give_one() {
        let xs = [3.0, 1.0, 4.0, 1.0, 5.0];
        assert_eq!(permutation_test(&xs, &xs, 1000, 0).unwrap(), 1.0);
    }

    #[test]
    fn four_unit_differences() {
        // only all-plus and all-minus reach |mean| >= 1: 2 of 16 patterns
        let p = permutation_test(&[2.0, 3.0, 4.0, 5.0], &[1.0, 2.0, 3.0, 4.0], 0, 0).unwrap();
        assert_eq!(p, 0.125);
    }

    #[test]
    fn sampled_tracks_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..5 {
            let xs: Vec<f64> = (0..10).map(|_| rng.gen_range(300.0..700.0)).collect();
            let ys: Vec<f64> = xs.iter().map(|x| x - rng.gen_range(-40.0..60.0)).collect();
            let exact = permutation_test(&xs, &ys, 0, 0).unwrap();
            let mc = permutation_test_sampled(&xs, &ys, 100_000, trial).unwrap();
            assert!((exact - mc).abs() <= 0.02, "exact {exact} sampled {mc}");
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(permutation_test(&[1.0], &[2.0], 10, 0).is_err());
        assert!(permutation_test(&[1.0, 2.0], &[2.0], 10, 0).is_err());
    }

    proptest! {
        #[test]
        fn p_value_in_range(d in proptest::collection::vec(-100.0f64..100.0, 21..40), seed in 0u64..100) {
            let ys = vec![0.0; d.len()];
            let n_perms = 500;
            let p = permutation_test(&d, &ys, n_perms, seed).unwrap();
            prop_assert!(p >= 1.0 / (n_perms as f64 + 1.0) && p <= 1.0);
        }

        #[test]
        fn exact_p_value_in_range(d in proptest::collection::vec(-100.0f64..100.0, 2..12)) {
            let ys = vec![0.0; d.len()];
            let p = permutation_test(&d, &ys, 0, 0).unwrap();
            prop_assert!(p >= 2.0 / (1u64 << d.len()) as f64 - 1e-15 && p <= 1.0);
        }
    }
}
