//! Thin wrappers over `rand_distr` count draws.
//!
//! All take care of the degenerate boundary cases (zero rates, probabilities
//! clamped into [0, 1]) so call sites stay readable.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};

pub(crate) fn draw_poisson<R: Rng>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean)
        .expect("positive finite Poisson mean")
        .sample(rng) as u64
}

pub(crate) fn draw_binomial<R: Rng>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 {
        return 0;
    }
    let p = p.clamp(0.0, 1.0);
    if p == 0.0 {
        return 0;
    }
    if p == 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("probability in [0, 1]").sample(rng)
}

/// Draw cell counts for `n` trials over `probs`; any probability mass missing
/// from `probs` (sum < 1) is an implicit overflow cell whose count is
/// `n - sum(returned)`.
pub(crate) fn draw_multinomial<R: Rng>(rng: &mut R, n: u64, probs: &[f64]) -> Vec<u64> {
    let mut out = vec![0u64; probs.len()];
    let mut remaining = n;
    let mut tail: f64 = 1.0;
    for (k, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if tail <= 0.0 {
            break;
        }
        let cond = (p / tail).clamp(0.0, 1.0);
        let c = draw_binomial(rng, remaining, cond);
        out[k] = c;
        remaining -= c;
        tail -= p;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn degenerate_draws() {
        let mut rng = StdRng::seed_from_u64(1);
        assert_eq!(draw_poisson(&mut rng, 0.0), 0);
        assert_eq!(draw_poisson(&mut rng, -1.0), 0);
        assert_eq!(draw_binomial(&mut rng, 10, 0.0), 0);
        assert_eq!(draw_binomial(&mut rng, 10, 1.0), 10);
        assert_eq!(draw_binomial(&mut rng, 0, 0.5), 0);
    }

    #[test]
    fn multinomial_with_full_mass_conserves_trials() {
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..200 {
            let counts = draw_multinomial(&mut rng, 50, &[0.2, 0.3, 0.5]);
            assert_eq!(counts.iter().sum::<u64>(), 50);
        }
    }

    #[test]
    fn multinomial_with_deficit_loses_the_remainder() {
        let mut rng = StdRng::seed_from_u64(3);
        let mut lost_any = false;
        for _ in 0..200 {
            let counts = draw_multinomial(&mut rng, 40, &[0.25, 0.25]);
            let kept: u64 = counts.iter().sum();
            assert!(kept <= 40);
            lost_any |= kept < 40;
        }
        assert!(lost_any, "with half the mass missing, some photons must vanish");
    }

    #[test]
    fn multinomial_cell_means_track_probabilities() {
        let mut rng = StdRng::seed_from_u64(4);
        let (mut a, mut b) = (0u64, 0u64);
        let reps = 20_000;
        for _ in 0..reps {
            let c = draw_multinomial(&mut rng, 10, &[0.7, 0.3]);
            a += c[0];
            b += c[1];
        }
        let n = reps as f64 * 10.0;
        assert!((a as f64 / n - 0.7).abs() < 0.01);
        assert!((b as f64 / n - 0.3).abs() < 0.01);
    }
}
