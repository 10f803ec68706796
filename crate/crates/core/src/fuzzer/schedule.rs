use std::time::Instant;

use rand::Rng;

/// Campaign time source.
#[derive(Debug, Clone)]
pub enum Clock {
    /// Time advances a fixed amount per execution.
    Virtual { us_per_exec: u64 },
    Wall(Instant),
}

impl Clock {
    pub fn now_ms(&self, execs: u64) -> u64 {
        match self {
            Clock::Virtual { us_per_exec } => execs.saturating_mul(*us_per_exec) / 1000,
            Clock::Wall(start) => start.elapsed().as_millis() as u64,
        }
    }
}

/// Probability of entering the surgical stage, rising linearly from 0 right
/// after a find to 1 once `window_ms` passed without one. With no find yet
/// the stage is always entered.
pub fn surgical_probability(now_ms: u64, last_interesting_ms: Option<u64>, window_ms: u64) -> f64 {
    match last_interesting_ms {
        None => 1.0,
        Some(_) if window_ms == 0 => 1.0,
        Some(t) => (now_ms.saturating_sub(t) as f64 / window_ms as f64).min(1.0),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn enter_surgical(
    already_surgical: bool,
    len: usize,
    cap: usize,
    now_ms: u64,
    last_interesting_ms: Option<u64>,
    window_ms: u64,
    rng: &mut impl Rng,
) -> bool {
    if already_surgical || len > cap || len == 0 {
        return false;
    }
    rng.gen_bool(surgical_probability(now_ms, last_interesting_ms, window_ms))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Field,
    Chunk,
    Havoc,
}

/// One stacking step: field with `pr_field`, chunk with `pr_chunk`,
/// havoc otherwise.
pub fn choose_step(pr_field: f64, pr_chunk: f64, rng: &mut impl Rng) -> Step {
    let r: f64 = rng.gen();
    if r < pr_field {
        Step::Field
    } else if r < pr_field + pr_chunk {
        Step::Chunk
    } else {
        Step::Havoc
    }
}

/// Number of stacked mutations for one child.
pub fn stack_size(rng: &mut impl Rng) -> usize {
    rng.gen_range(1..=256)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ramp_endpoints() {
        assert_eq!(surgical_probability(5000, Some(5000), 50_000), 0.0);
        assert_eq!(surgical_probability(30_000, Some(5000), 50_000), 0.5);
        assert_eq!(surgical_probability(55_000, Some(5000), 50_000), 1.0);
        assert_eq!(surgical_probability(90_000, Some(5000), 50_000), 1.0);
        assert_eq!(surgical_probability(0, None, 50_000), 1.0);
    }

    #[test]
    fn forced_outcomes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert!(enter_surgical(false, 10, 3000, 60_000, Some(10_000), 50_000, &mut rng));
            assert!(!enter_surgical(false, 10, 3000, 1000, Some(1000), 50_000, &mut rng));
            assert!(!enter_surgical(true, 10, 3000, 60_000, Some(0), 50_000, &mut rng));
            assert!(!enter_surgical(false, 3001, 3000, 60_000, Some(0), 50_000, &mut rng));
        }
    }

    #[test]
    fn virtual_clock() {
        let c = Clock::Virtual { us_per_exec: 250 };
        assert_eq!(c.now_ms(4000), 1000);
    }

    #[test]
    fn expected_structural_steps_per_stack() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let stacks = 4000;
        let mut structural = 0usize;
        for _ in 0..stacks {
            for _ in 0..256 {
                if choose_step(1.0 / 15.0, 1.0 / 15.0, &mut rng) != Step::Havoc {
                    structural += 1;
                }
            }
        }
        let mean = structural as f64 / stacks as f64;
        let expected = 256.0 * 2.0 / 15.0;
        assert!((mean - expected).abs() / expected < 0.05, "{mean}");
    }

    #[test]
    fn zero_probabilities_mean_pure_havoc() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..10_000).all(|_| choose_step(0.0, 0.0, &mut rng) == Step::Havoc));
        assert!((0..1000).map(|_| stack_size(&mut rng)).all(|n| (1..=256).contains(&n)));
    }
}
