//! The evolutionary solver driving the closed-loop color picker.
//!
//! The population holds every scored ratio triple seen so far, best first
//! and capped in size, so the best individual is never lost (elitism).
//! Proposals are children of tournament-selected parents: a blend crossover
//! on the simplex followed by Gaussian mutation, a clamp to nonnegative, and
//! renormalization. Everything is driven by one seeded generator, so a fixed
//! seed and population yield identical proposals.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Solver hyperparameters. The algorithm family is fixed; these knobs are
/// reported alongside results so runs are reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Individuals entering each selection tournament.
    pub tournament_k: usize,
    /// Standard deviation of the per-component Gaussian mutation.
    pub mutation_sigma: f64,
    /// Maximum retained population; truncation keeps the best.
    pub population_cap: usize,
}

impl Default for SolverConfig {
    fn default() -> SolverConfig {
        SolverConfig {
            tournament_k: 3,
            mutation_sigma: 0.05,
            // A small retained population keeps selection pressure high
            // enough that long sequential runs (small batches) keep
            // refining instead of re-breeding stale mid-field individuals.
            population_cap: 16,
        }
    }
}

/// One measured point: the mixed ratios, the color the camera saw, and its
/// Euclidean distance to the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorSample {
    pub ratios: [f64; 3],
    pub measured: [f64; 3],
    pub score: f64,
}

/// Euclidean distance between a measured color and the target in RGB space.
pub fn color_score(measured: [f64; 3], target: [f64; 3]) -> f64 {
    measured
        .iter()
        .zip(target)
        .map(|(m, t)| (m - t) * (m - t))
        .sum::<f64>()
        .sqrt()
}

/// Full solver state; serializable for reports and checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverState {
    /// Scored individuals, best (lowest score) first.
    pub population: Vec<([f64; 3], f64)>,
    pub generation: u32,
    pub rng_seed: u64,
    pub best_so_far: Option<ColorSample>,
    pub config: SolverConfig,
    #[serde(skip, default = "default_rng")]
    rng: ChaCha8Rng,
}

fn default_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

impl SolverState {
    pub fn new(seed: u64, config: SolverConfig) -> SolverState {
        SolverState {
            population: Vec::new(),
            generation: 0,
            rng_seed: seed,
            best_so_far: None,
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform sample over the ratio simplex (Dirichlet(1,1,1) via
    /// normalized exponentials).
    fn random_ratios(&mut self) -> [f64; 3] {
        let mut draws = [0.0; 3];
        for slot in &mut draws {
            let u: f64 = self.rng.gen_range(f64::EPSILON..1.0);
            *slot = -u.ln();
        }
        normalize(draws)
    }

    /// Record a scored sample, keeping the population best-first and capped.
    /// `best_so_far` only ever improves, so its score is nonincreasing.
    pub fn observe(&mut self, sample: ColorSample) {
        let position = self
            .population
            .partition_point(|(_, score)| *score <= sample.score);
        self.population.insert(position, (sample.ratios, sample.score));
        self.population.truncate(self.config.population_cap);
        let improved = self
            .best_so_far
            .as_ref()
            .map(|best| sample.score < best.score)
            .unwrap_or(true);
        if improved {
            self.best_so_far = Some(sample);
        }
    }

    /// Propose the next `batch` ratio triples. The first generation (empty
    /// population) is chosen uniformly at random; afterwards children are
    /// bred from the population. Increments the generation when `batch > 0`.
    pub fn propose(&mut self, batch: usize) -> Vec<[f64; 3]> {
        if batch == 0 {
            return Vec::new();
        }
        let proposals = (0..batch)
            .map(|_| {
                if self.population.is_empty() {
                    self.random_ratios()
                } else {
                    self.breed()
                }
            })
            .collect();
        self.generation += 1;
        proposals
    }

    fn breed(&mut self) -> [f64; 3] {
        let parent_a = self.tournament();
        let parent_b = self.tournament();
        let alpha: f64 = self.rng.gen_range(0.0..=1.0);
        let mut child = [0.0; 3];
        for c in 0..3 {
            child[c] = alpha * parent_a[c] + (1.0 - alpha) * parent_b[c];
        }
        let noise = Normal::new(0.0, self.config.mutation_sigma).expect("valid sigma");
        for slot in &mut child {
            *slot = (*slot + noise.sample(&mut self.rng)).max(0.0);
        }
        normalize(child)
    }

    /// Pick the best of `tournament_k` uniformly drawn individuals.
    fn tournament(&mut self) -> [f64; 3] {
        let k = self.config.tournament_k.max(1);
        let mut best: Option<(usize, f64)> = None;
        for _ in 0..k {
            let index = self.rng.gen_range(0..self.population.len());
            let score = self.population[index].1;
            if best.map(|(_, s)| score < s).unwrap_or(true) {
                best = Some((index, score));
            }
        }
        self.population[best.expect("k >= 1").0].0
    }
}

/// Renormalize onto the simplex; a degenerate all-zero triple becomes the
/// uniform mixture.
fn normalize(mut ratios: [f64; 3]) -> [f64; 3] {
    let total: f64 = ratios.iter().sum();
    if total <= 0.0 {
        return [1.0 / 3.0; 3];
    }
    for slot in &mut ratios {
        *slot /= total;
    }
    ratios
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scored(state: &mut SolverState, ratios: [f64; 3], score: f64) {
        state.observe(ColorSample {
            ratios,
            measured: [0.0; 3],
            score,
        });
    }

    #[test]
    fn empty_batch_is_empty_and_leaves_state_unchanged() {
        let mut state = SolverState::new(1, SolverConfig::default());
        scored(&mut state, [0.5, 0.25, 0.25], 10.0);
        let before = (state.generation, state.population.clone());
        assert!(state.propose(0).is_empty());
        assert_eq!((state.generation, state.population.clone()), before);
    }

    #[test]
    fn fixed_seed_and_population_give_identical_proposals() {
        let mut build = || {
            let mut state = SolverState::new(42, SolverConfig::default());
            scored(&mut state, [0.6, 0.2, 0.2], 30.0);
            scored(&mut state, [0.2, 0.6, 0.2], 20.0);
            scored(&mut state, [0.2, 0.2, 0.6], 40.0);
            state.propose(8)
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn proposals_stay_on_the_simplex() {
        let mut state = SolverState::new(7, SolverConfig::default());
        for ratios in state.propose(16) {
            assert!(ratios.iter().all(|&r| r >= 0.0));
            assert!((ratios.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        scored(&mut state, [1.0, 0.0, 0.0], 50.0);
        for ratios in state.propose(64) {
            assert!(ratios.iter().all(|&r| r >= 0.0));
            assert!((ratios.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn best_so_far_is_nonincreasing_and_elite_survives_truncation() {
        let mut state = SolverState::new(3, SolverConfig {
            population_cap: 4,
            ..SolverConfig::default()
        });
        let mut last_best = f64::INFINITY;
        for i in 0..20 {
            let score = (37.0 * (i as f64 + 1.0)) % 100.0;
            scored(&mut state, [1.0 / 3.0; 3], score);
            let best = state.best_so_far.as_ref().unwrap().score;
            assert!(best <= last_best);
            last_best = best;
            assert_eq!(state.population[0].1, best, "elite kept at front");
            assert!(state.population.len() <= 4);
        }
    }

    #[test]
    fn score_is_euclidean_distance() {
        assert!((color_score([85.0; 3], [120.0; 3]) - 3f64.sqrt() * 35.0).abs() < 1e-9);
        assert_eq!(color_score([120.0; 3], [120.0; 3]), 0.0);
    }
}
