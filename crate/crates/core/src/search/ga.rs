use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AssemblyEvaluator, SearchError, SearchObjective};
use crate::solver::{check_cancel, stream_rng, Candidate, Progress, ProgressEvent, Stage};

const STREAM_GA: u64 = 11;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub tournament_size: usize,
    /// Per-gene probability of resampling the slot.
    pub mutation_prob: f64,
    pub rng_seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig { population: 128, generations: 100, tournament_size: 4, mutation_prob: 0.05, rng_seed: 0 }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.population < 2 || self.population % 2 != 0 {
            return Err(SearchError::InvalidConfig("population must be even and at least 2".into()));
        }
        if self.tournament_size == 0 {
            return Err(SearchError::InvalidConfig("tournament_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return Err(SearchError::InvalidConfig("mutation_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub best: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaResult {
    pub best: Candidate,
    pub best_fitness: f64,
    /// One entry for the initial population and one per generation.
    pub history: Vec<GenerationStats>,
    /// Distinct assemblies evaluated.
    pub evaluations: usize,
}

/// Index of the fittest of `k` uniformly drawn individuals (with replacement).
pub fn tournament<R: Rng + ?Sized>(fitness: &[f64], k: usize, rng: &mut R) -> usize {
    (0..k)
        .map(|_| rng.random_range(0..fitness.len()))
        .min_by(|&a, &b| fitness[a].total_cmp(&fitness[b]).then(a.cmp(&b)))
        .expect("k ≥ 1")
}

/// Single-point crossover with a cut drawn from `1..len`.
pub fn crossover<R: Rng + ?Sized>(a: &[usize], b: &[usize], rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    if a.len() < 2 {
        return (a.to_vec(), b.to_vec());
    }
    let cut = rng.random_range(1..a.len());
    let c1 = a[..cut].iter().chain(&b[cut..]).copied().collect();
    let c2 = b[..cut].iter().chain(&a[cut..]).copied().collect();
    (c1, c2)
}

/// Resamples each gene with probability `p`; returns how many were drawn.
pub fn mutate<R: Rng + ?Sized>(genome: &mut [usize], n_choices: usize, p: f64, rng: &mut R) -> usize {
    let mut drawn = 0;
    for g in genome.iter_mut() {
        if rng.random_bool(p) {
            *g = rng.random_range(0..n_choices);
            drawn += 1;
        }
    }
    drawn
}

fn stats(fitness: &[f64]) -> GenerationStats {
    GenerationStats {
        best: fitness.iter().copied().fold(f64::INFINITY, f64::min),
        mean: fitness.iter().sum::<f64>() / fitness.len() as f64,
    }
}

fn best_index(fitness: &[f64]) -> usize {
    (0..fitness.len()).min_by(|&a, &b| fitness[a].total_cmp(&fitness[b]).then(a.cmp(&b))).expect("non-empty")
}

/// Generational GA over slot-index genomes, minimizing the distance and
/// collision terms. The fittest individual survives unchanged into the
/// next generation.
pub fn genetic_search(
    evaluator: &AssemblyEvaluator<'_>,
    dof: usize,
    ga: &GaConfig,
    progress: &dyn Progress,
) -> Result<GaResult, SearchError> {
    ga.validate()?;
    let k = evaluator.catalog().len();
    if dof == 0 || k == 0 {
        return Err(SearchError::InvalidConfig("need at least one slot and one module".into()));
    }
    let mut rng = stream_rng(ga.rng_seed, &[STREAM_GA]);
    let initial: Vec<Vec<usize>> = (0..ga.population).map(|_| (0..dof).map(|_| rng.random_range(0..k)).collect()).collect();
    run_generations(evaluator, initial, ga, &mut rng, progress)
}

pub(crate) fn run_generations<R: Rng + ?Sized>(
    evaluator: &AssemblyEvaluator<'_>,
    mut population: Vec<Vec<usize>>,
    ga: &GaConfig,
    rng: &mut R,
    progress: &dyn Progress,
) -> Result<GaResult, SearchError> {
    let w = evaluator.weights().clone();
    let k = evaluator.catalog().len();
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut evaluate = |pop: &[Vec<usize>]| -> Result<(Vec<Candidate>, Vec<f64>), SearchError> {
        seen.extend(pop.iter().cloned());
        let cands = evaluator.evaluate_many(pop)?;
        let fit = cands.iter().map(|c| SearchObjective::Fitness.of(c, &w)).collect();
        Ok((cands, fit))
    };

    let (mut cands, mut fitness) = evaluate(&population)?;
    let mut history = vec![stats(&fitness)];
    for gen in 0..ga.generations {
        check_cancel(progress)?;
        let elite = best_index(&fitness);
        let mut next = Vec::with_capacity(population.len());
        next.push(population[elite].clone());
        while next.len() < population.len() {
            let a = tournament(&fitness, ga.tournament_size, rng);
            let b = tournament(&fitness, ga.tournament_size, rng);
            let (mut c1, mut c2) = crossover(&population[a], &population[b], rng);
            mutate(&mut c1, k, ga.mutation_prob, rng);
            mutate(&mut c2, k, ga.mutation_prob, rng);
            next.push(c1);
            if next.len() < population.len() {
                next.push(c2);
            }
        }
        population = next;
        (cands, fitness) = evaluate(&population)?;
        history.push(stats(&fitness));
        progress.report(ProgressEvent {
            stage: Stage::Search,
            done: gen + 1,
            total: ga.generations,
            best_loss: history.last().map(|h| h.best),
        });
    }
    let i = best_index(&fitness);
    Ok(GaResult { best_fitness: fitness[i], best: cands.swap_remove(i), history, evaluations: seen.len() })
}

#[cfg(test)]
mod tests {
    use super::super::tests::{fast_cfg, task};
    use super::*;
    use crate::kinematics::ModuleCatalog;
    use crate::objective::LossWeights;
    use crate::solver::NoProgress;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn crossover_keeps_genes_in_place() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = [0, 0, 0, 0, 0];
        let b = [1, 1, 1, 1, 1];
        for _ in 0..50 {
            let (c1, c2) = crossover(&a, &b, &mut rng);
            let cut = c1.iter().position(|&g| g == 1).unwrap();
            assert!((1..5).contains(&cut));
            assert!(c1[cut..].iter().all(|&g| g == 1) && c2[..cut].iter().all(|&g| g == 1));
            assert!(c2[cut..].iter().all(|&g| g == 0));
        }
    }

    #[test]
    fn full_mutation_redraws_every_gene() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = vec![0; 6];
        assert_eq!(mutate(&mut g, 5, 1.0, &mut rng), 6);
        assert!(g.iter().all(|&x| x < 5));
        assert_eq!(mutate(&mut g, 5, 0.0, &mut rng), 0);
    }

    #[test]
    fn tournament_favors_the_fittest() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = [3.0, 1.0, 2.0, 5.0];
        let picks: Vec<usize> = (0..200).map(|_| tournament(&f, 4, &mut rng)).collect();
        assert!(picks.iter().filter(|&&i| i == 1).count() > 100);
    }

    #[test]
    fn identical_population_without_mutation_is_constant() {
        let s = task(6);
        let cat = ModuleCatalog::default_catalog();
        let w = LossWeights::default();
        let ev = AssemblyEvaluator::new(&s, &cat, &fast_cfg(), &w);
        let ga = GaConfig { population: 8, generations: 5, mutation_prob: 0.0, ..GaConfig::default() };
        let pop = vec![vec![2, 1, 4]; 8];
        let r = run_generations(&ev, pop, &ga, &mut ChaCha8Rng::seed_from_u64(3), &NoProgress).unwrap();
        assert_eq!(r.evaluations, 1);
        assert!(r.history.windows(2).all(|h| h[0] == h[1]));
    }

    #[test]
    fn best_fitness_never_increases() {
        let s = task(7);
        let cat = ModuleCatalog::default_catalog();
        let w = LossWeights::default();
        let ev = AssemblyEvaluator::new(&s, &cat, &fast_cfg(), &w);
        let ga = GaConfig { population: 8, generations: 6, mutation_prob: 0.3, rng_seed: 4, ..GaConfig::default() };
        let r = genetic_search(&ev, 3, &ga, &NoProgress).unwrap();
        assert_eq!(r.history.len(), 7);
        assert!(r.history.windows(2).all(|h| h[1].best <= h[0].best));
        assert_eq!(r.best_fitness, r.history.last().unwrap().best);
        assert!(r.evaluations <= 8 * 7);
        assert_eq!(r, genetic_search(&ev, 3, &ga, &NoProgress).unwrap());
    }

    #[test]
    fn config_validation() {
        assert!(GaConfig { population: 7, ..GaConfig::default() }.validate().is_err());
        assert!(GaConfig { mutation_prob: 1.5, ..GaConfig::default() }.validate().is_err());
        assert!(GaConfig::default().validate().is_ok());
    }
}
