//! Genetic-algorithm selection of feature columns.
//!
//! Chromosomes are inclusion masks over the columns of one feature matrix.
//! Fitness is the validation RMSE of a model refit on the masked columns, so
//! the search is a wrapper around the regression techniques.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::regress::{max_components, select_latent_dim, FitConfig, Technique};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chromosome {
    pub mask: Vec<bool>,
    /// Validation RMSE once evaluated; `+∞` marks a failed fit.
    pub fitness: Option<f64>,
}

impl Chromosome {
    pub fn new(mask: Vec<bool>) -> Chromosome {
        Chromosome { mask, fitness: None }
    }

    pub fn all(n: usize) -> Chromosome {
        Chromosome::new(vec![true; n])
    }

    pub fn n_selected(&self) -> usize {
        self.mask.iter().filter(|b| **b).count()
    }

    pub fn indices(&self) -> Vec<usize> {
        selected_indices(&self.mask)
    }

    /// Mask as a 0/1 string, used as the cache key.
    pub fn key(&self) -> String {
        self.mask.iter().map(|b| if *b { '1' } else { '0' }).collect()
    }
}

pub fn selected_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i).collect()
}

/// Names of the selected columns, in column order.
pub fn selected_columns(mask: &[bool], columns: &[String]) -> Vec<String> {
    selected_indices(mask).into_iter().map(|i| columns[i].clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    /// Per-bit flip probability.
    pub mutation_rate: f64,
    pub tournament_size: usize,
    pub elitism: usize,
    pub min_vars: usize,
    pub seed: u64,
    pub max_lv: usize,
    /// Added to the RMSE per selected column. Zero disables the penalty.
    pub parsimony_weight: f64,
    pub fit: FitConfig,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population_size: 50,
            generations: 40,
            crossover_rate: 0.8,
            mutation_rate: 0.01,
            tournament_size: 3,
            elitism: 2,
            min_vars: 2,
            seed: 7,
            max_lv: 10,
            parsimony_weight: 0.0,
            fit: FitConfig::default(),
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        for (name, r) in [
            ("crossover_rate", self.crossover_rate),
            ("mutation_rate", self.mutation_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("{name} must lie in [0, 1], got {r}"));
            }
        }
        if self.population_size == 0 || self.population_size < 2 * self.elitism {
            return bad(format!(
                "population_size {} must be positive and at least 2·elitism ({})",
                self.population_size,
                2 * self.elitism
            ));
        }
        if self.tournament_size == 0 {
            return bad("tournament_size must be at least 1".into());
        }
        if self.min_vars == 0 {
            return bad("min_vars must be at least 1".into());
        }
        if self.max_lv == 0 {
            return bad("max_lv must be at least 1".into());
        }
        if !(self.parsimony_weight >= 0.0) {
            return bad(format!("parsimony_weight must be ≥ 0, got {}", self.parsimony_weight));
        }
        Ok(())
    }
}

/// Training and validation rows for the search. Test rows never enter.
#[derive(Debug, Clone, Copy)]
pub struct SelectionData<'a> {
    pub x_tr: &'a DMatrix<f64>,
    pub y_tr: &'a DVector<f64>,
    pub x_val: &'a DMatrix<f64>,
    pub y_val: &'a DVector<f64>,
}

impl SelectionData<'_> {
    pub fn ncols(&self) -> usize {
        self.x_tr.ncols()
    }

    fn check(&self) -> Result<()> {
        if self.x_val.ncols() != self.x_tr.ncols() {
            return Err(Error::Shape {
                expected: self.x_tr.ncols(),
                got: self.x_val.ncols(),
            });
        }
        for (x, y) in [(self.x_tr, self.y_tr), (self.x_val, self.y_val)] {
            if x.nrows() != y.len() {
                return Err(Error::Shape {
                    expected: x.nrows(),
                    got: y.len(),
                });
            }
        }
        Ok(())
    }
}

fn fit_masked(mask: &[bool], data: &SelectionData, technique: Technique, max_lv: usize, fit: &FitConfig) -> Result<f64> {
    let cols = selected_indices(mask);
    let xt = data.x_tr.select_columns(&cols);
    let xv = data.x_val.select_columns(&cols);
    let lv = max_lv.min(max_components(xt.nrows(), xt.ncols())).max(1);
    let (best, _, reports) = select_latent_dim(&xt, data.y_tr, &xv, data.y_val, technique, lv, fit)?;
    let report = reports
        .iter()
        .find(|r| r.n_components == best)
        .expect("chosen count is among the candidates");
    Ok(report.validation_rmse)
}

/// Validation RMSE of `technique` refit on the masked columns, with the
/// latent count chosen by [`select_latent_dim`]. A failed fit scores `+∞`.
pub fn fitness(
    mask: &[bool],
    data: &SelectionData,
    technique: Technique,
    max_lv: usize,
    min_vars: usize,
) -> Result<f64> {
    evaluate(mask, data, technique, max_lv, min_vars, &FitConfig::default()).map(|(f, _)| f)
}

/// Fitness plus the fit error when it failed.
fn evaluate(
    mask: &[bool],
    data: &SelectionData,
    technique: Technique,
    max_lv: usize,
    min_vars: usize,
    fit: &FitConfig,
) -> Result<(f64, Option<String>)> {
    data.check()?;
    if mask.len() != data.ncols() {
        return Err(Error::Shape {
            expected: data.ncols(),
            got: mask.len(),
        });
    }
    let n = mask.iter().filter(|b| **b).count();
    if n < min_vars {
        return Err(Error::Precondition(format!(
            "mask selects {n} column(s), need at least {min_vars}"
        )));
    }
    Ok(match fit_masked(mask, data, technique, max_lv, fit) {
        Ok(v) if v.is_finite() => (v, None),
        Ok(v) => (f64::INFINITY, Some(format!("non-finite validation RMSE {v}"))),
        Err(e) => (f64::INFINITY, Some(e.to_string())),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    /// Best fitness in this generation's population.
    pub best: f64,
    /// Mean over the finite fitness values of the population.
    pub mean: f64,
    /// Best fitness seen so far, this generation included.
    pub best_ever: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaResult {
    pub best: Chromosome,
    pub history: Vec<GenerationStats>,
    /// Distinct masks evaluated.
    pub evaluations: usize,
    /// Masks whose fit failed, with the error, in key order.
    pub failures: Vec<(String, String)>,
}

/// Turns on random unset bits until `min_vars` are set.
fn repair(mask: &mut [bool], min_vars: usize, rng: &mut ChaCha8Rng) {
    let mut off: Vec<usize> = mask.iter().enumerate().filter(|(_, b)| !**b).map(|(i, _)| i).collect();
    let mut on = mask.len() - off.len();
    while on < min_vars && !off.is_empty() {
        let k = rng.random_range(0..off.len());
        mask[off.swap_remove(k)] = true;
        on += 1;
    }
}

fn tournament<'a>(pop: &'a [Chromosome], size: usize, rng: &mut ChaCha8Rng) -> &'a Chromosome {
    let mut best = rng.random_range(0..pop.len());
    for _ in 1..size {
        let c = rng.random_range(0..pop.len());
        if score(&pop[c]) < score(&pop[best]) {
            best = c;
        }
    }
    &pop[best]
}

fn score(c: &Chromosome) -> f64 {
    c.fitness.unwrap_or(f64::INFINITY)
}

struct Evaluator<'a> {
    data: SelectionData<'a>,
    technique: Technique,
    config: &'a GaConfig,
    cache: BTreeMap<String, f64>,
    failures: BTreeMap<String, String>,
}

impl Evaluator<'_> {
    /// Scores every unevaluated chromosome; new masks are fitted in parallel.
    fn evaluate(&mut self, pop: &mut [Chromosome]) -> Result<()> {
        let mut fresh: BTreeMap<String, Vec<bool>> = BTreeMap::new();
        for c in pop.iter() {
            let key = c.key();
            if !self.cache.contains_key(&key) {
                fresh.entry(key).or_insert_with(|| c.mask.clone());
            }
        }
        let results: Vec<(String, Result<(f64, Option<String>)>)> = fresh
            .into_par_iter()
            .map(|(key, mask)| {
                let r = evaluate(
                    &mask,
                    &self.data,
                    self.technique,
                    self.config.max_lv,
                    self.config.min_vars,
                    &self.config.fit,
                );
                (key, r)
            })
            .collect();
        for (key, r) in results {
            let (f, err) = r?;
            if let Some(e) = err {
                self.failures.insert(key.clone(), e);
            }
            self.cache.insert(key, f);
        }
        let penalty = self.config.parsimony_weight;
        for c in pop.iter_mut() {
            let f = self.cache[&c.key()];
            c.fitness = Some(f + penalty * c.n_selected() as f64);
        }
        Ok(())
    }
}

fn stats(generation: usize, pop: &[Chromosome], best_ever: f64) -> GenerationStats {
    let scores: Vec<f64> = pop.iter().map(score).collect();
    let finite: Vec<f64> = scores.iter().copied().filter(|v| v.is_finite()).collect();
    GenerationStats {
        generation,
        best: scores.iter().copied().fold(f64::INFINITY, f64::min),
        mean: if finite.is_empty() {
            f64::INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        },
        best_ever,
    }
}

/// Evolves column masks minimising validation RMSE.
///
/// The seeded initial population is generation 0 and each later generation
/// is bred from the previous one, so the history holds `generations` rows
/// (one row when `generations` is 0). The best mask ever evaluated is
/// returned; ties keep the earliest.
pub fn evolve(data: &SelectionData, technique: Technique, config: &GaConfig) -> Result<GaResult> {
    config.validate()?;
    data.check()?;
    let n = data.ncols();
    if config.min_vars > n {
        return Err(Error::Precondition(format!(
            "min_vars {} exceeds the {n} available columns",
            config.min_vars
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut eval = Evaluator {
        data: *data,
        technique,
        config,
        cache: BTreeMap::new(),
        failures: BTreeMap::new(),
    };

    let mut pop: Vec<Chromosome> = (0..config.population_size)
        .map(|_| {
            let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            repair(&mut mask, config.min_vars, &mut rng);
            Chromosome::new(mask)
        })
        .collect();
    eval.evaluate(&mut pop)?;

    let better = |c: &Chromosome, best: &Chromosome| score(c) < score(best);
    let mut best = pop[0].clone();
    for c in &pop {
        if better(c, &best) {
            best = c.clone();
        }
    }
    let mut history = vec![stats(0, &pop, score(&best))];

    for generation in 1..config.generations {
        let mut order: Vec<usize> = (0..pop.len()).collect();
        order.sort_by(|&a, &b| score(&pop[a]).total_cmp(&score(&pop[b])));
        let mut next: Vec<Chromosome> = order[..config.elitism].iter().map(|&i| pop[i].clone()).collect();
        while next.len() < config.population_size {
            let a = tournament(&pop, config.tournament_size, &mut rng);
            let b = tournament(&pop, config.tournament_size, &mut rng);
            let (mut c1, mut c2) = (a.mask.clone(), b.mask.clone());
            if rng.random_bool(config.crossover_rate) {
                for i in 0..n {
                    if rng.random_bool(0.5) {
                        std::mem::swap(&mut c1[i], &mut c2[i]);
                    }
                }
            }
            for child in [c1, c2] {
                if next.len() == config.population_size {
                    break;
                }
                let mut child = child;
                for bit in child.iter_mut() {
                    if rng.random_bool(config.mutation_rate) {
                        *bit = !*bit;
                    }
                }
                repair(&mut child, config.min_vars, &mut rng);
                next.push(Chromosome::new(child));
            }
        }
        pop = next;
        eval.evaluate(&mut pop)?;
        for c in &pop {
            if better(c, &best) {
                best = c.clone();
            }
        }
        history.push(stats(generation, &pop, score(&best)));
    }

    Ok(GaResult {
        best,
        history,
        evaluations: eval.cache.len(),
        failures: eval.failures.into_iter().collect(),
    })
}
