//! Plackett–Luce strengths from ranked matches.
//!
//! Each sketch `s` has a strength `λ_s` with prior `λ_s | r_s ~ Gamma(1, r_s)`
//! and `r_s ~ Gamma(1, 1)` (shape, rate). A ranking `ρ` of `n` players has
//! likelihood `∏_{k<n} λ_{ρ_k} / Σ_{m≥k} λ_{ρ_m}`.
//!
//! The sampler introduces one exponential latent per choice stage,
//! `Z_{jk} ~ Exp(Σ_{m≥k} λ_{ρ_jm})`, which makes every full conditional a
//! Gamma:
//!
//! - `Z_{jk} | λ ~ Gamma(1, Σ_{m≥k} λ_{ρ_jm})`
//! - `λ_s | Z, r ~ Gamma(1 + w_s, r_s + Σ_{(j,k): s ∈ ρ_j[k..]} Z_{jk})` where
//!   `w_s` counts the stages `s` wins
//! - `r_s | λ_s ~ Gamma(2, 1 + λ_s)`
//!
//! One sweep updates all latents, then all strengths, then all rates.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::population::SketchId;

pub const ELO_BASE: f64 = 1200.0;
pub const ELO_SCALE: f64 = 400.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RatingError {
    #[error("match log is empty")]
    EmptyMatchLog,
    #[error("match refers to unknown player {0}")]
    UnknownIdInMatch(SketchId),
    #[error("match lists player {0} twice")]
    DuplicateInMatch(SketchId),
    #[error("a match needs at least two players")]
    MatchTooShort,
    #[error("strength must be positive, got {0}")]
    NonPositiveStrength(f64),
    #[error("population of {0} is too small for a match")]
    PopulationTooSmall(usize),
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GibbsConfig {
    pub n_samples: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            n_samples: 1000,
            burn_in: 200,
            thinning: 25,
            seed: 0,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<(), RatingError> {
        if self.n_samples == 0 {
            return Err(RatingError::InvalidConfig("n_samples must be at least 1".into()));
        }
        if self.thinning == 0 {
            return Err(RatingError::InvalidConfig("thinning must be at least 1".into()));
        }
        Ok(())
    }
}

/// Players and the strict rankings observed between them.
///
/// Sampler state is indexed by order of first appearance in `matches`
/// (then by `players` order for the rest), so relabelling ids does not change
/// the random stream.
#[derive(Debug, Clone, Default)]
pub struct PlackettLuceModel {
    pub players: Vec<SketchId>,
    pub matches: Vec<Vec<SketchId>>,
}

impl PlackettLuceModel {
    pub fn new(players: Vec<SketchId>, matches: Vec<Vec<SketchId>>) -> Self {
        PlackettLuceModel { players, matches }
    }

    fn indexed(&self) -> Result<(Vec<SketchId>, Vec<Vec<usize>>), RatingError> {
        if self.matches.is_empty() {
            return Err(RatingError::EmptyMatchLog);
        }
        let known: std::collections::HashSet<_> = self.players.iter().copied().collect();
        let mut order: Vec<SketchId> = Vec::new();
        let mut index: HashMap<SketchId, usize> = HashMap::new();
        let mut matches = Vec::with_capacity(self.matches.len());
        for m in &self.matches {
            if m.len() < 2 {
                return Err(RatingError::MatchTooShort);
            }
            let mut seen = std::collections::HashSet::new();
            let mut row = Vec::with_capacity(m.len());
            for id in m {
                if !known.contains(id) {
                    return Err(RatingError::UnknownIdInMatch(*id));
                }
                if !seen.insert(*id) {
                    return Err(RatingError::DuplicateInMatch(*id));
                }
                let i = *index.entry(*id).or_insert_with(|| {
                    order.push(*id);
                    order.len() - 1
                });
                row.push(i);
            }
            matches.push(row);
        }
        for id in &self.players {
            index.entry(*id).or_insert_with(|| {
                order.push(*id);
                order.len() - 1
            });
        }
        Ok((order, matches))
    }
}

/// Posterior draws of every player's strength.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    ids: Vec<SketchId>,
    samples: Vec<Vec<f64>>,
}

impl Posterior {
    pub fn ids(&self) -> &[SketchId] {
        &self.ids
    }

    pub fn samples(&self, id: SketchId) -> Option<&[f64]> {
        self.ids
            .iter()
            .position(|&i| i == id)
            .map(|p| self.samples[p].as_slice())
    }

    pub fn mean(&self, id: SketchId) -> Option<f64> {
        self.samples(id).map(mean)
    }

    pub fn into_map(self) -> BTreeMap<SketchId, Vec<f64>> {
        self.ids.into_iter().zip(self.samples).collect()
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Monte-Carlo standard error of the mean of a correlated chain by
/// non-overlapping batch means.
pub fn batch_means_standard_error(xs: &[f64], n_batches: usize) -> f64 {
    let n_batches = n_batches.max(2).min(xs.len().max(2));
    let size = xs.len() / n_batches;
    if size == 0 {
        return variance(xs).sqrt();
    }
    let batch_means: Vec<f64> = xs.chunks_exact(size).take(n_batches).map(mean).collect();
    (variance(&batch_means) / batch_means.len() as f64).sqrt()
}

fn gamma(rng: &mut ChaCha8Rng, shape: f64, rate: f64) -> f64 {
    let draw = Gamma::new(shape, 1.0 / rate)
        .expect("gamma parameters are positive and finite")
        .sample(rng);
    draw.max(f64::MIN_POSITIVE)
}

pub fn gibbs_posterior(model: &PlackettLuceModel, cfg: &GibbsConfig) -> Result<Posterior, RatingError> {
    cfg.validate()?;
    let (ids, matches) = model.indexed()?;
    let n = ids.len();

    // Stage wins and, per player, the (match, position) pairs it occupies.
    let mut wins = vec![0usize; n];
    let mut appearances: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (j, m) in matches.iter().enumerate() {
        for (pos, &p) in m.iter().enumerate() {
            if pos + 1 < m.len() {
                wins[p] += 1;
            }
            appearances[p].push((j, pos));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut lambda = vec![1.0f64; n];
    let mut rate = vec![1.0f64; n];
    // cum_z[j][pos] = Σ_{k ≤ min(pos, len-2)} Z_{jk}
    let mut cum_z: Vec<Vec<f64>> = matches.iter().map(|m| vec![0.0; m.len()]).collect();
    let mut samples = vec![Vec::with_capacity(cfg.n_samples); n];

    for sweep in 0..cfg.burn_in + cfg.n_samples {
        for (j, m) in matches.iter().enumerate() {
            let mut tail = vec![0.0; m.len()];
            let mut acc = 0.0;
            for pos in (0..m.len()).rev() {
                acc += lambda[m[pos]];
                tail[pos] = acc;
            }
            let mut running = 0.0;
            for pos in 0..m.len() {
                if pos + 1 < m.len() {
                    running += gamma(&mut rng, 1.0, tail[pos]);
                }
                cum_z[j][pos] = running;
            }
        }
        for s in 0..n {
            let exposure: f64 = appearances[s].iter().map(|&(j, pos)| cum_z[j][pos]).sum();
            lambda[s] = gamma(&mut rng, 1.0 + wins[s] as f64, rate[s] + exposure);
        }
        for s in 0..n {
            rate[s] = gamma(&mut rng, 2.0, 1.0 + lambda[s]);
        }
        if sweep >= cfg.burn_in {
            for s in 0..n {
                samples[s].push(lambda[s]);
            }
        }
    }

    Ok(Posterior { ids, samples })
}

pub fn elo_from_mean(strength_mean: f64) -> Result<f64, RatingError> {
    if !strength_mean.is_finite() || strength_mean <= 0.0 {
        return Err(RatingError::NonPositiveStrength(strength_mean));
    }
    Ok(ELO_BASE + ELO_SCALE * strength_mean.log10())
}

/// What Thompson selection needs to know about one sketch.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingView {
    pub id: SketchId,
    /// Full posterior chain; empty when the sketch has never been matched.
    pub samples: Vec<f64>,
    pub strength_var: f64,
}

impl RatingView {
    fn thinned(&self, thinning: usize) -> Vec<f64> {
        let kept: Vec<f64> = self
            .samples
            .iter()
            .skip(thinning - 1)
            .step_by(thinning)
            .copied()
            .collect();
        if kept.is_empty() {
            self.samples.clone()
        } else {
            kept
        }
    }

    /// Variance used for refilling; unrated sketches rank first.
    fn refill_key(&self) -> f64 {
        if self.samples.is_empty() {
            f64::INFINITY
        } else {
            self.strength_var
        }
    }
}

/// Draws a strength from the prior predictive: `r ~ Gamma(1,1)`, `λ ~ Exp(r)`.
fn prior_draw(rng: &mut ChaCha8Rng) -> f64 {
    let r = gamma(rng, 1.0, 1.0);
    Exp::new(r).expect("positive rate").sample(rng)
}

pub fn thompson_select(
    population: &[RatingView],
    players: usize,
    cfg: &GibbsConfig,
    seed: u64,
) -> Result<Vec<SketchId>, RatingError> {
    cfg.validate()?;
    if population.len() < 2 {
        return Err(RatingError::PopulationTooSmall(population.len()));
    }
    if players < 2 {
        return Err(RatingError::InvalidConfig("a match needs at least two players".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let thinned: Vec<Vec<f64>> = population.iter().map(|v| v.thinned(cfg.thinning)).collect();

    let mut chosen: Vec<usize> = Vec::with_capacity(players);
    for _ in 0..players {
        let mut best = 0usize;
        let mut best_value = f64::NEG_INFINITY;
        for (i, draws) in thinned.iter().enumerate() {
            let value = if draws.is_empty() {
                prior_draw(&mut rng)
            } else {
                draws[rng.random_range(0..draws.len())]
            };
            if value > best_value {
                best = i;
                best_value = value;
            }
        }
        if !chosen.contains(&best) {
            chosen.push(best);
        }
    }

    let target = players.min(population.len());
    if chosen.len() < target {
        let mut rest: Vec<usize> = (0..population.len()).filter(|i| !chosen.contains(i)).collect();
        rest.sort_by(|&a, &b| {
            population[b]
                .refill_key()
                .total_cmp(&population[a].refill_key())
                .then(population[a].id.cmp(&population[b].id))
        });
        chosen.extend(rest.into_iter().take(target - chosen.len()));
    }
    Ok(chosen.into_iter().map(|i| population[i].id).collect())
}

/// Orders every tie group by a Plackett–Luce draw from `strength`.
///
/// Uses the exponential race: with `E_i ~ Exp(λ_i)`, sorting by `E_i` gives a
/// Plackett–Luce distributed order.
pub fn break_ties<F>(raw_ranking: &[Vec<SketchId>], strength: F, seed: u64) -> Vec<SketchId>
where
    F: Fn(SketchId) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for group in raw_ranking {
        if group.len() < 2 {
            out.extend_from_slice(group);
            continue;
        }
        let mut keyed: Vec<(f64, SketchId)> = group
            .iter()
            .map(|&id| {
                let lambda = strength(id);
                let lambda = if lambda > 0.0 && lambda.is_finite() {
                    lambda
                } else {
                    1.0
                };
                let e: f64 = Exp::new(lambda).expect("positive rate").sample(&mut rng);
                (e, id)
            })
            .collect();
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out.extend(keyed.into_iter().map(|(_, id)| id));
    }
    out
}
