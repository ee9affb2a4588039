//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

pub mod synthetic;

use nexus_core::backends::TokenUsage;
use nexus_core::evalkit::{AttemptEvent, AttemptLog, PriceTable};
use nexus_core::journal::Component;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Mean and Monte-Carlo standard error of one scalar functional.
#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

pub fn batch_means(xs: &[f64], n_batches: usize) -> Estimate {
    let size = xs.len() / n_batches;
    let means: Vec<f64> = xs
        .chunks_exact(size)
        .take(n_batches)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    let m = means.iter().sum::<f64>() / means.len() as f64;
    let var = means.iter().map(|b| (b - m).powi(2)).sum::<f64>() / (means.len() - 1) as f64;
    Estimate {
        mean: xs.iter().sum::<f64>() / xs.len() as f64,
        se: (var / means.len() as f64).sqrt(),
    }
}

/// Log posterior of log-strengths `u` with the rate hyperparameter
/// integrated out: each `λ` has marginal prior density `1/(1+λ)^2`.
fn log_target(u: &[f64], matches: &[Vec<usize>]) -> f64 {
    let mut lp: f64 = u.iter().map(|&x| x - 2.0 * (1.0 + x.exp()).ln()).sum();
    for m in matches {
        for k in 0..m.len() - 1 {
            let denom: f64 = m[k..].iter().map(|&p| u[p].exp()).sum();
            lp += u[m[k]] - denom.ln();
        }
    }
    lp
}

/// Random-walk Metropolis on log-strengths. Returns, per player, the
/// posterior mean of the strength share `λ_p / Σλ`.
pub fn metropolis_shares(n_players: usize, matches: &[Vec<usize>], steps: usize, seed: u64) -> Vec<Estimate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = vec![0.0f64; n_players];
    let mut lp = log_target(&u, matches);
    let burn = steps / 10;
    let mut draws = vec![Vec::with_capacity(steps); n_players];
    for step in 0..burn + steps {
        for p in 0..n_players {
            let old = u[p];
            let z: f64 = rng.sample(StandardNormal);
            u[p] = old + 1.5 * z;
            let cand = log_target(&u, matches);
            if rng.random::<f64>().ln() < cand - lp {
                lp = cand;
            } else {
                u[p] = old;
            }
        }
        if step >= burn {
            let total: f64 = u.iter().map(|x| x.exp()).sum();
            for p in 0..n_players {
                draws[p].push(u[p].exp() / total);
            }
        }
    }
    draws.iter().map(|d| batch_means(d, 50)).collect()
}

/// Strength shares from per-player strength chains of equal length.
pub fn shares_from_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let len = chains[0].len();
    let mut out = vec![Vec::with_capacity(len); chains.len()];
    for t in 0..len {
        let total: f64 = chains.iter().map(|c| c[t]).sum();
        for (p, c) in chains.iter().enumerate() {
            out[p].push(c[t] / total);
        }
    }
    out
}

/// Frozen parts of a sketch text, found by plain marker search: everything
/// outside the interiors of `EVOLVE-BLOCK` and `EVOLVE-VALUE` pairs.
pub fn frozen_parts(text: &str) -> Vec<String> {
    const PAIRS: [(&str, &str); 2] = [
        ("-- EVOLVE-BLOCK-START\n", "-- EVOLVE-BLOCK-END"),
        ("/- EVOLVE-VALUE -/", "/- END-EVOLVE-VALUE -/"),
    ];
    let mut spans: Vec<(usize, usize)> = Vec::new();
    for (open, close) in PAIRS {
        let mut from = 0;
        while let Some(i) = text[from..].find(open) {
            let start = from + i + open.len();
            let end = start + text[start..].find(close).expect("closing marker");
            spans.push((start, end));
            from = end + close.len();
        }
    }
    spans.sort();
    let mut parts = Vec::new();
    let mut at = 0;
    for (s, e) in spans {
        parts.push(text[at..s].to_string());
        at = e;
    }
    parts.push(text[at..].to_string());
    parts
}

/// True when `candidate` is the frozen parts of the original in order, with
/// anything in between.
pub fn keeps_frozen(parts: &[String], candidate: &str) -> bool {
    let (first, rest) = parts.split_first().expect("at least one part");
    let Some(mut tail) = candidate.strip_prefix(first.as_str()) else {
        return false;
    };
    let Some((last, middle)) = rest.split_last() else {
        return tail.is_empty();
    };
    for part in middle {
        match tail.find(part.as_str()) {
            Some(i) => tail = &tail[i + part.len()..],
            None => return false,
        }
    }
    tail.ends_with(last.as_str())
}

pub fn synthetic_logs() -> Vec<AttemptLog> {
    (0..synthetic::SYNTHETIC_ATTEMPTS)
        .map(|i| {
            let (events, success) = synthetic::synthetic_attempt(i);
            let events = events
                .into_iter()
                .map(|(t, input, cache, output, comp)| AttemptEvent {
                    timestamp: t,
                    usage: TokenUsage {
                        input_tokens: input,
                        cache_read_tokens: cache,
                        output_tokens: output,
                    },
                    component: if comp == "rater" {
                        Component::Rater
                    } else {
                        Component::Prover
                    },
                    duration_ms: 0,
                })
                .collect();
            AttemptLog::new(format!("attempt-{i}"), events, success).unwrap()
        })
        .collect()
}

pub fn synthetic_prices() -> PriceTable {
    PriceTable::from_toml_str(synthetic::SYNTHETIC_PRICES).unwrap()
}
