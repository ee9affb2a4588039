//! Cost accounting, chunked solve-rate estimation and Pareto reports.
//!
//! Attempts are grouped in input order into chunks of `chunk_size`. A chunk
//! succeeds when any member succeeds; its cost is then truncated at the
//! earliest success time `T` of the chunk, counting every member event with
//! timestamp `<= T`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::TokenUsage;
use crate::journal::{Component, Event, JournalRecord};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("indivisible chunking: {attempts} attempts cannot be split into chunks of {chunk_size}")]
    IndivisibleChunking { attempts: usize, chunk_size: usize },
    #[error("no attempts to evaluate")]
    EmptyAttempts,
    #[error("chunk size must be at least 1")]
    InvalidChunkSize,
    #[error("attempt {0}: events are not sorted by timestamp")]
    UnsortedEvents(String),
    #[error("attempt {0}: success time precedes the first event")]
    SuccessBeforeFirstEvent(String),
    #[error("price table: {0}")]
    Prices(String),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Currency per token for one component.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rates {
    pub p_input: f64,
    pub p_cache: f64,
    pub p_output: f64,
}

/// Per-component rates, usually read from a TOML file:
///
/// ```toml
/// [prover]
/// p_input = 0.000003
/// p_cache = 0.0000003
/// p_output = 0.000015
///
/// [rater]
/// p_input = 0.000003
/// p_cache = 0.0000003
/// p_output = 0.000015
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceTable {
    pub prover: Rates,
    pub rater: Rates,
}

impl PriceTable {
    pub fn uniform(rates: Rates) -> Self {
        PriceTable {
            prover: rates,
            rater: rates,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, EvalError> {
        let table: PriceTable = toml::from_str(text).map_err(|e| EvalError::Prices(e.to_string()))?;
        table.validate()?;
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        for (name, r) in [("prover", self.prover), ("rater", self.rater)] {
            for (field, v) in [("p_input", r.p_input), ("p_cache", r.p_cache), ("p_output", r.p_output)] {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(EvalError::Prices(format!(
                        "{name}.{field} must be a non-negative number"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn rates(&self, component: Component) -> Rates {
        match component {
            Component::Prover => self.prover,
            Component::Rater => self.rater,
        }
    }
}

pub fn compute_cost(usage: &TokenUsage, prices: &PriceTable, component: Component) -> f64 {
    let r = prices.rates(component);
    usage.input_tokens as f64 * r.p_input
        + usage.cache_read_tokens as f64 * r.p_cache
        + usage.output_tokens as f64 * r.p_output
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptEvent {
    pub timestamp: u64,
    pub usage: TokenUsage,
    pub component: Component,
    /// Wall-clock duration, for time instead of cost estimates.
    #[serde(default)]
    pub duration_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptLog {
    pub attempt_id: String,
    pub events: Vec<AttemptEvent>,
    pub success_time: Option<u64>,
}

impl AttemptLog {
    pub fn new(
        attempt_id: impl Into<String>,
        events: Vec<AttemptEvent>,
        success_time: Option<u64>,
    ) -> Result<Self, EvalError> {
        let log = AttemptLog {
            attempt_id: attempt_id.into(),
            events,
            success_time,
        };
        log.validate()?;
        Ok(log)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.events.windows(2).any(|w| w[0].timestamp > w[1].timestamp) {
            return Err(EvalError::UnsortedEvents(self.attempt_id.clone()));
        }
        if let (Some(t), Some(first)) = (self.success_time, self.events.first()) {
            if t < first.timestamp {
                return Err(EvalError::SuccessBeforeFirstEvent(self.attempt_id.clone()));
            }
        }
        Ok(())
    }

    /// Builds an attempt from journal records: every `turn` is a cost event
    /// and the first `solve` marks success. With `worker` set, only that
    /// worker's records count.
    pub fn from_records(attempt_id: impl Into<String>, records: &[JournalRecord], worker: Option<&str>) -> Self {
        let mut events = Vec::new();
        let mut success_time = None;
        for r in records {
            if worker.is_some_and(|w| w != r.worker) {
                continue;
            }
            match &r.event {
                Event::Turn { usage, component, .. } => events.push(AttemptEvent {
                    timestamp: r.t_ms,
                    usage: *usage,
                    component: *component,
                    duration_ms: r.dur_ms.unwrap_or(0),
                }),
                Event::Solve { .. } if success_time.is_none() => success_time = Some(r.t_ms),
                _ => {}
            }
        }
        events.sort_by_key(|e| e.timestamp);
        if let (Some(t), Some(first)) = (success_time, events.first()) {
            success_time = Some(t.max(first.timestamp));
        }
        AttemptLog {
            attempt_id: attempt_id.into(),
            events,
            success_time,
        }
    }

    pub fn total_cost(&self, prices: &PriceTable) -> f64 {
        self.events
            .iter()
            .map(|e| compute_cost(&e.usage, prices, e.component))
            .sum()
    }

    pub fn total_usage(&self) -> TokenUsage {
        let mut total = TokenUsage::default();
        for e in &self.events {
            total += e.usage;
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkResult {
    pub index: usize,
    pub success_time: Option<u64>,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkEstimate {
    pub n_chunks: usize,
    pub successes: usize,
    pub solve_rate: f64,
    pub standard_error: f64,
    /// Mean truncated cost over successful chunks; `None` when none succeeded.
    pub mean_success_cost: Option<f64>,
    /// Mean over all chunks, failed chunks counted in full.
    pub mean_all_cost: f64,
    pub chunks: Vec<ChunkResult>,
}

pub fn binomial_standard_error(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Chunked estimate with an arbitrary per-event weight.
pub fn chunk_estimate_by<F>(attempts: &[AttemptLog], chunk_size: usize, weight: F) -> Result<ChunkEstimate, EvalError>
where
    F: Fn(&AttemptEvent) -> f64,
{
    if attempts.is_empty() {
        return Err(EvalError::EmptyAttempts);
    }
    if chunk_size == 0 {
        return Err(EvalError::InvalidChunkSize);
    }
    if !attempts.len().is_multiple_of(chunk_size) {
        return Err(EvalError::IndivisibleChunking {
            attempts: attempts.len(),
            chunk_size,
        });
    }
    for a in attempts {
        a.validate()?;
    }

    let chunks: Vec<ChunkResult> = attempts
        .chunks(chunk_size)
        .enumerate()
        .map(|(index, members)| {
            let success_time = members.iter().filter_map(|a| a.success_time).min();
            let cost = members
                .iter()
                .flat_map(|a| a.events.iter())
                .filter(|e| success_time.is_none_or(|t| e.timestamp <= t))
                .map(&weight)
                .sum();
            ChunkResult {
                index,
                success_time,
                cost,
            }
        })
        .collect();

    let n = chunks.len();
    let successes = chunks.iter().filter(|c| c.success_time.is_some()).count();
    let p = successes as f64 / n as f64;
    let success_costs: Vec<f64> = chunks
        .iter()
        .filter(|c| c.success_time.is_some())
        .map(|c| c.cost)
        .collect();
    Ok(ChunkEstimate {
        n_chunks: n,
        successes,
        solve_rate: p,
        standard_error: binomial_standard_error(p, n),
        mean_success_cost: (!success_costs.is_empty())
            .then(|| success_costs.iter().sum::<f64>() / success_costs.len() as f64),
        mean_all_cost: chunks.iter().map(|c| c.cost).sum::<f64>() / n as f64,
        chunks,
    })
}

pub fn chunk_estimate(
    attempts: &[AttemptLog],
    chunk_size: usize,
    prices: &PriceTable,
) -> Result<ChunkEstimate, EvalError> {
    chunk_estimate_by(attempts, chunk_size, |e| compute_cost(&e.usage, prices, e.component))
}

/// Same estimator with wall-clock milliseconds in place of cost.
pub fn chunk_time_estimate(attempts: &[AttemptLog], chunk_size: usize) -> Result<ChunkEstimate, EvalError> {
    chunk_estimate_by(attempts, chunk_size, |e| e.duration_ms as f64)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v:.6}"))
}

impl ChunkEstimate {
    /// Per-chunk CSV: `chunk,success,success_time,cost`.
    pub fn chunks_csv(&self) -> Result<String, EvalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["chunk", "success", "success_time", "cost"])?;
        for c in &self.chunks {
            w.write_record([
                c.index.to_string(),
                c.success_time.is_some().to_string(),
                c.success_time.map_or_else(String::new, |t| t.to_string()),
                format!("{:.6}", c.cost),
            ])?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv is utf-8"))
    }

    /// `key=value` summary lines.
    pub fn summary_lines(&self) -> Vec<String> {
        vec![
            format!("chunks={}", self.n_chunks),
            format!("successes={}", self.successes),
            format!("solve_rate={:.6}", self.solve_rate),
            format!("standard_error={:.6}", self.standard_error),
            format!("mean_success_cost={}", fmt_opt(self.mean_success_cost)),
            format!("mean_all_cost={:.6}", self.mean_all_cost),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub label: String,
    pub solve_rate: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoRow {
    pub label: String,
    pub solve_rate: f64,
    pub cost: f64,
    pub dominated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoReport {
    pub rows: Vec<ParetoRow>,
}

/// Rows sorted by cost with dominated points flagged. A point is dominated
/// when another costs no more and solves no less, strictly better in one.
pub fn pareto_table(points: &[ParetoPoint]) -> ParetoReport {
    let dominated = |p: &ParetoPoint| {
        points.iter().any(|q| {
            q.cost <= p.cost && q.solve_rate >= p.solve_rate && (q.cost < p.cost || q.solve_rate > p.solve_rate)
        })
    };
    let mut rows: Vec<ParetoRow> = points
        .iter()
        .map(|p| ParetoRow {
            label: p.label.clone(),
            solve_rate: p.solve_rate,
            cost: p.cost,
            dominated: dominated(p),
        })
        .collect();
    rows.sort_by(|a, b| a.cost.total_cmp(&b.cost).then(b.solve_rate.total_cmp(&a.solve_rate)));
    ParetoReport { rows }
}

impl ParetoReport {
    pub fn to_csv(&self) -> Result<String, EvalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["label", "solve_rate", "cost", "dominated"])?;
        for r in &self.rows {
            w.write_record([
                r.label.clone(),
                format!("{:.6}", r.solve_rate),
                format!("{:.6}", r.cost),
                r.dominated.to_string(),
            ])?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv is utf-8"))
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(5);
        let mut out = format!("{:<width$}  {:>10}  {:>14}  frontier\n", "label", "solve_rate", "cost");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<width$}  {:>10.4}  {:>14.6}  {}\n",
                r.label,
                r.solve_rate,
                r.cost,
                if r.dominated { "" } else { "*" }
            ));
        }
        out
    }

    /// Solve rate against cost, frontier points filled.
    pub fn to_svg(&self) -> String {
        let (w, h, m) = (480.0, 320.0, 48.0);
        let max_cost = self
            .rows
            .iter()
            .map(|r| r.cost)
            .fold(0.0_f64, f64::max)
            .max(f64::MIN_POSITIVE);
        let x = |c: f64| m + (w - 2.0 * m) * c / max_cost;
        let y = |s: f64| h - m - (h - 2.0 * m) * s;
        let mut out = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
        );
        out.push_str(&format!(
            "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
            b = h - m,
            r = w - m
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">cost</text>\n<text x=\"12\" y=\"{}\" transform=\"rotate(-90 12 {})\" text-anchor=\"middle\">solve rate</text>\n",
            w / 2.0,
            h - 12.0,
            h / 2.0,
            h / 2.0
        ));
        for r in &self.rows {
            let fill = if r.dominated { "none" } else { "black" };
            out.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" stroke=\"black\" fill=\"{fill}\"><title>{}</title></circle>\n",
                x(r.cost),
                y(r.solve_rate),
                xml_escape(&r.label)
            ));
        }
        out.push_str("</svg>\n");
        out
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn usage(i: u64, c: u64, o: u64) -> TokenUsage {
        TokenUsage {
            input_tokens: i,
            cache_read_tokens: c,
            output_tokens: o,
        }
    }

    fn rates() -> PriceTable {
        PriceTable::uniform(Rates {
            p_input: 0.001,
            p_cache: 0.0005,
            p_output: 0.002,
        })
    }

    fn unit_attempt(id: &str, success: Option<u64>) -> AttemptLog {
        let events = (1..=10)
            .map(|t| AttemptEvent {
                timestamp: t,
                usage: usage(1, 0, 0),
                component: Component::Prover,
                duration_ms: 0,
            })
            .collect();
        AttemptLog::new(id, events, success).unwrap()
    }

    #[test]
    fn cost_examples() {
        let p = rates();
        assert_eq!(compute_cost(&usage(0, 0, 0), &p, Component::Prover), 0.0);
        assert!((compute_cost(&usage(1000, 0, 500), &p, Component::Prover) - 2.0).abs() < 1e-12);
        assert!((compute_cost(&usage(0, 2000, 0), &p, Component::Rater) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn prices_from_toml() {
        let p = PriceTable::from_toml_str(
            "[prover]\np_input = 1.0\np_cache = 0.5\np_output = 2.0\n[rater]\np_input = 0\np_cache = 0\np_output = 0\n",
        )
        .unwrap();
        assert_eq!(p.prover.p_output, 2.0);
        assert!(PriceTable::from_toml_str(
            "[prover]\np_input = -1.0\np_cache = 0\np_output = 0\n[rater]\np_input = 0\np_cache = 0\np_output = 0\n"
        )
        .is_err());
        assert!(PriceTable::from_toml_str("[prover]\np_input = 1\n").is_err());
    }

    #[test]
    fn hand_enumerated_chunk() {
        let attempts = vec![unit_attempt("a", Some(5)), unit_attempt("b", Some(9))];
        let est = chunk_estimate_by(&attempts, 2, |e| e.usage.input_tokens as f64).unwrap();
        assert_eq!(est.n_chunks, 1);
        assert_eq!(est.solve_rate, 1.0);
        assert_eq!(est.chunks[0].cost, 10.0);
        assert_eq!(est.mean_success_cost, Some(10.0));
    }

    #[test]
    fn all_failed() {
        let attempts: Vec<_> = (0..4).map(|i| unit_attempt(&i.to_string(), None)).collect();
        let est = chunk_estimate(&attempts, 2, &rates()).unwrap();
        assert_eq!(est.solve_rate, 0.0);
        assert_eq!(est.standard_error, 0.0);
        assert_eq!(est.mean_success_cost, None);
        assert!((est.mean_all_cost - 0.02).abs() < 1e-12);
    }

    #[test]
    fn chunking_errors() {
        let attempts: Vec<_> = (0..3).map(|i| unit_attempt(&i.to_string(), None)).collect();
        assert!(matches!(
            chunk_estimate(&attempts, 2, &rates()),
            Err(EvalError::IndivisibleChunking {
                attempts: 3,
                chunk_size: 2
            })
        ));
        assert!(matches!(
            chunk_estimate(&[], 1, &rates()),
            Err(EvalError::EmptyAttempts)
        ));
        assert!(matches!(
            chunk_estimate(&attempts, 0, &rates()),
            Err(EvalError::InvalidChunkSize)
        ));
    }

    #[test]
    fn standard_error_closed_form() {
        assert_eq!(binomial_standard_error(0.0, 10), 0.0);
        assert_eq!(binomial_standard_error(1.0, 10), 0.0);
        assert_eq!(binomial_standard_error(0.5, 25), 0.1);
    }

    #[test]
    fn attempt_validation() {
        let bad = vec![
            AttemptEvent {
                timestamp: 3,
                usage: usage(1, 0, 0),
                component: Component::Prover,
                duration_ms: 0,
            },
            AttemptEvent {
                timestamp: 1,
                usage: usage(1, 0, 0),
                component: Component::Prover,
                duration_ms: 0,
            },
        ];
        assert!(matches!(
            AttemptLog::new("x", bad, None),
            Err(EvalError::UnsortedEvents(_))
        ));
        let ok = vec![AttemptEvent {
            timestamp: 3,
            usage: usage(1, 0, 0),
            component: Component::Prover,
            duration_ms: 0,
        }];
        assert!(matches!(
            AttemptLog::new("x", ok, Some(1)),
            Err(EvalError::SuccessBeforeFirstEvent(_))
        ));
    }

    #[test]
    fn pareto_examples() {
        let pt = |l: &str, c: f64, s: f64| ParetoPoint {
            label: l.into(),
            solve_rate: s,
            cost: c,
        };
        let r = pareto_table(&[pt("a", 1.0, 0.5)]);
        assert!(!r.rows[0].dominated);
        let r = pareto_table(&[pt("b", 2.0, 0.5), pt("a", 1.0, 0.5)]);
        assert_eq!(r.rows[0].label, "a");
        assert!(!r.rows[0].dominated && r.rows[1].dominated);
        let r = pareto_table(&[pt("a", 1.0, 0.3), pt("b", 2.0, 0.6)]);
        assert!(r.rows.iter().all(|row| !row.dominated));
        let csv = r.to_csv().unwrap();
        assert!(csv.starts_with("label,solve_rate,cost,dominated\n"));
        assert!(r.to_svg().contains("<circle"));
        assert!(r.to_text().contains('*'));
    }
}
