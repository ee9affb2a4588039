//! Synthetic attempt logs for the evaluator golden file. The same formula
//! lives in `tests/golden/gen_chunks.py`, which produced the golden CSV.

/// `(timestamp, input, cache, output, component)`.
pub type SyntheticEvent = (u64, u64, u64, u64, &'static str);

pub const SYNTHETIC_ATTEMPTS: u64 = 100;

pub fn synthetic_attempt(i: u64) -> (Vec<SyntheticEvent>, Option<u64>) {
    let n = 2 + (i * 7) % 9;
    let events: Vec<SyntheticEvent> = (0..n)
        .map(|j| {
            let t = 10 * (j + 1) + i % 3;
            let input = 100 + 13 * ((i + j) % 7);
            let cache = 40 * ((i * j) % 5);
            let output = 7 + 3 * ((i + 2 * j) % 4);
            let component = if j % 3 == 2 { "rater" } else { "prover" };
            (t, input, cache, output, component)
        })
        .collect();
    let success = (i % 23 == 1 || i % 29 == 5).then(|| events[(i % n) as usize].0);
    (events, success)
}

pub const SYNTHETIC_PRICES: &str = "\
[prover]
p_input = 2.0
p_cache = 0.5
p_output = 8.0

[rater]
p_input = 1.0
p_cache = 0.25
p_output = 4.0
";

pub const GOLDEN_CHUNKS_K10: &str = include_str!("../golden/chunks_k10.csv");
