//! Brute-force reference implementations used to check the library. Written
//! independently of the library code: plain loops over raw tuples, no shared
//! helpers.

#![allow(dead_code)]

use rand::Rng;

use hreflex_core::record_store::StateLabel;

/// Random strictly increasing steps with positive losses in (0, 10].
/// Every entry has a validation loss.
pub fn random_log_rows<R: Rng>(rng: &mut R, max_len: usize) -> Vec<(u64, f64, f64)> {
    let n = rng.random_range(2..=max_len);
    let mut step = rng.random_range(0..5u64);
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let train = 10.0 - rng.random_range(0.0..10.0);
        let val = 10.0 - rng.random_range(0.0..10.0);
        rows.push((step, train, val));
        step += rng.random_range(1..=4u64);
    }
    rows
}

pub fn jsonl(rows: &[(u64, f64, f64)]) -> String {
    rows.iter()
        .map(|(s, t, v)| format!("{{\"step\":{s},\"train_loss\":{t:?},\"val_loss\":{v:?}}}\n"))
        .collect()
}

pub fn gap(rows: &[(u64, f64, f64)]) -> Vec<(u64, f64)> {
    let mut out = Vec::new();
    for &(s, t, v) in rows {
        out.push((s, v - t));
    }
    out
}

pub fn ratio(rows: &[(u64, f64, f64)]) -> Vec<(u64, f64)> {
    let mut out = Vec::new();
    for &(s, t, v) in rows {
        out.push((s, v / t));
    }
    out
}

/// Forward difference by explicit pairwise loop.
pub fn derivative(series: &[(u64, f64)]) -> Vec<(u64, f64)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i + 1 < series.len() {
        let (s0, y0) = series[i];
        let (s1, y1) = series[i + 1];
        out.push((s0, (y1 - y0) / (s1 as f64 - s0 as f64)));
        i += 1;
    }
    out
}

/// Trapezoid area as the mean of the left and right Riemann sums.
pub fn abc(rows: &[(u64, f64, f64)]) -> f64 {
    let g = gap(rows);
    let mut left = 0.0;
    let mut right = 0.0;
    for i in 1..g.len() {
        let width = (g[i].0 - g[i - 1].0) as f64;
        left += g[i - 1].1 * width;
        right += g[i].1 * width;
    }
    (left + right) / 2.0
}

/// Rolling-median spike detection by full sort of each preceding window.
pub fn spikes(g: &[(u64, f64)], window: usize, threshold: f64) -> Vec<u64> {
    let mut out = Vec::new();
    if window == 0 {
        return out;
    }
    for i in window..g.len() {
        let mut prev: Vec<f64> = g[i - window..i].iter().map(|p| p.1).collect();
        prev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = if window % 2 == 1 { prev[window / 2] } else { (prev[window / 2 - 1] + prev[window / 2]) / 2.0 };
        if g[i].1 - m > threshold {
            out.push(g[i].0);
        }
    }
    out
}

pub fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    let scale = a.abs().max(b.abs());
    (a - b).abs() <= rel * scale || (a - b).abs() <= 1e-12
}

/// Counting oracle for agreement: equal pairs over all unordered pairs.
pub fn agreement(states: &[StateLabel]) -> f64 {
    let n = states.len();
    if n == 1 {
        return 1.0;
    }
    let mut equal = 0usize;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            pairs += 1;
            if states[i] == states[j] {
                equal += 1;
            }
        }
    }
    equal as f64 / pairs as f64
}

/// Counting oracle for plurality: Some(label) for a strict winner, None on tie.
pub fn plurality(states: &[StateLabel]) -> Option<StateLabel> {
    let labels = [StateLabel::Fatigue, StateLabel::Injury, StateLabel::Recovery, StateLabel::Normal];
    let counts: Vec<usize> = labels.iter().map(|l| states.iter().filter(|s| *s == l).count()).collect();
    let best = *counts.iter().max().unwrap();
    let winners: Vec<usize> = (0..4).filter(|&i| counts[i] == best).collect();
    if winners.len() == 1 {
        Some(labels[winners[0]])
    } else {
        None
    }
}

/// Every list of length 1..=5 over the four labels: 4 + 16 + 64 + 256 + 1024.
pub fn all_state_lists(max_len: usize) -> Vec<Vec<StateLabel>> {
    let labels = [StateLabel::Fatigue, StateLabel::Injury, StateLabel::Recovery, StateLabel::Normal];
    let mut out = Vec::new();
    for len in 1..=max_len {
        for code in 0..4usize.pow(len as u32) {
            let mut c = code;
            let mut list = Vec::with_capacity(len);
            for _ in 0..len {
                list.push(labels[c % 4]);
                c /= 4;
            }
            out.push(list);
        }
    }
    out
}
