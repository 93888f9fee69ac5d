//! Independent oracles shared by the property tests and the acceptance suite.
#![allow(dead_code)]

use std::collections::VecDeque;

use censusflow::domain::{PersonRecord, RegisterDocument};

/// Every string over `alphabet` of length at most `max_len`, shortest first.
pub fn all_strings(alphabet: &[u8], max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut layer = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &layer {
            for &c in alphabet {
                let mut t = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        layer = next;
    }
    out
}

/// Edit distances by breadth-first search over single-character
/// insertions, deletions and substitutions. Strings are restricted to
/// `max_len` characters; an optimal edit sequence never needs a longer
/// intermediate (delete and substitute first, insert last).
pub struct EditGraph {
    pub strings: Vec<Vec<u8>>,
    offsets: Vec<u32>,
    targets: Vec<u32>,
}

impl EditGraph {
    pub fn new(alphabet: &[u8], max_len: usize) -> Self {
        let strings = all_strings(alphabet, max_len);
        let index: std::collections::HashMap<&[u8], u32> = strings
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_slice(), i as u32))
            .collect();
        let mut offsets = vec![0u32];
        let mut targets = Vec::new();
        for s in &strings {
            let mut push = |t: Vec<u8>| targets.push(index[t.as_slice()]);
            for i in 0..s.len() {
                let mut t = s.clone();
                t.remove(i);
                push(t);
                for &c in alphabet {
                    if c != s[i] {
                        let mut t = s.clone();
                        t[i] = c;
                        push(t);
                    }
                }
            }
            if s.len() < max_len {
                for i in 0..=s.len() {
                    for &c in alphabet {
                        let mut t = s.clone();
                        t.insert(i, c);
                        push(t);
                    }
                }
            }
            offsets.push(targets.len() as u32);
        }
        Self {
            strings,
            offsets,
            targets,
        }
    }

    /// Distances from string `source` to every string, in `strings` order.
    pub fn distances_from(&self, source: usize) -> Vec<u8> {
        let mut dist = vec![u8::MAX; self.strings.len()];
        let mut queue = VecDeque::new();
        dist[source] = 0;
        queue.push_back(source as u32);
        while let Some(u) = queue.pop_front() {
            let d = dist[u as usize] + 1;
            let (lo, hi) = (
                self.offsets[u as usize] as usize,
                self.offsets[u as usize + 1] as usize,
            );
            for &v in &self.targets[lo..hi] {
                if dist[v as usize] == u8::MAX {
                    dist[v as usize] = d;
                    queue.push_back(v);
                }
            }
        }
        dist
    }
}

/// Households by concatenating every record of the register and starting a
/// new group before each head.
pub fn split_before_heads(doc: &RegisterDocument) -> Vec<Vec<PersonRecord>> {
    let mut out: Vec<Vec<PersonRecord>> = Vec::new();
    for page in &doc.pages {
        for r in page.transcript.iter().flat_map(|t| &t.records) {
            match out.last_mut() {
                Some(h) if !r.is_head => h.push(r.clone()),
                _ => out.push(vec![r.clone()]),
            }
        }
    }
    out
}

/// Departure time of the last image from a tandem line of deterministic
/// multi-server stations with unbounded buffers, all images present at 0.
/// Image k leaves station i at max(leaves i-1, server free) + t, where the
/// server is the one that served image k - c.
pub fn tandem_makespan(n: usize, stages: &[(f64, usize)]) -> f64 {
    let mut prev = vec![0.0f64; n];
    for &(t, c) in stages {
        let mut cur = vec![0.0f64; n];
        for k in 0..n {
            let free = if k >= c { cur[k - c] } else { 0.0 };
            cur[k] = prev[k].max(free) + t;
        }
        prev = cur;
    }
    prev.last().copied().unwrap_or(0.0)
}

/// Each stage handles the whole batch before the next one starts.
pub fn sequential_makespan(n: usize, stages: &[(f64, usize)]) -> f64 {
    stages.iter().map(|&(t, c)| n.div_ceil(c) as f64 * t).sum()
}
