//! Instance generators shared by the integration tests. Every generator
//! keeps comparisons at least `TIE_GAP` away from ties.

#![allow(dead_code)]

use itertools::Itertools;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use algorelax::algorithms::reference;

pub const TIE_GAP: f64 = 1e-2;

pub fn separated(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        if v.iter().tuple_combinations().all(|(a, b)| (a - b).abs() >= TIE_GAP) {
            return v;
        }
    }
}

/// Every cell's best predecessor beats the runner-up by at least the gap.
pub fn unambiguous(cost: &[f64], n: usize) -> bool {
    let (dist, _) = reference::grid_shortest_path(cost, n);
    (1..n * n).all(|v| {
        let (r, c) = ((v / n) as isize, (v % n) as isize);
        let mut cand: Vec<f64> = reference::NEIGHBORS
            .iter()
            .map(|(dr, dc)| (r + dr, c + dc))
            .filter(|(a, b)| *a >= 0 && *b >= 0 && *a < n as isize && *b < n as isize)
            .map(|(a, b)| dist[a as usize * n + b as usize])
            .collect();
        cand.sort_by(f64::total_cmp);
        cand.len() < 2 || cand[1] - cand[0] >= TIE_GAP
    })
}

pub fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    ((p[0] - a[0] - t * dx).powi(2) + (p[1] - a[1] - t * dy).powi(2)).sqrt()
}

pub fn random_mesh(rng: &mut ChaCha8Rng, count: usize) -> Vec<[[f64; 2]; 3]> {
    (0..count)
        .map(|_| loop {
            let t: [[f64; 2]; 3] = [0; 3].map(|_| [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)]);
            let area = (t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[1][1] - t[0][1]) * (t[2][0] - t[0][0]);
            if area.abs() > 0.02 {
                return t;
            }
        })
        .collect()
}

/// No pixel center lies within the gap of any triangle edge.
pub fn clear_of_edges(mesh: &[[[f64; 2]; 3]], res: usize) -> bool {
    (0..res * res).all(|k| {
        let p = [((k % res) as f64 + 0.5) / res as f64, ((k / res) as f64 + 0.5) / res as f64];
        mesh.iter()
            .all(|t| (0..3).all(|e| segment_distance(p, t[e], t[(e + 1) % 3]) >= TIE_GAP))
    })
}

