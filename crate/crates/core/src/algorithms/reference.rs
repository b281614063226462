//! Plain discrete implementations, written independently of the program
//! executor, used as oracles for hard-mode runs.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Classic bubble sort; returns the sorted values and the number of swaps.
pub fn bubble_sort(values: &[f64]) -> (Vec<f64>, usize) {
    let mut a = values.to_vec();
    let mut swaps = 0;
    let mut n = a.len().saturating_sub(1);
    let mut swapped = true;
    while swapped {
        swapped = false;
        for i in 0..n {
            if a[i] > a[i + 1] {
                a.swap(i, i + 1);
                swaps += 1;
                swapped = true;
            }
        }
        n = n.saturating_sub(1);
    }
    (a, swaps)
}

/// Number of pairs `i < j` with `v[i] > v[j]`.
pub fn inversion_count(v: &[f64]) -> usize {
    let mut count = 0;
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            if v[i] > v[j] {
                count += 1;
            }
        }
    }
    count
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

/// Offsets of the 8-neighborhood, row-major from the top-left.
pub const NEIGHBORS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// Shortest paths on an `n x n` grid with node weights and 8-neighborhood
/// moves, from the top-left cell (whose own cost is not counted) to every
/// cell. Returns the distance table and the cells of the shortest path to
/// the bottom-right cell, as a row-major mask.
pub fn grid_shortest_path(cost: &[f64], n: usize) -> (Vec<f64>, Vec<bool>) {
    assert_eq!(cost.len(), n * n, "cost must be n x n");
    let mut dist = vec![f64::INFINITY; n * n];
    let mut prev = vec![usize::MAX; n * n];
    let mut heap = BinaryHeap::new();
    dist[0] = 0.0;
    heap.push(Entry(0.0, 0));
    while let Some(Entry(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        let (r, c) = ((u / n) as isize, (u % n) as isize);
        for (dr, dc) in NEIGHBORS {
            let (nr, nc) = (r + dr, c + dc);
            if nr < 0 || nc < 0 || nr >= n as isize || nc >= n as isize {
                continue;
            }
            let v = nr as usize * n + nc as usize;
            let nd = d + cost[v];
            if nd < dist[v] {
                dist[v] = nd;
                prev[v] = u;
                heap.push(Entry(nd, v));
            }
        }
    }
    let mut path = vec![false; n * n];
    let mut at = n * n - 1;
    path[at] = true;
    while at != 0 {
        at = prev[at];
        path[at] = true;
    }
    (dist, path)
}

/// Sum of node costs along a path mask, including both endpoints.
pub fn path_cost(cost: &[f64], path: &[bool]) -> f64 {
    cost.iter().zip(path).filter(|(_, p)| **p).map(|(c, _)| c).sum()
}

/// Whether `p` lies in the closed triangle, by barycentric coordinates.
pub fn point_in_triangle(p: [f64; 2], tri: [[f64; 2]; 3]) -> bool {
    let [a, b, c] = tri;
    let det = (b[1] - c[1]) * (a[0] - c[0]) + (c[0] - b[0]) * (a[1] - c[1]);
    if det == 0.0 {
        return false;
    }
    let l1 = ((b[1] - c[1]) * (p[0] - c[0]) + (c[0] - b[0]) * (p[1] - c[1])) / det;
    let l2 = ((c[1] - a[1]) * (p[0] - c[0]) + (a[0] - c[0]) * (p[1] - c[1])) / det;
    let l3 = 1.0 - l1 - l2;
    l1 >= 0.0 && l2 >= 0.0 && l3 >= 0.0
}

/// Binary coverage image, row `r` / column `c` sampling the point
/// `((c + 0.5) / res, (r + 0.5) / res)`.
pub fn coverage(triangles: &[[[f64; 2]; 3]], res: usize) -> Vec<bool> {
    let mut img = vec![false; res * res];
    for r in 0..res {
        for c in 0..res {
            let p = [(c as f64 + 0.5) / res as f64, (r as f64 + 0.5) / res as f64];
            img[r * res + c] = triangles.iter().any(|t| point_in_triangle(p, *t));
        }
    }
    img
}

/// Textbook edit distance with unit costs.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut cur = vec![i + 1; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorting_twin() {
        let (s, k) = bubble_sort(&[3.0, 2.0, 1.0]);
        assert_eq!(s, vec![1.0, 2.0, 3.0]);
        assert_eq!(k, 3);
        assert_eq!(inversion_count(&[4.0, 3.0, 2.0, 1.0]), 6);
        assert_eq!(bubble_sort(&[]).1, 0);
    }

    #[test]
    fn grid_twin() {
        let (d, p) = grid_shortest_path(&[1.0; 4], 2);
        assert_eq!(d, vec![0.0, 1.0, 1.0, 1.0]);
        assert_eq!(p, vec![true, false, false, true]);
        assert_eq!(path_cost(&[1.0; 4], &p), 2.0);
    }

    #[test]
    fn triangle_twin() {
        let t = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(point_in_triangle([0.2, 0.2], t));
        assert!(!point_in_triangle([0.6, 0.6], t));
        let cw = [t[0], t[2], t[1]];
        assert!(point_in_triangle([0.2, 0.2], cw));
    }

    #[test]
    fn edit_distance_twin() {
        assert_eq!(levenshtein(b"kitten", b"sitting"), 3);
        assert_eq!(levenshtein(b"", b"abc"), 3);
        assert_eq!(levenshtein(b"flaw", b"lawn"), 2);
    }
}
