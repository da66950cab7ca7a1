//! Progressive edge-growth construction of column-regular LDPC matrices.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::alist::ParityCheckMatrix;
use crate::{Error, Result};

/// PEG construction with `n` variables, `m` checks and column weight
/// `col_weight`. Checks already at the target degree `⌈n·w/m⌉` are never
/// candidates, which keeps the row degrees within one of each other; among
/// the farthest remaining checks the lowest-degree ones are preferred and
/// ties are broken by `seed`.
pub fn peg_construct(n: usize, m: usize, col_weight: usize, seed: u64) -> Result<ParityCheckMatrix> {
    if col_weight == 0 || col_weight > m || n == 0 {
        return Err(Error::Config(format!("cannot build {m}x{n} matrix with column weight {col_weight}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut depth_c = vec![usize::MAX; m];
    let mut seen_v = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    let cap = (n * col_weight).div_ceil(m);
    for j in 0..n {
        for e in 0..col_weight {
            let open = |c: usize| rows[c].len() < cap && !cols[j].contains(&c);
            let candidates: Vec<usize> = if e == 0 {
                (0..m).filter(|&c| open(c)).collect()
            } else {
                // Breadth-first over the current graph from variable j;
                // keep the checks not reached, or those at the last level.
                depth_c.iter_mut().for_each(|d| *d = usize::MAX);
                queue.clear();
                queue.push_back((j, 0usize));
                let stamp = j * col_weight + e;
                seen_v[j] = stamp;
                while let Some((v, d)) = queue.pop_front() {
                    for &c in &cols[v] {
                        if depth_c[c] != usize::MAX {
                            continue;
                        }
                        depth_c[c] = d;
                        for &u in &rows[c] {
                            if seen_v[u] != stamp {
                                seen_v[u] = stamp;
                                queue.push_back((u, d + 1));
                            }
                        }
                    }
                }
                let unreached: Vec<usize> = (0..m).filter(|&c| depth_c[c] == usize::MAX && open(c)).collect();
                if !unreached.is_empty() {
                    unreached
                } else {
                    // Farthest open level, falling back to any open check.
                    let far = (0..m).filter(|&c| open(c)).map(|c| depth_c[c]).max();
                    match far {
                        Some(d) => (0..m).filter(|&c| open(c) && depth_c[c] == d).collect(),
                        None => Vec::new(),
                    }
                }
            };
            if candidates.is_empty() {
                return Err(Error::Config(format!("PEG ran out of checks at variable {j}")));
            }
            let min_deg = candidates.iter().map(|&c| rows[c].len()).min().expect("nonempty candidates");
            let best: Vec<usize> = candidates.into_iter().filter(|&c| rows[c].len() == min_deg).collect();
            let c = best[rng.random_range(0..best.len())];
            rows[c].push(j);
            cols[j].push(c);
        }
    }
    ParityCheckMatrix::from_rows(n, rows)
}

/// Length of the shortest cycle through any variable node, by BFS from
/// each variable. `None` if the graph is a forest.
pub fn girth(h: &ParityCheckMatrix) -> Option<usize> {
    let (n, m) = (h.n, h.m);
    let mut best: Option<usize> = None;
    // Node ids: variables 0..n, checks n..n+m.
    let mut dist = vec![usize::MAX; n + m];
    let mut parent = vec![usize::MAX; n + m];
    let mut queue = VecDeque::new();
    for s in 0..n {
        dist.iter_mut().for_each(|d| *d = usize::MAX);
        dist[s] = 0;
        parent[s] = usize::MAX;
        queue.clear();
        queue.push_back(s);
        while let Some(x) = queue.pop_front() {
            if let Some(b) = best {
                if 2 * dist[x] + 1 >= b {
                    break;
                }
            }
            let nbrs: &[usize] = if x < n { &h.cols[x] } else { &h.rows[x - n] };
            for &y0 in nbrs {
                let y = if x < n { y0 + n } else { y0 };
                if y == parent[x] {
                    continue;
                }
                if dist[y] == usize::MAX {
                    dist[y] = dist[x] + 1;
                    parent[y] = x;
                    queue.push_back(y);
                } else {
                    let len = dist[x] + dist[y] + 1;
                    best = Some(best.map_or(len, |b| b.min(len)));
                }
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_regular_construction() {
        let h = peg_construct(96, 48, 3, 7).unwrap();
        assert!(h.cols.iter().all(|c| c.len() == 3));
        assert!(h.rows.iter().all(|r| r.len() == 6));
        assert!(girth(&h).unwrap() >= 6);
        assert_eq!(h, peg_construct(96, 48, 3, 7).unwrap());
    }

    #[test]
    fn girth_of_known_graphs() {
        // Two columns sharing two checks form a 4-cycle.
        let h = ParityCheckMatrix::from_rows(3, vec![vec![0, 1], vec![0, 1, 2]]).unwrap();
        assert_eq!(girth(&h), Some(4));
        let tree = ParityCheckMatrix::from_rows(3, vec![vec![0, 1], vec![1, 2]]).unwrap();
        assert_eq!(girth(&tree), None);
    }
}
