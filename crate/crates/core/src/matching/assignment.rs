//! Minimum-cost 1:1 assignment on a sparse bipartite graph.
//!
//! Successive shortest augmenting paths from a virtual source attached to
//! every unmatched row, with Johnson potentials so Dijkstra runs on
//! nonnegative reduced costs. Each augmentation yields a minimum-cost
//! matching of its cardinality; the loop stops when no augmenting path
//! remains, so the result is the cheapest among maximum-cardinality
//! matchings. Forbidden (infinite) entries are simply absent edges.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::distance::DistanceMatrix;

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    /// Columns sort after rows at equal distance, lower indices first.
    is_col: bool,
    index: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap: reverse for smallest-first.
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.is_col.cmp(&self.is_col))
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Row-to-column assignment of minimum total cost among all assignments
/// of maximum cardinality. Only finite entries are usable.
pub fn min_cost_assignment(dist: &DistanceMatrix) -> Vec<Option<usize>> {
    let n_rows = dist.n_treated();
    let n_cols = dist.n_control();
    let edges: Vec<Vec<(usize, f64)>> = (0..n_rows)
        .map(|r| {
            dist.row(r)
                .iter()
                .enumerate()
                .filter(|(_, w)| w.is_finite())
                .map(|(c, &w)| (c, w))
                .collect()
        })
        .collect();

    let mut match_row: Vec<Option<usize>> = vec![None; n_rows];
    let mut match_col: Vec<Option<usize>> = vec![None; n_cols];
    let mut matched_cost = vec![0.0f64; n_rows];
    let mut pot_row = vec![0.0f64; n_rows];
    let mut pot_col = vec![0.0f64; n_cols];

    let mut dist_row = vec![f64::INFINITY; n_rows];
    let mut dist_col = vec![f64::INFINITY; n_cols];
    let mut done_row = vec![false; n_rows];
    let mut done_col = vec![false; n_cols];
    let mut prev_col = vec![usize::MAX; n_cols];
    let mut heap = BinaryHeap::new();

    loop {
        dist_row.iter_mut().for_each(|d| *d = f64::INFINITY);
        dist_col.iter_mut().for_each(|d| *d = f64::INFINITY);
        done_row.iter_mut().for_each(|d| *d = false);
        done_col.iter_mut().for_each(|d| *d = false);
        heap.clear();
        for r in 0..n_rows {
            if match_row[r].is_none() && !edges[r].is_empty() {
                dist_row[r] = 0.0;
                heap.push(Entry {
                    dist: 0.0,
                    is_col: false,
                    index: r,
                });
            }
        }

        let mut sink = None;
        while let Some(Entry { dist: d, is_col, index }) = heap.pop() {
            if is_col {
                if done_col[index] || d > dist_col[index] {
                    continue;
                }
                done_col[index] = true;
                match match_col[index] {
                    None => {
                        sink = Some((index, d));
                        break;
                    }
                    Some(r) => {
                        let reduced = (pot_col[index] - pot_row[r] - matched_cost[r]).max(0.0);
                        let nd = d + reduced;
                        if nd < dist_row[r] {
                            dist_row[r] = nd;
                            heap.push(Entry {
                                dist: nd,
                                is_col: false,
                                index: r,
                            });
                        }
                    }
                }
            } else {
                if done_row[index] || d > dist_row[index] {
                    continue;
                }
                done_row[index] = true;
                for &(c, w) in &edges[index] {
                    if match_row[index] == Some(c) || done_col[c] {
                        continue;
                    }
                    let reduced = (w + pot_row[index] - pot_col[c]).max(0.0);
                    let nd = d + reduced;
                    if nd < dist_col[c] {
                        dist_col[c] = nd;
                        prev_col[c] = index;
                        heap.push(Entry {
                            dist: nd,
                            is_col: true,
                            index: c,
                        });
                    }
                }
            }
        }

        let Some((sink_col, reach)) = sink else {
            break;
        };

        for r in 0..n_rows {
            pot_row[r] += if done_row[r] { dist_row[r].min(reach) } else { reach };
        }
        for c in 0..n_cols {
            pot_col[c] += if done_col[c] { dist_col[c].min(reach) } else { reach };
        }

        let mut col = sink_col;
        loop {
            let row = prev_col[col];
            let previous = match_row[row];
            match_row[row] = Some(col);
            match_col[col] = Some(row);
            matched_cost[row] = dist.get(row, col);
            match previous {
                None => break,
                Some(c) => col = c,
            }
        }
    }

    match_row
}

/// Each row in order takes its cheapest still-free finite column.
pub fn greedy_assignment(dist: &DistanceMatrix) -> Vec<Option<usize>> {
    let mut taken = vec![false; dist.n_control()];
    (0..dist.n_treated())
        .map(|r| {
            let best = dist
                .row(r)
                .iter()
                .enumerate()
                .filter(|(c, w)| !taken[*c] && w.is_finite())
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(c, _)| c);
            if let Some(c) = best {
                taken[c] = true;
            }
            best
        })
        .collect()
}

pub fn assignment_cost(dist: &DistanceMatrix, assignment: &[Option<usize>]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| dist.get(r, c)))
        .sum()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    const INF: f64 = f64::INFINITY;

    /// Best (cardinality, -cost) over every partial injection, by recursion.
    pub fn exhaustive(dist: &DistanceMatrix) -> (usize, f64) {
        fn go(dist: &DistanceMatrix, r: usize, used: &mut Vec<bool>, card: usize, cost: f64, best: &mut (usize, f64)) {
            if r == dist.n_treated() {
                if card > best.0 || (card == best.0 && cost < best.1) {
                    *best = (card, cost);
                }
                return;
            }
            go(dist, r + 1, used, card, cost, best);
            for c in 0..dist.n_control() {
                let w = dist.get(r, c);
                if !used[c] && w.is_finite() {
                    used[c] = true;
                    go(dist, r + 1, used, card + 1, cost + w, best);
                    used[c] = false;
                }
            }
        }
        let mut best = (0, 0.0);
        go(dist, 0, &mut vec![false; dist.n_control()], 0, 0.0, &mut best);
        best
    }

    #[test]
    fn diagonal_optimum() {
        let d = DistanceMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        let a = min_cost_assignment(&d);
        assert_eq!(a, vec![Some(0), Some(1)]);
        assert_eq!(assignment_cost(&d, &a), 2.0);
    }

    #[test]
    fn beats_row_greedy() {
        let d = DistanceMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 10.0]]);
        let a = min_cost_assignment(&d);
        assert_eq!(a, vec![Some(1), Some(0)]);
        assert_eq!(assignment_cost(&d, &a), 2.0);
        assert_eq!(assignment_cost(&d, &greedy_assignment(&d)), 10.0);
    }

    #[test]
    fn infeasible_row_is_unmatched() {
        let d = DistanceMatrix::from_rows(&[vec![1.0, 2.0], vec![INF, INF]]);
        assert_eq!(min_cost_assignment(&d), vec![Some(0), None]);
    }

    #[test]
    fn cheaper_row_wins_contested_column() {
        let d = DistanceMatrix::from_rows(&[vec![5.0], vec![1.0]]);
        assert_eq!(min_cost_assignment(&d), vec![None, Some(0)]);
    }

    #[test]
    fn cardinality_before_cost() {
        // Matching row 0 to column 0 alone is cheapest, but two pairs are possible.
        let d = DistanceMatrix::from_rows(&[vec![0.0, 9.0], vec![1.0, INF]]);
        let a = min_cost_assignment(&d);
        assert_eq!(a, vec![Some(1), Some(0)]);
    }

    #[test]
    fn empty_inputs() {
        let d = DistanceMatrix::from_rows(&[]);
        assert!(min_cost_assignment(&d).is_empty());
        let d = DistanceMatrix::from_rows(&[vec![], vec![]]);
        assert_eq!(min_cost_assignment(&d), vec![None, None]);
    }

    fn arb_matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..7, 1usize..7).prop_flat_map(|(r, c)| {
            prop::collection::vec(
                prop::collection::vec(prop_oneof![4 => 0.0f64..10.0, 1 => Just(INF)], c),
                r,
            )
        })
    }

    proptest! {
        #[test]
        fn matches_exhaustive_search(rows in arb_matrix()) {
            let d = DistanceMatrix::from_rows(&rows);
            let a = min_cost_assignment(&d);
            let (card, cost) = exhaustive(&d);
            prop_assert_eq!(a.iter().flatten().count(), card);
            prop_assert!((assignment_cost(&d, &a) - cost).abs() < 1e-9);
            let mut cols: Vec<usize> = a.iter().flatten().copied().collect();
            cols.sort_unstable();
            cols.dedup();
            prop_assert_eq!(cols.len(), card);
        }

        #[test]
        fn never_worse_than_greedy(rows in arb_matrix()) {
            let d = DistanceMatrix::from_rows(&rows);
            let opt = min_cost_assignment(&d);
            let greedy = greedy_assignment(&d);
            // only comparable when greedy reaches the same cardinality
            if greedy.iter().flatten().count() == opt.iter().flatten().count() {
                prop_assert!(assignment_cost(&d, &opt) <= assignment_cost(&d, &greedy) + 1e-9);
            }
        }
    }
}
