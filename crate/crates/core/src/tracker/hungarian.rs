//! Minimum-cost bipartite assignment via shortest augmenting paths with
//! potentials, O(n^3).

/// Solve the assignment problem for a rectangular cost matrix. Returns the
/// chosen column per row (`None` for unassigned rows when there are more
/// rows than columns) and the total cost of the assignment.
///
/// Costs must be finite; use a large sentinel for forbidden pairs and
/// filter the result afterwards.
pub fn solve(cost: &[Vec<f64>]) -> (Vec<Option<usize>>, f64) {
    let rows = cost.len();
    let cols = cost.first().map_or(0, |r| r.len());
    if rows == 0 || cols == 0 {
        return (vec![None; rows], 0.0);
    }
    debug_assert!(cost.iter().all(|r| r.len() == cols));

    if rows > cols {
        // Transpose, solve, invert the mapping.
        let transposed: Vec<Vec<f64>> = (0..cols)
            .map(|j| (0..rows).map(|i| cost[i][j]).collect())
            .collect();
        let (col_to_row, total) = solve(&transposed);
        let mut assignment = vec![None; rows];
        for (j, row) in col_to_row.iter().enumerate() {
            if let Some(i) = row {
                assignment[*i] = Some(j);
            }
        }
        return (assignment, total);
    }

    // 1-indexed potentials; p[j] is the row matched to column j.
    let n = rows;
    let m = cols;
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![None; n];
    let mut total = 0.0;
    for j in 1..=m {
        if p[j] != 0 {
            assignment[p[j] - 1] = Some(j - 1);
            total += cost[p[j] - 1][j - 1];
        }
    }
    (assignment, total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force_min(cost: &[Vec<f64>]) -> f64 {
        // All permutations of column choices for square matrices.
        let n = cost.len();
        let mut cols: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        permute(&mut cols, 0, &mut |perm| {
            let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
            if total < best {
                best = total;
            }
        });
        best
    }

    fn permute(items: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
        if k == items.len() {
            visit(items);
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            permute(items, k + 1, visit);
            items.swap(k, i);
        }
    }

    #[test]
    fn known_3x3() {
        let cost = vec![
            vec![4.0, 1.0, 3.0],
            vec![2.0, 0.0, 5.0],
            vec![3.0, 2.0, 2.0],
        ];
        let (assignment, total) = solve(&cost);
        assert_eq!(total, 5.0);
        assert_eq!(assignment, vec![Some(1), Some(0), Some(2)]);
    }

    #[test]
    fn matches_brute_force_on_random_matrices() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for n in 2..=5usize {
            for _ in 0..50 {
                let cost: Vec<Vec<f64>> = (0..n)
                    .map(|_| (0..n).map(|_| rng.gen_range(0.0..100.0)).collect())
                    .collect();
                let (_, total) = solve(&cost);
                let expected = brute_force_min(&cost);
                assert!(
                    (total - expected).abs() < 1e-9,
                    "n={n}: {total} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn rectangular_matrices_assign_the_short_side() {
        let wide = vec![vec![5.0, 1.0, 9.0], vec![4.0, 7.0, 2.0]];
        let (assignment, total) = solve(&wide);
        assert_eq!(assignment, vec![Some(1), Some(2)]);
        assert_eq!(total, 3.0);

        let tall = vec![vec![5.0, 4.0], vec![1.0, 7.0], vec![9.0, 2.0]];
        let (assignment, total) = solve(&tall);
        assert_eq!(total, 3.0);
        assert_eq!(assignment, vec![None, Some(0), Some(1)]);
    }

    #[test]
    fn empty_inputs() {
        let (a, t) = solve(&[]);
        assert!(a.is_empty());
        assert_eq!(t, 0.0);
    }
}
