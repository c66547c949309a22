/// Maximum-weight one-to-one assignment of rows to columns (Hungarian
/// method on a padded square cost matrix). Returns, for each row, the
/// assigned column; rows beyond the column count stay unassigned.
pub fn max_weight_assignment(weights: &[Vec<i64>]) -> Vec<Option<usize>> {
    let rows = weights.len();
    let cols = weights.iter().map(Vec::len).max().unwrap_or(0);
    let n = rows.max(cols);
    if n == 0 {
        return Vec::new();
    }
    let max_w = weights.iter().flatten().copied().max().unwrap_or(0).max(0);
    let cost = |i: usize, j: usize| -> i64 {
        let w = weights.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0);
        max_w - w
    };

    // potentials and matching, 1-indexed with a virtual column 0
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
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

    let mut out = vec![None; rows];
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i <= rows && j <= cols {
            out[i - 1] = Some(j - 1);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn total(w: &[Vec<i64>], a: &[Option<usize>]) -> i64 {
        a.iter()
            .enumerate()
            .filter_map(|(i, j)| j.map(|j| w[i][j]))
            .sum()
    }

    fn brute(w: &[Vec<i64>], row: usize, used: &mut Vec<bool>) -> i64 {
        if row == w.len() {
            return 0;
        }
        let mut best = brute(w, row + 1, used);
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                best = best.max(w[row][j] + brute(w, row + 1, used));
                used[j] = false;
            }
        }
        best
    }

    #[test]
    fn picks_the_better_pairing() {
        let w = vec![vec![8, 2], vec![9, 1]];
        let a = max_weight_assignment(&w);
        assert_eq!(total(&w, &a), 11);
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            rows in 1usize..5, cols in 1usize..5,
            vals in proptest::collection::vec(0i64..50, 25),
        ) {
            let w: Vec<Vec<i64>> = (0..rows).map(|i| (0..cols).map(|j| vals[i * 5 + j]).collect()).collect();
            let a = max_weight_assignment(&w);
            let mut cols_used: Vec<usize> = a.iter().flatten().copied().collect();
            let assigned = cols_used.len();
            cols_used.sort_unstable();
            cols_used.dedup();
            prop_assert_eq!(cols_used.len(), assigned);
            prop_assert_eq!(total(&w, &a), brute(&w, 0, &mut vec![false; cols]));
        }
    }
}
