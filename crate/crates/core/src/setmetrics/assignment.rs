/// Minimum-cost assignment of `n` rows to distinct columns of a row-major
/// `n x m` cost matrix with `n <= m` (Kuhn-Munkres with potentials).
///
/// Returns the column chosen for each row and the total cost.
pub fn hungarian(cost: &[f64], n: usize, m: usize) -> (Vec<usize>, f64) {
    assert!(n <= m, "hungarian needs rows <= columns");
    assert_eq!(cost.len(), n * m);
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let c = |i: usize, j: usize| cost[(i - 1) * m + (j - 1)];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = c(i0, j) - u[i0] - v[j];
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
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            col[owner[j] - 1] = j - 1;
        }
    }
    let total = (0..n).map(|i| cost[i * m + col[i]]).sum();
    (col, total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_instances() {
        let (a, t) = hungarian(&[4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0], 3, 3);
        assert_eq!(t, 5.0);
        let mut seen = a.clone();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2]);
        let (a, t) = hungarian(&[7.0, 1.0, 9.0], 1, 3);
        assert_eq!((a, t), (vec![1], 1.0));
        assert_eq!(hungarian(&[], 0, 4), (vec![], 0.0));
    }
}
