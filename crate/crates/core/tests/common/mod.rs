//! Oracles shared by the integration tests. Nothing here calls into the
//! crate's own queueing formulas.

#![allow(dead_code)]

/// Stationary distribution of the M/M/c chain truncated at `n_max`
/// customers, from a dense solve of `pi * Q = 0`, `sum(pi) = 1`.
pub fn ctmc_stationary(lambda: f64, mu: f64, c: usize, n_max: usize) -> Vec<f64> {
    let n = n_max + 1;
    // Rows of Q^T; the last balance equation is replaced by normalization.
    let mut m = vec![vec![0.0; n + 1]; n];
    for state in 0..n {
        let birth = if state < n_max { lambda } else { 0.0 };
        let death = mu * state.min(c) as f64;
        // Column `state` of Q.
        m[state][state] -= birth + death;
        if state < n_max {
            m[state + 1][state] += birth;
        }
        if state > 0 {
            m[state - 1][state] += death;
        }
    }
    m[n - 1].fill(1.0);
    gauss_solve(m)
}

fn gauss_solve(mut m: Vec<Vec<f64>>) -> Vec<f64> {
    let n = m.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        let pivot_row = m[col].clone();
        let p = pivot_row[col];
        assert!(p.abs() > 1e-300, "singular system");
        for (row, r) in m.iter_mut().enumerate() {
            let f = r[col] / p;
            if row != col && f != 0.0 {
                for (x, y) in r[col..].iter_mut().zip(&pivot_row[col..]) {
                    *x -= f * y;
                }
            }
        }
    }
    (0..n).map(|i| m[i][n] / m[i][i]).collect()
}

/// Mean queue wait by Little's law on the truncated chain.
pub fn ctmc_mean_wait(lambda: f64, mu: f64, c: usize, n_max: usize) -> f64 {
    let pi = ctmc_stationary(lambda, mu, c, n_max);
    let lq: f64 = pi
        .iter()
        .enumerate()
        .map(|(n, p)| n.saturating_sub(c) as f64 * p)
        .sum();
    lq / lambda
}

/// Prints one acceptance line and returns whether it passed.
pub fn verdict(id: &str, title: &str, pass: bool, detail: impl std::fmt::Display) -> bool {
    println!(
        "[{}] {id} {title}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}
