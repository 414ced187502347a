//! Small dense least-squares solver for the per-horizon regressions.
#![allow(clippy::needless_range_loop)]

/// Cholesky factorization `a = l lᵀ` in place (lower triangle). Fails when a
/// pivot is not clearly positive relative to the largest diagonal entry.
fn cholesky(a: &mut [Vec<f64>]) -> bool {
    let n = a.len();
    let scale = (0..n).map(|i| a[i][i].abs()).fold(0.0, f64::max);
    let tol = scale * 1e-12;
    for j in 0..n {
        let mut d = a[j][j];
        for k in 0..j {
            d -= a[j][k] * a[j][k];
        }
        if d <= tol || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j][j] = d;
        for i in (j + 1)..n {
            let mut s = a[i][j];
            for k in 0..j {
                s -= a[i][k] * a[j][k];
            }
            a[i][j] = s / d;
        }
    }
    true
}

fn cholesky_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = l.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    x
}

/// Result of a multi-output ridge regression with an unpenalized intercept.
pub(crate) struct Solution {
    /// One row per target: `[intercept, w_0, .., w_{p-1}]`.
    pub rows: Vec<Vec<f64>>,
    /// The normal matrix was singular and `fallback_lambda` was applied.
    pub fell_back: bool,
}

/// Solves `min |y_k - b_k - X w_k|² + λ|w_k|²` for every target column `k`.
///
/// The intercept is handled by centering, which is exactly the unpenalized
/// intercept formulation. Columns with `active[j] == false` are excluded and
/// get weight 0. When the normal matrix is singular and `lambda == 0`, the
/// solve is retried with `fallback_lambda`.
pub(crate) fn ridge_multi(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    active: &[bool],
    lambda: f64,
    fallback_lambda: f64,
) -> Option<Solution> {
    let n = x.len();
    let p = active.len();
    let m = y.first().map_or(0, Vec::len);
    if n == 0 {
        return None;
    }
    let cols: Vec<usize> = (0..p).filter(|&j| active[j]).collect();
    let q = cols.len();
    let x_mean: Vec<f64> = (0..p)
        .map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let y_mean: Vec<f64> = (0..m)
        .map(|k| y.iter().map(|r| r[k]).sum::<f64>() / n as f64)
        .collect();

    let mut gram = vec![vec![0.0; q]; q];
    let mut rhs = vec![vec![0.0; m]; q];
    for (row, target) in x.iter().zip(y) {
        let xc: Vec<f64> = cols.iter().map(|&j| row[j] - x_mean[j]).collect();
        for a in 0..q {
            for b in 0..=a {
                gram[a][b] += xc[a] * xc[b];
            }
            for k in 0..m {
                rhs[a][k] += xc[a] * (target[k] - y_mean[k]);
            }
        }
    }
    for a in 0..q {
        for b in 0..a {
            gram[b][a] = gram[a][b];
        }
    }

    let attempt = |lam: f64| {
        let mut g = gram.clone();
        for (a, row) in g.iter_mut().enumerate() {
            row[a] += lam;
        }
        cholesky(&mut g).then_some(g)
    };
    let (l, fell_back) = match attempt(lambda) {
        Some(l) => (l, false),
        None if lambda == 0.0 => (attempt(fallback_lambda)?, true),
        None => return None,
    };

    let mut rows = Vec::with_capacity(m);
    for k in 0..m {
        let b: Vec<f64> = rhs.iter().map(|r| r[k]).collect();
        let w = if q == 0 {
            Vec::new()
        } else {
            cholesky_solve(&l, &b)
        };
        let mut full = vec![0.0; p + 1];
        let mut intercept = y_mean[k];
        for (idx, &j) in cols.iter().enumerate() {
            full[j + 1] = w[idx];
            intercept -= w[idx] * x_mean[j];
        }
        full[0] = intercept;
        rows.push(full);
    }
    Some(Solution { rows, fell_back })
}
