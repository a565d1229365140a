//! Reference implementations written directly from the textbook formulas.

use nalgebra::{DMatrix, DVector};

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Brute-force LOF. The mean reachability distance carries the same 1e-10
/// stabilizer as the pipeline so that duplicate-heavy data stays finite.
pub fn lof(rows: &[Vec<f64>], k: usize) -> Vec<f64> {
    let n = rows.len();
    let d: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| dist(&rows[i], &rows[j])).collect()).collect();
    let kdist: Vec<f64> = (0..n)
        .map(|p| {
            let mut others: Vec<f64> = (0..n).filter(|&o| o != p).map(|o| d[p][o]).collect();
            others.sort_by(|a, b| a.partial_cmp(b).unwrap());
            others[k - 1]
        })
        .collect();
    let hood: Vec<Vec<usize>> = (0..n).map(|p| (0..n).filter(|&o| o != p && d[p][o] <= kdist[p]).collect()).collect();
    let lrd: Vec<f64> = (0..n)
        .map(|p| {
            let mean = hood[p].iter().map(|&o| d[p][o].max(kdist[o])).sum::<f64>() / hood[p].len() as f64;
            1.0 / (mean + 1e-10)
        })
        .collect();
    (0..n)
        .map(|p| {
            if kdist[p] == 0.0 {
                1.0
            } else {
                hood[p].iter().map(|&o| lrd[o] / lrd[p]).sum::<f64>() / hood[p].len() as f64
            }
        })
        .collect()
}

/// Mahalanobis distance with an explicit inverse of the shrunk covariance.
pub fn mahalanobis(rows: &[Vec<f64>], lambda: f64) -> Vec<f64> {
    let n = rows.len();
    let d = rows[0].len();
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let s = centered.transpose() * &centered / n as f64;
    let target = s.trace() / d as f64;
    let shrunk = s * (1.0 - lambda) + DMatrix::identity(d, d) * (lambda * target);
    let inv = shrunk.try_inverse().expect("shrunk covariance is invertible");
    (0..n)
        .map(|i| {
            let v = centered.row(i).transpose();
            (v.transpose() * &inv * &v)[(0, 0)].sqrt()
        })
        .collect()
}

/// Global minimum of `1/2 a'Ka` over `sum a = 1, 0 <= a <= c`.
///
/// Every optimum has some split of indices into zero, bound and free sets,
/// and on the free set the KKT conditions are a linear system. Solving that
/// system for all 3^n splits and keeping the best feasible point gives the
/// exact optimum.
pub fn one_class_dual(kernel: &DMatrix<f64>, c: f64) -> f64 {
    let n = kernel.nrows();
    let objective = |a: &DVector<f64>| 0.5 * (a.transpose() * kernel * a)[(0, 0)];
    let mut best = f64::INFINITY;
    let mut state = vec![0u8; n];
    for code in 0..3usize.pow(n as u32) {
        let mut r = code;
        for s in state.iter_mut() {
            *s = (r % 3) as u8;
            r /= 3;
        }
        let bound: Vec<usize> = (0..n).filter(|&i| state[i] == 1).collect();
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        let left = 1.0 - bound.len() as f64 * c;
        if left < -1e-12 {
            continue;
        }
        let mut a = DVector::zeros(n);
        for &i in &bound {
            a[i] = c;
        }
        if free.is_empty() {
            if left.abs() > 1e-12 {
                continue;
            }
        } else {
            let m = free.len();
            let mut sys = DMatrix::zeros(m + 1, m + 1);
            let mut rhs = DVector::zeros(m + 1);
            for (r, &i) in free.iter().enumerate() {
                for (q, &j) in free.iter().enumerate() {
                    sys[(r, q)] = kernel[(i, j)];
                }
                sys[(r, m)] = -1.0;
                sys[(m, r)] = 1.0;
                rhs[r] = -bound.iter().map(|&j| kernel[(i, j)] * c).sum::<f64>();
            }
            rhs[m] = left;
            let Some(sol) = sys.lu().solve(&rhs) else { continue };
            if (0..m).any(|r| !(sol[r] >= -1e-12 && sol[r] <= c + 1e-12)) {
                continue;
            }
            for (r, &i) in free.iter().enumerate() {
                a[i] = sol[r];
            }
        }
        best = best.min(objective(&a));
    }
    best
}

/// Spearman correlation of two tie-free rank vectors from the squared rank
/// difference formula.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}
