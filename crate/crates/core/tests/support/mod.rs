//! Reference computations that share no code with the library.
#![allow(dead_code)]

/// Iterated integrals of the piecewise-linear path through `rows` for every
/// word up to `depth`, level-major and row-major within a level, by the
/// composite trapezoid rule with `cells` cells per segment.
pub fn quadrature_signature(rows: &[Vec<f64>], depth: usize, cells: usize) -> Vec<Vec<f64>> {
    let d = rows[0].len();
    let segments = rows.len() - 1;
    let grid = segments * cells + 1;
    let h = 1.0 / cells as f64;
    let slope = |m: usize, c: usize| {
        let s = m / cells;
        rows[s + 1][c] - rows[s][c]
    };
    // running integral of every word of the previous level, on the grid
    let mut prev: Vec<Vec<f64>> = vec![vec![1.0; grid]];
    let mut levels = vec![vec![1.0]];
    for _ in 1..=depth {
        let mut next = Vec::with_capacity(prev.len() * d);
        for word in &prev {
            for c in 0..d {
                let mut acc = vec![0.0; grid];
                for m in 0..grid - 1 {
                    acc[m + 1] = acc[m] + h * slope(m, c) * 0.5 * (word[m] + word[m + 1]);
                }
                next.push(acc);
            }
        }
        levels.push(next.iter().map(|w| w[grid - 1]).collect());
        prev = next;
    }
    levels
}

/// Refine [`quadrature_signature`] until successive halvings agree to `tol`.
pub fn converged_quadrature(rows: &[Vec<f64>], depth: usize, tol: f64) -> Vec<Vec<f64>> {
    let mut cells = 64;
    let mut last = quadrature_signature(rows, depth, cells);
    loop {
        cells *= 2;
        let next = quadrature_signature(rows, depth, cells);
        let change = last
            .iter()
            .flatten()
            .zip(next.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if change < tol || cells >= 1 << 16 {
            return next;
        }
        last = next;
    }
}

/// Least-squares coefficients of `y ~ X beta` by SVD.
pub fn least_squares(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let a = nalgebra::DMatrix::from_fn(x.len(), x[0].len(), |i, j| x[i][j]);
    let b = nalgebra::DVector::from_column_slice(y);
    a.svd(true, true).solve(&b, 1e-12).expect("SVD keeps U and V").iter().copied().collect()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    let a = nalgebra::DMatrix::from_fn(n, n, |i, j| m[i][j]);
    a.symmetric_eigen().eigenvalues.min()
}
