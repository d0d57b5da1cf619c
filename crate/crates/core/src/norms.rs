//! Matrix norms used by the sensitivity and error-bound evaluators.

use nalgebra::DMatrix;

/// `||M||_{1->2}`: the largest Euclidean norm of a column.
pub fn operator_norm_1_2(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Largest singular value, by power iteration on `M^T M`.
///
/// Iterates until successive estimates agree to a relative `1e-10`.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let gram = m.transpose() * m;
    let n = gram.ncols();
    // A deterministic start that is not orthogonal to the top eigenvector
    // for generic inputs; retried with basis vectors if it collapses.
    let starts = std::iter::once(nalgebra::DVector::from_fn(n, |i, _| {
        1.0 + (i as f64) * 0.618_033_988_75
    }))
    .chain((0..n).map(|i| nalgebra::DVector::from_fn(n, |j, _| if i == j { 1.0 } else { 0.0 })));
    let mut best = 0.0f64;
    for mut v in starts {
        let norm = v.norm();
        v /= norm;
        let mut lambda = 0.0;
        for _ in 0..10_000 {
            let w = &gram * &v;
            let next = w.norm();
            if next == 0.0 {
                lambda = 0.0;
                break;
            }
            v = w / next;
            let converged = (next - lambda).abs() <= 1e-10 * next;
            lambda = next;
            if converged {
                break;
            }
        }
        best = best.max(lambda);
        if lambda > 0.0 {
            break;
        }
    }
    best.sqrt()
}
