//! Reference implementations shared by integration and acceptance tests.
//! They avoid the library's solver code paths on purpose.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Epanechnikov weights of `x` at equispaced nodes, rescaled so the
/// trapezoid integral over the nodes is one.
pub fn grid_kernel(x: f64, h: f64, points: usize) -> DVector<f64> {
    let du = 1.0 / (points - 1) as f64;
    let mut k = DVector::from_fn(points, |a, _| {
        let t = (a as f64 * du - x) / h;
        if t.abs() < 1.0 { 0.75 * (1.0 - t * t) / h } else { 0.0 }
    });
    let mut mass = 0.0;
    for a in 0..points {
        let w = if a == 0 || a == points - 1 { 0.5 * du } else { du };
        mass += w * k[a];
    }
    k /= mass;
    k
}

pub fn trapezoid_weights(points: usize) -> DVector<f64> {
    let du = 1.0 / (points - 1) as f64;
    DVector::from_fn(points, |a, _| if a == 0 || a == points - 1 { 0.5 * du } else { du })
}

/// Smooth backfitting for two predictors and a scalar response, solved as
/// one stacked linear system: both integral equations plus the two
/// centering constraints. Returns (f̂_1, f̂_2) on the grid.
pub fn dense_backfit(x: &DMatrix<f64>, y: &[f64], h: [f64; 2], points: usize) -> (DVector<f64>, DVector<f64>) {
    let n = y.len();
    let w = trapezoid_weights(points);
    let kern: Vec<Vec<DVector<f64>>> = (0..2)
        .map(|k| (0..n).map(|i| grid_kernel(x[(i, k)], h[k], points)).collect())
        .collect();
    let mut p = vec![DVector::zeros(points); 2];
    let mut m_hat = vec![DVector::zeros(points); 2];
    for k in 0..2 {
        for i in 0..n {
            p[k] += &kern[k][i] / n as f64;
            m_hat[k] += &kern[k][i] * (y[i] / n as f64);
        }
        m_hat[k].component_div_assign(&p[k]);
    }
    let mut p12 = DMatrix::zeros(points, points);
    for i in 0..n {
        p12 += &kern[0][i] * kern[1][i].transpose() / n as f64;
    }
    let ybar = y.iter().sum::<f64>() / n as f64;

    let mm = points;
    let mut a = DMatrix::zeros(2 * mm + 2, 2 * mm);
    let mut b = DVector::zeros(2 * mm + 2);
    for r in 0..mm {
        a[(r, r)] = 1.0;
        a[(mm + r, mm + r)] = 1.0;
        for c in 0..mm {
            a[(r, mm + c)] = w[c] * p12[(r, c)] / p[0][r];
            a[(mm + r, c)] = w[c] * p12[(c, r)] / p[1][r];
        }
        b[r] = m_hat[0][r] - ybar;
        b[mm + r] = m_hat[1][r] - ybar;
    }
    for c in 0..mm {
        a[(2 * mm, c)] = w[c] * p[0][c];
        a[(2 * mm + 1, mm + c)] = w[c] * p[1][c];
    }
    // the stacked system is consistent with full column rank, so the normal
    // equations recover its exact solution
    let sol = (a.transpose() * &a)
        .cholesky()
        .expect("full column rank")
        .solve(&(a.transpose() * &b));
    (sol.rows(0, mm).into_owned(), sol.rows(mm, mm).into_owned())
}
