//! Least-squares projection onto polynomials of the current state.

use nalgebra::{DMatrix, DVector};

use crate::policy::POLICY;

/// Polynomial basis of total degree `<= degree` in the standardized state
/// variables. Variables that are constant across paths are dropped; columns
/// that are collinear with earlier ones (e.g. `N^2 = N` for a 0/1 counter)
/// are skipped by a fixed-order pivoted Cholesky, so the fit degrades
/// column by column toward degree 1 and finally toward the plain mean.
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) struct PolynomialFit {
    /// Columns of the design matrix kept after collinearity pruning.
    pub kept: usize,
    /// Total degree of the highest kept monomial.
    pub degree: usize,
}

/// Regress each of `width` response columns (row-major `n x width`) on the
/// basis built from `state` (row-major `n x vars`) and return fitted values.
pub(crate) fn fit_and_predict(
    state: &[f64],
    vars: usize,
    responses: &[f64],
    width: usize,
    degree: usize,
) -> (Vec<f64>, PolynomialFit) {
    let n = if vars == 0 {
        responses.len() / width.max(1)
    } else {
        state.len() / vars
    };
    // standardize; drop constant variables
    let mut kept_vars: Vec<(usize, f64, f64)> = Vec::new();
    for v in 0..vars {
        let mean = (0..n).map(|p| state[p * vars + v]).sum::<f64>() / n as f64;
        let var = (0..n)
            .map(|p| (state[p * vars + v] - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        let sd = var.sqrt();
        if sd > 1e-14 * (1.0 + mean.abs()) {
            kept_vars.push((v, mean, sd));
        }
    }
    // monomials as exponent lists, ordered by degree
    let mut monomials: Vec<Vec<usize>> = vec![Vec::new()];
    if degree >= 1 {
        for i in 0..kept_vars.len() {
            monomials.push(vec![i]);
        }
    }
    if degree >= 2 {
        for i in 0..kept_vars.len() {
            for j in i..kept_vars.len() {
                monomials.push(vec![i, j]);
            }
        }
    }
    let cols = monomials.len();
    let row = |p: usize, out: &mut [f64]| {
        let z: Vec<f64> = kept_vars
            .iter()
            .map(|&(v, mean, sd)| (state[p * vars + v] - mean) / sd)
            .collect();
        for (c, mono) in monomials.iter().enumerate() {
            out[c] = mono.iter().map(|&i| z[i]).product();
        }
    };

    // Gram matrix and moments, accumulated in path order
    let mut gram = DMatrix::<f64>::zeros(cols, cols);
    let mut moments = DMatrix::<f64>::zeros(cols, width);
    let mut x = vec![0.0; cols];
    for p in 0..n {
        row(p, &mut x);
        for a in 0..cols {
            for b in a..cols {
                gram[(a, b)] += x[a] * x[b];
            }
            for w in 0..width {
                moments[(a, w)] += x[a] * responses[p * width + w];
            }
        }
    }
    for a in 0..cols {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }

    // fixed-order pivoted Cholesky with column skipping
    let mut selected: Vec<usize> = Vec::new();
    let mut chol: Vec<Vec<f64>> = Vec::new(); // lower-triangular rows
    for j in 0..cols {
        let diag = gram[(j, j)];
        if diag <= 0.0 {
            continue;
        }
        let s = selected.len();
        let mut y = vec![0.0; s];
        for r in 0..s {
            let mut acc = gram[(selected[r], j)];
            for c in 0..r {
                acc -= chol[r][c] * y[c];
            }
            y[r] = acc / chol[r][r];
        }
        let resid = diag - y.iter().map(|v| v * v).sum::<f64>();
        if resid > POLICY.regression_pivot * diag {
            y.push(resid.sqrt());
            chol.push(y);
            selected.push(j);
        }
    }
    let s = selected.len();
    let l = DMatrix::from_fn(s, s, |r, c| if c <= r { chol[r][c] } else { 0.0 });
    let mut coef = DMatrix::<f64>::zeros(s, width);
    for w in 0..width {
        let rhs = DVector::from_iterator(s, selected.iter().map(|&c| moments[(c, w)]));
        let z = l
            .solve_lower_triangular(&rhs)
            .expect("cholesky factor has positive diagonal");
        let beta = l
            .transpose()
            .solve_upper_triangular(&z)
            .expect("cholesky factor has positive diagonal");
        coef.set_column(w, &beta);
    }
    let mut fitted = vec![0.0; n * width];
    for p in 0..n {
        row(p, &mut x);
        for w in 0..width {
            fitted[p * width + w] = selected
                .iter()
                .enumerate()
                .map(|(r, &c)| x[c] * coef[(r, w)])
                .sum();
        }
    }
    let degree = selected
        .iter()
        .map(|&c| monomials[c].len())
        .max()
        .unwrap_or(0);
    (fitted, PolynomialFit { kept: s, degree })
}
