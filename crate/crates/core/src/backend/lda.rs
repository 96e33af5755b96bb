//! Fisher LDA with trace-scaled shrinkage of the within-class scatter.
//!
//! Scatter matrices are normalised by the sample count. With
//! `Sw' = Sw + shrinkage * (tr(Sw) / D) * I`, the projection columns are the
//! leading generalised eigenvectors of `Sb v = lambda Sw' v`, solved through the
//! Cholesky factor `Sw' = L L^T` and the symmetric problem
//! `L^-1 Sb L^-T u = lambda u`, `v = L^-T u`. Every column therefore has unit
//! norm in the `Sw'` metric. The sign of each column is fixed so that its
//! largest-magnitude entry is positive.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Below this (relative to the trace of the whitened between-class scatter)
/// an eigenvalue counts as zero.
const DEGENERATE_EIGENVALUE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct LdaFit {
    /// `D x P`
    pub projection: DMatrix<f64>,
    /// Eigenvalues of the kept directions, decreasing.
    pub eigenvalues: Vec<f64>,
    pub warnings: Vec<String>,
}

pub fn fit_lda(
    features: &DMatrix<f64>,
    labels: &[usize],
    n_classes: usize,
    dim: usize,
    shrinkage: f64,
) -> Result<LdaFit> {
    let (n, d) = features.shape();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: labels.len(),
        });
    }
    if n_classes < 2 {
        return Err(Error::invalid("LDA needs at least 2 classes"));
    }
    if dim == 0 {
        return Err(Error::invalid("LDA dimension must be >= 1"));
    }
    if dim > n_classes - 1 {
        return Err(Error::invalid(format!(
            "LDA dimension {dim} exceeds the Fisher rank bound K-1 = {} for K = {n_classes} classes",
            n_classes - 1
        )));
    }
    if dim > d {
        return Err(Error::invalid(format!(
            "LDA dimension {dim} exceeds the feature dimension {d}"
        )));
    }
    if !(shrinkage >= 0.0) {
        return Err(Error::invalid("LDA shrinkage must be >= 0"));
    }
    let mut warnings = Vec::new();

    let mut counts = vec![0usize; n_classes];
    let mut class_sums = DMatrix::<f64>::zeros(n_classes, d);
    for (t, &y) in labels.iter().enumerate() {
        if y >= n_classes {
            return Err(Error::invalid(format!("label {y} out of range")));
        }
        counts[y] += 1;
        let mut row = class_sums.row_mut(y);
        row += features.row(t);
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!("LDA class {empty} has no samples")));
    }
    if counts.iter().any(|&c| c == 1) {
        warnings.push("a class has a single sample; relying on shrinkage for its scatter".into());
    }
    let class_means = DMatrix::from_fn(n_classes, d, |k, j| class_sums[(k, j)] / counts[k] as f64);
    let global_mean: DVector<f64> = features.row_mean().transpose();

    let mut sw = DMatrix::<f64>::zeros(d, d);
    for (t, &y) in labels.iter().enumerate() {
        let diff = (features.row(t) - class_means.row(y)).transpose();
        sw.ger(1.0, &diff, &diff, 1.0);
    }
    sw /= n as f64;
    let mut sb = DMatrix::<f64>::zeros(d, d);
    for k in 0..n_classes {
        let diff = class_means.row(k).transpose() - &global_mean;
        sb.ger(counts[k] as f64 / n as f64, &diff, &diff, 1.0);
    }

    let mut trace_scale = sw.trace() / d as f64;
    if trace_scale <= 0.0 {
        warnings.push("within-class scatter is zero; using unit shrinkage scale".into());
        trace_scale = 1.0;
    }
    let mut sw_reg = sw;
    for i in 0..d {
        sw_reg[(i, i)] += shrinkage * trace_scale;
    }
    let chol = Cholesky::new(sw_reg).ok_or_else(|| {
        Error::invalid("regularised within-class scatter is not positive definite; increase shrinkage")
    })?;
    let l = chol.l();
    let l_inv_sb = l
        .solve_lower_triangular(&sb)
        .expect("Cholesky factor is invertible");
    let mut whitened = l
        .solve_lower_triangular(&l_inv_sb.transpose())
        .expect("Cholesky factor is invertible");
    whitened = (&whitened + whitened.transpose()) * 0.5;

    let whitened_trace = whitened.trace();
    let eig = SymmetricEigen::new(whitened);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let lt = l.transpose();
    let mut projection = DMatrix::zeros(d, dim);
    let mut eigenvalues = Vec::with_capacity(dim);
    for (c, &i) in order.iter().take(dim).enumerate() {
        let u = eig.eigenvectors.column(i).into_owned();
        let mut v = lt.solve_upper_triangular(&u).expect("Cholesky factor is invertible");
        let pivot = v
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(bi, bv), (j, x)| if x.abs() > bv { (j, x.abs()) } else { (bi, bv) })
            .0;
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        projection.set_column(c, &v);
        eigenvalues.push(eig.eigenvalues[i]);
    }
    let scale = whitened_trace.abs().max(f64::MIN_POSITIVE);
    if eigenvalues.iter().all(|&e| e <= DEGENERATE_EIGENVALUE * scale.max(1.0)) {
        warnings.push("between-class scatter is (near) zero; LDA directions are arbitrary".into());
    }
    for w in &warnings {
        log::warn!("lda: {w}");
    }
    Ok(LdaFit {
        projection,
        eigenvalues,
        warnings,
    })
}
