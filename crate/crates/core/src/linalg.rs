//! Dense real symmetric solves used by the projection metrics.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Solves `(G + λ·tr(G)/n·I) x = b` for symmetric positive semi-definite `G`.
///
/// Returns the solution and whether the loading was needed to make the
/// factorization succeed (`lambda` is always applied; the flag reports a
/// Cholesky failure on the first attempt that forced a heavier load).
pub fn solve_spd_loaded(gram: &DMatrix<f64>, rhs: &DVector<f64>, lambda: f64) -> Result<(DVector<f64>, bool)> {
    let n = gram.nrows();
    if gram.ncols() != n || rhs.len() != n {
        return Err(Error::shape("gram matrix must be square and match the rhs"));
    }
    let scale = (gram.trace() / n as f64).max(f64::MIN_POSITIVE);
    let mut load = lambda;
    for attempt in 0..8 {
        let mut g = gram.clone();
        for i in 0..n {
            g[(i, i)] += load * scale;
        }
        if let Some(ch) = g.cholesky() {
            return Ok((ch.solve(rhs), attempt > 0));
        }
        load = (load * 100.0).max(1e-12);
    }
    Err(Error::Numerical("gram matrix could not be factorized".into()))
}
