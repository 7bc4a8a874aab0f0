use crate::error::{Error, Result};

/// Quantile levels for per-item scalars.
///
/// With `m` finite values sorted ascending, edge `j` (for `j = 1..n_levels`)
/// is the value at rank `ceil(j·m/n_levels) − 1`, and an item's level is the
/// number of edges strictly below its value. Equal values always share a
/// level, so a constant column collapses to level 0. Missing values get level
/// `n_levels`.
pub fn discretize_levels(values: &[Option<f64>], n_levels: usize) -> Result<Vec<usize>> {
    if n_levels < 2 {
        return Err(Error::Config(format!("n_levels must be ≥ 2, got {n_levels}")));
    }
    let mut finite: Vec<f64> = values
        .iter()
        .filter_map(|v| v.filter(|x| x.is_finite()))
        .collect();
    if finite.is_empty() {
        return Err(Error::Data("discretize_levels: all values missing".into()));
    }
    finite.sort_by(f64::total_cmp);
    let m = finite.len();
    let edges: Vec<f64> = (1..n_levels)
        .map(|j| finite[(j * m).div_ceil(n_levels) - 1])
        .collect();
    Ok(values
        .iter()
        .map(|v| match v.filter(|x| x.is_finite()) {
            Some(x) => edges.iter().filter(|&&e| e < x).count(),
            None => n_levels,
        })
        .collect())
}
