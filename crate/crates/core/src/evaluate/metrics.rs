use super::EvalError;
use crate::matrix::Dense;
use crate::Scalar;

/// k-th smallest distance from each real design to the *other* real designs.
pub fn knn_radii<T: Scalar>(d_real: &Dense<T>, k: usize) -> Result<Vec<T>, EvalError> {
    let n = d_real.rows();
    if d_real.cols() != n {
        return Err(EvalError::ShapeMismatch(format!(
            "real table is {n}x{}",
            d_real.cols()
        )));
    }
    if k == 0 || n < k + 1 {
        return Err(EvalError::KTooLarge { k, n });
    }
    let mut buf = Vec::with_capacity(n - 1);
    Ok((0..n)
        .map(|i| {
            buf.clear();
            buf.extend(
                d_real
                    .row(i)
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, &v)| v),
            );
            let (_, kth, _) = buf
                .select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).expect("finite distances"));
            *kth
        })
        .collect())
}

fn check_cross<T: Scalar>(d_cross: &Dense<T>, radii: &[T]) -> Result<(), EvalError> {
    if d_cross.rows() != radii.len() {
        return Err(EvalError::ShapeMismatch(format!(
            "cross table has {} rows, {} radii",
            d_cross.rows(),
            radii.len()
        )));
    }
    if d_cross.cols() == 0 {
        return Err(EvalError::ShapeMismatch("no generated designs".into()));
    }
    Ok(())
}

/// Number of (real, generated) pairs with the generated design inside the
/// real design's sphere (inclusive).
pub fn fidelity_count<T: Scalar>(d_cross: &Dense<T>, radii: &[T]) -> Result<u64, EvalError> {
    check_cross(d_cross, radii)?;
    Ok(radii
        .iter()
        .enumerate()
        .map(|(i, &r)| d_cross.row(i).iter().filter(|&&v| v <= r).count() as u64)
        .sum())
}

/// Number of real designs whose sphere holds at least one generated design.
pub fn diversity_count<T: Scalar>(d_cross: &Dense<T>, radii: &[T]) -> Result<usize, EvalError> {
    check_cross(d_cross, radii)?;
    Ok(radii
        .iter()
        .enumerate()
        .filter(|&(i, &r)| d_cross.row(i).iter().any(|&v| v <= r))
        .count())
}

/// `d_cross` is N x M (real rows, generated columns).
pub fn fidelity<T: Scalar>(d_cross: &Dense<T>, radii: &[T], k: usize) -> Result<f64, EvalError> {
    let hits = fidelity_count(d_cross, radii)?;
    Ok(hits as f64 / (k as f64 * d_cross.cols() as f64))
}

pub fn diversity<T: Scalar>(d_cross: &Dense<T>, radii: &[T]) -> Result<f64, EvalError> {
    let covered = diversity_count(d_cross, radii)?;
    Ok(covered as f64 / radii.len() as f64)
}
