//! Validity repairs applied to final predictions before scoring: clamp
//! negative quantiles to zero, then make each row nondecreasing in level by a
//! left-to-right running maximum.

use crate::prediction::PredictionMatrix;

pub fn clamp_nonnegative(mut m: PredictionMatrix) -> PredictionMatrix {
    for v in m.values_mut() {
        *v = v.max(0.0);
    }
    m
}

/// Raises every prediction that falls below the one at the previous level to
/// that value. This is a cumulative maximum, not a sort or isotonic fit.
pub fn rearrange_noncrossing(mut m: PredictionMatrix) -> PredictionMatrix {
    for row in m.rows_mut() {
        for j in 1..row.len() {
            if row[j] < row[j - 1] {
                row[j] = row[j - 1];
            }
        }
    }
    m
}

/// Clamp, then rearrange.
pub fn postprocess(m: PredictionMatrix) -> PredictionMatrix {
    rearrange_noncrossing(clamp_nonnegative(m))
}
