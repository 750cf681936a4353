use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VectorError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("vector has zero norm")]
    ZeroNorm,
    #[error("cannot pool an empty set of rows")]
    Empty,
}

/// Cosine similarity, accumulated in f64 and clamped to `[-1, 1]`.
pub fn cosine<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> Result<f64, VectorError> {
    if a.len() != b.len() {
        return Err(VectorError::DimensionMismatch(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.into(), y.into());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(VectorError::ZeroNorm);
    }
    Ok((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

/// Element-wise mean of equally sized rows.
pub fn mean_pool<R: AsRef<[f32]>>(rows: &[R]) -> Result<Vec<f32>, VectorError> {
    let first = rows.first().ok_or(VectorError::Empty)?.as_ref();
    let mut acc = vec![0.0f64; first.len()];
    for row in rows {
        let row = row.as_ref();
        if row.len() != acc.len() {
            return Err(VectorError::DimensionMismatch(acc.len(), row.len()));
        }
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v as f64;
        }
    }
    let n = rows.len() as f64;
    Ok(acc.into_iter().map(|s| (s / n) as f32).collect())
}

/// Min-max normalization to `[0, 1]`. A constant input maps to all zeros.
pub fn minmax_normalize(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    if span.is_nan() || span <= 0.0 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|&v| ((v - lo) / span).clamp(0.0, 1.0)).collect()
}
