//! Small order-fixed summary statistics.

/// Incremental arithmetic mean. Exact for constant input, and the summation
/// order is the iteration order.
pub fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut m = 0.0;
    let mut n = 0usize;
    for v in values {
        n += 1;
        if n == 1 {
            m = v;
        } else {
            m += (v - m) / n as f64;
        }
    }
    (n > 0).then_some(m)
}

/// Population (n-divisor) standard deviation.
pub fn population_std(values: &[f64]) -> Option<f64> {
    let m = mean(values.iter().copied())?;
    let var = mean(values.iter().map(|v| (v - m) * (v - m)))?;
    Some(var.sqrt())
}

/// Median with the midpoint rule for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}
