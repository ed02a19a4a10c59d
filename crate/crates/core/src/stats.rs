//! Small descriptive statistics shared across estimators.

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance; 0 for fewer than two values.
pub fn sample_variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64
}

/// Sample standard deviation.
pub fn sample_sd(values: &[f64]) -> f64 {
    sample_variance(values).sqrt()
}

/// sqrt((s_t^2 + s_c^2) / 2).
pub fn pooled_sd(treated: &[f64], control: &[f64]) -> f64 {
    ((sample_variance(treated) + sample_variance(control)) / 2.0).sqrt()
}
