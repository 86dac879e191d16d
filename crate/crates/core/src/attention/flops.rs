use super::DilationSchedule;

/// Floating-point operation estimate for one multi-head dilated attention
/// layer: `Σ_i ceil(N/w_i)·(w_i/r_i)²·d·4` for scores and value mixing across
/// all heads, plus `8·N·d²` for the four projections. The head count only
/// splits `d` and drops out of the total.
pub fn flops_estimate(n: usize, schedule: &DilationSchedule, d: usize, _heads: usize) -> f64 {
    projection_flops(n, d) + attention_flops(n, schedule, d)
}

/// Score and value-mixing part of [`flops_estimate`].
pub fn attention_flops(n: usize, schedule: &DilationSchedule, d: usize) -> f64 {
    schedule
        .pairs()
        .iter()
        .map(|p| {
            let segments = n.div_ceil(p.segment) as f64;
            let kept = (p.segment / p.ratio) as f64;
            segments * kept * kept * d as f64 * 4.0
        })
        .sum()
}

pub fn projection_flops(n: usize, d: usize) -> f64 {
    8.0 * n as f64 * (d as f64).powi(2)
}

/// Dense attention baseline: `4·N²·d + 8·N·d²`.
pub fn dense_flops(n: usize, d: usize) -> f64 {
    4.0 * (n as f64).powi(2) * d as f64 + projection_flops(n, d)
}
