//! Gamma CDF by quadrature and the discretized lag weights built from it.

/// Composite Simpson rule over `[a, b]` with `panels` (rounded up to even).
fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = panels.max(2).next_multiple_of(2);
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Gamma CDF at each of `xs` (sorted), computed by integrating the
/// unnormalized density and dividing by its total mass.
///
/// With `x = u^m` and `m = n / shape`, `n = ceil(4 shape)`, the integrand
/// becomes `m u^(n-1) exp(-u^m / scale)`, which has at least four bounded
/// derivatives on `[0, inf)` for every positive shape.
pub fn gamma_cdf_by_quadrature(shape: f64, scale: f64, xs: &[f64], panels: usize) -> Vec<f64> {
    assert!(shape > 0.0 && scale > 0.0);
    let n = (4.0 * shape).ceil().max(1.0);
    let m = n / shape;
    let integrand = |u: f64| {
        if u <= 0.0 {
            return if n == 1.0 { m } else { 0.0 };
        }
        m * ((n - 1.0) * u.ln() - u.powf(m) / scale).exp()
    };

    let mean = shape * scale;
    let sd = shape.sqrt() * scale;
    let x_max = mean + 60.0 * sd;
    let mut breaks: Vec<f64> = xs.iter().map(|x| x.max(0.0).powf(1.0 / m)).collect();
    breaks.push(x_max.powf(1.0 / m));
    let span = *breaks.last().unwrap();

    let mut cumulative = Vec::with_capacity(breaks.len());
    let mut acc = 0.0;
    let mut lo = 0.0;
    for &hi in &breaks {
        if hi > lo {
            let panels = ((hi - lo) / span * panels as f64).ceil() as usize;
            acc += simpson(&integrand, lo, hi, panels);
            lo = hi;
        }
        cumulative.push(acc);
    }
    let total = *cumulative.last().unwrap();
    cumulative[..xs.len()].iter().map(|c| c / total).collect()
}

/// Lag weights for a gamma with the given day-scale moments, recomputed
/// from scratch on the weekly scale.
///
/// `min_lag` 1 gives generation weights over `F(g + 1/2) - F(g - 1/2)`;
/// `min_lag` 0 gives shedding weights with the lag-0 interval clipped at 0.
pub fn discretized_weights(mean_days: f64, sd_days: f64, min_lag: usize, max_lag: usize) -> Vec<f64> {
    let mean = mean_days / 7.0;
    let var = (sd_days / 7.0).powi(2);
    let shape = mean * mean / var;
    let scale = var / mean;
    let mut points = vec![];
    for lag in min_lag..=max_lag {
        points.push((lag as f64 - 0.5).max(0.0));
        points.push(lag as f64 + 0.5);
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|a, b| points[*a].total_cmp(&points[*b]));
    let sorted: Vec<f64> = order.iter().map(|&i| points[i]).collect();
    let cdf_sorted = gamma_cdf_by_quadrature(shape, scale, &sorted, 40_000);
    let mut cdf = vec![0.0; points.len()];
    for (pos, &i) in order.iter().enumerate() {
        cdf[i] = cdf_sorted[pos];
    }
    let raw: Vec<f64> = cdf.chunks(2).map(|c| c[1] - c[0]).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_cdf() {
        let xs = [0.1, 1.0, 2.5];
        let got = gamma_cdf_by_quadrature(1.0, 1.0, &xs, 40_000);
        for (x, g) in xs.iter().zip(got) {
            assert!((g - (1.0 - (-x).exp())).abs() < 1e-12, "{x}: {g}");
        }
    }

    #[test]
    fn erlang_two_cdf() {
        // shape 2, scale 0.5: F(x) = 1 - exp(-2x)(1 + 2x)
        let xs = [0.2, 0.7, 3.0];
        let got = gamma_cdf_by_quadrature(2.0, 0.5, &xs, 40_000);
        for (x, g) in xs.iter().zip(got) {
            let exact = 1.0 - (-2.0 * x).exp() * (1.0 + 2.0 * x);
            assert!((g - exact).abs() < 1e-12, "{x}: {g} vs {exact}");
        }
    }
}
