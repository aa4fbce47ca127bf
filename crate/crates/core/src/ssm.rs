//! Second-difference local-trend state-space model on log10 loads.
//!
//! State equation `x_t = 2 x_{t-1} - x_{t-2} + w_t`, observation
//! `y_t = x_t + v_t`. The filter carries the pair `(x_t, x_{t-1})`; the
//! prior at `t = 0` is `N((psi, psi), I)`. Weeks without an observation run
//! the prediction step only, so their filtered variance is the prediction
//! variance.

use std::f64::consts::{LN_10, PI};
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{Unit, WeeklySeries};

/// Box bounds on both SDs during maximum likelihood.
pub const SIGMA_MIN: f64 = 1e-4;
pub const SIGMA_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsmParams {
    pub sigma_w: f64,
    pub sigma_v: f64,
    pub psi: f64,
}

impl SsmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_w > 0.0 && self.sigma_v > 0.0 && self.psi.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "state-space SDs must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Crude data-driven starting point: `psi` at the first observation and
    /// both SDs tied to the spread of week-over-week changes.
    pub fn initial_guess(series: &WeeklySeries) -> Self {
        let present: Vec<f64> = series.values().iter().flatten().copied().collect();
        let psi = present.first().copied().unwrap_or(0.0);
        let diffs: Vec<f64> = present.windows(2).map(|w| w[1] - w[0]).collect();
        let spread = if diffs.len() >= 2 {
            let m = diffs.iter().sum::<f64>() / diffs.len() as f64;
            (diffs.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64).sqrt()
        } else {
            0.1
        };
        let spread = spread.clamp(1e-2, 1.0);
        Self {
            sigma_w: 0.2 * spread,
            sigma_v: 0.5 * spread,
            psi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerReport {
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    pub initial_loglik: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    pub filtered_mean: Vec<f64>,
    pub filtered_var: Vec<f64>,
    /// Per-week predictive log-density; zero at missing weeks.
    pub predictive_logdensity: Vec<f64>,
    pub loglik: f64,
    pub params: SsmParams,
    pub natural_mean: Vec<f64>,
    pub natural_log_sd: Vec<f64>,
    pub observed: Vec<bool>,
    pub start_date: NaiveDate,
    /// Linear unit of the series before the log10 transform.
    pub source_unit: Unit,
    pub optimizer: Option<OptimizerReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuasiNewtonSettings {
    pub max_iter: usize,
    /// Projected-gradient tolerance, scaled by `max(1, |loglik|)`.
    pub grad_tol: f64,
    /// Central finite-difference step for the numerical gradient.
    pub fd_step: f64,
}

impl Default for QuasiNewtonSettings {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-6,
            fd_step: 1e-5,
        }
    }
}

type Vec2 = [f64; 2];
type Mat2 = [[f64; 2]; 2];

fn check_input(y: &WeeklySeries) -> Result<()> {
    if !y.unit().is_log10() {
        return Err(Error::UnitMismatch {
            expected: y.unit().log10(),
            found: y.unit(),
        });
    }
    if y.len() < 3 {
        return Err(Error::TooShort(format!(
            "state-space filter needs at least 3 weeks, got {}",
            y.len()
        )));
    }
    Ok(())
}

/// Filter pass returning per-week filtered moments and predictive terms.
fn filter_pass(values: &[Option<f64>], params: &SsmParams) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let q = params.sigma_w * params.sigma_w;
    let r = params.sigma_v * params.sigma_v;
    let mut m: Vec2 = [params.psi, params.psi];
    let mut p: Mat2 = [[1.0, 0.0], [0.0, 1.0]];
    let n = values.len();
    let mut means = Vec::with_capacity(n);
    let mut vars = Vec::with_capacity(n);
    let mut terms = Vec::with_capacity(n);
    for y in values {
        // predict with F = [[2, -1], [1, 0]]
        let m_pred = [2.0 * m[0] - m[1], m[0]];
        let fp00 = 2.0 * p[0][0] - p[1][0];
        let fp01 = 2.0 * p[0][1] - p[1][1];
        let fp10 = p[0][0];
        let fp11 = p[0][1];
        let p_pred = [
            [2.0 * fp00 - fp01 + q, fp00],
            [2.0 * fp10 - fp11, fp10],
        ];
        // symmetrize against rounding drift
        let off = 0.5 * (p_pred[0][1] + p_pred[1][0]);
        let p_pred = [[p_pred[0][0], off], [off, p_pred[1][1]]];
        match y {
            Some(y) => {
                let s = p_pred[0][0] + r;
                let v = y - m_pred[0];
                let k = [p_pred[0][0] / s, p_pred[1][0] / s];
                m = [m_pred[0] + k[0] * v, m_pred[1] + k[1] * v];
                p = [
                    [p_pred[0][0] - k[0] * k[0] * s, p_pred[0][1] - k[0] * k[1] * s],
                    [p_pred[1][0] - k[1] * k[0] * s, p_pred[1][1] - k[1] * k[1] * s],
                ];
                terms.push(-0.5 * ((2.0 * PI * s).ln() + v * v / s));
            }
            None => {
                m = m_pred;
                p = p_pred;
                terms.push(0.0);
            }
        }
        means.push(m[0]);
        vars.push(p[0][0]);
    }
    (means, vars, terms)
}

fn loglik_only(values: &[Option<f64>], params: &SsmParams) -> f64 {
    filter_pass(values, params).2.iter().sum()
}

pub fn kalman_filter(y_log10: &WeeklySeries, params: &SsmParams) -> Result<FilterOutput> {
    check_input(y_log10)?;
    params.validate()?;
    let (filtered_mean, filtered_var, predictive_logdensity) =
        filter_pass(y_log10.values(), params);
    let loglik = predictive_logdensity.iter().sum();
    let natural_mean = filtered_mean.iter().map(|x| 10f64.powf(*x)).collect();
    let natural_log_sd = filtered_var.iter().map(|v| LN_10 * v.sqrt()).collect();
    Ok(FilterOutput {
        filtered_mean,
        filtered_var,
        predictive_logdensity,
        loglik,
        params: *params,
        natural_mean,
        natural_log_sd,
        observed: y_log10.values().iter().map(Option::is_some).collect(),
        start_date: y_log10.start_date(),
        source_unit: y_log10.unit().linear(),
        optimizer: None,
    })
}

const LN_SIGMA_MIN: f64 = -9.210_340_371_976_182; // ln(1e-4)
const LN_SIGMA_MAX: f64 = std::f64::consts::LN_10;

fn to_params(theta: &[f64; 3]) -> SsmParams {
    SsmParams {
        sigma_w: theta[0].exp(),
        sigma_v: theta[1].exp(),
        psi: theta[2],
    }
}

fn project(theta: &mut [f64; 3]) {
    for v in theta.iter_mut().take(2) {
        *v = v.clamp(LN_SIGMA_MIN, LN_SIGMA_MAX);
    }
}

fn numerical_gradient(f: &impl Fn(&[f64; 3]) -> f64, x: &[f64; 3], h: f64) -> [f64; 3] {
    let mut g = [0.0; 3];
    for i in 0..3 {
        let mut hi = *x;
        let mut lo = *x;
        hi[i] += h;
        lo[i] -= h;
        g[i] = (f(&hi) - f(&lo)) / (2.0 * h);
    }
    g
}

/// Gradient with components zeroed where a bound blocks descent.
fn projected(g: &[f64; 3], x: &[f64; 3]) -> [f64; 3] {
    let mut pg = *g;
    for i in 0..2 {
        // g is the gradient of the objective being minimized
        if (x[i] <= LN_SIGMA_MIN && g[i] > 0.0) || (x[i] >= LN_SIGMA_MAX && g[i] < 0.0) {
            pg[i] = 0.0;
        }
    }
    pg
}

fn norm_inf(v: &[f64; 3]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Maximum likelihood over `(ln sigma_w, ln sigma_v, psi)` by BFGS with
/// central-difference gradients and backtracking line search.
pub fn fit_mle(
    y_log10: &WeeklySeries,
    init: &SsmParams,
    settings: &QuasiNewtonSettings,
) -> Result<FilterOutput> {
    check_input(y_log10)?;
    init.validate()?;
    if y_log10.n_present() < 5 {
        return Err(Error::TooShort(format!(
            "maximum likelihood needs at least 5 observations, got {}",
            y_log10.n_present()
        )));
    }
    let values = y_log10.values();
    let objective = |theta: &[f64; 3]| -loglik_only(values, &to_params(theta));

    let mut x = [init.sigma_w.ln(), init.sigma_v.ln(), init.psi];
    project(&mut x);
    let initial_loglik = -objective(&x);
    let mut fx = objective(&x);
    let mut g = numerical_gradient(&objective, &x, settings.fd_step);
    let mut h_inv = identity3();
    let mut iterations = 0;
    let mut converged = false;
    let mut stalls = 0;

    while iterations < settings.max_iter {
        let pg = projected(&g, &x);
        if norm_inf(&pg) < settings.grad_tol * fx.abs().max(1.0) {
            converged = true;
            break;
        }
        iterations += 1;

        let mut d = mat_vec(&h_inv, &pg);
        for v in d.iter_mut() {
            *v = -*v;
        }
        for i in 0..2 {
            if pg[i] == 0.0 {
                d[i] = 0.0;
            }
        }
        if dot(&d, &pg) >= 0.0 {
            h_inv = identity3();
            d = [-pg[0], -pg[1], -pg[2]];
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial = [x[0] + step * d[0], x[1] + step * d[1], x[2] + step * d[2]];
            project(&mut trial);
            let ft = objective(&trial);
            let moved = [trial[0] - x[0], trial[1] - x[1], trial[2] - x[2]];
            if ft.is_finite() && ft <= fx + 1e-4 * dot(&g, &moved) && norm_inf(&moved) > 0.0 {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }

        let Some((x_new, f_new)) = accepted else {
            stalls += 1;
            if stalls > 2 {
                // no descent at finite-difference resolution
                converged = norm_inf(&pg) < 100.0 * settings.grad_tol * fx.abs().max(1.0);
                break;
            }
            h_inv = identity3();
            continue;
        };
        stalls = 0;
        let g_new = numerical_gradient(&objective, &x_new, settings.fd_step);
        let s = [x_new[0] - x[0], x_new[1] - x[1], x_new[2] - x[2]];
        let yv = [g_new[0] - g[0], g_new[1] - g[1], g_new[2] - g[2]];
        let sy = dot(&s, &yv);
        if sy > 1e-12 {
            bfgs_update(&mut h_inv, &s, &yv, sy);
        }
        x = x_new;
        fx = f_new;
        g = g_new;
    }

    let best = to_params(&x);
    let grad_norm = norm_inf(&projected(&g, &x));
    if !converged {
        return Err(Error::NotConverged {
            best,
            best_loglik: -fx,
            iterations,
            grad_norm,
        });
    }
    let mut out = kalman_filter(y_log10, &best)?;
    out.optimizer = Some(OptimizerReport {
        converged,
        iterations,
        grad_norm,
        initial_loglik,
    });
    Ok(out)
}

fn identity3() -> [[f64; 3]; 3] {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

fn mat_vec(m: &[[f64; 3]; 3], v: &[f64; 3]) -> [f64; 3] {
    [dot(&m[0], v), dot(&m[1], v), dot(&m[2], v)]
}

fn bfgs_update(h: &mut [[f64; 3]; 3], s: &[f64; 3], y: &[f64; 3], sy: f64) {
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    for i in 0..3 {
        for j in 0..3 {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

/// Filtered loads on the natural scale with per-week natural-log SDs, gap-free.
pub fn to_mode_b_input(filter: &FilterOutput) -> Result<WeeklySeries> {
    WeeklySeries::new(
        filter.start_date,
        filter.natural_mean.iter().map(|v| Some(*v)).collect(),
        filter.source_unit,
    )?
    .with_obs_sd(filter.natural_log_sd.clone())
}

impl FilterOutput {
    /// `week,filtered_log10_mean,filtered_log10_var,natural_mean,natural_log_sd`
    /// with 1-based week numbers.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "week",
            "filtered_log10_mean",
            "filtered_log10_var",
            "natural_mean",
            "natural_log_sd",
        ])?;
        for t in 0..self.filtered_mean.len() {
            w.write_record([
                (t + 1).to_string(),
                self.filtered_mean[t].to_string(),
                self.filtered_var[t].to_string(),
                self.natural_mean[t].to_string(),
                self.natural_log_sd[t].to_string(),
            ])?;
        }
        w.flush().map_err(|source| Error::Io {
            path: "<csv writer>".into(),
            source,
        })?;
        Ok(())
    }
}
