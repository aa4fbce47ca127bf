use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use wwrt_core::series::{Unit, WeeklySeries};
use wwrt_core::ssm::{fit_mle, to_mode_b_input, QuasiNewtonSettings, SsmParams};

fn simulate_trend(n: usize, sigma_w: f64, sigma_v: f64, seed: u64) -> WeeklySeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Normal::new(0.0, sigma_w).unwrap();
    let v = Normal::new(0.0, sigma_v).unwrap();
    let (mut prev, mut cur) = (3.0, 3.0);
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        let next = 2.0 * cur - prev + w.sample(&mut rng);
        prev = cur;
        cur = next;
        values.push(Some(cur + v.sample(&mut rng)));
    }
    let start = NaiveDate::from_ymd_opt(2020, 1, 6).unwrap();
    WeeklySeries::new(start, values, Unit::Log10BGcPerDay).unwrap()
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

#[test]
fn mle_recovers_simulated_noise_levels() {
    let (sw, sv) = (0.05, 0.2);
    let mut err_w = Vec::new();
    let mut err_v = Vec::new();
    for seed in 0..20 {
        let y = simulate_trend(300, sw, sv, seed);
        let fit = fit_mle(&y, &SsmParams::initial_guess(&y), &QuasiNewtonSettings::default()).unwrap();
        err_w.push((fit.params.sigma_w - sw).abs() / sw);
        err_v.push((fit.params.sigma_v - sv).abs() / sv);
    }
    let (mw, mv) = (median(err_w), median(err_v));
    assert!(mw <= 0.25, "sigma_w median relative error {mw}");
    assert!(mv <= 0.25, "sigma_v median relative error {mv}");
}

#[test]
fn mode_b_input_fills_gaps_with_wider_sds() {
    let full = simulate_trend(60, 0.05, 0.2, 77);
    let mut values = full.values().to_vec();
    for w in [20, 21, 40] {
        values[w] = None;
    }
    let y = WeeklySeries::new(full.start_date(), values, Unit::Log10BGcPerDay).unwrap();
    let fit = fit_mle(&y, &SsmParams::initial_guess(&y), &QuasiNewtonSettings::default()).unwrap();
    let b = to_mode_b_input(&fit).unwrap();
    assert_eq!(b.n_present(), 60);
    assert_eq!(b.unit(), Unit::BGcPerDay);
    let sd = b.obs_sd().unwrap();
    assert!(sd[20] > sd[19] && sd[21] > sd[20] && sd[40] > sd[39]);
}
