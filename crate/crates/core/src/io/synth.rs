//! Synthetic price and solar series.
//!
//! Prices follow a daily shape with a midday trough and an evening peak,
//! plus mean-reverting noise and occasional short spikes. Solar availability
//! is a clear-sky bell between sunrise and sunset; actual output is the
//! availability scaled by a persistent cloud factor in `[0, 1]`.

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::data::{MarketSeries, SolarTrace};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub start: NaiveDateTime,
    pub dt_hours: f64,
    pub p_solar_max: f64,
    /// Clear-sky peak as a fraction of the plant rating.
    pub solar_peak_frac: f64,
    pub sunrise_hour: f64,
    pub sunset_hour: f64,
    pub cloud_mean: f64,
    /// Per-interval persistence of the cloud factor.
    pub cloud_persistence: f64,
    pub cloud_sigma: f64,
    pub base_price: f64,
    pub midday_dip: f64,
    pub evening_peak: f64,
    pub morning_peak: f64,
    pub price_reversion: f64,
    pub price_sigma: f64,
    pub spikes_per_day: f64,
    pub spike_mean: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            start: NaiveDate::from_ymd_opt(2024, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap(),
            dt_hours: 5.0 / 60.0,
            p_solar_max: 65.0,
            solar_peak_frac: 0.6,
            sunrise_hour: 6.0,
            sunset_hour: 18.5,
            cloud_mean: 0.8,
            cloud_persistence: 0.97,
            cloud_sigma: 0.04,
            base_price: 70.0,
            midday_dip: 45.0,
            evening_peak: 80.0,
            morning_peak: 25.0,
            price_reversion: 0.08,
            price_sigma: 6.0,
            spikes_per_day: 0.3,
            spike_mean: 250.0,
        }
    }
}

fn bump(h: f64, centre: f64, width: f64) -> f64 {
    (-0.5 * ((h - centre) / width).powi(2)).exp()
}

/// Deterministic part of the price at fractional hour `h`.
pub fn price_shape(h: f64, p: &SynthParams) -> f64 {
    p.base_price - p.midday_dip * bump(h, 12.5, 2.5)
        + p.evening_peak * bump(h, 18.5, 1.5)
        + p.morning_peak * bump(h, 7.5, 1.0)
}

/// Clear-sky availability (MW) at fractional hour `h`.
pub fn clear_sky(h: f64, p: &SynthParams) -> f64 {
    if h <= p.sunrise_hour || h >= p.sunset_hour {
        return 0.0;
    }
    let x = (h - p.sunrise_hour) / (p.sunset_hour - p.sunrise_hour);
    p.p_solar_max * p.solar_peak_frac * (std::f64::consts::PI * x).sin().powf(1.2)
}

pub fn synth_generate(seed: u64, days: usize, p: &SynthParams) -> (MarketSeries, SolarTrace) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_day = (24.0 / p.dt_hours).round() as usize;
    let n = days * per_day;
    let step = Duration::seconds((p.dt_hours * 3600.0).round() as i64);
    let noise = Normal::new(0.0, p.price_sigma).expect("valid price sigma");
    let cloud_noise = Normal::new(0.0, p.cloud_sigma).expect("valid cloud sigma");
    let spike_prob = p.spikes_per_day / per_day as f64;

    let mut timestamps = Vec::with_capacity(n);
    let mut prices = Vec::with_capacity(n);
    let mut actual = Vec::with_capacity(n);
    let mut availability = Vec::with_capacity(n);
    let mut x = 0.0;
    let mut cloud = p.cloud_mean;
    let mut spike_left = 0usize;
    let mut spike_size = 0.0;
    for i in 0..n {
        let h = (i % per_day) as f64 * p.dt_hours;
        x = (1.0 - p.price_reversion) * x + noise.sample(&mut rng);
        if spike_left == 0 && rng.random::<f64>() < spike_prob {
            spike_left = rng.random_range(1..=6);
            spike_size = p.spike_mean * (0.5 + rng.random::<f64>());
        }
        let spike = if spike_left > 0 {
            spike_left -= 1;
            spike_size
        } else {
            0.0
        };
        cloud = (p.cloud_mean + p.cloud_persistence * (cloud - p.cloud_mean) + cloud_noise.sample(&mut rng))
            .clamp(0.0, 1.0);
        let avail = clear_sky(h, p);
        timestamps.push(p.start + step * i as i32);
        prices.push(price_shape(h, p) + x + spike);
        availability.push(avail);
        actual.push(avail * cloud);
    }
    (MarketSeries { timestamps: timestamps.clone(), prices }, SolarTrace { timestamps, actual, availability })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_seed_is_reproducible() {
        let p = SynthParams::default();
        assert_eq!(synth_generate(3, 2, &p), synth_generate(3, 2, &p));
        assert_ne!(synth_generate(3, 2, &p).0.prices, synth_generate(4, 2, &p).0.prices);
    }

    #[test]
    fn nights_are_dark_and_actual_within_availability() {
        let p = SynthParams::default();
        let (_, s) = synth_generate(1, 3, &p);
        assert_eq!(s.actual.len(), 864);
        for (i, (a, av)) in s.actual.iter().zip(&s.availability).enumerate() {
            let h = (i % 288) as f64 / 12.0;
            if !(6.0..=18.5).contains(&h) {
                assert_eq!(*av, 0.0);
            }
            assert!(*a >= 0.0 && a <= av && *av <= p.p_solar_max);
        }
    }

    #[test]
    fn evening_is_dearer_than_midday() {
        let p = SynthParams::default();
        let (m, _) = synth_generate(7, 30, &p);
        let mean_at = |lo: usize, hi: usize| {
            let v: Vec<f64> =
                m.prices.iter().enumerate().filter(|(i, _)| (lo..hi).contains(&(i % 288))).map(|(_, p)| *p).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean_at(17 * 12, 20 * 12) > mean_at(11 * 12, 14 * 12));
    }
}
