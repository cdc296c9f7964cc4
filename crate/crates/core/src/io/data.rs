//! Market and solar CSV ingestion.
//!
//! Market files carry `timestamp,price_aud_per_mwh`, solar files
//! `timestamp,actual_mw,availability_mw`. Timestamps are ISO-8601 in UTC,
//! either RFC 3339 (`2024-01-01T00:05:00Z`) or naive (`2024-01-01T00:05:00`).
//! Rows must be spaced exactly one interval apart; a single missing interval
//! is filled by linear interpolation, longer gaps are rejected.

use std::path::Path;

use chrono::{DateTime, Duration, NaiveDateTime, Timelike};
use log::warn;

use crate::env::Interval;
use crate::{Error, Result};

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

#[derive(Debug, Clone, PartialEq)]
pub struct MarketSeries {
    pub timestamps: Vec<NaiveDateTime>,
    pub prices: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolarTrace {
    pub timestamps: Vec<NaiveDateTime>,
    pub actual: Vec<f64>,
    pub availability: Vec<f64>,
}

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc());
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

pub fn format_timestamp(t: &NaiveDateTime) -> String {
    t.format(TIMESTAMP_FORMAT).to_string()
}

fn malformed(path: &Path, line: u64, reason: impl Into<String>) -> Error {
    Error::MalformedRow { path: path.to_path_buf(), line, reason: reason.into() }
}

/// Reads rows of a timestamp followed by `columns.len()` numbers, checking
/// the header and the spacing and filling single missing intervals.
fn read_table(path: &Path, columns: &[&str], step: Duration) -> Result<(Vec<NaiveDateTime>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let expected: Vec<&str> = std::iter::once("timestamp").chain(columns.iter().copied()).collect();
    if header != expected {
        return Err(malformed(path, 1, format!("header {header:?}, expected {expected:?}")));
    }
    let mut times: Vec<NaiveDateTime> = Vec::new();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); columns.len()];
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| malformed(path, line, e.to_string()))?;
        if rec.len() != expected.len() {
            return Err(malformed(path, line, format!("{} fields, expected {}", rec.len(), expected.len())));
        }
        let t =
            parse_timestamp(&rec[0]).ok_or_else(|| malformed(path, line, format!("bad timestamp {:?}", &rec[0])))?;
        let mut values = Vec::with_capacity(columns.len());
        for (k, name) in columns.iter().enumerate() {
            let v: f64 = rec[k + 1]
                .parse()
                .map_err(|_| malformed(path, line, format!("{name} {:?} is not a number", &rec[k + 1])))?;
            if !v.is_finite() {
                return Err(malformed(path, line, format!("{name} is not finite")));
            }
            values.push(v);
        }
        if let Some(&prev) = times.last() {
            let gap = t - prev;
            if gap == step {
            } else if gap == step * 2 {
                warn!("{}: interval {} missing, interpolated", path.display(), format_timestamp(&(prev + step)));
                times.push(prev + step);
                for (k, c) in cols.iter_mut().enumerate() {
                    let last = *c.last().expect("column has a previous value");
                    c.push(0.5 * (last + values[k]));
                }
            } else if gap > step && gap.num_seconds() % step.num_seconds() == 0 {
                return Err(Error::GapTooLarge {
                    path: path.to_path_buf(),
                    after: format_timestamp(&prev),
                    missing: gap.num_seconds() / step.num_seconds() - 1,
                });
            } else {
                return Err(malformed(
                    path,
                    line,
                    format!("timestamp {} is not one interval after {}", format_timestamp(&t), format_timestamp(&prev)),
                ));
            }
        }
        times.push(t);
        for (c, v) in cols.iter_mut().zip(values) {
            c.push(v);
        }
    }
    Ok((times, cols))
}

fn step_of(dt_hours: f64) -> Duration {
    Duration::seconds((dt_hours * 3600.0).round() as i64)
}

pub fn load_market_csv(path: &Path, dt_hours: f64) -> Result<MarketSeries> {
    let (timestamps, mut cols) = read_table(path, &["price_aud_per_mwh"], step_of(dt_hours))?;
    Ok(MarketSeries { timestamps, prices: cols.remove(0) })
}

/// Loads a solar trace. Negative readings are rejected; actual generation
/// above availability, and availability above the plant rating, are clipped
/// with a warning.
pub fn load_solar_csv(path: &Path, dt_hours: f64, p_solar_max: f64) -> Result<SolarTrace> {
    let (timestamps, mut cols) = read_table(path, &["actual_mw", "availability_mw"], step_of(dt_hours))?;
    let mut availability = cols.pop().expect("two columns");
    let mut actual = cols.pop().expect("two columns");
    for (i, (a, av)) in actual.iter_mut().zip(availability.iter_mut()).enumerate() {
        if *a < 0.0 || *av < 0.0 {
            return Err(malformed(path, i as u64 + 2, "negative generation"));
        }
        if *av > p_solar_max {
            warn!("{}: availability {av} MW above rating at row {}, clipped", path.display(), i + 2);
            *av = p_solar_max;
        }
        if *a > *av {
            warn!("{}: actual {a} MW above availability {av} MW at row {}, clipped", path.display(), i + 2);
            *a = *av;
        }
    }
    Ok(SolarTrace { timestamps, actual, availability })
}

pub fn write_market_csv(path: &Path, m: &MarketSeries) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["timestamp", "price_aud_per_mwh"])?;
    for (t, p) in m.timestamps.iter().zip(&m.prices) {
        w.write_record([format_timestamp(t), p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_solar_csv(path: &Path, s: &SolarTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["timestamp", "actual_mw", "availability_mw"])?;
    for ((t, a), av) in s.timestamps.iter().zip(&s.actual).zip(&s.availability) {
        w.write_record([format_timestamp(t), a.to_string(), av.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Joins the two series into environment intervals.
pub fn align(market: &MarketSeries, solar: &SolarTrace) -> Result<Vec<Interval>> {
    if market.timestamps.len() != solar.timestamps.len() {
        return Err(Error::MisalignedSeries(format!(
            "{} market rows vs {} solar rows",
            market.timestamps.len(),
            solar.timestamps.len()
        )));
    }
    if let Some(i) = market.timestamps.iter().zip(&solar.timestamps).position(|(a, b)| a != b) {
        return Err(Error::MisalignedSeries(format!(
            "row {}: market at {} but solar at {}",
            i + 2,
            format_timestamp(&market.timestamps[i]),
            format_timestamp(&solar.timestamps[i])
        )));
    }
    Ok(market
        .timestamps
        .iter()
        .enumerate()
        .map(|(i, t)| Interval {
            price: market.prices[i],
            p_avail: solar.availability[i],
            p_actual: solar.actual[i],
            hour: t.hour() as u8,
        })
        .collect())
}
