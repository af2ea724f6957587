use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const PRICE_HEADER: &str = "timestamp,price_eur_mwh";
const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Hourly electricity prices [EUR/MWh].
#[derive(Clone, Debug, PartialEq)]
pub struct PriceSeries {
    pub start: NaiveDateTime,
    pub prices: Vec<f64>,
}

impl PriceSeries {
    pub fn new(start: NaiveDateTime, prices: Vec<f64>) -> Result<Self> {
        if prices.is_empty() {
            return Err(Error::InvalidArgument("price series must not be empty".into()));
        }
        if !prices.iter().all(|p| p.is_finite()) {
            return Err(Error::NonFinite("price series"));
        }
        Ok(Self { start, prices })
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.prices.iter().sum::<f64>() / self.len() as f64
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.prices.iter().map(|p| (p - m) * (p - m)).sum::<f64>() / self.len() as f64
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }

    /// `len` hourly prices starting at hour index `hour`.
    pub fn forecast(&self, hour: usize, len: usize) -> Result<&[f64]> {
        if hour + len > self.len() {
            return Err(Error::InvalidArgument(format!(
                "forecast window [{hour}, {}) exceeds the series length {}",
                hour + len,
                self.len()
            )));
        }
        Ok(&self.prices[hour..hour + len])
    }

    pub fn to_csv(&self, config_hash: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(h) = config_hash {
            let _ = writeln!(out, "# config_hash: {h}");
        }
        let _ = writeln!(out, "{PRICE_HEADER}");
        for (i, p) in self.prices.iter().enumerate() {
            let ts = self.start + Duration::hours(i as i64);
            let _ = writeln!(out, "{},{}", ts.format(TIMESTAMP_FORMAT), p);
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>, config_hash: Option<&str>) -> Result<()> {
        fs::write(path, self.to_csv(config_hash))?;
        Ok(())
    }

    /// Parses the price CSV format. Lines starting with `#` are comments.
    /// Timestamps must be hourly and contiguous.
    pub fn parse(text: &str) -> Result<Self> {
        let mut header_seen = false;
        let mut start = None;
        let mut prices = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse { line: line_no, message };
            if !header_seen {
                if line != PRICE_HEADER {
                    return Err(err(format!("expected header `{PRICE_HEADER}`")));
                }
                header_seen = true;
                continue;
            }
            let (ts, price) = line
                .split_once(',')
                .ok_or_else(|| err("expected `timestamp,price`".into()))?;
            let ts = parse_timestamp(ts.trim()).ok_or_else(|| err(format!("bad timestamp `{ts}`")))?;
            let price: f64 = price
                .trim()
                .parse()
                .map_err(|_| err(format!("bad price `{}`", price.trim())))?;
            if !price.is_finite() {
                return Err(err("price must be finite".into()));
            }
            let start_ts = *start.get_or_insert(ts);
            let expected = start_ts + Duration::hours(prices.len() as i64);
            if ts != expected {
                return Err(err(format!("timestamp {ts} breaks the hourly cadence (expected {expected})")));
            }
            prices.push(price);
        }
        if !header_seen {
            return Err(Error::Parse {
                line: 1,
                message: "missing header".into(),
            });
        }
        let start = start.ok_or(Error::Parse {
            line: 2,
            message: "no price rows".into(),
        })?;
        Self::new(start, prices)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// A year of hourly prices with daily, weekly and seasonal patterns,
    /// autocorrelated noise and occasional spikes.
    pub fn synthetic_year(year: i32, seed: u64) -> Self {
        let start = NaiveDate::from_ymd_opt(year, 1, 1)
            .and_then(|d| d.and_hms_opt(0, 0, 0))
            .unwrap_or_default();
        let next = NaiveDate::from_ymd_opt(year + 1, 1, 1)
            .and_then(|d| d.and_hms_opt(0, 0, 0))
            .unwrap_or_default();
        let hours = (next - start).num_hours().max(24) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 6.0).expect("valid normal");
        let mut ar = 0.0;
        let prices = (0..hours)
            .map(|i| {
                let ts = start + Duration::hours(i as i64);
                let h = ts.hour() as f64;
                let day = ts.ordinal0() as f64;
                let weekend = ts.weekday().number_from_monday() >= 6;
                let tau = std::f64::consts::TAU;
                let daily = 18.0 * (-((h - 8.0) / 2.5).powi(2)).exp()
                    + 24.0 * (-((h - 19.0) / 2.5).powi(2)).exp()
                    - 22.0 * (-((h - 13.0) / 2.5).powi(2)).exp()
                    - 12.0 * (-((h - 3.0) / 3.0).powi(2)).exp();
                let seasonal = 15.0 * (tau * (day + 15.0) / 365.0).cos();
                ar = 0.9 * ar + noise.sample(&mut rng);
                let spike = if rng.random::<f64>() < 0.005 {
                    rng.random_range(40.0..120.0)
                } else {
                    0.0
                };
                let base = if weekend { 78.0 } else { 95.0 };
                (base + daily + seasonal + ar + spike).max(-20.0)
            })
            .collect();
        Self { start, prices }
    }
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
        .ok()
        .or_else(|| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M").ok())
        .or_else(|| chrono::DateTime::parse_from_rfc3339(s).ok().map(|d| d.naive_utc()))
}

/// Generates `length` hourly prices from a reference series by resampling
/// whole days, adding noise, and mapping the result affinely onto the
/// reference mean and standard deviation. A constant reference yields a
/// constant series.
pub fn gen_prices(reference: &PriceSeries, length: usize, seed: u64) -> Result<PriceSeries> {
    if length == 0 {
        return Err(Error::InvalidArgument("generated series length must be positive".into()));
    }
    let mean = reference.mean();
    let std = reference.std();
    let start = reference.start + Duration::hours(reference.len() as i64);
    if std == 0.0 {
        return PriceSeries::new(start, vec![reference.prices[0]; length]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block = 24.min(reference.len());
    let n_blocks = reference.len() / block;
    let noise = Normal::new(0.0, 0.15 * std).expect("valid normal");
    let mut raw = Vec::with_capacity(length);
    while raw.len() < length {
        let b = rng.random_range(0..n_blocks);
        for k in 0..block {
            if raw.len() == length {
                break;
            }
            raw.push(reference.prices[b * block + k] + noise.sample(&mut rng));
        }
    }
    let n = raw.len() as f64;
    let m = raw.iter().sum::<f64>() / n;
    let s = (raw.iter().map(|p| (p - m) * (p - m)).sum::<f64>() / n).sqrt();
    let prices = if s > 0.0 {
        raw.iter().map(|p| mean + (p - m) * std / s).collect()
    } else {
        vec![mean; length]
    };
    PriceSeries::new(start, prices)
}

/// Hourly forecast expanded to control steps. Step `k` starts
/// `minute_in_hour + k·dt` minutes after the first forecast hour; steps past
/// the last forecast hour reuse it.
pub fn expand_forecast(hourly: &[f64], minute_in_hour: f64, n_steps: usize, dt_minutes: f64) -> Vec<f64> {
    (0..n_steps)
        .map(|k| {
            let h = ((minute_in_hour + k as f64 * dt_minutes) / 60.0).floor() as usize;
            hourly[h.min(hourly.len() - 1)]
        })
        .collect()
}
