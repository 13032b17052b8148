//! Hourly time series and calendar windows.
//!
//! Timestamps are implicit: slot `i` of a [`TimeSeries`] sits at
//! `start + i` hours, UTC, with no daylight-saving handling.

use chrono::{DateTime, Duration, NaiveDate, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HOURS_PER_DAY: usize = 24;

/// Physical unit carried by a series. Powers are always kW internally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    Kw,
    DegC,
    WPerM2,
    M3PerH,
}

/// Hourly-stamped series with optional values (`None` = missing).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    start: DateTime<Utc>,
    values: Vec<Option<f64>>,
    unit: Unit,
}

impl TimeSeries {
    /// Builds a series; `start` must sit on the top of an hour.
    pub fn new(start: DateTime<Utc>, values: Vec<Option<f64>>, unit: Unit) -> Result<Self> {
        if start.minute() != 0 || start.second() != 0 || start.nanosecond() != 0 {
            return Err(Error::Input(format!("series start {start} is not on the hour")));
        }
        Ok(Self { start, values, unit })
    }

    /// Series with every slot present.
    pub fn from_dense(start: DateTime<Utc>, values: Vec<f64>, unit: Unit) -> Result<Self> {
        Self::new(start, values.into_iter().map(Some).collect(), unit)
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn get(&self, i: usize) -> Option<f64> {
        self.values.get(i).copied().flatten()
    }

    /// Exclusive end of the covered span.
    pub fn end(&self) -> DateTime<Utc> {
        self.start + Duration::hours(self.values.len() as i64)
    }

    pub fn timestamp(&self, i: usize) -> DateTime<Utc> {
        self.start + Duration::hours(i as i64)
    }

    /// Present values only, in order.
    pub fn present(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().filter_map(|v| *v)
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    /// Missing slots expressed in days (`missing / 24`).
    pub fn missing_days(&self) -> f64 {
        self.missing_count() as f64 / HOURS_PER_DAY as f64
    }

    /// Index of the slot holding `t`, if `t` is hour-aligned and inside the span.
    pub fn index_of(&self, t: DateTime<Utc>) -> Option<usize> {
        let hours = (t - self.start).num_hours();
        if hours < 0 || t != self.start + Duration::hours(hours) {
            return None;
        }
        let i = hours as usize;
        (i < self.values.len()).then_some(i)
    }

    /// Same timestamps and unit, new values.
    pub fn with_values(&self, values: Vec<Option<f64>>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::DimensionMismatch { expected: self.values.len(), got: values.len() });
        }
        Ok(Self { start: self.start, values, unit: self.unit })
    }

    /// Extracts the slots covered by `window`.
    pub fn slice(&self, window: &CalendarWindow) -> Result<Self> {
        let from = window.start();
        let offset = (from - self.start).num_hours();
        let len = window.slots();
        if offset < 0 || offset as usize + len > self.values.len() {
            return Err(Error::Range(format!(
                "window {}+{}d outside series span {}..{}",
                window.start_date,
                window.length_days,
                self.start,
                self.end()
            )));
        }
        let offset = offset as usize;
        Ok(Self { start: from, values: self.values[offset..offset + len].to_vec(), unit: self.unit })
    }

    /// Per-calendar-day mean of present slots; a fully missing day yields `None`.
    pub fn daily_mean(&self) -> Vec<(NaiveDate, Option<f64>)> {
        let mut out: Vec<(NaiveDate, f64, usize)> = Vec::new();
        for (i, v) in self.values.iter().enumerate() {
            let day = self.timestamp(i).date_naive();
            if out.last().map(|(d, _, _)| *d != day).unwrap_or(true) {
                out.push((day, 0.0, 0));
            }
            if let Some(x) = v {
                let last = out.last_mut().expect("pushed above");
                last.1 += x;
                last.2 += 1;
            }
        }
        out.into_iter()
            .map(|(d, sum, n)| (d, (n > 0).then(|| sum / n as f64)))
            .collect()
    }
}

/// A run of whole days starting at midnight UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CalendarWindow {
    pub start_date: NaiveDate,
    pub length_days: u32,
}

impl CalendarWindow {
    pub fn new(start_date: NaiveDate, length_days: u32) -> Result<Self> {
        if length_days == 0 {
            return Err(Error::Input("window length must be positive".into()));
        }
        Ok(Self { start_date, length_days })
    }

    pub fn weekly(start_date: NaiveDate) -> Self {
        Self { start_date, length_days: 7 }
    }

    pub fn slots(&self) -> usize {
        self.length_days as usize * HOURS_PER_DAY
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start_date.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc()
    }

    /// Last date covered (inclusive).
    pub fn last_date(&self) -> NaiveDate {
        self.start_date + Duration::days(self.length_days as i64 - 1)
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        (0..self.length_days as i64).map(move |d| self.start_date + Duration::days(d))
    }

    pub fn contains_date(&self, d: NaiveDate) -> bool {
        d >= self.start_date && d <= self.last_date()
    }
}

/// Heating season with inclusive date bounds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeatingSeason {
    pub label: String,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
}

impl HeatingSeason {
    pub fn new(label: impl Into<String>, start_date: NaiveDate, end_date: NaiveDate) -> Result<Self> {
        if start_date >= end_date {
            return Err(Error::Input(format!("season starts {start_date} after it ends {end_date}")));
        }
        Ok(Self { label: label.into(), start_date, end_date })
    }

    pub fn contains_date(&self, d: NaiveDate) -> bool {
        d >= self.start_date && d <= self.end_date
    }

    pub fn contains_window(&self, w: &CalendarWindow) -> bool {
        self.contains_date(w.start_date) && self.contains_date(w.last_date())
    }

    /// Oct 1 – May 31 seasons overlapping `[from, to]`.
    pub fn default_seasons(from: NaiveDate, to: NaiveDate) -> Vec<HeatingSeason> {
        use chrono::Datelike;
        (from.year() - 1..=to.year())
            .filter_map(|y| {
                let s = NaiveDate::from_ymd_opt(y, 10, 1)?;
                let e = NaiveDate::from_ymd_opt(y + 1, 5, 31)?;
                (e >= from && s <= to).then(|| HeatingSeason {
                    label: format!("{}-{}", y, y + 1),
                    start_date: s,
                    end_date: e,
                })
            })
            .collect()
    }
}

/// Checks that seasons are individually valid and pairwise disjoint.
pub fn validate_seasons(seasons: &[HeatingSeason]) -> Result<()> {
    for s in seasons {
        if s.start_date >= s.end_date {
            return Err(Error::Input(format!("season {} is empty", s.label)));
        }
    }
    for (i, a) in seasons.iter().enumerate() {
        for b in &seasons[i + 1..] {
            if a.start_date <= b.end_date && b.start_date <= a.end_date {
                return Err(Error::Input(format!("seasons {} and {} overlap", a.label, b.label)));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t0() -> DateTime<Utc> {
        NaiveDate::from_ymd_opt(2021, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap().and_utc()
    }

    fn date(m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2021, m, d).unwrap()
    }

    #[test]
    fn slice_all_ones_year() {
        let s = TimeSeries::from_dense(t0(), vec![1.0; 365 * 24], Unit::Kw).unwrap();
        let w = s.slice(&CalendarWindow::weekly(date(3, 1))).unwrap();
        assert_eq!(w.len(), 168);
        assert!(w.values().iter().all(|v| *v == Some(1.0)));
        assert_eq!(w.start(), CalendarWindow::weekly(date(3, 1)).start());
    }

    #[test]
    fn slice_before_start_is_range_error() {
        let s = TimeSeries::from_dense(t0(), vec![1.0; 30 * 24], Unit::Kw).unwrap();
        let w = CalendarWindow::weekly(NaiveDate::from_ymd_opt(2020, 12, 30).unwrap());
        assert!(matches!(s.slice(&w), Err(Error::Range(_))));
        let past_end = CalendarWindow::weekly(date(1, 25));
        assert!(matches!(s.slice(&past_end), Err(Error::Range(_))));
    }

    #[test]
    fn slice_keeps_missing_offsets() {
        let mut v = vec![Some(2.0); 30 * 24];
        // window starts on day 3 (offset 72); plant gaps at window offsets 5, 50, 167
        for off in [5usize, 50, 167] {
            v[72 + off] = None;
        }
        v[10] = None; // outside window
        let s = TimeSeries::new(t0(), v, Unit::Kw).unwrap();
        let w = s.slice(&CalendarWindow::weekly(date(1, 4))).unwrap();
        let missing: Vec<usize> =
            w.values().iter().enumerate().filter(|(_, v)| v.is_none()).map(|(i, _)| i).collect();
        assert_eq!(missing, vec![5, 50, 167]);
    }

    #[test]
    fn missing_days_arithmetic() {
        let mk = |k: usize| {
            let v = (0..100).map(|i| if i < k { None } else { Some(1.0) }).collect();
            TimeSeries::new(t0(), v, Unit::Kw).unwrap()
        };
        assert_eq!(mk(0).missing_days(), 0.0);
        assert_eq!(mk(24).missing_days(), 1.0);
        assert_eq!(mk(30).missing_days(), 1.25);
    }

    #[test]
    fn daily_mean_cases() {
        let s = TimeSeries::from_dense(t0(), vec![2.0; 72], Unit::Kw).unwrap();
        assert!(s.daily_mean().iter().all(|(_, m)| *m == Some(2.0)));

        let mut v: Vec<Option<f64>> = (0..24).map(|h| Some(if h < 12 { 0.0 } else { 4.0 })).collect();
        v.extend(std::iter::repeat_n(None, 24));
        let s = TimeSeries::new(t0(), v, Unit::Kw).unwrap();
        let dm = s.daily_mean();
        assert_eq!(dm, vec![(date(1, 1), Some(2.0)), (date(1, 2), None)]);
    }

    #[test]
    fn default_seasons_cover_winter() {
        let seasons = HeatingSeason::default_seasons(date(1, 4), date(3, 7));
        assert_eq!(seasons.len(), 1);
        assert_eq!(seasons[0].label, "2020-2021");
        validate_seasons(&seasons).unwrap();
        assert!(HeatingSeason::new("x", date(3, 1), date(2, 1)).is_err());
    }

    fn arb_series() -> impl Strategy<Value = TimeSeries> {
        (14usize..=21)
            .prop_flat_map(|days| proptest::collection::vec(proptest::option::weighted(0.8, 0.0f64..10.0), days * 24))
            .prop_map(|v| TimeSeries::new(t0(), v, Unit::Kw).unwrap())
    }

    proptest! {
        #[test]
        fn slice_missing_matches_brute_force(s in arb_series(), start_day in 0i64..7) {
            let w = CalendarWindow::weekly(date(1, 1) + Duration::days(start_day));
            let sliced = s.slice(&w).unwrap();
            let lo = start_day as usize * 24;
            let brute = s.values()[lo..lo + 168].iter().filter(|v| v.is_none()).count();
            prop_assert_eq!(sliced.missing_days(), brute as f64 / 24.0);
        }

        #[test]
        fn daily_mean_equals_per_day_slices(s in arb_series()) {
            let whole = s.daily_mean();
            for (d, m) in &whole {
                let day = s.slice(&CalendarWindow::new(*d, 1).unwrap()).unwrap();
                let part = day.daily_mean();
                prop_assert_eq!(part.len(), 1);
                prop_assert_eq!(part[0].1, *m);
            }
        }
    }
}
