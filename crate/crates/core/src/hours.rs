//! UTC hour arithmetic. Times are whole hours since 1970-01-01T00:00Z.

use std::fmt;

use chrono::{DateTime, Datelike, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

pub type EpochHour = i64;

/// Half-open range of hours `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HourRange {
    pub start: EpochHour,
    pub end: EpochHour,
}

impl HourRange {
    pub fn new(start: EpochHour, end: EpochHour) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        (self.end - self.start).max(0) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, t: EpochHour) -> bool {
        t >= self.start && t < self.end
    }

    pub fn intersect(&self, other: &HourRange) -> HourRange {
        HourRange {
            start: self.start.max(other.start),
            end: self.end.min(other.end).max(self.start.max(other.start)),
        }
    }

    pub fn covers(&self, other: &HourRange) -> bool {
        other.is_empty() || (other.start >= self.start && other.end <= self.end)
    }

    /// Every `stride`-th hour starting at `start`.
    pub fn stepped(&self, stride: usize) -> impl Iterator<Item = EpochHour> {
        (self.start..self.end).step_by(stride.max(1))
    }

    /// All hours of calendar years `first..=last`.
    pub fn years(first: i32, last: i32) -> Self {
        Self {
            start: year_start(first),
            end: year_start(last + 1),
        }
    }
}

impl fmt::Display for HourRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", format_hour(self.start), format_hour(self.end))
    }
}

pub fn from_ymdh(year: i32, month: u32, day: u32, hour: u32) -> EpochHour {
    let date = NaiveDate::from_ymd_opt(year, month, day).expect("valid calendar date");
    let dt = date.and_hms_opt(hour, 0, 0).expect("valid hour").and_utc();
    dt.timestamp() / 3600
}

pub fn year_start(year: i32) -> EpochHour {
    from_ymdh(year, 1, 1, 0)
}

fn datetime(t: EpochHour) -> DateTime<Utc> {
    DateTime::from_timestamp(t * 3600, 0).expect("hour within chrono range")
}

/// Calendar (year, month) containing hour `t`.
pub fn year_month(t: EpochHour) -> (i32, u32) {
    let d = datetime(t);
    (d.year(), d.month())
}

/// First hour of the calendar month after the one containing `t`.
pub fn next_month_start(t: EpochHour) -> EpochHour {
    let (y, m) = year_month(t);
    if m == 12 {
        from_ymdh(y + 1, 1, 1, 0)
    } else {
        from_ymdh(y, m + 1, 1, 0)
    }
}

/// Splits `range` at calendar-month boundaries.
pub fn month_spans(range: HourRange) -> Vec<HourRange> {
    let mut out = Vec::new();
    let mut t = range.start;
    while t < range.end {
        let end = next_month_start(t).min(range.end);
        out.push(HourRange::new(t, end));
        t = end;
    }
    out
}

pub fn format_hour(t: EpochHour) -> String {
    datetime(t).format("%Y-%m-%dT%HZ").to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn year_boundaries() {
        let r = HourRange::years(2001, 2018);
        assert_eq!(format_hour(r.end - 1), "2018-12-31T23Z");
        assert_eq!(format_hour(year_start(2019)), "2019-01-01T00Z");
        assert_eq!(HourRange::years(2020, 2020).len(), 366 * 24);
    }

    #[test]
    fn months_split() {
        let r = HourRange::new(from_ymdh(2001, 1, 30, 5), from_ymdh(2001, 3, 2, 0));
        let spans = month_spans(r);
        assert_eq!(spans.len(), 3);
        assert_eq!(
            spans[1],
            HourRange::new(from_ymdh(2001, 2, 1, 0), from_ymdh(2001, 3, 1, 0))
        );
        assert_eq!(spans.iter().map(|s| s.len()).sum::<usize>(), r.len());
    }
}
