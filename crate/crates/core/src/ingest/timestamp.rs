//! Minute-precision timestamps.
//!
//! The canonical form is `YYYY-MM-DDTHH:MM` (a space may replace the `T`).
//! Logs exported in the day-first 12-hour style, e.g. `03/05/2014 8:00pm`,
//! are accepted as well. Times are taken as logged; there is no timezone.

use chrono::{NaiveDate, NaiveDateTime, NaiveTime, Timelike};

pub const CANONICAL_FORMAT: &str = "%Y-%m-%dT%H:%M";

pub fn format_timestamp(ts: &NaiveDateTime) -> String {
    ts.format(CANONICAL_FORMAT).to_string()
}

/// Parses either accepted timestamp form. The error string explains which
/// component was out of range.
pub fn parse_timestamp(raw: &str) -> Result<NaiveDateTime, String> {
    let s = raw.trim();
    if s.contains('/') {
        parse_day_first(s)
    } else {
        parse_iso(s)
    }
}

fn number(part: &str, what: &str) -> Result<u32, String> {
    if part.is_empty() || !part.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("{what} {part:?} is not a number"));
    }
    part.parse().map_err(|_| format!("{what} {part:?} is not a number"))
}

fn build(year: i32, month: u32, day: u32, hour: u32, minute: u32) -> Result<NaiveDateTime, String> {
    if hour > 23 {
        return Err(format!("hour {hour} out of range 0-23"));
    }
    if minute > 59 {
        return Err(format!("minute {minute} out of range 0-59"));
    }
    let date = NaiveDate::from_ymd_opt(year, month, day)
        .ok_or_else(|| format!("{year:04}-{month:02}-{day:02} is not a calendar date"))?;
    let time = NaiveTime::from_hms_opt(hour, minute, 0).expect("validated above");
    Ok(date.and_time(time))
}

fn parse_iso(s: &str) -> Result<NaiveDateTime, String> {
    let (date, time) = s.split_once(['T', ' ']).ok_or_else(|| format!("expected YYYY-MM-DDTHH:MM, got {s:?}"))?;
    let mut date_parts = date.split('-');
    let (Some(y), Some(m), Some(d), None) =
        (date_parts.next(), date_parts.next(), date_parts.next(), date_parts.next())
    else {
        return Err(format!("expected YYYY-MM-DD date, got {date:?}"));
    };
    if y.len() != 4 {
        return Err(format!("year {y:?} must have four digits"));
    }
    let (hh, mm) = time.split_once(':').ok_or_else(|| format!("expected HH:MM time, got {time:?}"))?;
    build(number(y, "year")? as i32, number(m, "month")?, number(d, "day")?, number(hh, "hour")?, number(mm, "minute")?)
}

fn parse_day_first(s: &str) -> Result<NaiveDateTime, String> {
    let (date, time) = s.split_once(' ').ok_or_else(|| format!("expected dd/mm/yyyy h:mmam, got {s:?}"))?;
    let mut date_parts = date.split('/');
    let (Some(d), Some(m), Some(y), None) =
        (date_parts.next(), date_parts.next(), date_parts.next(), date_parts.next())
    else {
        return Err(format!("expected dd/mm/yyyy date, got {date:?}"));
    };
    if y.len() != 4 {
        return Err(format!("year {y:?} must have four digits"));
    }
    let time = time.trim().to_ascii_lowercase();
    let (clock, pm) = if let Some(rest) = time.strip_suffix("pm") {
        (rest.trim_end(), true)
    } else if let Some(rest) = time.strip_suffix("am") {
        (rest.trim_end(), false)
    } else {
        return Err(format!("expected am/pm suffix in {time:?}"));
    };
    let (hh, mm) = clock.split_once(':').ok_or_else(|| format!("expected h:mm time, got {clock:?}"))?;
    let hour12 = number(hh, "hour")?;
    if !(1..=12).contains(&hour12) {
        return Err(format!("hour {hour12} out of range 1-12"));
    }
    let hour = match (hour12, pm) {
        (12, false) => 0,
        (12, true) => 12,
        (h, false) => h,
        (h, true) => h + 12,
    };
    build(number(y, "year")? as i32, number(m, "month")?, number(d, "day")?, hour, number(mm, "minute")?)
}

/// Minutes since midnight.
pub fn minute_of_day(ts: &NaiveDateTime) -> u32 {
    ts.hour() * 60 + ts.minute()
}

/// Serde adapter writing [`CANONICAL_FORMAT`] and reading either form.
pub mod serde_minutes {
    use chrono::NaiveDateTime;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ts: &NaiveDateTime, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::format_timestamp(ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveDateTime, D::Error> {
        let raw = String::deserialize(d)?;
        super::parse_timestamp(&raw).map_err(D::Error::custom)
    }
}
