use std::fmt;
use std::str::FromStr;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::ingest::timestamp::minute_of_day;

/// Installed-app-count cohort relative to the population mean and
/// standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AppCountClass {
    Class1 = 1,
    Class2 = 2,
    Class3 = 3,
    Class4 = 4,
}

impl AppCountClass {
    pub const ALL: [AppCountClass; 4] =
        [AppCountClass::Class1, AppCountClass::Class2, AppCountClass::Class3, AppCountClass::Class4];

    pub fn name(self) -> &'static str {
        match self {
            AppCountClass::Class1 => "class1",
            AppCountClass::Class2 => "class2",
            AppCountClass::Class3 => "class3",
            AppCountClass::Class4 => "class4",
        }
    }
}

impl fmt::Display for AppCountClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AppCountClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "class1" => Ok(AppCountClass::Class1),
            "class2" => Ok(AppCountClass::Class2),
            "class3" => Ok(AppCountClass::Class3),
            "class4" => Ok(AppCountClass::Class4),
            _ => Err(format!("unknown app-count class {s:?}")),
        }
    }
}

/// Where the top class begins. The published class list leaves
/// `[mean+sd, mean+2sd)` unassigned; `Sigma` closes the gap by starting
/// class4 at mean+sd, `TwoSigma` by extending class3 up to mean+2sd.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Class4From {
    #[default]
    Sigma,
    #[serde(rename = "2sigma")]
    TwoSigma,
}

impl FromStr for Class4From {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sigma" => Ok(Class4From::Sigma),
            "2sigma" => Ok(Class4From::TwoSigma),
            other => Err(format!("expected sigma or 2sigma, got {other:?}")),
        }
    }
}

/// Mean and population standard deviation of app counts, plus the repair
/// mode for the class boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppClassifier {
    pub mean: f64,
    pub sd: f64,
    pub class4_from: Class4From,
}

impl AppClassifier {
    pub fn new(mean: f64, sd: f64, class4_from: Class4From) -> Self {
        AppClassifier { mean, sd, class4_from }
    }

    /// Population moments from integer counts. The sums are exact, so the
    /// result does not depend on the order of `counts`.
    pub fn from_counts<I: IntoIterator<Item = usize>>(counts: I, class4_from: Class4From) -> Self {
        let (mut n, mut sum, mut sum_sq) = (0u128, 0u128, 0u128);
        for c in counts {
            n += 1;
            sum += c as u128;
            sum_sq += (c as u128) * (c as u128);
        }
        if n == 0 {
            return AppClassifier::new(0.0, 0.0, class4_from);
        }
        let mean = sum as f64 / n as f64;
        // n * Σc² - (Σc)² is exact in integers
        let spread = (n * sum_sq - sum * sum) as f64;
        let sd = (spread / (n as f64 * n as f64)).sqrt();
        AppClassifier::new(mean, sd, class4_from)
    }

    /// Lower bounds of class2, class3 and class4, clamped at zero.
    pub fn boundaries(&self) -> [f64; 3] {
        let top = match self.class4_from {
            Class4From::Sigma => self.mean + self.sd,
            Class4From::TwoSigma => self.mean + 2.0 * self.sd,
        };
        [(self.mean - 2.0 * self.sd).max(0.0), (self.mean - self.sd).max(0.0), top.max(0.0)]
    }

    pub fn classify(&self, n_apps: usize) -> AppCountClass {
        app_count_class(n_apps, self.mean, self.sd, self.class4_from)
    }
}

/// Half-open, left-closed intervals; every user is class3 when `sd == 0`.
pub fn app_count_class(n_apps: usize, mean: f64, sd: f64, class4_from: Class4From) -> AppCountClass {
    if sd == 0.0 {
        return AppCountClass::Class3;
    }
    let [b2, b3, b4] = AppClassifier::new(mean, sd, class4_from).boundaries();
    let n = n_apps as f64;
    if n < b2 {
        AppCountClass::Class1
    } else if n < b3 {
        AppCountClass::Class2
    } else if n < b4 {
        AppCountClass::Class3
    } else {
        AppCountClass::Class4
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeOfDay {
    Night,
    Daytime,
    Evening,
}

impl TimeOfDay {
    pub const ALL: [TimeOfDay; 3] = [TimeOfDay::Night, TimeOfDay::Daytime, TimeOfDay::Evening];

    pub fn name(self) -> &'static str {
        match self {
            TimeOfDay::Night => "night",
            TimeOfDay::Daytime => "daytime",
            TimeOfDay::Evening => "evening",
        }
    }

    /// Minutes per day falling in this class.
    pub fn minutes(self) -> u32 {
        match self {
            TimeOfDay::Night => 8 * 60,
            TimeOfDay::Daytime => 11 * 60,
            TimeOfDay::Evening => 5 * 60,
        }
    }

    pub fn of_minute(minute_of_day: u32) -> TimeOfDay {
        match minute_of_day {
            m if m < 6 * 60 => TimeOfDay::Night,
            m if m < 17 * 60 => TimeOfDay::Daytime,
            m if m < 22 * 60 => TimeOfDay::Evening,
            _ => TimeOfDay::Night,
        }
    }
}

impl fmt::Display for TimeOfDay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TimeOfDay {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "night" => Ok(TimeOfDay::Night),
            "daytime" => Ok(TimeOfDay::Daytime),
            "evening" => Ok(TimeOfDay::Evening),
            _ => Err(format!("unknown time-of-day class {s:?}")),
        }
    }
}

pub fn time_of_day_class(ts: &NaiveDateTime) -> TimeOfDay {
    TimeOfDay::of_minute(minute_of_day(ts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::timestamp::parse_timestamp;

    #[test]
    fn low_app_user_is_class1() {
        assert_eq!(app_count_class(4, 20.0, 5.0, Class4From::Sigma), AppCountClass::Class1);
    }

    #[test]
    fn boundaries_are_left_closed() {
        assert_eq!(app_count_class(15, 20.0, 5.0, Class4From::Sigma), AppCountClass::Class3);
        assert_eq!(app_count_class(10, 20.0, 5.0, Class4From::Sigma), AppCountClass::Class2);
        assert_eq!(app_count_class(9, 20.0, 5.0, Class4From::Sigma), AppCountClass::Class1);
        assert_eq!(app_count_class(25, 20.0, 5.0, Class4From::Sigma), AppCountClass::Class4);
        assert_eq!(app_count_class(24, 20.0, 5.0, Class4From::Sigma), AppCountClass::Class3);
        assert_eq!(app_count_class(25, 20.0, 5.0, Class4From::TwoSigma), AppCountClass::Class3);
        assert_eq!(app_count_class(30, 20.0, 5.0, Class4From::TwoSigma), AppCountClass::Class4);
    }

    #[test]
    fn zero_sd_is_class3() {
        for n in [0, 5, 100] {
            assert_eq!(app_count_class(n, 5.0, 0.0, Class4From::Sigma), AppCountClass::Class3);
        }
    }

    #[test]
    fn negative_boundaries_clamp() {
        // mean 3, sd 4: class1 and class2 are empty
        assert_eq!(app_count_class(0, 3.0, 4.0, Class4From::Sigma), AppCountClass::Class3);
        assert_eq!(app_count_class(7, 3.0, 4.0, Class4From::Sigma), AppCountClass::Class4);
    }

    #[test]
    fn moments_from_counts() {
        let c = AppClassifier::from_counts([2, 4, 4, 4, 5, 5, 7, 9], Class4From::Sigma);
        assert_eq!(c.mean, 5.0);
        assert_eq!(c.sd, 2.0);
        assert_eq!(AppClassifier::from_counts([], Class4From::Sigma).sd, 0.0);
    }

    #[test]
    fn time_of_day_boundaries() {
        let t = |s: &str| time_of_day_class(&parse_timestamp(s).unwrap());
        assert_eq!(t("2014-06-21T02:18"), TimeOfDay::Night);
        assert_eq!(t("2014-06-21T06:00"), TimeOfDay::Daytime);
        assert_eq!(t("2014-06-21T05:59"), TimeOfDay::Night);
        assert_eq!(t("2014-06-21T16:59"), TimeOfDay::Daytime);
        assert_eq!(t("2014-06-21T17:00"), TimeOfDay::Evening);
        assert_eq!(t("2014-06-21T21:59"), TimeOfDay::Evening);
        assert_eq!(t("2014-06-21T22:00"), TimeOfDay::Night);
        assert_eq!(t("2014-06-21T23:59"), TimeOfDay::Night);
        assert_eq!(t("2014-05-05T16:03"), TimeOfDay::Daytime);
        assert_eq!(TimeOfDay::ALL.iter().map(|t| t.minutes()).sum::<u32>(), 24 * 60);
    }
}
