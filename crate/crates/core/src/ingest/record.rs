use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Read};
use std::str::FromStr;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::stage::Stage;
use super::timestamp::{format_timestamp, parse_timestamp};

/// One parsed log event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionRecord {
    pub user: String,
    pub apps: BTreeSet<String>,
    pub timestamp: NaiveDateTime,
    pub stage: Stage,
    pub advert: String,
    pub publisher: String,
    pub site: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogFormat {
    Jsonl,
    Csv,
}

impl FromStr for LogFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(LogFormat::Jsonl),
            "csv" => Ok(LogFormat::Csv),
            other => Err(format!("unknown log format {other:?} (expected jsonl or csv)")),
        }
    }
}

impl fmt::Display for LogFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LogFormat::Jsonl => "jsonl",
            LogFormat::Csv => "csv",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseErrorKind {
    #[error("malformed line: {0}")]
    MalformedLine(String),
    #[error("invalid timestamp {value:?}: {reason}")]
    InvalidTimestamp { value: String, reason: String },
    #[error("unknown stage {0:?}")]
    UnknownStage(String),
    #[error("empty user id")]
    EmptyUserId,
    #[error("empty advert id")]
    EmptyAdvert,
    #[error("timestamp {0} outside the study window")]
    OutsideWindow(String),
}

/// A rejected line, located by 1-based line number and field name.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}, field `{field}`: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub field: &'static str,
    pub kind: ParseErrorKind,
}

impl ParseError {
    fn new(line: usize, field: &'static str, kind: ParseErrorKind) -> Self {
        ParseError { line, field, kind }
    }
}

/// Inclusive bounds on accepted timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyWindow {
    #[serde(with = "super::timestamp::serde_minutes")]
    pub start: NaiveDateTime,
    #[serde(with = "super::timestamp::serde_minutes")]
    pub end: NaiveDateTime,
}

impl StudyWindow {
    pub fn contains(&self, ts: &NaiveDateTime) -> bool {
        *ts >= self.start && *ts <= self.end
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    /// Skip and count malformed lines instead of failing on the first one.
    pub lenient: bool,
    pub window: Option<StudyWindow>,
}

/// Line counts from one pass over a log.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub records: usize,
    pub skipped: usize,
}

impl IngestStats {
    pub fn absorb(&mut self, other: &IngestStats) {
        self.records += other.records;
        self.skipped += other.skipped;
    }
}

#[derive(Debug, Deserialize, Serialize)]
pub(crate) struct JsonRecord {
    pub user: String,
    #[serde(default)]
    pub apps: Vec<String>,
    pub ts: String,
    pub stage: String,
    pub advert: String,
    #[serde(default)]
    pub publisher: String,
    #[serde(default)]
    pub site: String,
}

impl InteractionRecord {
    pub(crate) fn to_json_record(&self) -> JsonRecord {
        JsonRecord {
            user: self.user.clone(),
            apps: self.apps.iter().cloned().collect(),
            ts: format_timestamp(&self.timestamp),
            stage: self.stage.name().to_string(),
            advert: self.advert.clone(),
            publisher: self.publisher.clone(),
            site: self.site.clone(),
        }
    }

    /// Serializes to one line of the JSONL log schema (no trailing newline).
    pub fn to_jsonl(&self) -> String {
        serde_json::to_string(&self.to_json_record()).expect("record serializes")
    }

    /// Serializes to one CSV row in column order, apps pipe-delimited.
    pub fn to_csv_row(&self) -> String {
        let apps = self.apps.iter().map(String::as_str).collect::<Vec<_>>().join("|");
        let fields = [
            self.user.as_str(),
            apps.as_str(),
            &format_timestamp(&self.timestamp),
            self.stage.name(),
            self.advert.as_str(),
            self.publisher.as_str(),
            self.site.as_str(),
        ];
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(fields).expect("in-memory write");
        let mut bytes = w.into_inner().expect("in-memory flush");
        while bytes.last() == Some(&b'\n') || bytes.last() == Some(&b'\r') {
            bytes.pop();
        }
        String::from_utf8(bytes).expect("csv of utf-8 is utf-8")
    }
}

pub const CSV_HEADER: &str = "user,apps,ts,stage,advert,publisher,site";

const CSV_COLUMNS: [&[&str]; 7] = [
    &["user", "userid"],
    &["apps", "applist"],
    &["ts", "timestamp", "date"],
    &["stage", "interaction"],
    &["advert"],
    &["publisher"],
    &["site", "publishersite"],
];

#[allow(clippy::too_many_arguments)]
fn build_record(
    line: usize,
    user: &str,
    apps: impl IntoIterator<Item = String>,
    ts: &str,
    stage: &str,
    advert: &str,
    publisher: &str,
    site: &str,
    opts: &ParseOptions,
) -> Result<InteractionRecord, ParseError> {
    let user = user.trim();
    if user.is_empty() {
        return Err(ParseError::new(line, "user", ParseErrorKind::EmptyUserId));
    }
    let advert = advert.trim();
    if advert.is_empty() {
        return Err(ParseError::new(line, "advert", ParseErrorKind::EmptyAdvert));
    }
    let timestamp = parse_timestamp(ts).map_err(|reason| {
        ParseError::new(line, "ts", ParseErrorKind::InvalidTimestamp { value: ts.to_string(), reason })
    })?;
    if let Some(window) = &opts.window {
        if !window.contains(&timestamp) {
            return Err(ParseError::new(line, "ts", ParseErrorKind::OutsideWindow(format_timestamp(&timestamp))));
        }
    }
    let stage =
        stage.parse::<Stage>().map_err(|e| ParseError::new(line, "stage", ParseErrorKind::UnknownStage(e.0)))?;
    let apps = apps.into_iter().map(|a| a.trim().to_string()).filter(|a| !a.is_empty()).collect();
    Ok(InteractionRecord {
        user: user.to_string(),
        apps,
        timestamp,
        stage,
        advert: advert.to_string(),
        publisher: publisher.trim().to_string(),
        site: site.trim().to_string(),
    })
}

fn parse_json_line(line_no: usize, line: &str, opts: &ParseOptions) -> Result<InteractionRecord, ParseError> {
    let raw: JsonRecord = serde_json::from_str(line)
        .map_err(|e| ParseError::new(line_no, "line", ParseErrorKind::MalformedLine(e.to_string())))?;
    build_record(line_no, &raw.user, raw.apps, &raw.ts, &raw.stage, &raw.advert, &raw.publisher, &raw.site, opts)
}

fn parse_csv_fields(
    line_no: usize,
    fields: &csv::StringRecord,
    opts: &ParseOptions,
) -> Result<InteractionRecord, ParseError> {
    if fields.len() != 7 {
        return Err(ParseError::new(
            line_no,
            "line",
            ParseErrorKind::MalformedLine(format!("expected 7 columns, found {}", fields.len())),
        ));
    }
    let apps = fields[1].split('|').map(str::to_string);
    build_record(line_no, &fields[0], apps, &fields[2], &fields[3], &fields[4], &fields[5], &fields[6], opts)
}

/// Parses a single logical record. `line_no` is only used for error
/// locations. CSV input here is a data row, not the header.
pub fn parse_record(line: &str, format: LogFormat, line_no: usize) -> Result<InteractionRecord, ParseError> {
    parse_record_with(line, format, line_no, &ParseOptions::default())
}

pub fn parse_record_with(
    line: &str,
    format: LogFormat,
    line_no: usize,
    opts: &ParseOptions,
) -> Result<InteractionRecord, ParseError> {
    match format {
        LogFormat::Jsonl => parse_json_line(line_no, line, opts),
        LogFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(line.as_bytes());
            let mut fields = csv::StringRecord::new();
            match reader.read_record(&mut fields) {
                Ok(true) => parse_csv_fields(line_no, &fields, opts),
                Ok(false) => Err(ParseError::new(line_no, "line", ParseErrorKind::MalformedLine("empty line".into()))),
                Err(e) => Err(ParseError::new(line_no, "line", ParseErrorKind::MalformedLine(e.to_string()))),
            }
        }
    }
}

fn normalize_header(h: &str) -> String {
    h.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect()
}

fn check_header(header: &csv::StringRecord) -> Result<(), ParseError> {
    let bad = |msg: String| ParseError::new(1, "header", ParseErrorKind::MalformedLine(msg));
    if header.len() != 7 {
        return Err(bad(format!("header must have 7 columns ({CSV_HEADER}), found {}", header.len())));
    }
    for (i, (name, accepted)) in header.iter().zip(CSV_COLUMNS).enumerate() {
        if !accepted.contains(&normalize_header(name).as_str()) {
            return Err(bad(format!("column {} is {name:?}, expected {:?}", i + 1, accepted[0])));
        }
    }
    Ok(())
}

const MAX_SKIP_WARNINGS: usize = 10;

/// Streams every record of a log into `sink`.
///
/// In strict mode the first bad line is returned as the error. In lenient
/// mode bad lines are logged (the first few as warnings), counted in [`IngestStats::skipped`] and
/// skipped.
pub fn read_log<R: Read>(
    input: R,
    format: LogFormat,
    opts: &ParseOptions,
    mut sink: impl FnMut(InteractionRecord),
) -> Result<IngestStats, ParseError> {
    let mut stats = IngestStats::default();
    let mut handle = |res: Result<InteractionRecord, ParseError>, stats: &mut IngestStats| match res {
        Ok(rec) => {
            stats.records += 1;
            sink(rec);
            Ok(())
        }
        Err(e) if opts.lenient => {
            if stats.skipped < MAX_SKIP_WARNINGS {
                log::warn!("skipping {e}");
            } else {
                log::debug!("skipping {e}");
            }
            stats.skipped += 1;
            Ok(())
        }
        Err(e) => Err(e),
    };
    match format {
        LogFormat::Jsonl => {
            let reader = std::io::BufReader::new(input);
            for (idx, line) in reader.lines().enumerate() {
                let line_no = idx + 1;
                let line = match line {
                    Ok(l) => l,
                    Err(e) => {
                        let err = ParseError::new(line_no, "line", ParseErrorKind::MalformedLine(e.to_string()));
                        handle(Err(err), &mut stats)?;
                        continue;
                    }
                };
                if line.trim().is_empty() {
                    continue;
                }
                handle(parse_json_line(line_no, &line, opts), &mut stats)?;
            }
        }
        LogFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(input);
            let header = reader
                .headers()
                .map_err(|e| ParseError::new(1, "header", ParseErrorKind::MalformedLine(e.to_string())))?
                .clone();
            check_header(&header)?;
            let mut fields = csv::StringRecord::new();
            loop {
                let line_no = reader.position().line() as usize;
                match reader.read_record(&mut fields) {
                    Ok(false) => break,
                    Ok(true) => {
                        let line_no = fields.position().map_or(line_no, |p| p.line() as usize);
                        if fields.len() == 1 && fields[0].trim().is_empty() {
                            continue;
                        }
                        handle(parse_csv_fields(line_no, &fields, opts), &mut stats)?;
                    }
                    Err(e) => {
                        let err = ParseError::new(line_no, "line", ParseErrorKind::MalformedLine(e.to_string()));
                        handle(Err(err), &mut stats)?;
                    }
                }
            }
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    const TABLE_ROW_1: &str =
        "U7,entertainment1|finance5|finance67|lifestyle78,2014-05-03T20:00,Impression,Advert1,Pub6,Site2";

    #[test]
    fn csv_row_from_log_example() {
        let rec = parse_record(TABLE_ROW_1, LogFormat::Csv, 2).unwrap();
        assert_eq!(rec.user, "U7");
        assert_eq!(rec.apps.len(), 4);
        assert!(rec.apps.contains("finance67"));
        assert_eq!(rec.stage, Stage::Impression);
        assert_eq!(rec.advert, "Advert1");
        assert_eq!(rec.publisher, "Pub6");
        assert_eq!(rec.site, "Site2");
        assert_eq!(rec.timestamp, NaiveDate::from_ymd_opt(2014, 5, 3).unwrap().and_hms_opt(20, 0, 0).unwrap());
    }

    #[test]
    fn empty_app_list_is_valid() {
        let rec = parse_record("U9,,2014-05-03T20:00,tap,Advert1,Pub6,Site2", LogFormat::Csv, 1).unwrap();
        assert!(rec.apps.is_empty());
        let rec = parse_record(
            r#"{"user":"U9","apps":[],"ts":"2014-05-03T20:00","stage":"tap","advert":"A","publisher":"P","site":"S"}"#,
            LogFormat::Jsonl,
            1,
        )
        .unwrap();
        assert!(rec.apps.is_empty());
    }

    #[test]
    fn duplicate_apps_collapse() {
        let rec = parse_record("U9,a|b|a| b ,2014-05-03T20:00,tap,Advert1,Pub6,Site2", LogFormat::Csv, 1).unwrap();
        assert_eq!(rec.apps.len(), 2);
    }

    #[test]
    fn malformed_minute_is_invalid_timestamp() {
        let err = parse_record(
            "U7,entertainment1|finance5|finance67,15/06/2014 6:75pm,Impression,Advert1,Pub6,Site2",
            LogFormat::Csv,
            8,
        )
        .unwrap_err();
        assert_eq!(err.line, 8);
        assert_eq!(err.field, "ts");
        assert!(matches!(err.kind, ParseErrorKind::InvalidTimestamp { .. }));
    }

    #[test]
    fn error_kinds() {
        let e = parse_record("U7,a,2014-05-03T20:00,Impression,Advert1", LogFormat::Csv, 3).unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::MalformedLine(_)));
        let e = parse_record(" ,a,2014-05-03T20:00,Impression,Advert1,P,S", LogFormat::Csv, 3).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::EmptyUserId);
        assert_eq!(e.field, "user");
        let e = parse_record("U1,a,2014-05-03T20:00,Swipe,Advert1,P,S", LogFormat::Csv, 3).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnknownStage("Swipe".into()));
        let e = parse_record("{not json", LogFormat::Jsonl, 4).unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::MalformedLine(_)));
        assert_eq!(e.line, 4);
    }

    #[test]
    fn window_filter() {
        let start = NaiveDate::from_ymd_opt(2014, 5, 2).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let end = NaiveDate::from_ymd_opt(2014, 6, 22).unwrap().and_hms_opt(23, 59, 0).unwrap();
        let opts = ParseOptions { lenient: false, window: Some(StudyWindow { start, end }) };
        assert!(parse_record_with(TABLE_ROW_1, LogFormat::Csv, 1, &opts).is_ok());
        let e = parse_record_with("U1,a,2014-07-01T10:00,tap,A,P,S", LogFormat::Csv, 1, &opts).unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::OutsideWindow(_)));
    }

    #[test]
    fn window_json_uses_log_timestamps() {
        let w: StudyWindow =
            serde_json::from_str(r#"{"start":"2014-05-02T00:00","end":"22/06/2014 11:59pm"}"#).unwrap();
        assert_eq!(w.end, NaiveDate::from_ymd_opt(2014, 6, 22).unwrap().and_hms_opt(23, 59, 0).unwrap());
        assert_eq!(serde_json::to_string(&w).unwrap(), r#"{"start":"2014-05-02T00:00","end":"2014-06-22T23:59"}"#);
        assert!(
            serde_json::from_str::<StudyWindow>(r#"{"start":"2014-13-02T00:00","end":"2014-06-22T23:59"}"#).is_err()
        );
    }

    #[test]
    fn csv_and_jsonl_writers_round_trip() {
        let rec = parse_record(TABLE_ROW_1, LogFormat::Csv, 1).unwrap();
        assert_eq!(parse_record(&rec.to_csv_row(), LogFormat::Csv, 1).unwrap(), rec);
        assert_eq!(parse_record(&rec.to_jsonl(), LogFormat::Jsonl, 1).unwrap(), rec);
    }

    #[test]
    fn read_log_strict_and_lenient() {
        let text = format!("{CSV_HEADER}\n{TABLE_ROW_1}\nU7,a,2014-05-03T20:61,tap,Advert1,P,S\n{TABLE_ROW_1}\n");
        let err = read_log(text.as_bytes(), LogFormat::Csv, &ParseOptions::default(), |_| {}).unwrap_err();
        assert_eq!(err.line, 3);
        assert_eq!(err.field, "ts");

        let mut n = 0;
        let opts = ParseOptions { lenient: true, window: None };
        let stats = read_log(text.as_bytes(), LogFormat::Csv, &opts, |_| n += 1).unwrap();
        assert_eq!(stats, IngestStats { records: 2, skipped: 1 });
        assert_eq!(n, 2);
    }

    #[test]
    fn csv_requires_header() {
        let err = read_log(TABLE_ROW_1.as_bytes(), LogFormat::Csv, &ParseOptions::default(), |_| {}).unwrap_err();
        assert_eq!(err.field, "header");
        let long_header = "user ID,App list,Date,Interaction,Advert,Publisher,Site\n";
        let ok = read_log(
            format!("{long_header}{TABLE_ROW_1}\n").as_bytes(),
            LogFormat::Csv,
            &ParseOptions::default(),
            |_| {},
        )
        .unwrap();
        assert_eq!(ok.records, 1);
    }
}
