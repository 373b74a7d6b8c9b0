use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub date: NaiveDate,
    pub open: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub close: Option<f64>,
}

/// Ordered trading sessions of one index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    pub index_name: String,
    pub sessions: Vec<Session>,
}

impl PriceSeries {
    /// Validates ordering (strictly increasing dates) and positive prices.
    pub fn new(index_name: impl Into<String>, sessions: Vec<Session>) -> Result<Self> {
        for (i, s) in sessions.iter().enumerate() {
            if !(s.open > 0.0 && s.open.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "session {} has non-positive open {}",
                    s.date, s.open
                )));
            }
            if let Some(c) = s.close {
                if !(c > 0.0 && c.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "session {} has non-positive close {c}",
                        s.date
                    )));
                }
            }
            if i > 0 && sessions[i - 1].date >= s.date {
                return Err(Error::InvalidArgument(format!(
                    "dates not strictly increasing at {}",
                    s.date
                )));
            }
        }
        Ok(PriceSeries {
            index_name: index_name.into(),
            sessions,
        })
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }
}

/// Which price a session's return is measured from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReturnBasis {
    /// `open(d) → open(d+1)`
    #[default]
    OpenToNextOpen,
    /// `close(d) → open(d+1)`; needs a close column.
    CloseToNextOpen,
}

pub fn load_prices(path: &Path, index_name: &str) -> Result<PriceSeries> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_prices(&text, path, index_name)
}

/// Parses a delimited price table with a header row. Required columns are
/// `date` (ISO-8601) and `open`; `close` is picked up when present and all
/// other columns are ignored. Comma and tab delimiters are both accepted.
pub fn parse_prices(text: &str, path: &Path, index_name: &str) -> Result<PriceSeries> {
    let first = text.lines().next().unwrap_or("");
    let delimiter = if first.contains('\t') { b'\t' } else { b',' };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, 1, format!("header: {e}")))?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let date_col = find("date").ok_or_else(|| Error::parse(path, 1, "missing `date` column"))?;
    let open_col = find("open").ok_or_else(|| Error::parse(path, 1, "missing `open` column"))?;
    let close_col = find("close");

    let mut sessions: Vec<Session> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::parse(path, line, e.to_string()))?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let field = |col: usize| record.get(col).unwrap_or("");
        let date = NaiveDate::parse_from_str(field(date_col), "%Y-%m-%d")
            .map_err(|e| Error::parse(path, line, format!("date {:?}: {e}", field(date_col))))?;
        let open: f64 = field(open_col)
            .parse()
            .map_err(|_| Error::parse(path, line, format!("open {:?} is not a number", field(open_col))))?;
        if !(open > 0.0 && open.is_finite()) {
            return Err(Error::parse(path, line, format!("open {open} must be positive")));
        }
        let close = match close_col.map(field) {
            Some(raw) if !raw.is_empty() => {
                let c: f64 = raw
                    .parse()
                    .map_err(|_| Error::parse(path, line, format!("close {raw:?} is not a number")))?;
                if !(c > 0.0 && c.is_finite()) {
                    return Err(Error::parse(path, line, format!("close {c} must be positive")));
                }
                Some(c)
            }
            _ => None,
        };
        if let Some(prev) = sessions.last() {
            if prev.date >= date {
                return Err(Error::parse(
                    path,
                    line,
                    format!("date {date} does not come after {}", prev.date),
                ));
            }
        }
        sessions.push(Session { date, open, close });
    }
    PriceSeries::new(index_name, sessions)
}

/// Percent return of each session relative to the next session's open.
/// The final session has no successor and yields no return.
pub fn compute_returns(prices: &PriceSeries, basis: ReturnBasis) -> Result<Vec<(NaiveDate, f64)>> {
    if prices.sessions.len() < 2 {
        return Err(Error::InvalidArgument(
            "at least two sessions are needed to compute returns".into(),
        ));
    }
    prices
        .sessions
        .windows(2)
        .map(|w| {
            let base = match basis {
                ReturnBasis::OpenToNextOpen => w[0].open,
                ReturnBasis::CloseToNextOpen => w[0]
                    .close
                    .ok_or_else(|| Error::InvalidArgument(format!("session {} has no close price", w[0].date)))?,
            };
            if base == 0.0 {
                return Err(Error::InvalidArgument(format!("zero price on {}", w[0].date)));
            }
            Ok((w[0].date, 100.0 * (w[1].open - base) / base))
        })
        .collect()
}
