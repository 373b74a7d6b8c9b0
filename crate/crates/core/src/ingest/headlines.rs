use std::collections::HashSet;
use std::path::Path;

use chrono::NaiveDate;
use serde::Deserialize;

use super::{DropReport, Headline, MAX_TOKENS, MIN_CHARS};
use crate::category::Category;
use crate::error::{Error, Result};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HeadlineLine {
    id: String,
    date: String,
    text: String,
    #[serde(default)]
    category: Option<String>,
}

/// Lower-cased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn load_headlines(path: &Path) -> Result<Vec<Headline>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_headlines(&text, path)
}

/// Parses JSON-lines headline records with fields `id`, `date`
/// (`YYYY-MM-DD`), `text` and optional `category`. Blank lines are skipped.
/// Tokens are not truncated here; see [`filter_headlines`].
pub fn parse_headlines(text: &str, path: &Path) -> Result<Vec<Headline>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: HeadlineLine = serde_json::from_str(raw).map_err(|e| Error::parse(path, line, e.to_string()))?;
        if rec.id.is_empty() {
            return Err(Error::parse(path, line, "empty id"));
        }
        if !seen.insert(rec.id.clone()) {
            return Err(Error::parse(path, line, format!("duplicate id {:?}", rec.id)));
        }
        let day = NaiveDate::parse_from_str(&rec.date, "%Y-%m-%d")
            .map_err(|e| Error::parse(path, line, format!("date {:?}: {e}", rec.date)))?;
        let category = match rec.category.as_deref() {
            None | Some("") => None,
            Some(c) => Some(
                c.parse::<Category>()
                    .map_err(|e| Error::parse(path, line, e.to_string()))?,
            ),
        };
        out.push(Headline {
            id: rec.id,
            day,
            tokens: tokenize(&rec.text),
            text: rec.text,
            category,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FilterRules {
    pub min_chars: usize,
    pub max_tokens: usize,
}

impl Default for FilterRules {
    fn default() -> Self {
        FilterRules {
            min_chars: MIN_CHARS,
            max_tokens: MAX_TOKENS,
        }
    }
}

/// Drops headlines shorter than `min_chars` characters (or without any
/// token) and truncates token lists to `max_tokens`.
pub fn filter_headlines(headlines: Vec<Headline>, rules: FilterRules) -> (Vec<Headline>, DropReport) {
    let mut report = DropReport::default();
    let mut kept = Vec::with_capacity(headlines.len());
    for mut h in headlines {
        if h.text.chars().count() < rules.min_chars {
            report.add("short_text", 1);
            continue;
        }
        if h.tokens.is_empty() {
            report.add("no_tokens", 1);
            continue;
        }
        if h.tokens.len() > rules.max_tokens {
            h.tokens.truncate(rules.max_tokens);
            report.add("truncated_tokens", 1);
        }
        kept.push(h);
    }
    report.add("headlines_kept", kept.len());
    (kept, report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn headline(text: &str) -> Headline {
        Headline {
            id: "h".into(),
            day: NaiveDate::from_ymd_opt(2008, 10, 3).unwrap(),
            text: text.into(),
            tokens: tokenize(text),
            category: None,
        }
    }

    #[test]
    fn tokenizer_lowercases_and_splits_punctuation() {
        assert_eq!(
            tokenize("Dow Drops 176; Nasdaq Tumbles"),
            vec!["dow", "drops", "176", "nasdaq", "tumbles"]
        );
    }

    #[test]
    fn short_headline_dropped_boundary_kept() {
        let (kept, report) = filter_headlines(vec![headline("IBM up")], FilterRules::default());
        assert!(kept.is_empty());
        assert_eq!(report.get("short_text"), 1);

        let twenty = "Stocks fall sharply";
        assert_eq!(twenty.len(), 19);
        let twenty = "Stocks fall sharply!";
        assert_eq!(twenty.chars().count(), 20);
        let (kept, _) = filter_headlines(vec![headline(twenty)], FilterRules::default());
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn long_headline_truncated_to_fifteen_tokens() {
        let text = (0..18).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let (kept, report) = filter_headlines(vec![headline(&text)], FilterRules::default());
        assert_eq!(kept[0].tokens.len(), 15);
        assert_eq!(kept[0].tokens[14], "w14");
        assert_eq!(report.get("truncated_tokens"), 1);
    }

    #[test]
    fn parses_json_lines() {
        let text = r#"{"id":"a","date":"2008-10-03","text":"Latam stocks lower on slowdown concerns","category":"business"}

{"id":"b","date":"2008-10-03","text":"French economy enters recession"}
"#;
        let hs = parse_headlines(text, Path::new("h.jsonl")).unwrap();
        assert_eq!(hs.len(), 2);
        assert_eq!(hs[0].category, Some(Category::Business));
        assert_eq!(hs[1].category, None);
        assert_eq!(hs[1].tokens, vec!["french", "economy", "enters", "recession"]);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let dup = "{\"id\":\"a\",\"date\":\"2008-10-03\",\"text\":\"x\"}\n{\"id\":\"a\",\"date\":\"2008-10-03\",\"text\":\"y\"}\n";
        let err = parse_headlines(dup, Path::new("h")).unwrap_err();
        assert!(err.to_string().starts_with("h:2:"), "{err}");

        let bad_cat = "{\"id\":\"a\",\"date\":\"2008-10-03\",\"text\":\"x\",\"category\":\"finance\"}\n";
        assert!(parse_headlines(bad_cat, Path::new("h")).is_err());

        let bad_date = "{\"id\":\"a\",\"date\":\"03/10/2008\",\"text\":\"x\"}\n";
        assert!(parse_headlines(bad_date, Path::new("h")).is_err());
    }
}
