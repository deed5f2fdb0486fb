//! Resolution of absolute and relative date expressions into day windows.

use std::sync::OnceLock;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::model::Timestamp;

/// Inclusive window `[start, end]` in epoch seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl TimeWindow {
    /// 00:00:00 of `first` through 23:59:59 of `last`.
    pub fn days(first: NaiveDate, last: NaiveDate) -> Self {
        let start = first.and_hms_opt(0, 0, 0).unwrap().and_utc();
        let end = last.and_hms_opt(23, 59, 59).unwrap().and_utc();
        TimeWindow { start: Timestamp::from_datetime(start), end: Timestamp::from_datetime(end) }
    }

    pub fn day(d: NaiveDate) -> Self {
        Self::days(d, d)
    }

    pub fn contains(&self, ts: Timestamp) -> bool {
        self.start <= ts && ts <= self.end
    }
}

const MONTHS: [&str; 12] =
    ["january", "february", "march", "april", "may", "june", "july", "august", "september", "october", "november", "december"];

fn month_number(name: &str) -> Option<u32> {
    let name = name.to_lowercase();
    MONTHS.iter().position(|m| m.starts_with(&name) && name.len() >= 3).map(|i| i as u32 + 1)
}

fn weekday(name: &str) -> Option<Weekday> {
    name.to_lowercase().parse().ok()
}

fn number_word(s: &str) -> Option<i64> {
    const WORDS: [&str; 10] = ["one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"];
    s.parse().ok().or_else(|| WORDS.iter().position(|w| w.eq_ignore_ascii_case(s)).map(|i| i as i64 + 1))
}

struct Patterns {
    iso: Regex,
    day_month_year: Regex,
    month_day_year: Regex,
    simple: Regex,
    relative_weekday: Regex,
    relative_span: Regex,
    days_ago: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    const MONTH: &str = "(jan(?:uary)?|feb(?:ruary)?|mar(?:ch)?|apr(?:il)?|may|june?|july?|aug(?:ust)?|sep(?:t(?:ember)?)?|oct(?:ober)?|nov(?:ember)?|dec(?:ember)?)";
    P.get_or_init(|| Patterns {
        iso: Regex::new(r"\b(\d{4})-(\d{2})-(\d{2})\b").unwrap(),
        day_month_year: Regex::new(&format!(r"(?i)\b(\d{{1,2}})(?:st|nd|rd|th)? {MONTH},? (\d{{4}})\b")).unwrap(),
        month_day_year: Regex::new(&format!(r"(?i)\b{MONTH} (\d{{1,2}})(?:st|nd|rd|th)?,? (\d{{4}})\b")).unwrap(),
        simple: Regex::new(r"(?i)\b(yesterday|today|tomorrow)\b").unwrap(),
        relative_weekday: Regex::new(r"(?i)\b(last|next) (monday|tuesday|wednesday|thursday|friday|saturday|sunday)\b").unwrap(),
        relative_span: Regex::new(r"(?i)\blast (week|month)\b").unwrap(),
        days_ago: Regex::new(r"(?i)\b(\d+|one|two|three|four|five|six|seven|eight|nine|ten) days? ago\b").unwrap(),
    })
}

/// Finds the leftmost date expression in `query` and resolves it against
/// `now` (UTC calendar). Returns `None` when nothing is recognized.
pub fn parse_time(query: &str, now: Timestamp) -> Option<TimeWindow> {
    let p = patterns();
    let today = now.date();
    let mut found: Vec<(usize, TimeWindow)> = Vec::new();

    for c in p.iso.captures_iter(query) {
        let date = NaiveDate::from_ymd_opt(c[1].parse().ok()?, c[2].parse().ok()?, c[3].parse().ok()?);
        if let Some(d) = date {
            found.push((c.get(0).unwrap().start(), TimeWindow::day(d)));
        }
    }
    for c in p.day_month_year.captures_iter(query) {
        let date = month_number(&c[2]).and_then(|m| NaiveDate::from_ymd_opt(c[3].parse().ok()?, m, c[1].parse().ok()?));
        if let Some(d) = date {
            found.push((c.get(0).unwrap().start(), TimeWindow::day(d)));
        }
    }
    for c in p.month_day_year.captures_iter(query) {
        let date = month_number(&c[1]).and_then(|m| NaiveDate::from_ymd_opt(c[3].parse().ok()?, m, c[2].parse().ok()?));
        if let Some(d) = date {
            found.push((c.get(0).unwrap().start(), TimeWindow::day(d)));
        }
    }
    for c in p.simple.captures_iter(query) {
        let offset = match c[1].to_lowercase().as_str() {
            "yesterday" => -1,
            "today" => 0,
            _ => 1,
        };
        found.push((c.get(0).unwrap().start(), TimeWindow::day(today + Duration::days(offset))));
    }
    for c in p.relative_weekday.captures_iter(query) {
        let target = weekday(&c[2])?;
        let (cur, want) = (today.weekday().num_days_from_monday() as i64, target.num_days_from_monday() as i64);
        let d = if c[1].eq_ignore_ascii_case("last") {
            let back = (cur - want).rem_euclid(7);
            today - Duration::days(if back == 0 { 7 } else { back })
        } else {
            let ahead = (want - cur).rem_euclid(7);
            today + Duration::days(if ahead == 0 { 7 } else { ahead })
        };
        found.push((c.get(0).unwrap().start(), TimeWindow::day(d)));
    }
    for c in p.relative_span.captures_iter(query) {
        let window = if c[1].eq_ignore_ascii_case("week") {
            let monday = today - Duration::days(today.weekday().num_days_from_monday() as i64 + 7);
            TimeWindow::days(monday, monday + Duration::days(6))
        } else {
            let first_this = today.with_day(1)?;
            let last_prev = first_this - Duration::days(1);
            TimeWindow::days(last_prev.with_day(1)?, last_prev)
        };
        found.push((c.get(0).unwrap().start(), window));
    }
    for c in p.days_ago.captures_iter(query) {
        let n = number_word(&c[1])?;
        found.push((c.get(0).unwrap().start(), TimeWindow::day(today - Duration::days(n))));
    }

    found.into_iter().min_by_key(|(pos, _)| *pos).map(|(_, w)| w)
}
