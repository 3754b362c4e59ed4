mod common;

use chrono::{Datelike, Timelike};
use common::fixture;
use tcnformer::data::{parse_power_csv, parse_power_str, Season};

#[test]
fn june_fixture_parses_to_48_hourly_rows() {
    let s = parse_power_csv(&fixture("power_2021-06-01_02.csv")).unwrap();
    assert_eq!(s.len(), 48);
    let first = s.first().unwrap();
    let last = s.last().unwrap();
    assert_eq!((first.month(), first.day(), first.hour()), (6, 1, 0));
    assert_eq!((last.month(), last.day(), last.hour()), (6, 2, 23));
    assert!(s.timestamps().iter().all(|&t| Season::of(t) == Season::Summer));
    assert!(s.speeds().iter().all(|&v| v >= 0.0));
}

#[test]
fn raw_and_canonical_forms_agree() {
    let raw = parse_power_csv(&fixture("power_2021-06-01_02.csv")).unwrap();
    let canonical = raw.to_canonical_csv();
    let back = parse_power_str(&canonical, "canonical").unwrap();
    assert_eq!(back.speeds(), raw.speeds());
    assert_eq!(back.timestamps(), raw.timestamps());
}

#[test]
fn corrupted_fixture_reports_the_line() {
    let text = std::fs::read_to_string(fixture("power_2021-06-01_02.csv")).unwrap();
    // line 21 of the file is 2021-06-01 hour 10
    let lines: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(i, l)| if i == 20 { "2021,6,1,10,-999".to_string() } else { l.to_string() })
        .collect();
    let err = parse_power_str(&lines.join("\n"), "f").unwrap_err();
    assert!(err.to_string().contains("row 21"), "{err}");
}
