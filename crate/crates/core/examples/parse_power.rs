//! Parses a raw NASA POWER hourly export and prints it in canonical form.
//!
//! `cargo run --example parse_power -- tests/fixtures/power_2021-06-01_02.csv`

use std::path::PathBuf;

use tcnformer::data::{parse_power_csv, series_stats};

fn main() -> tcnformer::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/power_2021-06-01_02.csv")));
    let series = parse_power_csv(&path)?;
    let stats = series_stats(series.speeds())?;
    println!(
        "{} hourly rows at ({}, {}); std {:.3}, min {:.2}, max {:.2} m/s",
        series.len(),
        series.lat,
        series.lon,
        stats.std,
        stats.min,
        stats.max
    );
    print!("{}", series.to_canonical_csv().lines().take(6).collect::<Vec<_>>().join("\n"));
    println!("\n...");
    Ok(())
}
