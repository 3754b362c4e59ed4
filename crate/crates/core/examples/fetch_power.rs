//! Downloads hourly 10 m wind speed for the study site from NASA POWER.
//! Set `TCNFORMER_POWER_ENDPOINT` to point at a mirror or a local stub.
//!
//! `cargo run --example fetch_power -- 2021-06-01 2021-06-02 raw.csv`

use std::path::PathBuf;

use chrono::NaiveDate;
use tcnformer::data::parse_power_str;
use tcnformer::fetch::{fetch_nasa_power, meta_path, PowerRequest, RetryPolicy};

fn main() -> tcnformer::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let date = |i: usize, d: &str| {
        NaiveDate::parse_from_str(args.get(i).map_or(d, |s| s.as_str()), "%Y-%m-%d")
            .expect("dates are YYYY-MM-DD")
    };
    let req = PowerRequest::site(date(0, "2021-06-01"), date(1, "2021-06-02"));
    let out = PathBuf::from(args.get(2).cloned().unwrap_or_else(|| "power_raw.csv".into()));
    println!("GET {}", req.url());
    let body = fetch_nasa_power(&req, RetryPolicy::default(), &out)?;
    let series = parse_power_str(&String::from_utf8_lossy(&body), &req.url())?;
    println!(
        "{} rows saved to {} (metadata in {})",
        series.len(),
        out.display(),
        meta_path(&out).display()
    );
    Ok(())
}
