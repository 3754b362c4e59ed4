//! Writes a seeded sine-plus-noise wind series as canonical CSV, handy as
//! input for the `tcnformer` CLI.
//!
//! `cargo run --example synthetic_data -- out.csv 600`

use std::path::PathBuf;

use tcnformer::data::{synthetic_sine, utc_hour};

fn main() -> tcnformer::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = PathBuf::from(args.next().unwrap_or_else(|| "synthetic.csv".into()));
    let hours: usize = args.next().and_then(|h| h.parse().ok()).unwrap_or(600);
    let series = synthetic_sine(hours, 24.0, 1.0, 0.05, 42, utc_hour(2021, 6, 1, 0).unwrap());
    series.write_canonical_csv(&path)?;
    println!("wrote {hours} hours to {}", path.display());
    Ok(())
}
