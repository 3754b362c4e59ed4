//! Seasons, min-max scaling and sliding windows on a synthetic year.

use tcnformer::data::{
    fit_minmax, make_windows, season_slice, series_stats, split_season, synthetic_sine, utc_hour,
    Direction, ScalerParams, Season,
};

fn main() -> tcnformer::Result<()> {
    for s in Season::ALL {
        let spec = s.spec();
        let (start, end) = spec.span(2021)?;
        println!(
            "{:<12} {:02}-{:02} .. {:02}-{:02}  ({} hours in 2021/22)",
            s.name(),
            spec.start.0,
            spec.start.1,
            spec.end.0,
            spec.end.1,
            (end - start).num_hours() + 1
        );
    }
    let probe = utc_hour(2021, 7, 1, 0).unwrap();
    println!("{} falls in {}", probe.date_naive(), Season::of(probe));

    // extrema of the summer season at the study site
    let summer = ScalerParams::new(0.140, 10.960)?;
    for x in [0.140, 5.55, 10.960, 12.0] {
        println!("scale({x:>6.3}) = {:.4}", summer.forward(x));
    }

    let start = utc_hour(2021, 4, 1, 0).unwrap();
    let year = synthetic_sine(24 * 400, 24.0, 1.5, 0.3, 11, start);
    let summer_2021 = season_slice(&year, Season::Summer, 2021)?;
    let stats = series_stats(summer_2021.speeds())?;
    println!(
        "synthetic summer: {} hours from {} (std {:.3}, min {:.3}, max {:.3})",
        summer_2021.len(),
        summer_2021.first().unwrap().date_naive(),
        stats.std,
        stats.min,
        stats.max
    );
    let fitted = fit_minmax(summer_2021.speeds())?;
    let scaled = fitted.apply(summer_2021.speeds(), Direction::Forward);
    let windows = make_windows(&scaled, 72, 12)?;
    println!("{} windows of 72 → 12 hours", windows.len());

    let split = split_season(&summer_2021, 72, 12)?;
    println!(
        "split: {} train, {} validation windows; test targets start {}",
        split.train.len(),
        split.val.len(),
        split.test_target_start
    );
    Ok(())
}
