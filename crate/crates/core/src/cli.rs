//! Command-line front end: `fetch`, `train`, `evaluate`, `forecast`, `ablate`.
//!
//! Every setting lives in a flat `key = value` config file; each key is also
//! a `--key value` flag (hyphens and underscores are interchangeable) and
//! flags win over the file. Lines starting with `#` are comments. The
//! effective config is echoed to `<output>/config.txt`, which parses back to
//! the same settings.
//!
//! Exit codes: 0 on success, 1 on a domain error, 2 on a usage error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use clap::{Arg, ArgMatches, Command};

use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::data::{parse_power_csv, parse_power_str, season_slice, Season, WindSeries, TIMESTAMP_FORMAT};
use crate::error::{ConfigError, Error, Result};
use crate::eval::{
    config_fingerprint, evaluate_series, fit, run_ablation, write_comparison_csv, write_forecast_csv,
    write_per_step_csv, RunReport,
};
use crate::fetch::{endpoint_from_env, fetch_nasa_power, PowerRequest, RetryPolicy};
use crate::model::TcnformerSpec;
use crate::tensor::Array;
use crate::training::{OptimizerKind, TrainConfig, TrainingLog};

/// Which part of the series a run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeasonChoice {
    /// The whole file, for synthetic or pre-cut data.
    Full,
    Season(Season),
}

impl SeasonChoice {
    pub fn name(self) -> &'static str {
        match self {
            SeasonChoice::Full => "full",
            SeasonChoice::Season(s) => s.name(),
        }
    }

    pub fn parse(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("full") {
            return Ok(SeasonChoice::Full);
        }
        Season::parse(s).map(SeasonChoice::Season).map_err(|e| e.to_string())
    }
}

/// Effective settings of one invocation.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Canonical or raw POWER CSV.
    pub data: PathBuf,
    pub endpoint: String,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub season: SeasonChoice,
    /// Calendar year in which the season starts.
    pub year: i32,
    pub output: PathBuf,
    /// Empty means `<output>/checkpoint.bin`.
    pub checkpoint: Option<PathBuf>,
    pub model: TcnformerSpec,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data/power.csv"),
            endpoint: endpoint_from_env(),
            start_date: NaiveDate::from_ymd_opt(2021, 4, 15).unwrap(),
            end_date: NaiveDate::from_ymd_opt(2022, 4, 14).unwrap(),
            season: SeasonChoice::Season(Season::Summer),
            year: 2021,
            output: PathBuf::from("runs/latest"),
            checkpoint: None,
            model: TcnformerSpec::default(),
            train: TrainConfig::default(),
        }
    }
}

const DATE_FORMAT: &str = "%Y-%m-%d";

impl RunConfig {
    /// Every key in echo order.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let t = &self.train;
        let mut kv: Vec<(String, String)> = vec![
            ("data".into(), self.data.display().to_string()),
            ("endpoint".into(), self.endpoint.clone()),
            ("start_date".into(), self.start_date.format(DATE_FORMAT).to_string()),
            ("end_date".into(), self.end_date.format(DATE_FORMAT).to_string()),
            ("season".into(), self.season.name().into()),
            ("year".into(), self.year.to_string()),
            ("output".into(), self.output.display().to_string()),
            (
                "checkpoint".into(),
                self.checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            ),
            ("seed".into(), t.seed.to_string()),
            ("epochs".into(), t.epochs.to_string()),
            ("batch_size".into(), t.batch_size.to_string()),
            ("patience".into(), t.patience.to_string()),
            ("learning_rate".into(), t.learning_rate.to_string()),
            ("optimizer".into(), t.optimizer.name().into()),
            ("clip_norm".into(), t.clip_norm.to_string()),
        ];
        kv.extend(self.model.to_kv().into_iter().map(|(k, v)| (k.to_string(), v)));
        kv
    }

    pub fn keys() -> Vec<String> {
        RunConfig::default().to_kv().into_iter().map(|(k, _)| k).collect()
    }

    /// Sets one key. `Ok(false)` means the key is unknown.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<bool, String> {
        fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("cannot parse `{v}`"))
        }
        let date = |v: &str| {
            NaiveDate::parse_from_str(v, DATE_FORMAT).map_err(|e| format!("date `{v}`: {e}"))
        };
        match key {
            "data" => self.data = PathBuf::from(value),
            "endpoint" => self.endpoint = value.to_string(),
            "start_date" => self.start_date = date(value)?,
            "end_date" => self.end_date = date(value)?,
            "season" => self.season = SeasonChoice::parse(value)?,
            "year" => self.year = num(value)?,
            "output" => self.output = PathBuf::from(value),
            "checkpoint" => {
                self.checkpoint = (!value.is_empty()).then(|| PathBuf::from(value));
            }
            "seed" => self.train.seed = num(value)?,
            "epochs" => self.train.epochs = num(value)?,
            "batch_size" => self.train.batch_size = num(value)?,
            "patience" => self.train.patience = num(value)?,
            "learning_rate" => self.train.learning_rate = num(value)?,
            "optimizer" => {
                self.train.optimizer =
                    OptimizerKind::parse(value).ok_or_else(|| format!("unknown optimizer `{value}`"))?
            }
            "clip_norm" => self.train.clip_norm = num(value)?,
            _ => return self.model.set_kv(key, value),
        }
        Ok(true)
    }

    /// Applies a config file's records on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> std::result::Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (k, v) = trimmed.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let key = k.trim();
            match self.set(key, v.trim()) {
                Ok(true) => {}
                Ok(false) => return Err(ConfigError::UnknownKey { key: key.into(), line }),
                Err(msg) => return Err(ConfigError::BadValue { key: key.into(), line, msg }),
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> std::result::Result<(), ConfigError> {
        self.model.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train.validate().map_err(ConfigError::Invalid)?;
        if self.end_date < self.start_date {
            return Err(ConfigError::Invalid("end_date precedes start_date".into()));
        }
        Ok(())
    }

    /// `key = value` text; [`RunConfig::apply_text`] on defaults restores it.
    pub fn to_text(&self) -> String {
        self.to_kv().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.output.join("checkpoint.bin"))
    }
}

/// Defaults, then the file at `path` (if any).
pub fn load_config(path: Option<&Path>) -> std::result::Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = path {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.apply_text(&text)?;
    }
    Ok(cfg)
}

fn command() -> Command {
    let keys = RunConfig::keys();
    let with_keys = |mut cmd: Command| {
        cmd = cmd.arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("key = value config file"),
        );
        for key in &keys {
            let hyphen = key.replace('_', "-");
            let mut arg = Arg::new(key.clone()).long(key.clone()).value_name("VALUE");
            if hyphen != *key {
                arg = arg.alias(hyphen);
            }
            cmd = cmd.arg(arg.help(format!("overrides `{key}`")));
        }
        cmd
    };
    Command::new("tcnformer")
        .about("TCN + transformer short-term wind-speed forecaster")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(with_keys(Command::new("fetch").about(
            "download NASA POWER hourly WS10M and write the canonical CSV to `data`",
        )))
        .subcommand(with_keys(
            Command::new("train").about("train on one season; writes checkpoint, logs and metrics to `output`"),
        ))
        .subcommand(with_keys(
            Command::new("evaluate").about("score a checkpoint on the season's held-out last H hours"),
        ))
        .subcommand(with_keys(
            Command::new("forecast").about("print the next H hours after the end of `data` as CSV"),
        ))
        .subcommand(with_keys(
            Command::new("ablate").about("train and compare the full model and both attention substitutions"),
        ))
        .disable_help_subcommand(true)
        .version(env!("CARGO_PKG_VERSION"))
}

fn resolve(m: &ArgMatches) -> Result<RunConfig> {
    let mut cfg = load_config(m.get_one::<String>("config").map(Path::new))?;
    for key in RunConfig::keys() {
        if let Some(v) = m.get_one::<String>(&key) {
            if let Err(msg) = cfg.set(&key, v) {
                return Err(ConfigError::BadFlag { key, msg }.into());
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let result = resolve(sub).and_then(|cfg| match name {
        "fetch" => cmd_fetch(&cfg),
        "train" => cmd_train(&cfg),
        "evaluate" => cmd_evaluate(&cfg),
        "forecast" => cmd_forecast(&cfg),
        "ablate" => cmd_ablate(&cfg),
        _ => unreachable!("clap rejects unknown subcommands"),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn load_series(cfg: &RunConfig) -> Result<WindSeries> {
    let series = parse_power_csv(&cfg.data)?;
    Ok(match cfg.season {
        SeasonChoice::Full => series,
        SeasonChoice::Season(s) => season_slice(&series, s, cfg.year)?,
    })
}

fn prepare_output(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.output)?;
    fs::write(cfg.output.join("config.txt"), cfg.to_text())?;
    fs::write(cfg.output.join("seed"), format!("{}\n", cfg.train.seed))?;
    Ok(())
}

fn cmd_fetch(cfg: &RunConfig) -> Result<()> {
    let mut req = PowerRequest::site(cfg.start_date, cfg.end_date);
    req.endpoint = cfg.endpoint.clone();
    let mut raw_name = cfg.data.file_name().unwrap_or_default().to_os_string();
    raw_name.push(".raw");
    let raw_path = cfg.data.with_file_name(raw_name);
    let body = fetch_nasa_power(&req, RetryPolicy::default(), &raw_path)?;
    let text = String::from_utf8_lossy(&body);
    let series = parse_power_str(&text, &req.url())?;
    series.write_canonical_csv(&cfg.data)?;
    eprintln!(
        "fetched {} hourly rows ({} .. {}) into {}",
        series.len(),
        series.first().map(|t| t.format(TIMESTAMP_FORMAT).to_string()).unwrap_or_default(),
        series.last().map(|t| t.format(TIMESTAMP_FORMAT).to_string()).unwrap_or_default(),
        cfg.data.display()
    );
    Ok(())
}

fn write_report(dir: &Path, report: &RunReport) -> Result<()> {
    fs::write(dir.join("report.toml"), report.to_toml())?;
    write_comparison_csv(&dir.join("metrics.csv"), std::slice::from_ref(report))?;
    write_forecast_csv(&dir.join("forecast_vs_truth.csv"), report)?;
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let series = load_series(cfg)?;
    prepare_output(cfg)?;
    let log_path = cfg.output.join("train_log.csv");
    let mut log_text = format!("{}\n", crate::training::LOG_HEADER);
    fs::write(&log_path, &log_text)?;
    let fitted = fit(&series, cfg.model.clone(), &cfg.train, |e| {
        let row = TrainingLog::row(e);
        eprintln!("epoch {row}");
        log_text.push_str(&row);
        log_text.push('\n');
        let _ = fs::write(&log_path, &log_text);
    })?;
    let meta = CheckpointMeta {
        epoch: fitted.outcome.best_epoch,
        best_val_loss: fitted.outcome.best_val_mse,
        seed: cfg.train.seed,
        scaler: fitted.split.scaler,
        spec: cfg.model.clone(),
    };
    Checkpoint::from_model(&fitted.model, meta).save(&cfg.checkpoint_path())?;
    fs::write(&log_path, fitted.outcome.log.to_csv())?;
    let report = evaluate_series(
        &fitted.model,
        &fitted.split.scaler,
        &series,
        cfg.season.name(),
        &config_fingerprint(&cfg.to_kv()),
    )?;
    write_report(&cfg.output, &report)?;
    eprintln!(
        "best epoch {}; test MAE {:.4} m/s (persistence {:.4}); checkpoint {}",
        fitted.outcome.best_epoch,
        report.mae,
        report.persistence_mae,
        cfg.checkpoint_path().display()
    );
    Ok(())
}

fn load_checkpoint(cfg: &RunConfig) -> Result<(Checkpoint, crate::model::Tcnformer)> {
    let ck = Checkpoint::load(&cfg.checkpoint_path())?;
    let model = ck.to_model()?;
    Ok((ck, model))
}

fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let (ck, model) = load_checkpoint(cfg)?;
    let series = load_series(cfg)?;
    prepare_output(cfg)?;
    let report = evaluate_series(
        &model,
        &ck.meta.scaler,
        &series,
        cfg.season.name(),
        &config_fingerprint(&cfg.to_kv()),
    )?;
    write_report(&cfg.output, &report)?;
    print!("{}", report.to_toml());
    Ok(())
}

fn cmd_forecast(cfg: &RunConfig) -> Result<()> {
    let (ck, model) = load_checkpoint(cfg)?;
    let series = parse_power_csv(&cfg.data)?;
    let t = model.spec().lookback;
    let history = series.tail(t)?;
    let scaled = ck.meta.scaler.apply(history.speeds(), crate::data::Direction::Forward);
    let pred = model.predict(&Array::new(vec![1, t], scaled)?)?;
    let speeds = ck.meta.scaler.apply(pred.row(0), crate::data::Direction::Inverse);
    let last = history.last().expect("non-empty tail");
    let mut out = String::from("timestamp,ws10m_pred\n");
    for (i, v) in speeds.iter().enumerate() {
        let ts = last + Duration::hours(i as i64 + 1);
        out.push_str(&format!("{},{}\n", ts.format(TIMESTAMP_FORMAT), v));
    }
    print!("{out}");
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig) -> Result<()> {
    let series = load_series(cfg)?;
    prepare_output(cfg)?;
    let fingerprint = config_fingerprint(&cfg.to_kv());
    let arms = run_ablation(&series, cfg.season.name(), &cfg.model, &cfg.train, &fingerprint)?;
    let reports_dir = cfg.output.join("reports");
    fs::create_dir_all(&reports_dir)?;
    let mut reports = Vec::new();
    let mut audit = String::new();
    let mut failures = Vec::new();
    for arm in arms {
        let name = arm.variant.name();
        match arm.audit {
            Ok(changed) => {
                audit.push_str(&format!("{name}: ok ({} tensors differ from full)\n", changed.len()));
                for n in changed {
                    audit.push_str(&format!("  {n}\n"));
                }
            }
            Err(msg) => {
                audit.push_str(&format!("{name}: FAILED {msg}\n"));
                failures.push(format!("{name} audit: {msg}"));
            }
        }
        match arm.outcome {
            Ok((report, log)) => {
                fs::write(reports_dir.join(format!("{name}.toml")), report.to_toml())?;
                fs::write(cfg.output.join(format!("train_log_{name}.csv")), log.to_csv())?;
                eprintln!("{name}: MAE {:.4} m/s, MSE {:.4}", report.mae, report.mse);
                reports.push(report);
            }
            Err(e) => {
                eprintln!("{name}: failed: {e}");
                failures.push(format!("{name}: {e}"));
            }
        }
    }
    fs::write(cfg.output.join("audit.txt"), audit)?;
    write_comparison_csv(&cfg.output.join("comparison.csv"), &reports)?;
    write_per_step_csv(&cfg.output.join("per_step_mae.csv"), &reports)?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(ConfigError::Invalid(format!(
            "ablation incomplete: {}",
            failures.join("; ")
        ))))
    }
}
