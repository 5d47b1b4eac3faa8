use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use depeg_core::bocd::DetectorConfig;
use depeg_core::evaluation::price_threshold_crossings;
use depeg_core::metrics::PriceTable;
use depeg_core::model::{MetricSeries, Timestamp};
use depeg_core::pipeline::csvio::{self, LabelRow, LeadRow, ScoreRow};
use depeg_core::pipeline::{
    compute_metrics, default_detection_metrics, detect_stream, ingest, lead_rows, load_scenario, pool_labels,
    read_json, render_report, run_scenario_files, score_metric, score_row, tracked_price, tune_metric, verify_manifest,
    write_json, DetectorStateFile, PipelineConfig, RunManifest, TunedMetric, CONFIG_FILE,
};
use depeg_core::simulator::{DepegEvent, ScenarioConfig};
use depeg_core::{Error, Execution};

#[derive(Parser)]
#[command(name = "depeg", version, about = "Depeg detection for StableSwap pools")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Pipeline config (pool registry, price sources, stage settings).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Scenario seed for `simulate`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Aggregation period in seconds, overriding the config.
    #[arg(long, global = true)]
    period: Option<u64>,
    /// Run every batch on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario in the ingestible file layout.
    Simulate {
        /// Scenario JSON; defaults to a two-token pool with one depeg.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = 14)]
        days: u64,
        /// Depeg start, days after the scenario start.
        #[arg(long, default_value_t = 7.0)]
        depeg_day: f64,
        #[arg(long, default_value_t = 0.85)]
        target: f64,
        #[arg(long, default_value_t = 6)]
        ramp_hours: u64,
        /// No depeg at all.
        #[arg(long)]
        no_depeg: bool,
    },
    /// Compute every metric series per pool.
    Metrics {
        #[arg(long)]
        input: PathBuf,
    },
    /// Label depegs from LP share price against virtual price.
    Label {
        #[arg(long)]
        input: PathBuf,
    },
    /// Run the changepoint detector over one metric series.
    Detect {
        /// A `ts,value` series file.
        #[arg(long)]
        series: PathBuf,
        /// Metric name; defaults to the file stem.
        #[arg(long)]
        metric: Option<String>,
        #[arg(long, default_value = "")]
        pool: String,
        /// Detector state file to write (and read with --resume).
        #[arg(long)]
        state: Option<PathBuf>,
        /// Continue from --state instead of starting fresh.
        #[arg(long, requires = "state")]
        resume: bool,
        /// Fit standardisation on points up to this timestamp.
        #[arg(long)]
        fit_until: Option<u64>,
    },
    /// Grid-search detector priors on a training dataset.
    Tune {
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated metric names.
        #[arg(long, value_delimiter = ',')]
        metrics: Vec<String>,
    },
    /// Score tuned detectors on a test dataset.
    Score {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        tuned: PathBuf,
    },
    /// Render scores.csv and leads.csv from a scoring run.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
    /// Recheck the output digests recorded in a manifest.
    Verify { manifest: PathBuf },
}

enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn exec(g: &Global) -> Execution {
    if g.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

fn load_config(g: &Global, input: Option<&Path>) -> CliResult<PipelineConfig> {
    let path = match (&g.config, input) {
        (Some(p), _) => p.clone(),
        (None, Some(dir)) if dir.join(CONFIG_FILE).exists() => dir.join(CONFIG_FILE),
        _ => return Err(CliError::Usage("--config is required".into())),
    };
    let mut cfg = PipelineConfig::load(&path)?;
    if let Some(p) = g.period {
        cfg.period = p;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn config_path(g: &Global, input: &Path) -> PathBuf {
    g.config.clone().unwrap_or_else(|| input.join(CONFIG_FILE))
}

fn input_files(dir: &Path) -> Vec<PathBuf> {
    ["trades.csv", "liquidity.csv", "reserves.csv", "prices.csv"]
        .iter()
        .map(|f| dir.join(f))
        .filter(|p| p.exists())
        .collect()
}

fn finish<C: serde::Serialize>(
    g: &Global,
    command: &str,
    cfg: &C,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
) -> CliResult<()> {
    let m = RunManifest::record(command, cfg, inputs, &g.out_dir, outputs)?;
    let path = m.write(&g.out_dir)?;
    for p in outputs {
        println!("{}", p.display());
    }
    println!("{}", path.display());
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let g = &cli.global;
    match cli.command {
        Command::Simulate {
            scenario,
            days,
            depeg_day,
            target,
            ramp_hours,
            no_depeg,
        } => {
            let mut sc = match scenario {
                Some(p) => load_scenario(&p)?,
                None => {
                    let event = (!no_depeg).then(|| DepegEvent {
                        token: "USDC".into(),
                        start: (depeg_day * 86_400.0).round() as u64,
                        target,
                        ramp: ramp_hours * 3600,
                        recovery: None,
                    });
                    ScenarioConfig::two_pool(0, days, event)
                }
            };
            if let Some(s) = g.seed {
                sc.seed = s;
            }
            if let Some(p) = g.period {
                sc.period = p;
            }
            sc.validate()?;
            let outputs = run_scenario_files(&sc, &g.out_dir)?;
            finish(g, "simulate", &sc, &[], &outputs)
        }
        Command::Metrics { input } => {
            let cfg = load_config(g, Some(&input))?;
            let ds = ingest(&input, &cfg)?;
            let mut outputs = Vec::new();
            for pm in compute_metrics(&ds, &cfg, exec(g))? {
                for s in &pm.series {
                    let p = g
                        .out_dir
                        .join("metrics")
                        .join(&pm.pool_id)
                        .join(format!("{}.csv", s.metric_name));
                    csvio::write_series(&p, s)?;
                    outputs.push(p);
                }
                if pm.markout_skipped > 0 {
                    eprintln!("{}: {} trades without a mark price", pm.pool_id, pm.markout_skipped);
                }
            }
            let mut inputs = input_files(&input);
            inputs.push(config_path(g, &input));
            finish(g, "metrics", &cfg, &inputs, &outputs)
        }
        Command::Label { input } => {
            let cfg = load_config(g, Some(&input))?;
            let ds = ingest(&input, &cfg)?;
            let table = PriceTable::new(&ds.prices);
            let mut rows = Vec::new();
            let mut outputs = Vec::new();
            for pool in &ds.pools {
                let pl = pool_labels(pool, &table, &cfg)?;
                for (name, s) in [("sharePrice", &pl.share_price), ("virtualPrice", &pl.virtual_price)] {
                    let p = g
                        .out_dir
                        .join("labels")
                        .join(&pool.entry.pool_id)
                        .join(format!("{name}.csv"));
                    csvio::write_series(&p, s)?;
                    outputs.push(p);
                }
                rows.extend(pl.labels.iter().map(|l| LabelRow {
                    ts: l.ts.0,
                    pool_id: pool.entry.pool_id.clone(),
                    deviation: l.deviation,
                }));
            }
            let p = g.out_dir.join("labels.csv");
            csvio::write_rows(&p, &csvio::LABELS_HEADER, &rows)?;
            outputs.insert(0, p);
            let mut inputs = input_files(&input);
            inputs.push(config_path(g, &input));
            finish(g, "label", &cfg, &inputs, &outputs)
        }
        Command::Detect {
            series,
            metric,
            pool,
            state,
            resume,
            fit_until,
        } => {
            let detector = match &g.config {
                Some(p) => PipelineConfig::load(p)?.detector,
                None => DetectorConfig::default(),
            };
            let metric = metric.unwrap_or_else(|| {
                series
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default()
            });
            let raw: MetricSeries = csvio::read_series(&series, &metric, &pool)?;
            let prior = match (&state, resume) {
                (Some(p), true) => Some(DetectorStateFile::load(p)?),
                _ => None,
            };
            let res = detect_stream(&raw, &detector, prior, fit_until.map(Timestamp))?;
            let cp = g.out_dir.join("changepoints.csv");
            let rl = g.out_dir.join("runlength.csv");
            csvio::write_changepoints(&cp, &res.detection.changepoints)?;
            csvio::write_runlength(&rl, &res.detection.trace)?;
            let state_path = state.unwrap_or_else(|| g.out_dir.join("state.json"));
            res.state.save(&state_path)?;
            finish(g, "detect", &detector, &[series], &[cp, rl, state_path])
        }
        Command::Tune { input, metrics } => {
            let cfg = load_config(g, Some(&input))?;
            let names = if metrics.is_empty() {
                default_detection_metrics(&cfg)
            } else {
                metrics
            };
            let ds = ingest(&input, &cfg)?;
            let table = PriceTable::new(&ds.prices);
            let all = compute_metrics(&ds, &cfg, exec(g))?;
            let mut tuned = Vec::new();
            for (pool, pm) in ds.pools.iter().zip(&all) {
                let until = cfg.train_until.unwrap_or(Timestamp(u64::MAX));
                let labels: Vec<Timestamp> = pool_labels(pool, &table, &cfg)?
                    .timestamps()
                    .into_iter()
                    .filter(|t| *t <= until)
                    .collect();
                for name in &names {
                    let s = pm.get(name)?.slice(Timestamp(0), until);
                    let t = tune_metric(&s, &labels, &cfg, exec(g))?;
                    if t.all_zero {
                        eprintln!("{}/{}: every grid point scored zero", t.pool_id, t.metric);
                    }
                    tuned.push(t);
                }
            }
            let p = g.out_dir.join("tuned.json");
            write_json(&p, &tuned)?;
            let mut inputs = input_files(&input);
            inputs.push(config_path(g, &input));
            finish(g, "tune", &cfg, &inputs, &[p])
        }
        Command::Score { input, tuned } => {
            let cfg = load_config(g, Some(&input))?;
            let tuned_metrics: Vec<TunedMetric> = read_json(&tuned)?;
            let ds = ingest(&input, &cfg)?;
            let table = PriceTable::new(&ds.prices);
            let all = compute_metrics(&ds, &cfg, exec(g))?;
            let from = cfg.train_until.map_or(Timestamp(0), |t| Timestamp(t.0 + 1));
            let mut scores = Vec::new();
            let mut leads = Vec::new();
            let mut outputs = Vec::new();
            for (pool, pm) in ds.pools.iter().zip(&all) {
                let labels: Vec<Timestamp> = pool_labels(pool, &table, &cfg)?
                    .timestamps()
                    .into_iter()
                    .filter(|t| *t >= from)
                    .collect();
                let price = tracked_price(pool, &table, &cfg)?.slice(from, Timestamp(u64::MAX));
                let crossings = price_threshold_crossings(&price, cfg.price_threshold);
                for t in tuned_metrics.iter().filter(|t| t.pool_id == pool.entry.pool_id) {
                    let s = pm.get(&t.metric)?.slice(from, Timestamp(u64::MAX));
                    let sc = score_metric(&s, t, &labels, &cfg)?;
                    let cps: Vec<Timestamp> = sc.changepoints.iter().map(|c| c.ts).collect();
                    let p = g
                        .out_dir
                        .join("changepoints")
                        .join(&t.pool_id)
                        .join(format!("{}.csv", t.metric));
                    csvio::write_changepoints(&p, &sc.changepoints)?;
                    outputs.push(p);
                    scores.push(score_row(t, &sc.report));
                    let lt = depeg_core::pipeline::lead_times(&crossings, &cps, cfg.scoring.margin_m);
                    leads.extend(lead_rows(&t.pool_id, &t.metric, &lt));
                }
            }
            let sp = g.out_dir.join("scores.csv");
            let lp = g.out_dir.join("leads.csv");
            csvio::write_rows(&sp, &csvio::SCORES_HEADER, &scores)?;
            csvio::write_rows(&lp, &csvio::LEAD_HEADER, &leads)?;
            outputs.insert(0, lp);
            outputs.insert(0, sp);
            let mut inputs = input_files(&input);
            inputs.push(config_path(g, &input));
            inputs.push(tuned);
            finish(g, "score", &cfg, &inputs, &outputs)
        }
        Command::Report { run } => {
            let scores: Vec<ScoreRow> = csvio::read_rows(&run.join("scores.csv"), &csvio::SCORES_HEADER)?
                .into_iter()
                .map(|(_, r)| r)
                .collect();
            let leads: Vec<LeadRow> = csvio::read_rows(&run.join("leads.csv"), &csvio::LEAD_HEADER)?
                .into_iter()
                .map(|(_, r)| r)
                .collect();
            let text = render_report(&scores, &leads);
            print!("{text}");
            let p = g.out_dir.join("report.txt");
            std::fs::create_dir_all(&g.out_dir).map_err(|e| Error::Io {
                path: g.out_dir.clone(),
                source: e,
            })?;
            std::fs::write(&p, &text).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            Ok(())
        }
        Command::Verify { manifest } => {
            let n = verify_manifest(&manifest)?;
            println!("ok: {n} outputs match");
            Ok(())
        }
    }
}
