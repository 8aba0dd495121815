//! Subcommand definitions and implementations.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use probecount::backend::{Backend, BackendConfig, RoomInfo, TcpLink};
use probecount::dataset::{read_truth, samples_from_records, write_truth, LabeledDataset, TruthSeries};
use probecount::eval::{cross_validate, format_table, EvalOptions, EvalReport, SplitMode, SplitSpec};
use probecount::frame::{
    open_capture, probe_records, write_pcap, CaptureFormat, PcapReader, ProbeCapture, RawStreamReader, PCAP_MAGIC,
};
use probecount::sensor::{run_window, ManualClock, SensorConfig, SensorState, SystemClock};
use probecount::simulator::{generate_trace, Scenario};
use probecount::{train, ClassifyPolicy, MacAddress, OuiRegistry, SearchGrid, ThresholdGrid, TrainingBuffer};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::server::{self, ServeConfig};

pub const BACKEND_ENV: &str = "PROBECOUNT_BACKEND";
pub const IEEE_OUI_URL: &str = "https://standards-oui.ieee.org/oui/oui.txt";

#[derive(Debug, Parser)]
#[command(name = "probecount", version, about = "Room occupancy estimation from Wi-Fi probe requests")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic capture and ground-truth series from a scenario file.
    Simulate(SimulateArgs),
    /// Decode probe requests from a capture and classify their source MACs.
    Parse(ParseArgs),
    /// Classify MAC addresses (arguments, or one per line on stdin).
    Classify(ClassifyArgs),
    /// Calibrate model parameters from a capture and its ground truth.
    Train(TrainArgs),
    /// Cross-validate the estimator on labeled datasets.
    Evaluate(EvaluateArgs),
    /// Run a sensor node over a capture source.
    Sensor(SensorArgs),
    /// Run the backend service.
    Serve(ServeArgs),
    /// Download the IEEE OUI registry.
    FetchOui(FetchOuiArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Auto,
    Pcap,
    Raw,
}

#[derive(Debug, Args)]
pub struct RegistryArgs {
    /// OUI registry: IEEE oui.txt or a binary cache. Defaults to the bundled 20-entry fixture.
    #[arg(long, value_name = "FILE")]
    pub oui: Option<PathBuf>,
    /// Also treat locally-administered addresses as randomized.
    #[arg(long)]
    pub strict_local: bool,
}

impl RegistryArgs {
    fn load(&self) -> Result<OuiRegistry> {
        match &self.oui {
            Some(path) => {
                let reg = OuiRegistry::load(path).with_context(|| format!("reading OUI registry {}", path.display()))?;
                if reg.is_empty() {
                    log::warn!("{} holds no OUI entries; every MAC will be classified randomized", path.display());
                }
                Ok(reg)
            }
            None => Ok(OuiRegistry::fixture()),
        }
    }

    fn policy(&self) -> ClassifyPolicy {
        ClassifyPolicy { strict_local: self.strict_local }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_name = "FILE")]
    pub scenario: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out_pcap: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out_truth: PathBuf,
    /// Also write a labeled dataset (counter snapshots + truth) as JSON.
    #[arg(long, value_name = "FILE")]
    pub out_dataset: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Threshold grid for --out-dataset.
    #[arg(long, default_value = "default")]
    pub grid: ThresholdGrid,
    #[command(flatten)]
    pub registry: RegistryArgs,
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    #[arg(long, value_name = "FILE")]
    pub pcap: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    pub format: FormatArg,
    /// One JSON object per record instead of tab-separated text.
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub registry: RegistryArgs,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    pub macs: Vec<String>,
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub registry: RegistryArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    pub pcap: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    pub format: FormatArg,
    /// Ground-truth series (`# window_duration_s=N` header, `<epoch_s> <count>` lines).
    #[arg(long, value_name = "FILE")]
    pub truth: PathBuf,
    #[arg(long, default_value = "default")]
    pub grid: ThresholdGrid,
    /// Train on the most recent N labeled windows, as the sensor's FIFO buffer would.
    #[arg(long, default_value_t = 40)]
    pub buffer: usize,
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub registry: RegistryArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    MonteCarlo,
    DisjointFolds,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Labeled dataset JSON file(s); one report row per file.
    #[arg(long, value_name = "FILE", conflicts_with_all = ["event_log", "pcap"])]
    pub dataset: Vec<PathBuf>,
    /// Build the dataset from a backend event-log directory (reports that carried ground truth).
    #[arg(long, value_name = "DIR", requires_all = ["room", "seats"], conflicts_with = "pcap")]
    pub event_log: Option<PathBuf>,
    /// Build the dataset from a capture plus a ground-truth series.
    #[arg(long, value_name = "FILE", requires_all = ["truth", "room", "seats"])]
    pub pcap: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub room: Option<String>,
    #[arg(long)]
    pub seats: Option<u32>,
    #[arg(long, default_value = "default")]
    pub grid: ThresholdGrid,
    #[arg(long, default_value_t = 40)]
    pub train_size: usize,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "monte-carlo")]
    pub mode: ModeArg,
    /// Score rounded estimates instead of raw ones.
    #[arg(long)]
    pub rounded: bool,
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub registry: RegistryArgs,
}

#[derive(Debug, Args)]
pub struct SensorArgs {
    /// Sensor configuration JSON.
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    /// Capture to replay; `-` reads a live stream from stdin.
    #[arg(long, value_name = "FILE")]
    pub capture: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    pub format: FormatArg,
    /// Backend `host:port`, overriding the config file.
    #[arg(long, env = BACKEND_ENV)]
    pub backend: Option<String>,
    /// Seed for the synthetic environment readings, overriding the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Pace windows by the wall clock instead of capture timestamps.
    #[arg(long)]
    pub realtime: bool,
    /// Stop after this many windows.
    #[arg(long)]
    pub max_windows: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Backend configuration JSON (rooms, log_dir, listener addresses).
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    #[arg(long, value_name = "ADDR")]
    pub http: Option<String>,
    #[arg(long, value_name = "ADDR")]
    pub tcp: Option<String>,
    #[arg(long, value_name = "DIR")]
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FetchOuiArgs {
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long, default_value = IEEE_OUI_URL)]
    pub url: String,
    /// Also write a binary cache for faster loading.
    #[arg(long, value_name = "FILE")]
    pub cache: Option<PathBuf>,
}

/// Sensor config file: [`SensorConfig`] plus the registry path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensorFileConfig {
    #[serde(flatten)]
    pub sensor: SensorConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oui: Option<PathBuf>,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut de = serde_json::Deserializer::from_reader(BufReader::new(file));
    serde_path_to_error::deserialize(&mut de)
        .map_err(|e| anyhow::anyhow!("{}: invalid at {}: {}", path.display(), e.path(), e.inner()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush().with_context(|| format!("writing {}", path.display()))
}

fn resolve_format(path: &Path, format: FormatArg) -> Result<CaptureFormat> {
    match format {
        FormatArg::Pcap => Ok(CaptureFormat::Pcap),
        FormatArg::Raw => Ok(CaptureFormat::RawStream),
        FormatArg::Auto => {
            let mut magic = [0u8; 4];
            let mut f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let n = f.read(&mut magic)?;
            Ok(if n == 4 && u32::from_le_bytes(magic) == PCAP_MAGIC { CaptureFormat::Pcap } else { CaptureFormat::RawStream })
        }
    }
}

fn load_capture(path: &Path, format: FormatArg) -> Result<ProbeCapture> {
    let format = resolve_format(path, format)?;
    let capture = open_capture(path, format).with_context(|| format!("reading capture {}", path.display()))?;
    let s = capture.stats;
    log::info!(
        "{}: {} packets, {} probe requests, {} other, {} malformed",
        path.display(),
        s.packets,
        s.probes,
        s.skipped,
        s.malformed
    );
    Ok(capture)
}

fn load_truth(path: &Path) -> Result<TruthSeries> {
    let file = File::open(path).with_context(|| format!("opening ground truth {}", path.display()))?;
    read_truth(BufReader::new(file)).with_context(|| format!("reading ground truth {}", path.display()))
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let mut scenario: Scenario = read_json(&args.scenario)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let registry = args.registry.load()?;
    let trace = generate_trace(&scenario, &registry.ouis()).context("generating trace")?;
    write_pcap(&args.out_pcap, &trace.records).with_context(|| format!("writing {}", args.out_pcap.display()))?;
    let truth = TruthSeries { window_duration_s: trace.window_duration_s, points: trace.truth.clone() };
    let file = File::create(&args.out_truth).with_context(|| format!("creating {}", args.out_truth.display()))?;
    write_truth(BufWriter::new(file), &truth).with_context(|| format!("writing {}", args.out_truth.display()))?;
    if let Some(path) = &args.out_dataset {
        let samples = samples_from_records(&trace.records, &truth, &registry, args.registry.policy(), &args.grid);
        let dataset = LabeledDataset {
            room_id: scenario.room.room_id.clone(),
            seats: scenario.room.seats,
            area_m2: Some(scenario.room.area_m2),
            samples,
        };
        write_json(path, &dataset)?;
    }
    println!("records {} windows {}", trace.records.len(), trace.truth.len());
    Ok(())
}

#[derive(Serialize)]
struct ClassifiedRecord<'a> {
    #[serde(flatten)]
    record: &'a probecount::ProbeRecord,
    class: probecount::MacClass,
    #[serde(skip_serializing_if = "Option::is_none")]
    vendor: Option<&'a str>,
}

pub fn parse(args: &ParseArgs) -> Result<()> {
    let registry = args.registry.load()?;
    let capture = load_capture(&args.pcap, args.format)?;
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for r in &capture.records {
        let class = registry.classify_with(r.source_mac, args.registry.policy());
        let vendor = registry.vendor_of(r.source_mac);
        if args.json {
            serde_json::to_writer(&mut out, &ClassifiedRecord { record: r, class, vendor })?;
            writeln!(out)?;
        } else {
            let rss = r.rss_dbm.map_or_else(|| "-".to_string(), |v| v.to_string());
            let ssid = r.ssid.as_deref().map(String::from_utf8_lossy).unwrap_or_default();
            let class = serde_json::to_value(class)?;
            writeln!(out, "{}\t{}\t{}\t{}\t{}", r.timestamp_us, r.source_mac, rss, class.as_str().unwrap_or(""), ssid)?;
        }
    }
    out.flush()?;
    eprintln!("{} probe requests", capture.records.len());
    Ok(())
}

pub fn classify(args: &ClassifyArgs) -> Result<()> {
    let registry = args.registry.load()?;
    let inputs: Vec<String> = if args.macs.is_empty() {
        io::stdin().lock().lines().collect::<io::Result<Vec<_>>>()?
    } else {
        args.macs.clone()
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for input in inputs.iter().map(|s| s.trim()).filter(|s| !s.is_empty()) {
        let mac: MacAddress = input.parse().with_context(|| format!("invalid MAC address {input:?}"))?;
        let class = registry.classify_with(mac, args.registry.policy());
        let vendor = registry.vendor_of(mac);
        if args.json {
            let v = serde_json::json!({"mac": mac, "class": class, "vendor": vendor});
            writeln!(out, "{v}")?;
        } else {
            let class = serde_json::to_value(class)?;
            writeln!(out, "{mac}\t{}\t{}", class.as_str().unwrap_or(""), vendor.unwrap_or("-"))?;
        }
    }
    Ok(())
}

pub fn train_cmd(args: &TrainArgs) -> Result<()> {
    ensure!(args.buffer > 0, "--buffer must be at least 1");
    let registry = args.registry.load()?;
    let capture = load_capture(&args.pcap, args.format)?;
    let truth = load_truth(&args.truth)?;
    let samples = samples_from_records(&capture.records, &truth, &registry, args.registry.policy(), &args.grid);
    if samples.is_empty() {
        bail!("{} has no ground-truth windows", args.truth.display());
    }
    let mut buffer = TrainingBuffer::new(args.buffer);
    for s in samples {
        buffer.push(s);
    }
    let fit = train(&buffer, &SearchGrid::default())?;
    let p = fit.params;
    if args.json {
        let v = serde_json::json!({
            "alpha": p.alpha,
            "beta": p.beta,
            "theta_index": p.theta_index,
            "theta_dbm": p.theta_dbm,
            "mse": fit.mse,
            "samples": buffer.len(),
        });
        println!("{v}");
    } else {
        println!(
            "alpha {:.1} beta {:.1} theta_dbm {} (index {}) mse {:.4} samples {}",
            p.alpha,
            p.beta,
            p.theta_dbm,
            p.theta_index,
            fit.mse,
            buffer.len()
        );
    }
    Ok(())
}

fn evaluation_datasets(args: &EvaluateArgs) -> Result<Vec<LabeledDataset>> {
    if let Some(dir) = &args.event_log {
        ensure!(dir.is_dir(), "event log directory {} does not exist", dir.display());
        let room = args.room.clone().expect("clap requires --room");
        let config = BackendConfig {
            rooms: vec![RoomInfo { room_id: room.clone(), seats: args.seats.expect("clap requires --seats"), area_m2: None }],
            log_dir: Some(dir.clone()),
        };
        let backend = Backend::open(&config).with_context(|| format!("replaying {}", dir.display()))?;
        return Ok(vec![backend.labeled_dataset(&room)?]);
    }
    if let Some(pcap) = &args.pcap {
        let registry = args.registry.load()?;
        let capture = load_capture(pcap, FormatArg::Auto)?;
        let truth = load_truth(args.truth.as_deref().expect("clap requires --truth"))?;
        let samples = samples_from_records(&capture.records, &truth, &registry, args.registry.policy(), &args.grid);
        return Ok(vec![LabeledDataset {
            room_id: args.room.clone().expect("clap requires --room"),
            seats: args.seats.expect("clap requires --seats"),
            area_m2: None,
            samples,
        }]);
    }
    if args.dataset.is_empty() {
        bail!("one of --dataset, --event-log or --pcap is required");
    }
    args.dataset.iter().map(|p| read_json(p)).collect()
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let spec = SplitSpec {
        train_size: args.train_size,
        repeats: args.repeats,
        seed: args.seed,
        mode: match args.mode {
            ModeArg::MonteCarlo => SplitMode::MonteCarlo,
            ModeArg::DisjointFolds => SplitMode::DisjointFolds,
        },
    };
    let options = EvalOptions { rounded: args.rounded };
    let reports: Vec<EvalReport> = evaluation_datasets(args)?
        .iter()
        .map(|ds| cross_validate(ds, &spec, &SearchGrid::default(), options).with_context(|| format!("room {}", ds.room_id)))
        .collect::<Result<_>>()?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&reports)?);
    } else {
        for r in &reports {
            for rep in &r.repeats {
                println!(
                    "{} repeat {}: alpha {:.1} beta {:.1} theta {} rmse {:.4} mae {:.4} error {:.2}%",
                    r.room_id, rep.repeat, rep.params.alpha, rep.params.beta, rep.params.theta_dbm, rep.rmse, rep.mae, rep.pct_error
                );
            }
        }
        println!();
        print!("{}", format_table(&reports));
    }
    Ok(())
}

fn packet_source(path: &Path, format: FormatArg) -> Result<Box<dyn Iterator<Item = probecount::ProbeRecord>>> {
    let stdin = path.as_os_str() == "-";
    let format = match (format, stdin) {
        (FormatArg::Auto, true) => CaptureFormat::RawStream,
        (f, false) => resolve_format(path, f)?,
        (FormatArg::Pcap, true) => CaptureFormat::Pcap,
        (FormatArg::Raw, true) => CaptureFormat::RawStream,
    };
    let reader: Box<dyn Read> = if stdin {
        Box::new(BufReader::new(io::stdin()))
    } else {
        Box::new(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
    };
    Ok(match format {
        CaptureFormat::Pcap => Box::new(probe_records(PcapReader::new(reader).context("reading pcap header")?)),
        CaptureFormat::RawStream => Box::new(probe_records(RawStreamReader::new(reader))),
    })
}

pub fn sensor(args: &SensorArgs) -> Result<()> {
    let mut file: SensorFileConfig = read_json(&args.config)?;
    if let Some(addr) = &args.backend {
        file.sensor.backend = addr.clone();
    }
    if let Some(seed) = args.seed {
        file.sensor.seed = seed;
    }
    let config = file.sensor;
    ensure!(config.window_duration_s > 0, "window_duration_s must be positive");
    let registry = RegistryArgs { oui: file.oui, strict_local: config.policy.strict_local }.load()?;
    let mut frames = packet_source(&args.capture, args.format)?.peekable();
    let mut link = TcpLink::new(config.backend.clone());
    let mut state = SensorState::new(&config);
    let mut manual = ManualClock::new(0);
    let mut system = SystemClock;
    let stdout = io::stdout();
    let mut windows = 0;
    while args.max_windows.is_none_or(|m| windows < m) {
        let outcome = if args.realtime {
            run_window(&mut state, &config, &registry, &mut frames, &mut system, &mut link)?
        } else {
            run_window(&mut state, &config, &registry, &mut frames, &mut manual, &mut link)?
        };
        let Some(o) = outcome else { break };
        windows += 1;
        let mut out = stdout.lock();
        serde_json::to_writer(&mut out, &o.report)?;
        writeln!(out)?;
        out.flush()?;
        if o.queued > 0 {
            log::warn!("{} report(s) waiting for the backend at {}", o.queued, config.backend);
        }
        if o.report.partial {
            break;
        }
    }
    if state.queued() > 0 {
        log::warn!("exiting with {} undelivered report(s)", state.queued());
    }
    Ok(())
}

pub fn serve(args: &ServeArgs) -> Result<()> {
    let mut config: ServeConfig = read_json(&args.config)?;
    if let Some(a) = &args.http {
        config.http_addr = a.clone();
    }
    if let Some(a) = &args.tcp {
        config.tcp_addr = a.clone();
    }
    if let Some(d) = &args.static_dir {
        config.static_dir = Some(d.clone());
    }
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let running = server::start(&config).await?;
        eprintln!("http listening on {}", running.http_addr);
        eprintln!("line-JSON listening on {}", running.tcp_addr);
        tokio::select! {
            r = running.wait() => r,
            _ = tokio::signal::ctrl_c() => Ok(()),
        }
    })
}

pub fn fetch_oui(args: &FetchOuiArgs) -> Result<()> {
    let text = ureq::get(&args.url)
        .call()
        .with_context(|| format!("downloading {}", args.url))?
        .body_mut()
        .with_config()
        .limit(64 * 1024 * 1024)
        .read_to_string()
        .with_context(|| format!("reading {}", args.url))?;
    let parsed = OuiRegistry::parse(&text);
    ensure!(parsed.parsed > 0, "{} contained no OUI entries", args.url);
    std::fs::write(&args.out, &text).with_context(|| format!("writing {}", args.out.display()))?;
    if let Some(cache) = &args.cache {
        let date = chrono::Utc::now().format("%Y-%m-%d").to_string();
        let file = File::create(cache).with_context(|| format!("creating {}", cache.display()))?;
        parsed.registry.with_snapshot_date(date).write_cache(BufWriter::new(file))?;
    }
    println!("{} entries ({} duplicates, {} skipped lines)", parsed.parsed, parsed.duplicates, parsed.skipped);
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Parse(a) => parse(a),
        Command::Classify(a) => classify(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Sensor(a) => sensor(a),
        Command::Serve(a) => serve(a),
        Command::FetchOui(a) => fetch_oui(a),
    }
}
