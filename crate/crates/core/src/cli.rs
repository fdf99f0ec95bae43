//! The `beamforge` command line. Every subcommand is a thin wrapper over one
//! library operation: data goes to stdout, diagnostics to stderr.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error.

use std::fmt::Display;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::archive::{self, MediaSpec};
use crate::beamio::{self, FilterbankBlock, PulsarSpec};
use crate::clientloop::{self, ClientConfig, ClientHooks};
use crate::clustersim::{self, SimSummary};
use crate::config::GlobalConfig;
use crate::dedisp::{self, DmTrialGrid};
use crate::periodsearch::{self, BirdieList, SearchParams};
use crate::sensitivity::{self, SensitivityParams};
use crate::workqueue::{Command, Phase, SharedDir};

#[derive(Parser, Debug)]
#[command(name = "beamforge", version, about = "Distributed pulsar search pipeline")]
pub struct Cli {
    /// Configuration file (`key = value` lines)
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Log progress to stderr (repeat for more detail)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Write a synthetic 1-bit beam, optionally with a pulsar
    Synth(SynthCmd),
    /// Sum channel and time groups of a 1-bit beam into 8-bit samples
    Decimate(DecimateCmd),
    /// Dedisperse a beam at one or more DMs and print the time series
    Dedisperse(DedisperseCmd),
    /// Run the periodicity search over a DM grid and print candidates
    Search(SearchCmd),
    /// Print minimum detectable flux density against period
    Sensitivity(SensitivityCmd),
    /// Create the shared beam database
    DbInit(DbInitCmd),
    /// Run a processing client until the queue is empty or it is stopped
    Client(ClientCmd),
    /// Print queue and client status
    Monitor(SharedArg),
    /// Return stale claims (and optionally failed beams) to the queue
    Requeue(RequeueCmd),
    /// Write or clear a RUN/PAUSE/STOP control file
    Control(ControlCmd),
    /// Simulate the cluster with per-machine stage timings
    Simulate(SimulateCmd),
    /// Plan one disc per pointing and write description files and the index
    ArchivePlan(ArchivePlanCmd),
    /// Compare archive media costs
    CostTable(CostTableCmd),
}

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    /// Pulsar as `PERIOD[ms|s]:DM[:DUTY]`, e.g. `100ms:60:0.05`
    #[arg(long, value_name = "SPEC")]
    pub pulsar: Option<String>,
    /// On-pulse probability excess
    #[arg(long, default_value_t = 0.05)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub channels: Option<u32>,
    #[arg(long)]
    pub samples: Option<u64>,
    #[arg(long, value_name = "MS")]
    pub t_samp_ms: Option<f64>,
    #[arg(long, value_name = "MHZ")]
    pub chan_bw_mhz: Option<f64>,
    /// Centre frequency of channel 0 (the highest)
    #[arg(long, value_name = "MHZ")]
    pub f_highest_mhz: Option<f64>,
    #[arg(long, default_value = "synthetic")]
    pub beam_id: String,
}

#[derive(Args, Debug)]
pub struct SynthCmd {
    #[command(flatten)]
    pub synth: SynthArgs,
    /// Output file, `-` for stdout
    #[arg(short, long, default_value = "-")]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct FactorArgs {
    #[arg(long)]
    pub chan_factor: Option<usize>,
    #[arg(long)]
    pub time_factor: Option<usize>,
}

#[derive(Args, Debug)]
pub struct DecimateCmd {
    /// Input beam, `-` for stdin
    #[arg(default_value = "-")]
    pub input: PathBuf,
    #[command(flatten)]
    pub factors: FactorArgs,
    #[arg(short, long, default_value = "-")]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct DedisperseCmd {
    #[arg(default_value = "-")]
    pub input: PathBuf,
    /// Comma-separated DM values
    #[arg(long, value_delimiter = ',', required = true)]
    pub dm: Vec<f64>,
}

#[derive(Args, Debug)]
pub struct GridArgs {
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub dm_min: Option<f64>,
    #[arg(long)]
    pub dm_max: Option<f64>,
    #[arg(long)]
    pub snr: Option<f64>,
    #[arg(long)]
    pub max_candidates: Option<usize>,
    /// Birdie list: `center_hz half_width_hz` per line
    #[arg(long, value_name = "FILE")]
    pub birdies: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SearchCmd {
    /// Input beam, `-` for stdin; not allowed with --synth
    pub input: Option<PathBuf>,
    /// Search a beam synthesised in memory instead of reading one
    #[arg(long)]
    pub synth: bool,
    #[command(flatten)]
    pub synth_args: SynthArgs,
    /// Aggregate a 1-bit input before searching
    #[arg(long)]
    pub decimate: bool,
    #[command(flatten)]
    pub factors: FactorArgs,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Args, Debug)]
pub struct SensitivityCmd {
    /// Comma-separated DM values
    #[arg(long, value_delimiter = ',', default_value = "0,20,40,60,80,100")]
    pub dm: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub p_min_ms: f64,
    #[arg(long, default_value_t = 10_000.0)]
    pub p_max_ms: f64,
    #[arg(long, default_value_t = 100)]
    pub points: usize,
    #[arg(long)]
    pub duty: Option<f64>,
    #[arg(long)]
    pub snr_min: Option<f64>,
    #[arg(long)]
    pub t_obs_s: Option<f64>,
    #[arg(long)]
    pub t_sys_k: Option<f64>,
    #[arg(long)]
    pub gain_k_per_jy: Option<f64>,
    #[arg(long)]
    pub t_samp_ms: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SharedArg {
    /// Shared directory (default: config `shared_dir`, then BEAMFORGE_SHARED)
    #[arg(long, value_name = "DIR")]
    pub shared: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DbInitCmd {
    #[command(flatten)]
    pub shared: SharedArg,
    /// Beam list, one `beam_id data_path` per line (paths relative to the shared dir)
    #[arg(long, value_name = "FILE", conflicts_with = "scan")]
    pub beams: Option<PathBuf>,
    /// Register every `*.fil` file under this directory of the shared dir
    #[arg(long, value_name = "SUBDIR")]
    pub scan: Option<PathBuf>,
    /// Replace an existing database
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct ClientCmd {
    #[command(flatten)]
    pub shared: SharedArg,
    #[arg(long)]
    pub id: String,
    /// Local working directory
    #[arg(long, value_name = "DIR")]
    pub scratch: Option<PathBuf>,
    #[command(flatten)]
    pub factors: FactorArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, hide = true)]
    pub poll: Option<f64>,
    #[arg(long, hide = true)]
    pub heartbeat: Option<f64>,
    #[arg(long, hide = true)]
    pub stagger_slot: Option<f64>,
    #[arg(long, hide = true)]
    pub lock_stale: Option<u64>,
    #[arg(long, hide = true, value_name = "FILE")]
    pub lock_trace: Option<PathBuf>,
    /// Probability per beam of the process killing itself mid-beam
    #[arg(long, hide = true, default_value_t = 0.0)]
    pub fault_rate: f64,
    #[arg(long, hide = true, default_value_t = 0)]
    pub fault_seed: u64,
}

#[derive(Args, Debug)]
pub struct RequeueCmd {
    #[command(flatten)]
    pub shared: SharedArg,
    /// Seconds without a heartbeat before a claim is stale
    #[arg(long, default_value_t = crate::workqueue::DEFAULT_CLAIM_STALE_SECS)]
    pub stale_secs: u64,
    /// Also return FAILED beams with attempts left
    #[arg(long)]
    pub failed: bool,
    /// With --failed, ignore the attempt limit
    #[arg(long, requires = "failed")]
    pub force: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum ControlWord {
    Run,
    Pause,
    Stop,
    Clear,
    Show,
}

#[derive(Args, Debug)]
pub struct ControlCmd {
    #[command(flatten)]
    pub shared: SharedArg,
    pub action: ControlWord,
    /// Target one client instead of all
    #[arg(long)]
    pub client: Option<String>,
}

#[derive(Args, Debug)]
pub struct SimulateCmd {
    /// Machine profiles CSV (default: the seven measured machines)
    #[arg(long, value_name = "FILE")]
    pub profiles: Option<PathBuf>,
    #[arg(long, default_value_t = archive::SURVEY_BEAMS)]
    pub beams: usize,
    /// Let downloads run concurrently, sharing the link
    #[arg(long)]
    pub no_stagger: bool,
    /// Write the per-beam event trace as CSV
    #[arg(long, value_name = "FILE")]
    pub events: Option<PathBuf>,
    /// Print the profiles CSV and exit
    #[arg(long)]
    pub print_profiles: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum MediaKind {
    Dvd,
    Tape,
}

#[derive(Args, Debug)]
pub struct ArchivePlanCmd {
    /// Pointings CSV `pointing_id,source,date,beam_id,ra_deg,dec_deg,bytes`
    #[arg(long, value_name = "FILE", conflicts_with = "synthetic")]
    pub pointings: Option<PathBuf>,
    /// Plan a generated survey of this many pointings
    #[arg(long, value_name = "N")]
    pub synthetic: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = archive::SURVEY_BEAM_BYTES)]
    pub bytes_per_beam: u64,
    #[arg(long, value_enum, default_value = "dvd")]
    pub media: MediaKind,
    /// Write description files and index.csv/index.html here
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CostTableCmd {
    /// Use the shipped June 2003 prices and survey volume, ignoring the config
    #[arg(long)]
    pub defaults: bool,
    #[arg(long, default_value_t = archive::SURVEY_TOTAL_GB)]
    pub total_gb: f64,
    #[arg(long, default_value_t = archive::SURVEY_DVD_UNITS)]
    pub dvd_units: u32,
    #[arg(long, default_value_t = archive::SURVEY_DLT_UNITS)]
    pub tape_units: u32,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain(String),
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Domain(e.to_string())
    }
}

fn domain(e: impl Display) -> CliError {
    CliError::Domain(e.to_string())
}

type CliResult = Result<(), CliError>;

fn is_stdio(p: &Path) -> bool {
    p.as_os_str() == "-"
}

fn read_input(p: &Path) -> Result<FilterbankBlock, CliError> {
    if is_stdio(p) {
        let mut bytes = Vec::new();
        io::stdin().lock().read_to_end(&mut bytes)?;
        Ok(FilterbankBlock::from_bytes(&bytes)?)
    } else {
        Ok(beamio::read_block(p)?)
    }
}

fn write_output(p: &Path, bytes: &[u8]) -> CliResult {
    if is_stdio(p) {
        emit(bytes)
    } else {
        fs::write(p, bytes).map_err(|e| domain(format!("{}: {e}", p.display())))
    }
}

fn emit(bytes: &[u8]) -> CliResult {
    let mut out = io::stdout().lock();
    match out.write_all(bytes).and_then(|_| out.flush()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

/// `PERIOD[ms|s]:DM[:DUTY]`.
pub fn parse_pulsar(spec: &str, amplitude: f64) -> Result<PulsarSpec, CliError> {
    let bad = || CliError::Usage(format!("--pulsar `{spec}`: expected PERIOD[ms|s]:DM[:DUTY]"));
    let parts: Vec<&str> = spec.split(':').collect();
    if !(2..=3).contains(&parts.len()) {
        return Err(bad());
    }
    let p = parts[0].trim();
    let period_ms = if let Some(v) = p.strip_suffix("ms") {
        v.parse::<f64>().map_err(|_| bad())?
    } else if let Some(v) = p.strip_suffix('s') {
        v.parse::<f64>().map_err(|_| bad())? * 1e3
    } else {
        p.parse::<f64>().map_err(|_| bad())?
    };
    let dm: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let mut psr = PulsarSpec::new(period_ms, dm).with_amplitude(amplitude);
    if let Some(d) = parts.get(2) {
        psr = psr.with_duty(d.trim().parse().map_err(|_| bad())?);
    }
    Ok(psr)
}

pub fn synth_block(a: &SynthArgs, cfg: &GlobalConfig) -> Result<FilterbankBlock, CliError> {
    let params = beamio::ObservationParams::new(
        a.channels.unwrap_or(cfg.n_channels),
        a.chan_bw_mhz.unwrap_or(cfg.channel_bw_mhz),
        a.f_highest_mhz.unwrap_or(cfg.f_highest_mhz),
        a.t_samp_ms.unwrap_or(cfg.t_samp_ms),
        a.samples.unwrap_or(cfg.n_samples),
        1,
    )?
    .with_beam_id(a.beam_id.clone());
    let psr = a
        .pulsar
        .as_deref()
        .map(|s| parse_pulsar(s, a.amplitude))
        .transpose()?;
    Ok(beamio::synthesize_beam(&params, psr.as_ref(), a.seed)?)
}

fn factors(f: &FactorArgs, cfg: &GlobalConfig) -> (usize, usize) {
    (
        f.chan_factor.unwrap_or(cfg.chan_factor),
        f.time_factor.unwrap_or(cfg.time_factor),
    )
}

fn load_birdies(p: Option<&Path>) -> Result<BirdieList, CliError> {
    match p {
        None => Ok(BirdieList::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| domain(format!("{}: {e}", p.display())))?;
            BirdieList::parse(&text).map_err(domain)
        }
    }
}

fn grid(g: &GridArgs, cfg: &GlobalConfig) -> Result<DmTrialGrid, CliError> {
    let n = g.trials.unwrap_or(cfg.dm_trials);
    let lo = g.dm_min.unwrap_or(cfg.dm_min);
    let hi = g.dm_max.unwrap_or(cfg.dm_max);
    if n == 1 {
        return Ok(DmTrialGrid::from_values(vec![lo])?);
    }
    Ok(dedisp::make_dm_grid(n, lo, hi)?)
}

fn cmd_synth(c: SynthCmd, cfg: &GlobalConfig) -> CliResult {
    let block = synth_block(&c.synth, cfg)?;
    write_output(&c.output, &block.to_bytes())
}

fn cmd_decimate(c: DecimateCmd, cfg: &GlobalConfig) -> CliResult {
    let block = read_input(&c.input)?;
    let (cf, tf) = factors(&c.factors, cfg);
    let out = beamio::decimate(&block, cf, tf)?;
    write_output(&c.output, &out.to_bytes())
}

fn cmd_dedisperse(c: DedisperseCmd) -> CliResult {
    let block = read_input(&c.input)?;
    let dd = dedisp::Dedisperser::new(&block);
    let series = c
        .dm
        .iter()
        .map(|&dm| dd.dedisperse(dm))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = String::from("sample");
    for s in &series {
        out.push_str(&format!("\tdm_{}", s.dm));
    }
    out.push('\n');
    let n = series.iter().map(|s| s.len()).min().unwrap_or(0);
    for i in 0..n {
        out.push_str(&i.to_string());
        for s in &series {
            out.push_str(&format!("\t{}", s.values[i]));
        }
        out.push('\n');
    }
    emit(out.as_bytes())
}

fn cmd_search(c: SearchCmd, cfg: &GlobalConfig) -> CliResult {
    let mut block = match (c.synth, &c.input) {
        (true, Some(_)) => return Err(CliError::Usage("--synth takes no input file".into())),
        (true, None) => synth_block(&c.synth_args, cfg)?,
        (false, input) => {
            if c.synth_args.pulsar.is_some() {
                return Err(CliError::Usage("--pulsar needs --synth".into()));
            }
            read_input(input.as_deref().unwrap_or(Path::new("-")))?
        }
    };
    if c.decimate {
        let (cf, tf) = factors(&c.factors, cfg);
        block = beamio::decimate(&block, cf, tf)?;
    }
    let grid = grid(&c.grid, cfg)?;
    let birdies = load_birdies(c.grid.birdies.as_deref())?;
    let params = SearchParams {
        snr_threshold: c.grid.snr.unwrap_or(cfg.snr_threshold),
        max_candidates: c.grid.max_candidates.unwrap_or(cfg.max_candidates),
        n_fft: None,
    };
    let all = periodsearch::hunt(&block, &grid, &birdies, &params, &|| {})?;
    let best = periodsearch::best(all, params.max_candidates);
    emit(periodsearch::format_candidates(&best).as_bytes())
}

fn cmd_sensitivity(c: SensitivityCmd) -> CliResult {
    let mut p = SensitivityParams::default();
    if let Some(v) = c.duty {
        p.duty_cycle = v;
    }
    if let Some(v) = c.snr_min {
        p.snr_min = v;
    }
    if let Some(v) = c.t_obs_s {
        p.t_obs_s = v;
    }
    if let Some(v) = c.t_sys_k {
        p.t_sys_k = v;
    }
    if let Some(v) = c.gain_k_per_jy {
        p.gain_k_per_jy = v;
    }
    if let Some(v) = c.t_samp_ms {
        p.t_samp_ms = v;
    }
    if !(c.p_min_ms > 0.0 && c.p_max_ms >= c.p_min_ms) {
        return Err(CliError::Usage("need 0 < --p-min-ms <= --p-max-ms".into()));
    }
    let periods = sensitivity::log_period_grid(c.p_min_ms, c.p_max_ms, c.points);
    let rows = sensitivity::sensitivity_curve(&p, &c.dm, &periods)?;
    emit(sensitivity::curve_csv(&rows).as_bytes())
}

fn shared_dir(a: &SharedArg, cfg: &GlobalConfig) -> Result<PathBuf, CliError> {
    cfg.resolve_shared(a.shared.as_deref())
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn cmd_db_init(c: DbInitCmd, cfg: &GlobalConfig) -> CliResult {
    let root = shared_dir(&c.shared, cfg)?;
    let beams: Vec<(String, String)> = match (&c.beams, &c.scan) {
        (Some(list), None) => {
            let text = fs::read_to_string(list).map_err(|e| domain(format!("{}: {e}", list.display())))?;
            let mut out = Vec::new();
            for (i, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let mut f = line.split_whitespace();
                match (f.next(), f.next(), f.next()) {
                    (Some(id), Some(path), None) => out.push((id.to_string(), path.to_string())),
                    _ => return Err(domain(format!("{}:{}: expected `beam_id data_path`", list.display(), i + 1))),
                }
            }
            out
        }
        (None, Some(sub)) => {
            let mut out = Vec::new();
            for entry in fs::read_dir(root.join(sub))? {
                let path = entry?.path();
                if path.extension().and_then(|e| e.to_str()) == Some("fil") {
                    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
                    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or_default();
                    out.push((id, sub.join(name).to_string_lossy().into_owned()));
                }
            }
            out.sort();
            out
        }
        _ => return Err(CliError::Usage("give one of --beams or --scan".into())),
    };
    let db = SharedDir::new(&root).init_db(&beams, c.force)?;
    eprintln!("initialised {} beams in {}", db.records.len(), root.display());
    Ok(())
}

/// Kills the process at a random phase of a random subset of beams.
struct FaultInjector {
    rate: f64,
    state: Mutex<(ChaCha8Rng, Option<Phase>)>,
}

impl ClientHooks for FaultInjector {
    fn on_phase(&self, _beam: &str, phase: Phase) {
        let mut s = self.state.lock().unwrap_or_else(|p| p.into_inner());
        if phase == Phase::Download {
            s.1 = if s.0.gen_bool(self.rate) {
                const AT: [Phase; 4] = [Phase::Download, Phase::Decimate, Phase::Hunt, Phase::Upload];
                Some(AT[s.0.gen_range(0..AT.len())])
            } else {
                None
            };
        }
        if s.1 == Some(phase) {
            // Like a power cut: no cleanup, claims and status stay behind.
            std::process::exit(137);
        }
    }
}

fn cmd_client(c: ClientCmd, cfg: &GlobalConfig) -> CliResult {
    let root = shared_dir(&c.shared, cfg)?;
    let scratch = c
        .scratch
        .clone()
        .or_else(|| cfg.scratch_dir.clone())
        .unwrap_or_else(|| std::env::temp_dir().join(format!("beamforge-{}", c.id)));
    let mut cc = ClientConfig::new(&c.id, root, scratch);
    let (cf, tf) = factors(&c.factors, cfg);
    cc.chan_factor = cf;
    cc.time_factor = tf;
    cc.n_trials = c.grid.trials.unwrap_or(cfg.dm_trials);
    cc.dm_max = c.grid.dm_max.unwrap_or(cfg.dm_max);
    cc.snr_threshold = c.grid.snr.unwrap_or(cfg.snr_threshold);
    cc.max_candidates = c.grid.max_candidates.unwrap_or(cfg.max_candidates);
    cc.birdies = load_birdies(c.grid.birdies.as_deref())?;
    if let Some(v) = c.poll {
        cc.poll_interval_s = v;
    }
    if let Some(v) = c.heartbeat {
        cc.heartbeat_s = v;
    }
    if let Some(v) = c.stagger_slot {
        cc.stagger_slot_s = v;
    }
    if let Some(v) = c.lock_stale {
        cc.lock_stale_secs = v;
    }
    cc.lock_trace = c.lock_trace.clone();
    if !(0.0..=1.0).contains(&c.fault_rate) {
        return Err(CliError::Usage("--fault-rate must be in [0, 1]".into()));
    }
    let hooks = FaultInjector {
        rate: c.fault_rate,
        state: Mutex::new((ChaCha8Rng::seed_from_u64(c.fault_seed), None)),
    };
    let summary = clientloop::run_client_with_hooks(&cc, &hooks)?;
    emit(format!("{summary}\n").as_bytes())
}

fn cmd_monitor(a: SharedArg, cfg: &GlobalConfig) -> CliResult {
    let q = SharedDir::new(shared_dir(&a, cfg)?);
    emit(q.monitor_snapshot()?.to_string().as_bytes())
}

fn cmd_requeue(c: RequeueCmd, cfg: &GlobalConfig) -> CliResult {
    let q = SharedDir::new(shared_dir(&c.shared, cfg)?);
    let stale = q.requeue_stale(c.stale_secs)?;
    let mut out = format!("stale_requeued\t{stale}\n");
    if c.failed {
        let failed = q.requeue_failed(c.force)?;
        out.push_str(&format!("failed_requeued\t{failed}\n"));
    }
    emit(out.as_bytes())
}

fn cmd_control(c: ControlCmd, cfg: &GlobalConfig) -> CliResult {
    let q = SharedDir::new(shared_dir(&c.shared, cfg)?);
    let client = c.client.as_deref();
    match c.action {
        ControlWord::Run => q.write_control(Command::Run, client)?,
        ControlWord::Pause => q.write_control(Command::Pause, client)?,
        ControlWord::Stop => q.write_control(Command::Stop, client)?,
        ControlWord::Clear => match client {
            Some(id) => q.clear_control(id)?,
            None => return Err(CliError::Usage("clear needs --client".into())),
        },
        ControlWord::Show => {
            let state = q.read_control_state()?;
            let mut out = format!("*\t{}\n", state.global.as_str());
            for (id, cmd) in &state.overrides {
                out.push_str(&format!("{id}\t{}\n", cmd.as_str()));
            }
            return emit(out.as_bytes());
        }
    }
    Ok(())
}

fn cmd_simulate(c: SimulateCmd) -> CliResult {
    let profiles = match &c.profiles {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| domain(format!("{}: {e}", p.display())))?;
            clustersim::parse_profiles(&text)?
        }
        None => clustersim::measured_profiles(),
    };
    if c.print_profiles {
        return emit(clustersim::profiles_csv(&profiles).as_bytes());
    }
    let result = clustersim::simulate(&profiles, c.beams, !c.no_stagger)?;
    if let Some(path) = &c.events {
        fs::write(path, result.events_csv()).map_err(|e| domain(format!("{}: {e}", path.display())))?;
    }
    let summary = SimSummary {
        profiles: &profiles,
        result: &result,
    };
    emit(summary.to_string().as_bytes())
}

fn cmd_archive_plan(c: ArchivePlanCmd, cfg: &GlobalConfig) -> CliResult {
    let pointings = match (&c.pointings, c.synthetic) {
        (Some(p), _) => {
            let text = fs::read_to_string(p).map_err(|e| domain(format!("{}: {e}", p.display())))?;
            archive::parse_pointings(&text)?
        }
        (None, n) => archive::synthetic_survey(
            n.unwrap_or(archive::SURVEY_BEAMS / beamio::BEAMS_PER_POINTING),
            c.bytes_per_beam,
            c.seed,
        ),
    };
    let media: &MediaSpec = match c.media {
        MediaKind::Dvd => &cfg.dvd,
        MediaKind::Tape => &cfg.tape,
    };
    let plan = archive::plan_discs(&pointings, media)?;
    if let Some(dir) = &c.out {
        archive::write_archive(dir, &plan)?;
    }
    let mut out = String::from("disc_id\tpointing_id\tbytes_used\tfill_fraction\n");
    for m in &plan {
        out.push_str(&format!(
            "{}\t{}\t{}\t{:.4}\n",
            m.disc_id, m.pointing.pointing_id, m.bytes_used, m.fill_fraction
        ));
    }
    emit(out.as_bytes())
}

fn cmd_cost_table(c: CostTableCmd, cfg: &GlobalConfig) -> CliResult {
    if c.defaults {
        return emit(archive::default_cost_table().as_bytes());
    }
    let a = archive::cost_report(c.total_gb, c.dvd_units, &cfg.dvd)?;
    let b = archive::cost_report(c.total_gb, c.tape_units, &cfg.tape)?;
    emit(archive::cost_table(&a, &b).as_bytes())
}

pub fn run(cli: Cli) -> CliResult {
    let cfg = match &cli.config {
        Some(p) => GlobalConfig::load(p)?,
        None => GlobalConfig::default(),
    };
    match cli.command {
        Cmd::Synth(c) => cmd_synth(c, &cfg),
        Cmd::Decimate(c) => cmd_decimate(c, &cfg),
        Cmd::Dedisperse(c) => cmd_dedisperse(c),
        Cmd::Search(c) => cmd_search(c, &cfg),
        Cmd::Sensitivity(c) => cmd_sensitivity(c),
        Cmd::DbInit(c) => cmd_db_init(c, &cfg),
        Cmd::Client(c) => cmd_client(c, &cfg),
        Cmd::Monitor(c) => cmd_monitor(c, &cfg),
        Cmd::Requeue(c) => cmd_requeue(c, &cfg),
        Cmd::Control(c) => cmd_control(c, &cfg),
        Cmd::Simulate(c) => cmd_simulate(c),
        Cmd::ArchivePlan(c) => cmd_archive_plan(c, &cfg),
        Cmd::CostTable(c) => cmd_cost_table(c, &cfg),
    }
}

/// Entry point for the binary.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Domain(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
