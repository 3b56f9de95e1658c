use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "cardiax", version, about = "Wearable SCG vitals and early-warning toolkit")]
pub struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// More diagnostics on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Relative output paths are resolved here.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Render a synthetic dual-accelerometer stream to a chunk bundle.
    Siggen(SiggenArgs),
    /// Vital-sign extraction.
    #[command(subcommand)]
    Vitals(VitalsCmd),
    /// PTT to SBP calibration.
    #[command(subcommand)]
    Bp(BpCmd),
    /// Model files: create, quantize, inspect.
    #[command(subcommand)]
    Model(ModelCmd),
    /// Stream a bundle through extraction, inference and the alarm.
    Run(RunArgs),
    /// Onset labels and inclusion for a patient cohort.
    Label(LabelArgs),
    /// Score event logs against labels.
    Eval(EvalArgs),
    /// Average power and battery lifetime.
    #[command(subcommand)]
    Power(PowerCmd),
    /// Chunk bundle conversion and inspection.
    #[command(subcommand)]
    Data(DataCmd),
    /// Synthetic patients end to end: bundles, vitals, events, labels, metrics.
    Demo(DemoArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SiggenArgs {
    #[arg(long, default_value_t = 72.0)]
    pub hr: f64,
    #[arg(long, default_value_t = 15.0)]
    pub rr: f64,
    #[arg(long, default_value_t = 40.0)]
    pub ptt_ms: f64,
    #[arg(long, default_value_t = 37.0)]
    pub temp: f64,
    /// Omit for a noise-free stream.
    #[arg(long)]
    pub snr_db: Option<f64>,
    #[arg(long, default_value_t = 120.0)]
    pub duration_s: f64,
    #[arg(long, default_value_t = 120.0)]
    pub fs: f64,
    /// Deterioration start, seconds.
    #[arg(long, requires = "drift_to")]
    pub drift_at: Option<f64>,
    /// Target HR,RR,PTT,TEMP reached after the ramp.
    #[arg(long, value_parser = parse_list::<4>, value_name = "HR,RR,PTT,TEMP")]
    pub drift_to: Option<[f64; 4]>,
    #[arg(long, default_value_t = 600.0)]
    pub ramp_s: f64,
    /// Sensor dropout START,END in seconds (repeatable).
    #[arg(long, value_parser = parse_list::<2>, value_name = "START,END")]
    pub gap: Vec<[f64; 2]>,
    #[arg(long, default_value_t = 120)]
    pub frames_per_chunk: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// `N` comma-separated numbers.
fn parse_list<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let v: Vec<f64> =
        s.split(',').map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}"))).collect::<Result<_, _>>()?;
    v.try_into().map_err(|v: Vec<f64>| format!("expected {N} comma-separated values, got {}", v.len()))
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VitalsCmd {
    /// Per-window HR, RR, PTT and SBP estimates as CSV.
    Extract(ExtractArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct BpLine {
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    pub bp_slope: f64,
    #[arg(long, default_value_t = 160.0)]
    pub bp_intercept: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct ExtractArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    pub bp: BpLine,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BpCmd {
    /// Least-squares line over every subject.
    Fit(BpCsv),
    /// Leave-one-subject-out error.
    Loo(BpCsv),
    /// Seeded calibration cohort as CSV.
    Synth(BpSynthArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct BpCsv {
    /// Columns subject_id,ptt_ms,sbp_mmhg.
    #[arg(long)]
    pub csv: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct BpSynthArgs {
    #[arg(long, default_value_t = 10)]
    pub subjects: usize,
    #[arg(long, default_value_t = 5)]
    pub segments: usize,
    #[arg(long, default_value_t = 5.0)]
    pub noise_sd: f64,
    #[command(flatten)]
    pub truth: BpLine,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelCmd {
    /// Hand-set model that fires when vitals leave their nominal ranges.
    Demo(ModelDemoArgs),
    /// Seeded random weights.
    Random(ModelRandomArgs),
    /// Post-training int8 quantization of a float model.
    Quantize(QuantizeArgs),
    /// Summary of a float or int8 model file.
    Inspect(InspectModelArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct ModelDemoArgs {
    #[arg(long, default_value_t = 480)]
    pub input_len: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ModelRandomArgs {
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 480)]
    pub input_len: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct QuantizeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Calibration windows drawn from seeded vital series.
    #[arg(long, default_value_t = 32)]
    pub calib_n: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct InspectModelArgs {
    pub model: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct RunArgs {
    /// Chunk bundle, or - for stdin.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Float (TCNM) or int8 (TCNQ) model.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    pub stride_min: f64,
    #[arg(long, default_value_t = 8)]
    pub k: u32,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[command(flatten)]
    pub bp: BpLine,
    /// Skip the per-window HR, RR, PTT and SBP events.
    #[arg(long)]
    pub quiet_vitals: bool,
    /// Event log (JSON lines); stdout if omitted.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    HourOverHour,
    WindowBaseline,
}

#[derive(Debug, Args, Serialize)]
pub struct LabelArgs {
    /// Hourly episodes; omit with --synthetic.
    #[arg(long, required_unless_present = "synthetic")]
    pub csv: Option<PathBuf>,
    /// Label a seeded synthetic cohort of this size instead.
    #[arg(long, conflicts_with = "csv")]
    pub synthetic: Option<usize>,
    /// Also write the episodes as CSV (with --synthetic).
    #[arg(long, requires = "synthetic")]
    pub episodes_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Rule::HourOverHour)]
    pub rule: Rule,
    #[arg(long, default_value_t = 4.0)]
    pub window_h: f64,
    #[arg(long, default_value_t = 0.5)]
    pub stride_h: f64,
    #[arg(long)]
    pub cap_h: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub labels: PathBuf,
    /// Directory of <patient>.events.jsonl or <patient>.jsonl logs.
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PowerCmd {
    /// Average power and lifetime for one stride.
    Estimate(PowerEstimateArgs),
    /// Lifetime against inference stride, as CSV.
    Curve(PowerCurveArgs),
    /// Write the reference task profile as TOML.
    Profile(PowerProfileArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct PowerEstimateArgs {
    /// TOML task profile; the reference profile if omitted.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Override the inference task period.
    #[arg(long)]
    pub stride_min: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PowerCurveArgs {
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "2,10,30,60")]
    pub strides: Vec<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PowerProfileArgs {
    #[arg(long, default_value_t = 30.0)]
    pub stride_min: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataCmd {
    /// JSON lines {kind, timestamp_us, payload_hex} to a bundle.
    Pack(DataIo),
    /// Bundle to JSON lines.
    Unpack(DataIo),
    /// Chunk counts, time span and sizes of a bundle.
    Inspect(DataInspectArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct DataIo {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct DataInspectArgs {
    pub bundle: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DemoArgs {
    #[arg(long, default_value_t = 4)]
    pub patients: usize,
    #[arg(long, default_value_t = 3600.0)]
    pub duration_s: f64,
    #[arg(long, default_value_t = 10.0)]
    pub stride_min: f64,
    #[arg(long, default_value_t = 2)]
    pub k: u32,
    #[arg(long, default_value_t = 20.0)]
    pub snr_db: f64,
    /// Directory for the artifacts (under --out-dir if relative).
    #[arg(long, default_value = "demo")]
    pub out: PathBuf,
}
