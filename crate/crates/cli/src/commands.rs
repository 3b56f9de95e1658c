use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use cardiax_core::bp_calib::{self, BpModel, CohortSpec};
use cardiax_core::datastore::{read_bundle, write_bundle, Bundle, Chunk, ChunkType};
use cardiax_core::demo::{run_demo, DemoConfig};
use cardiax_core::dsp::extract::write_estimates_csv;
use cardiax_core::dsp::ExtractorConfig;
use cardiax_core::labeler::{self, CohortConfig, LabelConfig, LabelSet, OnsetRule};
use cardiax_core::pipeline::{
    chunks_from_items, extract_items, items_from_chunks, run_stream, Classifier, EventLog, RunnerConfig, Schedule,
    StreamItem, SyntheticSource,
};
use cardiax_core::power::{self, PowerProfile};
use cardiax_core::quant::{self, QuantModel};
use cardiax_core::siggen::{Keyframe, Trajectory};
use cardiax_core::tcn::{self, TcnModel};

use crate::args::*;

/// Where results go: relative paths land under `--out-dir`.
pub struct Ctx {
    pub seed: u64,
    pub verbose: u8,
    pub out_dir: Option<PathBuf>,
}

impl Ctx {
    fn out_path(&self, p: &Path) -> PathBuf {
        match &self.out_dir {
            Some(d) if p.is_relative() => d.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn write(&self, p: &Path, bytes: &[u8]) -> Result<PathBuf> {
        let p = self.out_path(p);
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        self.note(1, &format!("wrote {} ({} bytes)", p.display(), bytes.len()));
        Ok(p)
    }

    /// Writes to `out` if given, otherwise to stdout.
    fn emit(&self, out: Option<&Path>, bytes: &[u8]) -> Result<()> {
        match out {
            Some(p) => {
                self.write(p, bytes)?;
            }
            None => io::stdout().lock().write_all(bytes)?,
        }
        Ok(())
    }

    fn note(&self, level: u8, msg: &str) {
        if self.verbose >= level {
            eprintln!("{msg}");
        }
    }
}

fn read(p: &Path) -> Result<Vec<u8>> {
    if p == Path::new("-") {
        let mut buf = Vec::new();
        io::stdin().lock().read_to_end(&mut buf)?;
        return Ok(buf);
    }
    fs::read(p).with_context(|| format!("reading {}", p.display()))
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

fn bp_model(l: &BpLine) -> Result<BpModel> {
    Ok(BpModel::new(l.bp_slope, l.bp_intercept)?)
}

fn load_items(p: &Path) -> Result<(Option<f64>, Vec<StreamItem>)> {
    let bundle = read_bundle(&read(p)?).with_context(|| format!("decoding {}", p.display()))?;
    Ok(items_from_chunks(&bundle.chunks)?)
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    let ctx = Ctx { seed: cli.seed, verbose: cli.verbose, out_dir: cli.out_dir.clone() };
    match &cli.command {
        Command::Siggen(a) => siggen(&ctx, a),
        Command::Vitals(VitalsCmd::Extract(a)) => extract(&ctx, a),
        Command::Bp(c) => bp(&ctx, c),
        Command::Model(c) => model(&ctx, c),
        Command::Run(a) => run(&ctx, a),
        Command::Label(a) => label(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Power(c) => power_cmd(&ctx, c),
        Command::Data(c) => data(&ctx, c),
        Command::Demo(a) => demo(&ctx, a),
    }
}

fn siggen(ctx: &Ctx, a: &SiggenArgs) -> Result<()> {
    let start = Keyframe { t_s: 0.0, hr_bpm: a.hr, rr_brpm: a.rr, ptt_ms: a.ptt_ms, temp_c: a.temp };
    let traj = match (a.drift_at, &a.drift_to) {
        (Some(at), Some(to)) => {
            ensure!(a.ramp_s > 0.0, "ramp must be positive");
            let end = Keyframe { t_s: at + a.ramp_s, hr_bpm: to[0], rr_brpm: to[1], ptt_ms: to[2], temp_c: to[3] };
            Trajectory::new(vec![start, Keyframe { t_s: at, ..start }, end])?
        }
        _ => Trajectory::constant(start),
    };
    let mut src = SyntheticSource::new(traj, a.fs, a.snr_db.unwrap_or(f64::INFINITY), ctx.seed, a.duration_s)?;
    for &[a0, a1] in &a.gap {
        ensure!(a0 < a1, "gap {a0},{a1} is empty");
        src = src.with_gap(a0, a1);
    }
    let items: Vec<StreamItem> = src.collect();
    let chunks = chunks_from_items(&items, a.fs, a.frames_per_chunk)?;
    let n = chunks.len();
    ctx.write(&a.out, &write_bundle(&Bundle { chunks })?)?;
    ctx.note(1, &format!("{n} chunks"));
    Ok(())
}

fn extract(ctx: &Ctx, a: &ExtractArgs) -> Result<()> {
    let (fs, items) = load_items(&a.input)?;
    let fs = fs.context("bundle has no ACC_FRAME chunks")?;
    let reports = extract_items(ExtractorConfig { fs, ..ExtractorConfig::default() }, Some(bp_model(&a.bp)?), &items)?;
    let mut csv = Vec::new();
    write_estimates_csv(&reports, &mut csv)?;
    ctx.emit(a.out.as_deref(), &csv)
}

fn bp(ctx: &Ctx, c: &BpCmd) -> Result<()> {
    match c {
        BpCmd::Fit(a) => {
            let recs = bp_calib::read_csv(read(&a.csv)?.as_slice())?;
            ctx.emit(a.out.as_deref(), &json_bytes(&bp_calib::fit(&recs)?)?)
        }
        BpCmd::Loo(a) => {
            let recs = bp_calib::read_csv(read(&a.csv)?.as_slice())?;
            ctx.emit(a.out.as_deref(), &json_bytes(&bp_calib::loo_evaluate(&recs)?)?)
        }
        BpCmd::Synth(a) => {
            let spec = CohortSpec {
                subjects: a.subjects,
                segments_per_subject: a.segments,
                truth: bp_model(&a.truth)?,
                noise_sd: a.noise_sd,
                seed: ctx.seed,
                ..CohortSpec::default()
            };
            let mut csv = Vec::new();
            bp_calib::write_csv(&mut csv, &bp_calib::synthetic_cohort(&spec)?)?;
            ctx.emit(a.out.as_deref(), &csv)
        }
    }
}

enum AnyModel {
    Float(TcnModel),
    Int8(QuantModel),
}

impl AnyModel {
    fn load(p: &Path) -> Result<Self> {
        let bytes = read(p)?;
        match bytes.get(..4) {
            Some(m) if m == tcn::MODEL_MAGIC => Ok(Self::Float(tcn::model_from_bytes(&bytes)?)),
            Some(m) if m == quant::QMODEL_MAGIC => Ok(Self::Int8(quant::qmodel_from_bytes(&bytes)?)),
            _ => bail!("{}: not a model file", p.display()),
        }
    }

    fn classifier(&self) -> &dyn Classifier {
        match self {
            Self::Float(m) => m,
            Self::Int8(m) => m,
        }
    }
}

#[derive(Serialize)]
struct ModelSummary {
    format: &'static str,
    heads: usize,
    input_len: usize,
    receptive_field: Option<usize>,
    weight_bytes: usize,
    file_bytes: usize,
}

fn model(ctx: &Ctx, c: &ModelCmd) -> Result<()> {
    match c {
        ModelCmd::Demo(a) => {
            ctx.write(&a.out, &tcn::model_to_bytes(&tcn::threshold_demo(a.input_len)?)?)?;
        }
        ModelCmd::Random(a) => {
            ctx.write(&a.out, &tcn::model_to_bytes(&TcnModel::random(a.heads, a.input_len, ctx.seed)?)?)?;
        }
        ModelCmd::Quantize(a) => {
            let AnyModel::Float(m) = AnyModel::load(&a.input)? else {
                bail!("{} is already quantized", a.input.display());
            };
            ensure!(m.n_heads() == 4, "calibration set has 4 vital channels, model has {}", m.n_heads());
            let cal = quant::vital_calibration_set(a.calib_n, m.input_len, ctx.seed);
            ctx.write(&a.out, &quant::qmodel_to_bytes(&quant::calibrate_channels(&m, &cal)?)?)?;
        }
        ModelCmd::Inspect(a) => {
            let file_bytes = read(&a.model)?.len();
            let s = match AnyModel::load(&a.model)? {
                AnyModel::Float(m) => ModelSummary {
                    format: "float32",
                    heads: m.n_heads(),
                    input_len: m.input_len,
                    receptive_field: Some(m.receptive_field()),
                    weight_bytes: m.weight_bytes(),
                    file_bytes,
                },
                AnyModel::Int8(m) => ModelSummary {
                    format: "int8",
                    heads: m.heads.len(),
                    input_len: m.input_len,
                    receptive_field: None,
                    weight_bytes: m.weight_bytes(),
                    file_bytes,
                },
            };
            io::stdout().write_all(&json_bytes(&s)?)?;
        }
    }
    Ok(())
}

fn run(ctx: &Ctx, a: &RunArgs) -> Result<()> {
    let model = AnyModel::load(&a.model)?;
    let (fs, items) = load_items(&a.input)?;
    let cfg = RunnerConfig {
        schedule: Schedule::with_stride_min(a.stride_min)?,
        k: a.k,
        threshold: a.threshold,
        fs: fs.unwrap_or(RunnerConfig::default().fs),
        bp: bp_model(&a.bp)?,
        log_vitals: !a.quiet_vitals,
    };
    ctx.note(2, &format!("runner: {}", serde_json::to_string(&cfg)?));
    let log = run_stream(cfg, model.classifier(), items)?;
    match log.alarm_time() {
        Some(t) => ctx.note(1, &format!("alarm at {t} s")),
        None => ctx.note(1, "no alarm"),
    }
    ctx.emit(a.log.as_deref(), &log.to_jsonl())
}

fn label(ctx: &Ctx, a: &LabelArgs) -> Result<()> {
    let cfg = LabelConfig {
        rule: match a.rule {
            Rule::HourOverHour => OnsetRule::HourOverHour,
            Rule::WindowBaseline => OnsetRule::WindowBaseline,
        },
        window_h: a.window_h,
        stride_h: a.stride_h,
        cap_h: a.cap_h,
    };
    let (episodes, rejected) = match (&a.csv, a.synthetic) {
        (Some(p), _) => labeler::read_episodes_csv(read(p)?.as_slice())?,
        (None, Some(n)) => {
            let eps = labeler::synthetic_cohort(&CohortConfig { n, seed: ctx.seed, ..CohortConfig::default() })?;
            if let Some(p) = &a.episodes_out {
                let mut csv = Vec::new();
                labeler::write_episodes_csv(&eps, &mut csv)?;
                ctx.write(p, &csv)?;
            }
            (eps, Vec::new())
        }
        (None, None) => bail!("either --csv or --synthetic is required"),
    };
    let set = labeler::label_cohort(&episodes, rejected, &cfg)?;
    let included = set.records.iter().filter(|r| r.included).count();
    ctx.note(1, &format!("{} records, {included} included, {} rejected", set.records.len(), set.rejected.len()));
    ctx.emit(a.out.as_deref(), set.to_json().as_bytes())
}

fn eval(ctx: &Ctx, a: &EvalArgs) -> Result<()> {
    let labels = LabelSet::from_json(&String::from_utf8(read(&a.labels)?)?)?;
    let mut logs = BTreeMap::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(&a.events)
        .with_context(|| format!("listing {}", a.events.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<io::Result<_>>()?;
    entries.sort();
    for p in entries {
        let Some(name) = p.file_name().and_then(|n| n.to_str()) else { continue };
        let Some(id) = name.strip_suffix(".events.jsonl").or_else(|| name.strip_suffix(".jsonl")) else { continue };
        let log = EventLog::read_jsonl(io::BufReader::new(fs::File::open(&p)?))
            .with_context(|| format!("reading {}", p.display()))?;
        logs.insert(id.to_string(), log);
    }
    ctx.note(1, &format!("{} event logs", logs.len()));
    let m = labeler::evaluate_logs(&labels, &logs, ctx.seed)?;
    ctx.emit(a.out.as_deref(), &json_bytes(&m)?)
}

fn profile(path: Option<&Path>) -> Result<PowerProfile> {
    Ok(match path {
        Some(p) => PowerProfile::load(p)?,
        None => PowerProfile::reference(30.0)?,
    })
}

#[derive(Serialize)]
struct PowerSummary {
    average_power_mw: f64,
    lifetime_h: f64,
    sleep_power_mw: f64,
}

fn power_cmd(ctx: &Ctx, c: &PowerCmd) -> Result<()> {
    match c {
        PowerCmd::Estimate(a) => {
            let mut p = profile(a.profile.as_deref())?;
            if let Some(s) = a.stride_min {
                p = p.with_stride(s)?;
            }
            let s = PowerSummary {
                average_power_mw: power::average_power(&p)?,
                lifetime_h: power::battery_lifetime(&p)?,
                sleep_power_mw: power::sleep_power_mw(),
            };
            ctx.emit(a.out.as_deref(), &json_bytes(&s)?)
        }
        PowerCmd::Curve(a) => {
            let p = profile(a.profile.as_deref())?;
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["stride_min", "average_power_mw", "lifetime_h"])?;
            for (stride, life) in power::lifetime_curve(&p, &a.strides)? {
                let mw = power::average_power(&p.with_stride(stride)?)?;
                w.write_record([stride.to_string(), format!("{mw:.6}"), format!("{life:.3}")])?;
            }
            ctx.emit(a.out.as_deref(), &w.into_inner()?)
        }
        PowerCmd::Profile(a) => {
            ctx.emit(a.out.as_deref(), PowerProfile::reference(a.stride_min)?.to_toml()?.as_bytes())
        }
    }
}

/// One chunk as a JSON line.
#[derive(Debug, Serialize, Deserialize)]
struct ChunkLine {
    kind: String,
    timestamp_us: u64,
    payload_hex: String,
}

fn kind_from_name(s: &str) -> Option<ChunkType> {
    (1..=u8::MAX).filter_map(ChunkType::from_tag).find(|k| k.name() == s)
}

#[derive(Serialize)]
struct BundleSummary {
    chunks: usize,
    bytes: usize,
    first_us: Option<u64>,
    last_us: Option<u64>,
    by_kind: BTreeMap<&'static str, KindSummary>,
}

#[derive(Serialize, Default)]
struct KindSummary {
    chunks: usize,
    payload_bytes: usize,
}

fn data(ctx: &Ctx, c: &DataCmd) -> Result<()> {
    match c {
        DataCmd::Pack(a) => {
            let text = read(&a.input)?;
            let mut chunks = Vec::new();
            for (i, line) in text.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let l: ChunkLine = serde_json::from_str(&line).with_context(|| format!("line {}", i + 1))?;
                let kind = kind_from_name(&l.kind).with_context(|| format!("line {}: chunk kind {}", i + 1, l.kind))?;
                let payload = hex::decode(&l.payload_hex).with_context(|| format!("line {}", i + 1))?;
                chunks.push(Chunk::new(kind, l.timestamp_us, payload)?);
            }
            let bytes = write_bundle(&Bundle { chunks })?;
            match &a.out {
                Some(p) => ctx.write(p, &bytes).map(drop),
                None => Ok(io::stdout().write_all(&bytes)?),
            }
        }
        DataCmd::Unpack(a) => {
            let b = read_bundle(&read(&a.input)?)?;
            let mut out = Vec::new();
            for c in &b.chunks {
                let l = ChunkLine {
                    kind: c.kind.name().into(),
                    timestamp_us: c.timestamp_us,
                    payload_hex: hex::encode(&c.payload),
                };
                serde_json::to_writer(&mut out, &l)?;
                out.push(b'\n');
            }
            ctx.emit(a.out.as_deref(), &out)
        }
        DataCmd::Inspect(a) => {
            let bytes = read(&a.bundle)?;
            let b = read_bundle(&bytes)?;
            let mut by_kind: BTreeMap<&'static str, KindSummary> = BTreeMap::new();
            for c in &b.chunks {
                let k = by_kind.entry(c.kind.name()).or_default();
                k.chunks += 1;
                k.payload_bytes += c.payload.len();
            }
            let s = BundleSummary {
                chunks: b.chunks.len(),
                bytes: bytes.len(),
                first_us: b.chunks.iter().map(|c| c.timestamp_us).min(),
                last_us: b.chunks.iter().map(|c| c.timestamp_us).max(),
                by_kind,
            };
            io::stdout().write_all(&json_bytes(&s)?)?;
            Ok(())
        }
    }
}

fn demo(ctx: &Ctx, a: &DemoArgs) -> Result<()> {
    let cfg = DemoConfig {
        seed: ctx.seed,
        patients: a.patients,
        duration_s: a.duration_s,
        stride_min: a.stride_min,
        k: a.k,
        snr_db: a.snr_db,
        ..DemoConfig::default()
    };
    let dir = ctx.out_path(&a.out);
    let sub = Ctx { out_dir: Some(dir.clone()), ..*ctx };
    for (name, bytes) in run_demo(&cfg)? {
        sub.write(Path::new(&name), &bytes)?;
    }
    ctx.note(1, &format!("demo written to {}", dir.display()));
    Ok(())
}
