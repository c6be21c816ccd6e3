//! The `margin-lab` command line.
//!
//! Exit codes: 0 success, 1 usage, 2 data format, 3 numerical failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::audit::{
    band_accuracy, churn_report, class_audit, expansion_report, frequency_audit, rotation_report, BandTable,
    ChurnReport, ClassAudit, ExpansionReport, FrequencyBuckets, GroupStats, RotationReport,
};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::io::{
    self, csv_field, read_audit, read_checkpoint, read_freq_counts, read_logits, read_targets, read_token_texts,
    write_audit, write_checkpoint, write_csv, AuditHeader, Dtype, Provenance, Report,
};
use crate::margin::{compute_margins, emulate_bf16, fit_gap_curve, recompute_fp32_logits, GapFit, GridSpec};
use crate::objectives::{MrpConfig, Objective, DEFAULT_CLAMP_FLOOR, DEFAULT_K, DEFAULT_TAU};
use crate::synth::{validate_scaling, ManifoldSpec, Sampler, ScalingVerdict};
use crate::toy::{
    self, base_pretrain_config, dose_csv, dose_response, from_checkpoint, layer_scan, layer_scan_csv, metrics_csv,
    to_checkpoint, train, ToyData, ToyLm, TrainConfig, AUDIT_FRACTION, MAX_VOCAB,
};

const GAP_FIT_REFERENCE: &str = "Reference only (published 4B-model audit, not reproduced at toy scale):\n  beta 0.912, R^2 0.9997, alpha 0.762";
const COMPARE_REFERENCE: &str = "Reference only (published 4B-model audits, not reproduced at toy scale):\n  Fisher lambda 0.6: W->R 16,327, R->W 5,356, flip ratio 3.0x\n  runner-up rotation 24.8% of positions, 72.0% wider, mean delta +0.922";
const SWEEP_REFERENCE: &str = "Reference only (published 4B-model sweep, not reproduced at toy scale):\n  Fisher median margin 1.174 -> 1.220 -> 1.317 across lambda 0.15, 0.3, 0.6";

#[derive(Debug, Parser)]
#[command(name = "margin-lab", version, about = "Voronoi-margin audits, gap-curve fits, and margin-refinement training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute per-position margins from a logits container.
    Audit(AuditArgs),
    /// Fit the gap curve of an audit.
    #[command(after_help = GAP_FIT_REFERENCE)]
    GapFit(GapFitArgs),
    /// Compare a baseline audit against a polished one.
    #[command(after_help = COMPARE_REFERENCE)]
    Compare(CompareArgs),
    /// Train the toy model on a text corpus.
    Train(TrainArgs),
    /// Dose-response sweep over the MRP weight.
    #[command(after_help = SWEEP_REFERENCE)]
    Sweep(SweepArgs),
    /// Check the linear gap law on a synthetic manifold.
    SynthValidate(SynthArgs),
    /// Per-layer Spearman correlation between final CE and virtual margin deficit.
    LayerScan(LayerScanArgs),
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Logits container (omit with --fp32-recompute).
    #[arg(long)]
    pub logits: Option<PathBuf>,
    /// Whitespace-separated target token ids, one per row.
    #[arg(long)]
    pub targets: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Round logits to bfloat16 before auditing.
    #[arg(long)]
    pub bf16_emulate: bool,
    /// Recompute logits in full precision from --hidden and --unembedding.
    #[arg(long, requires_all = ["hidden", "unembedding"], conflicts_with_all = ["logits", "bf16_emulate"])]
    pub fp32_recompute: bool,
    /// Hidden states container, one row per position.
    #[arg(long)]
    pub hidden: Option<PathBuf>,
    /// Unembedding container, one row per token.
    #[arg(long)]
    pub unembedding: Option<PathBuf>,
    /// Margin threshold recorded in the header.
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Number of log-spaced thresholds.
    #[arg(long, default_value_t = 20)]
    pub grid_count: usize,
    /// Margin quantile at the low end of the grid.
    #[arg(long, default_value_t = 1e-4)]
    pub quantile_lo: f64,
    /// Margin quantile at the high end of the grid.
    #[arg(long, default_value_t = 0.3)]
    pub quantile_hi: f64,
}

impl GridArgs {
    fn spec(&self) -> GridSpec {
        GridSpec { count: self.grid_count, quantile_lo: self.quantile_lo, quantile_hi: self.quantile_hi }
    }
}

#[derive(Debug, Args)]
pub struct GapFitArgs {
    #[arg(long)]
    pub audit: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Report JSON path; printed to stdout either way.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub baseline: PathBuf,
    #[arg(long)]
    pub polished: PathBuf,
    /// Directory for compare.json and the per-report CSVs.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// JSON object of token id -> occurrence count.
    #[arg(long)]
    pub freq_counts: Option<PathBuf>,
    /// JSON array with the target text of each position.
    #[arg(long)]
    pub token_texts: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Margin,
    Fisher,
}

impl From<LossArg> for Objective {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Margin => Objective::Margin,
            LossArg::Fisher => Objective::Fisher,
        }
    }
}

#[derive(Debug, Args)]
pub struct ObjectiveArgs {
    #[arg(long, value_enum, default_value_t = LossArg::Fisher)]
    pub loss: LossArg,
    /// Margin gate threshold (margin loss only).
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    /// Top-k candidates (Fisher loss only; default 5).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub ce_weight: f64,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 3e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ObjectiveArgs {
    fn config(&self, lambda_mrp: f64) -> TrainConfig {
        if self.loss == LossArg::Margin && self.k.is_some() {
            eprintln!("warning: --k is ignored with --loss margin");
        }
        TrainConfig {
            steps: self.steps,
            learning_rate: self.lr,
            seed: self.seed,
            mrp: MrpConfig {
                objective: self.loss.into(),
                lambda_mrp,
                tau: self.tau,
                k: self.k.unwrap_or(DEFAULT_K),
                clamp_floor: DEFAULT_CLAMP_FLOOR,
                ce_weight: self.ce_weight,
            },
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Plain-text corpus; omit to use the bundled corpus.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Continue from this checkpoint instead of a fresh model.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub lambda_mrp: f64,
    #[command(flatten)]
    pub objective: ObjectiveArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Base checkpoint; when absent a CE-only base is trained first.
    #[arg(long)]
    pub base: Option<PathBuf>,
    /// Ascending comma-separated weights.
    #[arg(long, value_delimiter = ',', default_value = "0,0.15,0.3,0.6")]
    pub lambda_mrp: Vec<f64>,
    #[command(flatten)]
    pub objective: ObjectiveArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Unit circle, sites (1,0) and (-1,0).
    Antipodal,
    /// Unit circle, three sites 120 degrees apart.
    Triad,
    /// Square [-1,1]^2 with 8 random sites.
    Square8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplerArg {
    Circle,
    Square,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, conflicts_with = "sites")]
    pub preset: Option<Preset>,
    /// Explicit sites as "x,y;x,y;..." (needs --sampler).
    #[arg(long, requires = "sampler")]
    pub sites: Option<String>,
    #[arg(long, value_enum)]
    pub sampler: Option<SamplerArg>,
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed for the random sites of the square preset.
    #[arg(long, default_value_t = 0)]
    pub site_seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LayerScanArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    /// CSV path; printed to stdout either way.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command, and returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Audit(a) => cmd_audit(&a),
        Command::GapFit(a) => cmd_gap_fit(&a).map(|_| ()),
        Command::Compare(a) => cmd_compare(&a).map(|_| ()),
        Command::Train(a) => cmd_train(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::SynthValidate(a) => cmd_synth_validate(&a).map(|_| ()),
        Command::LayerScan(a) => cmd_layer_scan(&a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn to_pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializes")
}

pub fn cmd_audit(a: &AuditArgs) -> Result<()> {
    let targets = read_targets(&a.targets)?;
    let (logits, vocab, dtype) = if a.fp32_recompute {
        let hidden = read_logits(a.hidden.as_deref().expect("required by clap"))?;
        let w = read_logits(a.unembedding.as_deref().expect("required by clap"))?;
        if hidden.header.cols != w.header.cols {
            return Err(Error::data(format!(
                "hidden width {} does not match unembedding width {}",
                hidden.header.cols, w.header.cols
            )));
        }
        let mut out = Vec::with_capacity(hidden.header.rows * w.header.rows);
        for r in 0..hidden.header.rows {
            out.extend(recompute_fp32_logits(hidden.row(r), &w.values)?);
        }
        (out, w.header.rows, "f32-recompute")
    } else {
        let path = a
            .logits
            .as_deref()
            .ok_or_else(|| Error::usage("--logits is required unless --fp32-recompute is set"))?;
        let c = read_logits(path)?;
        let mut values = c.values;
        let mut dtype = c.header.dtype.as_str();
        if a.bf16_emulate {
            values.iter_mut().for_each(|v| *v = emulate_bf16(*v));
            dtype = Dtype::Bf16.as_str();
        }
        (values, c.header.cols, dtype)
    };
    if vocab < 2 || logits.len() / vocab != targets.len() {
        return Err(Error::data(format!(
            "{} logit rows of width {vocab} for {} targets",
            logits.len() / vocab.max(1),
            targets.len()
        )));
    }
    let records = compute_margins(&logits, vocab, &targets)?;
    let header = AuditHeader::new(dtype, records.len(), a.tau, a.seed);
    write_audit(&a.out, &header, &records)?;
    eprintln!("wrote {} records to {}", records.len(), a.out.display());
    Ok(())
}

pub fn cmd_gap_fit(a: &GapFitArgs) -> Result<Report<GapFit>> {
    let (_, records) = read_audit(&a.audit)?;
    let margins: Vec<f64> = records.iter().map(|r| r.margin).collect();
    let grid = a.grid.spec();
    let fit = fit_gap_curve(&margins, &grid)?;
    let report = Report {
        provenance: Provenance::new("gap-fit", None, serde_json::to_value(grid).expect("grid"), &[&a.audit])?,
        report: fit,
    };
    print!("{}", report.to_json());
    if let Some(out) = &a.out {
        report.write(out)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct CompareBundle {
    pub churn: ChurnReport,
    pub rotation: RotationReport,
    pub bands_baseline: BandTable,
    pub bands_polished: BandTable,
    pub expansion: ExpansionReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frequency: Option<FrequencyBuckets>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class: Option<ClassAudit>,
}

const GROUP_HEADER: [&str; 10] = [
    "group",
    "positions",
    "baseline_accuracy",
    "polished_accuracy",
    "delta",
    "w2r",
    "r2w",
    "net",
    "share_of_net",
    "section",
];

fn group_row(g: &GroupStats, section: &str) -> Vec<String> {
    vec![
        g.label.clone(),
        g.positions.to_string(),
        csv_field(g.baseline_accuracy),
        csv_field(g.polished_accuracy),
        csv_field(g.delta),
        g.w2r.to_string(),
        g.r2w.to_string(),
        g.net.to_string(),
        csv_field(g.share_of_net),
        section.to_string(),
    ]
}

pub fn cmd_compare(a: &CompareArgs) -> Result<CompareBundle> {
    let (_, base) = read_audit(&a.baseline)?;
    let (_, pol) = read_audit(&a.polished)?;
    let frequency = match &a.freq_counts {
        Some(p) => Some(frequency_audit(&base, &pol, &read_freq_counts(p)?)?),
        None => None,
    };
    let class = match &a.token_texts {
        Some(p) => Some(class_audit(&base, &pol, &read_token_texts(p)?)?),
        None => None,
    };
    let bundle = CompareBundle {
        churn: churn_report(&base, &pol)?,
        rotation: rotation_report(&base, &pol)?,
        bands_baseline: band_accuracy(&base)?,
        bands_polished: band_accuracy(&pol)?,
        expansion: expansion_report(&base, &pol)?,
        frequency,
        class,
    };

    let mut inputs: Vec<&Path> = vec![&a.baseline, &a.polished];
    inputs.extend(a.freq_counts.as_deref());
    inputs.extend(a.token_texts.as_deref());
    let report = Report { provenance: Provenance::new("compare", None, json!({}), &inputs)?, report: bundle };
    create_dir(&a.out_dir)?;
    report.write(&a.out_dir.join("compare.json"))?;

    let b = &report.report;
    let c = &b.churn;
    write_csv(
        &a.out_dir.join("churn.csv"),
        &["total", "churned", "w2r", "r2w", "w2w", "flip_ratio", "net_corrected"],
        &[vec![
            c.total.to_string(),
            c.churned.to_string(),
            c.w2r.to_string(),
            c.r2w.to_string(),
            c.w2w.to_string(),
            csv_field(c.flip_ratio),
            c.net_corrected.to_string(),
        ]],
    )?;
    let r = &b.rotation;
    write_csv(
        &a.out_dir.join("rotation.csv"),
        &["total", "rotated", "rotated_wider", "mean_margin_delta"],
        &[vec![r.total.to_string(), r.rotated.to_string(), r.rotated_wider.to_string(), r.mean_margin_delta.to_string()]],
    )?;
    let mut band_rows = Vec::new();
    for (audit, table) in [("baseline", &b.bands_baseline), ("polished", &b.bands_polished)] {
        for band in &table.bands {
            band_rows.push(vec![
                audit.to_string(),
                band.lo.to_string(),
                band.hi.map(|h| h.to_string()).unwrap_or_default(),
                band.count.to_string(),
                band.correct.to_string(),
                csv_field(band.accuracy),
            ]);
        }
    }
    write_csv(&a.out_dir.join("bands.csv"), &["audit", "lo", "hi", "count", "correct", "accuracy"], &band_rows)?;
    let e = &b.expansion;
    write_csv(
        &a.out_dir.join("expansion.csv"),
        &["total", "pct_wider", "mean_delta", "median_delta"],
        &[vec![e.total.to_string(), e.pct_wider.to_string(), e.mean_delta.to_string(), e.median_delta.to_string()]],
    )?;
    if let Some(f) = &b.frequency {
        let rows: Vec<_> = f.buckets.iter().map(|g| group_row(g, "bucket")).collect();
        write_csv(&a.out_dir.join("frequency.csv"), &GROUP_HEADER, &rows)?;
    }
    if let Some(cl) = &b.class {
        let mut rows: Vec<_> = cl.classes.iter().map(|g| group_row(g, "class")).collect();
        rows.push(group_row(&cl.fragment, "separate"));
        write_csv(&a.out_dir.join("class.csv"), &GROUP_HEADER, &rows)?;
    }
    println!(
        "churned {} (W->R {}, R->W {}, net {:+}); rotated {}; {:.1}% wider",
        c.churned, c.w2r, c.r2w, c.net_corrected, r.rotated, e.pct_wider
    );
    Ok(report.report)
}

fn load_corpus(path: Option<&Path>) -> Result<String> {
    match path {
        Some(p) => {
            String::from_utf8(io::read_bytes(p)?).map_err(|_| Error::data(format!("{} is not UTF-8", p.display())))
        }
        None => Ok(toy::BUNDLED_CORPUS.to_string()),
    }
}

fn load_model(path: &Path) -> Result<(ToyLm, toy::Tokenizer)> {
    let (m, t, _) = from_checkpoint(&read_checkpoint(path)?)?;
    Ok((m, t))
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let text = load_corpus(a.corpus.as_deref())?;
    let cfg = a.objective.config(a.lambda_mrp);
    let (model, data) = match &a.init {
        Some(p) => {
            let (m, tok) = load_model(p)?;
            (m, ToyData::with_tokenizer(tok, &text, AUDIT_FRACTION))
        }
        None => {
            let data = ToyData::from_text(&text, MAX_VOCAB, AUDIT_FRACTION)?;
            (ToyLm::new(data.model_config(), cfg.seed)?, data)
        }
    };
    let out = train(&model, &data.train, &cfg)?;
    create_dir(&a.out_dir)?;
    write_checkpoint(
        &a.out_dir.join("checkpoint.bin"),
        &to_checkpoint(&out.model, &data.tokenizer, Some(&cfg), cfg.seed, cfg.steps),
    )?;
    io::atomic_write(&a.out_dir.join("metrics.csv"), metrics_csv(&out.log).as_bytes())?;
    let last = out.log.last().expect("steps >= 1");
    println!("step {}: ce {:.4} mrp {:.4} median margin {:.4}", last.step, last.ce, last.mrp, last.median_margin);
    Ok(())
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let text = load_corpus(a.corpus.as_deref())?;
    let cfg = a.objective.config(0.0);
    create_dir(&a.out_dir)?;
    let (base, data) = match &a.base {
        Some(p) => {
            let (m, tok) = load_model(p)?;
            (m, ToyData::with_tokenizer(tok, &text, AUDIT_FRACTION))
        }
        None => {
            let data = ToyData::from_text(&text, MAX_VOCAB, AUDIT_FRACTION)?;
            let pre = base_pretrain_config(cfg.seed);
            let init = ToyLm::new(data.model_config(), cfg.seed)?;
            let base = train(&init, &data.train, &pre)?.model;
            write_checkpoint(
                &a.out_dir.join("base.bin"),
                &to_checkpoint(&base, &data.tokenizer, Some(&pre), cfg.seed, pre.steps),
            )?;
            (base, data)
        }
    };
    let objective = cfg.mrp.objective;
    let d = dose_response(&base, &data.train, &data.audit, &a.lambda_mrp, objective, &cfg)?;
    write_audit(
        &a.out_dir.join("audit_base.jsonl"),
        &AuditHeader::new("f32", d.baseline_audit.len(), cfg.mrp.tau, Some(cfg.seed)),
        &d.baseline_audit,
    )?;
    for (row, (model, audit)) in d.rows.iter().zip(d.models.iter().zip(&d.audits)) {
        let mut rc = cfg;
        rc.mrp.lambda_mrp = row.lambda_mrp;
        let tag = format!("{}_{}", objective, row.lambda_mrp);
        write_checkpoint(
            &a.out_dir.join(format!("model_{tag}.bin")),
            &to_checkpoint(model, &data.tokenizer, Some(&rc), cfg.seed, cfg.steps),
        )?;
        write_audit(
            &a.out_dir.join(format!("audit_{tag}.jsonl")),
            &AuditHeader::new("f32", audit.len(), cfg.mrp.tau, Some(cfg.seed)),
            audit,
        )?;
    }
    let csv = dose_csv(&d.rows);
    io::atomic_write(&a.out_dir.join("dose_response.csv"), csv.as_bytes())?;
    let mut inputs: Vec<&Path> = a.corpus.iter().map(PathBuf::as_path).collect();
    inputs.extend(a.base.as_deref());
    let report = Report {
        provenance: Provenance::new("sweep", Some(cfg.seed), json!({"train": cfg, "lambdas": a.lambda_mrp}), &inputs)?,
        report: json!({"baseline": d.baseline, "rows": d.rows}),
    };
    report.write(&a.out_dir.join("sweep.json"))?;
    print!("{csv}");
    Ok(())
}

fn parse_sites(s: &str) -> Result<Tensor> {
    let rows = s
        .split(';')
        .filter(|r| !r.trim().is_empty())
        .map(|r| {
            r.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| Error::usage(format!("bad site coordinate {v:?}"))))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::from_rows(&rows).map_err(|_| Error::usage("sites must all have the same dimension"))
}

pub fn cmd_synth_validate(a: &SynthArgs) -> Result<ScalingVerdict> {
    let spec = match (&a.sites, a.preset) {
        (Some(s), _) => {
            let sampler = match a.sampler.expect("required by clap") {
                SamplerArg::Circle => Sampler::CircleUniform,
                SamplerArg::Square => Sampler::SquareUniform,
            };
            ManifoldSpec::new(parse_sites(s)?, sampler, a.samples, a.seed)
        }
        (None, Some(Preset::Triad)) => ManifoldSpec::circle_triad(a.samples, a.seed),
        (None, Some(Preset::Square8)) => ManifoldSpec::square_random(8, a.site_seed, a.samples, a.seed),
        (None, _) => ManifoldSpec::circle_antipodal(a.samples, a.seed),
    };
    let verdict = validate_scaling(&spec)?;
    let json = to_pretty(&json!({"passes": verdict.passes(), "verdict": verdict}));
    println!("{json}");
    if let Some(out) = &a.out {
        io::atomic_write(out, format!("{json}\n").as_bytes())?;
    }
    if !verdict.passes() {
        return Err(Error::numerical(format!(
            "scaling check failed: beta {:.4}, R^2 {:.5}",
            verdict.fit.beta, verdict.fit.r2
        )));
    }
    Ok(verdict)
}

pub fn cmd_layer_scan(a: &LayerScanArgs) -> Result<()> {
    let (model, tok) = load_model(&a.checkpoint)?;
    let text = load_corpus(a.corpus.as_deref())?;
    let tokens = tok.encode(&text);
    let rows = layer_scan(&model, &tokens, a.tau)?;
    let csv = layer_scan_csv(&rows);
    print!("{csv}");
    if let Some(out) = &a.out {
        io::atomic_write(out, csv.as_bytes())?;
    }
    Ok(())
}
