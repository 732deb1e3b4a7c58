//! Command-line surface. Every command writes a run manifest next to its
//! outputs and prints `key=value` progress lines on stdout.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{analyze_attributions, class_candidates, eligible_mask, parallel_map, AnalysisOptions, ProteinAttributions};
use crate::attribution::{
    assemble_summed_map, baseline_embedding, ig_embedding_between, ig_head_levels_between, AttributionRecord, Baseline,
    MapKind, PathSpec, SummedMap,
};
use crate::data::{generate_synthetic, parse_fasta, AnnotationType, Dataset, ProteinRecord, Split, SynthConfig};
use crate::embedding::{cluster_agreement, embed_maps, emit_scatter, synthetic_summed_maps, EmbeddingConfig, SyntheticMapsConfig, TsneInit};
use crate::error::{Error, Result};
use crate::io::{sha256_file, sha256_hex, write_atomic};
use crate::model::{tokenize, ModelConfig, ParamGroup};
use crate::tensor::Tensor;
use crate::training::{initial_encoder, train, Checkpoint, TrainConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMED_SUFFIX: &str = ".summed.json";
pub const REPORT_FILE: &str = "report.json";
pub const CLUSTER_THRESHOLD: f64 = 0.9;

#[derive(Debug, Parser)]
#[command(name = "xprot", version, about = "Integrated-gradients attribution for protein sequence encoders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted-motif dataset directory.
    Synth(SynthArgs),
    /// Generate summed maps with planted head-pattern classes.
    SynthMaps(SynthMapsArgs),
    /// Train an encoder and save the best checkpoint.
    Train(TrainArgs),
    /// Compute integrated-gradients maps for a set of proteins.
    Attribute(AttributeArgs),
    /// Correlate attributions with annotations and test significance.
    Analyze(AnalyzeArgs),
    /// Embed summed maps with PCA and t-SNE and write a scatter plot.
    Embed(EmbedArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON synthetic-data config; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthMapsArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub freeze_epochs: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Checkpoint path; the sidecar and manifest are written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AttributeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Proteins to attribute.
    #[arg(long, conflicts_with = "data", required_unless_present = "data")]
    pub fasta: Option<PathBuf>,
    /// Dataset directory to take proteins from instead of a FASTA file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Restrict `--data` to one split.
    #[arg(long, requires = "data")]
    pub split: Option<String>,
    #[arg(long)]
    pub class: String,
    /// Comma-separated: embedding, layer:<l>, all-layers.
    #[arg(long, default_value = "embedding")]
    pub target: String,
    #[arg(long, default_value_t = crate::attribution::DEFAULT_STEPS)]
    pub steps: usize,
    #[arg(long, default_value = "zero")]
    pub baseline: String,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Directory written by `attribute` with embedding and all-layers targets.
    #[arg(long)]
    pub attr: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub class: String,
    /// Comma-separated annotation types.
    #[arg(long, default_value = "active_site,binding_site,transmembrane,motif,prosite_pattern")]
    pub types: String,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Rotate each annotation mask by a seeded offset before testing.
    #[arg(long)]
    pub negative_control: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Directory of `*.summed.json` files.
    #[arg(long)]
    pub maps: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub pca: usize,
    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,
    /// A number, or `auto` for max(N / exaggeration / 4, 50).
    #[arg(long, default_value = "200")]
    pub learning_rate: String,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    #[arg(long, default_value = "pca")]
    pub init: String,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Check that k-means on the embedding recovers the map classes.
    #[arg(long)]
    pub verify_clusters: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// Enough to rerun a command and check that its inputs are unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    /// Path to SHA-256 of every input file.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
}

impl RunManifest {
    fn new(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            args: std::env::args().collect(),
            config,
            seed,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: unix_now(),
            finished_unix: 0,
        }
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        for file in files_under(path)? {
            self.inputs.insert(file.display().to_string(), sha256_file(&file)?);
        }
        Ok(())
    }

    fn output(&mut self, path: &Path, bytes: &[u8]) {
        self.outputs.insert(path.display().to_string(), sha256_hex(bytes));
    }

    fn write(mut self, path: &Path) -> Result<()> {
        self.finished_unix = unix_now();
        write_atomic(path, (serde_json::to_string_pretty(&self)? + "\n").as_bytes())
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// The file itself, or every regular file below a directory in sorted order.
fn files_under(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    let entries = std::fs::read_dir(path).map_err(|e| Error::io(path, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(path, e))?;
        let p = entry.path();
        if p.is_dir() {
            out.extend(files_under(&p)?);
        } else {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_output(manifest: &mut RunManifest, path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes)?;
    manifest.output(path, bytes);
    Ok(())
}

fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    Ok((serde_json::to_string(value)? + "\n").into_bytes())
}

fn config_value<T: Serialize>(value: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(value)?)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::SynthMaps(a) => synth_maps(a),
        Command::Train(a) => train_cmd(a),
        Command::Attribute(a) => attribute(a),
        Command::Analyze(a) => analyze(a),
        Command::Embed(a) => embed(a),
    }
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let data = generate_synthetic(&cfg)?;
    data.save_dir(&args.out)?;
    let mut manifest = RunManifest::new("synth", config_value(&cfg)?, Some(cfg.seed));
    if let Some(p) = &args.config {
        manifest.input(p)?;
    }
    for file in files_under(&args.out)? {
        if file.file_name().is_some_and(|n| n != MANIFEST_FILE) {
            let bytes = std::fs::read(&file).map_err(|e| Error::io(&file, e))?;
            manifest.output(&file, &bytes);
        }
    }
    let positives = data.records.iter().filter(|r| !r.annotations.is_empty()).count();
    println!("proteins={} positives={positives} out={}", data.len(), args.out.display());
    manifest.write(&args.out.join(MANIFEST_FILE))
}

fn summed_file_name(id: &str) -> String {
    format!("{}{SUMMED_SUFFIX}", file_stem(id))
}

fn synth_maps(args: SynthMapsArgs) -> Result<()> {
    let mut cfg: SyntheticMapsConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => SyntheticMapsConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let maps = synthetic_summed_maps(&cfg)?;
    let mut manifest = RunManifest::new("synth-maps", config_value(&cfg)?, Some(cfg.seed));
    if let Some(p) = &args.config {
        manifest.input(p)?;
    }
    for m in &maps {
        write_output(&mut manifest, &args.out.join(summed_file_name(&m.protein_id)), &to_json_bytes(m)?)?;
    }
    println!("maps={} classes={} out={}", maps.len(), cfg.n_classes, args.out.display());
    manifest.write(&args.out.join(MANIFEST_FILE))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let data = Dataset::load_dir(&args.data)?;
    if data.is_empty() {
        return Err(Error::Input(format!("{} contains no proteins", args.data.display())));
    }
    let mut model_cfg: ModelConfig = match &args.model_config {
        Some(p) => read_json(p)?,
        None => ModelConfig::default(),
    };
    let classes = data.class_vocabulary();
    if model_cfg.n_classes != classes.len() {
        log::info!("setting n_classes to {} from the data labels", classes.len());
        model_cfg.n_classes = classes.len();
    }
    let mut tc: TrainConfig = match &args.train_config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        tc.seed = seed;
    }
    if let Some(f) = args.freeze_epochs {
        tc.freeze_encoder_epochs = f;
    }
    if let Some(e) = args.max_epochs {
        tc.max_epochs = e;
    }
    let mut manifest = RunManifest::new(
        "train",
        serde_json::json!({ "model": config_value(&model_cfg)?, "train": config_value(&tc)? }),
        Some(tc.seed),
    );
    manifest.input(&args.data)?;
    for p in [&args.model_config, &args.train_config].into_iter().flatten() {
        manifest.input(p)?;
    }
    let init = initial_encoder(&model_cfg, &tc)?;
    println!(
        "epoch=0 encoder_digest={}",
        init.weights().digest(init.config(), Some(ParamGroup::Encoder))
    );
    let outcome = train(&data, &model_cfg, &tc, &mut |r, enc| {
        let fmt = |v: Option<f64>| v.map_or("na".to_string(), |v| format!("{v:.6}"));
        println!(
            "epoch={} frozen={} train_loss={:.6} valid_loss={:.6} valid_accuracy={} valid_fmax={} steps={} encoder_digest={}",
            r.epoch,
            r.frozen,
            r.train_loss,
            r.valid.loss,
            fmt(r.valid.accuracy),
            fmt(r.valid.f_max),
            r.optimizer_steps,
            enc.weights().digest(enc.config(), Some(ParamGroup::Encoder))
        );
    })?;
    outcome.best.save(&args.out)?;
    for p in [args.out.clone(), Checkpoint::sidecar_path(&args.out)] {
        let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        manifest.output(&p, &bytes);
    }
    println!(
        "best_epoch={} metric={:.6} out={}",
        outcome.best.meta.epoch,
        outcome.best.meta.metric,
        args.out.display()
    );
    manifest.write(&sibling(&args.out, ".manifest.json"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Embedding,
    Layer(usize),
    AllLayers,
}

pub fn parse_targets(s: &str, n_layers: usize) -> Result<Vec<Target>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let t = match part {
            "embedding" => Target::Embedding,
            "all-layers" => Target::AllLayers,
            other => {
                let l = other
                    .strip_prefix("layer:")
                    .and_then(|v| v.parse::<usize>().ok())
                    .ok_or_else(|| Error::Input(format!("unknown target {other:?} (embedding, layer:<l>, all-layers)")))?;
                if l >= n_layers {
                    return Err(Error::Input(format!("layer {l} out of range: the model has {n_layers} layers")));
                }
                Target::Layer(l)
            }
        };
        if !out.contains(&t) {
            out.push(t);
        }
    }
    if out.is_empty() {
        return Err(Error::Input("no attribution target given".into()));
    }
    Ok(out)
}

/// Protein id made safe for a file name.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.' | '|') { c } else { '_' })
        .collect()
}

struct ProteinOutput {
    files: Vec<(String, Vec<u8>)>,
    lines: Vec<String>,
    max_gap: f64,
}

fn attribute_one(
    enc: &crate::model::Encoder,
    record: &ProteinRecord,
    class: &str,
    class_index: usize,
    targets: &[Target],
    spec: PathSpec,
) -> Result<ProteinOutput> {
    let tokens = tokenize(&record.sequence)?;
    let x = enc.embed(&tokens)?;
    let x0 = baseline_embedding(enc, tokens.len(), spec.baseline)?;
    let stem = file_stem(&record.id);
    let mut out = ProteinOutput {
        files: Vec::new(),
        lines: Vec::new(),
        max_gap: 0.0,
    };
    if targets.contains(&Target::Embedding) {
        let a = ig_embedding_between(enc, &x, &x0, class_index, spec.steps)?;
        let rec = AttributionRecord::from_embedding(&record.id, class, &tokens, spec, &a);
        out.files.push((format!("{stem}.embedding.json"), to_json_bytes(&rec)?));
        out.lines.push(format!("protein={} target=embedding gap={:e}", record.id, a.gap));
        out.max_gap = out.max_gap.max(a.gap);
    }
    let n_layers = enc.config().n_layers;
    let all = targets.contains(&Target::AllLayers);
    let layers: Vec<usize> = if all {
        (0..n_layers).collect()
    } else {
        let mut l: Vec<usize> = targets
            .iter()
            .filter_map(|t| if let Target::Layer(l) = t { Some(*l) } else { None })
            .collect();
        l.sort_unstable();
        l
    };
    if !layers.is_empty() {
        let heads = ig_head_levels_between(enc, &x, &x0, class_index, spec.steps, &layers)?;
        for a in &heads {
            let rec = AttributionRecord::from_head(&record.id, class, &tokens, spec, a);
            out.files.push((format!("{stem}.layer{}.json", a.layer), to_json_bytes(&rec)?));
            out.lines.push(format!("protein={} target=layer:{} gap={:e}", record.id, a.layer, a.gap));
            out.max_gap = out.max_gap.max(a.gap);
        }
        if all {
            let refs: Vec<(usize, &Tensor)> = heads.iter().map(|a| (a.layer, &a.head_map)).collect();
            let summed = assemble_summed_map(&record.id, class, &refs, n_layers)?;
            out.files.push((summed_file_name(&record.id), to_json_bytes(&summed)?));
        }
    }
    Ok(out)
}

fn attribute(args: AttributeArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.model)?;
    let enc = ck.encoder()?;
    let class_index = ck.class_index(&args.class)?;
    let targets = parse_targets(&args.target, enc.config().n_layers)?;
    let spec = PathSpec {
        baseline: args.baseline.parse::<Baseline>()?,
        steps: args.steps,
    };
    spec.validate()?;
    let mut records = match (&args.fasta, &args.data) {
        (Some(f), _) => {
            let text = std::fs::read_to_string(f).map_err(|e| Error::io(f, e))?;
            parse_fasta(&text)?
        }
        (None, Some(d)) => {
            let data = Dataset::load_dir(d)?;
            match &args.split {
                Some(s) => {
                    let split: Split = s.parse()?;
                    data.records.into_iter().filter(|r| r.split == Some(split)).collect()
                }
                None => data.records,
            }
        }
        (None, None) => return Err(Error::Input("either --fasta or --data is required".into())),
    };
    if records.is_empty() {
        return Err(Error::Empty("no proteins to attribute".into()));
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    let mut stems = std::collections::BTreeSet::new();
    for r in &records {
        if !stems.insert(file_stem(&r.id)) {
            return Err(Error::Input(format!("protein id {:?} collides with another after file-name escaping", r.id)));
        }
    }

    let mut manifest = RunManifest::new(
        "attribute",
        serde_json::json!({
            "class": args.class,
            "targets": args.target,
            "steps": spec.steps,
            "baseline": spec.baseline,
            "split": args.split,
        }),
        None,
    );
    manifest.input(&args.model)?;
    manifest.input(&Checkpoint::sidecar_path(&args.model))?;
    for p in [&args.fasta, &args.data].into_iter().flatten() {
        manifest.input(p)?;
    }

    let results = parallel_map(args.jobs, &records, |r| {
        attribute_one(&enc, r, &args.class, class_index, &targets, spec)
    })?;
    let mut worst: f64 = 0.0;
    for res in &results {
        for (name, bytes) in &res.files {
            write_output(&mut manifest, &args.out.join(name), bytes)?;
        }
        for line in &res.lines {
            println!("{line}");
        }
        worst = worst.max(res.max_gap);
    }
    println!("proteins={} max_gap={worst:e} out={}", records.len(), args.out.display());
    manifest.write(&args.out.join(MANIFEST_FILE))
}

/// Reads attribution JSON files and regroups them per protein. Proteins
/// lacking the embedding map or any layer are skipped with a warning.
pub fn load_attributions(dir: &Path) -> Result<Vec<ProteinAttributions>> {
    let mut by_id: BTreeMap<String, (Option<AttributionRecord>, BTreeMap<usize, AttributionRecord>)> = BTreeMap::new();
    for file in files_under(dir)? {
        let name = file.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if !name.ends_with(".json") || name == MANIFEST_FILE || name.ends_with(SUMMED_SUFFIX) {
            continue;
        }
        let rec: AttributionRecord = read_json(&file)?;
        let entry = by_id.entry(rec.protein_id.clone()).or_default();
        match (rec.kind, rec.layer) {
            (MapKind::Embedding, _) => entry.0 = Some(rec),
            (MapKind::Head, Some(l)) => {
                entry.1.insert(l, rec);
            }
            (MapKind::Head, None) => {
                return Err(Error::Input(format!("{}: head map without a layer", file.display())));
            }
        }
    }
    let n_layers = by_id.values().map(|(_, h)| h.len()).max().unwrap_or(0);
    let mut out = Vec::new();
    for (id, (emb, heads)) in by_id {
        let complete = heads.len() == n_layers && heads.keys().copied().eq(0..n_layers);
        let Some(emb) = emb.filter(|_| complete && n_layers > 0) else {
            log::warn!("{id}: needs an embedding map and all {n_layers} layer maps; skipped");
            continue;
        };
        let maps: Vec<Tensor> = heads.values().map(|h| Tensor::from_rows(&h.values)).collect::<Result<_>>()?;
        let refs: Vec<(usize, &Tensor)> = maps.iter().enumerate().collect();
        let summed = assemble_summed_map(&id, &emb.class, &refs, n_layers)?;
        let max_gap = heads.values().map(|h| h.completeness_gap).fold(emb.completeness_gap, f64::max);
        let relevance = emb
            .token_relevance
            .clone()
            .unwrap_or_else(|| emb.values.iter().map(|r| r.iter().sum()).collect());
        out.push(ProteinAttributions {
            protein_id: id,
            token_flags: emb.token_flags.clone(),
            embedding_relevance: relevance,
            head_maps: heads.into_values().map(|h| h.values).collect(),
            summed,
            max_gap,
        });
    }
    Ok(out)
}

pub fn parse_types(s: &str) -> Result<Vec<AnnotationType>> {
    let mut out: Vec<AnnotationType> = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let t: AnnotationType = part.parse()?;
        if !out.contains(&t) {
            out.push(t);
        }
    }
    if out.is_empty() {
        return Err(Error::Input("no annotation types given".into()));
    }
    Ok(out)
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    let types = parse_types(&args.types)?;
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(Error::Config(format!("alpha {} outside (0, 1)", args.alpha)));
    }
    let data = Dataset::load_dir(&args.data)?;
    let attributions: Vec<ProteinAttributions> = load_attributions(&args.attr)?
        .into_iter()
        .filter(|a| a.summed.class == args.class)
        .collect();
    let have: std::collections::BTreeSet<&str> = attributions.iter().map(|a| a.protein_id.as_str()).collect();
    let candidates: Vec<&ProteinRecord> = class_candidates(&data.records, &args.class)
        .into_iter()
        .filter(|r| have.contains(r.id.as_str()) && types.iter().any(|&t| eligible_mask(r, t).is_some()))
        .collect();
    if candidates.is_empty() {
        return Err(Error::Empty(format!(
            "no attributed test proteins of class {:?} carry any of the types {}",
            args.class, args.types
        )));
    }
    let options = AnalysisOptions {
        alpha: args.alpha,
        control_seed: args.negative_control.then_some(args.seed),
    };
    let report = analyze_attributions(&candidates, &attributions, &args.class, &types, &options)?;

    let mut manifest = RunManifest::new(
        "analyze",
        serde_json::json!({ "class": args.class, "types": args.types, "alpha": args.alpha, "options": options }),
        options.control_seed,
    );
    manifest.input(&args.attr)?;
    manifest.input(&args.data)?;
    write_output(&mut manifest, &args.out.join(REPORT_FILE), report.to_json()?.as_bytes())?;
    for (name, body) in report.csv_files() {
        write_output(&mut manifest, &args.out.join(name), body.as_bytes())?;
    }
    for t in &report.types {
        println!(
            "type={} proteins={} embedding_mean_r={} embedding_p_adjusted={:e} embedding_significant={} corr_significant={} relev_significant={} overlay={}",
            t.annotation_type,
            t.n_proteins,
            t.embedding.mean_r.map_or("na".to_string(), |r| format!("{r:.6}")),
            t.embedding.p_adjusted,
            t.embedding.significant,
            t.correlation.count_significant(),
            t.relevance.count_significant(),
            t.overlay_count
        );
    }
    for s in &report.skipped {
        println!("type={} skipped=true", s.annotation_type);
    }
    manifest.write(&args.out.join(MANIFEST_FILE))
}

pub fn load_summed_maps(dir: &Path) -> Result<Vec<SummedMap>> {
    let mut maps = Vec::new();
    for file in files_under(dir)? {
        if file.to_str().is_some_and(|s| s.ends_with(SUMMED_SUFFIX)) {
            maps.push(read_json::<SummedMap>(&file)?);
        }
    }
    Ok(maps)
}

fn embed(args: EmbedArgs) -> Result<()> {
    let maps = load_summed_maps(&args.maps)?;
    if maps.is_empty() {
        return Err(Error::Input(format!("no *{SUMMED_SUFFIX} files in {}", args.maps.display())));
    }
    let mut cfg = EmbeddingConfig {
        pca_dims: args.pca,
        ..EmbeddingConfig::default()
    };
    cfg.tsne.perplexity = args.perplexity;
    cfg.tsne.iterations = args.iterations;
    cfg.tsne.seed = args.seed;
    cfg.tsne.init = args.init.parse::<TsneInit>()?;
    cfg.tsne.learning_rate = match args.learning_rate.as_str() {
        "auto" => crate::embedding::TsneConfig::auto_learning_rate(maps.len(), cfg.tsne.early_exaggeration),
        v => v
            .parse()
            .map_err(|_| Error::Config(format!("learning rate {v:?} is neither a number nor auto")))?,
    };
    let emb = embed_maps(&maps, &cfg)?;
    let mut manifest = RunManifest::new("embed", config_value(&cfg)?, Some(args.seed));
    manifest.input(&args.maps)?;
    let points = emb.scatter()?;
    let (csv, svg) = emit_scatter(&points, &args.out.join("scatter"))?;
    for p in [csv, svg] {
        let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        manifest.output(&p, &bytes);
    }
    let summary = serde_json::json!({
        "n": maps.len(),
        "eigenvalues": &emb.pca.eigenvalues[..cfg.pca_dims],
        "kl": emb.tsne.kl,
    });
    write_output(&mut manifest, &args.out.join("embedding.json"), &to_json_bytes(&summary)?)?;
    println!(
        "maps={} pca={} perplexity={} learning_rate={} final_kl={:.6} out={}",
        maps.len(),
        cfg.pca_dims,
        cfg.tsne.perplexity,
        cfg.tsne.learning_rate,
        emb.tsne.kl.last().copied().unwrap_or(f64::NAN),
        args.out.display()
    );
    let verdict = if args.verify_clusters {
        let ri = cluster_agreement(&emb, 10, args.seed)?;
        let ok = ri >= CLUSTER_THRESHOLD;
        println!("rand_index={ri:.6} threshold={CLUSTER_THRESHOLD} verified={ok}");
        Some(ok)
    } else {
        None
    };
    manifest.write(&args.out.join(MANIFEST_FILE))?;
    match verdict {
        Some(false) => Err(Error::Check(format!(
            "k-means on the embedding does not recover the map classes (Rand index below {CLUSTER_THRESHOLD})"
        ))),
        _ => Ok(()),
    }
}
