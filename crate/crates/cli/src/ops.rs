//! Stage operations shared by the subcommands and the pipeline runner.
//!
//! Every operation reads its inputs by name, writes its outputs as
//! `<out_dir>/<stage>.<key>.<ext>` and records each file it produced.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use coarsegrain::data::{sidecar_path, Sidecar};
use coarsegrain::encoding::{cv_encoding_score, default_lambdas};
use coarsegrain::labeler::labels_to_json;
use coarsegrain::probe::{alignment_vs_k, CurvePoint};
use coarsegrain::rdm::silhouette_score;
use coarsegrain::rsa::{aggregate_by_category, AlignmentRecord, DEFAULT_N_BOOT};
use coarsegrain::synth::generate_hierarchical_data;
use coarsegrain::trainer::{extract_penultimate, train, MlpConfig};
use coarsegrain::{
    align_by_ids, bootstrap_ci, compute_rdm, fit_pca, min_k_overlap, per_concept_alignment,
    project_2d, read_embedding, read_labels, read_rdm, recursive_median_partition, write_embedding,
    write_rdm, EmbeddingMatrix, Metric, Rdm, SplitMode, Width,
};

use crate::plot::{self, ErrorPoint};

/// Report formats. JSON reports are always written; CSV tables and SVG
/// plots are added when requested.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum,
)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Svg,
}

/// Output sink for one running stage.
pub struct Stage<'a> {
    pub name: &'a str,
    pub out_dir: &'a Path,
    pub formats: &'a [Format],
    pub inputs: &'a BTreeMap<String, PathBuf>,
    /// `(key, path)` of every file written so far, in write order.
    pub outputs: Vec<(String, PathBuf)>,
}

impl Stage<'_> {
    pub fn input(&self, key: &str) -> Result<&Path> {
        self.inputs
            .get(key)
            .map(PathBuf::as_path)
            .ok_or_else(|| anyhow!("missing input {key:?}"))
    }

    pub fn optional_input(&self, key: &str) -> Option<&Path> {
        self.inputs.get(key).map(PathBuf::as_path)
    }

    pub fn wants(&self, format: Format) -> bool {
        format == Format::Json || self.formats.contains(&format)
    }

    fn path(&self, key: &str, ext: &str) -> PathBuf {
        self.out_dir.join(format!("{}.{key}.{ext}", self.name))
    }

    fn record(&mut self, key: &str, path: PathBuf) {
        self.outputs.push((key.to_string(), path));
    }

    fn bytes(&mut self, key: &str, ext: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(key, ext);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.record(key, path);
        Ok(())
    }

    fn json(&mut self, key: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.bytes(key, "json", text.as_bytes())
    }

    fn csv(&mut self, key: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| anyhow!("csv: {e}"))?;
        self.bytes(key, "csv", &bytes)
    }

    fn embedding(&mut self, key: &str, m: &EmbeddingMatrix) -> Result<()> {
        let path = self.path(key, "emb");
        write_embedding(m, &path, Width::F64)?;
        self.record(key, path);
        Ok(())
    }

    fn rdm(&mut self, key: &str, rdm: &Rdm) -> Result<()> {
        let path = self.path(key, "emb");
        write_rdm(rdm, &path, Width::F64)?;
        self.record(key, path);
        Ok(())
    }
}

fn num(x: f64) -> String {
    if x.is_finite() {
        x.to_string()
    } else {
        String::new()
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// An input that is either a stored RDM or an embedding to turn into one.
enum Source {
    Rdm(Rdm),
    Embedding(EmbeddingMatrix),
}

impl Source {
    fn load(path: &Path) -> Result<Self> {
        let meta_path = sidecar_path(path);
        let meta =
            fs::read(&meta_path).with_context(|| format!("reading {}", meta_path.display()))?;
        let sidecar: Sidecar = serde_json::from_slice(&meta)
            .with_context(|| format!("parsing {}", meta_path.display()))?;
        let loaded = if sidecar.metric_tag.is_some() {
            Source::Rdm(read_rdm(path)?)
        } else {
            Source::Embedding(read_embedding(path)?)
        };
        Ok(loaded)
    }

    fn ids(&self) -> &[String] {
        match self {
            Source::Rdm(r) => r.ids(),
            Source::Embedding(m) => m.ids(),
        }
    }

    /// RDM over exactly `ids`, in that order.
    fn restrict(&self, ids: &[String], metric: Metric) -> Result<Rdm> {
        let lookup: HashMap<&str, usize> = self
            .ids()
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let idx = ids
            .iter()
            .map(|id| {
                lookup
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| anyhow!("stimulus {id:?} missing"))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(match self {
            Source::Rdm(r) => r.select(&idx)?,
            Source::Embedding(m) => compute_rdm(&m.select_rows(&idx)?, metric)?,
        })
    }
}

/// Ids of `first` present in all `others`, keeping every `stride`-th.
fn common_ids(first: &[String], others: &[&[String]], stride: usize) -> Result<Vec<String>> {
    if stride == 0 {
        bail!("stride must be at least 1");
    }
    let sets: Vec<std::collections::HashSet<&str>> = others
        .iter()
        .map(|ids| ids.iter().map(String::as_str).collect())
        .collect();
    let ids: Vec<String> = first
        .iter()
        .filter(|id| sets.iter().all(|s| s.contains(id.as_str())))
        .step_by(stride)
        .cloned()
        .collect();
    if ids.len() < 3 {
        bail!("only {} shared stimuli; need at least 3", ids.len());
    }
    Ok(ids)
}

// ---------------------------------------------------------------- arguments

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthArgs {
    /// Tree depth; the hierarchy has 2^depth leaves [default: 3]
    #[arg(long)]
    pub depth: Option<usize>,
    /// Points per leaf [default: 20]
    #[arg(long)]
    pub per_leaf: Option<usize>,
    /// Embedding dimension [default: 16]
    #[arg(long)]
    pub dim: Option<usize>,
    /// Standard deviation of the isotropic noise [default: 0.5]
    #[arg(long)]
    pub noise_sd: Option<f64>,
    /// Keep every n-th point in the ground-truth RDM [default: 1]
    #[arg(long)]
    pub truth_stride: Option<usize>,
    #[arg(skip)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelArgs {
    /// Number of binary splits; yields 2^depth classes [default: 3]
    #[arg(long)]
    pub depth: Option<usize>,
    /// global: split on global PC-l at level l; local: refit PCA per partition [default: global]
    #[arg(long)]
    pub mode: Option<SplitMode>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainArgs {
    /// Hidden widths, comma separated; the last is the penultimate layer [default: 64,32]
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// [default: 50]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 0.05]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Rate multiplier applied every `decay_every` epochs [default: 0.5]
    #[arg(long)]
    pub lr_decay: Option<f64>,
    /// [default: 50]
    #[arg(long)]
    pub decay_every: Option<usize>,
    /// [default: 0.9]
    #[arg(long)]
    pub momentum: Option<f64>,
    /// [default: 64]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Train on a seeded subset of this many stimuli
    #[arg(long)]
    pub subsample: Option<usize>,
    /// Truncate hierarchical labels to this depth before training
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(skip)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RdmArgs {
    /// correlation, euclidean or cosine [default: correlation]
    #[arg(long)]
    pub metric: Option<Metric>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RsaArgs {
    /// Metric for inputs that are embeddings [default: correlation]
    #[arg(long)]
    pub metric: Option<Metric>,
    /// Bootstrap replicates [default: 1000]
    #[arg(long)]
    pub n_boot: Option<usize>,
    /// Keep every n-th shared stimulus [default: 1]
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(skip)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptsArgs {
    /// Metric for inputs that are embeddings [default: correlation]
    #[arg(long)]
    pub metric: Option<Metric>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodeArgs {
    /// Ridge penalties, comma separated [default: 1e-4..1e4, 9 log-spaced]
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    /// [default: 5]
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(skip)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeArgs {
    /// Component counts, comma separated [default: powers of two, then full rank]
    #[arg(long, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    /// [default: correlation]
    #[arg(long)]
    pub metric: Option<Metric>,
    /// [default: 1000]
    #[arg(long)]
    pub n_boot: Option<usize>,
    /// Keep every n-th shared stimulus [default: 1]
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(skip)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Project2dArgs {}

// ---------------------------------------------------------------- dispatch

#[derive(Debug, Clone)]
pub enum Op {
    Synth(SynthArgs),
    Label(LabelArgs),
    Train(TrainArgs),
    Rdm(RdmArgs),
    Rsa(RsaArgs),
    Curve(RsaArgs),
    Concepts(ConceptsArgs),
    Encode(EncodeArgs),
    Probe(ProbeArgs),
    Project2d(Project2dArgs),
}

pub const OP_NAMES: [&str; 10] = [
    "synth",
    "label",
    "train",
    "rdm",
    "rsa",
    "curve",
    "concepts",
    "encode",
    "probe",
    "project2d",
];

impl Op {
    /// Parse `args` for the operation called `op`.
    pub fn parse(op: &str, args: &Value) -> std::result::Result<Op, String> {
        fn de<T: for<'de> Deserialize<'de>>(args: &Value) -> std::result::Result<T, String> {
            let args = if args.is_null() {
                json!({})
            } else {
                args.clone()
            };
            serde_json::from_value(args).map_err(|e| e.to_string())
        }
        Ok(match op {
            "synth" => Op::Synth(de(args)?),
            "label" => Op::Label(de(args)?),
            "train" => Op::Train(de(args)?),
            "rdm" => Op::Rdm(de(args)?),
            "rsa" => Op::Rsa(de(args)?),
            "curve" => Op::Curve(de(args)?),
            "concepts" => Op::Concepts(de(args)?),
            "encode" => Op::Encode(de(args)?),
            "probe" => Op::Probe(de(args)?),
            "project2d" => Op::Project2d(de(args)?),
            other => {
                return Err(format!(
                    "unknown op {other:?}; expected one of {}",
                    OP_NAMES.join(", ")
                ))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Op::Synth(_) => "synth",
            Op::Label(_) => "label",
            Op::Train(_) => "train",
            Op::Rdm(_) => "rdm",
            Op::Rsa(_) => "rsa",
            Op::Curve(_) => "curve",
            Op::Concepts(_) => "concepts",
            Op::Encode(_) => "encode",
            Op::Probe(_) => "probe",
            Op::Project2d(_) => "project2d",
        }
    }

    pub fn required_inputs(&self) -> &'static [&'static str] {
        match self {
            Op::Synth(_) => &[],
            Op::Label(_) | Op::Rdm(_) | Op::Project2d(_) => &["embedding"],
            Op::Train(_) => &["data", "labels"],
            Op::Rsa(_) => &["a", "b"],
            Op::Curve(_) => &["target"],
            Op::Concepts(_) => &["a", "b", "reference"],
            Op::Encode(_) => &["features", "responses"],
            Op::Probe(_) => &["embedding", "target"],
        }
    }

    /// Whether `name` is an accepted input for this operation.
    pub fn accepts_input(&self, name: &str) -> bool {
        let optional: &[&str] = match self {
            Op::Train(_) => &["eval"],
            Op::Curve(_) => &["baseline"],
            Op::Concepts(_) => &["categories"],
            Op::Project2d(_) => &["labels"],
            _ => &[],
        };
        self.required_inputs().contains(&name)
            || optional.contains(&name)
            || matches!(self, Op::Curve(_) if curve_level(name).is_some())
    }

    /// Output keys this operation may produce; the first is what a bare
    /// `@stage` reference resolves to.
    pub fn output_keys(&self) -> &'static [&'static str] {
        match self {
            Op::Synth(_) => &["data", "means", "labels", "truth"],
            Op::Label(_) => &["labels"],
            Op::Train(_) => &["penultimate", "report"],
            Op::Rdm(_) => &["rdm"],
            Op::Rsa(_) => &["result"],
            Op::Curve(_) | Op::Probe(_) => &["summary", "table", "plot"],
            Op::Concepts(_) | Op::Encode(_) => &["summary", "table"],
            Op::Project2d(_) => &["projection", "summary", "table", "plot"],
        }
    }

    /// Explicit seed from the arguments, if the operation takes one.
    pub fn seed(&self) -> Option<u64> {
        match self {
            Op::Synth(a) => a.seed,
            Op::Train(a) => a.seed,
            Op::Rsa(a) | Op::Curve(a) => a.seed,
            Op::Encode(a) => a.seed,
            Op::Probe(a) => a.seed,
            _ => None,
        }
    }

    pub fn uses_seed(&self) -> bool {
        matches!(
            self,
            Op::Synth(_) | Op::Train(_) | Op::Rsa(_) | Op::Curve(_) | Op::Encode(_) | Op::Probe(_)
        )
    }

    pub fn run(&self, stage: &mut Stage, seed: u64) -> Result<()> {
        match self {
            Op::Synth(a) => synth(a, stage, seed),
            Op::Label(a) => label(a, stage),
            Op::Train(a) => train_stage(a, stage, seed),
            Op::Rdm(a) => rdm(a, stage),
            Op::Rsa(a) => rsa(a, stage, seed),
            Op::Curve(a) => curve(a, stage, seed),
            Op::Concepts(a) => concepts(a, stage),
            Op::Encode(a) => encode(a, stage, seed),
            Op::Probe(a) => probe(a, stage, seed),
            Op::Project2d(_) => project(stage),
        }
    }
}

/// `k8` -> 8.
fn curve_level(name: &str) -> Option<usize> {
    name.strip_prefix('k')?.parse().ok().filter(|&k| k > 0)
}

// ---------------------------------------------------------------- operations

fn synth(a: &SynthArgs, st: &mut Stage, seed: u64) -> Result<()> {
    let h = generate_hierarchical_data(
        a.depth.unwrap_or(3),
        a.per_leaf.unwrap_or(20),
        a.dim.unwrap_or(16),
        a.noise_sd.unwrap_or(0.5),
        seed,
    )?;
    st.embedding("data", &h.data)?;
    st.embedding("means", &h.leaf_means)?;
    if let Some(labels) = h.leaf_labels() {
        let path = st.path("labels", "json");
        fs::write(&path, labels_to_json(&labels)?)?;
        st.record("labels", path);
    }
    let stride = a.truth_stride.unwrap_or(1);
    if stride == 0 {
        bail!("truth_stride must be at least 1");
    }
    let idx: Vec<usize> = (0..h.data.n_rows()).step_by(stride).collect();
    st.rdm("truth", &h.ground_truth_rdm_for(&idx)?)
}

fn label(a: &LabelArgs, st: &mut Stage) -> Result<()> {
    let m = read_embedding(st.input("embedding")?)?;
    let depth = a.depth.unwrap_or(3);
    let mode = a.mode.unwrap_or_default();
    let components = match mode {
        SplitMode::Global => depth,
        SplitMode::Local => 1,
    };
    let basis = fit_pca(&m, components)?;
    let labels = recursive_median_partition(&m, &basis, depth, mode)?;
    let path = st.path("labels", "json");
    fs::write(&path, labels_to_json(&labels)?)?;
    st.record("labels", path);
    Ok(())
}

fn train_stage(a: &TrainArgs, st: &mut Stage, seed: u64) -> Result<()> {
    let data = read_embedding(st.input("data")?)?;
    let mut labels = read_labels(st.input("labels")?)?;
    if let Some(depth) = a.depth {
        labels = labels.truncate(depth)?;
    }
    let mut widths = vec![data.n_cols()];
    widths.extend(a.hidden.clone().unwrap_or_else(|| vec![64, 32]));
    let mut config = MlpConfig::new(widths, labels.n_classes(), a.epochs.unwrap_or(50), seed);
    if let Some(v) = a.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = a.lr_decay {
        config.lr_decay = v;
    }
    if let Some(v) = a.decay_every {
        config.decay_every = v;
    }
    if let Some(v) = a.momentum {
        config.momentum = v;
    }
    if let Some(v) = a.batch_size {
        config.batch_size = v;
    }
    config.subsample = a.subsample;

    let (params, report) = train(&config, &data, &labels)?;
    log::info!(
        "{}: K={} final loss {:.4}, accuracy {:.3} ({:.1}s)",
        st.name,
        config.n_classes,
        report.loss.last().copied().unwrap_or(f64::NAN),
        report.final_accuracy,
        report.wall_clock_secs
    );
    let eval = match st.optional_input("eval") {
        Some(path) => read_embedding(path)?,
        None => data,
    };
    let penultimate = extract_penultimate(&params, &eval)?;
    st.embedding("penultimate", &penultimate)?;
    st.json(
        "report",
        &json!({
            "config": config,
            "label_depth": labels.depth(),
            "report": report,
        }),
    )
}

fn rdm(a: &RdmArgs, st: &mut Stage) -> Result<()> {
    let m = read_embedding(st.input("embedding")?)?;
    st.rdm("rdm", &compute_rdm(&m, a.metric.unwrap_or_default())?)
}

fn rsa(a: &RsaArgs, st: &mut Stage, seed: u64) -> Result<()> {
    let metric = a.metric.unwrap_or_default();
    let sa = Source::load(st.input("a")?)?;
    let sb = Source::load(st.input("b")?)?;
    let ids = common_ids(sa.ids(), &[sb.ids()], a.stride.unwrap_or(1))?;
    let ra = sa.restrict(&ids, metric)?;
    let rb = sb.restrict(&ids, metric)?;
    let result = bootstrap_ci(&ra, &rb, a.n_boot.unwrap_or(DEFAULT_N_BOOT), seed)?;
    st.json("result", &result.to_record(metric))
}

#[derive(Serialize)]
struct CurveSummary {
    reference: String,
    metric: String,
    n_boot: usize,
    seed: u64,
    n_stimuli: usize,
    points: Vec<CurvePoint>,
    baseline: Option<AlignmentRecord>,
    /// Smallest K whose interval overlaps the baseline's.
    min_k: Option<usize>,
}

fn curve(a: &RsaArgs, st: &mut Stage, seed: u64) -> Result<()> {
    let metric = a.metric.unwrap_or_default();
    let n_boot = a.n_boot.unwrap_or(DEFAULT_N_BOOT);
    let target_path = st.input("target")?;
    let target = Source::load(target_path)?;

    let levels: BTreeMap<usize, Source> = st
        .inputs
        .iter()
        .filter_map(|(name, path)| curve_level(name).map(|k| (k, path)))
        .map(|(k, path)| Ok((k, Source::load(path)?)))
        .collect::<Result<_>>()?;
    if levels.is_empty() {
        bail!("no curve inputs; name them k<K>, e.g. \"k8\"");
    }
    let baseline = st
        .optional_input("baseline")
        .map(Source::load)
        .transpose()?;

    let mut others: Vec<&[String]> = levels.values().map(Source::ids).collect();
    if let Some(b) = &baseline {
        others.push(b.ids());
    }
    let ids = common_ids(target.ids(), &others, a.stride.unwrap_or(1))?;
    let truth = target.restrict(&ids, metric)?;

    let mut curve = Vec::with_capacity(levels.len());
    for (&k, source) in &levels {
        let rdm = source.restrict(&ids, metric)?;
        let result = bootstrap_ci(&rdm, &truth, n_boot, seed)?;
        log::info!(
            "{}: K={k} rho {:.4} [{:.4}, {:.4}]",
            st.name,
            result.rho,
            result.ci_low,
            result.ci_high
        );
        curve.push((k, result));
    }
    let baseline = baseline
        .map(|b| -> Result<_> {
            Ok(bootstrap_ci(
                &b.restrict(&ids, metric)?,
                &truth,
                n_boot,
                seed,
            )?)
        })
        .transpose()?;
    let min_k = match &baseline {
        Some(b) => min_k_overlap(&curve, b)?,
        None => None,
    };

    let points: Vec<CurvePoint> = curve
        .iter()
        .map(|(k, r)| CurvePoint {
            k: *k,
            rho: r.rho,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
        })
        .collect();
    st.json(
        "summary",
        &CurveSummary {
            reference: file_label(target_path),
            metric: metric.to_string(),
            n_boot,
            seed,
            n_stimuli: ids.len(),
            points: points.clone(),
            baseline: baseline.map(|b| b.to_record(metric)),
            min_k,
        },
    )?;
    write_curve_reports(
        st,
        &points,
        baseline.map(|b| (b.rho, b.ci_low, b.ci_high)),
        "K",
    )
}

fn write_curve_reports(
    st: &mut Stage,
    points: &[CurvePoint],
    reference: Option<(f64, f64, f64)>,
    k_column: &str,
) -> Result<()> {
    if st.wants(Format::Csv) {
        let rows: Vec<Vec<String>> = points
            .iter()
            .map(|p| vec![p.k.to_string(), num(p.rho), num(p.ci_low), num(p.ci_high)])
            .collect();
        st.csv("table", &[k_column, "rho", "ci_low", "ci_high"], &rows)?;
    }
    if st.wants(Format::Svg) {
        let pts: Vec<ErrorPoint> = points
            .iter()
            .map(|p| ErrorPoint {
                x: p.k as f64,
                y: p.rho,
                lo: p.ci_low,
                hi: p.ci_high,
            })
            .collect();
        let reference = reference.map(|(y, lo, hi)| ErrorPoint { x: 0.0, y, lo, hi });
        let svg = plot::line_with_errors(&pts, reference, st.name, k_column);
        st.bytes("plot", "svg", svg.as_bytes())?;
    }
    Ok(())
}

fn read_categories(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut map = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let (Some(id), Some(category)) = (record.get(0), record.get(1)) else {
            bail!("{}: expected id,category rows", path.display());
        };
        map.insert(id.to_string(), category.to_string());
    }
    Ok(map)
}

fn concepts(a: &ConceptsArgs, st: &mut Stage) -> Result<()> {
    let metric = a.metric.unwrap_or_default();
    let sa = Source::load(st.input("a")?)?;
    let sb = Source::load(st.input("b")?)?;
    let sr = Source::load(st.input("reference")?)?;
    let ids = common_ids(sr.ids(), &[sa.ids(), sb.ids()], 1)?;
    let reference = sr.restrict(&ids, metric)?;
    let scores_a = per_concept_alignment(&sa.restrict(&ids, metric)?, &reference)?;
    let scores_b = per_concept_alignment(&sb.restrict(&ids, metric)?, &reference)?;
    let categories = match st.optional_input("categories") {
        Some(path) => read_categories(path)?,
        None => ids
            .iter()
            .map(|id| (id.clone(), "all".to_string()))
            .collect(),
    };
    let summary = aggregate_by_category(&ids, &scores_a, &scores_b, &categories)?;
    st.json(
        "summary",
        &json!({ "concepts": ids, "metric": metric, "summary": summary }),
    )?;
    if st.wants(Format::Csv) {
        let rows: Vec<Vec<String>> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                vec![
                    id.clone(),
                    categories[id].clone(),
                    opt(scores_a[i]),
                    opt(scores_b[i]),
                    opt(summary.advantage.delta[i]),
                ]
            })
            .collect();
        st.csv(
            "table",
            &["id", "category", "rho_a", "rho_b", "delta"],
            &rows,
        )?;
    }
    Ok(())
}

fn encode(a: &EncodeArgs, st: &mut Stage, seed: u64) -> Result<()> {
    let features = read_embedding(st.input("features")?)?;
    let responses = read_embedding(st.input("responses")?)?;
    let (features, responses) = align_by_ids(&features, &responses)?;
    let lambdas = a.lambdas.clone().unwrap_or_else(default_lambdas);
    let score = cv_encoding_score(
        &features.to_dmatrix(),
        &responses.to_dmatrix(),
        &lambdas,
        a.folds.unwrap_or(5),
        seed,
    )?;
    st.json("summary", &score)?;
    if st.wants(Format::Csv) {
        let rows: Vec<Vec<String>> = score
            .per_unit_r
            .iter()
            .enumerate()
            .map(|(u, r)| vec![u.to_string(), opt(*r)])
            .collect();
        st.csv("table", &["unit", "r"], &rows)?;
    }
    Ok(())
}

fn probe(a: &ProbeArgs, st: &mut Stage, seed: u64) -> Result<()> {
    let metric = a.metric.unwrap_or_default();
    let n_boot = a.n_boot.unwrap_or(DEFAULT_N_BOOT);
    let m = read_embedding(st.input("embedding")?)?;
    let target_path = st.input("target")?;
    let target = Source::load(target_path)?;
    let ids = common_ids(m.ids(), &[target.ids()], a.stride.unwrap_or(1))?;
    let index = m.index_of();
    let rows: Vec<usize> = ids.iter().map(|id| index[id.as_str()]).collect();
    let m = m.select_rows(&rows)?;
    let truth = target.restrict(&ids, metric)?;
    let curve = alignment_vs_k(
        &m,
        &truth,
        a.ks.as_deref(),
        metric,
        n_boot,
        seed,
        file_label(target_path),
    )?;
    let points = curve.points();
    st.json(
        "summary",
        &json!({
            "reference": curve.reference,
            "metric": metric,
            "n_boot": n_boot,
            "seed": seed,
            "n_stimuli": ids.len(),
            "full_rank": curve.full_rank,
            "points": points,
        }),
    )?;
    write_curve_reports(st, &points, None, "k")
}

fn project(st: &mut Stage) -> Result<()> {
    let m = read_embedding(st.input("embedding")?)?;
    let proj = project_2d(&m)?;
    let classes = st
        .optional_input("labels")
        .map(|path| -> Result<Vec<usize>> { Ok(read_labels(path)?.classes_for(m.ids())?) })
        .transpose()?;
    let silhouette = classes
        .as_deref()
        .map(|c| silhouette_score(&m, c))
        .transpose()?;
    st.embedding("projection", &proj)?;
    st.json(
        "summary",
        &json!({ "n_stimuli": m.n_rows(), "source": m.source_tag(), "silhouette": silhouette }),
    )?;
    if st.wants(Format::Csv) {
        let rows: Vec<Vec<String>> = (0..proj.n_rows())
            .map(|i| {
                let mut row = vec![m.ids()[i].clone(), num(proj.get(i, 0)), num(proj.get(i, 1))];
                if let Some(c) = &classes {
                    row.push(c[i].to_string());
                }
                row
            })
            .collect();
        let header: &[&str] = if classes.is_some() {
            &["id", "pc1", "pc2", "class"]
        } else {
            &["id", "pc1", "pc2"]
        };
        st.csv("table", header, &rows)?;
    }
    if st.wants(Format::Svg) {
        let pts: Vec<(f64, f64)> = (0..proj.n_rows())
            .map(|i| (proj.get(i, 0), proj.get(i, 1)))
            .collect();
        let svg = plot::scatter(&pts, classes.as_deref(), st.name);
        st.bytes("plot", "svg", svg.as_bytes())?;
    }
    Ok(())
}
