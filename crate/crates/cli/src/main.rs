use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use coarsegrain_cli::ops::{
    ConceptsArgs, EncodeArgs, LabelArgs, ProbeArgs, Project2dArgs, RdmArgs, RsaArgs, SynthArgs,
    TrainArgs,
};
use coarsegrain_cli::{
    load_config, run_pipeline, Format, PipelineConfig, PipelineError, RunOptions, StageSpec,
};

#[derive(Parser)]
#[command(
    name = "coarsegrain",
    version,
    about = "Coarse-grained labels and representational alignment"
)]
struct Cli {
    /// Seed for every seeded stage that does not set its own
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory for outputs and the run manifest
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Extra report formats (repeatable); JSON is always written
    #[arg(long, global = true, value_enum)]
    format: Vec<Format>,
    /// Log progress (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted binary hierarchy with its ground-truth RDM
    Synth {
        #[command(flatten)]
        args: SynthArgs,
        #[arg(long, default_value = "synth")]
        name: String,
    },
    /// Recursive PCA median-split labels for an embedding
    Label {
        #[arg(long)]
        embedding: PathBuf,
        #[command(flatten)]
        args: LabelArgs,
        #[arg(long, default_value = "label")]
        name: String,
    },
    /// Train an MLP classifier and save its penultimate activations
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Embedding to extract activations from [default: the training data]
        #[arg(long)]
        eval: Option<PathBuf>,
        #[command(flatten)]
        args: TrainArgs,
        #[arg(long, default_value = "train")]
        name: String,
    },
    /// Representational dissimilarity matrix of an embedding
    Rdm {
        #[arg(long)]
        embedding: PathBuf,
        #[command(flatten)]
        args: RdmArgs,
        #[arg(long, default_value = "rdm")]
        name: String,
    },
    /// Spearman alignment of two RDMs (or embeddings) with a bootstrap CI
    Rsa {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[command(flatten)]
        args: RsaArgs,
        #[arg(long, default_value = "rsa")]
        name: String,
    },
    /// Alignment to a target as a function of the number of classes K
    Curve {
        #[arg(long)]
        target: PathBuf,
        /// Model trained on K classes, as K=PATH (repeatable)
        #[arg(long = "point", value_parser = parse_point, required = true)]
        points: Vec<(usize, PathBuf)>,
        /// Fine-grained reference model
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[command(flatten)]
        args: RsaArgs,
        #[arg(long, default_value = "curve")]
        name: String,
    },
    /// Per-concept alignment of two models to a reference
    Concepts {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// CSV of id,category rows
        #[arg(long)]
        categories: Option<PathBuf>,
        #[command(flatten)]
        args: ConceptsArgs,
        #[arg(long, default_value = "concepts")]
        name: String,
    },
    /// Cross-validated ridge encoding model
    Encode {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        responses: PathBuf,
        #[command(flatten)]
        args: EncodeArgs,
        #[arg(long, default_value = "encode")]
        name: String,
    },
    /// Alignment of top-k principal component reconstructions
    Probe {
        #[arg(long)]
        embedding: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[command(flatten)]
        args: ProbeArgs,
        #[arg(long, default_value = "probe")]
        name: String,
    },
    /// PC1/PC2 projection, optionally colored by labels
    Project2d {
        #[arg(long)]
        embedding: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[command(flatten)]
        args: Project2dArgs,
        #[arg(long, default_value = "project2d")]
        name: String,
    },
    /// Run a pipeline config
    Run { config: PathBuf },
}

fn parse_point(s: &str) -> Result<(usize, PathBuf), String> {
    let (k, path) = s.split_once('=').ok_or("expected K=PATH")?;
    let k: usize = k.parse().map_err(|e| format!("bad K {k:?}: {e}"))?;
    Ok((k, PathBuf::from(path)))
}

fn args_value(args: &impl Serialize) -> Value {
    match serde_json::to_value(args).unwrap_or(Value::Null) {
        Value::Object(map) => {
            Value::Object(map.into_iter().filter(|(_, v)| !v.is_null()).collect())
        }
        other => other,
    }
}

fn inputs(pairs: &[(&str, Option<&Path>)]) -> BTreeMap<String, String> {
    pairs
        .iter()
        .filter_map(|(k, p)| p.map(|p| (k.to_string(), p.to_string_lossy().into_owned())))
        .collect()
}

fn single(
    name: String,
    op: &str,
    args: Value,
    inputs: BTreeMap<String, String>,
) -> (PipelineConfig, String) {
    let manifest = format!("{name}.manifest.json");
    let stage = StageSpec {
        name,
        op: op.to_string(),
        args,
        inputs,
        formats: None,
    };
    (
        PipelineConfig {
            stages: vec![stage],
        },
        manifest,
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let mut opts = RunOptions::new(&cli.out_dir);
    opts.seed = cli.seed;
    opts.formats = cli.format.clone();
    opts.command = std::env::args().collect();

    let (config, manifest_name) = match cli.command {
        Command::Synth { args, name } => single(name, "synth", args_value(&args), BTreeMap::new()),
        Command::Label {
            embedding,
            args,
            name,
        } => single(
            name,
            "label",
            args_value(&args),
            inputs(&[("embedding", Some(&embedding))]),
        ),
        Command::Train {
            data,
            labels,
            eval,
            args,
            name,
        } => single(
            name,
            "train",
            args_value(&args),
            inputs(&[
                ("data", Some(&data)),
                ("labels", Some(&labels)),
                ("eval", eval.as_deref()),
            ]),
        ),
        Command::Rdm {
            embedding,
            args,
            name,
        } => single(
            name,
            "rdm",
            args_value(&args),
            inputs(&[("embedding", Some(&embedding))]),
        ),
        Command::Rsa { a, b, args, name } => single(
            name,
            "rsa",
            args_value(&args),
            inputs(&[("a", Some(&a)), ("b", Some(&b))]),
        ),
        Command::Curve {
            target,
            points,
            baseline,
            args,
            name,
        } => {
            let mut map = inputs(&[("target", Some(&target)), ("baseline", baseline.as_deref())]);
            for (k, path) in points {
                map.insert(format!("k{k}"), path.to_string_lossy().into_owned());
            }
            single(name, "curve", args_value(&args), map)
        }
        Command::Concepts {
            a,
            b,
            reference,
            categories,
            args,
            name,
        } => single(
            name,
            "concepts",
            args_value(&args),
            inputs(&[
                ("a", Some(&a)),
                ("b", Some(&b)),
                ("reference", Some(&reference)),
                ("categories", categories.as_deref()),
            ]),
        ),
        Command::Encode {
            features,
            responses,
            args,
            name,
        } => single(
            name,
            "encode",
            args_value(&args),
            inputs(&[
                ("features", Some(&features)),
                ("responses", Some(&responses)),
            ]),
        ),
        Command::Probe {
            embedding,
            target,
            args,
            name,
        } => single(
            name,
            "probe",
            args_value(&args),
            inputs(&[("embedding", Some(&embedding)), ("target", Some(&target))]),
        ),
        Command::Project2d {
            embedding,
            labels,
            args,
            name,
        } => single(
            name,
            "project2d",
            args_value(&args),
            inputs(&[
                ("embedding", Some(&embedding)),
                ("labels", labels.as_deref()),
            ]),
        ),
        Command::Run { config } => {
            let parsed = match load_config(&config) {
                Ok(c) => c,
                Err(e) => return fail(&e),
            };
            if let Some(dir) = config.parent() {
                opts.base_dir = dir.to_path_buf();
            }
            (parsed, coarsegrain_cli::pipeline::MANIFEST_FILE.to_string())
        }
    };
    opts.manifest_name = manifest_name;

    match run_pipeline(&config, &opts) {
        Ok(manifest) => {
            for stage in &manifest.stages {
                for out in &stage.outputs {
                    println!("{}", opts.out_dir.join(&out.path).display());
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn fail(e: &PipelineError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}
