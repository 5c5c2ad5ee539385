//! Command-line front end: synthetic data, training, embedding export and
//! evaluation.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use tgnn::eval::{self, LinkSplit};
use tgnn::export::Embeddings;
use tgnn::gradcheck::gradcheck_toy;
use tgnn::graph::{load_graph_files, read_labels, HetGraph, TreeSchema};
use tgnn::model::{encode_all, ModelParams};
use tgnn::objective::WalkCorpus;
use tgnn::params::Checkpoint;
use tgnn::sampler::{AggregationPlan, Fanout};
use tgnn::seed::Seed;
use tgnn::synthetic::{gen_synthetic, SyntheticSpec};
use tgnn::train::{train_from, write_loss_log, TrainConfig, TrainObserver, TrainState};

#[derive(Parser)]
#[command(name = "tgnn", version, about = "Tree-schema heterogeneous graph neural network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Three types, ~600 nodes, 4 communities
    Planted,
    /// DBLP roster at 1/50 scale
    Dblp,
}

#[derive(clap::Args)]
struct GraphArgs {
    #[arg(long)]
    nodes: PathBuf,
    #[arg(long)]
    edges: PathBuf,
    /// Schema configuration (relations and tree schemas)
    #[arg(long)]
    schemas: PathBuf,
}

impl GraphArgs {
    fn load(&self) -> Result<(HetGraph, Vec<TreeSchema>)> {
        Ok(load_graph_files(&self.nodes, &self.edges, &self.schemas)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a planted-community graph: nodes, edges, labels, schemas
    GenSynthetic {
        #[arg(long, value_enum, conflicts_with = "spec")]
        preset: Option<Preset>,
        /// JSON generator spec
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train and write checkpoint, optimizer state and loss log
    Train {
        #[command(flatten)]
        graph: GraphArgs,
        /// JSON training config; omitted fields take defaults
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from checkpoint.json and optimizer.json in this directory
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Write the first batch's aggregation plan to plan.json
        #[arg(long)]
        dump_plan: bool,
        /// Write the first epoch's walks to corpus.tsv
        #[arg(long)]
        dump_corpus: bool,
    },
    /// Encode every node and write one embedding TSV per type
    Embed {
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Children kept per parent; all when omitted
        #[arg(long)]
        fanout: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// K-Means on embeddings of labeled nodes; NMI and ARI
    EvalCluster {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Logistic regression on a 50/10/40 split; micro and macro F1
    EvalClassify {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Link prediction on Hadamard link features; AUC and F1
    EvalLink {
        #[arg(long)]
        embeddings: PathBuf,
        /// Edge list holding the positive links
        #[arg(long)]
        edges: PathBuf,
        /// Relation whose edges are the positives
        #[arg(long)]
        relation: String,
        /// Held-out test links; the rest of the relation trains the classifier
        #[arg(long)]
        test_edges: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        negative_ratio: usize,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Hide labeled nodes, train on the rest, evaluate the hidden ones
    EvalInductive {
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        hidden_fraction: f64,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Full-model gradient check on a frozen toy instance
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<TrainConfig> {
    let mut config = match path {
        Some(p) => TrainConfig::from_json(&read_text(p)?)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

fn load_labels(path: &Path) -> Result<Vec<(String, String)>> {
    let file = fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(read_labels(std::io::BufReader::new(file), &path.display().to_string())?)
}

#[derive(Default)]
struct Dumps {
    plan: Option<AggregationPlan>,
    corpus: Option<WalkCorpus>,
}

impl TrainObserver for Dumps {
    fn on_corpus(&mut self, _epoch: usize, corpus: &WalkCorpus) {
        if self.corpus.is_none() {
            self.corpus = Some(corpus.clone());
        }
    }

    fn on_batch(&mut self, _epoch: usize, _batch: usize, plan: &AggregationPlan, _loss: f64) {
        if self.plan.is_none() {
            self.plan = Some(plan.clone());
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynthetic { preset, spec, out, seed } => {
            let mut spec = match (preset, spec) {
                (_, Some(path)) => SyntheticSpec::from_json(&read_text(&path)?)?,
                (Some(Preset::Dblp), None) => SyntheticSpec::dblp_scaled(),
                (Some(Preset::Planted), None) | (None, None) => SyntheticSpec::planted_benchmark(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let generated = gen_synthetic(&spec)?;
            for p in generated.write_files(&out)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Train {
            graph,
            config,
            out,
            seed,
            resume,
            dump_plan,
            dump_corpus,
        } => {
            let (g, schemas) = graph.load()?;
            let config = load_config(config.as_deref(), seed)?;
            let state = match resume {
                Some(dir) => {
                    let ckpt = Checkpoint::from_json(&read_text(&dir.join("checkpoint.json"))?)?;
                    let params = ModelParams::from_checkpoint(&g, &ckpt)?;
                    TrainState::from_parts(params, &read_text(&dir.join("optimizer.json"))?)?
                }
                None => TrainState::new(&g, &config),
            };
            let mut dumps = Dumps::default();
            let outcome = train_from(&g, &schemas, &config, state, &mut dumps)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write(&out.join("config.json"), config.to_json() + "\n")?;
            write(&out.join("checkpoint.json"), outcome.state.params.checkpoint().to_json())?;
            write(&out.join("optimizer.json"), outcome.state.optimizer_json())?;
            let mut log = Vec::new();
            write_loss_log(&outcome.log, &mut log)?;
            write(&out.join("loss.csv"), log)?;
            if dump_plan {
                if let Some(plan) = &dumps.plan {
                    write(&out.join("plan.json"), plan.to_json())?;
                }
            }
            if dump_corpus {
                if let Some(corpus) = &dumps.corpus {
                    let mut buf = Vec::new();
                    corpus.write(&mut buf)?;
                    write(&out.join("corpus.tsv"), buf)?;
                }
            }
            match outcome.log.last() {
                Some(r) => println!("trained {} epochs, final batch loss {}", outcome.state.epoch, r.loss),
                None => println!("no training steps run"),
            }
        }
        Command::Embed {
            graph,
            checkpoint,
            out,
            fanout,
            seed,
        } => {
            let (g, schemas) = graph.load()?;
            let ckpt = Checkpoint::from_json(&read_text(&checkpoint)?)?;
            let params = ModelParams::from_checkpoint(&g, &ckpt)?;
            let fanout = fanout.map_or(Fanout::Unlimited, Fanout::Cap);
            let encoded = encode_all(&g, &schemas, &params, fanout, Seed(seed))?;
            for p in Embeddings::from_batch(&g, &encoded).write_dir(&out)? {
                println!("wrote {}", p.display());
            }
        }
        Command::EvalCluster {
            embeddings,
            labels,
            report,
            seed,
        } => {
            let emb = Embeddings::read_path(&embeddings)?;
            let (rows, names) = eval::align(&emb, &load_labels(&labels)?)?;
            let r = eval::cluster_eval(&rows, &names, Seed(seed))?;
            write(&report, r.to_json() + "\n")?;
            println!("{}", r.to_json());
        }
        Command::EvalClassify {
            embeddings,
            labels,
            report,
            seed,
        } => {
            let emb = Embeddings::read_path(&embeddings)?;
            let (rows, names) = eval::align(&emb, &load_labels(&labels)?)?;
            let r = eval::classify_eval(&rows, &names, Seed(seed))?;
            write(&report, r.to_json() + "\n")?;
            println!("{}", r.to_json());
        }
        Command::EvalLink {
            embeddings,
            edges,
            relation,
            test_edges,
            negative_ratio,
            report,
            seed,
        } => {
            let emb = Embeddings::read_path(&embeddings)?;
            let positives = read_relation_edges(&edges, &relation)?;
            if positives.is_empty() {
                bail!(tgnn::Error::Contract(format!("no edges of relation {relation:?} in {}", edges.display())));
            }
            let mut known: HashSet<(String, String)> = positives.iter().cloned().collect();
            let split = match test_edges {
                Some(path) => {
                    let test = read_relation_edges(&path, &relation)?;
                    let held: HashSet<_> = test.iter().cloned().collect();
                    let rest: Vec<_> = positives.iter().filter(|e| !held.contains(e)).cloned().collect();
                    known.extend(test.iter().cloned());
                    let mut split = LinkSplit::from_edges(&rest, 6.0 / 7.0, 1.0 / 7.0, Seed(seed));
                    split.test = test;
                    split
                }
                None => LinkSplit::from_edges(&positives, 0.6, 0.1, Seed(seed)),
            };
            let type_of = |n: &str| -> Result<String> {
                Ok(emb
                    .type_of(n)
                    .ok_or_else(|| tgnn::Error::Reference(format!("no embedding for link endpoint {n:?}")))?
                    .to_string())
            };
            let (src_t, dst_t) = (type_of(&positives[0].0)?, type_of(&positives[0].1)?);
            let pool = |t: &str| -> Vec<String> { emb.rows_of_type(t).iter().map(|r| r.0.clone()).collect() };
            let r = eval::link_predict_eval(&emb, &split, &pool(&src_t), &pool(&dst_t), &known, negative_ratio, Seed(seed))?;
            write(&report, r.to_json() + "\n")?;
            println!("{}", r.to_json());
        }
        Command::EvalInductive {
            graph,
            labels,
            config,
            hidden_fraction,
            report,
            seed,
        } => {
            let (g, schemas) = graph.load()?;
            let config = load_config(config.as_deref(), seed)?;
            let r = eval::inductive_protocol(&g, &schemas, &load_labels(&labels)?, hidden_fraction, &config)?;
            write(&report, r.to_json() + "\n")?;
            println!("{}", r.to_json());
        }
        Command::Gradcheck { seed } => {
            let start = std::time::Instant::now();
            let r = gradcheck_toy(Seed(seed))?;
            println!(
                "max relative error {:e} over {} coordinates ({:.2}s)",
                r.max_relative_error,
                r.coordinates,
                start.elapsed().as_secs_f64()
            );
            if r.max_relative_error >= 1e-4 {
                bail!(tgnn::Error::Numeric(format!(
                    "gradient check failed at parameter {} coordinate {}: analytic {} vs numeric {}",
                    r.worst.0, r.worst.1, r.analytic, r.numeric
                )));
            }
        }
    }
    Ok(())
}

/// `src<TAB>dst<TAB>relation` rows of one relation, as name pairs.
fn read_relation_edges(path: &Path, relation: &str) -> Result<Vec<(String, String)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            bail!(tgnn::Error::Parse {
                source_name: path.display().to_string(),
                line: i + 1,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        if fields[2] == relation {
            out.push((fields[0].to_string(), fields[1].to_string()));
        }
    }
    Ok(out)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<tgnn::Error>()) {
        Some(e) if e.is_numeric() => 3,
        Some(e) if e.is_validation() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
