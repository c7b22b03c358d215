use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use hgcl::contrast::Variant;
use hgcl::hetgraph::{save_graph, synthetic_hg, SyntheticConfig};
use hgcl::pipeline::{
    ablate, knn_eval, load_run, metrics_csv, save_run, split_rng, structure_index, summary_table, train_and_eval,
    Prepared, RunConfig, RunResult,
};
use hgcl::structure::{build_candidates, StructureIndex};
use hgcl::Result;

#[derive(Parser)]
#[command(name = "hgcl", version, about = "Contrastive learning on heterogeneous graphs with structure-aware hard negatives")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a planted-partition heterogeneous graph as JSON.
    Generate(GenerateArgs),
    /// Build PPR or Laplacian PE indexes and candidate lists.
    Index(IndexArgs),
    /// Train a model and evaluate its embeddings.
    Train(RunArgs),
    /// Re-evaluate the embeddings stored in a run directory.
    Eval(EvalArgs),
    /// Train every variant on the same graph and tabulate the results.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_anchor: Option<usize>,
    /// Node counts of the bridge types, comma separated.
    #[arg(long, value_delimiter = ',')]
    bridges: Option<Vec<usize>>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    p_in: Option<f64>,
    #[arg(long)]
    p_out: Option<f64>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
}

/// Config file plus flag overrides shared by the training commands.
#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Graph JSON file (otherwise the configured synthetic graph is used).
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    variant: Option<Variant>,
    /// Synthesized negatives per anchor and view.
    #[arg(long)]
    m: Option<usize>,
    /// Candidate-list length.
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_json_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(g) = &self.graph {
            cfg.graph = Some(g.clone());
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(epochs) = self.epochs {
            cfg.epochs = epochs;
        }
        if let Some(p) = self.patience {
            cfg.patience = p;
        }
        if let Some(v) = self.variant {
            cfg.contrast.variant = v;
        }
        if self.m.is_some() {
            cfg.contrast.m = self.m;
        }
        if self.t.is_some() {
            cfg.contrast.t = self.t;
        }
        if let Some(tau) = self.tau {
            cfg.contrast.tau = tau;
        }
        if let Some(lr) = self.lr {
            cfg.optimizer.lr = lr;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct IndexArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Write full score matrices and candidate lists instead of a summary.
    #[arg(long)]
    dump: bool,
    /// Output file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Run directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run_dir: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Variants to compare, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "none,sem,pe,ppr")]
    variants: Vec<Variant>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn output_dir(cfg: &RunConfig, flag: &Option<PathBuf>, fallback: &str) -> PathBuf {
    flag.clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(fallback))
}

fn csv_for(results: &[RunResult]) -> String {
    metrics_csv(results.iter().map(|r| {
        (
            r.variant.as_str(),
            r.seed,
            &r.report,
            r.train.final_loss(),
            r.train.epochs_run(),
        )
    }))
}

fn generate(args: &GenerateArgs) -> Result<()> {
    let mut cfg = SyntheticConfig::default();
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.n_anchor {
        cfg.n_anchor = v;
    }
    if let Some(v) = &args.bridges {
        cfg.bridges = v.clone();
    }
    if let Some(v) = args.classes {
        cfg.n_classes = v;
    }
    if let Some(v) = args.p_in {
        cfg.p_in = v;
    }
    if let Some(v) = args.p_out {
        cfg.p_out = v;
    }
    if let Some(v) = args.feature_dim {
        cfg.feature_dim = v;
    }
    if let Some(v) = args.noise {
        cfg.noise = v;
    }
    let graph = synthetic_hg(&cfg)?;
    save_graph(&graph, &args.out)?;
    println!(
        "wrote {} ({} anchors, {} metapaths)",
        args.out.display(),
        graph.num_anchors(),
        graph.metapaths().len()
    );
    Ok(())
}

fn index(args: &IndexArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let graph = cfg.load_graph()?;
    let limit = cfg.contrast.candidates(graph.num_anchors());
    let mut views = Vec::new();
    for view in cfg.views(&graph)? {
        let idx = structure_index(&cfg, &view)?;
        let cands = build_candidates(&idx, limit)?;
        let n = view.num_nodes();
        let mut entry = json!({ "name": view.name(), "nodes": n, "components": view.component_count() });
        match &idx {
            StructureIndex::Ppr(p) => {
                let worst = p.residuals().iter().cloned().fold(0.0, f64::max);
                entry["max_residual"] = json!(worst);
                if args.dump {
                    entry["scores"] = json!((0..n).map(|v| p.vector(v).to_vec()).collect::<Vec<_>>());
                }
            }
            StructureIndex::Pe(pe) => {
                entry["eigenvalues"] = json!(pe.eigenvalues());
                if args.dump {
                    entry["embeddings"] = json!((0..n).map(|v| pe.embedding(v).to_vec()).collect::<Vec<_>>());
                }
            }
        }
        if args.dump {
            entry["candidates"] = json!((0..n).map(|v| cands.candidates(v).to_vec()).collect::<Vec<_>>());
        }
        views.push(entry);
    }
    let doc = json!({ "variant": cfg.contrast.variant, "candidates_per_anchor": limit, "views": views });
    let text = serde_json::to_string_pretty(&doc)? + "\n";
    match &args.out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn write_losses(dir: &Path, losses: &[f64]) -> Result<()> {
    let mut text = String::from("epoch,loss\n");
    for (e, l) in losses.iter().enumerate() {
        text.push_str(&format!("{e},{l}\n"));
    }
    fs::write(dir.join("losses.csv"), text)?;
    Ok(())
}

fn train_cmd(args: &RunArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let dir = output_dir(&cfg, &args.out, "run");
    let graph = cfg.load_graph()?;
    let data = Prepared::new(&cfg, &graph)?;
    let result = train_and_eval(&cfg, &data)?;
    save_run(&dir, &cfg, &result.train, data.features.cols())?;
    write_losses(&dir, &result.train.losses)?;
    let results = [result];
    fs::write(dir.join("metrics.csv"), csv_for(&results))?;
    print!("{}", summary_table(&results));
    println!("run written to {}", dir.display());
    Ok(())
}

fn eval_cmd(args: &EvalArgs) -> Result<()> {
    let (manifest, out) = load_run(&args.run_dir)?;
    let cfg = manifest.config;
    let graph = cfg.load_graph()?;
    let labels = graph
        .labels()
        .ok_or_else(|| hgcl::Error::InvalidArgument("graph has no labels to evaluate against".into()))?;
    let report = knn_eval(&out.embeddings, labels, &cfg.eval, &mut split_rng(cfg.seed))?;
    let results = [RunResult {
        variant: cfg.contrast.variant,
        seed: cfg.seed,
        train: out,
        report,
    }];
    fs::write(args.run_dir.join("metrics.csv"), csv_for(&results))?;
    print!("{}", summary_table(&results));
    Ok(())
}

fn ablate_cmd(args: &AblateArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let dir = output_dir(&cfg, &args.out, "ablation");
    let results = ablate(&cfg, &args.variants)?;
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("ablation.csv"), csv_for(&results))?;
    print!("{}", summary_table(&results));
    println!("metrics written to {}", dir.join("ablation.csv").display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Index(a) => index(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Ablate(a) => ablate_cmd(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
