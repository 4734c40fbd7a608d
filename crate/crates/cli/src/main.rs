use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use inf2vec::checkpoint::{load_checkpoint, save_checkpoint};
use inf2vec::eval::{
    evaluate_model, heatmap_export, influence_matrix, truth_alignment, TruthMode,
};
use inf2vec::events::{
    load_jsonl, load_meta, save_jsonl, save_meta, split_dataset, Meta, SplitSpec, META_FILE,
};
use inf2vec::hawkes::{export_truth, simulate_dataset, HawkesParams, Preset};
use inf2vec::model::ModelConfig;
use inf2vec::train::{save_history_csv, train, TrainConfig};
use inf2vec::{Error, Result};

const DATA_FILE: &str = "data.jsonl";
const TRUTH_FILE: &str = "truth.json";
const HISTORY_FILE: &str = "history.csv";

#[derive(Parser)]
#[command(name = "inf2vec", version, about = "Type-wise local embeddings for temporal point processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a multivariate Hawkes process.
    Simulate(SimulateArgs),
    /// Split a simulated or imported dataset into train/valid/test.
    Split(SplitArgs),
    /// Train a model and write the best-validation checkpoint.
    Train(TrainArgs),
    /// Report weighted F1, MAE and NLL of a checkpoint on a dataset.
    Evaluate(EvaluateArgs),
    /// Export the influence matrix of a local-mode checkpoint.
    Influence(InfluenceArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Hawkes parameter JSON file, or a preset name (haw5, haw9, hawc9).
    #[arg(long)]
    params: String,
    /// Number of sequences.
    #[arg(long)]
    num_seqs: usize,
    /// Observation horizon of each sequence.
    #[arg(long)]
    horizon: f64,
    #[arg(long)]
    seed: u64,
    /// Output directory; receives data.jsonl, meta.json and truth.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    /// Directory holding data.jsonl and meta.json.
    #[arg(long)]
    data: PathBuf,
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',', num_args = 3, default_value = "0.6,0.2,0.2")]
    ratios: Vec<f64>,
    #[arg(long)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory holding train.jsonl, valid.jsonl and meta.json.
    #[arg(long)]
    data: PathBuf,
    /// JSON file, or key=value overrides such as `mode=global decoder=intensity`.
    #[arg(long, num_args = 1.., default_value = "mode=local")]
    model_config: Vec<String>,
    /// JSON file, or key=value overrides such as `lr=0.005 max_epochs=30`.
    #[arg(long, num_args = 1..)]
    train_config: Vec<String>,
    /// Initialization and shuffling seed; overrides any seed in the training config.
    #[arg(long)]
    seed: u64,
    /// Checkpoint path; history.csv is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// JSONL dataset to score.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    /// Metrics report path (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InfluenceArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Output prefix; writes <prefix>.csv, <prefix>.svg and with --truth <prefix>.alignment.json.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth Hawkes parameter JSON file, or a preset name.
    #[arg(long)]
    truth: Option<String>,
    /// Which truth to rank against.
    #[arg(long, value_parser = ["alpha", "alpha_beta_pca"], default_value = "alpha")]
    truth_mode: String,
}

fn load_params(spec: &str) -> Result<HawkesParams> {
    match Preset::from_name(spec) {
        Some(p) if !Path::new(spec).exists() => Ok(p.params()),
        _ => HawkesParams::load(spec),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// `key=value` pairs, or a single JSON object file.
fn config_pairs(values: &[String]) -> Result<Vec<(String, String)>> {
    if let [single] = values {
        if !single.contains('=') {
            let text = fs::read_to_string(single).map_err(|e| Error::io(single, e))?;
            let map: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&text)?;
            return Ok(map
                .into_iter()
                .map(|(k, v)| {
                    let v = match v {
                        serde_json::Value::String(s) => s,
                        other => other.to_string(),
                    };
                    (k, v)
                })
                .collect());
        }
    }
    values
        .iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::InvalidConfig(format!("expected key=value, got {kv:?}")))
        })
        .collect()
}

fn simulate_cmd(a: SimulateArgs) -> Result<()> {
    let params = load_params(&a.params)?;
    let data = simulate_dataset(&params, a.num_seqs, a.horizon, a.seed)?;
    ensure_dir(&a.out)?;
    save_jsonl(&data, a.out.join(DATA_FILE))?;
    save_meta(&a.out, Meta { num_types: params.num_types() })?;
    export_truth(&params, a.out.join(TRUTH_FILE))?;

    let analytic = params.stationary_rate()?;
    let horizon = data.total_horizon();
    let counts = data.type_counts();
    println!(
        "simulated {} sequences, {} events -> {}",
        data.len(),
        data.num_events(),
        a.out.display()
    );
    println!("type  empirical  analytic");
    for (k, (c, r)) in counts.iter().zip(&analytic).enumerate() {
        let empirical = if horizon > 0.0 { *c as f64 / horizon } else { 0.0 };
        println!("{k:>4}  {empirical:>9.4}  {r:>8.4}");
    }
    Ok(())
}

fn split_cmd(a: SplitArgs) -> Result<()> {
    let meta = load_meta(&a.data)?;
    let data = load_jsonl(a.data.join(DATA_FILE), meta.num_types)?;
    let ratios: [f64; 3] = a
        .ratios
        .as_slice()
        .try_into()
        .map_err(|_| Error::InvalidSplit("expected three ratios".into()))?;
    let (tr, va, te) = split_dataset(&data, &SplitSpec::new(ratios, a.seed)?)?;
    for (name, part) in [("train", &tr), ("valid", &va), ("test", &te)] {
        save_jsonl(part, a.data.join(format!("{name}.jsonl")))?;
    }
    println!("split {} sequences into {}/{}/{}", data.len(), tr.len(), va.len(), te.len());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    if !a.data.is_dir() {
        return Err(Error::InvalidArgument(format!(
            "data directory {} does not exist",
            a.data.display()
        )));
    }
    let meta = load_meta(&a.data)?;
    let k = meta.num_types;
    let mut model_cfg = ModelConfig::new(k);
    for (key, value) in config_pairs(&a.model_config)? {
        model_cfg.set(&key, &value)?;
    }
    if model_cfg.num_types != k {
        return Err(Error::Incompatible(format!(
            "model config has K={} but {} declares K={k}",
            model_cfg.num_types, META_FILE
        )));
    }
    let mut train_cfg = TrainConfig::default();
    if !a.train_config.is_empty() {
        for (key, value) in config_pairs(&a.train_config)? {
            train_cfg.set(&key, &value)?;
        }
    }
    train_cfg.seed = a.seed;

    let train_data = load_jsonl(a.data.join("train.jsonl"), k)?;
    let valid_data = load_jsonl(a.data.join("valid.jsonl"), k)?;
    let outcome = train(model_cfg, &train_data, &valid_data, &train_cfg)?;

    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    save_checkpoint(&outcome.best, &a.out)?;
    let history_path = a
        .out
        .parent()
        .map_or_else(|| PathBuf::from(HISTORY_FILE), |p| p.join(HISTORY_FILE));
    save_history_csv(&outcome.history, &history_path)?;
    println!(
        "best validation NLL {:.6} at epoch {} ({} epochs run)",
        outcome.best_valid_nll(),
        outcome.best.epoch,
        outcome.history.len() - 1
    );
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let k = ckpt.config().num_types;
    if let Some(dir) = a.data.parent() {
        if dir.join(META_FILE).exists() {
            ckpt.check_compatible(load_meta(dir)?.num_types)?;
        }
    }
    let data = load_jsonl(&a.data, k)?;
    if data.num_events() == 0 {
        return Err(Error::InvalidDataset(format!(
            "{} contains no events",
            a.data.display()
        )));
    }
    let report = evaluate_model(&ckpt.model, &data)?;
    report.save(&a.out)?;
    println!("{}", report.to_json()?);
    Ok(())
}

fn influence_cmd(a: InfluenceArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let matrix = influence_matrix(&ckpt.model)?;
    let truth = a.truth.as_deref().map(load_params).transpose()?;
    let alignment = match &truth {
        Some(t) => {
            let mode = match a.truth_mode.as_str() {
                "alpha_beta_pca" => TruthMode::AlphaBetaPca,
                _ => TruthMode::Alpha,
            };
            Some(truth_alignment(&matrix, t, mode)?)
        }
        None => None,
    };
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    let (csv, svg) = heatmap_export(&matrix.scores, &a.out)?;
    println!("wrote {} and {}", csv.display(), svg.display());
    if let Some(al) = alignment {
        let mut path = a.out.as_os_str().to_owned();
        path.push(".alignment.json");
        let path = PathBuf::from(path);
        let text = serde_json::to_string_pretty(&al)? + "\n";
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        println!(
            "mean |Spearman| {:.4} (signed scores {:.4}) -> {}",
            al.mean_abs,
            al.mean_abs_sign_flip,
            path.display()
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate_cmd(a),
        Command::Split(a) => split_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Influence(a) => influence_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
