use std::fs;
use std::path::{Path, PathBuf};

use capforge_toyclip::ablation::{r1_by_seed, write_ablation_csv};
use capforge_toyclip::train::moving_average;
use capforge_toyclip::{
    ablation_sweep, eval_retrieval, sign_test_one_sided, train, AblationAxis, AblationBase, Direction,
    EncoderParams, PairCorpus, RetrievalReport, ViewPolicy,
};
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

const MODEL_FILE: &str = "model.json";
const RETRIEVAL_FILE: &str = "retrieval.json";

/// Toy experiment config: `[corpus]`, `[train]` and `views`; every field
/// has a default.
fn load_base(path: Option<&Path>) -> Result<AblationBase, CliError> {
    let Some(path) = path else {
        return Ok(AblationBase::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn parse_views(s: &str) -> Result<ViewPolicy, String> {
    s.parse().map_err(|e: capforge_toyclip::ToyClipError| e.to_string())
}

#[derive(Debug, Serialize, Deserialize)]
struct SavedModel {
    config: AblationBase,
    eval_data: Option<PathBuf>,
    steps: usize,
    temperature: f64,
    final_probe_loss: Option<f64>,
    params: EncoderParams,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Toy experiment config (TOML); defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `raw-only` or `multi:K`.
    #[arg(long, value_parser = parse_views)]
    views: Option<ViewPolicy>,
    /// Sets both the corpus seed and the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Train on these features instead of the synthetic corpus.
    #[arg(long)]
    train_data: Option<PathBuf>,
    /// Evaluate on these features instead of the synthetic eval split.
    #[arg(long)]
    eval_data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

pub fn cmd_train(args: TrainArgs) -> CliResult {
    let mut base = load_base(args.config.as_deref())?;
    if let Some(v) = args.views {
        base.views = v;
    }
    if let Some(seed) = args.seed {
        base.corpus.seed = seed;
        base.train.seed = seed;
    }
    base.corpus.validate().map_err(CliError::usage)?;
    base.train.validate().map_err(CliError::usage)?;
    let corpus = match &args.train_data {
        Some(p) => PairCorpus::read_jsonl(p).map_err(CliError::usage)?,
        None => base.corpus.generate().map_err(CliError::runtime)?.0,
    };
    if let ViewPolicy::MultiView(k) = base.views {
        if k > corpus.views() {
            return Err(CliError::Usage(format!(
                "multi:{k} needs {k} generated views, the corpus has {}",
                corpus.views()
            )));
        }
    }

    let outcome = train(&corpus, &base.train, base.views).map_err(CliError::runtime)?;
    fs::create_dir_all(&args.out).map_err(CliError::runtime)?;

    let mut w = csv::Writer::from_path(args.out.join("loss.csv")).map_err(CliError::runtime)?;
    w.write_record(["step", "loss", "moving_avg"]).map_err(CliError::runtime)?;
    let smooth = moving_average(&outcome.step_losses, 50);
    for (i, (l, m)) in outcome.step_losses.iter().zip(&smooth).enumerate() {
        w.write_record([(i + 1).to_string(), l.to_string(), m.to_string()])
            .map_err(CliError::runtime)?;
    }
    w.flush().map_err(CliError::runtime)?;
    let mut w = csv::Writer::from_path(args.out.join("trace.csv")).map_err(CliError::runtime)?;
    w.write_record(["step", "probe_loss"]).map_err(CliError::runtime)?;
    for p in &outcome.trace {
        w.write_record([p.step.to_string(), p.loss.to_string()])
            .map_err(CliError::runtime)?;
    }
    w.flush().map_err(CliError::runtime)?;

    let model = SavedModel {
        config: base,
        eval_data: args.eval_data.clone(),
        steps: outcome.steps,
        temperature: outcome.temperature,
        final_probe_loss: outcome.trace.last().map(|p| p.loss),
        params: outcome.params,
    };
    let path = args.out.join(MODEL_FILE);
    fs::write(&path, serde_json::to_string(&model).expect("model serializes")).map_err(CliError::runtime)?;
    let first = outcome.trace.first().map(|p| p.loss).unwrap_or(f64::NAN);
    crate::say!(
        "{} steps, probe loss {first:.4} -> {:.4}; wrote {}",
        model.steps,
        model.final_probe_loss.unwrap_or(f64::NAN),
        path.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory written by `train-toy`.
    #[arg(long)]
    model: PathBuf,
    /// Evaluation features; defaults to the model's own eval split.
    #[arg(long)]
    eval_data: Option<PathBuf>,
    /// Where to write the report; defaults to `<model>/retrieval.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct EvalReport {
    i2t: RetrievalReport,
    t2i: RetrievalReport,
}

pub fn cmd_eval(args: EvalArgs) -> CliResult {
    let model_path = args.model.join(MODEL_FILE);
    let text = fs::read_to_string(&model_path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", model_path.display())))?;
    let model: SavedModel = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", model_path.display())))?;
    let eval = match args.eval_data.as_ref().or(model.eval_data.as_ref()) {
        Some(p) => PairCorpus::read_jsonl(p).map_err(CliError::usage)?,
        None => model.config.corpus.generate().map_err(CliError::runtime)?.1,
    };
    let report = EvalReport {
        i2t: eval_retrieval(&model.params, &eval, Direction::ImageToText).map_err(CliError::runtime)?,
        t2i: eval_retrieval(&model.params, &eval, Direction::TextToImage).map_err(CliError::runtime)?,
    };
    let out = args.out.unwrap_or_else(|| args.model.join(RETRIEVAL_FILE));
    fs::write(&out, serde_json::to_string_pretty(&report).expect("report serializes") + "\n")
        .map_err(CliError::runtime)?;
    for r in [&report.i2t, &report.t2i] {
        crate::say!(
            "{}: R@1 {:.1}  R@5 {:.1}  R@10 {:.1}  MdR {}",
            r.direction, r.r1, r.r5, r.r10, r.mdr
        );
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// caption-noise-length, batch-size, num-views or epochs.
    #[arg(long)]
    axis: String,
    /// Comma-separated settings, e.g. `1,2,3,4`.
    #[arg(long, value_delimiter = ',', required = true)]
    grid: Vec<usize>,
    /// Comma-separated seeds or an inclusive range like `0-9`.
    #[arg(long, default_value = "0")]
    seeds: String,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory for ablation.csv and ablation_summary.csv.
    #[arg(long)]
    out: PathBuf,
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Usage(format!("--seeds: cannot parse `{s}`"));
    if let Some((a, b)) = s.split_once('-') {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn cmd_ablate(args: AblateArgs) -> CliResult {
    let axis: AblationAxis = args.axis.parse().map_err(CliError::usage)?;
    let seeds = parse_seeds(&args.seeds)?;
    let base = load_base(args.config.as_deref())?;
    if args.grid.is_empty() {
        return Err(CliError::usage("--grid is empty"));
    }

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(CliError::runtime)?;
    let rows = pool
        .install(|| ablation_sweep(axis, &args.grid, &seeds, &base))
        .map_err(CliError::runtime)?;

    fs::create_dir_all(&args.out).map_err(CliError::runtime)?;
    let file = fs::File::create(args.out.join("ablation.csv")).map_err(CliError::runtime)?;
    write_ablation_csv(&rows, file).map_err(CliError::runtime)?;

    let mut w = csv::Writer::from_path(args.out.join("ablation_summary.csv")).map_err(CliError::runtime)?;
    w.write_record(["axis", "setting", "seeds", "i2t_r1", "i2t_r5", "i2t_r10", "t2i_r1", "p_vs_first"])
        .map_err(CliError::runtime)?;
    let first = r1_by_seed(&rows, args.grid[0], Direction::ImageToText);
    crate::say!("{axis}: mean over {} seeds", seeds.len());
    for &setting in &args.grid {
        let pick = |d: Direction, f: fn(&RetrievalReport) -> f64| -> Vec<f64> {
            rows.iter()
                .filter(|r| r.setting == setting && r.report.direction == d)
                .map(|r| f(&r.report))
                .collect()
        };
        let i2t_r1 = r1_by_seed(&rows, setting, Direction::ImageToText);
        let diffs: Vec<f64> = i2t_r1.iter().zip(&first).map(|(a, b)| a - b).collect();
        let p = sign_test_one_sided(&diffs);
        let vals = [
            mean(&i2t_r1),
            mean(&pick(Direction::ImageToText, |r| r.r5)),
            mean(&pick(Direction::ImageToText, |r| r.r10)),
            mean(&pick(Direction::TextToImage, |r| r.r1)),
        ];
        w.write_record(
            [axis.to_string(), setting.to_string(), seeds.len().to_string()]
                .into_iter()
                .chain(vals.iter().map(|v| format!("{v:.3}")))
                .chain([format!("{p:.4}")]),
        )
        .map_err(CliError::runtime)?;
        crate::say!(
            "  {setting:>4}  I2T R@1 {:6.2}  R@5 {:6.2}  R@10 {:6.2}  T2I R@1 {:6.2}  p={p:.4}",
            vals[0], vals[1], vals[2], vals[3]
        );
    }
    w.flush().map_err(CliError::runtime)?;
    Ok(())
}
