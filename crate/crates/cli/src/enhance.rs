use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use capforge::config::{AutoLimit, ResolvedRun, RunConfig, TokenLimit};
use capforge::gateway::CaptionerPool;
use capforge::orchestrator::{
    enhance, plan_shards, DropPolicy, EnhanceContext, EnhanceOptions, OrchestratorError, REPORT_FILE,
};
use clap::Args;
use serde_json::json;

use crate::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct RunOverrides {
    /// Run config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    shards: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_drop_policy)]
    drop_policy: Option<DropPolicy>,
    /// Token budget for generated captions, or `auto` for the mean raw
    /// caption length.
    #[arg(long, value_parser = parse_token_limit)]
    max_tokens: Option<TokenLimit>,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    #[command(flatten)]
    run: RunOverrides,
    /// Continue an interrupted run from its checkpoints.
    #[arg(long)]
    resume: bool,
    /// Exit 1 when any image was dropped or any caption slot failed.
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    run: RunOverrides,
}

fn parse_drop_policy(s: &str) -> Result<DropPolicy, String> {
    match s {
        "drop" => Ok(DropPolicy::Drop),
        "keep" => Ok(DropPolicy::Keep),
        _ => Err("expected `drop` or `keep`".into()),
    }
}

fn parse_token_limit(s: &str) -> Result<TokenLimit, String> {
    if s == "auto" {
        return Ok(TokenLimit::Derived(AutoLimit::Auto));
    }
    s.parse()
        .map(TokenLimit::Fixed)
        .map_err(|_| format!("expected a token count or `auto`, got `{s}`"))
}

impl RunOverrides {
    fn resolve(&self) -> Result<ResolvedRun, CliError> {
        let mut cfg = RunConfig::load(&self.config).map_err(CliError::usage)?;
        if let Some(o) = &self.output {
            cfg.output = o.clone();
        }
        if let Some(n) = self.shards {
            cfg.shards = n;
        }
        if let Some(n) = self.workers {
            cfg.workers = n;
        }
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
        if let Some(p) = self.drop_policy {
            cfg.drop_policy = p;
        }
        if let Some(t) = self.max_tokens {
            cfg.shear.max_tokens = t;
        }
        cfg.resolve().map_err(CliError::usage)
    }
}

fn classify(e: OrchestratorError) -> CliError {
    match e {
        OrchestratorError::CheckpointMismatch { .. } => {
            CliError::Usage(format!("{e}; start a fresh run or restore the original config"))
        }
        OrchestratorError::EmptyInput | OrchestratorError::InvalidShardCount => CliError::usage(e),
        other => CliError::runtime(other),
    }
}

pub fn cmd_enhance(args: EnhanceArgs) -> CliResult {
    let run = args.run.resolve()?;
    let pool = CaptionerPool::from_specs(run.pool.clone()).map_err(CliError::usage)?;
    let mut ctx = EnhanceContext::new(&run.input, &run.output, pool, run.shear.clone(), run.drop_policy);
    ctx.image_root = run.image_root.clone();

    let cancel = Arc::new(AtomicBool::new(false));
    let opts = EnhanceOptions {
        shards: run.shards,
        workers: run.workers,
        resume: args.resume,
        cancel: Some(cancel.clone()),
    };
    let rt = tokio::runtime::Runtime::new().map_err(CliError::runtime)?;
    let summary = rt
        .block_on(async move {
            let flag = cancel.clone();
            tokio::spawn(async move {
                if tokio::signal::ctrl_c().await.is_ok() {
                    tracing::warn!("interrupt received; finishing current entries");
                    flag.store(true, Ordering::SeqCst);
                }
            });
            enhance(ctx, opts).await
        })
        .map_err(classify)?;

    let report = &summary.report;
    for d in &report.dropped {
        eprintln!("dropped line {}: {}", d.line, d.reason);
    }
    for f in &report.failures {
        eprintln!("line {} {}: {}", f.line, f.model_id, f.error_kind);
    }
    crate::say!(
        "{} of {} images enhanced ({} captions, {} dropped) -> {}",
        report.images_enhanced,
        report.images_total,
        report.captions_generated,
        report.images_dropped,
        summary.output.display()
    );
    crate::say!("report: {}", run.output.join(REPORT_FILE).display());
    if args.strict && (!report.failures.is_empty() || report.images_dropped > 0) {
        return Err(CliError::Runtime(format!(
            "{} caption slots failed, {} images dropped",
            report.failures.len(),
            report.images_dropped
        )));
    }
    Ok(())
}

pub fn cmd_plan(args: PlanArgs) -> CliResult {
    let run = args.run.resolve()?;
    let plan = plan_shards(&run.input, run.shards).map_err(classify)?;
    let shards: Vec<_> = plan
        .boundaries
        .iter()
        .enumerate()
        .map(|(i, (s, e))| json!({"shard": i, "start_line": s, "end_line": e, "lines": e - s}))
        .collect();
    let out = json!({
        "input": run.input,
        "output": run.output,
        "total_lines": plan.total_lines,
        "workers": run.workers,
        "pool": run.pool.iter().map(|(e, _)| e.model_id.clone()).collect::<Vec<_>>(),
        "max_tokens": run.shear.max_tokens,
        "shards": shards,
    });
    crate::say!("{}", serde_json::to_string_pretty(&out).expect("plan serializes"));
    Ok(())
}
