use std::fs;
use std::io::Write;
use std::path::PathBuf;

use capforge::dataset::AnnotationEntry;
use capforge::shear::{compute_shear_limit, shear_caption, Fallback, ShearError, ShearPolicy, TokenizerSpec};
use clap::{Args, ValueEnum};

use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    /// `.jsonl` means annotations, anything else plain text.
    Auto,
    /// One caption per line.
    Text,
    /// Annotation records; the `caption` field is sheared.
    Jsonl,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FallbackArg {
    HardTruncate,
    Reject,
}

#[derive(Debug, Args)]
pub struct ShearArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value_t = InputFormat::Auto)]
    format: InputFormat,
    /// Token budget, or `auto` for the mean token count of the input.
    #[arg(long, default_value = "30")]
    max_tokens: String,
    #[arg(long, default_value_t = 5)]
    min_clause_chars: usize,
    #[arg(long, default_value = ".")]
    terminators: String,
    #[arg(long, value_enum, default_value_t = FallbackArg::HardTruncate)]
    fallback: FallbackArg,
}

pub fn cmd_shear(args: ShearArgs) -> CliResult {
    let text = fs::read_to_string(&args.input)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.input.display())))?;
    let jsonl = match args.format {
        InputFormat::Jsonl => true,
        InputFormat::Text => false,
        InputFormat::Auto => args.input.extension().is_some_and(|e| e == "jsonl"),
    };
    let mut records: Vec<(Option<AnnotationEntry>, String)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if jsonl {
            if line.trim().is_empty() {
                continue;
            }
            let entry = AnnotationEntry::parse_line(line, i + 1).map_err(CliError::usage)?;
            let caption = entry.caption.clone();
            records.push((Some(entry), caption));
        } else {
            records.push((None, line.to_string()));
        }
    }

    let spec = TokenizerSpec::default();
    let max_tokens = match args.max_tokens.as_str() {
        "auto" => compute_shear_limit(records.iter().map(|r| &r.1), &spec).map_err(CliError::usage)?,
        t => t
            .parse()
            .map_err(|_| CliError::Usage(format!("--max-tokens: expected a number or `auto`, got `{t}`")))?,
    };
    let policy = ShearPolicy {
        max_tokens,
        min_clause_chars: args.min_clause_chars,
        clause_terminators: args.terminators.chars().collect(),
        fallback: match args.fallback {
            FallbackArg::HardTruncate => Fallback::HardTruncate,
            FallbackArg::Reject => Fallback::Reject,
        },
        tokenizer: spec,
    };
    policy.validate().map_err(CliError::usage)?;

    let mut out = Vec::new();
    let (mut changed, mut rejected) = (0usize, 0usize);
    for (entry, caption) in records {
        let sheared = match shear_caption(&caption, &policy) {
            Ok(s) => s,
            Err(ShearError::NoValidClause { .. }) => {
                rejected += 1;
                continue;
            }
            Err(e) => return Err(CliError::runtime(e)),
        };
        changed += usize::from(sheared.sheared);
        let line = match entry {
            Some(mut e) => {
                e.caption = sheared.text;
                serde_json::to_string(&e).expect("entry serializes")
            }
            None => sheared.text,
        };
        writeln!(out, "{line}").expect("writing to a Vec");
    }
    fs::write(&args.output, out).map_err(CliError::runtime)?;
    crate::say!("T = {max_tokens}: {changed} captions sheared, {rejected} rejected");
    Ok(())
}
