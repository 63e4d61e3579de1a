//! Command-line front end: `jcce <stage> [options]`.
//!
//! Errors are reported as a single JSON line on stderr and a stage-specific
//! exit code.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use jcce::config::{ConfigError, Method, RunConfig};
use jcce::pipeline::{self, PipelineError, Run};
use jcce::serve::{AppState, Snapshot};

#[derive(Parser)]
#[command(name = "jcce", version, about = "Context-aware recommendation with joint context-content embeddings")]
struct Cli {
    #[command(flatten)]
    opts: RunOpts,
    #[command(subcommand)]
    command: Command,
}

/// Accepted both before and after the subcommand. Not clap globals: a
/// global `--set` given after the subcommand would replace, not extend,
/// the ones given before it.
#[derive(Args, Default, Clone)]
struct RunOpts {
    /// JSON run configuration; defaults apply to omitted fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set train.max_epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Use this run directory instead of one named by the config hash.
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

impl RunOpts {
    /// Later (subcommand-level) options win; overrides accumulate in order.
    fn merge(mut self, later: &RunOpts) -> RunOpts {
        self.config = later.config.clone().or(self.config);
        self.run_dir = later.run_dir.clone().or(self.run_dir);
        self.overrides.extend(later.overrides.iter().cloned());
        self
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic event log.
    Datagen {
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Filter the event log and split it into train and test sets.
    Prepare {
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Train models (all trainable methods in eval.methods by default).
    Train {
        #[command(flatten)]
        opts: RunOpts,
        #[arg(long = "method", value_parser = parse_method)]
        methods: Vec<Method>,
    },
    /// Evaluate every configured method on the test set.
    Evaluate {
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Rank the catalog for one context.
    Recommend {
        #[command(flatten)]
        opts: RunOpts,
        /// Context attribute, e.g. `--attr day_of_week=Sat`; multi-valued
        /// attributes separate members with `|`.
        #[arg(long = "attr", value_name = "NAME=VALUE")]
        attrs: Vec<String>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "jcce", value_parser = parse_method)]
        method: Method,
    },
    /// Write context and content embeddings for sampled test events.
    ExportEmbeddings {
        #[command(flatten)]
        opts: RunOpts,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "jcce", value_parser = parse_method)]
        method: Method,
    },
    /// Project an embedding table to two dimensions with t-SNE.
    Project {
        #[command(flatten)]
        opts: RunOpts,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Serve recommendations over HTTP.
    Serve {
        #[command(flatten)]
        opts: RunOpts,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "jcce", value_parser = parse_method)]
        method: Method,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        host: Option<String>,
    },
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::ALL
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| {
            let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
            format!("unknown method {s:?} (expected one of {})", names.join(", "))
        })
}

impl Command {
    fn opts(&self) -> &RunOpts {
        match self {
            Command::Datagen { opts }
            | Command::Prepare { opts }
            | Command::Train { opts, .. }
            | Command::Evaluate { opts }
            | Command::Recommend { opts, .. }
            | Command::ExportEmbeddings { opts, .. }
            | Command::Project { opts, .. }
            | Command::Serve { opts, .. } => opts,
        }
    }
}

fn load_config(opts: &RunOpts) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &opts.config {
        Some(p) if !p.exists() => {
            return Err(PipelineError::MissingInput {
                path: p.clone(),
                hint: "config file not found",
            })
        }
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&opts.overrides).map_err(PipelineError::from)?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string(v).expect("serialisable"));
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let opts = cli.opts.merge(cli.command.opts());
    let cfg = load_config(&opts)?;
    let run = Run::open(cfg, opts.run_dir)?;
    eprintln!("run directory: {}", run.dir.display());
    match cli.command {
        Command::Datagen { .. } => {
            let n = pipeline::datagen(&run)?;
            println!("events {n}");
        }
        Command::Prepare { .. } => {
            let (train, test) = pipeline::prepare(&run)?;
            println!("train {train} test {test}");
        }
        Command::Train { methods, .. } => {
            let methods = if methods.is_empty() {
                run.config.eval.methods.iter().copied().filter(|m| m.is_trained()).collect()
            } else {
                methods
            };
            for m in methods {
                let out = pipeline::train(&run, m, |line| eprintln!("{line}"))?;
                println!("{} {}", m.name(), out.display());
            }
        }
        Command::Evaluate { .. } => {
            let reports = pipeline::evaluate_all(&run)?;
            let ks = &run.config.eval.ks;
            let header: Vec<String> = ks.iter().map(|k| format!("HR@{k}")).collect();
            println!("{:<16} {} {:>7}", "method", header.iter().map(|h| format!("{h:>7}")).collect::<String>(), "MRR");
            for r in &reports {
                let hrs: String = ks
                    .iter()
                    .map(|&k| format!("{:>7.4}", r.hit_ratio(k).unwrap_or(f64::NAN)))
                    .collect();
                println!("{:<16} {} {:>7.4}", r.method, hrs, r.mrr);
            }
        }
        Command::Recommend { attrs, k, model, method, .. } => {
            let m = run.load_jcce(model.as_deref(), method)?;
            print_json(&pipeline::recommend(m, &attrs, k.unwrap_or(run.config.serve.default_k))?);
        }
        Command::ExportEmbeddings { model, method, .. } => {
            let m = run.load_jcce(model.as_deref(), method)?;
            let table = pipeline::export(&run, &m)?;
            println!("rows {} dim {}", table.len(), table.dim());
        }
        Command::Project { input, output, .. } => {
            let out = pipeline::project(&run, input.as_deref(), output.as_deref())?;
            println!("{}", out.display());
        }
        Command::Serve { model, method, port, host, .. } => {
            let m = run.load_jcce(model.as_deref(), method)?;
            let s = &run.config.serve;
            let host = host.unwrap_or_else(|| s.host.clone());
            let addr = format!("{host}:{}", port.unwrap_or(s.port))
                .parse()
                .map_err(|e| ConfigError::Invalid(format!("listen address: {e}")))?;
            let state = Arc::new(AppState::with_snapshot(Snapshot::new(m)?, s.default_k));
            let rt = tokio::runtime::Runtime::new()?;
            eprintln!("listening on {addr}");
            rt.block_on(jcce::serve::run(state, addr))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({
                "error": e.code(),
                "exit_code": e.exit_code(),
                "message": e.to_string().replace('\n', " "),
            });
            eprintln!("{line}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
