use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use prism_core::config::PipelineConfig;
use prism_core::pipeline::{
    cmd_build, cmd_diagnose, cmd_eval, cmd_improve, cmd_refine, open_gateway, ErrorKind,
    EvalRequest, ImproveRequest, Pipeline, PipelineError,
};

#[derive(Parser, Debug)]
#[command(name = "prism", version, about = "Style knowledge pipeline for design improvement")]
struct Cli {
    /// TOML config file; paths inside it are relative to the file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Config override as `section.key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Distances, partitions, and extracted knowledge for every style.
    Build,
    /// Refine extracted knowledge against its own exemplars.
    Refine {
        #[arg(long)]
        style: Option<String>,
        /// Rounds; defaults to `refine.iterations`.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Plan improvements for one design.
    Improve {
        design: PathBuf,
        instruction: String,
        #[arg(short = 'm', long, default_value_t = 1)]
        variations: usize,
        /// Plan without retrieved knowledge.
        #[arg(long)]
        baseline: bool,
        /// Output folder under `improve/`.
        #[arg(long)]
        name: Option<String>,
    },
    /// Score generated embeddings against a style's real designs.
    Eval {
        #[arg(long)]
        style: String,
        /// Directory of `.peb` bundles.
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        method: Option<String>,
    },
    /// Compare exemplar sets with random sets of equal size.
    Diagnose {
        #[arg(long)]
        style: Option<String>,
    },
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut config = PipelineConfig::load(cli.config.as_deref(), &cli.overrides)
        .map_err(|e| PipelineError::new(ErrorKind::Config, "config", e.to_string()))?;
    if let Some(seed) = cli.seed {
        config.set_seed(seed);
    }
    let gateway = open_gateway(&config, None)?;
    let p = Pipeline::new(&config, &gateway)?;
    match cli.command {
        Command::Build => {
            let r = cmd_build(&p)?;
            println!(
                "built {} styles, {} entries ({} solver calls, {} cache hits, {} gateway calls)",
                r.styles.len(),
                r.entries,
                r.solver_calls,
                r.cache_hits,
                r.gateway_calls
            );
            for s in &r.skipped {
                println!("skipped {s}");
            }
        }
        Command::Refine { style, iterations } => {
            let r = cmd_refine(&p, style.as_deref(), iterations)?;
            for (style, c, v) in &r.versions {
                println!("{style}/{c}: version {v}");
            }
            println!("{} rounds, {} gateway calls", r.rounds, r.gateway_calls);
        }
        Command::Improve {
            design,
            instruction,
            variations,
            baseline,
            name,
        } => {
            let plans = cmd_improve(
                &p,
                &ImproveRequest {
                    design,
                    instruction,
                    variations,
                    baseline,
                    name,
                },
            )?;
            for (v, r) in plans.iter().enumerate() {
                let source = r
                    .plan
                    .provenance
                    .as_ref()
                    .map(|p| format!("{}/{}", p.style, p.cluster_index))
                    .unwrap_or_else(|| "baseline".into());
                println!("plan {v}: {source}");
            }
        }
        Command::Eval {
            style,
            generated,
            method,
        } => {
            let r = cmd_eval(
                &p,
                &EvalRequest {
                    style,
                    generated,
                    method,
                },
            )?;
            let m = &r.report;
            println!(
                "{} {}: fidelity {:.4} ± {:.4}, diversity {:.4} ± {:.4} (N={}, M={}, k={})",
                r.style, r.method, m.fidelity, m.fidelity_se, m.diversity, m.diversity_se, m.n, m.m, m.k
            );
        }
        Command::Diagnose { style } => {
            for d in cmd_diagnose(&p, style.as_deref())? {
                for c in &d.clusters {
                    println!(
                        "{}/{}: curated spread {:.4} silhouette {:.4}, random spread {:.4} silhouette {:.4}",
                        d.style,
                        c.cluster_index,
                        c.curated.mean_pairwise,
                        c.curated.best_silhouette,
                        c.random.mean_pairwise,
                        c.random.best_silhouette
                    );
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
