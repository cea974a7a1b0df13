use std::process::ExitCode;

use clap::Parser;
use poro_cem::cli::{parse_pairs, run, RunConfig};

/// Multiscale poroelasticity experiments.
#[derive(Debug, Parser)]
#[command(name = "poro-cem", version)]
struct Args {
    /// File with `key = value` lines; flags override it.
    #[arg(long)]
    config: Option<std::path::PathBuf>,
    /// reference | multiscale | sweep-H | sweep-m | sweep-J | export-basis
    #[arg(long)]
    mode: Option<String>,
    #[arg(long = "fine-n")]
    fine_n: Option<String>,
    #[arg(long = "coarse-N")]
    coarse_n: Option<String>,
    /// Oversampling layers, or `auto`.
    #[arg(long)]
    layers: Option<String>,
    #[arg(long = "basis-J")]
    basis_j: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    #[arg(long = "T")]
    final_time: Option<String>,
    /// channel | fracture | homogeneous | path to a medium file
    #[arg(long)]
    medium: Option<String>,
    #[arg(long)]
    contrast: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    threads: Option<String>,
}

fn collect(args: &Args) -> poro_cem::Result<Vec<(String, String)>> {
    let mut pairs = match &args.config {
        Some(p) => parse_pairs(&std::fs::read_to_string(p)?)?,
        None => Vec::new(),
    };
    let flags = [
        ("mode", &args.mode),
        ("fine_n", &args.fine_n),
        ("coarse_N", &args.coarse_n),
        ("layers", &args.layers),
        ("basis_J", &args.basis_j),
        ("tau", &args.tau),
        ("T", &args.final_time),
        ("medium", &args.medium),
        ("contrast", &args.contrast),
        ("seed", &args.seed),
        ("out", &args.out),
        ("threads", &args.threads),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            pairs.push((k.to_string(), v.clone()));
        }
    }
    Ok(pairs)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let result = collect(&args)
        .and_then(|pairs| RunConfig::from_pairs(&pairs))
        .and_then(|config| {
            if let Some(t) = config.threads {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build_global()
                    .map_err(|e| poro_cem::Error::config("threads", e.to_string()))?;
            }
            run(&config)
        });
    match result {
        Ok(summary) => {
            for o in &summary.outputs {
                println!("{o}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
