use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ingsl_runner::commands::{self, EmbeddingSource};
use ingsl_runner::CliError;

#[derive(Parser)]
#[command(name = "ingsl", version, about = "Graph structure learning with diversity-guided edge pruning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every (mode, r, seed) cell of a config and write the report.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Replaces the config's seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Accuracy against reduction level; needs at least two levels.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Randomized checks of both neighbour-redundancy bounds.
    VerifyLemmas {
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Finite-difference check of every differentiable operation.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of input draws per operation.
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Average pairwise neighbour similarity against neighbourhood size.
    DiagnoseRedundancy {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "2,5,10,20,30,50")]
        k_values: Vec<usize>,
        #[arg(long, value_enum, default_value_t = EmbeddingSource::Trained)]
        embeddings: EmbeddingSource,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a stochastic-block-model graph bundle.
    GenSbm {
        /// JSON SBM spec; defaults to the 4 x 50 benchmark.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "sbm")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, out, seed } => {
            let rep = commands::train(config.as_deref(), &out, seed)?;
            for c in &rep.cells {
                println!(
                    "{:<16} r={:<5} seed={:<4} test_acc={:.4} edges={} flops={}",
                    c.mode.as_str(),
                    c.r,
                    c.seed,
                    c.test_acc,
                    c.edges_final,
                    c.flops
                );
            }
            println!("wrote {}", out.join(commands::REPORT_JSON).display());
        }
        Command::Sweep { config, out, seed } => {
            let rep = commands::sweep(config.as_deref(), &out, seed)?;
            for a in rep.sweep_rows() {
                let std = a.std_test_acc.map_or(String::new(), |s| format!(" ± {s:.4}"));
                println!("{:<16} r={:<5} acc={:.4}{std}", a.mode.as_str(), a.r, a.mean_test_acc);
            }
            println!("wrote {}", out.join(commands::SWEEP_CSV).display());
        }
        Command::VerifyLemmas { trials, seed, out } => {
            let rep = commands::verify_lemmas(trials, seed, &out)?;
            for r in [&rep.lemma1, &rep.lemma2] {
                println!(
                    "{}: {} trials, {} violations, worst slack {:.3e}",
                    r.lemma, r.trials, r.violations, r.worst_slack
                );
            }
        }
        Command::Gradcheck { seed, trials, out } => {
            let rep = commands::gradcheck(seed, trials, &out)?;
            for r in rep.rows.iter().chain([&rep.negative_control]) {
                let verdict = if r.passed { "pass" } else { "FAIL" };
                println!("{:<34} {verdict}  {:.2e}", r.op, r.max_rel_error);
            }
        }
        Command::DiagnoseRedundancy {
            config,
            k_values,
            embeddings,
            out,
            seed,
        } => {
            for p in commands::diagnose_redundancy(config.as_deref(), &k_values, embeddings, &out, seed)? {
                match p.avg_similarity {
                    Some(s) => println!("k={:<4} {s:.4}", p.k),
                    None => println!("k={:<4} -", p.k),
                }
            }
        }
        Command::GenSbm { config, out, seed } => {
            let g = commands::gen_sbm(config.as_deref(), &out, seed)?;
            println!("{} nodes, {} edges -> {}", g.n(), g.edge_count(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exit_code(args: &[&str]) -> i32 {
        let cli = Cli::try_parse_from(std::iter::once("ingsl").chain(args.iter().copied())).unwrap();
        run(cli).map_or_else(|e| e.exit_code(), |()| 0)
    }

    #[test]
    fn exit_codes() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let out = out.to_str().unwrap();
        let config = |body: &str| {
            let p = dir.path().join("config.json");
            std::fs::write(&p, body).unwrap();
            p.to_str().unwrap().to_string()
        };

        assert_eq!(exit_code(&["sweep", "--config", &config(r#"{"reduction_levels": [0.0]}"#), "--out", out]), 1);
        assert_eq!(exit_code(&["train", "--config", &config(r#"{"learning_rate": 0.01}"#), "--out", out]), 1);
        let missing = config(r#"{"dataset": {"bundle": "/nonexistent/bundle"}}"#);
        assert_eq!(exit_code(&["train", "--config", &missing, "--out", out]), 1);
        assert_eq!(exit_code(&["verify-lemmas", "--trials", "0", "--out", out]), 1);
        assert_eq!(exit_code(&["verify-lemmas", "--trials", "1", "--out", out]), 0);
        assert_eq!(exit_code(&["gradcheck", "--out", out]), 0);

        assert_eq!(CliError::Core(ingsl_core::Error::Diverged { epoch: 3 }).exit_code(), 2);
        assert_eq!(CliError::CheckFailed("x".into()).exit_code(), 3);
    }

    #[test]
    fn k_values_parse_as_list() {
        let cli = Cli::try_parse_from(["ingsl", "diagnose-redundancy", "--k-values", "2,4,8", "--embeddings", "features"])
            .unwrap();
        match cli.command {
            Command::DiagnoseRedundancy { k_values, embeddings, .. } => {
                assert_eq!(k_values, vec![2, 4, 8]);
                assert_eq!(embeddings, EmbeddingSource::Features);
            }
            _ => panic!("wrong subcommand"),
        }
    }
}
