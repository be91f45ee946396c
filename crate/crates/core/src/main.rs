use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use holobeam::beamnet::load_checkpoint;
use holobeam::dataset::save_dataset;
use holobeam::experiments::{emit_results, ExperimentConfig, RunResult, Session, MIXED_TEST};
use holobeam::write_atomic;

#[derive(Parser)]
#[command(name = "holobeam", version, about = "Beamforming network training and data-mixture experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (flat dotted-key TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run only this seed instead of the config's seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Extra `key = value` config lines applied after the file, e.g. `--set train.epochs=200`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the training pools and held-out sets as CHNL files.
    Generate(Common),
    /// Train on one family (--family) or a mixture (--q) and evaluate against the oracle.
    Train {
        #[command(flatten)]
        common: Common,
        /// Train on this family alone.
        #[arg(long, conflicts_with = "q")]
        family: Option<String>,
        /// Proportion of the first family; defaults to theory.reference_q.
        #[arg(long)]
        q: Option<f64>,
    },
    /// Evaluate a saved checkpoint on every held-out set.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Proportion sweep with the C(q) overlay and the scaling fit.
    Sweep(Common),
    /// Expected Hessians and C(q) of the reference model only.
    Theory(Common),
    /// Summarize an existing results.json in --out.
    Report(Common),
}

fn load_config(common: &Common) -> Result<ExperimentConfig, String> {
    let file = match &common.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?,
        None => String::new(),
    };
    let layers: Vec<&str> = std::iter::once(file.as_str()).chain(common.overrides.iter().map(String::as_str)).collect();
    let mut config = ExperimentConfig::from_toml_layers(&layers).map_err(|e| e.to_string())?;
    if let Some(seed) = common.seed {
        config.seeds = vec![seed];
    }
    Ok(config)
}

fn seed_dir(out: &Path, config: &ExperimentConfig, seed: u64) -> PathBuf {
    if config.seeds.len() > 1 {
        out.join(format!("seed-{seed}"))
    } else {
        out.to_path_buf()
    }
}

fn session(config: &ExperimentConfig, seed: u64) -> holobeam::Result<Session> {
    Ok(Session::new(config.clone(), seed)?.with_progress(|m| eprintln!("{m}")))
}

fn for_each_seed(
    common: &Common,
    mut run: impl FnMut(&mut Session) -> holobeam::Result<RunResult>,
) -> Result<(), String> {
    let config = load_config(common)?;
    for &seed in &config.seeds {
        let dir = seed_dir(&common.out, &config, seed);
        let mut s = session(&config, seed).map_err(|e| e.to_string())?;
        let result = run(&mut s).map_err(|e| e.to_string())?;
        emit_results(&result, &s.artifacts(&result), &dir).map_err(|e| e.to_string())?;
        write_atomic(&dir.join("config.toml"), config.to_toml_string().map_err(|e| e.to_string())?.as_bytes())
            .map_err(|e| e.to_string())?;
        print!("{}", summarize(&result));
        eprintln!("wrote {}", dir.display());
    }
    Ok(())
}

fn generate(common: &Common) -> Result<(), String> {
    let config = load_config(common)?;
    for &seed in &config.seeds {
        let dir = seed_dir(&common.out, &config, seed).join("data");
        std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        let s = Session::new(config.clone(), seed).map_err(|e| e.to_string())?;
        for (id, pool) in config.families.iter().zip(s.pools()) {
            save_dataset(pool, &dir.join(format!("train_{id}.chnl"))).map_err(|e| e.to_string())?;
        }
        save_dataset(s.mixed_test(), &dir.join(format!("test_{MIXED_TEST}.chnl"))).map_err(|e| e.to_string())?;
        for &q in &config.q_grid {
            let mix = s.training_set(q, config.n_total).map_err(|e| e.to_string())?;
            save_dataset(&mix, &dir.join(format!("train_q{q:.2}.chnl"))).map_err(|e| e.to_string())?;
        }
        eprintln!("wrote {}", dir.display());
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

fn summarize(r: &RunResult) -> String {
    let mut out = format!("{} run, seed {}, reference SNR {} dB\n", r.kind, r.seed, r.reference_snr_db);
    for m in &r.models {
        out += &format!("  model {:<14} final train loss {}\n", m.label, fmt_opt(m.final_train_loss));
    }
    for p in r.rates.iter().filter(|p| p.snr_db == r.reference_snr_db) {
        out += &format!(
            "  {:<14} on {:<10} rate {:.4}  oracle {:.4}  ratio {:.4}\n",
            p.model, p.test_set, p.rate, p.oracle_rate, p.ratio
        );
    }
    if let Some(s) = &r.sweep {
        out += "  q     rate     C(q)\n";
        for p in &s.points {
            out += &format!("  {:.2}  {:.4}  {}\n", p.q, p.rate, fmt_opt(p.c_direct));
        }
        out +=
            &format!("  empirical best q {:.2}, theory argmin {}\n", s.empirical_argmax_q, fmt_opt(s.theory_argmin_q));
    } else if let Some(t) = &r.theory {
        for (q, c) in t.q.iter().zip(&t.c_direct) {
            out += &format!("  q {q:.2}  C {}\n", fmt_opt(*c));
        }
        out += &format!("  theory argmin {}\n", fmt_opt(t.argmin_q));
    }
    if let Some(sc) = &r.scaling {
        match &sc.fit {
            Some(f) => out += &format!("  scaling alpha {:.4}, R^2 {:.4}\n", f.alpha, f.r_squared),
            None => out += &format!("  scaling fit failed: {}\n", sc.error.as_deref().unwrap_or("")),
        }
    }
    out
}

fn report(common: &Common) -> Result<(), String> {
    let path = common.out.join("results.json");
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let result: RunResult = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    print!("{}", summarize(&result));
    Ok(())
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Generate(c) => generate(&c),
        Command::Train { common, family, q } => for_each_seed(&common, |s| match &family {
            Some(f) => {
                let tests = s.config().families.clone();
                s.run_pure(f, &tests)
            }
            None => s.run_mixed(q.unwrap_or(s.config().theory.reference_q)),
        }),
        Command::Eval { common, checkpoint } => {
            let (net, params) = load_checkpoint(&checkpoint).map_err(|e| format!("{}: {e}", checkpoint.display()))?;
            let label = checkpoint.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint").to_string();
            for_each_seed(&common, |s| {
                s.insert_model(&label, net.clone(), params.clone());
                s.run_eval(&label)
            })
        }
        Command::Sweep(c) => for_each_seed(&c, Session::run_sweep),
        Command::Theory(c) => for_each_seed(&c, Session::run_theory),
        Command::Report(c) => report(&c),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
