use std::fs;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use calirank::experiment::{
    emit_report, load_data, read_trials, run_sweep_with, run_trial, trial_json, ExperimentConfig,
    Method,
};
use calirank::letor::{max_feature_id, RankingDataset, SplitTag};
use calirank::oracle::{synthetic_letor, verify_suite, SyntheticLetorConfig};

#[derive(Parser)]
#[command(name = "calirank", version, about = "Calibrated learning-to-rank experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one network and write its checkpoint and metrics.
    Train(Options),
    /// Run the full learning-rate x alpha grid and write the report.
    Sweep(Options),
    /// Run the synthetic fixed-point and translation checks.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Rebuild report files from a trials.json.
    Report {
        trials: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Write synthetic LETOR train/vali/test files.
    Synth {
        #[arg(long, default_value = "synth")]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        train_queries: Option<usize>,
        #[arg(long)]
        eval_queries: Option<usize>,
    },
}

/// Flags shared by `train` and `sweep`. Each overrides the config file.
#[derive(Args)]
struct Options {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: Option<String>,
    #[arg(long)]
    vali: Option<String>,
    #[arg(long)]
    test: Option<String>,
    /// Comma-separated method names.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    lrs: Option<String>,
    #[arg(long)]
    alphas: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_queries: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    subsample_queries: Option<String>,
    #[arg(long)]
    eval_max_docs: Option<String>,
    #[arg(long)]
    workers: Option<String>,
    /// Hidden layer widths, e.g. 1024,512,256.
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    dropout: Option<String>,
    #[arg(long)]
    ks: Option<String>,
    /// Selection metric overrides, e.g. rcr:logloss.
    #[arg(long)]
    select: Option<String>,
}

impl Options {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut config = ExperimentConfig::default();
        if let Some(path) = &self.config {
            config
                .apply_file(path)
                .with_context(|| format!("reading config {}", path.display()))?;
        }
        let flags = [
            ("train", &self.train),
            ("vali", &self.vali),
            ("test", &self.test),
            ("method", &self.method),
            ("lrs", &self.lrs),
            ("alphas", &self.alphas),
            ("epochs", &self.epochs),
            ("batch-queries", &self.batch_queries),
            ("seed", &self.seed),
            ("out", &self.out),
            ("subsample-queries", &self.subsample_queries),
            ("eval-max-docs", &self.eval_max_docs),
            ("workers", &self.workers),
            ("hidden", &self.hidden),
            ("dropout", &self.dropout),
            ("ks", &self.ks),
            ("select", &self.select),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                config.set(key, v)?;
            }
        }
        config.validate()?;
        Ok(config)
    }
}

fn train(opts: &Options) -> Result<()> {
    let config = opts.config()?;
    let [method] = config.methods[..] else {
        bail!("train takes exactly one --method");
    };
    let lr = config.learning_rates[0];
    let alpha = method.uses_alpha().then(|| config.alphas[0]);
    let data = load_data(&config)?;
    eprintln!(
        "training {method} lr={lr} alpha={} on {} queries",
        alpha.map_or("-".into(), |a| a.to_string()),
        data.train.groups.len()
    );
    let run = run_trial(&config, &data, method, lr, alpha, config.seed)?;
    let result = if method == Method::SoftmaxCePlatt {
        run.platt.clone().context("validation split cannot be calibrated")?
    } else {
        run.result.clone()
    };
    fs::create_dir_all(&config.out)?;
    let model = config.out.join("model.bin");
    run.network.save(&model, result.platt.as_ref())?;
    fs::write(config.out.join("trial.json"), trial_json(&result)?)?;
    println!(
        "{method}: best epoch {} of {}, test ndcg@10 {:.4} logloss {:.4} ece {:.4}{}",
        result.best_epoch,
        result.epochs_run,
        result.test.ndcg(10),
        result.test.logloss,
        result.test.ece,
        if result.diverged { " (diverged)" } else { "" }
    );
    println!("wrote {}", model.display());
    Ok(())
}

fn sweep(opts: &Options) -> Result<()> {
    let config = opts.config()?;
    let data = load_data(&config)?;
    eprintln!(
        "{} train / {} validation / {} test queries, {} features",
        data.train.groups.len(),
        data.validation.groups.len(),
        data.test.groups.len(),
        data.train.feature_count
    );
    let results = run_sweep_with(&config, &data, |t| {
        eprintln!(
            "  {} lr={} alpha={} val ndcg@10 {:.4} logloss {:.4}{}",
            t.method,
            t.learning_rate,
            t.alpha.map_or("-".into(), |a| a.to_string()),
            t.validation.ndcg(10),
            t.validation.logloss,
            if t.diverged { " diverged" } else { "" }
        );
    })?;
    let files = emit_report(&results, &config.out)?;
    print!("{}", fs::read_to_string(&files.summary)?);
    println!("wrote report to {}", config.out.display());
    Ok(())
}

fn verify(seed: u64, out: &PathBuf) -> Result<bool> {
    let report = verify_suite(seed)?;
    print!("{}", report.to_text());
    fs::create_dir_all(out)?;
    fs::write(out.join("verify.csv"), report.to_csv())?;
    Ok(report.all_passed())
}

fn synth(out: &PathBuf, seed: u64, train_queries: Option<usize>, eval_queries: Option<usize>) -> Result<()> {
    let mut cfg = SyntheticLetorConfig {
        seed,
        ..Default::default()
    };
    if let Some(n) = train_queries {
        cfg.train_queries = n;
    }
    if let Some(n) = eval_queries {
        cfg.validation_queries = n;
        cfg.test_queries = n;
    }
    fs::create_dir_all(out)?;
    let splits = synthetic_letor(&cfg);
    let feature_count = max_feature_id(&splits[0]);
    for (examples, (name, tag)) in splits.iter().zip([
        ("train.txt", SplitTag::Train),
        ("vali.txt", SplitTag::Validation),
        ("test.txt", SplitTag::Test),
    ]) {
        let data = RankingDataset::from_examples(examples, tag, feature_count)?;
        let path = out.join(name);
        let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        data.write_letor(BufWriter::new(file))?;
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Train(opts) => train(opts).map(|_| true),
        Command::Sweep(opts) => sweep(opts).map(|_| true),
        Command::Verify { seed, out } => verify(*seed, out),
        Command::Report { trials, out } => read_trials(trials)
            .map_err(Into::into)
            .and_then(|r| emit_report(&r, out).map_err(Into::into))
            .map(|_| true),
        Command::Synth {
            out,
            seed,
            train_queries,
            eval_queries,
        } => synth(out, *seed, *train_queries, *eval_queries).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
