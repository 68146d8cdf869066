use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use vscreen::chem::parse_smiles;
use vscreen::pipeline::{
    self, augment, evaluate, ingest, job_seed, make_splits, read_scores, read_splits_csv, report_from_dir, rerank,
    run_experiment, score_records, synth, train_model, write_scores, DenoiserChoice, ExperimentConfig, Record, Scheme,
    Split,
};
use vscreen::rerank::write_sweep_csv;
use vscreen::selftrain::{LogisticModel, ValidationMetric};

#[derive(Parser)]
#[command(name = "vscreen", version, about = "Scaffold-aware ligand-based virtual screening")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Split scheme: random or scaffold.
    #[arg(long, global = true)]
    scheme: Option<Scheme>,
    /// Reranks at every configured λ.
    #[arg(long, global = true)]
    lambda_sweep: bool,
    /// Trains on the labeled data only.
    #[arg(long, global = true)]
    no_augment: bool,
    /// marginal, echo or external:<cmd>.
    #[arg(long, global = true)]
    denoiser: Option<DenoiserChoice>,
    /// Model-selection metric: bedroc or logauc.
    #[arg(long, global = true)]
    val_metric: Option<ValidationMetric>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse an id,smiles,label CSV; writes records.csv and quarantine.csv.
    Ingest {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write split assignments as id,split,role.
    Split {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_splits: Option<usize>,
    },
    /// Build the scaffold library and generate the G-DSA set for one split.
    Augment {
        input: PathBuf,
        #[arg(long)]
        splits: PathBuf,
        #[arg(long, default_value_t = 0)]
        split: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Self-train the classifier for one split.
    Train {
        input: PathBuf,
        #[arg(long)]
        splits: PathBuf,
        #[arg(long, default_value_t = 0)]
        split: usize,
        /// Generated molecules (gdsa.csv from `augment`).
        #[arg(long)]
        gdsa: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score molecules with a trained model; writes id,smiles,label,score.
    Score {
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the metric report of a scores file.
    Evaluate {
        scores: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// MMR reranking of a scores file at one λ or the configured sweep.
    Rerank {
        scores: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full pipeline into a run directory.
    Run {
        /// Input CSV (overrides data.input).
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebuild aggregate reports of a finished run directory.
    Report { run: PathBuf },
    /// Write a seeded synthetic assay.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 0.01)]
        active_fraction: f64,
    },
}

impl Cli {
    fn config(&self, input: Option<&Path>) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(i) = input {
            cfg.data.input = i.to_path_buf();
        }
        if let Some(s) = self.seed {
            cfg.data.seed = s;
        }
        if let Some(s) = self.scheme {
            cfg.data.scheme = s;
        }
        if let Some(d) = &self.denoiser {
            cfg.diffusion.denoiser = d.clone();
        }
        if let Some(m) = self.val_metric {
            cfg.selftrain.val_metric = m;
        }
        if self.no_augment {
            cfg.diffusion.augment = false;
        }
        if self.lambda_sweep {
            cfg.rerank.enabled = true;
        }
        Ok(cfg)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn load_split(input: &Path, splits: &Path, index: usize) -> Result<(pipeline::Assay, Split)> {
    let assay = ingest(input)?;
    let all = read_splits_csv(File::open(splits)?, &assay)?;
    let Some(split) = all.get(index).cloned() else {
        bail!("split {index} not in {} ({} splits)", splits.display(), all.len());
    };
    Ok((assay, split))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Ingest { input, out } => {
            let assay = ingest(input)?;
            fs::create_dir_all(out)?;
            assay.write_csv(create(&out.join("records.csv"))?)?;
            assay.write_quarantine(create(&out.join("quarantine.csv"))?)?;
            println!(
                "records {} actives {} quarantined {}",
                assay.len(),
                assay.active_count(),
                assay.quarantined.len()
            );
        }
        Command::Split { input, out, n_splits } => {
            let cfg = cli.config(Some(input))?;
            let assay = ingest(input)?;
            let plan = make_splits(
                &assay,
                cfg.data.scheme,
                n_splits.unwrap_or(cfg.data.n_splits),
                cfg.data.seed,
            )?;
            plan.write_csv(&assay, create(out)?)?;
            for (i, s) in plan.splits.iter().enumerate() {
                println!(
                    "split {i}: train {} valid {} test {}",
                    s.train.len(),
                    s.valid.len(),
                    s.test.len()
                );
            }
        }
        Command::Augment {
            input,
            splits,
            split,
            out,
        } => {
            let cfg = cli.config(Some(input))?;
            let (assay, s) = load_split(input, splits, *split)?;
            let train: Vec<&Record> = s.train.iter().map(|&i| &assay.records[i]).collect();
            let mols: Vec<_> = train.iter().map(|r| &r.molecule).collect();
            let labels: Vec<bool> = train.iter().map(|r| r.label).collect();
            let aug = augment(&mols, &labels, &cfg, job_seed(cfg.data.seed, *split, 0))?;
            fs::create_dir_all(out)?;
            aug.library.write_csv(create(&out.join("library.csv"))?)?;
            aug.write_gdsa_csv(create(&out.join("gdsa.csv"))?)?;
            let report = aug.report.clone().unwrap_or_default();
            println!(
                "library {} generated {} valid {} clusters {:?}",
                aug.library.len(),
                report.attempted,
                report.valid,
                aug.cluster_counts()
            );
        }
        Command::Train {
            input,
            splits,
            split,
            gdsa,
            out,
        } => {
            let cfg = cli.config(Some(input))?;
            let (assay, s) = load_split(input, splits, *split)?;
            let pick = |idx: &[usize]| -> Vec<&Record> { idx.iter().map(|&i| &assay.records[i]).collect() };
            let mut d_prime = Vec::new();
            if let (Some(path), false) = (gdsa, cli.no_augment) {
                let mut rdr = csv::Reader::from_path(path)?;
                for rec in rdr.records() {
                    let rec = rec?;
                    d_prime.push(parse_smiles(&rec[0]).with_context(|| format!("generated SMILES {}", &rec[0]))?);
                }
            }
            let (model, history) = train_model(
                &pick(&s.train),
                &pick(&s.valid),
                &d_prime,
                &cfg,
                job_seed(cfg.data.seed, *split, 0),
            )?;
            fs::create_dir_all(out)?;
            model.save(&out.join("model.json"))?;
            history.write_csv(create(&out.join("history.csv"))?)?;
            let best = &history.epochs[history.best_epoch];
            println!(
                "best epoch {} val_{} {:.6}",
                best.epoch,
                history.metric.name(),
                best.val_score
            );
        }
        Command::Score { input, model, out } => {
            let assay = ingest(input)?;
            let model = LogisticModel::load(model)?;
            let records: Vec<&Record> = assay.records.iter().collect();
            let scores = score_records(&model, &records);
            write_scores(&records, &scores, create(out)?)?;
            println!("scored {}", records.len());
        }
        Command::Evaluate { scores, out } => {
            let cfg = cli.config(None)?;
            let (records, s) = read_scores(File::open(scores)?)?;
            let refs: Vec<&Record> = records.iter().collect();
            let json = evaluate(&refs, &s, &cfg)?.to_json();
            if let Some(out) = out {
                writeln!(create(out)?, "{json}")?;
            }
            println!("{json}");
        }
        Command::Rerank { scores, lambda, out } => {
            let cfg = cli.config(None)?;
            let (records, s) = read_scores(File::open(scores)?)?;
            let refs: Vec<&Record> = records.iter().collect();
            let lambdas = match lambda {
                Some(l) if !cli.lambda_sweep => vec![*l],
                _ => cfg.rerank.lambdas.clone(),
            };
            let (rows, candidates) = rerank(&refs, &s, &cfg, &lambdas)?;
            eprintln!("candidates (logit > 0): {candidates}");
            match out {
                Some(out) => write_sweep_csv(&rows, create(out)?)?,
                None => write_sweep_csv(&rows, std::io::stdout().lock())?,
            }
        }
        Command::Run { input, out } => {
            let cfg = cli.config(input.as_deref())?;
            let summary = run_experiment(&cfg, out)?;
            for row in &summary.aggregate {
                println!("{:<20} {:.6} ± {:.6} (n = {})", row.metric, row.mean, row.std, row.n);
            }
            println!("run directory: {}", summary.dir.display());
        }
        Command::Report { run } => {
            for row in report_from_dir(run)? {
                println!("{:<20} {:.6} ± {:.6} (n = {})", row.metric, row.mean, row.std, row.n);
            }
        }
        Command::Synth {
            out,
            n,
            active_fraction,
        } => {
            let cfg = synth::SynthConfig {
                n: *n,
                active_fraction: *active_fraction,
                seed: cli.seed.unwrap_or(0),
                ..Default::default()
            };
            let recs = synth::desk_assay(&cfg);
            synth::write_csv(&recs, create(out)?)?;
            println!(
                "wrote {} molecules ({} actives)",
                recs.len(),
                recs.iter().filter(|r| r.label).count()
            );
        }
    }
    Ok(())
}
