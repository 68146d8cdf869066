use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{DenoiserChoice, ExperimentConfig, SamplingMode, Similarity};
use super::split::{make_splits, scaffold_keys, Scheme, Split};
use super::{ingest, Assay, PipelineError, Record};
use crate::chem::{murcko_scaffold, parse_smiles, to_smiles, MolGraph};
use crate::diffusion::{
    compute_marginals, generate_gdsa, Denoiser, ExternalDenoiser, GdsaReport, MarginalDenoiser, OneHotEcho,
};
use crate::fingerprint::{ecfp, scaffold_fingerprint, Fingerprint};
use crate::hash::derive_seed;
use crate::metrics::{MetricReport, RankedItem, RankedList};
use crate::rerank::{build_candidates, lambda_sweep, write_sweep_csv, PairedMetrics, RerankError};
use crate::sas::{
    cluster_scaffolds, library_size, sample_library, sampling_weights, ClusterModel, SasError, ScaffoldLibrary,
};
use crate::selftrain::{predict, self_train, History, LabeledSet, LogisticModel, Origin, Predictor, SelfTrainConfig};

/// Summary of one (split, seed) job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobOutput {
    pub split: usize,
    pub seed_index: usize,
    pub seed: u64,
    pub metrics: MetricReport,
    pub sweep: Vec<PairedMetrics>,
    /// Number of candidates with a positive score (logit > 0).
    pub candidates: usize,
    pub clusters: Option<usize>,
    pub library_size: usize,
    pub gdsa: Option<GdsaReport>,
    /// Library entries per scaffold cluster.
    pub library_cluster_counts: Vec<usize>,
    /// Valid generated molecules per scaffold cluster.
    pub gdsa_cluster_counts: Vec<usize>,
    pub best_epoch: usize,
    pub final_pseudo: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub split: Option<usize>,
    pub seed_index: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub jobs: Vec<(usize, usize, u64)>,
    pub stages: Vec<String>,
    pub failure: Option<StageFailure>,
    pub files: Vec<ManifestFile>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub jobs: Vec<JobOutput>,
    pub aggregate: Vec<AggregateRow>,
    pub manifest: Manifest,
}

/// `1 − H(p)/ln k` for the empirical distribution of `counts` over `k`
/// bins: 0 when uniform, 1 when concentrated in one bin or empty.
pub fn entropy_gap(counts: &[usize]) -> f64 {
    let k = counts.len();
    let total: usize = counts.iter().sum();
    if k < 2 || total == 0 {
        return if k < 2 { 0.0 } else { 1.0 };
    }
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum();
    1.0 - h / (k as f64).ln()
}

fn stage<T, E: std::fmt::Display>(name: &str, r: Result<T, E>) -> Result<T, PipelineError> {
    r.map_err(|e| PipelineError::Stage {
        stage: name.to_string(),
        message: e.to_string(),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, PipelineError> {
    Ok(BufWriter::new(File::create(path)?))
}

fn smiles_of(mol: &MolGraph) -> String {
    to_smiles(mol, false)
        .or_else(|_| to_smiles(mol, true))
        .unwrap_or_default()
}

fn make_denoiser(choice: &DenoiserChoice) -> Result<Box<dyn Denoiser>, PipelineError> {
    Ok(match choice {
        DenoiserChoice::Marginal => Box::new(MarginalDenoiser),
        DenoiserChoice::Echo => Box::new(OneHotEcho),
        DenoiserChoice::External(cmd) => Box::new(stage("augment", ExternalDenoiser::spawn(cmd))?),
    })
}

pub struct Augmentation {
    pub model: Option<ClusterModel>,
    pub library: ScaffoldLibrary,
    pub generated: Vec<MolGraph>,
    /// Library entry that seeded each generated molecule.
    pub generated_entry: Vec<usize>,
    pub report: Option<GdsaReport>,
    /// Cluster of each training active, `None` for acyclic ones.
    pub active_clusters: Vec<Option<usize>>,
}

impl Augmentation {
    /// Valid generated molecules per scaffold cluster.
    pub fn cluster_counts(&self) -> Vec<usize> {
        self.count(self.generated_entry.iter().copied())
    }

    /// Library entries per scaffold cluster.
    pub fn library_counts(&self) -> Vec<usize> {
        self.count(0..self.library.len())
    }

    fn count(&self, entries: impl Iterator<Item = usize>) -> Vec<usize> {
        let Some(m) = &self.model else {
            return Vec::new();
        };
        let mut counts = vec![0; m.k];
        for e in entries {
            counts[self.library.entries[e].cluster_id] += 1;
        }
        counts
    }

    /// Writes `smiles,library_entry,cluster_id`.
    pub fn write_gdsa_csv<W: std::io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["smiles", "library_entry", "cluster_id"])?;
        for (g, &e) in self.generated.iter().zip(&self.generated_entry) {
            w.write_record([
                smiles_of(g),
                e.to_string(),
                self.library.entries[e].cluster_id.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// SAS (or uniform-actives) library over the training actives followed by
/// scaffold extension.
pub fn augment(
    train: &[&MolGraph],
    labels: &[bool],
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<Augmentation, PipelineError> {
    let actives: Vec<&MolGraph> = train.iter().zip(labels).filter(|(_, &y)| y).map(|(m, _)| *m).collect();
    let mut scaffolds = Vec::new();
    let mut owner = Vec::new();
    for (i, mol) in actives.iter().enumerate() {
        if let Some(s) = murcko_scaffold(mol) {
            scaffolds.push((s, 1u8));
            owner.push(i);
        }
    }
    let excluded = actives.len() - scaffolds.len();
    if excluded > 0 {
        log::info!("{excluded} acyclic active(s) excluded from the scaffold library");
    }
    let mut active_clusters = vec![None; actives.len()];
    if scaffolds.is_empty() {
        log::warn!("no active scaffolds in the training set; augmentation skipped");
        return Ok(Augmentation {
            model: None,
            library: ScaffoldLibrary::default(),
            generated: Vec::new(),
            generated_entry: Vec::new(),
            report: None,
            active_clusters,
        });
    }
    let fps: Vec<Fingerprint> = scaffolds
        .iter()
        .map(|(s, _)| scaffold_fingerprint(Some(s), cfg.sas.radius, cfg.sas.nbits))
        .collect();
    let m = fps.len();
    let single = |fps: &[Fingerprint]| ClusterModel {
        k: 1,
        centroids: vec![fps[0].to_dense()],
        assignments: vec![0; fps.len()],
        silhouette: None,
        silhouette_by_k: Vec::new(),
    };
    let model = if m < 3 {
        log::warn!("{m} active scaffold(s) are too few to cluster; using one cluster");
        single(&fps)
    } else {
        match cluster_scaffolds(&fps, cfg.sas.k_range(m), &cfg.sas, derive_seed(seed, "sas", 0)) {
            Ok(model) => model,
            Err(SasError::DegenerateInput(model)) => {
                log::warn!("all active scaffolds share one fingerprint; using one cluster");
                *model
            }
            Err(e) => return stage("sas", Err(e)),
        }
    };
    for (j, &i) in owner.iter().enumerate() {
        active_clusters[i] = Some(model.assignments[j]);
    }
    let n = library_size(train.len(), cfg.sas.library_fraction);
    let lib_seed = derive_seed(seed, "library", 0);
    let library = match cfg.diffusion.sampling {
        SamplingMode::Sas => {
            let w = sampling_weights(&model.assignments, cfg.sas.epsilon);
            stage("sas", sample_library(&scaffolds, &model, &w, n, lib_seed))?
        }
        SamplingMode::Uniform => {
            let flat = single(&fps);
            let w = sampling_weights(&flat.assignments, cfg.sas.epsilon);
            let mut lib = stage("sas", sample_library(&scaffolds, &flat, &w, n, lib_seed))?;
            for e in &mut lib.entries {
                e.cluster_id = model.assignments[e.source];
            }
            lib
        }
    };

    let mut marginals = stage("augment", compute_marginals(train.iter().copied()))?;
    marginals.ensure_categories(scaffolds.iter().flat_map(|(s, _)| s.atoms().iter().copied()));
    let denoiser = make_denoiser(&cfg.diffusion.denoiser)?;
    let (generated, report) = stage(
        "augment",
        generate_gdsa(
            &library,
            denoiser.as_ref(),
            &marginals,
            cfg.diffusion.steps,
            derive_seed(seed, "gdsa", 0),
        ),
    )?;
    log::info!(
        "G-DSA: {} of {} extensions valid ({} size fallbacks)",
        report.valid,
        report.attempted,
        report.size_fallbacks
    );
    Ok(Augmentation {
        model: Some(model),
        library,
        generated_entry: generated.iter().map(|g| g.entry).collect(),
        generated: generated.into_iter().map(|g| g.molecule).collect(),
        report: Some(report),
        active_clusters,
    })
}

/// Self-training on the labeled training records plus the generated
/// molecules `d_prime`, model selection on the validation records.
pub fn train_model(
    train: &[&Record],
    valid: &[&Record],
    d_prime: &[MolGraph],
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(LogisticModel, History), PipelineError> {
    let set = |rs: &[&Record]| {
        LabeledSet::new(
            rs.iter().map(|r| r.molecule.clone()).collect(),
            rs.iter().map(|r| r.label).collect(),
            Origin::Original,
        )
    };
    let st_cfg = SelfTrainConfig {
        seed: derive_seed(seed, "selftrain", 0),
        ..cfg.selftrain.clone()
    };
    let init = LogisticModel::new(cfg.model.radius, cfg.model.nbits, cfg.model.l2);
    stage("train", self_train(init, &set(train), d_prime, &set(valid), &st_cfg))
}

pub fn score_records(model: &LogisticModel, records: &[&Record]) -> Vec<f64> {
    let inputs: Vec<Vec<u32>> = records.iter().map(|r| model.encode(&r.molecule)).collect();
    predict(model, &inputs)
}

fn ranked(records: &[&Record], scores: &[f64], stage_name: &str) -> Result<RankedList, PipelineError> {
    stage(
        stage_name,
        RankedList::new(
            records
                .iter()
                .zip(scores)
                .enumerate()
                .map(|(i, (r, &s))| RankedItem {
                    id: i.to_string(),
                    score: s,
                    active: r.label,
                })
                .collect(),
        ),
    )
}

/// Metric report of a scored set; SD uses scaffold fingerprints of the top
/// 100.
pub fn evaluate(records: &[&Record], scores: &[f64], cfg: &ExperimentConfig) -> Result<MetricReport, PipelineError> {
    let rl = ranked(records, scores, "evaluate")?;
    let top: Vec<Fingerprint> = rl
        .items()
        .iter()
        .take(100)
        .map(|it| {
            let mol = &records[it.id.parse::<usize>().expect("index id")].molecule;
            scaffold_fingerprint(murcko_scaffold(mol).as_ref(), cfg.sas.radius, cfg.sas.nbits)
        })
        .collect();
    stage("evaluate", MetricReport::compute(&rl, Some(&top)))
}

/// MMR λ-sweep over the positively scored records; also returns the
/// candidate count. An empty candidate set yields an empty sweep.
pub fn rerank(
    records: &[&Record],
    scores: &[f64],
    cfg: &ExperimentConfig,
    lambdas: &[f64],
) -> Result<(Vec<PairedMetrics>, usize), PipelineError> {
    let rl = ranked(records, scores, "rerank")?;
    let ids: Vec<String> = (0..records.len()).map(|i| i.to_string()).collect();
    let sim: Vec<Fingerprint> = records
        .iter()
        .map(|r| match cfg.rerank.similarity {
            Similarity::Scaffold => {
                scaffold_fingerprint(murcko_scaffold(&r.molecule).as_ref(), cfg.sas.radius, cfg.sas.nbits)
            }
            Similarity::Molecule => ecfp(&r.molecule, cfg.sas.radius, cfg.sas.nbits),
        })
        .collect();
    match build_candidates(&ids, scores, &sim, cfg.rerank.cap) {
        Ok(c) => {
            let rows = stage("rerank", lambda_sweep(&rl, &c, lambdas, cfg.rerank.k))?;
            Ok((rows, c.entries.len()))
        }
        Err(RerankError::EmptyCandidates) => {
            log::warn!("no molecule has a positive score; reranking skipped");
            Ok((Vec::new(), 0))
        }
        Err(e) => stage("rerank", Err(e)),
    }
}

/// Writes `id,smiles,label,score`.
pub fn write_scores<W: std::io::Write>(records: &[&Record], scores: &[f64], w: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["id", "smiles", "label", "score"])?;
    for (r, s) in records.iter().zip(scores) {
        w.write_record([
            r.id.as_str(),
            r.smiles.as_str(),
            if r.label { "1" } else { "0" },
            &s.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_scores`].
pub fn read_scores<R: std::io::Read>(reader: R) -> Result<(Vec<Record>, Vec<f64>), PipelineError> {
    let mut rdr = csv::Reader::from_reader(reader);
    if rdr.headers()?.iter().collect::<Vec<_>>() != ["id", "smiles", "label", "score"] {
        return Err(PipelineError::Header("expected header id,smiles,label,score".into()));
    }
    let mut records = Vec::new();
    let mut scores = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let bad = |what: &str| PipelineError::Header(format!("row '{}': bad {what}", &rec[0]));
        let molecule = parse_smiles(&rec[1]).map_err(|_| bad("SMILES"))?;
        let label = match &rec[2] {
            "0" => false,
            "1" => true,
            _ => return Err(bad("label")),
        };
        scores.push(rec[3].parse::<f64>().map_err(|_| bad("score"))?);
        records.push(Record {
            id: rec[0].to_string(),
            smiles: rec[1].to_string(),
            label,
            molecule,
        });
    }
    Ok((records, scores))
}

/// Seed of job (`split`, `seed_index`) under the run seed.
pub fn job_seed(run_seed: u64, split: usize, seed_index: usize) -> u64 {
    derive_seed(run_seed, "job", (split * 1000 + seed_index) as u64)
}

/// Runs augmentation, self-training, test scoring, metrics and the λ-sweep
/// for one split and evaluation seed. Artifacts go to `dir` when given.
pub fn run_job(
    assay: &Assay,
    split: &Split,
    cfg: &ExperimentConfig,
    split_index: usize,
    seed_index: usize,
    dir: Option<&Path>,
) -> Result<JobOutput, PipelineError> {
    let seed = job_seed(cfg.data.seed, split_index, seed_index);
    let pick = |idx: &[usize]| -> Vec<&Record> { idx.iter().map(|&i| &assay.records[i]).collect() };
    let (train, valid, test) = (pick(&split.train), pick(&split.valid), pick(&split.test));
    let train_mols: Vec<&MolGraph> = train.iter().map(|r| &r.molecule).collect();
    let train_labels: Vec<bool> = train.iter().map(|r| r.label).collect();

    let aug = if cfg.diffusion.augment {
        Some(augment(&train_mols, &train_labels, cfg, seed)?)
    } else {
        None
    };
    let d_prime: &[MolGraph] = aug.as_ref().map_or(&[], |a| &a.generated);
    let (model, history) = train_model(&train, &valid, d_prime, cfg, seed)?;
    let scores = score_records(&model, &test);
    let metrics = evaluate(&test, &scores, cfg)?;
    let (sweep, candidates) = if cfg.rerank.enabled {
        rerank(&test, &scores, cfg, &cfg.rerank.lambdas)?
    } else {
        (Vec::new(), 0)
    };

    let out = JobOutput {
        split: split_index,
        seed_index,
        seed,
        metrics,
        sweep,
        candidates,
        clusters: aug.as_ref().and_then(|a| a.model.as_ref().map(|m| m.k)),
        library_size: aug.as_ref().map_or(0, |a| a.library.len()),
        gdsa: aug.as_ref().and_then(|a| a.report.clone()),
        library_cluster_counts: aug.as_ref().map_or(Vec::new(), Augmentation::library_counts),
        gdsa_cluster_counts: aug.as_ref().map_or(Vec::new(), Augmentation::cluster_counts),
        best_epoch: history.best_epoch,
        final_pseudo: history.epochs.last().map_or(0, |r| r.n_pseudo),
    };

    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
        history.write_csv(create(&dir.join("history.csv"))?)?;
        stage("train", model.save(&dir.join("model.json")))?;
        write_scores(&test, &scores, create(&dir.join("scores.csv"))?)?;
        fs::write(dir.join("metrics.json"), metrics.to_json() + "\n")?;
        write_sweep_csv(&out.sweep, create(&dir.join("sweep.csv"))?)?;
        if let Some(a) = &aug {
            a.library.write_csv(create(&dir.join("library.csv"))?)?;
            a.write_gdsa_csv(create(&dir.join("gdsa.csv"))?)?;
            write_umap_input(dir, &train_mols, &train_labels, a, cfg)?;
        }
        let text = serde_json::to_string_pretty(&out).expect("job serializes");
        fs::write(dir.join("job.json"), text + "\n")?;
    }
    Ok(out)
}

/// Fingerprints of the training actives and the generated molecules, ready
/// for an external 2-D embedding: `group,smiles,cluster_id,fingerprint_hex`.
fn write_umap_input(
    dir: &Path,
    train: &[&MolGraph],
    labels: &[bool],
    aug: &Augmentation,
    cfg: &ExperimentConfig,
) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(create(&dir.join("umap_input.csv"))?);
    w.write_record(["group", "smiles", "cluster_id", "fingerprint_hex"])?;
    let actives = train.iter().zip(labels).filter(|(_, &y)| y).map(|(m, _)| *m);
    for (mol, c) in actives.zip(&aug.active_clusters) {
        w.write_record([
            "train_active".to_string(),
            smiles_of(mol),
            c.map_or(String::new(), |c| c.to_string()),
            ecfp(mol, cfg.model.radius, cfg.model.nbits).to_hex(),
        ])?;
    }
    for (mol, &e) in aug.generated.iter().zip(&aug.generated_entry) {
        w.write_record([
            "gdsa".to_string(),
            smiles_of(mol),
            aug.library.entries[e].cluster_id.to_string(),
            ecfp(mol, cfg.model.radius, cfg.model.nbits).to_hex(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Mean and sample standard deviation of every metric over `jobs`.
pub fn aggregate(jobs: &[JobOutput]) -> Vec<AggregateRow> {
    type Getter = fn(&JobOutput) -> Option<f64>;
    let getters: [(&str, Getter); 7] = [
        ("logauc", |j| Some(j.metrics.logauc)),
        ("bedroc", |j| Some(j.metrics.bedroc)),
        ("ef100", |j| Some(j.metrics.ef100)),
        ("dcg100", |j| Some(j.metrics.dcg100)),
        ("sd100", |j| j.metrics.sd100),
        ("library_entropy_gap", |j| {
            (!j.library_cluster_counts.is_empty()).then(|| entropy_gap(&j.library_cluster_counts))
        }),
        ("gdsa_entropy_gap", |j| {
            (!j.gdsa_cluster_counts.is_empty()).then(|| entropy_gap(&j.gdsa_cluster_counts))
        }),
    ];
    getters
        .iter()
        .filter_map(|(name, get)| {
            let xs: Vec<f64> = jobs.iter().filter_map(get).collect();
            (!xs.is_empty()).then(|| {
                let (mean, std) = mean_std(&xs);
                AggregateRow {
                    metric: name.to_string(),
                    n: xs.len(),
                    mean,
                    std,
                }
            })
        })
        .collect()
}

fn write_reports(dir: &Path, jobs: &[JobOutput], agg: &[AggregateRow]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(create(&dir.join("report.csv"))?);
    w.write_record(["split", "seed", "logauc", "bedroc", "ef100", "dcg100", "sd100"])?;
    for j in jobs {
        w.write_record([
            j.split.to_string(),
            j.seed_index.to_string(),
            format!("{:.6}", j.metrics.logauc),
            format!("{:.6}", j.metrics.bedroc),
            format!("{:.6}", j.metrics.ef100),
            format!("{:.6}", j.metrics.dcg100),
            j.metrics.sd100.map_or(String::new(), |v| format!("{v:.6}")),
        ])?;
    }
    w.flush()?;

    let rows: Vec<serde_json::Value> = agg
        .iter()
        .map(|r| {
            serde_json::json!({
                "metric": r.metric,
                "n": r.n,
                "mean": format!("{:.6}", r.mean),
                "std": format!("{:.6}", r.std),
            })
        })
        .collect();
    let report = serde_json::json!({
        "jobs": jobs.len(),
        "candidate_rule": "logit > 0",
        "summary": rows,
    });
    fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
    )?;

    // λ-sweep averaged over jobs, one row per λ
    let mut lambdas: Vec<f64> = jobs.iter().flat_map(|j| j.sweep.iter().map(|r| r.lambda)).collect();
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();
    let mut w = csv::Writer::from_writer(create(&dir.join("lambda_sweep.csv"))?);
    w.write_record([
        "lambda",
        "jobs",
        "ef100_before",
        "ef100_after",
        "sd100_before",
        "sd100_after",
    ])?;
    for l in lambdas {
        let rows: Vec<&PairedMetrics> = jobs
            .iter()
            .flat_map(|j| j.sweep.iter())
            .filter(|r| r.lambda == l)
            .collect();
        let avg = |f: fn(&PairedMetrics) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / rows.len() as f64;
        w.write_record([
            format!("{l:.2}"),
            rows.len().to_string(),
            format!("{:.6}", avg(|r| r.ef_before)),
            format!("{:.6}", avg(|r| r.ef_after)),
            format!("{:.6}", avg(|r| r.sd_before)),
            format!("{:.6}", avg(|r| r.sd_after)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn hash_tree(root: &Path) -> Result<Vec<ManifestFile>, PipelineError> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<ManifestFile>) -> Result<(), PipelineError> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else if path != root.join("manifest.json") {
                let bytes = fs::read(&path)?;
                let rel = path.strip_prefix(root).expect("inside root");
                out.push(ManifestFile {
                    path: rel.to_string_lossy().replace('\\', "/"),
                    sha256: hex::encode(Sha256::digest(&bytes)),
                    bytes: bytes.len() as u64,
                });
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(root, root, &mut out)?;
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

/// Writes `manifest.json` listing every other file in `dir` with its hash.
pub fn write_manifest(dir: &Path, mut manifest: Manifest) -> Result<Manifest, PipelineError> {
    manifest.files = hash_tree(dir)?;
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(manifest)
}

fn job_dir(dir: &Path, split: usize, seed_index: usize) -> PathBuf {
    dir.join(format!("split_{split}")).join(format!("seed_{seed_index}"))
}

/// Full pipeline: ingest, splits, then for every selected split and
/// evaluation seed augmentation, self-training, scoring, metrics and the
/// λ-sweep. Writes every artifact, the aggregate reports and a manifest to
/// `dir`. A failing stage is recorded in the manifest before returning.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path) -> Result<RunSummary, PipelineError> {
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    let jobs_list: Vec<(usize, usize)> = cfg
        .split_indices()
        .into_iter()
        .flat_map(|s| (0..cfg.eval.seeds).map(move |j| (s, j)))
        .collect();
    let mut manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash(),
        seed: cfg.data.seed,
        jobs: jobs_list
            .iter()
            .map(|&(s, j)| (s, j, job_seed(cfg.data.seed, s, j)))
            .collect(),
        stages: Vec::new(),
        failure: None,
        files: Vec::new(),
    };
    let fail = |mut manifest: Manifest, stage: &str, job: Option<(usize, usize)>, e: PipelineError| {
        let message = e.to_string();
        manifest.failure = Some(StageFailure {
            stage: match &e {
                PipelineError::Stage { stage, .. } => stage.clone(),
                _ => stage.to_string(),
            },
            split: job.map(|j| j.0),
            seed_index: job.map(|j| j.1),
            message,
        });
        write_manifest(dir, manifest)?;
        Err(e)
    };

    let assay = match ingest(&cfg.data.input) {
        Ok(a) => a,
        Err(e) => return fail(manifest, "ingest", None, e),
    };
    assay.write_csv(create(&dir.join("records.csv"))?)?;
    assay.write_quarantine(create(&dir.join("quarantine.csv"))?)?;
    manifest.stages.push("ingest".into());

    let plan = match make_splits(&assay, cfg.data.scheme, cfg.data.n_splits, cfg.data.seed) {
        Ok(p) => p,
        Err(e) => return fail(manifest, "split", None, e),
    };
    plan.write_csv(&assay, create(&dir.join("splits.csv"))?)?;
    manifest.stages.push("split".into());

    let results: Vec<Result<JobOutput, PipelineError>> = jobs_list
        .par_iter()
        .map(|&(s, j)| run_job(&assay, &plan.splits[s], cfg, s, j, Some(&job_dir(dir, s, j))))
        .collect();
    let mut jobs = Vec::with_capacity(results.len());
    for (r, &job) in results.into_iter().zip(&jobs_list) {
        match r {
            Ok(o) => jobs.push(o),
            Err(e) => return fail(manifest, "job", Some(job), e),
        }
    }
    manifest
        .stages
        .extend(["augment", "train", "score", "evaluate", "rerank"].map(String::from));

    if cfg.data.scheme == Scheme::Scaffold {
        let keys = scaffold_keys(&assay);
        for s in cfg.split_indices() {
            let shared = plan.leakage(&keys, s);
            if shared > 0 {
                return fail(
                    manifest,
                    "leakage-check",
                    None,
                    PipelineError::Leakage { split: s, shared },
                );
            }
        }
        manifest.stages.push("leakage-check".into());
    }

    let agg = aggregate(&jobs);
    write_reports(dir, &jobs, &agg)?;
    manifest.stages.push("report".into());
    let manifest = write_manifest(dir, manifest)?;
    Ok(RunSummary {
        dir: dir.to_path_buf(),
        jobs,
        aggregate: agg,
        manifest,
    })
}

/// Rebuilds the aggregate reports from the `job.json` files of a finished
/// run directory and refreshes its manifest.
pub fn report_from_dir(dir: &Path) -> Result<Vec<AggregateRow>, PipelineError> {
    let mut paths = Vec::new();
    for split in fs::read_dir(dir)? {
        let split = split?.path();
        if split.is_dir() {
            for seed in fs::read_dir(&split)? {
                let p = seed?.path().join("job.json");
                if p.is_file() {
                    paths.push(p);
                }
            }
        }
    }
    paths.sort();
    let mut jobs = Vec::new();
    for p in paths {
        let job: JobOutput = serde_json::from_str(&fs::read_to_string(&p)?)
            .map_err(|e| PipelineError::Header(format!("{}: {e}", p.display())))?;
        jobs.push(job);
    }
    jobs.sort_by_key(|j| (j.split, j.seed_index));
    let agg = aggregate(&jobs);
    write_reports(dir, &jobs, &agg)?;
    let manifest_path = dir.join("manifest.json");
    if manifest_path.is_file() {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)
            .map_err(|e| PipelineError::Header(format!("manifest: {e}")))?;
        write_manifest(dir, manifest)?;
    }
    Ok(agg)
}
