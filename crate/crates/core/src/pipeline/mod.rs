//! Dataset ingestion, split generation, configuration and experiment
//! orchestration.

mod config;
mod run;
mod split;
pub mod synth;

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::chem::{check_valence, parse_smiles, MolGraph};
use crate::diffusion::DiffusionError;
use crate::metrics::MetricError;
use crate::rerank::RerankError;
use crate::sas::SasError;
use crate::selftrain::SelfTrainError;

pub use config::{
    DataConfig, DenoiserChoice, DiffusionConfig, EvalConfig, ExperimentConfig, ModelConfig, RerankConfig, SamplingMode,
    Similarity,
};
pub use run::{
    aggregate, augment, entropy_gap, evaluate, job_seed, read_scores, report_from_dir, rerank, run_experiment, run_job,
    score_records, train_model, write_manifest, write_scores, AggregateRow, Augmentation, JobOutput, Manifest,
    ManifestFile, RunSummary, StageFailure,
};
pub use split::{make_splits, read_splits_csv, scaffold_keys, Role, Scheme, Split, SplitPlan};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("header error: {0}")]
    Header(String),
    #[error("duplicate molecule id '{0}'")]
    DuplicateId(String),
    #[error("too few scaffolds: {0}")]
    TooFewScaffolds(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("scaffold leakage between train and test in split {split}: {shared} shared scaffold(s)")]
    Leakage { split: usize, shared: usize },
    #[error("stage '{stage}' failed: {message}")]
    Stage { stage: String, message: String },
    #[error(transparent)]
    Sas(#[from] SasError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    SelfTrain(#[from] SelfTrainError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Rerank(#[from] RerankError),
}

#[derive(Debug, Clone)]
pub struct Record {
    pub id: String,
    pub smiles: String,
    pub label: bool,
    pub molecule: MolGraph,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Quarantined {
    /// 1-based line number in the input file.
    pub line: usize,
    pub id: String,
    pub smiles: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Assay {
    pub id: String,
    pub records: Vec<Record>,
    pub quarantined: Vec<Quarantined>,
}

impl Assay {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn active_count(&self) -> usize {
        self.records.iter().filter(|r| r.label).count()
    }

    pub fn total_count(&self) -> usize {
        self.records.len()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// Writes `line,id,smiles,reason`.
    pub fn write_quarantine<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["line", "id", "smiles", "reason"])?;
        for q in &self.quarantined {
            out.write_record([q.line.to_string(), q.id.clone(), q.smiles.clone(), q.reason.clone()])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes the accepted records as `id,smiles,label`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["id", "smiles", "label"])?;
        for r in &self.records {
            out.write_record([r.id.as_str(), r.smiles.as_str(), if r.label { "1" } else { "0" }])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Reads an `id,smiles,label` CSV file. The assay id is the file stem.
pub fn ingest(path: &Path) -> Result<Assay, PipelineError> {
    let file = std::fs::File::open(path)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    ingest_reader(file, &id)
}

/// Parses every row; rows whose SMILES fail to parse or violate valence, or
/// whose label is not 0/1, are quarantined with a reason.
pub fn ingest_reader<R: Read>(reader: R, assay_id: &str) -> Result<Assay, PipelineError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != ["id", "smiles", "label"] {
        return Err(PipelineError::Header(format!(
            "expected header id,smiles,label, found {}",
            header.join(",")
        )));
    }
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    let mut quarantined = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let (id, smiles, label) = (&rec[0], &rec[1], &rec[2]);
        if !seen.insert(id.to_string()) {
            return Err(PipelineError::DuplicateId(id.to_string()));
        }
        let mut quarantine = |reason: String| {
            quarantined.push(Quarantined {
                line,
                id: id.to_string(),
                smiles: smiles.to_string(),
                reason,
            })
        };
        let label = match label {
            "0" => false,
            "1" => true,
            other => {
                quarantine(format!("label '{other}' is not 0 or 1"));
                continue;
            }
        };
        let mol = match parse_smiles(smiles) {
            Ok(m) => m,
            Err(e) => {
                quarantine(format!("parse: {e}"));
                continue;
            }
        };
        let report = check_valence(&mol);
        if !report.valid() {
            let v = &report.violations[0];
            quarantine(format!("valence: atom {}: {}", v.atom, v.reason));
            continue;
        }
        records.push(Record {
            id: id.to_string(),
            smiles: smiles.to_string(),
            label,
            molecule: mol,
        });
    }
    let assay = Assay {
        id: assay_id.to_string(),
        records,
        quarantined,
    };
    let frac = assay.active_count() as f64 / assay.len().max(1) as f64;
    if frac > 0.01 {
        log::warn!("assay '{assay_id}' has an active fraction of {:.2}%", 100.0 * frac);
    }
    log::info!(
        "ingested {} records ({} actives), quarantined {}",
        assay.len(),
        assay.active_count(),
        assay.quarantined.len()
    );
    Ok(assay)
}
