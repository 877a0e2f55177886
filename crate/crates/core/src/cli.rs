//! Staged command-line pipeline with artifacts on disk.
//!
//! Every stage reads its inputs from the work directory, writes its outputs
//! there and records both, with content hashes and the config hash, in
//! `manifest.json`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::dataset::{load_dataset, save_dataset, Dataset};
use crate::error::Error;
use crate::evaluation::{compare_with, evaluate_target, subset_samples, SharedArtifacts};
use crate::influence::validation::run_validation;
use crate::influence::{influence_scores, scores_from_jsonl, SampleScore};
use crate::selection::{baseline_select, coverage_select, overall_scores, records_to_jsonl, Strategy, Subset};
use crate::surrogate::{train_surrogate, SurrogateParams};
use crate::target::{effort_scores, finetune_fewshot, pretrain_target, TargetParams};

pub const MANIFEST: &str = "manifest.json";

/// Exit status for a missing prerequisite artifact.
pub const EXIT_MISSING: i32 = 2;
/// Exit status for artifacts produced under a different config.
pub const EXIT_CONFIG_MISMATCH: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Ingest,
    TrainSurrogate,
    ScoreInfluence,
    ScoreEffort,
    Select,
    Finetune,
    Evaluate,
    Validate,
    /// Every stage above, in order.
    All,
}

impl Command {
    const STAGES: [Command; 8] = [
        Command::Ingest,
        Command::TrainSurrogate,
        Command::ScoreInfluence,
        Command::ScoreEffort,
        Command::Select,
        Command::Finetune,
        Command::Evaluate,
        Command::Validate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::TrainSurrogate => "train-surrogate",
            Command::ScoreInfluence => "score-influence",
            Command::ScoreEffort => "score-effort",
            Command::Select => "select",
            Command::Finetune => "finetune",
            Command::Evaluate => "evaluate",
            Command::Validate => "validate",
            Command::All => "all",
        }
    }
}

#[derive(Debug, Clone, Parser)]
#[command(name = "influprune", version, about = "Influence- and effort-guided data pruning for recommender fine-tuning")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// Pipeline configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "work")]
    pub workdir: PathBuf,
    /// Replaces every seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run even if inputs were produced under a different config.
    #[arg(long)]
    pub force: bool,
}

/// Why a command stopped, with the process exit status to report.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: 1,
            message: e.to_string(),
        }
    }
}

type StageResult<T = ()> = std::result::Result<T, Failure>;

/// Files a stage wrote plus any sub-phase timings worth keeping.
#[derive(Default)]
struct Outputs {
    files: Vec<&'static str>,
    timings: BTreeMap<String, f64>,
}

impl From<Vec<&'static str>> for Outputs {
    fn from(files: Vec<&'static str>) -> Self {
        Outputs {
            files,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_sha256: String,
    /// Relative path → sha256 of every file read.
    pub inputs: BTreeMap<String, String>,
    /// Relative path → sha256 of every file written.
    pub outputs: BTreeMap<String, String>,
    pub seconds: f64,
    /// Finer wall-clock splits reported by the stage.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub timings: BTreeMap<String, f64>,
}

impl Manifest {
    pub fn load(workdir: &Path) -> StageResult<Self> {
        let path = workdir.join(MANIFEST);
        if !path.exists() {
            return Ok(Manifest::default());
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text).map_err(Error::from)?)
    }

    fn save(&self, workdir: &Path) -> StageResult {
        let text = serde_json::to_string_pretty(self).expect("plain data");
        write(&workdir.join(MANIFEST), &text)
    }
}

pub fn run(cli: &Cli) -> StageResult {
    let mut cfg = PipelineConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        override_seeds(&mut cfg, seed);
    }
    let ctx = Context {
        hash: config_hash(&cfg),
        cfg,
        workdir: cli.workdir.clone(),
        force: cli.force,
    };
    fs::create_dir_all(&ctx.workdir).map_err(|e| Error::io(&ctx.workdir, e))?;
    match cli.command {
        Command::All => Command::STAGES.iter().try_for_each(|&c| ctx.run_stage(c)),
        c => ctx.run_stage(c),
    }
}

fn override_seeds(cfg: &mut PipelineConfig, seed: u64) {
    cfg.surrogate.model.seed = seed;
    cfg.surrogate.train.seed = seed;
    cfg.influence.seed = seed;
    cfg.target.model.seed = seed;
    cfg.target.model.pretrain.seed = seed;
    cfg.target.finetune.seed = seed;
    cfg.selection.seed = seed;
    cfg.evaluation.seeds = vec![seed];
    let base = cfg.validation.probe_seed;
    cfg.validation = cfg.validation.reseeded(seed.wrapping_sub(base));
}

/// sha256 of the effective configuration in its canonical JSON form.
pub fn config_hash(cfg: &PipelineConfig) -> String {
    sha256(serde_json::to_string(cfg).expect("plain data").as_bytes())
}

fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// The stage that writes each artifact.
fn producer(artifact: &str) -> Command {
    match artifact {
        "dataset" => Command::Ingest,
        "surrogate.ckpt" => Command::TrainSurrogate,
        "influence.jsonl" => Command::ScoreInfluence,
        "target_pretrained.ckpt" | "effort.jsonl" => Command::ScoreEffort,
        "subset.json" => Command::Select,
        "target_finetuned.ckpt" => Command::Finetune,
        other => unreachable!("unknown artifact {other}"),
    }
}

struct Context {
    cfg: PipelineConfig,
    hash: String,
    workdir: PathBuf,
    force: bool,
}

impl Context {
    fn path(&self, artifact: &str) -> PathBuf {
        self.workdir.join(artifact)
    }

    fn inputs(&self, command: Command) -> Vec<&'static str> {
        match command {
            Command::Ingest | Command::Validate | Command::All => vec![],
            Command::TrainSurrogate | Command::ScoreEffort => vec!["dataset"],
            Command::ScoreInfluence => vec!["dataset", "surrogate.ckpt"],
            Command::Select => match self.cfg.selection.strategy {
                Strategy::Dealrec => vec!["dataset", "influence.jsonl", "effort.jsonl"],
                Strategy::Random => vec!["dataset"],
                _ => vec!["dataset", "surrogate.ckpt"],
            },
            Command::Finetune => vec!["dataset", "target_pretrained.ckpt", "subset.json"],
            Command::Evaluate => vec![
                "dataset",
                "surrogate.ckpt",
                "influence.jsonl",
                "target_pretrained.ckpt",
                "effort.jsonl",
                "target_finetuned.ckpt",
            ],
        }
    }

    /// Checks that every input exists and was made under the current config.
    fn check_inputs(&self, command: Command, manifest: &Manifest) -> StageResult {
        for artifact in self.inputs(command) {
            let stage = producer(artifact).name();
            if !self.path(artifact).exists() {
                return Err(Failure {
                    code: EXIT_MISSING,
                    message: format!("{} needs {artifact}; run the {stage} stage first", command.name()),
                });
            }
            let recorded = manifest.stages.get(stage).map(|r| r.config_sha256.as_str());
            if recorded != Some(self.hash.as_str()) && !self.force {
                let why = match recorded {
                    Some(h) => format!("config {}", &h[..12]),
                    None => "no manifest record".into(),
                };
                return Err(Failure {
                    code: EXIT_CONFIG_MISMATCH,
                    message: format!(
                        "{artifact} was produced by {stage} under {why}, current config is {}; rerun {stage} or pass --force",
                        &self.hash[..12]
                    ),
                });
            }
        }
        Ok(())
    }

    fn run_stage(&self, command: Command) -> StageResult {
        let mut manifest = Manifest::load(&self.workdir)?;
        self.check_inputs(command, &manifest)?;
        let inputs = self.hash_files(&self.inputs(command))?;
        info!("stage {}", command.name());
        let start = Instant::now();
        let outputs: Outputs = match command {
            Command::Ingest => self.ingest()?.into(),
            Command::TrainSurrogate => self.train_surrogate()?.into(),
            Command::ScoreInfluence => self.score_influence()?,
            Command::ScoreEffort => self.score_effort()?.into(),
            Command::Select => self.select()?.into(),
            Command::Finetune => self.finetune()?.into(),
            Command::Evaluate => self.evaluate()?.into(),
            Command::Validate => self.validate()?.into(),
            Command::All => unreachable!("expanded by run"),
        };
        let seconds = start.elapsed().as_secs_f64();
        let timings = outputs.timings;
        let outputs = self.hash_files(&outputs.files)?;
        manifest.stages.insert(
            command.name().to_string(),
            StageRecord {
                config_sha256: self.hash.clone(),
                inputs,
                outputs,
                seconds,
                timings,
            },
        );
        manifest.save(&self.workdir)?;
        info!("stage {} done in {seconds:.2}s", command.name());
        Ok(())
    }

    /// Hashes the named artifacts; directories expand to their files.
    fn hash_files(&self, artifacts: &[&str]) -> StageResult<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for artifact in artifacts {
            let path = self.path(artifact);
            if path.is_dir() {
                let mut entries: Vec<PathBuf> = fs::read_dir(&path)
                    .map_err(|e| Error::io(&path, e))?
                    .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(&path, err)))
                    .collect::<Result<_, _>>()?;
                entries.sort();
                for file in entries {
                    let name = format!("{artifact}/{}", file.file_name().unwrap().to_string_lossy());
                    out.insert(name, sha256(&read_bytes(&file)?));
                }
            } else {
                out.insert(artifact.to_string(), sha256(&read_bytes(&path)?));
            }
        }
        Ok(out)
    }

    fn dataset(&self) -> StageResult<Dataset> {
        Ok(load_dataset(&self.path("dataset"))?)
    }

    fn scores(&self, artifact: &str, field: &str) -> StageResult<Vec<SampleScore>> {
        Ok(scores_from_jsonl(&read(&self.path(artifact))?, field)?)
    }

    fn ingest(&self) -> StageResult<Vec<&'static str>> {
        let data = self.cfg.dataset.build()?;
        info!(
            "{} items, {} train / {} valid / {} test samples",
            data.n_items(),
            data.train.len(),
            data.valid.len(),
            data.test.len()
        );
        save_dataset(&self.path("dataset"), &data)?;
        Ok(vec!["dataset"])
    }

    fn train_surrogate(&self) -> StageResult<Vec<&'static str>> {
        let data = self.dataset()?;
        let s = &self.cfg.surrogate;
        let fitted = train_surrogate(&data, &s.model, &s.train)?;
        info!(
            "surrogate loss {:.4} -> {:.4}",
            fitted.trace.initial_loss, fitted.trace.final_loss
        );
        fitted.params.save(&self.path("surrogate.ckpt"))?;
        Ok(vec!["surrogate.ckpt"])
    }

    fn score_influence(&self) -> StageResult<Outputs> {
        let data = self.dataset()?;
        let surrogate = SurrogateParams::load(&self.path("surrogate.ckpt"))?;
        let result = influence_scores(&surrogate, &data.train, &self.cfg.influence)?;
        write(&self.path("influence.jsonl"), &result.to_jsonl())?;
        write(&self.path("influence_diagnostics.json"), &result.diagnostics_json())?;
        let d = &result.diagnostics;
        Ok(Outputs {
            files: vec!["influence.jsonl", "influence_diagnostics.json"],
            timings: BTreeMap::from([
                ("solve".to_string(), d.solve_seconds),
                ("scoring".to_string(), d.scoring_seconds),
            ]),
        })
    }

    fn score_effort(&self) -> StageResult<Vec<&'static str>> {
        let data = self.dataset()?;
        let pretrained = pretrain_target(&data, &self.cfg.target.model)?;
        pretrained.params.save(&self.path("target_pretrained.ckpt"))?;
        let effort = effort_scores(&pretrained.params, &data.train)?;
        write(&self.path("effort.jsonl"), &effort.to_jsonl())?;
        Ok(vec!["target_pretrained.ckpt", "effort.jsonl"])
    }

    fn select(&self) -> StageResult<Vec<&'static str>> {
        let data = self.dataset()?;
        let cfg = &self.cfg.selection;
        let mut outputs = vec!["subset.json"];
        let subset = match cfg.strategy {
            Strategy::Dealrec => {
                let influence = self.scores("influence.jsonl", "influence")?;
                let effort = self.scores("effort.jsonl", "effort")?;
                let mut records = overall_scores(&influence, &effort, cfg.lambda, data.train.len())?;
                let subset = coverage_select(&mut records, cfg)?;
                write(&self.path("scores.jsonl"), &records_to_jsonl(&records))?;
                outputs.push("scores.jsonl");
                subset
            }
            Strategy::Random => baseline_select(Strategy::Random, &data.train, None::<&SurrogateParams>, cfg)?,
            other => {
                let surrogate = SurrogateParams::load(&self.path("surrogate.ckpt"))?;
                baseline_select(other, &data.train, Some(&surrogate), cfg)?
            }
        };
        info!("{} selected {} of {} samples", cfg.strategy, subset.selected.len(), data.train.len());
        write(&self.path("subset.json"), &subset.to_json())?;
        Ok(outputs)
    }

    fn finetune(&self) -> StageResult<Vec<&'static str>> {
        let data = self.dataset()?;
        let pretrained = TargetParams::load(&self.path("target_pretrained.ckpt"))?;
        let subset = Subset::from_json(&read(&self.path("subset.json"))?)?;
        let samples = subset_samples(&data.train, &subset)?;
        let tuned = finetune_fewshot(&pretrained, &samples, &self.cfg.target.finetune)?;
        tuned.params.save(&self.path("target_finetuned.ckpt"))?;
        Ok(vec!["target_finetuned.ckpt"])
    }

    fn evaluate(&self) -> StageResult<Vec<&'static str>> {
        let data = self.dataset()?;
        let ev = &self.cfg.evaluation;
        let tuned = TargetParams::load(&self.path("target_finetuned.ckpt"))?;
        let metrics = evaluate_target(&tuned, &data.test, &ev.ks)?;
        write(
            &self.path("finetuned_metrics.json"),
            &serde_json::to_string_pretty(&metrics).expect("plain data"),
        )?;
        let shared = SharedArtifacts {
            surrogate: SurrogateParams::load(&self.path("surrogate.ckpt"))?,
            influence: self.scores("influence.jsonl", "influence")?,
            pretrained: TargetParams::load(&self.path("target_pretrained.ckpt"))?,
            effort: self.scores("effort.jsonl", "effort")?,
            phases: BTreeMap::new(),
        };
        let report = compare_with(&data, &shared, &ev.strategies, &ev.seeds, &self.cfg)?;
        let table = report.to_table();
        println!("{table}");
        write(&self.path("report.json"), &report.to_json())?;
        write(&self.path("report.csv"), &report.to_csv())?;
        write(&self.path("report.txt"), &table)?;
        Ok(vec!["finetuned_metrics.json", "report.json", "report.csv", "report.txt"])
    }

    fn validate(&self) -> StageResult<Vec<&'static str>> {
        let report = run_validation(&self.cfg.validation)?;
        write(
            &self.path("validation.json"),
            &serde_json::to_string_pretty(&report).expect("plain data"),
        )?;
        let failures = report.failures();
        if !failures.is_empty() {
            return Err(Failure {
                code: 1,
                message: format!("validation failed: {}", failures.join("; ")),
            });
        }
        println!(
            "IHVP error {:.4}, single-solve error {:.1e}, Spearman {:.3}, min cosine {:.3}",
            report.ihvp_relative_error,
            report.single_solve_relative_error,
            report.spearman,
            report.parameter_cosines.iter().copied().fold(f64::INFINITY, f64::min)
        );
        Ok(vec!["validation.json"])
    }
}

fn read(path: &Path) -> StageResult<String> {
    Ok(fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

fn read_bytes(path: &Path) -> StageResult<Vec<u8>> {
    Ok(fs::read(path).map_err(|e| Error::io(path, e))?)
}

fn write(path: &Path, text: &str) -> StageResult {
    Ok(fs::write(path, text).map_err(|e| Error::io(path, e))?)
}
