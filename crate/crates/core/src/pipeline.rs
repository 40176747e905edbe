//! Experiment orchestration: training, attribution and the three evaluation
//! criteria. Every command reads its inputs from and writes its outputs to the
//! run directory, so each one can run as its own process.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{ehr, energy_pg, wsol_iou, BoxSet, METRIC_EHR, METRIC_ENERGY_PG, METRIC_WSOL_IOU};
use crate::attribution::{gradcam_batch, iba, iba_fit_statistics, AttributionMap, Method};
use crate::augment::Augmentation;
use crate::config::ExperimentConfig;
use crate::dataset::{generate, LabeledSet};
use crate::dissection::{count_unique_concepts, dissect, generate_concept_corpus, ConceptCorpus};
use crate::error::{Error, Result};
use crate::faithfulness::{evaluate_faithfulness, FillKind, InterModelScore, ReplacementPolicy};
use crate::harness::{build_model, select_eval_samples, train, EvalSample, ModelCheckpoint};
use crate::image::{Image, Rect};
use crate::records::{self, AlignmentRow, CurveRecord, DetectorRow, ResultRecord};
use crate::rng::{child, child_seed};
use crate::tensorfile::{load_image, load_map, save_image, save_map};

pub const METRIC_TOP1: &str = "test_top1";
pub const METRIC_FINAL_LOSS: &str = "final_loss";
pub const METRIC_DETECTOR_RATE: &str = "detector_rate";
pub const METRIC_DETECTORS: &str = "detectors";

/// Metric name of a per-category unique-concept count.
pub fn concept_metric(category: &str) -> String {
    format!("unique_{category}")
}

/// File layout of one run.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.dir.join("config.toml")
    }

    pub fn checkpoint(&self, model: Augmentation) -> PathBuf {
        self.dir.join("checkpoints").join(format!("{}.ckpt", model.name()))
    }

    pub fn train_log(&self) -> PathBuf {
        self.dir.join("train_log.jsonl")
    }

    pub fn results(&self) -> PathBuf {
        self.dir.join("results.jsonl")
    }

    pub fn curves(&self) -> PathBuf {
        self.dir.join("curves.jsonl")
    }

    pub fn detectors(&self) -> PathBuf {
        self.dir.join("detectors.jsonl")
    }

    pub fn alignment_rows(&self) -> PathBuf {
        self.dir.join("alignment_samples.jsonl")
    }

    pub fn samples(&self) -> PathBuf {
        self.dir.join("samples").join("samples.json")
    }

    pub fn sample_image(&self, index: usize) -> PathBuf {
        self.dir.join("samples").join(format!("{index:05}.bin"))
    }

    pub fn map(&self, method: Method, model: Augmentation, index: usize) -> PathBuf {
        self.dir
            .join("maps")
            .join(method.name())
            .join(model.name())
            .join(format!("{index:05}.bin"))
    }

    pub fn corpus(&self) -> PathBuf {
        self.dir.join("corpus")
    }

    pub fn report(&self) -> PathBuf {
        self.dir.join("report")
    }
}

/// Models and methods a command operates on.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub models: Vec<Augmentation>,
    pub methods: Vec<Method>,
}

impl Selection {
    pub fn all(cfg: &ExperimentConfig) -> Self {
        Self {
            models: cfg.regimes.clone(),
            methods: cfg.methods.clone(),
        }
    }

    /// Narrows the configured sets; names outside them are configuration errors.
    pub fn narrowed(cfg: &ExperimentConfig, models: Option<&[Augmentation]>, methods: Option<&[Method]>) -> Result<Self> {
        let mut s = Self::all(cfg);
        if let Some(m) = models {
            if let Some(bad) = m.iter().find(|a| !cfg.regimes.contains(a)) {
                return Err(Error::Config(format!("model '{bad}' is not among the configured regimes")));
            }
            s.models = m.to_vec();
        }
        if let Some(m) = methods {
            if let Some(bad) = m.iter().find(|a| !cfg.methods.contains(a)) {
                return Err(Error::Config(format!("method '{bad}' is not among the configured methods")));
            }
            s.methods = m.to_vec();
        }
        Ok(s)
    }
}

/// A configured run bound to its directory.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: ExperimentConfig,
    pub paths: RunPaths,
    pub run_id: String,
    pub config_hash: String,
}

impl Run {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let paths = RunPaths::new(config.run_dir());
        Ok(Self {
            run_id: config.run_id(),
            config_hash: config.hash(),
            config,
            paths,
        })
    }

    fn record(&self, model: &str, method: Option<Method>, metric: &str, value: f64, se: Option<f64>) -> ResultRecord {
        ResultRecord::new(&self.run_id, &self.config_hash, model, method.map(Method::name), metric, value, se)
    }

    fn persist_config(&self) -> Result<()> {
        fs::create_dir_all(&self.paths.dir)?;
        fs::write(self.paths.config(), self.config.to_toml())?;
        Ok(())
    }

    pub fn train_set(&self) -> Result<LabeledSet> {
        generate(&self.config.dataset(), self.config.train_count, self.config.data_seed, "train")
    }

    pub fn test_set(&self) -> Result<LabeledSet> {
        generate(&self.config.dataset(), self.config.test_count, self.config.data_seed, "test")
    }

    pub fn eval_pool(&self) -> Result<LabeledSet> {
        generate(&self.config.dataset(), self.config.eval_pool, self.config.data_seed, "eval")
    }

    pub fn load_checkpoint(&self, model: Augmentation) -> Result<ModelCheckpoint> {
        let path = self.paths.checkpoint(model);
        let ck = ModelCheckpoint::load(&path).map_err(|e| match e {
            Error::MissingArtifact { path, .. } => Error::MissingArtifact {
                path,
                hint: format!("no checkpoint for '{model}'; run `mixinterp train` with this configuration first"),
            },
            other => other,
        })?;
        if ck.meta.augmentation != model || ck.arch() != &self.config.arch() {
            return Err(Error::format(&path, "checkpoint does not match this configuration"));
        }
        Ok(ck)
    }

    /// Trains one checkpoint per selected regime from the same initial
    /// parameters and data order seed.
    pub fn train(&self, sel: &Selection) -> Result<Vec<ModelCheckpoint>> {
        self.persist_config()?;
        let data = self.train_set()?;
        let test = self.test_set()?;
        let arch = self.config.arch();
        let hyper = self.config.hyper();
        let aug = self.config.augment();
        let init_seed = child_seed(self.config.seed, "init", 0);
        let train_seed = child_seed(self.config.seed, "train", 0);
        let mut out = Vec::new();
        for &regime in &sel.models {
            let model = build_model(&arch, init_seed)?;
            let mut log_rows = Vec::new();
            let ck = train(model, &data, Some(&test), regime, &aug, &hyper, train_seed, &mut |r| {
                log_rows.push(r.clone());
                Ok(())
            })
            .map_err(|e| match e {
                Error::TrainingFailure { epoch, detail } => Error::TrainingFailure {
                    epoch,
                    detail: format!("regime {regime}: {detail}"),
                },
                other => other,
            })?;
            records::append(&self.paths.train_log(), &log_rows)?;
            ck.save(&self.paths.checkpoint(regime))?;
            records::append(
                &self.paths.results(),
                &[
                    self.record(regime.name(), None, METRIC_TOP1, ck.meta.final_top1, None),
                    self.record(regime.name(), None, METRIC_FINAL_LOSS, ck.meta.final_loss, None),
                ],
            )?;
            out.push(ck);
        }
        Ok(out)
    }

    /// Picks the evaluation samples against every configured model and stores
    /// them with their images.
    pub fn select_samples(&self) -> Result<Vec<EvalSample>> {
        let models: Vec<ModelCheckpoint> = self
            .config
            .regimes
            .iter()
            .map(|&m| self.load_checkpoint(m))
            .collect::<Result<_>>()?;
        let refs: Vec<&ModelCheckpoint> = models.iter().collect();
        let pool = self.eval_pool()?;
        let mut rng = child(self.config.seed, "select", 0);
        let samples = select_eval_samples(&refs, &pool, self.config.eval_samples, &self.config.filter(), &mut rng)?;
        let stored: Vec<StoredSample> = samples.iter().map(StoredSample::from).collect();
        fs::create_dir_all(self.paths.samples().parent().expect("samples dir"))?;
        fs::write(self.paths.samples(), serde_json::to_string_pretty(&stored)?)?;
        for s in &samples {
            save_image(&self.paths.sample_image(s.index), &s.image)?;
        }
        Ok(samples)
    }

    pub fn load_samples(&self) -> Result<Vec<EvalSample>> {
        let path = self.paths.samples();
        let text = fs::read_to_string(&path).map_err(|_| Error::MissingArtifact {
            path: path.clone(),
            hint: "run `mixinterp attribute` first".into(),
        })?;
        let stored: Vec<StoredSample> = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        stored
            .into_iter()
            .map(|s| {
                Ok(EvalSample {
                    image: load_image(&self.paths.sample_image(s.index))?,
                    index: s.index,
                    class: s.class,
                    boxes: s.boxes,
                    box_fraction: s.box_fraction,
                    scores: s.scores,
                })
            })
            .collect()
    }

    /// Selects samples, then writes one map per (method, model, sample).
    pub fn attribute(&self, sel: &Selection) -> Result<usize> {
        self.persist_config()?;
        let samples = self.select_samples()?;
        let images: Vec<Image> = samples.iter().map(|s| s.image.clone()).collect();
        let classes: Vec<usize> = samples.iter().map(|s| s.class).collect();
        let calibration = {
            let train = self.train_set()?;
            train.images[..self.config.iba_calibration].to_vec()
        };
        let mut written = 0;
        for &model in &sel.models {
            let ck = self.load_checkpoint(model)?;
            let net = &ck.network;
            for &method in &sel.methods {
                let maps = match method {
                    Method::Gradcam => gradcam_batch(net, &images, &classes)?,
                    Method::Iba => {
                        let layer = net.penultimate_stage_layer();
                        let stats = iba_fit_statistics(net, layer, &calibration, self.config.iba_calibration)?;
                        let params = self.config.iba();
                        let stream = format!("iba/{model}");
                        samples
                            .par_iter()
                            .map(|s| {
                                let mut rng = child(self.config.seed, &stream, s.index as u64);
                                iba(net, &s.image, s.class, &params, &stats, &mut rng)
                            })
                            .collect::<Result<Vec<_>>>()?
                    }
                };
                for (s, m) in samples.iter().zip(&maps) {
                    save_map(&self.paths.map(method, model, s.index), m)?;
                }
                written += maps.len();
            }
        }
        Ok(written)
    }

    pub fn load_maps(&self, method: Method, model: Augmentation, samples: &[EvalSample]) -> Result<Vec<AttributionMap>> {
        samples
            .iter()
            .map(|s| {
                let map = load_map(&self.paths.map(method, model, s.index))?;
                if map.method != method {
                    return Err(Error::format(self.paths.map(method, model, s.index), "map method mismatch"));
                }
                Ok(map)
            })
            .collect()
    }

    /// EnergyPG, EHR and WSOL IoU per (model, method), averaged over samples.
    pub fn eval_alignment(&self, sel: &Selection) -> Result<Vec<ResultRecord>> {
        let samples = self.load_samples()?;
        let grid = self.config.threshold_grid()?;
        let boxes: Vec<BoxSet> = samples
            .iter()
            .map(|s| BoxSet::new(s.boxes.clone(), s.image.width(), s.image.height()))
            .collect::<Result<_>>()?;
        let mut out = Vec::new();
        let mut rows = Vec::new();
        for &model in &sel.models {
            for &method in &sel.methods {
                let maps = self.load_maps(method, model, &samples)?;
                let (mut epg, mut eh, mut wi) = (Vec::new(), Vec::new(), Vec::new());
                for ((s, map), b) in samples.iter().zip(&maps).zip(&boxes) {
                    let e = energy_pg(map, b)?;
                    let h = ehr(map, b, &grid, self.config.ehr_numerator)?;
                    let w = wsol_iou(map, b, self.config.wsol_threshold)?;
                    rows.push(AlignmentRow {
                        run_id: self.run_id.clone(),
                        model_id: model.name().into(),
                        method: method.name().into(),
                        sample: s.index,
                        energy_pg: e,
                        ehr: h.score,
                        ehr_raw_auc: h.raw_auc,
                        wsol_iou: w.iou,
                    });
                    epg.push(e);
                    eh.push(h.score);
                    wi.push(w.iou);
                }
                for (metric, v) in [(METRIC_ENERGY_PG, &epg), (METRIC_EHR, &eh), (METRIC_WSOL_IOU, &wi)] {
                    let (m, se) = records::mean_se(v);
                    out.push(self.record(model.name(), Some(method), metric, m, Some(se)));
                }
            }
        }
        records::append(&self.paths.alignment_rows(), &rows)?;
        records::append(&self.paths.results(), &out)?;
        Ok(out)
    }

    pub fn fill_policy(&self) -> Result<ReplacementPolicy> {
        Ok(match self.config.fill {
            FillKind::DatasetMean => ReplacementPolicy::DatasetMean(self.train_set()?.channel_means()),
            FillKind::ImageMean => ReplacementPolicy::ImageMean,
        })
    }

    /// Inter-model deletion and insertion per (model, method).
    pub fn eval_faithfulness(&self, sel: &Selection) -> Result<Vec<ResultRecord>> {
        let samples = self.load_samples()?;
        let images: Vec<Image> = samples.iter().map(|s| s.image.clone()).collect();
        let fill = self.fill_policy()?;
        let settings = self.config.faithfulness();
        let mut out = Vec::new();
        let mut curves = Vec::new();
        for &model in &sel.models {
            let ck = self.load_checkpoint(model)?;
            for &method in &sel.methods {
                let maps = self.load_maps(method, model, &samples)?;
                let res = evaluate_faithfulness(model.name(), &ck, &images, &maps, &fill, &settings)?;
                for score in [&res.deletion, &res.insertion] {
                    out.push(self.record(model.name(), Some(method), score.mode.metric(), score.auc, Some(score.se)));
                    curves.extend(self.curve_records(model, method, score));
                }
            }
        }
        records::append(&self.paths.curves(), &curves)?;
        records::append(&self.paths.results(), &out)?;
        Ok(out)
    }

    fn curve_records(&self, model: Augmentation, method: Method, score: &InterModelScore) -> Vec<CurveRecord> {
        let row = |name: &str, c: &crate::faithfulness::ScoreCurve| CurveRecord {
            run_id: self.run_id.clone(),
            config_hash: self.config_hash.clone(),
            model_id: model.name().into(),
            method: method.name().into(),
            mode: score.mode.name().into(),
            curve: name.into(),
            x: c.x.clone(),
            mean: c.y.clone(),
            se: c.se.clone().unwrap_or_default(),
        };
        vec![
            row(score.mode.ordering().name(), &score.attribution_curve),
            row("rao", &score.rao_curve),
            row("difference", &score.difference),
        ]
    }

    /// The concept corpus of this run, generated and stored on first use.
    pub fn corpus(&self) -> Result<ConceptCorpus> {
        let dir = self.paths.corpus();
        if dir.join("corpus.json").exists() {
            return ConceptCorpus::load(&dir);
        }
        let c = generate_concept_corpus(&self.config.corpus(), self.config.data_seed)?;
        c.save(&dir)?;
        Ok(c)
    }

    /// Dissects the final convolutional layer of every selected model.
    pub fn dissect(&self, sel: &Selection) -> Result<Vec<ResultRecord>> {
        let corpus = self.corpus()?;
        let settings = self.config.dissect();
        let mut out = Vec::new();
        let mut rows = Vec::new();
        for &model in &sel.models {
            let ck = self.load_checkpoint(model)?;
            let layer = ck.network.last_conv_layer();
            let d = dissect(&ck.network, layer, &corpus, &settings)?;
            for r in &d.records {
                rows.push(DetectorRow {
                    run_id: self.run_id.clone(),
                    config_hash: self.config_hash.clone(),
                    model_id: model.name().into(),
                    unit: r.unit,
                    concept: r.concept,
                    name: r.name.clone(),
                    category: r.category.name().into(),
                    iou: r.iou,
                });
            }
            for (cat, n) in count_unique_concepts(&d.records) {
                out.push(self.record(model.name(), None, &concept_metric(cat.name()), n as f64, None));
            }
            out.push(self.record(model.name(), None, METRIC_DETECTORS, d.records.len() as f64, None));
            out.push(self.record(model.name(), None, METRIC_DETECTOR_RATE, d.detector_rate(), None));
        }
        records::append(&self.paths.detectors(), &rows)?;
        records::append(&self.paths.results(), &out)?;
        Ok(out)
    }

    pub fn results(&self) -> Result<Vec<ResultRecord>> {
        records::read_all(&self.paths.results())
    }
}

/// Evaluation criteria selectable for a combined run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Alignment,
    Faithfulness,
    Dissection,
}

/// Runs the requested criteria on existing checkpoints (and maps, for the
/// first two).
pub fn evaluate(run: &Run, sel: &Selection, criteria: &[Criterion]) -> Result<Vec<ResultRecord>> {
    let mut out = Vec::new();
    for c in criteria {
        out.extend(match c {
            Criterion::Alignment => run.eval_alignment(sel)?,
            Criterion::Faithfulness => run.eval_faithfulness(sel)?,
            Criterion::Dissection => run.dissect(sel)?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoredSample {
    index: usize,
    class: usize,
    boxes: Vec<Rect>,
    box_fraction: f64,
    scores: Vec<f32>,
}

impl From<&EvalSample> for StoredSample {
    fn from(s: &EvalSample) -> Self {
        Self {
            index: s.index,
            class: s.class,
            boxes: s.boxes.clone(),
            box_fraction: s.box_fraction,
            scores: s.scores.clone(),
        }
    }
}

/// Run directory for an explicit run id under `out_dir`.
pub fn run_dir(out_dir: &Path, run_id: &str) -> PathBuf {
    out_dir.join(run_id)
}
