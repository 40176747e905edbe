//! Flat experiment configuration. Every key has a default; unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alignment::{EhrNumerator, ThresholdGrid};
use crate::attribution::{IbaParams, Method};
use crate::augment::{AugmentParams, Augmentation};
use crate::dataset::DatasetConfig;
use crate::dissection::{CorpusConfig, DetectionMode, DissectSettings, QuantileSpace};
use crate::error::{Error, Result};
use crate::faithfulness::{CellSpec, FaithfulnessSettings, FillKind};
use crate::harness::{Hyperparams, SampleFilter};
use crate::nn::ArchConfig;
use crate::rng::child_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Root for run directories. Not part of the hash.
    pub out_dir: PathBuf,
    /// Seeds model initialization, training order, sample selection and
    /// stochastic metrics.
    pub seed: u64,
    /// Seeds the synthetic datasets and the concept corpus.
    pub data_seed: u64,

    pub image_size: usize,
    pub num_classes: usize,
    pub object_min_side: f64,
    pub object_max_side: f64,
    pub second_instance_prob: f64,
    pub train_count: usize,
    pub test_count: usize,
    /// Candidate images for evaluation-sample selection.
    pub eval_pool: usize,

    pub stem_width: usize,
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: usize,
    pub batch_norm: bool,

    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_milestones: Vec<f64>,
    pub lr_decay: f64,
    pub flip: bool,
    pub shift: usize,

    pub regimes: Vec<Augmentation>,
    pub cutout_side: usize,
    pub mixup_alpha: f64,
    pub cutmix_alpha: f64,
    pub saliencymix_alpha: f64,
    pub augment_prob: f64,

    pub methods: Vec<Method>,
    pub iba_beta: f64,
    pub iba_steps: usize,
    pub iba_lr: f64,
    pub iba_samples: usize,
    pub iba_init_logit: f64,
    pub iba_calibration: usize,

    pub eval_samples: usize,
    pub min_score: f32,
    pub min_box_fraction: f64,
    pub max_box_fraction: f64,

    pub ehr_thresholds: usize,
    pub ehr_max_threshold: f32,
    pub ehr_numerator: EhrNumerator,
    pub wsol_threshold: f32,

    /// Cell side in pixels; ignored when `cell_partition` is set.
    pub cell_size: usize,
    /// Cells per side, as an alternative to a pixel size.
    pub cell_partition: Option<usize>,
    pub n_orders: usize,
    pub fill: FillKind,
    pub step_stride: usize,

    pub corpus_count: usize,
    pub corpus_min_objects: usize,
    pub corpus_max_objects: usize,
    pub corpus_min_side: f64,
    pub corpus_max_side: f64,
    pub iou_threshold: f64,
    pub detection_mode: DetectionMode,
    pub quantile_space: QuantileSpace,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let data = DatasetConfig::default();
        let arch = ArchConfig::resnet8(data.num_classes);
        let hyper = Hyperparams::default();
        let aug = AugmentParams::for_image_size(data.image_size);
        let iba = IbaParams::default();
        let filter = SampleFilter::default();
        let corpus = CorpusConfig::default();
        let dissect = DissectSettings::default();
        Self {
            out_dir: PathBuf::from("runs"),
            seed: 0,
            data_seed: 0,
            image_size: data.image_size,
            num_classes: data.num_classes,
            object_min_side: data.min_side_frac,
            object_max_side: data.max_side_frac,
            second_instance_prob: data.second_instance_prob,
            train_count: 2000,
            test_count: 500,
            eval_pool: 1000,
            stem_width: arch.stem_width,
            stage_widths: arch.stage_widths,
            blocks_per_stage: arch.blocks_per_stage,
            batch_norm: arch.batch_norm,
            epochs: hyper.epochs,
            batch_size: hyper.batch_size,
            lr: hyper.lr,
            momentum: hyper.momentum,
            weight_decay: hyper.weight_decay,
            lr_milestones: hyper.lr_milestones,
            lr_decay: hyper.lr_decay,
            flip: hyper.flip,
            shift: hyper.shift,
            regimes: Augmentation::ALL.to_vec(),
            cutout_side: aug.cutout_side,
            mixup_alpha: aug.mixup_alpha,
            cutmix_alpha: aug.cutmix_alpha,
            saliencymix_alpha: aug.saliencymix_alpha,
            augment_prob: aug.prob,
            methods: vec![Method::Gradcam, Method::Iba],
            iba_beta: iba.beta,
            iba_steps: iba.steps,
            iba_lr: iba.lr,
            iba_samples: iba.samples,
            iba_init_logit: iba.init_logit,
            iba_calibration: crate::attribution::DEFAULT_MIN_CALIBRATION,
            eval_samples: 200,
            min_score: filter.min_score,
            min_box_fraction: filter.min_box_fraction,
            max_box_fraction: filter.max_box_fraction,
            ehr_thresholds: 100,
            ehr_max_threshold: 0.99,
            ehr_numerator: EhrNumerator::default(),
            wsol_threshold: crate::alignment::WSOL_THRESHOLD,
            cell_size: 4,
            cell_partition: None,
            n_orders: 5,
            fill: FillKind::default(),
            step_stride: 1,
            corpus_count: corpus.count,
            corpus_min_objects: corpus.min_objects,
            corpus_max_objects: corpus.max_objects,
            corpus_min_side: corpus.min_side_frac,
            corpus_max_side: corpus.max_side_frac,
            iou_threshold: dissect.iou_threshold,
            detection_mode: dissect.mode,
            quantile_space: dissect.quantile_space,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact {
                path: path.to_path_buf(),
                hint: "configuration file not found".into(),
            },
            _ => e.into(),
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every value against the owning module's contract. Failures are
    /// reported as configuration errors.
    pub fn validate(&self) -> Result<()> {
        let wrap = |r: Result<()>| {
            r.map_err(|e| match e {
                Error::InvalidArgument(m) => Error::Config(m),
                other => other,
            })
        };
        wrap(self.dataset().validate())?;
        wrap(self.arch().validate())?;
        wrap(self.hyper().validate())?;
        wrap(self.iba().validate())?;
        wrap(self.corpus().validate())?;
        wrap(self.threshold_grid().map(|_| ()))?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.train_count == 0 || self.test_count == 0 || self.eval_pool == 0 {
            return bad("train_count, test_count and eval_pool must be positive");
        }
        if self.regimes.is_empty() {
            return bad("regimes must name at least one augmentation");
        }
        let mut names: Vec<&str> = self.regimes.iter().map(|r| r.name()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.regimes.len() {
            return bad("regimes must not repeat");
        }
        if self.methods.is_empty() {
            return bad("methods must name at least one attribution method");
        }
        if !(self.mixup_alpha > 0.0 && self.cutmix_alpha > 0.0 && self.saliencymix_alpha > 0.0) {
            return bad("beta parameters must be positive");
        }
        if self.cutout_side == 0 {
            return bad("cutout_side must be positive");
        }
        if !(0.0..=1.0).contains(&self.augment_prob) {
            return bad("augment_prob must lie in [0, 1]");
        }
        if self.eval_samples == 0 || self.eval_samples > self.eval_pool {
            return bad("eval_samples must be in 1..=eval_pool");
        }
        if !(0.0..=1.0).contains(&self.min_score) || self.min_box_fraction >= self.max_box_fraction {
            return bad("sample filter needs min_score in [0, 1] and min_box_fraction < max_box_fraction");
        }
        if !(0.0..=1.0).contains(&self.wsol_threshold) {
            return bad("wsol_threshold must lie in [0, 1]");
        }
        if self.cell_size == 0 || self.cell_partition == Some(0) || self.n_orders == 0 || self.step_stride == 0 {
            return bad("cell_size, cell_partition, n_orders and step_stride must be positive");
        }
        if !(self.iou_threshold >= 0.0) {
            return bad("iou_threshold must be non-negative");
        }
        if self.iba_calibration == 0 || self.iba_calibration > self.train_count {
            return bad("iba_calibration must be in 1..=train_count");
        }
        Ok(())
    }

    /// SHA-256 over every setting except the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        hex::encode(Sha256::digest(serde_json::to_vec(&c).expect("config serializes")))
    }

    pub fn run_id(&self) -> String {
        format!("run-{}", &self.hash()[..12])
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(self.run_id())
    }

    pub fn dataset(&self) -> DatasetConfig {
        DatasetConfig {
            image_size: self.image_size,
            num_classes: self.num_classes,
            min_side_frac: self.object_min_side,
            max_side_frac: self.object_max_side,
            second_instance_prob: self.second_instance_prob,
        }
    }

    pub fn arch(&self) -> ArchConfig {
        ArchConfig {
            in_channels: 3,
            image_size: self.image_size,
            stem_width: self.stem_width,
            stage_widths: self.stage_widths.clone(),
            blocks_per_stage: self.blocks_per_stage,
            num_classes: self.num_classes,
            batch_norm: self.batch_norm,
        }
    }

    pub fn hyper(&self) -> Hyperparams {
        Hyperparams {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            lr_milestones: self.lr_milestones.clone(),
            lr_decay: self.lr_decay,
            flip: self.flip,
            shift: self.shift,
        }
    }

    pub fn augment(&self) -> AugmentParams {
        AugmentParams {
            cutout_side: self.cutout_side,
            mixup_alpha: self.mixup_alpha,
            cutmix_alpha: self.cutmix_alpha,
            saliencymix_alpha: self.saliencymix_alpha,
            prob: self.augment_prob,
        }
    }

    pub fn iba(&self) -> IbaParams {
        IbaParams {
            beta: self.iba_beta,
            steps: self.iba_steps,
            lr: self.iba_lr,
            samples: self.iba_samples,
            init_logit: self.iba_init_logit,
        }
    }

    pub fn filter(&self) -> SampleFilter {
        SampleFilter {
            min_score: self.min_score,
            min_box_fraction: self.min_box_fraction,
            max_box_fraction: self.max_box_fraction,
        }
    }

    pub fn threshold_grid(&self) -> Result<ThresholdGrid> {
        ThresholdGrid::linspace(0.0, self.ehr_max_threshold, self.ehr_thresholds)
    }

    pub fn cell(&self) -> CellSpec {
        match self.cell_partition {
            Some(n) => CellSpec::Partition(n),
            None => CellSpec::Pixels(self.cell_size),
        }
    }

    pub fn faithfulness(&self) -> FaithfulnessSettings {
        FaithfulnessSettings {
            cell: self.cell(),
            n_orders: self.n_orders,
            fill: self.fill,
            stride: self.step_stride,
            seed: child_seed(self.seed, "faithfulness", 0),
        }
    }

    pub fn corpus(&self) -> CorpusConfig {
        CorpusConfig {
            image_size: self.image_size,
            count: self.corpus_count,
            min_objects: self.corpus_min_objects,
            max_objects: self.corpus_max_objects,
            min_side_frac: self.corpus_min_side,
            max_side_frac: self.corpus_max_side,
        }
    }

    pub fn dissect(&self) -> DissectSettings {
        DissectSettings {
            iou_threshold: self.iou_threshold,
            mode: self.detection_mode,
            quantile_space: self.quantile_space,
        }
    }
}
