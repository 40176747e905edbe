//! Network dissection: threshold each unit at its top-1% activation level,
//! upsample, and score the resulting masks against concept masks by
//! corpus-wide IoU.

mod corpus;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use corpus::{
    color_concept, concept_table, generate_concept_corpus, generate_concept_image, material_concept, object_concept,
    part_concept, Category, Concept, ConceptCorpus, ConceptMask, CorpusConfig,
};

use crate::error::{Error, Result};
use crate::image::resize_bilinear;
use crate::nn::{Mode, Network, Tensor};

/// Share of activations above a unit's threshold.
pub const TOP_QUANTILE: f64 = 0.01;
/// Units whose share above threshold falls below this (because of ties at the
/// threshold) are flagged degenerate.
pub const DEGENERATE_FRACTION: f64 = 0.005;
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.04;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitProfile {
    pub unit: usize,
    /// `T_k`, the empirical top-quantile of the unit's activations.
    pub threshold: f32,
    pub samples: usize,
    /// Measured share of activations strictly above the threshold.
    pub exceed_fraction: f64,
    pub degenerate: bool,
}

/// Value at sorted position `n − ⌊q·n⌋ − 1`, so that a share `q` of the values
/// lies at or above the next position.
pub fn top_quantile(values: &mut [f32], q: f64) -> f32 {
    assert!(!values.is_empty());
    let n = values.len();
    let k = n - (q * n as f64).floor() as usize - 1;
    *values.select_nth_unstable_by(k, f32::total_cmp).1
}

const CHUNK: usize = 64;

fn check(net: &Network<f32>, layer: usize, corpus: &ConceptCorpus) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::invalid("concept corpus is empty"));
    }
    if layer >= net.num_layers() {
        return Err(Error::invalid(format!("layer {layer} out of range")));
    }
    if corpus.image_size != net.arch().image_size {
        return Err(Error::invalid("corpus image size does not match the model input"));
    }
    Ok(())
}

fn for_each_feature_batch(
    net: &Network<f32>,
    layer: usize,
    corpus: &ConceptCorpus,
    mut f: impl FnMut(usize, &Tensor<f32>),
) {
    for (b, chunk) in corpus.images.chunks(CHUNK).enumerate() {
        let feats = net.features(Tensor::from_images(chunk), layer, Mode::Eval);
        f(b * CHUNK, &feats);
    }
}

/// Where the activation distribution behind `T_k` is sampled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantileSpace {
    /// Bilinearly upsampled activations, the same values that are thresholded
    /// into unit masks.
    #[default]
    Input,
    /// Raw activations at the layer's own resolution.
    Feature,
}

/// Exact per-unit thresholds from all activations of `layer` over the corpus.
pub fn collect_profiles(
    net: &Network<f32>,
    layer: usize,
    corpus: &ConceptCorpus,
    space: QuantileSpace,
) -> Result<Vec<UnitProfile>> {
    check(net, layer, corpus)?;
    let units = net.layer_channels(layer);
    let size = corpus.image_size;
    let mut acts: Vec<Vec<f32>> = vec![Vec::new(); units];
    for_each_feature_batch(net, layer, corpus, |_, f| {
        let plane = f.plane();
        for i in 0..f.n {
            let s = f.sample(i);
            for (u, a) in acts.iter_mut().enumerate() {
                let raw = &s[u * plane..(u + 1) * plane];
                match space {
                    QuantileSpace::Feature => a.extend_from_slice(raw),
                    QuantileSpace::Input => a.extend(resize_bilinear(raw, f.h, f.w, size, size)),
                }
            }
        }
    });
    Ok(acts
        .into_iter()
        .enumerate()
        .map(|(unit, mut a)| {
            let n = a.len();
            let t = top_quantile(&mut a, TOP_QUANTILE);
            let above = a.iter().filter(|&&v| v > t).count() as f64 / n as f64;
            UnitProfile {
                unit,
                threshold: t,
                samples: n,
                exceed_fraction: above,
                degenerate: above < DEGENERATE_FRACTION,
            }
        })
        .collect())
}

/// Corpus-wide intersection counts between unit masks and concept masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouTable {
    pub units: Vec<usize>,
    /// `intersection[i][c]` for unit `units[i]`.
    pub intersection: Vec<Vec<u64>>,
    pub unit_area: Vec<u64>,
    pub concept_area: Vec<u64>,
    /// Pixels in the whole corpus.
    pub total_pixels: u64,
}

impl IouTable {
    pub fn iou(&self, row: usize, concept: usize) -> f64 {
        let inter = self.intersection[row][concept];
        let union = self.unit_area[row] + self.concept_area[concept] - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Share of corpus pixels in the unit's thresholded mask.
    pub fn coverage(&self, row: usize) -> f64 {
        self.unit_area[row] as f64 / self.total_pixels as f64
    }
}

/// Thresholded, upsampled mask of one unit on one image.
pub fn unit_mask(activation: &[f32], h: usize, w: usize, size: usize, threshold: f32) -> Vec<bool> {
    resize_bilinear(activation, h, w, size, size)
        .into_iter()
        .map(|v| v > threshold)
        .collect()
}

/// IoU counts for the given units (all units when `units` is `None`).
pub fn iou_table(
    net: &Network<f32>,
    layer: usize,
    corpus: &ConceptCorpus,
    profiles: &[UnitProfile],
    units: Option<&[usize]>,
) -> Result<IouTable> {
    check(net, layer, corpus)?;
    let all: Vec<usize> = (0..net.layer_channels(layer)).collect();
    let units = units.unwrap_or(&all).to_vec();
    let thresholds: Vec<f32> = units
        .iter()
        .map(|&u| {
            profiles
                .iter()
                .find(|p| p.unit == u)
                .map(|p| p.threshold)
                .ok_or_else(|| Error::invalid(format!("no profile for unit {u}")))
        })
        .collect::<Result<_>>()?;
    let concepts = corpus.concepts.len();
    let size = corpus.image_size;
    let mut table = IouTable {
        intersection: vec![vec![0; concepts]; units.len()],
        unit_area: vec![0; units.len()],
        concept_area: corpus.concept_areas(),
        total_pixels: (corpus.len() * size * size) as u64,
        units: units.clone(),
    };
    for_each_feature_batch(net, layer, corpus, |start, f| {
        let plane = f.plane();
        for i in 0..f.n {
            let s = f.sample(i);
            let masks = &corpus.masks[start + i];
            for (row, (&u, &t)) in units.iter().zip(&thresholds).enumerate() {
                let m = unit_mask(&s[u * plane..(u + 1) * plane], f.h, f.w, size, t);
                table.unit_area[row] += m.iter().filter(|&&b| b).count() as u64;
                for cm in masks {
                    let inter = m.iter().zip(&cm.mask).filter(|(&a, &b)| a && b).count() as u64;
                    table.intersection[row][cm.concept] += inter;
                }
            }
        }
    });
    Ok(table)
}

/// Corpus-wide IoU of one unit with one concept.
pub fn unit_concept_iou(
    net: &Network<f32>,
    layer: usize,
    profile: &UnitProfile,
    corpus: &ConceptCorpus,
    concept: usize,
) -> Result<f64> {
    if concept >= corpus.concepts.len() {
        return Err(Error::invalid(format!("unknown concept {concept}")));
    }
    let t = iou_table(net, layer, corpus, std::slice::from_ref(profile), Some(&[profile.unit]))?;
    Ok(t.iou(0, concept))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionMode {
    /// At most one record per unit: its best concept.
    #[default]
    Best,
    /// Every concept above the threshold.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorRecord {
    pub unit: usize,
    pub concept: usize,
    pub name: String,
    pub category: Category,
    pub iou: f64,
}

/// Units whose IoU exceeds `threshold`. In best mode ties go to the smaller
/// concept id.
pub fn find_detectors(table: &IouTable, concepts: &[Concept], threshold: f64, mode: DetectionMode) -> Vec<DetectorRecord> {
    let mut out = Vec::new();
    for (row, &unit) in table.units.iter().enumerate() {
        let record = |c: usize| DetectorRecord {
            unit,
            concept: c,
            name: concepts[c].name.clone(),
            category: concepts[c].category,
            iou: table.iou(row, c),
        };
        match mode {
            DetectionMode::Best => {
                let best = (0..concepts.len()).fold(None::<(usize, f64)>, |acc, c| {
                    let v = table.iou(row, c);
                    match acc {
                        Some((_, b)) if b >= v => acc,
                        _ => Some((c, v)),
                    }
                });
                if let Some((c, v)) = best {
                    if v > threshold {
                        out.push(record(c));
                    }
                }
            }
            DetectionMode::All => out.extend((0..concepts.len()).filter(|&c| table.iou(row, c) > threshold).map(record)),
        }
    }
    out
}

/// Distinct detected concepts per category; every category is present.
pub fn count_unique_concepts(records: &[DetectorRecord]) -> BTreeMap<Category, usize> {
    let mut out: BTreeMap<Category, usize> = Category::ALL.iter().map(|&c| (c, 0)).collect();
    let mut seen = std::collections::BTreeSet::new();
    for r in records {
        if seen.insert(r.concept) {
            *out.get_mut(&r.category).expect("all categories") += 1;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dissection {
    pub layer: usize,
    pub profiles: Vec<UnitProfile>,
    pub table: IouTable,
    pub records: Vec<DetectorRecord>,
}

impl Dissection {
    pub fn detector_rate(&self) -> f64 {
        let units: std::collections::BTreeSet<usize> = self.records.iter().map(|r| r.unit).collect();
        units.len() as f64 / self.profiles.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DissectSettings {
    pub iou_threshold: f64,
    pub mode: DetectionMode,
    pub quantile_space: QuantileSpace,
}

impl Default for DissectSettings {
    fn default() -> Self {
        Self {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            mode: DetectionMode::Best,
            quantile_space: QuantileSpace::Input,
        }
    }
}

pub fn dissect(net: &Network<f32>, layer: usize, corpus: &ConceptCorpus, settings: &DissectSettings) -> Result<Dissection> {
    let profiles = collect_profiles(net, layer, corpus, settings.quantile_space)?;
    let table = iou_table(net, layer, corpus, &profiles, None)?;
    let records = find_detectors(&table, &corpus.concepts, settings.iou_threshold, settings.mode);
    Ok(Dissection {
        layer,
        profiles,
        table,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use crate::nn::ArchConfig;
    use crate::rng::seeded;
    use crate::scene::Color;
    use rand::Rng;

    #[test]
    fn quantile_of_uniform() {
        let mut rng = seeded(0);
        let mut v: Vec<f32> = (0..100_000).map(|_| rng.random_range(0.0..1.0)).collect();
        let t = top_quantile(&mut v, TOP_QUANTILE);
        assert!((t - 0.99).abs() < 0.005, "{t}");
        let mut c = vec![0.3f32; 500];
        assert_eq!(top_quantile(&mut c, TOP_QUANTILE), 0.3);
    }

    fn small_corpus(count: usize, seed: u64) -> ConceptCorpus {
        generate_concept_corpus(
            &CorpusConfig {
                count,
                ..Default::default()
            },
            seed,
        )
        .unwrap()
    }

    /// Stem-only stride-1 network; unit 0 computes ReLU(R − G − B), which is
    /// positive only on pure red because backgrounds are gray.
    fn planted(seed: u64) -> Network<f32> {
        let arch = ArchConfig {
            in_channels: 3,
            image_size: 32,
            stem_width: 6,
            stage_widths: vec![],
            blocks_per_stage: 0,
            num_classes: 2,
            batch_norm: false,
        };
        let mut net = Network::<f32>::init(&arch, &mut seeded(seed)).unwrap();
        let (w, bias) = net.conv_params_mut(0, 0);
        w[..27].fill(0.0);
        for (c, s) in [1.0, -1.0, -1.0].into_iter().enumerate() {
            w[c * 9 + 4] = s;
        }
        let bias = bias.unwrap();
        net.params[bias.start] = 0.0;
        net
    }

    #[test]
    fn planted_red_unit_is_a_color_detector() {
        let corpus = small_corpus(150, 3);
        let net = planted(1);
        let d = dissect(&net, 0, &corpus, &DissectSettings::default()).unwrap();
        let rec = d.records.iter().find(|r| r.unit == 0).expect("unit 0 detected");
        assert_eq!(rec.category, Category::Color);
        assert_eq!(rec.concept, color_concept(Color::Red));
        assert!(rec.iou >= 0.9, "{}", rec.iou);
        assert!(!d.profiles[0].degenerate);
        assert_eq!(d, dissect(&net, 0, &corpus, &DissectSettings::default()).unwrap());
    }

    #[test]
    fn input_space_masks_cover_one_percent() {
        let corpus = small_corpus(60, 5);
        let net = crate::harness::build_model(&ArchConfig::resnet8(6), 2).unwrap();
        let layer = net.last_conv_layer();
        let d = dissect(&net, layer, &corpus, &DissectSettings::default()).unwrap();
        let mut checked = 0;
        for (row, p) in d.profiles.iter().enumerate() {
            if !p.degenerate {
                let cov = d.table.coverage(row);
                assert!((cov - TOP_QUANTILE).abs() <= 0.005, "unit {} coverage {cov}", p.unit);
                assert_eq!(p.samples, 60 * 32 * 32);
                checked += 1;
            }
        }
        assert!(checked > 32);
    }

    #[test]
    fn hand_built_iou_cases() {
        // One 4×4 image with one concept covering the left half (8 px).
        let mut mask = vec![false; 16];
        for y in 0..4 {
            mask[y * 4] = true;
            mask[y * 4 + 1] = true;
        }
        let corpus = ConceptCorpus {
            image_size: 4,
            concepts: concept_table(),
            images: vec![Image::filled(3, 4, 4, 0.5)],
            masks: vec![vec![ConceptMask { concept: 0, mask }]],
        };
        let table = |unit_mask: Vec<bool>| {
            let mut t = IouTable {
                units: vec![0],
                intersection: vec![vec![0; 28]],
                unit_area: vec![unit_mask.iter().filter(|&&b| b).count() as u64],
                concept_area: corpus.concept_areas(),
                total_pixels: 16,
            };
            t.intersection[0][0] = unit_mask.iter().zip(&corpus.masks[0][0].mask).filter(|(&a, &b)| a && b).count() as u64;
            t
        };
        let same = table(corpus.masks[0][0].mask.clone());
        assert_eq!(same.iou(0, 0), 1.0);
        let disjoint = table(corpus.masks[0][0].mask.iter().map(|b| !b).collect());
        assert_eq!(disjoint.iou(0, 0), 0.0);
        let half: Vec<bool> = (0..16).map(|i| i % 4 == 0).collect();
        assert_eq!(table(half).iou(0, 0), 0.5);
        assert!(find_detectors(&same, &corpus.concepts, 1.01, DetectionMode::Best).is_empty());
        assert_eq!(find_detectors(&same, &corpus.concepts, 0.5, DetectionMode::Best).len(), 1);
    }

    #[test]
    fn unique_counts() {
        let t = concept_table();
        let rec = |unit, c: usize| DetectorRecord {
            unit,
            concept: c,
            name: t[c].name.clone(),
            category: t[c].category,
            iou: 0.5,
        };
        assert!(count_unique_concepts(&[]).values().all(|&v| v == 0));
        let counts = count_unique_concepts(&[rec(0, 0), rec(1, 0)]);
        assert_eq!(counts[&Category::Object], 1);
        let r = vec![
            rec(0, 0),
            rec(1, 1),
            rec(2, 2),
            rec(3, color_concept(Color::Red)),
            rec(4, color_concept(Color::Blue)),
        ];
        let counts = count_unique_concepts(&r);
        assert_eq!(
            counts.into_iter().collect::<Vec<_>>(),
            vec![(Category::Object, 3), (Category::Part, 0), (Category::Material, 0), (Category::Color, 2)]
        );
    }

    #[test]
    fn constant_unit_is_degenerate_and_errors() {
        let corpus = small_corpus(4, 1);
        let mut net = planted(2);
        // Zero unit 1 entirely: its activation is ReLU(0) everywhere.
        let (w, bias) = net.conv_params_mut(0, 0);
        w[27..54].fill(0.0);
        net.params[bias.unwrap().start + 1] = 0.0;
        let p = collect_profiles(&net, 0, &corpus, QuantileSpace::Input).unwrap();
        assert_eq!(p[1].threshold, 0.0);
        assert!(p[1].degenerate);
        let empty = ConceptCorpus {
            images: vec![],
            masks: vec![],
            ..corpus.clone()
        };
        assert!(collect_profiles(&net, 0, &empty, QuantileSpace::Feature).is_err());
        assert!(unit_concept_iou(&net, 0, &p[0], &corpus, 99).is_err());
    }
}
