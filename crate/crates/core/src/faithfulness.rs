//! Grid deletion and insertion curves and the inter-model scores built from
//! them: LeRF−RaO for deletion, MoRF−RaO for insertion.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attribution::{AttributionMap, Method};
use crate::error::{Error, Result};
use crate::harness::ScoreOracle;
use crate::image::{Image, Rect};
use crate::rng::child;

pub const METRIC_DELETION: &str = "inter_model_deletion";
pub const METRIC_INSERTION: &str = "inter_model_insertion";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ordering {
    /// Least relevant first.
    Lerf,
    /// Most relevant first.
    Morf,
    /// Random order.
    Rao,
}

impl Ordering {
    pub fn name(self) -> &'static str {
        match self {
            Ordering::Lerf => "lerf",
            Ordering::Morf => "morf",
            Ordering::Rao => "rao",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Perturbation {
    Deletion,
    Insertion,
}

impl Perturbation {
    pub fn name(self) -> &'static str {
        match self {
            Perturbation::Deletion => "deletion",
            Perturbation::Insertion => "insertion",
        }
    }

    /// Ordering compared against RaO for the inter-model score.
    pub fn ordering(self) -> Ordering {
        match self {
            Perturbation::Deletion => Ordering::Lerf,
            Perturbation::Insertion => Ordering::Morf,
        }
    }

    pub fn metric(self) -> &'static str {
        match self {
            Perturbation::Deletion => METRIC_DELETION,
            Perturbation::Insertion => METRIC_INSERTION,
        }
    }
}

/// How the image is cut into cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "size", rename_all = "lowercase")]
pub enum CellSpec {
    /// Square cells of this many pixels; trailing cells may be partial.
    Pixels(usize),
    /// This many cells per side, with boundaries at `round(i·dim/n)`.
    Partition(usize),
}

impl Default for CellSpec {
    fn default() -> Self {
        CellSpec::Pixels(4)
    }
}

/// Row-major grid of cells over an image.
#[derive(Debug, Clone, PartialEq)]
pub struct GridLayout {
    pub height: usize,
    pub width: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    /// True when some cells are smaller than the nominal size.
    pub partial: bool,
}

impl GridLayout {
    pub fn new(height: usize, width: usize, spec: CellSpec) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("grid needs a nonempty image"));
        }
        let bounds = |dim: usize| -> Result<(Vec<usize>, bool)> {
            match spec {
                CellSpec::Pixels(0) | CellSpec::Partition(0) => Err(Error::invalid("cell size must be positive")),
                CellSpec::Pixels(n) => {
                    let mut b: Vec<usize> = (0..dim).step_by(n).collect();
                    b.push(dim);
                    Ok((b, !dim.is_multiple_of(n)))
                }
                CellSpec::Partition(n) if n > dim => Err(Error::invalid(format!("cannot cut {dim} pixels into {n} cells"))),
                CellSpec::Partition(n) => {
                    let b: Vec<usize> = (0..=n).map(|i| ((i * dim) as f64 / n as f64).round() as usize).collect();
                    Ok((b, !dim.is_multiple_of(n)))
                }
            }
        };
        let (rows, pr) = bounds(height)?;
        let (cols, pc) = bounds(width)?;
        Ok(Self {
            height,
            width,
            rows,
            cols,
            partial: pr || pc,
        })
    }

    pub fn num_cells(&self) -> usize {
        (self.rows.len() - 1) * (self.cols.len() - 1)
    }

    pub fn grid_cols(&self) -> usize {
        self.cols.len() - 1
    }

    pub fn cell(&self, index: usize) -> Rect {
        let (r, c) = (index / self.grid_cols(), index % self.grid_cols());
        Rect::new(self.cols[c], self.rows[r], self.cols[c + 1], self.rows[r + 1])
    }

    /// Attribution mass per cell.
    pub fn cell_sums(&self, map: &AttributionMap) -> Vec<f64> {
        (0..self.num_cells())
            .map(|i| {
                let r = self.cell(i);
                (r.y0..r.y1)
                    .map(|y| map.values[y * map.width + r.x0..y * map.width + r.x1].iter().map(|&v| v as f64).sum::<f64>())
                    .sum()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRanking {
    pub layout: GridLayout,
    pub ordering: Ordering,
    /// Cell indices in perturbation order.
    pub order: Vec<usize>,
    /// Empty for RaO rankings built without a map.
    pub cell_sums: Vec<f64>,
}

/// Ranks cells by attribution mass; ties go to the smaller row-major index in
/// both directions. RaO ignores the map and needs `rng`.
pub fn rank_grids(map: &AttributionMap, spec: CellSpec, ordering: Ordering, rng: Option<&mut dyn rand::RngCore>) -> Result<GridRanking> {
    let layout = GridLayout::new(map.height, map.width, spec)?;
    let sums = layout.cell_sums(map);
    let mut order: Vec<usize> = (0..layout.num_cells()).collect();
    match ordering {
        Ordering::Lerf => order.sort_by(|&a, &b| sums[a].total_cmp(&sums[b]).then(a.cmp(&b))),
        Ordering::Morf => order.sort_by(|&a, &b| sums[b].total_cmp(&sums[a]).then(a.cmp(&b))),
        Ordering::Rao => {
            let rng = rng.ok_or_else(|| Error::invalid("random ordering needs a random source"))?;
            order.shuffle(rng);
        }
    }
    Ok(GridRanking {
        layout,
        ordering,
        order,
        cell_sums: sums,
    })
}

pub fn random_ranking<R: Rng + ?Sized>(layout: &GridLayout, rng: &mut R) -> GridRanking {
    let mut order: Vec<usize> = (0..layout.num_cells()).collect();
    order.shuffle(rng);
    GridRanking {
        layout: layout.clone(),
        ordering: Ordering::Rao,
        order,
        cell_sums: Vec::new(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillKind {
    /// Per-channel mean pixel of the dataset.
    #[default]
    DatasetMean,
    /// Per-channel mean pixel of the image being perturbed.
    ImageMean,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReplacementPolicy {
    DatasetMean(Vec<f32>),
    ImageMean,
}

impl ReplacementPolicy {
    pub fn kind(&self) -> FillKind {
        match self {
            ReplacementPolicy::DatasetMean(_) => FillKind::DatasetMean,
            ReplacementPolicy::ImageMean => FillKind::ImageMean,
        }
    }

    pub fn pixel(&self, image: &Image) -> Result<Vec<f32>> {
        match self {
            ReplacementPolicy::DatasetMean(p) if p.len() == image.channels() => Ok(p.clone()),
            ReplacementPolicy::DatasetMean(p) => Err(Error::invalid(format!(
                "fill pixel has {} channels, image has {}",
                p.len(),
                image.channels()
            ))),
            ReplacementPolicy::ImageMean => Ok(image.channel_means()),
        }
    }
}

/// Normalized score after each evaluated step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCurve {
    /// Fraction of cells processed.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Per-step standard error, present for curves aggregated over images.
    pub se: Option<Vec<f64>>,
}

impl ScoreCurve {
    /// Trapezoid area over the fraction axis.
    pub fn auc(&self) -> f64 {
        trapezoid(&self.x, &self.y)
    }
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    (1..x.len()).map(|i| 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1])).sum()
}

/// Steps at which the oracle is evaluated: every `stride`-th plus the last.
pub fn evaluated_steps(cells: usize, stride: usize) -> Vec<usize> {
    let stride = stride.max(1);
    let mut s: Vec<usize> = (0..=cells).step_by(stride).collect();
    if *s.last().expect("step 0") != cells {
        s.push(cells);
    }
    s
}

const BATCH: usize = 64;

fn sweep(
    oracle: &dyn ScoreOracle,
    image: &Image,
    class: usize,
    ranking: &GridRanking,
    fill: &ReplacementPolicy,
    mode: Perturbation,
    stride: usize,
) -> Result<ScoreCurve> {
    let layout = &ranking.layout;
    if (layout.height, layout.width) != (image.height(), image.width()) {
        return Err(Error::invalid("ranking does not match image dimensions"));
    }
    let pixel = fill.pixel(image)?;
    let blank = Image::from_pixel(image.height(), image.width(), &pixel);
    let score = |imgs: &[Image], step: usize| -> Result<Vec<f32>> {
        oracle.scores(imgs, class).map_err(|e| Error::OracleFailure {
            step,
            source: Box::new(e),
        })
    };
    let anchor = score(std::slice::from_ref(image), 0)?[0] as f64;
    if !(anchor > 0.0 && anchor.is_finite()) {
        return Err(Error::OracleFailure {
            step: 0,
            source: Box::new(Error::invalid(format!("unperturbed score {anchor} cannot anchor normalization"))),
        });
    }
    let n = layout.num_cells();
    let steps = evaluated_steps(n, stride);
    let mut cur = match mode {
        Perturbation::Deletion => image.clone(),
        Perturbation::Insertion => blank,
    };
    let mut y = Vec::with_capacity(steps.len());
    let mut pending: Vec<Image> = Vec::new();
    let mut pending_first = 0;
    let mut done = 0;
    for &t in &steps {
        while done < t {
            let rect = layout.cell(ranking.order[done]);
            match mode {
                Perturbation::Deletion => cur.fill_rect(rect, &pixel),
                Perturbation::Insertion => cur.paste_from(image, rect),
            }
            done += 1;
        }
        if pending.is_empty() {
            pending_first = t;
        }
        pending.push(cur.clone());
        if pending.len() == BATCH {
            y.extend(score(&pending, pending_first)?);
            pending.clear();
        }
    }
    if !pending.is_empty() {
        y.extend(score(&pending, pending_first)?);
    }
    let y: Vec<f64> = y.into_iter().map(|s| (s as f64 / anchor).clamp(0.0, 1.0)).collect();
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::OracleFailure {
            step: steps[i],
            source: Box::new(Error::invalid("non-finite score")),
        });
    }
    Ok(ScoreCurve {
        x: steps.iter().map(|&t| t as f64 / n as f64).collect(),
        y,
        se: None,
    })
}

/// Step `t` replaces the first `t` ranked cells with the fill pixel.
pub fn deletion_curve(
    oracle: &dyn ScoreOracle,
    image: &Image,
    class: usize,
    ranking: &GridRanking,
    fill: &ReplacementPolicy,
    stride: usize,
) -> Result<ScoreCurve> {
    sweep(oracle, image, class, ranking, fill, Perturbation::Deletion, stride)
}

/// Step `t` restores the first `t` ranked cells onto the all-fill image.
pub fn insertion_curve(
    oracle: &dyn ScoreOracle,
    image: &Image,
    class: usize,
    ranking: &GridRanking,
    fill: &ReplacementPolicy,
    stride: usize,
) -> Result<ScoreCurve> {
    sweep(oracle, image, class, ranking, fill, Perturbation::Insertion, stride)
}

pub fn perturbation_curve(
    oracle: &dyn ScoreOracle,
    image: &Image,
    class: usize,
    ranking: &GridRanking,
    fill: &ReplacementPolicy,
    mode: Perturbation,
    stride: usize,
) -> Result<ScoreCurve> {
    sweep(oracle, image, class, ranking, fill, mode, stride)
}

/// Mean of `n_orders` random-order curves.
#[allow(clippy::too_many_arguments)]
pub fn rao_mean_curve<R: Rng + ?Sized>(
    oracle: &dyn ScoreOracle,
    image: &Image,
    class: usize,
    layout: &GridLayout,
    n_orders: usize,
    rng: &mut R,
    fill: &ReplacementPolicy,
    mode: Perturbation,
    stride: usize,
) -> Result<ScoreCurve> {
    if n_orders == 0 {
        return Err(Error::invalid("n_orders must be at least 1"));
    }
    let mut acc: Option<ScoreCurve> = None;
    for _ in 0..n_orders {
        let ranking = random_ranking(layout, rng);
        let c = sweep(oracle, image, class, &ranking, fill, mode, stride)?;
        match &mut acc {
            None => acc = Some(c),
            Some(a) => a.y.iter_mut().zip(&c.y).for_each(|(a, b)| *a += b),
        }
    }
    let mut out = acc.expect("at least one order");
    out.y.iter_mut().for_each(|v| *v /= n_orders as f64);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessSettings {
    pub cell: CellSpec,
    pub n_orders: usize,
    pub fill: FillKind,
    pub stride: usize,
    pub seed: u64,
}

impl Default for FaithfulnessSettings {
    fn default() -> Self {
        Self {
            cell: CellSpec::default(),
            n_orders: 5,
            fill: FillKind::default(),
            stride: 1,
            seed: 0,
        }
    }
}

impl FaithfulnessSettings {
    /// Hash of everything that shapes the perturbation protocol, shared by
    /// the attribution curves and their RaO baseline.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("serializable")))
    }
}

/// Mean curves and the inter-model AUC for one perturbation mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterModelScore {
    pub mode: Perturbation,
    /// AUC of the mean (attribution − RaO) curve, ×100.
    pub auc: f64,
    /// Per-step standard error of the difference, averaged over steps
    /// (score units, not ×100).
    pub se: f64,
    pub attribution_curve: ScoreCurve,
    pub rao_curve: ScoreCurve,
    pub difference: ScoreCurve,
    pub n_images: usize,
    pub config_hash: String,
}

impl InterModelScore {
    /// Standard error on the ×100 AUC scale.
    pub fn se_scaled(&self) -> f64 {
        self.se * 100.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessResult {
    pub model_id: String,
    pub method: Method,
    pub deletion: InterModelScore,
    pub insertion: InterModelScore,
}

fn mean_se(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let len = rows[0].len();
    let mean: Vec<f64> = (0..len).map(|t| rows.iter().map(|r| r[t]).sum::<f64>() / n).collect();
    let se = (0..len)
        .map(|t| {
            if rows.len() < 2 {
                return 0.0;
            }
            let var = rows.iter().map(|r| (r[t] - mean[t]).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        })
        .collect();
    (mean, se)
}

/// Inter-model deletion (LeRF − RaO) or insertion (MoRF − RaO) over a sample
/// set. The target class of each image is the oracle's top-1 prediction on the
/// unperturbed image; RaO orders for image `i` come from stream `(seed, "rao", i)`.
pub fn inter_model_score(
    oracle: &dyn ScoreOracle,
    images: &[Image],
    maps: &[AttributionMap],
    fill: &ReplacementPolicy,
    settings: &FaithfulnessSettings,
    mode: Perturbation,
) -> Result<InterModelScore> {
    if images.len() != maps.len() {
        return Err(Error::invalid(format!("{} images but {} maps", images.len(), maps.len())));
    }
    if images.is_empty() {
        return Err(Error::invalid("no samples to score"));
    }
    if fill.kind() != settings.fill {
        return Err(Error::invalid("fill policy does not match settings"));
    }
    let mut primary = Vec::with_capacity(images.len());
    let mut rao = Vec::with_capacity(images.len());
    let mut x = Vec::new();
    for (i, (img, map)) in images.iter().zip(maps).enumerate() {
        let (class, _) = oracle.predict(img)?;
        let ranking = rank_grids(map, settings.cell, mode.ordering(), None)?;
        let c = sweep(oracle, img, class, &ranking, fill, mode, settings.stride)?;
        let mut rng = child(settings.seed, "rao", i as u64);
        let r = rao_mean_curve(oracle, img, class, &ranking.layout, settings.n_orders, &mut rng, fill, mode, settings.stride)?;
        if !x.is_empty() && x != c.x {
            return Err(Error::invalid("all images must share one grid"));
        }
        x = c.x;
        primary.push(c.y);
        rao.push(r.y);
    }
    let diffs: Vec<Vec<f64>> = primary
        .iter()
        .zip(&rao)
        .map(|(p, r)| p.iter().zip(r).map(|(a, b)| a - b).collect())
        .collect();
    let (pm, ps) = mean_se(&primary);
    let (rm, rs) = mean_se(&rao);
    let (dm, ds) = mean_se(&diffs);
    let se = ds.iter().sum::<f64>() / ds.len() as f64;
    let difference = ScoreCurve {
        x: x.clone(),
        y: dm,
        se: Some(ds),
    };
    Ok(InterModelScore {
        mode,
        auc: difference.auc() * 100.0,
        se,
        attribution_curve: ScoreCurve {
            x: x.clone(),
            y: pm,
            se: Some(ps),
        },
        rao_curve: ScoreCurve { x, y: rm, se: Some(rs) },
        difference,
        n_images: images.len(),
        config_hash: settings.hash(),
    })
}

/// Both inter-model scores for one model and attribution method.
pub fn evaluate_faithfulness(
    model_id: &str,
    oracle: &dyn ScoreOracle,
    images: &[Image],
    maps: &[AttributionMap],
    fill: &ReplacementPolicy,
    settings: &FaithfulnessSettings,
) -> Result<FaithfulnessResult> {
    let method = maps.first().map(|m| m.method).ok_or_else(|| Error::invalid("no maps"))?;
    if maps.iter().any(|m| m.method != method) {
        return Err(Error::invalid("all maps must come from one attribution method"));
    }
    Ok(FaithfulnessResult {
        model_id: model_id.to_string(),
        method,
        deletion: inter_model_score(oracle, images, maps, fill, settings, Perturbation::Deletion)?,
        insertion: inter_model_score(oracle, images, maps, fill, settings, Perturbation::Insertion)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    /// Score = weighted sum of channel-0 pixels, clipped to [0, 1]. Class 1 is
    /// the complement.
    struct LinearOracle {
        weights: Vec<f32>,
    }

    impl ScoreOracle for LinearOracle {
        fn num_classes(&self) -> usize {
            2
        }

        fn scores(&self, images: &[Image], class: usize) -> Result<Vec<f32>> {
            Ok(images
                .iter()
                .map(|img| {
                    let s: f32 = img.channel(0).iter().zip(&self.weights).map(|(a, b)| a * b).sum();
                    let s = s.clamp(0.0, 1.0);
                    if class == 0 {
                        s
                    } else {
                        1.0 - s
                    }
                })
                .collect())
        }
    }

    struct ConstOracle;

    impl ScoreOracle for ConstOracle {
        fn num_classes(&self) -> usize {
            2
        }

        fn scores(&self, images: &[Image], _class: usize) -> Result<Vec<f32>> {
            Ok(vec![0.5; images.len()])
        }
    }

    fn map(h: usize, w: usize, v: Vec<f32>) -> AttributionMap {
        AttributionMap::new(h, w, v, 0, Method::Gradcam).unwrap()
    }

    fn sums_map() -> AttributionMap {
        // Cells (2 px) with sums 1, 2, 3, 4 in row-major order.
        let mut v = vec![0.0; 16];
        for (cell, s) in [(0usize, 1.0f32), (1, 2.0), (2, 3.0), (3, 4.0)] {
            let (r, c) = (cell / 2, cell % 2);
            v[(2 * r) * 4 + 2 * c] = s;
        }
        map(4, 4, v)
    }

    #[test]
    fn lerf_and_morf_orders() {
        let m = sums_map();
        let l = rank_grids(&m, CellSpec::Pixels(2), Ordering::Lerf, None).unwrap();
        assert_eq!(l.order, vec![0, 1, 2, 3]);
        assert_eq!(l.cell_sums, vec![1.0, 2.0, 3.0, 4.0]);
        let mo = rank_grids(&m, CellSpec::Pixels(2), Ordering::Morf, None).unwrap();
        assert_eq!(mo.order, vec![3, 2, 1, 0]);
    }

    #[test]
    fn ties_use_smallest_index() {
        let m = map(4, 4, vec![1.0; 16]);
        for o in [Ordering::Lerf, Ordering::Morf] {
            assert_eq!(rank_grids(&m, CellSpec::Pixels(2), o, None).unwrap().order, vec![0, 1, 2, 3]);
        }
    }

    #[test]
    fn rao_is_seeded_and_needs_rng() {
        let m = sums_map();
        let a = rank_grids(&m, CellSpec::Pixels(1), Ordering::Rao, Some(&mut seeded(3))).unwrap();
        let b = rank_grids(&m, CellSpec::Pixels(1), Ordering::Rao, Some(&mut seeded(3))).unwrap();
        assert_eq!(a.order, b.order);
        assert!(rank_grids(&m, CellSpec::Pixels(1), Ordering::Rao, None).is_err());
        assert!(rank_grids(&m, CellSpec::Pixels(0), Ordering::Lerf, None).is_err());
    }

    #[test]
    fn layouts_for_both_cell_readings() {
        let px = GridLayout::new(224, 224, CellSpec::Pixels(7)).unwrap();
        assert_eq!(px.num_cells(), 1024);
        assert!(!px.partial);
        let part = GridLayout::new(224, 224, CellSpec::Partition(7)).unwrap();
        assert_eq!(part.num_cells(), 49);
        assert_eq!(part.cell(48), Rect::new(192, 192, 224, 224));
        let odd = GridLayout::new(10, 10, CellSpec::Pixels(4)).unwrap();
        assert!(odd.partial);
        assert_eq!(odd.num_cells(), 9);
        assert_eq!(odd.cell(8), Rect::new(8, 8, 10, 10));
    }

    /// Hand enumeration on a 4×4 image with 2×2 cells. Image channel 0 holds
    /// 0.5 in cell 0, 0.25 in cell 1, 0.125 in cell 2, 0 in cell 3; the fill is 0
    /// and every pixel has weight 0.25, so the score is 0.25·Σ pixels.
    #[test]
    fn brute_force_deletion_and_insertion() {
        let cell_vals = [0.5f32, 0.25, 0.125, 0.0];
        let mut img = Image::filled(1, 4, 4, 0.0);
        for y in 0..4 {
            for x in 0..4 {
                img.set(0, y, x, cell_vals[(y / 2) * 2 + x / 2]);
            }
        }
        let oracle = LinearOracle { weights: vec![0.25; 16] };
        let fill = ReplacementPolicy::DatasetMean(vec![0.0]);
        // Cell score contributions: 4 px · value · 0.25.
        let contrib = [0.5f64, 0.25, 0.125, 0.0];
        let total: f64 = contrib.iter().sum();
        let m = map(4, 4, vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 3.0, 3.0, 2.0, 2.0, 3.0, 3.0, 2.0, 2.0]);
        for ordering in [Ordering::Lerf, Ordering::Morf] {
            let r = rank_grids(&m, CellSpec::Pixels(2), ordering, None).unwrap();
            let del = deletion_curve(&oracle, &img, 0, &r, &fill, 1).unwrap();
            let ins = insertion_curve(&oracle, &img, 0, &r, &fill, 1).unwrap();
            let mut removed = 0.0;
            let mut want_del = vec![1.0];
            let mut want_ins = vec![0.0];
            for &c in &r.order {
                removed += contrib[c];
                want_del.push((total - removed) / total);
                want_ins.push(removed / total);
            }
            assert_eq!(del.y, want_del, "{ordering:?}");
            assert_eq!(ins.y, want_ins, "{ordering:?}");
            assert_eq!(del.x, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        }
    }

    #[test]
    fn endpoints_meet_and_final_images_converge() {
        let mut rng = seeded(5);
        let img = Image::new(3, 8, 8, (0..192).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let oracle = LinearOracle {
            weights: (0..64).map(|i| (i % 7) as f32 / 100.0).collect(),
        };
        let fill = ReplacementPolicy::ImageMean;
        let m = map(8, 8, (0..64).map(|_| rng.random_range(0.0..1.0)).collect());
        let l = rank_grids(&m, CellSpec::Pixels(2), Ordering::Lerf, None).unwrap();
        let mo = rank_grids(&m, CellSpec::Pixels(2), Ordering::Morf, None).unwrap();
        let a = deletion_curve(&oracle, &img, 0, &l, &fill, 1).unwrap();
        let b = deletion_curve(&oracle, &img, 0, &mo, &fill, 1).unwrap();
        assert_eq!(a.y[0], 1.0);
        assert_eq!(a.y[0], b.y[0]);
        assert_eq!(a.y.last(), b.y.last());
        let ia = insertion_curve(&oracle, &img, 0, &l, &fill, 1).unwrap();
        assert_eq!(*ia.y.last().unwrap(), 1.0);
        let ib = insertion_curve(&oracle, &img, 0, &mo, &fill, 1).unwrap();
        assert_eq!(ia.y[0], ib.y[0]);
    }

    #[test]
    fn stride_keeps_last_step() {
        assert_eq!(evaluated_steps(10, 4), vec![0, 4, 8, 10]);
        assert_eq!(evaluated_steps(8, 4), vec![0, 4, 8]);
        assert_eq!(evaluated_steps(3, 0), vec![0, 1, 2, 3]);
    }

    #[test]
    fn constant_model_gives_zero_score() {
        let mut rng = seeded(1);
        let images: Vec<Image> = (0..4)
            .map(|_| Image::new(3, 8, 8, (0..192).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap())
            .collect();
        let maps: Vec<_> = (0..4).map(|_| map(8, 8, (0..64).map(|_| rng.random_range(0.0..1.0)).collect())).collect();
        let s = FaithfulnessSettings {
            cell: CellSpec::Pixels(2),
            fill: FillKind::ImageMean,
            ..Default::default()
        };
        let r = inter_model_score(&ConstOracle, &images, &maps, &ReplacementPolicy::ImageMean, &s, Perturbation::Deletion).unwrap();
        assert!(r.difference.y.iter().all(|&v| v == 0.0));
        assert_eq!(r.auc, 0.0);
        assert_eq!(r.se, 0.0);
        let flat = rao_mean_curve(&ConstOracle, &images[0], 0, &GridLayout::new(8, 8, CellSpec::Pixels(2)).unwrap(), 3, &mut seeded(2), &ReplacementPolicy::ImageMean, Perturbation::Insertion, 1).unwrap();
        assert!(flat.y.iter().all(|&v| v == 1.0));
        assert!(inter_model_score(&ConstOracle, &images, &maps[..3], &ReplacementPolicy::ImageMean, &s, Perturbation::Deletion).is_err());
    }

    #[test]
    fn rao_curves_ignore_the_map() {
        let mut rng = seeded(8);
        let images: Vec<Image> = (0..3)
            .map(|_| Image::new(1, 8, 8, (0..64).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap())
            .collect();
        let oracle = LinearOracle {
            weights: (0..64).map(|i| (i % 5) as f32 / 60.0).collect(),
        };
        let maps_a: Vec<_> = (0..3).map(|_| map(8, 8, (0..64).map(|_| rng.random_range(0.0..1.0)).collect())).collect();
        let maps_b: Vec<_> = (0..3).map(|_| map(8, 8, (0..64).map(|_| rng.random_range(0.0..1.0)).collect())).collect();
        let s = FaithfulnessSettings {
            cell: CellSpec::Pixels(2),
            fill: FillKind::ImageMean,
            ..Default::default()
        };
        let fill = ReplacementPolicy::ImageMean;
        let a = inter_model_score(&oracle, &images, &maps_a, &fill, &s, Perturbation::Deletion).unwrap();
        let b = inter_model_score(&oracle, &images, &maps_b, &fill, &s, Perturbation::Deletion).unwrap();
        assert_eq!(a.rao_curve, b.rao_curve);
        assert_eq!(a.config_hash, b.config_hash);
    }

    /// Variance of the n-order mean falls roughly as 1/n.
    #[test]
    fn rao_mean_variance_shrinks() {
        let mut rng = seeded(11);
        let img = Image::new(1, 8, 8, (0..64).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let oracle = LinearOracle {
            weights: (0..64).map(|i| if i % 9 == 0 { 0.1 } else { 0.005 }).collect(),
        };
        let layout = GridLayout::new(8, 8, CellSpec::Pixels(2)).unwrap();
        let fill = ReplacementPolicy::DatasetMean(vec![0.0]);
        let var_of = |n: usize| {
            let aucs: Vec<f64> = (0..200)
                .map(|s| {
                    rao_mean_curve(&oracle, &img, 0, &layout, n, &mut seeded(1000 + s), &fill, Perturbation::Deletion, 1)
                        .unwrap()
                        .auc()
                })
                .collect();
            let m = aucs.iter().sum::<f64>() / aucs.len() as f64;
            aucs.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (aucs.len() - 1) as f64
        };
        let ratio = var_of(1) / var_of(4);
        assert!((2.5..6.0).contains(&ratio), "variance ratio {ratio}");
    }

    proptest! {
        #[test]
        fn ranking_is_a_permutation(vals in proptest::collection::vec(0.0f32..1.0, 36), cell in 1usize..7) {
            let m = map(6, 6, vals);
            for o in [Ordering::Lerf, Ordering::Morf] {
                let r = rank_grids(&m, CellSpec::Pixels(cell), o, None).unwrap();
                let mut seen = r.order.clone();
                seen.sort();
                prop_assert_eq!(seen, (0..r.layout.num_cells()).collect::<Vec<_>>());
                for w in r.order.windows(2) {
                    let (a, b) = (r.cell_sums[w[0]], r.cell_sums[w[1]]);
                    match o {
                        Ordering::Lerf => prop_assert!(a < b || (a == b && w[0] < w[1])),
                        _ => prop_assert!(a > b || (a == b && w[0] < w[1])),
                    }
                }
            }
        }
    }
}
