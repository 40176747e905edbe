//! Tables and vector figures regenerated from a run's record files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::alignment::{METRIC_EHR, METRIC_ENERGY_PG, METRIC_WSOL_IOU};
use crate::attribution::Method;
use crate::augment::Augmentation;
use crate::config::ExperimentConfig;
use crate::dissection::Category;
use crate::error::{Error, Result};
use crate::faithfulness::{METRIC_DELETION, METRIC_INSERTION};
use crate::pipeline::{concept_metric, Run, METRIC_DETECTORS, METRIC_DETECTOR_RATE, METRIC_TOP1};
use crate::records::{self, CurveRecord, ResultRecord};

pub const AXIS_X_DELETION: &str = "fraction removed";
pub const AXIS_X_INSERTION: &str = "fraction inserted";
pub const AXIS_Y_SCORE: &str = "normalized model score";

/// Number of evaluation samples drawn in each heatmap grid.
const HEATMAP_ROWS: usize = 4;

const PALETTE: [&str; 5] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"];

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

/// A table of preformatted cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_tsv(&self) -> String {
        let mut s = self.header.join("\t");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join("\t"));
            s.push('\n');
        }
        s
    }
}

struct Lookup<'a>(&'a [ResultRecord]);

impl Lookup<'_> {
    fn get(&self, model: Augmentation, method: Option<Method>, metric: &str) -> Option<&ResultRecord> {
        self.0
            .iter()
            .rev()
            .find(|r| r.model_id == model.name() && r.method.as_deref() == method.map(Method::name) && r.metric == metric)
    }

    fn cell(&self, model: Augmentation, method: Option<Method>, metric: &str, digits: usize, se_digits: usize) -> String {
        match self.get(model, method, metric) {
            Some(r) => match r.se {
                Some(se) => format!("{:.*} ± {:.*}", digits, r.value, se_digits, se),
                None => format!("{:.*}", digits, r.value),
            },
            None => "-".into(),
        }
    }
}

/// Rows are models; columns are EnergyPG and EHR under each method.
pub fn alignment_table(records: &[ResultRecord], models: &[Augmentation]) -> Table {
    let l = Lookup(records);
    let mut header = vec!["model".to_string()];
    for m in Method::ALL {
        header.push(format!("{m}_{METRIC_ENERGY_PG}"));
        header.push(format!("{m}_{METRIC_EHR}"));
    }
    let rows = models
        .iter()
        .map(|&model| {
            let mut r = vec![model.name().to_string()];
            for m in Method::ALL {
                r.push(l.cell(model, Some(m), METRIC_ENERGY_PG, 3, 3));
                r.push(l.cell(model, Some(m), METRIC_EHR, 3, 3));
            }
            r
        })
        .collect();
    Table { header, rows }
}

/// One column per method for a single metric.
pub fn method_table(records: &[ResultRecord], models: &[Augmentation], metric: &str, digits: usize, se_digits: usize) -> Table {
    let l = Lookup(records);
    let mut header = vec!["model".to_string()];
    header.extend(Method::ALL.iter().map(|m| m.name().to_string()));
    let rows = models
        .iter()
        .map(|&model| {
            let mut r = vec![model.name().to_string()];
            r.extend(Method::ALL.iter().map(|&m| l.cell(model, Some(m), metric, digits, se_digits)));
            r
        })
        .collect();
    Table { header, rows }
}

pub fn concept_table(records: &[ResultRecord], models: &[Augmentation]) -> Table {
    let l = Lookup(records);
    let mut header = vec!["model".to_string()];
    header.extend(Category::ALL.iter().map(|c| c.name().to_string()));
    header.push(METRIC_DETECTORS.into());
    header.push(METRIC_DETECTOR_RATE.into());
    header.push(METRIC_TOP1.into());
    let rows = models
        .iter()
        .map(|&model| {
            let mut r = vec![model.name().to_string()];
            r.extend(Category::ALL.iter().map(|c| l.cell(model, None, &concept_metric(c.name()), 0, 0)));
            r.push(l.cell(model, None, METRIC_DETECTORS, 0, 0));
            r.push(l.cell(model, None, METRIC_DETECTOR_RATE, 3, 3));
            r.push(l.cell(model, None, METRIC_TOP1, 3, 3));
            r
        })
        .collect();
    Table { header, rows }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Panel<'a> {
    title: String,
    xlabel: &'static str,
    series: Vec<(&'a str, &'a CurveRecord)>,
    /// Fixed y range; `None` fits the data.
    y_range: Option<(f64, f64)>,
}

fn draw_panel(svg: &mut String, p: &Panel, ox: f64, oy: f64, w: f64, h: f64) {
    let (l, r, t, b) = (48.0, 10.0, 24.0, 36.0);
    let (pw, ph) = (w - l - r, h - t - b);
    let (y0, y1) = p.y_range.unwrap_or_else(|| {
        let (mut lo, mut hi) = (0.0f64, 0.0f64);
        for (_, c) in &p.series {
            for &v in &c.mean {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        let pad = ((hi - lo) * 0.1).max(1e-3);
        (lo - pad, hi + pad)
    });
    let sx = |x: f64| ox + l + x * pw;
    let sy = |y: f64| oy + t + (1.0 - (y - y0) / (y1 - y0)) * ph;
    let _ = writeln!(svg, r#"<g class="panel">"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}</text>"#,
        ox + l + pw / 2.0,
        oy + 16.0,
        esc(&p.title)
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{:.1}" y="{:.1}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="black"/>"#,
        ox + l,
        oy + t
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let yv = y0 + f * (y1 - y0);
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="9" text-anchor="middle">{f:.2}</text>"#,
            sx(f),
            oy + t + ph + 12.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="9" text-anchor="end">{yv:.2}</text>"#,
            ox + l - 4.0,
            sy(yv) + 3.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text class="xlabel" x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"#,
        ox + l + pw / 2.0,
        oy + h - 6.0,
        p.xlabel
    );
    let _ = writeln!(
        svg,
        r#"<text class="ylabel" transform="translate({:.1},{:.1}) rotate(-90)" font-size="10" text-anchor="middle">{}</text>"#,
        ox + 12.0,
        oy + t + ph / 2.0,
        AXIS_Y_SCORE
    );
    if y0 < 0.0 && y1 > 0.0 {
        let _ = writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="gray" stroke-dasharray="3,3"/>"#,
            sx(0.0),
            sy(0.0),
            sx(1.0),
            sy(0.0)
        );
    }
    for (i, (_, c)) in p.series.iter().enumerate() {
        let pts: Vec<String> = c
            .x
            .iter()
            .zip(&c.mean)
            .map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y.clamp(y0, y1))))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            PALETTE[i % PALETTE.len()],
            pts.join(" ")
        );
    }
    let _ = writeln!(svg, "</g>");
}

fn legend(svg: &mut String, names: &[&str], x: f64, y: f64) {
    for (i, n) in names.iter().enumerate() {
        let xx = x + i as f64 * 110.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{xx:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{}" stroke-width="3"/><text x="{:.1}" y="{:.1}" font-size="11">{}</text>"#,
            xx + 18.0,
            PALETTE[i % PALETTE.len()],
            xx + 22.0,
            y + 4.0,
            esc(n)
        );
    }
}

/// Deletion (top row) and insertion (bottom row) curves of one method:
/// attribution order, random order, and their difference.
pub fn faithfulness_figure(curves: &[CurveRecord], models: &[Augmentation], method: Method) -> Option<String> {
    let find = |model: Augmentation, mode: &str, curve: &str| {
        curves
            .iter()
            .rev()
            .find(|c| c.model_id == model.name() && c.method == method.name() && c.mode == mode && c.curve == curve)
    };
    let specs = [
        ("(a) LeRF deletion", "deletion", "lerf", AXIS_X_DELETION, Some((0.0, 1.0))),
        ("(b) RaO deletion", "deletion", "rao", AXIS_X_DELETION, Some((0.0, 1.0))),
        ("(c) inter-model deletion", "deletion", "difference", AXIS_X_DELETION, None),
        ("(d) MoRF insertion", "insertion", "morf", AXIS_X_INSERTION, Some((0.0, 1.0))),
        ("(e) RaO insertion", "insertion", "rao", AXIS_X_INSERTION, Some((0.0, 1.0))),
        ("(f) inter-model insertion", "insertion", "difference", AXIS_X_INSERTION, None),
    ];
    let present: Vec<Augmentation> = models
        .iter()
        .copied()
        .filter(|&m| find(m, "deletion", "lerf").is_some())
        .collect();
    if present.is_empty() {
        return None;
    }
    let (pw, ph) = (300.0, 230.0);
    let (w, h) = (3.0 * pw, 2.0 * ph + 40.0);
    let mut svg = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif">"#);
    svg.push('\n');
    for (i, (title, mode, curve, xlabel, yr)) in specs.iter().enumerate() {
        let series: Vec<(&str, &CurveRecord)> = present
            .iter()
            .filter_map(|&m| find(m, mode, curve).map(|c| (m.name(), c)))
            .collect();
        let panel = Panel {
            title: format!("{title} ({method})"),
            xlabel,
            series,
            y_range: *yr,
        };
        draw_panel(&mut svg, &panel, (i % 3) as f64 * pw, (i / 3) as f64 * ph, pw, ph);
    }
    let names: Vec<&str> = present.iter().map(|m| m.name()).collect();
    legend(&mut svg, &names, 60.0, 2.0 * ph + 20.0);
    svg.push_str("</svg>\n");
    Some(svg)
}

/// Grouped bars of unique detected concepts per category.
pub fn concept_figure(records: &[ResultRecord], models: &[Augmentation]) -> Option<String> {
    let l = Lookup(records);
    let counts: Vec<Vec<f64>> = models
        .iter()
        .map(|&m| {
            Category::ALL
                .iter()
                .map(|c| l.get(m, None, &concept_metric(c.name())).map_or(f64::NAN, |r| r.value))
                .collect()
        })
        .collect();
    if counts.iter().flatten().all(|v| v.is_nan()) {
        return None;
    }
    let max = counts.iter().flatten().filter(|v| !v.is_nan()).fold(1.0f64, |a, &b| a.max(b));
    let (w, h) = (640.0, 320.0);
    let (l0, t, b) = (50.0, 30.0, 60.0);
    let ph = h - t - b;
    let group = (w - l0 - 20.0) / Category::ALL.len() as f64;
    let bar = group * 0.8 / models.len().max(1) as f64;
    let mut svg = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif">"#);
    svg.push('\n');
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="18" font-size="13" text-anchor="middle">unique concepts per category</text>"#,
        w / 2.0
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{l0}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
        t + ph,
        w - 20.0,
        t + ph
    );
    for (ci, cat) in Category::ALL.iter().enumerate() {
        let gx = l0 + ci as f64 * group + group * 0.1;
        for (mi, row) in counts.iter().enumerate() {
            let v = row[ci];
            if v.is_nan() {
                continue;
            }
            let bh = v / max * ph;
            let _ = writeln!(
                svg,
                r#"<rect class="bar" x="{:.1}" y="{:.1}" width="{:.1}" height="{bh:.1}" fill="{}"><title>{} {}: {v}</title></rect>"#,
                gx + mi as f64 * bar,
                t + ph - bh,
                bar * 0.9,
                PALETTE[mi % PALETTE.len()],
                models[mi],
                cat.name()
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"#,
            gx + group * 0.4,
            t + ph + 14.0,
            cat.name()
        );
    }
    let _ = writeln!(
        svg,
        r#"<text transform="translate(14,{:.1}) rotate(-90)" font-size="10" text-anchor="middle">number of unique concepts</text>"#,
        t + ph / 2.0
    );
    let names: Vec<&str> = models.iter().map(|m| m.name()).collect();
    legend(&mut svg, &names, l0, h - 16.0);
    svg.push_str("</svg>\n");
    Some(svg)
}

fn heat(v: f32) -> (u8, u8, u8) {
    // blue -> cyan -> yellow -> red
    let v = v.clamp(0.0, 1.0);
    let (r, g, b) = if v < 1.0 / 3.0 {
        let t = v * 3.0;
        (0.0, t, 1.0)
    } else if v < 2.0 / 3.0 {
        let t = v * 3.0 - 1.0;
        (t, 1.0, 1.0 - t)
    } else {
        let t = v * 3.0 - 2.0;
        (1.0, 1.0 - t, 0.0)
    };
    ((r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8)
}

fn draw_pixels(svg: &mut String, ox: f64, oy: f64, scale: f64, h: usize, w: usize, px: impl Fn(usize, usize) -> (u8, u8, u8), opacity: f64) {
    for y in 0..h {
        for x in 0..w {
            let (r, g, b) = px(y, x);
            let _ = write!(
                svg,
                r#"<rect x="{:.1}" y="{:.1}" width="{scale:.1}" height="{scale:.1}" fill="rgb({r},{g},{b})" fill-opacity="{opacity}"/>"#,
                ox + x as f64 * scale,
                oy + y as f64 * scale
            );
        }
    }
    svg.push('\n');
}

/// Image and per-model maps for the first evaluation samples, with ground
/// truth boxes outlined in red.
pub fn heatmap_grid(run: &Run, models: &[Augmentation], method: Method) -> Result<Option<String>> {
    if !run.paths.samples().exists() {
        return Ok(None);
    }
    let samples = run.load_samples()?;
    let samples = &samples[..samples.len().min(HEATMAP_ROWS)];
    let present: Vec<Augmentation> = models
        .iter()
        .copied()
        .filter(|&m| samples.iter().all(|s| run.paths.map(method, m, s.index).exists()))
        .collect();
    if samples.is_empty() || present.is_empty() {
        return Ok(None);
    }
    let size = samples[0].image.width();
    let scale = (96.0 / size as f64).max(1.0);
    let cell = size as f64 * scale + 12.0;
    let (top, left) = (28.0, 8.0);
    let w = left + cell * (present.len() + 1) as f64;
    let h = top + cell * samples.len() as f64;
    let mut svg = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" font-family="sans-serif">"#);
    svg.push('\n');
    let _ = writeln!(svg, r#"<text x="{:.1}" y="16" font-size="11" text-anchor="middle">image</text>"#, left + cell / 2.0 - 6.0);
    for (j, m) in present.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="16" font-size="11" text-anchor="middle">{m} ({method})</text>"#,
            left + cell * (j + 1) as f64 + cell / 2.0 - 6.0
        );
    }
    for (i, s) in samples.iter().enumerate() {
        let oy = top + i as f64 * cell;
        let img = &s.image;
        let to8 = |v: f32| (v.clamp(0.0, 1.0) * 255.0) as u8;
        let rgb = |y: usize, x: usize| {
            if img.channels() >= 3 {
                (to8(img.get(0, y, x)), to8(img.get(1, y, x)), to8(img.get(2, y, x)))
            } else {
                let g = to8(img.get(0, y, x));
                (g, g, g)
            }
        };
        for col in 0..=present.len() {
            let ox = left + col as f64 * cell;
            draw_pixels(&mut svg, ox, oy, scale, img.height(), img.width(), rgb, 1.0);
            if col > 0 {
                let map = crate::tensorfile::load_map(&run.paths.map(method, present[col - 1], s.index))?;
                draw_pixels(&mut svg, ox, oy, scale, map.height, map.width, |y, x| heat(map.values[y * map.width + x]), 0.55);
            }
            for b in &s.boxes {
                let _ = writeln!(
                    svg,
                    r#"<rect class="gt" x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="red" stroke-width="2"/>"#,
                    ox + b.x0 as f64 * scale,
                    oy + b.y0 as f64 * scale,
                    b.width() as f64 * scale,
                    b.height() as f64 * scale
                );
            }
        }
    }
    svg.push_str("</svg>\n");
    Ok(Some(svg))
}

/// Regenerates every table and figure of the run in `run_dir` from its
/// records.
pub fn build_report(run_dir: &Path) -> Result<ReportSummary> {
    let cfg_path = run_dir.join("config.toml");
    if !cfg_path.exists() {
        return Err(Error::MissingArtifact {
            path: cfg_path,
            hint: "not a run directory".into(),
        });
    }
    let mut config = ExperimentConfig::load(&cfg_path)?;
    config.out_dir = run_dir.parent().map(Path::to_path_buf).unwrap_or_default();
    let run = Run::new(config)?;
    let run = Run {
        paths: crate::pipeline::RunPaths::new(run_dir),
        ..run
    };
    let results = records::latest(&run.results()?);
    if results.is_empty() {
        return Err(Error::NoData(format!("no result records in {}", run_dir.display())));
    }
    let curves: Vec<CurveRecord> = records::read_all(&run.paths.curves())?;
    let models = run.config.regimes.clone();
    let dir = run.paths.report();
    fs::create_dir_all(&dir)?;
    let mut files = Vec::new();
    let mut emit = |name: &str, body: String| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, body)?;
        files.push(p);
        Ok(())
    };
    emit("alignment.tsv", alignment_table(&results, &models).to_tsv())?;
    emit("wsol.tsv", method_table(&results, &models, METRIC_WSOL_IOU, 3, 3).to_tsv())?;
    emit("inter_model_deletion.tsv", method_table(&results, &models, METRIC_DELETION, 3, 4).to_tsv())?;
    emit("inter_model_insertion.tsv", method_table(&results, &models, METRIC_INSERTION, 3, 4).to_tsv())?;
    emit("concepts.tsv", concept_table(&results, &models).to_tsv())?;
    for method in Method::ALL {
        if let Some(svg) = faithfulness_figure(&curves, &models, method) {
            emit(&format!("faithfulness_{method}.svg"), svg)?;
        }
        if let Some(svg) = heatmap_grid(&run, &models, method)? {
            emit(&format!("heatmaps_{method}.svg"), svg)?;
        }
    }
    if let Some(svg) = concept_figure(&results, &models) {
        emit("concepts.svg", svg)?;
    }
    Ok(ReportSummary { dir, files })
}
