use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::child;
use crate::scene::{random_place, render, Color, Material, ObjectSpec, Shape};
use crate::tensorfile::{load_image, load_mask, save_image, save_mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Object,
    Part,
    Material,
    Color,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Object, Category::Part, Category::Material, Category::Color];

    pub fn name(self) -> &'static str {
        match self {
            Category::Object => "object",
            Category::Part => "part",
            Category::Material => "material",
            Category::Color => "color",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub id: usize,
    pub name: String,
    pub category: Category,
}

/// Fixed vocabulary: shapes, shape rims and cores, background textures and
/// palette colors, in that id order.
pub fn concept_table() -> Vec<Concept> {
    let mut t = Vec::new();
    let mut push = |name: String, category| {
        let id = t.len();
        t.push(Concept { id, name, category });
    };
    for s in Shape::ALL {
        push(s.name().to_string(), Category::Object);
    }
    for s in Shape::ALL {
        push(format!("{}-rim", s.name()), Category::Part);
        push(format!("{}-core", s.name()), Category::Part);
    }
    for m in Material::ALL {
        push(m.name().to_string(), Category::Material);
    }
    for c in Color::ALL {
        push(c.name().to_string(), Category::Color);
    }
    t
}

fn shape_id(s: Shape) -> usize {
    Shape::ALL.iter().position(|&x| x == s).expect("known shape")
}

pub fn object_concept(s: Shape) -> usize {
    shape_id(s)
}

pub fn part_concept(s: Shape, rim: bool) -> usize {
    Shape::ALL.len() + 2 * shape_id(s) + usize::from(!rim)
}

pub fn material_concept(m: Material) -> usize {
    3 * Shape::ALL.len() + Material::ALL.iter().position(|&x| x == m).expect("known material")
}

pub fn color_concept(c: Color) -> usize {
    3 * Shape::ALL.len() + Material::ALL.len() + Color::ALL.iter().position(|&x| x == c).expect("known color")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub image_size: usize,
    pub count: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Object placement side range as fractions of the image side. Small
    /// objects keep each color and part rare, as concepts in a labeled
    /// segmentation corpus usually are.
    pub min_side_frac: f64,
    pub max_side_frac: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            count: 400,
            min_objects: 1,
            max_objects: 2,
            min_side_frac: 0.15,
            max_side_frac: 0.3,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 8 || self.count == 0 {
            return Err(Error::invalid("corpus needs images of side ≥ 8 and a positive count"));
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return Err(Error::invalid("object count range must satisfy 1 ≤ min ≤ max"));
        }
        if !(0.0 < self.min_side_frac && self.min_side_frac <= self.max_side_frac && self.max_side_frac <= 1.0) {
            return Err(Error::invalid("object side fractions must satisfy 0 < min ≤ max ≤ 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptMask {
    pub concept: usize,
    pub mask: Vec<bool>,
}

/// Images with per-pixel concept masks. Only nonempty masks are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptCorpus {
    pub image_size: usize,
    pub concepts: Vec<Concept>,
    pub images: Vec<Image>,
    pub masks: Vec<Vec<ConceptMask>>,
}

impl ConceptCorpus {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Pixel count of every concept over the corpus.
    pub fn concept_areas(&self) -> Vec<u64> {
        let mut a = vec![0u64; self.concepts.len()];
        for m in self.masks.iter().flatten() {
            a[m.concept] += m.mask.iter().filter(|&&b| b).count() as u64;
        }
        a
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.image_size * self.image_size;
        if self.images.len() != self.masks.len() {
            return Err(Error::invalid("one mask list per image is required"));
        }
        for (img, masks) in self.images.iter().zip(&self.masks) {
            if (img.height(), img.width()) != (self.image_size, self.image_size) {
                return Err(Error::invalid("corpus image has the wrong size"));
            }
            for m in masks {
                if m.concept >= self.concepts.len() || m.mask.len() != n {
                    return Err(Error::invalid(format!("bad mask for concept {}", m.concept)));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.len());
        for (i, (img, masks)) in self.images.iter().zip(&self.masks).enumerate() {
            let image = format!("images/{i:05}.bin");
            save_image(&dir.join(&image), img)?;
            let mut files = Vec::new();
            for m in masks {
                let f = format!("masks/{i:05}_{:02}.bin", m.concept);
                save_mask(&dir.join(&f), m.concept, self.image_size, self.image_size, &m.mask)?;
                files.push(f);
            }
            entries.push(CorpusEntry { image, masks: files });
        }
        let manifest = CorpusManifest {
            image_size: self.image_size,
            concepts: self.concepts.clone(),
            entries,
        };
        fs::write(dir.join("corpus.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("corpus.json");
        let text = fs::read_to_string(&path).map_err(|_| Error::MissingArtifact {
            path: path.clone(),
            hint: "generate the corpus with the dissect command first".into(),
        })?;
        let manifest: CorpusManifest =
            serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        let mut corpus = ConceptCorpus {
            image_size: manifest.image_size,
            concepts: manifest.concepts,
            images: Vec::new(),
            masks: Vec::new(),
        };
        for e in manifest.entries {
            corpus.images.push(load_image(&dir.join(&e.image))?);
            let mut ms = Vec::new();
            for f in e.masks {
                let (concept, mask) = load_mask(&dir.join(&f))?;
                ms.push(ConceptMask { concept, mask });
            }
            corpus.masks.push(ms);
        }
        corpus.validate()?;
        Ok(corpus)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusEntry {
    image: String,
    masks: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusManifest {
    image_size: usize,
    concepts: Vec<Concept>,
    entries: Vec<CorpusEntry>,
}

fn union_into(acc: &mut Vec<(usize, Vec<bool>)>, concept: usize, mask: &[bool]) {
    match acc.iter_mut().find(|(c, _)| *c == concept) {
        Some((_, m)) => m.iter_mut().zip(mask).for_each(|(a, &b)| *a |= b),
        None => acc.push((concept, mask.to_vec())),
    }
}

/// Renders one corpus image and its concept masks.
pub fn generate_concept_image<R: Rng + ?Sized>(cfg: &CorpusConfig, rng: &mut R) -> (Image, Vec<ConceptMask>) {
    let size = cfg.image_size;
    let material = Material::ALL[rng.random_range(0..Material::ALL.len())];
    let count = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let side = |f: f64| ((size as f64 * f).round() as usize).clamp(3, size);
    let (lo, hi) = (side(cfg.min_side_frac), side(cfg.max_side_frac));
    let specs: Vec<ObjectSpec> = (0..count)
        .map(|_| ObjectSpec {
            shape: Shape::ALL[rng.random_range(0..Shape::ALL.len())],
            color: Color::ALL[rng.random_range(0..Color::ALL.len())],
            place: random_place(size, lo, hi.max(lo), rng),
        })
        .collect();
    let scene = render(size, material, &specs, rng);
    let mut acc: Vec<(usize, Vec<bool>)> = Vec::new();
    for o in &scene.objects {
        union_into(&mut acc, object_concept(o.spec.shape), &o.mask);
        union_into(&mut acc, part_concept(o.spec.shape, true), &o.rim);
        union_into(&mut acc, part_concept(o.spec.shape, false), &o.core());
        union_into(&mut acc, color_concept(o.spec.color), &o.mask);
    }
    union_into(&mut acc, material_concept(material), &scene.background);
    acc.sort_by_key(|(c, _)| *c);
    let masks = acc
        .into_iter()
        .filter(|(_, m)| m.iter().any(|&b| b))
        .map(|(concept, mask)| ConceptMask { concept, mask })
        .collect();
    (scene.image, masks)
}

/// Image `i` is drawn from stream `(seed, "corpus", i)`.
pub fn generate_concept_corpus(cfg: &CorpusConfig, seed: u64) -> Result<ConceptCorpus> {
    cfg.validate()?;
    let mut corpus = ConceptCorpus {
        image_size: cfg.image_size,
        concepts: concept_table(),
        images: Vec::with_capacity(cfg.count),
        masks: Vec::with_capacity(cfg.count),
    };
    for i in 0..cfg.count {
        let (img, masks) = generate_concept_image(cfg, &mut child(seed, "corpus", i as u64));
        corpus.images.push(img);
        corpus.masks.push(masks);
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Rect;
    use crate::rng::seeded;

    #[test]
    fn table_ids_are_consistent() {
        let t = concept_table();
        assert_eq!(t.len(), 28);
        assert!(t.iter().enumerate().all(|(i, c)| c.id == i));
        assert_eq!(t[color_concept(Color::Red)].name, "red");
        assert_eq!(t[part_concept(Shape::Ring, false)].name, "ring-core");
        assert_eq!(t[material_concept(Material::Noise)].category, Category::Material);
        for cat in Category::ALL {
            assert!(t.iter().any(|c| c.category == cat));
        }
    }

    #[test]
    fn masks_are_valid_and_objects_fit() {
        let cfg = CorpusConfig {
            count: 40,
            max_objects: 3,
            ..Default::default()
        };
        let c = generate_concept_corpus(&cfg, 1).unwrap();
        c.validate().unwrap();
        let n = 32 * 32;
        for masks in &c.masks {
            let mut objects = vec![false; n];
            for m in masks.iter().filter(|m| c.concepts[m.concept].category == Category::Object) {
                objects.iter_mut().zip(&m.mask).for_each(|(a, &b)| *a |= b);
            }
            let obj_area = objects.iter().filter(|&&b| b).count();
            assert!(obj_area <= n);
            let material: usize = masks
                .iter()
                .filter(|m| c.concepts[m.concept].category == Category::Material)
                .map(|m| m.mask.iter().filter(|&&b| b).count())
                .sum();
            assert_eq!(obj_area + material, n);
        }
        assert_eq!(c, generate_concept_corpus(&cfg, 1).unwrap());
    }

    #[test]
    fn red_square_color_mask_is_its_own_mask() {
        let spec = ObjectSpec {
            shape: Shape::Square,
            color: Color::Red,
            place: Rect::new(3, 3, 9, 9),
        };
        let scene = render(16, Material::Checker, &[spec], &mut seeded(0));
        let red: Vec<bool> = (0..256)
            .map(|i| scene.image.get(0, i / 16, i % 16) == 1.0 && scene.image.get(1, i / 16, i % 16) == 0.0 && scene.image.get(2, i / 16, i % 16) == 0.0)
            .collect();
        assert_eq!(red, scene.objects[0].mask);
    }

    #[test]
    fn save_load_round_trip() {
        let cfg = CorpusConfig {
            count: 3,
            image_size: 12,
            ..Default::default()
        };
        let c = generate_concept_corpus(&cfg, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        c.save(dir.path()).unwrap();
        assert_eq!(ConceptCorpus::load(dir.path()).unwrap(), c);
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            CorpusConfig { count: 0, ..Default::default() },
            CorpusConfig { min_objects: 3, max_objects: 2, ..Default::default() },
            CorpusConfig { max_side_frac: 1.5, ..Default::default() },
        ] {
            assert!(generate_concept_corpus(&cfg, 0).is_err());
        }
    }
}
