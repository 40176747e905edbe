//! Procedural scenes of flat-colored geometric objects on grayscale textured
//! backgrounds, rendered together with exact per-pixel masks. Both the
//! classification dataset and the concept corpus are built from these scenes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::image::{Image, Rect};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Square,
    Circle,
    Triangle,
    Cross,
    Diamond,
    Ring,
}

impl Shape {
    pub const ALL: [Shape; 6] = [
        Shape::Square,
        Shape::Circle,
        Shape::Triangle,
        Shape::Cross,
        Shape::Diamond,
        Shape::Ring,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Square => "square",
            Shape::Circle => "circle",
            Shape::Triangle => "triangle",
            Shape::Cross => "cross",
            Shape::Diamond => "diamond",
            Shape::Ring => "ring",
        }
    }

    /// Membership test in box-normalized coordinates `u, v ∈ [-1, 1]`
    /// (`v` grows downward).
    fn contains(self, u: f32, v: f32) -> bool {
        match self {
            Shape::Square => true,
            Shape::Circle => u * u + v * v <= 1.0,
            Shape::Triangle => u.abs() <= (v + 1.0) * 0.5,
            Shape::Cross => u.abs() <= 0.34 || v.abs() <= 0.34,
            Shape::Diamond => u.abs() + v.abs() <= 1.0,
            Shape::Ring => {
                let r2 = u * u + v * v;
                (0.3..=1.0).contains(&r2)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Magenta,
    Cyan,
}

impl Color {
    pub const ALL: [Color; 6] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Yellow,
        Color::Magenta,
        Color::Cyan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Magenta => "magenta",
            Color::Cyan => "cyan",
        }
    }

    pub fn rgb(self) -> [f32; 3] {
        match self {
            Color::Red => [1.0, 0.0, 0.0],
            Color::Green => [0.0, 1.0, 0.0],
            Color::Blue => [0.0, 0.0, 1.0],
            Color::Yellow => [1.0, 1.0, 0.0],
            Color::Magenta => [1.0, 0.0, 1.0],
            Color::Cyan => [0.0, 1.0, 1.0],
        }
    }
}

/// Background texture class. Backgrounds are gray (R = G = B) so they never
/// carry a palette color.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Material {
    Smooth,
    Stripes,
    Checker,
    Noise,
}

impl Material {
    pub const ALL: [Material; 4] = [Material::Smooth, Material::Stripes, Material::Checker, Material::Noise];

    pub fn name(self) -> &'static str {
        match self {
            Material::Smooth => "smooth",
            Material::Stripes => "stripes",
            Material::Checker => "checker",
            Material::Noise => "noise",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub color: Color,
    /// Square placement box; the shape is inscribed in it.
    pub place: Rect,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedObject {
    pub spec: ObjectSpec,
    /// Visible pixels after occlusion by later objects.
    pub mask: Vec<bool>,
    /// Visible pixels with a 4-neighbour outside the visible mask.
    pub rim: Vec<bool>,
}

impl RenderedObject {
    pub fn core(&self) -> Vec<bool> {
        self.mask.iter().zip(&self.rim).map(|(&m, &r)| m && !r).collect()
    }

    /// Tightest rectangle around the visible pixels, if any.
    pub fn bounding_box(&self, size: usize) -> Option<Rect> {
        mask_bounding_box(&self.mask, size, size)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub size: usize,
    pub image: Image,
    pub material: Material,
    pub objects: Vec<RenderedObject>,
    /// Pixels not covered by any object.
    pub background: Vec<bool>,
}

pub fn mask_bounding_box(mask: &[bool], height: usize, width: usize) -> Option<Rect> {
    let mut r: Option<Rect> = None;
    for y in 0..height {
        for x in 0..width {
            if mask[y * width + x] {
                r = Some(match r {
                    None => Rect::new(x, y, x + 1, y + 1),
                    Some(b) => Rect::new(b.x0.min(x), b.y0.min(y), b.x1.max(x + 1), b.y1.max(y + 1)),
                });
            }
        }
    }
    r
}

fn texture<R: Rng + ?Sized>(material: Material, size: usize, rng: &mut R) -> Vec<f32> {
    let base: f32 = rng.random_range(0.3..0.6);
    let contrast: f32 = rng.random_range(0.12..0.25);
    let mut out = vec![base; size * size];
    match material {
        Material::Smooth => {
            let slope: f32 = rng.random_range(-0.1..0.1);
            for y in 0..size {
                for x in 0..size {
                    out[y * size + x] = base + slope * (x as f32 / size as f32 - 0.5);
                }
            }
        }
        Material::Stripes => {
            let period = rng.random_range(3..6) as f32;
            let vertical = rng.random_bool(0.5);
            let phase: f32 = rng.random_range(0.0..period);
            for y in 0..size {
                for x in 0..size {
                    let t = if vertical { x } else { y } as f32 + phase;
                    let on = (t / period * 2.0).floor() as i64 % 2 == 0;
                    out[y * size + x] = base + if on { contrast } else { -contrast };
                }
            }
        }
        Material::Checker => {
            let cell = rng.random_range(2..5);
            let (ox, oy) = (rng.random_range(0..cell), rng.random_range(0..cell));
            for y in 0..size {
                for x in 0..size {
                    let on = ((x + ox) / cell + (y + oy) / cell) % 2 == 0;
                    out[y * size + x] = base + if on { contrast } else { -contrast };
                }
            }
        }
        Material::Noise => {
            for v in out.iter_mut() {
                *v = base + rng.random_range(-contrast..contrast);
            }
        }
    }
    out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    out
}

/// Random square placement with side in `[min_side, max_side]`, fully inside
/// the image.
pub fn random_place<R: Rng + ?Sized>(size: usize, min_side: usize, max_side: usize, rng: &mut R) -> Rect {
    let side = rng.random_range(min_side..=max_side.min(size));
    let x0 = rng.random_range(0..=size - side);
    let y0 = rng.random_range(0..=size - side);
    Rect::new(x0, y0, x0 + side, y0 + side)
}

/// Renders objects in order (later ones occlude earlier ones) over a texture.
pub fn render<R: Rng + ?Sized>(size: usize, material: Material, objects: &[ObjectSpec], rng: &mut R) -> Scene {
    let gray = texture(material, size, rng);
    let mut image = Image::new(3, size, size, [gray.clone(), gray.clone(), gray].concat()).expect("valid shape");
    let n = size * size;
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for (k, obj) in objects.iter().enumerate() {
        let p = obj.place;
        let side = p.width().max(1) as f32;
        let side_h = p.height().max(1) as f32;
        for y in p.y0..p.y1.min(size) {
            for x in p.x0..p.x1.min(size) {
                let u = ((x - p.x0) as f32 + 0.5) / side * 2.0 - 1.0;
                let v = ((y - p.y0) as f32 + 0.5) / side_h * 2.0 - 1.0;
                if obj.shape.contains(u, v) {
                    owner[y * size + x] = Some(k);
                }
            }
        }
    }
    let mut rendered: Vec<RenderedObject> = objects
        .iter()
        .map(|&spec| RenderedObject {
            spec,
            mask: vec![false; n],
            rim: vec![false; n],
        })
        .collect();
    for (i, o) in owner.iter().enumerate() {
        if let Some(k) = *o {
            rendered[k].mask[i] = true;
            let rgb = objects[k].color.rgb();
            for (c, &v) in rgb.iter().enumerate() {
                image.set(c, i / size, i % size, v);
            }
        }
    }
    for obj in &mut rendered {
        for y in 0..size {
            for x in 0..size {
                let i = y * size + x;
                if !obj.mask[i] {
                    continue;
                }
                let outside = |xx: isize, yy: isize| {
                    xx < 0 || yy < 0 || xx >= size as isize || yy >= size as isize || !obj.mask[yy as usize * size + xx as usize]
                };
                let (xi, yi) = (x as isize, y as isize);
                obj.rim[i] = outside(xi - 1, yi) || outside(xi + 1, yi) || outside(xi, yi - 1) || outside(xi, yi + 1);
            }
        }
    }
    let background = owner.iter().map(Option::is_none).collect();
    Scene {
        size,
        image,
        material,
        objects: rendered,
        background,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn pure_red_square_pixels_match_mask() {
        let spec = ObjectSpec {
            shape: Shape::Square,
            color: Color::Red,
            place: Rect::new(4, 5, 12, 13),
        };
        let scene = render(16, Material::Noise, &[spec], &mut seeded(1));
        let obj = &scene.objects[0];
        assert_eq!(obj.mask.iter().filter(|&&m| m).count(), 64);
        assert_eq!(obj.bounding_box(16), Some(Rect::new(4, 5, 12, 13)));
        for i in 0..256 {
            let (y, x) = (i / 16, i % 16);
            let px = [scene.image.get(0, y, x), scene.image.get(1, y, x), scene.image.get(2, y, x)];
            assert_eq!(px == [1.0, 0.0, 0.0], obj.mask[i]);
        }
        assert_eq!(obj.rim.iter().filter(|&&r| r).count(), 28);
    }

    #[test]
    fn occlusion_keeps_masks_disjoint() {
        let a = ObjectSpec {
            shape: Shape::Square,
            color: Color::Blue,
            place: Rect::new(0, 0, 10, 10),
        };
        let b = ObjectSpec {
            shape: Shape::Circle,
            color: Color::Green,
            place: Rect::new(5, 5, 15, 15),
        };
        let s = render(16, Material::Stripes, &[a, b], &mut seeded(2));
        for i in 0..256 {
            let owners = s.objects.iter().filter(|o| o.mask[i]).count() + s.background[i] as usize;
            assert_eq!(owners, 1);
        }
    }

    #[test]
    fn backgrounds_are_gray() {
        for m in Material::ALL {
            let s = render(12, m, &[], &mut seeded(3));
            for i in 0..144 {
                let (y, x) = (i / 12, i % 12);
                assert_eq!(s.image.get(0, y, x), s.image.get(1, y, x));
                assert_eq!(s.image.get(1, y, x), s.image.get(2, y, x));
            }
        }
    }
}
