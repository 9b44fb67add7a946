//! Synthetic segmentation data: textured geometric shapes on a noisy
//! background, with exact rasterized masks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Standard deviation of the additive pixel noise.
pub const NOISE_STD: f64 = 0.05;
/// Chance that a given shape class is drawn in an image.
pub const PRESENCE: f64 = 0.8;
/// At most this many shapes are drawn per image.
pub const MAX_SHAPES: usize = 3;
pub const MIN_CLASSES: usize = 2;
pub const MAX_CLASSES: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `H×W×1`, values in `[0, 1]` on a 1/255 grid.
    pub image: Tensor,
    /// Row-major class labels in `0..k`.
    pub mask: Vec<usize>,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[1]
    }
}

/// Foreground shape drawn for class `1 + index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Disk,
    Rectangle,
    Annulus,
    Triangle,
}

pub const SHAPES: [Shape; 4] = [Shape::Disk, Shape::Rectangle, Shape::Annulus, Shape::Triangle];

/// Intensity band `(lo, hi)` of class `class` among `k` classes. Bands are
/// disjoint, with the background darkest.
pub fn intensity_band(class: usize, k: usize) -> (f64, f64) {
    if class == 0 {
        return (0.05, 0.2);
    }
    let step = 0.7 / (k - 1) as f64;
    let lo = 0.25 + step * (class - 1) as f64;
    (lo, lo + 0.6 * step)
}

fn check_classes(k: usize) -> Result<()> {
    if !(MIN_CLASSES..=MAX_CLASSES).contains(&k) {
        return Err(TensorError::contract(format!(
            "class count {k} outside {MIN_CLASSES}..={MAX_CLASSES}"
        )));
    }
    Ok(())
}

/// Inside-test for one drawn shape, at pixel centres.
struct Placed {
    shape: Shape,
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    tri: [(f64, f64); 3],
}

impl Placed {
    fn random(shape: Shape, h: usize, w: usize, r: &mut ChaCha8Rng) -> Self {
        let s = h.min(w) as f64;
        let (a, b) = match shape {
            Shape::Disk => {
                let rad = r.gen_range(0.14..0.26) * s;
                (rad, rad)
            }
            Shape::Rectangle => (r.gen_range(0.12..0.25) * s, r.gen_range(0.12..0.25) * s),
            Shape::Annulus => {
                let outer = r.gen_range(0.18..0.3) * s;
                (outer, outer * r.gen_range(0.45..0.65))
            }
            Shape::Triangle => {
                let rad = r.gen_range(0.24..0.36) * s;
                (rad, rad)
            }
        };
        let ext = a.max(b);
        let cy = r.gen_range(ext..(h as f64 - ext).max(ext + 1e-9));
        let cx = r.gen_range(ext..(w as f64 - ext).max(ext + 1e-9));
        let rot = r.gen_range(0.0..std::f64::consts::TAU);
        let tri = [0.0, 1.0, 2.0].map(|i| {
            let t = rot + i * std::f64::consts::TAU / 3.0 + r.gen_range(-0.35..0.35);
            (cy + a * t.sin(), cx + a * t.cos())
        });
        Self { shape, cy, cx, a, b, tri }
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        match self.shape {
            Shape::Disk => dy * dy + dx * dx <= self.a * self.a,
            Shape::Rectangle => dy.abs() <= self.a && dx.abs() <= self.b,
            Shape::Annulus => {
                let d = dy * dy + dx * dx;
                d <= self.a * self.a && d >= self.b * self.b
            }
            Shape::Triangle => {
                let side = |p: (f64, f64), q: (f64, f64)| (q.1 - p.1) * (y - p.0) - (q.0 - p.0) * (x - p.1);
                let [p, q, s] = self.tri;
                let (d1, d2, d3) = (side(p, q), side(q, s), side(s, p));
                let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                !(neg && pos)
            }
        }
    }
}

/// Picks the shape classes for one image: each class independently with
/// probability [`PRESENCE`], at most [`MAX_SHAPES`], never none.
fn pick_classes(k: usize, r: &mut ChaCha8Rng) -> Vec<usize> {
    loop {
        let mut chosen: Vec<usize> = (1..k).filter(|_| r.gen_bool(PRESENCE)).collect();
        if chosen.is_empty() {
            continue;
        }
        chosen.shuffle(r);
        chosen.truncate(MAX_SHAPES);
        return chosen;
    }
}

fn generate_one(h: usize, w: usize, k: usize, r: &mut ChaCha8Rng) -> Sample {
    let noise = Normal::new(0.0, NOISE_STD).expect("valid sigma");
    let mut mask = vec![0usize; h * w];
    let (lo, hi) = intensity_band(0, k);
    let bg = r.gen_range(lo..hi);
    let mut clean = vec![bg; h * w];
    for class in pick_classes(k, r) {
        let shape = SHAPES[class - 1];
        let placed = Placed::random(shape, h, w, r);
        let (lo, hi) = intensity_band(class, k);
        let base = r.gen_range(lo..hi);
        // low-amplitude stripes give each shape a texture
        let (fy, fx, phase) = (r.gen_range(0.2..0.8), r.gen_range(0.2..0.8), r.gen_range(0.0..6.3));
        let amp = 0.25 * (hi - lo);
        for y in 0..h {
            for x in 0..w {
                let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
                if placed.contains(py, px) {
                    mask[y * w + x] = class;
                    clean[y * w + x] = base + amp * (fy * py + fx * px + phase).sin();
                }
            }
        }
    }
    let data = clean
        .into_iter()
        .map(|v| quantize(v + noise.sample(r)))
        .collect();
    Sample {
        image: Tensor::new(&[h, w, 1], data).expect("extents"),
        mask,
    }
}

/// Clamps to `[0, 1]` and rounds to the nearest multiple of 1/255.
pub fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// `n` samples of size `h×w` with `k` classes (background plus `k − 1`
/// shapes), reproducible from `seed`.
pub fn generate_dataset(n: usize, h: usize, w: usize, k: usize, seed: u64) -> Result<Vec<Sample>> {
    check_classes(k)?;
    if n == 0 || h < 8 || w < 8 {
        return Err(TensorError::contract(format!(
            "need n ≥ 1 and extents ≥ 8, got n={n} {h}×{w}"
        )));
    }
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| generate_one(h, w, k, &mut r)).collect())
}

/// Class statistics of a generated set.
#[derive(Debug, Clone, PartialEq)]
pub struct Audit {
    /// Share of all pixels carrying each class.
    pub pixel_fraction: Vec<f64>,
    /// Share of samples in which each class appears.
    pub presence: Vec<f64>,
    /// Smallest number of foreground pixels in any sample.
    pub min_foreground: usize,
}

pub fn audit(samples: &[Sample], k: usize) -> Audit {
    let mut pixels = vec![0usize; k];
    let mut present = vec![0usize; k];
    let mut total = 0;
    let mut min_foreground = usize::MAX;
    for s in samples {
        let mut seen = vec![false; k];
        for &l in &s.mask {
            pixels[l] += 1;
            seen[l] = true;
        }
        for (p, s) in present.iter_mut().zip(seen) {
            *p += s as usize;
        }
        total += s.mask.len();
        min_foreground = min_foreground.min(s.mask.iter().filter(|&&l| l != 0).count());
    }
    let n = samples.len().max(1) as f64;
    Audit {
        pixel_fraction: pixels.iter().map(|&p| p as f64 / total.max(1) as f64).collect(),
        presence: present.iter().map(|&p| p as f64 / n).collect(),
        min_foreground: if samples.is_empty() { 0 } else { min_foreground },
    }
}

/// One of the eight flips/quarter-turns of the square, applied to a sample.
/// `t` in `0..8`: bit 0 mirrors columns, bits 1–2 count quarter turns.
pub fn dihedral(sample: &Sample, t: usize) -> Sample {
    let (h, w) = (sample.height(), sample.width());
    let turns = (t >> 1) & 3;
    let (oh, ow) = if turns % 2 == 1 { (w, h) } else { (h, w) };
    let src_of = |y: usize, x: usize| -> usize {
        // undo the rotation, then the mirror
        let (sy, mut sx) = match turns {
            0 => (y, x),
            1 => (x, w - 1 - y),
            2 => (h - 1 - y, w - 1 - x),
            _ => (h - 1 - x, y),
        };
        if t & 1 == 1 {
            sx = w - 1 - sx;
        }
        sy * w + sx
    };
    let mut img = Vec::with_capacity(h * w);
    let mut mask = Vec::with_capacity(h * w);
    for y in 0..oh {
        for x in 0..ow {
            let s = src_of(y, x);
            img.push(sample.image.data()[s]);
            mask.push(sample.mask[s]);
        }
    }
    Sample {
        image: Tensor::new(&[oh, ow, 1], img).expect("extents"),
        mask,
    }
}
