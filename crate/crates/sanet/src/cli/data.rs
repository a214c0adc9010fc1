//! Samples, dataset directories, the synthetic scene generator, and the
//! fixed visualization palette.

use std::fs;
use std::path::{Path, PathBuf};

use crate::cli::pnm::{read_pgm, read_ppm, write_pgm, write_ppm, Pgm, Ppm};
use crate::error::{arg_err, Error, Result};
use crate::tensor::{Elem, SeededRng, Shape, Tensor, IGNORE_INDEX};
use crate::train::Labels;

/// One image/label pair; images live as [0,1] reals after ingestion.
pub struct Sample {
    pub image: Tensor,
    pub labels: Labels,
}

/// Fixed color table: stable across runs, one entry per class.
pub fn palette(class: usize) -> [u8; 3] {
    const TABLE: [[u8; 3]; 16] = [
        [70, 70, 70],
        [220, 60, 60],
        [60, 200, 60],
        [60, 90, 220],
        [230, 200, 50],
        [190, 70, 200],
        [60, 200, 200],
        [240, 140, 40],
        [130, 220, 90],
        [200, 100, 140],
        [100, 120, 230],
        [160, 160, 60],
        [90, 60, 150],
        [210, 170, 130],
        [120, 200, 160],
        [150, 80, 60],
    ];
    if class < TABLE.len() {
        TABLE[class]
    } else {
        // procedural but fixed continuation
        let h = (class as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        [(h >> 16) as u8 | 0x40, (h >> 32) as u8 | 0x40, (h >> 48) as u8 | 0x40]
    }
}

pub fn image_to_tensor(img: &Ppm) -> Tensor {
    let shape = Shape::new(1, 3, img.h, img.w);
    let mut t = Tensor::zeros(shape);
    for y in 0..img.h {
        for x in 0..img.w {
            for c in 0..3 {
                t.data_mut()[shape.at(0, c, y, x)] =
                    img.rgb[(y * img.w + x) * 3 + c] as Elem / 255.0;
            }
        }
    }
    t
}

pub fn tensor_to_image(t: &Tensor) -> Ppm {
    let s = t.shape();
    let mut rgb = vec![0u8; s.h * s.w * 3];
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..3.min(s.c) {
                let v = (t.at(0, c, y, x) * 255.0).round().clamp(0.0, 255.0);
                rgb[(y * s.w + x) * 3 + c] = v as u8;
            }
        }
    }
    Ppm { w: s.w, h: s.h, rgb }
}

pub fn labels_to_color(labels: &Labels) -> Ppm {
    let mut rgb = vec![0u8; labels.h * labels.w * 3];
    for (i, &l) in labels.data.iter().enumerate() {
        let color = if l == IGNORE_INDEX { [0, 0, 0] } else { palette(l as usize) };
        rgb[i * 3..i * 3 + 3].copy_from_slice(&color);
    }
    Ppm { w: labels.w, h: labels.h, rgb }
}

/// Decode and validate one image/label pair.
pub fn load_sample(image_path: &Path, label_path: &Path, num_classes: usize) -> Result<Sample> {
    let img = read_ppm(image_path)?;
    let lab = read_pgm(label_path)?;
    if (img.w, img.h) != (lab.w, lab.h) {
        return Err(Error::Load(format!(
            "{}: image {}x{} vs labels {}x{}",
            image_path.display(),
            img.w,
            img.h,
            lab.w,
            lab.h
        )));
    }
    for &v in &lab.gray {
        if v != IGNORE_INDEX && v as usize >= num_classes {
            return Err(Error::Load(format!(
                "{}: label value {v} outside 0..{num_classes}",
                label_path.display()
            )));
        }
    }
    Ok(Sample {
        image: image_to_tensor(&img),
        labels: Labels::new(1, lab.h, lab.w, lab.gray)?,
    })
}

/// All `img_*.ppm` / `lab_*.pgm` pairs of a directory, name-sorted.
pub fn load_dataset(dir: &Path, num_classes: usize) -> Result<Vec<Sample>> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("img_") && n.ends_with(".ppm"))
                .unwrap_or(false)
        })
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Load(format!("{}: no img_*.ppm files", dir.display())));
    }
    names
        .iter()
        .map(|img_path| {
            let stem = img_path
                .file_name()
                .and_then(|n| n.to_str())
                .expect("filtered above");
            let lab = dir.join(stem.replacen("img_", "lab_", 1).replace(".ppm", ".pgm"));
            load_sample(img_path, &lab, num_classes)
        })
        .collect()
}

/// Per-channel mean and standard deviation over a dataset, for the
/// standardization ingestion mode.
pub fn channel_stats(samples: &[Sample]) -> ([Elem; 3], [Elem; 3]) {
    let mut sum = [0.0; 3];
    let mut sum_sq = [0.0; 3];
    let mut count: Elem = 0.0;
    for s in samples {
        let shape = s.image.shape();
        let plane = shape.plane();
        count += plane as Elem;
        for c in 0..3 {
            for px in 0..plane {
                let v = s.image.data()[c * plane + px];
                sum[c] += v;
                sum_sq[c] += v * v;
            }
        }
    }
    let mut mean = [0.0; 3];
    let mut std = [1.0; 3];
    for c in 0..3 {
        mean[c] = sum[c] / count;
        std[c] = (sum_sq[c] / count - mean[c] * mean[c]).max(1e-12).sqrt();
    }
    (mean, std)
}

pub fn standardize_image(image: &mut Tensor, mean: &[Elem; 3], std: &[Elem; 3]) {
    let shape = image.shape();
    let plane = shape.plane();
    for c in 0..3 {
        for px in 0..plane {
            let i = c * plane + px;
            image.data_mut()[i] = (image.data()[i] - mean[c]) / std[c];
        }
    }
}

#[derive(Clone, Copy)]
enum ShapeKind {
    Rect,
    Ellipse,
    Stripes,
}

/// Deterministic synthetic scenes: a textured background plus overlapping
/// rectangles, ellipses and stripe bands, each carrying one class with a
/// class-correlated texture. Small shapes appear deliberately.
pub fn generate_synthetic(
    count: usize,
    extents: (usize, usize),
    num_classes: usize,
    rng: &mut SeededRng,
    out_dir: &Path,
) -> Result<()> {
    let (h, w) = extents;
    if h % 8 != 0 || w % 8 != 0 {
        return arg_err(format!("synthetic extents {h}x{w} must be divisible by 8"));
    }
    if num_classes < 2 {
        return arg_err("synthetic scenes need at least two classes");
    }
    fs::create_dir_all(out_dir)?;
    for idx in 0..count {
        let (img, lab) = synth_scene(idx, (h, w), num_classes, rng);
        write_ppm(&out_dir.join(format!("img_{idx:05}.ppm")), &img)?;
        write_pgm(&out_dir.join(format!("lab_{idx:05}.pgm")), &lab)?;
    }
    Ok(())
}

fn noise_byte(base: [u8; 3], amp: i32, rng: &mut SeededRng) -> [u8; 3] {
    let mut out = [0u8; 3];
    for c in 0..3 {
        let n = rng.below((2 * amp + 1) as usize) as i32 - amp;
        out[c] = (base[c] as i32 + n).clamp(0, 255) as u8;
    }
    out
}

/// Class textures are two-color patterns drawn from a pool smaller than
/// the class count, so color alone does not identify a class; the pattern
/// (its period and orientation) does. Shallow color features are then
/// insufficient on their own and contextual features have to carry the
/// distinction.
fn class_texture(class: usize, y: usize, x: usize) -> [u8; 3] {
    const POOL: [[u8; 3]; 3] = [[210, 70, 60], [70, 200, 80], [70, 100, 220]];
    let a = POOL[(class - 1) % 3];
    let b = POOL[class % 3];
    let first = match (class - 1) % 4 {
        0 => (y / 2) % 2 == 0,              // horizontal stripes
        1 => (x / 2) % 2 == 0,              // vertical stripes
        2 => (y / 2 + x / 2) % 2 == 0,      // checker
        _ => y % 4 < 2 && x % 4 < 2,        // dots
    };
    if first {
        a
    } else {
        b
    }
}

fn synth_scene(
    index: usize,
    (h, w): (usize, usize),
    num_classes: usize,
    rng: &mut SeededRng,
) -> (Ppm, Pgm) {
    let mut rgb = vec![0u8; h * w * 3];
    let mut lab = vec![0u8; h * w];

    // background: class 0 texture
    let bg = palette(0);
    for px in 0..h * w {
        let v = noise_byte(bg, 14, rng);
        rgb[px * 3..px * 3 + 3].copy_from_slice(&v);
    }

    let shapes = 6 + rng.below(4);
    for s in 0..shapes {
        // the first shape of every image cycles the class list, so every
        // class appears in any reasonably sized dataset
        let class = if s == 0 {
            1 + (index % (num_classes - 1))
        } else {
            1 + rng.below(num_classes - 1)
        };
        let kind = match rng.below(3) {
            0 => ShapeKind::Rect,
            1 => ShapeKind::Ellipse,
            _ => ShapeKind::Stripes,
        };
        // deliberately include small objects; the rest are large enough
        // that shapes, not background, dominate the scene
        let small = rng.chance(0.25);
        let max_side = (2 * h.min(w) / 3).max(8);
        let (sh, sw) = if small {
            (3 + rng.below(6), 3 + rng.below(6))
        } else {
            (max_side / 2 + rng.below(max_side / 2), max_side / 2 + rng.below(max_side / 2))
        };
        let (sh, sw) = (sh.min(h), sw.min(w));
        let y0 = rng.below(h - sh + 1);
        let x0 = rng.below(w - sw + 1);
        for y in y0..y0 + sh {
            for x in x0..x0 + sw {
                let inside = match kind {
                    ShapeKind::Rect => true,
                    ShapeKind::Ellipse => {
                        let cy = y0 as Elem + sh as Elem / 2.0;
                        let cx = x0 as Elem + sw as Elem / 2.0;
                        let dy = (y as Elem + 0.5 - cy) / (sh as Elem / 2.0);
                        let dx = (x as Elem + 0.5 - cx) / (sw as Elem / 2.0);
                        dy * dy + dx * dx <= 1.0
                    }
                    ShapeKind::Stripes => (y - y0) % 4 < 2 || (x - x0) % 4 < 2,
                };
                if !inside {
                    continue;
                }
                let v = noise_byte(class_texture(class, y, x), 10, rng);
                let px = y * w + x;
                rgb[px * 3..px * 3 + 3].copy_from_slice(&v);
                lab[px] = class as u8;
            }
        }
    }
    (Ppm { w, h, rgb }, Pgm { w, h, gray: lab })
}
