//! Dense patch scoring over a frame and hit-map post-processing.

use rayon::prelude::*;

use super::model::{conv_valid, CnnModel};
use super::patches::{crop, window_origins};
use super::CnnError;
use crate::image::{BinaryMask, GrayImage, Point};
use crate::regions::{label_components, Region};

/// Sampling stride at inference time.
pub const INFER_STRIDE: usize = 3;

/// Per-pixel nucleus probability; zero where no patch was centred.
#[derive(Debug, Clone, PartialEq)]
pub struct HitMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl HitMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, values: vec![0.0; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.values[y * self.width + x] = v;
    }

    /// Probabilities scaled to the full 16-bit range.
    pub fn to_gray16(&self) -> Vec<u16> {
        self.values.iter().map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16).collect()
    }
}

/// Reference inference: one full forward pass per window.
pub fn infer_hitmap_direct(model: &CnnModel, frame: &GrayImage, stride: usize) -> Result<HitMap, CnnError> {
    let n = model.arch().input;
    let origins = window_origins(frame.width(), frame.height(), n, stride)?;
    let half = n / 2;
    let probs: Vec<f64> = origins
        .par_iter()
        .map(|&(x0, y0)| {
            let c = Point::new((x0 + half) as u32, (y0 + half) as u32);
            model.forward(&model.normalize(&crop(frame, c, n))).map(|p| p.1)
        })
        .collect::<Result<_, _>>()?;
    let mut map = HitMap::new(frame.width(), frame.height());
    for (&(x0, y0), p) in origins.iter().zip(probs) {
        map.set(x0 + half, y0 + half, p);
    }
    Ok(map)
}

/// Scores every `stride`-spaced window and writes its positive-class
/// probability at the window centre.
///
/// The convolutions are shared between overlapping windows: conv1 runs once
/// over the whole frame, and pool1/conv2 once per pooling phase (window
/// origin parity), so only pool2 and the dense layers run per window. The
/// arithmetic per output value is the same as [`infer_hitmap_direct`], so
/// the two agree bit for bit.
pub fn infer_hitmap(model: &CnnModel, frame: &GrayImage, stride: usize) -> Result<HitMap, CnnError> {
    let a = model.arch();
    let n = a.input;
    let origins = window_origins(frame.width(), frame.height(), n, stride)?;
    let (fw, fh) = (frame.width(), frame.height());
    let k = a.kernel;
    let [_, q1, s2, q2] = a.sides();
    let l = a.layout();
    let p = model.params();

    let x = model.normalize(frame.pixels());
    let (w1, h1) = (fw + 1 - k, fh + 1 - k);
    let mut c1 = vec![0.0; a.conv1 * w1 * h1];
    conv_valid(&x, 1, fw, fh, &p[l.w1.clone()], &p[l.b1.clone()], k, &mut c1);
    drop(x);

    let half = n / 2;
    let mut map = HitMap::new(fw, fh);
    for (px, py) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
        let group: Vec<(usize, usize)> =
            origins.iter().copied().filter(|&(x0, y0)| x0 % 2 == px && y0 % 2 == py).collect();
        if group.is_empty() {
            continue;
        }
        // pool1 for this phase: pm[c][v][u] = max c1[c][2v+py+dy][2u+px+dx]
        let (pw, ph) = ((w1 - px) / 2, (h1 - py) / 2);
        let mut pm = vec![0.0; a.conv1 * pw * ph];
        for c in 0..a.conv1 {
            let src = &c1[c * w1 * h1..(c + 1) * w1 * h1];
            for v in 0..ph {
                for u in 0..pw {
                    let at = |dy: usize, dx: usize| (2 * v + py + dy) * w1 + 2 * u + px + dx;
                    let mut best = at(0, 0);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        if src[at(dy, dx)] > src[best] {
                            best = at(dy, dx);
                        }
                    }
                    pm[c * pw * ph + v * pw + u] = src[best];
                }
            }
        }
        let (cw, ch) = (pw + 1 - k, ph + 1 - k);
        let mut c2 = vec![0.0; a.conv2 * cw * ch];
        conv_valid(&pm, a.conv1, pw, ph, &p[l.w2.clone()], &p[l.b2.clone()], k, &mut c2);
        drop(pm);

        let probs: Vec<f64> = group
            .par_iter()
            .map(|&(x0, y0)| {
                let (u0, v0) = (x0 / 2, y0 / 2);
                debug_assert!(u0 + q1 <= pw && v0 + q1 <= ph);
                let mut feat = vec![0.0; a.flat()];
                for o in 0..a.conv2 {
                    let plane = &c2[o * cw * ch..(o + 1) * cw * ch];
                    for m in 0..q2 {
                        for j in 0..q2 {
                            let at = |dy: usize, dx: usize| (v0 + 2 * m + dy) * cw + u0 + 2 * j + dx;
                            let mut best = plane[at(0, 0)];
                            for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                                if plane[at(dy, dx)] > best {
                                    best = plane[at(dy, dx)];
                                }
                            }
                            feat[o * q2 * q2 + m * q2 + j] = best;
                        }
                    }
                }
                debug_assert!(2 * q2 <= s2);
                let (_, z) = model.head(&feat);
                super::model::softmax(z)[1]
            })
            .collect();
        for (&(x0, y0), pr) in group.iter().zip(probs) {
            map.set(x0 + half, y0 + half, pr);
        }
    }
    Ok(map)
}

/// Pixel offsets of a digital disk: `dx^2 + dy^2 <= r^2`.
pub fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Grayscale dilation (local maximum) with a disk.
pub fn dilate(map: &HitMap, radius: usize) -> HitMap {
    let offs = disk_offsets(radius);
    let (w, h) = (map.width as isize, map.height as isize);
    let mut out = HitMap::new(map.width, map.height);
    for y in 0..h {
        for x in 0..w {
            let mut m = 0.0f64;
            for &(dx, dy) in &offs {
                let (sx, sy) = (x + dx, y + dy);
                if sx >= 0 && sy >= 0 && sx < w && sy < h {
                    m = m.max(map.values[(sy * w + sx) as usize]);
                }
            }
            out.values[(y * w + x) as usize] = m;
        }
    }
    out
}

/// Dilates, keeps pixels strictly above `cutoff`, and returns the
/// 8-connected components of at least `min_area` pixels.
pub fn hitmap_regions(map: &HitMap, dilation_radius: usize, cutoff: f64, min_area: usize) -> Vec<Region> {
    let d = dilate(map, dilation_radius);
    let mask = BinaryMask::from_vec(d.width, d.height, d.values.iter().map(|&v| v > cutoff).collect())
        .expect("same dimensions");
    label_components(&mask).into_iter().filter(|r| r.area() >= min_area).collect()
}

/// Detected nuclei as rounded region centroids.
pub fn postprocess_hitmap(map: &HitMap, dilation_radius: usize, cutoff: f64, min_area: usize) -> Vec<Point> {
    hitmap_regions(map, dilation_radius, cutoff, min_area)
        .iter()
        .map(|r| {
            let (cx, cy) = r.centroid();
            Point::new(cx.round() as u32, cy.round() as u32)
        })
        .collect()
}
