//! Sliding-window patch sampling with distance-based labels.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::CnnError;
use crate::dataset::FrameRecord;
use crate::image::{GrayImage, Point};

/// Patch side in pixels.
pub const PATCH_SIZE: usize = 75;
/// Sampling stride for training patches.
pub const TRAIN_STRIDE: usize = 15;
/// A patch is positive when its centre is within this distance of a
/// marked nucleus (inclusive).
pub const POSITIVE_RADIUS: f64 = 15.0;

/// Top-left corners of every `patch` x `patch` window on the `stride` grid
/// that fits entirely inside a `width` x `height` frame.
pub fn window_origins(
    width: usize,
    height: usize,
    patch: usize,
    stride: usize,
) -> Result<Vec<(usize, usize)>, CnnError> {
    if stride == 0 {
        return Err(CnnError::InvalidStride);
    }
    if width < patch || height < patch {
        return Err(CnnError::FrameTooSmall { width, height, patch });
    }
    let nx = (width - patch) / stride + 1;
    let ny = (height - patch) / stride + 1;
    Ok((0..ny).flat_map(|j| (0..nx).map(move |i| (i * stride, j * stride))).collect())
}

/// One sampled window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchRef {
    /// Index into [`PatchSet::frames`].
    pub source: usize,
    pub center: Point,
    pub positive: bool,
}

/// Labels the windows of one frame. The centre of a window with top-left
/// corner `(x0, y0)` is `(x0 + patch/2, y0 + patch/2)`.
pub fn extract_patches(
    frame: &FrameRecord,
    stride: usize,
    patch: usize,
    pos_radius: f64,
) -> Result<Vec<PatchRef>, CnnError> {
    let img = &frame.edf_image;
    let half = (patch / 2) as u32;
    let r2 = pos_radius * pos_radius;
    Ok(window_origins(img.width(), img.height(), patch, stride)?
        .into_iter()
        .map(|(x0, y0)| {
            let center = Point::new(x0 as u32 + half, y0 as u32 + half);
            let positive = frame.gt_points.iter().any(|g| (center.dist2(*g) as f64) <= r2);
            PatchRef { source: 0, center, positive }
        })
        .collect())
}

/// Training patches over a set of frames, stored as references into the
/// frames rather than pixel copies.
#[derive(Debug, Clone)]
pub struct PatchSet<'a> {
    pub frames: Vec<&'a FrameRecord>,
    pub patches: Vec<PatchRef>,
    pub patch_size: usize,
    /// Mean intensity of the source frames on the [0, 1] scale.
    pub mean: f64,
}

impl<'a> PatchSet<'a> {
    pub fn build(
        frames: &[&'a FrameRecord],
        stride: usize,
        patch_size: usize,
        pos_radius: f64,
    ) -> Result<Self, CnnError> {
        let mut patches = Vec::new();
        for (i, f) in frames.iter().enumerate() {
            patches.extend(
                extract_patches(f, stride, patch_size, pos_radius)?.into_iter().map(|p| PatchRef { source: i, ..p }),
            );
        }
        let (sum, n) = frames.iter().fold((0u64, 0u64), |(s, n), f| {
            let px = f.edf_image.pixels();
            (s + px.iter().map(|&v| v as u64).sum::<u64>(), n + px.len() as u64)
        });
        let mean = if n == 0 { 0.0 } else { sum as f64 / n as f64 / 255.0 };
        Ok(Self { frames: frames.to_vec(), patches, patch_size, mean })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.patches.iter().filter(|p| p.positive).count()
    }

    pub fn positive_fraction(&self) -> f64 {
        if self.patches.is_empty() {
            0.0
        } else {
            self.positives() as f64 / self.len() as f64
        }
    }

    /// Raw pixels of patch `i`, row-major.
    pub fn pixels(&self, i: usize) -> Vec<u8> {
        let p = &self.patches[i];
        crop(&self.frames[p.source].edf_image, p.center, self.patch_size)
    }

    /// Pixels scaled to [0, 1] minus `mean`.
    pub fn normalized(&self, i: usize, mean: f64) -> Vec<f64> {
        self.pixels(i).into_iter().map(|v| v as f64 / 255.0 - mean).collect()
    }

    /// Keeps a seeded random subset of at most `max` patches, preserving
    /// their original order.
    pub fn subsample(&mut self, max: usize, seed: u64) {
        if self.patches.len() <= max {
            return;
        }
        let mut idx: Vec<usize> = (0..self.patches.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(max);
        idx.sort_unstable();
        self.patches = idx.into_iter().map(|i| self.patches[i]).collect();
    }

    /// Seeded subset with `per_class` positives and `per_class` negatives
    /// (or as many as exist).
    pub fn balanced(&self, per_class: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pos: Vec<PatchRef> = self.patches.iter().copied().filter(|p| p.positive).collect();
        let mut neg: Vec<PatchRef> = self.patches.iter().copied().filter(|p| !p.positive).collect();
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        pos.truncate(per_class);
        neg.truncate(per_class);
        let mut patches = pos;
        patches.extend(neg);
        Self { patches, ..self.clone() }
    }
}

/// `size` x `size` crop centred on `center`; the window must fit.
pub fn crop(img: &GrayImage, center: Point, size: usize) -> Vec<u8> {
    let half = size / 2;
    let (x0, y0) = (center.x as usize - half, center.y as usize - half);
    let w = img.width();
    let px = img.pixels();
    let mut out = Vec::with_capacity(size * size);
    for y in y0..y0 + size {
        out.extend_from_slice(&px[y * w + x0..y * w + x0 + size]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Grade, Split};
    use proptest::prelude::*;

    fn frame(w: usize, h: usize, pts: &[(i64, i64)]) -> FrameRecord {
        FrameRecord::new("frame000", Grade::Lsil, Split::Train, GrayImage::filled(w, h, 128), pts).unwrap()
    }

    #[test]
    fn full_frame_grid_count() {
        // floor((1280-75)/15)+1 = 81, floor((960-75)/15)+1 = 60
        let o = window_origins(1280, 960, 75, 15).unwrap();
        assert_eq!(o.len(), 81 * 60);
        assert_eq!(o.len(), 4860);
        assert_eq!(*o.last().unwrap(), (1200, 885));
    }

    #[test]
    fn no_points_no_positives() {
        let ps = extract_patches(&frame(200, 150, &[]), 15, 75, 15.0).unwrap();
        assert!(!ps.is_empty());
        assert!(ps.iter().all(|p| !p.positive));
    }

    #[test]
    fn too_small_and_bad_stride() {
        assert!(matches!(extract_patches(&frame(74, 100, &[]), 15, 75, 15.0), Err(CnnError::FrameTooSmall { .. })));
        assert!(matches!(window_origins(100, 100, 75, 0), Err(CnnError::InvalidStride)));
    }

    #[test]
    fn radius_is_inclusive() {
        // first centre is (37, 37); a point 15 px to the right is positive
        let ps = extract_patches(&frame(75, 75, &[(52, 37)]), 15, 75, 15.0).unwrap();
        assert_eq!(ps.len(), 1);
        assert!(ps[0].positive);
        let ps = extract_patches(&frame(75, 75, &[(53, 37)]), 15, 75, 15.0).unwrap();
        assert!(!ps[0].positive);
    }

    #[test]
    fn crop_reads_the_right_window() {
        let img = GrayImage::new(5, 5, (0..25).collect()).unwrap();
        assert_eq!(crop(&img, Point::new(2, 2), 3), vec![6, 7, 8, 11, 12, 13, 16, 17, 18]);
    }

    proptest! {
        #[test]
        fn labels_rederivable(pts in proptest::collection::vec((0i64..200, 0i64..160), 0..12), stride in 1usize..40) {
            let f = frame(200, 160, &pts);
            let set = PatchSet::build(&[&f], stride, 75, 15.0).unwrap();
            for p in &set.patches {
                let min_d2 = f.gt_points.iter().map(|g| p.center.dist2(*g)).min();
                prop_assert_eq!(p.positive, min_d2.is_some_and(|d| d <= 225));
                prop_assert!(p.center.x >= 37 && p.center.x as usize + 37 < 200);
                prop_assert!(p.center.y >= 37 && p.center.y as usize + 37 < 160);
            }
        }
    }
}
