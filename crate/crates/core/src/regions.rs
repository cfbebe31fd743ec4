//! Thresholding, 8-connected component labelling and region shape
//! measures.

use std::cmp::Ordering;
use std::collections::VecDeque;

use thiserror::Error;

use crate::image::{BinaryMask, GrayImage, Point};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegionError {
    #[error("solidity of an empty pixel set is undefined")]
    EmptyRegion,
}

/// Foreground = pixels strictly darker than `t`.
pub fn binarize_below(img: &GrayImage, t: u8) -> BinaryMask {
    let data = img.pixels().iter().map(|&v| v < t).collect();
    BinaryMask::from_vec(img.width(), img.height(), data).expect("same dimensions")
}

fn raster_cmp(a: &Point, b: &Point) -> Ordering {
    (a.y, a.x).cmp(&(b.y, b.x))
}

/// A connected pixel set, stored in raster order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pixels: Vec<Point>,
}

impl Region {
    /// Wraps an arbitrary non-empty pixel set. Connectivity is not checked.
    pub fn from_pixels(mut pixels: Vec<Point>) -> Self {
        pixels.sort_unstable_by(raster_cmp);
        pixels.dedup();
        Self { pixels }
    }

    pub fn pixels(&self) -> &[Point] {
        &self.pixels
    }

    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    pub fn contains(&self, p: Point) -> bool {
        self.pixels.binary_search_by(|q| raster_cmp(q, &p)).is_ok()
    }

    /// Top-most, then left-most pixel.
    pub fn first_pixel(&self) -> Point {
        self.pixels[0]
    }

    pub fn centroid(&self) -> (f64, f64) {
        let n = self.pixels.len() as f64;
        let (sx, sy) = self.pixels.iter().fold((0u64, 0u64), |(sx, sy), p| (sx + p.x as u64, sy + p.y as u64));
        (sx as f64 / n, sy as f64 / n)
    }

    pub fn mean_intensity(&self, img: &GrayImage) -> f64 {
        let sum: u64 = self.pixels.iter().map(|p| img.get(p.x as usize, p.y as usize) as u64).sum();
        sum as f64 / self.pixels.len() as f64
    }

    pub fn solidity(&self) -> f64 {
        solidity_sorted(&self.pixels)
    }

    pub fn touches_border(&self, width: usize, height: usize) -> bool {
        self.pixels.iter().any(|p| p.x == 0 || p.y == 0 || p.x as usize + 1 == width || p.y as usize + 1 == height)
    }

    pub fn to_mask(&self, width: usize, height: usize) -> BinaryMask {
        BinaryMask::from_points(width, height, &self.pixels)
    }
}

/// Labels 8-connected foreground components. Returns a label map
/// (0 = background, `k` = `regions[k - 1]`) and the regions ordered by
/// their top-most, then left-most pixel.
pub fn label_map(mask: &BinaryMask) -> (Vec<u32>, Vec<Region>) {
    let (w, h) = (mask.width(), mask.height());
    let data = mask.data();
    let mut labels = vec![0u32; w * h];
    let mut regions = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !data[start] || labels[start] != 0 {
            continue;
        }
        let id = regions.len() as u32 + 1;
        labels[start] = id;
        queue.push_back(start);
        let mut pixels = Vec::new();
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            pixels.push(Point::new(x as u32, y as u32));
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if data[j] && labels[j] == 0 {
                        labels[j] = id;
                        queue.push_back(j);
                    }
                }
            }
        }
        regions.push(Region::from_pixels(pixels));
    }
    (labels, regions)
}

/// Maximal 8-connected components of `mask`, ordered by top-most then
/// left-most pixel.
pub fn label_components(mask: &BinaryMask) -> Vec<Region> {
    label_map(mask).1
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex hull (Andrew's monotone chain) without collinear vertices,
/// counter-clockwise in a y-up frame. Degenerate inputs give one or two
/// vertices.
pub fn convex_hull(points: &[(i64, i64)]) -> Vec<(i64, i64)> {
    let mut pts = points.to_vec();
    pts.sort_unstable();
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let mut hull: Vec<(i64, i64)> = Vec::with_capacity(pts.len() * 2);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(i64, i64)>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    if hull.len() < 2 {
        // all points collinear collapse to their two extremes
        return vec![pts[0], pts[pts.len() - 1]];
    }
    hull
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Number of integer lattice points inside or on the polygon `hull`
/// (Pick's theorem: interior + boundary = A + B/2 + 1).
pub fn lattice_points_in_hull(hull: &[(i64, i64)]) -> u64 {
    match hull.len() {
        0 => 0,
        1 => 1,
        n => {
            let mut twice_area = 0i64;
            let mut boundary = 0i64;
            for i in 0..n {
                let (a, b) = (hull[i], hull[(i + 1) % n]);
                twice_area += a.0 * b.1 - a.1 * b.0;
                boundary += gcd(b.0 - a.0, b.1 - a.1);
            }
            ((twice_area.abs() + boundary) / 2 + 1) as u64
        }
    }
}

fn solidity_sorted(pixels: &[Point]) -> f64 {
    // Only the left- and right-most pixel of each row can be hull vertices.
    let mut extremes = Vec::new();
    let mut i = 0;
    while i < pixels.len() {
        let y = pixels[i].y;
        let mut j = i;
        let (mut lo, mut hi) = (pixels[i].x, pixels[i].x);
        while j < pixels.len() && pixels[j].y == y {
            lo = lo.min(pixels[j].x);
            hi = hi.max(pixels[j].x);
            j += 1;
        }
        extremes.push((lo as i64, y as i64));
        if hi != lo {
            extremes.push((hi as i64, y as i64));
        }
        i = j;
    }
    let hull = convex_hull(&extremes);
    pixels.len() as f64 / lattice_points_in_hull(&hull) as f64
}

/// Area over the number of pixels whose centres lie inside or on the convex
/// hull of the pixel centres. 1 for convex sets.
pub fn solidity(pixels: &[Point]) -> Result<f64, RegionError> {
    if pixels.is_empty() {
        return Err(RegionError::EmptyRegion);
    }
    let mut sorted = pixels.to_vec();
    sorted.sort_unstable_by(raster_cmp);
    sorted.dedup();
    Ok(solidity_sorted(&sorted))
}
