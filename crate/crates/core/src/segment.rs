//! Iterative-thresholding nucleus segmenter.
//!
//! Nuclei are dark on a light background. The denoised frame is binarized
//! below an increasing series of thresholds; dark seeds found at low levels
//! grow as the threshold rises, as long as they stay solid enough and not
//! too bright. When growth would merge several tracked regions, the merged
//! region is accepted only if it is more solid than every one of its parts.
//! Regions that may not grow are frozen at their last accepted extent.

use std::fmt;

use thiserror::Error;

use crate::denoise::{denoise, DenoiseError};
use crate::image::GrayImage;
use crate::regions::{binarize_below, label_map, Region};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SegError {
    #[error("invalid segmentation parameters: {0}")]
    InvalidParams(String),
    #[error("parameter grid is empty")]
    EmptyGrid,
    #[error("no training frames")]
    EmptyTrainingSet,
    #[error(transparent)]
    Denoise(#[from] DenoiseError),
}

/// Segmenter settings. The first four are the trained parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SegParams {
    pub min_size: usize,
    pub min_avg_intensity: u8,
    pub max_avg_intensity: u8,
    pub min_solidity: f64,
    /// Strictly increasing binarization levels.
    pub threshold_schedule: Vec<u8>,
    /// Smallest component that may start a new region during iteration.
    pub seed_min_size: usize,
    /// Side of the square denoising window; odd.
    pub noise_window: usize,
}

impl Default for SegParams {
    fn default() -> Self {
        Self {
            min_size: 150,
            min_avg_intensity: 10,
            max_avg_intensity: 120,
            min_solidity: 0.88,
            threshold_schedule: (1..=14).map(|k| k * 10).collect(),
            seed_min_size: 15,
            noise_window: 5,
        }
    }
}

impl SegParams {
    pub fn validate(&self) -> Result<(), SegError> {
        let bad = |m: String| Err(SegError::InvalidParams(m));
        if self.min_avg_intensity >= self.max_avg_intensity {
            return bad(format!(
                "min_avg_intensity {} must be below max_avg_intensity {}",
                self.min_avg_intensity, self.max_avg_intensity
            ));
        }
        if !(self.min_solidity > 0.0 && self.min_solidity <= 1.0) {
            return bad(format!("min_solidity {} outside (0, 1]", self.min_solidity));
        }
        if self.threshold_schedule.is_empty() {
            return bad("empty threshold schedule".into());
        }
        if self.threshold_schedule.windows(2).any(|w| w[0] >= w[1]) {
            return bad("threshold schedule must be strictly increasing".into());
        }
        if self.noise_window < 3 || self.noise_window.is_multiple_of(2) {
            return bad(format!("noise_window {} must be odd and >= 3", self.noise_window));
        }
        Ok(())
    }
}

impl fmt::Display for SegParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "min_size={} min_avg={} max_avg={} min_solidity={}",
            self.min_size, self.min_avg_intensity, self.max_avg_intensity, self.min_solidity
        )
    }
}

/// A region together with the measurements the segmenter filters on.
#[derive(Debug, Clone)]
pub struct Measured {
    pub region: Region,
    pub mean_intensity: f64,
    pub solidity: f64,
}

impl Measured {
    fn new(region: Region, source: &GrayImage) -> Self {
        Self { mean_intensity: region.mean_intensity(source), solidity: region.solidity(), region }
    }
}

/// Settings that affect region growth, as opposed to the final filter.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct GrowthKey {
    pub max_avg_intensity: u8,
    pub min_solidity: f64,
}

struct Tracked {
    m: Measured,
    frozen: bool,
}

/// Runs the threshold schedule over `denoised`, measuring intensity on
/// `source`. Returns every tracked region before the final filter.
pub(crate) fn grow_regions(
    denoised: &GrayImage,
    source: &GrayImage,
    schedule: &[u8],
    seed_min_size: usize,
    key: &GrowthKey,
) -> Vec<Measured> {
    let accepts = |m: &Measured| m.solidity >= key.min_solidity && m.mean_intensity <= key.max_avg_intensity as f64;
    let mut tracked: Vec<Tracked> = Vec::new();
    for &t in schedule {
        let mask = binarize_below(denoised, t);
        let (labels, comps) = label_map(&mask);
        let w = denoised.width();
        // Every tracked region sits inside exactly one component.
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); comps.len()];
        for (k, tr) in tracked.iter().enumerate() {
            let p = tr.m.region.first_pixel();
            let label = labels[p.y as usize * w + p.x as usize];
            debug_assert!(label > 0, "threshold masks are nested");
            members[label as usize - 1].push(k);
        }
        let mut slots: Vec<Option<Tracked>> = tracked.into_iter().map(Some).collect();
        let mut next = Vec::with_capacity(slots.len());
        for (comp, inside) in comps.into_iter().zip(members) {
            match inside.as_slice() {
                [] => {
                    if comp.area() >= seed_min_size {
                        next.push(Tracked { m: Measured::new(comp, source), frozen: false });
                    }
                }
                [k] => {
                    let mut tr = slots[*k].take().expect("each region visited once");
                    if !tr.frozen && comp.area() > tr.m.region.area() {
                        let grown = Measured::new(comp, source);
                        if accepts(&grown) {
                            tr.m = grown;
                        } else {
                            tr.frozen = true;
                        }
                    }
                    next.push(tr);
                }
                many => {
                    let mut parts: Vec<Tracked> =
                        many.iter().map(|&k| slots[k].take().expect("visited once")).collect();
                    let merged = Measured::new(comp, source);
                    let all_active = parts.iter().all(|p| !p.frozen);
                    let more_solid = parts.iter().all(|p| merged.solidity > p.m.solidity);
                    if all_active && more_solid && accepts(&merged) {
                        next.push(Tracked { m: merged, frozen: false });
                    } else {
                        for p in &mut parts {
                            p.frozen = true;
                        }
                        next.extend(parts);
                    }
                }
            }
        }
        tracked = next;
    }
    tracked.into_iter().map(|t| t.m).collect()
}

pub(crate) fn passes_final(m: &Measured, p: &SegParams) -> bool {
    m.region.area() >= p.min_size
        && m.solidity >= p.min_solidity
        && m.mean_intensity >= p.min_avg_intensity as f64
        && m.mean_intensity <= p.max_avg_intensity as f64
}

fn sorted_regions(mut regions: Vec<Region>) -> Vec<Region> {
    regions.sort_by_key(|r| {
        let p = r.first_pixel();
        (p.y, p.x)
    });
    regions
}

/// Segments nuclei: denoise, iterate the threshold schedule, then keep the
/// regions meeting the size, solidity and intensity-band constraints.
/// Output regions are pairwise disjoint, ordered by top-most pixel.
pub fn iterative_segment(img: &GrayImage, params: &SegParams) -> Result<Vec<Region>, SegError> {
    params.validate()?;
    let denoised = denoise(img, params.noise_window)?;
    let key = GrowthKey { max_avg_intensity: params.max_avg_intensity, min_solidity: params.min_solidity };
    let grown = grow_regions(&denoised, img, &params.threshold_schedule, params.seed_min_size, &key);
    Ok(sorted_regions(grown.into_iter().filter(|m| passes_final(m, params)).map(|m| m.region).collect()))
}

/// Drops every region with a pixel on the outermost row or column.
pub fn remove_boundary_regions(regions: Vec<Region>, width: usize, height: usize) -> Vec<Region> {
    regions.into_iter().filter(|r| !r.touches_border(width, height)).collect()
}

/// Full baseline pipeline for one frame.
pub fn segment_frame(img: &GrayImage, params: &SegParams) -> Result<Vec<Region>, SegError> {
    let regions = iterative_segment(img, params)?;
    Ok(remove_boundary_regions(regions, img.width(), img.height()))
}


#[cfg(test)]
mod tests {
    use super::fixtures::disks;
    use super::*;
    use crate::image::Point;
    use proptest::prelude::*;

    #[test]
    fn blank_image_has_no_regions() {
        let img = GrayImage::filled(64, 64, 255);
        assert!(iterative_segment(&img, &SegParams::default()).unwrap().is_empty());
    }

    #[test]
    fn one_dark_disk() {
        let img = disks(80, 80, &[(40.0, 40.0, 12.0, 40)]);
        let regions = iterative_segment(&img, &SegParams::default()).unwrap();
        assert_eq!(regions.len(), 1);
        assert!(regions[0].contains(Point::new(40, 40)));
        assert!(regions[0].solidity() > 0.9);
    }

    #[test]
    fn bridged_disks_stay_apart() {
        // Two disks at level 40 joined by a 1-px bridge at level 125: the
        // bridge only shows up at t=130, and the dumbbell it forms is far
        // less solid than either disk.
        let mut img = disks(120, 60, &[(35.0, 30.0, 12.0, 40), (85.0, 30.0, 12.0, 40)]);
        for x in 47..=73 {
            img.set(x, 30, 125);
        }
        let params = SegParams { noise_window: 3, ..SegParams::default() };
        let regions = iterative_segment(&img, &params).unwrap();
        assert_eq!(regions.len(), 2, "{regions:?}");
        assert!(regions[0].contains(Point::new(35, 30)));
        assert!(regions[1].contains(Point::new(85, 30)));
        let merged = Region::from_pixels(regions.iter().flat_map(|r| r.pixels().to_vec()).collect());
        assert!(merged.solidity() < regions[0].solidity().min(regions[1].solidity()));
    }

    #[test]
    fn bright_and_small_blobs_filtered() {
        // level 130 is above max_avg, radius 5 is below min_size
        let img = disks(120, 60, &[(30.0, 30.0, 12.0, 130), (90.0, 30.0, 5.0, 40)]);
        let params = SegParams { threshold_schedule: (1..=15).map(|k| k * 10).collect(), ..SegParams::default() };
        assert!(iterative_segment(&img, &params).unwrap().is_empty());
    }

    #[test]
    fn boundary_removal() {
        let img = disks(100, 60, &[(8.0, 30.0, 12.0, 40), (60.0, 30.0, 12.0, 40)]);
        let all = iterative_segment(&img, &SegParams::default()).unwrap();
        assert_eq!(all.len(), 2);
        let kept = remove_boundary_regions(all.clone(), 100, 60);
        assert_eq!(kept.len(), 1);
        assert!(kept[0].contains(Point::new(60, 30)));
        let interior = vec![all[1].clone()];
        assert_eq!(remove_boundary_regions(interior.clone(), 100, 60), interior);
        let touching = Region::from_pixels(vec![Point::new(0, 5), Point::new(1, 5)]);
        assert!(remove_boundary_regions(vec![touching], 100, 60).is_empty());
    }

    #[test]
    fn invalid_params_rejected() {
        let p = SegParams { min_avg_intensity: 120, max_avg_intensity: 120, ..SegParams::default() };
        assert!(p.validate().is_err());
        let p = SegParams { min_solidity: 0.0, ..SegParams::default() };
        assert!(p.validate().is_err());
        let p = SegParams { threshold_schedule: vec![10, 10], ..SegParams::default() };
        assert!(p.validate().is_err());
        let p = SegParams { noise_window: 4, ..SegParams::default() };
        assert!(iterative_segment(&GrayImage::filled(8, 8, 0), &p).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn output_regions_are_disjoint_and_valid(
            blobs in proptest::collection::vec((5.0f64..75.0, 5.0f64..55.0, 3.0f64..14.0, 0u8..160), 0..7),
            min_size in 20usize..120,
            min_solidity in 0.6f64..0.95,
        ) {
            let img = disks(80, 60, &blobs);
            let params = SegParams { min_size, min_solidity, ..SegParams::default() };
            let regions = iterative_segment(&img, &params).unwrap();
            let mut seen = std::collections::HashSet::new();
            for r in &regions {
                prop_assert!(r.area() >= params.min_size);
                prop_assert!(r.solidity() >= params.min_solidity);
                let m = r.mean_intensity(&img);
                prop_assert!(m >= params.min_avg_intensity as f64 && m <= params.max_avg_intensity as f64);
                for p in r.pixels() {
                    prop_assert!(seen.insert(*p), "pixel {:?} in two regions", p);
                }
            }
            for r in remove_boundary_regions(regions, 80, 60) {
                prop_assert!(!r.touches_border(80, 60));
            }
        }
    }
}
