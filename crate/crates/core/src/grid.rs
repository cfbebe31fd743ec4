//! Exhaustive grid search over the four trained segmenter parameters,
//! maximizing macro F on the training frames.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::dataset::FrameRecord;
use crate::denoise::denoise;
use crate::eval::{aggregate, match_regions, MatchOutcome, MetricsReport};
use crate::regions::Region;
use crate::segment::{grow_regions, passes_final, GrowthKey, SegError, SegParams};

/// One candidate setting of the trained parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub min_size: usize,
    pub min_avg_intensity: u8,
    pub max_avg_intensity: u8,
    pub min_solidity: f64,
}

impl GridPoint {
    /// Lexicographic order on (min_size, min_avg, max_avg, min_solidity).
    pub fn tuple_cmp(&self, other: &Self) -> Ordering {
        (self.min_size, self.min_avg_intensity, self.max_avg_intensity)
            .cmp(&(other.min_size, other.min_avg_intensity, other.max_avg_intensity))
            .then(self.min_solidity.total_cmp(&other.min_solidity))
    }

    pub fn apply(&self, base: &SegParams) -> SegParams {
        SegParams {
            min_size: self.min_size,
            min_avg_intensity: self.min_avg_intensity,
            max_avg_intensity: self.max_avg_intensity,
            min_solidity: self.min_solidity,
            ..base.clone()
        }
    }
}

impl From<&SegParams> for GridPoint {
    fn from(p: &SegParams) -> Self {
        Self {
            min_size: p.min_size,
            min_avg_intensity: p.min_avg_intensity,
            max_avg_intensity: p.max_avg_intensity,
            min_solidity: p.min_solidity,
        }
    }
}

/// Value lists per trained parameter; the grid is their product.
#[derive(Debug, Clone, PartialEq)]
pub struct SegGrid {
    pub min_size: Vec<usize>,
    pub min_avg_intensity: Vec<u8>,
    pub max_avg_intensity: Vec<u8>,
    pub min_solidity: Vec<f64>,
}

impl Default for SegGrid {
    fn default() -> Self {
        Self {
            min_size: vec![50, 100, 150, 200, 250, 300],
            min_avg_intensity: vec![0, 10, 20, 30],
            max_avg_intensity: vec![100, 120, 140, 160],
            min_solidity: (0..8).map(|k| (80 + 2 * k) as f64 / 100.0).collect(),
        }
    }
}

impl SegGrid {
    /// Valid grid points (min_avg < max_avg), sorted lexicographically.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &min_size in &self.min_size {
            for &min_avg_intensity in &self.min_avg_intensity {
                for &max_avg_intensity in &self.max_avg_intensity {
                    for &min_solidity in &self.min_solidity {
                        if min_avg_intensity < max_avg_intensity {
                            out.push(GridPoint { min_size, min_avg_intensity, max_avg_intensity, min_solidity });
                        }
                    }
                }
            }
        }
        out.sort_by(GridPoint::tuple_cmp);
        out.dedup_by(|a, b| a.tuple_cmp(b) == Ordering::Equal);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub point: GridPoint,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

/// Picks the highest F; ties go to the lexicographically smallest tuple.
/// `results` need not be sorted.
pub fn select_best(results: &[GridResult]) -> Result<&GridResult, SegError> {
    results
        .iter()
        .min_by(|a, b| b.f_measure.total_cmp(&a.f_measure).then_with(|| a.point.tuple_cmp(&b.point)))
        .ok_or(SegError::EmptyGrid)
}

/// Scores every point with `score` and returns the best plus the full,
/// lexicographically sorted result table.
pub fn grid_search_by<F>(points: &[GridPoint], score: F) -> Result<(GridResult, Vec<GridResult>), SegError>
where
    F: Fn(&GridPoint) -> (f64, f64, f64) + Sync,
{
    if points.is_empty() {
        return Err(SegError::EmptyGrid);
    }
    let mut results: Vec<GridResult> = points
        .par_iter()
        .map(|pt| {
            let (precision, recall, f_measure) = score(pt);
            GridResult { point: *pt, precision, recall, f_measure }
        })
        .collect();
    results.sort_by(|a, b| a.point.tuple_cmp(&b.point));
    let best = select_best(&results)?.clone();
    Ok((best, results))
}

/// Outcome of [`grid_search`].
#[derive(Debug, Clone)]
pub struct GridSearch {
    pub best: GridResult,
    pub best_params: SegParams,
    pub results: Vec<GridResult>,
}

/// Per-frame outcomes for every grid point, in `points` order.
///
/// Region growth depends only on (max_avg, min_solidity) and the base
/// settings, so it runs once per such pair; min_size and min_avg only enter
/// the final filter.
fn frame_outcomes(frame: &FrameRecord, points: &[GridPoint], base: &SegParams) -> Result<Vec<MatchOutcome>, SegError> {
    let img = &frame.edf_image;
    let denoised = denoise(img, base.noise_window)?;
    let mut out = vec![MatchOutcome::default(); points.len()];
    let mut done = vec![false; points.len()];
    for i in 0..points.len() {
        if done[i] {
            continue;
        }
        let key = GrowthKey { max_avg_intensity: points[i].max_avg_intensity, min_solidity: points[i].min_solidity };
        let grown = grow_regions(&denoised, img, &base.threshold_schedule, base.seed_min_size, &key);
        for j in i..points.len() {
            let pj = &points[j];
            if done[j] || pj.max_avg_intensity != key.max_avg_intensity || pj.min_solidity != key.min_solidity {
                continue;
            }
            let params = pj.apply(base);
            let regions: Vec<Region> = grown
                .iter()
                .filter(|m| passes_final(m, &params) && !m.region.touches_border(img.width(), img.height()))
                .map(|m| m.region.clone())
                .collect();
            out[j] = match_regions(regions.as_slice(), &frame.gt_points);
            done[j] = true;
        }
    }
    Ok(out)
}

/// Scores the full baseline pipeline on `train` for every grid point
/// (schedule, seed size and window come from `base`) and returns the point
/// with the highest macro F.
pub fn grid_search(train: &[&FrameRecord], grid: &SegGrid, base: &SegParams) -> Result<GridSearch, SegError> {
    let points = grid.points();
    if points.is_empty() {
        return Err(SegError::EmptyGrid);
    }
    if train.is_empty() {
        return Err(SegError::EmptyTrainingSet);
    }
    for p in &points {
        p.apply(base).validate()?;
    }
    let per_frame: Vec<Vec<MatchOutcome>> =
        train.par_iter().map(|f| frame_outcomes(f, &points, base)).collect::<Result<_, _>>()?;
    let reports: Vec<MetricsReport> = (0..points.len())
        .map(|j| {
            let rows: Vec<(String, MatchOutcome)> =
                train.iter().zip(&per_frame).map(|(f, o)| (f.frame_id.clone(), o[j].clone())).collect();
            aggregate(&rows).expect("non-empty training set")
        })
        .collect();
    let (best, results) = grid_search_by(&points, |pt| {
        let j = points.iter().position(|q| q.tuple_cmp(pt) == Ordering::Equal).expect("grid point");
        let r = &reports[j];
        (r.macro_precision, r.macro_recall, r.f_measure)
    })?;
    Ok(GridSearch { best_params: best.point.apply(base), best, results })
}

/// Column order of [`results_csv`].
pub const GRID_HEADER: &str = "min_size,min_avg_intensity,max_avg_intensity,min_solidity,precision,recall,f_measure";

pub fn results_csv(results: &[GridResult]) -> String {
    let mut s = format!("{GRID_HEADER}\n");
    for r in results {
        s.push_str(&format!(
            "{},{},{},{},{:.6},{:.6},{:.6}\n",
            r.point.min_size,
            r.point.min_avg_intensity,
            r.point.max_avg_intensity,
            r.point.min_solidity,
            r.precision,
            r.recall,
            r.f_measure
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Grade, Split};
    use crate::eval::match_regions;
    use crate::segment::fixtures::disks;
    use crate::segment::segment_frame;

    fn gp(min_size: usize, min_solidity: f64) -> GridPoint {
        GridPoint { min_size, min_avg_intensity: 10, max_avg_intensity: 120, min_solidity }
    }

    #[test]
    fn singleton_grid() {
        let (best, all) = grid_search_by(&[gp(150, 0.88)], |_| (0.5, 0.25, 1.0 / 3.0)).unwrap();
        assert_eq!(best.point, gp(150, 0.88));
        assert_eq!(best.f_measure, 1.0 / 3.0);
        assert_eq!(all.len(), 1);
    }

    #[test]
    fn ties_go_to_smallest_tuple() {
        let pts = [gp(200, 0.9), gp(100, 0.9), gp(100, 0.85)];
        let (best, _) = grid_search_by(&pts, |_| (1.0, 1.0, 1.0)).unwrap();
        assert_eq!(best.point, gp(100, 0.85));
        assert!(matches!(grid_search_by(&[], |_| (0.0, 0.0, 0.0)), Err(SegError::EmptyGrid)));
    }

    #[test]
    fn default_grid_contains_published_optimum() {
        let pts = SegGrid::default().points();
        assert_eq!(pts.len(), 6 * 4 * 4 * 8);
        assert!(pts.iter().any(|p| p.tuple_cmp(&gp(150, 0.88)) == Ordering::Equal));
    }

    fn frame(id: &str, img: crate::image::GrayImage, pts: &[(i64, i64)]) -> FrameRecord {
        FrameRecord::new(id, Grade::Lsil, Split::Train, img, pts).unwrap()
    }

    #[test]
    fn matches_exhaustive_rescoring() {
        // A big disk, a small disk and a dim disk; gt marks the first two
        // plus a spot with nothing in it.
        let f1 = frame(
            "frame001",
            disks(120, 90, &[(30.0, 30.0, 12.0, 40), (85.0, 30.0, 6.0, 50), (60.0, 70.0, 10.0, 110)]),
            &[(30, 30), (85, 30), (100, 80)],
        );
        let f2 = frame("frame002", disks(100, 80, &[(50.0, 40.0, 9.0, 60)]), &[(50, 40)]);
        let grid = SegGrid {
            min_size: vec![50, 150, 300],
            min_avg_intensity: vec![0, 45],
            max_avg_intensity: vec![100, 120],
            min_solidity: vec![0.8, 0.9],
        };
        let base = SegParams::default();
        let train = [&f1, &f2];
        let gs = grid_search(&train, &grid, &base).unwrap();
        let mut best_f = f64::NEG_INFINITY;
        for r in &gs.results {
            let params = r.point.apply(&base);
            let rows: Vec<_> = train
                .iter()
                .map(|f| {
                    let regions = segment_frame(&f.edf_image, &params).unwrap();
                    (f.frame_id.clone(), match_regions(regions.as_slice(), &f.gt_points))
                })
                .collect();
            let rep = aggregate(&rows).unwrap();
            assert_eq!(rep.f_measure, r.f_measure, "{:?}", r.point);
            best_f = best_f.max(rep.f_measure);
        }
        assert_eq!(gs.best.f_measure, best_f);
        assert!(best_f > 0.5);
        let csv = results_csv(&gs.results);
        assert_eq!(csv.lines().count(), gs.results.len() + 1);
    }

    #[test]
    fn dominant_point_wins() {
        // min_size 300 drops the only nucleus; min_size 100 keeps it.
        let f = frame("frame003", disks(80, 80, &[(40.0, 40.0, 12.0, 40)]), &[(40, 40)]);
        let grid = SegGrid {
            min_size: vec![100, 600],
            min_avg_intensity: vec![10],
            max_avg_intensity: vec![120],
            min_solidity: vec![0.88],
        };
        let gs = grid_search(&[&f], &grid, &SegParams::default()).unwrap();
        assert_eq!(gs.best.point.min_size, 100);
        assert_eq!(gs.best.f_measure, 1.0);
        assert!(matches!(grid_search(&[], &grid, &SegParams::default()), Err(SegError::EmptyTrainingSet)));
    }
}
