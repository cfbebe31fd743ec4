//! Detection scoring against annotated nucleus points.
//!
//! Three encodings are accepted: a point list, one binary mask (split into
//! 8-connected regions), or a list of per-nucleus masks. Both encodings are
//! scored by maximum-cardinality bipartite matching, so the result does not
//! depend on the order detections or points are listed in.
//!
//! * Points: detection `d` may pair with point `p` iff `|d - p| < radius`
//!   (strict, so a distance of exactly 10 px is a miss).
//! * Regions: region `R` may pair with `p` iff `p`'s pixel lies in `R`. A
//!   region containing no point at all is a false positive; a region whose
//!   points were all claimed by other regions counts as neither TP nor FP.

use thiserror::Error;

use crate::image::{BinaryMask, Point};
use crate::regions::{label_components, Region};

/// Matching radius for point detections, in pixels.
pub const DEFAULT_RADIUS: f64 = 10.0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("mask is {got_w}x{got_h} but the frame is {want_w}x{want_h}")]
    DimensionMismatch { got_w: usize, got_h: usize, want_w: usize, want_h: usize },
    #[error("mask #{0} in the mask list is empty")]
    EmptyMask(usize),
    #[error("detection point ({x}, {y}) lies outside the frame")]
    PointOutOfBounds { x: u32, y: u32 },
    #[error("nothing to aggregate")]
    EmptyInput,
}

/// Detections for one frame.
#[derive(Debug, Clone)]
pub enum DetectionSet {
    Points(Vec<Point>),
    SingleMask(BinaryMask),
    MaskList(Vec<BinaryMask>),
}

impl DetectionSet {
    /// Scores against `gt` on a `width` x `height` frame.
    pub fn evaluate(&self, gt: &[Point], width: usize, height: usize) -> Result<MatchOutcome, EvalError> {
        match self {
            DetectionSet::Points(pts) => {
                if let Some(p) = pts.iter().find(|p| p.x as usize >= width || p.y as usize >= height) {
                    return Err(EvalError::PointOutOfBounds { x: p.x, y: p.y });
                }
                Ok(match_points(pts, gt, DEFAULT_RADIUS))
            }
            DetectionSet::SingleMask(mask) => {
                check_dims(mask, width, height)?;
                let regions = label_components(mask);
                Ok(match_regions(regions.as_slice(), gt))
            }
            DetectionSet::MaskList(masks) => match_masks(masks, gt, width, height),
        }
    }
}

/// Counts and pairing for one frame.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchOutcome {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub n_detections: usize,
    pub n_gt: usize,
    /// (detection or region index, gt index), sorted by detection index.
    pub pairing: Vec<(usize, usize)>,
}

/// Maximum-cardinality matching of left vertices onto `n_right` right
/// vertices (Kuhn's augmenting paths). Left vertices are tried in index
/// order and each adjacency list in its given order, which makes the result
/// deterministic.
fn max_matching(adj: &[Vec<usize>], n_right: usize) -> Vec<(usize, usize)> {
    fn augment(u: usize, adj: &[Vec<usize>], visited: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &v in &adj[u] {
            if visited[v] {
                continue;
            }
            visited[v] = true;
            if owner[v].is_none_or(|w| augment(w, adj, visited, owner)) {
                owner[v] = Some(u);
                return true;
            }
        }
        false
    }

    let mut owner: Vec<Option<usize>> = vec![None; n_right];
    let mut visited = vec![false; n_right];
    for u in 0..adj.len() {
        if adj[u].is_empty() {
            continue;
        }
        visited.iter_mut().for_each(|v| *v = false);
        augment(u, adj, &mut visited, &mut owner);
    }
    let mut pairs: Vec<(usize, usize)> = owner.iter().enumerate().filter_map(|(v, u)| u.map(|u| (u, v))).collect();
    pairs.sort_unstable();
    pairs
}

/// Scores point detections. Candidate pairs are ordered by distance, then
/// gt index.
pub fn match_points(detections: &[Point], gt: &[Point], radius: f64) -> MatchOutcome {
    let r2 = radius * radius;
    let adj: Vec<Vec<usize>> = detections
        .iter()
        .map(|d| {
            let mut near: Vec<(u64, usize)> =
                gt.iter().enumerate().map(|(j, g)| (d.dist2(*g), j)).filter(|&(d2, _)| (d2 as f64) < r2).collect();
            near.sort_unstable();
            near.into_iter().map(|(_, j)| j).collect()
        })
        .collect();
    let pairing = max_matching(&adj, gt.len());
    let tp = pairing.len();
    MatchOutcome {
        tp,
        fp: detections.len() - tp,
        fn_: gt.len() - tp,
        n_detections: detections.len(),
        n_gt: gt.len(),
        pairing,
    }
}

/// Anything that can answer "does region `i` contain pixel `p`".
pub trait RegionSet {
    fn len(&self) -> usize;
    fn contains(&self, region: usize, p: Point) -> bool;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl RegionSet for [BinaryMask] {
    fn len(&self) -> usize {
        <[BinaryMask]>::len(self)
    }

    fn contains(&self, region: usize, p: Point) -> bool {
        let m = &self[region];
        (p.x as usize) < m.width() && (p.y as usize) < m.height() && m.get(p.x as usize, p.y as usize)
    }
}

impl RegionSet for [Region] {
    fn len(&self) -> usize {
        <[Region]>::len(self)
    }

    fn contains(&self, region: usize, p: Point) -> bool {
        self[region].contains(p)
    }
}

/// Region-based scoring over any [`RegionSet`].
pub fn match_regions<R: RegionSet + ?Sized>(regions: &R, gt: &[Point]) -> MatchOutcome {
    let adj: Vec<Vec<usize>> =
        (0..regions.len()).map(|i| (0..gt.len()).filter(|&j| regions.contains(i, gt[j])).collect()).collect();
    let fp = adj.iter().filter(|a| a.is_empty()).count();
    let pairing = max_matching(&adj, gt.len());
    let tp = pairing.len();
    MatchOutcome { tp, fp, fn_: gt.len() - tp, n_detections: regions.len(), n_gt: gt.len(), pairing }
}

fn check_dims(m: &BinaryMask, width: usize, height: usize) -> Result<(), EvalError> {
    if m.width() != width || m.height() != height {
        return Err(EvalError::DimensionMismatch {
            got_w: m.width(),
            got_h: m.height(),
            want_w: width,
            want_h: height,
        });
    }
    Ok(())
}

/// Scores a list of per-nucleus masks sized `width` x `height`.
pub fn match_masks(
    regions: &[BinaryMask],
    gt: &[Point],
    width: usize,
    height: usize,
) -> Result<MatchOutcome, EvalError> {
    for (i, m) in regions.iter().enumerate() {
        check_dims(m, width, height)?;
        if m.is_empty() {
            return Err(EvalError::EmptyMask(i));
        }
    }
    Ok(match_regions(regions, gt))
}

fn ratio(num: usize, den: usize, both_empty: bool) -> f64 {
    if den == 0 {
        if both_empty {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

fn precision_recall(tp: usize, fp: usize, fn_: usize) -> (f64, f64) {
    let both_empty = tp + fp == 0 && tp + fn_ == 0;
    (ratio(tp, tp + fp, both_empty), ratio(tp, tp + fn_, both_empty))
}

/// Per-frame (precision, recall). A zero denominator yields 1 only when the
/// frame has neither detections nor gt points, else 0.
pub fn frame_metrics(outcome: &MatchOutcome) -> (f64, f64) {
    precision_recall(outcome.tp, outcome.fp, outcome.fn_)
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f_measure(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameMetrics {
    pub frame_id: String,
    pub outcome: MatchOutcome,
    pub precision: f64,
    pub recall: f64,
}

/// Per-frame and pooled scores. The headline F uses the macro averages.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_frame: Vec<FrameMetrics>,
    pub macro_precision: f64,
    pub precision_std: f64,
    pub macro_recall: f64,
    pub recall_std: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub f_measure: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Folds per-frame outcomes into a report. Frames are sorted by id first,
/// so the result does not depend on input order.
pub fn aggregate(per_frame: &[(String, MatchOutcome)]) -> Result<MetricsReport, EvalError> {
    if per_frame.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut frames: Vec<FrameMetrics> = per_frame
        .iter()
        .map(|(id, o)| {
            let (precision, recall) = frame_metrics(o);
            FrameMetrics { frame_id: id.clone(), outcome: o.clone(), precision, recall }
        })
        .collect();
    frames.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));
    let (macro_precision, precision_std) = mean_std(frames.iter().map(|f| f.precision));
    let (macro_recall, recall_std) = mean_std(frames.iter().map(|f| f.recall));
    let tp = frames.iter().map(|f| f.outcome.tp).sum();
    let fp = frames.iter().map(|f| f.outcome.fp).sum();
    let fn_ = frames.iter().map(|f| f.outcome.fn_).sum();
    let (micro_precision, micro_recall) = precision_recall(tp, fp, fn_);
    Ok(MetricsReport {
        per_frame: frames,
        macro_precision,
        precision_std,
        macro_recall,
        recall_std,
        micro_precision,
        micro_recall,
        f_measure: f_measure(macro_precision, macro_recall),
        tp,
        fp,
        fn_,
    })
}

/// Column order of [`MetricsReport::to_csv`].
pub const REPORT_HEADER: &str = "frame_id,n_gt,n_detections,tp,fp,fn,precision,recall,f_measure,precision_std,recall_std,micro_precision,micro_recall";

/// `frame_id` value of the summary row.
pub const SUMMARY_ROW: &str = "ALL";

impl MetricsReport {
    /// One row per frame (sorted by id, std and micro columns empty), then
    /// the `ALL` summary row with summed counts and macro/micro scores.
    /// Reals are printed with 6 decimals.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{REPORT_HEADER}\n");
        for f in &self.per_frame {
            let o = &f.outcome;
            s.push_str(&format!(
                "{},{},{},{},{},{},{:.6},{:.6},{:.6},,,,\n",
                f.frame_id,
                o.n_gt,
                o.n_detections,
                o.tp,
                o.fp,
                o.fn_,
                f.precision,
                f.recall,
                f_measure(f.precision, f.recall)
            ));
        }
        let n_gt: usize = self.per_frame.iter().map(|f| f.outcome.n_gt).sum();
        let n_det: usize = self.per_frame.iter().map(|f| f.outcome.n_detections).sum();
        s.push_str(&format!(
            "{SUMMARY_ROW},{n_gt},{n_det},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            self.tp,
            self.fp,
            self.fn_,
            self.macro_precision,
            self.macro_recall,
            self.f_measure,
            self.precision_std,
            self.recall_std,
            self.micro_precision,
            self.micro_recall
        ));
        s
    }
}

/// Headline numbers read back from a report CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportSummary {
    pub precision: f64,
    pub precision_std: f64,
    pub recall: f64,
    pub recall_std: f64,
}

impl ReportSummary {
    pub fn f_measure(&self) -> f64 {
        f_measure(self.precision, self.recall)
    }
}

/// Extracts the summary row of a report produced by [`MetricsReport::to_csv`].
pub fn parse_report_summary(text: &str) -> Option<ReportSummary> {
    let mut lines = text.lines();
    if lines.next()?.trim() != REPORT_HEADER {
        return None;
    }
    let row = lines.find(|l| l.starts_with(&format!("{SUMMARY_ROW},")))?;
    let cols: Vec<&str> = row.split(',').collect();
    let num = |i: usize| cols.get(i)?.parse::<f64>().ok();
    Some(ReportSummary { precision: num(6)?, recall: num(7)?, precision_std: num(9)?, recall_std: num(10)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(x: u32, y: u32) -> Point {
        Point::new(x, y)
    }

    /// Exhaustive maximum matching: every detection either stays unmatched
    /// or takes any still-free compatible point.
    fn brute_max(compatible: &dyn Fn(usize, usize) -> bool, n_det: usize, n_gt: usize) -> usize {
        fn go(i: usize, used: &mut Vec<bool>, n_det: usize, c: &dyn Fn(usize, usize) -> bool) -> usize {
            if i == n_det {
                return 0;
            }
            let mut best = go(i + 1, used, n_det, c);
            for j in 0..used.len() {
                if !used[j] && c(i, j) {
                    used[j] = true;
                    best = best.max(1 + go(i + 1, used, n_det, c));
                    used[j] = false;
                }
            }
            best
        }
        go(0, &mut vec![false; n_gt], n_det, compatible)
    }

    #[test]
    fn identical_points_all_match() {
        let gt = vec![p(5, 5), p(40, 12), p(90, 90)];
        let o = match_points(&gt, &gt, 10.0);
        assert_eq!((o.tp, o.fp, o.fn_), (3, 0, 0));
    }

    #[test]
    fn distance_ten_is_a_miss() {
        let o = match_points(&[p(50, 50)], &[p(50, 60)], 10.0);
        assert_eq!((o.tp, o.fp, o.fn_), (0, 1, 1));
        let o = match_points(&[p(50, 50)], &[p(50, 59)], 10.0);
        assert_eq!((o.tp, o.fp, o.fn_), (1, 0, 0));
    }

    #[test]
    fn crossing_configuration_beats_greedy() {
        // d0 is nearest to g0, but g0 is the only point d1 can reach.
        // Nearest-first would take (d0,g0) and strand d1.
        let dets = vec![p(20, 20), p(12, 20)];
        let gt = vec![p(17, 20), p(27, 20)];
        let o = match_points(&dets, &gt, 10.0);
        assert_eq!(o.tp, 2);
        assert_eq!(o.pairing, vec![(0, 1), (1, 0)]);

        let dets = vec![p(20, 20), p(12, 20), p(29, 25)];
        let gt = vec![p(17, 20), p(27, 20), p(36, 27)];
        let c = |i: usize, j: usize| dets[i].dist2(gt[j]) < 100;
        let o = match_points(&dets, &gt, 10.0);
        assert_eq!(o.tp, brute_max(&c, 3, 3));
        assert_eq!(o.tp, 3);
    }

    fn disk_mask(w: usize, h: usize, cx: i64, cy: i64, r: i64) -> BinaryMask {
        let mut m = BinaryMask::new(w, h);
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                if (x - cx).pow(2) + (y - cy).pow(2) <= r * r {
                    m.set(x as usize, y as usize, true);
                }
            }
        }
        m
    }

    #[test]
    fn one_region_two_points() {
        let m = disk_mask(40, 40, 20, 20, 8);
        let o = match_masks(&[m], &[p(18, 20), p(23, 20)], 40, 40).unwrap();
        assert_eq!((o.tp, o.fp, o.fn_), (1, 0, 1));
    }

    #[test]
    fn two_overlapping_regions_two_points() {
        let a = disk_mask(40, 40, 20, 20, 8);
        let b = disk_mask(40, 40, 21, 20, 8);
        let o = match_masks(&[a, b], &[p(18, 20), p(23, 20)], 40, 40).unwrap();
        assert_eq!((o.tp, o.fp, o.fn_), (2, 0, 0));
    }

    #[test]
    fn region_with_only_claimed_points_is_neither() {
        let a = disk_mask(40, 40, 20, 20, 3);
        let b = disk_mask(40, 40, 20, 20, 4);
        let o = match_masks(&[a, b], &[p(20, 20)], 40, 40).unwrap();
        assert_eq!((o.tp, o.fp, o.fn_), (1, 0, 0));
        let c = disk_mask(40, 40, 5, 5, 2);
        let o = match_masks(&[c], &[p(20, 20)], 40, 40).unwrap();
        assert_eq!((o.tp, o.fp, o.fn_), (0, 1, 1));
    }

    #[test]
    fn no_regions() {
        let o = match_masks(&[], &[p(1, 1), p(2, 2), p(3, 3)], 10, 10).unwrap();
        assert_eq!((o.tp, o.fp, o.fn_), (0, 0, 3));
    }

    #[test]
    fn mask_errors() {
        let m = BinaryMask::new(10, 12);
        assert!(matches!(match_masks(std::slice::from_ref(&m), &[], 10, 10), Err(EvalError::DimensionMismatch { .. })));
        assert_eq!(match_masks(&[m], &[], 10, 12), Err(EvalError::EmptyMask(0)));
    }

    #[test]
    fn single_mask_splits_by_8_connectivity() {
        let mut m = BinaryMask::new(20, 20);
        for (x, y) in [(2, 2), (3, 3), (4, 4), (15, 15)] {
            m.set(x, y, true);
        }
        let o = DetectionSet::SingleMask(m).evaluate(&[p(3, 3), p(15, 15), p(10, 1)], 20, 20).unwrap();
        assert_eq!((o.n_detections, o.tp, o.fp, o.fn_), (2, 2, 0, 1));
    }

    #[test]
    fn metric_formulas() {
        let o = MatchOutcome { tp: 4, fp: 1, fn_: 1, ..Default::default() };
        assert_eq!(frame_metrics(&o), (0.8, 0.8));
        assert_eq!(frame_metrics(&MatchOutcome::default()), (1.0, 1.0));
        let o = MatchOutcome { fp: 2, ..Default::default() };
        assert_eq!(frame_metrics(&o), (0.0, 0.0));
        let o = MatchOutcome { fn_: 2, ..Default::default() };
        assert_eq!(frame_metrics(&o), (0.0, 0.0));
    }

    #[test]
    fn published_f_values() {
        assert!((f_measure(0.803, 0.838) - 0.820).abs() < 5e-4);
        assert!((f_measure(0.790, 0.792) - 0.791).abs() < 5e-4);
        assert_eq!(f_measure(0.0, 0.0), 0.0);
    }

    #[test]
    fn aggregate_singleton_and_pair() {
        let half = MatchOutcome { tp: 1, fp: 1, fn_: 1, n_detections: 2, n_gt: 2, pairing: vec![(0, 0)] };
        let r = aggregate(&[("frame001".into(), half.clone())]).unwrap();
        assert_eq!((r.macro_precision, r.precision_std), (0.5, 0.0));
        assert_eq!((r.macro_recall, r.recall_std), (0.5, 0.0));
        assert_eq!((r.micro_precision, r.micro_recall), (0.5, 0.5));

        // (P,R) = (1,1) and (0,0), both with 4 gt points: macro 0.5 +- 0.5;
        // pooled tp=4, fp=3, fn=4 -> micro P = 4/7, R = 4/8.
        let perfect = MatchOutcome { tp: 4, fp: 0, fn_: 0, n_detections: 4, n_gt: 4, pairing: vec![] };
        let miss = MatchOutcome { tp: 0, fp: 3, fn_: 4, n_detections: 3, n_gt: 4, pairing: vec![] };
        let r = aggregate(&[("b".into(), miss), ("a".into(), perfect)]).unwrap();
        assert_eq!((r.macro_precision, r.precision_std), (0.5, 0.5));
        assert_eq!((r.macro_recall, r.recall_std), (0.5, 0.5));
        assert!((r.micro_precision - 4.0 / 7.0).abs() < 1e-15);
        assert_eq!(r.micro_recall, 0.5);
        assert_eq!(r.per_frame[0].frame_id, "a");
        assert_eq!(aggregate(&[]), Err(EvalError::EmptyInput));
    }

    #[test]
    fn report_csv_round_trip_summary() {
        let o = MatchOutcome { tp: 3, fp: 1, fn_: 2, n_detections: 4, n_gt: 5, pairing: vec![] };
        let r = aggregate(&[("frame070".into(), o)]).unwrap();
        let csv = r.to_csv();
        assert!(csv.starts_with(REPORT_HEADER));
        let s = parse_report_summary(&csv).unwrap();
        assert_eq!(s.precision, 0.75);
        assert_eq!(s.recall, 0.6);
        assert!((s.f_measure() - r.f_measure).abs() < 1e-6);
    }

    fn arb_points(max: usize) -> impl Strategy<Value = Vec<Point>> {
        proptest::collection::vec((0u32..40, 0u32..40).prop_map(|(x, y)| p(x, y)), 0..=max)
    }

    proptest! {
        #[test]
        fn points_match_oracle(dets in arb_points(6), gt in arb_points(6)) {
            let o = match_points(&dets, &gt, 10.0);
            let c = |i: usize, j: usize| dets[i].dist2(gt[j]) < 100;
            prop_assert_eq!(o.tp, brute_max(&c, dets.len(), gt.len()));
            prop_assert_eq!(o.tp + o.fn_, gt.len());
            prop_assert_eq!(o.tp + o.fp, dets.len());
            // one-to-one
            let mut ds: Vec<_> = o.pairing.iter().map(|x| x.0).collect();
            let mut gs: Vec<_> = o.pairing.iter().map(|x| x.1).collect();
            ds.dedup(); gs.sort(); gs.dedup();
            prop_assert_eq!(ds.len(), o.tp);
            prop_assert_eq!(gs.len(), o.tp);
        }

        #[test]
        fn permutation_invariant(dets in arb_points(8), gt in arb_points(8), seed in 0u64..1000) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = match_points(&dets, &gt, 10.0);
            let (mut d2, mut g2) = (dets.clone(), gt.clone());
            d2.shuffle(&mut rng);
            g2.shuffle(&mut rng);
            let b = match_points(&d2, &g2, 10.0);
            prop_assert_eq!((a.tp, a.fp, a.fn_), (b.tp, b.fp, b.fn_));
        }

        #[test]
        fn monotone_in_detections_and_gt(dets in arb_points(6), gt in arb_points(6), extra in (0u32..40, 0u32..40)) {
            let base = match_points(&dets, &gt, 10.0);
            let mut more = dets.clone();
            more.push(p(extra.0, extra.1));
            prop_assert!(match_points(&more, &gt, 10.0).tp >= base.tp);
            let mut more_gt = gt.clone();
            more_gt.push(p(extra.0, extra.1));
            let o = match_points(&dets, &more_gt, 10.0);
            prop_assert!(o.tp + o.fn_ >= base.tp + base.fn_);
        }

        #[test]
        fn f_symmetric(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            prop_assert_eq!(f_measure(a, b), f_measure(b, a));
            prop_assert!((f_measure(a, a) - a).abs() < 1e-12);
        }
    }
}
