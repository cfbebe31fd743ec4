//! Subcommand implementations.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use nucleo::cnn::model::Architecture;
use nucleo::cnn::patches::PatchSet;
use nucleo::cnn::train::log_csv;
use nucleo::cnn::{detect, train, CnnModel, PATCH_SIZE};
use nucleo::dataset::{
    canonical_frame_id, dataset_summary, load_dataset, parse_points_str, write_points_csv, DatasetSummary,
};
use nucleo::eval::{aggregate, match_regions, parse_report_summary};
use nucleo::grid::{grid_search, results_csv};
use nucleo::image::{load_labels, load_mask, save_gray16, save_rgb, Point};
use nucleo::segment::segment_frame;
use nucleo::{DetectionSet, FrameRecord, GroundTruthSet, MatchOutcome, Region, Split};

use crate::config::{RunConfig, SplitSel};
use crate::output::{create_dir, write_bytes, write_image, write_text};
use crate::overlay::{render, Marks};
use crate::CliError;

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn dataset(cfg: &RunConfig) -> Result<GroundTruthSet, CliError> {
    let root = cfg.existing_path("dataset_root")?;
    load_dataset(&root).map_err(data)
}

/// Frames of the configured split, sorted by id.
fn selected(gt: &GroundTruthSet, sel: SplitSel) -> Result<Vec<&FrameRecord>, CliError> {
    let mut frames: Vec<&FrameRecord> = match sel {
        SplitSel::All => gt.frames().iter().collect(),
        SplitSel::One(s) => gt.split(s),
    };
    frames.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));
    if frames.is_empty() {
        return Err(CliError::Data("no frames in the selected split".into()));
    }
    Ok(frames)
}

fn output_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.require_path("output_dir")?;
    create_dir(&dir)?;
    Ok(dir)
}

pub fn check(cfg: &RunConfig) -> Result<(), CliError> {
    let gt = dataset(cfg)?;
    let summary = dataset_summary(&gt);
    print!("{}", summary.to_csv());
    let strict = cfg.bool("check.require_published").unwrap_or(true);
    if strict && !summary.matches_published() {
        eprintln!("expected:\n{}", DatasetSummary::published().to_csv());
        return Err(CliError::Data("frame or point counts differ from the published tables".into()));
    }
    Ok(())
}

/// Header of the regions table written by `segment`.
pub const REGIONS_HEADER: &str = "frame_id,region_id,centroid_x,centroid_y,area,solidity,mean_intensity";

pub fn segment(cfg: &RunConfig) -> Result<(), CliError> {
    let params = cfg.seg_params()?;
    let gt = dataset(cfg)?;
    let frames = selected(&gt, cfg.split())?;
    let out = output_dir(cfg)?.join("segment");
    eprintln!("segmenting {} frames with {params}", frames.len());
    let results: Vec<Vec<Region>> = frames
        .par_iter()
        .map(|f| segment_frame(&f.edf_image, &params).map_err(|e| CliError::Config(e.to_string())))
        .collect::<Result<_, _>>()?;

    let mut table = format!("{REGIONS_HEADER}\n");
    for (f, regions) in frames.iter().zip(&results) {
        let (w, h) = (f.edf_image.width(), f.edf_image.height());
        if regions.len() > u16::MAX as usize {
            return Err(CliError::Data(format!("{}: too many regions for a 16-bit label image", f.frame_id)));
        }
        let mut labels = vec![0u16; w * h];
        let mut centres = Vec::with_capacity(regions.len());
        for (k, r) in regions.iter().enumerate() {
            for p in r.pixels() {
                labels[p.y as usize * w + p.x as usize] = (k + 1) as u16;
            }
            let (cx, cy) = r.centroid();
            centres.push(Point::new(cx.round() as u32, cy.round() as u32));
            table.push_str(&format!(
                "{},{},{:.6},{:.6},{},{:.6},{:.6}\n",
                f.frame_id,
                k + 1,
                cx,
                cy,
                r.area(),
                r.solidity(),
                r.mean_intensity(&f.edf_image)
            ));
        }
        let png = out.join("labels").join(format!("{}.png", f.frame_id));
        write_image(&png, |p| save_gray16(w, h, &labels, p))?;
        write_text(&out.join("points").join(format!("{}.csv", f.frame_id)), &write_points_csv(&centres))?;
        eprintln!("{}: {} regions", f.frame_id, regions.len());
    }
    write_text(&out.join("regions.csv"), &table)
}

pub fn tune(cfg: &RunConfig) -> Result<(), CliError> {
    let base = cfg.seg_params()?;
    let grid = cfg.seg_grid();
    let gt = dataset(cfg)?;
    let train_frames = selected(&gt, SplitSel::One(Split::Train))?;
    let out = output_dir(cfg)?.join("tune");
    eprintln!("grid search: {} points over {} training frames", grid.points().len(), train_frames.len());
    let res = grid_search(&train_frames, &grid, &base).map_err(|e| CliError::Config(e.to_string()))?;
    write_text(&out.join("grid.csv"), &results_csv(&res.results))?;
    let b = &res.best;
    let best = format!(
        "seg.min_size = {}\nseg.min_avg_intensity = {}\nseg.max_avg_intensity = {}\nseg.min_solidity = {}\n",
        b.point.min_size, b.point.min_avg_intensity, b.point.max_avg_intensity, b.point.min_solidity
    );
    write_text(&out.join("best.cfg"), &best)?;
    println!("best: {}", res.best_params);
    println!("precision {:.3} recall {:.3} f_measure {:.3}", b.precision, b.recall, b.f_measure);
    Ok(())
}

fn read_points(path: &Path) -> Result<Vec<Point>, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    parse_points_str(&text, &path.display().to_string())
        .map_err(data)?
        .into_iter()
        .map(|(x, y)| {
            if x < 0 || y < 0 || x > u32::MAX as i64 || y > u32::MAX as i64 {
                Err(CliError::Data(format!("{}: point ({x}, {y}) out of range", path.display())))
            } else {
                Ok(Point::new(x as u32, y as u32))
            }
        })
        .collect()
}

fn read_label_regions(path: &Path, w: usize, h: usize) -> Result<Vec<Region>, CliError> {
    let (lw, lh, labels) = load_labels(path).map_err(data)?;
    if (lw, lh) != (w, h) {
        return Err(CliError::Data(format!("{}: {lw}x{lh} label image for a {w}x{h} frame", path.display())));
    }
    let mut by_label: std::collections::BTreeMap<u16, Vec<Point>> = Default::default();
    for (i, &l) in labels.iter().enumerate() {
        if l != 0 {
            by_label.entry(l).or_default().push(Point::new((i % w) as u32, (i / w) as u32));
        }
    }
    Ok(by_label.into_values().map(Region::from_pixels).collect())
}

fn require_file(path: PathBuf) -> Result<PathBuf, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::Data(format!("missing detections: {}", path.display())))
    }
}

fn evaluate_frame(f: &FrameRecord, dir: &Path, encoding: &str) -> Result<MatchOutcome, CliError> {
    let (w, h) = (f.edf_image.width(), f.edf_image.height());
    let id = &f.frame_id;
    let ctx = |e: nucleo::eval::EvalError| CliError::Data(format!("{id}: {e}"));
    match encoding {
        "points" => {
            let pts = read_points(&require_file(dir.join(format!("{id}.csv")))?)?;
            DetectionSet::Points(pts).evaluate(&f.gt_points, w, h).map_err(ctx)
        }
        "mask" => {
            let m = load_mask(&require_file(dir.join(format!("{id}.png")))?).map_err(data)?;
            DetectionSet::SingleMask(m).evaluate(&f.gt_points, w, h).map_err(ctx)
        }
        "masklist" => {
            let sub = require_file(dir.join(id))?;
            let mut files: Vec<PathBuf> = std::fs::read_dir(&sub)
                .map_err(|e| CliError::Data(format!("cannot read {}: {e}", sub.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
                .collect();
            files.sort();
            let masks = files.iter().map(|p| load_mask(p).map_err(data)).collect::<Result<Vec<_>, _>>()?;
            DetectionSet::MaskList(masks).evaluate(&f.gt_points, w, h).map_err(ctx)
        }
        "labels" => {
            let regions = read_label_regions(&require_file(dir.join(format!("{id}.png")))?, w, h)?;
            Ok(match_regions(regions.as_slice(), &f.gt_points))
        }
        other => Err(CliError::Config(format!("unknown encoding {other}"))),
    }
}

pub fn evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = cfg.existing_path("eval.detections")?;
    let encoding = cfg.raw("eval.encoding").unwrap_or("points").to_string();
    let name = cfg.raw("eval.name").unwrap_or("evaluation").to_string();
    if name.contains(['/', '\\']) {
        return Err(CliError::Config("eval.name must be a plain file stem".into()));
    }
    let gt = dataset(cfg)?;
    let frames = selected(&gt, cfg.split())?;
    let out = output_dir(cfg)?;
    let rows = frames
        .iter()
        .map(|f| Ok((f.frame_id.clone(), evaluate_frame(f, &dir, &encoding)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let report = aggregate(&rows).map_err(data)?;
    write_text(&out.join(format!("{name}.csv")), &report.to_csv())?;
    println!(
        "{name}: precision {:.3} ± {:.3}  recall {:.3} ± {:.3}  f_measure {:.3}",
        report.macro_precision, report.precision_std, report.macro_recall, report.recall_std, report.f_measure
    );
    Ok(())
}

/// Header of the patch summary written by `cnn-train`.
pub const PATCHES_HEADER: &str = "frames,patches,positives,positive_fraction";

pub fn cnn_train(cfg: &RunConfig) -> Result<(), CliError> {
    let tc = cfg.train_config()?;
    let stride = cfg.train_stride()?;
    let radius = cfg.pos_radius();
    let gt = dataset(cfg)?;
    let frames = selected(&gt, SplitSel::One(Split::Train))?;
    let out = output_dir(cfg)?.join("cnn");
    let mut set = PatchSet::build(&frames, stride, PATCH_SIZE, radius).map_err(data)?;
    let total = (set.len(), set.positives());
    match cfg.usize("cnn.max_patches") {
        Some(max) if max > 0 => set.subsample(max, tc.seed),
        _ => {}
    }
    eprintln!(
        "{} patches from {} frames, {} positive ({:.2}%); training on {}",
        total.0,
        frames.len(),
        total.1,
        100.0 * total.1 as f64 / total.0.max(1) as f64,
        set.len()
    );
    let mut model = CnnModel::init(Architecture::STANDARD, tc.seed).map_err(data)?;
    model.input_mean = set.mean;
    let (model, log) = train(model, &set, &tc).map_err(data)?;
    if let Some(last) = log.last() {
        eprintln!("epoch {}: loss {:.4} accuracy {:.4}", last.epoch, last.mean_loss, last.train_accuracy);
    }
    write_bytes(&out.join("model.bin"), &model.to_bytes())?;
    write_text(&out.join("train_log.csv"), &log_csv(&log))?;
    write_text(
        &out.join("patches.csv"),
        &format!(
            "{PATCHES_HEADER}\n{},{},{},{:.6}\n",
            frames.len(),
            total.0,
            total.1,
            total.1 as f64 / total.0.max(1) as f64
        ),
    )
}

pub fn cnn_detect(cfg: &RunConfig) -> Result<(), CliError> {
    let stride = cfg.infer_stride()?;
    let post = cfg.post_process();
    let base = cfg.require_path("output_dir")?;
    let model_path = match cfg.raw("cnn.model") {
        Some(_) => cfg.existing_path("cnn.model")?,
        None => {
            let p = base.join("cnn").join("model.bin");
            if !p.exists() {
                return Err(CliError::Config(format!("cnn.model not set and {} does not exist", p.display())));
            }
            p
        }
    };
    let bytes =
        std::fs::read(&model_path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", model_path.display())))?;
    let model =
        CnnModel::read_from(bytes.as_slice()).map_err(|e| CliError::Data(format!("{}: {e}", model_path.display())))?;
    let gt = dataset(cfg)?;
    let frames = selected(&gt, cfg.split())?;
    let out = output_dir(cfg)?.join("cnn-detect");
    let hitmaps = cfg.bool("cnn.save_hitmaps").unwrap_or(false);
    for f in frames {
        let (map, points) =
            detect(&model, &f.edf_image, stride, &post).map_err(|e| CliError::Data(format!("{}: {e}", f.frame_id)))?;
        write_text(&out.join("points").join(format!("{}.csv", f.frame_id)), &write_points_csv(&points))?;
        if hitmaps {
            let values = map.to_gray16();
            let (w, h) = (f.edf_image.width(), f.edf_image.height());
            write_image(&out.join("hitmaps").join(format!("{}.png", f.frame_id)), |p| save_gray16(w, h, &values, p))?;
        }
        eprintln!("{}: {} detections", f.frame_id, points.len());
    }
    Ok(())
}

pub fn overlay(cfg: &RunConfig) -> Result<(), CliError> {
    let det_dir = match cfg.raw("overlay.detections") {
        Some(_) => Some(cfg.existing_path("overlay.detections")?),
        None => None,
    };
    let encoding = cfg.raw("overlay.encoding").unwrap_or("points").to_string();
    let gt = dataset(cfg)?;
    let wanted = cfg.strings("overlay.frames");
    let frames: Vec<&FrameRecord> = if wanted.is_empty() {
        selected(&gt, cfg.split())?
    } else {
        wanted
            .iter()
            .map(|raw| {
                let id = canonical_frame_id(raw).ok_or_else(|| CliError::Config(format!("bad frame id {raw:?}")))?;
                gt.get(&id).ok_or_else(|| CliError::Data(format!("frame {id} is not in the dataset")))
            })
            .collect::<Result<_, _>>()?
    };
    let out = output_dir(cfg)?.join("overlay");
    for f in frames {
        let (w, h) = (f.edf_image.width(), f.edf_image.height());
        let canvas = match (&det_dir, encoding.as_str()) {
            (None, _) => render(&f.edf_image, &f.gt_points, Marks::None),
            (Some(d), "labels") => {
                let regions = read_label_regions(&require_file(d.join(format!("{}.png", f.frame_id)))?, w, h)?;
                render(&f.edf_image, &f.gt_points, Marks::Regions(&regions))
            }
            (Some(d), _) => {
                let pts = read_points(&require_file(d.join(format!("{}.csv", f.frame_id)))?)?;
                render(&f.edf_image, &f.gt_points, Marks::Points(&pts))
            }
        };
        write_image(&out.join(format!("{}.png", f.frame_id)), |p| save_rgb(w, h, &canvas.rgb, p))?;
    }
    Ok(())
}

/// Header of the comparison table written by `report`.
pub const REPORT_TABLE_HEADER: &str = "method,precision,precision_std,recall,recall_std,f_measure";

pub fn report(cfg: &RunConfig) -> Result<(), CliError> {
    let inputs = cfg.paths("report.inputs");
    if inputs.is_empty() {
        return Err(CliError::Config("report.inputs is required".into()));
    }
    for p in &inputs {
        if !p.exists() {
            return Err(CliError::Config(format!("report.inputs: {} does not exist", p.display())));
        }
    }
    let mut names = cfg.strings("report.names");
    if names.is_empty() {
        names = inputs
            .iter()
            .map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
            .collect();
    } else if names.len() != inputs.len() {
        return Err(CliError::Config(format!("{} report.names for {} report.inputs", names.len(), inputs.len())));
    }
    let out = output_dir(cfg)?;
    let mut csv = format!("{REPORT_TABLE_HEADER}\n");
    let width = names.iter().map(String::len).max().unwrap_or(0).max(6);
    let mut table = format!("{:<width$}  {:<15}  {:<15}  {}\n", "method", "precision", "recall", "F");
    for (name, path) in names.iter().zip(&inputs) {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        let s = parse_report_summary(&text)
            .ok_or_else(|| CliError::Data(format!("{} is not an evaluation report", path.display())))?;
        let f = s.f_measure();
        csv.push_str(&format!(
            "{name},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            s.precision, s.precision_std, s.recall, s.recall_std, f
        ));
        table.push_str(&format!(
            "{name:<width$}  {:<15}  {:<15}  {:.3}\n",
            format!("{:.3} ± {:.3}", s.precision, s.precision_std),
            format!("{:.3} ± {:.3}", s.recall, s.recall_std),
            f
        ));
    }
    write_text(&out.join("report.csv"), &csv)?;
    print!("{table}");
    Ok(())
}
