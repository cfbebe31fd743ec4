//! Run configuration: a flat `key = value` file, `--set key=value`
//! overrides and one flag per key.
//!
//! Precedence, lowest first: built-in defaults, `NUCLEO_DATASET` (for
//! `dataset_root` only), the config file, `--set`, dedicated flags.
//! Relative paths in a config file resolve against the file's directory;
//! paths given on the command line resolve against the working directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nucleo::cnn::{PostProcess, TrainConfig, INFER_STRIDE, POSITIVE_RADIUS, TRAIN_STRIDE};
use nucleo::grid::SegGrid;
use nucleo::{SegParams, Split};

use crate::CliError;

/// Subcommand names.
pub const COMMANDS: [&str; 8] =
    ["check", "segment", "tune", "evaluate", "cnn-train", "cnn-detect", "overlay", "report"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Path,
    PathList,
    Str,
    StrList,
    Bool,
    U8,
    U64,
    Usize,
    F64,
    U8List,
    UsizeList,
    F64List,
    /// Comma list or `start:end:step` range of gray levels.
    Schedule,
    Split,
    Encoding,
    OverlayEncoding,
}

pub struct KeySpec {
    pub key: &'static str,
    pub flag: &'static str,
    pub kind: Kind,
    pub commands: &'static [&'static str],
    pub help: &'static str,
}

const DATA_CMDS: &[&str] = &["check", "segment", "tune", "evaluate", "cnn-train", "cnn-detect", "overlay"];
const OUT_CMDS: &[&str] = &["segment", "tune", "evaluate", "cnn-train", "cnn-detect", "overlay", "report"];
const SEG_CMDS: &[&str] = &["segment", "tune"];

pub const KEYS: &[KeySpec] = &[
    KeySpec {
        key: "dataset_root",
        flag: "dataset-root",
        kind: Kind::Path,
        commands: DATA_CMDS,
        help: "Dataset directory (falls back to $NUCLEO_DATASET)",
    },
    KeySpec {
        key: "output_dir",
        flag: "output-dir",
        kind: Kind::Path,
        commands: OUT_CMDS,
        help: "Directory that receives all artifacts",
    },
    KeySpec { key: "seed", flag: "seed", kind: Kind::U64, commands: &["cnn-train"], help: "Random seed" },
    KeySpec {
        key: "split",
        flag: "split",
        kind: Kind::Split,
        commands: &["segment", "evaluate", "cnn-detect", "overlay"],
        help: "Frames to process: train, test or all",
    },
    KeySpec {
        key: "check.require_published",
        flag: "check-require-published",
        kind: Kind::Bool,
        commands: &["check"],
        help: "Fail unless counts equal the published tables",
    },
    KeySpec {
        key: "seg.min_size",
        flag: "seg-min-size",
        kind: Kind::Usize,
        commands: SEG_CMDS,
        help: "Smallest accepted region in pixels",
    },
    KeySpec {
        key: "seg.min_avg_intensity",
        flag: "seg-min-avg-intensity",
        kind: Kind::U8,
        commands: SEG_CMDS,
        help: "Lowest accepted mean gray level",
    },
    KeySpec {
        key: "seg.max_avg_intensity",
        flag: "seg-max-avg-intensity",
        kind: Kind::U8,
        commands: SEG_CMDS,
        help: "Highest accepted mean gray level",
    },
    KeySpec {
        key: "seg.min_solidity",
        flag: "seg-min-solidity",
        kind: Kind::F64,
        commands: SEG_CMDS,
        help: "Lowest accepted solidity",
    },
    KeySpec {
        key: "seg.threshold_schedule",
        flag: "seg-threshold-schedule",
        kind: Kind::Schedule,
        commands: SEG_CMDS,
        help: "Binarization levels, e.g. 10:140:10",
    },
    KeySpec {
        key: "seg.seed_min_size",
        flag: "seg-seed-min-size",
        kind: Kind::Usize,
        commands: SEG_CMDS,
        help: "Smallest component that starts a region",
    },
    KeySpec {
        key: "seg.noise_window",
        flag: "seg-noise-window",
        kind: Kind::Usize,
        commands: SEG_CMDS,
        help: "Denoising window side (odd)",
    },
    KeySpec {
        key: "grid.min_size",
        flag: "grid-min-size",
        kind: Kind::UsizeList,
        commands: &["tune"],
        help: "Candidate min_size values",
    },
    KeySpec {
        key: "grid.min_avg_intensity",
        flag: "grid-min-avg-intensity",
        kind: Kind::U8List,
        commands: &["tune"],
        help: "Candidate min_avg_intensity values",
    },
    KeySpec {
        key: "grid.max_avg_intensity",
        flag: "grid-max-avg-intensity",
        kind: Kind::U8List,
        commands: &["tune"],
        help: "Candidate max_avg_intensity values",
    },
    KeySpec {
        key: "grid.min_solidity",
        flag: "grid-min-solidity",
        kind: Kind::F64List,
        commands: &["tune"],
        help: "Candidate min_solidity values",
    },
    KeySpec {
        key: "cnn.epochs",
        flag: "cnn-epochs",
        kind: Kind::Usize,
        commands: &["cnn-train"],
        help: "Training epochs",
    },
    KeySpec { key: "cnn.lr", flag: "cnn-lr", kind: Kind::F64, commands: &["cnn-train"], help: "Learning rate" },
    KeySpec {
        key: "cnn.batch",
        flag: "cnn-batch",
        kind: Kind::Usize,
        commands: &["cnn-train"],
        help: "Mini-batch size",
    },
    KeySpec {
        key: "cnn.train_stride",
        flag: "cnn-train-stride",
        kind: Kind::Usize,
        commands: &["cnn-train"],
        help: "Patch sampling stride",
    },
    KeySpec {
        key: "cnn.pos_radius",
        flag: "cnn-pos-radius",
        kind: Kind::F64,
        commands: &["cnn-train"],
        help: "Positive-label radius in pixels",
    },
    KeySpec {
        key: "cnn.max_patches",
        flag: "cnn-max-patches",
        kind: Kind::Usize,
        commands: &["cnn-train"],
        help: "Random subset size (0 keeps all)",
    },
    KeySpec {
        key: "cnn.oversample_positive",
        flag: "cnn-oversample-positive",
        kind: Kind::Bool,
        commands: &["cnn-train"],
        help: "Repeat positives to balance classes",
    },
    KeySpec {
        key: "cnn.model",
        flag: "cnn-model",
        kind: Kind::Path,
        commands: &["cnn-detect"],
        help: "Model file (default <output_dir>/cnn/model.bin)",
    },
    KeySpec {
        key: "cnn.infer_stride",
        flag: "cnn-infer-stride",
        kind: Kind::Usize,
        commands: &["cnn-detect"],
        help: "Hit-map stride",
    },
    KeySpec {
        key: "cnn.dilation_radius",
        flag: "cnn-dilation-radius",
        kind: Kind::Usize,
        commands: &["cnn-detect"],
        help: "Hit-map dilation radius",
    },
    KeySpec {
        key: "cnn.cutoff",
        flag: "cnn-cutoff",
        kind: Kind::F64,
        commands: &["cnn-detect"],
        help: "Hit-map probability cutoff",
    },
    KeySpec {
        key: "cnn.min_area",
        flag: "cnn-min-area",
        kind: Kind::Usize,
        commands: &["cnn-detect"],
        help: "Smallest kept hit-map component",
    },
    KeySpec {
        key: "cnn.save_hitmaps",
        flag: "cnn-save-hitmaps",
        kind: Kind::Bool,
        commands: &["cnn-detect"],
        help: "Also write 16-bit hit-map images",
    },
    KeySpec {
        key: "eval.detections",
        flag: "eval-detections",
        kind: Kind::Path,
        commands: &["evaluate"],
        help: "Directory with one detection file per frame",
    },
    KeySpec {
        key: "eval.encoding",
        flag: "eval-encoding",
        kind: Kind::Encoding,
        commands: &["evaluate"],
        help: "points, mask, masklist or labels",
    },
    KeySpec { key: "eval.name", flag: "eval-name", kind: Kind::Str, commands: &["evaluate"], help: "Report file stem" },
    KeySpec {
        key: "report.inputs",
        flag: "report-inputs",
        kind: Kind::PathList,
        commands: &["report"],
        help: "Evaluation CSVs to merge",
    },
    KeySpec {
        key: "report.names",
        flag: "report-names",
        kind: Kind::StrList,
        commands: &["report"],
        help: "Method names (default: file stems)",
    },
    KeySpec {
        key: "overlay.detections",
        flag: "overlay-detections",
        kind: Kind::Path,
        commands: &["overlay"],
        help: "Detection directory to draw (optional)",
    },
    KeySpec {
        key: "overlay.encoding",
        flag: "overlay-encoding",
        kind: Kind::OverlayEncoding,
        commands: &["overlay"],
        help: "points or labels",
    },
    KeySpec {
        key: "overlay.frames",
        flag: "overlay-frames",
        kind: Kind::StrList,
        commands: &["overlay"],
        help: "Frame ids (default: the split)",
    },
];

pub fn spec(key: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.key == key)
}

fn list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn parse_schedule(v: &str) -> Result<Vec<u8>, String> {
    let parts: Vec<&str> = v.split(':').map(str::trim).collect();
    if parts.len() == 3 {
        let n: Vec<u16> =
            parts.iter().map(|p| p.parse::<u16>().map_err(|_| format!("bad range {v:?}"))).collect::<Result<_, _>>()?;
        if n[2] == 0 || n[0] > n[1] || n[1] > 255 {
            return Err(format!("bad range {v:?}"));
        }
        return Ok((n[0]..=n[1]).step_by(n[2] as usize).map(|x| x as u8).collect());
    }
    list(v).map(|s| s.parse::<u8>().map_err(|_| format!("bad gray level {s:?}"))).collect()
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(format!("expected true or false, got {v:?}")),
    }
}

fn parse_all<T: std::str::FromStr>(v: &str) -> Result<Vec<T>, String> {
    let out: Vec<T> =
        list(v).map(|s| s.parse::<T>().map_err(|_| format!("bad value {s:?}"))).collect::<Result<_, _>>()?;
    if out.is_empty() {
        return Err("empty list".into());
    }
    Ok(out)
}

fn check_value(kind: Kind, v: &str) -> Result<(), String> {
    let v = v.trim();
    let one = |ok: bool| if ok { Ok(()) } else { Err(format!("bad value {v:?}")) };
    match kind {
        Kind::Path | Kind::Str => one(!v.is_empty()),
        Kind::PathList | Kind::StrList => one(list(v).next().is_some()),
        Kind::Bool => parse_bool(v).map(|_| ()),
        Kind::U8 => one(v.parse::<u8>().is_ok()),
        Kind::U64 => one(v.parse::<u64>().is_ok()),
        Kind::Usize => one(v.parse::<usize>().is_ok()),
        Kind::F64 => one(v.parse::<f64>().is_ok_and(f64::is_finite)),
        Kind::U8List => parse_all::<u8>(v).map(|_| ()),
        Kind::UsizeList => parse_all::<usize>(v).map(|_| ()),
        Kind::F64List => parse_all::<f64>(v).map(|_| ()),
        Kind::Schedule => parse_schedule(v).map(|_| ()),
        Kind::Split => one(v == "all" || v.parse::<Split>().is_ok()),
        Kind::Encoding => one(matches!(v, "points" | "mask" | "masklist" | "labels")),
        Kind::OverlayEncoding => one(matches!(v, "points" | "labels")),
    }
}

/// Frames selected by the `split` key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitSel {
    One(Split),
    All,
}

/// Resolved settings for one command.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Parses config-file text. Relative paths are joined onto `base`.
    pub fn parse_file_text(&mut self, text: &str, source: &str, base: &Path) -> Result<(), CliError> {
        let mut seen = std::collections::BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{source}:{}: expected key = value", n + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(CliError::Config(format!("{source}:{}: duplicate key {k}", n + 1)));
            }
            self.set_with_base(k, v.trim(), Some(base))
                .map_err(|e| CliError::Config(format!("{source}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        self.parse_file_text(&text, &path.display().to_string(), &base)
    }

    /// Sets one key after checking that it exists and the value parses.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        self.set_with_base(key, value, None).map_err(CliError::Config)
    }

    fn set_with_base(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<(), String> {
        let spec = spec(key).ok_or_else(|| format!("unknown key {key:?}"))?;
        check_value(spec.kind, value).map_err(|e| format!("{key}: {e}"))?;
        let value = match (spec.kind, base) {
            (Kind::Path, Some(b)) => b.join(value).display().to_string(),
            (Kind::PathList, Some(b)) => {
                list(value).map(|p| b.join(p).display().to_string()).collect::<Vec<_>>().join(",")
            }
            _ => value.to_string(),
        };
        self.values.insert(key.to_string(), value);
        Ok(())
    }

    pub fn set_default(&mut self, key: &str, value: &str) {
        self.values.entry(key.to_string()).or_insert_with(|| value.to_string());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Option<T> {
        self.raw(key).map(|v| v.trim().parse().ok().expect("validated on set"))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf, CliError> {
        self.path(key).ok_or_else(|| CliError::Config(format!("{key} is required")))
    }

    /// Like [`require_path`](Self::require_path) but also checks that the
    /// path exists.
    pub fn existing_path(&self, key: &str) -> Result<PathBuf, CliError> {
        let p = self.require_path(key)?;
        if !p.exists() {
            return Err(CliError::Config(format!("{key}: {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn paths(&self, key: &str) -> Vec<PathBuf> {
        self.raw(key).map(|v| list(v).map(PathBuf::from).collect()).unwrap_or_default()
    }

    pub fn strings(&self, key: &str) -> Vec<String> {
        self.raw(key).map(|v| list(v).map(str::to_string).collect()).unwrap_or_default()
    }

    pub fn bool(&self, key: &str) -> Option<bool> {
        self.raw(key).map(|v| parse_bool(v).expect("validated on set"))
    }

    pub fn usize(&self, key: &str) -> Option<usize> {
        self.parsed(key)
    }

    pub fn u64(&self, key: &str) -> Option<u64> {
        self.parsed(key)
    }

    pub fn f64(&self, key: &str) -> Option<f64> {
        self.parsed(key)
    }

    pub fn u8(&self, key: &str) -> Option<u8> {
        self.parsed(key)
    }

    fn list_of<T: std::str::FromStr>(&self, key: &str) -> Option<Vec<T>> {
        self.raw(key).map(|v| parse_all(v).expect("validated on set"))
    }

    pub fn split(&self) -> SplitSel {
        match self.raw("split") {
            None | Some("all") => SplitSel::All,
            Some(s) => SplitSel::One(s.parse().expect("validated on set")),
        }
    }

    pub fn seed(&self) -> u64 {
        self.u64("seed").unwrap_or(0)
    }

    pub fn seg_params(&self) -> Result<SegParams, CliError> {
        let mut p = SegParams::default();
        if let Some(v) = self.usize("seg.min_size") {
            p.min_size = v;
        }
        if let Some(v) = self.u8("seg.min_avg_intensity") {
            p.min_avg_intensity = v;
        }
        if let Some(v) = self.u8("seg.max_avg_intensity") {
            p.max_avg_intensity = v;
        }
        if let Some(v) = self.f64("seg.min_solidity") {
            p.min_solidity = v;
        }
        if let Some(v) = self.raw("seg.threshold_schedule") {
            p.threshold_schedule = parse_schedule(v).expect("validated on set");
        }
        if let Some(v) = self.usize("seg.seed_min_size") {
            p.seed_min_size = v;
        }
        if let Some(v) = self.usize("seg.noise_window") {
            p.noise_window = v;
        }
        p.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(p)
    }

    pub fn seg_grid(&self) -> SegGrid {
        let mut g = SegGrid::default();
        if let Some(v) = self.list_of("grid.min_size") {
            g.min_size = v;
        }
        if let Some(v) = self.list_of("grid.min_avg_intensity") {
            g.min_avg_intensity = v;
        }
        if let Some(v) = self.list_of("grid.max_avg_intensity") {
            g.max_avg_intensity = v;
        }
        if let Some(v) = self.list_of("grid.min_solidity") {
            g.min_solidity = v;
        }
        g
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            epochs: self.usize("cnn.epochs").unwrap_or(d.epochs),
            lr: self.f64("cnn.lr").unwrap_or(d.lr),
            batch: self.usize("cnn.batch").unwrap_or(d.batch),
            seed: self.seed(),
            oversample_positive: self.bool("cnn.oversample_positive").unwrap_or(d.oversample_positive),
        };
        if cfg.batch == 0 || cfg.lr <= 0.0 {
            return Err(CliError::Config("cnn.batch and cnn.lr must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn train_stride(&self) -> Result<usize, CliError> {
        positive("cnn.train_stride", self.usize("cnn.train_stride").unwrap_or(TRAIN_STRIDE))
    }

    pub fn pos_radius(&self) -> f64 {
        self.f64("cnn.pos_radius").unwrap_or(POSITIVE_RADIUS)
    }

    pub fn infer_stride(&self) -> Result<usize, CliError> {
        positive("cnn.infer_stride", self.usize("cnn.infer_stride").unwrap_or(INFER_STRIDE))
    }

    pub fn post_process(&self) -> PostProcess {
        let d = PostProcess::default();
        PostProcess {
            dilation_radius: self.usize("cnn.dilation_radius").unwrap_or(d.dilation_radius),
            cutoff: self.f64("cnn.cutoff").unwrap_or(d.cutoff),
            min_area: self.usize("cnn.min_area").unwrap_or(d.min_area),
        }
    }
}

fn positive(key: &str, v: usize) -> Result<usize, CliError> {
    if v == 0 {
        Err(CliError::Config(format!("{key} must be at least 1")))
    } else {
        Ok(v)
    }
}
