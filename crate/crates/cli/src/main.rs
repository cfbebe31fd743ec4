//! `nucleo` command-line tool.
//!
//! Exit codes: 0 success, 1 invalid configuration, 2 I/O or data error.

mod commands;
mod config;
mod output;
mod overlay;

use std::path::Path;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};

use config::{Kind, RunConfig, COMMANDS, KEYS};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Data(m) => write!(f, "error: {m}"),
        }
    }
}

fn about(cmd: &str) -> &'static str {
    match cmd {
        "check" => "Count frames and points per grade and split",
        "segment" => "Run the iterative-thresholding segmenter",
        "tune" => "Grid-search the segmenter parameters on the training split",
        "evaluate" => "Score detections against the annotations",
        "cnn-train" => "Train the patch classifier on the training split",
        "cnn-detect" => "Detect nuclei with a trained classifier",
        "overlay" => "Draw annotations and detections over frames",
        "report" => "Merge evaluation reports into one comparison table",
        _ => "",
    }
}

fn cli() -> Command {
    let subcommands = COMMANDS.iter().map(|&name| {
        let mut c = Command::new(name)
            .about(about(name))
            .arg(Arg::new("config").long("config").value_name("FILE").help("key = value configuration file"))
            .arg(
                Arg::new("set")
                    .long("set")
                    .value_name("KEY=VALUE")
                    .action(ArgAction::Append)
                    .help("Override one configuration key"),
            );
        for k in KEYS.iter().filter(|k| k.commands.contains(&name)) {
            let mut a = Arg::new(k.key).long(k.flag).value_name("VALUE").help(k.help);
            if k.kind == Kind::Bool {
                a = a.num_args(0..=1).default_missing_value("true");
            }
            c = c.arg(a);
        }
        c
    });
    Command::new("nucleo")
        .about("Nucleus detection for cervical cytology images")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommands(subcommands)
}

fn build_config(name: &str, m: &ArgMatches) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = m.get_one::<String>("config") {
        cfg.load_file(Path::new(path))?;
    }
    for kv in m.get_many::<String>("set").into_iter().flatten() {
        let (k, v) =
            kv.split_once('=').ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    for k in KEYS.iter().filter(|k| k.commands.contains(&name)) {
        if let Some(v) = m.get_one::<String>(k.key) {
            cfg.set(k.key, v)?;
        }
    }
    if let Ok(root) = std::env::var("NUCLEO_DATASET") {
        if !root.is_empty() {
            cfg.set_default("dataset_root", &root);
        }
    }
    cfg.set_default("split", "test");
    cfg.set_default("output_dir", "out");
    Ok(cfg)
}

fn dispatch(name: &str, cfg: &RunConfig) -> Result<(), CliError> {
    match name {
        "check" => commands::check(cfg),
        "segment" => commands::segment(cfg),
        "tune" => commands::tune(cfg),
        "evaluate" => commands::evaluate(cfg),
        "cnn-train" => commands::cnn_train(cfg),
        "cnn-detect" => commands::cnn_detect(cfg),
        "overlay" => commands::overlay(cfg),
        "report" => commands::report(cfg),
        other => Err(CliError::Config(format!("unknown command {other}"))),
    }
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let cfg = match build_config(name, sub) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(e.code());
        }
    };
    let writes = name != "check";
    let out = cfg.path("output_dir");
    match dispatch(name, &cfg) {
        Ok(()) => {
            if let (true, Some(dir)) = (writes, &out) {
                output::clear_failed(dir);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            if let (true, Some(dir)) = (writes, &out) {
                if dir.exists() {
                    output::mark_failed(dir, &e.to_string());
                }
            }
            ExitCode::from(e.code())
        }
    }
}
