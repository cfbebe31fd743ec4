//! Writes a small synthetic dataset for trying out the `nucleo` CLI.
//!
//! ```text
//! cargo run --example synth_dataset -- /tmp/synth 12 [hard]
//! ```

use std::path::PathBuf;

use nucleo::synth::{write_dataset, SynthSpec};

fn main() {
    let mut args = std::env::args().skip(1);
    let root = PathBuf::from(args.next().unwrap_or_else(|| "synth-dataset".into()));
    let frames = args.next().and_then(|s| s.parse().ok()).unwrap_or(12);
    let spec = if args.next().as_deref() == Some("hard") { SynthSpec::hard() } else { SynthSpec::default() };
    match write_dataset(&root, frames, &spec, 1) {
        Ok(labels) => println!("wrote {} frames to {}", labels.len(), root.display()),
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(2);
        }
    }
}
