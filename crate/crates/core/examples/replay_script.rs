//! Batch replay of a fixture with a scripted interaction timeline.
//!
//! With no arguments a synthetic fixture and script are generated in a
//! temporary directory that is left in place. Otherwise:
//!
//! ```text
//! cargo run -p visguardian --example replay_script -- FRAMES_DIR DETECTIONS.jsonl SCRIPT.json OUT_DIR
//! ```

use std::env;
use std::fs;
use std::process::ExitCode;
use std::sync::Arc;

use visguardian::pipeline::{load_script, replay, PipelineConfig};
use visguardian::synthetic::{SyntheticConfig, SyntheticStream};
use visguardian::Taxonomy;

const DEMO_SCRIPT: &str = r#"[
  {"kind": "SelectObject", "track_id": 1, "class": "person", "timestamp": 5},
  {"kind": "ApplyGroup", "anchor": "person", "dimension": "Sensitivity", "action": "Reveal", "timestamp": 5},
  {"kind": "SelectObject", "track_id": 3, "class": "laptop computer", "timestamp": 10},
  {"kind": "ToggleClass", "class": "laptop computer", "timestamp": 10}
]"#;

fn main() -> ExitCode {
    let args: Vec<String> = env::args().skip(1).collect();
    let (config, script) = if args.len() == 4 {
        let script = match load_script(&args[2]) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("{e}");
                return ExitCode::from(2);
            }
        };
        (PipelineConfig::new(&args[0], &args[1], &args[3]), script)
    } else {
        let dir = tempfile::tempdir().expect("temp dir").keep();
        let taxonomy = Arc::new(Taxonomy::bundled());
        let stream = SyntheticStream::generate(&taxonomy, &SyntheticConfig::new(&taxonomy, 320, 240, 8, 15));
        let (frames, detections) = stream.write_fixture(&dir).expect("write fixture");
        let script_path = dir.join("script.json");
        fs::write(&script_path, DEMO_SCRIPT).expect("write script");
        let config = PipelineConfig::new(frames, detections, dir.join("out"));
        let script = load_script(&script_path).expect("demo script parses");
        (config, script)
    };

    match replay(&config, &script) {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            println!("frames in {}", config.out_dir.display());
            println!("audit log {}", config.audit_path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 1 })
        }
    }
}
