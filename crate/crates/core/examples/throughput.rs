//! Uncapped pipeline throughput on a synthetic stream.
//!
//! ```text
//! cargo run --release -p visguardian --example throughput -- 1280 720 32 300
//! ```

use std::env;
use std::sync::Arc;

use visguardian::synthetic::{run_bench, BenchConfig};
use visguardian::Taxonomy;

fn main() {
    let args: Vec<u64> = env::args().skip(1).map(|a| a.parse().expect("numeric argument")).collect();
    let mut config = BenchConfig::default();
    if let [w, h, boxes, frames] = args[..] {
        config.width = w as u32;
        config.height = h as u32;
        config.boxes = boxes as usize;
        config.frames = frames;
    }
    let report = run_bench(Arc::new(Taxonomy::bundled()), &config).expect("bench run");
    println!(
        "{}x{} with {} boxes over {} frames",
        config.width, config.height, config.boxes, report.frames_processed
    );
    println!("achieved fps      {:>8.1}", report.achieved_fps);
    let l = &report.latency_ms;
    for (name, s) in [("detect", l.detect), ("policy", l.policy), ("sanitize", l.sanitize), ("encode", l.encode), ("total", l.total)] {
        println!("{name:<9} ms  median {:>7.3}  p95 {:>7.3}  max {:>7.3}", s.median, s.p95, s.max);
    }
}
