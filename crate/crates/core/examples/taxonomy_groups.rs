//! Prints the privacy taxonomy and the three groups of an anchor class.
//!
//! ```text
//! cargo run -p visguardian --example taxonomy_groups -- underwear
//! cargo run -p visguardian --example taxonomy_groups -- "mobile phone" path/to/taxonomy.json
//! ```

use std::env;
use std::process::ExitCode;

use visguardian::policy::query_groups;
use visguardian::taxonomy::{Dimension, Taxonomy};

fn main() -> ExitCode {
    let mut args = env::args().skip(1);
    let anchor = args.next().unwrap_or_else(|| "ID card".to_string());
    let taxonomy = match args.next() {
        Some(path) => match Taxonomy::load(&path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("{e}");
                return ExitCode::from(2);
            }
        },
        None => Taxonomy::bundled(),
    };

    println!("{:<18} {:<7} {:<9} type", "class", "risk", "space");
    for e in taxonomy.entries() {
        println!("{:<18} {:<7} {:<9} {:?}", e.class, format!("{:?}", e.risk), format!("{:?}", e.space), e.type_group);
    }

    let groups = match query_groups(&taxonomy, &anchor) {
        Ok(g) => g,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    println!();
    println!("anchor `{anchor}` resolves to `{}`", groups.anchor);
    for dim in Dimension::ALL {
        println!("  {:<12} {}", format!("{dim:?}"), groups.group(dim).join(", "));
    }
    ExitCode::SUCCESS
}
