//! Load, validate and fingerprint a run configuration.
//!
//! ```text
//! cargo run --example config                  # print the defaults
//! cargo run --example config -- my_run.json   # validate a file
//! ```

use std::error::Error;
use std::path::Path;

use cardio_ukf::config::RunConfig;

pub fn run(path: Option<&Path>) -> Result<RunConfig, Box<dyn Error>> {
    let cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    println!("{}", cfg.to_json_pretty());
    println!("config hash {}", cfg.hash());

    // A few documents that are rejected, with the reason.
    for bad in [r#"{"modle": {}}"#, r#"{"model": {"spread": 1.5}}"#, r#"{"filter": {"tau_k": 0}}"#] {
        match RunConfig::from_json(bad) {
            Ok(_) => println!("accepted {bad}"),
            Err(e) => println!("rejected {bad}: {e}"),
        }
    }
    Ok(cfg)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    let arg = std::env::args().nth(1);
    run(arg.as_deref().map(Path::new)).map(|_| ())
}
