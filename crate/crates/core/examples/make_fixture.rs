//! Writes the synthetic demo inputs and a matching `config.toml`.
//!
//! ```text
//! cargo run -p alignprune --example make_fixture -- demo 7
//! ```

use std::path::PathBuf;

fn main() -> std::io::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "demo".into()));
    let seed = args.next().map(|s| s.parse().expect("seed must be an integer")).unwrap_or(7);
    let paths = alignprune::synth::write_fixture(&dir, seed)?;
    println!("{}", paths.config.display());
    Ok(())
}
