//! Regenerates the shipped synthetic world.
//!
//! ```text
//! cargo run -p mcdecode-core --example gen_synthetic -- data/synthetic
//! ```

use std::path::PathBuf;

use mcdecode::synthetic::{World, WorldConfig};

fn main() -> mcdecode::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data/synthetic"));
    World::generate(WorldConfig::default()).write_files(&dir)?;
    println!("wrote {}", dir.display());
    Ok(())
}
