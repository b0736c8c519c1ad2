//! Generate a small synthetic dataset of articulated skeletons and save it
//! as JSON lines.
//!
//!     cargo run --example synthesize

use sts::dataset::save_dataset;
use sts::synth::{generate_dataset, synth_topology, SynthConfig};

fn main() -> sts::Result<()> {
    let config = SynthConfig {
        n_classes: 4,
        instances_per_class: 5,
        temporal_len: 16,
        seed: 42,
        ..SynthConfig::default()
    };
    let data = generate_dataset(&config)?;
    println!(
        "generated {} sequences: {} classes x {} instances, {} frames each",
        data.len(),
        config.n_classes,
        config.instances_per_class,
        config.temporal_len
    );
    let first = &data[0];
    println!(
        "first sequence: label {}, {} nodes, first frame root at ({:.3}, {:.3})",
        first.label,
        first.num_dims(),
        first.point(0, 0)[0],
        first.point(0, 0)[1]
    );
    let path = std::env::temp_dir().join("synthesized.jsonl");
    save_dataset(&path, &synth_topology(), &data)?;
    println!("saved to {}", path.display());
    Ok(())
}
