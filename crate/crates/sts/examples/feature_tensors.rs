//! Turn one raw coordinate sequence into the two augmented feature tensors:
//! the time-major view (dimensions as channels) and the dimension-major view
//! (time as channels, rows ordered by a bidirectional tree traversal).
//!
//!     cargo run --example feature_tensors

use sts::repr::assemble;
use sts::synth::{generate_dataset, synth_topology, SynthConfig};

fn main() -> sts::Result<()> {
    let config = SynthConfig {
        n_classes: 1,
        instances_per_class: 1,
        temporal_len: 12,
        seed: 3,
        ..SynthConfig::default()
    };
    let seq = generate_dataset(&config)?.remove(0);
    let topology = synth_topology();
    println!(
        "sequence: {} frames, {} tree nodes, {}-d coordinates",
        seq.num_frames(),
        seq.num_dims(),
        seq.coord_dim()
    );
    println!("traversal order: {:?}", topology.euler_tour());

    let pair = assemble(&seq, &topology)?;
    println!("feature vector length: {}", pair.feature_len);
    println!("time-major tensor (dim, time, feature): {:?}", pair.r_tdf.shape());
    println!("dim-major tensor (time, traversal, feature): {:?}", pair.r_dtf.shape());

    // the feature vector of node 2 at time 5, from the time-major view
    let f = pair.feature_len;
    let t_len = seq.num_frames();
    let base = (2 * t_len + 5) * f;
    let h = &pair.r_tdf.data()[base..base + f];
    println!("h(t=5, d=2) = {h:.4?}");
    println!("  [0..2]  position");
    println!("  [2..5]  normalized pairwise edge angles (zero-padded)");
    println!("  [5..7]  offset from previous frame");
    println!("  [7]     distance to skeleton centroid");
    Ok(())
}
