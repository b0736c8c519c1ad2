//! Synthetic STS benchmark generator.
//!
//! Each class is defined by a range of per-step distance changes and a range
//! of per-step angle changes. An instance is an articulated 7-point
//! three-level binary tree on the plane, each node held in polar coordinates
//! relative to its parent (the root hangs off a fixed virtual root). Motion
//! is a constant per-step drift of each node's distance and angle, sampled
//! once per (instance, node) from the class ranges with a random sign and
//! scaled by 1/T so the total excursion is range-controlled regardless of T.

use crate::error::{Result, StsError};
use crate::repr::StsSequence;
use crate::topology::SkeletonTopology;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Minimum node-to-parent distance; keeps edges away from zero length so the
/// angle extractor never sees degenerate edges.
pub const MIN_EDGE_LEN: f64 = 0.1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Number of classes N.
    pub n_classes: usize,
    /// Instances per class M.
    pub instances_per_class: usize,
    /// Temporal length T (frames per instance, including the initial one).
    pub temporal_len: usize,
    /// Rate of change Delta; upper range bounds are sampled up to
    /// `lower * delta`.
    pub delta: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_classes: 10,
            instances_per_class: 60,
            temporal_len: 32,
            delta: 2.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.instances_per_class == 0 || self.temporal_len == 0 {
            return Err(StsError::Config(
                "n_classes, instances_per_class and temporal_len must be >= 1".into(),
            ));
        }
        if !(self.delta > 1.0) {
            return Err(StsError::Config(format!(
                "delta must be > 1, got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// Per-class motion ranges.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassParams {
    pub theta_lower: f64,
    pub theta_upper: f64,
    pub phi_lower: f64,
    pub phi_upper: f64,
}

/// Polar state of one node for one instance: initial distance/angle to the
/// parent plus the constant per-step drift.
#[derive(Clone, Copy, Debug)]
pub struct NodePolar {
    pub r0: f64,
    pub psi0: f64,
    pub dr: f64,
    pub dpsi: f64,
}

/// theta_l ~ U[0,4], theta_u ~ U[theta_l, theta_l*delta],
/// phi_l ~ U[0,0.2], phi_u ~ U[phi_l, phi_l*delta].
pub fn sample_class_params<R: Rng>(rng: &mut R, delta: f64) -> ClassParams {
    let theta_lower: f64 = rng.gen_range(0.0..=4.0);
    let theta_upper = rng.gen_range(theta_lower..=theta_lower * delta);
    let phi_lower: f64 = rng.gen_range(0.0..=0.2);
    let phi_upper = rng.gen_range(phi_lower..=phi_lower * delta);
    ClassParams {
        theta_lower,
        theta_upper,
        phi_lower,
        phi_upper,
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Independent, reproducible substream for a (class, instance) pair.
/// Instance index `usize::MAX` is reserved for the class-parameter draw.
pub fn substream(seed: u64, class: usize, instance: usize) -> ChaCha8Rng {
    let mixed = splitmix64(seed ^ splitmix64(class as u64 ^ splitmix64(instance as u64)));
    ChaCha8Rng::seed_from_u64(mixed)
}

/// Samples the polar states of one instance. Order: virtual root position,
/// then per node (index order) initial angle and distance, then per node the
/// distance and angle drifts with their signs.
pub fn sample_instance_state<R: Rng>(
    params: &ClassParams,
    temporal_len: usize,
    rng: &mut R,
) -> (Vec<f64>, Vec<NodePolar>) {
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let angle_dist = Normal::new(0.0, 10.0).unwrap();
    let dist_dist = Normal::new(5.0, 1.0).unwrap();
    let m = 7;
    let virtual_root = vec![std_normal.sample(rng), std_normal.sample(rng)];
    let mut nodes = Vec::with_capacity(m);
    for _ in 0..m {
        let psi0: f64 = angle_dist.sample(rng);
        let psi0 = psi0.rem_euclid(TAU);
        let r0: f64 = dist_dist.sample(rng);
        let r0 = r0.max(MIN_EDGE_LEN);
        nodes.push(NodePolar {
            r0,
            psi0,
            dr: 0.0,
            dpsi: 0.0,
        });
    }
    let t = temporal_len as f64;
    for node in nodes.iter_mut() {
        let dr_mag = rng.gen_range(params.theta_lower..=params.theta_upper);
        let dr_sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let dpsi_mag = rng.gen_range(params.phi_lower..=params.phi_upper);
        let dpsi_sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        node.dr = dr_sign * dr_mag / t;
        node.dpsi = dpsi_sign * dpsi_mag / t;
    }
    (virtual_root, nodes)
}

/// Polar state of node `j` at frame `k`. The distance is floored at
/// [`MIN_EDGE_LEN`].
pub fn polar_at(node: &NodePolar, k: usize) -> (f64, f64) {
    let r = (node.r0 + k as f64 * node.dr).max(MIN_EDGE_LEN);
    let psi = node.psi0 + k as f64 * node.dpsi;
    (r, psi)
}

/// Renders Cartesian frames from sampled polar states:
/// `child = parent - r * (cos psi, sin psi)`, recursively from the virtual
/// root.
pub fn render_frames(
    topology: &SkeletonTopology,
    virtual_root: &[f64],
    nodes: &[NodePolar],
    temporal_len: usize,
) -> Vec<f64> {
    let m = topology.num_dims();
    let mut frames = vec![0.0; temporal_len * m * 2];
    for k in 0..temporal_len {
        let frame = &mut frames[k * m * 2..(k + 1) * m * 2];
        // parents have lower indices in the generator topology
        for j in 0..m {
            let (r, psi) = polar_at(&nodes[j], k);
            let (px, py) = match topology.parent(j) {
                None => (virtual_root[0], virtual_root[1]),
                Some(p) => (frame[p * 2], frame[p * 2 + 1]),
            };
            frame[j * 2] = px - r * psi.cos();
            frame[j * 2 + 1] = py - r * psi.sin();
        }
    }
    frames
}

/// Synthesizes one labeled instance of `params`.
pub fn synthesize_instance<R: Rng>(
    params: &ClassParams,
    temporal_len: usize,
    label: usize,
    rng: &mut R,
) -> Result<StsSequence> {
    if temporal_len == 0 {
        return Err(StsError::Config("temporal length must be positive".into()));
    }
    let topology = SkeletonTopology::binary_tree_7();
    let (virtual_root, nodes) = sample_instance_state(params, temporal_len, rng);
    let frames = render_frames(&topology, &virtual_root, &nodes, temporal_len);
    StsSequence::new(label, temporal_len, 7, 2, frames)
}

/// Generates the full dataset: `n_classes * instances_per_class` sequences
/// ordered by (class, instance), deterministic under the seed.
pub fn generate_dataset(config: &SynthConfig) -> Result<Vec<StsSequence>> {
    config.validate()?;
    let mut out = Vec::with_capacity(config.n_classes * config.instances_per_class);
    for class in 0..config.n_classes {
        let mut class_rng = substream(config.seed, class, usize::MAX);
        let params = sample_class_params(&mut class_rng, config.delta);
        for instance in 0..config.instances_per_class {
            let mut rng = substream(config.seed, class, instance);
            out.push(synthesize_instance(
                &params,
                config.temporal_len,
                class,
                &mut rng,
            )?);
        }
    }
    Ok(out)
}

/// The topology every synthetic dataset uses.
pub fn synth_topology() -> SkeletonTopology {
    SkeletonTopology::binary_tree_7()
}
