//! Augmented tensor representation of structured time series.
//!
//! Each (time step, dimension) pair gets a hand-crafted feature vector:
//! raw position (l values), normalized pairwise angles between incident tree
//! edges (p values, zero-padded), offset from the previous frame (l values)
//! and distance to the centroid (1 value), so `f = 2l + p + 1`. The vectors
//! are arranged into the pair of rank-3 tensors fed to the two streams.

use crate::error::{Result, StsError};
use crate::tensor::Tensor;
use crate::topology::SkeletonTopology;

/// A raw labeled sequence: `n` frames of `m` points in `l`-dimensional space.
#[derive(Clone, Debug, PartialEq)]
pub struct StsSequence {
    pub label: usize,
    n: usize,
    m: usize,
    l: usize,
    frames: Vec<f64>,
}

impl StsSequence {
    pub fn new(label: usize, n: usize, m: usize, l: usize, frames: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(StsError::Input(format!(
                "sequence needs at least 2 frames, got {n}"
            )));
        }
        if frames.len() != n * m * l {
            return Err(StsError::Input(format!(
                "expected {} coordinates for {n}x{m}x{l}, got {}",
                n * m * l,
                frames.len()
            )));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(StsError::Input("non-finite coordinate in sequence".into()));
        }
        Ok(StsSequence {
            label,
            n,
            m,
            l,
            frames,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.n
    }

    pub fn num_dims(&self) -> usize {
        self.m
    }

    pub fn coord_dim(&self) -> usize {
        self.l
    }

    pub fn frames(&self) -> &[f64] {
        &self.frames
    }

    /// Coordinates of dimension `j` at time `i`.
    pub fn point(&self, i: usize, j: usize) -> &[f64] {
        let base = (i * self.m + j) * self.l;
        &self.frames[base..base + self.l]
    }
}

/// The two augmented rank-3 tensors of one sequence.
///
/// `r_tdf` has shape (m, T, f): structural dimensions as channels, a
/// (time, feature) plane per channel. `r_dtf` has shape (T, 2m-1, f): time
/// steps as channels, rows ordered by the Euler tour of the dimension tree
/// (revisited nodes repeat their feature rows).
#[derive(Clone, Debug, PartialEq)]
pub struct StsTensorPair {
    pub r_tdf: Tensor,
    pub r_dtf: Tensor,
    pub feature_len: usize,
}

pub fn extract_position(seq: &StsSequence, i: usize, j: usize) -> Vec<f64> {
    seq.point(i, j).to_vec()
}

/// Normalized pairwise angles between the edges connecting `j` to its tree
/// neighbors, using positions at time `i`. Angles are arccos of the
/// normalized dot product divided by pi, so they land in [0,1]; pairs are
/// ordered by (min,max) neighbor index and the block is zero-padded to the
/// dataset-wide length `p`. Zero-length edges contribute angle 0.
pub fn extract_angles(
    seq: &StsSequence,
    i: usize,
    j: usize,
    topology: &SkeletonTopology,
) -> Vec<f64> {
    let p = topology.angle_feature_count();
    let mut out = vec![0.0; p];
    let neighbors = topology.neighbors(j);
    let pj = seq.point(i, j);
    let edges: Vec<Vec<f64>> = neighbors
        .iter()
        .map(|&k| {
            seq.point(i, k)
                .iter()
                .zip(pj)
                .map(|(a, b)| a - b)
                .collect()
        })
        .collect();
    let mut idx = 0;
    for a in 0..edges.len() {
        for b in a + 1..edges.len() {
            let na: f64 = edges[a].iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb: f64 = edges[b].iter().map(|v| v * v).sum::<f64>().sqrt();
            let angle = if na == 0.0 || nb == 0.0 {
                0.0
            } else {
                let dot: f64 = edges[a].iter().zip(&edges[b]).map(|(x, y)| x * y).sum();
                (dot / (na * nb)).clamp(-1.0, 1.0).acos()
            };
            out[idx] = angle / std::f64::consts::PI;
            idx += 1;
        }
    }
    out
}

/// Displacement of `j` between frames `i-1` and `i`; zero at the first frame.
pub fn extract_offset(seq: &StsSequence, i: usize, j: usize) -> Vec<f64> {
    if i == 0 {
        return vec![0.0; seq.coord_dim()];
    }
    seq.point(i, j)
        .iter()
        .zip(seq.point(i - 1, j))
        .map(|(a, b)| a - b)
        .collect()
}

/// Euclidean distance from `j` to the centroid of all dimensions at time `i`.
pub fn extract_distance(seq: &StsSequence, i: usize, j: usize) -> f64 {
    let m = seq.num_dims();
    let l = seq.coord_dim();
    let mut centroid = vec![0.0; l];
    for k in 0..m {
        for (c, v) in centroid.iter_mut().zip(seq.point(i, k)) {
            *c += v;
        }
    }
    for c in centroid.iter_mut() {
        *c /= m as f64;
    }
    seq.point(i, j)
        .iter()
        .zip(&centroid)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Feature length for a dataset built over `topology`.
pub fn feature_len(topology: &SkeletonTopology) -> usize {
    2 * topology.coord_dim() + topology.angle_feature_count() + 1
}

/// One concatenated feature vector `h^{t_i}_{d_j}`.
pub fn feature_vector(
    seq: &StsSequence,
    i: usize,
    j: usize,
    topology: &SkeletonTopology,
) -> Vec<f64> {
    let mut h = extract_position(seq, i, j);
    h.extend(extract_angles(seq, i, j, topology));
    h.extend(extract_offset(seq, i, j));
    h.push(extract_distance(seq, i, j));
    h
}

/// Builds the augmented tensor pair for one (already resampled) sequence.
pub fn assemble(seq: &StsSequence, topology: &SkeletonTopology) -> Result<StsTensorPair> {
    if seq.num_dims() != topology.num_dims() || seq.coord_dim() != topology.coord_dim() {
        return Err(StsError::Input(format!(
            "sequence ({} dims, {} coords) does not match topology ({} dims, {} coords)",
            seq.num_dims(),
            seq.coord_dim(),
            topology.num_dims(),
            topology.coord_dim()
        )));
    }
    let m = seq.num_dims();
    let t = seq.num_frames();
    let f = feature_len(topology);
    // all feature vectors, indexed (time, dimension)
    let mut features = vec![0.0; t * m * f];
    for i in 0..t {
        for j in 0..m {
            let h = feature_vector(seq, i, j, topology);
            features[(i * m + j) * f..(i * m + j) * f + f].copy_from_slice(&h);
        }
    }
    let mut r_tdf = vec![0.0; m * t * f];
    for j in 0..m {
        for i in 0..t {
            let src = (i * m + j) * f;
            let dst = (j * t + i) * f;
            r_tdf[dst..dst + f].copy_from_slice(&features[src..src + f]);
        }
    }
    let tour = topology.euler_tour();
    let d_trav = tour.len();
    let mut r_dtf = vec![0.0; t * d_trav * f];
    for i in 0..t {
        for (pos, &j) in tour.iter().enumerate() {
            let src = (i * m + j) * f;
            let dst = (i * d_trav + pos) * f;
            r_dtf[dst..dst + f].copy_from_slice(&features[src..src + f]);
        }
    }
    Ok(StsTensorPair {
        r_tdf: Tensor::new(vec![m, t, f], r_tdf)?,
        r_dtf: Tensor::new(vec![t, d_trav, f], r_dtf)?,
        feature_len: f,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq_from_frames(frames: Vec<Vec<Vec<f64>>>) -> StsSequence {
        let n = frames.len();
        let m = frames[0].len();
        let l = frames[0][0].len();
        let flat: Vec<f64> = frames
            .iter()
            .flat_map(|fr| fr.iter().flat_map(|p| p.iter().cloned()))
            .collect();
        StsSequence::new(0, n, m, l, flat).unwrap()
    }

    #[test]
    fn position_is_raw_slice() {
        let seq = seq_from_frames(vec![
            vec![vec![3.0, 4.0], vec![1.0, 2.0]],
            vec![vec![3.0, 4.0], vec![1.0, 2.0]],
        ]);
        assert_eq!(extract_position(&seq, 0, 0), vec![3.0, 4.0]);
        assert_eq!(extract_position(&seq, 1, 1), vec![1.0, 2.0]);
    }

    #[test]
    fn right_angle_normalizes_to_half() {
        // node 0 at the origin with neighbors at (1,0) and (0,1)
        let topo = SkeletonTopology::new(vec![None, Some(0), Some(0)], 2).unwrap();
        let seq = seq_from_frames(vec![
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
        ]);
        let angles = extract_angles(&seq, 0, 0, &topo);
        assert_eq!(angles.len(), 1);
        assert!((angles[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn leaf_has_zero_angle_block() {
        let topo = SkeletonTopology::new(vec![None, Some(0), Some(0)], 2).unwrap();
        let seq = seq_from_frames(vec![
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
        ]);
        assert_eq!(extract_angles(&seq, 0, 1, &topo), vec![0.0]);
    }

    #[test]
    fn collinear_opposite_neighbors_give_one() {
        let topo = SkeletonTopology::new(vec![None, Some(0), Some(0)], 2).unwrap();
        let seq = seq_from_frames(vec![
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0]],
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0]],
        ]);
        let angles = extract_angles(&seq, 0, 0, &topo);
        assert!((angles[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_edge_contributes_zero() {
        // neighbor 1 coincides with node 0
        let topo = SkeletonTopology::new(vec![None, Some(0), Some(0)], 2).unwrap();
        let seq = seq_from_frames(vec![
            vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![0.0, 1.0]],
        ]);
        assert_eq!(extract_angles(&seq, 0, 0, &topo), vec![0.0]);
    }

    #[test]
    fn offsets_and_first_frame_rule() {
        let seq = seq_from_frames(vec![
            vec![vec![0.0, 0.0]],
            vec![vec![1.0, 2.0]],
            vec![vec![1.0, 2.0]],
        ]);
        assert_eq!(extract_offset(&seq, 0, 0), vec![0.0, 0.0]);
        assert_eq!(extract_offset(&seq, 1, 0), vec![1.0, 2.0]);
        assert_eq!(extract_offset(&seq, 2, 0), vec![0.0, 0.0]);
    }

    #[test]
    fn distance_to_centroid() {
        let seq = seq_from_frames(vec![
            vec![vec![0.0, 0.0], vec![2.0, 0.0]],
            vec![vec![0.0, 0.0], vec![2.0, 0.0]],
        ]);
        assert!((extract_distance(&seq, 0, 0) - 1.0).abs() < 1e-12);
        assert!((extract_distance(&seq, 0, 1) - 1.0).abs() < 1e-12);
        let coincident = seq_from_frames(vec![
            vec![vec![3.0, 3.0], vec![3.0, 3.0]],
            vec![vec![3.0, 3.0], vec![3.0, 3.0]],
        ]);
        assert_eq!(extract_distance(&coincident, 0, 0), 0.0);
    }

    #[test]
    fn assemble_default_synth_shapes() {
        let topo = SkeletonTopology::binary_tree_7();
        let t = 32;
        let frames: Vec<f64> = (0..t * 7 * 2).map(|i| (i as f64) * 0.01).collect();
        let seq = StsSequence::new(3, t, 7, 2, frames).unwrap();
        let pair = assemble(&seq, &topo).unwrap();
        assert_eq!(pair.feature_len, 8);
        assert_eq!(pair.r_tdf.shape(), &[7, 32, 8]);
        assert_eq!(pair.r_dtf.shape(), &[32, 13, 8]);
    }

    #[test]
    fn single_node_tree_has_unit_traversal_height() {
        let topo = SkeletonTopology::new(vec![None], 2).unwrap();
        let seq = seq_from_frames(vec![vec![vec![1.0, 2.0]], vec![vec![2.0, 3.0]]]);
        let pair = assemble(&seq, &topo).unwrap();
        assert_eq!(pair.r_dtf.shape()[1], 1);
    }

    #[test]
    fn transposition_identity_at_first_visits() {
        let topo = SkeletonTopology::binary_tree_7();
        let t = 6;
        let frames: Vec<f64> = (0..t * 7 * 2).map(|i| ((i * 7919) % 100) as f64 * 0.1).collect();
        let seq = StsSequence::new(0, t, 7, 2, frames).unwrap();
        let pair = assemble(&seq, &topo).unwrap();
        let f = pair.feature_len;
        let first = topo.first_visit_positions();
        let d_trav = topo.euler_tour().len();
        for j in 0..7 {
            for i in 0..t {
                let a = &pair.r_tdf.data()[(j * t + i) * f..(j * t + i) * f + f];
                let pos = first[j];
                let b = &pair.r_dtf.data()[(i * d_trav + pos) * f..(i * d_trav + pos) * f + f];
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn topology_mismatch_rejected() {
        let topo = SkeletonTopology::binary_tree_7();
        let seq = seq_from_frames(vec![vec![vec![0.0, 0.0]], vec![vec![1.0, 1.0]]]);
        assert!(assemble(&seq, &topo).is_err());
    }
}
