//! Temporal-semantic clustering: K-means over frame features where each
//! assignment blends a min-max normalized feature distance with a normalized
//! temporal distance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::store::{minmax_normalize, FrameFeature};

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_EPSILON: f64 = 1e-4;
pub const DEFAULT_ALPHA_TIME: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("no frames to cluster")]
    NoFrames,
    #[error("k = {k} is invalid for {frames} frames")]
    InvalidK { k: usize, frames: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(&'static str),
    #[error("frame {index} has shape {got:?}, expected {expected:?}")]
    ShapeMismatch { index: usize, expected: (usize, usize), got: (usize, usize) },
    #[error("result does not match the frame set")]
    ResultMismatch,
}

/// Cluster count as a fraction of the frame count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KRatio {
    pub numerator: u32,
    pub denominator: u32,
}

impl KRatio {
    pub const fn new(numerator: u32, denominator: u32) -> Self {
        Self { numerator, denominator }
    }
}

impl Default for KRatio {
    fn default() -> Self {
        Self::new(1, 15)
    }
}

/// `max(1, floor(num_frames * ratio))`, never more than `num_frames`.
pub fn choose_k(num_frames: usize, ratio: KRatio) -> usize {
    if num_frames == 0 {
        return 0;
    }
    let k = if ratio.denominator == 0 {
        num_frames as u128
    } else {
        num_frames as u128 * ratio.numerator as u128 / ratio.denominator as u128
    };
    (k as usize).clamp(1, num_frames)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub k: usize,
    pub alpha_time: f64,
    pub max_iters: usize,
    pub epsilon: f64,
    pub seed: u64,
}

impl ClusterConfig {
    pub fn new(k: usize) -> Self {
        Self { k, alpha_time: DEFAULT_ALPHA_TIME, max_iters: DEFAULT_MAX_ITERS, epsilon: DEFAULT_EPSILON, seed: 0 }
    }

    pub fn validate(&self, frames: usize) -> Result<(), ClusterError> {
        if self.k == 0 || self.k > frames {
            return Err(ClusterError::InvalidK { k: self.k, frames });
        }
        if !(self.alpha_time.is_finite() && self.alpha_time >= 0.0) {
            return Err(ClusterError::InvalidConfig("alpha_time must be finite and >= 0"));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(ClusterError::InvalidConfig("epsilon must be finite and >= 0"));
        }
        if self.max_iters == 0 {
            return Err(ClusterError::InvalidConfig("max_iters must be positive"));
        }
        Ok(())
    }
}

/// Cluster centres: flattened feature means plus time means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroids {
    pub features: Vec<Vec<f64>>,
    pub times: Vec<f64>,
}

impl Centroids {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn from_frames(frames: &[&FrameFeature]) -> Self {
        Self {
            features: frames.iter().map(|f| f.flat().iter().map(|&v| v as f64).collect()).collect(),
            times: frames.iter().map(|f| f.timestamp()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    /// Patch rows P of each centroid matrix.
    pub rows: usize,
    /// Feature dimension D of each centroid matrix.
    pub dim: usize,
    /// k centroids, each a row-major `P x D` matrix.
    pub feature_centroids: Vec<Vec<f64>>,
    pub time_centroids: Vec<f64>,
    /// Zero-based cluster index per frame.
    pub assignments: Vec<usize>,
    pub iterations: usize,
    pub final_delta: f64,
}

impl ClusterResult {
    pub fn k(&self) -> usize {
        self.time_centroids.len()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

fn euclidean(frame: &FrameFeature, centroid: &[f64]) -> f64 {
    frame
        .flat()
        .iter()
        .zip(centroid)
        .map(|(&x, &c)| {
            let d = x as f64 - c;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Composite distance from one frame to every centroid.
///
/// Feature and time distances are each min-max normalized across the k
/// centroids for this frame before being blended as
/// `sqrt(norm_f^2 + alpha_time * norm_t^2)`.
pub fn composite_distances(frame: &FrameFeature, centroids: &Centroids, alpha_time: f64) -> Vec<f64> {
    let feat: Vec<f64> = centroids.features.iter().map(|c| euclidean(frame, c)).collect();
    let time: Vec<f64> = centroids.times.iter().map(|&tau| (frame.timestamp() - tau).abs()).collect();
    let nf = minmax_normalize(&feat);
    let nt = minmax_normalize(&time);
    nf.iter().zip(&nt).map(|(f, t)| (f * f + alpha_time * t * t).sqrt()).collect()
}

/// Index of the smallest value; the lowest index wins ties.
pub(crate) fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = j;
        }
    }
    best
}

/// One assignment pass.
pub fn assign(frames: &[FrameFeature], centroids: &Centroids, alpha_time: f64, exec: Exec) -> Vec<usize> {
    exec.map(frames, |f| argmin(&composite_distances(f, centroids, alpha_time)))
}

/// k-means++ seeding on flattened features only; each seed frame's timestamp
/// becomes its cluster's initial time centroid. Returns the chosen frame
/// indices (all distinct) together with the centroids.
pub fn kmeanspp_init<R: Rng + ?Sized>(frames: &[FrameFeature], k: usize, rng: &mut R) -> (Vec<usize>, Centroids) {
    kmeanspp_init_with(frames, k, rng, Exec::default())
}

pub(crate) fn kmeanspp_init_with<R: Rng + ?Sized>(
    frames: &[FrameFeature],
    k: usize,
    rng: &mut R,
    exec: Exec,
) -> (Vec<usize>, Centroids) {
    let n = frames.len();
    let k = k.min(n);
    let mut chosen = Vec::with_capacity(k);
    if k == 0 {
        return (chosen, Centroids { features: vec![], times: vec![] });
    }
    let mut taken = vec![false; n];
    let first = rng.random_range(0..n);
    chosen.push(first);
    taken[first] = true;

    let sq = |i: usize, c: usize| -> f64 {
        frames[i]
            .flat()
            .iter()
            .zip(frames[c].flat())
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum()
    };
    let mut nearest = exec.map_range(n, |i| sq(i, first));

    while chosen.len() < k {
        let weights: Vec<f64> = (0..n).map(|i| if taken[i] { 0.0 } else { nearest[i] }).collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in weights.iter().enumerate() {
                if w > 0.0 {
                    acc += w;
                    pick = Some(i);
                    if acc > target {
                        break;
                    }
                }
            }
            pick.expect("positive total implies a positive weight")
        } else {
            // every remaining frame coincides with a seed; pick uniformly among them
            let free: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(pick);
        taken[pick] = true;
        let fresh = exec.map_range(n, |i| sq(i, pick));
        for (m, f) in nearest.iter_mut().zip(fresh) {
            *m = m.min(f);
        }
    }
    let seeds: Vec<&FrameFeature> = chosen.iter().map(|&i| &frames[i]).collect();
    (chosen, Centroids::from_frames(&seeds))
}

fn check_frames(frames: &[FrameFeature]) -> Result<(usize, usize), ClusterError> {
    let first = frames.first().ok_or(ClusterError::NoFrames)?;
    let shape = (first.rows(), first.dim());
    for (index, f) in frames.iter().enumerate() {
        if (f.rows(), f.dim()) != shape {
            return Err(ClusterError::ShapeMismatch { index, expected: shape, got: (f.rows(), f.dim()) });
        }
    }
    Ok(shape)
}

pub fn cluster(frames: &[FrameFeature], config: &ClusterConfig) -> Result<ClusterResult, ClusterError> {
    cluster_with(frames, config, Exec::default())
}

pub fn cluster_with(
    frames: &[FrameFeature],
    config: &ClusterConfig,
    exec: Exec,
) -> Result<ClusterResult, ClusterError> {
    check_frames(frames)?;
    config.validate(frames.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (_, init) = kmeanspp_init_with(frames, config.k, &mut rng, exec);
    run(frames, config, init, &mut rng, exec)
}

/// Runs the iteration from caller-supplied initial centroids. Empty clusters
/// are reseeded from an RNG seeded with `config.seed`.
pub fn cluster_from_init(
    frames: &[FrameFeature],
    config: &ClusterConfig,
    init: Centroids,
    exec: Exec,
) -> Result<ClusterResult, ClusterError> {
    check_frames(frames)?;
    config.validate(frames.len())?;
    if init.len() != config.k || init.features.iter().any(|c| c.len() != frames[0].flat().len()) {
        return Err(ClusterError::InvalidConfig("initial centroids do not match k or frame shape"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    run(frames, config, init, &mut rng, exec)
}

fn mean_of(frames: &[FrameFeature], members: &[usize]) -> (Vec<f64>, f64) {
    let len = frames[members[0]].flat().len();
    let mut acc = vec![0.0f64; len];
    let mut t = 0.0;
    for &i in members {
        for (a, &v) in acc.iter_mut().zip(frames[i].flat()) {
            *a += v as f64;
        }
        t += frames[i].timestamp();
    }
    let n = members.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    (acc, t / n)
}

fn group(assignments: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); k];
    for (i, &a) in assignments.iter().enumerate() {
        members[a].push(i);
    }
    members
}

fn run(
    frames: &[FrameFeature],
    config: &ClusterConfig,
    mut centroids: Centroids,
    rng: &mut ChaCha8Rng,
    exec: Exec,
) -> Result<ClusterResult, ClusterError> {
    let n = frames.len();
    let k = config.k;
    let mut assignments = vec![0usize; n];
    let mut iterations = 0;
    let mut delta = f64::INFINITY;

    while iterations < config.max_iters {
        assignments = assign(frames, &centroids, config.alpha_time, exec);
        let members = group(&assignments, k);
        let means: Vec<Option<(Vec<f64>, f64)>> = exec.map(&members, |m| (!m.is_empty()).then(|| mean_of(frames, m)));

        let mut next = Centroids { features: Vec::with_capacity(k), times: Vec::with_capacity(k) };
        for mean in means {
            let (c, tau) = mean.unwrap_or_else(|| {
                let r = rng.random_range(0..n);
                (frames[r].flat().iter().map(|&v| v as f64).collect(), frames[r].timestamp())
            });
            next.features.push(c);
            next.times.push(tau);
        }

        let moved_feat: f64 = next
            .features
            .iter()
            .zip(&centroids.features)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
            .sum();
        let moved_time: f64 = next.times.iter().zip(&centroids.times).map(|(a, b)| (a - b).abs()).sum();
        delta = moved_feat + moved_time;
        centroids = next;
        iterations += 1;
        if delta <= config.epsilon {
            break;
        }
    }

    fill_empty_clusters(frames, &mut assignments, &mut centroids);

    Ok(ClusterResult {
        rows: frames[0].rows(),
        dim: frames[0].dim(),
        feature_centroids: centroids.features,
        time_centroids: centroids.times,
        assignments,
        iterations,
        final_delta: delta,
    })
}

/// Gives every empty cluster one member so the result is a proper partition.
///
/// The donor is the frame farthest (in feature space) from its own centroid
/// among clusters with at least two members; it becomes the empty cluster's
/// centroid and its old cluster's mean is recomputed.
fn fill_empty_clusters(frames: &[FrameFeature], assignments: &mut [usize], centroids: &mut Centroids) {
    let k = centroids.len();
    loop {
        let members = group(assignments, k);
        let Some(empty) = members.iter().position(Vec::is_empty) else {
            return;
        };
        let mut donor: Option<(usize, f64)> = None;
        for (i, &a) in assignments.iter().enumerate() {
            if members[a].len() < 2 {
                continue;
            }
            let d = euclidean(&frames[i], &centroids.features[a]);
            if donor.is_none_or(|(_, best)| d > best) {
                donor = Some((i, d));
            }
        }
        let Some((i, _)) = donor else {
            return;
        };
        let from = assignments[i];
        log::debug!("cluster {empty} empty after final pass; moving frame {i} from cluster {from}");
        assignments[i] = empty;
        centroids.features[empty] = frames[i].flat().iter().map(|&v| v as f64).collect();
        centroids.times[empty] = frames[i].timestamp();
        let rest: Vec<usize> = members[from].iter().copied().filter(|&m| m != i).collect();
        let (c, tau) = mean_of(frames, &rest);
        centroids.features[from] = c;
        centroids.times[from] = tau;
    }
}

/// A temporally coherent group of frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Position in time-centroid order.
    pub event_id: usize,
    /// Index of the backing cluster in the [`ClusterResult`].
    pub cluster: usize,
    /// Frame indices sorted by timestamp.
    pub members: Vec<usize>,
    pub time_centroid: f64,
    pub start_s: f64,
    pub end_s: f64,
}

impl Event {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// One event per non-empty cluster, ordered by time centroid (cluster index
/// breaks ties).
pub fn events_from(result: &ClusterResult, frames: &[FrameFeature]) -> Result<Vec<Event>, ClusterError> {
    if result.assignments.len() != frames.len() || result.assignments.iter().any(|&a| a >= result.k()) {
        return Err(ClusterError::ResultMismatch);
    }
    let mut events: Vec<Event> = group(&result.assignments, result.k())
        .into_iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .map(|(cluster, mut members)| {
            members.sort_by(|&a, &b| frames[a].timestamp().total_cmp(&frames[b].timestamp()).then(a.cmp(&b)));
            Event {
                event_id: 0,
                cluster,
                start_s: frames[members[0]].timestamp(),
                end_s: frames[*members.last().unwrap()].timestamp(),
                time_centroid: result.time_centroids[cluster],
                members,
            }
        })
        .collect();
    events.sort_by(|a, b| a.time_centroid.total_cmp(&b.time_centroid).then(a.cluster.cmp(&b.cluster)));
    for (i, e) in events.iter_mut().enumerate() {
        e.event_id = i;
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(v: &[f32], t: f64) -> FrameFeature {
        FrameFeature::new(1, v.len(), v.to_vec(), t).unwrap()
    }

    #[test]
    fn choose_k_examples() {
        assert_eq!(choose_k(150, KRatio::new(1, 15)), 10);
        assert_eq!(choose_k(10, KRatio::new(1, 15)), 1);
        assert_eq!(choose_k(30, KRatio::new(1, 5)), 6);
        assert_eq!(choose_k(4, KRatio::new(2, 1)), 4);
        assert_eq!(choose_k(1, KRatio::default()), 1);
    }

    #[test]
    fn single_centroid_distance_is_zero() {
        let c = Centroids { features: vec![vec![3.0, 4.0]], times: vec![7.0] };
        assert_eq!(composite_distances(&frame(&[0.0, 0.0], 0.0), &c, 1.0), vec![0.0]);
    }

    #[test]
    fn time_breaks_feature_ties() {
        let c = Centroids { features: vec![vec![1.0, 0.0], vec![-1.0, 0.0]], times: vec![100.0, 0.0] };
        let d = composite_distances(&frame(&[0.0, 0.0], 0.0), &c, 1.0);
        // equal feature distance normalizes to (0, 0); time normalizes to (1, 0)
        assert_eq!(d, vec![1.0, 0.0]);
        assert!(d[1] < d[0]);
    }

    #[test]
    fn alpha_zero_tracks_raw_feature_argmin() {
        let c = Centroids { features: vec![vec![5.0], vec![1.0], vec![2.0]], times: vec![0.0, 50.0, 9.0] };
        let d = composite_distances(&frame(&[1.2], 0.0), &c, 0.0);
        assert_eq!(argmin(&d), 1);
    }

    #[test]
    fn argmin_prefers_lowest_index() {
        assert_eq!(argmin(&[1.0, 0.5, 0.5]), 1);
        assert_eq!(argmin(&[0.0, 0.0]), 0);
    }

    #[test]
    fn kmeanspp_exhausts_and_is_deterministic() {
        let frames: Vec<_> = (0..6).map(|i| frame(&[i as f32, 0.0], i as f64)).collect();
        let (mut idx, c) = kmeanspp_init(&frames, 6, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(c.len(), 6);
        idx.sort();
        assert_eq!(idx, (0..6).collect::<Vec<_>>());

        let a = kmeanspp_init(&frames, 3, &mut ChaCha8Rng::seed_from_u64(9));
        let b = kmeanspp_init(&frames, 3, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn kmeanspp_distinct_on_duplicates() {
        let frames: Vec<_> = (0..5).map(|i| frame(&[1.0], i as f64)).collect();
        let (mut idx, _) = kmeanspp_init(&frames, 5, &mut ChaCha8Rng::seed_from_u64(0));
        idx.sort();
        idx.dedup();
        assert_eq!(idx.len(), 5);
    }

    #[test]
    fn k_one_gives_global_mean() {
        let frames = vec![frame(&[0.0, 2.0], 0.0), frame(&[4.0, 2.0], 2.0), frame(&[2.0, 8.0], 7.0)];
        let r = cluster(&frames, &ClusterConfig::new(1)).unwrap();
        assert_eq!(r.feature_centroids, vec![vec![2.0, 4.0]]);
        assert_eq!(r.time_centroids, vec![3.0]);
        assert_eq!(r.assignments, vec![0, 0, 0]);
        // the first pass lands on the mean; the second sees no movement
        assert!(r.iterations <= 2);
        assert_eq!(r.final_delta, 0.0);
    }

    #[test]
    fn invalid_configs() {
        let frames = vec![frame(&[0.0], 0.0), frame(&[1.0], 1.0)];
        assert_eq!(cluster(&frames, &ClusterConfig::new(3)), Err(ClusterError::InvalidK { k: 3, frames: 2 }));
        assert_eq!(cluster(&frames, &ClusterConfig::new(0)), Err(ClusterError::InvalidK { k: 0, frames: 2 }));
        assert_eq!(cluster(&[], &ClusterConfig::new(1)), Err(ClusterError::NoFrames));
        let mut c = ClusterConfig::new(1);
        c.alpha_time = -1.0;
        assert!(matches!(cluster(&frames, &c), Err(ClusterError::InvalidConfig(_))));
        let mixed = vec![frame(&[0.0], 0.0), frame(&[1.0, 2.0], 1.0)];
        assert!(matches!(cluster(&mixed, &ClusterConfig::new(1)), Err(ClusterError::ShapeMismatch { index: 1, .. })));
    }

    #[test]
    fn max_iters_bounds_iterations() {
        let frames: Vec<_> = (0..20).map(|i| frame(&[(i % 7) as f32, (i % 3) as f32], i as f64)).collect();
        let mut c = ClusterConfig::new(4);
        c.max_iters = 1;
        c.epsilon = 0.0;
        let r = cluster(&frames, &c).unwrap();
        assert_eq!(r.iterations, 1);
        assert!(r.cluster_sizes().iter().all(|&s| s > 0));
    }

    #[test]
    fn empty_cluster_is_filled() {
        // two identical centroids: the higher index never wins a tie
        let frames = vec![frame(&[0.0], 0.0), frame(&[1.0], 1.0), frame(&[10.0], 2.0)];
        let init = Centroids { features: vec![vec![0.0], vec![0.0]], times: vec![0.0, 0.0] };
        let mut c = ClusterConfig::new(2);
        c.max_iters = 1;
        let r = cluster_from_init(&frames, &c, init, Exec::Sequential).unwrap();
        assert!(r.cluster_sizes().iter().all(|&s| s > 0));
        assert_eq!(r.assignments[2], 1);
        assert_eq!(r.feature_centroids[1], vec![10.0]);
        assert_eq!(r.feature_centroids[0], vec![0.5]);
    }

    #[test]
    fn events_cover_all_frames_in_time_order() {
        let frames = vec![frame(&[5.0], 0.0), frame(&[0.0], 1.0), frame(&[5.1], 2.0), frame(&[0.1], 3.0)];
        let r = ClusterResult {
            rows: 1,
            dim: 1,
            feature_centroids: vec![vec![0.05], vec![5.05]],
            time_centroids: vec![2.0, 1.0],
            assignments: vec![1, 0, 1, 0],
            iterations: 1,
            final_delta: 0.0,
        };
        let ev = events_from(&r, &frames).unwrap();
        assert_eq!(ev.len(), 2);
        assert_eq!((ev[0].cluster, ev[0].members.clone()), (1, vec![0, 2]));
        assert_eq!((ev[1].cluster, ev[1].members.clone()), (0, vec![1, 3]));
        assert_eq!((ev[1].start_s, ev[1].end_s), (1.0, 3.0));
        assert_eq!(ev.iter().map(Event::len).sum::<usize>(), 4);
    }
}
