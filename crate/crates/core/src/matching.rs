//! Selecting initial architectures for a dataset: meta-feature deltas,
//! G-means clustering, closest-model lookup and graph-similarity
//! filtering of oversized candidate sets.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::ann::{AbstractNeuralNetwork, LayerKind};
use crate::characteristics::DataCharacteristics;
use crate::database::ModelDatabase;
use crate::shape;

pub const DEFAULT_ALPHA: f64 = 1e-4;
pub const DEFAULT_FILTER_THRESHOLD: usize = 40;
const KMEANS_MAX_ITER: usize = 100;
const KMEANS_TOL: f64 = 1e-6;
/// Clusters smaller than this are never split.
const MIN_TEST_SIZE: usize = 8;
const EQUIV_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum MatchError {
    #[error("database has no model with known characteristics")]
    EmptyDatabase,
    #[error("no model takes {0}-channel input")]
    NoChannelMatch(u32),
    #[error("no candidates")]
    EmptyCandidates,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaVector {
    pub delta_i: f64,
    pub delta_o: f64,
    pub delta_s: f64,
}

pub fn deltas(model: &DataCharacteristics, dc: &DataCharacteristics) -> DeltaVector {
    let d = |a: u32, b: u32| (a as f64 - b as f64).abs();
    let (dw, dh) = (d(dc.width, model.width), d(dc.height, model.height));
    DeltaVector {
        delta_i: d(dc.input_channel, model.input_channel),
        delta_o: d(dc.output_channel, model.output_channel),
        delta_s: (dw * dw + dh * dh).sqrt(),
    }
}

/// Splits the records with known characteristics into those matching the
/// dataset's input channel and the rest.
pub fn partition_by_channel(db: &ModelDatabase, dc: &DataCharacteristics) -> Result<(Vec<usize>, Vec<usize>), MatchError> {
    let mut matching = Vec::new();
    let mut rest = Vec::new();
    for (i, r) in db.records.iter().enumerate() {
        let Some(mc) = &r.characteristics else { continue };
        if mc.input_channel == dc.input_channel {
            matching.push(i);
        } else {
            rest.push(i);
        }
    }
    if matching.is_empty() {
        return Err(MatchError::NoChannelMatch(dc.input_channel));
    }
    Ok((matching, rest))
}

/// Position of the lexicographic minimum over `(Δo, Δs)`; the earliest
/// wins ties.
pub fn closest_model(candidates: &[DeltaVector]) -> Result<usize, MatchError> {
    let mut best: Option<usize> = None;
    for (i, d) in candidates.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => {
                let c = &candidates[b];
                d.delta_o < c.delta_o || (d.delta_o == c.delta_o && d.delta_s < c.delta_s)
            }
        };
        if better {
            best = Some(i);
        }
    }
    best.ok_or(MatchError::EmptyCandidates)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterSet {
    /// Point indices per cluster, each sorted; clusters ordered by their
    /// smallest member.
    pub clusters: Vec<Vec<usize>>,
    pub centers: Vec<[f64; 2]>,
}

impl ClusterSet {
    pub fn cluster_of(&self, point: usize) -> Option<usize> {
        self.clusters.iter().position(|c| c.binary_search(&point).is_ok())
    }
}

fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn mean(points: &[[f64; 2]], members: &[usize]) -> [f64; 2] {
    let n = members.len() as f64;
    let mut m = [0.0; 2];
    for &i in members {
        m[0] += points[i][0];
        m[1] += points[i][1];
    }
    [m[0] / n, m[1] / n]
}

fn nearest(p: &[f64; 2], centers: &[[f64; 2]]) -> usize {
    let mut best = 0;
    let mut bd = f64::INFINITY;
    for (k, c) in centers.iter().enumerate() {
        let d = dist2(p, c);
        if d < bd {
            bd = d;
            best = k;
        }
    }
    best
}

/// Lloyd iterations over `members` from the given centers. Returns the
/// final centers and each member's assignment.
fn lloyd(points: &[[f64; 2]], members: &[usize], mut centers: Vec<[f64; 2]>) -> (Vec<[f64; 2]>, Vec<usize>) {
    let mut assign = vec![0; members.len()];
    for _ in 0..KMEANS_MAX_ITER {
        for (a, &i) in assign.iter_mut().zip(members) {
            *a = nearest(&points[i], &centers);
        }
        let mut shift: f64 = 0.0;
        for (k, c) in centers.iter_mut().enumerate() {
            let group: Vec<usize> = members.iter().zip(&assign).filter(|(_, a)| **a == k).map(|(i, _)| *i).collect();
            if group.is_empty() {
                continue;
            }
            let m = mean(points, &group);
            let scale = c[0].hypot(c[1]).max(1.0);
            shift = shift.max(dist2(c, &m).sqrt() / scale);
            *c = m;
        }
        if shift <= KMEANS_TOL {
            break;
        }
    }
    for (a, &i) in assign.iter_mut().zip(members) {
        *a = nearest(&points[i], &centers);
    }
    (centers, assign)
}

/// k-means++ seeding of two centers among `members`.
fn seed_two(points: &[[f64; 2]], members: &[usize], rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let first = points[members[rng.random_range(0..members.len())]];
    let weights: Vec<f64> = members.iter().map(|&i| dist2(&points[i], &first)).collect();
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return vec![first, first];
    }
    let mut r = rng.random::<f64>() * total;
    let mut second = first;
    for (w, &i) in weights.iter().zip(members) {
        if r < *w {
            second = points[i];
            break;
        }
        r -= w;
        second = points[i];
    }
    vec![first, second]
}

fn ln_phi(z: f64) -> f64 {
    (0.5 * erfc(-z / std::f64::consts::SQRT_2)).ln()
}

/// Anderson–Darling statistic for normality with estimated mean and
/// variance, including the small-sample correction `(1 + 4/n − 25/n²)`.
/// `None` when the sample has no spread.
pub fn anderson_darling_normal(sample: &[f64]) -> Option<f64> {
    let n = sample.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mu = sample.iter().sum::<f64>() / nf;
    let var = sample.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (nf - 1.0);
    if var.is_nan() || var <= 0.0 {
        return None;
    }
    let sd = var.sqrt();
    let mut z: Vec<f64> = sample.iter().map(|x| (x - mu) / sd).collect();
    z.sort_by(f64::total_cmp);
    let mut s = 0.0;
    for i in 0..n {
        let lo = ln_phi(z[i]);
        let hi = ln_phi(-z[n - 1 - i]);
        s += (2.0 * i as f64 + 1.0) * (lo + hi);
    }
    let a2 = -nf - s / nf;
    Some(a2 * (1.0 + 4.0 / nf - 25.0 / (nf * nf)))
}

/// D'Agostino–Stephens p-value for the corrected statistic.
pub fn anderson_darling_p_value(a: f64) -> f64 {
    let p = if a >= 0.6 {
        (1.2937 - 5.709 * a + 0.0186 * a * a).exp()
    } else if a >= 0.34 {
        (0.9177 - 4.279 * a - 1.38 * a * a).exp()
    } else if a >= 0.2 {
        1.0 - (-8.318 + 42.796 * a - 59.938 * a * a).exp()
    } else {
        1.0 - (-13.436 + 101.14 * a - 223.73 * a * a).exp()
    };
    p.clamp(0.0, 1.0)
}

/// G-means: grows k from one by splitting every cluster whose projection
/// onto its 2-means axis fails an Anderson–Darling normality test at
/// level `alpha`, then polishes with k-means over all points.
pub fn gmeans_cluster(points: &[[f64; 2]], alpha: f64, seed: u64) -> ClusterSet {
    if points.is_empty() {
        return ClusterSet { clusters: Vec::new(), centers: Vec::new() };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all: Vec<usize> = (0..points.len()).collect();
    let mut centers = vec![mean(points, &all)];
    loop {
        let (_, assign) = lloyd(points, &all, centers.clone());
        let mut next = Vec::with_capacity(centers.len() * 2);
        let mut split = false;
        for (k, c) in centers.iter().enumerate() {
            let members: Vec<usize> = all.iter().copied().filter(|&i| assign[i] == k).collect();
            if members.len() < MIN_TEST_SIZE {
                next.push(*c);
                continue;
            }
            let (children, _) = lloyd(points, &members, seed_two(points, &members, &mut rng));
            let v = [children[0][0] - children[1][0], children[0][1] - children[1][1]];
            let vv = v[0] * v[0] + v[1] * v[1];
            let projected: Vec<f64> =
                members.iter().map(|&i| (points[i][0] * v[0] + points[i][1] * v[1]) / vv.max(f64::MIN_POSITIVE)).collect();
            let gaussian = vv == 0.0
                || anderson_darling_normal(&projected).is_none_or(|a| anderson_darling_p_value(a) >= alpha);
            if gaussian {
                next.push(*c);
            } else {
                next.extend(children);
                split = true;
            }
        }
        centers = next;
        if !split || centers.len() >= points.len() {
            break;
        }
    }
    let (centers, assign) = lloyd(points, &all, centers);
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &k) in assign.iter().enumerate() {
        groups.entry(k).or_default().push(i);
    }
    let mut pairs: Vec<(Vec<usize>, [f64; 2])> = groups.into_iter().map(|(k, m)| (m, centers[k])).collect();
    pairs.sort_by_key(|(m, _)| m[0]);
    ClusterSet { centers: pairs.iter().map(|p| p.1).collect(), clusters: pairs.into_iter().map(|p| p.0).collect() }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    /// Record index in the database.
    pub index: usize,
    pub provenance: String,
    pub deltas: DeltaVector,
}

/// The initial architectures chosen for a dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateSet {
    pub members: Vec<Candidate>,
    /// Record index of the closest model.
    pub closest: usize,
    /// All clusters found, as record indices.
    pub clusters: Vec<Vec<usize>>,
    /// Set when no model matched the input channel and the nearest
    /// channel count was used instead.
    pub channel_fallback: bool,
    pub warnings: Vec<String>,
}

impl CandidateSet {
    pub fn indices(&self) -> Vec<usize> {
        self.members.iter().map(|c| c.index).collect()
    }
}

/// Picks every model in the G-means cluster that contains the model
/// closest to the dataset.
pub fn select_initial(db: &ModelDatabase, dc: &DataCharacteristics, alpha: f64, seed: u64) -> Result<CandidateSet, MatchError> {
    let known: Vec<(usize, DeltaVector)> = db
        .records
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.characteristics.as_ref().map(|mc| (i, deltas(mc, dc))))
        .collect();
    if known.is_empty() {
        return Err(MatchError::EmptyDatabase);
    }
    let mut warnings = Vec::new();
    let (pool, fallback): (Vec<(usize, DeltaVector)>, bool) = match partition_by_channel(db, dc) {
        Ok((matching, _)) => (known.iter().copied().filter(|(i, _)| matching.contains(i)).collect(), false),
        Err(e) => {
            let min_di = known.iter().map(|(_, d)| d.delta_i).fold(f64::INFINITY, f64::min);
            warnings.push(format!("{e}; using models with the nearest channel count (Δi = {min_di})"));
            (known.iter().copied().filter(|(_, d)| d.delta_i == min_di).collect(), true)
        }
    };
    let ds: Vec<DeltaVector> = pool.iter().map(|p| p.1).collect();
    let best = closest_model(&ds)?;
    let points: Vec<[f64; 2]> = ds.iter().map(|d| [d.delta_o, d.delta_s]).collect();
    let cs = gmeans_cluster(&points, alpha, seed);
    let cluster = cs.cluster_of(best).expect("closest model is clustered");
    let members = cs.clusters[cluster]
        .iter()
        .map(|&p| Candidate { index: pool[p].0, provenance: db.records[pool[p].0].ann.provenance.clone(), deltas: pool[p].1 })
        .collect();
    Ok(CandidateSet {
        members,
        closest: pool[best].0,
        clusters: cs.clusters.iter().map(|c| c.iter().map(|&p| pool[p].0).collect()).collect(),
        channel_fallback: fallback,
        warnings,
    })
}

/// Trainable layers of a network and the channel-weighted connections
/// between them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArchGraph {
    /// Names of the trainable layers in topological order.
    pub vertices: Vec<String>,
    /// `(p, q)` vertex positions with `p < q`, weighted by the output
    /// channels of the upstream layer.
    pub edges: BTreeMap<(usize, usize), f64>,
}

impl ArchGraph {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Incident edge weights of vertex `v`, indexed by the other vertex.
    pub fn weight_row(&self, v: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.vertices.len()];
        for (&(p, q), &w) in &self.edges {
            if p == v {
                row[q] = w;
            } else if q == v {
                row[p] = w;
            }
        }
        row
    }
}

/// Builds the trainable-layer graph. Layers without a known output
/// channel count contribute weight 1.
pub fn arch_graph(ann: &AbstractNeuralNetwork) -> ArchGraph {
    let order = ann.topological_order().unwrap_or_else(|_| (0..ann.nodes.len()).collect());
    let trainable: Vec<usize> = order.iter().copied().filter(|&i| ann.nodes[i].kind().is_trainable()).collect();
    let pos: BTreeMap<usize, usize> = trainable.iter().enumerate().map(|(p, &v)| (v, p)).collect();
    let mut edges = BTreeMap::new();
    for (p, &u) in trainable.iter().enumerate() {
        let w = ann.nodes[u].out_channels().filter(|&c| c > 0).unwrap_or(1) as f64;
        let mut stack = ann.successors(u);
        let mut seen = vec![false; ann.nodes.len()];
        while let Some(s) = stack.pop() {
            if std::mem::replace(&mut seen[s], true) {
                continue;
            }
            match pos.get(&s) {
                Some(&q) => {
                    edges.insert((p.min(q), p.max(q)), w);
                }
                None => stack.extend(ann.successors(s)),
            }
        }
    }
    ArchGraph { vertices: trainable.iter().map(|&i| ann.nodes[i].func.clone()).collect(), edges }
}

/// Cosine similarity of vertex neighbourhoods. Neighbours are aligned by
/// vertex position; norms run over all incident edges.
pub fn similarity_matrix(a: &ArchGraph, b: &ArchGraph) -> Vec<Vec<f64>> {
    let rows_a: Vec<Vec<f64>> = (0..a.len()).map(|i| a.weight_row(i)).collect();
    let rows_b: Vec<Vec<f64>> = (0..b.len()).map(|j| b.weight_row(j)).collect();
    let norm = |r: &Vec<f64>| r.iter().map(|w| w * w).sum::<f64>().sqrt();
    rows_a
        .iter()
        .map(|ra| {
            rows_b
                .iter()
                .map(|rb| {
                    let (na, nb) = (norm(ra), norm(rb));
                    if na == 0.0 || nb == 0.0 {
                        return 0.0;
                    }
                    let dot: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
                    dot / (na * nb)
                })
                .collect()
        })
        .collect()
}

/// Same vertex count and every order-aligned diagonal similarity is one.
pub fn architecture_equivalent(a: &ArchGraph, b: &ArchGraph) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let m = similarity_matrix(a, b);
    (0..a.len()).all(|i| (m[i][i] - 1.0).abs() < EQUIV_EPS)
}

/// Reduces a candidate list larger than `threshold` to its largest
/// architecture class; ties go to the class with the smallest mean
/// parameter count, then to the earliest class. Returns positions in
/// `models`.
pub fn filter_most_used(models: &[&AbstractNeuralNetwork], threshold: usize) -> Vec<usize> {
    if models.len() <= threshold {
        return (0..models.len()).collect();
    }
    let graphs: Vec<ArchGraph> = models.iter().map(|m| arch_graph(m)).collect();
    let mut classes: Vec<Vec<usize>> = Vec::new();
    for (i, g) in graphs.iter().enumerate() {
        match classes.iter_mut().find(|c| architecture_equivalent(&graphs[c[0]], g)) {
            Some(c) => c.push(i),
            None => classes.push(vec![i]),
        }
    }
    let params: Vec<f64> = models.iter().map(|m| shape::trace(m).map_or(f64::INFINITY, |t| t.params as f64)).collect();
    let mean_params = |c: &Vec<usize>| c.iter().map(|&i| params[i]).sum::<f64>() / c.len() as f64;
    let mut best = 0;
    for k in 1..classes.len() {
        let (c, b) = (&classes[k], &classes[best]);
        if c.len() > b.len() || (c.len() == b.len() && mean_params(c) < mean_params(b)) {
            best = k;
        }
    }
    classes.swap_remove(best)
}

/// Number of trainable nodes, the vertex count of [`arch_graph`].
pub fn trainable_count(ann: &AbstractNeuralNetwork) -> usize {
    ann.count_kind(LayerKind::Convolution) + ann.count_kind(LayerKind::Linear)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::AbstractLayer;
    use crate::literal::Literal;

    fn d(o: f64, s: f64) -> DeltaVector {
        DeltaVector { delta_i: 0.0, delta_o: o, delta_s: s }
    }

    #[test]
    fn closest_prefers_output_delta() {
        assert_eq!(closest_model(&[d(0.0, 50.0), d(2.0, 0.0)]), Ok(0));
        assert_eq!(closest_model(&[d(1.0, 10.0), d(1.0, 3.0)]), Ok(1));
        assert_eq!(closest_model(&[]), Err(MatchError::EmptyCandidates));
    }

    #[test]
    fn identical_points_form_one_cluster() {
        let cs = gmeans_cluster(&[[1.0, 2.0]; 50], DEFAULT_ALPHA, 1);
        assert_eq!(cs.clusters, vec![(0..50).collect::<Vec<_>>()]);
    }

    #[test]
    fn figure_arch_graph() {
        let src = crate::miner::ProgramSource::new("f.py", include_str!("../fixtures/corpus/figure_model.py"));
        let ann = crate::miner::extract_models(&src).models.remove(0);
        let g = arch_graph(&ann);
        assert_eq!(g.vertices, ["Conv2D", "Conv2D", "linear"]);
        assert_eq!(g.edges, BTreeMap::from([((0, 1), 64.0), ((1, 2), 32.0)]));
    }

    #[test]
    fn hand_similarity_is_point_eight() {
        let a = ArchGraph { vertices: vec!["Conv2D".into(), "linear".into()], edges: BTreeMap::from([((0, 1), 4.0)]) };
        let b = ArchGraph { vertices: vec!["Conv2D".into(), "Conv2D".into(), "linear".into()], edges: BTreeMap::from([((0, 1), 4.0), ((0, 2), 3.0)]) };
        let m = similarity_matrix(&a, &b);
        assert!((m[0][0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn skip_edges_pass_through_add() {
        let c = |f: i64| AbstractLayer::new("Conv2D").arg(2, Literal::Int(f));
        let ann = AbstractNeuralNetwork::new(
            vec![c(8), c(8), AbstractLayer::new("Add"), AbstractLayer::new("linear").arg(2, Literal::Int(2))],
            [(0, 1), (0, 2), (1, 2), (2, 3)],
        );
        let g = arch_graph(&ann);
        assert_eq!(g.edges, BTreeMap::from([((0, 1), 8.0), ((0, 2), 8.0), ((1, 2), 8.0)]));
    }
}
