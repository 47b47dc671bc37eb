//! Hard-negative mining over candidate masks.
//!
//! Candidates are connected by the Delaunay triangulation of their mask
//! centroids. The hard negatives of a node are the nodes within two hops,
//! and [`build_negative_batch`] turns that set into a fixed-size negative
//! batch, topping it up with random candidates and then with duplicates.

use std::collections::{BTreeSet, HashSet, VecDeque};

use rand::seq::index;
use rand::Rng;
use robust::{incircle, orient2d, Coord};

use crate::error::{Error, Result};
use crate::pack::MaskBitmap;

/// Shift applied to coincident centroids, in pixels, multiplied by the point
/// index.
pub const COINCIDENT_EPSILON: f64 = 1e-6;

/// Mean foreground pixel coordinate `(x, y)`, pixel centers at integers.
pub fn mask_centroid(mask: &MaskBitmap) -> Result<(f64, f64)> {
    let (mut sx, mut sy, mut n) = (0u64, 0u64, 0u64);
    for (row, x, len) in mask.foreground_runs() {
        let (len, x, row) = (len as u64, x as u64, row as u64);
        // Sum of x..x+len-1.
        sx += len * x + len * (len - 1) / 2;
        sy += len * row;
        n += len;
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok((sx as f64 / n as f64, sy as f64 / n as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencyGraph {
    n: usize,
    adjacency: Vec<bool>,
    centroids: Vec<(f64, f64)>,
}

impl AdjacencyGraph {
    /// Graph with no edges.
    pub fn empty(centroids: Vec<(f64, f64)>) -> Self {
        let n = centroids.len();
        Self {
            n,
            adjacency: vec![false; n * n],
            centroids,
        }
    }

    pub fn complete(centroids: Vec<(f64, f64)>) -> Self {
        let mut g = Self::empty(centroids);
        for i in 0..g.n {
            for j in 0..g.n {
                if i != j {
                    g.adjacency[i * g.n + j] = true;
                }
            }
        }
        g
    }

    pub fn from_edges(centroids: Vec<(f64, f64)>, edges: &[(usize, usize)]) -> Self {
        let mut g = Self::empty(centroids);
        for &(a, b) in edges {
            g.connect(a, b);
        }
        g
    }

    fn connect(&mut self, a: usize, b: usize) {
        if a != b {
            self.adjacency[a * self.n + b] = true;
            self.adjacency[b * self.n + a] = true;
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn centroids(&self) -> &[(f64, f64)] {
        &self.centroids
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a * self.n + b]
    }

    pub fn neighbors(&self, a: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&b| self.adjacency[a * self.n + b])
    }

    /// Undirected edges `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for a in 0..self.n {
            for b in a + 1..self.n {
                if self.has_edge(a, b) {
                    out.push((a, b));
                }
            }
        }
        out
    }
}

fn coord(p: (f64, f64)) -> Coord<f64> {
    Coord { x: p.0, y: p.1 }
}

fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    orient2d(coord(a), coord(b), coord(c))
}

/// Delaunay adjacency of the given centroids.
///
/// Fewer than three points, or points that are all collinear, give the
/// complete graph. Coincident points are shifted by `index * 1e-6` along x
/// before triangulating. Triangulation is incremental Bowyer-Watson with a
/// symbolic vertex at infinity and exact predicates; points are inserted in
/// lexicographic order and cocircular ties keep the existing triangles.
pub fn delaunay_adjacency(centroids: &[(f64, f64)]) -> AdjacencyGraph {
    let n = centroids.len();
    if n < 3 {
        return AdjacencyGraph::complete(centroids.to_vec());
    }
    let mut points = centroids.to_vec();
    for i in 1..n {
        while points[..i].contains(&points[i]) {
            points[i].0 += i as f64 * COINCIDENT_EPSILON;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .partial_cmp(&points[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    match triangulate(&points, &order) {
        Some(edges) => AdjacencyGraph::from_edges(centroids.to_vec(), &edges),
        None => AdjacencyGraph::complete(centroids.to_vec()),
    }
}

const GHOST: usize = usize::MAX;

/// Returns the triangulation edges, or `None` when all points are collinear.
fn triangulate(points: &[(f64, f64)], order: &[usize]) -> Option<Vec<(usize, usize)>> {
    let a = order[0];
    let b = order[1];
    let (c_pos, c) = order
        .iter()
        .enumerate()
        .skip(2)
        .find(|&(_, &c)| orient(points[a], points[b], points[c]) != 0.0)
        .map(|(i, &c)| (i, c))?;
    let (b, c) = if orient(points[a], points[b], points[c]) > 0.0 {
        (b, c)
    } else {
        (c, b)
    };
    // Triangles are stored counter-clockwise; ghost triangles carry GHOST
    // last and their real edge u->v has the hull interior on its right.
    let mut tris: Vec<[usize; 3]> = vec![[a, b, c], [b, a, GHOST], [c, b, GHOST], [a, c, GHOST]];

    for (pos, &p) in order.iter().enumerate().skip(2) {
        if pos == c_pos {
            continue;
        }
        let pp = points[p];
        let (conflict, keep): (Vec<[usize; 3]>, Vec<[usize; 3]>) =
            tris.into_iter().partition(|t| in_conflict(points, t, pp));
        let directed: HashSet<(usize, usize)> = conflict
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .collect();
        tris = keep;
        for t in &conflict {
            for (u, v) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                if directed.contains(&(v, u)) {
                    continue;
                }
                tris.push(if u == GHOST {
                    [v, p, GHOST]
                } else if v == GHOST {
                    [p, u, GHOST]
                } else {
                    [u, v, p]
                });
            }
        }
    }

    let mut edges = BTreeSet::new();
    for t in &tris {
        for (u, v) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            if u != GHOST && v != GHOST {
                edges.insert((u.min(v), u.max(v)));
            }
        }
    }
    Some(edges.into_iter().collect())
}

fn in_conflict(points: &[(f64, f64)], t: &[usize; 3], p: (f64, f64)) -> bool {
    if t[2] == GHOST {
        let (u, v) = (points[t[0]], points[t[1]]);
        let o = orient(u, v, p);
        if o != 0.0 {
            return o > 0.0;
        }
        // On the hull line: conflicts only strictly inside the segment.
        let along_u = (p.0 - u.0) * (v.0 - u.0) + (p.1 - u.1) * (v.1 - u.1);
        let along_v = (p.0 - v.0) * (u.0 - v.0) + (p.1 - v.1) * (u.1 - v.1);
        return along_u > 0.0 && along_v > 0.0;
    }
    incircle(
        coord(points[t[0]]),
        coord(points[t[1]]),
        coord(points[t[2]]),
        coord(p),
    ) > 0.0
}

/// Nodes at graph distance 1 or 2 from `node`, excluding `node`.
pub fn hard_negative_set(graph: &AdjacencyGraph, node: usize) -> Result<BTreeSet<usize>> {
    if node >= graph.len() {
        return Err(Error::Parameter(format!(
            "node {} out of range for {} nodes",
            node,
            graph.len()
        )));
    }
    let mut out = BTreeSet::new();
    for first in graph.neighbors(node) {
        out.insert(first);
        out.extend(graph.neighbors(first));
    }
    out.remove(&node);
    Ok(out)
}

/// Reference two-hop BFS used to cross-check [`hard_negative_set`].
pub fn within_hops(graph: &AdjacencyGraph, node: usize, hops: usize) -> BTreeSet<usize> {
    let mut dist = vec![usize::MAX; graph.len()];
    dist[node] = 0;
    let mut queue = VecDeque::from([node]);
    while let Some(u) = queue.pop_front() {
        if dist[u] == hops {
            continue;
        }
        for v in graph.neighbors(u) {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    (0..graph.len())
        .filter(|&v| v != node && dist[v] <= hops)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Adjacent,
    RandomFill,
    Duplicate,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NegativeBatch {
    pub positive_index: usize,
    pub negative_indices: Vec<usize>,
    pub provenance: Vec<Provenance>,
}

/// Assembles `batch - 1` negatives for the ground-truth candidate `gt`.
///
/// Hard negatives (with `gt` removed) are subsampled uniformly when there are
/// too many; otherwise they are all kept in ascending order and topped up
/// with uniformly drawn non-hard candidates. If the image still has too few
/// candidates, the selected negatives are repeated in selection order.
pub fn build_negative_batch<R: Rng + ?Sized>(
    candidates: usize,
    gt: usize,
    hard: &BTreeSet<usize>,
    batch: usize,
    rng: &mut R,
) -> Result<NegativeBatch> {
    if batch < 2 {
        return Err(Error::Parameter(format!("batch size {batch} must be >= 2")));
    }
    if gt >= candidates {
        return Err(Error::Parameter(format!(
            "gt {gt} out of range for {candidates} candidates"
        )));
    }
    if candidates == 1 {
        return Err(Error::NoNegatives("only the positive candidate exists".into()));
    }
    if let Some(&bad) = hard.iter().find(|&&h| h >= candidates) {
        return Err(Error::Parameter(format!("hard negative {bad} out of range")));
    }
    let want = batch - 1;
    let hard: Vec<usize> = hard.iter().copied().filter(|&h| h != gt).collect();
    let mut negatives: Vec<usize>;
    let mut provenance: Vec<Provenance>;
    if hard.len() > want {
        negatives = index::sample(rng, hard.len(), want)
            .into_iter()
            .map(|i| hard[i])
            .collect();
        provenance = vec![Provenance::Adjacent; want];
    } else {
        negatives = hard.clone();
        provenance = vec![Provenance::Adjacent; hard.len()];
        let rest: Vec<usize> = (0..candidates)
            .filter(|&c| c != gt && !hard.contains(&c))
            .collect();
        let fill = (want - negatives.len()).min(rest.len());
        for i in index::sample(rng, rest.len(), fill) {
            negatives.push(rest[i]);
            provenance.push(Provenance::RandomFill);
        }
        let selected = negatives.len();
        let mut k = 0;
        while negatives.len() < want {
            negatives.push(negatives[k % selected]);
            provenance.push(Provenance::Duplicate);
            k += 1;
        }
    }
    Ok(NegativeBatch {
        positive_index: gt,
        negative_indices: negatives,
        provenance,
    })
}

/// Uniform negatives, ignoring adjacency. Used as the mining ablation.
pub fn build_random_batch<R: Rng + ?Sized>(
    candidates: usize,
    gt: usize,
    batch: usize,
    rng: &mut R,
) -> Result<NegativeBatch> {
    build_negative_batch(candidates, gt, &BTreeSet::new(), batch, rng)
}
