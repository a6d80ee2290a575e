//! Minimal connections: optimal pairings of positive and negative points under
//! Euclidean, through-boundary and surface metrics, with 1-Lipschitz potentials.

use crate::geom::*;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SignedConfig {
    pub pos: Vec<V3>,
    pub neg: Vec<V3>,
}

impl SignedConfig {
    pub fn new(pos: Vec<V3>, neg: Vec<V3>) -> Self {
        SignedConfig { pos, neg }
    }

    pub fn k(&self) -> usize {
        self.pos.len()
    }

    fn check(&self) -> Result<()> {
        if self.pos.len() != self.neg.len() {
            return Err(Error::Unbalanced {
                pos: self.pos.len(),
                neg: self.neg.len(),
            });
        }
        Ok(())
    }

    /// All points, positives first.
    pub fn points(&self) -> Vec<V3> {
        self.pos.iter().chain(&self.neg).copied().collect()
    }

    /// Largest pairwise distance.
    pub fn diameter(&self) -> f64 {
        let p = self.points();
        let mut d: f64 = 0.0;
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                d = d.max(dist(p[i], p[j]));
            }
        }
        d
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricTag {
    Euclid,
    DBdry,
    DHatBdry,
}

/// Geometric realisation of one matched pair, oriented from the negative point to the
/// positive one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Leg {
    Segment { n: V3, p: V3 },
    /// n -> qn on ∂Ω, then qp on ∂Ω -> p.
    ViaBoundary { n: V3, qn: V3, qp: V3, p: V3 },
    /// Path on the grid surface from n to p through edge points.
    Surface { path: Vec<V3> },
}

impl Leg {
    pub fn length(&self) -> f64 {
        match self {
            Leg::Segment { n, p } => dist(*n, *p),
            Leg::ViaBoundary { n, qn, qp, p } => dist(*n, *qn) + dist(*qp, *p),
            Leg::Surface { path } => path.windows(2).map(|w| dist(w[0], w[1])).sum(),
        }
    }

    /// Oriented straight pieces (from, to).
    pub fn pieces(&self) -> Vec<(V3, V3)> {
        match self {
            Leg::Segment { n, p } => vec![(*n, *p)],
            Leg::ViaBoundary { n, qn, qp, p } => vec![(*n, *qn), (*qp, *p)],
            Leg::Surface { path } => path.windows(2).map(|w| (w[0], w[1])).collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Connection {
    pub config: SignedConfig,
    /// `pairing[i]` is the negative matched to positive `i`.
    pub pairing: Vec<usize>,
    pub length: f64,
    pub legs: Vec<Leg>,
    pub zeta_pos: Vec<f64>,
    pub zeta_neg: Vec<f64>,
    pub metric: MetricTag,
}

impl Connection {
    /// Σ ζ*(p_i) − ζ*(n_σ(i)).
    pub fn dual_sum(&self) -> f64 {
        (0..self.config.k())
            .map(|i| self.zeta_pos[i] - self.zeta_neg[self.pairing[i]])
            .sum()
    }
}

// ---------------------------------------------------------------------------
// assignment

/// Square min-cost assignment by shortest augmenting paths with potentials.
/// Returns (column of each row, row potentials u, column potentials v) with
/// u_i + v_j <= c_ij and equality on matched pairs.
pub fn assignment(cost: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = cost.len();
    if n == 0 {
        return (vec![], vec![], vec![]);
    }
    // 1-based arrays, column 0 is a sentinel
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col = vec![0usize; n];
    for j in 1..=n {
        col[p[j] - 1] = j - 1;
    }
    (col, u[1..].to_vec(), v[1..].to_vec())
}

/// Generic connection for a pseudometric `d` on the configuration points.
/// Potentials come from the row duals through ζ*(a) = max_i (u_i − d(a, p_i)), then a
/// tightening sweep ζ(a) <- min_b ζ(b) + d(a, b) is run to fixpoint.
fn connect_with(
    config: &SignedConfig,
    d: &dyn Fn(V3, V3) -> f64,
    leg: &dyn Fn(V3, V3) -> Leg,
    metric: MetricTag,
) -> Result<Connection> {
    config.check()?;
    let k = config.k();
    let cost: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| d(config.pos[i], config.neg[j])).collect())
        .collect();
    let (pairing, u, _v) = assignment(&cost);
    let length: f64 = (0..k).map(|i| cost[i][pairing[i]]).sum();
    let pts = config.points();
    let mut zeta: Vec<f64> = pts
        .iter()
        .map(|&a| {
            (0..k)
                .map(|i| u[i] - d(a, config.pos[i]))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    tighten(&mut zeta, &pts, d);
    let legs = (0..k).map(|i| leg(config.neg[pairing[i]], config.pos[i])).collect();
    Ok(Connection {
        config: config.clone(),
        pairing,
        length,
        legs,
        zeta_pos: zeta[..k].to_vec(),
        zeta_neg: zeta[k..].to_vec(),
        metric,
    })
}

/// Lipschitz tightening to fixpoint; values only decrease so at most |pts| sweeps change anything.
pub fn tighten(zeta: &mut [f64], pts: &[V3], d: &dyn Fn(V3, V3) -> f64) -> usize {
    let m = pts.len();
    for sweep in 0..=m {
        let mut changed = false;
        for a in 0..m {
            for b in 0..m {
                let c = zeta[b] + d(pts[a], pts[b]);
                if c < zeta[a] {
                    zeta[a] = c;
                    changed = true;
                }
            }
        }
        if !changed {
            return sweep;
        }
    }
    m
}

pub fn connect_euclidean(config: &SignedConfig) -> Result<Connection> {
    connect_with(config, &dist, &|n, p| Leg::Segment { n, p }, MetricTag::Euclid)
}

/// Distance oracle for Ω: signed distance (positive inside) and nearest boundary point.
pub trait Domain: Sync {
    fn signed_dist(&self, x: V3) -> f64;
    fn boundary_point(&self, x: V3) -> V3;
}

impl Domain for crate::field::LatticeField3 {
    fn signed_dist(&self, x: V3) -> f64 {
        crate::field::LatticeField3::signed_dist(self, x)
    }
    fn boundary_point(&self, x: V3) -> V3 {
        crate::field::LatticeField3::boundary_point(self, x)
    }
}

/// Ball domain on its own, handy for tests and the boundary polyhedron.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: V3,
    pub radius: f64,
}

impl Domain for Ball {
    fn signed_dist(&self, x: V3) -> f64 {
        self.radius - dist(x, self.center)
    }
    fn boundary_point(&self, x: V3) -> V3 {
        let d = sub(x, self.center);
        let n = norm(d);
        if n == 0.0 {
            add(self.center, [self.radius, 0.0, 0.0])
        } else {
            add(self.center, scale(d, self.radius / n))
        }
    }
}

/// d_∂Ω(x, y) = min(|x − y|, d(x, ∂Ω) + d(y, ∂Ω)).
pub fn d_bdry(dom: &dyn Domain, x: V3, y: V3) -> f64 {
    dist(x, y).min(dom.signed_dist(x).max(0.0) + dom.signed_dist(y).max(0.0))
}

pub fn connect_through_boundary(config: &SignedConfig, dom: &dyn Domain) -> Result<Connection> {
    for &x in config.pos.iter().chain(&config.neg) {
        if dom.signed_dist(x) < -1e-12 {
            return Err(Error::PointOutsideDomain(x));
        }
    }
    let d = |x: V3, y: V3| d_bdry(dom, x, y);
    let leg = |n: V3, p: V3| {
        let e = dist(n, p);
        let b = dom.signed_dist(n).max(0.0) + dom.signed_dist(p).max(0.0);
        // ties go to the straight segment
        if e <= b {
            Leg::Segment { n, p }
        } else {
            Leg::ViaBoundary {
                n,
                qn: dom.boundary_point(n),
                qp: dom.boundary_point(p),
                p,
            }
        }
    };
    connect_with(config, &d, &leg, MetricTag::DBdry)
}

// ---------------------------------------------------------------------------
// surface metric on a union of planar convex quads

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Quad {
    /// Corners in cyclic order.
    pub corners: [V3; 4],
    /// Outward unit normal.
    pub normal: V3,
}

impl Quad {
    /// Whether `x` lies on the quad up to `tol`.
    pub fn contains(&self, x: V3, tol: f64) -> bool {
        if dot(sub(x, self.corners[0]), self.normal).abs() > tol {
            return false;
        }
        for e in 0..4 {
            let a = self.corners[e];
            let b = self.corners[(e + 1) % 4];
            // inward side of edge e is towards the quad centre
            let c = scale(add(add(self.corners[0], self.corners[1]), add(self.corners[2], self.corners[3])), 0.25);
            let t = sub(b, a);
            let nin = cross(self.normal, t);
            let s = if dot(sub(c, a), nin) >= 0.0 { 1.0 } else { -1.0 };
            if s * dot(sub(x, a), nin) / norm(nin) < -tol {
                return false;
            }
        }
        true
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.partial_cmp(&self.0).unwrap_or(Ordering::Equal).then_with(|| o.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Steiner-refined graph on a quad surface. Edge and corner nodes are shared between
/// faces; every pair of nodes on a common face is joined by its straight in-face segment.
pub struct SurfaceGraph {
    pub nodes: Vec<V3>,
    /// Faces each node lies on.
    pub node_faces: Vec<Vec<usize>>,
    pub face_nodes: Vec<Vec<usize>>,
    pub faces: Vec<Quad>,
    /// Nodes that are terminals (config points); never relaxed through.
    terminal: Vec<bool>,
    key: HashMap<[i64; 3], usize>,
    quantum: f64,
}

impl SurfaceGraph {
    pub fn new(faces: Vec<Quad>, steiner: usize) -> Self {
        let scale_len = faces
            .iter()
            .map(|q| dist(q.corners[0], q.corners[1]))
            .fold(0.0, f64::max)
            .max(1e-12);
        let mut g = SurfaceGraph {
            nodes: vec![],
            node_faces: vec![],
            face_nodes: vec![vec![]; faces.len()],
            faces,
            terminal: vec![],
            key: HashMap::new(),
            quantum: scale_len * 1e-9,
        };
        for f in 0..g.faces.len() {
            for e in 0..4 {
                let a = g.faces[f].corners[e];
                let b = g.faces[f].corners[(e + 1) % 4];
                for s in 0..=steiner {
                    let t = s as f64 / (steiner + 1) as f64;
                    let id = g.intern(lerp(a, b, t), false);
                    g.attach(id, f);
                }
            }
        }
        g
    }

    fn qkey(&self, x: V3) -> [i64; 3] {
        [
            (x[0] / self.quantum).round() as i64,
            (x[1] / self.quantum).round() as i64,
            (x[2] / self.quantum).round() as i64,
        ]
    }

    fn intern(&mut self, x: V3, terminal: bool) -> usize {
        let k = self.qkey(x);
        if let Some(&i) = self.key.get(&k) {
            self.terminal[i] |= terminal;
            return i;
        }
        let i = self.nodes.len();
        self.nodes.push(x);
        self.node_faces.push(vec![]);
        self.terminal.push(terminal);
        self.key.insert(k, i);
        i
    }

    fn attach(&mut self, node: usize, face: usize) {
        if !self.node_faces[node].contains(&face) {
            self.node_faces[node].push(face);
            self.face_nodes[face].push(node);
        }
    }

    /// Adds a terminal on the surface; attaches it to every face containing it.
    pub fn add_point(&mut self, x: V3) -> Result<usize> {
        let tol = self.quantum * 1e3;
        let hits: Vec<usize> = (0..self.faces.len()).filter(|&f| self.faces[f].contains(x, tol)).collect();
        if hits.is_empty() {
            return Err(Error::PointNotOnSurface(x));
        }
        let id = self.intern(x, true);
        for f in hits {
            self.attach(id, f);
        }
        Ok(id)
    }

    /// Single-source shortest paths; returns (dist, predecessor).
    pub fn dijkstra(&self, src: usize) -> (Vec<f64>, Vec<usize>) {
        let n = self.nodes.len();
        let mut d = vec![f64::INFINITY; n];
        let mut pred = vec![usize::MAX; n];
        let mut heap = BinaryHeap::new();
        d[src] = 0.0;
        heap.push(HeapItem(0.0, src));
        while let Some(HeapItem(du, u)) = heap.pop() {
            if du > d[u] {
                continue;
            }
            if u != src && self.terminal[u] {
                continue;
            }
            for &f in &self.node_faces[u] {
                for &v in &self.face_nodes[f] {
                    if v == u {
                        continue;
                    }
                    let nd = du + dist(self.nodes[u], self.nodes[v]);
                    if nd < d[v] {
                        d[v] = nd;
                        pred[v] = u;
                        heap.push(HeapItem(nd, v));
                    }
                }
            }
        }
        (d, pred)
    }

    pub fn path(&self, pred: &[usize], src: usize, dst: usize) -> Vec<usize> {
        let mut p = vec![dst];
        let mut c = dst;
        while c != src {
            c = pred[c];
            if c == usize::MAX {
                return vec![];
            }
            p.push(c);
        }
        p.reverse();
        p
    }

    /// Number of distinct faces a node path passes through.
    pub fn faces_crossed(&self, path: &[usize]) -> usize {
        let mut count = 0;
        let mut last: Option<usize> = None;
        for w in path.windows(2) {
            let f = self.node_faces[w[0]]
                .iter()
                .copied()
                .find(|f| self.node_faces[w[1]].contains(f))
                .unwrap_or(usize::MAX);
            if last != Some(f) {
                count += 1;
                last = Some(f);
            }
        }
        count
    }
}

/// Connection under d̂_∂Ω(x, y) = min(geodesic on the surface, d(x, ∂Ω) + d(y, ∂Ω)).
pub struct SurfaceConnection {
    pub conn: Connection,
    /// Largest number of faces visited by a surface leg.
    pub max_faces: usize,
    /// Distances on the graph from each positive to every node.
    pub from_pos: Vec<Vec<f64>>,
    pub pos_nodes: Vec<usize>,
    pub neg_nodes: Vec<usize>,
}

pub fn connect_on_polyhedron(config: &SignedConfig, graph: &mut SurfaceGraph, dom: &dyn Domain) -> Result<SurfaceConnection> {
    config.check()?;
    let k = config.k();
    let pos_nodes = config.pos.iter().map(|&x| graph.add_point(x)).collect::<Result<Vec<_>>>()?;
    let neg_nodes = config.neg.iter().map(|&x| graph.add_point(x)).collect::<Result<Vec<_>>>()?;
    let runs: Vec<(Vec<f64>, Vec<usize>)> = pos_nodes.iter().map(|&s| graph.dijkstra(s)).collect();
    let dd = |x: V3| dom.signed_dist(x).max(0.0);
    let pts = config.points();
    let nodes: Vec<usize> = pos_nodes.iter().chain(&neg_nodes).copied().collect();
    // full pseudometric among the 2k points: geodesics from every point
    let all_runs: Vec<Vec<f64>> = nodes.iter().map(|&s| graph.dijkstra(s).0).collect();
    let dhat = |a: usize, b: usize| all_runs[a][nodes[b]].min(dd(pts[a]) + dd(pts[b]));
    let cost: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| dhat(i, k + j)).collect()).collect();
    let (pairing, u, _) = assignment(&cost);
    let length = (0..k).map(|i| cost[i][pairing[i]]).sum();
    let mut zeta: Vec<f64> = (0..2 * k)
        .map(|a| (0..k).map(|i| u[i] - dhat(a, i)).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    // tightening over index pairs
    for _ in 0..=2 * k {
        let mut changed = false;
        for a in 0..2 * k {
            for b in 0..2 * k {
                let c = zeta[b] + dhat(a, b);
                if c < zeta[a] {
                    zeta[a] = c;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut legs = Vec::with_capacity(k);
    let mut max_faces = 0;
    for i in 0..k {
        let j = pairing[i];
        let (n, p) = (config.neg[j], config.pos[i]);
        let geo = runs[i].0[neg_nodes[j]];
        let thru = dd(n) + dd(p);
        if geo <= thru {
            // path from p back to n, reversed so it runs n -> p
            let mut path = graph.path(&runs[i].1, pos_nodes[i], neg_nodes[j]);
            path.reverse();
            max_faces = max_faces.max(graph.faces_crossed(&path));
            legs.push(Leg::Surface {
                path: path.iter().map(|&v| graph.nodes[v]).collect(),
            });
        } else {
            legs.push(Leg::ViaBoundary {
                n,
                qn: dom.boundary_point(n),
                qp: dom.boundary_point(p),
                p,
            });
        }
    }
    Ok(SurfaceConnection {
        conn: Connection {
            config: config.clone(),
            pairing,
            length,
            legs,
            zeta_pos: zeta[..k].to_vec(),
            zeta_neg: zeta[k..].to_vec(),
            metric: MetricTag::DHatBdry,
        },
        max_faces,
        from_pos: runs.into_iter().map(|r| r.0).collect(),
        pos_nodes,
        neg_nodes,
    })
}

/// Augmented collection: every intermediate point of a surface leg is added as both a
/// positive and a negative point, and the induced pairing chains the pieces.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Augmented {
    pub config: SignedConfig,
    /// `pairing[i]` is the negative matched to positive `i` (the chained pairing σ*).
    pub pairing: Vec<usize>,
    pub zeta_pos: Vec<f64>,
    pub zeta_neg: Vec<f64>,
    /// Per pair: d̂_∂Ω between the paired points.
    pub pair_cost: Vec<f64>,
    pub added: usize,
}

pub fn augment_collection(sc: &SurfaceConnection, graph: &SurfaceGraph, dom: &dyn Domain) -> Augmented {
    let c = &sc.conn;
    let k = c.config.k();
    let dd = |x: V3| dom.signed_dist(x).max(0.0);
    // ζ at any surface node: max_i (u_i − d̂(x, p_i)) is already realised by the stored
    // potentials through the same formula with u_i = ζ*(p_i)
    let zeta_at = |node: usize, x: V3| {
        (0..k)
            .map(|i| c.zeta_pos[i] - sc.from_pos[i][node].min(dd(x) + dd(c.config.pos[i])))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let mut pos = c.config.pos.clone();
    let mut neg = c.config.neg.clone();
    let mut zp = c.zeta_pos.clone();
    let mut zn = c.zeta_neg.clone();
    let mut pairing = c.pairing.clone();
    let mut pair_cost: Vec<f64> = (0..k)
        .map(|i| match &c.legs[i] {
            Leg::Surface { path } => path.windows(2).map(|w| dist(w[0], w[1])).sum::<f64>(),
            l => l.length(),
        })
        .collect();
    let mut added = 0;
    for i in 0..k {
        if let Leg::Surface { path } = &c.legs[i] {
            if path.len() <= 2 {
                continue;
            }
            // path runs n -> q1 -> ... -> qm -> p; pieces pair (q_{j+1} as +, q_j as −)
            let qs = &path[1..path.len() - 1];
            let mut prev_neg = pairing[i];
            for (t, &q) in qs.iter().enumerate() {
                let node = graph.key[&graph.qkey(q)];
                let zq = zeta_at(node, q);
                pos.push(q);
                zp.push(zq);
                neg.push(q);
                zn.push(zq);
                let qi_neg = neg.len() - 1;
                pairing.push(prev_neg);
                let from = if t == 0 { path[0] } else { qs[t - 1] };
                pair_cost.push(dist(from, q));
                prev_neg = qi_neg;
                added += 1;
            }
            // the original positive now closes the chain from the last crossing point
            pairing[i] = prev_neg;
            pair_cost[i] = dist(*qs.last().unwrap(), *path.last().unwrap());
        }
    }
    Augmented {
        config: SignedConfig { pos, neg },
        pairing,
        zeta_pos: zp,
        zeta_neg: zn,
        pair_cost,
        added,
    }
}

// ---------------------------------------------------------------------------
// transport norm of discrete signed measures

/// Exact dual norm of a discrete signed measure Σ m_i δ_{x_i} against test functions with
/// sup|ξ| <= 1 and |ξ(x) − ξ(y)| <= |x − y|^γ. Computed as the min-cost flow where mass moves
/// between points at cost min(|x − y|^γ, 2) or is created/absorbed at cost 1.
/// γ = 0 gives the total variation Σ|m_i|.
pub fn measure_norm(points: &[V3], masses: &[f64], gamma: f64) -> f64 {
    if gamma == 0.0 {
        return masses.iter().map(|m| m.abs()).sum();
    }
    let src: Vec<usize> = (0..points.len()).filter(|&i| masses[i] > 0.0).collect();
    let snk: Vec<usize> = (0..points.len()).filter(|&i| masses[i] < 0.0).collect();
    let total_pos: f64 = src.iter().map(|&i| masses[i]).sum();
    let total_neg: f64 = snk.iter().map(|&i| -masses[i]).sum();
    // supplies: positives + ground source (absorbs negatives); demands: negatives + ground sink
    let mut supply: Vec<f64> = src.iter().map(|&i| masses[i]).collect();
    supply.push(total_neg);
    let mut demand: Vec<f64> = snk.iter().map(|&i| -masses[i]).collect();
    demand.push(total_pos);
    let ns = supply.len();
    let nt = demand.len();
    let mut cost = vec![vec![0.0; nt]; ns];
    for (a, row) in cost.iter_mut().enumerate() {
        for (b, c) in row.iter_mut().enumerate() {
            *c = match (a + 1 == ns, b + 1 == nt) {
                (false, false) => dist(points[src[a]], points[snk[b]]).powf(gamma).min(2.0),
                (true, true) => 0.0,
                _ => 1.0,
            };
        }
    }
    transport(&supply, &demand, &cost)
}

/// Balanced transportation problem by successive shortest paths (Bellman-Ford on the
/// residual graph). Real-valued supplies; each augmentation exhausts a supply or demand.
pub fn transport(supply: &[f64], demand: &[f64], cost: &[Vec<f64>]) -> f64 {
    let ns = supply.len();
    let nt = demand.len();
    let mut sup = supply.to_vec();
    let mut dem = demand.to_vec();
    let mut flow = vec![vec![0.0; nt]; ns];
    let tiny = 1e-15 * supply.iter().sum::<f64>().max(1e-300);
    // node ids: sources 0..ns, sinks ns..ns+nt
    loop {
        if sup.iter().all(|&s| s <= tiny) || dem.iter().all(|&d| d <= tiny) {
            break;
        }
        let n = ns + nt;
        let mut d = vec![f64::INFINITY; n];
        let mut pred = vec![usize::MAX; n];
        for a in 0..ns {
            if sup[a] > tiny {
                d[a] = 0.0;
            }
        }
        for _ in 0..n {
            let mut changed = false;
            for a in 0..ns {
                if d[a].is_finite() {
                    for b in 0..nt {
                        let nd = d[a] + cost[a][b];
                        if nd < d[ns + b] - 1e-15 {
                            d[ns + b] = nd;
                            pred[ns + b] = a;
                            changed = true;
                        }
                    }
                }
            }
            for b in 0..nt {
                if d[ns + b].is_finite() {
                    for a in 0..ns {
                        if flow[a][b] > tiny {
                            let nd = d[ns + b] - cost[a][b];
                            if nd < d[a] - 1e-15 {
                                d[a] = nd;
                                pred[a] = ns + b;
                                changed = true;
                            }
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        // cheapest reachable sink with remaining demand
        let t = (0..nt)
            .filter(|&b| dem[b] > tiny && d[ns + b].is_finite())
            .min_by(|&x, &y| d[ns + x].partial_cmp(&d[ns + y]).unwrap());
        let t = match t {
            Some(t) => ns + t,
            None => break,
        };
        // bottleneck
        let mut amt = dem[t - ns];
        let mut v = t;
        while pred[v] != usize::MAX {
            let u = pred[v];
            if u >= ns {
                amt = amt.min(flow[v][u - ns]);
            }
            v = u;
        }
        amt = amt.min(sup[v]);
        let s0 = v;
        let mut v = t;
        while pred[v] != usize::MAX {
            let u = pred[v];
            if v >= ns {
                flow[u][v - ns] += amt;
            } else {
                flow[v][u - ns] -= amt;
            }
            v = u;
        }
        sup[s0] -= amt;
        dem[t - ns] -= amt;
    }
    let mut total = 0.0;
    for a in 0..ns {
        for b in 0..nt {
            total += flow[a][b] * cost[a][b];
        }
    }
    total
}

/// Brute-force minimum over all permutations, for tests and audits.
pub fn brute_force_min(config: &SignedConfig, d: &dyn Fn(V3, V3) -> f64) -> f64 {
    let k = config.k();
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = f64::INFINITY;
    fn rec(i: usize, perm: &mut Vec<usize>, c: &SignedConfig, d: &dyn Fn(V3, V3) -> f64, best: &mut f64) {
        let k = perm.len();
        if i == k {
            let s: f64 = (0..k).map(|a| d(c.pos[a], c.neg[perm[a]])).sum();
            if s < *best {
                *best = s;
            }
            return;
        }
        for j in i..k {
            perm.swap(i, j);
            rec(i + 1, perm, c, d, best);
            perm.swap(i, j);
        }
    }
    rec(0, &mut perm, config, d, &mut best);
    if k == 0 {
        0.0
    } else {
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_cfg(rng: &mut ChaCha8Rng, k: usize) -> SignedConfig {
        let mut pt = || [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
        let pos = (0..k).map(|_| pt()).collect();
        let neg = (0..k).map(|_| pt()).collect();
        SignedConfig::new(pos, neg)
    }

    #[test]
    fn empty_config() {
        let c = connect_euclidean(&SignedConfig::default()).unwrap();
        assert_eq!(c.length, 0.0);
        assert!(c.pairing.is_empty());
    }

    #[test]
    fn unbalanced_rejected() {
        let c = SignedConfig::new(vec![[0.0; 3]], vec![]);
        assert_eq!(connect_euclidean(&c).unwrap_err(), Error::Unbalanced { pos: 1, neg: 0 });
    }

    #[test]
    fn collinear_pairs() {
        let c = SignedConfig::new(vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]], vec![[1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        let con = connect_euclidean(&c).unwrap();
        assert!((con.length - 2.0).abs() < 1e-15);
        assert_eq!(con.pairing, vec![0, 1]);
    }

    #[test]
    fn five_points_match_permutations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = rand_cfg(&mut rng, 5);
        let con = connect_euclidean(&c).unwrap();
        assert!((con.length - brute_force_min(&c, &dist)).abs() < 1e-12);
        let leg_sum: f64 = con.legs.iter().map(|l| l.length()).sum();
        assert!((leg_sum - con.length).abs() < 1e-9);
    }

    #[test]
    fn potentials_are_lipschitz_and_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in 1..=6 {
            let c = rand_cfg(&mut rng, k);
            let con = connect_euclidean(&c).unwrap();
            let pts = c.points();
            let z: Vec<f64> = con.zeta_pos.iter().chain(&con.zeta_neg).copied().collect();
            for a in 0..pts.len() {
                for b in 0..pts.len() {
                    assert!(z[a] - z[b] <= dist(pts[a], pts[b]) + 1e-12);
                }
            }
            assert!((con.dual_sum() - con.length).abs() < 1e-9);
            for i in 0..k {
                let j = con.pairing[i];
                assert!((con.zeta_pos[i] - con.zeta_neg[j] - dist(c.pos[i], c.neg[j])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ball_boundary_branches() {
        let b = Ball { center: [0.0; 3], radius: 1.0 };
        let c = SignedConfig::new(vec![[0.9, 0.0, 0.0]], vec![[-0.9, 0.0, 0.0]]);
        let con = connect_through_boundary(&c, &b).unwrap();
        assert!((con.length - 0.2).abs() < 1e-12);
        match &con.legs[0] {
            Leg::ViaBoundary { n, qn, qp, p } => {
                assert!((dist(*n, *qn) - 0.1).abs() < 1e-12);
                assert!((dist(*qp, *p) - 0.1).abs() < 1e-12);
            }
            l => panic!("{l:?}"),
        }
        let c = SignedConfig::new(vec![[0.1, 0.0, 0.0]], vec![[-0.1, 0.0, 0.0]]);
        let con = connect_through_boundary(&c, &b).unwrap();
        assert!((con.length - 0.2).abs() < 1e-12);
        assert!(matches!(con.legs[0], Leg::Segment { .. }));
        let c = SignedConfig::new(vec![[1.1, 0.0, 0.0]], vec![[0.0; 3]]);
        assert!(matches!(connect_through_boundary(&c, &b), Err(Error::PointOutsideDomain(_))));
    }

    #[test]
    fn boundary_metric_near_sphere() {
        let b = Ball { center: [0.0; 3], radius: 1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let mut pt = || {
                let v = unit([rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5]);
                scale(v, 0.8 + 0.19 * rng.gen::<f64>())
            };
            let c = SignedConfig::new(vec![pt(), pt()], vec![pt(), pt()]);
            let con = connect_through_boundary(&c, &b).unwrap();
            let d = |x, y| d_bdry(&b, x, y);
            assert!((con.length - brute_force_min(&c, &d)).abs() < 1e-12);
            // triangle inequality on the config points
            let p = c.points();
            for x in &p {
                for y in &p {
                    for z in &p {
                        assert!(d(*x, *z) <= d(*x, *y) + d(*y, *z) + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn deletion_never_increases_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for k in 2..=5 {
            let c = rand_cfg(&mut rng, k);
            let con = connect_euclidean(&c).unwrap();
            for i in 0..k {
                let j = con.pairing[i];
                let mut pos = c.pos.clone();
                let mut neg = c.neg.clone();
                pos.remove(i);
                neg.remove(j);
                let l = brute_force_min(&SignedConfig::new(pos, neg), &dist);
                assert!(l <= con.length + 1e-12);
            }
        }
    }

    fn unit_cube_surface() -> Vec<Quad> {
        let mut faces = vec![];
        for ax in 0..3 {
            for &side in &[0.0, 1.0] {
                let (b, c) = ((ax + 1) % 3, (ax + 2) % 3);
                let corner = |s: f64, t: f64| {
                    let mut p = [0.0; 3];
                    p[ax] = side;
                    p[b] = s;
                    p[c] = t;
                    p
                };
                let corners = [corner(0.0, 0.0), corner(1.0, 0.0), corner(1.0, 1.0), corner(0.0, 1.0)];
                let mut n = [0.0; 3];
                n[ax] = if side == 0.0 { -1.0 } else { 1.0 };
                faces.push(Quad { corners, normal: n });
            }
        }
        faces
    }

    /// Ball big enough that the through-boundary branch never wins.
    fn far() -> Ball {
        Ball { center: [0.5; 3], radius: 100.0 }
    }

    #[test]
    fn same_face_is_straight() {
        let mut g = SurfaceGraph::new(unit_cube_surface(), 8);
        let c = SignedConfig::new(vec![[0.0, 0.2, 0.3]], vec![[0.0, 0.7, 0.9]]);
        let sc = connect_on_polyhedron(&c, &mut g, &far()).unwrap();
        assert!((sc.conn.length - dist(c.pos[0], c.neg[0])).abs() < 1e-12);
    }

    #[test]
    fn adjacent_faces_unfolding() {
        // x = 0 face and y = 0 face share the z-axis edge; unfold about it
        let mut g = SurfaceGraph::new(unit_cube_surface(), 8);
        let p = [0.0, 0.3, 0.2];
        let n = [0.6, 0.0, 0.9];
        let c = SignedConfig::new(vec![p], vec![n]);
        let sc = connect_on_polyhedron(&c, &mut g, &far()).unwrap();
        let exact = (0.3f64 + 0.6).hypot(0.9 - 0.2);
        assert!(sc.conn.length >= exact - 1e-12);
        assert!(sc.conn.length <= 1.05 * exact);
        let aug = augment_collection(&sc, &g, &far());
        assert!(aug.added >= 1);
        // every augmented pair lies on one face
        for i in 0..aug.config.k() {
            let (a, b) = (aug.config.pos[i], aug.config.neg[aug.pairing[i]]);
            assert!(g.faces.iter().any(|f| f.contains(a, 1e-9) && f.contains(b, 1e-9)));
        }
        let total: f64 = aug.pair_cost.iter().sum();
        assert!((total - sc.conn.length).abs() < 1e-12);
    }

    #[test]
    fn deep_shortcut() {
        // both points close to ∂Ω of a ball that hugs the cube corners
        let dom = Ball { center: [0.5, 0.5, 0.5], radius: 0.5 };
        let mut g = SurfaceGraph::new(unit_cube_surface(), 8);
        let p = [0.5, 0.5, 0.0];
        let n = [0.5, 0.5, 1.0];
        let c = SignedConfig::new(vec![p], vec![n]);
        let sc = connect_on_polyhedron(&c, &mut g, &dom).unwrap();
        assert!(sc.conn.length.abs() < 1e-12);
        assert!(matches!(sc.conn.legs[0], Leg::ViaBoundary { .. }));
        assert!(matches!(
            connect_on_polyhedron(&SignedConfig::new(vec![[0.5; 3]], vec![n]), &mut g, &dom),
            Err(Error::PointNotOnSurface(_))
        ));
    }

    #[test]
    fn transport_norms() {
        // single Dirac: every norm is 1
        for g in [0.0, 0.5, 1.0] {
            assert!((measure_norm(&[[0.0; 3]], &[1.0], g) - 1.0).abs() < 1e-12);
        }
        // dipole at distance r: min(r^γ, 2)
        let pts = [[0.0; 3], [0.25, 0.0, 0.0]];
        assert!((measure_norm(&pts, &[1.0, -1.0], 1.0) - 0.25).abs() < 1e-12);
        assert!((measure_norm(&pts, &[1.0, -1.0], 0.5) - 0.5).abs() < 1e-12);
        let far = [[0.0; 3], [5.0, 0.0, 0.0]];
        assert!((measure_norm(&far, &[1.0, -1.0], 1.0) - 2.0).abs() < 1e-12);
        // unbalanced mass goes to ground at cost 1
        assert!((measure_norm(&pts, &[2.0, -1.0], 1.0) - 1.25).abs() < 1e-12);
    }

    #[test]
    fn interpolation_inequality_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..40 {
            let n = rng.gen_range(2..9);
            let pts: Vec<V3> = (0..n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>(), 0.0]).collect();
            let m: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let n0 = measure_norm(&pts, &m, 0.0);
            let n1 = measure_norm(&pts, &m, 1.0);
            let nh = measure_norm(&pts, &m, 0.5);
            assert!(nh * nh <= n0 * n1 * (1.0 + 1e-9));
            assert!(n1 <= n0 + 1e-12);
        }
    }
}
