//! Planar slices of the lattice field: low-modulus components, their degrees and the
//! face-level vorticity estimate.

use crate::field::LatticeField3;
use crate::geom::*;
use crate::grid::{FaceKey, GridSpec};
use crate::{Error, Result};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::f64::consts::PI;

/// Complex samples on a rectangle `x0 + s·eb + t·ec`, s in [0, n0·step], t in [0, n1·step].
#[derive(Clone, Debug)]
pub struct FaceField {
    /// Samples per side (nodes).
    pub n: [usize; 2],
    pub step: f64,
    pub x0: V3,
    pub eb: V3,
    pub ec: V3,
    pub u: Vec<C64>,
    /// In-plane A components (A·eb, A·ec).
    pub a: Vec<[f64; 2]>,
    pub face: Option<FaceKey>,
    /// +1 when degrees are reported about eb × ec, −1 for the opposite orientation.
    pub sign: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub centroid: V3,
    pub degree: i32,
    pub diameter: f64,
    pub nodes: usize,
    /// ∫ |∇_A u|² over the component nodes.
    pub grad_energy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FaceVortexSet {
    pub components: Vec<Component>,
    pub r_omega: f64,
    pub i_omega: usize,
    /// Components found with zero degree (dropped).
    pub zero_degree: usize,
}

impl FaceVortexSet {
    pub fn total_degree(&self) -> i32 {
        self.components.iter().map(|c| c.degree).sum()
    }

    pub fn abs_degree(&self) -> i32 {
        self.components.iter().map(|c| c.degree.abs()).sum()
    }

    /// Same set seen from the opposite orientation.
    pub fn flipped(&self) -> FaceVortexSet {
        let mut f = self.clone();
        for c in &mut f.components {
            c.degree = -c.degree;
        }
        f
    }
}

/// Default face sampling step: fine enough to resolve cores of width ε.
pub fn face_step(h: f64, eps: f64) -> f64 {
    (0.5 * h).min(0.5 * eps)
}

impl FaceField {
    pub fn from_fn(n: [usize; 2], step: f64, x0: V3, eb: V3, ec: V3, mut f: impl FnMut(V3) -> (C64, [f64; 2])) -> Self {
        let mut u = Vec::with_capacity(n[0] * n[1]);
        let mut a = Vec::with_capacity(n[0] * n[1]);
        for j in 0..n[1] {
            for i in 0..n[0] {
                let x = add(x0, add(scale(eb, step * i as f64), scale(ec, step * j as f64)));
                let (v, w) = f(x);
                u.push(v);
                a.push(w);
            }
        }
        FaceField {
            n,
            step,
            x0,
            eb,
            ec,
            u,
            a,
            face: None,
            sign: 1,
        }
    }

    /// Samples a rectangle of the lattice field by trilinear interpolation.
    pub fn sample_rect(field: &LatticeField3, x0: V3, eb: V3, ec: V3, len: [f64; 2], max_step: f64) -> Result<Self> {
        let k = [(len[0] / max_step).ceil().max(1.0) as usize, (len[1] / max_step).ceil().max(1.0) as usize];
        // equal steps along both sides
        let step = (len[0] / k[0] as f64).min(len[1] / k[1] as f64);
        let n = [(len[0] / step).round() as usize + 1, (len[1] / step).round() as usize + 1];
        let mut bad = None;
        let ff = FaceField::from_fn(n, step, x0, eb, ec, |x| match field.sample(x) {
            Some((u, a)) => (u, [dot(a, eb), dot(a, ec)]),
            None => {
                bad = Some(x);
                (C64::new(0.0, 0.0), [0.0; 2])
            }
        });
        if let Some(x) = bad {
            return Err(Error::GeometryOutOfBounds(format!("face sample at {x:?} outside the unmasked lattice")));
        }
        Ok(ff)
    }

    /// Samples grid face `f` in its canonical orientation.
    pub fn from_grid_face(field: &LatticeField3, grid: &GridSpec, f: FaceKey, max_step: f64) -> Result<Self> {
        let (x0, eb, ec, _) = grid.face_frame(f);
        let mut ff = Self::sample_rect(field, x0, eb, ec, [grid.delta; 2], max_step)?;
        ff.face = Some(f);
        Ok(ff)
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.n[0] + i
    }

    pub fn pos(&self, i: usize, j: usize) -> V3 {
        add(self.x0, add(scale(self.eb, self.step * i as f64), scale(self.ec, self.step * j as f64)))
    }

    /// Planar coordinates of a world point.
    pub fn local(&self, x: V3) -> [f64; 2] {
        let d = sub(x, self.x0);
        [dot(d, self.eb), dot(d, self.ec)]
    }

    pub fn extent(&self) -> [f64; 2] {
        [self.step * (self.n[0] - 1) as f64, self.step * (self.n[1] - 1) as f64]
    }

    /// Link phase for the edge between node `p` and its +axis neighbour `q`.
    #[inline]
    fn link(&self, p: usize, q: usize, axis: usize) -> f64 {
        0.5 * self.step * (self.a[p][axis] + self.a[q][axis])
    }

    /// Gauge-invariant edge term arg(u_q ū_p e^{−iθ}) + θ from `p` to its +axis neighbour `q`.
    fn edge_winding(&self, p: usize, q: usize, axis: usize) -> f64 {
        let th = self.link(p, q, axis);
        (self.u[q] * self.u[p].conj() * C64::from_polar(1.0, -th)).arg() + th
    }

    /// Covariant difference along `axis` at node (i, j), centered where possible.
    fn cov_diff(&self, i: usize, j: usize, axis: usize) -> C64 {
        let p = self.idx(i, j);
        let (c, nmax) = if axis == 0 { (i, self.n[0]) } else { (j, self.n[1]) };
        let nb = |d: isize| -> usize {
            if axis == 0 {
                self.idx((i as isize + d) as usize, j)
            } else {
                self.idx(i, (j as isize + d) as usize)
            }
        };
        let fwd = |q: usize| self.u[q] * C64::from_polar(1.0, -self.link(p, q, axis));
        let bwd = |q: usize| self.u[q] * C64::from_polar(1.0, self.link(q, p, axis));
        if c > 0 && c + 1 < nmax {
            (fwd(nb(1)) - bwd(nb(-1))) / (2.0 * self.step)
        } else if c + 1 < nmax {
            (fwd(nb(1)) - self.u[p]) / self.step
        } else {
            (self.u[p] - bwd(nb(-1))) / self.step
        }
    }

    /// |∇_A u|² at a node.
    pub fn grad2(&self, i: usize, j: usize) -> f64 {
        self.cov_diff(i, j, 0).norm_sqr() + self.cov_diff(i, j, 1).norm_sqr()
    }

    /// 2D energy ∫ ½|∇_A u|² + (1 − |u|²)²/4ε² over the rectangle (trapezoid weights).
    pub fn energy(&self, eps: f64) -> f64 {
        let mut s = 0.0;
        for j in 0..self.n[1] {
            for i in 0..self.n[0] {
                let w = edge_w(i, self.n[0]) * edge_w(j, self.n[1]);
                let m2 = self.u[self.idx(i, j)].norm_sqr();
                s += w * (0.5 * self.grad2(i, j) + (1.0 - m2).powi(2) / (4.0 * eps * eps));
            }
        }
        s * self.step * self.step
    }

    /// 1D energy along the perimeter: tangential covariant derivative plus potential.
    pub fn boundary_energy(&self, eps: f64) -> f64 {
        let mut s = 0.0;
        for (i, j, axis) in self.ring_edges() {
            let p = self.idx(i, j);
            let q = if axis == 0 { self.idx(i + 1, j) } else { self.idx(i, j + 1) };
            let d = (self.u[q] * C64::from_polar(1.0, -self.link(p, q, axis)) - self.u[p]) / self.step;
            let m2 = 0.5 * (self.u[p].norm_sqr() + self.u[q].norm_sqr());
            s += (0.5 * d.norm_sqr() + (1.0 - m2).powi(2) / (4.0 * eps * eps)) * self.step;
        }
        s
    }

    /// Perimeter edges as (i, j, axis) with (i, j) the low node.
    fn ring_edges(&self) -> Vec<(usize, usize, usize)> {
        let (nx, ny) = (self.n[0], self.n[1]);
        let mut out = vec![];
        for i in 0..nx - 1 {
            out.push((i, 0, 0));
            out.push((i, ny - 1, 0));
        }
        for j in 0..ny - 1 {
            out.push((0, j, 1));
            out.push((nx - 1, j, 1));
        }
        out
    }

    /// Winding (in units of 2π, about the reported orientation) along the outer contour.
    pub fn outer_winding(&self) -> Result<i32> {
        let (nx, ny) = (self.n[0], self.n[1]);
        let cells: Vec<(usize, usize)> = (0..ny - 1).flat_map(|j| (0..nx - 1).map(move |i| (i, j))).collect();
        let w = self.cells_boundary_winding(&|i, j| i < nx - 1 && j < ny - 1, &cells)?;
        Ok(self.sign * w)
    }

    /// Winding about eb × ec along the boundary of a union of cells, as an integer.
    fn cells_boundary_winding(&self, in_set: &dyn Fn(usize, usize) -> bool, cells: &[(usize, usize)]) -> Result<i32> {
        let (nx, ny) = (self.n[0], self.n[1]);
        let inside = |i: isize, j: isize| i >= 0 && j >= 0 && (i as usize) < nx - 1 && (j as usize) < ny - 1 && in_set(i as usize, j as usize);
        let mut total = 0.0;
        for &(i, j) in cells {
            let (ii, jj) = (i as isize, j as isize);
            // counter-clockwise edges of cell (i, j): bottom, right, top, left, each kept only when
            // the neighbour across it is outside the set
            let p00 = self.idx(i, j);
            let p10 = self.idx(i + 1, j);
            let p01 = self.idx(i, j + 1);
            let p11 = self.idx(i + 1, j + 1);
            let edges = [
                (!inside(ii, jj - 1), p00, p10, 0, 1.0),
                (!inside(ii + 1, jj), p10, p11, 1, 1.0),
                (!inside(ii, jj + 1), p01, p11, 0, -1.0),
                (!inside(ii - 1, jj), p00, p01, 1, -1.0),
            ];
            for (on, a, b, axis, s) in edges {
                if on {
                    if self.u[a].norm_sqr() == 0.0 || self.u[b].norm_sqr() == 0.0 {
                        return Err(Error::ZeroOnContour);
                    }
                    total += s * self.edge_winding(a, b, axis);
                }
            }
        }
        Ok((total / (2.0 * PI)).round() as i32)
    }

    /// Nonzero per-cell windings (units of 2π, reported orientation) with cell centres. Cells
    /// with a vanishing corner are skipped.
    pub fn cell_windings(&self) -> Vec<(V3, i32)> {
        let (nx, ny) = (self.n[0], self.n[1]);
        let hs = 0.5 * self.step;
        let mut out = vec![];
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let (p00, p10, p01, p11) = (self.idx(i, j), self.idx(i + 1, j), self.idx(i, j + 1), self.idx(i + 1, j + 1));
                if [p00, p10, p01, p11].iter().any(|&p| self.u[p].norm_sqr() == 0.0) {
                    continue;
                }
                let w = self.edge_winding(p00, p10, 0) + self.edge_winding(p10, p11, 1)
                    - self.edge_winding(p01, p11, 0)
                    - self.edge_winding(p00, p01, 1);
                let d = (w / (2.0 * PI)).round() as i32;
                if d != 0 {
                    out.push((add(self.pos(i, j), scale(add(self.eb, self.ec), hs)), self.sign * d));
                }
            }
        }
        out
    }

    /// Plaquette circulation of (j + A) per sample cell, returned with cell centres. j is
    /// the nodal Im(ū ∇_A u) and edges use the trapezoid rule.
    pub fn cell_vorticity(&self) -> Vec<(V3, f64)> {
        let (nx, ny) = (self.n[0], self.n[1]);
        let mut v = vec![[0.0; 2]; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let p = self.idx(i, j);
                let uc = self.u[p].conj();
                v[p] = [
                    (uc * self.cov_diff(i, j, 0)).im + self.a[p][0],
                    (uc * self.cov_diff(i, j, 1)).im + self.a[p][1],
                ];
            }
        }
        let mut out = Vec::with_capacity((nx - 1) * (ny - 1));
        let hs = 0.5 * self.step;
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let (p00, p10, p01, p11) = (self.idx(i, j), self.idx(i + 1, j), self.idx(i, j + 1), self.idx(i + 1, j + 1));
                let circ = hs * (v[p00][0] + v[p10][0]) + hs * (v[p10][1] + v[p11][1])
                    - hs * (v[p01][0] + v[p11][0])
                    - hs * (v[p00][1] + v[p01][1]);
                let c = add(self.pos(i, j), scale(add(self.eb, self.ec), hs));
                out.push((c, self.sign as f64 * circ));
            }
        }
        out
    }
}

fn edge_w(i: usize, n: usize) -> f64 {
    if i == 0 || i + 1 == n {
        0.5
    } else {
        1.0
    }
}

/// Components of {|u| ≤ 1/2} (8-connected), their degrees, centroids and diameters.
pub fn detect_components(face: &FaceField) -> Result<FaceVortexSet> {
    let (nx, ny) = (face.n[0], face.n[1]);
    let low: Vec<bool> = face.u.iter().map(|u| u.norm() <= 0.5).collect();
    for j in 0..ny {
        for i in 0..nx {
            if (i == 0 || j == 0 || i + 1 == nx || j + 1 == ny) && low[face.idx(i, j)] {
                return Err(Error::BoundaryTouch);
            }
        }
    }
    let mut label = vec![usize::MAX; nx * ny];
    let mut comps: Vec<Vec<(usize, usize)>> = vec![];
    for j0 in 0..ny {
        for i0 in 0..nx {
            let p0 = face.idx(i0, j0);
            if !low[p0] || label[p0] != usize::MAX {
                continue;
            }
            let id = comps.len();
            let mut nodes = vec![];
            let mut q = VecDeque::from([(i0, j0)]);
            label[p0] = id;
            while let Some((i, j)) = q.pop_front() {
                nodes.push((i, j));
                for dj in -1i64..=1 {
                    for di in -1i64..=1 {
                        let (a, b) = (i as i64 + di, j as i64 + dj);
                        if a < 0 || b < 0 || a >= nx as i64 || b >= ny as i64 {
                            continue;
                        }
                        let p = face.idx(a as usize, b as usize);
                        if low[p] && label[p] == usize::MAX {
                            label[p] = id;
                            q.push_back((a as usize, b as usize));
                        }
                    }
                }
            }
            comps.push(nodes);
        }
    }
    let mut set = FaceVortexSet::default();
    for nodes in &comps {
        // cells having a corner in the component
        let mut cells: Vec<(usize, usize)> = vec![];
        let mut in_cells = std::collections::HashSet::new();
        for &(i, j) in nodes {
            for (ci, cj) in [(i as i64 - 1, j as i64 - 1), (i as i64, j as i64 - 1), (i as i64 - 1, j as i64), (i as i64, j as i64)] {
                if ci >= 0 && cj >= 0 && (ci as usize) < nx - 1 && (cj as usize) < ny - 1 && in_cells.insert((ci as usize, cj as usize)) {
                    cells.push((ci as usize, cj as usize));
                }
            }
        }
        let deg = face.sign * face.cells_boundary_winding(&|i, j| in_cells.contains(&(i, j)), &cells)?;
        if deg == 0 {
            set.zero_degree += 1;
            continue;
        }
        let pts: Vec<V3> = nodes.iter().map(|&(i, j)| face.pos(i, j)).collect();
        let mut c = [0.0; 3];
        for p in &pts {
            c = add(c, *p);
        }
        let centroid = scale(c, 1.0 / pts.len() as f64);
        // diameter over nodes with a neighbour outside the component
        let rim: Vec<V3> = nodes
            .iter()
            .filter(|&&(i, j)| {
                let nb = [(i as i64 + 1, j as i64), (i as i64 - 1, j as i64), (i as i64, j as i64 + 1), (i as i64, j as i64 - 1)];
                nb.iter().any(|&(a, b)| !low[face.idx(a as usize, b as usize)])
            })
            .map(|&(i, j)| face.pos(i, j))
            .collect();
        let mut diam: f64 = 0.0;
        for a in 0..rim.len() {
            for b in a + 1..rim.len() {
                diam = diam.max(dist(rim[a], rim[b]));
            }
        }
        let grad_energy: f64 = nodes.iter().map(|&(i, j)| face.grad2(i, j)).sum::<f64>() * face.step * face.step;
        set.components.push(Component {
            centroid,
            degree: deg,
            diameter: diam,
            nodes: nodes.len(),
            grad_energy,
        });
    }
    set.r_omega = set.components.iter().map(|c| c.diameter).sum();
    set.i_omega = set.components.len();
    Ok(set)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate2d {
    pub lhs_norm_estimate: f64,
    pub rhs_bound: f64,
    pub constant_fit: f64,
}

/// One member of the seeded test family: a signed elliptic cone
/// ξ(x) = a·max(0, r − |M(x − c)|) with |M| ≤ 1, normalized so sup|ξ| + Lip(ξ) = 1.
#[derive(Clone, Copy, Debug)]
pub struct ConeTest {
    pub center: [f64; 2],
    pub radius: f64,
    pub rot: f64,
    pub aspect: f64,
    pub amp: f64,
}

impl ConeTest {
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        let d = [x[0] - self.center[0], x[1] - self.center[1]];
        let (s, c) = self.rot.sin_cos();
        let y = [c * d[0] + s * d[1], self.aspect * (-s * d[0] + c * d[1])];
        self.amp * (self.radius - y[0].hypot(y[1])).max(0.0)
    }
}

/// Seeded family of `count` test functions on a rectangle of the given extent.
pub fn test_family(extent: [f64; 2], count: usize, seed: u64) -> Vec<ConeTest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale_len = extent[0].max(extent[1]);
    (0..count)
        .map(|_| {
            let radius = scale_len * (0.05 + 0.95 * rng.gen::<f64>());
            ConeTest {
                center: [rng.gen::<f64>() * extent[0], rng.gen::<f64>() * extent[1]],
                radius,
                rot: rng.gen::<f64>() * PI,
                aspect: 0.2 + 0.8 * rng.gen::<f64>(),
                amp: if rng.gen::<bool>() { 1.0 } else { -1.0 } / (1.0 + radius),
            }
        })
        .collect()
}

pub const TEST_FAMILY_SIZE: usize = 200;
pub const TEST_FAMILY_SEED: u64 = 0x5eed;

/// max over the test family of ⟨μ_face − 2π Σ d_i δ_{a_i}, ξ⟩.
pub fn residual_lower_estimate(face: &FaceField, vortices: &FaceVortexSet, family: &[ConeTest]) -> f64 {
    let cells = face.cell_vorticity();
    let cells_local: Vec<([f64; 2], f64)> = cells.iter().map(|(x, w)| (face.local(*x), *w)).collect();
    let pts: Vec<([f64; 2], f64)> = vortices
        .components
        .iter()
        .map(|c| (face.local(c.centroid), 2.0 * PI * c.degree as f64))
        .collect();
    family
        .iter()
        .map(|t| {
            let a: f64 = cells_local.iter().map(|(x, w)| w * t.eval(*x)).sum();
            let b: f64 = pts.iter().map(|(x, w)| w * t.eval(*x)).sum();
            (a - b).abs()
        })
        .fold(0.0, f64::max)
}

pub fn verify_2d_estimate(face: &FaceField, vortices: &FaceVortexSet, eps: f64) -> Estimate2d {
    let family = test_family(face.extent(), TEST_FAMILY_SIZE, TEST_FAMILY_SEED);
    let lhs = residual_lower_estimate(face, vortices, &family);
    let rhs = eps.max(vortices.r_omega) * (1.0 + face.energy(eps) + face.boundary_energy(eps));
    Estimate2d {
        lhs_norm_estimate: lhs,
        rhs_bound: rhs,
        constant_fit: if rhs > 0.0 { lhs / rhs } else { 0.0 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Planar vortex field with tanh profile; `cores` are (x, y, degree).
    pub fn planar(n: usize, len: f64, eps: f64, cores: &[(f64, f64, i32)]) -> FaceField {
        let step = len / (n - 1) as f64;
        FaceField::from_fn([n, n], step, [0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], |x| {
            let mut u = C64::new(1.0, 0.0);
            for &(cx, cy, d) in cores {
                let (dx, dy) = (x[0] - cx, x[1] - cy);
                let r = dx.hypot(dy);
                u *= C64::from_polar((r / eps).tanh(), d as f64 * dy.atan2(dx));
            }
            (u, [0.0; 2])
        })
    }

    #[test]
    fn empty_face() {
        let f = planar(21, 1.0, 0.05, &[]);
        let s = detect_components(&f).unwrap();
        assert!(s.components.is_empty());
        assert_eq!(s.r_omega, 0.0);
        let e = verify_2d_estimate(&f, &s, 0.05);
        assert!(e.lhs_norm_estimate.abs() < 1e-12);
        assert_eq!(e.constant_fit, 0.0);
    }

    #[test]
    fn single_core() {
        let f = planar(81, 1.0, 0.03, &[(0.503, 0.491, 1)]);
        let s = detect_components(&f).unwrap();
        assert_eq!(s.components.len(), 1);
        assert_eq!(s.components[0].degree, 1);
        assert!(dist(s.components[0].centroid, [0.503, 0.491, 0.0]) < f.step);
        assert_eq!(f.outer_winding().unwrap(), 1);
        let mut g = f.clone();
        g.sign = -1;
        assert_eq!(detect_components(&g).unwrap().components[0].degree, -1);
    }

    #[test]
    fn dipole_on_face() {
        let f = planar(101, 1.0, 0.02, &[(0.35, 0.5, 1), (0.65, 0.5, -1)]);
        let s = detect_components(&f).unwrap();
        let mut d: Vec<i32> = s.components.iter().map(|c| c.degree).collect();
        d.sort();
        assert_eq!(d, vec![-1, 1]);
        assert_eq!(s.total_degree(), 0);
        assert_eq!(f.outer_winding().unwrap(), 0);
    }

    #[test]
    fn degree_two_core() {
        let f = planar(81, 1.0, 0.04, &[(0.5, 0.5, 2)]);
        let s = detect_components(&f).unwrap();
        assert_eq!(s.total_degree(), 2);
        assert_eq!(f.outer_winding().unwrap(), 2);
    }

    #[test]
    fn boundary_touch() {
        let f = planar(41, 1.0, 0.05, &[(0.0, 0.5, 1)]);
        assert_eq!(detect_components(&f).unwrap_err(), Error::BoundaryTouch);
    }

    #[test]
    fn exact_zero_inside_component_is_fine() {
        // contour nodes are 8-neighbours outside the component, hence |u| > 1/2 there
        let mut f = planar(41, 1.0, 0.05, &[(0.5, 0.5, 1)]);
        let p = f.idx(20, 20);
        f.u[p] = C64::new(0.0, 0.0);
        assert_eq!(detect_components(&f).unwrap().total_degree(), 1);
    }

    #[test]
    fn gauge_invariance_of_degrees() {
        let f = planar(61, 1.0, 0.03, &[(0.4, 0.55, 1)]);
        let mut g = f.clone();
        for j in 0..g.n[1] {
            for i in 0..g.n[0] {
                let x = g.pos(i, j);
                let chi = 2.0 * x[0] - 1.3 * x[1] * x[1];
                let p = g.idx(i, j);
                g.u[p] *= C64::from_polar(1.0, chi);
                g.a[p] = [2.0, -2.6 * x[1]];
            }
        }
        let a = detect_components(&f).unwrap();
        let b = detect_components(&g).unwrap();
        assert_eq!(a.components.len(), b.components.len());
        for (x, y) in a.components.iter().zip(&b.components) {
            assert_eq!((x.degree, x.centroid, x.diameter, x.nodes), (y.degree, y.centroid, y.diameter, y.nodes));
            assert!((x.grad_energy - y.grad_energy).abs() < 0.05 * x.grad_energy);
        }
    }

    #[test]
    fn face_vorticity_integrates_to_two_pi() {
        let f = planar(81, 1.0, 0.03, &[(0.5, 0.5, 1)]);
        let total: f64 = f.cell_vorticity().iter().map(|c| c.1).sum();
        assert!((total - 2.0 * PI).abs() < 0.05 * 2.0 * PI, "{total}");
    }

    #[test]
    fn estimate_ratio_bounded_across_eps() {
        let mut ratios = vec![];
        let mut lhs = vec![];
        for eps in [0.04, 0.02, 0.01] {
            let n = (1.0 / face_step(1.0 / 64.0, eps)).ceil() as usize + 1;
            let f = planar(n, 1.0, eps, &[(0.5, 0.5, 1)]);
            let s = detect_components(&f).unwrap();
            let e = verify_2d_estimate(&f, &s, eps);
            ratios.push(e.constant_fit);
            lhs.push(e.lhs_norm_estimate);
        }
        assert!(lhs[0] > lhs[1] && lhs[1] > lhs[2], "{lhs:?}");
        for r in &ratios {
            assert!(*r < 1.0, "{ratios:?}");
        }
    }
}
