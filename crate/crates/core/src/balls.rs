//! Growth-and-merge ball construction on planar slices, isotropic and for a constant
//! diagonal metric, with the resulting energy lower bound.

use crate::geom::*;
use crate::slice::{detect_components, FaceField, FaceVortexSet};
use crate::{Error, Result};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Lower-bound kernel Λ_ε(t) = π·g(t/ε) where g is log(s) − C₀ for s ≥ s* = e^{C₀+1} and the
/// tangent line through the origin, s/s*, below s*. g is concave, so Λ(t)/t is nonincreasing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub eps: f64,
    pub c0: f64,
}

impl Kernel {
    pub fn new(eps: f64) -> Self {
        Kernel { eps, c0: 2.0 }
    }

    pub fn s_star(&self) -> f64 {
        (self.c0 + 1.0).exp()
    }

    pub fn eval(&self, t: f64) -> f64 {
        let s = t / self.eps;
        let ss = self.s_star();
        PI * if s >= ss { s.ln() - self.c0 } else { s / ss }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball2 {
    pub center: V3,
    /// Radius in the (possibly rescaled) growth coordinates.
    pub radius: f64,
    /// Semi-axes along the face axes in original coordinates.
    pub semi_axes: [f64; 2],
    pub degree: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeEvent {
    pub total_radius: f64,
    /// Per-ball contributions |d|Λ(r/|d|) just before the merge.
    pub contributions: Vec<f64>,
    pub merged_degree: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallFamily {
    pub balls: Vec<Ball2>,
    pub total_radius: f64,
    pub lower_bound: f64,
    pub kernel: Kernel,
    /// Effective final radius after the slice-size cap.
    pub final_radius: f64,
    pub merges: Vec<MergeEvent>,
    /// Bound value after every growth step.
    pub trace: Vec<f64>,
}

pub const GROWTH_FACTOR: f64 = 1.05;

#[derive(Clone, Copy, Debug)]
struct Disk {
    c: [f64; 2],
    r: f64,
    d: i32,
}

fn enclosing(a: Disk, b: Disk) -> Disk {
    let dx = [b.c[0] - a.c[0], b.c[1] - a.c[1]];
    let dd = dx[0].hypot(dx[1]);
    if dd + b.r <= a.r {
        return Disk { d: a.d + b.d, ..a };
    }
    if dd + a.r <= b.r {
        return Disk { d: a.d + b.d, ..b };
    }
    let r = 0.5 * (dd + a.r + b.r);
    // centre on the line through both centres, r − a.r away from a's centre
    let t = (r - a.r) / dd;
    Disk {
        c: [a.c[0] + t * dx[0], a.c[1] + t * dx[1]],
        r,
        d: a.d + b.d,
    }
}

fn bound(disks: &[Disk], k: &Kernel) -> f64 {
    disks
        .iter()
        .filter(|d| d.d != 0)
        .map(|d| d.d.unsigned_abs() as f64 * k.eval(d.r / d.d.unsigned_abs() as f64))
        .sum()
}

fn merge_all(disks: &mut Vec<Disk>, k: &Kernel, events: &mut Vec<MergeEvent>) {
    loop {
        let mut hit = None;
        'outer: for i in 0..disks.len() {
            for j in i + 1..disks.len() {
                let (a, b) = (disks[i], disks[j]);
                if (a.c[0] - b.c[0]).hypot(a.c[1] - b.c[1]) <= a.r + b.r {
                    hit = Some((i, j));
                    break 'outer;
                }
            }
        }
        let Some((i, j)) = hit else { break };
        let contributions = disks
            .iter()
            .map(|d| if d.d == 0 { 0.0 } else { d.d.unsigned_abs() as f64 * k.eval(d.r / d.d.unsigned_abs() as f64) })
            .collect();
        let m = enclosing(disks[i], disks[j]);
        disks.remove(j);
        disks[i] = m;
        events.push(MergeEvent {
            total_radius: disks.iter().map(|d| d.r).sum(),
            contributions,
            merged_degree: m.d,
        });
    }
}

/// Growth in planar coordinates on the rectangle [0, rect₀] × [0, rect₁].
fn grow_core(mut disks: Vec<Disk>, rect: [f64; 2], k: Kernel, r1: f64) -> Result<(Vec<Disk>, f64, Vec<MergeEvent>, Vec<f64>)> {
    let mut events = vec![];
    let mut trace = vec![];
    if disks.is_empty() {
        return Ok((disks, 0.0, events, trace));
    }
    let check = |disks: &[Disk]| -> Result<()> {
        for d in disks {
            if d.d != 0 && (d.c[0] - d.r < 0.0 || d.c[1] - d.r < 0.0 || d.c[0] + d.r > rect[0] || d.c[1] + d.r > rect[1]) {
                return Err(Error::BoundaryCollision);
            }
        }
        Ok(())
    };
    merge_all(&mut disks, &k, &mut events);
    check(&disks)?;
    let mut best = bound(&disks, &k);
    trace.push(best);
    loop {
        let total: f64 = disks.iter().map(|d| d.r).sum();
        if total >= r1 {
            break;
        }
        let f = GROWTH_FACTOR.min(r1 / total);
        for d in disks.iter_mut() {
            d.r *= f;
        }
        if f < GROWTH_FACTOR {
            // land exactly on the target total
            let t: f64 = disks.iter().map(|d| d.r).sum();
            let last = disks.len() - 1;
            disks[last].r += r1 - t;
        }
        merge_all(&mut disks, &k, &mut events);
        check(&disks)?;
        let b = bound(&disks, &k);
        trace.push(b);
        best = best.max(b);
        if f < GROWTH_FACTOR {
            break;
        }
    }
    Ok((disks, best, events, trace))
}

/// Seeds from essential components in face-plane coordinates scaled by (a, b).
fn seeds(face: &FaceField, set: &FaceVortexSet, a: f64, b: f64) -> Vec<Disk> {
    set.components
        .iter()
        .map(|c| {
            let p = face.local(c.centroid);
            Disk {
                c: [a * p[0], b * p[1]],
                r: (c.diameter + 2.0 * face.step) * a.max(b),
                d: c.degree,
            }
        })
        .collect()
}

fn family(face: &FaceField, disks: Vec<Disk>, lower: f64, k: Kernel, r1: f64, a: f64, b: f64, merges: Vec<MergeEvent>, trace: Vec<f64>) -> BallFamily {
    let balls: Vec<Ball2> = disks
        .iter()
        .map(|d| Ball2 {
            center: add(face.x0, add(scale(face.eb, d.c[0] / a), scale(face.ec, d.c[1] / b))),
            radius: d.r,
            semi_axes: [d.r / a, d.r / b],
            degree: d.d,
        })
        .collect();
    BallFamily {
        total_radius: disks.iter().map(|d| d.r).sum(),
        balls,
        lower_bound: lower,
        kernel: k,
        final_radius: r1,
        merges,
        trace,
    }
}

/// Radius cap: a quarter of the slice diameter.
pub fn radius_cap(face: &FaceField) -> f64 {
    let e = face.extent();
    0.25 * e[0].hypot(e[1])
}

pub fn grow_balls(face: &FaceField, eps: f64, r1: f64) -> Result<BallFamily> {
    grow_balls_metric(face, eps, [1.0, 1.0], r1)
}

/// Ball growth for the constant metric diag(g_tt, g_ww) along the face axes: coordinates are
/// stretched by (√g_tt, √g_ww), growth runs with ε̃ = ε·(g_tt g_ww)^{1/4}, and the disks map
/// back to ellipses.
pub fn grow_balls_metric(face: &FaceField, eps: f64, metric: [f64; 2], r1: f64) -> Result<BallFamily> {
    if !(metric[0] > 0.0 && metric[1] > 0.0) {
        return Err(Error::ParamsInfeasible("metric entries must be positive".into()));
    }
    let set = detect_components(face)?;
    let (a, b) = (metric[0].sqrt(), metric[1].sqrt());
    let k = Kernel::new(eps * (a * b).sqrt());
    let r1 = r1.min(radius_cap(face) * a.min(b));
    let e = face.extent();
    let (disks, lower, merges, trace) = grow_core(seeds(face, &set, a, b), [a * e[0], b * e[1]], k, r1)?;
    Ok(family(face, disks, lower, k, r1, a, b, merges, trace))
}

/// ∫ ½(√(g_ww/g_tt)|∂_s u|² + √(g_tt/g_ww)|∂_t u|²) + (1 − |u|²)²/4ε², the energy that the
/// metric construction bounds from below.
pub fn weighted_energy(face: &FaceField, eps: f64, metric: [f64; 2]) -> f64 {
    let (a, b) = (metric[0].sqrt(), metric[1].sqrt());
    let (nx, ny) = (face.n[0], face.n[1]);
    let mut s = 0.0;
    for j in 0..ny {
        for i in 0..nx {
            let w = if i == 0 || i + 1 == nx { 0.5 } else { 1.0 } * if j == 0 || j + 1 == ny { 0.5 } else { 1.0 };
            let (ds, dt) = face_diffs(face, i, j);
            let m2 = face.u[face.idx(i, j)].norm_sqr();
            s += w * (0.5 * (b / a * ds.norm_sqr() + a / b * dt.norm_sqr()) + (1.0 - m2).powi(2) / (4.0 * eps * eps));
        }
    }
    s * face.step * face.step
}

fn face_diffs(face: &FaceField, i: usize, j: usize) -> (C64, C64) {
    let d = |axis: usize| {
        let (c, n) = if axis == 0 { (i, face.n[0]) } else { (j, face.n[1]) };
        let at = |o: isize| {
            if axis == 0 {
                face.u[face.idx((i as isize + o) as usize, j)]
            } else {
                face.u[face.idx(i, (j as isize + o) as usize)]
            }
        };
        if c > 0 && c + 1 < n {
            (at(1) - at(-1)) / (2.0 * face.step)
        } else if c + 1 < n {
            (at(1) - at(0)) / face.step
        } else {
            (at(0) - at(-1)) / face.step
        }
    };
    (d(0), d(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planar(len: f64, step: f64, eps: f64, cores: &[(f64, f64, i32)], stretch: [f64; 2]) -> FaceField {
        let n = (len / step).round() as usize + 1;
        FaceField::from_fn([n, n], step, [0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], |x| {
            let mut u = C64::new(1.0, 0.0);
            for &(cx, cy, d) in cores {
                let (dx, dy) = ((x[0] - cx) * stretch[0], (x[1] - cy) * stretch[1]);
                let r = dx.hypot(dy);
                u *= C64::from_polar((r / eps).tanh(), d as f64 * dy.atan2(dx));
            }
            (u, [0.0; 2])
        })
    }

    #[test]
    fn kernel_properties() {
        let k = Kernel::new(0.01);
        let ts: Vec<f64> = (1..4000).map(|i| 0.0001 * i as f64).collect();
        let mut prev = f64::INFINITY;
        for &t in &ts {
            let q = k.eval(t) / t;
            assert!(q <= prev * (1.0 + 1e-12));
            prev = q;
            assert!(q <= 1.0 / (k.c0 * k.eps) + 1e-12);
            if t > k.eps {
                assert!((k.eval(t) - PI * (t / k.eps).ln()).abs() <= PI * k.c0 + 1e-12);
            }
        }
    }

    #[test]
    fn no_components() {
        let f = planar(1.0, 0.01, 0.02, &[], [1.0, 1.0]);
        let b = grow_balls(&f, 0.02, 0.3).unwrap();
        assert!(b.balls.is_empty());
        assert_eq!(b.lower_bound, 0.0);
    }

    #[test]
    fn single_vortex_bound() {
        let eps = 0.01;
        let f = planar(2.0, 0.005, eps, &[(1.0, 1.0, 1)], [1.0, 1.0]);
        let b = grow_balls(&f, eps, 0.4).unwrap();
        assert_eq!(b.balls.len(), 1);
        assert!((b.total_radius - 0.4).abs() < 1e-12);
        let lo = PI * ((0.4f64 / eps).ln() - 2.0);
        assert!(b.lower_bound >= lo - 1e-12, "{} vs {lo}", b.lower_bound);
        assert!(b.lower_bound <= f.energy(eps));
        // identity metric takes exactly the same path
        let m = grow_balls_metric(&f, eps, [1.0, 1.0], 0.4).unwrap();
        assert_eq!(m, b);
    }

    #[test]
    fn monotone_in_final_radius() {
        let eps = 0.01;
        let f = planar(2.0, 0.005, eps, &[(0.8, 1.0, 1), (1.2, 1.05, 1)], [1.0, 1.0]);
        let mut prev = 0.0;
        for r in [0.05, 0.1, 0.2, 0.3, 0.4, 0.5] {
            let b = grow_balls(&f, eps, r).unwrap();
            assert!(b.lower_bound >= prev - 1e-12);
            prev = b.lower_bound;
        }
    }

    #[test]
    fn dipole_merges_to_zero() {
        let eps = 0.01;
        let f = planar(2.0, 0.005, eps, &[(0.9, 1.0, 1), (1.1, 1.0, -1)], [1.0, 1.0]);
        let b = grow_balls(&f, eps, 0.4).unwrap();
        assert_eq!(b.balls.len(), 1);
        assert_eq!(b.balls[0].degree, 0);
        assert!(!b.merges.is_empty());
        assert_eq!(b.merges[0].merged_degree, 0);
        assert!(b.merges[0].contributions.iter().all(|&c| c > 0.0));
        // disjointness of the final family holds trivially; the bound is the best pre-merge value
        assert!(b.lower_bound > 0.0);
        assert!(b.lower_bound <= f.energy(eps));
    }

    #[test]
    fn disjoint_after_merges() {
        let eps = 0.01;
        let cores = [(0.7, 0.7, 1), (0.75, 1.2, 1), (1.3, 1.0, -1), (1.25, 0.7, 1)];
        let f = planar(2.0, 0.005, eps, &cores, [1.0, 1.0]);
        for r in [0.1, 0.2, 0.3] {
            let b = grow_balls(&f, eps, r).unwrap();
            for i in 0..b.balls.len() {
                for j in i + 1..b.balls.len() {
                    assert!(dist(b.balls[i].center, b.balls[j].center) > b.balls[i].radius + b.balls[j].radius);
                }
            }
            let deg: i32 = b.balls.iter().map(|x| x.degree).sum();
            assert_eq!(deg, f.outer_winding().unwrap());
        }
    }

    #[test]
    fn boundary_collision() {
        let f = planar(1.0, 0.005, 0.01, &[(0.1, 0.5, 1)], [1.0, 1.0]);
        assert_eq!(grow_balls(&f, 0.01, 0.3).unwrap_err(), Error::BoundaryCollision);
    }

    #[test]
    fn anisotropic_ellipses() {
        let eps = 0.01;
        // core squeezed consistently with the metric: |u| depends on the g-distance
        let f = planar(2.0, 0.005, eps, &[(1.0, 1.0, 1)], [2.0, 1.0]);
        let b = grow_balls_metric(&f, eps, [4.0, 1.0], 0.4).unwrap();
        let ax = b.balls[0].semi_axes;
        assert!((ax[1] / ax[0] - 2.0).abs() < 1e-12);
        assert!(b.lower_bound <= weighted_energy(&f, eps, [4.0, 1.0]));
        assert!(b.lower_bound > 0.0);
    }
}
