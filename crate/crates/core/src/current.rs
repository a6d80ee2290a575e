//! Polyhedral vortex current assembled from per-face vortex sets: minimal connections inside
//! each kept cube, the boundary layer Θ through the grid surface, mass, support volume,
//! boundary residual and the distance to the lattice vorticity.

use crate::field::{discrete_vorticity, flux_mass, LatticeField3};
use crate::geom::*;
use crate::grid::{FaceKey, GridSpec};
use crate::matching::{
    augment_collection, connect_euclidean, connect_on_polyhedron, measure_norm, Augmented, Connection, Domain, Leg, SignedConfig,
    SurfaceGraph,
};
use crate::slice::{detect_components, face_step, residual_lower_estimate, test_family, FaceField, FaceVortexSet, TEST_FAMILY_SEED, TEST_FAMILY_SIZE};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Provenance {
    Cube([i64; 3]),
    Theta,
}

/// Oriented segment carrying 2π·mult.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: V3,
    pub b: V3,
    pub mult: i32,
    pub tag: Provenance,
}

impl Segment {
    pub fn length(&self) -> f64 {
        dist(self.a, self.b)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CubePart {
    pub cube: [i64; 3],
    pub connection: Connection,
    /// Legs replaced by inward detours and the length they added.
    pub detours: usize,
    pub detour_extra: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ThetaPart {
    pub connection: Connection,
    pub augmented: Augmented,
    pub max_faces: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolyhedralCurrent {
    pub segments: Vec<Segment>,
    pub faces: Vec<(FaceKey, FaceVortexSet)>,
    pub cubes: Vec<CubePart>,
    pub theta: Option<ThetaPart>,
    /// Kept cubes with at least one vortex component on a face.
    pub support_cubes: Vec<[i64; 3]>,
    /// Some face of ∂G carries a component.
    pub theta_used: bool,
    pub eta: f64,
}

/// Detour offset as a fraction of δ.
pub const ETA_FRACTION: f64 = 1e-3;

/// Steiner points per edge of the ∂G surface graph.
pub const SURFACE_STEINER: usize = 2;

impl PolyhedralCurrent {
    pub fn empty() -> Self {
        PolyhedralCurrent {
            segments: vec![],
            faces: vec![],
            cubes: vec![],
            theta: None,
            support_cubes: vec![],
            theta_used: false,
            eta: 0.0,
        }
    }

    pub fn face_set(&self, f: FaceKey) -> Option<&FaceVortexSet> {
        self.faces.binary_search_by(|(k, _)| k.cmp(&f)).ok().map(|i| &self.faces[i].1)
    }

    /// Total mass 2π Σ |mult|·length.
    pub fn total_mass(&self) -> f64 {
        2.0 * PI * self.segments.iter().map(|s| s.mult.unsigned_abs() as f64 * s.length()).sum::<f64>()
    }

    /// Serialised as segments [x₁, y₁, z₁, x₂, y₂, z₂, mult] with provenance and grid reference.
    pub fn to_json(&self, grid: &GridSpec) -> Value {
        let segs: Vec<Value> = self
            .segments
            .iter()
            .map(|s| json!([s.a[0], s.a[1], s.a[2], s.b[0], s.b[1], s.b[2], s.mult]))
            .collect();
        let prov: Vec<Value> = self
            .segments
            .iter()
            .map(|s| match s.tag {
                Provenance::Cube(c) => json!({"cube": c}),
                Provenance::Theta => json!("theta"),
            })
            .collect();
        json!({
            "prefactor": 2.0 * PI,
            "segments": segs,
            "provenance": prov,
            "grid": {"origin": grid.origin, "rotation": grid.rotation, "delta": grid.delta},
            "support_cubes": self.support_cubes,
            "theta_used": self.theta_used,
        })
    }
}

fn sample_faces(field: &LatticeField3, grid: &GridSpec, eps: f64) -> Result<Vec<(FaceKey, FaceVortexSet)>> {
    let keys: Vec<FaceKey> = grid.all_faces().into_keys().collect();
    let step = face_step(field.h, eps);
    keys.par_iter()
        .map(|&f| {
            let stage = |e: Error| e.at(format!("face {:?} axis {}", f.m, f.axis));
            let ff = FaceField::from_grid_face(field, grid, f, step).map_err(stage)?;
            let set = detect_components(&ff).map_err(stage)?;
            Ok((f, set))
        })
        .collect()
}

/// Points of a face set entering a configuration with orientation sign `s`; each centroid is
/// repeated |degree| times and sorted into positives (s·degree > 0) and negatives.
fn push_points(set: &FaceVortexSet, s: i32, tag: usize, pos: &mut Vec<(V3, usize)>, neg: &mut Vec<(V3, usize)>) {
    for c in &set.components {
        let d = s * c.degree;
        for _ in 0..d.unsigned_abs() {
            if d > 0 {
                pos.push((c.centroid, tag));
            } else {
                neg.push((c.centroid, tag));
            }
        }
    }
}

/// Assembles ν_ε: per kept cube the minimal Euclidean connection of its face points (exit
/// points positive), legs inside one face pushed into the cube by η, and the Θ layer from the
/// surface connection on ∂G.
pub fn build_vortex_current(field: &LatticeField3, grid: &GridSpec, eps: f64) -> Result<PolyhedralCurrent> {
    let faces = sample_faces(field, grid, eps)?;
    let lookup: BTreeMap<FaceKey, &FaceVortexSet> = faces.iter().map(|(k, v)| (*k, v)).collect();
    let eta = ETA_FRACTION * grid.delta;

    let cube_parts: Vec<(CubePart, Vec<Segment>)> = grid
        .kept_cubes
        .par_iter()
        .map(|&n| -> Result<Option<(CubePart, Vec<Segment>)>> {
            let fc = grid.faces_of_cube(n);
            let mut pos = vec![];
            let mut neg = vec![];
            for (t, (f, s)) in fc.iter().enumerate() {
                let set = lookup.get(f).ok_or_else(|| Error::OrientationMismatch.at(format!("cube {n:?}")))?;
                push_points(set, *s, t, &mut pos, &mut neg);
            }
            if pos.is_empty() && neg.is_empty() {
                return Ok(None);
            }
            let config = SignedConfig::new(pos.iter().map(|p| p.0).collect(), neg.iter().map(|p| p.0).collect());
            let conn = connect_euclidean(&config).map_err(|e| e.at(format!("cube {n:?}")))?;
            let mut segs = vec![];
            let mut detours = 0;
            let mut extra = 0.0;
            for (i, leg) in conn.legs.iter().enumerate() {
                let j = conn.pairing[i];
                let (fp, fn_) = (pos[i].1, neg[j].1);
                let (a, b) = match leg {
                    Leg::Segment { n, p } => (*n, *p),
                    _ => return Err(Error::OrientationMismatch.at(format!("cube {n:?}"))),
                };
                let tag = Provenance::Cube(n);
                if fp == fn_ && a != b {
                    // both ends on the same face: two legs through the midpoint moved inward
                    let (f, s) = fc[fp];
                    let normal = grid.face_frame(f).3;
                    let m = add(scale(add(a, b), 0.5), scale(normal, -(s as f64) * eta));
                    extra += dist(a, m) + dist(m, b) - dist(a, b);
                    detours += 1;
                    segs.push(Segment { a, b: m, mult: 1, tag });
                    segs.push(Segment { a: m, b, mult: 1, tag });
                } else if a != b {
                    segs.push(Segment { a, b, mult: 1, tag });
                }
            }
            Ok(Some((
                CubePart {
                    cube: n,
                    connection: conn,
                    detours,
                    detour_extra: extra,
                },
                segs,
            )))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    // Θ layer: ∂G points with orientation taken outward from Θ, i.e. inward for G
    let bfaces = grid.boundary_faces();
    let mut pos = vec![];
    let mut neg = vec![];
    for (t, (f, s)) in bfaces.iter().enumerate() {
        if let Some(set) = lookup.get(f) {
            push_points(set, -s, t, &mut pos, &mut neg);
        }
    }
    let theta_used = bfaces.iter().any(|(f, _)| lookup.get(f).is_some_and(|s| !s.components.is_empty()));
    let mut segments: Vec<Segment> = cube_parts.iter().flat_map(|c| c.1.clone()).collect();
    let theta = if pos.is_empty() && neg.is_empty() {
        None
    } else {
        let config = SignedConfig::new(pos.iter().map(|p| p.0).collect(), neg.iter().map(|p| p.0).collect());
        let mut graph = SurfaceGraph::new(grid.boundary_quads(), SURFACE_STEINER);
        let sc = connect_on_polyhedron(&config, &mut graph, field).map_err(|e| e.at("theta"))?;
        let aug = augment_collection(&sc, &graph, field);
        for leg in &sc.conn.legs {
            for (a, b) in leg.pieces() {
                if a != b {
                    segments.push(Segment { a, b, mult: 1, tag: Provenance::Theta });
                }
            }
        }
        Some(ThetaPart {
            connection: sc.conn,
            augmented: aug,
            max_faces: sc.max_faces,
        })
    };

    let support_cubes = grid
        .kept_cubes
        .iter()
        .copied()
        .filter(|&n| grid.faces_of_cube(n).iter().any(|(f, _)| lookup.get(f).is_some_and(|s| !s.components.is_empty())))
        .collect();
    Ok(PolyhedralCurrent {
        segments: merge_segments(segments),
        faces,
        cubes: cube_parts.into_iter().map(|c| c.0).collect(),
        theta,
        support_cubes,
        theta_used,
        eta,
    })
}

fn key(v: V3) -> [u64; 3] {
    [v[0].to_bits(), v[1].to_bits(), v[2].to_bits()]
}

/// Sums multiplicities of identical segments (opposite orientations cancel) per provenance
/// and drops zeros; output order is deterministic.
pub fn merge_segments(segs: Vec<Segment>) -> Vec<Segment> {
    let mut acc: BTreeMap<(Provenance, [u64; 3], [u64; 3]), (V3, V3, i32)> = BTreeMap::new();
    let mut order = vec![];
    for s in segs {
        let (ka, kb) = (key(s.a), key(s.b));
        let (k, a, b, m) = if ka <= kb { ((s.tag, ka, kb), s.a, s.b, s.mult) } else { ((s.tag, kb, ka), s.b, s.a, -s.mult) };
        match acc.get_mut(&k) {
            Some(e) => e.2 += m,
            None => {
                order.push(k);
                acc.insert(k, (a, b, m));
            }
        }
    }
    order
        .into_iter()
        .filter_map(|k| {
            let (a, b, m) = acc[&k];
            match m {
                0 => None,
                m if m > 0 => Some(Segment { a, b, mult: m, tag: k.0 }),
                m => Some(Segment { a: b, b: a, mult: -m, tag: k.0 }),
            }
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    /// Endpoints strictly inside Ω with a nonzero signed degree.
    pub interior_defects: usize,
    pub max_interior_defect: i32,
    /// Endpoints on ∂Ω (exempt).
    pub boundary_endpoints: usize,
    pub endpoints: usize,
}

/// Signed endpoint degrees (+mult at ends, −mult at starts) grouped by exact position.
pub fn boundary_residual(nu: &PolyhedralCurrent, dom: &dyn Domain) -> Residual {
    let mut acc: BTreeMap<[u64; 3], (V3, i32)> = BTreeMap::new();
    for s in &nu.segments {
        acc.entry(key(s.a)).or_insert((s.a, 0)).1 -= s.mult;
        acc.entry(key(s.b)).or_insert((s.b, 0)).1 += s.mult;
    }
    let mut r = Residual {
        endpoints: acc.len(),
        ..Default::default()
    };
    for (x, d) in acc.values() {
        if dom.signed_dist(*x) <= 1e-9 {
            r.boundary_endpoints += 1;
        } else if *d != 0 {
            r.interior_defects += 1;
            r.max_interior_defect = r.max_interior_defect.max(d.abs());
        }
    }
    r
}

/// |ν|(S ∪ Θ) as the kept cubes carrying vortices plus Θ when ∂G carries vortices.
pub fn support_volume(nu: &PolyhedralCurrent, grid: &GridSpec) -> f64 {
    nu.support_cubes.len() as f64 * grid.delta.powi(3) + if nu.theta_used { grid.theta_volume } else { 0.0 }
}

/// Length of the part of segment [a, b] inside `region`, locating crossings by bisection on
/// 64 uniform sub-pieces.
pub fn clipped_length(a: V3, b: V3, region: &dyn Fn(V3) -> bool) -> f64 {
    let n = 64;
    let len = dist(a, b);
    let at = |t: f64| lerp(a, b, t);
    let mut total = 0.0;
    for i in 0..n {
        let (t0, t1) = (i as f64 / n as f64, (i + 1) as f64 / n as f64);
        let (i0, i1) = (region(at(t0)), region(at(t1)));
        if i0 && i1 {
            total += t1 - t0;
        } else if i0 != i1 {
            let (mut lo, mut hi) = (t0, t1);
            for _ in 0..60 {
                let m = 0.5 * (lo + hi);
                if region(at(m)) == i0 {
                    lo = m;
                } else {
                    hi = m;
                }
            }
            let c = 0.5 * (lo + hi);
            total += if i0 { c - t0 } else { t1 - c };
        }
    }
    total * len
}

/// |ν|(region) = 2π Σ |mult|·(clipped length).
pub fn mass(nu: &PolyhedralCurrent, region: &dyn Fn(V3) -> bool) -> f64 {
    2.0 * PI
        * nu
            .segments
            .iter()
            .map(|s| s.mult.unsigned_abs() as f64 * clipped_length(s.a, s.b, region))
            .sum::<f64>()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    pub gamma: f64,
    pub estimate: f64,
    /// Total-variation bound |μ| + |ν|.
    pub estimate_gamma0: f64,
    pub estimate_gamma1: f64,
    pub flux_mass: f64,
    pub nu_mass: f64,
    /// δ·(|μ| + |ν|) from replacing test forms by their cube averages.
    pub mean_value_part: f64,
    /// Σ over faces of exact bounded-Lipschitz distances between cell windings and vortex points.
    pub point_part: f64,
    /// Σ over faces of the sampled test-form residual.
    pub residual_part: f64,
}

/// Distance of the lattice vorticity to ν_ε in the dual of C^{0,γ}. γ = 1 combines the cube
/// mean-value term with exact per-face point distances and the sampled test-form residual;
/// γ < 1 interpolates between the γ = 0 and γ = 1 estimates.
pub fn dual_norm_estimate(field: &LatticeField3, nu: &PolyhedralCurrent, grid: &GridSpec, eps: f64, gamma: f64) -> Result<NormEstimate> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::GammaOutOfRange(gamma));
    }
    let vort = discrete_vorticity(field);
    let fm = flux_mass(field, &vort.fd);
    let nm = nu.total_mass();
    let est0 = fm + nm;
    let step = face_step(field.h, eps);
    let parts: Vec<(f64, f64)> = nu
        .faces
        .par_iter()
        .map(|(f, set)| -> Result<(f64, f64)> {
            let ff = FaceField::from_grid_face(field, grid, *f, step)?;
            let cells = ff.cell_windings();
            let mut pts = vec![];
            let mut masses = vec![];
            for (x, d) in &cells {
                pts.push(*x);
                masses.push(2.0 * PI * *d as f64);
            }
            for c in &set.components {
                if c.degree != 0 {
                    pts.push(c.centroid);
                    masses.push(-2.0 * PI * c.degree as f64);
                }
            }
            let bl = if pts.is_empty() { 0.0 } else { measure_norm(&pts, &masses, 1.0) };
            let family = test_family(ff.extent(), TEST_FAMILY_SIZE, TEST_FAMILY_SEED);
            let res = residual_lower_estimate(&ff, set, &family);
            Ok((bl, res))
        })
        .collect::<Result<Vec<_>>>()?;
    let point_part: f64 = parts.iter().map(|p| p.0).sum();
    let residual_part: f64 = parts.iter().map(|p| p.1).sum();
    let mean_value_part = grid.delta * est0;
    let est1 = mean_value_part + point_part + residual_part;
    let estimate = if gamma == 1.0 {
        est1
    } else if est0 == 0.0 || est1 == 0.0 {
        0.0
    } else {
        est0.powf(1.0 - gamma) * est1.powf(gamma)
    };
    Ok(NormEstimate {
        gamma,
        estimate,
        estimate_gamma0: est0,
        estimate_gamma1: est1,
        flux_mass: fm,
        nu_mass: nm,
        mean_value_part,
        point_part,
        residual_part,
    })
}

/// Symmetric Hausdorff distance between the current's support and a set of polylines, both
/// sampled at spacing ≤ `spacing`.
pub fn hausdorff_to_polylines(nu: &PolyhedralCurrent, lines: &[Vec<V3>], spacing: f64) -> f64 {
    let sample = |a: V3, b: V3| -> Vec<V3> {
        let n = (dist(a, b) / spacing).ceil().max(1.0) as usize;
        (0..=n).map(|i| lerp(a, b, i as f64 / n as f64)).collect()
    };
    let segs: Vec<(V3, V3)> = nu.segments.iter().map(|s| (s.a, s.b)).collect();
    if segs.is_empty() || lines.is_empty() {
        return f64::INFINITY;
    }
    let d_to_nu = |x: V3| segs.iter().map(|(a, b)| point_segment_dist(x, *a, *b)).fold(f64::INFINITY, f64::min);
    let d_to_lines = |x: V3| lines.iter().map(|l| point_polyline_dist(x, l)).fold(f64::INFINITY, f64::min);
    let h1 = segs
        .par_iter()
        .flat_map(|(a, b)| sample(*a, *b))
        .map(d_to_lines)
        .reduce(|| 0.0, f64::max);
    let h2 = lines
        .par_iter()
        .flat_map(|l| l.windows(2).flat_map(|w| sample(w[0], w[1])).collect::<Vec<_>>())
        .map(d_to_nu)
        .reduce(|| 0.0, f64::max);
    h1.max(h2)
}
