//! Max-of-affine potentials ζ extending the matching duals, their boundary variant, point
//! displacement, mollified ζ_λ with derivatives, critical-set diagnostics and polyhedral
//! approximation of a ball boundary.

use crate::geom::*;
use crate::matching::{Connection, MetricTag, SignedConfig};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

// ---------------------------------------------------------------------------
// boundary distance oracles

/// Convex polyhedron ∩_l {z | ⟨z − y_l, ν_l⟩ < 0} built from tangent planes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundaryPolyhedron {
    pub points: Vec<V3>,
    pub normals: Vec<V3>,
    pub tau: f64,
    pub theta: f64,
    /// Points moved by the normal-angle displacement.
    pub displaced: usize,
}

impl BoundaryPolyhedron {
    /// Distance to the polyhedron boundary, positive inside.
    pub fn dist(&self, z: V3) -> f64 {
        self.points
            .iter()
            .zip(&self.normals)
            .map(|(y, n)| dot(sub(*y, z), *n))
            .fold(f64::INFINITY, f64::min)
    }

    fn active(&self, z: V3) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (l, (y, n)) in self.points.iter().zip(&self.normals).enumerate() {
            let d = dot(sub(*y, z), *n);
            if d < best.0 {
                best = (d, l);
            }
        }
        best.1
    }

    pub fn contains(&self, z: V3) -> bool {
        self.dist(z) >= 0.0
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum DistOracle {
    Ball { center: V3, radius: f64 },
    Poly(BoundaryPolyhedron),
}

impl DistOracle {
    pub fn dist(&self, x: V3) -> f64 {
        match self {
            DistOracle::Ball { center, radius } => radius - self::dist(x, *center),
            DistOracle::Poly(p) => p.dist(x),
        }
    }

    pub fn grad(&self, x: V3) -> V3 {
        match self {
            DistOracle::Ball { center, .. } => scale(unit(sub(x, *center)), -1.0),
            DistOracle::Poly(p) => scale(p.normals[p.active(x)], -1.0),
        }
    }
}

/// Geodesically τ-separated, covering set of tangent planes on a ball, with normals displaced
/// so every pair has |ν × ν'| ≥ ϑ and every triple |det| ≥ ϑ², ϑ = 0.1·τ⁵.
pub fn approximate_boundary(domain: &crate::field::Boundary, tau: f64, seed: u64) -> Result<BoundaryPolyhedron> {
    let (center, radius) = match domain {
        crate::field::Boundary::Ball { center, radius } => (*center, *radius),
        crate::field::Boundary::Box => return Err(Error::DomainNotSupported),
    };
    if !(radius > 0.0) {
        return Err(Error::NonConvexDomain(format!("radius {radius}")));
    }
    if !(tau > 0.0 && tau < radius) {
        return Err(Error::ParamsInfeasible(format!("tau {tau} must lie in (0, radius)")));
    }
    // dense Fibonacci candidates, then a greedy maximal τ-separated subset
    let ang = tau / radius;
    let ncand = ((16.0 * PI / (ang * ang)) as usize).max(64);
    let golden = PI * (3.0 - 5f64.sqrt());
    let mut chosen: Vec<V3> = vec![];
    let cos_sep = ang.cos();
    for i in 0..ncand {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / ncand as f64;
        let r = (1.0 - z * z).sqrt();
        let t = golden * i as f64;
        let v = [r * t.cos(), r * t.sin(), z];
        if chosen.iter().all(|c| dot(*c, v) <= cos_sep) {
            chosen.push(v);
        }
    }
    let theta = 0.1 * tau.powi(5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normals: Vec<V3> = vec![];
    let mut displaced = 0;
    for v in chosen {
        let mut cand = v;
        let mut tries = 0;
        while !normal_ok(&normals, cand, theta) {
            tries += 1;
            if tries > 200 {
                return Err(Error::ThetaTooLarge(theta));
            }
            let step = 0.05 * tau / radius;
            let w = [rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5];
            cand = unit(add(v, scale(w, step)));
        }
        if tries > 0 {
            displaced += 1;
        }
        normals.push(cand);
    }
    Ok(BoundaryPolyhedron {
        points: normals.iter().map(|n| add(center, scale(*n, radius))).collect(),
        normals,
        tau,
        theta,
        displaced,
    })
}

fn normal_ok(existing: &[V3], v: V3, theta: f64) -> bool {
    let t2 = theta * theta;
    for (a, na) in existing.iter().enumerate() {
        if norm(cross(*na, v)) < theta {
            return false;
        }
        for nb in &existing[a + 1..] {
            if det3(*na, *nb, v).abs() < t2 {
                return false;
            }
        }
    }
    true
}

// ---------------------------------------------------------------------------
// expression trees and their piecewise-linear restriction to lines

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Expr {
    /// c + ⟨g, x⟩
    Affine { c: f64, g: V3 },
    /// c + s·d(x, ∂Ω)
    Dist { c: f64, s: f64 },
    Max(Vec<Expr>),
    Min(Vec<Expr>),
}

impl Expr {
    /// Value and the gradient of the active branch (smallest index on ties).
    pub fn eval(&self, x: V3, o: Option<&DistOracle>) -> (f64, V3) {
        match self {
            Expr::Affine { c, g } => (c + dot(*g, x), *g),
            Expr::Dist { c, s } => {
                let o = o.expect("distance oracle");
                (c + s * o.dist(x), scale(o.grad(x), *s))
            }
            Expr::Max(v) => {
                let mut best = (f64::NEG_INFINITY, [0.0; 3]);
                for e in v {
                    let r = e.eval(x, o);
                    if r.0 > best.0 {
                        best = r;
                    }
                }
                best
            }
            Expr::Min(v) => {
                let mut best = (f64::INFINITY, [0.0; 3]);
                for e in v {
                    let r = e.eval(x, o);
                    if r.0 < best.0 {
                        best = r;
                    }
                }
                best
            }
        }
    }

    pub fn value(&self, x: V3, o: Option<&DistOracle>) -> f64 {
        match self {
            Expr::Affine { c, g } => c + dot(*g, x),
            Expr::Dist { c, s } => c + s * o.expect("distance oracle").dist(x),
            Expr::Max(v) => v.iter().map(|e| e.value(x, o)).fold(f64::NEG_INFINITY, f64::max),
            Expr::Min(v) => v.iter().map(|e| e.value(x, o)).fold(f64::INFINITY, f64::min),
        }
    }

    /// Restriction to t ↦ x0 + t·e on [−l, l] as a piecewise-linear function.
    pub fn restrict(&self, x0: V3, e: V3, l: f64, o: Option<&DistOracle>) -> Pl {
        match self {
            Expr::Affine { c, g } => Pl::affine(l, c + dot(*g, x0), dot(*g, e), *g),
            Expr::Dist { c, s } => match o.expect("distance oracle") {
                DistOracle::Poly(p) => {
                    let mut f: Option<Pl> = None;
                    for (y, n) in p.points.iter().zip(&p.normals) {
                        // c + s⟨y − x, n⟩
                        let a = Pl::affine(l, c + s * dot(sub(*y, x0), *n), -s * dot(*n, e), scale(*n, -s));
                        f = Some(match f {
                            None => a,
                            Some(f) => {
                                if *s > 0.0 {
                                    f.combine(&a, false)
                                } else {
                                    f.combine(&a, true)
                                }
                            }
                        });
                    }
                    f.unwrap_or_else(|| Pl::affine(l, *c, 0.0, [0.0; 3]))
                }
                ball @ DistOracle::Ball { .. } => {
                    // smooth leaf: interpolate on a fine uniform partition
                    let n = 64;
                    let s_pts: Vec<f64> = (0..=n).map(|i| -l + 2.0 * l * i as f64 / n as f64).collect();
                    let v: Vec<f64> = s_pts.iter().map(|&t| c + s * ball.dist(add(x0, scale(e, t)))).collect();
                    let g: Vec<V3> = s_pts
                        .windows(2)
                        .map(|w| scale(ball.grad(add(x0, scale(e, 0.5 * (w[0] + w[1])))), *s))
                        .collect();
                    Pl { s: s_pts, v, g }
                }
            },
            Expr::Max(v) | Expr::Min(v) => {
                let is_max = matches!(self, Expr::Max(_));
                let mut it = v.iter();
                let mut f = match it.next() {
                    Some(first) => first.restrict(x0, e, l, o),
                    None => return Pl::affine(l, if is_max { f64::NEG_INFINITY } else { f64::INFINITY }, 0.0, [0.0; 3]),
                };
                for child in it {
                    f = f.combine(&child.restrict(x0, e, l, o), is_max);
                }
                f
            }
        }
    }
}

/// Piecewise-linear function on [s₀, s_n] with breakpoints `s`, values `v` at breakpoints and a
/// 3D gradient per segment.
#[derive(Clone, Debug)]
pub struct Pl {
    pub s: Vec<f64>,
    pub v: Vec<f64>,
    pub g: Vec<V3>,
}

impl Pl {
    pub fn affine(l: f64, a: f64, b: f64, g: V3) -> Pl {
        Pl {
            s: vec![-l, l],
            v: vec![a - b * l, a + b * l],
            g: vec![g],
        }
    }

    fn seg(&self, t: f64) -> usize {
        match self.s.partition_point(|&x| x <= t) {
            0 => 0,
            p => (p - 1).min(self.g.len() - 1),
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        let k = self.seg(t);
        let (s0, s1) = (self.s[k], self.s[k + 1]);
        if s1 == s0 {
            return self.v[k];
        }
        self.v[k] + (self.v[k + 1] - self.v[k]) * (t - s0) / (s1 - s0)
    }

    /// Pointwise max (or min) with exact crossing points.
    pub fn combine(&self, o: &Pl, is_max: bool) -> Pl {
        let mut br: Vec<f64> = self.s.iter().chain(&o.s).copied().collect();
        br.sort_by(|a, b| a.partial_cmp(b).unwrap());
        br.dedup();
        let better = |a: f64, b: f64| if is_max { a > b } else { a < b };
        let mut s = vec![br[0]];
        let mut v = vec![];
        let mut g = vec![];
        let first = (self.at(br[0]), o.at(br[0]));
        v.push(if better(first.1, first.0) { first.1 } else { first.0 });
        for w in br.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let (fa, fb) = (self.at(a), self.at(b));
            let (ga, gb) = (o.at(a), o.at(b));
            let (d0, d1) = (fa - ga, fb - gb);
            let mut cuts = vec![a];
            if d0 * d1 < 0.0 {
                let t = a + (b - a) * d0 / (d0 - d1);
                if t > a && t < b {
                    cuts.push(t);
                }
            }
            cuts.push(b);
            for c in cuts.windows(2) {
                let m = 0.5 * (c[0] + c[1]);
                let (fm, gm) = (self.at(m), o.at(m));
                let (grad, pick_o) = if better(gm, fm) { (o.g[o.seg(m)], true) } else { (self.g[self.seg(m)], false) };
                let val_end = if pick_o { o.at(c[1]) } else { self.at(c[1]) };
                // merge with the previous segment when the active gradient is unchanged
                if let Some(last) = g.last() {
                    if *last == grad {
                        *s.last_mut().unwrap() = c[1];
                        *v.last_mut().unwrap() = val_end;
                        continue;
                    }
                }
                s.push(c[1]);
                v.push(val_end);
                g.push(grad);
            }
        }
        Pl { s, v, g }
    }
}

// ---------------------------------------------------------------------------
// exact ζ

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Variant {
    Euclid,
    Boundary(DistOracle),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ZetaExact {
    pub variant: Variant,
    pub config: SignedConfig,
    pub zeta_pos: Vec<f64>,
    pub zeta_neg: Vec<f64>,
    pub expr: Expr,
}

impl ZetaExact {
    fn oracle(&self) -> Option<&DistOracle> {
        match &self.variant {
            Variant::Euclid => None,
            Variant::Boundary(o) => Some(o),
        }
    }

    pub fn value(&self, x: V3) -> f64 {
        self.expr.value(x, self.oracle())
    }

    /// Value and a.e. gradient (active branch, smallest index on ties).
    pub fn eval(&self, x: V3) -> (f64, V3) {
        self.expr.eval(x, self.oracle())
    }

    /// Planes where the pieces of positives i < j with opposite gradients meet, with the
    /// constant value ζ takes on the part of the plane where both are active:
    /// (normal ν, offset ⟨x, ν⟩ on the plane, level).
    pub fn ridge_planes(&self) -> Vec<(V3, f64, f64)> {
        let p = &self.config.pos;
        let z = &self.zeta_pos;
        let mut out = vec![];
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                let d = dist(p[i], p[j]);
                if d == 0.0 {
                    continue;
                }
                let nu = scale(sub(p[i], p[j]), 1.0 / d);
                let off = 0.5 * (z[j] - z[i] + dot(add(p[i], p[j]), nu));
                out.push((nu, off, 0.5 * (z[i] + z[j] - d)));
            }
        }
        out
    }
}

/// Builds ζ from a connection; the connection metric must match the variant.
pub fn build_zeta(conn: &Connection, variant: Variant) -> Result<ZetaExact> {
    let ok = matches!(
        (&variant, conn.metric),
        (Variant::Euclid, MetricTag::Euclid) | (Variant::Boundary(_), MetricTag::DBdry) | (Variant::Boundary(_), MetricTag::DHatBdry)
    );
    if !ok {
        return Err(Error::VariantMismatch);
    }
    Ok(build_zeta_raw(&conn.config, &conn.zeta_pos, &conn.zeta_neg, variant))
}

/// ζ(x) = max_i (ζ*(p_i) − max_j ⟨p_i − x, ν_(i,j)⟩) with ν_(i,j) the unit vector from a_j to p_i
/// over every other configuration point a_j; the boundary variant wraps each piece in the
/// distance terms so that ζ is constant on ∂Ω.
pub fn build_zeta_raw(config: &SignedConfig, zpos: &[f64], zneg: &[f64], variant: Variant) -> ZetaExact {
    let pts = config.points();
    let k = config.k();
    let oracle = match &variant {
        Variant::Euclid => None,
        Variant::Boundary(o) => Some(o),
    };
    let mut outer = vec![];
    for i in 0..k {
        let p = config.pos[i];
        let mut pieces = vec![];
        for (j, &a) in pts.iter().enumerate() {
            if j == i {
                continue;
            }
            let d = dist(p, a);
            if d == 0.0 {
                continue;
            }
            let nu = scale(sub(p, a), 1.0 / d);
            // ζ*_i − ⟨p − x, ν⟩ = (ζ*_i − ⟨p, ν⟩) + ⟨ν, x⟩
            pieces.push(Expr::Affine { c: zpos[i] - dot(p, nu), g: nu });
        }
        let inner = if pieces.is_empty() {
            Expr::Affine { c: zpos[i], g: [0.0; 3] }
        } else {
            Expr::Min(pieces)
        };
        let piece = match oracle {
            None => inner,
            Some(o) => {
                let di = o.dist(p);
                Expr::Max(vec![
                    Expr::Min(vec![inner, Expr::Dist { c: zpos[i] - di, s: 1.0 }]),
                    Expr::Dist { c: zpos[i] - di, s: -1.0 },
                ])
            }
        };
        outer.push(piece);
    }
    let expr = if outer.is_empty() {
        Expr::Affine { c: 0.0, g: [0.0; 3] }
    } else {
        Expr::Max(outer)
    };
    ZetaExact {
        variant,
        config: config.clone(),
        zeta_pos: zpos.to_vec(),
        zeta_neg: zneg.to_vec(),
        expr,
    }
}

// ---------------------------------------------------------------------------
// displacement

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Displacement {
    pub config: SignedConfig,
    pub theta: f64,
    pub diameter: f64,
    /// |a_l − b_l| per point, positives first.
    pub moves: Vec<f64>,
    /// max_l |a_l − b_l| / (D l⁵ ϑ).
    pub c_fit: f64,
    /// ϑ exceeded m⁻⁶ (allowed, reported).
    pub above_theory_threshold: bool,
}

pub const THETA_1: f64 = 0.1;
pub const THETA_3: f64 = 0.1;
/// Displacement budget constant: |a_l − b_l| ≤ DISP_C·D·l⁵·ϑ.
pub const DISP_C: f64 = 12.0;

/// All direction pairs and triples among the points b_0..b_n satisfy the cross and determinant
/// bounds. Triples whose index union has at most three points are necessarily coplanar and
/// are skipped.
pub fn directions_ok(pts: &[V3], theta: f64) -> bool {
    let dirs = directions(pts);
    check_dirs(&dirs, theta, None)
}

fn directions(pts: &[V3]) -> Vec<((usize, usize), V3)> {
    let mut d = vec![];
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            d.push(((i, j), unit(sub(pts[i], pts[j]))));
        }
    }
    d
}

fn union_size(a: (usize, usize), b: (usize, usize), c: (usize, usize)) -> usize {
    let mut v = [a.0, a.1, b.0, b.1, c.0, c.1];
    v.sort();
    let mut n = 1;
    for w in v.windows(2) {
        if w[0] != w[1] {
            n += 1;
        }
    }
    n
}

/// Checks conditions; with `only` = Some(l) only pairs/triples involving point l are tested.
fn check_dirs(dirs: &[((usize, usize), V3)], theta: f64, only: Option<usize>) -> bool {
    let t2 = theta * theta;
    let touches = |p: (usize, usize)| only.is_none_or(|l| p.0 == l || p.1 == l);
    for a in 0..dirs.len() {
        for b in a + 1..dirs.len() {
            if !(touches(dirs[a].0) || touches(dirs[b].0)) {
                continue;
            }
            if norm(cross(dirs[a].1, dirs[b].1)) < theta {
                return false;
            }
        }
    }
    for a in 0..dirs.len() {
        for b in a + 1..dirs.len() {
            for c in b + 1..dirs.len() {
                if !(touches(dirs[a].0) || touches(dirs[b].0) || touches(dirs[c].0)) {
                    continue;
                }
                if union_size(dirs[a].0, dirs[b].0, dirs[c].0) <= 3 {
                    continue;
                }
                if det3(dirs[a].1, dirs[b].1, dirs[c].1).abs() < t2 {
                    return false;
                }
            }
        }
    }
    true
}

/// Sequential displacement: each point in turn (positives then negatives) is kept if it already
/// satisfies the angle conditions against the earlier ones, otherwise replaced by a random point
/// in a ball around it whose radius doubles after every 50 failed draws, up to the budget.
pub fn displace_points(config: &SignedConfig, theta: f64, seed: u64) -> Result<Displacement> {
    if !(theta > 0.0) || theta >= THETA_1.min(THETA_3) {
        return Err(Error::ThetaTooLarge(theta));
    }
    let a = config.points();
    let m = a.len();
    let diam = config.diameter();
    if m >= 2 && diam == 0.0 {
        return Err(Error::ParamsInfeasible("all points coincide".into()));
    }
    // smallest separation among distinct input points; moved points keep at least half of it
    // (capped by the budget) from earlier ones, so later points can still open up the angles
    let mut dmin = f64::INFINITY;
    for i in 0..m {
        for j in i + 1..m {
            let d = dist(a[i], a[j]);
            if d > 0.0 {
                dmin = dmin.min(d);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b: Vec<V3> = vec![];
    let mut moves = vec![];
    for (l0, &al) in a.iter().enumerate() {
        let l = l0 + 1;
        let budget = DISP_C * diam * (l as f64).powi(5) * theta;
        let sep = (0.5 * dmin).min(0.5 * budget);
        let ok = |b: &Vec<V3>, x: V3, sep: f64| {
            if b.iter().any(|y| dist(*y, x) < sep || dist(*y, x) == 0.0) {
                return false;
            }
            let mut pts = b.clone();
            pts.push(x);
            check_dirs(&directions(&pts), theta, Some(pts.len() - 1))
        };
        let mut x = al;
        if !ok(&b, x, 0.0) {
            let mut r = (diam * theta).max(sep);
            let mut found = false;
            'search: loop {
                for _ in 0..50 {
                    let dir = loop {
                        let w = [rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0];
                        let n = norm(w);
                        if n > 1e-3 && n <= 1.0 {
                            break w;
                        }
                    };
                    let cand = add(al, scale(dir, r));
                    if ok(&b, cand, sep) {
                        x = cand;
                        found = true;
                        break 'search;
                    }
                }
                if r >= budget {
                    break;
                }
                r = (2.0 * r).min(budget);
            }
            if !found {
                return Err(Error::ThetaTooLarge(theta));
            }
        }
        moves.push(dist(al, x));
        b.push(x);
    }
    let k = config.k();
    let c_fit = moves
        .iter()
        .enumerate()
        .map(|(i, d)| d / (diam.max(1e-300) * ((i + 1) as f64).powi(5) * theta))
        .fold(0.0, f64::max);
    Ok(Displacement {
        config: SignedConfig::new(b[..k].to_vec(), b[k..].to_vec()),
        theta,
        diameter: diam,
        moves,
        c_fit,
        above_theory_threshold: theta >= (m as f64).powi(-6),
    })
}

// ---------------------------------------------------------------------------
// mollification

/// Quadrature on B(0, λ): lines along a fixed generic direction, indexed by polar nodes on the
/// transverse disk (Gauss in ρ, uniform in angle); along each line the restriction of ζ is split
/// at its kinks and each piece gets `per_segment` Gauss nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadSpec {
    pub radial: usize,
    pub angular: usize,
    pub per_segment: usize,
    /// Fixed equal panels along each line, on top of the kink breakpoints.
    pub panels: usize,
}

impl Default for QuadSpec {
    fn default() -> Self {
        QuadSpec { radial: 7, angular: 16, per_segment: 12, panels: 4 }
    }
}

impl QuadSpec {
    pub fn refined() -> Self {
        QuadSpec { radial: 11, angular: 24, per_segment: 16, panels: 6 }
    }
}

/// Line direction for the quadrature; chosen away from coordinate planes.
pub const LINE_DIR: V3 = [0.3546949, 0.5178627, 0.7784367];

#[derive(Clone, Debug)]
pub struct MollifiedZeta {
    pub base: ZetaExact,
    pub lambda: f64,
    pub rho: f64,
    pub quad: QuadSpec,
    lines: Vec<(V3, f64, f64)>,
    gauss: (Vec<f64>, Vec<f64>),
    frame: [V3; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZetaSample {
    pub value: f64,
    pub grad: V3,
    pub hess: [[f64; 3]; 3],
}

/// Unnormalised bump exp(−1/(1 − r²)) and its radial derivative.
#[inline]
fn bump(r: f64) -> (f64, f64) {
    if r >= 1.0 {
        return (0.0, 0.0);
    }
    let q = 1.0 - r * r;
    let f = (-1.0 / q).exp();
    (f, f * (-2.0 * r / (q * q)))
}

pub fn mollify(base: ZetaExact, lambda: f64, rho: f64) -> MollifiedZeta {
    mollify_with(base, lambda, rho, QuadSpec::default())
}

pub fn mollify_with(base: ZetaExact, lambda: f64, rho: f64, quad: QuadSpec) -> MollifiedZeta {
    let e = unit(LINE_DIR);
    let e1 = unit(cross(e, [1.0, 0.0, 0.0]));
    let e2 = cross(e, e1);
    let (xr, wr) = gauss_legendre(quad.radial);
    let mut lines = vec![];
    for a in 0..quad.radial {
        let rho_ = 0.5 * lambda * (xr[a] + 1.0);
        let w_r = 0.5 * lambda * wr[a] * rho_;
        for b in 0..quad.angular {
            let th = 2.0 * PI * (b as f64 + 0.5) / quad.angular as f64;
            let off = add(scale(e1, rho_ * th.cos()), scale(e2, rho_ * th.sin()));
            lines.push((off, rho_, w_r * 2.0 * PI / quad.angular as f64));
        }
    }
    MollifiedZeta {
        base,
        lambda,
        rho,
        quad,
        lines,
        gauss: gauss_legendre(quad.per_segment),
        frame: [e1, e2, e],
    }
}

impl MollifiedZeta {
    pub fn sample(&self, x: V3) -> ZetaSample {
        let lam = self.lambda;
        let e = self.frame[2];
        let o = self.base.oracle();
        let (gx, gw) = (&self.gauss.0, &self.gauss.1);
        let mut mass = 0.0;
        let mut val = 0.0;
        let mut grad = [0.0; 3];
        let mut hess = [[0.0; 3]; 3];
        for &(off, rho_, wl) in &self.lines {
            let l = (lam * lam - rho_ * rho_).max(0.0).sqrt();
            if l == 0.0 {
                continue;
            }
            // points x − y with y = off + t·e, so along the line z(t) = (x − off) − t·e; use
            // s = −t and z = x0 + s·e
            let x0 = sub(x, off);
            let f = self.base.expr.restrict(x0, e, l, o);
            let np = self.quad.panels.max(1);
            let mut cuts: Vec<f64> = (0..=np).map(|i| -l + 2.0 * l * i as f64 / np as f64).collect();
            cuts.extend_from_slice(&f.s[1..f.s.len() - 1]);
            cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for w in cuts.windows(2) {
                let (a, b) = (w[0], w[1]);
                if b <= a {
                    continue;
                }
                let k = f.seg(0.5 * (a + b));
                let (sa, sb) = (f.s[k], f.s[k + 1]);
                let half = 0.5 * (b - a);
                for q in 0..gx.len() {
                    let s = a + half * (gx[q] + 1.0);
                    let w = wl * half * gw[q];
                    // y = x − z = off − s·e
                    let y = sub(off, scale(e, s));
                    let r = norm(y) / lam;
                    let (phi, dphi) = bump(r);
                    if phi == 0.0 {
                        continue;
                    }
                    let zv = f.v[k] + (f.v[k + 1] - f.v[k]) * (s - sa) / (sb - sa);
                    let gz = f.g[k];
                    mass += w * phi;
                    val += w * phi * zv;
                    grad = add(grad, scale(gz, w * phi));
                    // ∇_y φ(|y|/λ) = φ'(r)/λ · ŷ
                    let ny = norm(y);
                    if ny > 0.0 {
                        let gphi = scale(y, dphi / (lam * ny));
                        for i in 0..3 {
                            for j in 0..3 {
                                hess[i][j] += w * gphi[i] * gz[j];
                            }
                        }
                    }
                }
            }
        }
        let inv = 1.0 / mass;
        let mut h = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                h[i][j] = 0.5 * (hess[i][j] + hess[j][i]) * inv;
            }
        }
        ZetaSample {
            value: val * inv,
            grad: scale(grad, inv),
            hess: h,
        }
    }

    pub fn value(&self, x: V3) -> f64 {
        self.sample(x).value
    }
}

// ---------------------------------------------------------------------------
// critical set

/// Sorted, merged union of closed intervals and its total length.
pub fn merge_intervals(mut iv: Vec<(f64, f64)>) -> (Vec<(f64, f64)>, f64) {
    iv.retain(|(a, b)| b >= a);
    iv.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out: Vec<(f64, f64)> = vec![];
    for (a, b) in iv {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    let m = out.iter().map(|(a, b)| b - a).sum();
    (out, m)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriticalReport {
    pub kappa: f64,
    pub samples: usize,
    pub bad_points: Vec<V3>,
    pub cover_radius: f64,
    pub cover_centers: Vec<V3>,
    pub budget: f64,
    /// Level values ζ_λ of the cover balls (as intervals).
    pub t_kappa: Vec<(f64, f64)>,
    /// Level values of the ridge slabs.
    pub p_levels: Vec<(f64, f64)>,
    pub excluded: Vec<(f64, f64)>,
    pub excluded_measure: f64,
    pub p_levels_measure: f64,
    pub min_grad: f64,
}

/// Samples |∇ζ_λ| on an n³ lattice over the box [lo, hi], drops samples near the ridge slabs,
/// greedily covers the rest with balls of radius λ/(λ^{2ρ} − 3κ) and reports the excluded level
/// sets.
pub fn critical_set_probe(mz: &MollifiedZeta, kappa: f64, lo: V3, hi: V3, n: usize) -> Result<CriticalReport> {
    let lam = mz.lambda;
    let limit = lam.powf(2.0 * mz.rho) / 3.0;
    if kappa >= limit {
        return Err(Error::KappaTooLarge { kappa, limit });
    }
    let ridges = mz.base.ridge_planes();
    let pts: Vec<V3> = (0..n * n * n)
        .map(|i| {
            let c = [i % n, (i / n) % n, i / (n * n)];
            let t = |a: usize| if n == 1 { 0.5 } else { c[a] as f64 / (n - 1) as f64 };
            [lo[0] + t(0) * (hi[0] - lo[0]), lo[1] + t(1) * (hi[1] - lo[1]), lo[2] + t(2) * (hi[2] - lo[2])]
        })
        .collect();
    let evals: Vec<(f64, f64)> = pts
        .par_iter()
        .map(|&x| {
            let s = mz.sample(x);
            (norm(s.grad), s.value)
        })
        .collect();
    let min_grad = evals.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
    let near_ridge = |x: V3| {
        ridges.iter().any(|(nu, off, c)| (dot(x, *nu) - off).abs() <= 2.0 * lam && (mz.base.value(x) - c).abs() <= 2.0 * lam)
    };
    let bad: Vec<(V3, f64)> = pts
        .iter()
        .zip(&evals)
        .filter(|(x, e)| e.0 < kappa && !near_ridge(**x))
        .map(|(x, e)| (*x, e.1))
        .collect();
    let radius = lam / (lam.powf(2.0 * mz.rho) - 3.0 * kappa);
    let mut centers: Vec<(V3, f64)> = vec![];
    for (x, v) in &bad {
        if !centers.iter().any(|(c, _)| dist(*c, *x) <= radius) {
            centers.push((*x, *v));
        }
    }
    let t_kappa: Vec<(f64, f64)> = centers.iter().map(|(_, v)| (v - radius, v + radius)).collect();
    let p_levels: Vec<(f64, f64)> = ridges.iter().map(|(_, _, c)| (c - 3.0 * lam, c + 3.0 * lam)).collect();
    let (_, p_meas) = merge_intervals(p_levels.clone());
    let (excluded, meas) = merge_intervals(t_kappa.iter().chain(&p_levels).copied().collect());
    let k = mz.base.config.k() as f64;
    Ok(CriticalReport {
        kappa,
        samples: pts.len(),
        bad_points: bad.iter().map(|b| b.0).collect(),
        cover_radius: radius,
        cover_centers: centers.iter().map(|c| c.0).collect(),
        budget: (2.0 * k).powi(8),
        t_kappa,
        p_levels,
        excluded,
        excluded_measure: meas,
        p_levels_measure: p_meas,
        min_grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Boundary;
    use crate::matching::{connect_euclidean, connect_through_boundary, Ball};

    fn rand_pts(rng: &mut ChaCha8Rng, n: usize, r: f64) -> Vec<V3> {
        (0..n)
            .map(|_| loop {
                let v = [rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0];
                if norm(v) < 1.0 {
                    break scale(v, r);
                }
            })
            .collect()
    }

    #[test]
    fn dipole_values() {
        let c = SignedConfig::new(vec![[0.0; 3]], vec![[1.0, 0.0, 0.0]]);
        let con = connect_euclidean(&c).unwrap();
        // shift potentials so ζ*(p) = 0
        let sh = con.zeta_pos[0];
        let z = build_zeta_raw(&c, &[0.0], &[con.zeta_neg[0] - sh], Variant::Euclid);
        assert_eq!(z.value([0.0; 3]), 0.0);
        assert_eq!(z.value([1.0, 0.0, 0.0]), -1.0);
    }

    #[test]
    fn extension_and_lipschitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for k in 1..=4 {
            let c = SignedConfig::new(rand_pts(&mut rng, k, 1.0), rand_pts(&mut rng, k, 1.0));
            let con = connect_euclidean(&c).unwrap();
            let z = build_zeta(&con, Variant::Euclid).unwrap();
            for i in 0..k {
                assert!((z.value(c.pos[i]) - con.zeta_pos[i]).abs() < 1e-12);
                assert!((z.value(c.neg[i]) - con.zeta_neg[i]).abs() < 1e-12);
            }
            for _ in 0..2000 {
                let p = rand_pts(&mut rng, 2, 1.5);
                assert!((z.value(p[0]) - z.value(p[1])).abs() <= dist(p[0], p[1]) + 1e-12);
            }
        }
    }

    #[test]
    fn boundary_variant_constant_on_sphere() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ball = Ball { center: [0.0; 3], radius: 1.0 };
        let c = SignedConfig::new(rand_pts(&mut rng, 3, 0.9), rand_pts(&mut rng, 3, 0.9));
        let con = connect_through_boundary(&c, &ball).unwrap();
        let z = build_zeta(&con, Variant::Boundary(DistOracle::Ball { center: [0.0; 3], radius: 1.0 })).unwrap();
        let v0 = z.value([1.0, 0.0, 0.0]);
        for _ in 0..100 {
            let p = unit(rand_pts(&mut rng, 1, 1.0)[0]);
            assert!((z.value(p) - v0).abs() < 1e-12);
        }
        for i in 0..3 {
            assert!((z.value(c.pos[i]) - con.zeta_pos[i]).abs() < 1e-12);
            assert!((z.value(c.neg[i]) - con.zeta_neg[i]).abs() < 1e-12);
        }
        assert!(matches!(build_zeta(&con, Variant::Euclid), Err(Error::VariantMismatch)));
    }

    #[test]
    fn pl_combine_exact() {
        let f = Pl::affine(1.0, 0.0, 1.0, [1.0, 0.0, 0.0]);
        let g = Pl::affine(1.0, 0.0, -1.0, [-1.0, 0.0, 0.0]);
        let m = f.combine(&g, true);
        assert_eq!(m.s, vec![-1.0, 0.0, 1.0]);
        assert_eq!(m.v, vec![1.0, 0.0, 1.0]);
        let n = f.combine(&g, false);
        assert_eq!(n.v, vec![-1.0, 0.0, -1.0]);
    }

    #[test]
    fn line_restriction_matches_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = SignedConfig::new(rand_pts(&mut rng, 3, 1.0), rand_pts(&mut rng, 3, 1.0));
        let con = connect_euclidean(&c).unwrap();
        let z = build_zeta(&con, Variant::Euclid).unwrap();
        let x0 = [0.1, -0.2, 0.3];
        let e = unit([0.3, 0.2, -0.9]);
        let f = z.expr.restrict(x0, e, 0.7, None);
        for i in 0..=100 {
            let t = -0.7 + 1.4 * i as f64 / 100.0;
            assert!((f.at(t) - z.value(add(x0, scale(e, t)))).abs() < 1e-12);
        }
    }

    #[test]
    fn displacement_collinear_and_repeated() {
        let c = SignedConfig::new(vec![[0.0; 3], [2.0, 0.0, 0.0]], vec![[1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        let d = displace_points(&c, 1e-4, 1).unwrap();
        assert!(directions_ok(&d.config.points(), 1e-4));
        let c = SignedConfig::new(vec![[0.0; 3], [0.0; 3], [1.0, 1.0, 0.0]], vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.5, 0.5, 0.5]]);
        let d = displace_points(&c, 1e-4, 1).unwrap();
        let p = d.config.points();
        for i in 0..6 {
            for j in i + 1..6 {
                assert!(dist(p[i], p[j]) > 0.0);
            }
        }
        for (l, m) in d.moves.iter().enumerate() {
            assert!(*m <= DISP_C * d.diameter * ((l + 1) as f64).powi(5) * 1e-4);
        }
        let two = SignedConfig::new(vec![[0.0; 3]], vec![[1.0, 2.0, 3.0]]);
        let d = displace_points(&two, 1e-3, 1).unwrap();
        assert_eq!(d.config, two);
        assert!(matches!(displace_points(&two, 0.2, 1), Err(Error::ThetaTooLarge(_))));
    }

    fn fixture(seed: u64, k: usize) -> ZetaExact {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = SignedConfig::new(rand_pts(&mut rng, k, 0.5), rand_pts(&mut rng, k, 0.5));
        let con = connect_euclidean(&c).unwrap();
        build_zeta(&con, Variant::Euclid).unwrap()
    }

    #[test]
    fn mollified_bounds_and_fd() {
        let z = fixture(6, 2);
        let lam = 0.05;
        let mz = mollify(z.clone(), lam, 6.0 / 21.0);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut worst: f64 = 0.0;
        for x in rand_pts(&mut rng, 100, 0.6) {
            let s = mz.sample(x);
            assert!((s.value - z.value(x)).abs() <= lam);
            assert!(norm(s.grad) <= 1.0 + 1e-6);
            // small step isolates the gradient/value consistency from FD truncation near ridges
            let h = lam / 1000.0;
            for a in 0..3 {
                let mut xp = x;
                let mut xm = x;
                xp[a] += h;
                xm[a] -= h;
                let fd = (mz.value(xp) - mz.value(xm)) / (2.0 * h);
                worst = worst.max((fd - s.grad[a]).abs() / norm(s.grad).max(1.0));
            }
        }
        assert!(worst < 1e-5, "{worst}");
    }

    #[test]
    fn quadrature_refinement_drift() {
        let z = fixture(8, 2);
        let lam = 0.05;
        let a = mollify_with(z.clone(), lam, 0.3, QuadSpec::default());
        let b = mollify_with(z, lam, 0.3, QuadSpec::refined());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut worst: f64 = 0.0;
        for x in rand_pts(&mut rng, 50, 0.6) {
            let (va, vb) = (a.value(x), b.value(x));
            worst = worst.max((va - vb).abs() / vb.abs().max(1.0));
        }
        assert!(worst < 1e-5, "{worst}");
    }

    #[test]
    fn dipole_bad_set_in_slab() {
        // two positives so a ridge plane exists, negatives far out
        let c = SignedConfig::new(vec![[-0.3, 0.0, 0.0], [0.3, 0.01, 0.0]], vec![[-0.3, 0.8, 0.1], [0.3, -0.8, -0.1]]);
        let con = connect_euclidean(&c).unwrap();
        let z = build_zeta(&con, Variant::Euclid).unwrap();
        let mz = mollify(z, 0.05, 6.0 / 21.0);
        let kappa = 0.05f64.powf(12.0 / 21.0) / 6.0;
        let r = critical_set_probe(&mz, kappa, [-0.5; 3], [0.5; 3], 12).unwrap();
        assert!(r.cover_centers.len() as f64 <= r.budget);
        assert!(r.p_levels_measure <= 2.0 * 0.05 * 4.0 + 1e-12);
        assert!(matches!(critical_set_probe(&mz, 1.0, [0.0; 3], [1.0; 3], 2), Err(Error::KappaTooLarge { .. })));
    }

    #[test]
    fn polyhedron_quadratic() {
        let ball = Boundary::Ball { center: [0.0; 3], radius: 1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let probes = rand_pts(&mut rng, 1000, 1.0);
        for tau in [0.3, 0.15] {
            let p = approximate_boundary(&ball, tau, 1).unwrap();
            let mut worst: f64 = 0.0;
            for z in &probes {
                assert!(p.contains(*z));
                worst = worst.max((p.dist(*z) - (1.0 - norm(*z))).abs());
            }
            assert!(worst <= 5.0 * tau * tau, "{tau} {worst}");
            assert!((p.points.len() as f64) <= 10.0 / (tau * tau));
        }
        assert!(matches!(approximate_boundary(&Boundary::Box, 0.2, 1), Err(Error::DomainNotSupported)));
    }
}
