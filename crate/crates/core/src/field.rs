//! Lattice samples of (u, A), energies, plaquette vorticity and synthetic fixtures.

use crate::geom::*;
use crate::{Error, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{Read, Write};

/// Analytic description of Ω used for distances and boundary projections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Boundary {
    /// Ω is the lattice bounding box.
    Box,
    Ball { center: V3, radius: f64 },
}

#[derive(Clone, Debug)]
pub struct LatticeField3 {
    pub dims: [usize; 3],
    pub h: f64,
    pub origin: V3,
    pub u: Vec<C64>,
    pub a: Option<Vec<V3>>,
    pub mask: Option<Vec<bool>>,
    pub boundary: Boundary,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub f_eps: f64,
    pub e_eps: f64,
    pub gl_eps_excess: Option<f64>,
    pub region_volume: f64,
}

/// Plaquette 2-form samples. Index `[axis][base node]`; the plaquette spans the two
/// axes cyclically following `axis` and carries flux along `+axis`.
#[derive(Clone, Debug)]
pub struct Vorticity {
    pub dims: [usize; 3],
    pub fd: [Vec<f64>; 3],
    pub winding: [Vec<Option<f64>>; 3],
}

pub const PLAQ_AXES: [(usize, usize); 3] = [(1, 2), (2, 0), (0, 1)];

impl LatticeField3 {
    pub fn new(dims: [usize; 3], h: f64, origin: V3, u: Vec<C64>) -> Result<Self> {
        let f = LatticeField3 {
            dims,
            h,
            origin,
            u,
            a: None,
            mask: None,
            boundary: Boundary::Box,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn from_fn(dims: [usize; 3], h: f64, origin: V3, f: impl Fn(V3) -> C64 + Sync) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        let u = (0..n)
            .into_par_iter()
            .map(|i| {
                let [x, y, z] = unflat(dims, i);
                f(add(origin, [x as f64 * h, y as f64 * h, z as f64 * h]))
            })
            .collect();
        LatticeField3 {
            dims,
            h,
            origin,
            u,
            a: None,
            mask: None,
            boundary: Boundary::Box,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 2) {
            return Err(Error::Format(format!("dims {:?} must be >= 2", self.dims)));
        }
        if !(self.h > 0.0) {
            return Err(Error::Format("spacing must be positive".into()));
        }
        let n = self.len();
        if self.u.len() != n
            || self.a.as_ref().is_some_and(|a| a.len() != n)
            || self.mask.as_ref().is_some_and(|m| m.len() != n)
        {
            return Err(Error::Format("sample count does not match dims".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        unflat(self.dims, idx)
    }

    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        match axis {
            0 => 1,
            1 => self.dims[0],
            _ => self.dims[0] * self.dims[1],
        }
    }

    #[inline]
    pub fn pos(&self, idx: usize) -> V3 {
        let c = self.coords(idx);
        [
            self.origin[0] + c[0] as f64 * self.h,
            self.origin[1] + c[1] as f64 * self.h,
            self.origin[2] + c[2] as f64 * self.h,
        ]
    }

    pub fn lo(&self) -> V3 {
        self.origin
    }

    pub fn hi(&self) -> V3 {
        [
            self.origin[0] + (self.dims[0] - 1) as f64 * self.h,
            self.origin[1] + (self.dims[1] - 1) as f64 * self.h,
            self.origin[2] + (self.dims[2] - 1) as f64 * self.h,
        ]
    }

    #[inline]
    pub fn in_mask(&self, idx: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[idx])
    }

    #[inline]
    pub fn a_at(&self, idx: usize) -> V3 {
        self.a.as_ref().map_or([0.0; 3], |a| a[idx])
    }

    /// Signed distance to ∂Ω, positive inside.
    pub fn signed_dist(&self, x: V3) -> f64 {
        match &self.boundary {
            Boundary::Box => {
                let (lo, hi) = (self.lo(), self.hi());
                (0..3)
                    .map(|a| (x[a] - lo[a]).min(hi[a] - x[a]))
                    .fold(f64::INFINITY, f64::min)
            }
            Boundary::Ball { center, radius } => radius - dist(x, *center),
        }
    }

    /// Closest point of ∂Ω to an interior point.
    pub fn boundary_point(&self, x: V3) -> V3 {
        match &self.boundary {
            Boundary::Box => {
                let (lo, hi) = (self.lo(), self.hi());
                let mut best = (f64::INFINITY, 0, 0.0);
                for a in 0..3 {
                    if x[a] - lo[a] < best.0 {
                        best = (x[a] - lo[a], a, lo[a]);
                    }
                    if hi[a] - x[a] < best.0 {
                        best = (hi[a] - x[a], a, hi[a]);
                    }
                }
                let mut y = x;
                y[best.1] = best.2;
                y
            }
            Boundary::Ball { center, radius } => {
                let d = sub(x, *center);
                let n = norm(d);
                if n == 0.0 {
                    add(*center, [*radius, 0.0, 0.0])
                } else {
                    add(*center, scale(d, radius / n))
                }
            }
        }
    }

    /// Lattice cell containing `x` and local coordinates, if `x` lies in the lattice box.
    pub fn locate(&self, x: V3) -> Option<([usize; 3], V3)> {
        let mut c = [0usize; 3];
        let mut t = [0.0; 3];
        for a in 0..3 {
            let s = (x[a] - self.origin[a]) / self.h;
            let n = (self.dims[a] - 1) as f64;
            if !(s >= -1e-9 && s <= n + 1e-9) {
                return None;
            }
            let s = s.clamp(0.0, n);
            let i = (s.floor() as usize).min(self.dims[a] - 2);
            c[a] = i;
            t[a] = s - i as f64;
        }
        Some((c, t))
    }

    fn corners(&self, c: [usize; 3]) -> [usize; 8] {
        let b = self.idx(c[0], c[1], c[2]);
        let (sx, sy, sz) = (1, self.dims[0], self.dims[0] * self.dims[1]);
        [
            b,
            b + sx,
            b + sy,
            b + sx + sy,
            b + sz,
            b + sx + sz,
            b + sy + sz,
            b + sx + sy + sz,
        ]
    }

    fn tri_weights(t: V3) -> [f64; 8] {
        let (x, y, z) = (t[0], t[1], t[2]);
        [
            (1.0 - x) * (1.0 - y) * (1.0 - z),
            x * (1.0 - y) * (1.0 - z),
            (1.0 - x) * y * (1.0 - z),
            x * y * (1.0 - z),
            (1.0 - x) * (1.0 - y) * z,
            x * (1.0 - y) * z,
            (1.0 - x) * y * z,
            x * y * z,
        ]
    }

    /// Trilinear interpolation of u and A. None outside the lattice or when a needed
    /// corner is masked out.
    pub fn sample(&self, x: V3) -> Option<(C64, V3)> {
        let (c, t) = self.locate(x)?;
        let ids = self.corners(c);
        if ids.iter().any(|&i| !self.in_mask(i)) {
            return None;
        }
        let w = Self::tri_weights(t);
        let mut u = C64::new(0.0, 0.0);
        let mut a = [0.0; 3];
        for q in 0..8 {
            u += self.u[ids[q]] * w[q];
            if self.a.is_some() {
                a = add(a, scale(self.a_at(ids[q]), w[q]));
            }
        }
        Some((u, a))
    }

    /// Trilinear interpolation of a nodal scalar array with the same layout.
    pub fn interp_scalar(&self, vals: &[f64], x: V3) -> Option<f64> {
        let (c, t) = self.locate(x)?;
        let ids = self.corners(c);
        if ids.iter().any(|&i| !self.in_mask(i)) {
            return None;
        }
        let w = Self::tri_weights(t);
        Some((0..8).map(|q| vals[ids[q]] * w[q]).sum())
    }

    /// Neighbour along `axis` in direction `dir` (+1/-1), if inside the lattice.
    #[inline]
    fn nb(&self, idx: usize, c: [usize; 3], axis: usize, dir: i32) -> Option<usize> {
        if dir > 0 {
            (c[axis] + 1 < self.dims[axis]).then(|| idx + self.stride(axis))
        } else {
            (c[axis] > 0).then(|| idx - self.stride(axis))
        }
    }

    /// Link phase h·avg(A)·e_axis for the edge from `i` to its +axis neighbour `j`.
    #[inline]
    fn link(&self, i: usize, j: usize, axis: usize) -> f64 {
        match &self.a {
            None => 0.0,
            Some(a) => 0.5 * self.h * (a[i][axis] + a[j][axis]),
        }
    }

    /// Covariant derivative along `axis` at `idx`, restricted to nodes accepted by `valid`.
    /// Centered when both neighbours are valid, one-sided otherwise. With `use_a` false
    /// the plain gradient is returned.
    fn cov_deriv(&self, idx: usize, axis: usize, valid: &(dyn Fn(usize) -> bool + Sync), use_a: bool) -> C64 {
        let c = self.coords(idx);
        let p = self.nb(idx, c, axis, 1).filter(|&j| valid(j));
        let m = self.nb(idx, c, axis, -1).filter(|&j| valid(j));
        let h = self.h;
        let fwd = |j: usize| {
            let th = if use_a { self.link(idx, j, axis) } else { 0.0 };
            self.u[j] * C64::from_polar(1.0, -th)
        };
        let bwd = |j: usize| {
            let th = if use_a { self.link(j, idx, axis) } else { 0.0 };
            self.u[j] * C64::from_polar(1.0, th)
        };
        match (p, m) {
            (Some(p), Some(m)) => (fwd(p) - bwd(m)) / (2.0 * h),
            (Some(p), None) => (fwd(p) - self.u[idx]) / h,
            (None, Some(m)) => (self.u[idx] - bwd(m)) / h,
            (None, None) => C64::new(0.0, 0.0),
        }
    }

    /// Centered difference of u along `axis` (one-sided at the lattice edge), with link phases
    /// when `use_a` is set.
    pub fn derivative(&self, idx: usize, axis: usize, use_a: bool) -> C64 {
        self.cov_deriv(idx, axis, &|i| self.in_mask(i), use_a)
    }

    fn real_deriv(&self, idx: usize, axis: usize, comp: usize, valid: &(dyn Fn(usize) -> bool + Sync)) -> f64 {
        let a = match &self.a {
            None => return 0.0,
            Some(a) => a,
        };
        let c = self.coords(idx);
        let p = self.nb(idx, c, axis, 1).filter(|&j| valid(j));
        let m = self.nb(idx, c, axis, -1).filter(|&j| valid(j));
        match (p, m) {
            (Some(p), Some(m)) => (a[p][comp] - a[m][comp]) / (2.0 * self.h),
            (Some(p), None) => (a[p][comp] - a[idx][comp]) / self.h,
            (None, Some(m)) => (a[idx][comp] - a[m][comp]) / self.h,
            (None, None) => 0.0,
        }
    }

    /// Nodal energy densities (F-density, E-density) with stencils restricted to `valid`.
    pub fn densities(&self, eps: f64, valid: &(dyn Fn(usize) -> bool + Sync)) -> (Vec<f64>, Vec<f64>) {
        let pot = 1.0 / (4.0 * eps * eps);
        (0..self.len())
            .into_par_iter()
            .map(|i| {
                if !valid(i) {
                    return (0.0, 0.0);
                }
                let m2 = self.u[i].norm_sqr();
                let v = pot * (1.0 - m2) * (1.0 - m2);
                let mut gf = 0.0;
                let mut ge = 0.0;
                for ax in 0..3 {
                    ge += self.cov_deriv(i, ax, valid, false).norm_sqr();
                    if self.a.is_some() {
                        gf += self.cov_deriv(i, ax, valid, true).norm_sqr();
                    }
                }
                if self.a.is_none() {
                    gf = ge;
                }
                let mut curl2 = 0.0;
                if self.a.is_some() {
                    for (b, c) in PLAQ_AXES {
                        let w = self.real_deriv(i, b, c, valid) - self.real_deriv(i, c, b, valid);
                        curl2 += w * w;
                    }
                }
                (0.5 * gf + v + 0.5 * curl2, 0.5 * ge + v)
            })
            .unzip()
    }

    /// Quadrature weight of a node: h³/8 per lattice cell touching it.
    #[inline]
    pub fn node_weight(&self, idx: usize) -> f64 {
        let c = self.coords(idx);
        let mut cells = 1usize;
        for a in 0..3 {
            let inner = c[a] > 0 && c[a] + 1 < self.dims[a];
            cells *= if inner { 2 } else { 1 };
        }
        self.h.powi(3) * cells as f64 / 8.0
    }

    /// Nodal current j + A with j = Im(conj(u)·∇_A u), using mask-restricted stencils.
    pub fn supercurrent_plus_a(&self) -> Vec<V3> {
        let valid = |i: usize| self.in_mask(i);
        (0..self.len())
            .into_par_iter()
            .map(|i| {
                if !valid(i) {
                    return [0.0; 3];
                }
                let mut j = [0.0; 3];
                for (ax, jx) in j.iter_mut().enumerate() {
                    let d = self.cov_deriv(i, ax, &valid, true);
                    *jx = (self.u[i].conj() * d).im + self.a_at(i)[ax];
                }
                j
            })
            .collect()
    }

    /// Base nodes and corner ids of the plaquette at `base` normal to `axis`, or None
    /// if it leaves the lattice.
    pub fn plaquette(&self, base: usize, axis: usize) -> Option<[usize; 4]> {
        let (b, c) = PLAQ_AXES[axis];
        let co = self.coords(base);
        if co[b] + 1 >= self.dims[b] || co[c] + 1 >= self.dims[c] {
            return None;
        }
        let (sb, sc) = (self.stride(b), self.stride(c));
        Some([base, base + sb, base + sb + sc, base + sc])
    }

    /// Gauge-invariant plaquette winding: Σ arg(u_b ū_a e^{-iθ}) + Σ θ over the loop.
    pub fn winding_plaquette(&self, base: usize, axis: usize) -> Result<f64> {
        let ids = self.plaquette(base, axis).ok_or(Error::EmptyRegion)?;
        for &i in &ids {
            if self.u[i].norm_sqr() == 0.0 {
                return Err(Error::ZeroModulus(i));
            }
        }
        let (b, c) = PLAQ_AXES[axis];
        // edges as (from, to, forward-node, axis, sign)
        let edges = [
            (ids[0], ids[1], b, 1.0),
            (ids[1], ids[2], c, 1.0),
            (ids[2], ids[3], b, -1.0),
            (ids[3], ids[0], c, -1.0),
        ];
        let mut w = 0.0;
        for (from, to, ax, s) in edges {
            let th = if s > 0.0 {
                self.link(from, to, ax)
            } else {
                -self.link(to, from, ax)
            };
            w += (self.u[to] * self.u[from].conj() * C64::from_polar(1.0, -th)).arg() + th;
        }
        Ok(w)
    }
}

#[inline]
pub fn unflat(dims: [usize; 3], i: usize) -> [usize; 3] {
    [i % dims[0], (i / dims[0]) % dims[1], i / (dims[0] * dims[1])]
}

/// Energies over the nodes selected by `region` (intersected with the mask).
pub fn energy(field: &LatticeField3, eps: f64, region: &(dyn Fn(usize) -> bool + Sync)) -> Result<EnergyReport> {
    if !(eps > 0.0) {
        return Err(Error::ParamsInfeasible("eps must be positive".into()));
    }
    let valid = |i: usize| field.in_mask(i) && region(i);
    let (fd, ed) = field.densities(eps, &valid);
    let mut rep = EnergyReport {
        f_eps: 0.0,
        e_eps: 0.0,
        gl_eps_excess: None,
        region_volume: 0.0,
    };
    let mut any = false;
    for i in 0..field.len() {
        if valid(i) {
            any = true;
            let w = field.node_weight(i);
            rep.f_eps += w * fd[i];
            rep.e_eps += w * ed[i];
            rep.region_volume += w;
        }
    }
    if !any {
        return Err(Error::EmptyRegion);
    }
    Ok(rep)
}

/// Both plaquette estimators for every admissible plaquette.
pub fn discrete_vorticity(field: &LatticeField3) -> Vorticity {
    let jt = field.supercurrent_plus_a();
    let h = field.h;
    let mk = |axis: usize| -> (Vec<f64>, Vec<Option<f64>>) {
        let (b, c) = PLAQ_AXES[axis];
        (0..field.len())
            .into_par_iter()
            .map(|base| {
                let ids = match field.plaquette(base, axis) {
                    Some(ids) if ids.iter().all(|&i| field.in_mask(i)) => ids,
                    _ => return (0.0, None),
                };
                let e = |p: usize, q: usize, ax: usize| 0.5 * h * (jt[p][ax] + jt[q][ax]);
                let fd = e(ids[0], ids[1], b) + e(ids[1], ids[2], c) - e(ids[3], ids[2], b) - e(ids[0], ids[3], c);
                (fd, field.winding_plaquette(base, axis).ok())
            })
            .unzip()
    };
    let (f0, w0) = mk(0);
    let (f1, w1) = mk(1);
    let (f2, w2) = mk(2);
    Vorticity {
        dims: field.dims,
        fd: [f0, f1, f2],
        winding: [w0, w1, w2],
    }
}

impl Vorticity {
    /// Winding samples with inadmissible plaquettes set to zero.
    pub fn winding_or_zero(&self) -> [Vec<f64>; 3] {
        let f = |a: usize| self.winding[a].iter().map(|w| w.unwrap_or(0.0)).collect();
        [f(0), f(1), f(2)]
    }
}

/// Total variation of a plaquette 2-form viewed as a vector measure: per lattice cell the
/// two opposite faces of each axis are averaged and the Euclidean norm is weighted by h.
pub fn flux_mass(field: &LatticeField3, plaq: &[Vec<f64>; 3]) -> f64 {
    flux_mass_where(field, plaq, &|_| true)
}

/// As `flux_mass`, restricted to cells whose base node passes `cell`.
pub fn flux_mass_where(field: &LatticeField3, plaq: &[Vec<f64>; 3], cell: &(dyn Fn(usize) -> bool + Sync)) -> f64 {
    let d = field.dims;
    (0..field.len())
        .into_par_iter()
        .filter(|&i| {
            let c = field.coords(i);
            c[0] + 1 < d[0] && c[1] + 1 < d[1] && c[2] + 1 < d[2] && cell(i)
        })
        .map(|i| {
            let mut v = [0.0; 3];
            for (a, va) in v.iter_mut().enumerate() {
                *va = 0.5 * (plaq[a][i] + plaq[a][i + field.stride(a)]);
            }
            field.h * norm(v)
        })
        .sum()
}

// ---------------------------------------------------------------------------
// GLF3 binary format

const MAGIC: &[u8; 4] = b"GLF3";

pub fn write_glf3(field: &LatticeField3, w: &mut impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(1)?;
    for d in field.dims {
        w.write_u32::<LittleEndian>(d as u32)?;
    }
    w.write_f64::<LittleEndian>(field.h)?;
    for o in field.origin {
        w.write_f64::<LittleEndian>(o)?;
    }
    w.write_u8(field.a.is_some() as u8)?;
    w.write_u8(field.mask.is_some() as u8)?;
    for z in &field.u {
        w.write_f32::<LittleEndian>(z.re as f32)?;
        w.write_f32::<LittleEndian>(z.im as f32)?;
    }
    if let Some(a) = &field.a {
        for v in a {
            for c in v {
                w.write_f32::<LittleEndian>(*c as f32)?;
            }
        }
    }
    if let Some(m) = &field.mask {
        for &b in m {
            w.write_u8(b as u8)?;
        }
    }
    Ok(())
}

pub fn read_glf3(r: &mut impl Read) -> Result<LatticeField3> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let ver = r.read_u32::<LittleEndian>()?;
    if ver != 1 {
        return Err(Error::Format(format!("unknown version {ver}")));
    }
    let mut dims = [0usize; 3];
    for d in dims.iter_mut() {
        *d = r.read_u32::<LittleEndian>()? as usize;
    }
    let h = r.read_f64::<LittleEndian>()?;
    let mut origin = [0.0; 3];
    for o in origin.iter_mut() {
        *o = r.read_f64::<LittleEndian>()?;
    }
    let has_a = r.read_u8()?;
    let has_mask = r.read_u8()?;
    if has_a > 1 || has_mask > 1 {
        return Err(Error::Format("bad flag byte".into()));
    }
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("dims overflow".into()))?;
    let mut u = Vec::with_capacity(n);
    for _ in 0..n {
        let re = r.read_f32::<LittleEndian>()? as f64;
        let im = r.read_f32::<LittleEndian>()? as f64;
        u.push(C64::new(re, im));
    }
    let a = if has_a == 1 {
        let mut a = Vec::with_capacity(n);
        for _ in 0..n {
            let mut v = [0.0; 3];
            for c in v.iter_mut() {
                *c = r.read_f32::<LittleEndian>()? as f64;
            }
            a.push(v);
        }
        Some(a)
    } else {
        None
    };
    let mask = if has_mask == 1 {
        let mut m = Vec::with_capacity(n);
        for _ in 0..n {
            m.push(r.read_u8()? != 0);
        }
        Some(m)
    } else {
        None
    };
    let f = LatticeField3 {
        dims,
        h,
        origin,
        u,
        a,
        mask,
        boundary: Boundary::Box,
    };
    f.validate()?;
    Ok(f)
}

pub fn save_glf3(field: &LatticeField3, path: &std::path::Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_glf3(field, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_glf3(path: &std::path::Path) -> Result<LatticeField3> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    read_glf3(&mut r)
}

// ---------------------------------------------------------------------------
// synthetic fixtures

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    StraightLine,
    Ring,
    Helix,
    DipolePair,
    Uniform,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "straight_line" => SynthKind::StraightLine,
            "ring" => SynthKind::Ring,
            "helix" => SynthKind::Helix,
            "dipole_pair" => SynthKind::DipolePair,
            "uniform" => SynthKind::Uniform,
            _ => return Err(Error::ParamsInfeasible(format!("unknown kind {s}"))),
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthParams {
    /// Filament centre; defaults to the box centre.
    pub center: Option<V3>,
    /// Ring radius or helix radius.
    pub radius: f64,
    /// Helix pitch along z.
    pub pitch: f64,
    /// Dipole separation along x.
    pub separation: f64,
    /// Constant vector potential.
    pub a_const: Option<V3>,
    /// Restrict Ω to a ball of this radius around the box centre.
    pub ball_radius: Option<f64>,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            center: None,
            radius: 0.3,
            pitch: 1.0,
            separation: 0.3,
            a_const: None,
            ball_radius: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Filament {
    pub points: Vec<V3>,
    pub multiplicity: i32,
}

impl Filament {
    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| dist(w[0], w[1])).sum()
    }
}

fn angle(x: f64, y: f64) -> f64 {
    y.atan2(x)
}

/// Builds a fixture field on the box `origin + h·[0, dims-1]` (origin at 0) and returns
/// the filament polylines it was built from.
pub fn synth_field(
    kind: SynthKind,
    params: &SynthParams,
    dims: [usize; 3],
    h: f64,
    eps: f64,
) -> Result<(LatticeField3, Vec<Filament>)> {
    if dims.iter().any(|&d| d < 2) || !(h > 0.0) || !(eps > 0.0) {
        return Err(Error::ParamsInfeasible("dims >= 2, h > 0, eps > 0 required".into()));
    }
    let hi = [
        (dims[0] - 1) as f64 * h,
        (dims[1] - 1) as f64 * h,
        (dims[2] - 1) as f64 * h,
    ];
    let c = params.center.unwrap_or(scale(hi, 0.5));
    let clear = 5.0 * eps;
    let need = |cond: bool, what: &str| -> Result<()> {
        if cond {
            Ok(())
        } else {
            Err(Error::GeometryOutOfBounds(what.to_string()))
        }
    };
    let fits_x = |r: f64| c[0] - r >= clear && c[0] + r <= hi[0] - clear;
    let fits_y = |r: f64| c[1] - r >= clear && c[1] + r <= hi[1] - clear;
    let fits_z = |r: f64| c[2] - r >= clear && c[2] + r <= hi[2] - clear;
    let nz = 257;
    let zs: Vec<f64> = (0..nz).map(|k| hi[2] * k as f64 / (nz - 1) as f64).collect();
    let modulus = move |d: f64| (d / eps).tanh();

    type Phase = Box<dyn Fn(V3) -> C64 + Sync>;
    let (f, truth): (Phase, Vec<Filament>) = match kind {
        SynthKind::Uniform => (Box::new(|_| C64::new(1.0, 0.0)), vec![]),
        SynthKind::StraightLine => {
            need(fits_x(0.0) && fits_y(0.0), "straight line too close to the box side")?;
            let (cx, cy) = (c[0], c[1]);
            let f = move |x: V3| {
                let (dx, dy) = (x[0] - cx, x[1] - cy);
                C64::from_polar(modulus(dx.hypot(dy)), angle(dx, dy))
            };
            let fil = Filament {
                points: vec![[cx, cy, 0.0], [cx, cy, hi[2]]],
                multiplicity: 1,
            };
            (Box::new(f), vec![fil])
        }
        SynthKind::Ring => {
            let r = params.radius;
            need(r > clear && fits_x(r) && fits_y(r) && fits_z(0.0), "ring does not fit")?;
            let f = move |x: V3| {
                let rho = (x[0] - c[0]).hypot(x[1] - c[1]);
                let z = x[2] - c[2];
                let th = angle(rho - r, z) - angle(rho + r, z);
                C64::from_polar(modulus((rho - r).hypot(z)), th)
            };
            // the phase winds positively in the (rho, z) half-plane, i.e. the core runs along -phi
            let n = 256;
            let points = (0..=n)
                .map(|k| {
                    let t = -2.0 * PI * k as f64 / n as f64;
                    [c[0] + r * t.cos(), c[1] + r * t.sin(), c[2]]
                })
                .collect();
            (Box::new(f), vec![Filament { points, multiplicity: 1 }])
        }
        SynthKind::Helix => {
            let (r, p) = (params.radius, params.pitch);
            need(fits_x(r) && fits_y(r) && p > 0.0, "helix does not fit")?;
            let centre = move |z: f64| {
                let t = 2.0 * PI * z / p;
                (c[0] + r * t.cos(), c[1] + r * t.sin())
            };
            let f = move |x: V3| {
                let (cx, cy) = centre(x[2]);
                let (dx, dy) = (x[0] - cx, x[1] - cy);
                C64::from_polar(modulus(dx.hypot(dy)), angle(dx, dy))
            };
            let points = zs
                .iter()
                .map(|&z| {
                    let (cx, cy) = centre(z);
                    [cx, cy, z]
                })
                .collect();
            (Box::new(f), vec![Filament { points, multiplicity: 1 }])
        }
        SynthKind::DipolePair => {
            let s = 0.5 * params.separation;
            need(s > clear && fits_x(s) && fits_y(0.0), "dipole does not fit")?;
            let (x1, x2, cy) = (c[0] - s, c[0] + s, c[1]);
            let f = move |x: V3| {
                let (a1, b1) = (x[0] - x1, x[1] - cy);
                let (a2, b2) = (x[0] - x2, x[1] - cy);
                let m = modulus(a1.hypot(b1)) * modulus(a2.hypot(b2));
                C64::from_polar(m, angle(a1, b1) - angle(a2, b2))
            };
            let fils = vec![
                Filament {
                    points: vec![[x1, cy, 0.0], [x1, cy, hi[2]]],
                    multiplicity: 1,
                },
                Filament {
                    points: vec![[x2, cy, hi[2]], [x2, cy, 0.0]],
                    multiplicity: 1,
                },
            ];
            (Box::new(f), fils)
        }
    };

    let mut field = LatticeField3::from_fn(dims, h, [0.0; 3], f);
    if let Some(a) = params.a_const {
        field.a = Some(vec![a; field.len()]);
    }
    if let Some(rb) = params.ball_radius {
        let bc = scale(hi, 0.5);
        need(
            (0..3).all(|k| bc[k] - rb >= -1e-12 && bc[k] + rb <= hi[k] + 1e-12),
            "ball domain larger than the box",
        )?;
        field.boundary = Boundary::Ball {
            center: bc,
            radius: rb,
        };
        let mask = (0..field.len()).map(|i| dist(field.pos(i), bc) <= rb).collect();
        field.mask = Some(mask);
    }
    Ok((field, truth))
}
