//! Space-time (axis 0 = time) vorticity J, velocity V, the transport identity ∂_t J + div V = 0
//! and the product-estimate inequality evaluated on a lattice field and its current.

use crate::current::{build_vortex_current, PolyhedralCurrent};
use crate::grid::{choose_grid, GridParams};
use crate::field::{discrete_vorticity, Filament, LatticeField3};
use crate::geom::*;
use crate::{Complex64 as C64, Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Lattice field on (t, x₁, x₂) with A = (Φ, B₁, B₂).
#[derive(Clone, Debug)]
pub struct SpaceTimeField {
    pub field: LatticeField3,
}

impl SpaceTimeField {
    pub fn new(field: LatticeField3) -> Result<Self> {
        if field.dims[0] < 2 || field.dims[1] < 2 || field.dims[2] < 2 {
            return Err(Error::ParamsInfeasible("space-time field needs dims >= 2 on every axis".into()));
        }
        Ok(SpaceTimeField { field })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.field.dims
    }

    fn phi(&self, i: usize) -> f64 {
        self.field.a_at(i)[0]
    }

    fn b(&self, i: usize) -> [f64; 2] {
        let a = self.field.a_at(i);
        [a[1], a[2]]
    }
}

/// Degree-`degree` vortex with tanh(r/ε) core whose centre moves as start + t·velocity.
pub fn translating_vortex(dims: [usize; 3], h: f64, eps: f64, start: [f64; 2], velocity: [f64; 2], degree: i32) -> Result<(SpaceTimeField, Vec<Filament>)> {
    let f = LatticeField3::from_fn(dims, h, [0.0; 3], |x| {
        let (dx, dy) = (x[1] - start[0] - velocity[0] * x[0], x[2] - start[1] - velocity[1] * x[0]);
        C64::from_polar((dx.hypot(dy) / eps).tanh(), degree as f64 * dy.atan2(dx))
    });
    let t1 = (dims[0] - 1) as f64 * h;
    let fil = Filament {
        points: vec![[0.0, start[0], start[1]], [t1, start[0] + velocity[0] * t1, start[1] + velocity[1] * t1]],
        multiplicity: degree,
    };
    Ok((SpaceTimeField::new(f)?, vec![fil]))
}

/// u → u e^{iχ}, (Φ, B) → (Φ, B) + ∇χ with ∇χ supplied analytically.
pub fn gauge_transform(stf: &SpaceTimeField, chi: &dyn Fn(V3) -> f64, grad_chi: &dyn Fn(V3) -> V3) -> SpaceTimeField {
    let mut f = stf.field.clone();
    let mut a = vec![[0.0; 3]; f.len()];
    for i in 0..f.len() {
        let x = f.pos(i);
        f.u[i] *= C64::from_polar(1.0, chi(x));
        a[i] = add(stf.field.a_at(i), grad_chi(x));
    }
    f.a = Some(a);
    SpaceTimeField { field: f }
}

/// Scalar samples on the spatial plaquettes of every time slice, indexed [t][i][j] over
/// dims [nt, nx − 1, ny − 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlicePlaquettes {
    pub dims: [usize; 3],
    pub h: f64,
    pub values: Vec<f64>,
}

impl SlicePlaquettes {
    pub fn at(&self, t: usize, i: usize, j: usize) -> f64 {
        self.values[(t * self.dims[1] + i) * self.dims[2] + j]
    }

    /// ∫ J dx per time slice.
    pub fn slice_integrals(&self) -> Vec<f64> {
        let n = self.dims[1] * self.dims[2];
        self.values.chunks(n).map(|c| c.iter().sum::<f64>() * self.h * self.h).collect()
    }
}

/// J = curl(⟨∇u, iu⟩ + (1 − |u|²)B) per spatial plaquette, as a density.
pub fn space_vorticity(stf: &SpaceTimeField) -> SlicePlaquettes {
    let f = &stf.field;
    let d = f.dims;
    let v = discrete_vorticity(f);
    let h2 = f.h * f.h;
    let mut values = Vec::with_capacity(d[0] * (d[1] - 1) * (d[2] - 1));
    for t in 0..d[0] {
        for i in 0..d[1] - 1 {
            for j in 0..d[2] - 1 {
                values.push(v.fd[0][f.idx(t, i, j)] / h2);
            }
        }
    }
    SlicePlaquettes {
        dims: [d[0], d[1] - 1, d[2] - 1],
        h: f.h,
        values,
    }
}

fn scalar_diff(f: &LatticeField3, vals: &[f64], i: usize, axis: usize) -> f64 {
    let c = f.coords(i);
    let s = f.stride(axis);
    let n = f.dims[axis];
    if c[axis] > 0 && c[axis] + 1 < n {
        (vals[i + s] - vals[i - s]) / (2.0 * f.h)
    } else if c[axis] + 1 < n {
        (vals[i + s] - vals[i]) / f.h
    } else {
        (vals[i] - vals[i - s]) / f.h
    }
}

/// V = 2⟨i∂_t u, ∇^⊥u⟩ + ∂_t((1 − |u|²)B^⊥) − ∇^⊥((1 − |u|²)Φ) at nodes, ∇^⊥ = (−∂₂, ∂₁).
pub fn velocity_field(stf: &SpaceTimeField) -> Vec<[f64; 2]> {
    let f = &stf.field;
    let n = f.len();
    let rho: Vec<f64> = f.u.iter().map(|u| 1.0 - u.norm_sqr()).collect();
    let rb1: Vec<f64> = (0..n).map(|i| -rho[i] * stf.b(i)[1]).collect();
    let rb2: Vec<f64> = (0..n).map(|i| rho[i] * stf.b(i)[0]).collect();
    let rphi: Vec<f64> = (0..n).map(|i| rho[i] * stf.phi(i)).collect();
    let inner = |a: C64, b: C64| (a * b.conj()).re;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let ut = f.derivative(i, 0, false);
            let u1 = f.derivative(i, 1, false);
            let u2 = f.derivative(i, 2, false);
            let iut = C64::new(0.0, 1.0) * ut;
            [
                2.0 * inner(iut, -u2) + scalar_diff(f, &rb1, i, 0) + scalar_diff(f, &rphi, i, 2),
                2.0 * inner(iut, u1) + scalar_diff(f, &rb2, i, 0) - scalar_diff(f, &rphi, i, 1),
            ]
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuityResidual {
    /// Residual per space-time cell, dims [nt − 1, nx − 1, ny − 1].
    pub dims: [usize; 3],
    pub values: Vec<f64>,
    pub l1: f64,
    pub max: f64,
    pub l1_per_slice: Vec<f64>,
    /// ‖J‖₁ over the whole lattice, for scale.
    pub j_l1: f64,
}

/// ∂_t J + div V at cell centres: J differenced between slices, V differenced across the cell
/// and averaged over the four cell edges parallel to each direction.
pub fn continuity_residual(stf: &SpaceTimeField) -> Result<ContinuityResidual> {
    let f = &stf.field;
    let d = f.dims;
    if d[0] < 3 {
        return Err(Error::ParamsInfeasible("continuity residual needs at least 3 time slices".into()));
    }
    let j = space_vorticity(stf);
    let v = velocity_field(stf);
    let h = f.h;
    let cd = [d[0] - 1, d[1] - 1, d[2] - 1];
    let values: Vec<f64> = (0..cd[0] * cd[1] * cd[2])
        .into_par_iter()
        .map(|c| {
            let (t, i, k) = (c / (cd[1] * cd[2]), (c / cd[2]) % cd[1], c % cd[2]);
            let dt = (j.at(t + 1, i, k) - j.at(t, i, k)) / h;
            let mut div = 0.0;
            for (a, b) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                div += v[f.idx(t + a, i + 1, k + b)][0] - v[f.idx(t + a, i, k + b)][0];
                div += v[f.idx(t + a, i + b, k + 1)][1] - v[f.idx(t + a, i + b, k)][1];
            }
            dt + div / (4.0 * h)
        })
        .collect();
    let h3 = h.powi(3);
    let per: Vec<f64> = values.chunks(cd[1] * cd[2]).map(|c| c.iter().map(|x| x.abs()).sum::<f64>() * h3).collect();
    Ok(ContinuityResidual {
        dims: cd,
        l1: per.iter().sum(),
        max: values.iter().fold(0.0, |m: f64, x| m.max(x.abs())),
        values,
        l1_per_slice: per,
        j_l1: j.values.iter().map(|x| x.abs()).sum::<f64>() * h * h * h,
    })
}

/// Polyhedral current of the space-time field on a grid of side δ chosen among `trials`
/// random placements.
pub fn space_time_current(stf: &SpaceTimeField, eps: f64, delta: f64, trials: usize, seed: u64) -> Result<PolyhedralCurrent> {
    let (grid, _) = choose_grid(&stf.field, eps, &GridParams::new(delta, trials, seed)).map_err(|e| e.at("grid"))?;
    build_vortex_current(&stf.field, &grid, eps).map_err(|e| e.at("current"))
}

/// 1 on [lo + ramp, hi − ramp], linear down to 0 at lo and hi, 0 outside.
pub fn plateau(x: f64, lo: f64, hi: f64, ramp: f64) -> f64 {
    ((x - lo) / ramp).min((hi - x) / ramp).clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductReport {
    pub lambda: f64,
    pub lhs: f64,
    pub time_term: f64,
    pub space_term: f64,
    /// ∫ f ν ∧ (−X₂dx₁ + X₁dx₂) = 2π Σ mult ∫ f X·dx along segments.
    pub pairing: f64,
    pub m_eps: f64,
    pub c: f64,
    pub main: f64,
    pub correction: f64,
    pub slack: f64,
}

/// Evaluates both sides of the product estimate. Λ defaults to the balancing choice
/// (∫|f|²|∂_t u − iuΦ|² / ∫|X·(∇u − iuB)|²)^{1/2}; M_ε = exp(√|log ε|).
pub fn product_estimate_check(
    stf: &SpaceTimeField,
    f: &(dyn Fn(V3) -> f64 + Sync),
    x: &(dyn Fn(V3) -> [f64; 2] + Sync),
    lambda: Option<f64>,
    eps: f64,
    nu: &PolyhedralCurrent,
    c: f64,
) -> Result<ProductReport> {
    let fld = &stf.field;
    let d = fld.dims;
    let on_edge = |i: usize| {
        let co = fld.coords(i);
        (0..3).any(|a| co[a] == 0 || co[a] + 1 == d[a])
    };
    if (0..fld.len()).any(|i| on_edge(i) && (f(fld.pos(i)) != 0.0 || x(fld.pos(i)) != [0.0, 0.0])) {
        return Err(Error::UnsupportedGeometry);
    }
    let iu = |i: usize| C64::new(0.0, 1.0) * fld.u[i];
    let (a, b): (f64, f64) = (0..fld.len())
        .into_par_iter()
        .map(|i| {
            let p = fld.pos(i);
            let w = fld.node_weight(i);
            let dt = fld.derivative(i, 0, false) - iu(i) * stf.phi(i);
            let bb = stf.b(i);
            let d1 = fld.derivative(i, 1, false) - iu(i) * bb[0];
            let d2 = fld.derivative(i, 2, false) - iu(i) * bb[1];
            let xv = x(p);
            let fv = f(p);
            (w * fv * fv * dt.norm_sqr(), w * (d1 * xv[0] + d2 * xv[1]).norm_sqr())
        })
        .reduce(|| (0.0, 0.0), |p, q| (p.0 + q.0, p.1 + q.1));
    let lam = match lambda {
        Some(l) if l > 0.0 => l,
        Some(l) => return Err(Error::ParamsInfeasible(format!("Lambda {l} must be positive"))),
        None if a > 0.0 && b > 0.0 => (a / b).sqrt(),
        None => 1.0,
    };
    let lhs = a / lam + lam * b;
    let (gx, gw) = gauss_legendre(8);
    let mut pairing = 0.0;
    let mut corr = 0.0;
    for s in &nu.segments {
        let dx = [s.b[1] - s.a[1], s.b[2] - s.a[2]];
        let mut integ = 0.0;
        for q in 0..gx.len() {
            let p = lerp(s.a, s.b, 0.5 * (gx[q] + 1.0));
            let xv = x(p);
            integ += 0.5 * gw[q] * f(p) * (xv[0] * dx[0] + xv[1] * dx[1]);
        }
        pairing += 2.0 * PI * s.mult as f64 * integ;
        corr += 2.0 * PI * s.mult.unsigned_abs() as f64 * dx[0].abs().max(dx[1].abs());
    }
    let le = eps.ln().abs();
    let m_eps = le.sqrt().exp();
    let main = (le - c * m_eps.ln()) * pairing.abs();
    let correction = c * corr;
    Ok(ProductReport {
        lambda: lam,
        lhs,
        time_term: a / lam,
        space_term: lam * b,
        pairing,
        m_eps,
        c,
        main,
        correction,
        slack: lhs - (main - correction),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_fields() {
        let f = LatticeField3::from_fn([5, 6, 7], 0.1, [0.0; 3], |_| C64::new(1.0, 0.0));
        let stf = SpaceTimeField::new(f).unwrap();
        assert!(space_vorticity(&stf).values.iter().all(|&x| x == 0.0));
        assert!(velocity_field(&stf).iter().all(|v| *v == [0.0, 0.0]));
        let r = continuity_residual(&stf).unwrap();
        assert_eq!(r.l1, 0.0);
    }

    #[test]
    fn static_vortex() {
        let (stf, _) = translating_vortex([9, 65, 65], 1.0 / 64.0, 0.05, [0.5, 0.5], [0.0, 0.0], 1).unwrap();
        for s in space_vorticity(&stf).slice_integrals() {
            assert!((s - 2.0 * PI).abs() < 0.02 * 2.0 * PI, "{s}");
        }
        assert!(velocity_field(&stf).iter().all(|v| v[0].abs() < 1e-9 && v[1].abs() < 1e-9));
        let r = continuity_residual(&stf).unwrap();
        assert!(r.l1 < 1e-2 * r.j_l1);
    }

    #[test]
    fn translating_flux_constant_and_transport() {
        let h = 1.0 / 64.0;
        let (stf, _) = translating_vortex([33, 65, 65], h, 0.05, [0.4, 0.5], [0.4, 0.0], 1).unwrap();
        let s = space_vorticity(&stf).slice_integrals();
        for x in &s {
            assert!((x - 2.0 * PI).abs() < 0.02 * 2.0 * PI, "{x}");
        }
        // ∫V ≈ 2π c ê₁ on a middle slice
        let v = velocity_field(&stf);
        let f = &stf.field;
        let t = 16;
        let (mut v1, mut v2) = (0.0, 0.0);
        for i in 0..65 {
            for j in 0..65 {
                let w = if i == 0 || i == 64 { 0.5 } else { 1.0 } * if j == 0 || j == 64 { 0.5 } else { 1.0 };
                let q = v[f.idx(t, i, j)];
                v1 += w * q[0] * h * h;
                v2 += w * q[1] * h * h;
            }
        }
        assert!((v1 - 2.0 * PI * 0.4).abs() < 0.05 * 2.0 * PI * 0.4, "{v1}");
        assert!(v2.abs() < 0.02, "{v2}");
    }

    #[test]
    fn gauge_invariance() {
        let h = 1.0 / 32.0;
        let (stf, _) = translating_vortex([17, 33, 33], h, 0.08, [0.4, 0.5], [0.3, 0.0], 1).unwrap();
        let chi = |x: V3| 0.7 * x[0] * x[1] + 0.3 * (2.0 * x[2]).sin();
        let gchi = |x: V3| [0.7 * x[1], 0.7 * x[0], 0.6 * (2.0 * x[2]).cos()];
        let g = gauge_transform(&stf, &chi, &gchi);
        let (v0, v1) = (velocity_field(&stf), velocity_field(&g));
        let scale_v = v0.iter().map(|v| v[0].abs().max(v[1].abs())).fold(0.0, f64::max);
        let diff = v0.iter().zip(&v1).map(|(a, b)| (a[0] - b[0]).abs().max((a[1] - b[1]).abs())).fold(0.0, f64::max);
        assert!(diff < 0.05 * scale_v, "{diff} {scale_v}");
        let (j0, j1) = (space_vorticity(&stf), space_vorticity(&g));
        let dj = j0.values.iter().zip(&j1.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let sj = j0.values.iter().map(|a| a.abs()).fold(0.0, f64::max);
        assert!(dj < 0.05 * sj, "{dj} {sj}");
    }

    #[test]
    fn residual_converges() {
        let mut l1 = vec![];
        for n in [33usize, 65] {
            let h = 1.0 / (n - 1) as f64;
            let (stf, _) = translating_vortex([n, n, n], h, 0.05, [0.35, 0.5], [0.3, 0.0], 1).unwrap();
            l1.push(continuity_residual(&stf).unwrap().l1);
        }
        assert!(l1[0] / l1[1] >= 1.8, "{l1:?}");
    }

    #[test]
    fn product_estimate_translating() {
        let h = 1.0 / 100.0;
        let eps = 0.01;
        let (stf, _) = translating_vortex([41, 101, 101], h, eps, [0.4, 0.5], [0.5, 0.0], 1).unwrap();
        let nu = space_time_current(&stf, eps, 8.0 * h, 4, 7).unwrap();
        let f = |p: V3| plateau(p[0], 0.1, 0.3, 0.05) * plateau(p[1], 0.0, 1.0, 0.1) * plateau(p[2], 0.0, 1.0, 0.1);
        let x = |p: V3| if f(p) > 0.0 { [1.0, 0.0] } else { [0.0, 0.0] };
        let r = product_estimate_check(&stf, &f, &x, None, eps, &nu, 1.0).unwrap();
        // pairing ≈ 2π c ∫ f dt along the filament
        assert!(r.pairing > 0.0 && (r.pairing - 2.0 * PI * 0.5 * 0.15).abs() < 0.1 * r.pairing, "{r:?}");
        assert!(r.slack >= -0.1 * r.lhs, "{r:?}");
        assert!(product_estimate_check(&stf, &|_| 1.0, &x, None, eps, &nu, 1.0).is_err());
    }

    #[test]
    fn static_pairing_zero() {
        let h = 1.0 / 64.0;
        let (stf, _) = translating_vortex([17, 65, 65], h, 0.05, [0.5, 0.5], [0.0, 0.0], 1).unwrap();
        let nu = space_time_current(&stf, 0.05, 8.0 * h, 8, 3).unwrap();
        let f = |p: V3| plateau(p[0], 0.0, 0.25, 0.05) * plateau(p[1], 0.0, 1.0, 0.1) * plateau(p[2], 0.0, 1.0, 0.1);
        let x = |p: V3| if f(p) > 0.0 { [0.6, 0.8] } else { [0.0, 0.0] };
        let r = product_estimate_check(&stf, &f, &x, None, 0.05, &nu, 1.0).unwrap();
        assert!(r.pairing.abs() < 1e-9, "{r:?}");
    }

    #[test]
    fn plateau_support() {
        assert_eq!(plateau(0.0, 0.0, 1.0, 0.1), 0.0);
        assert_eq!(plateau(0.5, 0.0, 1.0, 0.1), 1.0);
        assert!((plateau(0.05, 0.0, 1.0, 0.1) - 0.5).abs() < 1e-15);
    }
}
