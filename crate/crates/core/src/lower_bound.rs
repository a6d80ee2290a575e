//! Energy lower-bound certificates: co-area slicing inside kept cubes, the boundary layer Θ,
//! and the end-to-end report that checks quantization, relative boundary, support volume,
//! lower bound and norm estimate on one field.

use crate::current::{boundary_residual, build_vortex_current, dual_norm_estimate, mass, support_volume, NormEstimate, PolyhedralCurrent, Provenance};
use crate::field::{Boundary, LatticeField3};
use crate::geom::*;
use crate::grid::{choose_grid, GridParams, GridSpec, SkeletonEnergies};
use crate::matching::SignedConfig;
use crate::slice::{face_step, FaceField};
use crate::zeta::{build_zeta, build_zeta_raw, critical_set_probe, merge_intervals, mollify, DistOracle, Variant, ZetaExact};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;

/// Certificate parameters. Unset values take the defaults tied to δ, ε and M_ε:
/// λ = (δ⁹/(|log ε|^{1+b} M⁹))^{21/9}, κ = λ^{2ρ}/6, γ = δ/(|log ε|^{1+b} M).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertParams {
    pub lambda: Option<f64>,
    pub kappa: Option<f64>,
    pub rho: f64,
    pub gamma_slice: Option<f64>,
    pub b: f64,
    pub c1: f64,
    /// Overrides the measured F_ε as M_ε.
    pub m_eps: Option<f64>,
    /// Probe lattice per cube side for the critical set.
    pub probe_n: usize,
}

impl Default for CertParams {
    fn default() -> Self {
        CertParams {
            lambda: None,
            kappa: None,
            rho: 6.0 / 21.0,
            gamma_slice: None,
            b: 0.1,
            c1: 1.0,
            m_eps: None,
            probe_n: 9,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub lambda: f64,
    pub kappa: f64,
    pub rho: f64,
    pub gamma_slice: f64,
    pub c1: f64,
    pub m_eps: f64,
}

impl CertParams {
    pub fn resolve(&self, eps: f64, delta: f64, measured_f: f64) -> Result<Resolved> {
        let m = self.m_eps.unwrap_or(measured_f).max(f64::MIN_POSITIVE);
        let le = eps.ln().abs().powf(1.0 + self.b);
        let lambda = self.lambda.unwrap_or_else(|| (delta.powi(9) / (le * m.powi(9))).powf(21.0 / 9.0));
        let limit = lambda.powf(2.0 * self.rho) / 3.0;
        let kappa = self.kappa.unwrap_or(limit / 2.0);
        let gamma_slice = self.gamma_slice.unwrap_or(delta / (le * m));
        for (n, v) in [("lambda", lambda), ("kappa", kappa), ("gamma_slice", gamma_slice), ("c1", self.c1)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::ParamsInfeasible(format!("{n} = {v} must be positive")));
            }
        }
        if !(self.rho > 0.0 && self.rho < 0.5) {
            return Err(Error::ParamsInfeasible(format!("rho = {} outside (0, 1/2)", self.rho)));
        }
        if kappa >= limit {
            return Err(Error::ParamsInfeasible(format!("kappa = {kappa} not below lambda^(2 rho)/3 = {limit}")));
        }
        Ok(Resolved {
            lambda,
            kappa,
            rho: self.rho,
            gamma_slice,
            c1: self.c1,
            m_eps: m,
        })
    }
}

impl Resolved {
    /// log(1/ε) − log(C₁M/(λ²κγ)).
    pub fn log_factor(&self, eps: f64) -> f64 {
        // the argument underflows f64 at the default λ; keep it in log form
        let log_arg = self.c1.ln() + self.m_eps.ln() - 2.0 * self.lambda.ln() - self.kappa.ln() - self.gamma_slice.ln();
        -eps.ln() - log_arg
    }
}

/// d(t) = #{ζ(p_i) > t} − #{ζ(n_i) > t}.
pub fn degree_at(pvals: &[f64], nvals: &[f64], t: f64) -> i64 {
    pvals.iter().filter(|&&v| v > t).count() as i64 - nvals.iter().filter(|&&v| v > t).count() as i64
}

/// ∫ d(t) dt by sweeping the sorted breakpoints of the step function.
pub fn integral_degree(pvals: &[f64], nvals: &[f64]) -> f64 {
    let mut ev: Vec<(f64, i64)> = pvals.iter().map(|&v| (v, 1)).chain(nvals.iter().map(|&v| (v, -1))).collect();
    ev.sort_by(|a, b| a.0.total_cmp(&b.0));
    // sweep from +∞ downward: below a value v the point counts
    let mut d = 0i64;
    let mut s = 0.0;
    for w in (0..ev.len()).rev() {
        d += ev[w].1;
        if w > 0 {
            s += d as f64 * (ev[w].0 - ev[w - 1].0);
        }
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub region: String,
    pub bound: f64,
    /// |ν|(region).
    pub nu_mass: f64,
    pub k: usize,
    pub integral_d: f64,
    pub eps: f64,
    pub params: Resolved,
    pub log_factor: f64,
    /// |T_bad| = measure of the excluded levels.
    pub t_bad_measure: f64,
    pub t_kappa_measure: f64,
    pub ridge_measure: f64,
    pub slice_screen_measure: f64,
    pub boundary_band_measure: f64,
    /// C₁λ²κ ∫_∂C e.
    pub error_budget: f64,
    pub measured_energy: f64,
    pub tolerance: f64,
    /// false when the log factor is nonpositive: the bound is then 0 and ζ* replaces ζ_λ.
    pub probed: bool,
    pub sound: bool,
}

impl Certificate {
    fn trivial(region: String, eps: f64, params: Resolved, measured_energy: f64) -> Self {
        Certificate {
            region,
            bound: 0.0,
            nu_mass: 0.0,
            k: 0,
            integral_d: 0.0,
            eps,
            log_factor: params.log_factor(eps),
            params,
            t_bad_measure: 0.0,
            t_kappa_measure: 0.0,
            ridge_measure: 0.0,
            slice_screen_measure: 0.0,
            boundary_band_measure: 0.0,
            error_budget: 0.0,
            measured_energy,
            tolerance: 0.0,
            probed: false,
            sound: true,
        }
    }
}

/// Nodes of Ω per kept cube, and the F-density.
pub struct RegionIndex {
    pub density: Vec<f64>,
    pub by_cube: BTreeMap<[i64; 3], Vec<usize>>,
    /// In Ω but outside every kept cube.
    pub theta_nodes: Vec<usize>,
}

impl RegionIndex {
    pub fn new(field: &LatticeField3, grid: &GridSpec, eps: f64) -> Self {
        let (density, _) = field.densities(eps, &|i| field.in_mask(i));
        let mut by_cube: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
        let mut theta_nodes = vec![];
        let cubes: Vec<[i64; 3]> = (0..field.len()).into_par_iter().map(|i| grid.cube_of(field.pos(i))).collect();
        for (i, c) in cubes.into_iter().enumerate() {
            if !field.in_mask(i) || field.signed_dist(field.pos(i)) < 0.0 {
                continue;
            }
            if grid.is_kept(c) {
                by_cube.entry(c).or_default().push(i);
            } else {
                theta_nodes.push(i);
            }
        }
        RegionIndex { density, by_cube, theta_nodes }
    }

    pub fn energy(&self, field: &LatticeField3, nodes: &[usize]) -> f64 {
        nodes.iter().map(|&i| field.node_weight(i) * self.density[i]).sum()
    }
}

struct CertInput<'a> {
    region: String,
    zeta: ZetaExact,
    nu_mass: f64,
    nodes: &'a [usize],
    lo: V3,
    hi: V3,
    boundary_energy: &'a (dyn Fn() -> f64 + Sync),
    /// ζ value on ∂Ω and band half-width, for the boundary layer.
    band: Option<(f64, f64)>,
}

fn certify(field: &LatticeField3, idx: &RegionIndex, eps: f64, p: &Resolved, probe_n: usize, inp: CertInput) -> Result<Certificate> {
    let measured = idx.energy(field, inp.nodes);
    let factor = p.log_factor(eps);
    let cfg = inp.zeta.config.clone();
    let k = cfg.k();
    let mut c = Certificate::trivial(inp.region.clone(), eps, *p, measured);
    c.nu_mass = inp.nu_mass;
    c.k = k;
    c.tolerance = 1e-9 * measured.max(1.0);
    if factor <= 0.0 || k == 0 {
        let zp: Vec<f64> = cfg.pos.iter().map(|&x| inp.zeta.value(x)).collect();
        let zn: Vec<f64> = cfg.neg.iter().map(|&x| inp.zeta.value(x)).collect();
        c.integral_d = integral_degree(&zp, &zn);
        c.sound = c.bound <= measured + c.tolerance;
        return Ok(c);
    }
    let mz = mollify(inp.zeta, p.lambda, p.rho);
    let zp: Vec<f64> = cfg.pos.iter().map(|&x| mz.value(x)).collect();
    let zn: Vec<f64> = cfg.neg.iter().map(|&x| mz.value(x)).collect();
    c.integral_d = integral_degree(&zp, &zn);
    let crit = critical_set_probe(&mz, p.kappa, inp.lo, inp.hi, probe_n).map_err(|e| e.at(inp.region.clone()))?;
    // slice screening: levels whose co-area slice energy exceeds M/γ
    let w = p.lambda.max(field.h);
    let mut bins: BTreeMap<i64, f64> = BTreeMap::new();
    let vals: Vec<(f64, f64)> = inp.nodes.par_iter().map(|&i| (mz.value(field.pos(i)), field.node_weight(i) * idx.density[i])).collect();
    for (v, e) in vals {
        *bins.entry((v / w).floor() as i64).or_default() += e;
    }
    let heavy: Vec<(f64, f64)> = bins
        .iter()
        .filter(|(_, e)| **e / w > p.m_eps / p.gamma_slice)
        .map(|(b, _)| (*b as f64 * w, (*b + 1) as f64 * w))
        .collect();
    c.slice_screen_measure = merge_intervals(heavy.clone()).1;
    let band: Vec<(f64, f64)> = inp.band.map(|(c0, s)| vec![(c0 - s, c0 + s)]).unwrap_or_default();
    c.boundary_band_measure = merge_intervals(band.clone()).1;
    let (_, t_bad) = merge_intervals(crit.excluded.iter().copied().chain(heavy).chain(band).collect());
    c.t_bad_measure = t_bad;
    c.t_kappa_measure = merge_intervals(crit.t_kappa.clone()).1;
    c.ridge_measure = crit.p_levels_measure;
    c.error_budget = p.c1 * p.lambda * p.lambda * p.kappa * (inp.boundary_energy)();
    c.probed = true;
    c.bound = (PI * (c.integral_d - k as f64 * t_bad).max(0.0) * factor - c.error_budget).max(0.0);
    c.sound = c.bound <= measured + c.tolerance;
    Ok(c)
}

fn region_mass(nu: &PolyhedralCurrent, tag: Provenance) -> f64 {
    nu.segments.iter().filter(|s| s.tag == tag).map(|s| s.mult.unsigned_abs() as f64 * s.length()).sum::<f64>() * 2.0 * PI
}

/// One certificate per kept cube carrying a connection.
pub fn coarea_certificate(field: &LatticeField3, grid: &GridSpec, nu: &PolyhedralCurrent, cubes: &[[i64; 3]], eps: f64, params: &CertParams, idx: &RegionIndex, measured_f: f64) -> Result<Vec<Certificate>> {
    let p = params.resolve(eps, grid.delta, measured_f)?;
    let parts: BTreeMap<[i64; 3], usize> = nu.cubes.iter().enumerate().map(|(i, c)| (c.cube, i)).collect();
    let step = face_step(field.h, eps);
    let empty = vec![];
    cubes
        .par_iter()
        .map(|&n| {
            let nodes = idx.by_cube.get(&n).unwrap_or(&empty);
            let region = format!("cube {n:?}");
            let Some(&pi) = parts.get(&n) else {
                return Ok(Certificate::trivial(region, eps, p, idx.energy(field, nodes)));
            };
            let conn = &nu.cubes[pi].connection;
            let zeta = build_zeta(conn, Variant::Euclid).map_err(|e| e.at(region.clone()))?;
            let corners = grid.cube_corners(n);
            let lo = [0, 1, 2].map(|a| corners.iter().map(|c| c[a]).fold(f64::INFINITY, f64::min));
            let hi = [0, 1, 2].map(|a| corners.iter().map(|c| c[a]).fold(f64::NEG_INFINITY, f64::max));
            let be = || {
                grid.faces_of_cube(n)
                    .iter()
                    .map(|(f, _)| FaceField::from_grid_face(field, grid, *f, step).map(|ff| ff.energy(eps)).unwrap_or(f64::INFINITY))
                    .sum::<f64>()
            };
            certify(
                field,
                idx,
                eps,
                &p,
                params.probe_n,
                CertInput {
                    region,
                    zeta,
                    nu_mass: region_mass(nu, Provenance::Cube(n)),
                    nodes,
                    lo,
                    hi,
                    boundary_energy: &be,
                    band: None,
                },
            )
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCertificate {
    pub certificate: Certificate,
    /// Σ d̂(n_σ(i), p_i) over the augmented pairs.
    pub augmented_length: f64,
    /// Σ ζ*(p_i) − ζ*(n_σ(i)) over the same pairs.
    pub dual_sum: f64,
    pub dual_gap: f64,
}

/// Certificate on Θ = Ω minus the kept cubes, with the boundary ζ built from the augmented
/// collection and the levels of ζ near ∂Ω excluded.
pub fn boundary_certificate(field: &LatticeField3, grid: &GridSpec, nu: &PolyhedralCurrent, eps: f64, params: &CertParams, idx: &RegionIndex, measured_f: f64) -> Result<BoundaryCertificate> {
    let Boundary::Ball { center, radius } = field.boundary else {
        return Err(Error::DomainNotSupported);
    };
    let p = params.resolve(eps, grid.delta, measured_f)?;
    let nodes = &idx.theta_nodes;
    let Some(theta) = &nu.theta else {
        return Ok(BoundaryCertificate {
            certificate: Certificate::trivial("theta".into(), eps, p, idx.energy(field, nodes)),
            augmented_length: 0.0,
            dual_sum: 0.0,
            dual_gap: 0.0,
        });
    };
    let aug = &theta.augmented;
    let augmented_length: f64 = aug.pair_cost.iter().sum();
    let dual_sum: f64 = (0..aug.config.k()).map(|i| aug.zeta_pos[i] - aug.zeta_neg[aug.pairing[i]]).sum();
    let oracle = DistOracle::Ball { center, radius };
    let zeta = build_zeta_raw(&aug.config, &aug.zeta_pos, &aug.zeta_neg, Variant::Boundary(oracle));
    let c0 = zeta.value(field.boundary_point(center));
    let h = field.h;
    let be = || 0.0;
    let certificate = certify(
        field,
        idx,
        eps,
        &p,
        params.probe_n,
        CertInput {
            region: "theta".into(),
            zeta,
            nu_mass: region_mass(nu, Provenance::Theta),
            nodes,
            lo: sub(center, [radius; 3]),
            hi: add(center, [radius; 3]),
            boundary_energy: &be,
            band: Some((c0, 2.0 * p.lambda + h)),
        },
    )?;
    Ok(BoundaryCertificate {
        certificate,
        augmented_length,
        dual_sum,
        dual_gap: (augmented_length - dual_sum).abs(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub delta: f64,
    pub trials: usize,
    pub seed: u64,
    pub c_grid: f64,
    pub gamma: f64,
    /// Allowed ratio |S_ν| / (δ(1 + δF_ε)).
    pub c_support: f64,
    pub cert: CertParams,
}

impl ReportConfig {
    pub fn new(delta: f64, seed: u64) -> Self {
        ReportConfig {
            delta,
            trials: 200,
            seed,
            c_grid: 100.0,
            gamma: 0.5,
            c_support: 100.0,
            cert: CertParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantization {
    pub faces: usize,
    pub components: usize,
    pub unbalanced_cubes: usize,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativeBoundary {
    pub interior_defects: usize,
    pub max_interior_defect: i32,
    pub boundary_endpoints: usize,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportItem {
    pub volume: f64,
    pub budget: f64,
    pub c_fit: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundItem {
    pub total_bound: f64,
    pub measured_energy: f64,
    pub nu_mass: f64,
    /// ½|ν| log(1/ε) minus the certified bound: the realized correction.
    pub realized_correction: f64,
    pub sound: bool,
    /// Set when Θ could not be certified and only the interior Ω_ε = {d(x, ∂Ω) ≥ 2δ} counts.
    pub interior_only: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteriorFallback {
    pub margin: f64,
    pub interior_mass: f64,
    pub interior_bound: f64,
    pub interior_energy: f64,
    pub cubes: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub eps: f64,
    pub f_eps: f64,
    pub grid: GridSpec,
    pub skeleton: SkeletonEnergies,
    pub current: PolyhedralCurrent,
    pub quantization: Quantization,
    pub relative_boundary: RelativeBoundary,
    pub support: SupportItem,
    pub lower_bound: LowerBoundItem,
    pub certificates: Vec<Certificate>,
    pub boundary_certificate: Option<BoundaryCertificate>,
    pub fallback: Option<InteriorFallback>,
    pub norm_estimates: Vec<NormEstimate>,
}

/// Runs the whole pipeline on one field.
pub fn theorem1_report(field: &LatticeField3, eps: f64, cfg: &ReportConfig) -> Result<Theorem1Report> {
    let f_eps = crate::field::energy(field, eps, &|_| true).map_err(|e| e.at("energy"))?.f_eps;
    let mut gp = GridParams::new(cfg.delta, cfg.trials, cfg.seed);
    gp.c_grid = cfg.c_grid;
    let (grid, skeleton) = choose_grid(field, eps, &gp).map_err(|e| e.at("grid"))?;
    let nu = build_vortex_current(field, &grid, eps).map_err(|e| e.at("current"))?;
    report_for(field, eps, cfg, f_eps, grid, skeleton, nu)
}

/// The report on a given grid and current.
pub fn report_for(field: &LatticeField3, eps: f64, cfg: &ReportConfig, f_eps: f64, grid: GridSpec, skeleton: SkeletonEnergies, nu: PolyhedralCurrent) -> Result<Theorem1Report> {
    let quantization = quantization(&grid, &nu);
    let res = boundary_residual(&nu, field);
    let relative_boundary = RelativeBoundary {
        interior_defects: res.interior_defects,
        max_interior_defect: res.max_interior_defect,
        boundary_endpoints: res.boundary_endpoints,
        pass: res.interior_defects == 0,
    };
    let volume = support_volume(&nu, &grid);
    let budget = grid.delta * (1.0 + grid.delta * f_eps);
    let support = SupportItem {
        volume,
        budget,
        c_fit: volume / budget,
        pass: volume <= cfg.c_support * budget,
    };
    let idx = RegionIndex::new(field, &grid, eps);
    let certificates = coarea_certificate(field, &grid, &nu, &grid.kept_cubes, eps, &cfg.cert, &idx, f_eps).map_err(|e| e.at("certificates"))?;
    let (boundary_certificate, fallback) = match boundary_certificate(field, &grid, &nu, eps, &cfg.cert, &idx, f_eps) {
        Ok(b) => (Some(b), None),
        Err(Error::DomainNotSupported) => (None, Some(interior_fallback(field, &grid, &nu, &certificates, &idx))),
        Err(e) => return Err(e.at("boundary certificate")),
    };
    let mut total_bound: f64 = certificates.iter().map(|c| c.bound).sum();
    let mut sound = certificates.iter().all(|c| c.sound);
    if let Some(b) = &boundary_certificate {
        total_bound += b.certificate.bound;
        sound &= b.certificate.sound;
    }
    let nu_mass = match &fallback {
        Some(fb) => fb.interior_mass,
        None => nu.total_mass(),
    };
    let measured_energy = match &fallback {
        Some(fb) => fb.interior_energy,
        None => f_eps,
    };
    if let Some(fb) = &fallback {
        total_bound = fb.interior_bound;
    }
    sound &= total_bound <= measured_energy * (1.0 + 1e-9);
    let lower_bound = LowerBoundItem {
        total_bound,
        measured_energy,
        nu_mass,
        realized_correction: 0.5 * nu_mass * (1.0 / eps).ln() - total_bound,
        sound,
        interior_only: fallback.is_some(),
    };
    let mut norm_estimates = vec![dual_norm_estimate(field, &nu, &grid, eps, 1.0).map_err(|e| e.at("norm estimate"))?];
    if cfg.gamma != 1.0 {
        norm_estimates.push(dual_norm_estimate(field, &nu, &grid, eps, cfg.gamma).map_err(|e| e.at("norm estimate"))?);
    }
    Ok(Theorem1Report {
        eps,
        f_eps,
        grid,
        skeleton,
        current: nu,
        quantization,
        relative_boundary,
        support,
        lower_bound,
        certificates,
        boundary_certificate,
        fallback,
        norm_estimates,
    })
}

fn quantization(grid: &GridSpec, nu: &PolyhedralCurrent) -> Quantization {
    let unbalanced_cubes = grid
        .kept_cubes
        .iter()
        .filter(|&&n| grid.faces_of_cube(n).iter().map(|(f, s)| nu.face_set(*f).map_or(0, |set| s * set.total_degree())).sum::<i32>() != 0)
        .count();
    let integral = nu.segments.iter().all(|s| s.mult != 0);
    Quantization {
        faces: nu.faces.len(),
        components: nu.faces.iter().map(|(_, s)| s.components.len()).sum(),
        unbalanced_cubes,
        pass: unbalanced_cubes == 0 && integral,
    }
}

fn interior_fallback(field: &LatticeField3, grid: &GridSpec, nu: &PolyhedralCurrent, certs: &[Certificate], idx: &RegionIndex) -> InteriorFallback {
    let margin = 2.0 * grid.delta;
    let inside = |x: V3| field.signed_dist(x) >= margin;
    let mut interior_bound = 0.0;
    let mut interior_energy = 0.0;
    let mut cubes = 0;
    for (n, c) in grid.kept_cubes.iter().zip(certs) {
        if grid.cube_corners(*n).iter().all(|&x| inside(x)) {
            interior_bound += c.bound;
            interior_energy += idx.energy(field, idx.by_cube.get(n).map_or(&[][..], |v| v));
            cubes += 1;
        }
    }
    InteriorFallback {
        margin,
        interior_mass: mass(nu, &inside),
        interior_bound,
        interior_energy,
        cubes,
    }
}

/// Configuration points a certificate integrates over, for inspection.
pub fn certificate_values(zeta: &ZetaExact) -> (Vec<f64>, Vec<f64>) {
    let c: &SignedConfig = &zeta.config;
    (c.pos.iter().map(|&x| zeta.value(x)).collect(), c.neg.iter().map(|&x| zeta.value(x)).collect())
}
