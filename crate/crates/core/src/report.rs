//! Report assembly, canonical JSON and replay verification.

use crate::current::{boundary_residual, PolyhedralCurrent, Provenance, Segment};
use crate::field::LatticeField3;
use crate::lower_bound::{theorem1_report, ReportConfig, Theorem1Report};
use crate::{Error, Result};
use serde_json::{json, Value};
use std::fmt::Write;
use std::time::Instant;

pub const FORMAT_VERSION: &str = "glvortex-report/1";
pub const GLF3_VERSION: &str = "GLF3/1";

/// `git describe`-style version, taken from GLVORTEX_GIT_DESCRIBE at build time when set.
pub fn version_string() -> String {
    option_env!("GLVORTEX_GIT_DESCRIBE")
        .map(str::to_string)
        .unwrap_or_else(|| format!("v{}", env!("CARGO_PKG_VERSION")))
}

/// JSON with sorted object keys, floats at 17 significant digits, no whitespace, and the
/// top-level "timings" entry dropped.
pub fn canonical(v: &Value) -> String {
    let mut s = String::new();
    match v {
        Value::Object(m) => {
            let mut m = m.clone();
            m.remove("timings");
            write_value(&Value::Object(m), &mut s);
        }
        _ => write_value(v, &mut s),
    }
    s
}

/// Same formatting as [`canonical`] but keeps every entry.
pub fn canonical_full(v: &Value) -> String {
    let mut s = String::new();
    write_value(v, &mut s);
    s
}

fn write_value(v: &Value, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                let x = n.as_f64().unwrap();
                write!(out, "{x:.16e}").unwrap();
            } else {
                write!(out, "{n}").unwrap();
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).unwrap()),
        Value::Array(a) => {
            out.push('[');
            for (i, x) in a.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(x, out);
            }
            out.push(']');
        }
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).unwrap());
                out.push(':');
                write_value(&m[k.as_str()], out);
            }
            out.push('}');
        }
    }
}

fn to_value<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).unwrap_or(Value::Null)
}

pub fn field_info(field: &LatticeField3) -> Value {
    json!({
        "dims": field.dims,
        "h": field.h,
        "origin": field.origin,
        "boundary": to_value(&field.boundary),
        "has_a": field.a.is_some(),
        "has_mask": field.mask.is_some(),
        "format": GLF3_VERSION,
    })
}

/// Report document for a finished pipeline run.
pub fn report_json(rep: &Theorem1Report, field: &LatticeField3, cfg: &ReportConfig) -> Value {
    let vortex_sets: Vec<Value> = rep
        .current
        .faces
        .iter()
        .filter(|(_, s)| !s.components.is_empty())
        .map(|(f, s)| json!({"face": to_value(f), "set": to_value(s)}))
        .collect();
    json!({
        "format_version": FORMAT_VERSION,
        "version": version_string(),
        "seed": cfg.seed,
        "config": {"eps": rep.eps, "report": to_value(cfg)},
        "field": field_info(field),
        "f_eps": rep.f_eps,
        "grid": to_value(&rep.grid),
        "skeleton": to_value(&rep.skeleton),
        "vortex_sets": vortex_sets,
        "current": rep.current.to_json(&rep.grid),
        "mass": rep.current.total_mass(),
        "items": {
            "quantization": to_value(&rep.quantization),
            "relative_boundary": to_value(&rep.relative_boundary),
            "support": to_value(&rep.support),
            "lower_bound": to_value(&rep.lower_bound),
        },
        "certificates": to_value(&rep.certificates),
        "boundary_certificate": to_value(&rep.boundary_certificate),
        "fallback": to_value(&rep.fallback),
        "norm_estimates": to_value(&rep.norm_estimates),
    })
}

/// Runs the pipeline and returns the report with wall-clock timings attached.
pub fn analyze(field: &LatticeField3, eps: f64, cfg: &ReportConfig) -> Result<Value> {
    let t0 = Instant::now();
    let rep = theorem1_report(field, eps, cfg)?;
    let mut v = report_json(&rep, field, cfg);
    v["timings"] = json!({"total_s": t0.elapsed().as_secs_f64()});
    Ok(v)
}

/// Certificates only.
pub fn lower_bound_json(rep: &Theorem1Report, cfg: &ReportConfig) -> Value {
    json!({
        "format_version": FORMAT_VERSION,
        "version": version_string(),
        "seed": cfg.seed,
        "config": {"eps": rep.eps, "report": to_value(cfg)},
        "f_eps": rep.f_eps,
        "certificates": to_value(&rep.certificates),
        "boundary_certificate": to_value(&rep.boundary_certificate),
        "fallback": to_value(&rep.fallback),
        "lower_bound": to_value(&rep.lower_bound),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Verification {
    pub checks: Vec<(String, bool)>,
}

impl Verification {
    pub fn ok(&self) -> bool {
        self.checks.iter().all(|c| c.1)
    }
}

fn segments_of(v: &Value) -> Option<Vec<Segment>> {
    v["current"]["segments"]
        .as_array()?
        .iter()
        .map(|s| {
            let a = s.as_array()?;
            let f = |i: usize| a.get(i).and_then(Value::as_f64);
            Some(Segment {
                a: [f(0)?, f(1)?, f(2)?],
                b: [f(3)?, f(4)?, f(5)?],
                mult: a.get(6)?.as_i64()? as i32,
                tag: Provenance::Theta,
            })
        })
        .collect()
}

fn item_pass(v: &Value, item: &str, key: &str) -> bool {
    v["items"][item][key].as_bool().unwrap_or(false)
}

/// Replays a report against its field: the config echo must reproduce the canonical document
/// exactly, the stored segments must have no interior endpoints, and the stored items must pass.
pub fn verify(report: &Value, field: &LatticeField3) -> Result<Verification> {
    let mut checks = vec![];
    checks.push(("format_version".to_string(), report["format_version"] == FORMAT_VERSION));
    let eps = report["config"]["eps"].as_f64().ok_or_else(|| Error::ParamsInfeasible("report lacks config.eps".into()))?;
    let cfg: ReportConfig = serde_json::from_value(report["config"]["report"].clone()).map_err(|e| Error::ParamsInfeasible(format!("config echo: {e}")))?;
    let segs = segments_of(report);
    checks.push(("segments_parse".to_string(), segs.is_some()));
    if let Some(segs) = segs {
        let mut nu = PolyhedralCurrent::empty();
        nu.segments = segs;
        checks.push(("segments_closed_in_domain".to_string(), boundary_residual(&nu, field).interior_defects == 0));
    }
    for (item, key) in [("quantization", "pass"), ("relative_boundary", "pass"), ("lower_bound", "sound")] {
        checks.push((format!("{item}.{key}"), item_pass(report, item, key)));
    }
    let rerun = report_json(&theorem1_report(field, eps, &cfg).map_err(|e| e.at("replay"))?, field, &cfg);
    let mut stored = report.clone();
    if let Value::Object(m) = &mut stored {
        // the version of the verifying binary may differ
        m.insert("version".into(), Value::String(version_string()));
    }
    checks.push(("replay_identical".to_string(), canonical(&stored) == canonical(&rerun)));
    Ok(Verification { checks })
}

/// Removes wall-clock entries recursively; used when comparing documents by value.
pub fn strip_timings(v: &mut Value) {
    if let Value::Object(m) = v {
        m.remove("timings");
        for x in m.values_mut() {
            strip_timings(x);
        }
    } else if let Value::Array(a) = v {
        a.iter_mut().for_each(strip_timings);
    }
}
