//! File formats: protocols, testers and subspace caches as JSON documents
//! with complex entries stored as [re, im] pairs (row-major nested arrays
//! for matrices), plus the scenario configuration schema and CSV emission.
//!
//! Serialization goes through serde_json's shortest-roundtrip float
//! rendering, so emitted decimals parse back to bit-identical doubles.

use crate::linalg::{ComplexMatrix, PureState};
use crate::network::TesterChoi;
use crate::protocols::{
    LambdaDist, PrepareMeasureProtocol, ProtocolChoice, ScenarioConfig, TableRow,
};
use crate::subspace::{Provenance, SubspaceBasis};
use num_complex::Complex64 as C64;
use serde_json::{json, Map, Value};

pub type ParseResult<T> = Result<T, String>;

fn bad(path: &str, what: &str) -> String {
    format!("{path}: {what}")
}

pub fn complex_to_json(z: C64) -> Value {
    json!([z.re, z.im])
}

pub fn complex_from_json(v: &Value, path: &str) -> ParseResult<C64> {
    let arr = v
        .as_array()
        .ok_or_else(|| bad(path, "expected [re, im] pair"))?;
    if arr.len() != 2 {
        return Err(bad(path, "expected exactly two numbers"));
    }
    let re = arr[0]
        .as_f64()
        .ok_or_else(|| bad(&format!("{path}[0]"), "expected a number"))?;
    let im = arr[1]
        .as_f64()
        .ok_or_else(|| bad(&format!("{path}[1]"), "expected a number"))?;
    Ok(C64::new(re, im))
}

pub fn cvec_to_json(v: &[C64]) -> Value {
    Value::Array(v.iter().map(|&z| complex_to_json(z)).collect())
}

pub fn cvec_from_json(v: &Value, path: &str) -> ParseResult<Vec<C64>> {
    let arr = v
        .as_array()
        .ok_or_else(|| bad(path, "expected an array of [re, im] pairs"))?;
    arr.iter()
        .enumerate()
        .map(|(i, x)| complex_from_json(x, &format!("{path}[{i}]")))
        .collect()
}

pub fn matrix_to_json(m: &ComplexMatrix) -> Value {
    Value::Array((0..m.rows()).map(|i| cvec_to_json(m.row(i))).collect())
}

pub fn matrix_from_json(v: &Value, path: &str) -> ParseResult<ComplexMatrix> {
    let rows = v
        .as_array()
        .ok_or_else(|| bad(path, "expected an array of rows"))?;
    let mut data: Vec<C64> = Vec::new();
    let mut cols = None;
    for (i, row) in rows.iter().enumerate() {
        let r = cvec_from_json(row, &format!("{path}[{i}]"))?;
        match cols {
            None => cols = Some(r.len()),
            Some(c) if c != r.len() => {
                return Err(bad(&format!("{path}[{i}]"), "ragged matrix rows"))
            }
            _ => {}
        }
        data.extend(r);
    }
    let cols = cols.unwrap_or(0);
    ComplexMatrix::new(rows.len(), cols, data).map_err(|e| bad(path, &e.to_string()))
}

// ---------------------------------------------------------------------------
// Protocols
// ---------------------------------------------------------------------------

pub fn protocol_to_json(p: &PrepareMeasureProtocol, certified: bool) -> Value {
    json!({
        "id": p.id,
        "n": p.n,
        "d_p": p.d_p,
        "input_state": cvec_to_json(p.input_state.amplitudes()),
        "projector": Value::Array(
            p.projector.vectors().iter().map(|v| cvec_to_json(v)).collect()
        ),
        "projector_rank": p.projector.dim(),
        "tol": p.projector.tol(),
        "provenance": serde_json::to_value(&p.projector.provenance).expect("serializable"),
        "certified": certified,
    })
}

pub fn protocol_from_json(v: &Value, path: &str) -> ParseResult<PrepareMeasureProtocol> {
    let obj = v
        .as_object()
        .ok_or_else(|| bad(path, "expected a protocol object"))?;
    let id = obj
        .get("id")
        .and_then(Value::as_str)
        .ok_or_else(|| bad(&format!("{path}.id"), "expected a string"))?;
    let n = obj
        .get("n")
        .and_then(Value::as_u64)
        .ok_or_else(|| bad(&format!("{path}.n"), "expected a positive integer"))? as usize;
    let d_p = obj
        .get("d_p")
        .and_then(Value::as_u64)
        .ok_or_else(|| bad(&format!("{path}.d_p"), "expected a positive integer"))?
        as usize;
    let input = cvec_from_json(
        obj.get("input_state")
            .ok_or_else(|| bad(&format!("{path}.input_state"), "missing"))?,
        &format!("{path}.input_state"),
    )?;
    let input = PureState::new(input).map_err(|e| bad(&format!("{path}.input_state"), &e.to_string()))?;
    let proj_val = obj
        .get("projector")
        .and_then(Value::as_array)
        .ok_or_else(|| bad(&format!("{path}.projector"), "expected an array of vectors"))?;
    let mut vectors = Vec::with_capacity(proj_val.len());
    for (i, pv) in proj_val.iter().enumerate() {
        vectors.push(cvec_from_json(pv, &format!("{path}.projector[{i}]"))?);
    }
    let tol = obj.get("tol").and_then(Value::as_f64).unwrap_or(1e-9);
    let provenance = obj
        .get("provenance")
        .cloned()
        .and_then(|p| serde_json::from_value::<Provenance>(p).ok())
        .unwrap_or_else(|| Provenance::synthetic("loaded from file"));
    let ambient = d_p.pow(n as u32);
    let projector = SubspaceBasis::new(ambient, vectors, tol, provenance)
        .map_err(|e| bad(&format!("{path}.projector"), &e))?;
    PrepareMeasureProtocol::new(id, n, d_p, input, projector)
        .map_err(|e| bad(path, &e.to_string()))
}

// ---------------------------------------------------------------------------
// Testers
// ---------------------------------------------------------------------------

pub fn tester_to_json(t: &TesterChoi) -> Value {
    json!({
        "n": t.n,
        "d_p": t.d_p,
        "m0": matrix_to_json(&t.m0),
        "m1": matrix_to_json(&t.m1),
        "gammas": Value::Array(t.gammas.iter().map(matrix_to_json).collect()),
    })
}

pub fn tester_from_json(v: &Value) -> ParseResult<TesterChoi> {
    let obj = v.as_object().ok_or_else(|| bad("$", "expected a tester object"))?;
    let n = obj
        .get("n")
        .and_then(Value::as_u64)
        .ok_or_else(|| bad("$.n", "expected a positive integer"))? as usize;
    let d_p = obj
        .get("d_p")
        .and_then(Value::as_u64)
        .ok_or_else(|| bad("$.d_p", "expected a positive integer"))? as usize;
    let m0 = matrix_from_json(
        obj.get("m0").ok_or_else(|| bad("$.m0", "missing"))?,
        "$.m0",
    )?;
    let m1 = matrix_from_json(
        obj.get("m1").ok_or_else(|| bad("$.m1", "missing"))?,
        "$.m1",
    )?;
    let gammas_val = obj
        .get("gammas")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("$.gammas", "expected an array of matrices"))?;
    let mut gammas = Vec::with_capacity(gammas_val.len());
    for (i, g) in gammas_val.iter().enumerate() {
        gammas.push(matrix_from_json(g, &format!("$.gammas[{i}]"))?);
    }
    Ok(TesterChoi {
        n,
        d_p,
        m0,
        m1,
        gammas,
    })
}

// ---------------------------------------------------------------------------
// Subspace caches
// ---------------------------------------------------------------------------

/// Cache key for identified subspaces.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SubspaceKey {
    pub n: usize,
    pub d_s: usize,
    pub d_p: usize,
    pub family_id: String,
    pub tol: f64,
}

pub fn subspace_to_json(basis: &SubspaceBasis, key: &SubspaceKey) -> Value {
    json!({
        "key": serde_json::to_value(key).expect("serializable"),
        "ambient_dim": basis.ambient_dim(),
        "dim": basis.dim(),
        "vectors": Value::Array(basis.vectors().iter().map(|v| cvec_to_json(v)).collect()),
        "provenance": serde_json::to_value(&basis.provenance).expect("serializable"),
    })
}

pub fn subspace_from_json(v: &Value) -> ParseResult<(SubspaceBasis, SubspaceKey)> {
    let obj = v.as_object().ok_or_else(|| bad("$", "expected a cache object"))?;
    let key: SubspaceKey = serde_json::from_value(
        obj.get("key")
            .cloned()
            .ok_or_else(|| bad("$.key", "missing"))?,
    )
    .map_err(|e| bad("$.key", &e.to_string()))?;
    let ambient = obj
        .get("ambient_dim")
        .and_then(Value::as_u64)
        .ok_or_else(|| bad("$.ambient_dim", "expected a positive integer"))?
        as usize;
    let vecs_val = obj
        .get("vectors")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("$.vectors", "expected an array"))?;
    let mut vectors = Vec::with_capacity(vecs_val.len());
    for (i, vv) in vecs_val.iter().enumerate() {
        vectors.push(cvec_from_json(vv, &format!("$.vectors[{i}]"))?);
    }
    let provenance: Provenance = obj
        .get("provenance")
        .cloned()
        .and_then(|p| serde_json::from_value(p).ok())
        .unwrap_or_else(|| Provenance::synthetic("loaded from cache"));
    let basis = SubspaceBasis::new(ambient, vectors, key.tol, provenance)
        .map_err(|e| bad("$.vectors", &e))?;
    Ok((basis, key))
}

// ---------------------------------------------------------------------------
// Scenario configuration
// ---------------------------------------------------------------------------

fn get_f64(obj: &Map<String, Value>, path: &str, key: &str) -> ParseResult<f64> {
    obj.get(key)
        .ok_or_else(|| bad(&format!("{path}.{key}"), "missing"))?
        .as_f64()
        .ok_or_else(|| bad(&format!("{path}.{key}"), "expected a number"))
}

fn get_u64(obj: &Map<String, Value>, path: &str, key: &str) -> ParseResult<u64> {
    obj.get(key)
        .ok_or_else(|| bad(&format!("{path}.{key}"), "missing"))?
        .as_u64()
        .ok_or_else(|| bad(&format!("{path}.{key}"), "expected a nonnegative integer"))
}

/// Parse and validate a scenario configuration, reporting schema violations
/// with their JSON path.
pub fn scenario_config_from_json(v: &Value) -> ParseResult<ScenarioConfig> {
    let obj = v.as_object().ok_or_else(|| bad("$", "expected an object"))?;

    let protocols_val = obj
        .get("protocols")
        .ok_or_else(|| bad("$.protocols", "missing"))?
        .as_array()
        .ok_or_else(|| bad("$.protocols", "expected an array"))?;
    if protocols_val.is_empty() {
        return Err(bad("$.protocols", "must not be empty"));
    }
    let mut protocols = Vec::with_capacity(protocols_val.len());
    for (i, pv) in protocols_val.iter().enumerate() {
        match pv {
            Value::String(s) => protocols.push(ProtocolChoice::Id(s.clone())),
            Value::Object(_) => protocols.push(ProtocolChoice::Inline(protocol_from_json(
                pv,
                &format!("$.protocols[{i}]"),
            )?)),
            _ => {
                return Err(bad(
                    &format!("$.protocols[{i}]"),
                    "expected a protocol id string or an inline protocol object",
                ))
            }
        }
    }

    let t_val = obj
        .get("T_grid")
        .ok_or_else(|| bad("$.T_grid", "missing"))?
        .as_array()
        .ok_or_else(|| bad("$.T_grid", "expected an array of numbers"))?;
    let mut t_grid = Vec::with_capacity(t_val.len());
    for (i, t) in t_val.iter().enumerate() {
        t_grid.push(
            t.as_f64()
                .ok_or_else(|| bad(&format!("$.T_grid[{i}]"), "expected a number"))?,
        );
    }
    if t_grid.is_empty() {
        return Err(bad("$.T_grid", "must not be empty"));
    }

    let delta = get_f64(obj, "$", "delta")?;

    let lam_obj = obj
        .get("lambda")
        .ok_or_else(|| bad("$.lambda", "missing"))?
        .as_object()
        .ok_or_else(|| bad("$.lambda", "expected an object"))?;
    let dist = lam_obj
        .get("dist")
        .and_then(Value::as_str)
        .ok_or_else(|| bad("$.lambda.dist", "expected a string"))?;
    if dist != "uniform" {
        return Err(bad("$.lambda.dist", "only \"uniform\" is supported"));
    }
    let lambda = LambdaDist {
        dist: dist.to_string(),
        lo: get_f64(lam_obj, "$.lambda", "lo")?,
        hi: get_f64(lam_obj, "$.lambda", "hi")?,
    };
    if lambda.hi < lambda.lo {
        return Err(bad("$.lambda", "hi must be >= lo"));
    }

    let samples = get_u64(obj, "$", "samples")? as usize;
    if samples < 2 {
        return Err(bad("$.samples", "must be >= 2"));
    }
    let seed = get_u64(obj, "$", "seed")?;

    let ham_obj = obj
        .get("hamiltonian")
        .ok_or_else(|| bad("$.hamiltonian", "missing"))?
        .as_object()
        .ok_or_else(|| bad("$.hamiltonian", "expected an object of Pauli coefficients"))?;
    let mut hamiltonian = std::collections::BTreeMap::new();
    for (k, coeff) in ham_obj {
        let c = coeff
            .as_f64()
            .ok_or_else(|| bad(&format!("$.hamiltonian.{k}"), "expected a number"))?;
        hamiltonian.insert(k.clone(), c);
    }

    Ok(ScenarioConfig {
        protocols,
        t_grid,
        delta,
        lambda,
        samples,
        seed,
        hamiltonian,
    })
}

// ---------------------------------------------------------------------------
// CSV emission
// ---------------------------------------------------------------------------

pub fn table_to_csv(rows: &[TableRow]) -> String {
    let mut out = String::from("m,mean,stderr\n");
    for r in rows {
        out.push_str(&format!("{},{:.17e},{:.17e}\n", r.m, r.mean, r.stderr));
    }
    out
}

pub fn curves_to_csv(rows: &[crate::protocols::CurveRow]) -> String {
    let mut out = String::from("T,protocol_id,mean,stderr,samples\n");
    for r in rows {
        out.push_str(&format!(
            "{:.17e},{},{:.17e},{:.17e},{}\n",
            r.t, r.protocol_id, r.mean, r.stderr, r.samples
        ));
    }
    out
}
