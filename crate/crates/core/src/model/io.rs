//! JSON model files.
//!
//! ```text
//! { "schema": "tendonid-model-v1", "kind": "state_space" | "arx" | "sindy",
//!   "p": 4, "q": 2, "sample_time_s": 0.03, "payload": { … } }
//! ```
//!
//! Matrices are nested arrays, row-major. Payloads:
//! - `state_space`: `a`, `b`, `c`, `d`
//! - `arx`: `na`, `nb`, `nk` (order matrices), `a[i][j][l]`, `b[i][j][l]`
//! - `sindy`: `library` (spec), `terms` (ordered column names), `xi`
//!   (terms × q), `lambda`, `threshold_scales`

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ModelKind, StateSpaceModel};
use crate::arx::ArxModel;
use crate::error::{Error, Result};
use crate::sindyc::{Library, LibrarySpec, SindyModel};

pub const MODEL_SCHEMA: &str = "tendonid-model-v1";

#[derive(Serialize, Deserialize)]
struct Envelope {
    schema: String,
    kind: String,
    p: usize,
    q: usize,
    sample_time_s: f64,
    payload: Value,
}

#[derive(Serialize, Deserialize)]
struct SsPayload {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    d: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ArxPayload {
    na: Vec<Vec<usize>>,
    nb: Vec<Vec<usize>>,
    nk: Vec<Vec<usize>>,
    a: Vec<Vec<Vec<f64>>>,
    b: Vec<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct SindyPayload {
    library: LibrarySpec,
    terms: Vec<String>,
    xi: Vec<Vec<f64>>,
    lambda: f64,
    threshold_scales: Vec<f64>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// `cols` is needed for matrices with zero rows.
fn matrix_from_rows(name: &str, rows: &[Vec<f64>], cols: usize) -> Result<DMatrix<f64>> {
    if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
        return Err(Error::Dimension(format!(
            "{name}: row {bad} has {} entries, expected {cols}",
            rows[bad].len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn model_to_json(model: &ModelKind) -> Result<String> {
    let payload = match model {
        ModelKind::StateSpace(m) => serde_json::to_value(SsPayload {
            a: rows_of(m.a()),
            b: rows_of(m.b()),
            c: rows_of(m.c()),
            d: rows_of(m.d()),
        }),
        ModelKind::Arx(m) => serde_json::to_value(ArxPayload {
            na: m.na().to_vec(),
            nb: m.nb().to_vec(),
            nk: m.nk().to_vec(),
            a: m.a_coeffs().to_vec(),
            b: m.b_coeffs().to_vec(),
        }),
        ModelKind::Sindy(m) => serde_json::to_value(SindyPayload {
            library: *m.library().spec(),
            terms: m.library().names(),
            xi: rows_of(m.xi()),
            lambda: m.lambda(),
            threshold_scales: m.threshold_scales().to_vec(),
        }),
    }
    .map_err(|e| Error::Numeric(format!("model serialization: {e}")))?;
    let env = Envelope {
        schema: MODEL_SCHEMA.to_string(),
        kind: model.kind_name().to_string(),
        p: model.num_inputs(),
        q: model.num_outputs(),
        sample_time_s: model.sample_time_s(),
        payload,
    };
    serde_json::to_string_pretty(&env).map_err(|e| Error::Numeric(format!("model serialization: {e}")))
}

pub fn model_from_json(text: &str) -> Result<ModelKind> {
    let raw: Value = serde_json::from_str(text).map_err(|e| Error::Schema(format!("not valid JSON: {e}")))?;
    match raw.get("schema").and_then(Value::as_str) {
        Some(MODEL_SCHEMA) => {}
        Some(other) => {
            return Err(Error::Schema(format!(
                "unsupported schema version \"{other}\" (expected \"{MODEL_SCHEMA}\")"
            )))
        }
        None => return Err(Error::Schema("missing schema field".into())),
    }
    let env: Envelope = serde_json::from_value(raw).map_err(|e| Error::Schema(e.to_string()))?;
    let bad_payload = |e: serde_json::Error| Error::Schema(format!("{} payload: {e}", env.kind));

    let model: ModelKind = match env.kind.as_str() {
        "state_space" => {
            let p: SsPayload = serde_json::from_value(env.payload.clone()).map_err(bad_payload)?;
            let n = p.a.len();
            let a = matrix_from_rows("A", &p.a, n)?;
            let b = matrix_from_rows("B", &p.b, env.p)?;
            let c = matrix_from_rows("C", &p.c, n)?;
            let d = matrix_from_rows("D", &p.d, env.p)?;
            StateSpaceModel::new(a, b, c, d, env.sample_time_s)?.into()
        }
        "arx" => {
            let p: ArxPayload = serde_json::from_value(env.payload.clone()).map_err(bad_payload)?;
            ArxModel::new(p.na, p.nb, p.nk, p.a, p.b, env.sample_time_s)?.into()
        }
        "sindy" => {
            let p: SindyPayload = serde_json::from_value(env.payload.clone()).map_err(bad_payload)?;
            let lib = Library::new(p.library, env.q, env.p)?;
            let names = lib.names();
            if names != p.terms {
                return Err(Error::Schema(format!(
                    "term list does not match the library spec (expected {names:?})"
                )));
            }
            let xi = matrix_from_rows("xi", &p.xi, env.q)?;
            SindyModel::new(lib, xi, p.lambda, p.threshold_scales, env.sample_time_s)?.into()
        }
        other => return Err(Error::Schema(format!("unknown model kind \"{other}\""))),
    };
    if model.num_inputs() != env.p || model.num_outputs() != env.q {
        return Err(Error::Dimension(format!(
            "header declares p={}, q={} but payload is {}-in/{}-out",
            env.p,
            env.q,
            model.num_inputs(),
            model.num_outputs()
        )));
    }
    Ok(model)
}

pub fn save_model(model: &ModelKind, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = model_to_json(model)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelKind> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    model_from_json(&text)
}
