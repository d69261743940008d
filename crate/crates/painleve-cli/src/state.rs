//! The state JSON document `{system, n, alpha, eta, q, p, t, aux}`.

use painleve::flow::Sample;
use painleve::loopalg::{PartitionKind, PartitionSpec};
use painleve::psys::{AuxState, Params, PhasePoint, SystemId, SystemKind};
use painleve::scalar::{parse_rational, Field};
use serde_json::{json, Map, Value};

use crate::Failure;

pub struct State<F> {
    pub sys: SystemId,
    pub spec: Option<PartitionSpec>,
    pub params: Params<F>,
    pub x: PhasePoint<F>,
    pub aux: Option<AuxState<F>>,
}

fn schema(msg: impl Into<String>) -> Failure {
    Failure::Schema(msg.into())
}

pub fn scalar<F: Field>(v: &Value, what: &str) -> Result<F, Failure> {
    match v {
        Value::Number(x) => x.as_f64().map(F::from_f64).ok_or_else(|| schema(format!("{what}: bad number"))),
        Value::String(s) => parse_rational(s)
            .map(|r| F::from_rational(&r))
            .ok_or_else(|| schema(format!("{what}: cannot parse {s:?}"))),
        _ => Err(schema(format!("{what}: expected a number or a rational string"))),
    }
}

fn vector<F: Field>(v: Option<&Value>, what: &str, len: usize) -> Result<Vec<F>, Failure> {
    let arr = v.and_then(Value::as_array).ok_or_else(|| schema(format!("missing array '{what}'")))?;
    if arr.len() != len {
        return Err(schema(format!("'{what}' needs {len} entries, got {}", arr.len())));
    }
    arr.iter().enumerate().map(|(i, x)| scalar(x, &format!("{what}[{i}]"))).collect()
}

pub fn parse_state<F: Field>(doc: &Value) -> Result<State<F>, Failure> {
    let obj = doc.as_object().ok_or_else(|| schema("state must be a JSON object"))?;
    let n = obj.get("n").and_then(Value::as_u64).ok_or_else(|| schema("missing integer 'n'"))? as usize;
    let spec = match obj.get("partition") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => {
            let kind: PartitionKind = s.parse().map_err(|e: painleve::PainleveError| schema(e.to_string()))?;
            Some(PartitionSpec::new(kind, n).map_err(|e| schema(e.to_string()))?)
        }
        Some(_) => return Err(schema("'partition' must be a string")),
    };
    let kind = match obj.get("system").and_then(Value::as_str) {
        Some(s) => s.parse::<SystemKind>().map_err(|e| schema(e.to_string()))?,
        None => spec.map(|s| SystemKind::of_partition(s.kind)).ok_or_else(|| schema("missing 'system'"))?,
    };
    let sys = SystemId::new(kind, n).map_err(|e| schema(e.to_string()))?;
    if let Some(spec) = spec {
        if SystemId::of_partition(spec) != sys {
            return Err(schema(format!("partition {spec} does not realize {sys}")));
        }
    }
    let alpha = vector(obj.get("alpha"), "alpha", sys.alpha_len())?;
    let eta = match obj.get("eta") {
        None | Some(Value::Null) => F::zero(),
        Some(v) => scalar(v, "eta")?,
    };
    let q = vector(obj.get("q"), "q", n)?;
    let p = vector(obj.get("p"), "p", n)?;
    let t = scalar(obj.get("t").ok_or_else(|| schema("missing 't'"))?, "t")?;
    let aux = match (spec, obj.get("aux")) {
        (_, None | Some(Value::Null)) => None,
        (None, Some(_)) => return Err(schema("'aux' given without 'partition'")),
        (Some(spec), Some(v)) => Some(parse_aux(spec.kind, v)?),
    };
    Ok(State { sys, spec, params: Params::new(alpha, eta), x: PhasePoint::new(q, p, t), aux })
}

fn aux_names(kind: PartitionKind) -> &'static [&'static str] {
    let probe: AuxState<painleve::scalar::C64> = match kind {
        PartitionKind::NplusNplus => AuxState::W(Field::one()),
        PartitionKind::TwoNminusOneOne | PartitionKind::TwoNOne => AuxState::Lam(Field::one()),
        PartitionKind::NNOne => AuxState::MuLam(Field::one(), Field::one()),
    };
    probe.names()
}

fn parse_aux<F: Field>(kind: PartitionKind, v: &Value) -> Result<AuxState<F>, Failure> {
    let names = aux_names(kind);
    let vals: Vec<F> = match v {
        Value::Array(a) => a.iter().enumerate().map(|(i, x)| scalar(x, &format!("aux[{i}]"))).collect::<Result<_, _>>()?,
        Value::Object(m) => names
            .iter()
            .map(|k| m.get(*k).ok_or_else(|| schema(format!("aux needs '{k}'"))).and_then(|x| scalar(x, k)))
            .collect::<Result<_, _>>()?,
        _ => return Err(schema("'aux' must be an array or an object")),
    };
    AuxState::from_values(kind, &vals).map_err(|e| schema(e.to_string()))
}

/// Exact values print as rational strings, floats as numbers.
pub fn render<F: Field>(v: &F, exact: bool) -> Value {
    if exact {
        Value::String(v.to_string())
    } else {
        let m: Map<String, Value> = v.json();
        m.get("re").cloned().unwrap_or(Value::Null)
    }
}

pub fn render_all<F: Field>(v: &[F], exact: bool) -> Value {
    Value::Array(v.iter().map(|x| render(x, exact)).collect())
}

/// State document for one trajectory sample.
pub fn state_json(sys: SystemId, spec: Option<PartitionSpec>, alpha: &[f64], eta: f64, s: &Sample) -> Value {
    let mut doc = json!({
        "system": sys.kind.label(),
        "n": sys.n,
        "alpha": alpha,
        "eta": eta,
        "q": s.q,
        "p": s.p,
        "t": s.t,
    });
    if let Some(spec) = spec {
        doc["partition"] = json!(spec.kind.label());
        let names = aux_names(spec.kind);
        doc["aux"] = Value::Object(names.iter().map(|k| k.to_string()).zip(s.aux.iter().map(|a| json!(a))).collect());
    }
    doc
}
