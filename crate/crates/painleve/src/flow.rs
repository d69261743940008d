//! Adaptive Dormand–Prince 5(4) integration of the Hamiltonian flows and the
//! auxiliary gauge variables, with singularity guards and CSV persistence.

use std::io::{Read, Write};

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{PainleveError, Result};
use crate::laxpair::{
    constraint_residual, on_shell_tangent, residual_with_tangent, LaxData, LaxMutation, RootOfT, Tangent,
};
use crate::loopalg::{PartitionKind, PartitionSpec};
use crate::psys::{aux_flow, vector_field, AuxState, Params, PhasePoint, SystemId, SystemKind};
use crate::scalar::{Field, C64};

#[derive(Clone, Debug)]
pub struct FlowOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Minimum allowed distance to a guarded denominator.
    pub guard: f64,
    pub max_steps: usize,
    /// Dense output times; when `None` every accepted step is recorded.
    pub output: Option<Vec<f64>>,
    /// Disable error control and take this many equal steps.
    pub fixed_steps: Option<usize>,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions { rtol: 1e-10, atol: 1e-12, guard: 1e-8, max_steps: 200_000, output: None, fixed_steps: None }
    }
}

impl FlowOptions {
    pub fn tol(rtol: f64, atol: f64) -> Self {
        FlowOptions { rtol, atol, ..Default::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub aux: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FlowStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// One accepted step with its continuous extension.
#[derive(Clone, Debug)]
struct Segment {
    t: f64,
    h: f64,
    rcont: [Vec<f64>; 5],
}

impl Segment {
    fn eval(&self, t: f64) -> Vec<f64> {
        let th = (t - self.t) / self.h;
        let th1 = 1.0 - th;
        let [r1, r2, r3, r4, r5] = &self.rcont;
        (0..r1.len()).map(|i| r1[i] + th * (r2[i] + th1 * (r3[i] + th * (r4[i] + th1 * r5[i])))).collect()
    }

    fn deriv(&self, t: f64) -> Vec<f64> {
        let th = (t - self.t) / self.h;
        let th1 = 1.0 - th;
        let [_, r2, r3, r4, r5] = &self.rcont;
        (0..r2.len())
            .map(|i| {
                let a = r4[i] + th1 * r5[i];
                let b = r3[i] + th * a;
                let db = a - th * r5[i];
                let cc = r2[i] + th1 * b;
                let dc = -b + th1 * db;
                (cc + th * dc) / self.h
            })
            .collect()
    }
}

#[derive(Debug)]
pub struct Trajectory {
    pub sys: SystemId,
    pub spec: Option<PartitionSpec>,
    pub params: Params<C64>,
    pub aux_names: Vec<String>,
    /// Sign of each aux variable; magnitudes are carried as logarithms.
    aux_signs: Vec<f64>,
    pub samples: Vec<Sample>,
    pub rtol: f64,
    pub atol: f64,
    pub stats: FlowStats,
    /// Why integration stopped before the requested end, if it did.
    pub halted: Option<PainleveError>,
    segments: Vec<Segment>,
}

#[derive(Serialize)]
struct TrajectoryMeta<'a> {
    system: String,
    n: usize,
    partition: Option<&'a str>,
    alpha: Vec<f64>,
    eta: f64,
    rtol: f64,
    atol: f64,
    stats: &'a FlowStats,
    samples: usize,
    halted: Option<String>,
}

impl Trajectory {
    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }

    pub fn end_time(&self) -> Option<f64> {
        self.segments.last().map(|s| s.t + s.h).or(self.samples.first().map(|s| s.t))
    }

    /// Dense evaluation anywhere inside the integrated window.
    pub fn eval(&self, t: f64) -> Option<Sample> {
        let seg = self.segments.iter().find(|s| {
            let (a, b) = (s.t, s.t + s.h);
            (a.min(b)..=a.max(b)).contains(&t)
        })?;
        Some(self.unpack(t, &seg.eval(t)))
    }

    fn unpack(&self, t: f64, y: &[f64]) -> Sample {
        unpack(self.sys.n, &self.aux_signs, t, y)
    }

    /// `d/dt` of the packed state `(q, p, log|aux|)` at sample `k`: from the
    /// dense output when available, otherwise by three-point differences.
    fn tangent_at(&self, k: usize) -> Vec<f64> {
        let s = &self.samples[k];
        if let Some(seg) = self.segments.iter().find(|g| {
            let (a, b) = (g.t, g.t + g.h);
            (a.min(b)..=a.max(b)).contains(&s.t)
        }) {
            return seg.deriv(s.t);
        }
        let pack = |s: &Sample| -> Vec<f64> {
            s.q.iter().chain(&s.p).copied().chain(s.aux.iter().map(|a| a.abs().ln())).collect()
        };
        let m = self.samples.len();
        if m < 2 {
            return vec![0.0; pack(s).len()];
        }
        let (i0, i1, i2) = match k {
            0 => (0, 1, 2.min(m - 1)),
            _ if k == m - 1 => ((m - 1).saturating_sub(2), m - 2, m - 1),
            _ => (k - 1, k, k + 1),
        };
        let (y0, y1, y2) = (pack(&self.samples[i0]), pack(&self.samples[i1]), pack(&self.samples[i2]));
        let (t0, t1, t2) = (self.samples[i0].t, self.samples[i1].t, self.samples[i2].t);
        if i0 == i1 || i1 == i2 {
            return y2.iter().zip(&y1).map(|(a, b)| (a - b) / (t2 - t1)).collect();
        }
        // derivative of the quadratic through the three samples
        let x = s.t;
        let w0 = (2.0 * x - t1 - t2) / ((t0 - t1) * (t0 - t2));
        let w1 = (2.0 * x - t0 - t2) / ((t1 - t0) * (t1 - t2));
        let w2 = (2.0 * x - t0 - t1) / ((t2 - t0) * (t2 - t1));
        (0..y0.len()).map(|i| w0 * y0[i] + w1 * y1[i] + w2 * y2[i]).collect()
    }

    pub fn metadata_json(&self) -> serde_json::Value {
        let meta = TrajectoryMeta {
            system: self.sys.kind.label().to_string(),
            n: self.sys.n,
            partition: self.spec.map(|s| s.kind.label()),
            alpha: self.params.alpha.iter().map(|a| a.re).collect(),
            eta: self.params.eta.re,
            rtol: self.rtol,
            atol: self.atol,
            stats: &self.stats,
            samples: self.samples.len(),
            halted: self.halted.as_ref().map(|e| e.to_string()),
        };
        serde_json::to_value(meta).expect("plain data serializes")
    }

    pub fn csv_header(&self) -> Vec<String> {
        csv_header(self.sys.n, &self.aux_names)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| PainleveError::InvalidInput(format!("csv: {e}"));
        out.write_record(self.csv_header()).map_err(io)?;
        for s in &self.samples {
            let row = std::iter::once(s.t).chain(s.q.iter().copied()).chain(s.p.iter().copied()).chain(s.aux.iter().copied());
            out.write_record(row.map(|v| format!("{v:e}"))).map_err(io)?;
        }
        out.flush().map_err(|e| PainleveError::InvalidInput(format!("csv: {e}")))
    }

    /// Rebuild a trajectory (samples only, no dense output) from CSV.
    pub fn read_csv<R: Read>(
        r: R,
        sys: SystemId,
        spec: Option<PartitionSpec>,
        params: Params<C64>,
    ) -> Result<Trajectory> {
        let mut rdr = csv::Reader::from_reader(r);
        let bad = |m: String| PainleveError::InvalidInput(m);
        let header: Vec<String> = rdr.headers().map_err(|e| bad(format!("csv: {e}")))?.iter().map(str::to_string).collect();
        let aux_names: Vec<String> = header.iter().skip(1 + 2 * sys.n).cloned().collect();
        if header != csv_header(sys.n, &aux_names) {
            return Err(bad(format!("unexpected CSV header {header:?} for {sys}")));
        }
        if let Some(spec) = spec {
            let want = aux_name_list(spec.kind);
            if aux_names != want {
                return Err(PainleveError::MissingAux(format!("header has {aux_names:?}, {} needs {want:?}", spec.kind)));
            }
        }
        let n = sys.n;
        let mut samples = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| bad(format!("csv: {e}")))?;
            let v = rec
                .iter()
                .map(|f| f.trim().parse::<f64>().map_err(|_| bad(format!("not a number: {f:?}"))))
                .collect::<Result<Vec<f64>>>()?;
            if v.len() != header.len() {
                return Err(bad(format!("row has {} fields, header {}", v.len(), header.len())));
            }
            samples.push(Sample { t: v[0], q: v[1..=n].to_vec(), p: v[n + 1..=2 * n].to_vec(), aux: v[2 * n + 1..].to_vec() });
        }
        if samples.windows(2).any(|w| {
            let d = w[1].t - w[0].t;
            d == 0.0 || d.signum() != (samples[1].t - samples[0].t).signum()
        }) {
            return Err(bad("time column is not strictly monotone".into()));
        }
        let aux_signs = samples.first().map(|s| s.aux.iter().map(|a| a.signum()).collect()).unwrap_or_default();
        Ok(Trajectory {
            sys,
            spec,
            params,
            aux_names,
            aux_signs,
            samples,
            rtol: f64::NAN,
            atol: f64::NAN,
            stats: FlowStats::default(),
            halted: None,
            segments: Vec::new(),
        })
    }
}

fn csv_header(n: usize, aux: &[String]) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=n).map(|i| format!("q{i}")));
    h.extend((1..=n).map(|i| format!("p{i}")));
    h.extend(aux.iter().cloned());
    h
}

fn aux_name_list(kind: PartitionKind) -> Vec<String> {
    let probe: AuxState<C64> = match kind {
        PartitionKind::NplusNplus => AuxState::W(C64::one()),
        PartitionKind::TwoNminusOneOne | PartitionKind::TwoNOne => AuxState::Lam(C64::one()),
        PartitionKind::NNOne => AuxState::MuLam(C64::one(), C64::one()),
    };
    probe.names().iter().map(|s| s.to_string()).collect()
}

fn unpack(n: usize, signs: &[f64], t: f64, y: &[f64]) -> Sample {
    Sample {
        t,
        q: y[..n].to_vec(),
        p: y[n..2 * n].to_vec(),
        aux: y[2 * n..].iter().zip(signs).map(|(l, s)| s * l.exp()).collect(),
    }
}

/// The right-hand side in the packed layout `(q, p, log|aux|)`.
struct Rhs<'a> {
    sys: SystemId,
    spec: Option<PartitionSpec>,
    params: &'a Params<C64>,
    signs: &'a [f64],
    evaluations: usize,
}

impl Rhs<'_> {
    fn point(&self, t: f64, y: &[f64]) -> PhasePoint<C64> {
        let n = self.sys.n;
        let c = |v: &f64| C64::new(*v, 0.0);
        PhasePoint::new(y[..n].iter().map(c).collect(), y[n..2 * n].iter().map(c).collect(), C64::new(t, 0.0))
    }

    fn eval(&mut self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        self.evaluations += 1;
        let x = self.point(t, y);
        let (dq, dp) = vector_field(self.sys, self.params, &x)?;
        let mut out: Vec<f64> = dq.iter().chain(&dp).map(|v| v.re).collect();
        if let Some(spec) = self.spec {
            let vals: Vec<C64> =
                y[2 * self.sys.n..].iter().zip(self.signs).map(|(l, s)| C64::new(s * l.exp(), 0.0)).collect();
            let aux = AuxState::from_values(spec.kind, &vals)?;
            out.extend(aux_flow(spec, self.params, &x, &aux)?.iter().map(|v| v.re));
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(PainleveError::SingularityApproach { t, what: "non-finite vector field".into() });
        }
        Ok(out)
    }
}

/// Smallest guarded denominator at a state of the coupled P_VI system.
fn guard_violation(sys: SystemId, params: &Params<C64>, t: f64, y: &[f64], guard: f64) -> Option<String> {
    if sys.kind != SystemKind::PA2n1star {
        return None;
    }
    let n = sys.n;
    let (q, p) = (&y[..n], &y[n..2 * n]);
    let mut checks: Vec<(String, f64)> = Vec::new();
    for i in 0..n {
        checks.push((format!("q{}", i + 1), q[i]));
        checks.push((format!("q{} - 1", i + 1), q[i] - 1.0));
        checks.push((format!("q{} - t", i + 1), q[i] - t));
        if i + 1 < n {
            checks.push((format!("q{} - q{}", i + 1, i + 2), q[i] - q[i + 1]));
        }
    }
    let s: f64 = q.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() + params.eta.re;
    checks.push(("sum q_j p_j + eta".into(), s));
    checks.into_iter().find(|(_, v)| v.abs() < guard).map(|(name, v)| format!("|{name}| = {:.3e}", v.abs()))
}

fn fixed_singularities(kind: SystemKind) -> &'static [f64] {
    match kind {
        SystemKind::PA2n1star => &[0.0, 1.0],
        SystemKind::PA2n1 => &[0.0],
        SystemKind::PA2n => &[],
    }
}

/// Rejects windows touching `t = 0` or `t = 1` where the field is singular.
pub fn check_window(kind: SystemKind, t0: f64, t1: f64) -> Result<()> {
    let (lo, hi) = (t0.min(t1), t0.max(t1));
    if let Some(s) = fixed_singularities(kind).iter().find(|s| (lo..=hi).contains(*s)) {
        return Err(PainleveError::SingularTime(format!("window [{t0}, {t1}] contains the fixed singularity t = {s}")));
    }
    Ok(())
}

// Dormand–Prince tableau
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

type Stages = [Vec<f64>; 6];

fn axpy(y: &[f64], h: f64, terms: &[(f64, &[f64])]) -> Vec<f64> {
    (0..y.len()).map(|i| y[i] + h * terms.iter().map(|(c, k)| c * k[i]).sum::<f64>()).collect()
}

fn wrms(v: &[f64], y0: &[f64], y1: &[f64], rtol: f64, atol: f64) -> f64 {
    let s: f64 = (0..v.len())
        .map(|i| {
            let sc = atol + rtol * y0[i].abs().max(y1[i].abs());
            (v[i] / sc).powi(2)
        })
        .sum();
    (s / v.len() as f64).sqrt()
}

/// Integrate from `x0.t` to `t_end`. Guard crossings and step-size collapse
/// do not return `Err`: the trajectory is truncated and `halted` is set.
pub fn integrate(
    sys: SystemId,
    spec: Option<PartitionSpec>,
    params: &Params<C64>,
    x0: &PhasePoint<C64>,
    aux0: Option<&AuxState<C64>>,
    t_end: f64,
    opts: &FlowOptions,
) -> Result<Trajectory> {
    if !(opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(PainleveError::InvalidInput("tolerances must be positive".into()));
    }
    if x0.q.len() != sys.n || x0.p.len() != sys.n {
        return Err(PainleveError::InvalidInput(format!("{sys} needs {} q and p values", sys.n)));
    }
    if let Some(spec) = spec {
        if SystemId::of_partition(spec) != sys {
            return Err(PainleveError::InvalidInput(format!("partition {spec} does not realize {sys}")));
        }
    }
    params.validate(sys)?;
    let t0 = x0.t.re;
    check_window(sys.kind, t0, t_end)?;
    let aux_vals: Vec<f64> = match (spec, aux0) {
        (Some(spec), Some(aux)) => {
            if !aux.fits(spec.kind) {
                return Err(PainleveError::MissingAux(format!("{:?} does not match {}", aux.names(), spec.kind)));
            }
            aux.values().iter().map(|v| v.re).collect()
        }
        (Some(spec), None) => return Err(PainleveError::MissingAux(format!("{} needs aux values", spec.kind))),
        (None, _) => Vec::new(),
    };
    if aux_vals.iter().any(|v| *v == 0.0 || !v.is_finite()) {
        return Err(PainleveError::GaugeSingularity("aux variable"));
    }
    let aux_signs: Vec<f64> = aux_vals.iter().map(|v| v.signum()).collect();
    let aux_names = spec.map(|s| aux_name_list(s.kind)).unwrap_or_default();

    let mut y: Vec<f64> = x0.q.iter().chain(&x0.p).map(|v| v.re).collect();
    y.extend(aux_vals.iter().map(|v| v.abs().ln()));

    let mut traj = Trajectory {
        sys,
        spec,
        params: params.clone(),
        aux_names,
        aux_signs: aux_signs.clone(),
        samples: Vec::new(),
        rtol: opts.rtol,
        atol: opts.atol,
        stats: FlowStats::default(),
        halted: None,
        segments: Vec::new(),
    };
    if let Some(msg) = guard_violation(sys, params, t0, &y, opts.guard) {
        return Err(PainleveError::SingularityApproach { t: t0, what: msg });
    }
    let dir = if t_end >= t0 { 1.0 } else { -1.0 };
    let mut outputs: Vec<f64> = opts.output.clone().unwrap_or_default();
    if outputs.iter().any(|&s| (s - t0) * dir < 0.0 || (s - t_end) * dir > 0.0) {
        return Err(PainleveError::InvalidInput(format!("output times must lie in [{t0}, {t_end}]")));
    }
    outputs.sort_by(|a, b| (dir * a).total_cmp(&(dir * b)));
    outputs.dedup();
    let dense_only = opts.output.is_some();
    let mut next_out = 0;
    let record = |traj: &mut Trajectory, t: f64, y: &[f64]| {
        traj.samples.push(unpack(sys.n, &aux_signs, t, y));
    };
    if !dense_only {
        record(&mut traj, t0, &y);
    }
    while next_out < outputs.len() && outputs[next_out] == t0 {
        record(&mut traj, t0, &y);
        next_out += 1;
    }
    if t_end == t0 {
        return Ok(traj);
    }

    let mut rhs = Rhs { sys, spec, params, signs: &aux_signs, evaluations: 0 };
    let finish = |mut traj: Trajectory, rhs: &Rhs, halted: Option<PainleveError>| {
        traj.stats.evaluations = rhs.evaluations;
        traj.halted = halted;
        traj
    };
    let mut k1 = match rhs.eval(t0, &y) {
        Ok(v) => v,
        Err(e) => return Ok(finish(traj, &rhs, Some(e))),
    };

    let span = (t_end - t0).abs();
    let mut h = match opts.fixed_steps {
        Some(k) if k > 0 => dir * span / k as f64,
        Some(_) => return Err(PainleveError::InvalidInput("fixed step count must be positive".into())),
        None => dir * initial_step(&mut rhs, t0, &y, &k1, dir, opts).unwrap_or(1e-6).min(span),
    };
    let fixed = opts.fixed_steps.is_some();
    let h_min = 1e-14 * t0.abs().max(t_end.abs()).max(1.0);
    let mut t = t0;
    let mut facold: f64 = 1e-4;
    let mut rejected_last = false;
    const SAFE: f64 = 0.9;
    const BETA: f64 = 0.04;
    const EXPO1: f64 = 0.2 - BETA * 0.75;

    for _ in 0..opts.max_steps {
        if (t_end - (t + h)) * dir < 0.0 || (fixed && (t_end - (t + h)).abs() < 1e-9 * h.abs()) {
            h = t_end - t;
        }
        if h.abs() < h_min {
            return Ok(finish(traj, &rhs, Some(PainleveError::StepUnderflow { t, h })));
        }
        let step = (|| -> Result<(Vec<f64>, Vec<f64>, Stages)> {
            let k2 = rhs.eval(t + C2 * h, &axpy(&y, h, &[(A21, &k1)]))?;
            let k3 = rhs.eval(t + C3 * h, &axpy(&y, h, &[(A31, &k1), (A32, &k2)]))?;
            let k4 = rhs.eval(t + C4 * h, &axpy(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]))?;
            let k5 = rhs.eval(t + C5 * h, &axpy(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]))?;
            let y6 = axpy(&y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]);
            let k6 = rhs.eval(t + h, &y6)?;
            let y7 = axpy(&y, h, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
            let k7 = rhs.eval(t + h, &y7)?;
            let err: Vec<f64> = (0..y.len())
                .map(|i| h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]))
                .collect();
            Ok((y7, err, [k2, k3, k4, k5, k6, k7]))
        })();
        let (ynew, errv, ks) = match step {
            Ok(v) => v,
            Err(e) if fixed => return Ok(finish(traj, &rhs, Some(e))),
            Err(_) => {
                // a stage left the domain: shrink and retry
                traj.stats.rejected += 1;
                h *= 0.25;
                rejected_last = true;
                continue;
            }
        };
        let err = if fixed { 0.0 } else { wrms(&errv, &y, &ynew, opts.rtol, opts.atol) };
        if !err.is_finite() {
            traj.stats.rejected += 1;
            h *= 0.25;
            rejected_last = true;
            continue;
        }
        let fac11 = err.powf(EXPO1);
        if err <= 1.0 {
            let tnew = t + h;
            if let Some(msg) = guard_violation(sys, params, tnew, &ynew, opts.guard) {
                return Ok(finish(traj, &rhs, Some(PainleveError::SingularityApproach { t: tnew, what: msg })));
            }
            let [k2, k3, k4, k5, k6, k7] = ks;
            let _ = k2;
            let ydiff: Vec<f64> = ynew.iter().zip(&y).map(|(a, b)| a - b).collect();
            let bspl: Vec<f64> = (0..y.len()).map(|i| h * k1[i] - ydiff[i]).collect();
            let r4: Vec<f64> = (0..y.len()).map(|i| ydiff[i] - h * k7[i] - bspl[i]).collect();
            let r5: Vec<f64> = (0..y.len())
                .map(|i| h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]))
                .collect();
            let seg = Segment { t, h, rcont: [y.clone(), ydiff, bspl, r4, r5] };
            while next_out < outputs.len() && (outputs[next_out] - tnew) * dir <= 0.0 {
                let to = outputs[next_out];
                let yo = if to == tnew { ynew.clone() } else { seg.eval(to) };
                record(&mut traj, to, &yo);
                next_out += 1;
            }
            traj.segments.push(seg);
            traj.stats.accepted += 1;
            let mut fac = (fac11 / facold.powf(BETA) / SAFE).clamp(0.1, 5.0);
            facold = err.max(1e-4);
            y = ynew;
            k1 = k7;
            t = tnew;
            if !dense_only {
                record(&mut traj, t, &y);
            }
            if t == t_end {
                return Ok(finish(traj, &rhs, None));
            }
            if rejected_last {
                fac = fac.max(1.0);
            }
            if !fixed {
                h /= fac;
            }
            rejected_last = false;
        } else {
            traj.stats.rejected += 1;
            h /= (fac11 / SAFE).min(5.0);
            rejected_last = true;
        }
    }
    let h_last = h;
    Ok(finish(traj, &rhs, Some(PainleveError::StepUnderflow { t, h: h_last })))
}

fn initial_step(rhs: &mut Rhs, t0: f64, y: &[f64], f0: &[f64], dir: f64, o: &FlowOptions) -> Option<f64> {
    let norm = |v: &[f64]| wrms(v, y, y, o.rtol, o.atol);
    let (d0, d1) = (norm(y), norm(f0));
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1 = axpy(y, dir * h0, &[(1.0, f0)]);
    let f1 = rhs.eval(t0 + dir * h0, &y1).ok()?;
    let d2 = norm(&f1.iter().zip(f0).map(|(a, b)| a - b).collect::<Vec<_>>()) / h0;
    let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(0.2) };
    Some((100.0 * h0).min(h1))
}

/// Principal-branch `s` with `t(s) = t`; complex where the root is not real.
pub fn branch_from_t(spec: PartitionSpec, t: f64) -> C64 {
    let n = spec.n as f64;
    let tc = Complex64::new(t, 0.0);
    match spec.kind {
        PartitionKind::NplusNplus => tc.powf(-1.0 / (n + 1.0)),
        PartitionKind::NNOne if spec.n == 1 => {
            RootOfT::<C64>::from_t(spec, &tc).expect("t is finite")
        }
        PartitionKind::NNOne => tc.powf(-1.0 / n),
        PartitionKind::TwoNminusOneOne => {
            RootOfT::<C64>::from_t(spec, &tc).expect("linear branch is always invertible")
        }
        PartitionKind::TwoNOne => (tc * (-4.0 / n)).sqrt(),
    }
}

fn lax_at(spec: PartitionSpec, traj: &Trajectory, s: &Sample) -> Result<LaxData<C64>> {
    let c = |v: &f64| C64::new(*v, 0.0);
    let aux = AuxState::from_values(spec.kind, &s.aux.iter().map(c).collect::<Vec<_>>())?;
    LaxData::new(
        spec,
        traj.params.clone(),
        branch_from_t(spec, s.t),
        s.q.iter().map(c).collect(),
        s.p.iter().map(c).collect(),
        aux,
    )
}

/// Where `D_t M` gets the time derivatives of `(q, p, aux)` from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TangentSource {
    /// The exact flow at each sample; the residual then only sees rounding.
    Field,
    /// The trajectory itself: dense output where available, otherwise
    /// three-point differences of the stored samples.
    Trajectory,
}

/// Largest relative compatibility residual over the stored samples, with
/// `D_t M` taken along the trajectory.
pub fn residual_along(traj: &Trajectory, spec: PartitionSpec, zsamples: &[C64]) -> Result<f64> {
    residual_along_with(traj, spec, zsamples, TangentSource::Trajectory)
}

pub fn residual_along_with(
    traj: &Trajectory,
    spec: PartitionSpec,
    zsamples: &[C64],
    source: TangentSource,
) -> Result<f64> {
    if traj.aux_names != aux_name_list(spec.kind) {
        return Err(PainleveError::MissingAux(format!("trajectory carries {:?}, {} needs aux", traj.aux_names, spec.kind)));
    }
    let n = traj.sys.n;
    let c = |v: &f64| C64::new(*v, 0.0);
    traj.samples.iter().enumerate().try_fold(0.0f64, |acc, (k, s)| {
        let data = lax_at(spec, traj, s)?;
        let tangent = match source {
            TangentSource::Field => on_shell_tangent(&data, &LaxMutation::default())?,
            TangentSource::Trajectory => {
                let d = traj.tangent_at(k);
                Tangent {
                    dq: d[..n].iter().map(c).collect(),
                    dp: d[n..2 * n].iter().map(c).collect(),
                    daux_log: d[2 * n..].iter().map(c).collect(),
                }
            }
        };
        let r = residual_with_tangent(&data, &tangent, zsamples, &LaxMutation::default())?;
        Ok(acc.max(r.relative()))
    })
}

/// Largest constraint residual over the samples, `None` when the partition
/// has no constraint at this rank.
pub fn constraint_drift(traj: &Trajectory, spec: PartitionSpec) -> Result<Option<f64>> {
    let mut worst: Option<f64> = None;
    for s in &traj.samples {
        if let Some(v) = constraint_residual(&lax_at(spec, traj, s)?)? {
            worst = Some(worst.unwrap_or(0.0).max(v.magnitude()));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: f64) -> C64 {
        C64::new(v, 0.0)
    }

    #[test]
    fn zero_field_fixed_point_is_stationary() {
        let sys = SystemId { kind: SystemKind::PA2n, n: 1 };
        let par = Params::new(vec![c(1.0), c(0.0), c(0.0)], c(0.0));
        let x0 = PhasePoint::new(vec![c(0.0)], vec![c(0.0)], c(-1.0));
        let tr = integrate(sys, None, &par, &x0, None, 2.0, &FlowOptions::tol(1e-9, 1e-12)).unwrap();
        assert!(tr.halted.is_none());
        assert!(tr.samples.iter().all(|s| s.q[0] == 0.0 && s.p[0] == 0.0));
    }

    #[test]
    fn exponential_aux_growth_on_linear_flow() {
        // (2n-1,1), n = 1 with q = p = 0 frozen: d log lambda / dt = -t
        let spec = PartitionSpec::new(PartitionKind::TwoNminusOneOne, 1).unwrap();
        let sys = SystemId::of_partition(spec);
        let par = Params::new(vec![c(1.0), c(0.0), c(0.0)], c(0.0));
        let x0 = PhasePoint::new(vec![c(0.0)], vec![c(0.0)], c(0.0));
        let aux = AuxState::Lam(c(2.0));
        let opts = FlowOptions { output: Some(vec![0.5, 1.0]), ..FlowOptions::tol(1e-11, 1e-13) };
        let tr = integrate(sys, Some(spec), &par, &x0, Some(&aux), 1.0, &opts).unwrap();
        let want = 2.0 * (-0.5f64).exp();
        assert_eq!(tr.samples.len(), 2);
        assert!((tr.samples[1].aux[0] - want).abs() < 1e-10, "{:?}", tr.samples[1]);
    }

    #[test]
    fn window_through_singularity_is_rejected() {
        assert!(matches!(check_window(SystemKind::PA2n1star, 0.5, 1.5), Err(PainleveError::SingularTime(_))));
        assert!(check_window(SystemKind::PA2n, -1.0, 1.0).is_ok());
    }

    #[test]
    fn dense_output_matches_endpoint() {
        let sys = SystemId { kind: SystemKind::PA2n, n: 1 };
        let par = Params::new(vec![c(0.3), c(-0.2), c(0.9)], c(0.0));
        let x0 = PhasePoint::new(vec![c(0.1)], vec![c(0.2)], c(0.0));
        let tr = integrate(sys, None, &par, &x0, None, 0.5, &FlowOptions::tol(1e-10, 1e-12)).unwrap();
        let end = tr.last().unwrap();
        let dense = tr.eval(0.5).unwrap();
        assert!((dense.q[0] - end.q[0]).abs() < 1e-14);
        assert!(tr.samples.windows(2).all(|w| w[1].t > w[0].t));
    }
}
