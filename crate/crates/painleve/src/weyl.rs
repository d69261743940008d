//! Affine Weyl group `W(A^(1)_{2n+1})` acting on `(q, p, alpha, eta)` of the
//! coupled P_VI system by birational canonical transformations.

use serde::Serialize;

use crate::error::{PainleveError, Result};
use crate::loopalg::cartan_matrix;
use crate::psys::{vector_field, Params, PhasePoint, SystemId, SystemKind};
use crate::sample::{Mode, Sampler};
use crate::scalar::{Dual, Field};

/// A generator `r_i`, `0 <= i <= 2n+1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Reflection {
    pub index: usize,
    pub n: usize,
}

impl Reflection {
    pub fn new(index: usize, n: usize) -> Result<Self> {
        if index > 2 * n + 1 {
            return Err(PainleveError::UnsupportedIndex(format!("r_{index} with n = {n}")));
        }
        Ok(Reflection { index, n })
    }
}

pub type WeylWord = Vec<usize>;

/// Test hook: flip the sign of the shift in `r_0`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WeylMutation {
    pub corrupt_r0: bool,
}

pub fn reflect<F: Field>(r: Reflection, params: &Params<F>, x: &PhasePoint<F>) -> Result<(Params<F>, PhasePoint<F>)> {
    reflect_mut(r, params, x, WeylMutation::default())
}

pub fn reflect_mut<F: Field>(
    r: Reflection,
    params: &Params<F>,
    x: &PhasePoint<F>,
    mutation: WeylMutation,
) -> Result<(Params<F>, PhasePoint<F>)> {
    let n = r.n;
    let size = 2 * n + 2;
    if params.alpha.len() != size || x.q.len() != n || x.p.len() != n {
        return Err(PainleveError::InvalidInput(format!("r_{} needs n = {n} data", r.index)));
    }
    let i = r.index;
    let a = params.alpha[i].clone();
    let cart = cartan_matrix(size - 1)?;
    let alpha = (0..size).map(|j| params.alpha[j].clone() - F::from_i64(cart[i][j]) * a.clone()).collect();
    let sign = if i.is_multiple_of(2) { F::one() } else { -F::one() };
    let eta = params.eta.clone() + sign * a.clone();
    let mut y = x.clone();
    let vanish = |expr: &str| PainleveError::DenominatorVanishes { reflection: i, expr: expr.to_string() };
    let ratio = |den: F, expr: &str| a.div(&den).ok_or_else(|| vanish(expr));
    if a.is_zero() {
        // zero root: identity on phase space even where denominators vanish
    } else if i == 0 {
        let shift = ratio(x.q[0].clone() - F::one(), "q_1 - 1")?;
        let shift = if mutation.corrupt_r0 { -shift } else { shift };
        y.p[0] = y.p[0].clone() - shift;
    } else if i == 2 * n + 1 {
        let s = x.q.iter().zip(&x.p).fold(params.eta.clone(), |acc, (q, p)| acc + q.clone() * p.clone());
        let s_new = s.clone() - a.clone();
        let up = s.div(&s_new).ok_or_else(|| vanish("sum q_j p_j + eta - alpha_{2n+1}"))?;
        let down = s_new.div(&s).ok_or_else(|| vanish("sum q_j p_j + eta"))?;
        for k in 0..n {
            y.q[k] = x.q[k].clone() * up.clone();
            y.p[k] = x.p[k].clone() * down.clone();
        }
    } else if i % 2 == 1 {
        let k = i.div_ceil(2) - 1;
        y.q[k] = y.q[k].clone() + ratio(x.p[k].clone(), &format!("p_{}", k + 1))?;
    } else if i == 2 * n {
        let shift = ratio(x.q[n - 1].clone() - x.t.clone(), &format!("q_{n} - t"))?;
        y.p[n - 1] = y.p[n - 1].clone() - shift;
    } else {
        let k = i / 2 - 1;
        let shift = ratio(x.q[k].clone() - x.q[k + 1].clone(), &format!("q_{} - q_{}", k + 1, k + 2))?;
        y.p[k] = y.p[k].clone() - shift.clone();
        y.p[k + 1] = y.p[k + 1].clone() + shift;
    }
    Ok((Params::new(alpha, eta), y))
}

/// Left-to-right composition.
pub fn apply_word<F: Field>(
    word: &[usize],
    n: usize,
    params: &Params<F>,
    x: &PhasePoint<F>,
) -> Result<(Params<F>, PhasePoint<F>)> {
    apply_word_mut(word, n, params, x, WeylMutation::default())
}

fn apply_word_mut<F: Field>(
    word: &[usize],
    n: usize,
    params: &Params<F>,
    x: &PhasePoint<F>,
    mutation: WeylMutation,
) -> Result<(Params<F>, PhasePoint<F>)> {
    let mut state = (params.clone(), x.clone());
    for (position, &i) in word.iter().enumerate() {
        let wrap = |e: PainleveError| PainleveError::InWord { position, source: Box::new(e) };
        let r = Reflection::new(i, n).map_err(wrap)?;
        state = reflect_mut(r, &state.0, &state.1, mutation).map_err(wrap)?;
    }
    Ok(state)
}

/// Jacobian of the phase-space part of `r_i` in the order `(q, p)`, and the
/// explicit time derivative of the image.
pub fn jacobian<F: Field>(r: Reflection, params: &Params<F>, x: &PhasePoint<F>) -> Result<(Vec<Vec<F>>, Vec<F>)> {
    let n = r.n;
    let dp = params.map(|v| Dual::constant(v.clone()));
    let base = x.map(|v| Dual::constant(v.clone()));
    let flat = |y: &PhasePoint<Dual<F>>| -> Vec<F> { y.q.iter().chain(&y.p).map(|d| d.eps.clone()).collect() };
    let mut cols = Vec::with_capacity(2 * n);
    for k in 0..2 * n {
        let mut y = base.clone();
        if k < n {
            y.q[k].eps = F::one();
        } else {
            y.p[k - n].eps = F::one();
        }
        cols.push(flat(&reflect(r, &dp, &y)?.1));
    }
    let mut y = base;
    y.t.eps = F::one();
    let dt = flat(&reflect(r, &dp, &y)?.1);
    let jac = (0..2 * n).map(|row| (0..2 * n).map(|c| cols[c][row].clone()).collect()).collect();
    Ok((jac, dt))
}

#[derive(Clone, Debug, Default, Serialize, PartialEq)]
pub struct CheckReport {
    pub relation: String,
    pub trials: usize,
    pub max_error: f64,
    pub failures: usize,
    /// Samples redrawn because a denominator vanished or came too close.
    pub rejected: usize,
    pub counterexamples: Vec<String>,
}

impl CheckReport {
    fn new(relation: String) -> Self {
        CheckReport { relation, ..Default::default() }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.trials > 0
    }

    /// Associative merge of two shards of the same check.
    pub fn merge(mut self, other: CheckReport) -> CheckReport {
        self.trials += other.trials;
        self.max_error = self.max_error.max(other.max_error);
        self.failures += other.failures;
        self.rejected += other.rejected;
        self.counterexamples.extend(other.counterexamples);
        self
    }

    fn record<F: Field>(&mut self, diffs: &[F], scale: f64, exact: bool, tol: f64, context: impl FnOnce() -> String) {
        self.trials += 1;
        let worst = diffs.iter().map(Field::magnitude).fold(0.0, f64::max) / scale.max(1.0);
        let ok = if exact { diffs.iter().all(Field::is_zero) } else { worst <= tol };
        self.max_error = self.max_error.max(worst);
        if !ok {
            self.failures += 1;
            if self.counterexamples.len() < 5 {
                self.counterexamples.push(context());
            }
        }
    }
}

fn describe<F: Field>(params: &Params<F>, x: &PhasePoint<F>) -> String {
    let show = |v: &[F]| v.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(", ");
    format!(
        "alpha=[{}] eta={} q=[{}] p=[{}] t={}",
        show(&params.alpha),
        params.eta,
        show(&x.q),
        show(&x.p),
        x.t
    )
}

/// Settings shared by the randomized checks.
#[derive(Clone, Copy, Debug)]
pub struct CheckConfig {
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    pub mode: Mode,
    pub tol: f64,
    pub mutation: WeylMutation,
}

impl CheckConfig {
    pub fn new(n: usize, trials: usize, seed: u64, mode: Mode) -> Self {
        CheckConfig { n, trials, seed, mode, tol: 1e-10, mutation: WeylMutation::default() }
    }
}

const NEAR: f64 = 1e-6;

/// Reject points where some reflection in `word` divides by something small.
fn admissible<F: Field>(word: &[usize], cfg: &CheckConfig, params: &Params<F>, x: &PhasePoint<F>) -> bool {
    let mut state = (params.clone(), x.clone());
    for &i in word {
        let r = Reflection { index: i, n: cfg.n };
        let (pp, y) = &state;
        let s = y.q.iter().zip(&y.p).fold(pp.eta.clone(), |acc, (q, p)| acc + q.clone() * p.clone());
        let den: Vec<F> = match i {
            0 => vec![y.q[0].clone() - F::one()],
            _ if i == 2 * cfg.n + 1 => vec![s.clone(), s - pp.alpha[i].clone()],
            _ if i % 2 == 1 => vec![y.p[i.div_ceil(2) - 1].clone()],
            _ if i == 2 * cfg.n => vec![y.q[cfg.n - 1].clone() - y.t.clone()],
            _ => vec![y.q[i / 2 - 1].clone() - y.q[i / 2].clone()],
        };
        if den.iter().any(|d| d.magnitude() < NEAR) {
            return false;
        }
        match reflect_mut(r, pp, y, cfg.mutation) {
            Ok(next) => state = next,
            Err(_) => return false,
        }
    }
    true
}

fn sample_point<F: Field>(
    sampler: &mut Sampler,
    cfg: &CheckConfig,
    word: &[usize],
    report: &mut CheckReport,
) -> (Params<F>, PhasePoint<F>) {
    let sys = SystemId { kind: SystemKind::PA2n1star, n: cfg.n };
    loop {
        let params = sampler.params(sys);
        let x = sampler.phase_point(sys);
        if admissible(word, cfg, &params, &x) {
            return (params, x);
        }
        report.rejected += 1;
    }
}

fn state_diffs<F: Field>(a: &(Params<F>, PhasePoint<F>), b: &(Params<F>, PhasePoint<F>)) -> Vec<F> {
    let pa = a.0.alpha.iter().chain(std::iter::once(&a.0.eta)).chain(&a.1.q).chain(&a.1.p);
    let pb = b.0.alpha.iter().chain(std::iter::once(&b.0.eta)).chain(&b.1.q).chain(&b.1.p);
    pa.zip(pb).map(|(x, y)| x.clone() - y.clone()).collect()
}

/// The defining relations: `r_i^2 = 1` and `(r_i r_j)^{m_ij} = 1` with
/// `m_ij = 2` for non-adjacent and `3` for adjacent nodes.
pub fn relations(n: usize) -> Vec<(String, WeylWord)> {
    let size = 2 * n + 2;
    let cart = cartan_matrix(size - 1).expect("rank >= 3");
    let mut out = Vec::new();
    for i in 0..size {
        out.push((format!("r{i}^2"), vec![i, i]));
    }
    for (i, row) in cart.iter().enumerate() {
        for (j, &a) in row.iter().enumerate().skip(i + 1) {
            let m = (2 - a) as usize;
            let word = [i, j].repeat(m);
            out.push((format!("(r{i} r{j})^{m}"), word));
        }
    }
    out
}

pub fn check_relations<F: Field>(cfg: &CheckConfig) -> Vec<CheckReport> {
    let exact = cfg.mode == Mode::Exact;
    relations(cfg.n)
        .into_iter()
        .enumerate()
        .map(|(k, (name, word))| {
            let mut sampler = Sampler::new(cfg.seed.wrapping_add(k as u64), cfg.mode);
            let mut report = CheckReport::new(name);
            for _ in 0..cfg.trials {
                let (params, x) = sample_point::<F>(&mut sampler, cfg, &word, &mut report);
                let start = (params.clone(), x.clone());
                match apply_word_mut(&word, cfg.n, &params, &x, cfg.mutation) {
                    Ok(end) => {
                        let d = state_diffs(&start, &end);
                        report.record(&d, 1.0, exact, cfg.tol, || describe(&params, &x));
                    }
                    Err(e) => {
                        report.trials += 1;
                        report.failures += 1;
                        report.counterexamples.push(e.to_string());
                    }
                }
            }
            report
        })
        .collect()
}

/// `J_{r_i} F(x) + d_t r_i(x) = F(r_i(x); r_i(alpha), r_i(eta))`.
pub fn check_equivariance<F: Field>(r: Reflection, cfg: &CheckConfig) -> CheckReport {
    let exact = cfg.mode == Mode::Exact;
    let sys = SystemId { kind: SystemKind::PA2n1star, n: cfg.n };
    let mut sampler = Sampler::new(cfg.seed ^ (r.index as u64) << 8, cfg.mode);
    let mut report = CheckReport::new(format!("equivariance r{}", r.index));
    let word = [r.index];
    while report.trials < cfg.trials {
        let (params, x) = sample_point::<F>(&mut sampler, cfg, &word, &mut report);
        let step = || -> Result<(Vec<F>, f64)> {
            let (jac, dt) = jacobian(r, &params, &x)?;
            let (dq, dp) = vector_field(sys, &params, &x)?;
            let f: Vec<F> = dq.into_iter().chain(dp).collect();
            let (rp, rx) = reflect_mut(r, &params, &x, cfg.mutation)?;
            let (gq, gp) = vector_field(sys, &rp, &rx)?;
            let g: Vec<F> = gq.into_iter().chain(gp).collect();
            let scale = g.iter().map(Field::magnitude).fold(1.0, f64::max);
            let d = (0..2 * cfg.n)
                .map(|row| {
                    let push = jac[row].iter().zip(&f).fold(dt[row].clone(), |acc, (j, v)| acc + j.clone() * v.clone());
                    push - g[row].clone()
                })
                .collect();
            Ok((d, scale))
        };
        match step() {
            Ok((d, scale)) => report.record(&d, scale, exact, cfg.tol, || describe(&params, &x)),
            Err(_) => report.rejected += 1,
        }
    }
    report
}

/// `J^T Omega J = Omega` for the standard form on `(q, p)`.
pub fn check_symplectic<F: Field>(r: Reflection, cfg: &CheckConfig) -> CheckReport {
    let exact = cfg.mode == Mode::Exact;
    let n = cfg.n;
    let mut sampler = Sampler::new(cfg.seed ^ (r.index as u64) << 16, cfg.mode);
    let mut report = CheckReport::new(format!("symplectic r{}", r.index));
    let omega = |i: usize, j: usize| -> F {
        if j == i + n {
            F::one()
        } else if i == j + n {
            -F::one()
        } else {
            F::zero()
        }
    };
    let word = [r.index];
    while report.trials < cfg.trials {
        let (params, x) = sample_point::<F>(&mut sampler, cfg, &word, &mut report);
        let Ok((jac, _)) = jacobian(r, &params, &x) else {
            report.rejected += 1;
            continue;
        };
        let mut d = Vec::with_capacity(4 * n * n);
        for a in 0..2 * n {
            for b in 0..2 * n {
                let mut acc = F::zero();
                for i in 0..2 * n {
                    for j in 0..2 * n {
                        acc = acc + jac[i][a].clone() * omega(i, j) * jac[j][b].clone();
                    }
                }
                d.push(acc - omega(a, b));
            }
        }
        report.record(&d, 1.0, exact, cfg.tol, || describe(&params, &x));
    }
    report
}
