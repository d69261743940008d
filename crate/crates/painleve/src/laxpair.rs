//! Explicit Lax matrices `B`, `M` for the four partitions and the
//! isomonodromy compatibility residual
//! `R = c(t) D_t M - z dB/dz - [B, M]`.

use serde::Serialize;

use crate::error::{PainleveError, Result};
use crate::loopalg::{bracket, LaurentMatrix, PartitionKind, PartitionSpec};
use crate::psys::{aux_flow, vector_field_mut, AuxState, HamMutation, Params, PhasePoint, SystemId};
use crate::sample::{Mode, Sampler};
use crate::scalar::{Dual, Field};

/// `kappa_0..kappa_{N-1}` (gauge `kappa_0 = 0`) and `rho_1` (plus `rho_2`
/// for `(n,n,1)`).
#[derive(Clone, Debug, PartialEq)]
pub struct KappaSet<F> {
    pub kappa: Vec<F>,
    pub rho: Vec<F>,
}

impl<F: Field> KappaSet<F> {
    /// `D_i = kappa_i - kappa_{i-1}` for `i = 1..=N`, cyclically.
    pub fn diffs(&self) -> Vec<F> {
        let m = self.kappa.len();
        (1..=m).map(|i| self.kappa[i % m].clone() - self.kappa[i - 1].clone()).collect()
    }

    /// `D_i` with a 1-based cyclic index.
    pub fn d(&self, i: usize) -> F {
        let m = self.kappa.len();
        let i = (i + m - 1) % m + 1;
        self.kappa[i % m].clone() - self.kappa[i - 1].clone()
    }

    /// `(kappa | alpha_i^vee) = s_i + D_{i+1} - D_i`.
    pub fn pairing(&self, spec: PartitionSpec, i: usize) -> F {
        let s = spec.grading();
        F::from_i64(s[i] as i64) + self.d(i + 1) - self.d(i)
    }

    fn from_diffs(d: Vec<F>, rho: Vec<F>) -> Self {
        let mut kappa = Vec::with_capacity(d.len());
        let mut acc = F::zero();
        kappa.push(acc.clone());
        for di in &d[..d.len() - 1] {
            acc = acc + di.clone();
            kappa.push(acc.clone());
        }
        KappaSet { kappa, rho }
    }
}

fn sum<F: Field>(it: impl IntoIterator<Item = F>) -> F {
    it.into_iter().fold(F::zero(), |a, b| a + b)
}

fn kappa_chain<F: Field>(spec: PartitionSpec, params: &Params<F>) -> Vec<F> {
    // D along a path of positions, each step adding a known increment;
    // the free offset is fixed by trace zero
    let size = spec.size();
    let n = spec.n as i64;
    let s = spec.grading();
    let a = |i: i64| params.a(i);
    let (path, incr): (Vec<usize>, Vec<F>) = match spec.kind {
        PartitionKind::NplusNplus => (
            (1..=size).collect(),
            (1..size).map(|i| F::from_i64(n + 1) * a(i as i64) - F::from_i64(s[i] as i64)).collect(),
        ),
        PartitionKind::TwoNminusOneOne => (
            (1..=size).collect(),
            (1..size)
                .map(|j| F::from_i64(2 * n - 1) * a(2 * n - j as i64 + 1) - F::from_i64(s[j] as i64))
                .collect(),
        ),
        PartitionKind::TwoNOne => (
            (1..=size).collect(),
            (1..size).map(|j| F::from_i64(2 * n) * a(j as i64 - 1) - F::from_i64(s[j] as i64)).collect(),
        ),
        PartitionKind::NNOne => (
            std::iter::once(size).chain(1..size).collect(),
            (0..size - 1).map(|j| F::from_i64(n) * a(j as i64) - F::from_i64(s[j] as i64)).collect(),
        ),
    };
    let mut rel = vec![F::zero(); size + 1];
    let mut acc = F::zero();
    for (k, &pos) in path.iter().enumerate() {
        if k > 0 {
            acc = acc + incr[k - 1].clone();
        }
        rel[pos] = acc.clone();
    }
    let offset = -(sum(rel[1..].iter().cloned()) * F::frac(1, size as i64));
    rel[1..].iter().map(|r| r.clone() + offset.clone()).collect()
}

/// Solve the parameter dictionary for `kappa` and `rho` with `kappa_0 = 0`.
pub fn dress_parameters<F: Field>(spec: PartitionSpec, params: &Params<F>) -> Result<KappaSet<F>> {
    let sys = SystemId::of_partition(spec);
    if params.alpha.len() != sys.alpha_len() {
        return Err(PainleveError::InvalidInput(format!(
            "{spec} needs {} alpha values, got {}",
            sys.alpha_len(),
            params.alpha.len()
        )));
    }
    // every realization fixes the overall normalization of the roots
    params.check_normalized()?;
    let d = kappa_chain(spec, params);
    let n = spec.n as i64;
    let size = spec.size();
    let a = |i: i64| params.a(i);
    let dd = |i: usize| d[(i + size - 1) % size].clone();
    let rho = match spec.kind {
        PartitionKind::NplusNplus => {
            vec![params.eta.clone() + sum((0..=spec.n).map(|j| dd(2 * j + 1))) * F::frac(1, n + 1)]
        }
        PartitionKind::TwoNminusOneOne => vec![a(0) - (F::one() + dd(1)) * F::frac(1, 2 * n - 1)],
        PartitionKind::TwoNOne => vec![-a(2 * n) - dd(size) * F::frac(1, 2 * n)],
        PartitionKind::NNOne => {
            let r1 = params.eta.clone() + sum((1..=spec.n).map(|j| dd(2 * j - 1))) * F::frac(1, n);
            let k = KappaSet::from_diffs(d.clone(), vec![]);
            let r2 = r1.clone() - a(2 * n) + (k.kappa[0].clone() - k.kappa[2 * spec.n].clone()) * F::frac(1, n);
            vec![r1, r2]
        }
    };
    Ok(KappaSet::from_diffs(d, rho))
}

/// Inverse of [`dress_parameters`].
pub fn undress<F: Field>(spec: PartitionSpec, k: &KappaSet<F>) -> Params<F> {
    let n = spec.n as i64;
    let nn = spec.n;
    let size = spec.size();
    let pair = |i: usize| k.pairing(spec, i % size);
    let kap = |i: usize| k.kappa[i % size].clone();
    match spec.kind {
        PartitionKind::NplusNplus => {
            let alpha = (0..size).map(|i| pair(i) * F::frac(1, n + 1)).collect();
            let eta = sum((0..=nn).map(|j| k.rho[0].clone() + kap(2 * j) - kap(2 * j + 1))) * F::frac(1, n + 1);
            Params::new(alpha, eta)
        }
        PartitionKind::TwoNminusOneOne => {
            let mut alpha = vec![F::zero(); 2 * nn + 1];
            for j in 1..size {
                alpha[2 * nn + 1 - j] = pair(j) * F::frac(1, 2 * n - 1);
            }
            alpha[0] = k.rho[0].clone() + (F::one() - kap(0) + kap(1)) * F::frac(1, 2 * n - 1);
            alpha[1] = F::one() - sum(alpha.iter().cloned());
            Params::new(alpha, F::zero())
        }
        PartitionKind::TwoNOne => {
            let mut alpha = vec![F::zero(); 2 * nn + 2];
            for j in 1..size {
                alpha[j - 1] = pair(j) * F::frac(1, 2 * n);
            }
            alpha[2 * nn] = -k.rho[0].clone() - (kap(0) - kap(2 * nn)) * F::frac(1, 2 * n);
            alpha[2 * nn + 1] = F::one() - sum(alpha.iter().cloned());
            Params::new(alpha, F::zero())
        }
        PartitionKind::NNOne => {
            let mut alpha = vec![F::zero(); 2 * nn + 2];
            for (j, slot) in alpha.iter_mut().enumerate().take(size - 1) {
                *slot = pair(j) * F::frac(1, n);
            }
            alpha[2 * nn] = k.rho[0].clone() - k.rho[1].clone() + (kap(0) - kap(2 * nn)) * F::frac(1, n);
            alpha[2 * nn + 1] = F::one() - sum(alpha.iter().cloned());
            let eta = sum((1..=nn).map(|i| k.rho[0].clone() + kap(2 * i - 2) - kap(2 * i - 1))) * F::frac(1, n);
            Params::new(alpha, eta)
        }
    }
}

/// Branch variable `s` of a fractional power of `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct RootOfT<F> {
    pub spec: PartitionSpec,
    pub s: F,
}

impl<F: Field> RootOfT<F> {
    pub fn new(spec: PartitionSpec, s: F) -> Result<Self> {
        let bad = if Self::is_moebius(spec) { s.clone() * F::from_i64(2) - F::one() } else { s.clone() };
        if bad.is_zero() {
            return Err(PainleveError::GaugeSingularity("branch variable s"));
        }
        if spec.kind == PartitionKind::TwoNminusOneOne && F::sqrt_int(2).is_none() {
            return Err(PainleveError::InvalidInput("field lacks the radical needed by (2n-1,1)".into()));
        }
        Ok(RootOfT { spec, s })
    }

    /// `t = k s` for `(2n-1,1)`, with `k = sqrt((2n-1)/2)`.
    fn linear_factor(n: i64) -> F {
        F::sqrt_int(2 * (2 * n - 1)).expect("radical checked at construction") * F::frac(1, 2)
    }

    /// `(n,n,1)` at `n = 1` uses the cross-ratio `t = (1+s)/(2s-1)` of the
    /// eigenvalues of `s Lambda_1 + Lambda_2`, an involution of the line.
    fn is_moebius(spec: PartitionSpec) -> bool {
        spec.kind == PartitionKind::NNOne && spec.n == 1
    }

    fn moebius(v: &F) -> Option<F> {
        (v.clone() + F::one()).div(&(v.clone() * F::from_i64(2) - F::one()))
    }

    pub fn t(&self) -> F {
        let n = self.spec.n as i64;
        let s = self.s.clone();
        if Self::is_moebius(self.spec) {
            return Self::moebius(&s).expect("2s != 1 checked at construction");
        }
        match self.spec.kind {
            PartitionKind::NplusNplus => s.powi(-(n as i32 + 1)).expect("s != 0"),
            PartitionKind::NNOne => s.powi(-(n as i32)).expect("s != 0"),
            PartitionKind::TwoNminusOneOne => Self::linear_factor(n) * s,
            PartitionKind::TwoNOne => -(F::frac(n, 4) * s.square()),
        }
    }

    pub fn ds_dt(&self) -> F {
        let n = self.spec.n as i64;
        let s = self.s.clone();
        if Self::is_moebius(self.spec) {
            return -((s * F::from_i64(2) - F::one()).square() * F::frac(1, 3));
        }
        match self.spec.kind {
            PartitionKind::NplusNplus => -(s.powi(n as i32 + 2).unwrap() * F::frac(1, n + 1)),
            PartitionKind::NNOne => -(s.powi(n as i32 + 1).unwrap() * F::frac(1, n)),
            PartitionKind::TwoNminusOneOne => Self::linear_factor(n).inv().unwrap(),
            PartitionKind::TwoNOne => -(F::frac(2, n) * s.inv().unwrap()),
        }
    }

    /// Recover `s` from `t` for the partitions where that is rational.
    /// Multivalued roots take the principal branch in floating point.
    pub fn from_t(spec: PartitionSpec, t: &F) -> Option<F> {
        let n = spec.n as i64;
        match spec.kind {
            PartitionKind::TwoNminusOneOne => t.div(&Self::linear_factor(n)),
            _ if Self::is_moebius(spec) => Self::moebius(t),
            _ => None,
        }
    }
}

/// Everything needed to write down `B` and `M` at one point.
#[derive(Clone, Debug)]
pub struct LaxData<F> {
    pub spec: PartitionSpec,
    pub params: Params<F>,
    pub kappas: KappaSet<F>,
    pub root: RootOfT<F>,
    pub x: PhasePoint<F>,
    pub aux: AuxState<F>,
}

impl<F: Field> LaxData<F> {
    /// `t` is taken from the branch variable, not supplied separately.
    pub fn new(spec: PartitionSpec, params: Params<F>, s: F, q: Vec<F>, p: Vec<F>, aux: AuxState<F>) -> Result<Self> {
        if q.len() != spec.n || p.len() != spec.n {
            return Err(PainleveError::InvalidInput(format!("{spec} needs {} q and p values", spec.n)));
        }
        if !aux.fits(spec.kind) {
            return Err(PainleveError::MissingAux(format!("{:?} does not match {}", aux.names(), spec.kind)));
        }
        for (v, name) in aux.values().iter().zip(aux.names()) {
            if v.is_zero() {
                return Err(PainleveError::GaugeSingularity(name));
            }
        }
        let kappas = dress_parameters(spec, &params)?;
        let root = RootOfT::new(spec, s)?;
        let t = root.t();
        Ok(LaxData { spec, params, kappas, root, x: PhasePoint::new(q, p, t), aux })
    }

    pub fn sys(&self) -> SystemId {
        SystemId::of_partition(self.spec)
    }

    /// Left-hand prefactor `c(t)` of the Lax form.
    pub fn prefactor(&self) -> F {
        let t = self.x.t.clone();
        match self.spec.kind {
            PartitionKind::NplusNplus | PartitionKind::NNOne => t.clone() * (t - F::one()),
            PartitionKind::TwoNminusOneOne => F::one(),
            PartitionKind::TwoNOne => t,
        }
    }

    fn map<G: Field>(&self, f: impl Fn(&F) -> G) -> LaxData<G> {
        LaxData {
            spec: self.spec,
            params: self.params.map(&f),
            kappas: KappaSet {
                kappa: self.kappas.kappa.iter().map(&f).collect(),
                rho: self.kappas.rho.iter().map(&f).collect(),
            },
            root: RootOfT { spec: self.spec, s: f(&self.root.s) },
            x: self.x.map(&f),
            aux: self.aux.map(&f),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    B,
    M,
}

/// Negate one coefficient of `B` or `M`. Used only by the mutation harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EntryFlip {
    pub which: Which,
    pub row: usize,
    pub col: usize,
    pub exp: i32,
}

/// Mutations threaded through the residual computation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LaxMutation {
    pub entry: Option<EntryFlip>,
    pub ham: HamMutation,
    /// Added to `dp_1/dt` before assembling `D_t M`.
    pub bump_dp1: bool,
}

fn apply_flip<F: Field>(m: &mut LaurentMatrix<F>, which: Which, mutation: &LaxMutation) {
    if let Some(f) = mutation.entry.filter(|f| f.which == which) {
        let c = m.coeff(f.row, f.col, f.exp);
        m.add_term(f.row, f.col, f.exp, -(c.clone() + c));
    }
}

struct Ctx<'a, F> {
    d: &'a LaxData<F>,
    n: usize,
    size: usize,
}

impl<'a, F: Field> Ctx<'a, F> {
    fn new(d: &'a LaxData<F>) -> Self {
        Ctx { d, n: d.spec.n, size: d.spec.size() }
    }
    fn q(&self, i: usize) -> F {
        self.d.x.qi(i)
    }
    fn p(&self, i: usize) -> F {
        self.d.x.pi(i)
    }
    fn t(&self) -> F {
        self.d.x.t.clone()
    }
    fn s(&self) -> F {
        self.d.root.s.clone()
    }
    fn a(&self, i: i64) -> F {
        self.d.params.a(i)
    }
    fn eta(&self) -> F {
        self.d.params.eta.clone()
    }
    /// `t^{k/m}` written as `s^{-k}`.
    fn tr(&self, k: i64) -> F {
        self.s().powi(-(k as i32)).expect("s != 0")
    }
    fn aux(&self, k: usize) -> F {
        self.d.aux.values()[k].clone()
    }
    fn inv(&self, v: F, what: &'static str) -> Result<F> {
        v.inv().ok_or(PainleveError::GaugeSingularity(what))
    }
    fn c(&self, v: i64) -> F {
        F::from_i64(v)
    }
    fn fr(&self, a: i64, b: i64) -> F {
        F::frac(a, b)
    }
    /// `sum_{j<=i} (q_j - 1) p_j + sum_{j>i} (q_j - t) p_j + eta`
    fn s1(&self, i: usize) -> F {
        sum((1..=self.n).map(|j| {
            let shift = if j <= i { F::one() } else { self.t() };
            (self.q(j) - shift) * self.p(j)
        })) + self.eta()
    }
    fn qp_eta(&self) -> F {
        sum((1..=self.n).map(|j| self.q(j) * self.p(j))) + self.eta()
    }
    fn diag(&self, m: &mut LaurentMatrix<F>) {
        for i in 1..=self.size {
            m.add_term(i, i, 0, self.d.kappas.d(i));
        }
    }
}

fn nplus_b<F: Field>(d: &LaxData<F>) -> Result<LaurentMatrix<F>> {
    let c = Ctx::new(d);
    let (n, ni) = (c.n, c.n as i64);
    let mut b = LaurentMatrix::zeros(c.size);
    let (t, eta) = (c.t(), c.eta());
    let tm1 = t.clone() - F::one();
    let winv = c.inv(c.aux(0), "w_{2n+1}")?;
    let ev = (c.fr(ni, 2 * (ni + 1))
        - sum((1..=ni).map(|k| c.c(k) * (c.a(2 * k - 1) + c.a(2 * k)))) * c.fr(1, ni + 1))
        * tm1.clone();
    for i in 1..=n {
        let ii = i as i64;
        let qi = c.q(i);
        let u = -sum((1..i).map(|j| qi.clone() * (c.q(j) - F::one()) * c.p(j)))
            - sum((i..=n).map(|j| qi.clone() * (c.q(j) - t.clone()) * c.p(j)))
            - eta.clone() * qi.clone()
            + tm1.clone() * eta.clone() * c.fr(1, ni + 1)
            + (sum((ii..=ni).map(|k| c.a(2 * k - 1) + c.a(2 * k))) - c.fr(ni + 1 - ii, ni + 1)) * tm1.clone();
        b.add_term(2 * i - 1, 2 * i - 1, 0, u);
        b.add_term(2 * i, 2 * i, 0, qi * c.s1(i) + ev.clone());
        b.add_term(2 * i - 1, 2 * i, 0, -(c.tr(ii) * c.s1(i) * winv.clone()));
    }
    let tail = sum((1..=n).map(|j| (c.q(j) - t.clone()) * c.p(j))) + eta.clone();
    b.add_term(
        2 * n + 1,
        2 * n + 1,
        0,
        -sum((1..=n).map(|j| t.clone() * (c.q(j) - F::one()) * c.p(j)))
            - (c.c(ni) * t.clone() + F::one()) * eta.clone() * c.fr(1, ni + 1),
    );
    b.add_term(2 * n + 2, 2 * n + 2, 0, tail.clone() + ev);
    b.add_term(2 * n + 1, 2 * n + 2, 0, -(tail * winv));
    let band = tm1.clone() * c.fr(1, ni + 1) * c.tr(1).inv().unwrap();
    let w = c.aux(0);
    b.add_term(2 * n + 2, 1, 1, band.clone() * w.clone());
    for i in 1..=n {
        let tri = c.tr(i as i64 + 1).inv().unwrap();
        b.add_term(2 * i, 2 * i + 1, 1, tm1.clone() * w.clone() * c.q(i) * c.fr(1, ni + 1) * tri);
        b.add_term(2 * i - 1, 2 * i + 1, 1, -band.clone());
    }
    b.add_term(2 * n + 1, 1, 1, -band);
    Ok(b.traceless())
}

fn nplus_m<F: Field>(d: &LaxData<F>) -> Result<LaurentMatrix<F>> {
    let c = Ctx::new(d);
    let (n, ni) = (c.n, c.n as i64);
    let mut m = LaurentMatrix::zeros(c.size);
    c.diag(&mut m);
    let w = c.aux(0);
    let winv = c.inv(w.clone(), "w_{2n+1}")?;
    let t = c.t();
    for i in 1..=n {
        let ii = i as i64;
        m.add_term(2 * i - 1, 2 * i, 0, c.c(ni + 1) * c.tr(ii) * c.p(i) * winv.clone());
        m.add_term(2 * i - 1, 2 * i + 1, 1, c.s());
        m.add_term(2 * i, 2 * i + 2, 1, F::one());
        if i < n {
            let v = -(w.clone() * (c.q(i) - c.q(i + 1)) * c.tr(ii + 1).inv().unwrap());
            m.add_term(2 * i, 2 * i + 1, 1, v);
        }
    }
    m.add_term(2 * n + 1, 2 * n + 2, 0, -(c.c(ni + 1) * c.qp_eta() * winv));
    m.add_term(2 * n + 2, 1, 1, -(w.clone() * (F::one() - c.q(1)) * c.s()));
    m.add_term(2 * n, 2 * n + 1, 1, -(w * (c.q(n) - t.clone()) * t.inv().unwrap()));
    m.add_term(2 * n + 1, 1, 1, c.s());
    m.add_term(2 * n + 2, 2, 1, F::one());
    Ok(m)
}

fn p4_b<F: Field>(d: &LaxData<F>) -> Result<LaurentMatrix<F>> {
    let c = Ctx::new(d);
    let (n, ni) = (c.n, c.n as i64);
    let size = c.size;
    let lam = c.aux(0);
    let linv = c.inv(lam.clone(), "lambda_{n+1}")?;
    let t = c.t();
    let mut b = LaurentMatrix::zeros(size);
    if n == 1 {
        let r2 = F::sqrt_int(2).unwrap();
        let q = c.q(1);
        b.add_term(1, 1, 0, q.clone());
        b.add_term(2, 2, 0, -q.clone());
        b.add_term(1, 1, 1, F::one());
        b.add_term(2, 2, 1, -F::one());
        b.add_term(1, 2, 0, r2.clone() * lam);
        b.add_term(2, 1, 1, -(r2 * q * linv));
        return Ok(b);
    }
    let r = F::sqrt_int(2 * (2 * ni - 1)).unwrap() * c.fr(1, 2 * ni - 1);
    b.add_term(1, 1, 0, c.q(n) + c.fr(ni - 1, 2 * ni - 1) * t.clone());
    for i in 1..n {
        let ps = sum((1..=i).map(|j| c.p(n - j + 1)));
        b.add_term(2 * i, 2 * i, 0, ps.clone() - c.q(n - i + 1) - c.fr(ni, 2 * ni - 1) * t.clone());
        b.add_term(2 * i + 1, 2 * i + 1, 0, -ps + c.q(n - i) + c.fr(ni - 1, 2 * ni - 1) * t.clone());
    }
    b.add_term(2 * n, 2 * n, 0, -c.q(1));
    b.add_term(2 * n - 1, 2 * n, 0, r.clone() * lam);
    b.add_term(2 * n, 1, 1, -(c.q(1) * linv));
    for i in 1..=2 * n - 2 {
        b.add_term(i, i + 1, 1, r.clone());
    }
    b.add_term(2 * n - 1, 1, 1, r);
    Ok(b)
}

fn p4_m<F: Field>(d: &LaxData<F>) -> Result<LaurentMatrix<F>> {
    let c = Ctx::new(d);
    let (n, ni) = (c.n, c.n as i64);
    let lam = c.aux(0);
    let linv = c.inv(lam.clone(), "lambda_{n+1}")?;
    let t = c.t();
    let mut m = LaurentMatrix::zeros(c.size);
    c.diag(&mut m);
    if n == 1 {
        let r2 = F::sqrt_int(2).unwrap();
        let (q, p) = (c.q(1), c.p(1));
        m.add_term(1, 2, 0, r2.clone() * lam.clone() * p.clone());
        m.add_term(1, 1, 1, t.clone() + c.c(2) * q.clone());
        m.add_term(2, 2, 1, -(t.clone() + c.c(2) * q.clone()));
        m.add_term(1, 2, 1, c.c(2) * r2.clone() * lam);
        let e21 = q.clone() * p - q.square() - t * q.clone() - c.a(1);
        m.add_term(2, 1, 1, r2.clone() * e21 * linv.clone());
        m.add_term(1, 1, 2, c.c(2));
        m.add_term(2, 2, 2, c.c(-2));
        m.add_term(2, 1, 2, -(c.c(2) * r2 * q * linv));
        return Ok(m);
    }
    let k = F::sqrt_int(2 * (2 * ni - 1)).unwrap();
    let q1 = c.q(1);
    m.add_term(2 * n - 1, 2 * n, 0, k.clone() * lam.clone() * c.p(1));
    let psum = sum((1..=n).map(|j| c.p(j)));
    let phi0 = c.c(2 * ni - 1) * (q1.clone() * psum - q1.clone() * c.q(n) - t.clone() * q1.clone() - c.a(1)) * linv.clone();
    m.add_term(2 * n, 1, 1, phi0);
    for i in 1..n {
        m.add_term(2 * i - 1, 2 * i, 1, k.clone() * c.p(n - i + 1));
        m.add_term(2 * i, 2 * i + 1, 1, k.clone() * (c.q(n - i) - c.q(n - i + 1)));
    }
    m.add_term(2 * n - 2, 2 * n, 1, c.c(2) * lam);
    let tail = sum((2..=n).map(|j| c.p(j))) - c.q(n) - t;
    m.add_term(2 * n - 1, 1, 1, -(k.clone() * tail));
    m.add_term(2 * n, 2, 2, -(k * q1 * linv));
    for i in 1..=2 * n - 3 {
        m.add_term(i, i + 2, 2, c.c(2));
    }
    m.add_term(2 * n - 2, 1, 2, c.c(2));
    m.add_term(2 * n - 1, 2, 2, c.c(2));
    Ok(m)
}

fn p5_b<F: Field>(d: &LaxData<F>) -> Result<LaurentMatrix<F>> {
    let c = Ctx::new(d);
    let (n, ni) = (c.n, c.n as i64);
    let size = c.size;
    let s = c.s();
    let lam = c.aux(0);
    let linv = c.inv(lam.clone(), "lambda_{n+1}")?;
    let sinv = s.inv().unwrap();
    let s2 = s.square();
    let two_s_inv = sinv.clone() * c.fr(1, 2);
    let big_p = c.c(2) * sum((0..=ni).map(|j| c.a(2 * j))) - F::one()
        + c.c(4) * sum((1..=n).map(|j| c.q(j) * c.p(j)));
    let c1 = c.fr(ni * (ni - 1), 2);
    let c2 = c.fr(ni * (ni + 1), 2);
    let pn = c.p(n);
    let psum = |lo: usize, hi: usize| sum((lo..=hi).map(|j| c.p(j)));
    let mut b = LaurentMatrix::zeros(size);
    let mut diag = vec![F::zero(); size + 1];
    diag[1] = -(big_p.clone() + c.c(4) * pn.clone() + c1.clone() * s2.clone()) * two_s_inv.clone();
    diag[2] = (big_p.clone() - c.c(4) * psum(1, n - 1) - c.c(8) * pn.clone() - c1.clone() * s2.clone())
        * two_s_inv.clone();
    for i in 1..n {
        let nqs = c.c(ni) * c.q(i) * s2.clone();
        diag[2 * i + 1] = -(big_p.clone() - c.c(4) * psum(i, n - 1) - nqs.clone() + c2.clone() * s2.clone())
            * two_s_inv.clone();
        diag[2 * i + 2] = (big_p.clone() - c.c(4) * psum(i + 1, n - 1) - c.c(8) * pn.clone() - nqs
            - c1.clone() * s2.clone())
            * two_s_inv.clone();
    }
    for (i, v) in diag.into_iter().enumerate().skip(1) {
        b.add_term(i, i, 0, v);
    }
    b.add_term(2 * n, size, 0, lam);
    b.add_term(size, 1, 1, c.c(2) * pn * linv * sinv);
    for i in 1..2 * n {
        b.add_term(i, i + 1, 1, F::one());
    }
    b.add_term(2 * n, 1, 1, F::one());
    // the matrix above generates the flow in s; rescale to t
    Ok(b.traceless().scale(&(s * c.fr(1, 2))))
}

fn p5_m<F: Field>(d: &LaxData<F>) -> Result<LaurentMatrix<F>> {
    let c = Ctx::new(d);
    let (n, ni) = (c.n, c.n as i64);
    let size = c.size;
    let s = c.s();
    let sinv = s.inv().unwrap();
    let lam = c.aux(0);
    let linv = c.inv(lam.clone(), "lambda_{n+1}")?;
    let mut m = LaurentMatrix::zeros(size);
    c.diag(&mut m);
    let ns = c.c(ni) * s.clone();
    let mut phi = vec![F::zero(); 2 * n + 1];
    phi[0] = -(c.c(2 * ni) * ((c.q(n) - F::one()) * c.p(n) + c.a(2 * ni)) * linv.clone());
    for j in 1..n {
        phi[2 * j + 1] = c.c(4) * c.p(j) * sinv.clone();
        phi[2 * j] = ns.clone() * (c.q(j) - c.q(j - 1));
    }
    phi[2 * n] = ns.clone() * lam.clone() * (c.q(n) - c.q(n - 1));
    phi[1] = -(c.c(4) * sum((1..=n).map(|j| c.p(j))) * sinv.clone()) + ns.clone();
    m.add_term(2 * n, size, 0, phi[2 * n].clone());
    m.add_term(size, 1, 1, phi[0].clone());
    for (i, v) in phi.iter().enumerate().take(2 * n).skip(1) {
        m.add_term(i, i + 1, 1, v.clone());
    }
    m.add_term(2 * n - 1, size, 1, c.c(2) * lam);
    m.add_term(2 * n, 1, 1, -(ns * (c.q(n - 1) - F::one())));
    m.add_term(size, 2, 2, c.c(4) * c.p(n) * sinv * linv);
    for i in 1..=2 * n - 2 {
        m.add_term(i, i + 2, 2, c.c(2));
    }
    m.add_term(2 * n - 1, 1, 2, c.c(2));
    m.add_term(2 * n, 2, 2, c.c(2));
    Ok(m.traceless())
}

fn nn1_b<F: Field>(d: &LaxData<F>) -> Result<LaurentMatrix<F>> {
    if d.spec.n == 1 {
        return nn1_rank_one_b(d);
    }
    let c = Ctx::new(d);
    let (n, ni) = (c.n, c.n as i64);
    let size = c.size;
    let (t, eta) = (c.t(), c.eta());
    let tm1 = t.clone() - F::one();
    let mu = c.aux(0);
    let lam = c.aux(1);
    let muinv = c.inv(mu.clone(), "mu_{n+1}")?;
    let linv = c.inv(lam.clone(), "lambda_{n+2}")?;
    let tinv = t.inv().unwrap();
    let big_s = c.qp_eta();
    let delta = c.a(2 * ni) * t.clone()
        - c.a(2 * ni + 1) * (c.c(ni - 1) + c.c(ni + 1) * t.clone()) * c.fr(1, 2 * ni);
    let pair = |j: i64| c.a(2 * j - 1) + c.a(2 * j) - c.fr(1, ni);
    let mut b = LaurentMatrix::zeros(size);
    for i in 1..=n {
        let ii = i as i64;
        let qi = c.q(i);
        let inner = sum((1..i).map(|j| (c.q(j) - F::one()) * c.p(j)))
            + sum((i..=n).map(|j| (c.q(j) - t.clone()) * c.p(j)))
            + eta.clone();
        let shift = sum((1..ii).map(|j| c.fr(j, ni) * pair(j))) - sum((ii..ni).map(|j| c.fr(ni - j, ni) * pair(j)));
        let u = -(qi.clone() * inner) + tm1.clone() * eta.clone() * c.fr(1, ni) - shift * tm1.clone() + delta.clone();
        b.add_term(2 * i - 1, 2 * i - 1, 0, u);
        b.add_term(2 * i, 2 * i, 0, qi * c.s1(i));
        b.add_term(2 * i - 1, 2 * i, 1, -(c.tr(ii - 1) * lam.clone() * c.s1(i) * muinv.clone()));
    }
    b.add_term(size, size, 0, -(tm1.clone() * big_s.clone()));
    b.add_term(size, 1, 0, tm1.clone() * mu.clone() * c.fr(1, ni));
    for i in 1..n {
        let v = tm1.clone() * mu.clone() * c.q(i) * c.fr(1, ni) * c.tr(i as i64).inv().unwrap() * linv.clone();
        b.add_term(2 * i, 2 * i + 1, 0, v);
    }
    b.add_term(2 * n, 2 * n + 1, 0, -(tm1.clone() * c.q(n) * big_s.clone() * tinv.clone() * linv.clone()));
    b.add_term(2 * n, 1, 0, tm1.clone() * mu * c.q(n) * c.fr(1, ni) * tinv * linv);
    b.add_term(2 * n - 1, 2 * n + 1, 1, tm1.clone() * big_s * c.s() * muinv);
    let l1 = crate::loopalg::heisenberg_lambda::<F>(d.spec, 1)?;
    let b = &b + &l1.scale(&-(tm1 * c.s() * c.fr(1, ni)));
    Ok(b.traceless())
}

fn nn1_m<F: Field>(d: &LaxData<F>) -> Result<LaurentMatrix<F>> {
    if d.spec.n == 1 {
        return nn1_rank_one_m(d);
    }
    let c = Ctx::new(d);
    let (n, ni) = (c.n, c.n as i64);
    let size = c.size;
    let t = c.t();
    let mu = c.aux(0);
    let lam = c.aux(1);
    let muinv = c.inv(mu.clone(), "mu_{n+1}")?;
    let linv = c.inv(lam.clone(), "lambda_{n+2}")?;
    let tinv = t.inv().unwrap();
    let big_s = c.qp_eta();
    let mut m = LaurentMatrix::zeros(size);
    c.diag(&mut m);
    m.add_term(size, 1, 0, mu.clone() * (c.q(1) - F::one()));
    for i in 1..n {
        let v = -(mu.clone() * (c.q(i) - c.q(i + 1)) * c.tr(i as i64).inv().unwrap() * linv.clone());
        m.add_term(2 * i, 2 * i + 1, 0, v);
    }
    let v = c.c(ni) * ((c.q(n) - t.clone()) * big_s.clone() + c.a(2 * ni + 1) * t.clone()) * tinv.clone() * linv.clone();
    m.add_term(2 * n, 2 * n + 1, 0, v);
    m.add_term(2 * n, 1, 0, mu * (c.q(1) - c.q(n) * tinv) * linv);
    for i in 1..=n {
        let v = c.c(ni) * c.tr(i as i64 - 1) * lam.clone() * c.p(i) * muinv.clone();
        m.add_term(2 * i - 1, 2 * i, 1, v);
    }
    m.add_term(size, 2, 1, lam);
    m.add_term(2 * n - 1, size, 1, -(c.c(ni) * big_s * c.s() * muinv));
    let l1 = crate::loopalg::heisenberg_lambda::<F>(d.spec, 1)?;
    let l2 = crate::loopalg::heisenberg_lambda::<F>(d.spec, 2)?;
    Ok(&(&m + &l1.scale(&c.s())) + &l2)
}

type Dense<F> = Vec<Vec<F>>;

/// Constant part of `M` for `(1,1,1)`, dual to a Fuchsian `2x2` system with
/// rank-one residues at `0, 1, t`, conjugated by `diag(mu, lambda, 1)`.
/// Also returns the `z^0` part of `B / (t(t-1))`.
fn nn1_rank_one_parts<F: Field>(d: &LaxData<F>) -> Result<(Dense<F>, Dense<F>)> {
    let c = Ctx::new(d);
    let (q, p, t) = (c.q(1), c.p(1), c.t());
    let one = F::one();
    let eta = c.eta();
    let th = [c.a(3) - eta.clone(), c.a(0), c.a(2)];
    let k2 = eta - one.clone();
    let big_s = -c.a(1);
    let tm1 = t.clone() - one.clone();
    let qm1 = q.clone() - one.clone();
    let qmt = q.clone() - t.clone();
    let th01 = th[0].clone() + th[1].clone();
    let (qi, qm1i, qmti) = (c.inv(q.clone(), "q_1")?, c.inv(qm1.clone(), "q_1 - 1")?, c.inv(qmt.clone(), "q_1 - t")?);
    let (ti, tm1i) = (t.inv().unwrap(), tm1.inv().unwrap());
    let qs = q.clone() * big_s;

    let mut a = vec![vec![F::zero(); 3]; 3];
    for i in 0..3 {
        a[i][i] = th[i].clone();
    }
    a[0][1] = qm1.clone() * (qs.clone() - p.clone() * q.clone() * qmt.clone() - t.clone() * th[0].clone())
        * qi.clone() * tm1i.clone();
    a[0][2] = -(qmt.clone() * (qs.clone() - p.clone() * q.clone() * qm1.clone() - th[0].clone()))
        * qi.clone() * tm1i.clone();
    a[1][0] = q.clone()
        * (qs.clone() - k2.clone() - p.clone() * qm1.clone() * qmt.clone() - t.clone() * th[1].clone()
            - th[0].clone() - th[2].clone())
        * ti.clone() * qm1i.clone();
    a[1][2] = -(qmt.clone()
        * (qs.clone() - k2.clone() - p.clone() * q.clone() * qm1.clone() - th[0].clone() - th[2].clone()))
        * ti.clone() * qm1i.clone();
    a[2][0] = q.clone()
        * (qs.clone() - k2.clone() * t.clone() - p.clone() * qm1.clone() * qmt.clone() - t.clone() * th01.clone()
            - th[2].clone())
        * qmti.clone();
    a[2][1] = -(qm1.clone() * (qs - k2 * t.clone() - p.clone() * q.clone() * qmt.clone() - t.clone() * th01))
        * qmti.clone();

    // off-diagonal z^0 part of B from the z^1 equation, diagonal from z^0
    let den = t.clone() * tm1.clone() * (t.clone() * F::from_i64(2) - one.clone());
    let tt = t.clone() * F::from_i64(2) - one.clone();
    let r01 = -(F::from_i64(2) * tt.inv().unwrap());
    let r02 = -(ti.clone() * tt.inv().unwrap());
    let r12 = tm1i.clone() * tt.inv().unwrap();
    let tail = th[2].clone() * (-qmti.clone());
    let t2 = t.clone().square();
    let c0 = p.clone() * q.clone() * tm1i.clone() + tail.clone() + th[0].clone() * qi * tm1i
        + (-(F::from_i64(2) * p.clone() * t2.clone()) + p.clone() * t.clone()
            - F::from_i64(2) * t2.clone() * (th[0].clone() + th[2].clone())
            + F::from_i64(2) * t.clone() * th[2].clone()
            + th[0].clone()
            - th[2].clone())
            * den.inv().unwrap();
    let c1 = p * q * ti.clone() + tail - th[1].clone() * ti * qm1i
        + (-(F::from_i64(2) * t2 * (th[1].clone() + th[2].clone()))
            + F::from_i64(4) * t.clone() * th[1].clone()
            + F::from_i64(2) * t * th[2].clone()
            - th[1].clone()
            - th[2].clone())
            * den.inv().unwrap();

    let vals = d.aux.values();
    let g = [vals[0].clone(), vals[1].clone(), one];
    let ginv = [c.inv(g[0].clone(), "mu_{n+1}")?, c.inv(g[1].clone(), "lambda_{n+2}")?, F::one()];
    let flow = crate::psys::aux_flow(d.spec, &d.params, &d.x, &d.aux)?;
    let mut cm = vec![vec![F::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            if i != j {
                a[i][j] = g[i].clone() * a[i][j].clone() * ginv[j].clone();
                let r = match (i.min(j), i.max(j)) {
                    (0, 1) => r01.clone(),
                    (0, 2) => r02.clone(),
                    _ => r12.clone(),
                };
                cm[i][j] = r * a[i][j].clone();
            }
        }
    }
    cm[0][0] = c0 + flow[0].clone();
    cm[1][1] = c1 + flow[1].clone();
    Ok((a, cm))
}

fn nn1_rank_one_m<F: Field>(d: &LaxData<F>) -> Result<LaurentMatrix<F>> {
    let (a, _) = nn1_rank_one_parts(d)?;
    let mut m = LaurentMatrix::zeros(3);
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            m.add_term(i + 1, j + 1, 0, v.clone());
        }
    }
    let l1 = crate::loopalg::heisenberg_lambda::<F>(d.spec, 1)?;
    let l2 = crate::loopalg::heisenberg_lambda::<F>(d.spec, 2)?;
    Ok(&(&m + &l1.scale(&d.root.s)) + &l2)
}

fn nn1_rank_one_b<F: Field>(d: &LaxData<F>) -> Result<LaurentMatrix<F>> {
    let (_, cm) = nn1_rank_one_parts(d)?;
    let mut b = LaurentMatrix::zeros(3);
    for (i, row) in cm.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            b.add_term(i + 1, j + 1, 0, v.clone());
        }
    }
    let l1 = crate::loopalg::heisenberg_lambda::<F>(d.spec, 1)?;
    let b = &b + &l1.scale(&d.root.ds_dt());
    Ok(b.scale(&d.prefactor()))
}

pub fn build_b<F: Field>(data: &LaxData<F>) -> Result<LaurentMatrix<F>> {
    build_b_mut(data, &LaxMutation::default())
}

pub fn build_m<F: Field>(data: &LaxData<F>) -> Result<LaurentMatrix<F>> {
    build_m_mut(data, &LaxMutation::default())
}

pub fn build_b_mut<F: Field>(data: &LaxData<F>, mutation: &LaxMutation) -> Result<LaurentMatrix<F>> {
    let mut b = match data.spec.kind {
        PartitionKind::NplusNplus => nplus_b(data),
        PartitionKind::TwoNminusOneOne => p4_b(data),
        PartitionKind::TwoNOne => p5_b(data),
        PartitionKind::NNOne => nn1_b(data),
    }?;
    apply_flip(&mut b, Which::B, mutation);
    Ok(b)
}

pub fn build_m_mut<F: Field>(data: &LaxData<F>, mutation: &LaxMutation) -> Result<LaurentMatrix<F>> {
    let mut m = match data.spec.kind {
        PartitionKind::NplusNplus => nplus_m(data),
        PartitionKind::TwoNminusOneOne => p4_m(data),
        PartitionKind::TwoNOne => p5_m(data),
        PartitionKind::NNOne => nn1_m(data),
    }?;
    apply_flip(&mut m, Which::M, mutation);
    Ok(m)
}

/// Time derivatives of every input of the Lax matrices along the flow.
#[derive(Clone, Debug)]
pub struct Tangent<F> {
    pub dq: Vec<F>,
    pub dp: Vec<F>,
    /// `d/dt log` of each aux value.
    pub daux_log: Vec<F>,
}

/// On-shell tangent: Hamilton's equations plus the aux flows.
pub fn on_shell_tangent<F: Field>(data: &LaxData<F>, mutation: &LaxMutation) -> Result<Tangent<F>> {
    let (dq, mut dp) = vector_field_mut(data.sys(), &data.params, &data.x, mutation.ham)?;
    if mutation.bump_dp1 {
        dp[0] = dp[0].clone() + F::one();
    }
    let daux_log = aux_flow(data.spec, &data.params, &data.x, &data.aux)?;
    Ok(Tangent { dq, dp, daux_log })
}

/// `D_t M` by pushing the tangent through `M` with dual numbers.
pub fn total_time_derivative<F: Field>(
    data: &LaxData<F>,
    tangent: &Tangent<F>,
    mutation: &LaxMutation,
) -> Result<LaurentMatrix<F>> {
    let mut lifted = data.map(|v| Dual::constant(v.clone()));
    lifted.root.s.eps = data.root.ds_dt();
    lifted.x.t.eps = F::one();
    for i in 0..data.spec.n {
        lifted.x.q[i].eps = tangent.dq[i].clone();
        lifted.x.p[i].eps = tangent.dp[i].clone();
    }
    let vals = data.aux.values();
    let lifted_aux: Vec<Dual<F>> = vals
        .iter()
        .zip(&tangent.daux_log)
        .map(|(a, r)| Dual::new(a.clone(), a.clone() * r.clone()))
        .collect();
    lifted.aux = AuxState::from_values(data.spec.kind, &lifted_aux)?;
    let m = build_m_mut(&lifted, mutation)?;
    Ok(m.map(|v| v.eps.clone()))
}

#[derive(Clone, Debug)]
pub struct Residual<F> {
    pub matrix: LaurentMatrix<F>,
    /// Largest coefficient magnitude of the residual.
    pub max_abs: f64,
    /// `max(1, largest coefficient of [B, M])`.
    pub scale: f64,
    /// Largest entry magnitude over the requested `z` samples.
    pub sampled: f64,
}

impl<F: Field> Residual<F> {
    pub fn relative(&self) -> f64 {
        self.max_abs / self.scale
    }
    pub fn is_zero(&self) -> bool {
        self.matrix.is_zero()
    }
}

pub fn compatibility_residual<F: Field>(data: &LaxData<F>, zsamples: &[F]) -> Result<Residual<F>> {
    compatibility_residual_mut(data, zsamples, &LaxMutation::default())
}

pub fn compatibility_residual_mut<F: Field>(
    data: &LaxData<F>,
    zsamples: &[F],
    mutation: &LaxMutation,
) -> Result<Residual<F>> {
    let tangent = on_shell_tangent(data, mutation)?;
    residual_with_tangent(data, &tangent, zsamples, mutation)
}

/// Residual with an externally supplied tangent, e.g. from dense output.
pub fn residual_with_tangent<F: Field>(
    data: &LaxData<F>,
    tangent: &Tangent<F>,
    zsamples: &[F],
    mutation: &LaxMutation,
) -> Result<Residual<F>> {
    let b = build_b_mut(data, mutation)?;
    let m = build_m_mut(data, mutation)?;
    let dm = total_time_derivative(data, tangent, mutation)?;
    let bm = bracket(&b, &m)?;
    let r = &(&dm.scale(&data.prefactor()) - &b.z_deriv()) - &bm;
    let mut sampled = 0.0f64;
    for z in zsamples {
        for (_, p) in r.entries() {
            if let Some(v) = p.eval(z) {
                sampled = sampled.max(v.magnitude());
            }
        }
    }
    Ok(Residual { max_abs: r.max_magnitude(), scale: bm.max_magnitude().max(1.0), sampled, matrix: r })
}

/// Left minus right side of the partition's gauge constraint, read off the
/// entries of `M`. `None` where the realization has no such relation.
pub fn constraint_residual<F: Field>(data: &LaxData<F>) -> Result<Option<F>> {
    let m = build_m(data)?;
    let n = data.spec.n;
    let ni = n as i64;
    let size = data.spec.size();
    let k = &data.kappas;
    let kap = |i: usize| k.kappa[i % size].clone();
    let s = data.root.s.clone();
    let sinv = s.inv().unwrap();
    let two = F::from_i64(2);
    let half = F::frac(1, 2);
    Ok(match data.spec.kind {
        PartitionKind::NplusNplus => {
            // w_{2i-1} by descending the chain phi_{2i} = w_{2i+1} - s w_{2i-1}
            let mut w = vec![F::zero(); 2 * n + 2];
            w[2 * n + 1] = data.aux.values()[0].clone();
            for i in (1..=n).rev() {
                w[2 * i - 1] = (w[2 * i + 1].clone() - m.coeff(2 * i, 2 * i + 1, 1)) * sinv.clone();
            }
            let lhs = sum((0..=n).map(|i| w[2 * i + 1].clone() * m.coeff(2 * i + 1, 2 * i + 2, 0)));
            let rhs = sum((0..=n).map(|i| k.rho[0].clone() + kap(2 * i) - kap(2 * i + 1)));
            Some(lhs + rhs)
        }
        PartitionKind::TwoNminusOneOne if n == 1 => None,
        PartitionKind::TwoNminusOneOne => {
            let w0 = m.coeff(2 * n - 2, 2 * n, 1) * half.clone();
            let wl = -(m.coeff(2 * n, 2, 2) * half);
            let phi = |i: usize| m.coeff(i, i + 1, 1);
            let inner = m.coeff(2 * n, 1, 1) - sum((1..=2 * n - 2).map(|i| wl.clone() * phi(i)))
                + two * w0.clone() * wl.square()
                + F::from_i64(2 * ni - 1) * s * wl.clone();
            let lhs = w0 * inner - wl * m.coeff(2 * n - 1, 2 * n, 0);
            let rhs = F::from_i64(2 * ni - 1) * k.rho[0].clone() + kap(0) - kap(2 * n - 1);
            Some(lhs - rhs)
        }
        PartitionKind::TwoNOne => {
            let w0 = m.coeff(2 * n - 1, size, 1) * half.clone();
            let wl = -(m.coeff(size, 2, 2) * half);
            let inner = m.coeff(2 * n, size, 0) + sum((1..n).map(|i| w0.clone() * m.coeff(2 * i, 2 * i + 1, 1)));
            let lhs = w0 * (m.coeff(size, 1, 1) + F::from_i64(ni) * s * wl.clone()) - wl * inner;
            let rhs = F::from_i64(2 * ni) * k.rho[0].clone() + kap(0) - kap(2 * n);
            Some(lhs - rhs)
        }
        PartitionKind::NNOne if n == 1 => None,
        PartitionKind::NNOne => {
            let vals = data.aux.values();
            let (mu, lam) = (vals[0].clone(), vals[1].clone());
            let lam_inv = lam.inv().ok_or(PainleveError::GaugeSingularity("lambda_{n+2}"))?;
            let w0 = -(m.coeff(2 * n - 1, size, 1) * sinv.clone());
            let w2n = lam;
            let mut w = vec![F::zero(); 2 * n + 1];
            w[2 * n - 1] = s.powi(ni as i32 - 1).unwrap() * mu * data.x.qi(n) * lam_inv;
            for i in (1..n).rev() {
                w[2 * i - 1] = (w[2 * i + 1].clone() - m.coeff(2 * i, 2 * i + 1, 0)) * sinv.clone();
            }
            let lhs = sum((1..=n).map(|i| w[2 * i - 1].clone() * m.coeff(2 * i - 1, 2 * i, 1)))
                + w0 * (m.coeff(size, 1, 0) - w[1].clone() * w2n);
            let rhs = sum((1..=n).map(|i| k.rho[0].clone() + kap(2 * i - 2) - kap(2 * i - 1)));
            Some(lhs + rhs)
        }
    })
}

/// Summary of a sampled compatibility check.
#[derive(Clone, Debug, Default, Serialize, PartialEq)]
pub struct LaxReport {
    pub spec: String,
    pub n: usize,
    pub mode: String,
    pub points: usize,
    /// Relative residual in float mode, largest coefficient in exact mode.
    pub max_residual: f64,
    pub failures: usize,
    /// Sampled points redrawn because they hit a singular locus.
    pub rejected: usize,
    pub counterexamples: Vec<String>,
}

impl LaxReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.points > 0
    }

    /// Order-independent merge of two shards.
    pub fn merge(mut self, o: LaxReport) -> LaxReport {
        self.points += o.points;
        self.max_residual = self.max_residual.max(o.max_residual);
        self.failures += o.failures;
        self.rejected += o.rejected;
        self.counterexamples.extend(o.counterexamples);
        self
    }
}

/// Residual at `points` seeded on-shell samples; exact mode demands the
/// residual vanish identically, float mode bounds its relative size by `tol`.
pub fn residual_suite<F: Field>(
    spec: PartitionSpec,
    points: usize,
    seed: u64,
    mode: Mode,
    tol: f64,
    mutation: &LaxMutation,
) -> LaxReport {
    let mut sampler = Sampler::new(seed, mode);
    let mut report = LaxReport {
        spec: spec.kind.label().to_string(),
        n: spec.n,
        mode: match mode {
            Mode::Exact => "exact",
            Mode::Float => "float",
        }
        .to_string(),
        ..Default::default()
    };
    let mut guard = 0;
    while report.points < points {
        guard += 1;
        if guard > 100 * points + 100 {
            report.counterexamples.push("could not draw admissible points".into());
            report.failures += 1;
            break;
        }
        let z: F = sampler.avoiding(0.5, 2.0, &[F::one()], 0.05);
        let outcome = sampler
            .lax_data::<F>(spec)
            .and_then(|d| compatibility_residual_mut(&d, &[z], mutation).map(|r| (d, r)));
        let Ok((data, r)) = outcome else {
            report.rejected += 1;
            continue;
        };
        report.points += 1;
        let (value, ok) = match mode {
            Mode::Exact => (r.max_abs, r.is_zero()),
            Mode::Float => (r.relative(), r.relative() <= tol),
        };
        report.max_residual = report.max_residual.max(value);
        if !ok {
            report.failures += 1;
            if report.counterexamples.len() < 5 {
                let nonzero: Vec<String> = r
                    .matrix
                    .entries()
                    .filter(|(_, p)| !p.is_zero())
                    .map(|((i, j), p)| format!("({i},{j}): {p}"))
                    .take(4)
                    .collect();
                report.counterexamples.push(format!(
                    "s={} q={:?} p={:?} aux={:?} residual {}",
                    data.root.s,
                    data.x.q.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
                    data.x.p.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
                    data.aux.values().iter().map(|v| v.to_string()).collect::<Vec<_>>(),
                    nonzero.join("; ")
                ));
            }
        }
    }
    report
}
