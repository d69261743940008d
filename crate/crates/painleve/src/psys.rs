//! Coupled Painleve Hamiltonians and their flows.

use std::fmt;
use std::str::FromStr;

use crate::error::{PainleveError, Result};
use crate::loopalg::{PartitionKind, PartitionSpec};
use crate::scalar::{Dual, Field};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SystemKind {
    /// Coupled P_IV, symmetry `A_{2n}`.
    PA2n,
    /// Coupled P_V, symmetry `A_{2n+1}`.
    PA2n1,
    /// Coupled P_VI, symmetry `A_{2n+1}^*`.
    PA2n1star,
}

impl SystemKind {
    pub const ALL: [SystemKind; 3] = [SystemKind::PA2n, SystemKind::PA2n1, SystemKind::PA2n1star];

    pub fn label(self) -> &'static str {
        match self {
            SystemKind::PA2n => "PA2n",
            SystemKind::PA2n1 => "PA2n1",
            SystemKind::PA2n1star => "PA2n1star",
        }
    }

    /// The system whose flow a partition's Lax pair encodes.
    pub fn of_partition(kind: PartitionKind) -> Self {
        match kind {
            PartitionKind::NplusNplus | PartitionKind::NNOne => SystemKind::PA2n1star,
            PartitionKind::TwoNminusOneOne => SystemKind::PA2n,
            PartitionKind::TwoNOne => SystemKind::PA2n1,
        }
    }
}

impl FromStr for SystemKind {
    type Err = PainleveError;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| PainleveError::InvalidInput(format!("unknown system '{s}'")))
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SystemId {
    pub kind: SystemKind,
    pub n: usize,
}

impl SystemId {
    pub fn new(kind: SystemKind, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(PainleveError::InvalidInput("order n must be >= 1".into()));
        }
        Ok(SystemId { kind, n })
    }

    pub fn of_partition(spec: PartitionSpec) -> Self {
        SystemId { kind: SystemKind::of_partition(spec.kind), n: spec.n }
    }

    /// Number of root parameters `alpha_0..`.
    pub fn alpha_len(&self) -> usize {
        match self.kind {
            SystemKind::PA2n => 2 * self.n + 1,
            SystemKind::PA2n1 | SystemKind::PA2n1star => 2 * self.n + 2,
        }
    }
}

impl fmt::Display for SystemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} n={}", self.kind, self.n)
    }
}

/// Root parameters plus the gauge parameter `eta` (zero where unused).
#[derive(Clone, Debug, PartialEq)]
pub struct Params<F> {
    pub alpha: Vec<F>,
    pub eta: F,
}

impl<F: Field> Params<F> {
    pub fn new(alpha: Vec<F>, eta: F) -> Self {
        Params { alpha, eta }
    }

    /// `alpha_i` with the index taken mod the number of roots.
    pub fn a(&self, i: i64) -> F {
        let m = self.alpha.len() as i64;
        self.alpha[i.rem_euclid(m) as usize].clone()
    }

    pub fn alpha_sum(&self) -> F {
        self.alpha.iter().cloned().fold(F::zero(), |a, b| a + b)
    }

    pub fn map<G: Field>(&self, f: impl Fn(&F) -> G) -> Params<G> {
        Params { alpha: self.alpha.iter().map(&f).collect(), eta: f(&self.eta) }
    }

    /// Shape check, plus `sum alpha = 1` for the coupled P_VI system.
    /// Float fields accept a deviation up to `1e-12`.
    pub fn validate(&self, sys: SystemId) -> Result<()> {
        if self.alpha.len() != sys.alpha_len() {
            return Err(PainleveError::InvalidInput(format!(
                "{sys} needs {} alpha values, got {}",
                sys.alpha_len(),
                self.alpha.len()
            )));
        }
        if sys.kind == SystemKind::PA2n1star {
            self.check_normalized()?;
        }
        Ok(())
    }

    pub fn check_normalized(&self) -> Result<()> {
        let dev = self.alpha_sum() - F::one();
        if dev.is_zero() || dev.magnitude() <= 1e-12 && !is_exact::<F>() {
            Ok(())
        } else {
            Err(PainleveError::ConstraintViolation(format!("sum of alpha is {}", self.alpha_sum())))
        }
    }
}

/// Exact fields round-trip `1/3` through `from_f64` without loss; floats do not.
pub fn is_exact<F: Field>() -> bool {
    let third = F::frac(1, 3);
    third.clone() * F::from_i64(3) == F::one() && F::from_f64(1.0 / 3.0) != third
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhasePoint<F> {
    pub q: Vec<F>,
    pub p: Vec<F>,
    pub t: F,
}

impl<F: Field> PhasePoint<F> {
    pub fn new(q: Vec<F>, p: Vec<F>, t: F) -> Self {
        PhasePoint { q, p, t }
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    /// `q_i` for `i >= 1`, with `q_0 = 0`.
    pub fn qi(&self, i: usize) -> F {
        if i == 0 {
            F::zero()
        } else {
            self.q[i - 1].clone()
        }
    }

    pub fn pi(&self, i: usize) -> F {
        self.p[i - 1].clone()
    }

    pub fn map<G: Field>(&self, f: impl Fn(&F) -> G) -> PhasePoint<G> {
        PhasePoint { q: self.q.iter().map(&f).collect(), p: self.p.iter().map(&f).collect(), t: f(&self.t) }
    }
}

/// Gauge scalars of a Lax realization.
#[derive(Clone, Debug, PartialEq)]
pub enum AuxState<F> {
    /// `w_{2n+1}` of `(n+1,n+1)`.
    W(F),
    /// `lambda_{n+1}` of `(2n-1,1)` and `(2n,1)`.
    Lam(F),
    /// `mu_{n+1}` and `lambda_{n+2}` of `(n,n,1)`.
    MuLam(F, F),
}

impl<F: Field> AuxState<F> {
    pub fn values(&self) -> Vec<F> {
        match self {
            AuxState::W(w) | AuxState::Lam(w) => vec![w.clone()],
            AuxState::MuLam(m, l) => vec![m.clone(), l.clone()],
        }
    }

    pub fn names(&self) -> &'static [&'static str] {
        match self {
            AuxState::W(_) => &["w"],
            AuxState::Lam(_) => &["lam"],
            AuxState::MuLam(..) => &["mu", "lam"],
        }
    }

    pub fn fits(&self, kind: PartitionKind) -> bool {
        matches!(
            (self, kind),
            (AuxState::W(_), PartitionKind::NplusNplus)
                | (AuxState::Lam(_), PartitionKind::TwoNminusOneOne | PartitionKind::TwoNOne)
                | (AuxState::MuLam(..), PartitionKind::NNOne)
        )
    }

    pub fn from_values(kind: PartitionKind, v: &[F]) -> Result<Self> {
        let want = if kind == PartitionKind::NNOne { 2 } else { 1 };
        if v.len() != want {
            return Err(PainleveError::MissingAux(format!("{kind} needs {want} aux values")));
        }
        Ok(match kind {
            PartitionKind::NplusNplus => AuxState::W(v[0].clone()),
            PartitionKind::TwoNminusOneOne | PartitionKind::TwoNOne => AuxState::Lam(v[0].clone()),
            PartitionKind::NNOne => AuxState::MuLam(v[0].clone(), v[1].clone()),
        })
    }

    pub fn map<G: Field>(&self, f: impl Fn(&F) -> G) -> AuxState<G> {
        match self {
            AuxState::W(w) => AuxState::W(f(w)),
            AuxState::Lam(l) => AuxState::Lam(f(l)),
            AuxState::MuLam(m, l) => AuxState::MuLam(f(m), f(l)),
        }
    }
}

pub fn h_vi<F: Field>(k0: &F, k1: &F, kt: &F, kappa: &F, q: &F, p: &F, t: &F) -> F {
    let (q, p, t) = (q.clone(), p.clone(), t.clone());
    let q1 = q.clone() - F::one();
    let qt = q.clone() - t;
    q.clone() * q1.clone() * qt.clone() * p.square()
        - k0.clone() * q1.clone() * qt.clone() * p.clone()
        - k1.clone() * q.clone() * qt * p.clone()
        - (kt.clone() - F::one()) * q.clone() * q1 * p
        + kappa.clone() * q
}

pub fn h_iv<F: Field>(a: &F, b: &F, q: &F, p: &F, t: &F) -> F {
    q.clone() * p.clone() * (p.clone() - q.clone() - t.clone()) - a.clone() * q.clone() - b.clone() * p.clone()
}

pub fn h_v<F: Field>(a: &F, b: &F, c: &F, q: &F, p: &F, t: &F) -> F {
    q.clone() * (q.clone() - F::one()) * p.clone() * (p.clone() + t.clone())
        + a.clone() * t.clone() * q.clone()
        + b.clone() * p.clone()
        - c.clone() * q.clone() * p.clone()
}

fn sum<F: Field>(it: impl IntoIterator<Item = F>) -> F {
    it.into_iter().fold(F::zero(), |a, b| a + b)
}

/// Mutation hooks for the sensitivity harness; `None` in normal use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct HamMutation {
    /// Flip the sign of the coupling term with this index `(i, j)`, or of
    /// the kernel term `i` when `j == 0`.
    pub term: Option<(usize, usize)>,
}

fn check_time<F: Field>(kind: SystemKind, t: &F) -> Result<()> {
    match kind {
        SystemKind::PA2n1star if t.is_zero() || (t.clone() - F::one()).is_zero() => {
            Err(PainleveError::SingularTime(format!("t = {t} is a fixed singular point")))
        }
        SystemKind::PA2n1 if t.is_zero() => Err(PainleveError::SingularTime("t = 0".into())),
        _ => Ok(()),
    }
}

/// The Hamiltonian with the display prefactor (`t(t-1)` or `t`) divided out.
pub fn hamiltonian<F: Field>(sys: SystemId, params: &Params<F>, x: &PhasePoint<F>) -> Result<F> {
    hamiltonian_mut(sys, params, x, HamMutation::default())
}

pub fn hamiltonian_mut<F: Field>(
    sys: SystemId,
    params: &Params<F>,
    x: &PhasePoint<F>,
    mutation: HamMutation,
) -> Result<F> {
    params.validate(sys)?;
    if x.q.len() != sys.n || x.p.len() != sys.n {
        return Err(PainleveError::InvalidInput(format!("{sys} needs {} q and p values", sys.n)));
    }
    check_time(sys.kind, &x.t)?;
    let n = sys.n as i64;
    let a = |i: i64| params.a(i);
    let t = &x.t;
    let sign = |key: (usize, usize)| if mutation.term == Some(key) { -F::one() } else { F::one() };
    let mut kernel = F::zero();
    let mut coupling = F::zero();
    for i in 1..=sys.n {
        let (q, p) = (x.qi(i), x.pi(i));
        let ii = i as i64;
        let k = match sys.kind {
            SystemKind::PA2n1star => {
                let k0 = sum((0..=n).map(|j| a(2 * j + 1))) - a(2 * ii - 1) - params.eta.clone();
                let k1 = sum((0..ii).map(|j| a(2 * j)));
                let kt = sum((ii..=n).map(|j| a(2 * j)));
                let kap = a(2 * ii - 1) * params.eta.clone();
                h_vi(&k0, &k1, &kt, &kap, &q, &p, t)
            }
            SystemKind::PA2n => {
                let b = sum((1..=ii).map(|j| a(2 * j - 1)));
                h_iv(&a(2 * ii), &b, &q, &p, t)
            }
            SystemKind::PA2n1 => {
                let b = sum((1..=ii).map(|j| a(2 * j - 1)));
                let c = sum((1..=n + 1).map(|j| a(2 * j - 1)));
                h_v(&a(2 * ii), &b, &c, &q, &p, t)
            }
        };
        kernel = kernel + sign((i, 0)) * k;
        for j in i + 1..=sys.n {
            let (qj, pj) = (x.qi(j), x.pi(j));
            let c = match sys.kind {
                SystemKind::PA2n1star => {
                    (q.clone() - F::one())
                        * (qj.clone() - t.clone())
                        * ((q.clone() * p.clone() + a(2 * ii - 1)) * pj.clone()
                            + p.clone() * (pj.clone() * qj.clone() + a(2 * j as i64 - 1)))
                }
                SystemKind::PA2n => F::from_i64(2) * q.clone() * p.clone() * pj,
                SystemKind::PA2n1 => F::from_i64(2) * q.clone() * p.clone() * (qj - F::one()) * pj,
            };
            coupling = coupling + sign((i, j)) * c;
        }
    }
    let total = kernel + coupling;
    let pref = match sys.kind {
        SystemKind::PA2n1star => t.clone() * (t.clone() - F::one()),
        SystemKind::PA2n1 => t.clone(),
        SystemKind::PA2n => F::one(),
    };
    total.div(&pref).ok_or_else(|| PainleveError::SingularTime(format!("t = {t}")))
}

/// `(dq/dt, dp/dt)` by forward-mode differentiation of the Hamiltonian.
pub fn vector_field<F: Field>(sys: SystemId, params: &Params<F>, x: &PhasePoint<F>) -> Result<(Vec<F>, Vec<F>)> {
    vector_field_mut(sys, params, x, HamMutation::default())
}

pub fn vector_field_mut<F: Field>(
    sys: SystemId,
    params: &Params<F>,
    x: &PhasePoint<F>,
    mutation: HamMutation,
) -> Result<(Vec<F>, Vec<F>)> {
    let n = x.n();
    let dp = params.map(|v| Dual::constant(v.clone()));
    let base = x.map(|v| Dual::constant(v.clone()));
    let grad = |which: usize| -> Result<F> {
        let mut y = base.clone();
        if which < n {
            y.q[which].eps = F::one();
        } else {
            y.p[which - n].eps = F::one();
        }
        Ok(hamiltonian_mut(sys, &dp, &y, mutation)?.eps)
    };
    let mut dq = Vec::with_capacity(n);
    let mut dpv = Vec::with_capacity(n);
    for i in 0..n {
        dq.push(grad(n + i)?);
        dpv.push(-grad(i)?);
    }
    Ok((dq, dpv))
}

/// `d/dt log` of each aux variable, in the order of [`AuxState::values`].
pub fn aux_flow<F: Field>(
    spec: PartitionSpec,
    params: &Params<F>,
    x: &PhasePoint<F>,
    aux: &AuxState<F>,
) -> Result<Vec<F>> {
    if !aux.fits(spec.kind) {
        return Err(PainleveError::MissingAux(format!("{:?} does not match {}", aux.names(), spec.kind)));
    }
    let n = spec.n as i64;
    let nf = F::from_i64(n);
    let a = |i: i64| params.a(i);
    let t = x.t.clone();
    let eta = params.eta.clone();
    let one = F::one();
    let inv = |v: F| v.inv().ok_or_else(|| PainleveError::SingularTime(format!("t = {}", x.t)));
    let tt1 = || t.clone() * (t.clone() - F::one());
    let idx = 1..=spec.n;
    Ok(match spec.kind {
        PartitionKind::NplusNplus => {
            check_time(SystemKind::PA2n1star, &t)?;
            let mut r = -sum(idx.clone().map(|i| {
                let (q, p) = (x.qi(i), x.pi(i));
                (q.clone() - one.clone()) * (q.clone() - t.clone()) * p + a(2 * i as i64 - 1) * q
            }));
            r = r - a(2 * n + 1);
            r = r + (nf.clone() * t.clone() + F::from_i64(n + 2)) * F::frac(1, n + 1) * eta;
            r = r + sum((0..=n).map(|i| {
                F::frac(n - 2 * i, 2 * n + 2) * (a(2 * i - 1) + a(2 * i)) * (t.clone() - one.clone())
            }));
            vec![r * inv(tt1())?]
        }
        PartitionKind::TwoNminusOneOne => {
            vec![sum(x.p.iter().cloned()) - F::frac(n, 2 * n - 1) * t]
        }
        PartitionKind::TwoNOne => {
            check_time(SystemKind::PA2n1, &t)?;
            let pm = sum((0..=n).map(|j| a(2 * j) - a(2 * j + 1)));
            let r = -sum(idx.map(|i| x.qi(i) * x.pi(i))) - t.clone() * x.qi(spec.n)
                + F::frac(n + 1, 2) * t.clone()
                - pm * F::frac(1, 4);
            vec![r * inv(t)?]
        }
        PartitionKind::NNOne => {
            check_time(SystemKind::PA2n1star, &t)?;
            let tm1 = t.clone() - one.clone();
            let shift = F::frac(n + 1, 2 * n) * a(0)
                + sum((1..=n).map(|j| F::frac(n - 2 * j + 1, 2 * n) * (a(2 * j - 1) + a(2 * j))));
            let mu = -sum(idx.clone().map(|i| {
                let (q, p) = (x.qi(i), x.pi(i));
                q.clone() * ((q - one.clone()) * p + a(2 * i as i64 - 1))
            })) - a(2 * n) * t.clone()
                - (t.clone() - F::from_i64(n + 1)) * eta.clone() * F::frac(1, n)
                - shift * tm1;
            let lam = -sum(idx.map(|i| t.clone() * (x.qi(i) - one.clone()) * x.pi(i))) - t.clone() * eta;
            let d = inv(tt1())?;
            vec![mu * d.clone(), lam * d]
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Q;

    fn q(n: i64, d: i64) -> Q {
        Q::frac(n, d)
    }

    #[test]
    fn kernel_hand_cases() {
        let z = Q::zero();
        assert_eq!(h_vi(&z, &z, &z, &z, &Q::one(), &q(5, 1), &q(7, 1)), z);
        assert_eq!(h_vi(&Q::one(), &z, &z, &z, &q(2, 1), &Q::one(), &q(3, 1)), Q::one());
        assert_eq!(h_iv(&q(2, 1), &q(3, 1), &Q::one(), &Q::one(), &Q::one()), q(-6, 1));
        let one = Q::one();
        assert_eq!(h_v(&one, &one, &one, &q(2, 1), &one, &one), q(5, 1));
    }

    #[test]
    fn pa2n_zero_momenta() {
        let sys = SystemId::new(SystemKind::PA2n, 2).unwrap();
        let alpha: Vec<Q> = (1..=5).map(|i| q(i, 7)).collect();
        let x = PhasePoint::new(vec![q(2, 3), q(-1, 5)], vec![Q::zero(), Q::zero()], q(1, 2));
        let h = hamiltonian(sys, &Params::new(alpha.clone(), Q::zero()), &x).unwrap();
        assert_eq!(h, -(alpha[2].clone() * x.q[0].clone()) - alpha[4].clone() * x.q[1].clone());
    }

    #[test]
    fn singular_time_and_normalization() {
        let sys = SystemId::new(SystemKind::PA2n1star, 1).unwrap();
        let par = Params::new(vec![q(1, 4); 4], Q::zero());
        let x = PhasePoint::new(vec![q(1, 3)], vec![q(1, 5)], Q::one());
        assert!(matches!(hamiltonian(sys, &par, &x), Err(PainleveError::SingularTime(_))));
        let bad = Params::new(vec![q(1, 3); 4], Q::zero());
        let x = PhasePoint::new(vec![q(1, 3)], vec![q(1, 5)], q(2, 1));
        assert!(matches!(hamiltonian(sys, &bad, &x), Err(PainleveError::ConstraintViolation(_))));
    }

    #[test]
    fn pa2n_n1_flow_by_hand() {
        let sys = SystemId::new(SystemKind::PA2n, 1).unwrap();
        let par = Params::new(vec![q(1, 5), q(2, 5), q(3, 7)], Q::zero());
        let x = PhasePoint::new(vec![q(3, 2)], vec![q(-2, 3)], q(5, 4));
        let (dq, _) = vector_field(sys, &par, &x).unwrap();
        let (qq, pp, t) = (x.q[0].clone(), x.p[0].clone(), x.t.clone());
        let want = qq.clone() * (q(2, 1) * pp - qq - t) - par.alpha[1].clone();
        assert_eq!(dq[0], want);
    }

    #[test]
    fn exactness_probe() {
        assert!(is_exact::<Q>());
        assert!(!is_exact::<crate::scalar::C64>());
    }

    #[test]
    fn aux_mismatch() {
        let spec = PartitionSpec::new(PartitionKind::NNOne, 1).unwrap();
        let par = Params::new(vec![q(1, 4); 4], Q::zero());
        let x = PhasePoint::new(vec![q(1, 3)], vec![q(1, 5)], q(3, 1));
        let r = aux_flow(spec, &par, &x, &AuxState::W(Q::one()));
        assert!(matches!(r, Err(PainleveError::MissingAux(_))));
    }
}
