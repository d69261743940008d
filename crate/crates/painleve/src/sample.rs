//! Seeded random inputs shared by the verification suites and the CLI.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::laxpair::LaxData;
use crate::loopalg::{PartitionKind, PartitionSpec};
use crate::psys::{AuxState, Params, PhasePoint, SystemId, SystemKind};
use crate::scalar::{Field, Q};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Exact,
    Float,
}

pub struct Sampler {
    rng: ChaCha8Rng,
    pub mode: Mode,
}

impl Sampler {
    pub fn new(seed: u64, mode: Mode) -> Self {
        Sampler { rng: ChaCha8Rng::seed_from_u64(seed), mode }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Small-height rational in exact mode, uniform in `[lo, hi]` otherwise.
    pub fn range<F: Field>(&mut self, lo: f64, hi: f64) -> F {
        match self.mode {
            Mode::Exact => {
                // denominators too small to hit the interval are redrawn
                loop {
                    let den = self.rng.gen_range(1..=12i64);
                    let lo_n = (lo * den as f64).ceil() as i64;
                    let hi_n = (hi * den as f64).floor() as i64;
                    if lo_n <= hi_n {
                        return F::frac(self.rng.gen_range(lo_n..=hi_n), den);
                    }
                }
            }
            Mode::Float => F::from_f64(self.rng.gen_range(lo..=hi)),
        }
    }

    pub fn scalar<F: Field>(&mut self) -> F {
        self.range(-2.0, 2.0)
    }

    /// A value whose distance to every entry of `avoid` exceeds `margin`.
    pub fn avoiding<F: Field>(&mut self, lo: f64, hi: f64, avoid: &[F], margin: f64) -> F {
        loop {
            let v: F = self.range(lo, hi);
            if avoid.iter().all(|a| (v.clone() - a.clone()).magnitude() > margin) {
                return v;
            }
        }
    }

    pub fn nonzero<F: Field>(&mut self) -> F {
        self.avoiding(-2.0, 2.0, &[F::zero()], 0.1)
    }

    /// Root parameters with `sum alpha = 1`, and a random `eta` for the
    /// coupled P_VI system.
    pub fn params<F: Field>(&mut self, sys: SystemId) -> Params<F> {
        let len = sys.alpha_len();
        let mut alpha: Vec<F> = (0..len - 1).map(|_| self.range(-1.0, 1.0)).collect();
        let rest = alpha.iter().cloned().fold(F::one(), |a, b| a - b);
        alpha.push(rest);
        let eta = if sys.kind == SystemKind::PA2n1star { self.range(-1.0, 1.0) } else { F::zero() };
        Params::new(alpha, eta)
    }

    /// A time away from the fixed singular points of `sys`.
    pub fn time<F: Field>(&mut self, sys: SystemId) -> F {
        let bad = match sys.kind {
            SystemKind::PA2n1star => vec![F::zero(), F::one()],
            SystemKind::PA2n1 => vec![F::zero()],
            SystemKind::PA2n => vec![],
        };
        self.avoiding(-3.0, 3.0, &bad, 0.2)
    }

    pub fn phase_point<F: Field>(&mut self, sys: SystemId) -> PhasePoint<F> {
        let q = (0..sys.n).map(|_| self.scalar()).collect();
        let p = (0..sys.n).map(|_| self.scalar()).collect();
        let t = self.time(sys);
        PhasePoint::new(q, p, t)
    }

    /// Branch variable keeping `t` away from `0` and `1`.
    pub fn branch<F: Field>(&mut self, spec: PartitionSpec) -> F {
        match spec.kind {
            // t = (1+s)/(2s-1) here; s = -1, 1/2, 2 are t = 0, infinity, 1
            PartitionKind::NNOne if spec.n == 1 => {
                if self.rng.gen_bool(0.5) {
                    self.range(-0.8, 0.3)
                } else {
                    self.range(0.7, 1.8)
                }
            }
            PartitionKind::NplusNplus | PartitionKind::NNOne => {
                if self.rng.gen_bool(0.5) {
                    self.range(0.3, 0.8)
                } else {
                    self.range(1.25, 2.0)
                }
            }
            _ => {
                let v: F = self.range(0.3, 2.0);
                if self.rng.gen_bool(0.5) {
                    v
                } else {
                    -v
                }
            }
        }
    }

    pub fn aux<F: Field>(&mut self, kind: PartitionKind) -> AuxState<F> {
        let a: F = self.avoiding(0.3, 2.0, &[], 0.0);
        match kind {
            PartitionKind::NplusNplus => AuxState::W(a),
            PartitionKind::TwoNminusOneOne | PartitionKind::TwoNOne => AuxState::Lam(a),
            PartitionKind::NNOne => AuxState::MuLam(a, self.avoiding(0.3, 2.0, &[], 0.0)),
        }
    }

    pub fn lax_data<F: Field>(&mut self, spec: PartitionSpec) -> Result<LaxData<F>> {
        let sys = SystemId::of_partition(spec);
        let params = self.params(sys);
        let s = self.branch(spec);
        let q = (0..spec.n).map(|_| self.scalar()).collect();
        let p = (0..spec.n).map(|_| self.scalar()).collect();
        let aux = self.aux(spec.kind);
        LaxData::new(spec, params, s, q, p, aux)
    }
}

/// Rational literal helper.
pub fn q(n: i64, d: i64) -> Q {
    Q::frac(n, d)
}
