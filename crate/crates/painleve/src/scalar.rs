//! Coefficient fields.
//!
//! Everything downstream is generic over [`Field`]. Exact work uses
//! [`Q`] (big rationals) or [`Quad`] (a quadratic extension of Q), float work
//! uses complex doubles, and [`Dual`] carries a first-order tangent through
//! any of them so that total time derivatives come out exactly.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde_json::{json, Map, Value};

pub type Q = BigRational;
pub type C64 = Complex64;

pub trait Field:
    Clone
    + fmt::Debug
    + fmt::Display
    + PartialEq
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
{
    fn zero() -> Self;
    fn one() -> Self;
    fn from_i64(v: i64) -> Self;
    fn from_rational(r: &Q) -> Self;
    /// Exact conversion for rational fields, plain embedding for floats.
    fn from_f64(x: f64) -> Self;
    fn is_zero(&self) -> bool;
    fn inv(&self) -> Option<Self>;
    /// Absolute value as a double (norm for complex, value for exact).
    fn magnitude(&self) -> f64;
    /// `sqrt(d)` if the field contains it.
    fn sqrt_int(d: i64) -> Option<Self>;
    fn json(&self) -> Map<String, Value>;

    fn frac(n: i64, d: i64) -> Self {
        Self::from_i64(n) * Self::from_i64(d).inv().expect("zero denominator in literal")
    }

    fn div(&self, den: &Self) -> Option<Self> {
        den.inv().map(|i| self.clone() * i)
    }

    fn powi(&self, e: i32) -> Option<Self> {
        let base = if e < 0 { self.inv()? } else { self.clone() };
        let mut acc = Self::one();
        for _ in 0..e.unsigned_abs() {
            acc = acc * base.clone();
        }
        Some(acc)
    }

    fn square(&self) -> Self {
        self.clone() * self.clone()
    }
}

fn q_json(r: &Q) -> Value {
    json!({"num": r.numer().to_string(), "den": r.denom().to_string()})
}

fn q_to_f64(r: &Q) -> f64 {
    let n = r.numer().to_f64().unwrap_or(f64::NAN);
    let d = r.denom().to_f64().unwrap_or(f64::NAN);
    if n.is_finite() && d.is_finite() {
        n / d
    } else {
        // huge operands: shift both down before dividing
        let bits = r.numer().bits().max(r.denom().bits()) as i64 - 1000;
        let sh = bits.max(0) as usize;
        let n = (r.numer() >> sh).to_f64().unwrap_or(0.0);
        let d = (r.denom() >> sh).to_f64().unwrap_or(1.0);
        n / d
    }
}

fn perfect_square(d: i64) -> Option<i64> {
    if d < 0 {
        return None;
    }
    let r = (d as f64).sqrt().round() as i64;
    (r * r == d).then_some(r)
}

impl Field for Q {
    fn zero() -> Self {
        Zero::zero()
    }
    fn one() -> Self {
        One::one()
    }
    fn from_i64(v: i64) -> Self {
        BigRational::from_integer(BigInt::from(v))
    }
    fn from_rational(r: &Q) -> Self {
        r.clone()
    }
    fn from_f64(x: f64) -> Self {
        BigRational::from_float(x).expect("finite float")
    }
    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }
    fn inv(&self) -> Option<Self> {
        (!Zero::is_zero(self)).then(|| self.recip())
    }
    fn magnitude(&self) -> f64 {
        q_to_f64(self).abs()
    }
    fn sqrt_int(d: i64) -> Option<Self> {
        perfect_square(d).map(Self::from_i64)
    }
    fn json(&self) -> Map<String, Value> {
        match q_json(self) {
            Value::Object(m) => m,
            _ => unreachable!(),
        }
    }
}

impl Field for C64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn one() -> Self {
        Complex64::new(1.0, 0.0)
    }
    fn from_i64(v: i64) -> Self {
        Complex64::new(v as f64, 0.0)
    }
    fn from_rational(r: &Q) -> Self {
        Complex64::new(q_to_f64(r), 0.0)
    }
    fn from_f64(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn is_zero(&self) -> bool {
        self.re == 0.0 && self.im == 0.0
    }
    fn inv(&self) -> Option<Self> {
        (!Field::is_zero(self)).then(|| Complex64::new(1.0, 0.0) / self)
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
    fn sqrt_int(d: i64) -> Option<Self> {
        Some(Complex64::new(d as f64, 0.0).sqrt())
    }
    fn json(&self) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("re".into(), json!(self.re));
        m.insert("im".into(), json!(self.im));
        m
    }
}

/// `a + b*sqrt(d)` with rational `a`, `b` and square-free `d`.
///
/// `d == 0` marks an element that has not met a radical yet; mixing two
/// different nonzero radicals is a logic error and panics.
#[derive(Clone, Debug)]
pub struct Quad {
    pub a: Q,
    pub b: Q,
    pub d: i64,
}

impl Quad {
    pub fn rational(a: Q) -> Self {
        Quad { a, b: Zero::zero(), d: 0 }
    }

    fn join(&self, other: &Quad) -> i64 {
        let l = !Zero::is_zero(&self.b);
        let r = !Zero::is_zero(&other.b);
        match (l, r) {
            (true, true) if self.d != other.d => {
                panic!("mixing sqrt({}) and sqrt({})", self.d, other.d)
            }
            (true, _) => self.d,
            (false, true) => other.d,
            (false, false) => self.d.max(other.d),
        }
    }

    fn norm(&self) -> Q {
        &self.a * &self.a - &self.b * &self.b * Q::from_i64(self.d)
    }
}

impl PartialEq for Quad {
    fn eq(&self, o: &Self) -> bool {
        self.a == o.a && self.b == o.b && (Zero::is_zero(&self.b) || self.d == o.d)
    }
}

impl fmt::Display for Quad {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if Zero::is_zero(&self.b) {
            write!(f, "{}", self.a)
        } else {
            write!(f, "{} + {}*sqrt({})", self.a, self.b, self.d)
        }
    }
}

impl Add for Quad {
    type Output = Quad;
    fn add(self, o: Quad) -> Quad {
        let d = self.join(&o);
        Quad { a: self.a + o.a, b: self.b + o.b, d }
    }
}

impl Sub for Quad {
    type Output = Quad;
    fn sub(self, o: Quad) -> Quad {
        let d = self.join(&o);
        Quad { a: self.a - o.a, b: self.b - o.b, d }
    }
}

impl Mul for Quad {
    type Output = Quad;
    fn mul(self, o: Quad) -> Quad {
        let d = self.join(&o);
        let dq = Q::from_i64(d);
        Quad {
            a: &self.a * &o.a + &self.b * &o.b * dq,
            b: &self.a * &o.b + &self.b * &o.a,
            d,
        }
    }
}

impl Neg for Quad {
    type Output = Quad;
    fn neg(self) -> Quad {
        Quad { a: -self.a, b: -self.b, d: self.d }
    }
}

impl Field for Quad {
    fn zero() -> Self {
        Quad::rational(Zero::zero())
    }
    fn one() -> Self {
        Quad::rational(One::one())
    }
    fn from_i64(v: i64) -> Self {
        Quad::rational(Q::from_i64(v))
    }
    fn from_rational(r: &Q) -> Self {
        Quad::rational(r.clone())
    }
    fn from_f64(x: f64) -> Self {
        Quad::rational(<Q as Field>::from_f64(x))
    }
    fn is_zero(&self) -> bool {
        Zero::is_zero(&self.a) && Zero::is_zero(&self.b)
    }
    fn inv(&self) -> Option<Self> {
        let nrm = self.norm();
        let ni = Field::inv(&nrm)?;
        Some(Quad { a: &self.a * &ni, b: -(&self.b * &ni), d: self.d })
    }
    fn magnitude(&self) -> f64 {
        let r = if Zero::is_zero(&self.b) { 0.0 } else { (self.d as f64).sqrt() };
        (q_to_f64(&self.a) + q_to_f64(&self.b) * r).abs()
    }
    fn sqrt_int(d: i64) -> Option<Self> {
        if d < 0 {
            return None;
        }
        if let Some(r) = perfect_square(d) {
            return Some(Quad::from_i64(r));
        }
        // pull square factors out so the radical is square-free
        let (mut k, mut rest) = (1i64, d);
        let mut f = 2i64;
        while f * f <= rest {
            while rest % (f * f) == 0 {
                rest /= f * f;
                k *= f;
            }
            f += 1;
        }
        Some(Quad { a: Zero::zero(), b: Q::from_i64(k), d: rest })
    }
    fn json(&self) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("a".into(), q_json(&self.a));
        m.insert("b".into(), q_json(&self.b));
        m.insert("sqrt".into(), json!(self.d));
        m
    }
}

/// First-order dual number `re + eps*E` with `E^2 = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dual<F> {
    pub re: F,
    pub eps: F,
}

impl<F: Field> Dual<F> {
    pub fn new(re: F, eps: F) -> Self {
        Dual { re, eps }
    }
    pub fn constant(re: F) -> Self {
        Dual { re, eps: F::zero() }
    }
    pub fn variable(re: F) -> Self {
        Dual { re, eps: F::one() }
    }
}

impl<F: Field> fmt::Display for Dual<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}) + ({})E", self.re, self.eps)
    }
}

impl<F: Field> Add for Dual<F> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Dual { re: self.re + o.re, eps: self.eps + o.eps }
    }
}

impl<F: Field> Sub for Dual<F> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Dual { re: self.re - o.re, eps: self.eps - o.eps }
    }
}

impl<F: Field> Mul for Dual<F> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let eps = self.re.clone() * o.eps + self.eps * o.re.clone();
        Dual { re: self.re * o.re, eps }
    }
}

impl<F: Field> Neg for Dual<F> {
    type Output = Self;
    fn neg(self) -> Self {
        Dual { re: -self.re, eps: -self.eps }
    }
}

impl<F: Field> Field for Dual<F> {
    fn zero() -> Self {
        Dual::constant(F::zero())
    }
    fn one() -> Self {
        Dual::constant(F::one())
    }
    fn from_i64(v: i64) -> Self {
        Dual::constant(F::from_i64(v))
    }
    fn from_rational(r: &Q) -> Self {
        Dual::constant(F::from_rational(r))
    }
    fn from_f64(x: f64) -> Self {
        Dual::constant(F::from_f64(x))
    }
    fn is_zero(&self) -> bool {
        self.re.is_zero() && self.eps.is_zero()
    }
    fn inv(&self) -> Option<Self> {
        let r = self.re.inv()?;
        let eps = -(self.eps.clone() * r.clone() * r.clone());
        Some(Dual { re: r, eps })
    }
    fn magnitude(&self) -> f64 {
        self.re.magnitude()
    }
    fn sqrt_int(d: i64) -> Option<Self> {
        F::sqrt_int(d).map(Dual::constant)
    }
    fn json(&self) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("re".into(), Value::Object(self.re.json()));
        m.insert("eps".into(), Value::Object(self.eps.json()));
        m
    }
}

/// Parse `"a/b"`, `"a"` or a decimal literal into an exact rational.
pub fn parse_rational(s: &str) -> Option<Q> {
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().ok()?;
        let d: BigInt = d.trim().parse().ok()?;
        if d.is_zero() {
            return None;
        }
        return Some(BigRational::new(n, d));
    }
    if let Ok(i) = s.parse::<BigInt>() {
        return Some(BigRational::from_integer(i));
    }
    let x: f64 = s.parse().ok()?;
    x.is_finite().then(|| <Q as Field>::from_f64(x))
}

/// Relative distance used by float-mode comparisons.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

pub fn q_abs(r: &Q) -> Q {
    r.abs()
}
