//! Sparse Laurent-polynomial matrices realizing `sl_N[z, 1/z]`.
//!
//! Matrix rows and columns are 1-based (`1..=N`). Root and generator
//! indices are 0-based and taken mod `N`, so `e_0` lives in the corner
//! `(N, 1)`. This is the only place that boundary is crossed: see
//! [`Generators::new`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;

use serde_json::{json, Value};

use crate::error::{PainleveError, Result};
use crate::scalar::Field;

#[derive(Clone, Debug, PartialEq)]
pub struct LaurentPoly<F> {
    terms: BTreeMap<i32, F>,
}

impl<F: Field> Default for LaurentPoly<F> {
    fn default() -> Self {
        Self::zero()
    }
}

impl<F: Field> LaurentPoly<F> {
    pub fn zero() -> Self {
        LaurentPoly { terms: BTreeMap::new() }
    }

    pub fn monomial(exp: i32, c: F) -> Self {
        let mut p = Self::zero();
        p.add_term(exp, c);
        p
    }

    pub fn constant(c: F) -> Self {
        Self::monomial(0, c)
    }

    pub fn add_term(&mut self, exp: i32, c: F) {
        if c.is_zero() {
            return;
        }
        let merged = match self.terms.remove(&exp) {
            Some(old) => old + c,
            None => c,
        };
        if !merged.is_zero() {
            self.terms.insert(exp, merged);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, exp: i32) -> F {
        self.terms.get(&exp).cloned().unwrap_or_else(F::zero)
    }

    pub fn terms(&self) -> impl Iterator<Item = (i32, &F)> {
        self.terms.iter().map(|(e, c)| (*e, c))
    }

    pub fn degrees(&self) -> impl Iterator<Item = i32> + '_ {
        self.terms.keys().copied()
    }

    pub fn scale(&self, c: &F) -> Self {
        let mut out = Self::zero();
        for (e, v) in self.terms() {
            out.add_term(e, v.clone() * c.clone());
        }
        out
    }

    /// `z d/dz`
    pub fn z_deriv(&self) -> Self {
        let mut out = Self::zero();
        for (e, v) in self.terms() {
            out.add_term(e, v.clone() * F::from_i64(e as i64));
        }
        out
    }

    pub fn eval(&self, z: &F) -> Option<F> {
        let mut acc = F::zero();
        for (e, v) in self.terms() {
            acc = acc + v.clone() * z.powi(e)?;
        }
        Some(acc)
    }

    pub fn max_magnitude(&self) -> f64 {
        self.terms.values().map(Field::magnitude).fold(0.0, f64::max)
    }

    pub fn map<G: Field>(&self, f: impl Fn(&F) -> G) -> LaurentPoly<G> {
        let mut out = LaurentPoly::zero();
        for (e, v) in self.terms() {
            out.add_term(e, f(v));
        }
        out
    }

    pub fn to_json(&self) -> Value {
        Value::Array(
            self.terms()
                .map(|(e, c)| {
                    let mut m = c.json();
                    m.insert("exp".into(), json!(e));
                    Value::Object(m)
                })
                .collect(),
        )
    }
}

impl<F: Field> Add for &LaurentPoly<F> {
    type Output = LaurentPoly<F>;
    fn add(self, o: &LaurentPoly<F>) -> LaurentPoly<F> {
        let mut out = self.clone();
        for (e, c) in o.terms() {
            out.add_term(e, c.clone());
        }
        out
    }
}

impl<F: Field> Sub for &LaurentPoly<F> {
    type Output = LaurentPoly<F>;
    fn sub(self, o: &LaurentPoly<F>) -> LaurentPoly<F> {
        let mut out = self.clone();
        for (e, c) in o.terms() {
            out.add_term(e, -c.clone());
        }
        out
    }
}

impl<F: Field> Mul for &LaurentPoly<F> {
    type Output = LaurentPoly<F>;
    fn mul(self, o: &LaurentPoly<F>) -> LaurentPoly<F> {
        let mut out = LaurentPoly::zero();
        for (a, x) in self.terms() {
            for (b, y) in o.terms() {
                out.add_term(a + b, x.clone() * y.clone());
            }
        }
        out
    }
}

impl<F: Field> Neg for &LaurentPoly<F> {
    type Output = LaurentPoly<F>;
    fn neg(self) -> LaurentPoly<F> {
        self.scale(&-F::one())
    }
}

impl<F: Field> fmt::Display for LaurentPoly<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self.terms().map(|(e, c)| format!("({c})z^{e}")).collect();
        write!(f, "{}", parts.join(" + "))
    }
}

/// Square matrix over `F[z, 1/z]`, stored sparsely with 1-based indices.
#[derive(Clone, Debug, PartialEq)]
pub struct LaurentMatrix<F> {
    size: usize,
    entries: BTreeMap<(usize, usize), LaurentPoly<F>>,
}

impl<F: Field> LaurentMatrix<F> {
    pub fn zeros(size: usize) -> Self {
        assert!(size > 0, "matrix size must be positive");
        LaurentMatrix { size, entries: BTreeMap::new() }
    }

    pub fn identity(size: usize) -> Self {
        let mut m = Self::zeros(size);
        for i in 1..=size {
            m.add_term(i, i, 0, F::one());
        }
        m
    }

    /// `c z^exp E_{i,j}`
    pub fn unit(size: usize, i: usize, j: usize, exp: i32, c: F) -> Self {
        let mut m = Self::zeros(size);
        m.add_term(i, j, exp, c);
        m
    }

    pub fn size(&self) -> usize {
        self.size
    }

    fn check(&self, i: usize, j: usize) {
        assert!(
            (1..=self.size).contains(&i) && (1..=self.size).contains(&j),
            "entry ({i},{j}) outside a {}x{} matrix",
            self.size,
            self.size
        );
    }

    pub fn add_term(&mut self, i: usize, j: usize, exp: i32, c: F) {
        self.check(i, j);
        let slot = self.entries.entry((i, j)).or_default();
        slot.add_term(exp, c);
        if slot.is_zero() {
            self.entries.remove(&(i, j));
        }
    }

    pub fn set(&mut self, i: usize, j: usize, p: LaurentPoly<F>) {
        self.check(i, j);
        if p.is_zero() {
            self.entries.remove(&(i, j));
        } else {
            self.entries.insert((i, j), p);
        }
    }

    pub fn get(&self, i: usize, j: usize) -> Option<&LaurentPoly<F>> {
        self.entries.get(&(i, j))
    }

    pub fn coeff(&self, i: usize, j: usize, exp: i32) -> F {
        self.get(i, j).map_or_else(F::zero, |p| p.coeff(exp))
    }

    pub fn entries(&self) -> impl Iterator<Item = ((usize, usize), &LaurentPoly<F>)> {
        self.entries.iter().map(|(k, v)| (*k, v))
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    fn same_size(&self, o: &Self) -> Result<()> {
        if self.size == o.size {
            Ok(())
        } else {
            Err(PainleveError::DimensionError { left: self.size, right: o.size })
        }
    }

    pub fn try_add(&self, o: &Self) -> Result<Self> {
        self.same_size(o)?;
        let mut out = self.clone();
        for ((i, j), p) in o.entries() {
            for (e, c) in p.terms() {
                out.add_term(i, j, e, c.clone());
            }
        }
        Ok(out)
    }

    pub fn scale(&self, c: &F) -> Self {
        let mut out = Self::zeros(self.size);
        for ((i, j), p) in self.entries() {
            out.set(i, j, p.scale(c));
        }
        out
    }

    pub fn try_mul(&self, o: &Self) -> Result<Self> {
        self.same_size(o)?;
        // bucket the right factor by row for a sparse product
        let mut rows: BTreeMap<usize, Vec<(usize, &LaurentPoly<F>)>> = BTreeMap::new();
        for ((k, j), p) in o.entries() {
            rows.entry(k).or_default().push((j, p));
        }
        let mut out = Self::zeros(self.size);
        for ((i, k), a) in self.entries() {
            if let Some(row) = rows.get(&k) {
                for (j, b) in row {
                    for (e, c) in (a * *b).terms() {
                        out.add_term(i, *j, e, c.clone());
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn trace(&self) -> LaurentPoly<F> {
        (1..=self.size)
            .filter_map(|i| self.get(i, i))
            .fold(LaurentPoly::zero(), |acc, p| &acc + p)
    }

    /// Remove the scalar part `tr(X)/N * I`.
    pub fn traceless(&self) -> Self {
        let tr = self.trace();
        if tr.is_zero() {
            return self.clone();
        }
        let inv_n = F::from_i64(self.size as i64).inv().expect("N > 0");
        let shift = tr.scale(&inv_n);
        let mut out = self.clone();
        for i in 1..=self.size {
            for (e, c) in shift.terms() {
                out.add_term(i, i, e, -c.clone());
            }
        }
        out
    }

    /// Entrywise `z d/dz`; this is how the grading operator acts.
    pub fn z_deriv(&self) -> Self {
        let mut out = Self::zeros(self.size);
        for ((i, j), p) in self.entries() {
            out.set(i, j, p.z_deriv());
        }
        out
    }

    pub fn degrees(&self) -> BTreeSet<i32> {
        self.entries.values().flat_map(|p| p.degrees()).collect()
    }

    /// The grade if every monomial carries the same power of `z`.
    pub fn pure_grade(&self) -> Option<i32> {
        let d = self.degrees();
        (d.len() == 1).then(|| *d.iter().next().unwrap())
    }

    /// The `z^exp` coefficient matrix as a constant Laurent matrix.
    pub fn graded_part(&self, exp: i32) -> Self {
        let mut out = Self::zeros(self.size);
        for ((i, j), p) in self.entries() {
            out.add_term(i, j, exp, p.coeff(exp));
        }
        out
    }

    pub fn max_magnitude(&self) -> f64 {
        self.entries.values().map(LaurentPoly::max_magnitude).fold(0.0, f64::max)
    }

    pub fn map<G: Field>(&self, f: impl Fn(&F) -> G) -> LaurentMatrix<G> {
        let mut out = LaurentMatrix::zeros(self.size);
        for ((i, j), p) in self.entries() {
            out.set(i, j, p.map(&f));
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<LaurentPoly<F>>> {
        (1..=self.size)
            .map(|i| (1..=self.size).map(|j| self.get(i, j).cloned().unwrap_or_default()).collect())
            .collect()
    }

    pub fn from_dense(rows: &[Vec<LaurentPoly<F>>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(PainleveError::DimensionError { left: 0, right: 0 });
        }
        let mut out = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(PainleveError::DimensionError { left: n, right: row.len() });
            }
            for (j, p) in row.iter().enumerate() {
                out.set(i + 1, j + 1, p.clone());
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Value {
        let entries: Vec<Value> = self
            .entries()
            .map(|((i, j), p)| json!({"row": i, "col": j, "poly": p.to_json()}))
            .collect();
        json!({"size": self.size, "entries": entries})
    }
}

/// `[A, B] = AB - BA`
pub fn bracket<F: Field>(a: &LaurentMatrix<F>, b: &LaurentMatrix<F>) -> Result<LaurentMatrix<F>> {
    let ab = a.try_mul(b)?;
    let ba = b.try_mul(a)?;
    ab.try_add(&ba.scale(&-F::one()))
}

impl<F: Field> Add for &LaurentMatrix<F> {
    type Output = LaurentMatrix<F>;
    fn add(self, o: &LaurentMatrix<F>) -> LaurentMatrix<F> {
        self.try_add(o).expect("matrix sizes differ")
    }
}

impl<F: Field> Sub for &LaurentMatrix<F> {
    type Output = LaurentMatrix<F>;
    fn sub(self, o: &LaurentMatrix<F>) -> LaurentMatrix<F> {
        self.try_add(&o.scale(&-F::one())).expect("matrix sizes differ")
    }
}

impl<F: Field> Mul for &LaurentMatrix<F> {
    type Output = LaurentMatrix<F>;
    fn mul(self, o: &LaurentMatrix<F>) -> LaurentMatrix<F> {
        self.try_mul(o).expect("matrix sizes differ")
    }
}

/// Affine Cartan matrix of type `A^(1)_m`, indices `0..=m`.
pub fn cartan_matrix(m: usize) -> Result<Vec<Vec<i64>>> {
    if m < 2 {
        return Err(PainleveError::UnsupportedRank(m));
    }
    let size = m + 1;
    Ok((0..size)
        .map(|i| {
            (0..size)
                .map(|j| {
                    if i == j {
                        2
                    } else if (i + 1) % size == j || (j + 1) % size == i {
                        -1
                    } else {
                        0
                    }
                })
                .collect()
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PartitionKind {
    /// `(n+1, n+1)`
    NplusNplus,
    /// `(2n-1, 1)`
    TwoNminusOneOne,
    /// `(2n, 1)`
    TwoNOne,
    /// `(n, n, 1)`
    NNOne,
}

impl PartitionKind {
    pub const ALL: [PartitionKind; 4] = [
        PartitionKind::NplusNplus,
        PartitionKind::TwoNminusOneOne,
        PartitionKind::TwoNOne,
        PartitionKind::NNOne,
    ];

    pub fn label(self) -> &'static str {
        match self {
            PartitionKind::NplusNplus => "n+1,n+1",
            PartitionKind::TwoNminusOneOne => "2n-1,1",
            PartitionKind::TwoNOne => "2n,1",
            PartitionKind::NNOne => "n,n,1",
        }
    }
}

impl fmt::Display for PartitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({})", self.label())
    }
}

impl FromStr for PartitionKind {
    type Err = PainleveError;
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| !c.is_whitespace() && *c != '(' && *c != ')').collect();
        Self::ALL
            .into_iter()
            .find(|k| k.label() == key)
            .ok_or_else(|| PainleveError::InvalidInput(format!("unknown partition '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PartitionSpec {
    pub kind: PartitionKind,
    pub n: usize,
}

impl PartitionSpec {
    pub fn new(kind: PartitionKind, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(PainleveError::InvalidInput("order n must be >= 1".into()));
        }
        Ok(PartitionSpec { kind, n })
    }

    pub fn size(&self) -> usize {
        let n = self.n;
        match self.kind {
            PartitionKind::NplusNplus => 2 * n + 2,
            PartitionKind::TwoNminusOneOne => 2 * n,
            PartitionKind::TwoNOne | PartitionKind::NNOne => 2 * n + 1,
        }
    }

    /// `s_i = (theta | alpha_i^vee)`, i.e. the z-power carried by `e_i`.
    pub fn grading(&self) -> Vec<i32> {
        let size = self.size();
        (0..size)
            .map(|i| match self.kind {
                PartitionKind::NplusNplus => (i % 2 == 0) as i32,
                PartitionKind::TwoNminusOneOne | PartitionKind::TwoNOne => (i + 1 < size) as i32,
                PartitionKind::NNOne => (i % 2 == 1) as i32,
            })
            .collect()
    }
}

impl fmt::Display for PartitionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} n={}", self.kind, self.n)
    }
}

/// Graded Chevalley generators with root indices `0..N`.
#[derive(Clone, Debug)]
pub struct Generators<F> {
    pub spec: PartitionSpec,
    pub grading: Vec<i32>,
    pub e: Vec<LaurentMatrix<F>>,
    pub f: Vec<LaurentMatrix<F>>,
    pub h: Vec<LaurentMatrix<F>>,
}

impl<F: Field> Generators<F> {
    pub fn new(spec: PartitionSpec) -> Self {
        let size = spec.size();
        let grading = spec.grading();
        // root i sits on (i, i+1) for i >= 1 and wraps to (N, 1) for i = 0
        let pos = |i: usize| if i == 0 { (size, 1) } else { (i, i + 1) };
        let mut e = Vec::with_capacity(size);
        let mut f = Vec::with_capacity(size);
        let mut h = Vec::with_capacity(size);
        for (i, &s) in grading.iter().enumerate() {
            let (r, c) = pos(i);
            e.push(LaurentMatrix::unit(size, r, c, s, F::one()));
            f.push(LaurentMatrix::unit(size, c, r, -s, F::one()));
            let mut hi = LaurentMatrix::unit(size, r, r, 0, F::one());
            hi.add_term(c, c, 0, -F::one());
            h.push(hi);
        }
        Generators { spec, grading, e, f, h }
    }

    pub fn size(&self) -> usize {
        self.grading.len()
    }

    /// Action of the grading operator `theta = z d/dz` by the adjoint.
    pub fn theta(&self, x: &LaurentMatrix<F>) -> LaurentMatrix<F> {
        x.z_deriv()
    }

    /// `e_{i,k} = ad e_i ad e_{i+1} ... ad e_{i+k-1} (e_{i+k})`, indices mod N.
    pub fn nested(&self, i: usize, k: usize) -> LaurentMatrix<F> {
        let size = self.size();
        let mut acc = self.e[(i + k) % size].clone();
        for j in (0..k).rev() {
            acc = bracket(&self.e[(i + j) % size], &acc).expect("generators share a size");
        }
        acc
    }
}

/// `Lambda_1` or `Lambda_2` for the partition, built from nested brackets.
pub fn heisenberg_lambda<F: Field>(spec: PartitionSpec, k: usize) -> Result<LaurentMatrix<F>> {
    if k != 1 && k != 2 {
        return Err(PainleveError::UnsupportedIndex(format!("Lambda_{k}: only k = 1, 2")));
    }
    let g = Generators::<F>::new(spec);
    let n = spec.n;
    let sum = |terms: Vec<(usize, usize)>| {
        terms
            .into_iter()
            .fold(LaurentMatrix::zeros(g.size()), |acc, (i, d)| &acc + &g.nested(i, d))
    };
    let m = match (spec.kind, k) {
        (PartitionKind::NplusNplus, 1) => sum((0..=n).map(|i| (2 * i + 1, 1)).collect()),
        (PartitionKind::NplusNplus, _) => sum((0..=n).map(|i| (2 * i + 2, 1)).collect()),
        // the generic sums collapse at n = 1, where the centralizer of
        // Lambda_1 in degree 2 is spanned by a single nested bracket
        (PartitionKind::TwoNminusOneOne, 1) if n == 1 => g.nested(1, 1),
        (PartitionKind::TwoNminusOneOne, _) if n == 1 => g.nested(1, 3).scale(&F::frac(1, 2)),
        (PartitionKind::TwoNminusOneOne, 1) => {
            let mut t: Vec<_> = (1..=2 * n - 2).map(|i| (i, 0)).collect();
            t.push((2 * n - 1, 1));
            sum(t)
        }
        (PartitionKind::TwoNminusOneOne, _) => {
            let mut t: Vec<_> = (1..=2 * n - 3).map(|i| (i, 1)).collect();
            t.push((2 * n - 2, 2));
            t.push((2 * n - 1, 2));
            sum(t)
        }
        (PartitionKind::TwoNOne, 1) => {
            let mut t: Vec<_> = (1..2 * n).map(|i| (i, 0)).collect();
            t.push((2 * n, 1));
            sum(t)
        }
        (PartitionKind::TwoNOne, _) if n == 1 => {
            (&g.nested(1, 2) + &g.nested(2, 2).scale(&F::from_i64(2))).scale(&F::frac(1, 3))
        }
        (PartitionKind::TwoNOne, _) => {
            let mut t: Vec<_> = (1..=2 * n - 2).map(|i| (i, 1)).collect();
            t.push((2 * n - 1, 2));
            t.push((2 * n, 2));
            sum(t)
        }
        (PartitionKind::NNOne, 1) => {
            let mut t: Vec<_> = (1..n).map(|i| (2 * i - 1, 1)).collect();
            t.push((2 * n - 1, 2));
            sum(t)
        }
        (PartitionKind::NNOne, _) => {
            let mut t: Vec<_> = (1..n).map(|i| (2 * i, 1)).collect();
            t.push((2 * n, 2));
            sum(t)
        }
    };
    Ok(m)
}
