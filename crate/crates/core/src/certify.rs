//! Certified perturbation size for the smoothed membership function.
//!
//! For a perturbation `δ` with `‖δ‖₀ = l`, the hypercube splits into level
//! sets `H(e)` on which the likelihood ratio `Pr(x⊕ε = z) / Pr(x⊕δ⊕ε = z)`
//! equals `(β/(1−β))^e`. The region table holds, for every
//! `e ∈ {−n, …, n}`, the masses of `H(e)` under both distributions, obtained
//! by summing `θ(e, i) = |H(i−e, i)|` weighted point masses. The worst-case
//! mass that any base function consistent with `p̄` can keep on the perturbed
//! input is obtained by filling regions in decreasing ratio order; the
//! certified size is the largest `l` (scanning upward from 1) for which that
//! mass stays above one half.
//!
//! Two arithmetic backends are provided: exact rationals when `β = p/q` with
//! a small `q`, and 256-bit binary floats otherwise. The float backend treats
//! any value within [`FLOAT_MARGIN`] of one half as failing.

use std::collections::HashMap;
use std::fmt::Debug;
use std::sync::{Arc, Mutex};

use dashu_float::round::mode::HalfEven;
use dashu_float::FBig;
use dashu_int::UBig;
use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{clopper_pearson_lower, ConfidenceSpec};
use crate::graphio::StructureVector;
use crate::smoothing::{sample_under_noise, BaseFunction, NoiseSpec, SampleCounts};

pub type ExactNumber = BigRational;
pub type HighPrecision = FBig<HalfEven, 2>;

/// Bits of precision of the float backend.
pub const FLOAT_PRECISION: usize = 256;
/// Values within this distance above one half count as not exceeding it.
pub const FLOAT_MARGIN: f64 = 1e-30;
/// Granularity used when converting a floating `p̄` to a rational.
pub const P_LOWER_GRID: u64 = 1_000_000_000_000_000;
/// Default cap on the certified size.
pub const DEFAULT_L_MAX: usize = 1000;

/// Binomial coefficient, zero when `k > n`.
pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

fn binomial_row(n: u64) -> Vec<BigUint> {
    let mut row = Vec::with_capacity(n as usize + 1);
    let mut c = BigUint::one();
    row.push(c.clone());
    for k in 0..n {
        c = c * (n - k) / (k + 1);
        row.push(c.clone());
    }
    row
}

/// `|H(a, b)|`: vectors at Hamming distance `a` from `x` and `b` from
/// `x ⊕ δ`, where `‖δ‖₀ = l`.
pub fn region_size(a: u64, b: u64, n: u64, l: u64) -> BigUint {
    if (a + b) < l || !(a + b - l).is_multiple_of(2) || a > n || b > n || l > n {
        return BigUint::zero();
    }
    let outside = (a + b - l) / 2;
    let inside = a + l;
    if inside < b {
        return BigUint::zero();
    }
    binomial(n - l, outside) * binomial(l, (inside - b) / 2)
}

/// `θ(e, i)`, the number of vectors with `b − a = e` and `b = i`.
pub fn theta(e: i64, i: u64, n: u64, l: u64) -> BigUint {
    let (i_s, l_s) = (i as i64, l as i64);
    if (e + l_s).rem_euclid(2) != 0 || 2 * i_s - e < l_s {
        return BigUint::zero();
    }
    let outside = (2 * i_s - e - l_s) / 2;
    let flipped = l_s - e;
    if flipped < 0 || l > n {
        return BigUint::zero();
    }
    binomial(n - l, outside as u64) * binomial(l, (flipped / 2) as u64)
}

/// Arithmetic needed by the constraint check, implemented for the exact
/// and the high-precision backends.
pub trait Probability: Clone + PartialOrd + Debug + Send + Sync {
    fn zero() -> Self;
    fn is_zero(&self) -> bool;
    fn add(&self, rhs: &Self) -> Self;
    fn sub(&self, rhs: &Self) -> Self;
    fn mul(&self, rhs: &Self) -> Self;
    fn div(&self, rhs: &Self) -> Self;
    fn from_ratio(numer: &BigUint, denom: &BigUint) -> Self;
    fn to_f64(&self) -> f64;
    /// Strictly above one half (beyond the safety margin for inexact types).
    fn exceeds_half(&self) -> bool;
}

impl Probability for ExactNumber {
    fn zero() -> Self {
        Zero::zero()
    }
    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }
    fn add(&self, rhs: &Self) -> Self {
        self + rhs
    }
    fn sub(&self, rhs: &Self) -> Self {
        self - rhs
    }
    fn mul(&self, rhs: &Self) -> Self {
        self * rhs
    }
    fn div(&self, rhs: &Self) -> Self {
        self / rhs
    }
    fn from_ratio(numer: &BigUint, denom: &BigUint) -> Self {
        BigRational::new(BigInt::from(numer.clone()), BigInt::from(denom.clone()))
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
    fn exceeds_half(&self) -> bool {
        self * BigInt::from(2) > BigRational::one()
    }
}

fn to_ubig(x: &BigUint) -> UBig {
    UBig::from_le_bytes(&x.to_bytes_le())
}

fn high(x: HighPrecision) -> HighPrecision {
    x.with_precision(FLOAT_PRECISION).value()
}

fn high_from_f64(x: f64) -> HighPrecision {
    high(HighPrecision::try_from(x).expect("finite float"))
}

impl Probability for HighPrecision {
    fn zero() -> Self {
        high(HighPrecision::ZERO)
    }
    fn is_zero(&self) -> bool {
        *self == HighPrecision::ZERO
    }
    fn add(&self, rhs: &Self) -> Self {
        self + rhs
    }
    fn sub(&self, rhs: &Self) -> Self {
        self - rhs
    }
    fn mul(&self, rhs: &Self) -> Self {
        self * rhs
    }
    fn div(&self, rhs: &Self) -> Self {
        self / rhs
    }
    fn from_ratio(numer: &BigUint, denom: &BigUint) -> Self {
        high(HighPrecision::from(to_ubig(numer))) / high(HighPrecision::from(to_ubig(denom)))
    }
    fn to_f64(&self) -> f64 {
        HighPrecision::to_f64(self).value()
    }
    fn exceeds_half(&self) -> bool {
        *self > high_from_f64(0.5) + high_from_f64(FLOAT_MARGIN)
    }
}

/// Masses of one level set `H(e)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionEntry<P> {
    pub e: i64,
    pub pr_x: P,
    pub pr_y: P,
}

impl<P: Probability> RegionEntry<P> {
    pub fn is_empty(&self) -> bool {
        self.pr_x.is_zero() && self.pr_y.is_zero()
    }
}

/// Region masses for every `e ∈ {−n, …, n}`, sorted by density ratio
/// descending (equivalently, `e` descending, since `β > 1/2`).
#[derive(Clone, Debug, PartialEq)]
pub struct RegionTable<P = ExactNumber> {
    pub n: usize,
    pub l: usize,
    pub beta: NoiseSpec,
    pub entries: Vec<RegionEntry<P>>,
}

impl<P: Probability> RegionTable<P> {
    pub fn nonempty(&self) -> impl Iterator<Item = &RegionEntry<P>> {
        self.entries.iter().filter(|e| !e.is_empty())
    }

    pub fn total_x(&self) -> P {
        self.entries.iter().fold(P::zero(), |acc, e| acc.add(&e.pr_x))
    }

    pub fn total_y(&self) -> P {
        self.entries.iter().fold(P::zero(), |acc, e| acc.add(&e.pr_y))
    }
}

impl RegionTable<ExactNumber> {
    /// `h(e) = (β/(1−β))^e`; `None` without an exact `β`.
    pub fn density_ratio(&self, e: i64) -> Option<ExactNumber> {
        let (p, q) = self.beta.exact_ratio()?;
        let base = BigRational::new(BigInt::from(p), BigInt::from(q - p));
        Some(num_traits::pow::Pow::pow(&base, e as i32))
    }
}

/// Point masses `w[a] = β^{n−a}(1−β)^a` for `a = 0..=n`, the probability of
/// any single vector at Hamming distance `a` from the noise centre.
trait PointMasses: Send + Sync {
    type Value: Probability;
    type Acc;
    fn n(&self) -> usize;
    fn start(&self) -> Self::Acc;
    /// `acc += count · w[a]`
    fn accumulate(&self, acc: &mut Self::Acc, count: &BigUint, a: usize);
    /// `factor · acc` as a probability.
    fn finish(&self, acc: Self::Acc, factor: &BigUint) -> Self::Value;

    /// `Σ_k C(m, k)·w[k + offset]` with `row = C(m, ·)`.
    fn weighted_sum(&self, row: &[BigUint], offset: usize) -> Self::Acc {
        let mut acc = self.start();
        for (k, count) in row.iter().enumerate() {
            self.accumulate(&mut acc, count, k + offset);
        }
        acc
    }
}

/// Exact masses as integer numerators over the common denominator `q^n`.
struct ExactMasses {
    p: u64,
    r: u64,
    numerators: Vec<BigUint>,
    denominator: BigUint,
}

impl ExactMasses {
    fn new(n: usize, p: u64, q: u64) -> Self {
        let r = q - p;
        let mut pow_p = Vec::with_capacity(n + 1);
        let mut pow_r = Vec::with_capacity(n + 1);
        let (mut a, mut b) = (BigUint::one(), BigUint::one());
        for _ in 0..=n {
            pow_p.push(a.clone());
            pow_r.push(b.clone());
            a *= p;
            b *= r;
        }
        let numerators = (0..=n).map(|k| &pow_p[n - k] * &pow_r[k]).collect();
        ExactMasses {
            p,
            r,
            numerators,
            denominator: num_traits::pow(BigUint::from(q), n),
        }
    }
}

impl PointMasses for ExactMasses {
    type Value = ExactNumber;
    type Acc = BigUint;
    fn n(&self) -> usize {
        self.numerators.len() - 1
    }
    fn start(&self) -> BigUint {
        BigUint::zero()
    }
    fn accumulate(&self, acc: &mut BigUint, count: &BigUint, a: usize) {
        *acc += count * &self.numerators[a];
    }
    /// Each term follows from the previous one by
    /// `C(m, k+1)·w[k+1+o] = C(m, k)·w[k+o]·(m−k)·r / ((k+1)·p)`,
    /// which keeps every step a small-integer product and exact quotient.
    fn weighted_sum(&self, row: &[BigUint], offset: usize) -> BigUint {
        let m = row.len() - 1;
        let mut term = self.numerators[offset].clone();
        let mut acc = term.clone();
        for k in 0..m {
            term *= (m - k) as u64 * self.r;
            term /= (k as u64 + 1) * self.p;
            acc += &term;
        }
        acc
    }
    fn finish(&self, acc: BigUint, factor: &BigUint) -> ExactNumber {
        if acc.is_zero() {
            return Zero::zero();
        }
        BigRational::new(BigInt::from(acc * factor), BigInt::from(self.denominator.clone()))
    }
}

struct FloatMasses {
    masses: Vec<HighPrecision>,
}

impl FloatMasses {
    fn new(n: usize, beta: NoiseSpec) -> Self {
        let keep = match beta.exact_ratio() {
            Some((p, q)) => HighPrecision::from_ratio(&BigUint::from(p), &BigUint::from(q)),
            None => high_from_f64(beta.beta()),
        };
        let flip = high(HighPrecision::ONE) - &keep;
        let mut pow_keep = Vec::with_capacity(n + 1);
        let mut pow_flip = Vec::with_capacity(n + 1);
        let (mut a, mut b) = (high(HighPrecision::ONE), high(HighPrecision::ONE));
        for _ in 0..=n {
            pow_keep.push(a.clone());
            pow_flip.push(b.clone());
            a = &a * &keep;
            b = &b * &flip;
        }
        FloatMasses {
            masses: (0..=n).map(|k| &pow_keep[n - k] * &pow_flip[k]).collect(),
        }
    }
}

impl PointMasses for FloatMasses {
    type Value = HighPrecision;
    type Acc = HighPrecision;
    fn n(&self) -> usize {
        self.masses.len() - 1
    }
    fn start(&self) -> HighPrecision {
        <HighPrecision as Probability>::zero()
    }
    fn accumulate(&self, acc: &mut HighPrecision, count: &BigUint, a: usize) {
        let term = high(HighPrecision::from(to_ubig(count))) * &self.masses[a];
        *acc = &*acc + term;
    }
    fn finish(&self, acc: HighPrecision, factor: &BigUint) -> HighPrecision {
        acc * high(HighPrecision::from(to_ubig(factor)))
    }
}

/// Sums `θ(e, i)·w[i−e]` and `θ(e, i)·w[i]` over `i`. Writing
/// `j = (l−e)/2` and `k = i − (l+e)/2` (pairs flipped outside `δ`),
/// `θ(e, i) = C(l, j)·C(n−l, k)`, `i − e = k + j` and `i = k + l − j`; the
/// factor `C(l, j)` is constant in `i` and applied once per region.
fn build_table<M: PointMasses>(masses: &M, l: usize, beta: NoiseSpec) -> RegionTable<M::Value> {
    let n = masses.n();
    let (n_s, l_s) = (n as i64, l as i64);
    let outside_row = binomial_row((n - l) as u64);
    let inside_row = binomial_row(l as u64);
    let mut entries = Vec::with_capacity(2 * n + 1);
    for e in (-n_s..=n_s).rev() {
        // θ(e, ·) vanishes on wrong parity and when (l−e)/2 ∉ [0, l].
        if (e + l_s).rem_euclid(2) != 0 || e.abs() > l_s {
            entries.push(RegionEntry {
                e,
                pr_x: M::Value::zero(),
                pr_y: M::Value::zero(),
            });
            continue;
        }
        let j = ((l_s - e) / 2) as usize;
        let inside = &inside_row[j];
        entries.push(RegionEntry {
            e,
            pr_x: masses.finish(masses.weighted_sum(&outside_row, j), inside),
            pr_y: masses.finish(masses.weighted_sum(&outside_row, l - j), inside),
        });
    }
    RegionTable { n, l, beta, entries }
}

/// Exact region masses as integer numerators over the common denominator
/// `q^n`; only nonempty regions are kept, in decreasing ratio order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScaledRegionTable {
    pub l: usize,
    pub denominator: BigUint,
    /// `(e, q^n·Pr(X ∈ H(e)), q^n·Pr(Y ∈ H(e)))`
    pub entries: Vec<(i64, BigUint, BigUint)>,
}

impl ScaledRegionTable {
    pub fn to_rational(&self, n: usize, beta: NoiseSpec) -> RegionTable<ExactNumber> {
        let mut entries: Vec<RegionEntry<ExactNumber>> = (-(n as i64)..=n as i64)
            .rev()
            .map(|e| RegionEntry {
                e,
                pr_x: Zero::zero(),
                pr_y: Zero::zero(),
            })
            .collect();
        for (e, x, y) in &self.entries {
            let slot = &mut entries[(n as i64 - e) as usize];
            slot.pr_x = Probability::from_ratio(x, &self.denominator);
            slot.pr_y = Probability::from_ratio(y, &self.denominator);
        }
        RegionTable {
            n,
            l: self.l,
            beta,
            entries,
        }
    }
}

/// Same sums as [`build_table`], factored: with `m = n − l`,
/// `Σ_k C(m, k)·w[k + o] = p^{l−o}·r^o · Σ_k C(m, k)·p^{m−k}·r^k`, so the
/// inner sum is evaluated once per `l` instead of once per region.
fn build_scaled(masses: &ExactMasses, l: usize) -> ScaledRegionTable {
    let n = masses.n();
    let m = n - l;
    let (p, r) = (masses.p, masses.r);
    let mut term = num_traits::pow(BigUint::from(p), m);
    let mut outside_sum = term.clone();
    for k in 0..m {
        term *= (m - k) as u64 * r;
        term /= (k as u64 + 1) * p;
        outside_sum += &term;
    }
    let pow_p: Vec<BigUint> = (0..=l).map(|a| num_traits::pow(BigUint::from(p), a)).collect();
    let pow_r: Vec<BigUint> = (0..=l).map(|a| num_traits::pow(BigUint::from(r), a)).collect();
    let inside_row = binomial_row(l as u64);
    // Only e = l − 2j for j = 0..=l is nonempty.
    let entries = (0..=l)
        .map(|j| {
            let scale = &inside_row[j] * &outside_sum;
            (
                l as i64 - 2 * j as i64,
                &scale * &pow_p[l - j] * &pow_r[j],
                &scale * &pow_p[j] * &pow_r[l - j],
            )
        })
        .collect();
    ScaledRegionTable {
        l,
        denominator: masses.denominator.clone(),
        entries,
    }
}

/// Exact region table in scaled integer form.
pub fn region_table_scaled(n: usize, l: usize, beta: NoiseSpec) -> Result<ScaledRegionTable> {
    check_sizes(n, l)?;
    let (p, q) = beta.exact_ratio().ok_or_else(|| {
        Error::config(format!(
            "beta {beta} has no small-denominator form; use the float backend"
        ))
    })?;
    Ok(build_scaled(&ExactMasses::new(n, p, q), l))
}

/// [`constraint_holds`] on a scaled table, in integer arithmetic. With
/// `p̄ = a/b`, `D = q^n`, prefix sums `C_X`, `C_Y` and boundary region
/// `(X_μ, Y_μ)`, the constraint reads
/// `2b·C_Y·X_μ + 2(aD − b·C_X)·Y_μ > b·D·X_μ`.
pub fn constraint_holds_scaled(p_lower: &ExactNumber, table: &ScaledRegionTable) -> Result<bool> {
    if !p_lower.exceeds_half() {
        return Err(Error::Numeric(format!("p̄ = {p_lower} must exceed 1/2")));
    }
    let a = p_lower.numer().to_biguint().expect("positive");
    let b = p_lower.denom().to_biguint().expect("positive");
    let d = &table.denominator;
    let target = &a * d;
    let mut cum_x = BigUint::zero();
    let mut cum_y = BigUint::zero();
    for (_, x, y) in table.entries.iter().filter(|(_, x, y)| !(x.is_zero() && y.is_zero())) {
        let next = &cum_x + x;
        if &b * &next >= target {
            let two = BigUint::from(2u32);
            let lhs = &two * &b * &cum_y * x + &two * (&target - &b * &cum_x) * y;
            return Ok(lhs > &b * d * x);
        }
        cum_x = next;
        cum_y += y;
    }
    Err(Error::Numeric(format!("p̄ = {p_lower} exceeds the total probability")))
}

fn check_sizes(n: usize, l: usize) -> Result<()> {
    if l == 0 {
        return Err(Error::config(
            "region tables need l ≥ 1; l = 0 reduces to the p̄ > 1/2 check",
        ));
    }
    if l > n {
        return Err(Error::config(format!("perturbation size {l} exceeds space size {n}")));
    }
    Ok(())
}

/// Exact region table; requires a small-denominator `β`.
pub fn region_table(n: usize, l: usize, beta: NoiseSpec) -> Result<RegionTable<ExactNumber>> {
    check_sizes(n, l)?;
    let (p, q) = beta.exact_ratio().ok_or_else(|| {
        Error::config(format!(
            "beta {beta} has no small-denominator form; use the float backend"
        ))
    })?;
    Ok(build_table(&ExactMasses::new(n, p, q), l, beta))
}

/// Region table in 256-bit float arithmetic.
pub fn region_table_float(n: usize, l: usize, beta: NoiseSpec) -> Result<RegionTable<HighPrecision>> {
    check_sizes(n, l)?;
    Ok(build_table(&FloatMasses::new(n, beta), l, beta))
}

/// Left side of the certification constraint: the smallest mass that any
/// base function with `Pr(f(X) = y) ≥ p̄` keeps on the perturbed input.
pub fn constraint_lhs<P: Probability>(p_lower: &P, table: &RegionTable<P>) -> Result<P> {
    let mut cum_x = P::zero();
    let mut cum_y = P::zero();
    for entry in table.nonempty() {
        let next = cum_x.add(&entry.pr_x);
        if next >= *p_lower {
            let partial = p_lower.sub(&cum_x).mul(&entry.pr_y).div(&entry.pr_x);
            return Ok(cum_y.add(&partial));
        }
        cum_x = next;
        cum_y = cum_y.add(&entry.pr_y);
    }
    Err(Error::Numeric(format!(
        "p̄ = {} exceeds the total probability {}",
        p_lower.to_f64(),
        cum_x.to_f64()
    )))
}

/// Whether the constraint holds at the table's perturbation size.
pub fn constraint_holds<P: Probability>(p_lower: &P, table: &RegionTable<P>) -> Result<bool> {
    if !p_lower.exceeds_half() {
        return Err(Error::Numeric(format!("p̄ = {} must exceed 1/2", p_lower.to_f64())));
    }
    Ok(constraint_lhs(p_lower, table)?.exceeds_half())
}

/// Rounds `p` down to a multiple of `1/P_LOWER_GRID`, exactly.
pub fn floor_to_grid(p: f64) -> Result<ExactNumber> {
    let exact = BigRational::from_float(p).ok_or_else(|| Error::Numeric(format!("p̄ = {p} is not finite")))?;
    let grid = BigInt::from(P_LOWER_GRID);
    let scaled = (exact * BigRational::from_integer(grid.clone())).floor();
    Ok(scaled / BigRational::from_integer(grid))
}

enum Backend {
    Exact(ExactMasses),
    Float(FloatMasses),
}

/// Computes certified sizes for a fixed `(n, β, l_max)`, caching region
/// tables across calls. Safe to share between threads.
pub struct RadiusSolver {
    n: usize,
    beta: NoiseSpec,
    l_max: usize,
    backend: Backend,
    exact_tables: Mutex<Vec<Option<Arc<ScaledRegionTable>>>>,
    float_tables: Mutex<Vec<Option<Arc<RegionTable<HighPrecision>>>>>,
    /// Radii already computed, keyed by the bits of the floating `p̄`.
    memo: Mutex<HashMap<u64, usize>>,
}

impl RadiusSolver {
    pub fn new(n: usize, beta: NoiseSpec, l_max: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("the perturbation space is empty"));
        }
        if l_max > n {
            return Err(Error::config(format!("l_max = {l_max} exceeds the space size {n}")));
        }
        let backend = match beta.exact_ratio() {
            Some((p, q)) => Backend::Exact(ExactMasses::new(n, p, q)),
            None => Backend::Float(FloatMasses::new(n, beta)),
        };
        Ok(RadiusSolver {
            n,
            beta,
            l_max,
            backend,
            exact_tables: Mutex::new(vec![None; l_max + 1]),
            float_tables: Mutex::new(vec![None; l_max + 1]),
            memo: Mutex::new(HashMap::new()),
        })
    }

    /// Default cap `min(n, 1000)`.
    pub fn with_default_cap(n: usize, beta: NoiseSpec) -> Result<Self> {
        Self::new(n, beta, n.min(DEFAULT_L_MAX))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn beta(&self) -> NoiseSpec {
        self.beta
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.backend, Backend::Exact(_))
    }

    fn exact_table(&self, masses: &ExactMasses, l: usize) -> Arc<ScaledRegionTable> {
        let mut cache = self.exact_tables.lock().expect("table cache poisoned");
        cache[l]
            .get_or_insert_with(|| Arc::new(build_scaled(masses, l)))
            .clone()
    }

    fn float_table(&self, masses: &FloatMasses, l: usize) -> Arc<RegionTable<HighPrecision>> {
        let mut cache = self.float_tables.lock().expect("table cache poisoned");
        cache[l]
            .get_or_insert_with(|| Arc::new(build_table(masses, l, self.beta)))
            .clone()
    }

    /// Largest `L ≤ l_max` such that the constraint holds for every
    /// `l ∈ 1..=L`, for an exact `p̄`.
    pub fn radius_exact(&self, p_lower: &ExactNumber) -> Result<usize> {
        if !p_lower.exceeds_half() {
            return Err(Error::Numeric("p̄ must exceed 1/2 to certify".into()));
        }
        if *p_lower > BigRational::one() {
            return Err(Error::Numeric("p̄ exceeds 1".into()));
        }
        let mut radius = 0;
        for l in 1..=self.l_max {
            let holds = match &self.backend {
                Backend::Exact(m) => constraint_holds_scaled(p_lower, &self.exact_table(m, l))?,
                Backend::Float(m) => {
                    let p = HighPrecision::from_ratio(
                        &p_lower.numer().to_biguint().expect("positive"),
                        &p_lower.denom().to_biguint().expect("positive"),
                    );
                    constraint_lhs(&p, &self.float_table(m, l))?.exceeds_half()
                }
            };
            if !holds {
                break;
            }
            radius = l;
        }
        Ok(radius)
    }

    /// Certified size for a floating `p̄`, rounded down to the
    /// `1/P_LOWER_GRID` grid first. `p̄` at or below 1/2 after rounding
    /// certifies nothing.
    pub fn radius(&self, p_lower: f64) -> Result<usize> {
        if p_lower.is_nan() || p_lower <= 0.5 {
            return Err(Error::Numeric(format!("p̄ = {p_lower} must exceed 1/2 to certify")));
        }
        if let Some(&r) = self.memo.lock().expect("radius memo poisoned").get(&p_lower.to_bits()) {
            return Ok(r);
        }
        let p = floor_to_grid(p_lower)?;
        let r = if p.exceeds_half() { self.radius_exact(&p)? } else { 0 };
        self.memo
            .lock()
            .expect("radius memo poisoned")
            .insert(p_lower.to_bits(), r);
        Ok(r)
    }
}

/// One-shot form of [`RadiusSolver::radius`].
pub fn certified_perturbation_size(p_lower: f64, n: usize, beta: NoiseSpec, l_max: usize) -> Result<usize> {
    RadiusSolver::new(n, beta, l_max)?.radius(p_lower)
}

/// Parameters of a certification run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertifyParams {
    pub beta: NoiseSpec,
    pub alpha: ConfidenceSpec,
    pub samples: u64,
    pub seed: u64,
    pub l_max: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    Abstain,
    Certified { y_hat: bool, p_lower: f64, radius: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertifyResult {
    pub outcome: Outcome,
    /// Clopper-Pearson bound for the majority output, also kept on abstain.
    pub p_lower: f64,
    pub counts: SampleCounts,
    pub params: CertifyParams,
}

impl CertifyResult {
    pub fn is_abstain(&self) -> bool {
        matches!(self.outcome, Outcome::Abstain)
    }

    pub fn y_hat(&self) -> Option<bool> {
        match self.outcome {
            Outcome::Certified { y_hat, .. } => Some(y_hat),
            Outcome::Abstain => None,
        }
    }

    pub fn radius(&self) -> Option<usize> {
        match self.outcome {
            Outcome::Certified { radius, .. } => Some(radius),
            Outcome::Abstain => None,
        }
    }

    /// JSON-lines record `{victims, y_hat, p_lower, L, abstain, beta, N, alpha, seed}`.
    pub fn to_record(&self, victims: &[u64]) -> serde_json::Value {
        serde_json::json!({
            "victims": victims,
            "y_hat": self.y_hat().map(u8::from),
            "p_lower": self.p_lower,
            "L": self.radius(),
            "abstain": self.is_abstain(),
            "beta": self.params.beta.beta(),
            "N": self.params.samples,
            "alpha": self.params.alpha.alpha(),
            "seed": self.params.seed,
        })
    }
}

/// Decision step of the certification algorithm for given counts.
pub fn certify_counts(counts: SampleCounts, params: CertifyParams, solver: &RadiusSolver) -> Result<CertifyResult> {
    let y_hat = counts.m1 > counts.m0;
    let p_lower = clopper_pearson_lower(counts.count(y_hat), counts.total, params.alpha)?;
    let outcome = if counts.m1 != counts.m0 && p_lower > 0.5 {
        Outcome::Certified {
            y_hat,
            p_lower,
            radius: solver.radius(p_lower)?,
        }
    } else {
        Outcome::Abstain
    };
    Ok(CertifyResult {
        outcome,
        p_lower,
        counts,
        params,
    })
}

/// Samples `f` under noise, bounds the majority probability, and returns
/// the certified size or abstains.
pub fn certify<F: BaseFunction + ?Sized>(f: &F, x: &StructureVector, params: CertifyParams) -> Result<CertifyResult> {
    let solver = RadiusSolver::new(x.len(), params.beta, params.l_max.min(x.len()))?;
    certify_with(f, x, params, &solver)
}

/// [`certify`] with a caller-owned solver (tables are reused).
pub fn certify_with<F: BaseFunction + ?Sized>(
    f: &F,
    x: &StructureVector,
    params: CertifyParams,
    solver: &RadiusSolver,
) -> Result<CertifyResult> {
    let counts = sample_under_noise(f, params.beta, x, params.samples, params.seed)?;
    certify_counts(counts, params, solver)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64, d: i64) -> ExactNumber {
        BigRational::new(n.into(), d.into())
    }

    fn beta07() -> NoiseSpec {
        NoiseSpec::from_ratio(7, 10).unwrap()
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(5, 2), BigUint::from(10u32));
        assert_eq!(binomial(5, 6), BigUint::zero());
        assert_eq!(binomial_row(4), [1u32, 4, 6, 4, 1].map(BigUint::from).to_vec());
    }

    #[test]
    fn region_size_without_perturbation() {
        for n in 1..8u64 {
            for a in 0..=n {
                for b in 0..=n {
                    let expected = if a == b { binomial(n, a) } else { BigUint::zero() };
                    assert_eq!(region_size(a, b, n, 0), expected);
                }
            }
        }
    }

    #[test]
    fn region_size_small_cases() {
        assert_eq!(region_size(0, 1, 2, 1), BigUint::one());
        assert_eq!(theta(1, 1, 1, 1), BigUint::one());
        assert_eq!(theta(0, 1, 4, 1), BigUint::zero());
    }

    #[test]
    fn region_size_is_symmetric() {
        for n in 1..7u64 {
            for l in 0..=n {
                for a in 0..=n {
                    for b in 0..=n {
                        assert_eq!(region_size(a, b, n, l), region_size(b, a, n, l));
                    }
                }
            }
        }
    }

    #[test]
    fn one_bit_table() {
        let t = region_table(1, 1, beta07()).unwrap();
        let get = |e: i64| t.entries.iter().find(|r| r.e == e).unwrap().clone();
        assert_eq!(get(1).pr_x, q(7, 10));
        assert_eq!(get(1).pr_y, q(3, 10));
        assert_eq!(get(-1).pr_x, q(3, 10));
        assert_eq!(get(-1).pr_y, q(7, 10));
        assert!(get(0).is_empty());
        assert_eq!(t.entries.iter().map(|r| r.e).collect::<Vec<_>>(), vec![1, 0, -1]);
    }

    #[test]
    fn one_bit_constraint() {
        let t = region_table(1, 1, beta07()).unwrap();
        assert_eq!(constraint_lhs(&q(8, 10), &t).unwrap(), q(8, 15));
        assert!(constraint_holds(&q(8, 10), &t).unwrap());
        assert_eq!(constraint_lhs(&q(71, 100), &t).unwrap(), q(97, 300));
        assert!(!constraint_holds(&q(71, 100), &t).unwrap());
        assert!(constraint_holds(&q(1, 1), &t).unwrap());
        assert!(constraint_lhs(&q(11, 10), &t).is_err());
    }

    #[test]
    fn one_bit_radius() {
        let beta = beta07();
        assert_eq!(certified_perturbation_size(0.8, 1, beta, 1).unwrap(), 1);
        assert_eq!(certified_perturbation_size(0.71, 1, beta, 1).unwrap(), 0);
        assert!(certified_perturbation_size(0.5, 1, beta, 1).is_err());
        let solver = RadiusSolver::new(6, beta, 6).unwrap();
        assert_eq!(solver.radius_exact(&q(1, 1)).unwrap(), 6);
    }

    #[test]
    fn tables_are_exact_distributions() {
        for beta in [NoiseSpec::from_ratio(3, 5).unwrap(), beta07()] {
            for n in [5usize, 40] {
                for l in [1, 2, n / 2, n] {
                    let t = region_table(n, l, beta).unwrap();
                    assert!(t.total_x().is_one() && t.total_y().is_one());
                    for entry in t.nonempty() {
                        let h = t.density_ratio(entry.e).unwrap();
                        assert_eq!(entry.pr_x, &h * &entry.pr_y);
                    }
                }
            }
        }
    }

    #[test]
    fn float_backend_agrees_with_exact() {
        let beta = beta07();
        for n in [3usize, 30] {
            for l in 1..=3 {
                let exact = region_table(n, l, beta).unwrap();
                let float = region_table_float(n, l, beta).unwrap();
                for (a, b) in exact.entries.iter().zip(&float.entries) {
                    assert_eq!(a.e, b.e);
                    assert!((Probability::to_f64(&a.pr_x) - Probability::to_f64(&b.pr_x)).abs() < 1e-15);
                }
                for p in [0.55, 0.7, 0.9, 0.999] {
                    let pe = floor_to_grid(p).unwrap();
                    let pf =
                        HighPrecision::from_ratio(&pe.numer().to_biguint().unwrap(), &pe.denom().to_biguint().unwrap());
                    assert_eq!(
                        constraint_holds(&pe, &exact).unwrap(),
                        constraint_holds(&pf, &float).unwrap()
                    );
                }
            }
        }
    }

    #[test]
    fn scaled_form_matches_rational_form() {
        for beta in [
            NoiseSpec::from_ratio(3, 5).unwrap(),
            beta07(),
            NoiseSpec::from_ratio(4, 5).unwrap(),
        ] {
            for n in [1usize, 7, 25] {
                for l in 1..=n.min(6) {
                    let rational = region_table(n, l, beta).unwrap();
                    let scaled = region_table_scaled(n, l, beta).unwrap();
                    assert_eq!(scaled.to_rational(n, beta), rational);
                    for k in 51..=100 {
                        let p = q(k, 100);
                        assert_eq!(
                            constraint_holds(&p, &rational).unwrap(),
                            constraint_holds_scaled(&p, &scaled).unwrap(),
                            "n={n} l={l} p={p}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn floor_to_grid_rounds_down() {
        let p = floor_to_grid(0.9).unwrap();
        assert!(p <= BigRational::from_float(0.9).unwrap());
        assert_eq!(p, q(9, 10));
        let tiny = floor_to_grid(0.5 + 1e-17).unwrap();
        assert_eq!(tiny, q(1, 2));
    }

    #[test]
    fn abstains_on_ties() {
        let params = CertifyParams {
            beta: beta07(),
            alpha: ConfidenceSpec::new(0.001).unwrap(),
            samples: 10_000,
            seed: 0,
            l_max: 5,
        };
        let solver = RadiusSolver::new(10, params.beta, 5).unwrap();
        let counts = SampleCounts::new(5000, 5000, 0).unwrap();
        assert!(certify_counts(counts, params, &solver).unwrap().is_abstain());
        let counts = SampleCounts::new(10, 9990, 0).unwrap();
        let r = certify_counts(counts, params, &solver).unwrap();
        assert_eq!(r.y_hat(), Some(true));
        assert!(r.p_lower > 0.99);
    }
}
