//! Brute-force ground truth for small spaces.
//!
//! Everything here enumerates `{0,1}^n` directly (`n ≤ 20`) and uses exact
//! rationals, so it shares no formulas with [`crate::certify`]: region
//! membership is decided by comparing the two point probabilities of each
//! vector, not by counting arguments.

use std::collections::HashMap;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::certify::{ExactNumber, RadiusSolver, RegionEntry, RegionTable};
use crate::error::{Error, Result};
use crate::graphio::StructureVector;
use crate::smoothing::{BaseFunction, NoiseSpec, TruthTable};

/// Largest space the oracle will enumerate.
pub const MAX_ORACLE_BITS: usize = 20;

fn check_bits(n: usize) -> Result<()> {
    if n > MAX_ORACLE_BITS {
        return Err(Error::TooLarge {
            n,
            cap: MAX_ORACLE_BITS,
        });
    }
    Ok(())
}

fn exact_beta(beta: NoiseSpec) -> Result<(u64, u64)> {
    beta.exact_ratio()
        .ok_or_else(|| Error::config(format!("the oracle needs a rational beta, got {beta}")))
}

fn mask_of(v: &StructureVector) -> Result<u64> {
    check_bits(v.len())?;
    Ok(v.to_mask().expect("within 64 bits"))
}

fn ratio(numer: &BigUint, denom: &BigUint) -> BigRational {
    BigRational::new(BigInt::from(numer.clone()), BigInt::from(denom.clone()))
}

/// Distribution of `c ⊕ ε` over `{0,1}^n`. The probability of `z` is
/// `weights[‖z ⊕ c‖₀] / denominator`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactDistribution {
    n: usize,
    center: u64,
    weights: Vec<BigUint>,
    denominator: BigUint,
}

impl ExactDistribution {
    pub fn around(center: &StructureVector, beta: NoiseSpec) -> Result<Self> {
        let center_mask = mask_of(center)?;
        let n = center.len();
        let (p, q) = exact_beta(beta)?;
        let weights = (0..=n)
            .map(|d| num_traits::pow(BigUint::from(p), n - d) * num_traits::pow(BigUint::from(q - p), d))
            .collect();
        Ok(ExactDistribution {
            n,
            center: center_mask,
            weights,
            denominator: num_traits::pow(BigUint::from(q), n),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn center(&self) -> u64 {
        self.center
    }

    pub fn denominator(&self) -> &BigUint {
        &self.denominator
    }

    /// Probability numerator of `z` over [`ExactDistribution::denominator`].
    pub fn numerator(&self, z: u64) -> &BigUint {
        &self.weights[(z ^ self.center).count_ones() as usize]
    }

    pub fn probability(&self, z: u64) -> ExactNumber {
        ratio(self.numerator(z), &self.denominator)
    }

    /// Numerator of the mass of `{z : member(z)}`.
    pub fn mass_numerator(&self, member: impl Fn(u64) -> bool) -> BigUint {
        let mut by_distance = vec![0u64; self.n + 1];
        for z in 0..1u64 << self.n {
            if member(z) {
                by_distance[(z ^ self.center).count_ones() as usize] += 1;
            }
        }
        by_distance.iter().zip(&self.weights).map(|(&c, w)| w * c).sum()
    }

    pub fn mass(&self, member: impl Fn(u64) -> bool) -> ExactNumber {
        ratio(&self.mass_numerator(member), &self.denominator)
    }

    /// Full per-vector map (for inspection; `2^n` entries).
    pub fn probabilities(&self) -> Vec<ExactNumber> {
        (0..1u64 << self.n).map(|z| self.probability(z)).collect()
    }
}

/// Exact `(Pr(f(x⊕ε) = 0), Pr(f(x⊕ε) = 1))`.
pub fn exact_output_prob<F: BaseFunction + ?Sized>(
    f: &F,
    x: &StructureVector,
    beta: NoiseSpec,
) -> Result<(ExactNumber, ExactNumber)> {
    if f.len() != x.len() {
        return Err(Error::Dimension {
            expected: f.len(),
            actual: x.len(),
        });
    }
    let outputs = tabulate(f)?;
    table_output_prob(&outputs, &ExactDistribution::around(x, beta)?)
}

/// Outputs of `f` on every vector of `{0,1}^n`, indexed by mask.
pub fn tabulate<F: BaseFunction + ?Sized>(f: &F) -> Result<Vec<bool>> {
    let n = f.len();
    check_bits(n)?;
    (0..1u64 << n)
        .map(|z| f.evaluate(&StructureVector::from_mask(z, n)))
        .collect()
}

fn table_output_prob(outputs: &[bool], dist: &ExactDistribution) -> Result<(ExactNumber, ExactNumber)> {
    if outputs.len() != 1 << dist.n {
        return Err(Error::Dimension {
            expected: 1 << dist.n,
            actual: outputs.len(),
        });
    }
    let p1 = dist.mass(|z| outputs[z as usize]);
    let p0 = dist.mass(|z| !outputs[z as usize]);
    debug_assert!((&p0 + &p1).is_one());
    Ok((p0, p1))
}

/// Ratio `(β/(1−β))^e` for every `e ∈ {−n, …, n}`, keyed by value.
fn ratio_levels(n: usize, beta: NoiseSpec) -> Result<HashMap<BigRational, i64>> {
    let (p, q) = exact_beta(beta)?;
    let base = BigRational::new(BigInt::from(p), BigInt::from(q - p));
    let mut levels = HashMap::new();
    let mut up = BigRational::one();
    let mut down = BigRational::one();
    levels.insert(up.clone(), 0);
    for e in 1..=n as i64 {
        up = &up * &base;
        down = &down / &base;
        levels.insert(up.clone(), e);
        levels.insert(down.clone(), -e);
    }
    Ok(levels)
}

/// Level `e` of every vector, found from the exact ratio of its two point
/// probabilities.
fn classify(x_dist: &ExactDistribution, y_dist: &ExactDistribution, beta: NoiseSpec) -> Result<Vec<i64>> {
    let levels = ratio_levels(x_dist.n, beta)?;
    let mut memo: HashMap<(usize, usize), i64> = HashMap::new();
    (0..1u64 << x_dist.n)
        .map(|z| {
            let key = (
                (z ^ x_dist.center).count_ones() as usize,
                (z ^ y_dist.center).count_ones() as usize,
            );
            if let Some(&e) = memo.get(&key) {
                return Ok(e);
            }
            let r = ratio(x_dist.numerator(z), y_dist.numerator(z));
            let e = *levels
                .get(&r)
                .ok_or_else(|| Error::Numeric(format!("density ratio {r} is not a power of β/(1−β)")))?;
            memo.insert(key, e);
            Ok(e)
        })
        .collect()
}

/// Region table by enumeration of all `2^n` noise outcomes.
pub fn exact_region_probs(
    x: &StructureVector,
    delta: &StructureVector,
    beta: NoiseSpec,
) -> Result<RegionTable<ExactNumber>> {
    let shifted = x.xor(delta)?;
    let x_dist = ExactDistribution::around(x, beta)?;
    let y_dist = ExactDistribution::around(&shifted, beta)?;
    let n = x.len();
    let level = classify(&x_dist, &y_dist, beta)?;
    let entries = (-(n as i64)..=n as i64)
        .rev()
        .map(|e| RegionEntry {
            e,
            pr_x: x_dist.mass(|z| level[z as usize] == e),
            pr_y: y_dist.mass(|z| level[z as usize] == e),
        })
        .collect();
    Ok(RegionTable {
        n,
        l: delta.count_ones(),
        beta,
        entries,
    })
}

/// Base function `f*(z) = y` iff `z ∈ Q`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorstCaseFunction {
    n: usize,
    region: Vec<bool>,
    y: bool,
}

impl WorstCaseFunction {
    pub fn target(&self) -> bool {
        self.y
    }

    pub fn contains(&self, z: u64) -> bool {
        self.region[z as usize]
    }

    pub fn region_size(&self) -> usize {
        self.region.iter().filter(|&&b| b).count()
    }

    pub fn to_truth_table(&self) -> TruthTable {
        TruthTable::from_fn(self.n, |z| self.region[z as usize] == self.y).expect("n within the oracle cap")
    }
}

impl BaseFunction for WorstCaseFunction {
    fn len(&self) -> usize {
        self.n
    }

    fn evaluate(&self, z: &StructureVector) -> Result<bool> {
        let mask = mask_of(z)?;
        if z.len() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                actual: z.len(),
            });
        }
        Ok(self.region[mask as usize] == self.y)
    }
}

/// Key ordering bit vectors lexicographically, entry 0 first.
fn lexicographic_key(z: u64, n: usize) -> u64 {
    z.reverse_bits() >> (64 - n.max(1))
}

/// Vectors sorted by level descending, lexicographically within a level.
fn ordered_vectors(level: &[i64], n: usize) -> Vec<u64> {
    let mut order: Vec<u64> = (0..1u64 << n).collect();
    order.sort_by_key(|&z| (std::cmp::Reverse(level[z as usize]), lexicographic_key(z, n)));
    order
}

/// Builds `Q` with exact mass `p̄` under `x ⊕ ε`: whole regions in
/// decreasing ratio order, then the lexicographically first vectors of the
/// boundary region that keep the mass at most `p̄`.
pub fn worst_case_f(
    x: &StructureVector,
    delta: &StructureVector,
    p_bar: &ExactNumber,
    beta: NoiseSpec,
    y: bool,
) -> Result<WorstCaseFunction> {
    let half = BigRational::new(1.into(), 2.into());
    if !(*p_bar > half && *p_bar <= BigRational::one()) {
        return Err(Error::Numeric(format!("p̄ = {p_bar} must lie in (1/2, 1]")));
    }
    let shifted = x.xor(delta)?;
    let x_dist = ExactDistribution::around(x, beta)?;
    let y_dist = ExactDistribution::around(&shifted, beta)?;
    let n = x.len();
    let level = classify(&x_dist, &y_dist, beta)?;
    // Work with integer numerators over the common denominator.
    let target = p_bar * BigRational::from_integer(BigInt::from(x_dist.denominator.clone()));
    if !target.is_integer() {
        return Err(unachievable(p_bar, &x_dist, None, None));
    }
    let target = target.to_integer().to_biguint().expect("positive");
    let mut region = vec![false; 1 << n];
    let mut taken = BigUint::zero();
    let mut smallest_skipped: Option<BigUint> = None;
    // Level of the first vector that did not fit; nothing below it is used.
    let mut boundary: Option<i64> = None;
    for z in ordered_vectors(&level, n) {
        if taken == target || boundary.is_some_and(|b| level[z as usize] < b) {
            break;
        }
        let m = x_dist.numerator(z);
        if &taken + m <= target {
            taken += m;
            region[z as usize] = true;
        } else {
            boundary = Some(level[z as usize]);
            if smallest_skipped.as_ref().is_none_or(|s| m < s) {
                smallest_skipped = Some(m.clone());
            }
        }
    }
    if taken != target {
        let above = smallest_skipped.map(|s| &taken + s);
        return Err(unachievable(p_bar, &x_dist, Some(taken), above));
    }
    Ok(WorstCaseFunction { n, region, y })
}

fn unachievable(
    p_bar: &ExactNumber,
    dist: &ExactDistribution,
    below: Option<BigUint>,
    above: Option<BigUint>,
) -> Error {
    let show = |v: Option<BigUint>| v.map_or("unknown".to_string(), |v| ratio(&v, &dist.denominator).to_string());
    Error::Unachievable {
        requested: p_bar.to_string(),
        below: show(below),
        above: show(above),
    }
}

/// Mass of `Q` under `x ⊕ ε`, then the masses of the first `k` vectors of
/// each level in order; used to pick achievable `p̄` values.
pub fn achievable_masses(x: &StructureVector, delta: &StructureVector, beta: NoiseSpec) -> Result<Vec<ExactNumber>> {
    let shifted = x.xor(delta)?;
    let x_dist = ExactDistribution::around(x, beta)?;
    let y_dist = ExactDistribution::around(&shifted, beta)?;
    let level = classify(&x_dist, &y_dist, beta)?;
    let mut acc = BigUint::zero();
    let mut out = Vec::with_capacity(1 << x.len());
    for z in ordered_vectors(&level, x.len()) {
        acc += x_dist.numerator(z);
        out.push(ratio(&acc, &x_dist.denominator));
    }
    Ok(out)
}

fn vectors_of_weight(n: usize, weight: usize) -> impl Iterator<Item = StructureVector> {
    (0..1u64 << n)
        .filter(move |z| z.count_ones() as usize == weight)
        .map(move |z| StructureVector::from_mask(z, n))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TightnessViolation {
    pub delta: StructureVector,
    pub perturbed_mass: ExactNumber,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TightnessReport {
    pub radius: usize,
    pub checked: usize,
    /// Perturbations for which `p̄` is not an achievable mass of `Q`.
    pub skipped: usize,
    /// True when `L = n`, so no larger perturbation exists.
    pub vacuous: bool,
    pub violations: Vec<TightnessViolation>,
}

impl TightnessReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Computes `L` for `p̄` and checks that the worst-case function keeps at
/// most one half of its mass on `x ⊕ δ` for each `δ` of weight `L + 1`
/// (all of them when `deltas` is `None`). `x` is the zero vector and the
/// target output is 1. Perturbations for which `p̄` cannot be realised
/// exactly are counted in `skipped`.
pub fn verify_tightness(
    n: usize,
    beta: NoiseSpec,
    p_bar: &ExactNumber,
    deltas: Option<&[StructureVector]>,
) -> Result<TightnessReport> {
    if n > 14 {
        return Err(Error::TooLarge { n, cap: 14 });
    }
    let radius = RadiusSolver::new(n, beta, n)?.radius_exact(p_bar)?;
    let mut report = TightnessReport {
        radius,
        checked: 0,
        skipped: 0,
        vacuous: radius == n,
        violations: Vec::new(),
    };
    if report.vacuous {
        return Ok(report);
    }
    let x = StructureVector::zeros(n);
    let family: Vec<StructureVector> = match deltas {
        Some(d) => d.to_vec(),
        None => vectors_of_weight(n, radius + 1).collect(),
    };
    let half = BigRational::new(1.into(), 2.into());
    for delta in family {
        let f = match worst_case_f(&x, &delta, p_bar, beta, true) {
            Ok(f) => f,
            Err(Error::Unachievable { .. }) => {
                report.skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let outputs: Vec<bool> = f.region.clone();
        let (_, p1) = table_output_prob(&outputs, &ExactDistribution::around(&x.xor(&delta)?, beta)?)?;
        report.checked += 1;
        if p1 > half {
            report.violations.push(TightnessViolation {
                delta,
                perturbed_mass: p1,
            });
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoundnessReport {
    pub radius: usize,
    pub checked: usize,
    pub violations: Vec<StructureVector>,
}

impl SoundnessReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// For `f` with exact `Pr(f(x⊕ε) = y) ≥ p̄`, checks every `δ` with
/// `‖δ‖₀ ≤ L(p̄)` for `Pr(f(x⊕δ⊕ε) = y) > 1/2`.
pub fn verify_soundness<F: BaseFunction + ?Sized>(
    f: &F,
    x: &StructureVector,
    beta: NoiseSpec,
    p_bar: &ExactNumber,
    y: bool,
) -> Result<SoundnessReport> {
    let n = x.len();
    let outputs = tabulate(f)?;
    let (p0, p1) = table_output_prob(&outputs, &ExactDistribution::around(x, beta)?)?;
    let p_y = if y { p1 } else { p0 };
    if p_y < *p_bar {
        return Err(Error::Numeric(format!(
            "p̄ = {p_bar} exceeds the exact probability {p_y}"
        )));
    }
    let radius = RadiusSolver::new(n, beta, n)?.radius_exact(p_bar)?;
    let half = BigRational::new(1.into(), 2.into());
    let mut report = SoundnessReport {
        radius,
        checked: 0,
        violations: Vec::new(),
    };
    for weight in 0..=radius {
        for delta in vectors_of_weight(n, weight) {
            let (q0, q1) = table_output_prob(&outputs, &ExactDistribution::around(&x.xor(&delta)?, beta)?)?;
            report.checked += 1;
            if (if y { q1 } else { q0 }) <= half {
                report.violations.push(delta);
            }
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LemmaReport {
    /// Trials whose `ψ` met the mass condition on `X`.
    pub checked: usize,
    /// Trials discarded because `Pr(ψ(X)=1) < Pr(X ∈ T)`.
    pub vacuous: usize,
    pub violations: usize,
}

impl LemmaReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// One check of the likelihood-ratio lemma for explicit `T₃ ⊆ {ratio = t}`
/// and `ψ`; `None` when `ψ` does not meet the mass condition.
pub fn check_np_pair(
    x_dist: &ExactDistribution,
    y_dist: &ExactDistribution,
    t: &ExactNumber,
    t3: &[bool],
    psi: &[bool],
) -> Result<Option<bool>> {
    let n = x_dist.n;
    if y_dist.n != n || t3.len() != 1 << n || psi.len() != 1 << n {
        return Err(Error::Dimension {
            expected: 1 << n,
            actual: psi.len(),
        });
    }
    let in_t = t_membership(x_dist, y_dist, t, t3)?;
    let needed = x_dist.mass_numerator(|z| in_t[z as usize]);
    if x_dist.mass_numerator(|z| psi[z as usize]) < needed {
        return Ok(None);
    }
    let bound = y_dist.mass_numerator(|z| in_t[z as usize]);
    Ok(Some(y_dist.mass_numerator(|z| psi[z as usize]) >= bound))
}

/// `T = T₁ ∪ T₃` with `T₁ = {X(z) > t·Y(z)}` and `T₃` restricted to the
/// level set `{X(z) = t·Y(z)}`.
fn t_membership(
    x_dist: &ExactDistribution,
    y_dist: &ExactDistribution,
    t: &ExactNumber,
    t3: &[bool],
) -> Result<Vec<bool>> {
    if x_dist.denominator != y_dist.denominator {
        return Err(Error::Numeric("distributions must share a denominator".into()));
    }
    let (tn, td) = (
        t.numer()
            .to_biguint()
            .ok_or_else(|| Error::Numeric("t must be positive".into()))?,
        t.denom().to_biguint().expect("positive denominator"),
    );
    Ok((0..1u64 << x_dist.n)
        .map(|z| {
            let lhs = x_dist.numerator(z) * &td;
            let rhs = y_dist.numerator(z) * &tn;
            lhs > rhs || (lhs == rhs && t3[z as usize])
        })
        .collect())
}

/// Randomised stress test of the likelihood-ratio lemma: draws `T₃` as a
/// random half of the level set and `ψ` as `T` with random removals and
/// additions, until `checks` trials meet the mass condition (or
/// `50 · checks` attempts).
pub fn verify_np_lemma(
    x_dist: &ExactDistribution,
    y_dist: &ExactDistribution,
    t: &ExactNumber,
    checks: usize,
    seed: u64,
) -> Result<LemmaReport> {
    let size = 1usize << x_dist.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = LemmaReport::default();
    let mut attempts = 0;
    while report.checked < checks && attempts < 50 * checks.max(1) {
        attempts += 1;
        let t3: Vec<bool> = (0..size).map(|_| rng.random_bool(0.5)).collect();
        let in_t = t_membership(x_dist, y_dist, t, &t3)?;
        let remove = rng.random_range(0.0..0.3);
        let add = rng.random_range(0.0..0.6);
        let psi: Vec<bool> = in_t
            .iter()
            .map(|&member| {
                if member {
                    !rng.random_bool(remove)
                } else {
                    rng.random_bool(add)
                }
            })
            .collect();
        match check_np_pair(x_dist, y_dist, t, &t3, &psi)? {
            None => report.vacuous += 1,
            Some(true) => report.checked += 1,
            Some(false) => {
                report.checked += 1;
                report.violations += 1;
            }
        }
    }
    Ok(report)
}

/// One line of the small-size verification suite.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SuiteCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Noise levels used by the suite.
pub fn suite_betas() -> [NoiseSpec; 3] {
    [(3, 5), (7, 10), (4, 5)].map(|(p, q)| NoiseSpec::from_ratio(p, q).expect("valid ratio"))
}

fn random_mask(n: usize, weight: usize, rng: &mut ChaCha8Rng) -> StructureVector {
    let mut v = StructureVector::zeros(n);
    for i in rand::seq::index::sample(rng, n, weight) {
        v.set(i, true);
    }
    v
}

/// Counting-formula tables against enumeration for every `n ≤ max_n`,
/// `l ∈ 1..=n` and suite `β`, with random `x` and `δ`.
pub fn check_region_equivalence(max_n: usize, seed: u64) -> Result<SuiteCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut cases, mut mismatches) = (0, Vec::new());
    for beta in suite_betas() {
        for n in 1..=max_n {
            for l in 1..=n {
                let x = StructureVector::from_mask(rng.random_range(0..1u64 << n), n);
                let delta = random_mask(n, l, &mut rng);
                let counted = crate::certify::region_table(n, l, beta)?;
                cases += 1;
                if exact_region_probs(&x, &delta, beta)? != counted {
                    mismatches.push(format!("n={n} l={l} beta={beta}"));
                }
            }
        }
    }
    Ok(SuiteCheck {
        name: format!("region tables = enumeration (n ≤ {max_n})"),
        passed: mismatches.is_empty(),
        detail: format!("{cases} tables, {} mismatches {:?}", mismatches.len(), mismatches),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TightnessSummary {
    pub instances: usize,
    pub checked: usize,
    pub skipped: usize,
    pub violations: usize,
}

/// Tightness over achievable `p̄`: for each weight `w`, candidate masses of
/// `Q` for the perturbation on the first `w` bits are kept when their
/// certified size is `w − 1`, thinned to at most `per_weight` values.
pub fn tightness_grid(n: usize, beta: NoiseSpec, per_weight: usize) -> Result<TightnessSummary> {
    let half = BigRational::new(1.into(), 2.into());
    let solver = RadiusSolver::new(n, beta, n)?;
    let x = StructureVector::zeros(n);
    let mut summary = TightnessSummary::default();
    for w in 1..=n {
        let delta = StructureVector::from_mask((1u64 << w) - 1, n);
        let mut candidates: Vec<ExactNumber> = achievable_masses(&x, &delta, beta)?
            .into_iter()
            .filter(|p| *p > half)
            .collect();
        candidates.dedup();
        let mut matching = Vec::new();
        for p in candidates {
            if solver.radius_exact(&p)? + 1 == w {
                matching.push(p);
            }
        }
        let stride = matching.len().div_ceil(per_weight.max(1)).max(1);
        for p in matching.iter().step_by(stride) {
            let report = verify_tightness(n, beta, p, None)?;
            summary.instances += 1;
            summary.checked += report.checked;
            summary.skipped += report.skipped;
            summary.violations += report.violations.len();
        }
    }
    Ok(summary)
}

pub fn check_tightness(ns: std::ops::RangeInclusive<usize>, per_weight: usize) -> Result<SuiteCheck> {
    let mut total = TightnessSummary::default();
    let label = format!("tightness at L+1 (n = {}..={})", ns.start(), ns.end());
    for n in ns {
        for beta in suite_betas() {
            let s = tightness_grid(n, beta, per_weight)?;
            total.instances += s.instances;
            total.checked += s.checked;
            total.skipped += s.skipped;
            total.violations += s.violations;
        }
    }
    Ok(SuiteCheck {
        name: label,
        passed: total.violations == 0 && total.checked > 0,
        detail: format!(
            "{} p̄ values, {} perturbations checked, {} not achievable, {} violations",
            total.instances, total.checked, total.skipped, total.violations
        ),
    })
}

/// A random base function on `n` bits: either a biased coin table or the
/// Hamming ball around `x` with random entries inverted.
pub fn random_base_function(x: &StructureVector, rng: &mut ChaCha8Rng) -> Result<TruthTable> {
    let n = x.len();
    let center = mask_of(x)?;
    if rng.random_bool(0.5) {
        let bias = rng.random_range(0.5..1.0);
        let y = rng.random_bool(0.5);
        let table: Vec<bool> = (0..1u64 << n).map(|_| rng.random_bool(bias) == y).collect();
        TruthTable::new(n, table)
    } else {
        let radius = rng.random_range(0..=n as u32 / 2 + 1);
        let noise = rng.random_range(0.0..0.2);
        let table: Vec<bool> = (0..1u64 << n)
            .map(|z| ((z ^ center).count_ones() <= radius) != rng.random_bool(noise))
            .collect();
        TruthTable::new(n, table)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SoundnessSummary {
    pub functions: usize,
    /// Functions whose majority probability was exactly one half.
    pub ties: usize,
    pub deltas_checked: usize,
    pub max_radius: usize,
    pub violations: usize,
}

/// Random functions with `p̄` set to the exact majority probability.
pub fn soundness_trials(n: usize, functions: usize, seed: u64) -> Result<SoundnessSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = BigRational::new(1.into(), 2.into());
    let mut summary = SoundnessSummary::default();
    let betas = suite_betas();
    while summary.functions < functions {
        let beta = betas[rng.random_range(0..betas.len())];
        let x = StructureVector::from_mask(rng.random_range(0..1u64 << n), n);
        let f = random_base_function(&x, &mut rng)?;
        let (p0, p1) = exact_output_prob(&f, &x, beta)?;
        let (y, p) = if p1 > p0 { (true, p1) } else { (false, p0) };
        if p <= half {
            summary.ties += 1;
            continue;
        }
        let report = verify_soundness(&f, &x, beta, &p, y)?;
        summary.functions += 1;
        summary.deltas_checked += report.checked;
        summary.max_radius = summary.max_radius.max(report.radius);
        summary.violations += report.violations.len();
    }
    Ok(summary)
}

pub fn check_soundness(n: usize, functions: usize, seed: u64) -> Result<SuiteCheck> {
    let s = soundness_trials(n, functions, seed)?;
    Ok(SuiteCheck {
        name: format!("soundness by exhaustion (n = {n})"),
        passed: s.violations == 0,
        detail: format!(
            "{} functions, {} perturbations, max L = {}, {} violations",
            s.functions, s.deltas_checked, s.max_radius, s.violations
        ),
    })
}

/// Lemma stress at `x = 0`, `δ` on the first `l` bits, `t` cycling over
/// the ratios of the nonempty levels.
pub fn lemma_trials(n: usize, l: usize, beta: NoiseSpec, checks: usize, seed: u64) -> Result<LemmaReport> {
    let x = StructureVector::zeros(n);
    let delta = StructureVector::from_mask((1u64 << l) - 1, n);
    let x_dist = ExactDistribution::around(&x, beta)?;
    let y_dist = ExactDistribution::around(&x.xor(&delta)?, beta)?;
    let table = exact_region_probs(&x, &delta, beta)?;
    let ratios: Vec<ExactNumber> = table
        .nonempty()
        .map(|entry| table.density_ratio(entry.e).expect("rational beta"))
        .collect();
    let mut total = LemmaReport::default();
    let per_ratio = checks.div_ceil(ratios.len());
    for (k, t) in ratios.iter().enumerate() {
        let r = verify_np_lemma(&x_dist, &y_dist, t, per_ratio, seed.wrapping_add(k as u64))?;
        total.checked += r.checked;
        total.vacuous += r.vacuous;
        total.violations += r.violations;
    }
    Ok(total)
}

pub fn check_lemma(n: usize, checks: usize, seed: u64) -> Result<SuiteCheck> {
    let r = lemma_trials(n, 3.min(n), NoiseSpec::from_ratio(7, 10)?, checks, seed)?;
    Ok(SuiteCheck {
        name: format!("likelihood-ratio lemma stress (n = {n})"),
        passed: r.passed() && r.checked >= checks,
        detail: format!(
            "{} checks, {} vacuous draws, {} violations",
            r.checked, r.vacuous, r.violations
        ),
    })
}

/// Small-size verification suite; `full` uses the larger grids.
pub fn run_suite(full: bool, seed: u64) -> Result<Vec<SuiteCheck>> {
    let (max_n, tight_n, per_weight, functions, checks) = if full {
        (12, 10, 4, 200, 10_000)
    } else {
        (8, 7, 2, 40, 2_000)
    };
    Ok(vec![
        check_region_equivalence(max_n, seed)?,
        check_tightness(4..=tight_n, per_weight)?,
        check_soundness(10, functions, seed)?,
        check_lemma(8, checks, seed)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn beta07() -> NoiseSpec {
        NoiseSpec::from_ratio(7, 10).unwrap()
    }

    fn q(n: i64, d: i64) -> ExactNumber {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn distribution_sums_to_one() {
        let x = StructureVector::from_mask(0b1011, 6);
        let dist = ExactDistribution::around(&x, beta07()).unwrap();
        assert!(dist.mass(|_| true).is_one());
        let total: ExactNumber = dist.probabilities().iter().sum();
        assert!(total.is_one());
        assert_eq!(dist.probability(0b1011), q(7, 10).pow(6));
    }

    #[test]
    fn output_probability_basics() {
        let beta = beta07();
        let one = TruthTable::from_fn(3, |_| true).unwrap();
        let x = StructureVector::zeros(3);
        assert_eq!(exact_output_prob(&one, &x, beta).unwrap(), (q(0, 1), q(1, 1)));
        let first_bit = TruthTable::from_fn(1, |z| z & 1 == 1).unwrap();
        let (p0, p1) = exact_output_prob(&first_bit, &StructureVector::zeros(1), beta).unwrap();
        assert_eq!((p0, p1), (q(7, 10), q(3, 10)));
        assert!(exact_output_prob(&one, &StructureVector::zeros(21), beta).is_err());
    }

    #[test]
    fn one_bit_regions() {
        let t = exact_region_probs(&StructureVector::zeros(1), &StructureVector::from_mask(1, 1), beta07()).unwrap();
        let get = |e: i64| t.entries.iter().find(|r| r.e == e).unwrap().clone();
        assert_eq!((get(1).pr_x, get(1).pr_y), (q(7, 10), q(3, 10)));
        assert_eq!((get(-1).pr_x, get(-1).pr_y), (q(3, 10), q(7, 10)));
    }

    #[test]
    fn zero_perturbation_is_one_region() {
        let x = StructureVector::from_mask(0b101, 4);
        let t = exact_region_probs(&x, &StructureVector::zeros(4), beta07()).unwrap();
        for entry in &t.entries {
            if entry.e == 0 {
                assert!(entry.pr_x.is_one() && entry.pr_y.is_one());
            } else {
                assert!(entry.is_empty());
            }
        }
    }

    #[test]
    fn worst_case_one_bit() {
        let x = StructureVector::zeros(1);
        let delta = StructureVector::from_mask(1, 1);
        let f = worst_case_f(&x, &delta, &q(7, 10), beta07(), true).unwrap();
        assert!(f.contains(0) && !f.contains(1));
        let (_, p1) = exact_output_prob(&f, &delta, beta07()).unwrap();
        assert_eq!(p1, q(3, 10));
        let all = worst_case_f(&x, &delta, &q(1, 1), beta07(), false).unwrap();
        assert_eq!(all.region_size(), 2);
        assert!(matches!(
            worst_case_f(&x, &delta, &q(8, 10), beta07(), true),
            Err(Error::Unachievable { .. })
        ));
    }

    #[test]
    fn tightness_one_bit() {
        // On one bit only 0.7 and 1 are achievable masses above 1/2.
        let report = verify_tightness(1, beta07(), &q(71, 100), None).unwrap();
        assert_eq!((report.radius, report.checked, report.skipped), (0, 0, 1));
        let report = verify_tightness(1, beta07(), &q(7, 10), None).unwrap();
        assert_eq!((report.radius, report.checked), (0, 1));
        assert!(report.passed());
        let report = verify_tightness(3, beta07(), &q(1, 1), None).unwrap();
        assert!(report.vacuous && report.passed());
    }

    #[test]
    fn lemma_trivial_cases() {
        let beta = beta07();
        let x = StructureVector::zeros(4);
        let y = StructureVector::from_mask(0b0111, 4);
        let xd = ExactDistribution::around(&x, beta).unwrap();
        let yd = ExactDistribution::around(&y, beta).unwrap();
        let t = q(7, 3);
        let t3: Vec<bool> = (0..16).map(|z| z % 2 == 0).collect();
        let in_t = t_membership(&xd, &yd, &t, &t3).unwrap();
        assert_eq!(check_np_pair(&xd, &yd, &t, &t3, &in_t).unwrap(), Some(true));
        assert_eq!(check_np_pair(&xd, &yd, &t, &t3, &[true; 16]).unwrap(), Some(true));
        let report = verify_np_lemma(&xd, &yd, &t, 200, 1).unwrap();
        assert_eq!(report.checked, 200);
        assert!(report.passed());
    }

    #[test]
    fn lexicographic_order_puts_entry_zero_first() {
        let mut v: Vec<u64> = (0..8).collect();
        v.sort_by_key(|&z| lexicographic_key(z, 3));
        assert_eq!(v, vec![0, 4, 2, 6, 1, 5, 3, 7]);
    }
}
