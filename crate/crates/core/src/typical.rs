//! Strong typicality: typical sets, pruned sampling, typical and conditionally
//! typical projectors, and the smoothed post-measurement states.
//!
//! A sequence `x^n` is δ-typical for `p` when every symbol satisfies
//! `|N(a|x^n)/n - p(a)| <= δ` and symbols with `p(a) = 0` never occur.
//!
//! Typical sets are handled through their types (compositions), so masses and
//! projector ranks are exact for any block length. Explicit sequence lists are
//! only produced below [`ENUMERATION_CAP`].
//!
//! Quantum typicality groups degenerate eigenvalues into classes and applies
//! the classical criterion to the class distribution (multiplicity times
//! eigenvalue). This makes the projectors independent of the eigenbasis chosen
//! inside a degenerate eigenspace; `I/2` has a single class and `Π = I`.

use nalgebra::DVector;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::povm::Ensemble;
use crate::qmat::{tensor_all, CMatrix, Operator, Tolerances, C64};
use crate::{Error, Result};

/// Largest `|alphabet|^n` (or projector side) that is enumerated explicitly.
pub const ENUMERATION_CAP: usize = 1 << 20;

/// Eigenvalues closer than this are one class.
const CLASS_GAP: f64 = 1e-9;

/// Slack on the frequency test, to keep exact boundary cases typical.
const FREQ_SLACK: f64 = 1e-12;

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    for k in 1..=n {
        out[k] = out[k - 1] + (k as f64).ln();
    }
    out
}

/// All compositions of `n` into `m` nonnegative parts, lexicographic.
pub fn compositions(n: usize, m: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, m: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if m == 1 {
            prefix.push(n);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for k in 0..=n {
            prefix.push(k);
            rec(n - k, m - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if m > 0 {
        rec(n, m, &mut Vec::with_capacity(m), &mut out);
    }
    out
}

/// Frequency test on a type.
pub fn counts_typical(counts: &[usize], pmf: &[f64], delta: f64) -> bool {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return true;
    }
    counts.iter().zip(pmf).all(
        |(&k, &p)| {
            if p <= 0.0 {
                k == 0
            } else {
                (k as f64 / n as f64 - p).abs() <= delta + FREQ_SLACK
            }
        },
    )
}

pub fn counts_of(seq: &[usize], m: usize) -> Vec<usize> {
    let mut c = vec![0; m];
    for &s in seq {
        c[s] += 1;
    }
    c
}

fn check_pmf(pmf: &[f64]) -> Result<()> {
    if pmf.is_empty() || pmf.iter().any(|&p| p < 0.0 || !p.is_finite()) {
        return Err(Error::Param(format!("invalid pmf {pmf:?}")));
    }
    let s: f64 = pmf.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Param(format!("pmf sums to {s}")));
    }
    Ok(())
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta >= 0.0) {
        return Err(Error::Param(format!("delta = {delta} must be nonnegative")));
    }
    Ok(())
}

/// Probability of one sequence of the given type: `prod p(a)^k_a`.
fn type_seq_prob(counts: &[usize], pmf: &[f64]) -> f64 {
    counts.iter().zip(pmf).map(|(&k, &p)| if k == 0 { 1.0 } else { p.powi(k as i32) }).product()
}

/// Number of sequences with the given type.
fn type_size(counts: &[usize], lf: &[f64]) -> f64 {
    let n: usize = counts.iter().sum();
    (lf[n] - counts.iter().map(|&k| lf[k]).sum::<f64>()).exp().round()
}

#[derive(Debug, Clone)]
pub struct TypicalSet {
    pmf: Vec<f64>,
    n: usize,
    delta: f64,
    /// Typical types with their total probability.
    types: Vec<(Vec<usize>, f64)>,
    mass: f64,
}

pub fn typical_set(pmf: &[f64], n: usize, delta: f64) -> Result<TypicalSet> {
    check_pmf(pmf)?;
    check_delta(delta)?;
    if n == 0 {
        return Err(Error::Param("block length must be at least 1".into()));
    }
    let lf = ln_factorials(n);
    let types: Vec<(Vec<usize>, f64)> = compositions(n, pmf.len())
        .into_iter()
        .filter(|c| counts_typical(c, pmf, delta))
        .map(|c| {
            let w = type_size(&c, &lf) * type_seq_prob(&c, pmf);
            (c, w)
        })
        .filter(|(_, w)| *w > 0.0)
        .collect();
    let mass = types.iter().map(|t| t.1).sum::<f64>().min(1.0);
    Ok(TypicalSet { pmf: pmf.to_vec(), n, delta, types, mass })
}

/// Distinct permutations of a multiset given as sorted symbols.
fn multiset_permutations(counts: &[usize]) -> Vec<Vec<usize>> {
    let mut cur: Vec<usize> = counts.iter().enumerate().flat_map(|(a, &k)| std::iter::repeat_n(a, k)).collect();
    let mut out = vec![cur.clone()];
    // next_permutation on an ascending start yields every arrangement once
    loop {
        let Some(i) = (0..cur.len().saturating_sub(1)).rev().find(|&i| cur[i] < cur[i + 1]) else { break };
        let j = (i + 1..cur.len()).rev().find(|&j| cur[j] > cur[i]).unwrap();
        cur.swap(i, j);
        cur[i + 1..].reverse();
        out.push(cur.clone());
    }
    out
}

impl TypicalSet {
    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Total i.i.d. probability of the typical set.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn types(&self) -> &[(Vec<usize>, f64)] {
        &self.types
    }

    pub fn contains(&self, seq: &[usize]) -> bool {
        seq.len() == self.n
            && seq.iter().all(|&s| s < self.pmf.len())
            && counts_typical(&counts_of(seq, self.pmf.len()), &self.pmf, self.delta)
    }

    /// Number of typical sequences.
    pub fn count(&self) -> f64 {
        let lf = ln_factorials(self.n);
        self.types.iter().map(|(c, _)| type_size(c, &lf)).sum()
    }

    /// i.i.d. probability of a sequence.
    pub fn iid_prob(&self, seq: &[usize]) -> f64 {
        seq.iter().map(|&s| self.pmf[s]).product()
    }

    /// Probability under the pruned distribution, normalized by the typical mass.
    pub fn pruned_prob(&self, seq: &[usize]) -> f64 {
        if self.contains(seq) {
            self.iid_prob(seq) / self.mass
        } else {
            0.0
        }
    }

    /// Every typical sequence, lexicographic; `None` above the enumeration cap.
    pub fn sequences(&self) -> Option<Vec<Vec<usize>>> {
        let full = (self.pmf.len() as f64).powi(self.n as i32);
        if full > ENUMERATION_CAP as f64 {
            return None;
        }
        let mut all: Vec<Vec<usize>> = self.types.iter().flat_map(|(c, _)| multiset_permutations(c)).collect();
        all.sort();
        Some(all)
    }

    pub fn distribution(&self) -> Result<PrunedDistribution> {
        if self.types.is_empty() {
            return Err(Error::EmptyTypicalSet);
        }
        let weights = WeightedIndex::new(self.types.iter().map(|t| t.1))
            .map_err(|e| Error::Param(format!("typical weights: {e}")))?;
        Ok(PrunedDistribution { types: self.types.iter().map(|t| t.0.clone()).collect(), weights })
    }
}

/// The i.i.d. law conditioned on the typical set.
///
/// Sampling draws a type with its total probability and then a uniformly
/// random arrangement of that type, which is exact because all sequences of a
/// type are equiprobable.
#[derive(Debug, Clone)]
pub struct PrunedDistribution {
    types: Vec<Vec<usize>>,
    weights: WeightedIndex<f64>,
}

impl Distribution<Vec<usize>> for PrunedDistribution {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let counts = &self.types[self.weights.sample(rng)];
        let mut seq: Vec<usize> = counts.iter().enumerate().flat_map(|(a, &k)| std::iter::repeat_n(a, k)).collect();
        seq.shuffle(rng);
        seq
    }
}

/// Seeded sampler from the pruned distribution.
#[derive(Debug, Clone)]
pub struct PrunedSampler {
    dist: PrunedDistribution,
    rng: ChaCha8Rng,
}

impl PrunedSampler {
    pub fn sample(&mut self) -> Vec<usize> {
        self.dist.sample(&mut self.rng)
    }
}

pub fn pruned_sampler(pmf: &[f64], n: usize, delta: f64, seed: u64) -> Result<PrunedSampler> {
    let dist = typical_set(pmf, n, delta)?.distribution()?;
    Ok(PrunedSampler { dist, rng: ChaCha8Rng::seed_from_u64(seed) })
}

/// Eigenbasis of a PSD operator with eigenvalues grouped into classes.
#[derive(Debug, Clone)]
pub struct EigenClasses {
    /// Eigenvectors as columns, eigenvalues descending.
    pub basis: CMatrix,
    /// Class of each column.
    pub class_of: Vec<usize>,
    /// Multiplicity times eigenvalue per class; zero for the kernel class.
    pub class_pmf: Vec<f64>,
    pub multiplicity: Vec<usize>,
    /// Diagonal of the operator in `basis`, per column.
    pub eigenvalues: Vec<f64>,
}

pub fn eigen_classes(op: &Operator, tol: &Tolerances) -> EigenClasses {
    let eig = op.eigh();
    let mut class_of = Vec::with_capacity(eig.values.len());
    let mut class_sum: Vec<f64> = Vec::new();
    let mut multiplicity: Vec<usize> = Vec::new();
    let mut last: Option<f64> = None;
    for &v in &eig.values {
        let v = if v <= tol.rank { 0.0 } else { v };
        let same = last.is_some_and(|l| (l - v).abs() <= CLASS_GAP);
        if !same {
            class_sum.push(0.0);
            multiplicity.push(0);
        }
        let c = class_sum.len() - 1;
        class_sum[c] += v;
        multiplicity[c] += 1;
        class_of.push(c);
        last = Some(v);
    }
    let total: f64 = class_sum.iter().sum();
    let class_pmf = class_sum.iter().map(|s| s / total).collect();
    let eigenvalues = eig.values.iter().map(|&v| v.max(0.0)).collect();
    EigenClasses { basis: eig.vectors, class_of, class_pmf, multiplicity, eigenvalues }
}

/// Projector diagonal in a product basis: per-position bases plus a mask over basis products.
#[derive(Debug, Clone)]
pub struct ProductProjector {
    d: usize,
    bases: Vec<CMatrix>,
    mask: Vec<bool>,
}

fn power_checked(d: usize, n: usize) -> Result<usize> {
    let mut side: usize = 1;
    for _ in 0..n {
        side = side
            .checked_mul(d)
            .filter(|&s| s <= ENUMERATION_CAP)
            .ok_or_else(|| Error::CapExceeded(format!("{d}^{n} exceeds the enumeration cap {ENUMERATION_CAP}")))?;
    }
    Ok(side)
}

/// Decodes a row-major product index, position 0 most significant.
fn digits(mut idx: usize, d: usize, n: usize, out: &mut [usize]) {
    for k in (0..n).rev() {
        out[k] = idx % d;
        idx /= d;
    }
}

impl ProductProjector {
    /// `keep(digits)` decides membership of each product basis vector.
    fn build(d: usize, bases: Vec<CMatrix>, keep: impl Fn(&[usize]) -> bool) -> Result<Self> {
        let n = bases.len();
        let side = power_checked(d, n)?;
        let mut ds = vec![0; n];
        let mask = (0..side)
            .map(|idx| {
                digits(idx, d, n, &mut ds);
                keep(&ds)
            })
            .collect();
        Ok(Self { d, bases, mask })
    }

    pub fn n(&self) -> usize {
        self.bases.len()
    }

    pub fn local_dim(&self) -> usize {
        self.d
    }

    pub fn side(&self) -> usize {
        self.mask.len()
    }

    pub fn rank(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    /// `Tr(Π (x)_k s_k)` for a product operator, exact.
    pub fn capture(&self, factors: &[Operator]) -> Result<f64> {
        if factors.len() != self.n() || factors.iter().any(|f| f.side() != self.d) {
            return Err(Error::Param("capture needs one d x d factor per position".into()));
        }
        let diags: Vec<Vec<f64>> = factors
            .iter()
            .zip(&self.bases)
            .map(|(f, b)| {
                let m = b.adjoint() * f.matrix() * b;
                (0..self.d).map(|i| m[(i, i)].re).collect()
            })
            .collect();
        let n = self.n();
        let mut ds = vec![0; n];
        let mut total = 0.0;
        for (idx, &keep) in self.mask.iter().enumerate() {
            if keep {
                digits(idx, self.d, n, &mut ds);
                total += ds.iter().enumerate().map(|(k, &i)| diags[k][i]).product::<f64>();
            }
        }
        Ok(total)
    }

    /// Dense projector on `d^n` with factor dims `[d; n]`.
    pub fn to_operator(&self) -> Operator {
        let n = self.n();
        let side = self.side();
        let rank = self.rank();
        let mut cols = CMatrix::zeros(side, rank);
        let mut ds = vec![0; n];
        let mut c = 0;
        for (idx, &keep) in self.mask.iter().enumerate() {
            if !keep {
                continue;
            }
            digits(idx, self.d, n, &mut ds);
            let mut v = DVector::from_element(1, C64::new(1.0, 0.0));
            for (k, &i) in ds.iter().enumerate() {
                v = v.kronecker(&self.bases[k].column(i).into_owned());
            }
            cols.set_column(c, &v);
            c += 1;
        }
        Operator::new(&cols * cols.adjoint(), vec![self.d; n]).expect("product dims")
    }
}

/// Typical projector of `rho^{(x) n}`.
pub fn typical_projector(rho: &Operator, n: usize, delta: f64) -> Result<ProductProjector> {
    check_delta(delta)?;
    let ec = eigen_classes(rho, &Tolerances::DEFAULT);
    let m = ec.class_pmf.len();
    let bases = vec![ec.basis.clone(); n];
    ProductProjector::build(rho.side(), bases, |ds| {
        let mut counts = vec![0; m];
        for &i in ds {
            counts[ec.class_of[i]] += 1;
        }
        counts_typical(&counts, &ec.class_pmf, delta)
    })
}

/// Exact rank of the typical projector, computed from class types.
pub fn typical_rank(rho: &Operator, n: usize, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    let ec = eigen_classes(rho, &Tolerances::DEFAULT);
    let lf = ln_factorials(n);
    Ok(compositions(n, ec.class_pmf.len())
        .into_iter()
        .filter(|c| counts_typical(c, &ec.class_pmf, delta))
        .map(|c| {
            type_size(&c, &lf)
                * c.iter().zip(&ec.multiplicity).map(|(&k, &mu)| (mu as f64).powi(k as i32)).product::<f64>()
        })
        .sum())
}

/// Exact `Tr(Π rho^{(x) n})`, computed from class types.
pub fn typical_capture(rho: &Operator, n: usize, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    let ec = eigen_classes(rho, &Tolerances::DEFAULT);
    Ok(typical_set(&ec.class_pmf, n, delta)?.mass())
}

/// Conditionally typical projector for arbitrary per-symbol states.
///
/// Position `i` uses the eigenbasis of `states[seq[i]]`; for every symbol the
/// class sequence on its positions must be typical for that symbol's classes.
pub fn cond_typical_projector_states(states: &[Operator], seq: &[usize], delta: f64) -> Result<ProductProjector> {
    check_delta(delta)?;
    let d = states.first().map(|s| s.side()).ok_or_else(|| Error::Param("no states".into()))?;
    if states.iter().any(|s| s.side() != d) {
        return Err(Error::Param("conditional states differ in dimension".into()));
    }
    if let Some(&bad) = seq.iter().find(|&&s| s >= states.len()) {
        return Err(Error::Param(format!("symbol {bad} has no state")));
    }
    let tol = Tolerances::DEFAULT;
    let classes: Vec<EigenClasses> = states.iter().map(|s| eigen_classes(s, &tol)).collect();
    let bases = seq.iter().map(|&s| classes[s].basis.clone()).collect();
    ProductProjector::build(d, bases, |ds| {
        (0..states.len()).all(|a| {
            let ec = &classes[a];
            let mut counts = vec![0; ec.class_pmf.len()];
            let mut any = false;
            for (k, &s) in seq.iter().enumerate() {
                if s == a {
                    counts[ec.class_of[ds[k]]] += 1;
                    any = true;
                }
            }
            !any || counts_typical(&counts, &ec.class_pmf, delta)
        })
    })
}

fn ensemble_states(ens: &Ensemble, seq: &[usize]) -> Result<Vec<Operator>> {
    ens.entries
        .iter()
        .enumerate()
        .map(|(a, e)| match &e.state {
            Some(s) => Ok(s.op().clone()),
            None if seq.contains(&a) => Err(Error::Param(format!("symbol {a} has zero weight"))),
            None => Ok(Operator::zeros(&[ens.entries.iter().find_map(|e| e.state.as_ref()).map_or(1, |s| s.side())])),
        })
        .collect()
}

/// Conditionally typical projector of the canonical ensemble at `seq`.
pub fn cond_typical_projector(ens: &Ensemble, seq: &[usize], delta: f64) -> Result<ProductProjector> {
    cond_typical_projector_states(&ensemble_states(ens, seq)?, seq, delta)
}

/// `rho_hat` and its smoothed version for one sequence.
#[derive(Debug, Clone)]
pub struct SmoothedState {
    pub seq: Vec<usize>,
    pub rho_hat: Operator,
    /// `Π_ρ Π_seq rho_hat Π_seq Π_ρ`, zero when `seq` is atypical.
    pub rho_tilde: Operator,
    /// `Π_ρ Π_seq`, so that `rho_tilde = filter rho_hat filter^dagger`.
    pub filter: Operator,
}

impl SmoothedState {
    /// `||rho_hat - rho_tilde||_1`.
    pub fn gentle_defect(&self) -> f64 {
        crate::qmat::trace_norm(&(&self.rho_hat - &self.rho_tilde))
    }
}

/// Largest dense side used for smoothed states and protocol operators.
pub const DENSE_CAP: usize = 1 << 11;

pub(crate) fn dense_side(d: usize, n: usize) -> Result<usize> {
    let side = power_checked(d, n)?;
    if side > DENSE_CAP {
        return Err(Error::CapExceeded(format!("dense side {side} exceeds {DENSE_CAP}")));
    }
    Ok(side)
}

/// Precomputed pieces shared by every sequence of one ensemble.
#[derive(Debug, Clone)]
pub struct Smoother {
    states: Vec<Operator>,
    set: TypicalSet,
    pi_rho: Operator,
    delta: f64,
}

impl Smoother {
    pub fn new(ens: &Ensemble, rho: &Operator, n: usize, delta: f64) -> Result<Self> {
        dense_side(rho.side(), n)?;
        let set = typical_set(&ens.weights(), n, delta)?;
        let states = ensemble_states(ens, &[])?;
        let pi_rho = typical_projector(rho, n, delta)?.to_operator();
        Ok(Self { states, set, pi_rho, delta })
    }

    pub fn typical_set(&self) -> &TypicalSet {
        &self.set
    }

    /// `Π_ρ` as a dense operator.
    pub fn pi_rho(&self) -> &Operator {
        &self.pi_rho
    }

    pub fn states(&self) -> &[Operator] {
        &self.states
    }

    /// `(x)_i sqrt(rho_hat_{seq_i})`.
    pub fn sqrt_rho_hat(&self, seq: &[usize]) -> Result<Operator> {
        let roots: Vec<Operator> =
            seq.iter().map(|&s| crate::qmat::mat_sqrt(&self.states[s])).collect::<std::result::Result<_, _>>()?;
        Ok(tensor_all(roots.iter()).expect("nonempty sequence"))
    }

    pub fn rho_hat(&self, seq: &[usize]) -> Operator {
        tensor_all(seq.iter().map(|&s| &self.states[s])).expect("nonempty sequence")
    }

    pub fn smooth(&self, seq: &[usize]) -> Result<SmoothedState> {
        let rho_hat = self.rho_hat(seq);
        if !self.set.contains(seq) {
            let rho_tilde = Operator::zeros(rho_hat.dims());
            let filter = rho_tilde.clone();
            return Ok(SmoothedState { seq: seq.to_vec(), rho_hat, rho_tilde, filter });
        }
        let pi_u = cond_typical_projector_states(&self.states, seq, self.delta)?.to_operator();
        let filter = self.pi_rho.matmul(&pi_u)?;
        let rho_tilde = filter.sandwich(&rho_hat).hermitian_part();
        Ok(SmoothedState { seq: seq.to_vec(), rho_hat, rho_tilde, filter })
    }
}

pub fn smoothed_state(ens: &Ensemble, rho: &Operator, seq: &[usize], delta: f64) -> Result<SmoothedState> {
    Smoother::new(ens, rho, seq.len(), delta)?.smooth(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::povm::{canonical_ensemble, Povm};
    use crate::qmat::{random, tensor_power, trace_norm, DensityOperator};
    use nalgebra::DMatrix;
    use rand::SeedableRng;

    fn example() -> Povm {
        let l0 = Operator::from_matrix(DMatrix::from_row_slice(
            2,
            2,
            &[C64::new(0.9501, 0.0), C64::new(0.0826, 0.1089), C64::new(0.0826, -0.1089), C64::new(0.0615, 0.0)],
        ))
        .unwrap();
        let l1 = &Operator::identity(&[2]) - &l0;
        Povm::new(vec![("0".into(), l0), ("1".into(), l1)], false, &Tolerances::DEFAULT).unwrap()
    }

    #[test]
    fn typical_set_examples() {
        let t = typical_set(&[0.3, 0.7], 1, 1.0).unwrap();
        assert_eq!(t.sequences().unwrap(), vec![vec![0], vec![1]]);
        let t = typical_set(&[0.5, 0.5], 2, 0.0).unwrap();
        assert_eq!(t.sequences().unwrap(), vec![vec![0, 1], vec![1, 0]]);
        assert!((t.mass() - 0.5).abs() < 1e-15);
        let t = typical_set(&[0.5, 0.0, 0.5], 2, 1.0).unwrap();
        assert!(t.sequences().unwrap().iter().all(|s| !s.contains(&1)));
        assert!(typical_set(&[0.5, 0.5], 2, -0.1).is_err());
        assert!(typical_set(&[0.5, 0.6], 2, 0.1).is_err());
    }

    #[test]
    fn typical_mass_trends_upward() {
        // exact binomial oracle for p = (3/4, 1/4)
        let oracle = |n: usize| -> f64 {
            let lf = ln_factorials(n);
            (0..=n)
                .filter(|&k| ((k as f64) / (n as f64) - 0.75).abs() <= 0.3 + FREQ_SLACK)
                .map(|k| (lf[n] - lf[k] - lf[n - k]).exp() * 0.75f64.powi(k as i32) * 0.25f64.powi((n - k) as i32))
                .sum()
        };
        let masses: Vec<f64> = (4..=16).map(|n| typical_set(&[0.75, 0.25], n, 0.3).unwrap().mass()).collect();
        for (i, m) in masses.iter().enumerate() {
            assert!((m - oracle(i + 4)).abs() < 1e-12);
        }
        let xs: Vec<f64> = (4..=16).map(|n| n as f64).collect();
        let mx = xs.iter().sum::<f64>() / xs.len() as f64;
        let my = masses.iter().sum::<f64>() / masses.len() as f64;
        let slope: f64 = xs.iter().zip(&masses).map(|(x, y)| (x - mx) * (y - my)).sum();
        assert!(slope > 0.0);
        assert!(masses.last().unwrap() > masses.first().unwrap());
    }

    #[test]
    fn enumeration_matches_types() {
        let t = typical_set(&[0.2, 0.5, 0.3], 5, 0.15).unwrap();
        let seqs = t.sequences().unwrap();
        assert_eq!(seqs.len() as f64, t.count());
        let mass: f64 = seqs.iter().map(|s| t.iid_prob(s)).sum();
        assert!((mass - t.mass()).abs() < 1e-12);
        assert!(seqs.iter().all(|s| t.contains(s)));
        let pruned: f64 = seqs.iter().map(|s| t.pruned_prob(s)).sum();
        assert!((pruned - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pruned_sampler_matches_restricted_pmf() {
        let pmf = [0.7, 0.3];
        let n = 4;
        let set = typical_set(&pmf, n, 0.2).unwrap();
        let mut s = pruned_sampler(&pmf, n, 0.2, 99).unwrap();
        let trials = 100_000;
        let mut hits = std::collections::BTreeMap::new();
        for _ in 0..trials {
            let x = s.sample();
            assert!(set.contains(&x));
            *hits.entry(x).or_insert(0usize) += 1;
        }
        for seq in set.sequences().unwrap() {
            let p = set.pruned_prob(&seq);
            let sigma = (p * (1.0 - p) / trials as f64).sqrt();
            let got = *hits.get(&seq).unwrap_or(&0) as f64 / trials as f64;
            assert!((got - p).abs() <= 3.0 * sigma, "{seq:?}: {got} vs {p}");
        }
        // huge delta keeps every sequence, so the law is i.i.d.
        let all = typical_set(&pmf, n, 10.0).unwrap();
        assert!((all.mass() - 1.0).abs() < 1e-12);
        let mut a = pruned_sampler(&pmf, n, 0.2, 5).unwrap();
        let mut b = pruned_sampler(&pmf, n, 0.2, 5).unwrap();
        assert_eq!(a.sample(), b.sample());
        assert!(matches!(pruned_sampler(&[0.5, 0.5], 3, 0.0, 1), Err(Error::EmptyTypicalSet)));
    }

    #[test]
    fn projector_examples() {
        let pure = Operator::diag(&[1.0, 0.0]);
        for n in 1..5 {
            assert_eq!(typical_projector(&pure, n, 0.1).unwrap().rank(), 1);
        }
        let rho = Operator::diag(&[0.75, 0.25]);
        let h = -(0.75f64 * 0.75f64.log2() + 0.25 * 0.25f64.log2());
        let c = -(0.75f64.log2()) - 0.25f64.log2();
        for n in 1..=10 {
            let r = typical_projector(&rho, n, 0.3).unwrap().rank();
            assert_eq!(r as f64, typical_rank(&rho, n, 0.3).unwrap());
            assert!((r as f64) <= 2f64.powf(n as f64 * (h + c * 0.3)) + 1e-9);
        }
        let cap = typical_capture(&rho, 12, 0.3).unwrap();
        assert!(cap >= 0.9, "{cap}");
        let via_mask = typical_projector(&rho, 12, 0.3).unwrap().capture(&vec![rho.clone(); 12]).unwrap();
        assert!((cap - via_mask).abs() < 1e-12);
        // I/2 has one class
        let half = Operator::identity(&[2]).scale(0.5);
        assert_eq!(typical_projector(&half, 3, 0.0).unwrap().rank(), 8);
    }

    #[test]
    fn projector_is_idempotent_and_commutes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rho = random::full_rank_density(&mut rng, 2);
        let p = typical_projector(rho.op(), 3, 0.2).unwrap().to_operator();
        assert!(trace_norm(&(&(&p * &p) - &p)) < 1e-10);
        let big = tensor_power(rho.op(), 3);
        assert!(trace_norm(&(&(&p * &big) - &(&big * &p))) < 1e-10);
    }

    #[test]
    fn conditional_projector_contains_branch_mass() {
        let rho = DensityOperator::maximally_mixed(&[2]);
        let ens = canonical_ensemble(&rho, &example()).unwrap();
        let seq = vec![0, 1, 0, 0, 1, 1];
        let p = cond_typical_projector(&ens, &seq, 0.25).unwrap();
        let st: Vec<Operator> = seq.iter().map(|&s| ens.entries[s].state.as_ref().unwrap().op().clone()).collect();
        let cap = p.capture(&st).unwrap();
        let dense = p.to_operator();
        let hat = tensor_all(st.iter()).unwrap();
        assert!(((dense.matrix() * hat.matrix()).trace().re - cap).abs() < 1e-10);
        // longer branches capture more
        let short = cond_typical_projector(&ens, &[0, 1], 0.25).unwrap().capture(&st[..2]).unwrap();
        let long_seq: Vec<usize> = (0..16).map(|i| i % 2).collect();
        let long_st: Vec<Operator> =
            long_seq.iter().map(|&s| ens.entries[s].state.as_ref().unwrap().op().clone()).collect();
        let long = cond_typical_projector(&ens, &long_seq, 0.25).unwrap().capture(&long_st).unwrap();
        assert!(long > short);
    }

    #[test]
    fn smoothed_state_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let rho = random::full_rank_density(&mut rng, 2);
        let effects =
            random::povm_effects(&mut rng, 2, 2).into_iter().enumerate().map(|(i, o)| (i.to_string(), o)).collect();
        let m = Povm::new(effects, false, &Tolerances::DEFAULT).unwrap();
        let ens = canonical_ensemble(&rho, &m).unwrap();
        let s = smoothed_state(&ens, rho.op(), &[1], 5.0).unwrap();
        assert!(trace_norm(&(&s.rho_hat - &s.rho_tilde)) < 1e-10);

        let ens = canonical_ensemble(&DensityOperator::maximally_mixed(&[2]), &example()).unwrap();
        let s = smoothed_state(&ens, &Operator::identity(&[2]).scale(0.5), &[0, 0, 0, 0], 0.1).unwrap();
        assert_eq!(trace_norm(&s.rho_tilde), 0.0);
    }

    #[test]
    fn gentle_measurement_on_example_ensemble() {
        let half = Operator::identity(&[2]).scale(0.5);
        let ens = canonical_ensemble(&DensityOperator::maximally_mixed(&[2]), &example()).unwrap();
        let sm = Smoother::new(&ens, &half, 6, 0.25).unwrap();
        let seqs = sm.typical_set().sequences().unwrap();
        assert!(!seqs.is_empty());
        for seq in seqs {
            let s = sm.smooth(&seq).unwrap();
            assert!(s.gentle_defect() <= 0.3, "{seq:?}: {}", s.gentle_defect());
            // sandwiched between 0 and I
            let ev = s.rho_tilde.eigenvalues();
            assert!(ev.iter().all(|&v| (-1e-10..=1.0 + 1e-10).contains(&v)));
            assert!(s.rho_tilde.trace().re <= 1.0 + 1e-8);
        }
    }
}
