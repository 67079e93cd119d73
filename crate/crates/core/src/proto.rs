//! Random-coding protocol simulator.
//!
//! A [`Setting`] holds everything that depends only on the problem (state,
//! POVMs, block length and rates). A [`ProtocolInstance`] adds the random
//! parts: codebooks and bin maps. Experiments run many instances in parallel,
//! one PRNG stream per trial, so results do not depend on the thread count.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::infoq::{auxiliary_states, check_tripartite};
use crate::povm::{canonical_ensemble, Ensemble, Povm};
use crate::qmat::{
    mat_sqrt, partial_trace, pinv_sqrt, purify, svd_square, tensor, tensor_all, tensor_power, CMatrix, DensityOperator,
    Operator, StateVector, C64,
};
use crate::typical::{
    cond_typical_projector_states, counts_of, counts_typical, dense_side, ProductProjector, PrunedDistribution,
    SmoothedState, Smoother,
};
use crate::{Error, Result, Tolerances};

/// Largest codebook, in bits per side.
pub const MAX_CODEWORD_BITS: u32 = 12;

/// Largest number of codeword index pairs enumerated by the decoder and budget.
pub const MAX_INDEX_PAIRS: usize = 1 << 20;

const STREAM_CODEBOOK_U: u64 = 1;
const STREAM_CODEBOOK_V: u64 = 2;
const STREAM_BINS_U: u64 = 3;
const STREAM_BINS_V: u64 = 4;
const STREAM_CHERNOFF: u64 = 5;
const STREAM_TRIAL: u64 = 6;

/// Independent generator for one (purpose, index) pair under a master seed.
pub fn stream_rng(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 32) | (index & 0xffff_ffff));
    rng
}

/// Instance seed of trial `t`.
pub fn trial_seed(seed: u64, t: usize) -> u64 {
    stream_rng(seed, STREAM_TRIAL, t as u64).next_u64()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub n: usize,
    pub delta: f64,
    pub eta: f64,
    #[serde(default)]
    pub b: f64,
    /// Codebook rates, bits per copy.
    pub rt1: f64,
    pub rt2: f64,
    /// Communication rates, bits per copy.
    pub r1: f64,
    pub r2: f64,
}

fn rate_bits(n: usize, rate: f64) -> u32 {
    (n as f64 * rate - 1e-9).ceil().max(0.0) as u32
}

impl Params {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Param(msg));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta = {} outside (0, 1)", self.delta));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return bad(format!("eta = {} outside (0, 1)", self.eta));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return bad(format!("b = {} outside [0, 1]", self.b));
        }
        for (name, r) in [("rt1", self.rt1), ("rt2", self.rt2), ("r1", self.r1), ("r2", self.r2)] {
            if !(r >= 0.0 && r.is_finite()) {
                return bad(format!("{name} = {r} must be a nonnegative rate"));
            }
        }
        if self.r1 > self.rt1 + 1e-12 || self.r2 > self.rt2 + 1e-12 {
            return bad("communication rates must not exceed codebook rates".into());
        }
        let (c1, c2) = self.codeword_bits();
        if c1.max(c2) > MAX_CODEWORD_BITS {
            return Err(Error::CapExceeded(format!(
                "codebooks of 2^{} words exceed 2^{MAX_CODEWORD_BITS}",
                c1.max(c2)
            )));
        }
        Ok(())
    }

    /// `ceil(n * rt)` per side.
    pub fn codeword_bits(&self) -> (u32, u32) {
        (rate_bits(self.n, self.rt1), rate_bits(self.n, self.rt2))
    }

    /// `ceil(n * r)` per side, capped at the codeword bits.
    pub fn bin_bits(&self) -> (u32, u32) {
        let (c1, c2) = self.codeword_bits();
        (rate_bits(self.n, self.r1).min(c1), rate_bits(self.n, self.r2).min(c2))
    }

    /// `(rt1 - r1) + (rt2 - r2)` in realized bits per copy.
    pub fn binning_slack(&self) -> f64 {
        let (c1, c2) = self.codeword_bits();
        let (b1, b2) = self.bin_bits();
        ((c1 - b1) + (c2 - b2)) as f64 / self.n as f64
    }
}

/// Per-party pieces of the setting.
#[derive(Debug, Clone)]
pub struct SideModel {
    pub rho: DensityOperator,
    pub ensemble: Ensemble,
    pub smoother: Smoother,
    /// `(rho^{-1/2})^{(x) n}` on the support.
    pub pinv_root_n: Operator,
    pub root_effects: Vec<Operator>,
    /// Post-measurement states `sqrt(L) rho sqrt(L) / lambda`; zero for null outcomes.
    pub post_states: Vec<Operator>,
    /// Purification of `rho^{(x) n}`; the last factor is the reference.
    pub psi: StateVector,
    n: usize,
}

impl SideModel {
    fn new(rho: DensityOperator, povm: &Povm, n: usize, delta: f64) -> Result<Self> {
        let ensemble = canonical_ensemble(&rho, povm)?;
        let smoother = Smoother::new(&ensemble, rho.op(), n, delta)?;
        let pinv_root_n = tensor_power(&pinv_sqrt(rho.op())?, n);
        let root_effects: Vec<Operator> =
            povm.effects().iter().map(|e| mat_sqrt(&e.op)).collect::<std::result::Result<_, _>>()?;
        let post_states = root_effects
            .iter()
            .zip(&ensemble.entries)
            .map(|(r, e)| {
                if e.state.is_some() {
                    r.sandwich(rho.op()).scale(1.0 / e.weight).hermitian_part()
                } else {
                    Operator::zeros(rho.dims())
                }
            })
            .collect();
        let big = DensityOperator::new(tensor_power(rho.op(), n), &Tolerances::DEFAULT)?;
        let psi = purify(&big).into_vector();
        Ok(Self { rho, ensemble, smoother, pinv_root_n, root_effects, post_states, psi, n })
    }

    pub fn local_dim(&self) -> usize {
        self.rho.side()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.ensemble.weights()
    }

    /// `prod_i lambda_{u_i}`.
    pub fn seq_weight(&self, seq: &[usize]) -> f64 {
        seq.iter().map(|&s| self.ensemble.entries[s].weight).product()
    }

    pub fn distribution(&self) -> Result<PrunedDistribution> {
        self.smoother.typical_set().distribution()
    }

    /// `(x)_i sqrt(L_{u_i})`.
    pub fn root_effect_seq(&self, seq: &[usize]) -> Operator {
        tensor_all(seq.iter().map(|&s| &self.root_effects[s])).expect("nonempty sequence")
    }

    /// `rho^{-1/2} rho_tilde rho^{-1/2}`, the unweighted approximating operator.
    pub fn unit_operator(&self, smoothed: &SmoothedState) -> Operator {
        self.pinv_root_n.sandwich(&smoothed.rho_tilde).hermitian_part()
    }

    /// `sqrt(unit)` as the polar part of `G = rho^{-1/2} filter sqrt(rho_hat)`.
    ///
    /// `unit = G G^dagger`; going through the SVD of `G` avoids squaring the
    /// condition number of `rho^{-1/2}` before the root.
    pub fn sqrt_unit(&self, smoothed: &SmoothedState) -> Result<Operator> {
        let root_hat = self.smoother.sqrt_rho_hat(&smoothed.seq)?;
        let g = self.pinv_root_n.matrix() * smoothed.filter.matrix() * root_hat.matrix();
        let svd = svd_square(&g);
        let s = CMatrix::from_diagonal(&DVector::from_iterator(
            svd.sigma.len(),
            svd.sigma.iter().map(|&x| C64::new(x, 0.0)),
        ));
        Ok(Operator::new(&svd.u * s * svd.u.adjoint(), smoothed.rho_hat.dims().to_vec())?.hermitian_part())
    }

    /// Uhlmann alignment of the exact and approximate branches of a codeword.
    pub fn align(&self, smoothed: &SmoothedState) -> Result<Alignment> {
        let system: Vec<usize> = (0..self.n).collect();
        let seq = &smoothed.seq;
        let sqrt_approx = self.sqrt_unit(smoothed)?;
        uhlmann_align(&self.psi, &system, &self.root_effect_seq(seq), &sqrt_approx, self.seq_weight(seq), 1.0)
    }
}

/// Problem-dependent data shared by every instance.
#[derive(Debug, Clone)]
pub struct Setting {
    params: Params,
    dims: [usize; 3],
    a: SideModel,
    b: SideModel,
    /// `lambda^{AB}_{st}` at index `s * |T| + t`.
    joint: Vec<f64>,
    /// `Tr_AB((L_s (x) L_t (x) I) rho) / lambda^{AB}_{st}`; zero when the weight vanishes.
    c_states: Vec<Operator>,
    t_size: usize,
    i_uv: f64,
}

impl Setting {
    pub fn new(rho_abc: &DensityOperator, m_a: &Povm, m_b: &Povm, params: Params) -> Result<Self> {
        params.validate()?;
        check_tripartite(rho_abc, m_a, m_b)?;
        let d = rho_abc.dims();
        let dims = [d[0], d[1], d[2]];
        dense_side(dims[0].max(dims[1]), params.n)?;
        let tol = Tolerances::DEFAULT;
        let rho_a = DensityOperator::new(partial_trace(rho_abc.op(), &[0])?.hermitian_part(), &tol)?;
        let rho_b = DensityOperator::new(partial_trace(rho_abc.op(), &[1])?.hermitian_part(), &tol)?;
        let a = SideModel::new(rho_a, m_a, params.n, params.delta)?;
        let b = SideModel::new(rho_b, m_b, params.n, params.delta)?;

        let mut joint = Vec::with_capacity(m_a.len() * m_b.len());
        let mut c_states = Vec::with_capacity(m_a.len() * m_b.len());
        let id_c = Operator::identity(&[dims[2]]);
        for ra in &a.root_effects {
            for rb in &b.root_effects {
                let root = tensor(&tensor(ra, rb), &id_c);
                let block = partial_trace(&root.sandwich(rho_abc.op()), &[2])?.hermitian_part();
                let w = block.trace().re;
                if w > tol.rank {
                    c_states.push(block.scale(1.0 / w));
                    joint.push(w);
                } else {
                    c_states.push(Operator::zeros(&[dims[2]]));
                    joint.push(0.0);
                }
            }
        }
        let i_uv = auxiliary_states(rho_abc, m_a, m_b)?.sigma3.mutual_info(&["S"], &["T"])?;
        Ok(Self { params, dims, a, b, joint, c_states, t_size: m_b.len(), i_uv })
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn side(&self, side: Side) -> &SideModel {
        match side {
            Side::A => &self.a,
            Side::B => &self.b,
        }
    }

    /// `I(U;V)` of the raw outcome labels.
    pub fn i_uv(&self) -> f64 {
        self.i_uv
    }

    pub fn joint_pmf(&self) -> &[f64] {
        &self.joint
    }

    pub fn pair_sequence(&self, u: &[usize], v: &[usize]) -> Vec<usize> {
        u.iter().zip(v).map(|(&s, &t)| s * self.t_size + t).collect()
    }

    /// `prod_i lambda^{AB}_{u_i v_i}`.
    pub fn pair_weight(&self, u: &[usize], v: &[usize]) -> f64 {
        self.pair_sequence(u, v).iter().map(|&w| self.joint[w]).product()
    }

    pub fn jointly_typical(&self, u: &[usize], v: &[usize]) -> bool {
        let w = self.pair_sequence(u, v);
        counts_typical(&counts_of(&w, self.joint.len()), &self.joint, self.params.delta)
    }

    /// `lambda^{AB}_{uv} / (lambda^A_u lambda^B_v)`, the index-pair weight up to `gamma zeta`.
    pub fn pair_ratio(&self, u: &[usize], v: &[usize]) -> f64 {
        let den = self.a.seq_weight(u) * self.b.seq_weight(v);
        if den > 0.0 {
            self.pair_weight(u, v) / den
        } else {
            0.0
        }
    }
}

/// Uniform i.i.d. bins on sequences, nested across bit counts.
///
/// Each sequence gets a 64-bit uniform hash; its bin under `bits` bits is the
/// top `bits` bits, so lowering the rate only merges bins. Without
/// compression the codeword index itself is sent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinMap {
    pub bits: u32,
    pub codeword_bits: u32,
    alphabet: usize,
    key: [u8; 32],
}

impl BinMap {
    fn new(seed: u64, purpose: u64, bits: u32, codeword_bits: u32, alphabet: usize) -> Self {
        let mut key = [0u8; 32];
        stream_rng(seed, purpose, 0).fill_bytes(&mut key);
        Self { bits, codeword_bits, alphabet, key }
    }

    pub fn is_identity(&self) -> bool {
        self.bits >= self.codeword_bits
    }

    pub fn bins(&self) -> u64 {
        1u64 << self.bits
    }

    pub fn hash(&self, seq: &[usize]) -> u64 {
        let index = seq.iter().fold(0u64, |acc, &s| acc.wrapping_mul(self.alphabet as u64).wrapping_add(s as u64));
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(index);
        rng.next_u64()
    }

    pub fn bin_of_sequence(&self, seq: &[usize]) -> u64 {
        if self.bits == 0 {
            0
        } else {
            self.hash(seq) >> (64 - self.bits)
        }
    }

    pub fn bin_of_index(&self, l: usize, codebook: &[Vec<usize>]) -> u64 {
        if self.is_identity() {
            l as u64
        } else {
            self.bin_of_sequence(&codebook[l])
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolInstance {
    pub params: Params,
    pub seed: u64,
    pub codebook_u: Vec<Vec<usize>>,
    pub codebook_v: Vec<Vec<usize>>,
    pub bins_u: BinMap,
    pub bins_v: BinMap,
}

impl ProtocolInstance {
    pub fn codebook(&self, side: Side) -> &[Vec<usize>] {
        match side {
            Side::A => &self.codebook_u,
            Side::B => &self.codebook_v,
        }
    }

    pub fn bins(&self, side: Side) -> &BinMap {
        match side {
            Side::A => &self.bins_u,
            Side::B => &self.bins_v,
        }
    }

    /// Codewords with their multiplicities.
    pub fn distinct(&self, side: Side) -> BTreeMap<Vec<usize>, usize> {
        let mut out = BTreeMap::new();
        for c in self.codebook(side) {
            *out.entry(c.clone()).or_insert(0) += 1;
        }
        out
    }
}

/// Draws codebooks from the pruned distributions and fresh bin maps.
pub fn build_instance(setting: &Setting, seed: u64) -> Result<ProtocolInstance> {
    let p = *setting.params();
    let (c1, c2) = p.codeword_bits();
    let (b1, b2) = p.bin_bits();
    let draw = |side: Side, purpose: u64, bits: u32| -> Result<Vec<Vec<usize>>> {
        let dist = setting.side(side).distribution()?;
        let mut rng = stream_rng(seed, purpose, 0);
        Ok((0..1usize << bits).map(|_| dist.sample(&mut rng)).collect())
    };
    let codebook_u = draw(Side::A, STREAM_CODEBOOK_U, c1)?;
    let codebook_v = draw(Side::B, STREAM_CODEBOOK_V, c2)?;
    let bins_u = BinMap::new(seed, STREAM_BINS_U, b1, c1, setting.a.ensemble.len());
    let bins_v = BinMap::new(seed, STREAM_BINS_V, b2, c2, setting.b.ensemble.len());
    Ok(ProtocolInstance { params: p, seed, codebook_u, codebook_v, bins_u, bins_v })
}

/// Builds the setting and one instance in a single call.
pub fn build_instance_from(
    rho_abc: &DensityOperator,
    m_a: &Povm,
    m_b: &Povm,
    params: Params,
    seed: u64,
) -> Result<(Setting, ProtocolInstance)> {
    let setting = Setting::new(rho_abc, m_a, m_b, params)?;
    let inst = build_instance(&setting, seed)?;
    Ok((setting, inst))
}

/// Approximating operator of one distinct codeword.
#[derive(Debug, Clone)]
pub struct CodewordOperator {
    pub count: usize,
    /// `gamma_{u^n}`: per-index weight times multiplicity.
    pub gamma: f64,
    /// `rho^{-1/2} rho_tilde rho^{-1/2}`.
    pub unit: Operator,
    /// `A_{u^n} = gamma * unit`.
    pub effect: Operator,
    pub smoothed: SmoothedState,
}

#[derive(Debug, Clone)]
pub struct SideOperators {
    /// `(1 - eps) / (1 + eta) / L`, the weight of one codebook index.
    pub index_weight: f64,
    pub codewords: BTreeMap<Vec<usize>, CodewordOperator>,
    pub sum: Operator,
    pub sum_max_eigenvalue: f64,
    /// `sum A <= I` within the PSD tolerance.
    pub sub_povm: bool,
    /// Effects with an eigenvalue above `1 + tau`.
    pub norm_violations: usize,
}

impl SideOperators {
    pub fn gamma_total(&self) -> f64 {
        self.codewords.values().map(|c| c.gamma).sum()
    }

    /// The sub-POVM `{A_{u^n}}` labeled by [`seq_label`].
    pub fn as_povm(&self) -> Result<Povm> {
        Povm::unchecked(self.codewords.iter().map(|(s, c)| (seq_label(s), c.effect.clone())).collect(), true)
    }
}

#[derive(Debug, Clone)]
pub struct ApproxOperators {
    pub a: SideOperators,
    pub b: SideOperators,
}

impl ApproxOperators {
    pub fn side(&self, side: Side) -> &SideOperators {
        match side {
            Side::A => &self.a,
            Side::B => &self.b,
        }
    }

    pub fn flags(&self) -> (bool, bool) {
        (self.a.sub_povm, self.b.sub_povm)
    }
}

/// Label of a sequence, its symbols joined by commas.
pub fn seq_label(seq: &[usize]) -> String {
    seq.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")
}

/// `M^{(x) n}` with effects labeled by [`seq_label`].
pub fn product_povm(m: &Povm, n: usize) -> Result<Povm> {
    let k = m.len();
    let total = k.checked_pow(n as u32).ok_or_else(|| Error::CapExceeded("product POVM too large".into()))?;
    let mut effects = Vec::with_capacity(total);
    let mut seq = vec![0; n];
    for mut idx in 0..total {
        for p in (0..n).rev() {
            seq[p] = idx % k;
            idx /= k;
        }
        let op = tensor_all(seq.iter().map(|&s| &m.effects()[s].op)).expect("n >= 1");
        effects.push((seq_label(&seq), op));
    }
    Povm::new(effects, false, &Tolerances::DEFAULT)
}

fn side_operators(setting: &Setting, inst: &ProtocolInstance, side: Side) -> Result<SideOperators> {
    let model = setting.side(side);
    let tol = Tolerances::DEFAULT;
    let codebook = inst.codebook(side);
    let mass = model.smoother.typical_set().mass();
    let index_weight = mass / (1.0 + setting.params.eta) / codebook.len() as f64;
    let mut codewords = BTreeMap::new();
    let side_dims = vec![model.local_dim(); setting.params.n];
    let mut sum = Operator::zeros(&side_dims);
    let mut norm_violations = 0;
    for (seq, count) in inst.distinct(side) {
        let smoothed = model.smoother.smooth(&seq)?;
        let unit = model.unit_operator(&smoothed);
        let gamma = index_weight * count as f64;
        let effect = unit.scale(gamma);
        if effect.max_eigenvalue() > 1.0 + tol.psd {
            norm_violations += 1;
        }
        sum = &sum + &effect;
        codewords.insert(seq, CodewordOperator { count, gamma, unit, effect, smoothed });
    }
    let sum = sum.hermitian_part();
    let sum_max_eigenvalue = sum.max_eigenvalue();
    Ok(SideOperators {
        index_weight,
        codewords,
        sum,
        sum_max_eigenvalue,
        sub_povm: sum_max_eigenvalue <= 1.0 + tol.psd,
        norm_violations,
    })
}

/// `A_{u^n}`, `B_{v^n}` with their weights and sub-POVM flags.
pub fn build_operators(setting: &Setting, inst: &ProtocolInstance) -> Result<ApproxOperators> {
    Ok(ApproxOperators { a: side_operators(setting, inst, Side::A)?, b: side_operators(setting, inst, Side::B)? })
}

/// Wilson score interval at 95%.
pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let n = trials as f64;
    let p = successes as f64 / n;
    let den = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / den;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / den;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// i.i.d. random operators in `[0, I]` with a known mean.
pub trait OperatorFamily: Sync {
    fn mean(&self) -> &Operator;
    /// Adds one sample to `acc`.
    fn sample_into(&self, rng: &mut ChaCha8Rng, acc: &mut CMatrix);
}

/// Diagonal operators with independent Bernoulli entries.
#[derive(Debug, Clone)]
pub struct DiagonalBernoulli {
    probs: Vec<f64>,
    mean: Operator,
}

impl DiagonalBernoulli {
    pub fn new(probs: &[f64]) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Param(format!("Bernoulli parameters {probs:?}")));
        }
        Ok(Self { probs: probs.to_vec(), mean: Operator::diag(probs) })
    }

    /// Exact probability of `(1-eta)A <= mean <= (1+eta)A` from binomial laws.
    pub fn exact_success(&self, samples: usize, eta: f64) -> f64 {
        let lf: Vec<f64> = (0..=samples)
            .scan(0.0, |acc, k| {
                if k > 0 {
                    *acc += (k as f64).ln();
                }
                Some(*acc)
            })
            .collect();
        self.probs
            .iter()
            .map(|&p| {
                let lo = (1.0 - eta) * p * samples as f64;
                let hi = (1.0 + eta) * p * samples as f64;
                (0..=samples)
                    .filter(|&k| (k as f64) >= lo - 1e-9 && (k as f64) <= hi + 1e-9)
                    .map(|k| {
                        let ln = lf[samples] - lf[k] - lf[samples - k];

                        if p == 0.0 {
                            if k == 0 {
                                1.0
                            } else {
                                0.0
                            }
                        } else if p == 1.0 {
                            if k == samples {
                                1.0
                            } else {
                                0.0
                            }
                        } else {
                            (ln + k as f64 * p.ln() + (samples - k) as f64 * (1.0 - p).ln()).exp()
                        }
                    })
                    .sum::<f64>()
            })
            .product()
    }
}

impl OperatorFamily for DiagonalBernoulli {
    fn mean(&self) -> &Operator {
        &self.mean
    }

    fn sample_into(&self, rng: &mut ChaCha8Rng, acc: &mut CMatrix) {
        for (i, &p) in self.probs.iter().enumerate() {
            if rng.random::<f64>() < p {
                acc[(i, i)] += C64::new(1.0, 0.0);
            }
        }
    }
}

/// `rho^{-1/2} rho_tilde_U rho^{-1/2} / kappa` with `U` drawn from the pruned law.
///
/// `kappa` is the largest operator norm over typical sequences, so samples lie in `[0, I]`.
#[derive(Debug, Clone)]
pub struct ProtocolFamily {
    ops: Vec<CMatrix>,
    dist: WeightedIndex<f64>,
    mean: Operator,
    pub kappa: f64,
}

impl ProtocolFamily {
    pub fn new(setting: &Setting, side: Side) -> Result<Self> {
        let model = setting.side(side);
        let set = model.smoother.typical_set();
        let seqs = set.sequences().ok_or_else(|| Error::CapExceeded("typical set too large to enumerate".into()))?;
        let mut units = Vec::with_capacity(seqs.len());
        let mut probs = Vec::with_capacity(seqs.len());
        for s in &seqs {
            units.push(model.unit_operator(&model.smoother.smooth(s)?));
            probs.push(set.pruned_prob(s));
        }
        let kappa = units.iter().map(|u| u.max_eigenvalue()).fold(0.0, f64::max);
        if kappa <= 0.0 {
            return Err(Error::Invariant("all smoothed operators vanish".into()));
        }
        let dims = units[0].dims().to_vec();
        let mut mean = CMatrix::zeros(units[0].side(), units[0].side());
        let ops: Vec<CMatrix> = units.iter().map(|u| u.matrix() / C64::new(kappa, 0.0)).collect();
        for (m, &p) in ops.iter().zip(&probs) {
            mean += m * C64::new(p, 0.0);
        }
        let dist = WeightedIndex::new(&probs).map_err(|e| Error::Param(format!("pruned weights: {e}")))?;
        Ok(Self { ops, dist, mean: Operator::new(mean, dims)?.hermitian_part(), kappa })
    }
}

impl OperatorFamily for ProtocolFamily {
    fn mean(&self) -> &Operator {
        &self.mean
    }

    fn sample_into(&self, rng: &mut ChaCha8Rng, acc: &mut CMatrix) {
        *acc += &self.ops[self.dist.sample(rng)];
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChernoffPoint {
    pub samples: usize,
    pub eta: f64,
    /// Smallest nonzero eigenvalue of the mean.
    pub a: f64,
    pub dim: usize,
    /// `1 - 2 dim exp(-N eta^2 a / (4 ln 2))`.
    pub bound: f64,
    pub successes: usize,
    pub trials: usize,
    pub empirical: f64,
    /// Bound is at most zero, so the point says nothing.
    pub vacuous: bool,
    /// `a > 0` and `eta < min(1/2, (1-a)/a)`.
    pub hypothesis: bool,
}

pub fn chernoff_bound(dim: usize, samples: usize, eta: f64, a: f64) -> f64 {
    1.0 - 2.0 * dim as f64 * (-(samples as f64) * eta * eta * a / (4.0 * std::f64::consts::LN_2)).exp()
}

/// Fraction of trials where `(1-eta)A <= mean of N samples <= (1+eta)A`.
///
/// The lower hypothesis is checked on the support of `A` (`Pi A Pi >= a Pi`).
pub fn chernoff_experiment(
    family: &dyn OperatorFamily,
    samples: usize,
    eta: f64,
    trials: usize,
    seed: u64,
) -> Result<ChernoffPoint> {
    if samples == 0 {
        return Err(Error::Param("need at least one sample".into()));
    }
    let tol = Tolerances::DEFAULT;
    let mean = family.mean();
    let dim = mean.side();
    let a = mean.eigenvalues().into_iter().filter(|&v| v > tol.rank).fold(f64::INFINITY, f64::min);
    let a = if a.is_finite() { a } else { 0.0 };
    let hypothesis = a > 0.0 && eta < 0.5_f64.min((1.0 - a) / a);
    let bound = chernoff_bound(dim, samples, eta, a);
    let lo = mean.scale(1.0 - eta);
    let hi = mean.scale(1.0 + eta);
    let successes = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, STREAM_CHERNOFF, t as u64);
            let mut acc = CMatrix::zeros(dim, dim);
            for _ in 0..samples {
                family.sample_into(&mut rng, &mut acc);
            }
            let avg = Operator::new(acc / C64::new(samples as f64, 0.0), mean.dims().to_vec())
                .expect("sample dims")
                .hermitian_part();
            let floor = -1e-10;
            (&avg - &lo).min_eigenvalue() >= floor && (&hi - &avg).min_eigenvalue() >= floor
        })
        .filter(|&ok| ok)
        .count();
    Ok(ChernoffPoint {
        samples,
        eta,
        a,
        dim,
        bound,
        successes,
        trials,
        empirical: successes as f64 / trials.max(1) as f64,
        vacuous: bound <= 0.0,
        hypothesis,
    })
}

/// Every `(N, eta)` combination, same seed per point.
pub fn chernoff_grid(
    family: &dyn OperatorFamily,
    samples: &[usize],
    etas: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<ChernoffPoint>> {
    let mut out = Vec::new();
    for &eta in etas {
        for &n in samples {
            out.push(chernoff_experiment(family, n, eta, trials, seed)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct SubPovmReport {
    pub trials: usize,
    pub successes: usize,
    pub rate: f64,
    pub wilson: (f64, f64),
    pub flags: Vec<(bool, bool)>,
}

/// Empirical `P[sP-1 and sP-2]` over independent instances.
pub fn sub_povm_probability(setting: &Setting, seed: u64, trials: usize) -> Result<SubPovmReport> {
    let flags: Vec<(bool, bool)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let inst = build_instance(setting, trial_seed(seed, t))?;
            Ok(build_operators(setting, &inst)?.flags())
        })
        .collect::<Result<_>>()?;
    let successes = flags.iter().filter(|(a, b)| *a && *b).count();
    Ok(SubPovmReport {
        trials,
        successes,
        rate: successes as f64 / trials.max(1) as f64,
        wilson: wilson_interval(successes, trials),
        flags,
    })
}

#[derive(Debug, Clone)]
pub struct Alignment {
    /// Unitary on the system factors.
    pub unitary: Operator,
    /// `|<exact|(U (x) I)|approx>|^2`.
    pub fidelity: f64,
    /// Zero-weight branch; identity returned.
    pub degenerate: bool,
}

/// Aligns two purifications given as amplitude matrices (rows: system, columns: reference).
///
/// With `K = M_approx M_exact^dagger = W S V^dagger`, the unitary `V W^dagger`
/// maximizes the overlap, which then equals `(Tr S)^2`.
pub fn align_purifications(m_exact: &CMatrix, m_approx: &CMatrix, system_dims: &[usize]) -> Result<Alignment> {
    if m_exact.shape() != m_approx.shape() {
        return Err(Error::Param(format!("amplitude shapes {:?} vs {:?}", m_exact.shape(), m_approx.shape())));
    }
    let d = m_exact.nrows();
    let k = m_approx * m_exact.adjoint();
    if k.norm() <= Tolerances::DEFAULT.rank {
        return Ok(Alignment { unitary: Operator::identity(system_dims), fidelity: 0.0, degenerate: true });
    }
    let svd = svd_square(&k);
    let u: CMatrix = &svd.v * svd.u.adjoint();
    let overlap = (m_exact.adjoint() * &u * m_approx).trace();
    debug_assert_eq!(u.nrows(), d);
    Ok(Alignment { unitary: Operator::new(u, system_dims.to_vec())?, fidelity: overlap.norm_sqr(), degenerate: false })
}

/// Uhlmann unitary between `(sqrt_exact (x) I)|psi>/sqrt(w_exact)` and
/// `(sqrt_approx (x) I)|psi>/sqrt(w_approx)`, acting on the `system` factors.
pub fn uhlmann_align(
    psi: &StateVector,
    system: &[usize],
    sqrt_exact: &Operator,
    sqrt_approx: &Operator,
    w_exact: f64,
    w_approx: f64,
) -> Result<Alignment> {
    let system_dims: Vec<usize> = system.iter().map(|&f| psi.dims()[f]).collect();
    let tol = Tolerances::DEFAULT;
    if w_exact <= tol.rank || w_approx <= tol.rank {
        return Ok(Alignment { unitary: Operator::identity(&system_dims), fidelity: 0.0, degenerate: true });
    }
    let m = psi.as_matrix(system)?;
    let m_exact = sqrt_exact.matrix() * &m / C64::new(w_exact.sqrt(), 0.0);
    let m_approx = sqrt_approx.matrix() * &m / C64::new(w_approx.sqrt(), 0.0);
    align_purifications(&m_exact, &m_approx, &system_dims)
}

/// `V = sum_l sqrt(A_l) (x) |l>`, rows ordered system-major.
#[derive(Debug, Clone)]
pub struct CoherentMeasurement {
    pub matrix: CMatrix,
    pub input_dim: usize,
    pub outcomes: usize,
    /// Sub-POVM flag was false and the trivial POVM `{I}` was used.
    pub fallback: bool,
}

impl CoherentMeasurement {
    /// `V^dagger V`.
    pub fn gram(&self) -> CMatrix {
        self.matrix.adjoint() * &self.matrix
    }

    /// `I - V^dagger V`.
    pub fn defect(&self) -> CMatrix {
        CMatrix::identity(self.input_dim, self.input_dim) - self.gram()
    }

    /// Squared norm of branch `l` after applying `V` to the system part of `psi`.
    pub fn branch_weight(&self, psi: &StateVector, system: &[usize], l: usize) -> Result<f64> {
        let m = psi.as_matrix(system)?;
        let block = CMatrix::from_fn(self.input_dim, self.input_dim, |i, j| self.matrix[(i * self.outcomes + l, j)]);
        Ok((block * m).norm_squared())
    }
}

/// Isometry from explicit effects.
pub fn isometry_from_effects(effects: &[Operator]) -> Result<CoherentMeasurement> {
    let d = effects.first().map(Operator::side).ok_or_else(|| Error::Param("no effects".into()))?;
    let outcomes = effects.len();
    let mut matrix = CMatrix::zeros(d * outcomes, d);
    for (l, e) in effects.iter().enumerate() {
        let r = mat_sqrt(e)?;
        for i in 0..d {
            for j in 0..d {
                matrix[(i * outcomes + l, j)] = r.matrix()[(i, j)];
            }
        }
    }
    Ok(CoherentMeasurement { matrix, input_dim: d, outcomes, fallback: false })
}

/// Coherent version of one side's measurement, one branch per codebook index.
///
/// Index `l` carries `A_{U(l)} / count(U(l))`, so duplicates are not counted twice
/// and `V^dagger V = sum_u A_u`.
pub fn coherent_measurement(ops: &ApproxOperators, inst: &ProtocolInstance, side: Side) -> Result<CoherentMeasurement> {
    let s = ops.side(side);
    if !s.sub_povm {
        let d = s.sum.side();
        return Ok(CoherentMeasurement { matrix: CMatrix::identity(d, d), input_dim: d, outcomes: 1, fallback: true });
    }
    let effects: Vec<Operator> = inst
        .codebook(side)
        .iter()
        .map(|u| {
            let c = &s.codewords[u];
            c.unit.scale(s.index_weight)
        })
        .collect();
    isometry_from_effects(&effects)
}

#[derive(Debug, Clone)]
pub struct PurityProjector {
    pub seq: Vec<usize>,
    pub projector: ProductProjector,
    pub rank: usize,
    /// `log2 d - log2(rank) / n`.
    pub rate: f64,
    /// `Tr(Pi (x)_i states[seq_i])`.
    pub capture: f64,
}

impl PurityProjector {
    /// `n log2 d - log2 rank`: pure qubits extracted on this branch.
    pub fn log_kappa(&self) -> f64 {
        let n = self.projector.n() as f64;
        n * (self.projector.local_dim() as f64).log2() - (self.rank as f64).log2()
    }
}

/// Conditionally typical projector of a product branch state with its purity rate.
pub fn purity_projector(states: &[Operator], seq: &[usize], delta: f64) -> Result<PurityProjector> {
    let projector = cond_typical_projector_states(states, seq, delta)?;
    let rank = projector.rank();
    if rank == 0 {
        return Err(Error::Invariant(format!("purity projector of rank 0 at {seq:?}")));
    }
    let factors: Vec<Operator> = seq.iter().map(|&s| states[s].clone()).collect();
    let capture = projector.capture(&factors)?;
    let n = seq.len() as f64;
    let rate = (projector.local_dim() as f64).log2() - (rank as f64).log2() / n;
    Ok(PurityProjector { seq: seq.to_vec(), projector, rank, rate, capture })
}

pub fn purity_projectors(states: &[Operator], seqs: &[Vec<usize>], delta: f64) -> Result<Vec<PurityProjector>> {
    seqs.iter().map(|s| purity_projector(states, s, delta)).collect()
}

/// Purity projectors of one instance, keyed by distinct codewords.
#[derive(Debug, Clone)]
pub struct PurityFamily {
    pub a: BTreeMap<Vec<usize>, PurityProjector>,
    pub b: BTreeMap<Vec<usize>, PurityProjector>,
    /// Pairs with positive joint weight only.
    pub c: BTreeMap<(Vec<usize>, Vec<usize>), PurityProjector>,
}

impl PurityFamily {
    /// Worst-case `log2 kappa` per party.
    pub fn log_kappa(&self) -> [f64; 3] {
        let worst = |it: &mut dyn Iterator<Item = &PurityProjector>| {
            it.map(PurityProjector::log_kappa).fold(f64::INFINITY, f64::min)
        };
        let fix = |v: f64| if v.is_finite() { v.max(0.0) } else { 0.0 };
        [fix(worst(&mut self.a.values())), fix(worst(&mut self.b.values())), fix(worst(&mut self.c.values()))]
    }
}

pub fn purity_family(setting: &Setting, inst: &ProtocolInstance) -> Result<PurityFamily> {
    let delta = setting.params.delta;
    let side = |s: Side| -> Result<BTreeMap<Vec<usize>, PurityProjector>> {
        let states = &setting.side(s).post_states;
        inst.distinct(s).into_keys().map(|u| Ok((u.clone(), purity_projector(states, &u, delta)?))).collect()
    };
    let a = side(Side::A)?;
    let b = side(Side::B)?;
    let mut c = BTreeMap::new();
    for u in a.keys() {
        for v in b.keys() {
            if setting.pair_weight(u, v) <= 0.0 {
                continue;
            }
            let w = setting.pair_sequence(u, v);
            c.insert((u.clone(), v.clone()), purity_projector(&setting.c_states, &w, delta)?);
        }
    }
    Ok(PurityFamily { a, b, c })
}

/// Joint-typicality decoder over bin pairs.
#[derive(Debug, Clone)]
pub struct Decoder {
    bin_u: Vec<u64>,
    bin_v: Vec<u64>,
    typical: Vec<bool>,
    buckets: HashMap<(u64, u64), Vec<(usize, usize)>>,
    l2: usize,
}

impl Decoder {
    pub fn new(setting: &Setting, inst: &ProtocolInstance) -> Result<Self> {
        let (l1, l2) = (inst.codebook_u.len(), inst.codebook_v.len());
        if l1.saturating_mul(l2) > MAX_INDEX_PAIRS {
            return Err(Error::CapExceeded(format!("{l1} x {l2} index pairs")));
        }
        let bin_u: Vec<u64> = (0..l1).map(|l| inst.bins_u.bin_of_index(l, &inst.codebook_u)).collect();
        let bin_v: Vec<u64> = (0..l2).map(|k| inst.bins_v.bin_of_index(k, &inst.codebook_v)).collect();
        let mut cache: HashMap<(&[usize], &[usize]), bool> = HashMap::new();
        let mut typical = vec![false; l1 * l2];
        let mut buckets: HashMap<(u64, u64), Vec<(usize, usize)>> = HashMap::new();
        for l in 0..l1 {
            for k in 0..l2 {
                let (u, v) = (inst.codebook_u[l].as_slice(), inst.codebook_v[k].as_slice());
                let jt = *cache.entry((u, v)).or_insert_with(|| setting.jointly_typical(u, v));
                typical[l * l2 + k] = jt;
                if jt {
                    buckets.entry((bin_u[l], bin_v[k])).or_default().push((l, k));
                }
            }
        }
        Ok(Self { bin_u, bin_v, typical, buckets, l2 })
    }

    pub fn bins_of(&self, l: usize, k: usize) -> (u64, u64) {
        (self.bin_u[l], self.bin_v[k])
    }

    /// `F(i, j)`: the unique jointly typical pair in the bins, if any.
    pub fn decode(&self, i: u64, j: u64) -> Option<(usize, usize)> {
        match self.buckets.get(&(i, j)).map(Vec::as_slice) {
            Some([only]) => Some(*only),
            _ => None,
        }
    }

    /// Same as [`Decoder::decode`] by scanning every index pair.
    pub fn decode_brute_force(&self, i: u64, j: u64) -> Option<(usize, usize)> {
        let mut found = None;
        for l in 0..self.bin_u.len() {
            for k in 0..self.l2 {
                if self.typical[l * self.l2 + k] && self.bin_u[l] == i && self.bin_v[k] == j {
                    if found.is_some() {
                        return None;
                    }
                    found = Some((l, k));
                }
            }
        }
        found
    }

    /// `d(l, k) = F(bins of (l, k))`.
    pub fn d(&self, l: usize, k: usize) -> Option<(usize, usize)> {
        let (i, j) = self.bins_of(l, k);
        self.decode(i, j)
    }

    /// Another jointly typical pair shares the bins of `(l, k)`.
    pub fn collision(&self, l: usize, k: usize) -> bool {
        self.buckets.get(&self.bins_of(l, k)).is_some_and(|b| b.iter().any(|&p| p != (l, k)))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BinningReport {
    pub trials: usize,
    pub collision_rate: f64,
    pub stderr: f64,
    pub interval: (f64, f64),
    /// `2^{n (slack - I(U;V))}`.
    pub analytic_rhs: f64,
    pub slack: f64,
    pub i_uv: f64,
    pub no_binning: bool,
    pub per_trial: Vec<f64>,
}

/// Collision probability of one instance, the true pair drawn with weight
/// `gamma zeta lambda^{AB} / (lambda^A lambda^B)`.
pub fn collision_probability(setting: &Setting, inst: &ProtocolInstance) -> Result<f64> {
    if inst.bins_u.is_identity() && inst.bins_v.is_identity() {
        return Ok(0.0);
    }
    let dec = Decoder::new(setting, inst)?;
    let mut total = 0.0;
    let mut hit = 0.0;
    for (l, u) in inst.codebook_u.iter().enumerate() {
        for (k, v) in inst.codebook_v.iter().enumerate() {
            let w = setting.pair_ratio(u, v);
            total += w;
            if dec.collision(l, k) {
                hit += w;
            }
        }
    }
    Ok(if total > 0.0 { hit / total } else { 0.0 })
}

pub fn binning_experiment(setting: &Setting, seed: u64, trials: usize) -> Result<BinningReport> {
    let per_trial: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| collision_probability(setting, &build_instance(setting, trial_seed(seed, t))?))
        .collect::<Result<_>>()?;
    let n = trials.max(1) as f64;
    let mean = per_trial.iter().sum::<f64>() / n;
    let var = per_trial.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let stderr = (var / n).sqrt();
    let p = setting.params();
    let slack = p.binning_slack();
    let (c1, c2) = p.codeword_bits();
    let (b1, b2) = p.bin_bits();
    Ok(BinningReport {
        trials,
        collision_rate: mean,
        stderr,
        interval: ((mean - 1.96 * stderr).max(0.0), (mean + 1.96 * stderr).min(1.0)),
        analytic_rhs: 2f64.powf(p.n as f64 * (slack - setting.i_uv())),
        slack,
        i_uv: setting.i_uv(),
        no_binning: b1 >= c1 && b2 >= c2,
        per_trial,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ErrorBudget {
    pub step1: f64,
    pub step2: f64,
    pub step3: f64,
    pub step4: f64,
    pub step5: f64,
    pub binning: f64,
    pub subpovm_failure: f64,
    pub total: f64,
}

/// `2 sum_l w_l sqrt(1 - F(l))` over codebook indices of one side.
pub fn alignment_term(setting: &Setting, ops: &SideOperators, side: Side) -> Result<f64> {
    let model = setting.side(side);
    let mut total = 0.0;
    for c in ops.codewords.values() {
        let f = model.align(&c.smoothed)?.fidelity;
        total += c.gamma * (1.0 - f.min(1.0)).max(0.0).sqrt();
    }
    Ok(2.0 * total)
}

fn capture_term(weight: f64, capture: f64) -> f64 {
    weight * (1.0 - capture.min(1.0).powi(2)).max(0.0).sqrt()
}

/// The step-wise bound on `G` for one instance.
pub fn error_budget(setting: &Setting, inst: &ProtocolInstance) -> Result<ErrorBudget> {
    let ops = build_operators(setting, inst)?;
    let family = purity_family(setting, inst)?;
    error_budget_with(setting, inst, &ops, &family)
}

pub fn error_budget_with(
    setting: &Setting,
    inst: &ProtocolInstance,
    ops: &ApproxOperators,
    family: &PurityFamily,
) -> Result<ErrorBudget> {
    let step1 = alignment_term(setting, &ops.a, Side::A)?;
    let step2 = alignment_term(setting, &ops.b, Side::B)?;
    let step3 = 2.0 * ops.a.codewords.iter().map(|(u, c)| capture_term(c.gamma, family.a[u].capture)).sum::<f64>();
    let step4 = 2.0 * ops.b.codewords.iter().map(|(v, c)| capture_term(c.gamma, family.b[v].capture)).sum::<f64>();
    let mut step5 = 0.0;
    for (u, ca) in &ops.a.codewords {
        for (v, cb) in &ops.b.codewords {
            if let Some(p) = family.c.get(&(u.clone(), v.clone())) {
                step5 += capture_term(ca.gamma * cb.gamma * setting.pair_ratio(u, v), p.capture);
            }
        }
    }
    step5 *= 2.0;

    let binning = if inst.bins_u.is_identity() && inst.bins_v.is_identity() {
        0.0
    } else {
        let dec = Decoder::new(setting, inst)?;
        let w = ops.a.index_weight * ops.b.index_weight;
        let mut failures = 0usize;
        for l in 0..inst.codebook_u.len() {
            for k in 0..inst.codebook_v.len() {
                if dec.d(l, k) != Some((l, k)) {
                    failures += 1;
                }
            }
        }
        2.0 * w * failures as f64
    };
    let (f1, f2) = ops.flags();
    let subpovm_failure = if f1 && f2 { 0.0 } else { 1.0 };
    let total = step1 + step2 + step3 + step4 + step5 + binning + subpovm_failure;
    Ok(ErrorBudget { step1, step2, step3, step4, step5, binning, subpovm_failure, total })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CatalystKind {
    Borrow,
    Return,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CatalystEntry {
    pub party: String,
    pub kind: CatalystKind,
    /// log2 of the ancilla dimension.
    pub log_dim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartyLedger {
    pub party: String,
    pub log_kappa: f64,
    pub log_iota: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PurityLedger {
    pub n: usize,
    pub parties: Vec<PartyLedger>,
    pub catalyst: Vec<CatalystEntry>,
    /// `(1/n) sum_i (log kappa_i - log iota_i)`.
    pub net_rate: f64,
    /// `sum_i log2 d_i`, the per-copy ceiling.
    pub log_dims: f64,
}

impl PurityLedger {
    /// Every borrow has a return of the same size.
    pub fn verify(&self) -> Result<()> {
        for p in &self.parties {
            let sum = |kind| -> f64 {
                self.catalyst.iter().filter(|c| c.party == p.party && c.kind == kind).map(|c| c.log_dim).sum()
            };
            let (b, r) = (sum(CatalystKind::Borrow), sum(CatalystKind::Return));
            if (b - r).abs() > 1e-12 {
                return Err(Error::Invariant(format!("party {} borrowed {b} catalyst bits, returned {r}", p.party)));
            }
        }
        if self.net_rate > self.log_dims + 1e-9 {
            return Err(Error::Invariant(format!("net rate {} above {}", self.net_rate, self.log_dims)));
        }
        Ok(())
    }
}

/// Purity accounting: `log_kappa` per party, catalyst from the codeword
/// registers at A and B and `n R_tb` bits at C.
pub fn ledger(inst: &ProtocolInstance, log_kappa: [f64; 3], dims: [usize; 3]) -> Result<PurityLedger> {
    let p = &inst.params;
    let (c1, c2) = p.codeword_bits();
    let (b1, b2) = p.bin_bits();
    let borrow = [c1 as f64, c2 as f64, ((c1 - b1) + (c2 - b2)) as f64];
    let names = ["A", "B", "C"];
    let mut catalyst = Vec::new();
    let mut parties = Vec::new();
    for i in 0..3 {
        if borrow[i] > 0.0 {
            for kind in [CatalystKind::Borrow, CatalystKind::Return] {
                catalyst.push(CatalystEntry { party: names[i].into(), kind, log_dim: borrow[i] });
            }
        }
        parties.push(PartyLedger { party: names[i].into(), log_kappa: log_kappa[i], log_iota: borrow[i] });
    }
    let net_rate = parties.iter().map(|q| q.log_kappa - q.log_iota).sum::<f64>() / p.n as f64;
    let log_dims = dims.iter().map(|&d| (d as f64).log2()).sum();
    let out = PurityLedger { n: p.n, parties, catalyst, net_rate, log_dims };
    out.verify()?;
    Ok(out)
}

/// Ideal classicalization: keeps the diagonal, drops coherences.
pub fn dephase(op: &Operator) -> Operator {
    let d = op.side();
    let m = DMatrix::from_fn(d, d, |i, j| if i == j { op.matrix()[(i, i)] } else { C64::new(0.0, 0.0) });
    Operator::new(m, op.dims().to_vec()).expect("same dims")
}

/// Everything computed for one trial of `--budget`.
#[derive(Debug, Clone, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub sub_povm: (bool, bool),
    pub budget: ErrorBudget,
    pub ledger: PurityLedger,
}

pub fn run_trial(setting: &Setting, trial: usize, seed: u64) -> Result<TrialRecord> {
    let inst = build_instance(setting, seed)?;
    let ops = build_operators(setting, &inst)?;
    let family = purity_family(setting, &inst)?;
    let budget = error_budget_with(setting, &inst, &ops, &family)?;
    let ledger = ledger(&inst, family.log_kappa(), setting.dims())?;
    Ok(TrialRecord { trial, seed, sub_povm: ops.flags(), budget, ledger })
}

/// Budget and ledger over independent instances, in trial order.
pub fn budget_trials(setting: &Setting, seed: u64, trials: usize) -> Result<Vec<TrialRecord>> {
    (0..trials).into_par_iter().map(|t| run_trial(setting, t, trial_seed(seed, t))).collect()
}

/// Median of a nonempty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}
