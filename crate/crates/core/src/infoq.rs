//! Classical-quantum states, the auxiliary states of the rate region, and
//! their entropies.
//!
//! Classical labels stay as weighted tables. The entropy of a selection is
//! computed blockwise: grouping entries by the selected label values gives
//! blocks `O_g = sum_e w_e Tr_rest(cond_e)` and the state
//! `sum_g |g><g| (x) O_g` has entropy `sum_g -Tr O_g log O_g`, so no label is
//! ever embedded as a matrix.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::povm::{measure_named, Povm};
use crate::qmat::{
    entropy_of_psd, mat_sqrt, partial_trace, purify, shannon_bits, tensor, DensityOperator, Operator, Tolerances,
};
use crate::{Error, Result};

/// One row of a cq state: label values, weight, and the normalized conditional operator.
///
/// `cond` is `None` for zero-weight rows and for purely classical states.
#[derive(Debug, Clone, PartialEq)]
pub struct CqEntry {
    pub labels: Vec<usize>,
    pub weight: f64,
    pub cond: Option<Operator>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CqState {
    label_names: Vec<String>,
    alphabets: Vec<usize>,
    factor_names: Vec<String>,
    quantum_dims: Vec<usize>,
    entries: Vec<CqEntry>,
}

fn dup_check(names: &[String]) -> Result<()> {
    for (i, a) in names.iter().enumerate() {
        if names[..i].contains(a) {
            return Err(Error::Selection(format!("duplicate name {a}")));
        }
    }
    Ok(())
}

impl CqState {
    pub fn new(
        label_names: Vec<String>,
        alphabets: Vec<usize>,
        factor_names: Vec<String>,
        quantum_dims: Vec<usize>,
        entries: Vec<CqEntry>,
        tol: &Tolerances,
    ) -> Result<Self> {
        if label_names.len() != alphabets.len() || factor_names.len() != quantum_dims.len() {
            return Err(Error::Selection("name and size lists differ in length".into()));
        }
        let all: Vec<String> = label_names.iter().chain(factor_names.iter()).cloned().collect();
        dup_check(&all)?;
        let mut total = 0.0;
        for e in &entries {
            if e.labels.len() != alphabets.len() || e.labels.iter().zip(&alphabets).any(|(v, a)| v >= a) {
                return Err(Error::Selection(format!("label tuple {:?} outside alphabets {alphabets:?}", e.labels)));
            }
            if e.weight < -tol.psd {
                return Err(Error::Invariant(format!("negative weight {}", e.weight)));
            }
            total += e.weight;
            match (&e.cond, quantum_dims.is_empty()) {
                (Some(_), true) => return Err(Error::Selection("classical state carries an operator".into())),
                (None, false) if e.weight > tol.rank => {
                    return Err(Error::Invariant("nonzero weight without conditional operator".into()))
                }
                (Some(op), false) if op.dims() != quantum_dims.as_slice() => {
                    return Err(Error::Selection(format!("operator dims {:?} vs {quantum_dims:?}", op.dims())));
                }
                _ => {}
            }
        }
        if (total - 1.0).abs() > tol.trace.max(1e-9 * entries.len() as f64) {
            return Err(Error::Invariant(format!("weights sum to {total}")));
        }
        Ok(Self { label_names, alphabets, factor_names, quantum_dims, entries })
    }

    /// Builds from unnormalized blocks; each weight is the block trace.
    pub fn from_blocks(
        label_names: &[&str],
        alphabets: Vec<usize>,
        factor_names: &[&str],
        quantum_dims: Vec<usize>,
        blocks: Vec<(Vec<usize>, Operator)>,
        tol: &Tolerances,
    ) -> Result<Self> {
        let entries = blocks
            .into_iter()
            .map(|(labels, op)| {
                let w = op.trace().re;
                let cond = (w > tol.rank).then(|| DensityOperator::assume_valid(&op).into_op());
                CqEntry { labels, weight: w.max(0.0), cond }
            })
            .collect();
        Self::new(
            label_names.iter().map(|s| s.to_string()).collect(),
            alphabets,
            factor_names.iter().map(|s| s.to_string()).collect(),
            quantum_dims,
            entries,
            tol,
        )
    }

    /// Purely classical state from a joint pmf.
    pub fn classical(label_names: &[&str], alphabets: Vec<usize>, pmf: Vec<(Vec<usize>, f64)>) -> Result<Self> {
        let entries = pmf.into_iter().map(|(labels, weight)| CqEntry { labels, weight, cond: None }).collect();
        Self::new(
            label_names.iter().map(|s| s.to_string()).collect(),
            alphabets,
            vec![],
            vec![],
            entries,
            &Tolerances::DEFAULT,
        )
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn alphabets(&self) -> &[usize] {
        &self.alphabets
    }

    pub fn factor_names(&self) -> &[String] {
        &self.factor_names
    }

    pub fn quantum_dims(&self) -> &[usize] {
        &self.quantum_dims
    }

    pub fn entries(&self) -> &[CqEntry] {
        &self.entries
    }

    pub fn total_weight(&self) -> f64 {
        self.entries.iter().map(|e| e.weight).sum()
    }

    fn label_index(&self, name: &str) -> Option<usize> {
        self.label_names.iter().position(|n| n == name)
    }

    fn resolve(&self, names: &[&str]) -> Result<(Vec<usize>, Vec<usize>)> {
        if names.is_empty() {
            return Err(Error::Selection("empty selection".into()));
        }
        let mut labels = Vec::new();
        let mut factors = Vec::new();
        for (i, &name) in names.iter().enumerate() {
            if names[..i].contains(&name) {
                return Err(Error::Selection(format!("{name} selected twice")));
            }
            if let Some(l) = self.label_index(name) {
                labels.push(l);
            } else if let Some(f) = self.factor_names.iter().position(|n| n == name) {
                factors.push(f);
            } else {
                return Err(Error::Selection(format!("unknown name {name}")));
            }
        }
        Ok((labels, factors))
    }

    /// Marginal pmf over the named labels.
    pub fn pmf(&self, names: &[&str]) -> Result<BTreeMap<Vec<usize>, f64>> {
        let (labels, factors) = self.resolve(names)?;
        if !factors.is_empty() {
            return Err(Error::Selection("pmf of quantum factors".into()));
        }
        let mut out = BTreeMap::new();
        for e in &self.entries {
            let key: Vec<usize> = labels.iter().map(|&i| e.labels[i]).collect();
            *out.entry(key).or_insert(0.0) += e.weight;
        }
        Ok(out)
    }

    /// Average quantum state on the named factors, `sum_e w_e Tr_rest cond_e`.
    pub fn quantum_marginal(&self, names: &[&str]) -> Result<Operator> {
        let (labels, factors) = self.resolve(names)?;
        if !labels.is_empty() || factors.is_empty() {
            return Err(Error::Selection("quantum marginal needs factor names only".into()));
        }
        let dims: Vec<usize> = factors.iter().map(|&f| self.quantum_dims[f]).collect();
        let mut acc = Operator::zeros(&dims);
        for e in &self.entries {
            if let Some(c) = &e.cond {
                acc = &acc + &partial_trace(c, &factors)?.scale(e.weight);
            }
        }
        Ok(acc)
    }

    /// Von Neumann entropy (bits) of the reduction onto the named labels and factors.
    pub fn entropy(&self, names: &[&str]) -> Result<f64> {
        let (labels, factors) = self.resolve(names)?;
        let key = |e: &CqEntry| -> Vec<usize> { labels.iter().map(|&i| e.labels[i]).collect() };
        if factors.is_empty() {
            let mut groups: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
            for e in &self.entries {
                *groups.entry(key(e)).or_insert(0.0) += e.weight.max(0.0);
            }
            return Ok(shannon_bits(groups.into_values()));
        }
        let mut groups: BTreeMap<Vec<usize>, Operator> = BTreeMap::new();
        for e in &self.entries {
            let Some(c) = &e.cond else { continue };
            let block = partial_trace(c, &factors)?.scale(e.weight);
            match groups.get_mut(&key(e)) {
                Some(acc) => *acc = &*acc + &block,
                None => {
                    groups.insert(key(e), block);
                }
            }
        }
        Ok(groups.values().map(entropy_of_psd).sum())
    }

    /// `I(x;y) = S(x) + S(y) - S(xy)` for disjoint selections.
    pub fn mutual_info(&self, x: &[&str], y: &[&str]) -> Result<f64> {
        if let Some(n) = x.iter().find(|n| y.contains(n)) {
            return Err(Error::Selection(format!("{n} appears on both sides")));
        }
        let xy: Vec<&str> = x.iter().chain(y.iter()).copied().collect();
        Ok(self.entropy(x)? + self.entropy(y)? - self.entropy(&xy)?)
    }
}

/// Free-function form of [`CqState::entropy`].
pub fn subsystem_entropy(state: &CqState, names: &[&str]) -> Result<f64> {
    state.entropy(names)
}

/// Free-function form of [`CqState::mutual_info`].
pub fn mutual_info(state: &CqState, x: &[&str], y: &[&str]) -> Result<f64> {
    state.mutual_info(x, y)
}

/// How the third label `W` is formed from `U` and `V`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WMode {
    /// `W = U + V mod p`.
    Sum,
    /// `W = (U, V)`, encoded as `u * p + v`.
    Pair,
}

impl std::fmt::Display for WMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WMode::Sum => "sum",
            WMode::Pair => "pair",
        })
    }
}

impl std::str::FromStr for WMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sum" => Ok(WMode::Sum),
            "pair" => Ok(WMode::Pair),
            other => Err(format!("unknown w-mode {other:?}, expected sum or pair")),
        }
    }
}

fn is_prime(p: usize) -> bool {
    p >= 2 && (2..).take_while(|d| d * d <= p).all(|d| !p.is_multiple_of(d))
}

/// Maps from raw outcome alphabets into the prime field `F_p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeMaps {
    pub p: usize,
    pub f_s: Vec<usize>,
    pub f_t: Vec<usize>,
    pub w_mode: WMode,
}

impl OutcomeMaps {
    pub fn new(p: usize, f_s: Vec<usize>, f_t: Vec<usize>, w_mode: WMode) -> Result<Self> {
        if !is_prime(p) {
            return Err(Error::NotPrime(p));
        }
        if let Some(v) = f_s.iter().chain(f_t.iter()).find(|&&v| v >= p) {
            return Err(Error::Maps(format!("value {v} not in F_{p}")));
        }
        Ok(Self { p, f_s, f_t, w_mode })
    }

    /// `f_S` and `f_T` both the identity on `F_p`.
    pub fn identity(p: usize, w_mode: WMode) -> Result<Self> {
        Self::new(p, (0..p).collect(), (0..p).collect(), w_mode)
    }

    pub fn w(&self, u: usize, v: usize) -> usize {
        match self.w_mode {
            WMode::Sum => (u + v) % self.p,
            WMode::Pair => u * self.p + v,
        }
    }

    pub fn w_alphabet(&self) -> usize {
        match self.w_mode {
            WMode::Sum => self.p,
            WMode::Pair => self.p * self.p,
        }
    }

    /// Checks that the maps are total on alphabets of the given sizes.
    pub fn check_alphabets(&self, s_size: usize, t_size: usize) -> Result<()> {
        if self.f_s.len() != s_size || self.f_t.len() != t_size {
            return Err(Error::Maps(format!(
                "maps cover ({}, {}) symbols, alphabets have ({s_size}, {t_size})",
                self.f_s.len(),
                self.f_t.len()
            )));
        }
        Ok(())
    }
}

/// Relabels `S -> U = f_S(S)` and `T -> V = f_T(T)`, appending `W` when both are present.
///
/// Rows that collide after relabeling are merged.
pub fn apply_outcome_maps(state: &CqState, maps: &OutcomeMaps) -> Result<CqState> {
    if !is_prime(maps.p) {
        return Err(Error::NotPrime(maps.p));
    }
    let s = state.label_index("S");
    let t = state.label_index("T");
    if s.is_none() && t.is_none() {
        return Err(Error::Selection("state has neither S nor T label".into()));
    }
    if let Some(i) = s {
        if maps.f_s.len() != state.alphabets[i] {
            return Err(Error::Maps(format!("f_S covers {} of {} symbols", maps.f_s.len(), state.alphabets[i])));
        }
    }
    if let Some(i) = t {
        if maps.f_t.len() != state.alphabets[i] {
            return Err(Error::Maps(format!("f_T covers {} of {} symbols", maps.f_t.len(), state.alphabets[i])));
        }
    }
    let mut names = Vec::new();
    let mut alphabets = Vec::new();
    for (i, n) in state.label_names.iter().enumerate() {
        if Some(i) == s {
            names.push("U".to_string());
            alphabets.push(maps.p);
        } else if Some(i) == t {
            names.push("V".to_string());
            alphabets.push(maps.p);
        } else {
            names.push(n.clone());
            alphabets.push(state.alphabets[i]);
        }
    }
    let both = s.is_some() && t.is_some();
    if both {
        names.push("W".into());
        alphabets.push(maps.w_alphabet());
    }

    let mut merged: BTreeMap<Vec<usize>, (f64, Option<Operator>)> = BTreeMap::new();
    for e in &state.entries {
        let mut labels: Vec<usize> = e
            .labels
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if Some(i) == s {
                    maps.f_s[v]
                } else if Some(i) == t {
                    maps.f_t[v]
                } else {
                    v
                }
            })
            .collect();
        if both {
            let (u, v) = (labels[s.unwrap()], labels[t.unwrap()]);
            labels.push(maps.w(u, v));
        }
        let slot = merged.entry(labels).or_insert((0.0, None));
        slot.0 += e.weight;
        if let Some(c) = &e.cond {
            let part = c.scale(e.weight);
            slot.1 = Some(match slot.1.take() {
                Some(acc) => &acc + &part,
                None => part,
            });
        }
    }
    let tol = Tolerances::DEFAULT;
    let entries = merged
        .into_iter()
        .map(|(labels, (w, op))| {
            let cond = op.filter(|_| w > tol.rank).map(|o| o.scale(1.0 / w));
            CqEntry { labels, weight: w, cond }
        })
        .collect();
    Ok(CqState {
        label_names: names,
        alphabets,
        factor_names: state.factor_names.clone(),
        quantum_dims: state.quantum_dims.clone(),
        entries,
    })
}

/// The four auxiliary states, with raw outcome labels `S` and `T`.
///
/// Quantum factor names: `A`, `B`, `C` for the parties, `R` for the reference.
#[derive(Debug, Clone)]
pub struct AuxStates {
    /// A measured; factors B, C, R.
    pub sigma1: CqState,
    /// B measured; factors A, C, R.
    pub sigma2: CqState,
    /// Both measured, quantum part `sqrt(rho_AB)(L_s (x) L_t)sqrt(rho_AB)` as factor R.
    pub sigma3: CqState,
    /// Both measured on the purification; factors C, R.
    pub sigma: CqState,
}

impl AuxStates {
    pub fn mapped(&self, maps: &OutcomeMaps) -> Result<AuxStates> {
        Ok(AuxStates {
            sigma1: apply_outcome_maps(&self.sigma1, maps)?,
            sigma2: apply_outcome_maps(&self.sigma2, maps)?,
            sigma3: apply_outcome_maps(&self.sigma3, maps)?,
            sigma: apply_outcome_maps(&self.sigma, maps)?,
        })
    }
}

pub(crate) fn check_tripartite(rho: &DensityOperator, m_a: &Povm, m_b: &Povm) -> Result<()> {
    let d = rho.dims();
    if d.len() != 3 {
        return Err(Error::Param(format!("expected three factors (A, B, C), got dims {d:?}")));
    }
    if m_a.dims() != [d[0]] || m_b.dims() != [d[1]] {
        return Err(Error::Povm(format!(
            "POVM dims {:?}, {:?} do not match A={} and B={}",
            m_a.dims(),
            m_b.dims(),
            d[0],
            d[1]
        )));
    }
    Ok(())
}

pub fn auxiliary_states(rho_abc: &DensityOperator, m_a: &Povm, m_b: &Povm) -> Result<AuxStates> {
    check_tripartite(rho_abc, m_a, m_b)?;
    let tol = Tolerances::DEFAULT;
    let psi = purify(rho_abc);
    let names = ["A", "B", "C", "R"];
    let sigma1 = measure_named(&psi, &names, &[(m_a, 0, "S")], &tol)?;
    let sigma2 = measure_named(&psi, &names, &[(m_b, 1, "T")], &tol)?;
    let sigma = measure_named(&psi, &names, &[(m_a, 0, "S"), (m_b, 1, "T")], &tol)?;

    let rho_ab = partial_trace(rho_abc.op(), &[0, 1])?;
    let side = rho_ab.side();
    let s_ab = mat_sqrt(&rho_ab)?;
    let mut blocks = Vec::new();
    for (i, ea) in m_a.effects().iter().enumerate() {
        for (j, eb) in m_b.effects().iter().enumerate() {
            let block = s_ab.sandwich(&tensor(&ea.op, &eb.op)).with_dims(vec![side])?;
            blocks.push((vec![i, j], block));
        }
    }
    let sigma3 = CqState::from_blocks(&["S", "T"], vec![m_a.len(), m_b.len()], &["R"], vec![side], blocks, &tol)?;
    Ok(AuxStates { sigma1, sigma2, sigma3, sigma })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::povm::Povm;
    use crate::qmat::{random, CVector, PureState, StateVector, C64};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn example_povm() -> Povm {
        let l0 = Operator::from_matrix(nalgebra::DMatrix::from_row_slice(
            2,
            2,
            &[C64::new(0.9501, 0.0), C64::new(0.0826, 0.1089), C64::new(0.0826, -0.1089), C64::new(0.0615, 0.0)],
        ))
        .unwrap();
        let l1 = &Operator::identity(&[2]) - &l0;
        Povm::new(vec![("0".into(), l0), ("1".into(), l1)], false, &Tolerances::DEFAULT).unwrap()
    }

    fn bell_abc() -> DensityOperator {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let z = C64::new(0.0, 0.0);
        let v =
            StateVector::new(CVector::from_vec(vec![C64::new(s, 0.0), z, z, C64::new(s, 0.0)]), vec![2, 2, 1]).unwrap();
        PureState::new(v, &Tolerances::DEFAULT).unwrap().to_density()
    }

    fn shannon_oracle(p: &[f64]) -> f64 {
        p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln() / std::f64::consts::LN_2).sum()
    }

    #[test]
    fn bell_example_entropies() {
        let aux = auxiliary_states(&bell_abc(), &example_povm(), &example_povm()).unwrap();
        let s3 = apply_outcome_maps(&aux.sigma3, &OutcomeMaps::identity(2, WMode::Sum).unwrap()).unwrap();
        let su = s3.entropy(&["U"]).unwrap();
        let sv = s3.entropy(&["V"]).unwrap();
        let suv = s3.entropy(&["U", "V"]).unwrap();
        let sw = s3.entropy(&["W"]).unwrap();
        let iuv = s3.mutual_info(&["U"], &["V"]).unwrap();
        assert!((su - 0.9999).abs() < 1e-3, "{su}");
        assert!((sv - 0.9999).abs() < 1e-3, "{sv}");
        assert!((suv - 1.5154).abs() < 1e-3, "{suv}");
        assert!((sw - 0.5155).abs() < 1e-3, "{sw}");
        assert!((iuv - 0.4844).abs() < 1e-3, "{iuv}");
        assert!((2.0 * sw - suv + 0.4844).abs() < 1e-3);
    }

    #[test]
    fn sigma3_marginal_is_joint_outcome_pmf() {
        let rho = bell_abc();
        let m = example_povm();
        let aux = auxiliary_states(&rho, &m, &m).unwrap();
        let pmf = aux.sigma3.pmf(&["S", "T"]).unwrap();
        let rho_ab = partial_trace(rho.op(), &[0, 1]).unwrap();
        for (i, ea) in m.effects().iter().enumerate() {
            for (j, eb) in m.effects().iter().enumerate() {
                // direct trace oracle
                let direct = (tensor(&ea.op, &eb.op).matrix() * rho_ab.matrix()).trace().re;
                assert!((pmf[&vec![i, j]] - direct).abs() < 1e-12);
            }
        }
        for s in [&aux.sigma1, &aux.sigma2, &aux.sigma3, &aux.sigma] {
            assert!((s.total_weight() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn trivial_povms_give_single_entry() {
        let triv = Povm::trivial(2);
        let aux = auxiliary_states(&bell_abc(), &triv, &triv).unwrap();
        assert_eq!(aux.sigma3.entries().len(), 1);
        assert!((aux.sigma3.entries()[0].weight - 1.0).abs() < 1e-12);
        let m = aux.mapped(&OutcomeMaps::new(2, vec![0], vec![0], WMode::Pair).unwrap()).unwrap();
        assert!(m.sigma1.mutual_info(&["U"], &["R", "B", "C"]).unwrap().abs() < 1e-9);
        assert!(m.sigma.mutual_info(&["C"], &["W"]).unwrap().abs() < 1e-9);
        assert_eq!(m.sigma3.entropy(&["U"]).unwrap(), 0.0);
    }

    #[test]
    fn purity_balance_on_sigma1() {
        // measuring A on a pure global state: S(S, B, C, R) equals S(A-part of each branch)
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let rho = random::density(&mut rng, 8, 3).into_op().with_dims(vec![2, 2, 2]).unwrap();
        let rho = DensityOperator::new(rho, &Tolerances::DEFAULT).unwrap();
        let ma = Povm::new(
            random::povm_effects(&mut rng, 2, 3).into_iter().enumerate().map(|(i, o)| (i.to_string(), o)).collect(),
            false,
            &Tolerances::DEFAULT,
        )
        .unwrap();
        let aux = auxiliary_states(&rho, &ma, &Povm::trivial(2)).unwrap();
        let whole = aux.sigma1.entropy(&["S", "B", "C", "R"]).unwrap();
        // each branch is pure on A (x) BCR, so the BCR block has the spectrum of the A block
        let psi = purify(&rho);
        let mut oracle = 0.0;
        for e in ma.effects() {
            let v = psi.vector().apply(&mat_sqrt(&e.op).unwrap(), &[0]).unwrap();
            let a_block = v.reduced(&[0]).unwrap();
            oracle += entropy_of_psd(&a_block);
        }
        assert!((whole - oracle).abs() < 1e-9, "{whole} vs {oracle}");
    }

    #[test]
    fn classical_state_matches_shannon_oracle() {
        let pmf = vec![(vec![0, 0], 0.1), (vec![0, 1], 0.2), (vec![1, 0], 0.3), (vec![1, 1], 0.4)];
        let st = CqState::classical(&["X", "Y"], vec![2, 2], pmf).unwrap();
        let hx = shannon_oracle(&[0.3, 0.7]);
        let hy = shannon_oracle(&[0.4, 0.6]);
        let hxy = shannon_oracle(&[0.1, 0.2, 0.3, 0.4]);
        assert!((st.mutual_info(&["X"], &["Y"]).unwrap() - (hx + hy - hxy)).abs() < 1e-12);
        let prod = CqState::classical(
            &["X", "Y"],
            vec![2, 2],
            vec![(vec![0, 0], 0.12), (vec![0, 1], 0.18), (vec![1, 0], 0.28), (vec![1, 1], 0.42)],
        )
        .unwrap();
        assert!(prod.mutual_info(&["X"], &["Y"]).unwrap().abs() < 1e-12);
        let det = CqState::classical(&["X"], vec![3], vec![(vec![2], 1.0)]).unwrap();
        assert_eq!(det.entropy(&["X"]).unwrap(), 0.0);
    }

    #[test]
    fn selection_errors() {
        let st = CqState::classical(&["X", "Y"], vec![2, 2], vec![(vec![0, 0], 1.0)]).unwrap();
        assert!(matches!(st.entropy(&[]), Err(Error::Selection(_))));
        assert!(matches!(st.mutual_info(&["X"], &["X", "Y"]), Err(Error::Selection(_))));
        assert!(matches!(st.entropy(&["Z"]), Err(Error::Selection(_))));
        assert!(matches!(OutcomeMaps::identity(4, WMode::Sum), Err(Error::NotPrime(4))));
    }

    #[test]
    fn pair_and_sum_mode_definitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut pmf = Vec::new();
        for s in 0..2 {
            for t in 0..2 {
                pmf.push((vec![s, t], rng.random::<f64>()));
            }
        }
        let z: f64 = pmf.iter().map(|x| x.1).sum();
        pmf.iter_mut().for_each(|x| x.1 /= z);
        let st = CqState::classical(&["S", "T"], vec![2, 2], pmf).unwrap();
        let pair = apply_outcome_maps(&st, &OutcomeMaps::identity(2, WMode::Pair).unwrap()).unwrap();
        assert!((pair.entropy(&["W"]).unwrap() - pair.entropy(&["U", "V"]).unwrap()).abs() < 1e-12);
        let sum = apply_outcome_maps(&st, &OutcomeMaps::identity(2, WMode::Sum).unwrap()).unwrap();
        let pw = sum.pmf(&["W"]).unwrap();
        let p = st.pmf(&["S", "T"]).unwrap();
        assert!((pw[&vec![1]] - (p[&vec![0, 1]] + p[&vec![1, 0]])).abs() < 1e-15);
    }

    #[test]
    fn maps_merge_colliding_outcomes() {
        let st =
            CqState::classical(&["S", "T"], vec![3, 1], vec![(vec![0, 0], 0.2), (vec![1, 0], 0.3), (vec![2, 0], 0.5)])
                .unwrap();
        let maps = OutcomeMaps::new(2, vec![0, 1, 1], vec![0], WMode::Sum).unwrap();
        let m = apply_outcome_maps(&st, &maps).unwrap();
        assert_eq!(m.entries().len(), 2);
        assert!((m.pmf(&["U"]).unwrap()[&vec![1]] - 0.8).abs() < 1e-15);
        let bad = OutcomeMaps::new(2, vec![0, 1], vec![0], WMode::Sum).unwrap();
        assert!(matches!(apply_outcome_maps(&st, &bad), Err(Error::Maps(_))));
    }

    fn random_pmf(rng: &mut ChaCha8Rng, p: usize) -> Vec<(Vec<usize>, f64)> {
        let mut pmf = Vec::new();
        for s in 0..p {
            for t in 0..p {
                pmf.push((vec![s, t], rng.random::<f64>() + 1e-3));
            }
        }
        let z: f64 = pmf.iter().map(|x| x.1).sum();
        pmf.iter_mut().for_each(|x| x.1 /= z);
        pmf
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn sum_identity_holds(seed in any::<u64>(), three in any::<bool>()) {
            let p = if three { 3 } else { 2 };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let st = CqState::classical(&["S", "T"], vec![p, p], random_pmf(&mut rng, p)).unwrap();
            let m = apply_outcome_maps(&st, &OutcomeMaps::identity(p, WMode::Sum).unwrap()).unwrap();
            let lhs = m.mutual_info(&["W"], &["V"]).unwrap() - m.mutual_info(&["U"], &["V"]).unwrap();
            let rhs = m.entropy(&["W"]).unwrap() - m.entropy(&["U"]).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }

        #[test]
        fn mutual_info_nonnegative_on_random_cq(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let blocks: Vec<(Vec<usize>, Operator)> = (0..3)
                .map(|x| (vec![x], random::density(&mut rng, 2, 2).into_op().scale(1.0 / 3.0)))
                .collect();
            let st = CqState::from_blocks(&["X"], vec![3], &["Q"], vec![2], blocks, &Tolerances::DEFAULT).unwrap();
            prop_assert!(st.mutual_info(&["X"], &["Q"]).unwrap() >= -1e-8);
        }
    }
}
