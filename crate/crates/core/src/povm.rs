//! POVMs, canonical ensembles, measurement of purifications, the
//! faithful-simulation metric and sub-POVM completion.
//!
//! Measurements act through the square-root instrument `sqrt(L)`.

use serde::Serialize;

use crate::infoq::CqState;
use crate::qmat::{mat_sqrt, trace_norm, DensityOperator, Operator, PureState, Tolerances};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Effect {
    pub label: String,
    pub op: Operator,
}

/// Ordered, labeled effects on one subsystem.
#[derive(Debug, Clone, PartialEq)]
pub struct Povm {
    effects: Vec<Effect>,
    dims: Vec<usize>,
    is_sub: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsdViolation {
    pub index: usize,
    pub label: String,
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PovmReport {
    pub psd_violations: Vec<PsdViolation>,
    pub non_hermitian: Vec<usize>,
    /// `||I - sum L||_1`.
    pub completeness_defect: f64,
    /// Largest eigenvalue of `sum L`; at most one for a sub-POVM.
    pub max_sum_eigenvalue: f64,
    pub is_sub: bool,
    pub valid: bool,
}

impl Povm {
    /// Validated construction; fails with the report summary if [`validate`] rejects it.
    pub fn new(effects: Vec<(String, Operator)>, is_sub: bool, tol: &Tolerances) -> Result<Self> {
        let povm = Self::unchecked(effects, is_sub)?;
        let report = validate_with(&povm, tol);
        if !report.valid {
            return Err(Error::Povm(describe(&report)));
        }
        Ok(povm)
    }

    /// Checks only shapes and label uniqueness.
    pub fn unchecked(effects: Vec<(String, Operator)>, is_sub: bool) -> Result<Self> {
        let Some(first) = effects.first() else {
            return Err(Error::Povm("no effects".into()));
        };
        let dims = first.1.dims().to_vec();
        for (i, (label, op)) in effects.iter().enumerate() {
            if op.dims() != dims.as_slice() {
                return Err(Error::Povm(format!("effect {label} has dims {:?}, expected {dims:?}", op.dims())));
            }
            if effects[..i].iter().any(|(l, _)| l == label) {
                return Err(Error::Povm(format!("duplicate label {label}")));
            }
        }
        let effects = effects.into_iter().map(|(label, op)| Effect { label, op }).collect();
        Ok(Self { effects, dims, is_sub })
    }

    /// The one-outcome POVM `{I}` labeled "0".
    pub fn trivial(d: usize) -> Self {
        Self { effects: vec![Effect { label: "0".into(), op: Operator::identity(&[d]) }], dims: vec![d], is_sub: false }
    }

    /// Projective measurement in the computational basis, labels "0".."d-1".
    pub fn computational(d: usize) -> Self {
        let effects = (0..d).map(|i| Effect { label: i.to_string(), op: Operator::basis_projector(&[d], i) }).collect();
        Self { effects, dims: vec![d], is_sub: false }
    }

    pub fn effects(&self) -> &[Effect] {
        &self.effects
    }

    pub fn len(&self) -> usize {
        self.effects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.effects.is_empty()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn side(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_sub(&self) -> bool {
        self.is_sub
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.effects.iter().map(|e| e.label.as_str())
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.effects.iter().position(|e| e.label == label)
    }

    pub fn sum(&self) -> Operator {
        self.effects.iter().skip(1).fold(self.effects[0].op.clone(), |acc, e| &acc + &e.op)
    }
}

fn describe(r: &PovmReport) -> String {
    let mut parts = Vec::new();
    if !r.non_hermitian.is_empty() {
        parts.push(format!("non-Hermitian effects {:?}", r.non_hermitian));
    }
    for v in &r.psd_violations {
        parts.push(format!("effect {} has eigenvalue {:.3e}", v.label, v.min_eigenvalue));
    }
    if r.is_sub {
        parts.push(format!("sum has eigenvalue {:.6}", r.max_sum_eigenvalue));
    } else {
        parts.push(format!("completeness defect {:.3e}", r.completeness_defect));
    }
    parts.join("; ")
}

pub fn validate(povm: &Povm) -> PovmReport {
    validate_with(povm, &Tolerances::DEFAULT)
}

pub fn validate_with(povm: &Povm, tol: &Tolerances) -> PovmReport {
    let mut psd_violations = Vec::new();
    let mut non_hermitian = Vec::new();
    for (i, e) in povm.effects.iter().enumerate() {
        if e.op.hermitian_deviation() > tol.herm {
            non_hermitian.push(i);
        }
        let min = e.op.min_eigenvalue();
        if min < -tol.psd {
            psd_violations.push(PsdViolation { index: i, label: e.label.clone(), min_eigenvalue: min });
        }
    }
    let sum = povm.sum();
    let completeness_defect = trace_norm(&(&Operator::identity(&povm.dims) - &sum));
    let max_sum_eigenvalue = sum.max_eigenvalue();
    let side = povm.side() as f64;
    let sum_ok = if povm.is_sub {
        max_sum_eigenvalue <= 1.0 + tol.psd.max(tol.num)
    } else {
        completeness_defect <= tol.num * side
    };
    PovmReport {
        valid: psd_violations.is_empty() && non_hermitian.is_empty() && sum_ok,
        psd_violations,
        non_hermitian,
        completeness_defect,
        max_sum_eigenvalue,
        is_sub: povm.is_sub,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleEntry {
    pub label: String,
    /// `Tr(L rho)`.
    pub weight: f64,
    /// `sqrt(rho) L sqrt(rho) / weight`, or `None` when the weight is negligible.
    pub state: Option<DensityOperator>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub entries: Vec<EnsembleEntry>,
}

impl Ensemble {
    pub fn weights(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.weight).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `sum_x w_x rho_x`.
    pub fn average(&self) -> Option<Operator> {
        let mut acc: Option<Operator> = None;
        for e in &self.entries {
            if let Some(s) = &e.state {
                let part = s.op().scale(e.weight);
                acc = Some(match acc {
                    Some(a) => &a + &part,
                    None => part,
                });
            }
        }
        acc
    }
}

pub fn canonical_ensemble(rho: &DensityOperator, povm: &Povm) -> Result<Ensemble> {
    if rho.dims() != povm.dims() {
        return Err(Error::Povm(format!("state dims {:?} vs POVM dims {:?}", rho.dims(), povm.dims())));
    }
    let tol = Tolerances::DEFAULT;
    let s = mat_sqrt(rho.op())?;
    let entries = povm
        .effects
        .iter()
        .map(|e| {
            let block = s.sandwich(&e.op);
            let w = block.trace().re;
            let state = (w > tol.rank).then(|| DensityOperator::assume_valid(&block));
            EnsembleEntry { label: e.label.clone(), weight: w.max(0.0), state }
        })
        .collect();
    Ok(Ensemble { entries })
}

/// Measures several factors of a purification and keeps the rest quantum.
///
/// `names` names every factor of `psi`; each measurement contributes a
/// classical label column named by its third field.
pub fn measure_named(
    psi: &PureState,
    names: &[&str],
    measurements: &[(&Povm, usize, &str)],
    tol: &Tolerances,
) -> Result<CqState> {
    let dims = psi.dims();
    if names.len() != dims.len() {
        return Err(Error::Selection(format!("{} names for {} factors", names.len(), dims.len())));
    }
    for (m, f, _) in measurements {
        if *f >= dims.len() || m.dims() != [dims[*f]] {
            return Err(Error::Povm(format!("POVM dims {:?} do not match factor {f}", m.dims())));
        }
    }
    let keep: Vec<usize> = (0..dims.len()).filter(|i| measurements.iter().all(|(_, f, _)| f != i)).collect();
    if keep.is_empty() {
        return Err(Error::Selection("no quantum factor left after measurement".into()));
    }
    let roots: Vec<Vec<Operator>> = measurements
        .iter()
        .map(|(m, _, _)| m.effects.iter().map(|e| mat_sqrt(&e.op)).collect::<std::result::Result<_, _>>())
        .collect::<std::result::Result<_, _>>()?;

    let sizes: Vec<usize> = measurements.iter().map(|(m, _, _)| m.len()).collect();
    let total: usize = sizes.iter().product();
    let mut blocks = Vec::with_capacity(total);
    for flat in 0..total {
        let mut labels = vec![0; sizes.len()];
        let mut rem = flat;
        for k in (0..sizes.len()).rev() {
            labels[k] = rem % sizes[k];
            rem /= sizes[k];
        }
        let mut v = psi.vector().clone();
        for (k, (_, f, _)) in measurements.iter().enumerate() {
            v = v.apply(&roots[k][labels[k]], &[*f])?;
        }
        blocks.push((labels, v.reduced(&keep)?));
    }
    let label_names: Vec<&str> = measurements.iter().map(|m| m.2).collect();
    let factor_names: Vec<&str> = keep.iter().map(|&i| names[i]).collect();
    let qdims: Vec<usize> = keep.iter().map(|&i| dims[i]).collect();
    CqState::from_blocks(&label_names, sizes, &factor_names, qdims, blocks, tol)
}

/// Measures one factor of a purification.
///
/// The label is named `X`; remaining factors are named by their original index.
pub fn measure_on_purification(psi: &PureState, povm: &Povm, factor: usize) -> Result<CqState> {
    let owned: Vec<String> = (0..psi.dims().len()).map(|i| i.to_string()).collect();
    let names: Vec<&str> = owned.iter().map(String::as_str).collect();
    measure_named(psi, &names, &[(povm, factor, "X")], &Tolerances::DEFAULT)
}

/// `sum_x ||sqrt(rho)(L_x - L~_x)sqrt(rho)||_1 + Tr((I - sum L~)rho)`.
///
/// Labels of `m` missing from `m_tilde` count as zero effects; labels of
/// `m_tilde` missing from `m` are an error.
pub fn faithfulness(m: &Povm, m_tilde: &Povm, rho: &DensityOperator) -> Result<f64> {
    if m.dims() != m_tilde.dims() || m.dims() != rho.dims() {
        return Err(Error::Povm("POVM and state dims differ".into()));
    }
    if let Some(extra) = m_tilde.labels().find(|l| m.index_of(l).is_none()) {
        return Err(Error::LabelMismatch(format!("label {extra} absent from the target POVM")));
    }
    let s = mat_sqrt(rho.op())?;
    let mut total = 0.0;
    for e in &m.effects {
        let diff = match m_tilde.index_of(&e.label) {
            Some(j) => &e.op - &m_tilde.effects[j].op,
            None => e.op.clone(),
        };
        total += trace_norm(&s.sandwich(&diff));
    }
    let defect = &Operator::identity(m.dims()) - &m_tilde.sum();
    total += (defect.matrix() * rho.op().matrix()).trace().re;
    Ok(total)
}

/// Adds `I - sum L` under `slack_label`.
pub fn complete_sub_povm(m: &Povm, slack_label: &str) -> Result<Povm> {
    let tol = Tolerances::DEFAULT;
    if m.index_of(slack_label).is_some() {
        return Err(Error::Povm(format!("slack label {slack_label} already used")));
    }
    let sum = m.sum();
    let top = sum.max_eigenvalue();
    if top > 1.0 + tol.psd.max(tol.num) {
        return Err(Error::Povm(format!("effects sum to an operator with eigenvalue {top}")));
    }
    let mut effects: Vec<(String, Operator)> = m.effects.iter().map(|e| (e.label.clone(), e.op.clone())).collect();
    effects.push((slack_label.to_string(), (&Operator::identity(m.dims()) - &sum).hermitian_part()));
    Povm::new(effects, false, &tol)
}
