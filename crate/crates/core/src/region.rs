//! The rate region `R_b`, the purity bound, local purity `kappa`, corner
//! points and the sweep over the binning fraction `b`.

use serde::Serialize;

use crate::infoq::{auxiliary_states, AuxStates, OutcomeMaps, WMode};
use crate::povm::Povm;
use crate::qmat::{partial_trace, von_neumann_entropy, DensityOperator, Tolerances};
use crate::{Error, Result};

/// Slack used by [`membership`].
pub const RATE_TOL: f64 = 1e-9;

/// `log2(side) - S(rho)`.
pub fn kappa(rho: &DensityOperator) -> f64 {
    (rho.side() as f64).log2() - von_neumann_entropy(rho)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KappaTriple {
    pub kappa_a: f64,
    pub kappa_b: f64,
    pub kappa_c: f64,
}

impl KappaTriple {
    /// Local purities of the three single-party marginals.
    pub fn of(rho_abc: &DensityOperator) -> Result<Self> {
        if rho_abc.dims().len() != 3 {
            return Err(Error::Param(format!("expected dims [dA, dB, dC], got {:?}", rho_abc.dims())));
        }
        let marginal = |i: usize| -> Result<f64> {
            let m = partial_trace(rho_abc.op(), &[i])?;
            Ok(kappa(&DensityOperator::normalized(&m, &Tolerances::DEFAULT)?))
        };
        Ok(Self { kappa_a: marginal(0)?, kappa_b: marginal(1)?, kappa_c: marginal(2)? })
    }

    pub fn total(&self) -> f64 {
        self.kappa_a + self.kappa_b + self.kappa_c
    }
}

/// Every information quantity the region and the purity bound use (bits).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntropicProfile {
    pub i_u_rbc: f64,
    pub i_v_rac: f64,
    /// `I(U;RB)` of sigma1, the codebook-rate threshold for A.
    pub i_u_rb: f64,
    /// `I(V;RA)` of sigma2.
    pub i_v_ra: f64,
    pub i_uv: f64,
    pub i_wu: f64,
    pub i_wv: f64,
    pub i_c_w: f64,
    pub s_u: f64,
    pub s_v: f64,
    pub s_w: f64,
    pub s_uv: f64,
    pub kappas: KappaTriple,
    pub w_mode: WMode,
    pub b: f64,
}

fn check_b(b: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&b) || b.is_nan() {
        return Err(Error::Param(format!("b = {b} is outside [0, 1]")));
    }
    Ok(())
}

impl EntropicProfile {
    /// Reads the quantities off auxiliary states already relabeled to `U`, `V`, `W`.
    pub fn from_states(mapped: &AuxStates, kappas: KappaTriple, w_mode: WMode, b: f64) -> Result<Self> {
        check_b(b)?;
        let s1 = &mapped.sigma1;
        let s2 = &mapped.sigma2;
        let s3 = &mapped.sigma3;
        Ok(Self {
            i_u_rbc: s1.mutual_info(&["U"], &["R", "B", "C"])?,
            i_v_rac: s2.mutual_info(&["V"], &["R", "A", "C"])?,
            i_u_rb: s1.mutual_info(&["U"], &["R", "B"])?,
            i_v_ra: s2.mutual_info(&["V"], &["R", "A"])?,
            i_uv: s3.mutual_info(&["U"], &["V"])?,
            i_wu: s3.mutual_info(&["W"], &["U"])?,
            i_wv: s3.mutual_info(&["W"], &["V"])?,
            i_c_w: mapped.sigma.mutual_info(&["C"], &["W"])?,
            s_u: s3.entropy(&["U"])?,
            s_v: s3.entropy(&["V"])?,
            s_w: s3.entropy(&["W"])?,
            s_uv: s3.entropy(&["U", "V"])?,
            kappas,
            w_mode,
            b,
        })
    }

    pub fn compute(rho_abc: &DensityOperator, m_a: &Povm, m_b: &Povm, maps: &OutcomeMaps, b: f64) -> Result<Self> {
        check_b(b)?;
        maps.check_alphabets(m_a.len(), m_b.len())?;
        let aux = auxiliary_states(rho_abc, m_a, m_b)?.mapped(maps)?;
        Self::from_states(&aux, KappaTriple::of(rho_abc)?, maps.w_mode, b)
    }

    pub fn with_b(&self, b: f64) -> Result<Self> {
        check_b(b)?;
        Ok(Self { b, ..*self })
    }

    /// `I_b(U;V) = b I(U;V)`.
    pub fn ib_uv(&self) -> f64 {
        self.b * self.i_uv
    }

    fn plus(&self, value: f64) -> f64 {
        match self.w_mode {
            WMode::Sum => self.b * value,
            WMode::Pair => 0.0,
        }
    }

    pub fn ib_plus_wu(&self) -> f64 {
        self.plus(self.i_wu)
    }

    pub fn ib_plus_wv(&self) -> f64 {
        self.plus(self.i_wv)
    }

    pub fn ib_plus_uv(&self) -> f64 {
        self.plus(self.i_uv)
    }
}

/// `c1 R1 + c2 R2 >= rhs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Constraint {
    pub c1: f64,
    pub c2: f64,
    pub rhs: f64,
}

impl Constraint {
    pub fn holds(&self, r1: f64, r2: f64) -> bool {
        self.c1 * r1 + self.c2 * r2 >= self.rhs - RATE_TOL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRegion {
    /// Lower bounds on `R1`, `R2` and `R1 + R2`, in that order.
    pub constraints: [Constraint; 3],
    pub purity_bound: f64,
    pub profile: EntropicProfile,
}

impl RateRegion {
    /// Region given directly by its three right-hand sides.
    pub fn from_bounds(r1: f64, r2: f64, sum: f64, profile: EntropicProfile) -> Self {
        RateRegion {
            constraints: [
                Constraint { c1: 1.0, c2: 0.0, rhs: r1 },
                Constraint { c1: 0.0, c2: 1.0, rhs: r2 },
                Constraint { c1: 1.0, c2: 1.0, rhs: sum },
            ],
            purity_bound: purity_bound(&profile.kappas, &profile),
            profile,
        }
    }

    pub fn rhs(&self) -> [f64; 3] {
        [self.constraints[0].rhs, self.constraints[1].rhs, self.constraints[2].rhs]
    }
}

pub fn rate_region(profile: &EntropicProfile) -> Result<RateRegion> {
    check_b(profile.b)?;
    let p = profile;
    let r1 = p.i_u_rbc + p.ib_plus_wv() - p.ib_uv();
    let r2 = p.i_v_rac + p.ib_plus_wu() - p.ib_uv();
    let sum = p.i_u_rbc + p.i_v_rac - p.ib_uv() + p.ib_plus_wu() + p.ib_plus_wv() - p.ib_plus_uv();
    Ok(RateRegion::from_bounds(r1, r2, sum, *p))
}

/// Right-hand side of the purity bound, term for term.
///
/// `I_b(U;V)` and `I+_b(U;V)` are both subtracted; in sum mode this removes
/// `b I(U;V)` twice, exactly as the bound is stated.
pub fn purity_bound(kappas: &KappaTriple, profile: &EntropicProfile) -> f64 {
    kappas.total() + profile.i_c_w - profile.ib_uv() + profile.ib_plus_wu() + profile.ib_plus_wv()
        - profile.ib_plus_uv()
}

pub fn membership(region: &RateRegion, r1: f64, r2: f64) -> bool {
    region.constraints.iter().all(|c| c.holds(r1, r2))
}

/// Vertices of the region's dominant face, rates clipped at zero.
///
/// Two vertices when the sum-rate constraint is active, otherwise the single
/// point where the individual bounds meet.
pub fn corners(region: &RateRegion) -> Vec<(f64, f64)> {
    let a = region.constraints[0].rhs.max(0.0);
    let c = region.constraints[1].rhs.max(0.0);
    let s = region.constraints[2].rhs;
    if s > a + c + RATE_TOL {
        vec![(a, s - a), (s - c, c)]
    } else {
        vec![(a, c)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum BestB {
    Feasible { b: f64, purity: f64 },
    Infeasible,
}

/// `b` grid `0, 1/(points-1), ..., 1`.
pub fn b_grid(points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..points).map(|i| i as f64 / (points - 1) as f64).collect(),
    }
}

/// Maximizes the purity bound over `b_grid` among grid points where `(r1, r2)` is in the region.
pub fn best_over_b_profile(profile: &EntropicProfile, r1: f64, r2: f64, b_grid: &[f64]) -> Result<BestB> {
    if b_grid.is_empty() {
        return Err(Error::Param("empty b grid".into()));
    }
    let mut best = BestB::Infeasible;
    for &b in b_grid {
        let region = rate_region(&profile.with_b(b)?)?;
        if !membership(&region, r1, r2) {
            continue;
        }
        let p = region.purity_bound;
        match best {
            BestB::Feasible { purity, .. } if purity >= p => {}
            _ => best = BestB::Feasible { b, purity: p },
        }
    }
    Ok(best)
}

pub fn best_over_b(
    rho: &DensityOperator,
    m_a: &Povm,
    m_b: &Povm,
    maps: &OutcomeMaps,
    r1: f64,
    r2: f64,
    b_grid: &[f64],
) -> Result<BestB> {
    if b_grid.is_empty() {
        return Err(Error::Param("empty b grid".into()));
    }
    let profile = EntropicProfile::compute(rho, m_a, m_b, maps, 0.0)?;
    best_over_b_profile(&profile, r1, r2, b_grid)
}
