//! Exact solvers: valid inequalities, optimality-based probing, best-bound
//! branch-and-bound, and safeguarded brute-force enumeration.
//!
//! Throughout, linear cuts bound `z - log det C`, the determinant gain of a
//! selection, by an affine function of the indicator vector. Gradient cuts
//! come from linearizing the two concave relaxations at an integer point;
//! submodular cuts are the two classical Nemhauser-Wolsey inequalities for
//! the (submodular) gain function. Probing shifts stored dual certificates
//! to price hypothetical fixings and turns dead settings into fixings,
//! cardinality cuts, or excluded-assignment disjunctions.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::approx::{local_search, ApproxError};
use crate::instance::{DdfInstance, InstanceError, Selection};
use crate::linalg::{
    cholesky, from_eigen, rank_one_logdet_update, sym_eig, LinalgError, SymMatrix, UpdateSign,
};
use crate::par;
use crate::relax::{
    frank_wolfe, DualCertificate, FracPoint, Formulation, FwOptions, RelaxError,
};

/// Margin below the incumbent before a probed setting counts as dead.
pub const PROBE_EPS: f64 = 1e-9;

/// Enumerated subsets allowed before [`brute_force`] refuses to run.
pub const BRUTE_FORCE_CAP: u128 = 10_000_000;

/// Fractional thresholds marking probe candidates.
const XI_LOW: f64 = 0.05;
const XI_HIGH: f64 = 0.95;

/// Probe candidates kept per side after ranking by extremity.
const PROBE_CAND_CAP: usize = 12;

/// Retained linear cuts; oldest are dropped beyond this.
const POOL_CAP: usize = 512;

/// Rank-one updates between enumeration refreshes.
const ENUM_REFRESH: usize = 64;

#[derive(Debug, Error)]
pub enum ExactError {
    #[error("enumeration of {count} subsets exceeds the cap of {cap}")]
    TooLarge { count: u128, cap: u128 },
    #[error("cut requires a feasible selection of exactly {expected} indices, got {got}")]
    BadSelection { expected: usize, got: usize },
    #[error(transparent)]
    Relax(#[from] RelaxError),
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Instance(#[from] InstanceError),
}

// ── Linear cuts ─────────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CutKind {
    /// Linearization of the determinant relaxation at an integer point.
    GradR,
    /// Linearization of the budget-limited surrogate at an integer point.
    GradM,
    /// Nemhauser-Wolsey inequality with ground-set removal gains.
    Submod1,
    /// Nemhauser-Wolsey inequality with empty-set insertion gains.
    Submod2,
    /// `Σ_{i ∈ origin} x_i ≤ |origin| - 1`.
    CardLe,
    /// `Σ_{i ∈ origin} x_i ≥ 1`.
    CardGe,
}

/// A valid inequality. For objective cuts (`GradR`, `GradM`, `Submod1`,
/// `Submod2`) every feasible selection `S` satisfies
/// `z(S) - log det C ≤ c0 + Σ_{i∈S} coef_i`; for cardinality cuts the
/// indicator constraint is stored through `origin` and `c0` is the
/// right-hand side.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LinearCut {
    pub kind: CutKind,
    pub c0: f64,
    pub coef: Vec<f64>,
    /// Selection (or index set) the cut was generated from.
    pub origin: Vec<usize>,
}

impl LinearCut {
    /// True for cuts constraining the indicator vector rather than the
    /// objective.
    pub fn is_cardinality(&self) -> bool {
        matches!(self.kind, CutKind::CardLe | CutKind::CardGe)
    }

    /// Right-hand side of an objective cut at the indicator of `members`.
    pub fn rhs_at(&self, members: &[usize]) -> f64 {
        debug_assert!(!self.is_cardinality());
        self.c0 + members.iter().map(|&i| self.coef[i]).sum::<f64>()
    }

    pub fn cover(origin: Vec<usize>) -> LinearCut {
        LinearCut { kind: CutKind::CardGe, c0: 1.0, coef: Vec::new(), origin }
    }

    pub fn packing(origin: Vec<usize>) -> LinearCut {
        let rhs = origin.len() as f64 - 1.0;
        LinearCut { kind: CutKind::CardLe, c0: rhs, coef: Vec::new(), origin }
    }
}

/// Excluded assignment: no improving selection contains all of `ones` while
/// rejecting all of `zeros`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Disjunction {
    pub ones: Vec<usize>,
    pub zeros: Vec<usize>,
}

/// Pool of cuts and disjunctions shared across the search tree.
#[derive(Clone, Debug, Default)]
pub struct CutPool {
    cuts: Vec<LinearCut>,
    disjunctions: Vec<Disjunction>,
}

impl CutPool {
    pub fn new() -> Self {
        CutPool::default()
    }

    /// Adds a cut unless an identical kind/origin pair is already present.
    /// Objective cuts beyond [`POOL_CAP`] evict the oldest objective cut.
    pub fn add(&mut self, cut: LinearCut) {
        if self
            .cuts
            .iter()
            .any(|c| c.kind == cut.kind && c.origin == cut.origin)
        {
            return;
        }
        if !cut.is_cardinality()
            && self.cuts.iter().filter(|c| !c.is_cardinality()).count() >= POOL_CAP
        {
            if let Some(pos) = self.cuts.iter().position(|c| !c.is_cardinality()) {
                self.cuts.remove(pos);
            }
        }
        self.cuts.push(cut);
    }

    pub fn add_disjunction(&mut self, d: Disjunction) {
        if self
            .disjunctions
            .iter()
            .any(|e| e.ones == d.ones && e.zeros == d.zeros)
        {
            return;
        }
        self.disjunctions.push(d);
    }

    pub fn cuts(&self) -> &[LinearCut] {
        &self.cuts
    }

    pub fn disjunctions(&self) -> &[Disjunction] {
        &self.disjunctions
    }

    pub fn len(&self) -> usize {
        self.cuts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cuts.is_empty() && self.disjunctions.is_empty()
    }
}

/// Gradient cuts at the feasible selection `sel` (must have exactly `s`
/// indices): one from the determinant relaxation, one from the surrogate.
/// Both are tight at `sel`.
pub fn gradient_cuts(inst: &DdfInstance, sel: &[usize]) -> Result<Vec<LinearCut>, ExactError> {
    let (n, s) = (inst.n(), inst.s());
    let sel = checked_selection(sel, n, s)?;

    let mut bs = SymMatrix::identity(inst.d());
    for &i in &sel {
        bs.add_outer(inst.b_col(i), 1.0);
    }
    let fac = cholesky(&bs)?;
    let zeta = fac.logdet();
    let inv = fac.inverse();
    let g: Vec<f64> = par::map_indices(n, |i| inv.quad_form(inst.b_col(i)));
    let c0_r = zeta - sel.iter().map(|&i| g[i]).sum::<f64>();
    let cut_r = LinearCut { kind: CutKind::GradR, c0: c0_r, coef: g, origin: sel.clone() };

    let mut vs = SymMatrix::zeros(n);
    for &i in &sel {
        vs.add_outer(inst.v_col(i), 1.0);
    }
    let eig = sym_eig(&vs)?;
    let lam_s = eig.values[s - 1].max(crate::relax::LAMBDA_FLOOR);
    let dual: Vec<f64> = (0..n)
        .map(|j| {
            if j < s {
                1.0 / eig.values[j].max(crate::relax::LAMBDA_FLOOR)
            } else {
                1.0 / lam_s
            }
        })
        .collect();
    let gmat = from_eigen(&eig.vectors, &dual);
    let h: Vec<f64> = par::map_indices(n, |i| gmat.quad_form(inst.v_col(i)));
    let logf: f64 = eig.values[..s]
        .iter()
        .map(|&v| v.max(crate::relax::LAMBDA_FLOOR).ln())
        .sum();
    let c0_m = logf - sel.iter().map(|&i| h[i]).sum::<f64>();
    let cut_m = LinearCut { kind: CutKind::GradM, c0: c0_m, coef: h, origin: sel };

    Ok(vec![cut_r, cut_m])
}

/// The two submodular inequalities for the gain function at `sel`, tight at
/// `sel`.
pub fn submodular_cuts(inst: &DdfInstance, sel: &[usize]) -> Result<Vec<LinearCut>, ExactError> {
    let (n, s) = (inst.n(), inst.s());
    let sel = checked_selection(sel, n, s)?;
    let in_sel = membership(n, &sel);

    let mut bs = SymMatrix::identity(inst.d());
    for &i in &sel {
        bs.add_outer(inst.b_col(i), 1.0);
    }
    let fac = cholesky(&bs)?;
    let zeta = fac.logdet();
    let inv_s = fac.inverse();

    let mut bn = SymMatrix::identity(inst.d());
    for i in 0..n {
        bn.add_outer(inst.b_col(i), 1.0);
    }
    let inv_n = cholesky(&bn)?.inverse();

    let quad_s: Vec<f64> = par::map_indices(n, |i| inv_s.quad_form(inst.b_col(i)));
    let quad_n: Vec<f64> = par::map_indices(n, |i| inv_n.quad_form(inst.b_col(i)));

    let mut coef1 = vec![0.0; n];
    let mut coef2 = vec![0.0; n];
    for i in 0..n {
        if in_sel[i] {
            // Removal gains: with respect to the full ground set for the
            // first inequality, within `sel` for the second.
            coef1[i] = -(1.0 - quad_n[i]).max(f64::MIN_POSITIVE).ln();
            coef2[i] = -(1.0 - quad_s[i]).max(f64::MIN_POSITIVE).ln();
        } else {
            // Insertion gains: into `sel` for the first, into the empty set
            // for the second.
            coef1[i] = (1.0 + quad_s[i]).ln();
            let norm2: f64 = inst.b_col(i).iter().map(|v| v * v).sum();
            coef2[i] = (1.0 + norm2).ln();
        }
    }
    let c0_1 = zeta - sel.iter().map(|&i| coef1[i]).sum::<f64>();
    let c0_2 = zeta - sel.iter().map(|&i| coef2[i]).sum::<f64>();
    Ok(vec![
        LinearCut { kind: CutKind::Submod1, c0: c0_1, coef: coef1, origin: sel.clone() },
        LinearCut { kind: CutKind::Submod2, c0: c0_2, coef: coef2, origin: sel },
    ])
}

fn checked_selection(sel: &[usize], n: usize, s: usize) -> Result<Vec<usize>, ExactError> {
    let mut v = sel.to_vec();
    v.sort_unstable();
    v.dedup();
    if v.len() != s || v.iter().any(|&i| i >= n) {
        return Err(ExactError::BadSelection { expected: s, got: v.len() });
    }
    Ok(v)
}

fn membership(n: usize, idx: &[usize]) -> Vec<bool> {
    let mut m = vec![false; n];
    for &i in idx {
        m[i] = true;
    }
    m
}

/// Tightest objective-cut bound over selections respecting the fixings:
/// each cut is maximized by adding its largest free coefficients up to the
/// residual budget. Returns `+∞` when the pool holds no objective cuts.
pub fn cut_pool_bound(
    inst: &DdfInstance,
    pool: &CutPool,
    fixed_in: &[usize],
    fixed_out: &[usize],
) -> f64 {
    let n = inst.n();
    let residual = inst.s() - fixed_in.len();
    let decided = {
        let mut d = membership(n, fixed_in);
        for &i in fixed_out {
            d[i] = true;
        }
        d
    };
    let mut best = f64::INFINITY;
    for cut in pool.cuts() {
        if cut.is_cardinality() {
            continue;
        }
        let mut val = cut.c0 + fixed_in.iter().map(|&i| cut.coef[i]).sum::<f64>();
        let mut free: Vec<f64> = (0..n)
            .filter(|&i| !decided[i])
            .map(|i| cut.coef[i])
            .collect();
        free.sort_by(|a, b| b.partial_cmp(a).unwrap());
        val += free[..residual].iter().sum::<f64>();
        best = best.min(inst.logdet_c() + val);
    }
    best
}

// ── Probing ─────────────────────────────────────────────────────────────────

/// Tallies of probe consequences by kind.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct CutCounts {
    /// Variables fixed to one (their rejection was priced dead).
    pub forced_in: usize,
    /// Variables fixed to zero.
    pub forced_out: usize,
    /// Cover cuts `x_j + x_l ≥ 1`.
    pub cover: usize,
    /// Packing cuts `x_j + x_l ≤ 1`.
    pub packing: usize,
    /// Mixed-pair excluded assignments.
    pub disjunction: usize,
}

impl CutCounts {
    pub fn total(&self) -> usize {
        self.forced_in + self.forced_out + self.cover + self.packing + self.disjunction
    }

    fn absorb(&mut self, other: &CutCounts) {
        self.forced_in += other.forced_in;
        self.forced_out += other.forced_out;
        self.cover += other.cover;
        self.packing += other.packing;
        self.disjunction += other.disjunction;
    }
}

/// Everything a probing pass concluded.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub fixed_to_one: Vec<usize>,
    pub fixed_to_zero: Vec<usize>,
    pub cover_cuts: Vec<LinearCut>,
    pub packing_cuts: Vec<LinearCut>,
    pub disjunctions: Vec<Disjunction>,
    pub counts: CutCounts,
    /// Restricted relaxation solves spent on probes the closed-form shift
    /// could not decide.
    pub fw_probes: usize,
}

/// Closed-form certificate fixing: prices each free variable's opposite
/// setting across the certificates and fixes variables whose rejection (or
/// selection) is certifiably dead against `z_lb`. Variables whose both
/// settings price dead are left alone; the node bound closes them.
pub fn probe_fix(
    inst: &DdfInstance,
    certs: &[DualCertificate],
    z_lb: f64,
) -> (Vec<usize>, Vec<usize>) {
    let n = inst.n();
    let mut blocked = vec![false; n];
    for cert in certs {
        for &i in cert.fixed_in.iter().chain(&cert.fixed_out) {
            blocked[i] = true;
        }
    }
    let mut to_one = Vec::new();
    let mut to_zero = Vec::new();
    for i in 0..n {
        if blocked[i] {
            continue;
        }
        let out_bound = certs
            .iter()
            .map(|c| c.shifted_bound(&[], &[i]))
            .fold(f64::INFINITY, f64::min);
        let in_bound = certs
            .iter()
            .map(|c| c.shifted_bound(&[i], &[]))
            .fold(f64::INFINITY, f64::min);
        let out_dead = out_bound < z_lb - PROBE_EPS;
        let in_dead = in_bound < z_lb - PROBE_EPS;
        if out_dead && !in_dead {
            to_one.push(i);
        } else if in_dead && !out_dead {
            to_zero.push(i);
        }
    }
    (to_one, to_zero)
}

struct ProbeTask {
    ones: Vec<usize>,
    zeros: Vec<usize>,
    predicted: f64,
}

/// Pair probing at near-integral coordinates of `sel_x`.
///
/// Singles are priced first (their fixings shrink later work), then pairs of
/// near-one candidates (dead ⇒ cover cut), near-zero candidates (dead ⇒
/// packing cut), and mixed pairs (dead ⇒ disjunction). Settings the stored
/// certificates cannot refute are re-priced with warm-started restricted
/// relaxations, newest-promise first, up to `3n` solves.
pub fn probe_pairs(
    inst: &DdfInstance,
    certs: &[DualCertificate],
    sel_x: &[f64],
    z_lb: f64,
    fixed_in: &[usize],
    fixed_out: &[usize],
    warm: Option<&[f64]>,
) -> Result<ProbeOutcome, ExactError> {
    let n = inst.n();
    let mut state = vec![0u8; n];
    for &i in fixed_in {
        state[i] = 1;
    }
    for &i in fixed_out {
        state[i] = 2;
    }
    let mut out = ProbeOutcome::default();
    let mut fw_budget = 3 * n;
    let fw_opts = FwOptions { max_iters: 200, tol: 1e-7 };

    let price = |ones: &[usize], zeros: &[usize]| -> f64 {
        certs
            .iter()
            .map(|c| c.shifted_bound(ones, zeros))
            .fold(f64::INFINITY, f64::min)
    };
    let solve_probe = |ones: &[usize],
                           zeros: &[usize],
                           state: &[u8],
                           fw_budget: &mut usize,
                           fw_probes: &mut usize|
     -> Result<Option<f64>, ExactError> {
        if *fw_budget == 0 {
            return Ok(None);
        }
        *fw_budget -= 1;
        *fw_probes += 1;
        let mut f1: Vec<usize> = (0..n).filter(|&i| state[i] == 1).collect();
        let mut f0: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        f1.extend_from_slice(ones);
        f0.extend_from_slice(zeros);
        match frank_wolfe(inst, Formulation::R, &f1, &f0, &fw_opts, warm) {
            Ok((_, cert)) => Ok(Some(cert.bound)),
            Err(RelaxError::InfeasibleFixing(_)) => Ok(Some(f64::NEG_INFINITY)),
            Err(e) => Err(e.into()),
        }
    };

    let mut low: Vec<usize> = (0..n)
        .filter(|&i| state[i] == 0 && sel_x[i] <= XI_LOW)
        .collect();
    low.sort_by(|&a, &b| sel_x[a].partial_cmp(&sel_x[b]).unwrap().then(a.cmp(&b)));
    low.truncate(PROBE_CAND_CAP);
    let mut high: Vec<usize> = (0..n)
        .filter(|&i| state[i] == 0 && sel_x[i] >= XI_HIGH)
        .collect();
    high.sort_by(|&a, &b| sel_x[b].partial_cmp(&sel_x[a]).unwrap().then(a.cmp(&b)));
    high.truncate(PROBE_CAND_CAP);

    // Singles: rejection probes on near-one candidates, selection probes on
    // near-zero candidates.
    let mut pending: Vec<ProbeTask> = Vec::new();
    for &j in &high {
        let predicted = price(&[], &[j]);
        if predicted < z_lb - PROBE_EPS {
            state[j] = 1;
            out.fixed_to_one.push(j);
            out.counts.forced_in += 1;
        } else {
            pending.push(ProbeTask { ones: vec![], zeros: vec![j], predicted });
        }
    }
    for &j in &low {
        if state[j] != 0 {
            continue;
        }
        let predicted = price(&[j], &[]);
        if predicted < z_lb - PROBE_EPS {
            state[j] = 2;
            out.fixed_to_zero.push(j);
            out.counts.forced_out += 1;
        } else {
            pending.push(ProbeTask { ones: vec![j], zeros: vec![], predicted });
        }
    }
    pending.sort_by(|a, b| {
        a.predicted
            .partial_cmp(&b.predicted)
            .unwrap()
            .then(a.ones.cmp(&b.ones))
            .then(a.zeros.cmp(&b.zeros))
    });
    for task in pending {
        let touched: Vec<usize> = task.ones.iter().chain(&task.zeros).copied().collect();
        if touched.iter().any(|&i| state[i] != 0) {
            continue;
        }
        let Some(bound) =
            solve_probe(&task.ones, &task.zeros, &state, &mut fw_budget, &mut out.fw_probes)?
        else {
            break;
        };
        if bound < z_lb - PROBE_EPS {
            if let [j] = task.zeros[..] {
                state[j] = 1;
                out.fixed_to_one.push(j);
                out.counts.forced_in += 1;
            } else if let [j] = task.ones[..] {
                state[j] = 2;
                out.fixed_to_zero.push(j);
                out.counts.forced_out += 1;
            }
        }
    }

    // Pairs among the surviving candidates.
    let alive = |idx: &[usize], state: &[u8]| idx.iter().all(|&i| state[i] == 0);
    let mut pair_tasks: Vec<ProbeTask> = Vec::new();
    for (pa, &j) in high.iter().enumerate() {
        for &l in high.iter().skip(pa + 1) {
            pair_tasks.push(ProbeTask { ones: vec![], zeros: vec![j, l], predicted: 0.0 });
        }
    }
    for (pa, &j) in low.iter().enumerate() {
        for &l in low.iter().skip(pa + 1) {
            pair_tasks.push(ProbeTask { ones: vec![j, l], zeros: vec![], predicted: 0.0 });
        }
    }
    for &j in &low {
        for &l in &high {
            pair_tasks.push(ProbeTask { ones: vec![j], zeros: vec![l], predicted: 0.0 });
        }
    }
    let apply_pair = |task: &ProbeTask, out: &mut ProbeOutcome| match (
        task.zeros.len(),
        task.ones.len(),
    ) {
        (2, 0) => {
            out.cover_cuts.push(LinearCut::cover(task.zeros.clone()));
            out.counts.cover += 1;
        }
        (0, 2) => {
            out.packing_cuts.push(LinearCut::packing(task.ones.clone()));
            out.counts.packing += 1;
        }
        _ => {
            out.disjunctions
                .push(Disjunction { ones: task.ones.clone(), zeros: task.zeros.clone() });
            out.counts.disjunction += 1;
        }
    };
    let mut undecided: Vec<ProbeTask> = Vec::new();
    for mut task in pair_tasks {
        let touched: Vec<usize> = task.ones.iter().chain(&task.zeros).copied().collect();
        if !alive(&touched, &state) {
            continue;
        }
        task.predicted = price(&task.ones, &task.zeros);
        if task.predicted < z_lb - PROBE_EPS {
            apply_pair(&task, &mut out);
        } else {
            undecided.push(task);
        }
    }
    undecided.sort_by(|a, b| {
        a.predicted
            .partial_cmp(&b.predicted)
            .unwrap()
            .then(a.ones.cmp(&b.ones))
            .then(a.zeros.cmp(&b.zeros))
    });
    for task in undecided {
        let touched: Vec<usize> = task.ones.iter().chain(&task.zeros).copied().collect();
        if !alive(&touched, &state) {
            continue;
        }
        let Some(bound) =
            solve_probe(&task.ones, &task.zeros, &state, &mut fw_budget, &mut out.fw_probes)?
        else {
            break;
        };
        if bound < z_lb - PROBE_EPS {
            apply_pair(&task, &mut out);
        }
    }
    Ok(out)
}

// ── Unit propagation ────────────────────────────────────────────────────────

#[derive(Clone, Copy, PartialEq, Eq)]
enum PropResult {
    Feasible,
    Infeasible,
}

/// Propagates budget limits, cardinality cuts, and disjunctions to a
/// fixpoint over the 0/1/undecided state vector.
fn propagate(n: usize, s: usize, pool: &CutPool, state: &mut [u8]) -> PropResult {
    loop {
        let mut changed = false;
        let cin = state.iter().filter(|&&v| v == 1).count();
        let cout = state.iter().filter(|&&v| v == 2).count();
        if cin > s || n - cout < s {
            return PropResult::Infeasible;
        }
        if cin == s {
            for v in state.iter_mut() {
                if *v == 0 {
                    *v = 2;
                    changed = true;
                }
            }
        } else if n - cout == s {
            for v in state.iter_mut() {
                if *v == 0 {
                    *v = 1;
                    changed = true;
                }
            }
        }
        for cut in pool.cuts() {
            match cut.kind {
                CutKind::CardLe => {
                    let rhs = cut.origin.len() - 1;
                    let ones = cut.origin.iter().filter(|&&i| state[i] == 1).count();
                    let open: Vec<usize> = cut
                        .origin
                        .iter()
                        .copied()
                        .filter(|&i| state[i] == 0)
                        .collect();
                    if ones > rhs {
                        return PropResult::Infeasible;
                    }
                    if ones == rhs && !open.is_empty() {
                        for i in open {
                            state[i] = 2;
                        }
                        changed = true;
                    }
                }
                CutKind::CardGe => {
                    let zeros = cut.origin.iter().filter(|&&i| state[i] == 2).count();
                    let ones = cut.origin.iter().filter(|&&i| state[i] == 1).count();
                    if zeros == cut.origin.len() {
                        return PropResult::Infeasible;
                    }
                    if ones == 0 && zeros == cut.origin.len() - 1 {
                        if let Some(&i) =
                            cut.origin.iter().find(|&&i| state[i] == 0)
                        {
                            state[i] = 1;
                            changed = true;
                        }
                    }
                }
                _ => {}
            }
        }
        for dis in pool.disjunctions() {
            let sat = dis.ones.iter().any(|&i| state[i] == 2)
                || dis.zeros.iter().any(|&i| state[i] == 1);
            if sat {
                continue;
            }
            let open: Vec<(usize, u8)> = dis
                .ones
                .iter()
                .map(|&i| (i, 2u8))
                .chain(dis.zeros.iter().map(|&i| (i, 1u8)))
                .filter(|&(i, _)| state[i] == 0)
                .collect();
            match open.len() {
                0 => return PropResult::Infeasible,
                1 => {
                    let (i, forced) = open[0];
                    state[i] = forced;
                    changed = true;
                }
                _ => {}
            }
        }
        if !changed {
            return PropResult::Feasible;
        }
    }
}

// ── Brute force ─────────────────────────────────────────────────────────────

fn binomial_capped(n: usize, k: usize, cap: u128) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i + 1) as u128;
        if acc > cap {
            return acc;
        }
    }
    acc
}

struct EnumState<'a> {
    inst: &'a DdfInstance,
    stack: Vec<usize>,
    lambda: SymMatrix,
    logdet: f64,
    updates: usize,
    best: f64,
    best_set: Vec<usize>,
}

impl EnumState<'_> {
    fn refresh(&mut self) {
        let mut x = SymMatrix::identity(self.inst.d());
        for &i in &self.stack {
            x.add_outer(self.inst.b_col(i), 1.0);
        }
        let fac = cholesky(&x).expect("enumeration matrix stays positive definite");
        self.logdet = fac.logdet();
        self.lambda = fac.inverse();
    }

    fn push(&mut self, i: usize) {
        let (ld, lam) =
            rank_one_logdet_update(self.logdet, &self.lambda, self.inst.b_col(i), UpdateSign::Add)
                .expect("rank-one addition cannot be singular");
        self.logdet = ld;
        self.lambda = lam;
        self.stack.push(i);
        self.bump();
    }

    fn pop(&mut self) {
        let i = self.stack.pop().expect("pop matches push");
        if let Ok((ld, lam)) = rank_one_logdet_update(
            self.logdet,
            &self.lambda,
            self.inst.b_col(i),
            UpdateSign::Remove,
        ) {
            self.logdet = ld;
            self.lambda = lam;
            self.bump();
        } else {
            self.refresh();
        }
    }

    fn bump(&mut self) {
        self.updates += 1;
        if self.updates.is_multiple_of(ENUM_REFRESH) {
            self.refresh();
        }
    }

    fn recurse(&mut self, from: usize, need: usize) {
        if need == 0 {
            if self.logdet > self.best {
                self.best = self.logdet;
                self.best_set = self.stack.clone();
            }
            return;
        }
        let n = self.inst.n();
        for i in from..=n - need {
            self.push(i);
            self.recurse(i + 1, need - 1);
            self.pop();
        }
    }
}

/// Exhaustive search by depth-first enumeration with incremental rank-one
/// determinant updates, parallelized over the smallest selected index.
/// Refuses instances with more than [`BRUTE_FORCE_CAP`] subsets.
pub fn brute_force(inst: &DdfInstance) -> Result<Selection, ExactError> {
    let (n, s) = (inst.n(), inst.s());
    let count = binomial_capped(n, s, BRUTE_FORCE_CAP);
    if count > BRUTE_FORCE_CAP {
        return Err(ExactError::TooLarge { count, cap: BRUTE_FORCE_CAP });
    }
    let firsts: Vec<usize> = (0..=n - s).collect();
    let bests = par::map_slice(&firsts, |&m| {
        let mut st = EnumState {
            inst,
            stack: Vec::with_capacity(s),
            lambda: SymMatrix::identity(inst.d()),
            logdet: 0.0,
            updates: 0,
            best: f64::NEG_INFINITY,
            best_set: Vec::new(),
        };
        st.push(m);
        st.recurse(m + 1, s - 1);
        (st.best, st.best_set)
    });
    let mut best = f64::NEG_INFINITY;
    let mut best_set = Vec::new();
    for (v, set) in bests {
        if v > best {
            best = v;
            best_set = set;
        }
    }
    Ok(Selection::new(inst, best_set))
}

// ── Branch and bound ────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Optimal,
    NodeLimit,
    TimeLimit,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BnbConfig {
    /// Absolute optimality gap at which the search stops.
    pub gap_tol: f64,
    pub max_nodes: Option<usize>,
    pub time_limit_ms: Option<u64>,
    pub root_fw_iters: usize,
    pub node_fw_iters: usize,
    /// Seed and refresh gradient cuts.
    pub grad_cuts: bool,
    /// Seed and refresh submodular cuts.
    pub submod_cuts: bool,
    /// Optimality-based probing: root pair probing plus certificate fixing
    /// at every node.
    pub opt_cuts: bool,
}

impl Default for BnbConfig {
    fn default() -> Self {
        BnbConfig {
            gap_tol: 1e-6,
            max_nodes: None,
            time_limit_ms: None,
            root_fw_iters: 2000,
            node_fw_iters: 200,
            grad_cuts: true,
            submod_cuts: true,
            opt_cuts: true,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BoundMilestone {
    pub nodes: usize,
    pub bound: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BnbResult {
    pub incumbent: Selection,
    pub global_bound: f64,
    pub mip_gap: f64,
    pub nodes_explored: usize,
    pub cut_counts: CutCounts,
    pub pool_cuts: usize,
    pub fixed_to_one: Vec<usize>,
    pub fixed_to_zero: Vec<usize>,
    pub wall_time_ms: u64,
    pub solved: bool,
    pub termination: Termination,
    pub bound_history: Vec<BoundMilestone>,
}

struct Node {
    fixed_in: Vec<usize>,
    fixed_out: Vec<usize>,
    bound: f64,
    depth: usize,
}

struct RootContext {
    incumbent: Selection,
    points: Vec<(Formulation, FracPoint)>,
    certs: Vec<DualCertificate>,
    bound: f64,
}

fn root_relax(inst: &DdfInstance, iters: usize) -> Result<RootContext, ExactError> {
    let ls = local_search(inst, None)?;
    let opts = FwOptions { max_iters: iters, tol: 1e-8 };
    let forms = [Formulation::R, Formulation::M, Formulation::Mc];
    let runs = par::map_slice(&forms, |&f| frank_wolfe(inst, f, &[], &[], &opts, None));
    let mut points = Vec::with_capacity(3);
    let mut certs = Vec::with_capacity(3);
    let mut bound = f64::INFINITY;
    for (slot, run) in runs.into_iter().enumerate() {
        let (point, cert) = run?;
        bound = bound.min(cert.bound);
        points.push((forms[slot], point));
        certs.push(cert);
    }
    Ok(RootContext { incumbent: ls.selection, points, certs, bound })
}

/// Root relaxations plus the full probing pass; the entry point behind the
/// `probe` command.
pub fn root_probe(inst: &DdfInstance, fw_iters: usize) -> Result<RootProbe, ExactError> {
    let ctx = root_relax(inst, fw_iters)?;
    let z_lb = ctx.incumbent.objective;
    let (to_one, to_zero) = probe_fix(inst, &ctx.certs, z_lb);
    let sel_x = best_point(&ctx).selection_x();
    let warm_r = point_for(&ctx, Formulation::R).x.clone();
    let mut outcome =
        probe_pairs(inst, &ctx.certs, &sel_x, z_lb, &to_one, &to_zero, Some(&warm_r))?;
    for &i in &to_one {
        outcome.fixed_to_one.push(i);
        outcome.counts.forced_in += 1;
    }
    for &i in &to_zero {
        outcome.fixed_to_zero.push(i);
        outcome.counts.forced_out += 1;
    }
    outcome.fixed_to_one.sort_unstable();
    outcome.fixed_to_zero.sort_unstable();
    Ok(RootProbe { incumbent: ctx.incumbent, root_bound: ctx.bound, outcome })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RootProbe {
    pub incumbent: Selection,
    pub root_bound: f64,
    pub outcome: ProbeOutcome,
}

fn best_point(ctx: &RootContext) -> &FracPoint {
    ctx.points
        .iter()
        .map(|(_, p)| p)
        .min_by(|a, b| a.bound.partial_cmp(&b.bound).unwrap())
        .expect("root points exist")
}

fn point_for(ctx: &RootContext, form: Formulation) -> &FracPoint {
    &ctx.points
        .iter()
        .find(|(f, _)| *f == form)
        .expect("all root formulations present")
        .1
}

/// Certified exact solve by best-bound branch-and-bound.
///
/// The root seeds an incumbent by local search, runs the three relaxations,
/// probes (under `opt_cuts`), and stocks the cut pool at the incumbent. Each
/// node propagates fixings to a fixpoint, detects integer completions,
/// bounds itself by the cheapest of inherited, cut-pool, and restricted
/// relaxation bounds, applies certificate fixing, and branches on the
/// largest certificate load residual. Node processing order is best bound
/// with a depth dive every fiftieth node; all parallelism sits inside node
/// evaluation, so node counts are reproducible.
pub fn solve_bnb(inst: &DdfInstance, cfg: &BnbConfig) -> Result<BnbResult, ExactError> {
    let t0 = Instant::now();
    let (n, s) = (inst.n(), inst.s());
    let ctx = root_relax(inst, cfg.root_fw_iters)?;
    let mut incumbent = ctx.incumbent.clone();
    let mut pool = CutPool::new();
    let mut counts = CutCounts::default();
    let mut root_in: Vec<usize> = Vec::new();
    let mut root_out: Vec<usize> = Vec::new();

    if cfg.grad_cuts {
        for cut in gradient_cuts(inst, &incumbent.indices)? {
            pool.add(cut);
        }
    }
    if cfg.submod_cuts {
        for cut in submodular_cuts(inst, &incumbent.indices)? {
            pool.add(cut);
        }
    }
    if cfg.opt_cuts {
        let (to_one, to_zero) = probe_fix(inst, &ctx.certs, incumbent.objective);
        counts.forced_in += to_one.len();
        counts.forced_out += to_zero.len();
        root_in = to_one;
        root_out = to_zero;
        let sel_x = best_point(&ctx).selection_x();
        let warm_r = point_for(&ctx, Formulation::R).x.clone();
        let outcome = probe_pairs(
            inst,
            &ctx.certs,
            &sel_x,
            incumbent.objective,
            &root_in,
            &root_out,
            Some(&warm_r),
        )?;
        counts.absorb(&outcome.counts);
        root_in.extend(outcome.fixed_to_one);
        root_out.extend(outcome.fixed_to_zero);
        root_in.sort_unstable();
        root_out.sort_unstable();
        for cut in outcome.cover_cuts.into_iter().chain(outcome.packing_cuts) {
            pool.add(cut);
        }
        for d in outcome.disjunctions {
            pool.add_disjunction(d);
        }
    }

    let node_opts = FwOptions { max_iters: cfg.node_fw_iters, tol: 1e-7 };
    let mut open = vec![Node {
        fixed_in: root_in.clone(),
        fixed_out: root_out.clone(),
        bound: ctx.bound,
        depth: 0,
    }];
    let mut nodes_explored = 0usize;
    let mut history = vec![BoundMilestone { nodes: 0, bound: ctx.bound }];
    let mut last_global = ctx.bound;
    let mut termination = Termination::Optimal;
    let mut final_bound;

    loop {
        if open.is_empty() {
            final_bound = incumbent.objective;
            break;
        }
        let global = open
            .iter()
            .map(|nd| nd.bound)
            .fold(f64::NEG_INFINITY, f64::max)
            .max(incumbent.objective);
        if global < last_global {
            last_global = global;
            history.push(BoundMilestone { nodes: nodes_explored, bound: global });
        }
        final_bound = global;
        if global - incumbent.objective <= cfg.gap_tol {
            break;
        }
        if let Some(limit) = cfg.max_nodes {
            if nodes_explored >= limit {
                termination = Termination::NodeLimit;
                break;
            }
        }
        if let Some(ms) = cfg.time_limit_ms {
            if t0.elapsed().as_millis() as u64 >= ms {
                termination = Termination::TimeLimit;
                break;
            }
        }

        let dive = (nodes_explored + 1).is_multiple_of(50);
        let mut pick = 0usize;
        for (i, nd) in open.iter().enumerate() {
            let better = if dive {
                nd.depth > open[pick].depth
                    || (nd.depth == open[pick].depth && nd.bound > open[pick].bound)
            } else {
                nd.bound > open[pick].bound
            };
            if better {
                pick = i;
            }
        }
        let node = open.swap_remove(pick);
        if node.bound <= incumbent.objective + cfg.gap_tol {
            continue;
        }
        nodes_explored += 1;

        let mut state = vec![0u8; n];
        for &i in &node.fixed_in {
            state[i] = 1;
        }
        for &i in &node.fixed_out {
            state[i] = 2;
        }
        if propagate(n, s, &pool, &mut state) == PropResult::Infeasible {
            continue;
        }

        // Completion after propagation?
        let fixed_in: Vec<usize> = (0..n).filter(|&i| state[i] == 1).collect();
        let fixed_out: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        if fixed_in.len() == s {
            complete(
                inst,
                &fixed_in,
                &mut incumbent,
                &mut pool,
                cfg,
            )?;
            continue;
        }

        let mut nb = node.bound;
        nb = nb.min(cut_pool_bound(inst, &pool, &fixed_in, &fixed_out));
        if nb <= incumbent.objective + cfg.gap_tol {
            continue;
        }

        let mut forms = vec![Formulation::R, Formulation::M];
        if n - s < s {
            forms.push(Formulation::Mc);
        }
        let runs = par::map_slice(&forms, |&f| {
            frank_wolfe(inst, f, &fixed_in, &fixed_out, &node_opts, Some(&point_for(&ctx, f).x))
        });
        let mut node_certs = Vec::with_capacity(forms.len());
        for run in runs {
            let (_, cert) = run?;
            nb = nb.min(cert.bound);
            node_certs.push(cert);
        }
        if nb <= incumbent.objective + cfg.gap_tol {
            continue;
        }

        let (mut work_in, mut work_out) = (fixed_in, fixed_out);
        if cfg.opt_cuts {
            let (to_one, to_zero) = probe_fix(inst, &node_certs, incumbent.objective);
            if !to_one.is_empty() || !to_zero.is_empty() {
                counts.forced_in += to_one.len();
                counts.forced_out += to_zero.len();
                for &i in &to_one {
                    state[i] = 1;
                }
                for &i in &to_zero {
                    state[i] = 2;
                }
                if propagate(n, s, &pool, &mut state) == PropResult::Infeasible {
                    continue;
                }
                work_in = (0..n).filter(|&i| state[i] == 1).collect();
                work_out = (0..n).filter(|&i| state[i] == 2).collect();
                if work_in.len() == s {
                    complete(inst, &work_in, &mut incumbent, &mut pool, cfg)?;
                    continue;
                }
            }
        }

        // Branch on the largest certificate load residual of the tightest
        // certificate.
        let best_cert = node_certs
            .iter()
            .min_by(|a, b| a.bound.partial_cmp(&b.bound).unwrap())
            .expect("at least one node certificate");
        let mut branch = usize::MAX;
        let mut branch_score = f64::NEG_INFINITY;
        for i in 0..n {
            if state[i] != 0 {
                continue;
            }
            let score = (best_cert.w[i] - best_cert.nu).abs();
            if score > branch_score {
                branch_score = score;
                branch = i;
            }
        }
        debug_assert!(branch != usize::MAX);
        let mut in_child = work_in.clone();
        in_child.push(branch);
        in_child.sort_unstable();
        let mut out_child = work_out.clone();
        out_child.push(branch);
        out_child.sort_unstable();
        open.push(Node {
            fixed_in: in_child,
            fixed_out: work_out,
            bound: nb,
            depth: node.depth + 1,
        });
        open.push(Node {
            fixed_in: work_in,
            fixed_out: out_child,
            bound: nb,
            depth: node.depth + 1,
        });
    }

    if final_bound < last_global {
        history.push(BoundMilestone { nodes: nodes_explored, bound: final_bound });
    }
    let global_bound = final_bound;
    let mip_gap = (global_bound - incumbent.objective).max(0.0);
    let solved = termination == Termination::Optimal;
    Ok(BnbResult {
        incumbent,
        global_bound,
        mip_gap,
        nodes_explored,
        cut_counts: counts,
        pool_cuts: pool.len(),
        fixed_to_one: root_in,
        fixed_to_zero: root_out,
        wall_time_ms: t0.elapsed().as_millis() as u64,
        solved,
        termination,
        bound_history: history,
    })
}

fn complete(
    inst: &DdfInstance,
    indices: &[usize],
    incumbent: &mut Selection,
    pool: &mut CutPool,
    cfg: &BnbConfig,
) -> Result<(), ExactError> {
    let sel = Selection::new(inst, indices.to_vec());
    if cfg.grad_cuts {
        for cut in gradient_cuts(inst, &sel.indices)? {
            pool.add(cut);
        }
    }
    if cfg.submod_cuts {
        for cut in submodular_cuts(inst, &sel.indices)? {
            pool.add(cut);
        }
    }
    if sel.objective > incumbent.objective {
        *incumbent = sel;
    }
    Ok(())
}
