//! Approximation algorithms with certified quality: greedy seeding, swap
//! local search, proportional volume sampling, and its derandomization.
//!
//! Local search carries an a-priori optimality-gap guarantee driven by the
//! candidate spectrum; sampling from the weights of a fractional relaxation
//! point achieves the relaxation value in expectation, and the conditional-
//! expectation derandomization turns that into a deterministic selection at
//! least as good as the expectation.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{DdfInstance, InstanceError, Selection};
use crate::linalg::{
    cholesky, log_elem_sym_poly, rank_one_logdet_update, sym_eig, LinalgError, SymMatrix,
    UpdateSign,
};
use crate::par;
use crate::relax::{frank_wolfe, FracPoint, Formulation, FwOptions, RelaxError};

/// Strict improvement margin for accepting a swap.
pub const SWAP_EPS: f64 = 1e-9;

/// Rank-one updates applied to a cached inverse before a full refresh.
const REFRESH_PERIOD: usize = 64;

#[derive(Debug, Error)]
pub enum ApproxError {
    #[error("invalid initial selection: {0}")]
    BadInit(String),
    #[error(transparent)]
    Relax(#[from] RelaxError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Instance(#[from] InstanceError),
}

// ── Greedy ──────────────────────────────────────────────────────────────────

/// Largest-gain greedy: repeatedly adds the candidate with the biggest
/// one-step determinant increase, smallest index on ties.
pub fn greedy(inst: &DdfInstance) -> Selection {
    let n = inst.n();
    let s = inst.s();
    let mut lambda = SymMatrix::identity(inst.d());
    let mut logdet = 0.0;
    let mut taken = vec![false; n];
    let mut picked = Vec::with_capacity(s);
    for _ in 0..s {
        let mut best = usize::MAX;
        let mut best_gain = f64::NEG_INFINITY;
        for j in 0..n {
            if taken[j] {
                continue;
            }
            let gain = lambda.quad_form(inst.b_col(j));
            if gain > best_gain {
                best_gain = gain;
                best = j;
            }
        }
        let (ld, lam) =
            rank_one_logdet_update(logdet, &lambda, inst.b_col(best), UpdateSign::Add)
                .expect("greedy update cannot be singular");
        logdet = ld;
        lambda = lam;
        taken[best] = true;
        picked.push(best);
    }
    Selection::new(inst, picked)
}

// ── Local search ────────────────────────────────────────────────────────────

/// Outcome of the swap local search.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocalSearchOutcome {
    pub selection: Selection,
    /// Accepted swaps.
    pub swaps: usize,
    /// Full improvement scans, including the fresh-inverse verification.
    pub scans: usize,
}

/// A-priori gap guarantee for the local search optimum.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LsGuarantee {
    /// `d·log(1 + s̄·σ²/(d(1+σ)))` with `σ` the largest whitened candidate
    /// norm and `s̄ = min(s, n-s)`.
    pub spectral: f64,
    /// `s̄·log s̄`, independent of the data.
    pub cardinality: f64,
    /// The tighter of the two; the local search value is within this of the
    /// optimum.
    pub guarantee: f64,
}

/// Gap guarantee valid for any swap-optimal selection of the instance.
pub fn local_search_guarantee(inst: &DdfInstance) -> LsGuarantee {
    let d = inst.d() as f64;
    let sbar = inst.s().min(inst.n() - inst.s()) as f64;
    let sigma = inst.sigma_max();
    let spectral = d * (1.0 + sbar * sigma * sigma / (d * (1.0 + sigma))).ln();
    let cardinality = if sbar > 0.0 { sbar * sbar.ln() } else { 0.0 };
    LsGuarantee { spectral, cardinality, guarantee: spectral.min(cardinality) }
}

/// First-improvement swap local search.
///
/// Starts from `init` (defaults to the greedy selection), scans removal
/// candidates in ascending index order against insertion candidates in
/// ascending index order, and accepts the first swap that increases the
/// determinant by more than [`SWAP_EPS`]. The cached inverse is refreshed
/// after every [`REFRESH_PERIOD`] rank-one updates, and termination is only
/// declared after a no-improvement scan against a freshly computed inverse.
pub fn local_search(
    inst: &DdfInstance,
    init: Option<&[usize]>,
) -> Result<LocalSearchOutcome, ApproxError> {
    let n = inst.n();
    let s = inst.s();
    let mut current: Vec<usize> = match init {
        Some(idx) => {
            let mut v = idx.to_vec();
            v.sort_unstable();
            v.dedup();
            if v.len() != s {
                return Err(ApproxError::BadInit(format!(
                    "expected {s} distinct indices, got {}",
                    v.len()
                )));
            }
            if let Some(&bad) = v.iter().find(|&&i| i >= n) {
                return Err(ApproxError::BadInit(format!("index {bad} out of range")));
            }
            v
        }
        None => greedy(inst).indices,
    };

    let fresh_inverse = |sel: &[usize]| -> Result<SymMatrix, ApproxError> {
        let mut x = SymMatrix::identity(inst.d());
        for &i in sel {
            x.add_outer(inst.b_col(i), 1.0);
        }
        Ok(cholesky(&x)?.inverse())
    };

    let mut lambda = fresh_inverse(&current)?;
    let mut in_sel = vec![false; n];
    for &i in &current {
        in_sel[i] = true;
    }
    let mut swaps = 0usize;
    let mut scans = 0usize;
    let mut updates = 0usize;
    let mut verified = false;

    'outer: loop {
        scans += 1;
        let quad: Vec<f64> = par::map_indices(n, |j| lambda.quad_form(inst.b_col(j)));
        for (slot, &i) in current.iter().enumerate() {
            let gi = quad[i];
            let ti = lambda.mul_vec(inst.b_col(i));
            for j in 0..n {
                if in_sel[j] {
                    continue;
                }
                let gj = quad[j];
                let cross: f64 = ti.iter().zip(inst.b_col(j)).map(|(a, b)| a * b).sum();
                if gj - gi * gj + cross * cross > gi + SWAP_EPS {
                    let (_, lam_rm) =
                        rank_one_logdet_update(0.0, &lambda, inst.b_col(i), UpdateSign::Remove)?;
                    let (_, lam_add) =
                        rank_one_logdet_update(0.0, &lam_rm, inst.b_col(j), UpdateSign::Add)?;
                    lambda = lam_add;
                    in_sel[i] = false;
                    in_sel[j] = true;
                    current[slot] = j;
                    current.sort_unstable();
                    swaps += 1;
                    updates += 2;
                    if updates % REFRESH_PERIOD < 2 {
                        lambda = fresh_inverse(&current)?;
                    }
                    verified = false;
                    continue 'outer;
                }
            }
        }
        if verified {
            break;
        }
        lambda = fresh_inverse(&current)?;
        verified = true;
    }

    Ok(LocalSearchOutcome { selection: Selection::new(inst, current), swaps, scans })
}

// ── Proportional sampling ───────────────────────────────────────────────────

/// Draws a `budget`-subset with probability proportional to the product of
/// the member weights, by sequential conditionals over suffix elementary
/// symmetric polynomials. Weights must be finite, nonnegative, and carry at
/// least `budget` strictly positive entries.
pub fn sample_subset<R: Rng + ?Sized>(weights: &[f64], budget: usize, rng: &mut R) -> Vec<usize> {
    let n = weights.len();
    assert!(budget <= n, "budget exceeds ground set");
    assert!(
        weights.iter().all(|w| w.is_finite() && *w >= 0.0),
        "weights must be finite and nonnegative"
    );
    if budget == 0 {
        return Vec::new();
    }
    let lw: Vec<f64> = weights
        .iter()
        .map(|&w| if w > 0.0 { w.ln() } else { f64::NEG_INFINITY })
        .collect();
    // esp[i][r] = log e_r over the suffix starting at i.
    let mut esp = vec![vec![f64::NEG_INFINITY; budget + 1]; n + 1];
    for row in esp.iter_mut() {
        row[0] = 0.0;
    }
    for i in (0..n).rev() {
        for r in 1..=budget {
            let keep = esp[i + 1][r];
            let take = lw[i] + esp[i + 1][r - 1];
            esp[i][r] = crate::linalg::log_add_exp(keep, take);
        }
    }
    assert!(
        esp[0][budget] > f64::NEG_INFINITY,
        "fewer than budget weights are positive"
    );
    let mut out = Vec::with_capacity(budget);
    let mut rem = budget;
    for i in 0..n {
        if rem == 0 {
            break;
        }
        let p = (lw[i] + esp[i + 1][rem - 1] - esp[i][rem]).exp();
        if rng.random::<f64>() < p {
            out.push(i);
            rem -= 1;
        }
    }
    debug_assert_eq!(out.len(), budget);
    out
}

/// Draws a selection from the weights of a fractional point. Complement-
/// space points sample the excluded subset and return its complement.
pub fn sample_selection<R: Rng + ?Sized>(
    inst: &DdfInstance,
    point: &FracPoint,
    rng: &mut R,
) -> Selection {
    let budget = point.formulation.budget(inst);
    let drawn = sample_subset(&point.x, budget, rng);
    let indices = if point.formulation.is_complement() {
        let mut excluded = vec![false; inst.n()];
        for &i in &drawn {
            excluded[i] = true;
        }
        (0..inst.n()).filter(|&i| !excluded[i]).collect()
    } else {
        drawn
    };
    Selection::new(inst, indices)
}

/// Log-expectation of the selected determinant under proportional sampling
/// from `weights` over the remaining `pool`, with everything in `c_cur`
/// already committed. `s_rem` counts selection slots still open; in
/// complement space the sampled subset is the exclusion set of size
/// `pool.len() - s_rem`.
fn reduced_log_expectation(
    inst: &DdfInstance,
    c_cur: &SymMatrix,
    pool: &[usize],
    weights: &[f64],
    s_rem: usize,
    complement: bool,
) -> Result<f64, ApproxError> {
    let m = pool.len();
    debug_assert_eq!(weights.len(), m);
    let r = if complement { m - s_rem } else { s_rem };
    let denom = log_elem_sym_poly(weights, r);
    if denom == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let fac = cholesky(c_cur)?;
    let ld_c = fac.logdet();
    if r == 0 {
        // Deterministic: the sampled set is empty.
        return Ok(if complement {
            let mut big = c_cur.clone();
            for &j in pool {
                big.add_outer(inst.a_col(j), 1.0);
            }
            cholesky(&big)?.logdet()
        } else {
            ld_c
        });
    }
    let mut msub = SymMatrix::identity(m);
    let solved: Vec<Vec<f64>> = par::map_slice(pool, |&j| fac.solve(inst.a_col(j)));
    for p in 0..m {
        for q in p..m {
            let dot: f64 = inst
                .a_col(pool[p])
                .iter()
                .zip(&solved[q])
                .map(|(a, b)| a * b)
                .sum();
            msub.set(p, q, msub.get(p, q) + dot);
        }
    }
    let (core, constant) = if complement {
        let fac_m = cholesky(&msub)?;
        let ld_m = fac_m.logdet();
        (fac_m.inverse(), ld_c + ld_m)
    } else {
        (msub, ld_c)
    };
    let mut scaled = SymMatrix::zeros(m);
    for p in 0..m {
        for q in p..m {
            scaled.set(p, q, (weights[p] * weights[q]).sqrt() * core.get(p, q));
        }
    }
    let eig = sym_eig(&scaled)?;
    let lam: Vec<f64> = eig.values.iter().map(|&v| v.max(0.0)).collect();
    let numer = log_elem_sym_poly(&lam, r);
    Ok(constant + numer - denom)
}

/// Exact log-expectation of the selected determinant when sampling from the
/// weights of `point` over the full candidate set.
pub fn sampling_expectation_exact(
    inst: &DdfInstance,
    point: &FracPoint,
) -> Result<f64, ApproxError> {
    let pool: Vec<usize> = (0..inst.n()).collect();
    reduced_log_expectation(
        inst,
        inst.c(),
        &pool,
        &point.x,
        inst.s(),
        point.formulation.is_complement(),
    )
}

/// Conditional-expectation derandomization of proportional sampling.
///
/// Processes candidates in index order; each is committed to the branch
/// (selected or rejected) with the larger conditional expectation, computed
/// exactly on the reduced instance. The final selection value is at least
/// the initial sampling expectation. Weights at the box boundary are
/// committed to their deterministic branch outright.
pub fn derandomize(inst: &DdfInstance, point: &FracPoint) -> Result<Selection, ApproxError> {
    let n = inst.n();
    let complement = point.formulation.is_complement();
    let mut c_cur = inst.c().clone();
    let mut s_rem = inst.s();
    let mut chosen: Vec<usize> = Vec::with_capacity(inst.s());
    for i in 0..n {
        let m = n - i;
        let xw = point.x[i];
        let rest: Vec<usize> = (i + 1..n).collect();
        let w_rest: Vec<f64> = rest.iter().map(|&j| point.x[j]).collect();
        // A zero weight means zero probability for its branch, so committing
        // to the other branch keeps the running expectation unchanged; every
        // other forced move (drop branch infeasible under the remaining
        // weights) shows up as a -inf branch expectation below.
        let select_i = if s_rem == 0 {
            false
        } else if s_rem == m {
            true
        } else if complement {
            // xw weights exclusion of i.
            if xw <= 1e-12 {
                true
            } else {
                let e_excl =
                    reduced_log_expectation(inst, &c_cur, &rest, &w_rest, s_rem, true)?;
                let mut c_take = c_cur.clone();
                c_take.add_outer(inst.a_col(i), 1.0);
                let e_keep =
                    reduced_log_expectation(inst, &c_take, &rest, &w_rest, s_rem - 1, true)?;
                e_keep >= e_excl
            }
        } else if xw <= 1e-12 {
            false
        } else {
            let e_drop = reduced_log_expectation(inst, &c_cur, &rest, &w_rest, s_rem, false)?;
            let mut c_take = c_cur.clone();
            c_take.add_outer(inst.a_col(i), 1.0);
            let e_take =
                reduced_log_expectation(inst, &c_take, &rest, &w_rest, s_rem - 1, false)?;
            e_take >= e_drop
        };
        if select_i {
            c_cur.add_outer(inst.a_col(i), 1.0);
            chosen.push(i);
            s_rem -= 1;
        }
    }
    debug_assert_eq!(chosen.len(), inst.s());
    Ok(Selection::new(inst, chosen))
}

// ── Aggregate runner ────────────────────────────────────────────────────────

/// One method's answer inside an [`ApproxReport`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MethodResult {
    pub indices: Vec<usize>,
    pub value: f64,
}

impl MethodResult {
    fn from_selection(sel: &Selection) -> Self {
        MethodResult { indices: sel.indices.clone(), value: sel.objective }
    }
}

/// Combined output of the approximation pipeline.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ApproxReport {
    pub local_search: MethodResult,
    pub swaps: usize,
    pub guarantee: LsGuarantee,
    pub greedy: MethodResult,
    /// Formulation whose relaxation point drove sampling and derandomization.
    pub sampling_formulation: Formulation,
    pub relaxation_bound: f64,
    pub sampling_log_expectation: f64,
    pub sampling_draws: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampling_best: Option<MethodResult>,
    pub derandomized: MethodResult,
    pub best: MethodResult,
    pub best_method: String,
}

/// Runs greedy, local search, relaxation-guided sampling (`draws` draws
/// seeded by `seed`), and derandomization; reports every answer and the
/// best overall. The relaxation point is taken from whichever of the three
/// bound formulations certifies the smallest bound.
pub fn run_approx(
    inst: &DdfInstance,
    draws: usize,
    seed: u64,
    opts: &FwOptions,
) -> Result<ApproxReport, ApproxError> {
    use rand::SeedableRng;

    let ls = local_search(inst, None)?;
    let greedy_sel = greedy(inst);

    let forms = [Formulation::R, Formulation::M, Formulation::Mc];
    let runs = par::map_slice(&forms, |&f| frank_wolfe(inst, f, &[], &[], opts, None));
    let mut best_point: Option<FracPoint> = None;
    for run in runs {
        let (point, _) = run?;
        if best_point.as_ref().is_none_or(|p| point.bound < p.bound) {
            best_point = Some(point);
        }
    }
    let point = best_point.expect("three formulations ran");

    let log_expectation = sampling_expectation_exact(inst, &point)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut sampling_best: Option<MethodResult> = None;
    for _ in 0..draws {
        let sel = sample_selection(inst, &point, &mut rng);
        if sampling_best.as_ref().is_none_or(|b| sel.objective > b.value) {
            sampling_best = Some(MethodResult::from_selection(&sel));
        }
    }
    let derand = derandomize(inst, &point)?;

    let mut best = MethodResult::from_selection(&ls.selection);
    let mut best_method = "local_search".to_string();
    for (cand, name) in [
        (MethodResult::from_selection(&greedy_sel), "greedy"),
        (MethodResult::from_selection(&derand), "derandomized"),
    ] {
        if cand.value > best.value {
            best = cand;
            best_method = name.to_string();
        }
    }
    if let Some(sb) = &sampling_best {
        if sb.value > best.value {
            best = sb.clone();
            best_method = "sampling".to_string();
        }
    }

    Ok(ApproxReport {
        local_search: MethodResult::from_selection(&ls.selection),
        swaps: ls.swaps,
        guarantee: local_search_guarantee(inst),
        greedy: MethodResult::from_selection(&greedy_sel),
        sampling_formulation: point.formulation,
        relaxation_bound: point.bound,
        sampling_log_expectation: log_expectation,
        sampling_draws: draws,
        sampling_best,
        derandomized: MethodResult::from_selection(&derand),
        best,
        best_method,
    })
}
