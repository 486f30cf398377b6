//! Power-constrained periodic input design.
//!
//! The central problem: choose DFT coefficients `U_l` of a zero-mean
//! period-`k` input with average power at most `gamma2` to maximize
//!
//! `lambda_min( weight * (1/k^2) sum_l G_l U_l U_l^H G_l^H + past_cov )`
//!
//! where `G_l` is the plant's frequency response at bin `l`. The objective
//! is concave in the per-bin Gram blocks `W_l = U_l U_l^H`, so a Frank-Wolfe
//! scheme over rank-one "atoms" (bin, direction, power mass) solves it; a
//! rank-one coefficient per bin is recovered at the end.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freq::{self, PeriodicInput};
use crate::lds::{self, LinSys};
use crate::linalg::{self, CMatrix, CVector};
use crate::rng;

/// One instance of the design problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignProblem {
    /// Current system estimate (or the truth, for oracle designs).
    pub sys: LinSys,
    /// Average-power budget for the designed input.
    pub gamma2: f64,
    /// Period of the input.
    pub k: usize,
    /// One-based bins the design may use; `None` means all non-DC bins.
    pub support: Option<Vec<usize>>,
    /// Information already collected, added inside the `lambda_min`.
    pub past_cov: DMatrix<f64>,
    /// Horizon weight multiplying the input's covariance contribution.
    pub weight: f64,
    /// Allow the DC bin (used by idealized rate computations; adaptive
    /// designs keep inputs zero-mean).
    pub allow_dc: bool,
}

impl DesignProblem {
    pub fn new(sys: LinSys, gamma2: f64, k: usize, past_cov: DMatrix<f64>, weight: f64) -> Self {
        Self { sys, gamma2, k, support: None, past_cov, weight, allow_dc: false }
    }

    pub fn validate(&self) -> Result<()> {
        self.sys.ensure_stable()?;
        if self.k < 2 {
            return Err(Error::Config("period must be at least 2".into()));
        }
        if self.gamma2 <= 0.0 {
            return Err(Error::Config("gamma2 must be positive".into()));
        }
        if self.weight <= 0.0 {
            return Err(Error::Config("horizon weight must be positive".into()));
        }
        let d = self.sys.d();
        if self.past_cov.nrows() != d || self.past_cov.ncols() != d {
            return Err(Error::Dimension("past_cov must be d x d".into()));
        }
        for &l in self.effective_support().iter() {
            if l < 1 || l > self.k {
                return Err(Error::Config(format!("support bin {l} outside 1..={}", self.k)));
            }
            if l == self.k && !self.allow_dc {
                return Err(Error::Config("DC bin requires allow_dc".into()));
            }
        }
        Ok(())
    }

    /// Bins the design may place power on.
    pub fn effective_support(&self) -> Vec<usize> {
        match &self.support {
            Some(s) => s.clone(),
            None => {
                let hi = if self.allow_dc { self.k } else { self.k - 1 };
                (1..=hi).collect()
            }
        }
    }
}

/// Tuning knobs for the solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignOptions {
    pub max_iters: usize,
    /// Stop when the objective gain over `stall_window` iterations drops
    /// below this.
    pub tol: f64,
    pub stall_window: usize,
    pub seed: u64,
    /// Independent restarts; the best run wins.
    pub restarts: usize,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self { max_iters: 2000, tol: 1e-9, stall_window: 50, seed: 0, restarts: 1 }
    }
}

/// Output of `optimize_input`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignResult {
    pub input: PeriodicInput,
    /// Final objective `lambda_min(weight * S + past_cov)` of the returned
    /// rank-one input.
    pub objective: f64,
    pub iterations: usize,
    /// Objective after each iteration (nondecreasing).
    pub trace: Vec<f64>,
    /// Objective lost when collapsing each bin's Gram block to rank one.
    pub truncation_loss: f64,
    /// True when the solver made no progress from the start: the support
    /// cannot excite the weakest directions.
    pub stalled: bool,
}

/// A rank-one frequency atom: unit direction `q` at bin `l` carrying
/// coefficient energy `mass` (summed with its conjugate mate).
#[derive(Clone)]
struct Atom {
    l: usize,
    q: CVector,
    mass: f64,
}

/// Mirror bin of `l` (bins are one-based; `k` is DC, which is self-paired,
/// as is `k/2` for even `k`).
fn mate(l: usize, k: usize) -> usize {
    if l == k {
        k
    } else {
        k - l
    }
}

fn self_paired(l: usize, k: usize) -> bool {
    mate(l, k) == l
}

/// Real covariance contribution of a unit-power atom at bin `l`:
/// `(1/k^2) * [G_l q q^H G_l^H + conj]`, with the convention that `mass`
/// counts the energy of the bin and its mate together.
fn atom_matrix(g: &CMatrix, q: &CVector, l: usize, k: usize) -> DMatrix<f64> {
    let x = g * q;
    let m = &x * x.adjoint();
    // For a paired bin, mass m splits m/2 + m/2 over l and its mate; the two
    // conjugate contributions sum to twice the real part of one of them,
    // i.e. 2 * (m/2) * Re(...) = m * Re(...). A self-paired bin carries a
    // real q and the full mass, so its contribution is also m * Re(x x^H).
    let _ = l;
    linalg::re(&m) / (k * k) as f64
}

fn objective_matrix(
    problem: &DesignProblem,
    gs: &[CMatrix],
    atoms: &[Atom],
) -> DMatrix<f64> {
    let mut m = problem.past_cov.clone();
    for a in atoms {
        m += atom_matrix(&gs[a.l - 1], &a.q, a.l, problem.k) * (a.mass * problem.weight);
    }
    (&m + m.transpose()) * 0.5
}

/// Objective value of an explicit input: `lambda_min(weight * raw_cov + past_cov)`.
pub fn objective(problem: &DesignProblem, input: &PeriodicInput) -> Result<f64> {
    let s = freq::steady_state_covariance_raw(&problem.sys, input)?;
    Ok(linalg::lambda_min(&(s * problem.weight + &problem.past_cov)))
}

/// Canonical representative of a bin's conjugate pair (the smaller index),
/// conjugating the direction when the bin flips to its mate.
fn canonical_atom(l: usize, k: usize, q: CVector) -> (usize, CVector) {
    let m = mate(l, k);
    if m < l {
        (m, q.conjugate())
    } else {
        (l, q)
    }
}

/// Per-bin best rank-one atom against weight matrix `v`: the top
/// eigendirection of `H_l = G_l^H V G_l` (real top-eigvec for self-paired
/// bins), with its score.
fn atom_candidates(
    problem: &DesignProblem,
    gs: &[CMatrix],
    support: &[usize],
    v: &DMatrix<f64>,
) -> Vec<(usize, CVector, f64)> {
    let vc = linalg::to_complex(v);
    // On wide supports, pre-rank bins by trace(G^H V G), which brackets the
    // top eigenvalue within a factor of the dimension, and score only the
    // leaders exactly. The selection below tolerates an inexact shortlist:
    // every step is line-searched and accepted only on improvement.
    let shortlist: Vec<usize> = if support.len() > 48 {
        let mut traced: Vec<(f64, usize)> = support
            .iter()
            .map(|&l| {
                let g = &gs[l - 1];
                let vg = &vc * g;
                let t: f64 = g.iter().zip(vg.iter()).map(|(a, b)| (a.conj() * b).re).sum();
                (t, l)
            })
            .collect();
        traced.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut keep: Vec<usize> = traced.iter().take(40).map(|&(_, l)| l).collect();
        keep.sort_unstable();
        keep
    } else {
        support.to_vec()
    };
    let mut scored = Vec::with_capacity(shortlist.len());
    for &l in &shortlist {
        let g = &gs[l - 1];
        let h = g.adjoint() * &vc * g;
        let (score, q) = if self_paired(l, problem.k) {
            // Coefficient must be real at self-paired bins.
            let hr = linalg::re(&h);
            let (vals, vecs) = linalg::sym_eigen(&hr);
            let n = vals.len();
            let q = CVector::from_iterator(
                n,
                vecs.column(n - 1).iter().map(|&x| Complex::new(x, 0.0)),
            );
            (vals[n - 1], q)
        } else {
            linalg::herm_top_eig(&h)
        };
        scored.push((l, q, score));
    }
    scored
}

/// Pick the new atom among near-tied candidate bins. Ties are broken toward
/// a conjugate pair with no mass yet, then toward the pair whose existing
/// direction is best aligned with the new one; both rules keep the per-pair
/// Gram blocks close to rank one, so the final one-coefficient-per-bin input
/// loses as little as possible.
fn choose_atom(
    cands: &[(usize, CVector, f64)],
    atoms: &[Atom],
    k: usize,
) -> Option<(usize, CVector)> {
    let top = cands.iter().map(|c| c.2).fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return None;
    }
    let near: Vec<_> =
        cands.iter().filter(|c| c.2 >= top - 1e-9 * (1.0 + top.abs())).collect();
    let used: std::collections::BTreeSet<usize> =
        atoms.iter().map(|a| a.l.min(mate(a.l, k))).collect();
    if let Some(c) = near.iter().find(|c| !used.contains(&c.0.min(mate(c.0, k)))) {
        return Some((c.0, c.1.clone()));
    }
    near.iter()
        .map(|c| {
            let (lc, qc) = canonical_atom(c.0, k, c.1.clone());
            let align = atoms
                .iter()
                .filter(|a| a.l.min(mate(a.l, k)) == lc)
                .map(|a| {
                    let (_, qa) = canonical_atom(a.l, k, a.q.clone());
                    qa.dotc(&qc).norm()
                })
                .fold(0.0f64, f64::max);
            (align, c.0, c.1.clone())
        })
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, l, q)| (l, q))
}

/// Collapse an atom list to a single direction per conjugate pair: the top
/// eigenvector of the pair's accumulated Gram block, carrying the pair's
/// whole mass so the power budget is preserved. Self-paired bins keep a real
/// direction.
fn collapse_atoms(atoms: &[Atom], k: usize) -> Vec<Atom> {
    let mut per_bin: std::collections::BTreeMap<usize, CMatrix> = Default::default();
    for a in atoms {
        let (l, q) = canonical_atom(a.l, k, a.q.clone());
        let w = &q * q.adjoint() * Complex::new(a.mass, 0.0);
        per_bin.entry(l).and_modify(|e| *e += &w).or_insert(w);
    }
    let mut out = Vec::with_capacity(per_bin.len());
    for (l, w) in per_bin {
        let mass = w.trace().re;
        if mass <= 0.0 {
            continue;
        }
        let (_, q) = linalg::herm_top_eig(&w);
        let q = if self_paired(l, k) {
            // Rotate to a real vector; the block was built from real
            // directions, so only a global phase separates us from one.
            let phase = q
                .iter()
                .map(|z| (z.norm(), *z))
                .max_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, z)| z / z.norm())
                .unwrap_or_else(|| Complex::new(1.0, 0.0));
            let qr = q.map(|z| Complex::new((z / phase).re, 0.0));
            let n = qr.norm();
            qr * Complex::new(1.0 / n.max(1e-300), 0.0)
        } else {
            q
        };
        out.push(Atom { l, q, mass });
    }
    out
}

fn golden_max(mut f: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..iters {
        let m1 = hi - phi * (hi - lo);
        let m2 = lo + phi * (hi - lo);
        if f(m1) < f(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    0.5 * (lo + hi)
}

fn solve_once(
    problem: &DesignProblem,
    gs: &[CMatrix],
    support: &[usize],
    opts: &DesignOptions,
    seed: u64,
) -> Result<DesignResult> {
    let k = problem.k;
    let total_mass = (k * k) as f64 * problem.gamma2;
    let mut rng = rng::substream(seed, "input-design-init");

    // Random initial atom: random support bin, random unit direction.
    let l0 = support[rng.gen_range(0..support.len())];
    let p = problem.sys.p();
    let q0 = {
        let mut q = CVector::from_fn(p, |_, _| {
            if self_paired(l0, k) {
                Complex::new(rng.gen::<f64>() - 0.5, 0.0)
            } else {
                Complex::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
            }
        });
        let n = q.norm();
        if n < 1e-12 {
            q = CVector::from_element(p, Complex::new(1.0, 0.0));
        } else {
            q /= Complex::new(n, 0.0);
        }
        q
    };
    let mut atoms = vec![Atom { l: l0, q: q0, mass: total_mass }];
    let mut m = objective_matrix(problem, gs, &atoms);
    let start_obj = linalg::lambda_min(&m);
    let mut trace = vec![start_obj];

    // Phase 1: relaxed ascent on the smoothed objective
    // `F_mu = -mu log tr exp(-M / mu)` with annealed `mu`. `lambda_min`
    // itself is flat or even locally decreasing along every single-atom
    // mixture when the minimal eigenspace has multiplicity, so Frank-Wolfe
    // on it stalls; the smoothed objective is concave and differentiable,
    // and its gradient (a softmax over eigenvectors) spreads weight over all
    // near-minimal directions. `F_mu <= lambda_min <= F_mu + mu ln d`, so a
    // small final `mu` pins the relaxed optimum. Per-pair Gram blocks may
    // grow past rank one here; the bin assignment of `choose_atom` keeps
    // them as close to rank one as the problem allows.
    let spectrum = |m: &DMatrix<f64>| linalg::sym_eigen(m);
    let smooth = |vals: &DVector<f64>, mu: f64| -> f64 {
        let v0 = vals[0];
        v0 - mu * vals.iter().map(|v| (-(v - v0) / mu).exp()).sum::<f64>().ln()
    };
    let (vals0, _) = spectrum(&m);
    let scale = 1.0 + vals0[vals0.len() - 1].abs() + vals0[0].abs();
    let mut mu = 0.1 * scale;
    let mu_min = 1e-9 * scale;
    let levels = ((mu / mu_min).log(4.0).ceil() as usize).max(1);
    let per_level = (opts.max_iters / levels).max(20);
    let mut iters = 0usize;
    'outer: loop {
        let last_level = mu <= mu_min * 4.0;
        for _ in 0..per_level {
            if iters >= opts.max_iters {
                break 'outer;
            }
            iters += 1;
            let (vals, vecs) = spectrum(&m);
            let d = vals.len();
            // Softmax weights over the spectrum: the gradient of F_mu.
            let v0 = vals[0];
            let ws: Vec<f64> = vals.iter().map(|v| (-(v - v0) / mu).exp()).collect();
            let z: f64 = ws.iter().sum();
            let mut w = DMatrix::<f64>::zeros(d, d);
            for (i, wi) in ws.iter().enumerate() {
                let col = vecs.column(i);
                w += col * col.transpose() * (wi / z);
            }
            let cands = atom_candidates(problem, gs, support, &w);
            let Some((l, q)) = choose_atom(&cands, &atoms, k) else {
                break 'outer;
            };
            let new_unit = atom_matrix(&gs[l - 1], &q, l, k) * problem.weight;
            let design_part = &m - &problem.past_cov;
            // Frank-Wolfe duality gap at this smoothing level.
            let gap = total_mass * (&w * &new_unit).trace() - (&w * &design_part).trace();
            if gap <= 0.3 * mu {
                break;
            }
            let mix_m = |eta: f64| {
                let mm =
                    &design_part * (1.0 - eta) + &new_unit * (eta * total_mass) + &problem.past_cov;
                (&mm + mm.transpose()) * 0.5
            };
            let before = smooth(&vals, mu);
            let eta = golden_max(|e| smooth(&spectrum(&mix_m(e)).0, mu), 0.0, 1.0, 60);
            if eta > 1e-15 {
                for a in &mut atoms {
                    a.mass *= 1.0 - eta;
                }
                atoms.push(Atom { l, q, mass: eta * total_mass });
                atoms.retain(|a| a.mass > 1e-14 * total_mass);
                m = mix_m(eta);
            }
            // This smoothing level has converged once a full step moves the
            // smoothed objective by a sliver of the smoothing scale; `F_mu`
            // only tracks `lambda_min` to within `mu ln d` anyway, so there
            // is nothing to gain from polishing a level much further.
            let after = smooth(&spectrum(&m).0, mu);
            let level_done = after - before <= 1e-4 * mu;
            let cur = *trace.last().unwrap();
            trace.push(linalg::lambda_min(&m).max(cur));
            // Stall check over a trailing window, once the smoothing is at
            // its final level (earlier levels legitimately move without
            // changing lambda_min yet).
            if last_level && trace.len() > opts.stall_window {
                let past = trace[trace.len() - 1 - opts.stall_window];
                if trace.last().unwrap() - past < opts.tol * (1.0 + trace.last().unwrap().abs()) {
                    break 'outer;
                }
            }
            if level_done {
                break;
            }
        }
        if last_level {
            break;
        }
        mu = (mu * 0.25).max(mu_min);
    }

    let relaxed_obj = *trace.last().unwrap();
    let stalled = relaxed_obj <= start_obj + 1e-12 * (1.0 + start_obj.abs());

    // Phase 2: collapse to the representable manifold, one direction per
    // conjugate pair.
    let mut atoms = collapse_atoms(&atoms, k);
    let mut pm = objective_matrix(problem, gs, &atoms);
    let mut best_atoms = atoms.clone();
    let mut best_obj = linalg::lambda_min(&pm);

    // Phase 3: smoothed ascent over collapsed atom sets. The relaxation may
    // concentrate matrix-valued mass on a single dominant bin; after the
    // rank-one collapse, `lambda_min` alone gives no signal until enough
    // pairs carry mass, so anneal the same smoothed objective here and
    // evaluate every candidate step after collapsing. Beyond the usual
    // best-scoring bin, each iteration also proposes the best bin on a pair
    // with no mass yet: under the rank constraint a fresh pair can be worth
    // more than further mass on a used one.
    let (pvals, _) = spectrum(&pm);
    let pscale = 1.0 + pvals[pvals.len() - 1].abs() + pvals[0].abs();
    let mut pmu = 0.1 * pscale;
    let pmu_min = 1e-9 * pscale;
    let polish_budget = opts.max_iters.min(300);
    let plevels = ((pmu / pmu_min).log(4.0).ceil() as usize).max(1);
    let pper = (polish_budget / plevels).max(6);
    loop {
        let plast = pmu <= pmu_min * 4.0;
        for _ in 0..pper {
            let (vals, vecs) = spectrum(&pm);
            let dd = vals.len();
            let v0 = vals[0];
            let ws: Vec<f64> = vals.iter().map(|v| (-(v - v0) / pmu).exp()).collect();
            let z: f64 = ws.iter().sum();
            let mut w = DMatrix::<f64>::zeros(dd, dd);
            for (i, wi) in ws.iter().enumerate() {
                let col = vecs.column(i);
                w += col * col.transpose() * (wi / z);
            }
            let cands = atom_candidates(problem, gs, support, &w);
            let mut proposals: Vec<(usize, CVector)> = Vec::new();
            if let Some(c) = choose_atom(&cands, &atoms, k) {
                proposals.push(c);
            }
            let used: std::collections::BTreeSet<usize> =
                atoms.iter().map(|a| a.l.min(mate(a.l, k))).collect();
            if let Some(c) = cands
                .iter()
                .filter(|c| !used.contains(&c.0.min(mate(c.0, k))))
                .max_by(|a, b| a.2.total_cmp(&b.2))
            {
                proposals.push((c.0, c.1.clone()));
            }
            if proposals.is_empty() {
                break;
            }
            let seval = |s: &[Atom]| {
                smooth(&spectrum(&objective_matrix(problem, gs, s)).0, pmu)
            };
            let cur_s = smooth(&vals, pmu);
            // Least useful atom under the current weights, for swap moves.
            let away = atoms
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    let ga = (&w * atom_matrix(&gs[a.l - 1], &a.q, a.l, k)).trace();
                    let gb = (&w * atom_matrix(&gs[b.l - 1], &b.q, b.l, k)).trace();
                    ga.total_cmp(&gb)
                })
                .map(|(i, a)| (i, a.mass));
            let mut best_step: Option<(f64, Vec<Atom>)> = None;
            let consider = |s: Vec<Atom>, best_step: &mut Option<(f64, Vec<Atom>)>| {
                let val = seval(&s);
                if best_step.as_ref().map_or(true, |(b, _)| val > *b) {
                    *best_step = Some((val, s));
                }
            };
            for (l, q) in &proposals {
                let mix = |eta: f64| -> Vec<Atom> {
                    let mut s: Vec<Atom> = atoms
                        .iter()
                        .map(|a| Atom { l: a.l, q: a.q.clone(), mass: a.mass * (1.0 - eta) })
                        .collect();
                    s.push(Atom { l: *l, q: q.clone(), mass: eta * total_mass });
                    s.retain(|a| a.mass > 1e-14 * total_mass);
                    collapse_atoms(&s, k)
                };
                let eta = golden_max(|e| seval(&mix(e)), 0.0, 1.0, 40);
                for e in [eta, eta / 4.0] {
                    if e > 1e-12 {
                        consider(mix(e), &mut best_step);
                    }
                }
                if let Some((j, mj)) = away {
                    let swap = |delta: f64| -> Vec<Atom> {
                        let mut s = atoms.clone();
                        s[j].mass -= delta;
                        s.push(Atom { l: *l, q: q.clone(), mass: delta });
                        s.retain(|a| a.mass > 1e-14 * total_mass);
                        collapse_atoms(&s, k)
                    };
                    let d_true = golden_max(|d| seval(&swap(d)), 0.0, mj, 40);
                    for delta in [d_true, mj / 2.0] {
                        if delta > 1e-12 * total_mass {
                            consider(swap(delta), &mut best_step);
                        }
                    }
                }
            }
            match best_step {
                Some((val, s)) if val > cur_s + 1e-13 * (1.0 + cur_s.abs()) => {
                    atoms = s;
                    pm = objective_matrix(problem, gs, &atoms);
                    let t = linalg::lambda_min(&pm);
                    if t > best_obj {
                        best_obj = t;
                        best_atoms = atoms.clone();
                    }
                    let cur = *trace.last().unwrap();
                    trace.push(best_obj.max(cur));
                }
                _ => break,
            }
        }
        if plast {
            break;
        }
        pmu = (pmu * 0.25).max(pmu_min);
    }
    let atoms = best_atoms;

    // The atoms now carry one direction per conjugate pair; write them out
    // as coefficients, splitting mass with the mate where applicable.
    let mut coeffs = vec![CVector::zeros(p); k];
    for a in &atoms {
        if self_paired(a.l, k) {
            coeffs[a.l - 1] = &a.q * Complex::new(a.mass.sqrt(), 0.0);
        } else {
            let c = &a.q * Complex::new((a.mass / 2.0).sqrt(), 0.0);
            coeffs[a.l - 1] = c.clone();
            coeffs[mate(a.l, k) - 1] = c.conjugate();
        }
    }
    let mut input = PeriodicInput::new(k, problem.gamma2, coeffs)?;
    if input.coeff_energy() > 0.0 {
        input = input.normalized_to_budget()?;
    }
    let final_obj = objective(problem, &input)?;
    let truncation_loss = (relaxed_obj - final_obj).max(0.0);

    Ok(DesignResult {
        input,
        objective: final_obj,
        iterations: iters,
        trace,
        truncation_loss,
        stalled,
    })
}

/// Maximize `lambda_min(weight * input_cov + past_cov)` over rank-one-per-bin
/// periodic inputs on the problem's support.
///
/// For a scalar system every design puts all power on a single frequency
/// pair, so the optimum is the best single bin:
///
/// ```
/// use excite::design::{self, DesignOptions, DesignProblem};
/// use excite::lds::LinSys;
/// use nalgebra::DMatrix;
///
/// let sys = LinSys::new(DMatrix::from_element(1, 1, 0.9), DMatrix::identity(1, 1))?;
/// let prob = DesignProblem::new(sys, 1.0, 20, DMatrix::zeros(1, 1), 1.0);
/// let res = design::optimize_input(&prob, &DesignOptions::default())?;
///
/// // All power lands on the lowest nonzero frequency: 1 / |e^{j pi/10} - 0.9|^2.
/// let theta = std::f64::consts::PI / 10.0;
/// let best = 1.0 / ((theta.cos() - 0.9).powi(2) + theta.sin().powi(2));
/// assert!((res.objective - best).abs() / best < 1e-6);
/// assert!(res.input.within_budget());
/// # Ok::<(), excite::Error>(())
/// ```
pub fn optimize_input(problem: &DesignProblem, opts: &DesignOptions) -> Result<DesignResult> {
    problem.validate()?;
    let support = problem.effective_support();
    if support.is_empty() {
        return Err(Error::Feasibility("empty frequency support".into()));
    }
    let gs = freq::transfer_matrices(&problem.sys, problem.k)?;
    let mut best: Option<DesignResult> = None;
    for r in 0..opts.restarts.max(1) {
        let res = solve_once(problem, &gs, &support, opts, rng::trial_seed(opts.seed, r as u64))?;
        if best.as_ref().map_or(true, |b| res.objective > b.objective) {
            best = Some(res);
        }
    }
    Ok(best.unwrap())
}

/// An ellipsoidal set of candidate weak directions: unit vectors `w` with
/// `w^T Q w <= c`.
#[derive(Debug, Clone)]
pub struct DirectionEllipsoid {
    pub q: DMatrix<f64>,
    pub c: f64,
}

impl DirectionEllipsoid {
    pub fn contains(&self, w: &DVector<f64>) -> bool {
        let wn = w / w.norm();
        (wn.transpose() * &self.q * &wn)[(0, 0)] <= self.c * (1.0 + 1e-9)
    }

    /// `max_{unit w in set} w^T P w` via the Lagrangian dual
    /// `min_{tau >= 0} [lambda_max(P - tau Q) + c tau]`, which is convex in
    /// `tau` and tight for this pair of quadratic constraints.
    pub fn max_quadratic(&self, p: &DMatrix<f64>) -> f64 {
        let quad = |w: &DVector<f64>, m: &DMatrix<f64>| (w.transpose() * m * w)[(0, 0)];
        let top = |tau: f64| -> (f64, DVector<f64>) {
            let m = p - &self.q * tau;
            let (vals, vecs) = linalg::sym_eigen(&m);
            let n = vals.len();
            (vals[n - 1], vecs.column(n - 1).into_owned())
        };
        // tau = 0: unconstrained top eigvec. If feasible, done.
        let (lam0, w0) = top(0.0);
        if quad(&w0, &self.q) <= self.c * (1.0 + 1e-9) {
            return lam0;
        }
        let g = |tau: f64| top(tau).0 + self.c * tau;
        // The subgradient of g is c - w(tau)^T Q w(tau); expand until it is
        // nonnegative, then golden-section the convex minimum.
        let mut hi = 1.0;
        for _ in 0..200 {
            let (_, w) = top(hi);
            if quad(&w, &self.q) <= self.c {
                break;
            }
            hi *= 2.0;
        }
        let mut lo = 0.0;
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..120 {
            let m1 = hi - phi * (hi - lo);
            let m2 = lo + phi * (hi - lo);
            if g(m1) > g(m2) {
                lo = m1;
            } else {
                hi = m2;
            }
        }
        g(0.5 * (lo + hi))
    }
}

/// The candidate-direction set used by the refinement test: unit vectors
/// whose predicted information, current plus best-case future, is within the
/// implied threshold.
///
/// `ellipsoid.q` is `(k^2 / horizon) * state_gram`, and `ellipsoid.c` is the
/// minimum over the sphere of `w^T Q w + (4/3) gamma2 * max_l ||w^T G_l||^2`
/// over bins eligible at accuracy `eps` (mixing estimation error into the
/// frequency response is only trustworthy where the resolvent is tame).
pub struct CandidateDirections {
    pub ellipsoid: DirectionEllipsoid,
    /// Bins where the accuracy `eps` keeps the response trustworthy.
    pub eligible: Vec<usize>,
}

/// Resolvent `(e^{j theta_l} I - A)^{-1}` at bin `l`.
fn resolvent(sys: &LinSys, l: usize, k: usize) -> Result<CMatrix> {
    let d = sys.d();
    let z = Complex::from_polar(1.0, freq::bin_frequency(l, k));
    let m = CMatrix::from_diagonal_element(d, d, z) - linalg::to_complex(&sys.a);
    m.lu()
        .try_inverse()
        .ok_or_else(|| Error::Singular("resolvent is singular on the unit circle".into()))
}

/// Bins `l` whose resolvent norm satisfies `eps <= 1 / (4 ||R_l||)`.
pub fn eligible_frequencies(sys: &LinSys, k: usize, eps: f64) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for l in 1..=k {
        let r = resolvent(sys, l, k)?;
        if eps <= 0.25 / linalg::opnorm_c(&r) {
            out.push(l);
        }
    }
    Ok(out)
}

fn min_over_sphere(
    q: &DMatrix<f64>,
    gs: &[CMatrix],
    eligible: &[usize],
    gamma2: f64,
) -> f64 {
    // c(w) = w^T Q w + (4/3) gamma2 max_l ||w^T G_l||^2, minimized over the
    // unit sphere. Evaluate at the eigenvectors of Q and of each
    // Re(G_l G_l^H) as candidates, then polish with projected descent.
    let d = q.nrows();
    let val = |w: &DVector<f64>| -> f64 {
        let base = (w.transpose() * q * w)[(0, 0)];
        let wc = CVector::from_iterator(d, w.iter().map(|&x| Complex::new(x, 0.0)));
        let extra = eligible
            .iter()
            .map(|&l| {
                let v = gs[l - 1].adjoint() * &wc;
                v.norm_squared()
            })
            .fold(0.0, f64::max);
        base + 4.0 / 3.0 * gamma2 * extra
    };
    let mut cands: Vec<DVector<f64>> = Vec::new();
    let (_, vq) = linalg::sym_eigen(q);
    for j in 0..d {
        cands.push(vq.column(j).into_owned());
    }
    for &l in eligible {
        let gg = &gs[l - 1] * gs[l - 1].adjoint();
        let (_, vg) = linalg::sym_eigen(&linalg::re(&gg));
        cands.push(vg.column(0).into_owned());
    }
    let mut best = f64::INFINITY;
    let mut w_best = DVector::zeros(d);
    for w in &cands {
        let v = val(w);
        if v < best {
            best = v;
            w_best = w.clone();
        }
    }
    // Local polish: finite-difference projected descent on the sphere.
    let mut w = w_best;
    let mut step = 0.3;
    for _ in 0..200 {
        let cur = val(&w);
        let h = 1e-5;
        let mut g = DVector::zeros(d);
        for i in 0..d {
            let mut wp = w.clone();
            wp[i] += h;
            let n = wp.norm();
            g[i] = (val(&(wp / n)) - cur) / h;
        }
        let mut wn = &w - &g * step;
        let n = wn.norm();
        if n < 1e-12 {
            break;
        }
        wn /= n;
        if val(&wn) < cur {
            w = wn;
        } else {
            step *= 0.5;
            if step < 1e-6 {
                break;
            }
        }
    }
    best.min(val(&w))
}

/// Build the candidate weak-direction set at accuracy `eps` after observing
/// `state_gram = sum x_t x_t^T` over an effective horizon `horizon`.
pub fn candidate_directions(
    sys: &LinSys,
    k: usize,
    eps: f64,
    gamma2: f64,
    state_gram: &DMatrix<f64>,
    horizon: f64,
) -> Result<CandidateDirections> {
    sys.ensure_stable()?;
    let eligible = eligible_frequencies(sys, k, eps)?;
    let q = state_gram * ((k * k) as f64 / horizon);
    let gs = freq::transfer_matrices(sys, k)?;
    let c = if eligible.is_empty() {
        // No trustworthy bins: the threshold degenerates to the weakest
        // observed direction alone.
        linalg::lambda_min(&q)
    } else {
        min_over_sphere(&q, &gs, &eligible, gamma2)
    };
    Ok(CandidateDirections { ellipsoid: DirectionEllipsoid { q, c }, eligible })
}

/// How the per-epoch planner selects inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DesignMode {
    /// Skip the eligibility gating: design over all non-DC bins with the
    /// full design budget. The practical default.
    Greedy,
    /// Finite-time gating: restrict the support by per-bin perturbation
    /// tests against the achievable objective.
    FiniteTime,
    /// Replace the observed state Gram by its asymptotic noise-driven
    /// expectation before designing.
    Asymptotic,
}

/// Input plan for the next epoch.
#[derive(Debug, Clone)]
pub struct EpochPlan {
    pub design: DesignResult,
    /// Exploration-noise variance to play alongside the designed input.
    pub sigma_u2: f64,
    /// Bins allowed by the gating step.
    pub support: Vec<usize>,
    /// True when gating admitted every non-DC bin at once.
    pub global_pass: bool,
    /// True when the estimate was unstable and the plan fell back to pure
    /// exploration noise.
    pub noise_fallback: bool,
}

/// Context for planning one epoch.
#[derive(Debug, Clone)]
pub struct PlanContext {
    /// Current estimate of `A` (with known `B` inside `sys`).
    pub sys: LinSys,
    /// Total power budget `gamma2`; half goes to noise, half to design.
    pub gamma2: f64,
    pub k: usize,
    /// Steps in the previous epoch.
    pub t_prev: usize,
    /// Warmup length, so the effective horizon is `2 * t_prev + t0`.
    pub t0: usize,
    /// Estimation accuracy from the previous epoch.
    pub eps: f64,
    /// Process-noise std dev (used by the asymptotic mode).
    pub sigma: f64,
    /// Observed regressor Gram `sum x_t x_t^T` from the previous epoch.
    pub state_gram: DMatrix<f64>,
    pub mode: DesignMode,
}

/// Per-bin perturbation score: the worst-case response distortion a
/// perturbation of size `eps` can cause at bin `l`, over directions in the
/// candidate set.
fn bin_perturbation_score(
    sys: &LinSys,
    l: usize,
    k: usize,
    eps: f64,
    gamma2: f64,
    horizon: f64,
    set: &DirectionEllipsoid,
) -> Result<f64> {
    let r = resolvent(sys, l, k)?;
    let rb = &r * linalg::to_complex(&sys.b);
    let r_norm = linalg::opnorm_c(&r);
    let rb_norm = linalg::opnorm_c(&rb);
    // max_w ||w^T R_l||^2 over the set, then the scalar prefactors.
    let rr = &r * r.adjoint();
    let p = linalg::re(&rr);
    let w_term = set.max_quadratic(&((&p + p.transpose()) * 0.5));
    Ok(32.0 / 3.0 * eps * horizon * gamma2 * w_term * rb_norm * rb_norm / r_norm)
}

/// Decide the support and design the next epoch's input.
///
/// Power is split evenly: exploration noise gets `gamma2 / (2 p)` per
/// channel and the designed input gets `gamma2 / 2`. In `Greedy` mode the
/// gating is skipped entirely. If the estimate is unstable the plan falls
/// back to pure noise at full power.
pub fn plan_input(ctx: &PlanContext, opts: &DesignOptions) -> Result<EpochPlan> {
    let p = ctx.sys.p();
    let horizon = (2 * ctx.t_prev + ctx.t0) as f64;
    if ctx.sys.spectral_radius() >= 1.0 {
        // Unstable estimate: keep exciting with noise only.
        return Ok(EpochPlan {
            design: DesignResult {
                input: PeriodicInput::zero(ctx.k, p, ctx.gamma2 / 2.0),
                objective: linalg::lambda_min(&ctx.state_gram),
                iterations: 0,
                trace: vec![],
                truncation_loss: 0.0,
                stalled: true,
            },
            sigma_u2: ctx.gamma2 / p as f64,
            support: vec![],
            global_pass: false,
            noise_fallback: true,
        });
    }

    let design_budget = ctx.gamma2 / 2.0;
    let sigma_u2 = ctx.gamma2 / (2.0 * p as f64);
    let all: Vec<usize> = (1..ctx.k).collect();

    let (support, global_pass) = match ctx.mode {
        DesignMode::Greedy => (all.clone(), true),
        DesignMode::FiniteTime | DesignMode::Asymptotic => {
            let state_gram = if ctx.mode == DesignMode::Asymptotic {
                let hk = lds::gramian_horizon(&ctx.sys.a)?.min(ctx.k);
                lds::noise_gramian(&ctx.sys.a, hk)? * (ctx.sigma * ctx.sigma * horizon)
            } else {
                ctx.state_gram.clone()
            };
            let cand =
                candidate_directions(&ctx.sys, ctx.k, ctx.eps, ctx.gamma2, &state_gram, horizon)?;
            // Global test: every bin eligible, and the total worst-case
            // distortion is dominated by the achievable design objective.
            let eligible_all = cand.eligible.len() == ctx.k;
            let mut support = Vec::new();
            let mut global = false;
            if eligible_all {
                let mut worst = 0.0f64;
                for &l in &all {
                    worst = worst.max(bin_perturbation_score(
                        &ctx.sys,
                        l,
                        ctx.k,
                        ctx.eps,
                        ctx.gamma2,
                        horizon,
                        &cand.ellipsoid,
                    )?);
                }
                let mut prob = DesignProblem::new(
                    ctx.sys.clone(),
                    design_budget,
                    ctx.k,
                    state_gram.clone(),
                    horizon,
                );
                prob.support = Some(all.clone());
                let trial = optimize_input(&prob, opts)?;
                if worst <= trial.objective {
                    support = all.clone();
                    global = true;
                }
            }
            if !global {
                // Per-bin test against the information already present.
                let floor = linalg::lambda_min(&state_gram);
                for &l in &all {
                    if !cand.eligible.contains(&l) {
                        continue;
                    }
                    let score = bin_perturbation_score(
                        &ctx.sys,
                        l,
                        ctx.k,
                        ctx.eps,
                        ctx.gamma2,
                        horizon,
                        &cand.ellipsoid,
                    )?;
                    if score <= floor {
                        support.push(l);
                    }
                }
            }
            (support, global)
        }
    };

    if support.is_empty() {
        return Ok(EpochPlan {
            design: DesignResult {
                input: PeriodicInput::zero(ctx.k, p, design_budget),
                objective: linalg::lambda_min(&ctx.state_gram),
                iterations: 0,
                trace: vec![],
                truncation_loss: 0.0,
                stalled: true,
            },
            sigma_u2: ctx.gamma2 / p as f64,
            support,
            global_pass,
            noise_fallback: false,
        });
    }

    let past = match ctx.mode {
        DesignMode::Asymptotic => {
            let hk = lds::gramian_horizon(&ctx.sys.a)?.min(ctx.k);
            lds::noise_gramian(&ctx.sys.a, hk)? * (ctx.sigma * ctx.sigma * horizon)
        }
        _ => ctx.state_gram.clone(),
    };
    let mut prob = DesignProblem::new(ctx.sys.clone(), design_budget, ctx.k, past, horizon);
    prob.support = Some(support.clone());
    let design = optimize_input(&prob, opts)?;
    Ok(EpochPlan { design, sigma_u2, support, global_pass, noise_fallback: false })
}

/// Best achievable `lambda_min` growth rate per step with power `gamma2`:
/// the designed-input objective with unit horizon weight, noise-driven past
/// covariance `sigma^2 * Gamma_K`, and the DC bin allowed.
pub fn lower_bound_rate(
    sys: &LinSys,
    gamma2: f64,
    sigma: f64,
    k: usize,
    opts: &DesignOptions,
) -> Result<f64> {
    sys.ensure_stable()?;
    let hk = lds::gramian_horizon(&sys.a)?.min(k);
    let past = lds::noise_gramian(&sys.a, hk)? * (sigma * sigma);
    let mut prob = DesignProblem::new(sys.clone(), gamma2, k, past, 1.0);
    prob.allow_dc = true;
    let res = optimize_input(&prob, opts)?;
    Ok(res.objective)
}

/// Maximize `lambda_min(sigma^2 Gamma_K + sum_{s<K} A^s B S B^T (A^s)^T)`
/// over PSD `S` with `trace(S) <= gamma2`: the best colored exploration
/// noise.
#[derive(Debug, Clone)]
pub struct NoiseCovResult {
    pub cov: DMatrix<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Best colored exploration noise: maximizes
/// `lambda_min(sigma^2 Gamma_K + sum_{s<K} A^s B S B^T (A^s)^T)` over PSD
/// `S` with `trace(S) <= gamma2`.
///
/// For diagonal `A` (and `B = I`, `sigma = 0`) the optimum has a closed
/// form, exposed as [`optimal_noise_objective_diagonal`]:
///
/// ```
/// use excite::design;
/// use excite::lds::LinSys;
/// use nalgebra::{DMatrix, DVector};
///
/// let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.8, 0.3]));
/// let sys = LinSys::new(a, DMatrix::identity(2, 2))?;
/// let res = design::optimal_noise_covariance(&sys, 1.0, 0.0, 60, 300)?;
/// let exact = design::optimal_noise_objective_diagonal(&[0.8, 0.3], 1.0, 60);
/// assert!((res.objective - exact).abs() / exact < 1e-2);
/// # Ok::<(), excite::Error>(())
/// ```
pub fn optimal_noise_covariance(
    sys: &LinSys,
    gamma2: f64,
    sigma: f64,
    horizon: usize,
    max_iters: usize,
) -> Result<NoiseCovResult> {
    sys.ensure_stable()?;
    if gamma2 <= 0.0 {
        return Err(Error::Config("gamma2 must be positive".into()));
    }
    let d = sys.d();
    let p = sys.p();
    let base = lds::noise_gramian(&sys.a, horizon)? * (sigma * sigma);
    // Precompute A^s B for s < horizon.
    let mut asb = Vec::with_capacity(horizon);
    let mut acc = sys.b.clone();
    for _ in 0..horizon {
        asb.push(acc.clone());
        acc = &sys.a * &acc;
    }
    // The input-driven part of the state covariance is linear in S, so
    // mixtures along the iteration are cheap to evaluate.
    let lift_input = |s: &DMatrix<f64>| -> DMatrix<f64> {
        let mut acc = DMatrix::<f64>::zeros(d, d);
        for ab in &asb {
            acc += ab * s * ab.transpose();
        }
        (&acc + acc.transpose()) * 0.5
    };
    let smooth = |vals: &DVector<f64>, mu: f64| -> f64 {
        let v0 = vals[0];
        v0 - mu * vals.iter().map(|v| (-(v - v0) / mu).exp()).sum::<f64>().ln()
    };

    // S is kept as a weighted set of unit directions, S = sum_i w_i q_i q_i^T
    // with sum_i w_i = gamma2, each with its lift cached so line searches are
    // cheap.
    let unit_lift = |q: &DVector<f64>| lift_input(&(q * q.transpose()));
    let mut qs: Vec<DVector<f64>> = (0..p)
        .map(|i| DVector::from_fn(p, |j, _| if i == j { 1.0 } else { 0.0 }))
        .collect();
    let mut wts: Vec<f64> = vec![gamma2 / p as f64; p];
    let mut lqs: Vec<DMatrix<f64>> = qs.iter().map(unit_lift).collect();
    let assemble = |qs: &[DVector<f64>], wts: &[f64]| -> DMatrix<f64> {
        let mut s = DMatrix::<f64>::zeros(p, p);
        for (q, &w) in qs.iter().zip(wts) {
            s += q * q.transpose() * w;
        }
        (&s + s.transpose()) * 0.5
    };
    let mut ls = lqs.iter().zip(&wts).fold(DMatrix::<f64>::zeros(d, d), |a, (l, &w)| a + l * w);
    let mut m = &base + &ls;
    let mut best_s = assemble(&qs, &wts);
    let mut best_obj = linalg::lambda_min(&m);

    // Frank-Wolfe on lambda_min stalls as soon as the minimal eigenvalue
    // ties across directions; anneal the smoothed objective
    // `F_mu = -mu log tr exp(-M / mu)` instead, exactly as in the periodic
    // input solver. Each iteration also tries a pairwise step (move weight
    // from the least useful active atom to the new one), which converges far
    // faster than plain mixing once the support is right.
    let (vals0, _) = linalg::sym_eigen(&m);
    let scale = 1.0 + vals0[vals0.len() - 1].abs() + vals0[0].abs();
    let mut mu = 0.1 * scale;
    let mu_min = 1e-9 * scale;
    let levels = ((mu / mu_min).log(4.0).ceil() as usize).max(1);
    let per_level = (max_iters / levels).max(10);
    let mut iterations = 0usize;
    'outer: loop {
        let last_level = mu <= mu_min * 4.0;
        for _ in 0..per_level {
            if iterations >= max_iters {
                break 'outer;
            }
            iterations += 1;
            let (vals, vecs) = linalg::sym_eigen(&m);
            let v0 = vals[0];
            let ws: Vec<f64> = vals.iter().map(|v| (-(v - v0) / mu).exp()).collect();
            let z: f64 = ws.iter().sum();
            let mut w = DMatrix::<f64>::zeros(d, d);
            for (i, wi) in ws.iter().enumerate() {
                let col = vecs.column(i);
                w += col * col.transpose() * (wi / z);
            }
            // Gradient in S-space: sum_s B^T (A^s)^T W A^s B.
            let mut grad = DMatrix::<f64>::zeros(p, p);
            for ab in &asb {
                grad += ab.transpose() * &w * ab;
            }
            grad = (&grad + grad.transpose()) * 0.5;
            let (gvals, gvecs) = linalg::sym_eigen(&grad);
            let q = gvecs.column(gvals.len() - 1).into_owned();
            let fw_score = (q.transpose() * &grad * &q)[(0, 0)];
            let s_score: f64 =
                qs.iter().zip(&wts).map(|(qi, &wi)| wi * (qi.transpose() * &grad * qi)[(0, 0)]).sum();
            let gap = gamma2 * fw_score - s_score;
            if gap <= 0.3 * mu {
                break;
            }
            // Reuse an existing atom when the new direction duplicates it.
            let fw = match qs.iter().position(|qi| qi.dot(&q).abs() > 1.0 - 1e-10) {
                Some(i) => i,
                None => {
                    qs.push(q.clone());
                    wts.push(0.0);
                    lqs.push(unit_lift(&q));
                    qs.len() - 1
                }
            };
            // Least useful active atom, excluding the target.
            let away = qs
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != fw && wts[i] > 1e-14 * gamma2)
                .min_by(|&(i, qi), &(j, qj)| {
                    let si = (qi.transpose() * &grad * qi)[(0, 0)];
                    let sj = (qj.transpose() * &grad * qj)[(0, 0)];
                    si.total_cmp(&sj).then(i.cmp(&j))
                })
                .map(|(i, _)| i);
            let before = smooth(&vals, mu);

            // Plain step: mix the whole iterate toward the new atom.
            let f_mix = |eta: f64| {
                let mm = &base + &ls * (1.0 - eta) + &lqs[fw] * (gamma2 * eta);
                smooth(&linalg::sym_eigen(&mm).0, mu)
            };
            let eta_mix = golden_max(f_mix, 0.0, 1.0, 48);
            let val_mix = f_mix(eta_mix);

            // Pairwise step: shift weight from the away atom to the new one.
            let pw = away.map(|j| {
                let cap = wts[j];
                let f_pw = |eta: f64| {
                    let mm = &base + &ls + (&lqs[fw] - &lqs[j]) * eta;
                    smooth(&linalg::sym_eigen(&mm).0, mu)
                };
                let eta = golden_max(f_pw, 0.0, cap, 48);
                (j, eta, f_pw(eta))
            });

            match pw {
                Some((j, eta, val)) if val >= val_mix => {
                    ls += (&lqs[fw] - &lqs[j]) * eta;
                    wts[fw] += eta;
                    wts[j] -= eta;
                }
                _ => {
                    ls = &ls * (1.0 - eta_mix) + &lqs[fw] * (gamma2 * eta_mix);
                    for w in &mut wts {
                        *w *= 1.0 - eta_mix;
                    }
                    wts[fw] += gamma2 * eta_mix;
                }
            }
            m = &base + &ls;
            let t = linalg::lambda_min(&m);
            if t > best_obj {
                best_obj = t;
                best_s = assemble(&qs, &wts);
            }
            let after = smooth(&linalg::sym_eigen(&m).0, mu);
            if after - before <= 1e-4 * mu {
                break;
            }
        }
        if last_level {
            break;
        }
        mu = (mu * 0.25).max(mu_min);
    }
    Ok(NoiseCovResult { cov: best_s, objective: best_obj, iterations })
}

/// Closed form for `optimal_noise_covariance` when `A` is diagonal with
/// entries `lams`, `B = I`, `sigma = 0`:
/// `lambda_min = gamma2 / sum_i (1 - lam_i^2) / (1 - lam_i^{2K})`.
pub fn optimal_noise_objective_diagonal(lams: &[f64], gamma2: f64, horizon: usize) -> f64 {
    let denom: f64 = lams
        .iter()
        .map(|&l| {
            let l2 = l * l;
            if l2 == 0.0 {
                1.0
            } else {
                (1.0 - l2) / (1.0 - l2.powi(horizon as i32))
            }
        })
        .sum();
    gamma2 / denom
}

/// Directional derivative of the steady-state response energy
/// `hk(A) = sum_{l in support} ||w^T (e^{j theta_l} I - A)^{-1} B U_l||^2 / k^2`
/// in the direction `delta`:
/// `2 sum_l Re[ w^T R_l delta R_l B U_l U_l^H B^H R_l^H w ] / k^2`.
pub fn response_directional_derivative(
    sys: &LinSys,
    u: &PeriodicInput,
    w: &DVector<f64>,
    delta: &DMatrix<f64>,
) -> Result<f64> {
    sys.ensure_stable()?;
    let d = sys.d();
    if w.len() != d || delta.nrows() != d || delta.ncols() != d {
        return Err(Error::Dimension("w and delta must be in state dimension".into()));
    }
    let wc = CVector::from_iterator(d, w.iter().map(|&x| Complex::new(x, 0.0)));
    let dc = linalg::to_complex(delta);
    let bc = linalg::to_complex(&sys.b);
    let mut acc = 0.0;
    for l in 1..=u.k {
        let c = &u.coeffs[l - 1];
        if c.norm_squared() == 0.0 {
            continue;
        }
        let r = resolvent(sys, l, u.k)?;
        let x = &r * &bc * c; // R_l B U_l
        let left = r.adjoint() * &wc; // (w^T R_l)^H
        // w^T R_l delta (R_l B U_l) * (U_l^H B^H R_l^H w)
        let t1 = left.adjoint() * &dc * &x;
        let t2 = x.adjoint() * &wc;
        acc += 2.0 * (t1[(0, 0)] * t2[(0, 0)]).re;
    }
    Ok(acc / (u.k * u.k) as f64)
}

/// The response energy `hk` itself (for finite-difference checks of the
/// derivative).
pub fn response_energy(sys: &LinSys, u: &PeriodicInput, w: &DVector<f64>) -> Result<f64> {
    let s = freq::steady_state_covariance_raw(sys, u)?;
    Ok((w.transpose() * s * w)[(0, 0)])
}

/// Report-only accuracy threshold below which the gating analysis treats
/// the estimate as good enough to design against:
///
/// `min{ (27/(256 T gamma2)) * J / max_{w,l} ||w^T R_l||^2 ||R_l|| ||B||^2,
///       1 / (5 max_l ||R_l||) }`
///
/// where `J` is the achievable design objective at half power over the full
/// support and the `w`-max ranges over the candidate weak-direction set
/// (built at accuracy zero). Constants here are conservative analysis
/// devices; the value is for diagnostics, never a runtime gate.
pub fn accuracy_threshold(
    sys: &LinSys,
    gamma2: f64,
    k: usize,
    t: usize,
    t0: usize,
    state_gram: &DMatrix<f64>,
    opts: &DesignOptions,
) -> Result<f64> {
    sys.ensure_stable()?;
    let horizon = (2 * t + t0) as f64;
    let cand = candidate_directions(sys, k, 0.0, gamma2, state_gram, horizon)?;
    let mut prob = DesignProblem::new(sys.clone(), gamma2 / 2.0, k, state_gram.clone(), horizon);
    prob.support = Some((1..k).collect());
    let j = optimize_input(&prob, opts)?.objective;
    let b_norm = linalg::opnorm(&sys.b);
    let mut denom = 0.0f64;
    let mut r_max = 0.0f64;
    for l in 1..=k {
        let r = resolvent(sys, l, k)?;
        let r_norm = linalg::opnorm_c(&r);
        r_max = r_max.max(r_norm);
        let rr = linalg::re(&(&r * r.adjoint()));
        let w_term = cand.ellipsoid.max_quadratic(&((&rr + rr.transpose()) * 0.5));
        denom = denom.max(w_term * r_norm * b_norm * b_norm);
    }
    if denom <= 0.0 || r_max <= 0.0 {
        return Err(Error::Singular("degenerate resolvent norms".into()));
    }
    let first = 27.0 / (256.0 * t as f64 * gamma2) * j / denom;
    Ok(first.min(1.0 / (5.0 * r_max)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_sys(a: f64) -> LinSys {
        LinSys::new(DMatrix::from_element(1, 1, a), DMatrix::identity(1, 1)).unwrap()
    }

    #[test]
    fn scalar_design_hits_best_frequency() {
        // d = 1: best non-DC bin is l = 1 (or 19), objective
        // weight * gamma2 / |e^{j pi/10} - 0.9|^2 + past.
        let sys = scalar_sys(0.9);
        let prob = DesignProblem::new(sys, 1.0, 20, DMatrix::from_element(1, 1, 0.3), 2.0);
        let res = optimize_input(&prob, &DesignOptions::default()).unwrap();
        let theta = freq::bin_frequency(1, 20);
        let best = (Complex::from_polar(1.0, theta) - Complex::new(0.9, 0.0)).norm_sqr().recip();
        assert_relative_eq!(res.objective, 2.0 * best + 0.3, max_relative = 1e-6);
        assert!(res.truncation_loss < 1e-9);
    }

    #[test]
    fn trace_is_monotone() {
        let a = DMatrix::from_row_slice(2, 2, &[0.8, 0.3, 0.0, 0.6]);
        let sys = LinSys::new(a, DMatrix::identity(2, 2)).unwrap();
        let prob = DesignProblem::new(sys, 1.0, 16, DMatrix::identity(2, 2) * 0.1, 1.0);
        let res = optimize_input(&prob, &DesignOptions::default()).unwrap();
        for w in res.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "trace decreased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn design_beats_white_noise() {
        // Designed input should dominate the white-noise covariance at equal
        // power on a rotation-like system.
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.2, 0.9]) * 0.9;
        let sys = LinSys::new(a.clone(), DMatrix::identity(2, 2)).unwrap();
        let prob = DesignProblem::new(sys.clone(), 1.0, 32, DMatrix::zeros(2, 2), 1.0);
        let res = optimize_input(&prob, &DesignOptions::default()).unwrap();
        let horizon = lds::gramian_horizon(&a).unwrap();
        let white =
            linalg::lambda_min(&(lds::input_gramian(&a, &sys.b, horizon).unwrap() * 0.5));
        assert!(res.objective >= white, "design {} < white {}", res.objective, white);
    }

    #[test]
    fn support_restriction_respected() {
        let sys = scalar_sys(0.5);
        let mut prob = DesignProblem::new(sys, 1.0, 12, DMatrix::zeros(1, 1), 1.0);
        prob.support = Some(vec![3, 9]);
        let res = optimize_input(&prob, &DesignOptions::default()).unwrap();
        for l in 1..=12 {
            if l != 3 && l != 9 {
                assert!(res.input.coeffs[l - 1].norm() < 1e-9, "power leaked to bin {l}");
            }
        }
        assert_relative_eq!(res.input.average_power(), 1.0, max_relative = 1e-9);
    }

    #[test]
    fn dc_requires_flag() {
        let sys = scalar_sys(0.5);
        let mut prob = DesignProblem::new(sys, 1.0, 8, DMatrix::zeros(1, 1), 1.0);
        prob.support = Some(vec![8]);
        assert!(optimize_input(&prob, &DesignOptions::default()).is_err());
        prob.allow_dc = true;
        let res = optimize_input(&prob, &DesignOptions::default()).unwrap();
        // DC on a scalar system with a = 0.5: gain 1/(1 - 0.5)^2 = 4.
        assert_relative_eq!(res.objective, 4.0, max_relative = 1e-6);
    }

    #[test]
    fn lower_bound_rate_scalar() {
        // a = 0.9, DC allowed: rate = sigma^2/(1 - 0.81) + gamma2 / (1-0.9)^2.
        let sys = scalar_sys(0.9);
        let rate = lower_bound_rate(&sys, 1.0, 1.0, 64, &DesignOptions::default()).unwrap();
        let expect = 1.0 / (1.0 - 0.81) + 100.0;
        assert_relative_eq!(rate, expect, max_relative = 1e-4);
    }

    #[test]
    fn eligible_frequencies_shrink_with_eps() {
        let sys = scalar_sys(0.95);
        let all = eligible_frequencies(&sys, 32, 0.0).unwrap();
        assert_eq!(all.len(), 32);
        let some = eligible_frequencies(&sys, 32, 0.01).unwrap();
        // Near theta = 0 the resolvent norm is 1/0.05 = 20, and
        // 1/(4*20) = 0.0125 > 0.01, so DC stays; tighter eps drops it.
        assert!(some.contains(&32));
        let few = eligible_frequencies(&sys, 32, 0.013).unwrap();
        assert!(!few.contains(&32));
        assert!(few.len() < 32);
    }

    #[test]
    fn ellipsoid_max_quadratic_matches_brute_force() {
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
        let set = DirectionEllipsoid { q, c: 2.0 };
        let p = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 3.0]));
        // Parameterize w = (cos t, sin t); feasible iff cos^2 + 4 sin^2 <= 2.
        let mut best = f64::NEG_INFINITY;
        for i in 0..200_000 {
            let t = std::f64::consts::PI * i as f64 / 200_000.0;
            let w = DVector::from_vec(vec![t.cos(), t.sin()]);
            if (w.transpose() * &set.q * &w)[(0, 0)] <= 2.0 {
                best = best.max((w.transpose() * &p * &w)[(0, 0)]);
            }
        }
        let got = set.max_quadratic(&p);
        assert_relative_eq!(got, best, max_relative = 1e-3);
    }

    #[test]
    fn ellipsoid_unconstrained_case() {
        let set = DirectionEllipsoid { q: DMatrix::identity(2, 2), c: 5.0 };
        let p = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 7.0]));
        assert_relative_eq!(set.max_quadratic(&p), 7.0, max_relative = 1e-9);
    }

    #[test]
    fn directional_derivative_matches_finite_difference() {
        let a = DMatrix::from_row_slice(2, 2, &[0.7, 0.2, -0.1, 0.5]);
        let b = DMatrix::from_column_slice(2, 2, &[1.0, 0.2, 0.0, 0.8]);
        let sys = LinSys::new(a.clone(), b).unwrap();
        let samples: Vec<_> = (0..8)
            .map(|t| DVector::from_vec(vec![(t as f64).sin(), (0.5 * t as f64).cos()]))
            .collect();
        let u = PeriodicInput::from_time_domain(&samples, 1.0).unwrap();
        let w = DVector::from_vec(vec![0.6, -0.8]);
        let delta = DMatrix::from_row_slice(2, 2, &[0.3, -0.5, 0.2, 0.9]);
        let got = response_directional_derivative(&sys, &u, &w, &delta).unwrap();
        let h = 1e-6;
        let f = |s: f64| {
            let sp = LinSys::new(&a + &delta * s, sys.b.clone()).unwrap();
            response_energy(&sp, &u, &w).unwrap()
        };
        let fd = (f(h) - f(-h)) / (2.0 * h);
        assert_relative_eq!(got, fd, max_relative = 1e-4);
    }

    #[test]
    fn noise_cov_matches_diagonal_closed_form() {
        // d = 2, lam = (0.9, 0), sigma = 0, K large: gamma2 / 1.19.
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.9, 0.0]));
        let sys = LinSys::new(a, DMatrix::identity(2, 2)).unwrap();
        let k = 400;
        let res = optimal_noise_covariance(&sys, 1.0, 0.0, k, 500).unwrap();
        let expect = optimal_noise_objective_diagonal(&[0.9, 0.0], 1.0, k);
        assert_relative_eq!(expect, 1.0 / 1.19, max_relative = 1e-6);
        assert_relative_eq!(res.objective, expect, max_relative = 1e-3);
        assert!(res.cov.trace() <= 1.0 + 1e-9);
        assert!(linalg::lambda_min(&res.cov) >= -1e-10);
    }

    #[test]
    fn greedy_plan_uses_full_support() {
        let a = DMatrix::from_row_slice(2, 2, &[0.8, 0.2, 0.0, 0.7]);
        let sys = LinSys::new(a, DMatrix::identity(2, 2)).unwrap();
        let ctx = PlanContext {
            sys,
            gamma2: 4.0,
            k: 16,
            t_prev: 100,
            t0: 100,
            eps: 0.05,
            sigma: 1.0,
            state_gram: DMatrix::identity(2, 2) * 50.0,
            mode: DesignMode::Greedy,
        };
        let plan = plan_input(&ctx, &DesignOptions::default()).unwrap();
        assert!(plan.global_pass);
        assert!(!plan.noise_fallback);
        assert_eq!(plan.support.len(), 15);
        assert_relative_eq!(plan.sigma_u2, 1.0);
        assert_relative_eq!(plan.design.input.average_power(), 2.0, max_relative = 1e-9);
    }

    #[test]
    fn unstable_estimate_falls_back_to_noise() {
        let sys = LinSys::new(DMatrix::from_element(1, 1, 1.05), DMatrix::identity(1, 1)).unwrap();
        let ctx = PlanContext {
            sys,
            gamma2: 2.0,
            k: 8,
            t_prev: 10,
            t0: 10,
            eps: 1.0,
            sigma: 1.0,
            state_gram: DMatrix::identity(1, 1),
            mode: DesignMode::Greedy,
        };
        let plan = plan_input(&ctx, &DesignOptions::default()).unwrap();
        assert!(plan.noise_fallback);
        assert_relative_eq!(plan.sigma_u2, 2.0);
        assert_eq!(plan.design.input.coeff_energy(), 0.0);
    }

    #[test]
    fn gated_plan_with_tight_eps_restricts_support() {
        // Huge eps: nothing is eligible, plan degrades to noise-only input.
        let sys = scalar_sys(0.9);
        let ctx = PlanContext {
            sys,
            gamma2: 1.0,
            k: 16,
            t_prev: 50,
            t0: 100,
            eps: 10.0,
            sigma: 1.0,
            state_gram: DMatrix::from_element(1, 1, 30.0),
            mode: DesignMode::FiniteTime,
        };
        let plan = plan_input(&ctx, &DesignOptions::default()).unwrap();
        assert!(plan.support.is_empty());
        assert!(!plan.global_pass);
        assert_relative_eq!(plan.sigma_u2, 1.0); // full budget to noise
    }

    #[test]
    fn gated_plan_with_small_eps_passes_globally() {
        let sys = scalar_sys(0.5);
        let ctx = PlanContext {
            sys,
            gamma2: 1.0,
            k: 16,
            t_prev: 1000,
            t0: 100,
            eps: 1e-6,
            sigma: 1.0,
            state_gram: DMatrix::from_element(1, 1, 3000.0),
            mode: DesignMode::FiniteTime,
        };
        let plan = plan_input(&ctx, &DesignOptions::default()).unwrap();
        assert!(plan.global_pass, "support: {:?}", plan.support);
        assert_eq!(plan.support.len(), 15);
    }

    #[test]
    fn asymptotic_plan_designs_against_noise_gramian() {
        let sys = scalar_sys(0.6);
        let ctx = PlanContext {
            sys,
            gamma2: 1.0,
            k: 16,
            t_prev: 500,
            t0: 100,
            eps: 1e-6,
            sigma: 1.0,
            state_gram: DMatrix::from_element(1, 1, 1e6), // ignored in this mode
            mode: DesignMode::Asymptotic,
        };
        let plan = plan_input(&ctx, &DesignOptions::default()).unwrap();
        assert!(!plan.support.is_empty());
        // Past covariance used is sigma^2 * horizon * Gamma ~ 1100 * 1.5625,
        // far below the 1e6 the observed gram would give.
        let horizon = (2 * 500 + 100) as f64;
        let gamma_inf = 1.0 / (1.0 - 0.36);
        assert!(plan.design.objective < 1e6);
        assert!(plan.design.objective >= horizon * gamma_inf * 0.9);
    }
}
