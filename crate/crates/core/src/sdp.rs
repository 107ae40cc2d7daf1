//! Small dense semidefinite programs solved by a log-det barrier method.
//!
//! Problem form:
//!
//! ```text
//! minimize    cᵀx
//! subject to  F_k(x) = F_k0 + Σ_i x_i F_ki ⪰ 0     for every block k
//!             lo_i ≤ x_i ≤ hi_i                     (optional box)
//! ```
//!
//! A phase-1 problem `min s  s.t.  F_k(x) + s I ⪰ 0` locates a strictly
//! feasible start. Phase 2 follows the central path of
//! `t cᵀx - Σ_k log det F_k(x)` with damped Newton centering and
//! `t ← μ t` until the duality measure `θ/t` (θ = total block order) drops
//! below the tolerance.

use crate::linalg::{min_eig, solve_psd_pivoted, spd_inverse_logdet, LinalgError, Mat};
use crate::scalar::Real;
use std::io::Write;
use thiserror::Error;

pub const MAX_VARS: usize = 64;
pub const MAX_BLOCK: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdpError {
    #[error("malformed problem: {0}")]
    Malformed(String),
    #[error("solver stalled after {iterations} Newton steps ({reason})")]
    Stalled { iterations: usize, reason: String },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Symmetric affine matrix map `x ↦ F0 + Σ x_i F_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineBlock<T> {
    pub constant: Mat<T>,
    pub coeffs: Vec<Mat<T>>,
}

impl<T: Real> AffineBlock<T> {
    pub fn new(constant: Mat<T>, coeffs: Vec<Mat<T>>) -> Self {
        Self { constant, coeffs }
    }

    /// Extracts the affine representation of `f` by evaluating it at the
    /// origin and at each unit vector. `f` must be affine.
    pub fn from_affine_fn(n_vars: usize, f: impl Fn(&[T]) -> Mat<T>) -> Self {
        let mut x = vec![T::zero(); n_vars];
        let constant = f(&x);
        let coeffs = (0..n_vars)
            .map(|i| {
                x[i] = T::one();
                let m = f(&x).sub(&constant);
                x[i] = T::zero();
                m
            })
            .collect();
        Self { constant, coeffs }
    }

    pub fn size(&self) -> usize {
        self.constant.rows()
    }

    pub fn eval(&self, x: &[T]) -> Mat<T> {
        let mut m = self.constant.clone();
        for (c, &xi) in self.coeffs.iter().zip(x) {
            if xi != T::zero() {
                m.axpy(xi, c);
            }
        }
        m
    }

    fn active_vars(&self) -> Vec<usize> {
        self.coeffs.iter().enumerate().filter(|(_, c)| c.max_abs() > T::zero()).map(|(i, _)| i).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem<T> {
    pub n_vars: usize,
    pub objective: Vec<T>,
    pub blocks: Vec<AffineBlock<T>>,
    pub var_bounds: Option<Vec<(T, T)>>,
}

impl<T: Real> SdpProblem<T> {
    pub fn new(objective: Vec<T>, blocks: Vec<AffineBlock<T>>) -> Self {
        Self { n_vars: objective.len(), objective, blocks, var_bounds: None }
    }

    pub fn with_bounds(mut self, bounds: Vec<(T, T)>) -> Self {
        self.var_bounds = Some(bounds);
        self
    }

    pub fn validate(&self) -> Result<(), SdpError> {
        if self.n_vars > MAX_VARS {
            return Err(SdpError::Malformed(format!("{} variables exceeds limit {MAX_VARS}", self.n_vars)));
        }
        if self.objective.len() != self.n_vars {
            return Err(SdpError::Malformed("objective length differs from n_vars".into()));
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(SdpError::Malformed("objective has non-finite entries".into()));
        }
        for (k, b) in self.blocks.iter().enumerate() {
            let n = b.size();
            if n == 0 || n > MAX_BLOCK {
                return Err(SdpError::Malformed(format!("block {k} has order {n}, expected 1..={MAX_BLOCK}")));
            }
            if b.coeffs.len() != self.n_vars {
                return Err(SdpError::Malformed(format!("block {k} has {} coefficient matrices", b.coeffs.len())));
            }
            for m in std::iter::once(&b.constant).chain(&b.coeffs) {
                if m.rows() != n || m.cols() != n {
                    return Err(SdpError::Malformed(format!("block {k} mixes matrix sizes")));
                }
                if !m.is_finite() {
                    return Err(SdpError::Malformed(format!("block {k} has non-finite entries")));
                }
                m.check_symmetric().map_err(|e| SdpError::Malformed(format!("block {k}: {e}")))?;
            }
        }
        if let Some(bounds) = &self.var_bounds {
            if bounds.len() != self.n_vars {
                return Err(SdpError::Malformed("var_bounds length differs from n_vars".into()));
            }
            if bounds.iter().any(|&(lo, hi)| !(lo < hi)) {
                return Err(SdpError::Malformed("every bound needs lo < hi".into()));
            }
        }
        Ok(())
    }

    /// Smallest eigenvalue of every block at `x`.
    pub fn block_min_eigs(&self, x: &[T]) -> Result<Vec<T>, SdpError> {
        self.blocks.iter().map(|b| Ok(min_eig(&b.eval(x).symmetrize())?)).collect()
    }

    pub fn objective_at(&self, x: &[T]) -> T {
        crate::linalg::dot(&self.objective, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions<T> {
    /// Target duality measure `θ/t`.
    pub tol: T,
    /// Cap on Newton steps per phase.
    pub max_iter: usize,
    /// Barrier growth factor.
    pub mu: T,
    /// Half-width of the box imposed on unbounded variables in phase 1.
    pub phase1_radius: T,
    pub record_iterates: bool,
}

impl<T: Real> Default for SolverOptions<T> {
    fn default() -> Self {
        Self { tol: T::lit(1e-8), max_iter: 200, mu: T::lit(10.0), phase1_radius: T::lit(1e6), record_iterates: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    Stalled,
}

/// One Newton step, kept when `record_iterates` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateRecord<T> {
    pub phase: u8,
    pub outer: usize,
    pub t: T,
    pub objective: T,
    pub decrement: T,
    pub step: T,
    pub x: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution<T> {
    pub x: Vec<T>,
    pub objective_value: T,
    pub block_min_eigs: Vec<T>,
    /// Newton steps over both phases.
    pub iterations: usize,
    pub status: SdpStatus,
    /// `cᵀx` after each completed centering.
    pub outer_objectives: Vec<T>,
    pub iterates: Vec<IterateRecord<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase1Result<T> {
    pub x: Vec<T>,
    /// Optimal (or first negative, when stopping early) shift `s`.
    pub s: T,
    pub feasible: bool,
    pub iterations: usize,
}

/// Barrier problem in canonical form, with box bounds folded in as 1×1
/// blocks.
struct Barrier<'a, T> {
    blocks: Vec<BlockRef<'a, T>>,
    c: Vec<T>,
    theta: T,
}

enum BlockRef<'a, T> {
    Lmi { block: &'a AffineBlock<T>, active: Vec<usize>, shift: Option<usize> },
    /// `sign·x_i + offset ≥ 0`
    Linear { var: usize, sign: T, offset: T },
}

struct Local<T> {
    value: T,
    grad: Vec<T>,
    hess: Mat<T>,
}

impl<'a, T: Real> Barrier<'a, T> {
    fn order(&self) -> T {
        self.theta
    }

    /// Evaluates the barrier `-Σ log det` with gradient and Hessian, or
    /// `None` outside the interior.
    fn local(&self, x: &[T]) -> Option<Local<T>> {
        let n = x.len();
        let mut value = T::zero();
        let mut grad = vec![T::zero(); n];
        let mut hess = Mat::zeros(n, n);
        for b in &self.blocks {
            match b {
                BlockRef::Linear { var, sign, offset } => {
                    let v = *sign * x[*var] + *offset;
                    if !(v > T::zero()) {
                        return None;
                    }
                    value -= v.ln();
                    grad[*var] -= *sign / v;
                    hess[(*var, *var)] += T::one() / (v * v);
                }
                BlockRef::Lmi { block, active, shift } => {
                    let mut m = block.eval(x);
                    let mut vars = active.clone();
                    let shift_coeff;
                    if let Some(si) = shift {
                        for d in 0..m.rows() {
                            m[(d, d)] += x[*si];
                        }
                        shift_coeff = Some(Mat::identity(m.rows()));
                        vars.push(*si);
                    } else {
                        shift_coeff = None;
                    }
                    let (inv, logdet) = spd_inverse_logdet(&m).ok()?;
                    value -= logdet;
                    let coeff = |i: usize| -> &Mat<T> {
                        if Some(i) == *shift {
                            shift_coeff.as_ref().unwrap()
                        } else {
                            &block.coeffs[i]
                        }
                    };
                    let g: Vec<Mat<T>> = vars.iter().map(|&i| inv.matmul(coeff(i))).collect();
                    for (a, &i) in vars.iter().enumerate() {
                        grad[i] -= g[a].trace();
                        for (b2, &j) in vars.iter().enumerate().skip(a) {
                            let h = g[a].trace_of_product(&g[b2]);
                            hess[(i, j)] += h;
                            if i != j {
                                hess[(j, i)] += h;
                            }
                        }
                    }
                }
            }
        }
        Some(Local { value, grad, hess })
    }

    fn objective(&self, x: &[T]) -> T {
        crate::linalg::dot(&self.c, x)
    }
}

/// Solves `H d = b` after symmetric diagonal equilibration, so that
/// variables on very different scales are not mistaken for null directions.
fn newton_solve<T: Real>(h: &Mat<T>, b: &[T], rel_floor: T) -> Result<Vec<T>, LinalgError> {
    let n = b.len();
    let d: Vec<T> = (0..n)
        .map(|i| {
            let hii = h[(i, i)];
            if hii > T::zero() {
                T::one() / hii.sqrt()
            } else {
                T::one()
            }
        })
        .collect();
    let hs = Mat::from_fn(n, n, |i, j| d[i] * h[(i, j)] * d[j]);
    let bs: Vec<T> = (0..n).map(|i| d[i] * b[i]).collect();
    let y = solve_psd_pivoted(&hs, &bs, rel_floor)?;
    Ok((0..n).map(|i| d[i] * y[i]).collect())
}

/// Predicate checked at each accepted iterate.
type EarlyExit<'a, T> = Option<&'a dyn Fn(&[T]) -> bool>;

struct PathOutcome<T> {
    x: Vec<T>,
    newton_steps: usize,
    outer_objectives: Vec<T>,
    stopped_early: bool,
}

/// Follows the central path from a strictly feasible `x`.
///
/// `early_exit` stops as soon as the predicate holds at an accepted iterate.
fn follow_path<T: Real>(
    bar: &Barrier<'_, T>,
    mut x: Vec<T>,
    opts: &SolverOptions<T>,
    phase: u8,
    early_exit: EarlyExit<'_, T>,
    iterates: &mut Vec<IterateRecord<T>>,
) -> Result<PathOutcome<T>, SdpError> {
    let n = x.len();
    let theta = bar.order();
    let rel_floor = T::lit(1e-14);
    let mut loc = bar.local(&x).ok_or_else(|| SdpError::Malformed("start point is not strictly feasible".into()))?;

    // Initial t balancing objective against barrier gradient.
    let mut t = {
        let hc = newton_solve(&loc.hess, &bar.c, rel_floor)?;
        let hg = newton_solve(&loc.hess, &loc.grad, rel_floor)?;
        let chc = crate::linalg::dot(&bar.c, &hc);
        let cg = crate::linalg::dot(&bar.c, &hg);
        let guess = -cg / chc;
        if guess.is_finite() && guess > T::zero() {
            guess.max(T::lit(1e-3)).min(T::lit(1e6))
        } else {
            T::one()
        }
    };
    let mut steps = 0usize;
    let mut outer_objectives = Vec::new();
    let mut outer = 0usize;
    let inner_tol = T::lit(1e-9);
    loop {
        // Centering.
        loop {
            let grad: Vec<T> = (0..n).map(|i| t * bar.c[i] + loc.grad[i]).collect();
            let neg: Vec<T> = grad.iter().map(|&g| -g).collect();
            let dx = newton_solve(&loc.hess, &neg, rel_floor)?;
            let lambda2 = -crate::linalg::dot(&grad, &dx);
            if !(lambda2 >= T::zero()) || lambda2 * T::half() <= inner_tol {
                break;
            }
            if steps >= opts.max_iter {
                return Err(SdpError::Stalled { iterations: steps, reason: "Newton step limit reached".into() });
            }
            let f0 = t * bar.objective(&x) + loc.value;
            let slope = -lambda2;
            let mut s = T::one();
            let mut accepted = None;
            while s > T::lit(1e-14) {
                let xn: Vec<T> = x.iter().zip(&dx).map(|(&a, &d)| a + s * d).collect();
                if let Some(ln) = bar.local(&xn) {
                    let f1 = t * bar.objective(&xn) + ln.value;
                    if f1 <= f0 + T::lit(0.25) * s * slope {
                        accepted = Some((xn, ln));
                        break;
                    }
                }
                s *= T::half();
            }
            steps += 1;
            let Some((xn, ln)) = accepted else {
                // Newton decrement at rounding level: treat as centered.
                if lambda2 <= T::lit(1e-6) {
                    break;
                }
                return Err(SdpError::Stalled { iterations: steps, reason: "line search failed".into() });
            };
            let stagnant = xn.iter().zip(&x).all(|(&a, &b)| a == b);
            x = xn;
            loc = ln;
            if stagnant {
                // Rounding floor reached; the iterate is as centered as it gets.
                break;
            }
            if opts.record_iterates {
                iterates.push(IterateRecord {
                    phase,
                    outer,
                    t,
                    objective: bar.objective(&x),
                    decrement: lambda2,
                    step: s,
                    x: x.clone(),
                });
            }
            if let Some(pred) = early_exit {
                if pred(&x) {
                    return Ok(PathOutcome { x, newton_steps: steps, outer_objectives, stopped_early: true });
                }
            }
        }
        outer_objectives.push(bar.objective(&x));
        outer += 1;
        if phase == 1 && early_exit.is_some() && bar.objective(&x) - T::two() * theta / t > T::zero() {
            // Duality bound: the shift cannot reach zero.
            return Ok(PathOutcome { x, newton_steps: steps, outer_objectives, stopped_early: true });
        }
        if theta / t <= opts.tol {
            break;
        }
        t *= opts.mu;
    }
    Ok(PathOutcome { x, newton_steps: steps, outer_objectives, stopped_early: false })
}

fn bound_blocks<'a, T: Real>(bounds: &[(T, T)]) -> Vec<BlockRef<'a, T>> {
    bounds
        .iter()
        .enumerate()
        .flat_map(|(i, &(lo, hi))| {
            let mut v = Vec::new();
            if lo.is_finite() {
                v.push(BlockRef::Linear { var: i, sign: T::one(), offset: -lo });
            }
            if hi.is_finite() {
                v.push(BlockRef::Linear { var: i, sign: -T::one(), offset: hi });
            }
            v
        })
        .collect()
}

fn start_point<T: Real>(p: &SdpProblem<T>) -> Vec<T> {
    match &p.var_bounds {
        Some(b) => b
            .iter()
            .map(|&(lo, hi)| match (lo.is_finite(), hi.is_finite()) {
                (true, true) => (lo + hi) * T::half(),
                (true, false) => lo + T::one(),
                (false, true) => hi - T::one(),
                (false, false) => T::zero(),
            })
            .collect(),
        None => vec![T::zero(); p.n_vars],
    }
}

fn phase1_inner<T: Real>(
    p: &SdpProblem<T>,
    opts: &SolverOptions<T>,
    stop_when_feasible: bool,
    iterates: &mut Vec<IterateRecord<T>>,
) -> Result<Phase1Result<T>, SdpError> {
    p.validate()?;
    let n = p.n_vars;
    let x0 = start_point(p);
    let worst = p
        .block_min_eigs(&x0)?
        .into_iter()
        .fold(T::infinity(), |m, e| m.min(e));
    let s0 = (-worst).max(T::zero()) + T::one();
    let mut z0 = x0.clone();
    z0.push(s0);

    let mut blocks: Vec<BlockRef<'_, T>> = p
        .blocks
        .iter()
        .map(|b| BlockRef::Lmi { block: b, active: b.active_vars(), shift: Some(n) })
        .collect();
    // Floor on the shift keeps phase 1 bounded below.
    blocks.push(BlockRef::Linear { var: n, sign: T::one(), offset: T::one() });
    let r = opts.phase1_radius;
    let box_bounds: Vec<(T, T)> = match &p.var_bounds {
        Some(b) => b.clone(),
        None => vec![(-r, r); n],
    };
    blocks.extend(bound_blocks(&box_bounds));
    let theta = blocks
        .iter()
        .map(|b| match b {
            BlockRef::Lmi { block, .. } => T::count(block.size()),
            BlockRef::Linear { .. } => T::one(),
        })
        .sum();
    let mut c = vec![T::zero(); n + 1];
    c[n] = T::one();
    let bar = Barrier { blocks, c, theta };
    let pred = |z: &[T]| z[n] < T::zero();
    let early: EarlyExit<'_, T> = if stop_when_feasible { Some(&pred) } else { None };
    let out = follow_path(&bar, z0, opts, 1, early, iterates)?;
    let s = out.x[n];
    let mut x = out.x;
    x.truncate(n);
    let feasible = s < T::zero() && p.blocks.iter().all(|b| crate::linalg::cholesky(&b.eval(&x)).is_ok());
    let _ = out.stopped_early;
    Ok(Phase1Result { x, s, feasible, iterations: out.newton_steps })
}

/// Minimizes `s` subject to `F_k(x) + s I ⪰ 0` and `s ≥ -1`.
///
/// The original problem is strictly feasible iff the returned `s < 0`.
/// Variables without explicit bounds are confined to
/// `|x_i| ≤ phase1_radius`.
pub fn phase1<T: Real>(p: &SdpProblem<T>, opts: &SolverOptions<T>) -> Result<Phase1Result<T>, SdpError> {
    phase1_inner(p, opts, false, &mut Vec::new())
}

pub fn solve<T: Real>(p: &SdpProblem<T>, opts: &SolverOptions<T>) -> Result<SdpSolution<T>, SdpError> {
    p.validate()?;
    let mut iterates = Vec::new();
    // A variable with cost but no constraint makes the program unbounded.
    for i in 0..p.n_vars {
        let constrained = p.blocks.iter().any(|b| b.coeffs[i].max_abs() > T::zero())
            || p.var_bounds.as_ref().is_some_and(|b| b[i].0.is_finite() || b[i].1.is_finite());
        if !constrained && p.objective[i] != T::zero() {
            return Ok(SdpSolution {
                x: vec![T::zero(); p.n_vars],
                objective_value: T::neg_infinity(),
                block_min_eigs: Vec::new(),
                iterations: 0,
                status: SdpStatus::Stalled,
                outer_objectives: Vec::new(),
                iterates,
            });
        }
    }
    let ph1 = match phase1_inner(p, opts, true, &mut iterates) {
        Ok(r) => r,
        Err(SdpError::Stalled { iterations, .. }) => {
            return Ok(failed(p, vec![T::zero(); p.n_vars], iterations, SdpStatus::Stalled, iterates));
        }
        Err(e) => return Err(e),
    };
    if !ph1.feasible {
        return Ok(failed(p, ph1.x, ph1.iterations, SdpStatus::Infeasible, iterates));
    }
    let mut blocks: Vec<BlockRef<'_, T>> =
        p.blocks.iter().map(|b| BlockRef::Lmi { block: b, active: b.active_vars(), shift: None }).collect();
    if let Some(b) = &p.var_bounds {
        blocks.extend(bound_blocks(b));
    }
    let theta = blocks
        .iter()
        .map(|b| match b {
            BlockRef::Lmi { block, .. } => T::count(block.size()),
            BlockRef::Linear { .. } => T::one(),
        })
        .sum();
    let bar = Barrier { blocks, c: p.objective.clone(), theta };
    match follow_path(&bar, ph1.x.clone(), opts, 2, None, &mut iterates) {
        Ok(out) => {
            let block_min_eigs = p.block_min_eigs(&out.x)?;
            let status = if block_min_eigs.iter().all(|&e| e >= -opts.tol) { SdpStatus::Optimal } else { SdpStatus::Stalled };
            Ok(SdpSolution {
                objective_value: p.objective_at(&out.x),
                x: out.x,
                block_min_eigs,
                iterations: ph1.iterations + out.newton_steps,
                status,
                outer_objectives: out.outer_objectives,
                iterates,
            })
        }
        Err(SdpError::Stalled { iterations, .. }) => {
            Ok(failed(p, ph1.x, ph1.iterations + iterations, SdpStatus::Stalled, iterates))
        }
        Err(e) => Err(e),
    }
}

fn failed<T: Real>(
    p: &SdpProblem<T>,
    x: Vec<T>,
    iterations: usize,
    status: SdpStatus,
    iterates: Vec<IterateRecord<T>>,
) -> SdpSolution<T> {
    let block_min_eigs = p.block_min_eigs(&x).unwrap_or_default();
    SdpSolution {
        objective_value: p.objective_at(&x),
        x,
        block_min_eigs,
        iterations,
        status,
        outer_objectives: Vec::new(),
        iterates,
    }
}

/// Writes recorded iterates as CSV: `phase,outer,t,objective,decrement,step,x0..`.
pub fn write_iterates_csv<T: Real, W: Write>(mut w: W, iterates: &[IterateRecord<T>]) -> std::io::Result<()> {
    let n = iterates.first().map_or(0, |r| r.x.len());
    write!(w, "phase,outer,t,objective,decrement,step")?;
    for i in 0..n {
        write!(w, ",x{i}")?;
    }
    writeln!(w)?;
    for r in iterates {
        write!(w, "{},{},{:e},{:e},{:e},{:e}", r.phase, r.outer, r.t, r.objective, r.decrement, r.step)?;
        for v in &r.x {
            write!(w, ",{v:e}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
