//! Stages two and three: inter-cell leakage suppression over structured
//! precoders, then intra-cell zero-forcing inside each cell's precoder span.
//! Also the unstructured alternating iteration used as a baseline.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::allocation::{StreamAssignment, SubspacePlan};
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::network::ChannelSet;

/// Which half of an alternating round produced a trace entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HalfStep {
    Receive,
    Transmit,
}

impl HalfStep {
    pub fn label(self) -> &'static str {
        match self {
            HalfStep::Receive => "receive",
            HalfStep::Transmit => "transmit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub iteration: usize,
    pub half: HalfStep,
    pub leakage: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct IterationOptions {
    /// Stop once a full round lowers leakage by less than this fraction.
    pub eps_conv: f64,
    pub max_iters: usize,
    /// Leakage below this absolute floor counts as converged.
    pub leakage_floor: f64,
    /// Seed for the random starting point.
    pub seed: u64,
}

impl Default for IterationOptions {
    fn default() -> Self {
        IterationOptions {
            eps_conv: 1e-10,
            max_iters: 20_000,
            leakage_floor: 1e-28,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LeakageReport {
    pub inter_cell: f64,
    pub intra_cell: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when a free-element update fell back to the pseudo-inverse.
    pub pinv_fallback: bool,
    pub trace: Vec<TracePoint>,
}

/// Transceivers for every MS, indexed like the MS list (`g * K + k`).
#[derive(Debug, Clone)]
pub struct TransceiverSet {
    pub g: usize,
    pub k: usize,
    pub d: StreamAssignment,
    /// Intermediate precoders `V^C + S V^F`.
    pub v_inter: Vec<CMatrix>,
    /// Final precoders.
    pub v: Vec<CMatrix>,
    /// Decorrelators with orthonormal columns.
    pub u: Vec<CMatrix>,
}

impl TransceiverSet {
    pub fn index(&self, g: usize, k: usize) -> usize {
        g * self.k + k
    }
}

fn cell_of(i: usize, k: usize) -> usize {
    i / k
}

/// `Σ ‖U_rᴴ H V_t‖²` over receivers `r` and transmitters `t` in different cells.
pub fn inter_cell_leakage(ch: &ChannelSet, u: &[CMatrix], v: &[CMatrix]) -> f64 {
    leakage_where(ch, u, v, |r, t, k| cell_of(r, k) != cell_of(t, k))
}

/// `Σ ‖U_rᴴ H V_t‖²` over distinct MSs of the same cell.
pub fn intra_cell_leakage(ch: &ChannelSet, u: &[CMatrix], v: &[CMatrix]) -> f64 {
    leakage_where(ch, u, v, |r, t, k| r != t && cell_of(r, k) == cell_of(t, k))
}

fn leakage_where(ch: &ChannelSet, u: &[CMatrix], v: &[CMatrix], keep: impl Fn(usize, usize, usize) -> bool) -> f64 {
    let k = ch.k();
    let mut total = 0.0;
    for r in 0..u.len() {
        if u[r].ncols() == 0 {
            continue;
        }
        for t in 0..v.len() {
            if v[t].ncols() == 0 || !keep(r, t, k) {
                continue;
            }
            let h = ch.h(r / k, r % k, cell_of(t, k));
            total += linalg::frobenius_sq(&(u[r].adjoint() * h * &v[t]));
        }
    }
    total
}

/// Largest interference block norm `‖U_rᴴ H V_t‖` over all pairs `r ≠ t`.
pub fn max_cross_block(ch: &ChannelSet, u: &[CMatrix], v: &[CMatrix]) -> f64 {
    let k = ch.k();
    let mut worst: f64 = 0.0;
    for r in 0..u.len() {
        for t in 0..v.len() {
            if r == t || u[r].ncols() == 0 || v[t].ncols() == 0 {
                continue;
            }
            let h = ch.h(r / k, r % k, cell_of(t, k));
            worst = worst.max(linalg::frobenius(&(u[r].adjoint() * h * &v[t])));
        }
    }
    worst
}

/// Smallest singular value of each direct block `U_iᴴ H V_i` (zero for MSs
/// without streams).
pub fn direct_block_sigma_min(ch: &ChannelSet, u: &[CMatrix], v: &[CMatrix]) -> Vec<f64> {
    let k = ch.k();
    (0..u.len())
        .map(|i| {
            if u[i].ncols() == 0 {
                return 0.0;
            }
            let block = u[i].adjoint() * ch.h(i / k, i % k, i / k) * &v[i];
            linalg::singular_values(&block).last().copied().unwrap_or(0.0)
        })
        .collect()
}

/// Interference covariance `Σ H V Vᴴ Hᴴ` seen by receiver `r` from the
/// transmitters selected by `keep`.
fn rx_covariance(ch: &ChannelSet, r: usize, v: &[CMatrix], keep: impl Fn(usize) -> bool) -> CMatrix {
    let k = ch.k();
    let nr = ch.spec.nr[r / k][r % k];
    let mut q = linalg::zeros(nr, nr);
    for (t, vt) in v.iter().enumerate() {
        if vt.ncols() == 0 || !keep(t) {
            continue;
        }
        let hv = ch.h(r / k, r % k, cell_of(t, k)) * vt;
        q += &hv * hv.adjoint();
    }
    q
}

/// Interference covariance `Σ Hᴴ U Uᴴ H` at the BS of transmitter `t` over
/// the receivers selected by `keep`.
fn tx_covariance(ch: &ChannelSet, t: usize, u: &[CMatrix], keep: impl Fn(usize) -> bool) -> CMatrix {
    let k = ch.k();
    let n = cell_of(t, k);
    let nt = ch.spec.nt[n];
    let mut q = linalg::zeros(nt, nt);
    for (r, ur) in u.iter().enumerate() {
        if ur.ncols() == 0 || !keep(r) {
            continue;
        }
        let uh = ur.adjoint() * ch.h(r / k, r % k, n);
        q += uh.adjoint() * uh;
    }
    q
}

/// Alternating inter-cell leakage minimization over `V^C + S V^F` and
/// `U = S^r U^F`.
pub fn suppress_inter_cell(
    ch: &ChannelSet,
    plan: &SubspacePlan,
    d: &StreamAssignment,
    opts: &IterationOptions,
) -> Result<(TransceiverSet, LeakageReport)> {
    let (g, k) = (ch.g(), ch.k());
    let count = g * k;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut cores = Vec::with_capacity(count);
    let mut frees = Vec::with_capacity(count);
    let mut recvs = Vec::with_capacity(count);
    for i in 0..count {
        let p = plan.by_index(i);
        let di = d.by_index(i);
        if p.core.dim() != di {
            return Err(Error::DimensionMismatch {
                expected: di,
                found: p.core.dim(),
            });
        }
        if p.receive.dim() < di {
            return Err(Error::DimensionMismatch {
                expected: di,
                found: p.receive.dim(),
            });
        }
        cores.push(p.core.basis().clone());
        frees.push(p.free.basis().clone());
        recvs.push(p.receive.basis().clone());
    }
    let mut vf: Vec<CMatrix> = (0..count)
        .map(|i| linalg::complex_gaussian(frees[i].ncols(), d.by_index(i), &mut rng))
        .collect();
    let build_v = |vf: &[CMatrix]| -> Vec<CMatrix> { (0..count).map(|i| &cores[i] + &frees[i] * &vf[i]).collect() };
    let mut v = build_v(&vf);
    let mut u: Vec<CMatrix> = (0..count)
        .map(|i| linalg::zeros(ch.spec.nr[i / k][i % k], d.by_index(i)))
        .collect();

    let mut report = LeakageReport::default();
    let mut prev = f64::INFINITY;
    for it in 1..=opts.max_iters {
        for r in 0..count {
            let dr = d.by_index(r);
            if dr == 0 {
                continue;
            }
            let q = rx_covariance(ch, r, &v, |t| cell_of(t, k) != cell_of(r, k));
            let s = &recvs[r];
            let uf = linalg::smallest_eigenvectors(&(s.adjoint() * q * s), dr);
            u[r] = s * uf;
        }
        let after_u = inter_cell_leakage(ch, &u, &v);
        report.trace.push(TracePoint {
            iteration: it,
            half: HalfStep::Receive,
            leakage: after_u,
        });

        for t in 0..count {
            if d.by_index(t) == 0 || frees[t].ncols() == 0 {
                continue;
            }
            let q = tx_covariance(ch, t, &u, |r| cell_of(r, k) != cell_of(t, k));
            let (x, truncated) = free_minimizer(&q, &cores[t], &frees[t]);
            report.pinv_fallback |= truncated;
            vf[t] = x;
        }
        v = build_v(&vf);
        let after_v = inter_cell_leakage(ch, &u, &v);
        report.trace.push(TracePoint {
            iteration: it,
            half: HalfStep::Transmit,
            leakage: after_v,
        });
        report.iterations = it;
        if after_v <= opts.leakage_floor || (prev.is_finite() && prev - after_v <= opts.eps_conv * prev) {
            report.converged = true;
            break;
        }
        prev = after_v;
    }
    report.inter_cell = inter_cell_leakage(ch, &u, &v);
    report.intra_cell = intra_cell_leakage(ch, &u, &v);
    let set = TransceiverSet {
        g,
        k,
        d: d.clone(),
        v_inter: v.clone(),
        v,
        u,
    };
    Ok((set, report))
}

/// Diagnostics of the zero-forcing step for one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellZf {
    /// Rank of the stacked matrix `[U_kᴴ H_k V^I]_k`.
    pub stacked_rank: usize,
    pub required: usize,
}

/// Intra-cell zero-forcing: each final precoder of a cell is a combination of
/// that cell's intermediate precoders that no other MS of the cell can see.
pub fn zero_force_intra_cell(ch: &ChannelSet, inter: &TransceiverSet) -> Result<(TransceiverSet, Vec<CellZf>)> {
    let k = inter.k;
    let mut out = inter.clone();
    let mut diag = Vec::with_capacity(inter.g);
    for n in 0..inter.g {
        let members: Vec<usize> = (0..k).map(|j| n * k + j).filter(|&i| inter.d.by_index(i) > 0).collect();
        let total: usize = members.iter().map(|&i| inter.d.by_index(i)).sum();
        if total == 0 {
            diag.push(CellZf {
                stacked_rank: 0,
                required: 0,
            });
            continue;
        }
        let nt = ch.spec.nt[n];
        let mut vi = linalg::zeros(nt, total);
        let mut col = 0;
        for &i in &members {
            let di = inter.d.by_index(i);
            vi.columns_mut(col, di).copy_from(&inter.v_inter[i]);
            col += di;
        }
        let block = |i: usize| inter.u[i].adjoint() * ch.h(n, i % k, n) * &vi;
        let full = stack_rows(members.iter().map(|&i| block(i)).collect(), total);
        let stacked_rank = linalg::rank(&full, 1e-9);
        diag.push(CellZf {
            stacked_rank,
            required: total,
        });
        if stacked_rank < total {
            return Err(Error::RankDeficient {
                bs: n,
                rank: stacked_rank,
                required: total,
            });
        }
        for &q in &members {
            let dq = inter.d.by_index(q);
            // Rows of the other MSs first, `q` last, so the trailing rows of
            // the LQ factor span the part invisible to the others.
            let mut rows: Vec<CMatrix> = members.iter().filter(|&&i| i != q).map(|&i| block(i)).collect();
            rows.push(block(q));
            let m = stack_rows(rows, total);
            let (_, qf) = linalg::lq(&m);
            let tail = qf.adjoint().columns(total - dq, dq).into_owned();
            out.v[q] = linalg::orthonormalize_columns(&(&vi * tail));
        }
    }
    Ok((out, diag))
}

fn stack_rows(blocks: Vec<CMatrix>, cols: usize) -> CMatrix {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = linalg::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.rows_mut(r, b.nrows()).copy_from(&b);
        r += b.nrows();
    }
    out
}

/// Largest projector residual `‖(I − P_n) V_q‖` of a final precoder outside
/// the span of its cell's intermediate precoders.
pub fn span_residual(ch: &ChannelSet, ts: &TransceiverSet) -> f64 {
    let k = ts.k;
    let mut worst: f64 = 0.0;
    for n in 0..ts.g {
        let members: Vec<usize> = (0..k).map(|j| n * k + j).filter(|&i| ts.d.by_index(i) > 0).collect();
        if members.is_empty() {
            continue;
        }
        let total: usize = members.iter().map(|&i| ts.d.by_index(i)).sum();
        let mut vi = linalg::zeros(ch.spec.nt[n], total);
        let mut col = 0;
        for &i in &members {
            let di = ts.d.by_index(i);
            vi.columns_mut(col, di).copy_from(&ts.v_inter[i]);
            col += di;
        }
        let basis = linalg::orthonormalize_columns(&vi);
        for &q in &members {
            let resid = &ts.v[q] - &basis * (basis.adjoint() * &ts.v[q]);
            worst = worst.max(linalg::frobenius(&resid));
        }
    }
    worst
}

/// Unstructured alternating minimization of the total leakage, intra-cell
/// terms included. Both sides take the smallest eigenvectors of their
/// interference covariance.
pub fn naive_iteration(
    ch: &ChannelSet,
    d: &StreamAssignment,
    opts: &IterationOptions,
) -> (TransceiverSet, LeakageReport) {
    let (g, k) = (ch.g(), ch.k());
    let count = g * k;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut v: Vec<CMatrix> = (0..count)
        .map(|i| {
            let nt = ch.spec.nt[i / k];
            linalg::haar_unitary(nt, &mut rng).columns(0, d.by_index(i)).into_owned()
        })
        .collect();
    let mut u: Vec<CMatrix> = (0..count)
        .map(|i| linalg::zeros(ch.spec.nr[i / k][i % k], d.by_index(i)))
        .collect();
    let total = |u: &[CMatrix], v: &[CMatrix]| leakage_where(ch, u, v, |r, t, _| r != t);

    let mut report = LeakageReport::default();
    let mut prev = f64::INFINITY;
    for it in 1..=opts.max_iters {
        for r in 0..count {
            if d.by_index(r) > 0 {
                let q = rx_covariance(ch, r, &v, |t| t != r);
                u[r] = linalg::smallest_eigenvectors(&q, d.by_index(r));
            }
        }
        let after_u = total(&u, &v);
        report.trace.push(TracePoint {
            iteration: it,
            half: HalfStep::Receive,
            leakage: after_u,
        });
        for t in 0..count {
            if d.by_index(t) > 0 {
                let q = tx_covariance(ch, t, &u, |r| r != t);
                v[t] = linalg::smallest_eigenvectors(&q, d.by_index(t));
            }
        }
        let after_v = total(&u, &v);
        report.trace.push(TracePoint {
            iteration: it,
            half: HalfStep::Transmit,
            leakage: after_v,
        });
        report.iterations = it;
        if after_v <= opts.leakage_floor || (prev.is_finite() && prev - after_v <= opts.eps_conv * prev) {
            report.converged = true;
            break;
        }
        prev = after_v;
    }
    report.inter_cell = inter_cell_leakage(ch, &u, &v);
    report.intra_cell = intra_cell_leakage(ch, &u, &v);
    let set = TransceiverSet {
        g,
        k,
        d: d.clone(),
        v_inter: v.clone(),
        v,
        u,
    };
    (set, report)
}

/// Largest increase between consecutive trace points, relative to the first
/// recorded leakage. Zero for a non-increasing trace.
pub fn worst_increase(trace: &[TracePoint]) -> f64 {
    let Some(first) = trace.first() else {
        return 0.0;
    };
    let scale = first.leakage.max(f64::MIN_POSITIVE);
    trace
        .windows(2)
        .map(|w| (w[1].leakage - w[0].leakage) / scale)
        .fold(0.0, f64::max)
}

/// Write a leakage trace as CSV.
pub fn write_trace<W: std::io::Write>(trace: &[TracePoint], mut out: W) -> Result<()> {
    writeln!(out, "iteration,half,leakage")?;
    for p in trace {
        writeln!(out, "{},{},{:.6e}", p.iteration, p.half.label(), p.leakage)?;
    }
    Ok(())
}

/// Objective of the free-element update for one transmitter:
/// `‖Q^{1/2}(V^C + S X)‖²` written as a trace.
pub fn free_objective(q: &CMatrix, core: &CMatrix, free: &CMatrix, x: &CMatrix) -> f64 {
    let v = core + free * x;
    (v.adjoint() * q * &v).trace().re
}

/// Closed-form minimizer of [`free_objective`]. Eigenvalues of `SᴴQS` at
/// the round-off level of `Q` count as zero.
pub fn free_minimizer(q: &CMatrix, core: &CMatrix, free: &CMatrix) -> (CMatrix, bool) {
    let sq = free.adjoint() * q;
    let tol = q.nrows() as f64 * f64::EPSILON;
    let (x, truncated) = linalg::hermitian_pinv_solve(&(&sq * free), &(&sq * core), tol, linalg::frobenius(q));
    (-x, truncated)
}
