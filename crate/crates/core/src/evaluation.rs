//! Throughput, DoF slope, the closed-form per-MS stream bound for symmetric
//! networks, and the scheme runners (proposed pipeline and baselines).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::allocation::{self, StreamAssignment};
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::network::{ChannelSet, ConnectivitySpec, NetworkConfig};
use crate::subspace::null_space;
use crate::transceiver::{self, IterationOptions, LeakageReport, TransceiverSet};

#[derive(Debug, Clone, PartialEq)]
pub struct ThroughputSample {
    pub snr_db: f64,
    pub sum_rate_bits: f64,
    pub per_stream_sinr: Vec<f64>,
    pub residual_leakage: f64,
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Rotate each MS's decorrelator and precoder by the singular vectors of its
/// effective direct channel so its own streams do not couple.
pub fn diagonalize(ch: &ChannelSet, ts: &TransceiverSet) -> TransceiverSet {
    let k = ts.k;
    let mut out = ts.clone();
    for i in 0..ts.u.len() {
        if ts.d.by_index(i) == 0 {
            continue;
        }
        let block = ts.u[i].adjoint() * ch.h(i / k, i % k, i / k) * &ts.v[i];
        let (w, _, z) = linalg::svd_sorted(&block);
        out.u[i] = &ts.u[i] * w;
        out.v[i] = &ts.v[i] * z;
    }
    out
}

/// Sum rate with every interfering stream treated as noise. Power `P` is
/// split evenly over the streams of each BS; noise has unit variance. Only
/// BSs with `active[n]` transmit.
pub fn sum_throughput_masked(ch: &ChannelSet, ts: &TransceiverSet, snr_db: f64, active: &[bool]) -> ThroughputSample {
    let k = ts.k;
    let p = db_to_linear(snr_db);
    let diag = diagonalize(ch, ts);
    let per_stream: Vec<f64> = (0..ts.g)
        .map(|n| {
            let streams = ts.d.per_bs(n);
            if streams == 0 { 0.0 } else { p / streams as f64 }
        })
        .collect();
    let mut sinrs = Vec::new();
    let mut rate = 0.0;
    for r in 0..diag.u.len() {
        let g = r / k;
        if ts.d.by_index(r) == 0 || !active[g] {
            continue;
        }
        let ur = &diag.u[r];
        // Received amplitudes of every stream of every active BS at MS `r`.
        let gains: Vec<(usize, CMatrix)> = (0..diag.v.len())
            .filter(|&t| ts.d.by_index(t) > 0 && active[t / k])
            .map(|t| (t, ur.adjoint() * ch.h(g, r % k, t / k) * &diag.v[t]))
            .collect();
        for s in 0..ts.d.by_index(r) {
            let mut signal = 0.0;
            let mut interference = 0.0;
            for (t, m) in &gains {
                let pw = per_stream[t / k];
                for c in 0..m.ncols() {
                    let e = m[(s, c)].norm_sqr() * pw;
                    if *t == r && c == s {
                        signal = e;
                    } else {
                        interference += e;
                    }
                }
            }
            let sinr = signal / (1.0 + interference);
            rate += (1.0 + sinr).log2();
            sinrs.push(sinr);
        }
    }
    ThroughputSample {
        snr_db,
        sum_rate_bits: rate,
        per_stream_sinr: sinrs,
        residual_leakage: transceiver::inter_cell_leakage(ch, &ts.u, &ts.v)
            + transceiver::intra_cell_leakage(ch, &ts.u, &ts.v),
    }
}

pub fn sum_throughput(ch: &ChannelSet, ts: &TransceiverSet, snr_db: f64) -> ThroughputSample {
    sum_throughput_masked(ch, ts, snr_db, &vec![true; ts.g])
}

/// High-SNR slope of sum rate against `log2(P)`.
pub fn dof_slope(a: &ThroughputSample, b: &ThroughputSample) -> f64 {
    slope_between(a.snr_db, a.sum_rate_bits, b.snr_db, b.sum_rate_bits)
}

pub fn slope_between(snr1_db: f64, rate1: f64, snr2_db: f64, rate2: f64) -> f64 {
    let bits_per_db = 10f64.log2() / 10.0;
    (rate2 - rate1) / ((snr2_db - snr1_db) * bits_per_db)
}

/// Parameters of a symmetric network for the per-MS stream bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DofBoundQuery {
    pub g: usize,
    pub k: usize,
    pub j: usize,
    pub nt: usize,
    pub nr: usize,
    pub r1: usize,
    pub r2: usize,
    pub d_f: usize,
}

impl DofBoundQuery {
    pub fn validate(&self) -> Result<()> {
        let ok = self.g >= 1
            && self.k >= 1
            && self.nt >= 1
            && self.r1 <= self.nr
            && self.nr <= self.nt
            && self.r2 <= self.nr
            && self.d_f * self.k <= self.nt;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "bound premises need R1 <= Nr <= Nt, R2 <= Nr and d_f*K <= Nt: {self:?}"
            )))
        }
    }

    /// Number of interfering neighbor cells.
    fn neighbors(&self) -> usize {
        (self.g - 1).min(2 * self.j)
    }
}

/// Closed-form per-MS stream count, evaluated in exact integer arithmetic.
pub fn dof_bound(q: &DofBoundQuery) -> Result<usize> {
    q.validate()?;
    let mk = q.neighbors() * q.k;
    // floor(Nr / (mK R2/Nt + 1)) = floor(Nr Nt / (mK R2 + Nt))
    let first = q.nr * q.nt / (mk * q.r2 + q.nt);
    let second = (q.nr + q.nt) / (mk + 2);
    Ok(q.r1.min(first.max(second)))
}

/// Largest `d` in `0..=R1` admitting a free dimension `S` in `0..=Nt-dK`
/// with `mK min(d, R2(d+S)/Nt) <= S + Nr - d`, by enumeration.
pub fn dof_bound_enumerated(q: &DofBoundQuery) -> Result<usize> {
    q.validate()?;
    let mk = (q.neighbors() * q.k) as i64;
    let (nt, nr, r2) = (q.nt as i64, q.nr as i64, q.r2 as i64);
    let mut best = 0;
    for d in 0..=q.r1 as i64 {
        let s_max = nt - d * q.k as i64;
        let ok = (0..=s_max).any(|s| mk * (d * nt).min(r2 * (d + s)) <= nt * (s + nr - d));
        if ok {
            best = d as usize;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    /// Partial-connectivity allocator, leakage suppression, zero-forcing.
    Proposed,
    /// Fully connected allocator and structure on the same pipeline.
    Bl1,
    /// Unstructured leakage minimization.
    Bl2,
    /// Round robin over BSs with intra-cell zero-forcing.
    Bl4,
    /// Random precoders and decorrelators.
    Bl5,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [Scheme::Proposed, Scheme::Bl1, Scheme::Bl2, Scheme::Bl4, Scheme::Bl5];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::Bl1 => "bl1",
            Scheme::Bl2 => "bl2",
            Scheme::Bl4 => "bl4",
            Scheme::Bl5 => "bl5",
        }
    }

    pub fn parse(s: &str) -> Option<Scheme> {
        Scheme::ALL.into_iter().find(|x| x.name() == s)
    }
}

/// Transceivers of one scheme on one channel realization.
#[derive(Debug, Clone)]
pub struct SchemeOutcome {
    pub scheme: Scheme,
    pub transceivers: TransceiverSet,
    pub report: Option<LeakageReport>,
    /// Zero-forcing hit a rank-deficient cell; the intermediate precoders
    /// were orthonormalized and used instead.
    pub zf_failed: bool,
}

impl SchemeOutcome {
    pub fn streams(&self) -> usize {
        self.transceivers.d.total()
    }

    /// Sum rate at `snr_db`; round robin averages the single-cell rates.
    pub fn throughput(&self, ch: &ChannelSet, snr_db: f64) -> ThroughputSample {
        let ts = &self.transceivers;
        if self.scheme != Scheme::Bl4 {
            return sum_throughput(ch, ts, snr_db);
        }
        let g = ts.g;
        let mut rate = 0.0;
        let mut sinrs = Vec::new();
        for n in 0..g {
            let mut active = vec![false; g];
            active[n] = true;
            let s = sum_throughput_masked(ch, ts, snr_db, &active);
            rate += s.sum_rate_bits / g as f64;
            sinrs.extend(s.per_stream_sinr);
        }
        ThroughputSample {
            snr_db,
            sum_rate_bits: rate,
            per_stream_sinr: sinrs,
            residual_leakage: 0.0,
        }
    }
}

/// Requested streams capped by the direct-link rank.
pub fn capped_request(cfg: &NetworkConfig, spec: &ConnectivitySpec) -> StreamAssignment {
    let mut d = StreamAssignment::from_rows(&cfg.d_max);
    for ms in spec.ms_ids() {
        let cap = d.get(ms.g, ms.k).min(spec.rank(ms.g, ms.k, ms.g));
        d.set(ms.g, ms.k, cap);
    }
    d
}

/// Stage one of the proposed scheme.
pub fn proposed_assignment(cfg: &NetworkConfig, spec: &ConnectivitySpec) -> Result<allocation::PartialAssignment> {
    allocation::assign_greedy_partial(cfg, spec)
}

/// Stage one of BL1: the fully connected greedy on rank-capped requests.
pub fn bl1_assignment(cfg: &NetworkConfig, spec: &ConnectivitySpec) -> Result<StreamAssignment> {
    let mut full = cfg.clone();
    full.topology = crate::network::Topology::FullyConnected;
    full.d_max = capped_request(cfg, spec).rows();
    allocation::assign_greedy_full(&full)
}

fn finish_structured(
    scheme: Scheme,
    ch: &ChannelSet,
    plan: &allocation::SubspacePlan,
    d: &StreamAssignment,
    opts: &IterationOptions,
) -> Result<SchemeOutcome> {
    let (inter, report) = transceiver::suppress_inter_cell(ch, plan, d, opts)?;
    let (transceivers, zf_failed) = match transceiver::zero_force_intra_cell(ch, &inter) {
        Ok((ts, _)) => (ts, false),
        Err(Error::RankDeficient { .. }) => {
            let mut ts = inter.clone();
            for v in ts.v.iter_mut().filter(|v| v.ncols() > 0) {
                *v = linalg::orthonormalize_columns(v);
            }
            (ts, true)
        }
        Err(e) => return Err(e),
    };
    Ok(SchemeOutcome {
        scheme,
        transceivers,
        report: Some(report),
        zf_failed,
    })
}

/// Proposed pipeline given a precomputed stage one.
pub fn run_proposed(ch: &ChannelSet, stage_one: &allocation::PartialAssignment, opts: &IterationOptions) -> Result<SchemeOutcome> {
    finish_structured(Scheme::Proposed, ch, &stage_one.plan, &stage_one.d, opts)
}

/// BL1 pipeline: fully connected structure with seeded cores.
pub fn run_bl1(ch: &ChannelSet, d: &StreamAssignment, opts: &IterationOptions) -> Result<SchemeOutcome> {
    let plan = allocation::full_structure_plan(&ch.spec.fully_connected_view(), d, opts.seed);
    finish_structured(Scheme::Bl1, ch, &plan, d, opts)
}

pub fn run_bl2(ch: &ChannelSet, d: &StreamAssignment, opts: &IterationOptions) -> SchemeOutcome {
    let (transceivers, report) = transceiver::naive_iteration(ch, d, opts);
    SchemeOutcome {
        scheme: Scheme::Bl2,
        transceivers,
        report: Some(report),
        zf_failed: false,
    }
}

/// BL4: every MS decodes along its strongest `d` receive directions; each
/// BS zero-forces its own MSs' effective channels.
pub fn run_bl4(ch: &ChannelSet, d: &StreamAssignment) -> SchemeOutcome {
    let (g, k) = (ch.g(), ch.k());
    let mut u = Vec::with_capacity(g * k);
    for i in 0..g * k {
        let (w, _, _) = linalg::svd_sorted(ch.h(i / k, i % k, i / k));
        u.push(w.columns(0, d.by_index(i)).into_owned());
    }
    let mut v = Vec::with_capacity(g * k);
    let mut zf_failed = false;
    for i in 0..g * k {
        let n = i / k;
        let di = d.by_index(i);
        let nt = ch.spec.nt[n];
        let others: Vec<CMatrix> = (0..k)
            .map(|j| n * k + j)
            .filter(|&j| j != i && d.by_index(j) > 0)
            .map(|j| u[j].adjoint() * ch.h(n, j % k, n))
            .collect();
        let rows: usize = others.iter().map(|m| m.nrows()).sum();
        let mut stacked = linalg::zeros(rows, nt);
        let mut r = 0;
        for m in &others {
            stacked.rows_mut(r, m.nrows()).copy_from(m);
            r += m.nrows();
        }
        let free = if rows == 0 {
            linalg::identity(nt)
        } else {
            null_space(&stacked, 1e-9).into_basis()
        };
        if free.ncols() < di {
            zf_failed = true;
            v.push(linalg::zeros(nt, di));
            continue;
        }
        let eff = u[i].adjoint() * ch.h(n, i % k, n) * &free;
        let (_, _, z) = linalg::svd_sorted(&eff);
        v.push(&free * z.columns(0, di));
    }
    SchemeOutcome {
        scheme: Scheme::Bl4,
        transceivers: TransceiverSet {
            g,
            k,
            d: d.clone(),
            v_inter: v.clone(),
            v,
            u,
        },
        report: None,
        zf_failed,
    }
}

pub fn run_bl5(ch: &ChannelSet, d: &StreamAssignment, seed: u64) -> SchemeOutcome {
    let (g, k) = (ch.g(), ch.k());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Vec::with_capacity(g * k);
    let mut u = Vec::with_capacity(g * k);
    for i in 0..g * k {
        let di = d.by_index(i);
        v.push(linalg::haar_unitary(ch.spec.nt[i / k], &mut rng).columns(0, di).into_owned());
        u.push(linalg::haar_unitary(ch.spec.nr[i / k][i % k], &mut rng).columns(0, di).into_owned());
    }
    SchemeOutcome {
        scheme: Scheme::Bl5,
        transceivers: TransceiverSet {
            g,
            k,
            d: d.clone(),
            v_inter: v.clone(),
            v,
            u,
        },
        report: None,
        zf_failed: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_connectivity, sample_channels, Topology};
    use proptest::prelude::*;

    fn q(g: usize, k: usize, j: usize, nt: usize, nr: usize, r1: usize, r2: usize) -> DofBoundQuery {
        DofBoundQuery {
            g,
            k,
            j,
            nt,
            nr,
            r1,
            r2,
            d_f: 1,
        }
    }

    #[test]
    fn bound_interference_channel_case() {
        assert_eq!(dof_bound(&q(3, 1, 2, 2, 2, 2, 2)).unwrap(), 1);
        for (g, nt, nr) in [(2, 4, 4), (3, 6, 3), (4, 5, 5), (5, 8, 4), (7, 8, 2)] {
            let expect = ((nt + nr) / (g + 1)).min(nr);
            assert_eq!(dof_bound(&q(g, 1, g, nt, nr, nr, nr)).unwrap(), expect);
        }
    }

    #[test]
    fn bound_weak_cross_links() {
        let query = DofBoundQuery {
            d_f: 2,
            ..q(6, 2, 1, 4, 2, 2, 1)
        };
        assert_eq!(dof_bound(&query).unwrap(), 1);
        assert_eq!(dof_bound_enumerated(&query).unwrap(), 1);
    }

    #[test]
    fn bound_zero_direct_rank() {
        assert_eq!(dof_bound(&q(4, 2, 1, 4, 2, 0, 1)).unwrap(), 0);
        assert_eq!(dof_bound_enumerated(&q(4, 2, 1, 4, 2, 0, 1)).unwrap(), 0);
    }

    #[test]
    fn bound_rejects_broken_premises() {
        assert!(dof_bound(&q(3, 1, 1, 2, 3, 2, 2)).is_err());
        assert!(dof_bound(&DofBoundQuery { d_f: 3, ..q(3, 2, 1, 5, 2, 2, 2) }).is_err());
    }

    #[test]
    fn single_stream_rate_is_one_bit_at_unit_gain() {
        let cfg = NetworkConfig::uniform(1, 1, 1, 1, 1, Topology::FullyConnected);
        let spec = build_connectivity(&cfg).unwrap();
        let mut ch = sample_channels(&spec, 0);
        ch = ChannelSet::from_matrices(ch.spec.clone(), vec![linalg::identity(1)], 0).unwrap();
        let ts = TransceiverSet {
            g: 1,
            k: 1,
            d: StreamAssignment::uniform(1, 1, 1),
            v_inter: vec![linalg::identity(1)],
            v: vec![linalg::identity(1)],
            u: vec![linalg::identity(1)],
        };
        let s = sum_throughput(&ch, &ts, 0.0);
        assert!((s.sum_rate_bits - 1.0).abs() < 1e-12);
        let a = sum_throughput(&ch, &ts, 40.0);
        let b = sum_throughput(&ch, &ts, 60.0);
        assert!((dof_slope(&a, &b) - 1.0).abs() < 0.05);
    }

    #[test]
    fn round_robin_and_random_schemes() {
        let cfg = NetworkConfig::uniform(3, 2, 5, 2, 1, Topology::FullyConnected);
        let spec = build_connectivity(&cfg).unwrap();
        let ch = sample_channels(&spec, 21);
        let d = capped_request(&cfg, &spec);
        let bl4 = run_bl4(&ch, &d);
        assert!(!bl4.zf_failed);
        let ts = &bl4.transceivers;
        let k = ts.k;
        for r in 0..6 {
            for t in 0..6 {
                if r != t && r / k == t / k {
                    let m = ts.u[r].adjoint() * ch.h(r / k, r % k, t / k) * &ts.v[t];
                    assert!(linalg::frobenius(&m) < 1e-10);
                }
            }
        }
        let slope = slope_between(
            40.0,
            bl4.throughput(&ch, 40.0).sum_rate_bits,
            60.0,
            bl4.throughput(&ch, 60.0).sum_rate_bits,
        );
        assert!((slope - 2.0).abs() < 0.3, "{slope}");
        let bl5 = run_bl5(&ch, &d, 1);
        let slope = dof_slope(&bl5.throughput(&ch, 40.0), &bl5.throughput(&ch, 60.0));
        assert!(slope < 0.5, "{slope}");
    }

    #[test]
    fn saturating_rate_for_residual_coupling() {
        let cfg = NetworkConfig::uniform(3, 2, 5, 2, 1, Topology::FullyConnected);
        let spec = build_connectivity(&cfg).unwrap();
        let ch = sample_channels(&spec, 22);
        let d = capped_request(&cfg, &spec);
        let bl5 = run_bl5(&ch, &d, 2);
        let r3 = bl5.throughput(&ch, 30.0).sum_rate_bits;
        let r4 = bl5.throughput(&ch, 40.0).sum_rate_bits;
        let r5 = bl5.throughput(&ch, 50.0).sum_rate_bits;
        assert!(r5 - r4 <= r4 - r3 + 1e-9);
        assert!(r5 - r4 < 0.5);
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(Scheme::parse(s.name()), Some(s));
        }
        assert_eq!(Scheme::parse("bl3"), None);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn rates_are_finite_and_nonnegative(seed in 0u64..1000, snr in -10.0f64..60.0) {
            let cfg = NetworkConfig::uniform(2, 2, 4, 2, 1, Topology::FullyConnected);
            let spec = build_connectivity(&cfg).unwrap();
            let ch = sample_channels(&spec, seed);
            let d = capped_request(&cfg, &spec);
            let s = run_bl5(&ch, &d, seed).throughput(&ch, snr);
            prop_assert!(s.sum_rate_bits.is_finite() && s.sum_rate_bits >= 0.0);
            prop_assert!(s.per_stream_sinr.iter().all(|x| x.is_finite() && *x >= 0.0));
        }
    }
}
