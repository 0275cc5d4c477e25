//! Stage one: how many streams each MS gets, and (under partial connectivity)
//! which transmit and receive subspaces its transceivers live in.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::feasibility::{self, PairDims};
use crate::linalg::{self, CMatrix};
use crate::network::{ConnectivitySpec, MsId, NetworkConfig};
use crate::subspace::Subspace;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamAssignment {
    pub g: usize,
    pub k: usize,
    d: Vec<usize>,
}

impl StreamAssignment {
    pub fn uniform(g: usize, k: usize, d: usize) -> Self {
        StreamAssignment { g, k, d: vec![d; g * k] }
    }

    pub fn from_rows(rows: &[Vec<usize>]) -> Self {
        let g = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        StreamAssignment {
            g,
            k,
            d: rows.concat(),
        }
    }

    pub fn get(&self, g: usize, k: usize) -> usize {
        self.d[g * self.k + k]
    }

    pub fn set(&mut self, g: usize, k: usize, d: usize) {
        self.d[g * self.k + k] = d;
    }

    pub fn by_index(&self, i: usize) -> usize {
        self.d[i]
    }

    /// Streams served by BS `n`.
    pub fn per_bs(&self, n: usize) -> usize {
        self.d[n * self.k..(n + 1) * self.k].iter().sum()
    }

    pub fn total(&self) -> usize {
        self.d.iter().sum()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.d
    }

    pub fn rows(&self) -> Vec<Vec<usize>> {
        self.d.chunks(self.k).map(<[usize]>::to_vec).collect()
    }

    fn decrement(&mut self, i: usize) {
        self.d[i] -= 1;
    }
}

#[derive(Debug, Clone)]
pub struct MsPlan {
    /// Core space `V^C`, one dimension per stream.
    pub core: Subspace,
    /// Free space `S^t` available to the free elements.
    pub free: Subspace,
    /// Receive filter space `S^r`; the decorrelator lives inside it.
    pub receive: Subspace,
}

#[derive(Debug, Clone)]
pub struct SubspacePlan {
    pub g: usize,
    pub k: usize,
    entries: Vec<MsPlan>,
}

impl SubspacePlan {
    pub fn get(&self, g: usize, k: usize) -> &MsPlan {
        &self.entries[g * self.k + k]
    }

    pub fn by_index(&self, i: usize) -> &MsPlan {
        &self.entries[i]
    }

    /// Checks that cores of one BS are mutually orthogonal and orthogonal to
    /// every free space of that BS, cores avoid the direct-link transmit null
    /// space, and receive spaces avoid the direct-link receive null space.
    pub fn check_structure(&self, spec: &ConnectivitySpec) -> bool {
        const TOL: f64 = 1e-8;
        for n in 0..self.g {
            let cores: Vec<&CMatrix> = (0..self.k).map(|j| self.get(n, j).core.basis()).collect();
            for a in 0..self.k {
                for b in 0..self.k {
                    let cross = cores[a].adjoint() * self.get(n, b).free.basis();
                    if linalg::frobenius(&cross) > TOL {
                        return false;
                    }
                    if a != b && linalg::frobenius(&(cores[a].adjoint() * cores[b])) > TOL {
                        return false;
                    }
                }
                let link = spec.link(n, a, n);
                let p = self.get(n, a);
                if p.core.dim() > 0 && linalg::frobenius(&(link.tx_null.basis().adjoint() * p.core.basis())) > TOL {
                    return false;
                }
                if p.receive.dim() > 0 && linalg::frobenius(&(link.rx_null.basis().adjoint() * p.receive.basis())) > TOL {
                    return false;
                }
            }
        }
        true
    }
}

/// Greedy stream assignment for fully connected networks: start from the
/// requested streams and drop one stream at a time until feasible.
pub fn assign_greedy_full(cfg: &NetworkConfig) -> Result<StreamAssignment> {
    cfg.validate()?;
    let mut d = StreamAssignment::from_rows(&cfg.d_max);
    loop {
        let inst = feasibility::build_instance_full(&d, cfg);
        if feasibility::feasible_tree(&inst)?.feasible {
            return Ok(d);
        }
        let i = full_removal_choice(&d, cfg);
        d.decrement(i);
    }
}

/// Removal score of the full-connectivity greedy rule; the MS with the
/// largest score loses a stream. Ties go to the lowest `(g, k)`.
pub fn full_removal_score(d: &StreamAssignment, cfg: &NetworkConfig, ms: MsId) -> i64 {
    let own = d.get(ms.g, ms.k) as i64;
    let others = d.total() as i64 - own;
    2 * others - (cfg.nt[ms.g] as i64 + cfg.nr[ms.g][ms.k] as i64 - 4 * own + 2)
}

fn full_removal_choice(d: &StreamAssignment, cfg: &NetworkConfig) -> usize {
    argmax_first(
        cfg.ms_ids()
            .enumerate()
            .filter(|&(i, _)| d.by_index(i) > 0)
            .map(|(i, ms)| (i, full_removal_score(d, cfg, ms))),
    )
    .expect("an infeasible assignment has a positive entry")
}

/// First index attaining the maximum score.
fn argmax_first(it: impl Iterator<Item = (usize, i64)>) -> Option<usize> {
    let mut best: Option<(usize, i64)> = None;
    for (i, s) in it {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// A nonzero intersection of cross-link null spaces and every link whose
/// null space contains it.
#[derive(Debug, Clone)]
pub struct CommonNull<T> {
    pub members: Vec<T>,
    pub space: Subspace,
}

/// All distinct nonzero intersections of `spaces`, each tagged with the
/// indices of the spaces containing it. Built by intersecting known entries
/// with single spaces until nothing new appears.
pub fn intersection_closure(spaces: &[Subspace]) -> Result<Vec<(Vec<usize>, Subspace)>> {
    let mut found: Vec<Subspace> = Vec::new();
    for s in spaces {
        if !s.is_zero() && !found.iter().any(|f| f.approx_eq(s)) {
            found.push(s.clone());
        }
    }
    let mut next = 0;
    while next < found.len() {
        let x = found[next].clone();
        for s in spaces {
            if s.contains(&x) {
                continue;
            }
            let y = x.intersect(s)?;
            if !y.is_zero() && !found.iter().any(|f| f.approx_eq(&y)) {
                found.push(y);
            }
        }
        next += 1;
    }
    Ok(found
        .into_iter()
        .map(|x| {
            let members = (0..spaces.len()).filter(|&i| spaces[i].contains(&x)).collect();
            (members, x)
        })
        .collect())
}

/// Common transmit null spaces at BS `n` over its connected inter-cell links.
/// Disconnected links never restrict a common null space, so they are left
/// out of the member lists (their weight is zero).
pub fn common_null_spaces(spec: &ConnectivitySpec, n: usize) -> Result<Vec<CommonNull<MsId>>> {
    let links: Vec<MsId> = spec
        .ms_ids()
        .filter(|m| m.g != n && spec.link(m.g, m.k, n).is_connected())
        .collect();
    let spaces: Vec<Subspace> = links.iter().map(|m| spec.link(m.g, m.k, n).tx_null.clone()).collect();
    Ok(intersection_closure(&spaces)?
        .into_iter()
        .map(|(idx, space)| CommonNull {
            members: idx.into_iter().map(|i| links[i]).collect(),
            space,
        })
        .collect())
}

/// Common receive null spaces at an MS over its connected inter-cell links;
/// members are BS indices.
pub fn common_rx_null_spaces(spec: &ConnectivitySpec, ms: MsId) -> Result<Vec<CommonNull<usize>>> {
    let links: Vec<usize> = (0..spec.g)
        .filter(|&n| n != ms.g && spec.link(ms.g, ms.k, n).is_connected())
        .collect();
    let spaces: Vec<Subspace> = links.iter().map(|&n| spec.link(ms.g, ms.k, n).rx_null.clone()).collect();
    Ok(intersection_closure(&spaces)?
        .into_iter()
        .map(|(idx, space)| CommonNull {
            members: idx.into_iter().map(|i| links[i]).collect(),
            space,
        })
        .collect())
}

/// Weight of a transmit common null space: the constraints a single direction
/// inside it can remove.
pub fn tx_weight(spec: &ConnectivitySpec, d: &StreamAssignment, n: usize, members: &[MsId]) -> usize {
    members.iter().map(|m| d.get(m.g, m.k).min(spec.rank(m.g, m.k, n))).sum()
}

/// Weight of a receive common null space at `ms`: streams from the member BSs
/// that a direction inside it cannot see.
pub fn rx_weight(spec: &ConnectivitySpec, d: &StreamAssignment, ms: MsId, members: &[usize]) -> usize {
    members
        .iter()
        .map(|&n| d.per_bs(n).min(spec.rank(ms.g, ms.k, n)))
        .sum()
}

/// Spaces with positive weight, highest weight first; larger spaces break ties.
fn ranked<T>(entries: &[CommonNull<T>], weight: impl Fn(&[T]) -> usize) -> Vec<Subspace> {
    let mut scored: Vec<(usize, usize, &Subspace)> = entries
        .iter()
        .enumerate()
        .map(|(i, e)| (weight(&e.members), i, &e.space))
        .filter(|&(w, _, _)| w > 0)
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(b.2.dim().cmp(&a.2.dim())).then(a.1.cmp(&b.1)));
    scored.into_iter().map(|(_, _, s)| s.clone()).collect()
}

/// Pick up to `count` orthonormal directions inside `allowed`, one at a time:
/// each comes from the first priority space that still meets the remaining
/// allowed space, otherwise from the remaining allowed space itself.
fn priority_directions(allowed: &Subspace, count: usize, priority: &[Subspace]) -> Result<CMatrix> {
    let n = allowed.ambient_dim();
    let mut remaining = allowed.clone();
    let mut chosen: Vec<CMatrix> = Vec::new();
    while chosen.len() < count && !remaining.is_zero() {
        let mut pick = None;
        for space in priority {
            let meet = space.intersect(&remaining)?;
            if !meet.is_zero() {
                pick = Some(meet.basis().columns(0, 1).into_owned());
                break;
            }
        }
        let dir = pick.unwrap_or_else(|| remaining.basis().columns(0, 1).into_owned());
        // Orthogonal complement of `dir` inside `remaining`.
        let coeffs = crate::subspace::null_space(&(dir.adjoint() * remaining.basis()), 1e-6);
        remaining = Subspace::from_orthonormal(remaining.basis() * coeffs.basis());
        debug_assert_eq!(remaining.dim() + chosen.len() + 1, allowed.dim());
        chosen.push(dir);
    }
    let mut out = linalg::zeros(n, chosen.len());
    for (c, v) in chosen.iter().enumerate() {
        out.set_column(c, &v.column(0));
    }
    Ok(out)
}

/// Precomputed common null spaces for one network.
#[derive(Debug, Clone)]
pub struct NullLattice {
    tx: Vec<Vec<CommonNull<MsId>>>,
    rx: Vec<Vec<CommonNull<usize>>>,
}

impl NullLattice {
    pub fn new(spec: &ConnectivitySpec) -> Result<Self> {
        let tx = (0..spec.g).map(|n| common_null_spaces(spec, n)).collect::<Result<_>>()?;
        let rx = spec
            .ms_ids()
            .map(|ms| common_rx_null_spaces(spec, ms))
            .collect::<Result<_>>()?;
        Ok(NullLattice { tx, rx })
    }

    pub fn tx(&self, n: usize) -> &[CommonNull<MsId>] {
        &self.tx[n]
    }

    pub fn rx(&self, i: usize) -> &[CommonNull<usize>] {
        &self.rx[i]
    }
}

/// Core spaces, built MS by MS at every BS. Streams are clipped to the signal
/// dimension still available on the direct link.
pub fn design_core_spaces(
    spec: &ConnectivitySpec,
    lattice: &NullLattice,
    d: &mut StreamAssignment,
) -> Result<Vec<Subspace>> {
    let mut cores = Vec::with_capacity(spec.g * spec.k);
    for n in 0..spec.g {
        let priority = ranked(lattice.tx(n), |m| tx_weight(spec, d, n, m));
        let mut used = Subspace::zero(spec.nt[n]);
        for j in 0..spec.k {
            let direct_null = &spec.link(n, j, n).tx_null;
            let allowed = used.sum(direct_null)?.complement();
            let dij = d.get(n, j).min(allowed.dim());
            d.set(n, j, dij);
            let core = Subspace::from_orthonormal(priority_directions(&allowed, dij, &priority)?);
            used = used.sum(&core)?;
            cores.push(core);
        }
    }
    Ok(cores)
}

/// Effective transmit dimension of `span` towards every inter-cell MS of the
/// network, weighted by the constraint cap on that link. Returns the penalty
/// term of the free-space score.
fn tx_penalty(spec: &ConnectivitySpec, d: &StreamAssignment, n: usize, d_nj: usize, span: &Subspace) -> Result<usize> {
    let mut total = 0;
    for ms in spec.ms_ids() {
        if ms.g == n {
            continue;
        }
        let link = spec.link(ms.g, ms.k, n);
        let cap = d.get(ms.g, ms.k).min(link.rank());
        if cap == 0 {
            continue;
        }
        total += cap * d_nj.min(span.dim_outside(&link.tx_null)?);
    }
    Ok(total)
}

/// Free and receive spaces given the cores.
pub fn design_free_spaces(
    spec: &ConnectivitySpec,
    lattice: &NullLattice,
    d: &StreamAssignment,
    cores: &[Subspace],
) -> Result<SubspacePlan> {
    let mut free = Vec::with_capacity(cores.len());
    for n in 0..spec.g {
        let priority = ranked(lattice.tx(n), |m| tx_weight(spec, d, n, m));
        let mut used = Subspace::zero(spec.nt[n]);
        for j in 0..spec.k {
            used = used.sum(&cores[n * spec.k + j])?;
        }
        let outside = used.complement();
        let chain = priority_directions(&outside, outside.dim(), &priority)?;
        for j in 0..spec.k {
            let core = &cores[n * spec.k + j];
            let d_nj = d.get(n, j);
            let mut best = (i64::MIN, 0usize);
            for len in 0..=chain.ncols() {
                let s = Subspace::from_orthonormal(chain.columns(0, len).into_owned());
                let span = core.sum(&s)?;
                let score = (d_nj * len) as i64 - tx_penalty(spec, d, n, d_nj, &span)? as i64;
                if score > best.0 {
                    best = (score, len);
                }
            }
            free.push(Subspace::from_orthonormal(chain.columns(0, best.1).into_owned()));
        }
    }

    // Effective transmit dimension of every MS towards every link, for the
    // receive-side score.
    let ids: Vec<MsId> = spec.ms_ids().collect();
    let tx_span: Vec<Subspace> = (0..ids.len())
        .map(|i| cores[i].sum(&free[i]))
        .collect::<Result<_>>()?;

    let mut receive = Vec::with_capacity(ids.len());
    for (i, ms) in ids.iter().enumerate() {
        let d_gk = d.get(ms.g, ms.k);
        let nr = spec.nr[ms.g][ms.k];
        let direct_null = &spec.link(ms.g, ms.k, ms.g).rx_null;
        let allowed = direct_null.complement();
        let priority = ranked(lattice.rx(i), |m| rx_weight(spec, d, *ms, m));
        let chain = priority_directions(&allowed, allowed.dim(), &priority)?;
        if d_gk == 0 {
            receive.push(Subspace::zero(nr));
            continue;
        }
        // Interferers' effective dimension on each link is fixed here.
        let mut interferers = Vec::new();
        for (t, tx) in ids.iter().enumerate() {
            if tx.g == ms.g || d.get(tx.g, tx.k) == 0 {
                continue;
            }
            let link = spec.link(ms.g, ms.k, tx.g);
            if !link.is_connected() {
                continue;
            }
            let tx_dim = d.get(tx.g, tx.k).min(tx_span[t].dim_outside(&link.tx_null)?);
            interferers.push((tx.g, tx_dim));
        }
        let lo = d_gk.min(chain.ncols());
        let mut best = (i64::MIN, lo);
        for len in lo..=chain.ncols() {
            let s = Subspace::from_orthonormal(chain.columns(0, len).into_owned());
            let mut penalty = 0;
            for &(n, tx_dim) in &interferers {
                let link = spec.link(ms.g, ms.k, n);
                penalty += d_gk.min(s.dim_outside(&link.rx_null)?) * tx_dim;
            }
            let score = (d_gk * (len - lo)) as i64 - penalty as i64;
            if score > best.0 {
                best = (score, len);
            }
        }
        receive.push(Subspace::from_orthonormal(chain.columns(0, best.1).into_owned()));
    }

    let entries = cores
        .iter()
        .zip(free)
        .zip(receive)
        .map(|((core, free), receive)| MsPlan {
            core: core.clone(),
            free,
            receive,
        })
        .collect();
    Ok(SubspacePlan {
        g: spec.g,
        k: spec.k,
        entries,
    })
}

/// Outcome of the partial-connectivity allocator.
#[derive(Debug, Clone)]
pub struct PartialAssignment {
    pub d: StreamAssignment,
    pub plan: SubspacePlan,
    /// Outer iterations run, including the final feasible one.
    pub iterations: usize,
}

/// Joint stream assignment and subspace design under partial connectivity.
pub fn assign_greedy_partial(cfg: &NetworkConfig, spec: &ConnectivitySpec) -> Result<PartialAssignment> {
    cfg.validate()?;
    let lattice = NullLattice::new(spec)?;
    let mut d = StreamAssignment::from_rows(&cfg.d_max);
    for ms in spec.ms_ids().collect::<Vec<_>>() {
        let cap = d.get(ms.g, ms.k).min(spec.rank(ms.g, ms.k, ms.g));
        d.set(ms.g, ms.k, cap);
    }
    let mut iterations = 0;
    loop {
        iterations += 1;
        let cores = design_core_spaces(spec, &lattice, &mut d)?;
        let plan = design_free_spaces(spec, &lattice, &d, &cores)?;
        let dims = PairDims::new(&plan, spec)?;
        let inst = feasibility::build_instance_partial(&d, &plan, spec)?;
        if feasibility::feasible_tree(&inst)?.feasible {
            return Ok(PartialAssignment { d, plan, iterations });
        }
        let i = partial_removal_choice(&d, &dims, &plan, spec);
        d.decrement(i);
    }
}

/// Removal score: constraints removed minus freedoms lost when MS `i` drops
/// one stream, with the designed subspaces held fixed except that the freed
/// core direction joins every free space of the cell that already spans the
/// whole complement of the cores.
fn partial_removal_score(d: &StreamAssignment, dims: &PairDims, plan: &SubspacePlan, spec: &ConnectivitySpec, i: usize) -> i64 {
    let ids: Vec<MsId> = spec.ms_ids().collect();
    let own = d.by_index(i) as i64;
    let me = ids[i];
    let mut delta_c = 0;
    for (j, other) in ids.iter().enumerate() {
        if other.g == me.g {
            continue;
        }
        let dj = d.by_index(j);
        let o = own as usize;
        delta_c += dims.constraints(i, j, o, dj) - dims.constraints(i, j, o - 1, dj);
        delta_c += dims.constraints(j, i, dj, o) - dims.constraints(j, i, dj, o - 1);
    }
    let cores: usize = (0..spec.k).map(|j| plan.get(me.g, j).core.dim()).sum();
    let absorbs = |j: usize| (dims.free[j] + cores == spec.nt[me.g]) as i64;
    let s = dims.free[i] as i64;
    let mut delta_v = own * s - (own - 1) * (s + absorbs(i));
    for j in 0..spec.k {
        let idx = me.g * spec.k + j;
        if idx != i {
            delta_v -= d.by_index(idx) as i64 * absorbs(idx);
        }
    }
    let r = dims.receive[i] as i64;
    delta_v += own * (r - own) - (own - 1) * (r - own + 1);
    delta_c - delta_v
}

fn partial_removal_choice(d: &StreamAssignment, dims: &PairDims, plan: &SubspacePlan, spec: &ConnectivitySpec) -> usize {
    argmax_first(
        (0..d.as_slice().len())
            .filter(|&i| d.by_index(i) > 0)
            .map(|i| (i, partial_removal_score(d, dims, plan, spec, i))),
    )
    .expect("an infeasible assignment has a positive entry")
}

/// Subspaces of the fully connected structure: per BS, mutually orthogonal
/// cores drawn from a seeded unitary, a shared free space spanning the rest,
/// and the whole receive space.
pub fn full_structure_plan(spec: &ConnectivitySpec, d: &StreamAssignment, seed: u64) -> SubspacePlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(spec.g * spec.k);
    for n in 0..spec.g {
        let nt = spec.nt[n];
        let q = linalg::haar_unitary(nt, &mut rng);
        let used = d.per_bs(n).min(nt);
        let free = Subspace::from_orthonormal(q.columns(used, nt - used).into_owned());
        let mut offset = 0;
        for j in 0..spec.k {
            let dij = d.get(n, j).min(nt - offset);
            let core = Subspace::from_orthonormal(q.columns(offset, dij).into_owned());
            offset += dij;
            entries.push(MsPlan {
                core,
                free: free.clone(),
                receive: Subspace::full(spec.nr[n][j]),
            });
        }
    }
    SubspacePlan {
        g: spec.g,
        k: spec.k,
        entries,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feasibility::{build_instance_full, build_instance_partial, feasible_bruteforce};
    use crate::network::{build_connectivity, Link, Topology};

    fn full_cfg(g: usize, k: usize, nt: usize, nr: usize, d: usize) -> NetworkConfig {
        NetworkConfig::uniform(g, k, nt, nr, d, Topology::FullyConnected)
    }

    fn sym_cfg(g: usize, k: usize, nt: usize, nr: usize, d: usize, j: usize, r1: usize, r2: usize) -> NetworkConfig {
        NetworkConfig::uniform(g, k, nt, nr, d, Topology::Symmetric { j, r1, r2, basis_seed: None })
    }

    #[test]
    fn greedy_full_keeps_feasible_start() {
        let d = assign_greedy_full(&full_cfg(3, 2, 5, 2, 1)).unwrap();
        assert_eq!(d, StreamAssignment::uniform(3, 2, 1));
        assert_eq!(d.total(), 6);
    }

    #[test]
    fn greedy_full_descends_to_six() {
        let cfg = full_cfg(3, 2, 5, 2, 2);
        let d = assign_greedy_full(&cfg).unwrap();
        assert_eq!(d, StreamAssignment::uniform(3, 2, 1));
        // Replay the descent: every rejected point fails the exhaustive oracle.
        let mut cur = StreamAssignment::from_rows(&cfg.d_max);
        while cur != d {
            assert!(!feasible_bruteforce(&build_instance_full(&cur, &cfg)).unwrap());
            let i = full_removal_choice(&cur, &cfg);
            cur.decrement(i);
        }
        assert!(feasible_bruteforce(&build_instance_full(&d, &cfg)).unwrap());
    }

    #[test]
    fn greedy_full_single_cell_keeps_request() {
        let d = assign_greedy_full(&full_cfg(1, 3, 6, 2, 2)).unwrap();
        assert_eq!(d, StreamAssignment::uniform(1, 3, 2));
    }

    /// Exhaustive optimum over all assignments, for small networks.
    fn optimal_total(cfg: &NetworkConfig) -> usize {
        let caps: Vec<usize> = cfg.d_max.concat();
        let mut best = 0;
        let mut cur = vec![0usize; caps.len()];
        loop {
            let d = StreamAssignment {
                g: cfg.g,
                k: cfg.k,
                d: cur.clone(),
            };
            if d.total() > best && feasible_bruteforce(&build_instance_full(&d, cfg)).unwrap() {
                best = d.total();
            }
            let mut i = 0;
            while i < cur.len() && cur[i] == caps[i] {
                cur[i] = 0;
                i += 1;
            }
            if i == cur.len() {
                return best;
            }
            cur[i] += 1;
        }
    }

    #[test]
    fn greedy_full_is_feasible_and_bounded_by_optimum() {
        for (g, k, nt, nr, dm) in [(2, 2, 3, 2, 2), (3, 1, 2, 2, 2), (3, 2, 4, 2, 2), (2, 3, 4, 3, 1)] {
            let cfg = full_cfg(g, k, nt, nr, dm);
            let d = assign_greedy_full(&cfg).unwrap();
            assert!(feasible_bruteforce(&build_instance_full(&d, &cfg)).unwrap());
            assert!(d.total() <= optimal_total(&cfg));
        }
    }

    /// Literal bottom-up lattice: intersections by growing cardinality, only
    /// extending subsets whose every sub-subset is nonzero.
    fn lattice_bottom_up(spaces: &[Subspace]) -> Vec<Subspace> {
        let m = spaces.len();
        let mut level: Vec<(u32, Subspace)> = (0..m)
            .filter(|&i| !spaces[i].is_zero())
            .map(|i| (1u32 << i, spaces[i].clone()))
            .collect();
        let mut all: Vec<Subspace> = level.iter().map(|(_, s)| s.clone()).collect();
        while !level.is_empty() {
            let nonzero: std::collections::HashMap<u32, Subspace> = level.iter().cloned().collect();
            let mut next = Vec::new();
            let mut seen = std::collections::HashSet::new();
            for (mask, s) in &level {
                for i in 0..m {
                    let grown = mask | (1 << i);
                    if grown == *mask || !seen.insert(grown) {
                        continue;
                    }
                    let all_subs = (0..m)
                        .filter(|b| grown >> b & 1 == 1)
                        .all(|b| nonzero.contains_key(&(grown & !(1 << b))));
                    if !all_subs {
                        continue;
                    }
                    let meet = s.intersect(&spaces[i]).unwrap();
                    if !meet.is_zero() {
                        next.push((grown, meet));
                    }
                }
            }
            all.extend(next.iter().map(|(_, s)| s.clone()));
            level = next;
        }
        let mut distinct: Vec<Subspace> = Vec::new();
        for s in all {
            if !distinct.iter().any(|d| d.approx_eq(&s)) {
                distinct.push(s);
            }
        }
        distinct
    }

    fn coord_span(n: usize, idx: &[usize]) -> Subspace {
        let mut m = linalg::zeros(n, idx.len());
        for (c, &i) in idx.iter().enumerate() {
            m[(i, c)] = num_complex::Complex64::new(1.0, 0.0);
        }
        Subspace::from_orthonormal(m)
    }

    #[test]
    fn closure_matches_bottom_up_lattice() {
        let spaces = vec![
            coord_span(6, &[0, 1, 2, 3]),
            coord_span(6, &[2, 3, 4]),
            coord_span(6, &[0, 3, 4, 5]),
            coord_span(6, &[1, 5]),
            coord_span(6, &[]),
        ];
        let closure = intersection_closure(&spaces).unwrap();
        let oracle = lattice_bottom_up(&spaces);
        assert_eq!(closure.len(), oracle.len());
        for (members, s) in &closure {
            assert!(oracle.iter().any(|o| o.approx_eq(s)));
            for (i, sp) in spaces.iter().enumerate() {
                assert_eq!(members.contains(&i), sp.contains(s));
            }
        }
    }

    #[test]
    fn closure_of_random_subspaces() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let spaces: Vec<Subspace> = (0..4)
                .map(|_| Subspace::span(&linalg::complex_gaussian(6, 4, &mut rng), 1e-9))
                .collect();
            let closure = intersection_closure(&spaces).unwrap();
            let oracle = lattice_bottom_up(&spaces);
            assert_eq!(closure.len(), oracle.len());
        }
    }

    #[test]
    fn fully_connected_lattice_is_empty() {
        let spec = build_connectivity(&full_cfg(3, 2, 5, 2, 1)).unwrap();
        for n in 0..3 {
            assert!(common_null_spaces(&spec, n).unwrap().is_empty());
        }
    }

    #[test]
    fn symmetric_same_cell_links_share_null_space() {
        let spec = build_connectivity(&sym_cfg(4, 2, 4, 2, 1, 1, 2, 1)).unwrap();
        let entries = common_null_spaces(&spec, 0).unwrap();
        // BS 0 reaches cells 1 and 3; their links are separate bands.
        let cell1 = entries
            .iter()
            .find(|e| e.members.contains(&MsId::new(1, 0)) && e.members.contains(&MsId::new(1, 1)))
            .expect("cell-1 entry");
        assert!(cell1.space.approx_eq(&spec.link(1, 0, 0).tx_null));
        let m = 3; // (0 - 1) mod 4
        let outside: Vec<usize> = (0..4).filter(|&q| q != m % 4).collect();
        assert!(cell1.space.approx_eq(&coord_span(4, &outside)));
        // Disconnected cell 2 is not a member of anything.
        assert!(entries.iter().all(|e| e.members.iter().all(|ms| ms.g != 2)));
    }

    #[test]
    fn fully_connected_plan_recovers_shared_free_space() {
        let cfg = full_cfg(3, 2, 5, 2, 1);
        let spec = build_connectivity(&cfg).unwrap();
        let out = assign_greedy_partial(&cfg, &spec).unwrap();
        assert_eq!(out.d, StreamAssignment::uniform(3, 2, 1));
        assert!(out.plan.check_structure(&spec));
        for n in 0..3 {
            let s0 = &out.plan.get(n, 0).free;
            assert_eq!(s0.dim(), 5 - 2);
            assert!(s0.approx_eq(&out.plan.get(n, 1).free));
            assert_eq!(out.plan.get(n, 0).receive.dim(), 2);
        }
        let inst = build_instance_partial(&out.d, &out.plan, &spec).unwrap();
        assert_eq!(inst, build_instance_full(&out.d, &cfg));
    }

    #[test]
    fn partial_matches_full_on_fully_connected_networks() {
        for g in 2..=4 {
            for k in 1..=3 {
                for nt in 2..=6 {
                    for nr in 1..=3 {
                        for dm in 1..=nr {
                            let cfg = full_cfg(g, k, nt, nr, dm);
                            // Over-subscribed BSs are clipped by the core step first.
                            if cfg.validate().is_err() || dm * k > nt {
                                continue;
                            }
                            let spec = build_connectivity(&cfg).unwrap();
                            let full = assign_greedy_full(&cfg).unwrap();
                            let partial = assign_greedy_partial(&cfg, &spec).unwrap();
                            assert_eq!(partial.d, full, "{g} {k} {nt} {nr} {dm}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn oversubscribed_bs_clips_later_users() {
        let cfg = full_cfg(2, 2, 2, 2, 2);
        let spec = build_connectivity(&cfg).unwrap();
        let out = assign_greedy_partial(&cfg, &spec).unwrap();
        for g in 0..2 {
            assert!(out.d.per_bs(g) <= 2);
        }
        assert!(feasible_bruteforce(&build_instance_partial(&out.d, &out.plan, &spec).unwrap()).unwrap());
    }

    #[test]
    fn symmetric_streams_clip_to_direct_rank() {
        let cfg = sym_cfg(3, 2, 6, 3, 3, 1, 2, 3);
        let spec = build_connectivity(&cfg).unwrap();
        let out = assign_greedy_partial(&cfg, &spec).unwrap();
        assert!(out.d.as_slice().iter().all(|&x| x <= 2));
    }

    #[test]
    fn direct_links_only_keep_rank_capped_request() {
        let cfg = sym_cfg(6, 2, 4, 2, 2, 0, 2, 1);
        let spec = build_connectivity(&cfg).unwrap();
        let out = assign_greedy_partial(&cfg, &spec).unwrap();
        assert_eq!(out.d, StreamAssignment::uniform(6, 2, 2));
    }

    #[test]
    fn partial_meets_closed_form_example() {
        let cfg = sym_cfg(6, 2, 4, 2, 2, 1, 2, 1);
        let spec = build_connectivity(&cfg).unwrap();
        let out = assign_greedy_partial(&cfg, &spec).unwrap();
        assert!(out.d.as_slice().iter().all(|&x| x >= 1), "{:?}", out.d);
        assert!(out.plan.check_structure(&spec));
    }

    #[test]
    fn core_takes_highest_weight_null_first() {
        // Two cells, BS 0 with 3 antennas. Cell 1 holds two MSs: MS (1,0)
        // cannot hear e2, MS (1,1) cannot hear e1 or e2. The direction e2
        // silences both (weight 2) and must be the first core direction.
        let cfg = NetworkConfig::uniform(2, 2, 3, 2, 1, Topology::FullyConnected);
        let mut spec = build_connectivity(&cfg).unwrap();
        *spec.link_mut(1, 0, 0) = Link {
            gain: 1.0,
            tx_null: coord_span(3, &[2]),
            rx_null: Subspace::zero(2),
        };
        *spec.link_mut(1, 1, 0) = Link {
            gain: 1.0,
            tx_null: coord_span(3, &[1, 2]),
            rx_null: Subspace::zero(2),
        };
        let lattice = NullLattice::new(&spec).unwrap();
        let mut d = StreamAssignment::uniform(2, 2, 1);
        let cores = design_core_spaces(&spec, &lattice, &mut d).unwrap();
        assert!(cores[0].approx_eq(&coord_span(3, &[2])));
        // The second core cannot reuse e2; e1 still silences MS (1,1).
        assert!(cores[1].approx_eq(&coord_span(3, &[1])));
    }

    #[test]
    fn free_direction_in_all_nulls_is_kept() {
        // Every inter-cell link from BS 0 is blind to e3, so a free direction
        // along e3 costs nothing and must be selected.
        let cfg = NetworkConfig::uniform(2, 1, 4, 1, 1, Topology::FullyConnected);
        let mut spec = build_connectivity(&cfg).unwrap();
        *spec.link_mut(1, 0, 0) = Link {
            gain: 1.0,
            tx_null: coord_span(4, &[3]),
            rx_null: Subspace::zero(1),
        };
        let lattice = NullLattice::new(&spec).unwrap();
        let mut d = StreamAssignment::uniform(2, 1, 1);
        let cores = design_core_spaces(&spec, &lattice, &mut d).unwrap();
        let plan = design_free_spaces(&spec, &lattice, &d, &cores).unwrap();
        let free = &plan.get(0, 0).free;
        assert!(free.contains(&coord_span(4, &[3])) || cores[0].contains(&coord_span(4, &[3])));
    }

    #[test]
    fn receive_space_is_maximal_without_receive_nulls() {
        let cfg = sym_cfg(4, 1, 4, 3, 1, 1, 2, 1);
        let spec = build_connectivity(&cfg).unwrap();
        let out = assign_greedy_partial(&cfg, &spec).unwrap();
        for g in 0..4 {
            assert_eq!(out.plan.get(g, 0).receive.dim(), 3);
        }
    }

    #[test]
    fn full_structure_plan_is_orthogonal() {
        let cfg = full_cfg(3, 2, 5, 2, 1);
        let spec = build_connectivity(&cfg).unwrap();
        let d = StreamAssignment::uniform(3, 2, 1);
        let plan = full_structure_plan(&spec, &d, 4);
        assert!(plan.check_structure(&spec));
        let inst = build_instance_partial(&d, &plan, &spec).unwrap();
        assert_eq!(inst, build_instance_full(&d, &cfg));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(60))]
        #[test]
        fn partial_result_passes_exhaustive_oracle(
            g in 2usize..5,
            k in 1usize..3,
            nr in 1usize..4,
            extra in 0usize..3,
            j in 0usize..3,
            dm in 1usize..3,
            r1s in 0usize..3,
            r2s in 0usize..3,
        ) {
            let nt = nr + extra;
            let dm = dm.min(nr);
            let r1 = nr.saturating_sub(r1s).max(1);
            let r2 = nr.saturating_sub(r2s).max(1);
            let cfg = sym_cfg(g, k, nt, nr, dm, j, r1, r2);
            proptest::prop_assume!(cfg.validate().is_ok() && g * k <= 6);
            let spec = build_connectivity(&cfg).unwrap();
            let out = assign_greedy_partial(&cfg, &spec).unwrap();
            let start: usize = cfg.d_max.concat().iter().sum();
            proptest::prop_assert!(out.iterations <= start + 1);
            proptest::prop_assert!(out.plan.check_structure(&spec));
            let inst = build_instance_partial(&out.d, &out.plan, &spec).unwrap();
            proptest::prop_assert!(feasible_bruteforce(&inst).unwrap());
        }
    }
}
