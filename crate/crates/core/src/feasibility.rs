//! Integer feasibility of a stream assignment: freedoms at precoders and
//! decorrelators against the alignment constraints between them.
//!
//! Nodes are MSs in row-major `(g, k)` order. Every MS appears twice: as a
//! transmit node (its precoder, freedoms `v_t`) and as a receive node (its
//! decorrelator, freedoms `v_r`). `c[r][t]` counts the constraints needed to
//! keep transmit node `t` out of receive node `r`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::allocation::{StreamAssignment, SubspacePlan};
use crate::error::{Error, Result};
use crate::network::{ConnectivitySpec, NetworkConfig};

/// Largest node count accepted by [`feasible_bruteforce`].
pub const BRUTEFORCE_LIMIT: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeasibilityInstance {
    /// Cell of each node; constraints within a cell must be zero.
    pub cell: Vec<usize>,
    /// Freedoms at each precoder. Negative when a BS is over-subscribed.
    pub v_t: Vec<i64>,
    pub v_r: Vec<i64>,
    /// `c[r][t]`, receive node first.
    pub c: Vec<Vec<i64>>,
}

impl FeasibilityInstance {
    pub fn len(&self) -> usize {
        self.v_t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_t.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.v_r.len() != n || self.cell.len() != n || self.c.len() != n {
            return Err(Error::InvalidConfig("instance arrays must share one length".into()));
        }
        for (r, row) in self.c.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidConfig(format!("constraint row {r} has {} entries, expected {n}", row.len())));
            }
            for (t, &c) in row.iter().enumerate() {
                if c < 0 {
                    return Err(Error::InvalidConfig(format!("negative constraint count c[{r}][{t}]")));
                }
                if c > 0 && self.cell[r] == self.cell[t] {
                    return Err(Error::InvalidConfig(format!("c[{r}][{t}] links two nodes of the same cell")));
                }
            }
        }
        Ok(())
    }

    pub fn total_constraints(&self) -> i64 {
        self.c.iter().flatten().sum()
    }
}

/// Freedoms and constraints of a fully connected network.
pub fn build_instance_full(d: &StreamAssignment, cfg: &NetworkConfig) -> FeasibilityInstance {
    let ids: Vec<_> = cfg.ms_ids().collect();
    let n = ids.len();
    let mut inst = FeasibilityInstance {
        cell: ids.iter().map(|m| m.g).collect(),
        v_t: vec![0; n],
        v_r: vec![0; n],
        c: vec![vec![0; n]; n],
    };
    for (i, ms) in ids.iter().enumerate() {
        let dij = d.get(ms.g, ms.k) as i64;
        let load = d.per_bs(ms.g) as i64;
        inst.v_t[i] = dij * (cfg.nt[ms.g] as i64 - load);
        inst.v_r[i] = dij * (cfg.nr[ms.g][ms.k] as i64 - dij);
    }
    for (r, rx) in ids.iter().enumerate() {
        for (t, tx) in ids.iter().enumerate() {
            if rx.g != tx.g {
                inst.c[r][t] = d.get(rx.g, rx.k) as i64 * d.get(tx.g, tx.k) as i64;
            }
        }
    }
    inst
}

/// Freedoms and constraints under a subspace plan on a partially connected
/// network.
pub fn build_instance_partial(
    d: &StreamAssignment,
    plan: &SubspacePlan,
    spec: &ConnectivitySpec,
) -> Result<FeasibilityInstance> {
    let ids: Vec<_> = spec.ms_ids().collect();
    let n = ids.len();
    let mut inst = FeasibilityInstance {
        cell: ids.iter().map(|m| m.g).collect(),
        v_t: vec![0; n],
        v_r: vec![0; n],
        c: vec![vec![0; n]; n],
    };
    let dims = PairDims::new(plan, spec)?;
    for (i, ms) in ids.iter().enumerate() {
        let dij = d.get(ms.g, ms.k) as i64;
        inst.v_t[i] = dij * dims.free[i] as i64;
        inst.v_r[i] = dij * dims.receive_extra(i, d.get(ms.g, ms.k)) as i64;
    }
    for (r, rx) in ids.iter().enumerate() {
        for (t, tx) in ids.iter().enumerate() {
            if rx.g != tx.g {
                inst.c[r][t] = dims.constraints(r, t, d.get(rx.g, rx.k), d.get(tx.g, tx.k));
            }
        }
    }
    Ok(inst)
}

/// Subspace dimensions that determine the partial-connectivity counts.
///
/// The effective dimension of a transceiver space `A` on a link with null
/// space `N` is the dimension of its projection onto `N^⊥`; when `A` splits
/// along `N` and `N^⊥` this equals `dim(A ∩ N^⊥)`.
#[derive(Debug, Clone)]
pub(crate) struct PairDims {
    /// Free space dimension per MS.
    pub free: Vec<usize>,
    /// Receive space dimension per MS.
    pub receive: Vec<usize>,
    /// `rx[r][t]`: effective receive dimension of MS `r` on the link from the BS of `t`.
    pub rx: Vec<Vec<usize>>,
    /// `tx[t][r]`: effective transmit dimension of MS `t` on the link to MS `r`.
    pub tx: Vec<Vec<usize>>,
}

impl PairDims {
    pub fn new(plan: &SubspacePlan, spec: &ConnectivitySpec) -> Result<Self> {
        let ids: Vec<_> = spec.ms_ids().collect();
        let n = ids.len();
        let mut out = PairDims {
            free: vec![0; n],
            receive: vec![0; n],
            rx: vec![vec![0; n]; n],
            tx: vec![vec![0; n]; n],
        };
        let mut tx_span = Vec::with_capacity(n);
        for (i, ms) in ids.iter().enumerate() {
            let p = plan.get(ms.g, ms.k);
            if p.core.ambient_dim() != spec.nt[ms.g] {
                return Err(Error::DimensionMismatch {
                    expected: spec.nt[ms.g],
                    found: p.core.ambient_dim(),
                });
            }
            if p.receive.ambient_dim() != spec.nr[ms.g][ms.k] {
                return Err(Error::DimensionMismatch {
                    expected: spec.nr[ms.g][ms.k],
                    found: p.receive.ambient_dim(),
                });
            }
            out.free[i] = p.free.dim();
            out.receive[i] = p.receive.dim();
            tx_span.push(p.core.sum(&p.free)?);
        }
        for (r, rx) in ids.iter().enumerate() {
            let recv = &plan.get(rx.g, rx.k).receive;
            for (t, tx) in ids.iter().enumerate() {
                if rx.g == tx.g {
                    continue;
                }
                let link = spec.link(rx.g, rx.k, tx.g);
                if !link.is_connected() {
                    continue;
                }
                out.rx[r][t] = recv.dim_outside(&link.rx_null)?;
                out.tx[t][r] = tx_span[t].dim_outside(&link.tx_null)?;
            }
        }
        Ok(out)
    }

    pub fn receive_extra(&self, i: usize, d: usize) -> usize {
        self.receive[i].saturating_sub(d)
    }

    pub fn constraints(&self, r: usize, t: usize, d_r: usize, d_t: usize) -> i64 {
        (d_r.min(self.rx[r][t]) * d_t.min(self.tx[t][r])) as i64
    }
}

/// A pair of node subsets whose constraints exceed their freedoms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub tx_nodes: Vec<usize>,
    pub rx_nodes: Vec<usize>,
    pub constraints: i64,
    pub freedoms: i64,
}

/// Exhaustive subset check. Returns `Ok(None)` when feasible and a violating
/// subset pair otherwise.
///
/// For a fixed transmit subset the worst receive subset is the set of
/// receive nodes whose incoming constraints exceed their own freedoms, so only
/// `2^n` transmit subsets are enumerated.
pub fn find_violation(inst: &FeasibilityInstance) -> Result<Option<Violation>> {
    inst.validate()?;
    let n = inst.len();
    if n > BRUTEFORCE_LIMIT {
        return Err(Error::InstanceTooLarge {
            nodes: n,
            limit: BRUTEFORCE_LIMIT,
        });
    }
    let mut incoming = vec![0i64; n];
    for mask in 0u32..(1 << n) {
        incoming.iter_mut().for_each(|x| *x = 0);
        let mut freedoms = 0i64;
        for t in (0..n).filter(|t| mask >> t & 1 == 1) {
            freedoms += inst.v_t[t];
            for (r, acc) in incoming.iter_mut().enumerate() {
                *acc += inst.c[r][t];
            }
        }
        let mut constraints = 0i64;
        let mut rx_nodes = Vec::new();
        for r in 0..n {
            if incoming[r] > inst.v_r[r] {
                rx_nodes.push(r);
                constraints += incoming[r];
                freedoms += inst.v_r[r];
            }
        }
        if constraints > freedoms {
            return Ok(Some(Violation {
                tx_nodes: (0..n).filter(|t| mask >> t & 1 == 1).collect(),
                rx_nodes,
                constraints,
                freedoms,
            }));
        }
    }
    Ok(None)
}

pub fn feasible_bruteforce(inst: &FeasibilityInstance) -> Result<bool> {
    Ok(find_violation(inst)?.is_none())
}

/// How the constraints of each pair are split between its two endpoints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintAssignment {
    /// `c_t[t][r]`: share of `c[r][t]` carried by transmit node `t`.
    pub c_t: Vec<Vec<i64>>,
    /// `c_r[r][t]`: share of `c[r][t]` carried by receive node `r`.
    pub c_r: Vec<Vec<i64>>,
    pub p_t: Vec<i64>,
    pub p_r: Vec<i64>,
}

impl ConstraintAssignment {
    fn new(inst: &FeasibilityInstance, split: InitialSplit) -> Self {
        let n = inst.len();
        let mut c_t = vec![vec![0; n]; n];
        let mut c_r = vec![vec![0; n]; n];
        let mut rng = match split {
            InitialSplit::Random(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
            InitialSplit::Half => None,
        };
        for r in 0..n {
            for t in 0..n {
                let c = inst.c[r][t];
                let share = match rng.as_mut() {
                    Some(rng) => rng.random_range(0..=c),
                    None => (c + 1) / 2,
                };
                c_t[t][r] = share;
                c_r[r][t] = c - share;
            }
        }
        let p_t = (0..n).map(|t| inst.v_t[t] - c_t[t].iter().sum::<i64>()).collect();
        let p_r = (0..n).map(|r| inst.v_r[r] - c_r[r].iter().sum::<i64>()).collect();
        ConstraintAssignment { c_t, c_r, p_t, p_r }
    }

    /// Whether the split covers `c` exactly and pressures match it.
    pub fn is_consistent(&self, inst: &FeasibilityInstance) -> bool {
        let n = inst.len();
        for r in 0..n {
            for t in 0..n {
                let (a, b) = (self.c_t[t][r], self.c_r[r][t]);
                if a < 0 || b < 0 || a + b != inst.c[r][t] {
                    return false;
                }
            }
        }
        (0..n).all(|t| self.p_t[t] == inst.v_t[t] - self.c_t[t].iter().sum::<i64>())
            && (0..n).all(|r| self.p_r[r] == inst.v_r[r] - self.c_r[r].iter().sum::<i64>())
    }

    pub fn all_nonnegative(&self) -> bool {
        self.p_t.iter().chain(&self.p_r).all(|&p| p >= 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialSplit {
    /// `ceil(c/2)` to the transmit side, the rest to the receive side.
    #[default]
    Half,
    /// Uniform random share per pair from a seeded generator.
    Random(u64),
}

#[derive(Debug, Clone)]
pub struct TreeOutcome {
    pub feasible: bool,
    pub assignment: ConstraintAssignment,
    /// Node insertions plus pressure transfers performed.
    pub steps: usize,
}

/// Pressure-transfer state over `2n` nodes: transmit nodes `0..n`, receive
/// nodes `n..2n`.
struct Pressure<'a> {
    n: usize,
    a: &'a mut ConstraintAssignment,
}

impl Pressure<'_> {
    fn pressure(&self, x: usize) -> i64 {
        if x < self.n {
            self.a.p_t[x]
        } else {
            self.a.p_r[x - self.n]
        }
    }

    /// Load that `from` can hand over to `to`.
    fn strength(&self, from: usize, to: usize) -> i64 {
        let n = self.n;
        match (from < n, to < n) {
            (true, false) => self.a.c_t[from][to - n],
            (false, true) => self.a.c_r[from - n][to],
            _ => 0,
        }
    }

    /// Move `eps` of the pair's load from `from` to `to`.
    fn shift(&mut self, from: usize, to: usize, eps: i64) {
        let n = self.n;
        let (t, r) = if from < n { (from, to - n) } else { (to, from - n) };
        if from < n {
            self.a.c_t[t][r] -= eps;
            self.a.c_r[r][t] += eps;
            self.a.p_t[t] += eps;
            self.a.p_r[r] -= eps;
        } else {
            self.a.c_r[r][t] -= eps;
            self.a.c_t[t][r] += eps;
            self.a.p_r[r] += eps;
            self.a.p_t[t] -= eps;
        }
    }
}

#[derive(Debug, Clone)]
struct Tree {
    /// Node ids in insertion order; index 0 is the root.
    nodes: Vec<usize>,
    /// Parent position in `nodes`, `None` for the root.
    parent: Vec<Option<usize>>,
}

impl Tree {
    fn rooted(root: usize) -> Self {
        Tree {
            nodes: vec![root],
            parent: vec![None],
        }
    }

    fn path_to_root(&self, mut pos: usize) -> Vec<usize> {
        let mut path = vec![pos];
        while let Some(p) = self.parent[pos] {
            path.push(p);
            pos = p;
        }
        path.reverse();
        path
    }
}

/// Pressure-transfer-tree feasibility check.
pub fn feasible_tree(inst: &FeasibilityInstance) -> Result<TreeOutcome> {
    feasible_tree_with(inst, InitialSplit::Half)
}

pub fn feasible_tree_with(inst: &FeasibilityInstance, split: InitialSplit) -> Result<TreeOutcome> {
    inst.validate()?;
    let n = inst.len();
    let mut assignment = ConstraintAssignment::new(inst, split);
    let mut st = Pressure { n, a: &mut assignment };
    let mut steps = 0usize;
    let mut forest: Vec<Tree> = Vec::new();

    let feasible = loop {
        let overloaded = (0..2 * n)
            .filter(|&x| st.pressure(x) < 0)
            .min_by_key(|&x| (st.pressure(x), x));
        let Some(most_negative) = overloaded else {
            break true;
        };
        if forest.is_empty() {
            forest.push(Tree::rooted(most_negative));
        }

        // Grow every tree by one layer over links with positive strength.
        let mut grew = false;
        for tree in forest.iter_mut() {
            let mut member = vec![false; 2 * n];
            for &x in &tree.nodes {
                member[x] = true;
            }
            let existing = tree.nodes.len();
            for pos in 0..existing {
                let x = tree.nodes[pos];
                for y in 0..2 * n {
                    if !member[y] && st.strength(x, y) > 0 {
                        member[y] = true;
                        tree.nodes.push(y);
                        tree.parent.push(Some(pos));
                        steps += 1;
                        grew = true;
                    }
                }
            }
        }

        // Push from each root to every positive node of its tree.
        let mut pushed = false;
        for tree in &forest {
            let root = tree.nodes[0];
            for pos in 1..tree.nodes.len() {
                if st.pressure(root) >= 0 {
                    break;
                }
                let leaf = tree.nodes[pos];
                if st.pressure(leaf) <= 0 {
                    continue;
                }
                let path = tree.path_to_root(pos);
                let mut eps = (-st.pressure(root)).min(st.pressure(leaf));
                for w in path.windows(2) {
                    eps = eps.min(st.strength(tree.nodes[w[0]], tree.nodes[w[1]]));
                }
                if eps <= 0 {
                    continue;
                }
                for w in path.windows(2) {
                    st.shift(tree.nodes[w[0]], tree.nodes[w[1]], eps);
                }
                steps += 1;
                pushed = true;
            }
        }

        if !grew && !pushed {
            break false;
        }

        // Split at depleted links and drop neutralized roots.
        let mut next = Vec::new();
        for tree in forest {
            let mut home: Vec<Option<(usize, usize)>> = vec![None; tree.nodes.len()];
            let mut parts: Vec<Tree> = Vec::new();
            for pos in 0..tree.nodes.len() {
                let x = tree.nodes[pos];
                let attached = tree.parent[pos].and_then(|p| {
                    let parent_home = home[p]?;
                    (st.strength(tree.nodes[p], x) > 0).then_some(parent_home)
                });
                match attached {
                    Some((part, parent_idx)) => {
                        let t = &mut parts[part];
                        t.nodes.push(x);
                        t.parent.push(Some(parent_idx));
                        home[pos] = Some((part, t.nodes.len() - 1));
                    }
                    None if st.pressure(x) < 0 => {
                        parts.push(Tree::rooted(x));
                        home[pos] = Some((parts.len() - 1, 0));
                    }
                    None => {}
                }
            }
            next.extend(parts);
        }
        forest = next;
    };

    debug_assert!(assignment.is_consistent(inst));
    Ok(TreeOutcome {
        feasible,
        assignment,
        steps,
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    v_t: Vec<i64>,
    v_r: Vec<i64>,
    c: Vec<Vec<i64>>,
    cell: Option<Vec<usize>>,
}

/// Parse an instance from TOML with keys `v_t`, `v_r`, `c` (rows indexed by
/// receive node) and optional `cell`. Without `cell` every node is its own cell.
pub fn parse_instance(src: &str) -> Result<FeasibilityInstance> {
    let file: InstanceFile = toml::from_str(src).map_err(|e| Error::from_toml(src, e))?;
    let n = file.v_t.len();
    let inst = FeasibilityInstance {
        cell: file.cell.unwrap_or_else(|| (0..n).collect()),
        v_t: file.v_t,
        v_r: file.v_r,
        c: file.c,
    };
    inst.validate()?;
    Ok(inst)
}
