//! Scenario construction: antenna and stream configuration, per-link
//! transmit/receive null spaces, and seeded channel realizations.
//!
//! Links are addressed by `(g, k, n)`: the channel from BS `n` to the `k`-th
//! MS of BS `g`. All indices are zero-based.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::subspace::Subspace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MsId {
    pub g: usize,
    pub k: usize,
}

impl MsId {
    pub fn new(g: usize, k: usize) -> Self {
        MsId { g, k }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Topology {
    FullyConnected,
    Symmetric {
        j: usize,
        r1: usize,
        r2: usize,
        /// Replace the canonical basis `n(q)` by a Haar unitary drawn from this seed.
        basis_seed: Option<u64>,
    },
    Geometric {
        link_range_km: f64,
        scatter_km: f64,
        area_km: f64,
        seed: u64,
        /// Optional `D^-alpha` power attenuation on connected links.
        path_loss_exponent: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub g: usize,
    pub k: usize,
    pub nt: Vec<usize>,
    pub nr: Vec<Vec<usize>>,
    pub d_max: Vec<Vec<usize>>,
    pub topology: Topology,
    /// Total transmit power per BS, linear scale.
    pub power: f64,
}

impl NetworkConfig {
    /// Homogeneous network: every BS has `nt` antennas, every MS `nr` antennas
    /// and requests `d_max` streams.
    pub fn uniform(g: usize, k: usize, nt: usize, nr: usize, d_max: usize, topology: Topology) -> Self {
        NetworkConfig {
            g,
            k,
            nt: vec![nt; g],
            nr: vec![vec![nr; k]; g],
            d_max: vec![vec![d_max; k]; g],
            topology,
            power: 1.0,
        }
    }

    pub fn ms_count(&self) -> usize {
        self.g * self.k
    }

    pub fn ms_ids(&self) -> impl Iterator<Item = MsId> + '_ {
        (0..self.g).flat_map(move |g| (0..self.k).map(move |k| MsId::new(g, k)))
    }

    pub fn ms_index(&self, ms: MsId) -> usize {
        ms.g * self.k + ms.k
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.g == 0 || self.k == 0 {
            return bad("need at least one BS and one MS per BS".into());
        }
        if self.nt.len() != self.g || self.nr.len() != self.g || self.d_max.len() != self.g {
            return bad("per-BS arrays must have length G".into());
        }
        for g in 0..self.g {
            if self.nr[g].len() != self.k || self.d_max[g].len() != self.k {
                return bad(format!("BS {g}: per-MS arrays must have length K"));
            }
            if self.nt[g] == 0 {
                return bad(format!("BS {g} has no antennas"));
            }
            for k in 0..self.k {
                let (nr, d) = (self.nr[g][k], self.d_max[g][k]);
                if nr == 0 {
                    return bad(format!("MS ({g},{k}) has no antennas"));
                }
                if d > nr {
                    return bad(format!("MS ({g},{k}): d_max {d} exceeds Nr {nr}"));
                }
            }
        }
        if !(self.power.is_finite() && self.power >= 0.0) {
            return bad(format!("power must be finite and nonnegative, got {}", self.power));
        }
        match &self.topology {
            Topology::FullyConnected => {}
            Topology::Symmetric { j: _, r1, r2, .. } => {
                let nt = self.nt[0];
                let nr = self.nr[0][0];
                let d = self.d_max[0][0];
                let homogeneous = self.nt.iter().all(|&x| x == nt)
                    && self.nr.iter().flatten().all(|&x| x == nr)
                    && self.d_max.iter().flatten().all(|&x| x == d);
                if !homogeneous {
                    return bad("symmetric topology requires identical antenna counts and stream caps".into());
                }
                if !(*r1 <= nr && nr <= nt && *r2 <= nr) {
                    return bad(format!("symmetric topology requires R1 <= Nr <= Nt and R2 <= Nr (R1={r1}, R2={r2}, Nr={nr}, Nt={nt})"));
                }
                if d * self.k > nt {
                    return bad(format!("symmetric topology requires d_max*K <= Nt ({d}*{} > {nt})", self.k));
                }
            }
            Topology::Geometric {
                link_range_km,
                scatter_km,
                area_km,
                path_loss_exponent,
                ..
            } => {
                if !(*link_range_km >= 0.0 && *scatter_km >= 0.0 && *area_km > 0.0) {
                    return bad("geometric topology needs L >= 0, S >= 0, area > 0".into());
                }
                if let Some(a) = path_loss_exponent {
                    if !(a.is_finite() && *a >= 0.0) {
                        return bad("path loss exponent must be finite and nonnegative".into());
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Link {
    /// Amplitude gain; zero means disconnected.
    pub gain: f64,
    pub tx_null: Subspace,
    pub rx_null: Subspace,
}

impl Link {
    fn disconnected(nt: usize, nr: usize) -> Self {
        Link {
            gain: 0.0,
            tx_null: Subspace::full(nt),
            rx_null: Subspace::full(nr),
        }
    }

    fn open(nt: usize, nr: usize) -> Self {
        Link {
            gain: 1.0,
            tx_null: Subspace::zero(nt),
            rx_null: Subspace::zero(nr),
        }
    }

    pub fn is_connected(&self) -> bool {
        self.gain > 0.0 && !self.tx_null.is_full() && !self.rx_null.is_full()
    }

    /// Rank of the link implied by its null spaces.
    pub fn rank(&self) -> usize {
        if !self.is_connected() {
            return 0;
        }
        let nr = self.rx_null.ambient_dim() - self.rx_null.dim();
        let nt = self.tx_null.ambient_dim() - self.tx_null.dim();
        nr.min(nt)
    }
}

#[derive(Debug, Clone)]
pub struct ConnectivitySpec {
    pub g: usize,
    pub k: usize,
    pub nt: Vec<usize>,
    pub nr: Vec<Vec<usize>>,
    links: Vec<Link>,
}

impl ConnectivitySpec {
    fn from_fn(cfg: &NetworkConfig, mut f: impl FnMut(usize, usize, usize) -> Link) -> Self {
        let mut links = Vec::with_capacity(cfg.g * cfg.k * cfg.g);
        for g in 0..cfg.g {
            for k in 0..cfg.k {
                for n in 0..cfg.g {
                    links.push(f(g, k, n));
                }
            }
        }
        ConnectivitySpec {
            g: cfg.g,
            k: cfg.k,
            nt: cfg.nt.clone(),
            nr: cfg.nr.clone(),
            links,
        }
    }

    pub fn link(&self, g: usize, k: usize, n: usize) -> &Link {
        &self.links[(g * self.k + k) * self.g + n]
    }

    pub fn link_mut(&mut self, g: usize, k: usize, n: usize) -> &mut Link {
        &mut self.links[(g * self.k + k) * self.g + n]
    }

    pub fn rank(&self, g: usize, k: usize, n: usize) -> usize {
        self.link(g, k, n).rank()
    }

    pub fn ms_ids(&self) -> impl Iterator<Item = MsId> + '_ {
        (0..self.g).flat_map(move |g| (0..self.k).map(move |k| MsId::new(g, k)))
    }

    /// Copy of this spec with every link connected and all null spaces trivial.
    pub fn fully_connected_view(&self) -> ConnectivitySpec {
        let mut out = self.clone();
        for g in 0..self.g {
            for k in 0..self.k {
                for n in 0..self.g {
                    *out.link_mut(g, k, n) = Link::open(self.nt[n], self.nr[g][k]);
                }
            }
        }
        out
    }
}

/// Build the link set for any topology.
pub fn build_connectivity(cfg: &NetworkConfig) -> Result<ConnectivitySpec> {
    cfg.validate()?;
    match cfg.topology {
        Topology::FullyConnected => Ok(ConnectivitySpec::from_fn(cfg, |g, k, n| {
            Link::open(cfg.nt[n], cfg.nr[g][k])
        })),
        Topology::Symmetric { .. } => build_symmetric_connectivity(cfg),
        Topology::Geometric { .. } => build_geometric_connectivity(cfg),
    }
}

/// Cyclic distance between two BS indices on a ring of `g` cells.
pub fn cyclic_distance(a: usize, b: usize, g: usize) -> usize {
    let d = a.abs_diff(b);
    d.min(g - d)
}

/// Indices of the basis vectors outside the band `{m*r, ..., (m+1)*r - 1}` (mod `nt`).
fn outside_band(nt: usize, m: usize, r: usize) -> Vec<usize> {
    let mut inside = vec![false; nt];
    for i in 0..r {
        inside[(m * r + i) % nt] = true;
    }
    (0..nt).filter(|&q| !inside[q]).collect()
}

pub fn build_symmetric_connectivity(cfg: &NetworkConfig) -> Result<ConnectivitySpec> {
    cfg.validate()?;
    let Topology::Symmetric { j, r1, r2, basis_seed } = cfg.topology else {
        return Err(Error::InvalidConfig("expected symmetric topology".into()));
    };
    let nt = cfg.nt[0];
    let basis = match basis_seed {
        Some(seed) => linalg::haar_unitary(nt, &mut ChaCha8Rng::seed_from_u64(seed)),
        None => linalg::identity(nt),
    };
    let span_of = |idx: &[usize]| {
        let mut m = linalg::zeros(nt, idx.len());
        for (c, &q) in idx.iter().enumerate() {
            m.set_column(c, &basis.column(q));
        }
        Subspace::from_orthonormal(m)
    };
    Ok(ConnectivitySpec::from_fn(cfg, |g, k, n| {
        let nr = cfg.nr[g][k];
        if g == n {
            Link {
                gain: 1.0,
                tx_null: span_of(&outside_band(nt, k, r1)),
                rx_null: Subspace::zero(nr),
            }
        } else if cyclic_distance(g, n, cfg.g) <= j {
            let m = (n as isize - g as isize).rem_euclid(cfg.g as isize) as usize;
            Link {
                gain: 1.0,
                tx_null: span_of(&outside_band(nt, m, r2)),
                rx_null: Subspace::zero(nr),
            }
        } else {
            Link::disconnected(nt, nr)
        }
    }))
}

/// Positions drawn for a geometric drop, in km.
#[derive(Debug, Clone)]
pub struct Drop {
    pub bs: Vec<[f64; 2]>,
    /// `ms[g][k]` is the `k`-th MS served by BS `g`.
    pub ms: Vec<Vec<[f64; 2]>>,
}

pub fn draw_drop(g: usize, k: usize, area_km: f64, seed: u64) -> Drop {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let point = |rng: &mut ChaCha8Rng| [rng.random::<f64>() * area_km, rng.random::<f64>() * area_km];
    let bs = (0..g).map(|_| point(&mut rng)).collect();
    let ms = (0..g)
        .map(|_| (0..k).map(|_| point(&mut rng)).collect())
        .collect();
    Drop { bs, ms }
}

/// Normalized DFT vector `e_N(omega) = N^-1/2 [exp(-j 2 pi i omega)]_i`.
pub fn dft_vector(n: usize, omega: f64) -> CMatrix {
    let scale = 1.0 / (n as f64).sqrt();
    CMatrix::from_fn(n, 1, |i, _| Complex64::from_polar(scale, -2.0 * PI * i as f64 * omega))
}

/// Range of `sin(theta)` over `[a, b]`.
fn sin_range(a: f64, b: f64) -> (f64, f64) {
    if b - a >= 2.0 * PI {
        return (-1.0, 1.0);
    }
    let (mut lo, mut hi) = (a.sin().min(b.sin()), a.sin().max(b.sin()));
    // sin peaks at pi/2 + 2 pi m and bottoms at -pi/2 + 2 pi m.
    let hits = |phase: f64| {
        let m = ((a - phase) / (2.0 * PI)).ceil();
        phase + 2.0 * PI * m <= b
    };
    if hits(PI / 2.0) {
        hi = 1.0;
    }
    if hits(-PI / 2.0) {
        lo = -1.0;
    }
    (lo, hi)
}

/// Circular (mod 1) distance from `x` to the interval `[lo, hi]`.
fn circular_distance_to_interval(x: f64, lo: f64, hi: f64) -> f64 {
    if hi - lo >= 1.0 {
        return 0.0;
    }
    [-1.0, 0.0, 1.0]
        .iter()
        .map(|shift| {
            let y = x + shift;
            if y < lo {
                lo - y
            } else if y > hi {
                y - hi
            } else {
                0.0
            }
        })
        .fold(f64::INFINITY, f64::min)
}

/// DFT indices `q` in the transmit null space of a scattered link with bearing
/// `theta` and angular spread `spread`.
pub fn scattered_null_indices(nt: usize, theta: f64, spread: f64) -> Vec<usize> {
    let (slo, shi) = sin_range(theta - spread, theta + spread);
    let (lo, hi) = (slo / 2.0, shi / 2.0);
    let step = 1.0 / nt as f64;
    (0..nt)
        .filter(|&q| circular_distance_to_interval(q as f64 * step, lo, hi) > step)
        .collect()
}

/// Angular spread seen from a BS at distance `dist` from an MS with local
/// scattering radius `scatter`.
pub fn angular_spread(scatter: f64, dist: f64) -> f64 {
    if scatter <= dist {
        (scatter / dist).asin()
    } else {
        PI
    }
}

pub fn build_geometric_connectivity(cfg: &NetworkConfig) -> Result<ConnectivitySpec> {
    cfg.validate()?;
    let Topology::Geometric {
        link_range_km,
        scatter_km,
        area_km,
        seed,
        path_loss_exponent,
    } = cfg.topology
    else {
        return Err(Error::InvalidConfig("expected geometric topology".into()));
    };
    let drop = draw_drop(cfg.g, cfg.k, area_km, seed);
    Ok(ConnectivitySpec::from_fn(cfg, |g, k, n| {
        let (nt, nr) = (cfg.nt[n], cfg.nr[g][k]);
        let [bx, by] = drop.bs[n];
        let [mx, my] = drop.ms[g][k];
        let dist = (mx - bx).hypot(my - by);
        if dist > link_range_km {
            return Link::disconnected(nt, nr);
        }
        let theta = (my - by).atan2(mx - bx);
        let idx = scattered_null_indices(nt, theta, angular_spread(scatter_km, dist));
        let mut basis = linalg::zeros(nt, idx.len());
        for (c, &q) in idx.iter().enumerate() {
            basis.set_column(c, &dft_vector(nt, q as f64 / nt as f64).column(0));
        }
        let gain = match path_loss_exponent {
            Some(alpha) => dist.max(1e-3).powf(-alpha / 2.0),
            None => 1.0,
        };
        Link {
            gain,
            tx_null: Subspace::from_orthonormal(basis),
            rx_null: Subspace::zero(nr),
        }
    }))
}

#[derive(Debug, Clone)]
pub struct ChannelSet {
    pub spec: ConnectivitySpec,
    pub seed: u64,
    h: Vec<CMatrix>,
}

impl ChannelSet {
    pub fn h(&self, g: usize, k: usize, n: usize) -> &CMatrix {
        &self.h[(g * self.spec.k + k) * self.spec.g + n]
    }

    pub fn g(&self) -> usize {
        self.spec.g
    }

    pub fn k(&self) -> usize {
        self.spec.k
    }

    /// Build from explicit matrices, ordered by `(g, k, n)`.
    pub fn from_matrices(spec: ConnectivitySpec, h: Vec<CMatrix>, seed: u64) -> Result<Self> {
        if h.len() != spec.g * spec.k * spec.g {
            return Err(Error::DimensionMismatch {
                expected: spec.g * spec.k * spec.g,
                found: h.len(),
            });
        }
        for g in 0..spec.g {
            for k in 0..spec.k {
                for n in 0..spec.g {
                    let m = &h[(g * spec.k + k) * spec.g + n];
                    if m.nrows() != spec.nr[g][k] || m.ncols() != spec.nt[n] {
                        return Err(Error::InvalidConfig(format!(
                            "H({g},{k},{n}) is {}x{}, expected {}x{}",
                            m.nrows(),
                            m.ncols(),
                            spec.nr[g][k],
                            spec.nt[n]
                        )));
                    }
                }
            }
        }
        Ok(ChannelSet { spec, seed, h })
    }
}

/// Unit-Frobenius-norm projector onto the orthogonal complement of `null`.
fn shaping_matrix(null: &Subspace) -> CMatrix {
    let n = null.ambient_dim();
    let p = linalg::identity(n) - null.projector();
    let norm = linalg::frobenius(&p);
    if norm < 1e-12 {
        linalg::zeros(n, n)
    } else {
        p / Complex64::new(norm, 0.0)
    }
}

/// Draw `H = G A^H H^w B` for every link. `H^w` is drawn for every link in
/// `(g, k, n)` order, connected or not, so realizations under different
/// connectivity share the same underlying fading.
pub fn sample_channels(spec: &ConnectivitySpec, seed: u64) -> ChannelSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = Vec::with_capacity(spec.g * spec.k * spec.g);
    for g in 0..spec.g {
        for k in 0..spec.k {
            for n in 0..spec.g {
                let (nr, nt) = (spec.nr[g][k], spec.nt[n]);
                let hw = linalg::complex_gaussian(nr, nt, &mut rng);
                let link = spec.link(g, k, n);
                if link.is_connected() {
                    let a = shaping_matrix(&link.rx_null);
                    let b = shaping_matrix(&link.tx_null);
                    h.push(a.adjoint() * hw * b * Complex64::new(link.gain, 0.0));
                } else {
                    h.push(linalg::zeros(nr, nt));
                }
            }
        }
    }
    ChannelSet {
        spec: spec.clone(),
        seed,
        h,
    }
}

/// Write channels as text: a dimension header then one `g,k,n,row,col,re,im`
/// line per entry.
pub fn write_channels<W: Write>(ch: &ChannelSet, mut out: W) -> Result<()> {
    let s = &ch.spec;
    let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
    writeln!(out, "# G {} K {} seed {}", s.g, s.k, ch.seed)?;
    writeln!(out, "# Nt {}", join(&s.nt))?;
    writeln!(out, "# Nr {}", join(&s.nr.concat()))?;
    writeln!(out, "g,k,n,row,col,re,im")?;
    for g in 0..s.g {
        for k in 0..s.k {
            for n in 0..s.g {
                let m = ch.h(g, k, n);
                for r in 0..m.nrows() {
                    for c in 0..m.ncols() {
                        let z = m[(r, c)];
                        writeln!(out, "{g},{k},{n},{r},{c},{},{}", z.re, z.im)?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Channel matrices read back from [`write_channels`] output.
#[derive(Debug, Clone)]
pub struct ChannelDump {
    pub g: usize,
    pub k: usize,
    pub seed: u64,
    pub nt: Vec<usize>,
    pub nr: Vec<usize>,
    /// Ordered by `(g, k, n)`.
    pub h: Vec<CMatrix>,
}

pub fn read_channels<R: BufRead>(input: R) -> Result<ChannelDump> {
    let err = |line: usize, message: &str| Error::Parse {
        line,
        message: message.to_string(),
    };
    let mut header: Option<(usize, usize, u64)> = None;
    let mut nt: Option<Vec<usize>> = None;
    let mut nr: Option<Vec<usize>> = None;
    let mut h: Vec<CMatrix> = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with("g,") {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let toks: Vec<&str> = rest.split_whitespace().collect();
            let nums = |t: &[&str]| -> Result<Vec<usize>> {
                t.iter()
                    .map(|x| x.parse().map_err(|_| err(lineno, "bad integer in header")))
                    .collect()
            };
            match toks.first() {
                Some(&"G") if toks.len() == 6 => {
                    let v = nums(&[toks[1], toks[3]])?;
                    let seed = toks[5].parse().map_err(|_| err(lineno, "bad seed"))?;
                    header = Some((v[0], v[1], seed));
                }
                Some(&"Nt") => nt = Some(nums(&toks[1..])?),
                Some(&"Nr") => nr = Some(nums(&toks[1..])?),
                _ => return Err(err(lineno, "unrecognized header line")),
            }
            if h.is_empty() {
                if let (Some((g, k, _)), Some(nt), Some(nr)) = (&header, &nt, &nr) {
                    if nt.len() != *g || nr.len() != g * k {
                        return Err(err(lineno, "antenna lists do not match G and K"));
                    }
                    for gi in 0..*g {
                        for ki in 0..*k {
                            for n in 0..*g {
                                h.push(linalg::zeros(nr[gi * k + ki], nt[n]));
                            }
                        }
                    }
                }
            }
            continue;
        }
        let Some((g, k, _)) = header else {
            return Err(err(lineno, "data before dimension header"));
        };
        if h.is_empty() {
            return Err(err(lineno, "data before antenna header"));
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(err(lineno, "expected 7 fields"));
        }
        let idx: Vec<usize> = f[..5]
            .iter()
            .map(|x| x.trim().parse().map_err(|_| err(lineno, "bad index")))
            .collect::<Result<_>>()?;
        let re: f64 = f[5].trim().parse().map_err(|_| err(lineno, "bad real part"))?;
        let im: f64 = f[6].trim().parse().map_err(|_| err(lineno, "bad imaginary part"))?;
        let (gi, ki, n, r, c) = (idx[0], idx[1], idx[2], idx[3], idx[4]);
        if gi >= g || ki >= k || n >= g {
            return Err(err(lineno, "link index out of range"));
        }
        let m = &mut h[(gi * k + ki) * g + n];
        if r >= m.nrows() || c >= m.ncols() {
            return Err(err(lineno, "entry index out of range"));
        }
        m[(r, c)] = Complex64::new(re, im);
    }
    let (g, k, seed) = header.ok_or_else(|| err(0, "missing dimension header"))?;
    Ok(ChannelDump {
        g,
        k,
        seed,
        nt: nt.ok_or_else(|| err(0, "missing Nt header"))?,
        nr: nr.ok_or_else(|| err(0, "missing Nr header"))?,
        h,
    })
}
