//! Forward simulation of the spin system.
//!
//! Two engines: uniformised thinning over the sites with nonzero rate, and the
//! graphical construction driven by per-site voter arrows and star events. The
//! graphical log is generated lazily per `(site, time window)` from counter-based
//! streams, so forward evolution and backward walks read identical randomness.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use rayon::prelude::*;

use crate::dual::exp_wait;
use crate::error::{Error, Result};
use crate::lattice::{Configuration, Site, TorusLattice};
use crate::models::{ModelSpec, PerturbationView, RateTable};
use crate::rng::{stream, StreamRng, TAG_FORWARD, TAG_GRAPHICAL};
use crate::stats::Estimate;

/// Cap on candidate events per trajectory.
pub const CANDIDATE_BUDGET: u64 = 10_000_000_000;

const ABSENT: u32 = u32::MAX;

/// Sites with nonzero flip rate.
#[derive(Debug, Clone)]
struct ActiveSet {
    members: Vec<u32>,
    pos: Vec<u32>,
}

impl ActiveSet {
    fn new(n: usize) -> Self {
        Self {
            members: Vec::new(),
            pos: vec![ABSENT; n],
        }
    }

    fn set(&mut self, x: Site, on: bool) {
        let p = self.pos[x];
        if on && p == ABSENT {
            self.pos[x] = self.members.len() as u32;
            self.members.push(x as u32);
        } else if !on && p != ABSENT {
            let last = *self.members.last().expect("nonempty");
            self.members.swap_remove(p as usize);
            if last as usize != x {
                self.pos[last as usize] = p;
            }
            self.pos[x] = ABSENT;
        }
    }
}

/// A rate table bound to a torus, with forward and reverse neighbour tables.
#[derive(Debug, Clone)]
pub struct CompiledModel {
    lattice: Arc<TorusLattice>,
    table: RateTable,
    fwd: Vec<u32>,
    rev: Vec<u32>,
    max_rate: f64,
}

impl CompiledModel {
    pub fn new(model: &ModelSpec, lattice: Arc<TorusLattice>) -> Result<Self> {
        Self::from_table(model.rate_table()?, lattice)
    }

    pub fn from_table(table: RateTable, lattice: Arc<TorusLattice>) -> Result<Self> {
        let fwd = lattice.offset_table(table.window())?;
        let negs: Vec<_> = table.window().iter().map(|z| z.neg()).collect();
        let rev = lattice.offset_table(&negs)?;
        let max_rate = table.max_rate();
        Ok(Self {
            lattice,
            table,
            fwd,
            rev,
            max_rate,
        })
    }

    pub fn lattice(&self) -> &Arc<TorusLattice> {
        &self.lattice
    }

    pub fn table(&self) -> &RateTable {
        &self.table
    }

    /// Uniformisation constant `M`.
    pub fn max_rate(&self) -> f64 {
        self.max_rate
    }

    #[inline]
    fn bits(&self, cfg: &Configuration, x: Site) -> u64 {
        let w = self.table.window().len();
        self.fwd[x * w..(x + 1) * w]
            .iter()
            .enumerate()
            .fold(0, |acc, (j, &y)| acc | ((cfg.get(y as Site) as u64) << j))
    }

    #[inline]
    pub fn rate(&self, cfg: &Configuration, x: Site) -> f64 {
        self.table.rate(self.bits(cfg, x))
    }

    fn active_set(&self, cfg: &Configuration) -> ActiveSet {
        let mut a = ActiveSet::new(self.lattice.len());
        for x in 0..self.lattice.len() {
            if self.rate(cfg, x) > 0.0 {
                a.set(x, true);
            }
        }
        a
    }

    fn refresh_around(&self, cfg: &Configuration, active: &mut ActiveSet, y: Site) {
        let w = self.table.window().len();
        for &x in &self.rev[y * w..(y + 1) * w] {
            active.set(x as Site, self.rate(cfg, x as Site) > 0.0);
        }
    }
}

/// Evolves `cfg` through the increasing `times`, calling `at(i, cfg)` at each.
///
/// Candidate flips arrive at rate `M` per site of nonzero rate and are
/// accepted with probability `c(x, xi)/M`. Once no site can flip the
/// configuration is frozen and the remaining times are reported unchanged.
/// Returns the number of accepted flips.
pub fn evolve_gillespie<R: Rng + ?Sized>(
    model: &CompiledModel,
    cfg: &mut Configuration,
    times: &[f64],
    rng: &mut R,
    mut at: impl FnMut(usize, &Configuration),
) -> Result<u64> {
    let m = model.max_rate();
    let mut active = model.active_set(cfg);
    let mut t = 0.0;
    let mut flips = 0u64;
    let mut candidates = 0u64;
    for (i, &target) in times.iter().enumerate() {
        while !active.members.is_empty() {
            let dt = exp_wait(rng, m * active.members.len() as f64);
            if t + dt > target {
                break;
            }
            t += dt;
            candidates += 1;
            if candidates > CANDIDATE_BUDGET {
                return Err(Error::BudgetExceeded(CANDIDATE_BUDGET));
            }
            let x = active.members[rng.random_range(0..active.members.len())] as Site;
            if rng.random::<f64>() * m < model.rate(cfg, x) {
                cfg.flip(x);
                flips += 1;
                model.refresh_around(cfg, &mut active, x);
            }
        }
        t = target;
        at(i, cfg);
    }
    Ok(flips)
}

/// Initial configurations accepted by the drivers.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Zeros,
    Ones,
    /// Fresh product Bernoulli(1/2) draw per replicate.
    Half,
    Bernoulli(f64),
    Checker,
    /// A single 1 at the origin.
    Single,
    Fixed(Configuration),
}

impl InitialState {
    pub fn realize<R: Rng + ?Sized>(&self, lattice: &Arc<TorusLattice>, rng: &mut R) -> Result<Configuration> {
        Ok(match self {
            InitialState::Zeros => Configuration::zeros(lattice.clone()),
            InitialState::Ones => Configuration::ones(lattice.clone()),
            InitialState::Half => Configuration::bernoulli(lattice.clone(), 0.5, rng),
            InitialState::Bernoulli(u) => Configuration::bernoulli(lattice.clone(), *u, rng),
            InitialState::Checker => Configuration::checkerboard(lattice.clone())?,
            InitialState::Single => Configuration::from_sites(lattice.clone(), [0]),
            InitialState::Fixed(c) => {
                if c.lattice().sides() != lattice.sides() {
                    return Err(Error::InvalidLattice("fixed configuration on another torus".into()));
                }
                c.clone()
            }
        })
    }

    /// Reads lines `c_1 ... c_d bit`; unlisted sites are 0, `#` starts a comment.
    pub fn from_file(path: &Path, lattice: &Arc<TorusLattice>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))?;
        Self::parse(&text, lattice).map(InitialState::Fixed)
    }

    pub fn parse(text: &str, lattice: &Arc<TorusLattice>) -> Result<Configuration> {
        let mut cfg = Configuration::zeros(lattice.clone());
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let nums: Vec<i64> = line
                .split_whitespace()
                .map(|t| t.parse::<i64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidParameter(format!("line {}: {e}", n + 1)))?;
            if nums.len() != lattice.dim() + 1 || !(nums[lattice.dim()] == 0 || nums[lattice.dim()] == 1) {
                return Err(Error::InvalidParameter(format!(
                    "line {}: expected {} coordinates and a bit",
                    n + 1,
                    lattice.dim()
                )));
            }
            cfg.set(lattice.site_of(&nums[..lattice.dim()]), nums[lattice.dim()] == 1);
        }
        Ok(cfg)
    }
}

/// Voter arrow: at `time`, `xi(x) <- xi(target)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoterEvent {
    pub time: f64,
    pub target: Site,
}

/// Star event: at `time`, flip `i -> 1 - i` iff `u < g_{1-i}(xi(x + Z))/c-bar`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StarEvent {
    pub time: f64,
    pub tuple: usize,
    pub u: f64,
}

/// Lazily generated graphical construction on a torus.
#[derive(Debug, Clone)]
pub struct EventLog {
    seed: u64,
    lattice: Arc<TorusLattice>,
    window_len: f64,
    voter_rate: f64,
    star_rate: f64,
    c_bar: f64,
    kernel_targets: Vec<u32>,
    kernel_len: usize,
    kernel_alias: WeightedAliasIndex<f64>,
    /// Per `q_Z` atom: flat `sites x N0` table of `x + Z^k`.
    tuple_targets: Vec<Vec<u32>>,
    z_alias: Option<WeightedAliasIndex<f64>>,
    n0: usize,
    g_eps: [Vec<f64>; 2],
}

impl EventLog {
    pub fn new(view: &PerturbationView, lattice: Arc<TorusLattice>, seed: u64) -> Result<Self> {
        let kernel: Vec<_> = view.kernel.support().cloned().collect();
        let kernel_targets = lattice.offset_table(&kernel)?;
        let kernel_alias = WeightedAliasIndex::new(view.kernel.entries().iter().map(|e| e.1).collect())
            .map_err(|e| Error::InvalidParameter(format!("kernel: {e}")))?;
        let mut tuple_targets = Vec::new();
        for (tuple, _) in &view.z_law {
            let offs: Vec<_> = tuple.iter().map(|&j| view.window[j].clone()).collect();
            tuple_targets.push(lattice.offset_table(&offs)?);
        }
        let z_alias = if view.z_law.is_empty() {
            None
        } else {
            Some(
                WeightedAliasIndex::new(view.z_law.iter().map(|e| e.1).collect())
                    .map_err(|e| Error::InvalidParameter(format!("q_Z: {e}")))?,
            )
        };
        let voter_rate = view.voter_rate();
        let star_rate = view.star_rate();
        Ok(Self {
            seed,
            lattice,
            window_len: (4.0 / (voter_rate + star_rate).max(1e-9)).max(1.0),
            voter_rate,
            star_rate,
            c_bar: view.c_bar(),
            kernel_targets,
            kernel_len: kernel.len(),
            kernel_alias,
            tuple_targets,
            z_alias,
            n0: view.n0,
            g_eps: view.g_eps.clone(),
        })
    }

    pub fn lattice(&self) -> &Arc<TorusLattice> {
        &self.lattice
    }

    pub fn voter_rate(&self) -> f64 {
        self.voter_rate
    }

    pub fn star_rate(&self) -> f64 {
        self.star_rate
    }

    pub fn window_len(&self) -> f64 {
        self.window_len
    }

    fn window_of(&self, t: f64) -> u64 {
        (t / self.window_len).floor() as u64
    }

    fn poisson_times(&self, rng: &mut StreamRng, rate: f64, w: u64) -> Vec<f64> {
        let mut out = Vec::new();
        if rate <= 0.0 {
            return out;
        }
        let start = w as f64 * self.window_len;
        let mut s = 0.0;
        loop {
            s += exp_wait(rng, rate);
            if s >= self.window_len {
                return out;
            }
            out.push(start + s);
        }
    }

    /// Voter arrows at `x` during window `w`, in increasing time.
    pub fn voter_events(&self, x: Site, w: u64) -> Vec<VoterEvent> {
        let mut rng = stream(self.seed, &[TAG_GRAPHICAL, 0, x as u64, w]);
        let times = self.poisson_times(&mut rng, self.voter_rate, w);
        times
            .into_iter()
            .map(|time| {
                let k = self.kernel_alias.sample(&mut rng);
                VoterEvent {
                    time,
                    target: self.kernel_targets[x * self.kernel_len + k] as Site,
                }
            })
            .collect()
    }

    /// Star events at `x` during window `w`, in increasing time.
    pub fn star_events(&self, x: Site, w: u64) -> Vec<StarEvent> {
        let Some(z_alias) = &self.z_alias else {
            return Vec::new();
        };
        let mut rng = stream(self.seed, &[TAG_GRAPHICAL, 1, x as u64, w]);
        let times = self.poisson_times(&mut rng, self.star_rate, w);
        times
            .into_iter()
            .map(|time| StarEvent {
                time,
                tuple: z_alias.sample(&mut rng),
                u: rng.random(),
            })
            .collect()
    }

    fn star_flips(&self, cfg: &Configuration, x: Site, e: &StarEvent) -> bool {
        let targets = &self.tuple_targets[e.tuple][x * self.n0..(x + 1) * self.n0];
        let b = targets
            .iter()
            .enumerate()
            .fold(0usize, |acc, (k, &y)| acc | ((cfg.get(y as Site) as usize) << k));
        let i = cfg.get(x) as usize;
        e.u < self.g_eps[1 - i][b] / self.c_bar
    }
}

#[derive(Clone, Copy)]
enum Mark {
    Voter(Site),
    Star(StarEvent),
}

/// Evolves `cfg` by the graphical construction through the increasing `times`.
/// Simultaneous events are ordered by site index, voter arrows first.
/// Returns the number of spin changes.
pub fn evolve_graphical(
    log: &EventLog,
    cfg: &mut Configuration,
    times: &[f64],
    mut at: impl FnMut(usize, &Configuration),
) -> Result<u64> {
    if cfg.lattice().sides() != log.lattice().sides() {
        return Err(Error::InvalidLattice("configuration and event log differ".into()));
    }
    let n = log.lattice().len();
    let mut changes = 0u64;
    let mut next_time = 0usize;
    let horizon = times.last().copied().unwrap_or(0.0);
    let mut w = 0u64;
    let mut marks: Vec<(f64, u32, u8, Mark)> = Vec::new();
    while next_time < times.len() && w as f64 * log.window_len <= horizon {
        marks.clear();
        for x in 0..n {
            for e in log.voter_events(x, w) {
                marks.push((e.time, x as u32, 0, Mark::Voter(e.target)));
            }
            for e in log.star_events(x, w) {
                marks.push((e.time, x as u32, 1, Mark::Star(e)));
            }
        }
        marks.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        for &(time, x, _, mark) in &marks {
            while next_time < times.len() && times[next_time] < time {
                at(next_time, cfg);
                next_time += 1;
            }
            if next_time == times.len() {
                break;
            }
            let x = x as Site;
            match mark {
                Mark::Voter(y) => {
                    let v = cfg.get(y);
                    if cfg.get(x) != v {
                        cfg.set(x, v);
                        changes += 1;
                    }
                }
                Mark::Star(e) => {
                    if log.star_flips(cfg, x, &e) {
                        cfg.flip(x);
                        changes += 1;
                    }
                }
            }
        }
        w += 1;
    }
    while next_time < times.len() {
        at(next_time, cfg);
        next_time += 1;
    }
    Ok(changes)
}

/// Backward coalescing walks through the voter arrows of an event log.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkDualResult {
    /// `B^{x,t}_t` per queried site.
    pub terminals: Vec<Site>,
    /// No star event at a site while the walk sat there.
    pub star_clean: Vec<bool>,
    pub jumps: Vec<u32>,
    /// Cluster label per queried site: equal labels iff the walks coalesced.
    pub partition: Vec<usize>,
}

/// Traces each `(x, t)` down to time 0 through voter arrows.
pub fn walk_dual(log: &EventLog, sites: &[Site], t: f64) -> WalkDualResult {
    let mut terminals = Vec::with_capacity(sites.len());
    let mut star_clean = Vec::with_capacity(sites.len());
    let mut jumps = Vec::with_capacity(sites.len());
    for &x in sites {
        let (b, clean, j) = trace(log, x, t);
        terminals.push(b);
        star_clean.push(clean);
        jumps.push(j);
    }
    let mut labels: Vec<Site> = terminals.clone();
    labels.sort_unstable();
    labels.dedup();
    let partition = terminals
        .iter()
        .map(|b| labels.binary_search(b).expect("present"))
        .collect();
    WalkDualResult {
        terminals,
        star_clean,
        jumps,
        partition,
    }
}

fn trace(log: &EventLog, mut y: Site, t: f64) -> (Site, bool, u32) {
    let mut s = t;
    let mut clean = true;
    let mut jumps = 0;
    if t <= 0.0 {
        return (y, true, 0);
    }
    let mut w = log.window_of(s);
    loop {
        let voters = log.voter_events(y, w);
        let last = voters.iter().rev().find(|e| e.time < s).copied();
        let floor = last.map_or(w as f64 * log.window_len, |e| e.time);
        if clean && log.star_events(y, w).iter().any(|e| e.time < s && e.time > floor) {
            clean = false;
        }
        match last {
            Some(e) => {
                s = e.time;
                y = e.target;
                jumps += 1;
            }
            None => {
                if w == 0 {
                    return (y, clean, jumps);
                }
                w -= 1;
                s = (w + 1) as f64 * log.window_len;
            }
        }
    }
}

/// Absorption frequencies by a horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hitting {
    pub beta0: Estimate,
    pub beta1: Estimate,
    pub beta_inf: Estimate,
}

/// Hitting frequencies at `horizon` and `2 horizon`, plus whether any of the
/// three moved by more than 2 standard errors between them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HittingReport {
    pub at_horizon: Hitting,
    pub at_double: Hitting,
    pub horizon_sensitive: bool,
}

pub fn hitting_probabilities(
    model: &CompiledModel,
    init: &InitialState,
    horizon: f64,
    reps: u64,
    seed: u64,
) -> Result<HittingReport> {
    let counts = (0..reps)
        .into_par_iter()
        .map(|r| -> Result<[u64; 6]> {
            let mut rng = stream(seed, &[TAG_FORWARD, 1, r]);
            let mut cfg = init.realize(model.lattice(), &mut rng)?;
            let mut out = [0u64; 6];
            evolve_gillespie(model, &mut cfg, &[horizon, 2.0 * horizon], &mut rng, |i, c| {
                let k = if c.is_all_zeros() {
                    0
                } else if c.is_all_ones() {
                    1
                } else {
                    2
                };
                out[3 * i + k] = 1;
            })?;
            Ok(out)
        })
        .try_reduce(
            || [0u64; 6],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                Ok(a)
            },
        )?;
    let h = |o: usize| Hitting {
        beta0: Estimate::proportion(counts[o], reps),
        beta1: Estimate::proportion(counts[o + 1], reps),
        beta_inf: Estimate::proportion(counts[o + 2], reps),
    };
    let (a, b) = (h(0), h(3));
    let moved = |x: Estimate, y: Estimate| {
        let se = (x.stderr.powi(2) + y.stderr.powi(2)).sqrt();
        (x.mean - y.mean).abs() > 2.0 * se && se > 0.0
    };
    Ok(HittingReport {
        at_horizon: a,
        at_double: b,
        horizon_sensitive: moved(a.beta0, b.beta0) || moved(a.beta1, b.beta1) || moved(a.beta_inf, b.beta_inf),
    })
}

/// Mean of an observable of `xi_t` at each grid time over independent replicates.
pub fn replicate_observable<F>(
    model: &CompiledModel,
    init: &InitialState,
    times: &[f64],
    reps: u64,
    seed: u64,
    observe: F,
) -> Result<Vec<Estimate>>
where
    F: Fn(&Configuration) -> f64 + Sync,
{
    let per_rep = (0..reps)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let mut rng = stream(seed, &[TAG_FORWARD, 2, r]);
            let mut cfg = init.realize(model.lattice(), &mut rng)?;
            let mut out = vec![0.0; times.len()];
            evolve_gillespie(model, &mut cfg, times, &mut rng, |i, c| out[i] = observe(c))?;
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    // summed in replicate order so results do not depend on the thread count
    let mut sums = vec![(0.0, 0.0); times.len()];
    for row in &per_rep {
        for (acc, &v) in sums.iter_mut().zip(row) {
            acc.0 += v;
            acc.1 += v * v;
        }
    }
    Ok(sums.into_iter().map(|(s, s2)| moments(s, s2, reps)).collect())
}

/// Estimate from a sum and sum of squares over `n` samples.
pub fn moments(s: f64, s2: f64, n: u64) -> Estimate {
    if n == 0 {
        return Estimate::new(0.0, 0.0);
    }
    let nf = n as f64;
    let mean = s / nf;
    if n < 2 {
        return Estimate::new(mean, 0.0);
    }
    let var = ((s2 - nf * mean * mean) / (nf - 1.0)).max(0.0);
    Estimate::new(mean, (var / nf).sqrt())
}
