//! Annihilating dual chain: at rate `k0` per particle, a particle at `x` is
//! removed and `x + A` is added by symmetric difference, `A ~ q0`.

use std::sync::Arc;

use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;

use crate::cancellative::CancellativeSpec;
use crate::error::{Error, Result};
use crate::lattice::{Offset, Site, SiteSet, TorusLattice};
use crate::rng::{stream, TAG_DUAL};
use crate::stats::Estimate;

/// Per-trajectory event cap.
pub const EVENT_BUDGET: u64 = 100_000_000;

const ABSENT: u32 = u32::MAX;

/// Exponential waiting time with the given rate.
#[inline]
pub fn exp_wait<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    let e: f64 = Exp1.sample(rng);
    e / rate
}

/// Occupied sites with O(1) membership, toggle and uniform choice.
#[derive(Debug, Clone)]
pub struct DualState {
    members: Vec<u32>,
    pos: Vec<u32>,
}

impl DualState {
    pub fn empty(sites: usize) -> Self {
        Self {
            members: Vec::new(),
            pos: vec![ABSENT; sites],
        }
    }

    pub fn from_set(sites: usize, set: &SiteSet) -> Self {
        let mut s = Self::empty(sites);
        for x in set.iter() {
            s.toggle(x);
        }
        s
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn is_odd(&self) -> bool {
        self.members.len() % 2 == 1
    }

    pub fn contains(&self, x: Site) -> bool {
        self.pos[x] != ABSENT
    }

    pub fn toggle(&mut self, x: Site) {
        let p = self.pos[x];
        if p == ABSENT {
            self.pos[x] = self.members.len() as u32;
            self.members.push(x as u32);
        } else {
            let last = *self.members.last().expect("nonempty");
            self.members.swap_remove(p as usize);
            if last as usize != x {
                self.pos[last as usize] = p;
            }
            self.pos[x] = ABSENT;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Site> + '_ {
        self.members.iter().map(|&x| x as Site)
    }

    pub fn to_site_set(&self) -> SiteSet {
        self.iter().collect()
    }

    fn member(&self, i: usize) -> Site {
        self.members[i] as Site
    }
}

/// The dual chain of a cancellative spec compiled onto a torus.
#[derive(Debug, Clone)]
pub struct DualChain {
    lattice: Arc<TorusLattice>,
    spec: CancellativeSpec,
    /// Per supported set: flat `sites x |A|` table of `x + A`.
    targets: Vec<Vec<u32>>,
    sizes: Vec<usize>,
    alias: WeightedAliasIndex<f64>,
}

impl DualChain {
    pub fn new(spec: &CancellativeSpec, lattice: Arc<TorusLattice>) -> Result<Self> {
        let mut targets = Vec::new();
        let mut sizes = Vec::new();
        for (a, _) in spec.entries() {
            targets.push(lattice.offset_table(a)?);
            sizes.push(a.len());
        }
        let weights: Vec<f64> = spec.entries().iter().map(|e| e.1).collect();
        let alias = WeightedAliasIndex::new(weights)
            .map_err(|e| Error::InvalidParameter(format!("dual kernel: {e}")))?;
        Ok(Self {
            lattice,
            spec: spec.clone(),
            targets,
            sizes,
            alias,
        })
    }

    pub fn lattice(&self) -> &Arc<TorusLattice> {
        &self.lattice
    }

    pub fn spec(&self) -> &CancellativeSpec {
        &self.spec
    }

    pub fn k0(&self) -> f64 {
        self.spec.k0()
    }

    pub fn state(&self, set: &SiteSet) -> DualState {
        DualState::from_set(self.lattice.len(), set)
    }

    /// Replaces the particle at `x` by `x + A` for the `k`-th supported set.
    pub fn apply(&self, state: &mut DualState, x: Site, k: usize) {
        state.toggle(x);
        let n = self.sizes[k];
        for &y in &self.targets[k][x * n..(x + 1) * n] {
            state.toggle(y as Site);
        }
    }

    /// One transition in place; returns the holding time.
    pub fn step<R: Rng + ?Sized>(&self, state: &mut DualState, rng: &mut R) -> Result<f64> {
        if state.is_empty() {
            return Err(Error::EmptyState);
        }
        let wait = exp_wait(rng, self.k0() * state.len() as f64);
        let x = state.member(rng.random_range(0..state.len()));
        let k = self.alias.sample(rng);
        self.apply(state, x, k);
        Ok(wait)
    }

    /// `(waiting time, next state)` from a `SiteSet`.
    pub fn dual_step<R: Rng + ?Sized>(&self, set: &SiteSet, rng: &mut R) -> Result<(f64, SiteSet)> {
        let mut s = self.state(set);
        let w = self.step(&mut s, rng)?;
        Ok((w, s.to_site_set()))
    }

    /// Runs through the increasing `times`, calling `at(i, state)` at each.
    /// Returns the number of events.
    pub fn run_grid<R: Rng + ?Sized>(
        &self,
        state: &mut DualState,
        times: &[f64],
        rng: &mut R,
        mut at: impl FnMut(usize, &DualState),
    ) -> Result<u64> {
        let mut t = 0.0;
        let mut events = 0u64;
        let mut next = if state.is_empty() {
            f64::INFINITY
        } else {
            exp_wait(rng, self.k0() * state.len() as f64)
        };
        for (i, &target) in times.iter().enumerate() {
            while t + next <= target {
                t += next;
                let x = state.member(rng.random_range(0..state.len()));
                let k = self.alias.sample(rng);
                self.apply(state, x, k);
                events += 1;
                if events > EVENT_BUDGET {
                    return Err(Error::BudgetExceeded(EVENT_BUDGET));
                }
                next = if state.is_empty() {
                    f64::INFINITY
                } else {
                    exp_wait(rng, self.k0() * state.len() as f64)
                };
            }
            next -= target - t;
            t = target;
            at(i, state);
        }
        Ok(events)
    }

    /// Full trajectory to time `t`, with snapshots at `snapshots`.
    pub fn trajectory<R: Rng + ?Sized>(
        &self,
        initial: &SiteSet,
        t: f64,
        snapshots: &[f64],
        rng: &mut R,
    ) -> Result<DualTrajectory> {
        let mut state = self.state(initial);
        let mut now = 0.0;
        let mut sizes = Vec::new();
        let mut snaps = Vec::new();
        let mut pending = snapshots.iter().copied().filter(|&s| s <= t).peekable();
        while !state.is_empty() {
            let wait = exp_wait(rng, self.k0() * state.len() as f64);
            while let Some(&s) = pending.peek() {
                if s < now + wait {
                    snaps.push((s, state.to_site_set()));
                    pending.next();
                } else {
                    break;
                }
            }
            if now + wait > t {
                break;
            }
            now += wait;
            let x = state.member(rng.random_range(0..state.len()));
            let k = self.alias.sample(rng);
            self.apply(&mut state, x, k);
            sizes.push((now, state.len()));
            if sizes.len() as u64 > EVENT_BUDGET {
                return Err(Error::BudgetExceeded(EVENT_BUDGET));
            }
        }
        for s in pending {
            snaps.push((s, state.to_site_set()));
        }
        Ok(DualTrajectory {
            initial: initial.clone(),
            events: sizes,
            snapshots: snaps,
        })
    }
}

/// Event times and sizes of one dual path.
#[derive(Debug, Clone)]
pub struct DualTrajectory {
    pub initial: SiteSet,
    pub events: Vec<(f64, usize)>,
    pub snapshots: Vec<(f64, SiteSet)>,
}

impl DualTrajectory {
    /// Whether `|zeta_t| mod 2` never changed.
    pub fn parity_constant(&self) -> bool {
        let p = self.initial.len() % 2;
        self.events.iter().all(|&(_, n)| n % 2 == p)
    }

    pub fn absorbed(&self) -> bool {
        self.events.last().map_or(self.initial.is_empty(), |&(_, n)| n == 0)
    }
}

/// `P(zeta_t != ∅)` on a grid.
#[derive(Debug, Clone)]
pub struct SurvivalCurve {
    pub times: Vec<f64>,
    pub alive: Vec<u64>,
    pub reps: u64,
}

impl SurvivalCurve {
    pub fn estimates(&self) -> Vec<Estimate> {
        self.alive.iter().map(|&k| Estimate::proportion(k, self.reps)).collect()
    }

    pub fn last(&self) -> Estimate {
        Estimate::proportion(*self.alive.last().unwrap_or(&0), self.reps)
    }

    /// Non-increasing up to `z` standard errors between consecutive points.
    pub fn is_nonincreasing(&self, z: f64) -> bool {
        let e = self.estimates();
        e.windows(2).all(|w| {
            let se = (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt();
            w[1].mean <= w[0].mean + z * se
        })
    }
}

fn replicate_counts<F>(reps: u64, width: usize, f: F) -> Result<Vec<u64>>
where
    F: Fn(u64) -> Result<Vec<bool>> + Sync,
{
    (0..reps)
        .into_par_iter()
        .map(|r| {
            f(r).map(|hits| hits.into_iter().map(u64::from).collect::<Vec<u64>>())
        })
        .try_reduce(
            || vec![0u64; width],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                Ok(a)
            },
        )
}

/// Survival frequencies on the increasing grid `times`.
pub fn dual_survival(chain: &DualChain, zeta0: &SiteSet, times: &[f64], reps: u64, seed: u64) -> Result<SurvivalCurve> {
    let alive = replicate_counts(reps, times.len(), |r| {
        let mut rng = stream(seed, &[TAG_DUAL, 1, r]);
        let mut state = chain.state(zeta0);
        let mut hits = vec![false; times.len()];
        chain.run_grid(&mut state, times, &mut rng, |i, s| hits[i] = !s.is_empty())?;
        Ok(hits)
    })?;
    Ok(SurvivalCurve {
        times: times.to_vec(),
        alive,
        reps,
    })
}

/// `P(0 < |zeta_t| <= K)` on a grid, with the torus size as the ceiling on growth.
#[derive(Debug, Clone)]
pub struct GrowthProfile {
    pub times: Vec<f64>,
    pub estimates: Vec<Estimate>,
    pub ceiling: usize,
}

impl GrowthProfile {
    pub fn decreasing(&self, z: f64) -> bool {
        self.estimates.windows(2).all(|w| {
            let se = (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt();
            w[1].mean <= w[0].mean + z * se
        })
    }
}

pub fn dual_growth_profile(
    chain: &DualChain,
    b: &SiteSet,
    k: usize,
    times: &[f64],
    reps: u64,
    seed: u64,
) -> Result<GrowthProfile> {
    if b.is_empty() || k == 0 {
        return Err(Error::InvalidParameter("growth profile needs B nonempty and K >= 1".into()));
    }
    let counts = replicate_counts(reps, times.len(), |r| {
        let mut rng = stream(seed, &[TAG_DUAL, 2, r]);
        let mut state = chain.state(b);
        let mut hits = vec![false; times.len()];
        chain.run_grid(&mut state, times, &mut rng, |i, s| hits[i] = !s.is_empty() && s.len() <= k)?;
        Ok(hits)
    })?;
    Ok(GrowthProfile {
        times: times.to_vec(),
        estimates: counts.iter().map(|&c| Estimate::proportion(c, reps)).collect(),
        ceiling: chain.lattice().len(),
    })
}

/// Odd-path-count construction: every site carries a rate-`k0` clock whether
/// occupied or not; at a mark `(x, A)` the path parity at `x` is sent to
/// `x + A`. `zeta_t` is the set of sites reached by an odd number of paths.
pub fn graphical_dual<R: Rng + ?Sized>(chain: &DualChain, b: &SiteSet, t: f64, rng: &mut R) -> Result<SiteSet> {
    let n = chain.lattice().len();
    let mut odd = vec![false; n];
    for x in b.iter() {
        odd[x] = true;
    }
    let total = chain.k0() * n as f64;
    let mut now = 0.0;
    let mut events = 0u64;
    loop {
        now += exp_wait(rng, total);
        if now > t {
            break;
        }
        let x = rng.random_range(0..n);
        let k = chain.alias.sample(rng);
        events += 1;
        if events > EVENT_BUDGET {
            return Err(Error::BudgetExceeded(EVENT_BUDGET));
        }
        if odd[x] {
            odd[x] = false;
            let m = chain.sizes[k];
            for &y in &chain.targets[k][x * m..(x + 1) * m] {
                odd[y as usize] ^= true;
            }
        }
    }
    Ok((0..n).filter(|&x| odd[x]).collect())
}

/// Pair of neighbouring sites `{x, x + z}`.
pub fn pair(lattice: &TorusLattice, x: Site, z: &Offset) -> SiteSet {
    [x, lattice.shift(x, z)].into_iter().collect()
}
