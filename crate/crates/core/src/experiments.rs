//! Verification probes tying the forward process to its dual: exact and
//! Monte Carlo duality, `ν_{1/2}` odd-set statistics, the pair-set and
//! odd-goal probes, and complete-convergence diagnostics.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::cancellative::{extract_cancellative, is_parity_preserving, CancellativeSpec};
use crate::dual::{dual_survival, DualChain};
use crate::error::{Error, Result};
use crate::forward::{evolve_gillespie, hitting_probabilities, replicate_observable, CompiledModel, HittingReport, InitialState};
use crate::lattice::{pair_set, Configuration, Offset, Site, SiteSet, TorusLattice};
use crate::models::ModelSpec;
use crate::rng::{stream, TAG_PROBE};
use crate::stats::{z_score, Estimate};

/// Largest torus handled by [`ExactSystem`].
pub const MAX_EXACT_SITES: usize = 12;
/// Bound on the Poisson tail dropped by the uniformized series over a grid.
pub const SERIES_TOL: f64 = 1e-12;
/// Grid intervals covered by [`SERIES_TOL`].
const MAX_GRID: f64 = 100.0;
/// Largest `Λ dt` per uniformization step.
pub const MAX_STEP_MASS: f64 = 20.0;

/// Sparse generator over bitmask states.
#[derive(Debug, Clone)]
struct Generator {
    start: Vec<usize>,
    target: Vec<u32>,
    rate: Vec<f64>,
    lambda: f64,
}

impl Generator {
    fn build(states: usize, mut row: impl FnMut(u32, &mut Vec<(u32, f64)>)) -> Self {
        let mut start = Vec::with_capacity(states + 1);
        let mut target = Vec::new();
        let mut rate = Vec::new();
        let mut buf = Vec::new();
        let mut lambda: f64 = 0.0;
        for s in 0..states as u32 {
            start.push(target.len());
            buf.clear();
            row(s, &mut buf);
            let mut exit = 0.0;
            for &(t, r) in &buf {
                if t != s && r > 0.0 {
                    target.push(t);
                    rate.push(r);
                    exit += r;
                }
            }
            lambda = lambda.max(exit);
        }
        start.push(target.len());
        Self {
            start,
            target,
            rate,
            lambda,
        }
    }

    fn states(&self) -> usize {
        self.start.len() - 1
    }

    fn row(&self, s: usize) -> impl Iterator<Item = (u32, f64)> + '_ {
        (self.start[s]..self.start[s + 1]).map(move |i| (self.target[i], self.rate[i]))
    }

    /// `(P f)(s) = f(s) + Σ_j (r_j / Λ)(f(t_j) - f(s))` with `P = I + Q/Λ`.
    fn uniformized(&self, f: &[f64], out: &mut [f64]) {
        for (s, o) in out.iter_mut().enumerate() {
            let fs = f[s];
            let mut acc = fs;
            for (t, r) in self.row(s) {
                acc += r / self.lambda * (f[t as usize] - fs);
            }
            *o = acc;
        }
    }

    /// `e^{tQ} f` for bounded `f`.
    ///
    /// `t` is cut into `m = ceil(Λt / 20)` steps of mass `λ = Λt/m`. Each step
    /// sums `Σ_{k ≤ N} e^{-λ} λ^k / k! P^k f` with `N` the first index where the
    /// Poisson tail `1 - Σ_{k ≤ N} e^{-λ} λ^k / k!` drops below `1e-14 / m`;
    /// since `P` is stochastic the error is below `1e-14 · max|f|`, and a grid
    /// of up to 100 chained intervals stays below `1e-12 · max|f|`.
    fn semigroup(&self, f: &[f64], t: f64) -> Vec<f64> {
        if t <= 0.0 || self.lambda == 0.0 {
            return f.to_vec();
        }
        let mass = self.lambda * t;
        let steps = (mass / MAX_STEP_MASS).ceil().max(1.0);
        let lam = mass / steps;
        let tol = SERIES_TOL / MAX_GRID / steps;
        let mut v = f.to_vec();
        let mut term = vec![0.0; f.len()];
        let mut next = vec![0.0; f.len()];
        for _ in 0..steps as usize {
            let mut w = (-lam).exp();
            let mut cum = w;
            term.copy_from_slice(&v);
            let mut acc: Vec<f64> = v.iter().map(|x| w * x).collect();
            let mut k = 0u32;
            while 1.0 - cum > tol {
                k += 1;
                self.uniformized(&term, &mut next);
                std::mem::swap(&mut term, &mut next);
                w *= lam / k as f64;
                cum += w;
                for (a, x) in acc.iter_mut().zip(&term) {
                    *a += w * x;
                }
            }
            v = acc;
        }
        v
    }
}

/// Full forward and dual generators of a cancellative model on a tiny torus.
#[derive(Debug, Clone)]
pub struct ExactSystem {
    lattice: Arc<TorusLattice>,
    spec: CancellativeSpec,
    forward: Generator,
    dual: Generator,
}

fn mask_config(lattice: &Arc<TorusLattice>, mask: u32) -> Configuration {
    Configuration::from_fn(lattice.clone(), |x| mask >> x & 1 == 1)
}

impl ExactSystem {
    pub fn new(model: &ModelSpec, lattice: Arc<TorusLattice>) -> Result<Self> {
        let n = lattice.len();
        if n > MAX_EXACT_SITES {
            return Err(Error::StateSpaceTooLarge(n));
        }
        let table = model.rate_table()?;
        let spec = extract_cancellative(&table)?;
        let compiled = CompiledModel::from_table(table, lattice.clone())?;
        let states = 1usize << n;
        let forward = Generator::build(states, |s, row| {
            let cfg = mask_config(&lattice, s);
            for x in 0..n {
                row.push((s ^ (1 << x), compiled.rate(&cfg, x)));
            }
        });
        let targets: Vec<Vec<u32>> = spec
            .entries()
            .iter()
            .map(|(a, _)| lattice.offset_table(a))
            .collect::<Result<_>>()?;
        let dual = Generator::build(states, |s, row| {
            for x in (0..n).filter(|&x| s >> x & 1 == 1) {
                for ((a, q), tab) in spec.entries().iter().zip(&targets) {
                    let mut t = s ^ (1 << x);
                    for &y in &tab[x * a.len()..(x + 1) * a.len()] {
                        t ^= 1 << y;
                    }
                    row.push((t, spec.k0() * q));
                }
            }
        });
        Ok(Self {
            lattice,
            spec,
            forward,
            dual,
        })
    }

    pub fn lattice(&self) -> &Arc<TorusLattice> {
        &self.lattice
    }

    pub fn spec(&self) -> &CancellativeSpec {
        &self.spec
    }

    pub fn states(&self) -> usize {
        self.forward.states()
    }

    /// Uniformization constants of the forward and dual generators.
    pub fn lambdas(&self) -> (f64, f64) {
        (self.forward.lambda, self.dual.lambda)
    }

    /// Off-diagonal rates are positive (rows sum to zero by construction) and,
    /// for a parity-preserving spec, dual moves keep `|ζ| mod 2`.
    pub fn generators_valid(&self) -> bool {
        let nonneg = self.forward.rate.iter().chain(&self.dual.rate).all(|&r| r > 0.0 && r.is_finite());
        let parity = !is_parity_preserving(&self.spec)
            || (0..self.dual.states())
                .all(|s| self.dual.row(s).all(|(t, _)| (s as u32).count_ones() % 2 == t.count_ones() % 2));
        nonneg && parity
    }

    /// `P_{ξ}(|ξ_t ∩ ζ0| odd)` for every initial `ξ`, one vector per time.
    pub fn forward_odd(&self, zeta0: u32, times: &[f64]) -> Result<Vec<Vec<f64>>> {
        let f: Vec<f64> = (0..self.states() as u32).map(|s| ((s & zeta0).count_ones() % 2) as f64).collect();
        chain_times(&self.forward, f, times)
    }

    /// `P_{ζ}(|ξ0 ∩ ζ_t| odd)` for every initial `ζ`, one vector per time.
    pub fn dual_odd(&self, xi0: u32, times: &[f64]) -> Result<Vec<Vec<f64>>> {
        let f: Vec<f64> = (0..self.states() as u32).map(|s| ((s & xi0).count_ones() % 2) as f64).collect();
        chain_times(&self.dual, f, times)
    }
}

fn chain_times(g: &Generator, f: Vec<f64>, times: &[f64]) -> Result<Vec<Vec<f64>>> {
    if times.len() as f64 > MAX_GRID || times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|&t| t < 0.0) {
        return Err(Error::InvalidParameter(
            "at most 100 grid times, nonnegative and increasing".into(),
        ));
    }
    let mut out = Vec::with_capacity(times.len());
    let mut now = 0.0;
    let mut v = f;
    for &t in times {
        v = g.semigroup(&v, t - now);
        now = t;
        out.push(v.clone());
    }
    Ok(out)
}

/// `count` uniformly random `(ξ0, ζ0)` bitmask pairs on `sites` sites.
pub fn random_pairs(sites: usize, count: usize, seed: u64) -> Vec<(u32, u32)> {
    let mut rng = stream(seed, &[TAG_PROBE, 0]);
    let full = (1u32 << sites) - 1;
    (0..count)
        .map(|_| (rng.random::<u32>() & full, rng.random::<u32>() & full))
        .collect()
}

/// Largest `|P(|ξ_t ∩ ζ0| odd) - P(|ξ0 ∩ ζ_t| odd)|` over pairs and the
/// increasing `times`, both sides from uniformized semigroups.
pub fn exact_duality_check(
    model: &ModelSpec,
    lattice: Arc<TorusLattice>,
    times: &[f64],
    pairs: &[(u32, u32)],
) -> Result<f64> {
    let sys = ExactSystem::new(model, lattice)?;
    exact_violation(&sys, times, pairs)
}

pub fn exact_violation(sys: &ExactSystem, times: &[f64], pairs: &[(u32, u32)]) -> Result<f64> {
    let limit = sys.states() as u32;
    if pairs.iter().any(|&(a, b)| a >= limit || b >= limit) {
        return Err(Error::InvalidParameter("pair outside the state space".into()));
    }
    let mut worst: f64 = 0.0;
    for &(xi0, zeta0) in pairs {
        let lhs = sys.forward_odd(zeta0, times)?;
        let rhs = sys.dual_odd(xi0, times)?;
        for (l, r) in lhs.iter().zip(&rhs) {
            worst = worst.max((l[xi0 as usize] - r[zeta0 as usize]).abs());
        }
    }
    Ok(worst)
}

fn parallel_counts<F>(reps: u64, width: usize, f: F) -> Result<Vec<u64>>
where
    F: Fn(u64) -> Result<Vec<bool>> + Sync,
{
    (0..reps)
        .into_par_iter()
        .map(|r| f(r).map(|v| v.into_iter().map(u64::from).collect::<Vec<_>>()))
        .try_reduce(
            || vec![0; width],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                Ok(a)
            },
        )
}

fn dual_chain(model: &ModelSpec, lattice: &Arc<TorusLattice>) -> Result<DualChain> {
    DualChain::new(&extract_cancellative(&model.rate_table()?)?, lattice.clone())
}

/// Independent Monte Carlo estimates of both sides of the duality equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McDuality {
    pub lhs: Estimate,
    pub rhs: Estimate,
    pub z: f64,
    /// `P(|ξ_v ∩ ζ_u| odd)` with independent processes and `v + u = t`.
    pub split: Option<Estimate>,
    /// Largest pairwise `|z|` among the three estimates.
    pub max_z: f64,
}

pub fn mc_duality_check(
    model: &ModelSpec,
    xi0: &Configuration,
    zeta0: &SiteSet,
    t: f64,
    split: Option<(f64, f64)>,
    reps: u64,
    seed: u64,
) -> Result<McDuality> {
    let lattice = xi0.lattice().clone();
    let compiled = CompiledModel::new(model, lattice.clone())?;
    let chain = dual_chain(model, &lattice)?;
    if let Some((v, u)) = split {
        if v < 0.0 || u < 0.0 || ((v + u) - t).abs() > 1e-12 * t.max(1.0) {
            return Err(Error::InvalidParameter(format!("split ({v}, {u}) does not sum to {t}")));
        }
    }
    let forward_to = |r: u64, tag: u64, horizon: f64| -> Result<Configuration> {
        let mut rng = stream(seed, &[TAG_PROBE, 1, tag, r]);
        let mut cfg = xi0.clone();
        evolve_gillespie(&compiled, &mut cfg, &[horizon], &mut rng, |_, _| {})?;
        Ok(cfg)
    };
    let dual_to = |r: u64, tag: u64, horizon: f64| -> Result<SiteSet> {
        let mut rng = stream(seed, &[TAG_PROBE, 2, tag, r]);
        let mut state = chain.state(zeta0);
        chain.run_grid(&mut state, &[horizon], &mut rng, |_, _| {})?;
        Ok(state.to_site_set())
    };
    let counts = parallel_counts(reps, 3, |r| {
        let lhs = forward_to(r, 0, t)?.count_in(zeta0) % 2 == 1;
        let rhs = xi0.count_in(&dual_to(r, 0, t)?) % 2 == 1;
        let mid = match split {
            Some((v, u)) => forward_to(r, 1, v)?.count_in(&dual_to(r, 1, u)?) % 2 == 1,
            None => false,
        };
        Ok(vec![lhs, rhs, mid])
    })?;
    let lhs = Estimate::proportion(counts[0], reps);
    let rhs = Estimate::proportion(counts[1], reps);
    let z = z_score(lhs, rhs);
    let mid = split.map(|_| Estimate::proportion(counts[2], reps));
    let max_z = match mid {
        Some(m) => z.abs().max(z_score(lhs, m).abs()).max(z_score(rhs, m).abs()),
        None => z.abs(),
    };
    Ok(McDuality {
        lhs,
        rhs,
        z,
        split: mid,
        max_z,
    })
}

/// Forward odd-set frequency from fresh `μ_{1/2}` draws against half the
/// dual survival frequency, on a common time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NuHalfTable {
    pub times: Vec<f64>,
    pub forward: Vec<Estimate>,
    pub dual_half: Vec<Estimate>,
}

impl NuHalfTable {
    pub fn z_scores(&self) -> Vec<f64> {
        self.forward.iter().zip(&self.dual_half).map(|(&a, &b)| z_score(a, b)).collect()
    }

    pub fn columns_agree(&self, z: f64) -> bool {
        self.z_scores().iter().all(|s| s.abs() <= z)
    }

    /// Each column non-increasing up to `z` joint standard errors.
    pub fn nonincreasing(&self, z: f64) -> bool {
        let ok = |col: &[Estimate]| {
            col.windows(2).all(|w| {
                let se = (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt();
                w[1].mean <= w[0].mean + z * se
            })
        };
        ok(&self.forward) && ok(&self.dual_half)
    }
}

pub fn nu_half_probe(
    model: &ModelSpec,
    lattice: Arc<TorusLattice>,
    a: &SiteSet,
    times: &[f64],
    reps: u64,
    seed: u64,
) -> Result<NuHalfTable> {
    let compiled = CompiledModel::new(model, lattice.clone())?;
    let chain = dual_chain(model, &lattice)?;
    let forward = replicate_observable(&compiled, &InitialState::Half, times, reps, seed, |c| {
        (c.count_in(a) % 2) as f64
    })?;
    let dual_half = dual_survival(&chain, a, times, reps, seed ^ 0x9E37_79B9)?
        .estimates()
        .into_iter()
        .map(|e| e.scale(0.5))
        .collect();
    Ok(NuHalfTable {
        times: times.to_vec(),
        forward,
        dual_half,
    })
}

/// `K` isolated 1s on the grid of sites whose coordinates are multiples of
/// `spacing`, each with `ξ(y + x0) = 0`; returns the configuration and `A`.
pub fn oddgoal_start(
    lattice: &Arc<TorusLattice>,
    x0: &Offset,
    k: usize,
    spacing: usize,
) -> Result<(Configuration, SiteSet)> {
    lattice.check_fits(x0)?;
    if x0.is_zero() {
        return Err(Error::ZeroOffset);
    }
    if spacing < 2 || x0.0.iter().any(|&c| c.unsigned_abs() as usize >= spacing) {
        return Err(Error::InvalidParameter(format!("spacing {spacing} too small for {x0:?}")));
    }
    let grid: Vec<Site> = (0..lattice.len())
        .filter(|&x| {
            lattice
                .coords(x)
                .iter()
                .zip(lattice.sides())
                .all(|(&c, &s)| (c as usize).is_multiple_of(spacing) && c as usize + spacing <= s)
        })
        .collect();
    if grid.len() < k.max(1) {
        return Err(Error::InvalidParameter(format!("only {} grid sites for K = {k}", grid.len())));
    }
    if k == 0 {
        return Ok((Configuration::zeros(lattice.clone()), grid[..1].iter().copied().collect()));
    }
    let a: SiteSet = grid[..k].iter().copied().collect();
    let cfg = Configuration::from_sites(lattice.clone(), a.iter());
    debug_assert_eq!(pair_set(&cfg, &a, x0)?.len(), k);
    Ok((cfg, a))
}

/// `|P(|ξ_t ∩ A| odd) - 1/2|` for each `K`, with the standard error of the
/// underlying frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct OddgoalTable {
    pub ks: Vec<usize>,
    pub t: f64,
    pub odd: Vec<Estimate>,
}

impl OddgoalTable {
    pub fn deviations(&self) -> Vec<Estimate> {
        self.odd.iter().map(|e| Estimate::new((e.mean - 0.5).abs(), e.stderr)).collect()
    }

    /// Each deviation at most the previous one plus `z` joint standard errors.
    pub fn decreasing(&self, z: f64) -> bool {
        self.deviations().windows(2).all(|w| {
            let se = (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt();
            w[1].mean <= w[0].mean + z * se
        })
    }
}

pub fn oddgoal_probe(
    model: &ModelSpec,
    lattice: Arc<TorusLattice>,
    x0: &Offset,
    ks: &[usize],
    t: f64,
    reps: u64,
    seed: u64,
) -> Result<OddgoalTable> {
    let compiled = CompiledModel::new(model, lattice.clone())?;
    let mut odd = Vec::with_capacity(ks.len());
    for (i, &k) in ks.iter().enumerate() {
        let (start, a) = oddgoal_start(&lattice, x0, k, 8)?;
        let c = parallel_counts(reps, 1, |r| {
            let mut rng = stream(seed, &[TAG_PROBE, 3, i as u64, r]);
            let mut cfg = start.clone();
            evolve_gillespie(&compiled, &mut cfg, &[t], &mut rng, |_, _| {})?;
            Ok(vec![cfg.count_in(&a) % 2 == 1])
        })?;
        odd.push(Estimate::proportion(c[0], reps));
    }
    Ok(OddgoalTable {
        ks: ks.to_vec(),
        t,
        odd,
    })
}

/// Sites in a fixed scattered order, so that prefixes give nested sets.
pub fn scattered_sites(lattice: &TorusLattice, count: usize) -> SiteSet {
    let n = lattice.len();
    let mut keyed: Vec<(u64, Site)> = (0..n).map(|x| (crate::rng::mix(0x5EED, &[x as u64]), x)).collect();
    keyed.sort_unstable();
    keyed.into_iter().take(count.min(n)).map(|(_, x)| x).collect()
}

/// `P(|ξ_t| > 0 and A(x0, ξ_t) = ∅)` indexed `[size][time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Flip2Table {
    pub sizes: Vec<usize>,
    pub times: Vec<f64>,
    pub values: Vec<Vec<Estimate>>,
}

/// Starts from the half-space block `{x : x_1 < side/2}`. Sets are nested
/// prefixes of [`scattered_sites`], so values are pathwise monotone in `|A|`.
pub fn flip2_probe(
    model: &ModelSpec,
    lattice: Arc<TorusLattice>,
    x0: &Offset,
    sizes: &[usize],
    times: &[f64],
    reps: u64,
    seed: u64,
) -> Result<Flip2Table> {
    lattice.check_fits(x0)?;
    let compiled = CompiledModel::new(model, lattice.clone())?;
    let half = lattice.sides()[0] as i64 / 2;
    let start = Configuration::from_fn(lattice.clone(), |x| lattice.coords(x)[0] < half);
    let sets: Vec<SiteSet> = sizes.iter().map(|&k| scattered_sites(&lattice, k)).collect();
    let width = sizes.len() * times.len();
    let counts = parallel_counts(reps, width, |r| {
        let mut rng = stream(seed, &[TAG_PROBE, 4, r]);
        let mut cfg = start.clone();
        let mut hits = vec![false; width];
        let mut err = None;
        evolve_gillespie(&compiled, &mut cfg, times, &mut rng, |j, c| {
            if c.is_all_zeros() {
                return;
            }
            for (i, a) in sets.iter().enumerate() {
                match pair_set(c, a, x0) {
                    Ok(p) => hits[i * times.len() + j] = p.is_empty(),
                    Err(e) => err = Some(e),
                }
            }
        })?;
        match err {
            Some(e) => Err(e),
            None => Ok(hits),
        }
    })?;
    let values = (0..sizes.len())
        .map(|i| {
            (0..times.len())
                .map(|j| Estimate::proportion(counts[i * times.len() + j], reps))
                .collect()
        })
        .collect();
    Ok(Flip2Table {
        sizes: sizes.to_vec(),
        times: times.to_vec(),
        values,
    })
}

/// Direct odd-set frequency at `T` against the mixture
/// `β1 1{|A| odd} + β∞ ν_{1/2}(odd on A)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub init: usize,
    pub set: usize,
    pub direct: Estimate,
    pub predicted: Estimate,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub horizon: f64,
    pub rows: Vec<ConvergenceRow>,
    pub hitting: Vec<HittingReport>,
}

impl ConvergenceReport {
    pub fn agrees(&self, z: f64) -> bool {
        self.rows.iter().all(|r| r.z.abs() <= z)
    }
}

pub fn complete_convergence_probe(
    model: &ModelSpec,
    lattice: Arc<TorusLattice>,
    inits: &[InitialState],
    sets: &[SiteSet],
    horizon: f64,
    reps: u64,
    seed: u64,
) -> Result<ConvergenceReport> {
    let compiled = CompiledModel::new(model, lattice.clone())?;
    let chain = dual_chain(model, &lattice)?;
    let nu: Vec<Estimate> = sets
        .iter()
        .enumerate()
        .map(|(j, a)| {
            dual_survival(&chain, a, &[horizon], reps, seed ^ (j as u64 + 1)).map(|c| c.last().scale(0.5))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut hitting = Vec::new();
    for (i, init) in inits.iter().enumerate() {
        let h = hitting_probabilities(&compiled, init, horizon, reps, seed.wrapping_add(i as u64))?;
        for (j, a) in sets.iter().enumerate() {
            let direct = replicate_observable(&compiled, init, &[horizon], reps, seed ^ ((i as u64) << 32 | j as u64), |c| {
                (c.count_in(a) % 2) as f64
            })?[0];
            let b = h.at_horizon;
            let odd = a.is_odd() as u8 as f64;
            let mean = b.beta1.mean * odd + b.beta_inf.mean * nu[j].mean;
            let var = (odd * b.beta1.stderr).powi(2)
                + (nu[j].mean * b.beta_inf.stderr).powi(2)
                + (b.beta_inf.mean * nu[j].stderr).powi(2);
            let predicted = Estimate::new(mean, var.sqrt());
            rows.push(ConvergenceRow {
                init: i,
                set: j,
                direct,
                predicted,
                z: z_score(direct, predicted),
            });
        }
        hitting.push(h);
    }
    Ok(ConvergenceReport { horizon, rows, hitting })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{nn_offsets, Kernel};
    use crate::models::ModelSpec;
    use proptest::prelude::*;

    fn torus(d: usize, s: usize) -> Arc<TorusLattice> {
        Arc::new(TorusLattice::cube(d, s).unwrap())
    }

    fn models() -> Vec<ModelSpec> {
        let k = Kernel::nearest_neighbor(2);
        let n = nn_offsets(2);
        vec![
            ModelSpec::voter(k.clone()),
            ModelSpec::lotka_volterra(0.9, k.clone()).unwrap(),
            ModelSpec::affine_voter(0.9, k, &n).unwrap(),
            ModelSpec::geometric_voter(0.9, &n).unwrap(),
        ]
    }

    #[test]
    fn semigroup_matches_two_state_chain() {
        // 0 -> 1 at rate a, 1 -> 0 at rate b
        let (a, b) = (0.7, 1.9);
        let g = Generator::build(2, |s, row| row.push((s ^ 1, if s == 0 { a } else { b })));
        for t in [0.0, 0.05, 1.0, 13.0, 40.0] {
            let v = g.semigroup(&[0.0, 1.0], t);
            let expected = a / (a + b) * (1.0 - (-(a + b) * t).exp());
            assert!((v[0] - expected).abs() < 1e-12, "t = {t}: {} vs {expected}", v[0]);
        }
    }

    #[test]
    fn exact_generators_are_valid() {
        for m in models() {
            let sys = ExactSystem::new(&m, torus(2, 3)).unwrap();
            assert_eq!(sys.states(), 512);
            assert!(sys.generators_valid(), "{}", m.name());
        }
    }

    #[test]
    fn exact_rejects_large_tori() {
        let m = ModelSpec::voter(Kernel::nearest_neighbor(2));
        assert_eq!(ExactSystem::new(&m, torus(2, 4)).unwrap_err(), Error::StateSpaceTooLarge(16));
    }

    #[test]
    fn exact_trivial_cases() {
        let m = &models()[1];
        let sys = ExactSystem::new(m, torus(2, 3)).unwrap();
        let times = [0.1, 1.0, 10.0];
        for v in sys.forward_odd(0, &times).unwrap() {
            assert!(v.iter().all(|&x| x == 0.0));
        }
        let zeta0 = 0b000_010_011u32;
        let ones = 511usize;
        for v in sys.forward_odd(zeta0, &times).unwrap() {
            assert!((v[ones] - 1.0).abs() < 1e-12);
        }
        for v in sys.dual_odd(ones as u32, &times).unwrap() {
            assert!((v[zeta0 as usize] - 1.0).abs() < 1e-12, "{}", v[zeta0 as usize]);
        }
    }

    #[test]
    fn exact_duality_holds() {
        let pairs = random_pairs(9, 20, 3);
        for m in models() {
            let v = exact_duality_check(&m, torus(2, 3), &[0.1, 1.0, 10.0], &pairs).unwrap();
            assert!(v <= 1e-8, "{}: {v}", m.name());
        }
    }

    #[test]
    fn exact_duality_detects_a_wrong_dual() {
        // a voter forward system paired with the LV dual must disagree
        let lat = torus(2, 3);
        let mut sys = ExactSystem::new(&models()[0], lat.clone()).unwrap();
        let other = ExactSystem::new(&models()[1], lat).unwrap();
        sys.dual = other.dual;
        let v = exact_violation(&sys, &[1.0], &random_pairs(9, 20, 4)).unwrap();
        assert!(v > 1e-3);
    }

    #[test]
    fn mc_duality_at_zero_is_deterministic() {
        let lat = torus(2, 8);
        let xi0 = Configuration::from_sites(lat.clone(), [0, 1, 9]);
        let zeta0: SiteSet = [0, 1].into_iter().collect();
        let r = mc_duality_check(&models()[1], &xi0, &zeta0, 0.0, Some((0.0, 0.0)), 50, 1).unwrap();
        assert_eq!((r.lhs.mean, r.rhs.mean, r.split.unwrap().mean), (0.0, 0.0, 0.0));
    }

    #[test]
    fn mc_duality_voter_and_split() {
        let lat = torus(2, 12);
        let mut rng = stream(9, &[1]);
        let xi0 = Configuration::bernoulli(lat.clone(), 0.5, &mut rng);
        let zeta0: SiteSet = [0, 1].into_iter().collect();
        let r = mc_duality_check(&models()[0], &xi0, &zeta0, 2.0, None, 3000, 2).unwrap();
        assert!(r.z.abs() <= 3.0, "{r:?}");
        let lv = ModelSpec::lotka_volterra(0.95, Kernel::nearest_neighbor(2)).unwrap();
        let r = mc_duality_check(&lv, &xi0, &zeta0, 3.0, Some((1.0, 2.0)), 3000, 3).unwrap();
        assert!(r.max_z <= 3.0, "{r:?}");
        assert!(mc_duality_check(&lv, &xi0, &zeta0, 3.0, Some((1.0, 1.0)), 10, 3).is_err());
    }

    #[test]
    fn nu_half_columns() {
        let lat = torus(1, 64);
        let m = ModelSpec::voter(Kernel::nearest_neighbor(1));
        let times = [0.5, 2.0, 8.0];
        let empty = nu_half_probe(&m, lat.clone(), &SiteSet::new(), &times, 200, 1).unwrap();
        assert!(empty.forward.iter().chain(&empty.dual_half).all(|e| e.mean == 0.0));
        let single: SiteSet = [5].into_iter().collect();
        let t = nu_half_probe(&m, lat.clone(), &single, &times, 2000, 2).unwrap();
        assert!(t.dual_half.iter().all(|e| e.mean == 0.5));
        assert!(t.columns_agree(3.0), "{:?}", t.z_scores());
        let pair: SiteSet = [5, 6].into_iter().collect();
        let t = nu_half_probe(&m, lat, &pair, &times, 3000, 3).unwrap();
        assert!(t.columns_agree(3.0), "{:?}", t.z_scores());
        assert!(t.nonincreasing(3.0));
        assert!(t.forward[2].mean < t.forward[0].mean);
    }

    #[test]
    fn oddgoal_start_has_k_pairs() {
        let lat = torus(2, 64);
        let e1 = Offset::unit(2, 0, 1);
        for k in [1, 4, 16, 64] {
            let (cfg, a) = oddgoal_start(&lat, &e1, k, 8).unwrap();
            assert_eq!(pair_set(&cfg, &a, &e1).unwrap().len(), k);
            assert_eq!(cfg.count_ones(), k);
        }
        assert!(oddgoal_start(&lat, &e1, 65, 8).is_err());
    }

    #[test]
    fn oddgoal_zero_k_gives_half() {
        let lat = torus(2, 16);
        let m = ModelSpec::lotka_volterra(0.95, Kernel::nearest_neighbor(2)).unwrap();
        let t = oddgoal_probe(&m, lat, &Offset::unit(2, 0, 1), &[0], 1.0, 100, 1).unwrap();
        assert_eq!(t.deviations()[0].mean, 0.5);
    }

    #[test]
    fn flip2_is_monotone_in_set_size() {
        let lat = torus(2, 16);
        let m = ModelSpec::lotka_volterra(0.95, Kernel::nearest_neighbor(2)).unwrap();
        let t = flip2_probe(&m, lat, &Offset::unit(2, 0, 1), &[1, 8, 64, 256], &[1.0, 4.0], 400, 1).unwrap();
        for j in 0..2 {
            for i in 1..4 {
                assert!(t.values[i][j].mean <= t.values[i - 1][j].mean);
            }
        }
        assert!(t.values[3][1].mean < 0.05);
    }

    #[test]
    fn convergence_trivial_rows() {
        let lat = torus(2, 8);
        let m = ModelSpec::lotka_volterra(0.97, Kernel::nearest_neighbor(2)).unwrap();
        let sets: Vec<SiteSet> = vec![[0, 1].into_iter().collect(), [0].into_iter().collect()];
        let r = complete_convergence_probe(&m, lat, &[InitialState::Zeros, InitialState::Ones], &sets, 2.0, 200, 1).unwrap();
        assert_eq!(r.rows[0].direct.mean, 0.0);
        assert_eq!(r.rows[0].predicted.mean, 0.0);
        assert_eq!(r.rows[3].direct.mean, 1.0);
        assert!((r.rows[3].predicted.mean - 1.0).abs() < 1e-12);
        assert!(r.agrees(3.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn duality_holds_for_every_initial_pair(seed in 0u64..1000, which in 0usize..4) {
            let m = &models()[which];
            let pairs = random_pairs(9, 4, seed);
            let v = exact_duality_check(m, torus(2, 3), &[0.5, 3.0], &pairs).unwrap();
            prop_assert!(v <= 1e-8);
        }
    }
}
