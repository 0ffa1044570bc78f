//! Reaction function of a voter model perturbation and the coalescing random
//! walk functionals behind it.
//!
//! Window expectations under the voter equilibrium `P_u` are computed from the
//! partition of the window produced by coalescing walks: each cluster carries
//! an independent Bernoulli(`u`) value. Averaging over the `2^m` cluster values
//! exactly, rather than drawing them, turns each walk sample into a polynomial
//! in `u`.

use std::sync::Arc;

use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use rayon::prelude::*;

use crate::dual::exp_wait;
use crate::error::{Error, Result};
use crate::lattice::{Kernel, Offset, TorusLattice};
use crate::models::PerturbationView;
use crate::rng::{stream, TAG_WALKS};
use crate::stats::{Estimate, Running};

/// Largest cluster count for which cluster values are enumerated exactly.
const MAX_ENUMERATED_CLUSTERS: usize = 16;

/// Default torus side for walk ensembles.
pub fn default_walk_side(dim: usize) -> usize {
    match dim {
        1 => 1 << 16,
        2 => 512,
        _ => 64,
    }
}

/// `u(1 - u)(1 - 2u)`.
pub fn cubic(u: f64) -> f64 {
    u * (1.0 - u) * (1.0 - 2.0 * u)
}

/// Rate-1 `p`-walks on a torus that merge when they meet.
#[derive(Debug, Clone)]
pub struct CoalescingWalks {
    lattice: Arc<TorusLattice>,
    offsets: Vec<Offset>,
    targets: Vec<u32>,
    alias: WeightedAliasIndex<f64>,
}

/// One coalescing-walk sample.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkRun {
    /// Per checkpoint: cluster label of each start, labels numbered by first
    /// appearance.
    pub labels: Vec<Vec<u8>>,
    pub meeting_times: Vec<f64>,
    /// Meetings of walks whose unwrapped positions differ.
    pub wrap_meetings: u32,
}

impl WalkRun {
    pub fn clusters(&self, checkpoint: usize) -> usize {
        self.labels[checkpoint].iter().map(|&l| l as usize + 1).max().unwrap_or(0)
    }
}

impl CoalescingWalks {
    pub fn new(kernel: &Kernel, side: usize) -> Result<Self> {
        let lattice = Arc::new(TorusLattice::cube(kernel.dim(), side)?);
        let offsets: Vec<Offset> = kernel.support().cloned().collect();
        let targets = lattice.offset_table(&offsets)?;
        let alias = WeightedAliasIndex::new(kernel.entries().iter().map(|e| e.1).collect())
            .map_err(|e| Error::InvalidParameter(format!("kernel: {e}")))?;
        Ok(Self {
            lattice,
            offsets,
            targets,
            alias,
        })
    }

    pub fn lattice(&self) -> &Arc<TorusLattice> {
        &self.lattice
    }

    /// Runs walks from `starts` (offsets from a base site), recording the
    /// partition at each increasing checkpoint time.
    pub fn run<R: Rng + ?Sized>(&self, starts: &[Offset], checkpoints: &[f64], rng: &mut R) -> Result<WalkRun> {
        if starts.is_empty() {
            return Err(Error::Empty);
        }
        if starts.len() > u8::MAX as usize {
            return Err(Error::InvalidParameter("too many walks".into()));
        }
        for z in starts {
            self.lattice.check_fits(z)?;
        }
        let d = self.lattice.dim();
        let k = self.offsets.len();
        // cluster state: site, unwrapped position
        let mut sites: Vec<u32> = starts.iter().map(|z| self.lattice.shift(0, z) as u32).collect();
        let mut pos: Vec<i64> = starts.iter().flat_map(|z| z.0.iter().map(|&c| c as i64)).collect();
        let mut owner: Vec<usize> = (0..starts.len()).collect();
        // merge walks that start on the same site
        let mut i = 0;
        while i < sites.len() {
            if let Some(j) = (0..i).find(|&j| sites[j] == sites[i]) {
                Self::merge(&mut sites, &mut pos, &mut owner, d, j, i);
            } else {
                i += 1;
            }
        }
        let mut t = 0.0;
        let mut labels = Vec::with_capacity(checkpoints.len());
        let mut meeting_times = Vec::new();
        let mut wrap = 0u32;
        let mut prev_clusters = sites.len();
        for &cp in checkpoints {
            loop {
                if sites.len() == 1 {
                    break;
                }
                let dt = exp_wait(rng, sites.len() as f64);
                if t + dt > cp {
                    break;
                }
                t += dt;
                let c = rng.random_range(0..sites.len());
                let j = self.alias.sample(rng);
                sites[c] = self.targets[sites[c] as usize * k + j];
                for (a, &dz) in pos[c * d..(c + 1) * d].iter_mut().zip(&self.offsets[j].0) {
                    *a += dz as i64;
                }
                if let Some(o) = (0..sites.len()).find(|&o| o != c && sites[o] == sites[c]) {
                    if pos[o * d..(o + 1) * d] != pos[c * d..(c + 1) * d] {
                        wrap += 1;
                    }
                    meeting_times.push(t);
                    Self::merge(&mut sites, &mut pos, &mut owner, d, o, c);
                }
            }
            t = cp;
            assert!(sites.len() <= prev_clusters, "cluster count increased");
            prev_clusters = sites.len();
            labels.push(canonical(&owner));
        }
        Ok(WalkRun {
            labels,
            meeting_times,
            wrap_meetings: wrap,
        })
    }

    /// Folds cluster `gone` into `keep` and removes it.
    fn merge(sites: &mut Vec<u32>, pos: &mut Vec<i64>, owner: &mut [usize], d: usize, keep: usize, gone: usize) {
        for o in owner.iter_mut() {
            if *o == gone {
                *o = keep;
            }
        }
        let last = sites.len() - 1;
        sites.swap_remove(gone);
        for a in 0..d {
            pos[gone * d + a] = pos[last * d + a];
        }
        pos.truncate(last * d);
        if gone != last {
            for o in owner.iter_mut() {
                if *o == last {
                    *o = gone;
                }
            }
        }
    }
}

fn canonical(owner: &[usize]) -> Vec<u8> {
    let mut map: Vec<(usize, u8)> = Vec::new();
    owner
        .iter()
        .map(|&o| match map.iter().find(|(k, _)| *k == o) {
            Some(&(_, l)) => l,
            None => {
                let l = map.len() as u8;
                map.push((o, l));
                l
            }
        })
        .collect()
}

/// Law of the number of surviving clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct CoalescenceStats {
    pub initial: Vec<Offset>,
    pub t_max: f64,
    pub reps: u64,
    /// `counts[k]` = samples with `k` clusters at `t_max`.
    pub counts: Vec<u64>,
    /// Same at `t_max / 2`.
    pub half_counts: Vec<u64>,
    /// Fraction of samples with a meeting in the last tenth of the horizon.
    pub late_rate: f64,
    pub wrap_meetings: u64,
}

impl CoalescenceStats {
    pub fn prob(&self, k: usize) -> Estimate {
        Estimate::proportion(self.counts.get(k).copied().unwrap_or(0), self.reps)
    }

    /// Whether every cluster-count probability moved by less than 2 standard
    /// errors between `t_max / 2` and `t_max`.
    pub fn horizon_stable(&self) -> bool {
        self.counts.iter().zip(&self.half_counts).all(|(&a, &b)| {
            let (x, y) = (Estimate::proportion(a, self.reps), Estimate::proportion(b, self.reps));
            let se = (x.stderr.powi(2) + y.stderr.powi(2)).sqrt();
            (x.mean - y.mean).abs() <= 2.0 * se
        })
    }
}

pub fn coalescence_distribution(
    kernel: &Kernel,
    initial: &[Offset],
    t_max: f64,
    reps: u64,
    side: usize,
    seed: u64,
) -> Result<CoalescenceStats> {
    if !(t_max > 0.0) {
        return Err(Error::InvalidParameter(format!("t_max = {t_max}")));
    }
    let walks = CoalescingWalks::new(kernel, side)?;
    let runs = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, &[TAG_WALKS, 1, r]);
            walks.run(initial, &[t_max / 2.0, t_max], &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = initial.len();
    let mut counts = vec![0u64; n + 1];
    let mut half = vec![0u64; n + 1];
    let (mut late, mut wrap) = (0u64, 0u64);
    for run in &runs {
        half[run.clusters(0)] += 1;
        counts[run.clusters(1)] += 1;
        late += run.meeting_times.iter().any(|&t| t > 0.9 * t_max) as u64;
        wrap += run.wrap_meetings as u64;
    }
    Ok(CoalescenceStats {
        initial: initial.to_vec(),
        t_max,
        reps,
        counts,
        half_counts: half,
        late_rate: late as f64 / reps.max(1) as f64,
        wrap_meetings: wrap,
    })
}

/// A window configuration drawn from the voter equilibrium by cluster coins.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSample {
    pub values: Vec<bool>,
    pub clusters: usize,
    /// Set in `d <= 2`, where the walks are recurrent and the sampler is not
    /// an equilibrium sampler.
    pub non_equilibrium: bool,
    pub late_meeting: bool,
    pub wrap_meetings: u32,
}

pub fn sample_voter_equilibrium_window<R: Rng + ?Sized>(
    walks: &CoalescingWalks,
    window: &[Offset],
    u: f64,
    t_max: f64,
    rng: &mut R,
) -> Result<EquilibriumSample> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::InvalidParameter(format!("u = {u}")));
    }
    let run = walks.run(window, &[t_max], rng)?;
    let m = run.clusters(0);
    let coins: Vec<bool> = (0..m).map(|_| rng.random::<f64>() < u).collect();
    Ok(EquilibriumSample {
        values: run.labels[0].iter().map(|&l| coins[l as usize]).collect(),
        clusters: m,
        non_equilibrium: walks.lattice().dim() <= 2,
        late_meeting: run.meeting_times.iter().any(|&t| t > 0.9 * t_max),
        wrap_meetings: run.wrap_meetings,
    })
}

/// `a_k = Σ_{cluster values with k ones} integrand`, so that the sample's
/// window expectation under `P_u` is `Σ_k a_k u^k (1 - u)^{m-k}`.
fn cluster_coefficients<R: Rng + ?Sized>(table: &[f64], labels: &[u8], m: usize, rng: &mut R) -> Vec<f64> {
    let mut a = vec![0.0; m + 1];
    let bits_of = |c: u64| {
        labels
            .iter()
            .enumerate()
            .fold(0usize, |acc, (j, &l)| acc | ((((c >> l) & 1) as usize) << j))
    };
    if m <= MAX_ENUMERATED_CLUSTERS {
        for c in 0..1u64 << m {
            a[c.count_ones() as usize] += table[bits_of(c)];
        }
    } else {
        // unbiased: one uniformly chosen value pattern per weight class
        for (k, slot) in a.iter_mut().enumerate() {
            let mut idx: Vec<u32> = (0..m as u32).collect();
            for i in 0..k {
                let j = rng.random_range(i..m);
                idx.swap(i, j);
            }
            let c = idx[..k].iter().fold(0u64, |acc, &i| acc | 1 << i);
            *slot = table[bits_of(c)] * binomial(m, k);
        }
    }
    a
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn polynomial(a: &[f64], u: f64) -> f64 {
    let m = a.len() - 1;
    a.iter()
        .enumerate()
        .map(|(k, &ak)| ak * u.powi(k as i32) * (1.0 - u).powi((m - k) as i32))
        .sum()
}

/// Walk ensemble over the view's window with per-sample coefficients.
struct Ensemble {
    coefficients: Vec<Vec<f64>>,
    runs: Vec<WalkRun>,
    dim: usize,
}

fn run_ensemble(view: &PerturbationView, reps: u64, t_max: f64, side: usize, seed: u64) -> Result<Ensemble> {
    let table: Vec<f64> = (0..1u64 << view.window.len()).map(|b| view.reaction_integrand(b)).collect();
    let walks = CoalescingWalks::new(&view.kernel, side)?;
    let out = (0..reps)
        .into_par_iter()
        .map(|r| -> Result<(Vec<f64>, WalkRun)> {
            let mut rng = stream(seed, &[TAG_WALKS, 2, r]);
            let run = walks.run(&view.window, &[t_max], &mut rng)?;
            let a = cluster_coefficients(&table, &run.labels[0], run.clusters(0), &mut rng);
            Ok((a, run))
        })
        .collect::<Result<Vec<_>>>()?;
    let (coefficients, runs) = out.into_iter().unzip();
    Ok(Ensemble {
        coefficients,
        runs,
        dim: view.kernel.dim(),
    })
}

/// Estimated reaction function on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ReactionCurve {
    pub u: Vec<f64>,
    pub f: Vec<Estimate>,
    /// Closed-form cubic coefficient from the triple-cluster sum, when the
    /// model has one.
    pub closed_form: Option<Estimate>,
    pub late_rate: f64,
    pub wrap_meetings: u64,
    pub non_equilibrium: bool,
}

impl ReactionCurve {
    /// Least-squares coefficient `c` of `f(u) ≈ c u(1 - u)(1 - 2u)`.
    pub fn cubic_coefficient(&self) -> f64 {
        let (num, den) = self.u.iter().zip(&self.f).fold((0.0, 0.0), |(n, d), (&u, e)| {
            let p = cubic(u);
            (n + e.mean * p, d + p * p)
        });
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    }

    /// `|f(u) - c·cubic(u)| / |c·cubic(u)|` per grid point, `None` where the
    /// cubic vanishes.
    pub fn relative_errors(&self, c: f64) -> Vec<Option<f64>> {
        self.u
            .iter()
            .zip(&self.f)
            .map(|(&u, e)| {
                let target = c * cubic(u);
                (target.abs() > 1e-12).then(|| (e.mean - target).abs() / target.abs())
            })
            .collect()
    }

    /// Estimate at `u`, if on the grid.
    pub fn at(&self, u: f64) -> Option<Estimate> {
        self.u.iter().position(|&v| (v - u).abs() < 1e-12).map(|i| self.f[i])
    }
}

/// Per-sample triple-cluster sum `Σ_{y≠z} p(y) p(z) 1{0, y, z in distinct clusters}`
/// and the factor relating it to the cubic coefficient, for models whose
/// reaction function is a multiple of `u(1 - u)(1 - 2u)`.
fn triple_weights(view: &PerturbationView) -> Option<(Vec<(usize, usize, f64)>, f64)> {
    if view.is_pure_voter() {
        return None;
    }
    let factor = match (view.nbhd_size, view.eps1_inv_sq) {
        // geometric voter: h = (|N|/2) f0 f1
        (Some(n), 0.0) => n as f64 / 2.0,
        // Lotka-Volterra: h_i = -f_i^2
        (None, _) => 1.0,
        _ => return None,
    };
    let k = view.kernel_indices();
    let mut w = Vec::new();
    for (a, &(y, py)) in k.iter().enumerate() {
        for &(z, pz) in &k[a + 1..] {
            w.push((y, z, 2.0 * py * pz));
        }
    }
    Some((w, factor))
}

fn triple_sum(weights: &[(usize, usize, f64)], labels: &[u8]) -> f64 {
    weights
        .iter()
        .filter(|&&(y, z, _)| labels[0] != labels[y] && labels[0] != labels[z] && labels[y] != labels[z])
        .map(|e| e.2)
        .sum()
}

/// Reaction function `f(u) = <(1 - xi(0)) h_1 - xi(0) h_0>_u` on `u_grid`.
pub fn estimate_f(
    view: &PerturbationView,
    u_grid: &[f64],
    reps: u64,
    t_max: f64,
    side: usize,
    seed: u64,
) -> Result<ReactionCurve> {
    let ens = run_ensemble(view, reps, t_max, side, seed)?;
    let f = u_grid
        .iter()
        .map(|&u| {
            let mut r = Running::default();
            for a in &ens.coefficients {
                r.push(polynomial(a, u));
            }
            r.estimate()
        })
        .collect();
    let closed_form = triple_weights(view).map(|(w, factor)| {
        let mut r = Running::default();
        for run in &ens.runs {
            r.push(factor * triple_sum(&w, &run.labels[0]));
        }
        r.estimate()
    });
    Ok(ReactionCurve {
        u: u_grid.to_vec(),
        f,
        closed_form,
        late_rate: ens
            .runs
            .iter()
            .filter(|r| r.meeting_times.iter().any(|&t| t > 0.9 * t_max))
            .count() as f64
            / reps.max(1) as f64,
        wrap_meetings: ens.runs.iter().map(|r| r.wrap_meetings as u64).sum(),
        non_equilibrium: ens.dim <= 2,
    })
}

/// `f'(0)` with a closed-form comparison computed from the same ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct FPrimeZero {
    pub estimate: Estimate,
    /// AV: `E(A - 1 - 1{A > 1})` with `A` the cluster count of `N ∪ {0}`;
    /// LV/GV: the triple-cluster coefficient.
    pub closed_form: Option<Estimate>,
    pub non_equilibrium: bool,
}

pub fn fprime_zero(view: &PerturbationView, reps: u64, t_max: f64, side: usize, seed: u64) -> Result<FPrimeZero> {
    let ens = run_ensemble(view, reps, t_max, side, seed)?;
    let mut est = Running::default();
    for a in &ens.coefficients {
        let m = (a.len() - 1) as f64;
        est.push(-m * a[0] + a.get(1).copied().unwrap_or(0.0));
    }
    let closed_form = if let Some((w, factor)) = triple_weights(view) {
        let mut r = Running::default();
        for run in &ens.runs {
            r.push(factor * triple_sum(&w, &run.labels[0]));
        }
        Some(r.estimate())
    } else if view.nbhd_size.is_some() && view.eps1_inv_sq == 1.0 && !view.is_pure_voter() {
        // affine voter: the Z law is the single tuple N
        let n_idx: Vec<usize> = view.z_law[0].0.clone();
        let mut r = Running::default();
        for run in &ens.runs {
            let l = &run.labels[0];
            let mut seen: Vec<u8> = n_idx.iter().map(|&j| l[j]).chain([l[0]]).collect();
            seen.sort_unstable();
            seen.dedup();
            let a = seen.len() as f64;
            r.push(a - 1.0 - if a > 1.0 { 1.0 } else { 0.0 });
        }
        Some(r.estimate())
    } else {
        None
    };
    Ok(FPrimeZero {
        estimate: est.estimate(),
        closed_form,
        non_equilibrium: ens.dim <= 2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::nn_offsets;
    use crate::models::{perturbation_view, ModelSpec};
    use crate::stats::z_score;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn e(d: usize, i: usize, s: i32) -> Offset {
        Offset::unit(d, i, s)
    }

    #[test]
    fn single_walk_is_one_cluster() {
        let k = Kernel::nearest_neighbor(3);
        let s = coalescence_distribution(&k, &[Offset::zero(3)], 10.0, 20, 16, 1).unwrap();
        assert_eq!(s.counts[1], 20);
    }

    #[test]
    fn recurrent_pairs_coalesce_in_one_dimension() {
        let k = Kernel::nearest_neighbor(1);
        let pair = [Offset::zero(1), e(1, 0, 1)];
        let short = coalescence_distribution(&k, &pair, 10.0, 2000, 4096, 2).unwrap();
        let long = coalescence_distribution(&k, &pair, 2000.0, 2000, 4096, 2).unwrap();
        assert!(long.prob(1).mean > short.prob(1).mean);
        assert!(long.prob(1).mean > 0.95);
    }

    #[test]
    fn transient_pairs_stabilise_in_three_dimensions() {
        let k = Kernel::nearest_neighbor(3);
        let pair = [Offset::zero(3), e(3, 0, 1)];
        let s = coalescence_distribution(&k, &pair, 200.0, 4000, 64, 3).unwrap();
        // two rate-1 walks never meeting from neighbours: 1 - return probability ≈ 0.66
        assert!((s.prob(2).mean - 0.66).abs() < 0.04, "{:?}", s.prob(2));
        assert!(s.late_rate < 0.01);
        assert!(s.horizon_stable());
    }

    #[test]
    fn trivial_equilibrium_windows() {
        let walks = CoalescingWalks::new(&Kernel::nearest_neighbor(3), 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w: Vec<Offset> = std::iter::once(Offset::zero(3)).chain(nn_offsets(3)).collect();
        let zero = sample_voter_equilibrium_window(&walks, &w, 0.0, 5.0, &mut rng).unwrap();
        assert!(zero.values.iter().all(|v| !v));
        let one = sample_voter_equilibrium_window(&walks, &w, 1.0, 5.0, &mut rng).unwrap();
        assert!(one.values.iter().all(|&v| v));
        assert!(!one.non_equilibrium);
        let same = [Offset::zero(3), Offset::zero(3)];
        for _ in 0..50 {
            let s = sample_voter_equilibrium_window(&walks, &same, 0.5, 1.0, &mut rng).unwrap();
            assert_eq!(s.values[0], s.values[1]);
        }
        let flat = CoalescingWalks::new(&Kernel::nearest_neighbor(2), 32).unwrap();
        let flat_pair = [Offset::zero(2), e(2, 0, 1)];
        assert!(sample_voter_equilibrium_window(&flat, &flat_pair, 0.5, 1.0, &mut rng).unwrap().non_equilibrium);
    }

    #[test]
    fn pair_expectation_two_ways() {
        let k = Kernel::nearest_neighbor(3);
        let pair = [Offset::zero(3), e(3, 1, 1)];
        let u = 0.3;
        let walks = CoalescingWalks::new(&k, 64).unwrap();
        let n = 20_000u64;
        let mut hits = 0;
        for r in 0..n {
            let mut rng = stream(99, &[r]);
            let s = sample_voter_equilibrium_window(&walks, &pair, u, 100.0, &mut rng).unwrap();
            hits += (s.values[0] && !s.values[1]) as u64;
        }
        let direct = Estimate::proportion(hits, n);
        let stats = coalescence_distribution(&k, &pair, 100.0, n, 64, 5).unwrap();
        let via = stats.prob(2).scale(u * (1.0 - u));
        assert!(z_score(direct, via).abs() < 3.0, "{direct:?} {via:?}");
    }

    #[test]
    fn polynomial_expansion_matches_direct_average() {
        // integrand depending on two window sites in separate clusters
        let table: Vec<f64> = (0..4).map(|b| [0.0, 1.0, 2.0, 5.0][b]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = cluster_coefficients(&table, &[0, 1], 2, &mut rng);
        let u = 0.3f64;
        let direct = (1.0 - u) * (1.0 - u) * 0.0 + u * (1.0 - u) * (1.0 + 2.0) + u * u * 5.0;
        assert!((polynomial(&a, u) - direct).abs() < 1e-12);
        let merged = cluster_coefficients(&table, &[0, 0], 1, &mut rng);
        assert!((polynomial(&merged, u) - u * 5.0).abs() < 1e-12);
        assert_eq!(binomial(5, 2), 10.0);
    }

    #[test]
    fn lv_reaction_is_cubic_and_antisymmetric() {
        let view = perturbation_view(&ModelSpec::lotka_volterra(0.9, Kernel::nearest_neighbor(3)).unwrap()).unwrap();
        let grid: Vec<f64> = (1..10).map(|i| i as f64 / 10.0).collect();
        let curve = estimate_f(&view, &grid, 2000, 100.0, 32, 7).unwrap();
        let c = curve.cubic_coefficient();
        assert!(c > 0.0);
        for (i, &u) in grid.iter().enumerate() {
            let mirror = curve.at(1.0 - u).unwrap();
            let s = curve.f[i].mean + mirror.mean;
            assert!(s.abs() <= 3.0 * (curve.f[i].stderr + mirror.stderr) + 1e-12);
        }
        let half = curve.at(0.5).unwrap();
        assert!(half.mean.abs() <= 3.0 * half.stderr + 1e-12);
        let closed = curve.closed_form.unwrap();
        assert!((closed.mean - c).abs() < 1e-9);
    }

    #[test]
    fn av_fprime_matches_cluster_formula() {
        let nb = vec![e(3, 0, 1), e(3, 0, -1)];
        let m = ModelSpec::affine_voter(0.9, Kernel::nearest_neighbor(3), &nb).unwrap();
        let view = perturbation_view(&m).unwrap();
        let r = fprime_zero(&view, 2000, 50.0, 32, 8).unwrap();
        let closed = r.closed_form.unwrap();
        assert!((r.estimate.mean - closed.mean).abs() < 1e-9);
        assert!(r.estimate.ci95().0 > 0.0);
    }

    #[test]
    fn pure_voter_has_no_reaction() {
        let view = perturbation_view(&ModelSpec::lotka_volterra(1.0, Kernel::nearest_neighbor(3)).unwrap()).unwrap();
        let r = fprime_zero(&view, 50, 10.0, 16, 9).unwrap();
        assert_eq!(r.estimate.mean, 0.0);
        let c = estimate_f(&view, &[0.0, 0.3, 1.0], 50, 10.0, 16, 9).unwrap();
        assert!(c.f.iter().all(|e| e.mean == 0.0));
    }

    #[test]
    fn gv_reaction_carries_neighbourhood_factor() {
        let view = perturbation_view(&ModelSpec::geometric_voter(0.9, &nn_offsets(3)).unwrap()).unwrap();
        let curve = estimate_f(&view, &[0.2, 0.8], 1000, 50.0, 32, 10).unwrap();
        let c = curve.cubic_coefficient();
        assert!((curve.closed_form.unwrap().mean - c).abs() < 1e-9);
        let stats = coalescence_distribution(&view.kernel, &[Offset::zero(3), e(3, 0, 1), e(3, 0, -1)], 50.0, 1000, 32, 11).unwrap();
        assert!(stats.prob(3).mean > 0.2);
    }

    #[test]
    fn endpoints_vanish() {
        let view = perturbation_view(&ModelSpec::lotka_volterra(0.5, Kernel::nearest_neighbor(3)).unwrap()).unwrap();
        let c = estimate_f(&view, &[0.0, 1.0], 100, 10.0, 16, 12).unwrap();
        assert_eq!(c.f[0].mean, 0.0);
        assert_eq!(c.f[1].mean, 0.0);
    }
}
