//! Oriented site percolation on `{(x, n) : x_1 + ... + x_d + n even}` with edges
//! `(x, n) -> (x ± e_i, n + 1)`.
//!
//! Site states are hashed uniforms compared against the open density, so
//! fields at different densities are coupled monotonically.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{hashed_uniform, mix, TAG_PERCOLATION};
use crate::stats::Estimate;

const COORD_BITS: u32 = 21;
const COORD_BIAS: i64 = 1 << (COORD_BITS - 1);

/// Lazily evaluated iid field, periodic in space.
#[derive(Debug, Clone, PartialEq)]
pub struct PercField {
    widths: Vec<usize>,
    n_max: usize,
    density: f64,
    seed: u64,
}

/// Propagation mode: all `2d` edges, or only `±e_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Full,
    Slab(usize),
}

impl PercField {
    pub fn new(widths: Vec<usize>, n_max: usize, density: f64, seed: u64) -> Result<Self> {
        if widths.is_empty() || widths.len() > 3 {
            return Err(Error::InvalidLattice("percolation needs 1 to 3 spatial axes".into()));
        }
        if widths.iter().any(|&w| w < 2 || w % 2 == 1) {
            return Err(Error::InvalidLattice(format!("widths {widths:?} must be even")));
        }
        if !(0.0..=1.0).contains(&density) {
            return Err(Error::InvalidParameter(format!("open density {density}")));
        }
        if n_max as i64 >= COORD_BIAS {
            return Err(Error::InvalidParameter(format!("n_max = {n_max}")));
        }
        Ok(Self {
            widths,
            n_max,
            density,
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.widths.len()
    }

    pub fn density(&self) -> f64 {
        self.density
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// Same uniforms at another density.
    pub fn with_density(&self, density: f64) -> Result<Self> {
        Self::new(self.widths.clone(), self.n_max, density, self.seed)
    }

    fn site(&self, x: &[i64]) -> u64 {
        x.iter()
            .zip(&self.widths)
            .fold(0u64, |acc, (&c, &w)| acc * w as u64 + c.rem_euclid(w as i64) as u64)
    }

    pub fn uniform(&self, x: &[i64], n: usize) -> f64 {
        hashed_uniform(self.seed, &[TAG_PERCOLATION, self.site(x), n as u64])
    }

    /// `theta(x, n)`; `None` off the parity sublattice.
    pub fn open(&self, x: &[i64], n: usize) -> Option<bool> {
        let parity = (x.iter().sum::<i64>() + n as i64).rem_euclid(2);
        (parity == 0).then(|| self.uniform(x, n) < self.density)
    }

    /// Fraction of open sites among all parity-correct sites with `n < n_max`.
    pub fn open_fraction(&self) -> (u64, u64) {
        let d = self.dim();
        let total: usize = self.widths.iter().product();
        let (mut open, mut all) = (0u64, 0u64);
        let mut x = vec![0i64; d];
        for n in 0..self.n_max {
            for idx in 0..total {
                let mut r = idx;
                for a in (0..d).rev() {
                    x[a] = (r % self.widths[a]) as i64;
                    r /= self.widths[a];
                }
                if let Some(o) = self.open(&x, n) {
                    all += 1;
                    open += o as u64;
                }
            }
        }
        (open, all)
    }
}

fn encode(x: &[i64]) -> u64 {
    x.iter()
        .enumerate()
        .fold(0u64, |acc, (i, &c)| acc | (((c + COORD_BIAS) as u64) << (COORD_BITS * i as u32)))
}

fn decode(key: u64, d: usize, out: &mut [i64]) {
    let mask = (1u64 << COORD_BITS) - 1;
    for (i, o) in out.iter_mut().enumerate().take(d) {
        *o = ((key >> (COORD_BITS * i as u32)) & mask) as i64 - COORD_BIAS;
    }
}

/// Per-generation reachable sets in unwrapped coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Front {
    pub mode: Mode,
    dim: usize,
    generations: Vec<Vec<u64>>,
}

impl Front {
    pub fn len(&self) -> usize {
        self.generations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generations.is_empty()
    }

    pub fn size(&self, m: usize) -> usize {
        self.generations[m].len()
    }

    /// Sites of generation `m`, sorted.
    pub fn sites(&self, m: usize) -> Vec<Vec<i64>> {
        self.generations[m]
            .iter()
            .map(|&k| {
                let mut x = vec![0; self.dim];
                decode(k, self.dim, &mut x);
                x
            })
            .collect()
    }

    pub fn alive_at(&self, m: usize) -> bool {
        self.generations.get(m).is_some_and(|g| !g.is_empty())
    }

    pub fn contains(&self, m: usize, x: &[i64]) -> bool {
        self.generations[m].binary_search(&encode(x)).is_ok()
    }
}

/// Breadth-first propagation from `w0` at generation 0 for `m` generations.
/// A path may end at a closed site; every earlier site must be open.
pub fn front_evolve(field: &PercField, w0: &[Vec<i64>], m: usize, mode: Mode) -> Result<Front> {
    let d = field.dim();
    if let Mode::Slab(k) = mode {
        if k >= d {
            return Err(Error::InvalidParameter(format!("slab axis {k} in dimension {d}")));
        }
    }
    for x in w0 {
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        if field.open(x, 0).is_none() {
            return Err(Error::InvalidParameter(format!("{x:?} is off the parity sublattice")));
        }
    }
    let mut current: Vec<u64> = w0.iter().map(|x| encode(x)).collect();
    current.sort_unstable();
    current.dedup();
    let mut generations = vec![current.clone()];
    let mut x = vec![0i64; d];
    let axes: Vec<usize> = match mode {
        Mode::Full => (0..d).collect(),
        Mode::Slab(k) => vec![k],
    };
    for n in 0..m {
        let mut next = Vec::with_capacity(current.len() * 2);
        for &key in &current {
            decode(key, d, &mut x);
            if field.open(&x, n) != Some(true) {
                continue;
            }
            for &a in &axes {
                for s in [-1, 1] {
                    x[a] += s;
                    next.push(encode(&x));
                    x[a] -= s;
                }
            }
        }
        next.sort_unstable();
        next.dedup();
        generations.push(next.clone());
        current = next;
    }
    Ok(Front {
        mode,
        dim: d,
        generations,
    })
}

fn field_seed(seed: u64, rep: u64) -> u64 {
    mix(seed, &[TAG_PERCOLATION, rep])
}

/// Frequency of `W^0_{n_max} != ∅` over independent fields.
pub fn survival_estimate(widths: &[usize], n_max: usize, density: f64, reps: u64, seed: u64, mode: Mode) -> Result<Estimate> {
    let origin = vec![vec![0i64; widths.len()]];
    let alive = (0..reps)
        .into_par_iter()
        .map(|r| -> Result<u64> {
            let f = PercField::new(widths.to_vec(), n_max, density, field_seed(seed, r))?;
            Ok(front_evolve(&f, &origin, n_max, mode)?.alive_at(n_max) as u64)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(Estimate::proportion(alive, reps))
}

/// Survival estimates across densities on shared uniforms.
pub fn survival_sweep(
    widths: &[usize],
    n_max: usize,
    densities: &[f64],
    reps: u64,
    seed: u64,
    mode: Mode,
) -> Result<Vec<Estimate>> {
    densities
        .iter()
        .map(|&p| survival_estimate(widths, n_max, p, reps, seed, mode))
        .collect()
}

/// `P(W^0_{2n} != ∅ and W^0_{2n} ∩ A = ∅)` with `A` given in torus coordinates.
pub fn coverage_probe(
    widths: &[usize],
    density: f64,
    a: &[Vec<i64>],
    n: usize,
    reps: u64,
    seed: u64,
) -> Result<Estimate> {
    let d = widths.len();
    let wrap = |x: &[i64]| -> Vec<i64> { x.iter().zip(widths).map(|(&c, &w)| c.rem_euclid(w as i64)).collect() };
    let mut targets: Vec<Vec<i64>> = a.iter().map(|x| wrap(x)).collect();
    for x in &targets {
        if x.len() != d || x.iter().sum::<i64>().rem_euclid(2) != 0 {
            return Err(Error::InvalidParameter(format!("{x:?} is not on the even sublattice")));
        }
    }
    targets.sort();
    let origin = vec![vec![0i64; d]];
    let hits = (0..reps)
        .into_par_iter()
        .map(|r| -> Result<u64> {
            let f = PercField::new(widths.to_vec(), 2 * n, density, field_seed(seed, r))?;
            let front = front_evolve(&f, &origin, 2 * n, Mode::Full)?;
            let last = front.sites(2 * n);
            let missed = !last.is_empty() && last.iter().all(|x| targets.binary_search(&wrap(x)).is_err());
            Ok(missed as u64)
        })
        .try_reduce(|| 0, |x, y| Ok(x + y))?;
    Ok(Estimate::proportion(hits, reps))
}

/// `Δ = (2K + 1)^{d + 1}`.
pub fn block_dependence(k: u32, d: u32) -> f64 {
    ((2 * k + 1) as f64).powi(d as i32 + 1)
}

/// Open density `(1 - γ'^{1/Δ})^2` of the iid field dominated by a
/// `K`-dependent field with closed probability at most `γ'`.
pub fn dependent_to_iid_density(gamma_prime: f64, k: u32, d: u32) -> Result<f64> {
    if !(gamma_prime > 0.0 && gamma_prime < 1.0) || k == 0 {
        return Err(Error::InvalidParameter(format!("gamma' = {gamma_prime}, K = {k}")));
    }
    let delta = block_dependence(k, d);
    Ok((1.0 - gamma_prime.powf(1.0 / delta)).powi(2))
}

/// Largest `γ'` whose iid density reaches `target`: `(1 - sqrt(target))^Δ`.
pub fn iid_density_to_dependent(target: f64, k: u32, d: u32) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) || k == 0 {
        return Err(Error::InvalidParameter(format!("density {target}, K = {k}")));
    }
    Ok((1.0 - target.sqrt()).powf(block_dependence(k, d)))
}

/// `1 - 6^{-4}`.
pub fn reference_density() -> f64 {
    1.0 - 6f64.powi(-4)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn o(d: usize) -> Vec<Vec<i64>> {
        vec![vec![0; d]]
    }

    #[test]
    fn closed_and_open_fields() {
        let closed = PercField::new(vec![16], 10, 0.0, 1).unwrap();
        let f = front_evolve(&closed, &o(1), 5, Mode::Full).unwrap();
        assert_eq!(f.size(1), 0);
        let open = PercField::new(vec![64, 64], 10, 1.0, 1).unwrap();
        let f = front_evolve(&open, &o(2), 6, Mode::Full).unwrap();
        // reachable diamond: |x|_1 <= n with parity of n
        for n in 0..=6usize {
            let expected = (-6i64..=6)
                .flat_map(|a| (-6i64..=6).map(move |b| (a, b)))
                .filter(|&(a, b)| a.abs() + b.abs() <= n as i64 && (a + b + n as i64) % 2 == 0)
                .count();
            assert_eq!(f.size(n), expected);
        }
        assert!(PercField::new(vec![15], 10, 0.5, 1).is_err());
    }

    #[test]
    fn empty_start_stays_empty() {
        let f = PercField::new(vec![16], 10, 0.9, 1).unwrap();
        let fr = front_evolve(&f, &[], 8, Mode::Full).unwrap();
        assert!((0..=8).all(|m| fr.size(m) == 0));
        assert!(front_evolve(&f, &[vec![1]], 3, Mode::Full).is_err());
    }

    #[test]
    fn open_fraction_is_binomial() {
        let f = PercField::new(vec![64, 64], 40, 0.7, 3).unwrap();
        let (k, n) = f.open_fraction();
        let e = Estimate::proportion(k, n);
        assert!((e.mean - 0.7).abs() <= 3.0 * e.stderr);
    }

    #[test]
    fn slab_front_inside_full_front() {
        let f = PercField::new(vec![64, 64], 30, 0.75, 5).unwrap();
        let full = front_evolve(&f, &o(2), 30, Mode::Full).unwrap();
        let slab = front_evolve(&f, &o(2), 30, Mode::Slab(0)).unwrap();
        for m in 0..=30 {
            for x in slab.sites(m) {
                assert!(full.contains(m, &x));
                assert_eq!(x[1], 0);
            }
        }
    }

    #[test]
    fn open_slab_front_is_an_interval() {
        let f = PercField::new(vec![8], 12, 1.0, 0).unwrap();
        let fr = front_evolve(&f, &o(1), 4, Mode::Slab(0)).unwrap();
        assert_eq!(fr.size(4), 5);
    }

    #[test]
    fn density_formula() {
        assert_eq!(block_dependence(1, 2), 27.0);
        let r = dependent_to_iid_density(1e-30, 1, 2).unwrap();
        let expected = (1.0 - 10f64.powf(-30.0 / 27.0)).powi(2);
        assert!((r - expected).abs() < 1e-15);
        assert!((r - 0.851142105966964).abs() < 1e-12);
        assert!(dependent_to_iid_density(1e-300, 1, 2).unwrap() > dependent_to_iid_density(1e-30, 1, 2).unwrap());
        assert!((reference_density() - 0.9992283950617284).abs() < 1e-16);
        let g = iid_density_to_dependent(reference_density(), 1, 2).unwrap();
        assert!((dependent_to_iid_density(g, 1, 2).unwrap() - reference_density()).abs() < 1e-12);
        for scale in [0.5, 0.9] {
            assert!(dependent_to_iid_density(g * scale, 1, 2).unwrap() > reference_density());
        }
        assert!(dependent_to_iid_density((g * 1.5).min(0.99), 1, 2).unwrap() < reference_density());
        assert!(dependent_to_iid_density(0.0, 1, 2).is_err());
    }

    #[test]
    fn subcritical_decay_and_monotone_sweep() {
        let short = survival_estimate(&[256], 10, 0.3, 2000, 4, Mode::Slab(0)).unwrap();
        let long = survival_estimate(&[256], 40, 0.3, 2000, 4, Mode::Slab(0)).unwrap();
        assert!(long.mean < short.mean);
        assert!(long.mean < 0.01);
        let sweep = survival_sweep(&[256], 60, &[0.6, 0.7, 0.8, 0.9], 1000, 6, Mode::Slab(0)).unwrap();
        assert!(sweep.windows(2).all(|w| w[1].mean >= w[0].mean));
    }

    #[test]
    fn coverage_extremes() {
        let widths = [32, 32];
        let none = coverage_probe(&widths, 0.8, &[], 5, 500, 7).unwrap();
        let surv = survival_estimate(&widths, 10, 0.8, 500, 7, Mode::Full).unwrap();
        assert_eq!(none.mean, surv.mean);
        let all: Vec<Vec<i64>> = (0..32)
            .flat_map(|a| (0..32).map(move |b| vec![a, b]))
            .filter(|x| (x[0] + x[1]) % 2 == 0)
            .collect();
        assert_eq!(coverage_probe(&widths, 0.8, &all, 5, 500, 7).unwrap().mean, 0.0);
        assert!(coverage_probe(&widths, 0.8, &[vec![1, 0]], 5, 10, 7).is_err());
    }

    proptest! {
        #[test]
        fn fronts_are_additive_and_parity_correct(seed in 0u64..500, a in -5i64..5, b in -5i64..5) {
            let f = PercField::new(vec![32, 32], 12, 0.65, seed).unwrap();
            let p = vec![2 * a, 0];
            let q = vec![b, b];
            let fa = front_evolve(&f, std::slice::from_ref(&p), 12, Mode::Full).unwrap();
            let fb = front_evolve(&f, std::slice::from_ref(&q), 12, Mode::Full).unwrap();
            let fu = front_evolve(&f, &[p, q], 12, Mode::Full).unwrap();
            for m in 0..=12 {
                let mut union: Vec<Vec<i64>> = fa.sites(m).into_iter().chain(fb.sites(m)).collect();
                union.sort();
                union.dedup();
                let mut got = fu.sites(m);
                got.sort();
                prop_assert_eq!(&got, &union);
                for x in got {
                    prop_assert_eq!((x[0] + x[1] + m as i64).rem_euclid(2), 0);
                }
            }
        }

        #[test]
        fn fronts_are_monotone_in_density(seed in 0u64..500, lo in 0.3f64..0.7, gap in 0.0f64..0.3) {
            let f = PercField::new(vec![32], 20, lo, seed).unwrap();
            let g = f.with_density(lo + gap).unwrap();
            let a = front_evolve(&f, &o(1), 20, Mode::Full).unwrap();
            let b = front_evolve(&g, &o(1), 20, Mode::Full).unwrap();
            for m in 0..=20 {
                for x in a.sites(m) {
                    prop_assert!(b.contains(m, &x));
                }
            }
        }
    }
}
