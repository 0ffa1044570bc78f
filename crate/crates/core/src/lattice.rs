//! Finite periodic lattices, spin configurations, displacement kernels and
//! local densities.
//!
//! Sites are indexed row-major over coordinates: coordinate 0 is the most
//! significant, so on a `[4, 4]` torus the site `(1, 2)` has index `6`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};

pub type Site = usize;

/// A displacement in `Z^d`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Offset(pub Vec<i32>);

impl Offset {
    pub fn zero(dim: usize) -> Self {
        Offset(vec![0; dim])
    }

    /// `sign * e_axis`.
    pub fn unit(dim: usize, axis: usize, sign: i32) -> Self {
        let mut v = vec![0; dim];
        v[axis] = sign;
        Offset(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    pub fn neg(&self) -> Self {
        Offset(self.0.iter().map(|c| -c).collect())
    }

    pub fn add(&self, other: &Offset) -> Self {
        Offset(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn norm_sq(&self) -> i64 {
        self.0.iter().map(|&c| (c as i64) * (c as i64)).sum()
    }

    pub fn l1(&self) -> i64 {
        self.0.iter().map(|&c| (c as i64).abs()).sum()
    }
}

impl fmt::Debug for Offset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl fmt::Display for Offset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// The `2d` nearest neighbours `±e_i`.
pub fn nn_offsets(dim: usize) -> Vec<Offset> {
    let mut out = Vec::with_capacity(2 * dim);
    for axis in 0..dim {
        out.push(Offset::unit(dim, axis, 1));
        out.push(Offset::unit(dim, axis, -1));
    }
    out.sort();
    out
}

/// All nonzero offsets with sup-norm at most `radius`.
pub fn box_offsets(radius: u32, dim: usize) -> Vec<Offset> {
    let r = radius as i32;
    let side = 2 * r + 1;
    let total = (side as usize).pow(dim as u32);
    let mut out = Vec::with_capacity(total - 1);
    for mut k in 0..total {
        let mut v = vec![0; dim];
        for c in v.iter_mut().rev() {
            *c = (k % side as usize) as i32 - r;
            k /= side as usize;
        }
        let o = Offset(v);
        if !o.is_zero() {
            out.push(o);
        }
    }
    out.sort();
    out
}

/// A finite torus `Z_{s_0} x ... x Z_{s_{d-1}}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TorusLattice {
    sides: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
}

impl TorusLattice {
    /// Sides must be at least 3. Even sides are only required by the
    /// checkerboard initial state and by parity-sensitive percolation code.
    pub fn new(sides: Vec<usize>) -> Result<Self> {
        if sides.is_empty() {
            return Err(Error::InvalidLattice("dimension must be positive".into()));
        }
        if let Some(&s) = sides.iter().find(|&&s| s < 3) {
            return Err(Error::InvalidLattice(format!("side {s} is below 3")));
        }
        let mut strides = vec![1; sides.len()];
        for i in (0..sides.len() - 1).rev() {
            strides[i] = strides[i + 1] * sides[i + 1];
        }
        let len = sides.iter().product();
        if len > u32::MAX as usize {
            return Err(Error::InvalidLattice("too many sites".into()));
        }
        Ok(Self { sides, strides, len })
    }

    pub fn cube(dim: usize, side: usize) -> Result<Self> {
        Self::new(vec![side; dim])
    }

    pub fn dim(&self) -> usize {
        self.sides.len()
    }

    pub fn sides(&self) -> &[usize] {
        &self.sides
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn all_sides_even(&self) -> bool {
        self.sides.iter().all(|s| s % 2 == 0)
    }

    pub fn coords(&self, site: Site) -> Vec<i64> {
        self.sides
            .iter()
            .zip(&self.strides)
            .map(|(&s, &st)| ((site / st) % s) as i64)
            .collect()
    }

    /// Site of arbitrary integer coordinates, reduced modulo the sides.
    pub fn site_of(&self, coords: &[i64]) -> Site {
        debug_assert_eq!(coords.len(), self.dim());
        coords
            .iter()
            .zip(self.sides.iter().zip(&self.strides))
            .map(|(&c, (&s, &st))| (c.rem_euclid(s as i64) as usize) * st)
            .sum()
    }

    pub fn shift(&self, site: Site, z: &Offset) -> Site {
        let mut out = 0;
        let mut rest = site;
        for ((&s, &st), &dz) in self.sides.iter().zip(&self.strides).zip(&z.0) {
            let c = rest / st;
            rest %= st;
            let nc = (c as i64 + dz as i64).rem_euclid(s as i64) as usize;
            out += nc * st;
        }
        out
    }

    /// An offset is unambiguous on the torus when `2|z_i| < s_i` for every axis.
    pub fn fits(&self, z: &Offset) -> bool {
        z.dim() == self.dim()
            && z
                .0
                .iter()
                .zip(&self.sides)
                .all(|(&c, &s)| 2 * (c.unsigned_abs() as usize) < s)
    }

    pub fn check_fits(&self, z: &Offset) -> Result<()> {
        if z.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: z.dim(),
            });
        }
        if !self.fits(z) {
            return Err(Error::SupportTooLargeForTorus {
                offset: z.0.clone(),
                sides: self.sides.clone(),
            });
        }
        Ok(())
    }

    /// Flat `len x offsets.len()` table of `x + offsets[j]`.
    pub fn offset_table(&self, offsets: &[Offset]) -> Result<Vec<u32>> {
        for z in offsets {
            self.check_fits(z)?;
        }
        let k = offsets.len();
        let mut table = vec![0u32; self.len * k];
        for x in 0..self.len {
            for (j, z) in offsets.iter().enumerate() {
                table[x * k + j] = self.shift(x, z) as u32;
            }
        }
        Ok(table)
    }

    /// Sum of coordinates modulo 2.
    pub fn parity(&self, site: Site) -> usize {
        (self.coords(site).iter().sum::<i64>().rem_euclid(2)) as usize
    }
}

/// `{0,1}`-valued spin configuration, one bit per site.
#[derive(Clone, PartialEq, Eq)]
pub struct Configuration {
    lattice: Arc<TorusLattice>,
    bits: Vec<u64>,
    ones: usize,
}

impl fmt::Debug for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Configuration")
            .field("sides", &self.lattice.sides())
            .field("ones", &self.ones)
            .finish()
    }
}

impl Configuration {
    pub fn zeros(lattice: Arc<TorusLattice>) -> Self {
        let words = lattice.len().div_ceil(64);
        Self {
            lattice,
            bits: vec![0; words],
            ones: 0,
        }
    }

    pub fn ones(lattice: Arc<TorusLattice>) -> Self {
        let mut c = Self::zeros(lattice);
        for x in 0..c.len() {
            c.set(x, true);
        }
        c
    }

    pub fn from_fn(lattice: Arc<TorusLattice>, mut f: impl FnMut(Site) -> bool) -> Self {
        let mut c = Self::zeros(lattice);
        for x in 0..c.len() {
            if f(x) {
                c.set(x, true);
            }
        }
        c
    }

    pub fn from_sites(lattice: Arc<TorusLattice>, sites: impl IntoIterator<Item = Site>) -> Self {
        let mut c = Self::zeros(lattice);
        for x in sites {
            c.set(x, true);
        }
        c
    }

    /// Product Bernoulli(`u`) configuration.
    pub fn bernoulli<R: Rng + ?Sized>(lattice: Arc<TorusLattice>, u: f64, rng: &mut R) -> Self {
        Self::from_fn(lattice, |_| rng.random::<f64>() < u)
    }

    /// `xi(x) = 1` iff the coordinate sum of `x` is even. Needs even sides to
    /// be a proper checkerboard under wrap-around.
    pub fn checkerboard(lattice: Arc<TorusLattice>) -> Result<Self> {
        if !lattice.all_sides_even() {
            return Err(Error::InvalidLattice("checkerboard needs even sides".into()));
        }
        let l = lattice.clone();
        Ok(Self::from_fn(lattice, |x| l.parity(x) == 0))
    }

    pub fn lattice(&self) -> &Arc<TorusLattice> {
        &self.lattice
    }

    pub fn len(&self) -> usize {
        self.lattice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lattice.is_empty()
    }

    #[inline]
    pub fn get(&self, x: Site) -> bool {
        (self.bits[x >> 6] >> (x & 63)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, x: Site, v: bool) {
        if self.get(x) != v {
            self.flip(x);
        }
    }

    #[inline]
    pub fn flip(&mut self, x: Site) {
        let mask = 1u64 << (x & 63);
        let w = &mut self.bits[x >> 6];
        if *w & mask == 0 {
            self.ones += 1;
        } else {
            self.ones -= 1;
        }
        *w ^= mask;
    }

    /// `|xi|`.
    pub fn count_ones(&self) -> usize {
        self.ones
    }

    /// `|xi-hat|`.
    pub fn count_zeros(&self) -> usize {
        self.len() - self.ones
    }

    pub fn is_all_zeros(&self) -> bool {
        self.ones == 0
    }

    pub fn is_all_ones(&self) -> bool {
        self.ones == self.len()
    }

    pub fn complement(&self) -> Self {
        Self::from_fn(self.lattice.clone(), |x| !self.get(x))
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = Site> + '_ {
        (0..self.len()).filter(move |&x| self.get(x))
    }

    /// Translate: `(shifted)(x) = self(x - z)`.
    pub fn shifted(&self, z: &Offset) -> Self {
        let neg = z.neg();
        Self::from_fn(self.lattice.clone(), |x| self.get(self.lattice.shift(x, &neg)))
    }

    /// `|xi ∩ A|`.
    pub fn count_in(&self, a: &SiteSet) -> usize {
        a.iter().filter(|&x| self.get(x)).count()
    }

    pub fn density(&self) -> f64 {
        self.ones as f64 / self.len() as f64
    }
}

/// Finite set of sites with an incrementally maintained parity flag.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SiteSet {
    sites: Vec<Site>,
    odd: bool,
}

impl SiteSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn is_odd(&self) -> bool {
        self.odd
    }

    pub fn contains(&self, x: Site) -> bool {
        self.sites.binary_search(&x).is_ok()
    }

    pub fn insert(&mut self, x: Site) -> bool {
        match self.sites.binary_search(&x) {
            Ok(_) => false,
            Err(i) => {
                self.sites.insert(i, x);
                self.odd = !self.odd;
                true
            }
        }
    }

    pub fn remove(&mut self, x: Site) -> bool {
        match self.sites.binary_search(&x) {
            Ok(i) => {
                self.sites.remove(i);
                self.odd = !self.odd;
                true
            }
            Err(_) => false,
        }
    }

    /// Symmetric difference with a single site.
    pub fn toggle(&mut self, x: Site) {
        if !self.remove(x) {
            self.insert(x);
        }
    }

    pub fn symmetric_difference(&self, other: &SiteSet) -> SiteSet {
        let mut out = self.clone();
        for x in other.iter() {
            out.toggle(x);
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = Site> + '_ {
        self.sites.iter().copied()
    }

    pub fn as_slice(&self) -> &[Site] {
        &self.sites
    }

    pub fn all(n: usize) -> Self {
        Self {
            sites: (0..n).collect(),
            odd: n % 2 == 1,
        }
    }
}

impl FromIterator<Site> for SiteSet {
    fn from_iter<I: IntoIterator<Item = Site>>(iter: I) -> Self {
        let mut sites: Vec<Site> = iter.into_iter().collect();
        sites.sort_unstable();
        sites.dedup();
        let odd = sites.len() % 2 == 1;
        Self { sites, odd }
    }
}

/// Symmetric, normalised, isotropic displacement law with `p(0) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    dim: usize,
    entries: Vec<(Offset, f64)>,
    sigma2: f64,
}

/// Validates a kernel. Duplicate offsets are merged; zero weights dropped.
pub fn make_kernel(entries: Vec<(Offset, f64)>) -> Result<Kernel> {
    if entries.is_empty() {
        return Err(Error::Empty);
    }
    let dim = entries[0].0.dim();
    let mut merged: BTreeMap<Offset, f64> = BTreeMap::new();
    for (z, w) in entries {
        if z.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: z.dim(),
            });
        }
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::InvalidParameter(format!("kernel weight {w} at {z}")));
        }
        *merged.entry(z).or_insert(0.0) += w;
    }
    merged.retain(|_, w| *w > 0.0);
    if merged.is_empty() {
        return Err(Error::Empty);
    }
    if merged.keys().any(Offset::is_zero) {
        return Err(Error::ZeroOffsetMass);
    }
    for (z, &w) in &merged {
        if merged.get(&z.neg()).copied().unwrap_or(0.0) != w {
            return Err(Error::AsymmetricKernel(z.0.clone()));
        }
    }
    let total: f64 = merged.values().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::NotNormalized(total));
    }
    let mut cov = vec![vec![0.0; dim]; dim];
    for (z, &w) in &merged {
        for i in 0..dim {
            for j in 0..dim {
                cov[i][j] += w * z.0[i] as f64 * z.0[j] as f64;
            }
        }
    }
    for i in 0..dim {
        for j in 0..dim {
            if i != j && cov[i][j].abs() > 1e-9 {
                return Err(Error::Anisotropic(format!("cov[{i}][{j}] = {}", cov[i][j])));
            }
        }
        if (cov[i][i] - cov[0][0]).abs() > 1e-9 {
            return Err(Error::Anisotropic(format!(
                "cov[{i}][{i}] = {} vs cov[0][0] = {}",
                cov[i][i], cov[0][0]
            )));
        }
    }
    let support: Vec<Offset> = merged.keys().cloned().collect();
    if !generates_full_lattice(&support, dim) {
        return Err(Error::SublatticeConfined);
    }
    Ok(Kernel {
        dim,
        entries: merged.into_iter().collect(),
        sigma2: cov[0][0],
    })
}

/// Whether the integer span of `vectors` is all of `Z^dim`, via an integer
/// row echelon form (Euclidean row reduction).
fn generates_full_lattice(vectors: &[Offset], dim: usize) -> bool {
    let mut rows: Vec<Vec<i64>> = vectors
        .iter()
        .map(|v| v.0.iter().map(|&c| c as i64).collect())
        .collect();
    let mut det = 1i64;
    for col in 0..dim {
        let pivot_row = col;
        loop {
            let mut best: Option<usize> = None;
            for r in pivot_row..rows.len() {
                if rows[r][col] != 0 && best.is_none_or(|b| rows[r][col].abs() < rows[b][col].abs()) {
                    best = Some(r);
                }
            }
            let Some(b) = best else { return false };
            rows.swap(pivot_row, b);
            let mut done = true;
            for r in pivot_row + 1..rows.len() {
                let q = rows[r][col] / rows[pivot_row][col];
                if q != 0 {
                    for c in 0..dim {
                        rows[r][c] -= q * rows[pivot_row][c];
                    }
                }
                if rows[r][col] != 0 {
                    done = false;
                }
            }
            if done {
                break;
            }
        }
        det *= rows[pivot_row][col].abs();
    }
    det == 1
}

impl Kernel {
    /// Uniform on the `2d` nearest neighbours.
    pub fn nearest_neighbor(dim: usize) -> Self {
        Self::uniform(&nn_offsets(dim)).expect("nearest-neighbour kernel is valid")
    }

    /// Uniform on a neighbourhood, `p = 1_N / |N|`.
    pub fn uniform(nbhd: &[Offset]) -> Result<Self> {
        if nbhd.is_empty() {
            return Err(Error::Empty);
        }
        let w = 1.0 / nbhd.len() as f64;
        make_kernel(nbhd.iter().map(|z| (z.clone(), w)).collect())
    }

    /// `p(z) ∝ exp(-kappa |z|_1)` truncated to `|z|_inf <= radius` and
    /// renormalised. Returns the kernel and the discarded mass of the
    /// untruncated law.
    pub fn exponential(dim: usize, kappa: f64, radius: u32) -> Result<(Self, f64)> {
        if !(kappa > 0.0) {
            return Err(Error::InvalidParameter(format!("decay rate {kappa}")));
        }
        let q = (-kappa).exp();
        let total = ((1.0 + q) / (1.0 - q)).powi(dim as i32) - 1.0;
        let support = box_offsets(radius, dim);
        let raw: Vec<f64> = support.iter().map(|z| (-kappa * z.l1() as f64).exp()).collect();
        let kept: f64 = raw.iter().sum();
        let discarded = ((total - kept) / total).max(0.0);
        let entries = support.into_iter().zip(raw).map(|(z, w)| (z, w / kept)).collect();
        Ok((make_kernel(entries)?, discarded))
    }

    /// Smallest truncation radius leaving discarded mass below `1e-6`.
    pub fn default_exponential(dim: usize, kappa: f64) -> Result<(Self, f64, u32)> {
        let mut r = 1;
        loop {
            let (k, lost) = Self::exponential(dim, kappa, r)?;
            if lost < 1e-6 || r >= 64 {
                return Ok((k, lost, r));
            }
            r += 1;
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(Offset, f64)] {
        &self.entries
    }

    pub fn support(&self) -> impl Iterator<Item = &Offset> {
        self.entries.iter().map(|(z, _)| z)
    }

    pub fn weight(&self, z: &Offset) -> f64 {
        self.entries
            .binary_search_by(|(o, _)| o.cmp(z))
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// `p^(2)(0) = sum_x p(x)^2`.
    pub fn return_mass(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w * w).sum()
    }

    pub fn check_fits(&self, lattice: &TorusLattice) -> Result<()> {
        self.support().try_for_each(|z| lattice.check_fits(z))
    }
}

/// `f_i(x, xi) = sum_y p(y - x) 1{xi(y) = i}`.
pub fn local_density(cfg: &Configuration, x: Site, kernel: &Kernel, i: bool) -> f64 {
    let (f0, f1) = local_densities(cfg, x, kernel);
    if i {
        f1
    } else {
        f0
    }
}

/// `(f_0, f_1)` in one pass.
pub fn local_densities(cfg: &Configuration, x: Site, kernel: &Kernel) -> (f64, f64) {
    let lat = cfg.lattice();
    let (mut f0, mut f1) = (0.0, 0.0);
    for (z, w) in kernel.entries() {
        if cfg.get(lat.shift(x, z)) {
            f1 += w;
        } else {
            f0 += w;
        }
    }
    (f0, f1)
}

/// `A(x0, xi) = {y in A : xi(y) = 1, xi(y + x0) = 0}`.
pub fn pair_set(cfg: &Configuration, a: &SiteSet, x0: &Offset) -> Result<SiteSet> {
    if x0.is_zero() {
        return Err(Error::ZeroOffset);
    }
    let lat = cfg.lattice();
    Ok(a.iter()
        .filter(|&y| cfg.get(y) && !cfg.get(lat.shift(y, x0)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn lat(sides: &[usize]) -> Arc<TorusLattice> {
        Arc::new(TorusLattice::new(sides.to_vec()).unwrap())
    }

    #[test]
    fn row_major_indexing() {
        let l = TorusLattice::new(vec![4, 4]).unwrap();
        assert_eq!(l.site_of(&[1, 2]), 6);
        assert_eq!(l.coords(6), vec![1, 2]);
        assert_eq!(l.shift(6, &Offset(vec![-2, 3])), l.site_of(&[3, 1]));
        assert_eq!(l.len(), 16);
    }

    #[test]
    fn lattice_rejects_small_sides() {
        assert!(TorusLattice::new(vec![2, 4]).is_err());
        assert!(TorusLattice::new(vec![]).is_err());
    }

    #[test]
    fn nn_kernel_sigma2() {
        let k = Kernel::nearest_neighbor(2);
        // sum z_1^2 p(z) over ±e1: 2 * 1/4.
        assert_eq!(k.sigma2(), 0.5);
        assert_eq!(Kernel::nearest_neighbor(3).sigma2(), 1.0 / 3.0);
        assert_eq!(k.entries().len(), 4);
    }

    #[test]
    fn kernel_validation_errors() {
        let e1 = Offset(vec![1, 0]);
        let e2 = Offset(vec![0, 1]);
        assert_eq!(
            make_kernel(vec![(Offset(vec![0, 0]), 0.5), (e1.clone(), 0.25), (e1.neg(), 0.25)]),
            Err(Error::ZeroOffsetMass)
        );
        let asym = make_kernel(vec![
            (e1.clone(), 0.5),
            (e1.neg(), 0.3),
            (e2.clone(), 0.1),
            (e2.neg(), 0.1),
        ]);
        assert!(matches!(asym, Err(Error::AsymmetricKernel(_))));
        let unnorm = make_kernel(vec![(e1.clone(), 0.3), (e1.neg(), 0.3)]);
        assert!(matches!(unnorm, Err(Error::NotNormalized(_))));
        let aniso = make_kernel(vec![
            (e1.clone(), 0.4),
            (e1.neg(), 0.4),
            (e2.clone(), 0.1),
            (e2.neg(), 0.1),
        ]);
        assert!(matches!(aniso, Err(Error::Anisotropic(_))));
        let diag = make_kernel(vec![
            (Offset(vec![1, 1]), 0.25),
            (Offset(vec![-1, -1]), 0.25),
            (Offset(vec![1, -1]), 0.25),
            (Offset(vec![-1, 1]), 0.25),
        ]);
        assert_eq!(diag, Err(Error::SublatticeConfined));
        let two_step = make_kernel(vec![
            (Offset(vec![2]), 0.5),
            (Offset(vec![-2]), 0.5),
        ]);
        assert_eq!(two_step, Err(Error::SublatticeConfined));
        assert_eq!(make_kernel(vec![]), Err(Error::Empty));
    }

    #[test]
    fn kernel_fits_torus() {
        let k = Kernel::nearest_neighbor(2);
        assert!(k.check_fits(&TorusLattice::new(vec![3, 3]).unwrap()).is_ok());
        let big = Kernel::uniform(&box_offsets(2, 2)).unwrap();
        assert!(matches!(
            big.check_fits(&TorusLattice::new(vec![4, 4]).unwrap()),
            Err(Error::SupportTooLargeForTorus { .. })
        ));
        assert!(big.check_fits(&TorusLattice::new(vec![5, 5]).unwrap()).is_ok());
    }

    #[test]
    fn exponential_truncation_is_small() {
        let (k, lost, r) = Kernel::default_exponential(2, 1.5).unwrap();
        assert!(lost < 1e-6, "lost {lost} at radius {r}");
        let total: f64 = k.entries().iter().map(|e| e.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn densities() {
        let l = lat(&[6, 6]);
        let k = Kernel::nearest_neighbor(2);
        let ones = Configuration::ones(l.clone());
        assert_eq!(local_density(&ones, 7, &k, true), 1.0);
        let x = l.site_of(&[2, 2]);
        let single = Configuration::from_sites(l.clone(), [l.site_of(&[3, 2])]);
        assert_eq!(local_density(&single, x, &k, true), 0.25);
    }

    #[test]
    fn densities_partition_unity() {
        let l = lat(&[8, 8]);
        let k = Kernel::nearest_neighbor(2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let cfg = Configuration::bernoulli(l.clone(), 0.5, &mut rng);
            let x = rng.random_range(0..l.len());
            let (f0, f1) = local_densities(&cfg, x, &k);
            assert_eq!(f0 + f1, 1.0);
        }
    }

    #[test]
    fn pair_set_cases() {
        let l = lat(&[4, 4]);
        let e1 = Offset(vec![1, 0]);
        let ones = Configuration::ones(l.clone());
        assert!(pair_set(&ones, &SiteSet::all(16), &e1).unwrap().is_empty());
        assert_eq!(pair_set(&ones, &SiteSet::all(16), &Offset::zero(2)), Err(Error::ZeroOffset));

        // Brute force over the checkerboard: every 1 has a 0 at +e1.
        let cb = Configuration::checkerboard(l.clone()).unwrap();
        let got = pair_set(&cb, &SiteSet::all(16), &e1).unwrap();
        let expect: SiteSet = (0..16)
            .filter(|&y| cb.get(y) && !cb.get(l.shift(y, &e1)))
            .collect();
        assert_eq!(got, expect);
        assert_eq!(got.len(), 8);

        let y = 5;
        let single = Configuration::from_sites(l.clone(), [y]);
        let a: SiteSet = [y].into_iter().collect();
        assert_eq!(pair_set(&single, &a, &e1).unwrap(), a);
    }

    #[test]
    fn site_set_parity_tracks_size() {
        let mut s = SiteSet::new();
        for x in [3, 1, 4, 1, 5, 9, 2, 6, 5, 3] {
            s.toggle(x);
            assert_eq!(s.is_odd(), s.len() % 2 == 1);
        }
        assert!(s.as_slice().windows(2).all(|w| w[0] < w[1]));
    }

    proptest! {
        #[test]
        fn complement_is_involution_and_counts(bits in proptest::collection::vec(any::<bool>(), 16)) {
            let l = lat(&[4, 4]);
            let cfg = Configuration::from_fn(l.clone(), |x| bits[x]);
            prop_assert_eq!(cfg.complement().complement(), cfg.clone());
            prop_assert_eq!(cfg.count_ones() + cfg.count_zeros(), 16);
        }

        #[test]
        fn pair_set_of_complement(bits in proptest::collection::vec(any::<bool>(), 16), axis in 0usize..2, sign in prop_oneof![Just(1), Just(-1)]) {
            let l = lat(&[4, 4]);
            let cfg = Configuration::from_fn(l.clone(), |x| bits[x]);
            let x0 = Offset::unit(2, axis, sign);
            let all = SiteSet::all(16);
            let got = pair_set(&cfg.complement(), &all, &x0).unwrap();
            let expect: SiteSet = (0..16).filter(|&y| !cfg.get(y) && cfg.get(l.shift(y, &x0))).collect();
            prop_assert_eq!(got, expect);
        }

        #[test]
        fn density_translation_covariant(bits in proptest::collection::vec(any::<bool>(), 36), x in 0usize..36, zx in -2i32..3, zy in -2i32..3) {
            let l = lat(&[6, 6]);
            let k = Kernel::nearest_neighbor(2);
            let cfg = Configuration::from_fn(l.clone(), |s| bits[s]);
            let z = Offset(vec![zx, zy]);
            let shifted = cfg.shifted(&z);
            let xz = l.shift(x, &z);
            prop_assert_eq!(local_densities(&shifted, xz, &k), local_densities(&cfg, x, &k));
        }
    }
}
