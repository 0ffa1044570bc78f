//! Flip-rate functions for the concrete models and their voter-model-perturbation
//! decomposition.
//!
//! Every model depends on a finite window `W = {0} ∪ supp`. Window states are
//! encoded as bitmasks: bit `j` holds `xi(x + W[j])`, with `W[0] = 0`.

use crate::error::{Error, Result};
use crate::lattice::{Configuration, Kernel, Offset, Site};

/// Largest window for which full rate tables are built.
pub const MAX_WINDOW: usize = 22;

/// Validated neighbourhood: nonempty, symmetric, without the origin.
pub fn check_neighborhood(nbhd: &[Offset]) -> Result<Vec<Offset>> {
    if nbhd.is_empty() {
        return Err(Error::InvalidNeighborhood("empty".into()));
    }
    let dim = nbhd[0].dim();
    let mut out: Vec<Offset> = nbhd.to_vec();
    out.sort();
    out.dedup();
    for z in &out {
        if z.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: z.dim(),
            });
        }
        if z.is_zero() {
            return Err(Error::InvalidNeighborhood("contains the origin".into()));
        }
        if out.binary_search(&z.neg()).is_err() {
            return Err(Error::InvalidNeighborhood(format!("{z} present but not its negative")));
        }
    }
    Ok(out)
}

/// Window `{0}` followed by the sorted union of the given offset sets.
pub fn window_of<'a>(dim: usize, parts: impl IntoIterator<Item = &'a Offset>) -> Vec<Offset> {
    let mut rest: Vec<Offset> = parts.into_iter().filter(|z| !z.is_zero()).cloned().collect();
    rest.sort();
    rest.dedup();
    let mut w = Vec::with_capacity(rest.len() + 1);
    w.push(Offset::zero(dim));
    w.extend(rest);
    w
}

fn index_in(window: &[Offset], z: &Offset) -> usize {
    window.iter().position(|w| w == z).expect("offset belongs to window")
}

/// Single-site rate table over all `2^|W|` window states.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    window: Vec<Offset>,
    rates: Vec<f64>,
}

impl RateTable {
    pub fn new(window: Vec<Offset>, rates: Vec<f64>) -> Result<Self> {
        if window.is_empty() || !window[0].is_zero() {
            return Err(Error::InvalidParameter("window must start at the origin".into()));
        }
        if window.len() > MAX_WINDOW {
            return Err(Error::WindowTooLarge(window.len()));
        }
        if rates.len() != 1 << window.len() {
            return Err(Error::InvalidParameter(format!(
                "{} rates for a window of {} sites",
                rates.len(),
                window.len()
            )));
        }
        if let Some(r) = rates.iter().find(|r| !(**r >= 0.0) || !r.is_finite()) {
            return Err(Error::InvalidParameter(format!("rate {r}")));
        }
        Ok(Self { window, rates })
    }

    pub fn from_fn(window: Vec<Offset>, f: impl Fn(u64) -> f64) -> Result<Self> {
        if window.len() > MAX_WINDOW {
            return Err(Error::WindowTooLarge(window.len()));
        }
        let rates = (0..1u64 << window.len()).map(f).collect();
        Self::new(window, rates)
    }

    pub fn window(&self) -> &[Offset] {
        &self.window
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    #[inline]
    pub fn rate(&self, bits: u64) -> f64 {
        self.rates[bits as usize]
    }

    pub fn max_rate(&self) -> f64 {
        self.rates.iter().copied().fold(0.0, f64::max)
    }

    pub fn full_mask(&self) -> u64 {
        (1u64 << self.window.len()) - 1
    }

    /// Rate at the window state of `cfg` around `x`.
    pub fn rate_at(&self, cfg: &Configuration, x: Site) -> f64 {
        self.rate(gather(cfg, x, &self.window))
    }

    /// Same table re-expressed on a larger window containing this one.
    pub fn extend_to(&self, window: &[Offset]) -> Result<RateTable> {
        let map: Vec<usize> = self
            .window
            .iter()
            .map(|z| {
                window
                    .iter()
                    .position(|w| w == z)
                    .ok_or_else(|| Error::InvalidParameter(format!("{z} missing from window")))
            })
            .collect::<Result<_>>()?;
        RateTable::from_fn(window.to_vec(), |bits| {
            let mut local = 0;
            for (j, &k) in map.iter().enumerate() {
                local |= ((bits >> k) & 1) << j;
            }
            self.rate(local)
        })
    }
}

/// Window bits of `cfg` around `x`.
pub fn gather(cfg: &Configuration, x: Site, window: &[Offset]) -> u64 {
    let lat = cfg.lattice();
    window
        .iter()
        .enumerate()
        .fold(0, |acc, (j, z)| acc | ((cfg.get(lat.shift(x, z)) as u64) << j))
}

/// Parameterised flip-rate family.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Voter {
        kernel: Kernel,
    },
    /// Symmetric stochastic Lotka-Volterra, `alpha_0 = alpha_1 = alpha`.
    LotkaVolterra {
        alpha: f64,
        kernel: Kernel,
    },
    /// `alpha * c_vm + (1 - alpha) * c_tvm`.
    AffineVoter {
        alpha: f64,
        kernel: Kernel,
        nbhd: Vec<Offset>,
    },
    /// Geometric voter model; the voter kernel is uniform on `nbhd`.
    GeometricVoter {
        theta: f64,
        nbhd: Vec<Offset>,
    },
    ThresholdVoter {
        nbhd: Vec<Offset>,
    },
    Custom(RateTable),
}

impl ModelSpec {
    pub fn voter(kernel: Kernel) -> Self {
        ModelSpec::Voter { kernel }
    }

    pub fn lotka_volterra(alpha: f64, kernel: Kernel) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("alpha = {alpha}")));
        }
        Ok(ModelSpec::LotkaVolterra { alpha, kernel })
    }

    pub fn affine_voter(alpha: f64, kernel: Kernel, nbhd: &[Offset]) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidParameter(format!("alpha = {alpha}")));
        }
        let nbhd = check_neighborhood(nbhd)?;
        if nbhd[0].dim() != kernel.dim() {
            return Err(Error::DimensionMismatch {
                expected: kernel.dim(),
                got: nbhd[0].dim(),
            });
        }
        Ok(ModelSpec::AffineVoter { alpha, kernel, nbhd })
    }

    pub fn geometric_voter(theta: f64, nbhd: &[Offset]) -> Result<Self> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::InvalidParameter(format!("theta = {theta}")));
        }
        let nbhd = check_neighborhood(nbhd)?;
        Kernel::uniform(&nbhd)?;
        Ok(ModelSpec::GeometricVoter { theta, nbhd })
    }

    pub fn threshold_voter(nbhd: &[Offset]) -> Result<Self> {
        Ok(ModelSpec::ThresholdVoter {
            nbhd: check_neighborhood(nbhd)?,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Voter { .. } => "voter",
            ModelSpec::LotkaVolterra { .. } => "lv",
            ModelSpec::AffineVoter { .. } => "av",
            ModelSpec::GeometricVoter { .. } => "gv",
            ModelSpec::ThresholdVoter { .. } => "tvm",
            ModelSpec::Custom(_) => "custom",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ModelSpec::Voter { kernel } | ModelSpec::LotkaVolterra { kernel, .. } => kernel.dim(),
            ModelSpec::AffineVoter { kernel, .. } => kernel.dim(),
            ModelSpec::GeometricVoter { nbhd, .. } | ModelSpec::ThresholdVoter { nbhd } => nbhd[0].dim(),
            ModelSpec::Custom(t) => t.window()[0].dim(),
        }
    }

    /// The voter displacement kernel, when the model has one.
    pub fn kernel(&self) -> Option<Kernel> {
        match self {
            ModelSpec::Voter { kernel }
            | ModelSpec::LotkaVolterra { kernel, .. }
            | ModelSpec::AffineVoter { kernel, .. } => Some(kernel.clone()),
            ModelSpec::GeometricVoter { nbhd, .. } => Kernel::uniform(nbhd).ok(),
            ModelSpec::ThresholdVoter { .. } | ModelSpec::Custom(_) => None,
        }
    }

    /// Dependence window `{0} ∪ support(kernel or N)`.
    pub fn window(&self) -> Vec<Offset> {
        let d = self.dim();
        match self {
            ModelSpec::Voter { kernel } | ModelSpec::LotkaVolterra { kernel, .. } => {
                window_of(d, kernel.support())
            }
            ModelSpec::AffineVoter { kernel, nbhd, .. } => window_of(d, kernel.support().chain(nbhd.iter())),
            ModelSpec::GeometricVoter { nbhd, .. } | ModelSpec::ThresholdVoter { nbhd } => {
                window_of(d, nbhd.iter())
            }
            ModelSpec::Custom(t) => t.window().to_vec(),
        }
    }

    /// Full rate table over the window.
    pub fn rate_table(&self) -> Result<RateTable> {
        let window = self.window();
        if window.len() > MAX_WINDOW {
            return Err(Error::WindowTooLarge(window.len()));
        }
        if let ModelSpec::Custom(t) = self {
            return Ok(t.clone());
        }
        let eval = LocalEvaluator::new(self, &window);
        RateTable::from_fn(window, |bits| eval.rate(bits))
    }

    /// Uniformisation constant: the maximum of the rate table.
    pub fn max_rate(&self) -> Result<f64> {
        Ok(self.rate_table()?.max_rate())
    }
}

/// Evaluates a named model's displayed rate formula on window bitmasks.
struct LocalEvaluator<'a> {
    model: &'a ModelSpec,
    kernel_idx: Vec<(usize, f64)>,
    nbhd_idx: Vec<usize>,
}

impl<'a> LocalEvaluator<'a> {
    fn new(model: &'a ModelSpec, window: &[Offset]) -> Self {
        let kernel_idx = model
            .kernel()
            .map(|k| k.entries().iter().map(|(z, w)| (index_in(window, z), *w)).collect())
            .unwrap_or_default();
        let nbhd_idx = match model {
            ModelSpec::AffineVoter { nbhd, .. }
            | ModelSpec::GeometricVoter { nbhd, .. }
            | ModelSpec::ThresholdVoter { nbhd } => nbhd.iter().map(|z| index_in(window, z)).collect(),
            _ => Vec::new(),
        };
        Self {
            model,
            kernel_idx,
            nbhd_idx,
        }
    }

    fn f1(&self, bits: u64) -> f64 {
        self.kernel_idx
            .iter()
            .filter(|(j, _)| (bits >> j) & 1 == 1)
            .map(|(_, w)| w)
            .sum()
    }

    fn f0(&self, bits: u64) -> f64 {
        self.kernel_idx
            .iter()
            .filter(|(j, _)| (bits >> j) & 1 == 0)
            .map(|(_, w)| w)
            .sum()
    }

    fn disagreements(&self, bits: u64) -> usize {
        let c = bits & 1;
        self.nbhd_idx.iter().filter(|&&j| (bits >> j) & 1 != c).count()
    }

    fn voter(&self, bits: u64) -> f64 {
        if bits & 1 == 0 {
            self.f1(bits)
        } else {
            self.f0(bits)
        }
    }

    fn rate(&self, bits: u64) -> f64 {
        match self.model {
            ModelSpec::Voter { .. } => self.voter(bits),
            ModelSpec::LotkaVolterra { alpha, .. } => {
                let (f0, f1) = (self.f0(bits), self.f1(bits));
                if bits & 1 == 0 {
                    f1 * (f0 + alpha * f1)
                } else {
                    f0 * (f1 + alpha * f0)
                }
            }
            ModelSpec::AffineVoter { alpha, .. } => {
                let tvm = (self.disagreements(bits) > 0) as u8 as f64;
                alpha * self.voter(bits) + (1.0 - alpha) * tvm
            }
            ModelSpec::GeometricVoter { theta, nbhd } => {
                geometric_rate(*theta, self.disagreements(bits), nbhd.len())
            }
            ModelSpec::ThresholdVoter { .. } => (self.disagreements(bits) > 0) as u8 as f64,
            ModelSpec::Custom(t) => t.rate(bits),
        }
    }
}

/// `(1 - theta^j) / (1 - theta^n)`, read as `j / n` at `theta = 1`.
pub fn geometric_rate(theta: f64, j: usize, n: usize) -> f64 {
    if theta == 1.0 {
        j as f64 / n as f64
    } else {
        (1.0 - theta.powi(j as i32)) / (1.0 - theta.powi(n as i32))
    }
}

/// Exact rate of `m` at site `x` of `cfg`.
pub fn flip_rate(m: &ModelSpec, x: Site, cfg: &Configuration) -> f64 {
    let window = m.window();
    let bits = gather(cfg, x, &window);
    match m {
        ModelSpec::Custom(t) => t.rate(bits),
        _ => LocalEvaluator::new(m, &window).rate(bits),
    }
}

/// Whether `c(0, xi) = c(0, xi-hat)` on every window state.
pub fn is_symmetric(table: &RateTable) -> bool {
    let full = table.full_mask();
    (0..=full).all(|b| table.rate(b) == table.rate(!b & full))
}

/// Voter-model-perturbation decomposition
/// `c = c_vm + eps^2 [(1 - xi(0)) h_1 + xi(0) h_0]` with
/// `h_i = -eps1^{-2} f_i + E_Z g_i(xi(Z^1), ..., xi(Z^{N0}))`.
#[derive(Debug, Clone)]
pub struct PerturbationView {
    /// `eps^2`.
    pub epsilon_sq: f64,
    pub kernel: Kernel,
    /// `eps_1^{-2}`; zero encodes `eps_1 = ∞`.
    pub eps1_inv_sq: f64,
    /// `{0} ∪ supp p ∪ supp q_Z`.
    pub window: Vec<Offset>,
    /// `q_Z` as (tuple of window indices, probability).
    pub z_law: Vec<(Vec<usize>, f64)>,
    pub n0: usize,
    /// `g_i^eps` tables over `2^{N0}` inputs, bit `k` = `xi(Z^k)`.
    pub g_eps: [Vec<f64>; 2],
    /// Limiting `g_i` used for the reaction function.
    pub g_limit: [Vec<f64>; 2],
    /// Sup-norm of `eps^2 (g^eps - g)`, the higher-order remainder dropped by
    /// the limiting form (nonzero only for the geometric voter model).
    pub residual: f64,
    /// `|N|` for models driven by a neighbourhood.
    pub nbhd_size: Option<usize>,
    kernel_idx: Vec<(usize, f64)>,
}

impl PerturbationView {
    fn build(
        epsilon_sq: f64,
        kernel: Kernel,
        eps1_inv_sq: f64,
        z_offsets: Vec<(Vec<Offset>, f64)>,
        g_eps: [Vec<f64>; 2],
        g_limit: [Vec<f64>; 2],
        nbhd_size: Option<usize>,
    ) -> Self {
        let d = kernel.dim();
        let n0 = z_offsets.first().map_or(0, |(t, _)| t.len());
        let window = window_of(d, kernel.support().chain(z_offsets.iter().flat_map(|(t, _)| t.iter())));
        let kernel_idx = kernel.entries().iter().map(|(z, w)| (index_in(&window, z), *w)).collect();
        let z_law = z_offsets
            .iter()
            .map(|(t, q)| (t.iter().map(|z| index_in(&window, z)).collect(), *q))
            .collect();
        let residual = g_eps
            .iter()
            .zip(&g_limit)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
            * epsilon_sq;
        Self {
            epsilon_sq,
            kernel,
            eps1_inv_sq,
            window,
            z_law,
            n0,
            g_eps,
            g_limit,
            residual,
            nbhd_size,
            kernel_idx,
        }
    }

    fn pure_voter(kernel: Kernel) -> Self {
        Self::build(0.0, kernel, 0.0, Vec::new(), [vec![0.0], vec![0.0]], [vec![0.0], vec![0.0]], None)
    }

    pub fn is_pure_voter(&self) -> bool {
        self.epsilon_sq == 0.0
    }

    /// Rate of the voter arrows in the graphical construction, `1 - eps^2 eps_1^{-2}`.
    pub fn voter_rate(&self) -> f64 {
        1.0 - self.epsilon_sq * self.eps1_inv_sq
    }

    /// `c-bar = ||g_1|| + ||g_0|| + 1`.
    pub fn c_bar(&self) -> f64 {
        let m = |g: &Vec<f64>| g.iter().copied().fold(0.0, f64::max);
        m(&self.g_eps[0]) + m(&self.g_eps[1]) + 1.0
    }

    /// Rate of star events per site, `eps^2 c-bar`.
    pub fn star_rate(&self) -> f64 {
        if self.is_pure_voter() {
            0.0
        } else {
            self.epsilon_sq * self.c_bar()
        }
    }

    pub fn kernel_indices(&self) -> &[(usize, f64)] {
        &self.kernel_idx
    }

    fn f(&self, i: usize, bits: u64) -> f64 {
        self.kernel_idx
            .iter()
            .filter(|(j, _)| ((bits >> j) & 1) as usize == i)
            .map(|(_, w)| w)
            .sum()
    }

    /// Packs `xi(Z^1..Z^{N0})` from window bits.
    #[inline]
    pub fn tuple_bits(tuple: &[usize], bits: u64) -> usize {
        tuple
            .iter()
            .enumerate()
            .fold(0, |acc, (k, &j)| acc | ((((bits >> j) & 1) as usize) << k))
    }

    /// `h_i` on window bits, from `g^eps` or from the limiting `g`.
    pub fn h(&self, i: usize, bits: u64, limit: bool) -> f64 {
        if self.is_pure_voter() {
            return 0.0;
        }
        let g = if limit { &self.g_limit[i] } else { &self.g_eps[i] };
        let ez: f64 = self
            .z_law
            .iter()
            .map(|(t, q)| q * g[Self::tuple_bits(t, bits)])
            .sum();
        -self.eps1_inv_sq * self.f(i, bits) + ez
    }

    /// `c_vm + eps^2 [(1 - xi(0)) h_1 + xi(0) h_0]` with `g^eps`.
    pub fn reconstructed_rate(&self, bits: u64) -> f64 {
        let c = (bits & 1) as usize;
        let vm = self.f(1 - c, bits);
        vm + self.epsilon_sq * self.h(1 - c, bits, false)
    }

    /// Integrand of the reaction function, `(1 - xi(0)) h_1 - xi(0) h_0`, with
    /// the limiting `g`.
    pub fn reaction_integrand(&self, bits: u64) -> f64 {
        if bits & 1 == 0 {
            self.h(1, bits, true)
        } else {
            -self.h(0, bits, true)
        }
    }

    pub fn rate_table(&self) -> Result<RateTable> {
        RateTable::from_fn(self.window.clone(), |b| self.reconstructed_rate(b))
    }
}

/// Decomposes a model as a voter model perturbation.
///
/// * LV(alpha), `alpha <= 1`: `eps^2 = 1 - alpha`, `h_i = -f_i^2`, realised with
///   `eps_1 = 1` and `g_1(a, b) = a(1 - b)` over two independent `p`-draws.
/// * AV(alpha): `eps^2 = 1 - alpha`, `h_i = -f_i + 1{xi(y) = i, some y in N}`.
/// * GV(theta): `eps^2 = 1 - theta`, `eps_1 = ∞`, exact `g_i^eps` from the
///   geometric rate; the limiting `g_i` gives `(|N|/2) f_0 f_1`.
pub fn perturbation_view(m: &ModelSpec) -> Result<PerturbationView> {
    match m {
        ModelSpec::Voter { kernel } => Ok(PerturbationView::pure_voter(kernel.clone())),
        ModelSpec::LotkaVolterra { alpha, kernel } => {
            if *alpha > 1.0 {
                return Err(Error::InvalidParameter(format!(
                    "perturbation view needs alpha <= 1, got {alpha}"
                )));
            }
            let eps2 = 1.0 - alpha;
            if eps2 == 0.0 {
                return Ok(PerturbationView::pure_voter(kernel.clone()));
            }
            let mut tuples = Vec::new();
            for (y, py) in kernel.entries() {
                for (z, pz) in kernel.entries() {
                    tuples.push((vec![y.clone(), z.clone()], py * pz));
                }
            }
            // bit 0 = xi(Z^1), bit 1 = xi(Z^2)
            let g1 = vec![0.0, 1.0, 0.0, 0.0];
            let g0 = vec![0.0, 0.0, 1.0, 0.0];
            Ok(PerturbationView::build(
                eps2,
                kernel.clone(),
                1.0,
                tuples,
                [g0.clone(), g1.clone()],
                [g0, g1],
                None,
            ))
        }
        ModelSpec::AffineVoter { alpha, kernel, nbhd } => {
            let eps2 = 1.0 - alpha;
            if eps2 == 0.0 {
                return Ok(PerturbationView::pure_voter(kernel.clone()));
            }
            let n0 = nbhd.len();
            let full = (1usize << n0) - 1;
            let g1: Vec<f64> = (0..=full).map(|b| (b != 0) as u8 as f64).collect();
            let g0: Vec<f64> = (0..=full).map(|b| (b != full) as u8 as f64).collect();
            Ok(PerturbationView::build(
                eps2,
                kernel.clone(),
                1.0,
                vec![(nbhd.clone(), 1.0)],
                [g0.clone(), g1.clone()],
                [g0, g1],
                Some(n0),
            ))
        }
        ModelSpec::GeometricVoter { theta, nbhd } => {
            let kernel = Kernel::uniform(nbhd)?;
            let eps2 = 1.0 - theta;
            if eps2 == 0.0 {
                return Ok(PerturbationView::pure_voter(kernel));
            }
            let n = nbhd.len();
            if n > MAX_WINDOW {
                return Err(Error::WindowTooLarge(n + 1));
            }
            let full = (1usize << n) - 1;
            let table = |i: usize, exact: bool| -> Vec<f64> {
                (0..=full)
                    .map(|b| {
                        let ones = (b as u64).count_ones() as usize;
                        let j = if i == 1 { ones } else { n - ones };
                        if exact {
                            (geometric_rate(*theta, j, n) - j as f64 / n as f64) / eps2
                        } else {
                            (j * (n - j)) as f64 / (2 * n) as f64
                        }
                    })
                    .collect()
            };
            Ok(PerturbationView::build(
                eps2,
                kernel,
                0.0,
                vec![(nbhd.clone(), 1.0)],
                [table(0, true), table(1, true)],
                [table(0, false), table(1, false)],
                Some(n),
            ))
        }
        ModelSpec::ThresholdVoter { .. } | ModelSpec::Custom(_) => Err(Error::NotAPerturbation),
    }
}
