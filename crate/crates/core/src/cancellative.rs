//! Cancellative representation `c(x, xi) = (k0/2)(1 - (2xi(x) - 1) Σ_A q0(A - x) H(xi, A))`
//! with `H(xi, A) = Π_{a∈A} (2xi(a) - 1)`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::lattice::{Kernel, Offset};
use crate::models::{window_of, ModelSpec, RateTable, MAX_WINDOW};

/// Walsh coefficients below this magnitude are treated as zero.
pub const WALSH_TOL: f64 = 1e-12;
/// Round-trip tolerance of reconstruction.
pub const RECONSTRUCT_TOL: f64 = 1e-9;

/// `(k0, q0)` with `q0` a probability law on finite offset sets.
#[derive(Debug, Clone, PartialEq)]
pub struct CancellativeSpec {
    k0: f64,
    q0: Vec<(Vec<Offset>, f64)>,
}

fn normalize_set(mut a: Vec<Offset>) -> Vec<Offset> {
    a.sort();
    a.dedup();
    a
}

impl CancellativeSpec {
    /// Validates `k0 > 0`, `q0(∅) = 0`, weights in `[0, 1]` and total mass 1.
    pub fn new(k0: f64, q0: impl IntoIterator<Item = (Vec<Offset>, f64)>) -> Result<Self> {
        if !(k0 > 0.0) || !k0.is_finite() {
            return Err(Error::InvalidParameter(format!("k0 = {k0}")));
        }
        let mut merged: BTreeMap<Vec<Offset>, f64> = BTreeMap::new();
        for (a, w) in q0 {
            if a.is_empty() && w != 0.0 {
                return Err(Error::InvalidParameter("q0 charges the empty set".into()));
            }
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::InvalidParameter(format!("q0 weight {w}")));
            }
            if w > 0.0 {
                *merged.entry(normalize_set(a)).or_insert(0.0) += w;
            }
        }
        let total: f64 = merged.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::NotNormalized(total));
        }
        Ok(Self {
            k0,
            q0: merged.into_iter().collect(),
        })
    }

    pub fn k0(&self) -> f64 {
        self.k0
    }

    /// Supported sets in lexicographic order with their weights.
    pub fn entries(&self) -> &[(Vec<Offset>, f64)] {
        &self.q0
    }

    pub fn weight(&self, a: &[Offset]) -> f64 {
        let a = normalize_set(a.to_vec());
        self.q0
            .binary_search_by(|(s, _)| s.cmp(&a))
            .map_or(0.0, |i| self.q0[i].1)
    }

    pub fn dim(&self) -> usize {
        self.q0
            .iter()
            .flat_map(|(a, _)| a.first())
            .map(Offset::dim)
            .next()
            .unwrap_or(1)
    }

    /// `{0}` together with every offset appearing in a supported set.
    pub fn window(&self) -> Vec<Offset> {
        window_of(self.dim(), self.q0.iter().flat_map(|(a, _)| a.iter()))
    }

    /// Rate table of the represented flip rates on `window`.
    pub fn reconstruct(&self, window: &[Offset]) -> Result<RateTable> {
        let masks = self
            .q0
            .iter()
            .map(|(a, w)| {
                let mut m = 0u64;
                for z in a {
                    let j = window
                        .iter()
                        .position(|v| v == z)
                        .ok_or_else(|| Error::InvalidParameter(format!("{z} outside window")))?;
                    m |= 1 << j;
                }
                Ok((m, *w))
            })
            .collect::<Result<Vec<_>>>()?;
        let half = self.k0 / 2.0;
        RateTable::from_fn(window.to_vec(), |bits| {
            let sum: f64 = masks.iter().map(|&(m, w)| w * h_mask(bits, m)).sum();
            let sign = if bits & 1 == 1 { 1.0 } else { -1.0 };
            let r = half * (1.0 - sign * sum);
            // float cancellation at traps
            if r < 0.0 && r > -RECONSTRUCT_TOL {
                0.0
            } else {
                r
            }
        })
    }
}

/// `H(xi, A)` for window bits `xi` and a set given as a window mask.
#[inline]
pub fn h_mask(bits: u64, set: u64) -> f64 {
    if (set & !bits).count_ones().is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// In-place unnormalised Walsh-Hadamard transform:
/// `out[A] = Σ_S v[S] (-1)^{|A ∩ S|}`.
pub fn fwht(v: &mut [f64]) {
    let n = v.len();
    assert!(n.is_power_of_two());
    let mut h = 1;
    while h < n {
        for block in v.chunks_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
}

/// Walsh coefficients `b_A = 2^{-|W|} Σ_xi (2xi(0) - 1) c(0, xi) H(xi, A)`.
pub fn walsh_coefficients(table: &RateTable) -> Vec<f64> {
    let mut v: Vec<f64> = table
        .rates()
        .iter()
        .enumerate()
        .map(|(b, &c)| if b & 1 == 1 { c } else { -c })
        .collect();
    fwht(&mut v);
    // H(xi, A) = (-1)^{|A|} (-1)^{|A ∩ xi|}
    let scale = 1.0 / v.len() as f64;
    for (a, b) in v.iter_mut().enumerate() {
        *b *= scale;
        if a.count_ones() % 2 == 1 {
            *b = -*b;
        }
    }
    v
}

/// Recovers the canonical representation with `q0({0}) = 0` from a rate table.
pub fn extract_cancellative(table: &RateTable) -> Result<CancellativeSpec> {
    let window = table.window();
    if window.len() > MAX_WINDOW {
        return Err(Error::WindowTooLarge(window.len()));
    }
    let ones = table.rate(table.full_mask());
    if ones.abs() > WALSH_TOL {
        return Err(Error::OnesNotTrap(ones));
    }
    let b = walsh_coefficients(table);
    if b[0].abs() > WALSH_TOL {
        return Err(Error::NotCancellative(format!("constant coefficient {}", b[0])));
    }
    let k0 = 2.0 * b[1];
    if !(k0 > WALSH_TOL) {
        return Err(Error::NotCancellative(format!("k0 = {k0}")));
    }
    let mut q0 = Vec::new();
    for (a, &coef) in b.iter().enumerate().skip(2) {
        if coef.abs() <= WALSH_TOL {
            continue;
        }
        if coef > 0.0 {
            let set: Vec<String> = set_of(window, a as u64).iter().map(|z| z.to_string()).collect();
            return Err(Error::NotCancellative(format!(
                "coefficient {coef} on {{{}}}",
                set.join(",")
            )));
        }
        q0.push((set_of(window, a as u64), -2.0 * coef / k0));
    }
    let spec = CancellativeSpec::new(k0, q0)?;
    let back = spec.reconstruct(window)?;
    let worst = back
        .rates()
        .iter()
        .zip(table.rates())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if worst > RECONSTRUCT_TOL {
        return Err(Error::NotCancellative(format!("round-trip error {worst}")));
    }
    Ok(spec)
}

fn set_of(window: &[Offset], mask: u64) -> Vec<Offset> {
    (0..window.len())
        .filter(|j| (mask >> j) & 1 == 1)
        .map(|j| window[j].clone())
        .collect()
}

/// Dual kernel of the symmetric Lotka-Volterra model.
///
/// `k0 = alpha + (1 - alpha)(1 - Σp^2)/2`, `q0({y}) = alpha p(y)/k0`,
/// `q0({0, y, z}) = (1 - alpha) p(y) p(z)/k0` for distinct nonzero `y, z`.
pub fn lv_closed_form(alpha: f64, kernel: &Kernel) -> Result<CancellativeSpec> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!("alpha = {alpha}")));
    }
    let k0 = alpha + (1.0 - alpha) * (1.0 - kernel.return_mass()) / 2.0;
    let e = kernel.entries();
    let mut q0: Vec<(Vec<Offset>, f64)> = e.iter().map(|(y, p)| (vec![y.clone()], alpha * p / k0)).collect();
    if alpha < 1.0 {
        let zero = Offset::zero(kernel.dim());
        for (i, (y, py)) in e.iter().enumerate() {
            for (z, pz) in &e[i + 1..] {
                q0.push((vec![zero.clone(), y.clone(), z.clone()], (1.0 - alpha) * py * pz / k0));
            }
        }
    }
    CancellativeSpec::new(k0, q0)
}

/// True iff every supported set has odd size.
pub fn is_parity_preserving(s: &CancellativeSpec) -> bool {
    s.entries().iter().all(|(a, _)| a.len() % 2 == 1)
}

/// Outcome of the zero-trap / parity / symmetry comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EquivalenceReport {
    pub zero_trap: bool,
    pub parity: bool,
    pub symmetry: bool,
}

impl EquivalenceReport {
    pub fn consistent(&self) -> bool {
        self.zero_trap == self.parity && self.parity == self.symmetry
    }
}

/// Evaluates the three properties independently on a rate table and errors if
/// they disagree.
pub fn equivalence_for_table(table: &RateTable) -> Result<EquivalenceReport> {
    let spec = extract_cancellative(table)?;
    let report = EquivalenceReport {
        zero_trap: table.rate(0).abs() <= WALSH_TOL,
        parity: is_parity_preserving(&spec),
        symmetry: is_symmetric_within(table, WALSH_TOL),
    };
    if report.consistent() {
        Ok(report)
    } else {
        Err(Error::EquivalenceViolated {
            zero_trap: report.zero_trap,
            parity: report.parity,
            symmetry: report.symmetry,
        })
    }
}

fn is_symmetric_within(table: &RateTable, tol: f64) -> bool {
    let full = table.full_mask();
    (0..=full).all(|b| (table.rate(b) - table.rate(!b & full)).abs() <= tol)
}

pub fn check_trap_parity_symmetry_equivalence(m: &ModelSpec) -> Result<EquivalenceReport> {
    equivalence_for_table(&m.rate_table()?)
}

/// Result of comparing singleton dual weights with the voter kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct DominationReport {
    pub holds: bool,
    /// Offsets `x` with `0 < |x| < R1`, `p(x) > 0` and `q0({x}) <= p(x)/(3 k0)`.
    pub failing: Vec<Offset>,
}

/// Checks `q0({x}) > p(x)/(3 k0)` for every `x` in the support of `p` with
/// Euclidean norm below `r1`.
pub fn dual_kernel_domination(s: &CancellativeSpec, kernel: &Kernel, r1: f64) -> DominationReport {
    let failing: Vec<Offset> = kernel
        .entries()
        .iter()
        .filter(|(x, _)| (x.norm_sq() as f64) < r1 * r1)
        .filter(|(x, p)| s.weight(std::slice::from_ref(x)) <= p / (3.0 * s.k0()))
        .map(|(x, _)| x.clone())
        .collect();
    DominationReport {
        holds: failing.is_empty(),
        failing,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::nn_offsets;
    use proptest::prelude::*;

    fn nn2() -> Kernel {
        Kernel::nearest_neighbor(2)
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn fwht_matches_direct_sum() {
        let v: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut w = v.clone();
        fwht(&mut w);
        for a in 0..16usize {
            let direct: f64 = (0..16usize)
                .map(|s| if (a & s).count_ones() % 2 == 0 { v[s] } else { -v[s] })
                .sum();
            assert!(close(w[a], direct));
        }
    }

    #[test]
    fn voter_dual_is_singleton_kernel() {
        let t = ModelSpec::voter(nn2()).rate_table().unwrap();
        let s = extract_cancellative(&t).unwrap();
        assert!(close(s.k0(), 1.0));
        assert_eq!(s.entries().len(), 4);
        for (a, w) in s.entries() {
            assert_eq!(a.len(), 1);
            assert!(close(*w, 0.25));
        }
    }

    #[test]
    fn pure_product_rates_give_triples() {
        let k = nn2();
        let window = ModelSpec::voter(k.clone()).window();
        let idx: Vec<usize> = k.support().map(|z| window.iter().position(|w| w == z).unwrap()).collect();
        let t = RateTable::from_fn(window, |b| {
            let f1 = idx.iter().filter(|&&j| (b >> j) & 1 == 1).count() as f64 / 4.0;
            f1 * (1.0 - f1)
        })
        .unwrap();
        let s = extract_cancellative(&t).unwrap();
        let k0 = (1.0 - 0.25) / 2.0;
        assert!(close(s.k0(), k0));
        assert_eq!(s.entries().len(), 6);
        for (a, w) in s.entries() {
            assert_eq!(a.len(), 3);
            assert!(a.contains(&Offset::zero(2)));
            assert!(close(*w, 1.0 / 16.0 / k0));
        }
    }

    #[test]
    fn lv_closed_form_values() {
        let s = lv_closed_form(0.9, &nn2()).unwrap();
        assert!(close(s.k0(), 0.9375));
        assert!(close(s.weight(&[Offset(vec![1, 0])]), 0.24));
        let triple = [Offset::zero(2), Offset(vec![1, 0]), Offset(vec![0, 1])];
        assert!(close(s.weight(&triple), 0.1 / 16.0 / 0.9375));
        let v = lv_closed_form(1.0, &nn2()).unwrap();
        assert!(v.entries().iter().all(|(a, _)| a.len() == 1));
    }

    #[test]
    fn lv_closed_form_agrees_with_extraction() {
        for alpha in [0.0, 0.3, 0.9, 0.99] {
            for k in [nn2(), Kernel::nearest_neighbor(3)] {
                let closed = lv_closed_form(alpha, &k).unwrap();
                let t = ModelSpec::lotka_volterra(alpha, k.clone()).unwrap().rate_table().unwrap();
                let ext = extract_cancellative(&t).unwrap();
                assert!(close(closed.k0(), ext.k0()));
                assert_eq!(closed.entries().len(), ext.entries().len());
                for ((a, w), (b, v)) in closed.entries().iter().zip(ext.entries()) {
                    assert_eq!(a, b);
                    assert!(close(*w, *v));
                }
            }
        }
    }

    #[test]
    fn gv_and_av_round_trip() {
        let nb = nn_offsets(2);
        for m in [
            ModelSpec::geometric_voter(0.9, &nb).unwrap(),
            ModelSpec::geometric_voter(0.0, &nb).unwrap(),
            ModelSpec::affine_voter(0.6, nn2(), &nb).unwrap(),
            ModelSpec::threshold_voter(&nb).unwrap(),
        ] {
            let t = m.rate_table().unwrap();
            let s = extract_cancellative(&t).unwrap();
            let back = s.reconstruct(t.window()).unwrap();
            for (a, b) in back.rates().iter().zip(t.rates()) {
                assert!((a - b).abs() <= RECONSTRUCT_TOL);
            }
            assert!(is_parity_preserving(&s), "{}", m.name());
        }
    }

    #[test]
    fn extraction_errors() {
        // contact process: births at rate f1, deaths at rate 1
        let k = nn2();
        let window = ModelSpec::voter(k.clone()).window();
        let contact = RateTable::from_fn(window.clone(), |b| {
            if b & 1 == 1 {
                1.0
            } else {
                (b >> 1).count_ones() as f64 / 4.0
            }
        })
        .unwrap();
        assert!(matches!(extract_cancellative(&contact), Err(Error::OnesNotTrap(_))));
        let lv2 = ModelSpec::lotka_volterra(2.0, k).unwrap().rate_table().unwrap();
        assert!(matches!(extract_cancellative(&lv2), Err(Error::NotCancellative(_))));
        let big: Vec<Offset> = crate::lattice::box_offsets(2, 2);
        let w = window_of(2, big.iter());
        assert!(w.len() > MAX_WINDOW);
        assert!(matches!(RateTable::from_fn(w, |_| 0.0), Err(Error::WindowTooLarge(25))));
    }

    #[test]
    fn parity_preservation() {
        let e1 = Offset(vec![1, 0]);
        assert!(is_parity_preserving(&lv_closed_form(0.5, &nn2()).unwrap()));
        let even = CancellativeSpec::new(1.0, [(vec![Offset::zero(2), e1.clone()], 0.5), (vec![e1], 0.5)]).unwrap();
        assert!(!is_parity_preserving(&even));
    }

    #[test]
    fn equivalence_reports() {
        let all = EquivalenceReport {
            zero_trap: true,
            parity: true,
            symmetry: true,
        };
        for m in [
            ModelSpec::lotka_volterra(0.9, nn2()).unwrap(),
            ModelSpec::voter(nn2()),
            ModelSpec::geometric_voter(0.5, &nn_offsets(2)).unwrap(),
        ] {
            assert_eq!(check_trap_parity_symmetry_equivalence(&m).unwrap(), all);
        }
        let e1 = Offset(vec![1, 0]);
        let contactish = CancellativeSpec::new(1.0, [(vec![e1.clone()], 0.5), (vec![e1.clone(), e1.neg()], 0.5)]).unwrap();
        let t = contactish.reconstruct(&contactish.window()).unwrap();
        assert!(t.rate(0) > 0.0);
        assert_eq!(
            equivalence_for_table(&t).unwrap(),
            EquivalenceReport {
                zero_trap: false,
                parity: false,
                symmetry: false
            }
        );
    }

    #[test]
    fn domination() {
        let k = nn2();
        let voter = extract_cancellative(&ModelSpec::voter(k.clone()).rate_table().unwrap()).unwrap();
        assert!(dual_kernel_domination(&voter, &k, 10.0).holds);
        let lv = lv_closed_form(0.9, &k).unwrap();
        assert!(dual_kernel_domination(&lv, &k, 2.0).holds);
        let low = dual_kernel_domination(&lv_closed_form(0.1, &k).unwrap(), &k, 2.0);
        assert!(!low.holds);
        assert_eq!(low.failing.len(), 4);
        // alpha p/k0 > p/(3 k0) iff alpha > 1/3
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if dual_kernel_domination(&lv_closed_form(mid, &k).unwrap(), &k, 2.0).holds {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert!((hi - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn mixture_adds_k0() {
        let k = nn2();
        let vm = ModelSpec::voter(k.clone()).rate_table().unwrap();
        let prod = lv_closed_form(0.0, &k).unwrap();
        let pt = prod.reconstruct(vm.window()).unwrap();
        let sum = RateTable::new(
            vm.window().to_vec(),
            vm.rates().iter().zip(pt.rates()).map(|(a, b)| a + b).collect(),
        )
        .unwrap();
        let s = extract_cancellative(&sum).unwrap();
        assert!(close(s.k0(), 1.0 + prod.k0()));
    }

    proptest! {
        #[test]
        fn h_identities(bits in 0u64..32, set in 0u64..32) {
            prop_assert_eq!(h_mask(31, set), 1.0);
            let parity = if set.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            prop_assert_eq!(h_mask(0, set), parity);
            prop_assert_eq!(h_mask(!bits & 31, set), parity * h_mask(bits, set));
        }

        #[test]
        fn named_models_round_trip(alpha in 0.0f64..=1.0, theta in 0.0f64..=1.0) {
            let nb = nn_offsets(2);
            for m in [
                ModelSpec::lotka_volterra(alpha, nn2()).unwrap(),
                ModelSpec::affine_voter(alpha, nn2(), &nb).unwrap(),
                ModelSpec::geometric_voter(theta, &nb).unwrap(),
            ] {
                let t = m.rate_table().unwrap();
                let s = extract_cancellative(&t).unwrap();
                let back = s.reconstruct(t.window()).unwrap();
                for (a, b) in back.rates().iter().zip(t.rates()) {
                    prop_assert!((a - b).abs() <= RECONSTRUCT_TOL);
                }
            }
        }
    }
}
