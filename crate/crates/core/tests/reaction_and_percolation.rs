use ips_core::lattice::nn_offsets;
use ips_core::percolation::{front_evolve, survival_estimate, Mode, PercField};
use ips_core::reaction::{cubic, estimate_f, fprime_zero};
use ips_core::{perturbation_view, Kernel, ModelSpec};

const GRID: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

#[test]
fn geometric_voter_curve_is_its_triple_sum_cubic() {
    let view = perturbation_view(&ModelSpec::geometric_voter(0.7, &nn_offsets(3)).unwrap()).unwrap();
    let curve = estimate_f(&view, &GRID, 2000, 200.0, 16, 4).unwrap();
    let closed = curve.closed_form.unwrap();
    let c = curve.cubic_coefficient();
    assert!((closed.mean - c).abs() < 1e-9 * c.abs().max(1.0));
    assert!(c > 0.0);
    for (u, f) in GRID.iter().zip(&curve.f) {
        assert!((f.mean - c * cubic(*u)).abs() < 1e-9);
    }
}

#[test]
fn affine_voter_derivative_is_positive_in_three_dimensions() {
    let view = perturbation_view(
        &ModelSpec::affine_voter(0.5, Kernel::nearest_neighbor(3), &nn_offsets(3)).unwrap(),
    )
    .unwrap();
    let r = fprime_zero(&view, 2000, 200.0, 16, 5).unwrap();
    let closed = r.closed_form.unwrap();
    assert!((r.estimate.mean - closed.mean).abs() < 1e-9);
    assert!(r.estimate.ci95().0 > 0.0);
}

#[test]
fn percolation_fronts_are_monotone_in_density() {
    let densities = [0.55, 0.65, 0.75, 0.9];
    for seed in 0..20 {
        let mut prev: Option<Vec<usize>> = None;
        for &p in &densities {
            let field = PercField::new(vec![64, 64], 40, p, seed).unwrap();
            let front = front_evolve(&field, &[vec![0, 0]], 40, Mode::Full).unwrap();
            let sizes: Vec<usize> = (0..=40).map(|m| front.size(m)).collect();
            if let Some(prev) = &prev {
                assert!(prev.iter().zip(&sizes).all(|(a, b)| a <= b), "seed {seed} density {p}");
            }
            prev = Some(sizes);
        }
    }
}

#[test]
fn survival_rises_across_the_critical_region() {
    let low = survival_estimate(&[128], 100, 0.55, 400, 6, Mode::Full).unwrap();
    let high = survival_estimate(&[128], 100, 0.8, 400, 6, Mode::Full).unwrap();
    assert!(low.mean < 0.1);
    assert!(high.mean > 0.5);
}
