//! Monte Carlo engines against the uniformized exact semigroups on a 3x3 torus.

use std::sync::Arc;

use ips_core::forward::{evolve_gillespie, evolve_graphical, EventLog};
use ips_core::lattice::nn_offsets;
use ips_core::rng::stream;
use ips_core::stats::Running;
use ips_core::{
    extract_cancellative, perturbation_view, CompiledModel, Configuration, DualChain, ExactSystem, Kernel, ModelSpec,
    SiteSet, TorusLattice,
};

const REPS: u64 = 20_000;
const XI0: u32 = 0b100_110_011;
const ZETA0: u32 = 0b000_000_011;

fn lattice() -> Arc<TorusLattice> {
    Arc::new(TorusLattice::cube(2, 3).unwrap())
}

fn models() -> Vec<ModelSpec> {
    let k = Kernel::nearest_neighbor(2);
    vec![
        ModelSpec::voter(k.clone()),
        ModelSpec::lotka_volterra(0.6, k.clone()).unwrap(),
        ModelSpec::affine_voter(0.6, k, &nn_offsets(2)).unwrap(),
    ]
}

fn config(mask: u32) -> Configuration {
    Configuration::from_fn(lattice(), |x| mask >> x & 1 == 1)
}

fn sites(mask: u32) -> SiteSet {
    (0..9).filter(|x| mask >> x & 1 == 1).collect()
}

fn assert_close(name: &str, exact: f64, r: &Running) {
    let e = r.estimate();
    let tol = 4.5 * e.stderr.max(1e-3);
    assert!((e.mean - exact).abs() <= tol, "{name}: mc {} ± {} vs exact {exact}", e.mean, e.stderr);
}

#[test]
fn gillespie_matches_exact_forward() {
    for m in models() {
        let sys = ExactSystem::new(&m, lattice()).unwrap();
        let exact = sys.forward_odd(ZETA0, &[1.5]).unwrap()[0][XI0 as usize];
        let compiled = CompiledModel::new(&m, lattice()).unwrap();
        let zeta = sites(ZETA0);
        let mut r = Running::default();
        for rep in 0..REPS {
            let mut rng = stream(11, &[rep]);
            let mut c = config(XI0);
            evolve_gillespie(&compiled, &mut c, &[1.5], &mut rng, |_, _| {}).unwrap();
            r.push((c.count_in(&zeta) % 2) as f64);
        }
        assert_close(m.name(), exact, &r);
    }
}

#[test]
fn graphical_matches_exact_forward() {
    for m in models() {
        let sys = ExactSystem::new(&m, lattice()).unwrap();
        let exact = sys.forward_odd(ZETA0, &[1.5]).unwrap()[0][XI0 as usize];
        let view = perturbation_view(&m).unwrap();
        let zeta = sites(ZETA0);
        let mut r = Running::default();
        for rep in 0..REPS {
            let log = EventLog::new(&view, lattice(), 1000 + rep).unwrap();
            let mut c = config(XI0);
            evolve_graphical(&log, &mut c, &[1.5], |_, _| {}).unwrap();
            r.push((c.count_in(&zeta) % 2) as f64);
        }
        assert_close(m.name(), exact, &r);
    }
}

#[test]
fn dual_chain_matches_exact_dual() {
    for m in models() {
        let sys = ExactSystem::new(&m, lattice()).unwrap();
        let exact = sys.dual_odd(XI0, &[1.5]).unwrap()[0][ZETA0 as usize];
        let chain = DualChain::new(&extract_cancellative(&m.rate_table().unwrap()).unwrap(), lattice()).unwrap();
        let xi = config(XI0);
        let mut r = Running::default();
        for rep in 0..REPS {
            let mut rng = stream(12, &[rep]);
            let tr = chain.trajectory(&sites(ZETA0), 1.5, &[1.5], &mut rng).unwrap();
            r.push((xi.count_in(&tr.snapshots[0].1) % 2) as f64);
        }
        assert_close(m.name(), exact, &r);
    }
}

#[test]
fn exact_sides_agree_and_start_from_indicator() {
    for m in models() {
        let sys = ExactSystem::new(&m, lattice()).unwrap();
        let fw = sys.forward_odd(ZETA0, &[0.0, 3.0]).unwrap();
        let dl = sys.dual_odd(XI0, &[0.0, 3.0]).unwrap();
        assert_eq!(fw[0][XI0 as usize], ((XI0 & ZETA0).count_ones() % 2) as f64);
        assert!((fw[1][XI0 as usize] - dl[1][ZETA0 as usize]).abs() < 1e-10);
    }
}
