//! Dispatch from a config to core routines.

use std::sync::Arc;
use std::time::Instant;

use ips_core::cancellative::{equivalence_for_table, extract_cancellative};
use ips_core::dual::dual_survival;
use ips_core::experiments::{
    complete_convergence_probe, exact_duality_check, flip2_probe, mc_duality_check, nu_half_probe, oddgoal_probe,
    random_pairs, MAX_EXACT_SITES,
};
use ips_core::forward::{evolve_graphical, moments, replicate_observable};
use ips_core::percolation::survival_sweep;
use ips_core::reaction::{estimate_f, fprime_zero};
use ips_core::rng::{stream, TAG_FORWARD};
use ips_core::{
    perturbation_view, CompiledModel, Configuration, DualChain, EventLog, Estimate, ModelSpec, Offset, SiteSet,
    TorusLattice,
};
use rayon::prelude::*;

use crate::config::{Command, Engine, ExperimentConfig, Suite};
use crate::error::CliResult;
use crate::table::{estimate_cells, Cell, ResultTable};

/// A table plus, for `verify`, whether every gate passed.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub table: ResultTable,
    pub passed: Option<bool>,
}

struct Setup {
    lattice: Arc<TorusLattice>,
    model: ModelSpec,
}

fn setup(cfg: &ExperimentConfig) -> CliResult<Setup> {
    let lattice = Arc::new(TorusLattice::new(cfg.lattice.clone())?);
    let model = cfg.model.build(lattice.dim())?;
    Ok(Setup { lattice, model })
}

fn site_set(cfg: &ExperimentConfig, lattice: &TorusLattice) -> CliResult<SiteSet> {
    for x in &cfg.set {
        if x.len() != lattice.dim() {
            return Err(ips_core::Error::DimensionMismatch {
                expected: lattice.dim(),
                got: x.len(),
            }
            .into());
        }
    }
    Ok(cfg.set.iter().map(|x| lattice.site_of(x)).collect())
}

fn last_time(cfg: &ExperimentConfig) -> f64 {
    cfg.times.last().copied().unwrap_or(1.0)
}

pub fn run(cfg: &ExperimentConfig) -> CliResult<RunOutput> {
    let started = Instant::now();
    let mut out = match cfg.command {
        Command::Evolve => evolve(cfg)?,
        Command::Dual => dual(cfg)?,
        Command::Cancellative => cancellative(cfg)?,
        Command::Reaction => reaction(cfg)?,
        Command::Perc => perc(cfg)?,
        Command::Verify => verify(cfg)?,
    };
    out.table.stamp(cfg);
    out.table.meta("wall_seconds", format!("{:.3}", started.elapsed().as_secs_f64()));
    Ok(out)
}

fn plain(table: ResultTable) -> RunOutput {
    RunOutput { table, passed: None }
}

fn evolve(cfg: &ExperimentConfig) -> CliResult<RunOutput> {
    let s = setup(cfg)?;
    let init = cfg.init.build(&s.lattice)?;
    let a = site_set(cfg, &s.lattice)?;
    let observe = |c: &Configuration| [c.density(), (c.count_in(&a) % 2) as f64];
    let per_time: Vec<[Estimate; 2]> = match cfg.engine {
        Engine::Gillespie => {
            let compiled = CompiledModel::new(&s.model, s.lattice.clone())?;
            let d = replicate_observable(&compiled, &init, &cfg.times, cfg.reps, cfg.seed, |c| observe(c)[0])?;
            let o = replicate_observable(&compiled, &init, &cfg.times, cfg.reps, cfg.seed, |c| observe(c)[1])?;
            d.into_iter().zip(o).map(|(x, y)| [x, y]).collect()
        }
        Engine::Graphical => {
            let view = perturbation_view(&s.model)?;
            let rows = (0..cfg.reps)
                .into_par_iter()
                .map(|r| -> ips_core::Result<Vec<[f64; 2]>> {
                    let mut rng = stream(cfg.seed, &[TAG_FORWARD, 3, r]);
                    let mut c = init.realize(&s.lattice, &mut rng)?;
                    let log = EventLog::new(&view, s.lattice.clone(), ips_core::rng::mix(cfg.seed, &[TAG_FORWARD, 4, r]))?;
                    let mut out = vec![[0.0; 2]; cfg.times.len()];
                    evolve_graphical(&log, &mut c, &cfg.times, |i, c| out[i] = observe(c))?;
                    Ok(out)
                })
                .collect::<ips_core::Result<Vec<_>>>()?;
            (0..cfg.times.len())
                .map(|i| {
                    let col = |k: usize| {
                        let (s1, s2) = rows.iter().fold((0.0, 0.0), |(a, b), r| (a + r[i][k], b + r[i][k] * r[i][k]));
                        moments(s1, s2, cfg.reps)
                    };
                    [col(0), col(1)]
                })
                .collect()
        }
    };
    let mut t = ResultTable::new()
        .column("time", "")
        .estimate_column("density", "")
        .estimate_column("odd_on_set", "prob");
    for (time, [d, o]) in cfg.times.iter().zip(per_time) {
        let [a, b] = estimate_cells(d);
        let [c, e] = estimate_cells(o);
        t.push(vec![(*time).into(), a, b, c, e]);
    }
    t.meta("model", s.model.name());
    Ok(plain(t))
}

fn chain(s: &Setup) -> CliResult<DualChain> {
    let spec = extract_cancellative(&s.model.rate_table()?)?;
    Ok(DualChain::new(&spec, s.lattice.clone())?)
}

fn dual(cfg: &ExperimentConfig) -> CliResult<RunOutput> {
    let s = setup(cfg)?;
    let a = site_set(cfg, &s.lattice)?;
    let curve = dual_survival(&chain(&s)?, &a, &cfg.times, cfg.reps, cfg.seed)?;
    let mut t = ResultTable::new().column("time", "").estimate_column("survival", "prob");
    for (time, e) in cfg.times.iter().zip(curve.estimates()) {
        let [m, se] = estimate_cells(e);
        t.push(vec![(*time).into(), m, se]);
    }
    Ok(plain(t))
}

fn cancellative(cfg: &ExperimentConfig) -> CliResult<RunOutput> {
    let s = setup(cfg)?;
    let table = s.model.rate_table()?;
    let spec = extract_cancellative(&table)?;
    let eq = equivalence_for_table(&table)?;
    let mut t = ResultTable::new().column("set", "offsets").column("weight", "prob");
    for (set, w) in spec.entries() {
        let label = set.iter().map(|z| z.to_string()).collect::<Vec<_>>().join(" ");
        t.push(vec![label.into(), (*w).into()]);
    }
    t.meta("k0", spec.k0());
    t.meta("zero_trap", eq.zero_trap);
    t.meta("parity", eq.parity);
    t.meta("symmetry", eq.symmetry);
    Ok(plain(t))
}

fn reaction(cfg: &ExperimentConfig) -> CliResult<RunOutput> {
    let s = setup(cfg)?;
    let view = perturbation_view(&s.model)?;
    let curve = estimate_f(&view, &cfg.u_grid, cfg.reps, cfg.t_max, cfg.walk_side, cfg.seed)?;
    let d = fprime_zero(&view, cfg.reps, cfg.t_max, cfg.walk_side, cfg.seed)?;
    let mut t = ResultTable::new().column("u", "").estimate_column("f", "");
    for (u, e) in cfg.u_grid.iter().zip(&curve.f) {
        let [m, se] = estimate_cells(*e);
        t.push(vec![(*u).into(), m, se]);
    }
    t.meta("cubic_coefficient", curve.cubic_coefficient());
    if let Some(c) = curve.closed_form {
        t.meta("triple_sum", format!("{} ± {}", c.mean, c.stderr));
    }
    t.meta("fprime_zero", format!("{} ± {}", d.estimate.mean, d.estimate.stderr));
    t.meta("late_meeting_rate", curve.late_rate);
    t.meta("wrap_meetings", curve.wrap_meetings);
    t.meta("non_equilibrium", curve.non_equilibrium);
    Ok(plain(t))
}

fn perc(cfg: &ExperimentConfig) -> CliResult<RunOutput> {
    let sweep = survival_sweep(&cfg.lattice, cfg.n_max, &cfg.densities, cfg.reps, cfg.seed, cfg.mode)?;
    let mut t = ResultTable::new().column("density", "").estimate_column("survival", "prob");
    for (p, e) in cfg.densities.iter().zip(sweep) {
        let [m, se] = estimate_cells(e);
        t.push(vec![(*p).into(), m, se]);
    }
    t.meta("n_max", cfg.n_max);
    Ok(plain(t))
}

fn verify(cfg: &ExperimentConfig) -> CliResult<RunOutput> {
    let s = setup(cfg)?;
    let (table, passed) = match cfg.suite {
        Suite::Duality if s.lattice.len() <= MAX_EXACT_SITES => {
            let pairs = random_pairs(s.lattice.len(), 20, cfg.seed);
            let v = exact_duality_check(&s.model, s.lattice.clone(), &cfg.times, &pairs)?;
            let mut t = ResultTable::new().column("pairs", "").column("max_violation", "prob");
            t.push(vec![pairs.len().into(), v.into()]);
            (t, v <= 1e-8)
        }
        Suite::Duality => {
            let mut rng = stream(cfg.seed, &[TAG_FORWARD, 5]);
            let xi0 = cfg.init.build(&s.lattice)?.realize(&s.lattice, &mut rng)?;
            let a = site_set(cfg, &s.lattice)?;
            let t_end = last_time(cfg);
            let r = mc_duality_check(&s.model, &xi0, &a, t_end, Some((t_end / 2.0, t_end / 2.0)), cfg.reps, cfg.seed)?;
            let mut t = ResultTable::new()
                .estimate_column("forward", "prob")
                .estimate_column("dual", "prob")
                .estimate_column("split", "prob")
                .column("max_abs_z", "");
            let mut row: Vec<Cell> = Vec::new();
            row.extend(estimate_cells(r.lhs));
            row.extend(estimate_cells(r.rhs));
            row.extend(estimate_cells(r.split.unwrap_or(Estimate::new(f64::NAN, f64::NAN))));
            row.push(r.max_z.into());
            t.push(row);
            (t, r.max_z <= 3.0)
        }
        Suite::NuHalf => {
            let a = site_set(cfg, &s.lattice)?;
            let r = nu_half_probe(&s.model, s.lattice.clone(), &a, &cfg.times, cfg.reps, cfg.seed)?;
            let mut t = ResultTable::new()
                .column("time", "")
                .estimate_column("odd_forward", "prob")
                .estimate_column("half_dual_survival", "prob")
                .column("z", "");
            for i in 0..r.times.len() {
                let mut row: Vec<Cell> = vec![r.times[i].into()];
                row.extend(estimate_cells(r.forward[i]));
                row.extend(estimate_cells(r.dual_half[i]));
                row.push(r.z_scores()[i].into());
                t.push(row);
            }
            (t, r.columns_agree(3.0) && r.nonincreasing(3.0))
        }
        Suite::Oddgoal => {
            let x0 = Offset(cfg.offset.clone());
            let r = oddgoal_probe(&s.model, s.lattice.clone(), &x0, &cfg.ks, last_time(cfg), cfg.reps, cfg.seed)?;
            let mut t = ResultTable::new().column("k", "").estimate_column("deviation", "prob");
            for (k, e) in r.ks.iter().zip(r.deviations()) {
                let [m, se] = estimate_cells(e);
                t.push(vec![(*k).into(), m, se]);
            }
            let last_ok = r.deviations().last().is_none_or(|e| e.mean <= 0.05);
            (t, r.decreasing(1.0) && last_ok)
        }
        Suite::Flip2 => {
            let x0 = Offset(cfg.offset.clone());
            let r = flip2_probe(&s.model, s.lattice.clone(), &x0, &cfg.ks, &cfg.times, cfg.reps, cfg.seed)?;
            let mut t = ResultTable::new()
                .column("size", "")
                .column("time", "")
                .estimate_column("no_pair", "prob");
            for (i, size) in r.sizes.iter().enumerate() {
                for (j, time) in r.times.iter().enumerate() {
                    let [m, se] = estimate_cells(r.values[i][j]);
                    t.push(vec![(*size).into(), (*time).into(), m, se]);
                }
            }
            let monotone = r.values.windows(2).all(|w| w[1].iter().zip(&w[0]).all(|(b, a)| b.mean <= a.mean));
            (t, monotone)
        }
        Suite::Convergence => {
            let init = cfg.init.build(&s.lattice)?;
            let a = site_set(cfg, &s.lattice)?;
            let r = complete_convergence_probe(&s.model, s.lattice.clone(), &[init], &[a], last_time(cfg), cfg.reps, cfg.seed)?;
            let mut t = ResultTable::new()
                .estimate_column("direct", "prob")
                .estimate_column("mixture", "prob")
                .column("z", "")
                .column("horizon_sensitive", "");
            for row in &r.rows {
                let mut cells: Vec<Cell> = Vec::new();
                cells.extend(estimate_cells(row.direct));
                cells.extend(estimate_cells(row.predicted));
                cells.push(row.z.into());
                cells.push(r.hitting[row.init].horizon_sensitive.into());
                t.push(cells);
            }
            (t, r.agrees(3.0))
        }
    };
    let mut table = table;
    table.meta("suite", cfg.suite);
    table.meta("passed", passed);
    Ok(RunOutput {
        table,
        passed: Some(passed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::parse(text).unwrap()
    }

    #[test]
    fn minimal_voter_config_gives_density_trajectory() {
        let out = run(&cfg("reps = 20\nlattice = 8x8")).unwrap();
        assert_eq!(out.table.rows.len(), 3);
        assert!(out.passed.is_none());
        assert!(out.table.column_index("density_stderr").is_some());
    }

    #[test]
    fn every_command_runs() {
        for c in [
            "command = dual\nmodel = lv(alpha=0.9)\nreps = 20",
            "command = cancellative\nmodel = gv(theta=0.7)",
            "command = reaction\nmodel = lv(alpha=0.9)\nlattice = 8x8x8\nreps = 20\nt_max = 5\nwalk_side = 8\nu_grid = 0.2,0.5",
            "command = perc\nlattice = 64\nreps = 20\nn_max = 20\nmode = slab(0)",
            "engine = graphical\nmodel = lv(alpha=0.9)\nreps = 10\nlattice = 8x8",
        ] {
            let out = run(&cfg(c)).unwrap();
            assert!(!out.table.rows.is_empty(), "{c}");
        }
    }

    #[test]
    fn verify_exact_duality_passes_on_tiny_torus() {
        let out = run(&cfg("command = verify\nsuite = duality\nmodel = lv(alpha=0.9)\nlattice = 3x3\ntimes = 0.1,1")).unwrap();
        assert_eq!(out.passed, Some(true));
    }

    #[test]
    fn set_with_wrong_dimension_is_an_error() {
        assert!(run(&cfg("command = dual\nset = 0,0,0")).is_err());
    }
}
