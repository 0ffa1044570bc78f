//! Flat `key = value` experiment configuration.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Keys may appear at most once and unknown keys are rejected. Values:
//!
//! ```text
//! command   = evolve | dual | cancellative | reaction | perc | verify
//! suite     = duality | nuhalf | oddgoal | flip2 | cct
//! model     = voter(kernel=K) | lv(alpha=A, kernel=K) | av(alpha=A, kernel=K, nbhd=N)
//!           | gv(theta=T, nbhd=N) | tvm(nbhd=N)
//! K         = nn | box(R) | exp(KAPPA)
//! N         = nn | box(R) | axis(I)
//! lattice   = 16x16
//! init      = zeros | ones | half | bernoulli(U) | checker | single | file(PATH)
//! engine    = gillespie | graphical
//! times     = 1,2,4          u_grid = 0.1,0.5     densities = 0.9,0.99
//! set       = 0,0;1,0        offset = 1,0         ks = 1,4,16
//! reps, seed, n_max, walk_side : unsigned integers
//! t_max     : float          mode = full | slab(I)
//! out       = path
//! ```

use std::fmt;
use std::str::FromStr;

use ips_core::lattice::{box_offsets, nn_offsets};
use ips_core::percolation::Mode;
use ips_core::{InitialState, Kernel, ModelSpec, Offset, TorusLattice};

use crate::error::{config_err, CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Evolve,
    Dual,
    Cancellative,
    Reaction,
    Perc,
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Duality,
    NuHalf,
    Oddgoal,
    Flip2,
    Convergence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Gillespie,
    Graphical,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelLit {
    Nearest,
    Box(u32),
    Exp(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NbhdLit {
    Nearest,
    Box(u32),
    Axis(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelLit {
    Voter { kernel: KernelLit },
    Lv { alpha: f64, kernel: KernelLit },
    Av { alpha: f64, kernel: KernelLit, nbhd: NbhdLit },
    Gv { theta: f64, nbhd: NbhdLit },
    Tvm { nbhd: NbhdLit },
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitLit {
    Zeros,
    Ones,
    Half,
    Bernoulli(f64),
    Checker,
    Single,
    File(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub command: Command,
    pub suite: Suite,
    pub model: ModelLit,
    pub lattice: Vec<usize>,
    pub init: InitLit,
    pub engine: Engine,
    pub times: Vec<f64>,
    pub reps: u64,
    pub seed: u64,
    pub set: Vec<Vec<i64>>,
    pub offset: Vec<i32>,
    pub ks: Vec<usize>,
    pub u_grid: Vec<f64>,
    pub t_max: f64,
    pub walk_side: usize,
    pub densities: Vec<f64>,
    pub n_max: usize,
    pub mode: Mode,
    pub out: Option<String>,
}

const KEYS: &[&str] = &[
    "command", "suite", "model", "lattice", "init", "engine", "times", "reps", "seed", "set", "offset", "ks",
    "u_grid", "t_max", "walk_side", "densities", "n_max", "mode", "out",
];

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            command: Command::Evolve,
            suite: Suite::Duality,
            model: ModelLit::Voter {
                kernel: KernelLit::Nearest,
            },
            lattice: vec![16, 16],
            init: InitLit::Half,
            engine: Engine::Gillespie,
            times: vec![1.0, 2.0, 4.0],
            reps: 100,
            seed: 1,
            set: vec![vec![0, 0], vec![1, 0]],
            offset: vec![1, 0],
            ks: vec![1, 4, 16],
            u_grid: (1..10).map(|i| i as f64 / 10.0).collect(),
            t_max: 100.0,
            walk_side: 32,
            densities: vec![0.7, 0.8, 0.9],
            n_max: 100,
            mode: Mode::Slab(0),
            out: None,
        }
    }
}

fn join<T: fmt::Display>(v: &[T], sep: &str) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(sep)
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::Evolve => "evolve",
            Command::Dual => "dual",
            Command::Cancellative => "cancellative",
            Command::Reaction => "reaction",
            Command::Perc => "perc",
            Command::Verify => "verify",
        })
    }
}

impl FromStr for Command {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "evolve" => Command::Evolve,
            "dual" => Command::Dual,
            "cancellative" => Command::Cancellative,
            "reaction" => Command::Reaction,
            "perc" => Command::Perc,
            "verify" => Command::Verify,
            _ => return Err(format!("unknown command `{s}`")),
        })
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Duality => "duality",
            Suite::NuHalf => "nuhalf",
            Suite::Oddgoal => "oddgoal",
            Suite::Flip2 => "flip2",
            Suite::Convergence => "cct",
        })
    }
}

impl FromStr for Suite {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "duality" => Suite::Duality,
            "nuhalf" => Suite::NuHalf,
            "oddgoal" => Suite::Oddgoal,
            "flip2" => Suite::Flip2,
            "cct" => Suite::Convergence,
            _ => return Err(format!("unknown suite `{s}`")),
        })
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Gillespie => "gillespie",
            Engine::Graphical => "graphical",
        })
    }
}

impl FromStr for Engine {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gillespie" => Ok(Engine::Gillespie),
            "graphical" => Ok(Engine::Graphical),
            _ => Err(format!("unknown engine `{s}`")),
        }
    }
}

/// `name` or `name(arg)`.
fn call(s: &str) -> Result<(&str, Option<&str>), String> {
    match s.find('(') {
        None => Ok((s, None)),
        Some(i) => {
            let inner = s[i + 1..]
                .strip_suffix(')')
                .ok_or_else(|| format!("missing `)` in `{s}`"))?;
            Ok((s[..i].trim(), Some(inner.trim())))
        }
    }
}

fn num<T: FromStr>(s: Option<&str>, what: &str) -> Result<T, String> {
    let s = s.ok_or_else(|| format!("{what} needs an argument"))?;
    s.parse().map_err(|_| format!("bad {what} argument `{s}`"))
}

impl fmt::Display for KernelLit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelLit::Nearest => f.write_str("nn"),
            KernelLit::Box(r) => write!(f, "box({r})"),
            KernelLit::Exp(k) => write!(f, "exp({k})"),
        }
    }
}

impl FromStr for KernelLit {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match call(s)? {
            ("nn", None) => Ok(KernelLit::Nearest),
            ("box", a) => Ok(KernelLit::Box(num(a, "box")?)),
            ("exp", a) => Ok(KernelLit::Exp(num(a, "exp")?)),
            _ => Err(format!("unknown kernel `{s}`")),
        }
    }
}

impl KernelLit {
    pub fn build(&self, dim: usize) -> ips_core::Result<Kernel> {
        match *self {
            KernelLit::Nearest => Ok(Kernel::nearest_neighbor(dim)),
            KernelLit::Box(r) => {
                let offs: Vec<Offset> = box_offsets(r, dim).into_iter().filter(|z| !z.is_zero()).collect();
                Kernel::uniform(&offs)
            }
            KernelLit::Exp(k) => Kernel::default_exponential(dim, k).map(|(k, _, _)| k),
        }
    }
}

impl fmt::Display for NbhdLit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NbhdLit::Nearest => f.write_str("nn"),
            NbhdLit::Box(r) => write!(f, "box({r})"),
            NbhdLit::Axis(i) => write!(f, "axis({i})"),
        }
    }
}

impl FromStr for NbhdLit {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match call(s)? {
            ("nn", None) => Ok(NbhdLit::Nearest),
            ("box", a) => Ok(NbhdLit::Box(num(a, "box")?)),
            ("axis", a) => Ok(NbhdLit::Axis(num(a, "axis")?)),
            _ => Err(format!("unknown neighbourhood `{s}`")),
        }
    }
}

impl NbhdLit {
    pub fn build(&self, dim: usize) -> ips_core::Result<Vec<Offset>> {
        match *self {
            NbhdLit::Nearest => Ok(nn_offsets(dim)),
            NbhdLit::Box(r) => Ok(box_offsets(r, dim).into_iter().filter(|z| !z.is_zero()).collect()),
            NbhdLit::Axis(i) if i < dim => Ok(vec![Offset::unit(dim, i, 1), Offset::unit(dim, i, -1)]),
            NbhdLit::Axis(i) => Err(ips_core::Error::InvalidParameter(format!("axis {i} in dimension {dim}"))),
        }
    }
}

impl fmt::Display for ModelLit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelLit::Voter { kernel } => write!(f, "voter(kernel={kernel})"),
            ModelLit::Lv { alpha, kernel } => write!(f, "lv(alpha={alpha}, kernel={kernel})"),
            ModelLit::Av { alpha, kernel, nbhd } => write!(f, "av(alpha={alpha}, kernel={kernel}, nbhd={nbhd})"),
            ModelLit::Gv { theta, nbhd } => write!(f, "gv(theta={theta}, nbhd={nbhd})"),
            ModelLit::Tvm { nbhd } => write!(f, "tvm(nbhd={nbhd})"),
        }
    }
}

/// Splits on commas outside parentheses.
fn split_top(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let (mut depth, mut start) = (0i32, 0);
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(s[start..].trim());
    out
}

impl FromStr for ModelLit {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (name, args) = call(s)?;
        let mut kernel = KernelLit::Nearest;
        let mut nbhd = NbhdLit::Nearest;
        let mut param: Option<f64> = None;
        let allowed: &[&str] = match name {
            "voter" => &["kernel"],
            "lv" => &["alpha", "kernel"],
            "av" => &["alpha", "kernel", "nbhd"],
            "gv" => &["theta", "nbhd"],
            "tvm" => &["nbhd"],
            _ => return Err(format!("unknown model `{name}`")),
        };
        for arg in args.map(split_top).unwrap_or_default().into_iter().filter(|a| !a.is_empty()) {
            let (k, v) = arg.split_once('=').ok_or_else(|| format!("expected key=value, got `{arg}`"))?;
            let (k, v) = (k.trim(), v.trim());
            if !allowed.contains(&k) {
                return Err(format!("model `{name}` takes no `{k}`"));
            }
            match k {
                "kernel" => kernel = v.parse()?,
                "nbhd" => nbhd = v.parse()?,
                _ => param = Some(v.parse().map_err(|_| format!("bad {k} `{v}`"))?),
            }
        }
        let need = |p: Option<f64>| p.ok_or_else(|| format!("model `{name}` needs `{}`", allowed[0]));
        Ok(match name {
            "voter" => ModelLit::Voter { kernel },
            "lv" => ModelLit::Lv {
                alpha: need(param)?,
                kernel,
            },
            "av" => ModelLit::Av {
                alpha: need(param)?,
                kernel,
                nbhd,
            },
            "gv" => ModelLit::Gv {
                theta: need(param)?,
                nbhd,
            },
            _ => ModelLit::Tvm { nbhd },
        })
    }
}

impl ModelLit {
    pub fn build(&self, dim: usize) -> ips_core::Result<ModelSpec> {
        match self {
            ModelLit::Voter { kernel } => Ok(ModelSpec::voter(kernel.build(dim)?)),
            ModelLit::Lv { alpha, kernel } => ModelSpec::lotka_volterra(*alpha, kernel.build(dim)?),
            ModelLit::Av { alpha, kernel, nbhd } => ModelSpec::affine_voter(*alpha, kernel.build(dim)?, &nbhd.build(dim)?),
            ModelLit::Gv { theta, nbhd } => ModelSpec::geometric_voter(*theta, &nbhd.build(dim)?),
            ModelLit::Tvm { nbhd } => ModelSpec::threshold_voter(&nbhd.build(dim)?),
        }
    }
}

impl fmt::Display for InitLit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitLit::Zeros => f.write_str("zeros"),
            InitLit::Ones => f.write_str("ones"),
            InitLit::Half => f.write_str("half"),
            InitLit::Bernoulli(u) => write!(f, "bernoulli({u})"),
            InitLit::Checker => f.write_str("checker"),
            InitLit::Single => f.write_str("single"),
            InitLit::File(p) => write!(f, "file({p})"),
        }
    }
}

impl FromStr for InitLit {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match call(s)? {
            ("zeros", None) => InitLit::Zeros,
            ("ones", None) => InitLit::Ones,
            ("half", None) => InitLit::Half,
            ("bernoulli", a) => InitLit::Bernoulli(num(a, "bernoulli")?),
            ("checker", None) => InitLit::Checker,
            ("single", None) => InitLit::Single,
            ("file", Some(p)) if !p.is_empty() => InitLit::File(p.to_string()),
            _ => return Err(format!("unknown initial state `{s}`")),
        })
    }
}

impl InitLit {
    pub fn build(&self, lattice: &std::sync::Arc<TorusLattice>) -> ips_core::Result<InitialState> {
        Ok(match self {
            InitLit::Zeros => InitialState::Zeros,
            InitLit::Ones => InitialState::Ones,
            InitLit::Half => InitialState::Half,
            InitLit::Bernoulli(u) => InitialState::Bernoulli(*u),
            InitLit::Checker => InitialState::Checker,
            InitLit::Single => InitialState::Single,
            InitLit::File(p) => InitialState::from_file(std::path::Path::new(p), lattice)?,
        })
    }
}

fn mode_str(m: Mode) -> String {
    match m {
        Mode::Full => "full".into(),
        Mode::Slab(k) => format!("slab({k})"),
    }
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match call(s)? {
        ("full", None) => Ok(Mode::Full),
        ("slab", a) => Ok(Mode::Slab(num(a, "slab")?)),
        _ => Err(format!("unknown mode `{s}`")),
    }
}

fn list<T: FromStr>(s: &str, sep: char) -> Result<Vec<T>, String> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(sep)
        .map(|t| t.trim().parse::<T>().map_err(|_| format!("bad list entry `{}`", t.trim())))
        .collect()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = Self::default();
        let mut seen: Vec<&str> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("");
            if body.trim().is_empty() {
                continue;
            }
            let key_col = body.len() - body.trim_start().len() + 1;
            let (k, v) = body
                .split_once('=')
                .ok_or_else(|| config_err(line, key_col, "expected `key = value`"))?;
            let key = k.trim();
            let value = v.trim();
            let value_col = k.len() + 1 + (v.len() - v.trim_start().len()) + 1;
            let Some(&known) = KEYS.iter().find(|&&x| x == key) else {
                return Err(config_err(line, key_col, format!("unknown key `{key}`")));
            };
            if seen.contains(&known) {
                return Err(config_err(line, key_col, format!("duplicate key `{key}`")));
            }
            seen.push(known);
            cfg.assign(known, value).map_err(|m| config_err(line, value_col, m))?;
        }
        Ok(cfg)
    }

    fn assign(&mut self, key: &str, v: &str) -> Result<(), String> {
        let int = |v: &str| v.parse::<u64>().map_err(|_| format!("`{key}` expects an unsigned integer"));
        match key {
            "command" => self.command = v.parse()?,
            "suite" => self.suite = v.parse()?,
            "model" => self.model = v.parse()?,
            "lattice" => {
                self.lattice = list(v, 'x')?;
                if self.lattice.is_empty() {
                    return Err("lattice needs at least one side".into());
                }
            }
            "init" => self.init = v.parse()?,
            "engine" => self.engine = v.parse()?,
            "times" => self.times = list(v, ',')?,
            "reps" => self.reps = int(v)?,
            "seed" => self.seed = int(v)?,
            "set" => {
                self.set = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(';').map(|p| list(p, ',')).collect::<Result<_, _>>()?
                }
            }
            "offset" => self.offset = list(v, ',')?,
            "ks" => self.ks = list(v, ',')?,
            "u_grid" => self.u_grid = list(v, ',')?,
            "t_max" => self.t_max = v.parse().map_err(|_| "`t_max` expects a number".to_string())?,
            "walk_side" => self.walk_side = int(v)? as usize,
            "densities" => self.densities = list(v, ',')?,
            "n_max" => self.n_max = int(v)? as usize,
            "mode" => self.mode = parse_mode(v)?,
            "out" => self.out = (!v.is_empty()).then(|| v.to_string()),
            _ => unreachable!("key list and match arms agree"),
        }
        Ok(())
    }

    /// Canonical text form; `parse(serialize(c)) == c`.
    pub fn serialize(&self) -> String {
        let set = self.set.iter().map(|x| join(x, ",")).collect::<Vec<_>>().join(";");
        let lines = [
            ("command", self.command.to_string()),
            ("suite", self.suite.to_string()),
            ("model", self.model.to_string()),
            ("lattice", join(&self.lattice, "x")),
            ("init", self.init.to_string()),
            ("engine", self.engine.to_string()),
            ("times", join(&self.times, ",")),
            ("reps", self.reps.to_string()),
            ("seed", self.seed.to_string()),
            ("set", set),
            ("offset", join(&self.offset, ",")),
            ("ks", join(&self.ks, ",")),
            ("u_grid", join(&self.u_grid, ",")),
            ("t_max", self.t_max.to_string()),
            ("walk_side", self.walk_side.to_string()),
            ("densities", join(&self.densities, ",")),
            ("n_max", self.n_max.to_string()),
            ("mode", mode_str(self.mode)),
            ("out", self.out.clone().unwrap_or_default()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn from_file(path: &std::path::Path) -> CliResult<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(CliError::Io)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = ExperimentConfig::default();
        let text = c.serialize();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), c);
    }

    #[test]
    fn every_key_round_trips() {
        let text = "command = verify\nsuite = cct\nmodel = av(alpha=0.9, kernel=exp(0.5), nbhd=axis(1))\n\
                    lattice = 8x8x8\ninit = bernoulli(0.3)\nengine = graphical\ntimes = 0.1,1,10\nreps = 7\n\
                    seed = 42\nset = 0,0,0;1,0,0\noffset = 0,1,0\nks = 1,2\nu_grid = 0.25,0.75\nt_max = 50.5\n\
                    walk_side = 16\ndensities = 0.99923\nn_max = 200\nmode = full\nout = x.csv\n";
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.serialize(), text);
        assert_eq!(ExperimentConfig::parse(&c.serialize()).unwrap(), c);
    }

    #[test]
    fn comments_blanks_and_defaults() {
        let c = ExperimentConfig::parse("# header\n\n  model = lv(alpha=0.95)  # trailing\n").unwrap();
        assert_eq!(
            c.model,
            ModelLit::Lv {
                alpha: 0.95,
                kernel: KernelLit::Nearest
            }
        );
        assert_eq!(c.reps, ExperimentConfig::default().reps);
    }

    #[test]
    fn unknown_key_names_key_and_position() {
        let err = ExperimentConfig::parse("reps = 3\n  colour = red\n").unwrap_err();
        match err {
            CliError::Config { line, col, msg } => {
                assert_eq!((line, col), (2, 3));
                assert!(msg.contains("colour"));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn bad_values_point_at_the_value() {
        match ExperimentConfig::parse("reps = many").unwrap_err() {
            CliError::Config { line, col, .. } => assert_eq!((line, col), (1, 8)),
            e => panic!("{e}"),
        }
        assert!(ExperimentConfig::parse("model = lv(kernel=nn)").is_err());
        assert!(ExperimentConfig::parse("model = gv(alpha=0.5, nbhd=nn)").is_err());
        assert!(ExperimentConfig::parse("reps = 1\nreps = 2").is_err());
        assert!(ExperimentConfig::parse("just text").is_err());
    }

    #[test]
    fn literals_build_models() {
        for lit in ["voter(kernel=box(1))", "lv(alpha=0.9)", "av(alpha=0.5, nbhd=box(1))", "gv(theta=0.8)", "tvm()"] {
            let m: ModelLit = lit.parse().unwrap();
            assert!(m.build(2).is_ok(), "{lit}");
            assert_eq!(m.to_string().parse::<ModelLit>().unwrap(), m);
        }
        assert!("lv(alpha=0.9, kernel=exp(0.7))".parse::<ModelLit>().unwrap().build(1).is_ok());
    }
}
