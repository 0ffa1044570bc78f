use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("kernel has mass at the zero offset")]
    ZeroOffsetMass,
    #[error("kernel is not symmetric at offset {0:?}")]
    AsymmetricKernel(Vec<i32>),
    #[error("kernel weights sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("kernel covariance is not a multiple of the identity ({0})")]
    Anisotropic(String),
    #[error("kernel support generates a proper sublattice of Z^d")]
    SublatticeConfined,
    #[error("kernel or window offset {offset:?} does not fit a torus with sides {sides:?}")]
    SupportTooLargeForTorus { offset: Vec<i32>, sides: Vec<usize> },
    #[error("empty kernel, neighbourhood or window")]
    Empty,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("offset must be nonzero")]
    ZeroOffset,
    #[error("invalid neighbourhood: {0}")]
    InvalidNeighborhood(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("model does not admit a voter-model-perturbation view")]
    NotAPerturbation,
    #[error("rate at the all-ones configuration is {0}, so 1 is not a trap")]
    OnesNotTrap(f64),
    #[error("rate function is not cancellative: {0}")]
    NotCancellative(String),
    #[error("window of {0} sites exceeds the 22-site limit")]
    WindowTooLarge(usize),
    #[error("trap/parity/symmetry equivalence violated: trap={zero_trap} parity={parity} symmetry={symmetry}")]
    EquivalenceViolated {
        zero_trap: bool,
        parity: bool,
        symmetry: bool,
    },
    #[error("dual state is empty")]
    EmptyState,
    #[error("event budget of {0} exceeded")]
    BudgetExceeded(u64),
    #[error("exact system has {0} sites, at most 12 supported")]
    StateSpaceTooLarge(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
