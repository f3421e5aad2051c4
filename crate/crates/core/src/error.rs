use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("tree depth must be at least 1")]
    ZeroDepth,
    #[error("address has {got} bits, expected {expected}")]
    AddressLength { expected: usize, got: usize },
    #[error("router {0} does not exist")]
    NoSuchRouter(usize),
    #[error("grain size {d} is outside 1..={max}")]
    GrainSize { d: usize, max: usize },
    #[error("graining offset {u} is outside 1..={max}")]
    GrainOffset { u: usize, max: usize },
    #[error("channel {index} fits no graining up to locality {max_d}")]
    Unassignable { index: usize, max_d: usize },
    #[error("digit {digit} at site {site} exceeds radix {radix}")]
    Radix { site: usize, digit: u8, radix: u8 },
    #[error("expected {expected} digits, got {got}")]
    DigitCount { expected: usize, got: usize },
    #[error("site {0} is out of range")]
    Site(usize),
    #[error("sites of one gate must be distinct")]
    RepeatedSite,
    #[error("matrix is not unitary (deviation {0:e})")]
    NotUnitary(f64),
    #[error("matrix of dimension {got} does not fit a site of radix {radix}")]
    MatrixShape { got: usize, radix: u8 },
    #[error("Kraus element has norm {0} > 1")]
    KrausNorm(f64),
    #[error("register layouts do not match")]
    LayoutMismatch,
    #[error("memory has {got} cells, expected {expected}")]
    MemoryLength { expected: usize, got: usize },
    #[error("bus register is not in the |+> state")]
    BusNotPlus,
    #[error("circuit has no second bus register")]
    NoBusPrime,
    #[error("channel is invalid: {0}")]
    Channel(String),
    #[error("operation needs Bernoulli channels, location {0} is not")]
    NotBernoulli(usize),
    #[error("location {0} has a sub-channel that is not mixed-Pauli")]
    NotPauli(usize),
    #[error("Kraus element K0 is singular")]
    Singular,
    #[error("{what} of {got} exceeds the cap of {cap}")]
    Cap { what: &'static str, got: f64, cap: f64 },
    #[error("infidelity {0} is outside [0, 1]")]
    Infidelity(f64),
    #[error("unsupported dimension {0}")]
    Dimension(usize),
    #[error("twirl frame does not match the circuit: {0}")]
    Frame(String),
    #[error("pending flip on site {site} at layer {layer} was never consumed")]
    UnconsumedFlip { layer: usize, site: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("fit needs {0}")]
    Fit(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
