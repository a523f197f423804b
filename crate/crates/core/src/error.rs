use thiserror::Error;

/// Every failure the simulator can report. Display strings are the stable
/// error codes that the CLI and the Python bindings surface.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("engine-closed")]
    EngineClosed,
    #[error("not-holder: lock {0} is not held by the releasing process")]
    NotHolder(usize),
    #[error("invalid-stabilizer-group: {0}")]
    InvalidStabilizerGroup(String),
    #[error("rank-mismatch: {generators} generators for {qubits} qubits")]
    RankMismatch { generators: usize, qubits: usize },
    #[error("invalid-weight: {0}")]
    InvalidWeight(String),
    #[error("unsupported-on-backend: {0}")]
    UnsupportedOnBackend(String),
    #[error("backend-mismatch")]
    BackendMismatch,
    #[error("impossible-outcome")]
    ImpossibleOutcome,
    #[error("empty-keep")]
    EmptyKeep,
    #[error("dim-mismatch: {0}")]
    DimMismatch(String),
    #[error("slot-occupied: {0}")]
    SlotOccupied(String),
    #[error("arity-mismatch: operation acts on {expected} subsystems, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("slot-empty: {0}")]
    SlotEmpty(String),
    #[error("clock-regression: slot clock {slot} is ahead of {now}")]
    ClockRegression { slot: f64, now: f64 },
    #[error("tag-schema-violation: {0}")]
    TagSchemaViolation(String),
    #[error("not-taggable: {0}")]
    NotTaggable(String),
    #[error("no-classical-route: {from} -> {to}")]
    NoClassicalRoute { from: usize, to: usize },
    #[error("no-such-node: {0}")]
    NoSuchNode(usize),
    #[error("no-such-slot: {0}")]
    NoSuchSlot(String),
    #[error("missing-pair: {0}")]
    MissingPair(String),
    #[error("mismatched-partners: {0}")]
    MismatchedPartners(String),
    #[error("invalid-leaveout")]
    InvalidLeaveOut,
    #[error("not-adjacent: {0} and {1}")]
    NotAdjacent(usize, usize),
    #[error("not-css: {0}")]
    NotCss(String),
    #[error("no-such-param: {0}")]
    NoSuchParam(String),
    #[error("config: {0}")]
    Config(String),
    #[error("invariant-breach: {0}")]
    InvariantBreach(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
