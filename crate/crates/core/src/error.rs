use thiserror::Error;

#[derive(Debug, Error)]
pub enum CrError {
    #[error("variable-count mismatch: expected {expected}, got {got}")]
    VariableMismatch { expected: usize, got: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is singular at the origin")]
    SingularAtOrigin,

    #[error("substitution entry has a nonzero constant term")]
    NonzeroConstantTerm,

    #[error("determinant vanishes identically up to the cap")]
    SingularInversion,

    #[error("defining series fails genericity at 0")]
    NotGeneric,

    #[error("defining series fails the reality condition")]
    NotReal,

    #[error("target is not finitely nondegenerate up to the requested order")]
    NotFinitelyNondegenerate,

    #[error("no index choice with invertible first-order minor: {0}")]
    NoValidIndexChoice(String),

    #[error("jet mismatch at order {order}: {detail}")]
    JetMismatch { order: usize, detail: String },

    #[error("rank deficiency: {0}")]
    RankDeficiency(String),

    #[error("map is not CR submersive for the requested indices")]
    NotSubmersive,

    #[error("manifold is not of finite type within the tested range")]
    NotFiniteType,

    #[error("inconsistent seed: coefficient equation violated at degree {degree}")]
    InconsistentSeed { degree: usize },

    #[error("degreewise system is nonlinear in the top-order unknowns")]
    NonlinearSystem,

    #[error("cancellation failure: jet is not the jet of an actual map ({0})")]
    CancellationFailure(String),

    #[error("coefficient recovery failed: {0}")]
    RecoveryFailure(String),

    #[error("input error: {0}")]
    Input(String),
}
