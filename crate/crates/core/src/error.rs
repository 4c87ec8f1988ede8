use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("points are within the diagonal margin: |x - xbar| = {distance:e} < {margin:e}")]
    DiagonalSingularity { distance: f64, margin: f64 },
    #[error("point outside the declared domain: {0}")]
    DomainViolation(String),
    #[error("numerical instability: {0}")]
    NumericalInstability(String),
    #[error("twist violation between {a:?} and {b:?} (separation {separation:e})")]
    TwistViolation { a: Vec<f64>, b: Vec<f64>, separation: f64 },
    #[error("c-exponential Newton solve did not converge: residual {residual:e} after {iterations} iterations")]
    CExpDivergence { residual: f64, iterations: usize },
    #[error("c-exponential solution left the domain at {0:?}")]
    OutOfDomain(Vec<f64>),
    #[error("classification inconclusive: {0}")]
    InconclusiveClassification(String),
    #[error("dual frame is singular (condition number {0:e})")]
    SingularFrame(f64),
    #[error("semi-discrete solver stalled after {iterations} iterations, worst mass residual {residual:e}")]
    SolverStall { iterations: usize, residual: f64 },
    #[error("potential is not differentiable at {x:?}: {active} active branches")]
    NotDifferentiable { x: Vec<f64>, active: usize },
    #[error("contact set is the singleton {{x0}}")]
    EmptyContact,
    #[error("hypothesis unmet: {0}")]
    HypothesisUnmet(String),
    #[error("convex hull of the contact set is degenerate")]
    DegenerateHull,
    #[error("maximum principle violated at t = {t} (margin {margin:e})")]
    MaxPrincipleViolation { t: f64, margin: f64 },
    #[error("sublevel set not convex: midpoint excess {excess:e}")]
    ConvexityViolation { excess: f64 },
    #[error("point is not a local minimum (neighbor lower by {drop:e})")]
    NotALocalMin { drop: f64 },
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("f(d) is not positive on the grid: {0:e}")]
    NonpositiveF(f64),
    #[error("Monte Carlo sampling produced no hits in {0} samples")]
    ZeroHits(usize),
    #[error("Monte Carlo estimate unstable: confidence interval overlaps zero")]
    UnstableEstimate,
    #[error("valley chart degenerate: F-Jacobian in p' singular (condition {0:e})")]
    ChartDegenerate(f64),
    #[error("barrier violated in case {case} by {margin:e}")]
    BarrierViolation { case: u8, margin: f64 },
    #[error("expression error: {0}")]
    Expression(String),
}

pub type Result<T> = std::result::Result<T, Error>;
