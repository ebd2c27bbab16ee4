use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("data error on edge {edge}: {msg}")]
    EdgeData { edge: usize, msg: String },
    #[error("accounting bug: current words would go negative ({current} {delta:+})")]
    Accounting { current: i64, delta: i64 },
    #[error("laplacian solver did not converge: residual {residual:.3e} after {iters} iterations (tol {tol:.3e})")]
    SolverNonConvergence {
        residual: f64,
        iters: usize,
        tol: f64,
    },
    #[error("disconnected support: rhs lives on {components} components not joined by the sparsifier")]
    DisconnectedSupport { components: usize },
    #[error("centrality violation on edge {edge}: {msg}")]
    Centrality { edge: usize, msg: String },
    #[error("centrality blowup on edge {edge}: |v| = {value:.6} exceeds tolerance")]
    CentralityBlowup { edge: usize, value: f64 },
    #[error("lewis weight out of range on edge {edge}: {value:.6e} not in [{lo:.6e}, {hi:.6e}]")]
    WeightRange {
        edge: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("stale bucket table: edge {edge} rounds to group ({i}, {j}) absent from the table")]
    StaleGroup { edge: usize, i: i64, j: i64 },
    #[error("nonconvergence: {0}")]
    NonConvergence(String),
    #[error("infeasible instance: {0}")]
    Infeasible(String),
    #[error("protocol error in round {round}: {msg}")]
    Protocol { round: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, Error>;
