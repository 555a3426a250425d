use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index out of range: {what} = {index} (bound {bound})")]
    Index { what: &'static str, index: usize, bound: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("quadrature grid with Q = {q}, D = {d} has {nodes} nodes, above the cap of {cap}")]
    GridTooLarge { q: usize, d: usize, nodes: u128, cap: usize },

    #[error("estimation failed: no start produced a finite log-likelihood ({})", .diagnostics.join("; "))]
    EstimationFailed { diagnostics: Vec<String> },

    #[error("model selection failed: every (G, D) cell failed")]
    AllCellsFailed,

    #[error("{what} = {value} exceeds the exhaustive-search cap of {cap}")]
    SearchCap { what: &'static str, value: usize, cap: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_index(what: &'static str, index: usize, bound: usize) -> Result<()> {
    if index < bound {
        Ok(())
    } else {
        Err(Error::Index { what, index, bound })
    }
}
