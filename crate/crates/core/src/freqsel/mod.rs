//! Link-metric aggregation, frequency selection and link-regime clustering.

pub mod apply;
pub mod cluster;
pub mod csvio;
pub mod metrics;
pub mod select;

use thiserror::Error;

pub use apply::{apply_selection, FloodContext, ReconfigAction};
pub use cluster::{cluster_links, kmeans, label_centroid, Clustering, RegimeLabel};
pub use metrics::{aggregate_interval, minmax_normalize, percentile, IntervalSamples, LinkId, LinkIntervalMetrics};
pub use select::{
    lowpower_select, offline_select, online_select, score_composite, LinkWeighting, LowpowerSelection, NoiseTerm,
    NormContext, ScoreOptions, Scope, Selection,
};

#[derive(Debug, Error)]
pub enum FreqselError {
    #[error("no links in scope {0}")]
    EmptyScope(String),
    #[error("no usable metrics")]
    NoData,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("{points} points is fewer than k = {k}")]
    TooFewPoints { points: usize, k: usize },
    #[error("bad link id {0:?}, expected src-dst")]
    BadLinkId(String),
    #[error("unknown option {0:?}")]
    UnknownOption(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("unexpected CSV header {0:?}")]
    BadHeader(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
