//! Pluggable result filters.
//!
//! The request surface carries safety, violence, and aesthetic knobs whose
//! server-side semantics belong to the deployment, not the protocol. Here
//! they bind to hooks with pass-through defaults: wire compatibility is
//! preserved, no behavior is invented. Hooks must keep the result list
//! sorted by (squared_distance, item_id) or clients will reject the
//! response.

use facesearch_core::{FlatIndex, SearchHit};

/// Drops results a safety model would exclude. Default keeps everything.
pub trait SafetyFilter: Send + Sync {
    fn filter(&self, hits: Vec<SearchHit>, index: &FlatIndex) -> Vec<SearchHit>;
}

/// Drops results a violence detector would exclude. Default keeps everything.
pub trait ViolenceFilter: Send + Sync {
    fn filter(&self, hits: Vec<SearchHit>, index: &FlatIndex) -> Vec<SearchHit>;
}

/// Reorders results by an aesthetic score/weight. Default is the identity.
pub trait AestheticReranker: Send + Sync {
    fn rerank(&self, hits: Vec<SearchHit>, score: i64, weight: f64) -> Vec<SearchHit>;
}

pub struct PassThroughSafety;

impl SafetyFilter for PassThroughSafety {
    fn filter(&self, hits: Vec<SearchHit>, _index: &FlatIndex) -> Vec<SearchHit> {
        hits
    }
}

pub struct PassThroughViolence;

impl ViolenceFilter for PassThroughViolence {
    fn filter(&self, hits: Vec<SearchHit>, _index: &FlatIndex) -> Vec<SearchHit> {
        hits
    }
}

pub struct IdentityRerank;

impl AestheticReranker for IdentityRerank {
    fn rerank(&self, hits: Vec<SearchHit>, _score: i64, _weight: f64) -> Vec<SearchHit> {
        hits
    }
}
