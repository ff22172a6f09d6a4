//! Wire types for the KNN search endpoint.
//!
//! Requests and responses are UTF-8 JSON with snake_case field names. The
//! request carries the query embedding directly: an "image" query means the
//! embedding of an image, so no model runtime is needed on either side.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Query modality. Only IMAGE (an image embedding) is served.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Modality {
    Image,
    Text,
}

/// A KNN search request.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KnnRequest {
    pub indice_name: String,
    #[serde(default)]
    pub use_mclip: bool,
    #[serde(default)]
    pub aesthetic_score: i64,
    #[serde(default)]
    pub aesthetic_weight: f64,
    pub modality: Modality,
    pub num_images: usize,
    #[serde(default)]
    pub deduplicate: bool,
    #[serde(default)]
    pub use_safety_model: bool,
    #[serde(default)]
    pub use_violence_detector: bool,
    pub query_embedding: Vec<f32>,
}

impl KnnRequest {
    /// Image-modality request with every optional filter off.
    pub fn image_query(
        indice_name: impl Into<String>,
        query_embedding: Vec<f32>,
        num_images: usize,
    ) -> KnnRequest {
        KnnRequest {
            indice_name: indice_name.into(),
            use_mclip: false,
            aesthetic_score: 0,
            aesthetic_weight: 0.0,
            modality: Modality::Image,
            num_images,
            deduplicate: false,
            use_safety_model: false,
            use_violence_detector: false,
            query_embedding,
        }
    }
}

/// One retrieval result on the wire. Rank is implied by position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnResult {
    pub item_id: String,
    pub squared_distance: f64,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

/// Search response: results sorted by (squared_distance ascending, item_id
/// ascending), at most `num_images` of them, plus the names of the filters
/// the server actually ran.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnResponse {
    pub results: Vec<KnnResult>,
    pub applied_filters: Vec<String>,
}

impl KnnResponse {
    /// Checks the response invariants; returns a description of the first
    /// violation.
    pub fn validate(&self, num_images: usize) -> Result<(), String> {
        if self.results.len() > num_images {
            return Err(format!(
                "{} results exceed num_images {num_images}",
                self.results.len()
            ));
        }
        for w in self.results.windows(2) {
            let ordered = w[0].squared_distance < w[1].squared_distance
                || (w[0].squared_distance == w[1].squared_distance
                    && w[0].item_id < w[1].item_id);
            if !ordered {
                return Err(format!(
                    "results not sorted by (squared_distance, item_id) near {:?}",
                    w[1].item_id
                ));
            }
        }
        if let Some(bad) = self
            .results
            .iter()
            .find(|r| !r.squared_distance.is_finite() || r.squared_distance < 0.0)
        {
            return Err(format!(
                "result {:?} has invalid squared_distance {}",
                bad.item_id, bad.squared_distance
            ));
        }
        Ok(())
    }
}

/// Error body returned with every non-2xx status.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}
