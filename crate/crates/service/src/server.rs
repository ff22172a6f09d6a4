//! The KNN search service: query execution, deduplication, and the HTTP
//! server wrapping them.
//!
//! `POST /knn-service` takes a [`KnnRequest`] and answers with a
//! [`KnnResponse`]; errors come back as JSON `{error, message}` with a 4xx
//! status. The served index is immutable, so requests need no locking and
//! concurrent identical requests return identical responses.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};

use facesearch_core::{Embedding, FlatIndex, SearchHit};

use crate::error::ServiceError;
use crate::hooks::{
    AestheticReranker, IdentityRerank, PassThroughSafety, PassThroughViolence, SafetyFilter,
    ViolenceFilter,
};
use crate::protocol::{KnnRequest, KnnResponse, KnnResult, Modality};

pub const DEFAULT_DEDUP_EPSILON: f64 = 1e-6;
pub const DEFAULT_OVERFETCH_FACTOR: usize = 4;

/// One index as served: the data plus its dedup/over-fetch settings.
#[derive(Clone)]
pub struct ServedIndex {
    pub index: Arc<FlatIndex>,
    /// Squared-distance radius under which two results count as duplicates.
    pub dedup_epsilon: f64,
    /// How many times num_images to fetch before deduplication.
    pub overfetch_factor: usize,
}

impl ServedIndex {
    pub fn new(index: Arc<FlatIndex>) -> ServedIndex {
        ServedIndex {
            index,
            dedup_epsilon: DEFAULT_DEDUP_EPSILON,
            overfetch_factor: DEFAULT_OVERFETCH_FACTOR,
        }
    }
}

/// Service state: named indexes plus the filter hooks.
pub struct ServiceConfig {
    indexes: BTreeMap<String, ServedIndex>,
    safety: Arc<dyn SafetyFilter>,
    violence: Arc<dyn ViolenceFilter>,
    aesthetic: Arc<dyn AestheticReranker>,
}

impl ServiceConfig {
    pub fn new() -> ServiceConfig {
        ServiceConfig {
            indexes: BTreeMap::new(),
            safety: Arc::new(PassThroughSafety),
            violence: Arc::new(PassThroughViolence),
            aesthetic: Arc::new(IdentityRerank),
        }
    }

    pub fn with_index(mut self, name: impl Into<String>, served: ServedIndex) -> ServiceConfig {
        self.indexes.insert(name.into(), served);
        self
    }

    pub fn with_safety(mut self, hook: Arc<dyn SafetyFilter>) -> ServiceConfig {
        self.safety = hook;
        self
    }

    pub fn with_violence(mut self, hook: Arc<dyn ViolenceFilter>) -> ServiceConfig {
        self.violence = hook;
        self
    }

    pub fn with_aesthetic(mut self, hook: Arc<dyn AestheticReranker>) -> ServiceConfig {
        self.aesthetic = hook;
        self
    }

    pub fn index_names(&self) -> impl Iterator<Item = &str> {
        self.indexes.keys().map(|s| s.as_str())
    }
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig::new()
    }
}

/// Drops hits that sit within `epsilon` (squared distance, strict) of an
/// already-kept hit's vector, scanning in rank order. Epsilon 0 therefore
/// keeps everything. Ranks are re-assigned contiguously afterwards.
pub fn deduplicate(
    hits: &[SearchHit],
    index: &FlatIndex,
    epsilon: f64,
) -> Result<Vec<SearchHit>, ServiceError> {
    if epsilon < 0.0 || epsilon.is_nan() {
        return Err(ServiceError::InvalidArgument(format!(
            "dedup epsilon must be non-negative, got {epsilon}"
        )));
    }
    let mut kept: Vec<SearchHit> = Vec::with_capacity(hits.len());
    for hit in hits {
        if index.vector(&hit.item_id).is_none() {
            return Err(ServiceError::ItemNotFound(format!(
                "hit {:?} is not resolvable in the index",
                hit.item_id
            )));
        }
        let mut duplicate = false;
        for prior in &kept {
            let d = index
                .squared_distance_between(&hit.item_id, &prior.item_id)
                .map_err(|e| ServiceError::InvalidArgument(e.to_string()))?;
            if d < epsilon {
                duplicate = true;
                break;
            }
        }
        if !duplicate {
            kept.push(hit.clone());
        }
    }
    for (rank, hit) in kept.iter_mut().enumerate() {
        hit.rank = rank;
    }
    Ok(kept)
}

/// Executes one request against the configured indexes.
///
/// Pipeline: search (over-fetching `overfetch_factor * num_images` when
/// deduplication is on), then dedupe, safety, violence, aesthetic re-rank in
/// that order, each only when its request flag enables it, then truncate
/// to `num_images`. With all flags off this is exactly a flat-index search.
pub fn serve_query(
    config: &ServiceConfig,
    request: &KnnRequest,
) -> Result<KnnResponse, ServiceError> {
    let served = config
        .indexes
        .get(&request.indice_name)
        .ok_or_else(|| ServiceError::IndexNotFound(request.indice_name.clone()))?;

    if request.modality != Modality::Image {
        return Err(ServiceError::UnsupportedModality(format!(
            "{:?}",
            request.modality
        )));
    }
    if request.num_images < 1 {
        return Err(ServiceError::InvalidArgument(
            "num_images must be at least 1".into(),
        ));
    }
    let query = Embedding::new(request.query_embedding.clone())
        .map_err(|e| ServiceError::InvalidArgument(e.to_string()))?;
    if !served.index.is_empty() && query.dim() != served.index.dim() {
        return Err(ServiceError::InvalidArgument(format!(
            "query dim {} does not match index dim {}",
            query.dim(),
            served.index.dim()
        )));
    }

    let fetch_k = if request.deduplicate {
        request
            .num_images
            .saturating_mul(served.overfetch_factor.max(1))
    } else {
        request.num_images
    };
    let mut hits = served
        .index
        .search(&query, fetch_k)
        .map_err(|e| ServiceError::InvalidArgument(e.to_string()))?;

    let mut applied = Vec::new();
    if request.deduplicate {
        hits = deduplicate(&hits, &served.index, served.dedup_epsilon)?;
        applied.push("deduplicate".to_string());
    }
    if request.use_safety_model {
        hits = config.safety.filter(hits, &served.index);
        applied.push("safety_model".to_string());
    }
    if request.use_violence_detector {
        hits = config.violence.filter(hits, &served.index);
        applied.push("violence_detector".to_string());
    }
    if request.aesthetic_weight != 0.0 {
        hits = config
            .aesthetic
            .rerank(hits, request.aesthetic_score, request.aesthetic_weight);
        applied.push("aesthetic_rerank".to_string());
    }
    hits.truncate(request.num_images);

    let results = hits
        .into_iter()
        .map(|h| {
            let mut metadata = BTreeMap::new();
            if let Some(identity) = served.index.identity_of(&h.item_id) {
                metadata.insert(
                    "identity_id".to_string(),
                    serde_json::Value::String(identity.to_string()),
                );
            }
            if let Some(variant) = served.index.variant_of(&h.item_id) {
                metadata.insert(
                    "variant".to_string(),
                    serde_json::Value::String(variant.as_str().to_string()),
                );
            }
            KnnResult {
                item_id: h.item_id,
                squared_distance: h.squared_distance,
                metadata,
            }
        })
        .collect();

    Ok(KnnResponse {
        results,
        applied_filters: applied,
    })
}

async fn knn_handler(
    State(state): State<Arc<ServiceConfig>>,
    payload: Result<Json<KnnRequest>, JsonRejection>,
) -> Response {
    let request = match payload {
        Ok(Json(request)) => request,
        Err(rejection) => {
            let err = ServiceError::InvalidArgument(format!("bad request body: {rejection}"));
            return error_response(&err);
        }
    };
    match serve_query(&state, &request) {
        Ok(response) => (StatusCode::OK, Json(response)).into_response(),
        Err(err) => error_response(&err),
    }
}

fn error_response(err: &ServiceError) -> Response {
    let status = StatusCode::from_u16(err.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, Json(err.body())).into_response()
}

async fn health() -> &'static str {
    "ok"
}

/// The service router: `POST /knn-service` plus a trivial `GET /health`.
pub fn router(state: Arc<ServiceConfig>) -> Router {
    Router::new()
        .route("/knn-service", post(knn_handler))
        .route("/health", get(health))
        .with_state(state)
}

/// A running server. Dropping the handle shuts it down; `shutdown` does so
/// explicitly and joins the serving thread.
pub struct ServerHandle {
    pub addr: SocketAddr,
    shutdown_tx: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServerHandle {
    /// Full URL of the search endpoint.
    pub fn endpoint(&self) -> String {
        format!("http://{}/knn-service", self.addr)
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown_tx.take() {
            let _ = tx.send(());
        }
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Binds `listen` (port 0 picks an ephemeral port) and serves on a
/// background thread until the handle is shut down or dropped.
pub fn start(listen: SocketAddr, config: ServiceConfig) -> Result<ServerHandle, ServiceError> {
    let state = Arc::new(config);
    let (addr_tx, addr_rx) = std::sync::mpsc::channel::<Result<SocketAddr, String>>();
    let (shutdown_tx, shutdown_rx) = tokio::sync::oneshot::channel::<()>();

    let thread = std::thread::spawn(move || {
        let runtime = match tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
        {
            Ok(rt) => rt,
            Err(e) => {
                let _ = addr_tx.send(Err(format!("tokio runtime: {e}")));
                return;
            }
        };
        runtime.block_on(async move {
            let listener = match tokio::net::TcpListener::bind(listen).await {
                Ok(l) => l,
                Err(e) => {
                    let _ = addr_tx.send(Err(format!("bind {listen}: {e}")));
                    return;
                }
            };
            let addr = listener.local_addr().expect("bound listener has an address");
            let _ = addr_tx.send(Ok(addr));
            let app = router(state);
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async move {
                    let _ = shutdown_rx.await;
                })
                .await;
        });
    });

    match addr_rx.recv() {
        Ok(Ok(addr)) => Ok(ServerHandle {
            addr,
            shutdown_tx: Some(shutdown_tx),
            thread: Some(thread),
        }),
        Ok(Err(msg)) => {
            let _ = thread.join();
            Err(ServiceError::Startup(msg))
        }
        Err(_) => {
            let _ = thread.join();
            Err(ServiceError::Startup("server thread exited early".into()))
        }
    }
}

/// Serves on the current thread until interrupted (ctrl-c). Used by the CLI.
pub fn run_blocking(listen: SocketAddr, config: ServiceConfig) -> Result<(), ServiceError> {
    let state = Arc::new(config);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| ServiceError::Startup(format!("tokio runtime: {e}")))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(listen)
            .await
            .map_err(|e| ServiceError::Startup(format!("bind {listen}: {e}")))?;
        let addr = listener
            .local_addr()
            .map_err(|e| ServiceError::Startup(e.to_string()))?;
        eprintln!("serving on http://{addr}/knn-service");
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| ServiceError::Startup(e.to_string()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use facesearch_core::{IndexEntry, Variant};

    fn emb(values: &[f32]) -> Embedding {
        Embedding::new(values.to_vec()).unwrap()
    }

    fn entry(id: &str, values: &[f32]) -> IndexEntry {
        IndexEntry {
            item_id: id.to_string(),
            identity_id: Some(format!("ident-{id}")),
            variant: Variant::Original,
            vector: emb(values),
        }
    }

    fn three_entry_config() -> ServiceConfig {
        let index = FlatIndex::build(vec![
            entry("a", &[0.0, 0.0]),
            entry("b", &[3.0, 4.0]),
            entry("c", &[1.0, 0.0]),
        ])
        .unwrap();
        ServiceConfig::new().with_index("local", ServedIndex::new(Arc::new(index)))
    }

    #[test]
    fn default_flags_match_flat_search() {
        let config = three_entry_config();
        let req = KnnRequest::image_query("local", vec![0.0, 0.0], 2);
        let resp = serve_query(&config, &req).unwrap();
        assert_eq!(resp.results.len(), 2);
        assert_eq!(resp.results[0].item_id, "a");
        assert_eq!(resp.results[0].squared_distance, 0.0);
        assert_eq!(resp.results[1].item_id, "c");
        assert!(resp.applied_filters.is_empty());
        assert_eq!(
            resp.results[0].metadata["identity_id"],
            serde_json::Value::String("ident-a".into())
        );
    }

    #[test]
    fn text_modality_rejected() {
        let config = three_entry_config();
        let mut req = KnnRequest::image_query("local", vec![0.0, 0.0], 2);
        req.modality = Modality::Text;
        let err = serve_query(&config, &req).unwrap_err();
        assert!(matches!(err, ServiceError::UnsupportedModality(_)));
        assert_eq!(err.status(), 400);
    }

    #[test]
    fn unknown_index_is_404() {
        let config = three_entry_config();
        let req = KnnRequest::image_query("nope", vec![0.0, 0.0], 2);
        let err = serve_query(&config, &req).unwrap_err();
        assert!(matches!(err, ServiceError::IndexNotFound(_)));
        assert_eq!(err.status(), 404);
    }

    #[test]
    fn bad_arguments_rejected() {
        let config = three_entry_config();
        let mut req = KnnRequest::image_query("local", vec![0.0, 0.0], 0);
        assert!(matches!(
            serve_query(&config, &req),
            Err(ServiceError::InvalidArgument(_))
        ));
        req.num_images = 2;
        req.query_embedding = vec![0.0; 3];
        assert!(matches!(
            serve_query(&config, &req),
            Err(ServiceError::InvalidArgument(_))
        ));
    }

    #[test]
    fn dedup_drops_planted_duplicate() {
        let index = FlatIndex::build(vec![
            entry("a", &[0.0, 0.0]),
            entry("a_copy", &[0.0, 0.0]),
            entry("b", &[5.0, 0.0]),
        ])
        .unwrap();
        let config =
            ServiceConfig::new().with_index("local", ServedIndex::new(Arc::new(index)));
        let mut req = KnnRequest::image_query("local", vec![0.0, 0.0], 3);
        req.deduplicate = true;
        let resp = serve_query(&config, &req).unwrap();
        let ids: Vec<&str> = resp.results.iter().map(|r| r.item_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b"]);
        assert_eq!(resp.applied_filters, vec!["deduplicate"]);
    }

    #[test]
    fn dedup_epsilon_zero_is_identity() {
        let index = FlatIndex::build(vec![
            entry("a", &[0.0, 0.0]),
            entry("a_copy", &[0.0, 0.0]),
        ])
        .unwrap();
        let hits = index.search(&emb(&[0.0, 0.0]), 2).unwrap();
        let kept = deduplicate(&hits, &index, 0.0).unwrap();
        assert_eq!(kept, hits);
    }

    #[test]
    fn dedup_radius_covers_near_duplicates() {
        // squared distance between the pair is 0.5
        let index = FlatIndex::build(vec![
            entry("a", &[0.0, 0.0]),
            entry("b", &[0.5, 0.5]),
        ])
        .unwrap();
        let hits = index.search(&emb(&[0.0, 0.0]), 2).unwrap();
        let kept = deduplicate(&hits, &index, 1.0).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].item_id, "a");
    }

    #[test]
    fn dedup_output_is_subsequence() {
        let index = FlatIndex::build(vec![
            entry("a", &[0.0, 0.0]),
            entry("b", &[0.1, 0.0]),
            entry("c", &[5.0, 0.0]),
            entry("d", &[5.05, 0.0]),
        ])
        .unwrap();
        let hits = index.search(&emb(&[0.0, 0.0]), 4).unwrap();
        let kept = deduplicate(&hits, &index, 0.5).unwrap();
        let mut cursor = hits.iter();
        for k in &kept {
            assert!(cursor.any(|h| h.item_id == k.item_id));
        }
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn dedup_unresolvable_hit_is_not_found() {
        let index = FlatIndex::build(vec![entry("a", &[0.0, 0.0])]).unwrap();
        let phantom = vec![SearchHit {
            item_id: "ghost".into(),
            rank: 0,
            squared_distance: 1.0,
        }];
        assert!(matches!(
            deduplicate(&phantom, &index, 1.0),
            Err(ServiceError::ItemNotFound(_))
        ));
    }

    #[test]
    fn aesthetic_hook_runs_when_weighted() {
        let config = three_entry_config();
        let mut req = KnnRequest::image_query("local", vec![0.0, 0.0], 2);
        req.aesthetic_score = 9;
        req.aesthetic_weight = 0.5;
        let resp = serve_query(&config, &req).unwrap();
        assert_eq!(resp.applied_filters, vec!["aesthetic_rerank"]);
        // identity default: same results as without the hook
        let baseline = serve_query(
            &config,
            &KnnRequest::image_query("local", vec![0.0, 0.0], 2),
        )
        .unwrap();
        assert_eq!(resp.results, baseline.results);
    }

    #[test]
    fn response_never_exceeds_num_images() {
        let config = three_entry_config();
        for n in 1..=5 {
            let req = KnnRequest::image_query("local", vec![0.0, 0.0], n);
            let resp = serve_query(&config, &req).unwrap();
            assert!(resp.results.len() <= n);
            resp.validate(n).unwrap();
        }
    }
}
