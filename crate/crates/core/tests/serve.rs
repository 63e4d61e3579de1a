mod common;

use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use jcce::features::ContextQuery;
use jcce::model::JcceModel;
use jcce::pipeline;
use jcce::serve::{router, AppState, Health, Recommendation, Snapshot};

fn model() -> &'static JcceModel {
    static M: OnceLock<JcceModel> = OnceLock::new();
    M.get_or_init(|| common::planted_model(3))
}

fn loaded() -> Arc<AppState> {
    Arc::new(AppState::with_snapshot(Snapshot::new(model().clone()).unwrap(), 10))
}

async fn call(state: Arc<AppState>, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = router(state).oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn post(body: Value) -> Request<Body> {
    post_raw(body.to_string())
}

fn post_raw(body: String) -> Request<Body> {
    Request::post("/recommend")
        .header("content-type", "application/json")
        .body(Body::from(body))
        .unwrap()
}

fn planted_request(k: usize) -> Value {
    json!({ "context": { "time_slot": common::PLANTED_SLOT, "day_of_week": "Tue" }, "k": k })
}

#[tokio::test]
async fn health_before_and_after_load() {
    let empty = Arc::new(AppState::new(10));
    let (status, _) = call(empty.clone(), Request::get("/health").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    let (status, _) = call(empty.clone(), post(planted_request(1))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);

    empty.swap(Snapshot::new(model().clone()).unwrap());
    let (status, body) = call(empty, Request::get("/health").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    let h: Health = serde_json::from_slice(&body).unwrap();
    assert_eq!(h.status, "ok");
    assert_eq!(h.catalog_size, 64);
    assert_eq!(h.model_version, 1);
}

#[tokio::test]
async fn planted_context_ranks_planted_genre_first() {
    let (status, body) = call(loaded(), post(planted_request(1))).await;
    assert_eq!(status, StatusCode::OK);
    let r: Recommendation = serde_json::from_slice(&body).unwrap();
    assert_eq!(r.ranked.len(), 1);
    assert_eq!(r.ranked[0].content_id, common::planted_genre());
    assert_eq!(r.model_version, 1);
}

#[tokio::test]
async fn k_is_clamped_and_responses_are_deterministic() {
    let state = loaded();
    let (_, a) = call(state.clone(), post(planted_request(500))).await;
    let (_, b) = call(state, post(planted_request(500))).await;
    assert_eq!(a, b);
    let r: Recommendation = serde_json::from_slice(&a).unwrap();
    assert_eq!(r.ranked.len(), 64);
    assert!(r.ranked.windows(2).all(|w| w[0].score >= w[1].score));
}

#[tokio::test]
async fn matches_cli_recommend_score_for_score() {
    let body = json!({
        "context": { "time_slot": "08:30", "day_of_week": "Sat", "viewer_ids": ["h0002-a1", "h0002-c1"], "child_present": "1" },
        "k": 7
    });
    let (_, http) = call(loaded(), post(body)).await;
    let http: Recommendation = serde_json::from_slice(&http).unwrap();
    let attrs: Vec<String> = ["time_slot=08:30", "day_of_week=Sat", "viewer_ids=h0002-a1|h0002-c1", "child_present=1"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let cli = pipeline::recommend(model().clone(), &attrs, 7).unwrap();
    assert_eq!(http.ranked.len(), 7);
    for (h, c) in http.ranked.iter().zip(&cli.ranked) {
        assert_eq!(h.content_id, c.content_id);
        assert_eq!(h.score.to_bits(), c.score.to_bits());
    }
}

#[tokio::test]
async fn client_errors() {
    let state = loaded();
    let cases = [
        (json!({ "context": { "colour": "blue" } }).to_string(), StatusCode::BAD_REQUEST, "unknown_attribute"),
        (json!({ "context": { "genre": "news-00" } }).to_string(), StatusCode::BAD_REQUEST, "unknown_attribute"),
        (json!({ "context": { "child_present": "maybe" } }).to_string(), StatusCode::UNPROCESSABLE_ENTITY, "unencodable_context"),
        (json!({ "context": { "viewer_ids": [] } }).to_string(), StatusCode::UNPROCESSABLE_ENTITY, "unencodable_context"),
        (json!({ "context": {}, "k": 0 }).to_string(), StatusCode::BAD_REQUEST, "bad_request"),
        ("{not json".to_string(), StatusCode::BAD_REQUEST, "bad_request"),
        (json!({ "ctx": {} }).to_string(), StatusCode::BAD_REQUEST, "bad_request"),
    ];
    for (body, expected, code) in cases {
        let (status, resp) = call(state.clone(), post_raw(body.clone())).await;
        assert_eq!(status, expected, "{body}");
        let v: Value = serde_json::from_slice(&resp).unwrap();
        assert_eq!(v["error"], code, "{body}");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn swaps_are_atomic_under_concurrent_reads() {
    let other = common::planted_model(4);
    let q = ContextQuery::new().with("time_slot", "12:00").with("day_of_week", "Wed");
    let expect_a = Snapshot::new(model().clone()).unwrap().recommend(&q, 64).unwrap();
    let expect_b = Snapshot::new(other.clone()).unwrap().recommend(&q, 64).unwrap();
    assert_ne!(expect_a, expect_b);

    let state = loaded();
    let body = json!({ "context": { "time_slot": "12:00", "day_of_week": "Wed" }, "k": 64 });
    let mut tasks = Vec::new();
    for i in 0..64 {
        let state = state.clone();
        let body = body.clone();
        tasks.push(tokio::spawn(async move {
            let (_, b) = call(state, post(body)).await;
            (i, serde_json::from_slice::<Recommendation>(&b).unwrap())
        }));
    }
    for i in 0..8 {
        let m = if i % 2 == 0 { other.clone() } else { model().clone() };
        state.swap(Snapshot::new(m).unwrap());
        tokio::task::yield_now().await;
    }
    for t in tasks {
        let (_, r) = t.await.unwrap();
        assert!(r == expect_a || r == expect_b, "response mixes snapshots");
    }
}
