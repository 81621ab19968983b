use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;
use treadmatch::config::ServiceSection;
use treadmatch::dataset::{generate_synthetic, synthesize, SyntheticSpec};
use treadmatch::exec::Execution;
use treadmatch::index::build_index_from_images;
use treadmatch::retrieval::RetrievalConfig;
use treadmatch::{Channel, Encoder, EncoderConfig, Frame, Image};
use treadmatch_service::{router, ServiceState};

const FRAME: Frame = Frame::new(128, 64);
const BOUNDARY: &str = "XtestBoundaryX";

fn spec() -> SyntheticSpec {
    SyntheticSpec { frame: FRAME, ..SyntheticSpec::new(4, 2, 3) }
}

fn encoder() -> Encoder {
    Encoder::new(EncoderConfig { frame: FRAME, ..EncoderConfig::small() }).unwrap()
}

fn state_with(settings: ServiceSection, loaded: bool) -> (Arc<ServiceState>, Vec<treadmatch::dataset::ShoeInstance>) {
    let enc = encoder();
    let instances = synthesize(&spec()).unwrap();
    let items: Vec<_> = instances.iter().map(|s| (s.instance_id.clone(), s.model_id.clone(), s.depth.clone())).collect();
    let index = build_index_from_images(&items, &enc, Channel::Depth, Execution::Sequential).unwrap();
    let state = if loaded {
        ServiceState::new(Some(index), Some(enc), None, settings, RetrievalConfig::default())
    } else {
        ServiceState::new(None, None, None, settings, RetrievalConfig::default())
    };
    (Arc::new(state), instances)
}

fn multipart(parts: &[(&str, &str, &[u8])]) -> (String, Vec<u8>) {
    let mut body = Vec::new();
    for (name, ctype, data) in parts {
        body.extend_from_slice(format!("--{BOUNDARY}\r\n").as_bytes());
        let filename = if *ctype == "image/png" { "; filename=\"print.png\"" } else { "" };
        body.extend_from_slice(format!("Content-Disposition: form-data; name=\"{name}\"{filename}\r\n").as_bytes());
        body.extend_from_slice(format!("Content-Type: {ctype}\r\n\r\n").as_bytes());
        body.extend_from_slice(data);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    (format!("multipart/form-data; boundary={BOUNDARY}"), body)
}

fn query_request(print: &Image, request: &str) -> Request<Body> {
    let png = print.to_png_bytes();
    let (ctype, body) = multipart(&[("print", "image/png", &png), ("request", "application/json", request.as_bytes())]);
    Request::post("/api/queries").header("content-type", ctype).body(Body::from(body)).unwrap()
}

async fn send(app: axum::Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(bytes)))
}

#[tokio::test]
async fn query_returns_ranked_models_and_is_cached() {
    let (state, inst) = state_with(ServiceSection::default(), true);
    let app = router(state);
    let req = r#"{"mask":{"type":"rect","x":0,"y":0,"w":64,"h":128},"k":3,"query_id":"abc"}"#;
    let (status, body) = send(app.clone(), query_request(&inst[0].print, req)).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let v = json(&body);
    assert_eq!(v["query_id"], "abc");
    let results = v["results"].as_array().unwrap();
    assert_eq!(results.len(), 3);
    let scores: Vec<f64> = results.iter().map(|r| r["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    assert!(v["timing_ms"].as_f64().unwrap() >= 0.0);
    let text = String::from_utf8(body.clone()).unwrap();
    assert!(text.contains(&format!("\"score\":{:.6}", scores[0])));

    let (status, again) = send(app, Request::get("/api/queries/abc").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(again, body);
}

#[tokio::test]
async fn polygon_and_rect_give_identical_rankings() {
    let (state, inst) = state_with(ServiceSection::default(), true);
    let app = router(state);
    let rect = r#"{"mask":{"type":"rect","x":8,"y":16,"w":40,"h":64},"query_id":"r"}"#;
    let poly = r#"{"mask":{"type":"polygon","points":[[8,16],[48,16],[48,80],[8,80]]},"query_id":"p"}"#;
    let (_, a) = send(app.clone(), query_request(&inst[2].print, rect)).await;
    let (_, b) = send(app, query_request(&inst[2].print, poly)).await;
    assert_eq!(json(&a)["results"], json(&b)["results"]);
}

#[tokio::test]
async fn dry_run_reports_coverage_without_ranking() {
    let (state, inst) = state_with(ServiceSection::default(), true);
    let req = r#"{"mask":{"type":"rect","x":0,"y":0,"w":64,"h":64},"dry_run":true}"#;
    let (status, body) = send(router(state), query_request(&inst[0].print, req)).await;
    assert_eq!(status, StatusCode::OK);
    let v = json(&body);
    assert_eq!(v["visible_pixels"], 64 * 64);
    assert_eq!(v["covered_cells"], 4);
    assert!(v.get("results").is_none());
}

#[tokio::test]
async fn invalid_inputs_are_rejected_with_400() {
    let (state, inst) = state_with(ServiceSection::default(), true);
    let app = router(state);
    let cases = [
        r#"{"mask":{"type":"polygon","points":[[0,0],[10,10],[10,0],[0,10]]}}"#,
        r#"{"mask":{"type":"polygon","points":[[0,0],[1,1]]}}"#,
        r#"{"mask":{"type":"rect","x":500,"y":0,"w":4,"h":4}}"#,
        r#"{"mask":{"type":"rect","x":0,"y":0,"w":4,"h":4}}"#,
        r#"{"mask":{"type":"rect","x":0,"y":0,"w":64,"h":128},"k":0}"#,
        r#"{"mask":{"type":"rect","x":0,"y":0,"w":64,"h":128},"k":100000}"#,
        r#"{"mask":{"type":"rect","x":0,"y":0,"w":64,"h":128},"transform":{"scale":0}}"#,
        r#"{"mask":{"type":"rect","x":0,"y":0,"w":64,"h":128},"bogus":1}"#,
        "not json",
    ];
    for case in cases {
        let (status, body) = send(app.clone(), query_request(&inst[0].print, case)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{case}");
        assert!(json(&body)["error"].is_string());
    }
    let (ctype, body) = multipart(&[("print", "image/png", b"garbage"), ("request", "application/json", br#"{"mask":{"type":"rect","x":0,"y":0,"w":64,"h":128}}"#)]);
    let req = Request::post("/api/queries").header("content-type", ctype).body(Body::from(body)).unwrap();
    assert_eq!(send(app, req).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn oversized_upload_is_413() {
    let settings = ServiceSection { max_upload_bytes: 1024, ..ServiceSection::default() };
    let (state, _) = state_with(settings, true);
    let big = vec![7u8; 4096];
    let (ctype, body) = multipart(&[("print", "image/png", &big), ("request", "application/json", b"{}")]);
    let req = Request::post("/api/queries").header("content-type", ctype).body(Body::from(body)).unwrap();
    assert_eq!(send(router(state), req).await.0, StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test]
async fn missing_index_is_503_and_health_reports_it() {
    let (state, inst) = state_with(ServiceSection::default(), false);
    let app = router(state);
    let req = r#"{"mask":{"type":"rect","x":0,"y":0,"w":64,"h":128}}"#;
    assert_eq!(send(app.clone(), query_request(&inst[0].print, req)).await.0, StatusCode::SERVICE_UNAVAILABLE);
    let (status, body) = send(app, Request::get("/api/health").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    let v = json(&body);
    assert_eq!(v["status"], "unavailable");
    assert_eq!(v["index_count"], 0);
}

#[tokio::test]
async fn health_models_and_unknown_query() {
    let (state, _) = state_with(ServiceSection::default(), true);
    let app = router(state);
    let v = json(&send(app.clone(), Request::get("/api/health").body(Body::empty()).unwrap()).await.1);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["index_count"], 8);
    assert_eq!(v["encoder_hash"].as_str().unwrap().len(), 64);

    let (status, body) = send(app.clone(), Request::get("/api/models/SYN-0001").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json(&body)["instances"].as_array().unwrap().len(), 2);
    assert_eq!(send(app.clone(), Request::get("/api/models/NOPE").body(Body::empty()).unwrap()).await.0, StatusCode::NOT_FOUND);
    assert_eq!(send(app, Request::get("/api/queries/none").body(Body::empty()).unwrap()).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn rasterize_echo_matches_mask() {
    let (state, _) = state_with(ServiceSection::default(), true);
    let req = Request::post("/api/masks/rasterize")
        .header("content-type", "application/json")
        .body(Body::from(r#"{"mask":{"type":"polygon","points":[[0,0],[64,0],[0,128]]}}"#))
        .unwrap();
    let (status, body) = send(router(state), req).await;
    assert_eq!(status, StatusCode::OK);
    let img = Image::from_png_bytes(&body).unwrap();
    assert_eq!(img.frame(), FRAME);
    let visible = img.count_above(0.5) as f64;
    assert!((visible - 64.0 * 128.0 / 2.0).abs() < 130.0, "{visible}");
}

#[tokio::test]
async fn place_print_identity_round_trips() {
    let (state, inst) = state_with(ServiceSection::default(), true);
    let png = inst[1].print.to_png_bytes();
    let (ctype, body) = multipart(&[("print", "image/png", &png)]);
    let req = Request::post("/api/prints/place").header("content-type", ctype).body(Body::from(body)).unwrap();
    let (status, out) = send(router(state), req).await;
    assert_eq!(status, StatusCode::OK);
    let placed = Image::from_png_bytes(&out).unwrap();
    assert!(placed.max_abs_diff(&Image::from_png_bytes(&png).unwrap()) < 1e-6);
}

#[tokio::test]
async fn images_are_served_from_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_synthetic(&spec(), dir.path()).unwrap();
    let on_disk = std::fs::read(manifest.resolve(&manifest.entries[0].depth_path)).unwrap();
    let id = manifest.entries[0].instance_id.clone();
    let state = Arc::new(ServiceState::new(None, None, Some(manifest), ServiceSection::default(), RetrievalConfig::default()));
    let app = router(state);
    let (status, body) = send(app.clone(), Request::get(format!("/api/images/{id}/depth")).body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, on_disk);
    let bad = Request::get(format!("/api/images/{id}/thumbnail")).body(Body::empty()).unwrap();
    assert_eq!(send(app, bad).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn own_print_retrieves_its_model_first_with_unit_score() {
    let enc = encoder();
    let instances = synthesize(&spec()).unwrap();
    let items: Vec<_> = instances.iter().map(|s| (s.instance_id.clone(), s.model_id.clone(), s.print.clone())).collect();
    let index = build_index_from_images(&items, &enc, Channel::Print, Execution::Sequential).unwrap();
    let state = Arc::new(ServiceState::new(Some(index), Some(enc), None, ServiceSection::default(), RetrievalConfig::default()));
    let req = r#"{"mask":{"type":"rect","x":0,"y":0,"w":64,"h":128},"transform":{"tx":0,"ty":0,"rotation_deg":0,"scale":1}}"#;
    let (status, body) = send(router(state), query_request(&instances[5].print, req)).await;
    assert_eq!(status, StatusCode::OK);
    let top = &json(&body)["results"][0];
    assert_eq!(top["model_id"], instances[5].model_id.as_str());
    assert_eq!(top["best_instance_id"], instances[5].instance_id.as_str());
    assert!((top["score"].as_f64().unwrap() - 1.0).abs() < 1e-5);
}

#[tokio::test]
async fn identical_requests_give_identical_rankings() {
    let (state, inst) = state_with(ServiceSection::default(), true);
    let app = router(state);
    let req = r#"{"mask":{"type":"polygon","points":[[3,5],[60,9],[50,120],[6,100]]},"k":4,"transform":{"tx":2.5,"rotation_deg":4}}"#;
    let (_, a) = send(app.clone(), query_request(&inst[3].print, req)).await;
    let (_, b) = send(app, query_request(&inst[3].print, req)).await;
    assert_eq!(json(&a)["results"], json(&b)["results"]);
}
