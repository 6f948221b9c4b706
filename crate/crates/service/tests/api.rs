use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

use calibwiz_core::calibration::ImageObservations;
use calibwiz_core::geometry::{project_target, IntrinsicParams, Pose, TargetSpec};
use calibwiz_core::synth::{random_pose, synthesize_image};
use calibwiz_core::umap::UncertaintyMap;
use calibwiz_service::{router, AppState};

const SIZE: [u32; 2] = [640, 480];

fn truth() -> IntrinsicParams {
    IntrinsicParams::with_k1k2(800.0, 320.0, 240.0, 0.01, 0.1)
}

struct Api {
    app: Router,
}

impl Api {
    fn new() -> Self {
        Self { app: router(AppState::new()) }
    }

    async fn call(&self, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Vec<u8>) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", "application/json")
            .body(body.map(Body::from).unwrap_or_else(Body::empty))
            .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
    }

    async fn json(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let (s, bytes) = self.call(method, uri, body.map(|b| b.to_string())).await;
        (s, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }

    async fn create(&self, config: Value) -> String {
        let (s, v) = self.json("POST", "/sessions", Some(config)).await;
        assert_eq!(s, StatusCode::CREATED, "{v}");
        v["id"].as_str().unwrap().to_string()
    }

    async fn submit(&self, id: &str, im: &ImageObservations) -> (StatusCode, Value) {
        self.json("POST", &format!("/sessions/{id}/observations"), Some(serde_json::to_value(im).unwrap())).await
    }
}

fn views(seed: u64, n: usize) -> Vec<(Pose, ImageObservations)> {
    let target = TargetSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let pose = random_pose(&truth(), &target, SIZE, &mut rng).unwrap();
            let im = synthesize_image(&truth(), &pose, &target, SIZE, 0.0, &mut rng).unwrap();
            (pose, im)
        })
        .collect()
}

fn virtual_config() -> Value {
    json!({ "mode": "virtual", "ground_truth": truth(), "planner": { "budget": 600, "border_margin": 5.0 } })
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[tokio::test]
async fn create_returns_distinct_ids() {
    let api = Api::new();
    let (s, v) = api.call("POST", "/sessions", None).await;
    assert_eq!(s, StatusCode::CREATED);
    let v: Value = serde_json::from_slice(&v).unwrap();
    assert_eq!(v["config"]["model"], "pinhole-k1k2");
    let b = api.create(json!({})).await;
    assert_ne!(v["id"].as_str().unwrap(), b);
}

#[tokio::test]
async fn invalid_configs_are_rejected() {
    let api = Api::new();
    for cfg in [
        json!({ "target": { "rows": 0, "cols": 9, "spacing": 1.0 } }),
        json!({ "mode": "virtual" }),
        json!({ "noise_sigma": -1.0 }),
        json!({ "colour": "red" }),
    ] {
        let (s, v) = api.json("POST", "/sessions", Some(cfg.clone())).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{cfg}");
        assert_eq!(v["error"], "InvalidConfig");
        assert!(v["message"].as_str().is_some_and(|m| !m.is_empty()));
    }
}

#[tokio::test]
async fn unknown_session_is_not_found() {
    let api = Api::new();
    let (s, v) = api.json("GET", "/sessions/nope/calibration", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "SessionNotFound");
}

#[tokio::test]
async fn calibration_starts_at_three_images() {
    let api = Api::new();
    let id = api.create(json!({})).await;
    let v = views(1, 3);
    for (k, (_, im)) in v.iter().take(2).enumerate() {
        let (s, body) = api.submit(&id, im).await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(body["status"], "collecting");
        assert_eq!(body["image_count"], k + 1);
        assert!(body["theta"].is_null());
    }
    let (s, body) = api.submit(&id, &v[2].1).await;
    assert_eq!(s, StatusCode::OK, "{body}");
    assert_eq!(body["status"], "calibrated");
    let theta: IntrinsicParams = serde_json::from_value(body["theta"].clone()).unwrap();
    for (e, t) in theta.to_vec().iter().zip(truth().to_vec()) {
        assert!(rel(*e, t) < 1e-6, "{theta:?}");
    }
    assert_eq!(body["history"].as_array().unwrap().len(), 1);
    let (_, again) = api.json("GET", &format!("/sessions/{id}/calibration"), None).await;
    assert_eq!(again, body);
}

#[tokio::test]
async fn malformed_payload_leaves_session_unchanged() {
    let api = Api::new();
    let id = api.create(json!({})).await;
    api.submit(&id, &views(2, 1)[0].1).await;
    let uri = format!("/sessions/{id}/observations");
    for bad in ["{not json", r#"{"corners":[{"j":0,"x":"a","y":1}]}"#, r#"{"corners":[{"j":999,"x":1,"y":1}]}"#] {
        let (s, body) = api.call("POST", &uri, Some(bad.into())).await;
        assert_eq!(s, StatusCode::BAD_REQUEST);
        let v: Value = serde_json::from_slice(&body).unwrap();
        assert_eq!(v["error"], "SchemaError");
    }
    let (_, v) = api.json("GET", &format!("/sessions/{id}/calibration"), None).await;
    assert_eq!(v["image_count"], 1);
}

#[tokio::test]
async fn fronto_parallel_views_report_guidance() {
    let api = Api::new();
    let id = api.create(json!({ "model": "pinhole3" })).await;
    let target = TargetSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let theta = IntrinsicParams::pinhole(800.0, 320.0, 240.0);
    let mut last = None;
    for dx in [-1.0, 0.0, 1.0] {
        let pose = Pose::from_degrees([dx, 0.0, 20.0], [0.0; 3]);
        let im = synthesize_image(&theta, &pose, &target, SIZE, 0.0, &mut rng).unwrap();
        last = Some(api.submit(&id, &im).await);
    }
    let (s, v) = last.unwrap();
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "DegenerateConfiguration");
    assert!(v["message"].as_str().unwrap().contains("tilted"));
    let (_, v) = api.json("GET", &format!("/sessions/{id}/calibration"), None).await;
    assert_eq!(v["image_count"], 3);
    assert_eq!(v["status"], "collecting");
}

#[tokio::test]
async fn next_pose_is_feasible_improving_and_cached() {
    let api = Api::new();
    let id = api.create(virtual_config()).await;
    let uri = format!("/sessions/{id}/next-pose");
    let (s, v) = api.json("GET", &uri, None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["error"], "NotCalibrated");
    for (_, im) in views(3, 3) {
        api.submit(&id, &im).await;
    }
    let (s, first) = api.call("GET", &uri, None).await;
    assert_eq!(s, StatusCode::OK);
    let v: Value = serde_json::from_slice(&first).unwrap();
    assert!(v["objective"].as_f64().unwrap() < v["current_trace"].as_f64().unwrap());
    for c in v["corners"].as_array().unwrap() {
        let (x, y) = (c[0].as_f64().unwrap(), c[1].as_f64().unwrap());
        assert!((0.0..640.0).contains(&x) && (0.0..480.0).contains(&y));
    }
    let (_, second) = api.call("GET", &uri, None).await;
    assert_eq!(first, second);

    let (s, w) = api.json("GET", &format!("{uri}?weighted=true"), None).await;
    assert_eq!(s, StatusCode::OK, "{w}");
    assert_eq!(w["weighted"], true);
    assert!(w["objective"].as_f64().unwrap().is_finite());
    let (s, v) = api.json("GET", &format!("{uri}?weighted=maybe"), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "SchemaError");
}

#[tokio::test]
async fn virtual_capture_contract() {
    let api = Api::new();
    let id = api.create(virtual_config()).await;
    let uri = format!("/sessions/{id}/virtual-capture");
    let v = views(4, 3);

    let (s, cap) = api.json("POST", &uri, Some(json!({ "pose": v[0].0 }))).await;
    assert_eq!(s, StatusCode::OK);
    assert!(cap["proximity"].is_null());
    let exact = project_target(&truth(), &v[0].0, &TargetSpec::default()).unwrap();
    let image: ImageObservations = serde_json::from_value(cap["image"].clone()).unwrap();
    for c in &image.corners {
        assert_eq!((c.x, c.y), (exact[c.j].x, exact[c.j].y));
    }

    for (_, im) in &v {
        api.submit(&id, im).await;
    }
    let (_, next) = api.json("GET", &format!("/sessions/{id}/next-pose"), None).await;
    let (s, cap) = api.json("POST", &uri, Some(json!({ "pose": next["pose"] }))).await;
    assert_eq!(s, StatusCode::OK, "{cap}");
    // The pose crosses JSON once, so allow round-off.
    assert!(cap["proximity"]["mean_corner_distance"].as_f64().unwrap() < 1e-9);
    assert_eq!(cap["proximity"]["within_threshold"], true);

    let off = Pose::from_degrees([30.0, 0.0, 20.0], [0.0; 3]);
    let (s, e) = api.json("POST", &uri, Some(json!({ "pose": off }))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(e["error"], "PoseInfeasible");

    let live = api.create(json!({})).await;
    let (s, e) = api.json("POST", &format!("/sessions/{live}/virtual-capture"), Some(json!({ "pose": off }))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(e["error"], "NotVirtualMode");
}

async fn guided_capture(api: &Api, id: &str) {
    let (_, next) = api.json("GET", &format!("/sessions/{id}/next-pose"), None).await;
    let (s, cap) = api.json("POST", &format!("/sessions/{id}/virtual-capture"), Some(json!({ "pose": next["pose"] }))).await;
    assert_eq!(s, StatusCode::OK, "{cap}");
    let (s, _) = api.json("POST", &format!("/sessions/{id}/observations"), Some(cap["image"].clone())).await;
    assert_eq!(s, StatusCode::OK);
}

async fn map(api: &Api, id: &str, query: &str) -> UncertaintyMap {
    let (s, body) = api.call("GET", &format!("/sessions/{id}/uncertainty-map{query}"), None).await;
    assert_eq!(s, StatusCode::OK);
    UncertaintyMap::from_sidecar(&body).unwrap()
}

#[tokio::test]
async fn uncertainty_map_shrinks_with_wizard_images() {
    let api = Api::new();
    let id = api.create(virtual_config()).await;
    let (s, v) = api.json("GET", &format!("/sessions/{id}/uncertainty-map"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["error"], "NotCalibrated");
    for (_, im) in views(5, 3) {
        api.submit(&id, &im).await;
    }
    let before = map(&api, &id, "").await;
    assert_eq!(before.stat.code(), 0);
    assert_eq!((before.width, before.height), (640, 480));
    let det = map(&api, &id, "?stat=det").await;
    assert_eq!(det.stat.code(), 2);
    guided_capture(&api, &id).await;
    guided_capture(&api, &id).await;
    let after = map(&api, &id, "?stat=trace").await;
    for (a, b) in after.values.iter().zip(&before.values) {
        assert!(*a <= *b * (1.0 + 1e-9), "{a} > {b}");
    }
}

#[tokio::test]
async fn sessions_are_isolated() {
    let api = Api::new();
    let a = api.create(virtual_config()).await;
    let b = api.create(json!({ "model": "pinhole3" })).await;
    let va = views(6, 4);
    let vb = views(7, 3);
    for (k, (_, im)) in vb.iter().enumerate() {
        api.submit(&b, im).await;
        api.submit(&a, &va[k].1).await;
    }
    let (_, snap_b) = api.json("GET", &format!("/sessions/{b}/calibration"), None).await;
    api.submit(&a, &va[3].1).await;
    api.json("GET", &format!("/sessions/{a}/next-pose"), None).await;
    let (_, b_again) = api.json("GET", &format!("/sessions/{b}/calibration"), None).await;
    assert_eq!(snap_b, b_again);
    let (_, a_now) = api.json("GET", &format!("/sessions/{a}/calibration"), None).await;
    assert_eq!(a_now["image_count"], 4);
    assert_eq!(b_again["image_count"], 3);
    assert_eq!(b_again["theta"]["model"], "pinhole3");
}

#[tokio::test]
async fn new_observation_invalidates_cached_suggestion() {
    let api = Api::new();
    let id = api.create(virtual_config()).await;
    let v = views(8, 4);
    for (_, im) in &v[..3] {
        api.submit(&id, im).await;
    }
    let uri = format!("/sessions/{id}/next-pose");
    let (_, first) = api.call("GET", &uri, None).await;
    api.submit(&id, &v[3].1).await;
    let (_, second) = api.call("GET", &uri, None).await;
    assert_ne!(first, second);
}

#[tokio::test]
async fn export_contains_state_and_observations() {
    let api = Api::new();
    let id = api.create(json!({})).await;
    for (_, im) in views(9, 3) {
        api.submit(&id, &im).await;
    }
    let (s, v) = api.json("GET", &format!("/sessions/{id}/export"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["observations"]["images"].as_array().unwrap().len(), 3);
    assert_eq!(v["state"]["poses"].as_array().unwrap().len(), 3);
}
