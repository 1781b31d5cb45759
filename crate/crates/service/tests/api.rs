use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use storyloom_core::oracle::{Gateway, MockBackend};
use storyloom_service::{router, AppState, ProjectStore};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/duck").join(name)
}

fn read(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

struct Harness {
    state: AppState,
    app: Router,
    _dir: tempfile::TempDir,
}

impl Harness {
    fn new(token: Option<&str>) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let gw = Gateway::new(Arc::new(MockBackend::load_dir(&fixture("mock")).unwrap())).recording();
        let state = AppState::new(ProjectStore::new(dir.path()), gw).with_token(token.map(str::to_string));
        Self {
            app: router(state.clone()),
            state,
            _dir: dir,
        }
    }

    async fn raw(&self, method: Method, uri: &str, body: Vec<u8>, token: Option<&str>) -> (StatusCode, Vec<u8>) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = token {
            req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
        }
        let res = self
            .app
            .clone()
            .oneshot(req.header(header::CONTENT_TYPE, "application/json").body(Body::from(body)).unwrap())
            .await
            .unwrap();
        let status = res.status();
        (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
    }

    async fn call(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let bytes = body.map(|b| serde_json::to_vec(&b).unwrap()).unwrap_or_default();
        let (status, out) = self.raw(method, uri, bytes, None).await;
        (status, serde_json::from_slice(&out).unwrap_or(Value::Null))
    }

    async fn finish(&self, job: &Value) -> Value {
        let id = job["job_id"].as_u64().unwrap();
        let jobs = self.state.jobs.clone();
        tokio::task::spawn_blocking(move || jobs.wait(id)).await.unwrap().unwrap();
        let (status, j) = self.call(Method::GET, &format!("/jobs/{id}"), None).await;
        assert_eq!(status, StatusCode::OK);
        j
    }

    /// A project with the duck storyworld, rule, both author dimensions and
    /// the first batch.
    async fn duck(&self) -> String {
        let (s, created) = self
            .call(
                Method::POST,
                "/projects",
                Some(json!({
                    "project_id": "duck",
                    "storyworld": serde_json::from_str::<Value>(&read("storyworld.json")).unwrap(),
                    "rules": serde_json::from_str::<Value>(&read("rules.json")).unwrap(),
                })),
            )
            .await;
        assert_eq!(s, StatusCode::CREATED, "{created}");
        let dims: Vec<Value> = serde_json::from_str(&read("dimensions.json")).unwrap();
        for d in dims {
            let (s, job) = self
                .call(
                    Method::POST,
                    "/projects/duck/dimensions",
                    Some(json!({"mode": "author", "name": d["name"], "description": d["description"], "values": d["values"]})),
                )
                .await;
            assert_eq!(s, StatusCode::ACCEPTED);
            assert_eq!(self.finish(&job).await["status"], "succeeded");
        }
        let (s, out) = self
            .raw(Method::POST, "/projects/duck/batches", read("batch_v1.json").into_bytes(), None)
            .await;
        assert_eq!(s, StatusCode::CREATED, "{}", String::from_utf8_lossy(&out));
        "duck".into()
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn duck_graph_over_rest() {
    let h = Harness::new(None);
    h.duck().await;
    let (s, g) = h.call(Method::GET, "/projects/duck/bsv?dims=ducks_advantage", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(g["nodes"].as_array().unwrap().len(), 7);
    assert_eq!(g["edges"].as_array().unwrap().len(), 6);
    let (s, g) = h
        .call(Method::GET, "/projects/duck/bsv?dims=ducks_advantage,duckling_behavior", None)
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(g["view"], "grid_2d");
    assert_eq!(g["nodes"].as_array().unwrap().len(), 7);

    let (s, dot) = h
        .raw(Method::GET, "/projects/duck/bsv/export.dot?dims=ducks_advantage", Vec::new(), None)
        .await;
    assert_eq!(s, StatusCode::OK);
    assert!(String::from_utf8(dot).unwrap().starts_with("digraph"));

    let (s, _) = h.call(Method::GET, "/projects/duck/bsv?dims=nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = h.call(Method::GET, "/projects/duck/bsv", None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = h.call(Method::GET, "/projects/duck/bsv?dims=ducks_advantage&view=sideways", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread")]
async fn upload_retains_dimensions_and_compares() {
    let h = Harness::new(None);
    h.duck().await;
    let (s, out) = h
        .raw(Method::POST, "/projects/duck/batches", read("batch_v2.json").into_bytes(), None)
        .await;
    assert_eq!(s, StatusCode::CREATED);
    let out: Value = serde_json::from_slice(&out).unwrap();
    assert_eq!(out["batch_id"], 2);

    let (_, list) = h.call(Method::GET, "/projects/duck/batches", None).await;
    assert_eq!(list.as_array().unwrap().len(), 2);
    let (s, a) = h
        .call(Method::GET, "/projects/duck/dimensions/ducks_advantage/assignments/2", None)
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(a["assignments"].as_array().unwrap().len(), 9);

    let (s, g) = h
        .call(Method::GET, "/projects/duck/bsv?dims=ducks_advantage&compare=true", None)
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(g["batch_id"], 2);
    assert_eq!(g["previous_overlay"]["batch_id"], 1);

    let (s, _) = h
        .raw(Method::POST, "/projects/duck/batches", b"[1, 2".to_vec(), None)
        .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (_, list) = h.call(Method::GET, "/projects/duck/batches", None).await;
    assert_eq!(list.as_array().unwrap().len(), 2);
}

#[tokio::test(flavor = "multi_thread")]
async fn rules_crud() {
    let h = Harness::new(None);
    h.duck().await;
    let rule = json!({"id": "r2", "condition": "It snows.", "effect": "The pond freezes."});
    let (s, _) = h.call(Method::POST, "/projects/duck/rules", Some(rule.clone())).await;
    assert_eq!(s, StatusCode::CREATED);
    let (s, _) = h.call(Method::POST, "/projects/duck/rules", Some(rule)).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, r) = h
        .call(
            Method::PUT,
            "/projects/duck/rules/r2",
            Some(json!({"id": "ignored", "condition": "It snows.", "effect": "Ice.", "persistent": true})),
        )
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(r["id"], "r2");
    assert_eq!(r["persistent"], true);
    let (_, list) = h.call(Method::GET, "/projects/duck/rules", None).await;
    assert_eq!(list.as_array().unwrap().len(), 2);
    let (s, _) = h.call(Method::DELETE, "/projects/duck/rules/r2", None).await;
    assert_eq!(s, StatusCode::OK);
    let (s, _) = h.call(Method::GET, "/projects/duck/rules/r2", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = h.call(Method::GET, "/projects/none/rules", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn panels_and_highlights() {
    let h = Harness::new(None);
    h.duck().await;
    let (s, a) = h
        .call(Method::POST, "/projects/duck/panels", Some(json!({"dimension_ids": ["ducks_advantage"]})))
        .await;
    assert_eq!(s, StatusCode::CREATED);
    let (_, b) = h
        .call(
            Method::POST,
            "/projects/duck/panels",
            Some(json!({"dimension_ids": ["duckling_behavior"], "position": {"x": 2.0, "y": 0.0}})),
        )
        .await;
    let uri = format!("/projects/duck/panels/{}/combine/{}", a["panel_id"].as_str().unwrap(), b["panel_id"].as_str().unwrap());
    let (s, grid) = h.call(Method::POST, &uri, None).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(grid["view"], "grid_2d");
    let (s, _) = h
        .call(Method::POST, &format!("/projects/duck/panels/{}/combine/p1", grid["panel_id"].as_str().unwrap()), None)
        .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (_, canvas) = h.call(Method::GET, "/projects/duck/panels", None).await;
    assert_eq!(canvas.as_array().unwrap().len(), 3);

    for q in [
        "by=storyline&storyline=s1",
        "by=value&dims=ducks_advantage&value=high",
        "by=timestep&t=2",
    ] {
        let (s, v) = h.call(Method::GET, &format!("/projects/duck/highlight?{q}"), None).await;
        assert_eq!(s, StatusCode::OK, "{q}: {v}");
    }
    let (s, _) = h.call(Method::GET, "/projects/duck/highlight?by=colour", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread")]
async fn schema_edit_job() {
    let h = Harness::new(None);
    h.duck().await;
    let (s, job) = h
        .call(
            Method::PUT,
            "/projects/duck/dimensions/ducks_advantage/values",
            Some(json!({"values": ["low", "high"]})),
        )
        .await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let done = h.finish(&job).await;
    assert_eq!(done["status"], "succeeded", "{done}");
    assert_eq!(done["result"]["dimension"]["values"], json!(["low", "high"]));
    let (s, _) = h
        .call(Method::PUT, "/projects/duck/dimensions/nope/values", Some(json!({"values": ["a", "b"]})))
        .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = h
        .call(Method::PUT, "/projects/duck/dimensions/ducks_advantage/values", Some(json!({"values": ["a", "a"]})))
        .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test(flavor = "multi_thread")]
async fn simulate_and_induce_jobs() {
    let h = Harness::new(None);
    h.duck().await;
    let (s, job) = h
        .call(Method::POST, "/projects/duck/simulate", Some(json!({"rounds_per_playthrough": 5})))
        .await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let done = h.finish(&job).await;
    assert_eq!(done["status"], "succeeded", "{done}");
    assert_eq!(done["result"]["batch_id"], 2);

    let (_, job) = h
        .call(Method::POST, "/projects/duck/dimensions", Some(json!({"mode": "data_derived", "k": 3})))
        .await;
    let done = h.finish(&job).await;
    assert_eq!(done["status"], "succeeded", "{done}");
    let (_, dims) = h.call(Method::GET, "/projects/duck/dimensions", None).await;
    assert!(dims.as_array().unwrap().len() > 2);

    let (s, _) = h
        .call(Method::POST, "/projects/duck/simulate", Some(json!({"profiles": ["nobody"]})))
        .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = h.call(Method::GET, "/jobs/999", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn playtest_session() {
    let h = Harness::new(None);
    h.duck().await;
    let (s, first) = h.call(Method::POST, "/projects/duck/playtest/t1", None).await;
    assert_eq!(s, StatusCode::OK, "{first}");
    assert!(first["gm_text"].is_string());
    let (s, _) = h.call(Method::POST, "/projects/duck/playtest/t1", Some(json!({}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, step) = h
        .call(Method::POST, "/projects/duck/playtest/t1", Some(json!({"player_text": "The duckling stands up to the goose and hisses."})))
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(step["state"]["timestep"], 1);
    assert_eq!(step["triggers"][0]["rule_id"], "r1");
    let (s, export) = h.call(Method::GET, "/projects/duck/playtest/t1/export", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(export["storylines"][0]["id"], "t1");
    assert_eq!(export["storylines"][0]["rounds"][0]["triggered_rule_ids"], json!(["r1"]));
    let (s, _) = h.call(Method::GET, "/projects/duck/playtest/zzz", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn bearer_token_is_enforced() {
    let h = Harness::new(Some("sekrit"));
    let (s, _) = h.raw(Method::POST, "/projects", Vec::new(), None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, _) = h.raw(Method::POST, "/projects", Vec::new(), Some("wrong")).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, body) = h.raw(Method::POST, "/projects", Vec::new(), Some("sekrit")).await;
    assert_eq!(s, StatusCode::CREATED);
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["project_id"], "proj1");
}

#[tokio::test(flavor = "multi_thread")]
async fn storyworld_validation() {
    let h = Harness::new(None);
    let (s, _) = h.call(Method::POST, "/projects", Some(json!({"project_id": "p"}))).await;
    assert_eq!(s, StatusCode::CREATED);
    let (s, _) = h.call(Method::GET, "/projects/p/storyworld", None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let sw: Value = serde_json::from_str(&read("storyworld.json")).unwrap();
    let (s, _) = h.call(Method::PUT, "/projects/p/storyworld", Some(sw.clone())).await;
    assert_eq!(s, StatusCode::OK);
    let (_, got) = h.call(Method::GET, "/projects/p/storyworld", None).await;
    assert_eq!(got, sw);
    let (s, _) = h.call(Method::POST, "/projects", Some(json!({"project_id": "p"}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread")]
async fn reclassify_job() {
    let h = Harness::new(None);
    h.duck().await;
    let (s, job) = h.call(Method::POST, "/projects/duck/dimensions/duckling_behavior/classify", None).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let done = h.finish(&job).await;
    assert_eq!(done["status"], "succeeded", "{done}");
    assert_eq!(done["result"]["assignment"]["assignments"].as_array().unwrap().len(), 9);
    let (s, _) = h.call(Method::POST, "/projects/duck/dimensions/nope/classify", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = h
        .call(Method::POST, "/projects/duck/dimensions/duckling_behavior/classify", Some(json!({"batch_id": 9})))
        .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}
