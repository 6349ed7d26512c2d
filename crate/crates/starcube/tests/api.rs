mod common;

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use starcube::api::{router, Api};
use starcube::config::PipelineConfig;
use starcube::gen::{generate, GenSpec};
use starcube::pipeline::run_pipeline;
use tower::ServiceExt;

use common::{assert_valid, balances_state, empty_state, printed_rows};

async fn call(api: &Arc<Api>, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or(Body::empty(), |b| Body::from(b.to_string())))
        .unwrap();
    let resp = router(api.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v =
        serde_json::from_slice(&bytes).unwrap_or_else(|_| panic!("non-JSON body: {}", String::from_utf8_lossy(&bytes)));
    if !status.is_success() {
        assert_valid("ErrorBody", &v);
    }
    (status, v)
}

fn balances_api() -> Arc<Api> {
    Arc::new(Api::new(balances_state()))
}

#[tokio::test]
async fn catalog_describes_schema_views_and_epoch() {
    let mut state = empty_state();
    state.define_views(&PipelineConfig::load(&common::fixture_dir().join("pipeline.toml")).unwrap().views).unwrap();
    let api = Arc::new(Api::new(state));
    let (status, cat) = call(&api, "GET", "/catalog", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_valid("Catalog", &cat);
    let dims = cat["dimensions"].as_array().unwrap();
    assert_eq!(dims.len(), 6);
    let time = dims.iter().find(|d| d["name"] == "time").unwrap();
    assert_eq!(time["levels"].as_array().unwrap().len(), 4);
    assert_eq!(cat["epoch"], 0);
    assert_eq!(cat["views"][0]["stale"], true);

    let (_, after) = call(&balances_api(), "GET", "/catalog", None).await;
    assert!(after["epoch"].as_u64().unwrap() > 0);
    assert_eq!(after["fact"]["rows"], 33);
    assert_eq!(after["views"][0]["stale"], false);
}

#[tokio::test]
async fn member_pages() {
    let api = balances_api();
    let (status, page) = call(&api, "GET", "/dimensions/office/members?level=governorate", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_valid("MemberPage", &page);
    assert_eq!(page["total"], 6);
    assert!(page["total"].as_u64().unwrap() <= 24);

    let (_, q) = call(&api, "GET", "/dimensions/time/members?level=quarter&parent=2009", None).await;
    assert_eq!(q["total"], 4);
    assert_eq!(q["members"][0]["key"], "2009-Q1");

    let (_, kids) = call(&api, "GET", "/dimensions/office/members?level=office&parent=GABES", None).await;
    let keys: Vec<&str> = kids["members"].as_array().unwrap().iter().map(|m| m["key"].as_str().unwrap()).collect();
    assert_eq!(keys, ["16", "17", "18"]);

    let (_, paged) = call(&api, "GET", "/dimensions/office/members?offset=7&limit=5", None).await;
    assert_eq!(paged["total"], 9);
    assert_eq!(paged["members"].as_array().unwrap().len(), 2);

    for (uri, field) in [
        ("/dimensions/region/members", "name"),
        ("/dimensions/office/members?level=zone", "level"),
        ("/dimensions/time/members?level=quarter&parent=1999", "parent"),
        ("/dimensions/time/members?level=year&parent=2009", "parent"),
    ] {
        let (status, err) = call(&api, "GET", uri, None).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(err["field"], field, "{uri}");
    }
    let (status, _) = call(&api, "GET", "/dimensions/office/members?limit=many", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn query_reproduces_the_fine_grained_rows() {
    let api = balances_api();
    let body = json!({"group_by": ["office.office", "prestation.prestation"], "echo": "balances"});
    let (status, resp) = call(&api, "POST", "/query", Some(body)).await;
    assert_eq!(status, StatusCode::OK);
    assert_valid("QueryResponse", &resp);
    assert_eq!(resp["echo"], "balances");
    assert_eq!(resp["provenance"]["plan"], "mview");
    let mut got: Vec<(String, String, i64)> = resp["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| {
            let m = &r["members"];
            (
                m[0]["key"].as_str().unwrap().into(),
                m[1]["key"].as_str().unwrap().into(),
                r["values"][0].as_i64().unwrap(),
            )
        })
        .collect();
    got.sort();
    let mut want: Vec<(String, String, i64)> =
        printed_rows().into_iter().map(|r| (r.office, r.code, r.montant)).collect();
    want.sort();
    assert_eq!(got, want);
}

#[tokio::test]
async fn query_errors_and_empty_results() {
    let api = balances_api();
    let empty = json!({"group_by": ["office.governorate"], "time_range": {"from": "1990-01-01", "to": "1990-12-31"}});
    let (status, resp) = call(&api, "POST", "/query", Some(empty)).await;
    assert_eq!(status, StatusCode::OK);
    assert_valid("QueryResponse", &resp);
    assert_eq!(resp["rows"].as_array().unwrap().len(), 0);

    let (status, err) = call(&api, "POST", "/query", Some(json!({"group_by": ["office.region"]}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["field"], "group_by[0]");
    assert_eq!(err["error"], "invalid_request");

    let (status, err) =
        call(&api, "POST", "/query", Some(json!({"group_by": ["office.governorate"], "force": "cuboid"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["field"], "force");

    let (status, _) = call(&api, "POST", "/query", Some(json!("not an object"))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&api, "GET", "/nowhere", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let loading = Arc::new(Api::loading());
    for (method, uri, body) in [("POST", "/query", Some(json!({}))), ("GET", "/catalog", None)] {
        let (status, err) = call(&loading, method, uri, body).await;
        assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
        assert_eq!(err["error"], "loading");
    }
}

#[tokio::test]
async fn navigation_steps() {
    let api = balances_api();
    let start = json!({"group_by": ["office.governorate"], "force": "scan"});
    let nav = |action: &str, extra: Value| {
        let mut b = json!({"query": start, "action": action, "dimension": "office"});
        b.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
        b
    };
    let (status, next) = call(&api, "POST", "/navigate", Some(nav("drill_down", json!({"anchor": "GABES"})))).await;
    assert_eq!(status, StatusCode::OK, "{next}");
    assert_valid("NavigateResponse", &next);
    assert_eq!(next["query"]["group_by"], json!(["office.office"]));
    assert_eq!(next["query"]["force"], "scan");
    let (_, resp) = call(&api, "POST", "/query", Some(next["query"].clone())).await;
    assert_eq!(resp["rows"].as_array().unwrap().len(), 3);

    let (_, up) = call(&api, "POST", "/navigate", Some(nav("roll_up", json!({})))).await;
    assert_eq!(up["query"]["group_by"], json!([]));

    let (_, sliced) =
        call(&api, "POST", "/navigate", Some(nav("slice", json!({"level": "governorate", "member": "BEJA"})))).await;
    assert_eq!(sliced["query"]["filters"][0]["members"], json!(["BEJA"]));

    let (status, err) = call(&api, "POST", "/navigate", Some(nav("drill_down", json!({"anchor": "PARIS"})))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["field"], "anchor");
    let (status, err) = call(&api, "POST", "/navigate", Some(nav("slice", json!({"level": "governorate"})))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["field"], "member");
}

#[tokio::test]
async fn refresh_with_nothing_stale_is_a_no_op() {
    let api = balances_api();
    let (status, job) = call(&api, "POST", "/admin/refresh-views", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_valid("JobStatus", &job);
    assert_eq!(job["status"], "succeeded");
    assert_eq!(job["refreshed"], json!([]));
    let id = job["id"].as_u64().unwrap();
    let (_, polled) = call(&api, "GET", &format!("/admin/jobs/{id}"), None).await;
    assert_eq!(polled, job);
    let (status, _) = call(&api, "GET", "/admin/jobs/999", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn refresh_rebuilds_stale_views() {
    let mut state = empty_state();
    state.define_views(&PipelineConfig::load(&common::fixture_dir().join("pipeline.toml")).unwrap().views).unwrap();
    let api = Arc::new(Api::new(state));
    let (_, job) = call(&api, "POST", "/admin/refresh-views", None).await;
    assert_eq!(job["refreshed"], json!(["MvtRegPresBr"]));
    let (_, cat) = call(&api, "GET", "/catalog", None).await;
    assert_eq!(cat["views"][0]["stale"], false);
}

async fn poll(api: &Arc<Api>, id: u64) -> Value {
    for _ in 0..2000 {
        let (_, job) = call(api, "GET", &format!("/admin/jobs/{id}"), None).await;
        assert_valid("JobStatus", &job);
        if job["status"] != "running" {
            return job;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("job {id} did not finish");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn etl_job_matches_a_direct_run_and_excludes_a_second_job() {
    let dir = tempfile::tempdir().unwrap();
    let spec = GenSpec { facts: 40_000, insured: 500, ..Default::default() };
    let manifest = generate(&spec).unwrap().write(&spec, dir.path()).unwrap();
    let cfg = PipelineConfig::load(&dir.path().join("pipeline.toml")).unwrap();
    let direct = run_pipeline(&cfg, &empty_state()).unwrap();

    let api = Arc::new(Api::new(empty_state()).with_pipeline(cfg));
    let (status, job) = call(&api, "POST", "/admin/etl-run", None).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_valid("JobStatus", &job);
    assert_eq!(job["status"], "running");
    let (second, err) = call(&api, "POST", "/admin/etl-run", None).await;
    assert_eq!(second, StatusCode::CONFLICT, "{err}");
    let (refresh, _) = call(&api, "POST", "/admin/refresh-views", None).await;
    assert_eq!(refresh, StatusCode::CONFLICT);

    // queries during the job see one epoch or the other, never a mix
    let total = json!({"group_by": []});
    loop {
        let (status, resp) = call(&api, "POST", "/query", Some(total.clone())).await;
        assert_eq!(status, StatusCode::OK);
        match resp["epoch"].as_u64().unwrap() {
            0 => assert_eq!(resp["rows"], json!([])),
            _ => {
                assert_eq!(resp["rows"][0]["values"][0].as_i64().unwrap(), manifest.montant_total);
                break;
            }
        }
    }

    let done = poll(&api, job["id"].as_u64().unwrap()).await;
    assert_eq!(done["status"], "succeeded");
    assert_eq!(done["report"], serde_json::to_value(&direct.report).unwrap());
    let (status, _) = call(&api, "POST", "/admin/etl-run", None).await;
    assert_eq!(status, StatusCode::ACCEPTED);
}

#[tokio::test]
async fn etl_run_without_config_is_rejected() {
    let (status, err) = call(&balances_api(), "POST", "/admin/etl-run", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(err["detail"].as_str().unwrap().contains("pipeline config"));
}

#[tokio::test]
async fn published_schema_is_served() {
    let resp =
        router(balances_api()).oneshot(Request::builder().uri("/schema").body(Body::empty()).unwrap()).await.unwrap();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v: Value = serde_json::from_slice(&bytes).unwrap();
    assert!(v["$defs"]["QueryRequest"].is_object());
}
