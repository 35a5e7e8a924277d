use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use eomwatch_core::pipeline::{self, RunConfig};
use eomwatch_core::synth::{self, eomi2_closed_form, NoiseStd, SynthConfig};
use eomwatch_service::chip::diverging;
use eomwatch_service::{router, AppState, ParcelSummary, PhotoInterpretationStats, Timeseries};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn extracted(dir: &Path, synth: SynthConfig) -> RunConfig {
    let mut cfg = RunConfig::new(dir);
    cfg.synth = synth;
    pipeline::run_synth(&cfg).unwrap();
    pipeline::run_extract(&cfg).unwrap();
    cfg
}

fn app(cfg: &RunConfig) -> Router {
    router(Arc::new(AppState::new(cfg.clone()).unwrap()), None)
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, headers, body)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    let (s, _, b) = send(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (s, b)
}

async fn post_json(app: &Router, uri: &str, body: &str) -> (StatusCode, Vec<u8>) {
    let req = Request::post(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (s, _, b) = send(app, req).await;
    (s, b)
}

fn parse<T: serde::de::DeserializeOwned>(body: &[u8]) -> T {
    serde_json::from_slice(body).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(body)))
}

async fn parcels(app: &Router) -> Vec<ParcelSummary> {
    let (s, b) = get(app, "/api/parcels").await;
    assert_eq!(s, StatusCode::OK);
    parse(&b)
}

async fn stats(app: &Router) -> PhotoInterpretationStats {
    let (s, b) = get(app, "/api/stats/photo-interpretation").await;
    assert_eq!(s, StatusCode::OK);
    parse(&b)
}

#[tokio::test]
async fn missing_artifacts_give_503() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&RunConfig::new(dir.path()));
    assert_eq!(get(&app, "/api/parcels").await.0, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(get(&app, "/api/stats/photo-interpretation").await.0, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn artifacts_appearing_after_start_are_picked_up() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&RunConfig::new(dir.path()));
    assert_eq!(get(&app, "/api/parcels").await.0, StatusCode::SERVICE_UNAVAILABLE);
    extracted(dir.path(), SynthConfig::default());
    assert_eq!(parcels(&app).await.len(), 40);
}

#[tokio::test]
async fn parcel_list_is_sorted_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = extracted(dir.path(), SynthConfig::default());
    let list = parcels(&app(&cfg)).await;
    assert_eq!(list.len(), 40);
    let ids: Vec<&str> = list.iter().map(|p| p.parcel_id.as_str()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    assert_eq!(list.iter().filter(|p| p.treated).count(), 20);
    for p in &list {
        assert_eq!(p.status, if p.treated { "pending" } else { "control" });
        assert!(p.window_start < p.anchor_date && p.anchor_date < p.window_end);
    }
}

#[tokio::test]
async fn timeseries_shows_the_injected_eomi2_step() {
    let dir = tempfile::tempdir().unwrap();
    let synth_cfg = SynthConfig {
        noise: NoiseStd::uniform(0.0),
        cloud_pixel_fraction: 0.0,
        overcast_every: 0,
        ..SynthConfig::default()
    };
    let cfg = extracted(dir.path(), synth_cfg.clone());
    let corpus = synth::generate(&SynthConfig {
        seed: cfg.seed,
        ..synth_cfg
    })
    .unwrap();
    let app = app(&cfg);
    let treated: Vec<ParcelSummary> = parcels(&app).await.into_iter().filter(|p| p.treated).collect();
    for p in treated.iter().take(5) {
        let (s, b) = get(&app, &format!("/api/parcels/{}/timeseries", p.parcel_id)).await;
        assert_eq!(s, StatusCode::OK);
        let ts: Timeseries = parse(&b);
        assert_eq!(ts.anchor_date, p.anchor_date);
        assert!(ts.series.iter().all(|o| o.values.len() == 17));
        let base = corpus.base_reflectance[&p.parcel_id];
        let at_anchor = ts.series.iter().find(|o| o.date == ts.anchor_date).expect("scene on anchor date");
        let before = ts.series.iter().find(|o| o.date < ts.anchor_date).expect("pre-event scene");
        let eomi2 = |o: &eomwatch_service::TimeseriesPoint| o.values["eomi2"].unwrap();
        assert!((eomi2(at_anchor) - eomi2_closed_form(base[1], base[5], 0.7, 0.9)).abs() < 1e-6);
        assert!((eomi2(before) - eomi2_closed_form(base[1], base[5], 1.0, 1.0)).abs() < 1e-6);
        assert!(eomi2(at_anchor) > eomi2(before));
    }
}

#[tokio::test]
async fn timeseries_errors_and_empty_series() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::new(dir.path());
    pipeline::run_synth(&cfg).unwrap();
    // No synthetic scene is cloud-free, so every series comes out empty.
    cfg.cloud_max = 0.0;
    pipeline::run_extract(&cfg).unwrap();
    let app = app(&cfg);
    assert_eq!(get(&app, "/api/parcels/NOPE/timeseries").await.0, StatusCode::NOT_FOUND);
    let id = &parcels(&app).await[0].parcel_id;
    let (s, b) = get(&app, &format!("/api/parcels/{id}/timeseries")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(parse::<Value>(&b)["series"], json!([]));
}

#[tokio::test]
async fn chips_render_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = extracted(dir.path(), SynthConfig::default());
    let app = app(&cfg);
    let p = &parcels(&app).await[0];
    for layer in ["rgb", "ndvi", "eomi2"] {
        let uri = format!("/api/parcels/{}/chip?date={}&layer={layer}", p.parcel_id, p.anchor_date);
        let req = || Request::get(&uri).body(Body::empty()).unwrap();
        let (s, h, first) = send(&app, req()).await;
        assert_eq!(s, StatusCode::OK, "{}", String::from_utf8_lossy(&first));
        assert_eq!(h[header::CONTENT_TYPE], "image/png");
        assert_eq!(h["x-chip-layer"], layer);
        let (_, _, second) = send(&app, req()).await;
        assert_eq!(first, second);

        let decoder = png::Decoder::new(std::io::Cursor::new(first));
        let reader = decoder.read_info().unwrap();
        let info = reader.info();
        // 6-pixel parcel padded by 20% per side and snapped outward to pixels.
        assert_eq!((info.width, info.height), (10, 10));
    }
    let ndvi = format!("/api/parcels/{}/chip?date={}&layer=ndvi", p.parcel_id, p.anchor_date);
    let (_, h, _) = send(&app, Request::get(&ndvi).body(Body::empty()).unwrap()).await;
    assert_eq!(h["x-chip-value-range"], "[[-1.0,1.0]]");
}

#[tokio::test]
async fn chip_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = extracted(dir.path(), SynthConfig::default());
    let app = app(&cfg);
    let p = &parcels(&app).await[0];
    let uri = |id: &str, date: &str, layer: &str| format!("/api/parcels/{id}/chip?date={date}&layer={layer}");
    let date = p.anchor_date.to_string();
    assert_eq!(get(&app, &uri(&p.parcel_id, &date, "xyz")).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(get(&app, &uri(&p.parcel_id, "june", "rgb")).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(get(&app, &uri(&p.parcel_id, "1999-01-01", "rgb")).await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, &uri("NOPE", &date, "rgb")).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn annotation_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = extracted(dir.path(), SynthConfig::default());
    let app = app(&cfg);
    let list = parcels(&app).await;
    let treated: Vec<&ParcelSummary> = list.iter().filter(|p| p.treated).collect();
    let control = list.iter().find(|p| !p.treated).unwrap();

    let empty = stats(&app).await;
    assert_eq!((empty.recall, empty.coverage, empty.annotated), (None, 0.0, 0));

    let url = |id: &str| format!("/api/parcels/{id}/annotation");
    let body = |v: bool| json!({ "change_visible": v, "annotator": "ana" }).to_string();

    let (s, b) = post_json(&app, &url(&treated[0].parcel_id), &body(true)).await;
    assert_eq!(s, StatusCode::OK);
    let rec: Value = parse(&b);
    assert_eq!(rec["parcel_id"], treated[0].parcel_id.as_str());
    assert_eq!(rec["change_visible"], true);
    assert!(rec["timestamp"].is_string());

    assert_eq!(post_json(&app, &url(&control.parcel_id), &body(true)).await.0, StatusCode::CONFLICT);
    assert_eq!(post_json(&app, &url("NOPE"), &body(true)).await.0, StatusCode::NOT_FOUND);
    assert_eq!(post_json(&app, &url(&treated[1].parcel_id), "{\"change_visible\": 1}").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(post_json(&app, &url(&treated[1].parcel_id), "not json").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(
        post_json(&app, &url(&treated[1].parcel_id), &json!({"change_visible": true, "annotator": " "}).to_string()).await.0,
        StatusCode::BAD_REQUEST
    );

    let one = stats(&app).await;
    assert_eq!((one.annotated, one.visible, one.recall), (1, 1, Some(1.0)));
    assert_eq!(one.coverage, 1.0 / treated.len() as f64);

    // Annotating a second parcel as visible moves coverage by 1/treated.
    post_json(&app, &url(&treated[1].parcel_id), &body(true)).await;
    let two = stats(&app).await;
    assert!((two.coverage - one.coverage - 1.0 / treated.len() as f64).abs() < 1e-12);

    // Last write wins.
    post_json(&app, &url(&treated[0].parcel_id), &body(false)).await;
    let after = stats(&app).await;
    assert_eq!((after.annotated, after.visible), (2, 1));
    assert_eq!(after.recall_display.as_deref(), Some("50.00%"));
    let annotated = parcels(&app).await.into_iter().find(|p| p.parcel_id == treated[0].parcel_id).unwrap();
    assert_eq!((annotated.status.as_str(), annotated.change_visible), ("annotated", Some(false)));

    // Replaying the log in a fresh service reconstructs the same statistics.
    let replayed = stats(&self::app(&cfg)).await;
    assert_eq!(serde_json::to_value(&replayed).unwrap(), serde_json::to_value(&after).unwrap());
    let lines = std::fs::read_to_string(cfg.annotation_log()).unwrap();
    assert_eq!(lines.lines().count(), 3);
}

#[tokio::test]
async fn recall_matches_the_97_parcel_anchor() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = extracted(
        dir.path(),
        SynthConfig {
            n_parcels: 194,
            ..SynthConfig::default()
        },
    );
    let app = app(&cfg);
    let treated: Vec<String> = parcels(&app).await.into_iter().filter(|p| p.treated).map(|p| p.parcel_id).collect();
    assert_eq!(treated.len(), 97);
    for (i, id) in treated.iter().enumerate() {
        let body = json!({ "change_visible": i >= 48, "annotator": "ana" }).to_string();
        assert_eq!(post_json(&app, &format!("/api/parcels/{id}/annotation"), &body).await.0, StatusCode::OK);
    }
    let s = stats(&app).await;
    assert_eq!((s.visible, s.annotated), (49, 97));
    assert_eq!(s.recall_display.as_deref(), Some("50.51%"));
    assert_eq!(s.recall, Some(49.0 / 97.0));
    let by_cat: usize = s.by_category.iter().map(|r| r.visible + r.not_visible).sum();
    assert_eq!(by_cat, 97);
}

#[tokio::test]
async fn cors_headers_present() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = extracted(dir.path(), SynthConfig::default());
    let app = app(&cfg);
    let req = Request::get("/api/parcels").header(header::ORIGIN, "http://localhost:5173").body(Body::empty()).unwrap();
    let (s, h, _) = send(&app, req).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(h[header::ACCESS_CONTROL_ALLOW_ORIGIN], "*");
}

#[tokio::test]
async fn static_dir_is_served_as_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let ui = tempfile::tempdir().unwrap();
    std::fs::write(ui.path().join("index.html"), "<html>ui</html>").unwrap();
    let cfg = RunConfig::new(dir.path());
    let app = router(Arc::new(AppState::new(cfg).unwrap()), Some(ui.path().to_path_buf()));
    let (s, b) = get(&app, "/index.html").await;
    assert_eq!((s, b.as_slice()), (StatusCode::OK, b"<html>ui</html>".as_slice()));
}

#[test]
fn diverging_midpoint_is_white() {
    assert_eq!(diverging(0.0), [247, 247, 247]);
}
