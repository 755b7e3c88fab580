use std::path::Path;

use attnscope_core::format::DType;
use attnscope_core::render::RgbImage;
use attnscope_core::{open_dump, synth_dump, Shape3, SynthConfig};
use attnscope_service::{router, AppState, ServiceConfig, Session};
use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

/// Canonical axis counts with a small latent and output so tests stay fast.
fn canonical(dir: &Path) -> std::path::PathBuf {
    let cfg = SynthConfig {
        latent: Shape3::new(2, 6, 8),
        output: Shape3::new(5, 12, 16),
        dtype: DType::F16,
        ..SynthConfig::default()
    };
    let path = dir.join("canon.attn");
    synth_dump(&path, &cfg.spec().unwrap()).unwrap();
    path
}

fn app(dir: &Path) -> Router {
    let store = open_dump(canonical(dir)).unwrap();
    router(AppState::new(Session::new(store, 8 << 20)), &ServiceConfig::default())
}

async fn send(app: &Router, uri: &str, etag: Option<&str>) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let mut req = Request::get(uri);
    if let Some(e) = etag {
        req = req.header(header::IF_NONE_MATCH, e);
    }
    let resp = app.clone().oneshot(req.body(Body::empty()).unwrap()).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, headers, body)
}

fn json(body: &[u8]) -> Value {
    serde_json::from_slice(body).unwrap()
}

#[tokio::test]
async fn meta_echoes_header() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, headers, body) = send(&app, "/api/meta", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(headers[header::CONTENT_TYPE], "application/json");
    let v = json(&body);
    assert_eq!(v["dims"]["steps"], 25);
    assert_eq!(v["dims"]["blocks"], 30);
    assert_eq!(v["dims"]["heads"], 12);
    let tokens = v["tokens"].as_array().unwrap();
    assert!(tokens.iter().all(|t| t["is_special"].is_boolean()));
    assert!(tokens.iter().any(|t| t["is_special"] == true));
}

#[tokio::test]
async fn no_store_is_unavailable() {
    let app = router(AppState::empty(), &ServiceConfig::default());
    for uri in ["/api/meta", "/api/frame?token=0", "/api/stats?token=0"] {
        let (status, _, body) = send(&app, uri, None).await;
        assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
        let v = json(&body);
        assert_eq!(v["code"], 503);
        assert!(v["message"].is_string());
    }
}

#[tokio::test]
async fn frames_are_deterministic_and_revalidate() {
    let dir = tempfile::tempdir().unwrap();
    let uri = "/api/frame?token=1&step=mean&block=mean&head=mean&frame=2";
    let (s1, h1, b1) = send(&app(dir.path()), uri, None).await;
    assert_eq!(s1, StatusCode::OK);
    assert_eq!(h1[header::CONTENT_TYPE], "image/png");
    let img = RgbImage::from_png(&b1).unwrap();
    assert_eq!((img.width, img.height), (16, 12));

    // a fresh service over the same file gives the same bytes and tag
    let app = app(dir.path());
    let (_, h2, b2) = send(&app, uri, None).await;
    assert_eq!(b1, b2);
    let etag = h1[header::ETAG].to_str().unwrap().to_string();
    assert_eq!(h2[header::ETAG], etag.as_str());
    assert!(etag.starts_with('"') && etag.ends_with('"'));

    let (s3, h3, b3) = send(&app, uri, Some(&etag)).await;
    assert_eq!(s3, StatusCode::NOT_MODIFIED);
    assert!(b3.is_empty());
    assert_eq!(h3[header::ETAG], etag.as_str());

    let (_, h4, b4) = send(&app, "/api/frame?token=1&frame=2", None).await;
    assert_eq!(b4, b1, "step/block/head default to mean");
    assert_eq!(h4[header::ETAG], etag.as_str());

    let (_, h5, b5) = send(&app, "/api/frame?token=1&frame=3", None).await;
    assert_ne!(h5[header::ETAG], etag.as_str());
    assert_ne!(b5, b1);
}

#[tokio::test]
async fn frame_errors() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let cases = [
        ("/api/frame?token=1&step=25", 404),
        ("/api/frame?token=1&head=12", 404),
        ("/api/frame?token=9", 404),
        ("/api/frame?token=1&frame=5", 404),
        ("/api/frame?token=1&step=abc", 400),
        ("/api/frame?token=1&step=all", 400),
        ("/api/frame?token=1&norm=percentile:99,1", 400),
        ("/api/frame?token=1&cmap=/etc/passwd", 400),
        ("/api/frame?token=1&alpha=0.5", 400),
        ("/api/frame?token=x", 400),
        ("/api/frame", 400),
        ("/api/nothing", 404),
    ];
    for (uri, code) in cases {
        let (status, _, body) = send(&app, uri, None).await;
        assert_eq!(status.as_u16(), code, "{uri}");
        assert_eq!(json(&body)["code"], code, "{uri}");
    }
    let (ok, _, _) = send(
        &app,
        "/api/frame?token=1&step=24&frame=last&cmap=viridis&norm=global",
        None,
    )
    .await;
    assert_eq!(ok, StatusCode::OK);
}

#[tokio::test]
async fn token_text_resolves_words() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let meta = json(&send(&app, "/api/meta", None).await.2);
    let cat = meta["tokens"]
        .as_array()
        .unwrap()
        .iter()
        .find(|t| t["text"] == "cat")
        .unwrap()["index"]
        .as_u64()
        .unwrap();
    let (_, _, a) = send(&app, &format!("/api/frame?token={cat}"), None).await;
    let (s, _, b) = send(&app, "/api/frame?token_text=cat", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(a, b);
    // "a" occurs twice in the prompt
    let (s, _, body) = send(&app, "/api/frame?token_text=a", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(json(&body)["message"].as_str().unwrap().contains("#0"));
    let (s, _, _) = send(&app, "/api/frame?token_text=zebra", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn overlay_uses_loaded_base_frames() {
    let dir = tempfile::tempdir().unwrap();
    let store = open_dump(canonical(dir.path())).unwrap();
    let base = vec![RgbImage::filled(16, 12, [40, 80, 120]); 5];
    let session = Session::new(store, 1 << 20).with_base_frames(base).unwrap();
    let app = router(AppState::new(session), &ServiceConfig::default());
    let (s, _, body) = send(&app, "/api/frame?token=1&alpha=0", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(
        RgbImage::from_png(&body).unwrap(),
        RgbImage::filled(16, 12, [40, 80, 120])
    );
    let (s, _, _) = send(&app, "/api/frame?token=1&alpha=1.5", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn grids_have_paper_cardinality() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    // 30 blocks in 6 columns of 16x12 cells with 2px padding: 5 rows
    let (s, _, body) = send(
        &app,
        "/api/grid?token=1&axis=blocks&step=first&cols=6&cell_w=16&cell_h=12",
        None,
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let img = RgbImage::from_png(&body).unwrap();
    assert_eq!((img.width, img.height), (2 + 6 * 18, 2 + 5 * 14));

    // 12 heads, default ceil(sqrt(12)) = 4 columns, 3 rows
    let (s, _, body) = send(&app, "/api/grid?token=1&axis=heads&cell_w=16&cell_h=12&padding=0", None).await;
    assert_eq!(s, StatusCode::OK);
    let img = RgbImage::from_png(&body).unwrap();
    assert_eq!((img.width, img.height), (4 * 16, 3 * 12));

    let first = send(&app, "/api/grid?token=1&axis=steps&frame=0&cell_w=16&cell_h=12", None)
        .await
        .2;
    let last = send(
        &app,
        "/api/grid?token=1&axis=steps&frame=last&cell_w=16&cell_h=12",
        None,
    )
    .await
    .2;
    assert_ne!(first, last);

    for (uri, code) in [
        ("/api/grid?token=1", 400),
        ("/api/grid?token=1&axis=frames", 400),
        ("/api/grid?token=1&axis=heads&block=all", 400),
        ("/api/grid?token=1&axis=heads&step=30", 404),
        ("/api/grid?token=1&axis=heads&frame=9", 404),
        ("/api/grid?token=1&axis=heads&cols=0", 400),
    ] {
        let (status, _, _) = send(&app, uri, None).await;
        assert_eq!(status.as_u16(), code, "{uri}");
    }
}

#[tokio::test]
async fn stats_series_over_steps() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (s, _, body) = send(&app, "/api/stats?token=1&metric=entropy&axis=steps", None).await;
    assert_eq!(s, StatusCode::OK);
    let v = json(&body);
    let points = v["points"].as_array().unwrap();
    assert_eq!(points.len(), 25);
    let values: Vec<f64> = points.iter().map(|p| p["value"].as_f64().unwrap()).collect();
    assert!(values.windows(2).all(|w| w[1] < w[0]), "{values:?}");

    let (_, _, body) = send(&app, "/api/stats?token=1&metric=center_of_mass&axis=heads", None).await;
    let v = json(&body);
    assert_eq!(v["points"].as_array().unwrap().len(), 12);
    assert_eq!(v["points"][0]["value"].as_array().unwrap().len(), 3);

    let (s, h, body) = send(&app, "/api/stats?token=1&axis=blocks&format=csv", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(h[header::CONTENT_TYPE], "text/csv");
    assert_eq!(String::from_utf8(body).unwrap().lines().count(), 31);

    let (s, _, body) = send(&app, "/api/stats?token=1&metric=sharpness", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let msg = json(&body)["message"].as_str().unwrap().to_string();
    for m in ["entropy", "peak", "center_of_mass"] {
        assert!(msg.contains(m), "{msg}");
    }
}

#[tokio::test]
async fn concurrent_requests_agree() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let uris: Vec<String> = (0..24)
        .map(|i| format!("/api/frame?token=1&step={}&frame={}", i % 3, i % 5))
        .collect();
    let handles: Vec<_> = uris
        .iter()
        .cloned()
        .map(|u| {
            let app = app.clone();
            tokio::spawn(async move { send(&app, &u, None).await.2 })
        })
        .collect();
    let mut got = Vec::new();
    for h in handles {
        got.push(h.await.unwrap());
    }
    for (u, b) in uris.iter().zip(&got) {
        assert_eq!(&send(&app, u, None).await.2, b);
    }
}

#[tokio::test]
async fn cors_and_static_route() {
    let dir = tempfile::tempdir().unwrap();
    let web = dir.path().join("web");
    std::fs::create_dir(&web).unwrap();
    std::fs::write(web.join("index.html"), "<html>explorer</html>").unwrap();
    let store = open_dump(canonical(dir.path())).unwrap();
    let cfg = ServiceConfig {
        static_dir: Some(web),
        ..ServiceConfig::default()
    };
    let app = router(AppState::new(Session::new(store, 1 << 20)), &cfg);

    let (s, _, body) = send(&app, "/index.html", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body, b"<html>explorer</html>");
    let (s, _, _) = send(&app, "/", None).await;
    assert_eq!(s, StatusCode::OK);

    let req = Request::get("/api/meta")
        .header(header::ORIGIN, "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(resp.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN], "*");
    let exposed = resp.headers()[header::ACCESS_CONTROL_EXPOSE_HEADERS]
        .to_str()
        .unwrap()
        .to_lowercase();
    assert!(exposed.contains("etag"));
}
