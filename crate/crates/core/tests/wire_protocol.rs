//! Exercises the HTTP backend protocol against a scripted server: body
//! shapes, the result envelope, retry semantics, and idempotent request ids.

use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use base64::Engine;
use biaug_core::backends::{
    BackendError, DetectionRequest, EmbeddingRequest, Embedder, HttpDetector, HttpEmbedder,
    HttpInpainter, HttpTextGenerator, InpaintRequest, Inpainter, ObjectDetector, RetryPolicy,
    TextGenRequest, TextGenerator,
};
use biaug_core::types::BoundingBox;

#[derive(Debug, Clone)]
struct Recorded {
    path: String,
    request_id: String,
    body: serde_json::Value,
}

struct TestServer {
    base_url: String,
    requests: Arc<Mutex<Vec<Recorded>>>,
}

/// One scripted (status, body) response per expected request, served in
/// order on a fresh connection each.
fn spawn_server(responses: Vec<(u16, String)>) -> TestServer {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind test server");
    let base_url = format!("http://{}", listener.local_addr().unwrap());
    let requests: Arc<Mutex<Vec<Recorded>>> = Arc::new(Mutex::new(Vec::new()));
    let recorded = requests.clone();
    std::thread::spawn(move || {
        for (status, body) in responses {
            let (mut stream, _) = match listener.accept() {
                Ok(conn) => conn,
                Err(_) => return,
            };
            let mut buf = Vec::new();
            let mut chunk = [0u8; 4096];
            let (headers_end, request) = loop {
                let n = stream.read(&mut chunk).expect("read request");
                if n == 0 {
                    break (0, String::new());
                }
                buf.extend_from_slice(&chunk[..n]);
                if let Some(pos) = find(&buf, b"\r\n\r\n") {
                    break (pos + 4, String::from_utf8_lossy(&buf[..pos]).to_string());
                }
            };
            let content_length = request
                .lines()
                .find_map(|l| {
                    let (name, value) = l.split_once(':')?;
                    name.eq_ignore_ascii_case("content-length")
                        .then(|| value.trim().parse::<usize>().ok())?
                })
                .unwrap_or(0);
            while buf.len() < headers_end + content_length {
                let n = stream.read(&mut chunk).expect("read body");
                buf.extend_from_slice(&chunk[..n]);
            }
            let path = request
                .lines()
                .next()
                .and_then(|l| l.split_whitespace().nth(1))
                .unwrap_or_default()
                .to_string();
            let request_id = request
                .lines()
                .find_map(|l| {
                    let (name, value) = l.split_once(':')?;
                    name.eq_ignore_ascii_case("x-request-id")
                        .then(|| value.trim().to_string())
                })
                .unwrap_or_default();
            let body_json: serde_json::Value =
                serde_json::from_slice(&buf[headers_end..headers_end + content_length])
                    .unwrap_or(serde_json::Value::Null);
            recorded.lock().unwrap().push(Recorded {
                path,
                request_id,
                body: body_json,
            });

            let response = format!(
                "HTTP/1.1 {status} TEST\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(response.as_bytes()).expect("write response");
        }
    });
    TestServer { base_url, requests }
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        attempts: 3,
        backoff_base: Duration::from_millis(2),
        request_timeout: Duration::from_secs(5),
        max_inflight: 4,
    }
}

#[test]
fn generate_posts_request_body_and_unwraps_result() {
    let server = spawn_server(vec![(200, r#"{"result": "dog, ball"}"#.to_string())]);
    let client = HttpTextGenerator::new(server.base_url.clone(), fast_retry());
    let req = TextGenRequest::new("Caption: a dog\nObjects:", 7).unwrap();
    let text = client.generate_text(&req).unwrap();
    assert_eq!(text, "dog, ball");

    let recorded = server.requests.lock().unwrap();
    assert_eq!(recorded.len(), 1);
    assert_eq!(recorded[0].path, "/generate");
    assert_eq!(recorded[0].body["prompt"], "Caption: a dog\nObjects:");
    assert_eq!(recorded[0].body["temperature"], 0.0);
    assert_eq!(recorded[0].body["seed"], 7);
    assert_eq!(recorded[0].request_id.len(), 32);
}

#[test]
fn retryable_status_is_retried_with_the_same_request_id() {
    let server = spawn_server(vec![
        (429, r#"{"error": "backpressure"}"#.to_string()),
        (200, r#"{"result": "ok"}"#.to_string()),
    ]);
    let client = HttpTextGenerator::new(server.base_url.clone(), fast_retry());
    let req = TextGenRequest::new("prompt", 0).unwrap();
    assert_eq!(client.generate_text(&req).unwrap(), "ok");

    let recorded = server.requests.lock().unwrap();
    assert_eq!(recorded.len(), 2);
    assert_eq!(recorded[0].request_id, recorded[1].request_id);
    assert_eq!(recorded[0].body, recorded[1].body);
}

#[test]
fn persistent_server_errors_exhaust_the_retry_budget() {
    let failure = (500, r#"{"error": "down"}"#.to_string());
    let server = spawn_server(vec![failure.clone(), failure.clone(), failure]);
    let client = HttpTextGenerator::new(server.base_url.clone(), fast_retry());
    let req = TextGenRequest::new("prompt", 0).unwrap();
    match client.generate_text(&req) {
        Err(BackendError::Unavailable { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected Unavailable, got {other:?}"),
    }
    assert_eq!(server.requests.lock().unwrap().len(), 3);
}

#[test]
fn unreachable_endpoint_reports_unavailable() {
    // a bound-then-dropped listener guarantees nothing is listening
    let port = {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        listener.local_addr().unwrap().port()
    };
    let client = HttpTextGenerator::new(format!("http://127.0.0.1:{port}"), fast_retry());
    let req = TextGenRequest::new("prompt", 0).unwrap();
    assert!(matches!(
        client.generate_text(&req),
        Err(BackendError::Unavailable { attempts: 3, .. })
    ));
}

#[test]
fn client_errors_are_not_retried() {
    let server = spawn_server(vec![(400, r#"{"error": "bad"}"#.to_string())]);
    let client = HttpTextGenerator::new(server.base_url.clone(), fast_retry());
    let req = TextGenRequest::new("prompt", 0).unwrap();
    assert!(matches!(
        client.generate_text(&req),
        Err(BackendError::Rejected(_))
    ));
    assert_eq!(server.requests.lock().unwrap().len(), 1);
}

#[test]
fn empty_generation_is_flagged() {
    let server = spawn_server(vec![(200, r#"{"result": "  "}"#.to_string())]);
    let client = HttpTextGenerator::new(server.base_url.clone(), fast_retry());
    let req = TextGenRequest::new("prompt", 0).unwrap();
    assert!(matches!(
        client.generate_text(&req),
        Err(BackendError::EmptyResponse)
    ));
}

#[test]
fn detect_parses_boxes_and_enforces_the_candidate_subset() {
    let server = spawn_server(vec![(
        200,
        r#"{"result": [
            {"name": "dog", "box": [1, 2, 3, 4], "confidence": 0.9},
            {"name": "unicorn", "box": [0, 0, 2, 2], "confidence": 0.99}
        ]}"#
        .to_string(),
    )]);
    let client = HttpDetector::new(server.base_url.clone(), fast_retry());
    let req = DetectionRequest::new("scene.png", vec!["dog".into(), "cat".into()]).unwrap();
    let detections = client.detect(&req).unwrap();
    assert_eq!(detections.len(), 1);
    assert_eq!(detections[0].name, "dog");
    assert_eq!(detections[0].bbox, BoundingBox::new(1, 2, 3, 4).unwrap());

    let recorded = server.requests.lock().unwrap();
    assert_eq!(recorded[0].path, "/detect");
    assert_eq!(recorded[0].body["candidate_names"][0], "dog");
}

#[test]
fn embed_normalizes_whatever_the_server_returns() {
    let server = spawn_server(vec![(200, r#"{"result": [3.0, 4.0]}"#.to_string())]);
    let client = HttpEmbedder::new(server.base_url.clone(), fast_retry());
    let vector = client.embed(&EmbeddingRequest::text("a dog")).unwrap();
    assert!((vector[0] - 0.6).abs() < 1e-12);
    assert!((vector[1] - 0.8).abs() < 1e-12);
    assert_eq!(client.dim(), 2);

    let recorded = server.requests.lock().unwrap();
    assert_eq!(recorded[0].path, "/embed");
    assert_eq!(recorded[0].body["modality"], "text");
    assert_eq!(recorded[0].body["payload"], "a dog");
}

#[test]
fn inpaint_decodes_the_payload_into_a_deterministic_file() {
    let dir = tempfile::tempdir().unwrap();
    let source = dir.path().join("scene.png");
    let img = image::RgbImage::from_pixel(8, 8, image::Rgb([10, 20, 30]));
    img.save(&source).unwrap();

    let mut png_bytes = Vec::new();
    image::RgbImage::from_pixel(8, 8, image::Rgb([200, 0, 0]))
        .write_to(
            &mut std::io::Cursor::new(&mut png_bytes),
            image::ImageFormat::Png,
        )
        .unwrap();
    let payload = base64::engine::general_purpose::STANDARD.encode(&png_bytes);
    let server = spawn_server(vec![(
        200,
        format!(r#"{{"result": {{"png_base64": "{payload}"}}}}"#),
    )]);

    let out_dir = dir.path().join("out");
    let client = HttpInpainter::new(server.base_url.clone(), fast_retry(), out_dir.clone());
    let req = InpaintRequest {
        image_ref: source.to_string_lossy().to_string(),
        mask: BoundingBox::new(0, 0, 4, 4).unwrap(),
        prompt: "a red dog".to_string(),
    };
    let out_path = client.inpaint(&req).unwrap();
    assert!(out_path.starts_with(out_dir.to_string_lossy().as_ref()));
    assert_eq!(std::fs::read(&out_path).unwrap(), png_bytes);

    let recorded = server.requests.lock().unwrap();
    assert_eq!(recorded[0].path, "/inpaint");
    assert_eq!(recorded[0].body["mask"], serde_json::json!([0, 0, 4, 4]));
}

#[test]
fn inpaint_rejects_bad_masks_before_calling_the_backend() {
    let dir = tempfile::tempdir().unwrap();
    let source = dir.path().join("scene.png");
    image::RgbImage::new(8, 8).save(&source).unwrap();

    // no server: the local pre-check must fire first
    let client = HttpInpainter::new(
        "http://127.0.0.1:1".to_string(),
        fast_retry(),
        dir.path().join("out"),
    );
    let req = InpaintRequest {
        image_ref: source.to_string_lossy().to_string(),
        mask: BoundingBox::new(6, 6, 4, 4).unwrap(),
        prompt: "x".to_string(),
    };
    assert!(matches!(
        client.inpaint(&req),
        Err(BackendError::MaskOutOfBounds { .. })
    ));
}
