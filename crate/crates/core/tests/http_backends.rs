use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::{Duration, Instant};

use hazardforge_core::backends::http::{EndpointConfig, HttpChat, HttpClient, HttpEditor};
use hazardforge_core::backends::stub::{Injection, StubChat, StubEditor, StubJudge};
use hazardforge_core::backends::wire::{model_router, BackgroundServer, ModelService};
use hazardforge_core::backends::{encode_png, ChatAnswerer};
use hazardforge_core::evaluator::{evaluate, EvalOptions};
use hazardforge_core::geometry::rasterize_mask;
use hazardforge_core::manifest::load_items;
use hazardforge_core::orchestrator::{generate_benchmark, GenerateConfig, Selection};
use hazardforge_core::{
    ActionDirection, AnswerRequest, Answerer, BackendError, Backends, Edge, EditRequest, Editor, Frame, ImageDims,
    Judge, MaskRegion, ObjectCategory, OutpaintRequest, ScenarioKind, VisionChat,
};
use image::{GrayImage, Rgb, RgbImage};

fn any_port() -> SocketAddr {
    "127.0.0.1:0".parse().unwrap()
}

fn stub_server(injection: Injection, reply: &str, delay: Duration) -> BackgroundServer {
    let svc = ModelService {
        editor: Arc::new(StubEditor::new(injection)),
        chat: Arc::new(StubChat::new(reply)),
        delay,
    };
    BackgroundServer::start(model_router(svc), any_port()).unwrap()
}

fn endpoint(server: &BackgroundServer) -> EndpointConfig {
    EndpointConfig::parse(&server.url()).unwrap().with_timeout(Duration::from_secs(10))
}

fn fixture() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/sources/items.jsonl")
}

fn scene() -> RgbImage {
    RgbImage::from_fn(96, 64, |x, y| Rgb([x as u8 * 2, y as u8 * 3, 77]))
}

fn edit_request(img: &RgbImage) -> EditRequest {
    let dims = ImageDims::of(img).unwrap();
    let mask = MaskRegion::new(8, 40, 4, 40, Frame::Original).unwrap();
    EditRequest::new(
        img,
        &rasterize_mask(&mask, dims).unwrap(),
        "Render a dog, facing left.",
        11,
        BTreeMap::new(),
    )
    .unwrap()
}

#[test]
fn pipeline_over_http_matches_in_process_stubs() {
    let server = stub_server(Injection::Off, "B", Duration::ZERO);
    let live = Backends {
        editor: Arc::new(HttpEditor(HttpClient::new(endpoint(&server)).unwrap())),
        judge: Judge::new(Arc::new(HttpChat(HttpClient::new(endpoint(&server)).unwrap()))),
    };
    let local = Backends {
        editor: Arc::new(StubEditor::default()),
        judge: Judge::new(Arc::new(StubJudge::default())),
    };
    let selection = Selection {
        scenarios: vec![ScenarioKind::Intrusion, ScenarioKind::Distance],
        categories: vec![ObjectCategory::Deer],
    };
    let tmp = tempfile::tempdir().unwrap();
    let cancel = AtomicBool::new(false);
    let cfg = GenerateConfig::default();
    let a = generate_benchmark(&fixture(), &tmp.path().join("live"), &selection, &cfg, &live, &cancel).unwrap();
    let b = generate_benchmark(&fixture(), &tmp.path().join("local"), &selection, &cfg, &local, &cancel).unwrap();
    assert_eq!(a.success, 12, "{a}");
    assert_eq!(b.success, 12, "{b}");
    for file in ["records.jsonl", "items.jsonl"] {
        assert_eq!(
            std::fs::read(tmp.path().join("live").join(file)).unwrap(),
            std::fs::read(tmp.path().join("local").join(file)).unwrap(),
            "{file}"
        );
    }
    for item in load_items(&tmp.path().join("live/items.jsonl")).unwrap() {
        assert_eq!(
            std::fs::read(tmp.path().join("live").join(&item.image)).unwrap(),
            std::fs::read(tmp.path().join("local").join(&item.image)).unwrap()
        );
    }
}

#[test]
fn outpaint_round_trip_and_precondition() {
    let server = stub_server(Injection::Off, "B", Duration::ZERO);
    let editor = HttpEditor(HttpClient::new(endpoint(&server)).unwrap());
    let img = scene();
    let png = encode_png(&img).unwrap();
    let out = editor
        .outpaint(&OutpaintRequest {
            image: png.clone(),
            side: Edge::Left,
            pixels: 20,
        })
        .unwrap();
    let out = image::load_from_memory(&out).unwrap().to_rgb8();
    assert_eq!(out.dimensions(), (116, 64));
    assert!(img.enumerate_pixels().all(|(x, y, p)| out.get_pixel(x + 20, y) == p));

    let err = editor
        .outpaint(&OutpaintRequest {
            image: png,
            side: Edge::Right,
            pixels: 0,
        })
        .unwrap_err();
    assert!(matches!(err, BackendError::InvalidRequest(_)), "{err:?}");
    assert_eq!(editor.0.metrics.outpaints(), 1, "rejected before transport");
}

#[test]
fn slow_backend_times_out() {
    let server = stub_server(Injection::Off, "B", Duration::from_millis(800));
    let cfg = endpoint(&server).with_timeout(Duration::from_millis(150));
    let chat = HttpChat(HttpClient::new(cfg).unwrap());
    let started = Instant::now();
    let err = chat.chat(&[], "which way?").unwrap_err();
    assert!(matches!(err, BackendError::Timeout(d) if d == Duration::from_millis(150)), "{err:?}");
    assert!(started.elapsed() < Duration::from_millis(700));
}

#[test]
fn in_flight_limit_serializes_calls() {
    let server = stub_server(Injection::Off, "B", Duration::from_millis(150));
    let chat = Arc::new(HttpChat(HttpClient::new(endpoint(&server).with_max_in_flight(1)).unwrap()));
    let started = Instant::now();
    std::thread::scope(|s| {
        for _ in 0..3 {
            let chat = chat.clone();
            s.spawn(move || assert_eq!(chat.chat(&[], "q").unwrap(), "B"));
        }
    });
    assert!(started.elapsed() >= Duration::from_millis(450), "{:?}", started.elapsed());
}

#[test]
fn server_errors_map_to_status() {
    let server = stub_server(Injection::Off, "B", Duration::ZERO);
    let client = reqwest::blocking::Client::new();
    let resp = client
        .post(format!("{}/v1/edit", server.url()))
        .header("content-type", "application/json")
        .body("{not json")
        .send()
        .unwrap();
    assert_eq!(resp.status().as_u16(), 400);
    let body: serde_json::Value = resp.json().unwrap();
    assert_eq!(body["code"], "invalid_request");

    // mask and image sizes disagree: the server rejects it with a 400
    let img = scene();
    let mut req = edit_request(&img);
    req.mask = hazardforge_core::backends::encode_mask_png(&GrayImage::new(10, 10)).unwrap();
    let body = hazardforge_core::backends::wire::EditBody::from(&req);
    let resp = client.post(format!("{}/v1/edit", server.url())).json(&body).send().unwrap();
    assert_eq!(resp.status().as_u16(), 400);

    // the typed client refuses the same request before sending it
    let editor = HttpEditor(HttpClient::new(endpoint(&server)).unwrap());
    assert!(matches!(editor.edit(&req), Err(BackendError::DimMismatch { .. })));

    // a judge prompt the stub chat does not know becomes a 400 status
    let chat = HttpChat(HttpClient::new(endpoint(&server)).unwrap());
    let png = encode_png(&img).unwrap();
    let err = chat
        .chat(&[png], hazardforge_core::backends::COMPLETENESS_PROMPT)
        .unwrap_err();
    assert!(matches!(err, BackendError::Status { status: 400, .. }), "{err:?}");
}

#[test]
fn edit_over_http_keeps_outside_pixels() {
    let server = stub_server(Injection::Off, "B", Duration::ZERO);
    let editor = HttpEditor(HttpClient::new(endpoint(&server)).unwrap());
    let img = scene();
    let out = editor.edit(&edit_request(&img)).unwrap();
    let out = image::load_from_memory(&out).unwrap().to_rgb8();
    assert_ne!(out, img);
    let mask = MaskRegion::new(8, 40, 4, 40, Frame::Original).unwrap();
    let (top, bottom) = mask.raster_rows(64);
    for (x, y, p) in img.enumerate_pixels() {
        if !((8..40).contains(&x) && (top..bottom).contains(&y)) {
            assert_eq!(out.get_pixel(x, y), p);
        }
    }
    assert_eq!(editor.0.metrics.edits(), 1);
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    // bind then drop to get a port nobody listens on
    let port = std::net::TcpListener::bind(any_port()).unwrap().local_addr().unwrap().port();
    let cfg = EndpointConfig::parse(&format!("http://127.0.0.1:{port}")).unwrap();
    let chat = HttpChat(HttpClient::new(cfg).unwrap());
    let err = chat.chat(&[], "q").unwrap_err();
    assert!(matches!(err, BackendError::Transport(_)), "{err:?}");
    assert_eq!(chat.0.metrics.errors.load(std::sync::atomic::Ordering::Relaxed), 1);
}

#[test]
fn evaluation_through_a_chat_endpoint() {
    let server = stub_server(Injection::Off, "Answer: B", Duration::ZERO);
    let answerer = ChatAnswerer::new(Arc::new(HttpChat(HttpClient::new(endpoint(&server)).unwrap())));
    let items = load_items(&fixture()).unwrap();
    let root = fixture().parent().unwrap().to_path_buf();
    let req = AnswerRequest {
        item_id: items[0].id.clone(),
        image: std::fs::read(root.join(&items[0].image)).unwrap(),
        question: items[0].question.clone(),
    };
    assert_eq!(answerer.ask(&req).unwrap(), "Answer: B");

    let (results, report) = evaluate(&items, &root, &answerer, &EvalOptions::default(), None).unwrap();
    assert!(results.iter().all(|r| r.parsed == Some(ActionDirection::Center)));
    let centers = items.iter().filter(|i| i.gt == ActionDirection::Center).count();
    assert_eq!(report.all.correct, centers);
    assert_eq!(report.all.total, items.len());
}
