use std::net::SocketAddr;
use std::sync::Arc;

use hazardforge_core::annotation::{router, AnnotationState, NextPayload, SessionCreated, SessionScore, SubmitAck};
use hazardforge_core::backends::wire::BackgroundServer;
use hazardforge_core::evaluator::{export_human_sheets, read_answer_key, read_human_answers, score_human, KeyRow};
use hazardforge_core::{ActionDirection, BenchItem, ObjectCategory, ScenarioKind, Source};
use image::{Rgb, RgbImage};
use reqwest::blocking::Client;
use serde_json::{json, Value};

struct Harness {
    server: BackgroundServer,
    client: Client,
    key: Vec<KeyRow>,
    root: tempfile::TempDir,
}

impl Harness {
    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.server.url())
    }

    fn get(&self, path: &str) -> reqwest::blocking::Response {
        self.client.get(self.url(path)).send().unwrap()
    }

    fn post(&self, path: &str, body: Value) -> reqwest::blocking::Response {
        self.client.post(self.url(path)).json(&body).send().unwrap()
    }
}

/// Three items per group, ids and paths carrying scenario and category names
/// the way generated items do.
fn items() -> Vec<BenchItem> {
    let mut out = Vec::new();
    let groups = [
        None,
        Some(ScenarioKind::Static),
        Some(ScenarioKind::Motion),
        Some(ScenarioKind::Intrusion),
        Some(ScenarioKind::Distance),
    ];
    for (g, scenario) in groups.into_iter().enumerate() {
        for k in 0..3 {
            let category = scenario.map(|_| ObjectCategory::ALL[(g * 3 + k) % 13]);
            let id = match (scenario, category) {
                (Some(s), Some(c)) => format!("src-{k}__{}__{}", s.name(), c.name()),
                _ => format!("src-{g}{k}"),
            };
            out.push(BenchItem {
                image: format!("images/{id}.png"),
                id,
                question: "What is the safest action for the ego vehicle?".into(),
                gt: ActionDirection::ALL[(g + k) % 3],
                source: if k % 2 == 0 { Source::DriveBench } else { Source::SaBench },
                scenario,
                category,
                origin: None,
            });
        }
    }
    out
}

fn start(app: bool) -> Harness {
    let root = tempfile::tempdir().unwrap();
    let items = items();
    std::fs::create_dir_all(root.path().join("bench/images")).unwrap();
    for (n, item) in items.iter().enumerate() {
        RgbImage::from_pixel(8, 6, Rgb([n as u8, 0, 0]))
            .save(root.path().join("bench").join(&item.image))
            .unwrap();
    }
    let sheets = root.path().join("sheets");
    export_human_sheets(&items, 1, 3, 5, &sheets).unwrap();
    let key = read_answer_key(&sheets.join("answer_key.csv")).unwrap();
    let app_dir = root.path().join("app");
    std::fs::create_dir_all(&app_dir).unwrap();
    std::fs::write(app_dir.join("index.html"), "<!doctype html><title>annotate</title>").unwrap();

    let state = Arc::new(AnnotationState::new(&sheets, root.path().join("bench"), Some(key.clone())));
    let router = router(state, app.then_some(app_dir.as_path()));
    let addr: SocketAddr = "127.0.0.1:0".parse().unwrap();
    Harness {
        server: BackgroundServer::start(router, addr).unwrap(),
        client: Client::new(),
        key,
        root,
    }
}

fn assert_blind(text: &str, items: &[BenchItem]) {
    let lower = text.to_ascii_lowercase();
    for s in ScenarioKind::ALL {
        assert!(!lower.contains(s.name()), "payload leaks scenario {s}: {text}");
    }
    for c in ObjectCategory::ALL {
        assert!(!lower.contains(c.name()), "payload leaks category {}: {text}", c.name());
    }
    for item in items {
        assert!(!text.contains(&item.id), "payload leaks item id: {text}");
    }
    for field in ["\"gt\"", "\"answer\"", "\"scenario\"", "\"category\"", "\"source\"", "drivebench", "sa-bench"] {
        assert!(!lower.contains(field), "payload leaks {field}: {text}");
    }
}

#[test]
fn health_endpoints() {
    let h = start(false);
    assert_eq!(h.get("/healthz").status(), 200);
    assert_eq!(h.get("/api/health").status(), 200);
}

#[test]
fn full_session_round_trip_is_blind_and_scores_exactly() {
    let h = start(true);
    let items = items();
    let created = h.post("/api/session", json!({"sheet": 1, "annotator": "t1"}));
    assert_eq!(created.status(), 200);
    let created_text = created.text().unwrap();
    assert_blind(&created_text, &items);
    let created: SessionCreated = serde_json::from_str(&created_text).unwrap();
    assert_eq!(created.total, 15);
    let id = created.session_id;

    let mut answered = 0;
    let mut expected_correct = 0;
    loop {
        let resp = h.get(&format!("/api/session/{id}/next"));
        assert_eq!(resp.status(), 200);
        let text = resp.text().unwrap();
        assert_blind(&text, &items);
        let next: NextPayload = serde_json::from_str(&text).unwrap();
        if next.done {
            assert_eq!(next.index, 15);
            break;
        }
        assert_eq!(next.index, answered);
        assert_eq!(next.options, ["go left", "go straight", "go right"]);
        let row_id = next.row_id.clone().unwrap();
        let image_url = next.image_url.clone().unwrap();
        assert_blind(&image_url, &items);

        let key = h.key.iter().find(|k| k.row_id == row_id).unwrap();
        let item = items.iter().find(|i| i.id == key.item_id).unwrap();
        let img = h.get(&image_url);
        assert_eq!(img.status(), 200);
        assert_eq!(img.headers()["content-type"], "image/png");
        let on_disk = std::fs::read(h.root.path().join("bench").join(&item.image)).unwrap();
        assert_eq!(img.bytes().unwrap().as_ref(), on_disk.as_slice());

        // every third answer is deliberately wrong; keys 1/2/3 and letters both work
        let right = key.answer;
        let choice = if answered % 3 == 0 {
            if right == 'A' { "C".to_string() } else { "A".to_string() }
        } else {
            expected_correct += 1;
            (b"123"[(right as u8 - b'A') as usize] as char).to_string()
        };
        let ack = h.post(&format!("/api/session/{id}/answer"), json!({"row_id": row_id, "choice": choice}));
        assert_eq!(ack.status(), 200);
        let ack: SubmitAck = ack.json().unwrap();
        answered += 1;
        assert_eq!((ack.cursor, ack.total), (answered, 15));
    }

    let csv = h.get(&format!("/api/session/{id}/export.csv"));
    assert_eq!(csv.status(), 200);
    assert!(csv.headers()["content-type"].to_str().unwrap().starts_with("text/csv"));
    let csv = csv.text().unwrap();
    assert!(csv.starts_with("row_id,answer\n"));
    assert_eq!(csv.lines().count(), 16);

    let path = h.root.path().join("export.csv");
    std::fs::write(&path, &csv).unwrap();
    let offline = score_human(&read_human_answers(&path).unwrap(), &h.key, "offline").unwrap();
    let live: SessionScore = h.get(&format!("/api/session/{id}/score")).json().unwrap();
    assert_eq!(offline.all.correct, expected_correct);
    assert_eq!((live.correct, live.total), (offline.all.correct, offline.all.total));
    let exact = 100.0 * expected_correct as f64 / 15.0;
    assert_eq!(live.accuracy, Some(exact));

    let app = h.get("/app/index.html");
    assert_eq!(app.status(), 200);
    assert!(app.text().unwrap().contains("annotate"));
}

#[test]
fn answer_validation() {
    let h = start(false);
    let created: SessionCreated = h.post("/api/session", json!({"sheet": 1})).json().unwrap();
    let id = created.session_id;
    let next: NextPayload = h.get(&format!("/api/session/{id}/next")).json().unwrap();
    let row = next.row_id.unwrap();

    let bad = h.post(&format!("/api/session/{id}/answer"), json!({"row_id": row, "choice": "D"}));
    assert_eq!(bad.status(), 422);
    let skip = h.post(&format!("/api/session/{id}/answer"), json!({"row_id": "1-999", "choice": "A"}));
    assert_eq!(skip.status(), 409);
    assert_eq!(skip.json::<Value>().unwrap()["code"], "out_of_order");

    let ok = h.post(&format!("/api/session/{id}/answer"), json!({"row_id": row, "choice": "b"}));
    assert_eq!(ok.status(), 200);
    let dup = h.post(&format!("/api/session/{id}/answer"), json!({"row_id": row, "choice": "B"}));
    assert_eq!(dup.status(), 409);
    assert_eq!(dup.json::<Value>().unwrap()["code"], "duplicate");

    let malformed = h
        .client
        .post(h.url(&format!("/api/session/{id}/answer")))
        .header("content-type", "application/json")
        .body("{")
        .send()
        .unwrap();
    assert_eq!(malformed.status(), 400);

    assert_eq!(h.get("/api/session/nope/next").status(), 404);
    assert_eq!(h.get("/api/session/nope/export.csv").status(), 404);
    assert_eq!(h.get(&format!("/api/session/{id}/image/99")).status(), 404);
    assert_eq!(h.post("/api/session", json!({"sheet": 7})).status(), 404);
    assert_eq!(h.get("/app/index.html").status(), 404);
}

#[test]
fn sessions_are_independent() {
    let h = start(false);
    let a: SessionCreated = h.post("/api/session", json!({"sheet": 1})).json().unwrap();
    let b: SessionCreated = h.post("/api/session", json!({"sheet": 1})).json().unwrap();
    assert_ne!(a.session_id, b.session_id);
    let next: NextPayload = h.get(&format!("/api/session/{}/next", a.session_id)).json().unwrap();
    let resp = h.post(
        &format!("/api/session/{}/answer", a.session_id),
        json!({"row_id": next.row_id.unwrap(), "choice": "A"}),
    );
    assert_eq!(resp.status(), 200);
    let nb: NextPayload = h.get(&format!("/api/session/{}/next", b.session_id)).json().unwrap();
    assert_eq!(nb.index, 0);
    let csv = h.get(&format!("/api/session/{}/export.csv", b.session_id)).text().unwrap();
    assert_eq!(csv, "row_id,answer\n");
}
