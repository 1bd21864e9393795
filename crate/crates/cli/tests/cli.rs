use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hazardforge"));
    for var in ["HF_EDITOR_URL", "HF_JUDGE_URL", "HF_ANSWERER_URL", "HF_TOKEN", "HF_CONFIG"] {
        cmd.env_remove(var);
    }
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn text(o: &Output) -> (String, String) {
    (
        String::from_utf8_lossy(&o.stdout).into_owned(),
        String::from_utf8_lossy(&o.stderr).into_owned(),
    )
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/sources/items.jsonl")
}

fn generate(out: &Path, extra: &[&str]) -> Output {
    run(bin()
        .args(["generate", "--stub", "--source"])
        .arg(fixture())
        .arg("--out")
        .arg(out)
        .args(extra))
}

#[test]
fn stub_run_then_stats_evaluate_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bench");
    let o = generate(&out, &["--scenarios", "static,distance", "--categories", "dog,cone"]);
    let (stdout, stderr) = text(&o);
    assert_eq!(o.status.code(), Some(0), "{stdout}{stderr}");
    assert!(stdout.contains("24 records"), "{stdout}");

    let o = run(bin().arg("stats").arg(out.join("items.jsonl")));
    let (stdout, _) = text(&o);
    assert_eq!(o.status.code(), Some(0));
    let total_line = stdout.lines().find(|l| l.starts_with("Total")).unwrap();
    assert!(total_line.trim_end().ends_with("24"), "{stdout}");

    let o = run(bin().args(["stats", "--csv"]).arg(out.join("items.jsonl")));
    assert!(text(&o).0.lines().count() > 1);

    let eval = tmp.path().join("oracle");
    let o = run(bin()
        .args(["evaluate", "--stub", "oracle", "--manifest"])
        .arg(out.join("items.jsonl"))
        .arg("--out")
        .arg(&eval));
    let (stdout, stderr) = text(&o);
    assert_eq!(o.status.code(), Some(0), "{stderr}");
    let row = stdout.lines().find(|l| l.starts_with("stub-oracle")).unwrap();
    assert!(row.trim_end().ends_with("100.0"), "{row}");
    for f in ["results.jsonl", "report.txt", "report.csv"] {
        assert!(eval.join(f).exists(), "{f}");
    }
    let results = std::fs::read_to_string(eval.join("results.jsonl")).unwrap();
    assert_eq!(results.lines().count(), 24);

    // a second evaluation run writes byte-identical results
    let again = tmp.path().join("oracle2");
    run(bin()
        .args(["evaluate", "--stub", "oracle", "--manifest"])
        .arg(out.join("items.jsonl"))
        .arg("--out")
        .arg(&again));
    assert_eq!(results, std::fs::read_to_string(again.join("results.jsonl")).unwrap());

    let o = run(bin()
        .args(["report", "--manifest"])
        .arg(out.join("items.jsonl"))
        .arg("--results")
        .arg(eval.join("results.jsonl"))
        .arg("--out")
        .arg(tmp.path().join("rep")));
    assert_eq!(o.status.code(), Some(0));
    assert!(text(&o).0.contains("Scenario-wise accuracy"));
    assert!(tmp.path().join("rep/report.csv").exists());
}

#[test]
fn flags_beat_env_beat_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("hf.toml");
    std::fs::write(
        &cfg,
        "seed = 3\n[endpoints]\neditor = \"ftp://file-host\"\njudge = \"http://127.0.0.1:9\"\n",
    )
    .unwrap();
    let live = |env: Option<&str>, flag: Option<&str>| {
        let mut cmd = bin();
        cmd.arg("--config").arg(&cfg).args(["generate", "--source"]).arg(fixture());
        cmd.arg("--out").arg(tmp.path().join("live"));
        if let Some(e) = env {
            cmd.env("HF_EDITOR_URL", e);
        }
        if let Some(f) = flag {
            cmd.args(["--editor-url", f]);
        }
        let o = run(&mut cmd);
        assert_eq!(o.status.code(), Some(1));
        text(&o).1
    };
    assert!(live(None, None).contains("file-host"));
    assert!(live(Some("ftp://env-host"), None).contains("env-host"));
    assert!(live(Some("ftp://env-host"), Some("ftp://flag-host")).contains("flag-host"));
    assert!(!tmp.path().join("live/records.jsonl").exists(), "no work before validation");

    // seed: file value applies unless a flag overrides it
    let sel = ["--scenarios", "static", "--categories", "dog"];
    let seeded = |dir: &str, args: &[&str]| {
        let out = tmp.path().join(dir);
        let o = run(bin()
            .arg("--config")
            .arg(&cfg)
            .args(["generate", "--stub", "--source"])
            .arg(fixture())
            .arg("--out")
            .arg(&out)
            .args(sel)
            .args(args));
        assert_eq!(o.status.code(), Some(0), "{:?}", text(&o));
        std::fs::read(out.join("records.jsonl")).unwrap()
    };
    let from_file = seeded("s-file", &[]);
    let from_flag = seeded("s-flag", &["--seed", "3"]);
    let zero = seeded("s-zero", &["--seed", "0"]);
    assert_eq!(from_file, from_flag);
    assert_ne!(from_file, zero);
    let o = generate(&tmp.path().join("s-plain"), &sel);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read(tmp.path().join("s-plain/records.jsonl")).unwrap(), zero);
}

#[test]
fn missing_or_bad_live_endpoint_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(bin()
        .args(["generate", "--source"])
        .arg(fixture())
        .arg("--out")
        .arg(tmp.path().join("x")));
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).1.contains("editor endpoint"), "{}", text(&o).1);

    let o = run(bin()
        .args(["generate", "--editor-url", "not a url", "--judge-url", "http://127.0.0.1:9", "--source"])
        .arg(fixture())
        .arg("--out")
        .arg(tmp.path().join("x")));
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).1.contains("bad endpoint url"));

    let o = run(bin()
        .args(["evaluate", "--manifest"])
        .arg(fixture())
        .arg("--out")
        .arg(tmp.path().join("e")));
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).1.contains("answerer endpoint"));
}

#[test]
fn ineligible_selection_is_a_notice_not_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = generate(&tmp.path().join("m"), &["--scenarios", "motion", "--categories", "cone"]);
    let (stdout, stderr) = text(&o);
    assert_eq!(o.status.code(), Some(0), "{stderr}");
    assert!(stdout.contains("cone is not eligible for the motion scenario"), "{stdout}");
    let items = std::fs::read_to_string(tmp.path().join("m/items.jsonl")).unwrap();
    assert!(items.is_empty());
}

#[test]
fn all_rejected_run_exits_2_and_resume_skips_done_work() {
    let tmp = tempfile::tempdir().unwrap();
    let sel = ["--scenarios", "static", "--categories", "pig"];
    let o = generate(&tmp.path().join("f"), &[&sel[..], &["--injection", "always"]].concat());
    assert_eq!(o.status.code(), Some(2), "{:?}", text(&o));

    let out = tmp.path().join("r");
    assert_eq!(generate(&out, &sel).status.code(), Some(0));
    let first = std::fs::read(out.join("records.jsonl")).unwrap();
    let o = generate(&out, &sel);
    assert_eq!(o.status.code(), Some(0));
    assert!(text(&o).0.contains("6 resumed"), "{}", text(&o).0);
    assert_eq!(std::fs::read(out.join("records.jsonl")).unwrap(), first);
}

#[test]
fn stats_input_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let o = run(bin().arg("stats").arg(&empty));
    assert_eq!(o.status.code(), Some(0));
    assert!(text(&o).0.lines().any(|l| l.starts_with("Total") && l.trim_end().ends_with(" 0")));

    let bad = tmp.path().join("bad.jsonl");
    let good = std::fs::read_to_string(fixture()).unwrap();
    let first = good.lines().next().unwrap();
    std::fs::write(&bad, format!("{first}\n{{oops\n")).unwrap();
    let o = run(bin().arg("stats").arg(&bad));
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).1.contains("bad.jsonl:2"), "{}", text(&o).1);

    let o = run(bin().arg("stats").arg(tmp.path().join("missing.jsonl")));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sheets_export_and_human_scoring() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bench");
    let o = generate(&out, &["--include-originals", "--categories", "dog,cat,deer"]);
    assert_eq!(o.status.code(), Some(0), "{:?}", text(&o));
    let sheets = tmp.path().join("sheets");
    let o = run(bin()
        .args(["export-sheets", "--sheets", "2", "--per-category", "2", "--manifest"])
        .arg(out.join("items.jsonl"))
        .arg("--out")
        .arg(&sheets));
    assert_eq!(o.status.code(), Some(0), "{:?}", text(&o));
    let sheet1 = std::fs::read_to_string(sheets.join("sheet_1.csv")).unwrap();
    assert_eq!(sheet1.lines().count(), 11);
    assert!(!sheet1.contains('\r'));

    // answer every row of sheet 1 with its key letter
    let key = std::fs::read_to_string(sheets.join("answer_key.csv")).unwrap();
    let header: Vec<&str> = key.lines().next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let mut answers = String::from("row_id,answer\n");
    for line in key.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f[col("sheet")] == "1" {
            answers.push_str(&format!("{},{}\n", f[col("row_id")], f[col("answer")]));
        }
    }
    let path = tmp.path().join("a1.csv");
    std::fs::write(&path, answers).unwrap();
    let o = run(bin()
        .args(["score-human", "--answers"])
        .arg(&path)
        .arg("--key")
        .arg(sheets.join("answer_key.csv")));
    let (stdout, stderr) = text(&o);
    assert_eq!(o.status.code(), Some(0), "{stderr}");
    assert!(stdout.contains("overall: 10/10 = 100.0"), "{stdout}");

    // too few items for the requested sheets
    let o = run(bin()
        .args(["export-sheets", "--sheets", "3", "--per-category", "60", "--manifest"])
        .arg(out.join("items.jsonl"))
        .arg("--out")
        .arg(tmp.path().join("nope")));
    assert_eq!(o.status.code(), Some(1));
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn http_get(port: u16, path: &str) -> Option<String> {
    let mut s = TcpStream::connect(("127.0.0.1", port)).ok()?;
    s.set_read_timeout(Some(Duration::from_secs(5))).ok()?;
    write!(s, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").ok()?;
    let mut buf = String::new();
    s.read_to_string(&mut buf).ok()?;
    Some(buf)
}

#[test]
fn annotation_server_health_and_port_conflict() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(tmp.path().join("sheets")).unwrap();
    let port = free_port();
    let mut child = bin()
        .args(["serve-annotation", "--addr", &format!("127.0.0.1:{port}"), "--sheets"])
        .arg(tmp.path().join("sheets"))
        .arg("--images-root")
        .arg(tmp.path())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let started = Instant::now();
    let health = loop {
        if let Some(r) = http_get(port, "/api/health") {
            break r;
        }
        assert!(started.elapsed() < Duration::from_secs(20), "server did not come up");
        std::thread::sleep(Duration::from_millis(50));
    };
    assert!(health.starts_with("HTTP/1.1 200"), "{health}");

    let o = run(bin()
        .args(["serve-annotation", "--addr", &format!("127.0.0.1:{port}"), "--sheets"])
        .arg(tmp.path().join("sheets"))
        .arg("--images-root")
        .arg(tmp.path()));
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).1.contains("binding"), "{}", text(&o).1);
}

#[test]
fn live_generate_against_stub_server() {
    let port = free_port();
    let mut child = bin()
        .args(["serve-stub", "--addr", &format!("127.0.0.1:{port}")])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let started = Instant::now();
    while http_get(port, "/healthz").is_none() {
        assert!(started.elapsed() < Duration::from_secs(20), "stub server did not come up");
        std::thread::sleep(Duration::from_millis(50));
    }
    let tmp = tempfile::tempdir().unwrap();
    let url = format!("http://127.0.0.1:{port}");
    let o = run(bin()
        .args(["generate", "--scenarios", "intrusion", "--categories", "fox", "--timestamps", "false"])
        .args(["--source"])
        .arg(fixture())
        .arg("--out")
        .arg(tmp.path().join("live"))
        .env("HF_EDITOR_URL", &url)
        .env("HF_JUDGE_URL", &url));
    let local = generate(&tmp.path().join("local"), &["--scenarios", "intrusion", "--categories", "fox"]);
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(o.status.code(), Some(0), "{:?}", text(&o));
    assert_eq!(local.status.code(), Some(0));
    assert_eq!(
        std::fs::read(tmp.path().join("live/records.jsonl")).unwrap(),
        std::fs::read(tmp.path().join("local/records.jsonl")).unwrap()
    );
}

#[test]
fn fixture_command_writes_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(bin().args(["fixture", "--count", "3", "--out"]).arg(tmp.path()));
    assert_eq!(o.status.code(), Some(0));
    let manifest = std::fs::read_to_string(tmp.path().join("items.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 3);
    // the bundled fixture is this command's default output
    let again = tempfile::tempdir().unwrap();
    run(bin().args(["fixture", "--out"]).arg(again.path()));
    assert_eq!(
        std::fs::read(again.path().join("items.jsonl")).unwrap(),
        std::fs::read(fixture()).unwrap()
    );
}
