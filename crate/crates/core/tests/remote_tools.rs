//! Remote tools served over HTTP by a minimal in-test server.
#![cfg(feature = "remote")]

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::time::Duration;

use fetalscope::bench::{run_benchmark, score_run};
use fetalscope::deliberation::TextBackend;
use fetalscope::synth::{tool_ids, SynthConfig, SynthWorld, TOOL_FAMILIES};
use fetalscope::toolkit::wire::{decode_gray, InferRequest};
use fetalscope::toolkit::{Adapter, FixtureStore, RemoteTool, ToolRegistry};
use fetalscope::workflows::{Ablation, Engine};
use fetalscope::Error;

type Fixtures = Arc<BTreeMap<String, FixtureStore>>;

fn respond(stream: &mut TcpStream, status: &str, body: &str) {
    let _ = write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
}

fn handle(mut stream: TcpStream, fixtures: &Fixtures) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    let mut parts = line.split_whitespace();
    let (method, path) = (parts.next().unwrap_or("").to_string(), parts.next().unwrap_or("").to_string());
    let mut len = 0;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).unwrap();
        if h.trim().is_empty() {
            break;
        }
        if let Some(v) = h.to_ascii_lowercase().strip_prefix("content-length:") {
            len = v.trim().parse().unwrap();
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    match (method.as_str(), path.as_str()) {
        ("GET", "/v1/health") => respond(&mut stream, "200 OK", r#"{"status":"ok"}"#),
        ("POST", p) => {
            let tool = p.trim_start_matches("/v1/tools/").trim_end_matches("/infer");
            let req: InferRequest = serde_json::from_slice(&body).unwrap();
            // the image must survive the trip
            decode_gray(&req.image_b64).unwrap();
            if tool == "garbled" {
                return respond(&mut stream, "200 OK", r#"{"tool_id":"garbled","kind":"label"}"#);
            }
            if tool == "flaky" {
                return respond(&mut stream, "503 Service Unavailable", "{}");
            }
            match fixtures.get(tool).and_then(|s| s.get(&req.image_id)) {
                Some(r) => respond(&mut stream, "200 OK", &serde_json::to_string(r).unwrap()),
                None => respond(&mut stream, "404 Not Found", r#"{"error":"no fixture"}"#),
            }
        }
        _ => respond(&mut stream, "404 Not Found", "{}"),
    }
}

fn serve(fixtures: Fixtures) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let f = fixtures.clone();
            std::thread::spawn(move || handle(stream, &f));
        }
    });
    format!("http://{addr}")
}

fn remote_engine(world: &SynthWorld, url: &str) -> Engine {
    let mut reg = ToolRegistry::new();
    for (prefix, task) in TOOL_FAMILIES {
        for t in tool_ids(prefix) {
            let tool = reg.register(t, task, Adapter::Remote(RemoteTool::new(url))).unwrap();
            assert!(!tool.degraded);
        }
    }
    let local = world.engine().unwrap();
    let mut e = Engine::new(reg, world.experts.clone());
    e.backend = TextBackend::Scripted(world.backend.clone());
    e.charts = local.charts.clone();
    e.index = local.index.clone();
    e.lmp = local.lmp.clone();
    e
}

#[test]
fn remote_tools_answer_like_in_process_tools() {
    let world = SynthWorld::generate(SynthConfig { corrupt: true, ..SynthConfig::default() }).unwrap();
    let url = serve(Arc::new(world.fixtures.clone()));
    let remote = remote_engine(&world, &url);
    let local = world.engine().unwrap();
    let remote_preds = run_benchmark(&remote, &world.items, |id| world.image(id), Ablation::FULL).unwrap();
    let local_preds = run_benchmark(&local, &world.items, |id| world.image(id), Ablation::FULL).unwrap();
    assert_eq!(remote_preds, local_preds);
    assert_eq!(score_run(&world.items, &remote_preds).unwrap().weighted_accuracy, 1.0);
    let a = remote.caption_image(&world.image("ac_001").unwrap()).unwrap();
    let b = local.caption_image(&world.image("ac_001").unwrap()).unwrap();
    assert_eq!(a.report, b.report);
}

#[test]
fn transport_failures_map_to_errors() {
    let url = serve(Arc::new(BTreeMap::new()));
    let world = SynthWorld::generate(SynthConfig::default()).unwrap();
    let image = world.image("brain_001").unwrap();
    let mut reg = ToolRegistry::new();
    let task = fetalscope::types::TaskKind::StandardPlane;
    for id in ["garbled", "flaky", "absent"] {
        reg.register(id, task, Adapter::Remote(RemoteTool::new(&url))).unwrap();
    }
    let null = serde_json::Value::Null;
    assert!(matches!(reg.invoke("garbled", &image, &null), Err(Error::MalformedOutput { .. })));
    assert!(matches!(reg.invoke("flaky", &image, &null), Err(Error::ToolUnavailable { .. })));
    assert!(matches!(reg.invoke("absent", &image, &null), Err(Error::MissingFixture { .. })));
}

#[test]
fn unreachable_service_registers_degraded() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let mut reg = ToolRegistry::new();
    let client = RemoteTool::new(&url).with_timeout(Duration::from_millis(300));
    let tool = reg.register("x", fetalscope::types::TaskKind::Hc, Adapter::Remote(client)).unwrap();
    assert!(tool.degraded);
    assert!(matches!(reg.probe("x"), Err(Error::ToolUnavailable { .. })));
}
