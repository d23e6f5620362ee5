use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use layerscale::curve::ScaleSchedule;
use layerscale::evolution::{run, GaConfig};
use layerscale::fitness::protocol::{to_line, Handshake, HandshakeReply, Request, Response};
use layerscale::fitness::{
    AccuracyTriple, Endpoint, EvalError, Evaluator, ExternalEvaluator, ExternalOptions,
};

fn vicuna() -> AccuracyTriple {
    AccuracyTriple::percent(70.0, 55.6, 60.2)
        .unwrap()
        .with_sample_count(1)
}

/// What the stub does with one well-formed request.
#[derive(Clone, Copy)]
enum Reply {
    Triple,
    WrongId,
    Error,
    Silent,
}

/// Server-side answer to one line, mirroring the reference stub bridge.
fn stub_answer(line: &str, n_layers: usize, handshake_done: bool) -> String {
    if !handshake_done {
        return match serde_json::from_str::<Handshake>(line) {
            Ok(h) if h.n_layers == n_layers => to_line(&HandshakeReply {
                ok: true,
                reason: None,
            }),
            Ok(h) => to_line(&HandshakeReply {
                ok: false,
                reason: Some(format!("configured for {n_layers} layers, got {}", h.n_layers)),
            }),
            Err(_) => to_line(&Response::failure(None, "parse")),
        };
    }
    match serde_json::from_str::<Request>(line) {
        Ok(r) => to_line(&Response::success(r.id, &vicuna())),
        Err(_) => to_line(&Response::failure(None, "parse")),
    }
}

struct Stub {
    addr: String,
    seen: Arc<Mutex<Vec<u64>>>,
    connections: Arc<Mutex<usize>>,
}

/// TCP stub answering with `plan(request_index)`; requests past the plan get `Triple`.
fn spawn_stub(n_layers: usize, plan: Vec<Reply>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let connections = Arc::new(Mutex::new(0));
    let (seen2, conns2) = (seen.clone(), connections.clone());
    thread::spawn(move || {
        let mut index = 0usize;
        for stream in listener.incoming() {
            let Ok(stream) = stream else { break };
            *conns2.lock().unwrap() += 1;
            let mut writer = stream.try_clone().unwrap();
            let mut handshake_done = false;
            for line in BufReader::new(stream).lines() {
                let Ok(line) = line else { break };
                let reply = if !handshake_done {
                    let a = stub_answer(&line, n_layers, false);
                    handshake_done = a.contains("\"ok\":true");
                    a
                } else {
                    let Ok(req) = serde_json::from_str::<Request>(&line) else {
                        let _ = writeln!(writer, "{}", to_line(&Response::failure(None, "parse")));
                        continue;
                    };
                    seen2.lock().unwrap().push(req.id);
                    let action = plan.get(index).copied().unwrap_or(Reply::Triple);
                    index += 1;
                    match action {
                        Reply::Triple => to_line(&Response::success(req.id, &vicuna())),
                        Reply::WrongId => to_line(&Response::success(req.id + 1000, &vicuna())),
                        Reply::Error => to_line(&Response::failure(Some(req.id), "backend down")),
                        Reply::Silent => continue,
                    }
                };
                if writeln!(writer, "{reply}").is_err() {
                    break;
                }
            }
        }
    });
    Stub {
        addr,
        seen,
        connections,
    }
}

fn options(timeout_ms: u64, retries: u32) -> ExternalOptions {
    ExternalOptions {
        timeout: Duration::from_millis(timeout_ms),
        retries,
    }
}

fn connect(stub: &Stub, n_layers: usize, opts: ExternalOptions) -> Result<ExternalEvaluator, EvalError> {
    ExternalEvaluator::connect(Endpoint::Tcp(stub.addr.clone()), n_layers, 0, opts)
}

#[test]
fn transcript_replay_is_byte_identical() {
    let text = include_str!("fixtures/stub_transcript.txt");
    let mut handshake_done = false;
    let mut expected = None;
    for line in text.lines() {
        if let Some(client) = line.strip_prefix("> ") {
            let answer = stub_answer(client, 4, handshake_done);
            handshake_done = true;
            expected = Some(answer);
        } else if let Some(server) = line.strip_prefix("< ") {
            assert_eq!(expected.take().as_deref(), Some(server));
        }
    }
    assert!(expected.is_none());
}

#[test]
fn client_lines_match_transcript() {
    let text = include_str!("fixtures/stub_transcript.txt");
    let client: Vec<&str> = text
        .lines()
        .filter_map(|l| l.strip_prefix("> "))
        .collect();
    assert_eq!(client[0], to_line(&Handshake::new(4, 0)));
    let req = Request {
        id: 1,
        scales: vec![1.5; 4],
        first_scaled_layer: 0,
    };
    assert_eq!(client[1], to_line(&req));
}

#[test]
fn search_over_tcp_keeps_ids_unique_and_ordered() {
    let stub = spawn_stub(6, vec![]);
    let eval = connect(&stub, 6, options(5000, 0)).unwrap();
    let cfg = GaConfig {
        n_layers: 6,
        population_size: 8,
        mutation_size: 4,
        crossover_size: 2,
        top_k: 2,
        max_iterations: 2,
        rng_seed: 3,
        ..GaConfig::default()
    };
    let result = run(&cfg, &eval).unwrap();
    assert!(result.complete);
    let seen = stub.seen.lock().unwrap().clone();
    assert_eq!(seen.len() as u64, result.evaluations);
    assert!(seen.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(seen.iter().collect::<HashSet<_>>().len(), seen.len());
    assert!((result.best_utilization().unwrap() - 60.78).abs() < 1e-9);
}

#[test]
fn mismatched_response_id_is_retried_on_a_new_connection() {
    let stub = spawn_stub(4, vec![Reply::WrongId]);
    let eval = connect(&stub, 4, options(5000, 2)).unwrap();
    let got = eval.evaluate(&ScaleSchedule::uniform(4, 1.5).unwrap()).unwrap();
    assert_eq!(got, vicuna());
    assert_eq!(*stub.connections.lock().unwrap(), 2);
    assert_eq!(*stub.seen.lock().unwrap(), vec![1, 2]);
}

#[test]
fn remote_errors_are_retried_on_the_same_connection() {
    let stub = spawn_stub(4, vec![Reply::Error, Reply::Error]);
    let eval = connect(&stub, 4, options(5000, 2)).unwrap();
    assert_eq!(
        eval.evaluate(&ScaleSchedule::uniform(4, 1.0).unwrap()).unwrap(),
        vicuna()
    );
    assert_eq!(*stub.connections.lock().unwrap(), 1);
}

#[test]
fn exhausted_retries_report_the_attempt_count() {
    let stub = spawn_stub(4, vec![Reply::Error; 10]);
    let eval = connect(&stub, 4, options(5000, 2)).unwrap();
    let err = eval
        .evaluate(&ScaleSchedule::uniform(4, 1.0).unwrap())
        .unwrap_err();
    assert_eq!(err.attempts(), 3);
    assert!(matches!(err, EvalError::Exhausted { .. }));
}

#[test]
fn silent_server_times_out() {
    let stub = spawn_stub(4, vec![Reply::Silent; 10]);
    let eval = connect(&stub, 4, options(100, 0)).unwrap();
    let err = eval
        .evaluate(&ScaleSchedule::uniform(4, 1.0).unwrap())
        .unwrap_err();
    match err {
        EvalError::Exhausted { last, .. } => assert!(matches!(*last, EvalError::Timeout(_))),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn handshake_layer_mismatch_is_rejected() {
    let stub = spawn_stub(30, vec![]);
    let err = connect(&stub, 32, options(5000, 3)).err().unwrap();
    assert!(matches!(err, EvalError::Handshake(_)));
}

#[test]
fn schedule_length_is_checked_before_sending() {
    let stub = spawn_stub(4, vec![]);
    let eval = connect(&stub, 4, options(5000, 0)).unwrap();
    let err = eval
        .evaluate(&ScaleSchedule::uniform(5, 1.0).unwrap())
        .unwrap_err();
    assert!(matches!(err, EvalError::InvalidSchedule(_)));
    assert!(stub.seen.lock().unwrap().is_empty());
}

#[test]
fn malformed_line_gets_a_parse_error_and_the_loop_continues() {
    let stub = spawn_stub(4, vec![]);
    let mut s = TcpStream::connect(&stub.addr).unwrap();
    let mut r = BufReader::new(s.try_clone().unwrap());
    let mut line = String::new();
    writeln!(s, "{}", to_line(&Handshake::new(4, 0))).unwrap();
    r.read_line(&mut line).unwrap();
    assert_eq!(line.trim_end(), r#"{"ok":true}"#);
    line.clear();
    writeln!(s, "not json").unwrap();
    r.read_line(&mut line).unwrap();
    assert_eq!(line.trim_end(), r#"{"id":null,"error":"parse"}"#);
    line.clear();
    writeln!(s, r#"{{"id":9,"scales":[1,1,1,1],"first_scaled_layer":0}}"#).unwrap();
    r.read_line(&mut line).unwrap();
    let resp: Response = serde_json::from_str(&line).unwrap();
    assert_eq!(resp.into_triple(9).unwrap(), vicuna());
}

const PY_STUB: &str = r#"
import json, sys
hs = json.loads(sys.stdin.readline())
print(json.dumps({"ok": hs["n_layers"] == 5}, separators=(",", ":")), flush=True)
for line in sys.stdin:
    try:
        req = json.loads(line)
        out = {"id": req["id"], "acc_first": 70.0, "acc_middle": 55.6, "acc_last": 60.2, "sample_count": 1}
    except Exception:
        out = {"id": None, "error": "parse"}
    print(json.dumps(out, separators=(",", ":")), flush=True)
"#;

#[test]
fn subprocess_stub_over_stdio() {
    if std::process::Command::new("python3")
        .arg("--version")
        .output()
        .is_err()
    {
        eprintln!("python3 not available; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("stub.py");
    std::fs::write(&script, PY_STUB).unwrap();
    let endpoint = Endpoint::Command(vec!["python3".into(), script.display().to_string()]);
    let eval = ExternalEvaluator::connect(endpoint, 5, 0, options(10_000, 1)).unwrap();
    let cfg = GaConfig {
        n_layers: 5,
        population_size: 6,
        mutation_size: 3,
        crossover_size: 2,
        top_k: 2,
        max_iterations: 2,
        ..GaConfig::default()
    };
    let result = run(&cfg, &eval).unwrap();
    assert!(result.complete);
    assert!((result.best_utilization().unwrap() - 60.78).abs() < 1e-9);
}
