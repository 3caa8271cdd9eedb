use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};
use shiftaudit_core::corpus::{load_corpus, make_pairs, Corpus};
use shiftaudit_core::model::{
    select_checkpoint, FineTuneSpec, HttpBackend, JobStatus, ModelBackend, RetryPolicy, SimBackend,
    SimSpec,
};
use shiftaudit_core::*;

type Handler = dyn Fn(&str, &str, &Value, Option<&str>) -> (u16, Value) + Send + Sync;

fn read_request(
    stream: &mut TcpStream,
) -> std::io::Result<(String, String, Value, Option<String>)> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    let (mut length, mut auth) = (0, None);
    loop {
        line.clear();
        reader.read_line(&mut line)?;
        let header = line.trim_end();
        if header.is_empty() {
            break;
        }
        if let Some((name, value)) = header.split_once(':') {
            match name.to_ascii_lowercase().as_str() {
                "content-length" => length = value.trim().parse().unwrap_or(0),
                "authorization" => auth = Some(value.trim().to_string()),
                _ => {}
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body)?;
    Ok((
        method,
        path,
        serde_json::from_slice(&body).unwrap_or(Value::Null),
        auth,
    ))
}

/// Serves `handler(method, path, body, authorization)` on an ephemeral port,
/// one request per connection.
fn serve(handler: Arc<Handler>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let handler = handler.clone();
            thread::spawn(move || {
                let Ok((method, path, body, auth)) = read_request(&mut stream) else {
                    return;
                };
                let (status, out) = handler(&method, &path, &body, auth.as_deref());
                let out = out.to_string();
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{out}",
                    out.len()
                );
            });
        }
    });
    format!("http://127.0.0.1:{port}")
}

fn opts() -> ClientOptions {
    ClientOptions {
        poll_interval: Duration::from_millis(1),
        retry: RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(1),
        },
        request_timeout: Duration::from_secs(5),
        token: Some("secret".into()),
        ..ClientOptions::default()
    }
}

fn pair(id: &str) -> PairRecord {
    PairRecord {
        id: id.into(),
        prompt: format!("prompt {id}"),
        completion: "done".into(),
        mode: PairMode::Prefix,
    }
}

#[test]
fn completion_request_shape_and_auth() {
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let url = serve(Arc::new(move |method, path, body, auth| {
        log.lock().unwrap().push((
            method.to_string(),
            path.to_string(),
            body.clone(),
            auth.map(str::to_string),
        ));
        (200, json!({"completion": "hello there"}))
    }));
    let client = ModelClient::connect(&url, opts()).unwrap();
    assert_eq!(
        client.complete(&client.model("m1"), "say hi", 7).unwrap(),
        "hello there"
    );
    let (method, path, body, auth) = seen.lock().unwrap()[0].clone();
    assert_eq!((method.as_str(), path.as_str()), ("POST", "/v1/complete"));
    assert_eq!(
        body,
        json!({"model_id": "m1", "prompt": "say hi", "max_new_tokens": 7, "deterministic": true})
    );
    assert_eq!(auth.as_deref(), Some("Bearer secret"));
    assert!(client.warnings().is_empty());
}

#[test]
fn extra_fields_are_ignored_with_a_warning() {
    let url = serve(Arc::new(|_, _, _, _| {
        (200, json!({"completion": "x", "latency_ms": 12}))
    }));
    let client = ModelClient::connect(&url, opts()).unwrap();
    assert_eq!(client.complete(&client.model("m"), "p", 4).unwrap(), "x");
    assert_eq!(
        client.warnings(),
        vec!["ignored extra completion response field `latency_ms`"]
    );
}

#[test]
fn probability_fields_are_refused() {
    let url = serve(Arc::new(|_, _, _, _| {
        (200, json!({"completion": "x", "logprobs": [-0.1]}))
    }));
    let client = ModelClient::connect(&url, opts()).unwrap();
    let err = client.complete(&client.model("m"), "p", 4).unwrap_err();
    assert!(matches!(err, Error::ProtocolViolation(_)), "{err}");
}

#[test]
fn server_errors_are_retried_client_errors_are_not() {
    let calls = Arc::new(AtomicUsize::new(0));
    let n = calls.clone();
    let url = serve(Arc::new(move |_, _, body, _| {
        if body["prompt"] == "bad" {
            return (400, json!({"error": "prompt rejected by policy"}));
        }
        if n.fetch_add(1, Ordering::SeqCst) < 2 {
            (503, json!({"error": "warming up"}))
        } else {
            (200, json!({"completion": "ok"}))
        }
    }));
    let client = ModelClient::connect(&url, opts()).unwrap();
    assert_eq!(
        client.complete(&client.model("m"), "good", 4).unwrap(),
        "ok"
    );
    assert_eq!(calls.load(Ordering::SeqCst), 3);
    match client.complete(&client.model("m"), "bad", 4).unwrap_err() {
        Error::Endpoint { status, message } => {
            assert_eq!(status, 400);
            assert_eq!(message, "prompt rejected by policy");
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let client = ModelClient::connect("http://127.0.0.1:1", opts()).unwrap();
    assert!(matches!(
        client.complete(&client.model("m"), "p", 4),
        Err(Error::Transport(_))
    ));
}

#[test]
fn finetune_job_lifecycle() {
    let polls = Arc::new(AtomicUsize::new(0));
    let p = polls.clone();
    let url = serve(Arc::new(move |method, path, body, _| {
        match (method, path) {
            ("POST", "/v1/finetune") => {
                assert_eq!(body["base_model_id"], "base");
                assert_eq!(body["pairs"].as_array().unwrap().len(), 2);
                assert_eq!(
                    body["pairs"][0],
                    json!({"prompt": "prompt a", "completion": "done"})
                );
                assert_eq!(body["hyperparams"]["lora_rank"], 8);
                (200, json!({"job_id": "j1"}))
            }
            ("GET", "/v1/finetune/j1") => match p.fetch_add(1, Ordering::SeqCst) {
                0 => (
                    200,
                    json!({"status": "running", "checkpoints": [{"step": 10, "loss": 2.0, "model_id": "j1@10"}]}),
                ),
                _ => (
                    200,
                    json!({"status": "succeeded",
                       "checkpoints": [{"step": 10, "loss": 2.0, "model_id": "j1@10"},
                                       {"step": 20, "loss": 1.0, "model_id": "j1@20"},
                                       {"step": 30, "loss": 1.5, "model_id": "j1@30"}],
                       "result_model_id": "j1-final"}),
                ),
            },
            ("GET", _) => (404, json!({"error": "no such job"})),
            _ => (405, json!({})),
        }
    }));
    let client = ModelClient::connect(&url, opts()).unwrap();
    let spec = FineTuneSpec {
        pairs: vec![pair("a"), pair("b")],
        hyperparams: Hyperparams::default(),
    };
    let job = client.start_finetune(&client.model("base"), &spec).unwrap();
    assert_eq!(job.status, JobStatus::Pending);
    let done = client.wait_finetune(job).unwrap();
    assert_eq!(done.result_model.as_ref().unwrap().model_id, "j1-final");
    let losses: Vec<(u64, f64)> = done.checkpoints.iter().map(|c| (c.step, c.loss)).collect();
    let choice = select_checkpoint(&done, &losses).unwrap();
    assert_eq!(choice.model.model_id, "j1@20");

    let backend = HttpBackend::new(&url, None).unwrap();
    assert!(matches!(
        backend.fetch_job("zzz"),
        Err(Error::UnknownJob(_))
    ));
}

#[test]
fn job_status_regression_is_rejected() {
    let polls = Arc::new(AtomicUsize::new(0));
    let p = polls.clone();
    let url = serve(Arc::new(move |method, _, _, _| {
        if method == "POST" {
            return (200, json!({"job_id": "j"}));
        }
        match p.fetch_add(1, Ordering::SeqCst) {
            0 => (
                200,
                json!({"status": "running", "checkpoints": [{"step": 1, "loss": 1.0}]}),
            ),
            _ => (200, json!({"status": "pending", "checkpoints": []})),
        }
    }));
    let client = ModelClient::connect(&url, opts()).unwrap();
    let spec = FineTuneSpec {
        pairs: vec![pair("a")],
        hyperparams: Hyperparams::default(),
    };
    let job = client.start_finetune(&client.model("base"), &spec).unwrap();
    let err = client.wait_finetune(job).unwrap_err();
    assert!(matches!(err, Error::JobRegression { .. }), "{err}");
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

/// Wire-protocol front for the simulator.
fn sim_server(spec: &str) -> String {
    let backend = Arc::new(SimBackend::from_spec(&SimSpec::load(&fixture(spec)).unwrap()).unwrap());
    serve(Arc::new(move |method, path, body, _| {
        let result = match (method, path) {
            ("POST", "/v1/complete") => backend
                .complete(
                    body["model_id"].as_str().unwrap(),
                    body["prompt"].as_str().unwrap(),
                    body["max_new_tokens"].as_u64().unwrap() as usize,
                )
                .map(|r| json!({"completion": r.text})),
            ("POST", "/v1/finetune") => {
                let pairs = body["pairs"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .enumerate()
                    .map(|(i, p)| PairRecord {
                        id: i.to_string(),
                        prompt: p["prompt"].as_str().unwrap().into(),
                        completion: p["completion"].as_str().unwrap().into(),
                        mode: PairMode::Prefix,
                    })
                    .collect();
                let spec = FineTuneSpec {
                    pairs,
                    hyperparams: serde_json::from_value(body["hyperparams"].clone()).unwrap(),
                };
                backend
                    .start_finetune(body["base_model_id"].as_str().unwrap(), &spec)
                    .map(|id| json!({"job_id": id}))
            }
            ("GET", p) => backend
                .fetch_job(p.trim_start_matches("/v1/finetune/"))
                .map(|s| serde_json::to_value(s).unwrap()),
            _ => return (405, json!({})),
        };
        match result {
            Ok(v) => (200, v),
            Err(Error::UnknownJob(_)) => (404, json!({"error": "unknown job"})),
            Err(e) => (400, json!({"error": e.to_string()})),
        }
    }))
}

fn fixture_pairs(name: &str) -> Vec<PairRecord> {
    let Corpus::Texts(t) = load_corpus(&fixture(name), CorpusFormat::TextLines).unwrap() else {
        panic!()
    };
    make_pairs(&t, &PairOptions::default()).unwrap().pairs
}

#[test]
fn audit_over_http_matches_in_process_simulator() {
    let cfg = AuditConfig {
        n_finetune: 15,
        n_test: 20,
        seed: 7,
        max_new_tokens: 16,
        ..AuditConfig::default()
    };
    let run = |client: &ModelClient| {
        let input = AuditInput {
            dataset_id: "http".into(),
            label: None,
            bundle: cfg
                .bundle(
                    fixture_pairs("members.txt"),
                    fixture_pairs("validation.txt"),
                    "fixture",
                )
                .unwrap(),
        };
        Auditor::lexical(client, client.model("base"), cfg.clone())
            .unwrap()
            .dual_test(&input)
            .unwrap()
    };
    let http = ModelClient::connect(&sim_server("sim_member.json"), opts()).unwrap();
    let remote = run(&http);
    let local_client = ModelClient::connect(
        &format!("sim:{}", fixture("sim_member.json").display()),
        opts(),
    )
    .unwrap();
    let local = run(&local_client);
    assert_eq!(remote.decision, Decision::Member);
    assert_eq!(remote.p_value, local.p_value);
    assert_eq!(remote.suspicious_scores, local.suspicious_scores);
    assert_eq!(remote.validation_scores, local.validation_scores);
}
