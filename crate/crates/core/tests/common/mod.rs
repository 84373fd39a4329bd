#![allow(dead_code)]

use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::Duration;

use maskcert::scorer::{LexicalScorer, Scorer};
use serde_json::{json, Value};

/// How the mock scorer answers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Lexical,
    /// Answers pairs of pipelined requests in reverse order.
    Reversed,
    FixedScore(f64),
    Garbage,
    WrongId,
    RemoteError,
    Silent,
}

/// Starts a mock scorer on a free local port and returns its address.
pub fn spawn(mode: Mode) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { break };
            thread::spawn(move || serve(stream, mode));
        }
    });
    addr
}

fn answer(request: &Value, mode: Mode) -> Value {
    let id = request["id"].as_u64().unwrap();
    let payload = &request["payload"];
    let tokens = |v: &Value| -> Vec<String> {
        v.as_array().unwrap().iter().map(|t| t.as_str().unwrap().to_string()).collect()
    };
    match request["op"].as_str().unwrap() {
        "info" => json!({"id": id, "result": {"name": "toy-lexical", "version": "1", "max_doc_tokens": 256}}),
        _ if mode == Mode::RemoteError => json!({"id": id, "error": {"code": "boom", "message": "scorer exploded"}}),
        "score" => {
            let query = tokens(&payload["query"]);
            let scores: Vec<f64> = payload["docs"]
                .as_array()
                .unwrap()
                .iter()
                .map(|d| match mode {
                    Mode::FixedScore(s) => s,
                    _ => LexicalScorer::raw_score(&query, &tokens(d)),
                })
                .collect();
            json!({"id": id, "result": {"scores": scores}})
        }
        "judge_pair" => {
            let query = tokens(&payload["query"]);
            let docs = payload["docs"].as_array().unwrap();
            let j = LexicalScorer.judge_pair(&query, &tokens(&docs[0]), &tokens(&docs[1])).unwrap();
            json!({"id": id, "result": {"probs": j.probs}})
        }
        other => json!({"id": id, "error": {"code": "unknown-op", "message": other}}),
    }
}

fn serve(stream: TcpStream, mode: Mode) {
    stream.set_read_timeout(Some(Duration::from_millis(50))).unwrap();
    let mut writer = stream.try_clone().unwrap();
    let mut reader = BufReader::new(stream);
    let mut buf = String::new();
    let mut held: Vec<Value> = Vec::new();
    loop {
        match reader.read_line(&mut buf) {
            Ok(0) => return,
            Ok(_) if buf.ends_with('\n') => {
                let request: Value = serde_json::from_str(buf.trim()).unwrap();
                buf.clear();
                let first = request["op"] == "info";
                let reply = answer(&request, mode);
                let line = match mode {
                    _ if first => reply.to_string(),
                    Mode::Silent => continue,
                    Mode::Garbage => "this is not json".to_string(),
                    Mode::WrongId => json!({"id": 999_999, "result": {"scores": [0.5]}}).to_string(),
                    Mode::Reversed => {
                        held.push(reply);
                        if held.len() < 2 {
                            continue;
                        }
                        let out: Vec<String> = held.drain(..).rev().map(|v| v.to_string()).collect();
                        out.join("\n")
                    }
                    _ => reply.to_string(),
                };
                if writeln!(writer, "{line}").and_then(|_| writer.flush()).is_err() {
                    return;
                }
            }
            Ok(_) => {}
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                for v in held.drain(..) {
                    if writeln!(writer, "{v}").and_then(|_| writer.flush()).is_err() {
                        return;
                    }
                }
            }
            Err(_) => return,
        }
    }
}
