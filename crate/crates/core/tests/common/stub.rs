//! Minimal completions endpoint on a std TcpListener. Responses are keyed by
//! prompt; requests missing the echo/logprobs parameters get a 400.

use serde_json::Value;
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

pub struct StubServer {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
}

pub fn spawn(responses: HashMap<String, (u16, String)>) -> StubServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            counter.fetch_add(1, Ordering::SeqCst);
            let _ = serve(stream, &responses);
        }
    });
    StubServer { url, hits }
}

fn serve(stream: TcpStream, responses: &HashMap<String, (u16, String)>) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut len = 0;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body)?;
    let (status, text) = match serde_json::from_slice::<Value>(&body) {
        Ok(req)
            if req["echo"] == Value::Bool(true)
                && req["max_tokens"] == 0
                && req["logprobs"].is_number() =>
        {
            let prompt = req["prompt"].as_str().unwrap_or_default();
            responses
                .get(prompt)
                .cloned()
                .unwrap_or((404, r#"{"error":"unknown prompt"}"#.into()))
        }
        _ => (400, r#"{"error":"bad request"}"#.into()),
    };
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
        text.len()
    )?;
    stream.flush()
}
