//! HTTP front end for [`MockModel`] speaking the completions wire protocol.

use std::sync::Arc;
use std::thread::JoinHandle;

use tiny_http::{Header, Method, Request, Response, Server};

use super::wire::{
    ChatBody, ChatChoice, ChatLogprobs, ChatMessage, ChatReply, ChatTokenLogprob, CompletionBody,
    CompletionChoice, CompletionLogprobs, CompletionReply, TopLogprob, WireUsage,
};
use super::{CompletionBackend, CompletionRequest, CompletionResponse, LmError, MockModel};

const WORKERS: usize = 4;

/// A running mock server; stops when dropped.
pub struct MockServerHandle {
    server: Arc<Server>,
    workers: Vec<JoinHandle<()>>,
    port: u16,
}

impl std::fmt::Debug for MockServerHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockServerHandle").field("port", &self.port).finish()
    }
}

impl MockServerHandle {
    pub fn port(&self) -> u16 {
        self.port
    }

    pub fn base_url(&self) -> String {
        format!("http://127.0.0.1:{}", self.port)
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    /// Block until the server is stopped from elsewhere.
    pub fn join(mut self) {
        for worker in self.workers.drain(..) {
            let _ = worker.join();
        }
    }

    fn stop(&mut self) {
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for worker in self.workers.drain(..) {
            let _ = worker.join();
        }
    }
}

impl Drop for MockServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Serve `model` on `127.0.0.1:port`; port 0 picks a free port.
pub fn mock_serve(model: MockModel, port: u16) -> Result<MockServerHandle, LmError> {
    let server = Server::http(("127.0.0.1", port)).map_err(|e| {
        match e.downcast_ref::<std::io::Error>() {
            Some(io) if io.kind() == std::io::ErrorKind::AddrInUse => LmError::PortInUse(port),
            _ => LmError::EndpointUnavailable(e.to_string()),
        }
    })?;
    let port = server
        .server_addr()
        .to_ip()
        .map(|a| a.port())
        .ok_or_else(|| LmError::EndpointUnavailable("server has no IP address".to_string()))?;
    let server = Arc::new(server);
    let model = Arc::new(model);
    let workers = (0..WORKERS)
        .map(|_| {
            let server = Arc::clone(&server);
            let model = Arc::clone(&model);
            std::thread::spawn(move || {
                while let Ok(request) = server.recv() {
                    handle(&model, request);
                }
            })
        })
        .collect();
    Ok(MockServerHandle {
        server,
        workers,
        port,
    })
}

fn json_header() -> Header {
    Header::from_bytes("Content-Type", "application/json").expect("static header is valid")
}

fn reply(request: Request, status: u16, body: String) {
    let response = Response::from_string(body)
        .with_status_code(status)
        .with_header(json_header());
    if let Err(e) = request.respond(response) {
        log::debug!("mock server: client went away: {e}");
    }
}

fn error_body(message: &str) -> String {
    serde_json::json!({ "error": { "message": message } }).to_string()
}

fn handle(model: &MockModel, mut request: Request) {
    let mut raw = String::new();
    if let Err(e) = request.as_reader().read_to_string(&mut raw) {
        return reply(request, 400, error_body(&e.to_string()));
    }
    let method = request.method().clone();
    let path = request.url().split('?').next().unwrap_or("").to_string();
    let outcome = match (method, path.as_str()) {
        (Method::Get, "/health") => Ok("{\"status\":\"ok\"}".to_string()),
        (Method::Post, "/v1/completions") => completions(model, &raw),
        (Method::Post, "/v1/chat/completions") => chat(model, &raw),
        _ => Err((404, format!("no route for {path}"))),
    };
    match outcome {
        Ok(body) => reply(request, 200, body),
        Err((status, message)) => reply(request, status, error_body(&message)),
    }
}

fn run(model: &MockModel, request: &CompletionRequest) -> Result<CompletionResponse, (u16, String)> {
    model.complete(request).map_err(|e| (500, e.to_string()))
}

fn usage(response: &CompletionResponse) -> Option<WireUsage> {
    Some(WireUsage {
        prompt_tokens: response.usage.prompt_tokens,
        completion_tokens: response.usage.completion_tokens,
    })
}

fn completions(model: &MockModel, raw: &str) -> Result<String, (u16, String)> {
    let body: CompletionBody = serde_json::from_str(raw).map_err(|e| (400, e.to_string()))?;
    let request = CompletionRequest {
        model: body.model.clone(),
        prompt: body.prompt,
        max_tokens: body.max_tokens,
        logprobs: body.logprobs,
        chat: false,
    };
    let response = run(model, &request)?;
    let logprobs = response.top_tokens.as_ref().map(|top| CompletionLogprobs {
        tokens: vec![response.text.clone()],
        token_logprobs: vec![top.first().map(|t| t.1)],
        top_logprobs: Some(vec![Some(top.iter().cloned().collect())]),
    });
    let reply = CompletionReply {
        id: "mock".to_string(),
        object: "text_completion".to_string(),
        model: body.model,
        choices: vec![CompletionChoice {
            text: response.text.clone(),
            index: 0,
            logprobs,
            finish_reason: Some("length".to_string()),
        }],
        usage: usage(&response),
    };
    serde_json::to_string(&reply).map_err(|e| (500, e.to_string()))
}

fn chat(model: &MockModel, raw: &str) -> Result<String, (u16, String)> {
    let body: ChatBody = serde_json::from_str(raw).map_err(|e| (400, e.to_string()))?;
    let prompt = body
        .messages
        .iter()
        .map(|m| m.content.as_str())
        .collect::<Vec<_>>()
        .join("\n\n");
    let request = CompletionRequest {
        model: body.model.clone(),
        prompt,
        max_tokens: body.max_tokens,
        logprobs: body.logprobs.then(|| body.top_logprobs.unwrap_or(1)),
        chat: true,
    };
    let response = run(model, &request)?;
    let logprobs = response.top_tokens.as_ref().map(|top| ChatLogprobs {
        content: Some(vec![ChatTokenLogprob {
            token: response.text.clone(),
            logprob: top.first().map_or(0.0, |t| t.1),
            top_logprobs: top
                .iter()
                .map(|(token, logprob)| TopLogprob {
                    token: token.clone(),
                    logprob: *logprob,
                })
                .collect(),
        }]),
    });
    let reply = ChatReply {
        id: "mock".to_string(),
        object: "chat.completion".to_string(),
        model: body.model,
        choices: vec![ChatChoice {
            message: ChatMessage {
                role: "assistant".to_string(),
                content: response.text.clone(),
            },
            index: 0,
            logprobs,
            finish_reason: Some("length".to_string()),
        }],
        usage: usage(&response),
    };
    serde_json::to_string(&reply).map_err(|e| (500, e.to_string()))
}
