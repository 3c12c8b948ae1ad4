//! Agent backed by an OpenAI-style chat-completions endpoint.

use super::agents::{validate_role_output, Agent, AgentError, AgentReply, AgentRequest};
use super::Role;
use serde_json::json;
use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

pub const API_KEY_ENV: &str = "ARTIKIT_API_KEY";
pub const HTTP_RETRIES: usize = 2;
pub const BACKOFF: [Duration; 2] = [Duration::from_secs(1), Duration::from_secs(4)];

#[derive(Debug, Clone, PartialEq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// Posts a JSON body; `Err` is a transport failure (no HTTP status).
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &str) -> Result<HttpResponse, String>;
}

/// Blocking HTTP transport.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        Self { agent }
    }
}

impl Transport for UreqTransport {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &str) -> Result<HttpResponse, String> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(k) = bearer {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req.send(body).map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, body })
    }
}

fn default_template(role: Role) -> &'static str {
    match role {
        Role::Design => {
            "You are the design agent for articulated CAD assemblies. Produce an assembly plan JSON with \
             name, ground, declared_dof, parts (id, description, parameters, connectors with name, origin, \
             z_axis, x_axis, label, optional derive) and joints (id, type in Fixed|Revolute|Slider|Cylindrical|Ball, \
             parent and child {part, connector}, limits, rest, flip). Joints must form a tree rooted at ground and \
             declared_dof must equal the joint DOF sum. For an under-specified request you may instead return \
             {\"alternatives\":[{\"summary\":..., \"plan\":...}]}. Reply with one fenced json block."
        }
        Role::Generation => {
            "You are a part generation agent. Produce a part program JSON {part_id, steps, connectors} where \
             steps are {op: add|subtract, kind: box|cylinder|sphere|cone, params, placement} applied in order, \
             and connectors realize exactly the reference connectors of the part. Lengths in millimeters. \
             Reply with one fenced json block."
        }
        Role::PartValidator => {
            "You validate one generated part against its specification. Reply with one fenced json block \
             {\"pass\": bool, \"issues\": [..], \"class\": \"CODE\"|\"DESIGN\"}."
        }
        Role::AssemblyVerifier => {
            "You verify an assembled model for placement, interference and motion. Reply with one fenced json \
             block {\"pass\": bool, \"issues\": [..], \"class\": \"CODE\"|\"DESIGN\", \"part\": optional id}."
        }
        Role::Review => {
            "You review a finished pipeline run. Reply with one fenced json block \
             {\"summary\": str, \"issues\": [..], \"heuristics\": [..]}."
        }
        Role::Classifier => {
            "You classify a pipeline failure as CODE (the part fails a valid specification) or DESIGN (the plan \
             is flawed). Reply with one fenced json block {\"class\": ..., \"justification\": str}."
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    /// System prompt per role; missing roles use built-in templates.
    pub templates: BTreeMap<Role, String>,
}

impl RemoteConfig {
    /// Reads `<role>.txt` templates from `dir` where present.
    pub fn load_templates(&mut self, dir: &Path) -> Result<(), AgentError> {
        for role in Role::ALL {
            let path = dir.join(format!("{}.txt", role.name()));
            match std::fs::read_to_string(&path) {
                Ok(t) => {
                    self.templates.insert(role, t);
                }
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(AgentError::Io(format!("{}: {e}", path.display()))),
            }
        }
        Ok(())
    }
}

pub struct RemoteChatAgent {
    cfg: RemoteConfig,
    transport: Box<dyn Transport>,
    sleep: Box<dyn Fn(Duration) + Send + Sync>,
}

impl RemoteChatAgent {
    pub fn new(cfg: RemoteConfig, transport: Box<dyn Transport>) -> Self {
        Self { cfg, transport, sleep: Box::new(std::thread::sleep) }
    }

    /// Replaces the backoff sleep (tests use a no-op).
    pub fn with_sleep(mut self, sleep: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleep = Box::new(sleep);
        self
    }

    fn template(&self, role: Role) -> &str {
        self.cfg.templates.get(&role).map(String::as_str).unwrap_or_else(|| default_template(role))
    }

    /// One chat completion with HTTP retries; returns (content, retries used).
    fn complete(&self, messages: &[serde_json::Value]) -> Result<(String, usize), AgentError> {
        let body = json!({ "model": self.cfg.model, "messages": messages, "temperature": 0 }).to_string();
        let mut retries = 0;
        loop {
            let outcome = self.transport.post_json(&self.cfg.endpoint, self.cfg.api_key.as_deref(), &body);
            let (retryable, status, message) = match outcome {
                Ok(r) if (200..300).contains(&r.status) => {
                    let v: serde_json::Value = serde_json::from_str(&r.body)
                        .map_err(|e| AgentError::Protocol(format!("response is not JSON: {e}")))?;
                    let content = v["choices"][0]["message"]["content"]
                        .as_str()
                        .ok_or_else(|| AgentError::Protocol("response has no choices[0].message.content".into()))?;
                    return Ok((content.to_string(), retries));
                }
                Ok(r) => (r.status >= 500 || r.status == 429, Some(r.status), r.body),
                Err(e) => (true, None, e),
            };
            if !retryable || retries >= HTTP_RETRIES {
                return Err(AgentError::Http { status, message, retries });
            }
            log::warn!("chat request failed ({status:?}); retry {} of {HTTP_RETRIES}", retries + 1);
            (self.sleep)(BACKOFF[retries]);
            retries += 1;
        }
    }
}

/// The JSON document in a model reply: the first fenced block that parses,
/// else the whole reply, else the outermost braces.
pub fn extract_fenced_json(text: &str) -> Option<String> {
    let parses = |s: &str| serde_json::from_str::<serde_json::Value>(s).is_ok();
    let mut rest = text;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        let Some(end) = after.find("```") else { break };
        let block = &after[..end];
        let body = match block.find('\n') {
            Some(nl) if !block[..nl].trim().starts_with(['{', '[']) => &block[nl + 1..],
            _ => block,
        };
        if parses(body.trim()) {
            return Some(body.trim().to_string());
        }
        rest = &after[end + 3..];
    }
    let t = text.trim();
    if parses(t) {
        return Some(t.to_string());
    }
    let (a, b) = (text.find('{')?, text.rfind('}')?);
    (a < b && parses(&text[a..=b])).then(|| text[a..=b].to_string())
}

impl Agent for RemoteChatAgent {
    fn call(&self, req: &AgentRequest) -> Result<AgentReply, AgentError> {
        let user = serde_json::to_string_pretty(&json!({
            "role": req.role,
            "attempt": req.attempt,
            "part": req.part,
            "context": req.context,
        }))
        .expect("request serializes");
        let mut messages = vec![
            json!({"role": "system", "content": self.template(req.role)}),
            json!({"role": "user", "content": user}),
        ];
        let mut http_retries = 0;
        for reask in 0..=1 {
            let (content, r) = self.complete(&messages)?;
            http_retries += r;
            let problem = match extract_fenced_json(&content) {
                Some(doc) => match validate_role_output(req.role, &doc) {
                    Ok(()) => return Ok(AgentReply { text: doc, http_retries, reasks: reask }),
                    // After the re-ask a schema-invalid document is returned as is.
                    Err(_) if reask == 1 => return Ok(AgentReply { text: doc, http_retries, reasks: reask }),
                    Err(e) => e,
                },
                None => "no JSON document found".to_string(),
            };
            if reask == 1 {
                return Err(AgentError::Protocol(format!("{} reply unusable after re-ask: {problem}", req.role)));
            }
            messages.push(json!({"role": "assistant", "content": content}));
            messages.push(json!({
                "role": "user",
                "content": format!("Your reply could not be used: {problem}. Reply again with exactly one fenced json block."),
            }));
        }
        unreachable!("loop returns on the second pass")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    /// Replays canned responses and records request bodies.
    struct FakeTransport {
        replies: Mutex<Vec<Result<HttpResponse, String>>>,
        bodies: Mutex<Vec<String>>,
    }

    impl FakeTransport {
        fn new(mut replies: Vec<Result<HttpResponse, String>>) -> Self {
            replies.reverse();
            Self { replies: Mutex::new(replies), bodies: Mutex::new(Vec::new()) }
        }
    }

    impl Transport for &'static FakeTransport {
        fn post_json(&self, _url: &str, _bearer: Option<&str>, body: &str) -> Result<HttpResponse, String> {
            self.bodies.lock().unwrap().push(body.to_string());
            self.replies.lock().unwrap().pop().expect("unexpected request")
        }
    }

    fn chat(content: &str) -> Result<HttpResponse, String> {
        Ok(HttpResponse { status: 200, body: json!({"choices":[{"message":{"content": content}}]}).to_string() })
    }

    fn agent(t: &'static FakeTransport) -> RemoteChatAgent {
        let cfg = RemoteConfig { endpoint: "http://x".into(), model: "m".into(), api_key: None, templates: BTreeMap::new() };
        RemoteChatAgent::new(cfg, Box::new(t)).with_sleep(|_| {})
    }

    const PROGRAM: &str = r#"{"part_id":"p","steps":[{"op":"add","kind":"sphere","params":{"r":5}}],"connectors":[]}"#;

    fn req() -> AgentRequest {
        AgentRequest { role: Role::Generation, attempt: 0, part: Some("p".into()), context: json!({}) }
    }

    #[test]
    fn fenced_extraction() {
        assert_eq!(extract_fenced_json("text\n```json\n{\"a\":1}\n```\nmore").as_deref(), Some("{\"a\":1}"));
        assert_eq!(extract_fenced_json("```\n[1,2]\n```").as_deref(), Some("[1,2]"));
        assert_eq!(extract_fenced_json("```{\"a\":1}```").as_deref(), Some("{\"a\":1}"));
        assert_eq!(extract_fenced_json(" {\"a\":2} ").as_deref(), Some("{\"a\":2}"));
        assert_eq!(extract_fenced_json("sure: {\"a\":3} done").as_deref(), Some("{\"a\":3}"));
        assert_eq!(extract_fenced_json("```js\nnope\n``` and ```json\n{}\n```").as_deref(), Some("{}"));
        assert_eq!(extract_fenced_json("no json here"), None);
    }

    #[test]
    fn loopback_parses_program() {
        let t: &'static FakeTransport = Box::leak(Box::new(FakeTransport::new(vec![chat(&format!("```json\n{PROGRAM}\n```"))])));
        let r = agent(t).call(&req()).unwrap();
        assert_eq!(r.text, PROGRAM);
        assert_eq!((r.http_retries, r.reasks), (0, 0));
        let body: serde_json::Value = serde_json::from_str(&t.bodies.lock().unwrap()[0]).unwrap();
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["model"], "m");
    }

    #[test]
    fn server_errors_are_retried() {
        let err = || Ok(HttpResponse { status: 500, body: "boom".into() });
        let t: &'static FakeTransport = Box::leak(Box::new(FakeTransport::new(vec![err(), err(), chat(PROGRAM)])));
        let slept = Box::leak(Box::new(Mutex::new(Vec::new())));
        let a = agent(t).with_sleep(|d| slept.lock().unwrap().push(d));
        let r = a.call(&req()).unwrap();
        assert_eq!(r.http_retries, 2);
        assert_eq!(*slept.lock().unwrap(), BACKOFF.to_vec());
        let t: &'static FakeTransport = Box::leak(Box::new(FakeTransport::new(vec![err(), err(), err()])));
        assert!(matches!(agent(t).call(&req()), Err(AgentError::Http { status: Some(500), retries: 2, .. })));
        let t: &'static FakeTransport =
            Box::leak(Box::new(FakeTransport::new(vec![Ok(HttpResponse { status: 401, body: "no".into() })])));
        assert!(matches!(agent(t).call(&req()), Err(AgentError::Http { status: Some(401), retries: 0, .. })));
    }

    #[test]
    fn malformed_reply_is_reasked_once() {
        let t: &'static FakeTransport = Box::leak(Box::new(FakeTransport::new(vec![chat("garbage"), chat(PROGRAM)])));
        let r = agent(t).call(&req()).unwrap();
        assert_eq!(r.reasks, 1);
        let body: serde_json::Value = serde_json::from_str(&t.bodies.lock().unwrap()[1]).unwrap();
        assert_eq!(body["messages"].as_array().unwrap().len(), 4);
        let t: &'static FakeTransport = Box::leak(Box::new(FakeTransport::new(vec![chat("garbage"), chat("still garbage")])));
        assert!(matches!(agent(t).call(&req()), Err(AgentError::Protocol(_))));
        let t: &'static FakeTransport = Box::leak(Box::new(FakeTransport::new(vec![chat("{\"x\":1}"), chat("{\"x\":2}")])));
        let r = agent(t).call(&req()).unwrap();
        assert_eq!((r.text.as_str(), r.reasks), ("{\"x\":2}", 1));
    }
}
