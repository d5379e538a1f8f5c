use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::cassette::{Cassette, CassetteFile};
use super::mock::{mock_embedding, mock_image};
use super::{
    sha256_hex, ChatRequest, ChatResponse, GatewayConfig, GatewayError, GatewayMode, MockBackend,
    Transport, TransportError, UreqTransport,
};

const CHAT: &str = "/v1/chat";
const EMBED: &str = "/v1/embed";
const GENERATE: &str = "/v1/generate";

pub enum Backend {
    Http(Box<dyn Transport>),
    Mock(MockBackend),
    /// Only valid in replay mode.
    None,
}

/// One entry of the call log. Holds no secrets and no payloads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub index: u64,
    pub endpoint: String,
    pub request_hash: String,
    pub task: Option<String>,
    pub attempts: usize,
    pub ok: bool,
}

struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

pub struct Gateway {
    config: GatewayConfig,
    backend: Backend,
    cassette: Option<Mutex<CassetteFile>>,
    log: Mutex<Vec<CallRecord>>,
    counter: AtomicU64,
    slots: Slots,
}

#[derive(Deserialize)]
struct EmbedReply {
    vectors: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct GenerateReply {
    image_b64: String,
}

impl Gateway {
    pub fn new(config: GatewayConfig, backend: Backend) -> Result<Self, GatewayError> {
        config.validate()?;
        let ok = match (config.mode, &backend) {
            (GatewayMode::Live, Backend::Http(_)) => true,
            (GatewayMode::Mock, Backend::Mock(_)) => true,
            (GatewayMode::Record, Backend::Http(_) | Backend::Mock(_)) => true,
            (GatewayMode::Replay, _) => true,
            _ => false,
        };
        if !ok {
            return Err(GatewayError::Config(format!(
                "{:?} mode does not fit the supplied backend",
                config.mode
            )));
        }
        let cassette = match (config.mode, &config.cassette) {
            (GatewayMode::Replay, Some(p)) => Some(Cassette::load(p)?),
            (GatewayMode::Record, Some(p)) => Some(Cassette::load_or_new(p)?),
            _ => None,
        }
        .map(|c| {
            Mutex::new(CassetteFile {
                path: config.cassette.clone().unwrap_or_default(),
                cassette: c,
            })
        });
        let slots = Slots {
            free: Mutex::new(config.max_in_flight),
            cv: Condvar::new(),
        };
        Ok(Self {
            config,
            backend,
            cassette,
            log: Mutex::new(Vec::new()),
            counter: AtomicU64::new(0),
            slots,
        })
    }

    /// Mock gateway with default settings.
    pub fn mock(mock: MockBackend) -> Self {
        Self::new(GatewayConfig::default(), Backend::Mock(mock)).expect("default config is valid")
    }

    /// Live or recording gateway over HTTP.
    pub fn http(config: GatewayConfig) -> Result<Self, GatewayError> {
        let transport = UreqTransport::new(Duration::from_secs_f64(config.timeout_s));
        Self::new(config, Backend::Http(Box::new(transport)))
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn mode(&self) -> GatewayMode {
        self.config.mode
    }

    /// Snapshot of every call made so far, in issue order.
    pub fn call_log(&self) -> Vec<CallRecord> {
        let mut log = self.log.lock().unwrap().clone();
        log.sort_by_key(|r| r.index);
        log
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().unwrap().len()
    }

    pub fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let mut body = serde_json::to_value(req).expect("request serializes");
        if !self.config.model.is_empty() {
            body["model"] = json!(self.config.model);
        }
        let reply = self.call(CHAT, body, req.task.as_deref(), |m| {
            let text = m.chat(req)?;
            Ok(json!({ "text": text, "usage": { "prompt_tokens": 0, "completion_tokens": 0 } }))
        })?;
        serde_json::from_value(reply).map_err(|e| GatewayError::Decode(e.to_string()))
    }

    /// Embeds each text; vectors come back L2-normalized.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::Precondition(
                "embed needs at least one text".into(),
            ));
        }
        let reply = self.call(EMBED, json!({ "texts": texts }), Some("embed"), |m| {
            let vectors: Vec<Vec<f64>> = texts
                .iter()
                .map(|t| mock_embedding(t, m.embed_dim))
                .collect();
            Ok(json!({ "vectors": vectors }))
        })?;
        let reply: EmbedReply =
            serde_json::from_value(reply).map_err(|e| GatewayError::Decode(e.to_string()))?;
        if reply.vectors.len() != texts.len() {
            return Err(GatewayError::Decode(format!(
                "expected {} vectors, got {}",
                texts.len(),
                reply.vectors.len()
            )));
        }
        let dim = reply.vectors[0].len();
        let mut out = Vec::with_capacity(texts.len());
        for v in reply.vectors {
            if v.len() != dim {
                return Err(GatewayError::DimensionMismatch(dim, v.len()));
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(GatewayError::Decode(
                    "embedding with zero or non-finite norm".into(),
                ));
            }
            out.push(v.into_iter().map(|x| x / norm).collect());
        }
        Ok(out)
    }

    /// Renders `prompt` (optionally conditioned on a reference PNG) and
    /// returns PNG bytes.
    pub fn generate_image(
        &self,
        prompt: &str,
        reference_png: Option<&[u8]>,
    ) -> Result<Vec<u8>, GatewayError> {
        if prompt.trim().is_empty() {
            return Err(GatewayError::Precondition("image prompt is empty".into()));
        }
        let b64 = base64::engine::general_purpose::STANDARD;
        let mut body = json!({ "prompt": prompt });
        if let Some(r) = reference_png {
            body["image_b64"] = json!(b64.encode(r));
        }
        let reply = self.call(GENERATE, body, Some("generate"), |_| {
            Ok(json!({ "image_b64": b64.encode(mock_image(prompt)) }))
        })?;
        let reply: GenerateReply =
            serde_json::from_value(reply).map_err(|e| GatewayError::Decode(e.to_string()))?;
        b64.decode(reply.image_b64.as_bytes())
            .map_err(|e| GatewayError::Decode(e.to_string()))
    }

    fn call(
        &self,
        endpoint: &'static str,
        body: Value,
        task: Option<&str>,
        mock: impl FnOnce(&MockBackend) -> Result<Value, GatewayError>,
    ) -> Result<Value, GatewayError> {
        let index = self.counter.fetch_add(1, Ordering::SeqCst);
        let key = sha256_hex(format!("{endpoint}\n{body}").as_bytes());
        let _slot = self.slots.acquire();

        let (result, attempts) = if self.config.mode == GatewayMode::Replay {
            let cassette = self
                .cassette
                .as_ref()
                .expect("replay has a cassette")
                .lock()
                .unwrap();
            let hit = cassette.cassette.entries.get(&key).cloned();
            (hit.ok_or_else(|| GatewayError::ReplayMiss(key.clone())), 0)
        } else {
            match &self.backend {
                Backend::Http(t) => self.post_with_retry(t.as_ref(), endpoint, &body),
                Backend::Mock(m) => (mock(m), 1),
                Backend::None => unreachable!("checked in Gateway::new"),
            }
        };

        if let (Ok(value), GatewayMode::Record) = (&result, self.config.mode) {
            let mut file = self
                .cassette
                .as_ref()
                .expect("record has a cassette")
                .lock()
                .unwrap();
            file.cassette.entries.insert(key.clone(), value.clone());
            file.cassette.save(&file.path)?;
        }

        log::debug!(
            "gateway call {index} {endpoint} {key:.12} attempts={attempts} ok={}",
            result.is_ok()
        );
        self.log.lock().unwrap().push(CallRecord {
            index,
            endpoint: endpoint.to_string(),
            request_hash: key,
            task: task.map(str::to_string),
            attempts,
            ok: result.is_ok(),
        });
        result
    }

    fn post_with_retry(
        &self,
        transport: &dyn Transport,
        endpoint: &str,
        body: &Value,
    ) -> (Result<Value, GatewayError>, usize) {
        let url = format!("{}{}", self.config.base_url.trim_end_matches('/'), endpoint);
        let bearer = (!self.config.api_key.is_empty()).then(|| self.config.api_key.expose());
        let timeout = Duration::from_secs_f64(self.config.timeout_s);
        let max_attempts = self.config.max_retries + 1;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let outcome = match transport.post_json(&url, bearer, body, timeout) {
                Err(TransportError::Timeout) => Err(GatewayError::Timeout),
                Err(TransportError::Io(e)) => Err(GatewayError::Transport(e)),
                Ok(reply) if (200..300).contains(&reply.status) => {
                    serde_json::from_str(&reply.body)
                        .map_err(|e| GatewayError::Decode(e.to_string()))
                }
                Ok(reply) => Err(GatewayError::Status {
                    status: reply.status,
                    body: truncate(&reply.body, 512),
                }),
            };
            match outcome {
                Err(e) if e.is_retryable() && attempt < max_attempts => {
                    log::warn!("gateway {endpoint} attempt {attempt} failed: {e}; retrying");
                    let delay = self
                        .config
                        .backoff_ms
                        .saturating_mul(1 << (attempt - 1).min(16));
                    if delay > 0 {
                        std::thread::sleep(Duration::from_millis(delay));
                    }
                }
                other => return (other, attempt),
            }
        }
    }
}

fn truncate(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use std::collections::VecDeque;
    use std::sync::atomic::AtomicUsize;
    use std::sync::Arc;

    use super::*;
    use crate::gateway::{HttpReply, Message, Part, Secret};

    struct Scripted {
        replies: Mutex<VecDeque<Result<HttpReply, TransportError>>>,
        calls: Arc<AtomicUsize>,
        auth: Arc<Mutex<Vec<Option<String>>>>,
    }

    impl Scripted {
        fn new(replies: Vec<Result<HttpReply, TransportError>>) -> (Self, Arc<AtomicUsize>) {
            let calls = Arc::new(AtomicUsize::new(0));
            let s = Self {
                replies: Mutex::new(replies.into()),
                calls: calls.clone(),
                auth: Arc::new(Mutex::new(Vec::new())),
            };
            (s, calls)
        }
    }

    impl Transport for Scripted {
        fn post_json(
            &self,
            _url: &str,
            bearer: Option<&str>,
            _body: &Value,
            _t: Duration,
        ) -> Result<HttpReply, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.auth.lock().unwrap().push(bearer.map(str::to_string));
            self.replies
                .lock()
                .unwrap()
                .pop_front()
                .expect("script exhausted")
        }
    }

    struct Unreachable;

    impl Transport for Unreachable {
        fn post_json(
            &self,
            _: &str,
            _: Option<&str>,
            _: &Value,
            _: Duration,
        ) -> Result<HttpReply, TransportError> {
            panic!("replay must not touch the transport");
        }
    }

    fn reply(status: u16, body: &str) -> Result<HttpReply, TransportError> {
        Ok(HttpReply {
            status,
            body: body.to_string(),
        })
    }

    fn live_config() -> GatewayConfig {
        GatewayConfig {
            mode: GatewayMode::Live,
            backoff_ms: 0,
            api_key: Secret::new("sk-very-secret"),
            ..GatewayConfig::default()
        }
    }

    fn hello() -> ChatRequest {
        ChatRequest::new(vec![Message::user(vec![Part::text("hello")])], 0.3)
    }

    const OK_CHAT: &str = r#"{"text":"hi","usage":{"prompt_tokens":3,"completion_tokens":1}}"#;

    #[test]
    fn retries_server_errors_then_succeeds() {
        let (t, calls) = Scripted::new(vec![
            reply(500, "boom"),
            reply(502, "boom"),
            reply(200, OK_CHAT),
        ]);
        let gw = Gateway::new(live_config(), Backend::Http(Box::new(t))).unwrap();
        let resp = gw.chat(&hello()).unwrap();
        assert_eq!(resp.text, "hi");
        assert_eq!(resp.usage.prompt_tokens, 3);
        assert_eq!(calls.load(Ordering::SeqCst), 3);
        assert_eq!(gw.call_log()[0].attempts, 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (t, calls) = Scripted::new(vec![reply(401, "nope"), reply(200, OK_CHAT)]);
        let gw = Gateway::new(live_config(), Backend::Http(Box::new(t))).unwrap();
        match gw.chat(&hello()) {
            Err(GatewayError::Status { status: 401, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn retries_are_bounded() {
        let (t, calls) = Scripted::new(vec![
            Err(TransportError::Timeout),
            reply(503, ""),
            reply(503, ""),
            reply(200, OK_CHAT),
        ]);
        let gw = Gateway::new(live_config(), Backend::Http(Box::new(t))).unwrap();
        assert!(matches!(
            gw.chat(&hello()),
            Err(GatewayError::Status { status: 503, .. })
        ));
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn bearer_sent_but_never_logged() {
        let (t, _) = Scripted::new(vec![reply(200, OK_CHAT)]);
        let auth = t.auth.clone();
        let gw = Gateway::new(live_config(), Backend::Http(Box::new(t))).unwrap();
        gw.chat(&hello()).unwrap();
        assert_eq!(auth.lock().unwrap()[0].as_deref(), Some("sk-very-secret"));
        let dumped = format!("{:?} {:?}", gw.call_log(), gw.config());
        assert!(!dumped.contains("sk-very-secret"));
        assert!(!serde_json::to_string(gw.config())
            .unwrap()
            .contains("sk-very-secret"));
    }

    #[test]
    fn record_then_replay_offline() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cassette.json");
        let (t, _) = Scripted::new(vec![
            reply(200, OK_CHAT),
            reply(200, r#"{"vectors":[[3.0,4.0]]}"#),
        ]);
        let record = GatewayConfig {
            mode: GatewayMode::Record,
            cassette: Some(path.clone()),
            ..live_config()
        };
        let gw = Gateway::new(record.clone(), Backend::Http(Box::new(t))).unwrap();
        let a = gw.chat(&hello()).unwrap();
        let e = gw.embed(&["x".to_string()]).unwrap();
        assert_eq!(e, vec![vec![0.6, 0.8]]);

        let replay = GatewayConfig {
            mode: GatewayMode::Replay,
            ..record
        };
        let gw = Gateway::new(replay, Backend::Http(Box::new(Unreachable))).unwrap();
        assert_eq!(gw.chat(&hello()).unwrap(), a);
        assert_eq!(gw.embed(&["x".to_string()]).unwrap(), e);
        let other = ChatRequest::new(vec![Message::user(vec![Part::text("other")])], 0.3);
        assert!(matches!(gw.chat(&other), Err(GatewayError::ReplayMiss(_))));
    }

    #[test]
    fn replay_requires_existing_cassette() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GatewayConfig {
            mode: GatewayMode::Replay,
            cassette: Some(dir.path().join("missing.json")),
            ..GatewayConfig::default()
        };
        assert!(matches!(
            Gateway::new(cfg, Backend::None),
            Err(GatewayError::Cassette { .. })
        ));
    }

    #[test]
    fn embed_dimension_mismatch() {
        let (t, _) = Scripted::new(vec![reply(200, r#"{"vectors":[[1.0,0.0],[1.0]]}"#)]);
        let gw = Gateway::new(live_config(), Backend::Http(Box::new(t))).unwrap();
        let r = gw.embed(&["a".to_string(), "b".to_string()]);
        assert!(matches!(r, Err(GatewayError::DimensionMismatch(2, 1))));
    }

    #[test]
    fn request_preconditions() {
        let gw = Gateway::mock(MockBackend::with_responder(|_| Ok("x".into())));
        assert!(matches!(
            gw.chat(&ChatRequest::new(vec![Message::user(vec![])], 0.3)),
            Err(GatewayError::Precondition(_))
        ));
        let hot = ChatRequest::new(vec![Message::user(vec![Part::text("a")])], 2.5);
        assert!(matches!(gw.chat(&hot), Err(GatewayError::Precondition(_))));
        assert!(matches!(gw.embed(&[]), Err(GatewayError::Precondition(_))));
        assert!(matches!(
            gw.generate_image(" ", None),
            Err(GatewayError::Precondition(_))
        ));
        assert_eq!(gw.call_count(), 0);
    }

    #[test]
    fn mock_templates_and_determinism() {
        let mut mock = MockBackend::new();
        mock.register(hello().text_hash(), "templated");
        let gw = Gateway::mock(mock);
        assert_eq!(gw.chat(&hello()).unwrap().text, "templated");
        let other = ChatRequest::new(vec![Message::user(vec![Part::text("zzz")])], 0.3);
        assert!(matches!(
            gw.chat(&other),
            Err(GatewayError::MockUnhandled(_))
        ));

        let a = gw
            .embed(&["red poster".to_string(), "blue".to_string()])
            .unwrap();
        let b = gw.embed(&["red poster".to_string()]).unwrap();
        assert_eq!(a[0], b[0]);
        assert_ne!(a[0], a[1]);
        assert_eq!(a[0].len(), 64);
        assert!((a[0].iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);

        let png = gw.generate_image("plan", None).unwrap();
        assert_eq!(png, gw.generate_image("plan", Some(&[1, 2, 3])).unwrap());
        let img = image::load_from_memory(&png).unwrap();
        assert_eq!((img.width(), img.height()), (64, 64));
        let log = gw.call_log();
        assert_eq!(log.len(), 6);
        assert!(log.windows(2).all(|w| w[0].index < w[1].index));
    }

    #[test]
    fn in_flight_cap_is_respected() {
        struct Slow {
            now: AtomicUsize,
            peak: AtomicUsize,
        }
        impl Transport for Slow {
            fn post_json(
                &self,
                _: &str,
                _: Option<&str>,
                _: &Value,
                _: Duration,
            ) -> Result<HttpReply, TransportError> {
                let n = self.now.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(n, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(20));
                self.now.fetch_sub(1, Ordering::SeqCst);
                Ok(HttpReply {
                    status: 200,
                    body: OK_CHAT.into(),
                })
            }
        }
        let slow = Arc::new(Slow {
            now: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        struct Shared(Arc<Slow>);
        impl Transport for Shared {
            fn post_json(
                &self,
                u: &str,
                b: Option<&str>,
                v: &Value,
                t: Duration,
            ) -> Result<HttpReply, TransportError> {
                self.0.post_json(u, b, v, t)
            }
        }
        let cfg = GatewayConfig {
            max_in_flight: 2,
            ..live_config()
        };
        let gw = Gateway::new(cfg, Backend::Http(Box::new(Shared(slow.clone())))).unwrap();
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| gw.chat(&hello()).unwrap());
            }
        });
        assert!(slow.peak.load(Ordering::SeqCst) <= 2);
        assert_eq!(gw.call_count(), 8);
    }

    #[test]
    fn mode_backend_mismatch() {
        assert!(Gateway::new(live_config(), Backend::Mock(MockBackend::new())).is_err());
        assert!(Gateway::new(GatewayConfig::default(), Backend::None).is_err());
    }
}
