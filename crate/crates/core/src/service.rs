//! Conversion sessions over a frozen model, and the JSON request protocol shared by
//! the TCP and HTTP front ends.
//!
//! A session holds the last committed utterance as context. `convert` reads it,
//! `commit` replaces it. Sessions idle for longer than the TTL disappear.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::decode::{search_model, SearchOptions};
use crate::model::{ModelError, P2CModel, Variant};
use crate::pinyin::{segment_input, Lexicon, PinyinError, PinyinForm};

pub const DEFAULT_BEAM: usize = 8;
pub const DEFAULT_K: usize = 10;
pub const MAX_BEAM: usize = 64;

/// Time since some fixed origin.
pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
}

pub struct SystemClock(Instant);

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock(Instant::now())
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.0.elapsed()
    }
}

/// A clock that only moves when told to.
#[derive(Clone, Default)]
pub struct ManualClock(Arc<AtomicU64>);

impl ManualClock {
    pub fn advance(&self, by: Duration) {
        self.0.fetch_add(by.as_millis() as u64, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Duration {
        Duration::from_millis(self.0.load(Ordering::SeqCst))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("no session {0:?}")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("cannot segment {input:?} at offset {offset}")]
    Unsegmentable { input: String, offset: usize },
    #[error("{0}")]
    Unsupported(String),
    #[error("attention needs a committed context")]
    EmptyContext,
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "not_found",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::Unsegmentable { .. } => "unsegmentable",
            ServiceError::Unsupported(_) => "unsupported",
            ServiceError::EmptyContext => "empty_context",
            ServiceError::Internal(_) => "internal",
        }
    }

    fn to_json(&self) -> Value {
        let mut v = json!({"ok": false, "error": self.code(), "message": self.to_string()});
        if let ServiceError::Unsegmentable { offset, .. } = self {
            v["offset"] = json!(offset);
        }
        v
    }
}

impl From<PinyinError> for ServiceError {
    fn from(e: PinyinError) -> Self {
        match e {
            PinyinError::Unsegmentable { input, offset } => ServiceError::Unsegmentable { input, offset },
            other => ServiceError::BadRequest(other.to_string()),
        }
    }
}

impl From<ModelError> for ServiceError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Unsupported { .. } => ServiceError::Unsupported(e.to_string()),
            other => ServiceError::Internal(other.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    /// Pinyin the user typed for this utterance, if the client reported it.
    pub pinyin: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Session {
    pub id: String,
    /// Tokens of the last committed utterance.
    pub context: Vec<String>,
    pub history: Vec<HistoryEntry>,
    pub created_ms: u64,
    pub last_active_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankedText {
    pub rank: usize,
    pub text: String,
    pub tokens: Vec<String>,
    pub logprob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Conversion {
    pub pinyin: Vec<String>,
    pub form: &'static str,
    pub context: String,
    pub candidates: Vec<RankedText>,
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttentionTrace {
    pub pinyin: Vec<String>,
    pub context: Vec<String>,
    /// One `[pinyin][context]` matrix per hop.
    pub hops: Vec<Vec<Vec<f64>>>,
}

fn form_name(f: PinyinForm) -> &'static str {
    match f {
        PinyinForm::Complete => "complete",
        PinyinForm::Abbreviated => "abbreviated",
        PinyinForm::Prefix => "prefix",
    }
}

fn to_value<T: Serialize>(v: T) -> Value {
    serde_json::to_value(v).expect("plain data serializes")
}

fn ms(d: Duration) -> u64 {
    d.as_millis() as u64
}

pub struct Service {
    model: Arc<P2CModel>,
    lexicon: Lexicon,
    ttl: Duration,
    clock: Arc<dyn Clock>,
    next_id: AtomicU64,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
}

impl Service {
    pub fn new(model: Arc<P2CModel>, lexicon: Lexicon, ttl: Duration) -> Self {
        Self::with_clock(model, lexicon, ttl, Arc::new(SystemClock::default()))
    }

    pub fn with_clock(model: Arc<P2CModel>, lexicon: Lexicon, ttl: Duration, clock: Arc<dyn Clock>) -> Self {
        Service {
            model,
            lexicon,
            ttl,
            clock,
            next_id: AtomicU64::new(1),
            sessions: Mutex::new(HashMap::new()),
        }
    }

    pub fn model(&self) -> &P2CModel {
        &self.model
    }

    fn expired(&self, s: &Session, now: Duration) -> bool {
        now.saturating_sub(Duration::from_millis(s.last_active_ms)) > self.ttl
    }

    fn sweep(&self, table: &mut HashMap<String, Arc<Mutex<Session>>>, now: Duration) {
        table.retain(|_, s| !self.expired(&s.lock().unwrap(), now));
    }

    /// Runs `f` on a live session with that session locked. The table lock is released
    /// first, so other sessions are not blocked.
    fn with_session<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> Result<T, ServiceError>) -> Result<T, ServiceError> {
        let now = self.clock.now();
        let slot = {
            let mut table = self.sessions.lock().unwrap();
            let slot = table.get(id).cloned().ok_or_else(|| ServiceError::NotFound(id.into()))?;
            if self.expired(&slot.lock().unwrap(), now) {
                table.remove(id);
                return Err(ServiceError::NotFound(id.into()));
            }
            slot
        };
        let mut s = slot.lock().unwrap();
        s.last_active_ms = ms(now);
        f(&mut s)
    }

    pub fn open(&self) -> Session {
        let now = self.clock.now();
        let n = self.next_id.fetch_add(1, Ordering::SeqCst);
        let s = Session {
            id: format!("s{n}"),
            context: Vec::new(),
            history: Vec::new(),
            created_ms: ms(now),
            last_active_ms: ms(now),
        };
        let mut table = self.sessions.lock().unwrap();
        self.sweep(&mut table, now);
        table.insert(s.id.clone(), Arc::new(Mutex::new(s.clone())));
        s
    }

    pub fn close(&self, id: &str) -> Result<(), ServiceError> {
        let now = self.clock.now();
        let mut table = self.sessions.lock().unwrap();
        match table.remove(id) {
            Some(s) if !self.expired(&s.lock().unwrap(), now) => Ok(()),
            _ => Err(ServiceError::NotFound(id.into())),
        }
    }

    pub fn session_count(&self) -> usize {
        let mut table = self.sessions.lock().unwrap();
        self.sweep(&mut table, self.clock.now());
        table.len()
    }

    /// Conversion with an explicit context, independent of any session.
    pub fn convert_with_context(&self, context: &[String], raw: &str, beam: usize, k: usize) -> Result<Conversion, ServiceError> {
        if k == 0 || beam == 0 || beam > MAX_BEAM || k > MAX_BEAM {
            return Err(ServiceError::BadRequest(format!("need 1 <= k, beam <= {MAX_BEAM}")));
        }
        let py = segment_input(raw, &self.lexicon)?;
        let m = &*self.model;
        let ctx_ids = m.target_vocab.encode(context);
        let py_ids = m.pinyin_vocab.encode(&py.tokens);
        let list = search_model(m, &ctx_ids, &py_ids, SearchOptions::new(beam.max(k), k, py_ids.len())).map_err(|e| ServiceError::Internal(e.to_string()))?;
        let candidates = list
            .items
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let tokens = m.target_vocab.decode(&c.tokens);
                RankedText {
                    rank: i + 1,
                    text: m.granularity.join(&tokens),
                    tokens,
                    logprob: c.log_prob,
                }
            })
            .collect();
        Ok(Conversion {
            pinyin: py.tokens,
            form: form_name(py.form),
            context: m.granularity.join(context),
            candidates,
            truncated: list.truncated,
        })
    }

    pub fn convert(&self, id: &str, raw: &str, beam: usize, k: usize) -> Result<Conversion, ServiceError> {
        let context = self.with_session(id, |s| Ok(s.context.clone()))?;
        self.convert_with_context(&context, raw, beam, k)
    }

    pub fn commit(&self, id: &str, text: &str, pinyin: Option<&str>) -> Result<Session, ServiceError> {
        let tokens = self.model.granularity.tokenize(text);
        if tokens.is_empty() {
            return Err(ServiceError::BadRequest("empty commit text".into()));
        }
        self.with_session(id, |s| {
            s.context = tokens;
            s.history.push(HistoryEntry {
                pinyin: pinyin.unwrap_or_default().to_string(),
                text: text.to_string(),
            });
            Ok(s.clone())
        })
    }

    pub fn attention(&self, id: &str, raw: &str) -> Result<AttentionTrace, ServiceError> {
        if self.model.variant() != Variant::Gated {
            return Err(ServiceError::Unsupported(format!("attention needs a gated model, loaded model is {}", self.model.variant())));
        }
        let context = self.with_session(id, |s| Ok(s.context.clone()))?;
        if context.is_empty() {
            return Err(ServiceError::EmptyContext);
        }
        let py = segment_input(raw, &self.lexicon)?;
        let m = &*self.model;
        let trace = m.attention_trace(&m.target_vocab.encode(&context), &m.pinyin_vocab.encode(&py.tokens))?;
        let hops = trace
            .iter()
            .map(|t| (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect())
            .collect();
        Ok(AttentionTrace {
            pinyin: py.tokens,
            context,
            hops,
        })
    }

    pub fn dump(&self, id: &str) -> Result<Session, ServiceError> {
        self.with_session(id, |s| Ok(s.clone()))
    }

    /// Plays `history` through a fresh session: before each commit, converts its
    /// pinyin (when recorded) and collects the candidate list. The session is closed
    /// afterwards.
    pub fn replay(&self, history: &[HistoryEntry], beam: usize, k: usize) -> Result<Vec<Conversion>, ServiceError> {
        let s = self.open();
        let run = || -> Result<Vec<Conversion>, ServiceError> {
            let mut out = Vec::new();
            for h in history {
                if !h.pinyin.trim().is_empty() {
                    out.push(self.convert(&s.id, &h.pinyin, beam, k)?);
                }
                self.commit(&s.id, &h.text, Some(&h.pinyin))?;
            }
            Ok(out)
        };
        let result = run();
        let _ = self.close(&s.id);
        result
    }

    pub fn handle(&self, req: Request) -> Result<Value, ServiceError> {
        Ok(match req {
            Request::Open => json!({"session": self.open()}),
            Request::Close { session } => {
                self.close(&session)?;
                json!({})
            }
            Request::Convert { session, pinyin, beam, k } => to_value(self.convert(&session, &pinyin, beam.unwrap_or(DEFAULT_BEAM), k.unwrap_or(DEFAULT_K))?),
            Request::Commit { session, text, pinyin } => json!({"session": self.commit(&session, &text, pinyin.as_deref())?}),
            Request::Attention { session, pinyin } => to_value(self.attention(&session, &pinyin)?),
            Request::Dump { session } => json!({"session": self.dump(&session)?}),
        })
    }

    /// One JSON request in, one JSON response out. Never fails: errors become
    /// `{"ok":false,...}` objects.
    pub fn handle_json(&self, text: &str) -> Value {
        let result = serde_json::from_str::<Request>(text)
            .map_err(|e| ServiceError::BadRequest(format!("bad request: {e}")))
            .and_then(|req| self.handle(req));
        match result {
            Ok(mut payload) => {
                let mut out = json!({"ok": true});
                if let Value::Object(map) = &mut payload {
                    out.as_object_mut().unwrap().append(map);
                }
                out
            }
            Err(e) => e.to_json(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
pub enum Request {
    Open,
    Close {
        session: String,
    },
    Convert {
        session: String,
        pinyin: String,
        #[serde(default)]
        beam: Option<usize>,
        #[serde(default)]
        k: Option<usize>,
    },
    Commit {
        session: String,
        text: String,
        #[serde(default)]
        pinyin: Option<String>,
    },
    Attention {
        session: String,
        pinyin: String,
    },
    Dump {
        session: String,
    },
}
