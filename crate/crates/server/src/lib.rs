//! Newline-delimited JSON protocol over TCP for driving environments from
//! other processes.
//!
//! Each request is one line `{"id": <int>, "op": <name>, "payload": {...}}`
//! and gets exactly one response line `{"id", "ok", "payload" | "error"}`.
//! Environments belong to the connection that made them and die with it.

use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::Deserialize;
use serde_json::{json, Value};
use wireframe_core::{
    ActionMode, ActionVector, Detection, Env, EnvConfig, EnvError, Observation, RewardConfig,
    RewardScheme, StepResult, ACTION_ARITIES, STATE_SIZE,
};

pub const PROTOCOL_VERSION: &str = "1";
pub const DEFAULT_PORT: u16 = 7878;
pub const ENV_ID: &str = "WireframeReconstruction-v1";

/// Error codes carried in the `error` field of failed responses.
pub mod codes {
    pub const UNKNOWN_OP: &str = "unknown_op";
    pub const NO_SUCH_ENV: &str = "no_such_env";
    pub const BAD_ACTION: &str = "bad_action";
    pub const BAD_PAYLOAD: &str = "bad_payload";
    pub const ENV_ERROR: &str = "env_error";
    pub const MALFORMED: &str = "malformed";
    pub const BUSY: &str = "server_busy";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsFormat {
    /// 60x60x3 bytes, row-major RGB.
    #[default]
    Rgb,
    /// 60x60 bytes of palette indices 0-4.
    Palette,
}

impl ObsFormat {
    fn shape(self) -> Vec<usize> {
        let n = STATE_SIZE as usize;
        match self {
            ObsFormat::Rgb => vec![n, n, 3],
            ObsFormat::Palette => vec![n, n],
        }
    }

    pub fn encode(self, obs: &Observation) -> String {
        match self {
            ObsFormat::Rgb => BASE64.encode(obs.rgb8()),
            ObsFormat::Palette => BASE64.encode(obs.palette_indices()),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvPatch {
    mode: Option<ActionMode>,
    detection: Option<Detection>,
    n_edges: Option<usize>,
    max_steps: Option<u32>,
    success_threshold: Option<f64>,
    max_failed_episodes: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RewardPatch {
    scheme: Option<RewardScheme>,
    mu: Option<f64>,
    d_t: Option<f64>,
    gamma: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MakePayload {
    #[serde(default)]
    env: EnvPatch,
    #[serde(default)]
    reward: RewardPatch,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    obs_format: ObsFormat,
}

impl MakePayload {
    fn configs(&self) -> (EnvConfig, RewardConfig) {
        let mut env = EnvConfig::default();
        let p = &self.env;
        env.mode = p.mode.unwrap_or(env.mode);
        env.detection = p.detection.unwrap_or(env.detection);
        env.n_edges = p.n_edges.unwrap_or(env.n_edges);
        env.max_steps = p.max_steps.unwrap_or(env.max_steps);
        env.success_threshold = p.success_threshold.unwrap_or(env.success_threshold);
        env.max_failed_episodes = p.max_failed_episodes.unwrap_or(env.max_failed_episodes);
        let mut reward = RewardConfig::default();
        let r = &self.reward;
        reward.scheme = r.scheme.unwrap_or(reward.scheme);
        reward.mu = r.mu.unwrap_or(reward.mu);
        reward.d_t = r.d_t.unwrap_or(reward.d_t);
        reward.gamma = r.gamma.unwrap_or(reward.gamma);
        (env, reward)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvRef {
    env_id: u64,
    #[serde(default)]
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepPayload {
    env_id: u64,
    action: Value,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CloseEnv {
    #[serde(default)]
    env_id: Option<u64>,
}

/// A failed request: error code plus human-readable detail.
#[derive(Debug, Clone, PartialEq)]
pub struct OpError {
    pub code: &'static str,
    pub message: String,
}

impl OpError {
    fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<EnvError> for OpError {
    fn from(e: EnvError) -> Self {
        OpError::new(codes::ENV_ERROR, e.to_string())
    }
}

fn payload_of<T: for<'de> Deserialize<'de>>(payload: Value) -> Result<T, OpError> {
    serde_json::from_value(payload).map_err(|e| OpError::new(codes::BAD_PAYLOAD, e.to_string()))
}

/// Parses a wire action: five non-negative integers within the component
/// arities, ternary `{0, 1, 2}` meaning `{-1, 0, +1}`.
pub fn parse_action(value: &Value) -> Result<ActionVector, OpError> {
    let items = value
        .as_array()
        .ok_or_else(|| OpError::new(codes::BAD_ACTION, "action must be an array"))?;
    if items.len() != ACTION_ARITIES.len() {
        return Err(OpError::new(
            codes::BAD_ACTION,
            format!(
                "expected {} action components, got {}",
                ACTION_ARITIES.len(),
                items.len()
            ),
        ));
    }
    let idx = items
        .iter()
        .map(|v| v.as_u64().map(|u| u as usize))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| {
            OpError::new(
                codes::BAD_ACTION,
                "action components must be non-negative integers",
            )
        })?;
    ActionVector::from_indices(&idx).map_err(|e| OpError::new(codes::BAD_ACTION, e.to_string()))
}

struct SessionEnv {
    env: Env,
    format: ObsFormat,
}

/// Environments owned by one connection.
pub struct Session {
    envs: BTreeMap<u64, SessionEnv>,
    ids: Arc<AtomicU64>,
}

/// What the connection should do after a request.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Reply(Value),
    /// Reply, then end the session.
    Close(Value),
}

fn step_json(format: ObsFormat, r: &StepResult) -> Value {
    json!({
        "observation": format.encode(&r.observation),
        "reward": r.reward,
        "terminated": r.terminated,
        "truncated": r.truncated,
        "info": r.info,
    })
}

impl Session {
    pub fn new(ids: Arc<AtomicU64>) -> Self {
        Self {
            envs: BTreeMap::new(),
            ids,
        }
    }

    pub fn n_envs(&self) -> usize {
        self.envs.len()
    }

    fn env(&mut self, id: u64) -> Result<&mut SessionEnv, OpError> {
        self.envs.get_mut(&id).ok_or_else(|| {
            OpError::new(
                codes::NO_SUCH_ENV,
                format!("no environment {id} in this session"),
            )
        })
    }

    /// Executes one operation; `Ok` holds the success payload.
    pub fn dispatch(&mut self, op: &str, payload: Value) -> Result<(Value, bool), OpError> {
        let payload = if payload.is_null() {
            json!({})
        } else {
            payload
        };
        match op {
            "hello" => Ok((
                json!({
                    "protocol_version": PROTOCOL_VERSION,
                    "env_id": ENV_ID,
                    "obs_shape": ObsFormat::Rgb.shape(),
                    "action_arities": ACTION_ARITIES,
                }),
                false,
            )),
            "make" => {
                let p: MakePayload = payload_of(payload)?;
                let (env_cfg, reward) = p.configs();
                let env = Env::new(env_cfg, reward, p.seed)
                    .map_err(|e| OpError::new(codes::BAD_PAYLOAD, e.to_string()))?;
                let id = self.ids.fetch_add(1, Ordering::Relaxed);
                let observation = p.obs_format.encode(&env.observation());
                self.envs.insert(
                    id,
                    SessionEnv {
                        env,
                        format: p.obs_format,
                    },
                );
                Ok((
                    json!({ "env_id": id, "obs_shape": p.obs_format.shape(), "observation": observation }),
                    false,
                ))
            }
            "reset" => {
                let p: EnvRef = payload_of(payload)?;
                let e = self.env(p.env_id)?;
                let obs = e.env.reset(p.seed)?;
                Ok((json!({ "observation": e.format.encode(&obs) }), false))
            }
            "step" => {
                let p: StepPayload = payload_of(payload)?;
                let e = self.env(p.env_id)?;
                let action = parse_action(&p.action)?;
                let r = e.env.step(action)?;
                Ok((step_json(e.format, &r), false))
            }
            "render" => {
                let p: EnvRef = payload_of(payload)?;
                let e = self.env(p.env_id)?;
                let obs = e.env.observation();
                Ok((
                    json!({ "observation": e.format.encode(&obs), "ascii": obs.to_ascii() }),
                    false,
                ))
            }
            "close" => {
                let p: CloseEnv = payload_of(payload)?;
                match p.env_id {
                    Some(id) => {
                        self.envs.remove(&id).ok_or_else(|| {
                            OpError::new(
                                codes::NO_SUCH_ENV,
                                format!("no environment {id} in this session"),
                            )
                        })?;
                        Ok((json!({ "closed": id }), false))
                    }
                    None => {
                        self.envs.clear();
                        Ok((json!({ "closed": "session" }), true))
                    }
                }
            }
            other => Err(OpError::new(
                codes::UNKNOWN_OP,
                format!("unknown op `{other}`"),
            )),
        }
    }

    /// Handles one request line.
    pub fn handle_line(&mut self, line: &str) -> Outcome {
        let malformed = |msg: String| {
            Outcome::Close(
                json!({ "id": null, "ok": false, "error": codes::MALFORMED, "message": msg }),
            )
        };
        let request: Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => return malformed(format!("invalid JSON: {e}")),
        };
        let Some(obj) = request.as_object() else {
            return malformed("request must be a JSON object".into());
        };
        let id = match obj.get("id") {
            Some(id) if id.is_i64() || id.is_u64() => id.clone(),
            _ => return malformed("request needs an integer `id`".into()),
        };
        let Some(op) = obj.get("op").and_then(Value::as_str) else {
            return malformed("request needs a string `op`".into());
        };
        let payload = obj.get("payload").cloned().unwrap_or(Value::Null);
        match self.dispatch(op, payload) {
            Ok((payload, close)) => {
                let reply = json!({ "id": id, "ok": true, "payload": payload });
                if close {
                    Outcome::Close(reply)
                } else {
                    Outcome::Reply(reply)
                }
            }
            Err(e) => Outcome::Reply(
                json!({ "id": id, "ok": false, "error": e.code, "message": e.message }),
            ),
        }
    }
}

fn write_line(w: &mut impl Write, v: &Value) -> io::Result<()> {
    serde_json::to_writer(&mut *w, v)?;
    w.write_all(b"\n")?;
    w.flush()
}

/// Serves one connection until it closes, errs, or sends malformed input.
pub fn run_session(stream: TcpStream, ids: Arc<AtomicU64>) -> io::Result<()> {
    let reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let mut session = Session::new(ids);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match session.handle_line(&line) {
            Outcome::Reply(v) => write_line(&mut writer, &v)?,
            Outcome::Close(v) => {
                write_line(&mut writer, &v)?;
                break;
            }
        }
    }
    Ok(())
}

/// A running server; dropping the handle does not stop it.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
    active: Arc<AtomicUsize>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn active_sessions(&self) -> usize {
        self.active.load(Ordering::SeqCst)
    }

    /// Stops accepting connections and waits for the accept loop to exit.
    /// Sessions already running finish on their own.
    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    /// Blocks until the accept loop ends.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

struct SessionGuard(Arc<AtomicUsize>);

impl Drop for SessionGuard {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

/// Binds `addr` and accepts connections on a background thread, one thread
/// per session. Connections beyond `max_sessions` get a `server_busy`
/// error frame and are closed.
pub fn serve(addr: impl ToSocketAddrs, max_sessions: usize) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let active = Arc::new(AtomicUsize::new(0));
    let ids = Arc::new(AtomicU64::new(1));
    let (stop2, active2) = (stop.clone(), active.clone());
    let thread = thread::spawn(move || {
        for conn in listener.incoming() {
            if stop2.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = conn else { continue };
            if active2.fetch_add(1, Ordering::SeqCst) >= max_sessions {
                active2.fetch_sub(1, Ordering::SeqCst);
                let mut w = &stream;
                let _ = write_line(
                    &mut w,
                    &json!({ "id": null, "ok": false, "error": codes::BUSY, "message": format!("at most {max_sessions} sessions") }),
                );
                continue;
            }
            let guard = SessionGuard(active2.clone());
            let ids = ids.clone();
            thread::spawn(move || {
                let _guard = guard;
                let _ = stream.set_nodelay(true);
                let _ = run_session(stream, ids);
            });
        }
    });
    Ok(ServerHandle {
        addr: local,
        stop,
        thread: Some(thread),
        active,
    })
}
