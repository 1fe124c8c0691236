//! Line-delimited JSON protocol exposing an environment to external agents.
//!
//! Each request line `{"op": ..., "seed"?: ..., "action"?: [...]}` gets exactly
//! one response line `{"ok", "obs", "reward", "done", "mask", "info", "error"?}`.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::env::{Action, Observation, VppEnv, N_ACTION_VALUES};
use crate::error::{Result, VppError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub op: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<Vec<i64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub ok: bool,
    pub obs: Option<Observation>,
    pub reward: Option<f64>,
    pub done: Option<bool>,
    pub mask: Option<Vec<[bool; N_ACTION_VALUES]>>,
    pub info: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Response {
    fn empty() -> Self {
        Self {
            ok: true,
            obs: None,
            reward: None,
            done: None,
            mask: None,
            info: None,
            error: None,
        }
    }

    pub fn failure(message: impl Into<String>) -> Self {
        Self {
            ok: false,
            error: Some(message.into()),
            ..Self::empty()
        }
    }
}

/// Protocol state for one connection.
pub struct Session {
    env: VppEnv,
    closed: bool,
}

impl Session {
    pub fn new(env: VppEnv) -> Self {
        Self { env, closed: false }
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn env(&self) -> &VppEnv {
        &self.env
    }

    /// Handles one raw request line.
    pub fn handle_line(&mut self, line: &str) -> Response {
        match serde_json::from_str::<Request>(line) {
            Ok(req) => self.handle(&req),
            Err(e) => Response::failure(format!("malformed request: {e}")),
        }
    }

    pub fn handle(&mut self, req: &Request) -> Response {
        match self.dispatch(req) {
            Ok(r) => r,
            Err(e) => Response::failure(e.to_string()),
        }
    }

    fn mask(&self) -> Option<Vec<[bool; N_ACTION_VALUES]>> {
        self.env.action_mask().map(|m| m.0)
    }

    fn dispatch(&mut self, req: &Request) -> Result<Response> {
        match req.op.as_str() {
            "spec" => Ok(Response {
                info: Some(self.spec_info()?),
                ..Response::empty()
            }),
            "reset" => {
                let obs = self.env.reset(req.seed.unwrap_or(0))?;
                Ok(Response {
                    obs: Some(obs),
                    done: Some(false),
                    mask: self.mask(),
                    info: Some(json!({ "t": 0 })),
                    ..Response::empty()
                })
            }
            "step" => {
                let raw = req
                    .action
                    .as_ref()
                    .ok_or_else(|| VppError::Argument("step needs an action".into()))?;
                let codes = raw
                    .iter()
                    .map(|&c| u8::try_from(c).map_err(|_| VppError::Argument(format!("action code {c} not in {{0,1,2}}"))))
                    .collect::<Result<Vec<u8>>>()?;
                let action = Action::from_codes(&codes)?;
                let r = self.env.step(&action)?;
                Ok(Response {
                    obs: Some(r.observation),
                    reward: Some(r.reward),
                    done: Some(r.done),
                    mask: self.mask(),
                    info: Some(serde_json::to_value(&r.info).map_err(|e| VppError::Parse(e.to_string()))?),
                    ..Response::empty()
                })
            }
            "mask" => {
                let mask = self
                    .mask()
                    .ok_or_else(|| VppError::Lifecycle("mask requested before reset".into()))?;
                Ok(Response {
                    mask: Some(mask),
                    done: Some(self.env.is_done()),
                    ..Response::empty()
                })
            }
            "close" => {
                self.closed = true;
                Ok(Response::empty())
            }
            other => Err(VppError::Argument(format!("unknown op '{other}'"))),
        }
    }

    fn spec_info(&self) -> Result<Value> {
        let cfg = self.env.config();
        let n = cfg.n_stations;
        let to_value = |v: serde_json::Result<Value>| v.map_err(|e| VppError::Parse(e.to_string()));
        Ok(json!({
            "action_space": vec![N_ACTION_VALUES; n],
            "observation_space": {
                "ev_power": { "shape": [1], "unit": "kW" },
                "total_load": { "shape": [1], "unit": "kW" },
                "available_energies": { "shape": [n], "low": 0.0, "high": cfg.ev_capacity, "unit": "kWh" },
            },
            "horizon": cfg.horizon,
            "env_config": to_value(serde_json::to_value(cfg))?,
            "event_config": to_value(serde_json::to_value(self.env.event_config()))?,
            "noise": to_value(serde_json::to_value(self.env.noise()))?,
        }))
    }
}

/// Serves one session over a reader/writer pair until `close` or end of input.
pub fn serve<R: BufRead, W: Write>(env: VppEnv, reader: R, mut writer: W) -> Result<()> {
    let mut session = Session::new(env);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = session.handle_line(&line);
        serde_json::to_writer(&mut writer, &resp).map_err(|e| VppError::Parse(e.to_string()))?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        if session.is_closed() {
            break;
        }
    }
    Ok(())
}

pub type EnvFactory = Arc<dyn Fn() -> Result<VppEnv> + Send + Sync>;

fn handle_connection(stream: TcpStream, factory: &EnvFactory) -> Result<()> {
    let env = factory()?;
    let reader = BufReader::new(stream.try_clone()?);
    serve(env, reader, stream)
}

/// Accepts connections on `listener`, one thread and one environment each.
/// Stops after `max_connections` connections when given.
pub fn serve_tcp(listener: TcpListener, factory: EnvFactory, max_connections: Option<usize>) -> Result<()> {
    let mut handles = Vec::new();
    for (i, stream) in listener.incoming().enumerate() {
        let stream = stream?;
        let factory = Arc::clone(&factory);
        handles.push(thread::spawn(move || handle_connection(stream, &factory)));
        if max_connections.is_some_and(|m| i + 1 >= m) {
            break;
        }
    }
    for h in handles {
        h.join()
            .map_err(|_| VppError::Io(std::io::Error::other("session thread panicked")))??;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::events::EventConfig;
    use crate::timeseries::{synthesize_scenario, NoiseSpec, SynthConfig};

    fn env() -> VppEnv {
        let steps = 50;
        let data = synthesize_scenario(1, &SynthConfig { steps, ..SynthConfig::default() }).unwrap();
        VppEnv::new(
            Arc::new(data),
            EventConfig { weekly_arrivals: 100, ..EventConfig::default() },
            EnvConfig { horizon: steps, ..EnvConfig::default() },
            NoiseSpec::default(),
        )
        .unwrap()
    }

    #[test]
    fn spec_reports_action_space() {
        let mut s = Session::new(env());
        let r = s.handle_line(r#"{"op":"spec"}"#);
        assert!(r.ok);
        assert_eq!(r.info.unwrap()["action_space"], json!([3, 3, 3, 3]));
    }

    #[test]
    fn step_before_reset_is_error() {
        let mut s = Session::new(env());
        let r = s.handle_line(r#"{"op":"step","action":[0,0,0,0]}"#);
        assert!(!r.ok);
        assert!(r.error.is_some());
    }

    #[test]
    fn malformed_lines_keep_session_alive() {
        let mut s = Session::new(env());
        assert!(!s.handle_line("not json").ok);
        assert!(!s.handle_line(r#"{"op":"fly"}"#).ok);
        assert!(s.handle_line(r#"{"op":"reset","seed":3}"#).ok);
        assert!(!s.handle_line(r#"{"op":"step","action":[0,0,0]}"#).ok);
        assert!(!s.handle_line(r#"{"op":"step","action":[0,0,0,-1]}"#).ok);
        assert!(s.handle_line(r#"{"op":"step","action":[0,0,0,0]}"#).ok);
    }

    #[test]
    fn after_done_only_reset_spec_close() {
        let mut s = Session::new(env());
        s.handle_line(r#"{"op":"reset","seed":1}"#);
        let mut last = None;
        for _ in 0..49 {
            last = Some(s.handle_line(r#"{"op":"step","action":[0,0,0,0]}"#));
        }
        assert_eq!(last.unwrap().done, Some(true));
        assert!(!s.handle_line(r#"{"op":"step","action":[0,0,0,0]}"#).ok);
        assert!(s.handle_line(r#"{"op":"spec"}"#).ok);
        assert!(s.handle_line(r#"{"op":"reset","seed":1}"#).ok);
        assert!(s.handle_line(r#"{"op":"close"}"#).ok);
        assert!(s.is_closed());
    }

    #[test]
    fn serve_writes_one_line_per_request() {
        let input = b"{\"op\":\"spec\"}\n{\"op\":\"reset\",\"seed\":2}\n\n{\"op\":\"close\"}\n{\"op\":\"spec\"}\n";
        let mut out = Vec::new();
        serve(env(), &input[..], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 3);
        let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert!(first.get("error").is_none());
        assert!(first["obs"].is_null());
    }
}
