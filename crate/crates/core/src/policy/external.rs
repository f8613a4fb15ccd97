//! Child-process policy adapter.
//!
//! One message per line, a verb optionally followed by a JSON object:
//!
//! ```text
//! > reset {"task_hint":null,"prompt":[...],"max_steps":100}
//! < ok
//! > act {"state":[x,y],"rtg":g,"recent":[[rtg,s_x,s_y,a_x,a_y,a_stop],...]}
//! < action {"translate":[x,y],"stop":0}
//! > close
//! ```
//!
//! A reply that is late or malformed fails the episode. The child that
//! produced it is killed rather than returned to the pool.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::env::{Action, EnvConfig};
use crate::error::{Error, Result};
use crate::prompt::PromptLayout;

use super::{EpisodePolicy, Observation, PolicyProvider, RecentTransition, SurrogatePolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExternalPolicyConfig {
    /// Shell command line that starts the policy process.
    pub command: String,
    pub step_timeout_ms: u64,
    /// Upper bound on idle processes kept for reuse.
    pub max_idle: usize,
}

impl Default for ExternalPolicyConfig {
    fn default() -> Self {
        Self {
            command: String::new(),
            step_timeout_ms: 5_000,
            max_idle: 8,
        }
    }
}

#[derive(Serialize)]
struct ResetMsg<'a> {
    task_hint: Option<usize>,
    prompt: &'a [f64],
    max_steps: usize,
}

#[derive(Serialize, Deserialize)]
struct ActMsg {
    state: [f64; 2],
    rtg: f64,
    recent: Vec<RecentTransition>,
}

#[derive(Serialize, Deserialize)]
struct ActionMsg {
    translate: [f64; 2],
    stop: u8,
}

#[derive(Deserialize)]
struct ResetIn {
    prompt: Vec<f64>,
    #[allow(dead_code)]
    max_steps: Option<usize>,
}

struct Proc {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
}

impl Proc {
    fn spawn(command: &str) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::External(format!("spawning `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                match line {
                    Ok(l) => {
                        if tx.send(l).is_err() {
                            break;
                        }
                    }
                    Err(_) => break,
                }
            }
        });
        Ok(Self {
            child,
            stdin,
            lines: rx,
        })
    }

    fn send(&mut self, line: &str) -> Result<()> {
        writeln!(self.stdin, "{line}")
            .and_then(|_| self.stdin.flush())
            .map_err(|e| Error::External(format!("write failed: {e}")))
    }

    fn recv(&self, timeout: Duration) -> Result<String> {
        match self.lines.recv_timeout(timeout) {
            Ok(l) => Ok(l),
            Err(RecvTimeoutError::Timeout) => Err(Error::External(format!(
                "no reply within {} ms",
                timeout.as_millis()
            ))),
            Err(RecvTimeoutError::Disconnected) => {
                Err(Error::External("policy process closed its output".into()))
            }
        }
    }

    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    fn close(mut self) {
        let _ = self.send("close");
        drop(self.stdin);
        // Give the child a moment to exit on its own before killing it.
        for _ in 0..20 {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(5));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Pool of policy child processes. Each episode checks one out exclusively.
pub struct ExternalPolicy {
    cfg: ExternalPolicyConfig,
    idle: Mutex<Vec<Proc>>,
}

impl ExternalPolicy {
    pub fn new(cfg: ExternalPolicyConfig) -> Result<Self> {
        if cfg.command.trim().is_empty() {
            return Err(Error::Config("external policy command is empty".into()));
        }
        Ok(Self {
            cfg,
            idle: Mutex::new(Vec::new()),
        })
    }

    fn timeout(&self) -> Duration {
        Duration::from_millis(self.cfg.step_timeout_ms)
    }

    fn checkout(&self) -> Result<Proc> {
        let reused = self.idle.lock().expect("pool lock").pop();
        match reused {
            Some(p) => Ok(p),
            None => Proc::spawn(&self.cfg.command),
        }
    }

    fn checkin(&self, p: Proc) {
        let mut idle = self.idle.lock().expect("pool lock");
        if idle.len() < self.cfg.max_idle {
            idle.push(p);
        } else {
            drop(idle);
            p.close();
        }
    }
}

impl Drop for ExternalPolicy {
    fn drop(&mut self) {
        if let Ok(mut idle) = self.idle.lock() {
            for p in idle.drain(..) {
                p.close();
            }
        }
    }
}

struct ExternalEpisode<'a> {
    owner: &'a ExternalPolicy,
    proc: Option<Proc>,
    healthy: bool,
}

impl ExternalEpisode<'_> {
    fn exchange(&mut self, line: &str) -> Result<String> {
        let timeout = self.owner.timeout();
        let proc = self.proc.as_mut().expect("process present until drop");
        let res = proc.send(line).and_then(|_| proc.recv(timeout));
        if res.is_err() {
            self.healthy = false;
        }
        res
    }

    fn fail(&mut self, msg: String) -> Error {
        self.healthy = false;
        Error::External(msg)
    }
}

impl Drop for ExternalEpisode<'_> {
    fn drop(&mut self) {
        if let Some(p) = self.proc.take() {
            if self.healthy {
                self.owner.checkin(p);
            } else {
                p.kill();
            }
        }
    }
}

impl EpisodePolicy for ExternalEpisode<'_> {
    fn act(&mut self, obs: &Observation<'_>) -> Result<Action> {
        let msg = ActMsg {
            state: obs.state,
            rtg: obs.rtg,
            recent: obs.recent.to_vec(),
        };
        let line = format!("act {}", serde_json::to_string(&msg)?);
        let reply = self.exchange(&line)?;
        let body = match reply.trim().split_once(' ') {
            Some(("action", body)) => body,
            _ => return Err(self.fail(format!("expected `action {{...}}`, got `{reply}`"))),
        };
        let parsed: ActionMsg = match serde_json::from_str(body) {
            Ok(p) => p,
            Err(e) => return Err(self.fail(format!("bad action payload: {e}"))),
        };
        if !parsed.translate.iter().all(|v| v.is_finite()) || parsed.stop > 1 {
            return Err(self.fail(format!("illegal action `{body}`")));
        }
        Ok(Action {
            translate: parsed.translate,
            stop: parsed.stop == 1,
        })
    }
}

impl PolicyProvider for ExternalPolicy {
    fn begin<'a>(
        &'a self,
        prompt: &[f64],
        _layout: PromptLayout,
        env: &EnvConfig,
    ) -> Result<Box<dyn EpisodePolicy + 'a>> {
        let mut ep = ExternalEpisode {
            owner: self,
            proc: Some(self.checkout()?),
            healthy: true,
        };
        let msg = ResetMsg {
            task_hint: None,
            prompt,
            max_steps: env.max_steps,
        };
        let reply = ep.exchange(&format!("reset {}", serde_json::to_string(&msg)?))?;
        if reply.trim() != "ok" {
            return Err(ep.fail(format!("expected `ok`, got `{reply}`")));
        }
        Ok(Box::new(ep))
    }

    fn name(&self) -> &str {
        "external"
    }
}

/// Serves the surrogate policy over the line protocol until `close` or EOF.
/// The prompt layout is inferred from the token count with `horizon`.
pub fn serve<R: BufRead, W: Write>(input: R, mut output: W, horizon: usize, env: &EnvConfig) -> Result<()> {
    let io_err = |e: std::io::Error| Error::External(format!("serve: {e}"));
    let mut episode: Option<Box<dyn EpisodePolicy>> = None;
    static SURROGATE: SurrogatePolicy = SurrogatePolicy;
    let mut prompt: Vec<f64> = Vec::new();
    let mut step = 0usize;
    for line in input.lines() {
        let line = line.map_err(io_err)?;
        let (verb, body) = line.trim().split_once(' ').unwrap_or((line.trim(), ""));
        match verb {
            "reset" => {
                let msg: ResetIn = serde_json::from_str(body)?;
                let per_segment = horizon * crate::prompt::TOKENS_PER_TRANSITION;
                if per_segment == 0 || !msg.prompt.len().is_multiple_of(per_segment) {
                    writeln!(output, "error bad prompt length").map_err(io_err)?;
                    output.flush().map_err(io_err)?;
                    continue;
                }
                let layout = PromptLayout::new(msg.prompt.len() / per_segment, horizon);
                prompt = msg.prompt;
                episode = Some(SURROGATE.begin(&prompt, layout, env)?);
                step = 0;
                writeln!(output, "ok").map_err(io_err)?;
            }
            "act" => {
                let msg: ActMsg = serde_json::from_str(body)?;
                let Some(ep) = episode.as_mut() else {
                    writeln!(output, "error no episode").map_err(io_err)?;
                    output.flush().map_err(io_err)?;
                    continue;
                };
                let a = ep.act(&Observation {
                    prompt: &prompt,
                    state: msg.state,
                    rtg: msg.rtg,
                    recent: &msg.recent,
                    step,
                })?;
                step += 1;
                let reply = ActionMsg {
                    translate: a.translate,
                    stop: a.stop as u8,
                };
                writeln!(output, "action {}", serde_json::to_string(&reply)?).map_err(io_err)?;
            }
            "close" => break,
            "" => continue,
            other => {
                writeln!(output, "error unknown verb `{other}`").map_err(io_err)?;
            }
        }
        output.flush().map_err(io_err)?;
    }
    Ok(())
}
