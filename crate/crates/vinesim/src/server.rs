//! WebSocket teleoperation server.
//!
//! One task owns the [`Session`] and ticks it on a fixed clock. Connection
//! tasks talk to it only through channels: commands go in over an mpsc queue,
//! snapshots come back over a broadcast channel as ready-to-send text.

use std::collections::HashMap;
use std::fs::File;
use std::future::Future;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use futures_util::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream, ToSocketAddrs};
use tokio::sync::{broadcast, mpsc, oneshot};
use tokio::time::{interval, MissedTickBehavior};
use tokio_tungstenite::tungstenite::Message;
use tracing::{debug, info, warn};
use vinesim_core::body::EventKind;
use vinesim_core::scenario::{score_run, RecordEntry, RunRecord, ScoreReport};
use vinesim_core::session::{LogHeader, LogWriter, Session};

use crate::protocol::{Ack, ClientMessage, Hello, JoinMode, ServerMessage};

#[derive(Debug, Clone, PartialEq)]
pub struct ServeOptions {
    /// Rate of `state` messages. Rounded to a whole number of ticks.
    pub snapshot_hz: f64,
    /// Where to write the run log, if anywhere.
    pub log: Option<PathBuf>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            snapshot_hz: vinesim_core::session::DEFAULT_SNAPSHOT_HZ,
            log: None,
        }
    }
}

type ClientId = u64;

enum Command {
    Connect {
        id: ClientId,
        direct: mpsc::UnboundedSender<String>,
    },
    Client {
        id: ClientId,
        msg: ClientMessage,
    },
    Leave {
        id: ClientId,
    },
    Shutdown {
        done: oneshot::Sender<()>,
    },
}

pub struct Server {
    listener: TcpListener,
    session: Session,
    options: ServeOptions,
}

impl Server {
    pub async fn bind(addr: impl ToSocketAddrs, session: Session, options: ServeOptions) -> Result<Self> {
        if !(options.snapshot_hz.is_finite() && options.snapshot_hz > 0.0) {
            anyhow::bail!("snapshot rate must be positive, got {}", options.snapshot_hz);
        }
        let listener = TcpListener::bind(addr).await.context("binding listener")?;
        Ok(Self {
            listener,
            session,
            options,
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Serves until the session fails or `shutdown` completes. The run log
    /// is flushed before returning.
    pub async fn run_until(self, shutdown: impl Future<Output = ()>) -> Result<()> {
        let (cmd_tx, cmd_rx) = mpsc::channel(1024);
        let (out_tx, _) = broadcast::channel(256);
        let engine = Engine::new(self.session, &self.options, out_tx.clone())?;
        let mut sim = tokio::spawn(engine.run(cmd_rx));
        let listener = self.listener;
        let accept = async {
            let mut next_id: ClientId = 0;
            loop {
                let (stream, peer) = listener.accept().await?;
                next_id += 1;
                debug!(%peer, id = next_id, "connection");
                tokio::spawn(connection(stream, next_id, cmd_tx.clone(), out_tx.subscribe()));
            }
        };
        tokio::select! {
            res = &mut sim => return res.context("session task panicked")?,
            res = accept => {
                let res: std::io::Result<()> = res;
                res.context("accepting connections")?;
            }
            () = shutdown => info!("shutting down"),
        }
        let (done, wait) = oneshot::channel();
        if cmd_tx.send(Command::Shutdown { done }).await.is_ok() {
            let _ = wait.await;
        }
        sim.await.context("session task panicked")?
    }

    pub async fn run(self) -> Result<()> {
        self.run_until(std::future::pending()).await
    }
}

struct Engine {
    session: Session,
    snapshot_every: u64,
    out: broadcast::Sender<String>,
    clients: HashMap<ClientId, mpsc::UnboundedSender<String>>,
    operator: Option<ClientId>,
    log: Option<LogWriter<BufWriter<File>>>,
    /// Ticks with events, enough to score the run.
    scored: Vec<RecordEntry>,
    score_changed: bool,
    started: Instant,
}

impl Engine {
    fn new(session: Session, options: &ServeOptions, out: broadcast::Sender<String>) -> Result<Self> {
        let log = match &options.log {
            Some(path) => {
                let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
                info!(path = %path.display(), "recording run");
                Some(LogWriter::new(BufWriter::new(file), &LogHeader::for_session(&session))?)
            }
            None => None,
        };
        let snapshot_every = (session.tick_hz() / options.snapshot_hz).round().max(1.0) as u64;
        Ok(Self {
            session,
            snapshot_every,
            out,
            clients: HashMap::new(),
            operator: None,
            log,
            scored: Vec::new(),
            score_changed: false,
            started: Instant::now(),
        })
    }

    async fn run(mut self, mut commands: mpsc::Receiver<Command>) -> Result<()> {
        let mut clock = interval(Duration::from_secs_f64(1.0 / self.session.tick_hz()));
        clock.set_missed_tick_behavior(MissedTickBehavior::Delay);
        let result = loop {
            tokio::select! {
                cmd = commands.recv() => match cmd {
                    Some(Command::Shutdown { done }) => {
                        let _ = done.send(());
                        break Ok(());
                    }
                    Some(cmd) => self.handle(cmd),
                    None => break Ok(()),
                },
                _ = clock.tick() => {
                    if let Err(e) = self.step() {
                        self.broadcast(&ServerMessage::Error { message: format!("session stopped: {e:#}") });
                        break Err(e);
                    }
                }
            }
        };
        if let Some(log) = self.log.as_mut() {
            log.flush()?;
        }
        result
    }

    fn step(&mut self) -> Result<()> {
        let events = self.session.tick()?;
        let entry = RecordEntry {
            tick: self.session.tick_count(),
            input: *self.session.input(),
            state_hash: self.session.state_hash(),
            events,
        };
        if let Some(log) = self.log.as_mut() {
            log.write_entry(&entry)?;
        }
        if !entry.events.is_empty() {
            self.score_changed |= entry
                .events
                .iter()
                .any(|e| matches!(e.kind, EventKind::GoalReached(_) | EventKind::CylinderToppled(_)));
            self.scored.push(entry);
        }
        if self.session.tick_count().is_multiple_of(self.snapshot_every) {
            self.publish()?;
        }
        Ok(())
    }

    fn publish(&mut self) -> Result<()> {
        let snap = self.session.publish();
        let events = snap.events.clone();
        self.broadcast(&ServerMessage::State(snap));
        for e in events {
            self.broadcast(&ServerMessage::Event(e));
        }
        if std::mem::take(&mut self.score_changed) {
            let report = self.score()?;
            self.broadcast(&ServerMessage::Score(report));
        }
        if let Some(log) = self.log.as_mut() {
            log.flush()?;
        }
        Ok(())
    }

    fn score(&self) -> Result<ScoreReport> {
        let s = &self.session;
        let mut entries = self.scored.clone();
        if entries.last().is_none_or(|e| e.tick < s.tick_count()) {
            entries.push(RecordEntry {
                tick: s.tick_count(),
                input: *s.input(),
                state_hash: s.state_hash(),
                events: Vec::new(),
            });
        }
        let record = RunRecord {
            course_hash: s.course().hash().to_string(),
            tick_hz: s.tick_hz(),
            site: s.site().to_string(),
            entries,
            wall_duration: self.started.elapsed().as_secs_f64(),
        };
        Ok(score_run(&record, s.course())?)
    }

    fn broadcast(&self, msg: &ServerMessage) {
        // No subscribers is not an error.
        let _ = self.out.send(msg.to_text());
    }

    fn reply(&self, id: ClientId, msg: &ServerMessage) {
        if let Some(tx) = self.clients.get(&id) {
            let _ = tx.send(msg.to_text());
        }
    }

    fn mode(&self, id: ClientId) -> JoinMode {
        if self.operator == Some(id) {
            JoinMode::Operate
        } else {
            JoinMode::Observe
        }
    }

    fn ack(&self, id: ClientId, request: &str, message: Option<String>) {
        self.reply(
            id,
            &ServerMessage::Ack(Ack {
                request: request.into(),
                mode: self.mode(id),
                tick: self.session.tick_count() + 1,
                message,
            }),
        );
    }

    fn error(&self, id: ClientId, message: impl Into<String>) {
        self.reply(id, &ServerMessage::Error { message: message.into() });
    }

    /// The operator is gone or gave up the seat: fail closed.
    fn release_operator(&mut self) {
        self.operator = None;
        self.session.disconnect();
        warn!(tick = self.session.tick_count(), "operator released; e-stop latched");
    }

    fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::Connect { id, direct } => {
                self.clients.insert(id, direct);
                let s = &self.session;
                let hello = Hello {
                    course_hash: s.course().hash().to_string(),
                    site: s.site().to_string(),
                    tick_hz: s.tick_hz(),
                    snapshot_hz: s.tick_hz() / self.snapshot_every as f64,
                    mode: JoinMode::Observe,
                    course: s.course().document().clone(),
                };
                self.reply(id, &ServerMessage::Hello(Box::new(hello)));
                self.reply(id, &ServerMessage::State(s.snapshot()));
            }
            Command::Leave { id } => {
                self.clients.remove(&id);
                if self.operator == Some(id) {
                    self.release_operator();
                }
            }
            Command::Client { id, msg } => self.client_message(id, msg),
            Command::Shutdown { .. } => unreachable!("handled by the run loop"),
        }
    }

    fn client_message(&mut self, id: ClientId, msg: ClientMessage) {
        let operating = self.operator == Some(id);
        match msg {
            ClientMessage::Join { mode: JoinMode::Operate } => match self.operator {
                None => {
                    self.operator = Some(id);
                    info!(id, "operator joined");
                    self.ack(id, "join", None);
                }
                Some(other) if other == id => self.ack(id, "join", None),
                Some(_) => self.ack(id, "join", Some("another client is operating; joined read-only".into())),
            },
            ClientMessage::Join { mode: JoinMode::Observe } => {
                if operating {
                    self.release_operator();
                }
                self.ack(id, "join", None);
            }
            ClientMessage::Input(_) | ClientMessage::EstopClear if !operating => {
                self.error(id, "read-only client: join with mode `operate` to send commands");
            }
            ClientMessage::Input(input) => match self.session.apply_message(input) {
                Ok(()) => self.ack(id, "input", None),
                Err(e) => self.error(id, format!("input rejected, previous input kept: {e}")),
            },
            ClientMessage::EstopClear => {
                if self.session.input().estop {
                    self.error(id, "e-stop is still pressed in the latest input; send input with estop false first");
                } else {
                    self.session.clear_estop();
                    self.ack(id, "estop_clear", None);
                }
            }
        }
    }
}

async fn connection(
    stream: TcpStream,
    id: ClientId,
    commands: mpsc::Sender<Command>,
    mut updates: broadcast::Receiver<String>,
) {
    let ws = match tokio_tungstenite::accept_async(stream).await {
        Ok(ws) => ws,
        Err(e) => {
            debug!(id, "handshake failed: {e}");
            return;
        }
    };
    let (mut sink, mut source) = ws.split();
    let (direct_tx, mut direct) = mpsc::unbounded_channel();
    if commands
        .send(Command::Connect { id, direct: direct_tx })
        .await
        .is_err()
    {
        return;
    }
    loop {
        let text = tokio::select! {
            frame = source.next() => match frame {
                Some(Ok(Message::Text(text))) => match serde_json::from_str::<ClientMessage>(&text) {
                    Ok(msg) => {
                        if commands.send(Command::Client { id, msg }).await.is_err() {
                            break;
                        }
                        continue;
                    }
                    Err(e) => ServerMessage::Error { message: format!("malformed message: {e}") }.to_text(),
                },
                Some(Ok(Message::Binary(_))) => ServerMessage::Error {
                    message: "binary frames are not supported; send JSON text".into(),
                }
                .to_text(),
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                Some(Ok(_)) => continue,
            },
            Some(text) = direct.recv() => text,
            update = updates.recv() => match update {
                Ok(text) => text,
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    debug!(id, skipped = n, "slow client");
                    continue;
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
        };
        if sink.send(Message::Text(text)).await.is_err() {
            break;
        }
    }
    let _ = commands.send(Command::Leave { id }).await;
    debug!(id, "disconnected");
}
