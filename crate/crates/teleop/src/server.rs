//! WebSocket front end and the paced control thread.

use std::future::Future;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender, TrySendError};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use tokio::sync::{broadcast, oneshot};

use se3_gic::dynamics::ManipulatorModel;

use crate::protocol::{Ack, CommandFrame, ErrorFrame, ServerFrame};
use crate::session::{Session, SessionConfig};

#[derive(Debug, thiserror::Error)]
pub enum TeleopError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure { addr: SocketAddr, source: std::io::Error },
    #[error(transparent)]
    Session(#[from] se3_gic::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    pub session: SessionConfig,
    /// Simulated seconds per wall-clock second; `None` runs unpaced.
    pub realtime_factor: Option<f64>,
    pub queue_capacity: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: SocketAddr::from(([127, 0, 0, 1], 8765)),
            session: SessionConfig::default(),
            realtime_factor: Some(1.0),
            queue_capacity: 64,
        }
    }
}

struct Queued {
    frame: CommandFrame,
    received_tick: u64,
}

#[derive(Clone)]
struct Shared {
    commands: SyncSender<Queued>,
    frames: broadcast::Sender<String>,
    tick: Arc<AtomicU64>,
    connected: Arc<AtomicBool>,
}

/// A running server; dropping it without [`ServerHandle::shutdown`] leaves it running.
pub struct ServerHandle {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    shutdown: Option<oneshot::Sender<()>>,
    http: tokio::task::JoinHandle<std::io::Result<()>>,
    control: Option<std::thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub async fn shutdown(mut self) -> Result<(), TeleopError> {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(c) = self.control.take() {
            tokio::task::spawn_blocking(move || c.join()).await.ok();
        }
        match self.http.await {
            Ok(r) => r.map_err(TeleopError::Io),
            Err(e) => Err(TeleopError::Io(std::io::Error::other(e))),
        }
    }
}

/// Bind, start the control thread and serve `/session` in the background.
pub async fn spawn(model: Arc<ManipulatorModel>, config: ServerConfig) -> Result<ServerHandle, TeleopError> {
    let session = Session::new(model, config.session.clone())?;
    let listener = tokio::net::TcpListener::bind(config.bind)
        .await
        .map_err(|source| TeleopError::BindFailure { addr: config.bind, source })?;
    let addr = listener.local_addr()?;
    let (cmd_tx, cmd_rx) = sync_channel(config.queue_capacity.max(1));
    let (frames, _) = broadcast::channel(1024);
    let shared = Shared {
        commands: cmd_tx,
        frames: frames.clone(),
        tick: Arc::new(AtomicU64::new(0)),
        connected: Arc::new(AtomicBool::new(false)),
    };
    let stop = Arc::new(AtomicBool::new(false));
    let control = {
        let (stop, tick) = (stop.clone(), shared.tick.clone());
        let rtf = config.realtime_factor;
        let dt = config.session.dt;
        std::thread::Builder::new()
            .name("gac-control".into())
            .spawn(move || control_loop(session, cmd_rx, frames, tick, stop, dt, rtf))?
    };
    let app = Router::new().route("/session", get(upgrade)).with_state(shared);
    let (tx, rx) = oneshot::channel::<()>();
    let http = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    tracing::info!(%addr, "teleop server listening");
    Ok(ServerHandle { addr, stop, shutdown: Some(tx), http, control: Some(control) })
}

/// Serve until `shutdown` resolves.
pub async fn serve(
    model: Arc<ManipulatorModel>,
    config: ServerConfig,
    shutdown: impl Future<Output = ()>,
) -> Result<(), TeleopError> {
    let handle = spawn(model, config).await?;
    shutdown.await;
    handle.shutdown().await
}

fn control_loop(
    mut session: Session,
    commands: Receiver<Queued>,
    frames: broadcast::Sender<String>,
    tick: Arc<AtomicU64>,
    stop: Arc<AtomicBool>,
    dt: f64,
    rtf: Option<f64>,
) {
    let period = rtf.map(|r| Duration::from_secs_f64(dt / r));
    let t0 = Instant::now();
    let mut n: u32 = 0;
    let send = |f: ServerFrame| {
        let _ = frames.send(serde_json::to_string(&f).expect("frames serialize"));
    };
    while !stop.load(Ordering::Relaxed) {
        let now = session.tick();
        while let Ok(q) = commands.try_recv() {
            let id = q.frame.id;
            match session.apply(&q.frame.command) {
                Ok(detail) => send(ServerFrame::Ack(Ack {
                    id,
                    command: q.frame.command.name().into(),
                    received_tick: q.received_tick,
                    tick: now,
                    detail,
                })),
                Err(message) => send(ServerFrame::Error(ErrorFrame { id, tick: now, message })),
            }
        }
        match session.step() {
            Ok(Some(t)) => send(ServerFrame::Telemetry(t)),
            Ok(None) => {}
            Err(e) => {
                send(ServerFrame::Error(ErrorFrame { id: None, tick: now, message: format!("{e}; session reset") }));
                let case = session.scene_case();
                if let Err(e) = session.apply(&crate::protocol::Command::Reset { case, seed: None }) {
                    tracing::error!("reset after failure: {e}");
                }
            }
        }
        tick.store(session.tick(), Ordering::Release);
        if let Some(p) = period {
            n = n.wrapping_add(1);
            let due = t0 + p * n;
            let now = Instant::now();
            if due > now {
                std::thread::sleep(due - now);
            }
        }
    }
}

async fn upgrade(ws: WebSocketUpgrade, State(shared): State<Shared>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| client(socket, shared))
}

async fn client(socket: WebSocket, shared: Shared) {
    let (mut tx, mut rx) = socket.split();
    if shared.connected.swap(true, Ordering::SeqCst) {
        let busy = ServerFrame::Error(ErrorFrame {
            id: None,
            tick: shared.tick.load(Ordering::Acquire),
            message: "a session client is already connected".into(),
        });
        let _ = tx.send(Message::Text(serde_json::to_string(&busy).expect("serialize").into())).await;
        let _ = tx.close().await;
        return;
    }
    let mut frames = shared.frames.subscribe();
    let (reply_tx, mut reply_rx) = tokio::sync::mpsc::channel::<String>(16);
    let egress = tokio::spawn(async move {
        loop {
            let text = tokio::select! {
                f = frames.recv() => match f {
                    Ok(t) => t,
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => break,
                },
                r = reply_rx.recv() => match r {
                    Some(t) => t,
                    None => break,
                },
            };
            if tx.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
    });
    while let Some(Ok(msg)) = rx.next().await {
        let text = match msg {
            Message::Text(t) => t.to_string(),
            Message::Close(_) => break,
            _ => continue,
        };
        let tick = shared.tick.load(Ordering::Acquire);
        let reject = |id: Option<u64>, message: String| {
            serde_json::to_string(&ServerFrame::Error(ErrorFrame { id, tick, message })).expect("serialize")
        };
        let reply = match serde_json::from_str::<CommandFrame>(&text) {
            Ok(frame) => {
                let id = frame.id;
                match shared.commands.try_send(Queued { frame, received_tick: tick }) {
                    Ok(()) => None,
                    Err(TrySendError::Full(_)) => Some(reject(id, "command queue full".into())),
                    Err(TrySendError::Disconnected(_)) => Some(reject(id, "control loop stopped".into())),
                }
            }
            Err(e) => Some(reject(None, format!("bad command: {e}"))),
        };
        if let Some(r) = reply {
            if reply_tx.send(r).await.is_err() {
                break;
            }
        }
    }
    drop(reply_tx);
    egress.abort();
    shared.connected.store(false, Ordering::SeqCst);
}
