//! WebSocket transport: one task per connection, each driving its own
//! [`Session`] from received text frames and a 5 ms clock tick.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use futures_util::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio_tungstenite::tungstenite::Message;

use crate::protocol::encode;
use crate::session::{ServerSettings, Session, TrialTranscript};

const TICK: Duration = Duration::from_millis(5);

pub struct TrialServer {
    listener: TcpListener,
    settings: Arc<ServerSettings>,
    log_dir: Option<PathBuf>,
    next_id: AtomicU64,
}

impl TrialServer {
    pub async fn bind(addr: &str, settings: ServerSettings, log_dir: Option<PathBuf>) -> std::io::Result<Self> {
        if let Some(dir) = &log_dir {
            std::fs::create_dir_all(dir)?;
        }
        Ok(Self {
            listener: TcpListener::bind(addr).await?,
            settings: Arc::new(settings),
            log_dir,
            next_id: AtomicU64::new(1),
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections until the task is cancelled.
    pub async fn run(self) -> std::io::Result<()> {
        loop {
            let (stream, peer) = self.listener.accept().await?;
            let id = self.next_id.fetch_add(1, Ordering::Relaxed);
            let settings = self.settings.clone();
            let log_dir = self.log_dir.clone();
            tokio::spawn(async move {
                log::info!("session {id}: connection from {peer}");
                if let Err(e) = serve_connection(stream, id, settings, log_dir).await {
                    log::warn!("session {id}: {e}");
                }
                log::info!("session {id}: closed");
            });
        }
    }
}

fn write_transcripts(dir: &Option<PathBuf>, transcripts: Vec<TrialTranscript>) {
    let Some(dir) = dir else { return };
    for t in transcripts {
        let mut body = t.lines.join("\n");
        body.push('\n');
        if let Err(e) = std::fs::write(dir.join(t.file_name()), body) {
            log::warn!("writing transcript {}: {e}", t.file_name());
        }
    }
}

async fn serve_connection(
    stream: TcpStream,
    id: u64,
    settings: Arc<ServerSettings>,
    log_dir: Option<PathBuf>,
) -> Result<(), tokio_tungstenite::tungstenite::Error> {
    let ws = tokio_tungstenite::accept_async(stream).await?;
    let (mut tx, mut rx) = ws.split();
    let epoch = Instant::now();
    let now_ms = || epoch.elapsed().as_millis() as u64;
    let mut session = Session::new(id, settings, 0);
    let mut tick = tokio::time::interval(TICK);
    tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    loop {
        let out = tokio::select! {
            msg = rx.next() => match msg {
                Some(Ok(Message::Text(text))) => session.handle_text(text.as_str(), now_ms()),
                Some(Ok(Message::Binary(_))) => session.handle_text("<binary frame>", now_ms()),
                Some(Ok(Message::Close(_))) | None => {
                    session.disconnect(now_ms());
                    break;
                }
                Some(Ok(_)) => continue,
                Some(Err(e)) => {
                    session.disconnect(now_ms());
                    write_transcripts(&log_dir, session.take_transcripts());
                    return Err(e);
                }
            },
            _ = tick.tick() => session.advance(now_ms()),
        };
        for frame in &out {
            tx.send(Message::text(encode(frame))).await?;
        }
        write_transcripts(&log_dir, session.take_transcripts());
        if session.is_closed() {
            tx.send(Message::Close(None)).await.ok();
            break;
        }
    }
    write_transcripts(&log_dir, session.take_transcripts());
    Ok(())
}
