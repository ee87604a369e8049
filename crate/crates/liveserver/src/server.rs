use std::net::SocketAddr;
use std::sync::{mpsc, Arc};

use futures_util::{SinkExt, StreamExt};
use tokio::net::{TcpListener, ToSocketAddrs};
use tokio_tungstenite::tungstenite::Message;

use crate::engine::{run_loop, Inbound, Pacing, SessionRecord};
use crate::outbox::Outbox;
use crate::protocol::ClientMessage;
use crate::script::{SessionModels, SessionScript};

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Core(#[from] vip_core::Error),
    #[error("socket error: {0}")]
    Io(#[from] std::io::Error),
    #[error("websocket error: {0}")]
    WebSocket(#[from] tokio_tungstenite::tungstenite::Error),
    #[error("simulation loop stopped unexpectedly")]
    Loop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServerOptions {
    pub pacing: Pacing,
    /// Frames queued for a slow client before the oldest are dropped.
    pub frame_capacity: usize,
}

impl Default for ServerOptions {
    fn default() -> Self {
        ServerOptions {
            pacing: Pacing::RealTime,
            frame_capacity: 120,
        }
    }
}

/// A bound listener that serves exactly one session.
pub struct LiveServer {
    listener: TcpListener,
}

impl LiveServer {
    pub async fn bind(addr: impl ToSocketAddrs) -> Result<Self, ServeError> {
        Ok(LiveServer {
            listener: TcpListener::bind(addr).await?,
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, ServeError> {
        Ok(self.listener.local_addr()?)
    }

    /// Waits for one client, then runs the script to completion, abort or
    /// disconnect.
    pub async fn run_session(
        self,
        script: SessionScript,
        models: SessionModels,
        seed: u64,
        opts: ServerOptions,
    ) -> Result<SessionRecord, ServeError> {
        script.validate()?;
        let (tcp, _) = self.listener.accept().await?;
        let ws = tokio_tungstenite::accept_async(tcp).await?;
        let (mut sink, mut stream) = ws.split();

        let (tx, rx) = mpsc::channel();
        let reader = tokio::spawn(async move {
            while let Some(msg) = stream.next().await {
                match msg {
                    Ok(Message::Text(text)) => match serde_json::from_str::<ClientMessage>(&text) {
                        Ok(m) => {
                            if tx.send(Inbound::Message(m)).is_err() {
                                return;
                            }
                        }
                        Err(e) => eprintln!("ignoring malformed client message: {e}"),
                    },
                    Ok(Message::Close(_)) | Err(_) => break,
                    Ok(_) => {}
                }
            }
            let _ = tx.send(Inbound::Disconnected);
        });

        let outbox = Arc::new(Outbox::new(opts.frame_capacity));
        let out = outbox.clone();
        let writer = tokio::spawn(async move {
            while let Some(batch) = out.next_batch().await {
                for m in batch {
                    let text = serde_json::to_string(&m).expect("server messages serialize");
                    if sink.feed(Message::Text(text)).await.is_err() {
                        return;
                    }
                }
                if sink.flush().await.is_err() {
                    return;
                }
            }
            let _ = sink.close().await;
        });

        let sim_box = outbox.clone();
        let record = tokio::task::spawn_blocking(move || {
            let r = run_loop(&script, &models, seed, opts.pacing, &rx, &sim_box);
            sim_box.close();
            r
        })
        .await
        .map_err(|_| ServeError::Loop)??;
        outbox.close();
        let _ = writer.await;
        reader.abort();
        Ok(record)
    }
}

/// Serves one session on `port` on all interfaces.
pub async fn run_session(
    script: SessionScript,
    models: SessionModels,
    port: u16,
    seed: u64,
) -> Result<SessionRecord, ServeError> {
    LiveServer::bind(("0.0.0.0", port))
        .await?
        .run_session(script, models, seed, ServerOptions::default())
        .await
}
