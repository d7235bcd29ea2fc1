//! Starts a server in-process and drives it over the WebSocket with the scripted
//! expert, recording the insertion and saving it as a dataset.
//!
//! `cargo run --release -p se3-gic-teleop --example scripted_client -- [case]`

use std::sync::Arc;

use futures::{SinkExt, StreamExt};
use tokio_tungstenite::tungstenite::Message;

use se3_gic::dynamics::ManipulatorModel;
use se3_gic::environment::{make_scene, SceneCase};
use se3_gic::liegroup::Vec6;
use se3_gic::policy::{Phase, ScriptedExpert};
use se3_gic_teleop::{spawn, Command, CommandFrame, ServerConfig, ServerFrame, SessionConfig};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let case: SceneCase = std::env::args().nth(1).as_deref().unwrap_or("case2").parse()?;
    let config = ServerConfig {
        bind: "127.0.0.1:0".parse()?,
        session: SessionConfig { case, ..SessionConfig::default() },
        realtime_factor: Some(4.0),
        ..ServerConfig::default()
    };
    let server = spawn(Arc::new(ManipulatorModel::reference_arm()), config).await?;
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{}/session", server.addr)).await?;
    println!("connected to ws://{}/session", server.addr);

    let mut id = 0;
    let mut send = async |ws: &mut _, command: Command| -> Result<(), Box<dyn std::error::Error>> {
        id += 1;
        let text = serde_json::to_string(&CommandFrame { id: Some(id), command })?;
        SinkExt::send(ws, Message::text(text)).await?;
        Ok(())
    };
    send(&mut ws, Command::StartRecording).await?;

    let expert = ScriptedExpert::new(make_scene(case).hole_depth);
    let mut phase = Phase::Align;
    let mut last = None;
    let path = std::env::temp_dir().join(format!("teleop_{case}.jsonl"));
    while let Some(msg) = ws.next().await {
        let Message::Text(text) = msg? else { continue };
        match serde_json::from_str::<ServerFrame>(text.as_str())? {
            ServerFrame::Telemetry(t) => {
                if t.tick % 200 == 0 {
                    println!(
                        "tick {:>5}  depth {:+.4} m  lateral {:.4} m  |f| {:6.2} N  {:?}",
                        t.tick,
                        t.depth,
                        t.lateral,
                        Vec6::from(t.f_ext).fixed_rows::<3>(0).norm(),
                        phase
                    );
                }
                if t.flags.success {
                    println!("inserted at tick {} with {} records", t.tick, t.records);
                    send(&mut ws, Command::StopRecording).await?;
                    send(&mut ws, Command::Save { path: path.display().to_string() }).await?;
                    break;
                }
                let (a, p) = expert.decide(&Vec6::from(t.e_g), phase);
                phase = p;
                if last != Some(a) {
                    last = Some(a);
                    send(&mut ws, Command::SetGains { action: a.to_array() }).await?;
                }
            }
            ServerFrame::Ack(_) => {}
            ServerFrame::Error(e) => return Err(e.message.into()),
        }
    }
    while let Some(msg) = ws.next().await {
        if let Message::Text(text) = msg? {
            if let ServerFrame::Ack(a) = serde_json::from_str(text.as_str())? {
                if a.command == "save" {
                    println!("{}", a.detail.unwrap_or_default());
                    break;
                }
            }
        }
    }
    ws.close(None).await.ok();
    server.shutdown().await?;
    Ok(())
}
