use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use haptic_cone::SimulationConfig;
use haptic_cone_server::protocol::{decode_server, encode};
use haptic_cone_server::{ClientMessage, Frame, ServerMessage, ServerSettings, TrialServer};
use tokio_tungstenite::tungstenite::Message;

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn trial_over_websocket() {
    let logs = tempfile::tempdir().unwrap();
    let settings = ServerSettings::new(SimulationConfig::default(), 1).unwrap();
    let server = TrialServer::bind("127.0.0.1:0", settings, Some(logs.path().to_path_buf())).await.unwrap();
    let addr = server.local_addr().unwrap();
    tokio::spawn(server.run());

    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}")).await.unwrap();
    let mut seq = 0;
    let mut send = |m: ClientMessage| {
        seq += 1;
        Message::text(encode(&Frame { seq, message: m }))
    };
    ws.send(send(ClientMessage::Hello { client: None })).await.unwrap();
    ws.send(send(ClientMessage::StartTrial)).await.unwrap();

    let mut stimuli = 0;
    let mut sent_reached = false;
    let result = tokio::time::timeout(Duration::from_secs(10), async {
        while let Some(msg) = ws.next().await {
            let Message::Text(text) = msg.unwrap() else { continue };
            let frame = decode_server(text.as_str()).unwrap();
            match frame.message {
                ServerMessage::Stimulus { .. } => {
                    stimuli += 1;
                    if stimuli == 5 && !sent_reached {
                        sent_reached = true;
                        ws.send(send(ClientMessage::Reached)).await.unwrap();
                    }
                }
                ServerMessage::TrialResult { completed, .. } => return Some(completed),
                _ => {}
            }
        }
        None
    })
    .await
    .expect("result within 10 s");
    assert_eq!(result, Some(true));
    assert!(stimuli >= 5);

    ws.send(send(ClientMessage::Abort { reason: None })).await.unwrap();
    // The server closes after the client aborts.
    tokio::time::timeout(Duration::from_secs(5), async { while ws.next().await.is_some_and(|m| m.is_ok()) {} })
        .await
        .unwrap();
    let files: Vec<_> = std::fs::read_dir(logs.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(files.len(), 1, "{files:?}");
    let body = std::fs::read_to_string(logs.path().join(&files[0])).unwrap();
    assert!(body.lines().last().unwrap().contains("trial_result"));
}
