//! Runs a real echo server as a host function. The first connection cold
//! starts it, the process is SIGSTOPped once idle and the second connection
//! resumes the same pid.
//!
//! Needs `python3` on the PATH.

use std::net::Ipv4Addr;
use std::time::Duration;

use im_core::config::parse_config;
use im_core::process::Platform;
use im_core::trace::Trace;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;

async fn echo(port: u16, msg: &[u8]) -> Vec<u8> {
    let mut s = TcpStream::connect((Ipv4Addr::LOCALHOST, port)).await.unwrap();
    s.write_all(msg).await.unwrap();
    let mut buf = vec![0; msg.len()];
    s.read_exact(&mut buf).await.unwrap();
    buf
}

#[tokio::main(flavor = "current_thread")]
async fn main() {
    let server = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/echo_server.py");
    let config = parse_config(&format!(
        "[timing]\nidle_debounce = 300ms\n[rule]\npattern = echo-*\nfunction_type = echo\n\
         [process echo]\ncommand = python3 {server} {{port}}\n[hosts]\necho-1\n"
    ))
    .unwrap();
    let dir = std::env::temp_dir().join(format!("im-echo-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let platform = Platform::start(config, &dir.join("ports"), Trace::new()).await.unwrap();
    let port = platform.port_of("echo-1").unwrap();

    println!("reply: {:?}", String::from_utf8(echo(port, b"hello").await).unwrap());
    println!("after first echo: {:?}", platform.status("echo-1").await.unwrap());
    tokio::time::sleep(Duration::from_secs(1)).await;
    println!("after idling:     {:?}", platform.status("echo-1").await.unwrap());
    println!("reply: {:?}", String::from_utf8(echo(port, b"again").await).unwrap());
    println!("after second:     {:?}", platform.status("echo-1").await.unwrap());

    let report = platform.shutdown().await.unwrap();
    println!();
    print!("{}", report.trace.render());
    std::fs::remove_dir_all(&dir).ok();
}
