use std::net::Ipv4Addr;
use std::time::{Duration, Instant};

use im_core::config::parse_config;
use im_core::lifecycle::HostState;
use im_core::process::{Platform, PortMap, ProcessError};
use im_core::trace::{Trace, TraceRecord};
use tokio::io::AsyncReadExt;
use tokio::net::TcpStream;

fn config(command: &str, extra: &str) -> im_core::config::Config {
    parse_config(&format!(
        "[timing]\nidle_debounce = 300ms\n{extra}\n[rule]\npattern = svc-*\nfunction_type = svc\n\
         [process svc]\ncommand = {command}\nreadiness_timeout = 300ms\n[hosts]\nsvc-1\n"
    ))
    .unwrap()
}

/// Connects through the gateway and waits for the platform to hang up.
async fn refused(port: u16) {
    let mut s = TcpStream::connect((Ipv4Addr::LOCALHOST, port)).await.unwrap();
    let mut buf = [0u8; 16];
    let n = tokio::time::timeout(Duration::from_secs(10), s.read(&mut buf))
        .await
        .expect("gateway never hung up");
    assert!(matches!(n, Ok(0) | Err(_)), "unexpected bytes from a failed host: {n:?}");
}

async fn settle(platform: &Platform, state: HostState) {
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        let s = platform.status("svc-1").await.unwrap();
        if s.as_ref().is_some_and(|s| s.state == state) {
            return;
        }
        assert!(Instant::now() < deadline, "svc-1 never reached {state}: {s:?}");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

fn kinds<'a>(records: &'a [TraceRecord], kind: &str) -> Vec<&'a TraceRecord> {
    records.iter().filter(|r| r.kind == kind).collect()
}

fn alive(pid: u32) -> bool {
    std::path::Path::new(&format!("/proc/{pid}")).exists()
}

#[tokio::test(flavor = "current_thread")]
async fn missing_binary_fails_start_and_gives_up() {
    let dir = tempfile::tempdir().unwrap();
    let c = config("/nonexistent/im-test-server {port}", "[policy]\nmax_restarts = 2");
    let platform = Platform::start(c, &dir.path().join("ports"), Trace::new()).await.unwrap();
    refused(platform.port_of("svc-1").unwrap()).await;
    settle(&platform, HostState::Terminated).await;
    let report = platform.shutdown().await.unwrap();
    let records = report.trace.records();
    let failures = kinds(records, "start-failed");
    assert_eq!(failures.len(), 3, "first attempt plus two restarts");
    assert!(failures.iter().all(|r| r.detail("reason") == Some("spawn")));
    let failed = kinds(records, "connection-failed");
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].detail("reason"), Some("start-failed"));
    assert!(report.spawned.is_empty());
}

#[tokio::test(flavor = "current_thread")]
async fn server_that_never_listens_times_out() {
    let dir = tempfile::tempdir().unwrap();
    let c = config("sleep 30", "[policy]\nmax_restarts = 0");
    let platform = Platform::start(c, &dir.path().join("ports"), Trace::new()).await.unwrap();
    refused(platform.port_of("svc-1").unwrap()).await;
    settle(&platform, HostState::Terminated).await;
    let report = platform.shutdown().await.unwrap();
    let failures = kinds(report.trace.records(), "start-failed");
    assert_eq!(failures.len(), 1);
    assert_eq!(failures[0].detail("reason"), Some("readiness-timeout"));
    assert_eq!(report.spawned.len(), 1);
    assert!(!alive(report.spawned[0]), "timed-out process left behind");
}

#[tokio::test(flavor = "current_thread")]
async fn killed_server_restarts_as_new_instance() {
    let dir = tempfile::tempdir().unwrap();
    let server = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/echo_server.py");
    let c = config(&format!("python3 {server} {{port}}"), "");
    let platform = Platform::start(c, &dir.path().join("ports"), Trace::new()).await.unwrap();
    let port = platform.port_of("svc-1").unwrap();
    let s = TcpStream::connect((Ipv4Addr::LOCALHOST, port)).await.unwrap();
    settle(&platform, HostState::Running).await;
    let pid = platform.status("svc-1").await.unwrap().unwrap().pid.unwrap();
    drop(s);
    // Kill the server behind the platform's back.
    // SAFETY: kill(2) has no memory-safety preconditions.
    unsafe { libc::kill(pid as i32, libc::SIGTERM) };
    let deadline = Instant::now() + Duration::from_secs(10);
    let status = loop {
        let s = platform.status("svc-1").await.unwrap().unwrap();
        if s.instance == 2 || s.state == HostState::Stopped {
            break s;
        }
        assert!(Instant::now() < deadline, "no reaction to the dead process: {s:?}");
        tokio::time::sleep(Duration::from_millis(20)).await;
    };
    // Killed by a signal counts as a fault: same host, new instance.
    assert_eq!(status.instance, 2);
    let report = platform.shutdown().await.unwrap();
    let exits = kinds(report.trace.records(), "exit");
    assert_eq!(exits[0].detail("code"), Some("signal"));
    assert!(report.spawned.iter().all(|&p| !alive(p)));
}

#[tokio::test(flavor = "current_thread")]
async fn port_map_file_matches_listeners() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ports");
    let c = parse_config(
        "[rule]\npattern = *\nfunction_type = svc\n[process svc]\ncommand = true\n[hosts]\na-1\nb-1\nc-1\n",
    )
    .unwrap();
    let platform = Platform::start(c, &path, Trace::new()).await.unwrap();
    let on_disk: PortMap = std::fs::read_to_string(&path).unwrap().parse().unwrap();
    assert_eq!(&on_disk, platform.ports());
    assert_eq!(on_disk.ports.len(), 3);
    for (host, port) in &on_disk.ports {
        assert_eq!(on_disk.host_for(*port), Some(host.as_str()));
        TcpStream::connect((Ipv4Addr::LOCALHOST, *port)).await.unwrap();
    }
    platform.shutdown().await.unwrap();
}

#[tokio::test(flavor = "current_thread")]
async fn no_hosts_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let c = parse_config("[rule]\npattern = *\nfunction_type = svc\n").unwrap();
    let err = Platform::start(c, &dir.path().join("ports"), Trace::new()).await.err().unwrap();
    assert!(matches!(err, ProcessError::NoHosts));
}
