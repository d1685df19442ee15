//! Drives one host record through a cold start, a sleep and a warm resume
//! by calling the pure transition function by hand.

use std::net::Ipv4Addr;

use im_core::lifecycle::{apply_event, Action, ConnId, HostRecord, LifecycleEvent, LifecycleParams};
use im_core::time::Timestamp;

fn main() {
    let params = LifecycleParams::default();
    let mut record = HostRecord::new("web-1", Ipv4Addr::new(10, 0, 0, 1));
    let script = [
        (0, LifecycleEvent::ConnectRequested(ConnId(1))),
        (10, LifecycleEvent::ConnectRequested(ConnId(2))),
        (200, LifecycleEvent::StartCompleted),
        (900, LifecycleEvent::AppIdle),
        (1_900, LifecycleEvent::IdleDebounceElapsed),
        (5_000, LifecycleEvent::ConnectRequested(ConnId(3))),
        (5_020, LifecycleEvent::ResumeCompleted),
    ];
    for (ms, event) in script {
        let (next, actions) = apply_event(record, &event, Timestamp::from_micros(ms * 1000), &params);
        println!("{ms:>6}ms {:<28} -> {}", format!("{event:?}"), next.state);
        for a in actions {
            if !matches!(a, Action::EmitTrace(_)) {
                println!("           {a:?}");
            }
        }
        record = next;
    }
    println!("instance {} at {}", record.instance_id, record.address);
}
