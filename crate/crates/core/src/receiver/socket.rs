use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use socket2::{Domain, Protocol, Socket, Type};

use super::{CounterSnapshot, ReceiverCore, ReceiverCounters};
use crate::fifo::FifoWriters;

const READ_TIMEOUT: Duration = Duration::from_millis(10);
const RECV_BUFFER: usize = 32 << 20;

/// Binds a UDP socket with a large receive buffer (the kernel may cap it).
pub fn bind_receiver_socket(addr: SocketAddr) -> io::Result<UdpSocket> {
    let socket = Socket::new(Domain::for_address(addr), Type::DGRAM, Some(Protocol::UDP))?;
    let _ = socket.set_recv_buffer_size(RECV_BUFFER);
    socket.bind(&addr.into())?;
    Ok(socket.into())
}

pub struct ReceiverHandle {
    stop: Arc<AtomicBool>,
    counters: Arc<ReceiverCounters>,
    local_addr: SocketAddr,
    ingest: Option<JoinHandle<()>>,
    emitter: Option<JoinHandle<()>>,
}

impl ReceiverHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn counters(&self) -> CounterSnapshot {
        self.counters.snapshot()
    }

    /// Stops reading, lets the emitter finish writing released blocks, and
    /// closes the FIFOs.
    pub fn stop(mut self) -> CounterSnapshot {
        self.shutdown();
        self.counters.snapshot()
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.ingest.take() {
            let _ = h.join();
        }
        if let Some(h) = self.emitter.take() {
            let _ = h.join();
        }
    }
}

impl Drop for ReceiverHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Runs `core` on `socket`: one thread reads and stages datagrams, another
/// writes released blocks to the FIFOs so a full FIFO never stalls the
/// socket.
pub fn spawn_udp_receiver(socket: UdpSocket, mut core: ReceiverCore, writers: FifoWriters) -> io::Result<ReceiverHandle> {
    socket.set_read_timeout(Some(READ_TIMEOUT))?;
    let local_addr = socket.local_addr()?;
    let port = local_addr.port();
    let stop = Arc::new(AtomicBool::new(false));
    let counters = core.counters().clone();
    let (release_tx, release_rx) = crossbeam_channel::unbounded();

    let ingest_stop = stop.clone();
    let ingest = std::thread::Builder::new().name("bmac-ingest".into()).spawn(move || {
        let mut buf = vec![0u8; 65536];
        while !ingest_stop.load(Ordering::Relaxed) {
            let released = match socket.recv_from(&mut buf) {
                Ok((len, _)) => core.on_datagram(port, &buf[..len], Instant::now()),
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                    core.poll(Instant::now())
                }
                Err(_) => break,
            };
            for b in released {
                if release_tx.send(b).is_err() {
                    return;
                }
            }
        }
    })?;

    let emitter = std::thread::Builder::new().name("bmac-emit".into()).spawn(move || {
        for mut entries in release_rx {
            if let Some(b) = entries.block.as_mut() {
                b.emitted_at = Some(Instant::now());
            }
            if writers.write_block(entries).is_err() {
                return;
            }
        }
    })?;

    Ok(ReceiverHandle {
        stop,
        counters,
        local_addr,
        ingest: Some(ingest),
        emitter: Some(emitter),
    })
}
