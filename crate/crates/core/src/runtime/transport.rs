//! Delivery of message batches between supersteps.

use std::io::{BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::runtime::message::Message;

/// Moves one superstep's outgoing messages to their destinations and
/// returns them as received.
pub trait Transport: Send {
    fn deliver(&mut self, batch: Vec<Message>) -> Result<Vec<Message>>;

    /// Bytes put on the wire so far.
    fn bytes_moved(&self) -> u64 {
        0
    }
}

/// Hands messages over in memory.
#[derive(Debug, Default)]
pub struct InProcess;

impl Transport for InProcess {
    fn deliver(&mut self, batch: Vec<Message>) -> Result<Vec<Message>> {
        Ok(batch)
    }
}

/// Sends every frame through a loopback TCP connection and decodes it on
/// the other side.
pub struct Loopback {
    tx: TcpStream,
    rx: BufReader<TcpStream>,
    bytes: u64,
}

impl Loopback {
    pub fn connect() -> Result<Self> {
        let listener = TcpListener::bind(("127.0.0.1", 0))?;
        let tx = TcpStream::connect(listener.local_addr()?)?;
        let (rx, _) = listener.accept()?;
        tx.set_nodelay(true)?;
        Ok(Self {
            tx,
            rx: BufReader::new(rx),
            bytes: 0,
        })
    }
}

impl Transport for Loopback {
    fn deliver(&mut self, batch: Vec<Message>) -> Result<Vec<Message>> {
        let mut wire = Vec::new();
        for m in &batch {
            m.encode_into(&mut wire)?;
        }
        self.bytes += wire.len() as u64;
        let count = batch.len();
        drop(batch);
        let tx = &self.tx;
        let rx = &mut self.rx;
        std::thread::scope(|s| {
            let writer = s.spawn(move || -> std::io::Result<()> {
                let mut w = BufWriter::new(tx);
                w.write_all(&wire)?;
                w.flush()
            });
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                match Message::decode(rx)? {
                    Some(m) => out.push(m),
                    None => return Err(Error::Frame("loopback closed mid-batch".into())),
                }
            }
            writer
                .join()
                .map_err(|_| Error::Frame("loopback writer panicked".into()))??;
            Ok(out)
        })
    }

    fn bytes_moved(&self) -> u64 {
        self.bytes
    }
}

/// Shared handle to the frames a [`Recording`] has captured.
#[derive(Clone, Debug, Default)]
pub struct TraceSink(Arc<Mutex<Vec<u8>>>);

impl TraceSink {
    pub fn bytes(&self) -> Vec<u8> {
        self.0.lock().expect("trace lock poisoned").clone()
    }
}

/// Wraps a transport and appends every delivered frame to a trace.
pub struct Recording<T> {
    inner: T,
    sink: TraceSink,
}

impl<T: Transport> Recording<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            sink: TraceSink::default(),
        }
    }

    pub fn sink(&self) -> TraceSink {
        self.sink.clone()
    }
}

impl<T: Transport> Transport for Recording<T> {
    fn deliver(&mut self, batch: Vec<Message>) -> Result<Vec<Message>> {
        let out = self.inner.deliver(batch)?;
        let mut trace = self.sink.0.lock().expect("trace lock poisoned");
        for m in &out {
            m.encode_into(&mut trace)?;
        }
        Ok(out)
    }

    fn bytes_moved(&self) -> u64 {
        self.inner.bytes_moved()
    }
}

/// Delivers the payloads stored in a trace instead of the ones produced
/// by the agents. Headers must match the trace exactly.
pub struct Replay {
    trace: Vec<u8>,
    pos: usize,
}

impl Replay {
    pub fn new(trace: Vec<u8>) -> Self {
        Self { trace, pos: 0 }
    }

    pub fn exhausted(&self) -> bool {
        self.pos == self.trace.len()
    }
}

impl Transport for Replay {
    fn deliver(&mut self, batch: Vec<Message>) -> Result<Vec<Message>> {
        let mut out = Vec::with_capacity(batch.len());
        for live in batch {
            let mut cursor = &self.trace[self.pos..];
            let before = cursor.len();
            let logged = Message::decode(&mut cursor)?
                .ok_or_else(|| Error::ProtocolViolation("trace ended before the run".into()))?;
            self.pos += before - cursor.len();
            if logged.header()? != live.header()? {
                return Err(Error::ProtocolViolation(format!(
                    "trace diverged: expected {} {}→{} layer {}, logged {} {}→{} layer {}",
                    live.kind.name(),
                    live.src,
                    live.dst,
                    live.layer,
                    logged.kind.name(),
                    logged.src,
                    logged.dst,
                    logged.layer
                )));
            }
            out.push(logged);
        }
        Ok(out)
    }
}
