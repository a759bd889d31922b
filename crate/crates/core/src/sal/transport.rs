//! Byte-stream transports carrying wire frames: TCP for real deployments,
//! channel pairs for in-process page stores. Both move the exact same
//! frames, so byte accounting is identical either way.

use crate::pagestore::PageStoreNode;
use crate::wire::{read_frame, write_frame, WireError};
use crossbeam_channel::{Receiver, Sender};
use std::io::{BufReader, BufWriter};
use std::net::TcpStream;
use std::sync::Arc;

#[derive(Clone)]
pub enum Endpoint {
    Tcp(String),
    InProc(Arc<PageStoreNode>),
}

impl std::fmt::Debug for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Endpoint::Tcp(addr) => write!(f, "tcp({addr})"),
            Endpoint::InProc(node) => write!(f, "inproc(store {})", node.store_id),
        }
    }
}

impl Endpoint {
    pub fn connect(&self) -> Result<Connection, WireError> {
        match self {
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr)?;
                stream.set_nodelay(true)?;
                let reader = BufReader::new(stream.try_clone()?);
                Ok(Connection::Tcp { reader, writer: BufWriter::new(stream) })
            }
            Endpoint::InProc(node) => {
                let (tx, rx) = node.connect_inproc();
                Ok(Connection::InProc { tx, rx })
            }
        }
    }
}

pub enum Connection {
    Tcp { reader: BufReader<TcpStream>, writer: BufWriter<TcpStream> },
    InProc { tx: Sender<Vec<u8>>, rx: Receiver<Vec<u8>> },
}

impl Connection {
    pub fn send_frame(&mut self, frame: &[u8]) -> Result<(), WireError> {
        match self {
            Connection::Tcp { writer, .. } => write_frame(writer, frame),
            Connection::InProc { tx, .. } => tx
                .send(frame.to_vec())
                .map_err(|_| WireError::Io(std::io::Error::other("in-proc peer gone"))),
        }
    }

    /// Receives the next frame; `None` on orderly close.
    pub fn recv_frame(&mut self) -> Result<Option<Vec<u8>>, WireError> {
        match self {
            Connection::Tcp { reader, .. } => read_frame(reader),
            Connection::InProc { rx, .. } => Ok(rx.recv().ok()),
        }
    }
}
