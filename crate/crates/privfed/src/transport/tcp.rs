//! Two-party transport over real TCP sockets.
//!
//! Uses the same frame codec and meter semantics as the simulator, so a
//! protocol run over loopback reports identical message/round counts to a
//! simulated run; only wall-clock time differs.

use super::{Frame, Meter, MeterState, Net};
use crate::error::{Error, Result};
use std::io::{BufReader, BufWriter, Write};
use std::net::{TcpStream, ToSocketAddrs};

pub struct TcpNet {
    me: usize,
    peer: usize,
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    meter: MeterState,
}

impl TcpNet {
    /// Wrap an accepted connection as party `me` of a two-party session.
    pub fn from_stream(stream: TcpStream, me: usize) -> Result<TcpNet> {
        let reader = BufReader::new(stream.try_clone()?);
        let writer = BufWriter::new(stream);
        Ok(TcpNet { me, peer: 1 - me, reader, writer, meter: MeterState::default() })
    }

    /// Connect to a server; the connecting side is party 1.
    pub fn connect(addr: impl ToSocketAddrs) -> Result<TcpNet> {
        let stream = TcpStream::connect(addr)
            .map_err(|e| Error::Transport(format!("connect failed: {e}")))?;
        stream.set_nodelay(true).ok();
        Self::from_stream(stream, 1)
    }
}

impl Net for TcpNet {
    fn me(&self) -> usize {
        self.me
    }

    fn n_parties(&self) -> usize {
        2
    }

    fn send(&mut self, to: usize, frame: Frame) -> Result<()> {
        if to != self.peer {
            return Err(Error::Parameter(format!(
                "tcp endpoint for party {} only reaches {}",
                self.me, self.peer
            )));
        }
        let bytes = frame.encode();
        self.writer
            .write_all(&bytes)
            .and_then(|_| self.writer.flush())
            .map_err(|e| Error::Transport(format!("send failed: {e}")))?;
        self.meter.on_send(bytes.len());
        Ok(())
    }

    fn recv(&mut self, from: usize) -> Result<Frame> {
        if from != self.peer {
            return Err(Error::Parameter(format!(
                "tcp endpoint for party {} only reaches {}",
                self.me, self.peer
            )));
        }
        let frame = Frame::read_from(&mut self.reader)?;
        self.meter.on_recv(frame.encoded_len());
        Ok(frame)
    }

    fn meter(&self) -> Meter {
        self.meter.snapshot()
    }
}
