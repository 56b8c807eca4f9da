//! Trained-network files.
//!
//! Layout, little-endian:
//!
//! ```text
//! magic    8 bytes  "MSERUNFD"
//! version  u32      1
//! n_tx, n_rf_tx, users               u32 each
//! per user (n_rx, n_rf_rx, streams)  u32 each
//! constellation  u32  0 for QPSK, otherwise the QAM order
//! layers   u32
//! power budget, loss width, last-layer analog step   f64 each
//! parameters of every layer in declaration order     f64 each
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::channel::dataset::Reader;
use crate::gd::Steps;
use crate::transceiver::Constellation;
use crate::{Error, Result};

use super::params::{NetworkShape, UnfoldNetwork};

pub const NETWORK_MAGIC: &[u8; 8] = b"MSERUNFD";
pub const NETWORK_VERSION: u32 = 1;

pub fn save_network(path: &Path, net: &UnfoldNetwork) -> Result<()> {
    let mut buf = Vec::new();
    let u = |buf: &mut Vec<u8>, x: usize| buf.extend_from_slice(&(x as u32).to_le_bytes());
    buf.extend_from_slice(NETWORK_MAGIC);
    buf.extend_from_slice(&NETWORK_VERSION.to_le_bytes());
    let s = &net.shape;
    u(&mut buf, s.n_tx);
    u(&mut buf, s.n_rf_tx);
    u(&mut buf, s.n_users());
    for k in 0..s.n_users() {
        u(&mut buf, s.n_rx_per_user[k]);
        u(&mut buf, s.n_rf_rx_per_user[k]);
        u(&mut buf, s.streams_per_user[k]);
    }
    let code = match net.constellation {
        Constellation::Qpsk => 0,
        Constellation::Qam { order } => order as usize,
    };
    u(&mut buf, code);
    u(&mut buf, net.n_layers());
    for x in [net.power_budget, net.rho, net.final_step_theta_f] {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    for layer in &net.layers {
        for x in layer.to_vec() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    out.write_all(&buf).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_network(path: &Path) -> Result<UnfoldNetwork> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
        path,
    };
    let magic: [u8; 8] = r.bytes("magic")?;
    if &magic != NETWORK_MAGIC {
        return Err(Error::format(path, "not a network file (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != NETWORK_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let n_tx = r.u32("dimensions")? as usize;
    let n_rf_tx = r.u32("dimensions")? as usize;
    let users = r.u32("user count")? as usize;
    if users == 0 || users > 4096 || n_tx == 0 || n_rf_tx == 0 {
        return Err(Error::format(path, "invalid dimensions"));
    }
    let mut shape = NetworkShape {
        n_tx,
        n_rf_tx,
        n_rx_per_user: Vec::new(),
        n_rf_rx_per_user: Vec::new(),
        streams_per_user: Vec::new(),
    };
    for _ in 0..users {
        let a = r.u32("dimensions")? as usize;
        let b = r.u32("dimensions")? as usize;
        let c = r.u32("dimensions")? as usize;
        if a == 0 || b == 0 || c == 0 {
            return Err(Error::format(path, "zero dimension"));
        }
        shape.n_rx_per_user.push(a);
        shape.n_rf_rx_per_user.push(b);
        shape.streams_per_user.push(c);
    }
    let constellation = match r.u32("constellation")? {
        0 => Constellation::Qpsk,
        order => Constellation::Qam { order },
    };
    constellation.validate().map_err(|e| Error::format(path, e.to_string()))?;
    let layers = r.u32("layer count")? as usize;
    if layers == 0 || layers > 100_000 {
        return Err(Error::format(path, format!("invalid layer count {layers}")));
    }
    let power_budget = r.f64("scalars")?;
    let rho = r.f64("scalars")?;
    let final_step = r.f64("scalars")?;
    let steps = Steps {
        p: 0.0,
        w: 0.0,
        theta_u: 0.0,
        theta_f: final_step,
    };
    let mut net = UnfoldNetwork::descent(shape, constellation, layers, steps, rho, power_budget)?;
    for layer in &mut net.layers {
        let n = layer.real_count();
        let values = (0..n).map(|_| r.f64("parameters")).collect::<Result<Vec<_>>>()?;
        layer.assign(&values);
    }
    let mut rest = Vec::new();
    r.inner.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    if !rest.is_empty() {
        return Err(Error::format(path, format!("{} trailing bytes", rest.len())));
    }
    Ok(net)
}
