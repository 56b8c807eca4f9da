//! Binary channel dataset files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic    8 bytes  "MSERCHAN"
//! version  u32      1
//! users    u32      K
//! dims     K x (u32 n_rx, u32 n_tx)
//! count    u64
//! data     count x K matrices, row-major, each entry (f64 re, f64 im)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ChannelModel, ChannelRealization};
use crate::{CMat, Error, Result, C64};

pub const DATASET_MAGIC: &[u8; 8] = b"MSERCHAN";
pub const DATASET_VERSION: u32 = 1;

/// Write realizations sharing one set of dimensions.
pub fn save_dataset(path: &Path, realizations: &[ChannelRealization]) -> Result<()> {
    let dims: Vec<(usize, usize)> = match realizations.first() {
        Some(r) => r.matrices.iter().map(|h| h.shape()).collect(),
        None => return Err(Error::InvalidArgument("cannot save an empty dataset".into())),
    };
    for r in realizations {
        let d: Vec<_> = r.matrices.iter().map(|h| h.shape()).collect();
        if d != dims {
            return Err(Error::Dimension("realizations in a dataset must share dimensions".into()));
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = |bytes: &[u8]| out.write_all(bytes).map_err(|e| Error::io(path, e));
    write(DATASET_MAGIC)?;
    write(&DATASET_VERSION.to_le_bytes())?;
    write(&(dims.len() as u32).to_le_bytes())?;
    for &(nr, nt) in &dims {
        write(&(nr as u32).to_le_bytes())?;
        write(&(nt as u32).to_le_bytes())?;
    }
    write(&(realizations.len() as u64).to_le_bytes())?;
    let mut buf = Vec::new();
    for r in realizations {
        for h in &r.matrices {
            buf.clear();
            for i in 0..h.nrows() {
                for j in 0..h.ncols() {
                    buf.extend_from_slice(&h[(i, j)].re.to_le_bytes());
                    buf.extend_from_slice(&h[(i, j)].im.to_le_bytes());
                }
            }
            write(&buf)?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub(crate) struct Reader<'a, R> {
    pub(crate) inner: R,
    pub(crate) path: &'a Path,
}

impl<R: Read> Reader<'_, R> {
    pub(crate) fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::format(self.path, format!("truncated while reading {what}"))
            } else {
                Error::io(self.path, e)
            }
        })?;
        Ok(b)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(what)?))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(what)?))
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(what)?))
    }
}

/// Read a dataset written by [`save_dataset`]. Realizations get their
/// index as seed and [`ChannelModel::External`] as model tag.
pub fn load_dataset(path: &Path) -> Result<Vec<ChannelRealization>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut r = Reader {
        inner: BufReader::new(file),
        path,
    };
    let magic: [u8; 8] = r.bytes("magic")?;
    if &magic != DATASET_MAGIC {
        return Err(Error::format(path, "not a channel dataset (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != DATASET_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let users = r.u32("user count")? as usize;
    if users == 0 {
        return Err(Error::format(path, "zero users"));
    }
    let mut dims = Vec::with_capacity(users.min(1024));
    for _ in 0..users {
        let nr = r.u32("dimensions")? as usize;
        let nt = r.u32("dimensions")? as usize;
        if nr == 0 || nt == 0 {
            return Err(Error::format(path, "zero matrix dimension"));
        }
        dims.push((nr, nt));
    }
    if dims.iter().any(|&(_, nt)| nt != dims[0].1) {
        return Err(Error::format(path, "users disagree on the transmit dimension"));
    }
    let count = r.u64("count")?;
    let header = 8 + 4 + 4 + 8 * users as u64 + 8;
    let per: u64 = dims.iter().map(|&(a, b)| (a * b) as u64 * 16).sum();
    let expected = count.checked_mul(per).and_then(|x| x.checked_add(header));
    match expected {
        Some(e) if e == len => {}
        Some(e) if e > len => return Err(Error::format(path, format!("truncated: expected {e} bytes, found {len}"))),
        _ => {
            return Err(Error::format(
                path,
                format!("size mismatch: header implies more data than {len} bytes or trailing bytes present"),
            ))
        }
    }
    let mut out = Vec::with_capacity(count as usize);
    for idx in 0..count {
        let mut matrices = Vec::with_capacity(users);
        for &(nr, nt) in &dims {
            let mut h = CMat::zeros(nr, nt);
            for i in 0..nr {
                for j in 0..nt {
                    let re = r.f64("matrix data")?;
                    let im = r.f64("matrix data")?;
                    h[(i, j)] = C64::new(re, im);
                }
            }
            matrices.push(h);
        }
        out.push(ChannelRealization {
            matrices,
            seed: idx,
            model: ChannelModel::External,
        });
    }
    Ok(out)
}

/// Check that every realization matches the expected system dimensions.
pub fn check_dimensions(realizations: &[ChannelRealization], n_tx: usize, n_rx_per_user: &[usize]) -> Result<()> {
    for (i, r) in realizations.iter().enumerate() {
        let ok = r.n_users() == n_rx_per_user.len() && r.matrices.iter().zip(n_rx_per_user).all(|(h, &nr)| h.shape() == (nr, n_tx));
        if !ok {
            return Err(Error::Dimension(format!(
                "realization {i} does not match n_tx = {n_tx}, n_rx = {n_rx_per_user:?}"
            )));
        }
    }
    Ok(())
}
