//! Checkpoint files.
//!
//! Little-endian layout:
//!
//! | field            | type                                   |
//! |------------------|----------------------------------------|
//! | magic            | 9 bytes `SFDQN-CK\0`                   |
//! | version          | u16 (currently 1)                      |
//! | training step    | u64                                    |
//! | variant          | u8 (0 shallow, 1 deep, 2 custom)       |
//! | input height     | u16                                    |
//! | input width      | u16                                    |
//! | conv count       | u16                                    |
//! | per conv         | filters u16, kernel u16, pool_after u8 |
//! | joint width      | u16                                    |
//! | hidden count     | u16                                    |
//! | per hidden layer | width u32                              |
//! | outputs          | u16                                    |
//! | angle scale      | f64                                    |
//! | velocity scale   | f64                                    |
//! | parameter count  | u64                                    |
//! | parameters       | f64 × count, declaration order         |
//! | SHA-256          | 32 bytes over every preceding byte     |

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ArchVariant, ConvSpec, NetworkArch, QNetwork};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 9] = b"SFDQN-CK\0";
pub const CHECKPOINT_VERSION: u16 = 1;
const HASH_LEN: usize = 32;

/// A network snapshot tagged with the training step that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub net: QNetwork,
}

pub fn save_checkpoint(net: &QNetwork, step: u64, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(net, step)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}

fn u16_field(v: usize, what: &str) -> Result<[u8; 2]> {
    u16::try_from(v)
        .map(u16::to_le_bytes)
        .map_err(|_| Error::Config(format!("{what} {v} does not fit the checkpoint format")))
}

pub fn encode_checkpoint(net: &QNetwork, step: u64) -> Result<Vec<u8>> {
    let arch = net.arch();
    let params = net.params();
    let mut out = Vec::with_capacity(128 + params.len() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&step.to_le_bytes());
    out.push(arch.variant.code());
    out.extend_from_slice(&u16_field(arch.input_height, "input height")?);
    out.extend_from_slice(&u16_field(arch.input_width, "input width")?);
    out.extend_from_slice(&u16_field(arch.convs.len(), "conv count")?);
    for c in &arch.convs {
        out.extend_from_slice(&u16_field(c.filters, "filter count")?);
        out.extend_from_slice(&u16_field(c.kernel, "kernel size")?);
        out.push(c.pool_after as u8);
    }
    out.extend_from_slice(&u16_field(arch.joint_width, "joint width")?);
    out.extend_from_slice(&u16_field(arch.hidden.len(), "hidden count")?);
    for &h in &arch.hidden {
        let h = u32::try_from(h).map_err(|_| Error::Config(format!("hidden width {h} too large")))?;
        out.extend_from_slice(&h.to_le_bytes());
    }
    out.extend_from_slice(&u16_field(arch.outputs, "output count")?);
    out.extend_from_slice(&arch.angle_scale.to_le_bytes());
    out.extend_from_slice(&arch.velocity_scale.to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.pos as u64, "checkpoint ends early"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<usize> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")) as usize)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "bad magic, not an SFDQN checkpoint"));
    }
    if bytes.len() < CHECKPOINT_MAGIC.len() + HASH_LEN {
        return Err(Error::Corrupt);
    }
    let (body, hash) = bytes.split_at(bytes.len() - HASH_LEN);
    if Sha256::digest(body).as_slice() != hash {
        return Err(Error::Corrupt);
    }
    let mut r = Reader {
        bytes: body,
        pos: CHECKPOINT_MAGIC.len(),
    };
    let version = r.u16()? as u16;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(9, format!("unsupported checkpoint version {version}")));
    }
    let step = r.u64()?;
    let at = r.pos as u64;
    let variant = ArchVariant::from_code(r.u8()?).ok_or_else(|| Error::format(at, "unknown architecture variant"))?;
    let input_height = r.u16()?;
    let input_width = r.u16()?;
    let n_conv = r.u16()?;
    let mut convs = Vec::with_capacity(n_conv);
    for _ in 0..n_conv {
        let filters = r.u16()?;
        let kernel = r.u16()?;
        let pool_after = r.u8()? != 0;
        convs.push(ConvSpec {
            filters,
            kernel,
            pool_after,
        });
    }
    let joint_width = r.u16()?;
    let n_hidden = r.u16()?;
    let hidden = (0..n_hidden).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let outputs = r.u16()?;
    let angle_scale = r.f64()?;
    let velocity_scale = r.f64()?;
    let arch = NetworkArch {
        variant,
        input_height,
        input_width,
        convs,
        joint_width,
        hidden,
        outputs,
        angle_scale,
        velocity_scale,
    };
    let at = r.pos as u64;
    let count = r.u64()?;
    let expected = arch.param_count().map_err(|e| Error::format(at, format!("invalid architecture: {e}")))?;
    if count != expected as u64 {
        return Err(Error::ArchMismatch(format!(
            "descriptor implies {expected} parameters, file stores {count}"
        )));
    }
    let raw = r.take(expected * 8)?;
    if r.pos != body.len() {
        return Err(Error::format(r.pos as u64, "trailing bytes before the hash"));
    }
    let params = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Checkpoint {
        step,
        net: QNetwork::from_params(arch, params)?,
    })
}
