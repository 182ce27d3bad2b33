//! Binary trace container. All integers and floats are little-endian.
//!
//! Header: `CTRC`, version `u16`, sample rate `f64`, bit time `f64`,
//! channel flags `u8` (bit 0 CAN-H, bit 1 CAN-L), trace count `u32`.
//! Each trace: CAN id `u16`, label length `u16` and UTF-8 bytes, attacker
//! `u8`, network tag `u8` (`0xFF` when untagged), CAN-H and CAN-L sample
//! counts `u32`, then the CAN-H and CAN-L `f32` arrays.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::bussim::{NetworkConfig, RawTrace};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"CTRC";
pub const VERSION: u16 = 1;
pub const CHANNEL_CAN_H: u8 = 0b01;
pub const CHANNEL_CAN_L: u8 = 0b10;
const UNTAGGED: u8 = 0xFF;

/// Traces sharing one sample rate and bit time.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub sample_rate: f64,
    pub bit_time: f64,
    pub channels: u8,
    pub traces: Vec<RawTrace>,
}

impl TraceFile {
    /// Both channels present; fails on mixed rates.
    pub fn from_traces(traces: Vec<RawTrace>) -> Result<Self> {
        let first = traces.first().ok_or(Error::Empty("trace list"))?;
        let (sample_rate, bit_time) = (first.sample_rate, first.bit_time);
        if traces.iter().any(|t| t.sample_rate != sample_rate || t.bit_time != bit_time) {
            return Err(Error::TraceFormat("traces differ in sample rate or bit time".into()));
        }
        Ok(Self {
            sample_rate,
            bit_time,
            channels: CHANNEL_CAN_H | CHANNEL_CAN_L,
            traces,
        })
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        if self.traces.len() > u32::MAX as usize {
            return Err(Error::TraceFormat("too many traces".into()));
        }
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.sample_rate.to_le_bytes())?;
        w.write_all(&self.bit_time.to_le_bytes())?;
        w.write_all(&[self.channels])?;
        w.write_all(&(self.traces.len() as u32).to_le_bytes())?;
        for t in &self.traces {
            if t.sample_rate != self.sample_rate || t.bit_time != self.bit_time {
                return Err(Error::TraceFormat("trace rate differs from the header".into()));
            }
            let label = t.source_label.as_bytes();
            let label_len =
                u16::try_from(label.len()).map_err(|_| Error::TraceFormat("source label too long".into()))?;
            let (nh, nl) = (self.channel_len(CHANNEL_CAN_H, &t.can_h)?, self.channel_len(CHANNEL_CAN_L, &t.can_l)?);
            w.write_all(&t.tx_id.to_le_bytes())?;
            w.write_all(&label_len.to_le_bytes())?;
            w.write_all(label)?;
            w.write_all(&[u8::from(t.attacker)])?;
            w.write_all(&[t.network.map_or(UNTAGGED, NetworkConfig::index)])?;
            w.write_all(&nh.to_le_bytes())?;
            w.write_all(&nl.to_le_bytes())?;
            write_f32s(w, &t.can_h)?;
            write_f32s(w, &t.can_l)?;
        }
        Ok(())
    }

    fn channel_len(&self, flag: u8, samples: &[f32]) -> Result<u32> {
        if self.channels & flag == 0 && !samples.is_empty() {
            return Err(Error::TraceFormat("samples present for a channel flagged absent".into()));
        }
        u32::try_from(samples.len()).map_err(|_| Error::TraceFormat("trace too long".into()))
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if magic != MAGIC {
            return Err(Error::TraceFormat("bad magic".into()));
        }
        let version = u16::from_le_bytes(take(r)?);
        if version != VERSION {
            return Err(Error::TraceFormat(format!("unsupported version {version}")));
        }
        let sample_rate = f64::from_le_bytes(take(r)?);
        let bit_time = f64::from_le_bytes(take(r)?);
        if !(sample_rate > 0.0 && bit_time > 0.0) {
            return Err(Error::TraceFormat("non-positive sample rate or bit time".into()));
        }
        let [channels] = take::<1, _>(r)?;
        if channels & !(CHANNEL_CAN_H | CHANNEL_CAN_L) != 0 {
            return Err(Error::TraceFormat(format!("unknown channel flags {channels:#04b}")));
        }
        let count = u32::from_le_bytes(take(r)?) as usize;
        let mut traces = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let tx_id = u16::from_le_bytes(take(r)?);
            let label_len = u16::from_le_bytes(take(r)?) as usize;
            let mut label = vec![0u8; label_len];
            read_exact(r, &mut label)?;
            let source_label =
                String::from_utf8(label).map_err(|_| Error::TraceFormat("source label is not UTF-8".into()))?;
            let attacker = match take::<1, _>(r)? {
                [0] => false,
                [1] => true,
                [b] => return Err(Error::TraceFormat(format!("attacker flag {b}"))),
            };
            let network = match take::<1, _>(r)? {
                [UNTAGGED] => None,
                [n] => Some(NetworkConfig::new(n).map_err(|_| Error::TraceFormat(format!("network tag {n}")))?),
            };
            let nh = u32::from_le_bytes(take(r)?) as usize;
            let nl = u32::from_le_bytes(take(r)?) as usize;
            for (flag, n) in [(CHANNEL_CAN_H, nh), (CHANNEL_CAN_L, nl)] {
                if channels & flag == 0 && n != 0 {
                    return Err(Error::TraceFormat("samples declared for an absent channel".into()));
                }
            }
            let can_h = read_f32s(r, nh)?;
            let can_l = read_f32s(r, nl)?;
            traces.push(RawTrace {
                can_h,
                can_l,
                sample_rate,
                bit_time,
                tx_id,
                source_label,
                attacker,
                network,
            });
        }
        let mut probe = [0u8; 1];
        if r.read(&mut probe)? != 0 {
            return Err(Error::TraceFormat("trailing bytes after the last trace".into()));
        }
        Ok(Self {
            sample_rate,
            bit_time,
            channels,
            traces,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::TraceFormat("truncated file".into()),
        _ => e.into(),
    })
}

fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    read_exact(r, &mut b)?;
    Ok(b)
}

fn write_f32s<W: Write>(w: &mut W, xs: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 4);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; n.checked_mul(4).ok_or_else(|| Error::TraceFormat("sample count overflow".into()))?];
    read_exact(r, &mut buf)?;
    Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}
