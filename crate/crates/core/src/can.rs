//! Bit-level CAN 2.0A data frames: CRC-15, bit stuffing and per-bit field labels.

use std::fmt;

use thiserror::Error;

pub const MAX_ID: u16 = 0x7FF;
pub const MAX_DLC: u8 = 8;
pub const CRC15_POLY: u16 = 0x4599;
const CRC15_MASK: u16 = 0x7FFF;

/// Identical consecutive bits after which a complementary bit is inserted.
pub const STUFF_RUN: usize = 5;
pub const EOF_LEN: usize = 7;

/// Bit values: `false` is dominant (0), `true` is recessive (1).
pub const DOMINANT: bool = false;
pub const RECESSIVE: bool = true;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CanError {
    #[error("identifier {0:#x} exceeds 11 bits")]
    InvalidId(u16),
    #[error("data length code {0} exceeds 8")]
    DlcTooLarge(u8),
    #[error("remote frames carry no data")]
    RemoteWithData,
    #[error("stuffing violation at bit {0}")]
    StuffingViolation(usize),
    #[error("CRC mismatch: computed {computed:#06x}, received {received:#06x}")]
    CrcMismatch { computed: u16, received: u16 },
    #[error("malformed {0}")]
    Malformed(&'static str),
    #[error("extended identifiers are not supported")]
    Extended,
    #[error("bitstream ends early")]
    Truncated,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CanFrame {
    id: u16,
    rtr: bool,
    dlc: u8,
    data: Vec<u8>,
}

impl CanFrame {
    /// Data frame; the DLC is the payload length.
    pub fn new(id: u16, data: &[u8]) -> Result<Self, CanError> {
        if id > MAX_ID {
            return Err(CanError::InvalidId(id));
        }
        if data.len() > MAX_DLC as usize {
            return Err(CanError::DlcTooLarge(data.len().min(255) as u8));
        }
        Ok(Self {
            id,
            rtr: false,
            dlc: data.len() as u8,
            data: data.to_vec(),
        })
    }

    /// Remote frame requesting `dlc` bytes.
    pub fn remote(id: u16, dlc: u8) -> Result<Self, CanError> {
        if id > MAX_ID {
            return Err(CanError::InvalidId(id));
        }
        if dlc > MAX_DLC {
            return Err(CanError::DlcTooLarge(dlc));
        }
        Ok(Self {
            id,
            rtr: true,
            dlc,
            data: Vec::new(),
        })
    }

    pub fn id(&self) -> u16 {
        self.id
    }

    pub fn is_remote(&self) -> bool {
        self.rtr
    }

    pub fn dlc(&self) -> u8 {
        self.dlc
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }
}

/// Label of each transmitted bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    Sof,
    Id,
    Rtr,
    Ide,
    Reserved,
    Dlc,
    Data,
    Crc,
    CrcDelim,
    Ack,
    AckDelim,
    Eof,
    Stuff,
}

impl Field {
    /// Control, data and CRC bits; the only ones sampled for fingerprints.
    pub fn is_sampling_eligible(self) -> bool {
        matches!(self, Field::Ide | Field::Reserved | Field::Dlc | Field::Data | Field::Crc)
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Field::Sof => "SOF",
            Field::Id => "ID",
            Field::Rtr => "RTR",
            Field::Ide => "IDE",
            Field::Reserved => "RESERVED",
            Field::Dlc => "DLC",
            Field::Data => "DATA",
            Field::Crc => "CRC",
            Field::CrcDelim => "CRC_DELIM",
            Field::Ack => "ACK",
            Field::AckDelim => "ACK_DELIM",
            Field::Eof => "EOF",
            Field::Stuff => "STUFF",
        };
        f.write_str(s)
    }
}

/// Bits from SOF through EOF, with the indices of inserted stuff bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StuffedBitstream {
    pub bits: Vec<bool>,
    pub stuff_positions: Vec<usize>,
}

impl StuffedBitstream {
    /// Wraps raw bits (e.g. recovered from a waveform); stuff positions are
    /// recomputed by [`decode_frame`].
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self {
            bits,
            stuff_positions: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

/// Field label per stuffed bit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldMask(Vec<Field>);

impl FieldMask {
    pub fn labels(&self) -> &[Field] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Whether bit `i` may be sampled. A stuff bit takes the eligibility of
    /// the closest preceding frame bit.
    pub fn is_eligible(&self, i: usize) -> bool {
        self.0[..=i]
            .iter()
            .rev()
            .find(|f| **f != Field::Stuff)
            .is_some_and(|f| f.is_sampling_eligible())
    }

    /// Count of eligible bits excluding stuff bits.
    pub fn eligible_frame_bits(&self) -> usize {
        self.0.iter().filter(|f| f.is_sampling_eligible()).count()
    }
}

const fn crc15_table() -> [u16; 256] {
    let mut table = [0u16; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = (i as u16) << 7;
        let mut b = 0;
        while b < 8 {
            crc = if crc & 0x4000 != 0 {
                ((crc << 1) ^ CRC15_POLY) & CRC15_MASK
            } else {
                (crc << 1) & CRC15_MASK
            };
            b += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

static CRC15_TABLE: [u16; 256] = crc15_table();

/// CRC-15/CAN over a bit sequence (zero seed, MSB first). Whole bytes go
/// through a lookup table, the tail bit by bit.
pub fn crc15(bits: &[bool]) -> u16 {
    let mut crc = 0u16;
    let chunks = bits.chunks_exact(8);
    let tail = chunks.remainder();
    for chunk in chunks {
        let byte = chunk.iter().fold(0u16, |acc, &b| (acc << 1) | b as u16);
        let idx = ((crc >> 7) ^ byte) & 0xFF;
        crc = ((crc << 8) ^ CRC15_TABLE[idx as usize]) & CRC15_MASK;
    }
    for &bit in tail {
        let feedback = bit ^ (crc & 0x4000 != 0);
        crc = (crc << 1) & CRC15_MASK;
        if feedback {
            crc ^= CRC15_POLY;
        }
    }
    crc
}

fn push_bits(bits: &mut Vec<bool>, fields: &mut Vec<Field>, value: u32, width: usize, field: Field) {
    for i in (0..width).rev() {
        bits.push((value >> i) & 1 == 1);
        fields.push(field);
    }
}

/// Unstuffed bits SOF through CRC, with labels.
fn frame_prefix(frame: &CanFrame) -> (Vec<bool>, Vec<Field>) {
    let mut bits = Vec::with_capacity(34 + 8 * frame.data.len());
    let mut fields = Vec::with_capacity(bits.capacity());
    push_bits(&mut bits, &mut fields, 0, 1, Field::Sof);
    push_bits(&mut bits, &mut fields, frame.id as u32, 11, Field::Id);
    push_bits(&mut bits, &mut fields, frame.rtr as u32, 1, Field::Rtr);
    push_bits(&mut bits, &mut fields, 0, 1, Field::Ide);
    push_bits(&mut bits, &mut fields, 0, 1, Field::Reserved);
    push_bits(&mut bits, &mut fields, frame.dlc as u32, 4, Field::Dlc);
    for &byte in &frame.data {
        push_bits(&mut bits, &mut fields, byte as u32, 8, Field::Data);
    }
    let crc = crc15(&bits);
    push_bits(&mut bits, &mut fields, crc as u32, 15, Field::Crc);
    (bits, fields)
}

/// Encodes a frame into its stuffed bitstream and aligned field labels.
pub fn encode_frame(frame: &CanFrame) -> Result<(StuffedBitstream, FieldMask), CanError> {
    if frame.id > MAX_ID {
        return Err(CanError::InvalidId(frame.id));
    }
    if frame.dlc > MAX_DLC {
        return Err(CanError::DlcTooLarge(frame.dlc));
    }
    if frame.rtr && !frame.data.is_empty() {
        return Err(CanError::RemoteWithData);
    }
    if !frame.rtr && frame.data.len() != frame.dlc as usize {
        return Err(CanError::Malformed("data length differs from DLC"));
    }
    let (raw, raw_fields) = frame_prefix(frame);
    let mut bits = Vec::with_capacity(raw.len() + raw.len() / 4 + 10);
    let mut fields = Vec::with_capacity(bits.capacity());
    let mut stuff_positions = Vec::new();
    let mut run = 0usize;
    let mut last = None;
    for (&b, &f) in raw.iter().zip(&raw_fields) {
        if last == Some(b) {
            run += 1;
        } else {
            run = 1;
            last = Some(b);
        }
        bits.push(b);
        fields.push(f);
        if run == STUFF_RUN {
            stuff_positions.push(bits.len());
            bits.push(!b);
            fields.push(Field::Stuff);
            last = Some(!b);
            run = 1;
        }
    }
    for (value, field) in [(RECESSIVE, Field::CrcDelim), (RECESSIVE, Field::Ack), (RECESSIVE, Field::AckDelim)] {
        bits.push(value);
        fields.push(field);
    }
    for _ in 0..EOF_LEN {
        bits.push(RECESSIVE);
        fields.push(Field::Eof);
    }
    Ok((StuffedBitstream { bits, stuff_positions }, FieldMask(fields)))
}

/// Removes stuff bits while reading up to `want` frame bits.
struct Destuffer<'a> {
    bits: &'a [bool],
    pos: usize,
    run: usize,
    last: Option<bool>,
    out: Vec<bool>,
    stuff_positions: Vec<usize>,
}

impl<'a> Destuffer<'a> {
    fn read_to(&mut self, want: usize) -> Result<(), CanError> {
        while self.out.len() < want {
            let b = *self.bits.get(self.pos).ok_or(CanError::Truncated)?;
            self.pos += 1;
            self.push(b);
            if self.run == STUFF_RUN {
                self.take_stuff()?;
            }
        }
        Ok(())
    }

    fn push(&mut self, b: bool) {
        if self.last == Some(b) {
            self.run += 1;
        } else {
            self.run = 1;
            self.last = Some(b);
        }
        self.out.push(b);
    }

    fn take_stuff(&mut self) -> Result<(), CanError> {
        let at = self.pos;
        let b = *self.bits.get(at).ok_or(CanError::Truncated)?;
        if Some(b) == self.last {
            return Err(CanError::StuffingViolation(at));
        }
        self.stuff_positions.push(at);
        self.pos += 1;
        self.last = Some(b);
        self.run = 1;
        Ok(())
    }
}

fn read_uint(bits: &[bool]) -> u32 {
    bits.iter().fold(0, |acc, &b| (acc << 1) | b as u32)
}

/// Inverse of [`encode_frame`]. The ACK slot may be either level.
pub fn decode_frame(stream: &StuffedBitstream) -> Result<CanFrame, CanError> {
    let mut d = Destuffer {
        bits: &stream.bits,
        pos: 0,
        run: 0,
        last: None,
        out: Vec::with_capacity(stream.bits.len()),
        stuff_positions: Vec::new(),
    };
    d.read_to(19)?;
    if d.out[0] != DOMINANT {
        return Err(CanError::Malformed("start of frame"));
    }
    let id = read_uint(&d.out[1..12]) as u16;
    let rtr = d.out[12];
    if d.out[13] != DOMINANT {
        return Err(CanError::Extended);
    }
    let dlc = read_uint(&d.out[15..19]) as u8;
    if dlc > MAX_DLC {
        return Err(CanError::DlcTooLarge(dlc));
    }
    let data_bits = if rtr { 0 } else { 8 * dlc as usize };
    let crc_start = 19 + data_bits;
    d.read_to(crc_start + 15)?;
    let computed = crc15(&d.out[..crc_start]);
    let received = read_uint(&d.out[crc_start..crc_start + 15]) as u16;
    if computed != received {
        return Err(CanError::CrcMismatch { computed, received });
    }
    let mut pos = d.pos;
    let tail = &stream.bits[pos.min(stream.bits.len())..];
    if tail.len() != 3 + EOF_LEN {
        return Err(if tail.len() < 3 + EOF_LEN {
            CanError::Truncated
        } else {
            CanError::Malformed("trailing bits after end of frame")
        });
    }
    if tail[0] != RECESSIVE {
        return Err(CanError::Malformed("CRC delimiter"));
    }
    if tail[2] != RECESSIVE {
        return Err(CanError::Malformed("ACK delimiter"));
    }
    if tail[3..].iter().any(|&b| b != RECESSIVE) {
        return Err(CanError::Malformed("end of frame"));
    }
    pos += tail.len();
    debug_assert_eq!(pos, stream.bits.len());
    let data = (0..data_bits / 8)
        .map(|i| read_uint(&d.out[19 + 8 * i..27 + 8 * i]) as u8)
        .collect::<Vec<_>>();
    Ok(CanFrame { id, rtr, dlc, data })
}

/// Stuffed bitstream with the field mask recomputed from its content.
pub fn frame_layout(stream: &StuffedBitstream) -> Result<(CanFrame, FieldMask), CanError> {
    let frame = decode_frame(stream)?;
    let (encoded, mask) = encode_frame(&frame)?;
    if encoded.bits[..] != stream.bits[..] {
        // Only the ACK slot may differ.
        let differs = encoded.bits.iter().zip(&stream.bits).enumerate().any(|(i, (a, b))| a != b && mask.labels()[i] != Field::Ack);
        if differs {
            return Err(CanError::Malformed("bitstream does not re-encode identically"));
        }
    }
    Ok((frame, mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Bit-serial shift register straight from the generator polynomial.
    fn crc15_oracle(bits: &[bool]) -> u16 {
        let mut reg = [false; 15];
        let taps = [14usize, 10, 8, 7, 4, 3, 0];
        for &b in bits {
            let fb = b ^ reg[14];
            for i in (1..15).rev() {
                reg[i] = reg[i - 1];
            }
            reg[0] = false;
            if fb {
                for &t in &taps {
                    reg[t] ^= true;
                }
            }
        }
        reg.iter().enumerate().fold(0, |acc, (i, &b)| acc | ((b as u16) << i))
    }

    #[test]
    fn crc_trivial_cases() {
        assert_eq!(crc15(&[]), 0);
        assert_eq!(crc15(&[false; 8]), 0);
    }

    #[test]
    fn crc_matches_oracle_on_odd_lengths() {
        for n in 0..70 {
            let bits: Vec<bool> = (0..n).map(|i| (i * 7 + n) % 3 == 0).collect();
            assert_eq!(crc15(&bits), crc15_oracle(&bits), "length {n}");
        }
    }

    #[test]
    fn zero_frame_is_stuffed_after_five_zeros() {
        let (s, mask) = encode_frame(&CanFrame::new(0, &[]).unwrap()).unwrap();
        assert_eq!(&s.bits[..6], &[false, false, false, false, false, true]);
        assert_eq!(s.stuff_positions[0], 5);
        assert_eq!(mask.labels()[5], Field::Stuff);
    }

    #[test]
    fn eight_byte_frame_has_64_data_bits() {
        let (_, mask) = encode_frame(&CanFrame::new(0x123, &[0xA5; 8]).unwrap()).unwrap();
        assert_eq!(mask.labels().iter().filter(|f| **f == Field::Data).count(), 64);
        assert_eq!(mask.labels().iter().filter(|f| **f == Field::Crc).count(), 15);
    }

    #[test]
    fn eligible_bit_count_depends_only_on_dlc() {
        for dlc in 0..=8u8 {
            let a = encode_frame(&CanFrame::new(0x7FF, &vec![0u8; dlc as usize]).unwrap()).unwrap().1;
            let b = encode_frame(&CanFrame::new(0x055, &vec![0xFFu8; dlc as usize]).unwrap()).unwrap().1;
            assert_eq!(a.eligible_frame_bits(), 21 + 8 * dlc as usize);
            assert_eq!(b.eligible_frame_bits(), 21 + 8 * dlc as usize);
        }
    }

    #[test]
    fn invalid_frames_are_rejected() {
        assert_eq!(CanFrame::new(0x800, &[]), Err(CanError::InvalidId(0x800)));
        assert_eq!(CanFrame::new(1, &[0; 9]), Err(CanError::DlcTooLarge(9)));
        assert_eq!(CanFrame::remote(1, 9), Err(CanError::DlcTooLarge(9)));
    }

    #[test]
    fn remote_frames_round_trip_without_data() {
        let f = CanFrame::remote(0x321, 4).unwrap();
        let (s, mask) = encode_frame(&f).unwrap();
        assert_eq!(decode_frame(&s).unwrap(), f);
        assert!(!mask.labels().contains(&Field::Data));
    }

    fn crc_bit_index(mask: &FieldMask) -> usize {
        mask.labels().iter().position(|f| *f == Field::Crc).unwrap()
    }

    #[test]
    fn flipped_crc_bit_is_detected() {
        let f = CanFrame::new(0x1AB, &[1, 2, 3]).unwrap();
        let (s, mask) = encode_frame(&f).unwrap();
        let mut bits = s.bits.clone();
        let i = crc_bit_index(&mask) + 3;
        bits[i] = !bits[i];
        let err = decode_frame(&StuffedBitstream::from_bits(bits)).unwrap_err();
        assert!(
            matches!(err, CanError::CrcMismatch { .. } | CanError::StuffingViolation(_)),
            "{err:?}"
        );
    }

    #[test]
    fn crc_flip_in_unstuffed_bits_reports_mismatch() {
        let f = CanFrame::new(0x2F0, &[0x5A, 0xC3]).unwrap();
        let (raw, _) = frame_prefix(&f);
        let mut corrupted = raw.clone();
        let last = corrupted.len() - 1;
        corrupted[last] = !corrupted[last];
        // Hand-stuff the corrupted prefix and append the fixed tail.
        let mut bits = Vec::new();
        let (mut run, mut prev) = (0, None);
        for b in corrupted {
            run = if prev == Some(b) { run + 1 } else { 1 };
            prev = Some(b);
            bits.push(b);
            if run == STUFF_RUN {
                bits.push(!b);
                prev = Some(!b);
                run = 1;
            }
        }
        bits.extend([true; 3 + EOF_LEN]);
        assert!(matches!(
            decode_frame(&StuffedBitstream::from_bits(bits)),
            Err(CanError::CrcMismatch { .. })
        ));
    }

    #[test]
    fn six_equal_bits_are_a_stuffing_violation() {
        let mut bits = vec![false; 6];
        bits.extend([true; 60]);
        assert_eq!(decode_frame(&StuffedBitstream::from_bits(bits)), Err(CanError::StuffingViolation(5)));
    }

    #[test]
    fn malformed_tails_are_rejected() {
        let (s, _) = encode_frame(&CanFrame::new(0x10, &[9]).unwrap()).unwrap();
        let mut bad_eof = s.bits.clone();
        *bad_eof.last_mut().unwrap() = DOMINANT;
        assert_eq!(decode_frame(&StuffedBitstream::from_bits(bad_eof)), Err(CanError::Malformed("end of frame")));
        let short = s.bits[..s.bits.len() - 2].to_vec();
        assert_eq!(decode_frame(&StuffedBitstream::from_bits(short)), Err(CanError::Truncated));
        let mut acked = s.bits.clone();
        let ack = acked.len() - EOF_LEN - 2;
        acked[ack] = DOMINANT;
        assert!(decode_frame(&StuffedBitstream::from_bits(acked)).is_ok());
    }

    #[test]
    fn stuff_bit_after_crc_inherits_eligibility() {
        // Search for a frame whose stuffed region ends in a stuff bit.
        let frame = (0..2048u16)
            .map(|id| CanFrame::new(id, &[0x00]).unwrap())
            .find(|f| {
                let (s, mask) = encode_frame(f).unwrap();
                let delim = mask.labels().iter().position(|l| *l == Field::CrcDelim).unwrap();
                s.stuff_positions.last() == Some(&(delim - 1))
            })
            .expect("some identifier ends the CRC with a stuff bit");
        let (_, mask) = encode_frame(&frame).unwrap();
        let delim = mask.labels().iter().position(|l| *l == Field::CrcDelim).unwrap();
        assert!(mask.is_eligible(delim - 1));
        assert!(!mask.is_eligible(delim));
    }
}
