use super::CodecError;

const MIN_HEADER_LEN: usize = 8;
const PRESENT_EXT: u32 = 1 << 31;
const FLAG_FCS_AT_END: u8 = 0x10;

const BIT_FLAGS: u32 = 1;
const BIT_ANTENNA_SIGNAL: u32 = 5;

/// (size, alignment) of the default-namespace fields that precede the
/// antenna signal, indexed by present bit.
const LEADING_FIELDS: [(usize, usize); 5] = [
    (8, 8), // TSFT
    (1, 1), // flags
    (1, 1), // rate
    (4, 2), // channel
    (2, 1), // FHSS
];

/// The parts of a radiotap header this crate cares about.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Radiotap {
    pub rss_dbm: Option<i8>,
    /// Header-declared length; the 802.11 frame starts here.
    pub payload_offset: usize,
    /// Flags field says the frame carries a trailing 4-octet FCS.
    pub fcs_at_end: bool,
}

fn truncated(needed: usize, available: usize) -> CodecError {
    CodecError::TruncatedHeader { needed, available }
}

pub fn decode_radiotap(bytes: &[u8]) -> Result<Radiotap, CodecError> {
    if bytes.len() < MIN_HEADER_LEN {
        return Err(truncated(MIN_HEADER_LEN, bytes.len()));
    }
    if bytes[0] != 0 {
        return Err(CodecError::UnsupportedVersion(bytes[0]));
    }
    let declared = u16::from_le_bytes([bytes[2], bytes[3]]) as usize;
    if declared < MIN_HEADER_LEN {
        return Err(truncated(MIN_HEADER_LEN, declared));
    }
    if declared > bytes.len() {
        return Err(truncated(declared, bytes.len()));
    }
    let header = &bytes[..declared];

    let read_u32 = |at: usize| -> Result<u32, CodecError> {
        header
            .get(at..at + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| truncated(at + 4, declared))
    };

    let present = read_u32(4)?;
    let mut cursor = 8;
    let mut word = present;
    while word & PRESENT_EXT != 0 {
        word = read_u32(cursor)?;
        cursor += 4;
    }

    let mut flags = 0u8;
    for bit in 0..BIT_ANTENNA_SIGNAL {
        if present & (1 << bit) == 0 {
            continue;
        }
        let (size, align) = LEADING_FIELDS[bit as usize];
        cursor = cursor.next_multiple_of(align);
        if cursor + size > declared {
            return Err(truncated(cursor + size, declared));
        }
        if bit == BIT_FLAGS {
            flags = header[cursor];
        }
        cursor += size;
    }

    let rss_dbm = if present & (1 << BIT_ANTENNA_SIGNAL) != 0 {
        let raw = *header.get(cursor).ok_or_else(|| truncated(cursor + 1, declared))?;
        Some(raw as i8)
    } else {
        None
    };

    Ok(Radiotap {
        rss_dbm,
        payload_offset: declared,
        fcs_at_end: flags & FLAG_FCS_AT_END != 0,
    })
}

/// Minimal header: version 0, one present word, and the antenna signal if given.
pub fn encode_radiotap(rss_dbm: Option<i8>) -> Vec<u8> {
    let len: u16 = if rss_dbm.is_some() { 9 } else { 8 };
    let present: u32 = if rss_dbm.is_some() { 1 << BIT_ANTENNA_SIGNAL } else { 0 };
    let mut out = Vec::with_capacity(64);
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&present.to_le_bytes());
    if let Some(rss) = rss_dbm {
        out.push(rss as u8);
    }
    out
}
