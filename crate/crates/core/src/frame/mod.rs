//! Radiotap + 802.11 probe-request codec and capture-file readers.

mod capture;
mod dot11;
mod radiotap;

pub use capture::{
    open_capture, probe_records, write_pcap, CaptureFormat, CaptureStats, PcapReader, PcapWriter, ProbeCapture, RawPacket,
    RawStreamReader, RawStreamWriter, LINKTYPE_IEEE802_11_RADIOTAP, PCAP_MAGIC,
};
pub use dot11::{decode_probe_request, encode_beacon_stub, encode_dot11_probe, ProbeDecode};
pub use radiotap::{decode_radiotap, encode_radiotap, Radiotap};

use serde::{Deserialize, Serialize};

use crate::mac::MacAddress;

pub const MAX_SSID_LEN: usize = 32;
pub const MIN_RSS_DBM: i8 = -127;

/// One captured probe request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub source_mac: MacAddress,
    /// Antenna signal in dBm, when the capture carried one.
    pub rss_dbm: Option<i8>,
    /// Microseconds since the capture epoch (UNIX epoch for pcap files).
    pub timestamp_us: u64,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "ssid_text")]
    pub ssid: Option<Vec<u8>>,
}

impl ProbeRecord {
    pub fn validate(&self) -> Result<(), CodecError> {
        if let Some(rss) = self.rss_dbm {
            if !(MIN_RSS_DBM..=0).contains(&rss) {
                return Err(CodecError::InvalidRecord(format!("rss {rss} dBm outside [-127, 0]")));
            }
        }
        if let Some(ssid) = &self.ssid {
            if ssid.len() > MAX_SSID_LEN {
                return Err(CodecError::InvalidRecord(format!(
                    "ssid is {} octets, limit is {MAX_SSID_LEN}",
                    ssid.len()
                )));
            }
        }
        Ok(())
    }

    pub fn timestamp_s(&self) -> i64 {
        (self.timestamp_us / 1_000_000) as i64
    }
}

/// Encode a record as a radiotap header followed by an 802.11 probe request.
pub fn encode_probe_request(record: &ProbeRecord) -> Result<Vec<u8>, CodecError> {
    record.validate()?;
    let mut out = encode_radiotap(record.rss_dbm);
    encode_dot11_probe(record, &mut out);
    Ok(out)
}

/// Decode a full radiotap-prefixed frame. `Ok(None)` means "not a probe request".
pub fn decode_frame(bytes: &[u8], timestamp_us: u64) -> Result<Option<ProbeDecode>, CodecError> {
    let rt = decode_radiotap(bytes)?;
    let mut payload = &bytes[rt.payload_offset..];
    if rt.fcs_at_end && payload.len() >= 4 {
        payload = &payload[..payload.len() - 4];
    }
    decode_probe_request(payload, rt.rss_dbm, timestamp_us)
}

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error("radiotap header truncated: need {needed} bytes, have {available}")]
    TruncatedHeader { needed: usize, available: usize },
    #[error("unsupported radiotap version {0}")]
    UnsupportedVersion(u8),
    #[error("802.11 frame truncated: need {needed} bytes, have {available}")]
    TruncatedFrame { needed: usize, available: usize },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("unrecognized capture format (magic {magic:#010x})")]
    UnrecognizedFormat { magic: u32 },
    #[error("unsupported pcap version {major}.{minor}")]
    UnsupportedCaptureVersion { major: u16, minor: u16 },
    #[error("unsupported link type {0}, expected radiotap ({LINKTYPE_IEEE802_11_RADIOTAP})")]
    LinkType(u32),
    #[error("capture record truncated at byte {offset}")]
    TruncatedRecord { offset: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

mod ssid_text {
    //! SSIDs are octet strings; JSON carries them as UTF-8 when possible, hex otherwise.
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(bytes) => match std::str::from_utf8(bytes) {
                Ok(text) if !text.starts_with("hex:") => s.serialize_str(text),
                _ => {
                    let hex: String = bytes.iter().map(|b| format!("{b:02x}")).collect();
                    s.serialize_str(&format!("hex:{hex}"))
                }
            },
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        let Some(text) = Option::<String>::deserialize(d)? else {
            return Ok(None);
        };
        match text.strip_prefix("hex:") {
            Some(hex) if hex.len() % 2 == 0 => (0..hex.len())
                .step_by(2)
                .map(|i| u8::from_str_radix(&hex[i..i + 2], 16))
                .collect::<Result<Vec<u8>, _>>()
                .map(Some)
                .map_err(serde::de::Error::custom),
            _ => Ok(Some(text.into_bytes())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(rss: Option<i8>, ssid: Option<&[u8]>) -> ProbeRecord {
        ProbeRecord {
            source_mac: "aa:bb:cc:dd:ee:ff".parse().unwrap(),
            rss_dbm: rss,
            timestamp_us: 1_500_000,
            ssid: ssid.map(<[u8]>::to_vec),
        }
    }

    #[test]
    fn round_trip_with_and_without_rss() {
        for r in [record(Some(-80), Some(b"eduroam")), record(None, None), record(Some(0), Some(b""))] {
            let bytes = encode_probe_request(&r).unwrap();
            let got = decode_frame(&bytes, r.timestamp_us).unwrap().unwrap();
            assert!(!got.malformed_tags);
            assert_eq!(got.record, r);
        }
    }

    #[test]
    fn absent_rss_omits_antenna_signal() {
        let bytes = encode_probe_request(&record(None, None)).unwrap();
        let present = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        assert_eq!(present & (1 << 5), 0);
        assert_eq!(u16::from_le_bytes([bytes[2], bytes[3]]), 8);
    }

    #[test]
    fn long_ssid_rejected() {
        let r = record(Some(-50), Some(&[b'x'; 33]));
        assert!(matches!(encode_probe_request(&r), Err(CodecError::InvalidRecord(_))));
    }

    #[test]
    fn out_of_range_rss_rejected() {
        let r = record(Some(5), None);
        assert!(matches!(r.validate(), Err(CodecError::InvalidRecord(_))));
    }

    #[test]
    fn ssid_json_forms() {
        let r = record(Some(-50), Some(&[0xff, 0x00]));
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("hex:ff00"));
        assert_eq!(serde_json::from_str::<ProbeRecord>(&json).unwrap(), r);
        let r = record(Some(-50), Some(b"lab"));
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"ssid\":\"lab\""));
    }
}
