use super::{encode_radiotap, CodecError, ProbeRecord, MAX_SSID_LEN};
use crate::mac::MacAddress;

const MGMT_HEADER_LEN: usize = 24;
const TYPE_MANAGEMENT: u8 = 0;
const SUBTYPE_PROBE_REQUEST: u8 = 4;
const SUBTYPE_BEACON: u8 = 8;

const ELEMENT_SSID: u8 = 0;
const ELEMENT_SUPPORTED_RATES: u8 = 1;
const BASIC_RATES: [u8; 4] = [0x02, 0x04, 0x0b, 0x16];

/// A decoded probe request plus decoder diagnostics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeDecode {
    pub record: ProbeRecord,
    /// The tagged-parameter section could not be walked; `record.ssid` is absent.
    pub malformed_tags: bool,
}

fn frame_control(first: u8) -> (u8, u8, u8) {
    (first & 0x03, (first >> 2) & 0x03, first >> 4)
}

/// Decode an 802.11 frame starting at the MAC header.
///
/// Returns `Ok(None)` for anything that is not a probe request. The source
/// MAC is the transmitter address (address 2).
pub fn decode_probe_request(
    bytes: &[u8],
    rss_dbm: Option<i8>,
    timestamp_us: u64,
) -> Result<Option<ProbeDecode>, CodecError> {
    let Some(&fc0) = bytes.first() else {
        return Err(CodecError::TruncatedFrame { needed: MGMT_HEADER_LEN, available: 0 });
    };
    let (version, kind, subtype) = frame_control(fc0);
    if version != 0 || kind != TYPE_MANAGEMENT {
        return Ok(None);
    }
    if bytes.len() < MGMT_HEADER_LEN {
        return Err(CodecError::TruncatedFrame { needed: MGMT_HEADER_LEN, available: bytes.len() });
    }
    if subtype != SUBTYPE_PROBE_REQUEST {
        return Ok(None);
    }

    let source_mac = MacAddress::new(bytes[10..16].try_into().unwrap());
    let (ssid, malformed_tags) = match find_ssid(&bytes[MGMT_HEADER_LEN..]) {
        Ok(ssid) => (ssid, false),
        Err(()) => (None, true),
    };
    Ok(Some(ProbeDecode {
        record: ProbeRecord { source_mac, rss_dbm, timestamp_us, ssid },
        malformed_tags,
    }))
}

fn find_ssid(mut tags: &[u8]) -> Result<Option<Vec<u8>>, ()> {
    let mut ssid = None;
    while !tags.is_empty() {
        let [id, len, rest @ ..] = tags else {
            return Err(());
        };
        let len = *len as usize;
        if rest.len() < len {
            return Err(());
        }
        if *id == ELEMENT_SSID && ssid.is_none() {
            if len > MAX_SSID_LEN {
                return Err(());
            }
            ssid = Some(rest[..len].to_vec());
        }
        tags = &rest[len..];
    }
    Ok(ssid)
}

fn push_mgmt_header(out: &mut Vec<u8>, subtype: u8, addr1: MacAddress, addr2: MacAddress, addr3: MacAddress) {
    out.push(subtype << 4 | TYPE_MANAGEMENT << 2);
    out.push(0); // flags
    out.extend_from_slice(&[0, 0]); // duration
    out.extend_from_slice(&addr1.octets());
    out.extend_from_slice(&addr2.octets());
    out.extend_from_slice(&addr3.octets());
    out.extend_from_slice(&[0, 0]); // sequence control
}

/// Append the 802.11 probe-request body for `record` to `out`.
///
/// An absent SSID omits the SSID element; an empty one encodes the wildcard.
pub fn encode_dot11_probe(record: &ProbeRecord, out: &mut Vec<u8>) {
    push_mgmt_header(
        out,
        SUBTYPE_PROBE_REQUEST,
        MacAddress::BROADCAST,
        record.source_mac,
        MacAddress::BROADCAST,
    );
    if let Some(ssid) = &record.ssid {
        out.push(ELEMENT_SSID);
        out.push(ssid.len() as u8);
        out.extend_from_slice(ssid);
    }
    out.push(ELEMENT_SUPPORTED_RATES);
    out.push(BASIC_RATES.len() as u8);
    out.extend_from_slice(&BASIC_RATES);
}

/// A radiotap-prefixed beacon, used to build mixed test captures.
pub fn encode_beacon_stub(bssid: MacAddress, ssid: &[u8], rss_dbm: Option<i8>) -> Vec<u8> {
    let mut out = encode_radiotap(rss_dbm);
    push_mgmt_header(&mut out, SUBTYPE_BEACON, MacAddress::BROADCAST, bssid, bssid);
    out.extend_from_slice(&[0; 8]); // timestamp
    out.extend_from_slice(&100u16.to_le_bytes()); // beacon interval
    out.extend_from_slice(&0x0401u16.to_le_bytes()); // capabilities
    out.push(ELEMENT_SSID);
    out.push(ssid.len().min(MAX_SSID_LEN) as u8);
    out.extend_from_slice(&ssid[..ssid.len().min(MAX_SSID_LEN)]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(fc0: u8, ta: [u8; 6]) -> Vec<u8> {
        let mut b = vec![fc0, 0, 0, 0];
        b.extend_from_slice(&[0xff; 6]);
        b.extend_from_slice(&ta);
        b.extend_from_slice(&[0xff; 6]);
        b.extend_from_slice(&[0, 0]);
        b
    }

    #[test]
    fn probe_request_transmitter_address() {
        let bytes = header(0x40, [0xaa, 0xbb, 0xcc, 0xdd, 0xee, 0xff]);
        let got = decode_probe_request(&bytes, Some(-70), 7).unwrap().unwrap();
        assert_eq!(got.record.source_mac.to_string(), "aa:bb:cc:dd:ee:ff");
        assert_eq!(got.record.rss_dbm, Some(-70));
        assert_eq!(got.record.ssid, None);
        assert!(!got.malformed_tags);
    }

    #[test]
    fn beacon_is_not_a_probe() {
        let bytes = header(0x80, [1, 2, 3, 4, 5, 6]);
        assert_eq!(decode_probe_request(&bytes, None, 0).unwrap(), None);
    }

    #[test]
    fn control_and_data_frames_are_not_probes() {
        // ACK frames are only 10 octets
        assert_eq!(decode_probe_request(&[0xd4, 0, 0, 0, 1, 2, 3, 4, 5, 6], None, 0).unwrap(), None);
        assert_eq!(decode_probe_request(&header(0x08, [0; 6]), None, 0).unwrap(), None);
    }

    #[test]
    fn ten_octets_is_truncated() {
        let bytes = &header(0x40, [0; 6])[..10];
        assert!(matches!(
            decode_probe_request(bytes, None, 0),
            Err(CodecError::TruncatedFrame { needed: 24, available: 10 })
        ));
        assert!(matches!(decode_probe_request(&[], None, 0), Err(CodecError::TruncatedFrame { .. })));
    }

    #[test]
    fn malformed_tags_flagged() {
        let mut bytes = header(0x40, [2, 0, 0, 0, 0, 1]);
        bytes.extend_from_slice(&[ELEMENT_SSID, 10, b'a', b'b']); // claims 10, has 2
        let got = decode_probe_request(&bytes, None, 0).unwrap().unwrap();
        assert!(got.malformed_tags);
        assert_eq!(got.record.ssid, None);

        let mut bytes = header(0x40, [2, 0, 0, 0, 0, 1]);
        bytes.push(ELEMENT_SSID); // dangling id without length
        assert!(decode_probe_request(&bytes, None, 0).unwrap().unwrap().malformed_tags);
    }

    #[test]
    fn ssid_after_other_elements() {
        let mut bytes = header(0x40, [2, 0, 0, 0, 0, 1]);
        bytes.extend_from_slice(&[ELEMENT_SUPPORTED_RATES, 1, 0x02, ELEMENT_SSID, 3, b'l', b'a', b'b']);
        let got = decode_probe_request(&bytes, None, 0).unwrap().unwrap();
        assert_eq!(got.record.ssid.as_deref(), Some(&b"lab"[..]));
    }
}
