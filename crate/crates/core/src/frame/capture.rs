use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{decode_frame, CodecError, ProbeRecord};

pub const PCAP_MAGIC: u32 = 0xA1B2_C3D4;
pub const LINKTYPE_IEEE802_11_RADIOTAP: u32 = 127;
const PCAP_VERSION: (u16, u16) = (2, 4);
const SNAPLEN: u32 = 65_535;
const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;

/// One frame as stored in a capture, before 802.11 decoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPacket {
    pub timestamp_us: u64,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CaptureFormat {
    /// Classic little-endian pcap, microsecond timestamps, radiotap link type.
    #[default]
    Pcap,
    /// Concatenated `u64 LE timestamp_us | u32 LE length | frame` records, radiotap framing.
    RawStream,
}

/// Fill `buf` completely, returning `Ok(false)` on a clean EOF before any byte.
fn read_exact_or_eof<R: Read>(reader: &mut R, buf: &mut [u8], offset: u64) -> Result<bool, CodecError> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(false),
            Ok(0) => return Err(CodecError::TruncatedRecord { offset }),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(true)
}

/// Streaming reader over the packets of a pcap file.
pub struct PcapReader<R> {
    reader: R,
    offset: u64,
    pub snaplen: u32,
}

impl<R: Read> PcapReader<R> {
    pub fn new(mut reader: R) -> Result<Self, CodecError> {
        let mut header = [0u8; GLOBAL_HEADER_LEN];
        let mut magic_bytes = [0u8; 4];
        if !read_exact_or_eof(&mut reader, &mut magic_bytes, 0)? {
            return Err(CodecError::UnrecognizedFormat { magic: 0 });
        }
        let magic = u32::from_le_bytes(magic_bytes);
        if magic != PCAP_MAGIC {
            return Err(CodecError::UnrecognizedFormat { magic });
        }
        header[..4].copy_from_slice(&magic_bytes);
        if !read_exact_or_eof(&mut reader, &mut header[4..], 4)? {
            return Err(CodecError::TruncatedRecord { offset: 4 });
        }
        let u16_at = |i: usize| u16::from_le_bytes([header[i], header[i + 1]]);
        let u32_at = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
        let (major, minor) = (u16_at(4), u16_at(6));
        if (major, minor) != PCAP_VERSION {
            return Err(CodecError::UnsupportedCaptureVersion { major, minor });
        }
        let link_type = u32_at(20);
        if link_type != LINKTYPE_IEEE802_11_RADIOTAP {
            return Err(CodecError::LinkType(link_type));
        }
        Ok(Self { reader, offset: GLOBAL_HEADER_LEN as u64, snaplen: u32_at(16) })
    }

    fn next_packet(&mut self) -> Result<Option<RawPacket>, CodecError> {
        let mut rec = [0u8; RECORD_HEADER_LEN];
        if !read_exact_or_eof(&mut self.reader, &mut rec, self.offset)? {
            return Ok(None);
        }
        let u32_at = |i: usize| u32::from_le_bytes(rec[i..i + 4].try_into().unwrap());
        let (ts_sec, ts_usec, incl_len) = (u32_at(0), u32_at(4), u32_at(8));
        let mut data = vec![0u8; incl_len as usize];
        if !read_exact_or_eof(&mut self.reader, &mut data, self.offset)? && incl_len > 0 {
            return Err(CodecError::TruncatedRecord { offset: self.offset });
        }
        self.offset += (RECORD_HEADER_LEN + data.len()) as u64;
        Ok(Some(RawPacket {
            timestamp_us: ts_sec as u64 * 1_000_000 + ts_usec as u64,
            data,
        }))
    }
}

impl<R: Read> Iterator for PcapReader<R> {
    type Item = Result<RawPacket, CodecError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_packet().transpose()
    }
}

pub struct PcapWriter<W: Write> {
    writer: W,
}

impl<W: Write> PcapWriter<W> {
    pub fn new(mut writer: W) -> io::Result<Self> {
        writer.write_all(&PCAP_MAGIC.to_le_bytes())?;
        writer.write_all(&PCAP_VERSION.0.to_le_bytes())?;
        writer.write_all(&PCAP_VERSION.1.to_le_bytes())?;
        writer.write_all(&0i32.to_le_bytes())?; // thiszone
        writer.write_all(&0u32.to_le_bytes())?; // sigfigs
        writer.write_all(&SNAPLEN.to_le_bytes())?;
        writer.write_all(&LINKTYPE_IEEE802_11_RADIOTAP.to_le_bytes())?;
        Ok(Self { writer })
    }

    pub fn write_packet(&mut self, timestamp_us: u64, data: &[u8]) -> io::Result<()> {
        let sec = (timestamp_us / 1_000_000) as u32;
        let usec = (timestamp_us % 1_000_000) as u32;
        let len = data.len() as u32;
        self.writer.write_all(&sec.to_le_bytes())?;
        self.writer.write_all(&usec.to_le_bytes())?;
        self.writer.write_all(&len.to_le_bytes())?;
        self.writer.write_all(&len.to_le_bytes())?;
        self.writer.write_all(data)
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.writer.flush()?;
        Ok(self.writer)
    }
}

pub struct RawStreamReader<R> {
    reader: R,
    offset: u64,
}

impl<R: Read> RawStreamReader<R> {
    pub fn new(reader: R) -> Self {
        Self { reader, offset: 0 }
    }
}

impl<R: Read> Iterator for RawStreamReader<R> {
    type Item = Result<RawPacket, CodecError>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut head = [0u8; 12];
        match read_exact_or_eof(&mut self.reader, &mut head, self.offset) {
            Ok(false) => return None,
            Err(e) => return Some(Err(e)),
            Ok(true) => {}
        }
        let timestamp_us = u64::from_le_bytes(head[..8].try_into().unwrap());
        let len = u32::from_le_bytes(head[8..].try_into().unwrap()) as usize;
        let mut data = vec![0u8; len];
        if len > 0 {
            match read_exact_or_eof(&mut self.reader, &mut data, self.offset) {
                Ok(true) => {}
                Ok(false) => return Some(Err(CodecError::TruncatedRecord { offset: self.offset })),
                Err(e) => return Some(Err(e)),
            }
        }
        self.offset += (12 + len) as u64;
        Some(Ok(RawPacket { timestamp_us, data }))
    }
}

pub struct RawStreamWriter<W: Write> {
    writer: W,
}

impl<W: Write> RawStreamWriter<W> {
    pub fn new(writer: W) -> Self {
        Self { writer }
    }

    pub fn write_packet(&mut self, timestamp_us: u64, data: &[u8]) -> io::Result<()> {
        self.writer.write_all(&timestamp_us.to_le_bytes())?;
        self.writer.write_all(&(data.len() as u32).to_le_bytes())?;
        self.writer.write_all(data)
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.writer.flush()?;
        Ok(self.writer)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CaptureStats {
    pub packets: u64,
    pub probes: u64,
    /// Well-formed frames that are not probe requests.
    pub skipped: u64,
    /// Frames the decoder rejected (truncated or unsupported headers).
    pub malformed: u64,
    /// Probe requests whose tagged section could not be walked.
    pub malformed_tags: u64,
}

/// The probe requests of one capture, in non-decreasing timestamp order.
#[derive(Debug, Clone, Default)]
pub struct ProbeCapture {
    pub records: Vec<ProbeRecord>,
    pub stats: CaptureStats,
}

impl ProbeCapture {
    pub fn from_packets<I>(packets: I) -> Result<Self, CodecError>
    where
        I: IntoIterator<Item = Result<RawPacket, CodecError>>,
    {
        let mut out = ProbeCapture::default();
        for packet in packets {
            let packet = packet?;
            out.stats.packets += 1;
            match decode_frame(&packet.data, packet.timestamp_us) {
                Ok(Some(decoded)) => {
                    out.stats.probes += 1;
                    out.stats.malformed_tags += decoded.malformed_tags as u64;
                    out.records.push(decoded.record);
                }
                Ok(None) => out.stats.skipped += 1,
                Err(err) => {
                    log::debug!("skipping undecodable frame at {} us: {err}", packet.timestamp_us);
                    out.stats.malformed += 1;
                }
            }
        }
        out.records.sort_by_key(|r| r.timestamp_us);
        Ok(out)
    }

    pub fn read<R: Read>(reader: R, format: CaptureFormat) -> Result<Self, CodecError> {
        match format {
            CaptureFormat::Pcap => Self::from_packets(PcapReader::new(reader)?),
            CaptureFormat::RawStream => Self::from_packets(RawStreamReader::new(reader)),
        }
    }
}

impl IntoIterator for ProbeCapture {
    type Item = ProbeRecord;
    type IntoIter = std::vec::IntoIter<ProbeRecord>;

    fn into_iter(self) -> Self::IntoIter {
        self.records.into_iter()
    }
}

/// Lazily decode packets into probe records in arrival order, skipping
/// non-probe and undecodable frames. Stops at the first read error.
pub fn probe_records<I>(packets: I) -> impl Iterator<Item = ProbeRecord>
where
    I: IntoIterator<Item = Result<RawPacket, CodecError>>,
{
    packets
        .into_iter()
        .map_while(|p| p.map_err(|e| log::warn!("capture read stopped: {e}")).ok())
        .filter_map(|p| decode_frame(&p.data, p.timestamp_us).ok().flatten().map(|d| d.record))
}

pub fn open_capture(path: impl AsRef<Path>, format: CaptureFormat) -> Result<ProbeCapture, CodecError> {
    let file = File::open(path.as_ref())?;
    ProbeCapture::read(BufReader::new(file), format)
}

/// Write probe records to a pcap file.
pub fn write_pcap(path: impl AsRef<Path>, records: &[ProbeRecord]) -> Result<(), CodecError> {
    let mut writer = PcapWriter::new(BufWriter::new(File::create(path.as_ref())?))?;
    for r in records {
        writer.write_packet(r.timestamp_us, &super::encode_probe_request(r)?)?;
    }
    writer.finish()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::{encode_beacon_stub, encode_probe_request};
    use super::*;
    use crate::mac::MacAddress;

    fn probe(i: u8, ts: u64) -> ProbeRecord {
        ProbeRecord {
            source_mac: MacAddress::new([0x00, 0x00, 0x0c, 0, 0, i]),
            rss_dbm: Some(-40 - i as i8),
            timestamp_us: ts,
            ssid: None,
        }
    }

    fn pcap_bytes(frames: &[(u64, Vec<u8>)]) -> Vec<u8> {
        let mut w = PcapWriter::new(Vec::new()).unwrap();
        for (ts, f) in frames {
            w.write_packet(*ts, f).unwrap();
        }
        w.finish().unwrap()
    }

    #[test]
    fn empty_capture_body() {
        let cap = ProbeCapture::read(&pcap_bytes(&[])[..], CaptureFormat::Pcap).unwrap();
        assert!(cap.records.is_empty());
        assert_eq!(cap.stats.skipped, 0);
    }

    #[test]
    fn three_probes_two_beacons() {
        let bssid = MacAddress::new([0x00, 0x50, 0xf2, 1, 2, 3]);
        let frames = vec![
            (10, encode_probe_request(&probe(1, 10)).unwrap()),
            (20, encode_beacon_stub(bssid, b"ap", Some(-30))),
            (30, encode_probe_request(&probe(2, 30)).unwrap()),
            (40, encode_beacon_stub(bssid, b"ap", None)),
            (50, encode_probe_request(&probe(3, 50)).unwrap()),
        ];
        let cap = ProbeCapture::read(&pcap_bytes(&frames)[..], CaptureFormat::Pcap).unwrap();
        assert_eq!(cap.records, vec![probe(1, 10), probe(2, 30), probe(3, 50)]);
        assert_eq!(cap.stats.skipped, 2);
        assert_eq!(cap.stats.probes, 3);
    }

    #[test]
    fn output_sorted_by_timestamp() {
        let frames = vec![
            (300, encode_probe_request(&probe(1, 300)).unwrap()),
            (100, encode_probe_request(&probe(2, 100)).unwrap()),
        ];
        let cap = ProbeCapture::read(&pcap_bytes(&frames)[..], CaptureFormat::Pcap).unwrap();
        assert!(cap.records.windows(2).all(|w| w[0].timestamp_us <= w[1].timestamp_us));
    }

    #[test]
    fn wrong_magic() {
        let mut bytes = pcap_bytes(&[]);
        bytes[..4].copy_from_slice(&0xA1B2_3C4Du32.to_le_bytes()); // nanosecond variant
        assert!(matches!(
            ProbeCapture::read(&bytes[..], CaptureFormat::Pcap),
            Err(CodecError::UnrecognizedFormat { magic: 0xA1B2_3C4D })
        ));
        bytes[..4].copy_from_slice(&PCAP_MAGIC.to_be_bytes()); // big-endian file
        assert!(matches!(
            ProbeCapture::read(&bytes[..], CaptureFormat::Pcap),
            Err(CodecError::UnrecognizedFormat { .. })
        ));
        assert!(matches!(
            ProbeCapture::read(&b""[..], CaptureFormat::Pcap),
            Err(CodecError::UnrecognizedFormat { magic: 0 })
        ));
    }

    #[test]
    fn wrong_link_type() {
        let mut bytes = pcap_bytes(&[]);
        bytes[20..24].copy_from_slice(&105u32.to_le_bytes()); // plain 802.11
        assert!(matches!(
            ProbeCapture::read(&bytes[..], CaptureFormat::Pcap),
            Err(CodecError::LinkType(105))
        ));
    }

    #[test]
    fn truncated_record_is_an_error() {
        let bytes = pcap_bytes(&[(1, encode_probe_request(&probe(1, 1)).unwrap())]);
        for cut in GLOBAL_HEADER_LEN + 1..bytes.len() {
            assert!(
                matches!(
                    ProbeCapture::read(&bytes[..cut], CaptureFormat::Pcap),
                    Err(CodecError::TruncatedRecord { .. })
                ),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn undecodable_frames_are_counted() {
        let frames = vec![(1, vec![1, 0, 8, 0, 0, 0, 0, 0]), (2, vec![0, 0, 8])];
        let cap = ProbeCapture::read(&pcap_bytes(&frames)[..], CaptureFormat::Pcap).unwrap();
        assert_eq!(cap.stats.malformed, 2);
        assert!(cap.records.is_empty());
    }

    #[test]
    fn raw_stream_round_trip() {
        let mut w = RawStreamWriter::new(Vec::new());
        for i in 0..3 {
            let r = probe(i, 1000 * i as u64);
            w.write_packet(r.timestamp_us, &encode_probe_request(&r).unwrap()).unwrap();
        }
        let bytes = w.finish().unwrap();
        let cap = ProbeCapture::read(&bytes[..], CaptureFormat::RawStream).unwrap();
        assert_eq!(cap.records.len(), 3);
        assert!(ProbeCapture::read(&bytes[..bytes.len() - 1], CaptureFormat::RawStream).is_err());
    }
}
