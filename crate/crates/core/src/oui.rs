//! IEEE OUI registry and valid/randomized MAC classification.
//!
//! A MAC is *valid* when its OUI appears in the registered-vendor table and
//! *randomized* otherwise. [`ClassifyPolicy::strict_local`] additionally
//! treats every locally-administered address as randomized.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::mac::{MacAddress, Oui};

/// Small registry snapshot bundled for tests and offline use.
pub const FIXTURE_OUI_TXT: &str = include_str!("../fixtures/oui_fixture.txt");

const CACHE_MAGIC: &[u8; 4] = b"OUIC";
const CACHE_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MacClass {
    Valid,
    Randomized,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifyPolicy {
    /// Also classify locally-administered addresses as randomized.
    #[serde(default)]
    pub strict_local: bool,
}

#[derive(Debug, Clone, Default)]
pub struct OuiRegistry {
    entries: HashMap<Oui, String>,
    source_snapshot_date: Option<String>,
}

/// Result of parsing an `oui.txt` document.
#[derive(Debug, Clone)]
pub struct RegistryParse {
    pub registry: OuiRegistry,
    pub parsed: usize,
    pub skipped: usize,
    pub duplicates: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("not an OUI cache file")]
    BadMagic,
    #[error("unsupported OUI cache version {0}")]
    Version(u8),
    #[error("OUI cache is corrupt: {0}")]
    Corrupt(&'static str),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn parse_hex_line(line: &str) -> Option<(Oui, &str)> {
    let (prefix, vendor) = line.split_once("(hex)")?;
    let oui = prefix.trim().parse::<Oui>().ok()?;
    Some((oui, vendor.trim()))
}

impl OuiRegistry {
    /// Parse the IEEE `oui.txt` line format. Only `(hex)` lines produce
    /// entries; the first occurrence of a duplicate OUI wins.
    pub fn parse(text: &str) -> RegistryParse {
        let mut entries = HashMap::new();
        let (mut parsed, mut skipped, mut duplicates) = (0, 0, 0);
        for line in text.lines() {
            match parse_hex_line(line) {
                Some((oui, vendor)) => {
                    parsed += 1;
                    match entries.entry(oui) {
                        Entry::Occupied(_) => duplicates += 1,
                        Entry::Vacant(slot) => {
                            slot.insert(vendor.to_string());
                        }
                    }
                }
                None => skipped += 1,
            }
        }
        if parsed == 0 {
            log::warn!("OUI registry text contained no parseable entries; every MAC will classify as randomized");
        }
        RegistryParse {
            registry: OuiRegistry { entries, source_snapshot_date: None },
            parsed,
            skipped,
            duplicates,
        }
    }

    pub fn fixture() -> Self {
        Self::parse(FIXTURE_OUI_TXT).registry.with_snapshot_date("fixture")
    }

    pub fn from_entries<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = (Oui, S)>,
        S: Into<String>,
    {
        let mut map = HashMap::new();
        for (oui, name) in entries {
            map.entry(oui).or_insert_with(|| name.into());
        }
        Self { entries: map, source_snapshot_date: None }
    }

    pub fn with_snapshot_date(mut self, date: impl Into<String>) -> Self {
        self.source_snapshot_date = Some(date.into());
        self
    }

    pub fn snapshot_date(&self) -> Option<&str> {
        self.source_snapshot_date.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, oui: Oui) -> bool {
        self.entries.contains_key(&oui)
    }

    /// Registered OUIs in ascending order.
    pub fn ouis(&self) -> Vec<Oui> {
        let mut v: Vec<Oui> = self.entries.keys().copied().collect();
        v.sort_unstable();
        v
    }

    pub fn vendor_of(&self, mac: MacAddress) -> Option<&str> {
        self.entries.get(&mac.oui()).map(String::as_str)
    }

    pub fn classify(&self, mac: MacAddress) -> MacClass {
        self.classify_with(mac, ClassifyPolicy::default())
    }

    pub fn classify_with(&self, mac: MacAddress, policy: ClassifyPolicy) -> MacClass {
        if policy.strict_local && mac.is_locally_administered() {
            return MacClass::Randomized;
        }
        if self.contains(mac.oui()) {
            MacClass::Valid
        } else {
            MacClass::Randomized
        }
    }

    /// Compact binary form: magic, version, snapshot date, then entries sorted by OUI.
    pub fn write_cache<W: Write>(&self, mut w: W) -> Result<(), CacheError> {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&[CACHE_VERSION])?;
        let date = self.source_snapshot_date.as_deref().unwrap_or("").as_bytes();
        let date = &date[..date.len().min(255)];
        w.write_all(&[date.len() as u8])?;
        w.write_all(date)?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for oui in self.ouis() {
            let name = self.entries[&oui].as_bytes();
            let name = &name[..name.len().min(u16::MAX as usize)];
            w.write_all(&oui.0)?;
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Load either an `oui.txt` document or a binary cache, by content.
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, CacheError> {
        let bytes = std::fs::read(path)?;
        if bytes.starts_with(CACHE_MAGIC) {
            return Self::read_cache(&bytes[..]);
        }
        Ok(Self::parse(&String::from_utf8_lossy(&bytes)).registry)
    }

    pub fn read_cache<R: Read>(mut r: R) -> Result<Self, CacheError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| CacheError::BadMagic)?;
        if &magic != CACHE_MAGIC {
            return Err(CacheError::BadMagic);
        }
        let mut byte = [0u8; 1];
        r.read_exact(&mut byte)?;
        if byte[0] != CACHE_VERSION {
            return Err(CacheError::Version(byte[0]));
        }
        r.read_exact(&mut byte)?;
        let mut date = vec![0u8; byte[0] as usize];
        r.read_exact(&mut date)?;
        let date = String::from_utf8(date).map_err(|_| CacheError::Corrupt("snapshot date is not UTF-8"))?;
        let mut count = [0u8; 4];
        r.read_exact(&mut count)?;
        let count = u32::from_le_bytes(count) as usize;
        let mut entries = HashMap::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let mut oui = [0u8; 3];
            let mut len = [0u8; 2];
            r.read_exact(&mut oui)?;
            r.read_exact(&mut len)?;
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| CacheError::Corrupt("vendor name is not UTF-8"))?;
            entries.insert(Oui(oui), name);
        }
        Ok(Self {
            entries,
            source_snapshot_date: (!date.is_empty()).then_some(date),
        })
    }
}
