use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use sha2::{Digest, Sha256};

/// Content address of a blob: `sha256:<hex>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlobRef(String);

impl BlobRef {
    pub fn of(bytes: &[u8]) -> Self {
        Self(format!("sha256:{}", hex::encode(Sha256::digest(bytes))))
    }

    pub fn parse(s: &str) -> Option<Self> {
        let hex_part = s.strip_prefix("sha256:")?;
        (hex_part.len() == 64
            && hex_part
                .bytes()
                .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)))
        .then(|| Self(s.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn hex(&self) -> &str {
        &self.0["sha256:".len()..]
    }

    pub fn matches(&self, bytes: &[u8]) -> bool {
        *self == Self::of(bytes)
    }
}

impl fmt::Display for BlobRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Content-addressed blob store. Blobs are immutable once stored.
#[derive(Debug, Clone, Default)]
pub struct StorageElement {
    blobs: BTreeMap<BlobRef, Arc<Vec<u8>>>,
}

impl StorageElement {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, bytes: Vec<u8>) -> BlobRef {
        let r = BlobRef::of(&bytes);
        self.blobs
            .entry(r.clone())
            .or_insert_with(|| Arc::new(bytes));
        r
    }

    pub fn get(&self, r: &BlobRef) -> Option<Arc<Vec<u8>>> {
        self.blobs.get(r).cloned()
    }

    pub fn contains(&self, r: &BlobRef) -> bool {
        self.blobs.contains_key(r)
    }

    pub fn size_of(&self, r: &BlobRef) -> Option<u64> {
        self.blobs.get(r).map(|b| b.len() as u64)
    }

    pub fn len(&self) -> usize {
        self.blobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty()
    }

    pub fn refs(&self) -> impl Iterator<Item = &BlobRef> {
        self.blobs.keys()
    }

    /// Replaces a blob's bytes without updating its address, so the next
    /// transfer fails verification. Fault-injection hook for tests.
    pub fn corrupt(&mut self, r: &BlobRef) -> bool {
        match self.blobs.get_mut(r) {
            Some(b) => {
                let mut bytes = b.as_ref().clone();
                match bytes.first_mut() {
                    Some(x) => *x ^= 0xff,
                    None => bytes.push(0),
                }
                *b = Arc::new(bytes);
                true
            }
            None => false,
        }
    }

    /// Writes every blob not yet on disk as `<dir>/<hex>`.
    pub fn persist(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        for (r, bytes) in &self.blobs {
            let path = dir.join(r.hex());
            if !path.exists() {
                let tmp = path.with_extension("tmp");
                fs::write(&tmp, bytes.as_slice())?;
                fs::rename(&tmp, &path)?;
            }
        }
        Ok(())
    }

    /// Loads blobs persisted by [`persist`](Self::persist), skipping any whose
    /// bytes no longer match their name.
    pub fn load(dir: &Path) -> std::io::Result<Self> {
        let mut se = Self::new();
        if !dir.exists() {
            return Ok(se);
        }
        let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let name = entry.file_name().to_string_lossy().into_owned();
            let Some(r) = BlobRef::parse(&format!("sha256:{name}")) else {
                continue;
            };
            let bytes = fs::read(entry.path())?;
            if r.matches(&bytes) {
                se.blobs.insert(r, Arc::new(bytes));
            } else {
                log::warn!("dropping corrupt blob {name}");
            }
        }
        Ok(se)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_get_round_trip() {
        let mut se = StorageElement::new();
        let r = se.put(b"abc".to_vec());
        assert_eq!(
            r.as_str(),
            "sha256:ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(se.get(&r).unwrap().as_slice(), b"abc");
        assert_eq!(se.put(b"abc".to_vec()), r);
        assert_eq!(se.len(), 1);
    }

    #[test]
    fn corruption_breaks_verification() {
        let mut se = StorageElement::new();
        let r = se.put(b"payload".to_vec());
        assert!(se.corrupt(&r));
        assert!(!r.matches(&se.get(&r).unwrap()));
    }

    #[test]
    fn persists_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let mut se = StorageElement::new();
        let a = se.put(b"one".to_vec());
        let b = se.put(vec![]);
        se.persist(dir.path()).unwrap();
        let back = StorageElement::load(dir.path()).unwrap();
        assert_eq!(back.get(&a).unwrap().as_slice(), b"one");
        assert!(back.contains(&b));
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(BlobRef::parse("sha256:xyz").is_none());
        assert!(BlobRef::parse(BlobRef::of(b"").as_str()).is_some());
    }
}
