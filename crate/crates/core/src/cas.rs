//! Content-addressed storage for encrypted verification records.
//!
//! An object's address is the SHA-256 of its bytes, so storing the same
//! content twice yields one object. Every `get` re-hashes the bytes and
//! refuses to return content that no longer matches its address.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::digest::{Digest, ParseDigestError};

#[derive(Debug, thiserror::Error)]
pub enum CasError {
    #[error("refusing to store empty content")]
    EmptyContent,
    #[error("object {0} not found")]
    NotFound(LocationHash),
    #[error("object {address} is corrupt: content hashes to {actual}")]
    Corrupt {
        address: LocationHash,
        actual: Digest,
    },
    #[error("storage error: {0}")]
    Storage(#[from] std::io::Error),
}

/// Address of a stored object: SHA-256 of its bytes.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LocationHash(Digest);

impl LocationHash {
    pub fn of(content: &[u8]) -> Self {
        LocationHash(Digest::of(content))
    }

    pub fn digest(&self) -> Digest {
        self.0
    }

    pub fn to_hex(&self) -> String {
        self.0.to_hex()
    }
}

impl From<Digest> for LocationHash {
    fn from(d: Digest) -> Self {
        LocationHash(d)
    }
}

impl FromStr for LocationHash {
    type Err = ParseDigestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse().map(LocationHash)
    }
}

impl fmt::Display for LocationHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl fmt::Debug for LocationHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LocationHash({})", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ObjectStat {
    pub exists: bool,
    pub size: u64,
}

pub trait ContentStore: Send + Sync {
    /// Stores `content`, returning its address. Idempotent.
    fn put(&self, content: &[u8]) -> Result<LocationHash, CasError>;

    /// Returns the exact bytes stored at `addr` after re-verifying them.
    fn get(&self, addr: &LocationHash) -> Result<Vec<u8>, CasError>;

    fn stat(&self, addr: &LocationHash) -> Result<ObjectStat, CasError>;

    /// Number of distinct stored objects.
    fn object_count(&self) -> Result<usize, CasError>;
}

impl<T: ContentStore + ?Sized> ContentStore for Arc<T> {
    fn put(&self, content: &[u8]) -> Result<LocationHash, CasError> {
        (**self).put(content)
    }
    fn get(&self, addr: &LocationHash) -> Result<Vec<u8>, CasError> {
        (**self).get(addr)
    }
    fn stat(&self, addr: &LocationHash) -> Result<ObjectStat, CasError> {
        (**self).stat(addr)
    }
    fn object_count(&self) -> Result<usize, CasError> {
        (**self).object_count()
    }
}

fn verified(addr: &LocationHash, bytes: Vec<u8>) -> Result<Vec<u8>, CasError> {
    let actual = Digest::of(&bytes);
    if actual != addr.0 {
        return Err(CasError::Corrupt {
            address: *addr,
            actual,
        });
    }
    Ok(bytes)
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    objects: RwLock<HashMap<LocationHash, Arc<[u8]>>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Overwrites the bytes held at `addr` without re-addressing them.
    /// Fault injection for tests.
    #[doc(hidden)]
    pub fn corrupt_with(&self, addr: &LocationHash, f: impl FnOnce(&mut Vec<u8>)) -> bool {
        let mut objects = self.objects.write().expect("store lock poisoned");
        match objects.get_mut(addr) {
            Some(obj) => {
                let mut bytes = obj.to_vec();
                f(&mut bytes);
                *obj = bytes.into();
                true
            }
            None => false,
        }
    }
}

impl ContentStore for MemoryStore {
    fn put(&self, content: &[u8]) -> Result<LocationHash, CasError> {
        if content.is_empty() {
            return Err(CasError::EmptyContent);
        }
        let addr = LocationHash::of(content);
        self.objects
            .write()
            .expect("store lock poisoned")
            .entry(addr)
            .or_insert_with(|| content.into());
        Ok(addr)
    }

    fn get(&self, addr: &LocationHash) -> Result<Vec<u8>, CasError> {
        let bytes = self
            .objects
            .read()
            .expect("store lock poisoned")
            .get(addr)
            .map(|b| b.to_vec())
            .ok_or(CasError::NotFound(*addr))?;
        verified(addr, bytes)
    }

    fn stat(&self, addr: &LocationHash) -> Result<ObjectStat, CasError> {
        let objects = self.objects.read().expect("store lock poisoned");
        Ok(match objects.get(addr) {
            Some(b) => ObjectStat {
                exists: true,
                size: b.len() as u64,
            },
            None => ObjectStat {
                exists: false,
                size: 0,
            },
        })
    }

    fn object_count(&self) -> Result<usize, CasError> {
        Ok(self.objects.read().expect("store lock poisoned").len())
    }
}

/// Objects on disk under `objects/<first 2 hex>/<remaining 62 hex>`.
#[derive(Debug)]
pub struct DiskStore {
    root: PathBuf,
    tmp_seq: AtomicU64,
}

impl DiskStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, CasError> {
        let root = root.into();
        fs::create_dir_all(root.join("objects"))?;
        Ok(DiskStore {
            root,
            tmp_seq: AtomicU64::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn object_path(&self, addr: &LocationHash) -> PathBuf {
        let hex = addr.to_hex();
        self.root.join("objects").join(&hex[..2]).join(&hex[2..])
    }
}

impl ContentStore for DiskStore {
    fn put(&self, content: &[u8]) -> Result<LocationHash, CasError> {
        if content.is_empty() {
            return Err(CasError::EmptyContent);
        }
        let addr = LocationHash::of(content);
        let path = self.object_path(&addr);
        if path.exists() {
            return Ok(addr);
        }
        let dir = path.parent().expect("object path has a parent");
        fs::create_dir_all(dir)?;
        // Write-then-rename: racing writers of the same content each
        // produce a complete file and the rename converges on one object.
        let tmp = dir.join(format!(
            ".tmp-{}-{}-{}",
            std::process::id(),
            self.tmp_seq.fetch_add(1, Ordering::Relaxed),
            &addr.to_hex()[2..10]
        ));
        let mut f = fs::File::create(&tmp)?;
        f.write_all(content)?;
        f.sync_all()?;
        drop(f);
        fs::rename(&tmp, &path)?;
        Ok(addr)
    }

    fn get(&self, addr: &LocationHash) -> Result<Vec<u8>, CasError> {
        match fs::read(self.object_path(addr)) {
            Ok(bytes) => verified(addr, bytes),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(CasError::NotFound(*addr)),
            Err(e) => Err(e.into()),
        }
    }

    fn stat(&self, addr: &LocationHash) -> Result<ObjectStat, CasError> {
        match fs::metadata(self.object_path(addr)) {
            Ok(m) => Ok(ObjectStat {
                exists: true,
                size: m.len(),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(ObjectStat {
                exists: false,
                size: 0,
            }),
            Err(e) => Err(e.into()),
        }
    }

    fn object_count(&self) -> Result<usize, CasError> {
        let mut n = 0;
        for prefix in fs::read_dir(self.root.join("objects"))? {
            let prefix = prefix?;
            if !prefix.file_type()?.is_dir() {
                continue;
            }
            for obj in fs::read_dir(prefix.path())? {
                if !obj?.file_name().to_string_lossy().starts_with(".tmp-") {
                    n += 1;
                }
            }
        }
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use std::collections::HashSet;

    fn stores() -> Vec<(Box<dyn ContentStore>, Option<tempfile::TempDir>)> {
        let dir = tempfile::tempdir().unwrap();
        vec![
            (Box::new(MemoryStore::new()), None),
            (Box::new(DiskStore::open(dir.path()).unwrap()), Some(dir)),
        ]
    }

    #[test]
    fn put_is_idempotent() {
        for (store, _dir) in stores() {
            let a = store.put(b"hello").unwrap();
            let b = store.put(b"hello").unwrap();
            assert_eq!(a, b);
            assert_eq!(store.object_count().unwrap(), 1);
            assert_eq!(a, LocationHash::of(b"hello"));
            assert_eq!(store.get(&a).unwrap(), b"hello");
        }
    }

    #[test]
    fn distinct_contents_distinct_addresses() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for (store, _dir) in stores() {
            let mut addrs = HashSet::new();
            let mut contents = HashSet::new();
            for _ in 0..200 {
                let len = rng.gen_range(1..64);
                let c: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
                let fresh = contents.insert(c.clone());
                assert_eq!(addrs.insert(store.put(&c).unwrap()), fresh);
            }
            assert_eq!(store.object_count().unwrap(), contents.len());
        }
    }

    #[test]
    fn empty_content_rejected_and_unknown_not_found() {
        for (store, _dir) in stores() {
            assert!(matches!(store.put(b""), Err(CasError::EmptyContent)));
            let addr = LocationHash::of(b"never stored");
            assert!(matches!(store.get(&addr), Err(CasError::NotFound(_))));
            assert_eq!(
                store.stat(&addr).unwrap(),
                ObjectStat {
                    exists: false,
                    size: 0
                }
            );
        }
    }

    #[test]
    fn stat_reports_size() {
        for (store, _dir) in stores() {
            let addr = store.put(&[7u8; 100]).unwrap();
            assert_eq!(
                store.stat(&addr).unwrap(),
                ObjectStat {
                    exists: true,
                    size: 100
                }
            );
        }
    }

    #[test]
    fn disk_layout_and_bit_flip_detection() {
        let dir = tempfile::tempdir().unwrap();
        let store = DiskStore::open(dir.path()).unwrap();
        let addr = store.put(b"ciphertext bytes").unwrap();
        let hex = addr.to_hex();
        let path = dir.path().join("objects").join(&hex[..2]).join(&hex[2..]);
        assert_eq!(store.object_path(&addr), path);
        let mut bytes = fs::read(&path).unwrap();
        bytes[3] ^= 0x10;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(store.get(&addr), Err(CasError::Corrupt { .. })));
    }

    #[test]
    fn memory_corruption_detected() {
        let store = MemoryStore::new();
        let addr = store.put(b"abc").unwrap();
        assert!(store.corrupt_with(&addr, |b| b[0] ^= 1));
        assert!(matches!(store.get(&addr), Err(CasError::Corrupt { .. })));
    }

    #[test]
    fn racing_writers_converge() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(DiskStore::open(dir.path()).unwrap());
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let store = Arc::clone(&store);
                std::thread::spawn(move || store.put(b"same content").unwrap())
            })
            .collect();
        let addrs: HashSet<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert_eq!(addrs.len(), 1);
        assert_eq!(store.object_count().unwrap(), 1);
        let addr = addrs.into_iter().next().unwrap();
        assert_eq!(store.get(&addr).unwrap(), b"same content");
    }
}
