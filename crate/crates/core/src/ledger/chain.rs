//! Block hashing, chain verification and the on-disk block file.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufReader, BufWriter, Read, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::state::World;
use super::types::{Block, CommittedTx};
use crate::digest::{Digest, Hasher};

pub(crate) const BLOCK_FILE: &str = "blocks.bin";
pub(crate) const STATE_FILE: &str = "state.json";
pub(crate) const PRIVATE_FILE: &str = "private.json";

pub fn block_hash(
    height: u64,
    prev_hash: &Digest,
    txs: &[CommittedTx],
    state_root: &Digest,
) -> Digest {
    let mut h = Hasher::new();
    h.update(&height.to_be_bytes());
    h.update(prev_hash.as_bytes());
    h.update(&(txs.len() as u64).to_be_bytes());
    for tx in txs {
        h.update(tx.digest().as_bytes());
    }
    h.update(state_root.as_bytes());
    h.finish()
}

impl Block {
    pub(crate) fn seal(
        height: u64,
        prev_hash: Digest,
        txs: Vec<CommittedTx>,
        state_root: Digest,
    ) -> Block {
        let block_hash = block_hash(height, &prev_hash, &txs, &state_root);
        Block {
            height,
            prev_hash,
            txs,
            state_root,
            block_hash,
        }
    }

    pub fn recompute_hash(&self) -> Digest {
        block_hash(self.height, &self.prev_hash, &self.txs, &self.state_root)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainReport {
    pub ok: bool,
    pub first_bad_height: Option<u64>,
    pub height: u64,
}

/// Checks heights, hashes and prev links from genesis.
pub fn verify_blocks(blocks: &[Block]) -> ChainReport {
    let mut prev = Digest::ZERO;
    for (i, b) in blocks.iter().enumerate() {
        let i = i as u64;
        if b.height != i || b.prev_hash != prev || b.recompute_hash() != b.block_hash {
            return ChainReport {
                ok: false,
                first_bad_height: Some(i),
                height: blocks.len().saturating_sub(1) as u64,
            };
        }
        prev = b.block_hash;
    }
    ChainReport {
        ok: true,
        first_bad_height: None,
        height: blocks.len().saturating_sub(1) as u64,
    }
}

/// Reads a `u32 LE length + JSON` block file.
pub fn read_block_file(path: impl AsRef<Path>) -> io::Result<Vec<Block>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut blocks = Vec::new();
    let mut len = [0u8; 4];
    loop {
        match r.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e),
        }
        let mut buf = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut buf)?;
        let block = serde_json::from_slice(&buf).map_err(|e| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("block {}: {e}", blocks.len()),
            )
        })?;
        blocks.push(block);
    }
    Ok(blocks)
}

pub(crate) struct DiskLog {
    dir: PathBuf,
    blocks: BufWriter<File>,
}

impl DiskLog {
    pub fn open(dir: &Path) -> io::Result<DiskLog> {
        fs::create_dir_all(dir)?;
        let blocks = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join(BLOCK_FILE))?;
        Ok(DiskLog {
            dir: dir.to_path_buf(),
            blocks: BufWriter::new(blocks),
        })
    }

    pub fn load(dir: &Path) -> io::Result<(Vec<Block>, World)> {
        let blocks = match read_block_file(dir.join(BLOCK_FILE)) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e),
        };
        let mut world = World::default();
        if let Some(public) = read_json(&dir.join(STATE_FILE))? {
            world.public = public;
        }
        if let Some(private) = read_json(&dir.join(PRIVATE_FILE))? {
            world.private = private;
        }
        world.reindex();
        Ok((blocks, world))
    }

    pub fn append(&mut self, block: &Block, world: &World) -> io::Result<()> {
        let bytes = serde_json::to_vec(block).map_err(io::Error::other)?;
        let len = u32::try_from(bytes.len())
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "block too large"))?;
        self.blocks.write_all(&len.to_le_bytes())?;
        self.blocks.write_all(&bytes)?;
        self.blocks.flush()?;
        write_json(&self.dir.join(STATE_FILE), &world.public)?;
        write_json(&self.dir.join(PRIVATE_FILE), &world.private)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> io::Result<Option<T>> {
    match fs::read(path) {
        Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(|e| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{}: {e}", path.display()),
            )
        }),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_vec(value).map_err(io::Error::other)?)?;
    fs::rename(tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: u64) -> Vec<Block> {
        let mut blocks = vec![Block::seal(0, Digest::ZERO, vec![], Digest::ZERO)];
        for h in 1..n {
            let prev = blocks.last().unwrap().block_hash;
            blocks.push(Block::seal(h, prev, vec![], Digest::of(&h.to_be_bytes())));
        }
        blocks
    }

    #[test]
    fn genesis_only_verifies() {
        assert!(verify_blocks(&chain(1)).ok);
        assert!(verify_blocks(&[]).ok);
    }

    #[test]
    fn mutation_at_each_height_is_located() {
        for k in 0..10 {
            let mut blocks = chain(10);
            blocks[k].state_root = Digest::of(b"forged");
            let report = verify_blocks(&blocks);
            assert!(!report.ok);
            assert_eq!(report.first_bad_height, Some(k as u64));
        }
    }

    #[test]
    fn rehashed_forgery_breaks_the_next_link() {
        let mut blocks = chain(5);
        blocks[2].state_root = Digest::of(b"forged");
        blocks[2].block_hash = blocks[2].recompute_hash();
        assert_eq!(verify_blocks(&blocks).first_bad_height, Some(3));
    }
}
