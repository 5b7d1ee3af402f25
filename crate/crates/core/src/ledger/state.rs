//! World state with an incrementally maintained root.
//!
//! The root commits to the multiset of `(space, key, value)` entries as a sum
//! of entry hashes modulo 2^256, so each write costs O(1) regardless of state
//! size. Private values enter the root only through their hash.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::digest::{Digest, Hasher};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum Space {
    Public,
    Private(String),
}

#[derive(Debug, Clone)]
pub(crate) struct Write {
    pub space: Space,
    pub key: String,
    pub value: String,
}

impl Write {
    pub fn public(key: impl Into<String>, value: impl Into<String>) -> Self {
        Write {
            space: Space::Public,
            key: key.into(),
            value: value.into(),
        }
    }

    pub fn private(collection: &str, key: impl Into<String>, value: impl Into<String>) -> Self {
        Write {
            space: Space::Private(collection.to_string()),
            key: key.into(),
            value: value.into(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub(crate) struct World {
    pub public: BTreeMap<String, String>,
    pub private: BTreeMap<String, BTreeMap<String, String>>,
    #[serde(skip)]
    acc: [u8; 32],
}

fn entry_hash(space: &Space, key: &str, value: &str) -> [u8; 32] {
    let mut h = Hasher::new();
    match space {
        Space::Public => h.update(&[0]),
        Space::Private(c) => {
            h.update(&[1]);
            h.update(&(c.len() as u64).to_be_bytes());
            h.update(c.as_bytes());
        }
    }
    h.update(&(key.len() as u64).to_be_bytes());
    h.update(key.as_bytes());
    h.update(Digest::of(value.as_bytes()).as_bytes());
    *h.finish().as_bytes()
}

fn add_assign(acc: &mut [u8; 32], x: &[u8; 32]) {
    let mut carry = 0u16;
    for i in (0..32).rev() {
        let s = acc[i] as u16 + x[i] as u16 + carry;
        acc[i] = s as u8;
        carry = s >> 8;
    }
}

fn sub_assign(acc: &mut [u8; 32], x: &[u8; 32]) {
    let mut borrow = 0i16;
    for i in (0..32).rev() {
        let mut d = acc[i] as i16 - x[i] as i16 - borrow;
        borrow = 0;
        if d < 0 {
            d += 256;
            borrow = 1;
        }
        acc[i] = d as u8;
    }
}

impl World {
    /// Rebuilds the accumulator after deserialization.
    pub fn reindex(&mut self) {
        let mut acc = [0u8; 32];
        for (k, v) in &self.public {
            add_assign(&mut acc, &entry_hash(&Space::Public, k, v));
        }
        for (c, entries) in &self.private {
            let space = Space::Private(c.clone());
            for (k, v) in entries {
                add_assign(&mut acc, &entry_hash(&space, k, v));
            }
        }
        self.acc = acc;
    }

    pub fn root(&self) -> Digest {
        let mut h = Hasher::new();
        h.update(b"state");
        h.update(&self.acc);
        h.finish()
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.public.get(key).map(String::as_str)
    }

    pub fn get_private(&self, collection: &str, key: &str) -> Option<&str> {
        self.private.get(collection)?.get(key).map(String::as_str)
    }

    /// Public entries whose key starts with `prefix`, in key order.
    pub fn scan<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a str)> {
        self.public
            .range(prefix.to_string()..)
            .take_while(move |(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn apply(&mut self, writes: Vec<Write>) {
        for w in writes {
            let map = match &w.space {
                Space::Public => &mut self.public,
                Space::Private(c) => self.private.entry(c.clone()).or_default(),
            };
            if let Some(old) = map.get(&w.key) {
                sub_assign(&mut self.acc, &entry_hash(&w.space, &w.key, old));
            }
            add_assign(&mut self.acc, &entry_hash(&w.space, &w.key, &w.value));
            map.insert(w.key, w.value);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn root_is_order_independent_and_matches_reindex() {
        let mut a = World::default();
        a.apply(vec![Write::public("k1", "v1"), Write::public("k2", "v2")]);
        a.apply(vec![Write::private("c", "k1", "secret")]);
        let mut b = World::default();
        b.apply(vec![Write::private("c", "k1", "secret")]);
        b.apply(vec![Write::public("k2", "v2"), Write::public("k1", "v0")]);
        b.apply(vec![Write::public("k1", "v1")]);
        assert_eq!(a.root(), b.root());
        let mut c = b.clone();
        c.reindex();
        assert_eq!(c.root(), b.root());
    }

    #[test]
    fn root_changes_with_any_value() {
        let mut a = World::default();
        a.apply(vec![Write::public("k", "v")]);
        let before = a.root();
        a.apply(vec![Write::private("c", "k", "v")]);
        assert_ne!(a.root(), before);
        assert_ne!(World::default().root(), before);
    }

    #[test]
    fn carry_and_borrow_cancel() {
        let mut acc = [0xFF; 32];
        let x = [0x01; 32];
        add_assign(&mut acc, &x);
        sub_assign(&mut acc, &x);
        assert_eq!(acc, [0xFF; 32]);
    }

    #[test]
    fn prefix_scan() {
        let mut w = World::default();
        w.apply(vec![
            Write::public("\0a\0x\0", "1"),
            Write::public("\0a\0y\0", "2"),
            Write::public("\0b\0x\0", "3"),
        ]);
        let keys: Vec<_> = w.scan("\0a\0").map(|(k, _)| k).collect();
        assert_eq!(keys, ["\0a\0x\0", "\0a\0y\0"]);
    }
}
