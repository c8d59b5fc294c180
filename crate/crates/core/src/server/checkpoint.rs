//! Binary checkpoint of the server state.
//!
//! Layout: the magic `SDFE1` and a newline, one header line
//! `N=<users> M=<items> d=<dim> round=<round> C=<groups>`, then little-endian
//! `f32` data: the item table (`M*d`), a presence bitmap of `N` bits padded to
//! whole bytes (bit `u % 8` of byte `u / 8`), and the ego registry (`N*d`,
//! zero rows for absent users).

use std::fs;
use std::path::Path;

use crate::data::UserId;
use crate::error::{Error, Result};
use crate::numeric::Embedding;
use crate::server::{EgoRegistry, ItemTable};

pub const MAGIC: &[u8] = b"SDFE1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub num_users: usize,
    pub num_items: usize,
    pub dim: usize,
    pub round: u64,
    pub groups: usize,
    pub items: Vec<f32>,
    pub present: Vec<bool>,
    pub registry: Vec<f32>,
}

impl Checkpoint {
    pub fn capture(table: &ItemTable, registry: &EgoRegistry, num_users: usize, round: u64, groups: usize) -> Self {
        let dim = table.dim();
        let items = table.rows.iter().flat_map(|r| r.iter().map(|&x| x as f32)).collect();
        let mut present = vec![false; num_users];
        let mut reg = vec![0f32; num_users * dim];
        for (&u, entry) in registry.iter() {
            let u = u as usize;
            if u < num_users {
                present[u] = true;
                for (dst, &x) in reg[u * dim..(u + 1) * dim].iter_mut().zip(entry.embedding.iter()) {
                    *dst = x as f32;
                }
            }
        }
        Checkpoint {
            num_users,
            num_items: table.len(),
            dim,
            round,
            groups,
            items,
            present,
            registry: reg,
        }
    }

    pub fn item_table(&self) -> ItemTable {
        ItemTable {
            rows: self
                .items
                .chunks(self.dim.max(1))
                .map(|c| Embedding::from_vec(c.iter().map(|&x| x as f64).collect()))
                .collect(),
            version: self.round,
        }
    }

    pub fn ego_registry(&self) -> EgoRegistry {
        let mut reg = EgoRegistry::default();
        for u in 0..self.num_users {
            if self.present[u] {
                let row = &self.registry[u * self.dim..(u + 1) * self.dim];
                let e = Embedding::from_vec(row.iter().map(|&x| x as f64).collect());
                reg.update(u as UserId, e, self.round).expect("fresh registry");
            }
        }
        reg
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 4 * (self.items.len() + self.registry.len()) + self.num_users / 8 + 1);
        out.extend_from_slice(MAGIC);
        out.push(b'\n');
        out.extend_from_slice(
            format!(
                "N={} M={} d={} round={} C={}\n",
                self.num_users, self.num_items, self.dim, self.round, self.groups
            )
            .as_bytes(),
        );
        for x in &self.items {
            out.extend_from_slice(&x.to_le_bytes());
        }
        let mut bitmap = vec![0u8; self.num_users.div_ceil(8)];
        for (u, &p) in self.present.iter().enumerate() {
            if p {
                bitmap[u / 8] |= 1 << (u % 8);
            }
        }
        out.extend_from_slice(&bitmap);
        for x in &self.registry {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let rest = bytes
            .strip_prefix(MAGIC)
            .and_then(|r| r.strip_prefix(b"\n"))
            .ok_or_else(|| bad("missing SDFE1 magic"))?;
        let newline = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header line"))?;
        let header = std::str::from_utf8(&rest[..newline]).map_err(|_| bad("header is not UTF-8"))?;
        let mut fields = std::collections::BTreeMap::new();
        for part in header.split_whitespace() {
            let (k, v) = part.split_once('=').ok_or_else(|| bad("malformed header field"))?;
            let v: u64 = v.parse().map_err(|_| bad("non-numeric header value"))?;
            fields.insert(k, v);
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| Error::Checkpoint(format!("header lacks {k}")));
        let (n, m, d) = (get("N")? as usize, get("M")? as usize, get("d")? as usize);
        let (round, groups) = (get("round")?, get("C")? as usize);
        let body = &rest[newline + 1..];
        let bitmap_len = n.div_ceil(8);
        let expected = 4 * m * d + bitmap_len + 4 * n * d;
        if body.len() != expected {
            return Err(Error::Checkpoint(format!("body has {} bytes, expected {expected}", body.len())));
        }
        let floats = |b: &[u8]| -> Vec<f32> {
            b.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()
        };
        let items = floats(&body[..4 * m * d]);
        let bitmap = &body[4 * m * d..4 * m * d + bitmap_len];
        let present = (0..n).map(|u| bitmap[u / 8] & (1 << (u % 8)) != 0).collect();
        let registry = floats(&body[4 * m * d + bitmap_len..]);
        Ok(Checkpoint {
            num_users: n,
            num_items: m,
            dim: d,
            round,
            groups,
            items,
            present,
            registry,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_layout() {
        let table = ItemTable {
            rows: vec![Embedding::from_vec(vec![1.0, 2.0]); 3],
            version: 4,
        };
        let mut reg = EgoRegistry::default();
        reg.update(1, Embedding::from_vec(vec![0.5, -0.5]), 4).unwrap();
        let ck = Checkpoint::capture(&table, &reg, 10, 4, 2);
        let bytes = ck.to_bytes();
        let header = b"SDFE1\nN=10 M=3 d=2 round=4 C=2\n";
        assert!(bytes.starts_with(header));
        assert_eq!(bytes.len(), header.len() + 4 * 6 + 2 + 4 * 20);
        assert_eq!(bytes[header.len() + 24], 0b0000_0010);
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);
    }

    #[test]
    fn rejects_truncated_body() {
        let ck = Checkpoint::capture(
            &ItemTable {
                rows: vec![Embedding::zeros(2)],
                version: 0,
            },
            &EgoRegistry::default(),
            1,
            0,
            2,
        );
        let mut bytes = ck.to_bytes();
        bytes.pop();
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checkpoint(_))));
        assert!(Checkpoint::from_bytes(b"NOPE").is_err());
    }
}
