//! Slotted 8 KiB pages and the tuple codec.
//!
//! Page layout: `slot_count: u16 | data_start: u16 | slots...` where each
//! slot is `offset: u16 | len: u16`; tuple bytes grow down from the page end.
//! A slot with offset 0 is a tombstone.

use super::{DataType, Schema, StorageError, Tuple, Value};

pub const PAGE_SIZE: usize = 8192;
const HEADER: usize = 4;
const SLOT: usize = 4;

pub fn empty_page() -> Vec<u8> {
    let mut p = vec![0u8; PAGE_SIZE];
    p[2..4].copy_from_slice(&(PAGE_SIZE as u16).to_le_bytes());
    p
}

fn rd16(p: &[u8], at: usize) -> usize {
    u16::from_le_bytes([p[at], p[at + 1]]) as usize
}

fn wr16(p: &mut [u8], at: usize, v: usize) {
    p[at..at + 2].copy_from_slice(&(v as u16).to_le_bytes());
}

pub fn slot_count(page: &[u8]) -> usize {
    rd16(page, 0)
}

fn data_start(page: &[u8]) -> usize {
    rd16(page, 2)
}

pub fn free_space(page: &[u8]) -> usize {
    data_start(page).saturating_sub(HEADER + SLOT * slot_count(page))
}

pub fn max_tuple_len() -> usize {
    PAGE_SIZE - HEADER - SLOT
}

/// Appends `bytes`; `None` when the page is full.
pub fn insert(page: &mut [u8], bytes: &[u8]) -> Option<u16> {
    if free_space(page) < bytes.len() + SLOT {
        return None;
    }
    let n = slot_count(page);
    let start = data_start(page) - bytes.len();
    page[start..start + bytes.len()].copy_from_slice(bytes);
    let s = HEADER + SLOT * n;
    wr16(page, s, start);
    wr16(page, s + 2, bytes.len());
    wr16(page, 0, n + 1);
    wr16(page, 2, start);
    Some(n as u16)
}

pub fn get(page: &[u8], slot: u16) -> Option<&[u8]> {
    let slot = slot as usize;
    if slot >= slot_count(page) {
        return None;
    }
    let s = HEADER + SLOT * slot;
    let (off, len) = (rd16(page, s), rd16(page, s + 2));
    (off != 0).then(|| &page[off..off + len])
}

/// Marks a slot dead; the space is not reclaimed.
pub fn delete(page: &mut [u8], slot: u16) -> bool {
    let slot = slot as usize;
    if slot >= slot_count(page) {
        return false;
    }
    let s = HEADER + SLOT * slot;
    if rd16(page, s) == 0 {
        return false;
    }
    wr16(page, s, 0);
    wr16(page, s + 2, 0);
    true
}

pub fn live_slots(page: &[u8]) -> impl Iterator<Item = (u16, &[u8])> {
    (0..slot_count(page) as u16).filter_map(move |s| get(page, s).map(|b| (s, b)))
}

/// Null bitmap followed by the non-NULL values in column order.
pub fn encode_tuple(schema: &Schema, tuple: &Tuple) -> Vec<u8> {
    let n = schema.arity();
    let mut out = vec![0u8; n.div_ceil(8)];
    for (i, v) in tuple.iter().enumerate() {
        match v {
            Value::Null => out[i / 8] |= 1 << (i % 8),
            Value::Int(x) => out.extend_from_slice(&x.to_le_bytes()),
            Value::Float(x) => out.extend_from_slice(&x.to_le_bytes()),
            Value::Bool(b) => out.push(*b as u8),
            Value::Text(s) => {
                out.extend_from_slice(&(s.len() as u32).to_le_bytes());
                out.extend_from_slice(s.as_bytes());
            }
        }
    }
    out
}

pub fn decode_tuple(schema: &Schema, bytes: &[u8]) -> Result<Tuple, StorageError> {
    let n = schema.arity();
    let bm = n.div_ceil(8);
    let corrupt = || StorageError::Corrupt(format!("bad tuple for {}", schema.table_name));
    if bytes.len() < bm {
        return Err(corrupt());
    }
    let mut pos = bm;
    let mut take = |k: usize| -> Result<&[u8], StorageError> {
        let s = bytes.get(pos..pos + k).ok_or_else(corrupt)?;
        pos += k;
        Ok(s)
    };
    let mut out = Vec::with_capacity(n);
    for (i, c) in schema.columns.iter().enumerate() {
        if bytes[i / 8] & (1 << (i % 8)) != 0 {
            out.push(Value::Null);
            continue;
        }
        out.push(match c.ty {
            DataType::Int64 => Value::Int(i64::from_le_bytes(take(8)?.try_into().expect("8"))),
            DataType::Float64 => Value::Float(f64::from_le_bytes(take(8)?.try_into().expect("8"))),
            DataType::Bool => Value::Bool(take(1)?[0] != 0),
            DataType::Text => {
                let len = u32::from_le_bytes(take(4)?.try_into().expect("4")) as usize;
                let s = take(len)?;
                Value::Text(String::from_utf8(s.to_vec()).map_err(|_| corrupt())?)
            }
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::Column;

    #[test]
    fn fill_and_tombstone() {
        let mut p = empty_page();
        let rec = [7u8; 100];
        let mut n = 0;
        while insert(&mut p, &rec).is_some() {
            n += 1;
        }
        assert_eq!(n, (PAGE_SIZE - HEADER) / (100 + SLOT));
        assert!(delete(&mut p, 3));
        assert!(!delete(&mut p, 3));
        assert_eq!(get(&p, 3), None);
        assert_eq!(get(&p, 4), Some(&rec[..]));
        assert_eq!(live_slots(&p).count(), n - 1);
    }

    #[test]
    fn tuple_codec() {
        let schema = Schema::new(
            "t",
            vec![
                Column::new("a", DataType::Int64),
                Column::new("b", DataType::Text),
                Column::new("c", DataType::Float64),
                Column::new("d", DataType::Bool),
            ],
        );
        let t = vec![Value::Int(-4), Value::Text("héllo".into()), Value::Null, Value::Bool(true)];
        let bytes = encode_tuple(&schema, &t);
        assert_eq!(decode_tuple(&schema, &bytes).unwrap(), t);
        assert!(decode_tuple(&schema, &bytes[..5]).is_err());
    }
}
