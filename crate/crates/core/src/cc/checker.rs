//! Brute-force conflict-serializability check over a recorded history.
//!
//! Deliberately independent of the simulator's bookkeeping: it sees only the
//! event log, places each read at its event and each write at its commit,
//! and compares every pair of conflicting operations.

use std::collections::{BTreeMap, BTreeSet};

use super::sim::{Event, EventKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Attempt ids forming a cycle in the conflict graph.
    pub cycle: Vec<u64>,
}

#[derive(Clone, Copy)]
struct Access {
    attempt: u64,
    pos: usize,
    write: bool,
    key: u32,
}

/// `Ok` when the committed projection of `history` has an acyclic conflict graph.
pub fn check_serializable(history: &[Event]) -> Result<(), Violation> {
    let committed: BTreeSet<u64> = history.iter().filter(|e| e.kind == EventKind::Commit).map(|e| e.attempt).collect();
    let accesses: Vec<Access> = history
        .iter()
        .enumerate()
        .filter(|(_, e)| committed.contains(&e.attempt))
        .filter_map(|(pos, e)| match e.kind {
            EventKind::Read { key } => Some(Access { attempt: e.attempt, pos, write: false, key }),
            EventKind::Write { key } => Some(Access { attempt: e.attempt, pos, write: true, key }),
            _ => None,
        })
        .collect();
    let mut edges: BTreeMap<u64, BTreeSet<u64>> = committed.iter().map(|t| (*t, BTreeSet::new())).collect();
    for a in &accesses {
        for b in &accesses {
            if a.attempt != b.attempt && a.key == b.key && (a.write || b.write) && a.pos < b.pos {
                edges.get_mut(&a.attempt).expect("committed").insert(b.attempt);
            }
        }
    }
    // Iterative DFS with colors; a back edge closes a cycle.
    let mut color: BTreeMap<u64, u8> = BTreeMap::new();
    for &s in edges.keys() {
        if color.get(&s).copied().unwrap_or(0) != 0 {
            continue;
        }
        let mut stack: Vec<(u64, Vec<u64>)> = vec![(s, edges[&s].iter().copied().collect())];
        color.insert(s, 1);
        while let Some((v, next)) = stack.last_mut() {
            let v = *v;
            match next.pop() {
                Some(u) => match color.get(&u).copied().unwrap_or(0) {
                    0 => {
                        color.insert(u, 1);
                        stack.push((u, edges[&u].iter().copied().collect()));
                    }
                    1 => {
                        let start = stack.iter().position(|(x, _)| *x == u).expect("on stack");
                        return Err(Violation { cycle: stack[start..].iter().map(|(x, _)| *x).collect() });
                    }
                    _ => {}
                },
                None => {
                    color.insert(v, 2);
                    stack.pop();
                }
            }
        }
    }
    Ok(())
}
