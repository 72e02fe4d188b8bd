//! Correlation key generation.
//!
//! A key only has to be unused among the queues of the processes sharing a
//! location; generators receive that set and return a new key tree.

use std::cell::RefCell;
use std::collections::BTreeSet;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::names::Loc;
use crate::tree::Tree;

pub trait KeyGen {
    fn fresh_key(&self, loc: &Loc, used: &BTreeSet<Tree>) -> Tree;
}

/// Deterministic and stateless: the smallest counter unused at the location.
#[derive(Clone, Copy, Debug, Default)]
pub struct CounterKeys;

impl KeyGen for CounterKeys {
    fn fresh_key(&self, loc: &Loc, used: &BTreeSet<Tree>) -> Tree {
        (0u64..).map(|n| Tree::key(loc, n)).find(|k| !used.contains(k)).expect("key space exhausted")
    }
}

/// Random 64-bit keys from a seeded stream, in the style of UUIDs.
#[derive(Debug)]
pub struct SeededKeys {
    rng: RefCell<ChaCha8Rng>,
}

impl SeededKeys {
    pub fn new(seed: u64) -> Self {
        SeededKeys { rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)) }
    }
}

impl KeyGen for SeededKeys {
    fn fresh_key(&self, loc: &Loc, used: &BTreeSet<Tree>) -> Tree {
        loop {
            let k = Tree::key(loc, self.rng.borrow_mut().next_u64());
            if !used.contains(&k) {
                return k;
            }
        }
    }
}

/// A deliberately broken generator that always hands out the same key.
/// Used to check that the test suites notice key reuse.
#[derive(Clone, Copy, Debug, Default)]
pub struct ReusingKeys;

impl KeyGen for ReusingKeys {
    fn fresh_key(&self, loc: &Loc, _used: &BTreeSet<Tree>) -> Tree {
        Tree::key(loc, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counter_skips_used() {
        let l = Loc::new("l");
        let used = BTreeSet::from([Tree::key(&l, 0), Tree::key(&l, 1)]);
        assert_eq!(CounterKeys.fresh_key(&l, &used), Tree::key(&l, 2));
    }

    #[test]
    fn seeded_is_reproducible() {
        let l = Loc::new("l");
        let a = SeededKeys::new(7).fresh_key(&l, &BTreeSet::new());
        let b = SeededKeys::new(7).fresh_key(&l, &BTreeSet::new());
        assert_eq!(a, b);
    }
}
