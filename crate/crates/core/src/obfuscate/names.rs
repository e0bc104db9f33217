use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::stream_rng;

/// Draws six-letter capitalized names (`Tozwyu`) that never repeat and never
/// contain a forbidden substring.
pub struct NameGenerator {
    rng: ChaCha8Rng,
    used: HashSet<String>,
    forbidden: Vec<String>,
}

impl NameGenerator {
    pub const STREAM: u64 = 1;

    pub fn new(seed: u64, forbidden: impl IntoIterator<Item = String>) -> Self {
        Self {
            rng: stream_rng(seed, Self::STREAM),
            used: HashSet::new(),
            forbidden: forbidden.into_iter().filter(|f| !f.is_empty()).collect(),
        }
    }

    pub fn next_name(&mut self) -> String {
        loop {
            let mut s = String::with_capacity(6);
            s.push(self.rng.gen_range(b'A'..=b'Z') as char);
            for _ in 0..5 {
                s.push(self.rng.gen_range(b'a'..=b'z') as char);
            }
            if self.forbidden.iter().any(|f| s.contains(f.as_str())) {
                continue;
            }
            if self.used.insert(s.clone()) {
                return s;
            }
        }
    }

    pub fn issued(&self) -> usize {
        self.used.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::is_custom_name;

    #[test]
    fn shape_and_uniqueness() {
        let mut g = NameGenerator::new(5, Vec::new());
        let names: Vec<String> = (0..2000).map(|_| g.next_name()).collect();
        assert!(names.iter().all(|n| is_custom_name(n)));
        let set: HashSet<_> = names.iter().collect();
        assert_eq!(set.len(), names.len());
    }

    #[test]
    fn deterministic() {
        let a: Vec<_> = {
            let mut g = NameGenerator::new(11, Vec::new());
            (0..50).map(|_| g.next_name()).collect()
        };
        let mut g = NameGenerator::new(11, Vec::new());
        assert_eq!(a, (0..50).map(|_| g.next_name()).collect::<Vec<_>>());
    }

    #[test]
    fn avoids_forbidden_substrings() {
        // "a" is forbidden, so no name may contain a lowercase a
        let mut g = NameGenerator::new(1, vec!["a".to_string()]);
        assert!((0..500).all(|_| !g.next_name().contains('a')));
    }
}
