use super::io::write_atomic;
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Seeded train/validation/test partition of sample ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitManifest {
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Section {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Section::Train),
            "val" => Ok(Section::Val),
            "test" => Ok(Section::Test),
            other => Err(Error::Config(format!("unknown split section {other:?}"))),
        }
    }
}

/// Shuffles `ids` (after sorting, so input order is irrelevant) and assigns
/// ⌊n/10⌋ to validation, ⌊n/10⌋ to test and the rest to training.
pub fn split_dataset(ids: &[String], seed: u64) -> Result<SplitManifest> {
    if ids.len() < 3 {
        return Err(Error::Data(format!(
            "need at least 3 samples to split, got {}",
            ids.len()
        )));
    }
    let mut sorted = ids.to_vec();
    sorted.sort();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Data(format!("duplicate sample id {:?}", w[0])));
    }
    sorted.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_hold = ids.len() / 10;
    let mut val = sorted[..n_hold].to_vec();
    let mut test = sorted[n_hold..2 * n_hold].to_vec();
    let mut train = sorted[2 * n_hold..].to_vec();
    val.sort();
    test.sort();
    train.sort();
    Ok(SplitManifest { seed, train, val, test })
}

impl SplitManifest {
    pub fn section(&self, s: Section) -> &[String] {
        match s {
            Section::Train => &self.train,
            Section::Val => &self.val,
            Section::Test => &self.test,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("SPLIT 1 seed={}\n", self.seed);
        for (name, ids) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            out.push_str(name);
            out.push_str(":\n");
            for id in ids {
                out.push_str(id);
                out.push('\n');
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Data(format!("split manifest: {msg}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let seed = header
            .strip_prefix("SPLIT 1 seed=")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad(format!("bad header {header:?}")))?;
        let mut m = SplitManifest {
            seed,
            train: vec![],
            val: vec![],
            test: vec![],
        };
        let mut current: Option<&mut Vec<String>> = None;
        for line in lines {
            match line.trim() {
                "" => {}
                "train:" => current = Some(&mut m.train),
                "val:" => current = Some(&mut m.val),
                "test:" => current = Some(&mut m.test),
                id => current
                    .as_mut()
                    .ok_or_else(|| bad(format!("id {id:?} before any section")))?
                    .push(id.to_string()),
            }
        }
        let mut all: Vec<&String> = m.train.iter().chain(&m.val).chain(&m.test).collect();
        all.sort();
        if let Some(w) = all.windows(2).find(|w| w[0] == w[1]) {
            return Err(bad(format!("id {:?} listed twice", w[0])));
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("img{i:04}")).collect()
    }

    #[test]
    fn proportions_follow_floor_rule() {
        for (n, expected) in [
            (1000, (800, 100, 100)),
            (10, (8, 1, 1)),
            (196, (158, 19, 19)),
            (3, (3, 0, 0)),
        ] {
            let m = split_dataset(&ids(n), 5).unwrap();
            assert_eq!((m.train.len(), m.val.len(), m.test.len()), expected, "n={n}");
        }
        assert!(split_dataset(&ids(2), 5).is_err());
    }

    #[test]
    fn partition_is_disjoint_and_complete() {
        let all = ids(57);
        let m = split_dataset(&all, 11).unwrap();
        let mut joined: Vec<String> = m.train.iter().chain(&m.val).chain(&m.test).cloned().collect();
        joined.sort();
        assert_eq!(joined, all);
    }

    #[test]
    fn reproducible_and_order_independent() {
        let mut shuffled = ids(40);
        shuffled.reverse();
        let a = split_dataset(&ids(40), 3).unwrap();
        assert_eq!(a, split_dataset(&shuffled, 3).unwrap());
        assert_ne!(a, split_dataset(&ids(40), 4).unwrap());
    }

    #[test]
    fn text_round_trip() {
        let m = split_dataset(&ids(20), 9).unwrap();
        let text = m.to_text();
        assert!(text.starts_with("SPLIT 1 seed=9\ntrain:\n"));
        assert_eq!(SplitManifest::parse(&text).unwrap(), m);
        assert!(SplitManifest::parse("SPLIT 2 seed=1\n").is_err());
        assert!(SplitManifest::parse("SPLIT 1 seed=1\ntrain:\na\nval:\na\n").is_err());
    }
}
