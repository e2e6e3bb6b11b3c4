use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn get(&self, name: &str) -> Option<&[String]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// Sorts sequence ids and hands out the first `train`, the next `val` and
/// the remaining `test` of them.
pub fn split_dataset(sequence_ids: &[String], counts: (usize, usize, usize)) -> Result<DatasetSplit> {
    let (train, val, test) = counts;
    if train + val + test != sequence_ids.len() {
        return Err(Error::Config(format!(
            "split sizes {train}+{val}+{test} do not add up to {} sequences",
            sequence_ids.len()
        )));
    }
    let mut ids = sequence_ids.to_vec();
    ids.sort();
    if let Some(pair) = ids.windows(2).find(|p| p[0] == p[1]) {
        return Err(Error::Data(format!("duplicate sequence id {}", pair[0])));
    }
    let test_ids = ids.split_off(train + val);
    let val_ids = ids.split_off(train);
    Ok(DatasetSplit { train: ids, val: val_ids, test: test_ids })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn ids(n: usize) -> Vec<String> {
        (0..n).rev().map(|i| format!("seq_{i:03}")).collect()
    }

    #[test]
    fn full_size_split() {
        let s = split_dataset(&ids(35), (25, 3, 7)).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (25, 3, 7));
        assert_eq!(s.train[0], "seq_000");
        assert_eq!(s.test[6], "seq_034");
    }

    #[test]
    fn tiny_and_degenerate_splits() {
        let s = split_dataset(&ids(3), (1, 1, 1)).unwrap();
        assert_eq!(s, DatasetSplit { train: vec!["seq_000".into()], val: vec!["seq_001".into()], test: vec!["seq_002".into()] });
        let s = split_dataset(&ids(4), (4, 0, 0)).unwrap();
        assert_eq!(s.train.len(), 4);
        assert!(s.val.is_empty() && s.test.is_empty());
    }

    #[test]
    fn mismatched_counts_rejected() {
        assert!(split_dataset(&ids(5), (2, 2, 2)).is_err());
    }
}
