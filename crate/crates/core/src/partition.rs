use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A disjoint cover of the point indices `0..n` by `K` groups.
///
/// Groups built from labels are ordered by ascending size (ties broken by
/// the smallest member index), so that `N_1 <= ... <= N_K`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    groups: Vec<Vec<usize>>,
    membership: Vec<usize>,
}

impl Partition {
    /// Groups points by label value. Labels can be any integers.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut distinct: Vec<usize> = labels.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); distinct.len()];
        for (i, l) in labels.iter().enumerate() {
            let g = distinct.binary_search(l).expect("label present");
            groups[g].push(i);
        }
        groups.sort_by_key(|g| (g.len(), g[0]));
        Self::from_groups_unchecked(groups, labels.len())
    }

    /// Contiguous blocks of the given sizes, in the given order.
    pub fn contiguous(sizes: &[usize]) -> Result<Self> {
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::invalid("cluster sizes must be positive"));
        }
        let mut groups = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &s in sizes {
            groups.push((start..start + s).collect());
            start += s;
        }
        Ok(Self::from_groups_unchecked(groups, start))
    }

    /// Validates that `groups` is a disjoint cover of `0..n`.
    pub fn from_groups(groups: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        for g in &groups {
            if g.is_empty() {
                return Err(Error::invalid("empty group in partition"));
            }
            for &i in g {
                if i >= n || seen[i] {
                    return Err(Error::invalid(format!(
                        "index {i} is out of range or repeated"
                    )));
                }
                seen[i] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("index {missing} not covered")));
        }
        Ok(Self::from_groups_unchecked(groups, n))
    }

    fn from_groups_unchecked(groups: Vec<Vec<usize>>, n: usize) -> Self {
        let mut membership = vec![0; n];
        for (k, g) in groups.iter().enumerate() {
            for &i in g {
                membership[i] = k;
            }
        }
        Self { groups, membership }
    }

    pub fn k(&self) -> usize {
        self.groups.len()
    }

    pub fn n(&self) -> usize {
        self.membership.len()
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    /// Group index (0-based) of point `i`.
    pub fn group_of(&self, i: usize) -> usize {
        self.membership[i]
    }

    pub fn membership(&self) -> &[usize] {
        &self.membership
    }

    /// Size of the group containing point `i`.
    pub fn size_of_group_containing(&self, i: usize) -> usize {
        self.groups[self.membership[i]].len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_are_grouped_and_sorted_by_size() {
        let p = Partition::from_labels(&[7, 7, 7, 2, 2, 9]);
        assert_eq!(p.sizes(), vec![1, 2, 3]);
        assert_eq!(p.groups()[0], vec![5]);
        assert_eq!(p.group_of(0), 2);
    }

    #[test]
    fn invalid_groups_rejected() {
        assert!(Partition::from_groups(vec![vec![0, 1], vec![1]], 2).is_err());
        assert!(Partition::from_groups(vec![vec![0]], 2).is_err());
        assert!(Partition::contiguous(&[2, 0]).is_err());
    }
}
