//! Dependency pool: branches linked by transfers since their last
//! checkpoint, kept as disjoint groups that must checkpoint together.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use crate::wire::BranchId;

pub type Group = BTreeSet<BranchId>;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DependencyPool {
    groups: Vec<Group>,
}

/// Which of the four cases a recorded dependency hit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DependencyChange {
    Created,
    Extended,
    Merged,
    Unchanged,
    /// `a == b`; nothing to record.
    SelfDependency,
}

impl DependencyPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    fn position(&self, b: BranchId) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(&b))
    }

    pub fn record_dependency(&mut self, a: BranchId, b: BranchId) -> DependencyChange {
        if a == b {
            return DependencyChange::SelfDependency;
        }
        match (self.position(a), self.position(b)) {
            (None, None) => {
                self.groups.push([a, b].into_iter().collect());
                DependencyChange::Created
            }
            (Some(i), None) => {
                self.groups[i].insert(b);
                DependencyChange::Extended
            }
            (None, Some(j)) => {
                self.groups[j].insert(a);
                DependencyChange::Extended
            }
            (Some(i), Some(j)) if i == j => DependencyChange::Unchanged,
            (Some(i), Some(j)) => {
                let (keep, gone) = (i.min(j), i.max(j));
                let moved = self.groups.swap_remove(gone);
                self.groups[keep].extend(moved);
                DependencyChange::Merged
            }
        }
    }

    pub fn find_group(&self, b: BranchId) -> Option<&Group> {
        self.groups.iter().find(|g| g.contains(&b))
    }

    /// Adds `{b}` as its own group unless `b` is already pooled. Returns
    /// whether a group was added.
    pub fn insert_singleton(&mut self, b: BranchId) -> bool {
        if self.position(b).is_some() {
            return false;
        }
        self.groups.push(core::iter::once(b).collect());
        true
    }

    /// Removes the group equal to `group`. Returns whether it was present.
    pub fn remove_group(&mut self, group: &Group) -> bool {
        match self.groups.iter().position(|g| g == group) {
            Some(i) => {
                self.groups.remove(i);
                true
            }
            None => false,
        }
    }

    /// Canonical form for comparisons: groups sorted by their smallest member.
    pub fn canonical(&self) -> BTreeSet<Group> {
        self.groups.iter().cloned().collect()
    }

    /// Every branch in at most one group and no empty groups.
    pub fn is_partition(&self) -> bool {
        let mut seen = BTreeSet::new();
        self.groups
            .iter()
            .all(|g| !g.is_empty() && g.iter().all(|b| seen.insert(*b)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(n: u16) -> BranchId {
        BranchId::new(n).unwrap()
    }

    fn set(ns: &[u16]) -> Group {
        ns.iter().map(|&n| b(n)).collect()
    }

    #[test]
    fn four_cases() {
        let mut p = DependencyPool::new();
        assert_eq!(p.record_dependency(b(1111), b(1112)), DependencyChange::Created);
        assert_eq!(p.canonical(), [set(&[1111, 1112])].into_iter().collect());
        assert_eq!(p.record_dependency(b(1112), b(1113)), DependencyChange::Extended);
        assert_eq!(p.canonical(), [set(&[1111, 1112, 1113])].into_iter().collect());
        assert_eq!(p.record_dependency(b(1113), b(1111)), DependencyChange::Unchanged);

        let mut p = DependencyPool::new();
        p.record_dependency(b(1111), b(1112));
        p.record_dependency(b(1113), b(1114));
        assert_eq!(p.record_dependency(b(1112), b(1113)), DependencyChange::Merged);
        assert_eq!(
            p.canonical(),
            [set(&[1111, 1112, 1113, 1114])].into_iter().collect()
        );
        assert!(p.is_partition());
    }

    #[test]
    fn self_dependency_ignored() {
        let mut p = DependencyPool::new();
        assert_eq!(
            p.record_dependency(b(1111), b(1111)),
            DependencyChange::SelfDependency
        );
        assert!(p.is_empty());
    }

    #[test]
    fn find_and_remove() {
        let mut p = DependencyPool::new();
        assert!(p.find_group(b(1111)).is_none());
        p.record_dependency(b(1111), b(1112));
        assert_eq!(p.find_group(b(1112)), Some(&set(&[1111, 1112])));
        assert!(p.find_group(b(1113)).is_none());
        assert!(p.insert_singleton(b(1113)));
        assert!(!p.insert_singleton(b(1111)));
        assert!(p.remove_group(&set(&[1111, 1112])));
        assert!(!p.remove_group(&set(&[1111, 1112])));
        assert_eq!(p.canonical(), [set(&[1113])].into_iter().collect());
    }
}
