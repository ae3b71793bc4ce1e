//! The symmetry group of the 2x2x2 table: axis permutations combined with
//! per-axis level swaps (48 elements).

use serde::Serialize;

use crate::tensor::{CountTensor, ProbTensor};

/// Flat offset of cell `(i, j, k)` in a 2x2x2 table, 0-based levels.
pub const fn cell(i: usize, j: usize, k: usize) -> usize {
    4 * i + 2 * j + k
}

/// Levels of a flat 2x2x2 offset.
pub const fn levels(c: usize) -> [usize; 3] {
    [(c >> 2) & 1, (c >> 1) & 1, c & 1]
}

/// `g` sends level `s` of axis `a` to level `s ^ swap[a]` of axis `perm[a]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct SymmetryAction {
    pub perm: [usize; 3],
    pub swap: [bool; 3],
}

const PERMS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

impl SymmetryAction {
    pub const IDENTITY: SymmetryAction = SymmetryAction {
        perm: [0, 1, 2],
        swap: [false; 3],
    };

    /// All 48 group elements, identity first.
    pub fn all() -> impl Iterator<Item = SymmetryAction> {
        PERMS.into_iter().flat_map(|perm| {
            (0..8u8).map(move |bits| SymmetryAction {
                perm,
                swap: [bits & 1 != 0, bits & 2 != 0, bits & 4 != 0],
            })
        })
    }

    pub fn apply_levels(&self, idx: [usize; 3]) -> [usize; 3] {
        let mut out = [0; 3];
        for a in 0..3 {
            out[self.perm[a]] = idx[a] ^ usize::from(self.swap[a]);
        }
        out
    }

    pub fn apply_cell(&self, c: usize) -> usize {
        let [i, j, k] = self.apply_levels(levels(c));
        cell(i, j, k)
    }

    /// Image of the facet `(axis, level)`.
    pub fn apply_facet(&self, (axis, level): (usize, usize)) -> (usize, usize) {
        (self.perm[axis], level ^ usize::from(self.swap[axis]))
    }

    /// `(g . t)[g(c)] = t[c]`.
    pub fn apply_values<T: Copy + Default>(&self, t: &[T; 8]) -> [T; 8] {
        let mut out = [T::default(); 8];
        for (c, &v) in t.iter().enumerate() {
            out[self.apply_cell(c)] = v;
        }
        out
    }

    pub fn inverse(&self) -> SymmetryAction {
        let mut perm = [0; 3];
        let mut swap = [false; 3];
        for a in 0..3 {
            perm[self.perm[a]] = a;
            swap[self.perm[a]] = self.swap[a];
        }
        SymmetryAction { perm, swap }
    }

    /// `self` after `other`.
    pub fn compose(&self, other: &SymmetryAction) -> SymmetryAction {
        let mut perm = [0; 3];
        let mut swap = [false; 3];
        for a in 0..3 {
            perm[a] = self.perm[other.perm[a]];
            swap[a] = other.swap[a] ^ self.swap[other.perm[a]];
        }
        SymmetryAction { perm, swap }
    }

    pub fn apply_counts(&self, u: &CountTensor) -> CountTensor {
        let vals = as_array(u.entries());
        CountTensor::new(vec![2, 2, 2], self.apply_values(&vals).to_vec()).expect("same total")
    }

    pub fn apply_prob(&self, p: &ProbTensor) -> ProbTensor {
        let vals = as_array(p.entries());
        ProbTensor::new(vec![2, 2, 2], self.apply_values(&vals).to_vec()).expect("same mass")
    }
}

pub(crate) fn as_array<T: Copy>(s: &[T]) -> [T; 8] {
    s.try_into().expect("2x2x2 table")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_has_48_distinct_elements() {
        let all: std::collections::HashSet<_> = SymmetryAction::all().collect();
        assert_eq!(all.len(), 48);
    }

    #[test]
    fn inverse_and_compose() {
        for g in SymmetryAction::all() {
            let gi = g.inverse();
            assert_eq!(g.compose(&gi), SymmetryAction::IDENTITY);
            assert_eq!(gi.compose(&g), SymmetryAction::IDENTITY);
            for h in SymmetryAction::all().step_by(7) {
                for c in 0..8 {
                    assert_eq!(g.compose(&h).apply_cell(c), g.apply_cell(h.apply_cell(c)));
                }
            }
        }
    }

    #[test]
    fn facet_action_matches_cell_action() {
        // cells in facet (a, s) map onto cells in g(a, s)
        for g in SymmetryAction::all() {
            for a in 0..3 {
                for s in 0..2 {
                    let (b, t) = g.apply_facet((a, s));
                    for c in (0..8).filter(|&c| levels(c)[a] == s) {
                        assert_eq!(levels(g.apply_cell(c))[b], t);
                    }
                }
            }
        }
    }
}
