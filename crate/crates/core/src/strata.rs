//! The boundary stratification of the 2x2x2 model with two latent classes.
//!
//! The six codimension-one strata are the facets where one slice of the
//! table has rank one. Facet `(axis, level)` carries the label
//! `2 * axis + level + 1`, so the labels run over `1..=6` and
//!
//! | label | rank-one slice       | binomial              |
//! |-------|----------------------|-----------------------|
//! | 1     | axis 0, level 0      | `p111 p122 - p112 p121` |
//! | 2     | axis 0, level 1      | `p211 p222 - p212 p221` |
//! | 3     | axis 1, level 0      | `p111 p212 - p112 p211` |
//! | 4     | axis 1, level 1      | `p121 p222 - p122 p221` |
//! | 5     | axis 2, level 0      | `p111 p221 - p121 p211` |
//! | 6     | axis 2, level 1      | `p112 p222 - p122 p212` |
//!
//! Every other stratum is an intersection of facets and is named by the
//! concatenation of its facet labels (`"13"`, `"135"`, `"1234"`, ...). The
//! interior has no facets and is named `"0"`. Strata are ordered by reverse
//! inclusion of their facet sets.

use std::fmt;
use std::sync::OnceLock;

use serde::{Serialize, Serializer};

use crate::symmetry::{cell, levels, SymmetryAction};
use crate::tensor::ProbTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum StratumClass {
    Interior,
    Codim1,
    S5a,
    S5b,
    S4a,
    S4b,
    Independence,
}

impl StratumClass {
    pub const ALL: [StratumClass; 7] = [
        StratumClass::Interior,
        StratumClass::Codim1,
        StratumClass::S5a,
        StratumClass::S5b,
        StratumClass::S4a,
        StratumClass::S4b,
        StratumClass::Independence,
    ];

    /// Column name used in basin tables.
    pub fn label(self) -> &'static str {
        match self {
            StratumClass::Interior => "7-dim",
            StratumClass::Codim1 => "6-dim",
            StratumClass::S5a => "5a",
            StratumClass::S5b => "5b",
            StratumClass::S4a => "4a",
            StratumClass::S4b => "4b",
            StratumClass::Independence => "3-dim",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            StratumClass::Interior => 7,
            StratumClass::Codim1 => 6,
            StratumClass::S5a | StratumClass::S5b => 5,
            StratumClass::S4a | StratumClass::S4b => 4,
            StratumClass::Independence => 3,
        }
    }

    /// Facet bit set of the representative the closed-form estimators are
    /// written for.
    fn canonical_facets(self) -> u8 {
        match self {
            StratumClass::Interior => 0,
            StratumClass::Codim1 => facet_bit((0, 0)),
            StratumClass::S5a => facet_bit((0, 0)) | facet_bit((1, 0)),
            StratumClass::S5b => facet_bit((0, 0)) | facet_bit((0, 1)),
            StratumClass::S4a => facet_bit((0, 0)) | facet_bit((1, 0)) | facet_bit((2, 0)),
            StratumClass::S4b => 0b001111,
            StratumClass::Independence => 0b111111,
        }
    }

    fn of_facets(facets: u8) -> Option<StratumClass> {
        let per_axis: Vec<u8> = (0..3).map(|a| (facets >> (2 * a)) & 0b11).collect();
        let count = facets.count_ones();
        let full_axes = per_axis.iter().filter(|&&m| m == 0b11).count();
        let touched = per_axis.iter().filter(|&&m| m != 0).count();
        match (count, full_axes, touched) {
            (0, _, _) => Some(StratumClass::Interior),
            (1, _, _) => Some(StratumClass::Codim1),
            (2, 1, 1) => Some(StratumClass::S5b),
            (2, 0, 2) => Some(StratumClass::S5a),
            (3, 0, 3) => Some(StratumClass::S4a),
            (4, 2, 2) => Some(StratumClass::S4b),
            (6, _, _) => Some(StratumClass::Independence),
            _ => None,
        }
    }
}

fn facet_bit((axis, level): (usize, usize)) -> u8 {
    1 << (2 * axis + level)
}

/// Class-specific symmetry data. Axes and levels are 0-based.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StratumLabels {
    Interior,
    /// The slice `level` of `axis` has rank one.
    Codim1 { axis: usize, slice: usize },
    /// Two rank-one slices on different axes.
    S5a { axes: (usize, usize), slices: (usize, usize) },
    /// Both slices of `axis` have rank one: the other two variables are
    /// independent given this one.
    S5b { axis: usize },
    /// One rank-one slice per axis.
    S4a { slices: [usize; 3] },
    /// `axis` is independent of the other two variables.
    S4b { axis: usize },
    Independence,
}

/// `p[plus.0] p[plus.1] - p[minus.0] p[minus.1]` over flat 2x2x2 offsets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Binomial {
    pub plus: (usize, usize),
    pub minus: (usize, usize),
}

impl Binomial {
    fn new(plus: (usize, usize), minus: (usize, usize)) -> Self {
        let sort = |(a, b): (usize, usize)| (a.min(b), a.max(b));
        let (plus, minus) = (sort(plus), sort(minus));
        if plus.0 <= minus.0 {
            Binomial { plus, minus }
        } else {
            Binomial { plus: minus, minus: plus }
        }
    }

    pub fn eval(&self, p: &[f64]) -> f64 {
        p[self.plus.0] * p[self.plus.1] - p[self.minus.0] * p[self.minus.1]
    }

    fn mapped(&self, g: &SymmetryAction) -> Binomial {
        let m = |(a, b): (usize, usize)| (g.apply_cell(a), g.apply_cell(b));
        Binomial::new(m(self.plus), m(self.minus))
    }
}

impl fmt::Display for Binomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = |c: usize| {
            let [i, j, k] = levels(c);
            format!("p{}{}{}", i + 1, j + 1, k + 1)
        };
        write!(
            f,
            "{}*{} - {}*{}",
            name(self.plus.0),
            name(self.plus.1),
            name(self.minus.0),
            name(self.minus.1)
        )
    }
}

impl Serialize for Binomial {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// The rank-one condition on slice `level` of `axis`.
fn facet_binomial((axis, level): (usize, usize)) -> Binomial {
    let others: Vec<usize> = (0..3).filter(|&b| b != axis).collect();
    let at = |x: usize, y: usize| {
        let mut idx = [0; 3];
        idx[axis] = level;
        idx[others[0]] = x;
        idx[others[1]] = y;
        cell(idx[0], idx[1], idx[2])
    };
    Binomial::new((at(0, 0), at(1, 1)), (at(0, 1), at(1, 0)))
}

/// All 2-minors of a matrix given by rows of flat offsets.
fn minors(rows: &[Vec<usize>]) -> Vec<Binomial> {
    let ncols = rows[0].len();
    let mut out = Vec::new();
    for r1 in 0..rows.len() {
        for r2 in (r1 + 1)..rows.len() {
            for c1 in 0..ncols {
                for c2 in (c1 + 1)..ncols {
                    out.push(Binomial::new(
                        (rows[r1][c1], rows[r2][c2]),
                        (rows[r1][c2], rows[r2][c1]),
                    ));
                }
            }
        }
    }
    out
}

/// Rows of the single-axis flattening: one row per level of `axis`.
fn axis_flattening(axis: usize) -> Vec<Vec<usize>> {
    (0..2)
        .map(|s| (0..8).filter(|&c| levels(c)[axis] == s).collect())
        .collect()
}

fn dedup(mut v: Vec<Binomial>) -> Vec<Binomial> {
    let mut seen = std::collections::HashSet::new();
    v.retain(|b| seen.insert(*b));
    v
}

fn canonical_binomials(class: StratumClass) -> Vec<Binomial> {
    // the 2x3 matrix whose columns are the cells (i, j) != (2, 2)
    let five_a = vec![
        vec![cell(0, 0, 0), cell(0, 1, 0), cell(1, 0, 0)],
        vec![cell(0, 0, 1), cell(0, 1, 1), cell(1, 0, 1)],
    ];
    match class {
        StratumClass::Interior => vec![],
        StratumClass::Codim1 => vec![facet_binomial((0, 0))],
        StratumClass::S5a => minors(&five_a),
        StratumClass::S5b => vec![facet_binomial((0, 0)), facet_binomial((0, 1))],
        StratumClass::S4a => {
            let second = vec![
                vec![cell(0, 0, 0), cell(0, 1, 0)],
                vec![cell(0, 0, 1), cell(0, 1, 1)],
                vec![cell(1, 0, 0), cell(1, 1, 0)],
            ];
            dedup([minors(&five_a), minors(&second)].concat())
        }
        StratumClass::S4b => minors(&axis_flattening(2)),
        StratumClass::Independence => {
            dedup((0..3).flat_map(|a| minors(&axis_flattening(a))).collect())
        }
    }
}

/// One boundary stratum of the model.
#[derive(Clone, Debug, Serialize)]
pub struct StratumDescriptor {
    pub id: String,
    pub class: StratumClass,
    pub dim: usize,
    pub labels: StratumLabels,
    pub binomials: Vec<Binomial>,
    #[serde(skip)]
    facets: u8,
    /// Maps this stratum onto its class representative.
    #[serde(skip)]
    canonicalizer: SymmetryAction,
}

impl StratumDescriptor {
    fn from_facets(facets: u8) -> Option<Self> {
        let class = StratumClass::of_facets(facets)?;
        let list: Vec<(usize, usize)> = facet_list(facets);
        let canonicalizer = SymmetryAction::all()
            .find(|g| map_facets(facets, g) == class.canonical_facets())
            .expect("every stratum is in the orbit of its representative");
        let back = canonicalizer.inverse();
        let binomials = canonical_binomials(class)
            .iter()
            .map(|b| b.mapped(&back))
            .collect();
        let labels = match class {
            StratumClass::Interior => StratumLabels::Interior,
            StratumClass::Codim1 => StratumLabels::Codim1 {
                axis: list[0].0,
                slice: list[0].1,
            },
            StratumClass::S5a => StratumLabels::S5a {
                axes: (list[0].0, list[1].0),
                slices: (list[0].1, list[1].1),
            },
            StratumClass::S5b => StratumLabels::S5b { axis: list[0].0 },
            StratumClass::S4a => StratumLabels::S4a {
                slices: [list[0].1, list[1].1, list[2].1],
            },
            StratumClass::S4b => StratumLabels::S4b {
                axis: (0..3).find(|&a| (facets >> (2 * a)) & 0b11 == 0).expect("isolated axis"),
            },
            StratumClass::Independence => StratumLabels::Independence,
        };
        let id = if facets == 0 {
            "0".to_string()
        } else {
            list.iter().map(|&(a, s)| (2 * a + s + 1).to_string()).collect()
        };
        Some(StratumDescriptor {
            id,
            class,
            dim: class.dim(),
            labels,
            binomials,
            facets,
            canonicalizer,
        })
    }

    /// The facets `(axis, level)` whose intersection this stratum is.
    pub fn facets(&self) -> Vec<(usize, usize)> {
        facet_list(self.facets)
    }

    pub(crate) fn canonicalizer(&self) -> SymmetryAction {
        self.canonicalizer
    }

    /// Image of this stratum under a table symmetry.
    pub fn mapped(&self, g: &SymmetryAction) -> &'static StratumDescriptor {
        let target = map_facets(self.facets, g);
        enumerate_strata()
            .iter()
            .find(|s| s.facets == target)
            .expect("the catalog is closed under symmetries")
    }
}

impl PartialEq for StratumDescriptor {
    fn eq(&self, other: &Self) -> bool {
        self.facets == other.facets
    }
}

impl Eq for StratumDescriptor {}

fn facet_list(facets: u8) -> Vec<(usize, usize)> {
    (0..6)
        .filter(|b| facets & (1 << b) != 0)
        .map(|b| (b / 2, b % 2))
        .collect()
}

fn map_facets(facets: u8, g: &SymmetryAction) -> u8 {
    facet_list(facets)
        .into_iter()
        .fold(0, |acc, f| acc | facet_bit(g.apply_facet(f)))
}

/// The 34 strata, by decreasing dimension and then by id.
pub fn enumerate_strata() -> &'static [StratumDescriptor] {
    static CATALOG: OnceLock<Vec<StratumDescriptor>> = OnceLock::new();
    CATALOG.get_or_init(|| {
        let mut all: Vec<StratumDescriptor> =
            (0u8..64).filter_map(StratumDescriptor::from_facets).collect();
        all.sort_by(|a, b| b.dim.cmp(&a.dim).then_with(|| a.id.cmp(&b.id)));
        all
    })
}

pub fn stratum(id: &str) -> Option<&'static StratumDescriptor> {
    enumerate_strata().iter().find(|s| s.id == id)
}

/// Largest absolute value of the stratum's defining binomials at `p`.
pub fn residual(p: &ProbTensor, s: &StratumDescriptor) -> f64 {
    assert_eq!(p.dims(), &[2, 2, 2], "strata are defined for 2x2x2 tables");
    s.binomials
        .iter()
        .map(|b| b.eval(p.entries()).abs())
        .fold(0.0, f64::max)
}

/// `lower` lies in the closure of `upper`.
pub fn poset_leq(lower: &StratumDescriptor, upper: &StratumDescriptor) -> bool {
    upper.facets & !lower.facets == 0
}

/// Covering pairs `(lower, upper)` of the stratum poset.
pub fn covering_relation() -> Vec<(&'static StratumDescriptor, &'static StratumDescriptor)> {
    let all = enumerate_strata();
    let mut out = Vec::new();
    for lo in all {
        for hi in all {
            if lo == hi || !poset_leq(lo, hi) {
                continue;
            }
            let between = all
                .iter()
                .any(|m| m != lo && m != hi && poset_leq(lo, m) && poset_leq(m, hi));
            if !between {
                out.push((lo, hi));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn s(id: &str) -> &'static StratumDescriptor {
        stratum(id).unwrap_or_else(|| panic!("no stratum {id}"))
    }

    #[test]
    fn census() {
        let all = enumerate_strata();
        assert_eq!(all.len(), 34);
        let mut dims = BTreeMap::new();
        let mut classes = BTreeMap::new();
        for st in all {
            *dims.entry(st.dim).or_insert(0) += 1;
            *classes.entry(st.class).or_insert(0) += 1;
        }
        assert_eq!(dims, BTreeMap::from([(7, 1), (6, 6), (5, 15), (4, 11), (3, 1)]));
        assert_eq!(classes[&StratumClass::S5a], 12);
        assert_eq!(classes[&StratumClass::S5b], 3);
        assert_eq!(classes[&StratumClass::S4a], 8);
        assert_eq!(classes[&StratumClass::S4b], 3);
    }

    #[test]
    fn ids_follow_facet_labels() {
        let ids: Vec<&str> = enumerate_strata().iter().map(|s| s.id.as_str()).collect();
        assert_eq!(&ids[..7], &["0", "1", "2", "3", "4", "5", "6"]);
        for id in ["12", "34", "56"] {
            assert_eq!(s(id).class, StratumClass::S5b);
        }
        for id in ["1234", "1256", "3456"] {
            assert_eq!(s(id).class, StratumClass::S4b);
        }
        assert_eq!(s("1234").labels, StratumLabels::S4b { axis: 2 });
        assert_eq!(s("3456").labels, StratumLabels::S4b { axis: 0 });
        assert_eq!(s("135").labels, StratumLabels::S4a { slices: [0, 0, 0] });
        assert_eq!(s("246").labels, StratumLabels::S4a { slices: [1, 1, 1] });
        assert_eq!(s("123456").class, StratumClass::Independence);
        assert!(stratum("125").is_none());
    }

    #[test]
    fn facet_binomials_match_the_table() {
        let want = [
            "p111*p122 - p112*p121",
            "p211*p222 - p212*p221",
            "p111*p212 - p112*p211",
            "p121*p222 - p122*p221",
            "p111*p221 - p121*p211",
            "p112*p222 - p122*p212",
        ];
        for (label, w) in want.iter().enumerate() {
            let st = s(&(label + 1).to_string());
            assert_eq!(st.binomials.len(), 1);
            assert_eq!(st.binomials[0].to_string(), *w);
        }
    }

    #[test]
    fn binomial_counts_per_class() {
        assert_eq!(s("0").binomials.len(), 0);
        assert_eq!(s("12").binomials.len(), 2);
        assert_eq!(s("13").binomials.len(), 3);
        assert_eq!(s("135").binomials.len(), 5);
        assert_eq!(s("1234").binomials.len(), 6);
        // each facet binomial of a stratum appears among its generators
        for st in enumerate_strata() {
            for f in st.facets() {
                let b = facet_binomial(f);
                if st.class != StratumClass::Independence {
                    assert!(st.binomials.contains(&b), "{} misses {b}", st.id);
                }
            }
        }
    }

    #[test]
    fn poset_examples() {
        let bottom = s("123456");
        let top = s("0");
        for st in enumerate_strata() {
            assert!(poset_leq(bottom, st));
            assert!(poset_leq(st, top));
        }
        assert!(poset_leq(s("12"), s("1")));
        assert!(poset_leq(s("12"), s("2")));
        assert!(!poset_leq(s("1"), s("2")));
        assert!(!poset_leq(s("2"), s("1")));
        assert!(!poset_leq(s("135"), s("12")));
    }

    #[test]
    fn hasse_diagram_edges() {
        let covers = covering_relation();
        let above = |id: &str| -> Vec<String> {
            let mut v: Vec<String> = covers
                .iter()
                .filter(|(lo, _)| lo.id == id)
                .map(|(_, hi)| hi.id.clone())
                .collect();
            v.sort();
            v
        };
        assert_eq!(above("12"), vec!["1", "2"]);
        assert_eq!(above("1234"), vec!["12", "13", "14", "23", "24", "34"]);
        assert_eq!(above("135"), vec!["13", "15", "35"]);
        assert_eq!(above("123456").len(), 11);
        assert_eq!(above("1").len(), 1);
        // 6 + 15*2 + 8*3 + 3*6 + 11
        assert_eq!(covers.len(), 6 + 30 + 24 + 18 + 11);
    }

    #[test]
    fn poset_order_respects_dimension() {
        for a in enumerate_strata() {
            for b in enumerate_strata() {
                if a != b && poset_leq(a, b) {
                    assert!(a.dim < b.dim, "{} <= {}", a.id, b.id);
                }
            }
        }
    }

    #[test]
    fn uniform_satisfies_every_stratum() {
        let p = ProbTensor::uniform(vec![2, 2, 2]).unwrap();
        for st in enumerate_strata() {
            assert_eq!(residual(&p, st), 0.0);
        }
    }

    #[test]
    fn symmetry_maps_catalog_onto_itself() {
        for g in SymmetryAction::all() {
            for st in enumerate_strata() {
                let image = st.mapped(&g);
                assert_eq!(image.class, st.class);
                let back = image.mapped(&g.inverse());
                assert_eq!(back.id, st.id);
            }
        }
    }
}
