//! 2D descriptors, Lipinski classification and the SDF -> CSV transform.

mod rings;
mod transform;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::sdf::{BondOrder, MolGraph};

pub use rings::{connected_components, cyclomatic_number, is_aromatic_ring, perceive_aromatic_rings, perceive_rings, Ring};
pub use transform::{
    read_dataset, transform_dataset, write_dataset, DescriptorRow, TransformOptions, TransformReport,
    DATASET_HEADER,
};

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("tpsa table line {line}: {reason}")]
    TpsaTable { line: usize, reason: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("dataset row {row}: {reason}")]
    Dataset { row: usize, reason: String },
    #[error("sdf: {0}")]
    Sdf(#[from] crate::sdf::SdfError),
}

pub const HYDROGEN_WEIGHT: f64 = 1.008;

#[derive(Clone, Debug)]
pub struct AtomicWeights(HashMap<String, f64>);

impl Default for AtomicWeights {
    fn default() -> Self {
        let table = [
            ("H", 1.008),
            ("C", 12.011),
            ("N", 14.007),
            ("O", 15.999),
            ("S", 32.06),
            ("P", 30.974),
            ("F", 18.998),
            ("Cl", 35.45),
            ("Br", 79.904),
            ("I", 126.904),
        ];
        Self(table.iter().map(|(e, w)| (e.to_string(), *w)).collect())
    }
}

impl AtomicWeights {
    pub fn get(&self, element: &str) -> Option<f64> {
        self.0.get(element).copied()
    }
}

fn default_valence(element: &str, charge: i32) -> Option<i32> {
    let v = match element {
        "C" => 4 - charge.abs(),
        "N" | "P" => 3 + charge,
        "O" | "S" => 2 + charge,
        "F" | "Cl" | "Br" | "I" | "H" => 1 - charge.abs(),
        _ => return None,
    };
    Some(v)
}

/// Implied hydrogen count for one atom: default valence (charge adjusted)
/// minus the explicit bond-order sum, aromatic bonds counting 1.5.
pub fn implicit_hydrogens(graph: &MolGraph, atom: usize) -> u32 {
    let a = &graph.atoms[atom];
    let Some(valence) = default_valence(&a.element, a.charge) else {
        log::warn!("no default valence for element {:?}; assuming 0 implicit H", a.element);
        return 0;
    };
    let half_units: i32 = graph
        .bonds
        .iter()
        .filter(|b| b.a == atom || b.b == atom)
        .map(|b| b.order.half_units() as i32)
        .sum();
    ((2 * valence - half_units).max(0) / 2) as u32
}

/// Chemical environment of a polar atom, as used by the TPSA table.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PolarEnvironment {
    pub element: String,
    pub charge: i32,
    pub hydrogens: u32,
    /// Sorted bond order codes to heavy neighbours (4 = aromatic).
    pub bond_orders: Vec<u8>,
    pub aromatic: bool,
}

impl fmt::Display for PolarEnvironment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let orders = if self.bond_orders.is_empty() {
            "-".to_string()
        } else {
            self.bond_orders.iter().map(u8::to_string).collect::<Vec<_>>().join(",")
        };
        write!(
            f,
            "{}\t{}\t{}\t{}\t{}",
            self.element, self.charge, self.hydrogens, orders, self.aromatic as u8
        )
    }
}

#[derive(Clone, Debug, Default)]
pub struct TpsaContributionTable(HashMap<PolarEnvironment, f64>);

const DEFAULT_TPSA_TABLE: &str = include_str!("../../data/tpsa.tsv");

impl TpsaContributionTable {
    pub fn builtin() -> Self {
        Self::from_str(DEFAULT_TPSA_TABLE).expect("shipped TPSA table parses")
    }

    pub fn get(&self, env: &PolarEnvironment) -> Option<f64> {
        self.0.get(env).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromStr for TpsaContributionTable {
    type Err = DescriptorError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut table = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: &str| DescriptorError::TpsaTable { line: i + 1, reason: reason.into() };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 6 {
                return Err(bad("expected 6 tab-separated columns"));
            }
            let mut bond_orders: Vec<u8> = if cols[3] == "-" || cols[3].is_empty() {
                Vec::new()
            } else {
                cols[3]
                    .split(',')
                    .map(|s| s.parse::<u8>().ok().filter(|o| (1..=4).contains(o)))
                    .collect::<Option<_>>()
                    .ok_or_else(|| bad("bad bond order list"))?
            };
            bond_orders.sort_unstable();
            let env = PolarEnvironment {
                element: cols[0].to_string(),
                charge: cols[1].parse().map_err(|_| bad("bad charge"))?,
                hydrogens: cols[2].parse().map_err(|_| bad("bad hydrogen count"))?,
                bond_orders,
                aromatic: match cols[4] {
                    "0" => false,
                    "1" => true,
                    _ => return Err(bad("aromatic flag must be 0 or 1")),
                },
            };
            let value: f64 = cols[5].parse().map_err(|_| bad("bad contribution"))?;
            if !(value >= 0.0) {
                return Err(bad("contribution must be non-negative"));
            }
            table.insert(env, value);
        }
        Ok(Self(table))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Descriptors {
    pub molwt: f64,
    pub tpsa: f64,
    pub num_h_donors: u32,
    pub num_h_acceptors: u32,
    pub num_rotatable_bonds: u32,
    pub num_aromatic_rings: u32,
    pub fraction_csp3: f64,
    pub heavy_atom_count: u32,
}

/// Per-atom facts shared by several descriptors.
struct AtomView {
    implicit_h: Vec<u32>,
    explicit_h: Vec<u32>,
    heavy_degree: Vec<u32>,
    aromatic_bond: Vec<bool>,
    ring_bond: Vec<bool>,
    aromatic_rings: usize,
}

impl AtomView {
    fn new(graph: &MolGraph) -> Self {
        let n = graph.atoms.len();
        let mut explicit_h = vec![0; n];
        let mut heavy_degree = vec![0; n];
        for b in &graph.bonds {
            for (x, y) in [(b.a, b.b), (b.b, b.a)] {
                if graph.atoms[y].is_hydrogen() {
                    explicit_h[x] += 1;
                } else {
                    heavy_degree[x] += 1;
                }
            }
        }
        let rings = perceive_rings(graph);
        let mut ring_bond = vec![false; graph.bonds.len()];
        let mut aromatic_bond: Vec<bool> =
            graph.bonds.iter().map(|b| b.order == BondOrder::Aromatic).collect();
        let mut aromatic_rings = 0;
        for ring in &rings {
            ring.bonds.iter().for_each(|&b| ring_bond[b] = true);
            if is_aromatic_ring(graph, ring) {
                aromatic_rings += 1;
                ring.bonds.iter().for_each(|&b| aromatic_bond[b] = true);
            }
        }
        Self {
            implicit_h: (0..n).map(|i| implicit_hydrogens(graph, i)).collect(),
            explicit_h,
            heavy_degree,
            aromatic_bond,
            ring_bond,
            aromatic_rings,
        }
    }

    fn total_h(&self, atom: usize) -> u32 {
        self.implicit_h[atom] + self.explicit_h[atom]
    }
}

pub fn polar_environment(graph: &MolGraph, atom: usize) -> PolarEnvironment {
    let view = AtomView::new(graph);
    environment_of(graph, &view, atom)
}

fn environment_of(graph: &MolGraph, view: &AtomView, atom: usize) -> PolarEnvironment {
    let mut bond_orders = Vec::new();
    let mut aromatic = false;
    for (i, b) in graph.bonds.iter().enumerate() {
        if b.a != atom && b.b != atom {
            continue;
        }
        if graph.atoms[b.other(atom)].is_hydrogen() {
            continue;
        }
        if view.aromatic_bond[i] {
            aromatic = true;
            bond_orders.push(4);
        } else {
            bond_orders.push(b.order.code());
        }
    }
    bond_orders.sort_unstable();
    let a = &graph.atoms[atom];
    PolarEnvironment {
        element: a.element.clone(),
        charge: a.charge,
        hydrogens: view.total_h(atom),
        bond_orders,
        aromatic,
    }
}

/// Computes the eight descriptors. Unknown elements and unmatched polar
/// environments produce warnings, not errors.
pub fn compute_descriptors(
    graph: &MolGraph,
    weights: &AtomicWeights,
    tpsa_table: &TpsaContributionTable,
) -> (Descriptors, Vec<String>) {
    let view = AtomView::new(graph);
    let mut warnings = Vec::new();

    let mut molwt = 0.0;
    let mut heavy = 0;
    let mut donors = 0;
    let mut acceptors = 0;
    let mut carbons = 0;
    let mut sp3_carbons = 0;
    let mut tpsa = 0.0;

    for (i, atom) in graph.atoms.iter().enumerate() {
        match weights.get(&atom.element) {
            Some(w) => molwt += w,
            None => warnings.push(format!("no atomic weight for {:?}", atom.element)),
        }
        molwt += HYDROGEN_WEIGHT * view.implicit_h[i] as f64;
        if atom.is_hydrogen() {
            continue;
        }
        heavy += 1;
        match atom.element.as_str() {
            "N" | "O" => {
                acceptors += 1;
                if view.total_h(i) > 0 {
                    donors += 1;
                }
                let env = environment_of(graph, &view, i);
                match tpsa_table.get(&env) {
                    Some(c) => tpsa += c,
                    None => warnings.push(format!("no TPSA contribution for environment [{env}]")),
                }
            }
            "C" => {
                carbons += 1;
                let saturated = graph.bonds.iter().enumerate().all(|(bi, b)| {
                    (b.a != i && b.b != i) || (b.order == BondOrder::Single && !view.aromatic_bond[bi])
                });
                if saturated {
                    sp3_carbons += 1;
                }
            }
            _ => {}
        }
    }

    let rotatable = graph
        .bonds
        .iter()
        .enumerate()
        .filter(|(bi, b)| {
            b.order == BondOrder::Single
                && !view.ring_bond[*bi]
                && view.heavy_degree[b.a] >= 2
                && view.heavy_degree[b.b] >= 2
                && !graph.atoms[b.a].is_hydrogen()
                && !graph.atoms[b.b].is_hydrogen()
        })
        .count() as u32;

    for w in &warnings {
        log::warn!("{}: {w}", graph.name.trim());
    }

    let fraction_csp3 = if carbons == 0 { 0.0 } else { sp3_carbons as f64 / carbons as f64 };
    (
        Descriptors {
            molwt,
            tpsa,
            num_h_donors: donors,
            num_h_acceptors: acceptors,
            num_rotatable_bonds: rotatable,
            num_aromatic_rings: view.aromatic_rings as u32,
            fraction_csp3,
            heavy_atom_count: heavy,
        },
        warnings,
    )
}

pub const LIPINSKI_MAX_MOLWT: f64 = 500.0;
pub const LIPINSKI_MAX_LOGP: f64 = 5.0;
pub const LIPINSKI_MAX_DONORS: f64 = 5.0;
pub const LIPINSKI_MAX_ACCEPTORS: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LipinskiVerdict {
    pub passes_molwt: bool,
    pub passes_logp: bool,
    pub passes_donors: bool,
    pub passes_acceptors: bool,
    pub compliant: bool,
}

/// Rule of five with inclusive thresholds.
pub fn lipinski_check(molwt: f64, logp: f64, donors: f64, acceptors: f64) -> LipinskiVerdict {
    let passes_molwt = molwt <= LIPINSKI_MAX_MOLWT;
    let passes_logp = logp <= LIPINSKI_MAX_LOGP;
    let passes_donors = donors <= LIPINSKI_MAX_DONORS;
    let passes_acceptors = acceptors <= LIPINSKI_MAX_ACCEPTORS;
    LipinskiVerdict {
        passes_molwt,
        passes_logp,
        passes_donors,
        passes_acceptors,
        compliant: passes_molwt && passes_logp && passes_donors && passes_acceptors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdf::fixtures::{BENZENE_KEKULE, ETHANOL};
    use crate::sdf::{parse_molfile, Atom, Bond};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn build(elements: &[(&str, i32)], bonds: &[(usize, usize, u8)]) -> MolGraph {
        MolGraph::new(
            elements.iter().map(|(e, c)| Atom::new(e, *c)).collect(),
            bonds
                .iter()
                .map(|&(a, b, o)| Bond { a, b, order: BondOrder::from_code(o).unwrap() })
                .collect(),
        )
        .unwrap()
    }

    fn compute(g: &MolGraph) -> Descriptors {
        compute_descriptors(g, &AtomicWeights::default(), &TpsaContributionTable::builtin()).0
    }

    #[test]
    fn implicit_h_rules() {
        let methane = build(&[("C", 0)], &[]);
        assert_eq!(implicit_hydrogens(&methane, 0), 4);
        let ethanol = parse_molfile(ETHANOL.as_bytes()).unwrap();
        assert_eq!(implicit_hydrogens(&ethanol, 2), 1);
        let ammonium = build(&[("N", 1), ("C", 0), ("C", 0), ("C", 0)], &[(0, 1, 1), (0, 2, 1), (0, 3, 1)]);
        assert_eq!(implicit_hydrogens(&ammonium, 0), 1);
        let alkoxide = build(&[("C", 0), ("O", -1)], &[(0, 1, 1)]);
        assert_eq!(implicit_hydrogens(&alkoxide, 1), 0);
        let odd = build(&[("Xe", 0)], &[]);
        assert_eq!(implicit_hydrogens(&odd, 0), 0);
    }

    // Hand-derived: 2 x 12.011 + 6 x 1.008 + 15.999 = 46.069
    #[test]
    fn ethanol_descriptors() {
        let d = compute(&parse_molfile(ETHANOL.as_bytes()).unwrap());
        assert_abs_diff_eq!(d.molwt, 46.069, epsilon = 1e-9);
        assert_eq!(d.heavy_atom_count, 3);
        assert_eq!(d.num_h_donors, 1);
        assert_eq!(d.num_h_acceptors, 1);
        assert_eq!(d.num_rotatable_bonds, 0);
        assert_eq!(d.num_aromatic_rings, 0);
        assert_eq!(d.fraction_csp3, 1.0);
        assert_abs_diff_eq!(d.tpsa, 20.23, epsilon = 1e-12);
    }

    // 6 x 12.011 + 6 x 1.008 = 78.114
    #[test]
    fn benzene_descriptors() {
        let kek = compute(&parse_molfile(BENZENE_KEKULE.as_bytes()).unwrap());
        let flagged = compute(&build(&[("C", 0); 6], &(0..6).map(|i| (i, (i + 1) % 6, 4)).collect::<Vec<_>>()));
        for d in [kek, flagged] {
            assert_abs_diff_eq!(d.molwt, 78.114, epsilon = 1e-9);
            assert_eq!(d.heavy_atom_count, 6);
            assert_eq!((d.num_h_donors, d.num_h_acceptors, d.num_rotatable_bonds), (0, 0, 0));
            assert_eq!(d.num_aromatic_rings, 1);
            assert_eq!(d.fraction_csp3, 0.0);
            assert_eq!(d.tpsa, 0.0);
        }
    }

    // 12.011 + 4 x 1.008 = 16.043
    #[test]
    fn methane_descriptors() {
        let d = compute(&build(&[("C", 0)], &[]));
        assert_abs_diff_eq!(d.molwt, 16.043, epsilon = 1e-9);
        assert_eq!(d.heavy_atom_count, 1);
        assert_eq!(d.fraction_csp3, 1.0);
        assert_eq!(
            (d.num_h_donors, d.num_h_acceptors, d.num_rotatable_bonds, d.num_aromatic_rings),
            (0, 0, 0, 0)
        );
    }

    #[test]
    fn butane_has_one_rotatable_bond() {
        let d = compute(&build(&[("C", 0); 4], &[(0, 1, 1), (1, 2, 1), (2, 3, 1)]));
        assert_eq!(d.num_rotatable_bonds, 1);
    }

    #[test]
    fn unmatched_environment_warns() {
        let g = build(&[("C", 0), ("N", 0)], &[(0, 1, 3)]);
        let table: TpsaContributionTable = "O\t0\t1\t1\t0\t20.23\n".parse().unwrap();
        let (d, warnings) = compute_descriptors(&g, &AtomicWeights::default(), &table);
        assert_eq!(d.tpsa, 0.0);
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn table_rejects_negative_contributions() {
        assert!("O\t0\t1\t1\t0\t-1\n".parse::<TpsaContributionTable>().is_err());
        assert!(TpsaContributionTable::builtin().len() > 20);
    }

    #[test]
    fn lipinski_cases() {
        assert!(lipinski_check(347.3, 2.90, 1.0, 5.0).compliant);
        assert!(lipinski_check(500.0, 5.0, 5.0, 10.0).compliant);
        let v = lipinski_check(600.0, 2.0, 0.0, 0.0);
        assert!(!v.compliant && !v.passes_molwt && v.passes_logp);
    }

    fn chain(n: usize) -> MolGraph {
        build(&vec![("C", 0); n], &(1..n).map(|i| (i - 1, i, 1)).collect::<Vec<_>>())
    }

    proptest! {
        #[test]
        fn saturated_chains_are_fully_sp3(n in 1usize..40) {
            prop_assert_eq!(compute(&chain(n)).fraction_csp3, 1.0);
        }

        #[test]
        fn small_acyclic_molecules_have_no_rotors(n in 1usize..=3, hetero in proptest::bool::ANY) {
            let mut g = chain(n);
            if hetero {
                g.atoms[n - 1].element = "O".into();
            }
            prop_assert_eq!(compute(&g).num_rotatable_bonds, 0);
        }

        #[test]
        fn explicit_hydrogen_keeps_heavy_count(n in 1usize..12, at in 0usize..12) {
            let g = chain(n);
            let at = at % n;
            let mut with_h = g.clone();
            with_h.atoms.push(Atom::new("H", 0));
            with_h.bonds.push(Bond { a: at, b: n, order: BondOrder::Single });
            let (a, b) = (compute(&g), compute(&with_h));
            prop_assert_eq!(a.heavy_atom_count, b.heavy_atom_count);
            prop_assert!(b.molwt >= a.molwt - 1e-9);
        }

        #[test]
        fn tpsa_adds_over_components(n in 1usize..6, m in 1usize..6) {
            let mut a = chain(n);
            a.atoms[0].element = "O".into();
            let mut b = chain(m);
            b.atoms[m - 1].element = "N".into();
            let mut joined = a.clone();
            let shift = a.atoms.len();
            joined.atoms.extend(b.atoms.iter().cloned());
            joined.bonds.extend(b.bonds.iter().map(|x| Bond { a: x.a + shift, b: x.b + shift, order: x.order }));
            let sum = compute(&a).tpsa + compute(&b).tpsa;
            prop_assert!((compute(&joined).tpsa - sum).abs() < 1e-9);
        }
    }
}
