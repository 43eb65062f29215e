//! Ring perception: a minimum cycle basis (SSSR-sized) and a simple
//! aromaticity rule.

use std::collections::VecDeque;

use crate::sdf::{BondOrder, MolGraph};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ring {
    /// Atoms in cycle order.
    pub atoms: Vec<usize>,
    /// `bonds[i]` joins `atoms[i]` and `atoms[(i + 1) % len]`.
    pub bonds: Vec<usize>,
}

impl Ring {
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

pub fn connected_components(graph: &MolGraph) -> usize {
    let adj = graph.adjacency();
    let mut seen = vec![false; graph.atoms.len()];
    let mut components = 0;
    for start in 0..graph.atoms.len() {
        if seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(a) = stack.pop() {
            for &b in &adj[a] {
                let n = graph.bonds[b].other(a);
                if !seen[n] {
                    seen[n] = true;
                    stack.push(n);
                }
            }
        }
    }
    components
}

/// Number of independent cycles: bonds - atoms + components.
pub fn cyclomatic_number(graph: &MolGraph) -> usize {
    (graph.bonds.len() + connected_components(graph)).saturating_sub(graph.atoms.len())
}

type EdgeSet = Vec<u64>;

fn edge_set(bonds: &[usize], n_bonds: usize) -> EdgeSet {
    let mut set = vec![0u64; n_bonds.div_ceil(64)];
    for &b in bonds {
        set[b / 64] ^= 1 << (b % 64);
    }
    set
}

fn leading_bit(set: &EdgeSet) -> Option<usize> {
    set.iter().enumerate().find(|(_, w)| **w != 0).map(|(i, w)| i * 64 + w.trailing_zeros() as usize)
}

/// Minimum cycle basis by Horton's candidate set plus GF(2) elimination.
///
/// For every atom `v` and bond `(x, y)`, the cycle formed by the shortest
/// paths `v..x`, `y..v` and the bond itself is a candidate when the two paths
/// share only `v`. Candidates are accepted shortest-first while independent.
pub fn perceive_rings(graph: &MolGraph) -> Vec<Ring> {
    let target = cyclomatic_number(graph);
    if target == 0 {
        return Vec::new();
    }
    let n = graph.atoms.len();
    let adj = graph.adjacency();
    let mut candidates: Vec<(Ring, EdgeSet)> = Vec::new();

    for v in 0..n {
        // BFS tree rooted at v, ties resolved by bond index order
        let mut parent_bond = vec![usize::MAX; n];
        let mut depth = vec![usize::MAX; n];
        depth[v] = 0;
        let mut queue = VecDeque::from([v]);
        while let Some(a) = queue.pop_front() {
            for &b in &adj[a] {
                let m = graph.bonds[b].other(a);
                if depth[m] == usize::MAX {
                    depth[m] = depth[a] + 1;
                    parent_bond[m] = b;
                    queue.push_back(m);
                }
            }
        }
        let path_to = |mut x: usize| -> (Vec<usize>, Vec<usize>) {
            // atoms from x back to v, and the bonds between them
            let mut atoms = vec![x];
            let mut bonds = Vec::new();
            while x != v {
                let b = parent_bond[x];
                bonds.push(b);
                x = graph.bonds[b].other(x);
                atoms.push(x);
            }
            (atoms, bonds)
        };
        for (bi, bond) in graph.bonds.iter().enumerate() {
            let (x, y) = (bond.a, bond.b);
            if depth[x] == usize::MAX || depth[y] == usize::MAX {
                continue;
            }
            if parent_bond[x] == bi || parent_bond[y] == bi {
                continue;
            }
            let (px, bx) = path_to(x);
            let (py, by) = path_to(y);
            // paths must meet only at v
            if px.iter().filter(|a| py.contains(a)).count() != 1 {
                continue;
            }
            let mut atoms: Vec<usize> = px.iter().rev().copied().collect(); // v .. x
            atoms.extend(py[..py.len() - 1].iter().copied()); // y .. (before v)
            let mut bonds: Vec<usize> = bx.iter().rev().copied().collect();
            bonds.push(bi);
            bonds.extend(by.iter().copied());
            let set = edge_set(&bonds, graph.bonds.len());
            candidates.push((Ring { atoms, bonds }, set));
        }
    }

    candidates.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| a.1.cmp(&b.1)));
    candidates.dedup_by(|a, b| a.1 == b.1);

    let mut basis: Vec<(usize, EdgeSet)> = Vec::new();
    let mut rings = Vec::new();
    for (ring, set) in candidates {
        let mut reduced = set.clone();
        for (pivot, row) in &basis {
            if reduced[pivot / 64] >> (pivot % 64) & 1 == 1 {
                reduced.iter_mut().zip(row).for_each(|(a, b)| *a ^= b);
            }
        }
        if let Some(pivot) = leading_bit(&reduced) {
            // keep rows reduced so the elimination above stays valid
            for (_, row) in basis.iter_mut() {
                if row[pivot / 64] >> (pivot % 64) & 1 == 1 {
                    row.iter_mut().zip(&reduced).for_each(|(a, b)| *a ^= b);
                }
            }
            basis.push((pivot, reduced));
            rings.push(ring);
            if rings.len() == target {
                break;
            }
        }
    }
    rings
}

/// A ring is aromatic when every bond carries the aromatic flag, or when it is
/// an even-length ring of C/N atoms whose bond orders strictly alternate 1/2.
pub fn is_aromatic_ring(graph: &MolGraph, ring: &Ring) -> bool {
    let orders: Vec<BondOrder> = ring.bonds.iter().map(|&b| graph.bonds[b].order).collect();
    if orders.iter().all(|&o| o == BondOrder::Aromatic) {
        return true;
    }
    if ring.len() % 2 != 0 {
        return false;
    }
    if !ring.atoms.iter().all(|&a| matches!(graph.atoms[a].element.as_str(), "C" | "N")) {
        return false;
    }
    let alternates = |first: BondOrder, second: BondOrder| {
        orders
            .iter()
            .enumerate()
            .all(|(i, &o)| o == if i % 2 == 0 { first } else { second })
    };
    alternates(BondOrder::Single, BondOrder::Double) || alternates(BondOrder::Double, BondOrder::Single)
}

pub fn perceive_aromatic_rings(graph: &MolGraph, rings: &[Ring]) -> usize {
    rings.iter().filter(|r| is_aromatic_ring(graph, r)).count()
}
