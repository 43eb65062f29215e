//! Seeded synthetic corpora: random small molecules written as multi-source
//! SDF files with planted shared cores, planted short-key collisions, and a
//! logP-like target drawn from [`TargetModel`].

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use md5::{Digest, Md5};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::descriptors::{compute_descriptors, implicit_hydrogens, AtomicWeights, Descriptors, DescriptorRow, TpsaContributionTable};
use crate::models::derive_seed;
use crate::sdf::{Atom, Bond, BondOrder, MolGraph, SdfRecord};

pub const FULL_ID_TAG: &str = "PUBCHEM_IUPAC_INCHI";
pub const SHORT_KEY_TAG: &str = "PUBCHEM_IUPAC_INCHIKEY";
pub const TARGET_TAG: &str = "PUBCHEM_XLOGP3";
pub const RECORD_ID_TAG: &str = "SDFORGE_RECORD_ID";

/// Generative model for the target.
///
/// With `x` the descriptor vector in model-feature order
/// (MolWt, TPSA, NumHDonors, NumHAcceptors, NumRotatableBonds,
/// NumAromaticRings, FractionCSP3) and `z` a standard normal draw:
///
/// ```text
/// m(x)   = intercept + Σ coefficients[j]·x[j] + nonlinearity·g(x)
/// g(x)   = 1.5·[x5 ≥ 2] − 1.2·[x1 > 75] + 1.5·[x6 > 0.5] − [x4 ≥ 6]
///          + 0.8·[x2 = 0]·[x5 ≥ 1]
/// sd(x)  = noise_sd·(1 + heteroskedasticity·|m(x) − center|)
/// logP   = m(x) + sd(x)·z
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct TargetModel {
    pub intercept: f64,
    pub coefficients: [f64; 7],
    pub nonlinearity: f64,
    pub heteroskedasticity: f64,
    pub noise_sd: f64,
    pub center: f64,
}

impl Default for TargetModel {
    fn default() -> Self {
        Self {
            intercept: 2.5,
            coefficients: [0.009, -0.03, -0.25, -0.05, 0.04, 0.45, -0.8],
            nonlinearity: 1.0,
            heteroskedasticity: 0.35,
            noise_sd: 0.35,
            center: 2.9,
        }
    }
}

impl TargetModel {
    pub fn homoskedastic(mut self) -> Self {
        self.heteroskedasticity = 0.0;
        self
    }

    pub fn linear(mut self) -> Self {
        self.nonlinearity = 0.0;
        self
    }

    pub fn nonlinear_term(x: &[f64]) -> f64 {
        let ind = |b: bool| if b { 1.0 } else { 0.0 };
        1.5 * ind(x[5] >= 2.0) - 1.2 * ind(x[1] > 75.0) + 1.5 * ind(x[6] > 0.5) - 1.0 * ind(x[4] >= 6.0)
            + 0.8 * ind(x[2] == 0.0) * ind(x[5] >= 1.0)
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.coefficients.iter().zip(x).map(|(c, v)| c * v).sum();
        self.intercept + lin + self.nonlinearity * Self::nonlinear_term(x)
    }

    pub fn noise_scale(&self, mean: f64) -> f64 {
        self.noise_sd * (1.0 + self.heteroskedasticity * (mean - self.center).abs())
    }

    pub fn value(&self, x: &[f64], z: f64) -> f64 {
        let m = self.mean(x);
        m + self.noise_scale(m) * z
    }
}

pub fn feature_vector(d: &Descriptors) -> [f64; 7] {
    [
        d.molwt,
        d.tpsa,
        d.num_h_donors as f64,
        d.num_h_acceptors as f64,
        d.num_rotatable_bonds as f64,
        d.num_aromatic_rings as f64,
        d.fraction_csp3,
    ]
}

/// Heavy-atom size range of generated molecules (inclusive).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MoleculeSize {
    pub min_heavy: usize,
    pub max_heavy: usize,
}

impl Default for MoleculeSize {
    fn default() -> Self {
        Self { min_heavy: 6, max_heavy: 40 }
    }
}

fn valence(element: &str) -> u32 {
    match element {
        "C" => 4,
        "N" => 3,
        "O" => 2,
        _ => 1,
    }
}

fn pick_element(rng: &mut ChaCha8Rng) -> &'static str {
    match rng.gen_range(0..100) {
        0..=67 => "C",
        68..=80 => "N",
        81..=95 => "O",
        96..=97 => "F",
        _ => "Cl",
    }
}

/// A random connected, valence-respecting molecule: benzene rings in Kekulé
/// form decorated with acyclic C/N/O/halogen substituents.
pub fn random_molecule(rng: &mut ChaCha8Rng, size: MoleculeSize) -> MolGraph {
    let target = rng.gen_range(size.min_heavy.max(1)..=size.max_heavy.max(size.min_heavy.max(1)));
    let rings = if target >= 6 { rng.gen_range(0..=(target / 8).min(3)) } else { 0 };
    let mut atoms: Vec<Atom> = Vec::with_capacity(target);
    let mut bonds: Vec<Bond> = Vec::new();
    let mut free: Vec<u32> = Vec::with_capacity(target);

    for _ in 0..rings {
        let base = atoms.len();
        let anchor = (0..base).filter(|&i| free[i] > 0).collect::<Vec<_>>().choose(rng).copied();
        if base > 0 && anchor.is_none() {
            break;
        }
        for k in 0..6 {
            atoms.push(Atom::new("C", 0));
            free.push(1);
            let order = if k % 2 == 0 { BondOrder::Double } else { BondOrder::Single };
            if k > 0 {
                bonds.push(Bond { a: base + k - 1, b: base + k, order });
            }
        }
        bonds.push(Bond { a: base + 5, b: base, order: BondOrder::Double });
        if let Some(a) = anchor {
            bonds.push(Bond { a, b: base, order: BondOrder::Single });
            free[a] -= 1;
            free[base] -= 1;
        }
    }
    if atoms.is_empty() {
        atoms.push(Atom::new("C", 0));
        free.push(4);
    }
    while atoms.len() < target {
        let open: Vec<usize> = (0..atoms.len()).filter(|&i| free[i] > 0).collect();
        let Some(&at) = open.choose(rng) else { break };
        let element = pick_element(rng);
        let v = valence(element);
        let order = if v >= 2 && free[at] >= 2 && rng.gen_bool(0.15) { BondOrder::Double } else { BondOrder::Single };
        let used = if order == BondOrder::Double { 2 } else { 1 };
        atoms.push(Atom::new(element, 0));
        free.push(v - used);
        free[at] -= used;
        bonds.push(Bond { a: at, b: atoms.len() - 1, order });
    }
    MolGraph::new(atoms, bonds).expect("generator emits valid graphs")
}

fn formula(graph: &MolGraph) -> String {
    let mut counts = std::collections::BTreeMap::new();
    for (i, a) in graph.atoms.iter().enumerate() {
        *counts.entry(a.element.as_str()).or_insert(0u32) += 1;
        *counts.entry("H").or_insert(0) += implicit_hydrogens(graph, i);
    }
    let mut s = String::new();
    for el in ["C", "H", "Cl", "F", "N", "O"] {
        match counts.get(el).copied().unwrap_or(0) {
            0 => {}
            1 => s.push_str(el),
            n => s.push_str(&format!("{el}{n}")),
        }
    }
    s
}

/// InChI-shaped identifier, unique per `uid`. Contains commas on purpose.
pub fn full_identifier(graph: &MolGraph, uid: u64) -> String {
    let conn: Vec<String> = graph.bonds.iter().take(6).map(|b| format!("{}-{}", b.a + 1, b.b + 1)).collect();
    let conn = if conn.is_empty() { "1".to_string() } else { conn.join(",") };
    format!("InChI=1S/{}/c{}/u{uid}", formula(graph), conn)
}

/// 27-character InChIKey-shaped hash of a full identifier.
pub fn short_key(full_id: &str) -> String {
    let a = Md5::digest(full_id.as_bytes());
    let b = Md5::digest([full_id.as_bytes(), b"#"].concat());
    let letters: Vec<char> = a.iter().chain(b.iter()).map(|x| (b'A' + x % 26) as char).collect();
    let first: String = letters[..14].iter().collect();
    let second: String = letters[14..24].iter().collect();
    format!("{first}-{second}-N")
}

pub struct SyntheticMolecule {
    pub graph: MolGraph,
    pub descriptors: Descriptors,
    pub noise: f64,
    pub logp: f64,
}

/// Molecule `uid` of the stream identified by `seed`; a pure function of both.
pub fn synthetic_molecule(
    seed: u64,
    uid: u64,
    size: MoleculeSize,
    target: &TargetModel,
    weights: &AtomicWeights,
    table: &TpsaContributionTable,
) -> SyntheticMolecule {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, uid));
    let mut graph = random_molecule(&mut rng, size);
    graph.name = format!("synthetic-{uid}");
    let (descriptors, _) = compute_descriptors(&graph, weights, table);
    let noise: f64 = rng.sample(StandardNormal);
    let logp = target.value(&feature_vector(&descriptors), noise);
    SyntheticMolecule { graph, descriptors, noise, logp }
}

/// Descriptor rows for `n` in-memory molecules, without touching disk.
pub fn synthetic_rows(n: usize, size: MoleculeSize, target: &TargetModel, seed: u64) -> Vec<DescriptorRow> {
    let weights = AtomicWeights::default();
    let table = TpsaContributionTable::builtin();
    (0..n as u64)
        .into_par_iter()
        .map(|uid| {
            let m = synthetic_molecule(seed, uid, size, target, &weights, &table);
            let full = full_identifier(&m.graph, uid);
            let d = m.descriptors;
            DescriptorRow {
                inchikey: short_key(&full),
                smiles: String::new(),
                original_inchi: full,
                logp_target: m.logp,
                molwt: d.molwt,
                tpsa: d.tpsa,
                num_h_donors: d.num_h_donors,
                num_h_acceptors: d.num_h_acceptors,
                num_rotatable_bonds: d.num_rotatable_bonds,
                num_aromatic_rings: d.num_aromatic_rings,
                fraction_csp3: d.fraction_csp3,
                heavy_atom_count: d.heavy_atom_count,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    pub sources: usize,
    pub records_per_source: usize,
    pub files_per_source: usize,
    /// Molecules present in every source.
    pub core: usize,
    /// Pairs of distinct molecules sharing one short key, split across sources.
    pub collisions: usize,
    /// Fraction of first-source records without a target value.
    pub missing_target: f64,
    pub size: MoleculeSize,
    pub target: TargetModel,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            sources: 3,
            records_per_source: 5000,
            files_per_source: 2,
            core: 1200,
            collisions: 3,
            missing_target: 0.02,
            size: MoleculeSize::default(),
            target: TargetModel::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRecord {
    pub source: usize,
    pub file: PathBuf,
    pub ordinal: usize,
    pub uid: u64,
    pub full_id: String,
    pub short_key: String,
    pub core: bool,
    pub collision_group: Option<usize>,
    pub noise: f64,
    /// `None` when the record carries no target.
    pub logp: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorpusManifest {
    pub files: Vec<Vec<PathBuf>>,
    pub records: Vec<ManifestRecord>,
    pub core: BTreeSet<String>,
    /// (short key, distinct full ids) per planted group.
    pub collision_groups: Vec<(String, Vec<String>)>,
}

impl CorpusManifest {
    pub fn all_files(&self) -> Vec<PathBuf> {
        self.files.iter().flatten().cloned().collect()
    }
}

pub const MANIFEST_HEADER: &str = "source\tfile\tordinal\tuid\tfull_id\tshort_key\tcore\tcollision_group\tnoise\tlogp";

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid corpus spec: {0}")]
    Spec(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn validate(spec: &CorpusSpec) -> Result<(), SynthError> {
    let bad = |m: &str| Err(SynthError::Spec(m.to_string()));
    if spec.sources == 0 || spec.files_per_source == 0 {
        return bad("sources and files_per_source must be positive");
    }
    if spec.core > spec.records_per_source {
        return bad("core larger than records_per_source");
    }
    if spec.collisions > 0 && spec.sources < 2 {
        return bad("collisions need at least 2 sources");
    }
    if spec.collisions > spec.core.min(spec.records_per_source - spec.core) {
        return bad("not enough records to plant collisions");
    }
    if !(0.0..=1.0).contains(&spec.missing_target) {
        return bad("missing_target must be in [0, 1]");
    }
    Ok(())
}

struct Planned {
    uid: u64,
    core: bool,
    short_override: Option<(String, usize)>,
}

/// Writes `source{s}_part{f}.sdf` files plus `manifest.tsv` into `dir`.
///
/// Every source holds `core` shared molecules and distinct filler. Collision
/// group g gives a filler molecule of source `1 + g % (sources − 1)` the short
/// key of core molecule g, so keys collide across sources while full
/// identifiers stay distinct. Only the first source carries targets.
pub fn generate_synthetic_corpus(spec: &CorpusSpec, dir: &Path) -> Result<CorpusManifest, SynthError> {
    validate(spec)?;
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SynthError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let weights = AtomicWeights::default();
    let table = TpsaContributionTable::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, u64::MAX));
    let filler = spec.records_per_source - spec.core;

    // uids: core 0..core, then filler blocks per source
    let mut plans: Vec<Vec<Planned>> = (0..spec.sources)
        .map(|s| {
            (0..spec.core as u64)
                .map(|u| Planned { uid: u, core: true, short_override: None })
                .chain((0..filler as u64).map(|k| Planned {
                    uid: (spec.core + s * filler) as u64 + k,
                    core: false,
                    short_override: None,
                }))
                .collect()
        })
        .collect();

    let total_uids = spec.core + spec.sources * filler;
    let molecules: Vec<SyntheticMolecule> = (0..total_uids as u64)
        .into_par_iter()
        .map(|uid| synthetic_molecule(spec.seed, uid, spec.size, &spec.target, &weights, &table))
        .collect();
    let full_ids: Vec<String> = molecules
        .par_iter()
        .enumerate()
        .map(|(uid, m)| full_identifier(&m.graph, uid as u64))
        .collect();

    let mut collision_groups = Vec::new();
    let core_picks: Vec<usize> = rand::seq::index::sample(&mut rng, spec.core.max(1), spec.collisions.min(spec.core)).into_vec();
    for (g, &core_pos) in core_picks.iter().enumerate() {
        let s = 1 + g % (spec.sources - 1);
        // filler positions already used in this source are skipped
        let candidates: Vec<usize> =
            (spec.core..spec.records_per_source).filter(|&i| plans[s][i].short_override.is_none()).collect();
        let pos = *candidates.choose(&mut rng).ok_or_else(|| SynthError::Spec("collision slots exhausted".into()))?;
        let key = short_key(&full_ids[core_pos]);
        plans[s][pos].short_override = Some((key.clone(), g));
        let member = &full_ids[plans[s][pos].uid as usize];
        collision_groups.push((key, vec![full_ids[core_pos].clone(), member.clone()]));
    }
    let collided_core: std::collections::HashMap<usize, usize> =
        core_picks.iter().enumerate().map(|(g, &c)| (c, g)).collect();

    let mut manifest = CorpusManifest {
        core: full_ids[..spec.core].iter().cloned().collect(),
        collision_groups,
        ..Default::default()
    };
    for (s, plan) in plans.iter_mut().enumerate() {
        plan.shuffle(&mut rng);
        let missing: BTreeSet<usize> = if s == 0 {
            let k = (spec.missing_target * plan.len() as f64).round() as usize;
            rand::seq::index::sample(&mut rng, plan.len(), k.min(plan.len())).into_iter().collect()
        } else {
            BTreeSet::new()
        };
        let per_file = plan.len().div_ceil(spec.files_per_source);
        let mut paths = Vec::new();
        for f in 0..spec.files_per_source {
            let path = dir.join(format!("source{s}_part{f}.sdf"));
            let file = File::create(&path).map_err(io_err(&path))?;
            let mut w = BufWriter::new(file);
            let lo = (f * per_file).min(plan.len());
            let hi = ((f + 1) * per_file).min(plan.len());
            for ordinal in lo..hi {
                let p = &plan[ordinal];
                let m = &molecules[p.uid as usize];
                let full = &full_ids[p.uid as usize];
                let (short, group) = match &p.short_override {
                    Some((k, g)) => (k.clone(), Some(*g)),
                    None => (short_key(full), if p.core { collided_core.get(&(p.uid as usize)).copied() } else { None }),
                };
                let logp = (s == 0 && !missing.contains(&ordinal)).then_some(m.logp);
                let mut props = vec![
                    (RECORD_ID_TAG.to_string(), format!("s{s}-{ordinal}")),
                    (FULL_ID_TAG.to_string(), full.clone()),
                    (SHORT_KEY_TAG.to_string(), short.clone()),
                ];
                if let Some(v) = logp {
                    props.push((TARGET_TAG.to_string(), format!("{v:?}")));
                }
                let record = SdfRecord::from_parts(m.graph.clone(), props).expect("distinct tags");
                crate::sdf::write_record(&record, &mut w).map_err(|e| SynthError::Io {
                    path: path.clone(),
                    source: io::Error::other(e.to_string()),
                })?;
                manifest.records.push(ManifestRecord {
                    source: s,
                    file: path.clone(),
                    ordinal,
                    uid: p.uid,
                    full_id: full.clone(),
                    short_key: short,
                    core: p.core,
                    collision_group: group,
                    noise: m.noise,
                    logp,
                });
            }
            w.flush().map_err(io_err(&path))?;
            paths.push(path);
        }
        manifest.files.push(paths);
    }
    let path = dir.join("manifest.tsv");
    write_manifest(&manifest, &path).map_err(io_err(&path))?;
    Ok(manifest)
}

fn write_manifest(manifest: &CorpusManifest, path: &Path) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{MANIFEST_HEADER}")?;
    for r in &manifest.records {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:?}\t{}",
            r.source,
            r.file.file_name().map(|n| n.to_string_lossy()).unwrap_or_default(),
            r.ordinal,
            r.uid,
            r.full_id,
            r.short_key,
            u8::from(r.core),
            r.collision_group.map_or("-".to_string(), |g| g.to_string()),
            r.noise,
            r.logp.map_or("-".to_string(), |v| format!("{v:?}")),
        )?;
    }
    w.flush()
}
