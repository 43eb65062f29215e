//! Parallel SDF -> descriptor table transform.
//!
//! A reader thread segments blocks, a pool of workers computes rows, and the
//! writer reorders results by sequence number so the output never depends on
//! the worker count.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;
use std::thread;

use crossbeam_channel::bounded;

use super::{compute_descriptors, AtomicWeights, DescriptorError, TpsaContributionTable};
use crate::sdf::{self, SdfRecord};

pub const DATASET_HEADER: [&str; 12] = [
    "InChIKey",
    "SMILES",
    "Original_InChI",
    "logP_target",
    "MolWt",
    "TPSA",
    "NumHDonors",
    "NumHAcceptors",
    "NumRotatableBonds",
    "NumAromaticRings",
    "FractionCSP3",
    "HeavyAtomCount",
];

#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorRow {
    pub inchikey: String,
    pub smiles: String,
    pub original_inchi: String,
    pub logp_target: f64,
    pub molwt: f64,
    pub tpsa: f64,
    pub num_h_donors: u32,
    pub num_h_acceptors: u32,
    pub num_rotatable_bonds: u32,
    pub num_aromatic_rings: u32,
    pub fraction_csp3: f64,
    pub heavy_atom_count: u32,
}

/// Fixed six-decimal rendering with trailing zeros removed.
pub fn format_real(x: f64) -> String {
    let s = format!("{x:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    match s {
        "-0" | "" => "0".to_string(),
        s => s.to_string(),
    }
}

impl DescriptorRow {
    fn record(&self) -> [String; 12] {
        [
            self.inchikey.clone(),
            self.smiles.clone(),
            self.original_inchi.clone(),
            format_real(self.logp_target),
            format_real(self.molwt),
            format_real(self.tpsa),
            self.num_h_donors.to_string(),
            self.num_h_acceptors.to_string(),
            self.num_rotatable_bonds.to_string(),
            self.num_aromatic_rings.to_string(),
            format_real(self.fraction_csp3),
            self.heavy_atom_count.to_string(),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct TransformOptions {
    pub target_tag: String,
    pub inchikey_tag: String,
    pub inchi_tag: String,
    pub smiles_tag: Option<String>,
    pub workers: usize,
}

impl Default for TransformOptions {
    fn default() -> Self {
        Self {
            target_tag: "PUBCHEM_XLOGP3".into(),
            inchikey_tag: "PUBCHEM_IUPAC_INCHIKEY".into(),
            inchi_tag: "PUBCHEM_IUPAC_INCHI".into(),
            smiles_tag: Some("PUBCHEM_OPENEYE_CAN_SMILES".into()),
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TransformReport {
    pub records: u64,
    pub rows: u64,
    /// Exclusion reason -> count.
    pub excluded: BTreeMap<String, u64>,
    pub warnings: u64,
}

impl TransformReport {
    pub fn excluded_total(&self) -> u64 {
        self.excluded.values().sum()
    }
}

enum Outcome {
    Row(Box<DescriptorRow>, usize),
    Excluded(String),
}

fn process_block(
    block: Result<sdf::RawBlock, sdf::SdfError>,
    opts: &TransformOptions,
    weights: &AtomicWeights,
    table: &TpsaContributionTable,
) -> Outcome {
    let block = match block {
        Ok(b) => b,
        Err(e) => return Outcome::Excluded(format!("malformed block: {}", short_reason(&e))),
    };
    let record = match SdfRecord::from_block(block.bytes) {
        Ok(r) => r,
        Err(e) => return Outcome::Excluded(format!("malformed properties: {}", short_reason(&e))),
    };
    let logp = match record.get_property(&opts.target_tag) {
        None => return Outcome::Excluded("missing target".into()),
        Some(v) => match v.trim().parse::<f64>() {
            Ok(x) if x.is_finite() => x,
            _ => return Outcome::Excluded("unparseable target".into()),
        },
    };
    let graph = match record.graph() {
        Ok(g) => g,
        Err(e) => return Outcome::Excluded(format!("malformed molfile: {}", short_reason(&e))),
    };
    if graph.atoms.iter().all(|a| a.is_hydrogen()) {
        return Outcome::Excluded("no heavy atoms".into());
    }
    let (d, warnings) = compute_descriptors(&graph, weights, table);
    let tag = |t: &str| record.get_property(t).map(|v| v.trim_end().to_string()).unwrap_or_default();
    Outcome::Row(
        Box::new(DescriptorRow {
            inchikey: tag(&opts.inchikey_tag),
            smiles: opts.smiles_tag.as_deref().map(tag).unwrap_or_default(),
            original_inchi: tag(&opts.inchi_tag),
            logp_target: logp,
            molwt: d.molwt,
            tpsa: d.tpsa,
            num_h_donors: d.num_h_donors,
            num_h_acceptors: d.num_h_acceptors,
            num_rotatable_bonds: d.num_rotatable_bonds,
            num_aromatic_rings: d.num_aromatic_rings,
            fraction_csp3: d.fraction_csp3,
            heavy_atom_count: d.heavy_atom_count,
        }),
        warnings.len(),
    )
}

fn short_reason(e: &sdf::SdfError) -> &'static str {
    use sdf::SdfError::*;
    match e {
        Io(_) => "io",
        Unterminated { .. } => "unterminated",
        TruncatedHeader => "truncated header",
        BadCounts(_) => "bad counts line",
        UnsupportedVersion(_) => "unsupported version",
        BadAtom { .. } => "bad atom block",
        BadBond { .. } => "bad bond block",
        BadProperty { .. } => "bad data item",
        DuplicateTag(_) => "duplicate tag",
        EmptyRecord => "empty record",
    }
}

/// Transforms `input` into the descriptor CSV at `output`.
pub fn transform_dataset(
    input: &Path,
    output: &Path,
    opts: &TransformOptions,
    weights: &AtomicWeights,
    table: &TpsaContributionTable,
) -> Result<TransformReport, DescriptorError> {
    let file = File::open(input)?;
    let out = File::create(output)?;
    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    writer.write_record(DATASET_HEADER)?;

    let workers = opts.workers.max(1);
    let (block_tx, block_rx) = bounded::<(u64, Result<sdf::RawBlock, sdf::SdfError>)>(workers * 64);
    let (row_tx, row_rx) = bounded::<(u64, Outcome)>(workers * 64);
    let mut report = TransformReport::default();

    thread::scope(|scope| -> Result<(), DescriptorError> {
        let producer = scope.spawn(move || -> Result<(), std::io::Error> {
            let reader = sdf::read_blocks(BufReader::with_capacity(1 << 20, file));
            for (seq, block) in reader.enumerate() {
                if let Err(sdf::SdfError::Io(e)) = block {
                    return Err(e);
                }
                if block_tx.send((seq as u64, block)).is_err() {
                    break;
                }
            }
            Ok(())
        });
        for _ in 0..workers {
            let rx = block_rx.clone();
            let tx = row_tx.clone();
            scope.spawn(move || {
                for (seq, block) in rx {
                    if tx.send((seq, process_block(block, opts, weights, table))).is_err() {
                        break;
                    }
                }
            });
        }
        drop(block_rx);
        drop(row_tx);

        let mut pending: HashMap<u64, Outcome> = HashMap::new();
        let mut next = 0u64;
        for (seq, outcome) in row_rx {
            pending.insert(seq, outcome);
            while let Some(outcome) = pending.remove(&next) {
                next += 1;
                report.records += 1;
                match outcome {
                    Outcome::Row(row, warnings) => {
                        writer.write_record(row.record())?;
                        report.rows += 1;
                        report.warnings += warnings as u64;
                    }
                    Outcome::Excluded(reason) => *report.excluded.entry(reason).or_default() += 1,
                }
            }
        }
        producer.join().expect("reader thread panicked")?;
        Ok(())
    })?;
    writer.flush()?;
    Ok(report)
}

pub fn write_dataset<W: Write>(rows: &[DescriptorRow], sink: W) -> Result<(), DescriptorError> {
    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink);
    writer.write_record(DATASET_HEADER)?;
    for row in rows {
        writer.write_record(row.record())?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a descriptor CSV, checking the header.
pub fn read_dataset(path: &Path) -> Result<Vec<DescriptorRow>, DescriptorError> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != DATASET_HEADER {
        return Err(DescriptorError::Dataset { row: 0, reason: format!("unexpected header {header:?}") });
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let bad = |col: &str| DescriptorError::Dataset { row: i + 1, reason: format!("bad {col}") };
        let real = |j: usize| rec[j].parse::<f64>().map_err(|_| bad(DATASET_HEADER[j]));
        let count = |j: usize| rec[j].parse::<u32>().map_err(|_| bad(DATASET_HEADER[j]));
        rows.push(DescriptorRow {
            inchikey: rec[0].to_string(),
            smiles: rec[1].to_string(),
            original_inchi: rec[2].to_string(),
            logp_target: real(3)?,
            molwt: real(4)?,
            tpsa: real(5)?,
            num_h_donors: count(6)?,
            num_h_acceptors: count(7)?,
            num_rotatable_bonds: count(8)?,
            num_aromatic_rings: count(9)?,
            fraction_csp3: real(10)?,
            heavy_atom_count: count(11)?,
        });
    }
    Ok(rows)
}
