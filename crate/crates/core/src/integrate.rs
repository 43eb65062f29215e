//! Cross-source identifier intersection, hash-collision auditing, and record
//! extraction (indexed sorted-seek path plus the nested-loop baseline).

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::index::{normalize_identifier, Location, OffsetIndex};
use crate::sdf::{self, SdfError};

#[derive(Debug, Error)]
pub enum IntegrateError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Sdf { path: PathBuf, source: SdfError },
    #[error("intersection needs at least 2 identifier sets, got {0}")]
    TooFewSets(usize),
    #[error("min_sources must be in 1..={max}, got {got}")]
    BadMinSources { got: usize, max: usize },
    #[error("file id {0} not in index file table")]
    UnknownFile(u32),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IntegrateError + '_ {
    move |source| IntegrateError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExtractionStats {
    pub scanned: u64,
    pub missing_key: u64,
    pub malformed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IdentifierSet {
    pub source_name: String,
    pub identifiers: BTreeSet<String>,
    pub stats: ExtractionStats,
}

impl IdentifierSet {
    pub fn new(source_name: impl Into<String>, ids: impl IntoIterator<Item = String>) -> Self {
        Self {
            source_name: source_name.into(),
            identifiers: ids.into_iter().filter(|s| !s.is_empty()).collect(),
            stats: ExtractionStats::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.identifiers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identifiers.is_empty()
    }
}

/// Streams every block in `path`, calling `visit` with the block.
fn for_each_block(
    path: &Path,
    mut visit: impl FnMut(sdf::RawBlock) -> bool,
) -> Result<u64, IntegrateError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut malformed = 0;
    for block in sdf::read_blocks(BufReader::with_capacity(1 << 20, file)) {
        match block {
            Ok(b) => {
                if !visit(b) {
                    break;
                }
            }
            Err(SdfError::Io(e)) => return Err(io_err(path)(e)),
            Err(e) => {
                log::warn!("{}: {e}", path.display());
                malformed += 1;
            }
        }
    }
    Ok(malformed)
}

pub fn extract_identifiers(
    source_name: &str,
    paths: &[PathBuf],
    key_tag: &str,
) -> Result<IdentifierSet, IntegrateError> {
    let mut set = IdentifierSet { source_name: source_name.to_string(), ..Default::default() };
    for path in paths {
        let malformed = for_each_block(path, |b| {
            set.stats.scanned += 1;
            match sdf::find_property(&b.bytes, key_tag).map(normalize_identifier) {
                Some(id) if !id.is_empty() => {
                    set.identifiers.insert(id);
                }
                _ => set.stats.missing_key += 1,
            }
            true
        })?;
        set.stats.malformed += malformed;
    }
    Ok(set)
}

/// Identifiers present in at least `min_sources` sets (all of them when `None`).
pub fn intersect(
    sets: &[IdentifierSet],
    min_sources: Option<usize>,
) -> Result<BTreeSet<String>, IntegrateError> {
    if sets.len() < 2 {
        return Err(IntegrateError::TooFewSets(sets.len()));
    }
    let need = min_sources.unwrap_or(sets.len());
    if need == 0 || need > sets.len() {
        return Err(IntegrateError::BadMinSources { got: need, max: sets.len() });
    }
    if need == sets.len() {
        let mut ordered: Vec<&IdentifierSet> = sets.iter().collect();
        ordered.sort_by_key(|s| s.len());
        let (smallest, rest) = ordered.split_first().expect("at least two sets");
        return Ok(smallest
            .identifiers
            .iter()
            .filter(|id| rest.iter().all(|s| s.identifiers.contains(*id)))
            .cloned()
            .collect());
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in sets {
        for id in &s.identifiers {
            *counts.entry(id.as_str()).or_default() += 1;
        }
    }
    Ok(counts
        .into_iter()
        .filter(|&(_, c)| c >= need)
        .map(|(id, _)| id.to_string())
        .collect())
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct SourceLocation {
    pub path: PathBuf,
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CollisionFinding {
    pub short_key: String,
    /// Sorted, pairwise distinct.
    pub distinct_full_ids: Vec<String>,
    pub locations: Vec<(String, SourceLocation)>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AuditReport {
    pub findings: Vec<CollisionFinding>,
    pub scanned: u64,
    pub missing_short: u64,
    pub missing_full: u64,
}

/// Reports every short key that maps to two or more distinct full identifiers.
pub fn audit_collisions(
    paths: &[PathBuf],
    short_tag: &str,
    full_tag: &str,
) -> Result<AuditReport, IntegrateError> {
    let mut report = AuditReport::default();
    let mut by_short: HashMap<String, BTreeMap<String, Vec<SourceLocation>>> = HashMap::new();
    for path in paths {
        for_each_block(path, |b| {
            report.scanned += 1;
            let short = sdf::find_property(&b.bytes, short_tag).map(normalize_identifier);
            let full = sdf::find_property(&b.bytes, full_tag).map(normalize_identifier);
            match (short, full) {
                (Some(s), Some(f)) if !s.is_empty() && !f.is_empty() => {
                    by_short
                        .entry(s)
                        .or_default()
                        .entry(f)
                        .or_default()
                        .push(SourceLocation { path: path.clone(), offset: b.offset });
                }
                (s, f) => {
                    if s.is_none_or(|s| s.is_empty()) {
                        report.missing_short += 1;
                    }
                    if f.is_none_or(|f| f.is_empty()) {
                        report.missing_full += 1;
                    }
                }
            }
            true
        })?;
    }
    let mut findings: Vec<CollisionFinding> = by_short
        .into_iter()
        .filter(|(_, fulls)| fulls.len() >= 2)
        .map(|(short_key, fulls)| {
            let locations = fulls
                .iter()
                .flat_map(|(f, locs)| locs.iter().map(move |l| (f.clone(), l.clone())))
                .collect();
            CollisionFinding { short_key, distinct_full_ids: fulls.into_keys().collect(), locations }
        })
        .collect();
    findings.sort_by(|a, b| a.short_key.cmp(&b.short_key));
    report.findings = findings;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlannedRecord {
    pub offset: u64,
    pub length: u64,
    pub identifier: String,
}

/// Per-file read lists, ascending by offset, keyed by file id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExtractionPlan {
    pub files: BTreeMap<u32, Vec<PlannedRecord>>,
}

impl ExtractionPlan {
    pub fn len(&self) -> usize {
        self.files.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn identifiers(&self) -> impl Iterator<Item = &str> {
        self.files.values().flatten().map(|r| r.identifier.as_str())
    }
}

/// Groups targets by file and sorts each group by offset. Unknown targets
/// come back in the (sorted) missing list.
pub fn plan_extraction<'a, I>(index: &OffsetIndex, targets: I) -> (ExtractionPlan, Vec<String>)
where
    I: IntoIterator<Item = &'a String>,
{
    let mut plan = ExtractionPlan::default();
    let mut missing = Vec::new();
    let mut seen = HashSet::new();
    for id in targets {
        if !seen.insert(id.as_str()) {
            continue;
        }
        match index.get(id) {
            Some(Location { file_id, offset, length }) => {
                plan.files.entry(file_id).or_default().push(PlannedRecord {
                    offset,
                    length,
                    identifier: id.clone(),
                })
            }
            None => missing.push(id.clone()),
        }
    }
    for records in plan.files.values_mut() {
        records.sort_by_key(|r| r.offset);
    }
    missing.sort();
    (plan, missing)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VerificationFailure {
    pub identifier: String,
    pub file_id: u32,
    pub offset: u64,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExtractionReport {
    pub written: u64,
    pub bytes_written: u64,
    pub failures: Vec<VerificationFailure>,
    /// (file id, offset) of every read, in the order issued.
    pub read_log: Vec<(u32, u64)>,
}

fn verify_block(block: &[u8], tag: &str, expected: &str) -> Result<(), String> {
    let last_line = block
        .strip_suffix(b"\n")
        .unwrap_or(block)
        .rsplit(|&b| b == b'\n')
        .next()
        .unwrap_or(&[]);
    if sdf::trim_eol(last_line).trim_ascii_end() != sdf::TERMINATOR {
        return Err("slice does not end at a $$$$ terminator".into());
    }
    match sdf::find_property(block, tag).map(normalize_identifier) {
        Some(v) if v == expected => Ok(()),
        Some(v) => Err(format!("<{tag}> is {v:?}")),
        None => Err(format!("<{tag}> not found in slice")),
    }
}

/// Extracts planned records from one already-open source, in plan order.
pub fn extract_from<R: Read + Seek, W: Write + ?Sized>(
    source: &mut R,
    file_id: u32,
    records: &[PlannedRecord],
    sink: &mut W,
    verify_tag: Option<&str>,
    report: &mut ExtractionReport,
) -> io::Result<()> {
    let mut buf = Vec::new();
    for rec in records {
        source.seek(SeekFrom::Start(rec.offset))?;
        report.read_log.push((file_id, rec.offset));
        buf.resize(rec.length as usize, 0);
        if let Err(e) = source.read_exact(&mut buf) {
            if e.kind() != io::ErrorKind::UnexpectedEof {
                return Err(e);
            }
            report.failures.push(VerificationFailure {
                identifier: rec.identifier.clone(),
                file_id,
                offset: rec.offset,
                reason: "slice extends past end of file".into(),
            });
            continue;
        }
        if let Some(tag) = verify_tag {
            if let Err(reason) = verify_block(&buf, tag, &rec.identifier) {
                log::warn!("verification failed for {:?}: {reason}", rec.identifier);
                report.failures.push(VerificationFailure {
                    identifier: rec.identifier.clone(),
                    file_id,
                    offset: rec.offset,
                    reason,
                });
                continue;
            }
        }
        sink.write_all(&buf)?;
        report.written += 1;
        report.bytes_written += buf.len() as u64;
    }
    Ok(())
}

/// Writes every planned record to `sink` in (file id, offset) order.
pub fn extract_records<W: Write + ?Sized>(
    index: &OffsetIndex,
    plan: &ExtractionPlan,
    sink: &mut W,
    verify_tag: Option<&str>,
) -> Result<ExtractionReport, IntegrateError> {
    let mut report = ExtractionReport::default();
    for (&file_id, records) in &plan.files {
        let path = index.path(file_id).ok_or(IntegrateError::UnknownFile(file_id))?;
        let mut file = File::open(path).map_err(io_err(path))?;
        extract_from(&mut file, file_id, records, sink, verify_tag, &mut report)
            .map_err(io_err(path))?;
    }
    Ok(report)
}

pub fn extract_records_to_file(
    index: &OffsetIndex,
    plan: &ExtractionPlan,
    out: &Path,
    verify_tag: Option<&str>,
) -> Result<ExtractionReport, IntegrateError> {
    let file = File::create(out).map_err(io_err(out))?;
    let mut w = BufWriter::new(file);
    let report = extract_records(index, plan, &mut w, verify_tag)?;
    w.flush().map_err(io_err(out))?;
    Ok(report)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NestedLoopReport {
    pub written: u64,
    pub not_found: Vec<String>,
    pub blocks_scanned: u64,
}

/// Baseline: for each target, scan the files in order until it turns up.
pub fn nested_loop_extract<'a, W, I>(
    paths: &[PathBuf],
    key_tag: &str,
    targets: I,
    sink: &mut W,
) -> Result<NestedLoopReport, IntegrateError>
where
    W: Write + ?Sized,
    I: IntoIterator<Item = &'a String>,
{
    let mut report = NestedLoopReport::default();
    let mut seen = HashSet::new();
    for target in targets {
        if !seen.insert(target.as_str()) {
            continue;
        }
        let mut found: Option<Vec<u8>> = None;
        for path in paths {
            for_each_block(path, |b| {
                report.blocks_scanned += 1;
                let hit = sdf::find_property(&b.bytes, key_tag)
                    .is_some_and(|v| v.trim_ascii_end() == target.as_bytes());
                if hit {
                    found = Some(b.bytes);
                }
                !hit
            })?;
            if found.is_some() {
                break;
            }
        }
        match found {
            Some(bytes) => {
                sink.write_all(&bytes).map_err(io_err(Path::new("<sink>")))?;
                report.written += 1;
            }
            None => report.not_found.push(target.clone()),
        }
    }
    Ok(report)
}

/// Reads a one-identifier-per-line file; blank lines are ignored.
pub fn read_id_list(path: &Path) -> Result<Vec<String>, IntegrateError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err(path))?;
        let id = line.trim_end();
        if !id.is_empty() {
            out.push(id.to_string());
        }
    }
    Ok(out)
}

pub fn write_id_list<'a, I>(path: &Path, ids: I) -> Result<(), IntegrateError>
where
    I: IntoIterator<Item = &'a String>,
{
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for id in ids {
        writeln!(w, "{id}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::build_index;
    use crate::sdf::fixtures::ETHANOL;

    const KEY: &str = "PUBCHEM_IUPAC_INCHIKEY";

    fn rec(short: &str, full: Option<&str>) -> String {
        let mut s = ETHANOL.replace("LFQSCWFLJHTTHZ-UHFFFAOYSA-N", short);
        if let Some(f) = full {
            s = s.replace("$$$$\n", &format!("> <FULL>\n{f}\n\n$$$$\n"));
        }
        s
    }

    fn set(ids: &[&str]) -> IdentifierSet {
        IdentifierSet::new("s", ids.iter().map(|s| s.to_string()))
    }

    #[test]
    fn extraction_collapses_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.sdf");
        std::fs::write(&p, ["A", "B", "B", "C"].map(|k| rec(k, None)).concat()).unwrap();
        let s = extract_identifiers("a", &[p], KEY).unwrap();
        assert_eq!(s.identifiers.iter().collect::<Vec<_>>(), ["A", "B", "C"]);
        assert_eq!(s.stats.scanned, 4);
    }

    #[test]
    fn all_missing_key() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.sdf");
        std::fs::write(&p, rec("A", None).repeat(3)).unwrap();
        let s = extract_identifiers("a", &[p], "NOPE").unwrap();
        assert!(s.is_empty());
        assert_eq!(s.stats.missing_key, 3);
    }

    #[test]
    fn intersection_basics() {
        let out = intersect(&[set(&["A", "B", "C"]), set(&["B", "C", "D"]), set(&["C", "B"])], None).unwrap();
        assert_eq!(out.into_iter().collect::<Vec<_>>(), ["B", "C"]);
        assert!(intersect(&[set(&["A"]), set(&["B"])], None).unwrap().is_empty());
        let two = intersect(&[set(&["A", "B"]), set(&["B", "C"]), set(&["C"])], Some(2)).unwrap();
        assert_eq!(two.into_iter().collect::<Vec<_>>(), ["B", "C"]);
        assert!(matches!(intersect(&[set(&["A"])], None), Err(IntegrateError::TooFewSets(1))));
        assert!(intersect(&[set(&["A"]), set(&["A"])], Some(3)).is_err());
    }

    #[test]
    fn planted_collision_is_found() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.sdf");
        std::fs::write(&p, format!("{}{}", rec("K", Some("InChI=1/x")), rec("K", Some("InChI=1/y")))).unwrap();
        let r = audit_collisions(&[p.clone()], KEY, "FULL").unwrap();
        assert_eq!(r.findings.len(), 1);
        assert_eq!(r.findings[0].distinct_full_ids, ["InChI=1/x", "InChI=1/y"]);
        std::fs::write(&p, format!("{}{}{}", rec("K", Some("x")), rec("L", Some("y")), rec("M", None))).unwrap();
        let r = audit_collisions(&[p], KEY, "FULL").unwrap();
        assert!(r.findings.is_empty());
        assert_eq!(r.missing_full, 1);
    }

    #[test]
    fn plan_groups_and_sorts() {
        let mut idx = OffsetIndex::new(vec!["a".into(), "b".into()]);
        idx.insert("x".into(), Location { file_id: 1, offset: 900, length: 10 });
        idx.insert("y".into(), Location { file_id: 0, offset: 50, length: 10 });
        idx.insert("z".into(), Location { file_id: 1, offset: 100, length: 10 });
        let targets: Vec<String> = ["x", "y", "z", "q"].map(String::from).to_vec();
        let (plan, missing) = plan_extraction(&idx, &targets);
        assert_eq!(plan.files.len(), 2);
        let b: Vec<u64> = plan.files[&1].iter().map(|r| r.offset).collect();
        assert_eq!(b, vec![100, 900]);
        assert_eq!(missing, vec!["q".to_string()]);
    }

    #[test]
    fn corrupted_offset_fails_verification() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.sdf");
        std::fs::write(&p, ["A", "B", "C"].map(|k| rec(k, None)).concat()).unwrap();
        let (mut idx, _) = build_index(&[p], KEY, 1).unwrap();
        let mut loc = idx.get("B").unwrap();
        loc.offset += 1;
        let mut broken = OffsetIndex::new(idx.file_table.clone());
        for (id, l) in idx.iter() {
            broken.insert(id.to_string(), if id == "B" { loc } else { l });
        }
        idx = broken;
        let targets: Vec<String> = vec!["A".into(), "B".into()];
        let (plan, _) = plan_extraction(&idx, &targets);
        let mut out = Vec::new();
        let report = extract_records(&idx, &plan, &mut out, Some(KEY)).unwrap();
        assert_eq!(report.written, 1);
        assert_eq!(report.failures.len(), 1);
        assert_eq!(report.failures[0].identifier, "B");
        assert_eq!(out, rec("A", None).as_bytes());
    }

    #[test]
    fn nested_loop_empty_targets() {
        let mut out = Vec::new();
        let r = nested_loop_extract(&[], KEY, &Vec::<String>::new(), &mut out).unwrap();
        assert_eq!(r.written, 0);
        assert!(out.is_empty());
    }
}
