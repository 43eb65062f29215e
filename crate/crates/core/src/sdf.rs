//! Streaming reader and writer for SDF files with V2000 connection tables.
//!
//! Everything here works on bytes. Block offsets are byte offsets into the
//! (uncompressed) input, and line endings are left exactly as found so that a
//! block sliced out of a file can be written back without change.

use std::fmt;
use std::io::{self, BufRead, Write};

use thiserror::Error;

pub const TERMINATOR: &[u8] = b"$$$$";

#[derive(Debug, Error)]
pub enum SdfError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("unterminated block at byte {offset} ({length} bytes without a $$$$ line)")]
    Unterminated { offset: u64, length: u64 },
    #[error("block too short for a molfile header")]
    TruncatedHeader,
    #[error("malformed counts line: {0:?}")]
    BadCounts(String),
    #[error("unsupported molfile version {0:?}; only V2000 is read")]
    UnsupportedVersion(String),
    #[error("malformed atom line {line}: {reason}")]
    BadAtom { line: usize, reason: String },
    #[error("malformed bond line {line}: {reason}")]
    BadBond { line: usize, reason: String },
    #[error("malformed property line {line}: {reason}")]
    BadProperty { line: usize, reason: String },
    #[error("duplicate property tag <{0}>")]
    DuplicateTag(String),
    #[error("record has neither raw bytes nor a graph to serialize")]
    EmptyRecord,
}

/// One `$$$$`-terminated block as it appears in the source stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawBlock {
    pub offset: u64,
    pub bytes: Vec<u8>,
}

impl RawBlock {
    pub fn len(&self) -> u64 {
        self.bytes.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

/// Strips a trailing `\n` or `\r\n`.
pub(crate) fn trim_eol(line: &[u8]) -> &[u8] {
    let line = line.strip_suffix(b"\n").unwrap_or(line);
    line.strip_suffix(b"\r").unwrap_or(line)
}

fn is_terminator(line: &[u8]) -> bool {
    trim_eol(line).trim_ascii_end() == TERMINATOR
}

/// Single-pass block segmenter over any buffered byte stream.
///
/// Memory held at any time is one block. Whitespace-only bytes after the last
/// terminator are reported through [`BlockReader::trailing_bytes`]; anything
/// else there comes out as [`SdfError::Unterminated`].
pub struct BlockReader<R> {
    inner: R,
    position: u64,
    line: Vec<u8>,
    trailing: u64,
    done: bool,
}

impl<R: BufRead> BlockReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            position: 0,
            line: Vec::with_capacity(128),
            trailing: 0,
            done: false,
        }
    }

    /// Bytes consumed from the underlying stream so far.
    pub fn position(&self) -> u64 {
        self.position
    }

    /// Whitespace-only bytes found after the final terminator.
    pub fn trailing_bytes(&self) -> u64 {
        self.trailing
    }

    pub fn into_inner(self) -> R {
        self.inner
    }

    fn next_block(&mut self) -> Result<Option<RawBlock>, SdfError> {
        if self.done {
            return Ok(None);
        }
        let start = self.position;
        let mut block = Vec::new();
        loop {
            self.line.clear();
            let n = self.inner.read_until(b'\n', &mut self.line)?;
            if n == 0 {
                self.done = true;
                if block.is_empty() {
                    return Ok(None);
                }
                if block.iter().all(|b: &u8| b.is_ascii_whitespace()) {
                    self.trailing = block.len() as u64;
                    log::warn!("{} whitespace bytes after final $$$$ ignored", self.trailing);
                    return Ok(None);
                }
                return Err(SdfError::Unterminated {
                    offset: start,
                    length: block.len() as u64,
                });
            }
            self.position += n as u64;
            block.extend_from_slice(&self.line);
            if is_terminator(&self.line) {
                return Ok(Some(RawBlock { offset: start, bytes: block }));
            }
        }
    }
}

impl<R: BufRead> Iterator for BlockReader<R> {
    type Item = Result<RawBlock, SdfError>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.next_block() {
            Ok(Some(b)) => Some(Ok(b)),
            Ok(None) => None,
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

pub fn read_blocks<R: BufRead>(source: R) -> BlockReader<R> {
    BlockReader::new(source)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Self::Single),
            2 => Some(Self::Double),
            3 => Some(Self::Triple),
            4 => Some(Self::Aromatic),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Self::Single => 1,
            Self::Double => 2,
            Self::Triple => 3,
            Self::Aromatic => 4,
        }
    }

    /// Bond order in half-bond units (aromatic = 1.5).
    pub fn half_units(self) -> u32 {
        match self {
            Self::Single => 2,
            Self::Double => 4,
            Self::Triple => 6,
            Self::Aromatic => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Atom {
    pub element: String,
    pub charge: i32,
}

impl Atom {
    pub fn new(element: &str, charge: i32) -> Self {
        Self { element: element.to_string(), charge }
    }

    pub fn is_hydrogen(&self) -> bool {
        matches!(self.element.as_str(), "H" | "D" | "T")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }
}

/// Molecular graph from a V2000 connection table. Indices are 0-based.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct MolGraph {
    pub name: String,
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
}

impl MolGraph {
    /// Builds a graph, rejecting self-loops, dangling indices and duplicate bonds.
    pub fn new(atoms: Vec<Atom>, bonds: Vec<Bond>) -> Result<Self, SdfError> {
        let mut seen = std::collections::HashSet::new();
        for (i, b) in bonds.iter().enumerate() {
            if b.a >= atoms.len() || b.b >= atoms.len() {
                return Err(SdfError::BadBond {
                    line: i,
                    reason: format!("atom index out of range ({} atoms)", atoms.len()),
                });
            }
            if b.a == b.b {
                return Err(SdfError::BadBond { line: i, reason: "self bond".into() });
            }
            if !seen.insert((b.a.min(b.b), b.a.max(b.b))) {
                return Err(SdfError::BadBond { line: i, reason: "duplicate bond".into() });
            }
        }
        Ok(Self { name: String::new(), atoms, bonds })
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    /// Bond indices incident to each atom.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for (i, b) in self.bonds.iter().enumerate() {
            adj[b.a].push(i);
            adj[b.b].push(i);
        }
        adj
    }
}

fn field(line: &[u8], start: usize, end: usize) -> &str {
    let end = end.min(line.len());
    if start >= end {
        return "";
    }
    std::str::from_utf8(&line[start..end]).unwrap_or("").trim()
}

fn column_charge(code: i32) -> i32 {
    match code {
        1 => 3,
        2 => 2,
        3 => 1,
        5 => -1,
        6 => -2,
        7 => -3,
        _ => 0,
    }
}

fn charge_code(charge: i32) -> i32 {
    match charge {
        3 => 1,
        2 => 2,
        1 => 3,
        -1 => 5,
        -2 => 6,
        -3 => 7,
        _ => 0,
    }
}

/// Parses the molfile part of a block into a [`MolGraph`].
///
/// Any `M  CHG` line resets all atom-block charges, as the CTfile format
/// prescribes, and then sets the listed ones.
pub fn parse_molfile(block: &[u8]) -> Result<MolGraph, SdfError> {
    let mut lines = block.split_inclusive(|&b| b == b'\n').map(trim_eol);
    let name = lines.next().ok_or(SdfError::TruncatedHeader)?;
    lines.next().ok_or(SdfError::TruncatedHeader)?;
    lines.next().ok_or(SdfError::TruncatedHeader)?;
    let counts = lines.next().ok_or(SdfError::TruncatedHeader)?;
    let counts_str = String::from_utf8_lossy(counts).into_owned();
    if counts_str.contains("V3000") {
        return Err(SdfError::UnsupportedVersion("V3000".into()));
    }
    let version = field(counts, 33, 39);
    if version != "V2000" {
        if counts_str.trim_end().ends_with("V2000") {
            // tolerate a shifted version stamp
        } else {
            return Err(SdfError::UnsupportedVersion(version.to_string()));
        }
    }
    let n_atoms: usize = field(counts, 0, 3)
        .parse()
        .map_err(|_| SdfError::BadCounts(counts_str.clone()))?;
    let n_bonds: usize = field(counts, 3, 6)
        .parse()
        .map_err(|_| SdfError::BadCounts(counts_str.clone()))?;

    let mut atoms = Vec::with_capacity(n_atoms);
    for i in 0..n_atoms {
        let line = lines.next().ok_or(SdfError::BadAtom {
            line: i,
            reason: "missing atom line".into(),
        })?;
        let symbol = field(line, 31, 34);
        if symbol.is_empty() {
            return Err(SdfError::BadAtom { line: i, reason: "missing element symbol".into() });
        }
        let code = match field(line, 36, 39) {
            "" => 0,
            s => s.parse::<i32>().map_err(|_| SdfError::BadAtom {
                line: i,
                reason: format!("bad charge code {s:?}"),
            })?,
        };
        atoms.push(Atom::new(symbol, column_charge(code)));
    }

    let mut bonds = Vec::with_capacity(n_bonds);
    for i in 0..n_bonds {
        let line = lines.next().ok_or(SdfError::BadBond {
            line: i,
            reason: "missing bond line".into(),
        })?;
        let parse = |s: &str, what: &str| -> Result<usize, SdfError> {
            s.parse::<usize>().map_err(|_| SdfError::BadBond {
                line: i,
                reason: format!("bad {what} {s:?}"),
            })
        };
        let a = parse(field(line, 0, 3), "first atom")?;
        let b = parse(field(line, 3, 6), "second atom")?;
        let t = parse(field(line, 6, 9), "bond type")?;
        if a == 0 || b == 0 || a > n_atoms || b > n_atoms {
            return Err(SdfError::BadBond {
                line: i,
                reason: format!("atom index out of range ({a}, {b}) with {n_atoms} atoms"),
            });
        }
        let order = BondOrder::from_code(t as u8).filter(|_| t <= 4).ok_or_else(|| {
            SdfError::BadBond { line: i, reason: format!("unsupported bond type {t}") }
        })?;
        bonds.push(Bond { a: a - 1, b: b - 1, order });
    }

    let mut chg_seen = false;
    for line in lines {
        if line.starts_with(b"M  END") {
            break;
        }
        if line.starts_with(b"M  CHG") {
            if !chg_seen {
                atoms.iter_mut().for_each(|a| a.charge = 0);
                chg_seen = true;
            }
            let text = String::from_utf8_lossy(&line[6..]);
            let nums: Vec<i64> = text
                .split_ascii_whitespace()
                .map(|t| t.parse::<i64>())
                .collect::<Result<_, _>>()
                .map_err(|_| SdfError::BadAtom { line: 0, reason: "bad M  CHG line".into() })?;
            let count = nums.first().copied().unwrap_or(0) as usize;
            if nums.len() < 1 + 2 * count {
                return Err(SdfError::BadAtom { line: 0, reason: "short M  CHG line".into() });
            }
            for pair in nums[1..1 + 2 * count].chunks(2) {
                let idx = pair[0] as usize;
                if idx == 0 || idx > atoms.len() {
                    return Err(SdfError::BadAtom {
                        line: 0,
                        reason: format!("M  CHG atom {idx} out of range"),
                    });
                }
                atoms[idx - 1].charge = pair[1] as i32;
            }
        }
    }

    let mut graph = MolGraph::new(atoms, bonds)?;
    graph.name = String::from_utf8_lossy(name).into_owned();
    Ok(graph)
}

/// Parses the `> <TAG>` data items of a block, in order of appearance.
pub fn parse_properties(block: &[u8]) -> Result<Vec<(String, String)>, SdfError> {
    let mut props: Vec<(String, String)> = Vec::new();
    let mut lines = block.split_inclusive(|&b| b == b'\n').map(trim_eol).enumerate();
    // skip the connection table
    for (_, line) in lines.by_ref() {
        if line.starts_with(b"M  END") {
            break;
        }
    }
    let mut current: Option<(String, Vec<&[u8]>)> = None;
    let finish = |cur: Option<(String, Vec<&[u8]>)>,
                  props: &mut Vec<(String, String)>|
     -> Result<(), SdfError> {
        if let Some((tag, value_lines)) = cur {
            if props.iter().any(|(t, _)| *t == tag) {
                return Err(SdfError::DuplicateTag(tag));
            }
            let value = value_lines
                .iter()
                .map(|l| String::from_utf8_lossy(l))
                .collect::<Vec<_>>()
                .join("\n");
            props.push((tag, value));
        }
        Ok(())
    };
    for (n, line) in lines {
        if line.trim_ascii_end() == TERMINATOR {
            break;
        }
        if let Some((_, values)) = current.as_mut() {
            if line.is_empty() {
                finish(current.take(), &mut props)?;
            } else {
                values.push(line);
            }
            continue;
        }
        if line.starts_with(b">") {
            let open = line.iter().position(|&b| b == b'<');
            let close = line.iter().rposition(|&b| b == b'>');
            match (open, close) {
                (Some(o), Some(c)) if c > o + 1 => {
                    let tag = String::from_utf8_lossy(&line[o + 1..c]).into_owned();
                    current = Some((tag, Vec::new()));
                }
                _ => {
                    return Err(SdfError::BadProperty {
                        line: n,
                        reason: "data header without <TAG>".into(),
                    })
                }
            }
        }
    }
    finish(current.take(), &mut props)?;
    Ok(props)
}

/// Finds the value of one tag without building the full property list.
///
/// This is the hot path for index builds and scans.
pub fn find_property<'a>(block: &'a [u8], tag: &str) -> Option<&'a [u8]> {
    let needle_len = tag.len() + 2;
    let mut lines = block.split_inclusive(|&b| b == b'\n');
    let mut past_ctab = false;
    while let Some(line) = lines.next() {
        let line = trim_eol(line);
        if !past_ctab {
            past_ctab = line.starts_with(b"M  END");
            continue;
        }
        if line.first() != Some(&b'>') {
            continue;
        }
        let Some(o) = line.iter().position(|&b| b == b'<') else { continue };
        let rest = &line[o..];
        if rest.len() >= needle_len
            && &rest[1..=tag.len()] == tag.as_bytes()
            && rest[tag.len() + 1] == b'>'
        {
            let value = lines.next().map(trim_eol)?;
            return if value.is_empty() || value.trim_ascii_end() == TERMINATOR {
                None
            } else {
                Some(value)
            };
        }
    }
    None
}

/// A single SDF record.
#[derive(Clone, Debug, PartialEq)]
pub struct SdfRecord {
    pub raw: Option<Vec<u8>>,
    properties: Vec<(String, String)>,
    pub graph: Option<MolGraph>,
}

impl SdfRecord {
    /// Parses properties eagerly; the connection table is parsed on demand.
    pub fn from_block(bytes: Vec<u8>) -> Result<Self, SdfError> {
        let properties = parse_properties(&bytes)?;
        Ok(Self { raw: Some(bytes), properties, graph: None })
    }

    pub fn from_parts(graph: MolGraph, properties: Vec<(String, String)>) -> Result<Self, SdfError> {
        for (i, (tag, _)) in properties.iter().enumerate() {
            if tag.is_empty() || tag.contains(['<', '>']) {
                return Err(SdfError::BadProperty { line: i, reason: format!("invalid tag {tag:?}") });
            }
            if properties[..i].iter().any(|(t, _)| t == tag) {
                return Err(SdfError::DuplicateTag(tag.clone()));
            }
        }
        Ok(Self { raw: None, properties, graph: Some(graph) })
    }

    pub fn properties(&self) -> &[(String, String)] {
        &self.properties
    }

    pub fn get_property(&self, tag: &str) -> Option<&str> {
        self.properties.iter().find(|(t, _)| t == tag).map(|(_, v)| v.as_str())
    }

    /// Returns the graph, parsing it from the raw bytes if needed.
    pub fn graph(&self) -> Result<MolGraph, SdfError> {
        match (&self.graph, &self.raw) {
            (Some(g), _) => Ok(g.clone()),
            (None, Some(raw)) => parse_molfile(raw),
            (None, None) => Err(SdfError::EmptyRecord),
        }
    }
}

pub fn get_property<'a>(record: &'a SdfRecord, tag: &str) -> Option<&'a str> {
    record.get_property(tag)
}

struct CountingWriter<'a, W: ?Sized> {
    inner: &'a mut W,
    count: u64,
}

impl<W: Write + ?Sized> Write for CountingWriter<'_, W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.count += n as u64;
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

/// Writes a record. Raw bytes are copied verbatim when present.
pub fn write_record<W: Write + ?Sized>(record: &SdfRecord, sink: &mut W) -> Result<u64, SdfError> {
    if let Some(raw) = &record.raw {
        sink.write_all(raw)?;
        return Ok(raw.len() as u64);
    }
    let graph = record.graph.as_ref().ok_or(SdfError::EmptyRecord)?;
    let mut w = CountingWriter { inner: sink, count: 0 };
    write_molfile(graph, &mut w)?;
    for (tag, value) in &record.properties {
        writeln!(w, "> <{tag}>")?;
        writeln!(w, "{value}")?;
        writeln!(w)?;
    }
    w.write_all(b"$$$$\n")?;
    Ok(w.count)
}

/// Writes the V2000 connection table (with zero coordinates) through `M  END`.
pub fn write_molfile<W: Write + ?Sized>(graph: &MolGraph, w: &mut W) -> io::Result<()> {
    writeln!(w, "{}", graph.name)?;
    writeln!(w, "  sdforge")?;
    writeln!(w)?;
    writeln!(
        w,
        "{:>3}{:>3}  0  0  0  0  0  0  0  0999 V2000",
        graph.atoms.len(),
        graph.bonds.len()
    )?;
    for atom in &graph.atoms {
        writeln!(
            w,
            "    0.0000    0.0000    0.0000 {:<3} 0{:>3}  0  0  0  0  0  0  0  0  0  0",
            atom.element,
            charge_code(atom.charge)
        )?;
    }
    for bond in &graph.bonds {
        writeln!(w, "{:>3}{:>3}{:>3}  0", bond.a + 1, bond.b + 1, bond.order.code())?;
    }
    let charged: Vec<(usize, i32)> = graph
        .atoms
        .iter()
        .enumerate()
        .filter(|(_, a)| a.charge != 0)
        .map(|(i, a)| (i + 1, a.charge))
        .collect();
    for chunk in charged.chunks(8) {
        write!(w, "M  CHG{:>3}", chunk.len())?;
        for (i, c) in chunk {
            write!(w, " {i:>3} {c:>3}")?;
        }
        writeln!(w)?;
    }
    writeln!(w, "M  END")
}

impl fmt::Display for MolGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MolGraph({} atoms, {} bonds)", self.atoms.len(), self.bonds.len())
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    pub const ETHANOL: &str = "ethanol
  test

  3  2  0  0  0  0  0  0  0  0999 V2000
    0.0000    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
    1.5000    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
    2.0000    1.0000    0.0000 O   0  0  0  0  0  0  0  0  0  0  0  0
  1  2  1  0
  2  3  1  0
M  END
> <PUBCHEM_XLOGP3>
-0.1

> <PUBCHEM_IUPAC_INCHIKEY>
LFQSCWFLJHTTHZ-UHFFFAOYSA-N

$$$$
";

    pub const BENZENE_KEKULE: &str = "benzene
  test

  6  6  0  0  0  0  0  0  0  0999 V2000
    0.0000    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
    0.0000    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
    0.0000    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
    0.0000    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
    0.0000    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
    0.0000    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
  1  2  1  0
  2  3  2  0
  3  4  1  0
  4  5  2  0
  5  6  1  0
  6  1  2  0
M  END
$$$$
";

    pub const CHARGED: &str = "charged
  test

  3  2  0  0  0  0  0  0  0  0999 V2000
    0.0000    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
    0.0000    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
    0.0000    0.0000    0.0000 N   0  5  0  0  0  0  0  0  0  0  0  0
  1  2  1  0
  2  3  1  0
M  CHG  1   3   1
M  END
> <NOTE>
first line
second line

$$$$
";
}
