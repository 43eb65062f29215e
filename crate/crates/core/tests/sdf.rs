use std::cell::Cell;
use std::fs::File;
use std::io::{BufReader, Read};
use std::rc::Rc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdforge::sdf::{read_blocks, write_record, SdfRecord};
use sdforge::synth::{generate_synthetic_corpus, random_molecule, CorpusSpec, MoleculeSize};

struct Tally<R> {
    inner: R,
    pulled: Rc<Cell<u64>>,
}

impl<R: Read> Read for Tally<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.pulled.set(self.pulled.get() + n as u64);
        Ok(n)
    }
}

/// The reader never runs further ahead of the block it yields than one
/// buffer, however many blocks the file holds.
#[test]
fn block_reader_lookahead_is_bounded() {
    let dir = tempfile::tempdir().unwrap();
    let spec = CorpusSpec {
        sources: 1,
        records_per_source: 3_000,
        files_per_source: 1,
        core: 0,
        collisions: 0,
        seed: 4,
        ..Default::default()
    };
    let m = generate_synthetic_corpus(&spec, dir.path()).unwrap();
    let path = &m.all_files()[0];
    let size = std::fs::metadata(path).unwrap().len();
    const CAPACITY: usize = 4096;
    let pulled = Rc::new(Cell::new(0));
    let reader = BufReader::with_capacity(CAPACITY, Tally { inner: File::open(path).unwrap(), pulled: pulled.clone() });
    let mut count = 0;
    let mut worst_lead = 0;
    let mut covered = 0;
    for block in read_blocks(reader) {
        let block = block.unwrap();
        let end = block.offset + block.len();
        covered += block.len();
        worst_lead = worst_lead.max(pulled.get() - end);
        count += 1;
    }
    assert_eq!(count, 3_000);
    assert_eq!(covered, size);
    assert!(worst_lead <= CAPACITY as u64, "read {worst_lead} bytes past the current block");
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn parse_write_parse_is_identity(seed in any::<u64>(), heavy in 1usize..40, value in "[ -~]{0,30}") {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let graph = random_molecule(&mut rng, MoleculeSize { min_heavy: heavy, max_heavy: heavy });
        let props = vec![("ID".to_string(), seed.to_string()), ("NOTE".to_string(), value.trim().to_string())];
        let mut first = Vec::new();
        write_record(&SdfRecord::from_parts(graph.clone(), props.clone()).unwrap(), &mut first).unwrap();
        let parsed = SdfRecord::from_block(first.clone()).unwrap();
        prop_assert_eq!(parsed.graph().unwrap(), graph.clone());
        prop_assert_eq!(parsed.properties(), &props[..]);

        let mut second = Vec::new();
        write_record(&SdfRecord::from_parts(parsed.graph().unwrap(), parsed.properties().to_vec()).unwrap(), &mut second).unwrap();
        prop_assert_eq!(second, first);
    }
}
