use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::corpus_hash;
use super::embed::{embed_3d, EmbedConfig};
use super::huckel::huckel_labels;
use super::OracleError;
use crate::diff::Tensor;
use crate::parallel::par_map;
use crate::physics::solve_gev;
use crate::smiles::{Element, Parsed};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    RandomId,
    SizeOod,
    ElementOod,
}

impl std::str::FromStr for SplitMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "random-id" => Ok(SplitMode::RandomId),
            "size-ood" => Ok(SplitMode::SizeOod),
            "element-ood" => Ok(SplitMode::ElementOod),
            _ => Err(format!("unknown split mode {s:?} (random-id, size-ood, element-ood)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub mode: SplitMode,
    /// Fraction of molecules sent to test in `random-id`.
    pub test_fraction: f64,
    /// `size-ood`: train keeps atom counts below this.
    pub train_max_atoms: usize,
    /// `size-ood`: test keeps atom counts above this.
    pub test_min_atoms: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            mode: SplitMode::RandomId,
            test_fraction: 0.2,
            train_max_atoms: 20,
            test_min_atoms: 23,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub split: SplitConfig,
    /// Base seed for the per-molecule 3D embedding.
    pub embed_seed: u64,
    /// Keep at most this many molecules from the corpus (in corpus order).
    pub limit: Option<usize>,
    /// Drop molecules with more heavy atoms than this.
    pub max_heavy_atoms: Option<usize>,
    pub jobs: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            split: SplitConfig::default(),
            embed_seed: 0,
            limit: None,
            max_heavy_atoms: None,
            jobs: 1,
        }
    }
}

/// One labelled molecule. Coordinates are only reachable through
/// [`Dataset::coords`], which counts every access.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub index: usize,
    pub smiles: String,
    pub elements: Vec<Element>,
    coords: Vec<[f64; 3]>,
    /// Upper triangle of H, row-major, Hartree.
    pub h_upper: Vec<f64>,
    pub s_upper: Vec<f64>,
    pub electrons: usize,
    pub gap_ev: f64,
    pub split: Split,
}

impl Record {
    pub fn n_orb(&self) -> usize {
        // n(n+1)/2 = len
        (((8 * self.h_upper.len() + 1) as f64).sqrt() as usize - 1) / 2
    }

    pub fn h(&self) -> Tensor {
        from_upper(&self.h_upper, self.n_orb())
    }

    pub fn s(&self) -> Tensor {
        from_upper(&self.s_upper, self.n_orb())
    }
}

pub fn to_upper(a: &Tensor) -> Vec<f64> {
    let n = a.rows();
    (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).map(|(i, j)| a.get(i, j)).collect()
}

pub fn from_upper(v: &[f64], n: usize) -> Tensor {
    let mut t = Tensor::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            t.set(i, j, v[k]);
            t.set(j, i, v[k]);
            k += 1;
        }
    }
    t
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedRecord {
    pub index: usize,
    pub smiles: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub corpus_hash: String,
    pub corpus_size: usize,
    pub config: GenConfig,
    pub n_train: usize,
    pub n_test: usize,
    /// Valid molecules that the split assigns to neither side.
    pub n_dropped: usize,
    pub skipped: Vec<SkippedRecord>,
}

pub const DATASET_FORMAT: &str = "molham-dataset-1";

/// In-memory dataset with an instrumented coordinate reader.
#[derive(Debug, Default)]
pub struct Dataset {
    pub records: Vec<Record>,
    coord_reads: AtomicUsize,
}

impl Clone for Dataset {
    fn clone(&self) -> Self {
        Self::new(self.records.clone())
    }
}

impl Dataset {
    pub fn new(records: Vec<Record>) -> Self {
        Self {
            records,
            coord_reads: AtomicUsize::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn coords(&self, i: usize) -> &[[f64; 3]] {
        self.coord_reads.fetch_add(1, Ordering::Relaxed);
        &self.records[i].coords
    }

    pub fn coord_reads(&self) -> usize {
        self.coord_reads.load(Ordering::Relaxed)
    }

    pub fn split(&self, which: Split) -> Dataset {
        Dataset::new(self.records.iter().filter(|r| r.split == which).cloned().collect())
    }

    pub fn load(path: &Path) -> Result<Dataset, OracleError> {
        let f = fs::File::open(path)?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: Record = serde_json::from_str(&line).map_err(|e| OracleError::BadDataset {
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(r);
        }
        Ok(Dataset::new(records))
    }

    pub fn save(&self, path: &Path) -> Result<(), OracleError> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Labels one molecule: embed, build `(H, S)`, solve for the gap.
pub fn label_molecule(index: usize, smiles: &str, embed_seed: u64) -> Result<Record, crate::Error> {
    let p = Parsed::new(smiles)?;
    let seed = embed_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64);
    let coords = embed_3d(&p.molecule, seed, &EmbedConfig::default())?;
    let (h, s) = huckel_labels(&p.molecule.elements, &coords)?;
    let spec = solve_gev(&h, &s, p.molecule.electrons)?;
    Ok(Record {
        index,
        smiles: smiles.to_string(),
        elements: p.molecule.elements.clone(),
        coords,
        h_upper: to_upper(&h),
        s_upper: to_upper(&s),
        electrons: p.molecule.electrons,
        gap_ev: spec.gap_ev,
        split: Split::Train,
    })
}

/// Labels the corpus, assigns splits and writes `dataset.jsonl` and
/// `manifest.json` into `out_dir`.
pub fn gen_dataset(corpus: &[String], cfg: &GenConfig, out_dir: &Path) -> Result<(Dataset, Manifest), OracleError> {
    let take = cfg.limit.unwrap_or(corpus.len()).min(corpus.len());
    let items: Vec<(usize, &String)> = corpus.iter().take(take).enumerate().collect();
    let labelled = par_map(&items, cfg.jobs, |(i, s)| {
        if let Some(max) = cfg.max_heavy_atoms {
            match Parsed::new(s) {
                Ok(p) if p.graph.heavy_atom_count() > max => return None,
                _ => {}
            }
        }
        Some(label_molecule(*i, s, cfg.embed_seed))
    });
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for ((i, s), r) in items.iter().zip(labelled) {
        match r {
            None => {}
            Some(Ok(r)) => records.push(r),
            Some(Err(e)) => skipped.push(SkippedRecord {
                index: *i,
                smiles: (*s).clone(),
                error: e.to_string(),
            }),
        }
    }
    let before = records.len();
    let records = assign_splits(records, &cfg.split);
    let n_train = records.iter().filter(|r| r.split == Split::Train).count();
    let n_test = records.len() - n_train;
    if n_train == 0 {
        return Err(OracleError::EmptySplit("train"));
    }
    if n_test == 0 {
        return Err(OracleError::EmptySplit("test"));
    }
    let manifest = Manifest {
        format: DATASET_FORMAT.into(),
        corpus_hash: corpus_hash(corpus),
        corpus_size: corpus.len(),
        config: cfg.clone(),
        n_train,
        n_test,
        n_dropped: before - records.len(),
        skipped,
    };
    let ds = Dataset::new(records);
    fs::create_dir_all(out_dir)?;
    ds.save(&out_dir.join("dataset.jsonl"))?;
    fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok((ds, manifest))
}

/// Tags records with their split; records that fit neither side are dropped.
pub fn assign_splits(mut records: Vec<Record>, cfg: &SplitConfig) -> Vec<Record> {
    match cfg.mode {
        SplitMode::RandomId => {
            let mut order: Vec<usize> = (0..records.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
            let n_test = ((records.len() as f64) * cfg.test_fraction).round() as usize;
            for (rank, &i) in order.iter().enumerate() {
                records[i].split = if rank < n_test { Split::Test } else { Split::Train };
            }
            records
        }
        SplitMode::SizeOod => records
            .into_iter()
            .filter_map(|mut r| {
                let n = r.elements.len();
                if n < cfg.train_max_atoms {
                    r.split = Split::Train;
                } else if n > cfg.test_min_atoms {
                    r.split = Split::Test;
                } else {
                    return None;
                }
                Some(r)
            })
            .collect(),
        SplitMode::ElementOod => {
            for r in &mut records {
                let sp = r.elements.iter().any(|e| matches!(e, Element::S | Element::P));
                r.split = if sp { Split::Test } else { Split::Train };
            }
            records
        }
    }
}
