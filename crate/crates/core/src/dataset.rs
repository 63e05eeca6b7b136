//! The two-domain sentiment dataset: valence-labeled phrases split into
//! negative and positive classes, balanced by seeded downsampling, plus the
//! mixed pool of both classes that the mixed-pool discriminators sample.
//!
//! Construction is deterministic: pieces are merged in sorted piece-id order
//! before any seeded choice is made, so identical inputs and seed produce a
//! byte-identical dataset regardless of how callers gathered the pieces.

use crate::pianoroll::{PianoRollPhrase, PHRASE_CELLS};
use crate::rng::SeedRng;
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("piece '{0}' has no valence annotation")]
    MissingAnnotation(String),
    #[error("piece '{0}' has more than one valence annotation")]
    DuplicateAnnotation(String),
    #[error("class {0:?} has zero phrases")]
    EmptyClass(Label),
    #[error("bad annotation '{piece_id}': {reason}")]
    BadAnnotation { piece_id: String, reason: String },
    #[error("annotation parse error at line {line}: {reason}")]
    AnnotationParse { line: usize, reason: String },
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes (expected \"PRDS\")")]
    BadMagic,
    #[error("unsupported dataset version {0}")]
    VersionMismatch(u16),
    #[error("corrupt record: {0}")]
    CorruptRecord(String),
}

/// Binary sentiment class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Label {
    Negative,
    Positive,
}

/// Per-piece valence series in [-1, 1], keyed by the MIDI filename stem.
#[derive(Clone, Debug, PartialEq)]
pub struct ValenceAnnotation {
    pub piece_id: String,
    pub valence_series: Vec<f64>,
}

impl ValenceAnnotation {
    pub fn new(
        piece_id: impl Into<String>,
        valence_series: Vec<f64>,
    ) -> Result<Self, DatasetError> {
        let piece_id = piece_id.into();
        if valence_series.is_empty() {
            return Err(DatasetError::BadAnnotation {
                piece_id,
                reason: "empty valence series".into(),
            });
        }
        if let Some(v) = valence_series
            .iter()
            .find(|v| !v.is_finite() || v.abs() > 1.0)
        {
            return Err(DatasetError::BadAnnotation {
                piece_id,
                reason: format!("valence {v} outside [-1, 1]"),
            });
        }
        Ok(Self {
            piece_id,
            valence_series,
        })
    }
}

/// A phrase tagged with its class and provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPhrase {
    pub phrase: PianoRollPhrase,
    pub label: Label,
    pub source_piece: String,
    /// Index of the phrase within its source piece's phrase list.
    pub phrase_index: u32,
}

/// The balanced two-class dataset plus the mixed pool.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub negative: Vec<LabeledPhrase>,
    pub positive: Vec<LabeledPhrase>,
    /// Union of both balanced classes (negative first, positive second):
    /// the sample pool for the mixed-pool discriminators.
    pub mixed_pool: Vec<PianoRollPhrase>,
    /// Seed used for the balancing downsample.
    pub seed: u64,
}

/// Counts observed while building a dataset, before and after balancing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct BuildReport {
    pub pieces: usize,
    pub raw_negative: usize,
    pub raw_positive: usize,
    pub per_class_after_balancing: usize,
}

/// Classify a piece by the mean of its valence series; a mean of exactly
/// zero counts as positive.
pub fn label_piece(annotation: &ValenceAnnotation) -> Label {
    let mean: f64 =
        annotation.valence_series.iter().sum::<f64>() / annotation.valence_series.len() as f64;
    if mean >= 0.0 {
        Label::Positive
    } else {
        Label::Negative
    }
}

/// Build the balanced dataset from per-piece phrase lists and annotations.
///
/// Every piece must have exactly one annotation. Phrases inherit their
/// piece's label; the larger class is downsampled uniformly at random
/// (seeded, without replacement, original order kept) to the smaller class's
/// size, and the mixed pool is the union of the balanced classes.
pub fn build_dataset(
    pieces: &[(String, Vec<PianoRollPhrase>)],
    annotations: &[ValenceAnnotation],
    seed: u64,
) -> Result<(LabeledDataset, BuildReport), DatasetError> {
    let mut by_id: BTreeMap<&str, &ValenceAnnotation> = BTreeMap::new();
    for ann in annotations {
        if by_id.insert(ann.piece_id.as_str(), ann).is_some() {
            return Err(DatasetError::DuplicateAnnotation(ann.piece_id.clone()));
        }
    }

    // Sorted piece order makes the build independent of caller ordering.
    let mut sorted: Vec<&(String, Vec<PianoRollPhrase>)> = pieces.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));

    let mut negative = Vec::new();
    let mut positive = Vec::new();
    for (piece_id, phrases) in sorted {
        let ann = by_id
            .get(piece_id.as_str())
            .ok_or_else(|| DatasetError::MissingAnnotation(piece_id.clone()))?;
        let label = label_piece(ann);
        let class = match label {
            Label::Negative => &mut negative,
            Label::Positive => &mut positive,
        };
        for (i, phrase) in phrases.iter().enumerate() {
            class.push(LabeledPhrase {
                phrase: phrase.clone(),
                label,
                source_piece: piece_id.clone(),
                phrase_index: i as u32,
            });
        }
    }

    if negative.is_empty() {
        return Err(DatasetError::EmptyClass(Label::Negative));
    }
    if positive.is_empty() {
        return Err(DatasetError::EmptyClass(Label::Positive));
    }
    let report = BuildReport {
        pieces: pieces.len(),
        raw_negative: negative.len(),
        raw_positive: positive.len(),
        per_class_after_balancing: negative.len().min(positive.len()),
    };

    let mut rng = SeedRng::new(seed);
    let target = report.per_class_after_balancing;
    let downsample = |class: Vec<LabeledPhrase>, rng: &mut SeedRng| {
        if class.len() == target {
            return class;
        }
        let keep = rng.sample_indices(class.len(), target);
        let class = class;
        keep.iter().map(|&i| class[i].clone()).collect()
    };
    let negative = downsample(negative, &mut rng);
    let positive = downsample(positive, &mut rng);

    let mixed_pool = negative
        .iter()
        .chain(positive.iter())
        .map(|lp| lp.phrase.clone())
        .collect();

    Ok((
        LabeledDataset {
            negative,
            positive,
            mixed_pool,
            seed,
        },
        report,
    ))
}

/// Summary statistics for reporting.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetStats {
    pub negative_count: usize,
    pub positive_count: usize,
    pub mixed_pool_count: usize,
    pub negative_density: f64,
    pub positive_density: f64,
    pub phrases_per_piece: BTreeMap<String, usize>,
}

pub fn dataset_stats(ds: &LabeledDataset) -> DatasetStats {
    let density = |class: &[LabeledPhrase]| {
        if class.is_empty() {
            return 0.0;
        }
        let on: usize = class.iter().map(|lp| lp.phrase.on_count()).sum();
        on as f64 / (PHRASE_CELLS * class.len()) as f64
    };
    let mut per_piece = BTreeMap::new();
    for lp in ds.negative.iter().chain(ds.positive.iter()) {
        *per_piece.entry(lp.source_piece.clone()).or_insert(0) += 1;
    }
    DatasetStats {
        negative_count: ds.negative.len(),
        positive_count: ds.positive.len(),
        mixed_pool_count: ds.mixed_pool.len(),
        negative_density: density(&ds.negative),
        positive_density: density(&ds.positive),
        phrases_per_piece: per_piece,
    }
}

// ---------------------------------------------------------------------------
// On-disk format.
//
// Magic "PRDS", u16 version, u32 negative count, u32 positive count, u64
// seed, then one record per phrase (all negative records, then all
// positive): label u8, piece id as u32 length + UTF-8 bytes, phrase index
// u32, 5376 bytes of row-major cells. Integers little-endian throughout.
// A human-readable sidecar (same stem, ".meta.json") records counts and
// provenance.
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 4] = b"PRDS";
const VERSION: u16 = 1;

#[derive(Serialize)]
struct MetaSidecar<'a> {
    format: &'a str,
    version: u16,
    seed: u64,
    negative_count: usize,
    positive_count: usize,
    mixed_pool_count: usize,
    pieces: BTreeMap<String, usize>,
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::IoFailure {
        path: path.display().to_string(),
        source,
    }
}

/// Serialized dataset bytes (without touching the filesystem).
pub fn dataset_to_bytes(ds: &LabeledDataset) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.negative.len() as u32).to_le_bytes());
    out.extend_from_slice(&(ds.positive.len() as u32).to_le_bytes());
    out.extend_from_slice(&ds.seed.to_le_bytes());
    for lp in ds.negative.iter().chain(ds.positive.iter()) {
        out.push(match lp.label {
            Label::Negative => 0,
            Label::Positive => 1,
        });
        let id = lp.source_piece.as_bytes();
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&lp.phrase_index.to_le_bytes());
        out.extend_from_slice(lp.phrase.cells());
    }
    out
}

/// Parse dataset bytes; the mixed pool is rebuilt as the canonical union
/// (negative then positive).
pub fn dataset_from_bytes(bytes: &[u8]) -> Result<LabeledDataset, DatasetError> {
    let mut cur = ByteReader { bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(DatasetError::BadMagic);
    }
    let version = u16::from_le_bytes(cur.take(2, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(DatasetError::VersionMismatch(version));
    }
    let n_neg = u32::from_le_bytes(cur.take(4, "negative count")?.try_into().unwrap()) as usize;
    let n_pos = u32::from_le_bytes(cur.take(4, "positive count")?.try_into().unwrap()) as usize;
    let seed = u64::from_le_bytes(cur.take(8, "seed")?.try_into().unwrap());

    let mut read_class = |expected: Label, n: usize| -> Result<Vec<LabeledPhrase>, DatasetError> {
        let mut class = Vec::with_capacity(n.min(1 << 16));
        for i in 0..n {
            let label = match cur.take(1, "label")?[0] {
                0 => Label::Negative,
                1 => Label::Positive,
                other => {
                    return Err(DatasetError::CorruptRecord(format!(
                        "record {i}: label byte {other}"
                    )))
                }
            };
            if label != expected {
                return Err(DatasetError::CorruptRecord(format!(
                    "record {i}: label {label:?} in the {expected:?} section"
                )));
            }
            let id_len =
                u32::from_le_bytes(cur.take(4, "piece id length")?.try_into().unwrap()) as usize;
            let id_bytes = cur.take(id_len, "piece id")?;
            let source_piece = String::from_utf8(id_bytes.to_vec()).map_err(|_| {
                DatasetError::CorruptRecord(format!("record {i}: piece id is not UTF-8"))
            })?;
            let phrase_index = u32::from_le_bytes(cur.take(4, "phrase index")?.try_into().unwrap());
            let cells = cur.take(PHRASE_CELLS, "phrase cells")?.to_vec();
            let phrase = PianoRollPhrase::from_cells(cells)
                .map_err(|e| DatasetError::CorruptRecord(format!("record {i}: {e}")))?;
            class.push(LabeledPhrase {
                phrase,
                label,
                source_piece,
                phrase_index,
            });
        }
        Ok(class)
    };

    let negative = read_class(Label::Negative, n_neg)?;
    let positive = read_class(Label::Positive, n_pos)?;
    if cur.pos != bytes.len() {
        return Err(DatasetError::CorruptRecord(format!(
            "{} trailing byte(s) after the last record",
            bytes.len() - cur.pos
        )));
    }
    let mixed_pool = negative
        .iter()
        .chain(positive.iter())
        .map(|lp| lp.phrase.clone())
        .collect();
    Ok(LabeledDataset {
        negative,
        positive,
        mixed_pool,
        seed,
    })
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], DatasetError> {
        if self.bytes.len() - self.pos < n {
            return Err(DatasetError::CorruptRecord(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

/// Write the dataset and its `.meta.json` sidecar.
pub fn save_dataset(ds: &LabeledDataset, path: &Path) -> Result<(), DatasetError> {
    let bytes = dataset_to_bytes(ds);
    let mut f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(&bytes).map_err(|e| io_err(path, e))?;

    let stats = dataset_stats(ds);
    let sidecar = MetaSidecar {
        format: "piano-roll sentiment dataset",
        version: VERSION,
        seed: ds.seed,
        negative_count: stats.negative_count,
        positive_count: stats.positive_count,
        mixed_pool_count: stats.mixed_pool_count,
        pieces: stats.phrases_per_piece,
    };
    let sidecar_path = path.with_extension("meta.json");
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serialization cannot fail");
    std::fs::write(&sidecar_path, json).map_err(|e| io_err(&sidecar_path, e))?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset, DatasetError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| io_err(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| io_err(path, e))?;
    dataset_from_bytes(&bytes)
}

/// Parse the delimited annotation text format.
///
/// First line is a header starting with `piece_id`; every following line is
/// `piece_id,v0,v1,...` with at least one valence value. Rows may have
/// different lengths. No quoting: piece ids must not contain commas.
pub fn parse_annotations(text: &str) -> Result<Vec<ValenceAnnotation>, DatasetError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if idx == 0 && line.starts_with("piece_id") {
            continue;
        }
        let mut fields = line.split(',');
        let piece_id = fields.next().unwrap().trim().to_string();
        if piece_id.is_empty() {
            return Err(DatasetError::AnnotationParse {
                line: idx + 1,
                reason: "empty piece id".into(),
            });
        }
        let mut series = Vec::new();
        for field in fields {
            let field = field.trim();
            if field.is_empty() {
                continue;
            }
            let v: f64 = field.parse().map_err(|_| DatasetError::AnnotationParse {
                line: idx + 1,
                reason: format!("'{field}' is not a number"),
            })?;
            series.push(v);
        }
        if series.is_empty() {
            return Err(DatasetError::AnnotationParse {
                line: idx + 1,
                reason: "no valence values".into(),
            });
        }
        out.push(ValenceAnnotation::new(piece_id, series)?);
    }
    Ok(out)
}
