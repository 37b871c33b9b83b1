//! Assembling training samples from feature files, label files and target stores.

use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use semisup::distopt::Sample;
use semisup::featpipe::{read_feature_file, stack_labels, FeatureSequence, STACK};
use semisup::nncore::{Targets, Tensor};
use semisup::targetstore::{soft_targets, TargetStoreReader, DEFAULT_FILL};

use crate::error::{CliError, Result};
use crate::manifest::{Manifest, ManifestRow, Split};
use crate::util;

/// Feature file name for shard `i`.
pub fn shard_file_name(i: usize) -> String {
    format!("shard-{i:04}.feat")
}

/// Feature files in `path`: the file itself, or every `*.feat` in the
/// directory, sorted by name.
pub fn feature_files(path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = std::fs::read_dir(path).map_err(|e| CliError::file(path, e))?;
    let mut files = Vec::new();
    for e in entries {
        let p = e.map_err(|e| CliError::file(path, e))?.path();
        if p.extension().is_some_and(|x| x == "feat") {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(CliError::data(format!(
            "{}: no feature files",
            path.display()
        )));
    }
    Ok(files)
}

/// Stacked features keyed by (utterance id, offset).
#[derive(Clone, Debug, Default)]
pub struct FeatureIndex {
    seqs: HashMap<(String, u8), Tensor<f32>>,
    dim: Option<usize>,
}

impl FeatureIndex {
    pub fn from_sequences(seqs: impl IntoIterator<Item = FeatureSequence>) -> Result<Self> {
        let mut idx = FeatureIndex::default();
        for s in seqs {
            idx.insert(s)?;
        }
        Ok(idx)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut idx = FeatureIndex::default();
        for f in feature_files(path)? {
            let file = File::open(&f).map_err(|e| CliError::file(&f, e))?;
            let ff = read_feature_file(BufReader::new(file))
                .map_err(|e| CliError::data(format!("{}: {e}", f.display())))?;
            for s in ff.sequences {
                idx.insert(s)?;
            }
        }
        Ok(idx)
    }

    fn insert(&mut self, s: FeatureSequence) -> Result<()> {
        match self.dim {
            None => self.dim = Some(s.dim()),
            Some(d) if d != s.dim() => {
                return Err(CliError::data(format!(
                    "utterance {:?} has feature dim {}, expected {d}",
                    s.utterance_id,
                    s.dim()
                )))
            }
            Some(_) => {}
        }
        let key = (s.utterance_id, s.offset);
        if self.seqs.contains_key(&key) {
            return Err(CliError::data(format!(
                "duplicate features for {:?} offset {}",
                key.0, key.1
            )));
        }
        self.seqs.insert(key, s.frames);
        Ok(())
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.seqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seqs.is_empty()
    }

    pub fn get(&self, utterance_id: &str, offset: u8) -> Result<&Tensor<f32>> {
        self.seqs
            .get(&(utterance_id.to_string(), offset))
            .ok_or_else(|| {
                CliError::data(format!(
                    "no features for {utterance_id:?} at offset {offset}"
                ))
            })
    }
}

/// 10 ms frame labels of every row in `split`, read through the manifest.
pub fn load_labels(manifest: &Manifest, split: Split) -> Result<HashMap<String, Vec<usize>>> {
    manifest
        .split(split)
        .map(|r| {
            Ok((
                r.utterance_id.clone(),
                util::read_labels(manifest.resolve(&r.labels))?,
            ))
        })
        .collect()
}

/// Samples with hard stacked-frame labels for the given rows at one offset.
pub fn hard_samples(
    rows: &[&ManifestRow],
    feats: &FeatureIndex,
    labels: &HashMap<String, Vec<usize>>,
    offset: u8,
    num_classes: usize,
) -> Result<Vec<Sample<f32>>> {
    rows.iter()
        .map(|r| {
            let x = feats.get(&r.utterance_id, offset)?;
            let raw = labels
                .get(&r.utterance_id)
                .ok_or_else(|| CliError::data(format!("no labels for {:?}", r.utterance_id)))?;
            let y = stack_labels(raw, offset as usize)?;
            if y.len() != x.rows() {
                return Err(CliError::data(format!(
                    "{:?} offset {offset}: {} stacked labels for {} feature frames",
                    r.utterance_id,
                    y.len(),
                    x.rows()
                )));
            }
            if let Some(&bad) = y.iter().find(|&&l| l >= num_classes) {
                return Err(CliError::data(format!(
                    "{:?}: label {bad} out of range for {num_classes} classes",
                    r.utterance_id
                )));
            }
            Ok(Sample::new(x.clone(), Targets::Hard(y))?)
        })
        .collect()
}

/// Hard-label samples for each offset `0..STACK`.
pub fn labeled_by_offset(
    rows: &[&ManifestRow],
    feats: &FeatureIndex,
    labels: &HashMap<String, Vec<usize>>,
    num_classes: usize,
) -> Result<Vec<Vec<Sample<f32>>>> {
    (0..STACK as u8)
        .map(|o| hard_samples(rows, feats, labels, o, num_classes))
        .collect()
}

/// Offset-0 samples with soft targets reconstructed from the store.
pub fn soft_samples(
    rows: &[&ManifestRow],
    feats: &FeatureIndex,
    store: &TargetStoreReader,
    num_classes: usize,
) -> Result<Vec<Sample<f32>>> {
    if store.num_classes() != num_classes {
        return Err(CliError::data(format!(
            "target store has {} classes, model {num_classes}",
            store.num_classes()
        )));
    }
    rows.iter()
        .map(|r| {
            let x = feats.get(&r.utterance_id, 0)?;
            let recs = store.read(&r.utterance_id).map_err(|e| match e {
                semisup::Error::NotFound(id) => {
                    CliError::data(format!("target store has no entry for {id:?}"))
                }
                e => e.into(),
            })?;
            if recs.len() != x.rows() {
                return Err(CliError::data(format!(
                    "{:?}: {} target frames for {} feature frames",
                    r.utterance_id,
                    recs.len(),
                    x.rows()
                )));
            }
            Ok(Sample::new(
                x.clone(),
                Targets::Soft(soft_targets(&recs, num_classes, DEFAULT_FILL)?),
            )?)
        })
        .collect()
}
