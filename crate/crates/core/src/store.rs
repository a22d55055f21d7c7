//! The embedding corpus: on-disk layout, validation, and the immutable
//! in-memory index every other module reads from.
//!
//! A corpus directory holds:
//!
//! - `manifest.json`: `{"version":1,"count":N,"image_dim":..,"text_dim":..,
//!   "ids":"ids.tsv","images":"images.vec","texts":"texts.vec","labels":"labels.tsv"}`
//!   (`labels` optional);
//! - `ids.tsv`: one id per line, line `i` names row `i`;
//! - `images.vec` / `texts.vec`: see [`crate::vecfile`];
//! - `labels.tsv`: `id<TAB>0|1` lines.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CimError, Result};
use crate::vecfile;
use crate::vector::normalize_in_place;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub count: usize,
    pub image_dim: usize,
    pub text_dim: usize,
    pub ids: String,
    pub images: String,
    pub texts: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
}

impl Manifest {
    fn standard(count: usize, image_dim: usize, text_dim: usize, labels: bool) -> Self {
        Manifest {
            version: crate::CORPUS_FORMAT_VERSION,
            count,
            image_dim,
            text_dim,
            ids: "ids.tsv".into(),
            images: "images.vec".into(),
            texts: "texts.vec".into(),
            labels: labels.then(|| "labels.tsv".into()),
        }
    }
}

/// A borrowed view of one corpus row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingRecord<'a> {
    pub id: &'a str,
    pub image_embedding: &'a [f32],
    pub text_embedding: &'a [f32],
    pub label: Option<bool>,
}

/// Immutable, validated corpus with dense row-major storage.
///
/// Every stored vector is unit length. Rows keep ingestion order.
#[derive(Debug)]
pub struct CorpusIndex {
    ids: Vec<String>,
    images: Vec<f32>,
    texts: Vec<f32>,
    labels: Vec<Option<bool>>,
    image_dim: usize,
    text_dim: usize,
    rows_by_id: HashMap<String, usize>,
    checksum: String,
}

impl CorpusIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    /// Always false: an index holds at least one record.
    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn image_dim(&self) -> usize {
        self.image_dim
    }

    pub fn text_dim(&self) -> usize {
        self.text_dim
    }

    /// `(image_dim, text_dim)`
    pub fn dims(&self) -> (usize, usize) {
        (self.image_dim, self.text_dim)
    }

    /// Hex SHA-256 over the raw (pre-normalization) vectors, ids, and labels.
    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    pub fn id(&self, row: usize) -> &str {
        &self.ids[row]
    }

    pub fn image(&self, row: usize) -> &[f32] {
        &self.images[row * self.image_dim..(row + 1) * self.image_dim]
    }

    pub fn text(&self, row: usize) -> &[f32] {
        &self.texts[row * self.text_dim..(row + 1) * self.text_dim]
    }

    pub fn label(&self, row: usize) -> Option<bool> {
        self.labels[row]
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.rows_by_id.get(id).copied()
    }

    pub fn record(&self, row: usize) -> EmbeddingRecord<'_> {
        EmbeddingRecord {
            id: self.id(row),
            image_embedding: self.image(row),
            text_embedding: self.text(row),
            label: self.label(row),
        }
    }

    pub fn records(&self) -> impl ExactSizeIterator<Item = EmbeddingRecord<'_>> + '_ {
        (0..self.len()).map(|row| self.record(row))
    }

    pub(crate) fn texts_flat(&self) -> &[f32] {
        &self.texts
    }

    /// Writes the stored (normalized) vectors as a corpus directory that
    /// [`ingest_corpus`] reads back bit for bit.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let labels = self
            .labels
            .iter()
            .any(Option::is_some)
            .then_some(&self.labels[..]);
        write_corpus(
            dir,
            &self.ids,
            self.image_dim,
            &self.images,
            self.text_dim,
            &self.texts,
            labels,
        )
    }

    fn from_parts(
        ids: Vec<String>,
        mut images: Vec<f32>,
        image_dim: usize,
        mut texts: Vec<f32>,
        text_dim: usize,
        labels: Vec<Option<bool>>,
    ) -> Result<Self> {
        let count = ids.len();
        if count == 0 {
            return Err(CimError::EmptyCorpus);
        }
        debug_assert_eq!(images.len(), count * image_dim);
        debug_assert_eq!(texts.len(), count * text_dim);
        debug_assert_eq!(labels.len(), count);

        let mut rows_by_id = HashMap::with_capacity(count);
        for (row, id) in ids.iter().enumerate() {
            validate_id(id, row)?;
            if rows_by_id.insert(id.clone(), row).is_some() {
                return Err(CimError::DuplicateId(id.clone()));
            }
        }

        let checksum = checksum(&ids, &images, image_dim, &texts, text_dim, &labels);

        for (dim, values, what) in [
            (image_dim, &mut images, "image"),
            (text_dim, &mut texts, "text"),
        ] {
            for (row, chunk) in values.chunks_exact_mut(dim).enumerate() {
                normalize_in_place(chunk).map_err(|e| match e {
                    CimError::ZeroVector { .. } => CimError::ZeroVector { row: Some(row) },
                    CimError::InvalidParams(_) => {
                        CimError::Format(format!("non-finite {what} embedding at row {row}"))
                    }
                    other => other,
                })?;
            }
        }

        Ok(CorpusIndex {
            ids,
            images,
            texts,
            labels,
            image_dim,
            text_dim,
            rows_by_id,
            checksum,
        })
    }
}

fn validate_id(id: &str, row: usize) -> Result<()> {
    if id.is_empty() || id.contains(['\t', '\n', '\r']) {
        return Err(CimError::Format(format!(
            "invalid id {id:?} at row {row}: ids must be non-empty and free of tabs and newlines"
        )));
    }
    Ok(())
}

fn checksum(
    ids: &[String],
    images: &[f32],
    image_dim: usize,
    texts: &[f32],
    text_dim: usize,
    labels: &[Option<bool>],
) -> String {
    let mut h = Sha256::new();
    h.update(b"cim-corpus\0");
    for n in [ids.len(), image_dim, text_dim] {
        h.update((n as u64).to_le_bytes());
    }
    let mut buf = Vec::with_capacity(4 * 4096);
    for values in [images, texts] {
        for chunk in values.chunks(4096) {
            buf.clear();
            for v in chunk {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            h.update(&buf);
        }
    }
    for id in ids {
        h.update(id.as_bytes());
        h.update(b"\n");
    }
    let label_bytes: Vec<u8> = labels
        .iter()
        .map(|l| match l {
            Some(false) => 0,
            Some(true) => 1,
            None => 0xff,
        })
        .collect();
    h.update(&label_bytes);
    hex::encode(h.finalize())
}

/// Builds a [`CorpusIndex`] from in-memory vectors (not yet normalized).
#[derive(Debug)]
pub struct CorpusBuilder {
    image_dim: usize,
    text_dim: usize,
    ids: Vec<String>,
    images: Vec<f32>,
    texts: Vec<f32>,
    labels: Vec<Option<bool>>,
}

impl CorpusBuilder {
    pub fn new(image_dim: usize, text_dim: usize) -> Self {
        Self::with_capacity(image_dim, text_dim, 0)
    }

    pub fn with_capacity(image_dim: usize, text_dim: usize, rows: usize) -> Self {
        CorpusBuilder {
            image_dim,
            text_dim,
            ids: Vec::with_capacity(rows),
            images: Vec::with_capacity(rows * image_dim),
            texts: Vec::with_capacity(rows * text_dim),
            labels: Vec::with_capacity(rows),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn push(
        &mut self,
        id: impl Into<String>,
        image: &[f32],
        text: &[f32],
        label: Option<bool>,
    ) -> Result<&mut Self> {
        for (dim, got) in [(self.image_dim, image.len()), (self.text_dim, text.len())] {
            if got != dim {
                return Err(CimError::DimensionMismatch {
                    expected: dim,
                    found: got,
                });
            }
        }
        self.ids.push(id.into());
        self.images.extend_from_slice(image);
        self.texts.extend_from_slice(text);
        self.labels.push(label);
        Ok(self)
    }

    /// Validates ids, normalizes every vector, and computes the checksum.
    pub fn build(self) -> Result<CorpusIndex> {
        if self.image_dim == 0 || self.text_dim == 0 {
            return Err(CimError::InvalidParams(
                "embedding dims must be at least 1".into(),
            ));
        }
        CorpusIndex::from_parts(
            self.ids,
            self.images,
            self.image_dim,
            self.texts,
            self.text_dim,
            self.labels,
        )
    }
}

/// Reference writer for the corpus directory layout. Vectors are written
/// exactly as given.
pub fn write_corpus(
    dir: impl AsRef<Path>,
    ids: &[String],
    image_dim: usize,
    images: &[f32],
    text_dim: usize,
    texts: &[f32],
    labels: Option<&[Option<bool>]>,
) -> Result<()> {
    let dir = dir.as_ref();
    let count = ids.len();
    if images.len() != count * image_dim || texts.len() != count * text_dim {
        return Err(CimError::InvalidParams(
            "vector buffers do not match id count and dims".into(),
        ));
    }
    fs::create_dir_all(dir).map_err(|e| CimError::io(dir, e))?;
    let manifest = Manifest::standard(count, image_dim, text_dim, labels.is_some());

    let mut id_text = String::new();
    for id in ids {
        id_text.push_str(id);
        id_text.push('\n');
    }
    write_file(&dir.join(&manifest.ids), id_text.as_bytes())?;
    vecfile::write(dir.join(&manifest.images), image_dim, images)?;
    vecfile::write(dir.join(&manifest.texts), text_dim, texts)?;
    if let (Some(labels), Some(name)) = (labels, &manifest.labels) {
        let mut out = String::new();
        for (id, label) in ids.iter().zip(labels) {
            if let Some(l) = label {
                out.push_str(&format!("{id}\t{}\n", u8::from(*l)));
            }
        }
        write_file(&dir.join(name), out.as_bytes())?;
    }
    let json = serde_json::to_string_pretty(&manifest)?;
    write_file(&dir.join(MANIFEST_FILE), json.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CimError::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CimError::io(path, e))?;
    String::from_utf8(bytes)
        .map_err(|_| CimError::Format(format!("{}: not valid UTF-8", path.display())))
}

fn manifest_location(path: &Path) -> (PathBuf, PathBuf) {
    if path.is_dir() {
        (path.join(MANIFEST_FILE), path.to_path_buf())
    } else {
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        (path.to_path_buf(), dir)
    }
}

/// Reads, validates, and normalizes a corpus. `path` is either the corpus
/// directory or its `manifest.json`.
pub fn ingest_corpus(path: impl AsRef<Path>) -> Result<CorpusIndex> {
    let (manifest_path, dir) = manifest_location(path.as_ref());
    let manifest: Manifest = serde_json::from_str(&read_text(&manifest_path)?)
        .map_err(|e| CimError::Format(format!("{}: {e}", manifest_path.display())))?;
    if manifest.version != crate::CORPUS_FORMAT_VERSION {
        return Err(CimError::Format(format!(
            "unsupported manifest version {}",
            manifest.version
        )));
    }

    let ids: Vec<String> = read_text(&dir.join(&manifest.ids))?
        .lines()
        .map(|l| l.strip_suffix('\r').unwrap_or(l).to_owned())
        .collect();
    check_count("ids", manifest.count, ids.len())?;

    let images = vecfile::read(dir.join(&manifest.images))?;
    check_vec("images", &manifest, manifest.image_dim, &images)?;
    let texts = vecfile::read(dir.join(&manifest.texts))?;
    check_vec("texts", &manifest, manifest.text_dim, &texts)?;

    let mut labels = vec![None; ids.len()];
    if let Some(name) = &manifest.labels {
        let rows: HashMap<&str, usize> = ids
            .iter()
            .enumerate()
            .map(|(r, id)| (id.as_str(), r))
            .collect();
        let label_path = dir.join(name);
        for (lineno, line) in read_text(&label_path)?.lines().enumerate() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.is_empty() {
                continue;
            }
            let bad = |why: &str| {
                CimError::Format(format!("{}:{}: {why}", label_path.display(), lineno + 1))
            };
            let (id, value) = line
                .split_once('\t')
                .ok_or_else(|| bad("expected id<TAB>0|1"))?;
            let value = match value {
                "0" => false,
                "1" => true,
                _ => return Err(bad("label must be 0 or 1")),
            };
            let row = *rows
                .get(id)
                .ok_or_else(|| bad(&format!("unknown id {id:?}")))?;
            if labels[row].replace(value).is_some() {
                return Err(bad(&format!("id {id:?} labeled twice")));
            }
        }
    }

    CorpusIndex::from_parts(
        ids,
        images.values,
        manifest.image_dim,
        texts.values,
        manifest.text_dim,
        labels,
    )
}

fn check_count(what: &str, declared: usize, found: usize) -> Result<()> {
    if declared != found {
        return Err(CimError::CountMismatch {
            what: what.into(),
            declared,
            found,
        });
    }
    Ok(())
}

fn check_vec(what: &str, manifest: &Manifest, dim: usize, file: &vecfile::VecFile) -> Result<()> {
    if file.dim != dim {
        return Err(CimError::DimensionMismatch {
            expected: dim,
            found: file.dim,
        });
    }
    check_count(what, manifest.count, file.count)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_rows() -> CorpusBuilder {
        let mut b = CorpusBuilder::new(2, 3);
        b.push("a", &[3.0, 4.0], &[0.0, 0.0, 2.0], Some(true))
            .unwrap();
        b.push("b", &[0.0, 1.0], &[1.0, 0.0, 0.0], None).unwrap();
        b
    }

    #[test]
    fn builder_normalizes() {
        let idx = two_rows().build().unwrap();
        assert_eq!(idx.len(), 2);
        assert_eq!(idx.dims(), (2, 3));
        assert!((idx.image(0)[0] as f64 - 0.6).abs() < 1e-7);
        assert_eq!(idx.text(0), &[0.0, 0.0, 1.0]);
        assert_eq!(idx.row_of("b"), Some(1));
        assert_eq!(idx.label(0), Some(true));
        assert_eq!(idx.record(1).label, None);
        assert_eq!(idx.checksum().len(), 64);
    }

    #[test]
    fn builder_rejects_bad_input() {
        let mut b = CorpusBuilder::new(2, 2);
        assert!(matches!(
            b.push("a", &[1.0], &[1.0, 0.0], None),
            Err(CimError::DimensionMismatch {
                expected: 2,
                found: 1
            })
        ));
        b.push("a", &[1.0, 0.0], &[1.0, 0.0], None).unwrap();
        b.push("a", &[0.0, 1.0], &[1.0, 0.0], None).unwrap();
        assert!(matches!(b.build(), Err(CimError::DuplicateId(id)) if id == "a"));

        let mut b = CorpusBuilder::new(2, 2);
        b.push("a", &[1.0, 0.0], &[1.0, 0.0], None).unwrap();
        b.push("z", &[0.0, 0.0], &[1.0, 0.0], None).unwrap();
        assert!(matches!(
            b.build(),
            Err(CimError::ZeroVector { row: Some(1) })
        ));

        assert!(matches!(
            CorpusBuilder::new(2, 2).build(),
            Err(CimError::EmptyCorpus)
        ));

        let mut b = CorpusBuilder::new(1, 1);
        b.push("has\ttab", &[1.0], &[1.0], None).unwrap();
        assert!(matches!(b.build(), Err(CimError::Format(_))));
    }

    #[test]
    fn checksum_depends_on_content() {
        let a = two_rows().build().unwrap();
        let b = two_rows().build().unwrap();
        assert_eq!(a.checksum(), b.checksum());

        let mut c = CorpusBuilder::new(2, 3);
        c.push("a", &[3.0, 4.0], &[0.0, 0.0, 2.0], Some(false))
            .unwrap();
        c.push("b", &[0.0, 1.0], &[1.0, 0.0, 0.0], None).unwrap();
        assert_ne!(a.checksum(), c.build().unwrap().checksum());
    }

    #[test]
    fn write_then_ingest() {
        let dir = tempfile::tempdir().unwrap();
        let idx = two_rows().build().unwrap();
        idx.write_dir(dir.path()).unwrap();
        let back = ingest_corpus(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.image(0), idx.image(0));
        assert_eq!(back.label(0), Some(true));
        assert_eq!(back.label(1), None);
        // Also accepts the manifest path itself.
        let again = ingest_corpus(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(again.checksum(), back.checksum());
    }
}
