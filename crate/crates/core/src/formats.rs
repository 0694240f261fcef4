//! On-disk formats: latent, index and pHash containers, trace CSV, and the
//! JSON documents that point at them.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::denoiser::{GaussianMixtureModel, MixtureComponent};
use crate::error::{Error, Result};
use crate::latent::Latent;
use crate::reference::VectorIndex;
use crate::spatial::{AttentionStack, AttentionTensor};
use crate::window::SimilarityTrace;

pub const LATENT_MAGIC: &[u8; 8] = b"CAPLAT1\0";
pub const INDEX_MAGIC: &[u8; 8] = b"CAPIDX1\0";
pub const PHASH_MAGIC: &[u8; 8] = b"CAPPH1\0\0";

/// Byte cursor that fails with the container's name instead of panicking.
struct Reader<'a> {
    format: &'static str,
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::format(
                self.format,
                format!("needs {n} more bytes, {} left", self.bytes.len()),
            ));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn magic(&mut self, magic: &[u8; 8]) -> Result<()> {
        if self.take(8)? != magic {
            return Err(Error::format(self.format, "bad magic"));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    /// Checks the remaining length before allocating.
    fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let bytes = count
            .checked_mul(4)
            .ok_or_else(|| Error::format(self.format, "payload size overflows"))?;
        if self.bytes.len() != bytes {
            return Err(Error::format(
                self.format,
                format!("payload is {} bytes, header implies {bytes}", self.bytes.len()),
            ));
        }
        let data = self
            .take(bytes)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(data)
    }
}

pub fn encode_latent(latent: &Latent) -> Vec<u8> {
    let (c, h, w) = latent.shape();
    let mut out = Vec::with_capacity(20 + 4 * latent.len());
    out.extend_from_slice(LATENT_MAGIC);
    for d in [c, h, w] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in latent.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_latent(bytes: &[u8]) -> Result<Latent> {
    let mut r = Reader { format: "CAPLAT1", bytes };
    r.magic(LATENT_MAGIC)?;
    let (c, h, w) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let count = c
        .checked_mul(h)
        .and_then(|n| n.checked_mul(w))
        .ok_or_else(|| Error::format("CAPLAT1", "dimensions overflow"))?;
    let data = r.f32s(count)?;
    Latent::new(c, h, w, data.into_iter().map(f64::from).collect())
        .map_err(|e| Error::format("CAPLAT1", e.to_string()))
}

pub fn encode_index(index: &VectorIndex) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 4 * index.rows().len());
    out.extend_from_slice(INDEX_MAGIC);
    out.extend_from_slice(&(index.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(index.len() as u64).to_le_bytes());
    for &v in index.rows() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_index(bytes: &[u8]) -> Result<VectorIndex> {
    let mut r = Reader { format: "CAPIDX1", bytes };
    r.magic(INDEX_MAGIC)?;
    let dim = r.u32()? as usize;
    let count = usize::try_from(r.u64()?).map_err(|_| Error::format("CAPIDX1", "count too large"))?;
    if dim == 0 || count == 0 {
        return Err(Error::format("CAPIDX1", "empty index"));
    }
    let total = dim
        .checked_mul(count)
        .ok_or_else(|| Error::format("CAPIDX1", "dimensions overflow"))?;
    let rows = r.f32s(total)?;
    VectorIndex::from_rows(dim, rows).map_err(|e| Error::format("CAPIDX1", e.to_string()))
}

pub fn encode_phash_corpus(hashes: &[u64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * hashes.len());
    out.extend_from_slice(PHASH_MAGIC);
    out.extend_from_slice(&(hashes.len() as u64).to_le_bytes());
    for h in hashes {
        out.extend_from_slice(&h.to_le_bytes());
    }
    out
}

pub fn decode_phash_corpus(bytes: &[u8]) -> Result<Vec<u64>> {
    let mut r = Reader { format: "CAPPH1", bytes };
    r.magic(PHASH_MAGIC)?;
    let count = r.u64()?;
    let expected = count.checked_mul(8).ok_or_else(|| Error::format("CAPPH1", "count overflows"))?;
    if r.bytes.len() as u64 != expected {
        return Err(Error::format(
            "CAPPH1",
            format!("payload is {} bytes, header implies {expected}", r.bytes.len()),
        ));
    }
    (0..count).map(|_| r.u64()).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRow {
    step: usize,
    score: f64,
}

/// `step,score` rows in denoising order.
pub fn trace_to_csv(trace: &SimilarityTrace) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (&step, &score) in trace.timesteps().iter().zip(trace.values()) {
        w.serialize(TraceRow { step, score })?;
    }
    let bytes = w.into_inner().map_err(|e| Error::input(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
}

pub fn parse_trace_csv(text: &str) -> Result<SimilarityTrace> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut steps = Vec::new();
    let mut values = Vec::new();
    for row in r.deserialize::<TraceRow>() {
        let row = row?;
        steps.push(row.step);
        values.push(row.score);
    }
    SimilarityTrace::new(steps, values)
}

/// Mixture description; latent files are relative to the document's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmDoc {
    pub components: Vec<GmComponentDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmComponentDoc {
    pub mean_file: PathBuf,
    pub variance: f64,
    pub weight: f64,
}

pub fn parse_gm_doc(text: &str) -> Result<GmDoc> {
    Ok(serde_json::from_str(text)?)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn parent(path: &Path) -> &Path {
    path.parent().unwrap_or_else(|| Path::new("."))
}

pub fn load_gm(path: &Path) -> Result<GaussianMixtureModel> {
    let doc = parse_gm_doc(&read_text(path)?)?;
    let base = parent(path);
    let components = doc
        .components
        .iter()
        .map(|c| {
            Ok(MixtureComponent {
                mean: read_latent(&resolve(base, &c.mean_file))?,
                variance: c.variance,
                weight: c.weight,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    GaussianMixtureModel::new(components)
}

/// Writes each mean as `<stem>_<k>.caplat` beside the JSON document.
pub fn save_gm(path: &Path, gm: &GaussianMixtureModel) -> Result<()> {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("gm");
    let mut doc = GmDoc { components: Vec::new() };
    for (k, c) in gm.components().iter().enumerate() {
        let name = PathBuf::from(format!("{stem}_{k}.caplat"));
        write_latent(&parent(path).join(&name), &c.mean)?;
        doc.components.push(GmComponentDoc {
            mean_file: name,
            variance: c.variance,
            weight: c.weight,
        });
    }
    write_atomic(path, serde_json::to_string_pretty(&doc)?.as_bytes())
}

/// Prompt attention: one CAPLAT1 file per entry shaped `heads × queries × tokens`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionManifest {
    pub words: Vec<String>,
    pub token_words: Vec<Option<usize>>,
    pub concept_tokens: Vec<usize>,
    pub entries: Vec<PathBuf>,
}

pub fn parse_attention_manifest(text: &str) -> Result<AttentionManifest> {
    Ok(serde_json::from_str(text)?)
}

pub fn load_attention(path: &Path) -> Result<(AttentionStack, Vec<String>)> {
    let manifest = parse_attention_manifest(&read_text(path)?)?;
    let base = parent(path);
    let entries = manifest
        .entries
        .iter()
        .map(|p| AttentionTensor::from_latent(&read_latent(&resolve(base, p))?))
        .collect::<Result<Vec<_>>>()?;
    if let Some(w) = manifest.token_words.iter().flatten().find(|&&w| w >= manifest.words.len()) {
        return Err(Error::input(format!("token maps to word {w} beyond {} words", manifest.words.len())));
    }
    let stack = AttentionStack::new(entries, manifest.token_words, manifest.concept_tokens)?;
    Ok((stack, manifest.words))
}

pub fn save_attention(path: &Path, stack: &AttentionStack, words: &[String]) -> Result<()> {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("attn");
    let mut entries = Vec::new();
    for (i, e) in stack.entries().iter().enumerate() {
        let name = PathBuf::from(format!("{stem}_{i}.caplat"));
        write_latent(&parent(path).join(&name), &e.to_latent())?;
        entries.push(name);
    }
    let manifest = AttentionManifest {
        words: words.to_vec(),
        token_words: stack.token_words().to_vec(),
        concept_tokens: stack.concept_tokens().to_vec(),
        entries,
    };
    write_atomic(path, serde_json::to_string_pretty(&manifest)?.as_bytes())
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_latent(path: &Path) -> Result<Latent> {
    decode_latent(&read_bytes(path)?)
}

pub fn write_latent(path: &Path, latent: &Latent) -> Result<()> {
    write_atomic(path, &encode_latent(latent))
}

/// Writes to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = parent(path);
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
