//! Embedding checkpoint I/O.
//!
//! Layout: magic `KGRC`, u32 version, u32 dim, u32 entity count, u32 relation
//! count, u64 seed, then the four tables (ent_re, ent_im, rel_re, rel_im) as
//! row-major little-endian f32. The entity and relation vocabularies are
//! written next to the checkpoint as `entities.tsv` / `relations.tsv`
//! (`id<TAB>label`), so a checkpoint directory is self-describing.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kge::ComplExModel;

const MAGIC: &[u8; 4] = b"KGRC";
const VERSION: u32 = 1;

pub fn save_checkpoint(
    path: &Path,
    model: &ComplExModel,
    entity_labels: &[String],
    relation_labels: &[String],
) -> Result<()> {
    if entity_labels.len() != model.n_entities() || relation_labels.len() != model.n_relations() {
        return Err(Error::Data(
            "vocabulary sizes do not match the model tables".into(),
        ));
    }
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(model.dim() as u32).to_le_bytes());
    bytes.extend_from_slice(&(model.n_entities() as u32).to_le_bytes());
    bytes.extend_from_slice(&(model.n_relations() as u32).to_le_bytes());
    bytes.extend_from_slice(&model.seed().to_le_bytes());
    for table in [&model.ent_re, &model.ent_im, &model.rel_re, &model.rel_im] {
        for &v in table.iter() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))?;

    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let write_vocab = |name: &str, labels: &[String]| -> Result<()> {
        let mut out = String::new();
        for (id, label) in labels.iter().enumerate() {
            out.push_str(&format!("{id}\t{label}\n"));
        }
        let p = dir.join(name);
        fs::write(&p, out).map_err(|e| Error::io(p.display().to_string(), e))
    };
    write_vocab("entities.tsv", entity_labels)?;
    write_vocab("relations.tsv", relation_labels)
}

pub fn load_checkpoint(path: &Path) -> Result<(ComplExModel, Vec<String>, Vec<String>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let path_str = path.display().to_string();
    let bad = |msg: &str| Error::Data(format!("{path_str}: {msg}"));

    if bytes.len() < 28 || &bytes[0..4] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let dim = u32_at(8) as usize;
    let n_entities = u32_at(12) as usize;
    let n_relations = u32_at(16) as usize;
    let seed = u64::from_le_bytes(bytes[20..28].try_into().unwrap());

    let floats = 2 * (n_entities + n_relations) * dim;
    if bytes.len() != 28 + floats * 4 {
        return Err(bad("truncated or oversized checkpoint payload"));
    }
    let mut offset = 28;
    let mut read_table = |n: usize| -> Vec<f64> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let v = f32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap());
            out.push(v as f64);
            offset += 4;
        }
        out
    };
    let ent_re = read_table(n_entities * dim);
    let ent_im = read_table(n_entities * dim);
    let rel_re = read_table(n_relations * dim);
    let rel_im = read_table(n_relations * dim);
    let model = ComplExModel::from_parts(
        dim, n_entities, n_relations, seed, ent_re, ent_im, rel_re, rel_im,
    )?;

    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let entity_labels = read_vocab(&dir.join("entities.tsv"), n_entities)?;
    let relation_labels = read_vocab(&dir.join("relations.tsv"), n_relations)?;
    Ok((model, entity_labels, relation_labels))
}

fn read_vocab(path: &Path, expected: usize) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let path_str = path.display().to_string();
    let mut labels = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let Some((id, label)) = raw.split_once('\t') else {
            return Err(Error::Parse {
                path: path_str.clone(),
                line: lineno,
                msg: "expected id<TAB>label".into(),
            });
        };
        let id: usize = id.trim().parse().map_err(|_| Error::Parse {
            path: path_str.clone(),
            line: lineno,
            msg: format!("bad id {id:?}"),
        })?;
        if id != labels.len() {
            return Err(Error::Parse {
                path: path_str.clone(),
                line: lineno,
                msg: format!("ids must be contiguous from 0, got {id}"),
            });
        }
        labels.push(label.to_string());
    }
    if labels.len() != expected {
        return Err(Error::Data(format!(
            "{path_str}: {} labels but checkpoint declares {expected}",
            labels.len()
        )));
    }
    Ok(labels)
}
