//! Model checkpoints: little-endian header, then named f32 tensor records.
//!
//! ```text
//! "VPC1" u32 version
//! u32 d, heads, depth, L, T, N, ff, ablation_bits
//! u64 optimizer_step
//! u32 record_count, records...
//! ```
//!
//! Every parameter and buffer is stored under its own name; trainable
//! parameters additionally carry `adam.m/<name>` and `adam.v/<name>`.

use std::collections::HashMap;
use std::path::Path;

use autodiff::records::{OffsetReader, Record};
use autodiff::Scalar;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, PlannerModel};
use crate::persist::{read_file, write_atomic};
use crate::scene::Ablation;

pub const MAGIC: &[u8; 4] = b"VPC1";
pub const VERSION: u32 = 1;

const MOMENT_M: &str = "adam.m/";
const MOMENT_V: &str = "adam.v/";

#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub model: PlannerModel<T>,
    /// Size of the vocabulary the model was trained against.
    pub vocab_len: usize,
}

fn ablation_bits(a: &Ablation) -> u32 {
    a.bits()
        .iter()
        .enumerate()
        .fold(0, |acc, (i, &b)| acc | (u32::from(b) << i))
}

pub fn checkpoint_bytes<T: Scalar>(model: &PlannerModel<T>, vocab_len: usize) -> Vec<u8> {
    let c = &model.config;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        c.dim as u32,
        c.heads as u32,
        c.depth as u32,
        c.bands as u32,
        c.horizon as u32,
        vocab_len as u32,
        c.ff as u32,
        ablation_bits(&model.ablation),
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&model.store.step.to_le_bytes());
    let mut records = Vec::new();
    for e in model.store.entries() {
        records.push(Record::from_tensor(&e.name, &e.value));
        if e.trainable {
            records.push(Record::from_tensor(&format!("{MOMENT_M}{}", e.name), &e.m));
            records.push(Record::from_tensor(&format!("{MOMENT_V}{}", e.name), &e.v));
        }
    }
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in &records {
        r.write(&mut out).expect("writing to a Vec cannot fail");
    }
    out
}

fn format_err(offset: u64, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

pub fn checkpoint_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = OffsetReader::new(bytes);
    if &r.bytes::<4>()? != MAGIC {
        return Err(format_err(0, "bad checkpoint magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format_err(4, format!("unsupported checkpoint version {version}")));
    }
    let mut h = [0usize; 8];
    for v in &mut h {
        *v = r.u32()? as usize;
    }
    let [dim, heads, depth, bands, horizon, vocab_len, ff, abl] = h;
    if abl >= 1 << 5 {
        return Err(format_err(r.offset - 4, format!("invalid ablation bits {abl:#x}")));
    }
    let config = ModelConfig {
        dim,
        heads,
        depth,
        ff,
        horizon,
        bands,
    };
    config
        .validate()
        .map_err(|e| format_err(8, format!("invalid model config: {e}")))?;
    let step = u64::from_le_bytes(r.bytes::<8>()?);
    let count = r.u32()? as usize;
    let mut records = HashMap::with_capacity(count);
    for _ in 0..count {
        let start = r.offset;
        let rec = r.record()?;
        if records.insert(rec.name.clone(), (start, rec)).is_some() {
            return Err(format_err(start, "duplicate record"));
        }
    }
    if !r.at_eof()? {
        return Err(format_err(r.offset, "trailing bytes after records"));
    }

    let bits = std::array::from_fn(|i| abl & (1 << i) != 0);
    let mut model = PlannerModel::<T>::new(config, 0)?.with_ablation(Ablation::from_bits(bits));
    model.store.step = step;
    let ids: Vec<_> = model.store.ids().collect();
    let mut used = 0;
    for id in ids {
        let entry = model.store.entry_mut(id);
        let mut take = |name: String, shape: &[usize]| -> Result<autodiff::Tensor<T>> {
            let (off, rec) = records
                .get(&name)
                .ok_or_else(|| format_err(bytes.len() as u64, format!("missing record `{name}`")))?;
            if rec.shape != shape {
                return Err(format_err(
                    *off,
                    format!("record `{name}` has shape {:?}, expected {shape:?}", rec.shape),
                ));
            }
            used += 1;
            Ok(rec.to_tensor())
        };
        let shape = entry.value.shape().to_vec();
        entry.value = take(entry.name.clone(), &shape)?;
        if entry.trainable {
            entry.m = take(format!("{MOMENT_M}{}", entry.name), &shape)?;
            entry.v = take(format!("{MOMENT_V}{}", entry.name), &shape)?;
        }
    }
    if used != records.len() {
        let known: std::collections::HashSet<&str> = model.store.entries().iter().map(|e| e.name.as_str()).collect();
        let (off, rec) = records
            .values()
            .filter(|(_, rec)| {
                let base = rec
                    .name
                    .strip_prefix(MOMENT_M)
                    .or_else(|| rec.name.strip_prefix(MOMENT_V))
                    .unwrap_or(&rec.name);
                !known.contains(base)
            })
            .min_by_key(|(off, _)| *off)
            .ok_or_else(|| format_err(0, "unexpected optimizer record"))?;
        return Err(format_err(*off, format!("unknown record `{}`", rec.name)));
    }
    Ok(Checkpoint { model, vocab_len })
}

pub fn save_checkpoint<T: Scalar>(model: &PlannerModel<T>, vocab_len: usize, path: &Path) -> Result<()> {
    write_atomic(path, &checkpoint_bytes(model, vocab_len))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    checkpoint_from_bytes(&read_file(path)?).map_err(|e| match e {
        Error::Format { offset, message } => Error::Format {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}
