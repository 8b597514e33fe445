//! Model file: 8-byte magic, little-endian u64 header length, JSON header,
//! then every tensor as little-endian f32 in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rationale_nn::Parameterized;
use serde::{Deserialize, Serialize};

use super::{RationaleModel, TrainConfig};
use crate::corpus::{Embeddings, Vocab};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"RATMDL01";

#[derive(Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    /// Vocabulary words after the reserved pad/unk entries.
    vocab: Vec<String>,
    tensors: Vec<TensorInfo>,
}

fn write_f32s(w: &mut impl Write, a: &Array2<f32>) -> std::io::Result<()> {
    for &v in a.iter() {
        w.write_f32::<LittleEndian>(v)?;
    }
    Ok(())
}

pub fn save_checkpoint(model: &RationaleModel, path: &Path) -> Result<()> {
    let matrix = &model.embeddings.matrix;
    let mut infos = vec![TensorInfo {
        name: "embeddings".into(),
        rows: matrix.nrows(),
        cols: matrix.ncols(),
    }];
    model.net.visit("", &mut |name, p| {
        infos.push(TensorInfo {
            name: name.to_string(),
            rows: p.value.nrows(),
            cols: p.value.ncols(),
        })
    });
    let header = Header {
        config: model.config.clone(),
        vocab: model.embeddings.vocab.words().to_vec(),
        tensors: infos,
    };
    let header = serde_json::to_vec(&header)?;
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(MAGIC).map_err(io)?;
    w.write_u64::<LittleEndian>(header.len() as u64).map_err(io)?;
    w.write_all(&header).map_err(io)?;
    write_f32s(&mut w, matrix).map_err(io)?;
    let mut status = Ok(());
    model.net.visit("", &mut |_, p| {
        if status.is_ok() {
            status = write_f32s(&mut w, &p.value);
        }
    });
    status.map_err(io)?;
    w.flush().map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<RationaleModel> {
    let io = |e| Error::io(path, e);
    let bad = |msg: String| Error::load(path, 0, msg);
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(bad("not a rationale model file".into()));
    }
    let len = r.read_u64::<LittleEndian>().map_err(io)? as usize;
    let mut header = vec![0u8; len];
    r.read_exact(&mut header).map_err(io)?;
    let header: Header = serde_json::from_slice(&header).map_err(|e| bad(format!("header: {e}")))?;
    header.config.validate()?;

    let mut read_tensor = |info: &TensorInfo| -> Result<Array2<f32>> {
        let mut data = vec![0f32; info.rows * info.cols];
        r.read_f32_into::<LittleEndian>(&mut data)
            .map_err(|e| bad(format!("tensor {}: {e}", info.name)))?;
        Ok(Array2::from_shape_vec((info.rows, info.cols), data).expect("shape matches length"))
    };

    let mut infos = header.tensors.iter();
    let emb_info = infos.next().filter(|i| i.name == "embeddings").ok_or_else(|| bad("missing embeddings".into()))?;
    let matrix = read_tensor(emb_info)?;
    let embeddings = Embeddings::from_parts(Vocab::from_words(header.vocab), matrix)?;

    let mut model = RationaleModel::new(header.config, embeddings, &mut ChaCha8Rng::seed_from_u64(0));
    let mut loaded = std::collections::BTreeMap::new();
    for info in infos {
        loaded.insert(info.name.clone(), read_tensor(info)?);
    }
    let mut problems = Vec::new();
    model.net.visit_mut("", &mut |name, p| match loaded.remove(name) {
        Some(v) if v.dim() == p.value.dim() => p.value = v,
        Some(v) => problems.push(format!("{name}: shape {:?}, expected {:?}", v.dim(), p.value.dim())),
        None => problems.push(format!("{name}: missing")),
    });
    problems.extend(loaded.keys().map(|k| format!("{k}: unexpected")));
    if !problems.is_empty() {
        return Err(bad(problems.join("; ")));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(io)?;
    if !rest.is_empty() {
        return Err(bad(format!("{} trailing bytes", rest.len())));
    }
    Ok(model)
}
