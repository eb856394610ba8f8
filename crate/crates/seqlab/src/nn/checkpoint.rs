//! Checkpoint container for trained models.
//!
//! Layout (all integers little-endian):
//!   magic "SQMV" | format version u32 | cell kind u8 | output mode u8 |
//!   input_dim u32 | hidden_dim u32 | output_dim u32 | param count u32 |
//!   then per parameter: name length u32, name bytes (UTF-8),
//!   rows u32, cols u32, rows·cols f64 values.

use crate::error::{Error, Result};
use crate::ndcore::Matrix2;
use crate::nn::model::{CellKind, OutputMode, SequenceModel};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"SQMV";
const FORMAT_VERSION: u32 = 1;

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut buf = [0u8; 1];
    r.read_exact(&mut buf)?;
    Ok(buf[0])
}

pub fn save_checkpoint(model: &SequenceModel, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    write_u32(&mut w, FORMAT_VERSION)?;
    let kind = match model.cell_kind() {
        CellKind::Rnn => 0u8,
        CellKind::Lstm => 1u8,
    };
    let mode = match model.output_mode {
        OutputMode::PerStep => 0u8,
        OutputMode::FinalOnly => 1u8,
    };
    w.write_all(&[kind, mode])?;
    write_u32(&mut w, model.input_dim as u32)?;
    write_u32(&mut w, model.hidden_dim as u32)?;
    write_u32(&mut w, model.output_dim as u32)?;
    let params = model.named_params();
    write_u32(&mut w, params.len() as u32)?;
    for (name, p) in params {
        let bytes = name.as_bytes();
        write_u32(&mut w, bytes.len() as u32)?;
        w.write_all(bytes)?;
        write_u32(&mut w, p.rows() as u32)?;
        write_u32(&mut w, p.cols() as u32)?;
        for &v in p.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<SequenceModel> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::data(format!("{}: truncated checkpoint header", path.display())))?;
    if &magic != MAGIC {
        return Err(Error::data(format!(
            "{}: bad checkpoint magic {magic:?}",
            path.display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::data(format!(
            "{}: unsupported checkpoint format version {version}",
            path.display()
        )));
    }
    let kind = match read_u8(&mut r)? {
        0 => CellKind::Rnn,
        1 => CellKind::Lstm,
        k => return Err(Error::data(format!("unknown cell kind byte {k}"))),
    };
    let mode = match read_u8(&mut r)? {
        0 => OutputMode::PerStep,
        1 => OutputMode::FinalOnly,
        m => return Err(Error::data(format!("unknown output mode byte {m}"))),
    };
    let input_dim = read_u32(&mut r)? as usize;
    let hidden_dim = read_u32(&mut r)? as usize;
    let output_dim = read_u32(&mut r)? as usize;
    let count = read_u32(&mut r)? as usize;

    let mut by_name: BTreeMap<String, Matrix2> = BTreeMap::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > 1024 {
            return Err(Error::data(format!(
                "parameter name length {name_len} is implausible"
            )));
        }
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::data("parameter name is not UTF-8".to_string()))?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let mut data = vec![0.0f64; rows * cols];
        let mut buf = [0u8; 8];
        for v in &mut data {
            r.read_exact(&mut buf).map_err(|_| {
                Error::data(format!("{}: truncated parameter data", path.display()))
            })?;
            *v = f64::from_le_bytes(buf);
        }
        by_name.insert(name, Matrix2::new(rows, cols, data)?);
    }

    // Rebuild through a template so shapes and the exact name set are
    // both enforced.
    let mut rng = crate::ndcore::RngStream::new(0);
    let mut model = crate::nn::model::init_model(
        &mut rng, kind, input_dim, hidden_dim, output_dim, mode,
    )?;
    let names: Vec<String> = model.named_params().iter().map(|(n, _)| n.clone()).collect();
    if names.len() != by_name.len() {
        return Err(Error::data(format!(
            "checkpoint has {} parameters, {kind:?} model needs {}",
            by_name.len(),
            names.len()
        )));
    }
    for (name, slot) in names.iter().zip(model.param_vec_mut()) {
        let stored = by_name
            .remove(name)
            .ok_or_else(|| Error::data(format!("checkpoint is missing parameter {name}")))?;
        if stored.shape() != slot.shape() {
            return Err(Error::data(format!(
                "parameter {name} has shape {:?}, expected {:?}",
                stored.shape(),
                slot.shape()
            )));
        }
        *slot = stored;
    }
    Ok(model)
}

/// Byte-serialize just the parameter values in their canonical order;
/// used to fingerprint models cheaply in reports.
pub fn param_digest(model: &SequenceModel) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    let mut mix = |byte: u8| {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    };
    for p in model.param_vec() {
        for &v in p.as_slice() {
            for b in v.to_le_bytes() {
                mix(b);
            }
        }
    }
    hash
}
