//! Binary model checkpoints.
//!
//! Layout (little-endian): magic `CPNSLAB1`, a length-prefixed JSON header
//! (model config and task ranges), the RNG state, then every extractor and
//! the head set as named `f64` matrices. Values are stored bit-exactly.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ExpandableModel, FeatureExtractor, ModelConfig, TaskRange};
use crate::params::ParameterSet;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"CPNSLAB1";

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tasks: Vec<TaskRange>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_params(out: &mut Vec<u8>, ps: &ParameterSet) {
    put_u32(out, ps.len() as u32);
    for (name, p) in ps.iter() {
        put_u32(out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        out.push(u8::from(p.frozen));
        put_u64(out, p.value.rows() as u64);
        put_u64(out, p.value.cols() as u64);
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn params(&mut self) -> Result<ParameterSet> {
        let mut ps = ParameterSet::new();
        for _ in 0..self.u32()? {
            let len = self.u32()? as usize;
            let name = String::from_utf8(self.take(len)?.to_vec())
                .map_err(|_| Error::Format("non-UTF-8 parameter name".into()))?;
            let frozen = self.u8()? != 0;
            let rows = self.u64()? as usize;
            let cols = self.u64()? as usize;
            let count = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Format("parameter size overflow".into()))?;
            let bytes = self.take(count.checked_mul(8).ok_or_else(|| Error::Format("parameter size overflow".into()))?)?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            ps.insert(name.clone(), Tensor::from_vec(rows, cols, data)?);
            ps.get_mut(&name).expect("inserted").frozen = frozen;
        }
        Ok(ps)
    }
}

pub fn to_bytes(model: &ExpandableModel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let header = serde_json::to_vec(&Header {
        config: model.config.clone(),
        tasks: model.tasks.clone(),
    })?;
    put_u32(&mut out, header.len() as u32);
    out.extend_from_slice(&header);
    out.extend_from_slice(&model.rng.get_seed());
    put_u64(&mut out, model.rng.get_stream());
    out.extend_from_slice(&model.rng.get_word_pos().to_le_bytes());
    put_u32(&mut out, model.extractors.len() as u32);
    for e in &model.extractors {
        put_u32(&mut out, e.task_index as u32);
        out.push(u8::from(e.frozen));
        put_u32(&mut out, e.layer_dims.len() as u32);
        for &d in &e.layer_dims {
            put_u64(&mut out, d as u64);
        }
        put_params(&mut out, &e.params);
    }
    put_params(&mut out, &model.heads);
    Ok(out)
}

pub fn from_bytes(buf: &[u8]) -> Result<ExpandableModel> {
    if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let mut r = Reader {
        buf,
        pos: MAGIC.len(),
    };
    let len = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(len)?)?;
    let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    let mut extractors = Vec::new();
    for _ in 0..r.u32()? {
        let task_index = r.u32()? as usize;
        let frozen = r.u8()? != 0;
        let n = r.u32()? as usize;
        let layer_dims = (0..n).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let params = r.params()?;
        extractors.push(FeatureExtractor {
            layer_dims,
            params,
            frozen,
            task_index,
        });
    }
    let heads = r.params()?;
    if r.pos != buf.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    header.config.validate()?;
    if extractors.len() != header.tasks.len() {
        return Err(Error::Format("extractor count does not match task count".into()));
    }
    Ok(ExpandableModel {
        config: header.config,
        extractors,
        heads,
        tasks: header.tasks,
        rng,
    })
}

pub fn save(path: impl AsRef<Path>, model: &ExpandableModel) -> Result<()> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ExpandableModel> {
    from_bytes(&fs::read(path)?)
}
