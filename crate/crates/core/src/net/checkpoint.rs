//! Checkpoint file: `MPCK`, version, normalization statistics, then named
//! 32-bit tensors in sorted name order.
//!
//! Record prefixes: none for live parameters, `ema/` for the averaged shadow,
//! `meta/` for the network configuration and anything else (optimizer state,
//! training counters) kept verbatim in [`Checkpoint::extra`].

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::model::Model;
use super::NetConfig;
use crate::error::{Error, Result};
use crate::motion::{NormStats, DOF, N_JOINTS};
use crate::skeletal::Reach;
use crate::tensor::{ParamStore, Tensor};

const MAGIC: &[u8; 4] = b"MPCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub norm: NormStats,
    pub model: Model<f32>,
    pub ema: Option<ParamStore<f32>>,
    /// Additional named tensors, e.g. `opt/m/<param>`.
    pub extra: BTreeMap<String, Tensor<f32>>,
}

impl Checkpoint {
    /// The parameters to run inference with: the averaged shadow when present.
    pub fn inference_model(&self) -> Model<f32> {
        let mut m = self.model.clone();
        if let Some(ema) = &self.ema {
            m.params = ema.clone();
        }
        m
    }
}

fn meta_records(c: &NetConfig) -> Vec<(String, Vec<f32>)> {
    let f = |v: &[usize]| v.iter().map(|&x| x as f32).collect::<Vec<_>>();
    vec![
        ("meta/base_channels".into(), f(&[c.base_channels])),
        ("meta/reach".into(), f(&c.reach.0)),
        ("meta/encoder_kt".into(), f(&c.encoder_kt)),
        ("meta/residual_kt".into(), f(&[c.residual_kt])),
        ("meta/decoder_kt".into(), f(&c.decoder_kt)),
        (
            "meta/atn_per_part".into(),
            f(&[usize::from(c.atn_per_part)]),
        ),
        // 16-bit chunks of the f64 bit pattern are exact in f32
        (
            "meta/adain_gen_scale".into(),
            (0..4)
                .map(|i| ((c.adain_gen_scale.to_bits() >> (16 * i)) & 0xffff) as f32)
                .collect(),
        ),
    ]
}

fn config_from_meta(recs: &BTreeMap<String, Tensor<f32>>) -> Result<NetConfig> {
    let get = |k: &str| -> Result<Vec<usize>> {
        let t = recs
            .get(&format!("meta/{k}"))
            .ok_or_else(|| Error::Format(format!("checkpoint lacks meta/{k}")))?;
        Ok(t.data().iter().map(|&x| x as usize).collect())
    };
    let arr3 = |v: Vec<usize>, k: &str| -> Result<[usize; 3]> {
        v.try_into()
            .map_err(|_| Error::Format(format!("meta/{k} must hold 3 values")))
    };
    Ok(NetConfig {
        base_channels: get("base_channels")?[0],
        reach: Reach(arr3(get("reach")?, "reach")?),
        encoder_kt: arr3(get("encoder_kt")?, "encoder_kt")?,
        residual_kt: get("residual_kt")?[0],
        decoder_kt: arr3(get("decoder_kt")?, "decoder_kt")?,
        atn_per_part: get("atn_per_part")?[0] != 0,
        adain_gen_scale: recs
            .get("meta/adain_gen_scale")
            .map(|t| match t.data() {
                [v] => *v as f64,
                d => f64::from_bits(
                    d.iter()
                        .enumerate()
                        .map(|(i, &x)| (x as u64) << (16 * i))
                        .sum(),
                ),
            })
            .unwrap_or(NetConfig::default().adain_gen_scale),
    })
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut recs: BTreeMap<String, (Vec<usize>, Vec<f32>)> = BTreeMap::new();
    for (_, p) in ck.model.params.iter() {
        recs.insert(
            p.name.clone(),
            (p.tensor.shape().to_vec(), p.tensor.data().to_vec()),
        );
    }
    if let Some(ema) = &ck.ema {
        for (_, p) in ema.iter() {
            recs.insert(
                format!("ema/{}", p.name),
                (p.tensor.shape().to_vec(), p.tensor.data().to_vec()),
            );
        }
    }
    for (name, vals) in meta_records(&ck.model.config) {
        recs.insert(name, (vec![vals.len()], vals));
    }
    for (name, t) in &ck.extra {
        recs.insert(name.clone(), (t.shape().to_vec(), t.data().to_vec()));
    }

    let mut buf = Vec::new();
    let u32le = |buf: &mut Vec<u8>, v: usize| buf.extend_from_slice(&(v as u32).to_le_bytes());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    u32le(&mut buf, N_JOINTS * DOF);
    for v in ck.norm.mean.iter().chain(&ck.norm.std) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    u32le(&mut buf, recs.len());
    for (name, (shape, data)) in &recs {
        u32le(&mut buf, name.len());
        buf.extend_from_slice(name.as_bytes());
        u32le(&mut buf, shape.len());
        for &d in shape {
            u32le(&mut buf, d);
        }
        for x in data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "checkpoint truncated at byte {}",
                self.at
            )));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let n = r.u32()?;
    if n != N_JOINTS * DOF {
        return Err(Error::Format(format!(
            "normalization block has {n} entries"
        )));
    }
    let mean = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let std = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let count = r.u32()?;
    let mut recs = BTreeMap::new();
    for _ in 0..count {
        let len = r.u32()?;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Format("record name is not UTF-8".into()))?;
        let nd = r.u32()?;
        let shape = (0..nd).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let data = r
            .take(numel * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        recs.insert(name, Tensor::new(&shape, data)?);
    }
    if r.at != bytes.len() {
        return Err(Error::Format(
            "trailing bytes after checkpoint records".into(),
        ));
    }

    let config = config_from_meta(&recs)?;
    let mut model = Model::<f32>::new(config, 0)?;
    let mut live = ParamStore::new();
    let mut ema = ParamStore::new();
    let mut extra = BTreeMap::new();
    for (name, t) in recs {
        if let Some(rest) = name.strip_prefix("ema/") {
            ema.add(rest, t)?;
        } else if name.starts_with("meta/") {
        } else if model.params.id(&name).is_some() {
            live.add(name, t)?;
        } else {
            extra.insert(name, t);
        }
    }
    model.params.load_matching(&live)?;
    let ema = if ema.is_empty() {
        None
    } else {
        let mut shadow = model.params.clone();
        shadow.load_matching(&ema)?;
        Some(shadow)
    };
    Ok(Checkpoint {
        norm: NormStats { mean, std },
        model,
        ema,
        extra,
    })
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    fs::write(path, encode_checkpoint(ck))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
