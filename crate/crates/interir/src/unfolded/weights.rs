//! Binary weights container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  "IIRW"        4 bytes
//! version u32          currently 1
//! count  u32           number of tensors
//! per tensor:
//!   name_len u32, name (UTF-8)
//!   rank u32, dims: rank x u32
//!   payload: product(dims) x f64 (rank 0 stores one scalar)
//! ```
//!
//! Round-trips are bit-exact. Model (de)construction maps every parameter
//! to a stable dotted name; loading demands exactly the expected name set.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::unfolded::blocks::{
    ConvsParams, DmumParams, EpBlockParams, LayerNorm, MumParams, PointwiseConv, ResmParams,
};
use crate::unfolded::conv::ExplainableConvParams;
use crate::unfolded::{IpBlockParams, UnfoldedModel};

pub const MAGIC: &[u8; 4] = b"IIRW";
pub const VERSION: u32 = 1;

const MAX_NAME_LEN: usize = 4096;
const MAX_RANK: usize = 4;
const MAX_EXTENT: u32 = 1 << 20;

// Encoding ------------------------------------------------------------------

pub fn encode_entries(entries: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, tensor) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

// Decoding ------------------------------------------------------------------

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::parse(self.pos, format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Decode a container into its named tensors.
pub fn decode_entries(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::parse(0, format!("bad magic {magic:02x?}")));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::parse(4, format!("unsupported version {version}")));
    }
    let count = r.u32("tensor count")? as usize;
    let mut entries = Vec::new();
    for _ in 0..count {
        let name_pos = r.pos;
        let name_len = r.u32("name length")? as usize;
        if name_len > MAX_NAME_LEN {
            return Err(Error::parse(name_pos, format!("name length {name_len} too large")));
        }
        let name_bytes = r.take(name_len, "name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| Error::parse(name_pos + 4, "name is not valid UTF-8"))?
            .to_string();
        let rank_pos = r.pos;
        let rank = r.u32("rank")? as usize;
        if rank > MAX_RANK {
            return Err(Error::parse(rank_pos, format!("rank {rank} exceeds {MAX_RANK}")));
        }
        let mut dims = Vec::with_capacity(rank);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let dim_pos = r.pos;
            let d = r.u32("dimension")?;
            if d == 0 || d > MAX_EXTENT {
                return Err(Error::parse(dim_pos, format!("dimension {d} out of range")));
            }
            dims.push(d as usize);
            numel = numel
                .checked_mul(d as usize)
                .ok_or_else(|| Error::parse(dim_pos, "element count overflows"))?;
        }
        let payload = r.take(numel * 8, "payload")?;
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect();
        entries.push((name, Tensor::new(&dims, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::parse(
            r.pos,
            format!("{} trailing bytes after last tensor", bytes.len() - r.pos),
        ));
    }
    Ok(entries)
}

// Model <-> entries ----------------------------------------------------------

fn push_scalar(out: &mut Vec<(String, Tensor)>, name: String, v: f64) {
    out.push((name, Tensor::scalar(v)));
}

fn push_pointwise(out: &mut Vec<(String, Tensor)>, prefix: &str, p: &PointwiseConv) {
    out.push((format!("{prefix}.weight"), p.weight.clone()));
    out.push((format!("{prefix}.bias"), p.bias.clone()));
}

fn push_ep(out: &mut Vec<(String, Tensor)>, prefix: &str, p: &EpBlockParams) {
    out.push((format!("{prefix}.ln1.gamma"), p.ln1.gamma.clone()));
    out.push((format!("{prefix}.ln1.beta"), p.ln1.beta.clone()));
    push_pointwise(out, &format!("{prefix}.expand1"), &p.expand1);
    out.push((format!("{prefix}.dwconv.weight"), p.dwconv.weight.clone()));
    out.push((format!("{prefix}.dwconv.bias"), p.dwconv.bias.clone()));
    push_scalar(out, format!("{prefix}.dwconv.tau"), p.dwconv.tau);
    push_pointwise(out, &format!("{prefix}.sca"), &p.sca);
    push_pointwise(out, &format!("{prefix}.project1"), &p.project1);
    push_scalar(out, format!("{prefix}.scale1"), p.scale1);
    out.push((format!("{prefix}.ln2.gamma"), p.ln2.gamma.clone()));
    out.push((format!("{prefix}.ln2.beta"), p.ln2.beta.clone()));
    push_pointwise(out, &format!("{prefix}.expand2"), &p.expand2);
    push_pointwise(out, &format!("{prefix}.project2"), &p.project2);
    push_scalar(out, format!("{prefix}.scale2"), p.scale2);
}

fn push_convs(out: &mut Vec<(String, Tensor)>, prefix: &str, p: &ConvsParams) {
    out.push((format!("{prefix}.conv1.weight"), p.conv1_weight.clone()));
    out.push((format!("{prefix}.conv1.bias"), p.conv1_bias.clone()));
    out.push((format!("{prefix}.conv2.weight"), p.conv2_weight.clone()));
    out.push((format!("{prefix}.conv2.bias"), p.conv2_bias.clone()));
}

fn push_resm(out: &mut Vec<(String, Tensor)>, prefix: &str, p: &ResmParams) {
    push_scalar(out, format!("{prefix}.w_kappa"), p.w_kappa);
    push_convs(out, &format!("{prefix}.convs"), &p.convs);
    push_ep(out, &format!("{prefix}.ep_i"), &p.ep_i);
    push_ep(out, &format!("{prefix}.ep_sum"), &p.ep_sum);
    push_ep(out, &format!("{prefix}.ep_gate"), &p.ep_gate);
    push_ep(out, &format!("{prefix}.ep_f"), &p.ep_f);
}

/// Flatten a model into a deterministic named tensor list.
pub fn model_entries(model: &UnfoldedModel) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    push_scalar(&mut out, "meta.n".into(), model.n() as f64);
    push_scalar(&mut out, "meta.channels".into(), model.channels as f64);
    push_scalar(&mut out, "meta.eta".into(), model.eta);
    push_ep(&mut out, "init", &model.init_block);
    for (k, block) in model.ipblocks.iter().enumerate() {
        push_resm(&mut out, &format!("ipblock.{k}.resm"), &block.resm);
        push_ep(&mut out, &format!("ipblock.{k}.dmum.ep_a"), &block.dmum.ep_a);
        push_ep(&mut out, &format!("ipblock.{k}.dmum.ep_b"), &block.dmum.ep_b);
        push_ep(&mut out, &format!("ipblock.{k}.mum.ep"), &block.mum.ep);
        push_convs(&mut out, &format!("ipblock.{k}.mum.convs"), &block.mum.convs);
    }
    push_resm(&mut out, "final_resm", &model.final_resm);
    push_pointwise(&mut out, "out_proj", &model.out_proj);
    out
}

struct Extractor {
    map: BTreeMap<String, Tensor>,
    missing: Vec<String>,
}

impl Extractor {
    fn tensor(&mut self, name: String, shape: &[usize]) -> Result<Tensor> {
        match self.map.remove(&name) {
            Some(t) => {
                if t.shape() != shape {
                    return Err(Error::InvalidArgument(format!(
                        "parameter {name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    )));
                }
                Ok(t)
            }
            None => {
                self.missing.push(name);
                Ok(Tensor::zeros(if shape.is_empty() { &[1] } else { shape })
                    .reshaped(shape)
                    .unwrap_or_else(|_| Tensor::scalar(0.0)))
            }
        }
    }

    fn scalar(&mut self, name: String) -> Result<f64> {
        Ok(self.tensor(name, &[])?.data()[0])
    }

    fn pointwise(&mut self, prefix: &str, cout: usize, cin: usize) -> Result<PointwiseConv> {
        Ok(PointwiseConv {
            weight: self.tensor(format!("{prefix}.weight"), &[cout, cin, 1, 1])?,
            bias: self.tensor(format!("{prefix}.bias"), &[cout])?,
        })
    }

    fn ep(&mut self, prefix: &str, c: usize) -> Result<EpBlockParams> {
        Ok(EpBlockParams {
            ln1: LayerNorm {
                gamma: self.tensor(format!("{prefix}.ln1.gamma"), &[c])?,
                beta: self.tensor(format!("{prefix}.ln1.beta"), &[c])?,
            },
            expand1: self.pointwise(&format!("{prefix}.expand1"), 2 * c, c)?,
            dwconv: ExplainableConvParams {
                weight: self.tensor(format!("{prefix}.dwconv.weight"), &[2 * c, 1, 3, 3])?,
                bias: self.tensor(format!("{prefix}.dwconv.bias"), &[2 * c])?,
                tau: self.scalar(format!("{prefix}.dwconv.tau"))?,
                stride: 1,
                padding: 1,
                groups: 2 * c,
            },
            sca: self.pointwise(&format!("{prefix}.sca"), c, c)?,
            project1: self.pointwise(&format!("{prefix}.project1"), c, c)?,
            scale1: self.scalar(format!("{prefix}.scale1"))?,
            ln2: LayerNorm {
                gamma: self.tensor(format!("{prefix}.ln2.gamma"), &[c])?,
                beta: self.tensor(format!("{prefix}.ln2.beta"), &[c])?,
            },
            expand2: self.pointwise(&format!("{prefix}.expand2"), 2 * c, c)?,
            project2: self.pointwise(&format!("{prefix}.project2"), c, c)?,
            scale2: self.scalar(format!("{prefix}.scale2"))?,
        })
    }

    fn convs(&mut self, prefix: &str, c: usize) -> Result<ConvsParams> {
        Ok(ConvsParams {
            conv1_weight: self.tensor(format!("{prefix}.conv1.weight"), &[c, c, 3, 3])?,
            conv1_bias: self.tensor(format!("{prefix}.conv1.bias"), &[c])?,
            conv2_weight: self.tensor(format!("{prefix}.conv2.weight"), &[c, c, 3, 3])?,
            conv2_bias: self.tensor(format!("{prefix}.conv2.bias"), &[c])?,
        })
    }

    fn resm(&mut self, prefix: &str, c: usize) -> Result<ResmParams> {
        Ok(ResmParams {
            w_kappa: self.scalar(format!("{prefix}.w_kappa"))?,
            convs: self.convs(&format!("{prefix}.convs"), c)?,
            ep_i: self.ep(&format!("{prefix}.ep_i"), c)?,
            ep_sum: self.ep(&format!("{prefix}.ep_sum"), c)?,
            ep_gate: self.ep(&format!("{prefix}.ep_gate"), c)?,
            ep_f: self.ep(&format!("{prefix}.ep_f"), c)?,
        })
    }
}

/// Reassemble a model from named tensors, demanding exactly the expected
/// parameter set for the architecture declared by the `meta.*` scalars.
pub fn model_from_entries(entries: Vec<(String, Tensor)>) -> Result<UnfoldedModel> {
    let mut map = BTreeMap::new();
    for (name, t) in entries {
        if map.insert(name.clone(), t).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate parameter {name}")));
        }
    }
    let mut ex = Extractor {
        map,
        missing: Vec::new(),
    };
    let n = ex.scalar("meta.n".into())? as usize;
    let channels = ex.scalar("meta.channels".into())? as usize;
    let eta = ex.scalar("meta.eta".into())?;
    if !ex.missing.is_empty() {
        return Err(Error::Parameters {
            missing: ex.missing,
            unexpected: vec![],
        });
    }
    if n == 0 || n > 1024 {
        return Err(Error::InvalidArgument(format!("block count {n} out of range")));
    }
    if channels == 0 || channels > 4096 {
        return Err(Error::InvalidArgument(format!("channel count {channels} out of range")));
    }

    let init_block = ex.ep("init", channels)?;
    let mut ipblocks = Vec::with_capacity(n);
    for k in 0..n {
        ipblocks.push(IpBlockParams {
            resm: ex.resm(&format!("ipblock.{k}.resm"), channels)?,
            dmum: DmumParams {
                ep_a: ex.ep(&format!("ipblock.{k}.dmum.ep_a"), 2 * channels)?,
                ep_b: ex.ep(&format!("ipblock.{k}.dmum.ep_b"), 2 * channels)?,
            },
            mum: MumParams {
                ep: ex.ep(&format!("ipblock.{k}.mum.ep"), channels)?,
                convs: ex.convs(&format!("ipblock.{k}.mum.convs"), channels)?,
            },
        });
    }
    let final_resm = ex.resm("final_resm", channels)?;
    let out_proj = ex.pointwise("out_proj", channels, channels)?;

    let unexpected: Vec<String> = ex.map.keys().cloned().collect();
    if !ex.missing.is_empty() || !unexpected.is_empty() {
        return Err(Error::Parameters {
            missing: ex.missing,
            unexpected,
        });
    }

    let model = UnfoldedModel {
        init_block,
        ipblocks,
        final_resm,
        out_proj,
        channels,
        eta,
    };
    model.validate()?;
    Ok(model)
}

pub fn save_weights(model: &UnfoldedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_entries(&model_entries(model))).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<UnfoldedModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_entries(decode_entries(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unfolded::seed_model;

    #[test]
    fn empty_container_is_twelve_bytes() {
        let bytes = encode_entries(&[]);
        assert_eq!(bytes.len(), 12);
        assert_eq!(decode_entries(&bytes).unwrap(), vec![]);
    }

    #[test]
    fn container_roundtrip_is_bit_exact() {
        let entries = vec![
            ("a.scalar".to_string(), Tensor::scalar(-0.125)),
            (
                "b.matrix".to_string(),
                Tensor::new(&[2, 3], vec![1.0, 2.5, -3.0, 0.0, 1e-300, f64::MAX]).unwrap(),
            ),
        ];
        let bytes = encode_entries(&entries);
        let back = decode_entries(&bytes).unwrap();
        assert_eq!(back, entries);
    }

    #[test]
    fn model_roundtrip_is_bitwise_equal() {
        let model = seed_model(2, 8, 42).unwrap();
        let back = model_from_entries(decode_entries(&encode_entries(&model_entries(&model))).unwrap())
            .unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn truncation_and_corruption_are_rejected() {
        let model = seed_model(1, 8, 1).unwrap();
        let bytes = encode_entries(&model_entries(&model));
        for cut in [0, 3, 11, bytes.len() / 2, bytes.len() - 1] {
            match decode_entries(&bytes[..cut]) {
                Err(Error::Parse { .. }) => {}
                other => panic!("cut at {cut}: expected parse error, got {other:?}"),
            }
        }
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        match decode_entries(&bad_magic) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected parse error, got {other:?}"),
        }
        let mut bad_version = bytes.clone();
        bad_version[4] = 9;
        match decode_entries(&bad_version) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(matches!(decode_entries(&trailing), Err(Error::Parse { .. })));
    }

    #[test]
    fn missing_parameter_lists_expectations() {
        let model = seed_model(1, 8, 2).unwrap();
        let mut entries = model_entries(&model);
        let removed = entries.remove(10).0;
        match model_from_entries(entries) {
            Err(Error::Parameters { missing, .. }) => {
                assert!(missing.contains(&removed), "{missing:?} missing {removed}");
            }
            other => panic!("expected parameter error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_parameter_is_rejected() {
        let model = seed_model(1, 8, 3).unwrap();
        let mut entries = model_entries(&model);
        entries.push(("rogue.tensor".into(), Tensor::scalar(1.0)));
        match model_from_entries(entries) {
            Err(Error::Parameters { unexpected, .. }) => {
                assert_eq!(unexpected, vec!["rogue.tensor".to_string()]);
            }
            other => panic!("expected parameter error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_parameters_are_rejected() {
        let model = seed_model(1, 8, 4).unwrap();
        let mut entries = model_entries(&model);
        for (name, t) in entries.iter_mut() {
            if name == "out_proj.weight" {
                t.data_mut()[0] = f64::NAN;
            }
        }
        assert!(model_from_entries(entries).is_err());
    }
}
