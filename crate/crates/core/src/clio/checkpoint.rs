//! `SVCK` tensor checkpoints.
//!
//! Layout, little-endian throughout: magic `SVCK`, `u32` version, `u32`
//! tensor count, then per tensor a `u32` name length, the UTF-8 name, a `u32`
//! rank, `rank` `u32` dims, a dtype byte (0 = float32) and the payload.

use std::fs;
use std::path::Path;

use crate::backbone::ViTConfig;
use crate::error::{Error, Result};
use crate::model::SimVos;
use crate::numkern::Tensor;

pub const MAGIC: &[u8; 4] = b"SVCK";
pub const VERSION: u32 = 1;
/// Name of the tensor that carries the model geometry.
pub const CONFIG_TENSOR: &str = "meta.vit_config";

const DTYPE_F32: u8 = 0;

pub fn encode(tensors: &[(String, &Tensor<f32>)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(tensors.len()).map_err(|_| Error::Checkpoint("too many tensors".into()))?.to_le_bytes());
    for (name, t) in tensors {
        let len = u32::try_from(name.len()).map_err(|_| Error::Checkpoint(format!("name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.dims() {
            let d = u32::try_from(d).map_err(|_| Error::Checkpoint(format!("{name}: dim {d} too large")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.push(DTYPE_F32);
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse { offset: self.bytes.len(), msg: format!("truncated checkpoint reading {what}") });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Parse { offset: 0, msg: "not an SVCK checkpoint".into() });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32("tensor count")? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let at = r.pos;
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Parse { offset: at + 4, msg: "tensor name is not UTF-8".into() })?
            .to_owned();
        let rank = r.u32("rank")? as usize;
        let dims = (0..rank).map(|_| r.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let dtype_at = r.pos;
        let dtype = r.take(1, "dtype")?[0];
        if dtype != DTYPE_F32 {
            return Err(Error::Parse { offset: dtype_at, msg: format!("unsupported dtype {dtype}") });
        }
        let n: usize = dims.iter().product();
        let raw = r.take(n * 4, "payload")?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor::new(&dims, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::Parse { offset: r.pos, msg: "trailing bytes after last tensor".into() });
    }
    Ok(out)
}

fn config_tensor(cfg: &ViTConfig) -> Tensor<f32> {
    let v = [
        cfg.num_layers,
        cfg.embed_dim,
        cfg.num_heads,
        cfg.patch_size,
        cfg.within_frame_layers,
        cfg.token_refinement as usize,
        cfg.fg_prototypes,
        cfg.bg_prototypes,
        cfg.mlp_ratio,
    ];
    Tensor::new(&[v.len()], v.iter().map(|&x| x as f32).collect()).unwrap()
}

fn config_from_tensor(t: &Tensor<f32>) -> Result<ViTConfig> {
    let v: Vec<usize> = t.data().iter().map(|&x| x as usize).collect();
    if v.len() != 9 || t.data().iter().any(|&x| x < 0.0 || x.fract() != 0.0) {
        return Err(Error::Checkpoint("malformed model config tensor".into()));
    }
    let cfg = ViTConfig {
        num_layers: v[0],
        embed_dim: v[1],
        num_heads: v[2],
        patch_size: v[3],
        within_frame_layers: v[4],
        token_refinement: v[5] != 0,
        fg_prototypes: v[6],
        bg_prototypes: v[7],
        mlp_ratio: v[8],
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Model geometry followed by every parameter in registration order.
pub fn encode_model(model: &SimVos<f32>) -> Result<Vec<u8>> {
    let cfg = config_tensor(&model.cfg);
    let mut tensors = vec![(CONFIG_TENSOR.to_owned(), &cfg)];
    tensors.extend(model.params.iter().map(|p| (p.name.clone(), &p.value)));
    encode(&tensors)
}

pub fn decode_model(bytes: &[u8]) -> Result<SimVos<f32>> {
    let tensors = decode(bytes)?;
    let cfg_t = tensors
        .iter()
        .find(|(n, _)| n == CONFIG_TENSOR)
        .map(|(_, t)| t)
        .ok_or_else(|| Error::Checkpoint(format!("missing {CONFIG_TENSOR}")))?;
    let mut model = SimVos::new(config_from_tensor(cfg_t)?, 0)?;
    model.params.load_values(&tensors)?;
    Ok(model)
}

pub fn save(path: &Path, model: &SimVos<f32>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(fs::write(path, encode_model(model)?)?)
}

pub fn load(path: &Path) -> Result<SimVos<f32>> {
    decode_model(&fs::read(path)?)
}
