//! Named parameter store and checkpoint serialization.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::init::{constant, fan_in_uniform, orthogonal, zeros};
use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};

use super::config::ModelConfig;

const CKPT_MAGIC: &[u8; 8] = b"PLTCKPT1";

/// All learnable weights, addressable by name and by dense id.
#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, t: Tensor<T>) -> usize {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter {name}"
        );
        let id = self.tensors.len();
        self.names.push(name.to_string());
        self.tensors.push(t);
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn id(&self, name: &str) -> usize {
        *self
            .by_name
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn try_id(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: usize) -> &Tensor<T> {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Tensor<T> {
        &mut self.tensors[id]
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn total_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

fn gru_params<T: Scalar>(
    store: &mut ParamStore<T>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    input: usize,
    hidden: usize,
) {
    for gate in ["z", "r", "h"] {
        store.insert(
            &format!("{prefix}.w{gate}"),
            fan_in_uniform(rng, &[hidden, input], input),
        );
        store.insert(&format!("{prefix}.u{gate}"), orthogonal(rng, hidden));
        store.insert(&format!("{prefix}.b{gate}"), zeros(&[hidden]));
    }
}

fn conv_params<T: Scalar>(
    store: &mut ParamStore<T>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    c_out: usize,
    c_in: usize,
    k: usize,
) {
    store.insert(
        &format!("{prefix}.w"),
        fan_in_uniform(rng, &[c_out, c_in, k, k], c_in * k * k),
    );
    store.insert(&format!("{prefix}.b"), zeros(&[c_out]));
}

fn linear_params<T: Scalar>(
    store: &mut ParamStore<T>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    out: usize,
    input: usize,
) {
    store.insert(
        &format!("{prefix}.w"),
        fan_in_uniform(rng, &[out, input], input),
    );
    store.insert(&format!("{prefix}.b"), zeros(&[out]));
}

/// Builds a freshly initialized parameter set for a model configuration.
/// Fan-in-scaled uniform everywhere, orthogonal recurrent kernels, and a
/// positive mask bias so the semantic gate starts open.
pub fn init_params<T: Scalar>(cfg: &ModelConfig, seed: u64) -> ParamStore<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();

    conv_params(&mut s, &mut rng, "backbone.stem", cfg.c_stem, 3, 3);
    conv_params(&mut s, &mut rng, "backbone.s1", cfg.c1, cfg.c_stem, 3);
    conv_params(&mut s, &mut rng, "backbone.s2", cfg.c2, cfg.c1, 3);
    conv_params(&mut s, &mut rng, "backbone.s3", cfg.c3, cfg.c2, 3);
    conv_params(&mut s, &mut rng, "backbone.s4", cfg.c4, cfg.c3, 3);
    let cat = cfg.c1 + cfg.c2 + cfg.c3 + cfg.c4;
    conv_params(&mut s, &mut rng, "backbone.fuse", cfg.c_fused, cat, 1);

    conv_params(&mut s, &mut rng, "depth_head", cfg.depth_bins, cfg.c_fused, 1);
    // Positive bias keeps the gate open before the mask head has learned.
    s.insert(
        "mask_head.w",
        fan_in_uniform(&mut rng, &[1, cfg.c_fused, 1, 1], cfg.c_fused),
    );
    s.insert("mask_head.b", constant(&[1], 0.5));

    conv_params(&mut s, &mut rng, "enc.c1", cfg.enc_ch, cfg.c_fused, 3);
    conv_params(&mut s, &mut rng, "enc.c2", cfg.enc_ch, cfg.enc_ch, 3);
    let enc_in = cfg.enc_ch * (cfg.bev.ny / 4) * (cfg.bev.nx / 4);
    linear_params(&mut s, &mut rng, "enc.fc", cfg.enc_dim, enc_in);

    gru_params(&mut s, &mut rng, "fusion_gru", cfg.enc_dim, cfg.fusion_hidden);
    linear_params(&mut s, &mut rng, "pose_mlp.l1", 64, cfg.fusion_hidden);
    linear_params(&mut s, &mut rng, "pose_mlp.l2", 3, 64);

    linear_params(&mut s, &mut rng, "planner.init", cfg.planner_hidden, cfg.fusion_hidden);
    gru_params(&mut s, &mut rng, "planner.gru", 2, cfg.planner_hidden);
    linear_params(&mut s, &mut rng, "planner.out", 2, cfg.planner_hidden);

    gru_params(&mut s, &mut rng, "vel_gru", cfg.enc_dim, cfg.vel_hidden);
    linear_params(&mut s, &mut rng, "vel_out", 1, cfg.vel_hidden);

    s
}

/// Writes a checkpoint: magic, config echo, then a named tensor table.
pub fn save_checkpoint(path: &Path, cfg: &ModelConfig, store: &ParamStore<f32>) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    let cfg_json = serde_json::to_vec(cfg)?;
    buf.extend_from_slice(&(cfg_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&cfg_json);
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(0u8); // dtype f32
        buf.push(t.shape.len() as u8);
        for &d in &t.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

/// Loads a checkpoint written by `save_checkpoint`.
pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ParamStore<f32>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let fail = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
    if bytes.len() < 12 || &bytes[0..8] != CKPT_MAGIC {
        return Err(fail("bad magic or version"));
    }
    let mut off = 8;
    let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
        if bytes.len() < *off + n {
            return Err(fail("truncated"));
        }
        let s = &bytes[*off..*off + n];
        *off += n;
        Ok(s)
    };
    let cfg_len = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
    let cfg: ModelConfig = serde_json::from_slice(take(&mut off, cfg_len)?)
        .map_err(|e| fail(&format!("config: {e}")))?;
    let n_tensors = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
    let mut store = ParamStore::new();
    for _ in 0..n_tensors {
        let name_len = u16::from_le_bytes(take(&mut off, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut off, name_len)?.to_vec())
            .map_err(|_| fail("bad tensor name"))?;
        let dtype = take(&mut off, 1)?[0];
        if dtype != 0 {
            return Err(fail(&format!("unsupported dtype {dtype}")));
        }
        let ndim = take(&mut off, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize);
        }
        let numel: usize = shape.iter().product();
        let data: Vec<f32> = take(&mut off, 4 * numel)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store.insert(&name, Tensor::from_vec(&shape, data));
    }
    if off != bytes.len() {
        return Err(fail("trailing bytes"));
    }
    Ok((cfg, store))
}
