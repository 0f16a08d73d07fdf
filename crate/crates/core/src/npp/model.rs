use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use eventgc_autodiff::Array;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::basis::BasisFamily;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Layer sizes of the encoder and decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_types: usize,
    pub embed_dim: usize,
    pub hidden: usize,
}

impl ModelConfig {
    pub fn new(num_types: usize) -> Self {
        ModelConfig { num_types, embed_dim: 64, hidden: 64 }
    }
}

/// All learnable arrays. Shapes, with `K` types, `d` embedding width, `N`
/// hidden units and `R` bases:
///
/// | name | shape |
/// |---|---|
/// | `type_embedding` | (K+1)×d, last row zero |
/// | `gru.w_x` | (1+d)×3N, columns `[reset | update | candidate]` |
/// | `gru.w_h` | N×2N |
/// | `gru.w_hc` | N×N |
/// | `gru.b` | 1×3N |
/// | `h0` | 1×N |
/// | `alpha.w1`, `alpha.b1` | N×N, 1×N |
/// | `alpha.w2`, `alpha.skip`, `alpha.b2` | N×KR, N×KR, 1×KR |
///
/// Output column `k·R + r` of the α-network is `α_{k,r}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub type_embedding: Array,
    pub gru_wx: Array,
    pub gru_wh: Array,
    pub gru_whc: Array,
    pub gru_b: Array,
    pub h0: Array,
    pub alpha_w1: Array,
    pub alpha_b1: Array,
    pub alpha_w2: Array,
    pub alpha_skip: Array,
    pub alpha_b2: Array,
}

pub const PARAM_NAMES: [&str; 11] = [
    "type_embedding",
    "gru.w_x",
    "gru.w_h",
    "gru.w_hc",
    "gru.b",
    "h0",
    "alpha.w1",
    "alpha.b1",
    "alpha.w2",
    "alpha.skip",
    "alpha.b2",
];

impl Params {
    pub fn iter(&self) -> [&Array; 11] {
        [
            &self.type_embedding,
            &self.gru_wx,
            &self.gru_wh,
            &self.gru_whc,
            &self.gru_b,
            &self.h0,
            &self.alpha_w1,
            &self.alpha_b1,
            &self.alpha_w2,
            &self.alpha_skip,
            &self.alpha_b2,
        ]
    }

    pub fn iter_mut(&mut self) -> [&mut Array; 11] {
        [
            &mut self.type_embedding,
            &mut self.gru_wx,
            &mut self.gru_wh,
            &mut self.gru_whc,
            &mut self.gru_b,
            &mut self.h0,
            &mut self.alpha_w1,
            &mut self.alpha_b1,
            &mut self.alpha_w2,
            &mut self.alpha_skip,
            &mut self.alpha_b2,
        ]
    }

    pub fn count(&self) -> usize {
        self.iter().iter().map(|a| a.len()).sum()
    }

    /// All parameters concatenated in [`PARAM_NAMES`] order.
    pub fn flatten(&self) -> Vec<f64> {
        self.iter().iter().flat_map(|a| a.data().iter().copied()).collect()
    }

    pub fn unflatten(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.count(), "flat parameter length");
        let mut off = 0;
        for a in self.iter_mut() {
            let n = a.len();
            a.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    fn shapes(cfg: &ModelConfig, num_bases: usize) -> [(usize, usize); 11] {
        let (k, d, n) = (cfg.num_types, cfg.embed_dim, cfg.hidden);
        let kr = k * num_bases;
        [
            (k + 1, d),
            (1 + d, 3 * n),
            (n, 2 * n),
            (n, n),
            (1, 3 * n),
            (1, n),
            (n, n),
            (1, n),
            (n, kr),
            (n, kr),
            (1, kr),
        ]
    }

    fn fan_ins(cfg: &ModelConfig) -> [usize; 11] {
        let (k, d, n) = (cfg.num_types, cfg.embed_dim, cfg.hidden);
        [k, 1 + d, n, n, 1 + d, 0, n, n, n, n, n]
    }

    fn zeros(cfg: &ModelConfig, num_bases: usize) -> Params {
        let s = Params::shapes(cfg, num_bases);
        let z = |i: usize| Array::zeros(s[i].0, s[i].1);
        Params {
            type_embedding: z(0),
            gru_wx: z(1),
            gru_wh: z(2),
            gru_whc: z(3),
            gru_b: z(4),
            h0: z(5),
            alpha_w1: z(6),
            alpha_b1: z(7),
            alpha_w2: z(8),
            alpha_skip: z(9),
            alpha_b2: z(10),
        }
    }
}

/// The neural point process: type embedding, gated recurrent encoder and
/// softplus α-network over a Gaussian basis.
#[derive(Debug, Clone, PartialEq)]
pub struct NppModel {
    pub config: ModelConfig,
    pub basis: BasisFamily,
    pub params: Params,
}

impl NppModel {
    /// Weights and biases uniform in `±1/√fan_in`; `h0` and the null
    /// embedding row start at zero.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, basis: BasisFamily, rng: &mut R) -> Result<Self> {
        if config.num_types == 0 || config.embed_dim == 0 || config.hidden == 0 {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        let mut params = Params::zeros(&config, basis.len());
        let fans = Params::fan_ins(&config);
        for (a, &fan) in params.iter_mut().into_iter().zip(&fans) {
            if fan == 0 {
                continue;
            }
            let bound = 1.0 / (fan as f64).sqrt();
            for v in a.data_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
        let d = config.embed_dim;
        let k = config.num_types;
        params.type_embedding.data_mut()[k * d..].fill(0.0);
        Ok(NppModel { config, basis, params })
    }

    /// A model whose parameters are all zero.
    pub fn zeroed(config: ModelConfig, basis: BasisFamily) -> Self {
        let params = Params::zeros(&config, basis.len());
        NppModel { config, basis, params }
    }

    pub fn num_types(&self) -> usize {
        self.config.num_types
    }

    pub fn num_bases(&self) -> usize {
        self.basis.len()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &Checkpoint::from(self))?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        ck.try_into()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Checkpoint::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<Checkpoint>(s)?.try_into()
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    model: ModelConfig,
    basis: BasisFamily,
    params: Vec<NamedArray>,
}

#[derive(Serialize, Deserialize)]
struct NamedArray {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl From<&NppModel> for Checkpoint {
    fn from(m: &NppModel) -> Self {
        let params = PARAM_NAMES
            .iter()
            .zip(m.params.iter())
            .map(|(name, a)| NamedArray {
                name: name.to_string(),
                shape: a.shape().to_vec(),
                data: a.data().to_vec(),
            })
            .collect();
        Checkpoint { version: CHECKPOINT_VERSION, model: m.config, basis: m.basis.clone(), params }
    }
}

impl TryFrom<Checkpoint> for NppModel {
    type Error = Error;
    fn try_from(ck: Checkpoint) -> Result<Self> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint version {}", ck.version)));
        }
        let mut model = NppModel::zeroed(ck.model, ck.basis);
        if ck.params.len() != PARAM_NAMES.len() {
            return Err(Error::Config(format!("checkpoint has {} arrays", ck.params.len())));
        }
        for ((slot, name), stored) in model.params.iter_mut().into_iter().zip(PARAM_NAMES).zip(ck.params) {
            if stored.name != name || stored.shape != slot.shape() {
                return Err(Error::Config(format!(
                    "checkpoint array '{}' {:?} does not match '{name}' {:?}",
                    stored.name,
                    stored.shape,
                    slot.shape()
                )));
            }
            if stored.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("checkpoint array '{name}'")));
            }
            *slot = Array::new(stored.shape, stored.data)?;
        }
        Ok(model)
    }
}
