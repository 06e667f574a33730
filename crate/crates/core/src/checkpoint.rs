//! Model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SKDC"              4-byte magic
//! 0x01                format version
//! u32                 header length in bytes
//! header              UTF-8 `key=value` lines: input_dim, hidden (comma
//!                     separated, empty for none), num_classes, seed, epochs,
//!                     train_accuracy, l_avg (`none` when absent), param_count
//! f64 × param_count   per layer: weight (fan_in × fan_out, row-major), bias
//! ```
//!
//! Floats in the header use the shortest decimal form that parses back to the
//! same bits, so every value round-trips exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Linear, Mlp, MlpConfig};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SKDC";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Mlp,
    /// Mean teacher logit norm over the training set, when computed.
    pub l_avg: Option<f64>,
    pub epochs: usize,
    pub train_accuracy: f64,
}

impl Checkpoint {
    pub fn new(model: Mlp) -> Self {
        Checkpoint {
            model,
            l_avg: None,
            epochs: 0,
            train_accuracy: 0.0,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = self.model.config();
        let hidden: Vec<String> = cfg.hidden.iter().map(|w| w.to_string()).collect();
        let l_avg = self.l_avg.map_or_else(|| "none".to_string(), |v| v.to_string());
        let header = format!(
            "input_dim={}\nhidden={}\nnum_classes={}\nseed={}\nepochs={}\ntrain_accuracy={}\nl_avg={}\nparam_count={}\n",
            cfg.input_dim,
            hidden.join(","),
            cfg.num_classes,
            cfg.seed,
            self.epochs,
            self.train_accuracy,
            l_avg,
            cfg.param_count(),
        );
        let mut out = Vec::with_capacity(9 + header.len() + 8 * cfg.param_count());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for t in self.model.parameters() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let corrupt = |msg: &str| Error::CheckpointCorrupt(msg.to_string());
        if bytes.len() < 9 || &bytes[..4] != MAGIC {
            return Err(corrupt("missing SKDC magic"));
        }
        if bytes[4] != VERSION {
            return Err(Error::CheckpointCorrupt(format!("unsupported version {}", bytes[4])));
        }
        let header_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let header_end = 9usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| corrupt("header runs past end of file"))?;
        let header = std::str::from_utf8(&bytes[9..header_end]).map_err(|_| corrupt("header is not UTF-8"))?;

        let mut fields = BTreeMap::new();
        for line in header.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::CheckpointCorrupt(format!("malformed header line {line:?}")))?;
            fields.insert(k, v);
        }
        let field = |key: &str| -> Result<&str> {
            fields
                .get(key)
                .copied()
                .ok_or_else(|| Error::CheckpointCorrupt(format!("header lacks {key}")))
        };
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::CheckpointCorrupt(format!("bad value for {key}: {v:?}")))
        }

        let hidden_text = field("hidden")?;
        let hidden = if hidden_text.is_empty() {
            Vec::new()
        } else {
            hidden_text
                .split(',')
                .map(|w| parse::<usize>("hidden", w))
                .collect::<Result<Vec<_>>>()?
        };
        let config = MlpConfig {
            input_dim: parse("input_dim", field("input_dim")?)?,
            hidden,
            num_classes: parse("num_classes", field("num_classes")?)?,
            seed: parse("seed", field("seed")?)?,
        };
        config
            .validate()
            .map_err(|e| Error::CheckpointDimension(e.to_string()))?;
        let declared: usize = parse("param_count", field("param_count")?)?;
        if declared != config.param_count() {
            return Err(Error::CheckpointDimension(format!(
                "header dimensions imply {} parameters but param_count is {declared}",
                config.param_count()
            )));
        }
        let l_avg = match field("l_avg")? {
            "none" => None,
            v => {
                let x: f64 = parse("l_avg", v)?;
                if !(x.is_finite() && x >= 0.0) {
                    return Err(Error::CheckpointCorrupt(format!(
                        "l_avg must be finite and nonnegative, got {x}"
                    )));
                }
                Some(x)
            }
        };
        let epochs = parse("epochs", field("epochs")?)?;
        let train_accuracy = parse("train_accuracy", field("train_accuracy")?)?;

        let payload = &bytes[header_end..];
        if payload.len() != declared * 8 {
            return Err(Error::CheckpointCorrupt(format!(
                "payload holds {} bytes, expected {}",
                payload.len(),
                declared * 8
            )));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut take = |rows: usize, cols: usize| -> Result<Tensor> {
            let data: Vec<f64> = values.by_ref().take(rows * cols).collect();
            Tensor::new(rows, cols, data).map_err(|_| corrupt("non-finite parameter"))
        };
        let mut layers = Vec::new();
        for (fan_in, fan_out) in config.layer_dims() {
            let weight = take(fan_in, fan_out)?;
            let bias = take(1, fan_out)?;
            layers.push(Linear { weight, bias });
        }
        let model = Mlp::from_layers(config, layers)?;
        Ok(Checkpoint {
            model,
            l_avg,
            epochs,
            train_accuracy,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}
