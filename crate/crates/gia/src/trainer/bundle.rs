//! Frozen model bundle: every parameter the inference path needs, plus a
//! content hash asserting the freeze contract.
//!
//! File layout: `GIABUNDLE1` magic line, `key=value` config lines, a
//! `hash=<hex>` line, then named parameter sections (`<name> <ndims> <dims…>`
//! followed by little-endian 64-bit floats) terminated by `END`.

use crate::aligners::{FiLMGenerator, LabelBase};
use crate::dpaa::{AttentionLayer, DPAAParams};
use crate::embedder::{EmbedderArch, EmbedderParams};
use crate::encoder::EncoderInit;
use crate::error::{Error, Result};
use crate::numkernel::Tensor;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub const BUNDLE_MAGIC: &str = "GIABUNDLE1";

/// Resolved architecture and hyperparameters stored with the model.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleConfig {
    pub d_o: usize,
    pub d: usize,
    pub d_e: usize,
    pub tau: f64,
    pub eta: f64,
    pub l_max: usize,
    pub film_hidden: usize,
    pub dpaa_layers: usize,
    pub dpaa_heads: usize,
    pub shared_kv: bool,
    pub seed: u64,
    pub theta_seed: u64,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub conv_kernel: usize,
    pub conv_stride: usize,
}

impl BundleConfig {
    pub fn embedder_arch(&self) -> EmbedderArch {
        EmbedderArch {
            conv1_channels: self.conv1_channels,
            conv2_channels: self.conv2_channels,
            kernel: self.conv_kernel,
            stride: self.conv_stride,
            embedding_dim: self.d_e,
        }
    }
}

/// The frozen bundle Φ.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub config: BundleConfig,
    pub theta0: EncoderInit,
    pub embedder: EmbedderParams,
    pub film_feature: FiLMGenerator,
    pub film_label: FiLMGenerator,
    pub label_base: LabelBase,
    pub dpaa: DPAAParams,
    /// Stage-A domain embeddings of the pretraining graphs.
    pub pretrain_embeddings: Vec<Tensor>,
}

impl ModelBundle {
    /// Named parameters in the fixed serialization order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![("theta0".into(), self.theta0.weights())];
        let e = &self.embedder;
        out.extend([
            ("embedder.conv1_kernel".into(), &e.conv1_kernel),
            ("embedder.conv1_bias".into(), &e.conv1_bias),
            ("embedder.conv2_kernel".into(), &e.conv2_kernel),
            ("embedder.conv2_bias".into(), &e.conv2_bias),
            ("embedder.mlp_weight".into(), &e.mlp_weight),
            ("embedder.mlp_bias".into(), &e.mlp_bias),
        ]);
        for (prefix, gen) in [("film_feature", &self.film_feature), ("film_label", &self.film_label)] {
            out.extend([
                (format!("{}.w_hidden", prefix), &gen.w_hidden),
                (format!("{}.b_hidden", prefix), &gen.b_hidden),
                (format!("{}.w_scale", prefix), &gen.w_scale),
                (format!("{}.b_scale", prefix), &gen.b_scale),
                (format!("{}.w_shift", prefix), &gen.w_shift),
                (format!("{}.b_shift", prefix), &gen.b_shift),
            ]);
        }
        out.push(("label_base".into(), &self.label_base.rows));
        for (i, layer) in self.dpaa.layers.iter().enumerate() {
            out.extend([
                (format!("dpaa.layer{}.w_q", i), &layer.w_q),
                (format!("dpaa.layer{}.w_k", i), &layer.w_k),
                (format!("dpaa.layer{}.w_v", i), &layer.w_v),
            ]);
        }
        if let (Some(k), Some(v)) = (&self.dpaa.label_w_k, &self.dpaa.label_w_v) {
            out.push(("dpaa.label_w_k".into(), k));
            out.push(("dpaa.label_w_v".into(), v));
        }
        out.push(("dpaa.omega_weight".into(), &self.dpaa.omega_weight));
        out.push(("dpaa.omega_bias".into(), &self.dpaa.omega_bias));
        for (i, e) in self.pretrain_embeddings.iter().enumerate() {
            out.push((format!("pretrain_embedding.{}", i), e));
        }
        out
    }

    /// SHA-256 over every parameter section (names, shapes, payloads).
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, tensor) in self.named_params() {
            hasher.update(name.as_bytes());
            for &dim in tensor.shape() {
                hasher.update((dim as u64).to_le_bytes());
            }
            for &v in tensor.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        let mut hex = String::with_capacity(64);
        for b in hasher.finalize() {
            let _ = write!(hex, "{:02x}", b);
        }
        hex
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::new();
        out.extend_from_slice(BUNDLE_MAGIC.as_bytes());
        out.push(b'\n');
        let mut kv = String::new();
        let _ = write!(
            kv,
            "d_o={}\nd={}\nd_e={}\ntau={}\neta={}\nl_max={}\nfilm_hidden={}\ndpaa_layers={}\ndpaa_heads={}\nshared_kv={}\nseed={}\ntheta_seed={}\nconv1_channels={}\nconv2_channels={}\nconv_kernel={}\nconv_stride={}\npretrain_domains={}\n",
            c.d_o, c.d, c.d_e, c.tau, c.eta, c.l_max, c.film_hidden, c.dpaa_layers, c.dpaa_heads,
            c.shared_kv as u8, c.seed, c.theta_seed, c.conv1_channels, c.conv2_channels,
            c.conv_kernel, c.conv_stride, self.pretrain_embeddings.len(),
        );
        out.extend_from_slice(kv.as_bytes());
        out.extend_from_slice(format!("hash={}\n", self.content_hash()).as_bytes());
        out.extend_from_slice(b"PARAMS\n");
        for (name, tensor) in self.named_params() {
            let dims: Vec<String> = tensor.shape().iter().map(|d| d.to_string()).collect();
            out.extend_from_slice(format!("{} {} {}\n", name, tensor.shape().len(), dims.join(" ")).as_bytes());
            for &v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(b"END\n");
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let line = |pos: &mut usize| -> Result<String> {
            let start = *pos;
            let end = bytes[start..]
                .iter()
                .position(|&b| b == b'\n')
                .map(|i| start + i)
                .ok_or(Error::Parse { offset: start as u64, detail: "missing newline".into() })?;
            let s = std::str::from_utf8(&bytes[start..end])
                .map_err(|_| Error::Parse { offset: start as u64, detail: "invalid utf-8".into() })?;
            *pos = end + 1;
            Ok(s.to_string())
        };

        if line(&mut pos)? != BUNDLE_MAGIC {
            return Err(Error::Parse { offset: 0, detail: format!("expected `{}` magic", BUNDLE_MAGIC) });
        }
        let mut kv = std::collections::HashMap::new();
        let mut stored_hash = String::new();
        loop {
            let at = pos;
            let l = line(&mut pos)?;
            if l == "PARAMS" {
                break;
            }
            let (k, v) = l
                .split_once('=')
                .ok_or(Error::Parse { offset: at as u64, detail: format!("expected key=value, got `{}`", l) })?;
            if k == "hash" {
                stored_hash = v.to_string();
            } else {
                kv.insert(k.to_string(), v.to_string());
            }
        }
        fn get<T: std::str::FromStr>(kv: &std::collections::HashMap<String, String>, key: &str) -> Result<T> {
            kv.get(key)
                .ok_or_else(|| Error::Parse { offset: 0, detail: format!("bundle config missing `{}`", key) })?
                .parse()
                .map_err(|_| Error::Parse { offset: 0, detail: format!("bad value for `{}`", key) })
        }
        let config = BundleConfig {
            d_o: get(&kv, "d_o")?,
            d: get(&kv, "d")?,
            d_e: get(&kv, "d_e")?,
            tau: get(&kv, "tau")?,
            eta: get(&kv, "eta")?,
            l_max: get(&kv, "l_max")?,
            film_hidden: get(&kv, "film_hidden")?,
            dpaa_layers: get(&kv, "dpaa_layers")?,
            dpaa_heads: get(&kv, "dpaa_heads")?,
            shared_kv: get::<u8>(&kv, "shared_kv")? != 0,
            seed: get(&kv, "seed")?,
            theta_seed: get(&kv, "theta_seed")?,
            conv1_channels: get(&kv, "conv1_channels")?,
            conv2_channels: get(&kv, "conv2_channels")?,
            conv_kernel: get(&kv, "conv_kernel")?,
            conv_stride: get(&kv, "conv_stride")?,
        };
        let pretrain_domains: usize = get(&kv, "pretrain_domains")?;

        let mut tensors: Vec<(String, Tensor)> = Vec::new();
        loop {
            let at = pos;
            let header = line(&mut pos)?;
            if header == "END" {
                break;
            }
            let mut parts = header.split_whitespace();
            let name = parts
                .next()
                .ok_or(Error::Parse { offset: at as u64, detail: "empty parameter header".into() })?
                .to_string();
            let ndims: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or(Error::Parse { offset: at as u64, detail: "bad parameter rank".into() })?;
            let mut shape = Vec::with_capacity(ndims);
            for _ in 0..ndims {
                shape.push(parts.next().and_then(|s| s.parse().ok()).ok_or(Error::Parse {
                    offset: at as u64,
                    detail: "bad parameter dimension".into(),
                })?);
            }
            let count: usize = shape.iter().product();
            if pos + count * 8 > bytes.len() {
                return Err(Error::Parse {
                    offset: pos as u64,
                    detail: format!("parameter `{}` payload truncated", name),
                });
            }
            let mut data = Vec::with_capacity(count);
            for chunk in bytes[pos..pos + count * 8].chunks_exact(8) {
                data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
            pos += count * 8;
            tensors.push((name, Tensor::new(shape, data)?));
        }

        let mut iter = tensors.into_iter();
        let mut take = |want: &str| -> Result<Tensor> {
            let (name, t) = iter
                .next()
                .ok_or_else(|| Error::Parse { offset: 0, detail: format!("missing parameter `{}`", want) })?;
            if name != want {
                return Err(Error::Parse {
                    offset: 0,
                    detail: format!("expected parameter `{}`, found `{}`", want, name),
                });
            }
            Ok(t)
        };

        let theta0 = EncoderInit::from_weights(take("theta0")?, config.theta_seed);
        let embedder = EmbedderParams {
            arch: config.embedder_arch(),
            fingerprint_shape: (config.d_o, config.d),
            conv1_kernel: take("embedder.conv1_kernel")?,
            conv1_bias: take("embedder.conv1_bias")?,
            conv2_kernel: take("embedder.conv2_kernel")?,
            conv2_bias: take("embedder.conv2_bias")?,
            mlp_weight: take("embedder.mlp_weight")?,
            mlp_bias: take("embedder.mlp_bias")?,
        };
        let mut load_film = |prefix: &str| -> Result<FiLMGenerator> {
            Ok(FiLMGenerator {
                w_hidden: take(&format!("{}.w_hidden", prefix))?,
                b_hidden: take(&format!("{}.b_hidden", prefix))?,
                w_scale: take(&format!("{}.w_scale", prefix))?,
                b_scale: take(&format!("{}.b_scale", prefix))?,
                w_shift: take(&format!("{}.w_shift", prefix))?,
                b_shift: take(&format!("{}.b_shift", prefix))?,
            })
        };
        let film_feature = load_film("film_feature")?;
        let film_label = load_film("film_label")?;
        let label_base = LabelBase { rows: take("label_base")? };
        let mut layers = Vec::with_capacity(config.dpaa_layers);
        for i in 0..config.dpaa_layers {
            layers.push(AttentionLayer {
                w_q: take(&format!("dpaa.layer{}.w_q", i))?,
                w_k: take(&format!("dpaa.layer{}.w_k", i))?,
                w_v: take(&format!("dpaa.layer{}.w_v", i))?,
            });
        }
        let (label_w_k, label_w_v) = if config.shared_kv {
            (None, None)
        } else {
            (Some(take("dpaa.label_w_k")?), Some(take("dpaa.label_w_v")?))
        };
        let dpaa = DPAAParams {
            layers,
            heads: config.dpaa_heads,
            shared_kv: config.shared_kv,
            label_w_k,
            label_w_v,
            omega_weight: take("dpaa.omega_weight")?,
            omega_bias: take("dpaa.omega_bias")?,
        };
        let mut pretrain_embeddings = Vec::with_capacity(pretrain_domains);
        for i in 0..pretrain_domains {
            pretrain_embeddings.push(take(&format!("pretrain_embedding.{}", i))?);
        }

        let bundle = ModelBundle {
            config,
            theta0,
            embedder,
            film_feature,
            film_label,
            label_base,
            dpaa,
            pretrain_embeddings,
        };
        let computed = bundle.content_hash();
        if computed != stored_hash {
            return Err(Error::Validation(format!(
                "bundle hash mismatch: stored {}, computed {}",
                stored_hash, computed
            )));
        }
        Ok(bundle)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_bundle() -> ModelBundle {
        let config = BundleConfig {
            d_o: 8,
            d: 8,
            d_e: 4,
            tau: 0.2,
            eta: 0.01,
            l_max: 3,
            film_hidden: 4,
            dpaa_layers: 1,
            dpaa_heads: 1,
            shared_kv: true,
            seed: 5,
            theta_seed: 6,
            conv1_channels: 2,
            conv2_channels: 3,
            conv_kernel: 3,
            conv_stride: 2,
        };
        ModelBundle {
            theta0: EncoderInit::from_seed(8, 8, 6),
            embedder: EmbedderParams::init(config.embedder_arch(), 8, 8, 7).unwrap(),
            film_feature: FiLMGenerator::init(4, 8, 4, 8),
            film_label: FiLMGenerator::init(4, 8, 4, 9),
            label_base: LabelBase::init(3, 8, 10),
            dpaa: DPAAParams::init(8, 1, 1, true, 11).unwrap(),
            pretrain_embeddings: vec![Tensor::filled(&[4], 0.5), Tensor::filled(&[4], -1.5)],
            config,
        }
    }

    #[test]
    fn bundle_round_trip_is_bitwise() {
        let bundle = tiny_bundle();
        let bytes = bundle.to_bytes();
        let loaded = ModelBundle::from_bytes(&bytes).unwrap();
        assert_eq!(bundle, loaded);
        assert_eq!(loaded.to_bytes(), bytes);
    }

    #[test]
    fn tampered_payload_fails_hash_check() {
        let bundle = tiny_bundle();
        let mut bytes = bundle.to_bytes();
        let n = bytes.len();
        bytes[n - 20] ^= 0xff; // flip a bit inside the last parameter
        let err = ModelBundle::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("hash"));
    }

    #[test]
    fn feature_and_label_generators_do_not_alias() {
        let bundle = tiny_bundle();
        assert_ne!(bundle.film_feature.w_hidden.data(), bundle.film_label.w_hidden.data());
        // Swapping weights must change a generated transform.
        let e = Tensor::filled(&[4], 0.3);
        let a = crate::aligners::gen_film(&e, &bundle.film_feature).unwrap();
        let b = crate::aligners::gen_film(&e, &bundle.film_label).unwrap();
        assert_ne!(a.gamma.data(), b.gamma.data());
    }

    #[test]
    fn separated_kv_round_trips() {
        let mut bundle = tiny_bundle();
        bundle.config.shared_kv = false;
        bundle.dpaa = DPAAParams::init(8, 1, 1, false, 12).unwrap();
        let bytes = bundle.to_bytes();
        let loaded = ModelBundle::from_bytes(&bytes).unwrap();
        assert_eq!(bundle, loaded);
        assert!(loaded.dpaa.label_w_k.is_some());
    }
}
