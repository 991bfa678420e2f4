//! Binary dataset and checkpoint containers.
//!
//! Both start with a 6-byte magic, a little-endian `u32` header length and a UTF-8
//! `key=value` header, followed by raw little-endian `f64` blocks.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;

use crate::config::{float, format_kv, parse_kv, parse_value, KeyValue};
use crate::error::{contract, Error, Result};
use crate::numcore::{ParamEntry, ParamStore, Rng, Tensor};
use crate::spatial::{Domain, Point, SpatialGrid};
use crate::trainer::TrainConfig;

pub const DATASET_MAGIC: &[u8; 6] = b"LNPDE1";
pub const CHECKPOINT_MAGIC: &[u8; 6] = b"LNPCK1";

/// A set of trajectories sharing one spatial grid and one time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub coords: Vec<Point>,
    pub times: Vec<f64>,
    /// `n_traj x M x N x D`.
    pub obs: Vec<f64>,
    pub n_traj: usize,
    pub obs_dim: usize,
    pub domain: Domain,
    /// Normalisation constants, generator name, seed and similar free-form entries.
    pub meta: BTreeMap<String, String>,
}

const DATASET_KEYS: [&str; 7] = ["n_traj", "M", "N", "D", "domain.lo", "domain.hi", "domain.periodic"];

impl Dataset {
    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn frame_len(&self) -> usize {
        self.n_nodes() * self.obs_dim
    }

    pub fn traj_len(&self) -> usize {
        self.n_times() * self.frame_len()
    }

    /// `M x N x D` block of trajectory `i`.
    pub fn trajectory(&self, i: usize) -> &[f64] {
        let l = self.traj_len();
        &self.obs[i * l..(i + 1) * l]
    }

    pub fn grid(&self) -> Result<SpatialGrid> {
        SpatialGrid::new(self.coords.clone(), self.domain)
    }

    pub fn validate(&self) -> Result<()> {
        contract!(self.obs_dim >= 1, "observation dimension must be positive");
        contract!(
            self.obs.len() == self.n_traj * self.traj_len(),
            "observation block has {} values, header implies {}",
            self.obs.len(),
            self.n_traj * self.traj_len()
        );
        contract!(
            self.times.windows(2).all(|w| w[0] < w[1]),
            "times must be strictly increasing"
        );
        for k in self.meta.keys() {
            contract!(
                !DATASET_KEYS.contains(&k.as_str()) && !k.contains('=') && !k.contains('\n'),
                "reserved or malformed meta key '{k}'"
            );
        }
        contract!(
            self.meta.values().all(|v| !v.contains('\n')),
            "meta values must be single-line"
        );
        Ok(())
    }

    /// Meta entry parsed as `T`.
    pub fn meta_value<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self
            .meta
            .get(key)
            .ok_or_else(|| Error::Format(format!("dataset has no '{key}' entry")))?;
        parse_value(key, v)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let d = &self.domain;
        let mut pairs = vec![
            ("n_traj".to_string(), self.n_traj.to_string()),
            ("M".to_string(), self.n_times().to_string()),
            ("N".to_string(), self.n_nodes().to_string()),
            ("D".to_string(), self.obs_dim.to_string()),
            (
                "domain.lo".to_string(),
                format!("{},{}", float(d.lo[0]), float(d.lo[1])),
            ),
            (
                "domain.hi".to_string(),
                format!("{},{}", float(d.hi[0]), float(d.hi[1])),
            ),
            (
                "domain.periodic".to_string(),
                format!("{},{}", d.periodic[0], d.periodic[1]),
            ),
        ];
        pairs.extend(self.meta.iter().map(|(k, v)| (k.clone(), v.clone())));
        let mut out = header(DATASET_MAGIC, &pairs)?;
        let coords: Vec<f64> = self.coords.iter().flat_map(|p| *p).collect();
        for block in [&coords, &self.times, &self.obs] {
            push_f64s(&mut out, block);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (pairs, mut rest) = read_header(bytes, DATASET_MAGIC)?;
        let mut fixed: BTreeMap<&str, &str> = BTreeMap::new();
        let mut meta = BTreeMap::new();
        for (k, v) in &pairs {
            if let Some(&key) = DATASET_KEYS.iter().find(|&&f| f == k) {
                fixed.insert(key, v);
            } else {
                meta.insert(k.clone(), v.clone());
            }
        }
        let get = |k: &str| -> Result<&str> {
            fixed
                .get(k)
                .copied()
                .ok_or_else(|| Error::Format(format!("dataset header lacks '{k}'")))
        };
        let n_traj: usize = parse_value("n_traj", get("n_traj")?)?;
        let m: usize = parse_value("M", get("M")?)?;
        let n: usize = parse_value("N", get("N")?)?;
        let obs_dim: usize = parse_value("D", get("D")?)?;
        let pair_f = |k: &str| -> Result<[f64; 2]> {
            let v: Vec<f64> = crate::config::parse_list(k, get(k)?)?;
            contract_format(v.len() == 2, k)?;
            Ok([v[0], v[1]])
        };
        let periodic: Vec<bool> = crate::config::parse_list("domain.periodic", get("domain.periodic")?)?;
        contract_format(periodic.len() == 2, "domain.periodic")?;
        let domain = Domain {
            lo: pair_f("domain.lo")?,
            hi: pair_f("domain.hi")?,
            periodic: [periodic[0], periodic[1]],
        };
        let coords_flat = take_f64s(&mut rest, 2 * n)?;
        let times = take_f64s(&mut rest, m)?;
        let obs = take_f64s(&mut rest, n_traj * m * n * obs_dim)?;
        if !rest.is_empty() {
            return Err(Error::Format(format!(
                "{} trailing bytes after the last block",
                rest.len()
            )));
        }
        let ds = Dataset {
            coords: coords_flat.chunks(2).map(|c| [c[0], c[1]]).collect(),
            times,
            obs,
            n_traj,
            obs_dim,
            domain,
            meta,
        };
        ds.validate().map_err(|e| Error::Format(e.to_string()))?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Trained parameters with the configuration and optimizer state needed to resume or evaluate.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub iteration: usize,
    /// `NaN` when no validation has run.
    pub best_val_mae: f64,
    pub rng: Rng,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut pairs: Vec<(String, String)> = self
            .config
            .pairs()
            .into_iter()
            .map(|(k, v)| (format!("config.{k}"), v))
            .collect();
        let seed: String = self.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        pairs.extend([
            ("iteration".to_string(), self.iteration.to_string()),
            ("best_val_mae".to_string(), float(self.best_val_mae)),
            ("adam_step".to_string(), self.params.step().to_string()),
            ("rng.seed".to_string(), seed),
            ("rng.stream".to_string(), self.rng.get_stream().to_string()),
            ("rng.word_pos".to_string(), self.rng.get_word_pos().to_string()),
            ("n_params".to_string(), self.params.len().to_string()),
        ]);
        for (i, e) in self.params.entries().iter().enumerate() {
            let shape: Vec<String> = e.value.shape().iter().map(usize::to_string).collect();
            pairs.push((format!("param.{i}"), format!("{}:{}", e.name, shape.join("x"))));
        }
        let mut out = header(CHECKPOINT_MAGIC, &pairs)?;
        for e in self.params.entries() {
            for t in [&e.value, &e.m, &e.v] {
                push_f64s(&mut out, t.data());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (pairs, mut rest) = read_header(bytes, CHECKPOINT_MAGIC)?;
        let map: BTreeMap<&str, &str> = pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
        let get = |k: &str| -> Result<&str> {
            map.get(k)
                .copied()
                .ok_or_else(|| Error::Format(format!("checkpoint header lacks '{k}'")))
        };
        let mut config = TrainConfig::default();
        let cfg_pairs: Vec<(String, String)> = pairs
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("config.").map(|k| (k.to_string(), v.clone())))
            .collect();
        config.apply(&cfg_pairs)?;
        config
            .validate()
            .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;

        let seed_hex = get("rng.seed")?;
        contract_format(seed_hex.len() == 64, "rng.seed")?;
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&seed_hex[2 * i..2 * i + 2], 16)
                .map_err(|_| Error::Format("rng.seed is not hex".into()))?;
        }
        let mut rng = Rng::from_seed(seed);
        rng.set_stream(parse_value("rng.stream", get("rng.stream")?)?);
        rng.set_word_pos(parse_value("rng.word_pos", get("rng.word_pos")?)?);

        let n_params: usize = parse_value("n_params", get("n_params")?)?;
        let mut params = ParamStore::new();
        for i in 0..n_params {
            let key = format!("param.{i}");
            let spec = get(&key)?;
            let (name, shape) = spec
                .rsplit_once(':')
                .ok_or_else(|| Error::Format(format!("{key}: expected name:shape")))?;
            let shape: Vec<usize> = shape.split('x').map(|s| parse_value(&key, s)).collect::<Result<_>>()?;
            let len: usize = shape.iter().product();
            let mut tensors = Vec::with_capacity(3);
            for _ in 0..3 {
                tensors.push(Tensor::new(shape.clone(), take_f64s(&mut rest, len)?)?);
            }
            let v = tensors.pop().expect("three tensors");
            let m = tensors.pop().expect("three tensors");
            let value = tensors.pop().expect("three tensors");
            params.insert_entry(ParamEntry {
                name: name.to_string(),
                value,
                m,
                v,
            })?;
        }
        params.set_step(parse_value("adam_step", get("adam_step")?)?);
        if !rest.is_empty() {
            return Err(Error::Format(format!(
                "{} trailing bytes after the last block",
                rest.len()
            )));
        }
        Ok(Self {
            config,
            iteration: parse_value("iteration", get("iteration")?)?,
            best_val_mae: parse_value("best_val_mae", get("best_val_mae")?)?,
            rng,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn contract_format(ok: bool, key: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Format(format!("malformed header entry '{key}'")))
    }
}

fn header(magic: &[u8; 6], pairs: &[(String, String)]) -> Result<Vec<u8>> {
    for (k, v) in pairs {
        contract!(
            !k.contains('=') && !k.contains('\n') && !v.contains('\n'),
            "header entry '{k}' cannot be written"
        );
    }
    let text = format_kv(pairs);
    let len = u32::try_from(text.len()).map_err(|_| Error::Format("header too long".into()))?;
    let mut out = Vec::with_capacity(10 + text.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    Ok(out)
}

fn read_header<'a>(bytes: &'a [u8], magic: &[u8; 6]) -> Result<(Vec<(String, String)>, &'a [u8])> {
    if bytes.len() < 10 || &bytes[..6] != magic {
        return Err(Error::Format(format!(
            "bad magic: expected {}",
            String::from_utf8_lossy(magic)
        )));
    }
    let len = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let body = &bytes[10..];
    if body.len() < len {
        return Err(Error::Format("truncated header".into()));
    }
    let text = std::str::from_utf8(&body[..len]).map_err(|_| Error::Format("header is not UTF-8".into()))?;
    Ok((parse_kv(text)?, &body[len..]))
}

fn push_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    out.reserve(8 * xs.len());
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn take_f64s(rest: &mut &[u8], n: usize) -> Result<Vec<f64>> {
    let bytes = n.checked_mul(8).filter(|&b| b <= rest.len()).ok_or_else(|| {
        Error::Format(format!(
            "block of {n} values exceeds the remaining {} bytes",
            rest.len()
        ))
    })?;
    let (head, tail) = rest.split_at(bytes);
    *rest = tail;
    Ok(head
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}
