//! Flat `key=value` configuration text with named keys for every default.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::latent_pde::{DecoderConfig, DynamicsConfig, SolverConfig};
use crate::model::ModelConfig;
use crate::spatial::Stencil;

/// A configuration that can be read from and written to `key=value` pairs.
pub trait KeyValue {
    fn set(&mut self, key: &str, value: &str) -> Result<()>;

    /// Every key with its current value, in a fixed order.
    fn pairs(&self) -> Vec<(String, String)>;

    fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        pairs.iter().try_for_each(|(k, v)| self.set(k, v))
    }
}

/// Parses `key=value` lines; blank lines and lines starting with `#` are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("line {}: expected key=value, got '{line}'", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn format_kv(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Format(format!("invalid value '{value}' for key {key}")))
}

/// Comma-separated list; the empty string is the empty list.
pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_value(key, v.trim())).collect()
}

pub fn format_list<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Shortest text that parses back to the same `f64`.
pub fn float(v: f64) -> String {
    format!("{v:?}")
}

fn kv(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

fn set_stencil(s: &mut Stencil, key: &str, value: &str) -> Result<()> {
    let (mut r, mut c, mut p) = (s.radius, s.n_circles, s.points_per_circle);
    match key {
        "radius" => r = parse_value(key, value)?,
        "circles" => c = parse_value(key, value)?,
        "points" => p = parse_value(key, value)?,
        _ => return Err(Error::Format(format!("unknown key stencil.{key}"))),
    }
    *s = Stencil::new(r, c, p)?;
    Ok(())
}

fn set_dynamics(d: &mut DynamicsConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "hidden" => d.hidden = parse_list(key, value)?,
        "activation" => d.activation = parse_value(key, value)?,
        "latent_dim" => d.latent_dim = parse_value(key, value)?,
        "interp" => d.method = parse_value(key, value)?,
        _ => return Err(Error::Format(format!("unknown key dynamics.{key}"))),
    }
    Ok(())
}

fn set_decoder(d: &mut DecoderConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "mode" => d.mode = parse_value(key, value)?,
        "obs_dim" => d.obs_dim = parse_value(key, value)?,
        "hidden" => d.hidden = parse_list(key, value)?,
        _ => return Err(Error::Format(format!("unknown key decoder.{key}"))),
    }
    Ok(())
}

fn set_solver(s: &mut SolverConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "method" => s.method = parse_value(key, value)?,
        "rtol" => s.rtol = parse_value(key, value)?,
        "atol" => s.atol = parse_value(key, value)?,
        "max_steps" => s.max_steps = parse_value(key, value)?,
        "step" => s.step = parse_value(key, value)?,
        _ => return Err(Error::Format(format!("unknown key solver.{key}"))),
    }
    Ok(())
}

impl KeyValue for ModelConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (section, rest) = key.split_once('.').unwrap_or(("", key));
        match section {
            "stencil" => set_stencil(&mut self.dynamics.stencil, rest, value),
            "dynamics" => set_dynamics(&mut self.dynamics, rest, value),
            "decoder" => set_decoder(&mut self.decoder, rest, value),
            "solver" => set_solver(&mut self.solver, rest, value),
            "encoder" => {
                let e = &mut self.encoder;
                match rest {
                    "embed" => e.embed = parse_value(key, value)?,
                    "layers" => e.layers = parse_value(key, value)?,
                    "heads" => e.heads = parse_value(key, value)?,
                    "delta_t" => e.delta_t = parse_value(key, value)?,
                    "n_freq" => e.n_freq = parse_value(key, value)?,
                    _ => return Err(Error::Format(format!("unknown key {key}"))),
                }
                Ok(())
            }
            "prior" => {
                match rest {
                    "sigma_u" => self.prior.sigma_u = parse_value(key, value)?,
                    "sigma_c" => self.prior.sigma_c = parse_value(key, value)?,
                    "init_std" => self.init_std = parse_value(key, value)?,
                    _ => return Err(Error::Format(format!("unknown key {key}"))),
                }
                Ok(())
            }
            _ => Err(Error::Format(format!("unknown key {key}"))),
        }
    }

    fn pairs(&self) -> Vec<(String, String)> {
        let (d, e, c, s) = (&self.dynamics, &self.encoder, &self.decoder, &self.solver);
        vec![
            kv("stencil.radius", float(d.stencil.radius)),
            kv("stencil.circles", d.stencil.n_circles),
            kv("stencil.points", d.stencil.points_per_circle),
            kv("dynamics.hidden", format_list(&d.hidden)),
            kv("dynamics.activation", d.activation),
            kv("dynamics.latent_dim", d.latent_dim),
            kv("dynamics.interp", d.method),
            kv("encoder.embed", e.embed),
            kv("encoder.layers", e.layers),
            kv("encoder.heads", e.heads),
            kv("encoder.delta_t", float(e.delta_t)),
            kv("encoder.n_freq", e.n_freq),
            kv("decoder.mode", c.mode),
            kv("decoder.obs_dim", c.obs_dim),
            kv("decoder.hidden", format_list(&c.hidden)),
            kv("solver.method", s.method),
            kv("solver.rtol", float(s.rtol)),
            kv("solver.atol", float(s.atol)),
            kv("solver.max_steps", s.max_steps),
            kv("solver.step", float(s.step)),
            kv("prior.sigma_u", float(self.prior.sigma_u)),
            kv("prior.sigma_c", float(self.prior.sigma_c)),
            kv("prior.init_std", float(self.init_std)),
        ]
    }
}
