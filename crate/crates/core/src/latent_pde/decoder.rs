use std::fmt;
use std::str::FromStr;

use super::mlp::{MlpSpec, MlpVars};
use crate::error::{contract, Error, Result};
use crate::numcore::{Activation, Graph, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoderMode {
    /// First `D` latent components, no parameters.
    Selector,
    /// Parametric per-node MLP from `d` to `D`.
    Mlp,
}

impl fmt::Display for DecoderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderMode::Selector => "selector",
            DecoderMode::Mlp => "mlp",
        })
    }
}

impl FromStr for DecoderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "selector" => Ok(DecoderMode::Selector),
            "mlp" => Ok(DecoderMode::Mlp),
            _ => Err(Error::Contract(format!("unknown decoder mode '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderConfig {
    pub mode: DecoderMode,
    pub obs_dim: usize,
    pub hidden: Vec<usize>,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            mode: DecoderMode::Selector,
            obs_dim: 1,
            hidden: vec![32],
        }
    }
}

impl DecoderConfig {
    /// `None` for the parameter-free selector.
    pub fn mlp_spec(&self, latent_dim: usize) -> Option<MlpSpec> {
        match self.mode {
            DecoderMode::Selector => None,
            DecoderMode::Mlp => Some(MlpSpec::new(latent_dim, &self.hidden, self.obs_dim, Activation::Relu)),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Decoder {
    Selector { obs_dim: usize },
    Mlp(MlpVars),
}

/// Maps latent rows (R × d) to observation means (R × D).
pub fn decode(g: &mut Graph, decoder: &Decoder, z: Var) -> Result<Var> {
    match decoder {
        Decoder::Selector { obs_dim } => {
            let d = g.shape(z)[1];
            contract!(
                *obs_dim <= d,
                "selector decoder cannot return {obs_dim} components of a {d}-dim state"
            );
            if *obs_dim == d {
                Ok(z)
            } else {
                g.cols(z, 0, *obs_dim)
            }
        }
        Decoder::Mlp(mlp) => mlp.forward(g, z),
    }
}
