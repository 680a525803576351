//! JSON model files.
//!
//! Matrices are row-major nested arrays under the keys `F`, `G`, `H`, `W`, `V`,
//! `L` and the optional `Sigma1`. Channel files add `P` and an optional
//! `Lambda` (identity by default).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FbcapError, Result};
use crate::linalg::{from_rows, to_rows, Mat};
use crate::state_space::{ChannelModel, StateSpaceNoise};

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct ModelFile {
    pub F: Rows,
    pub G: Rows,
    pub H: Rows,
    pub W: Rows,
    pub V: Rows,
    pub L: Rows,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub Sigma1: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub Lambda: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub P: Option<f64>,
}

impl ModelFile {
    pub fn noise(&self) -> Result<StateSpaceNoise> {
        StateSpaceNoise::new(
            from_rows(&self.F, "F")?,
            from_rows(&self.G, "G")?,
            from_rows(&self.H, "H")?,
            from_rows(&self.W, "W")?,
            from_rows(&self.V, "V")?,
            from_rows(&self.L, "L")?,
            self.Sigma1.as_ref().map(|s| from_rows(s, "Sigma1")).transpose()?,
        )
    }

    pub fn channel(&self) -> Result<ChannelModel> {
        let noise = self.noise()?;
        let power = self
            .P
            .ok_or_else(|| FbcapError::InvalidConfig("channel file is missing \"P\"".into()))?;
        let lambda = match &self.Lambda {
            Some(rows) => from_rows(rows, "Lambda")?,
            None => Mat::identity(noise.p(), noise.p()),
        };
        ChannelModel::new(lambda, power, noise)
    }

    pub fn from_noise(noise: &StateSpaceNoise) -> Self {
        Self {
            F: to_rows(noise.f()),
            G: to_rows(noise.g()),
            H: to_rows(noise.h()),
            W: to_rows(noise.w()),
            V: to_rows(noise.v()),
            L: to_rows(noise.l()),
            Sigma1: Some(to_rows(noise.sigma1())),
            Lambda: None,
            P: None,
        }
    }

    pub fn from_channel(channel: &ChannelModel) -> Self {
        Self {
            Lambda: Some(to_rows(channel.lambda())),
            P: Some(channel.power()),
            ..Self::from_noise(channel.noise())
        }
    }
}

pub fn parse_model(text: &str) -> Result<ModelFile> {
    let file: ModelFile = serde_json::from_str(text)?;
    if let Some(p) = file.P {
        if !p.is_finite() {
            return Err(FbcapError::NonFinite("P".into()));
        }
    }
    Ok(file)
}

pub fn read_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    parse_model(&std::fs::read_to_string(path)?)
}

pub fn read_noise(path: impl AsRef<Path>) -> Result<StateSpaceNoise> {
    read_model(path)?.noise()
}

pub fn read_channel(path: impl AsRef<Path>) -> Result<ChannelModel> {
    read_model(path)?.channel()
}

pub fn channel_to_json(channel: &ChannelModel) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ModelFile::from_channel(channel))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let ch = ChannelModel::identity(2.0, StateSpaceNoise::ar1(0.3).unwrap()).unwrap();
        let text = channel_to_json(&ch).unwrap();
        let back = parse_model(&text).unwrap().channel().unwrap();
        assert_eq!(back, ch);
    }

    #[test]
    fn lambda_defaults_to_identity() {
        let text = r#"{"F":[[0]],"G":[[1]],"H":[[0.5]],"W":[[1]],"V":[[1]],"L":[[1]],"P":1}"#;
        let ch = parse_model(text).unwrap().channel().unwrap();
        assert_eq!(ch.lambda(), &Mat::identity(1, 1));
    }

    #[test]
    fn rejects_malformed() {
        assert!(parse_model("{").is_err());
        assert!(parse_model(r#"{"F":[[NaN]]}"#).is_err());
        let missing_p = r#"{"F":[[0]],"G":[[1]],"H":[[0.5]],"W":[[1]],"V":[[1]],"L":[[1]]}"#;
        assert!(parse_model(missing_p).unwrap().channel().is_err());
        let ragged = r#"{"F":[[0,1],[0]],"G":[[1]],"H":[[0.5]],"W":[[1]],"V":[[1]],"L":[[1]]}"#;
        assert!(parse_model(ragged).unwrap().noise().is_err());
    }
}
