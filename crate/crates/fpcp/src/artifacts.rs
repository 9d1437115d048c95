//! JSON artifacts: trained set functions and calibrated rules.
//!
//! Every artifact records the SHA-256 of the data it was fitted on
//! (`created_from`). Rules also record the SHA-256 of the model file they were
//! calibrated with (`set_function_id`), so a rule cannot be paired with a
//! different model at prediction time.

use std::path::Path;

use fpcp_core::setfn::{DeepSetsModel, Dense, PlattParams, TrainConfig};
use fpcp_core::Tolerance;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, Error, Result};
use crate::model::SetModel;

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn hash_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    Ok(sha256_hex(&std::fs::read(path).map_err(io_err(path))?))
}

/// A trained set function, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
#[allow(clippy::large_enum_variant)]
pub enum ModelArtifact {
    Deepsets {
        hidden_dim: usize,
        b_max: usize,
        enc: [Dense; 2],
        dec: [Dense; 2],
        config_echo: TrainConfig,
        created_from: String,
        /// Ids of the training examples, used to keep calibration data
        /// disjoint from training data.
        training_ids: Vec<String>,
    },
    Platt {
        a: f64,
        b: f64,
        created_from: String,
        training_ids: Vec<String>,
    },
    Max,
}

impl ModelArtifact {
    pub fn deepsets(
        model: DeepSetsModel,
        config: TrainConfig,
        created_from: String,
        training_ids: Vec<String>,
    ) -> Self {
        ModelArtifact::Deepsets {
            hidden_dim: model.hidden_dim,
            b_max: model.b_max,
            enc: model.enc,
            dec: model.dec,
            config_echo: config,
            created_from,
            training_ids,
        }
    }

    pub fn training_ids(&self) -> &[String] {
        match self {
            ModelArtifact::Deepsets { training_ids, .. }
            | ModelArtifact::Platt { training_ids, .. } => training_ids,
            ModelArtifact::Max => &[],
        }
    }

    /// Checks the parameters and converts to a usable set function.
    pub fn to_set_model(&self) -> Result<SetModel> {
        Ok(match self {
            ModelArtifact::Deepsets {
                hidden_dim,
                b_max,
                enc,
                dec,
                ..
            } => {
                let model = DeepSetsModel {
                    hidden_dim: *hidden_dim,
                    b_max: *b_max,
                    enc: enc.clone(),
                    dec: dec.clone(),
                };
                model.validate()?;
                SetModel::DeepSets(model)
            }
            ModelArtifact::Platt { a, b, .. } => {
                if !(a.is_finite() && b.is_finite()) {
                    return Err(Error::Invalid("Platt parameters must be finite".into()));
                }
                SetModel::Sum(PlattParams { a: *a, b: *b })
            }
            ModelArtifact::Max => SetModel::Max,
        })
    }
}

/// A loaded model with the hash of its file.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub artifact: ModelArtifact,
    pub model: SetModel,
    pub hash: String,
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LoadedModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let artifact: ModelArtifact =
        serde_json::from_slice(&bytes).map_err(|source| Error::Artifact {
            path: path.to_owned(),
            source,
        })?;
    Ok(LoadedModel {
        model: artifact.to_set_model()?,
        artifact,
        hash: sha256_hex(&bytes),
    })
}

pub fn save_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn load_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Artifact {
        path: path.to_owned(),
        source,
    })
}

/// Extended reals as JSON: finite values are numbers, infinities are the
/// strings `"+inf"` and `"-inf"`.
pub mod ext_real {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            Err(serde::ser::Error::custom("NaN is not an extended real"))
        } else if *v == f64::INFINITY {
            s.serialize_str("+inf")
        } else if *v == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "+inf" | "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(D::Error::custom(format!(
                    "expected a number, \"+inf\" or \"-inf\", got {other:?}"
                ))),
            },
        }
    }
}

/// What kind of rule a [`RuleArtifact`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleKind {
    /// FP-CP threshold for k-FP control.
    Kfp,
    /// FP-CP threshold for (k, delta)-FP control.
    Kdfp,
    Topk,
    Inner,
    Outer,
}

/// A calibrated prediction rule.
///
/// `t_star` is the FP-CP threshold for `kfp`/`kdfp`, the score cut `τ` for
/// `inner`/`outer`, and `+inf` for `topk`, which instead carries `k_prime`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleArtifact {
    pub kind: RuleKind,
    pub k: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(with = "ext_real")]
    pub t_star: f64,
    pub n: usize,
    pub b: usize,
    pub set_function_id: String,
    pub created_from: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_prime: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Calibration examples given a `-inf` nonconformity score.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentinels: Option<usize>,
}

impl RuleArtifact {
    pub fn tolerance(&self) -> Result<Tolerance> {
        Ok(match self.delta {
            Some(delta) => Tolerance::k_delta_fp(self.k, delta)?,
            None => Tolerance::k_fp(self.k)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule(t_star: f64) -> RuleArtifact {
        RuleArtifact {
            kind: RuleKind::Kfp,
            k: 5.0,
            delta: None,
            t_star,
            n: 800,
            b: 100,
            set_function_id: "m".into(),
            created_from: "d".into(),
            k_prime: None,
            epsilon: None,
            sentinels: None,
        }
    }

    #[test]
    fn infinite_thresholds_round_trip_as_strings() {
        for t in [
            f64::INFINITY,
            f64::NEG_INFINITY,
            0.123_456_789_012_345_6,
            -2.5,
        ] {
            let text = serde_json::to_string(&rule(t)).unwrap();
            let back: RuleArtifact = serde_json::from_str(&text).unwrap();
            assert_eq!(back.t_star, t);
        }
        let text = serde_json::to_string(&rule(f64::NEG_INFINITY)).unwrap();
        assert!(text.contains("\"t_star\":\"-inf\""));
        assert!(!text.contains("delta"));
    }

    #[test]
    fn model_kind_tags() {
        let m = ModelArtifact::Platt {
            a: 1.5,
            b: -0.25,
            created_from: "x".into(),
            training_ids: vec!["a".into()],
        };
        let v = serde_json::to_value(&m).unwrap();
        assert_eq!(v["kind"], "platt");
        let back: ModelArtifact = serde_json::from_value(v).unwrap();
        assert_eq!(back, m);
        assert_eq!(
            serde_json::to_string(&ModelArtifact::Max).unwrap(),
            "{\"kind\":\"max\"}"
        );
    }

    #[test]
    fn deepsets_artifact_round_trips_weights() {
        let model = DeepSetsModel::init(4, 6, 2);
        let art =
            ModelArtifact::deepsets(model.clone(), TrainConfig::default(), "h".into(), vec![]);
        let text = serde_json::to_string(&art).unwrap();
        let back: ModelArtifact = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_set_model().unwrap(), SetModel::DeepSets(model));
    }

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
