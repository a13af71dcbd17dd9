use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::write_atomic;
use crate::error::{Error, Result};
use crate::vsensor::VirtualSensorBank;

pub const BUNDLE_VERSION: u32 = 1;

const MAGIC: &str = "vsfdc-model-bundle";

/// The f⁻¹ and g banks trained together on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBundle {
    pub f_inverse: VirtualSensorBank,
    pub g: VirtualSensorBank,
}

/// Three parts: a `vsfdc-model-bundle <version>` line, a `sha256 <hex>` line
/// over the body, then the JSON body.
pub fn encode_bundle(bundle: &ModelBundle) -> Result<String> {
    let body = serde_json::to_string(bundle).map_err(|e| Error::Integrity(format!("cannot encode bundle: {e}")))?;
    let digest = hex::encode(Sha256::digest(body.as_bytes()));
    Ok(format!("{MAGIC} {BUNDLE_VERSION}\nsha256 {digest}\n{body}\n"))
}

pub fn decode_bundle(text: &str) -> Result<ModelBundle> {
    let (first, rest) = text
        .split_once('\n')
        .ok_or_else(|| Error::Integrity("missing bundle header".into()))?;
    let version = first
        .strip_prefix(MAGIC)
        .and_then(|v| v.trim().parse::<u32>().ok())
        .ok_or_else(|| Error::Integrity(format!("not a model bundle header: `{first}`")))?;
    if version != BUNDLE_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: BUNDLE_VERSION,
        });
    }
    let (second, body) = rest
        .split_once('\n')
        .ok_or_else(|| Error::Integrity("missing checksum line".into()))?;
    let expected = second
        .strip_prefix("sha256 ")
        .ok_or_else(|| Error::Integrity(format!("malformed checksum line: `{second}`")))?;
    let body = body
        .strip_suffix('\n')
        .ok_or_else(|| Error::Integrity("bundle body is truncated".into()))?;
    let actual = hex::encode(Sha256::digest(body.as_bytes()));
    if actual != expected {
        return Err(Error::Integrity(format!("checksum mismatch: header {expected}, body {actual}")));
    }
    serde_json::from_str(body).map_err(|e| Error::Integrity(format!("bundle body does not decode: {e}")))
}

pub fn save_model_bundle(bundle: &ModelBundle, path: &Path) -> Result<()> {
    write_atomic(path, encode_bundle(bundle)?.as_bytes())
}

pub fn load_model_bundle(path: &Path) -> Result<ModelBundle> {
    decode_bundle(&super::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::vsensor::{BankKind, TrainingManifest};
    use crate::regress::Technique;

    fn empty_bank(kind: BankKind) -> VirtualSensorBank {
        VirtualSensorBank {
            manifest: TrainingManifest {
                kind,
                dataset_id: "d".into(),
                split_seed: 3,
                config_hash: "c".into(),
                technique: Technique::Pcr,
                max_lv: 4,
                train_wafers: vec!["W001".into()],
                validation_wafers: vec!["W002".into()],
                withheld_wafers: vec![],
            },
            models: BTreeMap::new(),
            failures: BTreeMap::new(),
        }
    }

    fn bundle() -> ModelBundle {
        ModelBundle {
            f_inverse: empty_bank(BankKind::FInverse),
            g: empty_bank(BankKind::G),
        }
    }

    #[test]
    fn header_layout() {
        let text = encode_bundle(&bundle()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("vsfdc-model-bundle 1"));
        assert!(lines.next().unwrap().starts_with("sha256 "));
        assert_eq!(decode_bundle(&text).unwrap(), bundle());
    }

    #[test]
    fn future_version_is_rejected_before_anything_else() {
        let text = encode_bundle(&bundle()).unwrap().replacen("bundle 1", "bundle 2", 1);
        let cut = &text[..40];
        for t in [text.as_str(), cut] {
            assert!(matches!(
                decode_bundle(t),
                Err(Error::UnsupportedVersion { found: 2, supported: 1 })
            ));
        }
    }

    #[test]
    fn truncation_and_tampering_are_integrity_errors() {
        let text = encode_bundle(&bundle()).unwrap();
        for n in [0, 10, 30, text.len() / 2, text.len() - 1] {
            assert!(matches!(decode_bundle(&text[..n]), Err(Error::Integrity(_))), "cut at {n}");
        }
        let tampered = text.replacen("\"W001\"", "\"W009\"", 1);
        assert!(matches!(decode_bundle(&tampered), Err(Error::Integrity(_))));
    }
}
