//! Checkpoint directories: one SMPMAT01 file per weight matrix plus a
//! manifest.json carrying the config echo, structural metadata, and SHA-256
//! content hashes that are verified on load.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::{
    AdapterPair, AdapterSet, BackboneConfig, FrozenBackbone, LayerAdapters, LayerDeltas,
    LayerWeights, MergedAdapterSet,
};
use crate::datagen::sha256_file;
use crate::error::{Result, SmpError};
use crate::margin::CosineClassifier;
use crate::miam::MergeReport;
use crate::numerics::{read_matrix, write_matrix, DenseMatrix, DenseVector};
use crate::protocol::BaseTrainResult;

const FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub kind: String,
    pub version: String,
    pub config: serde_json::Value,
    pub backbone_config: BackboneConfig,
    pub patch_dim: usize,
    /// Base-train checkpoints only.
    #[serde(default)]
    pub base_classes: Vec<usize>,
    #[serde(default)]
    pub scale: f64,
    #[serde(default)]
    pub margin: f64,
    /// Relative file path -> sha256 of contents.
    pub files: BTreeMap<String, String>,
}

struct Writer {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Writer { dir: dir.to_path_buf(), files: BTreeMap::new() })
    }

    fn put_matrix(&mut self, name: &str, m: &DenseMatrix) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        write_matrix(&path, m)?;
        self.files.insert(name.to_string(), sha256_file(&path)?);
        Ok(())
    }

    fn put_vector(&mut self, name: &str, v: &[f64]) -> Result<()> {
        self.put_matrix(name, &DenseMatrix::from_vec(1, v.len(), v.to_vec())?)
    }

    fn put_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, serde_json::to_string_pretty(value)? + "\n")?;
        self.files.insert(name.to_string(), sha256_file(&path)?);
        Ok(())
    }

    fn finish(self, manifest: &CheckpointManifest) -> Result<()> {
        let mut manifest = manifest.clone();
        manifest.files = self.files;
        fs::write(
            self.dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)? + "\n",
        )?;
        Ok(())
    }
}

struct Reader {
    dir: PathBuf,
    manifest: CheckpointManifest,
}

impl Reader {
    fn open(dir: &Path) -> Result<Self> {
        let bytes = fs::read(dir.join("manifest.json"))?;
        let manifest: CheckpointManifest = serde_json::from_slice(&bytes)
            .map_err(|e| SmpError::Corrupt(format!("manifest.json: {e}")))?;
        Ok(Reader { dir: dir.to_path_buf(), manifest })
    }

    fn get_matrix(&self, name: &str) -> Result<DenseMatrix> {
        let want = self
            .manifest
            .files
            .get(name)
            .ok_or_else(|| SmpError::Corrupt(format!("manifest missing entry for {name}")))?;
        let path = self.dir.join(name);
        let got = sha256_file(&path)?;
        if got != *want {
            return Err(SmpError::Corrupt(format!("checksum mismatch for {name}")));
        }
        read_matrix(&path)
    }

    fn get_vector(&self, name: &str) -> Result<DenseVector> {
        let m = self.get_matrix(name)?;
        if m.rows() != 1 {
            return Err(SmpError::Corrupt(format!("{name} is not a row vector")));
        }
        Ok(m.data().to_vec())
    }
}

fn backbone_file_names(config: &BackboneConfig) -> Vec<(String, &'static str)> {
    let mut names = Vec::new();
    for l in 0..config.num_layers {
        for part in ["wq", "wk0", "wv0", "wout", "ffn1", "ffn2", "ln1s", "ln1b", "ln2s", "ln2b"] {
            names.push((format!("layer{l}.{part}.mat"), part));
        }
    }
    names
}

fn write_backbone_files(w: &mut Writer, prefix: &str, backbone: &FrozenBackbone) -> Result<()> {
    w.put_matrix(&format!("{prefix}patch_embed.mat"), &backbone.patch_embed)?;
    w.put_vector(&format!("{prefix}class_token.mat"), &backbone.class_token)?;
    for (l, lw) in backbone.layers.iter().enumerate() {
        w.put_matrix(&format!("{prefix}layer{l}.wq.mat"), &lw.w_q)?;
        w.put_matrix(&format!("{prefix}layer{l}.wk0.mat"), &lw.w_k0)?;
        w.put_matrix(&format!("{prefix}layer{l}.wv0.mat"), &lw.w_v0)?;
        w.put_matrix(&format!("{prefix}layer{l}.wout.mat"), &lw.w_out)?;
        w.put_matrix(&format!("{prefix}layer{l}.ffn1.mat"), &lw.ffn1)?;
        w.put_matrix(&format!("{prefix}layer{l}.ffn2.mat"), &lw.ffn2)?;
        w.put_vector(&format!("{prefix}layer{l}.ln1s.mat"), &lw.ln1_scale)?;
        w.put_vector(&format!("{prefix}layer{l}.ln1b.mat"), &lw.ln1_shift)?;
        w.put_vector(&format!("{prefix}layer{l}.ln2s.mat"), &lw.ln2_scale)?;
        w.put_vector(&format!("{prefix}layer{l}.ln2b.mat"), &lw.ln2_shift)?;
    }
    Ok(())
}

fn read_backbone_files(
    r: &Reader,
    prefix: &str,
    config: &BackboneConfig,
    patch_dim: usize,
) -> Result<FrozenBackbone> {
    config.validate()?;
    let patch_embed = r.get_matrix(&format!("{prefix}patch_embed.mat"))?;
    let class_token = r.get_vector(&format!("{prefix}class_token.mat"))?;
    let mut layers = Vec::with_capacity(config.num_layers);
    for l in 0..config.num_layers {
        layers.push(LayerWeights {
            w_q: r.get_matrix(&format!("{prefix}layer{l}.wq.mat"))?,
            w_k0: r.get_matrix(&format!("{prefix}layer{l}.wk0.mat"))?,
            w_v0: r.get_matrix(&format!("{prefix}layer{l}.wv0.mat"))?,
            w_out: r.get_matrix(&format!("{prefix}layer{l}.wout.mat"))?,
            ffn1: r.get_matrix(&format!("{prefix}layer{l}.ffn1.mat"))?,
            ffn2: r.get_matrix(&format!("{prefix}layer{l}.ffn2.mat"))?,
            ln1_scale: r.get_vector(&format!("{prefix}layer{l}.ln1s.mat"))?,
            ln1_shift: r.get_vector(&format!("{prefix}layer{l}.ln1b.mat"))?,
            ln2_scale: r.get_vector(&format!("{prefix}layer{l}.ln2s.mat"))?,
            ln2_shift: r.get_vector(&format!("{prefix}layer{l}.ln2b.mat"))?,
        });
    }
    let backbone = FrozenBackbone {
        config: config.clone(),
        patch_dim,
        patch_embed,
        class_token,
        layers,
    };
    if backbone.patch_embed.rows() != patch_dim
        || backbone.patch_embed.cols() != config.embed_dim
    {
        return Err(SmpError::Corrupt("patch embedding shape disagrees with manifest".into()));
    }
    Ok(backbone)
}

/// Save a pretrained encoder with a config echo.
pub fn save_backbone(
    dir: &Path,
    backbone: &FrozenBackbone,
    config_echo: &serde_json::Value,
) -> Result<()> {
    let mut w = Writer::new(dir)?;
    write_backbone_files(&mut w, "", backbone)?;
    w.finish(&CheckpointManifest {
        kind: "backbone".into(),
        version: FORMAT_VERSION.into(),
        config: config_echo.clone(),
        backbone_config: backbone.config.clone(),
        patch_dim: backbone.patch_dim,
        base_classes: Vec::new(),
        scale: 0.0,
        margin: 0.0,
        files: BTreeMap::new(),
    })
}

pub fn load_backbone(dir: &Path) -> Result<(FrozenBackbone, serde_json::Value)> {
    let r = Reader::open(dir)?;
    if r.manifest.kind != "backbone" {
        return Err(SmpError::Corrupt(format!(
            "expected a backbone checkpoint, found kind {:?}",
            r.manifest.kind
        )));
    }
    let backbone =
        read_backbone_files(&r, "", &r.manifest.backbone_config, r.manifest.patch_dim)?;
    Ok((backbone, r.manifest.config.clone()))
}

fn write_adapter_set(w: &mut Writer, subdir: &str, set: &AdapterSet) -> Result<()> {
    for (l, layer) in set.layers.iter().enumerate() {
        w.put_matrix(&format!("{subdir}/adapters.layer{l}.ak.mat"), &layer.key.a)?;
        w.put_matrix(&format!("{subdir}/adapters.layer{l}.bk.mat"), &layer.key.b)?;
        w.put_matrix(&format!("{subdir}/adapters.layer{l}.av.mat"), &layer.value.a)?;
        w.put_matrix(&format!("{subdir}/adapters.layer{l}.bv.mat"), &layer.value.b)?;
    }
    Ok(())
}

fn read_adapter_set(r: &Reader, subdir: &str, num_layers: usize) -> Result<AdapterSet> {
    let mut layers = Vec::with_capacity(num_layers);
    for l in 0..num_layers {
        layers.push(LayerAdapters {
            key: AdapterPair {
                a: r.get_matrix(&format!("{subdir}/adapters.layer{l}.ak.mat"))?,
                b: r.get_matrix(&format!("{subdir}/adapters.layer{l}.bk.mat"))?,
            },
            value: AdapterPair {
                a: r.get_matrix(&format!("{subdir}/adapters.layer{l}.av.mat"))?,
                b: r.get_matrix(&format!("{subdir}/adapters.layer{l}.bv.mat"))?,
            },
        });
    }
    Ok(AdapterSet { layers })
}

/// Save the full base-task training output: an embedded copy of the frozen
/// backbone, both adapter sets with their classifiers, the merged update
/// blocks, base prototypes, and the merge diagnostics.
pub fn save_base_train(
    dir: &Path,
    backbone: &FrozenBackbone,
    result: &BaseTrainResult,
    config_echo: &serde_json::Value,
) -> Result<()> {
    let mut w = Writer::new(dir)?;
    write_backbone_files(&mut w, "backbone/", backbone)?;
    write_adapter_set(&mut w, "discriminative", &result.adapters_d)?;
    write_adapter_set(&mut w, "generalization", &result.adapters_g)?;
    w.put_matrix("discriminative/clf.mat", &result.clf_d.weights)?;
    w.put_matrix("generalization/clf.mat", &result.clf_g.weights)?;
    for (l, layer) in result.merged.layers.iter().enumerate() {
        w.put_matrix(&format!("merged.layer{l}.dk.mat"), &layer.key)?;
        w.put_matrix(&format!("merged.layer{l}.dv.mat"), &layer.value)?;
    }
    let d = backbone.config.embed_dim;
    let mut protos = DenseMatrix::zeros(result.base_prototypes.len(), d);
    for (i, p) in result.base_prototypes.iter().enumerate() {
        protos.row_mut(i).copy_from_slice(p);
    }
    w.put_matrix("prototypes.mat", &protos)?;
    w.put_json("merge_report.json", &result.merge_report)?;
    w.finish(&CheckpointManifest {
        kind: "base-train".into(),
        version: FORMAT_VERSION.into(),
        config: config_echo.clone(),
        backbone_config: backbone.config.clone(),
        patch_dim: backbone.patch_dim,
        base_classes: result.base_classes.clone(),
        scale: result.clf_d.scale,
        margin: result.clf_d.margin,
        files: BTreeMap::new(),
    })
}

pub fn load_base_train(
    dir: &Path,
) -> Result<(FrozenBackbone, BaseTrainResult, serde_json::Value)> {
    let r = Reader::open(dir)?;
    if r.manifest.kind != "base-train" {
        return Err(SmpError::Corrupt(format!(
            "expected a base-train checkpoint, found kind {:?}",
            r.manifest.kind
        )));
    }
    let config = &r.manifest.backbone_config;
    let backbone = read_backbone_files(&r, "backbone/", config, r.manifest.patch_dim)?;
    let adapters_d = read_adapter_set(&r, "discriminative", config.num_layers)?;
    let adapters_g = read_adapter_set(&r, "generalization", config.num_layers)?;
    let clf_d = CosineClassifier::new(
        r.get_matrix("discriminative/clf.mat")?,
        r.manifest.scale,
        r.manifest.margin,
    )?;
    let clf_g =
        CosineClassifier::new(r.get_matrix("generalization/clf.mat")?, r.manifest.scale, 0.0)?;
    let mut merged_layers = Vec::with_capacity(config.num_layers);
    for l in 0..config.num_layers {
        merged_layers.push(LayerDeltas {
            key: r.get_matrix(&format!("merged.layer{l}.dk.mat"))?,
            value: r.get_matrix(&format!("merged.layer{l}.dv.mat"))?,
        });
    }
    let protos = r.get_matrix("prototypes.mat")?;
    if protos.rows() != r.manifest.base_classes.len() {
        return Err(SmpError::Corrupt("prototype count disagrees with base classes".into()));
    }
    let base_prototypes: Vec<DenseVector> =
        (0..protos.rows()).map(|i| protos.row(i).to_vec()).collect();
    let report_path = dir.join("merge_report.json");
    let want = r
        .manifest
        .files
        .get("merge_report.json")
        .ok_or_else(|| SmpError::Corrupt("manifest missing merge_report.json".into()))?;
    if sha256_file(&report_path)? != *want {
        return Err(SmpError::Corrupt("checksum mismatch for merge_report.json".into()));
    }
    let merge_report: MergeReport = serde_json::from_slice(&fs::read(report_path)?)?;
    let result = BaseTrainResult {
        adapters_d,
        clf_d,
        adapters_g,
        clf_g,
        merged: MergedAdapterSet { layers: merged_layers },
        base_classes: r.manifest.base_classes.clone(),
        base_prototypes,
        merge_report,
    };
    Ok((backbone, result, r.manifest.config.clone()))
}

/// Stable digest over every file the manifest lists, plus the manifest
/// itself. Two checkpoints with equal content hash are byte-identical.
pub fn checkpoint_content_hash(dir: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let r = Reader::open(dir)?;
    let mut hasher = Sha256::new();
    for (name, _) in &r.manifest.files {
        hasher.update(name.as_bytes());
        hasher.update(fs::read(dir.join(name))?);
    }
    hasher.update(fs::read(dir.join("manifest.json"))?);
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Names the manifest of a backbone checkpoint must cover.
pub fn expected_backbone_files(config: &BackboneConfig) -> Vec<String> {
    let mut names: Vec<String> =
        backbone_file_names(config).into_iter().map(|(n, _)| n).collect();
    names.push("patch_embed.mat".into());
    names.push("class_token.mat".into());
    names.sort();
    names
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::tests::{random_adapters, small_backbone};
    use crate::miam::MergeReportRow;
    use crate::numerics::SeededRng;

    fn sample_result(backbone: &FrozenBackbone) -> BaseTrainResult {
        let mut rng = SeededRng::new(71);
        let d = backbone.config.embed_dim;
        let adapters_d = random_adapters(&backbone.config, 2, 72);
        let adapters_g = random_adapters(&backbone.config, 2, 73);
        let clf = |margin: f64, rng: &mut SeededRng| {
            CosineClassifier::new(
                DenseMatrix::from_vec(d, 4, rng.normal_vec(d * 4, 1.0)).unwrap(),
                16.0,
                margin,
            )
            .unwrap()
        };
        let merged = adapters_d.to_merged();
        BaseTrainResult {
            clf_d: clf(0.2, &mut rng),
            clf_g: clf(0.0, &mut rng),
            adapters_d,
            adapters_g,
            merged,
            base_classes: vec![0, 1, 2, 3],
            base_prototypes: (0..4).map(|_| rng.normal_vec(d, 1.0)).collect(),
            merge_report: vec![MergeReportRow {
                layer: 0,
                block: "key".into(),
                frob_d: 1.0,
                frob_g: 3.0,
                fis_d: 0.25,
                fis_g: 0.75,
                fallback: false,
            }],
        }
    }

    #[test]
    fn backbone_roundtrip_and_manifest_coverage() {
        let backbone = small_backbone(70);
        let dir = tempfile::tempdir().unwrap();
        let echo = serde_json::json!({"seed": 70});
        save_backbone(dir.path(), &backbone, &echo).unwrap();
        let (back, config) = load_backbone(dir.path()).unwrap();
        assert_eq!(back, backbone);
        assert_eq!(config, echo);

        // The manifest lists every expected matrix file.
        let r = Reader::open(dir.path()).unwrap();
        for name in expected_backbone_files(&backbone.config) {
            assert!(r.manifest.files.contains_key(&name), "missing {name}");
        }
    }

    #[test]
    fn backbone_checkpoint_deterministic() {
        let backbone = small_backbone(74);
        let echo = serde_json::json!({"seed": 74});
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        save_backbone(a.path(), &backbone, &echo).unwrap();
        save_backbone(b.path(), &backbone, &echo).unwrap();
        assert_eq!(
            checkpoint_content_hash(a.path()).unwrap(),
            checkpoint_content_hash(b.path()).unwrap()
        );
    }

    #[test]
    fn base_train_roundtrip() {
        let backbone = small_backbone(75);
        let result = sample_result(&backbone);
        let dir = tempfile::tempdir().unwrap();
        let echo = serde_json::json!({"seed": 75});
        save_base_train(dir.path(), &backbone, &result, &echo).unwrap();
        let (bb, back, config) = load_base_train(dir.path()).unwrap();
        assert_eq!(bb, backbone);
        assert_eq!(config, echo);
        assert_eq!(back.adapters_d, result.adapters_d);
        assert_eq!(back.adapters_g, result.adapters_g);
        assert_eq!(back.clf_d, result.clf_d);
        assert_eq!(back.clf_g, result.clf_g);
        assert_eq!(back.merged, result.merged);
        assert_eq!(back.base_classes, result.base_classes);
        assert_eq!(back.merge_report, result.merge_report);
        for (a, b) in back.base_prototypes.iter().zip(&result.base_prototypes) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn corruption_detected() {
        let backbone = small_backbone(76);
        let result = sample_result(&backbone);
        let dir = tempfile::tempdir().unwrap();
        save_base_train(dir.path(), &backbone, &result, &serde_json::json!({})).unwrap();
        let victim = dir.path().join("merged.layer0.dk.mat");
        let mut bytes = fs::read(&victim).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        fs::write(&victim, bytes).unwrap();
        match load_base_train(dir.path()) {
            Err(SmpError::Corrupt(_)) => {}
            other => panic!("expected corruption, got {other:?}"),
        }
        // Missing checkpoint -> IO error (exit code 3 either way).
        match load_backbone(&dir.path().join("absent")) {
            Err(e) => assert_eq!(e.exit_code(), 3),
            Ok(_) => panic!("expected error"),
        }
    }

    #[test]
    fn wrong_kind_rejected() {
        let backbone = small_backbone(77);
        let dir = tempfile::tempdir().unwrap();
        save_backbone(dir.path(), &backbone, &serde_json::json!({})).unwrap();
        assert!(matches!(load_base_train(dir.path()), Err(SmpError::Corrupt(_))));
    }
}
