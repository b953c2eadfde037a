//! Seeded synthetic data: class-conditional patch-structured samples with a
//! disjoint pretext split, saved as a fixture directory of binary matrices
//! plus a JSON manifest with content checksums.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SmpError};
use crate::numerics::{read_matrix, write_matrix, DenseMatrix, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub samples_per_class_train: usize,
    pub samples_per_class_test: usize,
    pub num_patches: usize,
    pub patch_dim: usize,
    /// Std of the per-coordinate template draw; larger values spread the
    /// class means further apart relative to the sample noise.
    pub class_separation: f64,
    pub noise_sigma: f64,
    pub pretext_classes: usize,
    pub pretext_samples_per_class: usize,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2
            || self.samples_per_class_train == 0
            || self.samples_per_class_test == 0
            || self.num_patches == 0
            || self.patch_dim == 0
            || self.pretext_classes < 2
            || self.pretext_samples_per_class == 0
        {
            return Err(SmpError::Input("synthetic spec has non-positive counts".into()));
        }
        if self.class_separation <= 0.0 || self.noise_sigma < 0.0 {
            return Err(SmpError::Input(
                "class_separation must be > 0 and noise_sigma >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn sample_len(&self) -> usize {
        self.num_patches * self.patch_dim
    }
}

/// One labeled split: row i of `samples` belongs to class `labels[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub samples: DenseMatrix,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter_owned(&self) -> impl Iterator<Item = (Vec<f64>, usize)> + '_ {
        (0..self.len()).map(|i| (self.samples.row(i).to_vec(), self.labels[i]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFixture {
    pub spec: SyntheticSpec,
    pub seed: u64,
    pub train: Split,
    pub test: Split,
    pub pretext_train: Split,
    pub pretext_test: Split,
}

fn fill_split(
    templates: &[Vec<f64>],
    first_class_id: usize,
    per_class: usize,
    noise_sigma: f64,
    rng: &mut SeededRng,
) -> Result<Split> {
    let dim = templates[0].len();
    let n = templates.len() * per_class;
    let mut samples = DenseMatrix::zeros(n, dim);
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for (c, template) in templates.iter().enumerate() {
        for _ in 0..per_class {
            let dst = samples.row_mut(row);
            for (j, t) in template.iter().enumerate() {
                dst[j] = t + noise_sigma * rng.next_normal();
            }
            labels.push(first_class_id + c);
            row += 1;
        }
    }
    Ok(Split { samples, labels })
}

/// Draw per-class templates and noisy samples around them. FSCIL classes get
/// ids 0..num_classes; pretext classes continue from there, from independent
/// RNG substreams.
pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<DatasetFixture> {
    spec.validate()?;
    let root = SeededRng::new(seed);
    let dim = spec.sample_len();

    let draw_templates = |rng: &mut SeededRng, count: usize| -> Vec<Vec<f64>> {
        (0..count).map(|_| rng.normal_vec(dim, spec.class_separation)).collect()
    };

    let mut t_rng = root.substream("templates", 0);
    let templates = draw_templates(&mut t_rng, spec.num_classes);
    let mut pt_rng = root.substream("pretext-templates", 0);
    let pretext_templates = draw_templates(&mut pt_rng, spec.pretext_classes);

    let train = fill_split(
        &templates,
        0,
        spec.samples_per_class_train,
        spec.noise_sigma,
        &mut root.substream("train", 0),
    )?;
    let test = fill_split(
        &templates,
        0,
        spec.samples_per_class_test,
        spec.noise_sigma,
        &mut root.substream("test", 0),
    )?;
    let pretext_train = fill_split(
        &pretext_templates,
        spec.num_classes,
        spec.pretext_samples_per_class,
        spec.noise_sigma,
        &mut root.substream("pretext-train", 0),
    )?;
    let pretext_test = fill_split(
        &pretext_templates,
        spec.num_classes,
        spec.samples_per_class_test,
        spec.noise_sigma,
        &mut root.substream("pretext-test", 0),
    )?;

    Ok(DatasetFixture { spec: spec.clone(), seed, train, test, pretext_train, pretext_test })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FixtureManifest {
    spec: SyntheticSpec,
    seed: u64,
    checksums: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

const SPLIT_NAMES: [&str; 4] = ["train", "test", "pretext_train", "pretext_test"];

fn labels_matrix(labels: &[usize]) -> Result<DenseMatrix> {
    DenseMatrix::from_vec(1, labels.len(), labels.iter().map(|l| *l as f64).collect())
}

fn labels_from_matrix(m: &DenseMatrix) -> Result<Vec<usize>> {
    if m.rows() != 1 {
        return Err(SmpError::Corrupt(format!("label matrix has {} rows, expected 1", m.rows())));
    }
    m.data()
        .iter()
        .map(|v| {
            if *v < 0.0 || v.fract() != 0.0 {
                Err(SmpError::Corrupt(format!("label {v} is not a class id")))
            } else {
                Ok(*v as usize)
            }
        })
        .collect()
}

/// Write manifest.json plus one samples/labels matrix pair per split.
pub fn save_fixture(fixture: &DatasetFixture, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let splits = [
        &fixture.train,
        &fixture.test,
        &fixture.pretext_train,
        &fixture.pretext_test,
    ];
    let mut checksums = BTreeMap::new();
    for (name, split) in SPLIT_NAMES.iter().zip(splits) {
        for (suffix, matrix) in
            [("samples", split.samples.clone()), ("labels", labels_matrix(&split.labels)?)]
        {
            let file = format!("{name}.{suffix}.mat");
            let path = dir.join(&file);
            write_matrix(&path, &matrix)?;
            checksums.insert(file, sha256_file(&path)?);
        }
    }
    let manifest = FixtureManifest {
        spec: fixture.spec.clone(),
        seed: fixture.seed,
        checksums,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

/// Load and checksum-verify a fixture directory.
pub fn load_fixture(dir: &Path) -> Result<DatasetFixture> {
    let manifest_bytes = fs::read(dir.join("manifest.json"))?;
    let manifest: FixtureManifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| SmpError::Corrupt(format!("manifest.json: {e}")))?;
    manifest.spec.validate()?;

    let mut splits = Vec::with_capacity(4);
    for name in SPLIT_NAMES {
        let mut matrices = Vec::with_capacity(2);
        for suffix in ["samples", "labels"] {
            let file = format!("{name}.{suffix}.mat");
            let path = dir.join(&file);
            let want = manifest
                .checksums
                .get(&file)
                .ok_or_else(|| SmpError::Corrupt(format!("manifest missing checksum for {file}")))?;
            let got = sha256_file(&path)?;
            if got != *want {
                return Err(SmpError::Corrupt(format!("checksum mismatch for {file}")));
            }
            matrices.push(read_matrix(&path)?);
        }
        let labels = labels_from_matrix(&matrices[1])?;
        let samples = matrices.swap_remove(0);
        if samples.rows() != labels.len() {
            return Err(SmpError::Corrupt(format!(
                "{name}: {} samples but {} labels",
                samples.rows(),
                labels.len()
            )));
        }
        splits.push(Split { samples, labels });
    }
    let pretext_test = splits.pop().unwrap();
    let pretext_train = splits.pop().unwrap();
    let test = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    Ok(DatasetFixture {
        spec: manifest.spec,
        seed: manifest.seed,
        train,
        test,
        pretext_train,
        pretext_test,
    })
}

impl From<serde_json::Error> for SmpError {
    fn from(e: serde_json::Error) -> Self {
        SmpError::Corrupt(format!("json: {e}"))
    }
}
