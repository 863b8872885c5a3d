use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::tensor::{read_tensor, write_tensor};
use crate::{Error, Result, Tensor};

pub const DEFAULT_LABELS: [&str; 8] = ["Wall", "Floor", "Ceiling", "Chair", "Table", "Bed", "Sofa", "Others"];

/// Label names with one embedding row each.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    names: Vec<String>,
    embeddings: Tensor<f32>,
}

#[derive(Serialize, Deserialize)]
struct LabelFile {
    names: Vec<String>,
    embeddings: String,
}

impl LabelSet {
    pub fn new(names: Vec<String>, embeddings: Tensor<f32>) -> Result<Self> {
        let (k, _) = match embeddings.dims() {
            &[k, d] if d > 0 => (k, d),
            d => return Err(Error::shape(format!("label embeddings must be [K,d], got {d:?}"))),
        };
        if k != names.len() || k == 0 {
            return Err(Error::shape(format!("{} names for {k} embeddings", names.len())));
        }
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != names.len() {
            return Err(Error::invalid("label names must be unique"));
        }
        let set = LabelSet { names, embeddings };
        for i in 0..k {
            if super::norm(set.embedding(i)) == 0.0 {
                return Err(Error::invalid(format!("embedding for {:?} is zero", set.names[i])));
            }
        }
        Ok(set)
    }

    /// Orthonormal random embeddings, for tests and synthetic scenes.
    pub fn synthetic(names: &[&str], dim: usize, seed: u64) -> Result<Self> {
        if names.len() > dim {
            return Err(Error::invalid(format!("{} orthonormal labels need dim >= {}", names.len(), names.len())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        while rows.len() < names.len() {
            let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            for r in &rows {
                let d = super::dot(&v, r);
                v.iter_mut().zip(r).for_each(|(a, b)| *a -= d * b);
            }
            let n = super::norm(&v);
            if n > 1e-6 {
                rows.push(v.into_iter().map(|x| x / n).collect());
            }
        }
        let data = rows.into_iter().flatten().map(|v| v as f32).collect();
        LabelSet::new(names.iter().map(|s| s.to_string()).collect(), Tensor::new(vec![names.len(), dim], data)?)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dims()[1]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn embeddings(&self) -> &Tensor<f32> {
        &self.embeddings
    }

    pub fn embedding(&self, k: usize) -> &[f32] {
        let d = self.dim();
        &self.embeddings.data()[k * d..(k + 1) * d]
    }

    /// Index of the "Others" label, or the last label when absent.
    pub fn others_index(&self) -> usize {
        self.names.iter().position(|n| n.eq_ignore_ascii_case("others")).unwrap_or(self.names.len() - 1)
    }

    /// Loads a TOML file `names = [...]`, `embeddings = "<file>.sspt"`;
    /// the tensor path is relative to the TOML file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
        let file: LabelFile = toml::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))?;
        let root = path.parent().unwrap_or(Path::new("."));
        LabelSet::new(file.names, read_tensor(root.join(file.embeddings))?)
    }

    /// Writes `<path>` and the embedding tensor next to it as `<stem>.sspt`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("labels");
        let emb_name = format!("{stem}.sspt");
        write_tensor(&self.embeddings, path.with_file_name(&emb_name))?;
        let file = LabelFile { names: self.names.clone(), embeddings: emb_name };
        std::fs::write(path, toml::to_string(&file).map_err(|e| Error::Manifest(e.to_string()))?)?;
        Ok(())
    }
}
