use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::labels::LabelMap;
use crate::tensor::Tensor;

use super::netpbm::{read_pgm, read_ppm, write_pgm, write_ppm};
use super::scene::{generate_scene, Sample, SceneConfig};

pub const CONFIG_FILE: &str = "dataset.cfg";

pub fn image_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("img_{index:05}.ppm"))
}

pub fn label_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("lab_{index:05}.pgm"))
}

/// Generate `count` scenes into `dir` along with `dataset.cfg`.
pub fn write_dataset(dir: &Path, cfg: &SceneConfig, count: usize) -> Result<()> {
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    for i in 0..count {
        let s = generate_scene(cfg, i)?;
        write_ppm(&image_path(dir, i), &s.image)?;
        write_pgm(&label_path(dir, i), &s.label)?;
    }
    let mut text = String::new();
    for (k, v) in cfg.to_kv() {
        text.push_str(&format!("{k}={v}\n"));
    }
    text.push_str(&format!("count={count}\n"));
    fs::write(dir.join(CONFIG_FILE), text)?;
    Ok(())
}

fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let body = line.trim();
        if !body.is_empty() && !body.starts_with('#') {
            let (k, v) = body.split_once('=').ok_or_else(|| Error::Parse {
                offset,
                message: format!("expected key=value, found `{body}`"),
            })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        offset += line.len();
    }
    Ok(pairs)
}

/// Image/label pairs loaded from a dataset directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: SceneConfig,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let cfg_path = dir.join(CONFIG_FILE);
        let text = fs::read_to_string(&cfg_path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", cfg_path.display())))?;
        let pairs = parse_kv(&text)?;
        let count: usize = pairs
            .iter()
            .find(|(k, _)| k == "count")
            .and_then(|(_, v)| v.parse().ok())
            .ok_or_else(|| Error::Config(format!("{}: missing or bad `count`", cfg_path.display())))?;
        let config = SceneConfig::from_kv(&pairs)?;
        let samples = (0..count)
            .map(|i| {
                let image = read_ppm(&image_path(dir, i))?;
                let label = read_pgm(&label_path(dir, i))?;
                if image.shape()[1..] != label.shape()[1..] {
                    return Err(Error::mismatch("dataset sample", &image.shape()[1..], &label.shape()[1..]));
                }
                Ok(Sample { image, label })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Stack the selected samples into `N×3×H×W` images and `N×H×W` labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, LabelMap)> {
        let picked = indices
            .iter()
            .map(|&i| {
                self.samples
                    .get(i)
                    .ok_or_else(|| Error::Config(format!("sample {i} out of range for {} samples", self.len())))
            })
            .collect::<Result<Vec<_>>>()?;
        let first = picked
            .first()
            .ok_or_else(|| Error::Config("empty batch".into()))?;
        let [_, h, w] = <[usize; 3]>::try_from(first.image.shape()).map_err(|_| Error::Rank {
            op: "batch",
            expected: 3,
            shape: first.image.shape().to_vec(),
        })?;
        let mut data = Vec::with_capacity(picked.len() * 3 * h * w);
        for s in &picked {
            if s.image.shape() != first.image.shape() {
                return Err(Error::mismatch("batch", s.image.shape(), first.image.shape()));
            }
            data.extend_from_slice(s.image.data());
        }
        let images = Tensor::from_vec(&[picked.len(), 3, h, w], data)?;
        let labels = LabelMap::stack(&picked.iter().map(|s| &s.label).collect::<Vec<_>>())?;
        Ok((images, labels))
    }
}
