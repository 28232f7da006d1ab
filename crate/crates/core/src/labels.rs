use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Label value that is skipped by the loss and the metrics.
pub const IGNORE_INDEX: u32 = 255;

/// Integer class map of shape `N×H×W`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    shape: [usize; 3],
    data: Vec<u32>,
}

impl LabelMap {
    pub fn new(n: usize, h: usize, w: usize, data: Vec<u32>) -> Result<Self> {
        if n == 0 || h == 0 || w == 0 || data.len() != n * h * w {
            return Err(Error::InvalidShape {
                shape: vec![n, h, w],
                reason: format!("label buffer holds {} values", data.len()),
            });
        }
        Ok(Self {
            shape: [n, h, w],
            data,
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    /// Stack single-image maps into one batch.
    pub fn stack(maps: &[&LabelMap]) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::Config("cannot stack zero label maps".into()))?;
        let [_, h, w] = first.shape;
        let mut data = Vec::with_capacity(maps.len() * h * w);
        for m in maps {
            let [_, mh, mw] = m.shape;
            if (mh, mw) != (h, w) {
                return Err(Error::mismatch("label stack", &first.shape, &m.shape));
            }
            data.extend_from_slice(&m.data);
        }
        let n = data.len() / (h * w);
        Self::new(n, h, w, data)
    }

    /// Per-pixel arg-max over the channel axis of `N×C×H×W` scores. Ties
    /// resolve to the lowest class index.
    pub fn argmax<T: Float>(scores: &Tensor<T>) -> Result<Self> {
        let (n, c, h, w) = scores.dims4("argmax")?;
        let plane = h * w;
        let data = scores.data();
        let mut out = Vec::with_capacity(n * plane);
        for b in 0..n {
            let base = b * c * plane;
            for p in 0..plane {
                let mut best = 0;
                for k in 1..c {
                    if data[base + k * plane + p] > data[base + best * plane + p] {
                        best = k;
                    }
                }
                out.push(best as u32);
            }
        }
        Self::new(n, h, w, out)
    }
}
