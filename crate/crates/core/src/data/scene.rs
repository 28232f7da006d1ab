use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::labels::{LabelMap, IGNORE_INDEX};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Rectangle,
    Disk,
    /// A full-length horizontal or vertical band.
    Stripe,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Rectangle, ShapeKind::Disk, ShapeKind::Stripe];
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShapeKind::Rectangle => "rectangle",
            ShapeKind::Disk => "disk",
            ShapeKind::Stripe => "stripe",
        })
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rectangle" => Ok(ShapeKind::Rectangle),
            "disk" => Ok(ShapeKind::Disk),
            "stripe" => Ok(ShapeKind::Stripe),
            _ => Err(Error::Config(format!("unknown shape kind `{s}`"))),
        }
    }
}

const BASE_PALETTE: [[u8; 3]; 12] = [
    [40, 40, 40],
    [220, 60, 50],
    [60, 180, 75],
    [70, 110, 230],
    [240, 200, 40],
    [150, 70, 190],
    [60, 200, 210],
    [240, 130, 40],
    [250, 150, 190],
    [140, 100, 50],
    [200, 200, 200],
    [0, 120, 120],
];

/// The built-in palette for `classes` classes. Class 0 is a dark grey so
/// that it stays distinct from the black used for ignored pixels.
pub fn default_palette(classes: usize) -> Result<Vec<[u8; 3]>> {
    if classes > BASE_PALETTE.len() {
        return Err(Error::Config(format!(
            "built-in palette covers {} classes, {classes} requested",
            BASE_PALETTE.len()
        )));
    }
    Ok(BASE_PALETTE[..classes].to_vec())
}

/// Parameters of the synthetic scene generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    /// Including background class 0.
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    pub kinds: Vec<ShapeKind>,
    pub palette: Vec<[u8; 3]>,
    pub noise_std: f64,
    pub seed: u64,
}

impl SceneConfig {
    pub fn new(num_classes: usize, height: usize, width: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            num_classes,
            height,
            width,
            min_shapes: 1,
            max_shapes: 3,
            kinds: ShapeKind::ALL.to_vec(),
            palette: default_palette(num_classes)?,
            noise_std: 0.05,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_classes < 2 || self.num_classes > IGNORE_INDEX as usize {
            return fail(format!("num_classes must be in [2, 255), got {}", self.num_classes));
        }
        if self.height == 0 || self.width == 0 {
            return fail(format!("empty canvas {}x{}", self.height, self.width));
        }
        if self.min_shapes > self.max_shapes {
            return fail(format!("min_shapes {} exceeds max_shapes {}", self.min_shapes, self.max_shapes));
        }
        if self.kinds.is_empty() {
            return fail("no shape kinds enabled".into());
        }
        if self.palette.len() < self.num_classes {
            return fail(format!(
                "palette has {} colors for {} classes",
                self.palette.len(),
                self.num_classes
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return fail(format!("noise_std must be finite and non-negative, got {}", self.noise_std));
        }
        Ok(())
    }

    /// `key=value` lines, one per field.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let kinds: Vec<String> = self.kinds.iter().map(ToString::to_string).collect();
        let palette: Vec<String> = self.palette.iter().map(|[r, g, b]| format!("{r}:{g}:{b}")).collect();
        vec![
            ("num_classes".into(), self.num_classes.to_string()),
            ("height".into(), self.height.to_string()),
            ("width".into(), self.width.to_string()),
            ("min_shapes".into(), self.min_shapes.to_string()),
            ("max_shapes".into(), self.max_shapes.to_string()),
            ("kinds".into(), kinds.join(",")),
            ("palette".into(), palette.join(",")),
            ("noise_std".into(), self.noise_std.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }

    /// Inverse of [`SceneConfig::to_kv`]. Every field must be present.
    pub fn from_kv(pairs: &[(String, String)]) -> Result<Self> {
        let get = |key: &str| {
            pairs
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Config(format!("missing key `{key}`")))
        };
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
        }
        let palette = get("palette")?
            .split(',')
            .map(|c| {
                let parts: Vec<u8> = c.split(':').map(|p| num("palette", p)).collect::<Result<_>>()?;
                <[u8; 3]>::try_from(parts).map_err(|_| Error::Config(format!("bad palette color `{c}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let cfg = Self {
            num_classes: num("num_classes", get("num_classes")?)?,
            height: num("height", get("height")?)?,
            width: num("width", get("width")?)?,
            min_shapes: num("min_shapes", get("min_shapes")?)?,
            max_shapes: num("max_shapes", get("max_shapes")?)?,
            kinds: get("kinds")?.split(',').map(str::parse).collect::<Result<_>>()?,
            palette,
            noise_std: num("noise_std", get("noise_std")?)?,
            seed: num("seed", get("seed")?)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// An image `3×H×W` in `[0, 1]` and its `1×H×W` labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub label: LabelMap,
}

fn paint_shape(label: &mut [u32], h: usize, w: usize, class: u32, kind: ShapeKind, rng: &mut impl Rng) {
    /// Uniform length between the two percentages of `extent`.
    fn span(rng: &mut impl Rng, extent: usize, lo_pct: usize, hi_pct: usize) -> usize {
        let lo = (extent * lo_pct / 100).max(1);
        let hi = (extent * hi_pct / 100).max(lo);
        rng.random_range(lo..=hi)
    }
    match kind {
        ShapeKind::Rectangle => {
            let (rh, rw) = (span(rng, h, 25, 60), span(rng, w, 25, 60));
            let y0 = rng.random_range(0..=h - rh);
            let x0 = rng.random_range(0..=w - rw);
            for y in y0..y0 + rh {
                label[y * w + x0..y * w + x0 + rw].fill(class);
            }
        }
        ShapeKind::Disk => {
            let r = span(rng, h.min(w), 18, 35) as i64;
            let cy = rng.random_range(0..h) as i64;
            let cx = rng.random_range(0..w) as i64;
            for y in 0..h {
                for x in 0..w {
                    let (dy, dx) = (y as i64 - cy, x as i64 - cx);
                    if dy * dy + dx * dx <= r * r {
                        label[y * w + x] = class;
                    }
                }
            }
        }
        ShapeKind::Stripe => {
            if rng.random_bool(0.5) {
                let t = span(rng, h, 15, 35);
                let y0 = rng.random_range(0..=h - t);
                label[y0 * w..(y0 + t) * w].fill(class);
            } else {
                let t = span(rng, w, 15, 35);
                let x0 = rng.random_range(0..=w - t);
                for row in label.chunks_exact_mut(w) {
                    row[x0..x0 + t].fill(class);
                }
            }
        }
    }
}

/// Sample `index` of the scene family `cfg`: a class-0 background with
/// shapes painted back to front, rendered in palette colors plus clipped
/// Gaussian noise. Pure function of `(cfg, index)`.
pub fn generate_scene(cfg: &SceneConfig, index: usize) -> Result<Sample> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = rng::named_stream(cfg.seed, &format!("scene/{index}"));
    let mut label = vec![0u32; h * w];
    let count = rng.random_range(cfg.min_shapes..=cfg.max_shapes);
    for _ in 0..count {
        let class = rng.random_range(1..cfg.num_classes) as u32;
        let kind = cfg.kinds[rng.random_range(0..cfg.kinds.len())];
        paint_shape(&mut label, h, w, class, kind, &mut rng);
    }
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(format!("noise: {e}")))?;
    let plane = h * w;
    let mut image = vec![0.0f32; 3 * plane];
    for ch in 0..3 {
        for (p, &class) in label.iter().enumerate() {
            let base = f64::from(cfg.palette[class as usize][ch]) / 255.0;
            let v = if cfg.noise_std > 0.0 {
                base + noise.sample(&mut rng)
            } else {
                base
            };
            image[ch * plane + p] = v.clamp(0.0, 1.0) as f32;
        }
    }
    Ok(Sample {
        image: Tensor::from_vec(&[3, h, w], image)?,
        label: LabelMap::new(1, h, w, label)?,
    })
}

/// Palette lookup of a single-image label map; ignored pixels are black.
pub fn colorize(label: &LabelMap, palette: &[[u8; 3]]) -> Result<Tensor<f32>> {
    let [n, h, w] = label.shape();
    if n != 1 {
        return Err(Error::InvalidShape {
            shape: vec![n, h, w],
            reason: "colorize takes one label map".into(),
        });
    }
    let plane = h * w;
    let mut out = vec![0.0f32; 3 * plane];
    for (p, &class) in label.data().iter().enumerate() {
        if class == IGNORE_INDEX {
            continue;
        }
        let color = palette.get(class as usize).ok_or(Error::Label {
            label: class as usize,
            classes: palette.len(),
        })?;
        for ch in 0..3 {
            out[ch * plane + p] = f32::from(color[ch]) / 255.0;
        }
    }
    Tensor::from_vec(&[3, h, w], out)
}
