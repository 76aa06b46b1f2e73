use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;

use super::{blend_pseudo_anomaly, make_mask, perlin_noise, procedural_texture};
use super::{Image, ImageSample, Mask, PerlinParams, TextureFamily};
use crate::error::{Error, Result};
use crate::rng::{derive, stream, Fnv64, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum ClassKind {
    Stripes,
    Blobs,
    Checker,
}

impl ClassKind {
    pub fn name(self) -> &'static str {
        match self {
            ClassKind::Stripes => "stripes",
            ClassKind::Blobs => "blobs",
            ClassKind::Checker => "checker",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct DatasetSpec {
    pub class_kind: ClassKind,
    pub n_train: usize,
    pub n_test_good: usize,
    pub n_test_bad: usize,
    pub size: usize,
    pub channels: usize,
    pub seed: u64,
    pub perlin: PerlinParams,
    /// Opacity range for held-out test defects.
    pub test_beta_range: (f32, f32),
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            class_kind: ClassKind::Stripes,
            n_train: 48,
            n_test_good: 16,
            n_test_bad: 16,
            size: 64,
            channels: 3,
            seed: 0,
            perlin: PerlinParams::default(),
            test_beta_range: (0.0, 0.5),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestSample {
    pub sample: ImageSample,
    /// `"good"` or the defect type name.
    pub defect: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub class_name: String,
    pub train: Vec<ImageSample>,
    pub test: Vec<TestSample>,
}

impl Dataset {
    pub fn digest(&self) -> u64 {
        let mut h = Fnv64::default();
        h.write(self.class_name.as_bytes());
        for s in self.train.iter().chain(self.test.iter().map(|t| &t.sample)) {
            h.write_f32s(s.image.data());
            h.write(s.mask.data());
        }
        for t in &self.test {
            h.write(t.defect.as_bytes());
        }
        h.finish()
    }

    pub fn positives(&self) -> usize {
        self.test.iter().filter(|t| t.sample.label()).count()
    }
}

const HELD_OUT_TEXTURES: u64 = 0x4e1d_0070_7e57;

/// Per-dataset appearance shared by every normal image of the class.
struct ClassStyle {
    fg: [f32; 3],
    bg: [f32; 3],
    theta: f32,
    freq: f32,
    cell: usize,
    blob_radius: f32,
}

impl ClassStyle {
    fn new(rng: &mut Rng) -> Self {
        let mut color = |lo: f32, hi: f32| [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)];
        let fg = color(0.55, 0.9);
        let bg = color(0.1, 0.4);
        Self {
            fg,
            bg,
            theta: rng.random_range(0.0..core::f32::consts::PI),
            freq: rng.random_range(0.5..0.9),
            cell: rng.random_range(6..10),
            blob_radius: rng.random_range(5.0..8.0),
        }
    }
}

fn normal_image(kind: ClassKind, style: &ClassStyle, channels: usize, size: usize, seed: u64) -> Image {
    let mut rng = stream(seed, 0x0d);
    let hw = size * size;
    let mut t = alloc::vec![0.0f32; hw];
    match kind {
        ClassKind::Stripes => {
            let theta = style.theta + rng.random_range(-0.05..0.05);
            let phase = rng.random_range(0.0..core::f32::consts::TAU);
            let (c, s) = (libm::cosf(theta), libm::sinf(theta));
            for y in 0..size {
                for x in 0..size {
                    t[y * size + x] = 0.5 + 0.5 * libm::sinf(style.freq * (c * x as f32 + s * y as f32) + phase);
                }
            }
        }
        ClassKind::Blobs => {
            let n = rng.random_range(5..9);
            let centers: Vec<(f32, f32, f32)> = (0..n)
                .map(|_| {
                    (
                        rng.random_range(0.0..size as f32),
                        rng.random_range(0.0..size as f32),
                        style.blob_radius * rng.random_range(0.8..1.2),
                    )
                })
                .collect();
            for y in 0..size {
                for x in 0..size {
                    let v = centers
                        .iter()
                        .map(|&(cy, cx, r)| {
                            let d2 = (y as f32 - cy) * (y as f32 - cy) + (x as f32 - cx) * (x as f32 - cx);
                            libm::expf(-d2 / (2.0 * r * r))
                        })
                        .sum::<f32>();
                    t[y * size + x] = v.min(1.0);
                }
            }
        }
        ClassKind::Checker => {
            let (oy, ox) = (rng.random_range(0..style.cell * 2), rng.random_range(0..style.cell * 2));
            for y in 0..size {
                for x in 0..size {
                    let parity = ((y + oy) / style.cell + (x + ox) / style.cell) % 2;
                    t[y * size + x] = parity as f32;
                }
            }
        }
    }
    let mut data = Vec::with_capacity(channels * hw);
    for c in 0..channels {
        let (fg, bg) = (style.fg[c % 3], style.bg[c % 3]);
        for &v in &t {
            data.push(bg + (fg - bg) * v + rng.random_range(-0.02..0.02));
        }
    }
    Image::new(channels, size, size, data).expect("consistent extents")
}

/// Builds a seeded MVTec-like dataset: `n_train` normal training images,
/// `n_test_good` normal and `n_test_bad` defective test images. Defects are
/// blended from a texture stream disjoint from anything used in training.
pub fn make_synthetic_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    if spec.n_train == 0 || spec.n_test_good + spec.n_test_bad == 0 {
        return Err(Error::InvalidConfig {
            key: "data".into(),
            reason: "n_train and the test split must be nonempty".into(),
        });
    }
    spec.perlin.validate(spec.size, spec.size)?;
    let style = ClassStyle::new(&mut stream(spec.seed, 0xc1a55));
    let image = |tag: u64, i: usize| normal_image(spec.class_kind, &style, spec.channels, spec.size, derive(derive(spec.seed, tag), i as u64));

    let train = (0..spec.n_train).map(|i| ImageSample::normal(image(1, i))).collect();
    let mut test: Vec<TestSample> = (0..spec.n_test_good)
        .map(|i| TestSample {
            sample: ImageSample::normal(image(2, i)),
            defect: "good".into(),
        })
        .collect();
    for i in 0..spec.n_test_bad {
        let base = image(3, i);
        let seed = derive(derive(spec.seed, 4), i as u64);
        let mut rng = stream(seed, 0xbad);
        let mut mask: Option<Mask> = None;
        for attempt in 0..64u64 {
            let noise = perlin_noise(spec.size, spec.size, &spec.perlin, derive(seed, attempt))?;
            let m = make_mask(&noise, spec.size, spec.size, spec.perlin.threshold)?;
            if !m.is_empty() {
                mask = Some(m);
                break;
            }
        }
        let mask = mask.ok_or_else(|| Error::InvalidArgument("could not draw a nonempty defect mask".into()))?;
        let family = TextureFamily::ALL[rng.random_range(0..TextureFamily::ALL.len())];
        // Held-out: a seed family never visited by the training source bank.
        let source = procedural_texture(family, spec.channels, spec.size, spec.size, derive(HELD_OUT_TEXTURES, seed));
        let (lo, hi) = spec.test_beta_range;
        let beta = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let defect = blend_pseudo_anomaly(&base, &source, &mask, beta)?;
        test.push(TestSample {
            sample: ImageSample::new(defect, mask)?,
            defect: "blend".into(),
        });
    }
    Ok(Dataset {
        class_name: spec.class_kind.name().into(),
        train,
        test,
    })
}
