//! MVTec-style dataset trees: `train/good/*.png`, `test/<defect>/*.png`
//! and `ground_truth/<defect>/<stem>_mask.png`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, RgbImage};
use stlm_core::synth::{Dataset, Image, ImageSample, Mask, TestSample};

use crate::error::{IoContext, Result, StlmError};

pub const GOOD: &str = "good";

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    let (h, w) = (img.height() as u32, img.width() as u32);
    let plane = (h * w) as usize;
    let d = img.data();
    let result = match img.channels() {
        1 => GrayImage::from_fn(w, h, |x, y| image::Luma([to_u8(d[(y * w + x) as usize])])).save(path),
        3 => RgbImage::from_fn(w, h, |x, y| {
            let i = (y * w + x) as usize;
            image::Rgb([to_u8(d[i]), to_u8(d[plane + i]), to_u8(d[2 * plane + i])])
        })
        .save(path),
        c => return Err(StlmError::format(path, format!("cannot store a {c}-channel image as PNG"))),
    };
    result.map_err(|e| StlmError::format(path, e.to_string()))
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let (h, w) = (mask.height() as u32, mask.width() as u32);
    let img = GrayImage::from_fn(w, h, |x, y| image::Luma([if mask.at(y as usize, x as usize) { 255 } else { 0 }]));
    img.save(path).map_err(|e| StlmError::format(path, e.to_string()))
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| StlmError::format(path, e.to_string()))
}

/// Reads an 8-bit PNG into `[0, 1]`. Gray stays single-channel; anything
/// with colour becomes RGB.
pub fn read_image(path: &Path) -> Result<Image> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, bytes) = if img.color().has_color() {
        let rgb = img.to_rgb8();
        let mut planar = vec![0f32; 3 * h * w];
        for (i, p) in rgb.pixels().enumerate() {
            for c in 0..3 {
                planar[c * h * w + i] = p[c] as f32 / 255.0;
            }
        }
        (3, planar)
    } else {
        (1, img.to_luma8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect())
    };
    Ok(Image::new(channels, h, w, bytes)?)
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Mask::new(h, w, img.into_raw().into_iter().map(|v| (v > 127) as u8).collect())?)
}

fn pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).at(dir)? {
        let p = entry.at(dir)?.path();
        if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).at(dir)? {
        let p = entry.at(dir)?.path();
        if p.is_dir() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn read_image_dir(dir: &Path) -> Result<Vec<Image>> {
    pngs(dir)?.iter().map(|p| read_image(p)).collect()
}

/// A dataset read from disk, with one `defect/stem` id per test sample.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub test_ids: Vec<String>,
}

/// Loads a dataset tree. Test samples are ordered by defect directory name
/// and then by file name, which fixes the sample ids used in reports.
pub fn read_dataset(root: &Path) -> Result<LoadedDataset> {
    let train_dir = root.join("train").join(GOOD);
    let train = read_image_dir(&train_dir)?.into_iter().map(ImageSample::normal).collect();
    let mut test = Vec::new();
    let mut test_ids = Vec::new();
    let test_root = root.join("test");
    if test_root.is_dir() {
        for dir in subdirs(&test_root)? {
            let defect = dir.file_name().unwrap().to_string_lossy().into_owned();
            for p in pngs(&dir)? {
                let image = read_image(&p)?;
                let sample = if defect == GOOD {
                    ImageSample::normal(image)
                } else {
                    let mp = root.join("ground_truth").join(&defect).join(format!("{}_mask.png", stem(&p)));
                    if !mp.is_file() {
                        return Err(StlmError::format(&p, format!("missing ground-truth mask {}", mp.display())));
                    }
                    ImageSample::new(image, read_mask(&mp)?).map_err(|e| StlmError::format(&mp, e.to_string()))?
                };
                test_ids.push(format!("{defect}/{}", stem(&p)));
                test.push(TestSample {
                    sample,
                    defect: defect.clone(),
                });
            }
        }
    }
    let class_name = root
        .canonicalize()
        .ok()
        .and_then(|p| p.file_name().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "dataset".into());
    Ok(LoadedDataset {
        dataset: Dataset { class_name, train, test },
        test_ids,
    })
}

fn create(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).at(dir)
}

/// Writes a dataset tree; returns every file written, in write order.
pub fn write_dataset(root: &Path, ds: &Dataset) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let train_dir = root.join("train").join(GOOD);
    create(&train_dir)?;
    for (i, s) in ds.train.iter().enumerate() {
        let p = train_dir.join(format!("{i:03}.png"));
        write_image(&p, &s.image)?;
        written.push(p);
    }
    let mut counters: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &ds.test {
        let n = counters.entry(&t.defect).or_default();
        let name = format!("{:03}", *n);
        *n += 1;
        let dir = root.join("test").join(&t.defect);
        create(&dir)?;
        let p = dir.join(format!("{name}.png"));
        write_image(&p, &t.sample.image)?;
        written.push(p);
        if t.defect != GOOD {
            let gt = root.join("ground_truth").join(&t.defect);
            create(&gt)?;
            let m = gt.join(format!("{name}_mask.png"));
            write_mask(&m, &t.sample.mask)?;
            written.push(m);
        }
    }
    Ok(written)
}
