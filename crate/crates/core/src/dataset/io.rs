//! Raster and manifest I/O.
//!
//! Images are 8-bit RGB PNG. Binary masks are 8-bit grey PNG (0 / 255).
//! Parsing masks are 8-bit grey PNG holding label ids, with a sidecar
//! `<stem>.labels.txt` next to them (falling back to `labels.txt` in the
//! same directory). Manifests are JSON lines, one [`SampleRecord`] per line;
//! relative paths resolve against the manifest's directory.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use super::types::{BinaryMask, LabelTable, ParsingMask, RgbImage, Split};
use crate::error::{Error, Result};

fn codec_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Codec {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    image::open(path).map_err(|e| codec_err(path, e))
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let img = open_image(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    RgbImage::from_u8(h as usize, w as usize, img.as_raw())
}

pub fn write_rgb(path: &Path, image: &RgbImage) -> Result<()> {
    ensure_parent(path)?;
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(image.width() as u32, image.height() as u32, image.to_u8())
            .expect("buffer sized from image");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| codec_err(path, e))
}

fn read_luma(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = open_image(path)?;
    if img.color().has_color() {
        return Err(codec_err(path, "expected a single-channel raster"));
    }
    let img = img.to_luma8();
    let (w, h) = img.dimensions();
    Ok((h as usize, w as usize, img.into_raw()))
}

fn write_luma(path: &Path, height: usize, width: usize, data: Vec<u8>) -> Result<()> {
    ensure_parent(path)?;
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(width as u32, height as u32, data).expect("buffer sized from mask");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| codec_err(path, e))
}

pub fn read_binary_mask(path: &Path) -> Result<BinaryMask> {
    let (h, w, data) = read_luma(path)?;
    BinaryMask::new(h, w, data.into_iter().map(|v| v >= 128).collect())
}

pub fn write_binary_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let data = mask.as_slice().iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_luma(path, mask.height(), mask.width(), data)
}

/// Sidecar path holding the label table of a parsing mask.
pub fn label_table_path(mask_path: &Path) -> PathBuf {
    let stem = mask_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    mask_path.with_file_name(format!("{stem}.labels.txt"))
}

pub fn read_label_table(path: &Path) -> Result<LabelTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    LabelTable::parse(&text).map_err(|message| Error::Parse {
        path: path.to_path_buf(),
        message,
    })
}

pub fn read_parsing_mask(path: &Path) -> Result<ParsingMask> {
    let (h, w, labels) = read_luma(path)?;
    let sidecar = label_table_path(path);
    let table_path = if sidecar.exists() {
        sidecar
    } else {
        let shared = path.with_file_name("labels.txt");
        if !shared.exists() {
            return Err(Error::MissingFile(sidecar));
        }
        shared
    };
    let table = read_label_table(&table_path)?;
    ParsingMask::new(h, w, labels, table)
}

pub fn write_parsing_mask(path: &Path, mask: &ParsingMask) -> Result<()> {
    write_luma(path, mask.height(), mask.width(), mask.labels().to_vec())?;
    let sidecar = label_table_path(path);
    fs::write(&sidecar, mask.table().to_text()).map_err(|e| Error::io(&sidecar, e))
}

/// One line of a dataset manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub image_path: PathBuf,
    pub parsing_mask_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_occlusion_path: Option<PathBuf>,
    pub split: Split,
}

impl SampleRecord {
    /// Explicit id, or the image file stem.
    pub fn sample_id(&self) -> String {
        self.id.clone().unwrap_or_else(|| {
            self.image_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "sample".into())
        })
    }

    fn resolved(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.image_path);
        fix(&mut self.parsing_mask_path);
        if let Some(p) = self.reference_path.as_mut() {
            fix(p);
        }
        if let Some(p) = self.gt_occlusion_path.as_mut() {
            fix(p);
        }
        self
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<SampleRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("")).to_path_buf();
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", lineno + 1),
        })?;
        records.push(rec.resolved(&base));
    }
    Ok(records)
}

/// Writes records verbatim (paths are stored exactly as given).
pub fn write_manifest(path: &Path, records: &[SampleRecord]) -> Result<()> {
    ensure_parent(path)?;
    let mut out = Vec::new();
    for rec in records {
        serde_json::to_writer(&mut out, rec).expect("record serializes");
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}

/// A decoded sample. Optional manifest fields stay `None` when absent.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub image: RgbImage,
    pub parsing: ParsingMask,
    pub reference: Option<RgbImage>,
    pub gt_occlusion: Option<BinaryMask>,
}

pub fn load_sample(record: &SampleRecord) -> Result<Sample> {
    let image = read_rgb(&record.image_path)?;
    let parsing = read_parsing_mask(&record.parsing_mask_path)?;
    if parsing.dims() != image.dims() {
        return Err(Error::DimensionMismatch {
            what: "parsing mask vs image",
            expected: image.dims(),
            found: parsing.dims(),
        });
    }
    let reference = match &record.reference_path {
        Some(p) => {
            let r = read_rgb(p)?;
            if r.dims() != image.dims() {
                return Err(Error::DimensionMismatch {
                    what: "reference vs image",
                    expected: image.dims(),
                    found: r.dims(),
                });
            }
            Some(r)
        }
        None => None,
    };
    let gt_occlusion = match &record.gt_occlusion_path {
        Some(p) => {
            let m = read_binary_mask(p)?;
            if m.dims() != image.dims() {
                return Err(Error::DimensionMismatch {
                    what: "occlusion mask vs image",
                    expected: image.dims(),
                    found: m.dims(),
                });
            }
            Some(m)
        }
        None => None,
    };
    Ok(Sample {
        id: record.sample_id(),
        image,
        parsing,
        reference,
        gt_occlusion,
    })
}
