//! Single-channel image reading and writing.
//!
//! Integer formats are scaled to [0, 1] by their bit depth. 32/64-bit float
//! TIFFs are returned as stored.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use tiff::decoder::{Decoder, DecodingResult};
use tiff::encoder::{colortype, TiffEncoder};

use crate::error::{Error, Result};

/// How a color source image collapses to one channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColorPolicy {
    /// ITU-R BT.601 luma: 0.299 R + 0.587 G + 0.114 B.
    #[default]
    Luma,
    FirstChannel,
}

pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// File extensions treated as frames when scanning directories.
pub const FRAME_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

pub fn is_frame_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn is_tiff(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
        Some(ref e) if e == "tif" || e == "tiff"
    )
}

/// Read an image as a single-channel array, collapsing color with `policy`.
pub fn read_gray(path: &Path, policy: ColorPolicy) -> Result<Array2<f64>> {
    if is_tiff(path) {
        return read_tiff(path, policy);
    }
    let img = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let channels = img.color().channel_count() as usize;
    let out = if channels <= 2 {
        // Gray or gray+alpha.
        let buf = img.to_luma32f();
        Array2::from_shape_vec((h, w), buf.into_raw().into_iter().map(f64::from).collect())
    } else {
        let buf = img.to_rgb32f();
        let raw = buf.into_raw();
        let values = raw
            .chunks_exact(3)
            .map(|px| match policy {
                ColorPolicy::Luma => {
                    LUMA_WEIGHTS[0] * px[0] as f64
                        + LUMA_WEIGHTS[1] * px[1] as f64
                        + LUMA_WEIGHTS[2] * px[2] as f64
                }
                ColorPolicy::FirstChannel => px[0] as f64,
            })
            .collect();
        Array2::from_shape_vec((h, w), values)
    };
    out.map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Read only the first channel without collapsing; errors on multi-channel input.
pub fn read_single_channel(path: &Path) -> Result<Array2<f64>> {
    if is_tiff(path) {
        let (arr, channels) = read_tiff_raw(path)?;
        if channels != 1 {
            return Err(Error::Decode {
                path: path.to_path_buf(),
                message: format!("expected a single-channel image, found {channels} channels"),
            });
        }
        return Ok(arr);
    }
    let img = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if img.color().channel_count() != 1 {
        return Err(Error::Decode {
            path: path.to_path_buf(),
            message: format!(
                "expected a single-channel image, found {:?}",
                img.color()
            ),
        });
    }
    read_gray(path, ColorPolicy::FirstChannel)
}

fn read_tiff(path: &Path, policy: ColorPolicy) -> Result<Array2<f64>> {
    let (first, channels) = read_tiff_raw(path)?;
    if channels == 1 || policy == ColorPolicy::FirstChannel {
        return Ok(first);
    }
    Err(Error::Decode {
        path: path.to_path_buf(),
        message: "multi-channel TIFF is only supported with the first-channel policy".into(),
    })
}

/// Returns channel 0 and the channel count.
fn read_tiff_raw(path: &Path) -> Result<(Array2<f64>, usize)> {
    let decode_err = |e: tiff::TiffError| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = Decoder::new(BufReader::new(file)).map_err(decode_err)?;
    let (w, h) = decoder.dimensions().map_err(decode_err)?;
    let channels = match decoder.colortype().map_err(decode_err)? {
        tiff::ColorType::Gray(_) => 1,
        tiff::ColorType::GrayA(_) => 2,
        tiff::ColorType::RGB(_) => 3,
        tiff::ColorType::RGBA(_) => 4,
        other => {
            return Err(Error::Decode {
                path: path.to_path_buf(),
                message: format!("unsupported TIFF color type {other:?}"),
            })
        }
    };
    let values: Vec<f64> = match decoder.read_image().map_err(decode_err)? {
        DecodingResult::U8(v) => v.into_iter().map(|x| x as f64 / 255.0).collect(),
        DecodingResult::U16(v) => v.into_iter().map(|x| x as f64 / 65535.0).collect(),
        DecodingResult::F32(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::F64(v) => v,
        _ => {
            return Err(Error::Decode {
                path: path.to_path_buf(),
                message: "unsupported TIFF sample format".into(),
            })
        }
    };
    let (w, h) = (w as usize, h as usize);
    if values.len() != w * h * channels {
        return Err(Error::Decode {
            path: path.to_path_buf(),
            message: format!("expected {} samples, got {}", w * h * channels, values.len()),
        });
    }
    let first: Vec<f64> = values.iter().step_by(channels).copied().collect();
    Ok((Array2::from_shape_vec((h, w), first).expect("length checked"), channels))
}

pub fn write_tiff_f32(path: &Path, image: &Array2<f64>) -> Result<()> {
    let (h, w) = image.dim();
    let data: Vec<f32> = image.iter().map(|&v| v as f32).collect();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = TiffEncoder::new(BufWriter::new(file)).map_err(|e| Error::Encode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    enc.write_image::<colortype::Gray32Float>(w as u32, h as u32, &data)
        .map_err(|e| Error::Encode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// Write a 16-bit grayscale PNG; values are clamped to [0, 1].
pub fn write_png16(path: &Path, image: &Array2<f64>) -> Result<()> {
    let (h, w) = image.dim();
    let data: Vec<u16> = image
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(w as u32, h as u32, data)
        .expect("buffer size matches dimensions");
    buf.save(path).map_err(|e| Error::Encode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Write an 8-bit grayscale PNG; values are clamped to [0, 1].
pub fn write_png8(path: &Path, image: &Array2<f64>) -> Result<()> {
    let (h, w) = image.dim();
    let data: Vec<u8> = image
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::GrayImage::from_raw(w as u32, h as u32, data)
        .expect("buffer size matches dimensions");
    buf.save(path).map_err(|e| Error::Encode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
