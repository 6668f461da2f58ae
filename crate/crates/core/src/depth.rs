//! Object depth from a fixed window at the centre of its bounding box.

use std::path::Path;

use thiserror::Error;

use crate::eval_metrics::BBox;

/// Default averaging window, in pixels.
pub const DEFAULT_REGION: (u32, u32) = (20, 20);

/// PGM samples are millimetres.
const PGM_UNITS_PER_METER: f64 = 1000.0;

#[derive(Debug, Error)]
pub enum DepthError {
    #[error("insufficient depth data: {valid} of {total} window pixels valid")]
    InsufficientData { valid: usize, total: usize },
    #[error("box center ({x}, {y}) outside {width}x{height} image")]
    CenterOutside {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("region must be at least 1x1 pixels, got {w}x{h}")]
    EmptyRegion { w: u32, h: u32 },
    #[error("row {row}: expected {expected} values, found {found}")]
    RowLength {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}, column {col}: {message}")]
    BadValue {
        row: usize,
        col: usize,
        message: String,
    },
    #[error("malformed depth image: {0}")]
    Malformed(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Dense row-major depth map in meters. Zero means "no data".
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, DepthError> {
        if values.len() != width * height {
            return Err(DepthError::Malformed(format!(
                "{} values for a {width}x{height} image",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(DepthError::BadValue {
                row: i / width.max(1),
                col: i % width.max(1),
                message: format!("depth {} is not a finite value >= 0", values[i]),
            });
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn uniform(width: usize, height: usize, meters: f64) -> Self {
        Self::new(width, height, vec![meters; width * height]).expect("uniform image is valid")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Depth at column `x`, row `y`.
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// Comma-separated rows of meters, one image row per line.
pub fn parse_depth_csv(text: &str) -> Result<DepthImage, DepthError> {
    let mut values = Vec::new();
    let mut width = None;
    let mut height = 0;
    for (row, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let start = values.len();
        for (col, field) in line.split(',').enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| DepthError::BadValue {
                row,
                col,
                message: format!("not a number: {:?}", field.trim()),
            })?;
            values.push(v);
        }
        let found = values.len() - start;
        match width {
            None => width = Some(found),
            Some(expected) if expected != found => {
                return Err(DepthError::RowLength {
                    row,
                    expected,
                    found,
                })
            }
            Some(_) => {}
        }
        height += 1;
    }
    let width = width.ok_or_else(|| DepthError::Malformed("empty CSV".into()))?;
    DepthImage::new(width, height, values)
}

/// Binary (`P5`) or ASCII (`P2`) PGM with integer millimetres. Samples are
/// taken as-is, never rescaled by maxval.
pub fn parse_depth_pgm(bytes: &[u8]) -> Result<DepthImage, DepthError> {
    let malformed = |m: &str| DepthError::Malformed(format!("PGM: {m}"));
    let mut pos = 0;
    // Header tokens are whitespace separated; `#` starts a comment line.
    let token = |pos: &mut usize| -> Option<String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        (start < *pos).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    let magic = token(&mut pos).ok_or_else(|| malformed("missing magic number"))?;
    let number = |pos: &mut usize, what: &str| -> Result<usize, DepthError> {
        token(pos)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| malformed(&format!("bad or missing {what}")))
    };
    let width = number(&mut pos, "width")?;
    let height = number(&mut pos, "height")?;
    let maxval = number(&mut pos, "maxval")?;
    if maxval == 0 || maxval > usize::from(u16::MAX) {
        return Err(malformed("maxval must be in 1..=65535"));
    }
    let count = width * height;

    let raw: Vec<usize> = match magic.as_str() {
        "P5" => {
            // exactly one whitespace byte separates the header from the raster
            let data = bytes.get(pos + 1..).unwrap_or(&[]);
            let sample = if maxval < 256 { 1 } else { 2 };
            if data.len() < count * sample {
                return Err(malformed(&format!(
                    "raster has {} bytes, expected {}",
                    data.len(),
                    count * sample
                )));
            }
            if sample == 1 {
                data[..count].iter().map(|&b| usize::from(b)).collect()
            } else {
                data[..count * 2]
                    .chunks_exact(2)
                    .map(|c| usize::from(u16::from_be_bytes([c[0], c[1]])))
                    .collect()
            }
        }
        "P2" => (0..count)
            .map(|_| number(&mut pos, "sample"))
            .collect::<Result<_, _>>()?,
        other => return Err(malformed(&format!("unsupported magic {other:?}"))),
    };
    if let Some(i) = raw.iter().position(|&v| v > maxval) {
        return Err(DepthError::BadValue {
            row: i / width.max(1),
            col: i % width.max(1),
            message: format!("sample {} exceeds maxval {maxval}", raw[i]),
        });
    }
    let values = raw
        .into_iter()
        .map(|v| v as f64 / PGM_UNITS_PER_METER)
        .collect();
    DepthImage::new(width, height, values)
}

/// Loads a depth image, choosing the format from the file's magic number.
pub fn load_depth_image(path: &Path) -> Result<DepthImage, DepthError> {
    let bytes = std::fs::read(path).map_err(|source| DepthError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if bytes.starts_with(b"P5") || bytes.starts_with(b"P2") {
        parse_depth_pgm(&bytes)
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| DepthError::Malformed("CSV depth file is not UTF-8".into()))?;
        parse_depth_csv(&text)
    }
}

/// Pixel window `[x0, x1) x [y0, y1)` after clipping to the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl Window {
    pub fn len(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }
}

/// The `region_w x region_h` window centred on the box centre pixel,
/// clipped to the image. The centre pixel is `floor` of the box centre;
/// the window spans `[c - w/2, c - w/2 + w)` with integer halving.
pub fn region_window(
    img: &DepthImage,
    bbox: &BBox,
    region_w: u32,
    region_h: u32,
) -> Result<Window, DepthError> {
    if region_w == 0 || region_h == 0 {
        return Err(DepthError::EmptyRegion {
            w: region_w,
            h: region_h,
        });
    }
    let (cx, cy) = bbox.center();
    let inside = cx >= 0.0 && cy >= 0.0 && cx < img.width as f64 && cy < img.height as f64;
    if !inside {
        return Err(DepthError::CenterOutside {
            x: cx,
            y: cy,
            width: img.width,
            height: img.height,
        });
    }
    let span = |c: f64, len: u32, limit: usize| {
        let start = c.floor() as i64 - i64::from(len / 2);
        let end = start + i64::from(len);
        (start.max(0) as usize, (end.min(limit as i64)) as usize)
    };
    let (x0, x1) = span(cx, region_w, img.width);
    let (y0, y1) = span(cy, region_h, img.height);
    Ok(Window { x0, x1, y0, y1 })
}

/// Mean of the valid (non-zero) depths in the centre window.
///
/// Fails when fewer than half of the clipped window's pixels carry data.
pub fn estimate_depth(
    img: &DepthImage,
    bbox: &BBox,
    region_w: u32,
    region_h: u32,
) -> Result<f64, DepthError> {
    let win = region_window(img, bbox, region_w, region_h)?;
    let mut sum = 0.0;
    let mut valid = 0usize;
    for y in win.y0..win.y1 {
        let row = &img.values[y * img.width + win.x0..y * img.width + win.x1];
        for &v in row.iter().filter(|&&v| v > 0.0) {
            sum += v;
            valid += 1;
        }
    }
    let total = win.len();
    if valid * 2 < total {
        return Err(DepthError::InsufficientData { valid, total });
    }
    Ok(sum / valid as f64)
}
