use super::etns::{self, Payload};
use crate::error::{Error, Result};

/// A C×H×W feature map stored c-major, then h, then w.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl Tensor3 {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidShape(format!(
                "{channels}x{height}x{width} has a zero dimension"
            )));
        }
        let expected = channels * height * width;
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(
            channels,
            height,
            width,
            vec![value; channels * height * width],
        )
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, c: usize, h: usize, w: usize) -> f32 {
        self.values[(c * self.height + h) * self.width + w]
    }

    /// Rows `[row_start, row_end)` of channel `c`, all columns, as one slice.
    pub fn rows(&self, c: usize, row_start: usize, row_end: usize) -> &[f32] {
        let base = c * self.height * self.width;
        &self.values[base + row_start * self.width..base + row_end * self.width]
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

/// Per-pixel class ids in `[0, classes)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    classes: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, classes: usize, labels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || classes == 0 {
            return Err(Error::InvalidShape(format!(
                "label map {height}x{width} with {classes} classes"
            )));
        }
        if classes > 256 {
            return Err(Error::InvalidShape(format!(
                "{classes} classes do not fit in u8 labels"
            )));
        }
        if labels.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                found: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::LabelOutOfRange {
                label: bad as usize,
                classes,
            });
        }
        Ok(Self {
            height,
            width,
            classes,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn num_pixels(&self) -> usize {
        self.labels.len()
    }
}

pub fn read_tensor(bytes: &[u8]) -> Result<Tensor3> {
    let arr = etns::decode(bytes)?;
    if arr.dims.len() != 3 {
        return Err(Error::BadRank {
            expected: 3,
            found: arr.dims.len() as u8,
        });
    }
    match arr.payload {
        Payload::F32(values) => Tensor3::new(arr.dims[0], arr.dims[1], arr.dims[2], values),
        Payload::U8(_) => Err(Error::UnsupportedDtype(etns::Dtype::U8 as u8)),
    }
}

pub fn write_tensor(t: &Tensor3) -> Vec<u8> {
    etns::encode_f32(&[t.channels, t.height, t.width], &t.values)
}

/// Reads a 2-D f32 array as `(rows, cols, values)`.
pub fn read_matrix(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    let arr = etns::decode(bytes)?;
    if arr.dims.len() != 2 {
        return Err(Error::BadRank {
            expected: 2,
            found: arr.dims.len() as u8,
        });
    }
    match arr.payload {
        Payload::F32(values) => Ok((arr.dims[0], arr.dims[1], values)),
        Payload::U8(_) => Err(Error::UnsupportedDtype(etns::Dtype::U8 as u8)),
    }
}

pub fn write_matrix(rows: usize, cols: usize, values: &[f32]) -> Vec<u8> {
    etns::encode_f32(&[rows, cols], values)
}

/// Label maps are 2-D u8 arrays; the class count is not stored in the file.
pub fn read_label_map(bytes: &[u8], classes: usize) -> Result<LabelMap> {
    let arr = etns::decode(bytes)?;
    if arr.dims.len() != 2 {
        return Err(Error::BadRank {
            expected: 2,
            found: arr.dims.len() as u8,
        });
    }
    match arr.payload {
        Payload::U8(labels) => LabelMap::new(arr.dims[0], arr.dims[1], classes, labels),
        Payload::F32(_) => Err(Error::UnsupportedDtype(etns::Dtype::F32 as u8)),
    }
}

pub fn write_label_map(m: &LabelMap) -> Vec<u8> {
    etns::encode_u8(&[m.height, m.width], &m.labels)
}
