//! IDX files: two zero bytes, a type code, a dimension count, big-endian
//! `u32` extents, then the payload. Unsigned-byte pixels (type `0x08`) are
//! rescaled to `[0, 1]`; big-endian `f64` payloads (type `0x0E`) are read
//! as is.

use std::path::Path;

use super::{default_class_names, Dataset, Provenance};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const UBYTE: u8 = 0x08;
const DOUBLE: u8 = 0x0E;

/// Decoded IDX array: extents and values as `f64` (bytes not rescaled).
#[derive(Clone, Debug, PartialEq)]
pub struct IdxArray {
    pub type_code: u8,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn parse_idx(name: &str, bytes: &[u8]) -> Result<IdxArray> {
    let err = |offset: usize, msg: String| Error::parse(name, format!("offset {offset}"), msg);
    if bytes.len() < 4 {
        return Err(err(0, "truncated magic number".into()));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(err(0, format!("bad magic number {:02x}{:02x}{:02x}{:02x}", bytes[0], bytes[1], bytes[2], bytes[3])));
    }
    let type_code = bytes[2];
    if type_code != UBYTE && type_code != DOUBLE {
        return Err(err(2, format!("unsupported data type 0x{type_code:02x}")));
    }
    let ndim = bytes[3] as usize;
    if ndim == 0 {
        return Err(err(3, "zero dimensions".into()));
    }
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(err(4, "truncated dimension list".into()));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("chunk of 4")) as usize)
        .collect();
    let count: usize = dims.iter().product();
    let width = if type_code == UBYTE { 1 } else { 8 };
    let expected = header + count * width;
    if bytes.len() != expected {
        return Err(err(
            header,
            format!("payload holds {} bytes, dimensions {dims:?} need {}", bytes.len() - header, count * width),
        ));
    }
    let payload = &bytes[header..];
    let values = if type_code == UBYTE {
        payload.iter().map(|&b| f64::from(b)).collect()
    } else {
        payload
            .chunks_exact(8)
            .map(|c| f64::from_be_bytes(c.try_into().expect("chunk of 8")))
            .collect()
    };
    Ok(IdxArray {
        type_code,
        dims,
        values,
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an image file (`[N, H, W]`, `[N, C, H, W]` or `[N, D]`) and a
/// `[N]` unsigned-byte label file.
pub fn load_idx(images: &Path, labels: &Path, classes: Option<usize>) -> Result<Dataset> {
    let iname = images.display().to_string();
    let lname = labels.display().to_string();
    let img = parse_idx(&iname, &read(images)?)?;
    let lab = parse_idx(&lname, &read(labels)?)?;
    if lab.type_code != UBYTE || lab.dims.len() != 1 {
        return Err(Error::parse(&lname, "offset 2", "labels must be a 1-D unsigned byte array"));
    }
    let n = img.dims[0];
    if lab.dims[0] != n {
        return Err(Error::parse(
            &lname,
            "offset 4",
            format!("{} labels for {n} images", lab.dims[0]),
        ));
    }
    let labels: Vec<usize> = lab.values.iter().map(|&v| v as usize).collect();
    if let (Some(c), Some(pos)) = (classes, labels.iter().position(|&l| Some(l) >= classes)) {
        return Err(Error::parse(
            &lname,
            format!("offset {}", 8 + pos),
            format!("label {} out of range for {c} classes", labels[pos]),
        ));
    }
    let mut shape = match img.dims.len() {
        2 | 4 => img.dims.clone(),
        3 => vec![n, 1, img.dims[1], img.dims[2]],
        d => return Err(Error::parse(&iname, "offset 3", format!("unsupported image rank {d}"))),
    };
    shape[0] = n;
    let values = if img.type_code == UBYTE {
        img.values.into_iter().map(|v| v / 255.0).collect()
    } else {
        img.values
    };
    let c = classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    Dataset::new(Tensor::new(shape, values)?, labels, default_class_names(c), Provenance::Idx)
}

fn header(type_code: u8, dims: &[usize]) -> Vec<u8> {
    let mut b = vec![0, 0, type_code, dims.len() as u8];
    for &d in dims {
        b.extend_from_slice(&(d as u32).to_be_bytes());
    }
    b
}

/// Writes images as unsigned bytes (`round(clamp(v, 0, 1) * 255)`) and
/// labels as unsigned bytes. Single-channel images are stored as `[N, H, W]`.
pub fn write_idx(ds: &Dataset, images: &Path, labels: &Path) -> Result<()> {
    if ds.num_classes() > 256 {
        return Err(Error::invalid("IDX labels hold at most 256 classes"));
    }
    let shape = ds.inputs().shape();
    let dims: Vec<usize> = if shape.len() == 4 && shape[1] == 1 {
        vec![shape[0], shape[2], shape[3]]
    } else {
        shape.to_vec()
    };
    let mut img = header(UBYTE, &dims);
    img.extend(ds.inputs().data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut lab = header(UBYTE, &[ds.len()]);
    lab.extend(ds.labels().iter().map(|&l| l as u8));
    std::fs::write(images, img).map_err(|e| Error::io(images, e))?;
    std::fs::write(labels, lab).map_err(|e| Error::io(labels, e))
}
