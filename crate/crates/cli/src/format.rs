//! Raw tensor files (`SCNT`) and 16-bit PGM previews.

use std::fs;
use std::path::Path;

use scndb::{Scalar, Tensor};

use crate::error::{CliError, CliResult};

pub const RAW_MAGIC: &[u8; 4] = b"SCNT";

/// Element type codes shared by raw tensor files and checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32 = 1,
    F64 = 2,
    U64 = 3,
    U8 = 4,
}

impl DType {
    pub fn from_code(code: u8) -> CliResult<Self> {
        match code {
            1 => Ok(DType::F32),
            2 => Ok(DType::F64),
            3 => Ok(DType::U64),
            4 => Ok(DType::U8),
            _ => Err(CliError::Data(format!("unknown dtype code {code}"))),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 | DType::U64 => 8,
            DType::U8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RawData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U64(Vec<u64>),
    U8(Vec<u8>),
}

/// Shape plus typed little-endian payload.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTensor {
    pub shape: Vec<usize>,
    pub data: RawData,
}

/// Bounds-checked little-endian reader.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> CliResult<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CliError::Data(format!("truncated: needed {n} bytes at offset {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> CliResult<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> CliResult<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub(crate) fn u32(&mut self) -> CliResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

impl RawTensor {
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Self {
        let data = if T::NAME == "f64" {
            RawData::F64(t.data().iter().map(|v| v.to_f64_lossy()).collect())
        } else {
            RawData::F32(t.data().iter().map(|v| v.to_f64_lossy() as f32).collect())
        };
        Self { shape: t.shape().to_vec(), data }
    }

    pub fn u64(shape: Vec<usize>, values: Vec<u64>) -> Self {
        Self { shape, data: RawData::U64(values) }
    }

    pub fn u8(shape: Vec<usize>, values: Vec<u8>) -> Self {
        Self { shape, data: RawData::U8(values) }
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            RawData::F32(_) => DType::F32,
            RawData::F64(_) => DType::F64,
            RawData::U64(_) => DType::U64,
            RawData::U8(_) => DType::U8,
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            RawData::F32(v) => v.len(),
            RawData::F64(v) => v.len(),
            RawData::U64(v) => v.len(),
            RawData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Floating payload converted to `T`; integer payloads are rejected.
    pub fn to_tensor<T: Scalar>(&self) -> CliResult<Tensor<T>> {
        let values: Vec<T> = match &self.data {
            RawData::F32(v) => v.iter().map(|&x| T::lit(f64::from(x))).collect(),
            RawData::F64(v) => v.iter().map(|&x| T::lit(x)).collect(),
            _ => return Err(CliError::Data(format!("expected a floating tensor, got {:?}", self.dtype()))),
        };
        Ok(Tensor::new(self.shape.clone(), values)?)
    }

    pub fn as_u64(&self) -> CliResult<&[u64]> {
        match &self.data {
            RawData::U64(v) => Ok(v),
            _ => Err(CliError::Data(format!("expected a u64 tensor, got {:?}", self.dtype()))),
        }
    }

    pub fn as_u8(&self) -> CliResult<&[u8]> {
        match &self.data {
            RawData::U8(v) => Ok(v),
            _ => Err(CliError::Data(format!("expected a u8 tensor, got {:?}", self.dtype()))),
        }
    }

    /// dtype, rank, dims and payload.
    pub(crate) fn write_body(&self, out: &mut Vec<u8>) {
        out.push(self.dtype() as u8);
        out.push(self.shape.len() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &self.data {
            RawData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            RawData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            RawData::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            RawData::U8(v) => out.extend_from_slice(v),
        }
    }

    pub(crate) fn read_body(r: &mut Reader) -> CliResult<Self> {
        let dtype = DType::from_code(r.u8()?)?;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<CliResult<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| CliError::Data(format!("shape {shape:?} overflows")))?;
        let bytes = n
            .checked_mul(dtype.size())
            .ok_or_else(|| CliError::Data(format!("shape {shape:?} overflows")))?;
        let raw = r.take(bytes)?;
        let data = match dtype {
            DType::F32 => RawData::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
            DType::F64 => RawData::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
            DType::U64 => RawData::U64(raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect()),
            DType::U8 => RawData::U8(raw.to_vec()),
        };
        Ok(Self { shape, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = RAW_MAGIC.to_vec();
        self.write_body(&mut out);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != RAW_MAGIC {
            return Err(CliError::Data("not a raw tensor file (bad magic)".into()));
        }
        let t = Self::read_body(&mut r)?;
        if r.remaining() != 0 {
            return Err(CliError::Data(format!(
                "{} trailing bytes after payload of shape {:?}",
                r.remaining(),
                t.shape
            )));
        }
        Ok(t)
    }
}

pub fn write_raw(path: &Path, t: &RawTensor) -> CliResult<()> {
    fs::write(path, t.to_bytes()).map_err(|e| CliError::io(path, e))
}

pub fn read_raw(path: &Path) -> CliResult<RawTensor> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    RawTensor::from_bytes(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn write_image<T: Scalar>(path: &Path, img: &Tensor<T>) -> CliResult<()> {
    write_raw(path, &RawTensor::from_tensor(img))
}

/// Reads an `H x W` image (a leading unit axis is dropped).
pub fn read_image<T: Scalar>(path: &Path) -> CliResult<Tensor<T>> {
    let t: Tensor<T> = read_raw(path)?.to_tensor()?;
    match *t.shape() {
        [_, _] => Ok(t),
        [1, h, w] => Ok(t.reshape(&[h, w])?),
        ref s => Err(CliError::Data(format!("{}: expected an H x W image, got {s:?}", path.display()))),
    }
}

/// 16-bit binary PGM of an `H x W` image; values are clipped to `[0, 1]`.
pub fn pgm_bytes<T: Scalar>(img: &Tensor<T>) -> CliResult<Vec<u8>> {
    let (h, w) = match *img.shape() {
        [h, w] => (h, w),
        ref s => return Err(CliError::Data(format!("PGM needs an H x W image, got {s:?}"))),
    };
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    for v in img.data() {
        let v = v.to_f64_lossy();
        let level = if v.is_nan() { 0.0 } else { (v.clamp(0.0, 1.0) * 65535.0).round() };
        out.extend_from_slice(&(level as u16).to_be_bytes());
    }
    Ok(out)
}

pub fn write_pgm<T: Scalar>(path: &Path, img: &Tensor<T>) -> CliResult<()> {
    fs::write(path, pgm_bytes(img)?).map_err(|e| CliError::io(path, e))
}

/// Decodes a 16-bit binary PGM into `[0, 1]` values.
pub fn parse_pgm(bytes: &[u8]) -> CliResult<Tensor<f64>> {
    let bad = || CliError::Data("malformed 16-bit PGM".into());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?);
    }
    if fields[0] != "P5" || fields[3] != "65535" {
        return Err(bad());
    }
    let w: usize = fields[1].parse().map_err(|_| bad())?;
    let h: usize = fields[2].parse().map_err(|_| bad())?;
    let payload = bytes.get(pos + 1..).ok_or_else(bad)?;
    if payload.len() != 2 * w * h {
        return Err(bad());
    }
    let values = payload
        .chunks_exact(2)
        .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])) / 65535.0)
        .collect();
    Ok(Tensor::new(vec![h, w], values)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_round_trip_every_dtype() {
        let cases = [
            RawTensor { shape: vec![2, 3], data: RawData::F32(vec![0.0, 1.5, -2.0, f32::MIN_POSITIVE, 7.0, 1e-30]) },
            RawTensor { shape: vec![3], data: RawData::F64(vec![0.1, -0.2, 1e300]) },
            RawTensor::u64(vec![3], vec![0, u64::MAX, 42]),
            RawTensor::u8(vec![2, 2], vec![0, 1, 254, 255]),
            RawTensor::u64(vec![], vec![9]),
        ];
        for t in cases {
            let bytes = t.to_bytes();
            assert_eq!(bytes.len(), 4 + 2 + 4 * t.shape.len() + t.len() * t.dtype().size());
            assert_eq!(RawTensor::from_bytes(&bytes).unwrap(), t);
        }
    }

    #[test]
    fn layout_is_little_endian() {
        let t = RawTensor { shape: vec![1], data: RawData::F32(vec![1.0]) };
        assert_eq!(t.to_bytes(), vec![b'S', b'C', b'N', b'T', 1, 1, 1, 0, 0, 0, 0, 0, 0x80, 0x3f]);
    }

    #[test]
    fn corrupt_files_rejected() {
        let t = RawTensor::u8(vec![4], vec![1, 2, 3, 4]);
        let bytes = t.to_bytes();
        assert!(RawTensor::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(RawTensor::from_bytes(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(RawTensor::from_bytes(&magic).is_err());
        let mut dtype = bytes;
        dtype[4] = 9;
        assert!(RawTensor::from_bytes(&dtype).is_err());
    }

    #[test]
    fn pgm_round_trip_quantizes_to_16_bits() {
        let img = Tensor::<f64>::from_fn(&[3, 5], |i| i as f64 / 14.0);
        let back = parse_pgm(&pgm_bytes(&img).unwrap()).unwrap();
        assert_eq!(back.shape(), &[3, 5]);
        assert!(img.max_abs_diff(&back).unwrap() <= 0.5 / 65535.0 + 1e-12);
        let clipped = parse_pgm(&pgm_bytes(&Tensor::<f64>::from_f64(&[1, 2], &[-1.0, 2.0]).unwrap()).unwrap()).unwrap();
        assert_eq!(clipped.data(), &[0.0, 1.0]);
    }
}
