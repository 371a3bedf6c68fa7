//! The NVF1 container: a 32-byte little-endian header followed by a
//! channel-interleaved, x-fastest payload.
//!
//! ```text
//! 0..4    magic "NVF1"
//! 4       dtype     0 = f32, 1 = u32
//! 5       channels  1 = scalar volume, 3 = vector field
//! 6..8    reserved, zero
//! 8..20   dims X, Y, Z (u32)
//! 20..32  spacing (f32 x 3)
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::scalar::Real;
use crate::volume::{check_spacing, Dims, LabelVolume, Volume};

pub const MAGIC: [u8; 4] = *b"NVF1";
pub const HEADER_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Dtype {
    F32 = 0,
    U32 = 1,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeHeader {
    pub dtype: Dtype,
    pub channels: u8,
    pub dims: Dims,
    pub spacing: [f32; 3],
}

impl VolumeHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(&MAGIC);
        b[4] = self.dtype as u8;
        b[5] = self.channels;
        for a in 0..3 {
            b[8 + 4 * a..12 + 4 * a].copy_from_slice(&(self.dims.0[a] as u32).to_le_bytes());
            b[20 + 4 * a..24 + 4 * a].copy_from_slice(&self.spacing[a].to_le_bytes());
        }
        b
    }

    /// Parses and validates a header; `path` is only used for messages.
    pub fn parse(bytes: &[u8], path: &Path) -> Result<Self> {
        let fmt = |msg: String| Error::Format {
            path: path.to_path_buf(),
            msg,
        };
        if bytes.len() < HEADER_LEN {
            return Err(if bytes.len() >= 4 && bytes[0..4] != MAGIC {
                fmt("bad magic".into())
            } else {
                Error::Corrupt {
                    path: path.to_path_buf(),
                    msg: format!("truncated header ({} bytes)", bytes.len()),
                }
            });
        }
        if bytes[0..4] != MAGIC {
            return Err(fmt(format!(
                "bad magic {:?}",
                String::from_utf8_lossy(&bytes[0..4])
            )));
        }
        let dtype = match bytes[4] {
            0 => Dtype::F32,
            1 => Dtype::U32,
            d => return Err(fmt(format!("unknown dtype code {d}"))),
        };
        let channels = bytes[5];
        if channels != 1 && channels != 3 {
            return Err(fmt(format!("unsupported channel count {channels}")));
        }
        if bytes[6] != 0 || bytes[7] != 0 {
            return Err(fmt("reserved bytes are not zero".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let dims = Dims::new(u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize);
        let spacing = [f32_at(20), f32_at(24), f32_at(28)];
        if dims.0.contains(&0) {
            return Err(fmt(format!("zero-sized dims {dims}")));
        }
        check_spacing(spacing)?;
        Ok(Self {
            dtype,
            channels,
            dims,
            spacing,
        })
    }

    /// Payload length in bytes, or `None` if it overflows.
    pub fn payload_len(&self) -> Option<usize> {
        self.dims
            .checked_len()?
            .checked_mul(self.channels as usize)?
            .checked_mul(4)
    }
}

/// Decoded payload of an NVF1 file.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    U32(Vec<u32>),
}

pub fn encode(header: &VolumeHeader, payload: &Payload) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + header.payload_len().unwrap_or(0));
    out.extend_from_slice(&header.to_bytes());
    match payload {
        Payload::F32(v) => v
            .iter()
            .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        Payload::U32(v) => v
            .iter()
            .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<(VolumeHeader, Payload)> {
    let header = VolumeHeader::parse(bytes, path)?;
    let corrupt = |msg: String| Error::Corrupt {
        path: path.to_path_buf(),
        msg,
    };
    let need = header
        .payload_len()
        .ok_or_else(|| corrupt(format!("dims {} overflow", header.dims)))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != need {
        return Err(corrupt(format!(
            "payload is {} bytes, header implies {need}",
            body.len()
        )));
    }
    let words = body.chunks_exact(4).map(|c| c.try_into().unwrap());
    let payload = match header.dtype {
        Dtype::F32 => Payload::F32(words.map(f32::from_le_bytes).collect()),
        Dtype::U32 => Payload::U32(words.map(u32::from_le_bytes).collect()),
    };
    Ok((header, payload))
}

pub fn read_file(path: &Path) -> Result<(VolumeHeader, Payload)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

fn expect_channels(h: &VolumeHeader, channels: u8, path: &Path) -> Result<()> {
    if h.channels != channels {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("expected {channels} channel(s), file has {}", h.channels),
        });
    }
    Ok(())
}

/// Loads an intensity volume (dtype f32, one channel).
pub fn load_volume<T: Real>(path: impl AsRef<Path>) -> Result<Volume<T>> {
    let path = path.as_ref();
    let (h, payload) = read_file(path)?;
    expect_channels(&h, 1, path)?;
    match payload {
        Payload::F32(v) => {
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::Validation(format!(
                    "{}: non-finite intensity at voxel {:?}",
                    path.display(),
                    h.dims.coords(i)
                )));
            }
            Volume::new(
                h.dims,
                h.spacing,
                v.into_iter().map(|x| T::lit(x as f64)).collect(),
            )
        }
        Payload::U32(_) => Err(Error::Validation(format!(
            "{}: holds labels (dtype 1), expected an intensity volume",
            path.display()
        ))),
    }
}

/// Loads a label volume (dtype u32, one channel).
pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    let path = path.as_ref();
    let (h, payload) = read_file(path)?;
    expect_channels(&h, 1, path)?;
    match payload {
        Payload::U32(v) => LabelVolume::new(h.dims, h.spacing, v),
        Payload::F32(_) => Err(Error::Validation(format!(
            "{}: holds intensities (dtype 0), expected labels",
            path.display()
        ))),
    }
}

/// Loads a vector field (dtype f32, three channels).
pub fn load_field<T: Real>(path: impl AsRef<Path>) -> Result<VectorField<T>> {
    let path = path.as_ref();
    let (h, payload) = read_file(path)?;
    expect_channels(&h, 3, path)?;
    match payload {
        Payload::F32(v) => VectorField::new(
            h.dims,
            h.spacing,
            v.into_iter().map(|x| T::lit(x as f64)).collect(),
        ),
        Payload::U32(_) => Err(Error::Validation(format!(
            "{}: vector fields must use dtype 0",
            path.display()
        ))),
    }
}

/// File bytes of an intensity volume; values are stored as `f32`.
pub fn encode_volume<T: Real>(v: &Volume<T>) -> Vec<u8> {
    let h = VolumeHeader {
        dtype: Dtype::F32,
        channels: 1,
        dims: v.dims(),
        spacing: v.spacing(),
    };
    encode(
        &h,
        &Payload::F32(v.data().iter().map(|x| x.as_f32()).collect()),
    )
}

pub fn encode_labels(l: &LabelVolume) -> Vec<u8> {
    let h = VolumeHeader {
        dtype: Dtype::U32,
        channels: 1,
        dims: l.dims(),
        spacing: l.spacing(),
    };
    encode(&h, &Payload::U32(l.data().to_vec()))
}

pub fn encode_field<T: Real>(u: &VectorField<T>) -> Vec<u8> {
    let h = VolumeHeader {
        dtype: Dtype::F32,
        channels: 3,
        dims: u.dims(),
        spacing: u.spacing(),
    };
    encode(
        &h,
        &Payload::F32(u.data().iter().map(|x| x.as_f32()).collect()),
    )
}

fn write_bytes(path: &Path, bytes: Vec<u8>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_volume<T: Real>(v: &Volume<T>, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), encode_volume(v))
}

/// Saves labels with the given dtype; only [`Dtype::U32`] is valid.
pub fn save_labels_as(l: &LabelVolume, dtype: Dtype, path: impl AsRef<Path>) -> Result<()> {
    if dtype != Dtype::U32 {
        return Err(Error::Validation(
            "label volumes must be stored with dtype 1 (u32)".into(),
        ));
    }
    write_bytes(path.as_ref(), encode_labels(l))
}

pub fn save_labels(l: &LabelVolume, path: impl AsRef<Path>) -> Result<()> {
    save_labels_as(l, Dtype::U32, path)
}

pub fn save_field<T: Real>(u: &VectorField<T>, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), encode_field(u))
}

/// Imports a headerless little-endian `f32` dump in x-fastest order.
pub fn import_raw_f32<T: Real>(
    path: impl AsRef<Path>,
    dims: Dims,
    spacing: [f32; 3],
) -> Result<Volume<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let need = dims.checked_len().and_then(|n| n.checked_mul(4));
    if need != Some(bytes.len()) {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            msg: format!(
                "raw file is {} bytes, dims {dims} need {need:?}",
                bytes.len()
            ),
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    Volume::new(dims, spacing, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_voxel_layout() {
        let v = Volume::new(Dims::cube(1), [1.0, 2.0, 0.5], vec![3.5f32]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.nvf");
        save_volume(&v, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 4);
        assert_eq!(&bytes[0..4], b"NVF1");
        assert_eq!(bytes[4], 0);
        assert_eq!(bytes[5], 1);
        assert_eq!(&bytes[6..8], &[0, 0]);
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[24..28], &2.0f32.to_le_bytes());
        assert_eq!(&bytes[32..36], &3.5f32.to_le_bytes());
    }

    #[test]
    fn index_order_on_load() {
        let h = VolumeHeader {
            dtype: Dtype::F32,
            channels: 1,
            dims: Dims::cube(2),
            spacing: [1.0; 3],
        };
        let bytes = encode(&h, &Payload::F32((0..8).map(|i| i as f32).collect()));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.nvf");
        fs::write(&p, bytes).unwrap();
        let v: Volume<f64> = load_volume(&p).unwrap();
        assert_eq!(v.data()[7], 7.0);
        assert_eq!(v.get(1, 1, 1), 7.0);
    }

    #[test]
    fn error_paths() {
        let dir = tempfile::tempdir().unwrap();
        let h = VolumeHeader {
            dtype: Dtype::F32,
            channels: 1,
            dims: Dims::cube(2),
            spacing: [1.0; 3],
        };
        let good = encode(&h, &Payload::F32(vec![1.0; 8]));

        let mut bad = good.clone();
        bad[0] = b'X';
        let p = dir.path().join("bad.nvf");
        fs::write(&p, &bad).unwrap();
        assert!(matches!(load_volume::<f64>(&p), Err(Error::Format { .. })));

        let p = dir.path().join("short.nvf");
        fs::write(&p, &good[..good.len() - 1]).unwrap();
        assert!(matches!(load_volume::<f64>(&p), Err(Error::Corrupt { .. })));

        let mut big = good.clone();
        big[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        big[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        big[16..20].copy_from_slice(&u32::MAX.to_le_bytes());
        let p = dir.path().join("huge.nvf");
        fs::write(&p, &big).unwrap();
        assert!(matches!(load_volume::<f64>(&p), Err(Error::Corrupt { .. })));

        let mut nan = good.clone();
        nan[HEADER_LEN..HEADER_LEN + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        let p = dir.path().join("nan.nvf");
        fs::write(&p, &nan).unwrap();
        assert!(matches!(load_volume::<f64>(&p), Err(Error::Validation(_))));

        let mut reserved = good.clone();
        reserved[6] = 1;
        let p = dir.path().join("res.nvf");
        fs::write(&p, &reserved).unwrap();
        assert!(matches!(load_volume::<f64>(&p), Err(Error::Format { .. })));

        assert!(matches!(
            load_volume::<f64>(dir.path().join("missing.nvf")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn labels_require_u32() {
        let l = LabelVolume::new(Dims::cube(2), [1.0; 3], vec![0, 1, 2, 3, 0, 1, 2, 3]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.nvf");
        assert!(matches!(
            save_labels_as(&l, Dtype::F32, &p),
            Err(Error::Validation(_))
        ));
        save_labels(&l, &p).unwrap();
        assert_eq!(load_labels(&p).unwrap(), l);
        assert!(load_volume::<f64>(&p).is_err());
    }

    #[test]
    fn field_channel_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.nvf");
        save_field(&VectorField::<f64>::zeros(Dims::cube(2)), &p).unwrap();
        assert!(matches!(load_volume::<f64>(&p), Err(Error::Format { .. })));
        assert_eq!(
            load_field::<f64>(&p).unwrap(),
            VectorField::zeros(Dims::cube(2))
        );
    }

    #[test]
    fn raw_import() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.raw");
        let vals: Vec<u8> = (0..6).flat_map(|i| (i as f32).to_le_bytes()).collect();
        fs::write(&p, vals).unwrap();
        let v: Volume<f64> = import_raw_f32(&p, Dims::new(3, 2, 1), [1.0; 3]).unwrap();
        assert_eq!(v.get(2, 1, 0), 5.0);
        assert!(import_raw_f32::<f64>(&p, Dims::new(3, 3, 1), [1.0; 3]).is_err());
    }
}
