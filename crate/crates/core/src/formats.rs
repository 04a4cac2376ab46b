//! Little-endian binary formats shared with external tools.
//!
//! * MVOL: `"MVOL"`, u32 version = 1, u32 dx, u32 dy, u32 dz, u8 dtype
//!   (0 = u8 mask, 1 = f32 intensities), then voxels x-fastest.
//! * FVEC: `"FVEC"`, u32 version = 1, u32 K, u32 F, u32 ax, u32 ay, u32 az,
//!   then K·F f32 row-major.
//! * tile: u32 height, u32 width, then height·width f32 row-major.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::aggregation::FeatureBag;
use crate::error::{Error, Result};
use crate::numerics::Mat;
use crate::volume::{LabeledVolume, Tile};

const MVOL_MAGIC: &[u8; 4] = b"MVOL";
const FVEC_MAGIC: &[u8; 4] = b"FVEC";
const VERSION: u32 = 1;

/// Voxel payload of one MVOL file.
#[derive(Debug, Clone, PartialEq)]
pub enum MvolData {
    Mask(Vec<u8>),
    Intensities(Vec<f32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mvol {
    pub dims: (usize, usize, usize),
    pub data: MvolData,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    format: &'static str,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8], format: &'static str) -> Self {
        Cursor {
            buf,
            pos: 0,
            format,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::format(self.format, "unexpected end of data"))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::format(self.format, "size overflow"))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::format(self.format, "bad magic"));
        }
        let version = self.u32()?;
        if version != VERSION {
            return Err(Error::format(
                self.format,
                format!("unsupported version {version}"),
            ));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(
                self.format,
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

fn to_u32(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value).map_err(|_| Error::InvalidInput(format!("{what} {value} exceeds u32")))
}

pub fn decode_mvol(buf: &[u8]) -> Result<Mvol> {
    let mut c = Cursor::new(buf, "MVOL");
    c.magic(MVOL_MAGIC)?;
    let dx = c.u32()? as usize;
    let dy = c.u32()? as usize;
    let dz = c.u32()? as usize;
    if dx == 0 || dy == 0 || dz == 0 {
        return Err(Error::format("MVOL", "zero dimension"));
    }
    let n = dx
        .checked_mul(dy)
        .and_then(|v| v.checked_mul(dz))
        .ok_or_else(|| Error::format("MVOL", "size overflow"))?;
    let data = match c.u8()? {
        0 => MvolData::Mask(c.take(n)?.to_vec()),
        1 => MvolData::Intensities(c.f32s(n)?),
        other => return Err(Error::format("MVOL", format!("unknown dtype {other}"))),
    };
    c.finish()?;
    Ok(Mvol {
        dims: (dx, dy, dz),
        data,
    })
}

pub fn encode_mvol(vol: &Mvol) -> Result<Vec<u8>> {
    let (dx, dy, dz) = vol.dims;
    let mut out = Vec::new();
    out.extend_from_slice(MVOL_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in [dx, dy, dz] {
        out.extend_from_slice(&to_u32(d, "dimension")?.to_le_bytes());
    }
    match &vol.data {
        MvolData::Mask(m) => {
            out.push(0);
            out.extend_from_slice(m);
        }
        MvolData::Intensities(v) => {
            out.push(1);
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn read_mvol(path: &Path) -> Result<Mvol> {
    decode_mvol(&read_all(path)?)
}

pub fn write_mvol(path: &Path, vol: &Mvol) -> Result<()> {
    fs::write(path, encode_mvol(vol)?)?;
    Ok(())
}

/// Loads an intensity/mask pair into a [`LabeledVolume`].
pub fn read_labeled_volume(intensities: &Path, mask: &Path) -> Result<LabeledVolume> {
    let a = read_mvol(intensities)?;
    let b = read_mvol(mask)?;
    if a.dims != b.dims {
        return Err(Error::InvalidInput(format!(
            "intensity dims {:?} differ from mask dims {:?}",
            a.dims, b.dims
        )));
    }
    match (a.data, b.data) {
        (MvolData::Intensities(i), MvolData::Mask(m)) => LabeledVolume::new(a.dims, i, m),
        _ => Err(Error::format(
            "MVOL",
            "expected an f32 intensity file and a u8 mask file",
        )),
    }
}

pub fn write_labeled_volume(v: &LabeledVolume, intensities: &Path, mask: &Path) -> Result<()> {
    write_mvol(
        intensities,
        &Mvol {
            dims: v.dims(),
            data: MvolData::Intensities(v.intensities().to_vec()),
        },
    )?;
    write_mvol(
        mask,
        &Mvol {
            dims: v.dims(),
            data: MvolData::Mask(v.mask().to_vec()),
        },
    )
}

pub fn encode_fvec(bag: &FeatureBag) -> Result<Vec<u8>> {
    let k = bag.len();
    let f = bag.dim();
    let mut out = Vec::with_capacity(28 + 4 * k * f);
    out.extend_from_slice(FVEC_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(k, "slice count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(f, "feature dim")?.to_le_bytes());
    for a in bag.anchor_pos() {
        out.extend_from_slice(&to_u32(a, "anchor position")?.to_le_bytes());
    }
    for &x in bag.features().as_slice() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    Ok(out)
}

/// Decodes an FVEC payload; `patient_id` is not part of the format.
pub fn decode_fvec(buf: &[u8], patient_id: &str) -> Result<FeatureBag> {
    let mut c = Cursor::new(buf, "FVEC");
    c.magic(FVEC_MAGIC)?;
    let k = c.u32()? as usize;
    let f = c.u32()? as usize;
    let anchors = [c.u32()? as usize, c.u32()? as usize, c.u32()? as usize];
    if k == 0 || f == 0 {
        return Err(Error::format("FVEC", "zero K or F"));
    }
    let n = k
        .checked_mul(f)
        .ok_or_else(|| Error::format("FVEC", "size overflow"))?;
    let values = c.f32s(n)?;
    c.finish()?;
    let features = Mat::from_vec(k, f, values.into_iter().map(f64::from).collect())?;
    FeatureBag::new(features, anchors, patient_id)
}

pub fn read_fvec(path: &Path, patient_id: &str) -> Result<FeatureBag> {
    decode_fvec(&read_all(path)?, patient_id)
}

pub fn write_fvec(path: &Path, bag: &FeatureBag) -> Result<()> {
    fs::write(path, encode_fvec(bag)?)?;
    Ok(())
}

pub fn encode_tile(tile: &Tile) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + 4 * tile.data.len());
    out.extend_from_slice(&to_u32(tile.height, "tile height")?.to_le_bytes());
    out.extend_from_slice(&to_u32(tile.width, "tile width")?.to_le_bytes());
    for &x in &tile.data {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tile(buf: &[u8]) -> Result<Tile> {
    let mut c = Cursor::new(buf, "tile");
    let height = c.u32()? as usize;
    let width = c.u32()? as usize;
    let data = c.f32s(height * width)?.into_iter().map(f64::from).collect();
    c.finish()?;
    Ok(Tile {
        height,
        width,
        data,
    })
}

pub fn write_tile(path: &Path, tile: &Tile) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_tile(tile)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    #[test]
    fn mvol_header_layout() {
        let vol = Mvol {
            dims: (2, 1, 1),
            data: MvolData::Mask(vec![0, 1]),
        };
        let bytes = encode_mvol(&vol).unwrap();
        assert_eq!(&bytes[..4], b"MVOL");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(bytes[20], 0);
        assert_eq!(&bytes[21..], &[0, 1]);
        assert_eq!(decode_mvol(&bytes).unwrap(), vol);
    }

    #[test]
    fn mvol_rejects_corruption() {
        let vol = Mvol {
            dims: (2, 2, 1),
            data: MvolData::Intensities(vec![1.0, 2.0, 3.0, 4.0]),
        };
        let bytes = encode_mvol(&vol).unwrap();
        assert!(decode_mvol(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_mvol(&bad).is_err());
        let mut bad = bytes.clone();
        bad[20] = 7;
        assert!(decode_mvol(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(decode_mvol(&long).is_err());
    }

    #[test]
    fn fvec_header_layout() {
        let features = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let bag = FeatureBag::new(features, [2, 0, 1], "p").unwrap();
        let bytes = encode_fvec(&bag).unwrap();
        assert_eq!(bytes.len(), 28 + 24);
        assert_eq!(&bytes[..4], b"FVEC");
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &2u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &2u32.to_le_bytes());
        assert_eq!(&bytes[28..32], &1.0f32.to_le_bytes());
    }

    #[test]
    fn fvec_rejects_bad_anchors() {
        let features = Mat::zeros(3, 2);
        let bag = FeatureBag::new(features, [0, 1, 2], "p").unwrap();
        let mut bytes = encode_fvec(&bag).unwrap();
        bytes[24..28].copy_from_slice(&9u32.to_le_bytes());
        assert!(decode_fvec(&bytes, "p").is_err());
    }

    proptest! {
        #[test]
        fn fvec_roundtrip(k in 3usize..10, f in 1usize..9, seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let data: Vec<f64> = (0..k * f).map(|_| f64::from(rng.normal() as f32)).collect();
            let features = Mat::from_vec(k, f, data).unwrap();
            let bag = FeatureBag::new(features, [0, k / 2, k - 1], "x").unwrap();
            let back = decode_fvec(&encode_fvec(&bag).unwrap(), "x").unwrap();
            prop_assert_eq!(back, bag);
        }

        #[test]
        fn tile_roundtrip(h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let data = (0..h * w).map(|_| f64::from(rng.normal() as f32)).collect();
            let tile = Tile { height: h, width: w, data };
            prop_assert_eq!(decode_tile(&encode_tile(&tile).unwrap()).unwrap(), tile);
        }
    }
}
