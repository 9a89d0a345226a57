//! "NBT1" tensors: magic, `u32` rank, `u32` dims, then `f32` values, all little-endian.
//!
//! Clips are stored as rank 3 `(frames, height, width)`. Rank 2 files load as a single frame.

use std::path::Path;

use noisescale_core::{Clip, ClipShape, Scalar};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"NBT1";

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("not an NBT1 tensor (magic {0:?})")]
    BadMagic([u8; 4]),

    #[error("tensor truncated: needed {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },

    #[error("tensor dimensions {0:?} overflow")]
    DimOverflow(Vec<u64>),

    #[error("{0} trailing bytes after tensor data")]
    TrailingData(usize),

    #[error("unsupported rank {0}")]
    BadRank(u32),

    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize) -> Result<&'a [u8], TensorError> {
    let end = at.checked_add(n).filter(|&e| e <= bytes.len());
    match end {
        Some(end) => {
            let s = &bytes[*at..end];
            *at = end;
            Ok(s)
        }
        None => Err(TensorError::Truncated { needed: at.saturating_add(n), found: bytes.len() }),
    }
}

fn read_u32(bytes: &[u8], at: &mut usize) -> Result<u32, TensorError> {
    Ok(u32::from_le_bytes(take(bytes, at, 4)?.try_into().unwrap()))
}

pub fn encode<T: Scalar>(clip: &Clip<T>) -> Result<Vec<u8>, TensorError> {
    let dims = [clip.frames(), clip.height(), clip.width()];
    let dims32: Vec<u32> = dims
        .iter()
        .map(|&d| u32::try_from(d))
        .collect::<Result<_, _>>()
        .map_err(|_| TensorError::DimOverflow(dims.iter().map(|&d| d as u64).collect()))?;
    let mut out = Vec::with_capacity(8 + 4 * dims.len() + 4 * clip.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(dims32.len() as u32).to_le_bytes());
    for d in dims32 {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &x in clip.data() {
        let v = x.to_f32().unwrap_or_else(|| x.to_f64_lossy() as f32);
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Clip<f32>, TensorError> {
    let mut at = 0;
    let magic: [u8; 4] = match bytes.get(..4) {
        Some(m) => m.try_into().unwrap(),
        None => {
            let mut m = [0u8; 4];
            m[..bytes.len()].copy_from_slice(bytes);
            if bytes != &MAGIC[..bytes.len()] {
                return Err(TensorError::BadMagic(m));
            }
            return Err(TensorError::Truncated { needed: 4, found: bytes.len() });
        }
    };
    if &magic != MAGIC {
        return Err(TensorError::BadMagic(magic));
    }
    at += 4;
    let rank = read_u32(bytes, &mut at)?;
    if !(2..=3).contains(&rank) {
        return Err(TensorError::BadRank(rank));
    }
    let dims: Vec<u64> = (0..rank).map(|_| read_u32(bytes, &mut at).map(u64::from)).collect::<Result<_, _>>()?;
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(usize::try_from(d).ok()?))
        .and_then(|c| c.checked_mul(4).map(|_| c))
        .ok_or_else(|| TensorError::DimOverflow(dims.clone()))?;
    let payload = take(bytes, &mut at, count * 4)?;
    if at != bytes.len() {
        return Err(TensorError::TrailingData(bytes.len() - at));
    }
    let values: Vec<f32> = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    let shape = match dims[..] {
        [h, w] => ClipShape::new(1, h as usize, w as usize),
        [f, h, w] => ClipShape::new(f as usize, h as usize, w as usize),
        _ => unreachable!(),
    };
    Ok(Clip::new(shape, values).expect("count matches shape"))
}

pub fn save_tensor<T: Scalar>(path: impl AsRef<Path>, clip: &Clip<T>) -> Result<(), TensorError> {
    let path = path.as_ref();
    std::fs::write(path, encode(clip)?).map_err(|source| TensorError::Io { path: path.display().to_string(), source })
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Clip<f32>, TensorError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| TensorError::Io { path: path.display().to_string(), source })?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn counting(f: usize, h: usize, w: usize) -> Clip<f32> {
        Clip::new(ClipShape::new(f, h, w), (0..f * h * w).map(|i| i as f32 * 0.5 - 3.0).collect()).unwrap()
    }

    #[test]
    fn byte_layout_of_a_small_video() {
        let bytes = encode(&counting(2, 3, 4)).unwrap();
        assert_eq!(bytes.len(), 4 + 4 + 3 * 4 + 24 * 4);
        assert_eq!(&bytes[..4], b"NBT1");
        assert_eq!(&bytes[4..8], &[3, 0, 0, 0]);
        assert_eq!(&bytes[8..20], &[2, 0, 0, 0, 3, 0, 0, 0, 4, 0, 0, 0]);
        assert_eq!(&bytes[20..24], &(-3.0f32).to_le_bytes());
        assert_eq!(&bytes[bytes.len() - 4..], &(23.0f32 * 0.5 - 3.0).to_le_bytes());
    }

    #[test]
    fn errors_are_distinct() {
        let good = encode(&counting(2, 3, 4)).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(TensorError::BadMagic(_))));
        assert!(matches!(decode(b"QQ"), Err(TensorError::BadMagic(_))));
        assert!(matches!(decode(b"NB"), Err(TensorError::Truncated { .. })));
        assert!(matches!(decode(&good[..good.len() - 1]), Err(TensorError::Truncated { .. })));
        assert!(matches!(decode(&good[..10]), Err(TensorError::Truncated { .. })));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(decode(&long), Err(TensorError::TrailingData(1))));
        let mut rank = good.clone();
        rank[4] = 7;
        assert!(matches!(decode(&rank), Err(TensorError::BadRank(7))));
        let mut huge = b"NBT1".to_vec();
        huge.extend_from_slice(&3u32.to_le_bytes());
        for _ in 0..3 {
            huge.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(matches!(decode(&huge), Err(TensorError::DimOverflow(_))));
    }

    #[test]
    fn rank_two_is_one_frame() {
        let mut bytes = b"NBT1".to_vec();
        for v in [2u32, 1, 2] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&1.5f32.to_le_bytes());
        bytes.extend_from_slice(&(-2.0f32).to_le_bytes());
        let clip = decode(&bytes).unwrap();
        assert_eq!(clip.shape(), ClipShape::new(1, 1, 2));
        assert_eq!(clip.data(), &[1.5, -2.0]);
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.nbt");
        let clip = counting(3, 2, 5);
        save_tensor(&path, &clip).unwrap();
        assert_eq!(load_tensor(&path).unwrap(), clip);
        assert!(matches!(load_tensor(dir.path().join("missing")), Err(TensorError::Io { .. })));
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(f in 1usize..4, h in 1usize..5, w in 1usize..5, bits in proptest::collection::vec(any::<u32>(), 64)) {
            let data: Vec<f32> = (0..f * h * w).map(|i| f32::from_bits(bits[i % 64].rotate_left(i as u32))).collect();
            let clip = Clip::new(ClipShape::new(f, h, w), data).unwrap();
            let back = decode(&encode(&clip).unwrap()).unwrap();
            prop_assert_eq!(back.shape(), clip.shape());
            let a: Vec<u32> = back.data().iter().map(|x| x.to_bits()).collect();
            let b: Vec<u32> = clip.data().iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
