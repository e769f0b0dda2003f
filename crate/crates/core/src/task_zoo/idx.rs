//! Reader for the IDX container used by MNIST-style datasets.
//!
//! Layout: `0x00 0x00 <type> <ndims>`, then `ndims` big-endian `u32`
//! extents, then the payload. Only unsigned-byte payloads are accepted
//! (`0x00000801` for labels, `0x00000803` for images).

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

const MAGIC_LABELS: u32 = 0x0000_0801;
const MAGIC_IMAGES: u32 = 0x0000_0803;

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Idx {
            offset,
            message: format!("truncated while reading {what}"),
        })
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    let magic = read_u32(bytes, 0, "magic number")?;
    let ndims = match magic {
        MAGIC_LABELS => 1,
        MAGIC_IMAGES => 3,
        other => {
            return Err(Error::Idx {
                offset: 0,
                message: format!("bad magic 0x{other:08x}"),
            })
        }
    };
    let mut dims = Vec::with_capacity(ndims);
    let mut total: usize = 1;
    for i in 0..ndims {
        let offset = 4 + 4 * i;
        let d = read_u32(bytes, offset, "dimension")? as usize;
        total = total.checked_mul(d).ok_or_else(|| Error::Idx {
            offset,
            message: "dimension product overflows".into(),
        })?;
        dims.push(d);
    }
    let start = 4 + 4 * ndims;
    let end = start.checked_add(total).ok_or_else(|| Error::Idx {
        offset: start,
        message: "payload size overflows".into(),
    })?;
    if bytes.len() < end {
        return Err(Error::Idx {
            offset: bytes.len(),
            message: format!("truncated payload: expected {total} bytes from offset {start}"),
        });
    }
    Ok(IdxArray {
        dims,
        data: bytes[start..end].to_vec(),
    })
}

pub fn read_idx(path: &Path) -> Result<IdxArray> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes)
}

/// Area-weighted resize of a square `src × src` image to `dst × dst`.
/// Exact block averaging when `src` is a multiple of `dst`.
pub fn downscale(img: &[f64], src: usize, dst: usize) -> Vec<f64> {
    if src == dst {
        return img.to_vec();
    }
    // 1-D overlap weights between destination cell i and source cell j.
    let weights: Vec<Vec<(usize, f64)>> = (0..dst)
        .map(|i| {
            let lo = i as f64 * src as f64 / dst as f64;
            let hi = (i + 1) as f64 * src as f64 / dst as f64;
            let mut w = Vec::new();
            let mut j = lo.floor() as usize;
            while j < src && (j as f64) < hi {
                let overlap = (hi.min(j as f64 + 1.0) - lo.max(j as f64)).max(0.0);
                if overlap > 0.0 {
                    w.push((j, overlap / (hi - lo)));
                }
                j += 1;
            }
            w
        })
        .collect();
    let mut out = vec![0.0; dst * dst];
    for (r, wr) in weights.iter().enumerate() {
        for (c, wc) in weights.iter().enumerate() {
            let mut acc = 0.0;
            for &(sr, a) in wr {
                for &(sc, b) in wc {
                    acc += a * b * img[sr * src + sc];
                }
            }
            out[r * dst + c] = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        for d in dims {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v
    }

    #[test]
    fn parses_images() {
        let mut b = header(MAGIC_IMAGES, &[2, 2, 2]);
        b.extend_from_slice(&[0, 255, 128, 1, 2, 3, 4, 5]);
        let a = parse_idx(&b).unwrap();
        assert_eq!(a.dims, vec![2, 2, 2]);
        assert_eq!(a.data[1], 255);
    }

    #[test]
    fn truncated_file_names_offset() {
        let mut b = header(MAGIC_LABELS, &[10]);
        b.extend_from_slice(&[1, 2, 3]);
        match parse_idx(&b) {
            Err(Error::Idx { offset, .. }) => assert_eq!(offset, 11),
            other => panic!("{other:?}"),
        }
        match parse_idx(&header(MAGIC_IMAGES, &[1])) {
            Err(Error::Idx { offset, .. }) => assert_eq!(offset, 8),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_magic() {
        assert!(matches!(
            parse_idx(&header(0x0000_0c03, &[1, 1, 1])),
            Err(Error::Idx { offset: 0, .. })
        ));
    }

    #[test]
    fn dim_overflow() {
        let b = header(MAGIC_IMAGES, &[u32::MAX, u32::MAX, u32::MAX]);
        assert!(matches!(parse_idx(&b), Err(Error::Idx { .. })));
    }

    #[test]
    fn downscale_constant_image() {
        let img = vec![0.5; 28 * 28];
        let small = downscale(&img, 28, 8);
        assert!(small.iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn downscale_block_average() {
        let img: Vec<f64> = (0..16).map(f64::from).collect();
        let small = downscale(&img, 4, 2);
        assert_eq!(small, vec![2.5, 4.5, 10.5, 12.5]);
    }
}
