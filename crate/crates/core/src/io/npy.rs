use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::diffusion::LatentImage;
use crate::error::{Error, Result};

const MAGIC: &[u8] = b"\x93NUMPY";

/// Serialises a little-endian `f64` C-order array in `.npy` v1.0 format.
pub fn encode_npy(shape: &[usize], data: impl IntoIterator<Item = f64>) -> Vec<u8> {
    let shape_str = match shape.len() {
        1 => format!("({},)", shape[0]),
        _ => format!(
            "({})",
            shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let mut header = format!("{{'descr': '<f8', 'fortran_order': False, 'shape': {shape_str}, }}");
    let unpadded = MAGIC.len() + 2 + 2 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');

    let mut out = Vec::with_capacity(unpadded + 64 + 8 * shape.iter().product::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_npy(bytes: &[u8], locator: &str) -> Result<ArrayD<f64>> {
    let err = |message: &str| Error::Parse {
        locator: locator.to_string(),
        message: message.to_string(),
    };
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(err("missing .npy magic"));
    }
    let (header_len, start) = match bytes[6] {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(err("truncated header"));
            }
            (
                u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize,
                12,
            )
        }
        _ => return Err(err("unsupported .npy version")),
    };
    let header = std::str::from_utf8(
        bytes
            .get(start..start + header_len)
            .ok_or_else(|| err("truncated header"))?,
    )
    .map_err(|_| err("header is not UTF-8"))?;
    if !header.contains("'descr': '<f8'") {
        return Err(err("only little-endian float64 arrays are supported"));
    }
    if !header.contains("'fortran_order': False") {
        return Err(err("only C-order arrays are supported"));
    }
    let shape_src = header
        .split("'shape':")
        .nth(1)
        .and_then(|s| s.split('(').nth(1))
        .and_then(|s| s.split(')').next())
        .ok_or_else(|| err("missing shape"))?;
    let shape = shape_src
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| err("bad shape entry")))
        .collect::<Result<Vec<_>>>()?;
    let payload = &bytes[start + header_len..];
    let n: usize = shape.iter().product();
    if payload.len() != n * 8 {
        return Err(err("payload length does not match shape"));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ArrayD::from_shape_vec(IxDyn(&shape), data).map_err(|_| err("inconsistent shape"))
}

pub fn write_npy(path: &Path, array: &ArrayD<f64>) -> Result<()> {
    let bytes = encode_npy(array.shape(), array.iter().copied());
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_npy(path: &Path) -> Result<ArrayD<f64>> {
    let bytes = std::fs::read(path)?;
    decode_npy(&bytes, &path.display().to_string())
}

pub fn write_latent(path: &Path, latent: &LatentImage) -> Result<()> {
    let bytes = encode_npy(&latent.shape(), latent.data().iter().copied());
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_latent(path: &Path) -> Result<LatentImage> {
    let array = read_npy(path)?;
    let array = array
        .into_dimensionality::<ndarray::Ix3>()
        .map_err(|_| Error::Parse {
            locator: path.display().to_string(),
            message: "latent must be a 3-d (channels, height, width) array".into(),
        })?;
    LatentImage::new(array)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_64_byte_aligned() {
        let bytes = encode_npy(&[4, 8, 8], std::iter::repeat_n(0.5, 256));
        let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!((10 + header_len) % 64, 0);
        assert_eq!(bytes[10 + header_len - 1], b'\n');
    }

    #[test]
    fn rejects_other_dtypes() {
        let mut bytes = encode_npy(&[2], [1.0, 2.0]);
        let pos = bytes.windows(3).position(|w| w == b"<f8").unwrap();
        bytes[pos + 2] = b'4';
        assert!(decode_npy(&bytes, "x").is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(shape in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|i| (seed as f64).sin() * i as f64 - 3.25).collect();
            let bytes = encode_npy(&shape, data.iter().copied());
            let back = decode_npy(&bytes, "mem").unwrap();
            prop_assert_eq!(back.shape(), &shape[..]);
            prop_assert_eq!(back.iter().copied().collect::<Vec<_>>(), data);
        }
    }
}
