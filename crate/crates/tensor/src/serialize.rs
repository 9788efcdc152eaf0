//! Binary tensor container: `TNSR`, version (u16), rank (u16), extents (u64
//! each), then the f64 payload. All integers and floats are little-endian.

use std::io::{Read, Write};

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TNSR";
pub const VERSION: u16 = 1;

pub fn write_tensor<W: Write>(out: &mut W, tensor: &Tensor) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    let rank = u16::try_from(tensor.rank())
        .map_err(|_| TensorError::Format(format!("rank {} too large", tensor.rank())))?;
    out.write_all(&rank.to_le_bytes())?;
    for &extent in tensor.shape() {
        out.write_all(&(extent as u64).to_le_bytes())?;
    }
    let mut payload = Vec::with_capacity(tensor.numel() * 8);
    for v in tensor.data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&payload)?;
    Ok(())
}

pub fn read_tensor<R: Read>(input: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TensorError::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u16(input)?;
    if version != VERSION {
        return Err(TensorError::Format(format!(
            "unsupported version {version}"
        )));
    }
    let rank = read_u16(input)? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut buf = [0u8; 8];
        input.read_exact(&mut buf)?;
        let extent = usize::try_from(u64::from_le_bytes(buf))
            .map_err(|_| TensorError::Format("extent overflows usize".into()))?;
        shape.push(extent);
    }
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| TensorError::Format("element count overflows".into()))?;
    let mut bytes = vec![0u8; numel * 8];
    input.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::new(shape, data).map_err(|e| TensorError::Format(e.to_string()))
}

fn read_u16<R: Read>(input: &mut R) -> Result<u16> {
    let mut buf = [0u8; 2];
    input.read_exact(&mut buf)?;
    Ok(u16::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_fixed() {
        let t = Tensor::new(vec![2, 1], vec![1.5, -2.0]).unwrap();
        let mut bytes = Vec::new();
        write_tensor(&mut bytes, &t).unwrap();
        assert_eq!(&bytes[..4], b"TNSR");
        assert_eq!(&bytes[4..6], &1u16.to_le_bytes());
        assert_eq!(&bytes[6..8], &2u16.to_le_bytes());
        assert_eq!(&bytes[8..16], &2u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &1u64.to_le_bytes());
        assert_eq!(&bytes[24..32], &1.5f64.to_le_bytes());
        assert_eq!(bytes.len(), 40);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let t = Tensor::ones(&[3]);
        let mut bytes = Vec::new();
        write_tensor(&mut bytes, &t).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_tensor(&mut bad.as_slice()).is_err());
        bytes.truncate(bytes.len() - 1);
        assert!(read_tensor(&mut bytes.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(shape in prop::collection::vec(1usize..5, 0..4), seed in any::<u64>()) {
            let numel: usize = shape.iter().product();
            let data: Vec<f64> = (0..numel).map(|i| ((i as u64 ^ seed) as f64).sin()).collect();
            let t = Tensor::new(shape, data).unwrap();
            let mut bytes = Vec::new();
            write_tensor(&mut bytes, &t).unwrap();
            let back = read_tensor(&mut bytes.as_slice()).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
