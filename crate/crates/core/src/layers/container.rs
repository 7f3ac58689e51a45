//! Flat parameter container: named `f64` arrays, little-endian.
//!
//! ```text
//! "CAPP"  u32 version  u32 count
//! count × { u32 name_len  name  u32 rank  rank × u64 dim  Π(dim) × f64 }
//! ```

use std::io::{Read, Write};

use super::ParamArray;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CAPP";
const VERSION: u32 = 1;

pub type ParamRecord = (String, ParamArray);

fn io_err(e: std::io::Error) -> Error {
    Error::Format {
        what: "parameter container",
        detail: e.to_string(),
    }
}

pub fn write_params<'a, W: Write>(
    out: &mut W,
    records: impl IntoIterator<Item = (&'a str, &'a ParamArray)>,
) -> Result<()> {
    let records: Vec<_> = records.into_iter().collect();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, p) in records {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
        for &d in &p.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &p.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf).map_err(io_err)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_params<R: Read>(input: &mut R) -> Result<Vec<ParamRecord>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(Error::Format {
            what: "parameter container",
            detail: format!("bad magic {magic:?}"),
        });
    }
    let version = read_u32(input)?;
    if version != VERSION {
        return Err(Error::Format {
            what: "parameter container",
            detail: format!("unsupported version {version}"),
        });
    }
    let count = read_u32(input)? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(input)? as usize;
        let mut name = vec![0u8; name_len];
        input.read_exact(&mut name).map_err(io_err)?;
        let name = String::from_utf8(name).map_err(|e| Error::Format {
            what: "parameter container",
            detail: e.to_string(),
        })?;
        let rank = read_u32(input)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            input.read_exact(&mut b).map_err(io_err)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        input.read_exact(&mut raw).map_err(io_err)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        records.push((name, ParamArray { shape, data }));
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trips_bit_exactly(
            arrays in prop::collection::vec(
                (1usize..4, 1usize..5).prop_flat_map(|(r, c)| {
                    prop::collection::vec(any::<f64>(), r * c).prop_map(move |d| ParamArray { shape: vec![r, c], data: d })
                }),
                0..5,
            )
        ) {
            let names: Vec<String> = (0..arrays.len()).map(|i| format!("layer{i}.w")).collect();
            let mut buf = Vec::new();
            write_params(&mut buf, names.iter().map(String::as_str).zip(arrays.iter())).unwrap();
            let back = read_params(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back.len(), arrays.len());
            for ((n, p), (n2, p2)) in names.iter().zip(&arrays).zip(&back) {
                prop_assert_eq!(n, n2);
                prop_assert_eq!(&p.shape, &p2.shape);
                let bits: Vec<u64> = p.data.iter().map(|v| v.to_bits()).collect();
                let bits2: Vec<u64> = p2.data.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(bits, bits2);
            }
        }
    }

    #[test]
    fn rejects_truncated_and_bad_magic() {
        let p = ParamArray { shape: vec![2], data: vec![1.0, 2.0] };
        let mut buf = Vec::new();
        write_params(&mut buf, [("x", &p)]).unwrap();
        assert!(read_params(&mut &buf[..buf.len() - 3]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_params(&mut bad.as_slice()).is_err());
    }
}
