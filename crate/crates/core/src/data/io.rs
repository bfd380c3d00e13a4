//! Flat binary dataset files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"SMFD" | version u32 | name_len u32 | name (UTF-8)
//! | n u64 | hr_ndim u32 | hr_dims u32… | lr_ndim u32 | lr_dims u32…
//! | n × (hr values f32…, lr values f32…)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{DataError, ToyDataset};

pub const DATASET_MAGIC: &[u8; 4] = b"SMFD";
pub const DATASET_VERSION: u32 = 1;

pub fn write_dataset(ds: &ToyDataset, mut w: impl Write) -> Result<(), DataError> {
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&DATASET_VERSION.to_le_bytes())?;
    w.write_all(&(ds.name.len() as u32).to_le_bytes())?;
    w.write_all(ds.name.as_bytes())?;
    w.write_all(&(ds.len() as u64).to_le_bytes())?;
    for shape in [&ds.hr_shape, &ds.lr_shape] {
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape.iter() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
    }
    let (dh, dl) = (ds.hr_dim(), ds.lr_dim());
    let mut buf = Vec::with_capacity(4 * (dh + dl) * ds.len());
    for i in 0..ds.len() {
        for v in ds.hr_row(i).iter().chain(ds.lr_row(i)) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_dataset(mut r: impl Read) -> Result<ToyDataset, DataError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(4)? != DATASET_MAGIC {
        return Err(DataError::Format("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != DATASET_VERSION {
        return Err(DataError::Format(format!("unsupported version {version}")));
    }
    let name_len = cur.u32()? as usize;
    let name =
        String::from_utf8(cur.take(name_len)?.to_vec()).map_err(|_| DataError::Format("name is not UTF-8".into()))?;
    let n = cur.u64()? as usize;
    let mut shapes = Vec::new();
    for _ in 0..2 {
        let nd = cur.u32()? as usize;
        let dims = (0..nd)
            .map(|_| cur.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        shapes.push(dims);
    }
    let lr_shape = shapes.pop().expect("two shapes");
    let hr_shape = shapes.pop().expect("two shapes");
    let (dh, dl) = (hr_shape.iter().product::<usize>(), lr_shape.iter().product::<usize>());
    let expected = n
        .checked_mul(dh + dl)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| DataError::Format("size overflow".into()))?;
    let rest = bytes.len() - cur.pos;
    if rest != expected {
        return Err(DataError::Format(format!(
            "payload is {rest} bytes, header declares {expected}"
        )));
    }
    let mut hr = Vec::with_capacity(n * dh);
    let mut lr = Vec::with_capacity(n * dl);
    for _ in 0..n {
        for _ in 0..dh {
            hr.push(cur.f32()?);
        }
        for _ in 0..dl {
            lr.push(cur.f32()?);
        }
    }
    Ok(ToyDataset {
        name,
        hr_shape,
        lr_shape,
        hr,
        lr,
        seed: None,
    })
}

pub fn save_dataset(ds: &ToyDataset, path: &Path) -> Result<(), DataError> {
    let mut buf = Vec::new();
    write_dataset(ds, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<ToyDataset, DataError> {
    read_dataset(std::fs::File::open(path)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| DataError::Format("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f32(&mut self) -> Result<f32, DataError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetGenerator, TwoMoons};

    #[test]
    fn header_layout() {
        let ds = TwoMoons::default().generate(3, 1).unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"SMFD");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        let name_len = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        assert_eq!(&buf[12..12 + name_len], b"two-moons-conditional");
        let header = 12 + name_len + 8 + 4 + 4 + 4 + 4;
        assert_eq!(buf.len(), header + 3 * 3 * 4);
        let first = f32::from_le_bytes(buf[header..header + 4].try_into().unwrap());
        assert_eq!(first, ds.hr[0]);
    }

    #[test]
    fn roundtrip_and_truncation() {
        let ds = TwoMoons::default().generate(10, 9).unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let back = read_dataset(&buf[..]).unwrap();
        assert_eq!(back.hr, ds.hr);
        assert_eq!(back.lr, ds.lr);
        assert_eq!(back.name, ds.name);
        assert!(matches!(read_dataset(&buf[..buf.len() - 1]), Err(DataError::Format(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_dataset(&bad[..]), Err(DataError::Format(_))));
    }
}
