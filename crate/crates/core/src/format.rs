//! Binary containers. All integers are little-endian `u32`, all payload
//! values little-endian `f32`, and every file ends with a CRC32 (IEEE) of all
//! preceding bytes.
//!
//! ```text
//! RPT1  "RPT1" rank dims[rank] f32[prod(dims)] crc
//! RPC1  "RPC1" count (x y z power range_bin az_bin el_bin)[count] crc
//! P2T1  "P2T1" meta_len meta[meta_len] n_arrays
//!       (name_len name rank dims[rank] f32[prod(dims)])[n_arrays] crc
//! ```

use std::fs;
use std::path::Path;

use crate::error::{P2tError, Result};
use crate::pointcloud::{RadarPoint, RadarPointCloud};

pub const RPT1_MAGIC: &[u8; 4] = b"RPT1";
pub const RPC1_MAGIC: &[u8; 4] = b"RPC1";
pub const P2T1_MAGIC: &[u8; 4] = b"P2T1";

fn format_err(msg: impl Into<String>) -> P2tError {
    P2tError::Format(msg.into())
}

/// A dense f32 array with its shape, as stored in RPT1 files.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl RawTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.iter().product::<usize>() != data.len() {
            return Err(format_err(format!("{} values do not fill dims {dims:?}", data.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn from_f64(dims: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(dims.to_vec(), data.iter().map(|&v| v as f32).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(magic: &[u8; 4]) -> Self {
        Self { buf: magic.to_vec() }
    }

    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| format_err(format!("value {v} does not fit in u32")))?;
        self.buf.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    fn f32s(&mut self, values: &[f32]) {
        self.buf.reserve(values.len() * 4);
        for v in values {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

struct Reader<'a> {
    body: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    /// Validates length, CRC and magic before any field is read.
    fn open(bytes: &'a [u8], magic: &[u8; 4], what: &'static str) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(format_err(format!("{what}: file too short ({} bytes)", bytes.len())));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(format_err(format!("{what}: CRC mismatch")));
        }
        if &body[..4] != magic {
            return Err(format_err(format!("{what}: bad magic {:?}", &body[..4])));
        }
        Ok(Self { body, pos: 4, what })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.body.len())
            .ok_or_else(|| format_err(format!("{}: truncated payload", self.what)))?;
        let s = &self.body[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| format_err("size overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn dims(&mut self) -> Result<Vec<usize>> {
        let rank = self.u32()?;
        if rank > 16 {
            return Err(format_err(format!("{}: implausible rank {rank}", self.what)));
        }
        (0..rank).map(|_| self.u32()).collect()
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.body.len() {
            return Err(format_err(format!(
                "{}: {} trailing bytes after payload",
                self.what,
                self.body.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn element_count(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| format_err("dims overflow"))
}

pub fn encode_rpt1(t: &RawTensor) -> Result<Vec<u8>> {
    let mut w = Writer::new(RPT1_MAGIC);
    w.u32(t.dims.len())?;
    for &d in &t.dims {
        w.u32(d)?;
    }
    w.f32s(&t.data);
    Ok(w.finish())
}

pub fn decode_rpt1(bytes: &[u8]) -> Result<RawTensor> {
    let mut r = Reader::open(bytes, RPT1_MAGIC, "RPT1")?;
    let dims = r.dims()?;
    let data = r.f32s(element_count(&dims)?)?;
    r.done()?;
    Ok(RawTensor { dims, data })
}

pub fn encode_rpc1(cloud: &RadarPointCloud) -> Result<Vec<u8>> {
    let mut w = Writer::new(RPC1_MAGIC);
    w.u32(cloud.points.len())?;
    for p in &cloud.points {
        w.f32s(&[
            p.position[0] as f32,
            p.position[1] as f32,
            p.position[2] as f32,
            p.power as f32,
            p.polar_index[0] as f32,
            p.polar_index[1] as f32,
            p.polar_index[2] as f32,
        ]);
    }
    Ok(w.finish())
}

/// Decodes a point cloud. The extraction method is not stored, so the result
/// carries `method: None`.
pub fn decode_rpc1(bytes: &[u8]) -> Result<RadarPointCloud> {
    let mut r = Reader::open(bytes, RPC1_MAGIC, "RPC1")?;
    let count = r.u32()?;
    let values = r.f32s(count.checked_mul(7).ok_or_else(|| format_err("count overflow"))?)?;
    r.done()?;
    let index = |v: f32| -> Result<usize> {
        if v >= 0.0 && v.fract() == 0.0 && v < 16_777_216.0 {
            Ok(v as usize)
        } else {
            Err(format_err(format!("RPC1: polar index {v} is not a non-negative integer")))
        }
    };
    let points = values
        .chunks_exact(7)
        .map(|c| {
            Ok(RadarPoint {
                position: [f64::from(c[0]), f64::from(c[1]), f64::from(c[2])],
                power: f64::from(c[3]),
                polar_index: [index(c[4])?, index(c[5])?, index(c[6])?],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RadarPointCloud { points, method: None })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub tensor: RawTensor,
}

/// Model checkpoint: `key = value` metadata text plus named parameter arrays.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: String,
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&RawTensor> {
        self.arrays.iter().find(|a| a.name == name).map(|a| &a.tensor)
    }

    /// Value of `key` in the metadata text.
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.lines().find_map(|l| {
            let (k, v) = l.split_once('=')?;
            (k.trim() == key).then(|| v.trim())
        })
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut w = Writer::new(P2T1_MAGIC);
    w.u32(ck.meta.len())?;
    w.bytes(ck.meta.as_bytes());
    w.u32(ck.arrays.len())?;
    for a in &ck.arrays {
        w.u32(a.name.len())?;
        w.bytes(a.name.as_bytes());
        w.u32(a.tensor.dims.len())?;
        for &d in &a.tensor.dims {
            w.u32(d)?;
        }
        w.f32s(&a.tensor.data);
    }
    Ok(w.finish())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::open(bytes, P2T1_MAGIC, "P2T1")?;
    let utf8 = |b: &[u8]| String::from_utf8(b.to_vec()).map_err(|_| format_err("P2T1: invalid UTF-8"));
    let meta_len = r.u32()?;
    let meta = utf8(r.take(meta_len)?)?;
    let n = r.u32()?;
    let mut arrays = Vec::new();
    for _ in 0..n {
        let name_len = r.u32()?;
        let name = utf8(r.take(name_len)?)?;
        let dims = r.dims()?;
        let data = r.f32s(element_count(&dims)?)?;
        arrays.push(NamedArray {
            name,
            tensor: RawTensor { dims, data },
        });
    }
    r.done()?;
    Ok(Checkpoint { meta, arrays })
}

pub fn write_rpt1(path: impl AsRef<Path>, t: &RawTensor) -> Result<()> {
    fs::write(path, encode_rpt1(t)?)?;
    Ok(())
}

pub fn read_rpt1(path: impl AsRef<Path>) -> Result<RawTensor> {
    decode_rpt1(&fs::read(path)?)
}

pub fn write_rpc1(path: impl AsRef<Path>, cloud: &RadarPointCloud) -> Result<()> {
    fs::write(path, encode_rpc1(cloud)?)?;
    Ok(())
}

pub fn read_rpc1(path: impl AsRef<Path>) -> Result<RadarPointCloud> {
    decode_rpc1(&fs::read(path)?)
}

pub fn write_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    fs::write(path, encode_checkpoint(ck)?)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rpt1_layout() {
        let t = RawTensor::new(vec![2, 1], vec![1.0, -2.5]).unwrap();
        let bytes = encode_rpt1(&t).unwrap();
        assert_eq!(&bytes[..4], b"RPT1");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 4 + 4 + 8 + 8 + 4);
        let crc = crc32fast::hash(&bytes[..bytes.len() - 4]);
        assert_eq!(&bytes[bytes.len() - 4..], &crc.to_le_bytes());
        assert_eq!(decode_rpt1(&bytes).unwrap(), t);
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let t = RawTensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let bytes = encode_rpt1(&t).unwrap();
        // valid CRC but wrong container type
        let mut other = bytes.clone();
        other[..4].copy_from_slice(b"RPC1");
        let n = other.len();
        let crc = crc32fast::hash(&other[..n - 4]);
        other[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(decode_rpt1(&other).is_err());
        // payload shorter than header claims, CRC recomputed
        let mut short = bytes[..bytes.len() - 8].to_vec();
        let crc = crc32fast::hash(&short);
        short.extend_from_slice(&crc.to_le_bytes());
        assert!(decode_rpt1(&short).is_err());
        assert!(decode_rpt1(&[]).is_err());
    }

    #[test]
    fn rpc1_rejects_fractional_index() {
        let mut w = Writer::new(RPC1_MAGIC);
        w.u32(1).unwrap();
        w.f32s(&[1.0, 2.0, 3.0, 4.0, 0.5, 0.0, 0.0]);
        assert!(decode_rpc1(&w.finish()).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let ck = Checkpoint {
            meta: "train.learning_rate = 0.001\nloss.lambda_l1 = 100\n".into(),
            arrays: vec![
                NamedArray { name: "g.enc0.weight".into(), tensor: RawTensor::new(vec![2, 3], vec![0.5; 6]).unwrap() },
                NamedArray { name: "g.enc0.bias".into(), tensor: RawTensor::new(vec![3], vec![-1.0, 0.0, 1.0]).unwrap() },
            ],
        };
        let back = decode_checkpoint(&encode_checkpoint(&ck).unwrap()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.meta_value("loss.lambda_l1"), Some("100"));
        assert_eq!(back.get("g.enc0.bias").unwrap().data[2], 1.0);
    }

    fn arb_tensor() -> impl Strategy<Value = RawTensor> {
        prop::collection::vec(1usize..5, 0..4).prop_flat_map(|dims| {
            let n = dims.iter().product::<usize>();
            prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), n)
                .prop_map(move |data| RawTensor { dims: dims.clone(), data })
        })
    }

    fn arb_cloud() -> impl Strategy<Value = RadarPointCloud> {
        prop::collection::vec(
            (
                prop::array::uniform3(-100.0f32..100.0),
                0.0f32..1e6,
                prop::array::uniform3(0usize..4096),
            ),
            0..50,
        )
        .prop_map(|pts| RadarPointCloud {
            points: pts
                .into_iter()
                .map(|(p, power, idx)| RadarPoint {
                    position: p.map(f64::from),
                    power: f64::from(power),
                    polar_index: idx,
                })
                .collect(),
            method: None,
        })
    }

    proptest! {
        #[test]
        fn rpt1_round_trip_and_corruption(t in arb_tensor(), pos in any::<prop::sample::Index>(), bit in 0u8..8) {
            let bytes = encode_rpt1(&t).unwrap();
            prop_assert_eq!(&decode_rpt1(&bytes).unwrap(), &t);
            let mut bad = bytes.clone();
            let i = pos.index(bad.len());
            bad[i] ^= 1 << bit;
            prop_assert!(decode_rpt1(&bad).is_err());
        }

        #[test]
        fn rpc1_round_trip_and_corruption(c in arb_cloud(), pos in any::<prop::sample::Index>(), bit in 0u8..8) {
            let bytes = encode_rpc1(&c).unwrap();
            prop_assert_eq!(&decode_rpc1(&bytes).unwrap(), &c);
            let mut bad = bytes.clone();
            let i = pos.index(bad.len());
            bad[i] ^= 1 << bit;
            prop_assert!(decode_rpc1(&bad).is_err());
        }
    }
}
