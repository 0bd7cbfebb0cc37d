use std::path::Path;

use crate::dmi::{FeatureMap, HighFreqConfig, HighFreqParams};
use crate::error::{Error, Result};
use crate::geometry::DistanceField;
use crate::scalar::Scalar;
use crate::tspp::{CostMap, ProbabilityGrid, TsppHeadParams};

/// A dense float tensor, row-major with the last dimension fastest.
///
/// On disk: the ASCII line `FGRID v1 <ndim> <d0> <d1> ...` and a newline,
/// then the values as little-endian `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct Fgrid {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Fgrid {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("{} values for dims {dims:?}", data.len())));
        }
        Ok(Fgrid { dims, data })
    }

    pub fn from_scalars<T: Scalar>(dims: Vec<usize>, values: &[T]) -> Result<Self> {
        Self::new(dims, values.iter().map(|v| v.as_f64() as f32).collect())
    }

    pub fn to_scalars<T: Scalar>(&self) -> Vec<T> {
        self.data.iter().map(|&v| T::lit(v as f64)).collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut head = format!("FGRID v1 {}", self.dims.len());
        for d in &self.dims {
            head.push_str(&format!(" {d}"));
        }
        head.push('\n');
        let mut out = head.into_bytes();
        out.reserve(4 * self.data.len());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format("fgrid", "missing header line"))?;
        let head = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::format("fgrid", "header is not text"))?;
        let mut toks = head.split_ascii_whitespace();
        if toks.next() != Some("FGRID") || toks.next() != Some("v1") {
            return Err(Error::format("fgrid", "expected `FGRID v1`"));
        }
        let num = |t: Option<&str>| -> Result<usize> {
            t.and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::format("fgrid", format!("bad header `{head}`")))
        };
        let ndim = num(toks.next())?;
        let dims = (0..ndim).map(|_| num(toks.next())).collect::<Result<Vec<_>>>()?;
        if toks.next().is_some() {
            return Err(Error::format("fgrid", "extra header fields"));
        }
        let body = &bytes[nl + 1..];
        let n: usize = dims.iter().product();
        if body.len() != 4 * n {
            return Err(Error::format("fgrid", format!("{} data bytes, want {}", body.len(), 4 * n)));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Fgrid { dims, data })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.encode())?)
    }

    fn expect_ndim(&self, n: usize, what: &str) -> Result<()> {
        if self.dims.len() != n {
            return Err(Error::Shape(format!("{what} needs {n} dims, got {:?}", self.dims)));
        }
        Ok(())
    }

    pub fn from_feature_map<T: Scalar>(f: &FeatureMap<T>) -> Self {
        Self::from_scalars(vec![f.channels, f.h, f.w], &f.values).expect("shape is consistent")
    }

    pub fn to_feature_map<T: Scalar>(&self) -> Result<FeatureMap<T>> {
        self.expect_ndim(3, "feature map")?;
        FeatureMap::new(self.dims[0], self.dims[1], self.dims[2], self.to_scalars())
    }

    pub fn from_cost_map<T: Scalar>(s: &CostMap<T>) -> Self {
        Self::from_scalars(vec![s.classes, s.h, s.w], &s.values).expect("shape is consistent")
    }

    pub fn to_cost_map<T: Scalar>(&self) -> Result<CostMap<T>> {
        self.expect_ndim(3, "cost map")?;
        CostMap::new(self.dims[0], self.dims[1], self.dims[2], self.to_scalars())
    }

    /// The clamped probabilities.
    pub fn from_probabilities<T: Scalar>(p: &ProbabilityGrid<T>) -> Self {
        Self::from_scalars(vec![p.grid_h, p.grid_w], &p.probs).expect("shape is consistent")
    }

    /// The unclamped target values.
    pub fn from_raw_probabilities<T: Scalar>(p: &ProbabilityGrid<T>) -> Self {
        Self::from_scalars(vec![p.grid_h, p.grid_w], &p.raw).expect("shape is consistent")
    }

    /// Reads the values as unclamped probabilities.
    pub fn to_probabilities<T: Scalar>(&self) -> Result<ProbabilityGrid<T>> {
        self.expect_ndim(2, "probability grid")?;
        ProbabilityGrid::from_raw(self.dims[0], self.dims[1], self.to_scalars())
    }

    /// Undefined pixels are stored as NaN.
    pub fn from_distance_field<T: Scalar>(d: &DistanceField<T>) -> Self {
        Self::from_scalars(vec![d.height, d.width], &d.values).expect("shape is consistent")
    }
}

/// Prompter head parameters as a 1-D pack: the channel count, then every
/// block in declaration order.
pub fn head_params_pack<T: Scalar>(p: &TsppHeadParams<T>) -> Fgrid {
    let mut v = vec![p.channels as f32];
    for (_, b) in p.blocks() {
        v.extend(b.iter().map(|x| x.as_f64() as f32));
    }
    Fgrid {
        dims: vec![v.len()],
        data: v,
    }
}

fn unpack<T: Scalar>(g: &Fgrid, header: usize, what: &str) -> Result<(Vec<usize>, Vec<T>)> {
    g.expect_ndim(1, what)?;
    if g.data.len() < header {
        return Err(Error::format("fgrid", format!("{what} pack is too short")));
    }
    let head = g.data[..header]
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::format("fgrid", format!("{what} pack header value {v}")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((head, g.data[header..].iter().map(|&v| T::lit(v as f64)).collect()))
}

fn fill<T: Scalar>(blocks: Vec<&mut Vec<T>>, rest: &[T]) -> Result<()> {
    let want: usize = blocks.iter().map(|b| b.len()).sum();
    if want != rest.len() {
        return Err(Error::format("fgrid", format!("pack holds {} values, want {want}", rest.len())));
    }
    let mut at = 0;
    for b in blocks {
        let n = b.len();
        b.copy_from_slice(&rest[at..at + n]);
        at += n;
    }
    Ok(())
}

pub fn head_params_from_pack<T: Scalar>(g: &Fgrid) -> Result<TsppHeadParams<T>> {
    let (head, rest) = unpack::<T>(g, 1, "head parameter")?;
    let mut p = TsppHeadParams::zeros(head[0]);
    fill(p.blocks_mut().into_iter().collect(), &rest)?;
    p.validate()?;
    Ok(p)
}

/// High-frequency parameters as a 1-D pack: feature channels, embed_dim,
/// class_cap and kernel, then every block in declaration order.
pub fn high_freq_params_pack<T: Scalar>(p: &HighFreqParams<T>) -> Fgrid {
    let mut v = vec![
        p.channels as f32,
        p.cfg.embed_dim as f32,
        p.cfg.class_cap as f32,
        p.cfg.kernel as f32,
    ];
    for (_, b) in p.blocks() {
        v.extend(b.iter().map(|x| x.as_f64() as f32));
    }
    Fgrid {
        dims: vec![v.len()],
        data: v,
    }
}

pub fn high_freq_params_from_pack<T: Scalar>(g: &Fgrid) -> Result<HighFreqParams<T>> {
    let (head, rest) = unpack::<T>(g, 4, "high-frequency parameter")?;
    let cfg = HighFreqConfig {
        embed_dim: head[1],
        class_cap: head[2],
        kernel: head[3],
    };
    let mut p = HighFreqParams::zeros(head[0], cfg);
    fill(p.blocks_mut().into_iter().collect(), &rest)?;
    p.validate()?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn header_layout() {
        let g = Fgrid::new(vec![2, 3], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.5]).unwrap();
        let bytes = g.encode();
        assert!(bytes.starts_with(b"FGRID v1 2 2 3\n"));
        assert_eq!(bytes.len(), 15 + 24);
        assert_eq!(&bytes[15 + 20..], &5.5f32.to_le_bytes());
        assert_eq!(Fgrid::decode(&bytes).unwrap(), g);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Fgrid::decode(b"FGRID v2 1 1\n\0\0\0\0").is_err());
        assert!(Fgrid::decode(b"FGRID v1 1 2\n\0\0\0\0").is_err());
        assert!(Fgrid::decode(b"FGRID v1 2 1\n\0\0\0\0").is_err());
        assert!(Fgrid::new(vec![3], vec![1.0]).is_err());
    }

    #[test]
    fn head_pack_round_trip() {
        let p = TsppHeadParams::<f32>::init(6, &mut rng::rng(3));
        let back: TsppHeadParams<f32> = head_params_from_pack(&head_params_pack(&p)).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn high_freq_pack_round_trip() {
        let cfg = HighFreqConfig {
            embed_dim: 3,
            class_cap: 2,
            kernel: 5,
        };
        let p = HighFreqParams::<f32>::init(4, cfg, &mut rng::rng(5));
        let back: HighFreqParams<f32> = high_freq_params_from_pack(&high_freq_params_pack(&p)).unwrap();
        assert_eq!(back, p);
        let mut g = high_freq_params_pack(&p);
        g.data.pop();
        g.dims = vec![g.data.len()];
        assert!(high_freq_params_from_pack::<f32>(&g).is_err());
    }
}
