//! Binary checkpoints for trained models.
//!
//! Layout (little-endian): 4-byte magic, `u32` version, a model-specific
//! header, then networks as `{u32 layer count + 1, u32 widths, u8 activation
//! per layer, init record, u32 param count, f64 params}`. Floats are stored
//! by bit pattern so loading is exact.

use std::path::Path;

use crate::baselines::BaryMap;
use crate::cost::CostKind;
use crate::dual::DualPair;
use crate::error::{Error, Result};
use crate::fdiv::{Compatibility, FDivKind, RegParams};
use crate::gaussian::GaussianMeasure;
use crate::linalg::Matrix;
use crate::mlp::{Activation, InitRecord, Mlp, MlpParams, MlpSpec};
use crate::score::ScoreNet;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC_PAIR: &[u8; 4] = b"SCNS";
const MAGIC_SCORE: &[u8; 4] = b"SCSM";
const MAGIC_BARY: &[u8; 4] = b"SCBP";
const MAGIC_GAUSS: &[u8; 4] = b"SCGM";

/// Any model the crate can persist.
#[derive(Clone, Debug)]
pub enum Checkpoint {
    Pair(DualPair),
    Score(ScoreNet),
    Bary(BaryMap),
    Gaussian(GaussianMeasure),
}

impl Checkpoint {
    pub fn kind(&self) -> &'static str {
        match self {
            Checkpoint::Pair(_) => "dual-pair",
            Checkpoint::Score(_) => "score-net",
            Checkpoint::Bary(_) => "barycentric-map",
            Checkpoint::Gaussian(_) => "gaussian",
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        match self {
            Checkpoint::Pair(p) => {
                w.header(MAGIC_PAIR);
                w.u8(p.compat.kind.code());
                w.f64(p.compat.params.lambda);
                match p.compat.params.chi2_softplus_alpha {
                    Some(a) => {
                        w.u8(1);
                        w.f64(a);
                    }
                    None => {
                        w.u8(0);
                        w.f64(0.0);
                    }
                }
                w.u8(p.cost.code());
                w.net(&p.phi);
                w.net(&p.psi);
            }
            Checkpoint::Score(s) => {
                w.header(MAGIC_SCORE);
                w.f64(s.default_level);
                w.net(&s.net);
            }
            Checkpoint::Bary(b) => {
                w.header(MAGIC_BARY);
                w.net(&b.net);
            }
            Checkpoint::Gaussian(g) => {
                w.header(MAGIC_GAUSS);
                w.u32(g.dim() as u32);
                g.mean().iter().for_each(|v| w.f64(*v));
                g.cov().as_slice().iter().for_each(|v| w.f64(*v));
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        let version = r.u32()?;
        if !matches!(&magic, MAGIC_PAIR | MAGIC_SCORE | MAGIC_BARY | MAGIC_GAUSS) {
            return Err(Error::Checkpoint(format!("unrecognized magic {:?}", String::from_utf8_lossy(&magic))));
        }
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let out = match &magic {
            MAGIC_PAIR => {
                let kind = FDivKind::from_code(r.u8()?)
                    .ok_or_else(|| Error::Checkpoint("unknown divergence code".into()))?;
                let lambda = r.f64()?;
                let has_alpha = r.u8()? == 1;
                let alpha = r.f64()?;
                let cost =
                    CostKind::from_code(r.u8()?).ok_or_else(|| Error::Checkpoint("unknown cost code".into()))?;
                let params = RegParams {
                    lambda,
                    chi2_softplus_alpha: has_alpha.then_some(alpha),
                };
                let compat = Compatibility::new(kind, params)?;
                let phi = r.net()?;
                let psi = r.net()?;
                Checkpoint::Pair(DualPair::new(phi, psi, compat, cost)?)
            }
            MAGIC_SCORE => {
                let level = r.f64()?;
                Checkpoint::Score(ScoreNet::new(r.net()?, level)?)
            }
            MAGIC_BARY => Checkpoint::Bary(BaryMap::new(r.net()?)),
            _ => {
                let d = r.u32()? as usize;
                let mean = (0..d).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                let cov = (0..d * d).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                Checkpoint::Gaussian(GaussianMeasure::new(mean, Matrix::from_vec(d, d, cov)?)?)
            }
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn into_pair(self) -> Result<DualPair> {
        match self {
            Checkpoint::Pair(p) => Ok(p),
            other => Err(Error::Checkpoint(format!("expected a dual-pair checkpoint, found {}", other.kind()))),
        }
    }

    pub fn into_score(self) -> Result<ScoreNet> {
        match self {
            Checkpoint::Score(s) => Ok(s),
            other => Err(Error::Checkpoint(format!("expected a score-net checkpoint, found {}", other.kind()))),
        }
    }

    pub fn into_bary(self) -> Result<BaryMap> {
        match self {
            Checkpoint::Bary(b) => Ok(b),
            other => Err(Error::Checkpoint(format!(
                "expected a barycentric-map checkpoint, found {}",
                other.kind()
            ))),
        }
    }
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn header(&mut self, magic: &[u8; 4]) {
        self.buf.extend_from_slice(magic);
        self.u32(FORMAT_VERSION);
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }

    fn net(&mut self, net: &Mlp) {
        let spec = &net.spec;
        self.u32(spec.widths.len() as u32);
        spec.widths.iter().for_each(|w| self.u32(*w as u32));
        for l in 0..spec.n_layers() {
            self.u8(spec.activation(l).code());
        }
        let scheme = net.params.init.scheme.as_bytes();
        self.u32(scheme.len() as u32);
        self.buf.extend_from_slice(scheme);
        self.u64(net.params.init.seed);
        self.u32(net.params.data.len() as u32);
        net.params.data.iter().for_each(|v| self.f64(*v));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("file is truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn net(&mut self) -> Result<Mlp> {
        let n = self.u32()? as usize;
        if !(2..=64).contains(&n) {
            return Err(Error::Checkpoint(format!("implausible layer count {n}")));
        }
        let widths = (0..n).map(|_| self.u32().map(|w| w as usize)).collect::<Result<Vec<_>>>()?;
        let mut acts = Vec::with_capacity(n - 1);
        for _ in 0..n - 1 {
            acts.push(Activation::from_code(self.u8()?).ok_or_else(|| Error::Checkpoint("unknown activation".into()))?);
        }
        let output = *acts.last().expect("at least one layer");
        let spec = MlpSpec::new(widths, output)?;
        if (0..n - 1).any(|l| spec.activation(l) != acts[l]) {
            return Err(Error::Checkpoint("hidden activations differ from the supported layout".into()));
        }
        let slen = self.u32()? as usize;
        let scheme = String::from_utf8(self.take(slen)?.to_vec())
            .map_err(|_| Error::Checkpoint("init scheme is not UTF-8".into()))?;
        let seed = self.u64()?;
        let count = self.u32()? as usize;
        if count != spec.n_params() {
            return Err(Error::Checkpoint(format!("expected {} parameters, found {count}", spec.n_params())));
        }
        let data = (0..count).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Mlp::new(spec, MlpParams { data, init: InitRecord { scheme, seed } })
    }
}
