//! `CBLF` checkpoint container.
//!
//! ```text
//! "CBLF"                      magic
//! u32 version                 FORMAT_VERSION
//! u32 section count
//! per section:
//!     u32 name length, name bytes (UTF-8)
//!     u32 kind                0 = f32, 1 = u32, 2 = UTF-8 text
//!     u32 rank, rank x u32 dims
//!     u64 offset, u64 byte length
//! payloads, in table order
//! ```
//!
//! All integers and floats are little-endian. Text sections have rank 1 and
//! their byte length as the single dimension.

use std::path::Path;

use capsdbn_core::capsnet::{Activation, CapsNet, CapsNetParams, CapsNetSpec};
use capsdbn_core::dbn::{CrbmLayer, CrbmParams, CrbmSpec, DbnStack};
use capsdbn_core::hybrid::FusionHead;
use capsdbn_core::preprocess::WhitenStats;
use capsdbn_core::Tensor;

use crate::error::{CliError, Result};
use crate::fsio;

pub const MAGIC: &[u8; 4] = b"CBLF";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    U32(Vec<u32>),
    Text(String),
}

impl Payload {
    fn kind(&self) -> u32 {
        match self {
            Payload::F32(_) => 0,
            Payload::U32(_) => 1,
            Payload::Text(_) => 2,
        }
    }

    fn byte_len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len() * 4,
            Payload::U32(v) => v.len() * 4,
            Payload::Text(t) => t.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub shape: Vec<usize>,
    pub payload: Payload,
}

fn ck(msg: impl Into<String>) -> CliError {
    CliError::Checkpoint(msg.into())
}

/// Ordered, uniquely named sections.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    sections: Vec<Section>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    fn push(&mut self, name: &str, shape: Vec<usize>, payload: Payload) {
        assert!(self.section(name).is_none(), "duplicate section {name}");
        self.sections.push(Section { name: name.into(), shape, payload });
    }

    pub fn push_tensor(&mut self, name: &str, t: &Tensor<f32>) {
        self.push(name, t.shape().to_vec(), Payload::F32(t.data().to_vec()));
    }

    pub fn push_f32(&mut self, name: &str, v: &[f32]) {
        self.push(name, vec![v.len()], Payload::F32(v.to_vec()));
    }

    pub fn push_u32(&mut self, name: &str, v: &[u32]) {
        self.push(name, vec![v.len()], Payload::U32(v.to_vec()));
    }

    pub fn push_text(&mut self, name: &str, text: &str) {
        self.push(name, vec![text.len()], Payload::Text(text.into()));
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    fn require(&self, name: &str) -> Result<&Section> {
        self.section(name).ok_or_else(|| ck(format!("missing section {name}")))
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor<f32>> {
        let s = self.require(name)?;
        match &s.payload {
            Payload::F32(v) => Ok(Tensor::from_vec(&s.shape, v.clone())?),
            _ => Err(ck(format!("section {name} is not f32"))),
        }
    }

    pub fn f32s(&self, name: &str) -> Result<Vec<f32>> {
        Ok(self.tensor(name)?.into_vec())
    }

    pub fn u32s(&self, name: &str) -> Result<&[u32]> {
        match &self.require(name)?.payload {
            Payload::U32(v) => Ok(v),
            _ => Err(ck(format!("section {name} is not u32"))),
        }
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match &self.require(name)?.payload {
            Payload::Text(t) => Ok(t),
            _ => Err(ck(format!("section {name} is not text"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = Vec::new();
        head.extend_from_slice(MAGIC);
        head.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        head.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        let table_len: usize = self
            .sections
            .iter()
            .map(|s| 4 + s.name.len() + 4 + 4 + 4 * s.shape.len() + 16)
            .sum();
        let mut offset = (head.len() + table_len) as u64;
        for s in &self.sections {
            head.extend_from_slice(&(s.name.len() as u32).to_le_bytes());
            head.extend_from_slice(s.name.as_bytes());
            head.extend_from_slice(&s.payload.kind().to_le_bytes());
            head.extend_from_slice(&(s.shape.len() as u32).to_le_bytes());
            for &d in &s.shape {
                head.extend_from_slice(&(d as u32).to_le_bytes());
            }
            let len = s.payload.byte_len() as u64;
            head.extend_from_slice(&offset.to_le_bytes());
            head.extend_from_slice(&len.to_le_bytes());
            offset += len;
        }
        for s in &self.sections {
            match &s.payload {
                Payload::F32(v) => v.iter().for_each(|x| head.extend_from_slice(&x.to_le_bytes())),
                Payload::U32(v) => v.iter().for_each(|x| head.extend_from_slice(&x.to_le_bytes())),
                Payload::Text(t) => head.extend_from_slice(t.as_bytes()),
            }
        }
        head
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(ck("bad magic, not a CBLF file"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(ck(format!("version mismatch: file has {version}, reader supports {FORMAT_VERSION}")));
        }
        let count = r.u32()? as usize;
        let mut table = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| ck("section name is not UTF-8"))?;
            let kind = r.u32()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let (offset, len) = (r.u64()?, r.u64()?);
            table.push((name, kind, shape, offset, len));
        }
        let mut out = Checkpoint::new();
        for (name, kind, shape, offset, len) in table {
            let start = usize::try_from(offset).map_err(|_| ck("offset overflow"))?;
            let end = start.checked_add(len as usize).filter(|&e| e <= bytes.len());
            let data = &bytes[start..end.ok_or_else(|| ck(format!("section {name} runs past end of file")))?];
            let elems: usize = shape.iter().product();
            let payload = match kind {
                0 | 1 if elems * 4 != data.len() => {
                    return Err(ck(format!("section {name}: shape {shape:?} needs {} bytes, has {}", elems * 4, data.len())))
                }
                0 => Payload::F32(data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
                1 => Payload::U32(data.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect()),
                2 => Payload::Text(String::from_utf8(data.to_vec()).map_err(|_| ck(format!("section {name} is not UTF-8")))?),
                k => return Err(ck(format!("section {name}: unknown kind {k}"))),
            };
            if out.section(&name).is_some() {
                return Err(ck(format!("duplicate section {name}")));
            }
            out.sections.push(Section { name, shape, payload });
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsio::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fsio::read(path)?).map_err(|e| match e {
            CliError::Checkpoint(m) => CliError::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Fails unless the `kind` section equals `want`.
    pub fn expect_kind(&self, want: &str) -> Result<()> {
        let got = self.text("kind")?;
        if got != want {
            return Err(ck(format!("expected a {want} checkpoint, found {got}")));
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| ck("truncated header"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn to_u32(v: &[usize]) -> Vec<u32> {
    v.iter().map(|&x| x as u32).collect()
}

fn header(kind: &str, config_text: &str) -> Checkpoint {
    let mut c = Checkpoint::new();
    c.push_text("kind", kind);
    c.push_text("config", config_text);
    c
}

pub fn encode_capsnet(net: &CapsNet, config_text: &str) -> Checkpoint {
    let s = &net.spec;
    let mut c = header("capsnet", config_text);
    let act = match s.activation {
        Activation::Relu => 0,
        Activation::Tanh => 1,
    };
    c.push_u32(
        "caps.spec",
        &to_u32(&[
            s.input_shape[0],
            s.input_shape[1],
            s.input_shape[2],
            s.conv_filters,
            s.conv_kernel,
            s.primary_groups,
            s.primary_dim,
            s.primary_kernel,
            s.primary_stride,
            s.category_count,
            s.category_dim,
            s.routing_iters,
            act,
        ]),
    );
    for (name, t) in CapsNetParams::<f32>::TENSOR_NAMES.iter().zip(net.params.tensors()) {
        c.push_tensor(&format!("caps.{name}"), t);
    }
    c
}

pub fn decode_capsnet(c: &Checkpoint) -> Result<CapsNet> {
    c.expect_kind("capsnet")?;
    let v: Vec<usize> = c.u32s("caps.spec")?.iter().map(|&x| x as usize).collect();
    let &[ch, h, w, f, k0, g, d1, k1, s1, k, d2, r, act] = &v[..] else {
        return Err(ck(format!("caps.spec has {} fields, expected 13", v.len())));
    };
    let activation = match act {
        0 => Activation::Relu,
        1 => Activation::Tanh,
        a => return Err(ck(format!("unknown activation code {a}"))),
    };
    let spec = CapsNetSpec {
        input_shape: [ch, h, w],
        conv_filters: f,
        conv_kernel: k0,
        primary_groups: g,
        primary_dim: d1,
        primary_kernel: k1,
        primary_stride: s1,
        category_count: k,
        category_dim: d2,
        routing_iters: r,
        activation,
    };
    spec.validate()?;
    let mut params = CapsNetParams::<f32>::zeros(&spec);
    for (name, t) in CapsNetParams::<f32>::TENSOR_NAMES.iter().zip(params.tensors_mut()) {
        *t = c.tensor(&format!("caps.{name}"))?;
    }
    Ok(CapsNet::new(spec, params)?)
}

fn push_whitening(c: &mut Checkpoint, w: &WhitenStats) {
    c.push_u32("whiten.shape", &to_u32(&w.shape));
    c.push_f32("whiten.mean", &w.mean);
    c.push_f32("whiten.std", &w.std);
    // Exact decimal form of the f64 floor.
    c.push_text("whiten.eps", &format!("{:?}", w.eps));
}

fn read_whitening(c: &Checkpoint) -> Result<WhitenStats> {
    let shape = c.u32s("whiten.shape")?;
    let &[ch, h, w] = shape else {
        return Err(ck("whiten.shape must have 3 entries"));
    };
    let eps: f64 = c.text("whiten.eps")?.parse().map_err(|_| ck("whiten.eps is not a number"))?;
    let stats = WhitenStats {
        shape: [ch as usize, h as usize, w as usize],
        mean: c.f32s("whiten.mean")?,
        std: c.f32s("whiten.std")?,
        eps,
    };
    let n = stats.shape.iter().product::<usize>();
    if stats.mean.len() != n || stats.std.len() != n {
        return Err(ck("whitening statistics do not match their shape"));
    }
    Ok(stats)
}

pub fn encode_whitening(w: &WhitenStats, config_text: &str) -> Checkpoint {
    let mut c = header("whitening", config_text);
    push_whitening(&mut c, w);
    c
}

pub fn decode_whitening(c: &Checkpoint) -> Result<WhitenStats> {
    c.expect_kind("whitening")?;
    read_whitening(c)
}

/// DBN stack plus the whitening statistics its inputs were built with.
pub fn encode_dbn(stack: &DbnStack, whitening: &WhitenStats, config_text: &str) -> Checkpoint {
    let mut c = header("dbn", config_text);
    let mut dims = Vec::new();
    for l in stack.layers() {
        let s = &l.spec;
        dims.extend([s.visible_extent(), s.visible_channels(), s.groups(), s.filter_extent(), s.pool_window()]);
    }
    c.push_u32("dbn.layers", &to_u32(&dims));
    for (i, l) in stack.layers().iter().enumerate() {
        c.push_tensor(&format!("dbn.l{}.filters", i + 1), &l.params.filters);
        c.push_f32(&format!("dbn.l{}.hidden_bias", i + 1), &l.params.hidden_bias);
        c.push_f32(&format!("dbn.l{}.visible_bias", i + 1), &l.params.visible_bias);
    }
    push_whitening(&mut c, whitening);
    c
}

pub fn decode_dbn(c: &Checkpoint) -> Result<(DbnStack, WhitenStats)> {
    c.expect_kind("dbn")?;
    let dims = c.u32s("dbn.layers")?;
    if dims.is_empty() || dims.len() % 5 != 0 {
        return Err(ck("dbn.layers must hold 5 values per layer"));
    }
    let mut layers = Vec::new();
    for (i, d) in dims.chunks_exact(5).enumerate() {
        let spec = CrbmSpec::new(d[0] as usize, d[1] as usize, d[2] as usize, d[3] as usize, d[4] as usize)?;
        let params = CrbmParams {
            filters: c.tensor(&format!("dbn.l{}.filters", i + 1))?,
            hidden_bias: c.f32s(&format!("dbn.l{}.hidden_bias", i + 1))?,
            visible_bias: c.f32s(&format!("dbn.l{}.visible_bias", i + 1))?,
        };
        params.check(&spec)?;
        layers.push(CrbmLayer { spec, params });
    }
    Ok((DbnStack::new(layers)?, read_whitening(c)?))
}

pub fn encode_fusion(head: &FusionHead<f32>, config_text: &str) -> Checkpoint {
    let mut c = header("fusion", config_text);
    c.push_tensor("fusion.weights", &head.weights);
    c.push_f32("fusion.bias", &head.bias);
    c
}

pub fn decode_fusion(c: &Checkpoint) -> Result<FusionHead<f32>> {
    c.expect_kind("fusion")?;
    let weights = c.tensor("fusion.weights")?;
    let bias = c.f32s("fusion.bias")?;
    if weights.ndim() != 2 || weights.shape()[0] != bias.len() {
        return Err(ck(format!("fusion weights {:?} and bias [{}] disagree", weights.shape(), bias.len())));
    }
    Ok(FusionHead { weights, bias })
}

#[cfg(test)]
mod tests {
    use super::*;
    use capsdbn_core::dbn::default_specs;

    fn whitening() -> WhitenStats {
        WhitenStats { shape: [3, 32, 32], mean: vec![0.25; 3072], std: vec![0.5; 3072], eps: 1e-8 }
    }

    #[test]
    fn container_round_trip_is_byte_identical() {
        let mut c = Checkpoint::new();
        c.push_text("kind", "test");
        c.push_tensor("t", &Tensor::from_fn(&[2, 3], |i| i as f32 * -0.5));
        c.push_u32("u", &[1, 2, 3]);
        c.push_f32("empty", &[]);
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..4], b"CBLF");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), FORMAT_VERSION);
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let mut c = Checkpoint::new();
        c.push_f32("x", &[1.0, 2.0]);
        let bytes = c.to_bytes();
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(Checkpoint::from_bytes(&v2).unwrap_err().to_string().contains("version mismatch"));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..10]).is_err());
    }

    #[test]
    fn models_round_trip_bit_exactly() {
        let net = CapsNet::init(CapsNetSpec::default(), 4).unwrap();
        let c = encode_capsnet(&net, "seed = 1\n");
        let back = decode_capsnet(&Checkpoint::from_bytes(&c.to_bytes()).unwrap()).unwrap();
        assert_eq!(back, net);
        assert_eq!(encode_capsnet(&back, "seed = 1\n").to_bytes(), c.to_bytes());

        let stack = DbnStack::init(&default_specs(3).unwrap(), 2).unwrap();
        let c = encode_dbn(&stack, &whitening(), "");
        let (s2, w2) = decode_dbn(&Checkpoint::from_bytes(&c.to_bytes()).unwrap()).unwrap();
        assert_eq!((s2, w2), (stack, whitening()));

        let mut head = FusionHead::<f32>::zeros(5, 69);
        head.bias[2] = 0.125;
        let c = encode_fusion(&head, "");
        assert_eq!(decode_fusion(&Checkpoint::from_bytes(&c.to_bytes()).unwrap()).unwrap(), head);
        assert!(decode_capsnet(&c).unwrap_err().to_string().contains("expected a capsnet checkpoint"));
    }
}
