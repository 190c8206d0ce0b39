use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{AutodiffError, Scalar, Tensor};

/// Magic prefix of serialized weights.
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RFSW";

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<F> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }

    /// Overwrites every tensor with the same-named entry of `other`.
    pub fn load_from(&mut self, other: &ParamStore<F>) -> Result<(), AutodiffError> {
        for i in 0..self.tensors.len() {
            let src = other.find(&self.names[i]).ok_or_else(|| AutodiffError::MissingParam(self.names[i].clone()))?;
            let src = other.get(src);
            if src.shape() != self.tensors[i].shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "load",
                    lhs: self.tensors[i].shape().to_vec(),
                    rhs: src.shape().to_vec(),
                });
            }
            self.tensors[i] = src.clone();
        }
        Ok(())
    }
}

/// Per-parameter gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    slots: Vec<Option<Vec<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn empty(params: usize) -> Self {
        Self { slots: (0..params).map(|_| None).collect() }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn get(&self, id: ParamId) -> Option<&[F]> {
        self.slots[id.0].as_deref()
    }

    pub fn set(&mut self, id: ParamId, g: Vec<F>) {
        self.slots[id.0] = Some(g);
    }

    /// Element-wise sum with `other`.
    pub fn accumulate(&mut self, other: &Gradients<F>) {
        for (mine, theirs) in self.slots.iter_mut().zip(&other.slots) {
            match (mine.as_mut(), theirs) {
                (Some(m), Some(t)) => m.iter_mut().zip(t).for_each(|(a, b)| *a += *b),
                (None, Some(t)) => *mine = Some(t.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, c: F) {
        for g in self.slots.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= c);
        }
    }
}

/// Serializes weights: magic, then per tensor a `u32` name length, the
/// UTF-8 name, a `u32` rank, `u32` dims and little-endian `f32` values.
pub fn encode_checkpoint<F: Scalar>(store: &ParamStore<F>) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + store.numel() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for (name, t) in store.names.iter().zip(&store.tensors) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for d in t.shape() {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in t.data() {
            let v = v.to_f32().unwrap_or(f32::NAN);
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], AutodiffError> {
        let end = self.at.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| AutodiffError::Checkpoint(format!("truncated at byte {}", self.at)))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, AutodiffError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode_checkpoint<F: Scalar>(bytes: &[u8]) -> Result<ParamStore<F>, AutodiffError> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(AutodiffError::Checkpoint("bad magic".to_string()));
    }
    let mut r = Reader { bytes, at: 4 };
    let mut store = ParamStore::new();
    while r.at < bytes.len() {
        let name_len = r.u32()?;
        let name = core::str::from_utf8(r.take(name_len)?)
            .map_err(|_| AutodiffError::Checkpoint("parameter name is not UTF-8".to_string()))?
            .to_string();
        let rank = r.u32()?;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32()?);
        }
        let n = shape.iter().try_fold(1usize, |acc, d| acc.checked_mul(*d));
        let n = n.ok_or_else(|| AutodiffError::Checkpoint(format!("shape of `{name}` overflows")))?;
        let raw = r.take(n.checked_mul(4).ok_or_else(|| AutodiffError::Checkpoint("size overflow".to_string()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| F::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        store.add(name, Tensor::new(shape, data)?);
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn checkpoint_round_trip_is_byte_exact() {
        let mut s = ParamStore::<f32>::new();
        s.add("a", Tensor::new(vec![2, 2], vec![1.0, -2.5, 3.25, 1e-7]).unwrap());
        s.add("blocks.0.b", Tensor::new(vec![3], vec![0.0, -0.0, 7.0]).unwrap());
        let bytes = encode_checkpoint(&s);
        // magic + (4+1+4+8+16) + (4+10+4+4+12)
        assert_eq!(bytes.len(), 4 + 33 + 34);
        let back: ParamStore<f32> = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn checkpoint_rejects_damage() {
        let mut s = ParamStore::<f32>::new();
        s.add("w", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let bytes = encode_checkpoint(&s);
        assert!(decode_checkpoint::<f32>(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_checkpoint::<f32>(b"XXXX").is_err());
    }

    #[test]
    fn load_from_matches_by_name() {
        let mut a = ParamStore::<f64>::new();
        a.add("x", Tensor::zeros(&[2]));
        let mut b = ParamStore::<f64>::new();
        b.add("x", Tensor::filled(&[2], 3.0));
        a.load_from(&b).unwrap();
        assert_eq!(a.get(ParamId(0)).data(), &[3.0, 3.0]);
        let c = ParamStore::<f64>::new();
        assert!(matches!(a.load_from(&c), Err(AutodiffError::MissingParam(_))));
    }

    #[test]
    fn gradients_accumulate_and_scale() {
        let mut g = Gradients::<f64>::empty(2);
        let mut h = Gradients::<f64>::empty(2);
        h.set(ParamId(1), vec![1.0, 2.0]);
        g.accumulate(&h);
        g.accumulate(&h);
        g.scale(0.5);
        assert_eq!(g.get(ParamId(1)).unwrap(), &[1.0, 2.0]);
        assert!(g.get(ParamId(0)).is_none());
    }
}
