//! Flat registry of named model parameters.
//!
//! Every learnable (or frozen) matrix lives here; modules hold `ParamId`
//! handles. One registry feeds the optimizer, the checkpoint writer, and the
//! frozen-set fingerprint, all in deterministic insertion order.

use crate::tensor::{NodeId, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    /// Register a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name: {name}"
        );
        let id = ParamId(self.params.len());
        self.params.push(Param { name, tensor, trainable });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.params[id.0].trainable
    }

    pub fn set_data(&mut self, id: ParamId, data: Vec<f64>) {
        let t = &mut self.params[id.0].tensor;
        assert_eq!(data.len(), t.numel(), "set_data length mismatch");
        *t = Tensor::new(t.dims().to_vec(), data).expect("parameter update produced non-finite");
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, p)| p.trainable)
            .map(|(id, _)| id)
            .collect()
    }

    pub fn frozen_ids(&self) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, p)| !p.trainable)
            .map(|(id, _)| id)
            .collect()
    }

    /// Bit-level fingerprint (FNV-1a over IEEE-754 bit patterns) of a set of
    /// parameters; used to prove frozen weights never move.
    pub fn fingerprint(&self, ids: &[ParamId]) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &id in ids {
            for v in self.params[id.0].tensor.data() {
                for byte in v.to_bits().to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }
}

/// Per-tape binding of parameters to tape nodes. Trainable parameters enter
/// the tape as differentiable leaves, frozen ones as constants (backward then
/// prunes their branches).
pub struct TapeBinding {
    bound: Vec<Option<NodeId>>,
}

impl TapeBinding {
    pub fn new(set: &ParamSet) -> Self {
        TapeBinding { bound: vec![None; set.len()] }
    }

    pub fn node(&mut self, tape: &mut Tape, set: &ParamSet, id: ParamId) -> NodeId {
        if let Some(n) = self.bound[id.0] {
            return n;
        }
        let p = &set.params[id.0];
        let n = if p.trainable {
            tape.leaf(p.tensor.clone())
        } else {
            tape.constant(p.tensor.clone())
        };
        self.bound[id.0] = Some(n);
        n
    }

    /// Gradient of the bound node for a parameter, if it was used and any
    /// gradient flowed to it.
    pub fn grad<'t>(&self, tape: &'t Tape, id: ParamId) -> Option<&'t [f64]> {
        self.bound[id.0].and_then(|n| tape.grad(n))
    }
}

/// Gradient accumulator across a batch of per-dialogue tapes.
#[derive(Clone, Debug)]
pub struct GradBuffer {
    grads: Vec<Option<Vec<f64>>>,
}

impl GradBuffer {
    pub fn new(set: &ParamSet) -> Self {
        GradBuffer { grads: vec![None; set.len()] }
    }

    pub fn accumulate(&mut self, set: &ParamSet, binding: &TapeBinding, tape: &Tape) {
        for (id, p) in set.iter() {
            if !p.trainable {
                continue;
            }
            if let Some(g) = binding.grad(tape, id) {
                match &mut self.grads[id.0] {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(g) {
                            *a += v;
                        }
                    }
                    None => self.grads[id.0] = Some(g.to_vec()),
                }
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.grads.iter_mut().flatten() {
            for v in g.iter_mut() {
                *v *= c;
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }
}
