//! Low-rank adaptation around frozen weight matrices.
//!
//! Effective weight: W + (alpha/rank)·B·A with A (rank×d_in) small-random and
//! B (d_out×rank) zero at init, so a freshly wrapped layer computes exactly
//! what the frozen layer computed. Only A and B are trainable.

use super::LmError;
use crate::params::{ParamId, ParamSet, TapeBinding};
use crate::rng::Rng;
use crate::tensor::{NodeId, Tape, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct LoraAdapter {
    pub base: ParamId,
    pub a: ParamId,
    pub b: ParamId,
    pub rank: usize,
    pub alpha: f64,
}

impl LoraAdapter {
    /// Wrap a frozen (d_out×d_in) weight. The base parameter keeps its
    /// trainable flag (expected false); A and B are registered trainable.
    pub fn wrap(
        set: &mut ParamSet,
        base: ParamId,
        rank: usize,
        alpha: f64,
        rng: &mut Rng,
    ) -> Result<LoraAdapter, LmError> {
        let (d_out, d_in) = {
            let w = set.get(base);
            (w.rows(), w.cols())
        };
        let min_dim = d_out.min(d_in);
        if rank == 0 || rank > min_dim {
            return Err(LmError::RankTooLarge { rank, min_dim });
        }
        let name = set.name(base).to_string();
        let a = set.add(format!("{name}.lora_a"), Tensor::randn(vec![rank, d_in], 0.02, rng), true);
        let b = set.add(format!("{name}.lora_b"), Tensor::zeros(vec![d_out, rank]), true);
        Ok(LoraAdapter { base, a, b, rank, alpha })
    }

    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    /// x·Wᵀ + (alpha/rank)·(x·Aᵀ)·Bᵀ for x of shape (rows×d_in).
    pub fn forward(
        &self,
        tape: &mut Tape,
        binding: &mut TapeBinding,
        set: &ParamSet,
        x: NodeId,
    ) -> Result<NodeId, LmError> {
        let w = binding.node(tape, set, self.base);
        let a = binding.node(tape, set, self.a);
        let b = binding.node(tape, set, self.b);
        let base_out = tape.matmul_nt(x, w)?;
        let xa = tape.matmul_nt(x, a)?;
        let xab = tape.matmul_nt(xa, b)?;
        let delta = tape.scale(xab, self.scaling())?;
        Ok(tape.add(base_out, delta)?)
    }

    /// W + (alpha/rank)·B·A as a value, for contract tests.
    pub fn effective_weight(&self, set: &ParamSet) -> Tensor {
        let mut tape = Tape::new();
        let w = tape.constant(set.get(self.base).clone());
        let a = tape.constant(set.get(self.a).clone());
        let b = tape.constant(set.get(self.b).clone());
        let ba = tape.matmul(b, a).expect("rank-consistent shapes");
        let scaled = tape.scale(ba, self.scaling()).expect("finite");
        let eff = tape.add(w, scaled).expect("same shape");
        tape.value(eff).clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(d_out: usize, d_in: usize, rank: usize) -> (ParamSet, LoraAdapter) {
        let mut set = ParamSet::new();
        let mut rng = Rng::seed_from_u64(17);
        let base = set.add("w", Tensor::randn(vec![d_out, d_in], 0.5, &mut rng), false);
        let lora = LoraAdapter::wrap(&mut set, base, rank, 16.0, &mut rng).unwrap();
        (set, lora)
    }

    #[test]
    fn zero_init_matches_frozen_layer_exactly() {
        let (set, lora) = setup(6, 4, 2);
        let mut rng = Rng::seed_from_u64(18);
        let x = Tensor::randn(vec![3, 4], 1.0, &mut rng);

        let mut tape = Tape::new();
        let mut binding = TapeBinding::new(&set);
        let xn = tape.constant(x.clone());
        let wrapped = lora.forward(&mut tape, &mut binding, &set, xn).unwrap();
        let w = tape.constant(set.get(lora.base).clone());
        let plain = tape.matmul_nt(xn, w).unwrap();
        for (a, b) in tape.value(wrapped).data().iter().zip(tape.value(plain).data()) {
            assert!((a - b).abs() <= 1e-15, "B=0 init must be exact: {a} vs {b}");
        }
    }

    #[test]
    fn nonzero_b_changes_the_output() {
        let (mut set, lora) = setup(6, 4, 2);
        set.set_data(lora.b, vec![0.1; 12]);
        let mut rng = Rng::seed_from_u64(19);
        let x = Tensor::randn(vec![3, 4], 1.0, &mut rng);
        let mut tape = Tape::new();
        let mut binding = TapeBinding::new(&set);
        let xn = tape.constant(x);
        let wrapped = lora.forward(&mut tape, &mut binding, &set, xn).unwrap();
        let w = tape.constant(set.get(lora.base).clone());
        let plain = tape.matmul_nt(xn, w).unwrap();
        let diff: f64 = tape
            .value(wrapped)
            .data()
            .iter()
            .zip(tape.value(plain).data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-6);
    }

    #[test]
    fn full_rank_adapter_represents_any_delta() {
        // rank = min dim: choose A = I, B = (rank/alpha)·ΔW, then the
        // effective weight is exactly W + ΔW (a perfect least-squares fit).
        let (mut set, lora) = setup(6, 4, 4);
        let mut rng = Rng::seed_from_u64(20);
        let delta = Tensor::randn(vec![6, 4], 1.0, &mut rng);

        let mut a = vec![0.0; 4 * 4];
        for i in 0..4 {
            a[i * 4 + i] = 1.0;
        }
        set.set_data(lora.a, a);
        let scale = lora.rank as f64 / lora.alpha;
        set.set_data(lora.b, delta.data().iter().map(|v| v * scale).collect());

        let eff = lora.effective_weight(&set);
        let base = set.get(lora.base);
        for i in 0..6 {
            for j in 0..4 {
                let want = base.at(i, j) + delta.at(i, j);
                assert!((eff.at(i, j) - want).abs() < 1e-6, "delta fit");
            }
        }
    }

    #[test]
    fn rank_bounds_are_enforced() {
        let mut set = ParamSet::new();
        let mut rng = Rng::seed_from_u64(21);
        let base = set.add("w", Tensor::zeros(vec![6, 4]), false);
        assert!(matches!(
            LoraAdapter::wrap(&mut set, base, 5, 16.0, &mut rng),
            Err(LmError::RankTooLarge { rank: 5, min_dim: 4 })
        ));
        let base2 = set.add("w2", Tensor::zeros(vec![6, 4]), false);
        assert!(matches!(
            LoraAdapter::wrap(&mut set, base2, 0, 16.0, &mut rng),
            Err(LmError::RankTooLarge { .. })
        ));
    }

    #[test]
    fn only_a_and_b_are_trainable() {
        let (set, lora) = setup(6, 4, 2);
        assert!(!set.is_trainable(lora.base));
        assert!(set.is_trainable(lora.a));
        assert!(set.is_trainable(lora.b));
    }
}
