use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};

/// Fully connected stack with leaky-rectifier hidden activations and a linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
    widths: Vec<usize>,
    slope: f64,
}

impl Mlp {
    /// `widths = [input, hidden..., output]`. With `zero_output` the last layer
    /// starts at zero, so the untrained network emits constant zeros.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        slope: f64,
        zero_output: bool,
        rng: &mut R,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for (i, w) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let last = i == widths.len() - 2;
            let (wid, bid) = if last && zero_output {
                (
                    store.add(format!("{name}.{i}.weight"), Array2::zeros((fan_in, fan_out))),
                    store.add(format!("{name}.{i}.bias"), Array2::zeros((1, fan_out))),
                )
            } else {
                (
                    store.add_uniform(format!("{name}.{i}.weight"), (fan_in, fan_out), fan_in, rng),
                    store.add_uniform(format!("{name}.{i}.bias"), (1, fan_out), fan_in, rng),
                )
            };
            layers.push((wid, bid));
        }
        Mlp {
            layers,
            widths: widths.to_vec(),
            slope,
        }
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|(w, b)| [*w, *b])
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, input: Var) -> Var {
        let mut h = input;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(store, *w);
            let bv = tape.param(store, *b);
            let z = tape.matmul(h, wv);
            h = tape.add_row(z, bv);
            if i + 1 < self.layers.len() {
                h = tape.leaky_relu(h, self.slope);
            }
        }
        h
    }

    /// Tape-free evaluation for inference.
    pub fn eval(&self, store: &ParamStore, input: &Array2<f64>) -> Array2<f64> {
        let mut h = input.clone();
        for (i, (w, b)) in self.layers.iter().enumerate() {
            h = h.dot(store.get(*w)) + store.get(*b);
            if i + 1 < self.layers.len() {
                let s = self.slope;
                h.mapv_inplace(|v| if v > 0.0 { v } else { s * v });
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tape_and_eval_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &[4, 8, 8, 2], 0.2, false, &mut rng);
        let x = Array2::from_shape_fn((5, 4), |(i, j)| (i as f64 - 2.0) * 0.3 + j as f64 * 0.1);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = mlp.forward(&mut tape, &store, xv);
        let direct = mlp.eval(&store, &x);
        assert!((tape.value(out) - &direct).iter().all(|d| d.abs() < 1e-12));
        assert_eq!(direct.dim(), (5, 2));
    }

    #[test]
    fn zero_output_emits_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &[3, 5, 4], 0.2, true, &mut rng);
        let x = Array2::from_elem((2, 3), 7.0);
        assert!(mlp.eval(&store, &x).iter().all(|v| *v == 0.0));
    }
}
