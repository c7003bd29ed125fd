//! One-hidden-layer tanh MLP with softmax cross-entropy.
//!
//! Layout: `fc1.weight [hidden, features]`, `fc1.bias [hidden]`,
//! `fc2.weight [classes, hidden]`, `fc2.bias [classes]`.

use rand_chacha::ChaCha8Rng;

use super::data::{gaussian_init, softmax_xent_in_place, Model};
use crate::error::{Error, Result};
use crate::partition::{TensorKind, TensorMeta};

#[derive(Debug, Clone)]
pub struct MlpModel {
    features: usize,
    hidden: usize,
    classes: usize,
}

impl MlpModel {
    pub fn new(features: usize, hidden: usize, classes: usize) -> Result<Self> {
        if features == 0 || hidden == 0 || classes < 2 {
            return Err(Error::Config("mlp needs features >= 1, hidden >= 1, classes >= 2".into()));
        }
        Ok(MlpModel {
            features,
            hidden,
            classes,
        })
    }

    fn offsets(&self) -> [usize; 4] {
        let (p, h, c) = (self.features, self.hidden, self.classes);
        let w1 = 0;
        let b1 = w1 + h * p;
        let w2 = b1 + h;
        let b2 = w2 + c * h;
        [w1, b1, w2, b2]
    }
}

impl Model for MlpModel {
    type Input = Vec<f64>;

    fn dim(&self) -> usize {
        let (p, h, c) = (self.features, self.hidden, self.classes);
        h * p + h + c * h + c
    }

    fn num_classes(&self) -> usize {
        self.classes
    }

    fn layout(&self) -> Vec<TensorMeta> {
        let (p, h, c) = (self.features, self.hidden, self.classes);
        vec![
            TensorMeta::new("fc1.weight", TensorKind::Mlp, &[h, p]).with_out_neurons(h),
            TensorMeta::new("fc1.bias", TensorKind::Other, &[h]),
            TensorMeta::new("fc2.weight", TensorKind::Mlp, &[c, h]).with_out_neurons(c),
            TensorMeta::new("fc2.bias", TensorKind::Other, &[c]),
        ]
    }

    fn init(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let (p, h, c) = (self.features, self.hidden, self.classes);
        let mut params = gaussian_init(h * p, 1.0 / (p as f64).sqrt(), rng);
        params.extend(std::iter::repeat_n(0.0, h));
        params.extend(gaussian_init(c * h, 1.0 / (h as f64).sqrt(), rng));
        params.extend(std::iter::repeat_n(0.0, c));
        params
    }

    fn check_input(&self, input: &Vec<f64>) -> Result<()> {
        if input.len() != self.features {
            return Err(Error::LengthMismatch {
                expected: self.features,
                found: input.len(),
            });
        }
        Ok(())
    }

    fn accumulate(&self, params: &[f64], z: &Vec<f64>, label: usize, grad: &mut [f64]) -> f64 {
        let (p, h, c) = (self.features, self.hidden, self.classes);
        let [ow1, ob1, ow2, ob2] = self.offsets();
        let w1 = &params[ow1..ob1];
        let b1 = &params[ob1..ow2];
        let w2 = &params[ow2..ob2];
        let b2 = &params[ob2..];

        let act: Vec<f64> = (0..h)
            .map(|i| (b1[i] + w1[i * p..(i + 1) * p].iter().zip(z).map(|(w, x)| w * x).sum::<f64>()).tanh())
            .collect();
        let mut delta_out: Vec<f64> = (0..c)
            .map(|k| b2[k] + w2[k * h..(k + 1) * h].iter().zip(&act).map(|(w, a)| w * a).sum::<f64>())
            .collect();
        let loss = softmax_xent_in_place(&mut delta_out, label);

        let mut delta_hidden = vec![0.0; h];
        for k in 0..c {
            let dk = delta_out[k];
            for i in 0..h {
                grad[ow2 + k * h + i] += dk * act[i];
                delta_hidden[i] += w2[k * h + i] * dk;
            }
            grad[ob2 + k] += dk;
        }
        for i in 0..h {
            let di = delta_hidden[i] * (1.0 - act[i] * act[i]);
            for (g, x) in grad[ow1 + i * p..ow1 + (i + 1) * p].iter_mut().zip(z) {
                *g += di * x;
            }
            grad[ob1 + i] += di;
        }
        loss
    }
}
