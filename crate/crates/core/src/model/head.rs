//! Linear (optionally one tanh hidden layer) classification head over joint labels.

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::features::Encoded;

use super::ModelError;

/// Head parameters stored in one flat buffer so the optimizer can treat them
/// as a single vector.
///
/// Layout: `[hidden_weight (h x d), hidden_bias (h)]` when a hidden layer is
/// configured, then `[weight (K x m), bias (K)]` where `m` is `h` or `d`.
/// Matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    classes: usize,
    input_width: usize,
    hidden_width: Option<usize>,
    params: Vec<f64>,
}

/// Activations kept from the forward pass for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    hidden: Option<Vec<f64>>,
}

pub const INIT_RANGE: f64 = 0.05;

impl Head {
    pub fn zeros(classes: usize, input_width: usize, hidden_width: Option<usize>) -> Self {
        let mut head = Head {
            classes,
            input_width,
            hidden_width,
            params: Vec::new(),
        };
        head.params = vec![0.0; head.param_count()];
        head
    }

    /// Weights drawn from `uniform(-0.05, 0.05)`, biases zero.
    pub fn init<R: Rng>(
        classes: usize,
        input_width: usize,
        hidden_width: Option<usize>,
        rng: &mut R,
    ) -> Self {
        let mut head = Self::zeros(classes, input_width, hidden_width);
        let (hw, _, w, _) = head.ranges();
        for i in hw.chain(w) {
            head.params[i] = rng.random_range(-INIT_RANGE..INIT_RANGE);
        }
        head
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn hidden_width(&self) -> Option<usize> {
        self.hidden_width
    }

    fn output_input_width(&self) -> usize {
        self.hidden_width.unwrap_or(self.input_width)
    }

    pub fn param_count(&self) -> usize {
        let hidden = self.hidden_width.map_or(0, |h| h * self.input_width + h);
        hidden + self.classes * self.output_input_width() + self.classes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Index ranges of hidden weight, hidden bias, output weight, output bias.
    fn ranges(
        &self,
    ) -> (
        std::ops::Range<usize>,
        std::ops::Range<usize>,
        std::ops::Range<usize>,
        std::ops::Range<usize>,
    ) {
        let hw_len = self.hidden_width.map_or(0, |h| h * self.input_width);
        let hb_len = self.hidden_width.unwrap_or(0);
        let w_len = self.classes * self.output_input_width();
        let hw = 0..hw_len;
        let hb = hw.end..hw.end + hb_len;
        let w = hb.end..hb.end + w_len;
        let b = w.end..w.end + self.classes;
        (hw, hb, w, b)
    }

    fn check_input(&self, x: &Encoded) -> Result<(), ModelError> {
        if x.width() == self.input_width {
            Ok(())
        } else {
            Err(ModelError::Shape {
                what: "input",
                expected: self.input_width,
                found: x.width(),
            })
        }
    }

    pub fn forward(&self, x: &Encoded) -> Result<Vec<f64>, ModelError> {
        self.forward_cached(x).map(|(z, _)| z)
    }

    pub fn forward_cached(&self, x: &Encoded) -> Result<(Vec<f64>, ForwardCache), ModelError> {
        self.check_input(x)?;
        let (hw, hb, w, b) = self.ranges();
        let d = self.input_width;
        let hidden = self.hidden_width.map(|h| {
            let weight = &self.params[hw];
            let mut pre: Vec<f64> = self.params[hb].to_vec();
            x.for_each_nonzero(|i, v| {
                for (j, p) in pre.iter_mut().enumerate() {
                    *p += weight[j * d + i] * v;
                }
            });
            debug_assert_eq!(pre.len(), h);
            pre.into_iter().map(f64::tanh).collect::<Vec<f64>>()
        });

        let m = self.output_input_width();
        let weight = &self.params[w];
        let mut z: Vec<f64> = self.params[b].to_vec();
        match &hidden {
            Some(a) => {
                for (k, zk) in z.iter_mut().enumerate() {
                    let row = &weight[k * m..(k + 1) * m];
                    *zk += row.iter().zip(a).map(|(w, a)| w * a).sum::<f64>();
                }
            }
            None => x.for_each_nonzero(|i, v| {
                for (k, zk) in z.iter_mut().enumerate() {
                    *zk += weight[k * m + i] * v;
                }
            }),
        }
        Ok((z, ForwardCache { hidden }))
    }

    /// Adds `dL/dparams` for upstream gradient `dz` into `grad`.
    pub fn backward(&self, x: &Encoded, cache: &ForwardCache, dz: &[f64], grad: &mut [f64]) {
        let (hw, hb, w, b) = self.ranges();
        let m = self.output_input_width();
        let d = self.input_width;
        for (g, &dzk) in grad[b].iter_mut().zip(dz) {
            *g += dzk;
        }
        match &cache.hidden {
            Some(a) => {
                let weight = &self.params[w.clone()];
                let gw = &mut grad[w];
                let mut da = vec![0.0; m];
                for (k, &dzk) in dz.iter().enumerate() {
                    for j in 0..m {
                        gw[k * m + j] += dzk * a[j];
                        da[j] += dzk * weight[k * m + j];
                    }
                }
                let dpre: Vec<f64> = da.iter().zip(a).map(|(g, a)| g * (1.0 - a * a)).collect();
                for (g, dp) in grad[hb].iter_mut().zip(&dpre) {
                    *g += dp;
                }
                let ghw = &mut grad[hw];
                x.for_each_nonzero(|i, v| {
                    for (j, dp) in dpre.iter().enumerate() {
                        ghw[j * d + i] += dp * v;
                    }
                });
            }
            None => {
                let gw = &mut grad[w];
                x.for_each_nonzero(|i, v| {
                    for (k, &dzk) in dz.iter().enumerate() {
                        gw[k * m + i] += dzk * v;
                    }
                });
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

#[derive(Serialize, Deserialize)]
struct HeadDoc {
    classes: usize,
    input_width: usize,
    hidden_width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hidden_weight: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hidden_bias: Option<Vec<f64>>,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Serialize for Head {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let (hw, hb, w, b) = self.ranges();
        let hidden = self.hidden_width.is_some();
        HeadDoc {
            classes: self.classes,
            input_width: self.input_width,
            hidden_width: self.hidden_width,
            hidden_weight: hidden.then(|| self.params[hw].to_vec()),
            hidden_bias: hidden.then(|| self.params[hb].to_vec()),
            weight: self.params[w].to_vec(),
            bias: self.params[b].to_vec(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Head {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let doc = HeadDoc::deserialize(deserializer)?;
        let mut head = Head::zeros(doc.classes, doc.input_width, doc.hidden_width);
        let mut params = Vec::with_capacity(head.param_count());
        if doc.hidden_width.is_some() {
            params.extend(
                doc.hidden_weight
                    .ok_or_else(|| D::Error::custom("missing hidden_weight"))?,
            );
            params.extend(
                doc.hidden_bias
                    .ok_or_else(|| D::Error::custom("missing hidden_bias"))?,
            );
        }
        params.extend(doc.weight);
        params.extend(doc.bias);
        if params.len() != head.param_count() {
            return Err(D::Error::custom(format!(
                "head has {} parameters, shape requires {}",
                params.len(),
                head.param_count()
            )));
        }
        head.params = params;
        if !head.is_finite() {
            return Err(D::Error::custom("non-finite head parameter"));
        }
        Ok(head)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_input_zero_bias() {
        let head = Head::init(7, 5, None, &mut ChaCha8Rng::seed_from_u64(1));
        let z = head.forward(&Encoded::Dense(vec![0.0; 5])).unwrap();
        assert_eq!(z, vec![0.0; 7]);
    }

    #[test]
    fn one_by_one() {
        let mut head = Head::zeros(1, 1, None);
        head.params_mut().copy_from_slice(&[2.0, 1.0]);
        assert_eq!(head.forward(&Encoded::Dense(vec![3.0])).unwrap(), vec![7.0]);
    }

    #[test]
    fn shape_mismatch() {
        let head = Head::zeros(3, 4, None);
        assert!(matches!(
            head.forward(&Encoded::Dense(vec![1.0; 5])),
            Err(ModelError::Shape { .. })
        ));
    }

    #[test]
    fn sparse_equals_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for hidden in [None, Some(3)] {
            let head = Head::init(4, 8, hidden, &mut rng);
            let sparse = FeatureVector {
                dimension: 8,
                entries: vec![(1, 0.5), (6, -0.25)],
            };
            let a = head.forward(&Encoded::Dense(sparse.to_dense())).unwrap();
            let b = head.forward(&Encoded::Sparse(sparse)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn forward_matches_naive_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (k, d) = (7, 6);
        let mut head = Head::zeros(k, d, None);
        for p in head.params_mut() {
            *p = rng.random_range(-1.0..1.0);
        }
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z = head.forward(&Encoded::Dense(x.clone())).unwrap();
        let p = head.params();
        for r in 0..k {
            let mut acc = p[k * d + r];
            for c in 0..d {
                acc += p[r * d + c] * x[c];
            }
            assert!((z[r] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn serde_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for hidden in [None, Some(2)] {
            let head = Head::init(3, 4, hidden, &mut rng);
            let json = serde_json::to_string(&head).unwrap();
            let back: Head = serde_json::from_str(&json).unwrap();
            assert_eq!(back, head);
        }
        let bad =
            r#"{"classes":2,"input_width":2,"hidden_width":null,"weight":[1,2,3],"bias":[0,0]}"#;
        assert!(serde_json::from_str::<Head>(bad).is_err());
    }
}
