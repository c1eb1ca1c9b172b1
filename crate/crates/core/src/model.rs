//! The CNN backbone, the classifier head, the tau-conditioned quantile head
//! and the scalar-regression baseline head.
//!
//! Backbone (fixed, for 28x28x1 and 32x32x3 inputs): two 3x3 convolutions
//! (in -> 32 -> 64), 2x2 max pooling, dropout 0.25, a dense layer down to a
//! 128-wide feature vector, dropout 0.50. Heads attach to that feature
//! vector, so its width is the same for every supported input shape.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Element, Tensor};

/// Feature width produced by the backbone.
pub const FEATURE_DIM: usize = 128;
/// Number of cosine basis functions in the tau embedding.
pub const TAU_BASIS: usize = 64;
pub const DROPOUT_CONV: f64 = 0.25;
pub const DROPOUT_FC: f64 = 0.50;

pub type NamedParams<E> = Vec<(String, Tensor<E>)>;

fn init_uniform<E: Element>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<E> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data: Vec<E> = (0..numel)
        .map(|_| E::from_f64(rng.uniform(-bound, bound)))
        .collect();
    Tensor::from_vec(shape, data)
        .expect("shape covers data by construction")
        .requires_grad()
}

pub struct Conv2dLayer<E: Element> {
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
    pub stride: usize,
}

impl<E: Element> Conv2dLayer<E> {
    pub fn new(c_in: usize, c_out: usize, k: usize, stride: usize, rng: &mut Rng) -> Self {
        let fan_in = c_in * k * k;
        Conv2dLayer {
            weight: init_uniform(&[c_out, c_in, k, k], fan_in, rng),
            bias: init_uniform(&[c_out], fan_in, rng),
            stride,
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        x.conv2d(&self.weight, self.stride)?.add_channel_bias(&self.bias)
    }
}

pub struct LinearLayer<E: Element> {
    /// `[in, out]`; forward is `x @ weight + bias`.
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
}

impl<E: Element> LinearLayer<E> {
    pub fn new(d_in: usize, d_out: usize, rng: &mut Rng) -> Self {
        LinearLayer {
            weight: init_uniform(&[d_in, d_out], d_in, rng),
            bias: init_uniform(&[d_out], d_in, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        x.matmul(&self.weight)?.add_row_bias(&self.bias)
    }
}

/// Input geometry of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputShape {
    pub const MNIST: InputShape = InputShape {
        channels: 1,
        height: 28,
        width: 28,
    };
    pub const CIFAR: InputShape = InputShape {
        channels: 3,
        height: 32,
        width: 32,
    };
}

pub struct Backbone<E: Element> {
    pub conv1: Conv2dLayer<E>,
    pub conv2: Conv2dLayer<E>,
    pub fc1: LinearLayer<E>,
    pub dropout_conv: f64,
    pub dropout_fc: f64,
    pub dropout_enabled: bool,
    pub input: InputShape,
    flat_dim: usize,
}

impl<E: Element> Backbone<E> {
    pub fn new(input: InputShape, dropout_enabled: bool, rng: &mut Rng) -> Result<Self> {
        if input.height < 7 || input.width < 7 {
            return Err(Error::Dimension {
                op: "backbone",
                msg: format!("input {}x{} too small for two 3x3 convs + 2x2 pool", input.height, input.width),
            });
        }
        let h2 = input.height - 4; // two valid 3x3 convs
        let w2 = input.width - 4;
        let hp = (h2 - 2) / 2 + 1; // 2x2 pool, stride 2
        let wp = (w2 - 2) / 2 + 1;
        let flat_dim = 64 * hp * wp;
        Ok(Backbone {
            conv1: Conv2dLayer::new(input.channels, 32, 3, 1, rng),
            conv2: Conv2dLayer::new(32, 64, 3, 1, rng),
            fc1: LinearLayer::new(flat_dim, FEATURE_DIM, rng),
            dropout_conv: DROPOUT_CONV,
            dropout_fc: DROPOUT_FC,
            dropout_enabled,
            input,
            flat_dim,
        })
    }

    pub fn flat_dim(&self) -> usize {
        self.flat_dim
    }

    fn check_input(&self, x: &Tensor<E>) -> Result<()> {
        match x.shape() {
            [_, c, h, w]
                if *c == self.input.channels && *h == self.input.height && *w == self.input.width =>
            {
                Ok(())
            }
            other => Err(Error::Dimension {
                op: "backbone",
                msg: format!(
                    "expected [b, {}, {}, {}] input, got {:?}",
                    self.input.channels, self.input.height, self.input.width, other
                ),
            }),
        }
    }

    /// Feature vector `psi(x)` of shape `[b, FEATURE_DIM]`.
    pub fn forward(&self, x: &Tensor<E>, training: bool, rng: &mut Rng) -> Result<Tensor<E>> {
        self.check_input(x)?;
        let drop = training && self.dropout_enabled;
        let h = self.conv1.forward(x)?.relu()?;
        let h = self.conv2.forward(&h)?.relu()?;
        let h = h.max_pool2d(2, 2)?;
        let h = h.dropout(self.dropout_conv, drop, rng)?;
        let h = h.flatten()?;
        let h = self.fc1.forward(&h)?.relu()?;
        h.dropout(self.dropout_fc, drop, rng)
    }

    pub fn params(&self) -> NamedParams<E> {
        vec![
            ("backbone.conv1.weight".into(), self.conv1.weight.clone()),
            ("backbone.conv1.bias".into(), self.conv1.bias.clone()),
            ("backbone.conv2.weight".into(), self.conv2.weight.clone()),
            ("backbone.conv2.bias".into(), self.conv2.bias.clone()),
            ("backbone.fc1.weight".into(), self.fc1.weight.clone()),
            ("backbone.fc1.bias".into(), self.fc1.bias.clone()),
        ]
    }

    /// Copy parameter values from another backbone of identical geometry.
    /// Value copy only: the source keeps its own buffers.
    pub fn copy_from(&mut self, src: &Backbone<E>) -> Result<()> {
        let dst = self.params();
        let srcp = src.params();
        for ((dn, dt), (sn, st)) in dst.iter().zip(srcp.iter()) {
            if dn != sn || dt.shape() != st.shape() {
                return Err(Error::Contract(format!(
                    "backbone architecture mismatch: {} {:?} vs {} {:?}",
                    dn,
                    dt.shape(),
                    sn,
                    st.shape()
                )));
            }
            dt.data_mut().copy_from_slice(&st.data());
        }
        Ok(())
    }
}

pub struct ClassifierModel<E: Element> {
    pub backbone: Backbone<E>,
    pub fc2: LinearLayer<E>,
    pub num_classes: usize,
}

impl<E: Element> ClassifierModel<E> {
    pub fn new(input: InputShape, num_classes: usize, dropout_enabled: bool, rng: &mut Rng) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Parameter(format!("num_classes must be >= 2, got {}", num_classes)));
        }
        let backbone = Backbone::new(input, dropout_enabled, rng)?;
        let fc2 = LinearLayer::new(FEATURE_DIM, num_classes, rng);
        Ok(ClassifierModel {
            backbone,
            fc2,
            num_classes,
        })
    }

    /// Per-class log-probabilities `[b, num_classes]`.
    pub fn forward(&self, x: &Tensor<E>, training: bool, rng: &mut Rng) -> Result<Tensor<E>> {
        let psi = self.backbone.forward(x, training, rng)?;
        self.fc2.forward(&psi)?.log_softmax()
    }

    pub fn params(&self) -> NamedParams<E> {
        let mut p = self.backbone.params();
        p.push(("fc2.weight".into(), self.fc2.weight.clone()));
        p.push(("fc2.bias".into(), self.fc2.bias.clone()));
        p
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save_params(path, &self.params())
    }

    pub fn load(&self, path: &Path) -> Result<()> {
        checkpoint::load_params(path, &self.params())
    }
}

/// Cosine-basis embedding of tau: `phi(tau) = relu(W cos_feat(tau) + b)`
/// with `cos_feat_i(tau) = cos(pi * i * tau)` for `i = 0..TAU_BASIS`.
pub struct TauEmbedding<E: Element> {
    pub linear: LinearLayer<E>,
    pub n_basis: usize,
}

impl<E: Element> TauEmbedding<E> {
    pub fn new(rng: &mut Rng) -> Self {
        TauEmbedding {
            linear: LinearLayer::new(TAU_BASIS, FEATURE_DIM, rng),
            n_basis: TAU_BASIS,
        }
    }

    /// `[m]` flat taus -> `[m, FEATURE_DIM]` embeddings.
    pub fn forward(&self, taus_flat: &[E]) -> Result<Tensor<E>> {
        let m = taus_flat.len();
        let mut feat = vec![E::zero(); m * self.n_basis];
        for (j, &tau) in taus_flat.iter().enumerate() {
            let t = tau.as_f64();
            for i in 0..self.n_basis {
                feat[j * self.n_basis + i] = E::from_f64((std::f64::consts::PI * i as f64 * t).cos());
            }
        }
        let feat = Tensor::from_vec(&[m, self.n_basis], feat)?;
        self.linear.forward(&feat)?.relu()
    }
}

/// Tau-conditioned loss-distribution estimator: `Z_tau(x)` is the head
/// applied to `psi(x) * phi(tau)`.
pub struct IqnModel<E: Element> {
    pub backbone: Backbone<E>,
    pub tau_embedding: TauEmbedding<E>,
    pub head: LinearLayer<E>,
}

impl<E: Element> IqnModel<E> {
    pub fn new(input: InputShape, dropout_enabled: bool, rng: &mut Rng) -> Result<Self> {
        Ok(IqnModel {
            backbone: Backbone::new(input, dropout_enabled, rng)?,
            tau_embedding: TauEmbedding::new(rng),
            head: LinearLayer::new(FEATURE_DIM, 1, rng),
        })
    }

    /// Quantile values `[b, k]` for per-example taus `[b, k]` in `[0, 1]`.
    pub fn forward(&self, x: &Tensor<E>, taus: &Tensor<E>, training: bool, rng: &mut Rng) -> Result<Tensor<E>> {
        let (b, k) = match taus.shape() {
            [b, k] => (*b, *k),
            other => {
                return Err(Error::Dimension {
                    op: "iqn_forward",
                    msg: format!("expected [batch, k] taus, got {:?}", other),
                })
            }
        };
        if x.shape().first() != Some(&b) {
            return Err(Error::ShapeMismatch {
                op: "iqn_forward",
                lhs: x.shape().to_vec(),
                rhs: taus.shape().to_vec(),
            });
        }
        let taus_flat = taus.to_vec();
        for &t in &taus_flat {
            let t = t.as_f64();
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Parameter(format!("tau {} outside [0, 1]", t)));
            }
        }
        let psi = self.backbone.forward(x, training, rng)?;
        let phi = self.tau_embedding.forward(&taus_flat)?;
        let fused = psi.repeat_rows(k)?.elementwise_mul(&phi)?;
        self.head.forward(&fused)?.reshape(&[b, k])
    }

    pub fn params(&self) -> NamedParams<E> {
        let mut p = self.backbone.params();
        p.push(("tau_embedding.weight".into(), self.tau_embedding.linear.weight.clone()));
        p.push(("tau_embedding.bias".into(), self.tau_embedding.linear.bias.clone()));
        p.push(("head.weight".into(), self.head.weight.clone()));
        p.push(("head.bias".into(), self.head.bias.clone()));
        p
    }

    /// Parameters trained during loss regression. With a frozen backbone only
    /// the tau embedding and head are returned.
    pub fn trainable_params(&self, freeze_backbone: bool) -> NamedParams<E> {
        if freeze_backbone {
            self.params()
                .into_iter()
                .filter(|(n, _)| !n.starts_with("backbone."))
                .collect()
        } else {
            self.params()
        }
    }

    pub fn transfer_from(&mut self, classifier: &ClassifierModel<E>) -> Result<()> {
        self.backbone.copy_from(&classifier.backbone)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save_params(path, &self.params())
    }

    pub fn load(&self, path: &Path) -> Result<()> {
        checkpoint::load_params(path, &self.params())
    }
}

/// Baseline that regresses a single scalar loss estimate.
pub struct ScalarModel<E: Element> {
    pub backbone: Backbone<E>,
    pub head: LinearLayer<E>,
}

impl<E: Element> ScalarModel<E> {
    pub fn new(input: InputShape, dropout_enabled: bool, rng: &mut Rng) -> Result<Self> {
        Ok(ScalarModel {
            backbone: Backbone::new(input, dropout_enabled, rng)?,
            head: LinearLayer::new(FEATURE_DIM, 1, rng),
        })
    }

    /// Scalar loss estimates `[b, 1]`.
    pub fn forward(&self, x: &Tensor<E>, training: bool, rng: &mut Rng) -> Result<Tensor<E>> {
        let psi = self.backbone.forward(x, training, rng)?;
        self.head.forward(&psi)
    }

    pub fn params(&self) -> NamedParams<E> {
        let mut p = self.backbone.params();
        p.push(("head.weight".into(), self.head.weight.clone()));
        p.push(("head.bias".into(), self.head.bias.clone()));
        p
    }

    pub fn trainable_params(&self, freeze_backbone: bool) -> NamedParams<E> {
        if freeze_backbone {
            self.params()
                .into_iter()
                .filter(|(n, _)| !n.starts_with("backbone."))
                .collect()
        } else {
            self.params()
        }
    }

    pub fn transfer_from(&mut self, classifier: &ClassifierModel<E>) -> Result<()> {
        self.backbone.copy_from(&classifier.backbone)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save_params(path, &self.params())
    }

    pub fn load(&self, path: &Path) -> Result<()> {
        checkpoint::load_params(path, &self.params())
    }
}

/// Hyperparameter sidecar written next to each checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMeta {
    pub arch: String,
    pub input: InputShape,
    pub num_classes: usize,
    pub dropout_conv: f64,
    pub dropout_fc: f64,
    pub dropout_enabled: bool,
    pub n_basis: usize,
    pub feature_dim: usize,
    pub precision: String,
    pub params: Vec<(String, Vec<usize>)>,
}

impl ModelMeta {
    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("meta serializes");
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, format!("bad model meta: {}", e)))
    }
}

pub fn meta_for<E: Element>(arch: &str, input: InputShape, num_classes: usize, dropout_enabled: bool, params: &NamedParams<E>) -> ModelMeta {
    ModelMeta {
        arch: arch.to_string(),
        input,
        num_classes,
        dropout_conv: DROPOUT_CONV,
        dropout_fc: DROPOUT_FC,
        dropout_enabled,
        n_basis: TAU_BASIS,
        feature_dim: FEATURE_DIM,
        precision: E::NAME.to_string(),
        params: params.iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect(),
    }
}
