//! Single-precision inference plan for latency-bound, one-sample-at-a-time use.
//!
//! Batch normalisation becomes a per-feature affine map, dropout disappears,
//! convolutions run as im2col + one GEMM, and dense layers skip zero inputs
//! (common after ReLU).

use crate::error::{NeuralError, Result};
use crate::gemm::sgemm_acc;
use crate::layer::LayerKind;
use crate::layers::{sigmoid, softmax_in_place, Activation, BATCHNORM_EPS, LEAKY_RELU_SLOPE};
use crate::model::Sequential;

#[derive(Debug, Clone)]
enum Stage {
    Conv {
        cin: usize,
        cout: usize,
        k: usize,
        len: usize,
        /// `[cout, cin * k]`, matching the im2col row order.
        weight: Vec<f32>,
        bias: Vec<f32>,
    },
    Dense {
        inputs: usize,
        units: usize,
        /// Transposed: `[inputs, units]`.
        weight_t: Vec<f32>,
        bias: Vec<f32>,
    },
    Pool {
        channels: usize,
        len: usize,
        size: usize,
    },
    Affine {
        /// Values per feature (1 for `[F]` inputs, `L` for `[C, L]`).
        stride: usize,
        scale: Vec<f32>,
        shift: Vec<f32>,
    },
    Act(Activation),
}

#[derive(Debug, Clone)]
pub struct CompiledModel {
    input_len: usize,
    stages: Vec<Stage>,
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

impl CompiledModel {
    pub fn compile(model: &Sequential) -> Result<Self> {
        let mut shape = model.input_shape().to_vec();
        let mut stages = Vec::new();
        for layer in model.layers() {
            let hyper = layer.hyper();
            let params = layer.params();
            match layer.kind() {
                LayerKind::Conv1d => {
                    let (cin, cout, k) = (hyper[0] as usize, hyper[1] as usize, hyper[2] as usize);
                    stages.push(Stage::Conv {
                        cin,
                        cout,
                        k,
                        len: shape[1],
                        weight: to_f32(&params[0].value),
                        bias: to_f32(&params[1].value),
                    });
                }
                LayerKind::Dense => {
                    let (inputs, units) = (hyper[0] as usize, hyper[1] as usize);
                    let w = &params[0].value;
                    let mut weight_t = vec![0.0f32; inputs * units];
                    for u in 0..units {
                        for i in 0..inputs {
                            weight_t[i * units + u] = w[u * inputs + i] as f32;
                        }
                    }
                    stages.push(Stage::Dense {
                        inputs,
                        units,
                        weight_t,
                        bias: to_f32(&params[1].value),
                    });
                }
                LayerKind::MaxPool1d => stages.push(Stage::Pool {
                    channels: shape[0],
                    len: shape[1],
                    size: hyper[0] as usize,
                }),
                LayerKind::BatchNorm => {
                    let (gamma, beta, mean, var) = (&params[0].value, &params[1].value, &params[2].value, &params[3].value);
                    let scale: Vec<f64> = gamma
                        .iter()
                        .zip(var)
                        .map(|(g, v)| g / (v + BATCHNORM_EPS).sqrt())
                        .collect();
                    let shift: Vec<f64> = beta.iter().zip(mean).zip(&scale).map(|((b, m), s)| b - m * s).collect();
                    stages.push(Stage::Affine {
                        stride: if shape.len() == 2 { shape[1] } else { 1 },
                        scale: to_f32(&scale),
                        shift: to_f32(&shift),
                    });
                }
                LayerKind::Dropout => {}
                LayerKind::Activation => {
                    let act = Activation::from_code(hyper[0] as u8)
                        .ok_or_else(|| NeuralError::InvalidLayer("unknown activation".into()))?;
                    if act != Activation::Linear {
                        stages.push(Stage::Act(act));
                    }
                }
            }
            shape = layer.output_shape(&shape)?;
        }
        Ok(Self {
            input_len: model.input_shape().iter().product(),
            stages,
        })
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    /// Runs one sample through the plan.
    pub fn run(&self, sample: &[f64]) -> Result<Vec<f64>> {
        if sample.len() != self.input_len {
            return Err(NeuralError::ShapeMismatch {
                expected: vec![self.input_len],
                actual: vec![sample.len()],
            });
        }
        let mut x: Vec<f32> = to_f32(sample);
        let mut scratch: Vec<f32> = Vec::new();
        for stage in &self.stages {
            match stage {
                Stage::Conv { cin, cout, k, len, weight, bias } => {
                    let (cin, cout, k, len) = (*cin, *cout, *k, *len);
                    let left = (k - 1) / 2;
                    // im2col: row (c*k + j) holds x[c, t + j - left] for t in 0..len.
                    scratch.clear();
                    scratch.resize(cin * k * len, 0.0);
                    for c in 0..cin {
                        let src = &x[c * len..(c + 1) * len];
                        for j in 0..k {
                            let row = &mut scratch[(c * k + j) * len..(c * k + j + 1) * len];
                            let shift = j as isize - left as isize;
                            let (dst_lo, src_lo, n) = if shift >= 0 {
                                (0, shift as usize, len.saturating_sub(shift as usize))
                            } else {
                                let s = (-shift) as usize;
                                (s.min(len), 0, len.saturating_sub(s))
                            };
                            row[dst_lo..dst_lo + n].copy_from_slice(&src[src_lo..src_lo + n]);
                        }
                    }
                    let mut y = vec![0.0f32; cout * len];
                    for (row, b) in y.chunks_mut(len).zip(bias) {
                        row.fill(*b);
                    }
                    sgemm_acc(cout, cin * k, len, weight, &scratch, &mut y);
                    x = y;
                }
                Stage::Dense { inputs, units, weight_t, bias } => {
                    let mut y = bias.clone();
                    for (i, &xi) in x.iter().enumerate().take(*inputs) {
                        if xi != 0.0 {
                            let w = &weight_t[i * units..(i + 1) * units];
                            for (o, wv) in y.iter_mut().zip(w) {
                                *o += xi * wv;
                            }
                        }
                    }
                    x = y;
                }
                Stage::Pool { channels, len, size } => {
                    let out_len = len / size;
                    let mut y = Vec::with_capacity(channels * out_len);
                    for c in 0..*channels {
                        let row = &x[c * len..c * len + out_len * size];
                        y.extend(row.chunks_exact(*size).map(|w| w.iter().copied().fold(f32::NEG_INFINITY, f32::max)));
                    }
                    x = y;
                }
                Stage::Affine { stride, scale, shift } => {
                    for (f, chunk) in x.chunks_mut(*stride).enumerate() {
                        let f = f % scale.len();
                        chunk.iter_mut().for_each(|v| *v = *v * scale[f] + shift[f]);
                    }
                }
                Stage::Act(act) => match act {
                    Activation::Relu => x.iter_mut().for_each(|v| *v = v.max(0.0)),
                    Activation::LeakyRelu => x.iter_mut().for_each(|v| {
                        if *v < 0.0 {
                            *v *= LEAKY_RELU_SLOPE as f32
                        }
                    }),
                    Activation::Sigmoid => x.iter_mut().for_each(|v| *v = sigmoid(*v as f64) as f32),
                    Activation::Softmax => {
                        let mut row: Vec<f64> = x.iter().map(|&v| v as f64).collect();
                        softmax_in_place(&mut row);
                        x = to_f32(&row);
                    }
                    Activation::Linear => {}
                },
            }
        }
        Ok(x.into_iter().map(f64::from).collect())
    }
}
