//! Residual MLP: `stem → blocks → head`.
//!
//! * stem: `h = relu(x·Wsᵀ + bs)`
//! * block: `h ← relu(W2·relu(W1·h + b1) + b2 + h)`
//! * head: `y = h·Whᵀ + bh` (linear)
//!
//! Because every block input is a ReLU output, a block whose weights and
//! biases are all zero passes its input through unchanged.
//!
//! Initialization: layers followed by a ReLU (stem, first dense of each
//! block) draw from U(−√(6/fan_in), √(6/fan_in)); the second dense of each
//! block and the head draw from U(−√(3/fan_in), √(3/fan_in)). Biases start
//! at zero. All draws come from one ChaCha8 stream in parameter order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const WIDTH: usize = 256;
pub const BLOCKS: usize = 3;
pub const OUTPUT: usize = 512;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("input has {got} values, network expects {expected}")]
    InputDim { got: usize, expected: usize },
    #[error("target has {got} values, network produces {expected}")]
    TargetDim { got: usize, expected: usize },
    #[error("invalid topology: {0}")]
    Topology(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub input: usize,
    pub width: usize,
    pub blocks: usize,
    pub output: usize,
}

impl Topology {
    pub fn standard(input: usize) -> Self {
        Topology {
            input,
            width: WIDTH,
            blocks: BLOCKS,
            output: OUTPUT,
        }
    }

    pub fn is_standard(&self) -> bool {
        self.width == WIDTH && self.blocks == BLOCKS && self.output == OUTPUT
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs × inputs`, row-major.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            w: vec![0.0; inputs * outputs],
            b: vec![0.0; outputs],
        }
    }

    fn uniform(inputs: usize, outputs: usize, gain: f64, rng: &mut ChaCha8Rng) -> Self {
        let limit = (gain / inputs as f64).sqrt();
        let mut d = Dense::zeros(inputs, outputs);
        for v in d.w.iter_mut() {
            *v = rng.random_range(-limit..limit);
        }
        d
    }

    /// `y = x·Wᵀ + b` for `n` rows of `x`.
    pub fn forward(&self, x: &[f64], n: usize, y: &mut [f64]) {
        debug_assert_eq!(x.len(), n * self.inputs);
        debug_assert_eq!(y.len(), n * self.outputs);
        for row in y.chunks_exact_mut(self.outputs) {
            row.copy_from_slice(&self.b);
        }
        gemm(
            n,
            self.inputs,
            self.outputs,
            x,
            (self.inputs as isize, 1),
            &self.w,
            (1, self.inputs as isize),
            y,
            1.0,
        );
    }

    /// Accumulates parameter gradients from `dy` and returns `dx` when asked.
    fn backward(&self, x: &[f64], dy: &[f64], n: usize, grad: &mut Dense, dx: Option<&mut [f64]>) {
        // dW += dyᵀ·x
        gemm(
            self.outputs,
            n,
            self.inputs,
            dy,
            (1, self.outputs as isize),
            x,
            (self.inputs as isize, 1),
            &mut grad.w,
            1.0,
        );
        for row in dy.chunks_exact(self.outputs) {
            for (g, d) in grad.b.iter_mut().zip(row) {
                *g += d;
            }
        }
        if let Some(dx) = dx {
            // dx = dy·W
            gemm(
                n,
                self.outputs,
                self.inputs,
                dy,
                (self.outputs as isize, 1),
                &self.w,
                (self.inputs as isize, 1),
                dx,
                0.0,
            );
        }
    }
}

/// `c = beta·c + a·b` with `a` m×k and `b` k×n given by (row, column) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: (isize, isize), b: &[f64], sb: (isize, isize), c: &mut [f64], beta: f64) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    // SAFETY: the strides describe matrices lying inside `a`, `b` and `c`,
    // which the callers size as m×k, k×n and m×n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0,
            sa.1,
            b.as_ptr(),
            sb.0,
            sb.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub first: Dense,
    pub second: Dense,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualNet {
    pub topology: Topology,
    pub stem: Dense,
    pub blocks: Vec<Block>,
    pub head: Dense,
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Activations kept for the backward pass.
pub struct Cache {
    n: usize,
    /// Block inputs; `hs[0]` is the stem output, the last one feeds the head.
    hs: Vec<Vec<f64>>,
    /// relu(W1·h + b1) per block.
    a1: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl ResidualNet {
    /// Standard 256-wide, 3-block, 512-output network.
    pub fn init(input: usize, seed: u64) -> Result<Self, NetError> {
        Self::init_with(Topology::standard(input), seed)
    }

    pub fn init_with(t: Topology, seed: u64) -> Result<Self, NetError> {
        if t.input == 0 || t.width == 0 || t.output == 0 {
            return Err(NetError::Topology(format!("{t:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stem = Dense::uniform(t.input, t.width, 6.0, &mut rng);
        let blocks = (0..t.blocks)
            .map(|_| Block {
                first: Dense::uniform(t.width, t.width, 6.0, &mut rng),
                second: Dense::uniform(t.width, t.width, 3.0, &mut rng),
            })
            .collect();
        let head = Dense::uniform(t.width, t.output, 3.0, &mut rng);
        Ok(ResidualNet {
            topology: t,
            stem,
            blocks,
            head,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let z = |d: &Dense| Dense::zeros(d.inputs, d.outputs);
        ResidualNet {
            topology: self.topology,
            stem: z(&self.stem),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    first: z(&b.first),
                    second: z(&b.second),
                })
                .collect(),
            head: z(&self.head),
        }
    }

    pub fn layers(&self) -> Vec<&Dense> {
        let mut v = vec![&self.stem];
        for b in &self.blocks {
            v.push(&b.first);
            v.push(&b.second);
        }
        v.push(&self.head);
        v
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Dense> {
        let mut v = vec![&mut self.stem];
        for b in &mut self.blocks {
            v.push(&mut b.first);
            v.push(&mut b.second);
        }
        v.push(&mut self.head);
        v
    }

    /// Parameter slices in a fixed order: per layer, weights then biases.
    pub fn params(&self) -> Vec<&[f64]> {
        self.layers()
            .into_iter()
            .flat_map(|d| [d.w.as_slice(), d.b.as_slice()])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers_mut()
            .into_iter()
            .flat_map(|d| [d.w.as_mut_slice(), d.b.as_mut_slice()])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    pub fn forward_cached(&self, x: &[f64], n: usize) -> Result<Cache, NetError> {
        let t = &self.topology;
        if x.len() != n * t.input {
            return Err(NetError::InputDim {
                got: if n == 0 { x.len() } else { x.len() / n.max(1) },
                expected: t.input,
            });
        }
        let mut h = vec![0.0; n * t.width];
        self.stem.forward(x, n, &mut h);
        relu_in_place(&mut h);
        let mut hs = Vec::with_capacity(t.blocks + 1);
        let mut a1s = Vec::with_capacity(t.blocks);
        for b in &self.blocks {
            let mut a1 = vec![0.0; n * t.width];
            b.first.forward(&h, n, &mut a1);
            relu_in_place(&mut a1);
            let mut s = vec![0.0; n * t.width];
            b.second.forward(&a1, n, &mut s);
            for (sv, hv) in s.iter_mut().zip(&h) {
                *sv += hv;
            }
            relu_in_place(&mut s);
            hs.push(h);
            a1s.push(a1);
            h = s;
        }
        let mut y = vec![0.0; n * t.output];
        self.head.forward(&h, n, &mut y);
        hs.push(h);
        Ok(Cache {
            n,
            hs,
            a1: a1s,
            output: y,
        })
    }

    /// Outputs for `n` stacked input rows.
    pub fn forward_batch(&self, x: &[f64], n: usize) -> Result<Vec<f64>, NetError> {
        Ok(self.forward_cached(x, n)?.output)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NetError> {
        self.forward_batch(x, 1)
    }

    /// Gradients of `loss = Σ (y − target)² ⊙ scale / (n · output)` given the
    /// cached forward pass. `scale` (per output dim) is 1 for the plain
    /// mean squared error.
    pub fn backward(&self, x: &[f64], cache: &Cache, dy: &[f64]) -> ResidualNet {
        let n = cache.n;
        let w = self.topology.width;
        let mut g = self.zeros_like();
        let last = cache.hs.last().expect("head input cached");
        let mut dh = vec![0.0; n * w];
        self.head.backward(last, dy, n, &mut g.head, Some(&mut dh));
        for (k, b) in self.blocks.iter().enumerate().rev() {
            let out = &cache.hs[k + 1];
            let hin = &cache.hs[k];
            let a1 = &cache.a1[k];
            // through the post-add ReLU
            let mut ds = dh;
            for (d, o) in ds.iter_mut().zip(out) {
                if *o <= 0.0 {
                    *d = 0.0;
                }
            }
            let gb = &mut g.blocks[k];
            let mut da1 = vec![0.0; n * w];
            b.second.backward(a1, &ds, n, &mut gb.second, Some(&mut da1));
            for (d, a) in da1.iter_mut().zip(a1) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
            let mut dhin = vec![0.0; n * w];
            b.first.backward(hin, &da1, n, &mut gb.first, Some(&mut dhin));
            for (d, s) in dhin.iter_mut().zip(&ds) {
                *d += s;
            }
            dh = dhin;
        }
        let h0 = &cache.hs[0];
        for (d, h) in dh.iter_mut().zip(h0) {
            if *h <= 0.0 {
                *d = 0.0;
            }
        }
        self.stem.backward(x, &dh, n, &mut g.stem, None);
        g
    }
}

/// Mean-over-batch, mean-over-outputs squared error and its exact gradient.
pub fn grad(net: &ResidualNet, x: &[f64], targets: &[f64], n: usize) -> Result<(f64, ResidualNet), NetError> {
    let out = net.topology.output;
    if targets.len() != n * out {
        return Err(NetError::TargetDim {
            got: if n == 0 { targets.len() } else { targets.len() / n },
            expected: out,
        });
    }
    let cache = net.forward_cached(x, n)?;
    let denom = (n * out) as f64;
    let mut loss = 0.0;
    let dy: Vec<f64> = cache
        .output
        .iter()
        .zip(targets)
        .map(|(y, t)| {
            let r = y - t;
            loss += r * r;
            2.0 * r / denom
        })
        .collect();
    Ok((loss / denom, net.backward(x, &cache, &dy)))
}

pub fn mse_loss(net: &ResidualNet, x: &[f64], targets: &[f64], n: usize) -> Result<f64, NetError> {
    let y = net.forward_batch(x, n)?;
    Ok(y.iter().zip(targets).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (y.len().max(1)) as f64)
}
