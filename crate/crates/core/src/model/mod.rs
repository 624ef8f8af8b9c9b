//! Sequence-to-sequence recurrent surrogate.
//!
//! A window of `W` flattened velocity snapshots runs through an encoder LSTM.
//! Its last hidden state is repeated `H` times and fed to a decoder LSTM whose
//! every hidden state goes through `Dense(head, ReLU)` and `Dense(F, linear)`.
//! Backpropagation through time is written out by hand in [`backward`].
//!
//! All batched tensors are row-major `[batch, time, features]`.

pub mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{matmul, matmul_nt, matmul_tn, sigmoid_scalar, Real, Tensor};

/// Gate blocks are laid out as input, forget, cell candidate, output.
pub const GATES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    /// Flattened field size, `cells * 3`.
    pub flat_dim: usize,
    pub window: usize,
    pub horizon: usize,
    pub encoder_units: usize,
    pub decoder_units: usize,
    pub head_units: usize,
}

impl ModelDims {
    /// Default layer sizes for a field of `cells` cells.
    pub fn for_cells(cells: usize) -> Self {
        ModelDims {
            flat_dim: cells * 3,
            window: 3,
            horizon: 1,
            encoder_units: 200,
            decoder_units: 200,
            head_units: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.flat_dim,
            self.window,
            self.horizon,
            self.encoder_units,
            self.decoder_units,
            self.head_units,
        ];
        if all.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!("zero extent in {self:?}")));
        }
        if self.flat_dim % 3 != 0 {
            return Err(Error::InvalidArgument(format!(
                "flat dimension {} is not cells * 3",
                self.flat_dim
            )));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.flat_dim / 3
    }

    /// Parameter count as a pure function of the dims.
    pub fn param_count(&self) -> usize {
        let lstm = |input: usize, units: usize| GATES * (input * units + units * units + units);
        let dense = |input: usize, out: usize| input * out + out;
        lstm(self.flat_dim, self.encoder_units)
            + lstm(self.encoder_units, self.decoder_units)
            + dense(self.decoder_units, self.head_units)
            + dense(self.head_units, self.flat_dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<T> {
    /// `[input, 4*units]`
    pub kernel: Tensor<T>,
    /// `[units, 4*units]`
    pub recurrent: Tensor<T>,
    /// `[4*units]`
    pub bias: Tensor<T>,
}

impl<T: Real> LstmParams<T> {
    fn zeros(input: usize, units: usize) -> Self {
        LstmParams {
            kernel: Tensor::zeros(&[input, GATES * units]),
            recurrent: Tensor::zeros(&[units, GATES * units]),
            bias: Tensor::zeros(&[GATES * units]),
        }
    }

    pub fn units(&self) -> usize {
        self.recurrent.shape()[0]
    }

    pub fn input_dim(&self) -> usize {
        self.kernel.shape()[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams<T> {
    /// `[input, output]`
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> DenseParams<T> {
    fn zeros(input: usize, out: usize) -> Self {
        DenseParams {
            kernel: Tensor::zeros(&[input, out]),
            bias: Tensor::zeros(&[out]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub dims: ModelDims,
    pub encoder: LstmParams<T>,
    pub decoder: LstmParams<T>,
    pub head: DenseParams<T>,
    pub output: DenseParams<T>,
}

/// Gradients share the parameter layout tensor for tensor.
pub type Gradients<T> = ModelParams<T>;

pub const TENSOR_NAMES: [&str; 10] = [
    "encoder.kernel",
    "encoder.recurrent_kernel",
    "encoder.bias",
    "decoder.kernel",
    "decoder.recurrent_kernel",
    "decoder.bias",
    "head.kernel",
    "head.bias",
    "output.kernel",
    "output.bias",
];

impl<T: Real> ModelParams<T> {
    pub fn zeros(dims: ModelDims) -> Self {
        ModelParams {
            dims,
            encoder: LstmParams::zeros(dims.flat_dim, dims.encoder_units),
            decoder: LstmParams::zeros(dims.encoder_units, dims.decoder_units),
            head: DenseParams::zeros(dims.decoder_units, dims.head_units),
            output: DenseParams::zeros(dims.head_units, dims.flat_dim),
        }
    }

    /// Tensors in the canonical order of [`TENSOR_NAMES`].
    pub fn tensors(&self) -> [&Tensor<T>; 10] {
        [
            &self.encoder.kernel,
            &self.encoder.recurrent,
            &self.encoder.bias,
            &self.decoder.kernel,
            &self.decoder.recurrent,
            &self.decoder.bias,
            &self.head.kernel,
            &self.head.bias,
            &self.output.kernel,
            &self.output.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 10] {
        [
            &mut self.encoder.kernel,
            &mut self.encoder.recurrent,
            &mut self.encoder.bias,
            &mut self.decoder.kernel,
            &mut self.decoder.recurrent,
            &mut self.decoder.bias,
            &mut self.head.kernel,
            &mut self.head.bias,
            &mut self.output.kernel,
            &mut self.output.bias,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Concatenates every tensor in canonical order.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in self.tensors() {
            out.extend_from_slice(t.data());
        }
        out
    }

    pub fn load_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Dimension {
                op: "load_flat",
                left: vec![self.num_params()],
                right: vec![flat.len()],
            });
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.dims == other.dims
            && self
                .tensors()
                .iter()
                .zip(other.tensors())
                .all(|(a, b)| a.bitwise_eq(b))
    }

    fn check_dims(&self) -> Result<()> {
        for ((name, t), expect) in TENSOR_NAMES.iter().zip(self.tensors()).zip(expected_shapes(&self.dims)) {
            if t.shape() != expect {
                return Err(Error::InvalidArgument(format!(
                    "{name} has shape {:?}, dims imply {:?}",
                    t.shape(),
                    expect
                )));
            }
        }
        Ok(())
    }
}

/// Tensor shapes implied by `dims`, in canonical order.
pub fn expected_shapes(d: &ModelDims) -> [Vec<usize>; 10] {
    let (e, dc) = (d.encoder_units, d.decoder_units);
    [
        vec![d.flat_dim, GATES * e],
        vec![e, GATES * e],
        vec![GATES * e],
        vec![e, GATES * dc],
        vec![dc, GATES * dc],
        vec![GATES * dc],
        vec![dc, d.head_units],
        vec![d.head_units],
        vec![d.head_units, d.flat_dim],
        vec![d.flat_dim],
    ]
}

/// Glorot-uniform kernels, zero biases, forget-gate biases set to one.
pub fn init_params<T: Real>(dims: ModelDims, seed: u64) -> Result<ModelParams<T>> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::<T>::zeros(dims);
    for (name, t) in TENSOR_NAMES.iter().zip(params.tensors_mut()) {
        if name.ends_with("bias") {
            continue;
        }
        let (fan_in, fan_out) = (t.shape()[0], t.shape()[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for x in t.data_mut() {
            *x = T::of(rng.gen_range(-limit..limit));
        }
    }
    for lstm in [&mut params.encoder, &mut params.decoder] {
        let u = lstm.units();
        for b in &mut lstm.bias.data_mut()[u..2 * u] {
            *b = T::one();
        }
    }
    Ok(params)
}

/// Activations of one LSTM step over a batch; every tensor is `[batch, ·]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCache<T> {
    pub x: Tensor<T>,
    pub h_prev: Tensor<T>,
    pub c_prev: Tensor<T>,
    pub input_gate: Tensor<T>,
    pub forget_gate: Tensor<T>,
    pub candidate: Tensor<T>,
    pub output_gate: Tensor<T>,
    pub c: Tensor<T>,
    pub tanh_c: Tensor<T>,
    pub h: Tensor<T>,
}

fn as_batch<T: Real>(t: &Tensor<T>) -> Result<Tensor<T>> {
    match t.rank() {
        1 => t.clone().reshape(&[1, t.len()]),
        2 => Ok(t.clone()),
        _ => Err(Error::Dimension {
            op: "lstm_step",
            left: t.shape().to_vec(),
            right: vec![],
        }),
    }
}

/// One LSTM step. Accepts single vectors (`[n]`) or batches (`[batch, n]`);
/// the outputs have the rank of `x`.
pub fn lstm_step<T: Real>(
    x: &Tensor<T>,
    h: &Tensor<T>,
    c: &Tensor<T>,
    p: &LstmParams<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let single = x.rank() == 1;
    let cache = lstm_step_cached(as_batch(x)?, as_batch(h)?, as_batch(c)?, p)?;
    if single {
        let u = p.units();
        Ok((cache.h.reshape(&[u])?, cache.c.reshape(&[u])?))
    } else {
        Ok((cache.h, cache.c))
    }
}

fn lstm_step_cached<T: Real>(
    x: Tensor<T>,
    h_prev: Tensor<T>,
    c_prev: Tensor<T>,
    p: &LstmParams<T>,
) -> Result<StepCache<T>> {
    let u = p.units();
    let (batch, _) = x.dims2("lstm_step")?;
    if h_prev.shape() != [batch, u] || c_prev.shape() != [batch, u] {
        return Err(Error::Dimension {
            op: "lstm_step",
            left: h_prev.shape().to_vec(),
            right: vec![batch, u],
        });
    }
    let mut z = matmul(&x, &p.kernel)?;
    z.add_assign(&matmul(&h_prev, &p.recurrent)?)?;
    let z = z.add_row_bias(&p.bias)?;

    let n = batch * u;
    let mut i_g = Vec::with_capacity(n);
    let mut f_g = Vec::with_capacity(n);
    let mut g_g = Vec::with_capacity(n);
    let mut o_g = Vec::with_capacity(n);
    let mut c_new = Vec::with_capacity(n);
    let mut tanh_c = Vec::with_capacity(n);
    let mut h_new = Vec::with_capacity(n);
    for (zr, cr) in z.data().chunks_exact(GATES * u).zip(c_prev.data().chunks_exact(u)) {
        for j in 0..u {
            let i = sigmoid_scalar(zr[j]);
            let f = sigmoid_scalar(zr[u + j]);
            let g = zr[2 * u + j].tanh();
            let o = sigmoid_scalar(zr[3 * u + j]);
            let cn = f * cr[j] + i * g;
            let tc = cn.tanh();
            i_g.push(i);
            f_g.push(f);
            g_g.push(g);
            o_g.push(o);
            c_new.push(cn);
            tanh_c.push(tc);
            h_new.push(o * tc);
        }
    }
    let shape = vec![batch, u];
    let t = |d| Tensor::new(shape.clone(), d);
    Ok(StepCache {
        x,
        h_prev,
        c_prev,
        input_gate: t(i_g)?,
        forget_gate: t(f_g)?,
        candidate: t(g_g)?,
        output_gate: t(o_g)?,
        c: t(c_new)?,
        tanh_c: t(tanh_c)?,
        h: t(h_new)?,
    })
}

/// Everything the backward pass needs from one batched forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache<T> {
    pub batch: usize,
    pub encoder: Vec<StepCache<T>>,
    pub decoder: Vec<StepCache<T>>,
    /// Post-ReLU head activations per decoder step, `[batch, head]`.
    pub head: Vec<Tensor<T>>,
}

/// Single-window forward pass: `[W, F]` in, `[H, F]` out.
pub fn forward<T: Real>(params: &ModelParams<T>, window: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>)> {
    let d = params.dims;
    if window.shape() != [d.window, d.flat_dim] {
        return Err(Error::Dimension {
            op: "forward",
            left: window.shape().to_vec(),
            right: vec![d.window, d.flat_dim],
        });
    }
    let batched = window.clone().reshape(&[1, d.window, d.flat_dim])?;
    let (pred, cache) = forward_batch(params, &batched)?;
    Ok((pred.reshape(&[d.horizon, d.flat_dim])?, cache))
}

/// Time slice `t` of a `[batch, steps, n]` tensor, as `[batch, n]`.
fn time_slice<T: Real>(x: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
    let (batch, steps, n) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut data = Vec::with_capacity(batch * n);
    for b in 0..batch {
        let start = (b * steps + t) * n;
        data.extend_from_slice(&x.data()[start..start + n]);
    }
    Tensor::new(vec![batch, n], data)
}

/// Batched forward pass: `[B, W, F]` in, `[B, H, F]` out.
pub fn forward_batch<T: Real>(
    params: &ModelParams<T>,
    windows: &Tensor<T>,
) -> Result<(Tensor<T>, ForwardCache<T>)> {
    params.check_dims()?;
    let d = params.dims;
    let batch = match windows.shape() {
        &[b, w, f] if w == d.window && f == d.flat_dim => b,
        s => {
            return Err(Error::Dimension {
                op: "forward",
                left: s.to_vec(),
                right: vec![0, d.window, d.flat_dim],
            })
        }
    };

    let mut h = Tensor::zeros(&[batch, d.encoder_units]);
    let mut c = Tensor::zeros(&[batch, d.encoder_units]);
    let mut encoder = Vec::with_capacity(d.window);
    for t in 0..d.window {
        let step = lstm_step_cached(time_slice(windows, t)?, h, c, &params.encoder)?;
        h = step.h.clone();
        c = step.c.clone();
        encoder.push(step);
    }
    let context = h;

    let mut h = Tensor::zeros(&[batch, d.decoder_units]);
    let mut c = Tensor::zeros(&[batch, d.decoder_units]);
    let mut decoder = Vec::with_capacity(d.horizon);
    let mut head = Vec::with_capacity(d.horizon);
    let mut pred = vec![T::zero(); batch * d.horizon * d.flat_dim];
    for t in 0..d.horizon {
        let step = lstm_step_cached(context.clone(), h, c, &params.decoder)?;
        h = step.h.clone();
        c = step.c.clone();
        let a = crate::tensor::relu(&matmul(&step.h, &params.head.kernel)?.add_row_bias(&params.head.bias)?);
        let y = matmul(&a, &params.output.kernel)?.add_row_bias(&params.output.bias)?;
        for (b, row) in y.data().chunks_exact(d.flat_dim).enumerate() {
            let start = (b * d.horizon + t) * d.flat_dim;
            pred[start..start + d.flat_dim].copy_from_slice(row);
        }
        decoder.push(step);
        head.push(a);
    }
    let pred = Tensor::new(vec![batch, d.horizon, d.flat_dim], pred)?;
    Ok((
        pred,
        ForwardCache {
            batch,
            encoder,
            decoder,
            head,
        },
    ))
}

/// Backprop through one LSTM step. Accumulates weight gradients into `grad`
/// and returns the gradients w.r.t. `x`, `h_prev` and `c_prev`.
fn lstm_step_backward<T: Real>(
    step: &StepCache<T>,
    p: &LstmParams<T>,
    dh: &Tensor<T>,
    dc_next: &Tensor<T>,
    grad: &mut LstmParams<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let u = p.units();
    let batch = step.h.shape()[0];
    let one = T::one();
    let mut dz = vec![T::zero(); batch * GATES * u];
    let mut dc_prev = vec![T::zero(); batch * u];
    for b in 0..batch {
        for j in 0..u {
            let k = b * u + j;
            let i = step.input_gate.data()[k];
            let f = step.forget_gate.data()[k];
            let g = step.candidate.data()[k];
            let o = step.output_gate.data()[k];
            let tc = step.tanh_c.data()[k];
            let dh_k = dh.data()[k];
            let d_o = dh_k * tc;
            let dc = dc_next.data()[k] + dh_k * o * (one - tc * tc);
            let row = &mut dz[b * GATES * u..(b + 1) * GATES * u];
            row[j] = dc * g * i * (one - i);
            row[u + j] = dc * step.c_prev.data()[k] * f * (one - f);
            row[2 * u + j] = dc * i * (one - g * g);
            row[3 * u + j] = d_o * o * (one - o);
            dc_prev[k] = dc * f;
        }
    }
    let dz = Tensor::new(vec![batch, GATES * u], dz)?;
    grad.kernel.add_assign(&matmul_tn(&step.x, &dz)?)?;
    grad.recurrent.add_assign(&matmul_tn(&step.h_prev, &dz)?)?;
    grad.bias.add_assign(&dz.sum_rows()?)?;
    let dx = matmul_nt(&dz, &p.kernel)?;
    let dh_prev = matmul_nt(&dz, &p.recurrent)?;
    Ok((dx, dh_prev, Tensor::new(vec![batch, u], dc_prev)?))
}

/// Gradients of `<d_pred, forward(params)>` with respect to every parameter.
pub fn backward<T: Real>(
    params: &ModelParams<T>,
    cache: &ForwardCache<T>,
    d_pred: &Tensor<T>,
) -> Result<Gradients<T>> {
    let d = params.dims;
    let batch = cache.batch;
    // d_pred may come from the single-window path as [H, F].
    let d_pred = if d_pred.rank() == 2 && batch == 1 {
        d_pred.clone().reshape(&[1, d.horizon, d.flat_dim])?
    } else {
        d_pred.clone()
    };
    if d_pred.shape() != [batch, d.horizon, d.flat_dim] {
        return Err(Error::Dimension {
            op: "backward",
            left: d_pred.shape().to_vec(),
            right: vec![batch, d.horizon, d.flat_dim],
        });
    }
    if cache.encoder.len() != d.window
        || cache.decoder.len() != d.horizon
        || cache.encoder[0].x.shape() != [batch, d.flat_dim]
        || cache.decoder[0].h.shape() != [batch, d.decoder_units]
    {
        return Err(Error::InvalidArgument(
            "forward cache does not match the parameter dims".into(),
        ));
    }

    let mut grads = ModelParams::<T>::zeros(d);
    let mut dh_dec = Vec::with_capacity(d.horizon);
    for t in 0..d.horizon {
        let dy = time_slice(&d_pred, t)?;
        let a = &cache.head[t];
        grads.output.kernel.add_assign(&matmul_tn(a, &dy)?)?;
        grads.output.bias.add_assign(&dy.sum_rows()?)?;
        let da = matmul_nt(&dy, &params.output.kernel)?;
        let dpre = da.zip_map(a, "relu_backward", |g, act| if act > T::zero() { g } else { T::zero() })?;
        grads.head.kernel.add_assign(&matmul_tn(&cache.decoder[t].h, &dpre)?)?;
        grads.head.bias.add_assign(&dpre.sum_rows()?)?;
        dh_dec.push(matmul_nt(&dpre, &params.head.kernel)?);
    }

    // Every decoder step reads the same context vector, so its gradient is
    // the sum over the H repeats.
    let mut d_context = Tensor::zeros(&[batch, d.encoder_units]);
    let mut dh_next = Tensor::zeros(&[batch, d.decoder_units]);
    let mut dc_next = Tensor::zeros(&[batch, d.decoder_units]);
    for t in (0..d.horizon).rev() {
        let dh = dh_dec[t].add(&dh_next)?;
        let (dx, dh_prev, dc_prev) =
            lstm_step_backward(&cache.decoder[t], &params.decoder, &dh, &dc_next, &mut grads.decoder)?;
        d_context.add_assign(&dx)?;
        dh_next = dh_prev;
        dc_next = dc_prev;
    }

    let mut dh = d_context;
    let mut dc = Tensor::zeros(&[batch, d.encoder_units]);
    for t in (0..d.window).rev() {
        let (_, dh_prev, dc_prev) =
            lstm_step_backward(&cache.encoder[t], &params.encoder, &dh, &dc, &mut grads.encoder)?;
        dh = dh_prev;
        dc = dc_prev;
    }
    Ok(grads)
}

/// Gradient w.r.t. the encoder's final hidden state; exposed for tests of
/// the repeat-vector fan-in.
pub fn context_gradient<T: Real>(
    params: &ModelParams<T>,
    cache: &ForwardCache<T>,
    d_pred: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
    let d = params.dims;
    let batch = cache.batch;
    let mut scratch = ModelParams::<T>::zeros(d);
    let mut dh_dec = Vec::new();
    for t in 0..d.horizon {
        let dy = time_slice(d_pred, t)?;
        let a = &cache.head[t];
        let da = matmul_nt(&dy, &params.output.kernel)?;
        let dpre = da.zip_map(a, "relu_backward", |g, act| if act > T::zero() { g } else { T::zero() })?;
        dh_dec.push(matmul_nt(&dpre, &params.head.kernel)?);
    }
    let mut per_step = vec![Tensor::zeros(&[batch, d.encoder_units]); d.horizon];
    let mut d_context = Tensor::zeros(&[batch, d.encoder_units]);
    let mut dh_next = Tensor::zeros(&[batch, d.decoder_units]);
    let mut dc_next = Tensor::zeros(&[batch, d.decoder_units]);
    for t in (0..d.horizon).rev() {
        let dh = dh_dec[t].add(&dh_next)?;
        let (dx, dh_prev, dc_prev) =
            lstm_step_backward(&cache.decoder[t], &params.decoder, &dh, &dc_next, &mut scratch.decoder)?;
        d_context.add_assign(&dx)?;
        per_step[t] = dx;
        dh_next = dh_prev;
        dc_next = dc_prev;
    }
    Ok((d_context, per_step))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::sigmoid_scalar;

    fn tiny() -> ModelDims {
        ModelDims {
            flat_dim: 6,
            window: 3,
            horizon: 1,
            encoder_units: 4,
            decoder_units: 4,
            head_units: 3,
        }
    }

    fn rand_tensor(shape: &[usize], seed: u64, scale: f64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = init_params::<f32>(tiny(), 7).unwrap();
        let b = init_params::<f32>(tiny(), 7).unwrap();
        assert!(a.bitwise_eq(&b));
        assert_eq!(a.encoder.kernel.shape(), &[6, 16]);
        assert_eq!(&a.encoder.bias.data()[4..8], &[1.0; 4]);
        assert_eq!(&a.decoder.bias.data()[4..8], &[1.0; 4]);
        assert!(a.encoder.bias.data()[..4].iter().all(|&x| x == 0.0));
        assert!(a.head.bias.data().iter().all(|&x| x == 0.0));
        let limit = (6.0f32 / (6.0 + 16.0)).sqrt();
        assert!(a.encoder.kernel.data().iter().all(|x| x.abs() <= limit));
        assert!(!a.bitwise_eq(&init_params::<f32>(tiny(), 8).unwrap()));
    }

    #[test]
    fn param_count_formula() {
        let d = tiny();
        let p = init_params::<f64>(d, 0).unwrap();
        assert_eq!(p.num_params(), d.param_count());
        let lstm = |i: usize, u: usize| 4 * (i * u + u * u + u);
        let dense = |i: usize, o: usize| i * o + o;
        assert_eq!(d.param_count(), lstm(6, 4) + lstm(4, 4) + dense(4, 3) + dense(3, 6));

        let paper = ModelDims::for_cells(125_565);
        assert_eq!(paper.flat_dim, 376_695);
        let enc_kernel = ModelParams::<f32>::zeros(ModelDims { flat_dim: 3, ..paper }).encoder.kernel;
        assert_eq!(enc_kernel.shape(), &[3, 800]);
        assert_eq!(4 * paper.flat_dim * paper.encoder_units, 301_356_000);
    }

    #[test]
    fn zero_weights_give_half_tanh_half_c() {
        let p = LstmParams::<f64>::zeros(3, 4);
        let x = rand_tensor(&[3], 1, 1.0);
        let h = rand_tensor(&[4], 2, 1.0);
        let c = rand_tensor(&[4], 3, 1.0);
        let (h2, c2) = lstm_step(&x, &h, &c, &p).unwrap();
        for k in 0..4 {
            let expect_c = 0.5 * c.data()[k];
            assert_eq!(c2.data()[k], expect_c);
            assert!((h2.data()[k] - 0.5 * expect_c.tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn forget_bias_alone_keeps_zero_state() {
        let mut p = LstmParams::<f64>::zeros(3, 4);
        for b in &mut p.bias.data_mut()[4..8] {
            *b = 1.0;
        }
        let z3 = Tensor::zeros(&[3]);
        let z4 = Tensor::zeros(&[4]);
        let (h, c) = lstm_step(&z3, &z4, &z4, &p).unwrap();
        assert!(h.data().iter().chain(c.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_step_matches_scalar_equations() {
        let (input, units) = (5, 3);
        let p = LstmParams {
            kernel: rand_tensor(&[input, 4 * units], 10, 0.5),
            recurrent: rand_tensor(&[units, 4 * units], 11, 0.5),
            bias: rand_tensor(&[4 * units], 12, 0.5),
        };
        let x = rand_tensor(&[input], 13, 1.0);
        let h = rand_tensor(&[units], 14, 1.0);
        let c = rand_tensor(&[units], 15, 1.0);
        let (h2, c2) = lstm_step(&x, &h, &c, &p).unwrap();
        for j in 0..units {
            let gate = |g: usize| {
                let col = g * units + j;
                let mut z = p.bias.data()[col];
                for (a, &xa) in x.data().iter().enumerate() {
                    z += xa * p.kernel.data()[a * 4 * units + col];
                }
                for (a, &ha) in h.data().iter().enumerate() {
                    z += ha * p.recurrent.data()[a * 4 * units + col];
                }
                z
            };
            let (i, f, g, o) = (
                sigmoid_scalar(gate(0)),
                sigmoid_scalar(gate(1)),
                gate(2).tanh(),
                sigmoid_scalar(gate(3)),
            );
            let cj = f * c.data()[j] + i * g;
            assert!((c2.data()[j] - cj).abs() < 1e-6);
            assert!((h2.data()[j] - o * cj.tanh()).abs() < 1e-6);
        }
    }

    #[test]
    fn lstm_step_rejects_mismatched_state() {
        let p = LstmParams::<f64>::zeros(3, 4);
        let err = lstm_step(&Tensor::zeros(&[3]), &Tensor::zeros(&[5]), &Tensor::zeros(&[4]), &p);
        assert!(err.is_err());
    }

    #[test]
    fn forward_shapes_and_zero_network() {
        let d = tiny();
        let p = init_params::<f64>(d, 3).unwrap();
        let w = rand_tensor(&[3, 6], 4, 1.0);
        let (pred, _) = forward(&p, &w).unwrap();
        assert_eq!(pred.shape(), &[1, 6]);
        let zero = ModelParams::<f64>::zeros(d);
        let (pred, _) = forward(&zero, &w).unwrap();
        assert!(pred.data().iter().all(|&v| v == 0.0));
        assert!(forward(&p, &rand_tensor(&[2, 6], 4, 1.0)).is_err());
    }

    #[test]
    fn identical_windows_in_a_batch_predict_identically() {
        let d = tiny();
        let p = init_params::<f32>(d, 3).unwrap();
        let w: Tensor<f32> = Tensor::from_fn(&[3, 6], |i| (i as f32 * 0.37).sin());
        let mut two = w.data().to_vec();
        two.extend_from_slice(w.data());
        let batch = Tensor::new(vec![2, 3, 6], two).unwrap();
        let (pred, _) = forward_batch(&p, &batch).unwrap();
        assert_eq!(&pred.data()[..6], &pred.data()[6..]);
        let (single, _) = forward(&p, &w).unwrap();
        assert_eq!(single.data(), &pred.data()[..6]);
    }

    #[test]
    fn forward_cache_replays_bitwise() {
        let d = tiny();
        let p = init_params::<f64>(d, 5).unwrap();
        let w = rand_tensor(&[2, 3, 6], 6, 1.0);
        let (a, ca) = forward_batch(&p, &w).unwrap();
        let (b, cb) = forward_batch(&p, &w).unwrap();
        assert!(a.bitwise_eq(&b));
        assert_eq!(ca, cb);
        // replaying an encoder step from its cached inputs
        let s = &ca.encoder[1];
        let replay = lstm_step_cached(s.x.clone(), s.h_prev.clone(), s.c_prev.clone(), &p.encoder).unwrap();
        assert_eq!(&replay, s);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let d = tiny();
        let p = init_params::<f64>(d, 5).unwrap();
        let (pred, cache) = forward_batch(&p, &rand_tensor(&[2, 3, 6], 6, 1.0)).unwrap();
        let g = backward(&p, &cache, &Tensor::zeros(pred.shape())).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn repeat_vector_gradient_with_single_step() {
        let d = tiny();
        let p = init_params::<f64>(d, 9).unwrap();
        let (pred, cache) = forward_batch(&p, &rand_tensor(&[2, 3, 6], 1, 1.0)).unwrap();
        let dp = rand_tensor(pred.shape(), 2, 1.0);
        let (total, steps) = context_gradient(&p, &cache, &dp).unwrap();
        assert!(total.bitwise_eq(&steps[0]));

        let d3 = ModelDims { horizon: 3, ..d };
        let p3 = init_params::<f64>(d3, 9).unwrap();
        let (pred, cache) = forward_batch(&p3, &rand_tensor(&[2, 3, 6], 1, 1.0)).unwrap();
        let dp = rand_tensor(pred.shape(), 2, 1.0);
        let (total, steps) = context_gradient(&p3, &cache, &dp).unwrap();
        let mut sum = Tensor::zeros(total.shape());
        for s in steps.iter().rev() {
            sum.add_assign(s).unwrap();
        }
        assert!(total.bitwise_eq(&sum));
    }

    #[test]
    fn backward_rejects_foreign_cache() {
        let p = init_params::<f64>(tiny(), 1).unwrap();
        let other = ModelDims { encoder_units: 5, ..tiny() };
        let q = init_params::<f64>(other, 1).unwrap();
        let (pred, cache) = forward_batch(&q, &rand_tensor(&[1, 3, 6], 1, 1.0)).unwrap();
        assert!(backward(&p, &cache, &pred).is_err());
    }
}
