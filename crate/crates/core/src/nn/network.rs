use rand::Rng;

use super::{LayerGeom, LayerKind, Layout, NetworkSpec, NnError, Real, N_ACTIONS};

/// Network weights in one flat buffer, plus the spec that shapes them.
///
/// Gradients use the same type so the optimizer and checkpoint code can
/// treat both uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    spec: NetworkSpec,
    layout: Layout,
    pub values: Vec<T>,
}

impl<T: Real> NetworkParams<T> {
    pub fn zeros(spec: &NetworkSpec) -> Result<Self, NnError> {
        let layout = spec.layout()?;
        let values = vec![T::zero(); layout.n_params];
        Ok(Self { spec: spec.clone(), layout, values })
    }

    pub fn from_values(spec: &NetworkSpec, values: Vec<T>) -> Result<Self, NnError> {
        let layout = spec.layout()?;
        if values.len() != layout.n_params {
            return Err(NnError::Size { what: "parameter buffer", expected: layout.n_params, got: values.len() });
        }
        Ok(Self { spec: spec.clone(), layout, values })
    }

    pub fn zeros_like(&self) -> Self {
        Self { spec: self.spec.clone(), layout: self.layout.clone(), values: vec![T::zero(); self.values.len()] }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn weights(&self, layer: usize) -> &[T] {
        let g = &self.layout.layers[layer];
        &self.values[g.w_offset..g.w_offset + g.w_len]
    }

    pub fn bias(&self, layer: usize) -> &[T] {
        let g = &self.layout.layers[layer];
        &self.values[g.b_offset..g.b_offset + g.b_len]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [T] {
        let g = self.layout.layers[layer];
        &mut self.values[g.w_offset..g.w_offset + g.w_len]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [T] {
        let g = self.layout.layers[layer];
        &mut self.values[g.b_offset..g.b_offset + g.b_len]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Element-wise cast, e.g. to run an f32 network in f64.
    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        NetworkParams {
            spec: self.spec.clone(),
            layout: self.layout.clone(),
            values: self.values.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

fn glorot<T: Real, R: Rng + ?Sized>(geom: &LayerGeom, out: &mut [T], rng: &mut R) {
    let (fan_in, fan_out) = geom.fans();
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for w in out.iter_mut() {
        *w = T::from_f64(rng.random_range(-limit..limit));
    }
}

/// Glorot-uniform hidden weights, zero biases, and an all-zero output layer.
pub fn init_network<T: Real, R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Result<NetworkParams<T>, NnError> {
    let mut params = NetworkParams::zeros(spec)?;
    let last = params.layout.layers.len() - 1;
    for i in 0..last {
        let geom = params.layout.layers[i];
        glorot(&geom, params.weights_mut(i), rng);
    }
    Ok(params)
}

/// Every layer random, including the output layer and small random biases.
/// Used where the zero output layer would hide gradients.
pub fn init_random<T: Real, R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Result<NetworkParams<T>, NnError> {
    let mut params = NetworkParams::zeros(spec)?;
    for i in 0..params.layout.layers.len() {
        let geom = params.layout.layers[i];
        glorot(&geom, params.weights_mut(i), rng);
        for b in params.bias_mut(i) {
            *b = T::from_f64(rng.random_range(-0.1..0.1));
        }
    }
    Ok(params)
}

/// Per-layer inputs and pre-activations from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    n_params: usize,
    inputs: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
}

impl<T: Real> ForwardCache<T> {
    /// Pre-activation of each layer, for inspecting ReLU switching.
    pub fn pre_activations(&self) -> &[Vec<T>] {
        &self.pre
    }

    /// The input each layer consumed.
    pub fn layer_inputs(&self) -> &[Vec<T>] {
        &self.inputs
    }
}

fn conv_forward<T: Real>(geom: &LayerGeom, w: &[T], b: &[T], input: &[T], out: &mut Vec<T>) {
    let LayerKind::Conv { in_channels, out_channels, width, stride, in_len, out_len } = geom.kind else {
        unreachable!()
    };
    out.clear();
    out.resize(out_channels * out_len, T::zero());
    for o in 0..out_channels {
        let row = &mut out[o * out_len..(o + 1) * out_len];
        for v in row.iter_mut() {
            *v = b[o];
        }
        for c in 0..in_channels {
            let kernel = &w[(o * in_channels + c) * width..(o * in_channels + c + 1) * width];
            let chan = &input[c * in_len..(c + 1) * in_len];
            for (p, v) in row.iter_mut().enumerate() {
                let seg = &chan[p * stride..p * stride + width];
                let mut acc = T::zero();
                for (x, k) in seg.iter().zip(kernel) {
                    acc += *x * *k;
                }
                *v += acc;
            }
        }
    }
}

fn dense_forward<T: Real>(geom: &LayerGeom, w: &[T], b: &[T], input: &[T], out: &mut Vec<T>) {
    let LayerKind::Dense { in_units, out_units } = geom.kind else { unreachable!() };
    out.clear();
    out.extend((0..out_units).map(|o| {
        let row = &w[o * in_units..(o + 1) * in_units];
        let mut acc = b[o];
        for (x, k) in input.iter().zip(row) {
            acc += *x * *k;
        }
        acc
    }));
}

fn relu_in_place<T: Real>(v: &mut [T]) {
    for x in v.iter_mut() {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

fn run_layer<T: Real>(params: &NetworkParams<T>, i: usize, input: &[T]) -> (Vec<T>, Vec<T>) {
    let geom = &params.layout.layers[i];
    let mut pre = Vec::new();
    match geom.kind {
        LayerKind::Conv { .. } => conv_forward(geom, params.weights(i), params.bias(i), input, &mut pre),
        LayerKind::Dense { .. } => dense_forward(geom, params.weights(i), params.bias(i), input, &mut pre),
    }
    let mut act = pre.clone();
    if geom.relu {
        relu_in_place(&mut act);
    }
    (pre, act)
}

/// Evaluate the action values for one observation.
pub fn forward<T: Real>(
    params: &NetworkParams<T>,
    spectrum: &[T],
    scalars: &[T],
) -> Result<(Vec<T>, ForwardCache<T>), NnError> {
    let spec = &params.spec;
    if spectrum.len() != spec.n_bins {
        return Err(NnError::Size { what: "spectrum input", expected: spec.n_bins, got: spectrum.len() });
    }
    if scalars.len() != spec.n_scalars {
        return Err(NnError::Size { what: "scalar input", expected: spec.n_scalars, got: scalars.len() });
    }
    let layout = &params.layout;
    let n_layers = layout.layers.len();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut pre = Vec::with_capacity(n_layers);

    let mut x = spectrum.to_vec();
    for i in 0..layout.n_spectrum {
        let (p, a) = run_layer(params, i, &x);
        inputs.push(std::mem::replace(&mut x, a));
        pre.push(p);
    }
    let mut concat = x;

    let mut x = scalars.to_vec();
    for i in layout.n_spectrum..layout.n_spectrum + layout.n_scalar {
        let (p, a) = run_layer(params, i, &x);
        inputs.push(std::mem::replace(&mut x, a));
        pre.push(p);
    }
    concat.extend_from_slice(&x);

    let mut x = concat;
    for i in layout.n_spectrum + layout.n_scalar..n_layers {
        let (p, a) = run_layer(params, i, &x);
        inputs.push(std::mem::replace(&mut x, a));
        pre.push(p);
    }
    debug_assert_eq!(x.len(), N_ACTIONS);
    Ok((x, ForwardCache { n_params: layout.n_params, inputs, pre }))
}

/// Gradient of `qᵀ·dq` with respect to every parameter.
pub fn backward<T: Real>(
    params: &NetworkParams<T>,
    cache: &ForwardCache<T>,
    dq: &[T],
) -> Result<NetworkParams<T>, NnError> {
    let mut grads = params.zeros_like();
    backward_into(params, cache, dq, &mut grads)?;
    Ok(grads)
}

/// As [`backward`], accumulating into `grads`.
pub fn backward_into<T: Real>(
    params: &NetworkParams<T>,
    cache: &ForwardCache<T>,
    dq: &[T],
    grads: &mut NetworkParams<T>,
) -> Result<(), NnError> {
    let layout = &params.layout;
    let consistent = cache.n_params == layout.n_params
        && cache.pre.len() == layout.layers.len()
        && cache.inputs.len() == layout.layers.len()
        && layout.layers.iter().zip(&cache.pre).all(|(g, p)| g.output_len() == p.len())
        && layout.layers.iter().zip(&cache.inputs).all(|(g, x)| g.input_len() == x.len());
    if !consistent {
        return Err(NnError::Usage("forward cache does not match these parameters".into()));
    }
    if grads.values.len() != layout.n_params {
        return Err(NnError::Size { what: "gradient buffer", expected: layout.n_params, got: grads.values.len() });
    }
    if dq.len() != N_ACTIONS {
        return Err(NnError::Size { what: "output gradient", expected: N_ACTIONS, got: dq.len() });
    }

    let head_start = layout.n_spectrum + layout.n_scalar;
    let mut g = dq.to_vec();
    for i in (head_start..layout.layers.len()).rev() {
        g = layer_backward(params, i, cache, g, grads, true);
    }
    let (g_spec, g_scal) = g.split_at(layout.spectrum_out);
    let mut g = g_scal.to_vec();
    for i in (layout.n_spectrum..head_start).rev() {
        g = layer_backward(params, i, cache, g, grads, i > layout.n_spectrum);
    }
    let mut g = g_spec.to_vec();
    for i in (0..layout.n_spectrum).rev() {
        g = layer_backward(params, i, cache, g, grads, i > 0);
    }
    Ok(())
}

/// Backprop through layer `i` given the gradient at its output; returns the
/// gradient at its input when `need_input` is set.
fn layer_backward<T: Real>(
    params: &NetworkParams<T>,
    i: usize,
    cache: &ForwardCache<T>,
    mut g: Vec<T>,
    grads: &mut NetworkParams<T>,
    need_input: bool,
) -> Vec<T> {
    let geom = params.layout.layers[i];
    if geom.relu {
        for (gv, p) in g.iter_mut().zip(&cache.pre[i]) {
            if *p <= T::zero() {
                *gv = T::zero();
            }
        }
    }
    let input = &cache.inputs[i];
    let w = params.weights(i);
    let mut g_in = if need_input { vec![T::zero(); input.len()] } else { Vec::new() };
    let (gw, gb) = {
        let (head, tail) = grads.values.split_at_mut(geom.b_offset);
        (&mut head[geom.w_offset..], &mut tail[..geom.b_len])
    };
    match geom.kind {
        LayerKind::Dense { in_units, out_units } => {
            for o in 0..out_units {
                let go = g[o];
                if go == T::zero() {
                    continue;
                }
                gb[o] += go;
                let gw_row = &mut gw[o * in_units..(o + 1) * in_units];
                for (gwv, x) in gw_row.iter_mut().zip(input) {
                    *gwv += go * *x;
                }
                if need_input {
                    let w_row = &w[o * in_units..(o + 1) * in_units];
                    for (gi, wv) in g_in.iter_mut().zip(w_row) {
                        *gi += go * *wv;
                    }
                }
            }
        }
        LayerKind::Conv { in_channels, out_channels, width, stride, in_len, out_len } => {
            for o in 0..out_channels {
                let grow = &g[o * out_len..(o + 1) * out_len];
                gb[o] += grow.iter().fold(T::zero(), |a, &b| a + b);
                for c in 0..in_channels {
                    let k_off = (o * in_channels + c) * width;
                    let chan = &input[c * in_len..(c + 1) * in_len];
                    let gk = &mut gw[k_off..k_off + width];
                    for (p, &gp) in grow.iter().enumerate() {
                        if gp == T::zero() {
                            continue;
                        }
                        let seg = &chan[p * stride..p * stride + width];
                        for (gkv, x) in gk.iter_mut().zip(seg) {
                            *gkv += gp * *x;
                        }
                    }
                    if need_input {
                        let kernel = &w[k_off..k_off + width];
                        let gin_chan = &mut g_in[c * in_len..(c + 1) * in_len];
                        for (p, &gp) in grow.iter().enumerate() {
                            if gp == T::zero() {
                                continue;
                            }
                            for (gi, kv) in gin_chan[p * stride..p * stride + width].iter_mut().zip(kernel) {
                                *gi += gp * *kv;
                            }
                        }
                    }
                }
            }
        }
    }
    g_in
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
