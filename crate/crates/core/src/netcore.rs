//! Dense networks with hand-written reverse mode for the fixed architectures
//! the agents use: shared per-point MLPs with max-pooled global context,
//! followed by a per-point or pooled head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::NetError;

type NetResult<T> = Result<T, NetError>;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> NetResult<Self> {
        if data.len() != rows * cols {
            return Err(NetError::Shape(format!("{} values for a {rows}x{cols} matrix", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> NetResult<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(NetError::Shape("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

/// `c = a·b + beta·c` with all operands row-major.
fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), n as isize, 1,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `c += aᵀ·b` where `a` is m×k and `b` is m×n (row-major), `c` is k×n.
fn gemm_at_b(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    unsafe {
        matrixmultiply::dgemm(
            k, m, n, 1.0,
            a.as_ptr(), 1, k as isize,
            b.as_ptr(), n as isize, 1,
            1.0,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `c = a·bᵀ` where `a` is m×n and `b` is k×n, `c` is m×k.
fn gemm_a_bt(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    unsafe {
        matrixmultiply::dgemm(
            m, n, k, 1.0,
            a.as_ptr(), n as isize, 1,
            b.as_ptr(), 1, n as isize,
            0.0,
            c.as_mut_ptr(), k as isize, 1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Tanh,
    None,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::None => z,
        }
    }

    /// Derivative expressed through the post-activation value.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::None => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub layers: Vec<LayerSpec>,
}

impl MlpSpec {
    /// Hidden layers share `hidden` activation; the last layer uses `output`.
    pub fn new(input: usize, widths: &[usize], hidden: Activation, output: Activation) -> Self {
        let n = widths.len();
        let layers = widths
            .iter()
            .enumerate()
            .map(|(i, &width)| LayerSpec {
                width,
                activation: if i + 1 == n { output } else { hidden },
            })
            .collect();
        Self { input, layers }
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(self.input, |l| l.width)
    }

    pub fn n_tensors(&self) -> usize {
        2 * self.layers.len()
    }

    pub fn validate(&self) -> NetResult<()> {
        if self.layers.is_empty() {
            return Err(NetError::Shape("MLP needs at least one layer".into()));
        }
        if self.input == 0 || self.layers.iter().any(|l| l.width == 0) {
            return Err(NetError::Shape("MLP widths must be positive".into()));
        }
        Ok(())
    }
}

/// Named weight or bias table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self {
            name: name.into(),
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }
}

/// Ordered collection of named tensors. Gradients and optimiser moments are
/// stores of identical layout created with [`ParameterStore::zeros_like`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParameterStore {
    pub tensors: Vec<Tensor>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.name.clone(), t.rows, t.cols))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn check_same_layout(&self, other: &ParameterStore) -> NetResult<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(NetError::Shape(format!(
                "store has {} tensors, other has {}",
                self.tensors.len(),
                other.tensors.len()
            )));
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            if a.rows != b.rows || a.cols != b.cols {
                return Err(NetError::Shape(format!(
                    "{}: {}x{} vs {}x{}",
                    a.name, a.rows, a.cols, b.rows, b.cols
                )));
            }
        }
        Ok(())
    }

    /// Appends weights (`input × width`, Glorot uniform) and zero biases for every layer.
    pub fn push_mlp(&mut self, prefix: &str, spec: &MlpSpec, rng: &mut impl Rng) {
        let mut fan_in = spec.input;
        for (i, layer) in spec.layers.iter().enumerate() {
            let limit = (6.0 / (fan_in + layer.width) as f64).sqrt();
            let mut w = Tensor::zeros(format!("{prefix}.{i}.w"), fan_in, layer.width);
            for v in &mut w.data {
                *v = rng.random_range(-limit..=limit);
            }
            self.tensors.push(w);
            self.tensors.push(Tensor::zeros(format!("{prefix}.{i}.b"), 1, layer.width));
            fan_in = layer.width;
        }
    }

    pub fn fill(&mut self, value: f64) {
        for t in &mut self.tensors {
            t.data.fill(value);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn add_assign(&mut self, other: &ParameterStore) -> NetResult<()> {
        self.check_same_layout(other)?;
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }

    pub fn iter_scalars(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors.iter().flat_map(|t| t.data.iter().copied())
    }
}

/// Post-activation outputs of every layer, plus the input.
#[derive(Debug, Clone)]
pub struct MlpTape {
    activations: Vec<Matrix>,
}

impl MlpTape {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("tape holds input")
    }

    pub fn into_output(mut self) -> Matrix {
        self.activations.pop().expect("tape holds input")
    }

    /// Pre-activations are not stored; relu kink checks recompute them.
    pub fn layer_outputs(&self) -> &[Matrix] {
        &self.activations[1..]
    }
}

fn check_params(spec: &MlpSpec, params: &[Tensor]) -> NetResult<()> {
    spec.validate()?;
    if params.len() != spec.n_tensors() {
        return Err(NetError::Shape(format!(
            "MLP expects {} tensors, got {}",
            spec.n_tensors(),
            params.len()
        )));
    }
    let mut fan_in = spec.input;
    for (i, layer) in spec.layers.iter().enumerate() {
        let (w, b) = (&params[2 * i], &params[2 * i + 1]);
        if w.rows != fan_in || w.cols != layer.width || b.cols != layer.width || b.rows != 1 {
            return Err(NetError::Shape(format!("layer {i} tensor shape does not match spec")));
        }
        fan_in = layer.width;
    }
    Ok(())
}

fn affine(input: &Matrix, w: &Tensor, b: &Tensor, act: Activation) -> Matrix {
    let mut out = Matrix::zeros(input.rows, w.cols);
    for r in 0..input.rows {
        out.row_mut(r).copy_from_slice(&b.data);
    }
    if input.rows > 0 {
        gemm(input.rows, w.rows, w.cols, &input.data, &w.data, 1.0, &mut out.data);
    }
    if act != Activation::None {
        out.data.iter_mut().for_each(|v| *v = act.apply(*v));
    }
    out
}

/// Pre-activations of every layer (used to test distance from relu kinks).
pub fn mlp_preactivations(spec: &MlpSpec, params: &[Tensor], input: &Matrix) -> NetResult<Vec<Matrix>> {
    check_params(spec, params)?;
    let mut out = Vec::with_capacity(spec.layers.len());
    let mut x = input.clone();
    for (i, layer) in spec.layers.iter().enumerate() {
        let z = affine(&x, &params[2 * i], &params[2 * i + 1], Activation::None);
        x = z.clone();
        if layer.activation != Activation::None {
            x.data.iter_mut().for_each(|v| *v = layer.activation.apply(*v));
        }
        out.push(z);
    }
    Ok(out)
}

pub fn mlp_forward_tape(spec: &MlpSpec, params: &[Tensor], input: Matrix) -> NetResult<MlpTape> {
    check_params(spec, params)?;
    if input.cols != spec.input {
        return Err(NetError::Shape(format!("input width {} != {}", input.cols, spec.input)));
    }
    let mut activations = Vec::with_capacity(spec.layers.len() + 1);
    activations.push(input);
    for (i, layer) in spec.layers.iter().enumerate() {
        let next = affine(activations.last().unwrap(), &params[2 * i], &params[2 * i + 1], layer.activation);
        activations.push(next);
    }
    Ok(MlpTape { activations })
}

/// Forward pass for a single input vector.
pub fn mlp_forward(spec: &MlpSpec, params: &[Tensor], input: &[f64]) -> NetResult<Vec<f64>> {
    let m = Matrix::from_vec(1, input.len(), input.to_vec())?;
    Ok(mlp_forward_tape(spec, params, m)?.into_output().data)
}

/// Reverse pass. Accumulates weight gradients into `grads` when given and
/// returns the gradient with respect to the input.
pub fn mlp_backward(
    spec: &MlpSpec,
    params: &[Tensor],
    tape: &MlpTape,
    d_out: &Matrix,
    mut grads: Option<&mut [Tensor]>,
) -> NetResult<Matrix> {
    if tape.activations.len() != spec.layers.len() + 1 {
        return Err(NetError::NoForward);
    }
    let out = tape.output();
    if d_out.rows != out.rows || d_out.cols != out.cols {
        return Err(NetError::Shape("output gradient does not match forward output".into()));
    }
    let mut delta = d_out.clone();
    for i in (0..spec.layers.len()).rev() {
        let act = spec.layers[i].activation;
        let y = &tape.activations[i + 1];
        if act != Activation::None {
            delta
                .data
                .iter_mut()
                .zip(&y.data)
                .for_each(|(d, &yv)| *d *= act.derivative_from_output(yv));
        }
        let x = &tape.activations[i];
        let w = &params[2 * i];
        if let Some(g) = grads.as_deref_mut() {
            let (gw, rest) = g[2 * i..].split_at_mut(1);
            if x.rows > 0 {
                gemm_at_b(x.rows, w.rows, w.cols, &x.data, &delta.data, &mut gw[0].data);
            }
            let gb = &mut rest[0].data;
            for r in 0..delta.rows {
                gb.iter_mut().zip(delta.row(r)).for_each(|(a, b)| *a += b);
            }
        }
        let mut dx = Matrix::zeros(x.rows, w.rows);
        if x.rows > 0 {
            gemm_a_bt(delta.rows, w.cols, w.rows, &delta.data, &w.data, &mut dx.data);
        }
        delta = dx;
    }
    Ok(delta)
}

/// Per-point encoder: shared MLP, then each point's embedding concatenated
/// with the coordinate-wise max over the cloud.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointEncoderSpec {
    pub per_point: MlpSpec,
}

impl PointEncoderSpec {
    pub fn embedding_width(&self) -> usize {
        self.per_point.output_width()
    }

    pub fn feature_width(&self) -> usize {
        2 * self.embedding_width()
    }
}

/// Per-point features `[e_i, max_k e_k]` for one cloud given its input rows.
pub fn point_encoder_forward(spec: &PointEncoderSpec, params: &[Tensor], inputs: &Matrix) -> NetResult<Matrix> {
    if inputs.rows == 0 {
        return Err(NetError::EmptyInput);
    }
    let emb = mlp_forward_tape(&spec.per_point, params, inputs.clone())?.into_output();
    let (pooled, _) = max_pool(&emb, &[0, emb.rows]);
    let e = emb.cols;
    let mut out = Matrix::zeros(emb.rows, 2 * e);
    for r in 0..emb.rows {
        let row = out.row_mut(r);
        row[..e].copy_from_slice(emb.row(r));
        row[e..].copy_from_slice(pooled.row(0));
    }
    Ok(out)
}

/// Column-wise max per segment. Ties resolve to the lowest row.
fn max_pool(emb: &Matrix, offsets: &[usize]) -> (Matrix, Vec<usize>) {
    let b = offsets.len() - 1;
    let e = emb.cols;
    let mut pooled = Matrix::zeros(b, e);
    let mut argmax = vec![0usize; b * e];
    for c in 0..b {
        let (start, end) = (offsets[c], offsets[c + 1]);
        let out = &mut pooled.data[c * e..(c + 1) * e];
        out.copy_from_slice(emb.row(start));
        let arg = &mut argmax[c * e..(c + 1) * e];
        arg.fill(start);
        for r in start + 1..end {
            for (j, &v) in emb.row(r).iter().enumerate() {
                if v > out[j] {
                    out[j] = v;
                    arg[j] = r;
                }
            }
        }
    }
    (pooled, argmax)
}

/// How the head sees the encoder output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadInput {
    /// One head row per queried point: `[e_i, pool, extra_i]`.
    PerPoint,
    /// One head row per cloud: `[pool, extra]`.
    Pooled,
}

/// Encoder + head network over a batch of clouds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointNetSpec {
    pub encoder: PointEncoderSpec,
    pub head: MlpSpec,
    pub head_input: HeadInput,
    /// Extra per-row head inputs (e.g. motion parameters for a critic).
    pub extra: usize,
}

impl PointNetSpec {
    pub fn new(input: usize, encoder: &[usize], head: &[usize], head_input: HeadInput, extra: usize, output: Activation) -> Self {
        let enc = MlpSpec::new(input, encoder, Activation::Relu, Activation::Relu);
        let e = enc.output_width();
        let head_in = match head_input {
            HeadInput::PerPoint => 2 * e + extra,
            HeadInput::Pooled => e + extra,
        };
        Self {
            encoder: PointEncoderSpec { per_point: enc },
            head: MlpSpec::new(head_in, head, Activation::Relu, output),
            head_input,
            extra,
        }
    }

    pub fn init(&self, rng: &mut impl Rng) -> ParameterStore {
        let mut store = ParameterStore::new();
        store.push_mlp("enc", &self.encoder.per_point, rng);
        store.push_mlp("head", &self.head, rng);
        store
    }

    fn split<'a>(&self, params: &'a [Tensor]) -> (&'a [Tensor], &'a [Tensor]) {
        params.split_at(self.encoder.per_point.n_tensors())
    }

    pub fn output_width(&self) -> usize {
        self.head.output_width()
    }
}

/// Stacked point features of several clouds; cloud `c` owns rows `offsets[c]..offsets[c+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudBatch {
    pub features: Matrix,
    pub offsets: Vec<usize>,
}

impl CloudBatch {
    pub fn n_clouds(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn cloud_of_row(&self, row: usize) -> usize {
        self.offsets.partition_point(|&o| o <= row) - 1
    }
}

/// Recorded forward pass for [`pointnet_backward`].
#[derive(Debug, Clone)]
pub struct PointNetTape {
    encoder: MlpTape,
    argmax: Vec<usize>,
    /// Global row (per-point head) or cloud index (pooled head) for each head row.
    query: Vec<usize>,
    query_cloud: Vec<usize>,
    head: MlpTape,
    emb_width: usize,
    n_rows: usize,
    offsets: Vec<usize>,
}

impl PointNetTape {
    pub fn output(&self) -> &Matrix {
        self.head.output()
    }

    pub fn query_rows(&self) -> &[usize] {
        &self.query
    }

    /// Smallest distance of the recorded pass from a non-differentiable point:
    /// any relu pre-activation magnitude, or the gap between the two largest
    /// rows of a positive max-pool column.
    pub fn kink_margin(&self, spec: &PointNetSpec, params: &ParameterStore) -> NetResult<f64> {
        let (enc_p, head_p) = spec.split(&params.tensors);
        let relu_min = |zs: &[Matrix], layers: &[LayerSpec]| {
            zs.iter()
                .zip(layers)
                .filter(|(_, l)| l.activation == Activation::Relu)
                .flat_map(|(z, _)| z.data.iter().map(|v| v.abs()))
                .fold(f64::INFINITY, f64::min)
        };
        let enc_z = mlp_preactivations(&spec.encoder.per_point, enc_p, &self.encoder.activations[0])?;
        let head_z = mlp_preactivations(&spec.head, head_p, &self.head.activations[0])?;
        let mut margin = relu_min(&enc_z, &spec.encoder.per_point.layers).min(relu_min(&head_z, &spec.head.layers));
        let emb = self.encoder.output();
        for w in self.offsets.windows(2) {
            for j in 0..self.emb_width {
                let mut col: Vec<f64> = (w[0]..w[1]).map(|r| emb.get(r, j)).collect();
                col.sort_by(|a, b| b.total_cmp(a));
                if col.len() > 1 && col[0] > 0.0 {
                    margin = margin.min(col[0] - col[1]);
                }
            }
        }
        Ok(margin)
    }
}

/// Runs the encoder over every row, then the head on the queried rows
/// (per-point head: global row indices; pooled head: cloud indices).
/// `extra` supplies one row of extra inputs per query.
pub fn pointnet_forward(
    spec: &PointNetSpec,
    params: &ParameterStore,
    batch: &CloudBatch,
    query: &[usize],
    extra: Option<&Matrix>,
) -> NetResult<PointNetTape> {
    let (enc_p, head_p) = spec.split(&params.tensors);
    if batch.features.rows == 0 || batch.offsets.windows(2).any(|w| w[1] <= w[0]) {
        return Err(NetError::EmptyInput);
    }
    if *batch.offsets.last().unwrap() != batch.features.rows || batch.offsets[0] != 0 {
        return Err(NetError::Shape("batch offsets do not cover the feature rows".into()));
    }
    match extra {
        Some(x) if x.rows != query.len() || x.cols != spec.extra => {
            return Err(NetError::Shape(format!(
                "extra is {}x{}, expected {}x{}",
                x.rows,
                x.cols,
                query.len(),
                spec.extra
            )))
        }
        None if spec.extra > 0 => return Err(NetError::Shape("missing extra head inputs".into())),
        _ => {}
    }
    let encoder = mlp_forward_tape(&spec.encoder.per_point, enc_p, batch.features.clone())?;
    let emb = encoder.output();
    let (pooled, argmax) = max_pool(emb, &batch.offsets);
    let e = emb.cols;
    let head_in = spec.head.input;
    let mut input = Matrix::zeros(query.len(), head_in);
    let mut query_cloud = Vec::with_capacity(query.len());
    for (q, &target) in query.iter().enumerate() {
        let row = input.row_mut(q);
        let cloud = match spec.head_input {
            HeadInput::PerPoint => {
                if target >= emb.rows {
                    return Err(NetError::Shape(format!("query row {target} out of range")));
                }
                let c = batch.cloud_of_row(target);
                row[..e].copy_from_slice(emb.row(target));
                row[e..2 * e].copy_from_slice(pooled.row(c));
                c
            }
            HeadInput::Pooled => {
                if target >= batch.n_clouds() {
                    return Err(NetError::Shape(format!("query cloud {target} out of range")));
                }
                row[..e].copy_from_slice(pooled.row(target));
                target
            }
        };
        if let Some(x) = extra {
            row[head_in - spec.extra..].copy_from_slice(x.row(q));
        }
        query_cloud.push(cloud);
    }
    let head = mlp_forward_tape(&spec.head, head_p, input)?;
    Ok(PointNetTape {
        n_rows: emb.rows,
        encoder,
        argmax,
        query: query.to_vec(),
        query_cloud,
        head,
        emb_width: e,
        offsets: batch.offsets.clone(),
    })
}

/// Back-propagates `d_out` (one row per query). Parameter gradients are
/// accumulated into `grads` when given; the gradient with respect to `extra`
/// is returned.
pub fn pointnet_backward(
    spec: &PointNetSpec,
    params: &ParameterStore,
    tape: &PointNetTape,
    d_out: &Matrix,
    grads: Option<&mut ParameterStore>,
) -> NetResult<Matrix> {
    let (enc_p, head_p) = spec.split(&params.tensors);
    let n_enc = spec.encoder.per_point.n_tensors();
    let (enc_g, head_g) = match grads {
        Some(g) => {
            params.check_same_layout(g)?;
            let (a, b) = g.tensors.split_at_mut(n_enc);
            (Some(a), Some(b))
        }
        None => (None, None),
    };
    let d_in = mlp_backward(&spec.head, head_p, &tape.head, d_out, head_g)?;
    let head_in = spec.head.input;
    let mut d_extra = Matrix::zeros(d_in.rows, spec.extra);
    for q in 0..d_in.rows {
        d_extra.row_mut(q).copy_from_slice(&d_in.row(q)[head_in - spec.extra..]);
    }
    let Some(enc_g) = enc_g else {
        return Ok(d_extra);
    };
    let e = tape.emb_width;
    let n_clouds = tape.argmax.len() / e;
    let mut d_pool = Matrix::zeros(n_clouds, e);
    let mut d_emb = Matrix::zeros(tape.n_rows, e);
    for q in 0..d_in.rows {
        let row = d_in.row(q);
        let c = tape.query_cloud[q];
        let (own, pool) = match spec.head_input {
            HeadInput::PerPoint => (Some(&row[..e]), &row[e..2 * e]),
            HeadInput::Pooled => (None, &row[..e]),
        };
        if let Some(own) = own {
            d_emb.row_mut(tape.query[q]).iter_mut().zip(own).for_each(|(a, b)| *a += b);
        }
        d_pool.row_mut(c).iter_mut().zip(pool).for_each(|(a, b)| *a += b);
    }
    for c in 0..n_clouds {
        for j in 0..e {
            let r = tape.argmax[c * e + j];
            d_emb.data[r * e + j] += d_pool.get(c, j);
        }
    }
    mlp_backward(&spec.encoder.per_point, enc_p, &tape.encoder, &d_emb, Some(enc_g))?;
    Ok(d_extra)
}

/// Adaptive-moment optimiser state for one parameter store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: ParameterStore,
    pub v: ParameterStore,
}

impl AdamState {
    pub fn new(params: &ParameterStore) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam step.
pub fn adam_update(params: &mut ParameterStore, grads: &ParameterStore, lr: f64, state: &mut AdamState) -> NetResult<()> {
    params.check_same_layout(grads)?;
    params.check_same_layout(&state.m)?;
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (((p, g), m), v) in params
        .tensors
        .iter_mut()
        .zip(&grads.tensors)
        .zip(&mut state.m.tensors)
        .zip(&mut state.v.tensors)
    {
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
            v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
            let mhat = m.data[i] / c1;
            let vhat = v.data[i] / c2;
            p.data[i] -= lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Scalar objective over a parameter store with an analytic gradient.
pub trait Objective {
    fn value(&self, params: &ParameterStore) -> f64;
    fn gradient(&self, params: &ParameterStore) -> NetResult<ParameterStore>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub worst_parameter: String,
    pub n_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Compares analytic gradients against central differences, scalar by scalar.
/// Relative error is `|a − n| / max(1, |a|, |n|)`.
pub fn grad_check(objective: &impl Objective, params: &ParameterStore, epsilon: f64) -> NetResult<GradCheckReport> {
    let analytic = objective.gradient(params)?;
    params.check_same_layout(&analytic)?;
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_abs_error: 0.0,
        max_rel_error: 0.0,
        worst_parameter: String::new(),
        n_checked: 0,
    };
    for t in 0..params.tensors.len() {
        for i in 0..params.tensors[t].data.len() {
            let orig = params.tensors[t].data[i];
            probe.tensors[t].data[i] = orig + epsilon;
            let up = objective.value(&probe);
            probe.tensors[t].data[i] = orig - epsilon;
            let down = objective.value(&probe);
            probe.tensors[t].data[i] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            let a = analytic.tensors[t].data[i];
            let abs = (a - numeric).abs();
            let rel = abs / 1f64.max(a.abs()).max(numeric.abs());
            report.n_checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error || report.worst_parameter.is_empty() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst_parameter = format!("{}[{i}]", params.tensors[t].name);
            }
        }
    }
    Ok(report)
}
