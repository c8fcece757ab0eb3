//! Residual-MLP numerical core: exact-erf GELU, layer normalization,
//! analytic reverse-mode gradients, and Adam. Everything is 64-bit
//! and pure given explicit seeds.
//!
//! Block structure: `h <- h + Lin2(GELU(LayerNorm(Lin1(h))))`,
//! preceded by an input projection to the hidden width and followed
//! by a linear output head. `forward_with_injections` additionally
//! adds an external per-block term to each block output and
//! `backward_with_injections` returns its gradient; the progressive
//! columns use this for lateral connections.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const LAYERNORM_EPS: f64 = 1e-5;

/// Row-major batch or weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Mat {
        let r = rows.len();
        let c = rows.first().map(|x| x.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c);
            data.extend(row);
        }
        Mat { rows: r, cols: c, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MLPSpec {
    pub input_dim: usize,
    pub hidden_width: usize,
    pub n_hidden_blocks: usize,
    pub output_dim: usize,
    pub residual: bool,
    pub layernorm: bool,
}

impl MLPSpec {
    /// Desk-scale default: width 64, 3 residual blocks with layer
    /// normalization.
    pub fn new(input_dim: usize, output_dim: usize) -> MLPSpec {
        MLPSpec {
            input_dim,
            hidden_width: 64,
            n_hidden_blocks: 3,
            output_dim,
            residual: true,
            layernorm: true,
        }
    }

    pub fn with_width(mut self, w: usize) -> MLPSpec {
        self.hidden_width = w;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub offset: usize,
    /// `[rows, cols]`; bias and gain vectors use `[1, n]`.
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout(pub Vec<LayoutEntry>);

impl Layout {
    pub fn total(&self) -> usize {
        self.0.last().map(|e| e.offset + e.shape[0] * e.shape[1]).unwrap_or(0)
    }

    pub fn find(&self, name: &str) -> &LayoutEntry {
        self.0
            .iter()
            .find(|e| e.name == name)
            .unwrap_or_else(|| panic!("no layout entry '{name}'"))
    }
}

/// Builds the parameter layout for a spec.
pub fn layout(spec: &MLPSpec) -> Layout {
    let w = spec.hidden_width;
    let mut entries = Vec::new();
    let mut off = 0usize;
    let mut push = |name: String, shape: [usize; 2], off: &mut usize| {
        entries.push(LayoutEntry {
            name,
            offset: *off,
            shape,
        });
        *off += shape[0] * shape[1];
    };
    push("proj.w".into(), [w, spec.input_dim], &mut off);
    push("proj.b".into(), [1, w], &mut off);
    for b in 0..spec.n_hidden_blocks {
        push(format!("block{b}.lin1.w"), [w, w], &mut off);
        push(format!("block{b}.lin1.b"), [1, w], &mut off);
        if spec.layernorm {
            push(format!("block{b}.ln.g"), [1, w], &mut off);
            push(format!("block{b}.ln.b"), [1, w], &mut off);
        }
        push(format!("block{b}.lin2.w"), [w, w], &mut off);
        push(format!("block{b}.lin2.b"), [1, w], &mut off);
    }
    push("head.w".into(), [spec.output_dim, w], &mut off);
    push("head.b".into(), [1, spec.output_dim], &mut off);
    Layout(entries)
}

/// Flat parameter storage plus its layout table.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub data: Vec<f64>,
    pub layout: Layout,
}

impl ParamVector {
    pub fn zeros_like(other: &ParamVector) -> ParamVector {
        ParamVector {
            data: vec![0.0; other.data.len()],
            layout: other.layout.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn slice(&self, name: &str) -> (&[f64], [usize; 2]) {
        let e = self.layout.find(name);
        (&self.data[e.offset..e.offset + e.shape[0] * e.shape[1]], e.shape)
    }

    fn slice_mut(&mut self, name: &str) -> &mut [f64] {
        let e = self.layout.find(name).clone();
        &mut self.data[e.offset..e.offset + e.shape[0] * e.shape[1]]
    }
}

/// Number of parameters defined by a spec; architecture-only.
pub fn param_count(spec: &MLPSpec) -> usize {
    layout(spec).total()
}

/// Copies the flat storage out of a parameter vector.
pub fn flatten(params: &ParamVector) -> Vec<f64> {
    params.data.clone()
}

/// Rebuilds a parameter vector from flat storage.
pub fn unflatten(spec: &MLPSpec, data: Vec<f64>) -> Result<ParamVector> {
    let lay = layout(spec);
    if data.len() != lay.total() {
        return Err(Error::Shape {
            expected: lay.total(),
            got: data.len(),
            context: "unflatten",
        });
    }
    Ok(ParamVector { data, layout: lay })
}

/// One standard normal draw (Box-Muller, one value per pair of
/// uniforms for a fixed consumption pattern).
fn normal_draw(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Variance-scaling initialization: truncated normal with
/// `std = sqrt(0.1 / fan_in)`, truncated at two standard deviations;
/// biases and layer-norm offsets zero, gains one.
pub fn init_params(spec: &MLPSpec, seed: u64) -> ParamVector {
    let lay = layout(spec);
    let mut data = vec![0.0; lay.total()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for e in &lay.0 {
        let slot = &mut data[e.offset..e.offset + e.shape[0] * e.shape[1]];
        if e.name.ends_with(".w") {
            let fan_in = e.shape[1] as f64;
            let std = (0.1 / fan_in).sqrt();
            for v in slot.iter_mut() {
                let z = loop {
                    let z = normal_draw(&mut rng);
                    if z.abs() <= 2.0 {
                        break z;
                    }
                };
                *v = z * std;
            }
        } else if e.name.ends_with(".ln.g") {
            slot.fill(1.0);
        }
        // biases and ln offsets stay zero
    }
    ParamVector { data, layout: lay }
}

/// Exact-erf GELU.
pub fn gelu(x: f64) -> f64 {
    x * 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Derivative of the exact GELU: `Phi(x) + x * phi(x)`.
pub fn gelu_grad(x: f64) -> f64 {
    let phi_cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    phi_cdf + x * pdf
}

/// Activation tape retained by [`forward`] for [`backward`].
pub struct Tape {
    input: Mat,
    /// Per block: input, layer-norm cache, pre-GELU, post-GELU.
    blocks: Vec<BlockTape>,
    /// Input to the output head.
    last: Mat,
}

struct BlockTape {
    h_in: Mat,
    /// Normalized pre-affine activations (identity when layernorm is
    /// off; then only `u` is used).
    xhat: Mat,
    /// Per-row inverse standard deviation.
    invstd: Vec<f64>,
    /// Pre-GELU activations (post layer norm affine).
    u: Mat,
    /// Post-GELU activations.
    a: Mat,
}

impl Tape {
    /// Post-layer-norm activations of every block (the lateral
    /// source for progressive columns).
    pub fn block_activations(&self) -> Vec<&Mat> {
        self.blocks.iter().map(|b| &b.u).collect()
    }
}

pub(crate) fn linear(w: &[f64], b: &[f64], x: &Mat, out_dim: usize) -> Mat {
    let mut y = Mat::zeros(x.rows, out_dim);
    for r in 0..x.rows {
        let xr = x.row(r);
        let yr = y.row_mut(r);
        for o in 0..out_dim {
            let wo = &w[o * xr.len()..(o + 1) * xr.len()];
            let mut acc = b[o];
            for i in 0..xr.len() {
                acc += wo[i] * xr[i];
            }
            yr[o] = acc;
        }
    }
    y
}

/// dW += dy^T x ; db += sum(dy) ; dx = dy W
pub(crate) fn linear_backward(
    w: &[f64],
    x: &Mat,
    dy: &Mat,
    dw: &mut [f64],
    db: &mut [f64],
) -> Mat {
    let in_dim = x.cols;
    let out_dim = dy.cols;
    let mut dx = Mat::zeros(x.rows, in_dim);
    for r in 0..x.rows {
        let xr = x.row(r);
        let dyr = dy.row(r);
        let dxr = dx.row_mut(r);
        for o in 0..out_dim {
            let g = dyr[o];
            if g == 0.0 {
                continue;
            }
            db[o] += g;
            let wo = &w[o * in_dim..(o + 1) * in_dim];
            let dwo = &mut dw[o * in_dim..(o + 1) * in_dim];
            for i in 0..in_dim {
                dwo[i] += g * xr[i];
                dxr[i] += g * wo[i];
            }
        }
    }
    dx
}

/// Forward pass. Input width must equal `spec.input_dim`.
pub fn forward(spec: &MLPSpec, params: &ParamVector, input: &Mat) -> Result<(Mat, Tape)> {
    forward_with_injections(spec, params, input, None)
}

/// Forward pass with optional per-block additive injections
/// (`injections[b]` is added to block `b`'s output).
pub fn forward_with_injections(
    spec: &MLPSpec,
    params: &ParamVector,
    input: &Mat,
    injections: Option<&[Mat]>,
) -> Result<(Mat, Tape)> {
    if input.cols != spec.input_dim {
        return Err(Error::Shape {
            expected: spec.input_dim,
            got: input.cols,
            context: "forward input width",
        });
    }
    if let Some(inj) = injections {
        if inj.len() != spec.n_hidden_blocks {
            return Err(Error::Shape {
                expected: spec.n_hidden_blocks,
                got: inj.len(),
                context: "injection count",
            });
        }
    }
    let w = spec.hidden_width;
    let (pw, _) = params.slice("proj.w");
    let (pb, _) = params.slice("proj.b");
    let mut h = linear(pw, pb, input, w);
    let mut blocks = Vec::with_capacity(spec.n_hidden_blocks);
    for b in 0..spec.n_hidden_blocks {
        let (w1, _) = params.slice(&format!("block{b}.lin1.w"));
        let (b1, _) = params.slice(&format!("block{b}.lin1.b"));
        let z1 = linear(w1, b1, &h, w);
        let (xhat, invstd, u) = if spec.layernorm {
            let (g, _) = params.slice(&format!("block{b}.ln.g"));
            let (beta, _) = params.slice(&format!("block{b}.ln.b"));
            let mut xhat = Mat::zeros(z1.rows, w);
            let mut u = Mat::zeros(z1.rows, w);
            let mut invstd = vec![0.0; z1.rows];
            for r in 0..z1.rows {
                let zr = z1.row(r);
                let mean = zr.iter().sum::<f64>() / w as f64;
                let var = zr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w as f64;
                let is = 1.0 / (var + LAYERNORM_EPS).sqrt();
                invstd[r] = is;
                let xr = xhat.row_mut(r);
                for i in 0..w {
                    xr[i] = (zr[i] - mean) * is;
                }
                let ur = u.row_mut(r);
                for i in 0..w {
                    ur[i] = g[i] * xhat.row(r)[i] + beta[i];
                }
            }
            (xhat, invstd, u)
        } else {
            (Mat::zeros(0, 0), Vec::new(), z1)
        };
        let mut a = Mat::zeros(u.rows, w);
        for (av, uv) in a.data.iter_mut().zip(&u.data) {
            *av = gelu(*uv);
        }
        let (w2, _) = params.slice(&format!("block{b}.lin2.w"));
        let (b2, _) = params.slice(&format!("block{b}.lin2.b"));
        let z2 = linear(w2, b2, &a, w);
        let mut h_next = if spec.residual { h.clone() } else { Mat::zeros(h.rows, w) };
        for (hv, zv) in h_next.data.iter_mut().zip(&z2.data) {
            *hv += zv;
        }
        if let Some(inj) = injections {
            for (hv, iv) in h_next.data.iter_mut().zip(&inj[b].data) {
                *hv += iv;
            }
        }
        blocks.push(BlockTape {
            h_in: h,
            xhat,
            invstd,
            u,
            a,
        });
        h = h_next;
    }
    let (hw, _) = params.slice("head.w");
    let (hb, _) = params.slice("head.b");
    let out = linear(hw, hb, &h, spec.output_dim);
    let tape = Tape {
        input: input.clone(),
        blocks,
        last: h,
    };
    Ok((out, tape))
}

/// Exact analytic gradient of `sum(outputs * out_grad)` with respect
/// to the parameters.
pub fn backward(spec: &MLPSpec, params: &ParamVector, tape: &Tape, out_grad: &Mat) -> Result<ParamVector> {
    backward_with_injections(spec, params, tape, out_grad).map(|(g, _)| g)
}

/// As [`backward`], additionally returning the gradient with respect
/// to each block injection (one `Mat` per block).
pub fn backward_with_injections(
    spec: &MLPSpec,
    params: &ParamVector,
    tape: &Tape,
    out_grad: &Mat,
) -> Result<(ParamVector, Vec<Mat>)> {
    if out_grad.cols != spec.output_dim || out_grad.rows != tape.last.rows {
        return Err(Error::Shape {
            expected: spec.output_dim,
            got: out_grad.cols,
            context: "backward output gradient",
        });
    }
    let w = spec.hidden_width;
    let mut grad = ParamVector::zeros_like(params);
    // Head.
    let (hw, _) = params.slice("head.w");
    let hw = hw.to_vec();
    let mut dh = {
        let e1 = grad.layout.find("head.w").clone();
        let e2 = grad.layout.find("head.b").clone();
        let (dw_slice, db_slice) = {
            // Disjoint slices into the flat gradient.
            let (a, b) = grad.data.split_at_mut(e2.offset);
            (&mut a[e1.offset..e1.offset + e1.shape[0] * e1.shape[1]], &mut b[..e2.shape[0] * e2.shape[1]])
        };
        linear_backward(&hw, &tape.last, out_grad, dw_slice, db_slice)
    };
    let mut inj_grads: Vec<Mat> = vec![Mat::zeros(0, 0); spec.n_hidden_blocks];
    for b in (0..spec.n_hidden_blocks).rev() {
        let bt = &tape.blocks[b];
        inj_grads[b] = dh.clone();
        // Lin2.
        let (w2, _) = params.slice(&format!("block{b}.lin2.w"));
        let w2 = w2.to_vec();
        let mut dw2 = vec![0.0; w * w];
        let mut db2 = vec![0.0; w];
        let da = linear_backward(&w2, &bt.a, &dh, &mut dw2, &mut db2);
        grad.slice_mut(&format!("block{b}.lin2.w")).copy_from_slice(&dw2);
        grad.slice_mut(&format!("block{b}.lin2.b")).copy_from_slice(&db2);
        // GELU.
        let mut du = Mat::zeros(da.rows, w);
        for i in 0..du.data.len() {
            du.data[i] = da.data[i] * gelu_grad(bt.u.data[i]);
        }
        // LayerNorm.
        let dz1 = if spec.layernorm {
            let (g, _) = params.slice(&format!("block{b}.ln.g"));
            let g = g.to_vec();
            let mut dgain = vec![0.0; w];
            let mut dbeta = vec![0.0; w];
            let mut dz1 = Mat::zeros(du.rows, w);
            for r in 0..du.rows {
                let dur = du.row(r);
                let xr = bt.xhat.row(r);
                for i in 0..w {
                    dgain[i] += dur[i] * xr[i];
                    dbeta[i] += dur[i];
                }
                let dxhat: Vec<f64> = (0..w).map(|i| dur[i] * g[i]).collect();
                let mean_dxhat = dxhat.iter().sum::<f64>() / w as f64;
                let mean_dxhat_xhat = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / w as f64;
                let is = bt.invstd[r];
                let dzr = dz1.row_mut(r);
                for i in 0..w {
                    dzr[i] = is * (dxhat[i] - mean_dxhat - xr[i] * mean_dxhat_xhat);
                }
            }
            grad.slice_mut(&format!("block{b}.ln.g")).copy_from_slice(&dgain);
            grad.slice_mut(&format!("block{b}.ln.b")).copy_from_slice(&dbeta);
            dz1
        } else {
            du
        };
        // Lin1.
        let (w1, _) = params.slice(&format!("block{b}.lin1.w"));
        let w1 = w1.to_vec();
        let mut dw1 = vec![0.0; w * w];
        let mut db1 = vec![0.0; w];
        let dh_in = linear_backward(&w1, &bt.h_in, &dz1, &mut dw1, &mut db1);
        grad.slice_mut(&format!("block{b}.lin1.w")).copy_from_slice(&dw1);
        grad.slice_mut(&format!("block{b}.lin1.b")).copy_from_slice(&db1);
        // Residual skip.
        dh = if spec.residual {
            let mut d = dh_in;
            for (dv, hv) in d.data.iter_mut().zip(&dh.data) {
                *dv += hv;
            }
            d
        } else {
            dh_in
        };
    }
    // Projection.
    let (pw, _) = params.slice("proj.w");
    let pw = pw.to_vec();
    let mut dpw = vec![0.0; w * spec.input_dim];
    let mut dpb = vec![0.0; w];
    let _ = linear_backward(&pw, &tape.input, &dh, &mut dpw, &mut dpb);
    grad.slice_mut("proj.w").copy_from_slice(&dpw);
    grad.slice_mut("proj.b").copy_from_slice(&dpb);
    Ok((grad, inj_grads))
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize) -> AdamState {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn with_lr(mut self, lr: f64) -> AdamState {
        self.lr = lr;
        self
    }
}

/// Standard bias-corrected Adam update, in place.
pub fn adam_step(params: &mut ParamVector, grads: &ParamVector, state: &mut AdamState) -> Result<()> {
    adam_step_raw(&mut params.data, &grads.data, state)
}

/// As [`adam_step`] but over bare slices (used for parameter groups
/// that are not full network layouts, e.g. lateral adapters).
pub fn adam_step_raw(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Shape {
            expected: params.len(),
            got: grads.len(),
            context: "adam_step",
        });
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient coordinate {i}")));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        params[i] -= state.lr * mhat / (vhat.sqrt() + state.eps);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    spec: MLPSpec,
    layout: Layout,
}

/// Writes a version-tagged checkpoint: JSON header line followed by
/// the raw little-endian 64-bit float array.
pub fn save_params(path: &std::path::Path, spec: &MLPSpec, params: &ParamVector) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        spec: *spec,
        layout: params.layout.clone(),
    };
    writeln!(f, "{}", serde_json::to_string(&header).unwrap())?;
    for v in &params.data {
        f.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_params(path: &std::path::Path) -> Result<(MLPSpec, ParamVector)> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut header_line = String::new();
    std::io::BufRead::read_line(&mut f, &mut header_line)?;
    let header: CheckpointHeader = serde_json::from_str(&header_line).map_err(|e| Error::Parse {
        offset: e.column().saturating_sub(1),
        message: format!("checkpoint header: {e}"),
    })?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::validation(format!(
            "unsupported checkpoint version {}",
            header.version
        )));
    }
    let total = header.layout.total();
    let mut raw = Vec::with_capacity(total * 8);
    f.read_to_end(&mut raw)?;
    if raw.len() != total * 8 {
        return Err(Error::Parse {
            offset: header_line.len() + raw.len(),
            message: format!("expected {} payload bytes, got {}", total * 8, raw.len()),
        });
    }
    let data: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((
        header.spec,
        ParamVector {
            data,
            layout: header.layout,
        },
    ))
}

// ---------------------------------------------------------------------------
// Finite-difference oracle (test support)
// ---------------------------------------------------------------------------

/// Central finite-difference gradient of `loss(params)`; the oracle
/// against which every analytic gradient in the crate is checked.
pub fn finite_difference_grad<F: FnMut(&ParamVector) -> f64>(
    params: &ParamVector,
    step: f64,
    mut loss: F,
) -> Vec<f64> {
    let mut out = vec![0.0; params.len()];
    let mut p = params.clone();
    for i in 0..p.data.len() {
        let orig = p.data[i];
        p.data[i] = orig + step;
        let up = loss(&p);
        p.data[i] = orig - step;
        let down = loss(&p);
        p.data[i] = orig;
        out[i] = (up - down) / (2.0 * step);
    }
    out
}

/// Maximum relative error between an analytic gradient and the
/// finite-difference oracle.
pub fn max_rel_error(analytic: &[f64], fd: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(fd)
        .map(|(a, b)| (a - b).abs() / (a.abs().max(b.abs()) + 1e-6))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn small_spec() -> MLPSpec {
        MLPSpec {
            input_dim: 3,
            hidden_width: 8,
            n_hidden_blocks: 2,
            output_dim: 2,
            residual: true,
            layernorm: true,
        }
    }

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Mat::zeros(rows, cols);
        for v in m.data.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        m
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        // 1 * Phi(1), closed-form normal CDF.
        assert!((gelu(1.0) - 0.841344746068543).abs() < 1e-12);
        assert!((gelu(-1.0) + gelu(1.0) - (-1.0 + 1.0 * 1.0)).abs() < 1.0); // odd-ish sanity
    }

    #[test]
    fn layernorm_constant_row_is_zero_pre_affine() {
        let spec = MLPSpec {
            input_dim: 3,
            hidden_width: 3,
            n_hidden_blocks: 1,
            output_dim: 1,
            residual: false,
            layernorm: true,
        };
        // Identity lin1 with zero bias: feed [1,1,1] straight into LN.
        let mut p = init_params(&spec, 0);
        let e = p.layout.find("block0.lin1.w").clone();
        p.data[e.offset..e.offset + 9].copy_from_slice(&[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let e = p.layout.find("proj.w").clone();
        p.data[e.offset..e.offset + 9].copy_from_slice(&[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let x = Mat::from_rows(vec![vec![1.0, 1.0, 1.0]]);
        let (_, tape) = forward(&spec, &p, &x).unwrap();
        for v in &tape.blocks[0].xhat.data {
            assert!(v.abs() < 1e-9, "xhat {v}");
        }
    }

    #[test]
    fn init_variance_matches_scaling() {
        let spec = MLPSpec::new(64, 2);
        let p = init_params(&spec, 3);
        let (w1, shape) = p.slice("block0.lin1.w");
        assert_eq!(shape, [64, 64]);
        let mean = w1.iter().sum::<f64>() / w1.len() as f64;
        let var = w1.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w1.len() as f64;
        // Truncation at 2 std shrinks the variance by the factor
        // 1 - 2*2*phi(2)/(2*Phi(2)-1) ~= 0.7737.
        let want = 0.7737 * 0.1 / 64.0;
        assert!((var / want - 1.0).abs() < 0.1, "var {var} want {want}");
        let (b, _) = p.slice("proj.b");
        assert!(b.iter().all(|v| *v == 0.0));
        let (g, _) = p.slice("block0.ln.g");
        assert!(g.iter().all(|v| *v == 1.0));
        assert_eq!(p, init_params(&spec, 3));
        assert_ne!(p, init_params(&spec, 4));
    }

    #[test]
    fn zero_output_gradient_gives_zero_param_gradient() {
        let spec = small_spec();
        let p = init_params(&spec, 1);
        let x = random_batch(4, 3, 2);
        let (_, tape) = forward(&spec, &p, &x).unwrap();
        let g = backward(&spec, &p, &tape, &Mat::zeros(4, 2)).unwrap();
        assert!(g.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn duplicated_rows_double_the_gradient() {
        let spec = small_spec();
        let p = init_params(&spec, 1);
        let x1 = random_batch(1, 3, 2);
        let mut x2 = Mat::zeros(2, 3);
        x2.row_mut(0).copy_from_slice(x1.row(0));
        x2.row_mut(1).copy_from_slice(x1.row(0));
        let og1 = Mat::from_rows(vec![vec![0.3, -0.7]]);
        let og2 = Mat::from_rows(vec![vec![0.3, -0.7], vec![0.3, -0.7]]);
        let (_, t1) = forward(&spec, &p, &x1).unwrap();
        let (_, t2) = forward(&spec, &p, &x2).unwrap();
        let g1 = backward(&spec, &p, &t1, &og1).unwrap();
        let g2 = backward(&spec, &p, &t2, &og2).unwrap();
        for (a, b) in g1.data.iter().zip(&g2.data) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let spec = small_spec();
        let p = init_params(&spec, 5);
        let x = random_batch(4, 3, 6);
        let og = random_batch(4, 2, 7);
        let (_, tape) = forward(&spec, &p, &x).unwrap();
        let analytic = backward(&spec, &p, &tape, &og).unwrap();
        let fd = finite_difference_grad(&p, 1e-5, |pp| {
            let (out, _) = forward(&spec, pp, &x).unwrap();
            out.data.iter().zip(&og.data).map(|(a, b)| a * b).sum()
        });
        let err = max_rel_error(&analytic.data, &fd);
        assert!(err < 1e-5, "max rel err {err}");
    }

    #[test]
    fn gradient_check_over_random_configurations() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..20 {
            let spec = MLPSpec {
                input_dim: rng.gen_range(2..5),
                hidden_width: rng.gen_range(4..10),
                n_hidden_blocks: rng.gen_range(1..3),
                output_dim: rng.gen_range(1..4),
                residual: rng.gen(),
                layernorm: rng.gen(),
            };
            let p = init_params(&spec, trial);
            let x = random_batch(3, spec.input_dim, trial + 100);
            let og = random_batch(3, spec.output_dim, trial + 200);
            let (_, tape) = forward(&spec, &p, &x).unwrap();
            let analytic = backward(&spec, &p, &tape, &og).unwrap();
            let fd = finite_difference_grad(&p, 1e-5, |pp| {
                let (out, _) = forward(&spec, pp, &x).unwrap();
                out.data.iter().zip(&og.data).map(|(a, b)| a * b).sum()
            });
            // FD roundoff dominates on near-zero coordinates at
            // tiny widths, hence the looser sweep tolerance.
            let err = max_rel_error(&analytic.data, &fd);
            assert!(err < 1e-3, "trial {trial} ({spec:?}): max rel err {err}");
        }
    }

    #[test]
    fn injection_gradients_match_finite_differences() {
        let spec = small_spec();
        let p = init_params(&spec, 8);
        let x = random_batch(2, 3, 9);
        let og = random_batch(2, 2, 10);
        let inj: Vec<Mat> = (0..2).map(|i| random_batch(2, 8, 20 + i)).collect();
        let (_, tape) = forward_with_injections(&spec, &p, &x, Some(&inj)).unwrap();
        let (_, inj_grads) = backward_with_injections(&spec, &p, &tape, &og).unwrap();
        for b in 0..2 {
            for r in 0..2 {
                for c in 0..8 {
                    let h = 1e-5;
                    let mut up = inj.clone();
                    up[b].row_mut(r)[c] += h;
                    let mut down = inj.clone();
                    down[b].row_mut(r)[c] -= h;
                    let fu: f64 = {
                        let (o, _) = forward_with_injections(&spec, &p, &x, Some(&up)).unwrap();
                        o.data.iter().zip(&og.data).map(|(a, g)| a * g).sum()
                    };
                    let fdn: f64 = {
                        let (o, _) = forward_with_injections(&spec, &p, &x, Some(&down)).unwrap();
                        o.data.iter().zip(&og.data).map(|(a, g)| a * g).sum()
                    };
                    let fd = (fu - fdn) / (2.0 * h);
                    let an = inj_grads[b].row(r)[c];
                    assert!((an - fd).abs() / (an.abs().max(fd.abs()) + 1e-6) < 1e-4);
                }
            }
        }
    }

    #[test]
    fn adam_zero_gradient_is_a_fixed_point() {
        let spec = small_spec();
        let mut p = init_params(&spec, 1);
        let before = p.clone();
        let mut st = AdamState::new(p.len());
        let zero = ParamVector::zeros_like(&p);
        adam_step(&mut p, &zero, &mut st).unwrap();
        assert_eq!(p.data, before.data);
        assert!(st.m.iter().all(|m| *m == 0.0));
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_first_step_matches_closed_form() {
        let spec = small_spec();
        let mut p = init_params(&spec, 2);
        let before = p.clone();
        let mut st = AdamState::new(p.len());
        let mut g = ParamVector::zeros_like(&p);
        g.data.fill(0.25);
        adam_step(&mut p, &g, &mut st).unwrap();
        // First step from zero state: mhat = g, vhat = g^2, so
        // delta = -lr * g / (|g| + eps).
        let want = st.lr * 0.25 / (0.25 + st.eps);
        for (a, b) in p.data.iter().zip(&before.data) {
            assert!((b - a - want).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_rejects_nonfinite_gradient_with_coordinate() {
        let spec = small_spec();
        let mut p = init_params(&spec, 2);
        let mut st = AdamState::new(p.len());
        let mut g = ParamVector::zeros_like(&p);
        g.data[17] = f64::NAN;
        let err = adam_step(&mut p, &g, &mut st).unwrap_err().to_string();
        assert!(err.contains("17"), "{err}");
    }

    #[test]
    fn training_trajectories_are_bitwise_deterministic() {
        let spec = small_spec();
        let run = || {
            let mut p = init_params(&spec, 4);
            let mut st = AdamState::new(p.len());
            let x = random_batch(4, 3, 5);
            let og = random_batch(4, 2, 6);
            for _ in 0..10 {
                let (_, tape) = forward(&spec, &p, &x).unwrap();
                let g = backward(&spec, &p, &tape, &og).unwrap();
                adam_step(&mut p, &g, &mut st).unwrap();
            }
            p
        };
        assert_eq!(run().data, run().data);
    }

    #[test]
    fn param_count_matches_hand_sum() {
        let spec = MLPSpec::new(13, 2);
        // proj 13*64+64, per block (64*64+64)+(64+64)+(64*64+64), head 64*2+2.
        let per_block = 64 * 64 + 64 + 64 + 64 + 64 * 64 + 64;
        let want = 13 * 64 + 64 + 3 * per_block + 64 * 2 + 2;
        assert_eq!(param_count(&spec), want);
        assert_eq!(init_params(&spec, 0).len(), want);
        assert_eq!(init_params(&spec, 1).len(), want); // seed-invariant
    }

    #[test]
    fn flatten_unflatten_identity() {
        let spec = small_spec();
        let p = init_params(&spec, 12);
        let back = unflatten(&spec, flatten(&p)).unwrap();
        assert_eq!(p, back);
        assert!(unflatten(&spec, vec![0.0; 3]).is_err());
    }

    #[test]
    fn checkpoint_round_trip_bitwise() {
        let spec = small_spec();
        let p = init_params(&spec, 13);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_params(&path, &spec, &p).unwrap();
        let (spec2, p2) = load_params(&path).unwrap();
        assert_eq!(spec, spec2);
        assert_eq!(p, p2);
    }

    proptest! {
        #[test]
        fn finite_inputs_give_finite_outputs(
            seed in 0u64..1000,
            vals in proptest::collection::vec(-10.0f64..10.0, 6),
        ) {
            let spec = small_spec();
            let p = init_params(&spec, seed);
            let x = Mat::from_rows(vec![vals[..3].to_vec(), vals[3..].to_vec()]);
            let (out, _) = forward(&spec, &p, &x).unwrap();
            prop_assert!(out.data.iter().all(|v| v.is_finite()));
        }
    }
}
