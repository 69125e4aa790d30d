//! Multi-head self-attention under global, shifted-window and hybrid layouts,
//! and the pre-norm transformer block built on top of it.
//!
//! Windowed attention gathers each window's tokens, attends within the window
//! and scatters the results back. Grids that do not divide by the window are
//! tiled with smaller edge windows, which is the same as padding the grid with
//! inert tokens that no query may attend to.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::init::trunc_normal;
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::patches::PatchGridSpec;

pub const LN_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub win_t: usize,
    pub win_f: usize,
    pub shift_t: usize,
    pub shift_f: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerAttention {
    Global,
    Windowed(WindowSpec),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionLayout {
    pub kind: LayerAttention,
    pub grid: PatchGridSpec,
}

impl AttentionLayout {
    pub fn global(grid: PatchGridSpec) -> Self {
        AttentionLayout {
            kind: LayerAttention::Global,
            grid,
        }
    }
}

/// Decoder attention family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AttentionKind {
    Global,
    Local,
    /// `local` windowed layers followed by `global` global layers.
    Hybrid {
        local: usize,
        global: usize,
    },
}

impl AttentionKind {
    pub const HYBRID_DEFAULT: AttentionKind = AttentionKind::Hybrid {
        local: 8,
        global: 4,
    };
}

impl std::str::FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(AttentionKind::Global),
            "local" => Ok(AttentionKind::Local),
            "hybrid" => Ok(AttentionKind::HYBRID_DEFAULT),
            other => Err(Error::Config(format!("unknown attention kind {other:?}"))),
        }
    }
}

/// Per-layer layouts for a decoder of `depth` blocks. Windows are
/// `window` tokens, clamped to the grid, shifted by half on odd layers.
pub fn build_decoder_layouts(
    depth: usize,
    kind: AttentionKind,
    grid: PatchGridSpec,
    window: (usize, usize),
) -> Vec<AttentionLayout> {
    let win_t = window.0.clamp(1, grid.grid_t);
    let win_f = window.1.clamp(1, grid.grid_f);
    let windowed = |layer: usize| {
        let shifted = layer % 2 == 1;
        let spec = WindowSpec {
            win_t,
            win_f,
            shift_t: if shifted { win_t / 2 } else { 0 },
            shift_f: if shifted { win_f / 2 } else { 0 },
        };
        AttentionLayout {
            kind: LayerAttention::Windowed(spec),
            grid,
        }
    };
    match kind {
        AttentionKind::Global => vec![AttentionLayout::global(grid); depth],
        AttentionKind::Local => (0..depth).map(windowed).collect(),
        AttentionKind::Hybrid { local, global } => (0..local)
            .map(windowed)
            .chain(std::iter::repeat(AttentionLayout::global(grid)).take(global))
            .collect(),
    }
}

/// Token groups for one windowed layer. `windows[w]` holds original token
/// indices of window `w`, row-major inside the window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowPartition {
    pub windows: Vec<Vec<usize>>,
    pub n_tokens: usize,
}

impl WindowPartition {
    /// Concatenated window order.
    pub fn order(&self) -> Vec<usize> {
        self.windows.iter().flatten().copied().collect()
    }

    /// `inverse()[i]` is the position of token `i` in `order()`.
    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.n_tokens];
        for (pos, i) in self.order().into_iter().enumerate() {
            inv[i] = pos;
        }
        inv
    }

    /// Row-major allowed-pair mask: `i` may attend to `j` iff they share a window.
    pub fn allowed_mask(&self) -> Vec<bool> {
        let n = self.n_tokens;
        let mut m = vec![false; n * n];
        for w in &self.windows {
            for &i in w {
                for &j in w {
                    m[i * n + j] = true;
                }
            }
        }
        m
    }

    pub fn split(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.windows.iter().map(|w| x.gather_rows(w)).collect()
    }

    pub fn merge(&self, parts: &[Tensor]) -> Result<Tensor> {
        let refs: Vec<&Tensor> = parts.iter().collect();
        Tensor::concat_rows(&refs)?.gather_rows(&self.inverse())
    }
}

/// Rolls the grid by `(−shift_t, −shift_f)` and tiles it with windows,
/// stepping time-major over windows.
pub fn window_partition(grid: &PatchGridSpec, w: &WindowSpec) -> Result<WindowPartition> {
    let (gt, gf) = (grid.grid_t, grid.grid_f);
    if w.win_t == 0 || w.win_f == 0 || w.win_t > gt || w.win_f > gf {
        return Err(Error::Attention(format!(
            "{}x{} window does not fit a {gt}x{gf} grid",
            w.win_t, w.win_f
        )));
    }
    if w.shift_t >= w.win_t || w.shift_f >= w.win_f {
        return Err(Error::Attention(format!(
            "shift ({}, {}) must be smaller than the {}x{} window",
            w.shift_t, w.shift_f, w.win_t, w.win_f
        )));
    }
    let mut windows = Vec::with_capacity(gt.div_ceil(w.win_t) * gf.div_ceil(w.win_f));
    for t0 in (0..gt).step_by(w.win_t) {
        for f0 in (0..gf).step_by(w.win_f) {
            let mut tokens = Vec::with_capacity(w.win_t * w.win_f);
            for t in t0..(t0 + w.win_t).min(gt) {
                for f in f0..(f0 + w.win_f).min(gf) {
                    tokens.push(grid.index((t + w.shift_t) % gt, (f + w.shift_f) % gf));
                }
            }
            windows.push(tokens);
        }
    }
    Ok(WindowPartition {
        windows,
        n_tokens: gt * gf,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionWeights {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub heads: usize,
}

impl AttentionWeights {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "{heads} heads do not divide width {dim}"
            )));
        }
        let mut pair = |name: &str, rng: &mut dyn RngCore| -> Result<(ParamId, ParamId)> {
            let w = store.add(
                format!("{prefix}.{name}.weight"),
                trunc_normal(&[dim, dim], 0.02, rng),
            )?;
            let b = store.add(format!("{prefix}.{name}.bias"), Tensor::zeros([dim]))?;
            Ok((w, b))
        };
        let (wq, bq) = pair("q", rng)?;
        let (wk, bk) = pair("k", rng)?;
        let (wv, bv) = pair("v", rng)?;
        let (wo, bo) = pair("o", rng)?;
        Ok(AttentionWeights {
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
            heads,
        })
    }

    pub fn param_ids(&self) -> [ParamId; 8] {
        [
            self.wq, self.bq, self.wk, self.bk, self.wv, self.bv, self.wo, self.bo,
        ]
    }
}

fn head_dim(tape: &Tape, x: Var, heads: usize) -> Result<(usize, usize, usize)> {
    let (n, d) = tape.value(x).dims2()?;
    if heads == 0 || d % heads != 0 {
        return Err(Error::Attention(format!(
            "{heads} heads do not divide width {d}"
        )));
    }
    Ok((n, d, d / heads))
}

/// Per-head attention probabilities, `heads` matrices of `n×n`.
pub fn attention_probs(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    w: &AttentionWeights,
    allowed: Option<&[bool]>,
) -> Result<Vec<Var>> {
    let (_, _, hd) = head_dim(tape, x, w.heads)?;
    let (wq, bq) = (tape.param(store, w.wq), tape.param(store, w.bq));
    let (wk, bk) = (tape.param(store, w.wk), tape.param(store, w.bk));
    let q = tape.linear(x, wq, bq)?;
    let k = tape.linear(x, wk, bk)?;
    let scale = 1.0 / (hd as f64).sqrt();
    (0..w.heads)
        .map(|h| {
            let qh = tape.slice_cols(q, h * hd, hd)?;
            let kh = tape.slice_cols(k, h * hd, hd)?;
            let kt = tape.transpose(kh)?;
            let s = tape.matmul(qh, kt)?;
            let s = tape.scale(s, scale);
            tape.softmax_rows(s, allowed)
        })
        .collect()
}

/// `softmax(QKᵀ/√d_h)V` per head, heads concatenated and projected by `O`.
/// `allowed` is a row-major `n×n` mask; disallowed pairs get zero weight.
pub fn multi_head_attention(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    w: &AttentionWeights,
    allowed: Option<&[bool]>,
) -> Result<Var> {
    let (n, _, hd) = head_dim(tape, x, w.heads)?;
    if let Some(m) = allowed {
        if m.len() != n * n {
            return Err(Error::Attention(format!(
                "mask of {} entries for {n} tokens",
                m.len()
            )));
        }
    }
    let probs = attention_probs(tape, store, x, w, allowed)?;
    let (wv, bv) = (tape.param(store, w.wv), tape.param(store, w.bv));
    let v = tape.linear(x, wv, bv)?;
    let mut heads = Vec::with_capacity(w.heads);
    for (h, p) in probs.into_iter().enumerate() {
        let vh = tape.slice_cols(v, h * hd, hd)?;
        heads.push(tape.matmul(p, vh)?);
    }
    let cat = if heads.len() == 1 {
        heads[0]
    } else {
        tape.concat_cols(&heads)?
    };
    let (wo, bo) = (tape.param(store, w.wo), tape.param(store, w.bo));
    tape.linear(cat, wo, bo)
}

/// Attention computed independently inside each window of the partition.
pub fn windowed_attention(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    w: &AttentionWeights,
    grid: &PatchGridSpec,
    spec: &WindowSpec,
) -> Result<Var> {
    let part = window_partition(grid, spec)?;
    if tape.value(x).rows() != part.n_tokens {
        return Err(Error::Attention(format!(
            "{} tokens on a {}x{} grid",
            tape.value(x).rows(),
            grid.grid_t,
            grid.grid_f
        )));
    }
    let mut outs = Vec::with_capacity(part.windows.len());
    for idx in &part.windows {
        let xw = tape.gather_rows(x, idx)?;
        outs.push(multi_head_attention(tape, store, xw, w, None)?);
    }
    let cat = tape.concat_rows(&outs)?;
    tape.gather_rows(cat, &part.inverse())
}

pub fn attend(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    w: &AttentionWeights,
    layout: &AttentionLayout,
) -> Result<Var> {
    match &layout.kind {
        LayerAttention::Global => multi_head_attention(tape, store, x, w, None),
        LayerAttention::Windowed(spec) => windowed_attention(tape, store, x, w, &layout.grid, spec),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockWeights {
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub attn: AttentionWeights,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
    pub fc1_w: ParamId,
    pub fc1_b: ParamId,
    pub fc2_w: ParamId,
    pub fc2_b: ParamId,
}

impl BlockWeights {
    /// Registers one block with hidden MLP width `4·dim`.
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let ln1_g = store.add(format!("{prefix}.norm1.weight"), Tensor::full([dim], 1.0))?;
        let ln1_b = store.add(format!("{prefix}.norm1.bias"), Tensor::zeros([dim]))?;
        let attn = AttentionWeights::register(store, &format!("{prefix}.attn"), dim, heads, rng)?;
        let ln2_g = store.add(format!("{prefix}.norm2.weight"), Tensor::full([dim], 1.0))?;
        let ln2_b = store.add(format!("{prefix}.norm2.bias"), Tensor::zeros([dim]))?;
        let hidden = 4 * dim;
        let fc1_w = store.add(
            format!("{prefix}.mlp.fc1.weight"),
            trunc_normal(&[dim, hidden], 0.02, rng),
        )?;
        let fc1_b = store.add(format!("{prefix}.mlp.fc1.bias"), Tensor::zeros([hidden]))?;
        let fc2_w = store.add(
            format!("{prefix}.mlp.fc2.weight"),
            trunc_normal(&[hidden, dim], 0.02, rng),
        )?;
        let fc2_b = store.add(format!("{prefix}.mlp.fc2.bias"), Tensor::zeros([dim]))?;
        Ok(BlockWeights {
            ln1_g,
            ln1_b,
            attn,
            ln2_g,
            ln2_b,
            fc1_w,
            fc1_b,
            fc2_w,
            fc2_b,
        })
    }

    /// Trainable scalars in one block of width `d`.
    pub fn param_count(d: usize) -> usize {
        4 * (d * d + d) + 2 * 2 * d + (d * 4 * d + 4 * d) + (4 * d * d + d)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.ln1_g, self.ln1_b];
        ids.extend(self.attn.param_ids());
        ids.extend([
            self.ln2_g, self.ln2_b, self.fc1_w, self.fc1_b, self.fc2_w, self.fc2_b,
        ]);
        ids
    }
}

/// Stochastic depth for one sequence: the residual branch is dropped with
/// probability `rate`, otherwise scaled by `1/(1−rate)`.
pub struct DropPath<'a> {
    pub rate: f64,
    pub rng: &'a mut dyn RngCore,
}

impl DropPath<'_> {
    fn apply(&mut self, tape: &mut Tape, branch: Var) -> Var {
        if self.rate <= 0.0 {
            return branch;
        }
        if self.rng.gen::<f64>() < self.rate {
            tape.scale(branch, 0.0)
        } else {
            tape.scale(branch, 1.0 / (1.0 - self.rate))
        }
    }
}

/// Pre-norm block: `x + Attn(LN(x))`, then `+ MLP(LN(·))` with a GELU MLP.
/// Pass `drop` only at train time.
pub fn transformer_block(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    w: &BlockWeights,
    layout: &AttentionLayout,
    mut drop: Option<&mut DropPath<'_>>,
) -> Result<Var> {
    let (g1, b1) = (tape.param(store, w.ln1_g), tape.param(store, w.ln1_b));
    let h = tape.layer_norm(x, g1, b1, LN_EPS)?;
    let mut a = attend(tape, store, h, &w.attn, layout)?;
    if let Some(d) = drop.as_deref_mut() {
        a = d.apply(tape, a);
    }
    let x = tape.add(x, a)?;
    let (g2, b2) = (tape.param(store, w.ln2_g), tape.param(store, w.ln2_b));
    let h = tape.layer_norm(x, g2, b2, LN_EPS)?;
    let (w1, c1) = (tape.param(store, w.fc1_w), tape.param(store, w.fc1_b));
    let h = tape.linear(h, w1, c1)?;
    let h = tape.gelu(h);
    let (w2, c2) = (tape.param(store, w.fc2_w), tape.param(store, w.fc2_b));
    let mut m = tape.linear(h, w2, c2)?;
    if let Some(d) = drop {
        m = d.apply(tape, m);
    }
    tape.add(x, m)
}
