//! Parameterized building blocks over the tensor tape.

use promode_tensor::{ParamId, ParamStore, Real, Result, Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Creates named parameters with seeded initial values.
pub struct Init<'a, F: Real> {
    pub store: &'a mut ParamStore<F>,
    pub rng: ChaCha8Rng,
}

impl<F: Real> Init<'_, F> {
    fn add(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) -> ParamId {
        let data = data.into_iter().map(F::c).collect();
        self.store
            .add(name, Tensor::new(shape, data).expect("init shape"))
            .unwrap_or_else(|e| panic!("model construction: {e}"))
    }

    pub fn normal(&mut self, name: &str, shape: Vec<usize>, std: f64) -> ParamId {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                std * z
            })
            .collect::<Vec<f64>>();
        self.add(name, shape, data)
    }

    pub fn constant(&mut self, name: &str, shape: Vec<usize>, value: f64) -> ParamId {
        let n = shape.iter().product();
        self.add(name, shape, vec![value; n])
    }

    pub fn uniform(&mut self, name: &str, shape: Vec<usize>, bound: f64) -> ParamId {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| self.rng.random_range(-bound..=bound))
            .collect();
        self.add(name, shape, data)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    /// Fan-in scaled normal weights, zero bias.
    pub fn new<F: Real>(init: &mut Init<'_, F>, name: &str, input: usize, output: usize) -> Self {
        let w = init.normal(
            &format!("{name}.w"),
            vec![input, output],
            1.0 / (input as f64).sqrt(),
        );
        let b = init.constant(&format!("{name}.b"), vec![output], 0.0);
        Self { w, b: Some(b) }
    }

    /// All-zero weights and bias.
    pub fn zero<F: Real>(init: &mut Init<'_, F>, name: &str, input: usize, output: usize) -> Self {
        let w = init.constant(&format!("{name}.w"), vec![input, output], 0.0);
        let b = init.constant(&format!("{name}.b"), vec![output], 0.0);
        Self { w, b: Some(b) }
    }

    pub fn no_bias<F: Real>(
        init: &mut Init<'_, F>,
        name: &str,
        input: usize,
        output: usize,
    ) -> Self {
        let w = init.normal(
            &format!("{name}.w"),
            vec![input, output],
            1.0 / (input as f64).sqrt(),
        );
        Self { w, b: None }
    }

    pub fn apply<F: Real>(&self, tape: &mut Tape<'_, F>, x: Var) -> Result<Var> {
        let w = tape.param(self.w);
        let b = self.b.map(|b| tape.param(b));
        tape.linear(x, w, b)
    }
}

/// Bound of the uniform feature-projection bias.
pub const FEATURE_BIAS_BOUND: f64 = 2.0;

/// affine → ReLU → layer norm.
///
/// Layer norm is scale invariant, so with a zero bias the magnitude of a
/// scalar input would not survive. Random biases spread the ReLU kinks over
/// the input range and keep the magnitude recoverable.
#[derive(Debug, Clone)]
pub struct FeatureStack {
    pub proj: Linear,
}

impl FeatureStack {
    pub fn new<F: Real>(init: &mut Init<'_, F>, name: &str, input: usize, output: usize) -> Self {
        let w = init.normal(
            &format!("{name}.proj.w"),
            vec![input, output],
            1.0 / (input as f64).sqrt(),
        );
        let b = init.uniform(&format!("{name}.proj.b"), vec![output], FEATURE_BIAS_BOUND);
        Self {
            proj: Linear { w, b: Some(b) },
        }
    }

    pub fn apply<F: Real>(&self, tape: &mut Tape<'_, F>, x: Var) -> Result<Var> {
        let h = self.proj.apply(tape, x)?;
        let h = tape.relu(h);
        Ok(tape.layer_norm(h))
    }
}

/// ConvNeXt-V2 block: depthwise conv → LN → expand → GELU → GRN → project, residual.
#[derive(Debug, Clone)]
pub struct ConvNeXt {
    pub dw_w: ParamId,
    pub dw_b: ParamId,
    pub expand: Linear,
    pub grn_gamma: ParamId,
    pub grn_beta: ParamId,
    pub project: Linear,
}

impl ConvNeXt {
    pub fn new<F: Real>(
        init: &mut Init<'_, F>,
        name: &str,
        dim: usize,
        hidden: usize,
        kernel: usize,
    ) -> Self {
        Self {
            dw_w: init.normal(
                &format!("{name}.dw.w"),
                vec![kernel, dim],
                1.0 / (kernel as f64).sqrt(),
            ),
            dw_b: init.constant(&format!("{name}.dw.b"), vec![dim], 0.0),
            expand: Linear::new(init, &format!("{name}.expand"), dim, hidden),
            grn_gamma: init.constant(&format!("{name}.grn.gamma"), vec![hidden], 0.0),
            grn_beta: init.constant(&format!("{name}.grn.beta"), vec![hidden], 0.0),
            project: Linear::new(init, &format!("{name}.project"), hidden, dim),
        }
    }

    pub fn apply<F: Real>(&self, tape: &mut Tape<'_, F>, x: Var) -> Result<Var> {
        let (w, b) = (tape.param(self.dw_w), tape.param(self.dw_b));
        let h = tape.depthwise_conv1d(x, w, b)?;
        let h = tape.layer_norm(h);
        let h = self.expand.apply(tape, h)?;
        let h = tape.gelu(h);
        let (g, beta) = (tape.param(self.grn_gamma), tape.param(self.grn_beta));
        let h = tape.grn(h, g, beta)?;
        let h = self.project.apply(tape, h)?;
        tape.add(x, h)
    }
}

/// Multi-head attention projections; `rotary` rotates queries (and keys, for self-attention).
#[derive(Debug, Clone)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub rotary: bool,
}

impl Attention {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Real>(
        init: &mut Init<'_, F>,
        name: &str,
        query_dim: usize,
        kv_dim: usize,
        inner: usize,
        output: usize,
        heads: usize,
        rotary: bool,
    ) -> Self {
        Self {
            q: Linear::new(init, &format!("{name}.q"), query_dim, inner),
            k: Linear::new(init, &format!("{name}.k"), kv_dim, inner),
            v: Linear::new(init, &format!("{name}.v"), kv_dim, inner),
            o: Linear::new(init, &format!("{name}.o"), inner, output),
            heads,
            rotary,
        }
    }

    /// Cross-attention: queries from `x`, keys and values from `ctx`. Only queries are rotated.
    pub fn cross<F: Real>(&self, tape: &mut Tape<'_, F>, x: Var, ctx: Var) -> Result<Var> {
        let mut q = self.q.apply(tape, x)?;
        let k = self.k.apply(tape, ctx)?;
        let v = self.v.apply(tape, ctx)?;
        if self.rotary {
            let hd = tape.cols(q) / self.heads;
            q = tape.rotary(q, hd, 0)?;
        }
        let a = tape.attention(q, k, v, self.heads, None)?;
        self.o.apply(tape, a)
    }

    pub fn self_attend<F: Real>(&self, tape: &mut Tape<'_, F>, x: Var) -> Result<Var> {
        let mut q = self.q.apply(tape, x)?;
        let mut k = self.k.apply(tape, x)?;
        let v = self.v.apply(tape, x)?;
        if self.rotary {
            let hd = tape.cols(q) / self.heads;
            q = tape.rotary(q, hd, 0)?;
            k = tape.rotary(k, hd, 0)?;
        }
        let a = tape.attention(q, k, v, self.heads, None)?;
        self.o.apply(tape, a)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<F: Real>(init: &mut Init<'_, F>, name: &str, dim: usize, hidden: usize) -> Self {
        Self {
            up: Linear::new(init, &format!("{name}.up"), dim, hidden),
            down: Linear::new(init, &format!("{name}.down"), hidden, dim),
        }
    }

    pub fn apply<F: Real>(&self, tape: &mut Tape<'_, F>, x: Var) -> Result<Var> {
        let h = self.up.apply(tape, x)?;
        let h = tape.gelu(h);
        self.down.apply(tape, h)
    }
}

/// Pre-norm transformer layer over latents (no positional encoding).
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    pub attn: Attention,
    pub ff: FeedForward,
}

impl TransformerLayer {
    pub fn new<F: Real>(
        init: &mut Init<'_, F>,
        name: &str,
        dim: usize,
        heads: usize,
        ff: usize,
    ) -> Self {
        Self {
            attn: Attention::new(
                init,
                &format!("{name}.attn"),
                dim,
                dim,
                dim,
                dim,
                heads,
                false,
            ),
            ff: FeedForward::new(init, &format!("{name}.ff"), dim, ff),
        }
    }

    pub fn apply<F: Real>(&self, tape: &mut Tape<'_, F>, x: Var) -> Result<Var> {
        let h = tape.layer_norm(x);
        let h = self.attn.self_attend(tape, h)?;
        let x = tape.add(x, h)?;
        let h = tape.layer_norm(x);
        let h = self.ff.apply(tape, h)?;
        tape.add(x, h)
    }
}

/// Conditional transformer layer with adaLN-zero modulation.
///
/// `mods` holds (shift₁, scale₁, gate₁, shift₂, scale₂, gate₂), each `[T, C]`.
#[derive(Debug, Clone)]
pub struct AdaLnLayer {
    pub attn: Attention,
    pub ff: FeedForward,
}

impl AdaLnLayer {
    pub fn new<F: Real>(
        init: &mut Init<'_, F>,
        name: &str,
        heads: usize,
        head_dim: usize,
        ff: usize,
    ) -> Self {
        let dim = heads * head_dim;
        Self {
            attn: Attention::new(
                init,
                &format!("{name}.attn"),
                dim,
                dim,
                dim,
                dim,
                heads,
                true,
            ),
            ff: FeedForward::new(init, &format!("{name}.ff"), dim, ff),
        }
    }

    fn modulate<F: Real>(tape: &mut Tape<'_, F>, x: Var, shift: Var, scale: Var) -> Result<Var> {
        let h = tape.layer_norm(x);
        let s = tape.add_const(scale, F::one());
        let h = tape.mul(h, s)?;
        tape.add(h, shift)
    }

    pub fn apply<F: Real>(&self, tape: &mut Tape<'_, F>, x: Var, mods: &[Var; 6]) -> Result<Var> {
        let h = Self::modulate(tape, x, mods[0], mods[1])?;
        let h = self.attn.self_attend(tape, h)?;
        let h = tape.mul(h, mods[2])?;
        let x = tape.add(x, h)?;
        let h = Self::modulate(tape, x, mods[3], mods[4])?;
        let h = self.ff.apply(tape, h)?;
        let h = tape.mul(h, mods[5])?;
        tape.add(x, h)
    }
}
