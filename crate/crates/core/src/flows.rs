//! Invertible perturbations `g` with analytic log-determinants and a
//! hand-written reverse pass.
//!
//! A [`FlowModel`] is an ordered stack of [`Layer`]s. Every layer maps
//! `x ↦ y` together with `log|det ∂y/∂x|`, can be inverted, and can pull a
//! gradient with respect to `(y, logdet)` back to its input and parameters.
//! Parameters are exposed as one flat vector per layer so the optimizer can
//! treat the whole model as a single buffer.

use serde::{Deserialize, Serialize};

use crate::dist::std_normal;
use crate::error::check_dim;
use crate::{rng_from_seed, Error, Result, Rng, Scalar};

/// Bound on per-coordinate log-scales of elementwise layers.
pub const MAX_LOG_SCALE: f64 = 5.0;

/// Fraction of the base slope that the bumps of a [`Layer::Monotone`] can add
/// or remove. Below 1 so the derivative stays strictly positive.
pub const MONOTONE_GAIN: f64 = 0.99;

fn clamp_log_scale<T: Scalar>(s: T) -> (T, T) {
    let m = T::lit(MAX_LOG_SCALE);
    if s > m {
        (m, T::zero())
    } else if s < -m {
        (-m, T::zero())
    } else {
        (s, T::one())
    }
}

/// Fully connected layer, `weights` stored as `out` rows of `in` entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
pub struct Dense<T> {
    pub weights: Vec<Vec<T>>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: vec![vec![T::zero(); inputs]; outputs],
            bias: vec![T::zero(); outputs],
        }
    }

    fn random(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let std = if inputs == 0 {
            T::zero()
        } else {
            (T::one() / T::from_usize_lossy(inputs)).sqrt()
        };
        let weights = (0..outputs)
            .map(|_| (0..inputs).map(|_| std * std_normal::<T>(rng)).collect())
            .collect();
        Self {
            weights,
            bias: vec![T::zero(); outputs],
        }
    }

    fn inputs(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    fn param_count(&self) -> usize {
        self.bias.len() * (self.inputs() + 1)
    }

    fn apply(&self, x: &[T]) -> Vec<T> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (&w, &xi)| acc + w * xi))
            .collect()
    }
}

/// Feed-forward conditioner: tanh hidden layers and a linear output layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
pub struct Mlp<T> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Scalar> Mlp<T> {
    /// Random hidden layers, zero output layer: the network starts at `0`.
    pub fn zero_output(inputs: usize, hidden: &[usize], outputs: usize, rng: &mut Rng) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = inputs;
        for &h in hidden {
            layers.push(Dense::random(fan_in, h, rng));
            fan_in = h;
        }
        layers.push(Dense::zeros(fan_in, outputs));
        Self { layers }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    /// Activations of every layer, starting with the input.
    fn activations(&self, x: &[T]) -> Vec<Vec<T>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut a = layer.apply(&acts[i]);
            if i < last {
                a.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(a);
        }
        acts
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        self.activations(x).pop().unwrap_or_default()
    }

    /// Reverse pass; accumulates `weight ×` parameter gradients into `grad`
    /// (laid out as in [`Mlp::write_params`]) and returns the input gradient.
    fn backward(&self, acts: &[Vec<T>], dout: &[T], grad: &mut [T]) -> Vec<T> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.param_count();
        }
        let last = self.layers.len() - 1;
        let mut delta = dout.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            if i < last {
                // through tanh: output activation a, da/dz = 1 − a²
                for (d, &a) in delta.iter_mut().zip(&acts[i + 1]) {
                    *d *= T::one() - a * a;
                }
            }
            let input = &acts[i];
            let n_in = layer.inputs();
            let g = &mut grad[offsets[i]..offsets[i] + layer.param_count()];
            let (gw, gb) = g.split_at_mut(layer.bias.len() * n_in);
            for (o, &d) in delta.iter().enumerate() {
                if d == T::zero() {
                    continue;
                }
                for (gwi, &xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                    *gwi += d * xi;
                }
                gb[o] += d;
            }
            let mut next = vec![T::zero(); n_in];
            for (row, &d) in layer.weights.iter().zip(&delta) {
                if d == T::zero() {
                    continue;
                }
                for (n, &w) in next.iter_mut().zip(row) {
                    *n += w * d;
                }
            }
            delta = next;
        }
        delta
    }

    fn write_params(&self, out: &mut Vec<T>) {
        for l in &self.layers {
            for row in &l.weights {
                out.extend_from_slice(row);
            }
            out.extend_from_slice(&l.bias);
        }
    }

    fn read_params(&mut self, src: &[T]) -> usize {
        let mut i = 0;
        for l in &mut self.layers {
            for row in &mut l.weights {
                let n = row.len();
                row.copy_from_slice(&src[i..i + n]);
                i += n;
            }
            let n = l.bias.len();
            l.bias.copy_from_slice(&src[i..i + n]);
            i += n;
        }
        i
    }
}

/// One invertible layer of a flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", bound = "T: Scalar")]
pub enum Layer<T> {
    /// `y = exp(s) ⊙ x + t`, `s` clamped to `±MAX_LOG_SCALE`.
    AffineDiagonal { log_scale: Vec<T>, shift: Vec<T> },
    /// `y_A = x_A + m(x_B)`, `y_B = x_B`, where `A` is the `mask` set.
    AdditiveCoupling { mask: Vec<bool>, net: Mlp<T> },
    /// `y[i] = x[perm[i]]`.
    Permutation { perm: Vec<usize> },
    /// Per coordinate,
    /// `y = e^s (x + Σₖ rₖ tanh(wₖ (x − cₖ)) / wₖ)` with
    /// `rₖ = MONOTONE_GAIN · tanh(aₖ) / K` and `wₖ = e^{ωₖ}`,
    /// so `dy/dx = e^s (1 + Σₖ rₖ sech²(·)) > 0`.
    Monotone {
        log_slope: Vec<T>,
        amplitude: Vec<Vec<T>>,
        log_width: Vec<Vec<T>>,
        center: Vec<Vec<T>>,
    },
}

struct BumpEval<T> {
    r: T,
    dr: T,
    w: T,
    u: T,
    th: T,
    sech2: T,
}

fn bumps<T: Scalar>(x: T, amp: &[T], log_w: &[T], center: &[T]) -> Vec<BumpEval<T>> {
    let k = T::from_usize_lossy(amp.len().max(1));
    let gain = T::lit(MONOTONE_GAIN) / k;
    amp.iter()
        .zip(log_w)
        .zip(center)
        .map(|((&a, &lw), &c)| {
            let ta = a.tanh();
            let w = lw.exp();
            let u = w * (x - c);
            let th = u.tanh();
            BumpEval {
                r: gain * ta,
                dr: gain * (T::one() - ta * ta),
                w,
                u,
                th,
                sech2: T::one() - th * th,
            }
        })
        .collect()
}

impl<T: Scalar> Layer<T> {
    pub fn param_count(&self) -> usize {
        match self {
            Layer::AffineDiagonal { log_scale, shift } => log_scale.len() + shift.len(),
            Layer::AdditiveCoupling { net, .. } => net.param_count(),
            Layer::Permutation { .. } => 0,
            Layer::Monotone {
                log_slope,
                amplitude,
                ..
            } => log_slope.len() + 3 * amplitude.iter().map(Vec::len).sum::<usize>(),
        }
    }

    pub fn write_params(&self, out: &mut Vec<T>) {
        match self {
            Layer::AffineDiagonal { log_scale, shift } => {
                out.extend_from_slice(log_scale);
                out.extend_from_slice(shift);
            }
            Layer::AdditiveCoupling { net, .. } => net.write_params(out),
            Layer::Permutation { .. } => {}
            Layer::Monotone {
                log_slope,
                amplitude,
                log_width,
                center,
            } => {
                out.extend_from_slice(log_slope);
                for block in [amplitude, log_width, center] {
                    for row in block {
                        out.extend_from_slice(row);
                    }
                }
            }
        }
    }

    pub fn read_params(&mut self, src: &[T]) -> usize {
        match self {
            Layer::AffineDiagonal { log_scale, shift } => {
                let d = log_scale.len();
                log_scale.copy_from_slice(&src[..d]);
                shift.copy_from_slice(&src[d..2 * d]);
                2 * d
            }
            Layer::AdditiveCoupling { net, .. } => net.read_params(src),
            Layer::Permutation { .. } => 0,
            Layer::Monotone {
                log_slope,
                amplitude,
                log_width,
                center,
            } => {
                let mut i = log_slope.len();
                log_slope.copy_from_slice(&src[..i]);
                for block in [amplitude, log_width, center] {
                    for row in block.iter_mut() {
                        let n = row.len();
                        row.copy_from_slice(&src[i..i + n]);
                        i += n;
                    }
                }
                i
            }
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Layer::AffineDiagonal { log_scale, shift } => {
                check_dim(dim, log_scale.len())?;
                check_dim(dim, shift.len())
            }
            Layer::AdditiveCoupling { mask, net } => {
                check_dim(dim, mask.len())?;
                let active = mask.iter().filter(|&&m| m).count();
                let first = net
                    .layers
                    .first()
                    .ok_or_else(|| Error::invalid("conditioner needs at least one layer"))?;
                let last = net.layers.last().unwrap();
                check_dim(dim - active, first.inputs())?;
                check_dim(active, last.bias.len())?;
                for pair in net.layers.windows(2) {
                    check_dim(pair[0].bias.len(), pair[1].inputs())?;
                }
                for l in &net.layers {
                    for row in &l.weights {
                        check_dim(l.inputs(), row.len())?;
                    }
                }
                Ok(())
            }
            Layer::Permutation { perm } => {
                check_dim(dim, perm.len())?;
                let mut seen = vec![false; dim];
                for &p in perm {
                    if p >= dim || seen[p] {
                        return Err(Error::invalid("permutation is not a bijection"));
                    }
                    seen[p] = true;
                }
                Ok(())
            }
            Layer::Monotone {
                log_slope,
                amplitude,
                log_width,
                center,
            } => {
                check_dim(dim, log_slope.len())?;
                for block in [amplitude, log_width, center] {
                    check_dim(dim, block.len())?;
                }
                for j in 0..dim {
                    check_dim(amplitude[j].len(), log_width[j].len())?;
                    check_dim(amplitude[j].len(), center[j].len())?;
                }
                Ok(())
            }
        }
    }

    /// Returns `(y, log|det ∂y/∂x|)`.
    pub fn forward(&self, x: &[T]) -> (Vec<T>, T) {
        match self {
            Layer::AffineDiagonal { log_scale, shift } => {
                let mut ld = T::zero();
                let y = x
                    .iter()
                    .zip(log_scale)
                    .zip(shift)
                    .map(|((&xi, &s), &t)| {
                        let (s, _) = clamp_log_scale(s);
                        ld += s;
                        s.exp() * xi + t
                    })
                    .collect();
                (y, ld)
            }
            Layer::AdditiveCoupling { mask, net } => {
                let cond: Vec<T> = select(x, mask, false);
                let out = net.apply(&cond);
                let mut y = x.to_vec();
                for (yi, o) in active_mut(&mut y, mask).zip(out) {
                    *yi += o;
                }
                (y, T::zero())
            }
            Layer::Permutation { perm } => (perm.iter().map(|&p| x[p]).collect(), T::zero()),
            Layer::Monotone {
                log_slope,
                amplitude,
                log_width,
                center,
            } => {
                let mut ld = T::zero();
                let mut y = Vec::with_capacity(x.len());
                for j in 0..x.len() {
                    let (s, _) = clamp_log_scale(log_slope[j]);
                    let e = s.exp();
                    let bs = bumps(x[j], &amplitude[j], &log_width[j], &center[j]);
                    let mut val = x[j];
                    let mut deriv = T::one();
                    for b in &bs {
                        val += b.r * b.th / b.w;
                        deriv += b.r * b.sech2;
                    }
                    y.push(e * val);
                    ld += s + deriv.ln();
                }
                (y, ld)
            }
        }
    }

    /// Inverse map. Returns `(x, log|det ∂y/∂x|)` evaluated at the recovered `x`.
    pub fn inverse(&self, y: &[T]) -> Result<(Vec<T>, T)> {
        match self {
            Layer::AffineDiagonal { log_scale, shift } => {
                let mut ld = T::zero();
                let x = y
                    .iter()
                    .zip(log_scale)
                    .zip(shift)
                    .map(|((&yi, &s), &t)| {
                        let (s, _) = clamp_log_scale(s);
                        ld += s;
                        (yi - t) * (-s).exp()
                    })
                    .collect();
                Ok((x, ld))
            }
            Layer::AdditiveCoupling { mask, net } => {
                let cond: Vec<T> = select(y, mask, false);
                let out = net.apply(&cond);
                let mut x = y.to_vec();
                for (xi, o) in active_mut(&mut x, mask).zip(out) {
                    *xi -= o;
                }
                Ok((x, T::zero()))
            }
            Layer::Permutation { perm } => {
                let mut x = vec![T::zero(); y.len()];
                for (i, &p) in perm.iter().enumerate() {
                    x[p] = y[i];
                }
                Ok((x, T::zero()))
            }
            Layer::Monotone {
                log_slope,
                amplitude,
                log_width,
                center,
            } => {
                let mut x = Vec::with_capacity(y.len());
                let mut ld = T::zero();
                for j in 0..y.len() {
                    let (s, _) = clamp_log_scale(log_slope[j]);
                    let target = y[j] * (-s).exp();
                    let (xj, deriv) =
                        solve_monotone(target, &amplitude[j], &log_width[j], &center[j]);
                    x.push(xj);
                    ld += s + deriv.ln();
                }
                Ok((x, ld))
            }
        }
    }

    /// Pulls `(gy, gld)` back through the layer at input `x`, accumulating
    /// parameter gradients into `grad` and returning the input gradient.
    pub fn backward(&self, x: &[T], gy: &[T], gld: T, grad: &mut [T]) -> Vec<T> {
        match self {
            Layer::AffineDiagonal { log_scale, .. } => {
                let d = x.len();
                let mut gx = Vec::with_capacity(d);
                for j in 0..d {
                    let (s, live) = clamp_log_scale(log_scale[j]);
                    let e = s.exp();
                    gx.push(gy[j] * e);
                    grad[j] += live * (gy[j] * x[j] * e + gld);
                    grad[d + j] += gy[j];
                }
                gx
            }
            Layer::AdditiveCoupling { mask, net } => {
                let cond: Vec<T> = select(x, mask, false);
                let acts = net.activations(&cond);
                let dout: Vec<T> = select(gy, mask, true);
                let dcond = net.backward(&acts, &dout, grad);
                let mut gx = gy.to_vec();
                for (gi, dc) in frozen_mut(&mut gx, mask).zip(dcond) {
                    *gi += dc;
                }
                gx
            }
            Layer::Permutation { perm } => {
                let mut gx = vec![T::zero(); x.len()];
                for (i, &p) in perm.iter().enumerate() {
                    gx[p] += gy[i];
                }
                gx
            }
            Layer::Monotone {
                log_slope,
                amplitude,
                log_width,
                center,
            } => {
                let d = x.len();
                let kk = |j: usize| amplitude[j].len();
                let total_k: usize = (0..d).map(kk).sum();
                let (g_slope, rest) = grad.split_at_mut(d);
                let (g_amp, rest) = rest.split_at_mut(total_k);
                let (g_width, g_center) = rest.split_at_mut(total_k);
                let two = T::lit(2.0);
                let mut gx = Vec::with_capacity(d);
                let mut off = 0;
                for j in 0..d {
                    let (s, live) = clamp_log_scale(log_slope[j]);
                    let e = s.exp();
                    let bs = bumps(x[j], &amplitude[j], &log_width[j], &center[j]);
                    let mut val = x[j];
                    let mut deriv = T::one();
                    let mut dderiv_dx = T::zero();
                    for b in &bs {
                        val += b.r * b.th / b.w;
                        deriv += b.r * b.sech2;
                        dderiv_dx += b.r * (-two * b.th * b.sech2) * b.w;
                    }
                    let (g, l) = (gy[j], gld);
                    gx.push(g * e * deriv + l * dderiv_dx / deriv);
                    g_slope[j] += live * (g * e * val + l);
                    let xc = x[j];
                    for (k, b) in bs.iter().enumerate() {
                        let c = center[j][k];
                        g_amp[off + k] += g * e * b.dr * b.th / b.w + l * b.dr * b.sech2 / deriv;
                        g_width[off + k] += g * e * b.r * (b.sech2 * (xc - c) - b.th / b.w)
                            + l * b.r * (-two * b.th * b.sech2) * b.u / deriv;
                        g_center[off + k] += -g * e * b.r * b.sech2
                            + l * two * b.r * b.w * b.th * b.sech2 / deriv;
                    }
                    off += kk(j);
                }
                gx
            }
        }
    }
}

/// Solves `x + Σ rₖ tanh(wₖ(x − cₖ))/wₖ = target` by Newton steps safeguarded
/// with bisection. Returns the root and the derivative there.
fn solve_monotone<T: Scalar>(target: T, amp: &[T], log_w: &[T], center: &[T]) -> (T, T) {
    let eval = |x: T| {
        let mut val = x - target;
        let mut deriv = T::one();
        for b in bumps(x, amp, log_w, center) {
            val += b.r * b.th / b.w;
            deriv += b.r * b.sech2;
        }
        (val, deriv)
    };
    let reach: T = bumps(T::zero(), amp, log_w, center)
        .iter()
        .map(|b| b.r.abs() / b.w)
        .sum();
    let mut lo = target - reach;
    let mut hi = target + reach;
    let mut x = target;
    let tol = T::epsilon() * T::lit(4.0) * (T::one() + target.abs());
    for _ in 0..200 {
        let (h, dh) = eval(x);
        if h.abs() <= tol {
            return (x, dh);
        }
        if h > T::zero() {
            hi = x;
        } else {
            lo = x;
        }
        let newton = x - h / dh;
        x = if newton > lo && newton < hi {
            newton
        } else {
            T::lit(0.5) * (lo + hi)
        };
        if hi - lo <= tol {
            break;
        }
    }
    (x, eval(x).1)
}

fn select<T: Scalar>(x: &[T], mask: &[bool], want: bool) -> Vec<T> {
    x.iter()
        .zip(mask)
        .filter(|(_, &m)| m == want)
        .map(|(&v, _)| v)
        .collect()
}

fn active_mut<'a, T>(x: &'a mut [T], mask: &'a [bool]) -> impl Iterator<Item = &'a mut T> {
    x.iter_mut().zip(mask).filter(|(_, &m)| m).map(|(v, _)| v)
}

fn frozen_mut<'a, T>(x: &'a mut [T], mask: &'a [bool]) -> impl Iterator<Item = &'a mut T> {
    x.iter_mut().zip(mask).filter(|(_, &m)| !m).map(|(v, _)| v)
}

/// Architecture of a freshly initialized flow.
///
/// Layer order: `monotone_layers` elementwise monotone layers, then
/// `coupling_layers` additive couplings alternating even/odd masks with a
/// reversal permutation between consecutive mask pairs, then an optional
/// affine-diagonal layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowSpec {
    pub coupling_layers: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub monotone_layers: usize,
    pub monotone_bumps: usize,
    pub affine: bool,
}

impl Default for FlowSpec {
    fn default() -> Self {
        Self {
            coupling_layers: 4,
            hidden_width: 32,
            hidden_layers: 2,
            monotone_layers: 0,
            monotone_bumps: 8,
            affine: true,
        }
    }
}

impl FlowSpec {
    pub fn affine_only() -> Self {
        Self {
            coupling_layers: 0,
            monotone_layers: 0,
            ..Self::default()
        }
    }
}

/// Per-layer parameter gradients, aligned with [`FlowModel::layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct FlowGradients<T> {
    pub layers: Vec<Vec<T>>,
}

impl<T: Scalar> FlowGradients<T> {
    pub fn zeros_like(flow: &FlowModel<T>) -> Self {
        Self {
            layers: flow
                .layers
                .iter()
                .map(|l| vec![T::zero(); l.param_count()])
                .collect(),
        }
    }

    pub fn flat(&self) -> Vec<T> {
        self.layers.iter().flatten().copied().collect()
    }

    pub fn scale(&mut self, s: T) {
        self.layers.iter_mut().flatten().for_each(|g| *g *= s);
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers.iter().flatten().all(|g| *g == T::zero())
    }
}

/// Intermediate values of a forward pass, consumed by the reverse pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    /// Input of every layer, followed by the final output.
    pub values: Vec<Vec<T>>,
    pub logdet: T,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn output(&self) -> &[T] {
        self.values.last().expect("trace holds the input")
    }
}

/// Stack of invertible layers on `R^dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
pub struct FlowModel<T> {
    pub dim: usize,
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> FlowModel<T> {
    pub fn new(dim: usize, layers: Vec<Layer<T>>) -> Result<Self> {
        let f = Self { dim, layers };
        f.validate()?;
        Ok(f)
    }

    /// Single affine-diagonal layer at the identity.
    pub fn identity_affine(dim: usize) -> Self {
        Self {
            dim,
            layers: vec![Layer::AffineDiagonal {
                log_scale: vec![T::zero(); dim],
                shift: vec![T::zero(); dim],
            }],
        }
    }

    /// Builds `spec` so that the flow is exactly the identity map: zero
    /// shifts and log-scales, zero bump amplitudes, zero output layers in
    /// every conditioner. Only the conditioners' hidden weights depend on
    /// `seed`.
    pub fn init_identity(dim: usize, spec: &FlowSpec, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("flow dimension must be positive"));
        }
        let mut rng = rng_from_seed(seed);
        let mut layers = Vec::new();
        let k = spec.monotone_bumps.max(1);
        for _ in 0..spec.monotone_layers {
            let centers: Vec<T> = (0..k)
                .map(|i| {
                    if k == 1 {
                        T::zero()
                    } else {
                        T::lit(-2.5 + 5.0 * i as f64 / (k - 1) as f64)
                    }
                })
                .collect();
            layers.push(Layer::Monotone {
                log_slope: vec![T::zero(); dim],
                amplitude: vec![vec![T::zero(); k]; dim],
                log_width: vec![vec![T::zero(); k]; dim],
                center: vec![centers; dim],
            });
        }
        let hidden = vec![spec.hidden_width; spec.hidden_layers];
        let reversal: Vec<usize> = (0..dim).rev().collect();
        let mut placed = 0;
        let mut reversals = 0;
        for i in 0..spec.coupling_layers {
            let mask: Vec<bool> = (0..dim).map(|j| j % 2 == i % 2).collect();
            let active = mask.iter().filter(|&&m| m).count();
            if active == 0 {
                continue;
            }
            if placed > 0 && placed % 2 == 0 && dim > 1 {
                layers.push(Layer::Permutation {
                    perm: reversal.clone(),
                });
                reversals += 1;
            }
            let net = Mlp::zero_output(dim - active, &hidden, active, &mut rng);
            layers.push(Layer::AdditiveCoupling { mask, net });
            placed += 1;
        }
        // restore the coordinate order so the initial flow is the identity
        if reversals % 2 == 1 {
            layers.push(Layer::Permutation { perm: reversal });
        }
        if spec.affine {
            layers.push(Layer::AffineDiagonal {
                log_scale: vec![T::zero(); dim],
                shift: vec![T::zero(); dim],
            });
        }
        Self::new(dim, layers)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("flow dimension must be positive"));
        }
        self.layers.iter().try_for_each(|l| l.validate(self.dim))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            l.write_params(&mut out);
        }
        out
    }

    pub fn set_params(&mut self, src: &[T]) -> Result<()> {
        check_dim(self.param_count(), src.len())?;
        let mut i = 0;
        for l in &mut self.layers {
            i += l.read_params(&src[i..]);
        }
        Ok(())
    }

    pub fn trace(&self, x: &[T]) -> Result<ForwardTrace<T>> {
        check_dim(self.dim, x.len())?;
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(x.to_vec());
        let mut logdet = T::zero();
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, ld) = layer.forward(&values[i]);
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::FlowNumeric {
                    layer: i,
                    what: "output",
                });
            }
            if !ld.is_finite() {
                return Err(Error::FlowNumeric {
                    layer: i,
                    what: "log-determinant",
                });
            }
            logdet += ld;
            values.push(y);
        }
        Ok(ForwardTrace { values, logdet })
    }

    /// `(g(x), log|det J_g(x)|)`.
    pub fn forward(&self, x: &[T]) -> Result<(Vec<T>, T)> {
        let mut t = self.trace(x)?;
        let y = t.values.pop().expect("nonempty trace");
        Ok((y, t.logdet))
    }

    /// `(g⁻¹(y), log|det J_g(g⁻¹(y))|)`.
    pub fn inverse(&self, y: &[T]) -> Result<(Vec<T>, T)> {
        check_dim(self.dim, y.len())?;
        let mut x = y.to_vec();
        let mut logdet = T::zero();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (xi, ld) = layer.inverse(&x)?;
            if xi.iter().any(|v| !v.is_finite()) {
                return Err(Error::FlowNumeric {
                    layer: i,
                    what: "inverse",
                });
            }
            logdet += ld;
            x = xi;
        }
        Ok((x, logdet))
    }

    /// Reverse pass over a recorded trace. Parameter gradients are added to
    /// `grads`; the gradient with respect to the flow input is returned.
    pub fn accumulate_backward(
        &self,
        trace: &ForwardTrace<T>,
        gy: &[T],
        gld: T,
        grads: &mut FlowGradients<T>,
    ) -> Vec<T> {
        let mut g = gy.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            g = layer.backward(&trace.values[i], &g, gld, &mut grads.layers[i]);
        }
        g
    }

    /// Parameter gradients of `⟨gy, g(x)⟩ + gld · log|det J_g(x)|`.
    pub fn backward(&self, x: &[T], gy: &[T], gld: T) -> Result<FlowGradients<T>> {
        check_dim(self.dim, gy.len())?;
        let trace = self.trace(x)?;
        let mut grads = FlowGradients::zeros_like(self);
        self.accumulate_backward(&trace, gy, gld, &mut grads);
        Ok(grads)
    }
}
