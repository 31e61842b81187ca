//! Folding autodecoder with a shared trunk and per-patch heads.
//!
//! For a source point `q` (row `j`, patch `k = j / (M / K)`) and the latent row
//! `l_i` of instance `i`:
//!
//! ```text
//! h = trunk([q ; l_i])            4 affine layers, SELU after each
//! p = head_k([h ; q])             affine + SELU, then affine to 3 outputs
//! ```
//!
//! The source cloud `Q`, the latent table `L`, and all layer parameters are
//! trainable. Gradients are derived by hand for this fixed topology.
//!
//! Output layer width/activation and the `[q ; l]` trunk encoding are our
//! reading; the upstream description leaves both implicit.

use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::cloud::{PointCloud, Point3};
use crate::error::{Error, Result};
use crate::rng;

pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
pub const TRUNK_LAYERS: usize = 4;
pub const DEFAULT_WIDTH: usize = 256;
pub const LATENT_INIT_STD: f64 = 0.01;

/// Rows per chunk when predicting without a gradient cache.
const PREDICT_CHUNK: usize = 4096;

#[inline]
fn selu(z: f64) -> f64 {
    if z > 0.0 {
        SELU_LAMBDA * z
    } else {
        SELU_LAMBDA * SELU_ALPHA * (libm::exp(z) - 1.0)
    }
}

#[inline]
fn selu_grad(z: f64) -> f64 {
    if z > 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * libm::exp(z)
    }
}

/// `c = beta * c + a · b` with explicit strides; `a` is `m × k`, `b` is `k × n`.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() > (m - 1) * rsc + (n - 1));
    // SAFETY: the asserted bounds keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// `out (rows × outs) = x (rows × ins) · wᵀ + bias`, with `w` row-major `outs × ins`.
fn affine(x: &[f64], rows: usize, ins: usize, w: &[f64], bias: &[f64], outs: usize, out: &mut [f64]) {
    for r in 0..rows {
        out[r * outs..(r + 1) * outs].copy_from_slice(bias);
    }
    gemm(rows, ins, outs, x, ins, 1, w, 1, ins, 1.0, out, outs);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    /// Source points M.
    pub points: usize,
    /// Patch count K; must divide M.
    pub patches: usize,
    /// Latent width l.
    pub latent_dim: usize,
    /// Instances N (latent table rows).
    pub instances: usize,
    /// Hidden width of every trunk layer and the head hidden layer.
    pub width: usize,
    pub seed: u64,
}

impl NetConfig {
    pub fn patch_len(&self) -> usize {
        self.points / self.patches
    }

    pub fn patch_of(&self, row: usize) -> usize {
        row / self.patch_len()
    }

    fn validate(&self) -> Result<()> {
        if self.patches == 0 || self.points == 0 || !self.points.is_multiple_of(self.patches) {
            return Err(Error::PatchesNotDivisible {
                points: self.points,
                patches: self.patches,
            });
        }
        if self.width == 0 || self.instances == 0 {
            return Err(Error::InvalidParameter("width and instances must be positive".into()));
        }
        Ok(())
    }
}

/// Every trainable tensor. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// Layer `i`: `width × fan_in`, row-major; fan-in is `3 + l` for layer 0.
    pub trunk_weights: [Vec<f64>; TRUNK_LAYERS],
    pub trunk_biases: [Vec<f64>; TRUNK_LAYERS],
    /// `K × width × (width + 3)`.
    pub head_hidden_weights: Vec<f64>,
    /// `K × width`.
    pub head_hidden_biases: Vec<f64>,
    /// `K × 3 × width`.
    pub head_out_weights: Vec<f64>,
    /// `K × 3`.
    pub head_out_biases: Vec<f64>,
    /// `N × l`.
    pub latent: Vec<f64>,
    /// `M × 3`.
    pub source: Vec<f64>,
}

pub const TENSOR_NAMES: [&str; 14] = [
    "trunk.0.weight",
    "trunk.0.bias",
    "trunk.1.weight",
    "trunk.1.bias",
    "trunk.2.weight",
    "trunk.2.bias",
    "trunk.3.weight",
    "trunk.3.bias",
    "head.hidden.weight",
    "head.hidden.bias",
    "head.out.weight",
    "head.out.bias",
    "latent",
    "source",
];

impl Params {
    pub fn zeros(cfg: &NetConfig) -> Self {
        let w = cfg.width;
        let fan0 = 3 + cfg.latent_dim;
        Self {
            trunk_weights: [vec![0.0; w * fan0], vec![0.0; w * w], vec![0.0; w * w], vec![0.0; w * w]],
            trunk_biases: [vec![0.0; w], vec![0.0; w], vec![0.0; w], vec![0.0; w]],
            head_hidden_weights: vec![0.0; cfg.patches * w * (w + 3)],
            head_hidden_biases: vec![0.0; cfg.patches * w],
            head_out_weights: vec![0.0; cfg.patches * 3 * w],
            head_out_biases: vec![0.0; cfg.patches * 3],
            latent: vec![0.0; cfg.instances * cfg.latent_dim],
            source: vec![0.0; cfg.points * 3],
        }
    }

    /// Tensors in [`TENSOR_NAMES`] order.
    pub fn tensors(&self) -> [&[f64]; 14] {
        let [w0, w1, w2, w3] = &self.trunk_weights;
        let [b0, b1, b2, b3] = &self.trunk_biases;
        [
            w0,
            b0,
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            &self.head_hidden_weights,
            &self.head_hidden_biases,
            &self.head_out_weights,
            &self.head_out_biases,
            &self.latent,
            &self.source,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 14] {
        let [w0, w1, w2, w3] = &mut self.trunk_weights;
        let [b0, b1, b2, b3] = &mut self.trunk_biases;
        [
            w0,
            b0,
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            &mut self.head_hidden_weights,
            &mut self.head_hidden_biases,
            &mut self.head_out_weights,
            &mut self.head_out_biases,
            &mut self.latent,
            &mut self.source,
        ]
    }

    pub fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldingNet {
    config: NetConfig,
    params: Params,
}

/// Activations kept by [`FoldingNet::forward_cached`] for the backward pass.
/// Rows are stored grouped by patch; `order[r]` is the caller position of
/// grouped row `r`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    instance: usize,
    ids: Vec<usize>,
    order: Vec<usize>,
    /// `(patch, start, end)` ranges in grouped order.
    groups: Vec<(usize, usize, usize)>,
    /// `trunk_in[0]` is `[q ; l]`, `trunk_in[i]` the input of layer `i`.
    trunk_in: [Vec<f64>; TRUNK_LAYERS],
    trunk_pre: [Vec<f64>; TRUNK_LAYERS],
    head_in: Vec<f64>,
    head_pre: Vec<f64>,
    head_act: Vec<f64>,
    output: Vec<Point3>,
}

impl ForwardCache {
    /// Predicted points in caller order.
    pub fn output(&self) -> &[Point3] {
        &self.output
    }

    pub fn instance(&self) -> usize {
        self.instance
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// Which SELU inputs are positive, over every hidden unit of every row.
    /// SELU's derivative jumps at zero, so a finite-difference step that
    /// changes this pattern straddles a kink.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.trunk_pre.iter().flatten().chain(&self.head_pre).map(|&z| z > 0.0).collect()
    }
}

impl FoldingNet {
    /// Fresh network: source = copy of `init_cloud`; weights `N(0, 1/fan_in)`
    /// (LeCun normal, the SELU self-normalizing init); biases zero; latent rows
    /// `N(0, 0.01²)`.
    pub fn init(config: NetConfig, init_cloud: &PointCloud) -> Result<Self> {
        config.validate()?;
        if init_cloud.len() != config.points {
            return Err(Error::SizeMismatch {
                left: config.points,
                right: init_cloud.len(),
            });
        }
        let mut p = Params::zeros(&config);
        let mut r = rng::stream_rng(config.seed, rng::stream::INIT);
        let mut fill = |t: &mut [f64], std: f64| {
            for x in t.iter_mut() {
                let g: f64 = StandardNormal.sample(&mut r);
                *x = g * std;
            }
        };
        let w = config.width as f64;
        fill(&mut p.trunk_weights[0], libm::sqrt(1.0 / (3 + config.latent_dim) as f64));
        for t in &mut p.trunk_weights[1..] {
            fill(t, libm::sqrt(1.0 / w));
        }
        fill(&mut p.head_hidden_weights, libm::sqrt(1.0 / (w + 3.0)));
        fill(&mut p.head_out_weights, libm::sqrt(1.0 / w));
        fill(&mut p.latent, LATENT_INIT_STD);
        for (dst, src) in p.source.chunks_exact_mut(3).zip(init_cloud.points()) {
            dst.copy_from_slice(src);
        }
        Ok(Self { config, params: p })
    }

    /// Assemble a network from stored tensors (checkpoint loading).
    pub fn from_params(config: NetConfig, params: Params) -> Result<Self> {
        config.validate()?;
        let expect = Params::zeros(&config);
        for ((name, a), b) in TENSOR_NAMES.iter().zip(params.tensors()).zip(expect.tensors()) {
            if a.len() != b.len() {
                return Err(Error::InvalidParameter(alloc::format!(
                    "tensor {name}: expected {} values, got {}",
                    b.len(),
                    a.len()
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn source_point(&self, row: usize) -> Point3 {
        let s = &self.params.source[row * 3..row * 3 + 3];
        [s[0], s[1], s[2]]
    }

    pub fn source_cloud(&self) -> Result<PointCloud> {
        PointCloud::new((0..self.config.points).map(|r| self.source_point(r)).collect())
    }

    pub fn latent_row(&self, instance: usize) -> &[f64] {
        let l = self.config.latent_dim;
        &self.params.latent[instance * l..(instance + 1) * l]
    }

    /// Overwrite one latent row (e.g. with externally computed embeddings).
    pub fn set_latent_row(&mut self, instance: usize, values: &[f64]) -> Result<()> {
        let l = self.config.latent_dim;
        if instance >= self.config.instances {
            return Err(Error::IndexOutOfRange {
                index: instance,
                len: self.config.instances,
            });
        }
        if values.len() != l {
            return Err(Error::SizeMismatch {
                left: l,
                right: values.len(),
            });
        }
        self.params.latent[instance * l..(instance + 1) * l].copy_from_slice(values);
        Ok(())
    }

    fn check_ids(&self, instance: usize, ids: &[usize]) -> Result<()> {
        if instance >= self.config.instances {
            return Err(Error::IndexOutOfRange {
                index: instance,
                len: self.config.instances,
            });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.config.points) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: self.config.points,
            });
        }
        Ok(())
    }

    fn check_equal_patches(&self, ids: &[usize]) -> Result<()> {
        let mut counts = vec![0usize; self.config.patches];
        for &i in ids {
            counts[self.config.patch_of(i)] += 1;
        }
        if counts.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::UnequalPatchCounts);
        }
        Ok(())
    }

    /// Group caller positions by patch (stable), returning the order and the
    /// contiguous ranges.
    fn group(&self, ids: &[usize]) -> (Vec<usize>, Vec<(usize, usize, usize)>) {
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.sort_by_key(|&r| self.config.patch_of(ids[r]));
        let mut groups = Vec::new();
        let mut start = 0;
        while start < order.len() {
            let k = self.config.patch_of(ids[order[start]]);
            let mut end = start + 1;
            while end < order.len() && self.config.patch_of(ids[order[end]]) == k {
                end += 1;
            }
            groups.push((k, start, end));
            start = end;
        }
        (order, groups)
    }

    fn trunk_input(&self, instance: usize, ids: &[usize], order: &[usize]) -> Vec<f64> {
        let l = self.config.latent_dim;
        let fan = 3 + l;
        let latent = self.latent_row(instance);
        let mut x = vec![0.0; order.len() * fan];
        for (r, &pos) in order.iter().enumerate() {
            let row = &mut x[r * fan..(r + 1) * fan];
            row[..3].copy_from_slice(&self.params.source[ids[pos] * 3..ids[pos] * 3 + 3]);
            row[3..].copy_from_slice(latent);
        }
        x
    }

    fn head_input(&self, features: &[f64], ids: &[usize], order: &[usize]) -> Vec<f64> {
        let w = self.config.width;
        let mut h = vec![0.0; order.len() * (w + 3)];
        for (r, &pos) in order.iter().enumerate() {
            let row = &mut h[r * (w + 3)..(r + 1) * (w + 3)];
            row[..w].copy_from_slice(&features[r * w..(r + 1) * w]);
            row[w..].copy_from_slice(&self.params.source[ids[pos] * 3..ids[pos] * 3 + 3]);
        }
        h
    }

    fn head_slices(&self, k: usize) -> (&[f64], &[f64], &[f64], &[f64]) {
        let w = self.config.width;
        let p = &self.params;
        (
            &p.head_hidden_weights[k * w * (w + 3)..(k + 1) * w * (w + 3)],
            &p.head_hidden_biases[k * w..(k + 1) * w],
            &p.head_out_weights[k * 3 * w..(k + 1) * 3 * w],
            &p.head_out_biases[k * 3..(k + 1) * 3],
        )
    }

    /// Forward pass requiring equal per-patch counts (the training sampler's
    /// contract), keeping activations for [`FoldingNet::backward`].
    pub fn forward(&self, instance: usize, ids: &[usize]) -> Result<ForwardCache> {
        self.check_ids(instance, ids)?;
        self.check_equal_patches(ids)?;
        self.forward_cached(instance, ids)
    }

    /// Forward pass for any multiset of rows, keeping activations.
    pub fn forward_cached(&self, instance: usize, ids: &[usize]) -> Result<ForwardCache> {
        self.check_ids(instance, ids)?;
        let w = self.config.width;
        let s = ids.len();
        let (order, groups) = self.group(ids);
        let x0 = self.trunk_input(instance, ids, &order);

        let mut trunk_in: [Vec<f64>; TRUNK_LAYERS] = Default::default();
        let mut trunk_pre: [Vec<f64>; TRUNK_LAYERS] = Default::default();
        let mut input = x0;
        let mut fan = 3 + self.config.latent_dim;
        for layer in 0..TRUNK_LAYERS {
            let mut z = vec![0.0; s * w];
            affine(
                &input,
                s,
                fan,
                &self.params.trunk_weights[layer],
                &self.params.trunk_biases[layer],
                w,
                &mut z,
            );
            let a: Vec<f64> = z.iter().map(|&v| selu(v)).collect();
            trunk_in[layer] = core::mem::replace(&mut input, a);
            trunk_pre[layer] = z;
            fan = w;
        }
        let head_in = self.head_input(&input, ids, &order);

        let mut head_pre = vec![0.0; s * w];
        let mut head_act = vec![0.0; s * w];
        let mut out = vec![0.0; s * 3];
        for &(k, a, b) in &groups {
            let (w5, b5, w6, b6) = self.head_slices(k);
            let n = b - a;
            affine(&head_in[a * (w + 3)..b * (w + 3)], n, w + 3, w5, b5, w, &mut head_pre[a * w..b * w]);
            for (dst, &z) in head_act[a * w..b * w].iter_mut().zip(&head_pre[a * w..b * w]) {
                *dst = selu(z);
            }
            affine(&head_act[a * w..b * w], n, w, w6, b6, 3, &mut out[a * 3..b * 3]);
        }
        let mut output = vec![[0.0; 3]; s];
        for (r, &pos) in order.iter().enumerate() {
            output[pos] = [out[r * 3], out[r * 3 + 1], out[r * 3 + 2]];
        }
        Ok(ForwardCache {
            instance,
            ids: ids.to_vec(),
            order,
            groups,
            trunk_in,
            trunk_pre,
            head_in,
            head_pre,
            head_act,
            output,
        })
    }

    /// Predicted points for any rows, without keeping activations.
    pub fn predict(&self, instance: usize, ids: &[usize]) -> Result<Vec<Point3>> {
        self.check_ids(instance, ids)?;
        let mut out = Vec::with_capacity(ids.len());
        for chunk in ids.chunks(PREDICT_CHUNK) {
            out.extend_from_slice(self.forward_cached(instance, chunk)?.output());
        }
        Ok(out)
    }

    /// Full reconstruction of one instance (all M source rows, in row order).
    pub fn reconstruct(&self, instance: usize) -> Result<PointCloud> {
        let ids: Vec<usize> = (0..self.config.points).collect();
        PointCloud::new(self.predict(instance, &ids)?)
    }

    /// Gradients of `Σ_r upstream[r] · output[r]` with respect to every
    /// tensor. Only the cached instance's latent row and the touched source
    /// rows receive non-zero entries.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[Point3]) -> Result<Params> {
        let mut g = Params::zeros(&self.config);
        self.backward_into(cache, upstream, &mut g)?;
        Ok(g)
    }

    pub fn backward_into(&self, cache: &ForwardCache, upstream: &[Point3], g: &mut Params) -> Result<()> {
        let s = cache.ids.len();
        if upstream.len() != s {
            return Err(Error::SizeMismatch {
                left: s,
                right: upstream.len(),
            });
        }
        let w = self.config.width;
        let mut dy = vec![0.0; s * 3];
        for (r, &pos) in cache.order.iter().enumerate() {
            dy[r * 3..r * 3 + 3].copy_from_slice(&upstream[pos]);
        }

        let mut d_head_in = vec![0.0; s * (w + 3)];
        let mut dz5 = vec![0.0; s * w];
        for &(k, a, b) in &cache.groups {
            let n = b - a;
            let (w5, _, w6, _) = self.head_slices(k);
            let dyk = &dy[a * 3..b * 3];
            // output layer
            gemm(
                3,
                n,
                w,
                dyk,
                1,
                3,
                &cache.head_act[a * w..b * w],
                w,
                1,
                1.0,
                &mut g.head_out_weights[k * 3 * w..(k + 1) * 3 * w],
                w,
            );
            for r in 0..n {
                for c in 0..3 {
                    g.head_out_biases[k * 3 + c] += dyk[r * 3 + c];
                }
            }
            let dz = &mut dz5[a * w..b * w];
            gemm(n, 3, w, dyk, 3, 1, w6, w, 1, 0.0, dz, w);
            for (d, &z) in dz.iter_mut().zip(&cache.head_pre[a * w..b * w]) {
                *d *= selu_grad(z);
            }
            // hidden layer
            gemm(
                w,
                n,
                w + 3,
                dz,
                1,
                w,
                &cache.head_in[a * (w + 3)..b * (w + 3)],
                w + 3,
                1,
                1.0,
                &mut g.head_hidden_weights[k * w * (w + 3)..(k + 1) * w * (w + 3)],
                w + 3,
            );
            for r in 0..n {
                for (gb, &d) in g.head_hidden_biases[k * w..(k + 1) * w].iter_mut().zip(&dz[r * w..(r + 1) * w]) {
                    *gb += d;
                }
            }
            gemm(n, w, w + 3, dz, w, 1, w5, w + 3, 1, 0.0, &mut d_head_in[a * (w + 3)..b * (w + 3)], w + 3);
        }

        // trunk
        let mut da: Vec<f64> = vec![0.0; s * w];
        for r in 0..s {
            da[r * w..(r + 1) * w].copy_from_slice(&d_head_in[r * (w + 3)..r * (w + 3) + w]);
        }
        let mut dx = Vec::new();
        for layer in (0..TRUNK_LAYERS).rev() {
            let fan = if layer == 0 { 3 + self.config.latent_dim } else { w };
            let mut dz = da;
            for (d, &z) in dz.iter_mut().zip(&cache.trunk_pre[layer]) {
                *d *= selu_grad(z);
            }
            gemm(w, s, fan, &dz, 1, w, &cache.trunk_in[layer], fan, 1, 1.0, &mut g.trunk_weights[layer], fan);
            for r in 0..s {
                for (gb, &d) in g.trunk_biases[layer].iter_mut().zip(&dz[r * w..(r + 1) * w]) {
                    *gb += d;
                }
            }
            let mut next = vec![0.0; s * fan];
            gemm(s, w, fan, &dz, w, 1, &self.params.trunk_weights[layer], fan, 1, 0.0, &mut next, fan);
            if layer == 0 {
                dx = next;
                da = Vec::new();
            } else {
                da = next;
            }
        }

        let l = self.config.latent_dim;
        let fan0 = 3 + l;
        let lat = &mut g.latent[cache.instance * l..(cache.instance + 1) * l];
        for (r, &pos) in cache.order.iter().enumerate() {
            let row = cache.ids[pos];
            let d = &dx[r * fan0..(r + 1) * fan0];
            for (gl, &v) in lat.iter_mut().zip(&d[3..]) {
                *gl += v;
            }
            let dh = &d_head_in[r * (w + 3) + w..(r + 1) * (w + 3)];
            for c in 0..3 {
                g.source[row * 3 + c] += d[c] + dh[c];
            }
        }
        Ok(())
    }
}
